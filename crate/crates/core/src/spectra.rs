//! Full diagonalization, grand-canonical averages, the Heisenberg frequency
//! and finite-size scaling fits.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::hilbert::{self, ChainSpec, DenseOperator, RowOperator};
use crate::linalg::{self, MemoryCap};

/// Eigenpairs of a real symmetric Hamiltonian, energies ascending and
/// eigenvectors stored as columns.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub chain: Option<ChainSpec>,
    pub energies: Vec<f64>,
    pub vectors: Array2<f64>,
}

impl EigenSystem {
    pub fn dimension(&self) -> usize {
        self.energies.len()
    }

    /// `(max |H v - E v|, max |V^T V - I|)`.
    pub fn residuals(&self, h: &RowOperator) -> (f64, f64) {
        let hv = h.apply(self.vectors.view());
        let mut recon = 0.0f64;
        for (k, &e) in self.energies.iter().enumerate() {
            for r in 0..hv.nrows() {
                recon = recon.max((hv[[r, k]] - e * self.vectors[[r, k]]).abs());
            }
        }
        (recon, linalg::orthonormality_residual(self.vectors.view()))
    }

    pub fn spectral_width(&self) -> f64 {
        match (self.energies.first(), self.energies.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }
}

/// Diagonalizes a dense real symmetric operator.
pub fn diagonalize(h: &DenseOperator) -> Result<EigenSystem> {
    diagonalize_capped(h, MemoryCap::default())
}

pub fn diagonalize_capped(h: &DenseOperator, cap: MemoryCap) -> Result<EigenSystem> {
    // Input copy plus the divide-and-conquer workspace (~2 D^2).
    cap.check(h.dimension(), 3, 8)?;
    let (energies, vectors) = linalg::symmetric_eigen(h.matrix.clone())?;
    Ok(EigenSystem { chain: None, energies, vectors })
}

/// Builds and diagonalizes the chain's Hamiltonian, checking residuals.
pub fn diagonalize_chain(chain: &ChainSpec, cap: MemoryCap) -> Result<EigenSystem> {
    chain.validate()?;
    cap.check(chain.dimension(), 4, 8)?;
    let rows = hilbert::hamiltonian_rows(chain)?;
    let dense = rows.to_dense(cap)?;
    let (energies, vectors) = linalg::symmetric_eigen(dense.matrix)?;
    let eig = EigenSystem { chain: Some(*chain), energies, vectors };
    let (recon, ortho) = eig.residuals(&rows);
    let width = eig.spectral_width().max(1.0);
    if recon > 1e-9 * width || ortho > 1e-9 {
        log::warn!("eigen residuals above tolerance: reconstruction {recon:e}, orthonormality {ortho:e}");
    }
    Ok(eig)
}

/// `O_mm = <v_m| O |v_m>` for every eigenvector.
pub fn diagonal_elements(op: &RowOperator, eig: &EigenSystem) -> Result<Vec<f64>> {
    if op.dimension() != eig.dimension() {
        return Err(Error::DimensionMismatch { expected: eig.dimension(), found: op.dimension() });
    }
    let ov = op.apply(eig.vectors.view());
    Ok((0..eig.dimension())
        .map(|m| eig.vectors.column(m).dot(&ov.column(m)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalPoint {
    pub beta: f64,
    /// `ln Z`; `Z` itself may overflow at large `|beta|`.
    pub log_partition: f64,
    pub energy: f64,
    pub observable: f64,
}

impl ThermalPoint {
    pub fn partition(&self) -> f64 {
        self.log_partition.exp()
    }
}

/// Grand-canonical `E(beta)` and `O(beta)` from eigen-energies and the
/// diagonal of `O` in the same eigenbasis.
pub fn grand_canonical(energies: &[f64], diagonal: &[f64], beta: f64) -> Result<ThermalPoint> {
    if energies.len() != diagonal.len() {
        return Err(Error::DimensionMismatch { expected: energies.len(), found: diagonal.len() });
    }
    if energies.is_empty() {
        return Err(Error::MissingData("empty spectrum".into()));
    }
    // Shift by the largest exponent so every weight is <= 1.
    let shift = energies
        .iter()
        .map(|&e| -beta * e)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut e_sum = 0.0;
    let mut o_sum = 0.0;
    for (&e, &o) in energies.iter().zip(diagonal) {
        let w = (-beta * e - shift).exp();
        z += w;
        e_sum += w * e;
        o_sum += w * o;
    }
    Ok(ThermalPoint {
        beta,
        log_partition: shift + z.ln(),
        energy: e_sum / z,
        observable: o_sum / z,
    })
}

/// `E(beta = 0) = Tr(H) / D` from the spectrum.
pub fn infinite_temperature_energy(energies: &[f64]) -> f64 {
    energies.iter().sum::<f64>() / energies.len() as f64
}

/// `Tr(H) / D` straight from the operator.
pub fn infinite_temperature_energy_of(h: &DenseOperator) -> f64 {
    h.trace() / h.dimension() as f64
}

/// Mean level spacing over the central half of the spectrum, by index:
/// `(E[3D/4] - E[D/4]) / (3D/4 - D/4)`.
pub fn heisenberg_frequency(energies: &[f64]) -> Result<f64> {
    let d = energies.len();
    if d < 4 {
        return Err(Error::InvalidParameter(format!("need at least 4 levels, got {d}")));
    }
    let mut sorted = energies.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (d / 4, 3 * d / 4);
    Ok((sorted[hi] - sorted[lo]) / (hi - lo) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScalingModel {
    /// `a e^(-b L) + c`
    Exponential,
    /// `a e^(-b L)`
    PureExponential,
    /// `a L^(-b)`
    PowerLaw,
}

impl ScalingModel {
    fn parameters(self) -> usize {
        match self {
            ScalingModel::Exponential => 3,
            _ => 2,
        }
    }

    fn min_points(self) -> usize {
        match self {
            ScalingModel::Exponential => 4,
            _ => 3,
        }
    }

    fn eval(self, p: &[f64], l: f64) -> f64 {
        match self {
            ScalingModel::Exponential => p[0] * (-p[1] * l).exp() + p[2],
            ScalingModel::PureExponential => p[0] * (-p[1] * l).exp(),
            ScalingModel::PowerLaw => p[0] * l.powf(-p[1]),
        }
    }

    fn gradient(self, p: &[f64], l: f64) -> [f64; 3] {
        match self {
            ScalingModel::Exponential | ScalingModel::PureExponential => {
                let e = (-p[1] * l).exp();
                [e, -p[0] * l * e, 1.0]
            }
            ScalingModel::PowerLaw => {
                let e = l.powf(-p[1]);
                [e, -p[0] * l.ln() * e, 0.0]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingFit {
    pub model: ScalingModel,
    pub a: f64,
    pub b: f64,
    /// Asymptote; zero for models without one.
    pub c: f64,
    /// Euclidean norm of the residual vector.
    pub residual_norm: f64,
    pub iterations: usize,
}

impl ScalingFit {
    pub fn predict(&self, l: f64) -> f64 {
        self.model.eval(&[self.a, self.b, self.c], l)
    }
}

/// Least-squares fit of `series` (`(L, value)` pairs) to `model`.
///
/// Levenberg-Marquardt from several log-linear starting points; the best
/// final residual wins.
pub fn fit_scaling(series: &[(f64, f64)], model: ScalingModel) -> Result<ScalingFit> {
    if series.len() < model.min_points() {
        return Err(Error::Fit(format!(
            "{model:?} needs at least {} points, got {}",
            model.min_points(),
            series.len()
        )));
    }
    if series.iter().any(|(l, y)| !l.is_finite() || !y.is_finite()) {
        return Err(Error::Fit("non-finite data".into()));
    }
    let (ymin, ymax) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, y)| (lo.min(y), hi.max(y)));
    let scale = ymin.abs().max(ymax.abs());
    if ymax - ymin <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Fit("series is constant".into()));
    }

    let mut best: Option<ScalingFit> = None;
    for start in initial_guesses(series, model) {
        let fit = levenberg_marquardt(series, model, start);
        if fit.residual_norm.is_finite() && best.is_none_or(|b| fit.residual_norm < b.residual_norm) {
            best = Some(fit);
        }
    }
    best.ok_or_else(|| Error::Fit(format!("no admissible starting point for {model:?}")))
}

/// Slope and intercept of the ordinary least-squares line through `(x, y)`.
fn line_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Log-linear start for `a e^(-bL)` (or `a L^-b` when `log_x`) on `y - c`.
fn log_linear_start(series: &[(f64, f64)], c: f64, log_x: bool) -> Option<(f64, f64)> {
    let shifted: Vec<f64> = series.iter().map(|&(_, y)| y - c).collect();
    let sign = shifted[0].signum();
    if sign == 0.0 || shifted.iter().any(|v| v.signum() != sign) {
        return None;
    }
    let xs: Vec<f64> = series.iter().map(|&(l, _)| if log_x { l.ln() } else { l }).collect();
    let ys: Vec<f64> = shifted.iter().map(|v| v.abs().ln()).collect();
    let (slope, intercept) = line_fit(&xs, &ys)?;
    Some((sign * intercept.exp(), -slope))
}

fn initial_guesses(series: &[(f64, f64)], model: ScalingModel) -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    match model {
        ScalingModel::PowerLaw | ScalingModel::PureExponential => {
            let log_x = model == ScalingModel::PowerLaw;
            if let Some((a, b)) = log_linear_start(series, 0.0, log_x) {
                out.push([a, b, 0.0]);
            }
            out.push([series[0].1, 1.0, 0.0]);
        }
        ScalingModel::Exponential => {
            let mut sorted = series.to_vec();
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let first = sorted[0].1;
            let last = sorted[sorted.len() - 1].1;
            let span = (last - first).abs().max(1e-300);
            let dir = (last - first).signum();
            // Candidate asymptotes beyond the last point in the direction of
            // travel, on a geometric grid of distances.
            for k in -8..=3 {
                let c = last + dir * span * 10f64.powi(k);
                if let Some((a, b)) = log_linear_start(series, c, false) {
                    out.push([a, b, c]);
                }
            }
            out.push([first - last, 0.5, last]);
        }
    }
    out
}

fn levenberg_marquardt(series: &[(f64, f64)], model: ScalingModel, start: [f64; 3]) -> ScalingFit {
    let np = model.parameters();
    let mut p = start;
    let cost = |p: &[f64; 3]| -> f64 {
        series.iter().map(|&(l, y)| (model.eval(p, l) - y).powi(2)).sum()
    };
    let mut current = cost(&p);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    for it in 0..2000 {
        iterations = it + 1;
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for &(l, y) in series {
            let r = model.eval(&p, l) - y;
            let g = model.gradient(&p, l);
            for i in 0..np {
                jtr[i] += g[i] * r;
                for j in 0..np {
                    jtj[i][j] += g[i] * g[j];
                }
            }
        }
        let mut improved = false;
        while lambda < 1e20 {
            let mut a = jtj;
            for (i, row) in a.iter_mut().enumerate().take(np) {
                row[i] += lambda * jtj[i][i].max(1e-300);
            }
            let rhs: Vec<f64> = jtr[..np].iter().map(|v| -v).collect();
            let Some(step) = solve_small(&a, &rhs, np) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = p;
            for i in 0..np {
                trial[i] += step[i];
            }
            let c = cost(&trial);
            if c.is_finite() && c <= current {
                let rel_step = (0..np)
                    .map(|i| step[i].abs() / trial[i].abs().max(1e-300))
                    .fold(0.0f64, f64::max);
                p = trial;
                let done = rel_step < 1e-15 || current - c <= 1e-30 * current.max(1e-300) && rel_step < 1e-12;
                current = c;
                lambda = (lambda / 10.0).max(1e-15);
                improved = true;
                if done || current == 0.0 {
                    return finish(model, p, current, iterations);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    finish(model, p, current, iterations)
}

fn finish(model: ScalingModel, p: [f64; 3], cost: f64, iterations: usize) -> ScalingFit {
    ScalingFit {
        model,
        a: p[0],
        b: p[1],
        c: if model == ScalingModel::Exponential { p[2] } else { 0.0 },
        residual_norm: cost.sqrt(),
        iterations,
    }
}

/// Gaussian elimination with partial pivoting on an `n x n` system, `n <= 3`.
fn solve_small(a: &[[f64; 3]; 3], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut m = [[0.0; 4]; 3];
    for i in 0..n {
        m[i][..n].copy_from_slice(&a[i][..n]);
        m[i][n] = b[i];
    }
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        for row in (col + 1)..n {
            let f = m[row][col] / m[col][col];
            for k in col..=n {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = ((i + 1)..n).map(|k| m[i][k] * x[k]).sum();
        x[i] = (m[i][n] - s) / m[i][i];
    }
    Some(x)
}

/// `|O_L - O_TL| / |O_TL|` for each point of a series.
pub fn relative_differences(series: &[(f64, f64)], limit: f64) -> Vec<(f64, f64)> {
    series
        .iter()
        .map(|&(l, o)| (l, (o - limit).abs() / limit.abs()))
        .collect()
}

/// Outcome of the finite-size protocol: extrapolate the periodic
/// translation-averaged series, then fit relative differences.
#[derive(Debug, Clone)]
pub struct FiniteSizeAnalysis {
    /// Exponential-with-asymptote fit over the largest periodic chains.
    pub periodic_fit: ScalingFit,
    pub limit: f64,
    pub periodic_differences: Vec<(f64, f64)>,
    pub open_local_differences: Vec<(f64, f64)>,
    pub open_average_differences: Vec<(f64, f64)>,
    /// `a e^(-bL)` fit of the periodic relative differences.
    pub periodic_difference_fit: ScalingFit,
    pub open_local_fit: ScalingFit,
    pub open_average_power_fit: ScalingFit,
    /// The competing exponential description of the open averaged series,
    /// reported for comparison only.
    pub open_average_exponential_fit: ScalingFit,
}

/// Runs the protocol. `periodic_window` is how many of the largest
/// periodic chains enter the extrapolation (four by default upstream).
pub fn finite_size_analysis(
    periodic: &[(f64, f64)],
    open_local: &[(f64, f64)],
    open_average: &[(f64, f64)],
    periodic_window: usize,
) -> Result<FiniteSizeAnalysis> {
    let mut sorted = periodic.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let window = &sorted[sorted.len().saturating_sub(periodic_window)..];
    let periodic_fit = fit_scaling(window, ScalingModel::Exponential)?;
    let limit = periodic_fit.c;
    if limit == 0.0 {
        return Err(Error::Fit("extrapolated limit is zero; relative differences undefined".into()));
    }
    let periodic_differences = relative_differences(periodic, limit);
    let open_local_differences = relative_differences(open_local, limit);
    let open_average_differences = relative_differences(open_average, limit);
    Ok(FiniteSizeAnalysis {
        periodic_fit,
        limit,
        periodic_difference_fit: fit_scaling(&periodic_differences, ScalingModel::PureExponential)?,
        open_local_fit: fit_scaling(&open_local_differences, ScalingModel::PureExponential)?,
        open_average_power_fit: fit_scaling(&open_average_differences, ScalingModel::PowerLaw)?,
        open_average_exponential_fit: fit_scaling(&open_average_differences, ScalingModel::PureExponential)?,
        periodic_differences,
        open_local_differences,
        open_average_differences,
    })
}
