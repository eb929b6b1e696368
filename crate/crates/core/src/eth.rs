//! Eigenbasis matrix elements and eigenstate-thermalization diagnostics.
//!
//! Spectral functions at `E_inf` are
//! `|f(w)|^2 = (p / D) sum_{m != n} |O_mn|^2 G_sigma(w - w_mn)` with
//! `w_mn = E_m - E_n`, prefactor `p = 1` for local observables and `p = N`
//! for translation averages over `N` positions. Both orderings of every
//! pair are summed, so the result is even in `w`; grids are nonnegative.

use std::f64::consts::PI;
use std::ops::Range;

use ndarray::{s, Array2, ArrayView2};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hilbert::{self, averaging_count, ChainSpec, DenseOperator, ObservableSpec, RowOperator};
use crate::linalg::MemoryCap;
use crate::spectra::{self, EigenSystem};
use crate::symmetry::{self, BlockEigenSystem};

/// Regularization width as a multiple of the Heisenberg frequency.
pub const DEFAULT_SIGMA_FACTOR: f64 = 0.1;
/// Gaussian tails beyond this many widths are dropped.
pub const KERNEL_REACH: f64 = 10.0;

/// Rows of the eigenbasis matrix handled per work item.
const ROW_CHUNK: usize = 64;

/// `points` log-spaced frequencies over `[min, max]`, inclusive.
pub fn log_grid(min: f64, max: f64, points: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && max > min && points >= 2) {
        return Err(Error::InvalidParameter(format!(
            "log grid needs 0 < min < max and >= 2 points (got {min}, {max}, {points})"
        )));
    }
    let (a, b) = (min.log10(), max.log10());
    Ok((0..points)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (points - 1) as f64))
        .collect())
}

/// Default grid: 240 points over `[1e-3, 10^1.7]`.
pub fn default_grid() -> Vec<f64> {
    log_grid(1e-3, 10f64.powf(1.7), 240).expect("static grid")
}

/// `0.1 * omega_H` for the given spectrum.
pub fn default_sigma(energies: &[f64]) -> Result<f64> {
    Ok(DEFAULT_SIGMA_FACTOR * spectra::heisenberg_frequency(energies)?)
}

fn check_grid(grid: &[f64], sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    if grid.is_empty() || grid[0] < 0.0 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("frequency grid must be nonnegative and increasing".into()));
    }
    Ok(())
}

/// Truncated normalized Gaussian deposited on a sorted grid.
#[derive(Debug, Clone, Copy)]
struct Kernel {
    inv_two_var: f64,
    norm: f64,
    reach: f64,
}

impl Kernel {
    fn new(sigma: f64) -> Self {
        Self {
            inv_two_var: 1.0 / (2.0 * sigma * sigma),
            norm: 1.0 / (2.0 * PI * sigma * sigma).sqrt(),
            reach: KERNEL_REACH * sigma,
        }
    }

    #[inline]
    fn deposit(&self, grid: &[f64], out: &mut [f64], omega: f64, weight: f64) {
        let lo = omega - self.reach;
        let hi = omega + self.reach;
        if hi < grid[0] || lo > grid[grid.len() - 1] {
            return;
        }
        let start = grid.partition_point(|&x| x < lo);
        for (x, o) in grid[start..].iter().zip(&mut out[start..]) {
            if *x > hi {
                break;
            }
            let d = x - omega;
            *o += weight * self.norm * (-d * d * self.inv_two_var).exp();
        }
    }
}

/// Eigenbasis matrix `O_mn` of a real observable in a real eigenbasis.
#[derive(Debug, Clone)]
pub struct MatrixElementSet {
    pub energies: Vec<f64>,
    pub elements: Array2<f64>,
}

/// Rows `range` of `V^T O V` as `(O V[:, range])^T V`.
pub fn eigenbasis_rows(op: &RowOperator, vectors: ArrayView2<f64>, range: Range<usize>) -> Array2<f64> {
    let ov = op.apply(vectors.slice(s![.., range]));
    ov.t().dot(&vectors)
}

/// `O_mn = <psi_m| O |psi_n>` for every pair.
pub fn matrix_elements(op: &DenseOperator, eig: &EigenSystem) -> Result<MatrixElementSet> {
    matrix_elements_from_rows(&op.rows(), eig, MemoryCap::default())
}

pub fn matrix_elements_from_rows(op: &RowOperator, eig: &EigenSystem, cap: MemoryCap) -> Result<MatrixElementSet> {
    let d = eig.dimension();
    if op.dimension() != d {
        return Err(Error::DimensionMismatch { expected: d, found: op.dimension() });
    }
    cap.check(d, 2, 8)?;
    let elements = eigenbasis_rows(op, eig.vectors.view(), 0..d);
    let set = MatrixElementSet { energies: eig.energies.clone(), elements };
    log::debug!(
        "matrix elements: D = {d}, Hilbert-Schmidt (1/D) sum |O_mn|^2 = {:.15}",
        set.hilbert_schmidt()
    );
    Ok(set)
}

impl MatrixElementSet {
    pub fn dimension(&self) -> usize {
        self.energies.len()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.elements.diag().to_vec()
    }

    pub fn hermiticity_residual(&self) -> f64 {
        crate::linalg::symmetry_residual(self.elements.view())
    }

    /// `(1/D) sum_{m,n} |O_mn|^2`, equal to `Tr(O^2)/D`.
    pub fn hilbert_schmidt(&self) -> f64 {
        self.elements.iter().map(|v| v * v).sum::<f64>() / self.dimension() as f64
    }

    /// `(1/D) sum_{m != n} |O_mn|^2`.
    pub fn offdiagonal_weight(&self) -> f64 {
        let diag: f64 = self.elements.diag().iter().map(|v| v * v).sum();
        self.hilbert_schmidt() - diag / self.dimension() as f64
    }
}

/// Diagonal elements against energy density, and the eigenstate-to-eigenstate
/// fluctuation `mean |O_{m+1,m+1} - O_mm|` over the central half.
#[derive(Debug, Clone)]
pub struct DiagonalScatter {
    pub points: Vec<(f64, f64)>,
    pub fluctuation: f64,
}

pub fn diagonal_scatter(energies: &[f64], diagonal: &[f64], sites: usize) -> Result<DiagonalScatter> {
    if energies.len() != diagonal.len() {
        return Err(Error::DimensionMismatch { expected: energies.len(), found: diagonal.len() });
    }
    let d = energies.len();
    if d < 4 {
        return Err(Error::InvalidParameter("need at least 4 states".into()));
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| energies[a].total_cmp(&energies[b]));
    let points: Vec<(f64, f64)> = order
        .iter()
        .map(|&i| (energies[i] / sites as f64, diagonal[i]))
        .collect();
    let (lo, hi) = (d / 4, 3 * d / 4);
    let fluctuation = (lo..hi)
        .map(|m| (points[m + 1].1 - points[m].1).abs())
        .sum::<f64>()
        / (hi - lo) as f64;
    Ok(DiagonalScatter { points, fluctuation })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectralKind {
    Local,
    /// Translation average over `count` positions.
    TranslationAverage { count: usize },
}

impl SpectralKind {
    pub fn prefactor(self) -> f64 {
        match self {
            SpectralKind::Local => 1.0,
            SpectralKind::TranslationAverage { count } => count as f64,
        }
    }

    pub fn for_observable(obs: &ObservableSpec, chain: &ChainSpec) -> Self {
        if obs.is_average() {
            SpectralKind::TranslationAverage { count: averaging_count(obs.support(), chain) }
        } else {
            SpectralKind::Local
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelLabel {
    /// `|j - l| = d` in the site-pair expansion of a translation average.
    Distance(usize),
    /// `|k_m - k_n| = 2 pi l / L`.
    MomentumTransfer(usize),
}

impl std::fmt::Display for ChannelLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChannelLabel::Distance(d) => write!(f, "d_{d}"),
            ChannelLabel::MomentumTransfer(l) => write!(f, "delta_{l}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Channel {
    pub label: ChannelLabel,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SpectralFunction {
    pub kind: SpectralKind,
    pub omega: Vec<f64>,
    pub values: Vec<f64>,
    pub sigma: f64,
    pub omega_h: f64,
    pub channels: Vec<Channel>,
}

impl SpectralFunction {
    pub fn channel(&self, label: ChannelLabel) -> Option<&[f64]> {
        self.channels.iter().find(|c| c.label == label).map(|c| c.values.as_slice())
    }

    /// Largest pointwise `|sum_channels - total|`.
    pub fn partition_residual(&self) -> f64 {
        (0..self.omega.len())
            .map(|i| {
                let s: f64 = self.channels.iter().map(|c| c.values[i]).sum();
                (s - self.values[i]).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Trapezoid integral over the grid.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.omega, &self.values)
    }

    /// Mean of `values` over grid points in `[lo, hi]`.
    pub fn mean_over(&self, lo: f64, hi: f64) -> f64 {
        mean_over(&self.omega, &self.values, lo, hi)
    }
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

pub fn mean_over(omega: &[f64], values: &[f64], lo: f64, hi: f64) -> f64 {
    let (sum, n) = omega
        .iter()
        .zip(values)
        .filter(|(w, _)| **w >= lo && **w <= hi)
        .fold((0.0, 0usize), |(s, n), (_, v)| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Lowest frequency above `plateau_hi` at which `values` has dropped to
/// `fraction` of its mean over `[plateau_lo, plateau_hi]`.
pub fn onset_frequency(omega: &[f64], values: &[f64], plateau_lo: f64, plateau_hi: f64, fraction: f64) -> Option<f64> {
    let level = mean_over(omega, values, plateau_lo, plateau_hi);
    omega
        .iter()
        .zip(values)
        .find(|(w, v)| **w > plateau_hi && **v <= fraction * level)
        .map(|(w, _)| *w)
}

/// Sum of per-chunk partial histograms in chunk order, so results do not
/// depend on the thread count.
fn merge_in_order(parts: Vec<Vec<f64>>, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for p in parts {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out
}

fn chunks(d: usize) -> Vec<Range<usize>> {
    (0..d).step_by(ROW_CHUNK).map(|s| s..(s + ROW_CHUNK).min(d)).collect()
}

/// Spectral function of a fully materialized element set.
pub fn spectral_function(
    elements: &MatrixElementSet,
    kind: SpectralKind,
    sigma: f64,
    grid: &[f64],
) -> Result<SpectralFunction> {
    check_grid(grid, sigma)?;
    let d = elements.dimension();
    let kernel = Kernel::new(sigma);
    let scale = kind.prefactor() / d as f64;
    let e = &elements.energies;
    let parts: Vec<Vec<f64>> = chunks(d)
        .into_par_iter()
        .map(|rows| {
            let mut acc = vec![0.0; grid.len()];
            for m in rows {
                let row = elements.elements.row(m);
                for n in 0..d {
                    if n != m {
                        let v = row[n];
                        kernel.deposit(grid, &mut acc, e[m] - e[n], scale * v * v);
                    }
                }
            }
            acc
        })
        .collect();
    Ok(SpectralFunction {
        kind,
        omega: grid.to_vec(),
        values: merge_in_order(parts, grid.len()),
        sigma,
        omega_h: spectra::heisenberg_frequency(e)?,
        channels: Vec::new(),
    })
}

/// Splits the translation-average spectral function into contributions
/// from site pairs at distance `d = |j - l|`:
/// channel `d` carries `(N/D)(1/N^2) sum_{|j-l|=d} O^j_mn O^l_mn G(w - w_mn)`.
///
/// The `N` local eigenbasis matrices are streamed one row block at a
/// time. `values` holds the full `|f_avg|^2`.
pub fn distance_decomposition(
    obs: &ObservableSpec,
    chain: &ChainSpec,
    eig: &EigenSystem,
    sigma: f64,
    grid: &[f64],
) -> Result<SpectralFunction> {
    check_grid(grid, sigma)?;
    if !obs.is_average() {
        return Err(Error::InvalidObservable("distance decomposition needs a translation average".into()));
    }
    let components = obs.components(chain)?;
    let n_sites = components.len();
    let rows: Vec<RowOperator> = components
        .iter()
        .map(|c| hilbert::observable_rows(c, chain))
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        return Err(Error::MissingData("no site operators".into()));
    }
    let d = eig.dimension();
    if rows[0].dimension() != d {
        return Err(Error::DimensionMismatch { expected: d, found: rows[0].dimension() });
    }
    let kernel = Kernel::new(sigma);
    let g = grid.len();
    let scale = 1.0 / (n_sites as f64 * d as f64);
    let e = &eig.energies;
    let parts: Vec<Vec<f64>> = chunks(d)
        .into_par_iter()
        .map(|range| {
            let slabs: Vec<Array2<f64>> = rows
                .iter()
                .map(|r| eigenbasis_rows(r, eig.vectors.view(), range.clone()))
                .collect();
            let mut acc = vec![0.0; g * n_sites];
            let mut x = vec![0.0; n_sites];
            for (local, m) in range.clone().enumerate() {
                for n in 0..d {
                    if n == m {
                        continue;
                    }
                    let omega = e[m] - e[n];
                    if omega + kernel.reach < grid[0] || omega - kernel.reach > grid[g - 1] {
                        continue;
                    }
                    for (j, slab) in slabs.iter().enumerate() {
                        x[j] = slab[[local, n]];
                    }
                    for dist in 0..n_sites {
                        let mut w: f64 = (0..n_sites - dist).map(|j| x[j] * x[j + dist]).sum();
                        if dist > 0 {
                            w *= 2.0;
                        }
                        kernel.deposit(grid, &mut acc[dist * g..(dist + 1) * g], omega, scale * w);
                    }
                }
            }
            acc
        })
        .collect();
    let merged = merge_in_order(parts, g * n_sites);
    let channels: Vec<Channel> = (0..n_sites)
        .map(|dist| Channel {
            label: ChannelLabel::Distance(dist),
            values: merged[dist * g..(dist + 1) * g].to_vec(),
        })
        .collect();
    let values = (0..g).map(|i| channels.iter().map(|c| c.values[i]).sum()).collect();
    Ok(SpectralFunction {
        kind: SpectralKind::TranslationAverage { count: n_sites },
        omega: grid.to_vec(),
        values,
        sigma,
        omega_h: spectra::heisenberg_frequency(e)?,
        channels,
    })
}

/// Which sector pairs of a block system enter a spectral sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockSelection {
    All,
    /// Only `k_m = k_n`.
    SameMomentum,
}

/// Spectral function from momentum blocks with channels by `|k_m - k_n|`.
///
/// Every ordered pair of sectors is visited once; per-pair histograms are
/// merged in a fixed order.
pub fn block_spectral_function(
    system: &BlockEigenSystem,
    op: &RowOperator,
    kind: SpectralKind,
    selection: BlockSelection,
    sigma: f64,
    grid: &[f64],
) -> Result<SpectralFunction> {
    check_grid(grid, sigma)?;
    if op.dimension() != system.dimension() {
        return Err(Error::DimensionMismatch { expected: system.dimension(), found: op.dimension() });
    }
    let sites = system.sites();
    let n_channels = sites / 2 + 1;
    let g = grid.len();
    let kernel = Kernel::new(sigma);
    let scale = kind.prefactor() / system.dimension() as f64;
    let n_sectors = system.sectors.len();
    let parts: Vec<Vec<f64>> = (0..n_sectors)
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![0.0; g * n_channels];
            let blocks: Vec<(usize, Array2<Complex64>)> = match selection {
                BlockSelection::All => system.eigenbasis_columns(op, b).into_iter().enumerate().collect(),
                BlockSelection::SameMomentum => vec![(b, system.eigenbasis_block(op, b, b))],
            };
            let e_n = &system.sectors[b].energies;
            for (a, block) in blocks {
                let e_m = &system.sectors[a].energies;
                let ell = symmetry::momentum_transfer(system.sectors[a].eta(), system.sectors[b].eta(), sites);
                let out = &mut acc[ell * g..(ell + 1) * g];
                for (m, &em) in e_m.iter().enumerate() {
                    for (n, &en) in e_n.iter().enumerate() {
                        if a == b && m == n {
                            continue;
                        }
                        kernel.deposit(grid, out, em - en, scale * block[[m, n]].norm_sqr());
                    }
                }
            }
            acc
        })
        .collect();
    let merged = merge_in_order(parts, g * n_channels);
    let channels: Vec<Channel> = (0..n_channels)
        .map(|ell| Channel {
            label: ChannelLabel::MomentumTransfer(ell),
            values: merged[ell * g..(ell + 1) * g].to_vec(),
        })
        .collect();
    let values = (0..g).map(|i| channels.iter().map(|c| c.values[i]).sum()).collect();
    Ok(SpectralFunction {
        kind,
        omega: grid.to_vec(),
        values,
        sigma,
        omega_h: spectra::heisenberg_frequency(&system.sorted_energies())?,
        channels,
    })
}

/// Local spectral function of a periodic chain grouped by momentum
/// transfer `Delta_l`, `l = 0..=L/2`.
pub fn momentum_decomposition(
    system: &BlockEigenSystem,
    obs: &ObservableSpec,
    sigma: f64,
    grid: &[f64],
) -> Result<SpectralFunction> {
    if obs.is_average() {
        return Err(Error::InvalidObservable("momentum decomposition is defined for local observables".into()));
    }
    let op = hilbert::observable_rows(obs, &system.chain)?;
    block_spectral_function(system, &op, SpectralKind::Local, BlockSelection::All, sigma, grid)
}

/// Translation-average spectral function with the sum restricted to
/// `k_m = k_n`.
pub fn sector_spectral_function(
    system: &BlockEigenSystem,
    obs: &ObservableSpec,
    sigma: f64,
    grid: &[f64],
) -> Result<SpectralFunction> {
    if !obs.is_average() {
        return Err(Error::InvalidObservable("sector spectral function needs a translation average".into()));
    }
    let op = hilbert::observable_rows(obs, &system.chain)?;
    let kind = SpectralKind::for_observable(obs, &system.chain);
    let mut f = block_spectral_function(system, &op, kind, BlockSelection::SameMomentum, sigma, grid)?;
    f.channels.clear();
    Ok(f)
}

/// Diagonal elements of `op` in the block eigenbasis, ordered like
/// [`BlockEigenSystem::levels`].
pub fn block_diagonal(system: &BlockEigenSystem, op: &RowOperator) -> Vec<f64> {
    let per_sector: Vec<Vec<f64>> = (0..system.sectors.len())
        .map(|s| {
            system
                .eigenbasis_block(op, s, s)
                .diag()
                .iter()
                .map(|z| z.re)
                .collect()
        })
        .collect();
    system.levels().iter().map(|l| per_sector[l.sector][l.index]).collect()
}

/// Pair-selection window for the momentum-resolved ETH function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairWindow {
    /// Bound on `|E_bar - E_inf|`.
    pub energy_half_width: f64,
    /// Bound on `|log10 w_mn - log10 w|`.
    pub log_omega_half_width: f64,
    pub pairs: usize,
}

impl Default for PairWindow {
    fn default() -> Self {
        Self { energy_half_width: 0.2, log_omega_half_width: 0.01, pairs: 100 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FPoint {
    pub log10_omega: f64,
    pub omega: f64,
    /// `(D/L) * mean |O_mn|^2` over the selected pairs.
    pub f2: f64,
    pub pair_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FFunctionEstimate {
    pub eta_m: i32,
    pub eta_n: i32,
    /// `l` with `|k_m - k_n| = 2 pi l / L`.
    pub transfer: usize,
    pub window: PairWindow,
    pub points: Vec<FPoint>,
    /// Targets with no admissible pair, with the reason.
    pub omitted: Vec<(f64, String)>,
}

impl FFunctionEstimate {
    /// `2/L` for `Delta != 0, pi`, else `1/L`: the share of the `L^2`
    /// sector pairs carrying this momentum transfer.
    pub fn block_share(&self, sites: usize) -> f64 {
        block_share(self.transfer, sites)
    }
}

pub fn block_share(transfer: usize, sites: usize) -> f64 {
    let pi_channel = sites % 2 == 0 && transfer == sites / 2;
    if transfer == 0 || pi_channel {
        1.0 / sites as f64
    } else {
        2.0 / sites as f64
    }
}

/// Coarse-grained `|f(E_inf, w, kappa)|^2` from the `(eta_m, eta_n)` block.
///
/// For each target, pairs with `|E_bar - E_inf|` and `|log10|w_mn| - t|`
/// inside the window are ranked by `|max(E_m, E_n) - E_inf|`, then
/// `| |w_mn| - w |`, then `(m, n)`; the first `pairs` are averaged.
pub fn extract_f_function(
    system: &BlockEigenSystem,
    obs: &ObservableSpec,
    eta_m: i32,
    eta_n: i32,
    log10_targets: &[f64],
    window: PairWindow,
) -> Result<FFunctionEstimate> {
    if obs.is_average() {
        return Err(Error::InvalidObservable("ETH-function extraction expects a local observable".into()));
    }
    if window.pairs == 0 || !(window.energy_half_width > 0.0) || !(window.log_omega_half_width > 0.0) {
        return Err(Error::InvalidParameter(format!("invalid pair window {window:?}")));
    }
    let missing = |eta| Error::MissingData(format!("no sector eta = {eta}"));
    let a = system.sector_index(eta_m).ok_or_else(|| missing(eta_m))?;
    let b = system.sector_index(eta_n).ok_or_else(|| missing(eta_n))?;
    let op = hilbert::observable_rows(obs, &system.chain)?;
    let block = system.eigenbasis_block(&op, a, b);
    let e_inf = spectra::infinite_temperature_energy(&system.sorted_energies());
    let e_m = &system.sectors[a].energies;
    let e_n = &system.sectors[b].energies;
    let sites = system.sites();
    let dim_per_block = system.dimension() as f64 / sites as f64;

    // Candidates inside the energy window, with their log-frequency.
    struct Candidate {
        m: usize,
        n: usize,
        log_w: f64,
        w: f64,
        energy_key: f64,
        weight: f64,
    }
    let mut candidates = Vec::new();
    for (m, &em) in e_m.iter().enumerate() {
        for (n, &en) in e_n.iter().enumerate() {
            if a == b && m == n {
                continue;
            }
            let w = (em - en).abs();
            if w == 0.0 || ((em + en) / 2.0 - e_inf).abs() > window.energy_half_width {
                continue;
            }
            candidates.push(Candidate {
                m,
                n,
                log_w: w.log10(),
                w,
                energy_key: (em.max(en) - e_inf).abs(),
                weight: block[[m, n]].norm_sqr(),
            });
        }
    }

    let mut points = Vec::new();
    let mut omitted = Vec::new();
    for &target in log10_targets {
        let omega = 10f64.powf(target);
        let mut selected: Vec<&Candidate> = candidates
            .iter()
            .filter(|c| (c.log_w - target).abs() <= window.log_omega_half_width)
            .collect();
        if selected.is_empty() {
            omitted.push((target, "no pairs inside the energy/frequency window".to_string()));
            continue;
        }
        selected.sort_by(|x, y| {
            x.energy_key
                .total_cmp(&y.energy_key)
                .then((x.w - omega).abs().total_cmp(&(y.w - omega).abs()))
                .then((x.m, x.n).cmp(&(y.m, y.n)))
        });
        selected.truncate(window.pairs);
        if selected.len() < window.pairs {
            log::info!(
                "eta ({eta_m}, {eta_n}) target log10 w = {target}: only {} of {} pairs",
                selected.len(),
                window.pairs
            );
        }
        let mean = selected.iter().map(|c| c.weight).sum::<f64>() / selected.len() as f64;
        points.push(FPoint { log10_omega: target, omega, f2: dim_per_block * mean, pair_count: selected.len() });
    }
    Ok(FFunctionEstimate {
        eta_m,
        eta_n,
        transfer: symmetry::momentum_transfer(eta_m, eta_n, sites),
        window,
        points,
        omitted,
    })
}

/// Excess kurtosis of off-diagonal elements with `|E_bar - e_center| <=
/// e_half` and `w_mn` in `[w_lo, w_hi]`; `None` with fewer than 8 samples.
///
/// A diagnostic for the near-Gaussian statistics of off-diagonal elements.
pub fn offdiagonal_excess_kurtosis(
    elements: &MatrixElementSet,
    e_center: f64,
    e_half: f64,
    w_lo: f64,
    w_hi: f64,
) -> Option<f64> {
    let e = &elements.energies;
    let d = e.len();
    let mut samples = Vec::new();
    for m in 0..d {
        for n in 0..d {
            let w = e[m] - e[n];
            if m != n && w >= w_lo && w <= w_hi && ((e[m] + e[n]) / 2.0 - e_center).abs() <= e_half {
                samples.push(elements.elements[[m, n]]);
            }
        }
    }
    if samples.len() < 8 {
        return None;
    }
    let k = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / k;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / k;
    let m4 = samples.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / k;
    Some(m4 / (var * var) - 3.0)
}
