//! Spin-1 operators, tensor-product embedding, and the tilted-field Ising
//! Hamiltonians and observables as dense real matrices.
//!
//! Basis index of a configuration `(t_1, ..., t_L)` is `sum_j t_j 3^(L-j)`,
//! with `t = 0, 1, 2` meaning `S_z = +1, 0, -1`.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;

use ndarray::{Array2, ArrayView2, LinalgScalar};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::MemoryCap;

pub const DEFAULT_COUPLING: f64 = 0.707;
pub const DEFAULT_TRANSVERSE_FIELD: f64 = 1.1;
pub const DEFAULT_LONGITUDINAL_FIELD: f64 = 0.9;
pub const DEFAULT_EDGE_FIELD: f64 = 0.1;

/// Local dimension of a spin-1 site.
pub const SITE_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

/// A spin-1 component in the `S_z` eigenbasis ordered `(+1, 0, -1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteOperator {
    pub axis: Axis,
    pub matrix: Array2<Complex64>,
}

impl SiteOperator {
    pub fn new(axis: Axis) -> Self {
        let r = |x: f64| Complex64::new(x, 0.0);
        let i = |x: f64| Complex64::new(0.0, x);
        let s = FRAC_1_SQRT_2;
        let z = r(0.0);
        let matrix = match axis {
            Axis::X => ndarray::array![[z, r(s), z], [r(s), z, r(s)], [z, r(s), z]],
            Axis::Y => ndarray::array![[z, i(-s), z], [i(s), z, i(-s)], [z, i(s), z]],
            Axis::Z => ndarray::array![[r(1.0), z, z], [z, z, z], [z, z, r(-1.0)]],
        };
        Self { axis, matrix }
    }

    /// Real 3x3 entries, available for the x and z components.
    pub fn real_entries(&self) -> Option<[[f64; 3]; 3]> {
        real_site_matrix(self.axis)
    }
}

fn real_site_matrix(axis: Axis) -> Option<[[f64; 3]; 3]> {
    let s = FRAC_1_SQRT_2;
    match axis {
        Axis::X => Some([[0.0, s, 0.0], [s, 0.0, s], [0.0, s, 0.0]]),
        Axis::Z => Some([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, -1.0]]),
        Axis::Y => None,
    }
}

/// `(S_x, S_y, S_z)` for spin 1.
pub fn spin1_matrices() -> (SiteOperator, SiteOperator, SiteOperator) {
    (
        SiteOperator::new(Axis::X),
        SiteOperator::new(Axis::Y),
        SiteOperator::new(Axis::Z),
    )
}

/// `I ⊗ ... ⊗ op ⊗ ... ⊗ I` with `op` acting on `site` (1-based).
pub fn embed<T: LinalgScalar + PartialEq>(op: ArrayView2<T>, site: usize, sites: usize) -> Result<Array2<T>> {
    if site == 0 || site > sites {
        return Err(Error::SiteOutOfRange { site, sites });
    }
    if op.dim() != (SITE_DIM, SITE_DIM) {
        return Err(Error::DimensionMismatch { expected: SITE_DIM, found: op.nrows() });
    }
    let dim = SITE_DIM.pow(sites as u32);
    let stride = SITE_DIM.pow((sites - site) as u32);
    let mut out = Array2::<T>::zeros((dim, dim));
    for row in 0..dim {
        let t = (row / stride) % SITE_DIM;
        let base = row - t * stride;
        for tc in 0..SITE_DIM {
            let v = op[[t, tc]];
            if v != T::zero() {
                out[[row, base + tc * stride]] = v;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Boundary {
    Periodic,
    Open,
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Boundary::Periodic => "pbc",
            Boundary::Open => "obc",
        })
    }
}

/// Chain length, boundary condition and couplings of
/// `H = J sum S_z^j S_z^(j+1) + h_x sum S_x^j + h_z sum S_z^j (+ edge S_z^1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainSpec {
    pub sites: usize,
    pub boundary: Boundary,
    pub coupling: f64,
    pub transverse_field: f64,
    pub longitudinal_field: f64,
    /// Extra `S_z` field on site 1; only meaningful for open chains.
    pub edge_field: f64,
}

impl ChainSpec {
    pub fn periodic(sites: usize) -> Self {
        Self {
            sites,
            boundary: Boundary::Periodic,
            coupling: DEFAULT_COUPLING,
            transverse_field: DEFAULT_TRANSVERSE_FIELD,
            longitudinal_field: DEFAULT_LONGITUDINAL_FIELD,
            edge_field: 0.0,
        }
    }

    pub fn open(sites: usize) -> Self {
        Self {
            boundary: Boundary::Open,
            edge_field: DEFAULT_EDGE_FIELD,
            ..Self::periodic(sites)
        }
    }

    pub fn with_boundary(sites: usize, boundary: Boundary) -> Self {
        match boundary {
            Boundary::Periodic => Self::periodic(sites),
            Boundary::Open => Self::open(sites),
        }
    }

    pub fn dimension(&self) -> usize {
        SITE_DIM.pow(self.sites as u32)
    }

    pub fn validate(&self) -> Result<()> {
        let min = match self.boundary {
            Boundary::Open => 2,
            // L = 2 would double the single bond through the wrap.
            Boundary::Periodic => 3,
        };
        if self.sites < min {
            return Err(Error::InvalidChain(format!(
                "{} chains need at least {min} sites, got {}",
                self.boundary, self.sites
            )));
        }
        if self.sites > 20 {
            return Err(Error::InvalidChain(format!("{} sites overflow the basis index", self.sites)));
        }
        if self.boundary == Boundary::Periodic && self.edge_field != 0.0 {
            return Err(Error::InvalidChain("edge field is only defined for open chains".into()));
        }
        let params = [self.coupling, self.transverse_field, self.longitudinal_field, self.edge_field];
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidChain("couplings must be finite".into()));
        }
        Ok(())
    }

    /// Bonds `(j, j+1)` present in the Hamiltonian, 1-based, with `L + 1 = 1`.
    pub fn bonds(&self) -> Vec<(usize, usize)> {
        let open = (1..self.sites).map(|j| (j, j + 1));
        match self.boundary {
            Boundary::Open => open.collect(),
            Boundary::Periodic => open.chain(std::iter::once((self.sites, 1))).collect(),
        }
    }
}

/// Row-compressed real operator on the product basis.
///
/// Used to apply Hamiltonians and observables to blocks of vectors without
/// a dense matrix product; [`DenseOperator`] is the user-facing form.
#[derive(Debug, Clone, PartialEq)]
pub struct RowOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl RowOperator {
    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Nonzero `(column, value)` pairs of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()]
            .iter()
            .zip(&self.vals[span])
            .map(|(&c, &v)| (c as usize, v))
    }

    /// `self * x` for a block of column vectors.
    pub fn apply<T>(&self, x: ArrayView2<T>) -> Array2<T>
    where
        T: LinalgScalar + std::ops::Mul<f64, Output = T>,
    {
        assert_eq!(x.nrows(), self.dim);
        let mut out = Array2::<T>::zeros(x.raw_dim());
        for r in 0..self.dim {
            let mut dst = out.row_mut(r);
            for (c, v) in self.row(r) {
                dst.scaled_add_row(x.row(c), v);
            }
        }
        out
    }

    pub fn to_dense(&self, cap: MemoryCap) -> Result<DenseOperator> {
        cap.check(self.dim, 1, 8)?;
        let mut m = Array2::<f64>::zeros((self.dim, self.dim));
        for r in 0..self.dim {
            for (c, v) in self.row(r) {
                m[[r, c]] += v;
            }
        }
        Ok(DenseOperator { matrix: m })
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim)
            .map(|r| self.row(r).filter(|&(c, _)| c == r).map(|(_, v)| v).sum::<f64>())
            .sum()
    }

    fn from_dense(m: ArrayView2<f64>) -> Self {
        let dim = m.nrows();
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for r in 0..dim {
            for (c, &v) in m.row(r).iter().enumerate() {
                if v != 0.0 {
                    cols.push(c as u32);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { dim, row_ptr, cols, vals }
    }
}

trait RowScaledAdd<T> {
    fn scaled_add_row(&mut self, src: ndarray::ArrayView1<T>, alpha: f64);
}

impl<T> RowScaledAdd<T> for ndarray::ArrayViewMut1<'_, T>
where
    T: LinalgScalar + std::ops::Mul<f64, Output = T>,
{
    fn scaled_add_row(&mut self, src: ndarray::ArrayView1<T>, alpha: f64) {
        self.zip_mut_with(&src, |d, &s| *d = *d + s * alpha);
    }
}

/// A product of single-site real operators with a prefactor.
#[derive(Debug, Clone)]
struct Term {
    coeff: f64,
    factors: Vec<(usize, [[f64; 3]; 3])>,
}

fn assemble(terms: &[Term], sites: usize) -> RowOperator {
    let dim = SITE_DIM.pow(sites as u32);
    let strides: Vec<usize> = (1..=sites).map(|j| SITE_DIM.pow((sites - j) as u32)).collect();
    let mut row_ptr = Vec::with_capacity(dim + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut scratch: Vec<(usize, f64)> = Vec::new();
    row_ptr.push(0);
    for row in 0..dim {
        scratch.clear();
        for term in terms {
            // Expand the product factor by factor over reachable columns.
            let mut partial: Vec<(usize, f64)> = vec![(row, term.coeff)];
            for &(site, ref m) in &term.factors {
                let stride = strides[site - 1];
                let t = (row / stride) % SITE_DIM;
                let mut next = Vec::with_capacity(partial.len() * 2);
                for &(col, amp) in &partial {
                    let base = col - ((col / stride) % SITE_DIM) * stride;
                    for (tc, &entry) in m[t].iter().enumerate() {
                        if entry != 0.0 {
                            next.push((base + tc * stride, amp * entry));
                        }
                    }
                }
                partial = next;
            }
            scratch.extend(partial);
        }
        scratch.sort_by_key(|&(c, _)| c);
        let mut k = 0;
        while k < scratch.len() {
            let col = scratch[k].0;
            let mut v = 0.0;
            while k < scratch.len() && scratch[k].0 == col {
                v += scratch[k].1;
                k += 1;
            }
            if v != 0.0 {
                cols.push(col as u32);
                vals.push(v);
            }
        }
        row_ptr.push(cols.len());
    }
    RowOperator { dim, row_ptr, cols, vals }
}

/// Dense real symmetric operator on the `3^L`-dimensional product space.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    pub matrix: Array2<f64>,
}

impl DenseOperator {
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch { expected: matrix.nrows(), found: matrix.ncols() });
        }
        Ok(Self { matrix })
    }

    pub fn dimension(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.diag().sum()
    }

    pub fn hermiticity_residual(&self) -> f64 {
        crate::linalg::symmetry_residual(self.matrix.view())
    }

    pub fn rows(&self) -> RowOperator {
        RowOperator::from_dense(self.matrix.view())
    }
}

pub fn hamiltonian_rows(spec: &ChainSpec) -> Result<RowOperator> {
    spec.validate()?;
    let sx = real_site_matrix(Axis::X).unwrap();
    let sz = real_site_matrix(Axis::Z).unwrap();
    let mut terms = Vec::new();
    for (a, b) in spec.bonds() {
        terms.push(Term { coeff: spec.coupling, factors: vec![(a, sz), (b, sz)] });
    }
    for j in 1..=spec.sites {
        terms.push(Term { coeff: spec.transverse_field, factors: vec![(j, sx)] });
        terms.push(Term { coeff: spec.longitudinal_field, factors: vec![(j, sz)] });
    }
    if spec.boundary == Boundary::Open && spec.edge_field != 0.0 {
        terms.push(Term { coeff: spec.edge_field, factors: vec![(1, sz)] });
    }
    Ok(assemble(&terms, spec.sites))
}

/// Dense Hamiltonian for the given chain.
pub fn build_hamiltonian(spec: &ChainSpec) -> Result<DenseOperator> {
    build_hamiltonian_capped(spec, MemoryCap::default())
}

pub fn build_hamiltonian_capped(spec: &ChainSpec, cap: MemoryCap) -> Result<DenseOperator> {
    spec.validate()?;
    cap.check(spec.dimension(), 1, 8)?;
    hamiltonian_rows(spec)?.to_dense(cap)
}

/// What a local observable is supported on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Support {
    /// `S_a^j`
    Site,
    /// `S_a^j S_a^(j+1)`
    Bond,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObservableSpec {
    Local { support: Support, axis: Axis, site: usize },
    /// `(1/N) sum_j O^j` over the `N` valid positions.
    TranslationAverage { support: Support, axis: Axis },
}

impl ObservableSpec {
    pub fn local_site(axis: Axis, site: usize) -> Self {
        Self::Local { support: Support::Site, axis, site }
    }

    pub fn local_bond(axis: Axis, site: usize) -> Self {
        Self::Local { support: Support::Bond, axis, site }
    }

    pub fn average(support: Support, axis: Axis) -> Self {
        Self::TranslationAverage { support, axis }
    }

    /// Site `ceil(L/2)` used for local observables by default.
    pub fn default_site(sites: usize) -> usize {
        sites.div_ceil(2)
    }

    pub fn support(&self) -> Support {
        match *self {
            Self::Local { support, .. } | Self::TranslationAverage { support, .. } => support,
        }
    }

    pub fn axis(&self) -> Axis {
        match *self {
            Self::Local { axis, .. } | Self::TranslationAverage { axis, .. } => axis,
        }
    }

    pub fn is_average(&self) -> bool {
        matches!(self, Self::TranslationAverage { .. })
    }

    /// The local operators whose mean is this observable (a single entry
    /// for local observables).
    pub fn components(&self, chain: &ChainSpec) -> Result<Vec<ObservableSpec>> {
        match *self {
            Self::Local { .. } => {
                self.validate(chain)?;
                Ok(vec![*self])
            }
            Self::TranslationAverage { support, axis } => {
                let n = averaging_count(support, chain);
                Ok((1..=n).map(|site| Self::Local { support, axis, site }).collect())
            }
        }
    }

    pub fn validate(&self, chain: &ChainSpec) -> Result<()> {
        if self.axis() == Axis::Y {
            return Err(Error::InvalidObservable("S_y observables are not real; use x or z".into()));
        }
        if let Self::Local { support, site, .. } = *self {
            let max = match support {
                Support::Site => chain.sites,
                Support::Bond => averaging_count(Support::Bond, chain),
            };
            if site == 0 || site > max {
                return Err(Error::InvalidObservable(format!(
                    "{support:?} index {site} invalid for {} chain of {} sites",
                    chain.boundary, chain.sites
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for ObservableSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::Local { support: Support::Site, axis, site } => write!(f, "S{axis}^{site}"),
            Self::Local { support: Support::Bond, axis, site } => {
                write!(f, "S{axis}^{site} S{axis}^{}", site + 1)
            }
            Self::TranslationAverage { support: Support::Site, axis } => write!(f, "avg S{axis}"),
            Self::TranslationAverage { support: Support::Bond, axis } => write!(f, "avg S{axis}S{axis}"),
        }
    }
}

/// Number `N` of positions entering a translation average: `L` for sites
/// and periodic bonds, `L - 1` for open-chain bonds.
pub fn averaging_count(support: Support, chain: &ChainSpec) -> usize {
    match (support, chain.boundary) {
        (Support::Bond, Boundary::Open) => chain.sites - 1,
        _ => chain.sites,
    }
}

fn local_term(support: Support, axis: Axis, site: usize, sites: usize, coeff: f64) -> Term {
    let m = real_site_matrix(axis).expect("validated axis");
    let factors = match support {
        Support::Site => vec![(site, m)],
        Support::Bond => vec![(site, m), (site % sites + 1, m)],
    };
    Term { coeff, factors }
}

pub fn observable_rows(obs: &ObservableSpec, chain: &ChainSpec) -> Result<RowOperator> {
    chain.validate()?;
    obs.validate(chain)?;
    let terms: Vec<Term> = match *obs {
        ObservableSpec::Local { support, axis, site } => {
            vec![local_term(support, axis, site, chain.sites, 1.0)]
        }
        ObservableSpec::TranslationAverage { support, axis } => {
            let n = averaging_count(support, chain);
            (1..=n)
                .map(|j| local_term(support, axis, j, chain.sites, 1.0 / n as f64))
                .collect()
        }
    };
    Ok(assemble(&terms, chain.sites))
}

/// Dense matrix of an observable on the chain's product space.
pub fn build_observable(obs: &ObservableSpec, chain: &ChainSpec) -> Result<DenseOperator> {
    let cap = MemoryCap::default();
    cap.check(chain.dimension(), 1, 8)?;
    observable_rows(obs, chain)?.to_dense(cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn kron(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
        let (ar, ac) = a.dim();
        let (br, bc) = b.dim();
        Array2::from_shape_fn((ar * br, ac * bc), |(i, j)| a[[i / br, j / bc]] * b[[i % br, j % bc]])
    }

    fn real(axis: Axis) -> Array2<f64> {
        let m = real_site_matrix(axis).unwrap();
        Array2::from_shape_fn((3, 3), |(i, j)| m[i][j])
    }

    #[test]
    fn sz_is_diagonal_in_basis_order() {
        let (_, _, sz) = spin1_matrices();
        let expected = Array2::from_diag(&ndarray::arr1(&[c(1.0), c(0.0), c(-1.0)]));
        assert_eq!(sz.matrix, expected);
    }

    #[test]
    fn sx_ladder_entries() {
        let (sx, _, _) = spin1_matrices();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if (i as i32 - j as i32).abs() == 1 { FRAC_1_SQRT_2 } else { 0.0 };
                assert_eq!(sx.matrix[[i, j]], c(expected));
            }
        }
    }

    #[test]
    fn su2_algebra_and_casimir() {
        let (sx, sy, sz) = spin1_matrices();
        let (x, y, z) = (&sx.matrix, &sy.matrix, &sz.matrix);
        let i = Complex64::i();
        let comm = |a: &Array2<Complex64>, b: &Array2<Complex64>| a.dot(b) - b.dot(a);
        let checks = [
            comm(x, y) - z.mapv(|v| v * i),
            comm(y, z) - x.mapv(|v| v * i),
            comm(z, x) - y.mapv(|v| v * i),
        ];
        for r in checks {
            assert!(r.iter().all(|v| v.norm() < 1e-15));
        }
        let casimir = x.dot(x) + y.dot(y) + z.dot(z);
        for a in 0..3 {
            for b in 0..3 {
                let t = if a == b { 2.0 } else { 0.0 };
                assert!((casimir[[a, b]] - c(t)).norm() < 1e-15);
            }
        }
        for op in [x, y, z] {
            assert!(op.diag().sum().norm() < 1e-15);
            assert_eq!(crate::linalg::hermiticity_residual(op.view()), 0.0);
        }
    }

    #[test]
    fn embed_single_site_is_identity_map() {
        let sz = real(Axis::Z);
        assert_eq!(embed(sz.view(), 1, 1).unwrap(), sz);
    }

    #[test]
    fn embed_trace_and_disjoint_commutation() {
        let sx = real(Axis::X);
        let sz = real(Axis::Z);
        let a = embed(sx.view(), 2, 3).unwrap();
        assert_eq!(a.diag().sum(), 0.0);
        let x1 = embed(sx.view(), 1, 3).unwrap();
        let z3 = embed(sz.view(), 3, 3).unwrap();
        let comm = x1.dot(&z3) - z3.dot(&x1);
        assert!(comm.iter().all(|v| *v == 0.0));
        // trace(embed(op)) = 3^(L-1) trace(op)
        let proj = Array2::from_diag(&ndarray::arr1(&[1.0, 0.0, 0.0]));
        assert_eq!(embed(proj.view(), 2, 3).unwrap().diag().sum(), 9.0);
    }

    #[test]
    fn embed_matches_kronecker() {
        let sx = real(Axis::X);
        let id = Array2::<f64>::eye(3);
        let expected = kron(&kron(&id, &sx), &id);
        assert_eq!(embed(sx.view(), 2, 3).unwrap(), expected);
    }

    #[test]
    fn embed_rejects_bad_site() {
        let sx = real(Axis::X);
        assert!(matches!(embed(sx.view(), 0, 3), Err(Error::SiteOutOfRange { .. })));
        assert!(matches!(embed(sx.view(), 4, 3), Err(Error::SiteOutOfRange { .. })));
    }

    #[test]
    fn hamiltonian_is_traceless_and_symmetric() {
        for spec in [ChainSpec::periodic(4), ChainSpec::open(4), ChainSpec::open(2)] {
            let h = build_hamiltonian(&spec).unwrap();
            assert!(h.trace().abs() < 1e-12);
            assert!(h.hermiticity_residual() < 1e-12);
        }
    }

    #[test]
    fn open_two_site_hamiltonian_matches_kronecker_oracle() {
        let spec = ChainSpec::open(2);
        let h = build_hamiltonian(&spec).unwrap();
        let (sx, sz, id) = (real(Axis::X), real(Axis::Z), Array2::<f64>::eye(3));
        let oracle = kron(&sz, &sz) * spec.coupling
            + (kron(&sx, &id) + kron(&id, &sx)) * spec.transverse_field
            + (kron(&sz, &id) + kron(&id, &sz)) * spec.longitudinal_field
            + kron(&sz, &id) * spec.edge_field;
        let diff = (&h.matrix - &oracle).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-15, "max deviation {diff}");
    }

    #[test]
    fn periodic_minus_open_is_wrap_bond() {
        let pbc = build_hamiltonian(&ChainSpec::periodic(3)).unwrap();
        let obc = build_hamiltonian(&ChainSpec { edge_field: 0.0, ..ChainSpec::open(3) }).unwrap();
        let sz = real(Axis::Z);
        let wrap = embed(sz.view(), 3, 3).unwrap().dot(&embed(sz.view(), 1, 3).unwrap()) * DEFAULT_COUPLING;
        let diff = (&pbc.matrix - &obc.matrix - wrap).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-14);
    }

    #[test]
    fn chain_validation() {
        assert!(ChainSpec::periodic(2).validate().is_err());
        assert!(ChainSpec::open(1).validate().is_err());
        assert!(ChainSpec::open(2).validate().is_ok());
        assert!(ChainSpec { edge_field: 0.1, ..ChainSpec::periodic(4) }.validate().is_err());
    }

    #[test]
    fn translation_average_traces() {
        let chain = ChainSpec::periodic(3);
        let o = build_observable(&ObservableSpec::average(Support::Site, Axis::X), &chain).unwrap();
        assert!(o.trace().abs() < 1e-15);
        // Oracle: dense trace of the square, built from explicit embeddings.
        let sx = real(Axis::X);
        let mut avg = Array2::<f64>::zeros((27, 27));
        for j in 1..=3 {
            avg = avg + embed(sx.view(), j, 3).unwrap() / 3.0;
        }
        let hs = avg.dot(&avg).diag().sum() / 27.0;
        assert!((hs - 2.0 / 9.0).abs() < 1e-14);
        assert!((o.matrix.dot(&o.matrix).diag().sum() / 27.0 - hs).abs() < 1e-14);
    }

    #[test]
    fn hilbert_schmidt_norm_of_local_sx() {
        for sites in 2..=5 {
            let chain = ChainSpec::open(sites);
            for j in 1..=sites {
                let o = build_observable(&ObservableSpec::local_site(Axis::X, j), &chain).unwrap();
                let d = chain.dimension() as f64;
                let hs = o.matrix.iter().map(|v| v * v).sum::<f64>() / d;
                assert!((hs - 2.0 / 3.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn bond_observable_validation() {
        let obc = ChainSpec::open(4);
        assert!(build_observable(&ObservableSpec::local_bond(Axis::X, 4), &obc).is_err());
        assert!(build_observable(&ObservableSpec::local_bond(Axis::X, 3), &obc).is_ok());
        let pbc = ChainSpec::periodic(4);
        let wrap = build_observable(&ObservableSpec::local_bond(Axis::X, 4), &pbc).unwrap();
        let sx = real(Axis::X);
        let oracle = embed(sx.view(), 4, 4).unwrap().dot(&embed(sx.view(), 1, 4).unwrap());
        assert_eq!(wrap.matrix, oracle);
        assert_eq!(averaging_count(Support::Bond, &obc), 3);
        assert_eq!(averaging_count(Support::Bond, &pbc), 4);
        assert!(build_observable(&ObservableSpec::local_site(Axis::Y, 1), &pbc).is_err());
    }

    #[test]
    fn open_bond_average_uses_l_minus_one() {
        let chain = ChainSpec::open(3);
        let avg = build_observable(&ObservableSpec::average(Support::Bond, Axis::X), &chain).unwrap();
        let sx = real(Axis::X);
        let b = |j: usize| embed(sx.view(), j, 3).unwrap().dot(&embed(sx.view(), j + 1, 3).unwrap());
        let oracle = (b(1) + b(2)) / 2.0;
        let diff = (&avg.matrix - &oracle).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-15);
    }

    #[test]
    fn row_operator_apply_matches_dense() {
        let chain = ChainSpec::open(3);
        let rows = hamiltonian_rows(&chain).unwrap();
        let dense = rows.to_dense(MemoryCap::default()).unwrap();
        let x = Array2::from_shape_fn((27, 4), |(i, j)| ((i * 5 + j * 3) % 7) as f64 - 3.0);
        let diff = (&rows.apply(x.view()) - &dense.matrix.dot(&x)).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-13);
        assert_eq!(dense.rows(), rows);
    }

    #[test]
    fn dense_cap_refuses_large_chain() {
        let err = build_hamiltonian_capped(&ChainSpec::open(9), MemoryCap::new(1 << 30)).unwrap_err();
        assert!(matches!(err, Error::ResourceLimit { .. }));
    }
}
