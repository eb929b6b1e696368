//! One-site translations and quasimomentum block diagonalization of the
//! periodic chain.
//!
//! `T` shifts configurations left, `(t_1, ..., t_L) -> (t_2, ..., t_L, t_1)`,
//! so that `T^dagger O^j T = O^(j+1)`. Momentum states are
//! `|a, k> = c^(-1/2) sum_{r<c} e^(ikr) T^r |a>` for a cycle representative
//! `a` of length `c`, which gives `T |a, k> = e^(-ik) |a, k>` and
//! `k = 2 pi eta / L`. With these conventions
//! `O^l_mn = O^j_mn e^(i (l - j)(k_m - k_n))`.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{s, Array2};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hilbert::{self, Boundary, ChainSpec, ObservableSpec, RowOperator, Support, Axis, SITE_DIM};
use crate::linalg;

/// Permutation of basis indices realizing the one-site left shift.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranslationMap {
    sites: usize,
    image: Vec<u32>,
}

impl TranslationMap {
    pub fn new(sites: usize) -> Self {
        assert!(sites >= 1);
        let dim = SITE_DIM.pow(sites as u32);
        let top = dim / SITE_DIM;
        let image = (0..dim)
            .map(|idx| ((idx % top) * SITE_DIM + idx / top) as u32)
            .collect();
        Self { sites, image }
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn dimension(&self) -> usize {
        self.image.len()
    }

    /// Index of `T |idx>`.
    pub fn apply(&self, idx: usize) -> usize {
        self.image[idx] as usize
    }

    pub fn permutation(&self) -> &[u32] {
        &self.image
    }

    /// `T^dagger A T`, i.e. `B[i, j] = A[T(i), T(j)]`.
    pub fn conjugate(&self, a: &Array2<f64>) -> Array2<f64> {
        let d = self.dimension();
        Array2::from_shape_fn((d, d), |(i, j)| a[[self.apply(i), self.apply(j)]])
    }
}

/// Translation cycles of configurations, with each configuration located
/// relative to its cycle representative.
#[derive(Debug, Clone)]
pub struct OrbitTable {
    sites: usize,
    reps: Vec<u32>,
    cycles: Vec<u32>,
    orbit_of: Vec<u32>,
    shift_of: Vec<u8>,
}

impl OrbitTable {
    pub fn new(map: &TranslationMap) -> Self {
        let dim = map.dimension();
        let mut orbit_of = vec![u32::MAX; dim];
        let mut shift_of = vec![0u8; dim];
        let mut reps = Vec::new();
        let mut cycles = Vec::new();
        // Scanning in increasing index order makes the first unseen member of
        // each cycle its lexicographically smallest configuration.
        for start in 0..dim {
            if orbit_of[start] != u32::MAX {
                continue;
            }
            let id = reps.len() as u32;
            let mut x = start;
            let mut shift = 0u8;
            loop {
                orbit_of[x] = id;
                shift_of[x] = shift;
                x = map.apply(x);
                shift += 1;
                if x == start {
                    break;
                }
            }
            reps.push(start as u32);
            cycles.push(shift as u32);
        }
        Self { sites: map.sites(), reps, cycles, orbit_of, shift_of }
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn len(&self) -> usize {
        self.reps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reps.is_empty()
    }

    pub fn representative(&self, orbit: usize) -> usize {
        self.reps[orbit] as usize
    }

    pub fn cycle(&self, orbit: usize) -> usize {
        self.cycles[orbit] as usize
    }

    /// `(orbit, s)` with `|idx> = T^s |rep(orbit)>`.
    pub fn locate(&self, idx: usize) -> (usize, usize) {
        (self.orbit_of[idx] as usize, self.shift_of[idx] as usize)
    }
}

/// Allowed `eta` values: `-L/2 + 1 ..= L/2` (even `L`) or
/// `-floor(L/2) ..= floor(L/2)` (odd `L`).
pub fn eta_range(sites: usize) -> std::ops::RangeInclusive<i32> {
    let half = (sites / 2) as i32;
    if sites % 2 == 0 {
        (-half + 1)..=half
    } else {
        -half..=half
    }
}

/// Quasimomentum `2 pi eta / L`.
pub fn momentum(eta: i32, sites: usize) -> f64 {
    2.0 * PI * eta as f64 / sites as f64
}

/// Channel `l` with `|k_m - k_n| = 2 pi l / L` folded onto `[0, pi]`.
pub fn momentum_transfer(eta_m: i32, eta_n: i32, sites: usize) -> usize {
    let l = sites as i32;
    let d = (eta_m - eta_n).rem_euclid(l);
    d.min(l - d) as usize
}

/// Basis of one quasimomentum sector.
#[derive(Debug, Clone)]
pub struct MomentumSector {
    pub eta: i32,
    table: Arc<OrbitTable>,
    orbits: Vec<u32>,
    slot: Vec<u32>,
}

impl MomentumSector {
    pub fn sites(&self) -> usize {
        self.table.sites
    }

    pub fn momentum(&self) -> f64 {
        momentum(self.eta, self.sites())
    }

    pub fn dimension(&self) -> usize {
        self.orbits.len()
    }

    pub fn table(&self) -> &OrbitTable {
        &self.table
    }

    /// `(representative, cycle length)` of each basis state.
    pub fn representatives(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.orbits
            .iter()
            .map(|&o| (self.table.representative(o as usize), self.table.cycle(o as usize)))
    }

    /// Position of an orbit in this sector's basis, if compatible.
    pub fn position(&self, orbit: usize) -> Option<usize> {
        match self.slot[orbit] {
            u32::MAX => None,
            p => Some(p as usize),
        }
    }

    fn phase(&self, shift: usize) -> Complex64 {
        Complex64::from_polar(1.0, self.momentum() * shift as f64)
    }

    /// Product-basis components of momentum state `i`.
    pub fn state_components(&self, i: usize, map: &TranslationMap) -> Vec<(usize, Complex64)> {
        let orbit = self.orbits[i] as usize;
        let c = self.table.cycle(orbit);
        let norm = 1.0 / (c as f64).sqrt();
        let mut x = self.table.representative(orbit);
        let mut out = Vec::with_capacity(c);
        for r in 0..c {
            out.push((x, self.phase(r) * norm));
            x = map.apply(x);
        }
        out
    }

    /// Columns of the `D x d` isometry from this sector into the product
    /// basis, applied to `coefficients` (`d x n`).
    pub fn lift(&self, coefficients: &Array2<Complex64>, map: &TranslationMap) -> Array2<Complex64> {
        let dim = map.dimension();
        let mut out = Array2::<Complex64>::zeros((dim, coefficients.ncols()));
        for i in 0..self.dimension() {
            let row = coefficients.row(i);
            for (x, amp) in self.state_components(i, map) {
                out.row_mut(x).zip_mut_with(&row, |d, &w| *d += amp * w);
            }
        }
        out
    }
}

/// Sectors for every allowed `eta`, in increasing `eta`.
pub fn build_momentum_sectors(sites: usize) -> Vec<MomentumSector> {
    let map = TranslationMap::new(sites);
    sectors_from_table(Arc::new(OrbitTable::new(&map)))
}

fn sectors_from_table(table: Arc<OrbitTable>) -> Vec<MomentumSector> {
    let l = table.sites as i64;
    eta_range(table.sites)
        .map(|eta| {
            let mut slot = vec![u32::MAX; table.len()];
            let mut orbits = Vec::new();
            for o in 0..table.len() {
                if (eta as i64 * table.cycle(o) as i64).rem_euclid(l) == 0 {
                    slot[o] = orbits.len() as u32;
                    orbits.push(o as u32);
                }
            }
            MomentumSector { eta, table: Arc::clone(&table), orbits, slot }
        })
        .collect()
}

/// `<bra_i| O |ket_j>` for a translation-compatible pair of sectors, for
/// every bra sector at once. `op` must be real symmetric.
pub fn sector_columns(
    op: &RowOperator,
    ket: &MomentumSector,
    bras: &[MomentumSector],
    map: &TranslationMap,
) -> Vec<Array2<Complex64>> {
    let table = ket.table();
    let mut out: Vec<Array2<Complex64>> = bras
        .iter()
        .map(|b| Array2::zeros((b.dimension(), ket.dimension())))
        .collect();
    let bra_phases: Vec<Vec<Complex64>> = bras
        .iter()
        .map(|b| (0..table.sites).map(|s| b.phase(s).conj()).collect())
        .collect();
    for j in 0..ket.dimension() {
        for (x, amp) in ket.state_components(j, map) {
            for (y, v) in op.row(x) {
                let (orbit, shift) = table.locate(y);
                let weight = amp * v / (table.cycle(orbit) as f64).sqrt();
                for (b, bra) in bras.iter().enumerate() {
                    if let Some(i) = bra.position(orbit) {
                        out[b][[i, j]] += weight * bra_phases[b][shift];
                    }
                }
            }
        }
    }
    out
}

/// `<bra_i| O |ket_j>` between two sectors.
pub fn sector_matrix(
    op: &RowOperator,
    bra: &MomentumSector,
    ket: &MomentumSector,
    map: &TranslationMap,
) -> Array2<Complex64> {
    sector_columns(op, ket, std::slice::from_ref(bra), map).pop().unwrap()
}

/// The periodic Hamiltonian restricted to one sector.
pub fn block_hamiltonian(spec: &ChainSpec, sector: &MomentumSector) -> Result<Array2<Complex64>> {
    if spec.boundary != Boundary::Periodic {
        return Err(Error::InvalidChain("momentum blocks require periodic boundaries".into()));
    }
    if spec.sites != sector.sites() {
        return Err(Error::DimensionMismatch { expected: spec.sites, found: sector.sites() });
    }
    let rows = hilbert::hamiltonian_rows(spec)?;
    let map = TranslationMap::new(spec.sites);
    Ok(sector_matrix(&rows, sector, sector, &map))
}

/// Eigenpairs of one sector, vectors in that sector's momentum basis.
#[derive(Debug, Clone)]
pub struct SectorEigen {
    pub sector: MomentumSector,
    pub energies: Vec<f64>,
    pub vectors: Array2<Complex64>,
}

impl SectorEigen {
    pub fn eta(&self) -> i32 {
        self.sector.eta
    }
}

/// Level in the flattened, energy-sorted spectrum of a block system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level {
    pub energy: f64,
    pub eta: i32,
    pub sector: usize,
    pub index: usize,
}

/// Sector-by-sector diagonalization of the periodic Hamiltonian.
#[derive(Debug, Clone)]
pub struct BlockEigenSystem {
    pub chain: ChainSpec,
    pub sectors: Vec<SectorEigen>,
    map: TranslationMap,
}

impl BlockEigenSystem {
    pub fn new(chain: &ChainSpec) -> Result<Self> {
        if chain.boundary != Boundary::Periodic {
            return Err(Error::InvalidChain("momentum blocks require periodic boundaries".into()));
        }
        chain.validate()?;
        let map = TranslationMap::new(chain.sites);
        let table = Arc::new(OrbitTable::new(&map));
        let sectors = sectors_from_table(table);
        let rows = hilbert::hamiltonian_rows(chain)?;
        let solved: Result<Vec<SectorEigen>> = sectors
            .into_par_iter()
            .map(|sector| {
                let block = sector_matrix(&rows, &sector, &sector, &map);
                let (energies, vectors) = linalg::hermitian_eigen(block)?;
                Ok(SectorEigen { sector, energies, vectors })
            })
            .collect();
        Ok(Self { chain: *chain, sectors: solved?, map })
    }

    /// Assemble from precomputed sector eigenpairs (e.g. from a cache).
    pub fn from_parts(chain: &ChainSpec, parts: Vec<(Vec<f64>, Array2<Complex64>)>) -> Result<Self> {
        let sectors = build_momentum_sectors(chain.sites);
        if parts.len() != sectors.len() {
            return Err(Error::DimensionMismatch { expected: sectors.len(), found: parts.len() });
        }
        let mut out = Vec::with_capacity(parts.len());
        for (sector, (energies, vectors)) in sectors.into_iter().zip(parts) {
            let d = sector.dimension();
            if energies.len() != d || vectors.dim() != (d, d) {
                return Err(Error::DimensionMismatch { expected: d, found: energies.len() });
            }
            out.push(SectorEigen { sector, energies, vectors });
        }
        Ok(Self { chain: *chain, sectors: out, map: TranslationMap::new(chain.sites) })
    }

    pub fn sites(&self) -> usize {
        self.chain.sites
    }

    pub fn dimension(&self) -> usize {
        self.map.dimension()
    }

    pub fn translation(&self) -> &TranslationMap {
        &self.map
    }

    pub fn sector_index(&self, eta: i32) -> Option<usize> {
        self.sectors.iter().position(|s| s.eta() == eta)
    }

    /// All levels sorted by energy (ties by sector then index).
    pub fn levels(&self) -> Vec<Level> {
        let mut out: Vec<Level> = self
            .sectors
            .iter()
            .enumerate()
            .flat_map(|(si, s)| {
                s.energies.iter().enumerate().map(move |(i, &energy)| Level {
                    energy,
                    eta: s.eta(),
                    sector: si,
                    index: i,
                })
            })
            .collect();
        out.sort_by(|a, b| a.energy.total_cmp(&b.energy).then(a.sector.cmp(&b.sector)).then(a.index.cmp(&b.index)));
        out
    }

    pub fn sorted_energies(&self) -> Vec<f64> {
        self.levels().into_iter().map(|l| l.energy).collect()
    }

    /// Eigenvectors of sector `s` in the product basis (`D x d_s`).
    pub fn lifted_vectors(&self, s: usize) -> Array2<Complex64> {
        self.sectors[s].sector.lift(&self.sectors[s].vectors, &self.map)
    }

    /// Momentum-basis matrices `<a_i|O|b_j>` for every bra sector `a` and
    /// the given ket sector `b`.
    pub fn momentum_columns(&self, op: &RowOperator, ket: usize) -> Vec<Array2<Complex64>> {
        let bras: Vec<MomentumSector> = self.sectors.iter().map(|s| s.sector.clone()).collect();
        sector_columns(op, &self.sectors[ket].sector, &bras, &self.map)
    }

    /// Eigenbasis elements `<E_m, k_a| O |E_n, k_b>` for all sectors `a`.
    pub fn eigenbasis_columns(&self, op: &RowOperator, ket: usize) -> Vec<Array2<Complex64>> {
        let w_b = &self.sectors[ket].vectors;
        self.momentum_columns(op, ket)
            .into_iter()
            .enumerate()
            .map(|(a, m)| adjoint(&self.sectors[a].vectors).dot(&m.dot(w_b)))
            .collect()
    }

    /// Eigenbasis block between sectors `a` (rows) and `b` (columns).
    pub fn eigenbasis_block(&self, op: &RowOperator, a: usize, b: usize) -> Array2<Complex64> {
        let m = sector_matrix(op, &self.sectors[a].sector, &self.sectors[b].sector, &self.map);
        adjoint(&self.sectors[a].vectors).dot(&m.dot(&self.sectors[b].vectors))
    }

    /// Largest `|H v - E v|` and orthonormality defect over all sectors.
    pub fn residuals(&self) -> Result<(f64, f64)> {
        let rows = hilbert::hamiltonian_rows(&self.chain)?;
        let mut recon = 0.0f64;
        let mut ortho = 0.0f64;
        for s in &self.sectors {
            let h = sector_matrix(&rows, &s.sector, &s.sector, &self.map);
            let hv = h.dot(&s.vectors);
            for (k, &e) in s.energies.iter().enumerate() {
                for r in 0..hv.nrows() {
                    recon = recon.max((hv[[r, k]] - s.vectors[[r, k]] * e).norm());
                }
            }
            ortho = ortho.max(linalg::orthonormality_residual_complex(s.vectors.view()));
        }
        Ok((recon, ortho))
    }
}

pub(crate) fn adjoint(m: &Array2<Complex64>) -> Array2<Complex64> {
    m.t().mapv(|z| z.conj())
}

/// Result of checking `O^l_mn = O^j_mn e^(i (l-j)(k_m - k_n))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseCheck {
    pub max_residual: f64,
    /// Largest relative spread of `|O^j_mn|` vs `|O^l_mn|` on pairs above
    /// the noise floor.
    pub max_modulus_spread: f64,
    pub pairs_checked: usize,
    pub pairs_excluded: usize,
}

/// Flags states sharing a near-degenerate cluster within their own sector.
fn degenerate_flags(energies: &[f64], tol: f64) -> Vec<bool> {
    let n = energies.len();
    let mut flags = vec![false; n];
    for i in 1..n {
        if energies[i] - energies[i - 1] < tol {
            flags[i] = true;
            flags[i - 1] = true;
        }
    }
    flags
}

/// Relative gap below which eigenvectors are treated as gauge-ambiguous.
pub const DEGENERACY_TOLERANCE: f64 = 1e-10;

/// Compares matrix elements of the local operator at sites `j` and `l`
/// between sectors `eta_m` (rows) and `eta_n` (columns).
pub fn verify_phase_relation(
    system: &BlockEigenSystem,
    support: Support,
    axis: Axis,
    j: usize,
    l: usize,
    eta_m: i32,
    eta_n: i32,
) -> Result<PhaseCheck> {
    let a = system
        .sector_index(eta_m)
        .ok_or_else(|| Error::MissingData(format!("no sector eta = {eta_m}")))?;
    let b = system
        .sector_index(eta_n)
        .ok_or_else(|| Error::MissingData(format!("no sector eta = {eta_n}")))?;
    let build = |site| {
        let spec = ObservableSpec::Local { support, axis, site };
        hilbert::observable_rows(&spec, &system.chain)
    };
    let oj = system.eigenbasis_block(&build(j)?, a, b);
    let ol = system.eigenbasis_block(&build(l)?, a, b);

    let all = system.sorted_energies();
    let width = all.last().copied().unwrap_or(0.0) - all.first().copied().unwrap_or(0.0);
    let tol = DEGENERACY_TOLERANCE * width.max(f64::MIN_POSITIVE);
    let flag_m = degenerate_flags(&system.sectors[a].energies, tol);
    let flag_n = degenerate_flags(&system.sectors[b].energies, tol);

    let dk = momentum(eta_m, system.sites()) - momentum(eta_n, system.sites());
    let phase = Complex64::from_polar(1.0, (l as f64 - j as f64) * dk);
    let mut check = PhaseCheck { max_residual: 0.0, max_modulus_spread: 0.0, pairs_checked: 0, pairs_excluded: 0 };
    for m in 0..oj.nrows() {
        for n in 0..oj.ncols() {
            if flag_m[m] || flag_n[n] {
                check.pairs_excluded += 1;
                continue;
            }
            check.pairs_checked += 1;
            let r = (ol[[m, n]] - oj[[m, n]] * phase).norm();
            check.max_residual = check.max_residual.max(r);
            let (x, y) = (oj[[m, n]].norm(), ol[[m, n]].norm());
            if x.max(y) > 1e-6 {
                check.max_modulus_spread = check.max_modulus_spread.max((x - y).abs() / x.max(y));
            }
        }
    }
    Ok(check)
}

/// Largest `|O_mn|` between distinct sectors for a translation average.
pub fn cross_sector_max(system: &BlockEigenSystem, obs: &ObservableSpec) -> Result<f64> {
    let rows = hilbert::observable_rows(obs, &system.chain)?;
    let mut worst = 0.0f64;
    for b in 0..system.sectors.len() {
        for (a, block) in system.eigenbasis_columns(&rows, b).into_iter().enumerate() {
            if a != b {
                worst = block.iter().fold(worst, |w, z| w.max(z.norm()));
            }
        }
    }
    Ok(worst)
}

/// Sorted union of sector spectra against a reference spectrum.
pub fn spectrum_deviation(system: &BlockEigenSystem, reference: &[f64]) -> Result<f64> {
    let mine = system.sorted_energies();
    if mine.len() != reference.len() {
        return Err(Error::DimensionMismatch { expected: reference.len(), found: mine.len() });
    }
    Ok(mine.iter().zip(reference).fold(0.0f64, |w, (a, b)| w.max((a - b).abs())))
}

/// Dense `D x D` unitary whose columns are all lifted eigenvectors, in the
/// order of [`BlockEigenSystem::levels`].
pub fn lifted_basis(system: &BlockEigenSystem) -> Array2<Complex64> {
    let d = system.dimension();
    let mut out = Array2::<Complex64>::zeros((d, d));
    let lifted: Vec<Array2<Complex64>> = (0..system.sectors.len()).map(|s| system.lifted_vectors(s)).collect();
    for (col, level) in system.levels().iter().enumerate() {
        out.slice_mut(s![.., col]).assign(&lifted[level.sector].column(level.index));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{build_hamiltonian, build_observable};
    use std::collections::BTreeMap;

    fn trits(mut idx: usize, sites: usize) -> Vec<usize> {
        let mut t = vec![0; sites];
        for k in (0..sites).rev() {
            t[k] = idx % 3;
            idx /= 3;
        }
        t
    }

    #[test]
    fn translation_shifts_left() {
        let map = TranslationMap::new(3);
        for idx in 0..27 {
            let t = trits(idx, 3);
            assert_eq!(trits(map.apply(idx), 3), vec![t[1], t[2], t[0]]);
        }
    }

    #[test]
    fn translation_power_is_identity_and_bijective() {
        for sites in 1..=6 {
            let map = TranslationMap::new(sites);
            let mut seen = vec![false; map.dimension()];
            for idx in 0..map.dimension() {
                let mut x = idx;
                for _ in 0..sites {
                    x = map.apply(x);
                }
                assert_eq!(x, idx);
                seen[map.apply(idx)] = true;
            }
            assert!(seen.into_iter().all(|s| s));
        }
    }

    #[test]
    fn translation_commutes_with_periodic_hamiltonian() {
        let h = build_hamiltonian(&ChainSpec::periodic(4)).unwrap();
        let map = TranslationMap::new(4);
        let conj = map.conjugate(&h.matrix);
        let diff = (&conj - &h.matrix).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-12);
    }

    #[test]
    fn conjugation_moves_local_operator_one_site() {
        let chain = ChainSpec::periodic(3);
        let map = TranslationMap::new(3);
        for j in 1..=3 {
            let oj = build_observable(&ObservableSpec::local_site(Axis::X, j), &chain).unwrap();
            let next = build_observable(&ObservableSpec::local_site(Axis::X, j % 3 + 1), &chain).unwrap();
            assert_eq!(map.conjugate(&oj.matrix), next.matrix);
        }
    }

    /// Independent count: enumerate every configuration, find its cycle
    /// length by brute force, and tally compatible orbits per eta.
    fn brute_force_dims(sites: usize) -> BTreeMap<i32, usize> {
        let dim = 3usize.pow(sites as u32);
        let mut seen = vec![false; dim];
        let mut cycles = Vec::new();
        for idx in 0..dim {
            if seen[idx] {
                continue;
            }
            let t = trits(idx, sites);
            let mut c = 0;
            let mut members = Vec::new();
            for shift in 1..=sites {
                let rotated: Vec<usize> = (0..sites).map(|i| t[(i + shift) % sites]).collect();
                let id = rotated.iter().fold(0, |a, &d| a * 3 + d);
                members.push(id);
                if rotated == t {
                    c = shift;
                    break;
                }
            }
            for m in members {
                seen[m] = true;
            }
            cycles.push(c);
        }
        eta_range(sites)
            .map(|eta| {
                let n = cycles.iter().filter(|&&c| (eta * c as i32).rem_euclid(sites as i32) == 0).count();
                (eta, n)
            })
            .collect()
    }

    #[test]
    fn sector_dimensions_three_sites() {
        let sectors = build_momentum_sectors(3);
        let dims: BTreeMap<i32, usize> = sectors.iter().map(|s| (s.eta, s.dimension())).collect();
        assert_eq!(dims, BTreeMap::from([(-1, 8), (0, 11), (1, 8)]));
        assert_eq!(brute_force_dims(3), dims);
    }

    #[test]
    fn sector_dimensions_match_enumeration() {
        for sites in 3..=7 {
            let sectors = build_momentum_sectors(sites);
            let dims: BTreeMap<i32, usize> = sectors.iter().map(|s| (s.eta, s.dimension())).collect();
            assert_eq!(dims, brute_force_dims(sites), "L = {sites}");
            assert_eq!(dims.values().sum::<usize>(), 3usize.pow(sites as u32));
        }
    }

    #[test]
    fn eta_ranges() {
        assert_eq!(eta_range(4).collect::<Vec<_>>(), vec![-1, 0, 1, 2]);
        assert_eq!(eta_range(5).collect::<Vec<_>>(), vec![-2, -1, 0, 1, 2]);
        assert_eq!(momentum_transfer(1, -1, 4), 2);
        assert_eq!(momentum_transfer(2, -2, 5), 1);
        assert_eq!(momentum_transfer(3, 0, 7), 3);
    }

    #[test]
    fn uniform_configurations_only_at_zero_momentum() {
        for sites in 3..=6 {
            let sectors = build_momentum_sectors(sites);
            let dim = 3usize.pow(sites as u32);
            let uniform = [0, dim / 2, dim - 1];
            for s in &sectors {
                for (rep, c) in s.representatives() {
                    if uniform.contains(&rep) {
                        assert_eq!(c, 1);
                        assert_eq!(s.eta, 0);
                    }
                }
            }
        }
    }

    #[test]
    fn momentum_states_are_orthonormal_translation_eigenstates() {
        let sites = 4;
        let map = TranslationMap::new(sites);
        let sectors = build_momentum_sectors(sites);
        let d = map.dimension();
        let mut all = Vec::new();
        for s in &sectors {
            let eye = Array2::<Complex64>::eye(s.dimension());
            let lifted = s.lift(&eye, &map);
            // T |a,k> = e^{-ik} |a,k>
            let expected = Complex64::from_polar(1.0, -s.momentum());
            for c in 0..lifted.ncols() {
                let mut shifted = vec![Complex64::new(0.0, 0.0); d];
                for x in 0..d {
                    shifted[map.apply(x)] = lifted[[x, c]];
                }
                for x in 0..d {
                    assert!((shifted[x] - expected * lifted[[x, c]]).norm() < 1e-12);
                }
            }
            all.push(lifted);
        }
        let stacked = ndarray::concatenate(ndarray::Axis(1), &all.iter().map(|a| a.view()).collect::<Vec<_>>()).unwrap();
        assert!(linalg::orthonormality_residual_complex(stacked.view()) < 1e-10);
    }

    #[test]
    fn block_hamiltonian_is_hermitian() {
        let chain = ChainSpec::periodic(3);
        for s in build_momentum_sectors(3) {
            let h = block_hamiltonian(&chain, &s).unwrap();
            assert!(linalg::hermiticity_residual(h.view()) < 1e-12);
        }
        assert!(block_hamiltonian(&ChainSpec::open(3), &build_momentum_sectors(3)[0]).is_err());
    }

    #[test]
    fn block_matrix_matches_lifted_projection() {
        let chain = ChainSpec::periodic(4);
        let map = TranslationMap::new(4);
        let h = build_hamiltonian(&chain).unwrap();
        let hc = h.matrix.mapv(|v| Complex64::new(v, 0.0));
        let rows = h.rows();
        let sectors = build_momentum_sectors(4);
        for a in &sectors {
            for b in &sectors {
                let fast = sector_matrix(&rows, a, b, &map);
                let la = a.lift(&Array2::eye(a.dimension()), &map);
                let lb = b.lift(&Array2::eye(b.dimension()), &map);
                let slow = adjoint(&la).dot(&hc.dot(&lb));
                let diff = (&fast - &slow).iter().fold(0.0f64, |m, z| m.max(z.norm()));
                assert!(diff < 1e-12);
            }
        }
    }

    #[test]
    fn block_spectra_union_matches_dense() {
        let chain = ChainSpec::periodic(4);
        let (dense, _) = linalg::symmetric_eigen(build_hamiltonian(&chain).unwrap().matrix).unwrap();
        let system = BlockEigenSystem::new(&chain).unwrap();
        assert!(spectrum_deviation(&system, &dense).unwrap() < 1e-9);
        let (recon, ortho) = system.residuals().unwrap();
        assert!(recon < 1e-10 && ortho < 1e-10);
    }

    #[test]
    fn opposite_momenta_have_identical_spectra() {
        let system = BlockEigenSystem::new(&ChainSpec::periodic(3)).unwrap();
        let plus = &system.sectors[system.sector_index(1).unwrap()].energies;
        let minus = &system.sectors[system.sector_index(-1).unwrap()].energies;
        for (a, b) in plus.iter().zip(minus) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn phase_relation_small_chain() {
        let system = BlockEigenSystem::new(&ChainSpec::periodic(4)).unwrap();
        for (em, en) in [(0, 0), (1, 0), (1, 2), (-1, 1)] {
            for (j, l) in [(1, 2), (2, 4), (3, 1)] {
                let check = verify_phase_relation(&system, Support::Site, Axis::X, j, l, em, en).unwrap();
                assert!(check.max_residual < 1e-8, "{em} {en} {j} {l}: {check:?}");
                assert!(check.max_modulus_spread < 1e-8);
                assert!(check.pairs_checked > 0);
            }
        }
    }

    #[test]
    fn translation_average_has_no_cross_sector_elements() {
        let system = BlockEigenSystem::new(&ChainSpec::periodic(4)).unwrap();
        let worst = cross_sector_max(&system, &ObservableSpec::average(Support::Site, Axis::X)).unwrap();
        assert!(worst < 1e-10);
        let local = cross_sector_max(&system, &ObservableSpec::local_site(Axis::X, 2)).unwrap();
        assert!(local > 1e-3);
    }

    #[test]
    fn lifted_basis_diagonalizes_dense_hamiltonian() {
        let chain = ChainSpec::periodic(3);
        let system = BlockEigenSystem::new(&chain).unwrap();
        let u = lifted_basis(&system);
        let h = build_hamiltonian(&chain).unwrap().matrix.mapv(|v| Complex64::new(v, 0.0));
        let d = adjoint(&u).dot(&h.dot(&u));
        let energies = system.sorted_energies();
        for i in 0..d.nrows() {
            for j in 0..d.ncols() {
                let target = if i == j { energies[i] } else { 0.0 };
                assert!((d[[i, j]] - Complex64::new(target, 0.0)).norm() < 1e-10);
            }
        }
    }
}
