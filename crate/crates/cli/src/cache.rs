//! On-disk eigensystem cache.
//!
//! One file per (chain, sector). All integers and floats little-endian:
//!
//! | offset | size | field                                               |
//! |--------|------|-----------------------------------------------------|
//! | 0      | 8    | magic `S1ETHEIG`                                    |
//! | 8      | 4    | endianness marker `0x01020304` (bytes `04 03 02 01`) |
//! | 12     | 4    | format version (`1`)                                |
//! | 16     | 1    | kind: `0` real full space, `1` complex momentum sector |
//! | 17     | 3    | zero                                                |
//! | 20     | 4    | momentum label `eta` (i32, `0` for full space)      |
//! | 24     | 8    | basis dimension `rows` (u64)                        |
//! | 32     | 8    | eigenpair count `count` (u64)                       |
//! | 40     | 32   | SHA-256 of the payload                              |
//! | 72     | ...  | payload                                             |
//!
//! Payload: `count` energies, then the eigenvector matrix row-major
//! (`rows x count`), complex entries as interleaved `(re, im)`.
//!
//! The file name is the hex SHA-256 of the chain parameters (bitwise),
//! sector label, basis conventions and crate version.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis as NdAxis};
use num_complex::Complex64;
use sha2::{Digest, Sha256};
use spin1_eth::hilbert::{self, ChainSpec};
use spin1_eth::linalg::{self, MemoryCap};
use spin1_eth::spectra::{self, EigenSystem};
use spin1_eth::symmetry::{self, BlockEigenSystem, MomentumSector};

use crate::error::{CliError, Result};

const MAGIC: &[u8; 8] = b"S1ETHEIG";
const ENDIAN_MARKER: u32 = 0x0102_0304;
const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 72;
const SAMPLED_PAIRS: usize = 8;
const BASIS_CONVENTION: &str =
    "index=sum t_j 3^(L-j);t=0,1,2<->Sz=+1,0,-1;T=left-shift;|a,k>=c^-1/2 sum_r e^(ikr) T^r|a>";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SectorLabel {
    Full,
    Momentum(i32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CacheStatus {
    Disabled,
    Hit,
    Miss,
    /// Entry existed but failed validation and was rebuilt.
    Recomputed(String),
}

#[derive(Debug, Clone)]
pub struct EigenCache {
    dir: PathBuf,
}

enum Payload {
    Real(Array2<f64>),
    Complex(Array2<Complex64>),
}

struct Entry {
    eta: i32,
    energies: Vec<f64>,
    vectors: Payload,
}

pub fn cache_key(chain: &ChainSpec, label: SectorLabel) -> String {
    let sector = match label {
        SectorLabel::Full => "full".to_string(),
        SectorLabel::Momentum(eta) => format!("eta={eta}"),
    };
    let description = format!(
        "L={};bc={};J={:016x};hx={:016x};hz={:016x};edge={:016x};sector={sector};basis={BASIS_CONVENTION};version={}",
        chain.sites,
        chain.boundary,
        chain.coupling.to_bits(),
        chain.transverse_field.to_bits(),
        chain.longitudinal_field.to_bits(),
        chain.edge_field.to_bits(),
        env!("CARGO_PKG_VERSION"),
    );
    hex(&Sha256::digest(description.as_bytes()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl EigenCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn path(&self, chain: &ChainSpec, label: SectorLabel) -> PathBuf {
        self.dir.join(format!("{}.eig", cache_key(chain, label)))
    }

    fn store(&self, path: &Path, entry: &Entry) -> Result<()> {
        let (kind, rows, count) = match &entry.vectors {
            Payload::Real(v) => (0u8, v.nrows(), v.ncols()),
            Payload::Complex(v) => (1u8, v.nrows(), v.ncols()),
        };
        let mut payload = Vec::with_capacity(8 * (count + rows * count * (1 + kind as usize)));
        for e in &entry.energies {
            payload.extend_from_slice(&e.to_le_bytes());
        }
        match &entry.vectors {
            Payload::Real(v) => v.iter().for_each(|x| payload.extend_from_slice(&x.to_le_bytes())),
            Payload::Complex(v) => v.iter().for_each(|z| {
                payload.extend_from_slice(&z.re.to_le_bytes());
                payload.extend_from_slice(&z.im.to_le_bytes());
            }),
        }
        let mut header = Vec::with_capacity(HEADER_LEN);
        header.extend_from_slice(MAGIC);
        header.extend_from_slice(&ENDIAN_MARKER.to_le_bytes());
        header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        header.extend_from_slice(&[kind, 0, 0, 0]);
        header.extend_from_slice(&entry.eta.to_le_bytes());
        header.extend_from_slice(&(rows as u64).to_le_bytes());
        header.extend_from_slice(&(count as u64).to_le_bytes());
        header.extend_from_slice(&Sha256::digest(&payload));
        debug_assert_eq!(header.len(), HEADER_LEN);

        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(&header)?;
        tmp.write_all(&payload)?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| CliError::Io(e.error))?;
        Ok(())
    }

    fn load(&self, path: &Path, kind: u8, eta: i32, rows: usize) -> std::result::Result<Entry, String> {
        let bytes = fs::read(path).map_err(|e| e.to_string())?;
        if bytes.len() < HEADER_LEN {
            return Err("truncated header".into());
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        if &bytes[..8] != MAGIC {
            return Err("bad magic".into());
        }
        if u32_at(8) != ENDIAN_MARKER {
            return Err("endianness marker mismatch".into());
        }
        if u32_at(12) != FORMAT_VERSION {
            return Err(format!("format version {}", u32_at(12)));
        }
        if bytes[16] != kind || i32::from_le_bytes(bytes[20..24].try_into().unwrap()) != eta {
            return Err("kind or sector label mismatch".into());
        }
        let (file_rows, count) = (u64_at(24) as usize, u64_at(32) as usize);
        if file_rows != rows || count != rows {
            return Err(format!("dimensions {file_rows}x{count}, expected {rows}x{rows}"));
        }
        let payload = &bytes[HEADER_LEN..];
        let scalars = if kind == 0 { 1 } else { 2 };
        if payload.len() != 8 * (count + rows * count * scalars) {
            return Err("payload length mismatch".into());
        }
        if Sha256::digest(payload).as_slice() != &bytes[40..72] {
            return Err("checksum mismatch".into());
        }
        let mut floats = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let energies: Vec<f64> = floats.by_ref().take(count).collect();
        let vectors = if kind == 0 {
            Payload::Real(Array2::from_shape_vec((rows, count), floats.collect()).map_err(|e| e.to_string())?)
        } else {
            let values: Vec<f64> = floats.collect();
            let z = values.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
            Payload::Complex(Array2::from_shape_vec((rows, count), z).map_err(|e| e.to_string())?)
        };
        Ok(Entry { eta, energies, vectors })
    }
}

fn sample_indices(count: usize) -> Vec<usize> {
    let n = SAMPLED_PAIRS.min(count);
    if n <= 1 {
        return vec![0; n];
    }
    (0..n).map(|i| i * (count - 1) / (n - 1)).collect()
}

fn residual_tolerance(energies: &[f64]) -> f64 {
    let scale = energies.iter().fold(1.0f64, |m, e| m.max(e.abs()));
    1e-9 * scale
}

fn dense_residual(chain: &ChainSpec, energies: &[f64], vectors: &Array2<f64>) -> Result<f64> {
    let h = hilbert::hamiltonian_rows(chain)?;
    let idx = sample_indices(energies.len());
    let v = vectors.select(NdAxis(1), &idx);
    let hv = h.apply(v.view());
    let mut worst = 0.0f64;
    for (c, &i) in idx.iter().enumerate() {
        let r = (&hv.column(c) - &(&v.column(c) * energies[i])).mapv(|x| x * x).sum().sqrt();
        worst = worst.max(r);
    }
    Ok(worst)
}

fn sector_residual(block: &Array2<Complex64>, energies: &[f64], vectors: &Array2<Complex64>) -> f64 {
    let idx = sample_indices(energies.len());
    let v = vectors.select(NdAxis(1), &idx);
    let hv = block.dot(&v);
    let mut worst = 0.0f64;
    for (c, &i) in idx.iter().enumerate() {
        let r = (&hv.column(c) - &(&v.column(c) * Complex64::new(energies[i], 0.0)))
            .mapv(|z| z.norm_sqr())
            .sum()
            .sqrt();
        worst = worst.max(r);
    }
    worst
}

/// Full-space eigensystem, from the cache when a valid entry exists.
pub fn dense_eigensystem(
    chain: &ChainSpec,
    cache: Option<&EigenCache>,
    cap: MemoryCap,
) -> Result<(EigenSystem, CacheStatus)> {
    let Some(cache) = cache else {
        return Ok((spectra::diagonalize_chain(chain, cap)?, CacheStatus::Disabled));
    };
    let d = chain.dimension();
    cap.check(d, 4, 8)?;
    let path = cache.path(chain, SectorLabel::Full);
    let mut status = CacheStatus::Miss;
    if path.exists() {
        match cache.load(&path, 0, 0, d) {
            Ok(Entry { energies, vectors: Payload::Real(vectors), .. }) => {
                let residual = dense_residual(chain, &energies, &vectors)?;
                if residual <= residual_tolerance(&energies) {
                    log::debug!("cache hit {}", path.display());
                    return Ok((EigenSystem { chain: Some(*chain), energies, vectors }, CacheStatus::Hit));
                }
                status = CacheStatus::Recomputed(format!("sampled eigenpair residual {residual:.3e}"));
            }
            Ok(_) => status = CacheStatus::Recomputed("unexpected payload kind".into()),
            Err(reason) => status = CacheStatus::Recomputed(reason),
        }
        if let CacheStatus::Recomputed(reason) = &status {
            log::warn!("cache entry {} rejected ({reason}); recomputing", path.display());
        }
    }
    let eig = spectra::diagonalize_chain(chain, cap)?;
    let entry = Entry { eta: 0, energies: eig.energies.clone(), vectors: Payload::Real(eig.vectors.clone()) };
    cache.store(&path, &entry)?;
    Ok((eig, status))
}

/// Momentum-block eigensystem of a periodic chain, sector by sector
/// through the cache. The returned status is the worst over sectors.
pub fn block_eigensystem(
    chain: &ChainSpec,
    cache: Option<&EigenCache>,
    cap: MemoryCap,
) -> Result<(BlockEigenSystem, CacheStatus)> {
    let largest = symmetry::build_momentum_sectors(chain.sites)
        .iter()
        .map(MomentumSector::dimension)
        .max()
        .unwrap_or(0);
    cap.check(largest, 6, 16)?;
    let Some(cache) = cache else {
        return Ok((BlockEigenSystem::new(chain)?, CacheStatus::Disabled));
    };
    chain.validate()?;
    let mut parts = Vec::new();
    let mut overall = CacheStatus::Hit;
    for sector in symmetry::build_momentum_sectors(chain.sites) {
        let label = SectorLabel::Momentum(sector.eta);
        let path = cache.path(chain, label);
        let block = symmetry::block_hamiltonian(chain, &sector)?;
        let mut status = CacheStatus::Miss;
        if path.exists() {
            match cache.load(&path, 1, sector.eta, sector.dimension()) {
                Ok(Entry { energies, vectors: Payload::Complex(vectors), .. }) => {
                    let residual = sector_residual(&block, &energies, &vectors);
                    if residual <= residual_tolerance(&energies) {
                        parts.push((energies, vectors));
                        continue;
                    }
                    status = CacheStatus::Recomputed(format!("sampled eigenpair residual {residual:.3e}"));
                }
                Ok(_) => status = CacheStatus::Recomputed("unexpected payload kind".into()),
                Err(reason) => status = CacheStatus::Recomputed(reason),
            }
            if let CacheStatus::Recomputed(reason) = &status {
                log::warn!("cache entry {} rejected ({reason}); recomputing", path.display());
            }
        }
        let (energies, vectors) = linalg::hermitian_eigen(block)?;
        let entry = Entry { eta: sector.eta, energies, vectors: Payload::Complex(vectors) };
        cache.store(&path, &entry)?;
        let Payload::Complex(vectors) = entry.vectors else { unreachable!() };
        parts.push((entry.energies, vectors));
        overall = match (&overall, status) {
            (CacheStatus::Recomputed(_), _) => overall,
            (_, s @ CacheStatus::Recomputed(_)) => s,
            (_, _) => CacheStatus::Miss,
        };
    }
    Ok((BlockEigenSystem::from_parts(chain, parts)?, overall))
}
