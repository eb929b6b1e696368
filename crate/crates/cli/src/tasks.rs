use std::path::PathBuf;
use std::time::Instant;

use spin1_eth::eth::{self, BlockSelection, ChannelLabel, SpectralFunction, SpectralKind};
use spin1_eth::hilbert::{self, Axis, Boundary, ChainSpec, ObservableSpec, RowOperator};
use spin1_eth::spectra::{self, EigenSystem};
use spin1_eth::symmetry::{self, BlockEigenSystem};

use crate::cache::{self, CacheStatus, EigenCache};
use crate::config::{RunConfig, Task};
use crate::error::{CliError, Result};
use crate::table::ResultTable;

/// Tolerance for sum-rule, hermiticity and partition invariants.
pub const INVARIANT_TOLERANCE: f64 = 1e-10;

/// Runs the configured task and writes its tables under `config.out`.
pub fn run(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let start = Instant::now();
    let outputs = match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?
            .install(|| execute(config)),
        None => execute(config),
    };
    let (tables, failure) = match outputs {
        Ok(tables) => (tables, None),
        Err(Failure { tables, error }) => (tables, Some(error)),
    };
    std::fs::create_dir_all(&config.out)?;
    let mut written = Vec::new();
    let wall = start.elapsed().as_secs_f64();
    for (name, mut table) in tables {
        let mut header: Vec<(String, String)> = vec![
            ("version".into(), format!("spin1-eth v{}", env!("CARGO_PKG_VERSION"))),
            ("wall_time_s".into(), format!("{wall:.3}")),
        ];
        header.extend(config.echo());
        header.append(&mut table.metadata);
        table.metadata = header;
        let path = config.out.join(name);
        table.write(&path)?;
        written.push(path);
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(written),
    }
}

/// Error raised after some tables were produced; they are still written.
struct Failure {
    tables: Vec<(String, ResultTable)>,
    error: CliError,
}

impl<E: Into<CliError>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure { tables: Vec::new(), error: e.into() }
    }
}

type Outputs = std::result::Result<Vec<(String, ResultTable)>, Failure>;

fn execute(config: &RunConfig) -> Outputs {
    match config.task {
        Task::DiagScatter => diag_scatter(config),
        Task::ThermalScan => thermal_scan(config),
        Task::FitScaling => fit_scaling(config),
        Task::Spectral => spectral(config),
        Task::DistanceDecomp => distance_decomp(config),
        Task::MomentumDecomp => momentum_decomp(config),
        Task::ExtractF => extract_f(config),
        Task::Verify => verify(config),
    }
}

fn open_cache(config: &RunConfig) -> Result<Option<EigenCache>> {
    config.cache_dir.as_ref().map(EigenCache::new).transpose()
}

fn status_label(status: &CacheStatus) -> String {
    match status {
        CacheStatus::Disabled => "disabled".into(),
        CacheStatus::Hit => "hit".into(),
        CacheStatus::Miss => "miss".into(),
        CacheStatus::Recomputed(reason) => format!("recomputed ({reason})"),
    }
}

fn dense(config: &RunConfig, chain: &ChainSpec) -> Result<(EigenSystem, String)> {
    let cache = open_cache(config)?;
    let (eig, status) = cache::dense_eigensystem(chain, cache.as_ref(), config.memory_cap)?;
    Ok((eig, status_label(&status)))
}

fn blocks(config: &RunConfig, chain: &ChainSpec) -> Result<(BlockEigenSystem, String)> {
    let cache = open_cache(config)?;
    let (system, status) = cache::block_eigensystem(chain, cache.as_ref(), config.memory_cap)?;
    Ok((system, status_label(&status)))
}

fn require_periodic(config: &RunConfig) -> Result<()> {
    if config.chain.boundary != Boundary::Periodic {
        return Err(CliError::Usage(format!("{} needs --bc pbc", config.task.name())));
    }
    Ok(())
}

fn sigma_for(config: &RunConfig, energies: &[f64]) -> Result<(f64, f64)> {
    let omega_h = spectra::heisenberg_frequency(energies)?;
    Ok((omega_h, config.sigma.unwrap_or(config.sigma_factor * omega_h)))
}

/// `Tr(O^2) / D` from the product-basis rows.
fn trace_square_density(op: &RowOperator) -> f64 {
    let d = op.dimension();
    (0..d).flat_map(|r| op.row(r)).map(|(_, v)| v * v).sum::<f64>() / d as f64
}

/// Dense eigenbasis elements with the sum-rule and hermiticity invariants enforced.
fn checked_elements(
    config: &RunConfig,
    obs: &ObservableSpec,
    eig: &EigenSystem,
    table: &mut ResultTable,
    tag: &str,
) -> Result<eth::MatrixElementSet> {
    let rows = hilbert::observable_rows(obs, &config.chain)?;
    let set = eth::matrix_elements_from_rows(&rows, eig, config.memory_cap)?;
    let sum_rule = (set.hilbert_schmidt() - trace_square_density(&rows)).abs();
    let hermiticity = set.hermiticity_residual();
    table.meta(format!("sum_rule_residual_{tag}"), format!("{sum_rule:.3e}"));
    table.meta(format!("hermiticity_residual_{tag}"), format!("{hermiticity:.3e}"));
    if sum_rule > INVARIANT_TOLERANCE || hermiticity > INVARIANT_TOLERANCE {
        return Err(CliError::Invariant(format!(
            "{obs}: sum rule residual {sum_rule:.3e}, hermiticity residual {hermiticity:.3e}"
        )));
    }
    Ok(set)
}

fn check_partition(f: &SpectralFunction, table: &mut ResultTable) -> Result<()> {
    let scale = f.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let residual = f.partition_residual();
    table.meta("partition_residual", format!("{residual:.3e}"));
    if residual > INVARIANT_TOLERANCE * scale {
        return Err(CliError::Invariant(format!("channels miss the total by {residual:.3e}")));
    }
    Ok(())
}

fn spectral_table(columns: Vec<String>, f: &SpectralFunction, extra: &[&[f64]]) -> Result<ResultTable> {
    let mut table = ResultTable::new(columns);
    for i in 0..f.omega.len() {
        let mut row = vec![f.omega[i], f.values[i]];
        row.extend(extra.iter().map(|v| v[i]));
        row.extend(f.channels.iter().map(|c| c.values[i]));
        table.push(row)?;
    }
    table.meta("omega_h", f.omega_h).meta("sigma", f.sigma);
    Ok(table)
}

fn diagonal_pair(config: &RunConfig) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, usize, String)> {
    let local = config.local_observable();
    let average = config.average_observable();
    if config.chain.boundary == Boundary::Periodic {
        let (system, status) = blocks(config, &config.chain)?;
        let levels = system.levels();
        let energies = levels.iter().map(|l| l.energy).collect();
        let dl = eth::block_diagonal(&system, &hilbert::observable_rows(&local, &config.chain)?);
        let da = eth::block_diagonal(&system, &hilbert::observable_rows(&average, &config.chain)?);
        Ok((energies, dl, da, system.dimension(), status))
    } else {
        let (eig, status) = dense(config, &config.chain)?;
        let dl = spectra::diagonal_elements(&hilbert::observable_rows(&local, &config.chain)?, &eig)?;
        let da = spectra::diagonal_elements(&hilbert::observable_rows(&average, &config.chain)?, &eig)?;
        Ok((eig.energies.clone(), dl, da, eig.dimension(), status))
    }
}

fn diag_scatter(config: &RunConfig) -> Outputs {
    let (energies, local, average, d, status) = diagonal_pair(config)?;
    let sl = eth::diagonal_scatter(&energies, &local, config.chain.sites)?;
    let sa = eth::diagonal_scatter(&energies, &average, config.chain.sites)?;
    let mut table = ResultTable::new(["energy_density", "local", "average"]);
    for (p, q) in sl.points.iter().zip(&sa.points) {
        table.push(vec![p.0, p.1, q.1])?;
    }
    table
        .meta("D", d)
        .meta("cache", status)
        .meta("local_observable", config.local_observable())
        .meta("average_observable", config.average_observable())
        .meta("fluctuation_local", sl.fluctuation)
        .meta("fluctuation_average", sa.fluctuation);
    Ok(vec![("diag_scatter.txt".into(), table)])
}

fn thermal_scan(config: &RunConfig) -> Outputs {
    let (energies, local, average, d, status) = diagonal_pair(config)?;
    let mut table = ResultTable::new(["beta", "energy", "local", "average", "log_partition"]);
    for &beta in &config.betas {
        let l = spectra::grand_canonical(&energies, &local, beta)?;
        let a = spectra::grand_canonical(&energies, &average, beta)?;
        table.push(vec![beta, l.energy, l.observable, a.observable, l.log_partition])?;
    }
    table
        .meta("D", d)
        .meta("cache", status)
        .meta("local_observable", config.local_observable())
        .meta("average_observable", config.average_observable());
    Ok(vec![("thermal_scan.txt".into(), table)])
}

fn fit_scaling(config: &RunConfig) -> Outputs {
    let beta = config.betas[0];
    let support = config.observable.support();
    let lo = config.sites_min.max(3);
    if config.chain.sites < lo + 3 {
        return Err(CliError::Usage(format!("fit-scaling needs at least 4 sizes, got {lo}..={}", config.chain.sites)).into());
    }
    let mut periodic = Vec::new();
    let mut open_local = Vec::new();
    let mut open_average = Vec::new();
    for sites in lo..=config.chain.sites {
        let pbc = ChainSpec { sites, boundary: Boundary::Periodic, edge_field: 0.0, ..config.chain };
        let obc = ChainSpec { sites, boundary: Boundary::Open, ..config.chain };
        let avg = ObservableSpec::average(support, Axis::X);
        let local = ObservableSpec::Local { support, axis: Axis::X, site: ObservableSpec::default_site(sites) };
        let (system, _) = blocks(config, &pbc)?;
        let pd = eth::block_diagonal(&system, &hilbert::observable_rows(&avg, &pbc)?);
        let pe: Vec<f64> = system.levels().iter().map(|l| l.energy).collect();
        periodic.push((sites as f64, spectra::grand_canonical(&pe, &pd, beta)?.observable));
        let (eig, _) = dense(config, &obc)?;
        let thermal = |obs: &ObservableSpec| -> Result<f64> {
            let diag = spectra::diagonal_elements(&hilbert::observable_rows(obs, &obc)?, &eig)?;
            Ok(spectra::grand_canonical(&eig.energies, &diag, beta)?.observable)
        };
        open_local.push((sites as f64, thermal(&local)?));
        open_average.push((sites as f64, thermal(&avg)?));
        log::info!("fit-scaling: L = {sites} done");
    }
    let analysis = spectra::finite_size_analysis(&periodic, &open_local, &open_average, 4)?;
    let mut table = ResultTable::new([
        "L",
        "pbc_average",
        "obc_local",
        "obc_average",
        "rel_diff_pbc_average",
        "rel_diff_obc_local",
        "rel_diff_obc_average",
    ]);
    for i in 0..periodic.len() {
        table.push(vec![
            periodic[i].0,
            periodic[i].1,
            open_local[i].1,
            open_average[i].1,
            analysis.periodic_differences[i].1,
            analysis.open_local_differences[i].1,
            analysis.open_average_differences[i].1,
        ])?;
    }
    let describe = |f: &spectra::ScalingFit| {
        format!("a={:e} b={:e} c={:e} residual={:e}", f.a, f.b, f.c, f.residual_norm)
    };
    table
        .meta("beta_used", beta)
        .meta("limit", analysis.limit)
        .meta("fit_pbc_extrapolation", describe(&analysis.periodic_fit))
        .meta("fit_pbc_rel_diff_exponential", describe(&analysis.periodic_difference_fit))
        .meta("fit_obc_local_exponential", describe(&analysis.open_local_fit))
        .meta("fit_obc_average_power", describe(&analysis.open_average_power_fit))
        .meta("fit_obc_average_exponential", describe(&analysis.open_average_exponential_fit));
    Ok(vec![("fit_scaling.txt".into(), table)])
}

fn spectral(config: &RunConfig) -> Outputs {
    let grid = config.grid.frequencies()?;
    let local = config.local_observable();
    let average = config.average_observable();
    let kind = SpectralKind::for_observable(&average, &config.chain);
    let mut meta = ResultTable::default();
    let (fl, fa, d, status) = if config.chain.boundary == Boundary::Periodic {
        let (system, status) = blocks(config, &config.chain)?;
        let (_, sigma) = sigma_for(config, &system.sorted_energies())?;
        let fl = eth::block_spectral_function(
            &system,
            &hilbert::observable_rows(&local, &config.chain)?,
            SpectralKind::Local,
            BlockSelection::All,
            sigma,
            &grid,
        )?;
        let fa = eth::block_spectral_function(
            &system,
            &hilbert::observable_rows(&average, &config.chain)?,
            kind,
            BlockSelection::All,
            sigma,
            &grid,
        )?;
        (fl, fa, system.dimension(), status)
    } else {
        let (eig, status) = dense(config, &config.chain)?;
        let (_, sigma) = sigma_for(config, &eig.energies)?;
        let set = checked_elements(config, &local, &eig, &mut meta, "local")?;
        let fl = eth::spectral_function(&set, SpectralKind::Local, sigma, &grid)?;
        drop(set);
        let set = checked_elements(config, &average, &eig, &mut meta, "trans")?;
        let fa = eth::spectral_function(&set, kind, sigma, &grid)?;
        (fl, fa, eig.dimension(), status)
    };
    let mut table = ResultTable::new(["omega", "f2_local", "f2_trans"]);
    for i in 0..grid.len() {
        table.push(vec![grid[i], fl.values[i], fa.values[i]])?;
    }
    table
        .meta("omega_h", fl.omega_h)
        .meta("sigma", fl.sigma)
        .meta("D", d)
        .meta("cache", status)
        .meta("local_observable", local)
        .meta("average_observable", average)
        .meta("average_count", kind.prefactor());
    table.metadata.extend(meta.metadata);
    Ok(vec![("spectral.txt".into(), table)])
}

fn distance_decomp(config: &RunConfig) -> Outputs {
    let grid = config.grid.frequencies()?;
    let average = config.average_observable();
    let (eig, status) = dense(config, &config.chain)?;
    let (_, sigma) = sigma_for(config, &eig.energies)?;
    let f = eth::distance_decomposition(&average, &config.chain, &eig, sigma, &grid)?;
    let mut columns = vec!["omega".to_string(), "total".to_string()];
    columns.extend(f.channels.iter().map(|c| c.label.to_string()));
    let mut table = spectral_table(columns, &f, &[])?;
    table
        .meta("D", eig.dimension())
        .meta("cache", status)
        .meta("average_observable", average)
        .meta("average_count", f.kind.prefactor());
    let failure = check_partition(&f, &mut table).err();
    finish(vec![("distance_decomp.txt".into(), table)], failure)
}

fn momentum_decomp(config: &RunConfig) -> Outputs {
    require_periodic(config)?;
    let grid = config.grid.frequencies()?;
    let local = config.local_observable();
    let (system, status) = blocks(config, &config.chain)?;
    let (_, sigma) = sigma_for(config, &system.sorted_energies())?;
    let f = eth::momentum_decomposition(&system, &local, sigma, &grid)?;
    let mut columns = vec!["omega".to_string(), "total".to_string()];
    columns.extend(f.channels.iter().map(|c| c.label.to_string()));
    let mut table = spectral_table(columns, &f, &[])?;
    table.meta("D", system.dimension()).meta("cache", status).meta("local_observable", local);
    let failure = check_partition(&f, &mut table).err();
    finish(vec![("momentum_decomp.txt".into(), table)], failure)
}

fn finish(tables: Vec<(String, ResultTable)>, failure: Option<CliError>) -> Outputs {
    match failure {
        None => Ok(tables),
        Some(error) => Err(Failure { tables, error }),
    }
}

fn extract_f(config: &RunConfig) -> Outputs {
    require_periodic(config)?;
    let local = config.local_observable();
    let (system, status) = blocks(config, &config.chain)?;
    let sites = config.chain.sites;
    let mut tables = Vec::new();
    for &(eta_m, eta_n) in &config.blocks {
        let est = eth::extract_f_function(&system, &local, eta_m, eta_n, &config.targets, config.window)?;
        let share = est.block_share(sites);
        let mut table = ResultTable::new(["log10_omega", "omega", "f2", "f2_rescaled", "pair_count"]);
        for p in &est.points {
            table.push(vec![p.log10_omega, p.omega, p.f2, share * p.f2, p.pair_count as f64])?;
        }
        table
            .meta("D", system.dimension())
            .meta("cache", status.clone())
            .meta("local_observable", local)
            .meta("eta_m", eta_m)
            .meta("eta_n", eta_n)
            .meta("momentum_transfer", ChannelLabel::MomentumTransfer(est.transfer))
            .meta("block_share", share);
        for (target, reason) in &est.omitted {
            table.meta(format!("omitted_log10_omega_{target}"), reason);
        }
        tables.push((format!("extract_f_{eta_m}_{eta_n}.txt"), table));
    }
    Ok(tables)
}

struct Check {
    name: &'static str,
    value: f64,
    tolerance: f64,
    pass: bool,
}

impl Check {
    fn below(name: &'static str, value: f64, tolerance: f64) -> Self {
        Check { name, value, tolerance, pass: value < tolerance }
    }
}

fn verify(config: &RunConfig) -> Outputs {
    let chain = config.chain;
    let local = config.local_observable();
    let average = config.average_observable();
    let mut checks = Vec::new();
    let dense_fits = config.memory_cap.check(chain.dimension(), 4, 8).is_ok();
    let dense_eig = if dense_fits { Some(dense(config, &chain)?.0) } else { None };
    if let Some(eig) = &dense_eig {
        let (recon, ortho) = eig.residuals(&hilbert::hamiltonian_rows(&chain)?);
        let width = eig.spectral_width().max(1.0);
        checks.push(Check::below("eigen reconstruction / width", recon / width, 1e-9));
        checks.push(Check::below("eigenvector orthonormality", ortho, 1e-9));
        for (tag, obs) in [("local", &local), ("average", &average)] {
            let rows = hilbert::observable_rows(obs, &chain)?;
            let set = eth::matrix_elements_from_rows(&rows, eig, config.memory_cap)?;
            let name = if tag == "local" { "sum rule local" } else { "sum rule average" };
            checks.push(Check::below(name, (set.hilbert_schmidt() - trace_square_density(&rows)).abs(), INVARIANT_TOLERANCE));
            let name = if tag == "local" { "hermiticity local" } else { "hermiticity average" };
            checks.push(Check::below(name, set.hermiticity_residual(), INVARIANT_TOLERANCE));
        }
    }
    if chain.boundary == Boundary::Periodic {
        let (system, _) = blocks(config, &chain)?;
        let total: usize = system.sectors.iter().map(|s| s.sector.dimension()).sum();
        checks.push(Check {
            name: "sector dimension sum - 3^L",
            value: total as f64 - chain.dimension() as f64,
            tolerance: 0.0,
            pass: total == chain.dimension(),
        });
        let (recon, ortho) = system.residuals()?;
        checks.push(Check::below("block reconstruction", recon, 1e-9));
        checks.push(Check::below("block orthonormality", ortho, 1e-9));
        if let Some(eig) = &dense_eig {
            checks.push(Check::below(
                "block spectrum union deviation",
                symmetry::spectrum_deviation(&system, &eig.energies)?,
                1e-9,
            ));
        }
        let mut phase = 0.0f64;
        for eta_m in symmetry::eta_range(chain.sites) {
            for eta_n in symmetry::eta_range(chain.sites) {
                for l in 1..=chain.sites {
                    let c = symmetry::verify_phase_relation(
                        &system,
                        local.support(),
                        Axis::X,
                        1,
                        l,
                        eta_m,
                        eta_n,
                    )?;
                    phase = phase.max(c.max_residual);
                }
            }
        }
        checks.push(Check::below("translation phase relation", phase, 1e-8));
        checks.push(Check::below(
            "average across momenta",
            symmetry::cross_sector_max(&system, &average)?,
            INVARIANT_TOLERANCE,
        ));
    }
    let mut table = ResultTable::new(["check", "value", "tolerance", "pass"]);
    for (i, c) in checks.iter().enumerate() {
        table.push(vec![(i + 1) as f64, c.value, c.tolerance, if c.pass { 1.0 } else { 0.0 }])?;
        table.meta(format!("check_{}", i + 1), c.name);
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
    let failure = (!failed.is_empty()).then(|| CliError::Invariant(format!("failed checks: {}", failed.join(", "))));
    finish(vec![("verify.txt".into(), table)], failure)
}
