use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use spin1_eth::eth::{self, PairWindow};
use spin1_eth::hilbert::{
    Axis, Boundary, ChainSpec, ObservableSpec, Support, DEFAULT_COUPLING, DEFAULT_EDGE_FIELD,
    DEFAULT_LONGITUDINAL_FIELD, DEFAULT_TRANSVERSE_FIELD,
};
use spin1_eth::linalg::MemoryCap;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Task {
    /// Diagonal elements against energy density.
    DiagScatter,
    /// Grand-canonical expectation values over a list of inverse temperatures.
    ThermalScan,
    /// Finite-size extrapolation and relative-difference fits over a range of L.
    FitScaling,
    /// Local and translation-averaged spectral functions.
    Spectral,
    /// Translation-average spectral function split by site distance.
    DistanceDecomp,
    /// Local spectral function split by momentum transfer (periodic chains).
    MomentumDecomp,
    /// Momentum-resolved ETH function from selected block pairs.
    ExtractF,
    /// Internal consistency checks.
    Verify,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::DiagScatter => "diag-scatter",
            Task::ThermalScan => "thermal-scan",
            Task::FitScaling => "fit-scaling",
            Task::Spectral => "spectral",
            Task::DistanceDecomp => "distance-decomp",
            Task::MomentumDecomp => "momentum-decomp",
            Task::ExtractF => "extract-f",
            Task::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BoundaryArg {
    Pbc,
    Obc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObservableArg {
    SxSite,
    SxsxBond,
    SxAvg,
    SxsxAvg,
}

impl ObservableArg {
    pub fn support(self) -> Support {
        match self {
            ObservableArg::SxSite | ObservableArg::SxAvg => Support::Site,
            ObservableArg::SxsxBond | ObservableArg::SxsxAvg => Support::Bond,
        }
    }

    pub fn is_average(self) -> bool {
        matches!(self, ObservableArg::SxAvg | ObservableArg::SxsxAvg)
    }

    pub fn name(self) -> &'static str {
        match self {
            ObservableArg::SxSite => "sx-site",
            ObservableArg::SxsxBond => "sxsx-bond",
            ObservableArg::SxAvg => "sx-avg",
            ObservableArg::SxsxAvg => "sxsx-avg",
        }
    }
}

/// Command line. Every option may also come from `--config FILE`
/// (`key = value` lines, keys spelled like the long flags); flags given on
/// the command line win.
#[derive(Debug, Parser)]
#[command(name = "spin1-eth", version, about = "ETH diagnostics for spin-1 tilted-field Ising chains")]
pub struct Cli {
    #[command(subcommand)]
    pub task: Task,
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long = "L", global = true)]
    pub sites: Option<usize>,
    #[arg(long, value_enum, global = true)]
    pub bc: Option<BoundaryArg>,
    #[arg(long = "J", global = true, allow_negative_numbers = true)]
    pub coupling: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub hx: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub hz: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub edge_field: Option<f64>,
    #[arg(long, value_enum, global = true)]
    pub obs: Option<ObservableArg>,
    /// Site (or first site of the bond) of local observables; default ceil(L/2).
    #[arg(long, global = true)]
    pub site: Option<usize>,
    /// Comma-separated inverse temperatures.
    #[arg(long, global = true)]
    pub beta: Option<String>,
    #[arg(long, global = true)]
    pub sigma_factor: Option<f64>,
    /// Absolute regularization width; overrides --sigma-factor.
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    #[arg(long, global = true)]
    pub omega_min: Option<f64>,
    #[arg(long, global = true)]
    pub omega_max: Option<f64>,
    #[arg(long, global = true)]
    pub omega_points: Option<usize>,
    #[arg(long, global = true)]
    pub pairs: Option<usize>,
    #[arg(long, global = true)]
    pub ewin: Option<f64>,
    #[arg(long, global = true)]
    pub logwwin: Option<f64>,
    /// Momentum block pairs `eta_m:eta_n`, comma separated.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub blocks: Option<String>,
    /// Comma-separated log10 target frequencies for extract-f.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub targets: Option<String>,
    /// Smallest chain in fit-scaling (the largest is --L).
    #[arg(long = "L-min", global = true)]
    pub sites_min: Option<usize>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub mem_cap_gb: Option<f64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn frequencies(&self) -> Result<Vec<f64>> {
        Ok(eth::log_grid(self.min, self.max, self.points)?)
    }
}

/// Validated run configuration with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub chain: ChainSpec,
    pub observable: ObservableArg,
    pub site: usize,
    pub betas: Vec<f64>,
    pub sigma_factor: f64,
    pub sigma: Option<f64>,
    pub grid: GridSpec,
    pub window: PairWindow,
    pub blocks: Vec<(i32, i32)>,
    pub targets: Vec<f64>,
    pub sites_min: usize,
    pub threads: Option<usize>,
    pub memory_cap: MemoryCap,
    pub out: PathBuf,
    pub cache_dir: Option<PathBuf>,
}

/// Reads `key = value` lines into `--key value` arguments.
pub fn config_file_args(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut args = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{}:{}: expected key = value", path.display(), n + 1)))?;
        let key = key.trim();
        if key == "config" {
            return Err(CliError::Usage("config files cannot include other config files".into()));
        }
        args.push(format!("--{key}={}", value.trim()));
    }
    Ok(args)
}

/// Parses argv, splicing config-file options in front of the command-line
/// ones so the latter take precedence.
pub fn parse_args<I, S>(argv: I) -> std::result::Result<RunConfig, ParseOutcome>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let first = Cli::try_parse_from(&argv).map_err(ParseOutcome::Clap)?;
    let cli = match &first.config {
        Some(path) => {
            let mut spliced = vec![argv[0].clone()];
            spliced.extend(config_file_args(path).map_err(ParseOutcome::Invalid)?);
            spliced.extend(argv[1..].iter().cloned());
            Cli::try_parse_from(&spliced).map_err(ParseOutcome::Clap)?
        }
        None => first,
    };
    RunConfig::from_cli(&cli).map_err(ParseOutcome::Invalid)
}

#[derive(Debug)]
pub enum ParseOutcome {
    /// Help, version, or a clap usage error.
    Clap(clap::Error),
    Invalid(CliError),
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| CliError::Usage(format!("invalid {what} entry {s:?}"))))
        .collect()
}

fn parse_blocks(text: &str) -> Result<Vec<(i32, i32)>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let (a, b) = pair
                .split_once(':')
                .ok_or_else(|| CliError::Usage(format!("block pair {pair:?} is not eta_m:eta_n")))?;
            let parse = |s: &str| s.trim().parse::<i32>().map_err(|_| CliError::Usage(format!("bad eta in {pair:?}")));
            Ok((parse(a)?, parse(b)?))
        })
        .collect()
}

impl RunConfig {
    pub fn from_cli(cli: &Cli) -> Result<Self> {
        let sites = cli.sites.ok_or_else(|| CliError::Usage("--L is required".into()))?;
        let boundary = match cli.bc.unwrap_or(BoundaryArg::Obc) {
            BoundaryArg::Pbc => Boundary::Periodic,
            BoundaryArg::Obc => Boundary::Open,
        };
        let edge_default = if boundary == Boundary::Open { DEFAULT_EDGE_FIELD } else { 0.0 };
        let chain = ChainSpec {
            sites,
            boundary,
            coupling: cli.coupling.unwrap_or(DEFAULT_COUPLING),
            transverse_field: cli.hx.unwrap_or(DEFAULT_TRANSVERSE_FIELD),
            longitudinal_field: cli.hz.unwrap_or(DEFAULT_LONGITUDINAL_FIELD),
            edge_field: cli.edge_field.unwrap_or(edge_default),
        };
        chain.validate()?;
        let observable = cli.obs.unwrap_or(ObservableArg::SxSite);
        let site = cli.site.unwrap_or_else(|| ObservableSpec::default_site(sites));
        ObservableSpec::Local { support: observable.support(), axis: Axis::X, site }.validate(&chain)?;

        let betas = match &cli.beta {
            Some(text) => parse_list::<f64>(text, "beta")?,
            None => vec![0.5],
        };
        if betas.is_empty() || betas.iter().any(|b: &f64| !b.is_finite()) {
            return Err(CliError::Usage("--beta needs finite values".into()));
        }
        let sigma_factor = cli.sigma_factor.unwrap_or(eth::DEFAULT_SIGMA_FACTOR);
        if !(sigma_factor > 0.0) {
            return Err(CliError::Usage("--sigma-factor must be positive".into()));
        }
        if cli.sigma.is_some_and(|s| !(s > 0.0)) {
            return Err(CliError::Usage("--sigma must be positive".into()));
        }
        let grid = GridSpec {
            min: cli.omega_min.unwrap_or(1e-3),
            max: cli.omega_max.unwrap_or(10f64.powf(1.7)),
            points: cli.omega_points.unwrap_or(240),
        };
        grid.frequencies()?;
        let defaults = PairWindow::default();
        let window = PairWindow {
            energy_half_width: cli.ewin.unwrap_or(defaults.energy_half_width),
            log_omega_half_width: cli.logwwin.unwrap_or(defaults.log_omega_half_width),
            pairs: cli.pairs.unwrap_or(defaults.pairs),
        };
        if window.pairs == 0 || !(window.energy_half_width > 0.0) || !(window.log_omega_half_width > 0.0) {
            return Err(CliError::Usage("--pairs, --ewin and --logwwin must be positive".into()));
        }
        let blocks = match &cli.blocks {
            Some(text) => parse_blocks(text)?,
            None => vec![(1, 1), (1, 2), (1, 3)],
        };
        let targets = match &cli.targets {
            Some(text) => parse_list(text, "target")?,
            None => (0..=12).map(|i| -2.0 + 0.25 * i as f64).collect(),
        };
        let sites_min = cli.sites_min.unwrap_or(4);
        if cli.threads == Some(0) {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        let memory_cap = match cli.mem_cap_gb {
            Some(gb) if gb > 0.0 => MemoryCap::new((gb * (1u64 << 30) as f64) as u64),
            Some(_) => return Err(CliError::Usage("--mem-cap-gb must be positive".into())),
            None => MemoryCap::default(),
        };
        Ok(Self {
            task: cli.task,
            chain,
            observable,
            site,
            betas,
            sigma_factor,
            sigma: cli.sigma,
            grid,
            window,
            blocks,
            targets,
            sites_min,
            threads: cli.threads,
            memory_cap,
            out: cli.out.clone().unwrap_or_else(|| PathBuf::from(".")),
            cache_dir: cli.cache_dir.clone(),
        })
    }

    pub fn local_observable(&self) -> ObservableSpec {
        ObservableSpec::Local { support: self.observable.support(), axis: Axis::X, site: self.site }
    }

    pub fn average_observable(&self) -> ObservableSpec {
        ObservableSpec::average(self.observable.support(), Axis::X)
    }

    /// The observable named by `--obs`.
    pub fn observable(&self) -> ObservableSpec {
        if self.observable.is_average() {
            self.average_observable()
        } else {
            self.local_observable()
        }
    }

    /// `key = value` lines that reproduce this configuration.
    pub fn echo(&self) -> Vec<(String, String)> {
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let mut out = vec![
            ("task".to_string(), self.task.name().to_string()),
            ("L".into(), self.chain.sites.to_string()),
            ("bc".into(), self.chain.boundary.to_string()),
            ("J".into(), self.chain.coupling.to_string()),
            ("hx".into(), self.chain.transverse_field.to_string()),
            ("hz".into(), self.chain.longitudinal_field.to_string()),
            ("edge-field".into(), self.chain.edge_field.to_string()),
            ("obs".into(), self.observable.name().to_string()),
            ("site".into(), self.site.to_string()),
            ("beta".into(), join(&self.betas)),
            ("sigma-factor".into(), self.sigma_factor.to_string()),
            ("omega-min".into(), self.grid.min.to_string()),
            ("omega-max".into(), self.grid.max.to_string()),
            ("omega-points".into(), self.grid.points.to_string()),
            ("pairs".into(), self.window.pairs.to_string()),
            ("ewin".into(), self.window.energy_half_width.to_string()),
            ("logwwin".into(), self.window.log_omega_half_width.to_string()),
            (
                "blocks".into(),
                self.blocks.iter().map(|(a, b)| format!("{a}:{b}")).collect::<Vec<_>>().join(","),
            ),
            ("targets".into(), join(&self.targets)),
            ("L-min".into(), self.sites_min.to_string()),
        ];
        if let Some(s) = self.sigma {
            out.push(("sigma".into(), s.to_string()));
        }
        out
    }
}
