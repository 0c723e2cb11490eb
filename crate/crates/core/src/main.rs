use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spinbath::bounds::WITNESS_TOL;
use spinbath::io::{read_snapshot, write_fit, write_snapshot};
use spinbath::scenarios::{
    prepare_and_store, run_scan, scan_fit, scenario_fit, InitialSpec, LabeledInitial, ScanPlan, Scenario,
    ScenarioError, Session,
};

#[derive(Parser)]
#[command(name = "spinbath", version, about = "Driven spin-boson dynamics with correlated initial states")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for scans (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for the multi-start kernel fit.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Common {
    /// Scenario (or scan) TOML file.
    #[arg(long)]
    config: PathBuf,
    /// Use this fit file instead of fitting the bath.
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Output file (CSV subcommands write to stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the bath correlation function and write the fit.
    FitBath(Common),
    /// Relax to the correlated equilibrium and write it as a snapshot.
    Equilibrate(Common),
    /// Propagate the scenario's initial states and write a time series.
    Evolve {
        #[command(flatten)]
        common: Common,
        /// Start from these snapshots instead of the configured initial states.
        #[arg(long)]
        snapshot: Vec<PathBuf>,
    },
    /// Apply the preparation pulse and write Prepared-A, -C, -A1, -C1, -D into --out.
    Prepare(Common),
    /// Trace distance and its bounds between two states.
    Bounds {
        #[command(flatten)]
        common: Common,
        /// Two snapshots; the first two configured initial states are used otherwise.
        #[arg(long)]
        snapshot: Vec<PathBuf>,
        /// Absolute tolerance of the witness flags.
        #[arg(long, default_value_t = WITNESS_TOL)]
        tol: f64,
    },
    /// Pulse-duration scan over drive amplitude and coupling.
    Scan(Common),
}

#[derive(Debug)]
enum Failure {
    Scenario(ScenarioError),
    Usage(String),
    Io(PathBuf, io::Error),
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Self::Scenario(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Scenario(e) => e.exit_code() as u8,
            Self::Usage(_) => 2,
            Self::Io(..) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Scenario(e) => write!(f, "{e}"),
            Self::Usage(m) => write!(f, "{m}"),
            Self::Io(p, e) => write!(f, "{}: {e}", p.display()),
        }
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Failure::Io(p.to_owned(), e))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn required_out(common: &Common) -> Result<&Path, Failure> {
    common
        .out
        .as_deref()
        .ok_or_else(|| Failure::Usage("--out is required for this subcommand".into()))
}

fn load_scenario(common: &Common, seed: Option<u64>) -> Result<Scenario, Failure> {
    let mut s = Scenario::from_path(&common.config)?;
    if let Some(seed) = seed {
        s.fit.seed = seed;
    }
    if let Some(fit) = &common.fit {
        s.fit.file = Some(fit.clone());
    }
    Ok(s)
}

fn snapshot_initials(paths: &[PathBuf]) -> Vec<LabeledInitial> {
    paths
        .iter()
        .enumerate()
        .map(|(i, p)| LabeledInitial {
            label: p
                .file_stem()
                .map(|s| s.to_string_lossy().replace(',', "_"))
                .unwrap_or_else(|| format!("snapshot{i}")),
            spec: InitialSpec::Snapshot {
                path: p.clone(),
                factorized: false,
            },
        })
        .collect()
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("--threads: {e}")))?;
    }
    let seed = cli.seed;
    match cli.command {
        Command::FitBath(common) => {
            let s = load_scenario(&common, seed)?;
            let out = required_out(&common)?;
            let fit = scenario_fit(&s)?;
            write_fit(out, &fit, Some(&s.bath)).map_err(ScenarioError::from)?;
            log::info!("wrote {} terms, fingerprint {}", fit.len(), fit.fingerprint());
        }
        Command::Equilibrate(common) => {
            let s = load_scenario(&common, seed)?;
            let out = required_out(&common)?;
            let mut session = Session::new(s)?;
            let eq = session.equilibrium()?.state.clone();
            write_snapshot(out, "equilibrium", &eq, &session.fit).map_err(ScenarioError::from)?;
        }
        Command::Evolve { common, snapshot } => {
            let mut s = load_scenario(&common, seed)?;
            if !snapshot.is_empty() {
                s.initial = snapshot_initials(&snapshot);
            }
            let run = Session::new(s)?.run()?;
            let mut w = output(common.out.as_deref())?;
            run.series.write_csv(&mut w).map_err(ScenarioError::from)?;
            w.flush().map_err(|e| Failure::Io(common.out.clone().unwrap_or_default(), e))?;
        }
        Command::Prepare(common) => {
            let s = load_scenario(&common, seed)?;
            let out = required_out(&common)?;
            let prepared = prepare_and_store(s, out)?;
            log::info!("preparation pulse of length {}", prepared.duration);
        }
        Command::Bounds { common, snapshot, tol } => {
            let s = load_scenario(&common, seed)?;
            if !(snapshot.is_empty() || snapshot.len() == 2) {
                return Err(Failure::Usage("bounds takes exactly two --snapshot files".into()));
            }
            let mut session = Session::new(s)?;
            let (a, b) = if snapshot.is_empty() {
                let states = session.initial_states()?;
                if states.len() < 2 {
                    return Err(Failure::Usage("bounds needs two initial states or two --snapshot files".into()));
                }
                (states[0].1.clone(), states[1].1.clone())
            } else {
                let read = |p: &PathBuf| read_snapshot(p, &session.fit).map(|(_, s)| s).map_err(ScenarioError::from);
                (read(&snapshot[0])?, read(&snapshot[1])?)
            };
            let series = session.bounds(&a, &b)?;
            let mut w = output(common.out.as_deref())?;
            series.write_csv(&mut w, tol).map_err(ScenarioError::from)?;
            w.flush().map_err(|e| Failure::Io(common.out.clone().unwrap_or_default(), e))?;
        }
        Command::Scan(common) => {
            let mut plan = ScanPlan::from_path(&common.config)?;
            if let Some(seed) = seed {
                plan.fit.seed = seed;
            }
            if let Some(fit) = &common.fit {
                plan.fit.file = Some(fit.clone());
            }
            let fit = scan_fit(&plan)?;
            let grid = run_scan(&plan, &fit);
            for c in &grid.cells {
                if let spinbath::scenarios::CellStatus::Failed(msg) = &c.status {
                    log::warn!("cell Ω_R = {}, ξ = {}: {msg}", c.amplitude, c.xi);
                }
            }
            let mut w = output(common.out.as_deref())?;
            grid.write_csv(&mut w)
                .and_then(|_| w.flush())
                .map_err(|e| Failure::Io(common.out.clone().unwrap_or_default(), e))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
