use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;
use v2v_jitter::allocator::AllocatorMode;
use v2v_jitter::config::{load_config, ConfigError, ScenarioConfig, StressorSet};
use v2v_jitter::output::{ensure_dir, write_sweep_csv, write_simulation, MANIFEST_JSON, SWEEP_CSV};
use v2v_jitter::simulator::{estimate_crossing, run_ensemble, SimError};
use v2v_jitter::validate::{run_validation, ValidationSizes};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "v2v-jitter", version, about = "Jitter resilience simulator for a V2V link")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an ensemble and write per-slot CSV plus a JSON manifest.
    Simulate(RunArgs),
    /// Run the oracle checks and print a pass/fail table.
    Validate {
        #[command(flatten)]
        run: RunArgs,
        /// Monte Carlo sample count for the moment checks.
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
    },
    /// Repeat `simulate` over values of one scenario parameter.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Scenario key to vary, e.g. `antennas`.
        #[arg(long)]
        param: String,
        /// Comma-separated values, with units where the key takes them.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StressorArg {
    Both,
    Interference,
    Distance,
}

#[derive(Clone, Copy, ValueEnum)]
enum AllocatorArg {
    Off,
    Power,
    Antennas,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML with units, or a JSON manifest).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    stressors: Option<StressorArg>,
    #[arg(long, value_enum)]
    allocator: Option<AllocatorArg>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    parallelism: Option<usize>,
}

impl RunArgs {
    fn scenario(&self) -> Result<ScenarioConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => ScenarioConfig::default(),
        };
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = self.stressors {
            cfg.stressors = match s {
                StressorArg::Both => StressorSet::Both,
                StressorArg::Interference => StressorSet::Interference,
                StressorArg::Distance => StressorSet::Distance,
            };
        }
        if let Some(a) = self.allocator {
            cfg.allocator = match a {
                AllocatorArg::Off => AllocatorMode::Off,
                AllocatorArg::Power => AllocatorMode::Power,
                AllocatorArg::Antennas => AllocatorMode::Antennas,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn threads(&self) -> usize {
        self.parallelism.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

enum Failure {
    Config(ConfigError),
    Run(String),
    Validation,
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => Failure::Config(c),
            other => Failure::Run(other.to_string()),
        }
    }
}

impl From<v2v_jitter::output::OutputError> for Failure {
    fn from(e: v2v_jitter::output::OutputError) -> Self {
        Failure::Run(e.to_string())
    }
}

fn simulate(args: &RunArgs) -> Result<(), Failure> {
    let cfg = args.scenario()?;
    let started = Instant::now();
    let ensemble = run_ensemble(&cfg, u64::from(cfg.trials), args.threads())?;
    let manifest = write_simulation(&cfg.output_dir, &cfg, &ensemble, started.elapsed().as_secs_f64())?;
    println!("wrote {} ({} trials, {} slots)", cfg.output_dir.display(), manifest.trials, cfg.horizon + 1);
    match manifest.crossing {
        Some(c) => println!("first G <= 0: median slot {} (IQR {}), {} of {} trials", c.median, c.iqr, c.crossed, c.trials),
        None => println!("first G <= 0: no trial crossed within the horizon"),
    }
    Ok(())
}

fn validate(args: &RunArgs, samples: usize) -> Result<(), Failure> {
    let cfg = args.scenario()?;
    let sizes = ValidationSizes { monte_carlo: samples.max(v2v_jitter::oracle::MIN_SAMPLES), ..Default::default() };
    let report = run_validation(&cfg, sizes)?;
    print!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Validation)
    }
}

fn sweep(args: &RunArgs, param: &str, values: &[String]) -> Result<(), Failure> {
    let cfg = args.scenario()?;
    let values: Vec<&str> = values.iter().map(|v| v.trim()).filter(|v| !v.is_empty()).collect();
    let configs = values
        .iter()
        .map(|v| cfg.with_override(param, v).map(|c| (v.to_string(), c)))
        .collect::<Result<Vec<_>, _>>()?;
    if configs.is_empty() {
        // Still reject unknown keys so typos surface.
        if !ScenarioConfig::keys().any(|k| k == param) {
            return Err(cfg.with_override(param, "0").unwrap_err().into());
        }
        eprintln!("warning: empty value list for {param}; nothing to do");
        return Ok(());
    }
    let started = Instant::now();
    let mut runs = Vec::with_capacity(configs.len());
    for (value, c) in configs {
        let e = run_ensemble(&c, u64::from(c.trials), args.threads())?;
        let crossing = estimate_crossing(&e.stats).map_or("none".to_string(), |x| x.median.to_string());
        println!("{param}={value}: median first failure slot {crossing}");
        runs.push((param.to_string(), value, e.stats));
    }
    ensure_dir(&cfg.output_dir)?;
    write_sweep_csv(&cfg.output_dir.join(SWEEP_CSV), &runs)?;
    let mut m = v2v_jitter::output::manifest(&cfg, &runs[0].2, started.elapsed().as_secs_f64(), &[SWEEP_CSV]);
    m.crossing = None;
    m.crossing_status = "see sweep.csv".into();
    v2v_jitter::output::write_manifest(&cfg.output_dir.join(MANIFEST_JSON), &m)?;
    println!("wrote {}", cfg.output_dir.join(SWEEP_CSV).display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(run) => simulate(run),
        Command::Validate { run, samples } => validate(run, *samples),
        Command::Sweep { run, param, values } => sweep(run, param, values),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_FAILURE)
        }
        Err(Failure::Validation) => {
            eprintln!("validation failed");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
