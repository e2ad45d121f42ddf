use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use trajex_cli::config::Baseline;
use trajex_cli::{run, CliError, Command, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "trajex", version, about = "Extreme trajectories of power-system simulations under parameter uncertainty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// `a`, `b`, `c` or a case file path.
    #[arg(long, global = true)]
    scenario: Option<String>,
    /// Observed state, e.g. `gen1.omega`.
    #[arg(long, global = true)]
    state: Option<String>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sample count (total for uniform, per dimension for grid).
    #[arg(long, global = true)]
    samples: Option<usize>,
    #[arg(long, global = true, value_enum)]
    baseline: Option<Baseline>,
    /// Comma-separated fault resistances for `compare`.
    #[arg(long, global = true, value_delimiter = ',')]
    fault_sweep: Option<Vec<f64>>,
    /// Comma-separated parameter point for `simulate`.
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    params: Option<Vec<f64>>,
    /// Slice time in seconds.
    #[arg(long, global = true)]
    time: Option<f64>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long, global = true)]
    dump_config: bool,
    #[arg(long, short, global = true)]
    verbose: bool,
}

impl Cli {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = &self.scenario {
            cfg.scenario = s.clone();
        }
        if let Some(s) = &self.state {
            cfg.state = s.clone();
        }
        if let Some(d) = &self.out_dir {
            cfg.out_dir = d.clone();
        }
        if self.jobs.is_some() {
            cfg.jobs = self.jobs;
        }
        if let Some(s) = self.seed {
            cfg.sampling.seed = s;
        }
        if let Some(n) = self.samples {
            cfg.sampling.count = n;
        }
        if let Some(b) = self.baseline {
            cfg.baseline = b;
        }
        if let Some(f) = &self.fault_sweep {
            cfg.fault_sweep_pu = f.clone();
        }
        if let Some(p) = &self.params {
            cfg.params = Some(p.clone());
        }
        if let Some(t) = self.time {
            cfg.slice_time_s = t;
        }
        cfg.verbose |= self.verbose;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match cli.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let level = if cfg.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if cli.dump_config {
        print!("{}", cfg.to_toml());
        return ExitCode::SUCCESS;
    }
    match run(cli.command, &cfg) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
