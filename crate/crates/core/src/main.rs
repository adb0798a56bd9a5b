use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use emitron::config::{Overrides, RunConfig};
use emitron::pipeline::EstimatorVariant;
use emitron::report;
use emitron::scenarios::ScenarioKind;
use emitron::Error;

#[derive(Parser)]
#[command(name = "emitron", version, about = "Trajectory-based CO2 estimation and EV adoption scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured trip set (synthesized or ingested) as a trajectory CSV.
    Simulate(Common),
    /// Ingest and validate trajectories; exits 3 when any trip is rejected.
    Validate(Common),
    /// Fit monthly demand factors from station counts.
    Factors(Common),
    /// Monthly and annual CO2 under every estimator.
    Estimate(Common),
    /// CO2 savings of the adoption scenarios.
    Scenarios(Common),
    /// Energy demand and charger share per technology scenario.
    Energy(Common),
    /// Societal benefit over infrastructure cost.
    Econ(Common),
    /// Every artifact plus summary.json.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Master seed; overrides the file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, relative to the working directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Market shares as fractions, e.g. `--share 0.03 --share 0.06`.
    #[arg(long = "share")]
    shares: Vec<f64>,
    #[arg(long = "scenario")]
    scenarios: Vec<ScenarioKind>,
    #[arg(long = "variant")]
    variants: Vec<EstimatorVariant>,
    /// Random draws per scenario cell.
    #[arg(long)]
    draws: Option<usize>,
    /// Worker threads; defaults to all cores.
    #[arg(long, env = "EMITRON_THREADS")]
    threads: Option<usize>,
}

fn nonempty<T: Clone>(v: &[T]) -> Option<Vec<T>> {
    (!v.is_empty()).then(|| v.to_vec())
}

impl Common {
    fn load(&self) -> Result<RunConfig, Error> {
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        }
        let mut cfg = RunConfig::load(&self.config)?;
        cfg.apply(&Overrides {
            seed: self.seed,
            out_dir: self.out.clone(),
            shares: nonempty(&self.shares),
            scenarios: nonempty(&self.scenarios),
            variants: nonempty(&self.variants),
            n_draws: self.draws,
        })?;
        Ok(cfg)
    }
}

fn announce(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn run(cli: Cli) -> Result<i32, Error> {
    match cli.command {
        Command::Simulate(c) => announce(&[report::run_simulate(&c.load()?)?]),
        Command::Validate(c) => {
            let summary = report::run_validate(&c.load()?)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if summary.rejected() > 0 {
                return Ok(3);
            }
        }
        Command::Factors(c) => announce(&report::run_factors(&c.load()?)?),
        Command::Estimate(c) => {
            let p = report::prepare(&c.load()?)?;
            let r = p.emission_report();
            print!("{}", r.render());
            announce(&p.write_emissions(&r)?);
        }
        Command::Scenarios(c) => {
            let p = report::prepare(&c.load()?)?;
            announce(&[p.write_savings(&p.savings()?)?]);
        }
        Command::Energy(c) => {
            let p = report::prepare(&c.load()?)?;
            announce(&[p.write_energy(&p.energy()?)?]);
        }
        Command::Econ(c) => {
            let p = report::prepare(&c.load()?)?;
            announce(&[p.write_econ(&p.econ(None)?)?]);
        }
        Command::Report(c) => {
            let p = report::prepare(&c.load()?)?;
            let written = report::run_report(&p)?;
            info!("{} artifacts written", written.len());
            announce(&written);
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            let record = serde_json::json!({
                "error": e.kind(),
                "message": e.to_string(),
                "exit_code": e.exit_code(),
            });
            eprintln!("{record}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
