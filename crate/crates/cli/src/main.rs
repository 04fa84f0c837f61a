mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use pcbf::sim::{Method, SweepAxis};

use crate::config::Overrides;

/// Probabilistic CBF safety filters: certificates, one-shot solves and the
/// corridor Monte Carlo experiments.
#[derive(Parser, Debug)]
#[command(name = "pcbf", version, about)]
struct Cli {
    /// More log output (-v info, -vv debug); RUST_LOG also works.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-step risk/confidence allocation, guarantees and dataset sizes.
    Cert(CertArgs),
    /// Solve the safety filter once at a given state.
    Filter(FilterArgs),
    /// Monte Carlo rollouts: per-trajectory dumps and a summary table.
    Rollout(RunArgs),
    /// Unsafe-trajectory counts over the configured σ or horizon grid.
    Sweep(SweepArgs),
    /// Smallest σ at which each condition becomes infeasible.
    Sigma0(RunArgs),
    /// Time the filter step of each method.
    Bench(RunArgs),
    /// Print the effective configuration as TOML.
    Config(ConfigArgs),
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: pcbf::Error| e.to_string())
}

/// Configuration file and the flags that override it.
#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// Flat TOML file with SimConfig keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Lateral disturbance standard deviation.
    #[arg(long)]
    sigma: Option<f64>,
    /// Steps per trajectory.
    #[arg(long)]
    horizon: Option<usize>,
    /// Trajectories per method.
    #[arg(long)]
    n_traj: Option<usize>,
}

impl ConfigArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            sigma: self.sigma,
            horizon: self.horizon,
            n_traj: self.n_traj,
            ..Overrides::default()
        }
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Comma-separated methods (none, markov, cantelli, hoeffding, scenario, conformal).
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Option<Vec<Method>>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads; outputs do not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum AxisArg {
    Sigma,
    Horizon,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum, default_value = "sigma")]
    axis: AxisArg,
    /// Grid values; defaults to sweep_sigmas / sweep_horizons.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    values: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct FilterArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// State x,y,theta.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    state: Vec<f64>,
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
}

#[derive(Args, Debug)]
struct CertArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Trajectory-level risk ε.
    #[arg(long)]
    epsilon: f64,
    /// Confidence budget over the horizon.
    #[arg(long, default_value_t = 0.01)]
    beta_total: f64,
    /// Report only this method.
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> error::Result<()> {
    use commands::*;
    match command {
        Command::Cert(a) => {
            let cfg = config::load(a.cfg.config.as_deref(), &a.cfg.overrides())?;
            cert(&cfg, a.epsilon, a.beta_total, a.method)
        }
        Command::Filter(a) => {
            let over = Overrides {
                method: a.method,
                ..a.cfg.overrides()
            };
            let cfg = config::load(a.cfg.config.as_deref(), &over)?;
            filter(&cfg, &a.state)
        }
        Command::Rollout(a) => batch(&a, |cfg, out| rollout(cfg, out), "rollout"),
        Command::Sweep(a) => {
            let axis = match a.axis {
                AxisArg::Sigma => SweepAxis::Sigma,
                AxisArg::Horizon => SweepAxis::Horizon,
            };
            let values = a.values.clone();
            batch(&a.run, |cfg, out| sweep(cfg, out, axis, values.as_deref()), "sweep")
        }
        Command::Sigma0(a) => batch(&a, |cfg, out| sigma0(cfg, out), "sigma0"),
        Command::Bench(a) => batch(&a, |cfg, out| bench(cfg, out), "bench"),
        Command::Config(a) => {
            let cfg = config::load(a.config.as_deref(), &a.overrides())?;
            print!("{}", config::print(&cfg)?);
            Ok(())
        }
    }
}

/// Loads the config, runs `body` on the requested pool and writes the
/// manifest.
fn batch(
    args: &RunArgs,
    body: impl FnOnce(&pcbf::sim::SimConfig, &mut manifest::OutDir) -> error::Result<()> + Send,
    command: &str,
) -> error::Result<()> {
    let over = Overrides {
        methods: args.methods.clone(),
        ..args.cfg.overrides()
    };
    let cfg = config::load(args.cfg.config.as_deref(), &over)?;
    if cfg.methods.is_empty() {
        return Err(error::CliError::Usage("method list is empty".into()));
    }
    if args.jobs == Some(0) {
        return Err(error::CliError::Usage("--jobs must be at least 1".into()));
    }
    let mut out = manifest::OutDir::create(&args.out_dir)?;
    match args.jobs {
        Some(j) => pcbf::sim::with_jobs(j, || body(&cfg, &mut out))??,
        None => body(&cfg, &mut out)?,
    }
    let m = out.finish(command, &cfg, args.jobs)?;
    for f in &m.outputs {
        println!("{}  {}", f.sha256, args.out_dir.join(&f.file).display());
    }
    Ok(())
}
