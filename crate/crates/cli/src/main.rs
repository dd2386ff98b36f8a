use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pihedge_cli::{fit_bdnn, fit_vhmn, price, simulate, CliError, PipelineConfig, PriceSource};

#[derive(Parser)]
#[command(
    name = "pihedge",
    version,
    about = "Fit behavioral price models, simulate paths, price and hedge options"
)]
struct Cli {
    /// TOML pipeline config; defaults apply for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated episode indices.
    #[arg(long, global = true, value_delimiter = ',')]
    episodes: Option<Vec<usize>>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    FitBdnn,
    FitVhmn,
    Simulate {
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
    },
    Price {
        /// Price on geometric Brownian paths instead of simulated ones.
        #[arg(long, conflicts_with = "input")]
        gbm: bool,
        /// Path matrix CSV; defaults to the simulated `paths/prices.csv`.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        pure_risk_hedge: Option<bool>,
        #[arg(long)]
        kappa: Option<f64>,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            PipelineConfig::from_toml_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(list) = &cli.episodes {
        cfg.episodes = Some(list.clone());
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    match &cli.command {
        Command::Simulate { paths, steps } => {
            cfg.simulate.paths = paths.unwrap_or(cfg.simulate.paths);
            cfg.simulate.steps = steps.or(cfg.simulate.steps);
        }
        Command::Price {
            paths,
            eta,
            pure_risk_hedge,
            kappa,
            ..
        } => {
            cfg.simulate.paths = paths.unwrap_or(cfg.simulate.paths);
            cfg.option.eta = eta.unwrap_or(cfg.option.eta);
            cfg.option.pure_risk_hedge = pure_risk_hedge.unwrap_or(cfg.option.pure_risk_hedge);
            cfg.option.kappa = kappa.unwrap_or(cfg.option.kappa);
        }
        Command::FitBdnn | Command::FitVhmn => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::FitBdnn => println!("{}", fit_bdnn(&cfg)?.display()),
        Command::FitVhmn => println!("{}", fit_vhmn(&cfg)?.display()),
        Command::Simulate { .. } => println!("{}", simulate(&cfg)?.display()),
        Command::Price { gbm, input, .. } => {
            let source = match (gbm, input) {
                (true, _) => PriceSource::Gbm,
                (false, Some(path)) => PriceSource::File(path.clone()),
                (false, None) => PriceSource::Simulated,
            };
            let report = price(&cfg, &source)?;
            println!("price {}", report.price);
            if let Some(bs) = report.black_scholes {
                println!("black-scholes {bs}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
