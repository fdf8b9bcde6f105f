use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use levy_teugels::cli::{self, Command, PriceMethod, SolveMethod};
use levy_teugels::config::{OutputFormat, Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "levy-teugels",
    version,
    about = "Teugels bases, BSDE and PDIE solvers for pure-jump Lévy models"
)]
struct Args {
    #[command(subcommand)]
    command: Cmd,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    Pdie,
    Bsde,
    Picard,
}

#[derive(Clone, Copy, ValueEnum)]
enum Pricer {
    Mc,
    Pide,
    Both,
}

#[derive(Subcommand)]
enum Cmd {
    /// Lévy measure moments m_p for 1 <= |p| <= 2D.
    Moments,
    /// Orthogonalised Teugels basis.
    Orthobasis,
    /// Jump paths of the compound-Poisson approximation.
    Simulate,
    /// PDIE on a grid or regression BSDE.
    Solve {
        #[arg(long, value_enum)]
        method: Option<Solver>,
    },
    /// Risk-neutral option price.
    Price {
        #[arg(long, value_enum, default_value = "both")]
        method: Pricer,
        /// Also write the (t, S, V) surface of a one-dimensional PIDE.
        #[arg(long)]
        surface: bool,
    },
    /// Numerical check battery; exits nonzero on any failure.
    Verify,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let Some(path) = &args.config else {
        eprintln!("error: --config <FILE> is required");
        return ExitCode::from(2);
    };
    let mut cfg = match RunConfig::load(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    cfg.apply(&Overrides {
        seed: args.seed,
        out: args.out,
        format: args.format.map(|f| match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }),
    });
    if let Some(n) = args.threads {
        if let Err(e) = cli::init_threads(n) {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let cmd = match args.command {
        Cmd::Moments => Command::Moments,
        Cmd::Orthobasis => Command::Orthobasis,
        Cmd::Simulate => Command::Simulate,
        Cmd::Solve { method } => Command::Solve {
            method: method.map(|m| match m {
                Solver::Pdie => SolveMethod::Pdie,
                Solver::Bsde => SolveMethod::Bsde,
                Solver::Picard => SolveMethod::Picard,
            }),
        },
        Cmd::Price { method, surface } => Command::Price {
            method: match method {
                Pricer::Mc => PriceMethod::Mc,
                Pricer::Pide => PriceMethod::Pide,
                Pricer::Both => PriceMethod::Both,
            },
            surface,
        },
        Cmd::Verify => Command::Verify,
    };
    match cli::run(&cmd, &cfg) {
        Ok(outcome) => {
            println!("{}", outcome.summary.trim_end());
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            if outcome.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                eprintln!("failed checks: {}", outcome.failures.join(", "));
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
