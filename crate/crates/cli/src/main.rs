use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dispml_cli::commands::{self, RunOptions};
use dispml_cli::config::Expectation;

#[derive(Parser)]
#[command(name = "dispml", version, about = "Certify, assemble and simulate dispersive media with absorbing layers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config (JSON if the name ends in .json).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Checked-in scenario instead of a config file.
    #[arg(long, value_name = "NAME")]
    scenario: Option<String>,
    /// Output directory; created if missing.
    #[arg(long, value_name = "DIR", default_value = "dispml-out")]
    out: PathBuf,
    /// Seed for random sampling; recorded in the manifest.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Half-plane accretivity certificate of a material law.
    Certify {
        #[command(flatten)]
        common: Common,
        /// Exit 3 unless the verdict matches.
        #[arg(long, value_enum)]
        expect: Option<Expectation>,
    },
    /// Block system plus its transfer-function check.
    Assemble {
        #[command(flatten)]
        common: Common,
        /// Collect nothing into S3, reproducing the misprinted index set.
        #[arg(long)]
        paper_literal_s3: bool,
    },
    /// 1D time-domain run.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Picard iteration for a nonlinear polarization.
    Fixedpoint {
        #[command(flatten)]
        common: Common,
    },
}

fn options(c: Common) -> RunOptions {
    RunOptions {
        config: c.config,
        scenario: c.scenario,
        out: c.out,
        seed: c.seed,
        ..Default::default()
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Certify { common, expect } => commands::certify(&RunOptions {
            expect,
            ..options(common)
        }),
        Command::Assemble { common, paper_literal_s3 } => commands::assemble(&RunOptions {
            paper_literal_s3,
            ..options(common)
        }),
        Command::Simulate { common } => commands::simulate(&options(common)),
        Command::Fixedpoint { common } => commands::fixedpoint(&options(common)),
    };
    match outcome.and_then(|o| {
        println!("{}", o.summary);
        o.into_result()
    }) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dispml: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
