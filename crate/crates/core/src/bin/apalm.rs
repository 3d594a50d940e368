use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use apalm::experiment::{
    bench, error_exit_code, render_bench, run_experiment, verify, DEFAULT_REPLAYS,
};

#[derive(Parser)]
#[command(name = "apalm", version, about = "Asynchronous PALM experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured experiment and write its trace and summary.
    Run { config: PathBuf },
    /// Re-check a trace offline against the run's configuration.
    Verify {
        trace: PathBuf,
        config: PathBuf,
        /// Replays for the statistical verdict of a stochastic run.
        #[arg(long, default_value_t = DEFAULT_REPLAYS)]
        replays: usize,
    },
    /// Time the parallel executor for several worker counts.
    Bench {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        workers: Vec<usize>,
    },
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c.clamp(0, 255) as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => run_experiment(&config).map(|out| {
            let t = &out.trace;
            let last = t.last();
            println!(
                "{}: {} iterations, psi = {:e}, res_c = {:e}, flags = {}/{}/{}",
                t.status.as_str(),
                t.iterations(),
                last.psi,
                last.res_c,
                t.m_violations.len(),
                t.fejer_violations.len(),
                t.level_set_violations.len()
            );
            out.exit_code
        }),
        Command::Verify { trace, config, replays } => verify(&trace, &config, replays).map(|rep| {
            print!("{}", rep.render());
            rep.exit_code()
        }),
        Command::Bench { config, workers } => {
            if workers.contains(&0) {
                Err(apalm::ApalmError::Config("worker counts must be positive".into()))
            } else {
                bench(&config, &workers).map(|rows| {
                    print!("{}", render_bench(&rows));
                    0
                })
            }
        }
    };
    match result {
        Ok(c) => code(c),
        Err(e) => {
            eprintln!("error: {e}");
            code(error_exit_code(&e))
        }
    }
}
