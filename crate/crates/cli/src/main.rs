//! `kinereco` command-line front-end.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kinereco::kinematics::AlphaMethod;

mod commands;
mod manifest;

#[derive(Parser, Debug)]
#[command(name = "kinereco", version, about = "Head kinematics from multi-IMU headbands")]
struct Cli {
    /// Worker threads for per-event processing (default: available cores, at most 8).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic session directory.
    Simulate {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the profile's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Detect headband impacts and pair them with reference events.
    Detect {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct kinematics for every detected headband event.
    Reconstruct {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// diff, a3g1 or both
        #[arg(long, default_value = "both")]
        alpha_method: AlphaMethod,
    },
    /// Compare reconstructed events with the reference sensor.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory of `reconstruct`.
        #[arg(long)]
        hb: PathBuf,
        /// Session directory holding the reference recording.
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Event table written by `detect`.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Flatten a report into CSV tables and plot data.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KINERECO_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("kinereco: usage: {}", one_line(first.trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()).min(8))
        .max(1);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("kinereco: runtime: {}", one_line(&e.to_string()));
            return ExitCode::FAILURE;
        }
    };
    let result = pool.install(|| match cli.command {
        Command::Simulate {
            profile,
            config,
            out,
            seed,
        } => commands::simulate::run(&profile, &config, &out, seed),
        Command::Detect { config, input, out } => commands::detect::run(&config, &input, &out),
        Command::Reconstruct {
            config,
            input,
            events,
            out,
            alpha_method,
        } => commands::reconstruct::run(&config, &input, &events, &out, alpha_method),
        Command::Evaluate {
            config,
            hb,
            reference,
            pairs,
            out,
        } => commands::evaluate::run(&config, &hb, &reference, &pairs, &out),
        Command::Report { input, out } => commands::report::run(&input, &out),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kinereco: {}: {}", e.kind(), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}
