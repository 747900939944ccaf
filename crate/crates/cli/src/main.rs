use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod output;
mod selftest;

use commands::Finding;

/// Worst-case data-dropping audits for Bradley-Terry leaderboards.
///
/// Exit status: 0 when nothing non-robust was found, 2 when a verified
/// reversal was found, 1 on any error.
#[derive(Debug, Parser)]
#[command(name = "btrobust", version)]
struct Cli {
    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit scores and write the leaderboard
    Fit(commands::FitArgs),
    /// Check whether dropping a few matchups changes the top-k set
    CheckTopk(commands::TopKArgs),
    /// Smallest number of drops that reverses two models
    MinDrop(commands::MinDropArgs),
    /// Show the dropped matchups of a report
    Inspect(commands::InspectArgs),
    /// Check the audit against exhaustive and finite-difference oracles
    Selftest(selftest::SelftestArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    let result = match &cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::CheckTopk(a) => commands::check_topk_cmd(a),
        Command::MinDrop(a) => commands::min_drop(a),
        Command::Inspect(a) => commands::inspect(a),
        Command::Selftest(a) => selftest::run(a),
    };
    match result {
        Ok(Finding::Completed) => ExitCode::SUCCESS,
        Ok(Finding::NonRobust) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
