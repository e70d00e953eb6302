//! `iic`: generate, train, explain, evaluate, report.

mod args;
mod commands;
mod config;
mod manifest;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::{CommandFactory, Parser};

use args::{Cli, Command};
use commands::UsageError;

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(UsageError("--jobs must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let (manifest, out) = match &cli.command {
        Command::Generate(a) => (commands::generate_cmd(a)?, &a.out),
        Command::Train(a) => (commands::train_cmd(a)?, &a.out),
        Command::Explain(a) => (commands::explain_cmd(a)?, &a.out),
        Command::Evaluate(a) => (commands::evaluate_cmd(a)?, &a.out),
        Command::Report(a) => (commands::report_cmd(a)?, &a.out),
    };
    manifest.write(out)?;
    log::info!("{} done in {:.1}s, artifacts in {}", manifest.command, manifest.wall_clock_s, out.display());
    Ok(())
}

/// Usage line of the subcommand named in `argv`, or of the whole tool.
fn usage_text(argv: &[OsString]) -> String {
    let mut cmd = Cli::command();
    cmd.build();
    let name = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).find(|a| cmd.find_subcommand(a).is_some());
    match name.and_then(|n| cmd.find_subcommand_mut(&n).map(|s| s.render_usage())) {
        Some(u) => u.to_string(),
        None => cmd.render_usage().to_string(),
    }
}

fn usage_exit(argv: &[OsString], msg: &str) -> ExitCode {
    eprintln!("error: {msg}\n\n{}\n\nFor more information, try '--help'.", usage_text(argv));
    ExitCode::from(2)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let raw: Vec<OsString> = std::env::args_os().collect();
    let argv = match config::merged_args(raw.clone()) {
        Ok(a) => a,
        Err(msg) => return usage_exit(&raw, &msg),
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.render().to_string();
            if text.contains("Usage:") {
                eprint!("{text}");
            } else {
                let head = text.trim_end().trim_end_matches("For more information, try '--help'.").trim_end();
                eprintln!("{head}\n\n{}\n\nFor more information, try '--help'.", usage_text(&argv));
            }
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match e.downcast_ref::<UsageError>() {
            Some(u) => usage_exit(&argv, &u.to_string()),
            None => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        },
    }
}
