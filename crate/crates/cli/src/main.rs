mod args;
mod commands;

use std::ffi::OsString;
use std::fmt;
use std::process::ExitCode;

use clap::{ArgAction, CommandFactory, FromArgMatches};

use args::{Cli, Command};

/// Bad flags or flag values; exit code 1.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<skfcpd::Error>() {
            return match e {
                e if e.is_numerical() => EXIT_NUMERICAL,
                skfcpd::Error::InvalidParameter(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            };
        }
    }
    EXIT_DATA
}

fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

/// Inserts the config file's settings right after the subcommand name so
/// that flags given on the command line win.
fn merge_config(mut argv: Vec<OsString>, cmd: &clap::Command) -> anyhow::Result<Vec<OsString>> {
    let Some(path) = config_path(&argv) else { return Ok(argv) };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| anyhow::Error::new(e).context(format!("reading config {}", path.to_string_lossy())))?;
    let settings = skfcpd::pipeline::parse_config(&text)?;
    let Some(pos) = argv.iter().position(|a| cmd.find_subcommand(a).is_some()) else { return Ok(argv) };
    let sub = cmd.find_subcommand(&argv[pos]).expect("found above");
    let mut extra: Vec<OsString> = Vec::new();
    for (key, value) in settings {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && key != "config")
            .ok_or_else(|| Usage(format!("unknown config key `{key}` for `{}`", sub.get_name())))?;
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value.to_ascii_lowercase().as_str() {
                "true" | "yes" | "1" => extra.push(format!("--{key}").into()),
                "false" | "no" | "0" => {}
                _ => return Err(Usage(format!("config key `{key}` expects true or false, got `{value}`")).into()),
            }
        } else {
            extra.push(format!("--{key}={value}").into());
        }
    }
    argv.splice(pos + 1..pos + 1, extra);
    Ok(argv)
}

fn run(argv: Vec<OsString>) -> anyhow::Result<()> {
    let cmd = Cli::command().mut_subcommands(|s| s.args_override_self(true));
    let argv = merge_config(argv, &cmd)?;
    let matches = match cmd.try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) if !e.use_stderr() => {
            e.print()?;
            return Ok(());
        }
        Err(e) => return Err(Usage(e.render().to_string()).into()),
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| Usage(e.to_string()))?;
    match &cli.command {
        Command::Detect(a) => commands::detect(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Estimate(a) => commands::estimate_cmd(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Pipeline(a) => commands::pipeline(a),
    }
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            if code == EXIT_USAGE && e.downcast_ref::<Usage>().is_some_and(|u| u.0.starts_with("error:")) {
                eprint!("{e}");
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(code)
        }
    }
}
