//! Command-line surface: `calibrate`, `distcal`, `diagnose`, `synth` and
//! `eval-sweep`. Flags override the config file; `SYNDIGITS_*` environment
//! variables stand in for flags that are not given.

pub mod commands;
pub mod config;
pub mod io;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use config::RunConfig;

use crate::error::{Error, Result};
use crate::matcore::Orientation;

#[derive(Debug, Parser)]
#[command(name = "twincal", version, about = "Calibrate digital-twin responses against human data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run config.
    #[arg(long, global = true, env = "SYNDIGITS_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "SYNDIGITS_SEED")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "SYNDIGITS_OUT")]
    pub out: Option<PathBuf>,
    /// One of ridge, lasso, en, sc, nn, si, hsv, ssv, als, sp.
    #[arg(long, global = true, env = "SYNDIGITS_METHOD")]
    pub method: Option<String>,
    /// Adaptive-transfer threshold on the twin training MSE.
    #[arg(long, global = true, env = "SYNDIGITS_TAU")]
    pub tau: Option<f64>,
    /// Average correlations in Fisher-z space.
    #[arg(long, global = true, env = "SYNDIGITS_FISHER_Z")]
    pub fisher_z: bool,
    /// new_question or new_user.
    #[arg(long, global = true, env = "SYNDIGITS_ORIENTATION")]
    pub orientation: Option<String>,
    /// Hyperparameter profile, e.g. twin2k.new_question.
    #[arg(long, global = true, env = "SYNDIGITS_PROFILE")]
    pub profile: Option<String>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Leave-one-out calibration report.
    Calibrate,
    /// Distribution calibration cross-table.
    Distcal,
    /// Subspace alignment and variance-explained curves.
    Diagnose,
    /// Generate a synthetic world.
    Synth,
    /// Adaptive-transfer threshold sweep.
    EvalSweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Calibrate => "calibrate",
            Command::Distcal => "distcal",
            Command::Diagnose => "diagnose",
            Command::Synth => "synth",
            Command::EvalSweep => "eval-sweep",
        }
    }
}

/// Loads the config file (if any) and applies flag overrides.
pub fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if let Some(m) = &common.method {
        cfg.method = m.clone();
    }
    if let Some(t) = common.tau {
        cfg.tau = Some(t);
    }
    if common.fisher_z {
        cfg.fisher_z = true;
    }
    if let Some(o) = &common.orientation {
        cfg.orientation = Orientation::parse(o)
            .ok_or_else(|| Error::param(format!("unknown orientation '{o}'")))?;
    }
    if let Some(p) = &common.profile {
        cfg.profile = Some(p.clone());
    }
    Ok(cfg)
}

pub fn execute(command: Command, cfg: &RunConfig) -> Result<commands::Written> {
    match command {
        Command::Calibrate => commands::cmd_calibrate(cfg),
        Command::Distcal => commands::cmd_distcal(cfg),
        Command::Diagnose => commands::cmd_diagnose(cfg),
        Command::Synth => commands::cmd_synth(cfg),
        Command::EvalSweep => commands::cmd_eval_sweep(cfg),
    }
}

#[derive(Debug, Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    kind: &'a str,
    command: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<String>,
}

/// Exit code for a failed run: 2 for bad input or configuration, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical(_) | Error::Singular(_) | Error::DegenerateTarget(_) | Error::UndefinedCorrelation(_) => 1,
        _ => 2,
    }
}

pub fn error_json(command: &str, e: &Error) -> String {
    let path = match e {
        Error::MissingInput(p) => Some(p.display().to_string()),
        Error::Parse { path, .. } => Some(path.clone()),
        _ => None,
    };
    serde_json::to_string(&ErrorReport {
        error: &e.to_string(),
        kind: e.kind(),
        command,
        path,
    })
    .unwrap_or_else(|_| "{\"error\":\"unserializable\"}".into())
}

/// Parses `args`, runs the subcommand and returns the process exit code.
/// Errors go to stderr as one JSON object.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let name = cli.command.name();
    match resolve(&cli.common).and_then(|cfg| execute(cli.command, &cfg)) {
        Ok(w) => {
            println!("{}", serde_json::to_string(&w).unwrap_or_default());
            0
        }
        Err(e) => {
            eprintln!("{}", error_json(name, &e));
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from([
            "twincal", "calibrate", "--seed", "4", "--method", "en", "--orientation", "new-user", "--fisher-z", "--tau", "0.5",
        ])
        .unwrap();
        let cfg = resolve(&cli.common).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.method, "en");
        assert_eq!(cfg.orientation, Orientation::NewUser);
        assert!(cfg.fisher_z);
        assert_eq!(cfg.tau, Some(0.5));
        assert_eq!(cfg.profile_name(), "movielens.new_user");
    }

    #[test]
    fn missing_input_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("absent.toml");
        let code = run(["twincal", "calibrate", "--config", missing.to_str().unwrap()]);
        assert_eq!(code, 2);
        let j = error_json("calibrate", &Error::MissingInput(missing.clone()));
        let v: serde_json::Value = serde_json::from_str(&j).unwrap();
        assert_eq!(v["kind"], "missing_input");
        assert_eq!(v["path"], missing.display().to_string());
    }
}
