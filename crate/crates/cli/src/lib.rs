//! The `prefalign` command line: synthetic data, judge training, pair
//! construction, DPO, evaluation and the ablation studies, all driven by one
//! TOML config and one master seed.

use std::fmt;
use std::path::PathBuf;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

pub mod commands;
pub mod config;

use commands::Study;
use config::Mode;

#[derive(Debug)]
pub enum CliError {
    /// Bad config or input content. Exit code 2.
    Config(String),
    /// Unreadable or unwritable path. Exit code 3.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<prefalign::Error> for CliError {
    fn from(e: prefalign::Error) -> Self {
        match e {
            prefalign::Error::Io { .. } => CliError::Io(e.to_string()),
            e => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "prefalign", version, about = "Desk-scale preference alignment pipeline")]
pub struct Cli {
    /// TOML run config; flags and --key=value overrides take precedence
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed (overrides `seed`)
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Worker threads (overrides `workers`); outputs do not depend on it
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    /// Output directory, which must exist (overrides `out`)
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write prompts with reference-model candidate pools, judge supervision
    /// files and the reference model
    Gen,
    /// Train the learned multi-task judge on judge_train.jsonl
    TrainJudge,
    /// Build one preference pair per training pool
    Construct,
    /// DPO-train the policy (und) or diffusion model (gen) from the reference
    TrainDpo {
        #[arg(value_enum)]
        mode: Mode,
    },
    /// Judge accuracies, win rate, sample quality and implicit margins
    Eval,
    /// Run one of the ablation studies
    Ablate {
        #[arg(value_enum)]
        study: Study,
    },
}

const GLOBAL_KEYS: [&str; 4] = ["seed", "workers", "out", "input"];

fn sections(cmd: &str) -> Vec<&'static str> {
    let mut s = GLOBAL_KEYS.to_vec();
    s.extend_from_slice(match cmd {
        "gen" => &["mode", "data", "und_scenario", "gen_scenario", "construct.n_candidates"][..],
        "train-judge" => &["mode", "und_scenario", "gen_scenario", "learned_judge", "budget"],
        "construct" => &["construct", "judge"],
        "train-dpo" => &["und_dpo", "gen_dpo"],
        "eval" => &["mode", "und_scenario", "gen_scenario", "construct", "judge", "und_dpo.beta_u", "gen_dpo", "eval"],
        _ => &["ablate"],
    });
    s
}

fn command() -> clap::Command {
    let mut cmd = Cli::command().after_help("Any config key can be overridden with --key=value, e.g. --und_dpo.learning_rate=0.5.");
    for name in ["gen", "train-judge", "construct", "train-dpo", "eval", "ablate"] {
        let help = config::key_listing(&sections(name));
        cmd = cmd.mut_subcommand(name, |c| c.after_help(help));
    }
    cmd
}

/// Splits `--key=value` config overrides from the arguments clap parses.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let flags = ["config", "seed", "workers", "out", "help", "version"];
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for (i, a) in args.into_iter().enumerate() {
        let kv = a.strip_prefix("--").and_then(|s| s.split_once('='));
        match kv {
            Some((k, v)) if i > 0 && !flags.contains(&k) => overrides.push((k.to_string(), v.to_string())),
            _ => rest.push(a),
        }
    }
    (rest, overrides)
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run(args: Vec<String>) -> i32 {
    let (args, overrides) = split_overrides(args);
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    match execute(&cli, &overrides) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli, overrides: &[(String, String)]) -> Result<(), CliError> {
    let mut cfg = config::load(cli.config.as_deref(), overrides)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if cfg.workers == 0 {
        return Err(CliError::Config("workers: must be at least 1".into()));
    }
    match &cli.command {
        Command::Gen => commands::gen(&cfg),
        Command::TrainJudge => commands::train_judge_cmd(&cfg),
        Command::Construct => commands::construct(&cfg),
        Command::TrainDpo { mode } => commands::train_dpo(&cfg, *mode),
        Command::Eval => commands::eval(&cfg),
        Command::Ablate { study } => commands::ablate(&cfg, *study),
    }
}
