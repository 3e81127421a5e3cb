//! Run configuration: TOML file, then flags, then `--key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use prefalign::construct::ConstructConfig;
use prefalign::dpo::{GenDpoConfig, UndDpoConfig};
use prefalign::eval::{PoolGenConfig, TaskFamilyConfig};
use prefalign::judge::{JudgeConfig, TrainBudget};
use prefalign::prefdata::{Strategy, TaskTag};
use prefalign::scenario::{GenScenarioConfig, UndScenarioConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Und,
    Gen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed. Every other seed is derived from it.
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    /// Directory inputs are read from; empty means `out`.
    pub input: PathBuf,
    /// Which toy scenario `gen`, `construct` and `eval` work on.
    pub mode: Mode,
    pub data: DataConfig,
    pub und_scenario: UndScenarioConfig,
    pub gen_scenario: GenScenarioConfig,
    pub construct: ConstructConfig,
    pub judge: JudgeConfig,
    pub learned_judge: LearnedJudgeConfig,
    pub budget: TrainBudget,
    pub und_dpo: UndDpoConfig,
    pub gen_dpo: GenDpoConfig,
    pub eval: EvalConfig,
    pub ablate: AblateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            workers: 1,
            out: PathBuf::from("out"),
            input: PathBuf::new(),
            mode: Mode::Und,
            data: DataConfig::default(),
            und_scenario: UndScenarioConfig::default(),
            gen_scenario: GenScenarioConfig::default(),
            construct: ConstructConfig::default(),
            judge: JudgeConfig::default(),
            learned_judge: LearnedJudgeConfig::default(),
            budget: TrainBudget::default(),
            und_dpo: UndDpoConfig::default(),
            gen_dpo: GenDpoConfig::default(),
            eval: EvalConfig::default(),
            ablate: AblateConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train_prompts: usize,
    pub heldout_prompts: usize,
    /// Prompts in each of the judge train and test files.
    pub judge_prompts: usize,
    /// Inverse temperature of the judge-file pairwise labels.
    pub judge_sharpness: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_prompts: 500,
            heldout_prompts: 200,
            judge_prompts: 400,
            judge_sharpness: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnedJudgeConfig {
    pub hidden_dim: usize,
    /// Task heads to create; empty means the scenario's own task.
    pub tasks: Vec<TaskTag>,
}

impl Default for LearnedJudgeConfig {
    fn default() -> Self {
        LearnedJudgeConfig { hidden_dim: 4, tasks: vec![] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Timesteps in the diffusion margin grid.
    pub margin_grid: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { margin_grid: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    pub strategy: StrategyStudyConfig,
    pub synergy: TaskFamilyConfig,
    pub imbalance: ImbalanceStudyConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyStudyConfig {
    pub trials: usize,
    pub strategies: Vec<Strategy>,
    pub pools: PoolGenConfig,
    pub judge: JudgeConfig,
}

impl Default for StrategyStudyConfig {
    fn default() -> Self {
        StrategyStudyConfig {
            trials: 10_000,
            strategies: Strategy::ALL.to_vec(),
            pools: PoolGenConfig::default(),
            judge: JudgeConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImbalanceStudyConfig {
    pub fixed_task: TaskTag,
    /// Pairs per task in the balanced condition.
    pub base: usize,
    pub factor: usize,
    pub family: TaskFamilyConfig,
}

impl Default for ImbalanceStudyConfig {
    fn default() -> Self {
        ImbalanceStudyConfig {
            fixed_task: TaskTag::VideoGeneration,
            base: 50,
            factor: 8,
            family: TaskFamilyConfig {
                shared_weight: 0.5,
                ..Default::default()
            },
        }
    }
}

impl RunConfig {
    pub fn input_dir(&self) -> &Path {
        if self.input.as_os_str().is_empty() {
            &self.out
        } else {
            &self.input
        }
    }
}

/// Reads `path` (if any), applies `overrides` in order and deserializes.
pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig, CliError> {
    let mut tree = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    if let Some(path) = path {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let file: toml::Table = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let file = serde_json::to_value(file).expect("toml maps to json");
        merge(&mut tree, file, "")?;
    }
    for (key, raw) in overrides {
        set_key(&mut tree, key, parse_value(raw))?;
    }
    serde_json::from_value(tree).map_err(|e| CliError::Config(format!("config: {e}")))
}

fn merge(base: &mut Value, over: Value, prefix: &str) -> Result<(), CliError> {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &path)?,
                    None => return Err(CliError::Config(format!("unknown config key `{path}`"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

fn set_key(tree: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let unknown = || CliError::Config(format!("unknown config key `{key}`"));
        let obj = node.as_object_mut().ok_or_else(unknown)?;
        let slot = obj.get_mut(*part).ok_or_else(unknown)?;
        if i + 1 == parts.len() {
            if slot.is_object() {
                return Err(CliError::Config(format!("`{key}` is a section; set one of its keys")));
            }
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    unreachable!("split yields at least one part")
}

/// A TOML literal if it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .map(|v| serde_json::to_value(v).expect("toml maps to json"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Dotted keys under the given sections with their defaults, one per line.
pub fn key_listing(sections: &[&str]) -> String {
    let tree = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    let mut lines = Vec::new();
    flatten(&tree, "", &mut lines);
    let keep = |k: &str| sections.iter().any(|s| k == *s || k.starts_with(&format!("{s}.")));
    let lines: Vec<String> = lines.into_iter().filter(|(k, _)| keep(k)).map(|(k, v)| format!("  --{k}={v}")).collect();
    format!("Config keys (set in the file or override with --key=value):\n{}", lines.join("\n"))
}

fn flatten(v: &Value, prefix: &str, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) => flatten_map(m, prefix, out),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn flatten_map(m: &Map<String, Value>, prefix: &str, out: &mut Vec<(String, String)>) {
    for (k, v) in m {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        flatten(v, &path, out);
    }
}
