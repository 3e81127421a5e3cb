//! Browser bindings. Each export takes plain numbers and returns a JSON
//! string for the page to plot.

use prefalign::dpo::{train_gen_dpo, train_und_dpo, GenDpoConfig, UndDpoConfig};
use prefalign::eval::{run_strategy_ablation, win_rate, PoolGenConfig};
use prefalign::judge::{JudgeConfig, OracleJudge};
use prefalign::keys;
use prefalign::construct::ConstructConfig;
use prefalign::prefdata::{Prompt, Strategy, TaskTag};
use prefalign::scenario::{construct_triples, GenScenario, GenScenarioConfig, Scenario, UndScenario, UndScenarioConfig};
use prefalign::seed::{derive, derived_rng};
use prefalign::toymodels::{build_schedule, oracle_quality, DiffusionSampler, Sampler};
use serde_json::json;
use wasm_bindgen::prelude::*;

type Result<T> = std::result::Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// β_t, ᾱ_t and the signal-to-noise ratio ᾱ/(1−ᾱ) for t = 1..=T.
pub fn schedule_curves_json(horizon: usize, beta_min: f64, beta_max: f64) -> Result<String> {
    let s = build_schedule(horizon, beta_min, beta_max).map_err(err)?;
    let ts: Vec<usize> = (1..=horizon).collect();
    let ab: Vec<f64> = ts.iter().map(|&t| s.alpha_bar(t)).collect();
    Ok(json!({
        "t": ts,
        "beta": ts.iter().map(|&t| s.beta(t)).collect::<Vec<_>>(),
        "alpha_bar": ab,
        "snr": ab.iter().map(|a| a / (1.0 - a)).collect::<Vec<_>>(),
    })
    .to_string())
}

/// Mean quality gap per selection strategy under a noisy judge.
pub fn strategy_ablation_json(tau: f64, sigma_noise: f64, n_candidates: usize, trials: usize, seed: u64) -> Result<String> {
    let judge = JudgeConfig {
        tau,
        sigma_noise,
        ..Default::default()
    };
    let pools = PoolGenConfig {
        n_candidates,
        ..Default::default()
    };
    let report = run_strategy_ablation(&pools, &judge, &Strategy::ALL, trials, seed, 1).map_err(err)?;
    let rows: Vec<_> = report
        .rows
        .iter()
        .map(|r| json!({"label": r.label, "mean": r.mean, "stderr": r.stderr, "n": r.n}))
        .collect();
    Ok(json!({ "rows": rows }).to_string())
}

/// Trains on oracle-built pairs and reports the loss trace plus a before and
/// after score: win rate against the reference for `und`, mean sample quality
/// for `gen`.
pub fn dpo_curve_json(mode: &str, n_pairs: usize, learning_rate: f64, epochs: usize, seed: u64) -> Result<String> {
    let construct = ConstructConfig {
        seed: derive(seed, keys!["construct"]),
        ..Default::default()
    };
    let pools = |s: &Scenario, split: &str, n: usize| -> Result<Vec<_>> {
        s.prompts(split, n)
            .into_iter()
            .map(|p| {
                let pool = s.pool(&p, construct.n_candidates).map_err(err)?;
                Ok((p, pool))
            })
            .collect()
    };
    match mode {
        "und" => {
            let sc = UndScenario::new(&UndScenarioConfig::default(), seed).map_err(err)?;
            let s = Scenario::Und(sc.clone());
            let triples = construct_triples(&pools(&s, "train", n_pairs)?, &OracleJudge, &construct, 1).map_err(err)?;
            let cfg = UndDpoConfig {
                learning_rate,
                epochs,
                seed,
                ..Default::default()
            };
            let (theta, trace) = train_und_dpo(&sc.reference, &triples, &cfg).map_err(err)?;
            let held = s.prompts("heldout", 200);
            let wr = |m: &dyn Sampler| win_rate(m, &sc.reference, &held, &sc.oracle, derive(seed, keys!["win"])).map_err(err);
            Ok(json!({
                "loss": trace.iter().map(|t| t.loss).collect::<Vec<_>>(),
                "metric": "win rate vs reference",
                "before": wr(&sc.reference)?,
                "after": wr(&theta)?,
            })
            .to_string())
        }
        "gen" => {
            let sc = GenScenario::new(&GenScenarioConfig::default(), seed).map_err(err)?;
            let s = Scenario::Gen(sc.clone());
            let triples = construct_triples(&pools(&s, "train", n_pairs)?, &OracleJudge, &construct, 1).map_err(err)?;
            let cfg = GenDpoConfig {
                learning_rate,
                epochs,
                seed,
                ..Default::default()
            };
            let (theta, trace) = train_gen_dpo(&sc.reference, &triples, &sc.schedule, &cfg).map_err(err)?;
            let prompt = Prompt::new("sample", TaskTag::ImageGeneration, vec![0.0]);
            let quality = |p| -> Result<f64> {
                let sampler = DiffusionSampler { params: p, schedule: &sc.schedule };
                let mut total = 0.0;
                for i in 0..500usize {
                    let y = sampler.sample(&prompt, &mut derived_rng(seed, keys!["sample", i])).map_err(err)?;
                    total += oracle_quality(&sc.oracle, &prompt, &y).map_err(err)?;
                }
                Ok(total / 500.0)
            };
            Ok(json!({
                "loss": trace.iter().map(|t| t.loss).collect::<Vec<_>>(),
                "metric": "mean sample quality",
                "before": quality(&sc.reference)?,
                "after": quality(&theta)?,
            })
            .to_string())
        }
        other => Err(format!("mode must be \"und\" or \"gen\", got {other:?}")),
    }
}

#[wasm_bindgen]
pub fn schedule_curves(horizon: usize, beta_min: f64, beta_max: f64) -> std::result::Result<String, JsError> {
    schedule_curves_json(horizon, beta_min, beta_max).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn strategy_ablation(tau: f64, sigma_noise: f64, n_candidates: usize, trials: usize, seed: u64) -> std::result::Result<String, JsError> {
    strategy_ablation_json(tau, sigma_noise, n_candidates, trials, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn dpo_curve(mode: &str, n_pairs: usize, learning_rate: f64, epochs: usize, seed: u64) -> std::result::Result<String, JsError> {
    dpo_curve_json(mode, n_pairs, learning_rate, epochs, seed).map_err(|e| JsError::new(&e))
}
