//! Seeded toy worlds for end-to-end runs.
//!
//! An [`UndScenario`] pairs a hidden teacher policy (the oracle) with a
//! near-uniform reference policy; a [`GenScenario`] pairs a Gaussian quality
//! bump with the exact denoiser for standard-normal data. Everything is a pure
//! function of the config and one seed.

use serde::{Deserialize, Serialize};

use crate::construct::{batch_construct, ConstructConfig};
use crate::dpo::DpoTriple;
use crate::judge::Judge;
use crate::prefdata::{Candidate, Dataset, PairwiseRecord, PointwiseRecord, Prompt, Record, ScoreScale, TaskTag, Verdict};
use crate::seed::{derive, derived_rng};
use crate::stats::logistic;
use crate::toymodels::{
    build_schedule, gen_candidates, standard_normal_vec, CandidateSource, DiffusionParams, NoiseSchedule, OracleSpec, PolicyParams,
    SequenceTarget, VectorTarget,
};
use crate::{keys, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UndScenarioConfig {
    pub task: TaskTag,
    pub seq_len: usize,
    pub vocab: usize,
    pub prompt_dim: usize,
    pub teacher_scale: f64,
    pub reference_scale: f64,
}

impl Default for UndScenarioConfig {
    fn default() -> Self {
        UndScenarioConfig {
            task: TaskTag::ImageUnderstanding,
            seq_len: 6,
            vocab: 4,
            prompt_dim: 4,
            teacher_scale: 1.0,
            reference_scale: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenScenarioConfig {
    pub task: TaskTag,
    pub horizon: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Center of the oracle's quality bump; its length sets the dimension.
    pub target_center: Vec<f64>,
    pub target_width: f64,
    /// Prompt features are carried for the judge only; the model ignores them.
    pub prompt_dim: usize,
}

impl Default for GenScenarioConfig {
    fn default() -> Self {
        GenScenarioConfig {
            task: TaskTag::ImageGeneration,
            horizon: 50,
            beta_min: 1e-4,
            beta_max: 0.02,
            target_center: vec![1.0, 0.5],
            target_width: 1.0,
            prompt_dim: 1,
        }
    }
}

/// Which side of the toy is being exercised.
#[derive(Clone, Debug, PartialEq)]
pub enum Scenario {
    Und(UndScenario),
    Gen(GenScenario),
}

#[derive(Clone, Debug, PartialEq)]
pub struct UndScenario {
    pub config: UndScenarioConfig,
    pub seed: u64,
    pub oracle: OracleSpec,
    pub reference: PolicyParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenScenario {
    pub config: GenScenarioConfig,
    pub seed: u64,
    pub oracle: OracleSpec,
    pub schedule: NoiseSchedule,
    pub reference: DiffusionParams,
}

impl UndScenario {
    pub fn new(config: &UndScenarioConfig, seed: u64) -> Result<Self> {
        let c = config;
        if c.task.is_generation() {
            return Err(Error::config("task", "understanding scenario needs an understanding task"));
        }
        if c.seq_len == 0 || c.vocab < 2 || c.prompt_dim == 0 {
            return Err(Error::config("seq_len/vocab/prompt_dim", "need seq_len ≥ 1, vocab ≥ 2, prompt_dim ≥ 1"));
        }
        let teacher = PolicyParams::random(c.seq_len, c.vocab, c.prompt_dim, c.teacher_scale, &mut derived_rng(seed, keys!["teacher"]));
        let reference = PolicyParams::random(c.seq_len, c.vocab, c.prompt_dim, c.reference_scale, &mut derived_rng(seed, keys!["reference"]));
        Ok(UndScenario {
            config: c.clone(),
            seed,
            oracle: OracleSpec {
                sequence: Some(SequenceTarget { teacher }),
                vector: None,
            },
            reference,
        })
    }
}

impl GenScenario {
    pub fn new(config: &GenScenarioConfig, seed: u64) -> Result<Self> {
        let c = config;
        if !c.task.is_generation() {
            return Err(Error::config("task", "generation scenario needs a generation task"));
        }
        if c.target_center.is_empty() {
            return Err(Error::config("target_center", "must be non-empty"));
        }
        if !(c.target_width > 0.0) {
            return Err(Error::config("target_width", "must be positive"));
        }
        if c.prompt_dim == 0 {
            return Err(Error::config("prompt_dim", "must be at least 1"));
        }
        let schedule = build_schedule(c.horizon, c.beta_min, c.beta_max)?;
        let reference = DiffusionParams::gaussian_denoiser(&schedule, &vec![0.0; c.target_center.len()], 1.0);
        Ok(GenScenario {
            config: c.clone(),
            seed,
            oracle: OracleSpec {
                sequence: None,
                vector: Some(VectorTarget::fixed(c.target_center.clone(), c.target_width)),
            },
            schedule,
            reference,
        })
    }
}

impl Scenario {
    pub fn oracle(&self) -> &OracleSpec {
        match self {
            Scenario::Und(s) => &s.oracle,
            Scenario::Gen(s) => &s.oracle,
        }
    }

    fn seed(&self) -> u64 {
        match self {
            Scenario::Und(s) => s.seed,
            Scenario::Gen(s) => s.seed,
        }
    }

    pub fn task(&self) -> TaskTag {
        match self {
            Scenario::Und(s) => s.config.task,
            Scenario::Gen(s) => s.config.task,
        }
    }

    pub fn prompt_dim(&self) -> usize {
        match self {
            Scenario::Und(s) => s.config.prompt_dim,
            Scenario::Gen(s) => s.config.prompt_dim,
        }
    }

    /// Payload dimension seen by a learned judge.
    pub fn content_dim(&self) -> usize {
        match self {
            Scenario::Und(s) => s.config.vocab,
            Scenario::Gen(s) => s.config.target_center.len(),
        }
    }

    /// Prompt `i` of a named split.
    pub fn prompt(&self, split: &str, i: usize) -> Prompt {
        let mut rng = derived_rng(self.seed(), keys!["prompt", split, i]);
        Prompt::new(format!("{split}-{i:05}"), self.task(), standard_normal_vec(self.prompt_dim(), &mut rng))
    }

    pub fn prompts(&self, split: &str, n: usize) -> Vec<Prompt> {
        (0..n).map(|i| self.prompt(split, i)).collect()
    }

    /// `n` candidates sampled from the reference model.
    pub fn pool(&self, prompt: &Prompt, n: usize) -> Result<Vec<Candidate>> {
        let mut rng = derived_rng(self.seed(), keys!["pool", &prompt.id]);
        let source = match self {
            Scenario::Und(s) => CandidateSource::Policy(&s.reference),
            Scenario::Gen(s) => CandidateSource::Diffusion {
                params: &s.reference,
                schedule: &s.schedule,
            },
        };
        gen_candidates(prompt, n, source, self.oracle(), &mut rng)
    }

    /// Prompts and reference-model pools as a record dataset.
    pub fn pool_dataset(&self, split: &str, n_prompts: usize, n_candidates: usize) -> Result<Dataset> {
        let mut ds = Dataset::new();
        for p in self.prompts(split, n_prompts) {
            let pool = self.pool(&p, n_candidates)?;
            ds.push(Record::Prompt(p));
            ds.extend(pool.into_iter().map(Record::Candidate));
        }
        Ok(ds)
    }

    /// Judge supervision: for each prompt, two reference samples with a
    /// Bradley–Terry label of sharpness `sharpness` on the quality gap, and a
    /// 1–5 pointwise score for each.
    pub fn judge_dataset(&self, split: &str, n_prompts: usize, sharpness: f64) -> Result<Dataset> {
        let scale = ScoreScale::new(1.0, 5.0, "1-5")?;
        let mut ds = Dataset::new();
        for p in self.prompts(split, n_prompts) {
            let pool = self.pool(&p, 2)?;
            let (a, b) = (&pool[0], &pool[1]);
            let u = crate::seed::unit_f64(derive(self.seed(), keys!["judge-label", &p.id]));
            let verdict = if u < logistic(sharpness * (a.latent_quality - b.latent_quality)) {
                Verdict::First
            } else {
                Verdict::Second
            };
            let pw = PairwiseRecord::new(&p.id, &a.id, &b.id, p.task.subject(), verdict);
            let points = pool
                .iter()
                .map(|c| PointwiseRecord::new(&p.id, &c.id, 1.0 + 4.0 * c.latent_quality, scale.clone()))
                .collect::<Result<Vec<_>>>()?;
            ds.push(Record::Prompt(p));
            ds.extend(pool.into_iter().map(Record::Candidate));
            ds.push(Record::Pairwise(pw));
            ds.extend(points.into_iter().map(Record::Pointwise));
        }
        Ok(ds)
    }
}

/// Builds one preference pair per pool and resolves them into training
/// triples. Pools whose chosen and rejected outputs coincide are skipped.
pub fn construct_triples(pools: &[(Prompt, Vec<Candidate>)], judge: &dyn Judge, config: &ConstructConfig, workers: usize) -> Result<Vec<DpoTriple>> {
    let out = batch_construct(pools, judge, config, workers);
    if let Some((id, e)) = out.failures.into_iter().next() {
        return Err(Error::config("construct", format!("prompt {id}: {e}")));
    }
    let mut triples = Vec::with_capacity(out.pairs.len());
    for (pair, (prompt, pool)) in out.pairs.iter().zip(pools) {
        let get = |id: &str| pool.iter().find(|c| c.id == id).map(|c| c.payload.clone()).ok_or_else(|| Error::UnresolvedId(id.to_string()));
        if let Ok(t) = DpoTriple::new(prompt.clone(), get(&pair.chosen_id)?, get(&pair.rejected_id)?) {
            triples.push(t);
        }
    }
    Ok(triples)
}
