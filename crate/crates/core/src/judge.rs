//! Judges: pairwise ranking plus pointwise scoring.
//!
//! Three implementations share the [`Judge`] trait:
//!
//! * [`OracleJudge`] reads the hidden latent quality directly.
//! * [`NoisyJudge`] ranks with Bradley–Terry noise `P(a ≻ b) = σ((q_a − q_b)/τ)`
//!   and scores with clamped Gaussian noise. Its randomness is a pure function
//!   of `(seed, prompt id, candidate ids)`, so asking the same question twice
//!   gives the same answer.
//! * [`LearnedJudge`] is a bilinear multi-task scorer `s = head_task · (W x)`
//!   trained with cross-entropy on the verdict and squared error on normalized
//!   point scores.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::matfile::MatrixFile;
use crate::prefdata::{normalize_point_score, Candidate, Dataset, Payload, Prompt, TaskTag, Verdict};
use crate::seed::{self, derive, derived_rng, unit_f64};
use crate::stats::{dot, logistic, neg_log_sigmoid};
use crate::{keys, Error, Result};

pub trait Judge: Send + Sync {
    fn rank_pair(&self, prompt: &Prompt, a: &Candidate, b: &Candidate) -> Result<Verdict>;
    fn score(&self, prompt: &Prompt, a: &Candidate) -> Result<f64>;
}

fn check_member(prompt: &Prompt, c: &Candidate) -> Result<()> {
    if c.prompt_id != prompt.id {
        return Err(Error::PromptMismatch {
            expected: prompt.id.clone(),
            found: c.prompt_id.clone(),
        });
    }
    Ok(())
}

fn check_pair(prompt: &Prompt, a: &Candidate, b: &Candidate) -> Result<()> {
    check_member(prompt, a)?;
    check_member(prompt, b)?;
    if a.id == b.id {
        return Err(Error::DuplicateId(a.id.clone()));
    }
    Ok(())
}

/// Strict comparison with ties going to the lower candidate id.
fn verdict_by_score(sa: f64, sb: f64, a: &Candidate, b: &Candidate) -> Verdict {
    if sa > sb || (sa == sb && a.id < b.id) {
        Verdict::First
    } else {
        Verdict::Second
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct OracleJudge;

impl Judge for OracleJudge {
    fn rank_pair(&self, prompt: &Prompt, a: &Candidate, b: &Candidate) -> Result<Verdict> {
        check_pair(prompt, a, b)?;
        Ok(verdict_by_score(a.latent_quality, b.latent_quality, a, b))
    }

    fn score(&self, prompt: &Prompt, a: &Candidate) -> Result<f64> {
        check_member(prompt, a)?;
        Ok(a.latent_quality)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoisyJudge {
    pub tau: f64,
    pub sigma_noise: f64,
    pub seed: u64,
}

impl NoisyJudge {
    pub fn new(tau: f64, sigma_noise: f64, seed: u64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::config("tau", "must be positive"));
        }
        if !(sigma_noise >= 0.0) {
            return Err(Error::config("sigma_noise", "must be non-negative"));
        }
        Ok(NoisyJudge { tau, sigma_noise, seed })
    }

    /// Probability that `a` is ranked first.
    pub fn p_first(&self, a: &Candidate, b: &Candidate) -> f64 {
        logistic((a.latent_quality - b.latent_quality) / self.tau)
    }
}

impl Judge for NoisyJudge {
    fn rank_pair(&self, prompt: &Prompt, a: &Candidate, b: &Candidate) -> Result<Verdict> {
        check_pair(prompt, a, b)?;
        let u = unit_f64(derive(self.seed, keys!["rank", &prompt.id, &a.id, &b.id]));
        Ok(if u < self.p_first(a, b) { Verdict::First } else { Verdict::Second })
    }

    fn score(&self, prompt: &Prompt, a: &Candidate) -> Result<f64> {
        check_member(prompt, a)?;
        let mut rng = derived_rng(self.seed, keys!["score", &prompt.id, &a.id]);
        let z: f64 = StandardNormal.sample(&mut rng);
        Ok((a.latent_quality + self.sigma_noise * z).clamp(0.0, 1.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JudgeKind {
    Oracle,
    Noisy,
    Learned,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JudgeConfig {
    pub kind: JudgeKind,
    pub tau: f64,
    pub sigma_noise: f64,
    pub seed: u64,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        JudgeConfig {
            kind: JudgeKind::Noisy,
            tau: 0.3,
            sigma_noise: 0.15,
            seed: 0,
        }
    }
}

impl JudgeConfig {
    pub fn validate(&self) -> Result<()> {
        NoisyJudge::new(self.tau, self.sigma_noise, self.seed).map(|_| ())
    }

    /// Builds the configured judge. `learned` is required for the learned kind.
    pub fn build(&self, learned: Option<LearnedJudgeParams>) -> Result<Box<dyn Judge>> {
        self.validate()?;
        Ok(match self.kind {
            JudgeKind::Oracle => Box::new(OracleJudge),
            JudgeKind::Noisy => Box::new(NoisyJudge::new(self.tau, self.sigma_noise, self.seed)?),
            JudgeKind::Learned => Box::new(LearnedJudge::new(
                learned.ok_or_else(|| Error::config("judge.kind", "learned judge needs trained parameters"))?,
            )),
        })
    }
}

/// Shared backbone `W` (`hidden × feature`) and one head per task.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnedJudgeParams {
    /// Payload part of the feature vector: vector dimension, or vocabulary
    /// size for token histograms.
    pub content_dim: usize,
    pub prompt_dim: usize,
    pub hidden_dim: usize,
    /// `[hidden][content_dim + prompt_dim]`.
    pub backbone: Vec<f64>,
    pub heads: BTreeMap<TaskTag, Vec<f64>>,
}

impl LearnedJudgeParams {
    pub fn feature_dim(&self) -> usize {
        self.content_dim + self.prompt_dim
    }

    pub fn init(content_dim: usize, prompt_dim: usize, hidden_dim: usize, tasks: &[TaskTag], seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let f = content_dim + prompt_dim;
        let scale = 1.0 / (f as f64).sqrt();
        let backbone = (0..hidden_dim * f)
            .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        // every head starts at the same positive vector, so tasks that agree
        // never have to push a head through zero
        let head = vec![1.0 / (hidden_dim as f64).sqrt(); hidden_dim];
        let heads = tasks.iter().map(|&t| (t, head.clone())).collect();
        LearnedJudgeParams {
            content_dim,
            prompt_dim,
            hidden_dim,
            backbone,
            heads,
        }
    }

    pub fn head(&self, task: TaskTag) -> Result<&[f64]> {
        self.heads
            .get(&task)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownTask(task.to_string()))
    }

    /// Candidate features: the payload (a vector, or the mean one-hot over
    /// positions for sequences) followed by the prompt features.
    pub fn features(&self, prompt: &Prompt, c: &Candidate) -> Result<Vec<f64>> {
        if prompt.features.len() != self.prompt_dim {
            return Err(Error::shape(format!("prompt {} features vs judge prompt_dim {}", prompt.id, self.prompt_dim)));
        }
        let mut x = match &c.payload {
            Payload::Vector(v) => {
                if v.len() != self.content_dim {
                    return Err(Error::shape(format!("payload dim {} vs judge {}", v.len(), self.content_dim)));
                }
                v.clone()
            }
            Payload::Tokens(t) => {
                let mut h = vec![0.0; self.content_dim];
                for &tok in t {
                    *h.get_mut(tok)
                        .ok_or_else(|| Error::shape(format!("token {tok} beyond judge vocabulary")))? += 1.0;
                }
                let n = t.len().max(1) as f64;
                h.iter_mut().for_each(|v| *v /= n);
                h
            }
        };
        x.extend_from_slice(&prompt.features);
        Ok(x)
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        let f = self.feature_dim();
        (0..self.hidden_dim).map(|j| dot(&self.backbone[j * f..(j + 1) * f], x)).collect()
    }

    pub fn score_features(&self, task: TaskTag, x: &[f64]) -> Result<f64> {
        Ok(dot(self.head(task)?, &self.hidden(x)))
    }

    pub fn to_matrix_file(&self) -> MatrixFile {
        let mut f = MatrixFile::new("learned-judge");
        let tasks: Vec<&str> = self.heads.keys().map(|t| t.as_str()).collect();
        f.set("feature_dim", self.feature_dim())
            .set("content_dim", self.content_dim)
            .set("prompt_dim", self.prompt_dim)
            .set("hidden_dim", self.hidden_dim)
            .set("tasks", tasks.join(","));
        f.push("backbone", self.hidden_dim, self.feature_dim(), self.backbone.clone());
        for (t, h) in &self.heads {
            f.push(format!("head.{t}"), 1, self.hidden_dim, h.clone());
        }
        f
    }

    pub fn from_matrix_file(f: &MatrixFile) -> Result<Self> {
        f.expect_kind("learned-judge")?;
        let content_dim: usize = f.get_parsed("content_dim")?;
        let prompt_dim: usize = f.get_parsed("prompt_dim")?;
        let hidden_dim: usize = f.get_parsed("hidden_dim")?;
        let feature_dim: usize = f.get_parsed("feature_dim")?;
        if feature_dim != content_dim + prompt_dim {
            return Err(Error::MatrixFormat("feature_dim != content_dim + prompt_dim".into()));
        }
        let backbone = f.matrix("backbone", hidden_dim, feature_dim)?.to_vec();
        let mut heads = BTreeMap::new();
        for name in f.get("tasks")?.split(',').filter(|s| !s.is_empty()) {
            let task: TaskTag = name.parse()?;
            heads.insert(task, f.matrix(&format!("head.{name}"), 1, hidden_dim)?.to_vec());
        }
        Ok(LearnedJudgeParams {
            content_dim,
            prompt_dim,
            hidden_dim,
            backbone,
            heads,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnedJudge {
    pub params: LearnedJudgeParams,
}

impl LearnedJudge {
    pub fn new(params: LearnedJudgeParams) -> Self {
        LearnedJudge { params }
    }
}

impl Judge for LearnedJudge {
    fn rank_pair(&self, prompt: &Prompt, a: &Candidate, b: &Candidate) -> Result<Verdict> {
        check_pair(prompt, a, b)?;
        let sa = self.score(prompt, a)?;
        let sb = self.score(prompt, b)?;
        Ok(verdict_by_score(sa, sb, a, b))
    }

    fn score(&self, prompt: &Prompt, a: &Candidate) -> Result<f64> {
        check_member(prompt, a)?;
        let p = &self.params;
        p.head(prompt.task)?;
        p.score_features(prompt.task, &p.features(prompt, a)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainBudget {
    /// Upper bound on SGD updates.
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Upper bound on passes over the data; training stops at whichever bound
    /// is reached first.
    pub epochs: usize,
}

impl Default for TrainBudget {
    fn default() -> Self {
        TrainBudget {
            steps: usize::MAX,
            learning_rate: 0.05,
            batch_size: 8,
            epochs: 3,
        }
    }
}

impl TrainBudget {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        Ok(())
    }

    /// Total updates this budget performs on `n_items` items.
    pub fn total_steps(&self, n_items: usize) -> usize {
        let per_epoch = n_items.div_ceil(self.batch_size);
        self.steps.min(per_epoch.saturating_mul(self.epochs))
    }
}

/// One supervised item with precomputed features.
#[derive(Clone, Debug, PartialEq)]
pub enum JudgeItem {
    /// `first_wins` is the label for `σ(s_first − s_second)`.
    Pair {
        task: TaskTag,
        first: Vec<f64>,
        second: Vec<f64>,
        first_wins: bool,
    },
    Point {
        task: TaskTag,
        x: Vec<f64>,
        target: f64,
    },
}

impl JudgeItem {
    pub fn task(&self) -> TaskTag {
        match self {
            JudgeItem::Pair { task, .. } | JudgeItem::Point { task, .. } => *task,
        }
    }
}

/// Per-task cap on the number of items used, taken in dataset order. Tasks
/// not listed are used in full.
pub type TaskMix = BTreeMap<TaskTag, usize>;

/// Turns the pairwise and pointwise records of `data` into training items.
pub fn judge_items(data: &Dataset, params: &LearnedJudgeParams, task_mix: &TaskMix) -> Result<Vec<JudgeItem>> {
    let prompts = data.prompt_index();
    let cands = data.candidate_index();
    let lookup = |id: &String| cands.get(id.as_str()).copied().ok_or_else(|| Error::UnresolvedId(id.clone()));
    let prompt_of = |id: &String| prompts.get(id.as_str()).copied().ok_or_else(|| Error::UnresolvedId(id.clone()));
    let mut used: HashMap<TaskTag, usize> = HashMap::new();
    let mut take = |task: TaskTag| {
        let n = used.entry(task).or_default();
        let ok = task_mix.get(&task).map_or(true, |&cap| *n < cap);
        if ok {
            *n += 1;
        }
        ok
    };
    let mut items = Vec::new();
    for r in data.pairwise() {
        let p = prompt_of(&r.prompt_id)?;
        params.head(p.task)?;
        if !take(p.task) {
            continue;
        }
        items.push(JudgeItem::Pair {
            task: p.task,
            first: params.features(p, lookup(&r.first_id)?)?,
            second: params.features(p, lookup(&r.second_id)?)?,
            first_wins: r.verdict == Verdict::First,
        });
    }
    for r in data.pointwise() {
        let p = prompt_of(&r.prompt_id)?;
        params.head(p.task)?;
        if !take(p.task) {
            continue;
        }
        items.push(JudgeItem::Point {
            task: p.task,
            x: params.features(p, lookup(&r.candidate_id)?)?,
            target: normalize_point_score(r.raw_score, &r.scale)?,
        });
    }
    Ok(items)
}

/// Gradient buffer laid out like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct JudgeGrad {
    pub backbone: Vec<f64>,
    pub heads: BTreeMap<TaskTag, Vec<f64>>,
}

/// Mean loss over `items` and its gradient.
///
/// Pairs use binary cross-entropy with `P(first) = σ(s_first − s_second)`;
/// points use `(s − target)²`.
pub fn judge_loss_grad(params: &LearnedJudgeParams, items: &[JudgeItem]) -> Result<(f64, JudgeGrad)> {
    if items.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let f = params.feature_dim();
    let mut grad = JudgeGrad {
        backbone: vec![0.0; params.backbone.len()],
        heads: params.heads.iter().map(|(&t, h)| (t, vec![0.0; h.len()])).collect(),
    };
    let inv_n = 1.0 / items.len() as f64;
    let mut loss = 0.0;
    for item in items {
        let task = item.task();
        let head = params.head(task)?;
        // the score is linear in x, so a pair reduces to the feature difference
        let (x, dl_ds, l) = match item {
            JudgeItem::Pair {
                first,
                second,
                first_wins,
                ..
            } => {
                let x: Vec<f64> = first.iter().zip(second).map(|(a, b)| a - b).collect();
                let margin = dot(head, &params.hidden(&x));
                let sign = if *first_wins { 1.0 } else { -1.0 };
                (x, -sign * logistic(-sign * margin), neg_log_sigmoid(sign * margin))
            }
            JudgeItem::Point { x, target, .. } => {
                let s = dot(head, &params.hidden(x));
                (x.clone(), 2.0 * (s - target), (s - target).powi(2))
            }
        };
        loss += l * inv_n;
        let hidden = params.hidden(&x);
        let c = dl_ds * inv_n;
        let gh = grad.heads.get_mut(&task).expect("same keys as params");
        for j in 0..params.hidden_dim {
            gh[j] += c * hidden[j];
            let row = &mut grad.backbone[j * f..(j + 1) * f];
            for (g, xk) in row.iter_mut().zip(&x) {
                *g += c * head[j] * xk;
            }
        }
    }
    Ok((loss, grad))
}

/// SGD on the judge. Returns the trained parameters and the per-step batch
/// loss. The item order of each epoch is drawn from `(seed, epoch)`.
pub fn train_judge(
    data: &Dataset,
    init: &LearnedJudgeParams,
    budget: &TrainBudget,
    task_mix: &TaskMix,
    seed: u64,
) -> Result<(LearnedJudgeParams, Vec<f64>)> {
    budget.validate()?;
    let items = judge_items(data, init, task_mix)?;
    train_judge_items(&items, init, budget, seed)
}

pub fn train_judge_items(
    items: &[JudgeItem],
    init: &LearnedJudgeParams,
    budget: &TrainBudget,
    seed: u64,
) -> Result<(LearnedJudgeParams, Vec<f64>)> {
    budget.validate()?;
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for it in items {
        init.head(it.task())?;
    }
    let mut params = init.clone();
    let total = budget.total_steps(items.len());
    let mut trace = Vec::with_capacity(total.min(1 << 20));
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut epoch = 0u64;
    let mut batch = Vec::with_capacity(budget.batch_size);
    while trace.len() < total {
        order.sort_unstable();
        order.shuffle(&mut derived_rng(seed, keys!["judge-epoch", epoch]));
        for chunk in order.chunks(budget.batch_size) {
            if trace.len() >= total {
                break;
            }
            batch.clear();
            batch.extend(chunk.iter().map(|&i| items[i].clone()));
            let (loss, g) = judge_loss_grad(&params, &batch)?;
            trace.push(loss);
            let lr = budget.learning_rate;
            for (w, gw) in params.backbone.iter_mut().zip(&g.backbone) {
                *w -= lr * gw;
            }
            for (t, gh) in &g.heads {
                let h = params.heads.get_mut(t).expect("same keys");
                for (w, gw) in h.iter_mut().zip(gh) {
                    *w -= lr * gw;
                }
            }
        }
        epoch += 1;
    }
    Ok((params, trace))
}

/// A held-out comparison with its ground-truth verdict.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPair {
    pub prompt: Prompt,
    pub a: Candidate,
    pub b: Candidate,
    pub truth: Verdict,
}

/// Fraction of pairs the judge ranks like the label.
pub fn judge_accuracy(judge: &dyn Judge, pairs: &[LabeledPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut hits = 0usize;
    for p in pairs {
        if judge.rank_pair(&p.prompt, &p.a, &p.b)? == p.truth {
            hits += 1;
        }
    }
    Ok(hits as f64 / pairs.len() as f64)
}
