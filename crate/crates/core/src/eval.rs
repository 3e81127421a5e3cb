//! Metrics and the three ablation studies.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::construct::{construct_preference, ConstructConfig, Pairing};
use crate::judge::{judge_accuracy, judge_items, train_judge_items, JudgeConfig, JudgeItem, LabeledPair, LearnedJudge, LearnedJudgeParams, TaskMix, TrainBudget};
use crate::prefdata::{Candidate, Dataset, PairwiseRecord, Payload, PreferencePair, Prompt, Record, Strategy, TaskTag, Verdict};
use crate::seed::{derive, derived_rng, Rng};
use crate::stats::{logistic, mean_stderr};
use crate::toymodels::{gen_candidates, oracle_quality, standard_normal_vec, CandidateSource, OracleSpec, QualityDistribution, Sampler, VectorTarget};
use crate::{keys, par, Error, Result};

/// One judged comparison, tagged with the category it is reported under.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledComparison {
    pub category: String,
    pub predicted: Verdict,
    pub actual: Verdict,
}

impl LabeledComparison {
    pub fn new(category: impl Into<String>, predicted: Verdict, actual: Verdict) -> Result<Self> {
        let category = category.into();
        if category.is_empty() {
            return Err(Error::config("category", "must be non-empty"));
        }
        Ok(LabeledComparison { category, predicted, actual })
    }

    fn correct(&self) -> bool {
        self.predicted == self.actual
    }
}

pub fn overall_accuracy(items: &[LabeledComparison]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(items.iter().filter(|c| c.correct()).count() as f64 / items.len() as f64)
}

/// Unweighted mean of the per-category accuracies.
pub fn macro_accuracy(items: &[LabeledComparison]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut by_cat: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for c in items {
        let e = by_cat.entry(&c.category).or_default();
        e.0 += usize::from(c.correct());
        e.1 += 1;
    }
    let sum: f64 = by_cat.values().map(|&(k, n)| k as f64 / n as f64).sum();
    Ok(sum / by_cat.len() as f64)
}

/// Fraction of prompts on which a sample from `a` beats a sample from `b`
/// under the oracle, ties counting one half. Both models draw from the same
/// per-prompt stream `(seed, prompt id)`.
pub fn win_rate(a: &dyn Sampler, b: &dyn Sampler, prompts: &[Prompt], oracle: &OracleSpec, seed: u64) -> Result<f64> {
    if prompts.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut score = 0.0;
    for p in prompts {
        let stream = |_: ()| derived_rng(seed, keys!["win-rate", &p.id]);
        let qa = oracle_quality(oracle, p, &a.sample(p, &mut stream(()))?)?;
        let qb = oracle_quality(oracle, p, &b.sample(p, &mut stream(()))?)?;
        score += if qa > qb {
            1.0
        } else if qa == qb {
            0.5
        } else {
            0.0
        };
    }
    Ok(score / prompts.len() as f64)
}

/// Mean and standard error of `quality(chosen) − quality(rejected)`.
pub fn quality_gap(pairs: &[PreferencePair], data: &Dataset, oracle: &OracleSpec) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let prompts = data.prompt_index();
    let cands = data.candidate_index();
    let gaps = pairs
        .iter()
        .map(|p| {
            let prompt = *prompts.get(p.prompt_id.as_str()).ok_or_else(|| Error::UnresolvedId(p.prompt_id.clone()))?;
            let q = |id: &str| -> Result<f64> {
                let c = cands.get(id).ok_or_else(|| Error::UnresolvedId(id.to_string()))?;
                oracle_quality(oracle, prompt, &c.payload)
            };
            Ok(q(&p.chosen_id)? - q(&p.rejected_id)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_stderr(&gaps))
}

/// One report line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl ReportRow {
    pub fn from_samples(label: impl Into<String>, xs: &[f64]) -> Self {
        let (mean, stderr) = mean_stderr(xs);
        ReportRow {
            label: label.into(),
            mean,
            stderr,
            n: xs.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<ReportRow>,
    pub seed: u64,
    /// Hex digest of the configuration that produced the report.
    pub config_digest: String,
}

impl AblationReport {
    pub fn row(&self, label: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let to_io = |e: csv::Error| Error::io("<report>", std::io::Error::other(e));
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r).map_err(to_io)?;
        }
        let mut out = w.into_inner().map_err(|e| Error::io("<report>", e.into_error()))?;
        writeln!(out, "# seed={} config={}", self.seed, self.config_digest).map_err(|e| Error::io("<report>", e))?;
        out.flush().map_err(|e| Error::io("<report>", e))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

fn digest_of<T: Serialize>(config: &T) -> String {
    crate::seed::digest_hex(serde_json::to_string(config).expect("config serializes").as_bytes())
}

/// Synthetic candidate pools for the strategy comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoolGenConfig {
    pub n_candidates: usize,
    pub quality_lo: f64,
    pub quality_hi: f64,
    /// Dimension of the synthesized vector outputs.
    pub dim: usize,
}

impl Default for PoolGenConfig {
    fn default() -> Self {
        PoolGenConfig {
            n_candidates: 10,
            quality_lo: 0.0,
            quality_hi: 1.0,
            dim: 4,
        }
    }
}

impl PoolGenConfig {
    pub fn oracle(&self) -> OracleSpec {
        OracleSpec {
            sequence: None,
            vector: Some(VectorTarget::fixed(vec![0.0; self.dim], 1.0)),
        }
    }

    /// A pool of candidates for a fresh prompt with uniform latent qualities.
    pub fn pool(&self, prompt_id: &str, rng: &mut Rng) -> Result<(Prompt, Vec<Candidate>)> {
        if !(self.quality_lo >= 0.0 && self.quality_lo <= self.quality_hi && self.quality_hi <= 1.0) {
            return Err(Error::config("quality_lo/quality_hi", "need 0 ≤ lo ≤ hi ≤ 1"));
        }
        let prompt = Prompt::new(prompt_id, TaskTag::ImageGeneration, vec![]);
        let dist = QualityDistribution::Uniform {
            lo: self.quality_lo,
            hi: self.quality_hi,
        };
        let cands = gen_candidates(&prompt, self.n_candidates, CandidateSource::Quality(dist), &self.oracle(), rng)?;
        Ok((prompt, cands))
    }
}

#[derive(Serialize)]
struct StrategyStudyEcho<'a> {
    generator: &'a PoolGenConfig,
    judge: &'a JudgeConfig,
    strategies: Vec<&'static str>,
    trials: usize,
}

/// Quality gap of each strategy over `trials` independent pools. Every
/// strategy sees the same pools and the same judge.
pub fn run_strategy_ablation(
    generator: &PoolGenConfig,
    judge: &JudgeConfig,
    strategies: &[Strategy],
    trials: usize,
    master_seed: u64,
    workers: usize,
) -> Result<AblationReport> {
    if trials == 0 {
        return Err(Error::config("trials", "must be at least 1"));
    }
    let judge_cfg = JudgeConfig {
        seed: derive(master_seed, keys!["judge"]),
        ..judge.clone()
    };
    let judge_impl = judge_cfg.build(None)?;
    let oracle = generator.oracle();
    let idx: Vec<usize> = (0..trials).collect();
    let per_trial = par::map_ordered(&idx, workers, |&i| -> Result<Vec<f64>> {
        let mut rng = derived_rng(master_seed, keys!["strategy-trial", i]);
        let (prompt, pool) = generator.pool(&format!("trial{i:06}"), &mut rng)?;
        let cfg_seed = derive(master_seed, keys!["strategy-construct", i]);
        strategies
            .iter()
            .map(|&strategy| {
                let cfg = ConstructConfig {
                    n_candidates: generator.n_candidates,
                    pairing: Pairing::SeededRandom,
                    strategy,
                    seed: cfg_seed,
                };
                let pair = construct_preference(&prompt, &pool, judge_impl.as_ref(), &cfg)?;
                let q = |id: &str| {
                    let c = pool.iter().find(|c| c.id == id).ok_or_else(|| Error::UnresolvedId(id.to_string()))?;
                    oracle_quality(&oracle, &prompt, &c.payload)
                };
                Ok(q(&pair.chosen_id)? - q(&pair.rejected_id)?)
            })
            .collect()
    });
    let per_trial = per_trial.into_iter().collect::<Result<Vec<_>>>()?;
    let rows = strategies
        .iter()
        .enumerate()
        .map(|(k, s)| ReportRow::from_samples(s.as_str(), &per_trial.iter().map(|t| t[k]).collect::<Vec<_>>()))
        .collect();
    Ok(AblationReport {
        rows,
        seed: master_seed,
        config_digest: digest_of(&StrategyStudyEcho {
            generator,
            judge,
            strategies: strategies.iter().map(|s| s.as_str()).collect(),
            trials,
        }),
    })
}

/// Synthetic multi-task family for the judge studies.
///
/// Each task scores outputs with a direction `u_k = normalize(√ρ u + √(1−ρ) v_k)`
/// where `u` is shared and `v_k` task-specific. Generation tasks use vector
/// outputs, understanding tasks use token sequences whose vocabulary is the
/// same `content_dim` axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskFamilyConfig {
    pub tasks: Vec<TaskTag>,
    pub content_dim: usize,
    pub seq_len: usize,
    pub prompt_dim: usize,
    pub hidden_dim: usize,
    /// Weight `ρ` of the shared direction, in [0, 1].
    pub shared_weight: f64,
    /// Inverse temperature of the training labels.
    pub label_sharpness: f64,
    pub train_pairs_per_task: usize,
    pub test_pairs_per_task: usize,
    pub budget: TrainBudget,
    pub n_seeds: usize,
}

impl Default for TaskFamilyConfig {
    fn default() -> Self {
        TaskFamilyConfig {
            tasks: TaskTag::ALL.to_vec(),
            content_dim: 16,
            seq_len: 8,
            prompt_dim: 2,
            hidden_dim: 1,
            shared_weight: 1.0,
            label_sharpness: 4.0,
            train_pairs_per_task: 50,
            test_pairs_per_task: 200,
            budget: TrainBudget {
                steps: 2000,
                learning_rate: 0.05,
                batch_size: 8,
                epochs: usize::MAX,
            },
            n_seeds: 20,
        }
    }
}

impl TaskFamilyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::config("tasks", "need at least one task"));
        }
        let mut seen = self.tasks.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.tasks.len() {
            return Err(Error::config("tasks", "tasks must be distinct"));
        }
        if !(0.0..=1.0).contains(&self.shared_weight) {
            return Err(Error::config("shared_weight", "must lie in [0, 1]"));
        }
        if self.content_dim == 0 || self.seq_len == 0 || self.hidden_dim == 0 {
            return Err(Error::config("content_dim/seq_len/hidden_dim", "must be positive"));
        }
        if self.test_pairs_per_task == 0 {
            return Err(Error::config("test_pairs_per_task", "must be positive"));
        }
        if self.n_seeds == 0 {
            return Err(Error::config("n_seeds", "must be positive"));
        }
        self.budget.validate()
    }

    fn seed_list(&self, master: u64) -> Vec<u64> {
        (0..self.n_seeds).map(|i| derive(master, keys!["family-seed", i])).collect()
    }
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    v.into_iter().map(|x| x / n).collect()
}

/// One draw of the family: per-task directions and data streams.
#[derive(Clone, Debug)]
pub struct TaskFamily {
    pub config: TaskFamilyConfig,
    pub seed: u64,
    pub directions: BTreeMap<TaskTag, Vec<f64>>,
}

impl TaskFamily {
    pub fn new(config: &TaskFamilyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.content_dim;
        let shared = unit(standard_normal_vec(d, &mut derived_rng(seed, keys!["family-shared"])));
        let rho = config.shared_weight;
        let directions = config
            .tasks
            .iter()
            .map(|&t| {
                let own = unit(standard_normal_vec(d, &mut derived_rng(seed, keys!["family-own", t.as_str()])));
                let u = shared.iter().zip(&own).map(|(s, o)| rho.sqrt() * s + (1.0 - rho).sqrt() * o).collect();
                (t, unit(u))
            })
            .collect();
        Ok(TaskFamily {
            config: config.clone(),
            seed,
            directions,
        })
    }

    fn output(&self, task: TaskTag, rng: &mut Rng) -> (Payload, Vec<f64>) {
        let c = &self.config;
        if task.is_generation() {
            let v = standard_normal_vec(c.content_dim, rng);
            (Payload::Vector(v.clone()), v)
        } else {
            let toks: Vec<usize> = (0..c.seq_len).map(|_| rng.gen_range(0..c.content_dim)).collect();
            // histogram scaled to roughly unit variance per direction
            let s = ((c.seq_len * c.content_dim) as f64).sqrt() / c.seq_len as f64;
            let mut h = vec![0.0; c.content_dim];
            for &t in &toks {
                h[t] += s;
            }
            (Payload::Tokens(toks), h)
        }
    }

    fn latent(&self, task: TaskTag, f: &[f64]) -> f64 {
        crate::stats::dot(&self.directions[&task], f)
    }

    /// `(prompt, first, second, latent gap)` for pair `i` of a split.
    fn pair(&self, task: TaskTag, split: &str, i: usize) -> (Prompt, Candidate, Candidate, f64) {
        let mut rng = derived_rng(self.seed, keys!["family-pair", split, task.as_str(), i]);
        let pid = format!("{}-{split}-{i:05}", task.as_str());
        let prompt = Prompt::new(&pid, task, standard_normal_vec(self.config.prompt_dim, &mut rng));
        let (pa, fa) = self.output(task, &mut rng);
        let (pb, fb) = self.output(task, &mut rng);
        let (za, zb) = (self.latent(task, &fa), self.latent(task, &fb));
        let a = Candidate::new(format!("{pid}-a"), &pid, pa, logistic(za));
        let b = Candidate::new(format!("{pid}-b"), &pid, pb, logistic(zb));
        (prompt, a, b, za - zb)
    }

    /// The first `n` training pairs of `task`, labelled by a Bradley–Terry
    /// draw on the latent gap.
    pub fn train_data(&self, task: TaskTag, n: usize) -> Dataset {
        let mut ds = Dataset::new();
        for i in 0..n {
            let (prompt, a, b, gap) = self.pair(task, "train", i);
            let u = crate::seed::unit_f64(derive(self.seed, keys!["family-label", task.as_str(), i]));
            let verdict = if u < logistic(self.config.label_sharpness * gap) {
                Verdict::First
            } else {
                Verdict::Second
            };
            let rec = PairwiseRecord::new(&prompt.id, &a.id, &b.id, task.subject(), verdict);
            ds.push(Record::Prompt(prompt));
            ds.push(Record::Candidate(a));
            ds.push(Record::Candidate(b));
            ds.push(Record::Pairwise(rec));
        }
        ds
    }

    /// Held-out pairs with the noiseless verdict.
    pub fn test_pairs(&self, task: TaskTag) -> Vec<LabeledPair> {
        (0..self.config.test_pairs_per_task)
            .map(|i| {
                let (prompt, a, b, gap) = self.pair(task, "test", i);
                let truth = if gap >= 0.0 { Verdict::First } else { Verdict::Second };
                LabeledPair { prompt, a, b, truth }
            })
            .collect()
    }

    fn init(&self, tasks: &[TaskTag]) -> LearnedJudgeParams {
        let c = &self.config;
        LearnedJudgeParams::init(c.content_dim, c.prompt_dim, c.hidden_dim, tasks, derive(self.seed, keys!["family-init"]))
    }

    fn items(&self, params: &LearnedJudgeParams, task: TaskTag, n: usize) -> Result<Vec<JudgeItem>> {
        judge_items(&self.train_data(task, n), params, &TaskMix::new())
    }

    /// Trains one judge on `counts[k]` pairs of each task, each repeated
    /// `repeats[k]` times, and returns its held-out accuracy per task.
    pub fn train_and_score(&self, counts: &BTreeMap<TaskTag, usize>, repeats: &BTreeMap<TaskTag, usize>) -> Result<BTreeMap<TaskTag, f64>> {
        let tasks: Vec<TaskTag> = counts.keys().copied().collect();
        let init = self.init(&tasks);
        let mut items = Vec::new();
        for (&t, &n) in counts {
            let block = self.items(&init, t, n)?;
            for _ in 0..repeats.get(&t).copied().unwrap_or(1) {
                items.extend(block.iter().cloned());
            }
        }
        let (params, _) = train_judge_items(&items, &init, &self.config.budget, derive(self.seed, keys!["family-train"]))?;
        let judge = LearnedJudge::new(params);
        tasks.iter().map(|&t| Ok((t, judge_accuracy(&judge, &self.test_pairs(t))?))).collect()
    }
}

#[derive(Serialize)]
struct FamilyStudyEcho<'a, T: Serialize> {
    study: &'static str,
    family: &'a TaskFamilyConfig,
    extra: T,
}

/// Joint training on every task against single-task training with the same
/// number of update steps. Rows: `joint`, `single`, and the paired per-seed
/// difference `joint-minus-single`, each the mean held-out accuracy over
/// tasks.
pub fn run_synergy_study(family: &TaskFamilyConfig, master_seed: u64, workers: usize) -> Result<AblationReport> {
    family.validate()?;
    let n = family.train_pairs_per_task;
    let seeds = family.seed_list(master_seed);
    let per_seed = par::map_ordered(&seeds, workers, |&s| -> Result<(f64, f64)> {
        let fam = TaskFamily::new(family, s)?;
        let all: BTreeMap<TaskTag, usize> = family.tasks.iter().map(|&t| (t, n)).collect();
        let joint = fam.train_and_score(&all, &BTreeMap::new())?;
        let mut single = 0.0;
        for &t in &family.tasks {
            single += fam.train_and_score(&BTreeMap::from([(t, n)]), &BTreeMap::new())?[&t];
        }
        let k = family.tasks.len() as f64;
        Ok((joint.values().sum::<f64>() / k, single / k))
    });
    let per_seed = per_seed.into_iter().collect::<Result<Vec<_>>>()?;
    let joint: Vec<f64> = per_seed.iter().map(|p| p.0).collect();
    let single: Vec<f64> = per_seed.iter().map(|p| p.1).collect();
    let diff: Vec<f64> = per_seed.iter().map(|p| p.0 - p.1).collect();
    Ok(AblationReport {
        rows: vec![
            ReportRow::from_samples("joint", &joint),
            ReportRow::from_samples("single", &single),
            ReportRow::from_samples("joint-minus-single", &diff),
        ],
        seed: master_seed,
        config_digest: digest_of(&FamilyStudyEcho {
            study: "synergy",
            family,
            extra: (),
        }),
    })
}

/// Per-task data counts and repetition factors for one imbalance condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub label: String,
    pub counts: BTreeMap<TaskTag, usize>,
    #[serde(default)]
    pub repeats: BTreeMap<TaskTag, usize>,
}

impl Allocation {
    /// `balanced` (every task `base` pairs), `imbalanced-{f}x` (every task but
    /// `fixed` has `f·base`), and `rebalanced` (as imbalanced, with the fixed
    /// task's pairs repeated `f` times so every task has equal weight).
    pub fn standard(tasks: &[TaskTag], fixed: TaskTag, base: usize, factor: usize) -> Vec<Allocation> {
        let scaled: BTreeMap<TaskTag, usize> = tasks.iter().map(|&t| (t, if t == fixed { base } else { base * factor })).collect();
        vec![
            Allocation {
                label: "balanced".into(),
                counts: tasks.iter().map(|&t| (t, base)).collect(),
                repeats: BTreeMap::new(),
            },
            Allocation {
                label: format!("imbalanced-{factor}x"),
                counts: scaled.clone(),
                repeats: BTreeMap::new(),
            },
            Allocation {
                label: "rebalanced".into(),
                counts: scaled,
                repeats: BTreeMap::from([(fixed, factor)]),
            },
        ]
    }
}

/// Held-out accuracy of `fixed_task` under each allocation, same seeds and
/// step budget throughout. One row per allocation, then a paired
/// `{first}-minus-{label}` row for every later allocation.
pub fn run_imbalance_study(
    family: &TaskFamilyConfig,
    fixed_task: TaskTag,
    allocations: &[Allocation],
    master_seed: u64,
    workers: usize,
) -> Result<AblationReport> {
    family.validate()?;
    if allocations.is_empty() {
        return Err(Error::config("allocations", "need at least one allocation"));
    }
    for a in allocations {
        if !a.counts.contains_key(&fixed_task) {
            return Err(Error::config("allocations", format!("{} lacks the fixed task {fixed_task}", a.label)));
        }
        if let Some(t) = a.counts.keys().chain(a.repeats.keys()).find(|t| !family.tasks.contains(t)) {
            return Err(Error::UnknownTask(t.to_string()));
        }
    }
    let seeds = family.seed_list(master_seed);
    let per_seed = par::map_ordered(&seeds, workers, |&s| -> Result<Vec<f64>> {
        let fam = TaskFamily::new(family, s)?;
        allocations
            .iter()
            .map(|a| Ok(fam.train_and_score(&a.counts, &a.repeats)?[&fixed_task]))
            .collect()
    });
    let per_seed = per_seed.into_iter().collect::<Result<Vec<_>>>()?;
    let col = |k: usize| per_seed.iter().map(|r| r[k]).collect::<Vec<f64>>();
    let mut rows: Vec<ReportRow> = allocations
        .iter()
        .enumerate()
        .map(|(k, a)| ReportRow::from_samples(a.label.clone(), &col(k)))
        .collect();
    for (k, a) in allocations.iter().enumerate().skip(1) {
        let diff: Vec<f64> = per_seed.iter().map(|r| r[0] - r[k]).collect();
        rows.push(ReportRow::from_samples(format!("{}-minus-{}", allocations[0].label, a.label), &diff));
    }
    Ok(AblationReport {
        rows,
        seed: master_seed,
        config_digest: digest_of(&FamilyStudyEcho {
            study: "imbalance",
            family,
            extra: (fixed_task, allocations),
        }),
    })
}

/// Groups labelled comparisons by category for reporting.
pub fn per_category_accuracy(items: &[LabeledComparison]) -> BTreeMap<String, (usize, usize)> {
    let mut m: HashMap<&str, (usize, usize)> = HashMap::new();
    for c in items {
        let e = m.entry(&c.category).or_default();
        e.0 += usize::from(c.correct());
        e.1 += 1;
    }
    m.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::judge::JudgeKind;
    use crate::toymodels::{PolicyParams, SequenceTarget};

    fn cmp(cat: &str, ok: bool) -> LabeledComparison {
        LabeledComparison::new(cat, Verdict::First, if ok { Verdict::First } else { Verdict::Second }).unwrap()
    }

    #[test]
    fn accuracy_fixture() {
        let items = vec![cmp("A", true), cmp("A", false), cmp("B", true), cmp("B", true), cmp("B", true), cmp("B", false)];
        assert_eq!(overall_accuracy(&items).unwrap(), 4.0 / 6.0);
        assert_eq!(macro_accuracy(&items).unwrap(), 0.625);
        assert!(matches!(overall_accuracy(&[]), Err(Error::EmptyDataset)));
        assert!(matches!(macro_accuracy(&[]), Err(Error::EmptyDataset)));
        let one = &items[..2];
        assert_eq!(macro_accuracy(one).unwrap(), overall_accuracy(one).unwrap());
        assert!(LabeledComparison::new("", Verdict::First, Verdict::First).is_err());
        assert_eq!(per_category_accuracy(&items)["B"], (3, 4));
    }

    #[test]
    fn win_rate_ties_and_symmetry() {
        let teacher = PolicyParams::random(4, 3, 2, 1.0, &mut crate::seed::rng(1));
        let oracle = OracleSpec {
            sequence: Some(SequenceTarget { teacher: teacher.clone() }),
            vector: None,
        };
        let a = PolicyParams::random(4, 3, 2, 1.0, &mut crate::seed::rng(2));
        let b = PolicyParams::zeros(4, 3, 2);
        let prompts: Vec<Prompt> = (0..50)
            .map(|i| Prompt::new(format!("q{i}"), TaskTag::ImageUnderstanding, standard_normal_vec(2, &mut crate::seed::rng(i))))
            .collect();
        assert_eq!(win_rate(&a, &a, &prompts, &oracle, 7).unwrap(), 0.5);
        let ab = win_rate(&a, &b, &prompts, &oracle, 7).unwrap();
        let ba = win_rate(&b, &a, &prompts, &oracle, 7).unwrap();
        assert_eq!(ab + ba, 1.0);
        assert_eq!(ab, win_rate(&a, &b, &prompts, &oracle, 7).unwrap());
        assert!(win_rate(&a, &b, &[], &oracle, 7).is_err());
    }

    #[test]
    fn quality_gap_worked_example() {
        let oracle = PoolGenConfig { dim: 1, ..Default::default() }.oracle();
        let prompt = Prompt::new("p", TaskTag::ImageGeneration, vec![]);
        let mut ds = Dataset::new();
        ds.push(Record::Prompt(prompt.clone()));
        for (i, q) in [0.9f64, 0.2, 0.5, 0.7].into_iter().enumerate() {
            // exp(−y²/2) = q
            let y = (-2.0 * q.ln()).sqrt();
            ds.push(Record::Candidate(Candidate::new(format!("O{}", i + 1), "p", Payload::Vector(vec![y]), q)));
        }
        let pool: Vec<Candidate> = ds.candidates().cloned().collect();
        let cfg = ConstructConfig { n_candidates: 4, pairing: Pairing::Sequential, ..Default::default() };
        let pair = construct_preference(&prompt, &pool, &crate::judge::OracleJudge, &cfg).unwrap();
        let (mean, se) = quality_gap(&[pair], &ds, &oracle).unwrap();
        assert!((mean - 0.7).abs() < 1e-12);
        assert_eq!(se, 0.0);

        let mut bad = PreferencePair { chosen_id: "nope".into(), ..ds_pair() };
        bad.prompt_id = "p".into();
        assert!(matches!(quality_gap(&[bad], &ds, &oracle), Err(Error::UnresolvedId(_))));
    }

    fn ds_pair() -> PreferencePair {
        PreferencePair {
            prompt_id: "p".into(),
            chosen_id: "O1".into(),
            rejected_id: "O2".into(),
            strategy: Strategy::Random,
            chosen_score: None,
            rejected_score: None,
            rng_seed: 0,
            extra: Default::default(),
        }
    }

    #[test]
    fn perfect_judge_two_stage_matches_point_only() {
        let judge = JudgeConfig { kind: JudgeKind::Oracle, ..Default::default() };
        let gen = PoolGenConfig::default();
        let rep = run_strategy_ablation(&gen, &judge, &Strategy::ALL, 200, 3, 2).unwrap();
        let two = rep.row("two-stage").unwrap();
        let point = rep.row("point-only").unwrap();
        assert_eq!(two.mean, point.mean);
        assert!(two.mean > rep.row("random").unwrap().mean);
        let single = run_strategy_ablation(&gen, &judge, &[Strategy::TwoStage], 1, 3, 1).unwrap();
        assert_eq!(single.rows[0].stderr, 0.0);
        assert_eq!(single.rows[0].n, 1);
    }

    #[test]
    fn report_csv_layout() {
        let rep = AblationReport {
            rows: vec![ReportRow::from_samples("x", &[1.0, 3.0])],
            seed: 9,
            config_digest: "ab".into(),
        };
        let se = 2f64.sqrt() / 2f64.sqrt();
        assert_eq!(rep.rows[0].stderr, se);
        assert_eq!(rep.to_csv_string(), "label,mean,stderr,n\nx,2.0,1.0,2\n# seed=9 config=ab\n");
    }

    #[test]
    fn family_studies_run_and_repeat() {
        let fam = TaskFamilyConfig {
            n_seeds: 2,
            test_pairs_per_task: 20,
            budget: TrainBudget { steps: 20, ..TaskFamilyConfig::default().budget },
            ..Default::default()
        };
        let a = run_synergy_study(&fam, 1, 1).unwrap();
        assert_eq!(a, run_synergy_study(&fam, 1, 2).unwrap());
        assert_eq!(a.rows.len(), 3);
        let allocs = Allocation::standard(&fam.tasks, TaskTag::VideoGeneration, 10, 2);
        let twice = vec![allocs[0].clone(), Allocation { label: "again".into(), ..allocs[0].clone() }];
        let r = run_imbalance_study(&fam, TaskTag::VideoGeneration, &twice, 1, 2).unwrap();
        assert_eq!(r.rows[0].mean, r.rows[1].mean);
        assert_eq!(r.rows[0].stderr, r.rows[1].stderr);
        let one = TaskFamilyConfig { n_seeds: 1, ..fam };
        assert_eq!(run_synergy_study(&one, 1, 1).unwrap().rows[0].stderr, 0.0);
    }
}
