use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use prefalign::construct::{batch_construct, ConstructConfig};
use prefalign::dpo::{
    implicit_reward_margin, resolve_triples, save_trace_csv, timestep_grid, train_gen_dpo, train_und_dpo, DpoTriple, GenDpoConfig,
    MarginModel, UndDpoConfig,
};
use prefalign::eval::{
    macro_accuracy, overall_accuracy, per_category_accuracy, run_imbalance_study, run_strategy_ablation, run_synergy_study, win_rate,
    AblationReport, Allocation, LabeledComparison, ReportRow,
};
use prefalign::judge::{train_judge, Judge, JudgeConfig, JudgeKind, LearnedJudgeParams, TaskMix};
use prefalign::keys;
use prefalign::matfile::MatrixFile;
use prefalign::par;
use prefalign::prefdata::{read_records, write_records, Dataset, Prompt, Record};
use prefalign::scenario::{construct_triples, GenScenario, Scenario, UndScenario};
use prefalign::seed::{derive, derived_rng, digest_hex};
use prefalign::toymodels::{oracle_quality, DiffusionParams, DiffusionSampler, NoiseSchedule, PolicyParams, Sampler};

use crate::config::{Mode, RunConfig};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub const TRAIN_POOLS: &str = "train_pools.jsonl";
pub const HELDOUT_POOLS: &str = "heldout_pools.jsonl";
pub const JUDGE_TRAIN: &str = "judge_train.jsonl";
pub const JUDGE_TEST: &str = "judge_test.jsonl";
pub const REFERENCE: &str = "reference.mat";
pub const JUDGE_PARAMS: &str = "judge.mat";
pub const JUDGE_TRACE: &str = "judge_trace.csv";
pub const PAIRS: &str = "pairs.jsonl";
pub const ALIGNED: &str = "aligned.mat";
pub const DPO_TRACE: &str = "dpo_trace.csv";
pub const EVAL_REPORT: &str = "eval.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Study {
    Strategy,
    Synergy,
    Imbalance,
}

impl Study {
    fn as_str(self) -> &'static str {
        match self {
            Study::Strategy => "strategy",
            Study::Synergy => "synergy",
            Study::Imbalance => "imbalance",
        }
    }
}

fn out_path(cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    if !cfg.out.is_dir() {
        return Err(CliError::Io(format!("output directory {} does not exist", cfg.out.display())));
    }
    Ok(cfg.out.join(name))
}

fn in_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.input_dir().join(name)
}

fn scenario(cfg: &RunConfig) -> Result<Scenario> {
    let seed = derive(cfg.seed, keys!["scenario"]);
    Ok(match cfg.mode {
        Mode::Und => Scenario::Und(UndScenario::new(&cfg.und_scenario, seed)?),
        Mode::Gen => Scenario::Gen(GenScenario::new(&cfg.gen_scenario, seed)?),
    })
}

/// The config with run plumbing blanked, so digests ignore where and how
/// wide a run was.
fn config_digest(cfg: &RunConfig) -> String {
    let echo = RunConfig {
        workers: 0,
        out: PathBuf::new(),
        input: PathBuf::new(),
        ..cfg.clone()
    };
    digest_hex(serde_json::to_string(&echo).expect("config serializes").as_bytes())
}

fn build_judge(cfg: &RunConfig) -> Result<Box<dyn Judge>> {
    let jc = JudgeConfig {
        seed: derive(cfg.seed, keys!["judge"]),
        ..cfg.judge
    };
    let learned = match jc.kind {
        JudgeKind::Learned => {
            let f = MatrixFile::load(in_path(cfg, JUDGE_PARAMS))?;
            Some(LearnedJudgeParams::from_matrix_file(&f)?)
        }
        _ => None,
    };
    Ok(jc.build(learned)?)
}

fn construct_config(cfg: &RunConfig) -> ConstructConfig {
    ConstructConfig {
        seed: derive(cfg.seed, keys!["construct"]),
        ..cfg.construct.clone()
    }
}

pub fn gen(cfg: &RunConfig) -> Result<()> {
    let n = cfg.construct.n_candidates;
    if n == 0 {
        return Err(CliError::Config("construct.n_candidates: must be at least 1".into()));
    }
    let s = scenario(cfg)?;
    let d = &cfg.data;
    let train = s.pool_dataset("train", d.train_prompts, n)?;
    let held = s.pool_dataset("heldout", d.heldout_prompts, n)?;
    let jtrain = s.judge_dataset("judge-train", d.judge_prompts, d.judge_sharpness)?;
    let jtest = s.judge_dataset("judge-test", d.judge_prompts, d.judge_sharpness)?;
    write_records(&train, out_path(cfg, TRAIN_POOLS)?)?;
    write_records(&held, out_path(cfg, HELDOUT_POOLS)?)?;
    write_records(&jtrain, out_path(cfg, JUDGE_TRAIN)?)?;
    write_records(&jtest, out_path(cfg, JUDGE_TEST)?)?;
    let reference = match &s {
        Scenario::Und(u) => u.reference.to_matrix_file(),
        Scenario::Gen(g) => g.reference.to_matrix_file(&g.schedule),
    };
    reference.save(out_path(cfg, REFERENCE)?)?;
    println!(
        "gen: {} train prompts, {} held-out prompts, pool size {n}, {} judge prompts per split -> {}",
        d.train_prompts,
        d.heldout_prompts,
        d.judge_prompts,
        cfg.out.display()
    );
    Ok(())
}

pub fn train_judge_cmd(cfg: &RunConfig) -> Result<()> {
    let lj = &cfg.learned_judge;
    if lj.hidden_dim == 0 {
        return Err(CliError::Config("learned_judge.hidden_dim: must be at least 1".into()));
    }
    let s = scenario(cfg)?;
    let data = read_records(in_path(cfg, JUDGE_TRAIN))?;
    let tasks = if lj.tasks.is_empty() {
        vec![s.task()]
    } else {
        lj.tasks.clone()
    };
    let init = LearnedJudgeParams::init(s.content_dim(), s.prompt_dim(), lj.hidden_dim, &tasks, derive(cfg.seed, keys!["judge-init"]));
    let (params, trace) = train_judge(&data, &init, &cfg.budget, &TaskMix::new(), derive(cfg.seed, keys!["judge-train"]))?;
    params.to_matrix_file().save(out_path(cfg, JUDGE_PARAMS)?)?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in trace.iter().enumerate() {
        writeln!(csv, "{i},{l}").expect("string write");
    }
    write_file(&out_path(cfg, JUDGE_TRACE)?, &csv)?;
    println!("train-judge: {} steps, final loss {} -> {}", trace.len(), trace.last().map_or(f64::NAN, |l| *l), cfg.out.display());
    Ok(())
}

pub fn construct(cfg: &RunConfig) -> Result<()> {
    cfg.construct
        .validate()
        .map_err(|e| CliError::Config(format!("construct.n_candidates = {}: {e}", cfg.construct.n_candidates)))?;
    let data = read_records(in_path(cfg, TRAIN_POOLS))?;
    let pools = data.pools();
    let judge = build_judge(cfg)?;
    let outcome = batch_construct(&pools, judge.as_ref(), &construct_config(cfg), cfg.workers);
    for (id, e) in &outcome.failures {
        eprintln!("construct: prompt {id}: {e}");
    }
    if outcome.pairs.is_empty() {
        return Err(CliError::Config(format!("construct: no pair built from {} prompts", pools.len())));
    }
    let ds = Dataset {
        records: outcome.pairs.iter().cloned().map(Record::Pair).collect(),
    };
    write_records(&ds, out_path(cfg, PAIRS)?)?;
    println!(
        "construct: {} pairs ({}), {} prompts failed -> {}",
        outcome.pairs.len(),
        cfg.construct.strategy,
        outcome.failures.len(),
        cfg.out.display()
    );
    Ok(())
}

/// Training triples from the pool and pair files. Pairs whose two outputs
/// are identical carry no preference and are dropped.
fn load_triples(cfg: &RunConfig) -> Result<(Vec<DpoTriple>, usize)> {
    let mut data = read_records(in_path(cfg, TRAIN_POOLS))?;
    data.extend(read_records(in_path(cfg, PAIRS))?.records);
    let cands = data.candidate_index();
    let same = |r: &Record| match r {
        Record::Pair(p) => match (cands.get(p.chosen_id.as_str()), cands.get(p.rejected_id.as_str())) {
            (Some(a), Some(b)) => a.payload == b.payload,
            _ => false,
        },
        _ => false,
    };
    let keep: Vec<bool> = data.records.iter().map(|r| !same(r)).collect();
    let skipped = keep.iter().filter(|k| !**k).count();
    let records = data.records.into_iter().zip(keep).filter_map(|(r, k)| k.then_some(r)).collect();
    let triples = resolve_triples(&Dataset { records })?;
    if triples.is_empty() {
        return Err(CliError::Config("train-dpo: no usable preference pairs".into()));
    }
    Ok((triples, skipped))
}

fn load_policy(path: &Path) -> Result<PolicyParams> {
    Ok(PolicyParams::from_matrix_file(&MatrixFile::load(path)?)?)
}

fn load_diffusion(path: &Path) -> Result<(DiffusionParams, NoiseSchedule)> {
    Ok(DiffusionParams::from_matrix_file(&MatrixFile::load(path)?)?)
}

pub fn train_dpo(cfg: &RunConfig, mode: Mode) -> Result<()> {
    let (triples, skipped) = load_triples(cfg)?;
    let reference = in_path(cfg, REFERENCE);
    let trace = match mode {
        Mode::Und => {
            let dc = UndDpoConfig {
                seed: derive(cfg.seed, keys!["und-dpo"]),
                ..cfg.und_dpo.clone()
            };
            let reference = load_policy(&reference)?;
            let (aligned, trace) = train_und_dpo(&reference, &triples, &dc)?;
            aligned.to_matrix_file().save(out_path(cfg, ALIGNED)?)?;
            trace
        }
        Mode::Gen => {
            let dc = GenDpoConfig {
                seed: derive(cfg.seed, keys!["gen-dpo"]),
                ..cfg.gen_dpo.clone()
            };
            let (reference, schedule) = load_diffusion(&reference)?;
            let (aligned, trace) = train_gen_dpo(&reference, &triples, &schedule, &dc)?;
            aligned.to_matrix_file(&schedule).save(out_path(cfg, ALIGNED)?)?;
            trace
        }
    };
    save_trace_csv(&trace, out_path(cfg, DPO_TRACE)?)?;
    println!(
        "train-dpo: {} triples ({skipped} identical pairs dropped), {} steps, final loss {} -> {}",
        triples.len(),
        trace.len(),
        trace.last().map_or(f64::NAN, |t| t.loss),
        cfg.out.display()
    );
    Ok(())
}

fn judge_rows(cfg: &RunConfig) -> Result<Vec<ReportRow>> {
    let data = read_records(in_path(cfg, JUDGE_TEST))?;
    let judge = build_judge(cfg)?;
    let prompts = data.prompt_index();
    let cands = data.candidate_index();
    let unresolved = |id: &str| CliError::Config(format!("{JUDGE_TEST}: unresolved id {id:?}"));
    let mut items = Vec::new();
    for r in data.pairwise() {
        let p = prompts.get(r.prompt_id.as_str()).ok_or_else(|| unresolved(&r.prompt_id))?;
        let a = cands.get(r.first_id.as_str()).ok_or_else(|| unresolved(&r.first_id))?;
        let b = cands.get(r.second_id.as_str()).ok_or_else(|| unresolved(&r.second_id))?;
        items.push(LabeledComparison::new(p.task.as_str(), judge.rank_pair(p, a, b)?, r.verdict)?);
    }
    let overall = overall_accuracy(&items)?;
    let hits: Vec<f64> = items.iter().map(|c| f64::from(u8::from(c.predicted == c.actual))).collect();
    let per_cat: Vec<f64> = per_category_accuracy(&items).values().map(|&(h, n)| h as f64 / n as f64).collect();
    let mut rows = vec![
        ReportRow { mean: overall, ..ReportRow::from_samples("judge-overall-accuracy", &hits) },
        ReportRow { mean: macro_accuracy(&items)?, ..ReportRow::from_samples("judge-macro-accuracy", &per_cat) },
    ];
    for (cat, (h, n)) in per_category_accuracy(&items) {
        let xs: Vec<f64> = (0..n).map(|i| f64::from(u8::from(i < h))).collect();
        rows.push(ReportRow::from_samples(format!("judge-accuracy-{cat}"), &xs));
    }
    Ok(rows)
}

enum Models {
    Und(PolicyParams, PolicyParams),
    Gen(DiffusionParams, DiffusionParams, NoiseSchedule),
}

fn alignment_rows(cfg: &RunConfig, s: &Scenario) -> Result<Vec<ReportRow>> {
    let held = read_records(in_path(cfg, HELDOUT_POOLS))?;
    let prompts: Vec<Prompt> = held.prompts().cloned().collect();
    if prompts.is_empty() {
        return Err(CliError::Config(format!("{HELDOUT_POOLS}: no prompts")));
    }
    let models = match s {
        Scenario::Und(_) => Models::Und(load_policy(&in_path(cfg, REFERENCE))?, load_policy(&in_path(cfg, ALIGNED))?),
        Scenario::Gen(_) => {
            let (r, sched) = load_diffusion(&in_path(cfg, REFERENCE))?;
            let (a, _) = load_diffusion(&in_path(cfg, ALIGNED))?;
            Models::Gen(r, a, sched)
        }
    };
    let (reference, aligned): (Box<dyn Sampler + Sync>, Box<dyn Sampler + Sync>) = match &models {
        Models::Und(r, a) => (Box::new(r.clone()), Box::new(a.clone())),
        Models::Gen(r, a, sched) => (
            Box::new(OwnedDiffusion(r.clone(), sched.clone())),
            Box::new(OwnedDiffusion(a.clone(), sched.clone())),
        ),
    };
    let oracle = s.oracle();
    let win_seed = derive(cfg.seed, keys!["eval-win"]);
    let quality_seed = derive(cfg.seed, keys!["eval-quality"]);
    let per_prompt = par::map_ordered(&prompts, cfg.workers, |p| -> Result<(f64, f64, f64)> {
        let w = win_rate(aligned.as_ref(), reference.as_ref(), std::slice::from_ref(p), oracle, win_seed)?;
        let draw = |m: &dyn Sampler| -> Result<f64> {
            let y = m.sample(p, &mut derived_rng(quality_seed, keys![&p.id]))?;
            Ok(oracle_quality(oracle, p, &y)?)
        };
        Ok((w, draw(reference.as_ref())?, draw(aligned.as_ref())?))
    });
    let per_prompt = per_prompt.into_iter().collect::<Result<Vec<_>>>()?;
    let col = |f: fn(&(f64, f64, f64)) -> f64| per_prompt.iter().map(f).collect::<Vec<f64>>();
    let mut rows = vec![
        ReportRow::from_samples("win-rate", &col(|r| r.0)),
        ReportRow::from_samples("quality-reference", &col(|r| r.1)),
        ReportRow::from_samples("quality-aligned", &col(|r| r.2)),
        ReportRow::from_samples("quality-gain", &col(|r| r.2 - r.1)),
    ];

    let judge = build_judge(cfg)?;
    let triples = construct_triples(&held.pools(), judge.as_ref(), &construct_config(cfg), cfg.workers)?;
    let grid;
    let margin = match &models {
        Models::Und(r, a) => MarginModel::Und {
            theta: a,
            reference: r,
            beta_u: cfg.und_dpo.beta_u,
        },
        Models::Gen(r, a, sched) => {
            grid = timestep_grid(sched.horizon(), cfg.eval.margin_grid);
            MarginModel::Gen {
                theta: a,
                reference: r,
                schedule: sched,
                coefficient: cfg.gen_dpo.coefficient(),
                grid: &grid,
                seed: derive(cfg.seed, keys!["eval-margin"]),
            }
        }
    };
    let margins = triples.iter().map(|t| implicit_reward_margin(&margin, t)).collect::<prefalign::Result<Vec<f64>>>()?;
    let positive: Vec<f64> = margins.iter().map(|&m| f64::from(u8::from(m > 0.0))).collect();
    rows.push(ReportRow::from_samples("margin-positive", &positive));
    rows.push(ReportRow::from_samples("margin", &margins));
    Ok(rows)
}

struct OwnedDiffusion(DiffusionParams, NoiseSchedule);

impl Sampler for OwnedDiffusion {
    fn sample(&self, prompt: &Prompt, rng: &mut prefalign::seed::Rng) -> prefalign::Result<prefalign::prefdata::Payload> {
        DiffusionSampler {
            params: &self.0,
            schedule: &self.1,
        }
        .sample(prompt, rng)
    }
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let s = scenario(cfg)?;
    let mut rows = judge_rows(cfg)?;
    rows.extend(alignment_rows(cfg, &s)?);
    let report = AblationReport {
        rows,
        seed: cfg.seed,
        config_digest: config_digest(cfg),
    };
    let path = out_path(cfg, EVAL_REPORT)?;
    report.save(&path)?;
    print_rows("eval", &report);
    println!("eval -> {}", path.display());
    Ok(())
}

pub fn ablate(cfg: &RunConfig, study: Study) -> Result<()> {
    let a = &cfg.ablate;
    let path = out_path(cfg, &format!("ablate_{}.csv", study.as_str()))?;
    let report = match study {
        Study::Strategy => {
            let st = &a.strategy;
            run_strategy_ablation(&st.pools, &st.judge, &st.strategies, st.trials, cfg.seed, cfg.workers)?
        }
        Study::Synergy => run_synergy_study(&a.synergy, cfg.seed, cfg.workers)?,
        Study::Imbalance => {
            let im = &a.imbalance;
            let allocations = Allocation::standard(&im.family.tasks, im.fixed_task, im.base, im.factor);
            run_imbalance_study(&im.family, im.fixed_task, &allocations, cfg.seed, cfg.workers)?
        }
    };
    report.save(&path)?;
    print_rows(&format!("ablate {}", study.as_str()), &report);
    println!("ablate {} -> {}", study.as_str(), path.display());
    Ok(())
}

fn print_rows(tag: &str, report: &AblationReport) {
    let width = report.rows.iter().map(|r| r.label.len()).max().unwrap_or(0);
    for r in &report.rows {
        println!("{tag}: {:<width$}  {:.6} ± {:.6}  (n={})", r.label, r.mean, r.stderr, r.n);
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
