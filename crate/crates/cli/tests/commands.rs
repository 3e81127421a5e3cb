use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use prefalign::prefdata::{read_records, Record, Strategy};

fn prefalign(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prefalign"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let o = prefalign(dir, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: [&str; 3] = ["--data.train_prompts=100", "--data.heldout_prompts=40", "--data.judge_prompts=60"];

fn gen_small(dir: &Path, extra: &[&str]) {
    let mut args = vec!["gen"];
    args.extend(SMALL);
    args.extend(extra);
    ok(dir, &args);
}

#[test]
fn gen_writes_one_pool_per_prompt_and_repeats_exactly() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        ok(d, &["gen", "--data.train_prompts=100", "--construct.n_candidates=10"]);
    }
    let ds = read_records(a.path().join("train_pools.jsonl")).unwrap();
    let pools = ds.pools();
    assert_eq!(pools.len(), 100);
    assert!(pools.iter().all(|(_, c)| c.len() == 10));
    for f in ["train_pools.jsonl", "heldout_pools.jsonl", "judge_train.jsonl", "judge_test.jsonl", "reference.mat"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn missing_output_dir_is_an_io_error_naming_the_path() {
    let d = tempfile::tempdir().unwrap();
    let missing = d.path().join("nope");
    let o = prefalign(&missing, &["gen"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains(&missing.display().to_string()));
}

#[test]
fn config_errors_exit_two() {
    let d = tempfile::tempdir().unwrap();
    for args in [
        &["gen", "--no_such.key=1"][..],
        &["gen", "--data.train_prompts=many"],
        &["train-dpo", "sideways"],
        &["ablate", "everything"],
        &["gen", "--workers", "0"],
    ] {
        let o = prefalign(d.path(), args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
    let o = prefalign(d.path(), &["gen", "--no_such.key=1"]);
    assert!(stderr(&o).contains("no_such.key"));
    let cfg = d.path().join("run.toml");
    fs::write(&cfg, "[data]\ntrain_prompts = 3\nbogus = 1\n").unwrap();
    let o = prefalign(d.path(), &["gen", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("data.bogus"));
    let o = prefalign(d.path(), &["gen", "--config", d.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn config_file_and_overrides_layer() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = a.path().join("run.toml");
    fs::write(&cfg, "seed = 11\n[data]\ntrain_prompts = 7\nheldout_prompts = 2\njudge_prompts = 2\n").unwrap();
    ok(a.path(), &["gen", "--config", cfg.to_str().unwrap(), "--data.train_prompts=5"]);
    ok(b.path(), &["gen", "--seed", "11", "--data.train_prompts=5", "--data.heldout_prompts=2", "--data.judge_prompts=2"]);
    let f = "train_pools.jsonl";
    assert_eq!(read_records(a.path().join(f)).unwrap().prompts().count(), 5);
    assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
}

#[test]
fn train_judge_contracts() {
    let d = tempfile::tempdir().unwrap();
    gen_small(d.path(), &[]);
    ok(d.path(), &["train-judge", "--budget.steps=40"]);
    let first = fs::read(d.path().join("judge.mat")).unwrap();
    ok(d.path(), &["train-judge", "--budget.steps=40"]);
    assert_eq!(first, fs::read(d.path().join("judge.mat")).unwrap());
    assert_eq!(fs::read_to_string(d.path().join("judge_trace.csv")).unwrap().lines().count(), 41);

    ok(d.path(), &["train-judge", "--budget.steps=0"]);
    assert_eq!(fs::read_to_string(d.path().join("judge_trace.csv")).unwrap(), "step,loss\n");

    let o = prefalign(d.path(), &["train-judge", "--learned_judge.tasks=[\"video-generation\"]"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("image-understanding"));
}

#[test]
fn construct_contracts() {
    let d = tempfile::tempdir().unwrap();
    gen_small(d.path(), &[]);
    ok(d.path(), &["construct"]);
    let pairs = read_records(d.path().join("pairs.jsonl")).unwrap();
    assert_eq!(pairs.pairs().count(), 100);
    for p in pairs.pairs() {
        assert_eq!(p.strategy, Strategy::TwoStage);
        assert!(p.chosen_score.is_some() && p.rejected_score.is_some());
        assert!(!p.prompt_id.is_empty() && p.chosen_id != p.rejected_id);
    }

    let o = prefalign(d.path(), &["construct", "--construct.n_candidates=9"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("construct.n_candidates"));

    // drop one candidate of the first prompt so only that pool fails
    let path = d.path().join("train_pools.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    let victim = text.lines().find(|l| l.contains("\"candidate_id\":\"train-00000-c003\"")).unwrap().to_string();
    fs::write(&path, text.replace(&format!("{victim}\n"), "")).unwrap();
    let o = ok(d.path(), &["construct"]);
    assert!(stderr(&o).contains("train-00000"));
    assert_eq!(read_records(d.path().join("pairs.jsonl")).unwrap().pairs().count(), 99);
}

#[test]
fn train_dpo_contracts() {
    for mode in ["und", "gen"] {
        let d = tempfile::tempdir().unwrap();
        gen_small(d.path(), &[&format!("--mode={mode}")]);
        ok(d.path(), &["construct", "--judge.kind=oracle"]);
        let reference = fs::read(d.path().join("reference.mat")).unwrap();
        ok(d.path(), &["train-dpo", mode, "--und_dpo.batch_size=16", "--gen_dpo.batch_size=16"]);
        assert_eq!(reference, fs::read(d.path().join("reference.mat")).unwrap());
        assert_ne!(reference, fs::read(d.path().join("aligned.mat")).unwrap());
        let trace = fs::read_to_string(d.path().join("dpo_trace.csv")).unwrap();
        let n_pairs = read_records(d.path().join("pairs.jsonl")).unwrap().pairs().count();
        // every pool yields distinct outputs here, so all pairs train
        assert_eq!(trace.lines().count() - 1, 3 * n_pairs.div_ceil(16), "{mode}");
        let other = if mode == "und" { "gen" } else { "und" };
        assert_eq!(prefalign(d.path(), &["train-dpo", other]).status.code(), Some(2));
    }
}

#[test]
fn eval_contracts() {
    let d = tempfile::tempdir().unwrap();
    gen_small(d.path(), &[]);
    ok(d.path(), &["construct", "--judge.kind=oracle"]);
    ok(d.path(), &["train-dpo", "und"]);
    ok(d.path(), &["eval", "--judge.kind=oracle"]);
    let report = fs::read_to_string(d.path().join("eval.csv")).unwrap();
    ok(d.path(), &["eval", "--judge.kind=oracle", "--workers", "3"]);
    assert_eq!(report, fs::read_to_string(d.path().join("eval.csv")).unwrap());
    assert!(report.starts_with("label,mean,stderr,n\n"));
    for row in ["judge-overall-accuracy,", "judge-macro-accuracy,", "win-rate,", "margin-positive,"] {
        assert!(report.contains(row), "{row}");
    }
    assert!(report.lines().last().unwrap().starts_with("# seed=0 config="));

    let path = d.path().join("judge_test.jsonl");
    let kept: String = fs::read_to_string(&path)
        .unwrap()
        .lines()
        .filter(|l| !l.contains("\"kind\":\"pairwise\""))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(&path, kept).unwrap();
    let o = prefalign(d.path(), &["eval", "--judge.kind=oracle"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn ablate_contracts() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["ablate", "strategy", "--ablate.strategy.trials=50", "--seed", "42"]);
    let report = fs::read_to_string(d.path().join("ablate_strategy.csv")).unwrap();
    let labels: Vec<&str> = report.lines().skip(1).filter(|l| !l.starts_with('#')).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, Strategy::ALL.map(|s| s.as_str()));
    assert!(report.lines().last().unwrap().starts_with("# seed=42 config="));
}

#[test]
fn every_subcommand_documents_its_keys() {
    let d = tempfile::tempdir().unwrap();
    for (sub, key) in [
        ("gen", "--data.train_prompts="),
        ("train-judge", "--budget.learning_rate="),
        ("construct", "--construct.strategy="),
        ("train-dpo", "--gen_dpo.beta_g="),
        ("eval", "--eval.margin_grid="),
        ("ablate", "--ablate.strategy.trials="),
    ] {
        let o = prefalign(d.path(), &[sub, "--help"]);
        assert!(o.status.success());
        let text = String::from_utf8_lossy(&o.stdout);
        for flag in ["--config", "--seed", "--workers", "--out", key] {
            assert!(text.contains(flag), "{sub} --help lacks {flag}");
        }
    }
}

#[test]
fn pairs_file_is_reusable_by_record_readers() {
    let d = tempfile::tempdir().unwrap();
    gen_small(d.path(), &["--mode=gen"]);
    ok(d.path(), &["construct", "--construct.strategy=pair-only"]);
    let ds = read_records(d.path().join("pairs.jsonl")).unwrap();
    assert!(ds.records.iter().all(|r| matches!(r, Record::Pair(p) if p.strategy == Strategy::PairOnly)));
}
