use std::io::Cursor;

use prefalign::prefdata::{
    records::{parse_lines, to_canonical_string}, Candidate, Dataset, PairwiseRecord, Payload, PointwiseRecord, PreferencePair, Prompt,
    Record, ScoreScale, Strategy as Selection, TaskTag, Verdict,
};
use prefalign::seed::rng;
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{json, Map};

fn id(r: &mut impl Rng) -> String {
    let len = r.gen_range(1..12);
    let alphabet: Vec<char> = "abcXYZ019-_./ é\"\\".chars().collect();
    (0..len).map(|_| *alphabet.choose(r).unwrap()).collect()
}

fn float(r: &mut impl Rng) -> f64 {
    match r.gen_range(0..4) {
        0 => 0.0,
        1 => r.gen_range(-1e6..1e6),
        2 => r.gen::<f64>() * 1e-300,
        _ => r.gen::<f64>(),
    }
}

fn extra(r: &mut impl Rng) -> Map<String, serde_json::Value> {
    let mut m = Map::new();
    for _ in 0..r.gen_range(0..3) {
        let v = match r.gen_range(0..3) {
            0 => json!(r.gen::<i32>()),
            1 => json!({"nested": [1, "two", null]}),
            _ => json!(id(r)),
        };
        m.insert(format!("x_{}", id(r)), v);
    }
    m
}

fn record(r: &mut impl Rng) -> Record {
    let task = *TaskTag::ALL.choose(r).unwrap();
    match r.gen_range(0..5) {
        0 => {
            let mut p = Prompt::new(id(r), task, (0..r.gen_range(1..4)).map(|_| float(r)).collect());
            p.extra = extra(r);
            Record::Prompt(p)
        }
        1 => {
            let payload = if r.gen() {
                Payload::Vector((0..r.gen_range(1..4)).map(|_| float(r)).collect())
            } else {
                Payload::Tokens((0..r.gen_range(1..6)).map(|_| r.gen_range(0..50)).collect())
            };
            let mut c = Candidate::new(id(r), id(r), payload, r.gen());
            c.extra = extra(r);
            Record::Candidate(c)
        }
        2 => {
            let v = if r.gen() { Verdict::First } else { Verdict::Second };
            let mut p = PairwiseRecord::new(id(r), format!("{}<", id(r)), format!("{}>", id(r)), task.subject(), v);
            if r.gen() {
                p.justification = Some(id(r));
            }
            p.extra = extra(r);
            Record::Pairwise(p)
        }
        3 => {
            let scale = ScoreScale::new(1.0, 5.0, "1-5").unwrap();
            let mut p = PointwiseRecord::new(id(r), id(r), r.gen_range(1.0..=5.0), scale).unwrap();
            if r.gen() {
                p.element_labels = Some([(id(r), r.gen()), (id(r), r.gen())].into_iter().collect());
            }
            p.extra = extra(r);
            Record::Pointwise(p)
        }
        _ => {
            let strategy = *Selection::ALL.choose(r).unwrap();
            // two-stage pairs always record both sift scores
            let scored = |r: &mut _| (strategy == Selection::TwoStage || Rng::gen::<bool>(r)).then(|| Rng::gen::<f64>(r));
            Record::Pair(PreferencePair {
                prompt_id: id(r),
                // the reader rejects a pair whose two ids coincide
                chosen_id: format!("{}<", id(r)),
                rejected_id: format!("{}>", id(r)),
                strategy,
                chosen_score: scored(r),
                rejected_score: scored(r),
                rng_seed: r.gen(),
                extra: extra(r),
            })
        }
    }
}

#[test]
fn random_records_survive_a_round_trip() {
    let mut r = rng(99);
    let ds = Dataset {
        records: (0..1000).map(|_| record(&mut r)).collect(),
    };
    let text = to_canonical_string(&ds);
    let back = parse_lines(Cursor::new(text.as_bytes())).unwrap();
    assert_eq!(back, ds);
    assert_eq!(to_canonical_string(&back), text);
}

#[test]
fn files_round_trip_through_disk() {
    let mut r = rng(100);
    let ds = Dataset {
        records: (0..50).map(|_| record(&mut r)).collect(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.jsonl");
    prefalign::prefdata::write_records(&ds, &path).unwrap();
    assert_eq!(prefalign::prefdata::read_records(&path).unwrap(), ds);
}
