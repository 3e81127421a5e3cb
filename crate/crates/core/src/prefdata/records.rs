//! Line-delimited record files.
//!
//! One JSON object per line with a `kind` discriminator. Keys are written in
//! sorted order so that the canonical form of a dataset is unique; keys the
//! reader does not know are kept in each record's `extra` map.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::{Map, Number, Value};

use super::{
    parse_pairwise_answer, Candidate, Extra, PairwiseRecord, Payload, PointwiseRecord, PreferencePair, Prompt,
    ScoreScale, Strategy, TaskTag, Verdict,
};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Record {
    Prompt(Prompt),
    Candidate(Candidate),
    Pairwise(PairwiseRecord),
    Pointwise(PointwiseRecord),
    Pair(PreferencePair),
}

/// Records in file order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, r: Record) {
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn prompts(&self) -> impl Iterator<Item = &Prompt> {
        self.records.iter().filter_map(|r| match r {
            Record::Prompt(p) => Some(p),
            _ => None,
        })
    }

    pub fn candidates(&self) -> impl Iterator<Item = &Candidate> {
        self.records.iter().filter_map(|r| match r {
            Record::Candidate(c) => Some(c),
            _ => None,
        })
    }

    pub fn pairwise(&self) -> impl Iterator<Item = &PairwiseRecord> {
        self.records.iter().filter_map(|r| match r {
            Record::Pairwise(p) => Some(p),
            _ => None,
        })
    }

    pub fn pointwise(&self) -> impl Iterator<Item = &PointwiseRecord> {
        self.records.iter().filter_map(|r| match r {
            Record::Pointwise(p) => Some(p),
            _ => None,
        })
    }

    pub fn pairs(&self) -> impl Iterator<Item = &PreferencePair> {
        self.records.iter().filter_map(|r| match r {
            Record::Pair(p) => Some(p),
            _ => None,
        })
    }

    pub fn prompt_index(&self) -> HashMap<&str, &Prompt> {
        self.prompts().map(|p| (p.id.as_str(), p)).collect()
    }

    pub fn candidate_index(&self) -> HashMap<&str, &Candidate> {
        self.candidates().map(|c| (c.id.as_str(), c)).collect()
    }

    /// Prompts in file order, each with its candidates in file order.
    pub fn pools(&self) -> Vec<(Prompt, Vec<Candidate>)> {
        let mut by_prompt: HashMap<&str, Vec<Candidate>> = HashMap::new();
        for c in self.candidates() {
            by_prompt.entry(c.prompt_id.as_str()).or_default().push(c.clone());
        }
        self.prompts()
            .map(|p| (p.clone(), by_prompt.remove(p.id.as_str()).unwrap_or_default()))
            .collect()
    }

    /// Cross-record checks: unique ids, resolvable references, payload kind
    /// consistent with the prompt's task.
    pub fn check_references(&self) -> Result<()> {
        let mut prompts = HashMap::new();
        for p in self.prompts() {
            if prompts.insert(p.id.as_str(), p).is_some() {
                return Err(Error::DuplicateId(p.id.clone()));
            }
        }
        let mut cands = HashSet::new();
        for c in self.candidates() {
            if !cands.insert(c.id.as_str()) {
                return Err(Error::DuplicateId(c.id.clone()));
            }
            let p = prompts
                .get(c.prompt_id.as_str())
                .ok_or_else(|| Error::UnresolvedId(c.prompt_id.clone()))?;
            if !c.payload.matches_task(p.task) {
                return Err(Error::shape(format!("candidate {} payload does not fit task {}", c.id, p.task)));
            }
        }
        let need = |id: &String| {
            if cands.contains(id.as_str()) {
                Ok(())
            } else {
                Err(Error::UnresolvedId(id.clone()))
            }
        };
        for r in self.pairwise() {
            need(&r.first_id)?;
            need(&r.second_id)?;
        }
        for r in self.pointwise() {
            need(&r.candidate_id)?;
        }
        for r in self.pairs() {
            need(&r.chosen_id)?;
            need(&r.rejected_id)?;
        }
        Ok(())
    }
}

impl Extend<Record> for Dataset {
    fn extend<I: IntoIterator<Item = Record>>(&mut self, iter: I) {
        self.records.extend(iter);
    }
}

impl FromIterator<Record> for Dataset {
    fn from_iter<I: IntoIterator<Item = Record>>(iter: I) -> Self {
        Dataset {
            records: iter.into_iter().collect(),
        }
    }
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_lines(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn write_records(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in &dataset.records {
        writeln!(w, "{}", record_to_line(r)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses a whole stream. Blank lines are skipped.
pub fn parse_lines(reader: impl BufRead) -> Result<Dataset> {
    let mut ds = Dataset::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<stream>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        ds.push(parse_record(&line, i + 1)?);
    }
    Ok(ds)
}

pub fn to_canonical_string(dataset: &Dataset) -> String {
    let mut out = String::new();
    for r in &dataset.records {
        out.push_str(&record_to_line(r));
        out.push('\n');
    }
    out
}

struct Fields {
    map: Map<String, Value>,
    line: usize,
}

impl Fields {
    fn err(&self, field: &str) -> Error {
        Error::schema(self.line, field)
    }

    fn take(&mut self, field: &str) -> Result<Value> {
        self.map.remove(field).ok_or_else(|| self.err(field))
    }

    fn string(&mut self, field: &str) -> Result<String> {
        match self.take(field)? {
            Value::String(s) if !s.is_empty() => Ok(s),
            _ => Err(self.err(field)),
        }
    }

    fn opt_string(&mut self, field: &str) -> Result<Option<String>> {
        match self.map.remove(field) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(self.err(field)),
        }
    }

    fn float(&mut self, field: &str) -> Result<f64> {
        let v = self.take(field)?;
        v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| self.err(field))
    }

    fn opt_float(&mut self, field: &str) -> Result<Option<f64>> {
        match self.map.remove(field) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v.as_f64().filter(|x| x.is_finite()).map(Some).ok_or_else(|| self.err(field)),
        }
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        let v = self.take(field)?;
        v.as_u64().ok_or_else(|| self.err(field))
    }

    fn floats(&mut self, field: &str) -> Result<Vec<f64>> {
        let Value::Array(items) = self.take(field)? else {
            return Err(self.err(field));
        };
        items
            .iter()
            .map(|v| v.as_f64().filter(|x| x.is_finite()))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| self.err(field))
    }

    fn extra(self) -> Extra {
        self.map
    }
}

fn parse_record(line: &str, line_no: usize) -> Result<Record> {
    let Ok(Value::Object(map)) = serde_json::from_str::<Value>(line) else {
        return Err(Error::schema(line_no, "<json object>"));
    };
    let mut f = Fields { map, line: line_no };
    let kind = f.string("kind")?;
    let record = match kind.as_str() {
        "prompt" => {
            let id = f.string("prompt_id")?;
            let task: TaskTag = f.string("task")?.parse().map_err(|_| f.err("task"))?;
            let features = f.floats("features")?;
            if features.is_empty() {
                return Err(f.err("features"));
            }
            Record::Prompt(Prompt {
                id,
                task,
                features,
                extra: f.extra(),
            })
        }
        "candidate" => {
            let prompt_id = f.string("prompt_id")?;
            let id = f.string("candidate_id")?;
            let payload = match (f.map.remove("tokens"), f.map.contains_key("vector")) {
                (Some(Value::Array(toks)), false) => Payload::Tokens(
                    toks.iter()
                        .map(|v| v.as_u64().map(|t| t as usize))
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(|| f.err("tokens"))?,
                ),
                (None, true) => Payload::Vector(f.floats("vector")?),
                (Some(_), _) => return Err(f.err("tokens")),
                (None, false) => return Err(f.err("tokens|vector")),
            };
            let latent_quality = f.float("latent_quality")?;
            if !(0.0..=1.0).contains(&latent_quality) {
                return Err(f.err("latent_quality"));
            }
            Record::Candidate(Candidate {
                id,
                prompt_id,
                payload,
                latent_quality,
                extra: f.extra(),
            })
        }
        "pairwise" => {
            let prompt_id = f.string("prompt_id")?;
            let first_id = f.string("first_id")?;
            let second_id = f.string("second_id")?;
            if first_id == second_id {
                return Err(f.err("second_id"));
            }
            let answer = f.string("answer")?;
            let parsed = parse_pairwise_answer(&answer).map_err(|_| f.err("answer"))?;
            let verdict = match (parsed.winner, parsed.loser) {
                (1, 2) => Verdict::First,
                (2, 1) => Verdict::Second,
                _ => return Err(f.err("answer")),
            };
            let justification = f.opt_string("justification")?;
            Record::Pairwise(PairwiseRecord {
                prompt_id,
                first_id,
                second_id,
                subject: parsed.subject,
                verdict,
                justification,
                extra: f.extra(),
            })
        }
        "pointwise" => {
            let prompt_id = f.string("prompt_id")?;
            let candidate_id = f.string("candidate_id")?;
            let raw_score = f.float("raw_score")?;
            let min = f.float("scale_min")?;
            let max = f.float("scale_max")?;
            let label = match f.take("scale_label")? {
                Value::String(s) => s,
                _ => return Err(f.err("scale_label")),
            };
            let scale = ScoreScale::new(min, max, label).map_err(|_| f.err("scale_max"))?;
            if !scale.contains(raw_score) {
                return Err(f.err("raw_score"));
            }
            let element_labels = match f.map.remove("elements") {
                None | Some(Value::Null) => None,
                Some(Value::Object(m)) => Some(
                    m.into_iter()
                        .map(|(k, v)| v.as_bool().map(|b| (k, b)))
                        .collect::<Option<BTreeMap<_, _>>>()
                        .ok_or_else(|| f.err("elements"))?,
                ),
                Some(_) => return Err(f.err("elements")),
            };
            Record::Pointwise(PointwiseRecord {
                prompt_id,
                candidate_id,
                raw_score,
                scale,
                element_labels,
                extra: f.extra(),
            })
        }
        "pair" => {
            let prompt_id = f.string("prompt_id")?;
            let chosen_id = f.string("chosen_id")?;
            let rejected_id = f.string("rejected_id")?;
            if chosen_id == rejected_id {
                return Err(f.err("rejected_id"));
            }
            let strategy: Strategy = f.string("strategy")?.parse().map_err(|_| f.err("strategy"))?;
            let chosen_score = f.opt_float("chosen_score")?;
            let rejected_score = f.opt_float("rejected_score")?;
            if strategy == Strategy::TwoStage {
                if chosen_score.is_none() {
                    return Err(f.err("chosen_score"));
                }
                if rejected_score.is_none() {
                    return Err(f.err("rejected_score"));
                }
            }
            let rng_seed = f.u64("rng_seed")?;
            Record::Pair(PreferencePair {
                prompt_id,
                chosen_id,
                rejected_id,
                strategy,
                chosen_score,
                rejected_score,
                rng_seed,
                extra: f.extra(),
            })
        }
        _ => return Err(f.err("kind")),
    };
    Ok(record)
}

fn num(x: f64) -> Value {
    Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null)
}

fn floats(xs: &[f64]) -> Value {
    Value::Array(xs.iter().copied().map(num).collect())
}

fn record_to_line(r: &Record) -> String {
    let (kind, extra, mut m) = match r {
        Record::Prompt(p) => {
            let mut m = Map::new();
            m.insert("prompt_id".into(), p.id.clone().into());
            m.insert("task".into(), p.task.as_str().into());
            m.insert("features".into(), floats(&p.features));
            ("prompt", &p.extra, m)
        }
        Record::Candidate(c) => {
            let mut m = Map::new();
            m.insert("prompt_id".into(), c.prompt_id.clone().into());
            m.insert("candidate_id".into(), c.id.clone().into());
            match &c.payload {
                Payload::Tokens(t) => m.insert("tokens".into(), t.iter().map(|&x| x as u64).collect()),
                Payload::Vector(v) => m.insert("vector".into(), floats(v)),
            };
            m.insert("latent_quality".into(), num(c.latent_quality));
            ("candidate", &c.extra, m)
        }
        Record::Pairwise(p) => {
            let mut m = Map::new();
            m.insert("prompt_id".into(), p.prompt_id.clone().into());
            m.insert("first_id".into(), p.first_id.clone().into());
            m.insert("second_id".into(), p.second_id.clone().into());
            m.insert("answer".into(), p.answer().into());
            if let Some(j) = &p.justification {
                m.insert("justification".into(), j.clone().into());
            }
            ("pairwise", &p.extra, m)
        }
        Record::Pointwise(p) => {
            let mut m = Map::new();
            m.insert("prompt_id".into(), p.prompt_id.clone().into());
            m.insert("candidate_id".into(), p.candidate_id.clone().into());
            m.insert("raw_score".into(), num(p.raw_score));
            m.insert("scale_min".into(), num(p.scale.min));
            m.insert("scale_max".into(), num(p.scale.max));
            m.insert("scale_label".into(), p.scale.label.clone().into());
            if let Some(el) = &p.element_labels {
                m.insert(
                    "elements".into(),
                    Value::Object(el.iter().map(|(k, &v)| (k.clone(), Value::Bool(v))).collect()),
                );
            }
            ("pointwise", &p.extra, m)
        }
        Record::Pair(p) => {
            let mut m = Map::new();
            m.insert("prompt_id".into(), p.prompt_id.clone().into());
            m.insert("chosen_id".into(), p.chosen_id.clone().into());
            m.insert("rejected_id".into(), p.rejected_id.clone().into());
            m.insert("strategy".into(), p.strategy.as_str().into());
            if let Some(s) = p.chosen_score {
                m.insert("chosen_score".into(), num(s));
            }
            if let Some(s) = p.rejected_score {
                m.insert("rejected_score".into(), num(s));
            }
            m.insert("rng_seed".into(), p.rng_seed.into());
            ("pair", &p.extra, m)
        }
    };
    for (k, v) in extra {
        m.entry(k.clone()).or_insert_with(|| v.clone());
    }
    m.insert("kind".into(), kind.into());
    // serde_json's default map is ordered by key
    let sorted: BTreeMap<_, _> = m.into_iter().collect();
    serde_json::to_string(&sorted).expect("json values always serialize")
}
