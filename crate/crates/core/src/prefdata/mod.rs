//! Unified preference-record schemas.
//!
//! Pairwise records carry a strict verdict expressed through the standard
//! answer sentence (see [`answer`]); pointwise records keep their raw score
//! together with the scale it was given on. Scales are never unified at
//! ingestion; [`scores::normalize_point_score`] maps to [0, 1] only when two
//! scores from different scales must be compared.

pub mod answer;
pub mod records;
pub mod scores;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use answer::{format_pairwise_answer, parse_pairwise_answer, ParsedAnswer, SubjectKind};
pub use records::{read_records, write_records, Dataset, Record};
pub use scores::{aggregate_ratings, normalize_point_score, pair_from_votes, split_dpo_record};

/// Unknown fields carried through a read/write round trip.
pub type Extra = serde_json::Map<String, serde_json::Value>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskTag {
    ImageGeneration,
    VideoGeneration,
    ImageUnderstanding,
    VideoUnderstanding,
}

impl TaskTag {
    pub const ALL: [TaskTag; 4] = [
        TaskTag::ImageGeneration,
        TaskTag::VideoGeneration,
        TaskTag::ImageUnderstanding,
        TaskTag::VideoUnderstanding,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskTag::ImageGeneration => "image-generation",
            TaskTag::VideoGeneration => "video-generation",
            TaskTag::ImageUnderstanding => "image-understanding",
            TaskTag::VideoUnderstanding => "video-understanding",
        }
    }

    /// Generation tasks produce vector payloads, understanding tasks token sequences.
    pub fn is_generation(self) -> bool {
        matches!(self, TaskTag::ImageGeneration | TaskTag::VideoGeneration)
    }

    /// Subject word used in pairwise answers for this task.
    pub fn subject(self) -> SubjectKind {
        match self {
            TaskTag::ImageGeneration => SubjectKind::Image,
            TaskTag::VideoGeneration => SubjectKind::Video,
            TaskTag::ImageUnderstanding | TaskTag::VideoUnderstanding => SubjectKind::Response,
        }
    }
}

impl fmt::Display for TaskTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::UnknownTask(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prompt {
    pub id: String,
    pub task: TaskTag,
    pub features: Vec<f64>,
    pub extra: Extra,
}

impl Prompt {
    pub fn new(id: impl Into<String>, task: TaskTag, features: Vec<f64>) -> Self {
        Prompt {
            id: id.into(),
            task,
            features,
            extra: Extra::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Tokens(Vec<usize>),
    Vector(Vec<f64>),
}

impl Payload {
    pub fn is_vector(&self) -> bool {
        matches!(self, Payload::Vector(_))
    }

    pub fn as_tokens(&self) -> Option<&[usize]> {
        match self {
            Payload::Tokens(t) => Some(t),
            Payload::Vector(_) => None,
        }
    }

    pub fn as_vector(&self) -> Option<&[f64]> {
        match self {
            Payload::Vector(v) => Some(v),
            Payload::Tokens(_) => None,
        }
    }

    pub fn matches_task(&self, task: TaskTag) -> bool {
        self.is_vector() == task.is_generation()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub id: String,
    pub prompt_id: String,
    pub payload: Payload,
    /// Ground truth, only the oracle judge reads it.
    pub latent_quality: f64,
    pub extra: Extra,
}

impl Candidate {
    pub fn new(id: impl Into<String>, prompt_id: impl Into<String>, payload: Payload, latent_quality: f64) -> Self {
        Candidate {
            id: id.into(),
            prompt_id: prompt_id.into(),
            payload,
            latent_quality,
            extra: Extra::new(),
        }
    }
}

/// Strict preference between two items. There is no tie.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Verdict {
    First,
    Second,
}

impl Verdict {
    pub fn flipped(self) -> Verdict {
        match self {
            Verdict::First => Verdict::Second,
            Verdict::Second => Verdict::First,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseRecord {
    pub prompt_id: String,
    pub first_id: String,
    pub second_id: String,
    pub subject: SubjectKind,
    pub verdict: Verdict,
    pub justification: Option<String>,
    pub extra: Extra,
}

impl PairwiseRecord {
    pub fn new(
        prompt_id: impl Into<String>,
        first_id: impl Into<String>,
        second_id: impl Into<String>,
        subject: SubjectKind,
        verdict: Verdict,
    ) -> Self {
        PairwiseRecord {
            prompt_id: prompt_id.into(),
            first_id: first_id.into(),
            second_id: second_id.into(),
            subject,
            verdict,
            justification: None,
            extra: Extra::new(),
        }
    }

    /// The standardized answer sentence for this verdict.
    pub fn answer(&self) -> String {
        let (w, l) = match self.verdict {
            Verdict::First => (1, 2),
            Verdict::Second => (2, 1),
        };
        format_pairwise_answer(self.subject, w, l).expect("indices 1 and 2 never clash")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreScale {
    pub min: f64,
    pub max: f64,
    pub label: String,
}

impl ScoreScale {
    pub fn new(min: f64, max: f64, label: impl Into<String>) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(Error::InvalidRange(format!("scale [{min}, {max}]")));
        }
        Ok(ScoreScale {
            min,
            max,
            label: label.into(),
        })
    }

    pub fn unit() -> Self {
        ScoreScale {
            min: 0.0,
            max: 1.0,
            label: "0-1".into(),
        }
    }

    pub fn contains(&self, raw: f64) -> bool {
        raw >= self.min && raw <= self.max
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointwiseRecord {
    pub prompt_id: String,
    pub candidate_id: String,
    pub raw_score: f64,
    pub scale: ScoreScale,
    pub element_labels: Option<BTreeMap<String, bool>>,
    pub extra: Extra,
}

impl PointwiseRecord {
    pub fn new(prompt_id: impl Into<String>, candidate_id: impl Into<String>, raw_score: f64, scale: ScoreScale) -> Result<Self> {
        if !scale.contains(raw_score) {
            return Err(Error::OutOfRange {
                raw: raw_score,
                min: scale.min,
                max: scale.max,
            });
        }
        Ok(PointwiseRecord {
            prompt_id: prompt_id.into(),
            candidate_id: candidate_id.into(),
            raw_score,
            scale,
            element_labels: None,
            extra: Extra::new(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    TwoStage,
    Random,
    PointOnly,
    PairOnly,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::TwoStage, Strategy::Random, Strategy::PointOnly, Strategy::PairOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::TwoStage => "two-stage",
            Strategy::Random => "random",
            Strategy::PointOnly => "point-only",
            Strategy::PairOnly => "pair-only",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::config("strategy", format!("unknown strategy {s:?}")))
    }
}

/// A constructed (chosen, rejected) pair with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct PreferencePair {
    pub prompt_id: String,
    pub chosen_id: String,
    pub rejected_id: String,
    pub strategy: Strategy,
    pub chosen_score: Option<f64>,
    pub rejected_score: Option<f64>,
    pub rng_seed: u64,
    pub extra: Extra,
}
