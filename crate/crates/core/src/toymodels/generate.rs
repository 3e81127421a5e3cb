use rand::seq::index::sample as sample_indices;
use rand::Rng as _;

use super::{oracle_quality, standard_normal_vec, DiffusionSampler, OracleSpec, PolicyParams, Sampler};
use super::{DiffusionParams, NoiseSchedule};
use crate::prefdata::{Candidate, Payload, Prompt};
use crate::seed::Rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum QualityDistribution {
    Uniform { lo: f64, hi: f64 },
}

impl QualityDistribution {
    fn draw(&self, rng: &mut Rng) -> f64 {
        match *self {
            QualityDistribution::Uniform { lo, hi } => lo + (hi - lo) * rng.gen::<f64>(),
        }
    }
}

/// Where candidate outputs come from.
#[derive(Clone, Copy, Debug)]
pub enum CandidateSource<'a> {
    Policy(&'a PolicyParams),
    Diffusion {
        params: &'a DiffusionParams,
        schedule: &'a NoiseSchedule,
    },
    /// Draw the quality first, then build a payload that has it.
    Quality(QualityDistribution),
}

fn candidate_id(prompt_id: &str, i: usize, n: usize) -> String {
    let width = n.saturating_sub(1).to_string().len().max(3);
    format!("{prompt_id}-c{i:0width$}")
}

/// Generates `n` candidates for `prompt`. Ids are zero-padded so that string
/// order matches generation order.
pub fn gen_candidates(
    prompt: &Prompt,
    n: usize,
    source: CandidateSource<'_>,
    oracle: &OracleSpec,
    rng: &mut Rng,
) -> Result<Vec<Candidate>> {
    if n == 0 {
        return Err(Error::EmptyPool);
    }
    (0..n)
        .map(|i| {
            let payload = match source {
                CandidateSource::Policy(p) => p.sample(prompt, rng)?,
                CandidateSource::Diffusion { params, schedule } => DiffusionSampler { params, schedule }.sample(prompt, rng)?,
                CandidateSource::Quality(dist) => synthesize(prompt, dist.draw(rng), oracle, rng)?,
            };
            let q = oracle_quality(oracle, prompt, &payload)?;
            Ok(Candidate::new(candidate_id(&prompt.id, i, n), &prompt.id, payload, q))
        })
        .collect()
}

/// A payload whose oracle quality is `q` (for sequences, the nearest
/// achievable multiple of 1/L).
fn synthesize(prompt: &Prompt, q: f64, oracle: &OracleSpec, rng: &mut Rng) -> Result<Payload> {
    let q = q.clamp(0.0, 1.0);
    if prompt.task.is_generation() {
        let vt = oracle.vector.as_ref().ok_or_else(|| Error::shape("oracle has no vector target"))?;
        let mu = vt.target(prompt)?;
        let radius = vt.width * (-2.0 * q.max(f64::MIN_POSITIVE).ln()).sqrt();
        let mut dir = standard_normal_vec(mu.len(), rng);
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        dir.iter_mut().for_each(|x| *x /= norm);
        Ok(Payload::Vector(mu.iter().zip(&dir).map(|(m, u)| m + radius * u).collect()))
    } else {
        let st = oracle.sequence.as_ref().ok_or_else(|| Error::shape("oracle has no sequence target"))?;
        let target = st.target(prompt)?;
        let (len, vocab) = (target.len(), st.teacher.vocab);
        if vocab < 2 {
            return Err(Error::shape("vocabulary too small to miss the target"));
        }
        let hits = (q * len as f64).round() as usize;
        let mut seq: Vec<usize> = target
            .iter()
            .map(|&t| (t + rng.gen_range(1..vocab)) % vocab)
            .collect();
        for i in sample_indices(rng, len, hits) {
            seq[i] = target[i];
        }
        Ok(Payload::Tokens(seq))
    }
}
