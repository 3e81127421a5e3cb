//! Desk-scale stand-ins for the models being aligned.
//!
//! * [`PolicyParams`]: a position-factorized softmax policy over token sequences,
//!   conditioned linearly on the prompt features.
//! * [`NoiseSchedule`] and [`DiffusionParams`]: a DDPM-style forward process and a
//!   per-timestep affine noise predictor.
//! * [`OracleSpec`]: the hidden ground-truth quality function.

mod diffusion;
mod generate;
mod oracle;
mod policy;

pub use diffusion::{build_schedule, forward_sample, DiffusionParams, NoiseSchedule};
pub(crate) use diffusion::noised;
pub use generate::{gen_candidates, CandidateSource, QualityDistribution};
pub use oracle::{oracle_quality, OracleSpec, SequenceTarget, VectorTarget};
pub use policy::PolicyParams;

use crate::prefdata::{Payload, Prompt};
use crate::seed::Rng;
use crate::Result;

/// Anything that can draw an output for a prompt.
pub trait Sampler {
    fn sample(&self, prompt: &Prompt, rng: &mut Rng) -> Result<Payload>;
}

impl Sampler for PolicyParams {
    fn sample(&self, prompt: &Prompt, rng: &mut Rng) -> Result<Payload> {
        self.sample_seq(prompt, rng).map(Payload::Tokens)
    }
}

/// Ancestral sampling from an affine diffusion model. The model is
/// unconditional, so the prompt is ignored.
#[derive(Clone, Copy, Debug)]
pub struct DiffusionSampler<'a> {
    pub params: &'a DiffusionParams,
    pub schedule: &'a NoiseSchedule,
}

impl Sampler for DiffusionSampler<'_> {
    fn sample(&self, _prompt: &Prompt, rng: &mut Rng) -> Result<Payload> {
        self.params.ancestral_sample(self.schedule, rng).map(Payload::Vector)
    }
}

pub(crate) fn standard_normal_vec(d: usize, rng: &mut Rng) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}
