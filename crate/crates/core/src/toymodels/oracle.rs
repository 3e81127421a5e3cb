use super::PolicyParams;
use crate::prefdata::{Payload, Prompt};
use crate::stats::dot;
use crate::{Error, Result};

/// Target sequence `t(x)[pos] = argmax_v (teacher[pos] · x)_v`, ties toward the
/// lower token.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceTarget {
    pub teacher: PolicyParams,
}

impl SequenceTarget {
    pub fn target(&self, prompt: &Prompt) -> Result<Vec<usize>> {
        let t = &self.teacher;
        if prompt.features.len() != t.dim {
            return Err(Error::shape(format!("prompt {} features vs teacher dim {}", prompt.id, t.dim)));
        }
        Ok((0..t.seq_len)
            .map(|pos| {
                let z = t.logits(pos, &prompt.features);
                let mut best = 0;
                for v in 1..z.len() {
                    if z[v] > z[best] {
                        best = v;
                    }
                }
                best
            })
            .collect())
    }
}

/// Gaussian quality bump around `μ(x) = center + mix · x`.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorTarget {
    pub center: Vec<f64>,
    /// `[dim][prompt_dim]`, row-major; empty means prompt-independent.
    pub mix: Vec<f64>,
    pub width: f64,
}

impl VectorTarget {
    pub fn fixed(center: Vec<f64>, width: f64) -> Self {
        VectorTarget {
            center,
            mix: Vec::new(),
            width,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn target(&self, prompt: &Prompt) -> Result<Vec<f64>> {
        let d = self.center.len();
        if self.mix.is_empty() {
            return Ok(self.center.clone());
        }
        let k = prompt.features.len();
        if self.mix.len() != d * k {
            return Err(Error::shape(format!("target mix is not {d}x{k}")));
        }
        Ok((0..d)
            .map(|i| self.center[i] + dot(&self.mix[i * k..(i + 1) * k], &prompt.features))
            .collect())
    }
}

/// Hidden ground truth standing in for human preference.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OracleSpec {
    pub sequence: Option<SequenceTarget>,
    pub vector: Option<VectorTarget>,
}

/// Quality in [0, 1]: fraction of positions matching the target sequence, or
/// `exp(−‖y − μ(x)‖² / 2σ_q²)` for vectors.
pub fn oracle_quality(spec: &OracleSpec, prompt: &Prompt, payload: &Payload) -> Result<f64> {
    if !payload.matches_task(prompt.task) {
        return Err(Error::shape(format!("payload kind does not fit task {}", prompt.task)));
    }
    match payload {
        Payload::Tokens(seq) => {
            let target = spec
                .sequence
                .as_ref()
                .ok_or_else(|| Error::shape("oracle has no sequence target"))?
                .target(prompt)?;
            if seq.len() != target.len() {
                return Err(Error::shape(format!("sequence length {} vs target {}", seq.len(), target.len())));
            }
            let hits = seq.iter().zip(&target).filter(|(a, b)| a == b).count();
            Ok(hits as f64 / target.len() as f64)
        }
        Payload::Vector(y) => {
            let vt = spec.vector.as_ref().ok_or_else(|| Error::shape("oracle has no vector target"))?;
            let mu = vt.target(prompt)?;
            if y.len() != mu.len() {
                return Err(Error::shape(format!("payload dimension {} vs target {}", y.len(), mu.len())));
            }
            let d2: f64 = y.iter().zip(&mu).map(|(a, b)| (a - b).powi(2)).sum();
            Ok((-d2 / (2.0 * vt.width * vt.width)).exp())
        }
    }
}
