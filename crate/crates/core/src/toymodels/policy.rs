use rand::Rng as _;

use crate::matfile::MatrixFile;
use crate::prefdata::Prompt;
use crate::seed::Rng;
use crate::stats::dot;
use crate::{Error, Result};

/// Per-position token logits `W[pos] · x`, tokens independent across
/// positions given the prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub seq_len: usize,
    pub vocab: usize,
    pub dim: usize,
    /// Row-major `[seq_len][vocab][dim]`.
    pub weights: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(seq_len: usize, vocab: usize, dim: usize) -> Self {
        PolicyParams {
            seq_len,
            vocab,
            dim,
            weights: vec![0.0; seq_len * vocab * dim],
        }
    }

    pub fn random(seq_len: usize, vocab: usize, dim: usize, scale: f64, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(seq_len, vocab, dim);
        for w in &mut p.weights {
            *w = scale * super::standard_normal_vec(1, rng)[0];
        }
        p
    }

    pub fn num_params(&self) -> usize {
        self.weights.len()
    }

    fn check_prompt(&self, prompt: &Prompt) -> Result<()> {
        if prompt.features.len() != self.dim {
            return Err(Error::shape(format!(
                "prompt {} has {} features, policy expects {}",
                prompt.id,
                prompt.features.len(),
                self.dim
            )));
        }
        Ok(())
    }

    fn check_seq(&self, seq: &[usize]) -> Result<()> {
        if seq.len() != self.seq_len {
            return Err(Error::shape(format!("sequence length {} != {}", seq.len(), self.seq_len)));
        }
        if let Some(&t) = seq.iter().find(|&&t| t >= self.vocab) {
            return Err(Error::shape(format!("token {t} outside vocabulary of {}", self.vocab)));
        }
        Ok(())
    }

    fn row(&self, pos: usize, tok: usize) -> &[f64] {
        let start = (pos * self.vocab + tok) * self.dim;
        &self.weights[start..start + self.dim]
    }

    pub fn logits(&self, pos: usize, features: &[f64]) -> Vec<f64> {
        (0..self.vocab).map(|v| dot(self.row(pos, v), features)).collect()
    }

    /// Log-softmax over the vocabulary at one position.
    pub fn log_probs_at(&self, pos: usize, features: &[f64]) -> Vec<f64> {
        let z = self.logits(pos, features);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        z.into_iter().map(|v| v - lse).collect()
    }

    pub fn log_prob(&self, prompt: &Prompt, seq: &[usize]) -> Result<f64> {
        self.check_prompt(prompt)?;
        self.check_seq(seq)?;
        Ok(seq
            .iter()
            .enumerate()
            .map(|(pos, &tok)| self.log_probs_at(pos, &prompt.features)[tok])
            .sum())
    }

    /// Adds `coef · ∇_W log π(seq | prompt)` into `grad`.
    pub fn accumulate_log_prob_grad(&self, prompt: &Prompt, seq: &[usize], coef: f64, grad: &mut [f64]) -> Result<()> {
        self.check_prompt(prompt)?;
        self.check_seq(seq)?;
        let x = &prompt.features;
        for (pos, &tok) in seq.iter().enumerate() {
            let lp = self.log_probs_at(pos, x);
            for (v, lpv) in lp.into_iter().enumerate() {
                let g = coef * (f64::from(u8::from(v == tok)) - lpv.exp());
                let start = (pos * self.vocab + v) * self.dim;
                for (gk, xk) in grad[start..start + self.dim].iter_mut().zip(x) {
                    *gk += g * xk;
                }
            }
        }
        Ok(())
    }

    pub fn sample_seq(&self, prompt: &Prompt, rng: &mut Rng) -> Result<Vec<usize>> {
        self.check_prompt(prompt)?;
        Ok((0..self.seq_len)
            .map(|pos| {
                let lp = self.log_probs_at(pos, &prompt.features);
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (v, l) in lp.iter().enumerate() {
                    acc += l.exp();
                    if u < acc {
                        return v;
                    }
                }
                // rounding left u above the final partial sum
                lp.iter()
                    .enumerate()
                    .rev()
                    .find(|(_, l)| l.is_finite() && l.exp() > 0.0)
                    .map_or(self.vocab - 1, |(v, _)| v)
            })
            .collect())
    }

    pub fn to_matrix_file(&self) -> MatrixFile {
        let mut f = MatrixFile::new("policy");
        f.set("seq_len", self.seq_len).set("vocab", self.vocab).set("dim", self.dim);
        let block = self.vocab * self.dim;
        for pos in 0..self.seq_len {
            f.push(
                format!("pos{pos}"),
                self.vocab,
                self.dim,
                self.weights[pos * block..(pos + 1) * block].to_vec(),
            );
        }
        f
    }

    pub fn from_matrix_file(f: &MatrixFile) -> Result<Self> {
        f.expect_kind("policy")?;
        let (seq_len, vocab, dim) = (f.get_parsed("seq_len")?, f.get_parsed("vocab")?, f.get_parsed("dim")?);
        let mut p = Self::zeros(seq_len, vocab, dim);
        let block = vocab * dim;
        for pos in 0..seq_len {
            p.weights[pos * block..(pos + 1) * block].copy_from_slice(f.matrix(&format!("pos{pos}"), vocab, dim)?);
        }
        Ok(p)
    }
}
