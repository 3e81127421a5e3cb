use crate::matfile::MatrixFile;
use crate::seed::Rng;
use crate::stats::dot;
use crate::{Error, Result};

use super::standard_normal_vec;

/// Forward-process coefficients. Timesteps are 1-based: index `t - 1` holds
/// the values for timestep `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub beta_min: f64,
    pub beta_max: f64,
    pub betas: Vec<f64>,
    pub alphas_bar: Vec<f64>,
    /// Signal-to-noise ratio ᾱ / (1 − ᾱ).
    pub snr: Vec<f64>,
}

/// Linear betas from `beta_min` to `beta_max` over `horizon` steps.
pub fn build_schedule(horizon: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if horizon == 0 {
        return Err(Error::InvalidRange("schedule needs at least one timestep".into()));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::InvalidRange(format!("need 0 < beta_min ≤ beta_max < 1, got [{beta_min}, {beta_max}]")));
    }
    let betas = (0..horizon)
        .map(|i| {
            if horizon == 1 {
                beta_min
            } else {
                beta_min + (beta_max - beta_min) * i as f64 / (horizon - 1) as f64
            }
        })
        .collect();
    NoiseSchedule::from_betas(betas).map(|mut s| {
        s.beta_min = beta_min;
        s.beta_max = beta_max;
        s
    })
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::InvalidRange("betas must lie in (0, 1)".into()));
        }
        let mut alphas_bar = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for &b in &betas {
            acc *= 1.0 - b;
            alphas_bar.push(acc);
        }
        let snr = alphas_bar.iter().map(|&a| a / (1.0 - a)).collect();
        let (lo, hi) = betas
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &b| (lo.min(b), hi.max(b)));
        Ok(NoiseSchedule {
            beta_min: lo,
            beta_max: hi,
            betas,
            alphas_bar,
            snr,
        })
    }

    pub fn horizon(&self) -> usize {
        self.betas.len()
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.horizon() {
            return Err(Error::TimestepOutOfRange { t, horizon: self.horizon() });
        }
        Ok(())
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alphas_bar[t - 1]
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }
}

/// Draws `eps ~ N(0, I)` and returns `(√ᾱ_t x0 + √(1−ᾱ_t) eps, eps)`.
pub fn forward_sample(schedule: &NoiseSchedule, x0: &[f64], t: usize, rng: &mut Rng) -> Result<(Vec<f64>, Vec<f64>)> {
    schedule.check_t(t)?;
    let eps = standard_normal_vec(x0.len(), rng);
    Ok((noised(schedule, x0, t, &eps), eps))
}

pub(crate) fn noised(schedule: &NoiseSchedule, x0: &[f64], t: usize, eps: &[f64]) -> Vec<f64> {
    let ab = schedule.alpha_bar(t);
    let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.iter().zip(eps).map(|(x, e)| s * x + n * e).collect()
}

/// Per-timestep affine noise predictor `ε(x, t) = A_t x + b_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionParams {
    pub dim: usize,
    pub horizon: usize,
    /// `[horizon][dim][dim]`, row-major.
    pub a: Vec<f64>,
    /// `[horizon][dim]`.
    pub b: Vec<f64>,
}

impl DiffusionParams {
    pub fn zeros(dim: usize, horizon: usize) -> Self {
        DiffusionParams {
            dim,
            horizon,
            a: vec![0.0; horizon * dim * dim],
            b: vec![0.0; horizon * dim],
        }
    }

    /// The exact noise predictor for data `x0 ~ N(mean, std² I)`.
    ///
    /// For Gaussian data `E[ε | x_t]` is affine in `x_t`:
    /// `c_t (x_t − √ᾱ_t mean)` with `c_t = √(1−ᾱ_t) / (ᾱ_t std² + 1 − ᾱ_t)`.
    pub fn gaussian_denoiser(schedule: &NoiseSchedule, mean: &[f64], std: f64) -> Self {
        let d = mean.len();
        let mut p = Self::zeros(d, schedule.horizon());
        for t in 1..=schedule.horizon() {
            let ab = schedule.alpha_bar(t);
            let c = (1.0 - ab).sqrt() / (ab * std * std + 1.0 - ab);
            for i in 0..d {
                p.a[(t - 1) * d * d + i * d + i] = c;
                p.b[(t - 1) * d + i] = -c * ab.sqrt() * mean[i];
            }
        }
        p
    }

    pub fn num_params(&self) -> usize {
        self.a.len() + self.b.len()
    }

    pub fn a_block(&self, t: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.a[(t - 1) * dd..t * dd]
    }

    pub fn b_block(&self, t: usize) -> &[f64] {
        &self.b[(t - 1) * self.dim..t * self.dim]
    }

    /// Flat view used by optimizers: all of `a`, then all of `b`.
    pub fn param_mut(&mut self, i: usize) -> &mut f64 {
        if i < self.a.len() {
            &mut self.a[i]
        } else {
            &mut self.b[i - self.a.len()]
        }
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.horizon {
            return Err(Error::TimestepOutOfRange { t, horizon: self.horizon });
        }
        Ok(())
    }

    pub fn predict_noise(&self, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
        self.check_t(t)?;
        if x_t.len() != self.dim {
            return Err(Error::shape(format!("x_t has dimension {}, model expects {}", x_t.len(), self.dim)));
        }
        let a = self.a_block(t);
        Ok(self
            .b_block(t)
            .iter()
            .enumerate()
            .map(|(i, bi)| dot(&a[i * self.dim..(i + 1) * self.dim], x_t) + bi)
            .collect())
    }

    /// DDPM ancestral sampler with σ_t² = β_t.
    pub fn ancestral_sample(&self, schedule: &NoiseSchedule, rng: &mut Rng) -> Result<Vec<f64>> {
        if schedule.horizon() != self.horizon {
            return Err(Error::shape(format!(
                "schedule has {} steps, model {}",
                schedule.horizon(),
                self.horizon
            )));
        }
        let mut x = standard_normal_vec(self.dim, rng);
        for t in (1..=self.horizon).rev() {
            let eps = self.predict_noise(&x, t)?;
            let (beta, ab) = (schedule.beta(t), schedule.alpha_bar(t));
            let k = beta / (1.0 - ab).sqrt();
            let inv = 1.0 / (1.0 - beta).sqrt();
            for (xi, ei) in x.iter_mut().zip(&eps) {
                *xi = inv * (*xi - k * ei);
            }
            if t > 1 {
                let z = standard_normal_vec(self.dim, rng);
                let s = beta.sqrt();
                for (xi, zi) in x.iter_mut().zip(z) {
                    *xi += s * zi;
                }
            }
        }
        Ok(x)
    }

    pub fn to_matrix_file(&self, schedule: &NoiseSchedule) -> MatrixFile {
        let mut f = MatrixFile::new("diffusion");
        f.set("dim", self.dim)
            .set("horizon", self.horizon)
            .set("beta_min", format!("{:.16e}", schedule.beta_min))
            .set("beta_max", format!("{:.16e}", schedule.beta_max));
        let d = self.dim;
        for t in 1..=self.horizon {
            f.push(format!("a{t}"), d, d, self.a_block(t).to_vec());
            f.push(format!("b{t}"), 1, d, self.b_block(t).to_vec());
        }
        f
    }

    /// Loads parameters and rebuilds the linear schedule from its header.
    pub fn from_matrix_file(f: &MatrixFile) -> Result<(Self, NoiseSchedule)> {
        f.expect_kind("diffusion")?;
        let (dim, horizon): (usize, usize) = (f.get_parsed("dim")?, f.get_parsed("horizon")?);
        let schedule = build_schedule(horizon, f.get_parsed("beta_min")?, f.get_parsed("beta_max")?)?;
        let mut p = Self::zeros(dim, horizon);
        let dd = dim * dim;
        for t in 1..=horizon {
            p.a[(t - 1) * dd..t * dd].copy_from_slice(f.matrix(&format!("a{t}"), dim, dim)?);
            p.b[(t - 1) * dim..t * dim].copy_from_slice(f.matrix(&format!("b{t}"), 1, dim)?);
        }
        Ok((p, schedule))
    }
}
