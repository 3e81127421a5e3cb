//! Direct preference optimization for both toy model families.
//!
//! Understanding form, with `Δ = [log π_θ(y_w) − log π_ref(y_w)] − [log π_θ(y_l) − log π_ref(y_l)]`:
//! the loss is `−log σ(β_u Δ)` (or `−β_u log σ(Δ)` with `beta_inside_sigmoid = false`).
//!
//! Generation form, with `e(m, x₀) = ‖ε − ε_m(x_t, t)‖²` and
//! `δ = [e(θ, x_w) − e(ref, x_w)] − [e(θ, x_l) − e(ref, x_l)]`: the loss is
//! `−log σ(−c δ)` where `c = β_g` or `β_g²` depending on [`PrefactorMode`].
//!
//! Both losses are averaged over the batch (and over the timestep draws for
//! the generation form). The reference model is never modified.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::prefdata::{Dataset, Payload, Prompt};
use crate::seed::{derive, derived_rng, Rng};
use crate::toymodels::{standard_normal_vec, DiffusionParams, NoiseSchedule, PolicyParams};
use crate::{keys, Error, Result};

pub use crate::stats::logistic;
use crate::stats::neg_log_sigmoid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UndDpoConfig {
    pub beta_u: f64,
    pub beta_inside_sigmoid: bool,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for UndDpoConfig {
    fn default() -> Self {
        UndDpoConfig {
            beta_u: 0.1,
            beta_inside_sigmoid: true,
            learning_rate: 1e-2,
            epochs: 3,
            batch_size: 16,
            seed: 0,
        }
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be positive, got {v}")))
    }
}

impl UndDpoConfig {
    pub fn validate(&self) -> Result<()> {
        positive("beta_u", self.beta_u)?;
        positive("learning_rate", self.learning_rate)?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrefactorMode {
    /// Total coefficient `β_g`.
    SingleConstant,
    /// Total coefficient `β_g²`.
    Squared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenDpoConfig {
    pub beta_g: f64,
    pub prefactor_mode: PrefactorMode,
    pub timesteps_per_pair: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for GenDpoConfig {
    fn default() -> Self {
        GenDpoConfig {
            beta_g: 5000.0,
            prefactor_mode: PrefactorMode::SingleConstant,
            timesteps_per_pair: 4,
            learning_rate: 1e-3,
            epochs: 3,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl GenDpoConfig {
    pub fn validate(&self) -> Result<()> {
        positive("beta_g", self.beta_g)?;
        positive("learning_rate", self.learning_rate)?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.timesteps_per_pair == 0 {
            return Err(Error::config("timesteps_per_pair", "must be positive"));
        }
        Ok(())
    }

    /// The coefficient `c` multiplying the noise-error difference.
    pub fn coefficient(&self) -> f64 {
        match self.prefactor_mode {
            PrefactorMode::SingleConstant => self.beta_g,
            PrefactorMode::Squared => self.beta_g * self.beta_g,
        }
    }
}

/// A prompt with a preferred and a dispreferred output.
#[derive(Clone, Debug, PartialEq)]
pub struct DpoTriple {
    pub prompt: Prompt,
    pub y_w: Payload,
    pub y_l: Payload,
}

impl DpoTriple {
    pub fn new(prompt: Prompt, y_w: Payload, y_l: Payload) -> Result<Self> {
        if y_w == y_l {
            return Err(Error::shape(format!("identical chosen and rejected outputs for {}", prompt.id)));
        }
        Ok(DpoTriple { prompt, y_w, y_l })
    }

    pub fn swapped(&self) -> Self {
        DpoTriple {
            prompt: self.prompt.clone(),
            y_w: self.y_l.clone(),
            y_l: self.y_w.clone(),
        }
    }
}

/// Resolves every preference pair in `data` against its prompt and candidates.
pub fn resolve_triples(data: &Dataset) -> Result<Vec<DpoTriple>> {
    let prompts = data.prompt_index();
    let cands = data.candidate_index();
    data.pairs()
        .map(|p| {
            let prompt = *prompts.get(p.prompt_id.as_str()).ok_or_else(|| Error::UnresolvedId(p.prompt_id.clone()))?;
            let get = |id: &str| {
                cands
                    .get(id)
                    .map(|c| c.payload.clone())
                    .ok_or_else(|| Error::UnresolvedId(id.to_string()))
            };
            DpoTriple::new(prompt.clone(), get(&p.chosen_id)?, get(&p.rejected_id)?)
        })
        .collect()
}

fn tokens<'a>(p: &'a Payload, prompt: &Prompt) -> Result<&'a [usize]> {
    p.as_tokens()
        .ok_or_else(|| Error::shape(format!("triple for {} needs token outputs", prompt.id)))
}

fn vector<'a>(p: &'a Payload, prompt: &Prompt, dim: usize) -> Result<&'a [f64]> {
    match p.as_vector() {
        Some(v) if v.len() == dim => Ok(v),
        Some(v) => Err(Error::shape(format!("output for {} has dimension {}, model {}", prompt.id, v.len(), dim))),
        None => Err(Error::shape(format!("triple for {} needs vector outputs", prompt.id))),
    }
}

fn check_policy_shapes(theta: &PolicyParams, reference: &PolicyParams) -> Result<()> {
    if (theta.seq_len, theta.vocab, theta.dim) != (reference.seq_len, reference.vocab, reference.dim)
        || theta.weights.len() != reference.weights.len()
    {
        return Err(Error::shape("policy and reference shapes differ"));
    }
    Ok(())
}

fn check_diffusion_shapes(theta: &DiffusionParams, reference: &DiffusionParams, schedule: &NoiseSchedule) -> Result<()> {
    if (theta.dim, theta.horizon) != (reference.dim, reference.horizon) {
        return Err(Error::shape("diffusion model and reference shapes differ"));
    }
    if schedule.horizon() != theta.horizon {
        return Err(Error::shape(format!(
            "schedule has {} steps, model {}",
            schedule.horizon(),
            theta.horizon
        )));
    }
    Ok(())
}

/// `Δ` for one triple.
pub fn und_log_ratio_gap(theta: &PolicyParams, reference: &PolicyParams, triple: &DpoTriple) -> Result<f64> {
    let p = &triple.prompt;
    let (w, l) = (tokens(&triple.y_w, p)?, tokens(&triple.y_l, p)?);
    Ok((theta.log_prob(p, w)? - reference.log_prob(p, w)?) - (theta.log_prob(p, l)? - reference.log_prob(p, l)?))
}

fn und_term(delta: f64, cfg: &UndDpoConfig) -> (f64, f64) {
    let b = cfg.beta_u;
    if cfg.beta_inside_sigmoid {
        (neg_log_sigmoid(b * delta), -b * logistic(-b * delta))
    } else {
        (b * neg_log_sigmoid(delta), -b * logistic(-delta))
    }
}

/// Loss and gradient (as a [`PolicyParams`] holding `∂L/∂W`).
pub fn und_dpo_loss_grad(
    theta: &PolicyParams,
    reference: &PolicyParams,
    batch: &[DpoTriple],
    cfg: &UndDpoConfig,
) -> Result<(f64, PolicyParams)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    check_policy_shapes(theta, reference)?;
    let n = batch.len() as f64;
    let mut grad = PolicyParams::zeros(theta.seq_len, theta.vocab, theta.dim);
    let mut loss = 0.0;
    for tr in batch {
        let delta = und_log_ratio_gap(theta, reference, tr)?;
        let (l, dl) = und_term(delta, cfg);
        loss += l;
        let p = &tr.prompt;
        theta.accumulate_log_prob_grad(p, tokens(&tr.y_w, p)?, dl / n, &mut grad.weights)?;
        theta.accumulate_log_prob_grad(p, tokens(&tr.y_l, p)?, -dl / n, &mut grad.weights)?;
    }
    Ok((loss / n, grad))
}

pub fn und_dpo_loss(theta: &PolicyParams, reference: &PolicyParams, batch: &[DpoTriple], cfg: &UndDpoConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    check_policy_shapes(theta, reference)?;
    let mut loss = 0.0;
    for tr in batch {
        loss += und_term(und_log_ratio_gap(theta, reference, tr)?, cfg).0;
    }
    Ok(loss / batch.len() as f64)
}

pub fn und_dpo_grad(theta: &PolicyParams, reference: &PolicyParams, batch: &[DpoTriple], cfg: &UndDpoConfig) -> Result<PolicyParams> {
    und_dpo_loss_grad(theta, reference, batch, cfg).map(|(_, g)| g)
}

/// One timestep and the forward-process noise for both outputs of a triple.
#[derive(Clone, Debug, PartialEq)]
pub struct GenDraw {
    pub t: usize,
    pub eps_w: Vec<f64>,
    pub eps_l: Vec<f64>,
}

/// `k` draws for one triple: `t` uniform on `{1, …, T}`, then independent
/// noise for the winner and the loser.
pub fn draw_gen_noise(schedule: &NoiseSchedule, dim: usize, k: usize, rng: &mut Rng) -> Vec<GenDraw> {
    (0..k)
        .map(|_| {
            let t = rng.gen_range(1..=schedule.horizon());
            let eps_w = standard_normal_vec(dim, rng);
            let eps_l = standard_normal_vec(dim, rng);
            GenDraw { t, eps_w, eps_l }
        })
        .collect()
}

fn noised(schedule: &NoiseSchedule, x0: &[f64], t: usize, eps: &[f64]) -> Vec<f64> {
    crate::toymodels::noised(schedule, x0, t, eps)
}

/// `‖ε − ε_m(x_t, t)‖²` and the residual `ε − ε_m`.
fn noise_error(m: &DiffusionParams, x_t: &[f64], t: usize, eps: &[f64]) -> Result<(f64, Vec<f64>)> {
    let pred = m.predict_noise(x_t, t)?;
    let r: Vec<f64> = eps.iter().zip(&pred).map(|(e, p)| e - p).collect();
    Ok((r.iter().map(|v| v * v).sum(), r))
}

/// Adds `coef · ∇_θ e` into `grad`, using `∇_A e = −2 r x_tᵀ`, `∇_b e = −2 r`.
fn accumulate_error_grad(grad: &mut DiffusionParams, x_t: &[f64], t: usize, r: &[f64], coef: f64) {
    let d = grad.dim;
    let a0 = (t - 1) * d * d;
    let b0 = (t - 1) * d;
    for i in 0..d {
        let g = -2.0 * coef * r[i];
        grad.b[b0 + i] += g;
        for j in 0..d {
            grad.a[a0 + i * d + j] += g * x_t[j];
        }
    }
}

/// Generation loss and gradient at explicit draws. `draws[i]` belongs to
/// `batch[i]` and must hold `cfg.timesteps_per_pair` entries.
pub fn gen_dpo_loss_grad_at(
    theta: &DiffusionParams,
    reference: &DiffusionParams,
    batch: &[DpoTriple],
    draws: &[Vec<GenDraw>],
    schedule: &NoiseSchedule,
    cfg: &GenDpoConfig,
) -> Result<(f64, DiffusionParams)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    check_diffusion_shapes(theta, reference, schedule)?;
    if draws.len() != batch.len() {
        return Err(Error::shape(format!("{} draw sets for {} triples", draws.len(), batch.len())));
    }
    let c = cfg.coefficient();
    let total: usize = draws.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::EmptyBatch);
    }
    let n = total as f64;
    let mut grad = DiffusionParams::zeros(theta.dim, theta.horizon);
    let mut loss = 0.0;
    for (tr, ds) in batch.iter().zip(draws) {
        let p = &tr.prompt;
        let (xw, xl) = (vector(&tr.y_w, p, theta.dim)?, vector(&tr.y_l, p, theta.dim)?);
        for dr in ds {
            schedule.check_t(dr.t)?;
            if dr.eps_w.len() != theta.dim || dr.eps_l.len() != theta.dim {
                return Err(Error::shape("noise draw dimension differs from model"));
            }
            let xtw = noised(schedule, xw, dr.t, &dr.eps_w);
            let xtl = noised(schedule, xl, dr.t, &dr.eps_l);
            let (etw, rw) = noise_error(theta, &xtw, dr.t, &dr.eps_w)?;
            let (erw, _) = noise_error(reference, &xtw, dr.t, &dr.eps_w)?;
            let (etl, rl) = noise_error(theta, &xtl, dr.t, &dr.eps_l)?;
            let (erl, _) = noise_error(reference, &xtl, dr.t, &dr.eps_l)?;
            let delta = (etw - erw) - (etl - erl);
            loss += neg_log_sigmoid(-c * delta);
            let k = c * logistic(c * delta) / n;
            accumulate_error_grad(&mut grad, &xtw, dr.t, &rw, k);
            accumulate_error_grad(&mut grad, &xtl, dr.t, &rl, -k);
        }
    }
    Ok((loss / n, grad))
}

fn batch_draws(batch: &[DpoTriple], dim: usize, schedule: &NoiseSchedule, cfg: &GenDpoConfig, rng: &mut Rng) -> Vec<Vec<GenDraw>> {
    batch
        .iter()
        .map(|_| draw_gen_noise(schedule, dim, cfg.timesteps_per_pair, rng))
        .collect()
}

/// Generation loss with draws taken from `rng`. Passing a clone of the same
/// generator to [`gen_dpo_grad`] yields the gradient at identical draws.
pub fn gen_dpo_loss(
    theta: &DiffusionParams,
    reference: &DiffusionParams,
    batch: &[DpoTriple],
    schedule: &NoiseSchedule,
    cfg: &GenDpoConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let draws = batch_draws(batch, theta.dim, schedule, cfg, rng);
    gen_dpo_loss_grad_at(theta, reference, batch, &draws, schedule, cfg).map(|(l, _)| l)
}

pub fn gen_dpo_grad(
    theta: &DiffusionParams,
    reference: &DiffusionParams,
    batch: &[DpoTriple],
    schedule: &NoiseSchedule,
    cfg: &GenDpoConfig,
    rng: &mut Rng,
) -> Result<DiffusionParams> {
    let draws = batch_draws(batch, theta.dim, schedule, cfg, rng);
    gen_dpo_loss_grad_at(theta, reference, batch, &draws, schedule, cfg).map(|(_, g)| g)
}

/// One row of a training trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
}

pub fn write_trace_csv(trace: &[TracePoint], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in trace {
        w.serialize(p).map_err(|e| Error::io("<trace>", std::io::Error::other(e)))?;
    }
    w.flush().map_err(|e| Error::io("<trace>", e))?;
    Ok(())
}

pub fn save_trace_csv(trace: &[TracePoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace_csv(trace, std::io::BufWriter::new(f)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Shared SGD driver: shuffles indices per epoch, calls `step` on each
/// minibatch, records the pre-update loss.
fn sgd_epochs<F>(n: usize, epochs: usize, batch_size: usize, seed: u64, label: &str, mut step: F) -> Result<Vec<TracePoint>>
where
    F: FnMut(usize, &[usize]) -> Result<f64>,
{
    let mut trace = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..epochs {
        order.sort_unstable();
        order.shuffle(&mut derived_rng(seed, keys![label, epoch]));
        for chunk in order.chunks(batch_size) {
            let loss = step(epoch, chunk)?;
            trace.push(TracePoint {
                step: trace.len(),
                epoch,
                loss,
            });
        }
    }
    Ok(trace)
}

/// SGD on the understanding loss against a frozen copy of `theta_init`.
pub fn train_und_dpo(theta_init: &PolicyParams, triples: &[DpoTriple], cfg: &UndDpoConfig) -> Result<(PolicyParams, Vec<TracePoint>)> {
    cfg.validate()?;
    if triples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let reference = theta_init.clone();
    let mut theta = theta_init.clone();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let trace = sgd_epochs(triples.len(), cfg.epochs, cfg.batch_size, cfg.seed, "und-dpo-epoch", |_, idx| {
        batch.clear();
        batch.extend(idx.iter().map(|&i| triples[i].clone()));
        let (loss, g) = und_dpo_loss_grad(&theta, &reference, &batch, cfg)?;
        for (w, gw) in theta.weights.iter_mut().zip(&g.weights) {
            *w -= cfg.learning_rate * gw;
        }
        Ok(loss)
    })?;
    Ok((theta, trace))
}

/// SGD on the generation loss against a frozen copy of `theta_init`. Fresh
/// draws per triple per epoch, keyed by `(seed, epoch, triple index)`.
pub fn train_gen_dpo(
    theta_init: &DiffusionParams,
    triples: &[DpoTriple],
    schedule: &NoiseSchedule,
    cfg: &GenDpoConfig,
) -> Result<(DiffusionParams, Vec<TracePoint>)> {
    cfg.validate()?;
    if triples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let reference = theta_init.clone();
    let mut theta = theta_init.clone();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut draws = Vec::with_capacity(cfg.batch_size);
    let trace = sgd_epochs(triples.len(), cfg.epochs, cfg.batch_size, cfg.seed, "gen-dpo-epoch", |epoch, idx| {
        batch.clear();
        draws.clear();
        for &i in idx {
            batch.push(triples[i].clone());
            let mut rng = derived_rng(cfg.seed, keys!["gen-dpo-draw", epoch, i]);
            draws.push(draw_gen_noise(schedule, theta.dim, cfg.timesteps_per_pair, &mut rng));
        }
        let (loss, g) = gen_dpo_loss_grad_at(&theta, &reference, &batch, &draws, schedule, cfg)?;
        for (w, gw) in theta.a.iter_mut().zip(&g.a) {
            *w -= cfg.learning_rate * gw;
        }
        for (w, gw) in theta.b.iter_mut().zip(&g.b) {
            *w -= cfg.learning_rate * gw;
        }
        Ok(loss)
    })?;
    Ok((theta, trace))
}

/// `n` timesteps spread evenly over `{1, …, T}`.
pub fn timestep_grid(horizon: usize, n: usize) -> Vec<usize> {
    let n = n.clamp(1, horizon.max(1));
    let mut g: Vec<usize> = (0..n)
        .map(|i| 1 + ((i as f64 + 0.5) * horizon as f64 / n as f64) as usize)
        .map(|t| t.min(horizon))
        .collect();
    g.dedup();
    g
}

/// Models and settings for [`implicit_reward_margin`].
#[derive(Clone, Copy, Debug)]
pub enum MarginModel<'a> {
    Und {
        theta: &'a PolicyParams,
        reference: &'a PolicyParams,
        beta_u: f64,
    },
    Gen {
        theta: &'a DiffusionParams,
        reference: &'a DiffusionParams,
        schedule: &'a NoiseSchedule,
        coefficient: f64,
        grid: &'a [usize],
        /// Noise for each grid point is keyed by `(seed, prompt id, t)` and
        /// shared by both outputs.
        seed: u64,
    },
}

/// Positive when the tuned model prefers `y_w` over `y_l` more than the
/// reference does. Exactly zero at `θ = ref` and antisymmetric in the outputs.
pub fn implicit_reward_margin(model: &MarginModel<'_>, pair: &DpoTriple) -> Result<f64> {
    match *model {
        MarginModel::Und { theta, reference, beta_u } => {
            check_policy_shapes(theta, reference)?;
            Ok(beta_u * und_log_ratio_gap(theta, reference, pair)?)
        }
        MarginModel::Gen {
            theta,
            reference,
            schedule,
            coefficient,
            grid,
            seed,
        } => {
            check_diffusion_shapes(theta, reference, schedule)?;
            if grid.is_empty() {
                return Err(Error::shape("empty timestep grid"));
            }
            let p = &pair.prompt;
            let (xw, xl) = (vector(&pair.y_w, p, theta.dim)?, vector(&pair.y_l, p, theta.dim)?);
            let mut acc = 0.0;
            for &t in grid {
                schedule.check_t(t)?;
                let mut rng = derived_rng(derive(seed, keys!["margin", &p.id]), keys![t]);
                let eps = standard_normal_vec(theta.dim, &mut rng);
                let gap = |x0: &[f64]| -> Result<f64> {
                    let xt = noised(schedule, x0, t, &eps);
                    Ok(noise_error(theta, &xt, t, &eps)?.0 - noise_error(reference, &xt, t, &eps)?.0)
                };
                acc += gap(xw)? - gap(xl)?;
            }
            Ok(-coefficient * acc / grid.len() as f64)
        }
    }
}
