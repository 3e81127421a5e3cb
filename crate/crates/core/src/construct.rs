//! Preference-pair construction.
//!
//! The two-stage pipeline takes a pool of `N` candidates for one prompt,
//! splits it into `N/2` pairs, lets the judge rank each pair (winners form the
//! chosen list, losers the rejected list), then scores both lists and keeps
//! the best-scored chosen candidate and the worst-scored rejected one.
//!
//! Ties anywhere are broken toward the lower candidate id.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::judge::Judge;
use crate::prefdata::{Candidate, Extra, PreferencePair, Prompt, Strategy, Verdict};
use crate::seed::{derive, derived_rng};
use crate::{keys, par, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    /// Seeded shuffle, then adjacent elements are paired.
    SeededRandom,
    /// `(O1, O2), (O3, O4), …` in pool order.
    Sequential,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstructConfig {
    pub n_candidates: usize,
    pub pairing: Pairing,
    pub strategy: Strategy,
    pub seed: u64,
}

impl Default for ConstructConfig {
    fn default() -> Self {
        ConstructConfig {
            n_candidates: 10,
            pairing: Pairing::SeededRandom,
            strategy: Strategy::TwoStage,
            seed: 0,
        }
    }
}

impl ConstructConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_candidates == 0 {
            return Err(Error::EmptyPool);
        }
        if self.n_candidates % 2 == 1 {
            return Err(Error::OddPool(self.n_candidates));
        }
        Ok(())
    }
}

/// Winners and losers of the pair-ranking stage, in pair order.
#[derive(Clone, Debug, PartialEq)]
pub struct ChosenRejected {
    pub chosen: Vec<Candidate>,
    pub rejected: Vec<Candidate>,
}

fn check_pool(pool: &[Candidate]) -> Result<()> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    if pool.len() % 2 == 1 {
        return Err(Error::OddPool(pool.len()));
    }
    let mut seen = HashSet::with_capacity(pool.len());
    for c in pool {
        if !seen.insert(c.id.as_str()) {
            return Err(Error::DuplicateId(c.id.clone()));
        }
    }
    Ok(())
}

/// Groups the pool into `N/2` disjoint pairs.
pub fn make_pairs(pool: &[Candidate], pairing: Pairing, seed: u64) -> Result<Vec<(&Candidate, &Candidate)>> {
    check_pool(pool)?;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    if pairing == Pairing::SeededRandom {
        order.shuffle(&mut derived_rng(seed, keys!["pairing"]));
    }
    Ok(order.chunks_exact(2).map(|c| (&pool[c[0]], &pool[c[1]])).collect())
}

pub fn rank_stage(pairs: &[(&Candidate, &Candidate)], judge: &dyn Judge, prompt: &Prompt) -> Result<ChosenRejected> {
    let mut cr = ChosenRejected {
        chosen: Vec::with_capacity(pairs.len()),
        rejected: Vec::with_capacity(pairs.len()),
    };
    for &(a, b) in pairs {
        let (w, l) = match judge.rank_pair(prompt, a, b)? {
            Verdict::First => (a, b),
            Verdict::Second => (b, a),
        };
        cr.chosen.push(w.clone());
        cr.rejected.push(l.clone());
    }
    Ok(cr)
}

/// Index and score of the best (`want_max`) or worst candidate, ties to the
/// lower id.
fn extreme_by_score(cands: &[Candidate], scores: &[f64], want_max: bool) -> (usize, f64) {
    let mut best = 0;
    for i in 1..cands.len() {
        let (s, b) = (scores[i], scores[best]);
        let better = if want_max { s > b } else { s < b };
        if better || (s == b && cands[i].id < cands[best].id) {
            best = i;
        }
    }
    (best, scores[best])
}

fn score_all(cands: &[Candidate], judge: &dyn Judge, prompt: &Prompt) -> Result<Vec<f64>> {
    cands.iter().map(|c| judge.score(prompt, c)).collect()
}

fn new_pair(prompt: &Prompt, chosen: &Candidate, rejected: &Candidate, strategy: Strategy, scores: Option<(f64, f64)>, seed: u64) -> PreferencePair {
    PreferencePair {
        prompt_id: prompt.id.clone(),
        chosen_id: chosen.id.clone(),
        rejected_id: rejected.id.clone(),
        strategy,
        chosen_score: scores.map(|s| s.0),
        rejected_score: scores.map(|s| s.1),
        rng_seed: seed,
        extra: Extra::new(),
    }
}

/// Point sifting: argmax score over the chosen list, argmin over the rejected
/// list. The returned pair has `rng_seed` 0; [`construct_preference`] fills it.
pub fn sift_stage(cr: &ChosenRejected, judge: &dyn Judge, prompt: &Prompt) -> Result<PreferencePair> {
    if cr.chosen.is_empty() {
        return Err(Error::EmptyList("chosen"));
    }
    if cr.rejected.is_empty() {
        return Err(Error::EmptyList("rejected"));
    }
    let (ci, cs) = extreme_by_score(&cr.chosen, &score_all(&cr.chosen, judge, prompt)?, true);
    let (ri, rs) = extreme_by_score(&cr.rejected, &score_all(&cr.rejected, judge, prompt)?, false);
    Ok(new_pair(prompt, &cr.chosen[ci], &cr.rejected[ri], Strategy::TwoStage, Some((cs, rs)), 0))
}

/// Builds one preference pair for `prompt` with the configured strategy. All
/// randomness is drawn from `config.seed`.
pub fn construct_preference(prompt: &Prompt, pool: &[Candidate], judge: &dyn Judge, config: &ConstructConfig) -> Result<PreferencePair> {
    config.validate()?;
    check_pool(pool)?;
    if pool.len() != config.n_candidates {
        return Err(Error::shape(format!(
            "pool for {} has {} candidates, expected {}",
            prompt.id,
            pool.len(),
            config.n_candidates
        )));
    }
    let seed = config.seed;
    let mut pick = derived_rng(seed, keys!["pick"]);
    let pair = match config.strategy {
        Strategy::TwoStage => {
            let pairs = make_pairs(pool, config.pairing, seed)?;
            let cr = rank_stage(&pairs, judge, prompt)?;
            sift_stage(&cr, judge, prompt)?
        }
        Strategy::Random => {
            let i = pick.gen_range(0..pool.len());
            let mut j = pick.gen_range(0..pool.len() - 1);
            if j >= i {
                j += 1;
            }
            new_pair(prompt, &pool[i], &pool[j], Strategy::Random, None, seed)
        }
        Strategy::PointOnly => {
            let scores = score_all(pool, judge, prompt)?;
            let (ci, cs) = extreme_by_score(pool, &scores, true);
            let (ri, rs) = extreme_by_score(pool, &scores, false);
            if ci == ri {
                // only possible when every score ties; fall back to the next id
                let ri = if ci == 0 { 1 } else { 0 };
                new_pair(prompt, &pool[ci], &pool[ri], Strategy::PointOnly, Some((cs, scores[ri])), seed)
            } else {
                new_pair(prompt, &pool[ci], &pool[ri], Strategy::PointOnly, Some((cs, rs)), seed)
            }
        }
        Strategy::PairOnly => {
            let pairs = make_pairs(pool, config.pairing, seed)?;
            let cr = rank_stage(&pairs, judge, prompt)?;
            let c = &cr.chosen[pick.gen_range(0..cr.chosen.len())];
            let r = &cr.rejected[pick.gen_range(0..cr.rejected.len())];
            new_pair(prompt, c, r, Strategy::PairOnly, None, seed)
        }
    };
    Ok(PreferencePair { rng_seed: seed, ..pair })
}

/// Per-prompt seed used by [`batch_construct`].
pub fn prompt_seed(master: u64, prompt_id: &str) -> u64 {
    derive(master, keys![prompt_id])
}

#[derive(Debug, Default)]
pub struct BatchOutcome {
    pub pairs: Vec<PreferencePair>,
    /// Failed prompts with their error, in input order.
    pub failures: Vec<(String, Error)>,
}

/// One pair per prompt. Each prompt gets its own derived seed, so the output
/// is independent of `workers`.
pub fn batch_construct(
    items: &[(Prompt, Vec<Candidate>)],
    judge: &dyn Judge,
    config: &ConstructConfig,
    workers: usize,
) -> BatchOutcome {
    let results = par::map_ordered(items, workers, |(prompt, pool)| {
        let cfg = ConstructConfig {
            seed: prompt_seed(config.seed, &prompt.id),
            ..*config
        };
        construct_preference(prompt, pool, judge, &cfg)
    });
    let mut out = BatchOutcome::default();
    for ((prompt, _), r) in items.iter().zip(results) {
        match r {
            Ok(p) => out.pairs.push(p),
            Err(e) => out.failures.push((prompt.id.clone(), e)),
        }
    }
    out
}
