//! Score normalization and the dataset-aggregation rules used while merging
//! heterogeneous preference sources.

use std::collections::BTreeMap;

use super::{PairwiseRecord, PointwiseRecord, ScoreScale, Verdict};
use crate::{Error, Result};

/// Affine map of `raw` from `scale` onto [0, 1].
pub fn normalize_point_score(raw: f64, scale: &ScoreScale) -> Result<f64> {
    if !scale.contains(raw) {
        return Err(Error::OutOfRange {
            raw,
            min: scale.min,
            max: scale.max,
        });
    }
    // endpoints map to exactly 0 and 1
    if raw == scale.max {
        return Ok(1.0);
    }
    Ok(((raw - scale.min) / (scale.max - scale.min)).clamp(0.0, 1.0))
}

/// Multi-annotator aggregation: the score is the mean rating, and an element
/// counts as present when at least two annotators marked it.
pub fn aggregate_ratings(
    ratings: &[f64],
    element_votes: &BTreeMap<String, Vec<bool>>,
) -> Result<(f64, BTreeMap<String, bool>)> {
    if ratings.is_empty() {
        return Err(Error::EmptyRatings);
    }
    let mean = ratings.iter().sum::<f64>() / ratings.len() as f64;
    let mut labels = BTreeMap::new();
    for (name, votes) in element_votes {
        if votes.is_empty() {
            return Err(Error::EmptyVotes(name.clone()));
        }
        let yes = votes.iter().filter(|&&v| v).count();
        labels.insert(name.clone(), yes >= 2);
    }
    Ok((mean, labels))
}

/// The item with more votes is preferred. Ties are rejected so the caller can
/// drop the pair.
pub fn pair_from_votes(first_votes: u64, second_votes: u64) -> Result<Verdict> {
    match first_votes.cmp(&second_votes) {
        std::cmp::Ordering::Greater => Ok(Verdict::First),
        std::cmp::Ordering::Less => Ok(Verdict::Second),
        std::cmp::Ordering::Equal => Err(Error::TiedVotes(first_votes)),
    }
}

/// Splits a scored DPO record into its pairwise record and two independent
/// pointwise items.
pub fn split_dpo_record(
    pair: PairwiseRecord,
    first_score: PointwiseRecord,
    second_score: PointwiseRecord,
) -> Result<(PairwiseRecord, Vec<PointwiseRecord>)> {
    for s in [&first_score, &second_score] {
        if s.prompt_id != pair.prompt_id {
            return Err(Error::PromptMismatch {
                expected: pair.prompt_id.clone(),
                found: s.prompt_id.clone(),
            });
        }
    }
    Ok((pair, vec![first_score, second_score]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prefdata::SubjectKind;
    use proptest::prelude::*;

    fn stars() -> ScoreScale {
        ScoreScale::new(1.0, 5.0, "1-5 stars").unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_point_score(3.0, &stars()).unwrap(), 0.5);
        assert_eq!(normalize_point_score(5.0, &stars()).unwrap(), 1.0);
        assert_eq!(normalize_point_score(1.0, &stars()).unwrap(), 0.0);
        assert!(matches!(normalize_point_score(0.0, &stars()), Err(Error::OutOfRange { .. })));
        assert!(normalize_point_score(f64::NAN, &stars()).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let votes = BTreeMap::from([("cat".to_string(), vec![true, true, false])]);
        let (m, l) = aggregate_ratings(&[3.0, 4.0, 5.0], &votes).unwrap();
        assert_eq!(m, 4.0);
        assert_eq!(l["cat"], true);

        let votes = BTreeMap::from([("dog".to_string(), vec![true, false, false])]);
        let (m, l) = aggregate_ratings(&[2.0, 2.0], &votes).unwrap();
        assert_eq!(m, 2.0);
        assert_eq!(l["dog"], false);

        assert!(matches!(aggregate_ratings(&[], &BTreeMap::new()), Err(Error::EmptyRatings)));
        // threshold is absolute, not proportional
        let votes = BTreeMap::from([("sky".to_string(), vec![true, true, false, false, false, false])]);
        assert!(aggregate_ratings(&[1.0], &votes).unwrap().1["sky"]);
    }

    #[test]
    fn vote_examples() {
        assert_eq!(pair_from_votes(10, 3).unwrap(), Verdict::First);
        assert_eq!(pair_from_votes(1, 7).unwrap(), Verdict::Second);
        assert!(matches!(pair_from_votes(5, 5), Err(Error::TiedVotes(5))));
    }

    fn point(prompt: &str, cand: &str, raw: f64) -> PointwiseRecord {
        PointwiseRecord::new(prompt, cand, raw, stars()).unwrap()
    }

    #[test]
    fn split_examples() {
        let mut pair = PairwiseRecord::new("q", "a", "b", SubjectKind::Response, Verdict::First);
        pair.justification = Some("a cites the frame correctly".into());
        let (p, pts) = split_dpo_record(pair.clone(), point("q", "a", 4.0), point("q", "b", 2.0)).unwrap();
        assert_eq!(p, pair);
        assert_eq!(pts, vec![point("q", "a", 4.0), point("q", "b", 2.0)]);
        assert_eq!(p.justification.as_deref(), Some("a cites the frame correctly"));

        let err = split_dpo_record(pair, point("q", "a", 4.0), point("other", "b", 2.0));
        assert!(matches!(err, Err(Error::PromptMismatch { .. })));
    }

    proptest! {
        #[test]
        fn normalize_is_affine_and_monotone(
            lo in -1e3f64..1e3, width in 1e-3f64..1e3, u in 0.0f64..=1.0, v in 0.0f64..=1.0,
        ) {
            let scale = ScoreScale::new(lo, lo + width, "x").unwrap();
            prop_assert_eq!(normalize_point_score(scale.min, &scale).unwrap(), 0.0);
            prop_assert_eq!(normalize_point_score(scale.max, &scale).unwrap(), 1.0);
            let a = (lo + u * width).min(scale.max);
            let b = (lo + v * width).min(scale.max);
            let (na, nb) = (normalize_point_score(a, &scale).unwrap(), normalize_point_score(b, &scale).unwrap());
            if a <= b { prop_assert!(na <= nb); }
            prop_assert!((na - (a - lo) / width).abs() < 1e-9);
        }

        #[test]
        fn aggregation_is_permutation_invariant(
            ratings in prop::collection::vec(0u8..=5, 1..12),
            votes in prop::collection::vec(any::<bool>(), 1..12),
            rot in 0usize..12,
        ) {
            let ratings: Vec<f64> = ratings.into_iter().map(f64::from).collect();
            let mut r2 = ratings.clone();
            r2.reverse();
            let mut v2 = votes.clone();
            let k = rot % v2.len();
            v2.rotate_left(k);
            let a = aggregate_ratings(&ratings, &BTreeMap::from([("e".to_string(), votes)])).unwrap();
            let b = aggregate_ratings(&r2, &BTreeMap::from([("e".to_string(), v2)])).unwrap();
            // small integers: sums are exact regardless of order
            prop_assert_eq!(a, b);
        }

        #[test]
        fn votes_are_antisymmetric(a in 0u64..1000, b in 0u64..1000) {
            prop_assume!(a != b);
            prop_assert_eq!(pair_from_votes(a, b).unwrap().flipped(), pair_from_votes(b, a).unwrap());
        }
    }
}
