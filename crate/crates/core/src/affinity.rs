//! Caption affinity over the working set.
//!
//! Each image gets a baseline and an augmented caption similarity. Both are
//! turned into empirical percentile ranks within the working set, and the
//! bias score is the change in rank: `delta_c = P_a - P_b`. Only ranks
//! matter, so any strictly increasing rescaling of either score leaves the
//! result untouched.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{dot_clamped, normalized, EmbeddingMatrix, WorkingSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub baseline: String,
    pub augmented: String,
    pub k: usize,
}

impl Query {
    pub fn validate(&self) -> Result<()> {
        if self.baseline.trim().is_empty() {
            return Err(Error::InvalidArgument("baseline caption is empty".into()));
        }
        if self.augmented.trim().is_empty() {
            return Err(Error::InvalidArgument("augmented caption is empty".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidK { k: 0, count: 0 });
        }
        Ok(())
    }
}

/// Per-image affinity scores, aligned with the working-set order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityProfile {
    pub s_b: Vec<f64>,
    pub s_a: Vec<f64>,
    pub p_b: Vec<f64>,
    pub p_a: Vec<f64>,
    pub delta_c: Vec<f64>,
}

impl AffinityProfile {
    pub fn len(&self) -> usize {
        self.delta_c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta_c.is_empty()
    }
}

/// Cosine similarity of each working-set image to a caption embedding.
pub fn caption_similarities(
    matrix: &EmbeddingMatrix,
    ws: &WorkingSet,
    caption_embedding: &[f32],
) -> Result<Vec<f64>> {
    if ws.is_empty() {
        return Err(Error::Empty("working set"));
    }
    let caption = normalized(caption_embedding)?;
    if caption.len() != matrix.dim() {
        return Err(Error::DimensionMismatch {
            expected: matrix.dim(),
            got: caption.len(),
        });
    }
    Ok(ws
        .rows()
        .iter()
        .map(|&r| dot_clamped(matrix.row(r), &caption))
        .collect())
}

/// `P_i = |{j : score_j <= score_i}| / n`. Tied scores share the larger rank.
pub fn percentile_ranks(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::Empty("scores"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("scores contain NaN".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let n = scores.len() as f64;
    Ok(scores
        .iter()
        .map(|&s| sorted.partition_point(|&x| x <= s) as f64 / n)
        .collect())
}

/// Builds a profile from raw baseline/augmented similarities.
pub fn profile_from_scores(s_b: Vec<f64>, s_a: Vec<f64>) -> Result<AffinityProfile> {
    if s_b.len() != s_a.len() {
        return Err(Error::DimensionMismatch {
            expected: s_b.len(),
            got: s_a.len(),
        });
    }
    let p_b = percentile_ranks(&s_b)?;
    let p_a = percentile_ranks(&s_a)?;
    let delta_c = p_a.iter().zip(&p_b).map(|(a, b)| a - b).collect();
    Ok(AffinityProfile {
        s_b,
        s_a,
        p_b,
        p_a,
        delta_c,
    })
}

pub fn delta_c(
    matrix: &EmbeddingMatrix,
    ws: &WorkingSet,
    baseline_embedding: &[f32],
    augmented_embedding: &[f32],
) -> Result<AffinityProfile> {
    let s_b = caption_similarities(matrix, ws, baseline_embedding)?;
    let s_a = caption_similarities(matrix, ws, augmented_embedding)?;
    profile_from_scores(s_b, s_a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::select_working_set;
    use proptest::prelude::*;

    #[test]
    fn percentiles_by_hand() {
        let p = percentile_ranks(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(p, vec![0.25, 0.5, 0.75, 1.0]);
        let p = percentile_ranks(&[0.3, 0.1, 0.4, 0.2]).unwrap();
        assert_eq!(p, vec![0.75, 0.25, 1.0, 0.5]);
    }

    #[test]
    fn equal_scores_share_top_percentile() {
        assert_eq!(percentile_ranks(&[0.5; 5]).unwrap(), vec![1.0; 5]);
    }

    #[test]
    fn empty_scores_rejected() {
        assert!(matches!(percentile_ranks(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn swapped_top_two_ranks() {
        // baseline ranks (1,2,3,4) and augmented (2,1,3,4), rank 1 = lowest score.
        let s_b = vec![0.1, 0.2, 0.3, 0.4];
        let s_a = vec![0.2, 0.1, 0.3, 0.4];
        let profile = profile_from_scores(s_b, s_a).unwrap();
        assert_eq!(profile.delta_c, vec![0.25, -0.25, 0.0, 0.0]);
    }

    #[test]
    fn rank_preserved_despite_lower_raw_score() {
        // Fourth place under both captions, even though its raw score drops.
        let s_b = vec![0.90, 0.85, 0.80, 0.75, 0.10];
        let s_a = vec![0.50, 0.45, 0.40, 0.30, 0.05];
        let profile = profile_from_scores(s_b, s_a).unwrap();
        assert_eq!(profile.delta_c[3], 0.0);
        assert!(profile.s_a[3] < profile.s_b[3]);
    }

    fn matrix() -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(
            (0..5).map(|i| format!("i{i}")).collect(),
            3,
            vec![
                1.0, 0.2, 0.1, 0.3, 1.0, 0.0, 0.5, 0.5, 0.5, -0.2, 0.1, 1.0, 0.9, -0.4, 0.3,
            ],
        )
        .unwrap()
    }

    #[test]
    fn identical_captions_give_zero_delta() {
        let m = matrix();
        let ws = select_working_set(&m, "b", &[1.0, 0.0, 0.0], 5).unwrap();
        let p = delta_c(&m, &ws, &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
        assert!(p.delta_c.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn caption_similarity_examples() {
        let m = EmbeddingMatrix::from_rows(vec!["x".into()], 2, vec![0.6, 0.8]).unwrap();
        let ws = select_working_set(&m, "b", &[0.6, 0.8], 1).unwrap();
        assert_eq!(
            caption_similarities(&m, &ws, &[0.6, 0.8]).unwrap(),
            vec![1.0]
        );
        assert_eq!(
            caption_similarities(&m, &ws, &[-0.8, 0.6]).unwrap(),
            vec![0.0]
        );
        assert!(matches!(
            caption_similarities(&m, &ws, &[1.0, 0.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn caption_similarities_match_scalar_loop() {
        let m = matrix();
        let caption = [0.3f32, -0.7, 0.2];
        let ws = select_working_set(&m, "b", &caption, 5).unwrap();
        let got = caption_similarities(&m, &ws, &caption).unwrap();
        let cnorm = caption.iter().map(|x| x * x).sum::<f32>().sqrt();
        for (pos, &row) in ws.rows().iter().enumerate() {
            let mut dot = 0.0f64;
            for (x, c) in m.row(row).iter().zip(&caption) {
                dot += f64::from(*x) * f64::from(c / cnorm);
            }
            assert!((got[pos] - dot).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn monotone_transform_preserves_percentiles(
            scores in prop::collection::vec(-1.0f64..1.0, 1..60),
            scale in 0.1f64..10.0,
            shift in -5.0f64..5.0,
        ) {
            let transformed: Vec<f64> = scores.iter().map(|s| (scale * s + shift).exp()).collect();
            // Only meaningful where floating point kept the transform strictly increasing.
            let strict = scores.iter().zip(&transformed).all(|(a, ta)| {
                scores.iter().zip(&transformed).all(|(b, tb)| (a < b) == (ta < tb))
            });
            prop_assume!(strict);
            prop_assert_eq!(percentile_ranks(&scores).unwrap(), percentile_ranks(&transformed).unwrap());
        }

        #[test]
        fn delta_c_bounded_and_zero_sum_when_distinct(
            pairs in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..80)
        ) {
            let (s_b, s_a): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let n = s_b.len() as f64;
            let p = profile_from_scores(s_b.clone(), s_a.clone()).unwrap();
            for d in &p.delta_c {
                prop_assert!(*d >= 1.0 / n - 1.0 && *d <= 1.0 - 1.0 / n);
            }
            let distinct = |v: &Vec<f64>| {
                let mut s = v.clone();
                s.sort_by(f64::total_cmp);
                s.windows(2).all(|w| w[0] < w[1])
            };
            if distinct(&s_b) && distinct(&s_a) {
                let sum: f64 = p.delta_c.iter().sum();
                prop_assert!(sum.abs() < 1e-9);
            }
        }
    }
}
