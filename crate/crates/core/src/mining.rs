//! Outlier selection strategies.
//!
//! The estimated boundary score of a candidate is `-|w^T phi(x)|`: zero on
//! the estimated ID/outlier boundary and increasingly negative away from it.
//! Thompson sampling draws `w` from the posterior before scoring, the greedy
//! baseline scores with the posterior mean, and the random baseline ignores
//! scores altogether.

use std::str::FromStr;

use thiserror::Error;

use crate::linalg::dot;
use crate::posterior::PosteriorState;
use crate::rng::RngStream;

#[derive(Debug, Error, PartialEq)]
pub enum MiningError {
    #[error("outlier pool is empty")]
    EmptyPool,
}

/// How outliers are picked from the pool each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Draw `w` from the posterior, then take the top boundary scores.
    Thompson,
    /// Score with the posterior mean: exploitation without exploration.
    GreedyMean,
    /// Uniform subset without replacement.
    Random,
}

impl SamplerKind {
    pub fn name(&self) -> &'static str {
        match self {
            SamplerKind::Thompson => "thompson",
            SamplerKind::GreedyMean => "greedy",
            SamplerKind::Random => "random",
        }
    }
}

impl FromStr for SamplerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "thompson" => Ok(SamplerKind::Thompson),
            "greedy" | "greedy_mean" => Ok(SamplerKind::GreedyMean),
            "random" => Ok(SamplerKind::Random),
            other => Err(format!(
                "unknown sampler '{other}' (expected thompson, greedy, or random)"
            )),
        }
    }
}

/// Candidate outliers drawn from the auxiliary distribution for one epoch.
#[derive(Debug, Clone)]
pub struct OutlierPool {
    pub samples: Vec<Vec<f64>>,
}

impl OutlierPool {
    pub fn new(samples: Vec<Vec<f64>>) -> Self {
        OutlierPool { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Selected pool entries with their estimated boundary scores, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct MinedSet {
    selected: Vec<(usize, f64)>,
}

impl MinedSet {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.selected.iter().map(|(i, _)| *i)
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.selected
    }

    /// `(mean, min, max)` of the estimated boundary scores.
    pub fn score_stats(&self) -> (f64, f64, f64) {
        if self.selected.is_empty() {
            return (f64::NAN, f64::NAN, f64::NAN);
        }
        let mut sum = 0.0;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &(_, s) in &self.selected {
            sum += s;
            lo = lo.min(s);
            hi = hi.max(s);
        }
        (sum / self.selected.len() as f64, lo, hi)
    }
}

/// Estimated boundary score `-|w^T phi|`; always <= 0, maximal on the
/// estimated boundary.
pub fn boundary_score_est(w: &[f64], phi: &[f64]) -> f64 {
    -dot(w, phi).abs()
}

/// Pick the `n` pool entries with the largest estimated boundary score.
///
/// Ties break toward the lower pool index; if `n` covers the pool, the whole
/// pool is returned score-sorted.
pub fn select_top_n(
    pool_features: &[Vec<f64>],
    w: &[f64],
    n: usize,
) -> Result<MinedSet, MiningError> {
    assert!(n >= 1, "selection count must be at least 1");
    if pool_features.is_empty() {
        return Err(MiningError::EmptyPool);
    }
    let mut scored: Vec<(usize, f64)> = pool_features
        .iter()
        .enumerate()
        .map(|(i, phi)| (i, boundary_score_est(w, phi)))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite scores").then(a.0.cmp(&b.0)));
    scored.truncate(n.min(pool_features.len()));
    Ok(MinedSet { selected: scored })
}

/// Mine `n` outliers from the pool features under the given sampler.
///
/// The random baseline picks a uniform subset without replacement; its
/// entries are still annotated (and ordered) by posterior-mean scores so the
/// per-epoch score statistics stay comparable across samplers.
pub fn mine(
    pool_features: &[Vec<f64>],
    sampler: SamplerKind,
    posterior: &PosteriorState,
    n: usize,
    rng: &mut RngStream,
) -> Result<MinedSet, MiningError> {
    if pool_features.is_empty() {
        return Err(MiningError::EmptyPool);
    }
    match sampler {
        SamplerKind::Thompson => {
            let w = posterior.sample_weights(rng);
            select_top_n(pool_features, &w, n)
        }
        SamplerKind::GreedyMean => select_top_n(pool_features, posterior.mean(), n),
        SamplerKind::Random => {
            let take = n.min(pool_features.len());
            let chosen = rand::seq::index::sample(rng, pool_features.len(), take);
            let w = posterior.mean();
            let mut selected: Vec<(usize, f64)> = chosen
                .into_iter()
                .map(|i| (i, boundary_score_est(w, &pool_features[i])))
                .collect();
            selected.sort_by(|a, b| {
                b.1.partial_cmp(&a.1).expect("finite scores").then(a.0.cmp(&b.0))
            });
            Ok(MinedSet { selected })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::posterior::{posterior_update, FeatureQueue};
    use crate::rng::stream;

    #[test]
    fn score_orthogonal_is_zero() {
        assert_eq!(boundary_score_est(&[1.0, 0.0], &[0.0, 5.0]), 0.0);
    }

    #[test]
    fn score_hand_case() {
        assert_eq!(boundary_score_est(&[2.0, -1.0], &[1.0, 1.0]), -1.0);
    }

    #[test]
    fn score_scales_homogeneously() {
        let w = [0.3, -1.2, 0.7];
        let phi = [1.0, 2.0, -0.5];
        let base = boundary_score_est(&w, &phi);
        let scaled: Vec<f64> = w.iter().map(|v| v * 2.5).collect();
        assert!((boundary_score_est(&scaled, &phi) - 2.5 * base).abs() < 1e-12);
    }

    fn pool_from_scores(scores: &[f64]) -> Vec<Vec<f64>> {
        // With w = [1], phi = [s] has score -|s|; negate to control scores.
        scores.iter().map(|&s| vec![-s]).collect()
    }

    #[test]
    fn top_n_picks_largest_scores() {
        // Scores {-3, -1, -2, 0}: the two best are 0 (idx 3) and -1 (idx 1).
        let pool = pool_from_scores(&[-3.0, -1.0, -2.0, 0.0]);
        let mined = select_top_n(&pool, &[1.0], 2).unwrap();
        let idx: Vec<usize> = mined.indices().collect();
        assert_eq!(idx, vec![3, 1]);
    }

    #[test]
    fn top_n_exhaustive_when_n_covers_pool() {
        let pool = pool_from_scores(&[-3.0, -1.0, -2.0]);
        let mined = select_top_n(&pool, &[1.0], 10).unwrap();
        let idx: Vec<usize> = mined.indices().collect();
        assert_eq!(idx, vec![1, 2, 0]);
        let scores: Vec<f64> = mined.entries().iter().map(|(_, s)| *s).collect();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn top_n_tie_breaks_to_lower_index() {
        let mut scores = vec![-5.0; 9];
        scores[4] = -1.0;
        scores[7] = -1.0;
        let pool = pool_from_scores(&scores);
        let mined = select_top_n(&pool, &[1.0], 1).unwrap();
        assert_eq!(mined.indices().next(), Some(4));
    }

    #[test]
    fn top_n_empty_pool_errors() {
        assert_eq!(select_top_n(&[], &[1.0], 1).unwrap_err(), MiningError::EmptyPool);
    }

    #[test]
    fn top_n_scale_invariant_selection() {
        let mut rng = stream(31);
        let pool: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                (0..3)
                    .map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0))
                    .collect()
            })
            .collect();
        let w = [0.7, -0.4, 1.1];
        let scaled: Vec<f64> = w.iter().map(|v| v * 3.7).collect();
        let a: Vec<usize> = select_top_n(&pool, &w, 10).unwrap().indices().collect();
        let b: Vec<usize> = select_top_n(&pool, &scaled, 10).unwrap().indices().collect();
        assert_eq!(a, b);
    }

    #[test]
    fn top_n_maximizes_total_score_brute_force() {
        // Exhaustive check over all size-n subsets for a small pool.
        let mut rng = stream(37);
        let pool: Vec<Vec<f64>> =
            (0..10).map(|_| vec![rand::Rng::random_range(&mut rng, -3.0..3.0)]).collect();
        let w = [1.0];
        let n = 4;
        let mined = select_top_n(&pool, &w, n).unwrap();
        let got: f64 = mined.entries().iter().map(|(_, s)| s).sum();
        let mut best = f64::NEG_INFINITY;
        for mask in 0u32..(1 << pool.len()) {
            if mask.count_ones() as usize != n {
                continue;
            }
            let total: f64 = (0..pool.len())
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| boundary_score_est(&w, &pool[i]))
                .sum();
            best = best.max(total);
        }
        assert!((got - best).abs() < 1e-12);
    }

    fn fresh_prior(dim: usize) -> PosteriorState {
        posterior_update(&FeatureQueue::new(4), &Matrix::identity(dim), 1.0).unwrap()
    }

    #[test]
    fn random_full_pool() {
        let pool = pool_from_scores(&[-1.0, -2.0, -3.0]);
        let post = fresh_prior(1);
        let mined = mine(&pool, SamplerKind::Random, &post, 3, &mut stream(41)).unwrap();
        let mut idx: Vec<usize> = mined.indices().collect();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2]);
    }

    #[test]
    fn greedy_with_zero_mean_degenerates_to_tie_rule() {
        // Fresh prior has mean 0, so every score is 0 and the first n pool
        // indices win by the tie rule.
        let pool = pool_from_scores(&[-1.0, -2.0, -3.0, -4.0]);
        let post = fresh_prior(1);
        let mined = mine(&pool, SamplerKind::GreedyMean, &post, 2, &mut stream(43)).unwrap();
        let idx: Vec<usize> = mined.indices().collect();
        assert_eq!(idx, vec![0, 1]);
    }

    #[test]
    fn thompson_deterministic_given_seed() {
        let mut rng = stream(47);
        let pool: Vec<Vec<f64>> = (0..30)
            .map(|_| {
                (0..2)
                    .map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0))
                    .collect()
            })
            .collect();
        let post = fresh_prior(2);
        let a = mine(&pool, SamplerKind::Thompson, &post, 5, &mut stream(53)).unwrap();
        let b = mine(&pool, SamplerKind::Thompson, &post, 5, &mut stream(53)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn concentrated_posterior_agrees_with_greedy() {
        // A long queue shrinks the posterior; Thompson selections then match
        // the greedy ones almost everywhere.
        let mut rng = stream(59);
        let mut queue = FeatureQueue::new(20_000);
        let scheme = crate::posterior::TargetScheme::default();
        for i in 0..10_000 {
            let phi: Vec<f64> =
                (0..4).map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0)).collect();
            queue.enqueue(phi, i % 2 == 0, &scheme, &mut rng);
        }
        let post = posterior_update(&queue, &Matrix::identity(4), 1.0).unwrap();
        let pool: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..4).map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0)).collect())
            .collect();
        let greedy: std::collections::BTreeSet<usize> =
            mine(&pool, SamplerKind::GreedyMean, &post, 100, &mut stream(61))
                .unwrap()
                .indices()
                .collect();
        let mut matches = 0usize;
        let mut total = 0usize;
        let mut ts_rng = stream(67);
        for _ in 0..50 {
            let ts = mine(&pool, SamplerKind::Thompson, &post, 100, &mut ts_rng).unwrap();
            for i in ts.indices() {
                total += 1;
                if greedy.contains(&i) {
                    matches += 1;
                }
            }
        }
        let agreement = matches as f64 / total as f64;
        assert!(agreement >= 0.99, "agreement {agreement}");
    }
}
