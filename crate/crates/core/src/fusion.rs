//! Score-level fusion of window and stroke posteriors, and the mapping from
//! identification scores to verification trials.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed;

/// Probabilities below this are clamped before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreSource {
    Window,
    Stroke,
    Fused(usize),
}

/// Per-user posterior over the enrolled users.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    pub source: ScoreSource,
}

impl ScoreVector {
    pub fn new(scores: Vec<f64>, source: ScoreSource) -> Self {
        ScoreVector { scores, source }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Normalized geometric mean: `exp(mean_i ln max(p_i[u], floor))`, rescaled
/// to sum to one.
fn geometric_mean(inputs: &[ScoreVector]) -> Result<Vec<f64>> {
    let first = inputs.first().ok_or(Error::Empty("no score vectors to fuse"))?;
    let k = first.len();
    if k == 0 {
        return Err(Error::Empty("score vectors have no users"));
    }
    if let Some(bad) = inputs.iter().find(|v| v.len() != k) {
        return Err(Error::Dimension(format!(
            "cannot fuse score vectors of length {k} and {}",
            bad.len()
        )));
    }
    let n = inputs.len() as f64;
    let mut log_mean = vec![0.0; k];
    for v in inputs {
        for (acc, p) in log_mean.iter_mut().zip(&v.scores) {
            *acc += p.max(PROB_FLOOR).ln();
        }
    }
    // Subtracting the max log keeps the exponentials in range.
    let top = log_mean.iter().copied().fold(f64::NEG_INFINITY, f64::max) / n;
    let mut fused: Vec<f64> = log_mean.iter().map(|l| (l / n - top).exp()).collect();
    let total: f64 = fused.iter().sum();
    fused.iter_mut().for_each(|p| *p /= total);
    Ok(fused)
}

/// Fuses the window posteriors of one stroke.
pub fn fuse_windows(window_scores: &[ScoreVector]) -> Result<ScoreVector> {
    Ok(ScoreVector::new(geometric_mean(window_scores)?, ScoreSource::Stroke))
}

/// Fuses exactly `n` stroke posteriors of the same user.
pub fn fuse_strokes(stroke_scores: &[ScoreVector], n: usize) -> Result<ScoreVector> {
    if stroke_scores.len() != n {
        return Err(Error::Config(format!(
            "expected {n} stroke score vectors, got {}",
            stroke_scores.len()
        )));
    }
    Ok(ScoreVector::new(geometric_mean(stroke_scores)?, ScoreSource::Fused(n)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionGroups<T> {
    /// `(user, members)`; every group has exactly `n` members.
    pub groups: Vec<(usize, Vec<T>)>,
    /// Users with fewer than `n` items.
    pub skipped_users: usize,
}

/// Draws disjoint groups of `n` items per user after a seeded shuffle, at
/// most `max_groups_per_user` each. Users are visited in ascending order.
pub fn sample_fusion_groups<T: Clone>(
    by_user: &BTreeMap<usize, Vec<T>>,
    n: usize,
    max_groups_per_user: usize,
    seed: u64,
) -> Result<FusionGroups<T>> {
    if n == 0 {
        return Err(Error::Config("fusion group size must be >= 1".into()));
    }
    let mut out = FusionGroups {
        groups: Vec::new(),
        skipped_users: 0,
    };
    for (&user, items) in by_user {
        if items.len() < n {
            out.skipped_users += 1;
            continue;
        }
        let mut shuffled = items.clone();
        shuffled.shuffle(&mut seed::rng(seed, &[user as u64, n as u64]));
        for chunk in shuffled.chunks_exact(n).take(max_groups_per_user) {
            out.groups.push((user, chunk.to_vec()));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trial {
    pub claimed_user: usize,
    pub score: f64,
    pub genuine: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSet {
    pub trials: Vec<Trial>,
    pub n_strokes: usize,
}

impl TrialSet {
    pub fn genuine_count(&self) -> usize {
        self.trials.iter().filter(|t| t.genuine).count()
    }

    pub fn impostor_count(&self) -> usize {
        self.trials.len() - self.genuine_count()
    }
}

/// One trial per (probe, enrolled user): the posterior of the claimed user is
/// the verification score, genuine when the claim is the probe's true user.
pub fn build_verification_trials(fused: &[(usize, ScoreVector)], n_strokes: usize) -> Result<TrialSet> {
    if fused.is_empty() {
        return Err(Error::Empty("no fused probes"));
    }
    let trials = fused
        .iter()
        .flat_map(|(truth, v)| {
            v.scores.iter().enumerate().map(move |(u, &score)| Trial {
                claimed_user: u,
                score,
                genuine: u == *truth,
            })
        })
        .collect();
    Ok(TrialSet { trials, n_strokes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sv(v: &[f64]) -> ScoreVector {
        ScoreVector::new(v.to_vec(), ScoreSource::Window)
    }

    fn simplex(raw: Vec<f64>) -> Vec<f64> {
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    #[test]
    fn single_window_is_identity() {
        let v = [0.1, 0.6, 0.3];
        let out = fuse_windows(&[sv(&v)]).unwrap();
        for (a, b) in out.scores.iter().zip(&v) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(out.source, ScoreSource::Stroke);
    }

    #[test]
    fn two_window_hand_computation() {
        let out = fuse_windows(&[sv(&[0.8, 0.2]), sv(&[0.6, 0.4])]).unwrap();
        let (a, b) = (0.48f64.sqrt(), 0.08f64.sqrt());
        assert!((out.scores[0] - a / (a + b)).abs() < 1e-12);
        assert!((out.scores[0] - 0.7101).abs() < 1e-4);
        assert!((out.scores[1] - 0.2899).abs() < 1e-4);
    }

    #[test]
    fn fusion_errors() {
        assert!(fuse_windows(&[]).is_err());
        assert!(fuse_windows(&[sv(&[0.5, 0.5]), sv(&[1.0])]).is_err());
        assert!(fuse_strokes(&[sv(&[0.5, 0.5])], 2).is_err());
    }

    #[test]
    fn floor_keeps_zero_probabilities_finite() {
        let out = fuse_windows(&[sv(&[1.0, 0.0]), sv(&[0.0, 1.0])]).unwrap();
        assert!((out.scores[0] - 0.5).abs() < 1e-12);
        assert!(out.scores.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn group_sampling() {
        let mut by_user = BTreeMap::new();
        by_user.insert(0usize, (0..10).collect::<Vec<usize>>());
        by_user.insert(1usize, (10..19).collect::<Vec<usize>>());
        let g = sample_fusion_groups(&by_user, 10, 100, 1).unwrap();
        assert_eq!(g.groups.len(), 1);
        assert_eq!(g.groups[0].0, 0);
        assert_eq!(g.skipped_users, 1);

        let g = sample_fusion_groups(&by_user, 3, 2, 1).unwrap();
        assert_eq!(g.groups.len(), 4);
        assert_eq!(g, sample_fusion_groups(&by_user, 3, 2, 1).unwrap());
        assert!(sample_fusion_groups(&by_user, 0, 2, 1).is_err());
    }

    #[test]
    fn trial_construction() {
        let t = build_verification_trials(&[(1, sv(&[0.2, 0.5, 0.3]))], 1).unwrap();
        assert_eq!(t.trials.len(), 3);
        assert_eq!(t.genuine_count(), 1);
        assert_eq!(t.trials[1], Trial { claimed_user: 1, score: 0.5, genuine: true });

        let t = build_verification_trials(&[(0, sv(&[1.0, 0.0, 0.0]))], 1).unwrap();
        assert_eq!(t.trials[0].score, 1.0);
        assert!(t.trials[1..].iter().all(|x| x.score == 0.0 && !x.genuine));
        assert!(build_verification_trials(&[], 1).is_err());
    }

    fn prob_vec(k: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(1e-6f64..1.0, k).prop_map(simplex)
    }

    proptest! {
        #[test]
        fn fusion_matches_direct_formula(vs in proptest::collection::vec(prob_vec(5), 1..8)) {
            let inputs: Vec<_> = vs.iter().map(|v| sv(v)).collect();
            let out = fuse_strokes(&inputs, inputs.len()).unwrap();
            let n = vs.len() as f64;
            let raw: Vec<f64> = (0..5)
                .map(|u| vs.iter().map(|v| v[u].max(PROB_FLOOR).ln()).sum::<f64>() / n)
                .map(f64::exp)
                .collect();
            let expected = simplex(raw);
            for (a, b) in out.scores.iter().zip(&expected) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert!((out.scores.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert_eq!(out.source, ScoreSource::Fused(vs.len()));
        }

        #[test]
        fn fusion_is_permutation_invariant(vs in proptest::collection::vec(prob_vec(4), 2..8), rot in 0usize..8) {
            let inputs: Vec<_> = vs.iter().map(|v| sv(v)).collect();
            let mut rotated = inputs.clone();
            let r = rot % rotated.len();
            rotated.rotate_left(r);
            rotated.reverse();
            let a = fuse_windows(&inputs).unwrap();
            let b = fuse_windows(&rotated).unwrap();
            for (x, y) in a.scores.iter().zip(&b.scores) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn self_fusion_is_idempotent(v in prob_vec(6), n in 1usize..10) {
            let copies = vec![sv(&v); n];
            let out = fuse_strokes(&copies, n).unwrap();
            for (a, b) in out.scores.iter().zip(&v) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert_eq!(crate::net::argmax(&out.scores), crate::net::argmax(&v));
        }

        #[test]
        fn fusion_is_user_equivariant(vs in proptest::collection::vec(prob_vec(4), 1..5)) {
            let perm = [2usize, 0, 3, 1];
            let permute = |v: &[f64]| perm.iter().map(|&i| v[i]).collect::<Vec<_>>();
            let a = fuse_windows(&vs.iter().map(|v| sv(v)).collect::<Vec<_>>()).unwrap();
            let b = fuse_windows(&vs.iter().map(|v| sv(&permute(v))).collect::<Vec<_>>()).unwrap();
            for (x, y) in permute(&a.scores).iter().zip(&b.scores) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn groups_are_disjoint_and_single_user(
            sizes in proptest::collection::vec(0usize..25, 1..6),
            n in 1usize..6,
            cap in 1usize..6,
            seed in any::<u64>(),
        ) {
            let mut by_user = BTreeMap::new();
            let mut next = 0usize;
            for (u, &s) in sizes.iter().enumerate() {
                by_user.insert(u, (next..next + s).collect::<Vec<_>>());
                next += s;
            }
            let g = sample_fusion_groups(&by_user, n, cap, seed).unwrap();
            let mut seen = std::collections::HashSet::new();
            for (user, members) in &g.groups {
                prop_assert_eq!(members.len(), n);
                for m in members {
                    prop_assert!(by_user[user].contains(m));
                    prop_assert!(seen.insert(*m));
                }
            }
            for (u, &s) in sizes.iter().enumerate() {
                let count = g.groups.iter().filter(|(user, _)| *user == u).count();
                prop_assert_eq!(count, (s / n).min(cap));
            }
            prop_assert_eq!(g.skipped_users, sizes.iter().filter(|&&s| s < n).count());
        }

        #[test]
        fn trial_counts(probes in proptest::collection::vec((0usize..4, prob_vec(4)), 1..20)) {
            let fused: Vec<_> = probes.iter().map(|(y, v)| (*y, sv(v))).collect();
            let t = build_verification_trials(&fused, 1).unwrap();
            prop_assert_eq!(t.trials.len(), 4 * fused.len());
            prop_assert_eq!(t.genuine_count(), fused.len());
        }
    }
}
