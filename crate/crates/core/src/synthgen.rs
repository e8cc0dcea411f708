//! Deterministic synthetic touch data with tunable user separability.
//!
//! Each user gets a mean per-step velocity (x and y), mean pressure and mean
//! covered area. Along each of those four axes the users are placed in a
//! seeded random order with neighbouring means at least
//! `separability * axis_noise_std` apart, so separability 0 makes all users
//! statistically identical. Positions are integrated from noisy per-step
//! velocities.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ingest::{Action, TouchRecord};
use crate::par;
use crate::seed;

/// Per-sample noise std along each generator axis: x velocity, y velocity
/// (pixels per sample), pressure, area.
pub const AXIS_NOISE: [f64; 4] = [2.0, 2.0, 0.02, 0.005];
const AXIS_BASE: [f64; 4] = [-40.0, -40.0, 0.15, 0.04];
const DEVICES: i64 = 4;
const STROKES_PER_DOC: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_users: usize,
    pub strokes_per_user: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub separability: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_users: 10,
            strokes_per_user: 200,
            min_len: 3,
            max_len: 60,
            separability: 4.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_users < 2 {
            return Err(Error::Config("synthetic data needs at least 2 users".into()));
        }
        if self.strokes_per_user < 10 {
            return Err(Error::Config("synthetic data needs at least 10 strokes per user".into()));
        }
        if self.min_len < 2 || self.max_len < self.min_len {
            return Err(Error::Config(format!(
                "stroke length range {}..={} is invalid (minimum 2)",
                self.min_len, self.max_len
            )));
        }
        if !(self.separability >= 0.0 && self.separability.is_finite()) {
            return Err(Error::Config(format!(
                "separability must be >= 0, got {}",
                self.separability
            )));
        }
        Ok(())
    }
}

/// Generator parameters of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserProfile {
    pub user_id: i64,
    /// Means along the four axes of [`AXIS_NOISE`].
    pub means: [f64; 4],
    pub phone_id: i64,
    pub phone_orientation: i64,
}

/// Draws every user's profile. Rank order per axis comes from the seed;
/// the sub-spacing jitter comes from (seed, user).
pub fn profiles(spec: &SynthSpec) -> Vec<UserProfile> {
    let k = spec.num_users;
    let ranks: Vec<Vec<usize>> = (0..4)
        .map(|axis| {
            let mut order: Vec<usize> = (0..k).collect();
            order.shuffle(&mut seed::rng(spec.seed, &[0xA515, axis]));
            let mut rank = vec![0; k];
            for (r, &u) in order.iter().enumerate() {
                rank[u] = r;
            }
            rank
        })
        .collect();
    (0..k)
        .map(|u| {
            let mut rng = seed::rng(spec.seed, &[0x05E2, u as u64]);
            let mut means = [0.0; 4];
            for axis in 0..4 {
                // neighbours are 1.25 s sigma apart with < 0.25 s sigma jitter
                let step = spec.separability * AXIS_NOISE[axis];
                let jitter: f64 = rng.gen::<f64>() * 0.25 * step;
                means[axis] = AXIS_BASE[axis] + 1.25 * step * ranks[axis][u] as f64 + jitter;
            }
            UserProfile {
                user_id: u as i64 + 1,
                means,
                phone_id: u as i64 % DEVICES + 1,
                phone_orientation: 1,
            }
        })
        .collect()
}

fn round_to(v: f64, places: i32) -> f64 {
    let scale = 10f64.powi(places);
    (v * scale).round() / scale
}

fn user_records(spec: &SynthSpec, profile: &UserProfile, index: usize) -> Vec<TouchRecord> {
    let mut rng = seed::rng(spec.seed, &[0x57E0, index as u64]);
    let noise: Vec<Normal<f64>> = (0..4)
        .map(|a| Normal::new(profile.means[a], AXIS_NOISE[a]).expect("finite std"))
        .collect();
    let finger = Normal::new(0.0, 0.1).expect("finite std");
    let mut out = Vec::new();
    let mut t: i64 = 1_000_000;
    for s in 0..spec.strokes_per_user {
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let mut x: f64 = rng.gen_range(100.0..900.0);
        let mut y: f64 = rng.gen_range(300.0..1500.0);
        for i in 0..len {
            if i > 0 {
                x += noise[0].sample(&mut rng);
                y += noise[1].sample(&mut rng);
                t += rng.gen_range(8..20);
            }
            let action = if i == 0 {
                Action::Down
            } else if i + 1 == len {
                Action::Up
            } else {
                Action::Move
            };
            out.push(TouchRecord {
                phone_id: profile.phone_id,
                user_id: profile.user_id,
                doc_id: (s / STROKES_PER_DOC) as i64 + 1,
                timestamp: t,
                action,
                phone_orientation: profile.phone_orientation,
                x: round_to(x, 2),
                y: round_to(y, 2),
                pressure: round_to(noise[2].sample(&mut rng).max(0.0), 5),
                area: round_to(noise[3].sample(&mut rng).max(0.0), 6),
                finger_orientation: round_to(finger.sample(&mut rng), 4),
            });
        }
        t += rng.gen_range(300..3000);
    }
    out
}

/// All records, user by user, each stroke a `Down Move* Up` run with
/// increasing timestamps.
pub fn generate(spec: &SynthSpec) -> Result<Vec<TouchRecord>> {
    spec.validate()?;
    let profiles = profiles(spec);
    let per_user = par::map_range(profiles.len(), |u| user_records(spec, &profiles[u], u));
    Ok(per_user.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{filter_and_classify, parse_csv, segment_strokes, write_csv};

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            num_users: 3,
            strokes_per_user: 12,
            seed,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn output_is_deterministic() {
        let spec = SynthSpec {
            num_users: 2,
            strokes_per_user: 10,
            seed: 7,
            ..SynthSpec::default()
        };
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_csv(&generate(&spec).unwrap(), &mut a).unwrap();
        write_csv(&generate(&spec).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
        let mut c = Vec::new();
        write_csv(&generate(&SynthSpec { seed: 8, ..spec }).unwrap(), &mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn runs_resegment_one_to_one() {
        let spec = small(3);
        let records = generate(&spec).unwrap();
        let runs = records.iter().filter(|r| r.action == Action::Down).count();
        let seg = segment_strokes(&records);
        assert_eq!(runs, spec.num_users * spec.strokes_per_user);
        assert_eq!(seg.strokes.len(), runs);
        assert_eq!(seg.dropped_records, 0);

        let long_enough = seg.strokes.iter().filter(|s| s.len() >= 5).count();
        assert_eq!(filter_and_classify(seg.strokes).len(), long_enough);
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let records = generate(&small(4)).unwrap();
        let mut buf = Vec::new();
        write_csv(&records, &mut buf).unwrap();
        assert_eq!(parse_csv(buf.as_slice()).unwrap(), records);
    }

    #[test]
    fn user_means_are_spaced() {
        let spec = SynthSpec {
            num_users: 10,
            separability: 4.0,
            ..SynthSpec::default()
        };
        let p = profiles(&spec);
        for axis in 0..4 {
            for a in 0..p.len() {
                for b in a + 1..p.len() {
                    let gap = (p[a].means[axis] - p[b].means[axis]).abs();
                    assert!(gap >= 4.0 * AXIS_NOISE[axis] - 1e-12, "axis {axis}: {gap}");
                }
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let ok = SynthSpec::default();
        assert!(SynthSpec { num_users: 1, ..ok.clone() }.validate().is_err());
        assert!(SynthSpec { strokes_per_user: 9, ..ok.clone() }.validate().is_err());
        assert!(SynthSpec { min_len: 10, max_len: 5, ..ok.clone() }.validate().is_err());
        assert!(SynthSpec { separability: -1.0, ..ok }.validate().is_err());
    }
}
