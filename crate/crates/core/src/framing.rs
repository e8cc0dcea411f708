//! Sliding-window framing of strokes into fixed-length network inputs.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ingest::{Stroke, TouchRecord, UserIndex};
use crate::par;

/// Standard deviations below this are replaced by 1 when normalizing.
pub const MIN_STD: f64 = 1e-12;

/// Per-record attributes that may be fed to the network. Device, document,
/// timestamp and user columns are deliberately absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Attribute {
    Action,
    PhoneOrientation,
    X,
    Y,
    Pressure,
    Area,
    FingerOrientation,
}

impl Attribute {
    pub const ALL: [Attribute; 7] = [
        Attribute::Action,
        Attribute::PhoneOrientation,
        Attribute::X,
        Attribute::Y,
        Attribute::Pressure,
        Attribute::Area,
        Attribute::FingerOrientation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Action => "action",
            Attribute::PhoneOrientation => "phone_orientation",
            Attribute::X => "x",
            Attribute::Y => "y",
            Attribute::Pressure => "pressure",
            Attribute::Area => "area",
            Attribute::FingerOrientation => "finger_orientation",
        }
    }

    #[inline]
    pub fn value(self, r: &TouchRecord) -> f64 {
        match self {
            Attribute::Action => r.action.code() as f64,
            Attribute::PhoneOrientation => r.phone_orientation as f64,
            Attribute::X => r.x,
            Attribute::Y => r.y,
            Attribute::Pressure => r.pressure,
            Attribute::Area => r.area,
            Attribute::FingerOrientation => r.finger_orientation,
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(a) = Attribute::ALL.iter().find(|a| a.name() == s) {
            return Ok(*a);
        }
        match s {
            "phone_id" | "doc_id" | "timestamp" | "user_id" => Err(Error::Config(format!(
                "{s} is not a biometric attribute and cannot be a network input"
            ))),
            _ => Err(Error::Config(format!("unknown attribute {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramingConfig {
    window: usize,
    stride: usize,
    attributes: Vec<Attribute>,
}

impl Default for FramingConfig {
    fn default() -> Self {
        FramingConfig {
            window: 5,
            stride: 1,
            attributes: Attribute::ALL.to_vec(),
        }
    }
}

impl FramingConfig {
    pub fn new(window: usize, stride: usize, attributes: Vec<Attribute>) -> Result<Self> {
        if window < 2 {
            return Err(Error::Config(format!("window must be >= 2, got {window}")));
        }
        if stride < 1 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        if attributes.is_empty() {
            return Err(Error::Config("attribute list is empty".into()));
        }
        for (i, a) in attributes.iter().enumerate() {
            if attributes[..i].contains(a) {
                return Err(Error::Config(format!("attribute {a} listed twice")));
            }
        }
        Ok(FramingConfig {
            window,
            stride,
            attributes,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    /// Length of a flattened frame.
    pub fn input_dim(&self) -> usize {
        self.window * self.attributes.len()
    }

    /// Number of frames cut from a stroke of `len` records.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.window {
            0
        } else {
            (len - self.window) / self.stride + 1
        }
    }
}

/// Per-attribute population mean and standard deviation, aligned with the
/// framing config's attribute list.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    #[inline]
    fn divisor(&self, i: usize) -> f64 {
        if self.std[i] < MIN_STD {
            1.0
        } else {
            self.std[i]
        }
    }
}

/// Fits mean/std over every record of every training stroke (Welford).
pub fn fit_normalizer(train: &[Stroke], config: &FramingConfig) -> Result<NormalizationStats> {
    let d = config.attributes.len();
    let mut n = 0u64;
    let mut mean = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    for r in train.iter().flat_map(|s| &s.records) {
        n += 1;
        for (i, a) in config.attributes.iter().enumerate() {
            let v = a.value(r);
            let delta = v - mean[i];
            mean[i] += delta / n as f64;
            m2[i] += delta * (v - mean[i]);
        }
    }
    if n == 0 {
        return Err(Error::Empty("no training records to fit the normalizer"));
    }
    let std = m2.iter().map(|&s| (s / n as f64).max(0.0).sqrt()).collect();
    Ok(NormalizationStats { mean, std })
}

/// One flattened, normalized window of a stroke.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowFrame {
    pub vector: Vec<f64>,
    pub label: usize,
    pub stroke_ref: usize,
}

/// Cuts `stroke` into windows at offsets `0, stride, 2*stride, ...`. Each
/// frame is laid out record-major: all attributes of the first record, then
/// the next record, and so on. Strokes shorter than the window yield nothing.
pub fn make_windows(
    stroke: &Stroke,
    label: usize,
    config: &FramingConfig,
    stats: &NormalizationStats,
) -> Vec<WindowFrame> {
    (0..config.frame_count(stroke.len()))
        .map(|k| {
            let start = k * config.stride;
            let mut vector = Vec::with_capacity(config.input_dim());
            for r in &stroke.records[start..start + config.window] {
                for (i, a) in config.attributes.iter().enumerate() {
                    vector.push((a.value(r) - stats.mean[i]) / stats.divisor(i));
                }
            }
            WindowFrame {
                vector,
                label,
                stroke_ref: stroke.id,
            }
        })
        .collect()
}

/// Frames of many strokes packed into one row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    pub dim: usize,
    pub data: Vec<f64>,
    pub labels: Vec<usize>,
    pub stroke_refs: Vec<usize>,
    /// Strokes shorter than the window.
    pub skipped_strokes: usize,
}

impl FrameSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Windows every stroke; strokes are framed in parallel and concatenated in
/// input order.
pub fn frame_strokes(
    strokes: &[Stroke],
    users: &UserIndex,
    config: &FramingConfig,
    stats: &NormalizationStats,
) -> Result<FrameSet> {
    let labels = strokes
        .iter()
        .map(|s| {
            users
                .label_of(s.user_id)
                .ok_or_else(|| Error::Config(format!("stroke from unknown user {}", s.user_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let idx: Vec<usize> = (0..strokes.len()).collect();
    let per_stroke = par::map(&idx, |&i| make_windows(&strokes[i], labels[i], config, stats));

    let dim = config.input_dim();
    let total: usize = per_stroke.iter().map(Vec::len).sum();
    let mut set = FrameSet {
        dim,
        data: Vec::with_capacity(total * dim),
        labels: Vec::with_capacity(total),
        stroke_refs: Vec::with_capacity(total),
        skipped_strokes: 0,
    };
    for frames in per_stroke {
        if frames.is_empty() {
            set.skipped_strokes += 1;
        }
        for f in frames {
            set.data.extend_from_slice(&f.vector);
            set.labels.push(f.label);
            set.stroke_refs.push(f.stroke_ref);
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Action;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stroke(id: usize, values: &[(f64, f64, f64)]) -> Stroke {
        let n = values.len();
        Stroke {
            id,
            user_id: 1,
            records: values
                .iter()
                .enumerate()
                .map(|(i, &(x, y, p))| TouchRecord {
                    phone_id: 1,
                    user_id: 1,
                    doc_id: 1,
                    timestamp: i as i64,
                    action: if i == 0 {
                        Action::Down
                    } else if i + 1 == n {
                        Action::Up
                    } else {
                        Action::Move
                    },
                    phone_orientation: 1,
                    x,
                    y,
                    pressure: p,
                    area: 0.2,
                    finger_orientation: 0.0,
                })
                .collect(),
        }
    }

    fn random_stroke(rng: &mut ChaCha8Rng, id: usize, len: usize) -> Stroke {
        let v: Vec<_> = (0..len)
            .map(|_| {
                (
                    rng.gen_range(0.0..1000.0),
                    rng.gen_range(0.0..1800.0),
                    rng.gen_range(0.0..1.0),
                )
            })
            .collect();
        stroke(id, &v)
    }

    #[test]
    fn config_validation() {
        assert!(FramingConfig::new(1, 1, Attribute::ALL.to_vec()).is_err());
        assert!(FramingConfig::new(5, 0, Attribute::ALL.to_vec()).is_err());
        assert!(FramingConfig::new(5, 1, vec![]).is_err());
        assert!(FramingConfig::new(5, 1, vec![Attribute::X, Attribute::X]).is_err());
        assert!("timestamp".parse::<Attribute>().is_err());
        assert!("user_id".parse::<Attribute>().is_err());
        assert_eq!("area".parse::<Attribute>().unwrap(), Attribute::Area);
        assert_eq!(FramingConfig::default().input_dim(), 35);
    }

    #[test]
    fn constant_and_two_point_stats() {
        let cfg = FramingConfig::new(2, 1, vec![Attribute::Pressure, Attribute::X]).unwrap();
        let s = stroke(0, &[(1.0, 0.0, 0.5), (3.0, 0.0, 0.5)]);
        let stats = fit_normalizer(&[s], &cfg).unwrap();
        assert_eq!(stats.mean[0], 0.5);
        assert_eq!(stats.std[0], 0.0);
        assert_eq!(stats.mean[1], 2.0);
        assert_eq!(stats.std[1], 1.0);
        assert!(fit_normalizer(&[], &cfg).is_err());
    }

    #[test]
    fn stats_match_two_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let strokes: Vec<_> = (0..20)
            .map(|i| {
                let len = rng.gen_range(5..40);
                random_stroke(&mut rng, i, len)
            })
            .collect();
        let cfg = FramingConfig::default();
        let stats = fit_normalizer(&strokes, &cfg).unwrap();
        for (i, a) in cfg.attributes().iter().enumerate() {
            let vals: Vec<f64> = strokes
                .iter()
                .flat_map(|s| s.records.iter().map(|r| a.value(r)))
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!((stats.mean[i] - mean).abs() <= 1e-12 * mean.abs().max(1.0));
            assert!((stats.std[i] - var.sqrt()).abs() <= 1e-12 * var.sqrt().max(1.0));
        }
    }

    #[test]
    fn frame_counts_and_layout() {
        let cfg = FramingConfig::new(5, 1, vec![Attribute::X, Attribute::Pressure]).unwrap();
        let stats = NormalizationStats {
            mean: vec![0.0, 0.0],
            std: vec![1.0, 0.0],
        };
        let five: Vec<_> = (0..5).map(|i| (i as f64, 0.0, 10.0 + i as f64)).collect();
        let frames = make_windows(&stroke(7, &five), 3, &cfg, &stats);
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].label, 3);
        assert_eq!(frames[0].stroke_ref, 7);
        assert_eq!(
            frames[0].vector,
            vec![0.0, 10.0, 1.0, 11.0, 2.0, 12.0, 3.0, 13.0, 4.0, 14.0]
        );

        let twelve: Vec<_> = (0..12).map(|i| (i as f64, 0.0, 0.0)).collect();
        assert_eq!(make_windows(&stroke(0, &twelve), 0, &cfg, &stats).len(), 8);

        let wide = FramingConfig::new(8, 1, vec![Attribute::X]).unwrap();
        let stats1 = NormalizationStats {
            mean: vec![0.0],
            std: vec![1.0],
        };
        assert!(make_windows(&stroke(0, &five), 0, &wide, &stats1).is_empty());
    }

    #[test]
    fn frame_set_counts_skips() {
        let cfg = FramingConfig::new(8, 1, vec![Attribute::X]).unwrap();
        let short: Vec<_> = (0..5).map(|i| (i as f64, 0.0, 0.0)).collect();
        let long: Vec<_> = (0..10).map(|i| (i as f64, 0.0, 0.0)).collect();
        let strokes = vec![stroke(0, &short), stroke(1, &long)];
        let users = UserIndex::from_strokes(&strokes);
        let stats = fit_normalizer(&strokes, &cfg).unwrap();
        let set = frame_strokes(&strokes, &users, &cfg, &stats).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.skipped_strokes, 1);
        assert!(set.stroke_refs.iter().all(|&r| r == 1));
    }

    #[test]
    fn normalized_training_attributes_are_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let strokes: Vec<_> = (0..30)
            .map(|i| {
                let len = rng.gen_range(5..30);
                random_stroke(&mut rng, i, len)
            })
            .collect();
        let cfg = FramingConfig::new(2, 1, Attribute::ALL.to_vec()).unwrap();
        let stats = fit_normalizer(&strokes, &cfg).unwrap();
        for (i, a) in cfg.attributes().iter().enumerate() {
            if stats.std[i] < MIN_STD {
                continue;
            }
            let z: Vec<f64> = strokes
                .iter()
                .flat_map(|s| &s.records)
                .map(|r| (a.value(r) - stats.mean[i]) / stats.divisor(i))
                .collect();
            let n = z.len() as f64;
            let mu = z.iter().sum::<f64>() / n;
            let sd = (z.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mu.abs() < 1e-9, "{a}: mean {mu}");
            assert!((sd - 1.0).abs() < 1e-9, "{a}: std {sd}");
        }
    }

    proptest! {
        #[test]
        fn offsets_match_enumeration(len in 5usize..60, window in 2usize..12, stride in 1usize..6, seed in any::<u64>()) {
            prop_assume!(window <= len);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_stroke(&mut rng, 0, len);
            let cfg = FramingConfig::new(window, stride, vec![Attribute::X]).unwrap();
            let stats = NormalizationStats { mean: vec![0.0], std: vec![1.0] };
            let frames = make_windows(&s, 0, &cfg, &stats);
            let expected: Vec<usize> = (0..len).filter(|o| o % stride == 0 && o + window <= len).collect();
            prop_assert_eq!(frames.len(), expected.len());
            for (f, &o) in frames.iter().zip(&expected) {
                let xs: Vec<f64> = s.records[o..o + window].iter().map(|r| r.x).collect();
                prop_assert_eq!(&f.vector, &xs);
            }
        }
    }
}
