//! Identification accuracy and verification error rates: confusion counts,
//! FAR/FRR, DET curves, EER, and their text exports.

use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{Error, Result};
use crate::fusion::{ScoreVector, TrialSet};
use crate::ingest::StrokeFilter;
use crate::net::argmax;
use crate::par;

/// Fraction of probes whose top-scoring user is the true user. Ties go to
/// the lowest user index.
pub fn accuracy(fused: &[(usize, ScoreVector)]) -> Result<f64> {
    if fused.is_empty() {
        return Err(Error::Empty("no probes to score"));
    }
    let correct = fused
        .iter()
        .filter(|(y, v)| argmax(&v.scores) == *y)
        .count();
    Ok(correct as f64 / fused.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// A trial is accepted when its score is at least `threshold`.
pub fn confusion_at_threshold(trials: &TrialSet, threshold: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for t in &trials.trials {
        match (t.genuine, t.score >= threshold) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

/// False acceptance rate, FP / (FP + TN).
pub fn far(c: &ConfusionCounts) -> Result<f64> {
    let denom = c.fp + c.tn;
    if denom == 0 {
        return Err(Error::DegenerateTrials("no impostor trials"));
    }
    Ok(c.fp as f64 / denom as f64)
}

/// False rejection rate, FN / (FN + TP).
pub fn frr(c: &ConfusionCounts) -> Result<f64> {
    let denom = c.fn_ + c.tp;
    if denom == 0 {
        return Err(Error::DegenerateTrials("no genuine trials"));
    }
    Ok(c.fn_ as f64 / denom as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// One point per distinct trial score, plus sentinels one unit below the
/// lowest score (everything accepted) and one unit above the highest
/// (everything rejected). Points are ordered by increasing threshold.
pub fn det_curve(trials: &TrialSet) -> Result<Vec<DetPoint>> {
    let mut genuine: Vec<f64> = Vec::new();
    let mut impostor: Vec<f64> = Vec::new();
    for t in &trials.trials {
        if t.genuine {
            genuine.push(t.score);
        } else {
            impostor.push(t.score);
        }
    }
    if genuine.is_empty() {
        return Err(Error::DegenerateTrials("no genuine trials"));
    }
    if impostor.is_empty() {
        return Err(Error::DegenerateTrials("no impostor trials"));
    }
    if genuine.iter().chain(&impostor).any(|s| s.is_nan()) {
        return Err(Error::DegenerateTrials("NaN score"));
    }
    genuine.sort_by(f64::total_cmp);
    impostor.sort_by(f64::total_cmp);

    let mut thresholds: Vec<f64> = genuine.iter().chain(&impostor).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let lo = thresholds[0] - 1.0;
    let hi = thresholds[thresholds.len() - 1] + 1.0;
    thresholds.insert(0, lo);
    thresholds.push(hi);

    let (ng, ni) = (genuine.len() as f64, impostor.len() as f64);
    Ok(par::map(&thresholds, |&t| {
        // number of scores strictly below t, i.e. rejected
        let rejected_genuine = genuine.partition_point(|&s| s < t);
        let rejected_impostor = impostor.partition_point(|&s| s < t);
        DetPoint {
            threshold: t,
            far: (ni - rejected_impostor as f64) / ni,
            frr: rejected_genuine as f64 / ng,
        }
    }))
}

/// Error rate where FAR and FRR cross. An exact tie at a curve point is
/// returned as is; otherwise both rates are interpolated linearly between
/// the adjacent points where `far - frr` changes sign.
pub fn eer(curve: &[DetPoint]) -> f64 {
    let diff = |p: &DetPoint| p.far - p.frr;
    if let Some(p) = curve.iter().find(|p| p.far == p.frr) {
        return p.far;
    }
    for pair in curve.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let (da, db) = (diff(a), diff(b));
        if da > 0.0 && db < 0.0 {
            let alpha = da / (da - db);
            return a.far + alpha * (b.far - a.far);
        }
    }
    // Unreachable for curves from det_curve, whose sentinels bracket the crossing.
    f64::NAN
}

pub fn export_det<W: Write>(curve: &[DetPoint], mut w: W) -> Result<()> {
    writeln!(w, "threshold,far,frr")?;
    for p in curve {
        writeln!(w, "{},{},{}", p.threshold, p.far, p.frr)?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_det<R: Read>(reader: R) -> Result<Vec<DetPoint>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let lineno = i as u64 + 1;
        if i == 0 {
            if line.trim() != "threshold,far,frr" {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("unexpected DET header {line:?}"),
                });
            }
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
        if vals.len() != 3 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 3 columns, found {}", vals.len()),
            });
        }
        out.push(DetPoint {
            threshold: vals[0],
            far: vals[1],
            frr: vals[2],
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    /// Strokes fused per probe.
    pub n: usize,
    pub accuracy: f64,
    pub eer: f64,
    pub probes: usize,
    pub trials: usize,
    /// Users with fewer than `n` test strokes.
    pub skipped_users: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub filter: StrokeFilter,
    pub rows: Vec<EvalRow>,
}

/// Text table with one row per fusion depth, ascending.
pub fn export_report<W: Write>(report: &EvalReport, mut w: W) -> Result<()> {
    writeln!(w, "stroke filter: {}", report.filter.name())?;
    writeln!(
        w,
        "{:>7}  {:>8}  {:>11}  {:>7}  {:>8}  {:>13}",
        "strokes", "EER[%]", "accuracy[%]", "probes", "trials", "skipped_users"
    )?;
    let mut rows: Vec<&EvalRow> = report.rows.iter().collect();
    rows.sort_by_key(|r| r.n);
    for r in rows {
        writeln!(
            w,
            "{:>7}  {:>8.4}  {:>11.4}  {:>7}  {:>8}  {:>13}",
            r.n,
            100.0 * r.eer,
            100.0 * r.accuracy,
            r.probes,
            r.trials,
            r.skipped_users
        )?;
    }
    w.flush()?;
    Ok(())
}
