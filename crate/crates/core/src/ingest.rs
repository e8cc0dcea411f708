//! Touch-record ingestion: CSV parsing, stroke segmentation, length
//! filtering, per-user stratified splitting and class weights.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed;

/// Strokes shorter than this are treated as outliers and discarded.
pub const MIN_STROKE_LEN: usize = 5;
/// Longest stroke still classified as [`StrokeClass::Short`].
pub const MAX_SHORT_LEN: usize = 12;

pub const CSV_COLUMNS: [&str; 11] = [
    "phone_id",
    "user_id",
    "doc_id",
    "timestamp",
    "action",
    "phone_orientation",
    "x",
    "y",
    "pressure",
    "area",
    "finger_orientation",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Down = 0,
    Up = 1,
    Move = 2,
}

impl Action {
    pub fn from_code(code: i64) -> Option<Action> {
        match code {
            0 => Some(Action::Down),
            1 => Some(Action::Up),
            2 => Some(Action::Move),
            _ => None,
        }
    }

    pub fn code(self) -> i64 {
        self as i64
    }
}

/// One sample from the touchscreen sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TouchRecord {
    pub phone_id: i64,
    pub user_id: i64,
    pub doc_id: i64,
    /// Milliseconds.
    pub timestamp: i64,
    pub action: Action,
    pub phone_orientation: i64,
    pub x: f64,
    pub y: f64,
    pub pressure: f64,
    pub area: f64,
    pub finger_orientation: f64,
}

fn parse_int(field: &str, name: &str, line: u64) -> Result<i64> {
    if let Ok(v) = field.parse::<i64>() {
        return Ok(v);
    }
    // Some exports write integer columns as "3.0".
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() && v.fract() == 0.0 && v.abs() < 9.0e15 => Ok(v as i64),
        _ => Err(Error::Parse {
            line,
            message: format!("{name}: expected an integer, got {field:?}"),
        }),
    }
}

fn parse_real(field: &str, name: &str, line: u64) -> Result<f64> {
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            line,
            message: format!("{name}: expected a finite number, got {field:?}"),
        }),
    }
}

fn looks_numeric(field: &str) -> bool {
    field.parse::<f64>().is_ok()
}

/// Parses the 11-column touch CSV. A single leading header line is skipped
/// when its first field is not numeric.
pub fn parse_csv<R: Read>(reader: R) -> Result<Vec<TouchRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut out = Vec::new();
    let mut first = true;
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if first {
            first = false;
            if row.get(0).is_some_and(|f| !looks_numeric(f)) {
                continue;
            }
        }
        if row.len() == 1 && row.get(0) == Some("") {
            continue;
        }
        if row.len() != CSV_COLUMNS.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} columns, found {}", CSV_COLUMNS.len(), row.len()),
            });
        }
        let f = |i: usize| &row[i];
        let action_code = parse_int(f(4), "action", line)?;
        let action = Action::from_code(action_code).ok_or_else(|| Error::Parse {
            line,
            message: format!("action must be 0, 1 or 2, got {action_code}"),
        })?;
        out.push(TouchRecord {
            phone_id: parse_int(f(0), "phone_id", line)?,
            user_id: parse_int(f(1), "user_id", line)?,
            doc_id: parse_int(f(2), "doc_id", line)?,
            timestamp: parse_int(f(3), "timestamp", line)?,
            action,
            phone_orientation: parse_int(f(5), "phone_orientation", line)?,
            x: parse_real(f(6), "x", line)?,
            y: parse_real(f(7), "y", line)?,
            pressure: parse_real(f(8), "pressure", line)?,
            area: parse_real(f(9), "area", line)?,
            finger_orientation: parse_real(f(10), "finger_orientation", line)?,
        });
    }
    Ok(out)
}

/// Writes records in the wire format read by [`parse_csv`], header first.
/// Reals use the shortest representation that parses back to the same bits.
pub fn write_csv<W: Write>(records: &[TouchRecord], mut w: W) -> Result<()> {
    writeln!(w, "{}", CSV_COLUMNS.join(","))?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.phone_id,
            r.user_id,
            r.doc_id,
            r.timestamp,
            r.action.code(),
            r.phone_orientation,
            r.x,
            r.y,
            r.pressure,
            r.area,
            r.finger_orientation
        )?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrokeClass {
    Short,
    Long,
}

impl StrokeClass {
    /// `None` for outliers shorter than [`MIN_STROKE_LEN`].
    pub fn classify(len: usize) -> Option<StrokeClass> {
        if len < MIN_STROKE_LEN {
            None
        } else if len <= MAX_SHORT_LEN {
            Some(StrokeClass::Short)
        } else {
            Some(StrokeClass::Long)
        }
    }
}

/// A finger-down to finger-up record run of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct Stroke {
    /// Position in segmentation output; stable across filtering and splitting.
    pub id: usize,
    pub user_id: i64,
    pub records: Vec<TouchRecord>,
}

impl Stroke {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn category(&self) -> Option<StrokeClass> {
        StrokeClass::classify(self.len())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Segmentation {
    pub strokes: Vec<Stroke>,
    /// Records that ended up in no stroke.
    pub dropped_records: usize,
    /// Runs started by a Down that never reached an Up.
    pub truncated_runs: usize,
    /// Up/Move records seen outside any run.
    pub orphan_records: usize,
}

impl fmt::Display for Segmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "segmented {} strokes; dropped {} records ({} truncated runs, {} orphan events)",
            self.strokes.len(),
            self.dropped_records,
            self.truncated_runs,
            self.orphan_records
        )
    }
}

/// Splits records into strokes. Records are grouped by
/// (user, phone, document) and stably sorted by timestamp inside each group;
/// a stroke is a maximal `Down Move* Up` run. Truncated runs and orphan
/// events are dropped and counted.
pub fn segment_strokes(records: &[TouchRecord]) -> Segmentation {
    let mut groups: BTreeMap<(i64, i64, i64), Vec<&TouchRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.user_id, r.phone_id, r.doc_id))
            .or_default()
            .push(r);
    }

    let mut seg = Segmentation::default();
    for ((user_id, _, _), mut group) in groups {
        group.sort_by_key(|r| r.timestamp);
        let mut open: Option<Vec<TouchRecord>> = None;
        for r in group {
            match (r.action, open.as_mut()) {
                (Action::Down, current) => {
                    if let Some(run) = current {
                        seg.truncated_runs += 1;
                        seg.dropped_records += run.len();
                    }
                    open = Some(vec![r.clone()]);
                }
                (Action::Move, Some(run)) => run.push(r.clone()),
                (Action::Up, Some(_)) => {
                    let mut run = open.take().unwrap_or_default();
                    run.push(r.clone());
                    seg.strokes.push(Stroke {
                        id: seg.strokes.len(),
                        user_id,
                        records: run,
                    });
                }
                (Action::Move | Action::Up, None) => {
                    seg.orphan_records += 1;
                    seg.dropped_records += 1;
                }
            }
        }
        if let Some(run) = open {
            seg.truncated_runs += 1;
            seg.dropped_records += run.len();
        }
    }
    seg
}

/// Removes outlier strokes shorter than [`MIN_STROKE_LEN`], keeping order.
pub fn filter_and_classify(strokes: Vec<Stroke>) -> Vec<Stroke> {
    strokes
        .into_iter()
        .filter(|s| s.category().is_some())
        .collect()
}

/// Which stroke population a run trains and evaluates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StrokeFilter {
    #[default]
    All,
    LongOnly,
}

impl StrokeFilter {
    pub fn apply(self, strokes: Vec<Stroke>) -> Vec<Stroke> {
        match self {
            StrokeFilter::All => strokes,
            StrokeFilter::LongOnly => strokes
                .into_iter()
                .filter(|s| s.category() == Some(StrokeClass::Long))
                .collect(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StrokeFilter::All => "all",
            StrokeFilter::LongOnly => "long",
        }
    }
}

impl std::str::FromStr for StrokeFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(StrokeFilter::All),
            "long" => Ok(StrokeFilter::LongOnly),
            other => Err(Error::Config(format!(
                "stroke filter must be \"all\" or \"long\", got {other:?}"
            ))),
        }
    }
}

/// Sorted list of user ids; a user's position is its class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserIndex {
    ids: Vec<i64>,
}

impl UserIndex {
    pub fn from_ids(mut ids: Vec<i64>) -> UserIndex {
        ids.sort_unstable();
        ids.dedup();
        UserIndex { ids }
    }

    pub fn from_strokes(strokes: &[Stroke]) -> UserIndex {
        UserIndex::from_ids(strokes.iter().map(|s| s.user_id).collect())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[i64] {
        &self.ids
    }

    pub fn label_of(&self, user_id: i64) -> Option<usize> {
        self.ids.binary_search(&user_id).ok()
    }

    pub fn user_at(&self, label: usize) -> i64 {
        self.ids[label]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0)
            || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "split ratios must be non-negative and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }

    /// (train, val, test) sizes for `n` strokes: val and test are rounded to
    /// the nearest integer and train takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let val = ((self.val * n as f64).round() as usize).min(n);
        let test = ((self.test * n as f64).round() as usize).min(n - val);
        (n - val - test, val, test)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Stroke>,
    pub val: Vec<Stroke>,
    pub test: Vec<Stroke>,
    pub seed: u64,
}

/// Per-user seeded shuffle, then slice by `ratios`. Users are emitted in
/// ascending id order.
pub fn split_dataset(strokes: &[Stroke], ratios: SplitRatios, seed: u64) -> Result<DatasetSplit> {
    ratios.validate()?;
    let mut by_user: BTreeMap<i64, Vec<&Stroke>> = BTreeMap::new();
    for s in strokes {
        by_user.entry(s.user_id).or_default().push(s);
    }

    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for (user_id, mut mine) in by_user {
        if mine.len() < MIN_STROKE_LEN {
            return Err(Error::InsufficientStrokes {
                user_id,
                count: mine.len(),
                required: MIN_STROKE_LEN,
            });
        }
        let mut rng = seed::rng(seed, &[user_id as u64]);
        mine.shuffle(&mut rng);
        let (n_train, n_val, _) = ratios.sizes(mine.len());
        for (i, s) in mine.into_iter().enumerate() {
            let dest = if i < n_train {
                &mut split.train
            } else if i < n_train + n_val {
                &mut split.val
            } else {
                &mut split.test
            };
            dest.push(s.clone());
        }
    }
    Ok(split)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeightTable {
    pub weights: BTreeMap<i64, f64>,
}

impl ClassWeightTable {
    /// Weights ordered by class label.
    pub fn by_label(&self, users: &UserIndex) -> Vec<f64> {
        users.ids().iter().map(|id| self.weights[id]).collect()
    }
}

/// Inverse-frequency class weights `N_total / (K * N_u)`.
pub fn compute_class_weights(train: &[Stroke], users: &UserIndex) -> Result<ClassWeightTable> {
    if train.is_empty() {
        return Err(Error::Empty("training split has no strokes"));
    }
    let mut counts: BTreeMap<i64, usize> = users.ids().iter().map(|&u| (u, 0)).collect();
    for s in train {
        match counts.get_mut(&s.user_id) {
            Some(c) => *c += 1,
            None => {
                return Err(Error::Config(format!(
                    "training stroke from unknown user {}",
                    s.user_id
                )))
            }
        }
    }
    let total = train.len() as f64;
    let k = users.len() as f64;
    let mut weights = BTreeMap::new();
    for (user_id, count) in counts {
        if count == 0 {
            return Err(Error::InsufficientStrokes {
                user_id,
                count: 0,
                required: 1,
            });
        }
        weights.insert(user_id, total / (k * count as f64));
    }
    Ok(ClassWeightTable { weights })
}
