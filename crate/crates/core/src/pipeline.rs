//! End-to-end runs: data preparation, training and fused evaluation, plus
//! the file layout used by the command-line tool.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;

use crate::error::{Error, Result};
use crate::framing::{fit_normalizer, frame_strokes, make_windows, FramingConfig};
use crate::fusion::{
    build_verification_trials, fuse_strokes, fuse_windows, sample_fusion_groups, ScoreSource,
    ScoreVector,
};
use crate::ingest::{
    compute_class_weights, filter_and_classify, parse_csv, segment_strokes, split_dataset,
    write_csv, DatasetSplit, SplitRatios, Stroke, StrokeFilter, UserIndex,
};
use crate::metrics::{accuracy, det_curve, eer, export_det, export_report, DetPoint, EvalReport, EvalRow};
use crate::net::{init_model, load_checkpoint, save_checkpoint, train, Checkpoint, TrainConfig, TrainingReport};
use crate::par;
use crate::seed;
use crate::synthgen::{generate, SynthSpec};

pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const TRAINING_REPORT_FILE: &str = "training_report.csv";
pub const EVAL_REPORT_FILE: &str = "eval_report.txt";

pub fn det_file_name(n: usize) -> String {
    format!("det_n{n:02}.csv")
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    /// Strokes fused per probe; non-empty and strictly ascending.
    pub n_list: Vec<usize>,
    pub max_groups_per_user: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            n_list: (1..=10).collect(),
            max_groups_per_user: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub filter: StrokeFilter,
    pub ratios: SplitRatios,
    pub framing: FramingConfig,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    /// `train.seed` is ignored; training randomness derives from `seed`.
    pub train: TrainConfig,
    pub fusion: FusionConfig,
    /// Master seed: the split uses it directly, initialization, training and
    /// fusion sampling use streams derived from it.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            filter: StrokeFilter::All,
            ratios: SplitRatios::default(),
            framing: FramingConfig::default(),
            hidden: crate::net::DEFAULT_HIDDEN.to_vec(),
            dropout: crate::net::DEFAULT_DROPOUT,
            train: TrainConfig::default(),
            fusion: FusionConfig::default(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let ns = &self.fusion.n_list;
        if ns.is_empty() || ns[0] == 0 || ns.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "fusion list must be non-empty, positive and strictly ascending, got {ns:?}"
            )));
        }
        if self.fusion.max_groups_per_user == 0 {
            return Err(Error::Config("max_groups_per_user must be >= 1".into()));
        }
        self.train.validate()
    }

    fn init_seed(&self) -> u64 {
        seed::derive(self.seed, &[1])
    }

    fn train_seed(&self) -> u64 {
        seed::derive(self.seed, &[2])
    }

    fn fusion_seed(&self) -> u64 {
        seed::derive(self.seed, &[3])
    }
}

/// Filtered, split strokes ready for training or evaluation.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub split: DatasetSplit,
    pub users: UserIndex,
    /// Segmentation counts, as printed after ingestion.
    pub summary: String,
}

/// parse -> segment -> drop outliers -> stroke-class filter -> split.
pub fn prepare(records: &[crate::ingest::TouchRecord], config: &RunConfig) -> Result<Prepared> {
    let segmentation = segment_strokes(records);
    let summary = segmentation.to_string();
    info!("{summary}");
    let kept = config.filter.apply(filter_and_classify(segmentation.strokes));
    if kept.is_empty() {
        return Err(Error::Empty("no strokes left after length and class filtering"));
    }
    let users = UserIndex::from_strokes(&kept);
    let split = split_dataset(&kept, config.ratios, config.seed)?;
    info!(
        "{} users; {} train / {} val / {} test strokes ({} filter)",
        users.len(),
        split.train.len(),
        split.val.len(),
        split.test.len(),
        config.filter.name()
    );
    Ok(Prepared {
        split,
        users,
        summary,
    })
}

pub fn read_records(path: &Path) -> Result<Vec<crate::ingest::TouchRecord>> {
    let file = File::open(path)?;
    parse_csv(std::io::BufReader::new(file))
}

/// Fits the normalizer, frames the train/val splits and trains a fresh
/// network.
pub fn train_model(prepared: &Prepared, config: &RunConfig) -> Result<(Checkpoint, TrainingReport)> {
    config.validate()?;
    let users = &prepared.users;
    if users.len() < 2 {
        return Err(Error::Empty("identification needs at least two users"));
    }
    let weights = compute_class_weights(&prepared.split.train, users)?.by_label(users);
    let stats = fit_normalizer(&prepared.split.train, &config.framing)?;
    let train_frames = frame_strokes(&prepared.split.train, users, &config.framing, &stats)?;
    let val_frames = frame_strokes(&prepared.split.val, users, &config.framing, &stats)?;
    info!(
        "{} train frames, {} val frames ({} + {} strokes shorter than the window)",
        train_frames.len(),
        val_frames.len(),
        train_frames.skipped_strokes,
        val_frames.skipped_strokes
    );
    let model = init_model(config.framing.input_dim(), &config.hidden, users.len(), config.init_seed())?
        .with_dropout(config.dropout)?;
    let train_config = TrainConfig {
        seed: config.train_seed(),
        ..config.train.clone()
    };
    let (model, report) = train(model, &train_frames, &val_frames, &train_config, &weights)?;
    Ok((
        Checkpoint {
            model,
            stats,
            framing: config.framing.clone(),
            users: users.clone(),
        },
        report,
    ))
}

/// Window-fused posterior of every stroke that yields at least one frame,
/// keyed by the stroke's class label.
pub fn stroke_scores(checkpoint: &Checkpoint, strokes: &[Stroke]) -> Result<Vec<(usize, ScoreVector)>> {
    let k = checkpoint.model.output_dim();
    let scored = par::map(strokes, |s| -> Result<Option<(usize, ScoreVector)>> {
        let label = checkpoint
            .users
            .label_of(s.user_id)
            .ok_or_else(|| Error::CheckpointMismatch(format!("user {} unknown to the checkpoint", s.user_id)))?;
        let frames = make_windows(s, label, &checkpoint.framing, &checkpoint.stats);
        if frames.is_empty() {
            return Ok(None);
        }
        let batch: Vec<f64> = frames.iter().flat_map(|f| f.vector.iter().copied()).collect();
        let probs = checkpoint.model.predict(&batch)?;
        let windows: Vec<ScoreVector> = probs
            .chunks_exact(k)
            .map(|p| ScoreVector::new(p.to_vec(), ScoreSource::Window))
            .collect();
        Ok(Some((label, fuse_windows(&windows)?)))
    });
    Ok(scored.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    /// DET curve per fusion depth, aligned with `report.rows`.
    pub curves: Vec<(usize, Vec<DetPoint>)>,
}

/// Scores the test strokes and, for every fusion depth, fuses sampled
/// same-user stroke groups and measures accuracy and EER.
pub fn evaluate(checkpoint: &Checkpoint, test: &[Stroke], config: &RunConfig) -> Result<Evaluation> {
    config.validate()?;
    checkpoint.ensure_framing(&config.framing)?;
    let scores = stroke_scores(checkpoint, test)?;
    let mut by_user: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, (label, _)) in scores.iter().enumerate() {
        by_user.entry(*label).or_default().push(i);
    }
    let fusion_seed = config.fusion_seed();
    let rows = par::map(&config.fusion.n_list, |&n| -> Result<(EvalRow, Vec<DetPoint>)> {
        let groups = sample_fusion_groups(&by_user, n, config.fusion.max_groups_per_user, fusion_seed)?;
        if groups.groups.is_empty() {
            return Err(Error::Empty("no user has enough test strokes for this fusion depth"));
        }
        let probes = groups
            .groups
            .iter()
            .map(|(user, members)| {
                let vs: Vec<ScoreVector> = members.iter().map(|&i| scores[i].1.clone()).collect();
                Ok((*user, fuse_strokes(&vs, n)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let trials = build_verification_trials(&probes, n)?;
        let curve = det_curve(&trials)?;
        let row = EvalRow {
            n,
            accuracy: accuracy(&probes)?,
            eer: eer(&curve),
            probes: probes.len(),
            trials: trials.trials.len(),
            skipped_users: groups.skipped_users,
        };
        info!(
            "n={n}: accuracy {:.4}, EER {:.4} over {} probes",
            row.accuracy, row.eer, row.probes
        );
        Ok((row, curve))
    });
    let mut report = EvalReport {
        filter: config.filter,
        rows: Vec::new(),
    };
    let mut curves = Vec::new();
    for r in rows {
        let (row, curve) = r?;
        curves.push((row.n, curve));
        report.rows.push(row);
    }
    Ok(Evaluation { report, curves })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| Error::Output {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes through `f`, reporting any I/O failure as an output error on `path`.
fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush().map_err(Error::from)).map_err(|e| match e {
        Error::Io(source) => Error::Output {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Output {
        path: dir.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub records: usize,
    pub strokes: usize,
    pub users: usize,
}

pub fn synth_to_file(spec: &SynthSpec, path: &Path) -> Result<SynthSummary> {
    let records = generate(spec)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    write_file(path, |w| write_csv(&records, w))?;
    let strokes = records
        .iter()
        .filter(|r| r.action == crate::ingest::Action::Down)
        .count();
    Ok(SynthSummary {
        records: records.len(),
        strokes,
        users: spec.num_users,
    })
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint_path: PathBuf,
    pub report_path: PathBuf,
    pub report: TrainingReport,
    pub segmentation: String,
}

pub fn train_to_dir(data: &Path, config: &RunConfig, out: &Path) -> Result<TrainSummary> {
    config.validate()?;
    let records = read_records(data)?;
    let prepared = prepare(&records, config)?;
    let (checkpoint, report) = train_model(&prepared, config)?;
    ensure_dir(out)?;
    let checkpoint_path = out.join(CHECKPOINT_FILE);
    let report_path = out.join(TRAINING_REPORT_FILE);
    write_file(&checkpoint_path, |w| {
        save_checkpoint(&checkpoint.model, &checkpoint.stats, &checkpoint.framing, &checkpoint.users, w)
    })?;
    write_file(&report_path, |w| report.write_csv(w))?;
    Ok(TrainSummary {
        checkpoint_path,
        report_path,
        report,
        segmentation: prepared.summary,
    })
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path)
        .map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?;
    load_checkpoint(std::io::BufReader::new(file))
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub evaluation: Evaluation,
    pub report_path: PathBuf,
    pub det_paths: Vec<PathBuf>,
}

pub fn eval_to_dir(data: &Path, config: &RunConfig, checkpoint: &Path, out: &Path) -> Result<EvalSummary> {
    config.validate()?;
    let checkpoint = read_checkpoint(checkpoint)?;
    checkpoint.ensure_framing(&config.framing)?;
    let records = read_records(data)?;
    let prepared = prepare(&records, config)?;
    checkpoint.ensure_users(&prepared.users)?;
    let evaluation = evaluate(&checkpoint, &prepared.split.test, config)?;

    ensure_dir(out)?;
    let report_path = out.join(EVAL_REPORT_FILE);
    write_file(&report_path, |w| export_report(&evaluation.report, w))?;
    let mut det_paths = Vec::new();
    for (n, curve) in &evaluation.curves {
        let path = out.join(det_file_name(*n));
        write_file(&path, |w| export_det(curve, w))?;
        det_paths.push(path);
    }
    Ok(EvalSummary {
        evaluation,
        report_path,
        det_paths,
    })
}
