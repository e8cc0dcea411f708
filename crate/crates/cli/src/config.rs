//! The run configuration file. Every key is optional; missing keys take the
//! library defaults and command-line flags override whatever the file says.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use strokeid::framing::{Attribute, FramingConfig};
use strokeid::ingest::{SplitRatios, StrokeFilter};
use strokeid::net::TrainConfig;
use strokeid::pipeline::{FusionConfig, RunConfig, CHECKPOINT_FILE};
use strokeid::synthgen::SynthSpec;
use strokeid::{Error, Result};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub seed: Option<u64>,
    pub strokes: Option<String>,
    #[serde(default)]
    pub framing: FramingSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub fusion: FusionSection,
    #[serde(default)]
    pub synth: SynthSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FramingSection {
    pub window: Option<usize>,
    pub stride: Option<usize>,
    pub attributes: Option<Vec<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub train: Option<f64>,
    pub val: Option<f64>,
    pub test: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub hidden: Option<Vec<usize>>,
    pub dropout: Option<f64>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub bn_momentum: Option<f64>,
    pub bn_epsilon: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionSection {
    pub n: Option<Vec<usize>>,
    pub max_groups_per_user: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub users: Option<usize>,
    pub strokes_per_user: Option<usize>,
    pub min_len: Option<usize>,
    pub max_len: Option<usize>,
    pub separability: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Values given on the command line; `Some` wins over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub seed: Option<u64>,
    pub strokes: Option<StrokeFilter>,
    pub window: Option<usize>,
    pub fuse: Option<Vec<usize>>,
}

/// Everything a command needs, after merging file and flags.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub checkpoint: PathBuf,
    pub run: RunConfig,
    pub synth: SynthSpec,
}

impl Resolved {
    pub fn data(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| Error::Config("no data path given (use --data or `data` in the config)".into()))
    }
}

pub fn resolve(file: FileConfig, flags: Overrides) -> Result<Resolved> {
    let seed = flags.seed.or(file.seed).unwrap_or(0);
    let filter = match (flags.strokes, file.strokes) {
        (Some(f), _) => f,
        (None, Some(s)) => s.parse()?,
        (None, None) => StrokeFilter::All,
    };

    let default_framing = FramingConfig::default();
    let attributes = match file.framing.attributes {
        Some(names) => names.iter().map(|n| n.parse()).collect::<Result<Vec<Attribute>>>()?,
        None => default_framing.attributes().to_vec(),
    };
    let framing = FramingConfig::new(
        flags.window.or(file.framing.window).unwrap_or(default_framing.window()),
        file.framing.stride.unwrap_or(default_framing.stride()),
        attributes,
    )?;

    let d = SplitRatios::default();
    let ratios = SplitRatios {
        train: file.split.train.unwrap_or(d.train),
        val: file.split.val.unwrap_or(d.val),
        test: file.split.test.unwrap_or(d.test),
    };
    ratios.validate()?;

    let t = TrainConfig::default();
    let train = TrainConfig {
        learning_rate: file.train.learning_rate.unwrap_or(t.learning_rate),
        epochs: file.train.epochs.unwrap_or(t.epochs),
        batch_size: file.train.batch_size.unwrap_or(t.batch_size),
        seed,
        bn_momentum: file.train.bn_momentum.unwrap_or(t.bn_momentum),
        bn_epsilon: file.train.bn_epsilon.unwrap_or(t.bn_epsilon),
    };

    let f = FusionConfig::default();
    let fusion = FusionConfig {
        n_list: flags.fuse.or(file.fusion.n).unwrap_or(f.n_list),
        max_groups_per_user: file.fusion.max_groups_per_user.unwrap_or(f.max_groups_per_user),
    };

    let r = RunConfig::default();
    let run = RunConfig {
        filter,
        ratios,
        framing,
        hidden: file.train.hidden.unwrap_or(r.hidden),
        dropout: file.train.dropout.unwrap_or(r.dropout),
        train,
        fusion,
        seed,
    };
    run.validate()?;

    let s = SynthSpec::default();
    let synth = SynthSpec {
        num_users: file.synth.users.unwrap_or(s.num_users),
        strokes_per_user: file.synth.strokes_per_user.unwrap_or(s.strokes_per_user),
        min_len: file.synth.min_len.unwrap_or(s.min_len),
        max_len: file.synth.max_len.unwrap_or(s.max_len),
        separability: file.synth.separability.unwrap_or(s.separability),
        seed,
    };

    let out = flags.out.or(file.out).unwrap_or_else(|| PathBuf::from("."));
    let checkpoint = flags
        .checkpoint
        .or(file.checkpoint)
        .unwrap_or_else(|| out.join(CHECKPOINT_FILE));
    Ok(Resolved {
        data: flags.data.or(file.data),
        out,
        checkpoint,
        run,
        synth,
    })
}
