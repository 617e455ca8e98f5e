//! Run settings from a `key = value` file overlaid with command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use nke_core::attacks::CwConfig;
use nke_core::eval::{AttackKind, SweepSpec};
use nke_core::nn::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    Synthetic,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Synthetic => "synthetic",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        <Self as ValueEnum>::from_str(s, false)
            .map_err(|_| anyhow!("unknown dataset {s:?} (mnist, cifar10, synthetic)"))
    }
}

/// Flags shared by every subcommand. Unset flags fall back to the config
/// file, then to per-dataset defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Options {
    /// `key = value` file; flags given on the command line win.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetKind>,
    #[arg(long, value_name = "PATH")]
    pub data_dir: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// `start:stop:step`, inclusive of `stop`.
    #[arg(long, value_name = "A:B:STEP")]
    pub epsilon_grid: Option<String>,
    /// Comma-separated step counts.
    #[arg(long, value_name = "LIST")]
    pub steps: Option<String>,
    /// `ascend`, `descend` or `cw`.
    #[arg(long)]
    pub direction: Option<String>,
    /// Sample cap for sweeps; number of images for `attack`.
    #[arg(long, value_name = "N")]
    pub samples: Option<usize>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Comma-separated test-set indices for `attack`.
    #[arg(long, value_name = "LIST")]
    pub indices: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f32>,
    #[arg(long)]
    pub momentum: Option<f32>,
    /// Pixel bounds for iterative attacks: `image` clamps to `[0, 1]`
    /// inside the ε-ball, `ball` clamps to the ε-ball only.
    #[arg(long, value_name = "POLICY")]
    pub clip: Option<String>,
    /// Train on only the first N training images.
    #[arg(long, value_name = "N")]
    pub train_samples: Option<usize>,
}

const KEYS: &[&str] = &[
    "dataset",
    "data_dir",
    "checkpoint",
    "epsilon_grid",
    "steps",
    "direction",
    "samples",
    "seed",
    "out",
    "indices",
    "epochs",
    "batch_size",
    "learning_rate",
    "momentum",
    "train_samples",
    "clip",
    "cw_c",
    "cw_iters",
    "cw_lr",
];

/// Parses `key = value` lines; `#` starts a comment, blank lines are
/// skipped, `-` in keys reads as `_`.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected `key = value`", i + 1))?;
        let key = key.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            bail!("config line {}: unknown key {key:?}", i + 1);
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub dataset: DatasetKind,
    pub data_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub train: TrainConfig,
    pub train_samples: Option<usize>,
    pub sweep: SweepSpec,
    /// `None` means every iterative direction.
    pub direction: Option<AttackKind>,
    pub samples: Option<usize>,
    pub indices: Option<Vec<usize>>,
    /// The merged `key = value` pairs, for the run record.
    pub record: BTreeMap<String, String>,
}

fn parse<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>>
where
    T::Err: fmt::Display,
{
    map.get(key)
        .map(|v| v.parse::<T>().map_err(|e| anyhow!("{key} = {v:?}: {e}")))
        .transpose()
}

pub fn parse_list<T: FromStr>(text: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    text.split(',')
        .map(|s| s.trim().parse::<T>().map_err(|e| anyhow!("bad list entry {s:?}: {e}")))
        .collect()
}

pub fn parse_grid(text: &str) -> Result<Vec<f32>> {
    let parts: Vec<f32> = text
        .split(':')
        .map(|s| {
            s.trim()
                .parse::<f32>()
                .map_err(|e| anyhow!("bad epsilon grid {text:?}: {e}"))
        })
        .collect::<Result<_>>()?;
    let [a, b, step] = parts[..] else {
        bail!("epsilon grid must look like start:stop:step, got {text:?}");
    };
    Ok(SweepSpec::grid(a, b, step)?)
}

impl Settings {
    pub fn resolve(opts: &Options) -> Result<Self> {
        let mut map = match &opts.config {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                parse_config(&text).with_context(|| format!("in {}", path.display()))?
            }
            None => BTreeMap::new(),
        };
        let mut set = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                map.insert(key.to_string(), v);
            }
        };
        set("dataset", opts.dataset.map(|d| d.to_string()));
        set("data_dir", opts.data_dir.as_ref().map(|p| p.display().to_string()));
        set("checkpoint", opts.checkpoint.as_ref().map(|p| p.display().to_string()));
        set("epsilon_grid", opts.epsilon_grid.clone());
        set("steps", opts.steps.clone());
        set("direction", opts.direction.clone());
        set("samples", opts.samples.map(|v| v.to_string()));
        set("seed", opts.seed.map(|v| v.to_string()));
        set("out", opts.out.as_ref().map(|p| p.display().to_string()));
        set("indices", opts.indices.clone());
        set("epochs", opts.epochs.map(|v| v.to_string()));
        set("batch_size", opts.batch_size.map(|v| v.to_string()));
        set("learning_rate", opts.learning_rate.map(|v| v.to_string()));
        set("momentum", opts.momentum.map(|v| v.to_string()));
        set("train_samples", opts.train_samples.map(|v| v.to_string()));
        set("clip", opts.clip.clone());
        Self::from_map(map)
    }

    pub fn from_map(map: BTreeMap<String, String>) -> Result<Self> {
        let dataset: DatasetKind = parse(&map, "dataset")?.unwrap_or(DatasetKind::Mnist);
        let seed: u64 = parse(&map, "seed")?.unwrap_or(0);

        let mut train = match dataset {
            DatasetKind::Cifar10 => TrainConfig::cifar(),
            _ => TrainConfig::mnist(),
        };
        train.seed = seed;
        if let Some(v) = parse(&map, "epochs")? {
            train.epochs = v;
        }
        if let Some(v) = parse(&map, "batch_size")? {
            train.batch_size = v;
        }
        if let Some(v) = parse(&map, "learning_rate")? {
            train.learning_rate = v;
        }
        if let Some(v) = parse(&map, "momentum")? {
            train.momentum = v;
        }
        train.validate()?;

        let mut sweep = match dataset {
            DatasetKind::Cifar10 => SweepSpec::cifar(),
            _ => SweepSpec::mnist(),
        };
        sweep.seed = seed;
        if let Some(grid) = map.get("epsilon_grid") {
            sweep.epsilons = parse_grid(grid)?;
        }
        if let Some(steps) = map.get("steps") {
            sweep.steps = parse_list(steps)?;
        }
        let direction: Option<AttackKind> = parse(&map, "direction")?;
        if let Some(kind) = direction {
            sweep.kinds = vec![kind];
        }
        let samples: Option<usize> = parse(&map, "samples")?;
        if samples.is_some() {
            sweep.sample_cap = samples;
        }
        if let Some(clip) = parse(&map, "clip")? {
            sweep.clip = clip;
        }
        let defaults = CwConfig::default();
        sweep.cw = CwConfig {
            c: parse(&map, "cw_c")?.unwrap_or(defaults.c),
            iters: parse(&map, "cw_iters")?.unwrap_or(defaults.iters),
            lr: parse(&map, "cw_lr")?.unwrap_or(defaults.lr),
        };
        sweep.validate()?;

        let default_dir = match dataset {
            DatasetKind::Mnist => "data/mnist",
            DatasetKind::Cifar10 => "data/cifar10",
            DatasetKind::Synthetic => "",
        };
        Ok(Self {
            dataset,
            data_dir: map
                .get("data_dir")
                .map_or_else(|| PathBuf::from(default_dir), PathBuf::from),
            checkpoint: map.get("checkpoint").map(PathBuf::from),
            out: map.get("out").map_or_else(|| PathBuf::from("out"), PathBuf::from),
            seed,
            train,
            train_samples: parse(&map, "train_samples")?,
            sweep,
            direction,
            samples,
            indices: map.get("indices").map(|s| parse_list(s)).transpose()?,
            record: map,
        })
    }

    pub fn checkpoint_or_default(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.join("model.nkem"))
    }

    /// The settings as a config file that reproduces this run.
    pub fn record_text(&self) -> String {
        let mut map = self.record.clone();
        map.insert("dataset".into(), self.dataset.to_string());
        map.insert("seed".into(), self.seed.to_string());
        map.insert("epochs".into(), self.train.epochs.to_string());
        map.insert("batch_size".into(), self.train.batch_size.to_string());
        map.insert("learning_rate".into(), self.train.learning_rate.to_string());
        map.insert("momentum".into(), self.train.momentum.to_string());
        map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn require_checkpoint(&self) -> Result<&Path> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| anyhow!("--checkpoint PATH is required for this subcommand"))
    }
}
