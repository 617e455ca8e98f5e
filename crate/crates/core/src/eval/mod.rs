//! Retention of the true label under attack, over grids of ε and step
//! counts.
//!
//! Only samples the model already classifies correctly are attacked. For an
//! ascending attack the retained fraction is post-attack accuracy; for a
//! descending one it measures how far the image can move while keeping its
//! label.

mod csv;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attacks::{cw_nke, run_attack_prefixes, AttackConfig, Clip, CwConfig, Direction};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::nn::{predict, Classifier};

pub use csv::{read_curves_csv, write_curves_csv, CURVE_CSV_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttackKind {
    Ascend,
    Descend,
    Cw,
}

impl AttackKind {
    pub fn direction(self) -> Option<Direction> {
        match self {
            AttackKind::Ascend => Some(Direction::Ascend),
            AttackKind::Descend => Some(Direction::Descend),
            AttackKind::Cw => None,
        }
    }
}

impl From<Direction> for AttackKind {
    fn from(d: Direction) -> Self {
        match d {
            Direction::Ascend => AttackKind::Ascend,
            Direction::Descend => AttackKind::Descend,
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackKind::Ascend => "ascend",
            AttackKind::Descend => "descend",
            AttackKind::Cw => "cw",
        })
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cw" => Ok(AttackKind::Cw),
            other => other.parse::<Direction>().map(Into::into),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetentionPoint {
    pub epsilon: f32,
    pub n_samples: usize,
    pub n_retained: usize,
    /// Samples whose attack hit a numeric error; counted as not retained.
    pub n_failed: usize,
}

impl RetentionPoint {
    pub fn retention(&self) -> f64 {
        self.n_retained as f64 / self.n_samples as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessCurve {
    pub dataset: String,
    pub kind: AttackKind,
    /// Attack steps; CW iterations for [`AttackKind::Cw`].
    pub steps: usize,
    /// Sorted by epsilon.
    pub points: Vec<RetentionPoint>,
    /// `None` for curves read back from CSV.
    pub seed: Option<u64>,
    pub checkpoint_id: Option<String>,
}

impl RobustnessCurve {
    pub fn retention_at(&self, epsilon: f32) -> Option<f64> {
        self.points
            .iter()
            .find(|p| (p.epsilon - epsilon).abs() < 1e-6)
            .map(RetentionPoint::retention)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// Strictly increasing, all ≥ 0.
    pub epsilons: Vec<f32>,
    /// Strictly increasing step counts for the iterative attacks.
    pub steps: Vec<usize>,
    pub kinds: Vec<AttackKind>,
    /// Attack a seeded random subset of this many correctly classified
    /// samples; `None` uses all of them.
    pub sample_cap: Option<usize>,
    pub seed: u64,
    /// Pixel bounds for the iterative attacks.
    pub clip: Clip,
    pub cw: CwConfig,
}

impl SweepSpec {
    /// `[a, a+step, …]` up to `b`, tolerant of rounding at the end point.
    pub fn grid(start: f32, stop: f32, step: f32) -> Result<Vec<f32>> {
        if !(step > 0.0 && stop >= start && start.is_finite() && stop.is_finite()) {
            return Err(Error::Config(format!("bad epsilon grid {start}:{stop}:{step}")));
        }
        let n = ((stop - start) / step + 1e-4).floor() as usize;
        Ok((0..=n)
            .map(|i| {
                let v = start as f64 + i as f64 * step as f64;
                ((v * 1e4).round() / 1e4) as f32
            })
            .collect())
    }

    pub fn mnist() -> Self {
        Self {
            epsilons: Self::grid(0.0, 1.0, 0.1).expect("valid grid"),
            steps: vec![1, 3, 5],
            kinds: vec![AttackKind::Ascend, AttackKind::Descend],
            sample_cap: Some(1000),
            seed: 0,
            clip: Clip::Image,
            cw: CwConfig::default(),
        }
    }

    pub fn cifar() -> Self {
        Self {
            epsilons: Self::grid(0.0, 0.5, 0.05).expect("valid grid"),
            ..Self::mnist()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return Err(Error::Config(
                "epsilon grid must be nonempty with every value ≥ 0".into(),
            ));
        }
        if self.epsilons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("epsilon grid must be strictly increasing".into()));
        }
        if self.steps.is_empty() || self.steps[0] == 0 || self.steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("steps must be strictly increasing and ≥ 1".into()));
        }
        if self.kinds.is_empty() {
            return Err(Error::Config("at least one attack kind is required".into()));
        }
        if self.sample_cap == Some(0) {
            return Err(Error::Config("sample cap must be at least 1".into()));
        }
        self.cw.validate()
    }
}

/// Samples with `predict == label`, in their original order. The result
/// may be empty; retention on it is an [`Error::EmptySubset`].
pub fn select_correct_subset(model: &impl Classifier, dataset: &Dataset, exec: &Executor) -> Result<Dataset> {
    if dataset.is_empty() {
        return Err(Error::Usage("cannot filter an empty dataset".into()));
    }
    let hits = exec
        .map(&dataset.images, |img| {
            predict(model, &img.pixels).map(|p| p.label == img.label)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let keep: Vec<usize> = hits.iter().enumerate().filter(|(_, &h)| h).map(|(i, _)| i).collect();
    dataset.select(&keep)
}

/// `cap` samples chosen by `seed`, kept in dataset order.
pub fn seeded_subset(dataset: &Dataset, cap: Option<usize>, seed: u64) -> Result<Dataset> {
    match cap {
        Some(cap) if cap < dataset.len() => {
            let mut indices: Vec<usize> = (0..dataset.len()).collect();
            indices.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            indices.truncate(cap);
            indices.sort_unstable();
            dataset.select(&indices)
        }
        _ => Ok(dataset.clone()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Retained,
    Changed,
    Failed,
}

fn tally(epsilon: f32, outcomes: impl Iterator<Item = Outcome>) -> RetentionPoint {
    let mut point = RetentionPoint {
        epsilon,
        n_samples: 0,
        n_retained: 0,
        n_failed: 0,
    };
    for o in outcomes {
        point.n_samples += 1;
        match o {
            Outcome::Retained => point.n_retained += 1,
            Outcome::Changed => {}
            Outcome::Failed => point.n_failed += 1,
        }
    }
    point
}

/// Outcomes `[ε][step count]` of one sample along shared trajectories.
fn iterative_outcomes(
    model: &impl Classifier,
    image: &crate::data::LabeledImage,
    epsilons: &[f32],
    steps: &[usize],
    config_for: impl Fn(f32) -> AttackConfig,
) -> Result<Vec<Vec<Outcome>>> {
    epsilons
        .iter()
        .map(|&eps| {
            let cfg = config_for(eps);
            match run_attack_prefixes(model, &image.pixels, image.label, &cfg, steps) {
                Ok(results) => Ok(results
                    .iter()
                    .map(|r| {
                        if r.final_label == image.label {
                            Outcome::Retained
                        } else {
                            Outcome::Changed
                        }
                    })
                    .collect()),
                Err(Error::Numeric(_)) => Ok(vec![Outcome::Failed; steps.len()]),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Attacks every sample of `subset` with `cfg` and counts those that keep
/// their label.
pub fn measure_retention(
    model: &impl Classifier,
    subset: &Dataset,
    cfg: &AttackConfig,
    exec: &Executor,
) -> Result<RetentionPoint> {
    cfg.validate()?;
    if subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    let outcomes = exec
        .map(&subset.images, |img| {
            iterative_outcomes(model, img, &[cfg.epsilon], &[cfg.steps], |_| *cfg).map(|o| o[0][0])
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(tally(cfg.epsilon, outcomes.into_iter()))
}

/// One curve per (iterative kind, step count), plus one per CW kind with
/// `steps = cw.iters`.
///
/// A CW point at ε counts samples whose returned perturbation keeps the
/// label and has L∞ size at least ε.
pub fn sweep(
    model: &impl Classifier,
    dataset: &Dataset,
    spec: &SweepSpec,
    exec: &Executor,
    checkpoint_id: Option<&str>,
) -> Result<Vec<RobustnessCurve>> {
    spec.validate()?;
    let correct = select_correct_subset(model, dataset, exec)?;
    if correct.is_empty() {
        return Err(Error::EmptySubset);
    }
    let subset = seeded_subset(&correct, spec.sample_cap, spec.seed)?;
    let curve = |kind, steps, points| RobustnessCurve {
        dataset: dataset.name.clone(),
        kind,
        steps,
        points,
        seed: Some(spec.seed),
        checkpoint_id: checkpoint_id.map(str::to_string),
    };

    let mut curves = Vec::new();
    for &kind in &spec.kinds {
        match kind.direction() {
            Some(direction) => {
                let max_steps = *spec.steps.last().expect("validated nonempty");
                let config_for = |eps| AttackConfig::new(eps, max_steps, direction).with_clip(spec.clip);
                let per_sample = exec
                    .map(&subset.images, |img| {
                        iterative_outcomes(model, img, &spec.epsilons, &spec.steps, config_for)
                    })
                    .into_iter()
                    .collect::<Result<Vec<_>>>()?;
                for (si, &steps) in spec.steps.iter().enumerate() {
                    let points = spec
                        .epsilons
                        .iter()
                        .enumerate()
                        .map(|(ei, &eps)| tally(eps, per_sample.iter().map(|o| o[ei][si])))
                        .collect();
                    curves.push(curve(kind, steps, points));
                }
            }
            None => {
                let per_sample = exec
                    .map(&subset.images, |img| match cw_nke(model, &img.pixels, &spec.cw) {
                        Ok(r) if r.result.final_label == img.label => Ok(Some(r.result.linf_dist)),
                        Ok(_) => Ok(None),
                        Err(Error::Numeric(_)) => Ok(None),
                        Err(e) => Err(e),
                    })
                    .into_iter()
                    .collect::<Result<Vec<_>>>()?;
                let points = spec
                    .epsilons
                    .iter()
                    .map(|&eps| {
                        tally(
                            eps,
                            per_sample.iter().map(|d| match d {
                                Some(linf) if *linf + 1e-6 >= eps => Outcome::Retained,
                                _ => Outcome::Changed,
                            }),
                        )
                    })
                    .collect();
                curves.push(curve(kind, spec.cw.iters, points));
            }
        }
    }
    Ok(curves)
}
