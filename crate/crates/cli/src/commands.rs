use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nke_core::attacks::{cw_nke, run_attack_prefixes, AttackConfig, AttackResult};
use nke_core::data::{load_cifar10, load_mnist, make_synthetic_dataset, Dataset, Split, SyntheticSpec};
use nke_core::eval::{read_curves_csv, sweep, write_curves_csv, AttackKind, RobustnessCurve};
use nke_core::exec::Executor;
use nke_core::nn::{
    checkpoint_id, evaluate_accuracy, load_checkpoint, save_checkpoint, train_with_progress, Architecture, Model,
};
use nke_core::tensor::Tensor;

use crate::config::{DatasetKind, Settings};
use crate::pnm::{compose_grid, encode_pnm};
use crate::svg::render_curves_svg;

pub const TRAIN_METRICS_HEADER: &str = "epoch,loss,train_accuracy";
pub const MANIFEST_HEADER: &str =
    "index,label,attack,steps,epsilon,initial_label,final_label,confidence,linf_dist,l2_dist,file";
const DEFAULT_ATTACK_SAMPLES: usize = 8;

pub fn architecture_for(dataset: DatasetKind) -> Architecture {
    match dataset {
        DatasetKind::Cifar10 => Architecture::CifarCnn,
        DatasetKind::Mnist | DatasetKind::Synthetic => Architecture::MnistCnn,
    }
}

pub fn load_split(settings: &Settings, split: Split) -> Result<Dataset> {
    let dir = &settings.data_dir;
    let ds = match settings.dataset {
        DatasetKind::Mnist => load_mnist(dir, split)?,
        DatasetKind::Cifar10 => load_cifar10(dir, split)?,
        DatasetKind::Synthetic => {
            let count = match split {
                Split::Train => 2000,
                Split::Test => 500,
            };
            make_synthetic_dataset(&SyntheticSpec::new(10, count, 0.5, settings.seed), split)?
        }
    };
    Ok(ds)
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_model(settings: &Settings, dataset: &Dataset) -> Result<Model> {
    let path = settings.require_checkpoint()?;
    let model = load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    if dataset.image_shape() != Some(model.input_shape.as_slice()) {
        bail!(
            "checkpoint {} expects {:?} inputs but {} images are {:?}",
            path.display(),
            model.input_shape,
            dataset.name,
            dataset.image_shape()
        );
    }
    Ok(model)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub test_accuracy: f64,
}

pub fn cmd_train(settings: &Settings) -> Result<TrainSummary> {
    let exec = Executor::from_env()?;
    let mut train_set = load_split(settings, Split::Train)?;
    if let Some(n) = settings.train_samples {
        train_set = train_set.truncated(n);
    }
    let test_set = load_split(settings, Split::Test)?;
    create_out(&settings.out)?;

    let mut model = architecture_for(settings.dataset).build(settings.seed);
    let epochs = settings.train.epochs;
    let history = train_with_progress(&mut model, &train_set, &settings.train, &exec, |m| {
        eprintln!(
            "epoch {}/{epochs}: loss {:.4}, train accuracy {:.4}",
            m.epoch, m.loss, m.accuracy
        );
    })?;

    let checkpoint = settings.checkpoint_or_default();
    if let Some(parent) = checkpoint.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_out(parent)?;
    }
    save_checkpoint(&model, &checkpoint).with_context(|| format!("writing {}", checkpoint.display()))?;

    let mut metrics = format!("{TRAIN_METRICS_HEADER}\n");
    for m in &history {
        let _ = writeln!(metrics, "{},{:.6},{:.6}", m.epoch, m.loss, m.accuracy);
    }
    write(&settings.out.join("train_metrics.csv"), metrics)?;
    write(&settings.out.join("run_config.txt"), settings.record_text())?;

    let test_accuracy = evaluate_accuracy(&model, &test_set, &exec)?;
    println!(
        "test accuracy {test_accuracy:.4} on {} {} images; checkpoint {} ({})",
        test_set.len(),
        test_set.name,
        checkpoint.display(),
        checkpoint_id(&model)
    );
    Ok(TrainSummary {
        checkpoint,
        test_accuracy,
    })
}

fn file_ext(image: &Tensor<f32>) -> &'static str {
    if image.shape()[0] == 3 {
        "ppm"
    } else {
        "pgm"
    }
}

fn manifest_row(
    index: usize,
    label: usize,
    kind: AttackKind,
    steps: usize,
    eps: f32,
    r: &AttackResult,
    file: &str,
) -> String {
    format!(
        "{index},{label},{kind},{steps},{eps:.4},{},{},{:.6},{:.6},{:.6},{file}\n",
        r.initial_label,
        r.final_label,
        r.final_confidence(),
        r.linf_dist,
        r.l2_dist
    )
}

/// Writes originals, adversarial images for every (steps, ε), a per-sample
/// grid (rows = step counts, columns = ε) and `manifest.csv`.
pub fn cmd_attack(settings: &Settings) -> Result<PathBuf> {
    let test_set = load_split(settings, Split::Test)?;
    let model = load_model(settings, &test_set)?;
    let indices = match &settings.indices {
        Some(list) => list.clone(),
        None => (0..settings.samples.unwrap_or(DEFAULT_ATTACK_SAMPLES).min(test_set.len())).collect(),
    };
    if let Some(&bad) = indices.iter().find(|&&i| i >= test_set.len()) {
        bail!(
            "sample index {bad} out of range; valid indices are 0..{}",
            test_set.len()
        );
    }
    create_out(&settings.out)?;
    let kind = settings.direction.unwrap_or(AttackKind::Descend);
    let spec = &settings.sweep;

    let mut manifest = format!("{MANIFEST_HEADER}\n");
    for &i in &indices {
        let sample = &test_set.images[i];
        let ext = file_ext(&sample.pixels);
        write(
            &settings.out.join(format!("{i:05}_original.{ext}")),
            encode_pnm(&sample.pixels)?,
        )?;
        match kind.direction() {
            Some(direction) => {
                let mut rows: Vec<Vec<Tensor<f32>>> = vec![Vec::new(); spec.steps.len()];
                let max_steps = *spec.steps.last().expect("validated nonempty");
                for &eps in &spec.epsilons {
                    let cfg = AttackConfig::new(eps, max_steps, direction).with_clip(spec.clip);
                    let results = run_attack_prefixes(&model, &sample.pixels, sample.label, &cfg, &spec.steps)?;
                    for (row, (r, &steps)) in rows.iter_mut().zip(results.iter().zip(&spec.steps)) {
                        let name = format!("{i:05}_{kind}_s{steps}_e{eps:.4}.{ext}");
                        write(&settings.out.join(&name), encode_pnm(&r.adversarial)?)?;
                        manifest.push_str(&manifest_row(i, sample.label, kind, steps, eps, r, &name));
                        row.push(r.adversarial.clone());
                    }
                }
                let grid = compose_grid(&rows, 2)?;
                write(
                    &settings.out.join(format!("{i:05}_{kind}_grid.{ext}")),
                    encode_pnm(&grid)?,
                )?;
            }
            None => {
                let r = cw_nke(&model, &sample.pixels, &spec.cw)?;
                let name = format!("{i:05}_cw.{ext}");
                write(&settings.out.join(&name), encode_pnm(&r.result.adversarial)?)?;
                manifest.push_str(&manifest_row(
                    i,
                    sample.label,
                    kind,
                    spec.cw.iters,
                    r.result.linf_dist,
                    &r.result,
                    &name,
                ));
            }
        }
    }
    let path = settings.out.join("manifest.csv");
    write(&path, manifest)?;
    write(&settings.out.join("run_config.txt"), settings.record_text())?;
    println!("attacked {} samples; manifest at {}", indices.len(), path.display());
    Ok(path)
}

pub fn cmd_sweep(settings: &Settings) -> Result<Vec<RobustnessCurve>> {
    let exec = Executor::from_env()?;
    let test_set = load_split(settings, Split::Test)?;
    let model = load_model(settings, &test_set)?;
    create_out(&settings.out)?;
    let id = checkpoint_id(&model);
    let curves = sweep(&model, &test_set, &settings.sweep, &exec, Some(&id))?;
    write(&settings.out.join("curves.csv"), write_curves_csv(&curves))?;
    write(&settings.out.join("curves.svg"), render_curves_svg(&curves))?;
    write(&settings.out.join("run_config.txt"), settings.record_text())?;
    for c in &curves {
        let row: Vec<String> = c
            .points
            .iter()
            .map(|p| format!("{:.2}:{:.3}", p.epsilon, p.retention()))
            .collect();
        println!(
            "{} {} steps={} n={}: {}",
            c.dataset,
            c.kind,
            c.steps,
            c.points[0].n_samples,
            row.join(" ")
        );
    }
    Ok(curves)
}

pub fn cmd_render(csv: &Path, out: &Path) -> Result<PathBuf> {
    let text = fs::read_to_string(csv).with_context(|| format!("reading {}", csv.display()))?;
    let curves = read_curves_csv(&text).with_context(|| format!("parsing {}", csv.display()))?;
    create_out(out)?;
    let path = out.join("curves.svg");
    write(&path, render_curves_svg(&curves))?;
    println!("wrote {}", path.display());
    Ok(path)
}
