use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{argmax, Model};
use crate::data::{Dataset, LabeledImage};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::tensor::Graph;

/// Samples per worker task. Gradients are summed within a chunk, then the
/// chunk sums are added in chunk order, so the result does not depend on
/// the thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub seed: u64,
}

impl TrainConfig {
    pub fn mnist() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
        }
    }

    pub fn cifar() -> Self {
        Self {
            epochs: 8,
            batch_size: 128,
            ..Self::mnist()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Mean training loss and accuracy over one pass, measured on the fly
/// before each update.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

struct ChunkResult {
    grads: Vec<Vec<f32>>,
    loss: f64,
    correct: usize,
}

fn chunk_gradient(model: &Model, samples: &[&LabeledImage]) -> Result<ChunkResult> {
    let mut graph = Graph::new();
    let params = model.insert_params(&mut graph, true);
    let mut total = None;
    let mut loss = 0.0;
    let mut correct = 0;
    for sample in samples {
        let x = graph.leaf(sample.pixels.clone().with_requires_grad(false));
        let logits = model.record(&mut graph, &params, x)?;
        if argmax(graph.value(logits).data()) == sample.label {
            correct += 1;
        }
        let l = graph.softmax_cross_entropy(logits, sample.label)?;
        loss += graph.value(l).item()? as f64;
        total = Some(match total {
            None => l,
            Some(t) => graph.add(t, l)?,
        });
    }
    let total = total.expect("chunks are nonempty");
    graph.backward(total)?;
    let grads = params
        .iter()
        .map(|&p| graph.grad(p).expect("parameter leaves track gradients").to_vec())
        .collect();
    Ok(ChunkResult { grads, loss, correct })
}

/// Minibatch SGD with momentum on softmax cross-entropy:
/// `v ← μ·v + ∇`, `θ ← θ − η·v`, with `∇` the batch-mean gradient.
pub fn train(model: &mut Model, dataset: &Dataset, cfg: &TrainConfig, exec: &Executor) -> Result<Vec<EpochMetrics>> {
    train_with_progress(model, dataset, cfg, exec, |_| {})
}

/// [`train`], calling `on_epoch` after every epoch.
pub fn train_with_progress(
    model: &mut Model,
    dataset: &Dataset,
    cfg: &TrainConfig,
    exec: &Executor,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Usage("cannot train on an empty dataset".into()));
    }
    if dataset.image_shape() != Some(model.input_shape.as_slice()) {
        return Err(Error::Usage(format!(
            "dataset images {:?} do not match model input {:?}",
            dataset.image_shape(),
            model.input_shape
        )));
    }
    if let Some(img) = dataset.images.iter().find(|img| img.label >= model.num_classes) {
        return Err(Error::Usage(format!(
            "label {} exceeds model's {} classes",
            img.label, model.num_classes
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut velocity: Vec<Vec<f32>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_correct = 0;
        for batch in order.chunks(cfg.batch_size) {
            let samples: Vec<&LabeledImage> = batch.iter().map(|&i| &dataset.images[i]).collect();
            let chunks: Vec<&[&LabeledImage]> = samples.chunks(CHUNK).collect();
            let snapshot: &Model = model;
            let results = exec
                .map(&chunks, |chunk| chunk_gradient(snapshot, chunk))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;

            let mut grads = velocity.iter().map(|v| vec![0.0f32; v.len()]).collect::<Vec<_>>();
            for r in &results {
                epoch_loss += r.loss;
                epoch_correct += r.correct;
                for (acc, g) in grads.iter_mut().zip(&r.grads) {
                    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            let inv = 1.0 / batch.len() as f32;
            for ((param, v), g) in model.params_mut().into_iter().zip(&mut velocity).zip(&grads) {
                for ((p, v), g) in param.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
                    *v = cfg.momentum * *v + g * inv;
                    *p -= cfg.learning_rate * *v;
                }
            }
        }
        let metrics = EpochMetrics {
            epoch,
            loss: epoch_loss / dataset.len() as f64,
            accuracy: epoch_correct as f64 / dataset.len() as f64,
        };
        if !metrics.loss.is_finite() {
            return Err(Error::Numeric(format!("training loss diverged in epoch {epoch}")));
        }
        on_epoch(&metrics);
        history.push(metrics);
    }
    Ok(history)
}
