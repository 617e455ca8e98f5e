//! Small convolutional classifiers, their training loop and checkpoints.

mod checkpoint;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::tensor::{softmax, Graph, NodeId, Real, Tensor};

pub use checkpoint::{
    checkpoint_id, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use train::{train, train_with_progress, EpochMetrics, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T: Real = f32> {
    Conv2d {
        /// `[C_out×C_in×kh×kw]`
        weight: Tensor<T>,
        /// `[C_out]`
        bias: Tensor<T>,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        size: usize,
        stride: usize,
    },
    Flatten,
    Linear {
        /// `[in×out]`
        weight: Tensor<T>,
        /// `[1×out]`
        bias: Tensor<T>,
    },
}

/// Which builder produced a model; stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Architecture {
    /// conv(1→16, 5×5) → relu → pool2 → conv(16→32, 5×5) → relu → pool2 → linear(512→10)
    MnistCnn,
    /// conv(3→16, 3×3, pad 1) → relu → pool2 → conv(16→32, 3×3, pad 1) → relu → pool2 → linear(2048→10)
    CifarCnn,
    /// A single linear layer on the flattened image.
    Linear { input_shape: [usize; 3], classes: usize },
}

impl Architecture {
    pub fn tag(&self) -> String {
        match self {
            Architecture::MnistCnn => "mnist-cnn".into(),
            Architecture::CifarCnn => "cifar-cnn".into(),
            Architecture::Linear {
                input_shape: [c, h, w],
                classes,
            } => format!("linear/{c}x{h}x{w}/{classes}"),
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "mnist-cnn" => return Ok(Architecture::MnistCnn),
            "cifar-cnn" => return Ok(Architecture::CifarCnn),
            _ => {}
        }
        let bad = || Error::Format(format!("unknown architecture tag {tag:?}"));
        let rest = tag.strip_prefix("linear/").ok_or_else(bad)?;
        let (dims, classes) = rest.split_once('/').ok_or_else(bad)?;
        let dims: Vec<usize> = dims
            .split('x')
            .map(|d| d.parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let input_shape: [usize; 3] = dims.try_into().map_err(|_| bad())?;
        let classes = classes.parse().map_err(|_| bad())?;
        Ok(Architecture::Linear { input_shape, classes })
    }

    /// Fresh model with He-initialized weights and zero biases.
    pub fn build<T: Real>(&self, seed: u64) -> Model<T> {
        let mut init = HeInit::new(seed);
        let (input_shape, layers, classes) = match self {
            Architecture::MnistCnn => (
                vec![1, 28, 28],
                vec![
                    init.conv(16, 1, 5, 1, 0),
                    Layer::Relu,
                    Layer::MaxPool { size: 2, stride: 2 },
                    init.conv(32, 16, 5, 1, 0),
                    Layer::Relu,
                    Layer::MaxPool { size: 2, stride: 2 },
                    Layer::Flatten,
                    init.linear(32 * 4 * 4, 10),
                ],
                10,
            ),
            Architecture::CifarCnn => (
                vec![3, 32, 32],
                vec![
                    init.conv(16, 3, 3, 1, 1),
                    Layer::Relu,
                    Layer::MaxPool { size: 2, stride: 2 },
                    init.conv(32, 16, 3, 1, 1),
                    Layer::Relu,
                    Layer::MaxPool { size: 2, stride: 2 },
                    Layer::Flatten,
                    init.linear(32 * 8 * 8, 10),
                ],
                10,
            ),
            Architecture::Linear { input_shape, classes } => (
                input_shape.to_vec(),
                vec![Layer::Flatten, init.linear(input_shape.iter().product(), *classes)],
                *classes,
            ),
        };
        Model {
            architecture: self.clone(),
            input_shape,
            num_classes: classes,
            layers,
        }
    }
}

struct HeInit {
    rng: ChaCha8Rng,
}

impl HeInit {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn normal<T: Real>(&mut self, shape: Vec<usize>, fan_in: usize) -> Tensor<T> {
        let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        Tensor::from_fn(shape, |_| T::lit(dist.sample(&mut self.rng)))
    }

    fn conv<T: Real>(&mut self, out_c: usize, in_c: usize, k: usize, stride: usize, padding: usize) -> Layer<T> {
        Layer::Conv2d {
            weight: self.normal(vec![out_c, in_c, k, k], in_c * k * k),
            bias: Tensor::zeros([out_c]),
            stride,
            padding,
        }
    }

    fn linear<T: Real>(&mut self, inputs: usize, outputs: usize) -> Layer<T> {
        Layer::Linear {
            weight: self.normal(vec![inputs, outputs], inputs),
            bias: Tensor::zeros([1, outputs]),
        }
    }
}

/// A feed-forward classifier producing one logit per class.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Real = f32> {
    pub architecture: Architecture,
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    pub layers: Vec<Layer<T>>,
}

/// The two-conv-layer MNIST network.
pub fn build_mnist_cnn(seed: u64) -> Model {
    Architecture::MnistCnn.build(seed)
}

/// Small CIFAR-10 network for `3×32×32` inputs.
pub fn build_cifar_cnn(seed: u64) -> Model {
    Architecture::CifarCnn.build(seed)
}

impl<T: Real> Model<T> {
    /// Single linear layer with given `[in×out]` weights and `[out]` bias.
    pub fn linear(input_shape: [usize; 3], weight: Vec<T>, bias: Vec<T>) -> Result<Self> {
        let inputs: usize = input_shape.iter().product();
        let classes = bias.len();
        Ok(Self {
            architecture: Architecture::Linear { input_shape, classes },
            input_shape: input_shape.to_vec(),
            num_classes: classes,
            layers: vec![
                Layer::Flatten,
                Layer::Linear {
                    weight: Tensor::new([inputs, classes], weight)?,
                    bias: Tensor::new([1, classes], bias)?,
                },
            ],
        })
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers
            .iter()
            .flat_map(|layer| match layer {
                Layer::Conv2d { weight, bias, .. } | Layer::Linear { weight, bias } => vec![weight, bias],
                _ => vec![],
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|layer| match layer {
                Layer::Conv2d { weight, bias, .. } | Layer::Linear { weight, bias } => vec![weight, bias],
                _ => vec![],
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(Error::Usage(format!(
                "input shape {:?} does not match model input {:?}",
                input.shape(),
                self.input_shape
            )));
        }
        Ok(())
    }

    /// Adds every parameter as a leaf of `graph`, in [`params`](Self::params) order.
    pub fn insert_params(&self, graph: &mut Graph<T>, track: bool) -> Vec<NodeId> {
        self.params()
            .into_iter()
            .map(|p| graph.leaf(p.clone().with_requires_grad(track)))
            .collect()
    }

    /// Records the forward pass on `graph` using parameter leaves from
    /// [`insert_params`](Self::insert_params); returns the logits node.
    pub fn record(&self, graph: &mut Graph<T>, params: &[NodeId], input: NodeId) -> Result<NodeId> {
        self.check_input(graph.value(input))?;
        let mut params = params.iter().copied();
        let mut next = || params.next().expect("one leaf per parameter");
        let mut h = input;
        for layer in &self.layers {
            h = match layer {
                Layer::Conv2d { stride, padding, .. } => {
                    let (w, b) = (next(), next());
                    let c = graph.conv2d(h, w, *stride, *padding)?;
                    graph.channel_bias(c, b)?
                }
                Layer::Relu => graph.relu(h),
                Layer::MaxPool { size, stride } => graph.maxpool2d(h, *size, *stride)?,
                Layer::Flatten => {
                    let n = graph.value(h).len();
                    graph.reshape(h, [1, n])?
                }
                Layer::Linear { .. } => {
                    let (w, b) = (next(), next());
                    let z = graph.matmul(h, w)?;
                    graph.add(z, b)?
                }
            };
        }
        Ok(h)
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Vec<T>> {
        let mut graph = Graph::new();
        let x = graph.leaf(input.clone().with_requires_grad(false));
        let params = self.insert_params(&mut graph, false);
        let logits = self.record(&mut graph, &params, x)?;
        Ok(graph.take(logits).into_data())
    }
}

/// Cross-entropy at an input together with its gradient.
#[derive(Debug, Clone)]
pub struct InputGradient {
    pub loss: f32,
    pub logits: Vec<f32>,
    /// `∂loss/∂input`, same shape as the input.
    pub grad: Tensor<f32>,
}

/// Anything that maps an image to class logits and can differentiate its
/// loss with respect to the image. Implementations are shared read-only
/// across worker threads.
pub trait Classifier: Sync {
    fn input_shape(&self) -> &[usize];

    fn num_classes(&self) -> usize;

    fn logits(&self, image: &Tensor<f32>) -> Result<Vec<f32>>;

    fn loss_and_input_grad(&self, image: &Tensor<f32>, label: usize) -> Result<InputGradient>;
}

impl Classifier for Model<f32> {
    fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn logits(&self, image: &Tensor<f32>) -> Result<Vec<f32>> {
        self.forward(image)
    }

    fn loss_and_input_grad(&self, image: &Tensor<f32>, label: usize) -> Result<InputGradient> {
        let mut graph = Graph::new();
        let x = graph.leaf(image.clone().with_requires_grad(true));
        let params = self.insert_params(&mut graph, false);
        let logits = self.record(&mut graph, &params, x)?;
        let loss = graph.softmax_cross_entropy(logits, label)?;
        graph.backward(loss)?;
        let loss_value = graph.value(loss).item()?;
        let logits = graph.value(logits).data().to_vec();
        let mut input = graph.take(x);
        let grad = input.take_grad().expect("input leaf requires grad");
        Ok(InputGradient {
            loss: loss_value,
            logits,
            grad: Tensor::new(image.shape(), grad)?,
        })
    }
}

/// Predicted class and class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub probabilities: Vec<f32>,
}

impl Prediction {
    pub fn from_logits(logits: &[f32]) -> Self {
        Self {
            label: argmax(logits),
            probabilities: softmax(logits),
        }
    }

    pub fn confidence(&self) -> f32 {
        self.probabilities[self.label]
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict(model: &impl Classifier, image: &Tensor<f32>) -> Result<Prediction> {
    if image.shape() != model.input_shape() {
        return Err(Error::Usage(format!(
            "image shape {:?} does not match model input {:?}",
            image.shape(),
            model.input_shape()
        )));
    }
    Ok(Prediction::from_logits(&model.logits(image)?))
}

/// Fraction of `dataset` classified correctly.
pub fn evaluate_accuracy(model: &impl Classifier, dataset: &Dataset, exec: &Executor) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Usage("cannot evaluate accuracy on an empty dataset".into()));
    }
    let hits = exec
        .map(&dataset.images, |img| {
            predict(model, &img.pixels).map(|p| p.label == img.label)
        })
        .into_iter()
        .collect::<Result<Vec<bool>>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / dataset.len() as f64)
}
