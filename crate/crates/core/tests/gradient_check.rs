//! Analytic gradients vs. central finite differences, in f64.

use nke_core::tensor::{Graph, NodeId, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;

/// A randomly drawn small network, replayable on any input.
#[derive(Debug, Clone)]
struct RandomNet {
    input_shape: [usize; 3],
    stages: Vec<Stage>,
    linear: Tensor<f64>,
    linear_bias: Tensor<f64>,
    label: usize,
}

#[derive(Debug, Clone)]
enum Stage {
    Conv {
        kernels: Tensor<f64>,
        bias: Tensor<f64>,
        stride: usize,
        padding: usize,
    },
    Relu,
    Pool {
        k: usize,
        stride: usize,
    },
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Irwin-Hall approximation is plenty for test data.
    (0..12).map(|_| rng.random::<f64>()).sum::<f64>() - 6.0
}

impl RandomNet {
    fn draw(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = rng.random_range(1..=3);
        let side = rng.random_range(6..=9);
        let mut shape = [c, side, side];
        let mut stages = Vec::new();
        let conv_layers = rng.random_range(1..=2);
        for _ in 0..conv_layers {
            let k = rng.random_range(1..=3usize);
            let padding = rng.random_range(0..=1usize);
            let padded = shape[1] + 2 * padding;
            let stride = if (padded - k) % 2 == 0 && rng.random_bool(0.3) {
                2
            } else {
                1
            };
            let out_c = rng.random_range(1..=3);
            let kernels = Tensor::from_fn([out_c, shape[0], k, k], |_| 0.5 * normal(&mut rng));
            let bias = Tensor::from_fn([out_c], |_| 0.1 * normal(&mut rng));
            stages.push(Stage::Conv {
                kernels,
                bias,
                stride,
                padding,
            });
            let side = (padded - k) / stride + 1;
            shape = [out_c, side, side];
            if rng.random_bool(0.8) {
                stages.push(Stage::Relu);
            }
            if shape[1] >= 2 && rng.random_bool(0.6) {
                let k = 2;
                stages.push(Stage::Pool { k, stride: 2 });
                shape = [shape[0], (shape[1] - k) / 2 + 1, (shape[2] - k) / 2 + 1];
            }
        }
        let features: usize = shape.iter().product();
        let classes = rng.random_range(2..=5);
        let linear = Tensor::from_fn([features, classes], |_| 0.5 * normal(&mut rng));
        let linear_bias = Tensor::from_fn([1, classes], |_| 0.1 * normal(&mut rng));
        let label = rng.random_range(0..classes);
        Self {
            input_shape: [c, side, side],
            stages,
            linear,
            linear_bias,
            label,
        }
    }

    fn input(&self, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        Tensor::from_fn(self.input_shape, |_| rng.random::<f64>())
    }

    fn record(&self, g: &mut Graph<f64>, x: NodeId) -> NodeId {
        let mut h = x;
        for stage in &self.stages {
            h = match stage {
                Stage::Conv {
                    kernels,
                    bias,
                    stride,
                    padding,
                } => {
                    let k = g.leaf(kernels.clone());
                    let b = g.leaf(bias.clone());
                    let c = g.conv2d(h, k, *stride, *padding).unwrap();
                    g.channel_bias(c, b).unwrap()
                }
                Stage::Relu => g.relu(h),
                Stage::Pool { k, stride } => g.maxpool2d(h, *k, *stride).unwrap(),
            };
        }
        let n = g.value(h).len();
        let flat = g.reshape(h, [1, n]).unwrap();
        let w = g.leaf(self.linear.clone());
        let b = g.leaf(self.linear_bias.clone());
        let z = g.matmul(flat, w).unwrap();
        let z = g.add(z, b).unwrap();
        g.softmax_cross_entropy(z, self.label).unwrap()
    }

    fn loss(&self, input: &Tensor<f64>) -> f64 {
        let mut g = Graph::new();
        let x = g.leaf(input.clone());
        let loss = self.record(&mut g, x);
        g.value(loss).item().unwrap()
    }

    fn input_grad(&self, input: &Tensor<f64>) -> Vec<f64> {
        let mut g = Graph::new();
        let x = g.leaf(input.clone().with_requires_grad(true));
        let loss = self.record(&mut g, x);
        g.backward(loss).unwrap();
        g.grad(x).unwrap().to_vec()
    }
}

fn central_difference(f: impl Fn(&Tensor<f64>) -> f64, at: &Tensor<f64>) -> Vec<f64> {
    (0..at.len())
        .map(|i| {
            let mut plus = at.clone();
            plus.data_mut()[i] += H;
            let mut minus = at.clone();
            minus.data_mut()[i] -= H;
            (f(&plus) - f(&minus)) / (2.0 * H)
        })
        .collect()
}

/// Largest elementwise `|a - n| / max(|a|, |n|)`, with the denominator
/// floored at 1e-6 so components that are zero on both sides count as exact.
fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

#[test]
fn random_compositions_match_finite_differences() {
    for seed in 0..20u64 {
        let net = RandomNet::draw(seed);
        let x = net.input(seed);
        let analytic = net.input_grad(&x);
        let numeric = central_difference(|v| net.loss(v), &x);
        let err = max_relative_error(&analytic, &numeric);
        assert!(err < 1e-3, "seed {seed}: max relative error {err:e} for {net:?}");
    }
}

#[test]
fn two_layer_net_parameter_and_input_gradients() {
    // x[1×6] -> linear(6→5) -> relu -> linear(5→3) -> CE
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x0 = Tensor::from_fn([1, 6], |_| rng.random::<f64>());
    let w1 = Tensor::from_fn([6, 5], |_| normal(&mut rng));
    let w2 = Tensor::from_fn([5, 3], |_| normal(&mut rng));

    let loss_of = |x: &Tensor<f64>, w1: &Tensor<f64>, w2: &Tensor<f64>, grads: bool| {
        let mut g = Graph::new();
        let xi = g.leaf(x.clone().with_requires_grad(grads));
        let a = g.leaf(w1.clone().with_requires_grad(grads));
        let b = g.leaf(w2.clone().with_requires_grad(grads));
        let h = g.matmul(xi, a).unwrap();
        let h = g.relu(h);
        let z = g.matmul(h, b).unwrap();
        let loss = g.softmax_cross_entropy(z, 1).unwrap();
        let value = g.value(loss).item().unwrap();
        if grads {
            g.backward(loss).unwrap();
            (
                value,
                vec![
                    g.grad(xi).unwrap().to_vec(),
                    g.grad(a).unwrap().to_vec(),
                    g.grad(b).unwrap().to_vec(),
                ],
            )
        } else {
            (value, vec![])
        }
    };

    let (_, grads) = loss_of(&x0, &w1, &w2, true);
    let num_x = central_difference(|v| loss_of(v, &w1, &w2, false).0, &x0);
    let num_w1 = central_difference(|v| loss_of(&x0, v, &w2, false).0, &w1);
    let num_w2 = central_difference(|v| loss_of(&x0, &w1, v, false).0, &w2);
    assert!(max_relative_error(&grads[0], &num_x) < 1e-3);
    assert!(max_relative_error(&grads[1], &num_w1) < 1e-3);
    assert!(max_relative_error(&grads[2], &num_w2) < 1e-3);
}

#[test]
fn conv_kernel_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x0 = Tensor::from_fn([2, 5, 5], |_| rng.random::<f64>());
    let k0 = Tensor::from_fn([3, 2, 3, 3], |_| normal(&mut rng) * 0.3);
    let w0 = Tensor::from_fn([27, 4], |_| normal(&mut rng) * 0.3);

    let loss_of = |k: &Tensor<f64>, grads: bool| {
        let mut g = Graph::new();
        let x = g.leaf(x0.clone());
        let kk = g.leaf(k.clone().with_requires_grad(grads));
        let c = g.conv2d(x, kk, 2, 1).unwrap();
        let flat = g.reshape(c, [1, 27]).unwrap();
        let w = g.leaf(w0.clone());
        let z = g.matmul(flat, w).unwrap();
        let loss = g.softmax_cross_entropy(z, 3).unwrap();
        let value = g.value(loss).item().unwrap();
        if grads {
            g.backward(loss).unwrap();
            (value, g.grad(kk).unwrap().to_vec())
        } else {
            (value, vec![])
        }
    };
    let (_, analytic) = loss_of(&k0, true);
    let numeric = central_difference(|k| loss_of(k, false).0, &k0);
    assert!(max_relative_error(&analytic, &numeric) < 1e-3);
}
