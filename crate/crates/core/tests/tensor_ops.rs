use nke_core::tensor::{Graph, Tensor};
use nke_core::Error;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

#[test]
fn matmul_identity_and_annihilator() {
    let mut g = Graph::new();
    let a = g.leaf(t(&[2, 2], &[1.5, -2.0, 0.25, 7.0]));
    let eye = g.leaf(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let out = g.matmul(a, eye).unwrap();
    assert_eq!(g.value(out).data(), g.value(a).data());

    let a = g.leaf(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let zero = g.leaf(Tensor::zeros([3, 2]));
    let out = g.matmul(a, zero).unwrap();
    assert_eq!(g.value(out).shape(), &[2, 2]);
    assert!(g.value(out).data().iter().all(|&v| v == 0.0));
}

#[test]
fn matmul_hand_computed() {
    let mut g = Graph::new();
    let a = g.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = g.leaf(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
    let out = g.matmul(a, b).unwrap();
    assert_eq!(g.value(out).data(), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut g = Graph::<f64>::new();
    let a = g.leaf(Tensor::zeros([2, 3]));
    let b = g.leaf(Tensor::zeros([2, 3]));
    let err = g.matmul(a, b).unwrap_err();
    match &err {
        Error::Dimension { lhs, rhs, .. } => {
            assert_eq!(lhs, &[2, 3]);
            assert_eq!(rhs, &[2, 3]);
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(err.to_string().contains("[2, 3]"));
}

#[test]
fn conv2d_identity_and_zero_kernels() {
    let input = t(&[1, 3, 3], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]);
    let mut g = Graph::new();
    let x = g.leaf(input.clone());
    let one = g.leaf(t(&[1, 1, 1, 1], &[1.0]));
    let out = g.conv2d(x, one, 1, 0).unwrap();
    assert_eq!(g.value(out), &input);

    let zero = g.leaf(Tensor::zeros([2, 1, 2, 2]));
    let out = g.conv2d(x, zero, 1, 1).unwrap();
    assert_eq!(g.value(out).shape(), &[2, 4, 4]);
    assert!(g.value(out).data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv2d_hand_computed() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[1, 3, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]));
    let k = g.leaf(Tensor::full([1, 1, 2, 2], 1.0));
    let out = g.conv2d(x, k, 1, 0).unwrap();
    assert_eq!(g.value(out).shape(), &[1, 2, 2]);
    assert_eq!(g.value(out).data(), &[12.0, 16.0, 24.0, 28.0]);
}

#[test]
fn conv2d_padding_and_stride_match_naive_loop() {
    // naive cross-correlation as an independent reference
    let (c, h, w, o, k, stride, pad) = (2usize, 5usize, 5usize, 3usize, 3usize, 2usize, 1usize);
    let input: Vec<f64> = (0..c * h * w).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
    let kern: Vec<f64> = (0..o * c * k * k).map(|i| ((i * 5) % 7) as f64 * 0.5 - 1.5).collect();
    let oh = (h + 2 * pad - k) / stride + 1;
    let mut expected = vec![0.0; o * oh * oh];
    for oc in 0..o {
        for oy in 0..oh {
            for ox in 0..oh {
                let mut s = 0.0;
                for ic in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                s += input[ic * h * w + iy as usize * w + ix as usize]
                                    * kern[((oc * c + ic) * k + ky) * k + kx];
                            }
                        }
                    }
                }
                expected[(oc * oh + oy) * oh + ox] = s;
            }
        }
    }
    let mut g = Graph::new();
    let x = g.leaf(t(&[c, h, w], &input));
    let kk = g.leaf(t(&[o, c, k, k], &kern));
    let out = g.conv2d(x, kk, stride, pad).unwrap();
    assert_eq!(g.value(out).data(), expected.as_slice());
}

#[test]
fn conv2d_non_integral_output_is_config_error() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::zeros([1, 4, 4]));
    let k = g.leaf(Tensor::zeros([1, 1, 3, 3]));
    assert!(matches!(g.conv2d(x, k, 2, 0), Err(Error::Config(_))));
    let big = g.leaf(Tensor::zeros([1, 1, 5, 5]));
    assert!(matches!(g.conv2d(x, big, 1, 0), Err(Error::Config(_))));
}

#[test]
fn relu_backward_uses_subgradient_zero_at_negative() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[2], &[-1.0, 2.0]).with_requires_grad(true));
    let r = g.relu(x);
    let scaled = g.scalar_mul(r, 5.0);
    let loss = g.sum(scaled);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.0, 5.0]);
}

#[test]
fn relu_passes_zero_gradient_at_exactly_zero() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[1], &[0.0]).with_requires_grad(true));
    let r = g.relu(x);
    let loss = g.sum(r);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.0]);
}

#[test]
fn sign_and_clamp_on_graph() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[3], &[-0.3, 0.0, 2.1]).with_requires_grad(true));
    let s = g.sign(x);
    assert_eq!(g.value(s).data(), &[-1.0, 0.0, 1.0]);
    assert!(!g.value(s).requires_grad());

    let c = g.clamp(x, 0.0, 1.0).unwrap();
    assert_eq!(g.value(c).data(), &[0.0, 0.0, 1.0]);
    let again = g.clamp(c, 0.0, 1.0).unwrap();
    assert_eq!(g.value(again).data(), g.value(c).data());
    assert!(matches!(g.clamp(x, 1.0, 0.0), Err(Error::Argument(_))));
}

#[test]
fn maxpool_forward_cases() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::full([2, 4, 4], 0.7));
    let p = g.maxpool2d(x, 2, 2).unwrap();
    assert_eq!(g.value(p).shape(), &[2, 2, 2]);
    assert!(g.value(p).data().iter().all(|&v| v == 0.7));

    let x = g.leaf(t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let p = g.maxpool2d(x, 2, 2).unwrap();
    assert_eq!(g.value(p).data(), &[4.0]);

    assert!(matches!(g.maxpool2d(x, 3, 1), Err(Error::Config(_))));
}

#[test]
fn maxpool_tie_routes_gradient_to_first_maximum() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[1, 2, 2], &[5.0, 5.0, 1.0, 1.0]).with_requires_grad(true));
    let p = g.maxpool2d(x, 2, 2).unwrap();
    let loss = g.sum(p);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn softmax_cross_entropy_reference_values() {
    let mut g = Graph::<f64>::new();
    let z = g.leaf(Tensor::zeros([10]));
    let loss = g.softmax_cross_entropy(z, 3).unwrap();
    assert!((g.value(loss).item().unwrap() - 10f64.ln()).abs() < 1e-12);

    let mut logits = vec![0.0; 10];
    logits[7] = 1000.0;
    let z = g.leaf(t(&[10], &logits));
    let loss = g.softmax_cross_entropy(z, 7).unwrap();
    assert!(g.value(loss).item().unwrap().abs() < 1e-12);

    assert!(matches!(g.softmax_cross_entropy(z, 10), Err(Error::Argument(_))));
}

#[test]
fn softmax_cross_entropy_matches_direct_formula() {
    // Direct -log(exp(z_y) / sum exp(z)), fine without max-subtraction for small logits.
    let logits: [f64; 4] = [0.37, -1.21, 2.05, 0.66];
    for label in 0..4 {
        let direct = -logits[label].exp().ln() + logits.iter().map(|v: &f64| v.exp()).sum::<f64>().ln();
        let mut g = Graph::new();
        let z = g.leaf(t(&[4], &logits).with_requires_grad(true));
        let loss = g.softmax_cross_entropy(z, label).unwrap();
        assert!((g.value(loss).item().unwrap() - direct).abs() < 1e-9);

        g.backward(loss).unwrap();
        let total: f64 = logits.iter().map(|v| v.exp()).sum();
        for (i, &gv) in g.grad(z).unwrap().iter().enumerate() {
            let expected = logits[i].exp() / total - if i == label { 1.0 } else { 0.0 };
            assert!((gv - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn confident_cross_entropy_keeps_the_true_class_gradient() {
    // p_y rounds to 1 in f32 at a margin of 30; the label entry must not vanish
    let mut g = Graph::<f32>::new();
    let z = g.leaf(
        Tensor::new([1, 3], vec![30.0, 0.0, 1.0])
            .unwrap()
            .with_requires_grad(true),
    );
    let loss = g.softmax_cross_entropy(z, 0).unwrap();
    g.backward(loss).unwrap();
    let grad = g.grad(z).unwrap();
    assert!(grad[0] < 0.0, "label gradient {}", grad[0]);
    let total: f32 = grad.iter().sum();
    assert!(total.abs() <= 1e-3 * grad[0].abs(), "gradient sums to {total}");
    assert!(grad[2] > grad[1]);
}

#[test]
fn backward_of_sum_is_ones_and_unused_leaf_gets_zero() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).with_requires_grad(true));
    let unused = g.leaf(Tensor::<f64>::zeros([4]).with_requires_grad(true));
    let frozen = g.leaf(Tensor::<f64>::zeros([4]));
    let loss = g.sum(x);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);
    assert_eq!(g.grad(unused).unwrap(), &[0.0; 4]);
    assert!(g.grad(frozen).is_none());
}

#[test]
fn backward_sums_contributions_from_repeated_leaf() {
    // loss = sum(x * w) + sum(x) with x used twice: dL/dx = w + 1
    let mut g = Graph::new();
    let x = g.leaf(t(&[1, 3], &[0.5, -1.0, 2.0]).with_requires_grad(true));
    let w = g.leaf(t(&[3, 1], &[2.0, 3.0, -4.0]));
    let xw = g.matmul(x, w).unwrap();
    let a = g.sum(xw);
    let b = g.sum(x);
    let loss = g.add(a, b).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[3.0, 4.0, -3.0]);
}

#[test]
fn backward_accumulates_across_calls() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[2], &[1.0, 2.0]).with_requires_grad(true));
    let loss = g.sum(x);
    g.backward(loss).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[2], &[1.0, 2.0]).with_requires_grad(true));
    let r = g.relu(x);
    assert!(matches!(g.backward(r), Err(Error::Usage(_))));
}

#[test]
fn sub_and_scale_gradients() {
    let mut g = Graph::new();
    let a = g.leaf(t(&[2], &[1.0, 2.0]).with_requires_grad(true));
    let b = g.leaf(t(&[2], &[3.0, 5.0]).with_requires_grad(true));
    let d = g.sub(a, b).unwrap();
    let s = g.scalar_mul(d, -3.0);
    let loss = g.sum(s);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(a).unwrap(), &[-3.0, -3.0]);
    assert_eq!(g.grad(b).unwrap(), &[3.0, 3.0]);
}

#[test]
fn forward_ops_are_bit_deterministic() {
    let run = || {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::from_fn([2, 6, 6], |i| ((i * 37 % 17) as f32 / 17.0).sin()));
        let k = g.leaf(Tensor::from_fn([3, 2, 3, 3], |i| ((i * 13 % 23) as f32 / 23.0) - 0.5));
        let c = g.conv2d(x, k, 1, 1).unwrap();
        let r = g.relu(c);
        let p = g.maxpool2d(r, 2, 2).unwrap();
        let f = g.reshape(p, [1, 27]).unwrap();
        let w = g.leaf(Tensor::from_fn([27, 4], |i| (i as f32 * 0.1).cos()));
        let z = g.matmul(f, w).unwrap();
        let loss = g.softmax_cross_entropy(z, 2).unwrap();
        g.value(loss).item().unwrap().to_bits()
    };
    assert_eq!(run(), run());
}
