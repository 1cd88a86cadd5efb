//! Analytic gradients against central finite differences in f64.

use alcs::nn::{
    conv_backward, conv_forward, maxpool_backward, maxpool_forward, relu_backward, relu_forward, softmax_cross_entropy,
    Architecture, Layer, Params,
};
use alcs::sparse_conv::{ConvGeometry, FeatureMap};
use alcs::sparse_format::{DenseKernel, KernelShape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;
const TOLERANCE: f64 = 1e-4;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn central(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    (f(x + STEP) - f(x - STEP)) / (2.0 * STEP)
}

fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap<f64> {
    FeatureMap::from_fn(c, h, w, |_, _, _| rng.gen_range(-1.0..1.0))
}

/// `Σ probe ⊙ out`, a scalar whose gradient w.r.t. `out` is `probe`.
fn project(out: &FeatureMap<f64>, probe: &FeatureMap<f64>) -> f64 {
    out.values().iter().zip(probe.values()).map(|(a, b)| a * b).sum()
}

#[test]
fn conv_layer_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (k, stride, pad) in [(3, 1, 1), (3, 2, 0), (2, 1, 0), (1, 1, 0)] {
        let x = random_map(&mut rng, 2, 5, 6);
        let kernel = DenseKernel::from_fn(KernelShape::new(3, 2, k, k).unwrap(), |_, _, _, _| rng.gen_range(-1.0..1.0));
        let bias = vec![0.1, -0.2, 0.3];
        let geom = ConvGeometry::new(stride, pad).unwrap();
        let out = conv_forward(&x, &kernel, &bias, geom);
        let probe = random_map(&mut rng, 3, out.height(), out.width());
        let (gk, gb, gx) = conv_backward(&x, &kernel, geom, &probe);

        let mut worst: f64 = 0.0;
        for i in 0..kernel.values().len() {
            let numeric = central(
                |v| {
                    let mut k2 = kernel.clone();
                    k2.values_mut()[i] = v;
                    project(&conv_forward(&x, &k2, &bias, geom), &probe)
                },
                kernel.values()[i],
            );
            worst = worst.max(rel_err(gk.values()[i], numeric));
        }
        for n in 0..3 {
            let numeric = central(
                |v| {
                    let mut b2 = bias.clone();
                    b2[n] = v;
                    project(&conv_forward(&x, &kernel, &b2, geom), &probe)
                },
                bias[n],
            );
            worst = worst.max(rel_err(gb[n], numeric));
        }
        for i in 0..x.values().len() {
            let numeric = central(
                |v| {
                    let mut x2 = x.clone();
                    x2.values_mut()[i] = v;
                    project(&conv_forward(&x2, &kernel, &bias, geom), &probe)
                },
                x.values()[i],
            );
            worst = worst.max(rel_err(gx.values()[i], numeric));
        }
        assert!(worst <= TOLERANCE, "conv k={k} stride={stride} pad={pad}: {worst}");
    }
}

#[test]
fn relu_and_pool_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // keep values away from the relu kink and distinct for pooling
    let x = FeatureMap::from_fn(2, 4, 5, |_, _, _| {
        let v: f64 = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    });
    let probe = random_map(&mut rng, 2, 4, 5);
    let g = relu_backward(&x, &probe);
    for i in 0..x.values().len() {
        let numeric = central(
            |v| {
                let mut x2 = x.clone();
                x2.values_mut()[i] = v;
                project(&relu_forward(&x2), &probe)
            },
            x.values()[i],
        );
        assert!(rel_err(g.values()[i], numeric) <= TOLERANCE || (g.values()[i] == 0.0 && numeric.abs() < 1e-9));
    }

    let (pooled, arg) = maxpool_forward(&x);
    let probe = random_map(&mut rng, 2, pooled.height(), pooled.width());
    let g = maxpool_backward(&x, &arg, &probe);
    for i in 0..x.values().len() {
        let numeric = central(
            |v| {
                let mut x2 = x.clone();
                x2.values_mut()[i] = v;
                project(&maxpool_forward(&x2).0, &probe)
            },
            x.values()[i],
        );
        assert!(
            (g.values()[i] - numeric).abs() <= TOLERANCE * numeric.abs().max(1e-6)
                || (g.values()[i] - numeric).abs() < 1e-9
        );
    }
}

#[test]
fn fully_connected_and_softmax_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_map(&mut rng, 7, 1, 1);
    let kernel =
        DenseKernel::from_fn(KernelShape::fully_connected(4, 7).unwrap(), |_, _, _, _| rng.gen_range(-1.0..1.0));
    let bias = vec![0.0, 0.5, -0.5, 0.25];
    let geom = ConvGeometry::default();
    let loss_of = |k: &DenseKernel<f64>| softmax_cross_entropy(conv_forward(&x, k, &bias, geom).values(), 2).0;
    let logits = conv_forward(&x, &kernel, &bias, geom);
    let (_, dlogits) = softmax_cross_entropy(logits.values(), 2);
    let (gk, _, _) = conv_backward(&x, &kernel, geom, &FeatureMap::new(4, 1, 1, dlogits).unwrap());
    for i in 0..kernel.values().len() {
        let numeric = central(
            |v| {
                let mut k2 = kernel.clone();
                k2.values_mut()[i] = v;
                loss_of(&k2)
            },
            kernel.values()[i],
        );
        assert!(rel_err(gk.values()[i], numeric) <= TOLERANCE, "fc weight {i}");
    }
}

/// conv(2,1,3,3)-relu-pool-flatten-fc(3) on 1×6×6: 77 parameters.
fn small_net() -> Architecture {
    Architecture::new(
        (1, 6, 6),
        vec![
            Layer::Conv { out_channels: 2, kernel: 3, stride: 1, pad: 1 },
            Layer::Relu,
            Layer::MaxPool2,
            Layer::Flatten,
            Layer::Fc { outputs: 3 },
        ],
    )
    .unwrap()
}

#[test]
fn full_network_gradient() {
    let arch = small_net();
    let mut params: Params<f64> = arch.init_params(5);
    for b in params.biases.iter_mut().flatten() {
        *b = 0.1;
    }
    assert!(params.len() <= 200);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_map(&mut rng, 1, 6, 6);
    let label = 1;
    let (_, grads) = arch.sample_loss_grad(&params, &x, label);
    let analytic: Vec<f64> = grads.iter().copied().collect();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let numeric = central(
            |v| {
                let mut p = params.clone();
                *p.iter_mut().nth(i).unwrap() = v;
                arch.sample_loss_grad(&p, &x, label).0
            },
            *params.iter().nth(i).unwrap(),
        );
        worst = worst.max(rel_err(a, numeric));
    }
    assert!(worst <= TOLERANCE, "max relative error {worst}");
}
