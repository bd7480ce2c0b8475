//! Oracles shared by the integration test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ubp_core::neural::loss::{nll_raw_with_grad, pulse_loss_with_grad, PULSE_WEIGHTS};
use ubp_core::neural::{Activation, DropoutMode, LayerSpec, NetOutput, Network, NetworkSpec, OutputGrad, Shape};

pub type LossFn = dyn Fn(&NetOutput) -> (f64, OutputGrad);

/// Result of a central finite-difference comparison.
#[derive(Debug, Clone, Copy)]
pub struct GradReport {
    pub probes: usize,
    pub max_rel_err: f64,
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-7)
}

/// Compares backprop gradients with central differences on randomly chosen parameters.
pub fn grad_check(spec: NetworkSpec, seed: u64, probes: usize, mode: DropoutMode, loss: &LossFn) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::new(spec, seed).unwrap();
    let input: Vec<f64> = (0..net.input_shape().size()).map(|_| rng.random_range(-1.0..1.0)).collect();
    net.zero_grad();
    let out = net.forward_train(&input, mode).unwrap();
    let (_, g) = loss(&out);
    net.backward(&g).unwrap();
    let analytic: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad.clone()).collect();

    let h = 1e-5;
    let mut max_rel_err: f64 = 0.0;
    for _ in 0..probes {
        let t = rng.random_range(0..analytic.len());
        let i = rng.random_range(0..analytic[t].len());
        let orig = net.params()[t].values[i];
        net.params_mut()[t].values[i] = orig + h;
        let lp = loss(&net.forward(&input, mode).unwrap()).0;
        net.params_mut()[t].values[i] = orig - h;
        let lm = loss(&net.forward(&input, mode).unwrap()).0;
        net.params_mut()[t].values[i] = orig;
        let numeric = (lp - lm) / (2.0 * h);
        max_rel_err = max_rel_err.max(rel_err(analytic[t][i], numeric));
    }
    GradReport { probes, max_rel_err }
}

/// `sum(c_i y_i) + 0.5 sum(y_i^2)` with fixed pseudo-random coefficients.
pub fn quadratic_probe_loss(out: &NetOutput) -> (f64, OutputGrad) {
    let c: Vec<f64> = (0..out.raw.len()).map(|i| ((i as f64 + 1.0) * 0.7).sin()).collect();
    let loss = out.raw.iter().zip(&c).map(|(y, c)| c * y + 0.5 * y * y).sum();
    let raw = out.raw.iter().zip(&c).map(|(y, c)| c + y).collect();
    (loss, OutputGrad { raw, pulse: None })
}

pub fn nll_probe_loss(out: &NetOutput) -> (f64, OutputGrad) {
    let (l, g) = nll_raw_with_grad(&out.raw, [0.8, -0.4]).unwrap();
    (l, OutputGrad { raw: g.to_vec(), pulse: None })
}

fn target_pulse(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i as f64 * 0.4).sin()).collect()
}

pub fn pulse_probe_loss(out: &NetOutput) -> (f64, OutputGrad) {
    let pulse = out.pulse.as_ref().unwrap();
    let (l, g) = pulse_loss_with_grad(pulse, &target_pulse(pulse.len()), PULSE_WEIGHTS).unwrap();
    (l, OutputGrad { raw: vec![0.0; out.raw.len()], pulse: Some(g) })
}

pub fn joint_probe_loss(out: &NetOutput) -> (f64, OutputGrad) {
    let (lp, gp) = pulse_probe_loss(out);
    let (ln, gn) = nll_probe_loss(out);
    (lp + ln, OutputGrad { raw: gn.raw, pulse: gp.pulse })
}

fn act(function: Activation) -> LayerSpec {
    LayerSpec::Activation { function }
}

/// One small network per layer type, each routing gradients through that layer.
pub fn layer_suite() -> Vec<(&'static str, NetworkSpec, DropoutMode)> {
    let conv = |out_channels, kernel| LayerSpec::Conv1d { out_channels, kernel };
    let dense = |out| LayerSpec::Dense { out };
    let seq = |input, layers| NetworkSpec::Sequential { input, layers };
    vec![
        ("dense", seq(Shape::flat(6), vec![dense(5), act(Activation::Tanh), dense(4)]), DropoutMode::Off),
        (
            "conv1d",
            seq(
                Shape::new(3, 16),
                vec![conv(4, 5), act(Activation::Tanh), conv(2, 3), LayerSpec::Flatten, dense(4)],
            ),
            DropoutMode::Off,
        ),
        ("relu", seq(Shape::flat(6), vec![dense(8), act(Activation::Relu), dense(4)]), DropoutMode::Off),
        (
            "leaky_relu",
            seq(Shape::flat(6), vec![dense(8), act(Activation::LeakyRelu), dense(4)]),
            DropoutMode::Off,
        ),
        ("tanh", seq(Shape::flat(6), vec![dense(8), act(Activation::Tanh), dense(4)]), DropoutMode::Off),
        (
            "dropout",
            seq(Shape::flat(6), vec![dense(8), LayerSpec::Dropout { p: 0.5 }, dense(4)]),
            DropoutMode::Sampled(11),
        ),
        (
            "avg_pool",
            seq(
                Shape::new(3, 16),
                vec![conv(4, 3), LayerSpec::AvgPool { size: 4 }, LayerSpec::Flatten, dense(4)],
            ),
            DropoutMode::Off,
        ),
        (
            "global_avg_pool",
            seq(Shape::new(3, 16), vec![conv(4, 3), act(Activation::Tanh), LayerSpec::GlobalAvgPool, dense(4)]),
            DropoutMode::Off,
        ),
        (
            "flatten",
            seq(Shape::new(2, 5), vec![LayerSpec::Flatten, dense(4)]),
            DropoutMode::Off,
        ),
    ]
}
