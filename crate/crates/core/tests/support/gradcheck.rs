//! Central finite-difference checks of every layer's backward pass.
//!
//! Each check builds a random small instance, takes the scalar probe
//! L = sum(r * layer_output) for a random r, and compares the analytic
//! gradients with (L(x + eps) - L(x - eps)) / (2 eps) for every parameter
//! and every input element.

#![allow(dead_code)]

use predator_core::net::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-3;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central difference of `f` with respect to `v[i]`.
fn central(v: &mut [f64], i: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = v[i];
    v[i] = orig + EPS;
    let up = f(v);
    v[i] = orig - EPS;
    let down = f(v);
    v[i] = orig;
    (up - down) / (2.0 * EPS)
}

/// Reference convolution by direct summation over the zero-padded support.
pub fn direct_conv(input: &Tensor, conv: &Conv2d) -> Tensor {
    let (c_in, h, w) = input.chw();
    let x = input.data();
    let mut out = vec![0.0; conv.out_channels * h * w];
    for m in 0..conv.out_channels {
        for oy in 0..h as isize {
            for ox in 0..w as isize {
                let mut acc = conv.bias[m];
                for c in 0..c_in {
                    for ky in 0..KERNEL as isize {
                        for kx in 0..KERNEL as isize {
                            let (iy, ix) = (oy + ky - PAD as isize, ox + kx - PAD as isize);
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let wi = conv.weight_index(m, c, ky as usize, kx as usize);
                            acc += conv.weights[wi] * x[(c * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out[(m * h + oy as usize) * w + ox as usize] = acc;
            }
        }
    }
    Tensor::new(vec![conv.out_channels, h, w], out).unwrap()
}

/// Max |fast - direct| over a random convolution instance.
pub fn conv_vs_direct(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c_in, c_out) = (rng.random_range(1..=12), rng.random_range(1..=21));
    let (h, w) = (rng.random_range(1..=40), rng.random_range(1..=40));
    let mut conv = Conv2d::zeros(c_out, c_in);
    conv.weights = rand_vec(&mut rng, conv.weights.len(), 1.0);
    conv.bias = rand_vec(&mut rng, c_out, 1.0);
    let input = Tensor::new(vec![c_in, h, w], rand_vec(&mut rng, c_in * h * w, 1.0)).unwrap();
    conv2d_forward(&input, &conv).unwrap().max_abs_diff(&direct_conv(&input, &conv))
}

pub fn conv_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c_in, c_out) = (rng.random_range(1..=3), rng.random_range(1..=3));
    let (h, w) = (rng.random_range(3..=7), rng.random_range(3..=7));
    let mut conv = Conv2d::zeros(c_out, c_in);
    conv.weights = rand_vec(&mut rng, conv.weights.len(), 1.0);
    conv.bias = rand_vec(&mut rng, c_out, 1.0);
    let mut x = rand_vec(&mut rng, c_in * h * w, 1.0);
    let r = rand_vec(&mut rng, c_out * h * w, 1.0);

    let probe = |conv: &Conv2d, x: &[f64]| {
        let t = Tensor::new(vec![c_in, h, w], x.to_vec()).unwrap();
        dot(conv2d_forward(&t, conv).unwrap().data(), &r)
    };
    let input = Tensor::new(vec![c_in, h, w], x.clone()).unwrap();
    let g_out = Tensor::new(vec![c_out, h, w], r.clone()).unwrap();
    let mut grad = ParamGrad::zeros(conv.weights.len(), c_out);
    let g_in = conv2d_backward(&input, &conv, &g_out, Some(&mut grad), true).unwrap();

    let mut worst: f64 = 0.0;
    for i in 0..conv.weights.len() {
        let mut c = conv.clone();
        let n = central(&mut c.weights.clone(), i, |wv| {
            c.weights = wv.to_vec();
            probe(&c, &x)
        });
        worst = worst.max(rel_err(grad.weights[i], n));
    }
    for i in 0..c_out {
        let mut c = conv.clone();
        let n = central(&mut c.bias.clone(), i, |bv| {
            c.bias = bv.to_vec();
            probe(&c, &x)
        });
        worst = worst.max(rel_err(grad.bias[i], n));
    }
    for i in 0..x.len() {
        let n = central(&mut x, i, |xv| probe(&conv, xv));
        worst = worst.max(rel_err(g_in.data()[i], n));
    }
    worst
}

pub fn dense_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_in, n_out) = (rng.random_range(1..=30), rng.random_range(1..=12));
    let mut d = Dense::zeros(n_out, n_in);
    d.weights = rand_vec(&mut rng, n_in * n_out, 1.0);
    d.bias = rand_vec(&mut rng, n_out, 1.0);
    let mut x = rand_vec(&mut rng, n_in, 1.0);
    let r = rand_vec(&mut rng, n_out, 1.0);

    let probe = |d: &Dense, x: &[f64]| {
        dot(dense_forward(&Tensor::new(vec![x.len()], x.to_vec()).unwrap(), d).unwrap().data(), &r)
    };
    let input = Tensor::new(vec![n_in], x.clone()).unwrap();
    let g_out = Tensor::new(vec![n_out], r.clone()).unwrap();
    let mut grad = ParamGrad::zeros(d.weights.len(), n_out);
    let g_in = dense_backward(&input, &d, &g_out, Some(&mut grad), true).unwrap();

    let mut worst: f64 = 0.0;
    for i in 0..d.weights.len() {
        let mut dd = d.clone();
        let n = central(&mut dd.weights.clone(), i, |wv| {
            dd.weights = wv.to_vec();
            probe(&dd, &x)
        });
        worst = worst.max(rel_err(grad.weights[i], n));
    }
    for i in 0..n_out {
        let mut dd = d.clone();
        let n = central(&mut dd.bias.clone(), i, |bv| {
            dd.bias = bv.to_vec();
            probe(&dd, &x)
        });
        worst = worst.max(rel_err(grad.bias[i], n));
    }
    for i in 0..n_in {
        let n = central(&mut x, i, |xv| probe(&d, xv));
        worst = worst.max(rel_err(g_in.data()[i], n));
    }
    worst
}

/// Inputs are kept at least 0.05 away from the kink at zero.
pub fn relu_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(4..=60);
    let mut x: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..2.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    let r = rand_vec(&mut rng, n, 1.0);
    let probe = |x: &[f64]| dot(relu_forward(&Tensor::new(vec![x.len()], x.to_vec()).unwrap()).data(), &r);
    let g_in = relu_backward(
        &Tensor::new(vec![n], x.clone()).unwrap(),
        &Tensor::new(vec![n], r.clone()).unwrap(),
    );
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let fd = central(&mut x, i, probe);
        worst = worst.max(rel_err(g_in.data()[i], fd));
    }
    worst
}

/// Distinct input values 0.01 apart, so no window maximum changes under
/// a perturbation of 1e-3.
pub fn pool_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, h, w) = (rng.random_range(1..=3), rng.random_range(2..=7), rng.random_range(2..=7));
    let n = c * h * w;
    let mut levels: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    for i in (1..n).rev() {
        levels.swap(i, rng.random_range(0..=i));
    }
    let mut x = levels;
    let (oh, ow) = (h / 2, w / 2);
    let r = rand_vec(&mut rng, c * oh * ow, 1.0);
    let probe = |x: &[f64]| {
        let (out, _) = maxpool_forward(&Tensor::new(vec![c, h, w], x.to_vec()).unwrap());
        dot(out.data(), &r)
    };
    let input = Tensor::new(vec![c, h, w], x.clone()).unwrap();
    let (_, argmax) = maxpool_forward(&input);
    let g_in = maxpool_backward(&Tensor::new(vec![c, oh, ow], r.clone()).unwrap(), &argmax, input.shape());
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let fd = central(&mut x, i, probe);
        worst = worst.max(rel_err(g_in.data()[i], fd));
    }
    worst
}

/// Softmax with a cross-entropy loss on top, checked against the logits.
pub fn softmax_ce_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=10);
    let mut z = rand_vec(&mut rng, n, 3.0);
    let mut t: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let s: f64 = t.iter().sum();
    t.iter_mut().for_each(|v| *v /= s);
    let loss = |z: &[f64]| cross_entropy(&softmax(z), &t);
    let p = softmax(&z);
    let analytic: Vec<f64> = p.iter().zip(&t).map(|(p, t)| p - t).collect();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let fd = central(&mut z, i, loss);
        worst = worst.max(rel_err(analytic[i], fd));
    }
    worst
}

/// Softmax as a standalone layer through the network's backward pass.
pub fn softmax_layer_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 10;
    let mut d = Dense::zeros(n, 1);
    d.bias = rand_vec(&mut rng, n, 3.0);
    let width = 1;
    let layers = vec![Layer::Dense(d.clone()), Layer::Softmax];
    let net = Network::from_layers(width, layers).unwrap();
    let r = rand_vec(&mut rng, n, 1.0);
    let input = Tensor::new(vec![1, 1, 1], vec![0.0]).unwrap();
    let trace = net.trace(&input).unwrap();
    let mut grads = Gradients::zeros_like(&net);
    net.backward_from(
        &trace,
        2,
        Tensor::new(vec![n], r.clone()).unwrap(),
        ReluMode::Plain,
        Some(&mut grads),
    );
    let analytic = grads.layers[0].as_ref().unwrap().bias.clone();
    let mut bias = d.bias.clone();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let fd = central(&mut bias, i, |b| dot(&softmax(b), &r));
        worst = worst.max(rel_err(analytic[i], fd));
    }
    worst
}

fn activation_pattern(net: &Network, input: &Tensor) -> (Vec<bool>, Vec<u32>) {
    let trace = net.trace(input).unwrap();
    let mut signs = Vec::new();
    let mut argmax = Vec::new();
    for (i, layer) in net.layers().iter().enumerate() {
        match layer {
            Layer::Relu => signs.extend(trace.activations[i].data().iter().map(|&v| v > 0.0)),
            Layer::MaxPool => argmax.extend_from_slice(trace.pool_argmax(i)),
            _ => {}
        }
    }
    (signs, argmax)
}

/// Whole reduced network (12x12 input) with a softmax cross-entropy loss.
/// Parameters whose perturbation flips a ReLU or a pooling winner sit on a
/// kink, where the central difference is meaningless; they are skipped and
/// counted.
pub fn network_case(seed: u64) -> (f64, usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = Architecture {
        input_width: 12,
        conv1: 3,
        conv2: 4,
        hidden: 12,
        classes: 10,
    };
    let mut net = Network::zeros(arch);
    net.randomize(seed, 1.5);
    for (_, b) in net.params_mut() {
        b.iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
    }
    let input = Tensor::new(vec![1, 12, 12], rand_vec(&mut rng, 144, 0.5)).unwrap();
    let mut target = [0.0; 10];
    target[rng.random_range(0..10)] = 1.0;
    let base = activation_pattern(&net, &input);
    let (_, grads) = net.loss_and_gradients(&input, &target).unwrap();

    let loss = |net: &Network| net.loss_and_gradients(&input, &target).unwrap().0;
    let mut worst: f64 = 0.0;
    let (mut checked, mut skipped) = (0, 0);
    let n_layers = net.params().count();
    let param_grads: Vec<_> = grads.layers.iter().flatten().cloned().collect();
    for li in 0..n_layers {
        for which in 0..2 {
            let len = {
                let (w, b) = net.params().nth(li).unwrap();
                if which == 0 { w.len() } else { b.len() }
            };
            for i in 0..len {
                let mut values = [0.0; 2];
                let mut kink = false;
                for (k, sign) in [1.0, -1.0].into_iter().enumerate() {
                    let mut probe = net.clone();
                    {
                        let (w, b) = probe.params_mut().nth(li).unwrap();
                        let v = if which == 0 { w } else { b };
                        v[i] += sign * EPS;
                    }
                    kink |= activation_pattern(&probe, &input) != base;
                    values[k] = loss(&probe);
                }
                if kink {
                    skipped += 1;
                    continue;
                }
                let fd = (values[0] - values[1]) / (2.0 * EPS);
                let g = &param_grads[li];
                let a = if which == 0 { g.weights[i] } else { g.bias[i] };
                worst = worst.max(rel_err(a, fd));
                checked += 1;
            }
        }
    }
    (worst, checked, skipped)
}
