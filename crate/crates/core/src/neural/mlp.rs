//! Single-hidden-layer perceptron with a linear output head.
//!
//! Parameter layout: `W1 (h x d, row-major) | b1 (h) | W2 (o x h) | b2 (o)`.

use rand_chacha::ChaCha8Rng;

use super::{draw_weights, uniform_limit, NetworkSpec};

pub(crate) fn param_count(d: usize, h: usize, o: usize) -> usize {
    d * h + h + h * o + o
}

struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

fn offsets(d: usize, h: usize, o: usize) -> Offsets {
    let w1 = 0;
    let b1 = w1 + h * d;
    let w2 = b1 + h;
    let b2 = w2 + o * h;
    let _ = o;
    Offsets { w1, b1, w2, b2 }
}

pub(crate) fn init(spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (d, h, o) = (spec.input_width, spec.hidden_units, spec.output_width);
    let mut params = Vec::with_capacity(param_count(d, h, o));
    draw_weights(rng, h * d, uniform_limit(d, h), &mut params);
    params.extend(std::iter::repeat(0.0).take(h));
    draw_weights(rng, o * h, uniform_limit(h, o), &mut params);
    params.extend(std::iter::repeat(0.0).take(o));
    params
}

pub(crate) fn forward(spec: &NetworkSpec, params: &[f64], x: &[f64]) -> Vec<f64> {
    let (hidden, _) = hidden_layer(spec, params, x);
    output_layer(spec, params, &hidden)
}

fn hidden_layer(spec: &NetworkSpec, params: &[f64], x: &[f64]) -> (Vec<f64>, Offsets) {
    let (d, h, o) = (spec.input_width, spec.hidden_units, spec.output_width);
    let off = offsets(d, h, o);
    let mut hidden = Vec::with_capacity(h);
    for i in 0..h {
        let mut z = params[off.b1 + i];
        for j in 0..d {
            z += params[off.w1 + i * d + j] * x[j];
        }
        hidden.push(spec.activation.apply(z));
    }
    (hidden, off)
}

fn output_layer(spec: &NetworkSpec, params: &[f64], hidden: &[f64]) -> Vec<f64> {
    let (d, h, o) = (spec.input_width, spec.hidden_units, spec.output_width);
    let off = offsets(d, h, o);
    let mut y = Vec::with_capacity(o);
    for k in 0..o {
        let mut z = params[off.b2 + k];
        for i in 0..h {
            z += params[off.w2 + k * h + i] * hidden[i];
        }
        y.push(z);
    }
    y
}

/// Forward + backward for one example; gradients are added into `grad`.
pub(crate) fn accumulate_grad(
    spec: &NetworkSpec,
    params: &[f64],
    x: &[f64],
    dy: &[f64],
    grad: &mut [f64],
) {
    let (d, h, o) = (spec.input_width, spec.hidden_units, spec.output_width);
    let (hidden, off) = hidden_layer(spec, params, x);

    let mut dhidden = vec![0.0; h];
    for k in 0..o {
        grad[off.b2 + k] += dy[k];
        for i in 0..h {
            grad[off.w2 + k * h + i] += dy[k] * hidden[i];
            dhidden[i] += params[off.w2 + k * h + i] * dy[k];
        }
    }
    for i in 0..h {
        let dz = dhidden[i] * spec.activation.derive(hidden[i]);
        grad[off.b1 + i] += dz;
        for j in 0..d {
            grad[off.w1 + i * d + j] += dz * x[j];
        }
    }
}
