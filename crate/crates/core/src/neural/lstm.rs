//! LSTM consuming the lag vector as a temporal sequence of scalars; the
//! final hidden state feeds a linear output head.
//!
//! Parameter layout, gates in the order `input, forget, cell, output`:
//! `for each gate: Wx (h) | Wh (h x h, row-major) | b (h)`, then
//! `Wo (o x h) | bo (o)`. The forget-gate bias is initialized to 1.

use rand_chacha::ChaCha8Rng;

use super::{draw_weights, uniform_limit, NetworkSpec};

const GATES: usize = 4;
const GATE_INPUT: usize = 0;
const GATE_FORGET: usize = 1;
const GATE_CELL: usize = 2;
const GATE_OUTPUT: usize = 3;

pub(crate) fn param_count(h: usize, o: usize) -> usize {
    GATES * (h + h * h + h) + h * o + o
}

#[inline]
fn gate_base(h: usize, gate: usize) -> usize {
    gate * (h + h * h + h)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn init(spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (h, o) = (spec.hidden_units, spec.output_width);
    let mut params = Vec::with_capacity(param_count(h, o));
    // fan-in counts the concatenated [x, h] input of each gate
    let limit = uniform_limit(1 + h, h);
    for gate in 0..GATES {
        draw_weights(rng, h, limit, &mut params);
        draw_weights(rng, h * h, limit, &mut params);
        let bias = if gate == GATE_FORGET { 1.0 } else { 0.0 };
        params.extend(std::iter::repeat(bias).take(h));
    }
    draw_weights(rng, o * h, uniform_limit(h, o), &mut params);
    params.extend(std::iter::repeat(0.0).take(o));
    params
}

struct StepCache {
    x: f64,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tc: Vec<f64>,
}

fn run_forward(spec: &NetworkSpec, params: &[f64], xs: &[f64]) -> (Vec<f64>, Vec<StepCache>) {
    let h = spec.hidden_units;
    let mut hidden = vec![0.0; h];
    let mut cell = vec![0.0; h];
    let mut caches = Vec::with_capacity(xs.len());
    for &x in xs {
        let mut gates = [
            Vec::with_capacity(h),
            Vec::with_capacity(h),
            Vec::with_capacity(h),
            Vec::with_capacity(h),
        ];
        for (gate, values) in gates.iter_mut().enumerate() {
            let base = gate_base(h, gate);
            for u in 0..h {
                let mut z = params[base + h + h * h + u]; // bias
                z += params[base + u] * x;
                for v in 0..h {
                    z += params[base + h + u * h + v] * hidden[v];
                }
                values.push(if gate == GATE_CELL { z.tanh() } else { sigmoid(z) });
            }
        }
        let [i, f, g, o] = gates;
        let c_prev = cell.clone();
        let h_prev = hidden.clone();
        let mut tc = Vec::with_capacity(h);
        for u in 0..h {
            cell[u] = f[u] * c_prev[u] + i[u] * g[u];
            tc.push(cell[u].tanh());
            hidden[u] = o[u] * tc[u];
        }
        caches.push(StepCache {
            x,
            h_prev,
            c_prev,
            i,
            f,
            g,
            o,
            tc,
        });
    }
    (hidden, caches)
}

fn head_offsets(spec: &NetworkSpec) -> (usize, usize) {
    let h = spec.hidden_units;
    let wo = GATES * (h + h * h + h);
    (wo, wo + spec.output_width * h)
}

pub(crate) fn forward(spec: &NetworkSpec, params: &[f64], xs: &[f64]) -> Vec<f64> {
    let (hidden, _) = run_forward(spec, params, xs);
    let (h, o) = (spec.hidden_units, spec.output_width);
    let (wo, bo) = head_offsets(spec);
    (0..o)
        .map(|k| {
            let mut y = params[bo + k];
            for u in 0..h {
                y += params[wo + k * h + u] * hidden[u];
            }
            y
        })
        .collect()
}

/// Backpropagation through time for one example; gradients added into `grad`.
pub(crate) fn accumulate_grad(
    spec: &NetworkSpec,
    params: &[f64],
    xs: &[f64],
    dy: &[f64],
    grad: &mut [f64],
) {
    let (h, o) = (spec.hidden_units, spec.output_width);
    let (final_hidden, caches) = run_forward(spec, params, xs);
    let (wo, bo) = head_offsets(spec);

    let mut dh = vec![0.0; h];
    for k in 0..o {
        grad[bo + k] += dy[k];
        for u in 0..h {
            grad[wo + k * h + u] += dy[k] * final_hidden[u];
            dh[u] += params[wo + k * h + u] * dy[k];
        }
    }

    let mut dc = vec![0.0; h];
    for step in caches.iter().rev() {
        let mut dz = [vec![0.0; h], vec![0.0; h], vec![0.0; h], vec![0.0; h]];
        for u in 0..h {
            let do_ = dh[u] * step.tc[u];
            dc[u] += dh[u] * step.o[u] * (1.0 - step.tc[u] * step.tc[u]);
            let di = dc[u] * step.g[u];
            let df = dc[u] * step.c_prev[u];
            let dg = dc[u] * step.i[u];
            dz[GATE_INPUT][u] = di * step.i[u] * (1.0 - step.i[u]);
            dz[GATE_FORGET][u] = df * step.f[u] * (1.0 - step.f[u]);
            dz[GATE_CELL][u] = dg * (1.0 - step.g[u] * step.g[u]);
            dz[GATE_OUTPUT][u] = do_ * step.o[u] * (1.0 - step.o[u]);
        }
        let mut dh_prev = vec![0.0; h];
        for (gate, dzg) in dz.iter().enumerate() {
            let base = gate_base(h, gate);
            for u in 0..h {
                grad[base + u] += dzg[u] * step.x;
                grad[base + h + h * h + u] += dzg[u];
                for v in 0..h {
                    grad[base + h + u * h + v] += dzg[u] * step.h_prev[v];
                    dh_prev[v] += params[base + h + u * h + v] * dzg[u];
                }
            }
        }
        for u in 0..h {
            dc[u] *= step.f[u];
        }
        dh = dh_prev;
    }
}
