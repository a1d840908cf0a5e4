//! Generic N-BEATS: one stack of fully connected blocks, each emitting a
//! backcast and a forecast through linear heads. Block inputs chain by
//! residual subtraction (`x_{b+1} = x_b - backcast_b`) and the final output
//! is the sum of the block forecasts. Trunk activation is ReLU.
//!
//! Per-block parameter layout:
//! `W_in (h x d) | b_in (h) | {W_hid (h x h) | b_hid (h)} x (L-1) |
//!  W_back (d x h) | b_back (d) | W_fore (o x h) | b_fore (o)`.
//! Blocks are stored consecutively and do not share parameters.

use rand_chacha::ChaCha8Rng;

use super::{draw_weights, uniform_limit, Activation, NetworkSpec};

pub(crate) fn param_count(d: usize, h: usize, o: usize, layers: usize, blocks: usize) -> usize {
    blocks * block_size(d, h, o, layers)
}

fn block_size(d: usize, h: usize, o: usize, layers: usize) -> usize {
    d * h + h + (layers - 1) * (h * h + h) + h * d + d + h * o + o
}

/// Parameter range `[start, end)` of block `b` in the flat vector.
pub(crate) fn block_param_range(spec: &NetworkSpec, b: usize) -> (usize, usize) {
    let size = block_size(
        spec.input_width,
        spec.hidden_units,
        spec.output_width,
        spec.n_hidden_layers,
    );
    (b * size, (b + 1) * size)
}

pub(crate) fn init(spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (d, h, o) = (spec.input_width, spec.hidden_units, spec.output_width);
    let layers = spec.n_hidden_layers;
    let mut params = Vec::with_capacity(param_count(d, h, o, layers, spec.blocks_per_stack));
    for _ in 0..spec.blocks_per_stack {
        draw_weights(rng, h * d, uniform_limit(d, h), &mut params);
        params.extend(std::iter::repeat(0.0).take(h));
        for _ in 1..layers {
            draw_weights(rng, h * h, uniform_limit(h, h), &mut params);
            params.extend(std::iter::repeat(0.0).take(h));
        }
        draw_weights(rng, d * h, uniform_limit(h, d), &mut params);
        params.extend(std::iter::repeat(0.0).take(d));
        draw_weights(rng, o * h, uniform_limit(h, o), &mut params);
        params.extend(std::iter::repeat(0.0).take(o));
    }
    params
}

struct BlockOffsets {
    w_in: usize,
    b_in: usize,
    hidden: Vec<(usize, usize)>, // (W, b) per extra trunk layer
    w_back: usize,
    b_back: usize,
    w_fore: usize,
    b_fore: usize,
}

fn block_offsets(spec: &NetworkSpec, b: usize) -> BlockOffsets {
    let (d, h, o) = (spec.input_width, spec.hidden_units, spec.output_width);
    let (mut cursor, _) = block_param_range(spec, b);
    let w_in = cursor;
    cursor += h * d;
    let b_in = cursor;
    cursor += h;
    let mut hidden = Vec::new();
    for _ in 1..spec.n_hidden_layers {
        let w = cursor;
        cursor += h * h;
        let bias = cursor;
        cursor += h;
        hidden.push((w, bias));
    }
    let w_back = cursor;
    cursor += d * h;
    let b_back = cursor;
    cursor += d;
    let w_fore = cursor;
    cursor += o * h;
    let b_fore = cursor;
    BlockOffsets {
        w_in,
        b_in,
        hidden,
        w_back,
        b_back,
        w_fore,
        b_fore,
    }
}

struct BlockCache {
    input: Vec<f64>,
    /// Trunk activations, one vector per layer (post-ReLU).
    acts: Vec<Vec<f64>>,
}

const RELU: Activation = Activation::Relu;

fn run_block(
    spec: &NetworkSpec,
    params: &[f64],
    off: &BlockOffsets,
    x: &[f64],
) -> (Vec<f64>, Vec<f64>, BlockCache) {
    let (d, h, o) = (spec.input_width, spec.hidden_units, spec.output_width);
    let mut acts = Vec::with_capacity(spec.n_hidden_layers);
    let mut a: Vec<f64> = (0..h)
        .map(|i| {
            let mut z = params[off.b_in + i];
            for j in 0..d {
                z += params[off.w_in + i * d + j] * x[j];
            }
            RELU.apply(z)
        })
        .collect();
    acts.push(a.clone());
    for (w, bias) in &off.hidden {
        a = (0..h)
            .map(|i| {
                let mut z = params[bias + i];
                for j in 0..h {
                    z += params[w + i * h + j] * acts.last().unwrap()[j];
                }
                RELU.apply(z)
            })
            .collect();
        acts.push(a.clone());
    }
    let top = acts.last().unwrap();
    let backcast: Vec<f64> = (0..d)
        .map(|i| {
            let mut z = params[off.b_back + i];
            for j in 0..h {
                z += params[off.w_back + i * h + j] * top[j];
            }
            z
        })
        .collect();
    let forecast: Vec<f64> = (0..o)
        .map(|k| {
            let mut z = params[off.b_fore + k];
            for j in 0..h {
                z += params[off.w_fore + k * h + j] * top[j];
            }
            z
        })
        .collect();
    (
        backcast,
        forecast,
        BlockCache {
            input: x.to_vec(),
            acts,
        },
    )
}

pub(crate) fn forward(spec: &NetworkSpec, params: &[f64], x: &[f64]) -> Vec<f64> {
    let mut residual = x.to_vec();
    let mut total = vec![0.0; spec.output_width];
    for b in 0..spec.blocks_per_stack {
        let off = block_offsets(spec, b);
        let (backcast, forecast, _) = run_block(spec, params, &off, &residual);
        for (r, bc) in residual.iter_mut().zip(&backcast) {
            *r -= bc;
        }
        for (t, f) in total.iter_mut().zip(&forecast) {
            *t += f;
        }
    }
    total
}

/// Forward + backward for one example; gradients added into `grad`.
pub(crate) fn accumulate_grad(
    spec: &NetworkSpec,
    params: &[f64],
    x: &[f64],
    dy: &[f64],
    grad: &mut [f64],
) {
    let (d, h, o) = (spec.input_width, spec.hidden_units, spec.output_width);
    let blocks = spec.blocks_per_stack;
    let offs: Vec<BlockOffsets> = (0..blocks).map(|b| block_offsets(spec, b)).collect();

    let mut residual = x.to_vec();
    let mut caches = Vec::with_capacity(blocks);
    for off in &offs {
        let (backcast, _, cache) = run_block(spec, params, off, &residual);
        for (r, bc) in residual.iter_mut().zip(&backcast) {
            *r -= bc;
        }
        caches.push(cache);
    }

    // dx carries dL/d(residual input of the block after this one)
    let mut dx = vec![0.0; d];
    for b in (0..blocks).rev() {
        let off = &offs[b];
        let cache = &caches[b];
        let top = cache.acts.last().unwrap();

        // both heads feed the shared trunk: forecast with dy, backcast with -dx
        let mut dtop = vec![0.0; h];
        for k in 0..o {
            grad[off.b_fore + k] += dy[k];
            for j in 0..h {
                grad[off.w_fore + k * h + j] += dy[k] * top[j];
                dtop[j] += params[off.w_fore + k * h + j] * dy[k];
            }
        }
        for i in 0..d {
            let dback = -dx[i];
            grad[off.b_back + i] += dback;
            for j in 0..h {
                grad[off.w_back + i * h + j] += dback * top[j];
                dtop[j] += params[off.w_back + i * h + j] * dback;
            }
        }

        // trunk, deepest layer first
        let mut da = dtop;
        for (layer, (w, bias)) in off.hidden.iter().enumerate().rev() {
            let act = &cache.acts[layer + 1];
            let below = &cache.acts[layer];
            let mut dbelow = vec![0.0; h];
            for i in 0..h {
                let dz = da[i] * RELU.derive(act[i]);
                grad[bias + i] += dz;
                for j in 0..h {
                    grad[w + i * h + j] += dz * below[j];
                    dbelow[j] += params[w + i * h + j] * dz;
                }
            }
            da = dbelow;
        }
        let mut dinput = vec![0.0; d];
        for i in 0..h {
            let dz = da[i] * RELU.derive(cache.acts[0][i]);
            grad[off.b_in + i] += dz;
            for j in 0..d {
                grad[off.w_in + i * d + j] += dz * cache.input[j];
                dinput[j] += params[off.w_in + i * d + j] * dz;
            }
        }
        // pass-through of the residual subtraction
        for i in 0..d {
            dx[i] += dinput[i];
        }
    }
}
