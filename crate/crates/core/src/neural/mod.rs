//! From-scratch trainable models: MLP, LSTM, and generic N-BEATS, with
//! full-batch Adam training and a finite-difference gradient checker.
//!
//! Parameters live in one flat `Vec<f64>` per network with a documented
//! layout per family (see the family submodules). Retraining with identical
//! spec, data, and seed reproduces parameters bit-identically.

mod lstm;
mod mlp;
mod nbeats;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::record::{Record, RecordError};
use crate::timeseries::SupervisedDataset;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("input width mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("training diverged (non-finite loss) at iteration {iteration}")]
    Divergence { iteration: usize },
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("dataset target width {got} does not match spec output width {expected}")]
    TargetWidthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Record(#[from] RecordError),
}

type Result<T> = std::result::Result<T, NeuralError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Mlp,
    Lstm,
    Nbeats,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Mlp => "mlp",
            Family::Lstm => "lstm",
            Family::Nbeats => "nbeats",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(Family::Mlp),
            "lstm" => Ok(Family::Lstm),
            "nbeats" | "n-beats" => Ok(Family::Nbeats),
            other => Err(NeuralError::InvalidSpec(format!("unknown family {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub(crate) fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation value.
    #[inline]
    pub(crate) fn derive(&self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(NeuralError::InvalidSpec(format!(
                "unknown activation {other:?}"
            ))),
        }
    }
}

/// Hyperparameter ranges mirror the tuning search space: hidden units in
/// [2, 100], learning rate in [1e-4, 1e-1], N-BEATS hidden layers in [1, 4],
/// four generic blocks per stack, at most 500 Adam iterations.
pub const HIDDEN_UNITS_RANGE: (usize, usize) = (2, 100);
pub const LEARNING_RATE_RANGE: (f64, f64) = (1e-4, 1e-1);
pub const N_HIDDEN_LAYERS_RANGE: (usize, usize) = (1, 4);
pub const BLOCKS_PER_STACK: usize = 4;
pub const MAX_ITERATIONS: usize = 500;
pub const DEFAULT_INPUT_WIDTH: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub family: Family,
    pub input_width: usize,
    pub output_width: usize,
    pub hidden_units: usize,
    /// Hidden activation; tunable for MLP only (N-BEATS trunks are ReLU).
    pub activation: Activation,
    /// N-BEATS only.
    pub n_hidden_layers: usize,
    pub blocks_per_stack: usize,
    pub max_iterations: usize,
    pub learning_rate: f64,
}

impl NetworkSpec {
    pub fn mlp(
        input_width: usize,
        output_width: usize,
        hidden_units: usize,
        activation: Activation,
        learning_rate: f64,
    ) -> Result<Self> {
        Self {
            family: Family::Mlp,
            input_width,
            output_width,
            hidden_units,
            activation,
            n_hidden_layers: 1,
            blocks_per_stack: BLOCKS_PER_STACK,
            max_iterations: MAX_ITERATIONS,
            learning_rate,
        }
        .validated()
    }

    pub fn lstm(
        input_width: usize,
        output_width: usize,
        hidden_units: usize,
        learning_rate: f64,
    ) -> Result<Self> {
        Self {
            family: Family::Lstm,
            input_width,
            output_width,
            hidden_units,
            activation: Activation::Tanh,
            n_hidden_layers: 1,
            blocks_per_stack: BLOCKS_PER_STACK,
            max_iterations: MAX_ITERATIONS,
            learning_rate,
        }
        .validated()
    }

    pub fn nbeats(
        input_width: usize,
        output_width: usize,
        hidden_units: usize,
        n_hidden_layers: usize,
        learning_rate: f64,
    ) -> Result<Self> {
        Self {
            family: Family::Nbeats,
            input_width,
            output_width,
            hidden_units,
            activation: Activation::Relu,
            n_hidden_layers,
            blocks_per_stack: BLOCKS_PER_STACK,
            max_iterations: MAX_ITERATIONS,
            learning_rate,
        }
        .validated()
    }

    fn validated(self) -> Result<Self> {
        if self.input_width == 0 || self.output_width == 0 {
            return Err(NeuralError::InvalidSpec(
                "input and output widths must be positive".into(),
            ));
        }
        if self.hidden_units < HIDDEN_UNITS_RANGE.0 || self.hidden_units > HIDDEN_UNITS_RANGE.1 {
            return Err(NeuralError::InvalidSpec(format!(
                "hidden_units {} outside [{}, {}]",
                self.hidden_units, HIDDEN_UNITS_RANGE.0, HIDDEN_UNITS_RANGE.1
            )));
        }
        if !(self.learning_rate >= LEARNING_RATE_RANGE.0
            && self.learning_rate <= LEARNING_RATE_RANGE.1)
        {
            return Err(NeuralError::InvalidSpec(format!(
                "learning_rate {} outside [{:e}, {:e}]",
                self.learning_rate, LEARNING_RATE_RANGE.0, LEARNING_RATE_RANGE.1
            )));
        }
        if self.family == Family::Nbeats
            && (self.n_hidden_layers < N_HIDDEN_LAYERS_RANGE.0
                || self.n_hidden_layers > N_HIDDEN_LAYERS_RANGE.1)
        {
            return Err(NeuralError::InvalidSpec(format!(
                "n_hidden_layers {} outside [{}, {}]",
                self.n_hidden_layers, N_HIDDEN_LAYERS_RANGE.0, N_HIDDEN_LAYERS_RANGE.1
            )));
        }
        if self.family == Family::Nbeats && self.blocks_per_stack != BLOCKS_PER_STACK {
            return Err(NeuralError::InvalidSpec(format!(
                "blocks_per_stack must be {BLOCKS_PER_STACK}"
            )));
        }
        if self.max_iterations == 0 || self.max_iterations > MAX_ITERATIONS {
            return Err(NeuralError::InvalidSpec(format!(
                "max_iterations {} outside [1, {MAX_ITERATIONS}]",
                self.max_iterations
            )));
        }
        Ok(self)
    }

    /// Deterministic parameter count per family:
    /// - MLP: `d*h + h + h*o + o`
    /// - LSTM: `4*h*(h + 2) + h*o + o` (gates i, f, g, o over scalar inputs)
    /// - N-BEATS: `blocks * (d*h + h + (L-1)*(h*h + h) + h*d + d + h*o + o)`
    pub fn param_count(&self) -> usize {
        let (d, h, o) = (self.input_width, self.hidden_units, self.output_width);
        match self.family {
            Family::Mlp => mlp::param_count(d, h, o),
            Family::Lstm => lstm::param_count(h, o),
            Family::Nbeats => {
                nbeats::param_count(d, h, o, self.n_hidden_layers, self.blocks_per_stack)
            }
        }
    }
}

/// A network plus its flat parameter vector and training trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedNetwork {
    pub spec: NetworkSpec,
    pub params: Vec<f64>,
    pub loss_curve: Vec<f64>,
    pub seed: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const PLATEAU_TOLERANCE: f64 = 1e-8;
const PLATEAU_PATIENCE: usize = 25;

impl TrainedNetwork {
    /// Fresh network: weights uniform in (-limit, limit) with
    /// limit = sqrt(6 / (fan_in + fan_out)), biases zero, LSTM forget-gate
    /// bias 1.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let spec = spec.validated()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = match spec.family {
            Family::Mlp => mlp::init(&spec, &mut rng),
            Family::Lstm => lstm::init(&spec, &mut rng),
            Family::Nbeats => nbeats::init(&spec, &mut rng),
        };
        debug_assert_eq!(params.len(), spec.param_count());
        Ok(Self {
            spec,
            params,
            loss_curve: Vec::new(),
            seed,
        })
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.spec.input_width {
            return Err(NeuralError::ShapeMismatch {
                expected: self.spec.input_width,
                got: input.len(),
            });
        }
        Ok(match self.spec.family {
            Family::Mlp => mlp::forward(&self.spec, &self.params, input),
            Family::Lstm => lstm::forward(&self.spec, &self.params, input),
            Family::Nbeats => nbeats::forward(&self.spec, &self.params, input),
        })
    }

    /// Full-batch Adam on mean-squared error, at most `max_iterations`
    /// steps, stopping early once the loss stops improving by 1e-8 for 25
    /// consecutive iterations.
    pub fn train(mut self, dataset: &SupervisedDataset) -> Result<TrainedNetwork> {
        if dataset.is_empty() {
            return Err(NeuralError::EmptyDataset);
        }
        if dataset.input_width() != self.spec.input_width {
            return Err(NeuralError::ShapeMismatch {
                expected: self.spec.input_width,
                got: dataset.input_width(),
            });
        }
        if dataset.target_width() != self.spec.output_width {
            return Err(NeuralError::TargetWidthMismatch {
                expected: self.spec.output_width,
                got: dataset.target_width(),
            });
        }
        let n = self.params.len();
        let mut m = vec![0.0; n];
        let mut v = vec![0.0; n];
        let mut best = f64::INFINITY;
        let mut stall = 0usize;
        self.loss_curve.clear();
        for iter in 0..self.spec.max_iterations {
            let (loss, grad) = loss_and_grad(
                &self.spec,
                &self.params,
                &dataset.inputs,
                &dataset.targets,
            );
            if !loss.is_finite() {
                return Err(NeuralError::Divergence { iteration: iter });
            }
            self.loss_curve.push(loss);
            if best - loss >= PLATEAU_TOLERANCE {
                stall = 0;
            } else {
                stall += 1;
            }
            best = best.min(loss);
            if stall >= PLATEAU_PATIENCE {
                break;
            }
            let t = (iter + 1) as f64;
            let bc1 = 1.0 - ADAM_BETA1.powf(t);
            let bc2 = 1.0 - ADAM_BETA2.powf(t);
            for k in 0..n {
                m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * grad[k];
                v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * grad[k] * grad[k];
                self.params[k] -=
                    self.spec.learning_rate * (m[k] / bc1) / ((v[k] / bc2).sqrt() + ADAM_EPS);
            }
        }
        Ok(self)
    }

    pub fn to_record(&self) -> Record {
        let mut r = Record::new();
        r.push_str("kind", "network");
        r.push_str("family", self.spec.family.as_str());
        r.push_u64("input_width", self.spec.input_width as u64);
        r.push_u64("output_width", self.spec.output_width as u64);
        r.push_u64("hidden_units", self.spec.hidden_units as u64);
        r.push_str("activation", self.spec.activation.as_str());
        r.push_u64("n_hidden_layers", self.spec.n_hidden_layers as u64);
        r.push_u64("blocks_per_stack", self.spec.blocks_per_stack as u64);
        r.push_u64("max_iterations", self.spec.max_iterations as u64);
        r.push_f64("learning_rate", self.spec.learning_rate);
        r.push_u64("seed", self.seed);
        r.push_f64_slice("params", &self.params);
        r
    }

    pub fn from_record(r: &Record) -> Result<TrainedNetwork> {
        let spec = NetworkSpec {
            family: Family::parse(r.get("family")?)?,
            input_width: r.get_u64("input_width")? as usize,
            output_width: r.get_u64("output_width")? as usize,
            hidden_units: r.get_u64("hidden_units")? as usize,
            activation: Activation::parse(r.get("activation")?)?,
            n_hidden_layers: r.get_u64("n_hidden_layers")? as usize,
            blocks_per_stack: r.get_u64("blocks_per_stack")? as usize,
            max_iterations: r.get_u64("max_iterations")? as usize,
            learning_rate: r.get_f64("learning_rate")?,
        }
        .validated()?;
        let params = r.get_f64_slice("params")?;
        if params.len() != spec.param_count() {
            return Err(NeuralError::InvalidSpec(format!(
                "parameter vector length {} does not match spec ({} expected)",
                params.len(),
                spec.param_count()
            )));
        }
        Ok(TrainedNetwork {
            spec,
            params,
            loss_curve: Vec::new(),
            seed: r.get_u64("seed")?,
        })
    }
}

pub(crate) fn uniform_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub(crate) fn draw_weights(rng: &mut ChaCha8Rng, count: usize, limit: f64, out: &mut Vec<f64>) {
    for _ in 0..count {
        out.push(rng.gen_range(-limit..limit));
    }
}

/// MSE (mean over samples and output slots) and its analytic gradient.
pub fn loss_and_grad(
    spec: &NetworkSpec,
    params: &[f64],
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; params.len()];
    let denom = (inputs.len() * spec.output_width) as f64;
    let mut loss = 0.0;
    for (x, y) in inputs.iter().zip(targets) {
        let pred = match spec.family {
            Family::Mlp => mlp::forward(spec, params, x),
            Family::Lstm => lstm::forward(spec, params, x),
            Family::Nbeats => nbeats::forward(spec, params, x),
        };
        let dy: Vec<f64> = pred
            .iter()
            .zip(y)
            .map(|(p, t)| {
                loss += (p - t) * (p - t);
                2.0 * (p - t) / denom
            })
            .collect();
        match spec.family {
            Family::Mlp => mlp::accumulate_grad(spec, params, x, &dy, &mut grad),
            Family::Lstm => lstm::accumulate_grad(spec, params, x, &dy, &mut grad),
            Family::Nbeats => nbeats::accumulate_grad(spec, params, x, &dy, &mut grad),
        }
    }
    (loss / denom, grad)
}

/// Compare analytic gradients against central finite differences over
/// `draws` random parameter initializations; returns the worst symmetric
/// relative error seen. Coordinates whose probe interval straddles a ReLU
/// kink (detected by inconsistent one-sided slopes) are skipped: the loss
/// is not differentiable there.
pub fn grad_check(
    spec: &NetworkSpec,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    epsilon: f64,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    assert!(
        (1e-7..=1e-4).contains(&epsilon),
        "epsilon {epsilon} outside [1e-7, 1e-4]"
    );
    let mut worst: f64 = 0.0;
    for draw in 0..draws {
        let net = TrainedNetwork::init(spec.clone(), seed + draw as u64)?;
        let (_, analytic) = loss_and_grad(spec, &net.params, inputs, targets);
        let (l0, _) = loss_only(spec, &net.params, inputs, targets);
        let mut params = net.params.clone();
        for k in 0..params.len() {
            let orig = params[k];
            params[k] = orig + epsilon;
            let (lp, _) = loss_only(spec, &params, inputs, targets);
            params[k] = orig - epsilon;
            let (lm, _) = loss_only(spec, &params, inputs, targets);
            params[k] = orig;
            // a ReLU kink inside the probe interval makes the two one-sided
            // slopes disagree; the loss is not differentiable there, so the
            // coordinate carries no information about gradient correctness
            let fwd = (lp - l0) / epsilon;
            let bwd = (l0 - lm) / epsilon;
            if (fwd - bwd).abs() > 1e-2 * (fwd.abs() + bwd.abs()) + 1e-8 {
                continue;
            }
            let numeric = (lp - lm) / (2.0 * epsilon);
            let denom = analytic[k].abs() + numeric.abs();
            if denom > 1e-10 {
                worst = worst.max((analytic[k] - numeric).abs() / denom);
            }
        }
    }
    Ok(worst)
}

fn loss_only(
    spec: &NetworkSpec,
    params: &[f64],
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
) -> (f64, ()) {
    let denom = (inputs.len() * spec.output_width) as f64;
    let mut loss = 0.0;
    for (x, y) in inputs.iter().zip(targets) {
        let pred = match spec.family {
            Family::Mlp => mlp::forward(spec, params, x),
            Family::Lstm => lstm::forward(spec, params, x),
            Family::Nbeats => nbeats::forward(spec, params, x),
        };
        for (p, t) in pred.iter().zip(y) {
            loss += (p - t) * (p - t);
        }
    }
    (loss / denom, ())
}

#[cfg(test)]
pub(crate) use nbeats::block_param_range;
