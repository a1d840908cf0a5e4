//! Multi-step forecasting strategies: wraps one-step or multi-output
//! learners into Recursive, Direct, or MIMO H-step forecasters.

use thiserror::Error;

use crate::neural::{NetworkSpec, NeuralError, TrainedNetwork};
use crate::record::{Record, RecordError};
use crate::timeseries::{MinMaxScaler, TimeSeries, TimeSeriesError, WindowMode};

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("history of length {got} shorter than lag order {required}")]
    HistoryTooShort { required: usize, got: usize },
    #[error("missing learner for horizon offset {0}")]
    MissingLearner(usize),
    #[error("learner output width {got} violates the strategy contract (expected {expected})")]
    ContractViolation { expected: usize, got: usize },
    #[error("spec output width {got} inconsistent with {mode} (expected {expected})")]
    SpecOutputWidth {
        mode: StrategyMode,
        expected: usize,
        got: usize,
    },
    #[error("spec input width {got} must equal the lag order {expected}")]
    SpecInputWidth { expected: usize, got: usize },
    #[error("{mode} model trained for horizon {trained} cannot forecast horizon {requested}")]
    HorizonMismatch {
        mode: StrategyMode,
        trained: usize,
        requested: usize,
    },
    #[error("series too short to fit: {0}")]
    WindowShortage(TimeSeriesError),
    #[error(transparent)]
    Series(#[from] TimeSeriesError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Record(#[from] RecordError),
}

type Result<T> = std::result::Result<T, StrategyError>;

/// Anything that maps a lag vector (oldest-first) to one or more outputs.
pub trait Learner {
    fn output_width(&self) -> usize;
    fn predict(&self, input: &[f64]) -> Vec<f64>;
}

impl Learner for TrainedNetwork {
    fn output_width(&self) -> usize {
        self.spec.output_width
    }

    fn predict(&self, input: &[f64]) -> Vec<f64> {
        self.forward(input).expect("input width checked by caller")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyMode {
    Recursive,
    Direct,
    Mimo,
}

impl StrategyMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            StrategyMode::Recursive => "recursive",
            StrategyMode::Direct => "direct",
            StrategyMode::Mimo => "mimo",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "recursive" => Some(StrategyMode::Recursive),
            "direct" => Some(StrategyMode::Direct),
            "mimo" => Some(StrategyMode::Mimo),
            _ => None,
        }
    }

    /// Learner output width the mode requires for horizon `h`.
    pub fn learner_output_width(&self, horizon: usize) -> usize {
        match self {
            StrategyMode::Mimo => horizon,
            _ => 1,
        }
    }
}

impl std::fmt::Display for StrategyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn lag_tail(history: &[f64], lag: usize) -> Result<Vec<f64>> {
    if history.len() < lag {
        return Err(StrategyError::HistoryTooShort {
            required: lag,
            got: history.len(),
        });
    }
    Ok(history[history.len() - lag..].to_vec())
}

/// Iterate a one-step learner: the first step sees only observed lags,
/// later steps progressively replace observations with forecasts.
pub fn forecast_recursive_with(
    learner: &dyn Learner,
    history: &[f64],
    lag: usize,
    horizon: usize,
) -> Result<Vec<f64>> {
    if learner.output_width() != 1 {
        return Err(StrategyError::ContractViolation {
            expected: 1,
            got: learner.output_width(),
        });
    }
    let mut buffer = lag_tail(history, lag)?;
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let pred = learner.predict(&buffer)[0];
        out.push(pred);
        buffer.remove(0);
        buffer.push(pred);
    }
    Ok(out)
}

/// One independent learner per horizon; every learner consumes the same
/// observed lag vector and no forecast feeds any other.
pub fn forecast_direct_with(learners: &[&dyn Learner], history: &[f64], lag: usize) -> Result<Vec<f64>> {
    if learners.is_empty() {
        return Err(StrategyError::MissingLearner(1));
    }
    let input = lag_tail(history, lag)?;
    let mut out = Vec::with_capacity(learners.len());
    for (h, learner) in learners.iter().enumerate() {
        if learner.output_width() != 1 {
            return Err(StrategyError::ContractViolation {
                expected: 1,
                got: learner.output_width(),
            });
        }
        let _ = h;
        out.push(learner.predict(&input)[0]);
    }
    Ok(out)
}

/// Single multi-output invocation; learner slot k maps to horizon k+1
/// (nearest horizon first).
pub fn forecast_mimo_with(
    learner: &dyn Learner,
    history: &[f64],
    lag: usize,
    horizon: usize,
) -> Result<Vec<f64>> {
    if learner.output_width() != horizon {
        return Err(StrategyError::ContractViolation {
            expected: horizon,
            got: learner.output_width(),
        });
    }
    let input = lag_tail(history, lag)?;
    let out = learner.predict(&input);
    if out.len() != horizon {
        return Err(StrategyError::ContractViolation {
            expected: horizon,
            got: out.len(),
        });
    }
    Ok(out)
}

/// A trained multi-step forecaster: one network (Recursive, MIMO) or H
/// networks (Direct), plus the normalization fit on its training inputs.
#[derive(Debug, Clone)]
pub struct StrategyModel {
    pub mode: StrategyMode,
    pub lag: usize,
    pub horizon: usize,
    pub learners: Vec<TrainedNetwork>,
    pub scaler: Option<MinMaxScaler>,
}

/// Train a strategy on `series`: the series is min-max normalized (scaler
/// stored for inversion), windows are built per mode, and each learner is
/// trained by full-batch Adam. Direct learners use seeds `seed + h`.
pub fn fit_strategy(
    series: &TimeSeries,
    mode: StrategyMode,
    lag: usize,
    horizon: usize,
    spec: &NetworkSpec,
    seed: u64,
) -> Result<StrategyModel> {
    let expected_out = mode.learner_output_width(horizon);
    if spec.output_width != expected_out {
        return Err(StrategyError::SpecOutputWidth {
            mode,
            expected: expected_out,
            got: spec.output_width,
        });
    }
    if spec.input_width != lag {
        return Err(StrategyError::SpecInputWidth {
            expected: lag,
            got: spec.input_width,
        });
    }
    let (normalized, scaler) = series.minmax_normalize()?;
    let learners = match mode {
        StrategyMode::Recursive => {
            let windows = normalized
                .make_windows(lag, WindowMode::Recursive)
                .map_err(StrategyError::WindowShortage)?;
            vec![TrainedNetwork::init(spec.clone(), seed)?.train(&windows)?]
        }
        StrategyMode::Direct => {
            let mut learners = Vec::with_capacity(horizon);
            for h in 1..=horizon {
                let windows = normalized
                    .make_windows(lag, WindowMode::Direct { offset: h })
                    .map_err(StrategyError::WindowShortage)?;
                learners.push(
                    TrainedNetwork::init(spec.clone(), seed + h as u64)?.train(&windows)?,
                );
            }
            learners
        }
        StrategyMode::Mimo => {
            let windows = normalized
                .make_windows(lag, WindowMode::Mimo { horizon })
                .map_err(StrategyError::WindowShortage)?;
            vec![TrainedNetwork::init(spec.clone(), seed)?.train(&windows)?]
        }
    };
    Ok(StrategyModel {
        mode,
        lag,
        horizon,
        learners,
        scaler: Some(scaler),
    })
}

impl StrategyModel {
    /// Forecast `horizon` steps from the raw-scale `history` tail.
    /// Recursive models accept any horizon; Direct and MIMO only the
    /// horizon they were trained for.
    pub fn forecast(&self, history: &[f64], horizon: usize) -> Result<Vec<f64>> {
        if self.mode != StrategyMode::Recursive && horizon != self.horizon {
            return Err(StrategyError::HorizonMismatch {
                mode: self.mode,
                trained: self.horizon,
                requested: horizon,
            });
        }
        let scaled: Vec<f64> = match &self.scaler {
            Some(s) => s.normalize_slice(history),
            None => history.to_vec(),
        };
        let out = match self.mode {
            StrategyMode::Recursive => {
                forecast_recursive_with(&self.learners[0], &scaled, self.lag, horizon)?
            }
            StrategyMode::Direct => {
                if self.learners.len() != self.horizon {
                    return Err(StrategyError::MissingLearner(self.learners.len() + 1));
                }
                let refs: Vec<&dyn Learner> =
                    self.learners.iter().map(|l| l as &dyn Learner).collect();
                forecast_direct_with(&refs, &scaled, self.lag)?
            }
            StrategyMode::Mimo => {
                forecast_mimo_with(&self.learners[0], &scaled, self.lag, horizon)?
            }
        };
        Ok(match &self.scaler {
            Some(s) => s.denormalize_slice(&out),
            None => out,
        })
    }

    pub fn to_record(&self) -> Record {
        let mut r = Record::new();
        r.push_str("kind", "strategy");
        r.push_str("mode", self.mode.as_str());
        r.push_u64("lag", self.lag as u64);
        r.push_u64("horizon", self.horizon as u64);
        r.push_u64("learners", self.learners.len() as u64);
        if let Some(s) = &self.scaler {
            r.push_f64_slice("scaler", &[s.lo, s.hi]);
        }
        for (i, learner) in self.learners.iter().enumerate() {
            r.push_nested(&format!("learner.{i}"), &learner.to_record());
        }
        r
    }

    pub fn from_record(r: &Record) -> Result<StrategyModel> {
        let mode = StrategyMode::parse(r.get("mode")?)
            .ok_or_else(|| RecordError::MissingKey("mode".into()))?;
        let count = r.get_u64("learners")? as usize;
        let mut learners = Vec::with_capacity(count);
        for i in 0..count {
            learners.push(TrainedNetwork::from_record(&r.nested(&format!("learner.{i}")))?);
        }
        let scaler = match r.get_opt("scaler") {
            Some(_) => {
                let pair = r.get_f64_slice("scaler")?;
                Some(MinMaxScaler {
                    lo: pair[0],
                    hi: pair[1],
                })
            }
            None => None,
        };
        Ok(StrategyModel {
            mode,
            lag: r.get_u64("lag")? as usize,
            horizon: r.get_u64("horizon")? as usize,
            learners,
            scaler,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arima::{self, ArimaOrder};
    use crate::neural::{Activation, NetworkSpec, TrainedNetwork};
    use crate::timeseries::SupervisedDataset;
    use approx::assert_relative_eq;

    /// Linear AR map: c + sum phi_i * lag_i, newest lag first in `coeffs`.
    struct LinearAr {
        coeffs: Vec<f64>,
        intercept: f64,
    }

    impl Learner for LinearAr {
        fn output_width(&self) -> usize {
            1
        }

        fn predict(&self, input: &[f64]) -> Vec<f64> {
            let mut y = self.intercept;
            for (i, phi) in self.coeffs.iter().enumerate() {
                y += phi * input[input.len() - 1 - i];
            }
            vec![y]
        }
    }

    struct Fixed(Vec<f64>);

    impl Learner for Fixed {
        fn output_width(&self) -> usize {
            self.0.len()
        }

        fn predict(&self, _input: &[f64]) -> Vec<f64> {
            self.0.clone()
        }
    }

    #[test]
    fn recursive_identity_learner_is_a_fixed_point() {
        let identity = LinearAr {
            coeffs: vec![1.0],
            intercept: 0.0,
        };
        let out = forecast_recursive_with(&identity, &[3.0, 5.0, 7.0], 1, 3).unwrap();
        assert_eq!(out, vec![7.0, 7.0, 7.0]);
    }

    #[test]
    fn recursive_sum_of_lags_is_fibonacci() {
        let sum2 = LinearAr {
            coeffs: vec![1.0, 1.0],
            intercept: 0.0,
        };
        let out = forecast_recursive_with(&sum2, &[1.0, 2.0], 2, 3).unwrap();
        assert_eq!(out, vec![3.0, 5.0, 8.0]);
    }

    #[test]
    fn recursive_matches_arima_closed_form() {
        let z = arima::simulate_arma(&[0.5], &[], 0.0, 1.0, 80, 17);
        let s = TimeSeries::new(z.clone(), 0).unwrap();
        let model = arima::fit(&s, ArimaOrder::new(1, 0, 0).unwrap()).unwrap();
        let learner = LinearAr {
            coeffs: model.ar_coeffs.clone(),
            intercept: model.intercept,
        };
        let ours = forecast_recursive_with(&learner, &z, 1, 12).unwrap();
        let theirs = model.forecast(12).unwrap();
        for (a, b) in ours.iter().zip(&theirs) {
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn direct_shared_learner_repeats_one_step() {
        let learner = LinearAr {
            coeffs: vec![0.5],
            intercept: 1.0,
        };
        let refs: Vec<&dyn Learner> = vec![&learner, &learner, &learner];
        let out = forecast_direct_with(&refs, &[2.0, 4.0], 1).unwrap();
        assert_eq!(out, vec![3.0, 3.0, 3.0]);
    }

    #[test]
    fn direct_indexing_check() {
        let fixtures: Vec<Fixed> = (1..=4).map(|h| Fixed(vec![h as f64])).collect();
        let refs: Vec<&dyn Learner> = fixtures.iter().map(|f| f as &dyn Learner).collect();
        let out = forecast_direct_with(&refs, &[0.0, 0.0], 2).unwrap();
        assert_eq!(out, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn direct_ignores_history_older_than_lag() {
        let learner = LinearAr {
            coeffs: vec![0.7, -0.2],
            intercept: 0.3,
        };
        let refs: Vec<&dyn Learner> = vec![&learner, &learner];
        let a = forecast_direct_with(&refs, &[9.0, 9.0, 1.0, 2.0], 2).unwrap();
        let b = forecast_direct_with(&refs, &[-50.0, 123.0, 1.0, 2.0], 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mimo_width_contract_enforced() {
        let learner = Fixed(vec![1.0, 2.0, 3.0]);
        assert!(forecast_mimo_with(&learner, &[0.0, 0.0], 2, 3).is_ok());
        assert!(matches!(
            forecast_mimo_with(&learner, &[0.0, 0.0], 2, 4),
            Err(StrategyError::ContractViolation {
                expected: 4,
                got: 3
            })
        ));
    }

    #[test]
    fn mimo_slot_order_is_nearest_first() {
        let learner = Fixed(vec![10.0, 20.0, 30.0]);
        let out = forecast_mimo_with(&learner, &[0.0, 0.0], 2, 3).unwrap();
        assert_eq!(out, vec![10.0, 20.0, 30.0]);
        // a permuted head would surface here as a reordered forecast
        let permuted = Fixed(vec![30.0, 20.0, 10.0]);
        let bad = forecast_mimo_with(&permuted, &[0.0, 0.0], 2, 3).unwrap();
        assert_ne!(out, bad);
    }

    #[test]
    fn zero_weight_mimo_network_repeats_denormalized_bias() {
        let spec = NetworkSpec::mlp(2, 4, 3, Activation::Relu, 1e-2).unwrap();
        let mut net = TrainedNetwork::init(spec, 0).unwrap();
        net.params.iter_mut().for_each(|p| *p = 0.0);
        let bias_start = net.params.len() - 4;
        for k in 0..4 {
            net.params[bias_start + k] = 0.5;
        }
        let model = StrategyModel {
            mode: StrategyMode::Mimo,
            lag: 2,
            horizon: 4,
            learners: vec![net],
            scaler: Some(MinMaxScaler { lo: 2.0, hi: 6.0 }),
        };
        let out = model.forecast(&[3.0, 4.0], 4).unwrap();
        for v in out {
            assert_relative_eq!(v, 4.0, epsilon = 1e-12); // 2 + 0.5 * (6 - 2)
        }
    }

    #[test]
    fn mimo_memorizes_a_single_window() {
        let spec = NetworkSpec::mlp(2, 3, 8, Activation::Tanh, 5e-2).unwrap();
        let ds = SupervisedDataset {
            inputs: vec![vec![0.1, 0.9]; 16],
            targets: vec![vec![0.3, 0.6, 0.2]; 16],
            lag: 2,
            mode: crate::timeseries::WindowMode::Mimo { horizon: 3 },
        };
        let net = TrainedNetwork::init(spec, 1).unwrap().train(&ds).unwrap();
        let out = forecast_mimo_with(&net, &[0.1, 0.9], 2, 3).unwrap();
        assert!((out[0] - 0.3).abs() < 1e-3);
        assert!((out[1] - 0.6).abs() < 1e-3);
        assert!((out[2] - 0.2).abs() < 1e-3);
    }

    #[test]
    fn fit_strategy_window_counts() {
        let z = arima::simulate_arma(&[0.4], &[], 0.5, 0.3, 60, 23);
        let s = TimeSeries::new(z, 0).unwrap();
        let spec = NetworkSpec::mlp(2, 1, 3, Activation::Relu, 1e-2).unwrap();
        let (norm, _) = s.minmax_normalize().unwrap();
        assert_eq!(
            norm.make_windows(2, WindowMode::Recursive).unwrap().len(),
            58
        );
        assert_eq!(
            norm.make_windows(2, WindowMode::Direct { offset: 10 }).unwrap().len(),
            49
        );
        assert_eq!(
            norm.make_windows(2, WindowMode::Mimo { horizon: 10 }).unwrap().len(),
            49
        );
        let model = fit_strategy(&s, StrategyMode::Recursive, 2, 10, &spec, 0).unwrap();
        assert_eq!(model.learners.len(), 1);
        let direct = fit_strategy(&s, StrategyMode::Direct, 2, 3, &spec, 0).unwrap();
        assert_eq!(direct.learners.len(), 3);
        // decorrelated but reproducible per-horizon seeds
        assert_eq!(direct.learners[0].seed, 1);
        assert_eq!(direct.learners[2].seed, 3);
    }

    #[test]
    fn all_modes_agree_for_unit_horizon_shared_learner() {
        let learner = LinearAr {
            coeffs: vec![0.6, 0.1],
            intercept: 0.2,
        };
        let history = [1.5, -0.4, 0.9];
        let rec = forecast_recursive_with(&learner, &history, 2, 1).unwrap();
        let refs: Vec<&dyn Learner> = vec![&learner];
        let dir = forecast_direct_with(&refs, &history, 2).unwrap();
        let mim = forecast_mimo_with(&learner, &history, 2, 1).unwrap();
        assert_eq!(rec, dir);
        assert_eq!(rec, mim);
    }

    #[test]
    fn internal_scaling_matches_external_prescaling() {
        let z = arima::simulate_arma(&[0.6], &[], 1.0, 0.4, 70, 31);
        let s = TimeSeries::new(z.clone(), 0).unwrap();
        let spec = NetworkSpec::mlp(2, 1, 5, Activation::Tanh, 1e-2).unwrap();
        let internal = fit_strategy(&s, StrategyMode::Recursive, 2, 5, &spec, 3).unwrap();
        let with_scaler = internal.forecast(&z, 5).unwrap();

        let (pre, scaler) = s.minmax_normalize().unwrap();
        let mut external = fit_strategy(&pre, StrategyMode::Recursive, 2, 5, &spec, 3).unwrap();
        // pre-scaled input: the inner minmax is an identity map
        external.scaler = None;
        let scaled_fc = external.forecast(&scaler.normalize_slice(&z), 5).unwrap();
        let manual = scaler.denormalize_slice(&scaled_fc);
        for (a, b) in with_scaler.iter().zip(&manual) {
            assert_relative_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn direct_and_mimo_refuse_foreign_horizons() {
        let z = arima::simulate_arma(&[0.4], &[], 0.0, 0.5, 50, 2);
        let s = TimeSeries::new(z.clone(), 0).unwrap();
        let spec = NetworkSpec::mlp(2, 1, 3, Activation::Relu, 1e-2).unwrap();
        let direct = fit_strategy(&s, StrategyMode::Direct, 2, 4, &spec, 0).unwrap();
        assert!(matches!(
            direct.forecast(&z, 5),
            Err(StrategyError::HorizonMismatch { .. })
        ));
    }
}
