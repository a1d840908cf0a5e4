//! Hybrid linear/nonlinear forecaster: an ARIMA model captures the linear
//! structure, a neural strategy is trained on the ARIMA residuals, and the
//! final forecast is the exact sum of the two component forecasts.

use thiserror::Error;

use crate::arima::{self, ArimaError, ArimaModel, ArimaOrder};
use crate::neural::NetworkSpec;
use crate::record::{Record, RecordError};
use crate::strategy::{fit_strategy, StrategyError, StrategyMode, StrategyModel};
use crate::timeseries::{TimeSeries, TimeSeriesError};

#[derive(Debug, Error)]
pub enum HybridError {
    #[error("linear stage: {0}")]
    Linear(#[source] ArimaError),
    #[error("residual stage: {0}")]
    Residual(#[source] TimeSeriesError),
    #[error("nonlinear stage: {0}")]
    Nonlinear(#[source] StrategyError),
    #[error(transparent)]
    Record(#[from] RecordError),
}

type Result<T> = std::result::Result<T, HybridError>;

/// How the linear component's order is chosen.
#[derive(Debug, Clone, Copy)]
pub enum LinearSpec {
    Order(ArimaOrder),
    Auto {
        max_p: usize,
        max_d: usize,
        max_q: usize,
    },
}

/// Fitted hybrid model. The stored residual series is the in-sample
/// `E_t = Z_t - fitted_t` on which the nonlinear component was trained;
/// its tail seeds the nonlinear forecast.
#[derive(Debug, Clone)]
pub struct HybridModel {
    pub linear: ArimaModel,
    pub residual_series: TimeSeries,
    pub nonlinear: StrategyModel,
}

pub fn fit_hybrid(
    series: &TimeSeries,
    linear: LinearSpec,
    mode: StrategyMode,
    lag: usize,
    horizon: usize,
    spec: &NetworkSpec,
    seed: u64,
) -> Result<HybridModel> {
    let order = match linear {
        LinearSpec::Order(o) => o,
        LinearSpec::Auto { max_p, max_d, max_q } => {
            arima::select_order(series, max_p, max_d, max_q).map_err(HybridError::Linear)?
        }
    };
    let model = arima::fit(series, order).map_err(HybridError::Linear)?;
    let residual_series = match model.residual_series(series) {
        Ok(r) => r,
        Err(ArimaError::Series(e)) => return Err(HybridError::Residual(e)),
        Err(e) => return Err(HybridError::Linear(e)),
    };
    let nonlinear = fit_strategy(&residual_series, mode, lag, horizon, spec, seed)
        .map_err(HybridError::Nonlinear)?;
    Ok(HybridModel {
        linear: model,
        residual_series,
        nonlinear,
    })
}

impl HybridModel {
    /// `Z_hat[h] = L_hat[h] + N_hat[h]`, with no other adjustment.
    pub fn forecast(&self, horizon: usize) -> Result<Vec<f64>> {
        let linear = self.linear.forecast(horizon).map_err(HybridError::Linear)?;
        let nonlinear = self
            .nonlinear
            .forecast(self.residual_series.values(), horizon)
            .map_err(HybridError::Nonlinear)?;
        Ok(linear
            .iter()
            .zip(&nonlinear)
            .map(|(l, n)| l + n)
            .collect())
    }

    pub fn to_record(&self) -> Record {
        let mut r = Record::new();
        r.push_str("kind", "hybrid");
        r.push_nested("linear", &self.linear.to_record());
        r.push_nested("nonlinear", &self.nonlinear.to_record());
        r.push_i64("residual.start", self.residual_series.start_index());
        r.push_f64_slice("residual.values", self.residual_series.values());
        r
    }

    pub fn from_record(r: &Record) -> Result<HybridModel> {
        let linear =
            ArimaModel::from_record(&r.nested("linear")).map_err(HybridError::Linear)?;
        let nonlinear =
            StrategyModel::from_record(&r.nested("nonlinear")).map_err(HybridError::Nonlinear)?;
        let residual_series = TimeSeries::new(
            r.get_f64_slice("residual.values")?,
            r.get_i64("residual.start")?,
        )
        .map_err(HybridError::Residual)?;
        Ok(HybridModel {
            linear,
            residual_series,
            nonlinear,
        })
    }
}
