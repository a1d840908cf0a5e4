//! Hybrid ARIMA + machine-learning forecasting for short annual time series.
//!
//! The crate decomposes a series into a linear component, fit by an ARIMA
//! model, and a nonlinear component, fit by a neural network on the ARIMA
//! residuals. Multi-step forecasts are produced through Recursive, Direct,
//! or MIMO strategies, hyperparameters are tuned by Bayesian optimization,
//! and a benchmark harness compares hybrids against single statistical,
//! neural, and demographic (Lee-Carter) baselines.

pub mod arima;
pub mod demographic;
pub mod evaluation;
pub mod hpo;
pub mod hybrid;
pub mod neural;
pub mod record;
pub mod strategy;
pub mod timeseries;

pub use arima::{ArimaModel, ArimaOrder};
pub use hybrid::HybridModel;
pub use neural::{Activation, Family, NetworkSpec, TrainedNetwork};
pub use strategy::{StrategyMode, StrategyModel};
pub use timeseries::{MinMaxScaler, SplitSpec, SupervisedDataset, TimeSeries, WindowMode};
