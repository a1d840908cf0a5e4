//! Accuracy metrics (MAPE, RMSE, percentage difference), fractional model
//! ranking, and the three-stage benchmark protocol with CSV / plain-text
//! report emission.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arima;
use crate::demographic::{self, Sex, SurfaceParams};
use crate::hpo::{self, SearchSpace};
use crate::hybrid::{self, LinearSpec};
use crate::neural::{Activation, Family, NetworkSpec};
use crate::strategy::{self, StrategyMode};
use crate::timeseries::TimeSeries;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: actual has {actual}, forecast has {forecast}")]
    LengthMismatch { actual: usize, forecast: usize },
    #[error("empty input")]
    Empty,
    #[error("actual value at index {0} is zero; MAPE undefined")]
    ZeroActual(usize),
    #[error("alternative error is zero; percentage difference undefined")]
    ZeroAlternative,
    #[error("MAPE grid is empty")]
    EmptyGrid,
    #[error("no dataset has a complete set of finite cells; ranks undefined")]
    NoCompleteDataset,
    #[error("ragged MAPE grid: row {row} has {got} cells, expected {expected}")]
    RaggedGrid { row: usize, got: usize, expected: usize },
    #[error("benchmark config: {0}")]
    Config(String),
}

type Result<T> = std::result::Result<T, EvalError>;

fn check_pair(actual: &[f64], forecast: &[f64]) -> Result<()> {
    if actual.len() != forecast.len() {
        return Err(EvalError::LengthMismatch {
            actual: actual.len(),
            forecast: forecast.len(),
        });
    }
    if actual.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// Mean absolute percentage error: 100 · mean(|a − f| / |a|). The caller
/// chooses the scale; the mortality pipeline passes log rates by default.
pub fn mape(actual: &[f64], forecast: &[f64]) -> Result<f64> {
    check_pair(actual, forecast)?;
    let mut acc = 0.0;
    for (i, (a, f)) in actual.iter().zip(forecast).enumerate() {
        if *a == 0.0 {
            return Err(EvalError::ZeroActual(i));
        }
        acc += ((a - f) / a).abs();
    }
    Ok(100.0 * acc / actual.len() as f64)
}

/// Root mean squared error.
pub fn rmse(actual: &[f64], forecast: &[f64]) -> Result<f64> {
    check_pair(actual, forecast)?;
    let sse: f64 = actual
        .iter()
        .zip(forecast)
        .map(|(a, f)| (a - f) * (a - f))
        .sum();
    Ok((sse / actual.len() as f64).sqrt())
}

/// Relative improvement of the reference over the alternative:
/// 100 · (Err_a − Err_r) / Err_a. Positive means the reference is better.
pub fn percentage_difference(error_alternative: f64, error_reference: f64) -> Result<f64> {
    if error_alternative == 0.0 {
        return Err(EvalError::ZeroAlternative);
    }
    Ok(100.0 * (error_alternative - error_reference) / error_alternative)
}

/// Fractional ranks of one dataset column: 1 = lowest value, ties averaged.
/// The ranks of an M-vector always sum to M(M+1)/2.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let m = values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; m];
    let mut i = 0;
    while i < m {
        let mut j = i;
        while j + 1 < m && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j share the average of ranks i+1..=j+1
        let shared = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Result of ranking a models × datasets MAPE grid.
#[derive(Debug, Clone)]
pub struct RankResult {
    /// Mean rank per model (same order as the grid rows).
    pub mean_ranks: Vec<f64>,
    /// Dataset columns the ranks were computed on (all models finite there).
    pub used_datasets: Vec<usize>,
    /// True when some columns were dropped for non-finite cells.
    pub dropped_incomplete: bool,
}

/// Mean fractional rank per model over the datasets where every model has a
/// finite MAPE. Rows are models, columns are datasets.
pub fn rank_models(mape_grid: &[Vec<f64>]) -> Result<RankResult> {
    let m = mape_grid.len();
    if m == 0 {
        return Err(EvalError::EmptyGrid);
    }
    let n = mape_grid[0].len();
    for (row, r) in mape_grid.iter().enumerate() {
        if r.len() != n {
            return Err(EvalError::RaggedGrid {
                row,
                got: r.len(),
                expected: n,
            });
        }
    }
    let used_datasets: Vec<usize> = (0..n)
        .filter(|&j| mape_grid.iter().all(|row| row[j].is_finite()))
        .collect();
    if used_datasets.is_empty() {
        return Err(EvalError::NoCompleteDataset);
    }
    let mut mean_ranks = vec![0.0; m];
    for &j in &used_datasets {
        let col: Vec<f64> = mape_grid.iter().map(|row| row[j]).collect();
        for (i, r) in fractional_ranks(&col).into_iter().enumerate() {
            mean_ranks[i] += r;
        }
    }
    for r in &mut mean_ranks {
        *r /= used_datasets.len() as f64;
    }
    Ok(RankResult {
        mean_ranks,
        dropped_incomplete: used_datasets.len() < n,
        used_datasets,
    })
}

/// Percent of datasets each strategy wins. Rows are datasets, columns are
/// strategies; a tie for the minimum splits the win equally, so the
/// frequencies always sum to 100.
pub fn win_frequencies(grid: &[Vec<f64>]) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let k = grid[0].len();
    let mut wins = vec![0.0; k];
    let mut counted = 0usize;
    for (row_idx, row) in grid.iter().enumerate() {
        if row.len() != k {
            return Err(EvalError::RaggedGrid {
                row: row_idx,
                got: row.len(),
                expected: k,
            });
        }
        if !row.iter().all(|v| v.is_finite()) {
            continue;
        }
        let best = row.iter().cloned().fold(f64::MAX, f64::min);
        let winners: Vec<usize> = (0..k).filter(|&j| row[j] == best).collect();
        for &j in &winners {
            wins[j] += 1.0 / winners.len() as f64;
        }
        counted += 1;
    }
    if counted == 0 {
        return Err(EvalError::NoCompleteDataset);
    }
    Ok(wins.iter().map(|w| 100.0 * w / counted as f64).collect())
}

// ---------------------------------------------------------------------------
// Benchmark harness
// ---------------------------------------------------------------------------

/// Where one benchmark series comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// ARMA-generated series on an arbitrary scale.
    SyntheticSeries {
        name: String,
        length: usize,
        #[serde(default)]
        seed_offset: u64,
    },
    /// Log-mortality series extracted from a synthetic Lee-Carter surface.
    SyntheticSurface {
        name: String,
        years: usize,
        age: usize,
        sex: Sex,
        #[serde(default)]
        seed_offset: u64,
    },
    /// Log-mortality series from an HMD Mx_1x1 file on disk.
    HmdFile {
        name: String,
        path: String,
        age: usize,
        sex: Sex,
        #[serde(default)]
        min_year: Option<i32>,
    },
}

impl DatasetSpec {
    pub fn name(&self) -> &str {
        match self {
            DatasetSpec::SyntheticSeries { name, .. }
            | DatasetSpec::SyntheticSurface { name, .. }
            | DatasetSpec::HmdFile { name, .. } => name,
        }
    }
}

/// Declarative benchmark run: datasets, the hybrid families and strategies
/// to race, baselines for the final stage, split sizes, and the HPO budget.
/// `hpo_trials = 0` skips tuning and uses `default_spec` everywhere.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub datasets: Vec<DatasetSpec>,
    pub families: Vec<Family>,
    pub strategies: Vec<StrategyMode>,
    /// Include the plain ARIMA baseline in stage 3.
    #[serde(default = "default_true")]
    pub include_arima: bool,
    /// Include single (non-hybrid) networks in stage 3.
    #[serde(default)]
    pub include_single_networks: bool,
    /// Include the Lee-Carter baseline on surface datasets.
    #[serde(default)]
    pub include_lee_carter: bool,
    pub horizon: usize,
    pub lag: usize,
    /// Validation window length used for HPO (taken from the end of the
    /// training region).
    pub validation_len: usize,
    pub hpo_trials: usize,
    pub hpo_seeds: usize,
    pub master_seed: u64,
    /// Score MAPE on raw rates instead of the log scale.
    #[serde(default)]
    pub raw_scale_mape: bool,
    #[serde(default = "default_max_p")]
    pub max_p: usize,
    #[serde(default = "default_max_d")]
    pub max_d: usize,
    #[serde(default = "default_max_q")]
    pub max_q: usize,
    /// Hidden width of the fallback network used when hpo_trials = 0.
    #[serde(default = "default_hidden")]
    pub default_hidden_units: usize,
    #[serde(default = "default_lr")]
    pub default_learning_rate: f64,
}

fn default_true() -> bool {
    true
}
fn default_max_p() -> usize {
    3
}
fn default_max_d() -> usize {
    1
}
fn default_max_q() -> usize {
    1
}
fn default_hidden() -> usize {
    8
}
fn default_lr() -> f64 {
    0.01
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(EvalError::Config("no datasets".into()));
        }
        if self.families.is_empty() {
            return Err(EvalError::Config("no model families".into()));
        }
        if self.strategies.is_empty() {
            return Err(EvalError::Config("no strategies".into()));
        }
        if self.horizon == 0 || self.lag == 0 {
            return Err(EvalError::Config("horizon and lag must be positive".into()));
        }
        if self.hpo_trials > 0 && self.hpo_seeds == 0 {
            return Err(EvalError::Config(
                "hpo_seeds must be positive when hpo_trials > 0".into(),
            ));
        }
        Ok(())
    }
}

/// One comparison table: rows are datasets, columns are labeled variants,
/// cells are MAPE (NaN marks a failed pipeline).
#[derive(Debug, Clone)]
pub struct StageTable {
    pub title: String,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub cells: Vec<Vec<f64>>,
}

impl StageTable {
    pub fn has_failures(&self) -> bool {
        self.cells.iter().flatten().any(|v| !v.is_finite())
    }
}

/// Stage-3 summary per model.
#[derive(Debug, Clone)]
pub struct ModelSummary {
    pub model: String,
    pub mean_mape: f64,
    pub std_mape: f64,
    pub mean_rank: f64,
    /// Percentage difference of this model's mean MAPE vs the best model's
    /// (positive: the best model improves on this one).
    pub pd_vs_best: f64,
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    /// Stage 1: one strategy-comparison table per hybrid family, plus the
    /// per-family winning strategy and win frequencies.
    pub stage1: Vec<StageTable>,
    pub stage1_win_frequencies: Vec<(String, Vec<f64>)>,
    pub winning_strategy: Vec<(String, StrategyMode)>,
    /// Stage 2: hybrids under their winning strategies.
    pub stage2: StageTable,
    /// Stage 3: best hybrid vs baselines.
    pub stage3: StageTable,
    pub stage3_summary: Vec<ModelSummary>,
    pub best_model: String,
}

impl BenchmarkReport {
    pub fn has_failures(&self) -> bool {
        self.stage1.iter().any(StageTable::has_failures)
            || self.stage2.has_failures()
            || self.stage3.has_failures()
    }

    /// Long-form CSV: stage, table, dataset, variant, mape. Failed cells
    /// read "failed".
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,table,dataset,variant,mape\n");
        let mut emit = |stage: &str, t: &StageTable| {
            for (i, row) in t.row_labels.iter().enumerate() {
                for (j, col) in t.col_labels.iter().enumerate() {
                    let v = t.cells[i][j];
                    let cell = if v.is_finite() {
                        format!("{v:.6}")
                    } else {
                        "failed".to_string()
                    };
                    out.push_str(&format!("{stage},{},{row},{col},{cell}\n", t.title));
                }
            }
        };
        for t in &self.stage1 {
            emit("1", t);
        }
        emit("2", &self.stage2);
        emit("3", &self.stage3);
        for s in &self.stage3_summary {
            out.push_str(&format!(
                "3,summary,mean,{},{:.6}\n3,summary,std,{},{:.6}\n3,summary,mean_rank,{},{:.4}\n3,summary,pd_vs_best,{},{:.4}\n",
                s.model, s.mean_mape, s.model, s.std_mape, s.model, s.mean_rank, s.model, s.pd_vs_best
            ));
        }
        out
    }

    /// Aligned plain-text rendering of every table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.stage1 {
            out.push_str(&render_table(t));
            out.push('\n');
        }
        for (family, freqs) in &self.stage1_win_frequencies {
            out.push_str(&format!("win frequency [{family}]:"));
            for f in freqs {
                out.push_str(&format!(" {f:.2}%"));
            }
            out.push('\n');
        }
        out.push('\n');
        out.push_str(&render_table(&self.stage2));
        out.push('\n');
        out.push_str(&render_table(&self.stage3));
        out.push('\n');
        out.push_str(&format!(
            "{:<24}{:>12}{:>12}{:>12}{:>12}\n",
            "model", "mean", "std", "mean rank", "PD vs best"
        ));
        for s in &self.stage3_summary {
            out.push_str(&format!(
                "{:<24}{:>12.4}{:>12.4}{:>12.2}{:>12.2}\n",
                s.model, s.mean_mape, s.std_mape, s.mean_rank, s.pd_vs_best
            ));
        }
        out.push_str(&format!("\nbest model: {}\n", self.best_model));
        out
    }
}

fn render_table(t: &StageTable) -> String {
    let mut out = format!("== {} ==\n", t.title);
    out.push_str(&format!("{:<20}", "dataset"));
    for c in &t.col_labels {
        out.push_str(&format!("{c:>18}"));
    }
    out.push('\n');
    for (i, r) in t.row_labels.iter().enumerate() {
        out.push_str(&format!("{r:<20}"));
        for v in &t.cells[i] {
            if v.is_finite() {
                out.push_str(&format!("{v:>18.4}"));
            } else {
                out.push_str(&format!("{:>18}", "failed"));
            }
        }
        out.push('\n');
    }
    out
}

/// Train / validation / test views of one prepared series (log scale for
/// mortality datasets).
struct PreparedDataset {
    name: String,
    series: TimeSeries,
    test: Vec<f64>,
    /// Raw-rate test values when the series is log-mortality.
    raw_test: Option<Vec<f64>>,
    /// Dataset-level sub-seed, kept so surface-based baselines can rebuild
    /// the same synthetic surface.
    seed_hint: Option<u64>,
}

fn prepare_dataset(spec: &DatasetSpec, config: &BenchmarkConfig, index: usize) -> Result<PreparedDataset> {
    let seed = dataset_seed(config.master_seed, index);
    let (series, is_log) = match spec {
        DatasetSpec::SyntheticSeries {
            length, seed_offset, ..
        } => {
            let values = arima::simulate_arma(
                &[1.2, -0.5],
                &[],
                0.4,
                1.0,
                *length,
                seed + seed_offset,
            );
            (TimeSeries::new(values, 0).map_err(cfg_err)?, false)
        }
        DatasetSpec::SyntheticSurface {
            years,
            age,
            sex,
            seed_offset,
            ..
        } => {
            let params = SurfaceParams::default_for(*years);
            let surface = demographic::synthesize_surface(&params, seed + seed_offset)
                .map_err(cfg_err)?;
            let raw = demographic::extract_series(&surface, *age, *sex).map_err(cfg_err)?;
            (raw.log_transform().map_err(cfg_err)?, true)
        }
        DatasetSpec::HmdFile {
            path,
            age,
            sex,
            min_year,
            ..
        } => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| EvalError::Config(format!("{path}: {e}")))?;
            let surface = demographic::parse_surface(&text, *min_year).map_err(cfg_err)?;
            let raw = demographic::extract_series(&surface, *age, *sex).map_err(cfg_err)?;
            (raw.log_transform().map_err(cfg_err)?, true)
        }
    };
    let n = series.len();
    if n <= config.horizon + config.validation_len + config.lag + 4 {
        return Err(EvalError::Config(format!(
            "dataset {} too short ({n} points) for horizon {} + validation {}",
            spec.name(),
            config.horizon,
            config.validation_len
        )));
    }
    let split = n - config.horizon;
    let values = series.values();
    let test = values[split..].to_vec();
    let raw_test = is_log.then(|| test.iter().map(|v| v.exp()).collect());
    let train = TimeSeries::new(values[..split].to_vec(), series.start_index()).map_err(cfg_err)?;
    Ok(PreparedDataset {
        name: spec.name().to_string(),
        series: train,
        test,
        raw_test,
        seed_hint: None,
    })
}

fn cfg_err<E: std::fmt::Display>(e: E) -> EvalError {
    EvalError::Config(e.to_string())
}

/// Sub-seed derivation, documented so runs are replayable: each dataset gets
/// `master_seed + 1000·(dataset index + 1)` and each cell within it adds
/// `100·variant index`.
fn dataset_seed(master: u64, dataset_index: usize) -> u64 {
    master + 1000 * (dataset_index as u64 + 1)
}

fn cell_seed(master: u64, dataset_index: usize, variant_index: usize) -> u64 {
    dataset_seed(master, dataset_index) + 100 * variant_index as u64
}

/// Pick a network spec for one cell: run HPO on the train/validation split
/// when a budget is configured, otherwise use the configured default.
fn choose_spec(
    config: &BenchmarkConfig,
    data: &PreparedDataset,
    family: Family,
    mode: StrategyMode,
    linear: Option<LinearSpec>,
    seed: u64,
) -> Option<NetworkSpec> {
    let output_width = mode.learner_output_width(config.horizon);
    if config.hpo_trials == 0 {
        let spec = match family {
            Family::Mlp => NetworkSpec::mlp(
                config.lag,
                output_width,
                config.default_hidden_units,
                Activation::Tanh,
                config.default_learning_rate,
            ),
            Family::Lstm => NetworkSpec::lstm(
                config.lag,
                output_width,
                config.default_hidden_units,
                config.default_learning_rate,
            ),
            Family::Nbeats => NetworkSpec::nbeats(
                config.lag,
                output_width,
                config.default_hidden_units,
                2,
                config.default_learning_rate,
            ),
        };
        return spec.ok();
    }
    let values = data.series.values();
    let split = values.len() - config.validation_len;
    let train = TimeSeries::new(values[..split].to_vec(), data.series.start_index()).ok()?;
    let val = &values[split..];
    // Validation forecasts use the validation window as the horizon so
    // Direct/MIMO learners are trained for the width they must produce.
    let val_mode = mode;
    let space = SearchSpace::new(family, config.lag, val_mode.learner_output_width(val.len()));
    let objective = hpo::validation_objective(&train, val, val_mode, config.lag, linear);
    let (best, _history) =
        hpo::optimize(objective, &space, config.hpo_trials, config.hpo_seeds, seed).ok()?;
    // Re-shape the tuned spec for the test horizon's output width.
    let tuned = match family {
        Family::Mlp => NetworkSpec::mlp(
            config.lag,
            output_width,
            best.hidden_units,
            best.activation,
            best.learning_rate,
        ),
        Family::Lstm => {
            NetworkSpec::lstm(config.lag, output_width, best.hidden_units, best.learning_rate)
        }
        Family::Nbeats => NetworkSpec::nbeats(
            config.lag,
            output_width,
            best.hidden_units,
            best.n_hidden_layers,
            best.learning_rate,
        ),
    };
    tuned.ok()
}

fn score(config: &BenchmarkConfig, data: &PreparedDataset, forecast: &[f64]) -> f64 {
    let result = match (&data.raw_test, config.raw_scale_mape) {
        (Some(raw), true) => {
            let raw_fc: Vec<f64> = forecast.iter().map(|v| v.exp()).collect();
            mape(raw, &raw_fc)
        }
        _ => mape(&data.test, forecast),
    };
    result.unwrap_or(f64::NAN)
}

/// One grid cell: fit the named variant on the training series, forecast the
/// test horizon, return MAPE. Failures become NaN sentinels.
fn eval_hybrid_cell(
    config: &BenchmarkConfig,
    data: &PreparedDataset,
    family: Family,
    mode: StrategyMode,
    seed: u64,
) -> f64 {
    let linear = LinearSpec::Auto {
        max_p: config.max_p,
        max_d: config.max_d,
        max_q: config.max_q,
    };
    let spec = match choose_spec(config, data, family, mode, Some(linear), seed) {
        Some(s) => s,
        None => return f64::NAN,
    };
    let forecast = hybrid::fit_hybrid(
        &data.series,
        linear,
        mode,
        config.lag,
        config.horizon,
        &spec,
        seed,
    )
    .and_then(|m| m.forecast(config.horizon));
    match forecast {
        Ok(fc) => score(config, data, &fc),
        Err(_) => f64::NAN,
    }
}

fn eval_single_network_cell(
    config: &BenchmarkConfig,
    data: &PreparedDataset,
    family: Family,
    mode: StrategyMode,
    seed: u64,
) -> f64 {
    let spec = match choose_spec(config, data, family, mode, None, seed) {
        Some(s) => s,
        None => return f64::NAN,
    };
    let forecast = strategy::fit_strategy(
        &data.series,
        mode,
        config.lag,
        config.horizon,
        &spec,
        seed,
    )
    .and_then(|m| m.forecast(data.series.values(), config.horizon));
    match forecast {
        Ok(fc) => score(config, data, &fc),
        Err(_) => f64::NAN,
    }
}

fn eval_arima_cell(config: &BenchmarkConfig, data: &PreparedDataset) -> f64 {
    let forecast = arima::select_order(&data.series, config.max_p, config.max_d, config.max_q)
        .and_then(|order| arima::fit(&data.series, order))
        .and_then(|m| m.forecast(config.horizon));
    match forecast {
        Ok(fc) => score(config, data, &fc),
        Err(_) => f64::NAN,
    }
}

fn eval_lee_carter_cell(config: &BenchmarkConfig, spec: &DatasetSpec, data: &PreparedDataset) -> f64 {
    // Rebuild the training surface and fit Lee-Carter on the same window the
    // univariate models saw.
    let (surface, age, sex) = match spec {
        DatasetSpec::SyntheticSurface {
            years,
            age,
            sex,
            seed_offset,
            ..
        } => {
            let params = SurfaceParams::default_for(*years);
            let seed = match data.seed_hint {
                Some(s) => s + seed_offset,
                None => return f64::NAN,
            };
            match demographic::synthesize_surface(&params, seed) {
                Ok(s) => (s, *age, *sex),
                Err(_) => return f64::NAN,
            }
        }
        DatasetSpec::HmdFile {
            path,
            age,
            sex,
            min_year,
            ..
        } => {
            let text = match std::fs::read_to_string(path) {
                Ok(t) => t,
                Err(_) => return f64::NAN,
            };
            match demographic::parse_surface(&text, *min_year) {
                Ok(s) => (s, *age, *sex),
                Err(_) => return f64::NAN,
            }
        }
        DatasetSpec::SyntheticSeries { .. } => return f64::NAN,
    };
    let train_years = surface.years().len() - config.horizon;
    let train_surface = match surface.truncate_years(train_years) {
        Ok(s) => s,
        Err(_) => return f64::NAN,
    };
    let params = match demographic::fit_lee_carter(&train_surface, sex) {
        Ok(p) => p,
        Err(_) => return f64::NAN,
    };
    let curves = match demographic::forecast_lee_carter(&params, config.horizon) {
        Ok(c) => c,
        Err(_) => return f64::NAN,
    };
    let forecast: Vec<f64> = curves.iter().map(|c| c[age]).collect();
    score(config, data, &forecast)
}

/// Evaluate a full column of (dataset, variant) cells in parallel,
/// preserving grid order.
fn eval_grid<F>(rows: usize, cols: usize, f: F) -> Vec<Vec<f64>>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let flat: Vec<f64> = (0..rows * cols)
        .into_par_iter()
        .map(|idx| f(idx / cols, idx % cols))
        .collect();
    flat.chunks(cols).map(|c| c.to_vec()).collect()
}

/// Three-stage protocol: (1) race strategies within each hybrid family,
/// (2) race hybrid families under their winning strategies, (3) pit the
/// best hybrid against the configured baselines with mean / std / rank /
/// percentage-difference summaries. Deterministic under `master_seed`.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    config.validate()?;
    let datasets: Vec<PreparedDataset> = config
        .datasets
        .iter()
        .enumerate()
        .map(|(i, d)| {
            prepare_dataset(d, config, i).map(|mut p| {
                p.seed_hint = Some(dataset_seed(config.master_seed, i));
                p
            })
        })
        .collect::<Result<_>>()?;
    let row_labels: Vec<String> = datasets.iter().map(|d| d.name.clone()).collect();

    // Stage 1: strategies within each family.
    let mut stage1 = Vec::new();
    let mut stage1_win_frequencies = Vec::new();
    let mut winning_strategy = Vec::new();
    for (fi, &family) in config.families.iter().enumerate() {
        let cells = eval_grid(datasets.len(), config.strategies.len(), |di, si| {
            eval_hybrid_cell(
                config,
                &datasets[di],
                family,
                config.strategies[si],
                cell_seed(config.master_seed, di, fi * config.strategies.len() + si),
            )
        });
        let freqs = win_frequencies(&cells).unwrap_or_else(|_| vec![f64::NAN; config.strategies.len()]);
        let winner = freqs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(j, _)| config.strategies[j])
            .unwrap_or(config.strategies[0]);
        stage1.push(StageTable {
            title: format!("stage1-{}", family.as_str()),
            row_labels: row_labels.clone(),
            col_labels: config.strategies.iter().map(|s| s.as_str().to_string()).collect(),
            cells,
        });
        stage1_win_frequencies.push((family.as_str().to_string(), freqs));
        winning_strategy.push((family.as_str().to_string(), winner));
    }

    // Stage 2: hybrid families head-to-head under their winning strategies.
    let variant_base = config.families.len() * config.strategies.len();
    let stage2_cells = eval_grid(datasets.len(), config.families.len(), |di, fi| {
        eval_hybrid_cell(
            config,
            &datasets[di],
            config.families[fi],
            winning_strategy[fi].1,
            cell_seed(config.master_seed, di, variant_base + fi),
        )
    });
    let stage2 = StageTable {
        title: "stage2-hybrids".to_string(),
        row_labels: row_labels.clone(),
        col_labels: config
            .families
            .iter()
            .zip(&winning_strategy)
            .map(|(f, (_, s))| format!("hybrid-{}-{}", f.as_str(), s.as_str()))
            .collect(),
        cells: stage2_cells,
    };

    // Best hybrid = lowest mean rank in stage 2 (falls back to column 0).
    let best_family_idx = rank_models(&transpose(&stage2.cells))
        .ok()
        .and_then(|r| {
            r.mean_ranks
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
        })
        .unwrap_or(0);
    let best_family = config.families[best_family_idx];
    let best_mode = winning_strategy[best_family_idx].1;

    // Stage 3 model list.
    #[derive(Clone)]
    enum Variant {
        Hybrid(Family, StrategyMode),
        Arima,
        Single(Family, StrategyMode),
        LeeCarter,
    }
    let mut variants: Vec<(String, Variant)> = vec![(
        format!("hybrid-{}-{}", best_family.as_str(), best_mode.as_str()),
        Variant::Hybrid(best_family, best_mode),
    )];
    if config.include_arima {
        variants.push(("arima".to_string(), Variant::Arima));
    }
    if config.include_single_networks {
        for &f in &config.families {
            variants.push((
                format!("{}-{}", f.as_str(), best_mode.as_str()),
                Variant::Single(f, best_mode),
            ));
        }
    }
    if config.include_lee_carter {
        variants.push(("lee-carter".to_string(), Variant::LeeCarter));
    }

    let variant_base3 = variant_base + config.families.len();
    let stage3_cells = eval_grid(datasets.len(), variants.len(), |di, vi| {
        let seed = cell_seed(config.master_seed, di, variant_base3 + vi);
        match &variants[vi].1 {
            Variant::Hybrid(f, m) => eval_hybrid_cell(config, &datasets[di], *f, *m, seed),
            Variant::Arima => eval_arima_cell(config, &datasets[di]),
            Variant::Single(f, m) => {
                eval_single_network_cell(config, &datasets[di], *f, *m, seed)
            }
            Variant::LeeCarter => {
                eval_lee_carter_cell(config, &config.datasets[di], &datasets[di])
            }
        }
    });
    let stage3 = StageTable {
        title: "stage3-final".to_string(),
        row_labels,
        col_labels: variants.iter().map(|(n, _)| n.clone()).collect(),
        cells: stage3_cells,
    };

    // Summaries over the models-by-datasets orientation.
    let grid = transpose(&stage3.cells);
    let ranks = rank_models(&grid).ok();
    let mut stage3_summary = Vec::new();
    let means: Vec<f64> = grid
        .iter()
        .map(|row| {
            let finite: Vec<f64> = row.iter().cloned().filter(|v| v.is_finite()).collect();
            if finite.is_empty() {
                f64::NAN
            } else {
                finite.iter().sum::<f64>() / finite.len() as f64
            }
        })
        .collect();
    let best_mean = means.iter().cloned().filter(|v| v.is_finite()).fold(f64::MAX, f64::min);
    let best_model = means
        .iter()
        .position(|&m| m == best_mean)
        .map(|i| variants[i].0.clone())
        .unwrap_or_else(|| variants[0].0.clone());
    for (i, (name, _)) in variants.iter().enumerate() {
        let row = &grid[i];
        let finite: Vec<f64> = row.iter().cloned().filter(|v| v.is_finite()).collect();
        let mean = means[i];
        let std = if finite.len() > 1 {
            let var = finite.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (finite.len() - 1) as f64;
            var.sqrt()
        } else {
            0.0
        };
        let pd = if mean.is_finite() && mean > 0.0 {
            percentage_difference(mean, best_mean).unwrap_or(f64::NAN)
        } else {
            f64::NAN
        };
        stage3_summary.push(ModelSummary {
            model: name.clone(),
            mean_mape: mean,
            std_mape: std,
            mean_rank: ranks
                .as_ref()
                .map(|r| r.mean_ranks[i])
                .unwrap_or(f64::NAN),
            pd_vs_best: pd,
        });
    }

    Ok(BenchmarkReport {
        stage1,
        stage1_win_frequencies,
        winning_strategy,
        stage2,
        stage3,
        stage3_summary,
        best_model,
    })
}

fn transpose(cells: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if cells.is_empty() {
        return Vec::new();
    }
    let cols = cells[0].len();
    (0..cols)
        .map(|j| cells.iter().map(|row| row[j]).collect())
        .collect()
}
