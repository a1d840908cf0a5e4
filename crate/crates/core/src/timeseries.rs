//! Core series representation, transforms, splitting, and supervised-window
//! construction shared by every model in the crate.
//!
//! Lag vectors are stored oldest-first, newest element last; all strategy
//! modes share this convention.

use std::fmt;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TimeSeriesError {
    #[error("series must be non-empty")]
    Empty,
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("log transform requires strictly positive values; value {value} at index {index}")]
    NonPositive { index: usize, value: f64 },
    #[error("cannot normalize a constant series (degenerate scale)")]
    DegenerateScale,
    #[error("series too short to split: required {required} points, available {available}")]
    SplitTooShort { required: usize, available: usize },
    #[error("split index {index} outside the series range [{start}, {end}]")]
    SplitIndexOutOfRange { index: i64, start: i64, end: i64 },
    #[error("validation fraction {0} must lie in (0, 1)")]
    BadValFraction(f64),
    #[error("series of length {length} too short for {mode} windows with lag order {lag}")]
    WindowTooShort {
        length: usize,
        lag: usize,
        mode: String,
    },
    #[error("lag order must be at least 1")]
    ZeroLag,
    #[error("difference order {order} must be smaller than series length {length}")]
    DifferenceTooShort { order: usize, length: usize },
    #[error("no transform to invert")]
    NothingToInvert,
    #[error("csv parse error at line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, TimeSeriesError>;

/// A transform applied to a series, recorded so it can be undone.
#[derive(Debug, Clone, PartialEq)]
pub enum Transform {
    Identity,
    NaturalLog,
    MinMax { lo: f64, hi: f64 },
    /// Differencing of the given order; `initial` holds the values consumed
    /// by each successive pass, needed to integrate back.
    Difference { order: usize, initial: Vec<Vec<f64>> },
}

/// Min-max scaler mapping an observed range onto [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinMaxScaler {
    pub lo: f64,
    pub hi: f64,
}

impl MinMaxScaler {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(TimeSeriesError::SplitTooShort {
                required: 2,
                available: values.len(),
            });
        }
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo <= 0.0 {
            return Err(TimeSeriesError::DegenerateScale);
        }
        Ok(Self { lo, hi })
    }

    #[inline]
    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.lo) / (self.hi - self.lo)
    }

    #[inline]
    pub fn denormalize(&self, y: f64) -> f64 {
        self.lo + y * (self.hi - self.lo)
    }

    pub fn normalize_slice(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.normalize(x)).collect()
    }

    pub fn denormalize_slice(&self, ys: &[f64]) -> Vec<f64> {
        ys.iter().map(|&y| self.denormalize(y)).collect()
    }
}

/// An ordered, regularly indexed real-valued series.
///
/// `start_index` is the integer time label of the first observation (a year
/// for annual data). Applied transforms are recorded so the original values
/// can be recovered exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: Vec<f64>,
    start_index: i64,
    transforms: Vec<Transform>,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>, start_index: i64) -> Result<Self> {
        if values.is_empty() {
            return Err(TimeSeriesError::Empty);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(TimeSeriesError::NonFinite { index });
        }
        Ok(Self {
            values,
            start_index,
            transforms: Vec::new(),
        })
    }

    fn with_transforms(
        values: Vec<f64>,
        start_index: i64,
        transforms: Vec<Transform>,
    ) -> Result<Self> {
        let mut s = Self::new(values, start_index)?;
        s.transforms = transforms;
        Ok(s)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn start_index(&self) -> i64 {
        self.start_index
    }

    /// Time label of the last observation.
    pub fn end_index(&self) -> i64 {
        self.start_index + self.values.len() as i64 - 1
    }

    pub fn transforms(&self) -> &[Transform] {
        &self.transforms
    }

    /// Natural-log transform. Every value must be strictly positive.
    pub fn log_transform(&self) -> Result<TimeSeries> {
        if let Some(index) = self.values.iter().position(|&v| v <= 0.0) {
            return Err(TimeSeriesError::NonPositive {
                index,
                value: self.values[index],
            });
        }
        let mut transforms = self.transforms.clone();
        transforms.push(Transform::NaturalLog);
        Self::with_transforms(
            self.values.iter().map(|v| v.ln()).collect(),
            self.start_index,
            transforms,
        )
    }

    /// Map the series affinely onto [0, 1], returning the scaler used.
    pub fn minmax_normalize(&self) -> Result<(TimeSeries, MinMaxScaler)> {
        let scaler = MinMaxScaler::fit(&self.values)?;
        let mut transforms = self.transforms.clone();
        transforms.push(Transform::MinMax {
            lo: scaler.lo,
            hi: scaler.hi,
        });
        let out = Self::with_transforms(
            scaler.normalize_slice(&self.values),
            self.start_index,
            transforms,
        )?;
        Ok((out, scaler))
    }

    /// Difference the series `order` times. Length shrinks by `order`.
    pub fn difference(&self, order: usize) -> Result<TimeSeries> {
        if order >= self.values.len() {
            return Err(TimeSeriesError::DifferenceTooShort {
                order,
                length: self.values.len(),
            });
        }
        if order == 0 {
            return Ok(self.clone());
        }
        let mut current = self.values.clone();
        let mut initial = Vec::with_capacity(order);
        for _ in 0..order {
            initial.push(vec![current[0]]);
            current = current.windows(2).map(|w| w[1] - w[0]).collect();
        }
        let mut transforms = self.transforms.clone();
        transforms.push(Transform::Difference { order, initial });
        Self::with_transforms(current, self.start_index + order as i64, transforms)
    }

    /// Undo the most recent transform, reproducing the prior values exactly.
    pub fn undo_last_transform(&self) -> Result<TimeSeries> {
        let (last, rest) = match self.transforms.split_last() {
            Some(pair) => pair,
            None => return Err(TimeSeriesError::NothingToInvert),
        };
        let (values, start_index) = match last {
            Transform::Identity => (self.values.clone(), self.start_index),
            Transform::NaturalLog => {
                (self.values.iter().map(|v| v.exp()).collect(), self.start_index)
            }
            Transform::MinMax { lo, hi } => {
                let scaler = MinMaxScaler { lo: *lo, hi: *hi };
                (scaler.denormalize_slice(&self.values), self.start_index)
            }
            Transform::Difference { order, initial } => {
                let mut current = self.values.clone();
                for pass in (0..*order).rev() {
                    current = integrate_once(&current, initial[pass][0]);
                }
                (current, self.start_index - *order as i64)
            }
        };
        Self::with_transforms(values, start_index, rest.to_vec())
    }

    /// Temporal split into (train, val, test) per the protocol: the test set
    /// is the `horizon` points after `train_end_index`, the validation set is
    /// the trailing `ceil(val_fraction * window)` points of the training
    /// window, and the training set is the remainder.
    pub fn split(&self, spec: &SplitSpec) -> Result<(TimeSeries, TimeSeries, TimeSeries)> {
        spec.validate()?;
        if spec.train_end_index < self.start_index || spec.train_end_index > self.end_index() {
            return Err(TimeSeriesError::SplitIndexOutOfRange {
                index: spec.train_end_index,
                start: self.start_index,
                end: self.end_index(),
            });
        }
        let window = (spec.train_end_index - self.start_index + 1) as usize;
        let required = window + spec.horizon;
        if self.values.len() < required {
            return Err(TimeSeriesError::SplitTooShort {
                required,
                available: self.values.len(),
            });
        }
        let val_len = (spec.val_fraction * window as f64).ceil() as usize;
        if val_len >= window {
            return Err(TimeSeriesError::SplitTooShort {
                required: val_len + 1,
                available: window,
            });
        }
        let train_len = window - val_len;
        let train = Self::with_transforms(
            self.values[..train_len].to_vec(),
            self.start_index,
            self.transforms.clone(),
        )?;
        let val = Self::with_transforms(
            self.values[train_len..window].to_vec(),
            self.start_index + train_len as i64,
            self.transforms.clone(),
        )?;
        let test = Self::with_transforms(
            self.values[window..window + spec.horizon].to_vec(),
            self.start_index + window as i64,
            self.transforms.clone(),
        )?;
        Ok((train, val, test))
    }

    /// Build supervised (lag-vector, target) pairs for the requested strategy
    /// mode. Inputs are oldest-first; MIMO targets are nearest-horizon-first.
    pub fn make_windows(&self, lag: usize, mode: WindowMode) -> Result<SupervisedDataset> {
        if lag == 0 {
            return Err(TimeSeriesError::ZeroLag);
        }
        let n = self.values.len();
        let needed = match mode {
            WindowMode::Recursive => lag + 1,
            WindowMode::Direct { offset } => lag + offset,
            WindowMode::Mimo { horizon } => lag + horizon,
        };
        if n < needed {
            return Err(TimeSeriesError::WindowTooShort {
                length: n,
                lag,
                mode: mode.to_string(),
            });
        }
        let z = &self.values;
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        match mode {
            WindowMode::Recursive => {
                for t in lag..n {
                    inputs.push(z[t - lag..t].to_vec());
                    targets.push(vec![z[t]]);
                }
            }
            WindowMode::Direct { offset } => {
                for t in lag..=n - offset {
                    inputs.push(z[t - lag..t].to_vec());
                    targets.push(vec![z[t + offset - 1]]);
                }
            }
            WindowMode::Mimo { horizon } => {
                for t in lag..=n - horizon {
                    inputs.push(z[t - lag..t].to_vec());
                    targets.push(z[t..t + horizon].to_vec());
                }
            }
        }
        Ok(SupervisedDataset {
            inputs,
            targets,
            lag,
            mode,
        })
    }

    /// Read a two-column `index,value` CSV. A header line is permitted.
    pub fn read_csv(path: &Path) -> Result<TimeSeries> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv_str(&text)
    }

    pub fn from_csv_str(text: &str) -> Result<TimeSeries> {
        let mut indices: Vec<i64> = Vec::new();
        let mut values = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let a = parts.next().unwrap_or("").trim();
            let b = parts.next().unwrap_or("").trim();
            if i == 0 && a.parse::<i64>().is_err() {
                continue; // header
            }
            let idx: i64 = a.parse().map_err(|_| TimeSeriesError::Csv {
                line: i + 1,
                message: format!("bad index {a:?}"),
            })?;
            let val: f64 = b.parse().map_err(|_| TimeSeriesError::Csv {
                line: i + 1,
                message: format!("bad value {b:?}"),
            })?;
            indices.push(idx);
            values.push(val);
        }
        if values.is_empty() {
            return Err(TimeSeriesError::Empty);
        }
        for w in indices.windows(2) {
            if w[1] != w[0] + 1 {
                return Err(TimeSeriesError::Csv {
                    line: 0,
                    message: format!("indices not consecutive near {}", w[0]),
                });
            }
        }
        Self::new(values, indices[0])
    }

    /// Write the series as `index,value` CSV with a header line.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("index,value\n");
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{},{v}\n", self.start_index + i as i64));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

fn integrate_once(diffs: &[f64], first: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(diffs.len() + 1);
    out.push(first);
    for &d in diffs {
        out.push(out.last().unwrap() + d);
    }
    out
}

/// Train/validation/test partition request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    /// Time label of the last training-window observation (inclusive).
    pub train_end_index: i64,
    /// Fraction of the training window reserved for validation, in (0, 1).
    pub val_fraction: f64,
    /// Test-set length; equals the forecast horizon in the protocol.
    pub horizon: usize,
}

impl SplitSpec {
    fn validate(&self) -> Result<()> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(TimeSeriesError::BadValFraction(self.val_fraction));
        }
        if self.horizon == 0 {
            return Err(TimeSeriesError::SplitTooShort {
                required: 1,
                available: 0,
            });
        }
        Ok(())
    }
}

/// Window-construction mode for one of the three multi-step strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowMode {
    /// One-step-ahead pairs; count = N - d.
    Recursive,
    /// Pairs targeting offset `h`; count = N - d - h + 1.
    Direct { offset: usize },
    /// Width-H targets; count = N - d - H + 1.
    Mimo { horizon: usize },
}

impl fmt::Display for WindowMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WindowMode::Recursive => write!(f, "recursive"),
            WindowMode::Direct { offset } => write!(f, "direct(h={offset})"),
            WindowMode::Mimo { horizon } => write!(f, "mimo(H={horizon})"),
        }
    }
}

/// Supervised (input, target) pairs extracted from a series.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedDataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub lag: usize,
    pub mode: WindowMode,
}

impl SupervisedDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_width(&self) -> usize {
        self.lag
    }

    pub fn target_width(&self) -> usize {
        self.targets.first().map_or(0, Vec::len)
    }
}
