//! Mortality-specific layer: HMD-format ingestion, synthetic surface
//! generation, key-age extraction, natural cubic-spline curve interpolation,
//! and the Lee-Carter baseline.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timeseries::TimeSeries;

#[derive(Debug, Error)]
pub enum DemographicError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: missing value (\".\") in column {column}")]
    MissingValue { line: usize, column: &'static str },
    #[error("incomplete grid: year {year}, age {age} has no record")]
    IncompleteGrid { year: i32, age: usize },
    #[error("no data rows after filtering")]
    NoData,
    #[error("rate at year {year}, age {age} is {value}; rates must be positive and finite")]
    InvalidRate { year: i32, age: usize, value: f64 },
    #[error("age {0} outside the 0..=100 grid")]
    AgeOutOfRange(usize),
    #[error("need at least {need} years, surface has {got}")]
    TooFewYears { need: usize, got: usize },
    #[error("key ages must be strictly increasing and span 0..=100; got {0:?}")]
    BadKeyAges(Vec<usize>),
    #[error("expected one value per key age ({expected}), got {got}")]
    KeyValueMismatch { expected: usize, got: usize },
    #[error("horizon must be at least 1")]
    BadHorizon,
    #[error("parameter vectors must have length {expected} (ages), got {got}")]
    BadParamLength { expected: usize, got: usize },
    #[error(transparent)]
    Series(#[from] crate::timeseries::TimeSeriesError),
}

type Result<T> = std::result::Result<T, DemographicError>;

pub const N_AGES: usize = 101;

/// The 20 modeled key ages; endpoints 0 and 100 anchor the spline.
pub const KEY_AGES: [usize; 20] = [
    0, 1, 2, 5, 10, 12, 15, 18, 20, 22, 25, 28, 30, 40, 50, 60, 70, 80, 90, 100,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sex {
    Female,
    Male,
    Total,
}

impl Sex {
    pub const ALL: [Sex; 3] = [Sex::Female, Sex::Male, Sex::Total];

    pub fn index(self) -> usize {
        match self {
            Sex::Female => 0,
            Sex::Male => 1,
            Sex::Total => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Female => "female",
            Sex::Male => "male",
            Sex::Total => "total",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "female" => Some(Sex::Female),
            "male" => Some(Sex::Male),
            "total" => Some(Sex::Total),
            _ => None,
        }
    }
}

/// Complete year × age × sex grid of positive crude mortality rates over
/// ages 0..=100 and a consecutive year range.
#[derive(Debug, Clone, PartialEq)]
pub struct MortalitySurface {
    first_year: i32,
    /// rates[sex][year][age]
    rates: [Vec<Vec<f64>>; 3],
}

impl MortalitySurface {
    fn from_grid(first_year: i32, rates: [Vec<Vec<f64>>; 3]) -> Result<Self> {
        let n_years = rates[0].len();
        if n_years == 0 {
            return Err(DemographicError::NoData);
        }
        for sex_grid in &rates {
            for (y, row) in sex_grid.iter().enumerate() {
                debug_assert_eq!(row.len(), N_AGES);
                for (age, &v) in row.iter().enumerate() {
                    if !(v.is_finite() && v > 0.0) {
                        return Err(DemographicError::InvalidRate {
                            year: first_year + y as i32,
                            age,
                            value: v,
                        });
                    }
                }
            }
        }
        Ok(Self { first_year, rates })
    }

    pub fn first_year(&self) -> i32 {
        self.first_year
    }

    pub fn years(&self) -> std::ops::Range<i32> {
        self.first_year..self.first_year + self.rates[0].len() as i32
    }

    pub fn n_years(&self) -> usize {
        self.rates[0].len()
    }

    pub fn rate(&self, year_index: usize, age: usize, sex: Sex) -> f64 {
        self.rates[sex.index()][year_index][age]
    }

    /// Keep the first `n_years` years (a training window for baselines).
    pub fn truncate_years(&self, n_years: usize) -> Result<Self> {
        if n_years == 0 || n_years > self.n_years() {
            return Err(DemographicError::TooFewYears {
                need: n_years,
                got: self.n_years(),
            });
        }
        let rates = [
            self.rates[0][..n_years].to_vec(),
            self.rates[1][..n_years].to_vec(),
            self.rates[2][..n_years].to_vec(),
        ];
        Ok(Self {
            first_year: self.first_year,
            rates,
        })
    }

    /// HMD Mx_1x1-compatible text: header line then whitespace-delimited
    /// Year, Age, Female, Male, Total rows.
    pub fn serialize(&self) -> String {
        let mut out = String::from("Year  Age  Female  Male  Total\n");
        for (y, year) in self.years().enumerate() {
            for age in 0..N_AGES {
                out.push_str(&format!(
                    "{year}  {age}  {:e}  {:e}  {:e}\n",
                    self.rates[0][y][age], self.rates[1][y][age], self.rates[2][y][age]
                ));
            }
        }
        out
    }
}

/// Parse HMD Mx_1x1-style text. Non-data lines before the first record are
/// skipped as headers; age tokens like "110+" are accepted and ages above
/// 100 are discarded; a "." cell is a data error naming the line. Years
/// before `min_year` (when given) are dropped.
pub fn parse_surface(text: &str, min_year: Option<i32>) -> Result<MortalitySurface> {
    struct Row {
        year: i32,
        age: usize,
        rates: [f64; 3],
    }
    let mut rows: Vec<Row> = Vec::new();
    let mut seen_data = false;
    for (line_no, line) in text.lines().enumerate() {
        let line_no = line_no + 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        let year: i32 = match tokens[0].parse() {
            Ok(y) => y,
            Err(_) if !seen_data => continue, // header tolerance
            Err(_) => {
                return Err(DemographicError::Parse {
                    line: line_no,
                    message: format!("expected a year, got {:?}", tokens[0]),
                })
            }
        };
        seen_data = true;
        if tokens.len() != 5 {
            return Err(DemographicError::Parse {
                line: line_no,
                message: format!("expected 5 columns, got {}", tokens.len()),
            });
        }
        let age_token = tokens[1].trim_end_matches('+');
        let age: usize = age_token.parse().map_err(|_| DemographicError::Parse {
            line: line_no,
            message: format!("bad age token {:?}", tokens[1]),
        })?;
        let mut rates = [0.0; 3];
        for (i, (tok, col)) in tokens[2..]
            .iter()
            .zip(["Female", "Male", "Total"])
            .enumerate()
        {
            if *tok == "." {
                return Err(DemographicError::MissingValue {
                    line: line_no,
                    column: match i {
                        0 => "Female",
                        1 => "Male",
                        _ => "Total",
                    },
                });
            }
            rates[i] = tok.parse().map_err(|_| DemographicError::Parse {
                line: line_no,
                message: format!("bad {col} rate {tok:?}"),
            })?;
        }
        if age > 100 {
            continue;
        }
        if min_year.is_some_and(|m| year < m) {
            continue;
        }
        rows.push(Row { year, age, rates });
    }
    if rows.is_empty() {
        return Err(DemographicError::NoData);
    }
    let first_year = rows.iter().map(|r| r.year).min().unwrap();
    let last_year = rows.iter().map(|r| r.year).max().unwrap();
    let n_years = (last_year - first_year + 1) as usize;
    let mut grid: [Vec<Vec<f64>>; 3] =
        std::array::from_fn(|_| vec![vec![f64::NAN; N_AGES]; n_years]);
    for row in &rows {
        let y = (row.year - first_year) as usize;
        for s in 0..3 {
            grid[s][y][row.age] = row.rates[s];
        }
    }
    for y in 0..n_years {
        for age in 0..N_AGES {
            if grid[0][y][age].is_nan() {
                return Err(DemographicError::IncompleteGrid {
                    year: first_year + y as i32,
                    age,
                });
            }
        }
    }
    MortalitySurface::from_grid(first_year, grid)
}

/// Ground-truth Lee-Carter structure for the synthetic generator:
/// log m(x,t) = a[x] + b[x]·k[t] + sigma·noise, one independent noise field
/// per sex.
#[derive(Debug, Clone)]
pub struct SurfaceParams {
    pub first_year: i32,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub k: Vec<f64>,
    pub noise_sigma: f64,
}

impl SurfaceParams {
    /// Plausible defaults: a J-shaped log-mortality age profile, uniform
    /// loadings summing to 1, and a linear period index with drift −1
    /// centered so it sums to 0.
    pub fn default_for(n_years: usize) -> Self {
        let a: Vec<f64> = (0..N_AGES)
            .map(|x| {
                let x = x as f64;
                // infant spike, accident hump, then log-linear senescence
                -4.2 - 0.035 * x + 2.2 * (-x / 1.5).exp() + 0.45 * (-((x - 22.0) / 8.0).powi(2)).exp()
            })
            .collect();
        let b = vec![1.0 / N_AGES as f64; N_AGES];
        let drift = -1.0;
        let mid = (n_years as f64 - 1.0) / 2.0;
        let k: Vec<f64> = (0..n_years).map(|t| drift * (t as f64 - mid)).collect();
        Self {
            first_year: 1950,
            a,
            b,
            k,
            noise_sigma: 0.02,
        }
    }

    /// Implied drift of the period index (mean first difference).
    pub fn drift(&self) -> f64 {
        if self.k.len() < 2 {
            return 0.0;
        }
        (self.k[self.k.len() - 1] - self.k[0]) / (self.k.len() - 1) as f64
    }
}

/// Deterministic per seed; rates are exp(a + b·k + noise) and therefore
/// positive by construction. Each sex draws its own noise sub-stream
/// (seed, seed+1, seed+2).
pub fn synthesize_surface(params: &SurfaceParams, seed: u64) -> Result<MortalitySurface> {
    if params.a.len() != N_AGES || params.b.len() != N_AGES {
        return Err(DemographicError::BadParamLength {
            expected: N_AGES,
            got: params.a.len().min(params.b.len()),
        });
    }
    if params.k.is_empty() {
        return Err(DemographicError::NoData);
    }
    // Box-Muller standard normal, matching the convention used elsewhere in
    // the crate to keep rand's distribution crates out of the dep tree.
    fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
        let u1: f64 = rng.gen_range(1e-12..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
    let rates: [Vec<Vec<f64>>; 3] = std::array::from_fn(|s| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + s as u64);
        params
            .k
            .iter()
            .map(|&kt| {
                (0..N_AGES)
                    .map(|x| {
                        let noise = params.noise_sigma * gaussian(&mut rng);
                        (params.a[x] + params.b[x] * kt + noise).exp()
                    })
                    .collect()
            })
            .collect()
    });
    MortalitySurface::from_grid(params.first_year, rates)
}

/// One crude-rate series per year for a single age and sex. The caller
/// composes with `TimeSeries::log_transform` for the modeling scale.
pub fn extract_series(surface: &MortalitySurface, age: usize, sex: Sex) -> Result<TimeSeries> {
    if age >= N_AGES {
        return Err(DemographicError::AgeOutOfRange(age));
    }
    let values: Vec<f64> = (0..surface.n_years())
        .map(|y| surface.rate(y, age, sex))
        .collect();
    Ok(TimeSeries::new(values, surface.first_year as i64)?)
}

/// Natural cubic spline through `(key_ages[i], values[i])` evaluated at all
/// integer ages 0..=100. Passes through the knots exactly and reproduces
/// linear functions.
pub fn interpolate_curve(key_ages: &[usize], values: &[f64]) -> Result<Vec<f64>> {
    let n = key_ages.len();
    if n < 2
        || key_ages.windows(2).any(|w| w[0] >= w[1])
        || key_ages[0] != 0
        || *key_ages.last().unwrap() != 100
    {
        return Err(DemographicError::BadKeyAges(key_ages.to_vec()));
    }
    if values.len() != n {
        return Err(DemographicError::KeyValueMismatch {
            expected: n,
            got: values.len(),
        });
    }
    let x: Vec<f64> = key_ages.iter().map(|&a| a as f64).collect();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();

    // Tridiagonal system for the interior second derivatives; natural
    // boundaries pin m[0] = m[n-1] = 0.
    let mut m = vec![0.0; n];
    if n > 2 {
        let dim = n - 2;
        let mut diag = vec![0.0; dim];
        let mut upper = vec![0.0; dim];
        let mut rhs = vec![0.0; dim];
        for i in 0..dim {
            diag[i] = 2.0 * (h[i] + h[i + 1]);
            upper[i] = h[i + 1];
            rhs[i] = 6.0
                * ((values[i + 2] - values[i + 1]) / h[i + 1]
                    - (values[i + 1] - values[i]) / h[i]);
        }
        // Thomas algorithm (sub-diagonal equals the previous upper entry)
        for i in 1..dim {
            let w = h[i] / diag[i - 1];
            diag[i] -= w * upper[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
        m[dim] = rhs[dim - 1] / diag[dim - 1];
        for i in (1..dim).rev() {
            m[i] = (rhs[i - 1] - upper[i - 1] * m[i + 1]) / diag[i - 1];
        }
    }

    let mut out = Vec::with_capacity(N_AGES);
    let mut seg = 0;
    for age in 0..N_AGES {
        let t = age as f64;
        while seg + 2 < n && t > x[seg + 1] {
            seg += 1;
        }
        let (x0, x1) = (x[seg], x[seg + 1]);
        let hs = h[seg];
        let (y0, y1) = (values[seg], values[seg + 1]);
        let (m0, m1) = (m[seg], m[seg + 1]);
        let d0 = x1 - t;
        let d1 = t - x0;
        let v = m0 * d0.powi(3) / (6.0 * hs)
            + m1 * d1.powi(3) / (6.0 * hs)
            + (y0 / hs - m0 * hs / 6.0) * d0
            + (y1 / hs - m1 * hs / 6.0) * d1;
        out.push(v);
    }
    Ok(out)
}

/// Lee-Carter decomposition log m(x,t) = a_x + b_x·k_t with the usual
/// identification constraints sum(b) = 1 and sum(k) = 0, plus the
/// random-walk-with-drift summary of k_t.
#[derive(Debug, Clone)]
pub struct LeeCarterParams {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub k: Vec<f64>,
    pub drift: f64,
    /// Standard error of the drift estimate.
    pub drift_se: f64,
}

/// a_x is the age-wise mean of log rates; (b_x, k_t) come from the first
/// singular vectors of the centered log-rate matrix, rescaled to the
/// identification constraints. A surface with no temporal signal yields
/// k ≡ 0, uniform b, drift 0.
pub fn fit_lee_carter(surface: &MortalitySurface, sex: Sex) -> Result<LeeCarterParams> {
    let n_years = surface.n_years();
    if n_years < 2 {
        return Err(DemographicError::TooFewYears {
            need: 2,
            got: n_years,
        });
    }
    let log_m = DMatrix::from_fn(N_AGES, n_years, |x, t| surface.rate(t, x, sex).ln());
    let a: Vec<f64> = (0..N_AGES)
        .map(|x| log_m.row(x).sum() / n_years as f64)
        .collect();
    let centered = DMatrix::from_fn(N_AGES, n_years, |x, t| log_m[(x, t)] - a[x]);

    let scale = centered.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let (b, k) = if scale < 1e-12 {
        // constant-in-time surface: no temporal signal to load on
        (vec![1.0 / N_AGES as f64; N_AGES], vec![0.0; n_years])
    } else {
        let svd = centered.svd(true, true);
        let u = svd.u.as_ref().expect("u requested");
        let vt = svd.v_t.as_ref().expect("v_t requested");
        let s1 = svd.singular_values[0];
        let u1: Vec<f64> = (0..N_AGES).map(|x| u[(x, 0)]).collect();
        let v1: Vec<f64> = (0..n_years).map(|t| vt[(0, t)]).collect();
        let bsum: f64 = u1.iter().sum();
        if bsum.abs() < 1e-12 {
            // loadings sum to zero: the constraint sum(b)=1 is unreachable
            return Err(DemographicError::Parse {
                line: 0,
                message: "degenerate Lee-Carter fit: age loadings sum to zero".to_string(),
            });
        }
        let b: Vec<f64> = u1.iter().map(|v| v / bsum).collect();
        let mut k: Vec<f64> = v1.iter().map(|v| v * s1 * bsum).collect();
        // rows of the centered matrix sum to zero, so k is centered up to
        // roundoff; re-center exactly
        let kmean = k.iter().sum::<f64>() / n_years as f64;
        for kt in &mut k {
            *kt -= kmean;
        }
        (b, k)
    };

    let diffs: Vec<f64> = k.windows(2).map(|w| w[1] - w[0]).collect();
    let drift = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let drift_se = if diffs.len() > 1 {
        let var = diffs.iter().map(|d| (d - drift) * (d - drift)).sum::<f64>()
            / (diffs.len() - 1) as f64;
        (var / diffs.len() as f64).sqrt()
    } else {
        0.0
    };
    Ok(LeeCarterParams {
        a,
        b,
        k,
        drift,
        drift_se,
    })
}

/// Random-walk-with-drift extrapolation: k_{T+h} = k_T + h·drift and
/// log m(x, T+h) = a_x + b_x·k_{T+h}. Returns H curves of 101 log rates.
pub fn forecast_lee_carter(params: &LeeCarterParams, horizon: usize) -> Result<Vec<Vec<f64>>> {
    if horizon == 0 {
        return Err(DemographicError::BadHorizon);
    }
    if params.a.len() != N_AGES || params.b.len() != N_AGES {
        return Err(DemographicError::BadParamLength {
            expected: N_AGES,
            got: params.a.len().min(params.b.len()),
        });
    }
    let k_last = *params.k.last().unwrap_or(&0.0);
    Ok((1..=horizon)
        .map(|h| {
            let kh = k_last + h as f64 * params.drift;
            (0..N_AGES).map(|x| params.a[x] + params.b[x] * kh).collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn full_fixture(years: usize) -> String {
        let params = SurfaceParams::default_for(years);
        synthesize_surface(&params, 3).unwrap().serialize()
    }

    #[test]
    fn parses_minimal_fixture() {
        let text = "Year Age Female Male Total\n\
                    1950 0 0.02 0.03 0.025\n\
                    1950 1 0.001 0.002 0.0015\n";
        // a 2-age file is incomplete against the 0..=100 grid
        let err = parse_surface(text, None).unwrap_err();
        assert!(matches!(err, DemographicError::IncompleteGrid { year: 1950, age: 2 }));
    }

    #[test]
    fn parse_serialize_round_trip() {
        let params = SurfaceParams::default_for(12);
        let surface = synthesize_surface(&params, 7).unwrap();
        let back = parse_surface(&surface.serialize(), None).unwrap();
        assert_eq!(back.n_years(), 12);
        for y in 0..12 {
            for age in [0, 50, 100] {
                for sex in Sex::ALL {
                    assert_relative_eq!(
                        back.rate(y, age, sex),
                        surface.rate(y, age, sex),
                        max_relative = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn rows_above_age_100_are_skipped() {
        let mut text = full_fixture(3);
        text.push_str("1952  110+  0.5  0.6  0.55\n1952  101  0.4  0.4  0.4\n");
        let surface = parse_surface(&text, None).unwrap();
        assert_eq!(surface.n_years(), 3);
    }

    #[test]
    fn missing_cell_is_a_data_error_with_line() {
        let mut text = String::from("Year Age Female Male Total\n");
        text.push_str(&full_fixture(2).lines().skip(1).collect::<Vec<_>>().join("\n"));
        text.push_str("\n1952 0 . 0.03 0.02\n");
        let err = parse_surface(&text, None).unwrap_err();
        match err {
            DemographicError::MissingValue { line, column } => {
                assert_eq!(column, "Female");
                assert_eq!(line, 2 + 2 * N_AGES);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn year_filter_drops_early_years() {
        let text = full_fixture(10);
        let surface = parse_surface(&text, Some(1955)).unwrap();
        assert_eq!(surface.years(), 1955..1960);
    }

    #[test]
    fn malformed_row_names_line() {
        let mut text = full_fixture(2);
        text.push_str("1951 5 0.01 0.02\n");
        let err = parse_surface(&text, None).unwrap_err();
        assert!(matches!(err, DemographicError::Parse { .. }));
    }

    #[test]
    fn synthesis_is_deterministic_per_seed() {
        let params = SurfaceParams::default_for(5);
        let a = synthesize_surface(&params, 1).unwrap();
        let b = synthesize_surface(&params, 1).unwrap();
        let c = synthesize_surface(&params, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn negative_drift_trends_log_rates_downward() {
        let mut params = SurfaceParams::default_for(30);
        params.noise_sigma = 0.0;
        let surface = synthesize_surface(&params, 0).unwrap();
        for age in [0, 30, 70, 100] {
            let first = surface.rate(0, age, Sex::Total).ln();
            let last = surface.rate(29, age, Sex::Total).ln();
            assert!(last < first, "age {age} did not trend down");
        }
    }

    #[test]
    fn extract_series_projects_one_age() {
        let params = SurfaceParams::default_for(70);
        let surface = synthesize_surface(&params, 4).unwrap();
        let series = extract_series(&surface, 0, Sex::Female).unwrap();
        assert_eq!(series.len(), 70);
        assert_eq!(series.start_index(), 1950);
        assert!(extract_series(&surface, 101, Sex::Female).is_err());
        // extraction is read-only
        let again = extract_series(&surface, 0, Sex::Female).unwrap();
        assert_eq!(series.values(), again.values());
    }

    #[test]
    fn spline_passes_through_all_knots() {
        let values: Vec<f64> = KEY_AGES
            .iter()
            .map(|&a| (a as f64 * 0.37).sin() - 4.0)
            .collect();
        let curve = interpolate_curve(&KEY_AGES, &values).unwrap();
        assert_eq!(curve.len(), 101);
        for (i, &age) in KEY_AGES.iter().enumerate() {
            assert_relative_eq!(curve[age], values[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn spline_reproduces_linear_functions() {
        let f = |age: f64| 0.001f64.ln() + 0.08 * age;
        let values: Vec<f64> = KEY_AGES.iter().map(|&a| f(a as f64)).collect();
        let curve = interpolate_curve(&KEY_AGES, &values).unwrap();
        for (age, v) in curve.iter().enumerate() {
            assert_relative_eq!(*v, f(age as f64), epsilon = 1e-10);
        }
        assert_relative_eq!(curve[35], -4.1078, epsilon = 1e-3);
        assert_relative_eq!(curve[35], f(35.0), epsilon = 1e-9);
    }

    #[test]
    fn spline_rejects_bad_knots() {
        assert!(interpolate_curve(&[0, 10, 10, 100], &[0.0; 4]).is_err());
        assert!(interpolate_curve(&[0, 10, 90], &[0.0; 3]).is_err());
        assert!(interpolate_curve(&KEY_AGES, &[0.0; 3]).is_err());
    }

    #[test]
    fn lee_carter_zero_noise_round_trip() {
        let mut params = SurfaceParams::default_for(40);
        params.noise_sigma = 0.0;
        // non-uniform ground-truth loadings, normalized to sum 1
        let raw: Vec<f64> = (0..N_AGES).map(|x| 1.0 + (x as f64 / 25.0).sin().abs()).collect();
        let total: f64 = raw.iter().sum();
        params.b = raw.iter().map(|v| v / total).collect();
        let surface = synthesize_surface(&params, 0).unwrap();
        let fit = fit_lee_carter(&surface, Sex::Total).unwrap();
        assert_relative_eq!(fit.b.iter().sum::<f64>(), 1.0, epsilon = 1e-8);
        assert!(fit.k.iter().sum::<f64>().abs() < 1e-8);
        for x in 0..N_AGES {
            assert_relative_eq!(fit.b[x], params.b[x], epsilon = 1e-6);
        }
        for t in 0..40 {
            assert_relative_eq!(fit.k[t], params.k[t], epsilon = 1e-6);
        }
        assert_relative_eq!(fit.drift, params.drift(), epsilon = 1e-6);
    }

    #[test]
    fn lee_carter_constant_surface_has_no_temporal_signal() {
        let mut params = SurfaceParams::default_for(10);
        params.noise_sigma = 0.0;
        params.k = vec![0.0; 10];
        let surface = synthesize_surface(&params, 0).unwrap();
        let fit = fit_lee_carter(&surface, Sex::Male).unwrap();
        assert!(fit.k.iter().all(|&v| v == 0.0));
        assert_eq!(fit.drift, 0.0);
        assert_relative_eq!(fit.b.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn lee_carter_constraints_hold_on_noisy_fits() {
        let params = SurfaceParams::default_for(30);
        for seed in 0..3 {
            let surface = synthesize_surface(&params, seed).unwrap();
            let fit = fit_lee_carter(&surface, Sex::Female).unwrap();
            assert_relative_eq!(fit.b.iter().sum::<f64>(), 1.0, epsilon = 1e-8);
            assert!(fit.k.iter().sum::<f64>().abs() < 1e-8);
        }
    }

    #[test]
    fn lee_carter_forecast_propagates_drift() {
        let params = LeeCarterParams {
            a: vec![-3.0; N_AGES],
            b: vec![1.0 / N_AGES as f64; N_AGES],
            k: vec![1.0, 0.0, -1.0],
            drift: -2.0,
            drift_se: 0.0,
        };
        let curves = forecast_lee_carter(&params, 3).unwrap();
        for (h, curve) in curves.iter().enumerate() {
            for v in curve {
                let expected = -3.0 + (-1.0 - 2.0 * (h as f64 + 1.0)) / N_AGES as f64;
                assert_relative_eq!(*v, expected, epsilon = 1e-12);
            }
        }
        // zero drift repeats the last fitted curve
        let flat = LeeCarterParams { drift: 0.0, ..params };
        let curves = forecast_lee_carter(&flat, 2).unwrap();
        assert_eq!(curves[0], curves[1]);
    }

    #[test]
    fn lee_carter_forecast_matches_analytic_continuation() {
        let mut params = SurfaceParams::default_for(40);
        params.noise_sigma = 0.0;
        let surface = synthesize_surface(&params, 0).unwrap();
        let fit = fit_lee_carter(&surface, Sex::Total).unwrap();
        let curves = forecast_lee_carter(&fit, 5).unwrap();
        for (h, curve) in curves.iter().enumerate() {
            let kh = params.k[39] + (h as f64 + 1.0) * params.drift();
            for x in 0..N_AGES {
                assert_relative_eq!(curve[x], params.a[x] + params.b[x] * kh, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn noisy_drift_recovered_within_three_standard_errors() {
        let params = SurfaceParams::default_for(50);
        for seed in [10, 20, 30, 40, 50] {
            let surface = synthesize_surface(&params, seed).unwrap();
            let fit = fit_lee_carter(&surface, Sex::Total).unwrap();
            let band = 3.0 * fit.drift_se.max(1e-9);
            assert!(
                (fit.drift - params.drift()).abs() <= band,
                "seed {seed}: drift {} vs truth {} (3 SE = {band})",
                fit.drift,
                params.drift()
            );
        }
    }
}
