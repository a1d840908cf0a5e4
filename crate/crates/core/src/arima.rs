//! Linear statistical engine: differencing, ARIMA(p,d,q) estimation by
//! conditional sum of squares, automatic order selection, h-step forecasting,
//! and in-sample residual extraction for the hybrid decomposition.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::record::{Record, RecordError};
use crate::timeseries::{TimeSeries, TimeSeriesError};

#[derive(Debug, Error)]
pub enum ArimaError {
    #[error("degenerate order (0,0,0): need p + q >= 1 or d >= 1")]
    DegenerateOrder,
    #[error("series of length {length} too short to fit {order}: need at least {required}")]
    TooShort {
        length: usize,
        required: usize,
        order: ArimaOrder,
    },
    #[error("estimation did not converge after {iterations} iterations (best CSS {best_css})")]
    NonConvergence {
        iterations: usize,
        best_css: f64,
        best_params: Vec<f64>,
    },
    #[error("no candidate order could be fit")]
    SelectionFailed,
    #[error("order selection rejects a (near-)constant series")]
    ConstantSeries,
    #[error("forecast horizon must be at least 1")]
    BadHorizon,
    #[error(transparent)]
    Series(#[from] TimeSeriesError),
    #[error(transparent)]
    Record(#[from] RecordError),
}

type Result<T> = std::result::Result<T, ArimaError>;

/// ARIMA model order (p, d, q). The degenerate (0,0,0) order is rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArimaOrder {
    pub p: usize,
    pub d: usize,
    pub q: usize,
}

impl ArimaOrder {
    pub fn new(p: usize, d: usize, q: usize) -> Result<Self> {
        if p + q == 0 && d == 0 {
            return Err(ArimaError::DegenerateOrder);
        }
        Ok(Self { p, d, q })
    }
}

impl std::fmt::Display for ArimaOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ARIMA({},{},{})", self.p, self.d, self.q)
    }
}

/// A fitted ARIMA model.
///
/// `fitted` and `residuals` start at original-scale index `fitted_start`
/// (the first `d + p` points have no one-step prediction) and satisfy
/// `observed[t] = fitted[t] + residuals[t]` exactly.
#[derive(Debug, Clone)]
pub struct ArimaModel {
    pub order: ArimaOrder,
    pub ar_coeffs: Vec<f64>,
    pub ma_coeffs: Vec<f64>,
    pub intercept: f64,
    pub sigma2: f64,
    pub fitted_start: usize,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    pub log_likelihood: f64,
    /// False when an AR root lies on or inside the unit circle (tolerance 1e-6).
    pub stationary: bool,
    /// Last `d` original-scale observations, oldest first.
    z_tail: Vec<f64>,
    /// Last `p` differenced observations, oldest first.
    w_tail: Vec<f64>,
    /// Last `q` differenced-scale innovations, oldest first.
    e_tail: Vec<f64>,
}

/// First differences applied `order` times; length shrinks by `order`.
pub fn difference(series: &TimeSeries, order: usize) -> Result<TimeSeries> {
    Ok(series.difference(order)?)
}

/// Inverse of [`difference`]: cumulative sums seeded by `initial` (one value
/// per differencing pass, outermost first).
pub fn integrate(diffs: &[f64], initial: &[f64]) -> Vec<f64> {
    let mut current = diffs.to_vec();
    for &first in initial.iter().rev() {
        let mut out = Vec::with_capacity(current.len() + 1);
        out.push(first);
        for d in &current {
            out.push(out.last().unwrap() + d);
        }
        current = out;
    }
    current
}

const MIN_EXTRA_POINTS: usize = 10;

/// Fit by minimizing the conditional sum of squares on the d-times
/// differenced series. Deterministic given identical inputs.
pub fn fit(series: &TimeSeries, order: ArimaOrder) -> Result<ArimaModel> {
    let (p, d, q) = (order.p, order.d, order.q);
    if p + q == 0 && d == 0 {
        return Err(ArimaError::DegenerateOrder);
    }
    let n = series.len();
    let required = MIN_EXTRA_POINTS + p + q + d;
    if n < required {
        return Err(ArimaError::TooShort {
            length: n,
            required,
            order,
        });
    }
    let z = series.values();
    let w = diff_values(z, d);
    let use_intercept = d <= 1;

    let params = if q == 0 {
        estimate_ar_ols(&w, p, use_intercept)
    } else {
        estimate_arma_css(&w, p, q, use_intercept)?
    };
    let (intercept, ar, ma) = unpack(&params, p, q, use_intercept);

    // one-step residuals on the differenced scale; presample innovations zero
    let e = innovations(&w, intercept, &ar, &ma);
    let n_eff = w.len() - p;
    let sse: f64 = e[p..].iter().map(|v| v * v).sum();
    let sigma2 = sse / n_eff as f64;
    let log_likelihood =
        -0.5 * n_eff as f64 * ((2.0 * std::f64::consts::PI * sigma2.max(1e-300)).ln() + 1.0);

    let fitted_start = d + p;
    let mut fitted = Vec::with_capacity(n - fitted_start);
    let mut residuals = Vec::with_capacity(n - fitted_start);
    for s in fitted_start..n {
        let et = e[s - d];
        let f = z[s] - et;
        fitted.push(f);
        // re-derive so `observed - fitted == residual` holds bitwise
        residuals.push(z[s] - f);
    }

    Ok(ArimaModel {
        order,
        stationary: ar_stationary(&ar),
        z_tail: z[n - d..].to_vec(),
        w_tail: w[w.len() - p..].to_vec(),
        e_tail: e[e.len() - q..].to_vec(),
        ar_coeffs: ar,
        ma_coeffs: ma,
        intercept,
        sigma2,
        fitted_start,
        fitted,
        residuals,
        log_likelihood,
    })
}

/// Grid search over `p <= max_p`, `d <= max_d`, `q <= max_q` minimizing AICc.
///
/// The differencing order is fixed first by successive KPSS level tests;
/// ties on AICc break toward smaller `p + q`, then smaller `p`.
pub fn select_order(
    series: &TimeSeries,
    max_p: usize,
    max_d: usize,
    max_q: usize,
) -> Result<ArimaOrder> {
    let z = series.values();
    if sample_variance(z) < 1e-12 {
        return Err(ArimaError::ConstantSeries);
    }
    let mut d = 0usize;
    while d < max_d {
        let w = diff_values(z, d);
        if w.len() < 2 * MIN_EXTRA_POINTS || kpss_level_stat(&w) <= KPSS_CRIT_5PCT {
            break;
        }
        d += 1;
    }

    let mut best: Option<(f64, ArimaOrder)> = None;
    // CSS likelihoods must be compared on one conditioning sample, or
    // larger p wins mechanically by dropping more start-up points
    let w_common = diff_values(z, d);
    let common_start = max_p;
    for p in 0..=max_p {
        for q in 0..=max_q {
            let order = match ArimaOrder::new(p, d, q) {
                Ok(o) => o,
                Err(_) => continue,
            };
            let model = match fit(series, order) {
                Ok(m) => m,
                Err(_) => continue,
            };
            let e = innovations(
                &w_common,
                model.intercept,
                &model.ar_coeffs,
                &model.ma_coeffs,
            );
            if w_common.len() <= common_start {
                continue;
            }
            let n_eff = (w_common.len() - common_start) as f64;
            let sse: f64 = e[common_start..].iter().map(|v| v * v).sum();
            let sigma2 = (sse / n_eff).max(1e-300);
            let ll = -0.5 * n_eff * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0);
            let k = (p + q + usize::from(d <= 1) + 1) as f64;
            if n_eff - k - 1.0 <= 0.0 {
                continue;
            }
            let aicc = -2.0 * ll + 2.0 * k + 2.0 * k * (k + 1.0) / (n_eff - k - 1.0);
            let better = match &best {
                None => true,
                Some((b, bo)) => {
                    aicc < b - 1e-9
                        || ((aicc - b).abs() <= 1e-9
                            && (p + q < bo.p + bo.q || (p + q == bo.p + bo.q && p < bo.p)))
                }
            };
            if better {
                best = Some((aicc, order));
            }
        }
    }
    best.map(|(_, o)| o).ok_or(ArimaError::SelectionFailed)
}

impl ArimaModel {
    /// Iterated conditional-expectation forecasts on the original scale;
    /// innovations beyond the sample are set to zero.
    pub fn forecast(&self, horizon: usize) -> Result<Vec<f64>> {
        if horizon == 0 {
            return Err(ArimaError::BadHorizon);
        }
        let (p, d, q) = (self.order.p, self.order.d, self.order.q);
        let mut w_hist = self.w_tail.clone();
        let mut e_hist = self.e_tail.clone();
        let mut z_hist = self.z_tail.clone();
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let mut wf = self.intercept;
            for (i, phi) in self.ar_coeffs.iter().enumerate() {
                wf += phi * w_hist[w_hist.len() - 1 - i];
            }
            for (j, theta) in self.ma_coeffs.iter().enumerate() {
                // e_{t-1-j}; zero once the index runs past the sample
                if j < e_hist.len() {
                    wf += theta * e_hist[e_hist.len() - 1 - j];
                }
            }
            // undo the d-fold differencing
            let mut zf = wf;
            for k in 1..=d {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                zf += sign * binomial(d, k) * z_hist[z_hist.len() - k];
            }
            out.push(zf);
            if p > 0 {
                w_hist.push(wf);
            }
            if q > 0 {
                e_hist.push(0.0);
            }
            if d > 0 {
                z_hist.push(zf);
            }
        }
        Ok(out)
    }

    /// In-sample residual series `E_t = Z_t - fitted_t` on the original
    /// index range starting at `fitted_start`.
    pub fn residual_series(&self, original: &TimeSeries) -> Result<TimeSeries> {
        let start = original.start_index() + self.fitted_start as i64;
        Ok(TimeSeries::new(self.residuals.clone(), start)?)
    }

    pub fn to_record(&self) -> Record {
        let mut r = Record::new();
        r.push_str("kind", "arima");
        r.push_u64("p", self.order.p as u64);
        r.push_u64("d", self.order.d as u64);
        r.push_u64("q", self.order.q as u64);
        r.push_f64_slice("ar", &self.ar_coeffs);
        r.push_f64_slice("ma", &self.ma_coeffs);
        r.push_f64("intercept", self.intercept);
        r.push_f64("sigma2", self.sigma2);
        r.push_f64("log_likelihood", self.log_likelihood);
        r.push_u64("fitted_start", self.fitted_start as u64);
        r.push_str("stationary", if self.stationary { "true" } else { "false" });
        r.push_f64_slice("z_tail", &self.z_tail);
        r.push_f64_slice("w_tail", &self.w_tail);
        r.push_f64_slice("e_tail", &self.e_tail);
        r
    }

    /// Rebuild a forecast-capable model from a record. In-sample fitted
    /// values and residuals are not stored in records and come back empty.
    pub fn from_record(r: &Record) -> Result<ArimaModel> {
        let order = ArimaOrder::new(
            r.get_u64("p")? as usize,
            r.get_u64("d")? as usize,
            r.get_u64("q")? as usize,
        )?;
        Ok(ArimaModel {
            order,
            ar_coeffs: r.get_f64_slice("ar")?,
            ma_coeffs: r.get_f64_slice("ma")?,
            intercept: r.get_f64("intercept")?,
            sigma2: r.get_f64("sigma2")?,
            fitted_start: r.get_u64("fitted_start")? as usize,
            fitted: Vec::new(),
            residuals: Vec::new(),
            log_likelihood: r.get_f64("log_likelihood")?,
            stationary: r.get("stationary")? == "true",
            z_tail: r.get_f64_slice("z_tail")?,
            w_tail: r.get_f64_slice("w_tail")?,
            e_tail: r.get_f64_slice("e_tail")?,
        })
    }
}

fn diff_values(z: &[f64], d: usize) -> Vec<f64> {
    let mut w = z.to_vec();
    for _ in 0..d {
        w = w.windows(2).map(|x| x[1] - x[0]).collect();
    }
    w
}

fn binomial(n: usize, k: usize) -> f64 {
    let mut out = 1.0;
    for i in 0..k {
        out *= (n - i) as f64 / (i + 1) as f64;
    }
    out
}

fn unpack(params: &[f64], p: usize, q: usize, use_intercept: bool) -> (f64, Vec<f64>, Vec<f64>) {
    let off = usize::from(use_intercept);
    let intercept = if use_intercept { params[0] } else { 0.0 };
    let ar = params[off..off + p].to_vec();
    let ma = params[off + p..off + p + q].to_vec();
    (intercept, ar, ma)
}

/// One-step innovations over the whole differenced sample, presample zero.
fn innovations(w: &[f64], intercept: f64, ar: &[f64], ma: &[f64]) -> Vec<f64> {
    let p = ar.len();
    let mut e = vec![0.0; w.len()];
    for t in p..w.len() {
        let mut pred = intercept;
        for (i, phi) in ar.iter().enumerate() {
            pred += phi * w[t - 1 - i];
        }
        for (j, theta) in ma.iter().enumerate() {
            if t >= j + 1 {
                pred += theta * e[t - 1 - j];
            }
        }
        e[t] = w[t] - pred;
    }
    e
}

fn css(w: &[f64], params: &[f64], p: usize, q: usize, use_intercept: bool) -> f64 {
    if params.iter().any(|v| !v.is_finite() || v.abs() > 50.0) {
        return 1e12;
    }
    let (intercept, ar, ma) = unpack(params, p, q, use_intercept);
    // conditional sums of squares can be gamed outside the
    // stationary/invertible region; reject such candidates outright
    let neg_ma: Vec<f64> = ma.iter().map(|t| -t).collect();
    if !ar_stationary(&ar) || !ar_stationary(&neg_ma) {
        return 1e12;
    }
    let e = innovations(w, intercept, &ar, &ma);
    let sse: f64 = e[p..].iter().map(|v| v * v).sum();
    if sse.is_finite() {
        sse
    } else {
        1e12
    }
}

/// Exact OLS solution for AR(p) with optional intercept.
fn estimate_ar_ols(w: &[f64], p: usize, use_intercept: bool) -> Vec<f64> {
    let off = usize::from(use_intercept);
    if p == 0 {
        return if use_intercept {
            vec![w.iter().sum::<f64>() / w.len() as f64]
        } else {
            vec![]
        };
    }
    let rows = w.len() - p;
    let cols = off + p;
    let mut x = DMatrix::zeros(rows, cols);
    let mut y = DMatrix::zeros(rows, 1);
    for t in p..w.len() {
        let r = t - p;
        if use_intercept {
            x[(r, 0)] = 1.0;
        }
        for i in 0..p {
            x[(r, off + i)] = w[t - 1 - i];
        }
        y[(r, 0)] = w[t];
    }
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * y;
    match xtx.clone().lu().solve(&xty) {
        Some(beta) => beta.column(0).iter().cloned().collect(),
        None => vec![0.0; cols],
    }
}

/// Hannan-Rissanen initialization followed by Nelder-Mead CSS refinement.
fn estimate_arma_css(w: &[f64], p: usize, q: usize, use_intercept: bool) -> Result<Vec<f64>> {
    let off = usize::from(use_intercept);
    let n = w.len();
    // stage 1: long AR to proxy the innovations
    let m = ((2 * (p + q)).max(8)).min(n / 3);
    let long_ar = estimate_ar_ols(w, m, true);
    let e0 = innovations(w, long_ar[0], &long_ar[1..], &[]);

    // stage 2: OLS of w_t on its own lags and lagged proxy innovations
    let start = m.max(p).max(q);
    let rows = n - start;
    let cols = off + p + q;
    let mut x = DMatrix::zeros(rows, cols);
    let mut y = DMatrix::zeros(rows, 1);
    for t in start..n {
        let r = t - start;
        if use_intercept {
            x[(r, 0)] = 1.0;
        }
        for i in 0..p {
            x[(r, off + i)] = w[t - 1 - i];
        }
        for j in 0..q {
            x[(r, off + p + j)] = e0[t - 1 - j];
        }
        y[(r, 0)] = w[t];
    }
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * y;
    let init: Vec<f64> = match xtx.clone().lu().solve(&xty) {
        Some(beta) => beta.column(0).iter().cloned().collect(),
        None => vec![0.0; cols],
    };
    // clamp wild starting points; Nelder-Mead does the rest
    let init: Vec<f64> = init.iter().map(|v| v.clamp(-2.0, 2.0)).collect();

    let objective = |params: &[f64]| css(w, params, p, q, use_intercept);
    let (best, best_css, converged, iters) = nelder_mead(objective, &init, 0.1, 2000, 1e-10);
    if !converged {
        return Err(ArimaError::NonConvergence {
            iterations: iters,
            best_css,
            best_params: best,
        });
    }
    Ok(best)
}

/// Plain Nelder-Mead simplex minimizer. Returns (x, f(x), converged, iters).
fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    step: f64,
    max_iter: usize,
    tol: f64,
) -> (Vec<f64>, f64, bool, usize) {
    let dim = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..dim {
        let mut v = x0.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let mut fvals: Vec<f64> = simplex.iter().map(|x| f(x)).collect();
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iters = 0;
    while iters < max_iter {
        iters += 1;
        let mut order: Vec<usize> = (0..simplex.len()).collect();
        order.sort_by(|&a, &b| fvals[a].partial_cmp(&fvals[b]).unwrap());
        let sorted: Vec<Vec<f64>> = order.iter().map(|&i| simplex[i].clone()).collect();
        let sorted_f: Vec<f64> = order.iter().map(|&i| fvals[i]).collect();
        simplex = sorted;
        fvals = sorted_f;
        if fvals[dim] - fvals[0] < tol * (1.0 + fvals[0].abs()) {
            return (simplex[0].clone(), fvals[0], true, iters);
        }
        let centroid: Vec<f64> = (0..dim)
            .map(|j| simplex[..dim].iter().map(|x| x[j]).sum::<f64>() / dim as f64)
            .collect();
        let reflect: Vec<f64> = (0..dim)
            .map(|j| centroid[j] + alpha * (centroid[j] - simplex[dim][j]))
            .collect();
        let fr = f(&reflect);
        if fr < fvals[0] {
            let expand: Vec<f64> = (0..dim)
                .map(|j| centroid[j] + gamma * (reflect[j] - centroid[j]))
                .collect();
            let fe = f(&expand);
            if fe < fr {
                simplex[dim] = expand;
                fvals[dim] = fe;
            } else {
                simplex[dim] = reflect;
                fvals[dim] = fr;
            }
        } else if fr < fvals[dim - 1] {
            simplex[dim] = reflect;
            fvals[dim] = fr;
        } else {
            let contract: Vec<f64> = (0..dim)
                .map(|j| centroid[j] + rho * (simplex[dim][j] - centroid[j]))
                .collect();
            let fc = f(&contract);
            if fc < fvals[dim] {
                simplex[dim] = contract;
                fvals[dim] = fc;
            } else {
                for i in 1..=dim {
                    for j in 0..dim {
                        simplex[i][j] = simplex[0][j] + sigma * (simplex[i][j] - simplex[0][j]);
                    }
                    fvals[i] = f(&simplex[i]);
                }
            }
        }
    }
    (simplex[0].clone(), fvals[0], false, iters)
}

/// True when every AR characteristic root lies strictly outside the unit
/// circle (companion-matrix eigenvalues inside, tolerance 1e-6).
fn ar_stationary(ar: &[f64]) -> bool {
    let p = ar.len();
    if p == 0 {
        return true;
    }
    let mut companion = DMatrix::zeros(p, p);
    for (i, phi) in ar.iter().enumerate() {
        companion[(0, i)] = *phi;
    }
    for i in 1..p {
        companion[(i, i - 1)] = 1.0;
    }
    companion
        .complex_eigenvalues()
        .iter()
        .all(|lambda| lambda.norm() < 1.0 - 1e-6)
}

fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

const KPSS_CRIT_5PCT: f64 = 0.463;

/// KPSS level-stationarity statistic with a Bartlett-window long-run
/// variance (lag truncation 12*(n/100)^(1/4)).
pub fn kpss_level_stat(x: &[f64]) -> f64 {
    let n = x.len();
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let u: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let mut s = 0.0;
    let mut num = 0.0;
    for &ut in &u {
        s += ut;
        num += s * s;
    }
    num /= nf * nf;
    // the "long" Bartlett truncation; short bandwidths over-reject on
    // persistent but stationary AR processes
    let lags = (12.0 * (nf / 100.0).powf(0.25)).floor() as usize;
    let gamma0: f64 = u.iter().map(|v| v * v).sum::<f64>() / nf;
    let mut lrv = gamma0;
    for l in 1..=lags.min(n - 1) {
        let gamma: f64 = u[l..].iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() / nf;
        lrv += 2.0 * (1.0 - l as f64 / (lags as f64 + 1.0)) * gamma;
    }
    if lrv <= 0.0 {
        return 0.0;
    }
    num / lrv
}

/// Simulate an ARMA(p,q) process driven by Gaussian innovations; used by
/// tests, the synthetic benchmark generator, and the CLI.
pub fn simulate_arma(
    ar: &[f64],
    ma: &[f64],
    intercept: f64,
    sigma: f64,
    n: usize,
    seed: u64,
) -> Vec<f64> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let burn = 100;
    let total = n + burn;
    let mut e = Vec::with_capacity(total);
    let mut z: Vec<f64> = Vec::with_capacity(total);
    for t in 0..total {
        // Box-Muller from two uniforms keeps rand's distributions out of the dep tree
        let u1: f64 = rng.gen_range(1e-12..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let noise = sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        e.push(noise);
        let mut v = intercept + noise;
        for (i, phi) in ar.iter().enumerate() {
            if t > i {
                v += phi * z[t - 1 - i];
            }
        }
        for (j, theta) in ma.iter().enumerate() {
            if t > j {
                v += theta * e[t - 1 - j];
            }
        }
        z.push(v);
    }
    z.split_off(burn)
}
