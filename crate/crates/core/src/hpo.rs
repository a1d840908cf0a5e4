//! Hyperparameter search: log-uniform sampling over the tuning domains and
//! a small Bayesian-optimization loop (Gaussian-process surrogate, expected
//! improvement) selecting configurations by mean validation RMSE.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

use crate::evaluation;
use crate::hybrid::{self, LinearSpec};
use crate::neural::{
    Activation, Family, NetworkSpec, HIDDEN_UNITS_RANGE, LEARNING_RATE_RANGE,
    N_HIDDEN_LAYERS_RANGE,
};
use crate::strategy::{self, StrategyMode};
use crate::timeseries::TimeSeries;

#[derive(Debug, Error)]
pub enum HpoError {
    #[error("all {0} trials failed (every objective evaluation diverged)")]
    AllTrialsFailed(usize),
    #[error("need at least one trial")]
    NoTrials,
    #[error(transparent)]
    Neural(#[from] crate::neural::NeuralError),
}

type Result<T> = std::result::Result<T, HpoError>;

pub const DEFAULT_TRIALS: usize = 10;
pub const WARMUP_TRIALS: usize = 4;
pub const DEFAULT_SEEDS_PER_TRIAL: usize = 5;
/// Candidate configurations scored per expected-improvement proposal.
const EI_CANDIDATES: usize = 512;
/// Matern-5/2 lengthscale over the normalized feature cube. Kept wide so
/// dimensions the objective ignores do not wash out correlation along the
/// dimensions it uses.
const GP_LENGTHSCALE: f64 = 0.7;
const GP_NOISE_FLOOR: f64 = 1e-6;

/// Tunable domains for one network family; widths are fixed per pipeline.
#[derive(Debug, Clone)]
pub struct SearchSpace {
    pub family: Family,
    pub input_width: usize,
    pub output_width: usize,
}

impl SearchSpace {
    pub fn new(family: Family, input_width: usize, output_width: usize) -> Self {
        Self {
            family,
            input_width,
            output_width,
        }
    }

    /// Draw one configuration: log-uniform over hidden_units and
    /// learning_rate, uniform over the categorical fields.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> NetworkSpec {
        let (h_lo, h_hi) = HIDDEN_UNITS_RANGE;
        let hidden_units = (rng
            .gen_range((h_lo as f64).ln()..=(h_hi as f64).ln())
            .exp()
            .round() as usize)
            .clamp(h_lo, h_hi);
        let (lr_lo, lr_hi) = LEARNING_RATE_RANGE;
        let learning_rate = rng.gen_range(lr_lo.ln()..=lr_hi.ln()).exp();
        let activation = if self.family == Family::Mlp && rng.gen_range(0..2) == 1 {
            Activation::Relu
        } else {
            Activation::Tanh
        };
        let n_hidden_layers = if self.family == Family::Nbeats {
            rng.gen_range(N_HIDDEN_LAYERS_RANGE.0..=N_HIDDEN_LAYERS_RANGE.1)
        } else {
            1
        };
        let spec = match self.family {
            Family::Mlp => NetworkSpec::mlp(
                self.input_width,
                self.output_width,
                hidden_units,
                activation,
                learning_rate,
            ),
            Family::Lstm => NetworkSpec::lstm(
                self.input_width,
                self.output_width,
                hidden_units,
                learning_rate,
            ),
            Family::Nbeats => NetworkSpec::nbeats(
                self.input_width,
                self.output_width,
                hidden_units,
                n_hidden_layers,
                learning_rate,
            ),
        };
        spec.expect("sampled inside validated domains")
    }

    /// Local refinement draw: jitter the numeric fields of `base` in log
    /// space by `sigma` (fraction of each log-range), keep the categorical
    /// fields.
    fn perturb(&self, base: &NetworkSpec, sigma: f64, rng: &mut ChaCha8Rng) -> NetworkSpec {
        let gaussian = |rng: &mut ChaCha8Rng| {
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let (h_lo, h_hi) = HIDDEN_UNITS_RANGE;
        let h_span = (h_hi as f64).ln() - (h_lo as f64).ln();
        let hidden_units = (((base.hidden_units as f64).ln() + sigma * h_span * gaussian(rng))
            .exp()
            .round() as usize)
            .clamp(h_lo, h_hi);
        let (lr_lo, lr_hi) = LEARNING_RATE_RANGE;
        let lr_span = lr_hi.ln() - lr_lo.ln();
        let learning_rate = (base.learning_rate.ln() + sigma * lr_span * gaussian(rng))
            .exp()
            .clamp(lr_lo, lr_hi);
        let spec = match self.family {
            Family::Mlp => NetworkSpec::mlp(
                self.input_width,
                self.output_width,
                hidden_units,
                base.activation,
                learning_rate,
            ),
            Family::Lstm => NetworkSpec::lstm(
                self.input_width,
                self.output_width,
                hidden_units,
                learning_rate,
            ),
            Family::Nbeats => NetworkSpec::nbeats(
                self.input_width,
                self.output_width,
                hidden_units,
                base.n_hidden_layers,
                learning_rate,
            ),
        };
        spec.expect("perturbation clamped inside the domains")
    }

    /// Normalized feature vector: log-scaled numerics in [0,1], categoricals
    /// one-hot. Used by the surrogate only.
    fn features(&self, spec: &NetworkSpec) -> Vec<f64> {
        let (h_lo, h_hi) = HIDDEN_UNITS_RANGE;
        let h = ((spec.hidden_units as f64).ln() - (h_lo as f64).ln())
            / ((h_hi as f64).ln() - (h_lo as f64).ln());
        let (lr_lo, lr_hi) = LEARNING_RATE_RANGE;
        let lr = (spec.learning_rate.ln() - lr_lo.ln()) / (lr_hi.ln() - lr_lo.ln());
        let mut f = vec![h, lr];
        match self.family {
            Family::Mlp => {
                f.push(f64::from(spec.activation == Activation::Tanh));
                f.push(f64::from(spec.activation == Activation::Relu));
            }
            Family::Lstm => {}
            Family::Nbeats => {
                for l in N_HIDDEN_LAYERS_RANGE.0..=N_HIDDEN_LAYERS_RANGE.1 {
                    f.push(f64::from(spec.n_hidden_layers == l));
                }
            }
        }
        f
    }
}

/// One completed trial: the configuration, the per-seed validation RMSEs
/// (+inf marks a diverged evaluation), and their arithmetic mean.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub index: usize,
    pub spec: NetworkSpec,
    pub seeds: Vec<u64>,
    pub rmses: Vec<f64>,
    pub mean_rmse: f64,
    pub wall_time_ms: u128,
}

/// Bayesian optimization over `space`: `WARMUP_TRIALS` random draws, then
/// expected-improvement proposals under a Matern-5/2 GP. Each trial is the
/// mean of `n_seeds` objective evaluations (run in parallel) with the fixed
/// seed set `master_seed..master_seed+n_seeds`; a non-finite objective
/// becomes a +inf sentinel. Deterministic given `master_seed`.
pub fn optimize<F>(
    objective: F,
    space: &SearchSpace,
    n_trials: usize,
    n_seeds: usize,
    master_seed: u64,
) -> Result<(NetworkSpec, Vec<TrialRecord>)>
where
    F: Fn(&NetworkSpec, u64) -> f64 + Sync,
{
    if n_trials == 0 {
        return Err(HpoError::NoTrials);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|j| master_seed + j).collect();
    let mut history: Vec<TrialRecord> = Vec::with_capacity(n_trials);

    for index in 0..n_trials {
        let spec = if index < WARMUP_TRIALS.min(n_trials) {
            space.sample(&mut rng)
        } else {
            // the final proposals are pure exploitation: with little budget
            // left, exploration cannot pay off
            propose(space, &history, &mut rng, index + 2 >= n_trials)
        };
        let start = std::time::Instant::now();
        let rmses: Vec<f64> = seeds
            .par_iter()
            .map(|&s| {
                let v = objective(&spec, s);
                if v.is_finite() {
                    v
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        let mean_rmse = rmses.iter().sum::<f64>() / rmses.len().max(1) as f64;
        history.push(TrialRecord {
            index,
            spec,
            seeds: seeds.clone(),
            rmses,
            mean_rmse,
            wall_time_ms: start.elapsed().as_millis(),
        });
    }

    let best = history
        .iter()
        .filter(|t| t.mean_rmse.is_finite())
        .min_by(|a, b| a.mean_rmse.partial_cmp(&b.mean_rmse).unwrap())
        .ok_or(HpoError::AllTrialsFailed(n_trials))?;
    Ok((best.spec.clone(), history))
}

/// EI-maximizing proposal over a random candidate set. Failed trials are
/// imputed at the worst finite value plus one spread, steering the
/// surrogate away without distorting its scale.
fn propose(
    space: &SearchSpace,
    history: &[TrialRecord],
    rng: &mut ChaCha8Rng,
    exploit: bool,
) -> NetworkSpec {
    let finite: Vec<f64> = history
        .iter()
        .map(|t| t.mean_rmse)
        .filter(|v| v.is_finite())
        .collect();
    if finite.is_empty() {
        return space.sample(rng);
    }
    let worst = finite.iter().cloned().fold(f64::MIN, f64::max);
    let best_y = finite.iter().cloned().fold(f64::MAX, f64::min);
    let spread = (worst - best_y).max(1e-12);
    // Log-warp the targets: error objectives span orders of magnitude, and
    // on the raw scale the possible improvement near the incumbent is tiny
    // relative to the spread, pushing EI into pure exploration.
    let warp = |v: f64| (v - best_y + 0.05 * spread).ln();
    let ys: Vec<f64> = history
        .iter()
        .map(|t| {
            if t.mean_rmse.is_finite() {
                warp(t.mean_rmse)
            } else {
                warp(worst + spread)
            }
        })
        .collect();
    let xs: Vec<Vec<f64>> = history.iter().map(|t| space.features(&t.spec)).collect();

    let gp = match GaussianProcess::fit(&xs, &ys) {
        Some(gp) => gp,
        None => return space.sample(rng),
    };
    let normal = Normal::new(0.0, 1.0).unwrap();
    let y_best = (warp(best_y) - gp.mean) / gp.scale;

    let incumbent = history
        .iter()
        .filter(|t| t.mean_rmse.is_finite())
        .min_by(|a, b| a.mean_rmse.partial_cmp(&b.mean_rmse).unwrap())
        .map(|t| t.spec.clone());

    let mut best_spec: Option<(f64, NetworkSpec)> = None;
    for c in 0..EI_CANDIDATES {
        // one global draw then local refinements of the incumbent at three
        // scales, so EI can both explore and resolve the basin
        let cand = match (&incumbent, c % 4) {
            (Some(inc), 1) => space.perturb(inc, 0.15, rng),
            (Some(inc), 2) => space.perturb(inc, 0.05, rng),
            (Some(inc), 3) => space.perturb(inc, 0.015, rng),
            _ => space.sample(rng),
        };
        let (mu, var) = gp.predict(&space.features(&cand));
        let sigma = var.max(0.0).sqrt();
        let score = if exploit {
            -mu
        } else if sigma < 1e-12 {
            (y_best - mu).max(0.0)
        } else {
            let u = (y_best - mu) / sigma;
            (y_best - mu) * normal.cdf(u) + sigma * normal.pdf(u)
        };
        match &best_spec {
            Some((b, _)) if *b >= score => {}
            _ => best_spec = Some((score, cand)),
        }
    }
    best_spec.map(|(_, s)| s).expect("candidate set nonempty")
}

/// Zero-mean GP on standardized targets with a Matern-5/2 kernel.
struct GaussianProcess {
    xs: Vec<Vec<f64>>,
    alpha: DVector<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    mean: f64,
    scale: f64,
}

fn matern52(a: &[f64], b: &[f64]) -> f64 {
    let r2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let r = r2.sqrt() / GP_LENGTHSCALE;
    let s5 = 5.0f64.sqrt() * r;
    (1.0 + s5 + 5.0 * r2 / (3.0 * GP_LENGTHSCALE * GP_LENGTHSCALE)) * (-s5).exp()
}

impl GaussianProcess {
    fn fit(xs: &[Vec<f64>], ys: &[f64]) -> Option<Self> {
        let n = xs.len();
        let mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n as f64;
        let scale = var.sqrt().max(1e-12);
        let y: DVector<f64> = DVector::from_iterator(n, ys.iter().map(|v| (v - mean) / scale));

        // jitter grows with the spread of repeated configurations
        let mut dup_var = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                if xs[i] == xs[j] {
                    let d = (ys[i] - ys[j]) / scale;
                    dup_var = f64::max(dup_var, d * d / 2.0);
                }
            }
        }
        let noise = GP_NOISE_FLOOR + dup_var;

        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                k[(i, j)] = matern52(&xs[i], &xs[j]);
            }
            k[(i, i)] += noise;
        }
        let chol = Cholesky::new(k)?;
        let alpha = chol.solve(&y);
        Some(Self {
            xs: xs.to_vec(),
            alpha,
            chol,
            mean,
            scale,
        })
    }

    /// Posterior mean and variance on the standardized scale.
    fn predict(&self, x: &[f64]) -> (f64, f64) {
        let n = self.xs.len();
        let kstar = DVector::from_iterator(n, self.xs.iter().map(|xi| matern52(xi, x)));
        let mu = self.alpha.dot(&kstar);
        let v = self.chol.solve(&kstar);
        let var = matern52(x, x) - kstar.dot(&v);
        (mu, var)
    }
}

/// Objective factory for the real pipeline: fit on `train`, forecast the
/// validation window, score RMSE on the modeling (log) scale. Any stage
/// error surfaces as +inf so the optimizer records a failure sentinel.
pub fn validation_objective<'a>(
    train: &'a TimeSeries,
    val: &'a [f64],
    mode: StrategyMode,
    lag: usize,
    linear: Option<LinearSpec>,
) -> impl Fn(&NetworkSpec, u64) -> f64 + Sync + 'a {
    move |spec: &NetworkSpec, seed: u64| {
        let horizon = val.len();
        let forecast = match linear {
            None => strategy::fit_strategy(train, mode, lag, horizon, spec, seed)
                .and_then(|m| m.forecast(train.values(), horizon))
                .ok(),
            Some(lin) => hybrid::fit_hybrid(train, lin, mode, lag, horizon, spec, seed)
                .and_then(|m| m.forecast(horizon))
                .ok(),
        };
        match forecast {
            Some(fc) => evaluation::rmse(val, &fc).unwrap_or(f64::INFINITY),
            None => f64::INFINITY,
        }
    }
}

/// Audit export: one line per trial with config fields, per-seed RMSEs and
/// the mean.
pub fn history_to_csv(history: &[TrialRecord]) -> String {
    let n_seeds = history.first().map_or(0, |t| t.rmses.len());
    let mut out = String::from("trial,family,hidden_units,learning_rate,activation,n_hidden_layers");
    for j in 0..n_seeds {
        out.push_str(&format!(",rmse_seed{j}"));
    }
    out.push_str(",mean_rmse\n");
    for t in history {
        out.push_str(&format!(
            "{},{},{},{:e},{},{}",
            t.index,
            t.spec.family.as_str(),
            t.spec.hidden_units,
            t.spec.learning_rate,
            t.spec.activation.as_str(),
            t.spec.n_hidden_layers,
        ));
        for r in &t.rmses {
            out.push_str(&format!(",{r}"));
        }
        out.push_str(&format!(",{}\n", t.mean_rmse));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mlp_space() -> SearchSpace {
        SearchSpace::new(Family::Mlp, 2, 1)
    }

    #[test]
    fn samples_stay_inside_the_domains() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spaces = [
            mlp_space(),
            SearchSpace::new(Family::Lstm, 2, 1),
            SearchSpace::new(Family::Nbeats, 2, 1),
        ];
        for space in &spaces {
            for _ in 0..10_000 {
                let s = space.sample(&mut rng);
                assert!((2..=100).contains(&s.hidden_units));
                assert!(s.learning_rate >= 1e-4 && s.learning_rate <= 1e-1);
                assert!((1..=4).contains(&s.n_hidden_layers));
            }
        }
    }

    #[test]
    fn log_uniform_learning_rate_median() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let space = mlp_space();
        let mut lrs: Vec<f64> = (0..10_000).map(|_| space.sample(&mut rng).learning_rate).collect();
        lrs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = lrs[5000];
        // log-uniform median = sqrt(1e-4 * 1e-1) ~= 3.16e-3
        assert!(
            (2e-3..=5e-3).contains(&median),
            "median learning rate {median}"
        );
    }

    #[test]
    fn sampling_is_deterministic() {
        let space = SearchSpace::new(Family::Nbeats, 2, 4);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| space.sample(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
    }

    fn known_minimum(spec: &NetworkSpec, _seed: u64) -> f64 {
        let d = spec.learning_rate.ln() - 0.01f64.ln();
        d * d
    }

    #[test]
    fn finds_the_known_minimum() {
        let space = mlp_space();
        let mut hits = 0;
        for rep in 0..10 {
            let (best, history) = optimize(known_minimum, &space, 10, 1, 1000 + rep).unwrap();
            assert_eq!(history.len(), 10);
            if best.learning_rate >= 0.005 && best.learning_rate <= 0.02 {
                hits += 1;
            }
        }
        assert!(hits >= 8, "minimum located in only {hits}/10 repetitions");
    }

    #[test]
    fn constant_objective_gives_flat_history() {
        let (best, history) = optimize(|_, _| 7.5, &mlp_space(), 10, 5, 3).unwrap();
        assert_eq!(history.len(), 10);
        for t in &history {
            assert_eq!(t.mean_rmse, 7.5);
            assert_eq!(t.rmses, vec![7.5; 5]);
        }
        assert!(best.learning_rate > 0.0);
    }

    #[test]
    fn divergence_sentinels_are_screened_out() {
        let objective = |spec: &NetworkSpec, _seed: u64| {
            if spec.learning_rate > 0.05 {
                f64::NAN
            } else {
                spec.learning_rate
            }
        };
        let (best, history) = optimize(objective, &mlp_space(), 10, 2, 12).unwrap();
        assert!(best.learning_rate <= 0.05);
        assert!(history
            .iter()
            .filter(|t| t.spec.learning_rate > 0.05)
            .all(|t| t.mean_rmse.is_infinite()));
    }

    #[test]
    fn all_failures_is_an_error() {
        let result = optimize(|_, _| f64::INFINITY, &mlp_space(), 10, 2, 5);
        assert!(matches!(result, Err(HpoError::AllTrialsFailed(10))));
    }

    #[test]
    fn optimize_is_deterministic() {
        let run = || {
            let (best, history) = optimize(known_minimum, &mlp_space(), 10, 3, 77).unwrap();
            let means: Vec<f64> = history.iter().map(|t| t.mean_rmse).collect();
            (best, means)
        };
        let (b1, m1) = run();
        let (b2, m2) = run();
        assert_eq!(b1, b2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn bo_beats_or_ties_random_search() {
        let space = mlp_space();
        let mut wins = 0;
        for rep in 0..50u64 {
            let (bo_best, _) = optimize(known_minimum, &space, 10, 1, 5000 + rep).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(90_000 + rep);
            let random_best = (0..10)
                .map(|_| known_minimum(&space.sample(&mut rng), 0))
                .fold(f64::MAX, f64::min);
            if known_minimum(&bo_best, 0) <= random_best {
                wins += 1;
            }
        }
        assert!(wins >= 35, "BO matched random search in only {wins}/50 reps");
    }

    #[test]
    fn history_csv_has_one_line_per_trial() {
        let (_, history) = optimize(known_minimum, &mlp_space(), 10, 2, 8).unwrap();
        let csv = history_to_csv(&history);
        assert_eq!(csv.lines().count(), 11);
        assert!(csv.starts_with("trial,family,hidden_units"));
    }
}
