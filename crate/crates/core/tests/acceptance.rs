//! End-to-end acceptance suite. Each test prints a single summary line so a
//! full run doubles as a checklist: `cargo test --test acceptance -- --nocapture`.

use mortcast::arima::{self, ArimaOrder};
use mortcast::demographic::{
    self, fit_lee_carter, synthesize_surface, Sex, SurfaceParams, N_AGES,
};
use mortcast::evaluation::{self, mape, percentage_difference, rank_models, win_frequencies};
use mortcast::hpo::{self, SearchSpace};
use mortcast::hybrid::{self, LinearSpec};
use mortcast::neural::{grad_check, Activation, Family, NetworkSpec};
use mortcast::strategy::{forecast_recursive_with, Learner, StrategyMode};
use mortcast::timeseries::{TimeSeries, WindowMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn report(criterion: u32, name: &str, pass: bool) {
    println!(
        "criterion {criterion} ({name}): {}",
        if pass { "pass" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} ({name}) failed");
}

fn random_dataset(
    seed: u64,
    n: usize,
    input_width: usize,
    output_width: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..input_width).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    // targets correlated with the inputs so gradients stay well away from
    // zero, where relative error comparisons lose meaning
    let targets = inputs
        .iter()
        .map(|x: &Vec<f64>| {
            (0..output_width)
                .map(|k| x.iter().sum::<f64>() * 0.3 + 0.1 * k as f64)
                .collect()
        })
        .collect();
    (inputs, targets)
}

#[test]
fn criterion_01_gradient_correctness() {
    let start = Instant::now();
    let (inputs, targets) = random_dataset(1, 6, 3, 1);

    let mlp = NetworkSpec::mlp(3, 1, 5, Activation::Tanh, 0.01).unwrap();
    let mlp_err = grad_check(&mlp, &inputs, &targets, 1e-5, 5, 42).unwrap();

    let lstm = NetworkSpec::lstm(3, 1, 4, 0.01).unwrap();
    let lstm_err = grad_check(&lstm, &inputs, &targets, 1e-5, 5, 42).unwrap();

    let (inputs, targets) = random_dataset(2, 6, 3, 2);
    let nb = NetworkSpec::nbeats(3, 2, 4, 2, 0.01).unwrap();
    let nb_err = grad_check(&nb, &inputs, &targets, 1e-5, 5, 42).unwrap();

    let fast_enough = start.elapsed().as_secs() < 30;
    println!("  gradient errors: mlp {mlp_err:.3e} lstm {lstm_err:.3e} nbeats {nb_err:.3e}");
    report(
        1,
        "gradient correctness",
        mlp_err < 1e-5 && lstm_err < 1e-4 && nb_err < 1e-4 && fast_enough,
    );
}

/// A fitted AR(p) map exposed through the generic learner interface: the
/// recursive strategy driver iterating it must reproduce the ARIMA
/// forecaster's own iterated conditional expectations.
struct ArMap {
    intercept: f64,
    phi: Vec<f64>,
}

impl Learner for ArMap {
    fn output_width(&self) -> usize {
        1
    }

    fn predict(&self, input: &[f64]) -> Vec<f64> {
        // input is oldest-first; phi[i] multiplies the value i+1 steps back
        let mut y = self.intercept;
        for (i, phi) in self.phi.iter().enumerate() {
            y += phi * input[input.len() - 1 - i];
        }
        vec![y]
    }
}

#[test]
fn criterion_02_recursive_strategy_matches_arima() {
    let cases: [(&[f64], u64); 10] = [
        (&[0.7], 1),
        (&[0.5], 2),
        (&[-0.4], 3),
        (&[0.9], 4),
        (&[0.3], 5),
        (&[0.6, -0.2], 6),
        (&[1.2, -0.5], 7),
        (&[0.4, 0.3], 8),
        (&[-0.3, 0.2], 9),
        (&[0.8, -0.4], 10),
    ];
    let mut worst: f64 = 0.0;
    for (ar, seed) in cases {
        let values = arima::simulate_arma(ar, &[], 0.5, 1.0, 200, seed);
        let series = TimeSeries::new(values, 0).unwrap();
        let model = arima::fit(&series, ArimaOrder::new(ar.len(), 0, 0).unwrap()).unwrap();
        let map = ArMap {
            intercept: model.intercept,
            phi: model.ar_coeffs.clone(),
        };
        for horizon in [1, 4, 12] {
            let via_strategy =
                forecast_recursive_with(&map, series.values(), ar.len(), horizon).unwrap();
            let via_arima = model.forecast(horizon).unwrap();
            for (a, b) in via_strategy.iter().zip(&via_arima) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    report(2, "recursive strategy matches ARIMA oracle", worst < 1e-10);
}

#[test]
fn criterion_03_hybrid_additivity() {
    let mut worst: f64 = 0.0;
    for seed in [11, 22, 33] {
        let values = arima::simulate_arma(&[0.7, -0.2], &[0.3], 1.0, 0.5, 80, seed);
        let series = TimeSeries::new(values, 1950).unwrap();
        for mode in [StrategyMode::Recursive, StrategyMode::Direct, StrategyMode::Mimo] {
            let horizon = 6;
            let spec = NetworkSpec::mlp(
                3,
                mode.learner_output_width(horizon),
                4,
                Activation::Tanh,
                0.01,
            )
            .unwrap();
            let model = hybrid::fit_hybrid(
                &series,
                LinearSpec::Order(ArimaOrder::new(1, 0, 1).unwrap()),
                mode,
                3,
                horizon,
                &spec,
                seed,
            )
            .unwrap();
            let combined = model.forecast(horizon).unwrap();
            let linear = model.linear.forecast(horizon).unwrap();
            let residual = model
                .nonlinear
                .forecast(model.residual_series.values(), horizon)
                .unwrap();
            for h in 0..horizon {
                worst = worst.max((combined[h] - (linear[h] + residual[h])).abs());
            }
        }
    }
    report(3, "hybrid forecast additivity", worst < 1e-12);
}

#[test]
fn criterion_04_decomposition_identity_and_differencing_round_trip() {
    let mut worst_identity: f64 = 0.0;
    let mut worst_round_trip: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..60).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let series = TimeSeries::new(values.clone(), 0).unwrap();

        // observed = fitted + residual at every fitted index
        let model = arima::fit(&series, ArimaOrder::new(2, 0, 1).unwrap()).unwrap();
        for (i, (f, r)) in model.fitted.iter().zip(&model.residuals).enumerate() {
            worst_identity = worst_identity.max((values[model.fitted_start + i] - (f + r)).abs());
        }

        // d-fold difference then integrate recovers the series exactly
        for d in 1..=2usize {
            let mut initial = Vec::new();
            let mut level = series.clone();
            for _ in 0..d {
                initial.push(level.values()[0]);
                level = arima::difference(&level, 1).unwrap();
            }
            let back = arima::integrate(level.values(), &initial);
            assert_eq!(back.len(), values.len());
            for (a, b) in back.iter().zip(&values) {
                worst_round_trip = worst_round_trip.max((a - b).abs());
            }
        }
    }
    report(
        4,
        "decomposition identity and differencing round trip",
        worst_identity < 1e-12 && worst_round_trip < 1e-12,
    );
}

#[test]
fn criterion_05_window_counts_exhaustive() {
    let mut ok = true;
    for n in 1..=200usize {
        let series = TimeSeries::new(vec![1.0; n], 0).unwrap();
        for lag in 1..=5usize {
            let rec = series.make_windows(lag, WindowMode::Recursive);
            match rec {
                Ok(ds) => ok &= n >= lag + 1 && ds.inputs.len() == n - lag,
                Err(_) => ok &= n < lag + 1,
            }
            for h in 1..=12usize {
                match series.make_windows(lag, WindowMode::Direct { offset: h }) {
                    Ok(ds) => ok &= n + 1 >= lag + h + 1 && ds.inputs.len() == n - lag - h + 1,
                    Err(_) => ok &= n < lag + h,
                }
                match series.make_windows(lag, WindowMode::Mimo { horizon: h }) {
                    Ok(ds) => ok &= n + 1 >= lag + h + 1 && ds.inputs.len() == n - lag - h + 1,
                    Err(_) => ok &= n < lag + h,
                }
            }
        }
    }
    report(5, "window count formulas", ok);
}

#[test]
fn criterion_06_percentage_difference_cross_check() {
    let pd = percentage_difference(1.994, 1.905).unwrap();
    report(
        6,
        "percentage difference cross-check",
        (4.39..=4.49).contains(&pd) && (pd - 4.44).abs() <= 0.05,
    );
}

/// Published per-dataset MAPE of the three hybrid families under the
/// Direct / MIMO / Recursive strategies; twelve datasets
/// (Australia, France, Japan, Portugal x Female, Male, Total).
const STRATEGY_GRID_LSTM: [[f64; 3]; 12] = [
    [2.154, 2.101, 2.072],
    [2.029, 1.970, 1.988],
    [1.495, 1.469, 1.483],
    [1.574, 1.506, 1.607],
    [2.251, 2.283, 2.220],
    [1.322, 1.680, 1.346],
    [2.103, 2.006, 1.920],
    [2.095, 2.039, 2.026],
    [1.772, 1.700, 1.575],
    [3.025, 3.018, 3.125],
    [3.144, 3.328, 3.038],
    [2.292, 2.221, 2.134],
];

const STRATEGY_GRID_MLP: [[f64; 3]; 12] = [
    [2.141, 2.033, 2.185],
    [1.974, 1.923, 1.982],
    [1.623, 1.497, 1.470],
    [1.628, 1.552, 1.525],
    [2.277, 2.172, 2.418],
    [1.360, 1.679, 1.398],
    [2.104, 2.033, 1.949],
    [2.175, 2.042, 2.034],
    [1.720, 1.703, 1.474],
    [3.061, 3.140, 2.850],
    [3.339, 3.294, 3.149],
    [2.344, 2.319, 2.299],
];

const STRATEGY_GRID_NBEATS: [[f64; 3]; 12] = [
    [2.420, 2.185, 2.042],
    [2.428, 2.391, 2.197],
    [1.519, 1.521, 1.607],
    [1.565, 1.497, 1.502],
    [2.115, 2.170, 2.222],
    [1.368, 1.516, 1.508],
    [2.116, 2.594, 1.998],
    [1.686, 1.786, 2.236],
    [2.122, 2.113, 1.629],
    [3.003, 3.005, 2.851],
    [3.212, 3.269, 2.997],
    [2.447, 2.317, 2.597],
];

#[test]
fn criterion_07_win_frequency_arithmetic() {
    let expected_recursive = [58.33, 66.67, 50.00];
    let mut ok = true;
    for (grid, expected) in [
        (&STRATEGY_GRID_LSTM, expected_recursive[0]),
        (&STRATEGY_GRID_MLP, expected_recursive[1]),
        (&STRATEGY_GRID_NBEATS, expected_recursive[2]),
    ] {
        let rows: Vec<Vec<f64>> = grid.iter().map(|r| r.to_vec()).collect();
        let freqs = win_frequencies(&rows).unwrap();
        // column 2 is the recursive strategy
        ok &= (freqs[2] - expected).abs() < 0.01;
    }
    report(7, "strategy win frequencies", ok);
}

/// Published per-dataset MAPE for thirteen competing models; rows are the
/// models in the order listed in `MODEL_NAMES`, columns the twelve datasets.
const MODEL_NAMES: [&str; 13] = [
    "lee-carter",
    "plat",
    "arima",
    "lstm-direct",
    "lstm-mimo",
    "lstm-recursive",
    "mlp-direct",
    "mlp-mimo",
    "mlp-recursive",
    "nbeats-direct",
    "nbeats-mimo",
    "nbeats-recursive",
    "arima-lstm-recursive",
];

const MODEL_GRID: [[f64; 12]; 13] = [
    [3.823, 4.640, 3.594, 2.247, 2.868, 2.258, 6.870, 3.419, 4.367, 3.554, 5.575, 4.134],
    [3.676, 5.385, 4.286, 4.144, 5.276, 4.364, 5.256, 4.732, 4.435, 5.391, 5.704, 5.173],
    [2.166, 2.376, 1.523, 1.563, 2.275, 1.575, 2.418, 1.587, 1.964, 2.957, 3.161, 2.598],
    [4.614, 6.170, 5.316, 4.545, 5.735, 4.962, 3.087, 4.344, 3.831, 7.348, 7.458, 7.459],
    [4.870, 6.145, 5.142, 4.720, 5.574, 5.048, 3.421, 4.552, 3.755, 7.395, 7.627, 7.480],
    [4.647, 6.323, 5.496, 3.832, 6.114, 4.628, 2.139, 3.863, 2.541, 7.532, 7.776, 7.202],
    [3.506, 4.602, 3.648, 3.384, 4.378, 3.782, 2.679, 3.436, 2.887, 5.799, 6.238, 5.939],
    [3.193, 3.493, 2.693, 3.459, 4.267, 3.666, 3.451, 3.225, 3.624, 4.914, 5.472, 6.035],
    [6.417, 5.595, 5.725, 3.635, 4.038, 2.842, 4.666, 4.696, 3.308, 5.263, 9.321, 5.879],
    [3.431, 5.345, 3.986, 3.110, 5.011, 3.657, 2.740, 3.385, 3.285, 6.132, 7.414, 6.381],
    [5.495, 7.434, 5.972, 5.006, 6.419, 4.749, 4.800, 4.555, 4.479, 8.490, 9.147, 9.143],
    [31.597, 5.988, 3.918, 3.409, 5.284, 3.723, 2.281, 3.960, 3.873, 5.131, 6.517, 6.234],
    [2.072, 1.988, 1.483, 1.607, 2.220, 1.346, 1.920, 2.026, 1.575, 3.125, 3.038, 2.134],
];

#[test]
fn criterion_08_rank_reproduction() {
    let grid: Vec<Vec<f64>> = MODEL_GRID.iter().map(|r| r.to_vec()).collect();
    let result = rank_models(&grid).unwrap();
    assert_eq!(result.used_datasets.len(), 12);
    assert!(!result.dropped_incomplete);
    let mut order: Vec<usize> = (0..MODEL_NAMES.len()).collect();
    order.sort_by(|&a, &b| result.mean_ranks[a].partial_cmp(&result.mean_ranks[b]).unwrap());
    let best = MODEL_NAMES[order[0]];
    let second = MODEL_NAMES[order[1]];
    report(
        8,
        "mean-rank reproduction",
        best == "arima-lstm-recursive" && second == "arima",
    );
}

/// AR(2) signal plus a bounded nonlinear residual cycle: a quadratic map with
/// a stable period-2 orbit and small dithering. The cycle is invisible to a
/// linear model but stable under recursive rollout, which is exactly the
/// structure the hybrid is meant to exploit.
fn nonlinear_series(seed: u64, n: usize) -> Vec<f64> {
    let linear = arima::simulate_arma(&[1.2, -0.5], &[], 1.5, 0.03, n, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let mut m = 0.4_f64;
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        m = 1.0 - 1.1 * m * m + 0.01 * (rng.gen_range(0.0_f64..1.0) - 0.5);
        m = m.clamp(-1.2, 1.2);
        out.push(linear[t] + 0.5 * m);
    }
    out
}

#[test]
fn criterion_09_hybrid_beats_arima_on_nonlinear_series() {
    let start = Instant::now();
    let horizon = 3usize;
    let n = 100usize;
    let spec = NetworkSpec::lstm(2, 1, 8, 0.01).unwrap();
    let mut wins = 0;
    for seed in 1..=20u64 {
        let z = nonlinear_series(seed, n);
        let (train_values, test) = z.split_at(n - horizon);
        let train = TimeSeries::new(train_values.to_vec(), 0).unwrap();

        let order = arima::select_order(&train, 2, 1, 1).unwrap();
        let arima_forecast = arima::fit(&train, order).unwrap().forecast(horizon).unwrap();

        // average over independent training seeds to damp initialization noise
        let runs: Vec<Vec<f64>> = (0..5)
            .map(|i| {
                hybrid::fit_hybrid(
                    &train,
                    LinearSpec::Auto { max_p: 2, max_d: 1, max_q: 1 },
                    StrategyMode::Recursive,
                    2,
                    horizon,
                    &spec,
                    seed + 1000 * i,
                )
                .unwrap()
                .forecast(horizon)
                .unwrap()
            })
            .collect();
        let hybrid_forecast: Vec<f64> = (0..horizon)
            .map(|h| runs.iter().map(|f| f[h]).sum::<f64>() / runs.len() as f64)
            .collect();

        if mape(test, &hybrid_forecast).unwrap() < mape(test, &arima_forecast).unwrap() {
            wins += 1;
        }
    }
    let fast_enough = start.elapsed().as_secs() < 900;
    println!("  hybrid wins: {wins}/20 in {:?}", start.elapsed());
    report(
        9,
        "hybrid beats plain ARIMA on nonlinear synthetic data",
        wins >= 14 && fast_enough,
    );
}

#[test]
fn criterion_10_lee_carter_round_trip() {
    // noise-free surface with non-uniform loadings: exact recovery
    let mut params = SurfaceParams::default_for(40);
    params.noise_sigma = 0.0;
    let raw: Vec<f64> = (0..N_AGES).map(|x| 1.0 + (x as f64 / 25.0).sin().abs()).collect();
    let total: f64 = raw.iter().sum();
    params.b = raw.iter().map(|v| v / total).collect();
    let surface = synthesize_surface(&params, 0).unwrap();
    let fit = fit_lee_carter(&surface, Sex::Total).unwrap();
    let mut worst: f64 = 0.0;
    for x in 0..N_AGES {
        worst = worst.max((fit.b[x] - params.b[x]).abs());
    }
    for t in 0..params.k.len() {
        worst = worst.max((fit.k[t] - params.k[t]).abs());
    }
    let exact = worst < 1e-6 && (fit.drift - params.drift()).abs() < 1e-6;

    // noisy surfaces: drift recovered within three standard errors
    let noisy_params = SurfaceParams::default_for(50);
    let mut drift_ok = true;
    for seed in [10, 20, 30, 40, 50] {
        let noisy = synthesize_surface(&noisy_params, seed).unwrap();
        let f = fit_lee_carter(&noisy, Sex::Total).unwrap();
        drift_ok &= (f.drift - noisy_params.drift()).abs() <= 3.0 * f.drift_se.max(1e-9);
    }
    report(10, "Lee-Carter round trip", exact && drift_ok);
}

#[test]
fn criterion_11_hpo_sanity() {
    // every sampled configuration stays inside the documented domains
    let spaces = [
        SearchSpace::new(Family::Mlp, 2, 1),
        SearchSpace::new(Family::Lstm, 2, 1),
        SearchSpace::new(Family::Nbeats, 2, 1),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut contained = true;
    for space in &spaces {
        for _ in 0..100_000 {
            let s = space.sample(&mut rng);
            contained &= (2..=100).contains(&s.hidden_units);
            contained &= (1e-4..=1e-1).contains(&s.learning_rate);
            if space.family == Family::Nbeats {
                contained &= (1..=4).contains(&s.n_hidden_layers);
            }
        }
    }

    // paired comparison against random search on a known-minimum objective
    let objective = |spec: &NetworkSpec, _seed: u64| {
        let d = spec.learning_rate.ln() - 0.01f64.ln();
        d * d
    };
    let space = SearchSpace::new(Family::Mlp, 2, 1);
    let mut wins = 0;
    for rep in 0..50u64 {
        let (bo_best, _) = hpo::optimize(objective, &space, 10, 1, 5000 + rep).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(90_000 + rep);
        let random_best = (0..10)
            .map(|_| objective(&space.sample(&mut rng), 0))
            .fold(f64::MAX, f64::min);
        if objective(&bo_best, 0) <= random_best {
            wins += 1;
        }
    }
    println!("  BO wins or ties: {wins}/50");
    report(11, "HPO domain containment and BO quality", contained && wins >= 35);
}

// Keep an eye on the helper modules the suite leans on: a compile error here
// is cheaper to diagnose than one inside a criterion.
#[test]
fn suite_helpers_compile_and_agree() {
    let freqs = win_frequencies(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
    assert_eq!(freqs, vec![50.0, 50.0]);
    let _ = evaluation::rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
    let _ = demographic::KEY_AGES;
}
