//! End-to-end acceptance checks. Each test covers one numbered
//! criterion, prints a single pass/fail line with the measured
//! quantities, and enforces its runtime budget.

use fdnn::adjoint::{gradient, objective, BackwardKind, GradCheckConfig, SigmaConvention};
use fdnn::classifier::{accuracy, cross_entropy, softmax};
use fdnn::config::{DatasetKind, RunConfig};
use fdnn::data::{batch_normalize, generate_clusters, write_csv};
use fdnn::fractional::{l1_coefficients, mittag_leffler, solve_caputo_ivp, FracOrder, TimeGrid};
use fdnn::network::{
    forward_propagate, xavier_init, Activation, HyperParams, PropagationMode,
};
use fdnn::optimizer::ParamLayout;
use fdnn::trainer::{test, train, vanishing_gradient_experiment, TrainedModel, TrainSummary};
use ndarray::{arr1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn report(criterion: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {criterion} ({name}): {} — {detail}",
        if pass { "pass" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} ({name}) failed: {detail}");
}

/// Criterion 1: the layer scheme tracks the closed-form solution of
/// d^0.5 u = -4u, u(0) = 0.5 on [0,1], and halving the step shrinks
/// the error on the shared comparison grid.
#[test]
fn criterion_1_l1_scheme_accuracy_and_refinement() {
    let start = Instant::now();
    let gamma = FracOrder::new(0.5).unwrap();
    let taus = [0.02, 0.01, 0.005, 0.0025];
    let reference = |t: f64| 0.5 * mittag_leffler(0.5, -4.0 * t.sqrt(), 1e-12).unwrap().value;

    let mut own_at_0005 = f64::NAN;
    let mut common_errors = Vec::new();
    for &tau in &taus {
        let n_steps = (1.0_f64 / tau).round() as usize;
        let grid = TimeGrid::new(tau, n_steps).unwrap();
        let states = solve_caputo_ivp(|u| -4.0 * u, &arr1(&[0.5]), &grid, gamma).unwrap();
        let stride = (taus[0] / tau).round() as usize;
        let mut own = 0.0_f64;
        let mut common = 0.0_f64;
        for (j, s) in states.iter().enumerate() {
            let err = (s[0] - reference(grid.time(j))).abs();
            own = own.max(err);
            if j % stride == 0 {
                common = common.max(err);
            }
        }
        if tau == 0.005 {
            own_at_0005 = own;
        }
        common_errors.push(common);
    }
    let ratios: Vec<f64> = (1..common_errors.len())
        .map(|i| common_errors[i - 1] / common_errors[i])
        .collect();
    let elapsed = start.elapsed().as_secs_f64();

    let pass = own_at_0005 <= 2e-2 && ratios.iter().all(|&r| r >= 1.3) && elapsed < 1.0;
    report(
        1,
        "l1 scheme accuracy and refinement",
        pass,
        &format!(
            "max error {own_at_0005:.4e} at tau 0.005 (<= 2e-2), halving ratios \
             {:.3}/{:.3}/{:.3} (>= 1.3), {elapsed:.2}s (< 1s)",
            ratios[0], ratios[1], ratios[2]
        ),
    );
}

/// Criterion 2: at order 1 the memory terms vanish and fractional
/// propagation coincides with the residual network.
#[test]
fn criterion_2_classical_limit_equivalence() {
    let start = Instant::now();
    let mut worst = 0.0_f64;
    for draw in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + draw);
        let n_f = rng.random_range(1..5);
        let n = rng.random_range(1..8);
        let n_layers = rng.random_range(1..=100);
        let params = xavier_init(draw, n_f, 2, n_layers, Activation::Tanh);
        let y0 = Array2::from_shape_simple_fn((n_f, n), || rng.random_range(-1.0..1.0));
        let base = HyperParams {
            gamma: FracOrder::new(1.0).unwrap(),
            tau: 0.2,
            n_layers,
            mode: PropagationMode::Fractional,
            activation: Activation::Tanh,
            xi_w: 0.0,
            xi_k: 0.0,
            xi_b: 0.0,
        };
        let frac = forward_propagate(&params, &y0, &base).unwrap();
        let residual = forward_propagate(
            &params,
            &y0,
            &HyperParams {
                mode: PropagationMode::Residual,
                ..base
            },
        )
        .unwrap();
        for (a, b) in frac.states.iter().zip(&residual.states) {
            let diff = (a - b).map(|v| v * v).sum().sqrt();
            let norm = b.map(|v| v * v).sum().sqrt().max(1e-300);
            worst = worst.max(diff / norm);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-12 && elapsed < 1.0;
    report(
        2,
        "classical limit equivalence",
        pass,
        &format!(
            "worst relative Frobenius gap {worst:.3e} over 20 draws (<= 1e-12), \
             {elapsed:.2}s (< 1s)"
        ),
    );
}

/// Criterion 3: finite-difference convergence rates of the exact
/// gradient on a seeded small network, per variable block, plus a
/// directional-derivative cross check.
#[test]
fn criterion_3_gradient_convergence_rates() {
    let start = Instant::now();
    let seed = 0u64;
    let (n_f, n_c, n, n_layers) = (2usize, 2usize, 10usize, 5usize);
    let hyper = HyperParams {
        gamma: FracOrder::new(0.5).unwrap(),
        tau: 0.2,
        n_layers,
        mode: PropagationMode::Fractional,
        activation: Activation::Tanh,
        xi_w: 1e-2,
        xi_k: 1e-1,
        xi_b: 1e-2,
    };
    let params = xavier_init(seed, n_f, n_c, n_layers, Activation::Tanh);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1000));
    let y0 = Array2::from_shape_simple_fn((n_f, n), || rng.random_range(-1.0..1.0));
    let mut c_obs = Array2::zeros((n_c, n));
    for i in 0..n {
        c_obs[[rng.random_range(0..n_c), i]] = 1.0;
    }

    let layout = ParamLayout::from_params(&params).unwrap();
    let x0 = layout.flatten(&params).unwrap();
    let g0 = gradient(
        &params,
        &y0,
        &c_obs,
        &hyper,
        BackwardKind::Exact,
        SigmaConvention::Current,
    )
    .unwrap()
    .flatten(&layout)
    .unwrap();

    let cfg = GradCheckConfig::default();
    let rep = fdnn::adjoint::gradient_check(
        |x| objective(&layout.unflatten(x)?, &y0, &c_obs, &hyper),
        &x0,
        &g0,
        &layout,
        &cfg,
    )
    .unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    let mut detail = String::new();
    let mut blocks_ok = true;
    for v in &rep.variables {
        blocks_ok &= v.pass;
        detail.push_str(&format!(
            "{} slopes ({:.3}, {:.3}), ",
            v.name,
            v.zeroth_slope.unwrap_or(f64::NAN),
            v.first_slope.unwrap_or(f64::NAN)
        ));
    }
    let pass = blocks_ok && rep.directional_rel_err <= 1e-6 && elapsed < 10.0;
    report(
        3,
        "gradient convergence rates",
        pass,
        &format!(
            "{detail}targets 1.0+-0.1 / 2.0+-0.2; directional rel err {:.2e} (<= 1e-6), \
             {elapsed:.2}s (< 10s)",
            rep.directional_rel_err
        ),
    );
}

/// Criterion 4: the two-class diagonal task at desk scale reaches 95%
/// train and test accuracy for at least 4 of 5 seeds.
#[test]
fn criterion_4_cls_classification_accuracy() {
    let start = Instant::now();
    let mut wins = 0;
    let mut detail = String::new();
    for seed in 0..5u64 {
        let mut cfg = RunConfig::default();
        cfg.gamma = 0.1;
        cfg.seed = seed;
        let train_ds = cfg.load_train_dataset().unwrap();
        let outcome = train(&train_ds, &cfg.train_config().unwrap()).unwrap();
        let test_ds = cfg.load_test_dataset().unwrap();
        let rep = test(&outcome.model, &test_ds).unwrap();
        let a_train = outcome.model.summary.alpha_train_full;
        let a_test = rep.alpha;
        if a_train >= 95.0 && a_test >= 95.0 {
            wins += 1;
        }
        detail.push_str(&format!("seed {seed}: {a_train:.2}%/{a_test:.2}%, "));
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = wins >= 4 && elapsed < 300.0;
    report(
        4,
        "cls classification accuracy",
        pass,
        &format!("{detail}{wins}/5 seeds >= 95% train and test, {elapsed:.1}s (< 300s)"),
    );
}

/// Criterion 5: with 70 layers, steepest descent, and regularization
/// off, the median first/last layer gradient-norm ratio orders
/// fractional >= residual >= plain on at least 4 of 5 seeds.
#[test]
fn criterion_5_vanishing_gradient_ordering() {
    let start = Instant::now();
    let mut wins = 0;
    let mut detail = String::new();
    for seed in 0..5u64 {
        let mut cfg = RunConfig::default();
        cfg.dataset = DatasetKind::Clusters;
        cfg.n_train = 2000;
        cfg.n_cluster_classes = 20;
        cfg.n_layers = 70;
        cfg.gamma = 0.2;
        cfg.tau = 0.1;
        cfg.backward = BackwardKind::RightL1;
        cfg.seed = seed;
        let ds = cfg.load_train_dataset().unwrap();
        let base = cfg.train_config().unwrap();
        let rep = vanishing_gradient_experiment(
            &ds,
            &base,
            &[
                PropagationMode::Fractional,
                PropagationMode::Residual,
                PropagationMode::Plain,
            ],
        )
        .unwrap();
        let m: Vec<f64> = rep.per_mode.iter().map(|r| r.median_ratio).collect();
        if m[0] >= m[1] && m[1] >= m[2] {
            wins += 1;
        }
        detail.push_str(&format!(
            "seed {seed}: {:.2e}/{:.2e}/{:.2e}, ",
            m[0], m[1], m[2]
        ));
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = wins >= 4 && elapsed < 600.0;
    report(
        5,
        "vanishing gradient ordering",
        pass,
        &format!("{detail}{wins}/5 seeds ordered, {elapsed:.1}s (< 600s)"),
    );
}

/// Criterion 6: the CSV ingestion pipeline runs end to end on a
/// 20-class stand-in at the small-sample scale, and fractional
/// propagation beats residual on held-out accuracy for at least 3 of
/// 5 seeds.
#[test]
fn criterion_6_csv_pipeline_fractional_advantage() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut wins = 0;
    let mut detail = String::new();
    for seed in 0..5u64 {
        let mut cfg = RunConfig::default();
        cfg.seed = seed;
        let train_path = dir.path().join(format!("train_{seed}.csv"));
        let test_path = dir.path().join(format!("test_{seed}.csv"));
        write_csv(
            &generate_clusters(560, 20, 0.9, seed, seed).unwrap(),
            &train_path,
        )
        .unwrap();
        write_csv(
            &generate_clusters(532, 20, 0.9, seed, cfg.test_seed()).unwrap(),
            &test_path,
        )
        .unwrap();

        cfg.dataset = DatasetKind::Csv;
        cfg.train_csv = Some(train_path);
        cfg.test_csv = Some(test_path);
        cfg.gamma = 0.9;
        cfg.n_layers = 35;
        cfg.m1 = 60;
        cfg.m2 = 15;
        cfg.xi_w = 1e-8;
        cfg.xi_k = 0.0;
        cfg.xi_b = 0.0;

        let train_ds = cfg.load_train_dataset().unwrap();
        let test_ds = cfg.load_test_dataset().unwrap();
        let mut alphas = Vec::new();
        for mode in ["fractional", "residual"] {
            cfg.set("mode", mode).unwrap();
            let outcome = train(&train_ds, &cfg.train_config().unwrap()).unwrap();
            let rep = test(&outcome.model, &test_ds).unwrap();
            assert!(rep.alpha.is_finite());
            alphas.push(rep.alpha);
        }
        if alphas[0] > alphas[1] {
            wins += 1;
        }
        detail.push_str(&format!("seed {seed}: {:.2}% vs {:.2}%, ", alphas[0], alphas[1]));
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = wins >= 3;
    report(
        6,
        "csv pipeline fractional advantage",
        pass,
        &format!("{detail}{wins}/5 seeds fractional ahead, {elapsed:.1}s"),
    );
}

/// Criterion 7: unit-level invariants across the numeric kernels.
#[test]
fn criterion_7_unit_level_invariants() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);

    // softmax columns sum to one under extreme logits
    let w = Array2::from_shape_simple_fn((4, 3), || rng.random_range(-1e3..1e3));
    let y = Array2::from_shape_simple_fn((3, 6), || rng.random_range(-1.0..1.0));
    let probs = softmax(&w, &y).unwrap();
    let softmax_ok = (0..probs.n_samples()).all(|i| {
        (probs.matrix().column(i).sum() - 1.0).abs() <= 1e-12
    });

    // uniform prediction scores log(n_c) cross entropy; zero weights
    // force the uniform distribution
    let mut ce_ok = true;
    for n_c in [2usize, 3, 10] {
        let w0 = Array2::zeros((n_c, 3));
        let y0 = Array2::zeros((3, 4));
        let mut c = Array2::zeros((n_c, 4));
        for i in 0..4 {
            c[[i % n_c, i]] = 1.0;
        }
        ce_ok &= (cross_entropy(&w0, &y0, &c).unwrap() - (n_c as f64).ln()).abs() <= 1e-12;
    }

    // accuracy counts mismatched one-hot columns exactly
    let mut pred = Array2::zeros((3, 8));
    let mut obs = Array2::zeros((3, 8));
    for i in 0..8 {
        pred[[i % 3, i]] = 1.0;
        obs[[if i < 5 { i % 3 } else { (i + 1) % 3 }, i]] = 1.0;
    }
    let acc = accuracy(&pred, &obs).unwrap();
    let accuracy_ok = acc.n_correct == 5 && acc.n_samples == 8;

    // batch normalization restores per-feature statistics
    let f = Array2::from_shape_simple_fn((2, 400), || rng.random_range(-5.0..15.0));
    let z = batch_normalize(&f);
    let bn_ok = z.rows().into_iter().all(|row| {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let std = (row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        mean.abs() <= 1e-12 && (std - 1.0).abs() <= 1e-6
    });

    // history coefficients decrease strictly from one toward zero
    let mut coeff_ok = true;
    for gamma in [0.1, 0.5, 0.9] {
        let a = l1_coefficients(10_000, FracOrder::new(gamma).unwrap());
        coeff_ok &= a[0] == 1.0
            && a.windows(2).all(|w| w[1] < w[0] && w[1] > 0.0);
    }

    // model serialization round-trips bit-exactly
    let hyper = HyperParams {
        gamma: FracOrder::new(0.5).unwrap(),
        tau: 0.2,
        n_layers: 4,
        mode: PropagationMode::Fractional,
        activation: Activation::Tanh,
        xi_w: 1.0 / 3.0,
        xi_k: 2.0 / 7.0,
        xi_b: 1e-2,
    };
    let model = TrainedModel {
        params: xavier_init(3, 2, 2, 4, Activation::Tanh),
        hyper,
        class_names: Some(vec!["x>y".into(), "x<=y".into()]),
        summary: TrainSummary {
            alpha_train_minibatch: vec![50.0, 97.0 + 1.0 / 3.0],
            alpha_train_full: 98.0 + 2.0 / 7.0,
            objective_per_outer: vec![0.9, 0.1 + 1e-16],
        },
    };
    let back = TrainedModel::from_text(&model.to_text()).unwrap();
    let roundtrip_ok = back == model;

    let elapsed = start.elapsed().as_secs_f64();
    let pass = softmax_ok && ce_ok && accuracy_ok && bn_ok && coeff_ok && roundtrip_ok && elapsed < 5.0;
    report(
        7,
        "unit level invariants",
        pass,
        &format!(
            "softmax {softmax_ok}, cross entropy {ce_ok}, accuracy {accuracy_ok}, \
             batch norm {bn_ok}, coefficients {coeff_ok}, round trip {roundtrip_ok}, \
             {elapsed:.2}s (< 5s)"
        ),
    );
}
