//! Command-line interface.
//!
//! Every command reads one key=value configuration file, applies the
//! global flag overrides, writes the resolved configuration into the
//! output directory, and then runs. Exit codes: 0 success, 1 a
//! numerical check failed, 2 usage/configuration/data problems, 3
//! runtime numerical failures.

use crate::adjoint::{gradient, objective, BackwardKind, GradCheckConfig, SigmaConvention};
use crate::config::RunConfig;
use crate::data::batch_normalize;
use crate::error::{Error, Result};
use crate::fractional::{mittag_leffler, solve_caputo_ivp, FracOrder, TimeGrid};
use crate::network::{forward_propagate, xavier_init};
use crate::optimizer::{IterRecord, ParamLayout};
use crate::trainer::{test, train, vanishing_gradient_experiment, TrainedModel};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(
    name = "fdnn",
    version,
    about = "Fractional-order deep neural network classifier"
)]
struct Cli {
    /// Key=value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured random seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for output artifacts
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Override the propagation mode (fractional, residual, plain)
    #[arg(long, global = true)]
    mode: Option<String>,

    /// Override the backward rule (exact, right-l1)
    #[arg(long, global = true)]
    backward: Option<String>,

    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a classifier; writes model.txt, trace.jsonl, metrics.json
    Train,
    /// Evaluate a saved model on the held-out set
    Test {
        /// Saved model file
        #[arg(long)]
        model: PathBuf,
    },
    /// Check the layer scheme against the closed-form reference
    /// solution of the scalar test equation
    ValidateL1,
    /// Verify adjoint gradients against finite differences
    Gradcheck,
    /// Compare first/last layer gradient decay across propagation modes
    VgExperiment,
    /// Write every layer state of the training set under a saved model
    Trajectory {
        /// Saved model file
        #[arg(long)]
        model: PathBuf,
    },
}

/// Command outcome distinct from hard errors: a check that ran to
/// completion but failed its thresholds exits 1, not 2/3.
enum CmdStatus {
    Pass,
    CheckFailed,
}

/// Run the CLI with explicit arguments, returning the process exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(CmdStatus::Pass) => 0,
        Ok(CmdStatus::CheckFailed) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<CmdStatus> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::parse(&std::fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = &cli.mode {
        cfg.set("mode", mode)?;
    }
    if let Some(backward) = &cli.backward {
        cfg.set("backward", backward)?;
    }
    std::fs::create_dir_all(&cli.out_dir)?;
    std::fs::write(cli.out_dir.join("config.resolved"), cfg.snapshot())?;

    match &cli.cmd {
        Command::Train => cmd_train(&cfg, &cli.out_dir),
        Command::Test { model } => cmd_test(&cfg, &cli.out_dir, model),
        Command::ValidateL1 => cmd_validate_l1(&cfg, &cli.out_dir),
        Command::Gradcheck => cmd_gradcheck(&cfg, &cli.out_dir),
        Command::VgExperiment => cmd_vg_experiment(&cfg, &cli.out_dir),
        Command::Trajectory { model } => cmd_trajectory(&cfg, &cli.out_dir, model),
    }
}

#[derive(Serialize)]
struct TraceRow<'a> {
    outer: usize,
    #[serde(flatten)]
    record: &'a IterRecord,
}

fn cmd_train(cfg: &RunConfig, out_dir: &Path) -> Result<CmdStatus> {
    let ds = cfg.load_train_dataset()?;
    let train_cfg = cfg.train_config()?;
    println!(
        "training on {} samples ({} features, {} classes), mode {}",
        ds.n_samples(),
        ds.n_features(),
        ds.n_classes(),
        train_cfg.hyper.mode
    );
    let outcome = train(&ds, &train_cfg)?;
    let sm = &outcome.model.summary;
    for (outer, (alpha, obj)) in sm
        .alpha_train_minibatch
        .iter()
        .zip(&sm.objective_per_outer)
        .enumerate()
    {
        println!("outer {outer}: objective {obj:.6e}, batch accuracy {alpha:.2}%");
    }
    println!("full training set accuracy {:.2}%", sm.alpha_train_full);

    outcome.model.save(&out_dir.join("model.txt"))?;
    let mut jsonl = std::io::BufWriter::new(std::fs::File::create(out_dir.join("trace.jsonl"))?);
    for (outer, trace) in outcome.traces.iter().enumerate() {
        for record in &trace.records {
            let row = TraceRow { outer, record };
            writeln!(jsonl, "{}", serde_json::to_string(&row).expect("rows serialize"))?;
        }
    }
    let metrics = serde_json::json!({
        "alpha_train_full": sm.alpha_train_full,
        "alpha_train_minibatch": sm.alpha_train_minibatch,
        "objective_per_outer": sm.objective_per_outer,
    });
    std::fs::write(
        out_dir.join("metrics.json"),
        serde_json::to_string_pretty(&metrics).expect("metrics serialize"),
    )?;
    Ok(CmdStatus::Pass)
}

fn cmd_test(cfg: &RunConfig, out_dir: &Path, model_path: &Path) -> Result<CmdStatus> {
    let model = TrainedModel::load(model_path)?;
    let ds = cfg.load_test_dataset()?;
    let report = test(&model, &ds)?;
    println!(
        "test accuracy {:.2}% ({} of {} correct)",
        report.alpha, report.n_correct, report.n_samples
    );
    let metrics = serde_json::json!({
        "alpha_test": report.alpha,
        "n_correct": report.n_correct,
        "n_samples": report.n_samples,
    });
    std::fs::write(
        out_dir.join("metrics.json"),
        serde_json::to_string_pretty(&metrics).expect("metrics serialize"),
    )?;
    Ok(CmdStatus::Pass)
}

fn cmd_validate_l1(cfg: &RunConfig, out_dir: &Path) -> Result<CmdStatus> {
    let gamma = FracOrder::new(cfg.gamma)?;
    let lambda = cfg.lambda;
    let u0 = cfg.u0;
    if cfg.l1_taus.is_empty() {
        return Err(Error::Config("l1_taus must list at least one step size".into()));
    }
    let mut taus = cfg.l1_taus.clone();
    taus.sort_by(|a, b| b.partial_cmp(a).expect("finite steps"));
    let tau_common = taus[0];

    let reference = |t: f64| -> Result<f64> {
        Ok(u0 * mittag_leffler(gamma.value(), lambda * t.powf(gamma.value()), 1e-12)?.value)
    };

    let mut own_errors = Vec::new();
    let mut common_errors = Vec::new();
    let mut check_error: Option<f64> = None;
    for &tau in &taus {
        let n_steps = (cfg.t_final / tau).round() as usize;
        if n_steps == 0 || (n_steps as f64 * tau - cfg.t_final).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "step size {tau} does not divide the horizon {}",
                cfg.t_final
            )));
        }
        let stride = (tau_common / tau).round() as usize;
        if (stride as f64 * tau - tau_common).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "step size {tau} does not nest in the coarsest step {tau_common}"
            )));
        }
        let grid = TimeGrid::new(tau, n_steps)?;
        let states = solve_caputo_ivp(|u| lambda * u, &ndarray::arr1(&[u0]), &grid, gamma)?;

        let mut own = 0.0_f64;
        let mut common = 0.0_f64;
        for (j, s) in states.iter().enumerate() {
            let err = (s[0] - reference(grid.time(j))?).abs();
            own = own.max(err);
            if j % stride == 0 {
                common = common.max(err);
            }
        }
        println!(
            "tau {tau}: max error {own:.8e} on its grid, {common:.8e} on the common grid"
        );
        own_errors.push(own);
        common_errors.push(common);
        if (tau - cfg.l1_check_tau).abs() < 1e-15 {
            check_error = Some(own);
        }

        if (tau - cfg.l1_check_tau).abs() < 1e-15 {
            crate::fractional::write_trajectory_csv(
                &out_dir.join("l1_solution.csv"),
                &grid,
                &states,
            )?;
            let mut f = std::io::BufWriter::new(std::fs::File::create(
                out_dir.join("l1_validation.csv"),
            )?);
            writeln!(f, "t,numeric,reference,error")?;
            for (j, s) in states.iter().enumerate() {
                let t = grid.time(j);
                let r = reference(t)?;
                writeln!(f, "{t},{:.16e},{r:.16e},{:.16e}", s[0], (s[0] - r).abs())?;
            }
        }
    }

    let mut pass = true;
    match check_error {
        Some(err) => {
            let ok = err <= cfg.l1_tolerance;
            println!(
                "tolerance at tau {}: {err:.8e} <= {:.1e}: {}",
                cfg.l1_check_tau,
                cfg.l1_tolerance,
                if ok { "pass" } else { "FAIL" }
            );
            pass &= ok;
        }
        None => {
            return Err(Error::Config(format!(
                "l1_check_tau {} is not among l1_taus",
                cfg.l1_check_tau
            )));
        }
    }
    for i in 1..common_errors.len() {
        let ratio = common_errors[i - 1] / common_errors[i];
        let ok = ratio >= cfg.l1_ratio_min;
        println!(
            "refinement {} -> {}: common-grid error ratio {ratio:.4} (>= {}): {}",
            taus[i - 1],
            taus[i],
            cfg.l1_ratio_min,
            if ok { "pass" } else { "FAIL" }
        );
        pass &= ok;
    }
    Ok(if pass { CmdStatus::Pass } else { CmdStatus::CheckFailed })
}

fn cmd_gradcheck(cfg: &RunConfig, out_dir: &Path) -> Result<CmdStatus> {
    let hyper = cfg.gc_hyper()?;
    let params = xavier_init(
        cfg.seed,
        cfg.gc_n_features,
        cfg.gc_n_classes,
        hyper.n_layers,
        hyper.activation,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1000));
    let y0 = Array2::from_shape_simple_fn((cfg.gc_n_features, cfg.gc_n_samples), || {
        rng.random_range(-1.0..1.0)
    });
    let mut c_obs = Array2::zeros((cfg.gc_n_classes, cfg.gc_n_samples));
    for i in 0..cfg.gc_n_samples {
        c_obs[[rng.random_range(0..cfg.gc_n_classes), i]] = 1.0;
    }

    let layout = ParamLayout::from_params(&params)?;
    let x0 = layout.flatten(&params)?;
    let g_exact = gradient(
        &params,
        &y0,
        &c_obs,
        &hyper,
        BackwardKind::Exact,
        SigmaConvention::Current,
    )?
    .flatten(&layout)?;

    let check_cfg = GradCheckConfig {
        seed: cfg.seed,
        ..GradCheckConfig::default()
    };
    let report = crate::adjoint::gradient_check(
        |x| objective(&layout.unflatten(x)?, &y0, &c_obs, &hyper),
        &x0,
        &g_exact,
        &layout,
        &check_cfg,
    )?;

    let mut csv = std::io::BufWriter::new(std::fs::File::create(out_dir.join("gradcheck.csv"))?);
    writeln!(csv, "variable,h,zeroth_error,first_error")?;
    for v in &report.variables {
        for ((h, e0), e1) in check_cfg
            .steps
            .iter()
            .zip(&v.zeroth_errors)
            .zip(&v.first_errors)
        {
            writeln!(csv, "{},{h},{e0:.16e},{e1:.16e}", v.name)?;
        }
    }

    println!("objective {:.8e}", report.objective);
    for v in &report.variables {
        let fmt_slope = |s: Option<f64>| match s {
            Some(s) => format!("{s:.4}"),
            None => "exact".to_string(),
        };
        println!(
            "block {}: zeroth-order slope {}, first-order slope {}: {}",
            v.name,
            fmt_slope(v.zeroth_slope),
            fmt_slope(v.first_slope),
            if v.pass { "pass" } else { "FAIL" }
        );
    }
    println!(
        "directional derivative {:.12e} vs central difference {:.12e}: rel err {:.3e}: {}",
        report.directional_reference,
        report.directional_derivative,
        report.directional_rel_err,
        if report.directional_rel_err <= check_cfg.directional_tol {
            "pass"
        } else {
            "FAIL"
        }
    );

    // informational: how far the right-L1 backward rule sits from the
    // exact gradient at this order
    let g_l1 = gradient(
        &params,
        &y0,
        &c_obs,
        &hyper,
        BackwardKind::RightL1,
        cfg.sigma_convention,
    )?
    .flatten(&layout)?;
    let diff = (&g_l1 - &g_exact).dot(&(&g_l1 - &g_exact)).sqrt();
    let base = g_exact.dot(&g_exact).sqrt();
    println!(
        "right-l1 backward deviation from exact: {:.3e} (relative, informational)",
        diff / base.max(1e-300)
    );

    Ok(if report.pass { CmdStatus::Pass } else { CmdStatus::CheckFailed })
}

fn cmd_vg_experiment(cfg: &RunConfig, out_dir: &Path) -> Result<CmdStatus> {
    let ds = cfg.load_train_dataset()?;
    let base = cfg.train_config()?;
    if cfg.modes.is_empty() {
        return Err(Error::Config("modes must list at least one mode".into()));
    }
    let report = vanishing_gradient_experiment(&ds, &base, &cfg.modes)?;

    let mut csv = std::io::BufWriter::new(std::fs::File::create(out_dir.join("vg.csv"))?);
    writeln!(csv, "mode,iteration,objective,first_layer_norm,last_layer_norm,ratio")?;
    for m in &report.per_mode {
        for (i, r) in m.records.iter().enumerate() {
            let first = r.first_layer_norm.unwrap_or(f64::NAN);
            let last = r.last_layer_norm.unwrap_or(f64::NAN);
            writeln!(
                csv,
                "{},{i},{:.16e},{first:.16e},{last:.16e},{:.16e}",
                m.mode,
                r.objective,
                first / last
            )?;
        }
    }
    for m in &report.per_mode {
        println!(
            "mode {}: median first/last layer gradient ratio {:.6e} over {} iterations",
            m.mode,
            m.median_ratio,
            m.records.len()
        );
    }
    Ok(CmdStatus::Pass)
}

fn cmd_trajectory(cfg: &RunConfig, out_dir: &Path, model_path: &Path) -> Result<CmdStatus> {
    let model = TrainedModel::load(model_path)?;
    let ds = cfg.load_train_dataset()?;
    let y0 = batch_normalize(&ds.features);
    let traj = forward_propagate(&model.params, &y0, &model.hyper)?;

    let mut csv = std::io::BufWriter::new(std::fs::File::create(out_dir.join("trajectory.csv"))?);
    let feature_names: Vec<String> = (1..=ds.n_features())
        .map(|i| format!("feature_{i}"))
        .collect();
    writeln!(csv, "layer,sample,{},label", feature_names.join(","))?;
    for (layer, state) in traj.states.iter().enumerate() {
        for i in 0..ds.n_samples() {
            let feats: Vec<String> = state
                .column(i)
                .iter()
                .map(|v| format!("{v:.16e}"))
                .collect();
            writeln!(csv, "{layer},{i},{},{}", feats.join(","), ds.label_of(i))?;
        }
    }
    println!(
        "wrote {} layer states for {} samples",
        traj.states.len(),
        ds.n_samples()
    );
    Ok(CmdStatus::Pass)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(rest: &[&str], out: &Path) -> Vec<String> {
        let mut v = vec!["fdnn".to_string()];
        v.extend(rest.iter().map(|s| s.to_string()));
        v.push("--out-dir".into());
        v.push(out.display().to_string());
        v
    }

    #[test]
    fn help_and_version_exit_zero() {
        assert_eq!(run(["fdnn", "--help"]), 0);
        assert_eq!(run(["fdnn", "--version"]), 0);
        assert_eq!(run(["fdnn", "train", "--help"]), 0);
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["fdnn"]), 2);
        assert_eq!(run(["fdnn", "no-such-command"]), 2);
        assert_eq!(run(["fdnn", "train", "--bogus"]), 2);
    }

    #[test]
    fn missing_config_file_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        let code = run(args(
            &["validate-l1", "--config", "/nonexistent/cfg"],
            dir.path(),
        ));
        assert_eq!(code, 2);
    }

    #[test]
    fn bad_override_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        let code = run(args(&["train", "--mode", "sideways"], dir.path()));
        assert_eq!(code, 2);
    }

    #[test]
    fn validate_l1_passes_and_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let code = run(args(&["validate-l1"], dir.path()));
        assert_eq!(code, 0);
        assert!(dir.path().join("config.resolved").exists());
        assert!(dir.path().join("l1_solution.csv").exists());
        let text = std::fs::read_to_string(dir.path().join("l1_validation.csv")).unwrap();
        assert!(text.starts_with("t,numeric,reference,error\n"));
        // tau = 0.005 over [0, 1] has 201 grid points
        assert_eq!(text.lines().count(), 202);
    }

    #[test]
    fn validate_l1_fails_on_unreachable_tolerance() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("cfg");
        std::fs::write(&cfg, "l1_tolerance=1e-9\n").unwrap();
        let code = run(args(
            &["validate-l1", "--config", cfg.to_str().unwrap()],
            dir.path(),
        ));
        assert_eq!(code, 1);
    }
}
