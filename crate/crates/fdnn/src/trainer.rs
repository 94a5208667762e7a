//! Training loop, model persistence, test evaluation, and the layer
//! gradient-decay experiment.
//!
//! Training runs m_1 outer rounds. Each round draws a fresh minibatch,
//! batch-normalizes it, and hands the warm-started parameters to a
//! fresh optimizer for up to m_2 iterations. Test evaluation normalizes
//! the whole evaluation set.

use crate::adjoint::{gradient, objective, BackwardKind, SigmaConvention};
use crate::classifier::{accuracy, predict, softmax, Accuracy};
use crate::data::{batch_normalize, sample_minibatch, Dataset};
use crate::error::{Error, Result};
use crate::network::{
    forward_propagate, xavier_init, HyperParams, NetworkParams, PropagationMode,
};
use crate::optimizer::{
    bfgs_minimize, steepest_descent_minimize, ArmijoConfig, IterRecord, OptConfig, OptTrace,
    ParamLayout,
};
use ndarray::{Array1, Array2};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Outer optimizer selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Bfgs,
    Steepest,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Bfgs => "bfgs",
            OptimizerKind::Steepest => "steepest",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bfgs" => Ok(OptimizerKind::Bfgs),
            "steepest" => Ok(OptimizerKind::Steepest),
            other => Err(Error::Config(format!(
                "unknown optimizer '{other}' (expected bfgs or steepest)"
            ))),
        }
    }
}

/// Everything a training run needs besides the data.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub hyper: HyperParams,
    pub m1: usize,
    pub m2: usize,
    pub batch_fraction: f64,
    pub seed: u64,
    pub backward: BackwardKind,
    pub sigma_convention: SigmaConvention,
    pub optimizer: OptimizerKind,
    pub grad_tol: f64,
    pub armijo: ArmijoConfig,
}

impl TrainConfig {
    pub fn new(hyper: HyperParams) -> Self {
        TrainConfig {
            hyper,
            m1: 6,
            m2: 30,
            batch_fraction: 0.5,
            seed: 0,
            backward: BackwardKind::Exact,
            sigma_convention: SigmaConvention::Current,
            optimizer: OptimizerKind::Bfgs,
            grad_tol: 1e-6,
            armijo: ArmijoConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.m1 == 0 || self.m2 == 0 {
            return Err(Error::InvalidArgument(
                "training needs at least one outer round and one inner iteration".into(),
            ));
        }
        if !(self.grad_tol.is_finite() && self.grad_tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "gradient tolerance must be positive, got {}",
                self.grad_tol
            )));
        }
        Ok(())
    }
}

/// Accuracy and objective history across the outer rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub alpha_train_minibatch: Vec<f64>,
    pub alpha_train_full: f64,
    pub objective_per_outer: Vec<f64>,
}

/// Trained parameters plus the settings needed to run them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: NetworkParams,
    pub hyper: HyperParams,
    pub class_names: Option<Vec<String>>,
    pub summary: TrainSummary,
}

/// A finished training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub traces: Vec<OptTrace>,
}

fn evaluate_accuracy(
    params: &NetworkParams,
    hyper: &HyperParams,
    normalized_features: &Array2<f64>,
    labels: &Array2<f64>,
) -> Result<Accuracy> {
    let traj = forward_propagate(params, normalized_features, hyper)?;
    let probs = softmax(&params.w, traj.final_state())?;
    accuracy(&predict(&probs), labels)
}

/// Train a network on the dataset. Initialization, batch selection, and
/// therefore the result are fully determined by the seed.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ds.n_samples() == 0 {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let hyper = cfg.hyper;
    let params = xavier_init(
        cfg.seed,
        ds.n_features(),
        ds.n_classes(),
        hyper.n_layers,
        hyper.activation,
    );
    let layout = ParamLayout::from_params(&params)?;
    let mut x = layout.flatten(&params)?;

    let mut traces = Vec::with_capacity(cfg.m1);
    let mut alpha_train_minibatch = Vec::with_capacity(cfg.m1);
    let mut objective_per_outer = Vec::with_capacity(cfg.m1);

    for outer in 0..cfg.m1 {
        let wrap = |e: Error| Error::TrainFailure {
            outer,
            source: Box::new(e),
        };
        let batch = sample_minibatch(ds, cfg.batch_fraction, cfg.seed, outer as u64)?;
        let y0 = batch_normalize(&batch.features);
        let c = &batch.labels;

        // an exploding forward pass during a trial step is a rejection,
        // not an error; the line search backtracks past it
        let f = |xv: &Array1<f64>| match objective(&layout.unflatten(xv)?, &y0, c, &hyper) {
            Ok(v) => Ok(v),
            Err(Error::NonFiniteState { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        };
        let g = |xv: &Array1<f64>| {
            gradient(
                &layout.unflatten(xv)?,
                &y0,
                c,
                &hyper,
                cfg.backward,
                cfg.sigma_convention,
            )?
            .flatten(&layout)
        };
        let opt_cfg = OptConfig {
            max_iters: cfg.m2,
            grad_tol: cfg.grad_tol,
            armijo: cfg.armijo,
        };
        let outcome = match cfg.optimizer {
            OptimizerKind::Bfgs => bfgs_minimize(f, g, &x, &opt_cfg, Some(&layout)),
            OptimizerKind::Steepest => {
                steepest_descent_minimize(f, g, &x, &opt_cfg, Some(&layout))
            }
        }
        .map_err(wrap)?;
        x = outcome.x;

        let current = layout.unflatten(&x)?;
        let acc = evaluate_accuracy(&current, &hyper, &y0, c).map_err(wrap)?;
        alpha_train_minibatch.push(acc.percent);
        objective_per_outer.push(outcome.objective);
        traces.push(outcome.trace);
    }

    let params = layout.unflatten(&x)?;
    let full = batch_normalize(&ds.features);
    let alpha_train_full = evaluate_accuracy(&params, &hyper, &full, &ds.labels)?.percent;

    Ok(TrainOutcome {
        model: TrainedModel {
            params,
            hyper,
            class_names: ds.class_names.clone(),
            summary: TrainSummary {
                alpha_train_minibatch,
                alpha_train_full,
                objective_per_outer,
            },
        },
        traces,
    })
}

/// Test-set evaluation result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestReport {
    pub n_correct: usize,
    pub n_samples: usize,
    pub alpha: f64,
}

/// Evaluate a trained model on a fresh set. The whole set is batch
/// normalized. When both sides carry class names, test labels are
/// matched to the model's class order by name.
pub fn test(model: &TrainedModel, ds: &Dataset) -> Result<TestReport> {
    if ds.n_features() != model.params.n_features() {
        return Err(Error::DimensionMismatch {
            context: "test evaluation",
            detail: format!(
                "set has {} features but model expects {}",
                ds.n_features(),
                model.params.n_features()
            ),
        });
    }
    let labels = match (&model.class_names, &ds.class_names) {
        (Some(model_names), Some(ds_names)) => {
            let mut mapped = Array2::zeros((model.params.n_classes(), ds.n_samples()));
            let to_model: Vec<usize> = ds_names
                .iter()
                .map(|name| {
                    model_names.iter().position(|m| m == name).ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "test label '{name}' is not among the model's classes"
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            for i in 0..ds.n_samples() {
                mapped[[to_model[ds.label_of(i)], i]] = 1.0;
            }
            mapped
        }
        _ => {
            if ds.n_classes() != model.params.n_classes() {
                return Err(Error::DimensionMismatch {
                    context: "test evaluation",
                    detail: format!(
                        "set has {} classes but model expects {}",
                        ds.n_classes(),
                        model.params.n_classes()
                    ),
                });
            }
            ds.labels.clone()
        }
    };
    let normalized = batch_normalize(&ds.features);
    let acc = evaluate_accuracy(&model.params, &model.hyper, &normalized, &labels)?;
    Ok(TestReport {
        n_correct: acc.n_correct,
        n_samples: acc.n_samples,
        alpha: acc.percent,
    })
}

/// Per-mode result of the gradient-decay experiment.
#[derive(Debug, Clone)]
pub struct VgModeReport {
    pub mode: PropagationMode,
    pub median_ratio: f64,
    pub records: Vec<IterRecord>,
}

/// Gradient-decay report across propagation modes.
#[derive(Debug, Clone)]
pub struct VgReport {
    pub per_mode: Vec<VgModeReport>,
}

/// Compare how strongly the first layer's gradient survives relative
/// to the last layer's across propagation modes. Runs steepest descent
/// with regularization off (so layer gradients are pure data terms) and
/// the same seed everywhere, then reports the median over iterations of
/// ||grad layer 0|| / ||grad layer N-1||.
pub fn vanishing_gradient_experiment(
    ds: &Dataset,
    base: &TrainConfig,
    modes: &[PropagationMode],
) -> Result<VgReport> {
    let mut per_mode = Vec::with_capacity(modes.len());
    for &mode in modes {
        let mut cfg = base.clone();
        cfg.hyper.mode = mode;
        cfg.hyper.xi_w = 0.0;
        cfg.hyper.xi_k = 0.0;
        cfg.hyper.xi_b = 0.0;
        cfg.optimizer = OptimizerKind::Steepest;
        let outcome = train(ds, &cfg)?;
        let records: Vec<IterRecord> = outcome
            .traces
            .into_iter()
            .flat_map(|t| t.records)
            .collect();
        let mut ratios: Vec<f64> = records
            .iter()
            .filter_map(|r| match (r.first_layer_norm, r.last_layer_norm) {
                (Some(f), Some(l)) => {
                    let ratio = f / l;
                    ratio.is_finite().then_some(ratio)
                }
                _ => None,
            })
            .collect();
        if ratios.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no finite layer gradient ratios recorded for mode {mode}"
            )));
        }
        ratios.sort_by(|a, b| a.partial_cmp(b).expect("finite ratios"));
        let mid = ratios.len() / 2;
        let median_ratio = if ratios.len() % 2 == 1 {
            ratios[mid]
        } else {
            0.5 * (ratios[mid - 1] + ratios[mid])
        };
        per_mode.push(VgModeReport {
            mode,
            median_ratio,
            records,
        });
    }
    Ok(VgReport { per_mode })
}

const MODEL_HEADER: &str = "fdnn-model v1";

impl TrainedModel {
    /// Serialize as self-describing text. Floats carry 17 significant
    /// digits, so parsing the text back reproduces them bit for bit.
    pub fn to_text(&self) -> String {
        use std::fmt::Write as _;
        let p = &self.params;
        let h = &self.hyper;
        let mut s = String::new();
        let _ = writeln!(s, "{MODEL_HEADER}");
        let _ = writeln!(s, "mode {}", h.mode);
        let _ = writeln!(s, "activation {}", h.activation);
        let _ = writeln!(s, "gamma {:.16e}", h.gamma.value());
        let _ = writeln!(s, "tau {:.16e}", h.tau);
        let _ = writeln!(s, "n_layers {}", h.n_layers);
        let _ = writeln!(s, "n_features {}", p.n_features());
        let _ = writeln!(s, "n_classes {}", p.n_classes());
        let _ = writeln!(s, "xi_w {:.16e}", h.xi_w);
        let _ = writeln!(s, "xi_k {:.16e}", h.xi_k);
        let _ = writeln!(s, "xi_b {:.16e}", h.xi_b);
        if let Some(names) = &self.class_names {
            for name in names {
                let _ = writeln!(s, "class {name}");
            }
        }
        let row = |vals: Vec<String>| vals.join(" ");
        let _ = writeln!(s, "w");
        for r in p.w.rows() {
            let _ = writeln!(s, "{}", row(r.iter().map(|v| format!("{v:.16e}")).collect()));
        }
        for (j, k) in p.k.iter().enumerate() {
            let _ = writeln!(s, "k {j}");
            for r in k.rows() {
                let _ = writeln!(s, "{}", row(r.iter().map(|v| format!("{v:.16e}")).collect()));
            }
        }
        let _ = writeln!(s, "b");
        let _ = writeln!(s, "{}", row(p.b.iter().map(|v| format!("{v:.16e}")).collect()));
        let sm = &self.summary;
        let _ = writeln!(
            s,
            "summary_alpha_minibatch {}",
            row(sm.alpha_train_minibatch.iter().map(|v| format!("{v:.16e}")).collect())
        );
        let _ = writeln!(s, "summary_alpha_full {:.16e}", sm.alpha_train_full);
        let _ = writeln!(
            s,
            "summary_objective {}",
            row(sm.objective_per_outer.iter().map(|v| format!("{v:.16e}")).collect())
        );
        let _ = writeln!(s, "end");
        s
    }

    pub fn from_text(text: &str) -> Result<TrainedModel> {
        let mut cur = Cursor::new(text);
        cur.expect(MODEL_HEADER)?;
        let mode: PropagationMode = cur.parse_value("mode")?;
        let activation = cur.parse_value("activation")?;
        let gamma_raw: f64 = cur.parse_value("gamma")?;
        let (line, _) = cur.last;
        let gamma = crate::fractional::FracOrder::new(gamma_raw)
            .map_err(|e| model_err(line, e.to_string()))?;
        let tau: f64 = cur.parse_value("tau")?;
        let n_layers: usize = cur.parse_value("n_layers")?;
        let n_features: usize = cur.parse_value("n_features")?;
        let n_classes: usize = cur.parse_value("n_classes")?;
        let xi_w: f64 = cur.parse_value("xi_w")?;
        let xi_k: f64 = cur.parse_value("xi_k")?;
        let xi_b: f64 = cur.parse_value("xi_b")?;

        let mut class_names = Vec::new();
        while let Some(rest) = cur.peek_prefix("class ") {
            class_names.push(rest.to_string());
            cur.advance();
        }

        cur.expect("w")?;
        let w = cur.read_matrix(n_classes, n_features)?;
        let mut k = Vec::with_capacity(n_layers);
        for j in 0..n_layers {
            cur.expect(&format!("k {j}"))?;
            k.push(cur.read_matrix(n_features, n_features)?);
        }
        cur.expect("b")?;
        let b = cur.read_row(Some(n_layers))?;

        let alpha_train_minibatch = cur.tagged_row("summary_alpha_minibatch")?;
        let alpha_train_full: f64 = cur.parse_value("summary_alpha_full")?;
        let objective_per_outer = cur.tagged_row("summary_objective")?;
        cur.expect("end")?;

        let hyper = HyperParams {
            gamma,
            tau,
            n_layers,
            mode,
            activation,
            xi_w,
            xi_k,
            xi_b,
        };
        let params = NetworkParams { w, k, b };
        hyper.validate().map_err(|e| model_err(cur.last.0, e.to_string()))?;
        params.validate().map_err(|e| model_err(cur.last.0, e.to_string()))?;
        Ok(TrainedModel {
            params,
            hyper,
            class_names: (!class_names.is_empty()).then_some(class_names),
            summary: TrainSummary {
                alpha_train_minibatch,
                alpha_train_full,
                objective_per_outer,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TrainedModel> {
        TrainedModel::from_text(&std::fs::read_to_string(path)?)
    }
}

fn model_err(line: usize, msg: String) -> Error {
    Error::ModelParse { line, msg }
}

/// Line cursor over the model text, skipping blank lines and tracking
/// 1-based line numbers for errors.
struct Cursor<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
    last: (usize, &'a str),
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end()))
            .filter(|(_, l)| !l.trim().is_empty())
            .collect();
        Cursor {
            lines,
            pos: 0,
            last: (0, ""),
        }
    }

    fn next(&mut self) -> Result<(usize, &'a str)> {
        let item = *self
            .lines
            .get(self.pos)
            .ok_or_else(|| model_err(self.last.0 + 1, "unexpected end of model text".into()))?;
        self.pos += 1;
        self.last = item;
        Ok(item)
    }

    fn advance(&mut self) {
        let _ = self.next();
    }

    fn peek_prefix(&self, prefix: &str) -> Option<&'a str> {
        self.lines
            .get(self.pos)
            .and_then(|(_, l)| l.strip_prefix(prefix))
    }

    fn expect(&mut self, want: &str) -> Result<()> {
        let (line, got) = self.next()?;
        if got == want {
            Ok(())
        } else {
            Err(model_err(line, format!("expected '{want}', found '{got}'")))
        }
    }

    /// Parse a `key value` line into the value's type.
    fn parse_value<T>(&mut self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        let (line, got) = self.next()?;
        let rest = got
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| model_err(line, format!("expected '{key} ...', found '{got}'")))?;
        rest.trim()
            .parse()
            .map_err(|e: T::Err| model_err(line, format!("bad value for {key}: {e}")))
    }

    fn read_row(&mut self, want: Option<usize>) -> Result<Vec<f64>> {
        let (line, got) = self.next()?;
        let vals: Vec<f64> = got
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| model_err(line, format!("bad number '{t}'")))
            })
            .collect::<Result<_>>()?;
        if let Some(n) = want {
            if vals.len() != n {
                return Err(model_err(
                    line,
                    format!("expected {n} values, found {}", vals.len()),
                ));
            }
        }
        Ok(vals)
    }

    fn tagged_row(&mut self, key: &str) -> Result<Vec<f64>> {
        let (line, got) = self.next()?;
        let rest = got
            .strip_prefix(key)
            .ok_or_else(|| model_err(line, format!("expected '{key} ...', found '{got}'")))?;
        rest.split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| model_err(line, format!("bad number '{t}'")))
            })
            .collect()
    }

    fn read_matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.read_row(Some(cols))?);
        }
        Ok(Array2::from_shape_vec((rows, cols), data).expect("row count checked"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_cls;
    use crate::fractional::FracOrder;
    use crate::network::Activation;

    fn quick_cfg() -> TrainConfig {
        let hyper = HyperParams {
            gamma: FracOrder::new(0.5).unwrap(),
            tau: 0.2,
            n_layers: 4,
            mode: PropagationMode::Fractional,
            activation: Activation::Tanh,
            xi_w: 1e-1,
            xi_k: 1e0,
            xi_b: 1e-2,
        };
        let mut cfg = TrainConfig::new(hyper);
        cfg.m1 = 2;
        cfg.m2 = 12;
        cfg.seed = 1;
        cfg
    }

    #[test]
    fn training_learns_the_diagonal_rule() {
        let ds = generate_cls(300, 5);
        let out = train(&ds, &quick_cfg()).unwrap();
        let sm = &out.model.summary;
        assert_eq!(sm.alpha_train_minibatch.len(), 2);
        assert_eq!(sm.objective_per_outer.len(), 2);
        assert_eq!(out.traces.len(), 2);
        assert!(
            sm.alpha_train_full > 80.0,
            "full-set accuracy {}",
            sm.alpha_train_full
        );
        // objective decreases across outer rounds in this easy setting
        assert!(sm.objective_per_outer[1] < sm.objective_per_outer[0] * 1.5);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = generate_cls(150, 6);
        let a = train(&ds, &quick_cfg()).unwrap();
        let b = train(&ds, &quick_cfg()).unwrap();
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(a.model.summary, b.model.summary);
        let mut other = quick_cfg();
        other.seed = 2;
        let c = train(&ds, &other).unwrap();
        assert_ne!(a.model.params, c.model.params);
    }

    #[test]
    fn test_evaluation_matches_class_names_by_position_or_name() {
        let ds = generate_cls(300, 5);
        let out = train(&ds, &quick_cfg()).unwrap();
        let fresh = generate_cls(200, 77);
        let direct = test(&out.model, &fresh).unwrap();
        assert_eq!(direct.n_samples, 200);

        // permute the class rows and names; name matching must undo it
        let mut swapped = fresh.clone();
        let perm: Vec<usize> = vec![1, 0];
        let mut labels = swapped.labels.clone();
        for i in 0..swapped.n_samples() {
            let c = swapped.label_of(i);
            labels[[c, i]] = 0.0;
            labels[[perm[c], i]] = 1.0;
        }
        swapped.labels = labels;
        let names = swapped.class_names.clone().unwrap();
        swapped.class_names = Some(vec![names[1].clone(), names[0].clone()]);
        let via_names = test(&out.model, &swapped).unwrap();
        assert_eq!(direct, via_names);
    }

    #[test]
    fn test_evaluation_rejects_unknown_class() {
        let ds = generate_cls(100, 5);
        let out = train(&ds, &quick_cfg()).unwrap();
        let mut fresh = generate_cls(50, 6);
        fresh.class_names = Some(vec!["x>y".into(), "mystery".into()]);
        assert!(matches!(
            test(&out.model, &fresh),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn model_text_round_trip_is_bit_exact() {
        let ds = generate_cls(120, 9);
        let out = train(&ds, &quick_cfg()).unwrap();
        let text = out.model.to_text();
        let back = TrainedModel::from_text(&text).unwrap();
        assert_eq!(out.model, back);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        out.model.save(&path).unwrap();
        let loaded = TrainedModel::load(&path).unwrap();
        assert_eq!(out.model, loaded);
    }

    #[test]
    fn model_parse_errors_carry_line_numbers() {
        let ds = generate_cls(60, 9);
        let out = train(&ds, &quick_cfg()).unwrap();
        let text = out.model.to_text();

        let truncated: String = text.lines().take(5).collect::<Vec<_>>().join("\n");
        assert!(matches!(
            TrainedModel::from_text(&truncated),
            Err(Error::ModelParse { .. })
        ));

        let corrupted = text.replace("gamma 5.", "gamma five.");
        match TrainedModel::from_text(&corrupted) {
            Err(Error::ModelParse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }

        assert!(matches!(
            TrainedModel::from_text("not a model"),
            Err(Error::ModelParse { line: 1, .. })
        ));
    }

    #[test]
    fn gradient_decay_experiment_reports_all_modes() {
        let ds = generate_cls(80, 3);
        let mut base = quick_cfg();
        base.m1 = 1;
        base.m2 = 4;
        base.batch_fraction = 1.0;
        base.hyper.n_layers = 8;
        let modes = [
            PropagationMode::Fractional,
            PropagationMode::Residual,
            PropagationMode::Plain,
        ];
        let report = vanishing_gradient_experiment(&ds, &base, &modes).unwrap();
        assert_eq!(report.per_mode.len(), 3);
        for m in &report.per_mode {
            assert!(m.median_ratio.is_finite() && m.median_ratio > 0.0);
            assert!(!m.records.is_empty());
            assert!(m.records.iter().all(|r| r.first_layer_norm.is_some()));
        }
    }

    #[test]
    fn train_failure_carries_exit_code_of_cause() {
        let e = Error::TrainFailure {
            outer: 3,
            source: Box::new(Error::LineSearchFailure {
                iteration: 2,
                backtracks: 30,
            }),
        };
        assert_eq!(e.exit_code(), 3);
        let e = Error::TrainFailure {
            outer: 0,
            source: Box::new(Error::Config("bad".into())),
        };
        assert_eq!(e.exit_code(), 2);
    }
}
