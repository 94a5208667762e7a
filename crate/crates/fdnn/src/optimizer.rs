//! Dense BFGS and steepest descent with Armijo backtracking, plus the
//! flat-vector layout that maps network parameters onto optimizer
//! coordinates.
//!
//! Flat order is W row-major, then each K_j row-major in layer order,
//! then the biases b_0..b_{N-1}. Dense inverse-Hessian BFGS is fine at
//! this scale; parameter counts stay in the hundreds.

use crate::error::{Error, Result};
use crate::network::NetworkParams;
use ndarray::{Array1, Array2};
use serde::Serialize;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

/// Shape key for the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub n_features: usize,
    pub n_classes: usize,
    pub n_layers: usize,
}

impl ParamLayout {
    pub fn new(n_features: usize, n_classes: usize, n_layers: usize) -> Result<Self> {
        if n_features == 0 || n_classes == 0 || n_layers == 0 {
            return Err(Error::InvalidArgument(format!(
                "parameter layout needs positive dimensions, got {n_features}x{n_classes}x{n_layers}"
            )));
        }
        Ok(ParamLayout {
            n_features,
            n_classes,
            n_layers,
        })
    }

    pub fn from_params(p: &NetworkParams) -> Result<Self> {
        p.validate()?;
        ParamLayout::new(p.n_features(), p.n_classes(), p.n_layers())
    }

    pub fn n_params(&self) -> usize {
        self.n_classes * self.n_features
            + self.n_layers * self.n_features * self.n_features
            + self.n_layers
    }

    pub fn w_range(&self) -> Range<usize> {
        0..self.n_classes * self.n_features
    }

    pub fn k_range(&self, j: usize) -> Range<usize> {
        let sq = self.n_features * self.n_features;
        let start = self.n_classes * self.n_features + j * sq;
        start..start + sq
    }

    pub fn b_index(&self, j: usize) -> usize {
        self.n_classes * self.n_features
            + self.n_layers * self.n_features * self.n_features
            + j
    }

    /// Flatten explicit blocks; gradient blocks share parameter shapes,
    /// so the same packing serves both.
    pub fn flatten_parts(
        &self,
        w: &Array2<f64>,
        k: &[Array2<f64>],
        b: &[f64],
    ) -> Result<Array1<f64>> {
        if w.dim() != (self.n_classes, self.n_features)
            || k.len() != self.n_layers
            || b.len() != self.n_layers
            || k.iter()
                .any(|m| m.dim() != (self.n_features, self.n_features))
        {
            return Err(Error::DimensionMismatch {
                context: "parameter flattening",
                detail: format!(
                    "blocks do not match layout {}x{} with {} layers",
                    self.n_classes, self.n_features, self.n_layers
                ),
            });
        }
        let mut x = Vec::with_capacity(self.n_params());
        x.extend(w.iter());
        for m in k {
            x.extend(m.iter());
        }
        x.extend_from_slice(b);
        Ok(Array1::from_vec(x))
    }

    pub fn flatten(&self, p: &NetworkParams) -> Result<Array1<f64>> {
        self.flatten_parts(&p.w, &p.k, &p.b)
    }

    pub fn unflatten(&self, x: &Array1<f64>) -> Result<NetworkParams> {
        if x.len() != self.n_params() {
            return Err(Error::FlatLength {
                expected: self.n_params(),
                got: x.len(),
            });
        }
        let xs = x.as_slice().expect("flat vector is contiguous");
        let w = Array2::from_shape_vec(
            (self.n_classes, self.n_features),
            xs[self.w_range()].to_vec(),
        )
        .expect("range length matches shape");
        let k = (0..self.n_layers)
            .map(|j| {
                Array2::from_shape_vec(
                    (self.n_features, self.n_features),
                    xs[self.k_range(j)].to_vec(),
                )
                .expect("range length matches shape")
            })
            .collect();
        let b = (0..self.n_layers).map(|j| xs[self.b_index(j)]).collect();
        Ok(NetworkParams { w, k, b })
    }

    /// Norm of the gradient entries belonging to layer j (its K block
    /// and bias).
    pub fn layer_grad_norm(&self, g: &Array1<f64>, j: usize) -> f64 {
        let k_sq: f64 = g
            .slice(ndarray::s![self.k_range(j)])
            .iter()
            .map(|v| v * v)
            .sum();
        (k_sq + g[self.b_index(j)].powi(2)).sqrt()
    }
}

/// Backtracking line search parameters.
#[derive(Debug, Clone, Copy)]
pub struct ArmijoConfig {
    pub c1: f64,
    pub rho: f64,
    pub initial_step: f64,
    pub max_backtracks: usize,
}

impl Default for ArmijoConfig {
    fn default() -> Self {
        ArmijoConfig {
            c1: 1e-4,
            rho: 0.5,
            initial_step: 1.0,
            max_backtracks: 30,
        }
    }
}

/// Outer optimizer parameters.
#[derive(Debug, Clone, Copy)]
pub struct OptConfig {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub armijo: ArmijoConfig,
}

impl OptConfig {
    pub fn new(max_iters: usize) -> Self {
        OptConfig {
            max_iters,
            grad_tol: 1e-6,
            armijo: ArmijoConfig::default(),
        }
    }
}

/// Accepted line-search step.
#[derive(Debug, Clone)]
pub struct LineSearchResult {
    pub step: f64,
    pub x_new: Array1<f64>,
    pub f_new: f64,
    pub backtracks: usize,
}

/// Backtracking Armijo search along direction d with directional
/// derivative `slope` = g.d < 0. Accepts the first step with
/// f(x + a d) <= f(x) + c1 a slope; a non-finite trial objective simply
/// fails the test and backtracks further.
pub fn armijo_search<F>(
    f: &mut F,
    x: &Array1<f64>,
    fx: f64,
    d: &Array1<f64>,
    slope: f64,
    cfg: &ArmijoConfig,
    iteration: usize,
) -> Result<LineSearchResult>
where
    F: FnMut(&Array1<f64>) -> Result<f64>,
{
    if !(slope < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "line search needs a descent direction, got slope {slope}"
        )));
    }
    let mut step = cfg.initial_step;
    for backtracks in 0..=cfg.max_backtracks {
        let x_new = x + step * d;
        let f_new = f(&x_new)?;
        if f_new <= fx + cfg.c1 * step * slope {
            return Ok(LineSearchResult {
                step,
                x_new,
                f_new,
                backtracks,
            });
        }
        step *= cfg.rho;
    }
    Err(Error::LineSearchFailure {
        iteration,
        backtracks: cfg.max_backtracks,
    })
}

/// One optimizer iteration as logged to the trace.
#[derive(Debug, Clone, Serialize)]
pub struct IterRecord {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_layer_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub last_layer_norm: Option<f64>,
    pub step: f64,
    pub backtracks: usize,
}

/// Iteration log for one optimizer run.
#[derive(Debug, Clone, Default)]
pub struct OptTrace {
    pub records: Vec<IterRecord>,
}

impl OptTrace {
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in &self.records {
            let line = serde_json::to_string(r).expect("records serialize");
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Optimizer result. `converged` means the gradient tolerance was met;
/// exhausting max_iters is a normal truncated outcome.
#[derive(Debug, Clone)]
pub struct OptOutcome {
    pub x: Array1<f64>,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: OptTrace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Method {
    Bfgs,
    Steepest,
}

/// BFGS with a dense inverse-Hessian estimate. On a failed line search
/// the estimate is reset to the identity and the iteration retried once
/// as steepest descent before the failure propagates.
pub fn bfgs_minimize<F, G>(
    f: F,
    grad: G,
    x0: &Array1<f64>,
    cfg: &OptConfig,
    layout: Option<&ParamLayout>,
) -> Result<OptOutcome>
where
    F: FnMut(&Array1<f64>) -> Result<f64>,
    G: FnMut(&Array1<f64>) -> Result<Array1<f64>>,
{
    minimize(Method::Bfgs, f, grad, x0, cfg, layout)
}

/// Plain steepest descent with the same line search and logging.
pub fn steepest_descent_minimize<F, G>(
    f: F,
    grad: G,
    x0: &Array1<f64>,
    cfg: &OptConfig,
    layout: Option<&ParamLayout>,
) -> Result<OptOutcome>
where
    F: FnMut(&Array1<f64>) -> Result<f64>,
    G: FnMut(&Array1<f64>) -> Result<Array1<f64>>,
{
    minimize(Method::Steepest, f, grad, x0, cfg, layout)
}

fn minimize<F, G>(
    method: Method,
    mut f: F,
    mut grad: G,
    x0: &Array1<f64>,
    cfg: &OptConfig,
    layout: Option<&ParamLayout>,
) -> Result<OptOutcome>
where
    F: FnMut(&Array1<f64>) -> Result<f64>,
    G: FnMut(&Array1<f64>) -> Result<Array1<f64>>,
{
    let dim = x0.len();
    let mut x = x0.clone();
    let mut fx = f(&x)?;
    if !fx.is_finite() {
        return Err(Error::NonFiniteObjective { iteration: 0 });
    }
    let mut g = grad(&x)?;
    check_gradient(&g, 0)?;
    let mut g_norm = norm(&g);

    let mut trace = OptTrace::default();
    record(&mut trace, 0, fx, g_norm, &g, layout, 0.0, 0);

    let mut h = match method {
        Method::Bfgs => Some(Array2::<f64>::eye(dim)),
        Method::Steepest => None,
    };

    let mut converged = g_norm <= cfg.grad_tol;
    let mut iterations = 0;

    for iter in 1..=cfg.max_iters {
        if converged {
            break;
        }
        let mut d = match &h {
            Some(h) => -h.dot(&g),
            None => -&g,
        };
        let mut slope = g.dot(&d);
        if slope >= 0.0 {
            // estimate lost positive definiteness; fall back to steepest
            if let Some(h) = &mut h {
                *h = Array2::eye(dim);
            }
            d = -&g;
            slope = -g_norm * g_norm;
        }
        let ls = match armijo_search(&mut f, &x, fx, &d, slope, &cfg.armijo, iter) {
            Ok(ls) => ls,
            Err(Error::LineSearchFailure { .. }) if h.is_some() && d != -&g => {
                // one retry per iteration with a fresh identity estimate
                *h.as_mut().expect("bfgs path") = Array2::eye(dim);
                d = -&g;
                slope = -g_norm * g_norm;
                armijo_search(&mut f, &x, fx, &d, slope, &cfg.armijo, iter)?
            }
            Err(e) => return Err(e),
        };
        let g_new = grad(&ls.x_new)?;
        check_gradient(&g_new, iter)?;
        if let Some(h) = &mut h {
            let s = &ls.x_new - &x;
            let y = &g_new - &g;
            bfgs_update(h, &s, &y);
        }
        x = ls.x_new;
        fx = ls.f_new;
        g = g_new;
        g_norm = norm(&g);
        iterations = iter;
        record(&mut trace, iter, fx, g_norm, &g, layout, ls.step, ls.backtracks);
        converged = g_norm <= cfg.grad_tol;
    }

    Ok(OptOutcome {
        x,
        objective: fx,
        grad_norm: g_norm,
        iterations,
        converged,
        trace,
    })
}

/// Sherman-Morrison form of the inverse-Hessian update. Returns false
/// (estimate unchanged) when the curvature s.y is too small for a
/// stable update.
pub fn bfgs_update(h: &mut Array2<f64>, s: &Array1<f64>, y: &Array1<f64>) -> bool {
    let sy = s.dot(y);
    if sy <= 1e-10 * norm(s) * norm(y) {
        return false;
    }
    let rho = 1.0 / sy;
    let hy = h.dot(y);
    let yhy = y.dot(&hy);
    let c = rho * rho * yhy + rho;
    let n = h.nrows();
    for i in 0..n {
        for j in 0..n {
            h[[i, j]] += c * s[i] * s[j] - rho * (s[i] * hy[j] + hy[i] * s[j]);
        }
    }
    true
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

fn check_gradient(g: &Array1<f64>, iteration: usize) -> Result<()> {
    if g.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteGradient { iteration })
    }
}

#[allow(clippy::too_many_arguments)]
fn record(
    trace: &mut OptTrace,
    iteration: usize,
    objective: f64,
    grad_norm: f64,
    g: &Array1<f64>,
    layout: Option<&ParamLayout>,
    step: f64,
    backtracks: usize,
) {
    let (first, last) = match layout {
        Some(l) if l.n_params() == g.len() => (
            Some(l.layer_grad_norm(g, 0)),
            Some(l.layer_grad_norm(g, l.n_layers - 1)),
        ),
        _ => (None, None),
    };
    trace.records.push(IterRecord {
        iteration,
        objective,
        grad_norm,
        first_layer_norm: first,
        last_layer_norm: last,
        step,
        backtracks,
    });
}
