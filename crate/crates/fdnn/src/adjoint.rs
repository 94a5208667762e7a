//! Adjoint (backward) propagation, objective evaluation, gradient
//! assembly, and a finite-difference gradient checker.
//!
//! Two backward rules are provided for the fractional mode. The exact
//! rule transposes the discrete forward map, so the assembled gradient
//! matches finite differences of the discrete objective to roundoff.
//! The right-L1 rule instead discretizes the continuous adjoint
//! equation with the right-sided L1 formula; it is kept as a runtime
//! option and agrees with the exact rule at gamma = 1, but away from
//! that limit the two differ by the usual discretize/optimize gap.
//! Residual and plain networks have one backward rule (classical
//! backpropagation), shared by both settings.

use crate::classifier::{cross_entropy, softmax};
use crate::error::{Error, Result};
use crate::fractional::{l1_coefficient, right_history_sum};
use crate::network::{
    forward_propagate, HyperParams, NetworkParams, PropagationMode, StateTrajectory,
};
use crate::optimizer::ParamLayout;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::str::FromStr;

/// Which state feeds the activation derivative in the right-L1
/// backward rule: the layer's own state Y_j or its successor Y_{j+1}.
/// The exact rule always uses Y_j, as does gradient assembly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaConvention {
    Current,
    Next,
}

impl fmt::Display for SigmaConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SigmaConvention::Current => "current",
            SigmaConvention::Next => "next",
        })
    }
}

impl FromStr for SigmaConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "current" => Ok(SigmaConvention::Current),
            "next" => Ok(SigmaConvention::Next),
            other => Err(Error::Config(format!(
                "unknown sigma convention '{other}' (expected current or next)"
            ))),
        }
    }
}

/// Backward rule selector for fractional networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackwardKind {
    Exact,
    RightL1,
}

impl fmt::Display for BackwardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackwardKind::Exact => "exact",
            BackwardKind::RightL1 => "right-l1",
        })
    }
}

impl FromStr for BackwardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(BackwardKind::Exact),
            "right-l1" => Ok(BackwardKind::RightL1),
            other => Err(Error::Config(format!(
                "unknown backward rule '{other}' (expected exact or right-l1)"
            ))),
        }
    }
}

/// Adjoint states P_0..P_N, aligned with the forward trajectory.
#[derive(Debug, Clone)]
pub struct AdjointTrajectory {
    pub adjoints: Vec<Array2<f64>>,
}

/// Terminal adjoint P_N = -(1/n) W^T (S - C) with S = softmax(W Y_N).
pub fn terminal_adjoint(
    w: &Array2<f64>,
    y_n: &Array2<f64>,
    c_obs: &Array2<f64>,
) -> Result<Array2<f64>> {
    let s = softmax(w, y_n)?;
    if c_obs.dim() != s.matrix().dim() {
        return Err(Error::DimensionMismatch {
            context: "terminal adjoint",
            detail: format!(
                "labels are {}x{} but probabilities are {}x{}",
                c_obs.nrows(),
                c_obs.ncols(),
                s.matrix().nrows(),
                s.matrix().ncols()
            ),
        });
    }
    let n = y_n.ncols() as f64;
    let diff = s.matrix() - c_obs;
    Ok(w.t().dot(&diff) * (-1.0 / n))
}

/// Run the backward recursion matching the forward mode, from P_N down
/// to P_0. `convention` is honored only by the fractional right-L1
/// rule.
pub fn backward_propagate(
    params: &NetworkParams,
    states: &StateTrajectory,
    hyper: &HyperParams,
    c_obs: &Array2<f64>,
    kind: BackwardKind,
    convention: SigmaConvention,
) -> Result<AdjointTrajectory> {
    hyper.validate()?;
    params.validate()?;
    let n_layers = hyper.n_layers;
    if states.states.len() != n_layers + 1 {
        return Err(Error::DimensionMismatch {
            context: "backward propagation",
            detail: format!(
                "trajectory has {} states but the network has {} layers",
                states.states.len(),
                n_layers
            ),
        });
    }
    let p_n = terminal_adjoint(&params.w, states.final_state(), c_obs)?;

    match (hyper.mode, kind) {
        (PropagationMode::Fractional, BackwardKind::Exact) => {
            backward_fractional_exact(params, states, hyper, p_n)
        }
        (PropagationMode::Fractional, BackwardKind::RightL1) => {
            backward_fractional_right_l1(params, states, hyper, p_n, convention)
        }
        (PropagationMode::Residual, _) | (PropagationMode::Plain, _) => {
            backward_classical(params, states, hyper, p_n)
        }
    }
}

/// Transpose of the discrete forward map. Writing the forward step as
/// Y_i = sum_{m<i} A_{i,m} Y_m + c sigma(K_{i-1} Y_{i-1} + b_{i-1}),
/// the state coefficients are
///
///   A_{i,i-1} = 1 - a_1 (i >= 2),  A_{1,0} = 1,
///   A_{i,m}   = a_{i-m-1} - a_{i-m}   for 1 <= m <= i-2,
///   A_{i,0}   = a_{i-1}               for i >= 2,
///
/// and the adjoint collects P_j = sum_{i>j} A_{i,j} P_i plus the
/// activation pull-through of layer j. At gamma = 1 only A_{j+1,j} = 1
/// survives and this is the classical residual backward pass, bit for
/// bit.
fn backward_fractional_exact(
    params: &NetworkParams,
    states: &StateTrajectory,
    hyper: &HyperParams,
    p_n: Array2<f64>,
) -> Result<AdjointTrajectory> {
    let n_layers = hyper.n_layers;
    let gamma = hyper.gamma;
    let scale = hyper.update_scale();
    let act = hyper.activation;
    let a: Vec<f64> = (0..=n_layers).map(|m| l1_coefficient(m, gamma)).collect();

    let mut p = vec![Array2::zeros(p_n.raw_dim()); n_layers + 1];
    p[n_layers] = p_n;
    for j in (0..n_layers).rev() {
        let mut acc = Array2::zeros(p[n_layers].raw_dim());
        for i in (j + 1)..=n_layers {
            let w = if i == j + 1 {
                if j == 0 {
                    1.0
                } else {
                    1.0 - a[1]
                }
            } else if j == 0 {
                a[i - 1]
            } else {
                a[i - j - 1] - a[i - j]
            };
            acc.scaled_add(w, &p[i]);
        }
        let mut g = params.k[j].dot(&states.states[j]);
        g.mapv_inplace(|v| act.derivative(v + params.b[j]));
        g *= &p[j + 1];
        acc.scaled_add(scale, &params.k[j].t().dot(&g));
        if !acc.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteAdjoint { step: j });
        }
        p[j] = acc;
    }
    Ok(AdjointTrajectory { adjoints: p })
}

/// Right-sided L1 discretization of the continuous adjoint equation:
///
///   P_j = P_{j+1} + sum_{k=j+1}^{N-1} a_{k-j-1} (P_{k+1} - P_k)
///         + c K_j^T (sigma'(K_j Y_idx + b_j) . P_{j+1})
///
/// with idx = j or j+1 per the convention flag.
fn backward_fractional_right_l1(
    params: &NetworkParams,
    states: &StateTrajectory,
    hyper: &HyperParams,
    p_n: Array2<f64>,
    convention: SigmaConvention,
) -> Result<AdjointTrajectory> {
    let n_layers = hyper.n_layers;
    let scale = hyper.update_scale();
    let act = hyper.activation;

    let mut p = vec![Array2::zeros(p_n.raw_dim()); n_layers + 1];
    p[n_layers] = p_n;
    for j in (0..n_layers).rev() {
        let hist = right_history_sum(&p, j, n_layers, hyper.gamma)?;
        let idx = match convention {
            SigmaConvention::Current => j,
            SigmaConvention::Next => j + 1,
        };
        let mut g = params.k[j].dot(&states.states[idx]);
        g.mapv_inplace(|v| act.derivative(v + params.b[j]));
        g *= &p[j + 1];
        let mut acc = &p[j + 1] + &hist;
        acc.scaled_add(scale, &params.k[j].t().dot(&g));
        if !acc.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteAdjoint { step: j });
        }
        p[j] = acc;
    }
    Ok(AdjointTrajectory { adjoints: p })
}

/// Backward pass for residual (P_j = P_{j+1} + tau K^T(sigma' . P_{j+1}))
/// and plain (P_j = K^T(sigma' . P_{j+1})) networks.
fn backward_classical(
    params: &NetworkParams,
    states: &StateTrajectory,
    hyper: &HyperParams,
    p_n: Array2<f64>,
) -> Result<AdjointTrajectory> {
    let n_layers = hyper.n_layers;
    let scale = hyper.update_scale();
    let act = hyper.activation;
    let carry = hyper.mode == PropagationMode::Residual;

    let mut p = vec![Array2::zeros(p_n.raw_dim()); n_layers + 1];
    p[n_layers] = p_n;
    for j in (0..n_layers).rev() {
        let mut g = params.k[j].dot(&states.states[j]);
        g.mapv_inplace(|v| act.derivative(v + params.b[j]));
        g *= &p[j + 1];
        let acc = if carry {
            let mut acc = p[j + 1].clone();
            acc.scaled_add(scale, &params.k[j].t().dot(&g));
            acc
        } else {
            params.k[j].t().dot(&g)
        };
        if !acc.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteAdjoint { step: j });
        }
        p[j] = acc;
    }
    Ok(AdjointTrajectory { adjoints: p })
}

/// Five-point discrete Laplacian with Neumann (missing-neighbor)
/// boundary treatment: (LK)_pq = deg(p,q) K_pq - (sum of existing
/// neighbors). Constant matrices map to zero.
pub fn discrete_laplacian(k: &Array2<f64>) -> Array2<f64> {
    let (rows, cols) = k.dim();
    let mut out = Array2::zeros((rows, cols));
    for p in 0..rows {
        for q in 0..cols {
            let mut deg = 0.0;
            let mut nbr = 0.0;
            if p > 0 {
                deg += 1.0;
                nbr += k[[p - 1, q]];
            }
            if p + 1 < rows {
                deg += 1.0;
                nbr += k[[p + 1, q]];
            }
            if q > 0 {
                deg += 1.0;
                nbr += k[[p, q - 1]];
            }
            if q + 1 < cols {
                deg += 1.0;
                nbr += k[[p, q + 1]];
            }
            out[[p, q]] = deg * k[[p, q]] - nbr;
        }
    }
    out
}

/// Regularization value and its gradient blocks:
///
///   R = xi_w/2 ||W||^2 + xi_k/(2N) sum_j ||L K_j||^2 + xi_b/(2N) sum_j b_j^2
///
/// The Laplacian is self-adjoint, so the K gradient is (xi_k/N) L(L K_j).
#[derive(Debug, Clone)]
pub struct RegTerms {
    pub value: f64,
    pub d_w: Array2<f64>,
    pub d_k: Vec<Array2<f64>>,
    pub d_b: Vec<f64>,
}

pub fn regularization(params: &NetworkParams, hyper: &HyperParams) -> Result<RegTerms> {
    hyper.validate()?;
    params.validate()?;
    let n = params.n_layers() as f64;
    let mut value = 0.5 * hyper.xi_w * params.w.iter().map(|v| v * v).sum::<f64>();
    let d_w = &params.w * hyper.xi_w;
    let mut d_k = Vec::with_capacity(params.k.len());
    let mut d_b = Vec::with_capacity(params.b.len());
    for k in &params.k {
        let lk = discrete_laplacian(k);
        value += hyper.xi_k / (2.0 * n) * lk.iter().map(|v| v * v).sum::<f64>();
        d_k.push(discrete_laplacian(&lk) * (hyper.xi_k / n));
    }
    for &b in &params.b {
        value += hyper.xi_b / (2.0 * n) * b * b;
        d_b.push(hyper.xi_b / n * b);
    }
    Ok(RegTerms {
        value,
        d_w,
        d_k,
        d_b,
    })
}

/// Full training objective: cross-entropy of the propagated states plus
/// regularization.
pub fn objective(
    params: &NetworkParams,
    y0: &Array2<f64>,
    c_obs: &Array2<f64>,
    hyper: &HyperParams,
) -> Result<f64> {
    let traj = forward_propagate(params, y0, hyper)?;
    let ce = cross_entropy(&params.w, traj.final_state(), c_obs)?;
    let reg = regularization(params, hyper)?;
    Ok(ce + reg.value)
}

/// Objective gradient blocks, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub d_w: Array2<f64>,
    pub d_k: Vec<Array2<f64>>,
    pub d_b: Vec<f64>,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        let mut sq: f64 = self.d_w.iter().map(|v| v * v).sum();
        sq += self
            .d_k
            .iter()
            .map(|k| k.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>();
        sq += self.d_b.iter().map(|v| v * v).sum::<f64>();
        sq.sqrt()
    }

    /// Norm of layer j's blocks (K_j and b_j together).
    pub fn layer_norm(&self, j: usize) -> f64 {
        let sq: f64 = self.d_k[j].iter().map(|v| v * v).sum();
        (sq + self.d_b[j] * self.d_b[j]).sqrt()
    }

    pub fn flatten(&self, layout: &ParamLayout) -> Result<Array1<f64>> {
        layout.flatten_parts(&self.d_w, &self.d_k, &self.d_b)
    }
}

/// Combine forward states and adjoint states into parameter gradients:
///
///   dW   = (1/n) (S - C) Y_N^T + xi_w W
///   dK_j = -c (sigma'(Z_j) . P_{j+1}) Y_j^T + (xi_k/N) L(L K_j)
///   db_j = -c <sigma'(Z_j) . P_{j+1}, 1>  + (xi_b/N) b_j
///
/// with Z_j = K_j Y_j + b_j and c the mode's update scale. The factor c
/// is what makes these the exact derivatives of the discrete objective;
/// it multiplies sigma in the forward update, so it must multiply the
/// pulled-back adjoint here too.
pub fn assemble_gradients(
    params: &NetworkParams,
    states: &StateTrajectory,
    adjoints: &AdjointTrajectory,
    c_obs: &Array2<f64>,
    hyper: &HyperParams,
) -> Result<Gradients> {
    let n_layers = hyper.n_layers;
    if states.states.len() != n_layers + 1 || adjoints.adjoints.len() != n_layers + 1 {
        return Err(Error::DimensionMismatch {
            context: "gradient assembly",
            detail: format!(
                "expected {} states and adjoints, got {} and {}",
                n_layers + 1,
                states.states.len(),
                adjoints.adjoints.len()
            ),
        });
    }
    let reg = regularization(params, hyper)?;
    let n = states.states[0].ncols() as f64;
    let scale = hyper.update_scale();
    let act = hyper.activation;

    let y_n = states.final_state();
    let s = softmax(&params.w, y_n)?;
    let mut d_w = (s.matrix() - c_obs).dot(&y_n.t()) * (1.0 / n);
    d_w += &reg.d_w;

    let mut d_k = Vec::with_capacity(n_layers);
    let mut d_b = Vec::with_capacity(n_layers);
    for j in 0..n_layers {
        let mut g = params.k[j].dot(&states.states[j]);
        g.mapv_inplace(|v| act.derivative(v + params.b[j]));
        g *= &adjoints.adjoints[j + 1];
        let mut dk = g.dot(&states.states[j].t()) * (-scale);
        dk += &reg.d_k[j];
        d_k.push(dk);
        d_b.push(-scale * g.sum() + reg.d_b[j]);
    }
    Ok(Gradients { d_w, d_k, d_b })
}

/// Forward, backward, assemble in one call.
pub fn gradient(
    params: &NetworkParams,
    y0: &Array2<f64>,
    c_obs: &Array2<f64>,
    hyper: &HyperParams,
    kind: BackwardKind,
    convention: SigmaConvention,
) -> Result<Gradients> {
    let states = forward_propagate(params, y0, hyper)?;
    let adjoints = backward_propagate(params, &states, hyper, c_obs, kind, convention)?;
    assemble_gradients(params, &states, &adjoints, c_obs, hyper)
}

/// Gradient checker configuration. Slope fits run over `steps`; the
/// directional comparison uses a central difference at `h_directional`.
#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub steps: Vec<f64>,
    pub h_directional: f64,
    pub slope0_margin: f64,
    pub slope1_margin: f64,
    pub directional_tol: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            steps: vec![1e-1, 1e-2, 1e-3, 1e-4],
            h_directional: 1e-5,
            slope0_margin: 0.1,
            slope1_margin: 0.2,
            directional_tol: 1e-6,
            seed: 0,
        }
    }
}

/// Slope-fit result for one parameter block. A `None` slope means every
/// sampled error sat below the roundoff floor, which counts as a pass.
#[derive(Debug, Clone)]
pub struct VariableCheck {
    pub name: &'static str,
    pub zeroth_slope: Option<f64>,
    pub first_slope: Option<f64>,
    pub zeroth_errors: Vec<f64>,
    pub first_errors: Vec<f64>,
    pub pass: bool,
}

/// Full gradient check report.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub objective: f64,
    pub variables: Vec<VariableCheck>,
    pub directional_derivative: f64,
    pub directional_reference: f64,
    pub directional_rel_err: f64,
    pub pass: bool,
}

/// Verify a gradient by Taylor remainders. For each block direction d,
/// |J(x + h d) - J(x)| must shrink like h (slope 1) and
/// |J(x + h d) - J(x) - h g.d| like h^2 (slope 2), with slopes fit by
/// least squares in log-log. A central difference along a full-space
/// direction then pins the directional derivative to `directional_tol`.
pub fn gradient_check<F>(
    mut f: F,
    x0: &Array1<f64>,
    g0: &Array1<f64>,
    layout: &ParamLayout,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&Array1<f64>) -> Result<f64>,
{
    if x0.len() != layout.n_params() || g0.len() != layout.n_params() {
        return Err(Error::FlatLength {
            expected: layout.n_params(),
            got: x0.len().max(g0.len()),
        });
    }
    if cfg.steps.len() < 2 {
        return Err(Error::InvalidArgument(
            "gradient check needs at least two step sizes".into(),
        ));
    }
    let j0 = f(x0)?;
    if !j0.is_finite() {
        return Err(Error::NonFiniteObjective { iteration: 0 });
    }
    let floor = 1e-14 * j0.abs().max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut block = |idxs: &[usize]| -> Array1<f64> {
        let mut d: Array1<f64> = Array1::zeros(x0.len());
        for &i in idxs {
            d[i] = rng.random_range(-1.0..1.0);
        }
        let norm = d.dot(&d).sqrt();
        d / norm
    };
    let w_idx: Vec<usize> = layout.w_range().collect();
    let k_idx: Vec<usize> = (0..layout.n_layers)
        .flat_map(|j| layout.k_range(j))
        .collect();
    let b_idx: Vec<usize> = (0..layout.n_layers).map(|j| layout.b_index(j)).collect();
    let all_idx: Vec<usize> = (0..x0.len()).collect();
    let dirs = [
        ("W", block(&w_idx)),
        ("K", block(&k_idx)),
        ("b", block(&b_idx)),
    ];
    let d_full = block(&all_idx);

    let mut variables = Vec::new();
    let mut pass = true;
    for (name, d) in dirs {
        let gd = g0.dot(&d);
        let mut e0 = Vec::with_capacity(cfg.steps.len());
        let mut e1 = Vec::with_capacity(cfg.steps.len());
        for &h in &cfg.steps {
            let jh = f(&(x0 + &(h * &d)))?;
            e0.push((jh - j0).abs());
            e1.push((jh - j0 - h * gd).abs());
        }
        let zeroth_slope = fit_slope(&cfg.steps, &e0, floor);
        let first_slope = fit_slope(&cfg.steps, &e1, floor);
        let ok0 = zeroth_slope.is_none_or(|s| (s - 1.0).abs() <= cfg.slope0_margin);
        let ok1 = first_slope.is_none_or(|s| (s - 2.0).abs() <= cfg.slope1_margin);
        let block_pass = ok0 && ok1;
        pass &= block_pass;
        variables.push(VariableCheck {
            name,
            zeroth_slope,
            first_slope,
            zeroth_errors: e0,
            first_errors: e1,
            pass: block_pass,
        });
    }

    let h = cfg.h_directional;
    let plus = f(&(x0 + &(h * &d_full)))?;
    let minus = f(&(x0 - &(h * &d_full)))?;
    let central = (plus - minus) / (2.0 * h);
    let reference = g0.dot(&d_full);
    let rel = (central - reference).abs() / reference.abs().max(1e-16);
    pass &= rel <= cfg.directional_tol;

    Ok(GradCheckReport {
        objective: j0,
        variables,
        directional_derivative: central,
        directional_reference: reference,
        directional_rel_err: rel,
        pass,
    })
}

/// Least-squares slope of log10(err) against log10(h). Returns None
/// when every error sits at or below the roundoff floor.
fn fit_slope(steps: &[f64], errs: &[f64], floor: f64) -> Option<f64> {
    if errs.iter().all(|&e| e <= floor) {
        return None;
    }
    let u: Vec<f64> = steps.iter().map(|h| h.log10()).collect();
    let v: Vec<f64> = errs.iter().map(|e| e.max(1e-300).log10()).collect();
    let n = u.len() as f64;
    let um = u.iter().sum::<f64>() / n;
    let vm = v.iter().sum::<f64>() / n;
    let num: f64 = u.iter().zip(&v).map(|(a, b)| (a - um) * (b - vm)).sum();
    let den: f64 = u.iter().map(|a| (a - um) * (a - um)).sum();
    Some(num / den)
}
