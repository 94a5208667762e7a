//! Network definition and forward propagation.
//!
//! A network is N square layer transforms K_j with scalar biases b_j
//! feeding a linear classifier W. Features travel as columns: the state
//! at layer j is n_features x n_samples. Three propagation rules share
//! the layer map Z_j = K_j Y_j + b_j:
//!
//!   fractional: Y_{j+1} = Y_j - (L1 history) + tau^gamma Gamma(2-gamma) sigma(Z_j)
//!   residual:   Y_{j+1} = Y_j + tau sigma(Z_j)
//!   plain:      Y_{j+1} = sigma(Z_j)
//!
//! At gamma = 1 the fractional rule degenerates to the residual rule
//! exactly, history term included.

use crate::error::{Error, Result};
use crate::fractional::{left_history_sum, step_scale, FracOrder};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::str::FromStr;

/// Layer update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropagationMode {
    Fractional,
    Residual,
    Plain,
}

impl fmt::Display for PropagationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PropagationMode::Fractional => "fractional",
            PropagationMode::Residual => "residual",
            PropagationMode::Plain => "plain",
        };
        f.write_str(s)
    }
}

impl FromStr for PropagationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fractional" => Ok(PropagationMode::Fractional),
            "residual" => Ok(PropagationMode::Residual),
            "plain" => Ok(PropagationMode::Plain),
            other => Err(Error::Config(format!(
                "unknown propagation mode '{other}' (expected fractional, residual, or plain)"
            ))),
        }
    }
}

/// Pointwise activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative; the ReLU subgradient at 0 is taken as 0.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Half-width of the uniform initialization interval for a layer
    /// with n_in inputs: sqrt(3/n_in) for tanh (unit variance of the
    /// pre-activation), 1/sqrt(n_in) otherwise.
    pub fn xavier_half_width(self, n_in: usize) -> f64 {
        match self {
            Activation::Tanh => (3.0 / n_in as f64).sqrt(),
            Activation::Relu => 1.0 / (n_in as f64).sqrt(),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        };
        f.write_str(s)
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!(
                "unknown activation '{other}' (expected tanh or relu)"
            ))),
        }
    }
}

/// Propagation hyper-parameters shared by forward, adjoint, and
/// objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub gamma: FracOrder,
    pub tau: f64,
    pub n_layers: usize,
    pub mode: PropagationMode,
    pub activation: Activation,
    pub xi_w: f64,
    pub xi_k: f64,
    pub xi_b: f64,
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "step size tau must be positive, got {}",
                self.tau
            )));
        }
        if self.n_layers == 0 {
            return Err(Error::InvalidArgument(
                "network needs at least one layer".into(),
            ));
        }
        for (name, xi) in [("xi_w", self.xi_w), ("xi_k", self.xi_k), ("xi_b", self.xi_b)] {
            if !(xi.is_finite() && xi >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "regularization weight {name} must be nonnegative, got {xi}"
                )));
            }
        }
        Ok(())
    }

    /// Factor multiplying sigma(Z_j) in the layer update: the L1 step
    /// scale for fractional mode, tau for residual, 1 for plain.
    pub fn update_scale(&self) -> f64 {
        match self.mode {
            PropagationMode::Fractional => step_scale(self.tau, self.gamma),
            PropagationMode::Residual => self.tau,
            PropagationMode::Plain => 1.0,
        }
    }
}

/// Trainable parameters: classifier W (n_classes x n_features), layer
/// transforms K_j (square), scalar layer biases b_j.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub w: Array2<f64>,
    pub k: Vec<Array2<f64>>,
    pub b: Vec<f64>,
}

impl NetworkParams {
    pub fn n_features(&self) -> usize {
        self.w.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_layers(&self) -> usize {
        self.k.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n_f = self.n_features();
        if self.k.is_empty() {
            return Err(Error::InvalidArgument(
                "network needs at least one layer".into(),
            ));
        }
        if self.b.len() != self.k.len() {
            return Err(Error::DimensionMismatch {
                context: "network parameters",
                detail: format!("{} layer matrices but {} biases", self.k.len(), self.b.len()),
            });
        }
        for (j, k) in self.k.iter().enumerate() {
            if k.nrows() != n_f || k.ncols() != n_f {
                return Err(Error::DimensionMismatch {
                    context: "network parameters",
                    detail: format!(
                        "layer {j} is {}x{}, expected {n_f}x{n_f}",
                        k.nrows(),
                        k.ncols()
                    ),
                });
            }
        }
        Ok(())
    }
}

/// State at every layer, Y_0 (the input) through Y_N.
#[derive(Debug, Clone)]
pub struct StateTrajectory {
    pub states: Vec<Array2<f64>>,
}

impl StateTrajectory {
    pub fn n_layers(&self) -> usize {
        self.states.len() - 1
    }

    pub fn final_state(&self) -> &Array2<f64> {
        self.states.last().expect("trajectory is never empty")
    }
}

/// Uniform Xavier initialization: W and every K_j drawn from
/// [-a, a] with a = activation.xavier_half_width(n_features), biases
/// zero. Entries are drawn in row-major order, W first, then K_0.. in
/// layer order, so a seed pins the full parameter set.
pub fn xavier_init(
    seed: u64,
    n_features: usize,
    n_classes: usize,
    n_layers: usize,
    activation: Activation,
) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = activation.xavier_half_width(n_features);
    let mut draw = |rows: usize, cols: usize| {
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-a..a))
    };
    let w = draw(n_classes, n_features);
    let k = (0..n_layers).map(|_| draw(n_features, n_features)).collect();
    NetworkParams {
        w,
        k,
        b: vec![0.0; n_layers],
    }
}

/// Run the layer recursion for the configured mode, returning all
/// states Y_0..Y_N. Errors with the layer index if a state goes
/// non-finite.
pub fn forward_propagate(
    params: &NetworkParams,
    y0: &Array2<f64>,
    hyper: &HyperParams,
) -> Result<StateTrajectory> {
    hyper.validate()?;
    params.validate()?;
    if hyper.n_layers != params.n_layers() {
        return Err(Error::DimensionMismatch {
            context: "forward propagation",
            detail: format!(
                "hyper-parameters specify {} layers but network has {}",
                hyper.n_layers,
                params.n_layers()
            ),
        });
    }
    if y0.nrows() != params.n_features() {
        return Err(Error::DimensionMismatch {
            context: "forward propagation",
            detail: format!(
                "input has {} features but network expects {}",
                y0.nrows(),
                params.n_features()
            ),
        });
    }
    let scale = hyper.update_scale();
    let act = hyper.activation;
    let n = hyper.n_layers;
    let mut states = Vec::with_capacity(n + 1);
    states.push(y0.clone());
    for j in 1..=n {
        let prev = &states[j - 1];
        let mut z = params.k[j - 1].dot(prev);
        z.mapv_inplace(|v| act.apply(v + params.b[j - 1]));
        let next = match hyper.mode {
            PropagationMode::Fractional => {
                let hist = left_history_sum(&states, j, hyper.gamma)?;
                prev - &hist + scale * &z
            }
            PropagationMode::Residual => prev + scale * &z,
            PropagationMode::Plain => z,
        };
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteState { step: j });
        }
        states.push(next);
    }
    Ok(StateTrajectory { states })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn hyper(mode: PropagationMode, gamma: f64, n_layers: usize) -> HyperParams {
        HyperParams {
            gamma: FracOrder::new(gamma).unwrap(),
            tau: 0.2,
            n_layers,
            mode,
            activation: Activation::Tanh,
            xi_w: 0.0,
            xi_k: 0.0,
            xi_b: 0.0,
        }
    }

    #[test]
    fn mode_and_activation_parsing() {
        assert_eq!(
            "fractional".parse::<PropagationMode>().unwrap(),
            PropagationMode::Fractional
        );
        assert_eq!(
            "residual".parse::<PropagationMode>().unwrap(),
            PropagationMode::Residual
        );
        assert_eq!("plain".parse::<PropagationMode>().unwrap(), PropagationMode::Plain);
        assert!("Fractional".parse::<PropagationMode>().is_err());
        assert_eq!("tanh".parse::<Activation>().unwrap(), Activation::Tanh);
        assert_eq!("relu".parse::<Activation>().unwrap(), Activation::Relu);
        assert!("sigmoid".parse::<Activation>().is_err());
        assert_eq!(PropagationMode::Residual.to_string(), "residual");
        assert_eq!(Activation::Relu.to_string(), "relu");
    }

    #[test]
    fn activation_derivatives() {
        let t = Activation::Tanh;
        assert_eq!(t.derivative(0.0), 1.0);
        let got = t.derivative(0.7);
        let want = 1.0 - 0.7f64.tanh().powi(2);
        assert!((got - want).abs() < 1e-16);
        let r = Activation::Relu;
        assert_eq!(r.apply(-2.0), 0.0);
        assert_eq!(r.apply(3.5), 3.5);
        assert_eq!(r.derivative(-1.0), 0.0);
        assert_eq!(r.derivative(0.0), 0.0);
        assert_eq!(r.derivative(2.0), 1.0);
    }

    #[test]
    fn fractional_single_step_value() {
        // n_f = 1, K = [[1]], b = 0, y0 = 0.5, tau = 0.2, gamma = 0.5:
        // Y_1 = 0.5 + sqrt(0.2) Gamma(1.5) tanh(0.5)
        let params = NetworkParams {
            w: arr2(&[[1.0]]),
            k: vec![arr2(&[[1.0]])],
            b: vec![0.0],
        };
        let y0 = arr2(&[[0.5]]);
        let traj =
            forward_propagate(&params, &y0, &hyper(PropagationMode::Fractional, 0.5, 1)).unwrap();
        assert!((traj.final_state()[[0, 0]] - 0.6831521544060686).abs() < 1e-15);
    }

    #[test]
    fn classical_order_matches_residual_bitwise() {
        for seed in 0..5u64 {
            let params = xavier_init(seed, 3, 2, 8, Activation::Tanh);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let y0 = Array2::from_shape_simple_fn((3, 7), || rng.random_range(-1.0..1.0));
            let frac =
                forward_propagate(&params, &y0, &hyper(PropagationMode::Fractional, 1.0, 8))
                    .unwrap();
            let res =
                forward_propagate(&params, &y0, &hyper(PropagationMode::Residual, 1.0, 8))
                    .unwrap();
            for (a, b) in frac.states.iter().zip(res.states.iter()) {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn plain_mode_is_bare_activation() {
        let params = NetworkParams {
            w: arr2(&[[1.0, 0.0]]),
            k: vec![arr2(&[[2.0, 0.0], [0.0, -1.0]])],
            b: vec![0.5],
        };
        let y0 = arr2(&[[0.3], [0.4]]);
        let traj =
            forward_propagate(&params, &y0, &hyper(PropagationMode::Plain, 0.5, 1)).unwrap();
        let y1 = traj.final_state();
        assert_eq!(y1[[0, 0]], (2.0_f64 * 0.3 + 0.5).tanh());
        assert_eq!(y1[[1, 0]], (-0.4_f64 + 0.5).tanh());
    }

    #[test]
    fn xavier_is_deterministic_and_bounded() {
        let p1 = xavier_init(42, 4, 3, 5, Activation::Tanh);
        let p2 = xavier_init(42, 4, 3, 5, Activation::Tanh);
        assert_eq!(p1, p2);
        let p3 = xavier_init(43, 4, 3, 5, Activation::Tanh);
        assert_ne!(p1.w, p3.w);

        let a = (3.0f64 / 4.0).sqrt();
        assert!(p1.w.iter().all(|&v| v.abs() < a));
        assert!(p1.k.iter().all(|k| k.iter().all(|&v| v.abs() < a)));
        assert!(p1.b.iter().all(|&v| v == 0.0));

        let r = xavier_init(42, 4, 3, 5, Activation::Relu);
        assert!(r.w.iter().all(|&v| v.abs() < 0.5));
    }

    #[test]
    fn forward_rejects_shape_mismatches() {
        let params = xavier_init(0, 3, 2, 4, Activation::Tanh);
        let y0 = Array2::<f64>::zeros((2, 5));
        assert!(matches!(
            forward_propagate(&params, &y0, &hyper(PropagationMode::Fractional, 0.5, 4)),
            Err(Error::DimensionMismatch { .. })
        ));
        let y0 = Array2::<f64>::zeros((3, 5));
        assert!(matches!(
            forward_propagate(&params, &y0, &hyper(PropagationMode::Fractional, 0.5, 3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn forward_flags_overflow_layer() {
        let params = NetworkParams {
            w: arr2(&[[1.0]]),
            k: vec![arr2(&[[1e200]]), arr2(&[[1e200]])],
            b: vec![0.0, 0.0],
        };
        let mut h = hyper(PropagationMode::Plain, 1.0, 2);
        h.activation = Activation::Relu;
        let y0 = arr2(&[[1e200]]);
        match forward_propagate(&params, &y0, &h) {
            Err(Error::NonFiniteState { step }) => assert_eq!(step, 1),
            other => panic!("expected non-finite state, got {other:?}"),
        }
    }
}
