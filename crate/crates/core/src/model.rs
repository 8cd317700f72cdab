//! Tiny fully-connected scalar-output networks with exact parameter
//! gradients and Hessians.
//!
//! The only architecture is one hidden layer plus an optional linear-and-bias
//! skip unit feeding the output:
//!
//! ```text
//! f(x; θ) = Σ_i c_i σ(w_iᵀ x + b_i) [+ aᵀ x + b]
//! ```
//!
//! The parameter layout is fixed and documented so that eigen-directions are
//! comparable across runs: all hidden weights `w_i` (unit-major), then all
//! hidden biases `b_i`, then all output weights `c_i`, then — when the skip
//! unit is enabled — its weights `a` and bias `b`.

use crate::error::{Error, Result};
use crate::linalg::{all_finite, SymMatrix, Vector};
use serde::{Deserialize, Serialize};

/// ReLU arguments closer to zero than this are "at the kink" for every
/// second-derivative computation.
pub const KINK_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Logistic,
    Identity,
}

impl Activation {
    pub fn value(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Logistic => 1.0 / (1.0 + (-z).exp()),
            Activation::Identity => z,
        }
    }

    /// `(σ(z), σ'(z), σ''(z))`. The ReLU subgradient at exactly zero is 0
    /// (unit inactive), matching the indicator convention used everywhere
    /// else in the crate.
    pub fn value_and_derivs(self, z: f64) -> (f64, f64, f64) {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    (z, 1.0, 0.0)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
            Activation::Tanh => {
                let h = z.tanh();
                let sp = 1.0 - h * h;
                (h, sp, -2.0 * h * sp)
            }
            Activation::Logistic => {
                let h = 1.0 / (1.0 + (-z).exp());
                let sp = h * (1.0 - h);
                (h, sp, sp * (1.0 - 2.0 * h))
            }
            Activation::Identity => (z, 1.0, 0.0),
        }
    }

    /// First derivative expressed in output coordinates, e.g. `1 − h²` for
    /// tanh and `h(1 − h)` for the logistic.
    pub fn prime_from_output(self, h: f64) -> f64 {
        match self {
            Activation::Relu => {
                if h > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - h * h,
            Activation::Logistic => h * (1.0 - h),
            Activation::Identity => 1.0,
        }
    }

    /// Second derivative in output coordinates: `−2h(1−h²)` for tanh,
    /// `h(1−h)(1−2h)` for the logistic, zero for ReLU and identity.
    pub fn second_from_output(self, h: f64) -> f64 {
        match self {
            Activation::Relu | Activation::Identity => 0.0,
            Activation::Tanh => -2.0 * h * (1.0 - h * h),
            Activation::Logistic => h * (1.0 - h) * (1.0 - 2.0 * h),
        }
    }

    pub fn is_smooth(self) -> bool {
        !matches!(self, Activation::Relu)
    }
}

/// Anything a training run or analysis needs from a hypothesis class:
/// exact forward values, parameter gradients, and parameter Hessians.
pub trait Model {
    fn param_count(&self) -> usize;
    fn input_dim(&self) -> usize;

    fn forward(&self, theta: &[f64], x: &[f64]) -> Result<f64>;
    fn gradient_into(&self, theta: &[f64], x: &[f64], out: &mut [f64]) -> Result<()>;
    fn hessian(&self, theta: &[f64], x: &[f64]) -> Result<SymMatrix>;

    fn gradient(&self, theta: &[f64], x: &[f64]) -> Result<Vector> {
        let mut out = vec![0.0; self.param_count()];
        self.gradient_into(theta, x, &mut out)?;
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    /// Adds the extra linear-and-bias unit `a x + b` feeding the output.
    pub skip_linear_and_bias: bool,
}

impl Architecture {
    pub fn new(
        input_dim: usize,
        hidden_width: usize,
        activation: Activation,
        skip_linear_and_bias: bool,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_width == 0 {
            return Err(Error::InvalidInput(
                "input_dim and hidden_width must be positive".into(),
            ));
        }
        Ok(Architecture { input_dim, hidden_width, activation, skip_linear_and_bias })
    }

    // Layout: w (m*d, unit-major), b (m), c (m), then skip a (d) and b (1).
    pub fn w_index(&self, unit: usize, coord: usize) -> usize {
        unit * self.input_dim + coord
    }

    pub fn b_index(&self, unit: usize) -> usize {
        self.hidden_width * self.input_dim + unit
    }

    pub fn c_index(&self, unit: usize) -> usize {
        self.hidden_width * (self.input_dim + 1) + unit
    }

    pub fn skip_a_index(&self, coord: usize) -> usize {
        debug_assert!(self.skip_linear_and_bias);
        self.hidden_width * (self.input_dim + 2) + coord
    }

    pub fn skip_b_index(&self) -> usize {
        debug_assert!(self.skip_linear_and_bias);
        self.hidden_width * (self.input_dim + 2) + self.input_dim
    }

    /// Pre-activation `w_iᵀ x + b_i` of one hidden unit.
    pub fn unit_argument(&self, theta: &[f64], unit: usize, x: &[f64]) -> f64 {
        let mut z = theta[self.b_index(unit)];
        for j in 0..self.input_dim {
            z += theta[self.w_index(unit, j)] * x[j];
        }
        z
    }

    fn check_dims(&self, theta: &[f64], x: &[f64]) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::InvalidInput(format!(
                "theta has length {}, architecture needs {}",
                theta.len(),
                self.param_count()
            )));
        }
        if x.len() != self.input_dim {
            return Err(Error::InvalidInput(format!(
                "input has length {}, architecture needs {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(())
    }
}

impl Model for Architecture {
    fn param_count(&self) -> usize {
        self.hidden_width * (self.input_dim + 2)
            + if self.skip_linear_and_bias { self.input_dim + 1 } else { 0 }
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn forward(&self, theta: &[f64], x: &[f64]) -> Result<f64> {
        self.check_dims(theta, x)?;
        let mut f = 0.0;
        for i in 0..self.hidden_width {
            let z = self.unit_argument(theta, i, x);
            f += theta[self.c_index(i)] * self.activation.value(z);
        }
        if self.skip_linear_and_bias {
            for j in 0..self.input_dim {
                f += theta[self.skip_a_index(j)] * x[j];
            }
            f += theta[self.skip_b_index()];
        }
        Ok(f)
    }

    fn gradient_into(&self, theta: &[f64], x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_dims(theta, x)?;
        assert_eq!(out.len(), self.param_count());
        for i in 0..self.hidden_width {
            let z = self.unit_argument(theta, i, x);
            let (h, sp, _) = self.activation.value_and_derivs(z);
            let c = theta[self.c_index(i)];
            for j in 0..self.input_dim {
                out[self.w_index(i, j)] = c * sp * x[j];
            }
            out[self.b_index(i)] = c * sp;
            out[self.c_index(i)] = h;
        }
        if self.skip_linear_and_bias {
            for j in 0..self.input_dim {
                out[self.skip_a_index(j)] = x[j];
            }
            out[self.skip_b_index()] = 1.0;
        }
        Ok(())
    }

    /// Exact parameter Hessian of `f(x; ·)`.
    ///
    /// For ReLU the Hessian exists only away from the kinks; any unit with
    /// `|w_iᵀx + b_i| < KINK_TOL` raises `AtKink`. Where it exists it has
    /// zeros everywhere except the mixed weight/output-weight entries of
    /// active units.
    fn hessian(&self, theta: &[f64], x: &[f64]) -> Result<SymMatrix> {
        self.check_dims(theta, x)?;
        let p = self.param_count();
        let mut hm = SymMatrix::zeros(p);
        for i in 0..self.hidden_width {
            let z = self.unit_argument(theta, i, x);
            if self.activation == Activation::Relu && z.abs() < KINK_TOL {
                return Err(Error::AtKink { unit: i, arg: z.abs() });
            }
            let (_, sp, spp) = self.activation.value_and_derivs(z);
            let c = theta[self.c_index(i)];
            let ci = self.c_index(i);
            let bi = self.b_index(i);
            // d2f / dw dw, dw db, db db: c σ'' times input products.
            for j in 0..self.input_dim {
                let wj = self.w_index(i, j);
                for k in 0..=j {
                    hm.set(wj, self.w_index(i, k), c * spp * x[j] * x[k]);
                }
                hm.set(wj, bi, c * spp * x[j]);
                hm.set(wj, ci, sp * x[j]);
            }
            hm.set(bi, bi, c * spp);
            hm.set(bi, ci, sp);
            // d2f / dc dc = 0; skip-unit rows are all zero (linear in θ).
        }
        Ok(hm)
    }
}

/// `f(x; θ) = θᵀx` — the baseline whose squared-gradient regularizer is
/// constant, useful as a control model in analyses and tests.
#[derive(Clone, Copy, Debug)]
pub struct LinearModel {
    pub dim: usize,
}

impl Model for LinearModel {
    fn param_count(&self) -> usize {
        self.dim
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn forward(&self, theta: &[f64], x: &[f64]) -> Result<f64> {
        if theta.len() != self.dim || x.len() != self.dim {
            return Err(Error::InvalidInput("dimension mismatch".into()));
        }
        Ok(theta.iter().zip(x).map(|(t, v)| t * v).sum())
    }

    fn gradient_into(&self, _theta: &[f64], x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::InvalidInput("dimension mismatch".into()));
        }
        out.copy_from_slice(x);
        Ok(())
    }

    fn hessian(&self, _theta: &[f64], _x: &[f64]) -> Result<SymMatrix> {
        Ok(SymMatrix::zeros(self.dim))
    }
}

/// Labeled training points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    points: Vec<(Vector, f64)>,
}

impl Dataset {
    pub fn new(points: Vec<(Vector, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("dataset is empty".into()));
        }
        let d = points[0].0.len();
        for (x, y) in &points {
            if x.len() != d {
                return Err(Error::InvalidInput("inconsistent input dimensions".into()));
            }
            if !all_finite(x) || !y.is_finite() {
                return Err(Error::InvalidInput("non-finite training point".into()));
            }
        }
        Ok(Dataset { points })
    }

    pub fn from_xy(xs: &[f64], ys: &[f64]) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::InvalidInput("x/y length mismatch".into()));
        }
        Self::new(xs.iter().zip(ys).map(|(&x, &y)| (vec![x], y)).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.points[0].0.len()
    }

    pub fn point(&self, i: usize) -> (&[f64], f64) {
        (&self.points[i].0, self.points[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.points.iter().map(|(x, y)| (x.as_slice(), *y))
    }

    pub fn points(&self) -> &[(Vector, f64)] {
        &self.points
    }

    /// 1-d inputs sorted strictly increasing, as the geometry analyses need.
    pub fn x_strictly_increasing(&self) -> bool {
        self.input_dim() == 1
            && self.points.windows(2).all(|w| w[0].0[0] < w[1].0[0])
    }
}

/// One step of the label-noise SGD update expanded about `theta_center`,
/// keeping every product term through cubic order in the offset.
///
/// `residual` is the noise-bearing residual at the expansion center
/// (`f(x; θ_center) − noisy label`). With directional derivatives along the
/// offset `δ = θ − θ_center`, the update is
///
/// ```text
/// Δθ_j = −2η [ e h^j
///            + h^θ h^j + e h^{j,θ}
///            + ½ h^{θ,θ} h^j + h^{j,θ} h^θ + ½ e h^{j,θ,θ}
///            + ⅙ h^{θ,θ,θ} h^j + ½ h^{θ,θ} h^{j,θ} + ½ h^θ h^{j,θ,θ} + ⅙ e h^{j,θ,θ,θ} ]
/// ```
///
/// so the gap to the exact SGD step is fourth order in the offset. The
/// quadratic group matches `−η(h^j h^{θ,θ} + 2 h^{j,θ} h^θ + e h^{j,θ,θ})`.
/// `h^{j,θ,θ}` is contracted by central differences of the exact Hessian
/// along δ, and the two purely cubic directional derivatives come from
/// 4-point stencils along δ; this path is diagnostic-only, so the finite
/// differences keep the analytic code surface small.
pub fn taylor_update<M: Model>(
    model: &M,
    theta_center: &[f64],
    theta: &[f64],
    residual: f64,
    eta: f64,
    x: &[f64],
) -> Result<Vector> {
    let p = model.param_count();
    if theta_center.len() != p || theta.len() != p {
        return Err(Error::InvalidInput("theta length mismatch".into()));
    }
    let delta: Vector = theta.iter().zip(theta_center).map(|(t, c)| t - c).collect();
    let g = model.gradient(theta_center, x)?;
    let h0 = model.hessian(theta_center, x)?;

    let h_theta = crate::linalg::dot(&g, &delta);
    let h_j_theta = h0.matvec(&delta);
    let h_theta_theta = crate::linalg::dot(&h_j_theta, &delta);

    let at = |t: f64| -> Vector {
        theta_center.iter().zip(&delta).map(|(c, d)| c + t * d).collect()
    };
    let th_p1 = at(1.0);
    let th_m1 = at(-1.0);
    let th_p2 = at(2.0);
    let th_m2 = at(-2.0);

    // T(δ, δ)_j from central differences of the Hessian along δ itself, so
    // the stencil error scales with the fourth power of the offset.
    let hp = model.hessian(&th_p1, x)?;
    let hmn = model.hessian(&th_m1, x)?;
    let mut h_j_theta_theta = vec![0.0; p];
    for j in 0..p {
        let mut acc = 0.0;
        for k in 0..p {
            acc += 0.5 * (hp.get(j, k) - hmn.get(j, k)) * delta[k];
        }
        h_j_theta_theta[j] = acc;
    }

    // Third directional derivative of the value and of the gradient along δ:
    // d³/dt³ φ(t)|₀ ≈ [φ(2) − 2φ(1) + 2φ(−1) − φ(−2)] / 2.
    let f_p1 = model.forward(&th_p1, x)?;
    let f_m1 = model.forward(&th_m1, x)?;
    let f_p2 = model.forward(&th_p2, x)?;
    let f_m2 = model.forward(&th_m2, x)?;
    let h_theta3 = 0.5 * (f_p2 - 2.0 * f_p1 + 2.0 * f_m1 - f_m2);

    let g_p1 = model.gradient(&th_p1, x)?;
    let g_m1 = model.gradient(&th_m1, x)?;
    let g_p2 = model.gradient(&th_p2, x)?;
    let g_m2 = model.gradient(&th_m2, x)?;

    let mut update = vec![0.0; p];
    for j in 0..p {
        let h_j_theta3 = 0.5 * (g_p2[j] - 2.0 * g_p1[j] + 2.0 * g_m1[j] - g_m2[j]);
        update[j] = -2.0
            * eta
            * (residual * g[j]
                + h_theta * g[j]
                + residual * h_j_theta[j]
                + 0.5 * h_theta_theta * g[j]
                + h_j_theta[j] * h_theta
                + 0.5 * residual * h_j_theta_theta[j]
                + h_theta3 * g[j] / 6.0
                + 0.5 * h_theta_theta * h_j_theta[j]
                + 0.5 * h_theta * h_j_theta_theta[j]
                + residual * h_j_theta3 / 6.0);
    }
    Ok(update)
}
