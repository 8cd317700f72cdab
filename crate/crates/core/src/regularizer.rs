//! The squared-gradient regularizer `R(θ) = Σ_i ‖∇_θ f(x_i; θ)‖²`, its
//! gradient, and the closed forms it takes for specific architectures.
//!
//! Two normalizations are in circulation: the plain sum over training
//! points (`r_sum`, the one with closed forms) and the `1/n` average
//! (`r_mean`). Both are reported; every function in this crate that
//! consumes a regularizer value says which one it wants.

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::model::{Activation, Architecture, Dataset, Model};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegReport {
    /// Σ_i ‖∇_θ f(x_i; θ)‖²
    pub r_sum: f64,
    /// r_sum / n
    pub r_mean: f64,
    /// ‖∇_θ f(x_i; θ)‖² per training point.
    pub per_point: Vec<f64>,
}

/// Evaluates the squared-gradient regularizer.
pub fn reg<M: Model>(model: &M, theta: &[f64], data: &Dataset) -> Result<RegReport> {
    let mut per_point = Vec::with_capacity(data.len());
    let mut g = vec![0.0; model.param_count()];
    for (x, _) in data.iter() {
        model.gradient_into(theta, x, &mut g)?;
        per_point.push(g.iter().map(|v| v * v).sum());
    }
    let r_sum: f64 = per_point.iter().sum();
    Ok(RegReport { r_sum, r_mean: r_sum / data.len() as f64, per_point })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegGradient {
    /// ∇_θ r_sum = 2 Σ_i H_i g_i.
    pub grad: Vector,
    /// Training points excluded from the sum because some ReLU unit argument
    /// was within `KINK_TOL` of its kink; R is non-differentiable there.
    pub skipped_points: Vec<usize>,
}

/// Gradient of `r_sum` in parameter space.
///
/// For ReLU models, points sitting at a kink are dropped from the sum and
/// reported rather than poisoning the whole evaluation.
pub fn reg_gradient<M: Model>(model: &M, theta: &[f64], data: &Dataset) -> Result<RegGradient> {
    let p = model.param_count();
    let mut grad = vec![0.0; p];
    let mut skipped = Vec::new();
    let mut g = vec![0.0; p];
    for (i, (x, _)) in data.iter().enumerate() {
        let h = match model.hessian(theta, x) {
            Ok(h) => h,
            Err(Error::AtKink { .. }) => {
                skipped.push(i);
                continue;
            }
            Err(e) => return Err(e),
        };
        model.gradient_into(theta, x, &mut g)?;
        let hg = h.matvec(&g);
        for j in 0..p {
            grad[j] += 2.0 * hg[j];
        }
    }
    Ok(RegGradient { grad, skipped_points: skipped })
}

/// Closed form of `r_sum` for the 1-d two-layer ReLU network with the
/// linear-and-bias skip unit:
///
/// ```text
/// R(θ) = Σ_{i,j} [ σ(a_i x_j + b_i)² + c_i² (1 + x_j²) I_{a_i x_j + b_i > 0} ] + Σ_j (1 + x_j²)
/// ```
///
/// The last sum is the skip unit's contribution; it carries no θ dependence.
pub fn relu_reg_closed_form(arch: &Architecture, theta: &[f64], data: &Dataset) -> Result<f64> {
    if arch.activation != Activation::Relu || arch.input_dim != 1 || !arch.skip_linear_and_bias {
        return Err(Error::InvalidInput(
            "closed form applies to the 1-d relu architecture with skip unit".into(),
        ));
    }
    if theta.len() != arch.param_count() {
        return Err(Error::InvalidInput("theta length mismatch".into()));
    }
    let mut total = 0.0;
    for (x, _) in data.iter() {
        let xj = x[0];
        for i in 0..arch.hidden_width {
            let z = arch.unit_argument(theta, i, x);
            if z > 0.0 {
                let c = theta[arch.c_index(i)];
                total += z * z + c * c * (1.0 + xj * xj);
            }
        }
        total += 1.0 + xj * xj;
    }
    Ok(total)
}

/// Per-unit minimized regularizer contribution `R_o(o)` as a function of a
/// unit's output `o = c·h` in the single-datapoint setting.
///
/// * logistic: `R_o(o) = o²‖x‖² / (1 + o²‖x‖²)`
/// * tanh:     `R_o(o) = 2 [ √(o²‖x‖² (o²‖x‖² + 1)) − o²‖x‖² ]`
pub fn r_o(o: f64, x_norm: f64, activation: Activation) -> Result<f64> {
    let s = o * o * x_norm * x_norm;
    match activation {
        Activation::Logistic => Ok(s / (1.0 + s)),
        Activation::Tanh => Ok(2.0 * ((s * (s + 1.0)).sqrt() - s)),
        _ => Err(Error::InvalidInput(format!(
            "R_o is defined for logistic and tanh, not {activation:?}"
        ))),
    }
}

/// Derivative of [`r_o`] in `o`.
///
/// * logistic: `R_o'(o) = 2 o ‖x‖² / (1 + o²‖x‖²)²`
/// * tanh:     `R_o'(o) = 2 o ‖x‖² [ (2s + 1)/√(s(s+1)) − 2 ]` with `s = o²‖x‖²`,
///   undefined at `o = 0`.
pub fn r_o_prime(o: f64, x_norm: f64, activation: Activation) -> Result<f64> {
    let n2 = x_norm * x_norm;
    let s = o * o * n2;
    match activation {
        Activation::Logistic => Ok(2.0 * o * n2 / ((1.0 + s) * (1.0 + s))),
        Activation::Tanh => {
            if o == 0.0 {
                return Err(Error::Undefined("tanh R_o' has a cusp at o = 0".into()));
            }
            Ok(2.0 * o * n2 * ((2.0 * s + 1.0) / (s * (s + 1.0)).sqrt() - 2.0))
        }
        _ => Err(Error::InvalidInput(format!(
            "R_o' is defined for logistic and tanh, not {activation:?}"
        ))),
    }
}
