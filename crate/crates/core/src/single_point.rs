//! Closed-form structure of stable two-layer logistic/tanh networks trained
//! on a single datapoint.
//!
//! With one training point, a unit's whole influence is its output
//! `o = c·h` with `h = σ(w ᵀx + b)`. Non-repellent points force every unit
//! onto the per-output optimal activation `optimal_h(o)` and force the
//! marginal regularizer cost `R_o'(o)` to agree across units, which caps
//! the number of distinct `(c, h)` values at two (logistic) or one
//! sign-symmetric pair plus dead units (tanh).
//!
//! The hidden bias acts as a constant input appended to `x`, so all
//! single-point formulas use the effective norm `‖(x, 1)‖ = √(‖x‖² + 1)`
//! when applied to this crate's architectures.

use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::model::{Activation, Architecture, Model};
use crate::regularizer::r_o_prime;
use serde::{Deserialize, Serialize};

/// Per-unit state at the single datapoint.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct UnitState {
    pub unit: usize,
    pub c: f64,
    pub h: f64,
    /// o = c·h, the unit's contribution to the output.
    pub o: f64,
}

/// The activation value minimizing a unit's regularizer contribution at
/// fixed output `o`:
///
/// * logistic: `h = o²‖x‖² / (1 + o²‖x‖²)`
/// * tanh:     `h² = √(o²‖x‖² / (o²‖x‖² + 1))`, sign of `h` matching `o`
///   so that `c = o/h` is consistent.
pub fn optimal_h(o: f64, x_norm: f64, activation: Activation) -> Result<f64> {
    if !(x_norm > 0.0) {
        return Err(Error::InvalidInput("x_norm must be positive".into()));
    }
    let s = o * o * x_norm * x_norm;
    match activation {
        Activation::Logistic => Ok(s / (1.0 + s)),
        Activation::Tanh => Ok(o.signum() * (s / (s + 1.0)).sqrt().sqrt()),
        _ => Err(Error::InvalidInput(format!(
            "optimal_h is defined for logistic and tanh, not {activation:?}"
        ))),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Cluster {
    pub rep_c: f64,
    pub rep_h: f64,
    pub members: Vec<usize>,
    /// Max-norm distance of the farthest member from the representative.
    pub spread: f64,
}

impl Cluster {
    pub fn rep_o(&self) -> f64 {
        self.rep_c * self.rep_h
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClusterReport {
    pub units: Vec<UnitState>,
    /// Non-zero clusters in order of first member.
    pub clusters: Vec<Cluster>,
    /// Units with |c| ≤ tol and |h| ≤ tol (tanh only; empty for logistic).
    pub zero_cluster: Vec<usize>,
    pub tol: f64,
    /// Effective input norm √(‖x‖² + 1) used for the closed forms.
    pub x_norm_eff: f64,
    pub activation: Activation,
    /// Number of non-zero clusters within the activation's allowance.
    pub cluster_count_ok: bool,
    /// Per-unit |h − optimal_h(o)| within tol (non-zero units).
    pub optimal_h_ok: bool,
    /// Max per-unit |h − optimal_h(o)| over non-zero units.
    pub max_optimal_h_dev: f64,
    /// R_o'(o) agrees across non-zero clusters within tol.
    pub r_o_prime_ok: bool,
    /// For tanh with two clusters: representatives are sign-symmetric.
    pub sign_symmetric_ok: bool,
    /// The activation's whole contract.
    pub passes: bool,
}

fn single_linkage(states: &[UnitState], tol: f64) -> Vec<Vec<usize>> {
    // Connected components under max-norm linkage on (c, h); deterministic
    // order by unit index.
    let n = states.len();
    let mut assigned = vec![false; n];
    let mut groups = Vec::new();
    for i in 0..n {
        if assigned[i] {
            continue;
        }
        let mut member_of_group = vec![i];
        assigned[i] = true;
        let mut frontier = vec![i];
        while let Some(a) = frontier.pop() {
            for b in 0..n {
                if !assigned[b] {
                    let d = (states[a].c - states[b].c)
                        .abs()
                        .max((states[a].h - states[b].h).abs());
                    if d <= tol {
                        assigned[b] = true;
                        member_of_group.push(b);
                        frontier.push(b);
                    }
                }
            }
        }
        member_of_group.sort_unstable();
        groups.push(member_of_group);
    }
    groups
}

/// Clusters the hidden units by `(c, h)` at the single datapoint `x` and
/// checks the activation's non-repellence contract at tolerance `tol`.
pub fn characterize(
    arch: &Architecture,
    theta: &[f64],
    x: &[f64],
    tol: f64,
) -> Result<ClusterReport> {
    if !matches!(arch.activation, Activation::Logistic | Activation::Tanh) {
        return Err(Error::InvalidInput(
            "characterize applies to logistic and tanh architectures".into(),
        ));
    }
    if theta.len() != arch.param_count() || x.len() != arch.input_dim {
        return Err(Error::InvalidInput("dimension mismatch".into()));
    }
    let x_norm_eff = (norm(x).powi(2) + 1.0).sqrt();
    let units: Vec<UnitState> = (0..arch.hidden_width)
        .map(|i| {
            let h = arch.activation.value(arch.unit_argument(theta, i, x));
            let c = theta[arch.c_index(i)];
            UnitState { unit: i, c, h, o: c * h }
        })
        .collect();

    let is_tanh = arch.activation == Activation::Tanh;
    let (zero_cluster, live): (Vec<usize>, Vec<UnitState>) = if is_tanh {
        let mut zeros = Vec::new();
        let mut live = Vec::new();
        for u in &units {
            if u.c.abs() <= tol && u.h.abs() <= tol {
                zeros.push(u.unit);
            } else {
                live.push(*u);
            }
        }
        (zeros, live)
    } else {
        (Vec::new(), units.clone())
    };

    let groups = single_linkage(&live, tol);
    let clusters: Vec<Cluster> = groups
        .iter()
        .map(|g| {
            let m = g.len() as f64;
            let rep_c = g.iter().map(|&i| live[i].c).sum::<f64>() / m;
            let rep_h = g.iter().map(|&i| live[i].h).sum::<f64>() / m;
            let spread = g
                .iter()
                .map(|&i| (live[i].c - rep_c).abs().max((live[i].h - rep_h).abs()))
                .fold(0.0_f64, f64::max);
            Cluster {
                rep_c,
                rep_h,
                members: g.iter().map(|&i| live[i].unit).collect(),
                spread,
            }
        })
        .collect();

    let cluster_count_ok = clusters.len() <= 2;

    let mut max_optimal_h_dev = 0.0_f64;
    for u in &live {
        let want = optimal_h(u.o, x_norm_eff, arch.activation)?;
        max_optimal_h_dev = max_optimal_h_dev.max((u.h - want).abs());
    }
    let optimal_h_ok = max_optimal_h_dev <= tol;

    let mut r_o_prime_ok = true;
    for a in 0..clusters.len() {
        for b in (a + 1)..clusters.len() {
            let (oa, ob) = (clusters[a].rep_o(), clusters[b].rep_o());
            match (
                r_o_prime(oa, x_norm_eff, arch.activation),
                r_o_prime(ob, x_norm_eff, arch.activation),
            ) {
                (Ok(da), Ok(db)) => {
                    if (da - db).abs() > tol {
                        r_o_prime_ok = false;
                    }
                }
                // A live tanh cluster at o = 0 should have been in the zero
                // cluster; treat the cusp as a failed comparison.
                _ => r_o_prime_ok = false,
            }
        }
    }

    let sign_symmetric_ok = if is_tanh && clusters.len() == 2 {
        (clusters[0].rep_c + clusters[1].rep_c).abs() <= tol
            && (clusters[0].rep_h + clusters[1].rep_h).abs() <= tol
    } else {
        true
    };

    let passes = if is_tanh {
        cluster_count_ok && sign_symmetric_ok && r_o_prime_ok
    } else {
        cluster_count_ok && optimal_h_ok && r_o_prime_ok
    };

    Ok(ClusterReport {
        units,
        clusters,
        zero_cluster,
        tol,
        x_norm_eff,
        activation: arch.activation,
        cluster_count_ok,
        optimal_h_ok,
        max_optimal_h_dev,
        r_o_prime_ok,
        sign_symmetric_ok,
        passes,
    })
}

/// Residuals of the general-activation equilibrium conditions for one unit,
/// both zero when the unit is stationary under the regularized dynamics:
///
/// ```text
/// res1 = c² − h² / (‖x‖² (σ'(h)² − h σ''(h)))
/// res2 = (−2δ/(ηε²))² − σ'(h)⁴ ‖x‖² / (σ'(h)² − h σ''(h))
/// ```
///
/// `delta` is the network residual before noise; σ', σ'' are taken in
/// output coordinates.
pub fn equilibrium_residual(
    activation: Activation,
    c: f64,
    h: f64,
    x_norm: f64,
    delta: f64,
    eta: f64,
    eps: f64,
) -> Result<(f64, f64)> {
    if h == 0.0 {
        return Err(Error::Undefined("equilibrium residual needs h != 0".into()));
    }
    let sp = activation.prime_from_output(h);
    if sp == 0.0 {
        return Err(Error::Undefined("equilibrium residual needs sigma'(h) != 0".into()));
    }
    let denom = sp * sp - h * activation.second_from_output(h);
    if denom.abs() < 1e-14 {
        return Err(Error::Undefined(format!(
            "degenerate denominator sigma'^2 - h sigma'' = {denom:.3e}"
        )));
    }
    let n2 = x_norm * x_norm;
    let res1 = c * c - h * h / (n2 * denom);
    let lhs = (-2.0 * delta / (eta * eps * eps)).powi(2);
    let res2 = lhs - sp.powi(4) * n2 / denom;
    Ok((res1, res2))
}

/// Number of solutions of `R_o'(o) = a` inside `bracket`, by sign changes
/// on a fine grid with bisection refinement of each change.
pub fn count_roots(
    activation: Activation,
    a: f64,
    x_norm: f64,
    bracket: (f64, f64),
) -> Result<usize> {
    let (lo, hi) = bracket;
    if !(lo < hi) {
        return Err(Error::InvalidInput("empty bracket".into()));
    }
    if activation == Activation::Tanh && lo <= 0.0 && hi >= 0.0 {
        return Err(Error::InvalidInput(
            "tanh bracket must exclude the cusp at o = 0".into(),
        ));
    }
    let grid = 4000;
    let f = |o: f64| -> Result<f64> { Ok(r_o_prime(o, x_norm, activation)? - a) };
    let mut count = 0;
    let mut prev_x = lo;
    let mut prev_v = f(lo)?;
    for i in 1..=grid {
        let x = lo + (hi - lo) * i as f64 / grid as f64;
        let v = f(x)?;
        if prev_v == 0.0 {
            count += 1;
        } else if prev_v * v < 0.0 {
            // Bisection refinement, confirming a genuine crossing.
            let (mut xl, mut xr, mut vl) = (prev_x, x, prev_v);
            for _ in 0..60 {
                let xm = 0.5 * (xl + xr);
                let vm = f(xm)?;
                if vl * vm <= 0.0 {
                    xr = xm;
                } else {
                    xl = xm;
                    vl = vm;
                }
            }
            count += 1;
        }
        prev_x = x;
        prev_v = v;
    }
    if prev_v == 0.0 {
        count += 1;
    }
    Ok(count)
}

/// Pre-activation realizing a requested activation output.
pub fn preactivation_for_output(activation: Activation, h: f64) -> Result<f64> {
    match activation {
        Activation::Logistic => {
            if h <= 0.0 || h >= 1.0 {
                return Err(Error::InvalidInput("logistic output must be in (0,1)".into()));
            }
            Ok((h / (1.0 - h)).ln())
        }
        Activation::Tanh => {
            if h <= -1.0 || h >= 1.0 {
                return Err(Error::InvalidInput("tanh output must be in (-1,1)".into()));
            }
            Ok(0.5 * ((1.0 + h) / (1.0 - h)).ln())
        }
        _ => Err(Error::InvalidInput("no inverse for this activation".into())),
    }
}
