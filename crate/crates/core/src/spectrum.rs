//! The γ-spectrum of the gradient Gram matrix and the repellence
//! classifier for zero-error points.
//!
//! At a zero-error point θ*, directions with positive Gram eigenvalue
//! mean-revert under label-noise SGD while zero-γ directions feel only the
//! regularizer drift. θ* repels the dynamics exactly when the gradient of
//! the squared-gradient regularizer has a component inside the zero-γ
//! subspace; otherwise the dynamics linger nearby.

use crate::error::{Error, Result};
use crate::linalg::{self, norm, project, sym_eigendecompose, Subspace, SymMatrix, Vector};
use crate::model::{Dataset, Model};
use crate::regularizer::reg_gradient;
use crate::trainer::{loss, max_residual};
use serde::{Deserialize, Serialize};

/// Default relative cut between "zero" and "positive" γ. Spectra of these
/// models are sharply bimodal, so the exact value is uncritical.
pub const GAMMA_THRESHOLD_REL_DEFAULT: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Max residual for a point to count as zero training error.
    pub zero_error_tol: f64,
    /// Absolute floor of the non-repellence test.
    pub tol_abs: f64,
    /// Relative slack of the non-repellence test against ‖∇r_sum‖.
    pub tol_rel: f64,
    /// Relative γ cut handed to [`spectrum`].
    pub gamma_threshold_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            zero_error_tol: 1e-6,
            tol_abs: 1e-8,
            tol_rel: 1e-6,
            gamma_threshold_rel: GAMMA_THRESHOLD_REL_DEFAULT,
        }
    }
}

/// Gram matrix `(1/n) Σ_i g_i g_iᵀ`, its eigenvalues γ_j (descending), the
/// eigenbasis, and the zero-γ subspace.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub gram: SymMatrix,
    pub gammas: Vec<f64>,
    /// `basis[j]` is the unit eigenvector for `gammas[j]`.
    pub basis: Vec<Vector>,
    pub zero_gamma: Subspace,
    /// Absolute γ value below which a direction counts as zero.
    pub gamma_threshold: f64,
}

impl SpectrumReport {
    /// Indices of directions with γ above the zero cut.
    pub fn positive_dirs(&self) -> Vec<usize> {
        (0..self.gammas.len()).filter(|&j| self.gammas[j] > self.gamma_threshold).collect()
    }

    pub fn zero_dirs(&self) -> Vec<usize> {
        (0..self.gammas.len()).filter(|&j| self.gammas[j] <= self.gamma_threshold).collect()
    }

    pub fn gamma_max(&self) -> f64 {
        self.gammas.first().copied().unwrap_or(0.0).max(0.0)
    }
}

/// Builds the Gram matrix `(1/n) Σ g_i g_iᵀ` at θ and splits its eigenbasis
/// at `gamma_threshold_rel · γ_max` (absolute floor 1e-12 when γ_max = 0).
pub fn spectrum<M: Model>(
    model: &M,
    theta: &[f64],
    data: &Dataset,
    gamma_threshold_rel: f64,
) -> Result<SpectrumReport> {
    let p = model.param_count();
    let mut gram = SymMatrix::zeros(p);
    let w = 1.0 / data.len() as f64;
    let mut g = vec![0.0; p];
    for (x, _) in data.iter() {
        model.gradient_into(theta, x, &mut g)?;
        gram.add_scaled_outer(w, &g);
    }
    let eig = sym_eigendecompose(&gram)?;
    let gamma_max = eig.eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let gamma_threshold = if gamma_max > 0.0 { gamma_threshold_rel * gamma_max } else { 1e-12 };

    let zero_basis: Vec<Vector> = eig
        .eigenvalues
        .iter()
        .zip(&eig.eigenvectors)
        .filter(|(v, _)| **v <= gamma_threshold)
        .map(|(_, q)| q.clone())
        .collect();
    let zero_gamma = Subspace::from_basis(p, zero_basis)?;

    Ok(SpectrumReport {
        gram,
        gammas: eig.eigenvalues,
        basis: eig.eigenvectors,
        zero_gamma,
        gamma_threshold,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepellenceKind {
    NonRepellent,
    StronglyRepellent,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RepellenceVerdict {
    pub kind: RepellenceKind,
    /// ‖∇r_sum projected onto the zero-γ subspace‖.
    pub projected_grad_norm: f64,
    /// ‖∇r_sum‖.
    pub total_grad_norm: f64,
    /// Unit vector in the zero-γ subspace along −(projected gradient);
    /// present exactly for strongly repellent verdicts.
    pub descent_direction: Option<Vector>,
    /// Tolerances the verdict was computed under.
    pub tolerances: Tolerances,
}

/// Classifies a zero-error point as non-repellent or strongly repellent by
/// projecting ∇r_sum onto the zero-γ subspace.
pub fn classify_repellence<M: Model>(
    model: &M,
    theta: &[f64],
    data: &Dataset,
    tol: &Tolerances,
) -> Result<RepellenceVerdict> {
    let worst = max_residual(model, theta, data)?;
    if worst > tol.zero_error_tol {
        return Err(Error::NotZeroError { max_residual: worst, tol: tol.zero_error_tol });
    }
    let spec = spectrum(model, theta, data, tol.gamma_threshold_rel)?;
    let rg = reg_gradient(model, theta, data)?;
    let v = project(&rg.grad, &spec.zero_gamma)?;
    let projected = norm(&v);
    let total = norm(&rg.grad);
    if projected <= tol.tol_abs + tol.tol_rel * total {
        Ok(RepellenceVerdict {
            kind: RepellenceKind::NonRepellent,
            projected_grad_norm: projected,
            total_grad_norm: total,
            descent_direction: None,
            tolerances: *tol,
        })
    } else {
        let dir: Vector = v.iter().map(|x| -x / projected).collect();
        Ok(RepellenceVerdict {
            kind: RepellenceKind::StronglyRepellent,
            projected_grad_norm: projected,
            total_grad_norm: total,
            descent_direction: Some(dir),
            tolerances: *tol,
        })
    }
}

/// Evaluates `(ΔL, ΔR)` after moving `step` along the verdict's descent
/// direction. For a genuine witness, ΔL is quadratic in the step while ΔR
/// decreases linearly.
pub fn descent_step_check<M: Model>(
    model: &M,
    theta: &[f64],
    data: &Dataset,
    verdict: &RepellenceVerdict,
    step: f64,
) -> Result<(f64, f64)> {
    let dir = verdict
        .descent_direction
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("verdict has no descent direction".into()))?;
    let moved: Vector = theta.iter().zip(dir).map(|(t, d)| t + step * d).collect();
    let l0 = loss(model, theta, data)?;
    let l1 = loss(model, &moved, data)?;
    let r0 = crate::regularizer::reg(model, theta, data)?.r_sum;
    let r1 = crate::regularizer::reg(model, &moved, data)?.r_sum;
    Ok((l1 - l0, r1 - r0))
}

/// Witness helper shared by tests and reports: max_i |g_iᵀ b| / ‖g_i‖ over
/// all data gradients and zero-γ basis vectors.
pub fn zero_gamma_orthogonality<M: Model>(
    model: &M,
    theta: &[f64],
    data: &Dataset,
    report: &SpectrumReport,
) -> Result<f64> {
    let mut worst = 0.0_f64;
    let mut g = vec![0.0; model.param_count()];
    for (x, _) in data.iter() {
        model.gradient_into(theta, x, &mut g)?;
        let gn = norm(&g).max(1e-300);
        for b in report.zero_gamma.basis() {
            worst = worst.max(linalg::dot(&g, b).abs() / gn);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, Architecture, LinearModel};
    use crate::trainer::random_init;

    #[test]
    fn linear_model_spanning_data_has_empty_zero_gamma() {
        let m = LinearModel { dim: 2 };
        let data = Dataset::new(vec![
            (vec![1.0, 0.2], 0.0),
            (vec![-0.3, 1.0], 0.0),
        ])
        .unwrap();
        let s = spectrum(&m, &[0.0, 0.0], &data, 1e-8).unwrap();
        assert_eq!(s.zero_gamma.dim(), 0);
        assert_eq!(s.positive_dirs().len(), 2);
    }

    #[test]
    fn linear_model_single_point_spectrum() {
        let m = LinearModel { dim: 2 };
        let data = Dataset::new(vec![(vec![1.0, 0.0], 0.0)]).unwrap();
        let s = spectrum(&m, &[0.0, 0.0], &data, 1e-8).unwrap();
        assert!((s.gammas[0] - 1.0).abs() <= 1e-12);
        assert!(s.gammas[1].abs() <= 1e-12);
        assert_eq!(s.zero_gamma.dim(), 1);
        assert!((s.zero_gamma.basis()[0][1].abs() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn tanh_gram_rank_bounded_by_n() {
        let arch = Architecture::new(2, 5, Activation::Tanh, false).unwrap();
        let theta = random_init(arch.param_count(), 0.8, 3);
        let data = Dataset::new(vec![
            (vec![0.8, -0.2], 0.0),
            (vec![-0.5, 0.6], 0.0),
            (vec![0.3, 0.9], 0.0),
            (vec![-0.9, -0.7], 0.0),
        ])
        .unwrap();
        let s = spectrum(&arch, &theta, &data, 1e-8).unwrap();
        assert_eq!(arch.param_count(), 20);
        assert!(s.positive_dirs().len() <= 4);
        assert!(s.zero_gamma.dim() >= 16);
        // PSD up to roundoff.
        assert!(s.gammas.iter().all(|&g| g >= -1e-10));
    }

    #[test]
    fn zero_gamma_is_orthogonal_to_every_gradient() {
        let arch = Architecture::new(2, 5, Activation::Tanh, false).unwrap();
        let theta = random_init(arch.param_count(), 0.8, 4);
        let data = Dataset::new(vec![
            (vec![0.8, -0.2], 0.0),
            (vec![-0.5, 0.6], 0.0),
            (vec![0.3, 0.9], 0.0),
        ])
        .unwrap();
        let s = spectrum(&arch, &theta, &data, 1e-8).unwrap();
        let worst = zero_gamma_orthogonality(&arch, &theta, &data, &s).unwrap();
        assert!(worst <= 1e-8, "max relative overlap {worst:.3e}");
    }

    #[test]
    fn linear_model_is_non_repellent_everywhere() {
        let m = LinearModel { dim: 2 };
        let data = Dataset::new(vec![(vec![1.0, 0.0], 0.5)]).unwrap();
        let tol = Tolerances::default();
        let v = classify_repellence(&m, &[0.5, 0.7], &data, &tol).unwrap();
        assert_eq!(v.kind, RepellenceKind::NonRepellent);
        assert!(v.descent_direction.is_none());
    }

    #[test]
    fn classify_requires_zero_error() {
        let m = LinearModel { dim: 1 };
        let data = Dataset::new(vec![(vec![1.0], 1.0)]).unwrap();
        let tol = Tolerances::default();
        assert!(matches!(
            classify_repellence(&m, &[0.0], &data, &tol),
            Err(Error::NotZeroError { .. })
        ));
    }

    /// A line fit by the skip unit, plus a zero-error "tent" of three ReLU
    /// kinks strictly between two data points: a classic witness that should
    /// be strongly repellent, with the descent step shrinking r_sum at first
    /// order while the loss moves only quadratically.
    fn tent_witness() -> (Architecture, Vec<f64>, Dataset) {
        let arch = Architecture::new(1, 3, Activation::Relu, true).unwrap();
        let s = 0.8;
        let (k1, k2, k3) = (0.3, 0.5, 0.7);
        // layout: a1 a2 a3 | b1 b2 b3 | c1 c2 c3 | skip_a skip_b
        let theta = vec![
            1.0, 1.0, 1.0,
            -k1, -k2, -k3,
            s, -2.0 * s, s,
            0.5, 0.1,
        ];
        // Collinear data on y = 0.5 x + 0.1, with the tent strictly inside (0, 1).
        let data = Dataset::from_xy(
            &[-1.0, 0.0, 1.0, 2.0],
            &[-0.4, 0.1, 0.6, 1.1],
        )
        .unwrap();
        (arch, theta, data)
    }

    #[test]
    fn tent_is_strongly_repellent_with_working_descent_direction() {
        let (arch, theta, data) = tent_witness();
        assert!(max_residual(&arch, &theta, &data).unwrap() <= 1e-12);
        let tol = Tolerances::default();
        let v = classify_repellence(&arch, &theta, &data, &tol).unwrap();
        assert_eq!(v.kind, RepellenceKind::StronglyRepellent);
        let dir = v.descent_direction.as_ref().unwrap();
        assert!((norm(dir) - 1.0).abs() <= 1e-10);

        // First-order regularizer decrease, quadratic loss change.
        let step = 1e-5;
        let (dl, dr) = descent_step_check(&arch, &theta, &data, &v, step).unwrap();
        assert!(dr < 0.0);
        assert!(
            (dr / step + v.projected_grad_norm).abs() <= 0.1 * v.projected_grad_norm,
            "slope {} vs projected norm {}",
            dr / step,
            v.projected_grad_norm
        );
        let (dl_half, _) = descent_step_check(&arch, &theta, &data, &v, step / 2.0).unwrap();
        assert!(
            dl.abs() >= 3.9 * dl_half.abs() || dl.abs() <= 1e-18,
            "loss change not quadratic: {dl:.3e} vs {dl_half:.3e}"
        );
        // Antisymmetry of the directional derivative.
        let (_, dr_neg) = descent_step_check(&arch, &theta, &data, &v, -step).unwrap();
        assert!((dr + dr_neg).abs() <= 0.05 * dr.abs());
        // Zero step is a no-op.
        let (z1, z2) = descent_step_check(&arch, &theta, &data, &v, 0.0).unwrap();
        assert_eq!((z1, z2), (0.0, 0.0));
    }

    /// The verdict only depends on the zero-γ subspace, not on which
    /// orthonormal basis expresses it.
    #[test]
    fn classify_invariant_under_basis_reexpression() {
        let (arch, theta, data) = tent_witness();
        let tol = Tolerances::default();
        let v1 = classify_repellence(&arch, &theta, &data, &tol).unwrap();

        let spec = spectrum(&arch, &theta, &data, tol.gamma_threshold_rel).unwrap();
        let rg = reg_gradient(&arch, &theta, &data).unwrap();
        // Re-express the zero-γ basis: reverse order, flip signs, and mix the
        // first two vectors by a rotation.
        let mut basis: Vec<Vec<f64>> =
            spec.zero_gamma.basis().iter().rev().map(|b| b.iter().map(|x| -x).collect()).collect();
        if basis.len() >= 2 {
            let (c, s) = (0.6_f64, 0.8_f64);
            let a = basis[0].clone();
            let b = basis[1].clone();
            for i in 0..a.len() {
                basis[0][i] = c * a[i] + s * b[i];
                basis[1][i] = -s * a[i] + c * b[i];
            }
        }
        let reexpressed = Subspace::from_basis(arch.param_count(), basis).unwrap();
        let v = project(&rg.grad, &reexpressed).unwrap();
        assert!(
            (norm(&v) - v1.projected_grad_norm).abs() <= 1e-10,
            "{} vs {}",
            norm(&v),
            v1.projected_grad_norm
        );
    }
}
