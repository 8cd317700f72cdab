//! Minimal dense symmetric linear algebra.
//!
//! Everything here is sized for desk-scale networks (a few hundred
//! parameters at most): a packed symmetric matrix, a cyclic-Jacobi
//! eigendecomposition, orthogonal projection onto a subspace, and a
//! symmetric Lyapunov solver `S A + A S = C` performed in the eigenbasis
//! of `A`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Parameter and gradient vectors are plain `Vec<f64>`.
pub type Vector = Vec<f64>;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `out += s * v`
pub fn axpy(out: &mut [f64], s: f64, v: &[f64]) {
    debug_assert_eq!(out.len(), v.len());
    for (o, x) in out.iter_mut().zip(v) {
        *o += s * x;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vector {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Dense symmetric matrix in packed lower-triangular storage, so
/// `m[(i,j)] == m[(j,i)]` holds exactly by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        SymMatrix { dim, data: vec![0.0; dim * (dim + 1) / 2] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..=i {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn idx(i: usize, j: usize) -> usize {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        r * (r + 1) / 2 + c
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[Self::idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[Self::idx(i, j)] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[Self::idx(i, j)] += v;
    }

    /// `self += s * v vᵀ`
    pub fn add_scaled_outer(&mut self, s: f64, v: &[f64]) {
        assert_eq!(v.len(), self.dim);
        for i in 0..self.dim {
            for j in 0..=i {
                self.data[i * (i + 1) / 2 + j] += s * v[i] * v[j];
            }
        }
    }

    pub fn matvec(&self, v: &[f64]) -> Vector {
        assert_eq!(v.len(), self.dim);
        let mut out = vec![0.0; self.dim];
        for i in 0..self.dim {
            let mut acc = 0.0;
            for j in 0..self.dim {
                acc += self.get(i, j) * v[j];
            }
            out[i] = acc;
        }
        out
    }

    /// vᵀ M w
    pub fn quad_form(&self, v: &[f64], w: &[f64]) -> f64 {
        dot(&self.matvec(w), v)
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.data)
    }

    pub fn scaled(&self, s: f64) -> SymMatrix {
        SymMatrix { dim: self.dim, data: self.data.iter().map(|x| s * x).collect() }
    }
}

/// Eigenvalues sorted descending and the matching orthonormal eigenvector
/// columns. The sign of each eigenvector is fixed so that its first
/// non-negligible component is positive, making reports reproducible.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    /// `eigenvectors[k]` is the unit eigenvector for `eigenvalues[k]`.
    pub eigenvectors: Vec<Vector>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Max-norm of Q Λ Qᵀ − M, for self-checks.
    pub fn reconstruction_error(&self, m: &SymMatrix) -> f64 {
        let n = self.dim();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..=i {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += self.eigenvalues[k] * self.eigenvectors[k][i] * self.eigenvectors[k][j];
                }
                worst = worst.max((acc - m.get(i, j)).abs());
            }
        }
        worst
    }

    /// Max-norm of QᵀQ − I.
    pub fn orthonormality_error(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0_f64;
        for a in 0..n {
            for b in 0..=a {
                let d = dot(&self.eigenvectors[a], &self.eigenvectors[b]);
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((d - target).abs());
            }
        }
        worst
    }
}

/// An orthonormal (possibly empty) basis of a subspace of R^ambient.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Subspace {
    ambient: usize,
    basis: Vec<Vector>,
}

impl Subspace {
    pub fn empty(ambient: usize) -> Self {
        Subspace { ambient, basis: Vec::new() }
    }

    /// Builds a subspace from basis vectors, checking orthonormality to 1e-10.
    pub fn from_basis(ambient: usize, basis: Vec<Vector>) -> Result<Self> {
        for v in &basis {
            if v.len() != ambient {
                return Err(Error::InvalidInput(format!(
                    "basis vector of length {} in ambient dimension {}",
                    v.len(),
                    ambient
                )));
            }
            if !all_finite(v) {
                return Err(Error::InvalidInput("non-finite basis vector".into()));
            }
        }
        for a in 0..basis.len() {
            for b in 0..=a {
                let d = dot(&basis[a], &basis[b]);
                let target = if a == b { 1.0 } else { 0.0 };
                if (d - target).abs() > 1e-10 {
                    return Err(Error::InvalidInput(format!(
                        "basis not orthonormal: <b{a}, b{b}> = {d:.3e}"
                    )));
                }
            }
        }
        Ok(Subspace { ambient, basis })
    }

    pub fn ambient(&self) -> usize {
        self.ambient
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[Vector] {
        &self.basis
    }
}

const MAX_JACOBI_SWEEPS: usize = 64;

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Accurate and simple for the matrix sizes used here (all models are tiny);
/// eigenvalues come back sorted descending.
pub fn sym_eigendecompose(m: &SymMatrix) -> Result<EigenDecomposition> {
    if !m.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let n = m.dim();
    if n == 0 {
        return Ok(EigenDecomposition { eigenvalues: vec![], eigenvectors: vec![] });
    }

    // Dense working copy and accumulated rotations (columns = eigenvectors).
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = m.get(i, j);
        }
    }
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        q[i * n + i] = 1.0;
    }

    let scale = m.max_abs().max(1.0);
    let stop = 1e-13 * scale;

    for _sweep in 0..MAX_JACOBI_SWEEPS {
        let mut off = 0.0_f64;
        for p in 0..n {
            for r in (p + 1)..n {
                off = off.max(a[p * n + r].abs());
            }
        }
        if off <= stop {
            break;
        }
        for p in 0..(n - 1) {
            for r in (p + 1)..n {
                let apr = a[p * n + r];
                if apr.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[r * n + r] - a[p * n + p]) / (2.0 * apr);
                let t = if theta.abs() > 1e154 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);

                a[p * n + p] -= t * apr;
                a[r * n + r] += t * apr;
                a[p * n + r] = 0.0;
                a[r * n + p] = 0.0;
                for k in 0..n {
                    if k == p || k == r {
                        continue;
                    }
                    let akp = a[k * n + p];
                    let akr = a[k * n + r];
                    let new_kp = akp - s * (akr + tau * akp);
                    let new_kr = akr + s * (akp - tau * akr);
                    a[k * n + p] = new_kp;
                    a[p * n + k] = new_kp;
                    a[k * n + r] = new_kr;
                    a[r * n + k] = new_kr;
                }
                for k in 0..n {
                    let qkp = q[k * n + p];
                    let qkr = q[k * n + r];
                    q[k * n + p] = qkp - s * (qkr + tau * qkp);
                    q[k * n + r] = qkr + s * (qkp - tau * qkr);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].partial_cmp(&a[i * n + i]).unwrap());

    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut eigenvectors = Vec::with_capacity(n);
    for &col in &order {
        let mut v: Vector = (0..n).map(|row| q[row * n + col]).collect();
        let vmax = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12 * vmax.max(1e-300)) {
            if *first < 0.0 {
                for x in v.iter_mut() {
                    *x = -*x;
                }
            }
        }
        eigenvectors.push(v);
    }

    Ok(EigenDecomposition { eigenvalues, eigenvectors })
}

/// Orthogonal projection of `v` onto `s`. An empty subspace maps everything
/// to the zero vector.
pub fn project(v: &[f64], s: &Subspace) -> Result<Vector> {
    if v.len() != s.ambient() {
        return Err(Error::InvalidInput(format!(
            "vector of length {} vs ambient dimension {}",
            v.len(),
            s.ambient()
        )));
    }
    let mut out = vec![0.0; v.len()];
    for b in s.basis() {
        axpy(&mut out, dot(v, b), b);
    }
    Ok(out)
}

/// Relative threshold below which an eigenvalue pair is treated as the
/// null-space case of the Lyapunov solve.
const LYAPUNOV_NULL_REL: f64 = 1e-12;
/// Relative mass of C allowed outside range(A) before the solve is rejected.
const LYAPUNOV_RESID_REL: f64 = 1e-6;

/// Solves `S A + A S = C` for symmetric `S`, with `A` positive semidefinite.
///
/// The solve happens in the eigenbasis of `A`: `S'_{ij} = C'_{ij} / (λ_i+λ_j)`.
/// Pairs with `λ_i + λ_j` below `1e-12 λ_max` are the null-space case: the
/// corresponding component of `S` is set to zero when `C` has no significant
/// mass there, and the solve is rejected as inconsistent otherwise. The
/// equation does not constrain `S` on the null space, so zero is as good a
/// representative as any.
pub fn solve_lyapunov(a: &SymMatrix, c: &SymMatrix) -> Result<SymMatrix> {
    if a.dim() != c.dim() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: A is {}x{0}, C is {1}x{1}",
            a.dim(),
            c.dim()
        )));
    }
    if !a.is_finite() || !c.is_finite() {
        return Err(Error::InvalidInput("non-finite entries".into()));
    }
    let n = a.dim();
    let eig = sym_eigendecompose(a)?;
    let lambda_max = eig.eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let null_cut = LYAPUNOV_NULL_REL * lambda_max.max(f64::MIN_POSITIVE);
    let c_scale = c.max_abs().max(1.0);

    // C in the eigenbasis of A.
    let mut c_prime = vec![0.0; n * n];
    for i in 0..n {
        let cqi = c.matvec(&eig.eigenvectors[i]);
        for j in 0..n {
            c_prime[i * n + j] = dot(&eig.eigenvectors[j], &cqi);
        }
    }

    let mut s_prime = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let li = eig.eigenvalues[i].max(0.0);
            let lj = eig.eigenvalues[j].max(0.0);
            let cij = 0.5 * (c_prime[i * n + j] + c_prime[j * n + i]);
            let v = if li <= null_cut || lj <= null_cut {
                if cij.abs() > LYAPUNOV_RESID_REL * c_scale {
                    return Err(Error::Inconsistent(format!(
                        "C has mass {:.3e} on a null direction of A (pair {i},{j})",
                        cij
                    )));
                }
                0.0
            } else {
                cij / (li + lj)
            };
            s_prime[i * n + j] = v;
            s_prime[j * n + i] = v;
        }
    }

    // Back to the original basis: S = Q S' Qᵀ.
    Ok(SymMatrix::from_fn(n, |i, j| {
        let mut acc = 0.0;
        for k in 0..n {
            for l in 0..n {
                acc += eig.eigenvectors[k][i] * s_prime[k * n + l] * eig.eigenvectors[l][j];
            }
        }
        acc
    }))
}

/// Max-norm of `S A + A S − C`, for closing the loop on a Lyapunov solve.
pub fn lyapunov_residual(s: &SymMatrix, a: &SymMatrix, c: &SymMatrix) -> f64 {
    let n = a.dim();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..=i {
            let mut acc = 0.0;
            for k in 0..n {
                acc += s.get(i, k) * a.get(k, j) + a.get(i, k) * s.get(k, j);
            }
            worst = worst.max((acc - c.get(i, j)).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn eigendecompose_identity() {
        let m = SymMatrix::identity(3);
        let e = sym_eigendecompose(&m).unwrap();
        for v in &e.eigenvalues {
            assert!((v - 1.0).abs() <= 1e-12);
        }
        assert!(e.orthonormality_error() <= 1e-10);
        assert!(e.reconstruction_error(&m) <= 1e-8);
    }

    #[test]
    fn eigendecompose_already_diagonal() {
        let mut m = SymMatrix::zeros(2);
        m.set(0, 0, 2.0);
        let e = sym_eigendecompose(&m).unwrap();
        assert!((e.eigenvalues[0] - 2.0).abs() <= 1e-12);
        assert!(e.eigenvalues[1].abs() <= 1e-12);
        assert!((e.eigenvectors[0][0].abs() - 1.0).abs() <= 1e-12);
        assert!((e.eigenvectors[1][1].abs() - 1.0).abs() <= 1e-12);
    }

    // Hand oracle: det([[2-l,1],[1,2-l]]) = (2-l)^2 - 1 = 0 gives l = 3, 1
    // with eigenvectors (1,1)/sqrt2 and (1,-1)/sqrt2.
    #[test]
    fn eigendecompose_two_by_two_hand_values() {
        let mut m = SymMatrix::zeros(2);
        m.set(0, 0, 2.0);
        m.set(1, 1, 2.0);
        m.set(1, 0, 1.0);
        let e = sym_eigendecompose(&m).unwrap();
        assert!((e.eigenvalues[0] - 3.0).abs() <= 1e-12);
        assert!((e.eigenvalues[1] - 1.0).abs() <= 1e-12);
        let r = 0.5_f64.sqrt();
        assert!((e.eigenvectors[0][0] - r).abs() <= 1e-12);
        assert!((e.eigenvectors[0][1] - r).abs() <= 1e-12);
        assert!((e.eigenvectors[1][0] - r).abs() <= 1e-12);
        assert!((e.eigenvectors[1][1] + r).abs() <= 1e-12);
    }

    #[test]
    fn eigendecompose_rejects_non_finite() {
        let mut m = SymMatrix::zeros(2);
        m.set(0, 1, f64::NAN);
        assert!(matches!(sym_eigendecompose(&m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn project_onto_axis() {
        let s = Subspace::from_basis(2, vec![vec![1.0, 0.0]]).unwrap();
        let p = project(&[1.0, 2.0], &s).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn project_onto_empty_is_zero() {
        let s = Subspace::empty(3);
        let p = project(&[1.0, -2.0, 5.0], &s).unwrap();
        assert_eq!(p, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn project_orthogonal_vector_is_zero() {
        let r = 0.5_f64.sqrt();
        let s = Subspace::from_basis(2, vec![vec![r, -r]]).unwrap();
        let p = project(&[1.0, 1.0], &s).unwrap();
        assert!(norm(&p) <= 1e-12);
    }

    #[test]
    fn project_dimension_mismatch() {
        let s = Subspace::empty(3);
        assert!(matches!(project(&[1.0], &s), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn lyapunov_identity_case() {
        let a = SymMatrix::identity(3);
        let c = SymMatrix::identity(3);
        let s = solve_lyapunov(&a, &c).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 0.5 } else { 0.0 };
                assert!((s.get(i, j) - want).abs() <= 1e-12);
            }
        }
    }

    // Diagonal oracle: 2 λ_j σ_j = c_j, so a=diag(1,2), c=diag(2,4) gives
    // σ = diag(1,1).
    #[test]
    fn lyapunov_diagonal_hand_values() {
        let mut a = SymMatrix::zeros(2);
        a.set(0, 0, 1.0);
        a.set(1, 1, 2.0);
        let mut c = SymMatrix::zeros(2);
        c.set(0, 0, 2.0);
        c.set(1, 1, 4.0);
        let s = solve_lyapunov(&a, &c).unwrap();
        assert!((s.get(0, 0) - 1.0).abs() <= 1e-12);
        assert!((s.get(1, 1) - 1.0).abs() <= 1e-12);
        assert!(s.get(0, 1).abs() <= 1e-12);
    }

    #[test]
    fn lyapunov_null_direction_zeroed() {
        let mut a = SymMatrix::zeros(2);
        a.set(0, 0, 1.0);
        let mut c = SymMatrix::zeros(2);
        c.set(0, 0, 1.0);
        let s = solve_lyapunov(&a, &c).unwrap();
        assert!((s.get(0, 0) - 0.5).abs() <= 1e-12);
        assert!(s.get(1, 1).abs() == 0.0);
        assert!(s.get(0, 1).abs() == 0.0);
    }

    #[test]
    fn lyapunov_rejects_inconsistent_rhs() {
        let mut a = SymMatrix::zeros(2);
        a.set(0, 0, 1.0);
        let c = SymMatrix::identity(2);
        assert!(matches!(solve_lyapunov(&a, &c), Err(Error::Inconsistent(_))));
    }

    fn splitmix(state: &mut u64) -> f64 {
        *state = state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn eigendecomposition_invariants_random(dim in 1usize..=64, seed in any::<u64>()) {
            let mut st = seed;
            let m = SymMatrix::from_fn(dim, |_, _| 4.0 * splitmix(&mut st));
            let e = sym_eigendecompose(&m).unwrap();
            prop_assert!(e.orthonormality_error() <= 1e-10);
            prop_assert!(e.reconstruction_error(&m) <= 1e-8 * m.max_abs().max(1.0));
            for k in 1..dim {
                prop_assert!(e.eigenvalues[k - 1] >= e.eigenvalues[k]);
            }
        }

        #[test]
        fn lyapunov_closes_on_random_psd(dim in 1usize..=12, rank in 0usize..=12, seed in any::<u64>()) {
            let rank = rank.min(dim);
            let mut st = seed;
            // A = sum of rank outer products: PSD, possibly rank-deficient.
            let mut a = SymMatrix::zeros(dim);
            let mut cols: Vec<Vec<f64>> = Vec::new();
            for _ in 0..rank {
                let v: Vec<f64> = (0..dim).map(|_| splitmix(&mut st)).collect();
                a.add_scaled_outer(1.0, &v);
                cols.push(v);
            }
            // C supported on range(A): C = sum over pairs of column outer products.
            let mut c = SymMatrix::zeros(dim);
            for v in &cols {
                c.add_scaled_outer(0.7, v);
            }
            let s = solve_lyapunov(&a, &c).unwrap();
            let resid = lyapunov_residual(&s, &a, &c);
            prop_assert!(resid <= 1e-8 * c.max_abs().max(1.0),
                "residual {resid:.3e} vs scale {:.3e}", c.max_abs());
        }

        #[test]
        fn project_is_idempotent(dim in 1usize..=16, k in 0usize..=5, seed in any::<u64>()) {
            let mut st = seed;
            // Orthonormalize k random vectors by Gram-Schmidt.
            let mut basis: Vec<Vec<f64>> = Vec::new();
            for _ in 0..k.min(dim) {
                let mut v: Vec<f64> = (0..dim).map(|_| splitmix(&mut st)).collect();
                for b in &basis {
                    let d = dot(&v, b);
                    axpy(&mut v, -d, b);
                }
                let n = norm(&v);
                if n > 1e-6 {
                    for x in v.iter_mut() { *x /= n; }
                    basis.push(v);
                }
            }
            let s = Subspace::from_basis(dim, basis).unwrap();
            let v: Vec<f64> = (0..dim).map(|_| splitmix(&mut st)).collect();
            let p1 = project(&v, &s).unwrap();
            let p2 = project(&p1, &s).unwrap();
            for i in 0..dim {
                prop_assert!((p1[i] - p2[i]).abs() <= 1e-12);
            }
            // v − p ⟂ subspace
            let r = sub(&v, &p1);
            for b in s.basis() {
                prop_assert!(dot(&r, b).abs() <= 1e-10);
            }
        }
    }
}
