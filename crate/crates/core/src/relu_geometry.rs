//! Geometry of 1-d two-layer ReLU networks: kinks, convexity certificates,
//! curve length, and the value-preserving perturbations that strictly
//! decrease the squared-gradient regularizer whenever a concave/convex kink
//! pair brackets at most one datapoint.
//!
//! The perturbation constructor realizes the four sign cases of
//! `(a₁, a₂)` for a concave unit (c₁ < 0) left of a convex unit (c₂ > 0);
//! the mirrored arrangement is handled by reflecting the input axis,
//! applying the same cases, and reflecting back.

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::model::{Activation, Architecture, Dataset, Model};
use crate::regularizer::reg;
use crate::trainer::max_residual;
use serde::{Deserialize, Serialize};

fn require_relu_1d(arch: &Architecture) -> Result<()> {
    if arch.activation != Activation::Relu || arch.input_dim != 1 {
        return Err(Error::InvalidInput(
            "operation requires the 1-d relu architecture".into(),
        ));
    }
    Ok(())
}

/// One ReLU unit's kink: the input location where it switches on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kink {
    pub unit: usize,
    pub location: f64,
    /// Slope jump when crossing left to right is `c·|a|`, so the kink is
    /// convex exactly when `c > 0`.
    pub convex: bool,
    /// Magnitude of the slope jump, `|c·a|`.
    pub jump: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KinkList {
    /// Sorted by location; only units with `a ≠ 0` and `c ≠ 0` appear.
    pub kinks: Vec<Kink>,
}

pub fn extract_kinks(arch: &Architecture, theta: &[f64]) -> Result<KinkList> {
    require_relu_1d(arch)?;
    if theta.len() != arch.param_count() {
        return Err(Error::InvalidInput("theta length mismatch".into()));
    }
    let mut kinks = Vec::new();
    for i in 0..arch.hidden_width {
        let a = theta[arch.w_index(i, 0)];
        let c = theta[arch.c_index(i)];
        if a != 0.0 && c != 0.0 {
            kinks.push(Kink {
                unit: i,
                location: -theta[arch.b_index(i)] / a,
                convex: c > 0.0,
                jump: (c * a).abs(),
            });
        }
    }
    kinks.sort_by(|p, q| p.location.partial_cmp(&q.location).unwrap());
    Ok(KinkList { kinks })
}

/// Arc length of `x ↦ f(x; θ)` over `[x_lo, x_hi]`.
///
/// Chord sums over a uniform grid, refined with the kink locations for ReLU
/// models and doubled until two consecutive grids agree to 1e-4 relative.
pub fn curve_length(
    arch: &Architecture,
    theta: &[f64],
    x_lo: f64,
    x_hi: f64,
    samples: usize,
) -> Result<f64> {
    if !(x_lo < x_hi) {
        return Err(Error::InvalidInput("x_lo must be below x_hi".into()));
    }
    if samples < 2 {
        return Err(Error::InvalidInput("need at least 2 samples".into()));
    }
    let kink_xs: Vec<f64> = if arch.activation == Activation::Relu {
        extract_kinks(arch, theta)?
            .kinks
            .iter()
            .map(|k| k.location)
            .filter(|&x| x > x_lo && x < x_hi)
            .collect()
    } else {
        Vec::new()
    };

    let length_on = |n: usize| -> Result<f64> {
        let mut xs: Vec<f64> = (0..n)
            .map(|i| x_lo + (x_hi - x_lo) * i as f64 / (n - 1) as f64)
            .chain(kink_xs.iter().copied())
            .collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut len = 0.0;
        let mut prev: Option<(f64, f64)> = None;
        for &x in &xs {
            let f = arch.forward(theta, &[x])?;
            if let Some((px, pf)) = prev {
                len += ((x - px).powi(2) + (f - pf).powi(2)).sqrt();
            }
            prev = Some((x, f));
        }
        Ok(len)
    };

    let mut n = samples;
    let mut len = length_on(n)?;
    for _ in 0..24 {
        n = n * 2 - 1;
        let next = length_on(n)?;
        let done = (next - len).abs() <= 1e-4 * next.abs().max(1e-300);
        len = next;
        if done {
            break;
        }
    }
    Ok(len)
}

/// Σ √(Δx² + Δy²) over consecutive data points: the length of the piecewise
/// linear interpolation, the floor any zero-error model's curve length
/// converges to.
pub fn chord_sum(data: &Dataset) -> Result<f64> {
    if !data.x_strictly_increasing() {
        return Err(Error::InvalidInput("need 1-d data sorted strictly increasing".into()));
    }
    let mut total = 0.0;
    for w in data.points().windows(2) {
        let (x0, y0) = (w[0].0[0], w[0].1);
        let (x1, y1) = (w[1].0[0], w[1].1);
        total += ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertTolerances {
    /// Max residual for the zero-error precondition.
    pub zero_error_tol: f64,
    /// Relative tolerance deciding that a data triple is collinear.
    pub collinear_rel: f64,
    /// Allowed max |f − line| over a collinear triple's interval.
    pub line_tol: f64,
    /// Slope jumps at or below this are treated as no kink.
    pub jump_tol: f64,
}

impl Default for CertTolerances {
    fn default() -> Self {
        CertTolerances {
            zero_error_tol: 1e-6,
            collinear_rel: 1e-9,
            line_tol: 1e-6,
            jump_tol: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripleShape {
    Convex,
    Concave,
    Collinear,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TripleReport {
    /// Index of the triple's left data point.
    pub start: usize,
    pub shape: TripleShape,
    /// Units whose kink inside the open interval has the forbidden convexity.
    pub offending_units: Vec<usize>,
    /// For collinear triples, max |f − line| over the closed interval.
    pub line_deviation: Option<f64>,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvexityCertificate {
    pub triples: Vec<TripleReport>,
    pub all_pass: bool,
}

/// Checks, triple by consecutive triple, that the model's convexity between
/// the outer points matches the piecewise-linear interpolation of the data,
/// and that the model is actually linear across collinear triples.
///
/// Model convexity on an interval is read off the signed kink jumps inside
/// it — exact for piecewise-linear functions, with jumps below `jump_tol`
/// ignored as numerical dust.
pub fn convexity_certificate(
    arch: &Architecture,
    theta: &[f64],
    data: &Dataset,
    tol: &CertTolerances,
) -> Result<ConvexityCertificate> {
    require_relu_1d(arch)?;
    if !data.x_strictly_increasing() {
        return Err(Error::InvalidInput("need 1-d data sorted strictly increasing".into()));
    }
    let worst = max_residual(arch, theta, data)?;
    if worst > tol.zero_error_tol {
        return Err(Error::NotZeroError { max_residual: worst, tol: tol.zero_error_tol });
    }
    let kinks = extract_kinks(arch, theta)?;
    let pts = data.points();
    let mut triples = Vec::new();

    for s in 0..pts.len().saturating_sub(2) {
        let (x0, y0) = (pts[s].0[0], pts[s].1);
        let (x1, y1) = (pts[s + 1].0[0], pts[s + 1].1);
        let (x2, y2) = (pts[s + 2].0[0], pts[s + 2].1);
        let p1 = (x1 - x0) * (y2 - y1);
        let p2 = (x2 - x1) * (y1 - y0);
        let cross = p1 - p2;
        let scale = p1.abs().max(p2.abs());
        let shape = if cross.abs() <= tol.collinear_rel * scale + 1e-300 {
            TripleShape::Collinear
        } else if cross > 0.0 {
            TripleShape::Convex
        } else {
            TripleShape::Concave
        };

        let inside: Vec<&Kink> = kinks
            .kinks
            .iter()
            .filter(|k| k.location > x0 && k.location < x2 && k.jump > tol.jump_tol)
            .collect();
        let offending: Vec<usize> = inside
            .iter()
            .filter(|k| match shape {
                TripleShape::Convex => !k.convex,
                TripleShape::Concave => k.convex,
                TripleShape::Collinear => true,
            })
            .map(|k| k.unit)
            .collect();

        let mut pass = offending.is_empty();
        let line_deviation = if shape == TripleShape::Collinear {
            // Max over the closed interval of the gap to the chord through
            // the outer points; piecewise-linear, so checking endpoints and
            // every kink inside is exact.
            let slope = (y2 - y0) / (x2 - x0);
            let line = |x: f64| y0 + slope * (x - x0);
            let mut dev = 0.0_f64;
            for x in [x0, x1, x2]
                .into_iter()
                .chain(kinks.kinks.iter().map(|k| k.location))
            {
                if (x0..=x2).contains(&x) {
                    dev = dev.max((arch.forward(theta, &[x])? - line(x)).abs());
                }
            }
            if dev > tol.line_tol {
                pass = false;
            }
            Some(dev)
        } else {
            None
        };

        triples.push(TripleReport { start: s, shape, offending_units: offending, line_deviation, pass });
    }

    let all_pass = triples.iter().all(|t| t.pass);
    Ok(ConvexityCertificate { triples, all_pass })
}

/// A value-preserving, regularizer-decreasing perturbation of one
/// concave/convex unit pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerturbationPlan {
    /// Sign case of `(a₁, a₂)` in the canonical frame (concave kink left of
    /// convex kink): 1 = (+,+), 2 = (+,−), 3 = (−,+), 4 = (−,−).
    pub case_id: u8,
    /// True when the plan was built in the reflected frame `x ↦ −x`.
    pub mirrored: bool,
    pub concave_unit: usize,
    pub convex_unit: usize,
    pub x0: f64,
    pub epsilon: f64,
    /// New `(a, b)` of the concave unit (original frame).
    pub new_a1: f64,
    pub new_b1: f64,
    /// New `(a, b)` of the convex unit (original frame).
    pub new_a2: f64,
    pub new_b2: f64,
    /// Increment to the skip unit's `(a, b)`, used by cases 2 and 3.
    pub skip_delta: Option<(f64, f64)>,
}

struct CanonicalUnits {
    a1: f64,
    b1: f64,
    c1: f64,
    a2: f64,
    b2: f64,
    c2: f64,
}

/// Case formulas in the canonical frame. Returns the new unit parameters
/// and the skip increment.
fn canonical_formulas(
    u: &CanonicalUnits,
    case_id: u8,
    x0: f64,
    eps: f64,
) -> (f64, f64, f64, f64, Option<(f64, f64)>) {
    match case_id {
        1 => {
            let na1 = u.a1 * (1.0 - eps);
            let nb1 = u.b1 + x0 * u.a1 * eps;
            let na2 = u.a2 - (u.c1 / u.c2) * (na1 - u.a1);
            let nb2 = u.b2 - (u.c1 / u.c2) * (nb1 - u.b1);
            (na1, nb1, na2, nb2, None)
        }
        2 | 3 => {
            let na1 = u.a1 * (1.0 - eps);
            let nb1 = u.b1 + x0 * u.a1 * eps;
            let na2 = u.a2 + (u.c1 / u.c2) * (na1 - u.a1);
            let nb2 = u.b2 + (u.c1 / u.c2) * (nb1 - u.b1);
            // The skip unit absorbs the leftover linear part; these are
            // increments to the existing skip parameters.
            let da = -u.c1 * (na1 - u.a1);
            let db = -u.c1 * (nb1 - u.b1);
            (na1, nb1, na2, nb2, Some((da, db)))
        }
        4 => {
            let na2 = u.a2 * (1.0 - eps);
            let nb2 = u.b2 + x0 * u.a2 * eps;
            let na1 = u.a1 - (u.c2 / u.c1) * (na2 - u.a2);
            let nb1 = u.b1 - (u.c2 / u.c1) * (nb2 - u.b2);
            (na1, nb1, na2, nb2, None)
        }
        _ => unreachable!(),
    }
}

const EPS_SHRINK_LIMIT: u32 = 40;

/// Builds the Case 1–4 perturbation for the concave unit `unit1` (c < 0)
/// and convex unit `unit2` (c > 0), with the kink pair bracketing at most
/// the single datapoint `x0`. `epsilon` is halved (at most 40 times) until
/// no other datapoint crosses the moved kinks.
pub fn build_perturbation(
    arch: &Architecture,
    theta: &[f64],
    data: &Dataset,
    unit1: usize,
    unit2: usize,
    x0: f64,
    epsilon: f64,
) -> Result<PerturbationPlan> {
    require_relu_1d(arch)?;
    if theta.len() != arch.param_count() {
        return Err(Error::InvalidInput("theta length mismatch".into()));
    }
    if unit1 >= arch.hidden_width || unit2 >= arch.hidden_width || unit1 == unit2 {
        return Err(Error::InvalidInput("bad unit indices".into()));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidInput("epsilon must be >= 0".into()));
    }
    let c1 = theta[arch.c_index(unit1)];
    let c2 = theta[arch.c_index(unit2)];
    if !(c1 < 0.0 && c2 > 0.0) {
        return Err(Error::NotApplicable(format!(
            "need c1 < 0 < c2, got c1 = {c1}, c2 = {c2}"
        )));
    }
    let a1 = theta[arch.w_index(unit1, 0)];
    let a2 = theta[arch.w_index(unit2, 0)];
    if a1 == 0.0 || a2 == 0.0 {
        return Err(Error::NotApplicable("a unit with a = 0 has no kink".into()));
    }
    let b1 = theta[arch.b_index(unit1)];
    let b2 = theta[arch.b_index(unit2)];
    let k1 = -b1 / a1;
    let k2 = -b2 / a2;
    if k1 == k2 {
        return Err(Error::NotApplicable("the two kinks coincide".into()));
    }

    // Reflect so the concave kink sits left of the convex one.
    let mirrored = k1 > k2;
    let refl = if mirrored { -1.0 } else { 1.0 };
    let u = CanonicalUnits {
        a1: refl * a1,
        b1,
        c1,
        a2: refl * a2,
        b2,
        c2,
    };
    let cx0 = refl * x0;
    let (ck1, ck2) = if mirrored { (-k1, -k2) } else { (k1, k2) };
    debug_assert!(ck1 < ck2);
    if !(cx0 > ck1 && cx0 < ck2) {
        return Err(Error::NotApplicable(format!(
            "x0 = {x0} is not strictly between the kinks ({k1}, {k2})"
        )));
    }

    let case_id = match (u.a1 > 0.0, u.a2 > 0.0) {
        (true, true) => 1,
        (true, false) => 2,
        (false, true) => 3,
        (false, false) => 4,
    };
    if matches!(case_id, 2 | 3) && !arch.skip_linear_and_bias {
        return Err(Error::NotApplicable(
            "cases 2 and 3 adjust the skip unit, which this architecture lacks".into(),
        ));
    }

    // Other datapoints must start strictly outside the closed kink interval.
    let others: Vec<f64> = data
        .iter()
        .map(|(x, _)| refl * x[0])
        .filter(|&x| x != cx0)
        .collect();
    if others.iter().any(|&x| x >= ck1 && x <= ck2) {
        return Err(Error::NotApplicable(
            "another datapoint lies between the kinks".into(),
        ));
    }

    if epsilon == 0.0 {
        // Identity plan.
        return Ok(PerturbationPlan {
            case_id,
            mirrored,
            concave_unit: unit1,
            convex_unit: unit2,
            x0,
            epsilon: 0.0,
            new_a1: a1,
            new_b1: b1,
            new_a2: a2,
            new_b2: b2,
            skip_delta: if matches!(case_id, 2 | 3) { Some((0.0, 0.0)) } else { None },
        });
    }

    let mut eps = epsilon;
    for _ in 0..=EPS_SHRINK_LIMIT {
        let (na1, nb1, na2, nb2, skip) = canonical_formulas(&u, case_id, cx0, eps);
        let signs_ok = na1.signum() == u.a1.signum() && na2.signum() == u.a2.signum();
        if signs_ok {
            let nk1 = -nb1 / na1;
            let nk2 = -nb2 / na2;
            let clear = nk1 < nk2
                && cx0 > nk1
                && cx0 < nk2
                && others.iter().all(|&x| x < nk1 || x > nk2);
            if clear {
                return Ok(PerturbationPlan {
                    case_id,
                    mirrored,
                    concave_unit: unit1,
                    convex_unit: unit2,
                    x0,
                    epsilon: eps,
                    new_a1: refl * na1,
                    new_b1: nb1,
                    new_a2: refl * na2,
                    new_b2: nb2,
                    skip_delta: skip.map(|(da, db)| (refl * da, db)),
                });
            }
        }
        eps *= 0.5;
    }
    Err(Error::NotApplicable(format!(
        "no epsilon below {epsilon} keeps all other datapoints clear of the moved kinks"
    )))
}

/// The plan with the same units and x0 recomputed at a different epsilon
/// (no shrinking); used for the first-order rate check.
fn plan_at_epsilon(
    arch: &Architecture,
    theta: &[f64],
    plan: &PerturbationPlan,
    eps: f64,
) -> PerturbationPlan {
    let refl = if plan.mirrored { -1.0 } else { 1.0 };
    let u = CanonicalUnits {
        a1: refl * theta[arch.w_index(plan.concave_unit, 0)],
        b1: theta[arch.b_index(plan.concave_unit)],
        c1: theta[arch.c_index(plan.concave_unit)],
        a2: refl * theta[arch.w_index(plan.convex_unit, 0)],
        b2: theta[arch.b_index(plan.convex_unit)],
        c2: theta[arch.c_index(plan.convex_unit)],
    };
    let (na1, nb1, na2, nb2, skip) = canonical_formulas(&u, plan.case_id, refl * plan.x0, eps);
    PerturbationPlan {
        epsilon: eps,
        new_a1: refl * na1,
        new_b1: nb1,
        new_a2: refl * na2,
        new_b2: nb2,
        skip_delta: skip.map(|(da, db)| (refl * da, db)),
        ..plan.clone()
    }
}

/// Applies a plan to a parameter vector.
pub fn apply_plan(arch: &Architecture, theta: &[f64], plan: &PerturbationPlan) -> Vector {
    let mut out = theta.to_vec();
    out[arch.w_index(plan.concave_unit, 0)] = plan.new_a1;
    out[arch.b_index(plan.concave_unit)] = plan.new_b1;
    out[arch.w_index(plan.convex_unit, 0)] = plan.new_a2;
    out[arch.b_index(plan.convex_unit)] = plan.new_b2;
    if let Some((da, db)) = plan.skip_delta {
        out[arch.skip_a_index(0)] += da;
        out[arch.skip_b_index()] += db;
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerturbationReport {
    /// Max over datapoints of |f̃(x_j) − f(x_j)| / (1 + |f(x_j)|).
    pub max_value_drift: f64,
    pub values_preserved: bool,
    pub reg_before: f64,
    pub reg_after: f64,
    pub reg_decreased: bool,
    /// (R(θ) − R(θ̃_ε)) / ε at the plan's ε and at ε/2.
    pub rate_full: f64,
    pub rate_half: f64,
    pub first_order: bool,
    pub pass: bool,
    /// Datapoint index of the worst value drift, when any datapoint moved.
    pub worst_point: Option<usize>,
}

/// Checks a plan: function values at every datapoint are preserved, r_sum
/// strictly decreases, and the decrease is first order in ε (rates at ε and
/// ε/2 agree within 10%).
pub fn verify_perturbation(
    arch: &Architecture,
    theta: &[f64],
    plan: &PerturbationPlan,
    data: &Dataset,
) -> Result<PerturbationReport> {
    require_relu_1d(arch)?;
    let perturbed = apply_plan(arch, theta, plan);
    let mut max_drift = 0.0_f64;
    let mut worst_point = None;
    for (i, (x, _)) in data.iter().enumerate() {
        let f0 = arch.forward(theta, x)?;
        let f1 = arch.forward(&perturbed, x)?;
        let drift = (f1 - f0).abs() / (1.0 + f0.abs());
        if drift > max_drift {
            max_drift = drift;
            worst_point = Some(i);
        }
    }
    let values_preserved = max_drift <= 1e-9;

    let r0 = reg(arch, theta, data)?.r_sum;
    let r1 = reg(arch, &perturbed, data)?.r_sum;

    if plan.epsilon == 0.0 {
        return Ok(PerturbationReport {
            max_value_drift: max_drift,
            values_preserved,
            reg_before: r0,
            reg_after: r1,
            reg_decreased: true,
            rate_full: 0.0,
            rate_half: 0.0,
            first_order: true,
            pass: values_preserved && r1 == r0,
            worst_point,
        });
    }

    let reg_decreased = r1 < r0;
    let half = plan_at_epsilon(arch, theta, plan, plan.epsilon / 2.0);
    let r_half = reg(arch, &apply_plan(arch, theta, &half), data)?.r_sum;
    let rate_full = (r0 - r1) / plan.epsilon;
    let rate_half = (r0 - r_half) / (plan.epsilon / 2.0);
    let first_order = rate_full > 0.0
        && rate_half > 0.0
        && (rate_full - rate_half).abs() <= 0.1 * rate_full.abs().max(rate_half.abs());

    Ok(PerturbationReport {
        max_value_drift: max_drift,
        values_preserved,
        reg_before: r0,
        reg_after: r1,
        reg_decreased,
        rate_full,
        rate_half,
        first_order,
        pass: values_preserved && reg_decreased && first_order,
        worst_point,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exact piecewise-linear interpolant of sorted 1-d data as a ReLU net
    /// with skip unit: skip carries the leftmost segment, one unit per
    /// interior point carries each slope change.
    pub fn interpolant_net(data: &Dataset) -> (Architecture, Vec<f64>) {
        let pts = data.points();
        let n = pts.len();
        let width = (n - 2).max(1);
        let arch = Architecture::new(1, width, Activation::Relu, true).unwrap();
        let mut theta = vec![0.0; arch.param_count()];
        let slope = |i: usize| (pts[i + 1].1 - pts[i].1) / (pts[i + 1].0[0] - pts[i].0[0]);
        theta[arch.skip_a_index(0)] = slope(0);
        theta[arch.skip_b_index()] = pts[0].1 - slope(0) * pts[0].0[0];
        for i in 0..n - 2 {
            theta[arch.w_index(i, 0)] = 1.0;
            theta[arch.b_index(i)] = -pts[i + 1].0[0];
            theta[arch.c_index(i)] = slope(i + 1) - slope(i);
        }
        (arch, theta)
    }

    #[test]
    fn extract_kinks_basics() {
        let arch = Architecture::new(1, 3, Activation::Relu, false).unwrap();
        // units: (1, -0.5, 1) kink at 0.5 convex; (2, 1, -1) kink at -0.5
        // concave; (1, 0, 0) dropped because c = 0.
        let theta = vec![1.0, 2.0, 1.0, -0.5, 1.0, 0.0, 1.0, -1.0, 0.0];
        let kinks = extract_kinks(&arch, &theta).unwrap().kinks;
        assert_eq!(kinks.len(), 2);
        assert_eq!(kinks[0].unit, 1);
        assert!((kinks[0].location + 0.5).abs() <= 1e-15);
        assert!(!kinks[0].convex);
        assert_eq!(kinks[1].unit, 0);
        assert!((kinks[1].location - 0.5).abs() <= 1e-15);
        assert!(kinks[1].convex);
    }

    #[test]
    fn extract_kinks_matches_bisection_roots() {
        let arch = Architecture::new(1, 5, Activation::Relu, false).unwrap();
        let mut st = 314_u64;
        let theta: Vec<f64> = (0..arch.param_count())
            .map(|_| crate::model::testutil::splitmix(&mut st) * 2.0)
            .collect();
        let kinks = extract_kinks(&arch, &theta).unwrap().kinks;
        for k in &kinks {
            // Bisect the unit's argument for a sign change around the kink.
            let unit_arg = |x: f64| theta[arch.w_index(k.unit, 0)] * x + theta[arch.b_index(k.unit)];
            let (mut lo, mut hi) = (k.location - 1.0, k.location + 1.0);
            assert!(unit_arg(lo) * unit_arg(hi) < 0.0);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if unit_arg(lo) * unit_arg(mid) <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            assert!((0.5 * (lo + hi) - k.location).abs() <= 1e-9);
        }
    }

    #[test]
    fn extract_kinks_wrong_arch() {
        let arch = Architecture::new(1, 2, Activation::Tanh, false).unwrap();
        let theta = vec![0.0; arch.param_count()];
        assert!(matches!(extract_kinks(&arch, &theta), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn curve_length_of_lines() {
        let arch = Architecture::new(1, 1, Activation::Relu, true).unwrap();
        // flat zero function
        let theta = vec![1.0, -10.0, 0.0, 0.0, 0.0];
        let l = curve_length(&arch, &theta, 0.0, 1.0, 16).unwrap();
        assert!((l - 1.0).abs() <= 1e-12);
        // slope 1 via the skip unit
        let theta = vec![1.0, -10.0, 0.0, 1.0, 0.0];
        let l = curve_length(&arch, &theta, 0.0, 1.0, 16).unwrap();
        assert!((l - 2.0_f64.sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn curve_length_of_interpolant_matches_chord_sum() {
        let data = Dataset::from_xy(
            &[-2.0, -1.0, 0.0, 0.7, 1.5, 2.4],
            &[0.3, -0.2, 0.4, 0.4, -1.0, 0.1],
        )
        .unwrap();
        let (arch, theta) = interpolant_net(&data);
        for (x, y) in data.iter() {
            assert!((arch.forward(&theta, x).unwrap() - y).abs() <= 1e-12);
        }
        let l = curve_length(&arch, &theta, -2.0, 2.4, 32).unwrap();
        let chords = chord_sum(&data).unwrap();
        assert!(
            (l - chords).abs() <= 1e-6 * chords,
            "curve {l} vs chords {chords}"
        );
    }

    #[test]
    fn curve_length_converges_for_smooth_models() {
        let arch = Architecture::new(1, 3, Activation::Tanh, false).unwrap();
        let theta = vec![1.2, -0.8, 0.5, 0.1, -0.3, 0.2, 0.7, -0.4, 0.9];
        let l = curve_length(&arch, &theta, -2.0, 2.0, 8).unwrap();
        let l2 = curve_length(&arch, &theta, -2.0, 2.0, 4096).unwrap();
        assert!((l - l2).abs() <= 2e-4 * l2);
    }

    fn collinear_data() -> Dataset {
        Dataset::from_xy(&[-1.0, 0.0, 1.0, 2.0], &[-0.4, 0.1, 0.6, 1.1]).unwrap()
    }

    #[test]
    fn certificate_passes_exact_interpolant() {
        let data = Dataset::from_xy(&[-1.0, 0.0, 1.0, 2.0], &[1.0, 0.0, 1.0, 0.5]).unwrap();
        let (arch, theta) = interpolant_net(&data);
        let cert = convexity_certificate(&arch, &theta, &data, &CertTolerances::default()).unwrap();
        assert!(cert.all_pass);
        assert_eq!(cert.triples.len(), 2);
        assert_eq!(cert.triples[0].shape, TripleShape::Convex);
        assert_eq!(cert.triples[1].shape, TripleShape::Concave);
    }

    /// The tent adds an up-down-up kink triple between collinear points;
    /// the middle triple must fail.
    fn tent_on_line() -> (Architecture, Vec<f64>) {
        let arch = Architecture::new(1, 3, Activation::Relu, true).unwrap();
        let s = 0.8;
        let theta = vec![
            1.0, 1.0, 1.0,
            -0.3, -0.5, -0.7,
            s, -2.0 * s, s,
            0.5, 0.1,
        ];
        (arch, theta)
    }

    #[test]
    fn certificate_fails_on_added_kink_pair() {
        let (arch, theta) = tent_on_line();
        let data = collinear_data();
        assert!(max_residual(&arch, &theta, &data).unwrap() <= 1e-12);
        let cert = convexity_certificate(&arch, &theta, &data, &CertTolerances::default()).unwrap();
        assert!(!cert.all_pass);
        let middle = &cert.triples[1]; // points 0, 1, 2 at x = 0, 1 bracket the tent
        assert_eq!(middle.shape, TripleShape::Collinear);
        assert!(!middle.pass);
        assert!(middle.line_deviation.unwrap() > 0.05);
    }

    #[test]
    fn certificate_requires_zero_error() {
        let data = collinear_data();
        let (arch, mut theta) = interpolant_net(&data);
        theta[arch.skip_b_index()] += 0.5;
        assert!(matches!(
            convexity_certificate(&arch, &theta, &data, &CertTolerances::default()),
            Err(Error::NotZeroError { .. })
        ));
    }

    // Spec-level hand values for Case 1: a1=1, b1=-0.5, c1=-1, a2=1,
    // b2=-1.5, c2=1, x0=1, eps=0.01 gives (0.99, -0.49, 0.99, -1.49).
    #[test]
    fn case1_hand_values() {
        let arch = Architecture::new(1, 2, Activation::Relu, true).unwrap();
        let mut theta = vec![0.0; arch.param_count()];
        theta[arch.w_index(0, 0)] = 1.0;
        theta[arch.b_index(0)] = -0.5;
        theta[arch.c_index(0)] = -1.0;
        theta[arch.w_index(1, 0)] = 1.0;
        theta[arch.b_index(1)] = -1.5;
        theta[arch.c_index(1)] = 1.0;
        // consistent labels: y = f(x)
        let xs = [0.0, 1.0, 2.5];
        let ys: Vec<f64> = xs.iter().map(|&x| arch.forward(&theta, &[x]).unwrap()).collect();
        let data = Dataset::from_xy(&xs, &ys).unwrap();

        let plan = build_perturbation(&arch, &theta, &data, 0, 1, 1.0, 0.01).unwrap();
        assert_eq!(plan.case_id, 1);
        assert!(!plan.mirrored);
        assert!((plan.new_a1 - 0.99).abs() <= 1e-15);
        assert!((plan.new_b1 + 0.49).abs() <= 1e-15);
        assert!((plan.new_a2 - 0.99).abs() <= 1e-15);
        assert!((plan.new_b2 + 1.49).abs() <= 1e-15);
        assert!(plan.skip_delta.is_none());

        let report = verify_perturbation(&arch, &theta, &plan, &data).unwrap();
        assert!(report.pass, "{report:?}");
        assert!(report.max_value_drift <= 1e-12);
        assert!(report.reg_after < report.reg_before);
    }

    #[test]
    fn zero_epsilon_is_identity_plan() {
        let arch = Architecture::new(1, 2, Activation::Relu, true).unwrap();
        let mut theta = vec![0.0; arch.param_count()];
        theta[arch.w_index(0, 0)] = 1.0;
        theta[arch.b_index(0)] = -0.5;
        theta[arch.c_index(0)] = -1.0;
        theta[arch.w_index(1, 0)] = 1.0;
        theta[arch.b_index(1)] = -1.5;
        theta[arch.c_index(1)] = 1.0;
        let data = Dataset::from_xy(&[0.0, 2.5], &[0.0, 0.0]).unwrap();
        let plan = build_perturbation(&arch, &theta, &data, 0, 1, 1.0, 0.0).unwrap();
        assert_eq!(plan.epsilon, 0.0);
        assert_eq!(apply_plan(&arch, &theta, &plan), theta);
        let report = verify_perturbation(&arch, &theta, &plan, &data).unwrap();
        assert!(report.pass);
    }

    #[test]
    fn case4_uses_mirrored_roles() {
        // a1 < 0, a2 < 0 with concave kink left of convex kink.
        let arch = Architecture::new(1, 2, Activation::Relu, true).unwrap();
        let mut theta = vec![0.0; arch.param_count()];
        theta[arch.w_index(0, 0)] = -1.0; // concave unit: kink at -b/a
        theta[arch.b_index(0)] = 0.4; // kink at 0.4
        theta[arch.c_index(0)] = -1.0;
        theta[arch.w_index(1, 0)] = -1.0;
        theta[arch.b_index(1)] = 1.6; // kink at 1.6
        theta[arch.c_index(1)] = 1.0;
        let xs = [-1.0, 1.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|&x| arch.forward(&theta, &[x]).unwrap()).collect();
        let data = Dataset::from_xy(&xs, &ys).unwrap();

        let plan = build_perturbation(&arch, &theta, &data, 0, 1, 1.0, 0.02).unwrap();
        assert_eq!(plan.case_id, 4);
        // Case 4 perturbs the convex unit directly: a2(1 - eps).
        assert!((plan.new_a2 - (-1.0) * (1.0 - plan.epsilon)).abs() <= 1e-15);
        let report = verify_perturbation(&arch, &theta, &plan, &data).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn mirrored_arrangement_reflects_and_passes() {
        // Convex kink LEFT of concave kink: handled through x -> -x.
        let arch = Architecture::new(1, 2, Activation::Relu, true).unwrap();
        let mut theta = vec![0.0; arch.param_count()];
        theta[arch.w_index(0, 0)] = -1.0; // concave unit, kink at 1.5
        theta[arch.b_index(0)] = 1.5;
        theta[arch.c_index(0)] = -0.7;
        theta[arch.w_index(1, 0)] = -1.0; // convex unit, kink at 0.5
        theta[arch.b_index(1)] = 0.5;
        theta[arch.c_index(1)] = 1.3;
        let xs = [-1.0, 1.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|&x| arch.forward(&theta, &[x]).unwrap()).collect();
        let data = Dataset::from_xy(&xs, &ys).unwrap();

        let plan = build_perturbation(&arch, &theta, &data, 0, 1, 1.0, 0.02).unwrap();
        assert!(plan.mirrored);
        let report = verify_perturbation(&arch, &theta, &plan, &data).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn epsilon_autoshrinks_to_keep_points_clear() {
        let arch = Architecture::new(1, 2, Activation::Relu, true).unwrap();
        let mut theta = vec![0.0; arch.param_count()];
        theta[arch.w_index(0, 0)] = 1.0;
        theta[arch.b_index(0)] = -0.5;
        theta[arch.c_index(0)] = -1.0;
        theta[arch.w_index(1, 0)] = 1.0;
        theta[arch.b_index(1)] = -1.5;
        theta[arch.c_index(1)] = 1.0;
        // A datapoint hugs the convex kink from the right at 1.5001.
        let xs = [0.0, 1.0, 1.5001, 3.0];
        let ys: Vec<f64> = xs.iter().map(|&x| arch.forward(&theta, &[x]).unwrap()).collect();
        let data = Dataset::from_xy(&xs, &ys).unwrap();
        let plan = build_perturbation(&arch, &theta, &data, 0, 1, 1.0, 0.3).unwrap();
        assert!(plan.epsilon < 0.3);
        let report = verify_perturbation(&arch, &theta, &plan, &data).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn build_rejects_bad_sign_pattern() {
        let arch = Architecture::new(1, 2, Activation::Relu, true).unwrap();
        let mut theta = vec![0.0; arch.param_count()];
        theta[arch.w_index(0, 0)] = 1.0;
        theta[arch.b_index(0)] = -0.5;
        theta[arch.c_index(0)] = 1.0; // both convex: not applicable
        theta[arch.w_index(1, 0)] = 1.0;
        theta[arch.b_index(1)] = -1.5;
        theta[arch.c_index(1)] = 1.0;
        let data = Dataset::from_xy(&[0.0], &[0.0]).unwrap();
        assert!(matches!(
            build_perturbation(&arch, &theta, &data, 0, 1, 1.0, 0.01),
            Err(Error::NotApplicable(_))
        ));
    }

    #[test]
    fn build_rejects_datapoint_between_kinks() {
        let arch = Architecture::new(1, 2, Activation::Relu, true).unwrap();
        let mut theta = vec![0.0; arch.param_count()];
        theta[arch.w_index(0, 0)] = 1.0;
        theta[arch.b_index(0)] = -0.5;
        theta[arch.c_index(0)] = -1.0;
        theta[arch.w_index(1, 0)] = 1.0;
        theta[arch.b_index(1)] = -1.5;
        theta[arch.c_index(1)] = 1.0;
        let data = Dataset::from_xy(&[0.7, 1.2], &[0.0, 0.0]).unwrap();
        assert!(matches!(
            build_perturbation(&arch, &theta, &data, 0, 1, 0.7, 0.01),
            Err(Error::NotApplicable(_))
        ));
    }

    /// A certificate pass on a collinear triple means no concave/convex
    /// pair strictly inside it admits a perturbation; the tent model both
    /// fails the certificate and admits one.
    #[test]
    fn certificate_consistent_with_perturbation_witness() {
        let data = collinear_data();

        let (arch, theta) = tent_on_line();
        let cert = convexity_certificate(&arch, &theta, &data, &CertTolerances::default()).unwrap();
        assert!(!cert.all_pass);
        // concave unit 1 (c = -2s) and convex unit 0 or 2 bracket x0 = ...
        // the pair (concave at 0.5, convex at 0.7) has x0-free bracket;
        // pick the pair (1, 2): kinks 0.5 < 0.7, no datapoint inside.
        let plan = build_perturbation(&arch, &theta, &data, 1, 2, 0.6, 0.01).unwrap();
        let report = verify_perturbation(&arch, &theta, &plan, &data).unwrap();
        assert!(report.pass, "{report:?}");

        let (arch2, theta2) = interpolant_net(&data);
        let cert2 =
            convexity_certificate(&arch2, &theta2, &data, &CertTolerances::default()).unwrap();
        assert!(cert2.all_pass);
        // The interpolant of collinear data has no kinks at all, so no pair
        // strictly inside any triple can fire.
        let kinks = extract_kinks(&arch2, &theta2).unwrap();
        assert!(kinks.kinks.iter().all(|k| k.jump <= 1e-12));
    }
}
