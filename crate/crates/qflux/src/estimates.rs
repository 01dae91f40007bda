//! Flux computation and two-sided L² estimate reports.
//!
//! Given a solution u of −div(a(|∇u|)∇u) = f, the flux V = a(|∇u|)∇u is
//! square-integrably differentiable even when u itself is not twice
//! differentiable. The reports here measure both directions: global and
//! local W^{1,2} norms of V against ‖f‖_{L²}, plus a gallery family
//! u = |x₁|^β whose discrete Hessian norm diverges under refinement while
//! the flux norm stays put.

use std::sync::Arc;

use thiserror::Error;

use crate::grid::{self, GridDomain, NodeClass, Region, ScalarField, VectorField};
use crate::structure::StructureFunction;

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("residual {residual:.6e} exceeds cap {cap:.6e}; u does not solve the problem for f")]
    ResidualTooLarge { residual: f64, cap: f64 },
    #[error("ball of radius {r} at ({cx}, {cy}) is not compactly interior")]
    BallNotInterior { cx: f64, cy: f64, r: f64 },
    #[error("{0}")]
    ParameterOutOfRange(String),
}

/// Reported in place of any ratio whose denominator vanishes. CSV-safe,
/// never an infinity.
pub const RATIO_SENTINEL: f64 = -1.0;

/// Nodal flux V = a(|∇u|)∇u, plus the number of nodes where ∇u vanished
/// exactly while a diverges at zero (i_a < 0). At such nodes the value is
/// the zero limit of the regularized flux a_ε(|∇u|)∇u, which is the zero
/// vector for every ε, so only the count is reported.
pub fn flux_flagged(sf: &StructureFunction, u: &ScalarField) -> (VectorField, usize) {
    let grad = grid::gradient(u);
    let mut v = VectorField::zeros(&u.domain);
    let diverging = sf.i_a() < 0.0;
    let mut singular = 0;
    for (i, j) in u.domain.in_domain_nodes() {
        let g = grad.get(i, j);
        if diverging && g[0] == 0.0 && g[1] == 0.0 {
            singular += 1;
        }
        let w = sf.flux_vec(&g);
        v.set(i, j, [w[0], w[1]]);
    }
    (v, singular)
}

pub fn flux(sf: &StructureFunction, u: &ScalarField) -> VectorField {
    flux_flagged(sf, u).0
}

/// ‖div V + f‖_{L²} over interior nodes, the discrete shadow of
/// −div V = f.
pub fn residual_l2(v: &VectorField, f: &ScalarField) -> f64 {
    assert!(Arc::ptr_eq(&v.domain, &f.domain), "flux and data on different domains");
    let div = grid::divergence(v);
    let dom = &f.domain;
    let mut acc = 0.0;
    for (i, j) in dom.interior_nodes() {
        let r = div.get(i, j) + f.get(i, j);
        acc += r * r * dom.weight(i, j);
    }
    acc.sqrt()
}

fn norm_l2_interior(f: &ScalarField) -> f64 {
    let dom = &f.domain;
    let mut acc = 0.0;
    for (i, j) in dom.interior_nodes() {
        let t = f.get(i, j);
        acc += t * t * dom.weight(i, j);
    }
    acc.sqrt()
}

#[derive(Debug, Clone)]
pub struct EstimateReport {
    pub norm_f_l2: f64,
    pub norm_v_l2: f64,
    /// Gradient part over interior nodes only; the one-node boundary
    /// collar is excluded because one-sided second differences are noisy
    /// at cut cells and the collar has measure O(h).
    pub norm_grad_v_l2: f64,
    pub norm_v_w12: f64,
    /// ‖f‖_{L²} / ‖V‖_{W^{1,2}}, or the sentinel when V vanishes.
    pub ratio_lower: f64,
    /// ‖V‖_{W^{1,2}} / ‖f‖_{L²}, or the sentinel when f vanishes.
    pub ratio_upper: f64,
    pub residual_l2: f64,
    /// ‖f‖_{L²(interior)} ≤ √2·‖∇V‖_{L²} + 10·residual. Since f = −div V
    /// holds nodewise up to the residual and both sides use the same
    /// difference stencils, this certifies the lower inequality
    /// structurally rather than empirically.
    pub lower_certified: bool,
    pub h: f64,
    pub descriptor: String,
    pub convex: bool,
    /// Nodes where the zero-gradient flux substitution fired.
    pub singular_nodes: usize,
}

/// Global two-sided report for a solve pair (u, f).
///
/// `residual_cap` operationalizes the precondition that u actually solves
/// the problem for f: the recomputed interior residual must not exceed it.
/// Callers holding a solve report pass a small multiple of the certified
/// residual; ten times is the conventional slack.
pub fn global_estimate(
    sf: &StructureFunction,
    u: &ScalarField,
    f: &ScalarField,
    residual_cap: f64,
) -> Result<EstimateReport, EstimateError> {
    assert!(Arc::ptr_eq(&u.domain, &f.domain), "u and f on different domains");
    let (v, singular_nodes) = flux_flagged(sf, u);
    let residual = residual_l2(&v, f);
    if residual > residual_cap {
        return Err(EstimateError::ResidualTooLarge { residual, cap: residual_cap });
    }
    let norm_f_l2 = grid::norm_l2(f);
    let norm_v_l2 = grid::norm_l2_vec(&v);
    let grad_sq = grid::grad_sq_interior_region(&v, Region::All);
    let norm_grad_v_l2 = grad_sq.sqrt();
    let norm_v_w12 = (norm_v_l2 * norm_v_l2 + grad_sq).sqrt();
    let ratio_upper = if norm_f_l2 > 0.0 { norm_v_w12 / norm_f_l2 } else { RATIO_SENTINEL };
    let ratio_lower = if norm_v_w12 > 0.0 { norm_f_l2 / norm_v_w12 } else { RATIO_SENTINEL };
    let lower_certified =
        norm_l2_interior(f) <= std::f64::consts::SQRT_2 * norm_grad_v_l2 + 10.0 * residual;
    Ok(EstimateReport {
        norm_f_l2,
        norm_v_l2,
        norm_grad_v_l2,
        norm_v_w12,
        ratio_lower,
        ratio_upper,
        residual_l2: residual,
        lower_certified,
        h: u.domain.spacing(),
        descriptor: sf.descriptor(),
        convex: u.domain.convex(),
        singular_nodes,
    })
}

/// True when every node within `r + h` of the center is interior, the
/// discrete version of B_r(center) ⊂⊂ domain with one cell of margin.
pub fn ball_compactly_interior(dom: &GridDomain, center: [f64; 2], r: f64) -> bool {
    let h = dom.spacing();
    let [cx, cy] = center;
    let guard = r + h;
    let (x0, x1) = (dom.x(0), dom.x(dom.nx() - 1));
    let (y0, y1) = (dom.y(0), dom.y(dom.ny() - 1));
    if cx - guard < x0 - 1e-12
        || cx + guard > x1 + 1e-12
        || cy - guard < y0 - 1e-12
        || cy + guard > y1 + 1e-12
    {
        return false;
    }
    let ilo = ((cx - guard - x0) / h).floor().max(0.0) as usize;
    let jlo = ((cy - guard - y0) / h).floor().max(0.0) as usize;
    let ihi = (((cx + guard - x0) / h).ceil() as usize).min(dom.nx() - 1);
    let jhi = (((cy + guard - y0) / h).ceil() as usize).min(dom.ny() - 1);
    for i in ilo..=ihi {
        for j in jlo..=jhi {
            let (dx, dy) = (dom.x(i) - cx, dom.y(j) - cy);
            if dx * dx + dy * dy <= guard * guard && dom.class(i, j) != NodeClass::Interior {
                return false;
            }
        }
    }
    true
}

/// Local estimate on the ball pair B_R ⊂ B_{2R} around `center`:
/// lhs = ‖V‖_{W^{1,2}(B_R)}, rhs = ‖f‖_{L²(B_{2R})} + R⁻¹‖V‖_{L¹(B_{2R})}
/// (the R^{−n/2} weight with n = 2). Returns (lhs, rhs, lhs/rhs).
///
/// B_{2R} must be compactly interior with one cell of margin: every node
/// within 2R + h of the center has to be an interior node.
pub fn local_estimate(
    sf: &StructureFunction,
    u: &ScalarField,
    f: &ScalarField,
    center: [f64; 2],
    radius: f64,
) -> Result<(f64, f64, f64), EstimateError> {
    assert!(Arc::ptr_eq(&u.domain, &f.domain), "u and f on different domains");
    let dom = &u.domain;
    let [cx, cy] = center;
    if !(radius > 0.0) {
        return Err(EstimateError::ParameterOutOfRange(format!(
            "ball radius {radius} must be positive"
        )));
    }
    if !ball_compactly_interior(dom, center, 2.0 * radius) {
        return Err(EstimateError::BallNotInterior { cx, cy, r: 2.0 * radius });
    }
    let v = flux(sf, u);
    let inner = Region::Ball { cx, cy, r: radius };
    let outer = Region::Ball { cx, cy, r: 2.0 * radius };
    let lhs = grid::norm_w12_region(&v, inner);
    let rhs = grid::norm_l2_region(f, outer) + grid::norm_l1_vec_region(&v, outer) / radius;
    let ratio = if rhs > 0.0 { lhs / rhs } else { RATIO_SENTINEL };
    Ok((lhs, rhs, ratio))
}

/// Discrete L² norm of the nodal Hessian over interior nodes carrying a
/// full centered cross stencil.
pub fn hessian_l2_interior(u: &ScalarField) -> f64 {
    let dom = &u.domain;
    let h = dom.spacing();
    let h2 = h * h;
    let mut acc = 0.0;
    for (i, j) in dom.interior_nodes() {
        let (si, sj) = (i as isize, j as isize);
        if !(dom.in_domain(si + 1, sj + 1)
            && dom.in_domain(si - 1, sj - 1)
            && dom.in_domain(si + 1, sj - 1)
            && dom.in_domain(si - 1, sj + 1))
        {
            continue;
        }
        let c = u.get(i, j);
        let uxx = (u.get(i + 1, j) - 2.0 * c + u.get(i - 1, j)) / h2;
        let uyy = (u.get(i, j + 1) - 2.0 * c + u.get(i, j - 1)) / h2;
        let uxy = (u.get(i + 1, j + 1) + u.get(i - 1, j - 1)
            - u.get(i + 1, j - 1)
            - u.get(i - 1, j + 1))
            / (4.0 * h2);
        acc += (uxx * uxx + 2.0 * uxy * uxy + uyy * uyy) * h2;
    }
    acc.sqrt()
}

#[derive(Debug, Clone)]
pub struct GalleryRow {
    pub h: f64,
    pub norm_f_l2: f64,
    pub norm_v_w12: f64,
    pub norm_hess_l2: f64,
}

#[derive(Debug)]
pub struct GalleryReport {
    pub beta: f64,
    pub p: f64,
    /// Least-squares slope of log ‖∇²u‖_{L²} against log h. Negative when
    /// the Hessian norm diverges under refinement; β − 3/2 analytically
    /// for β in the failure regime.
    pub hess_exponent: f64,
    /// β ≤ 3/2 puts u = |x₁|^β outside W^{2,2} in the continuum.
    pub w22_fails: bool,
    pub rows: Vec<GalleryRow>,
}

/// Flux-regular, Hessian-irregular family: u = |x₁|^β sampled nodally on
/// each domain of a refinement family, with the analytic right-hand side
/// f = −β^{p−1}(β−1)(p−1)·|x₁|^{(β−1)(p−1)−1}. Reports ‖V‖_{W^{1,2}} and
/// the discrete Hessian norm per mesh plus the fitted growth exponent.
pub fn gallery_counterexample(
    beta: f64,
    p: f64,
    domains: &[Arc<GridDomain>],
) -> Result<GalleryReport, EstimateError> {
    if !(beta > 1.0) {
        return Err(EstimateError::ParameterOutOfRange(format!(
            "beta = {beta} must exceed 1"
        )));
    }
    let gamma = (beta - 1.0) * (p - 1.0);
    if !(gamma >= 1.0) {
        return Err(EstimateError::ParameterOutOfRange(format!(
            "f is discontinuous: (beta-1)(p-1) = {gamma} < 1"
        )));
    }
    if domains.len() < 2 {
        return Err(EstimateError::ParameterOutOfRange(
            "need at least two meshes to fit the growth exponent".into(),
        ));
    }
    let sf = StructureFunction::power_law(p)
        .map_err(|e| EstimateError::ParameterOutOfRange(e.to_string()))?;
    let fcoef = -beta.powf(p - 1.0) * gamma;
    let mut rows = Vec::with_capacity(domains.len());
    for dom in domains {
        let u = ScalarField::from_fn(dom, |x, _| x.abs().powf(beta));
        let f = ScalarField::from_fn(dom, |x, _| fcoef * x.abs().powf(gamma - 1.0));
        let v = flux(&sf, &u);
        rows.push(GalleryRow {
            h: dom.spacing(),
            norm_f_l2: grid::norm_l2(&f),
            norm_v_w12: grid::norm_w12(&v),
            norm_hess_l2: hessian_l2_interior(&u),
        });
    }
    let pts: Vec<(f64, f64)> =
        rows.iter().map(|r| (r.h.ln(), r.norm_hess_l2.ln())).collect();
    Ok(GalleryReport {
        beta,
        p,
        hess_exponent: loglog_slope(&pts),
        w22_fails: beta <= 1.5,
        rows,
    })
}

fn loglog_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in pts {
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{self, SolveOptions};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn flux_is_gradient_for_p2() {
        let dom = GridDomain::unit_square(0.125).unwrap();
        let u = ScalarField::from_fn(&dom, |x, y| x * x - 3.0 * y + 0.5 * x * y);
        let sf = StructureFunction::power_law(2.0).unwrap();
        let (v, singular) = flux_flagged(&sf, &u);
        assert_eq!(singular, 0);
        let g = grid::gradient(&u);
        for (i, j) in dom.in_domain_nodes() {
            let (a, b) = (v.get(i, j), g.get(i, j));
            assert_relative_eq!(a[0], b[0], epsilon = 1e-14);
            assert_relative_eq!(a[1], b[1], epsilon = 1e-14);
        }
    }

    #[test]
    fn flux_hand_evaluated_p3() {
        let dom = GridDomain::unit_square(0.125).unwrap();
        let u = ScalarField::from_fn(&dom, |x, y| 0.5 * (x * x + y * y));
        let sf = StructureFunction::power_law(3.0).unwrap();
        let v = flux(&sf, &u);
        for (i, j) in dom.in_domain_nodes() {
            let (x, y) = (dom.x(i), dom.y(j));
            let r = x.hypot(y);
            let got = v.get(i, j);
            assert!((got[0] - r * x).abs() < 1e-12, "V_x at ({x},{y}): {got:?}");
            assert!((got[1] - r * y).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_substitution_flagged_only_when_a_diverges() {
        let dom = GridDomain::unit_square(0.25).unwrap();
        let u = ScalarField::from_fn(&dom, |x, _| (x - 0.5) * (x - 0.5));
        let slow = StructureFunction::power_law(1.5).unwrap();
        let (v, singular) = flux_flagged(&slow, &u);
        assert_eq!(singular, dom.ny(), "center column has exact zero gradient");
        let mid = dom.nx() / 2;
        assert_eq!(v.get(mid, 2), [0.0, 0.0]);
        assert!(v.get(0, 2)[0].is_finite());
        let fast = StructureFunction::power_law(3.0).unwrap();
        assert_eq!(flux_flagged(&fast, &u).1, 0);
    }

    fn disk_solve(p: f64, h: f64) -> (StructureFunction, ScalarField, ScalarField, f64) {
        let sf = StructureFunction::power_law(p).unwrap();
        let dom = GridDomain::disk(1.0, h).unwrap();
        let f = ScalarField::from_fn(&dom, |_, _| 1.0);
        let (u, rep) = solver::solve_dirichlet(&sf, &dom, &f, &SolveOptions::default()).unwrap();
        (sf, u, f, rep.residual_l2)
    }

    #[test]
    fn global_estimate_matches_disk_closed_forms() {
        let (sf, u, f, res) = disk_solve(3.0, 1.0 / 64.0);
        let rep = global_estimate(&sf, &u, &f, 10.0 * res).unwrap();
        assert_relative_eq!(rep.norm_f_l2, PI.sqrt(), max_relative = 0.03);
        assert_relative_eq!(rep.norm_v_l2, (PI / 8.0).sqrt(), max_relative = 0.05);
        assert_relative_eq!(rep.norm_v_w12, (5.0 * PI / 8.0).sqrt(), max_relative = 0.05);
        assert_relative_eq!(rep.ratio_upper, (5.0f64 / 8.0).sqrt(), max_relative = 0.05);
        assert!(rep.norm_v_w12 >= rep.norm_v_l2);
        assert!(rep.lower_certified, "structural lower bound");
        assert!(rep.convex);
        assert_eq!(rep.singular_nodes, 0);
    }

    #[test]
    fn zero_data_reports_sentinel_ratios() {
        let dom = GridDomain::disk(1.0, 1.0 / 16.0).unwrap();
        let u = ScalarField::zeros(&dom);
        let f = ScalarField::zeros(&dom);
        let sf = StructureFunction::power_law(3.0).unwrap();
        let rep = global_estimate(&sf, &u, &f, 1e-12).unwrap();
        assert_eq!(rep.norm_f_l2, 0.0);
        assert_eq!(rep.norm_v_w12, 0.0);
        assert_eq!(rep.ratio_upper, RATIO_SENTINEL);
        assert_eq!(rep.ratio_lower, RATIO_SENTINEL);
        let (lhs, rhs, ratio) = local_estimate(&sf, &u, &f, [0.0, 0.0], 0.125).unwrap();
        assert_eq!((lhs, rhs, ratio), (0.0, 0.0, RATIO_SENTINEL));
    }

    #[test]
    fn mismatched_data_rejected() {
        let sf = StructureFunction::power_law(2.0).unwrap();
        let dom = GridDomain::unit_square(1.0 / 32.0).unwrap();
        let f = ScalarField::from_fn(&dom, |x, y| {
            2.0 * PI * PI * (PI * x).sin() * (PI * y).sin()
        });
        let (u, rep) = solver::solve_dirichlet(&sf, &dom, &f, &SolveOptions::default()).unwrap();
        let wrong = ScalarField::from_fn(&dom, |x, y| {
            2.0 * PI * PI * (PI * x).sin() * (PI * y).sin() + 100.0
        });
        let err = global_estimate(&sf, &u, &wrong, 10.0 * rep.residual_l2).unwrap_err();
        assert!(matches!(err, EstimateError::ResidualTooLarge { .. }), "{err}");
        assert!(global_estimate(&sf, &u, &f, 10.0 * rep.residual_l2).is_ok());
    }

    #[test]
    fn local_estimate_matches_disk_closed_forms() {
        let (sf, u, f, _) = disk_solve(3.0, 1.0 / 64.0);
        let (lhs, rhs, ratio) = local_estimate(&sf, &u, &f, [0.0, 0.0], 0.25).unwrap();
        let lhs_exact = (65.0 * PI / 2048.0).sqrt();
        let rhs_exact = PI.sqrt() / 2.0 + PI / 6.0;
        assert_relative_eq!(lhs, lhs_exact, max_relative = 0.05);
        assert_relative_eq!(rhs, rhs_exact, max_relative = 0.05);
        assert_relative_eq!(ratio, lhs_exact / rhs_exact, max_relative = 0.05);
    }

    #[test]
    fn local_estimate_rejects_ball_near_boundary() {
        let sf = StructureFunction::power_law(2.0).unwrap();
        let dom = GridDomain::disk(1.0, 1.0 / 32.0).unwrap();
        let u = ScalarField::zeros(&dom);
        let f = ScalarField::zeros(&dom);
        let err = local_estimate(&sf, &u, &f, [0.5, 0.0], 0.25).unwrap_err();
        assert!(matches!(err, EstimateError::BallNotInterior { .. }), "{err}");
        let sq = GridDomain::unit_square(1.0 / 16.0).unwrap();
        let us = ScalarField::zeros(&sq);
        let fs = ScalarField::zeros(&sq);
        let err = local_estimate(&sf, &us, &fs, [0.5, 0.5], 0.3).unwrap_err();
        assert!(matches!(err, EstimateError::BallNotInterior { .. }));
        assert!(local_estimate(&sf, &us, &fs, [0.5, 0.5], 0.2).is_ok());
    }

    fn gallery_domains(hs: &[f64]) -> Vec<Arc<GridDomain>> {
        hs.iter()
            .map(|&h| GridDomain::rectangle_at(-0.5, -0.5, 1.0, 1.0, h).unwrap())
            .collect()
    }

    #[test]
    fn gallery_hessian_diverges_while_flux_stays_bounded() {
        let doms = gallery_domains(&[1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0]);
        let rep = gallery_counterexample(1.4, 6.0, &doms).unwrap();
        assert!(rep.w22_fails);
        let w12: Vec<f64> = rep.rows.iter().map(|r| r.norm_v_w12).collect();
        let spread = (w12.iter().cloned().fold(f64::MIN, f64::max)
            - w12.iter().cloned().fold(f64::MAX, f64::min))
            / w12[0];
        assert!(spread < 0.05, "flux norm drifts: {w12:?}");
        let growth = rep.rows.last().unwrap().norm_hess_l2 / rep.rows[0].norm_hess_l2;
        assert!(growth > 1.1, "hessian growth {growth}");
        assert!(
            (rep.hess_exponent - (1.4 - 1.5)).abs() <= 0.05,
            "exponent {} vs -0.1",
            rep.hess_exponent
        );
    }

    #[test]
    fn gallery_excluded_regime_is_stable() {
        let doms = gallery_domains(&[1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0]);
        let rep = gallery_counterexample(2.0, 6.0, &doms).unwrap();
        assert!(!rep.w22_fails);
        for r in &rep.rows {
            assert_relative_eq!(r.norm_hess_l2, 2.0, max_relative = 0.05);
        }
        assert!(rep.hess_exponent.abs() < 0.02, "exponent {}", rep.hess_exponent);
    }

    #[test]
    fn gallery_guards() {
        let doms = gallery_domains(&[1.0 / 16.0, 1.0 / 32.0]);
        for (beta, p) in [(1.4, 2.0), (1.0, 6.0), (0.9, 6.0)] {
            let err = gallery_counterexample(beta, p, &doms).unwrap_err();
            assert!(matches!(err, EstimateError::ParameterOutOfRange(_)), "{beta} {p}");
        }
        assert!(gallery_counterexample(1.4, 6.0, &doms[..1]).is_err());
    }

    #[test]
    fn neumann_solve_passes_structural_bound() {
        let sf = StructureFunction::power_law(2.0).unwrap();
        let dom = GridDomain::unit_square(1.0 / 32.0).unwrap();
        let f = ScalarField::from_fn(&dom, |x, _| (PI * x).cos());
        let (u, rep) = solver::solve_neumann(&sf, &dom, &f, &SolveOptions::default()).unwrap();
        let est = global_estimate(&sf, &u, &f, 10.0 * rep.residual_l2).unwrap();
        assert!(est.lower_certified);
        assert!(est.ratio_upper > 0.0 && est.ratio_upper < 20.0, "{}", est.ratio_upper);
    }
}
