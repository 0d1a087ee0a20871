//! Error norms, observed orders and numerical checks of discrete identities.

use nalgebra::DVector;

use crate::error::{HdgError, Result};
use crate::fem::{edge_rule, ElementGeometry, ReferenceTables};
use crate::mesh::Mesh;
use crate::par::{self, Execution};
use crate::projections::{hdg_project, ElementSpaces, ScalarField, VectorField};
use crate::schemes::{EdgeLabel, HdgProblem, HdgSolution, Source};

/// Extra quadrature degrees used for errors against transcendental fields.
pub const ERROR_QUADRATURE_EXTRA: usize = 6;

/// Tables for error evaluation: same bases, quadrature of degree `2 max(k, k_W) + 8`.
pub fn error_tables(problem: &HdgProblem) -> Result<ReferenceTables> {
    let c = &problem.config;
    ReferenceTables::new(c.k, c.kw(), 2 * c.k.max(c.kw()) + 2 + ERROR_QUADRATURE_EXTRA)
}

fn sum_elements(execution: Execution, mesh: &Mesh, f: impl Fn(usize) -> f64 + Sync + Send) -> f64 {
    par::map_indexed(execution, mesh.num_elements(), f).into_iter().sum()
}

/// `||u - u_h||` for a `W` field given by per-element coefficients.
pub fn l2_error_scalar(mesh: &Mesh, tables: &ReferenceTables, coeffs: &[DVector<f64>], exact: ScalarField) -> f64 {
    sum_elements(Execution::default(), mesh, |t| {
        let g = ElementGeometry::new(mesh, t, tables);
        let vals = &tables.vol_w * &coeffs[t];
        g.volume_points
            .iter()
            .zip(&g.volume_weights)
            .enumerate()
            .map(|(k, (&p, w))| w * (exact(p) - vals[k]).powi(2))
            .sum()
    })
    .sqrt()
}

/// `||q - q_h||` for a `V` field given by per-element `[x; y]` coefficients.
pub fn l2_error_vector(mesh: &Mesh, tables: &ReferenceTables, coeffs: &[DVector<f64>], exact: VectorField) -> f64 {
    let nk = tables.nk();
    sum_elements(Execution::default(), mesh, |t| {
        let g = ElementGeometry::new(mesh, t, tables);
        let vx = &tables.vol_v * coeffs[t].rows(0, nk);
        let vy = &tables.vol_v * coeffs[t].rows(nk, nk);
        g.volume_points
            .iter()
            .zip(&g.volume_weights)
            .enumerate()
            .map(|(k, (&p, w))| {
                let e = exact(p);
                w * ((e[0] - vx[k]).powi(2) + (e[1] - vy[k]).powi(2))
            })
            .sum()
    })
    .sqrt()
}

fn edge_physical_points(mesh: &Mesh, edge: usize, degree: usize) -> Result<(Vec<[f64; 2]>, Vec<f64>)> {
    let rule = edge_rule(degree)?;
    let e = &mesh.edges()[edge];
    let [a, b] = [mesh.vertices()[e.vertices[0]], mesh.vertices()[e.vertices[1]]];
    let pts = rule.points.iter().map(|t| [a[0] + t[0] * (b[0] - a[0]), a[1] + t[0] * (b[1] - a[1])]).collect();
    Ok((pts, rule.weights.iter().map(|w| w * e.length).collect()))
}

/// `||g||_{dT_h}`: every element side contributes, so interior edges count twice.
/// `g(element, local_edge, point)`.
pub fn boundary_norm(mesh: &Mesh, degree: usize, g: &dyn Fn(usize, usize, [f64; 2]) -> f64) -> Result<f64> {
    let mut total = 0.0;
    for t in 0..mesh.num_elements() {
        for (i, &e) in mesh.element_edges(t).iter().enumerate() {
            let (pts, wts) = edge_physical_points(mesh, e, degree)?;
            total += pts.iter().zip(&wts).map(|(&p, w)| w * g(t, i, p).powi(2)).sum::<f64>();
        }
    }
    Ok(total.sqrt())
}

/// `||g||_{E_h}` over the edges, `g(edge, point)`.
pub fn jump_norm(mesh: &Mesh, degree: usize, g: &dyn Fn(usize, [f64; 2]) -> f64) -> Result<f64> {
    let mut total = 0.0;
    for e in 0..mesh.num_edges() {
        let (pts, wts) = edge_physical_points(mesh, e, degree)?;
        total += pts.iter().zip(&wts).map(|(&p, w)| w * g(e, p).powi(2)).sum::<f64>();
    }
    Ok(total.sqrt())
}

/// Both sides of `||q_h||^2 + ||tau^{1/2}(u~_h - u^_h)||^2_{dT_h} = (f, u_h)`,
/// with `u~_h = P_M u_h` for the Lehrenfeld-Schoberl flux.
pub fn energy_identity_sides(problem: &HdgProblem, sol: &HdgSolution, f: Source) -> (f64, f64) {
    let tb = &problem.tables;
    let per = par::map_indexed(problem.config.execution, problem.mesh.num_elements(), |t| {
        let g = problem.geometry(t);
        let mut lhs = g.map.det_abs * sol.q[t].norm_squared();
        for i in 0..3 {
            let sv = problem.side_values(sol, &g, i);
            let uhat = &tb.edge_m * &sol.uhat[t][i];
            let d = &sv.u_stab - uhat;
            lhs += sv.tau * g.edge_weights[i].iter().zip(d.iter()).map(|(w, x)| w * x * x).sum::<f64>();
        }
        let uh = &tb.vol_w * &sol.u[t];
        let rhs: f64 = g.volume_points.iter().zip(&g.volume_weights).enumerate().map(|(k, (&p, w))| w * f(p) * uh[k]).sum();
        (lhs, rhs)
    });
    per.into_iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1))
}

/// `|LHS - (f, u_h)| / max(LHS, |(f, u_h)|)`, zero when both vanish.
pub fn energy_identity_residual(problem: &HdgProblem, sol: &HdgSolution, f: Source) -> f64 {
    let (lhs, rhs) = energy_identity_sides(problem, sol, f);
    let scale = lhs.max(rhs.abs());
    if scale == 0.0 { 0.0 } else { (lhs - rhs).abs() / scale }
}

/// Max over edge quadrature points of `|q.n - q^.n + tau (u~ - u^)|` with the
/// stored side traces, relative to the size of the terms.
pub fn flux_residual(problem: &HdgProblem, sol: &HdgSolution) -> f64 {
    let psi = &problem.tables.edge_m;
    let per = par::map_indexed(problem.config.execution, problem.mesh.num_elements(), |t| {
        let g = problem.geometry(t);
        let (mut res, mut scale) = (0.0f64, 0.0f64);
        for i in 0..3 {
            let sv = problem.side_values(sol, &g, i);
            let qh = psi * &sol.qhatn[t][i];
            let uh = psi * &sol.uhat[t][i];
            for k in 0..qh.len() {
                let r = sv.qn[k] - qh[k] + sv.tau * (sv.u_stab[k] - uh[k]);
                res = res.max(r.abs());
                scale = scale.max(sv.qn[k].abs()).max((sv.tau * sv.u_stab[k]).abs()).max(qh[k].abs());
            }
        }
        (res, scale)
    });
    let (res, scale) = per.into_iter().fold((0.0f64, 0.0f64), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    if scale == 0.0 { res } else { res / scale }
}

/// Max violation of the transmission conditions tested against the edge basis:
/// `q^.n` balances across D edges, `u^` agrees across N edges and vanishes on
/// boundary N edges.
pub fn transmission_residual(problem: &HdgProblem, sol: &HdgSolution) -> f64 {
    let mesh = problem.mesh;
    let (mut res, mut scale) = (0.0f64, 0.0f64);
    for (e, edge) in mesh.edges().iter().enumerate() {
        let side = |t: usize| {
            let i = mesh.element_edges(t).iter().position(|&x| x == e).expect("edge of element");
            (i, mesh.element_signs(t)[i])
        };
        let label = problem.labeling.label(e);
        if edge.is_boundary() && label == EdgeLabel::D {
            continue;
        }
        let mut sum = DVector::zeros(problem.layout().nm);
        for t in edge.elements() {
            let (i, s) = side(t);
            let c = match label {
                EdgeLabel::D => sol.qhatn[t][i].clone(),
                EdgeLabel::N => &sol.uhat[t][i] * s,
            };
            scale = scale.max(c.amax());
            sum += c;
        }
        res = res.max(sum.amax());
    }
    if scale == 0.0 { res } else { res / scale }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionErrors {
    /// `||Pi_W u - u_h||`
    pub piw_u_minus_uh: f64,
    /// `||q - Pi_V q||`
    pub q_minus_piv_q: f64,
    /// `||q - q_h||`
    pub q_error: f64,
    /// `||q - q_h|| / ||q - Pi_V q||`
    pub corollary_ratio: f64,
}

/// HDG-projection based errors for equal-degree spaces.
pub fn projection_error_checks(
    problem: &HdgProblem,
    sol: &HdgSolution,
    exact_q: VectorField,
    exact_u: ScalarField,
) -> Result<ProjectionErrors> {
    if problem.config.kw() != problem.config.k {
        return Err(HdgError::Config("projection errors require equal degrees for V and W".into()));
    }
    let tables = error_tables(problem)?;
    let mesh = problem.mesh;
    let nk = tables.nk();
    let per = par::try_map_indexed(problem.config.execution, mesh.num_elements(), |t| -> Result<[f64; 3]> {
        let tau = mesh.element_edges(t).map(|e| problem.tau[e]);
        let s = ElementSpaces::new(mesh, t, &tables, tau);
        let p = hdg_project(exact_q, exact_u, &s)?;
        let du = s.coefficient_norm(&(&p.u - &sol.u[t]));
        let px = &tables.vol_v * p.q.rows(0, nk);
        let py = &tables.vol_v * p.q.rows(nk, nk);
        let hx = &tables.vol_v * sol.q[t].rows(0, nk);
        let hy = &tables.vol_v * sol.q[t].rows(nk, nk);
        let (mut dq, mut eq) = (0.0, 0.0);
        for (k, (&pt, w)) in s.geometry.volume_points.iter().zip(&s.geometry.volume_weights).enumerate() {
            let e = exact_q(pt);
            dq += w * ((e[0] - px[k]).powi(2) + (e[1] - py[k]).powi(2));
            eq += w * ((e[0] - hx[k]).powi(2) + (e[1] - hy[k]).powi(2));
        }
        Ok([du * du, dq, eq])
    })?;
    let tot = per.iter().fold([0.0; 3], |a, b| [a[0] + b[0], a[1] + b[1], a[2] + b[2]]);
    let [piw, piv, qe] = tot.map(f64::sqrt);
    let corollary_ratio = if piv > 0.0 { qe / piv } else if qe == 0.0 { 0.0 } else { f64::INFINITY };
    Ok(ProjectionErrors { piw_u_minus_uh: piw, q_minus_piv_q: piv, q_error: qe, corollary_ratio })
}

/// Observed orders `log(e_i / e_{i+1}) / log(h_i / h_{i+1})`; `None` where an
/// error is not positive.
pub fn eoc(errors: &[f64], hs: &[f64]) -> Vec<Option<f64>> {
    assert_eq!(errors.len(), hs.len(), "one mesh size per error");
    errors
        .windows(2)
        .zip(hs.windows(2))
        .map(|(e, h)| {
            (e[0] > 0.0 && e[1] > 0.0 && e[0].is_finite() && e[1].is_finite())
                .then(|| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
        })
        .collect()
}

/// One refinement level of a study.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ReportRow {
    pub inv_h: f64,
    pub h: f64,
    pub err_q: f64,
    pub err_u: f64,
    /// `||Pi_W u - u_h||`, equal-degree runs only.
    pub err_piwu: Option<f64>,
    /// `||q - Pi_V q||`, equal-degree runs only.
    pub err_q_piv: Option<f64>,
    pub energy_resid: f64,
    pub flux_resid: f64,
    pub transmission_resid: f64,
    pub solve_resid: f64,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConvergenceReport {
    pub method: String,
    pub k: usize,
    pub kw: usize,
    pub stab: String,
    pub tau: String,
    pub rows: Vec<ReportRow>,
}

impl ConvergenceReport {
    fn orders(&self, pick: impl Fn(&ReportRow) -> Option<f64>) -> Vec<Option<f64>> {
        let errs: Vec<f64> = self.rows.iter().map(|r| pick(r).unwrap_or(f64::NAN)).collect();
        let hs: Vec<f64> = self.rows.iter().map(|r| r.h).collect();
        let mut out = vec![None];
        if self.rows.len() > 1 {
            out.extend(eoc(&errs, &hs));
        }
        out.truncate(self.rows.len());
        out
    }

    /// Per row, `None` on the first row.
    pub fn orders_q(&self) -> Vec<Option<f64>> {
        self.orders(|r| Some(r.err_q))
    }

    pub fn orders_u(&self) -> Vec<Option<f64>> {
        self.orders(|r| Some(r.err_u))
    }

    pub fn orders_piwu(&self) -> Vec<Option<f64>> {
        self.orders(|r| r.err_piwu)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_structured_mesh, MeshPattern};
    use crate::schemes::{Method, MethodConfig};
    use std::f64::consts::PI;

    fn sin_u(p: [f64; 2]) -> f64 {
        (PI * p[0]).sin() * (PI * p[1]).sin()
    }

    #[test]
    fn eoc_examples() {
        assert!((eoc(&[1e-2, 2.5e-3], &[0.5, 0.25])[0].unwrap() - 2.0).abs() < 1e-12);
        assert!(eoc(&[3.0, 3.0], &[0.5, 0.25])[0].unwrap().abs() < 1e-12);
        assert!((eoc(&[8e-3, 1e-3], &[0.5, 0.25])[0].unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(eoc(&[0.0, 1.0], &[0.5, 0.25]), vec![None]);
    }

    #[test]
    fn norm_of_sine_is_one_half() {
        let mesh = build_structured_mesh(4, MeshPattern::RightSplit);
        let tables = ReferenceTables::new(1, 1, 12).unwrap();
        let zero = vec![DVector::zeros(tables.nw()); mesh.num_elements()];
        assert!((l2_error_scalar(&mesh, &tables, &zero, &sin_u) - 0.5).abs() < 1e-10);
    }

    #[test]
    fn discrete_field_has_zero_error() {
        let mesh = build_structured_mesh(2, MeshPattern::RightSplit);
        let tables = ReferenceTables::new(1, 1, 4).unwrap();
        // u = 1 + x - y interpolated exactly
        let f = |p: [f64; 2]| 1.0 + p[0] - p[1];
        let coeffs: Vec<_> = (0..mesh.num_elements())
            .map(|t| {
                let s = ElementSpaces::new(&mesh, t, &tables, [1.0; 3]);
                crate::projections::l2_project_scalar(&f, &s)
            })
            .collect();
        assert!(l2_error_scalar(&mesh, &tables, &coeffs, &f) < 1e-12);
    }

    #[test]
    fn boundary_and_jump_norms() {
        let mesh = Mesh::from_triangles(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]).unwrap();
        let b = boundary_norm(&mesh, 2, &|_, _, _| 1.0).unwrap();
        assert!((b - (2.0 + 2f64.sqrt()).sqrt()).abs() < 1e-14);
        let mesh = build_structured_mesh(3, MeshPattern::CrissCross);
        let g = |p: [f64; 2]| p[0] * p[1] + 1.0;
        let interior = |e: usize| !mesh.edges()[e].is_boundary();
        let jb = boundary_norm(&mesh, 4, &|t, i, p| if interior(mesh.element_edges(t)[i]) { g(p) } else { 0.0 }).unwrap();
        let je = jump_norm(&mesh, 4, &|e, p| if interior(e) { g(p) } else { 0.0 }).unwrap();
        assert!((jb - 2f64.sqrt() * je).abs() < 1e-12 * je);
        assert_eq!(jump_norm(&mesh, 4, &|_, _| 0.0).unwrap(), 0.0);
    }

    #[test]
    fn identities_hold_for_all_methods() {
        let mesh = build_structured_mesh(4, MeshPattern::RightSplit);
        let f = |p: [f64; 2]| 2.0 * PI * PI * sin_u(p);
        for method in [Method::Dirichlet, Method::Neumann, Method::Mixed] {
            for cfg in [MethodConfig::new(method, 2), MethodConfig::lehrenfeld_schoberl(method, 1)] {
                let p = HdgProblem::new(&mesh, cfg).unwrap();
                let sol = p.solve(&f).unwrap();
                assert!(energy_identity_residual(&p, &sol, &f) < 1e-10, "{method:?}");
                assert!(flux_residual(&p, &sol) < 1e-10, "{method:?}");
                assert!(transmission_residual(&p, &sol) < 1e-10, "{method:?}");
            }
        }
    }

    #[test]
    fn corollary_bound_on_small_mesh() {
        let mesh = build_structured_mesh(4, MeshPattern::RightSplit);
        let f = |p: [f64; 2]| 2.0 * PI * PI * sin_u(p);
        let q = |p: [f64; 2]| [-PI * (PI * p[0]).cos() * (PI * p[1]).sin(), -PI * (PI * p[0]).sin() * (PI * p[1]).cos()];
        for method in [Method::Dirichlet, Method::Neumann, Method::Mixed] {
            let p = HdgProblem::new(&mesh, MethodConfig::new(method, 1)).unwrap();
            let sol = p.solve(&f).unwrap();
            let e = projection_error_checks(&p, &sol, &q, &sin_u).unwrap();
            assert!(e.corollary_ratio <= 2.0 + 1e-6, "{method:?} {e:?}");
            assert!(e.piw_u_minus_uh < e.q_minus_piv_q);
        }
    }
}
