//! Elementwise L2 projections and the HDG projection `(Pi_V q, Pi_W u)`.
//!
//! Coefficient vectors of `V = P_k^2` are laid out as `[x-component; y-component]`
//! over the orthonormal scalar basis. Because the physical mass matrices are
//! `|det B| I`, orthogonality in coefficient space is L2 orthogonality.

use nalgebra::{DMatrix, DVector};

use crate::error::{HdgError, Result};
use crate::fem::{ElementGeometry, ReferenceTables};
use crate::mesh::Mesh;

pub type ScalarField<'a> = &'a (dyn Fn([f64; 2]) -> f64 + Sync);
pub type VectorField<'a> = &'a (dyn Fn([f64; 2]) -> [f64; 2] + Sync);

const RANK_CUTOFF: f64 = 1e-10;
const AMBIGUITY_BAND: (f64, f64) = (1e-12, 1e-8);

/// `V(K)`, `W(K)`, `M(dK)` and `tau` on one element.
pub struct ElementSpaces<'a> {
    pub tables: &'a ReferenceTables,
    pub geometry: ElementGeometry,
    pub tau: [f64; 3],
}

impl<'a> ElementSpaces<'a> {
    pub fn new(mesh: &Mesh, element: usize, tables: &'a ReferenceTables, tau: [f64; 3]) -> Self {
        Self { tables, geometry: ElementGeometry::new(mesh, element, tables), tau }
    }

    pub fn nk(&self) -> usize {
        self.tables.nk()
    }

    pub fn nw(&self) -> usize {
        self.tables.nw()
    }

    pub fn nm(&self) -> usize {
        self.tables.nm()
    }

    pub fn diameter(&self) -> f64 {
        self.geometry.map.edge_lengths.iter().copied().fold(0.0, f64::max)
    }

    fn det(&self) -> f64 {
        self.geometry.map.det_abs
    }

    fn volume_weights(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.geometry.volume_weights))
    }

    fn edge_weights(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.geometry.edge_weights[i]))
    }

    /// L2 norm over `K` of a `V` or `W` coefficient vector.
    pub fn coefficient_norm(&self, c: &DVector<f64>) -> f64 {
        self.det().sqrt() * c.norm()
    }
}

fn solve_mass(basis: &DMatrix<f64>, weights: &DMatrix<f64>, values: &DVector<f64>) -> DVector<f64> {
    let mass = basis.transpose() * weights * basis;
    let rhs = basis.transpose() * weights * values;
    mass.cholesky().expect("mass matrix is positive definite").solve(&rhs)
}

/// `P_W u`.
pub fn l2_project_scalar(u: ScalarField, s: &ElementSpaces) -> DVector<f64> {
    let vals = DVector::from_iterator(s.geometry.volume_points.len(), s.geometry.volume_points.iter().map(|&p| u(p)));
    solve_mass(&s.tables.vol_w, &s.volume_weights(), &vals)
}

/// `P_V q`.
pub fn l2_project_vector(q: VectorField, s: &ElementSpaces) -> DVector<f64> {
    let pts = &s.geometry.volume_points;
    let wd = s.volume_weights();
    let mut out = DVector::zeros(2 * s.nk());
    for c in 0..2 {
        let vals = DVector::from_iterator(pts.len(), pts.iter().map(|&p| q(p)[c]));
        out.rows_mut(c * s.nk(), s.nk()).copy_from(&solve_mass(&s.tables.vol_v, &wd, &vals));
    }
    out
}

/// `P_M g` on local edge `i`, over the edge basis in the global edge orientation.
pub fn l2_project_edge(g: ScalarField, s: &ElementSpaces, i: usize) -> DVector<f64> {
    let pts = &s.geometry.edge_points[i];
    let vals = DVector::from_iterator(pts.len(), pts.iter().map(|&p| g(p)));
    solve_mass(&s.tables.edge_m, &s.edge_weights(i), &vals)
}

/// `D[b, (c, a)] = (w_b, d_c phi_a)_K`.
pub fn divergence_matrix(s: &ElementSpaces) -> DMatrix<f64> {
    let nk = s.nk();
    let wd = s.volume_weights();
    let mut d = DMatrix::zeros(s.nw(), 2 * nk);
    for c in 0..2 {
        let block = s.tables.vol_w.transpose() * &wd * &s.geometry.v_grad[c];
        d.view_mut((0, c * nk), (s.nw(), nk)).copy_from(&block);
    }
    d
}

/// `G[b, (c, a)] = (phi_a, d_c w_b)_K`.
pub fn gradient_pairing_matrix(s: &ElementSpaces) -> DMatrix<f64> {
    let nk = s.nk();
    let wd = s.volume_weights();
    let mut g = DMatrix::zeros(s.nw(), 2 * nk);
    for c in 0..2 {
        let block = s.geometry.w_grad[c].transpose() * &wd * &s.tables.vol_v;
        g.view_mut((0, c * nk), (s.nw(), nk)).copy_from(&block);
    }
    g
}

/// `N[(i, j), (c, a)] = <phi_a n_c, psi_j>` on local edge `i`.
pub fn normal_trace_matrix(s: &ElementSpaces) -> DMatrix<f64> {
    let (nk, nm) = (s.nk(), s.nm());
    let mut n = DMatrix::zeros(3 * nm, 2 * nk);
    for i in 0..3 {
        let normal = s.geometry.normal(i);
        let pair = s.tables.edge_m.transpose() * s.edge_weights(i) * s.geometry.edge_v(s.tables, i);
        for c in 0..2 {
            n.view_mut((i * nm, c * nk), (nm, nk)).copy_from(&(&pair * normal[c]));
        }
    }
    n
}

/// `T[(i, j), b] = tau_i <w_b, psi_j>` on local edge `i`.
fn trace_w_matrix(s: &ElementSpaces) -> DMatrix<f64> {
    let nm = s.nm();
    let mut t = DMatrix::zeros(3 * nm, s.nw());
    for i in 0..3 {
        let pair = s.tables.edge_m.transpose() * s.edge_weights(i) * s.geometry.edge_w(s.tables, i);
        t.view_mut((i * nm, 0), (nm, s.nw())).copy_from(&(pair * s.tau[i]));
    }
    t
}

/// Orthonormal bases (columns, over the `V` coefficients) of the solenoidal
/// fields, the solenoidal bubbles and their complements.
#[derive(Clone, Debug)]
pub struct SolenoidalDecomposition {
    pub vs: DMatrix<f64>,
    pub vs_perp: DMatrix<f64>,
    pub vsbb: DMatrix<f64>,
    pub vsbb_perp: DMatrix<f64>,
    pub rank_divergence: usize,
    pub rank_stacked: usize,
}

/// Splits `R^n` into the numerical nullspace of `a` and its complement.
fn null_and_range(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>, usize)> {
    let n = a.ncols();
    let mut padded = DMatrix::zeros(a.nrows().max(n), n);
    padded.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return Ok((DMatrix::identity(n, n), DMatrix::zeros(n, 0), 0));
    }
    let mut null = Vec::new();
    let mut range = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        let ratio = s / smax;
        if ratio > AMBIGUITY_BAND.0 && ratio < AMBIGUITY_BAND.1 {
            return Err(HdgError::RankAmbiguity { ratio });
        }
        let col = vt.row(i).transpose();
        if ratio <= RANK_CUTOFF { null.push(col) } else { range.push(col) }
    }
    let rank = range.len();
    let stack = |v: Vec<DVector<f64>>| {
        if v.is_empty() { DMatrix::zeros(n, 0) } else { DMatrix::from_columns(&v) }
    };
    Ok((stack(null), stack(range), rank))
}

pub fn solenoidal_decomposition(s: &ElementSpaces) -> Result<SolenoidalDecomposition> {
    let n = 2 * s.nk();
    let d = divergence_matrix(s);
    let t = normal_trace_matrix(s);
    let d = &d / d.amax().max(f64::MIN_POSITIVE);
    let t = &t / t.amax().max(f64::MIN_POSITIVE);
    let (vs, vs_range, rank_divergence) = null_and_range(&d)?;
    let mut stacked = DMatrix::zeros(d.nrows() + t.nrows(), n);
    stacked.view_mut((0, 0), (d.nrows(), n)).copy_from(&d);
    stacked.view_mut((d.nrows(), 0), (t.nrows(), n)).copy_from(&t);
    let (vsbb, vsbb_range, rank_stacked) = null_and_range(&stacked)?;
    Ok(SolenoidalDecomposition {
        vs,
        vs_perp: vs_range,
        vsbb,
        vsbb_perp: vsbb_range,
        rank_divergence,
        rank_stacked,
    })
}

/// `dim M(dK) - (dim V_s - dim V_sbb + 1)`.
pub fn m_index(s: &ElementSpaces) -> Result<i64> {
    let dec = solenoidal_decomposition(s)?;
    Ok(m_index_of(s, &dec))
}

fn m_index_of(s: &ElementSpaces, dec: &SolenoidalDecomposition) -> i64 {
    3 * s.nm() as i64 - (dec.vs.ncols() as i64 - dec.vsbb.ncols() as i64 + 1)
}

/// Coefficients of `(Pi_V q, Pi_W u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HdgProjection {
    pub q: DVector<f64>,
    pub u: DVector<f64>,
}

/// Right-hand sides of the three projection equations over all test functions.
struct ProjectionData {
    div: DMatrix<f64>,
    grad: DMatrix<f64>,
    normal: DMatrix<f64>,
    trace_w: DMatrix<f64>,
    rhs_a: DVector<f64>,
    rhs_b: DVector<f64>,
    rhs_c: DVector<f64>,
}

fn projection_data(q: VectorField, u: ScalarField, s: &ElementSpaces) -> ProjectionData {
    let nk = s.nk();
    let g = &s.geometry;
    let pts = &g.volume_points;
    let wts = &g.volume_weights;
    let uw = DVector::from_iterator(pts.len(), pts.iter().zip(wts).map(|(&p, w)| u(p) * w));
    let qv: Vec<[f64; 2]> = pts.iter().map(|&p| q(p)).collect();
    let mut rhs_a = DVector::zeros(2 * nk);
    let mut rhs_b = DVector::zeros(s.nw());
    for c in 0..2 {
        rhs_a.rows_mut(c * nk, nk).copy_from(&(g.v_grad[c].transpose() * &uw));
        let qc = DVector::from_iterator(pts.len(), qv.iter().zip(wts).map(|(v, w)| v[c] * w));
        rhs_b += g.w_grad[c].transpose() * qc;
    }
    let nm = s.nm();
    let mut rhs_c = DVector::zeros(3 * nm);
    for i in 0..3 {
        let n = g.normal(i);
        let vals = DVector::from_iterator(
            g.edge_points[i].len(),
            g.edge_points[i].iter().zip(&g.edge_weights[i]).map(|(&p, w)| {
                let qp = q(p);
                (qp[0] * n[0] + qp[1] * n[1] + s.tau[i] * u(p)) * w
            }),
        );
        rhs_c.rows_mut(i * nm, nm).copy_from(&(s.tables.edge_m.transpose() * vals));
    }
    ProjectionData {
        div: divergence_matrix(s),
        grad: gradient_pairing_matrix(s),
        normal: normal_trace_matrix(s),
        trace_w: trace_w_matrix(s),
        rhs_a,
        rhs_b,
        rhs_c,
    }
}

/// Solves the reduced square system over `V_sbb^perp x W` with test spaces
/// `V_s^perp`, `W / P_0` and `M(dK)`.
pub fn hdg_project(q: VectorField, u: ScalarField, s: &ElementSpaces) -> Result<HdgProjection> {
    let dec = solenoidal_decomposition(s)?;
    let index = m_index_of(s, &dec);
    if index != 0 {
        return Err(HdgError::MDecompositionNotAdmitted { index });
    }
    let data = projection_data(q, u, s);
    let z = &dec.vsbb_perp;
    let y = &dec.vs_perp;
    let (nz, nw, nc) = (z.ncols(), s.nw(), 3 * s.nm());
    let rows_a = y.ncols();
    let n = nz + nw;
    debug_assert_eq!(rows_a + (nw - 1) + nc, n);
    let mut a = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    a.view_mut((0, nz), (rows_a, nw)).copy_from(&(&data.div * y).transpose());
    b.rows_mut(0, rows_a).copy_from(&(y.transpose() * &data.rhs_a));
    let gz = &data.grad * z;
    a.view_mut((rows_a, 0), (nw - 1, nz)).copy_from(&gz.rows(1, nw - 1));
    b.rows_mut(rows_a, nw - 1).copy_from(&data.rhs_b.rows(1, nw - 1));
    let r0 = rows_a + nw - 1;
    a.view_mut((r0, 0), (nc, nz)).copy_from(&(&data.normal * z));
    a.view_mut((r0, nz), (nc, nw)).copy_from(&data.trace_w);
    b.rows_mut(r0, nc).copy_from(&data.rhs_c);

    // Row scaling keeps the pivot test meaningful across the three blocks.
    for r in 0..n {
        let m = a.row(r).amax();
        if m > 0.0 {
            a.row_mut(r).scale_mut(1.0 / m);
            b[r] /= m;
        }
    }
    let lu = a.lu();
    let min_pivot = lu.u().diagonal().iter().fold(f64::INFINITY, |m, d| m.min(d.abs()));
    if min_pivot.is_nan() || min_pivot <= 1e-12 {
        return Err(HdgError::Singular { context: "reduced HDG projection system".into() });
    }
    let x = lu.solve(&b).ok_or_else(|| HdgError::Singular { context: "reduced HDG projection system".into() })?;
    Ok(HdgProjection { q: z * x.rows(0, nz), u: x.rows(nz, nw).into_owned() })
}

/// The full redundant system over `V x W` and all test functions, solved in
/// the minimum-norm least-squares sense.
pub fn hdg_project_least_squares(q: VectorField, u: ScalarField, s: &ElementSpaces) -> Result<HdgProjection> {
    let data = projection_data(q, u, s);
    let (nv, nw, nc) = (2 * s.nk(), s.nw(), 3 * s.nm());
    let mut a = DMatrix::zeros(nv + nw + nc, nv + nw);
    a.view_mut((0, nv), (nv, nw)).copy_from(&data.div.transpose());
    a.view_mut((nv, 0), (nw, nv)).copy_from(&data.grad);
    a.view_mut((nv + nw, 0), (nc, nv)).copy_from(&data.normal);
    a.view_mut((nv + nw, nv), (nc, nw)).copy_from(&data.trace_w);
    let mut b = DVector::zeros(nv + nw + nc);
    b.rows_mut(0, nv).copy_from(&data.rhs_a);
    b.rows_mut(nv, nw).copy_from(&data.rhs_b);
    b.rows_mut(nv + nw, nc).copy_from(&data.rhs_c);
    let svd = a.svd(true, true);
    let eps = 1e-12 * svd.singular_values.max();
    let x = svd
        .solve(&b, eps)
        .map_err(|e| HdgError::Singular { context: format!("least-squares HDG projection: {e}") })?;
    Ok(HdgProjection { q: x.rows(0, nv).into_owned(), u: x.rows(nv, nw).into_owned() })
}

/// Relative residuals of the three projection equations over all of
/// `V(K)`, `W(K)` and `M(dK)`.
pub fn projection_residuals(q: VectorField, u: ScalarField, s: &ElementSpaces, p: &HdgProjection) -> [f64; 3] {
    let d = projection_data(q, u, s);
    let rel = |r: DVector<f64>, rhs: &DVector<f64>, scale: f64| r.amax() / rhs.amax().max(scale).max(f64::MIN_POSITIVE);
    let scale = d.rhs_a.amax().max(d.rhs_b.amax()).max(d.rhs_c.amax());
    [
        rel(d.div.transpose() * &p.u - &d.rhs_a, &d.rhs_a, scale),
        rel(&d.grad * &p.q - &d.rhs_b, &d.rhs_b, scale),
        rel(&d.normal * &p.q + &d.trace_w * &p.u - &d.rhs_c, &d.rhs_c, scale),
    ]
}

/// Both sides of the element estimates for `delta_q = P_{V_sbb^perp} q - Pi_V q`
/// and `delta_u = P_W u - Pi_W u`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionBounds {
    pub delta_q: f64,
    pub bound_q: f64,
    pub delta_u: f64,
    pub bound_u: f64,
}

impl ProjectionBounds {
    /// `delta / bound`, with `0` when both vanish.
    pub fn ratios(&self) -> [f64; 2] {
        let r = |d: f64, b: f64| if d <= 1e-14 && b <= 1e-14 { 0.0 } else { d / b };
        [r(self.delta_q, self.bound_q), r(self.delta_u, self.bound_u)]
    }
}

pub fn hdg_project_bounds_check(q: VectorField, u: ScalarField, s: &ElementSpaces) -> Result<ProjectionBounds> {
    let proj = hdg_project(q, u, s)?;
    let dec = solenoidal_decomposition(s)?;
    let pv = l2_project_vector(q, s);
    let pw = l2_project_scalar(u, s);
    let sbb = &dec.vsbb;
    let p_perp = &pv - sbb * (sbb.transpose() * &pv);
    let delta_q = s.coefficient_norm(&(p_perp - &proj.q));
    let delta_u = s.coefficient_norm(&(&pw - &proj.u));

    let nk = s.nk();
    let g = &s.geometry;
    let (mut qn2, mut tu2, mut qn_tau2, mut u2) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..3 {
        let n = g.normal(i);
        let tau = s.tau[i];
        let phi = g.edge_v(s.tables, i);
        let w = g.edge_w(s.tables, i);
        let pqn = (phi * pv.rows(0, nk)) * n[0] + (phi * pv.rows(nk, nk)) * n[1];
        let pu = w * &pw;
        for (k, &p) in g.edge_points[i].iter().enumerate() {
            let wt = g.edge_weights[i][k];
            let qp = q(p);
            let eq = qp[0] * n[0] + qp[1] * n[1] - pqn[k];
            let eu = u(p) - pu[k];
            qn2 += wt * eq * eq;
            tu2 += wt * (tau * eu).powi(2);
            qn_tau2 += wt * (eq / tau).powi(2);
            u2 += wt * eu * eu;
        }
    }
    let sh = s.diameter().sqrt();
    Ok(ProjectionBounds {
        delta_q,
        bound_q: sh * (qn2.sqrt() + tu2.sqrt()),
        delta_u,
        bound_u: sh * (qn_tau2.sqrt() + u2.sqrt()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_structured_mesh, MeshPattern};
    use std::f64::consts::PI;

    fn reference() -> Mesh {
        Mesh::from_triangles(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]).unwrap()
    }

    fn spaces<'a>(mesh: &Mesh, t: usize, tables: &'a ReferenceTables, tau: f64) -> ElementSpaces<'a> {
        ElementSpaces::new(mesh, t, tables, [tau; 3])
    }

    #[test]
    fn polynomials_are_reproduced() {
        let mesh = build_structured_mesh(2, MeshPattern::CrissCross);
        let tables = ReferenceTables::new(2, 2, 8).unwrap();
        let s = spaces(&mesh, 3, &tables, 1.0);
        let f = |p: [f64; 2]| 1.0 + p[0] - 2.0 * p[0] * p[1] + p[1] * p[1];
        let c = l2_project_scalar(&f, &s);
        let vals = &tables.vol_w * &c;
        for (k, &p) in s.geometry.volume_points.iter().enumerate() {
            assert!((vals[k] - f(p)).abs() < 1e-12);
        }
        let c = l2_project_scalar(&|_| 2.5, &s);
        assert!((c[0] * tables.vol_w[(0, 0)] - 2.5).abs() < 1e-12);
        assert!(c.rows(1, c.len() - 1).amax() < 1e-12);
        let e = l2_project_edge(&|p: [f64; 2]| p[0], &s, 1);
        let vals = &tables.edge_m * e;
        for (k, p) in s.geometry.edge_points[1].iter().enumerate() {
            assert!((vals[k] - p[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_is_orthogonal_and_idempotent() {
        let mesh = build_structured_mesh(2, MeshPattern::RightSplit);
        let tables = ReferenceTables::new(1, 1, 10).unwrap();
        let s = spaces(&mesh, 2, &tables, 1.0);
        let f = |p: [f64; 2]| (PI * p[0]).sin() * (PI * p[1]).sin();
        let c = l2_project_scalar(&f, &s);
        let wd = s.volume_weights();
        let vals = DVector::from_iterator(s.geometry.volume_points.len(), s.geometry.volume_points.iter().map(|&p| f(p)));
        let r = tables.vol_w.transpose() * wd * (vals - &tables.vol_w * &c);
        assert!(r.amax() < 1e-12);
        let discrete = &tables.vol_w * &c;
        let pts = s.geometry.volume_points.clone();
        let again = l2_project_scalar(&|p| discrete[pts.iter().position(|&x| x == p).unwrap()], &s);
        assert!((again - &c).amax() < 1e-13);
    }

    fn edge_projection_errors(x0: f64) -> Vec<f64> {
        let g = |p: [f64; 2]| (PI * p[0]).sin();
        let fine = crate::fem::edge_rule(30).unwrap();
        let basis = crate::fem::make_basis(crate::fem::BasisKind::EdgeScalar, 1);
        let tables = ReferenceTables::new(1, 1, 4).unwrap();
        [4, 8, 16]
            .into_iter()
            .map(|n| {
                let mesh = build_structured_mesh(n, MeshPattern::RightSplit);
                let h = 1.0 / n as f64;
                let on_edge = |p: &[f64; 2]| p[1].abs() < 1e-14 && p[0] > x0 && p[0] < x0 + h;
                let (s, i) = (0..mesh.num_elements())
                    .flat_map(|t| (0..3).map(move |i| (t, i)))
                    .map(|(t, i)| (spaces(&mesh, t, &tables, 1.0), i))
                    .find(|(s, i)| s.geometry.edge_points[*i].iter().all(on_edge))
                    .unwrap();
                let c = l2_project_edge(&g, &s, i);
                let err2: f64 = fine
                    .points
                    .iter()
                    .zip(&fine.weights)
                    .map(|(t, w)| {
                        let ph = (basis.eval(&[[t[0], 0.0]]) * &c)[0];
                        w * h * (g([x0 + t[0] * h, 0.0]) - ph).powi(2)
                    })
                    .sum();
                err2.sqrt()
            })
            .collect()
    }

    #[test]
    fn edge_projection_converges_at_order_five_halves() {
        let orders = |e: Vec<f64>| e.windows(2).map(|w| (w[0] / w[1]).log2()).collect::<Vec<_>>();
        // g'' vanishes at the origin, so the first edge converges faster than the generic rate
        for o in orders(edge_projection_errors(0.0)) {
            assert!(o >= 2.5 - 0.1, "{o}");
        }
        for o in orders(edge_projection_errors(0.5)) {
            assert!((o - 2.5).abs() < 0.1, "{o}");
        }
    }

    #[test]
    fn decomposition_dimensions() {
        let mesh = reference();
        for (k, vs, vsbb) in [(0, 2, 0), (1, 5, 0), (2, 9, 1), (3, 14, 3)] {
            let tables = ReferenceTables::new(k, k, 2 * k + 2).unwrap();
            let s = spaces(&mesh, 0, &tables, 1.0);
            let dec = solenoidal_decomposition(&s).unwrap();
            assert_eq!((dec.vs.ncols(), dec.vsbb.ncols()), (vs, vsbb), "k={k}");
            assert_eq!(dec.vsbb.ncols() + dec.vsbb_perp.ncols(), 2 * s.nk());
            assert_eq!(dec.vs.ncols() + dec.vs_perp.ncols(), 2 * s.nk());
            assert_eq!(m_index(&s).unwrap(), 0);
            // V_sbb inside V_s
            let proj = &dec.vs * (dec.vs.transpose() * &dec.vsbb);
            assert!((proj - &dec.vsbb).amax() < 1e-10);
            // orthogonal to gradients of W
            assert!((gradient_pairing_matrix(&s) * &dec.vsbb).amax() < 1e-10);
        }
    }

    #[test]
    fn quadratic_bubble_is_curl_of_cubic_bubble() {
        let mesh = reference();
        let tables = ReferenceTables::new(2, 2, 8).unwrap();
        let s = spaces(&mesh, 0, &tables, 1.0);
        let dec = solenoidal_decomposition(&s).unwrap();
        // b = x y (1 - x - y), curl b = (b_y, -b_x)
        let curl = |p: [f64; 2]| {
            let [x, y] = p;
            [x * (1.0 - x - 2.0 * y), -y * (1.0 - 2.0 * x - y)]
        };
        let c = l2_project_vector(&curl, &s);
        let cos = (dec.vsbb.column(0).dot(&c) / c.norm()).abs();
        assert!((cos - 1.0).abs() < 1e-12);
    }

    #[test]
    fn in_space_pairs_are_reproduced() {
        let mesh = build_structured_mesh(2, MeshPattern::CrissCross);
        let tables = ReferenceTables::new(2, 2, 8).unwrap();
        let s = spaces(&mesh, 5, &tables, 1.0);
        let u = |p: [f64; 2]| 0.3 + p[0] * p[1] - p[1] * p[1];
        let q = |p: [f64; 2]| [p[0] - 2.0 * p[1] * p[1], 1.0 + p[0] * p[0]];
        let p = hdg_project(&q, &u, &s).unwrap();
        // Pi_V q is unique in the complement of the solenoidal bubbles.
        let pv = l2_project_vector(&q, &s);
        let sbb = solenoidal_decomposition(&s).unwrap().vsbb;
        let perp = &pv - &sbb * (sbb.transpose() * &pv);
        assert!((&p.q - perp).amax() < 1e-12);
        assert!((&p.u - l2_project_scalar(&u, &s)).amax() < 1e-12);

        let tables = ReferenceTables::new(1, 1, 6).unwrap();
        let s = spaces(&mesh, 5, &tables, 1.0);
        let u = |p: [f64; 2]| 0.3 + p[0] - p[1];
        let q = |p: [f64; 2]| [p[0] - 2.0 * p[1], 1.0 + p[0]];
        let p = hdg_project(&q, &u, &s).unwrap();
        assert!((&p.q - l2_project_vector(&q, &s)).amax() < 1e-12);
        assert!((&p.u - l2_project_scalar(&u, &s)).amax() < 1e-12);
    }

    #[test]
    fn reduced_path_matches_least_squares() {
        let mesh = reference();
        let tables = ReferenceTables::new(1, 1, 12).unwrap();
        let s = spaces(&mesh, 0, &tables, 1.0);
        let u = |p: [f64; 2]| p[0] * p[0] * p[1];
        let q = |p: [f64; 2]| [-2.0 * p[0] * p[1], -p[0] * p[0]];
        let a = hdg_project(&q, &u, &s).unwrap();
        let b = hdg_project_least_squares(&q, &u, &s).unwrap();
        assert!((&a.q - &b.q).amax() < 1e-10 && (&a.u - &b.u).amax() < 1e-10);
        for r in projection_residuals(&q, &u, &s, &a) {
            assert!(r < 1e-10);
        }
    }

    #[test]
    fn polynomial_data_bounds_vanish() {
        let mesh = build_structured_mesh(2, MeshPattern::RightSplit);
        let tables = ReferenceTables::new(1, 1, 6).unwrap();
        let s = spaces(&mesh, 1, &tables, 1.0);
        let b = hdg_project_bounds_check(&|p| [p[1], 2.0 - p[0]], &|p| 1.0 + p[0], &s).unwrap();
        assert!(b.delta_q < 1e-12 && b.delta_u < 1e-12 && b.bound_q < 1e-12 && b.bound_u < 1e-12);
        assert_eq!(b.ratios(), [0.0, 0.0]);
    }
    #[test]
    fn bound_ratios_stay_bounded_under_refinement() {
        let u = |p: [f64; 2]| (PI * p[0]).sin() * (PI * p[1]).sin();
        let q = |p: [f64; 2]| [-PI * (PI * p[0]).cos() * (PI * p[1]).sin(), -PI * (PI * p[0]).sin() * (PI * p[1]).cos()];
        let tables = ReferenceTables::new(1, 1, 10).unwrap();
        for tau in [1.0, 10.0] {
            let worst: Vec<[f64; 2]> = [4, 8, 16, 32]
                .into_iter()
                .map(|n| {
                    let mesh = build_structured_mesh(n, MeshPattern::RightSplit);
                    (0..mesh.num_elements()).fold([0.0f64; 2], |m, t| {
                        let r = hdg_project_bounds_check(&q, &u, &spaces(&mesh, t, &tables, tau)).unwrap().ratios();
                        [m[0].max(r[0]), m[1].max(r[1])]
                    })
                })
                .collect();
            for j in 0..2 {
                let seq: Vec<f64> = worst.iter().map(|w| w[j]).collect();
                let (lo, hi) = seq.iter().fold((f64::MAX, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
                assert!(lo > 0.0 && hi / lo <= 10.0, "tau={tau} {seq:?}");
                assert!(hi <= 1.0, "tau={tau} {seq:?}");
            }
        }
    }
}
