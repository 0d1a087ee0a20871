//! Reference-element polynomial bases, quadrature rules and affine maps.
//!
//! The reference triangle is `{x, y >= 0, x + y <= 1}` and the reference
//! edge is `[0, 1]`. Bases are monomials orthonormalized through a Cholesky
//! factorization of their exact Gram matrix, so element mass matrices are
//! `|det B|` times the identity.

use nalgebra::{DMatrix, Matrix2};

use crate::error::{HdgError, Result};
use crate::mesh::Mesh;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisKind {
    TriangleScalar,
    EdgeScalar,
}

#[derive(Clone, Debug)]
pub struct ReferenceBasis {
    pub kind: BasisKind,
    pub degree: usize,
    exponents: Vec<[u32; 2]>,
    /// Row `i` holds the monomial coefficients of basis function `i`.
    coeffs: DMatrix<f64>,
}

pub fn triangle_dim(k: usize) -> usize {
    (k + 1) * (k + 2) / 2
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Exact integral of `x^a y^b` over the reference triangle.
pub fn triangle_monomial_integral(a: u32, b: u32) -> f64 {
    factorial(a) * factorial(b) / factorial(a + b + 2)
}

pub fn make_basis(kind: BasisKind, k: usize) -> ReferenceBasis {
    let exponents: Vec<[u32; 2]> = match kind {
        BasisKind::TriangleScalar => (0..=k as u32)
            .flat_map(|d| (0..=d).map(move |j| [d - j, j]))
            .collect(),
        BasisKind::EdgeScalar => (0..=k as u32).map(|d| [d, 0]).collect(),
    };
    let n = exponents.len();
    let gram = DMatrix::from_fn(n, n, |i, j| {
        let [a, b] = [exponents[i][0] + exponents[j][0], exponents[i][1] + exponents[j][1]];
        match kind {
            BasisKind::TriangleScalar => triangle_monomial_integral(a, b),
            BasisKind::EdgeScalar => 1.0 / f64::from(a + 1),
        }
    });
    let lower = gram.cholesky().expect("monomial Gram matrix is positive definite").unpack();
    let coeffs = lower
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .expect("Cholesky factor is invertible");
    let mut basis = ReferenceBasis { kind, degree: k, exponents, coeffs };
    // One reorthonormalization pass against the quadrature Gram matrix.
    let (points, weights): (Vec<[f64; 2]>, Vec<f64>) = match kind {
        BasisKind::TriangleScalar => {
            let r = triangle_rule(2 * k).expect("rule of degree 2k exists");
            (r.points, r.weights)
        }
        BasisKind::EdgeScalar => {
            let r = edge_rule(2 * k).expect("rule of degree 2k exists");
            (r.points.iter().map(|t| [t[0], 0.0]).collect(), r.weights)
        }
    };
    let vals = basis.eval(&points);
    let w = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(weights));
    let gram = vals.transpose() * w * &vals;
    let lower = gram.cholesky().expect("basis Gram matrix is positive definite").unpack();
    let correction = lower
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .expect("Cholesky factor is invertible");
    basis.coeffs = correction * basis.coeffs;
    basis
}

impl ReferenceBasis {
    pub fn dim(&self) -> usize {
        self.exponents.len()
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    /// Values, shape `(points, dim)`. Edge bases read only the first coordinate.
    pub fn eval(&self, points: &[[f64; 2]]) -> DMatrix<f64> {
        let mono = DMatrix::from_fn(points.len(), self.dim(), |p, m| {
            let [a, b] = self.exponents[m];
            points[p][0].powi(a as i32) * points[p][1].powi(b as i32)
        });
        mono * self.coeffs.transpose()
    }

    /// Reference gradients `[d/dx, d/dy]`, each of shape `(points, dim)`.
    pub fn eval_grad(&self, points: &[[f64; 2]]) -> [DMatrix<f64>; 2] {
        let deriv = |dir: usize| {
            let mono = DMatrix::from_fn(points.len(), self.dim(), |p, m| {
                let e = self.exponents[m];
                if e[dir] == 0 {
                    return 0.0;
                }
                let mut f = f64::from(e[dir]);
                for c in 0..2 {
                    let pow = if c == dir { e[c] - 1 } else { e[c] };
                    f *= points[p][c].powi(pow as i32);
                }
                f
            });
            mono * self.coeffs.transpose()
        };
        [deriv(0), deriv(1)]
    }
}

/// Quadrature on the reference triangle (`D = 2`) or edge (`D = 1`).
#[derive(Clone, Debug)]
pub struct QuadratureRule<const D: usize> {
    pub points: Vec<[f64; D]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

pub type TriangleRule = QuadratureRule<2>;
pub type EdgeRule = QuadratureRule<1>;

impl<const D: usize> QuadratureRule<D> {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

const MAX_GAUSS_POINTS: usize = 40;

/// Gauss-Legendre nodes and weights on `[0, 1]`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * z * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = 0.5 * (1.0 - z);
        w[i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

pub fn edge_rule(degree: usize) -> Result<EdgeRule> {
    let n = degree / 2 + 1;
    if n > MAX_GAUSS_POINTS {
        return Err(HdgError::UnsupportedQuadrature(degree));
    }
    let (x, w) = gauss_legendre(n);
    Ok(QuadratureRule { points: x.into_iter().map(|t| [t]).collect(), weights: w, degree })
}

/// Symmetric tabulated rules up to degree 5, collapsed Gauss product rule above.
pub fn triangle_rule(degree: usize) -> Result<TriangleRule> {
    let tab = |points: Vec<[f64; 2]>, weights: Vec<f64>| QuadratureRule { points, weights, degree };
    match degree {
        0 | 1 => Ok(tab(vec![[1.0 / 3.0, 1.0 / 3.0]], vec![0.5])),
        2 => Ok(tab(
            vec![[1.0 / 6.0, 1.0 / 6.0], [2.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 2.0 / 3.0]],
            vec![1.0 / 6.0; 3],
        )),
        3..=5 => {
            let s = 15f64.sqrt();
            let (a, b) = ((6.0 - s) / 21.0, (6.0 + s) / 21.0);
            let (wa, wb) = ((155.0 - s) / 2400.0, (155.0 + s) / 2400.0);
            Ok(tab(
                vec![
                    [1.0 / 3.0, 1.0 / 3.0],
                    [a, a],
                    [1.0 - 2.0 * a, a],
                    [a, 1.0 - 2.0 * a],
                    [b, b],
                    [1.0 - 2.0 * b, b],
                    [b, 1.0 - 2.0 * b],
                ],
                vec![9.0 / 80.0, wa, wa, wa, wb, wb, wb],
            ))
        }
        _ => {
            let nu = (degree + 2).div_ceil(2);
            let nv = (degree + 1).div_ceil(2);
            if nu > MAX_GAUSS_POINTS {
                return Err(HdgError::UnsupportedQuadrature(degree));
            }
            let (xu, wu) = gauss_legendre(nu);
            let (xv, wv) = gauss_legendre(nv);
            let mut points = Vec::with_capacity(nu * nv);
            let mut weights = Vec::with_capacity(nu * nv);
            for (u, wu) in xu.iter().zip(&wu) {
                for (v, wv) in xv.iter().zip(&wv) {
                    points.push([*u, v * (1.0 - u)]);
                    weights.push(wu * wv * (1.0 - u));
                }
            }
            Ok(tab(points, weights))
        }
    }
}

/// Affine map from the reference triangle onto a mesh element.
#[derive(Clone, Debug)]
pub struct AffineMap {
    pub jacobian: Matrix2<f64>,
    pub offset: [f64; 2],
    pub det_abs: f64,
    /// `B^{-T}`, mapping reference gradients to physical gradients.
    pub inv_transpose: Matrix2<f64>,
    pub edge_normals: [[f64; 2]; 3],
    pub edge_lengths: [f64; 3],
}

impl AffineMap {
    pub fn from_vertices(p: [[f64; 2]; 3]) -> Self {
        let jacobian = Matrix2::new(p[1][0] - p[0][0], p[2][0] - p[0][0], p[1][1] - p[0][1], p[2][1] - p[0][1]);
        let det = jacobian.determinant();
        let inv_transpose = jacobian.try_inverse().expect("non-degenerate element").transpose();
        let mut edge_normals = [[0.0; 2]; 3];
        let mut edge_lengths = [0.0; 3];
        for (i, [a, b]) in crate::mesh::LOCAL_EDGE_VERTICES.iter().enumerate() {
            let t = [p[*b][0] - p[*a][0], p[*b][1] - p[*a][1]];
            let len = t[0].hypot(t[1]);
            edge_lengths[i] = len;
            edge_normals[i] = [t[1] / len, -t[0] / len];
        }
        Self { jacobian, offset: p[0], det_abs: det.abs(), inv_transpose, edge_normals, edge_lengths }
    }

    pub fn for_element(mesh: &Mesh, element: usize) -> Self {
        Self::from_vertices(mesh.triangle_coords(element))
    }

    pub fn apply(&self, r: [f64; 2]) -> [f64; 2] {
        let b = &self.jacobian;
        [
            self.offset[0] + b[(0, 0)] * r[0] + b[(0, 1)] * r[1],
            self.offset[1] + b[(1, 0)] * r[0] + b[(1, 1)] * r[1],
        ]
    }

    /// Physical gradients from reference gradients (component-wise matrices).
    pub fn push_gradients(&self, reference: &[DMatrix<f64>; 2]) -> [DMatrix<f64>; 2] {
        let g = &self.inv_transpose;
        [
            &reference[0] * g[(0, 0)] + &reference[1] * g[(0, 1)],
            &reference[0] * g[(1, 0)] + &reference[1] * g[(1, 1)],
        ]
    }
}

/// Point on local edge `local` of the reference triangle at counter-clockwise
/// parameter `s` in `[0, 1]`.
pub fn reference_edge_point(local: usize, s: f64) -> [f64; 2] {
    match local {
        0 => [1.0 - s, s],
        1 => [0.0, 1.0 - s],
        _ => [s, 0.0],
    }
}

/// Basis values at quadrature points of the reference triangle and of its
/// edges, shared by every element with the same degrees.
#[derive(Clone, Debug)]
pub struct ReferenceTables {
    pub k: usize,
    pub kw: usize,
    pub volume_rule: TriangleRule,
    pub edge_rule: EdgeRule,
    pub basis_v: ReferenceBasis,
    pub basis_w: ReferenceBasis,
    pub basis_m: ReferenceBasis,
    pub vol_v: DMatrix<f64>,
    pub vol_v_grad: [DMatrix<f64>; 2],
    pub vol_w: DMatrix<f64>,
    pub vol_w_grad: [DMatrix<f64>; 2],
    /// Trace basis at the edge rule points (global edge parameter).
    pub edge_m: DMatrix<f64>,
    /// Indexed `[local edge][ascending as usize]`; rows follow the global
    /// edge parameter, so they line up with `edge_m`.
    pub edge_v: [[DMatrix<f64>; 2]; 3],
    pub edge_w: [[DMatrix<f64>; 2]; 3],
    pub edge_ref_points: [[Vec<[f64; 2]>; 2]; 3],
}

impl ReferenceTables {
    pub fn new(k: usize, kw: usize, quad_degree: usize) -> Result<Self> {
        let volume_rule = triangle_rule(quad_degree)?;
        let edge_rule = edge_rule(quad_degree)?;
        let basis_v = make_basis(BasisKind::TriangleScalar, k);
        let basis_w = make_basis(BasisKind::TriangleScalar, kw);
        let basis_m = make_basis(BasisKind::EdgeScalar, k);
        let vol_v = basis_v.eval(&volume_rule.points);
        let vol_v_grad = basis_v.eval_grad(&volume_rule.points);
        let vol_w = basis_w.eval(&volume_rule.points);
        let vol_w_grad = basis_w.eval_grad(&volume_rule.points);
        let ts: Vec<[f64; 2]> = edge_rule.points.iter().map(|t| [t[0], 0.0]).collect();
        let edge_m = basis_m.eval(&ts);
        let edge_ref_points: [[Vec<[f64; 2]>; 2]; 3] = std::array::from_fn(|i| {
            std::array::from_fn(|asc| {
                edge_rule
                    .points
                    .iter()
                    .map(|t| reference_edge_point(i, if asc == 1 { t[0] } else { 1.0 - t[0] }))
                    .collect()
            })
        });
        let edge_v = std::array::from_fn(|i| std::array::from_fn(|a| basis_v.eval(&edge_ref_points[i][a])));
        let edge_w = std::array::from_fn(|i| std::array::from_fn(|a| basis_w.eval(&edge_ref_points[i][a])));
        Ok(Self {
            k,
            kw,
            volume_rule,
            edge_rule,
            basis_v,
            basis_w,
            basis_m,
            vol_v,
            vol_v_grad,
            vol_w,
            vol_w_grad,
            edge_m,
            edge_v,
            edge_w,
            edge_ref_points,
        })
    }

    pub fn nk(&self) -> usize {
        self.basis_v.dim()
    }

    pub fn nw(&self) -> usize {
        self.basis_w.dim()
    }

    pub fn nm(&self) -> usize {
        self.basis_m.dim()
    }
}

/// Geometry of one element together with its physical quadrature data.
#[derive(Clone, Debug)]
pub struct ElementGeometry {
    pub element: usize,
    pub map: AffineMap,
    pub edges: [usize; 3],
    pub signs: [f64; 3],
    pub ascending: [bool; 3],
    pub volume_points: Vec<[f64; 2]>,
    pub volume_weights: Vec<f64>,
    /// Physical points of each local edge, ordered by global edge parameter.
    pub edge_points: [Vec<[f64; 2]>; 3],
    pub edge_weights: [Vec<f64>; 3],
    pub v_grad: [DMatrix<f64>; 2],
    pub w_grad: [DMatrix<f64>; 2],
}

impl ElementGeometry {
    pub fn new(mesh: &Mesh, element: usize, tables: &ReferenceTables) -> Self {
        let map = AffineMap::for_element(mesh, element);
        let volume_points = tables.volume_rule.points.iter().map(|&p| map.apply(p)).collect();
        let volume_weights = tables.volume_rule.weights.iter().map(|w| w * map.det_abs).collect();
        let ascending: [bool; 3] = std::array::from_fn(|i| mesh.local_edge_is_ascending(element, i));
        let edge_points = std::array::from_fn(|i| {
            tables.edge_ref_points[i][ascending[i] as usize]
                .iter()
                .map(|&p| map.apply(p))
                .collect()
        });
        let edge_weights =
            std::array::from_fn(|i| tables.edge_rule.weights.iter().map(|w| w * map.edge_lengths[i]).collect());
        let v_grad = map.push_gradients(&tables.vol_v_grad);
        let w_grad = map.push_gradients(&tables.vol_w_grad);
        Self {
            element,
            edges: mesh.element_edges(element),
            signs: mesh.element_signs(element),
            ascending,
            volume_points,
            volume_weights,
            edge_points,
            edge_weights,
            v_grad,
            w_grad,
            map,
        }
    }

    pub fn normal(&self, local: usize) -> [f64; 2] {
        self.map.edge_normals[local]
    }

    pub fn edge_v<'a>(&self, tables: &'a ReferenceTables, local: usize) -> &'a DMatrix<f64> {
        &tables.edge_v[local][self.ascending[local] as usize]
    }

    pub fn edge_w<'a>(&self, tables: &'a ReferenceTables, local: usize) -> &'a DMatrix<f64> {
        &tables.edge_w[local][self.ascending[local] as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;

    fn reference_gram(basis: &ReferenceBasis, rule: &TriangleRule) -> DMatrix<f64> {
        let vals = basis.eval(&rule.points);
        let w = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(rule.weights.clone()));
        vals.transpose() * w * vals
    }

    #[test]
    fn lowest_order_bases() {
        let b = make_basis(BasisKind::TriangleScalar, 0);
        let v = b.eval(&[[0.2, 0.3], [0.0, 1.0]]);
        assert!((v[(0, 0)] - 2f64.sqrt()).abs() < 1e-15 && (v[(1, 0)] - 2f64.sqrt()).abs() < 1e-15);
        let g = b.eval_grad(&[[0.2, 0.3]]);
        assert_eq!((g[0][(0, 0)], g[1][(0, 0)]), (0.0, 0.0));
        let e = make_basis(BasisKind::EdgeScalar, 0);
        assert!((e.eval(&[[0.7, 0.0]])[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bases_are_orthonormal() {
        for k in 0..=5 {
            let b = make_basis(BasisKind::TriangleScalar, k);
            assert_eq!(b.dim(), triangle_dim(k));
            let gram = reference_gram(&b, &triangle_rule(2 * k).unwrap());
            let err = (gram - DMatrix::identity(b.dim(), b.dim())).abs().max();
            assert!(err < 1e-12, "k={k} err={err}");

            let e = make_basis(BasisKind::EdgeScalar, k);
            let rule = edge_rule(2 * k).unwrap();
            let pts: Vec<[f64; 2]> = rule.points.iter().map(|t| [t[0], 0.0]).collect();
            let vals = e.eval(&pts);
            let w = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(rule.weights.clone()));
            let err = (vals.transpose() * w * vals - DMatrix::identity(k + 1, k + 1)).abs().max();
            assert!(err < 1e-12, "edge k={k} err={err}");
        }
    }

    #[test]
    fn coefficient_matrix_has_full_rank() {
        for k in 0..=4 {
            let b = make_basis(BasisKind::TriangleScalar, k);
            let sv = b.coefficients().clone().singular_values();
            assert!(sv.min() > 1e-10 * sv.max());
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let b = make_basis(BasisKind::TriangleScalar, 1);
        let step = 1e-6;
        for p in [[0.2, 0.3], [0.6, 0.1], [0.1, 0.1]] {
            let g = b.eval_grad(&[p]);
            for dir in 0..2 {
                let mut pp = p;
                let mut pm = p;
                pp[dir] += step;
                pm[dir] -= step;
                let fd = (b.eval(&[pp]) - b.eval(&[pm])) / (2.0 * step);
                for j in 0..b.dim() {
                    assert!((fd[(0, j)] - g[dir][(0, j)]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn evaluation_is_deterministic() {
        let b = make_basis(BasisKind::TriangleScalar, 4);
        let pts = [[0.123, 0.456], [0.3, 0.3]];
        assert_eq!(b.eval(&pts), b.eval(&pts));
    }

    #[test]
    fn quadrature_exactness() {
        for degree in 0..=20 {
            let rule = triangle_rule(degree).unwrap();
            let sum: f64 = rule.weights.iter().sum();
            assert!((sum - 0.5).abs() < 1e-14, "degree {degree}");
            for a in 0..=degree as u32 {
                for b in 0..=(degree as u32 - a) {
                    let q: f64 = rule
                        .points
                        .iter()
                        .zip(&rule.weights)
                        .map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32))
                        .sum();
                    let exact = triangle_monomial_integral(a, b);
                    assert!((q - exact).abs() <= 1e-13 * exact, "degree {degree} monomial ({a},{b})");
                }
            }
            let e = edge_rule(degree).unwrap();
            assert!((e.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            for a in 0..=degree as i32 {
                let q: f64 = e.points.iter().zip(&e.weights).map(|(p, w)| w * p[0].powi(a)).sum();
                assert!((q - 1.0 / f64::from(a + 1)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn quadrature_examples() {
        let r = triangle_rule(2).unwrap();
        let q: f64 = r.points.iter().zip(&r.weights).map(|(p, w)| w * p[0] * p[1]).sum();
        assert!((q - 1.0 / 24.0).abs() < 1e-15);
        let e = edge_rule(3).unwrap();
        let q: f64 = e.points.iter().zip(&e.weights).map(|(p, w)| w * p[0].powi(3)).sum();
        assert!((q - 0.25).abs() < 1e-15);
        let r = triangle_rule(8).unwrap();
        let q: f64 = r.points.iter().zip(&r.weights).map(|(p, w)| w * p[0].powi(4) * p[1].powi(4)).sum();
        let exact = 24.0 * 24.0 / 3_628_800.0;
        assert!((q - exact).abs() < 1e-13 * exact);
        assert!(matches!(triangle_rule(500), Err(HdgError::UnsupportedQuadrature(500))));
    }

    #[test]
    fn affine_map_examples() {
        let m = AffineMap::from_vertices([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(m.jacobian, Matrix2::identity());
        assert_eq!(m.det_abs, 1.0);
        let s = 0.5f64.sqrt();
        assert!((m.edge_normals[0][0] - s).abs() < 1e-15 && (m.edge_normals[0][1] - s).abs() < 1e-15);
        let h = 0.125;
        let m = AffineMap::from_vertices([[0.0, 0.0], [h, 0.0], [0.0, h]]);
        assert!((m.det_abs - h * h).abs() < 1e-16);
    }

    #[test]
    fn edge_points_lie_on_physical_edges() {
        let mesh = crate::mesh::build_structured_mesh(3, crate::mesh::MeshPattern::CrissCross);
        let tables = ReferenceTables::new(2, 2, 6).unwrap();
        for t in 0..mesh.num_elements() {
            let g = ElementGeometry::new(&mesh, t, &tables);
            assert!((g.map.det_abs - 2.0 * area(&mesh, t)).abs() < 1e-15);
            for i in 0..3 {
                let n = g.normal(i);
                assert!((n[0].hypot(n[1]) - 1.0).abs() < 1e-14);
                let edge = &mesh.edges()[g.edges[i]];
                let [a, b] = edge.vertices.map(|v| mesh.vertices()[v]);
                for (q, p) in g.edge_points[i].iter().enumerate() {
                    let t_param = tables.edge_rule.points[q][0];
                    let expect = [a[0] + t_param * (b[0] - a[0]), a[1] + t_param * (b[1] - a[1])];
                    assert!((p[0] - expect[0]).abs() < 1e-14 && (p[1] - expect[1]).abs() < 1e-14);
                }
            }
        }
    }

    fn area(mesh: &Mesh, t: usize) -> f64 {
        let [a, b, c] = mesh.triangle_coords(t);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }
}
