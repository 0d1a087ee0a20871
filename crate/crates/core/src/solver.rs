//! Direct solvers for the assembled systems and small spectral diagnostics.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use nalgebra::{DMatrix, DVector};

use crate::error::{HdgError, Result};
use crate::fem::{edge_rule, make_basis, BasisKind};
use crate::mesh::Mesh;

/// Systems up to this size are factorized densely by [`solve`].
pub const DENSE_LIMIT: usize = 400;

/// Square sparse system with merged entries (row-major order).
#[derive(Clone, Debug)]
pub struct LinearSystem {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
    pub rhs: DVector<f64>,
    pub symmetric: bool,
    pub spd_hint: bool,
}

impl LinearSystem {
    pub fn from_triplets(n: usize, mut entries: Vec<(usize, usize, f64)>, rhs: DVector<f64>) -> Self {
        assert_eq!(rhs.len(), n, "right-hand side length");
        entries.sort_unstable_by_key(|e| (e.0, e.1));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        Self { n, entries: merged, rhs, symmetric: false, spd_hint: false }
    }

    pub fn from_dense(matrix: &DMatrix<f64>, rhs: DVector<f64>) -> Self {
        assert!(matrix.is_square());
        let n = matrix.nrows();
        let entries = (0..n)
            .flat_map(|r| (0..n).map(move |c| (r, c)))
            .filter_map(|(r, c)| {
                let v = matrix[(r, c)];
                (v != 0.0).then_some((r, c, v))
            })
            .collect();
        Self::from_triplets(n, entries, rhs)
    }

    /// Declares the matrix symmetric (checked to `1e-12 max|A|`) and optionally SPD.
    pub fn with_hints(mut self, symmetric: bool, spd: bool) -> Result<Self> {
        if symmetric || spd {
            let asym = self.asymmetry();
            if asym > 1e-12 * self.max_abs() {
                return Err(HdgError::Config(format!("matrix declared symmetric has asymmetry {asym:e}")));
            }
        }
        self.symmetric = symmetric || spd;
        self.spd_hint = spd;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.2.abs()))
    }

    pub fn asymmetry(&self) -> f64 {
        let lookup = |r: usize, c: usize| {
            self.entries
                .binary_search_by_key(&(r, c), |e| (e.0, e.1))
                .map_or(0.0, |i| self.entries[i].2)
        };
        self.entries
            .iter()
            .map(|&(r, c, v)| (v - lookup(c, r)).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for &(r, c, v) in &self.entries {
            a[(r, c)] += v;
        }
        a
    }

    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.n);
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }

    pub fn relative_residual(&self, x: &DVector<f64>) -> f64 {
        let r = (self.matvec(x) - &self.rhs).norm();
        let b = self.rhs.norm();
        if b > 0.0 { r / b } else { r }
    }
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub x: DVector<f64>,
    pub relative_residual: f64,
}

fn finish(system: &LinearSystem, x: DVector<f64>, context: &str) -> Result<SolveOutcome> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(HdgError::Singular { context: context.into() });
    }
    let relative_residual = system.relative_residual(&x);
    Ok(SolveOutcome { x, relative_residual })
}

/// Dense factorization for small systems, sparse otherwise.
pub fn solve(system: &LinearSystem) -> Result<SolveOutcome> {
    if system.n() <= DENSE_LIMIT { solve_dense(system) } else { solve_sparse(system) }
}

/// Cholesky when SPD-hinted, LU with partial pivoting otherwise.
pub fn solve_dense(system: &LinearSystem) -> Result<SolveOutcome> {
    let a = system.to_dense();
    if system.n() == 0 {
        return Ok(SolveOutcome { x: DVector::zeros(0), relative_residual: 0.0 });
    }
    let x = if system.spd_hint {
        let chol = a.cholesky().ok_or_else(|| HdgError::NotPositiveDefinite { context: "dense Cholesky".into() })?;
        chol.solve(&system.rhs)
    } else {
        let scale = a.amax();
        let lu = a.lu();
        let min_pivot = lu.u().diagonal().iter().fold(f64::INFINITY, |m, d| m.min(d.abs()));
        if min_pivot.is_nan() || min_pivot <= 1e-14 * scale {
            return Err(HdgError::Singular { context: format!("dense LU pivot {min_pivot:e}") });
        }
        lu.solve(&system.rhs).ok_or_else(|| HdgError::Singular { context: "dense LU".into() })?
    };
    finish(system, x, "dense solve")
}

/// Sparse Cholesky when SPD-hinted, sparse LU otherwise.
pub fn solve_sparse(system: &LinearSystem) -> Result<SolveOutcome> {
    let n = system.n();
    if n == 0 {
        return Ok(SolveOutcome { x: DVector::zeros(0), relative_residual: 0.0 });
    }
    let triplets: Vec<Triplet<usize, usize, f64>> =
        system.entries.iter().map(|&(r, c, v)| Triplet::new(r, c, v)).collect();
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| HdgError::Singular { context: format!("sparse assembly: {e:?}") })?;
    let b = Mat::<f64>::from_fn(n, 1, |i, _| system.rhs[i]);
    let sol = if system.spd_hint {
        let chol = a
            .sp_cholesky(Side::Lower)
            .map_err(|_| HdgError::NotPositiveDefinite { context: "sparse Cholesky".into() })?;
        chol.solve(&b)
    } else {
        let lu = a.sp_lu().map_err(|e| HdgError::Singular { context: format!("sparse LU: {e:?}") })?;
        lu.solve(&b)
    };
    let x = DVector::from_fn(n, |i, _| sol[(i, 0)]);
    finish(system, x, "sparse solve")
}

pub fn smallest_singular_value(matrix: &DMatrix<f64>) -> f64 {
    if matrix.is_empty() {
        return 0.0;
    }
    matrix.singular_values().min()
}

/// Discrete inf-sup constant of the pairing `<r . n, w>` between single-valued
/// edge functions of degree `k` and piecewise constants, measured in
/// `||r . n||` over element boundaries and the jump norm over edges.
pub fn infsup_estimate(mesh: &Mesh, k: usize) -> Result<f64> {
    let nm = k + 1;
    let n_elem = mesh.num_elements();
    let n_edge = mesh.num_edges();
    let rule = edge_rule(2 * k + 2)?;
    let pts: Vec<[f64; 2]> = rule.points.iter().map(|t| [t[0], 0.0]).collect();
    let psi = make_basis(BasisKind::EdgeScalar, k).eval(&pts);
    let psi_int: Vec<f64> = (0..nm).map(|j| (0..pts.len()).map(|q| rule.weights[q] * psi[(q, j)]).sum()).collect();

    let mut b = DMatrix::zeros(n_edge * nm, n_elem);
    let mut nr_inv = DVector::zeros(n_edge * nm);
    let mut nw = DMatrix::zeros(n_elem, n_elem);
    for (e, edge) in mesh.edges().iter().enumerate() {
        let c = if edge.is_boundary() { 1.0 } else { 2.0 };
        let side: Vec<(usize, f64)> = std::iter::once((edge.left, 1.0))
            .chain(edge.right.map(|r| (r, -1.0)))
            .collect();
        for j in 0..nm {
            nr_inv[e * nm + j] = 1.0 / (c * edge.length);
            for &(t, s) in &side {
                b[(e * nm + j, t)] += s * edge.length * psi_int[j];
            }
        }
        for &(t, s) in &side {
            for &(t2, s2) in &side {
                nw[(t, t2)] += edge.length * s * s2;
            }
        }
    }
    let chol = nw.cholesky().ok_or(HdgError::DegenerateNorm)?;
    let l = chol.l();
    let linv = l.solve_lower_triangular(&DMatrix::identity(n_elem, n_elem)).ok_or(HdgError::DegenerateNorm)?;
    let scaled_b = DMatrix::from_diagonal(&nr_inv.map(f64::sqrt)) * b * linv.transpose();
    let gram = scaled_b.transpose() * &scaled_b;
    let lambda = gram.symmetric_eigenvalues().min();
    Ok(lambda.max(0.0).sqrt())
}
