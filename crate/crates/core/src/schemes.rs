//! Element matrices of the unified HDG formulation, static condensation for
//! Dirichlet-, Neumann- and mixed-type hybridization, and recovery of the
//! element unknowns.
//!
//! Every element contributes one symmetric matrix over its local unknowns
//! `(q, u, t_0, t_1, t_2)`, where `t_i` are the hybrid coefficients on local
//! edge `i` in the global edge orientation. On a D edge `t_i` is the scalar
//! trace `u_hat` and `q_hat . n` is eliminated through
//! `q_hat . n = q . n + tau (u - u_hat)`; on an N edge `t_i` is `q_hat . n_e`
//! and `u_hat = u + (q . n - q_hat . n) / tau` is eliminated. With the
//! Lehrenfeld-Schoberl flux `u` is replaced by its edge projection `P_M u`
//! in the D-edge stabilization term. Row blocks are, in order: the `v`
//! equations, the `w` equations (multiplied by -1), and the transmission
//! conditions tested with the edge basis.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HdgError, Result};
use crate::fem::{ElementGeometry, ReferenceTables};
use crate::mesh::Mesh;
use crate::par::{self, Execution};
use crate::solver::{self, LinearSystem};

/// Scalar source term.
pub type Source<'a> = &'a (dyn Fn([f64; 2]) -> f64 + Sync);

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Method {
    Dirichlet,
    Neumann,
    Mixed,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Dirichlet => "dirichlet",
            Method::Neumann => "neumann",
            Method::Mixed => "mixed",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Stabilization {
    Standard,
    LehrenfeldSchoberl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum WDegree {
    Same,
    PlusOne,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum TauRule {
    Constant(f64),
    /// `c / h_e` with `h_e` the edge length.
    InverseH(f64),
}

impl TauRule {
    pub fn constant(self) -> f64 {
        match self {
            TauRule::Constant(c) | TauRule::InverseH(c) => c,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LabelingRule {
    Parity,
    Seeded(u64),
    AllD,
    AllN,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum EdgeLabel {
    /// Scalar trace `u_hat` is the single-valued unknown.
    D,
    /// Normal flux `q_hat . n` is the single-valued unknown.
    N,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct MethodConfig {
    pub method: Method,
    pub k: usize,
    pub w_degree: WDegree,
    pub stabilization: Stabilization,
    pub tau: TauRule,
    pub labeling: LabelingRule,
    /// Overrides the default quadrature degree `2 max(k, k_W) + 2`.
    pub quadrature_degree: Option<usize>,
    #[serde(skip)]
    pub execution: Execution,
}

impl MethodConfig {
    /// Equal degrees, standard stabilization, `tau = 1`.
    pub fn new(method: Method, k: usize) -> Self {
        let labeling = match method {
            Method::Dirichlet => LabelingRule::AllD,
            Method::Neumann => LabelingRule::AllN,
            Method::Mixed => LabelingRule::Parity,
        };
        Self {
            method,
            k,
            w_degree: WDegree::Same,
            stabilization: Stabilization::Standard,
            tau: TauRule::Constant(1.0),
            labeling,
            quadrature_degree: None,
            execution: Execution::default(),
        }
    }

    /// `W` of degree `k + 1`, Lehrenfeld-Schoberl flux, `tau = 1 / h_e`.
    pub fn lehrenfeld_schoberl(method: Method, k: usize) -> Self {
        Self {
            w_degree: WDegree::PlusOne,
            stabilization: Stabilization::LehrenfeldSchoberl,
            tau: TauRule::InverseH(1.0),
            ..Self::new(method, k)
        }
    }

    pub fn kw(&self) -> usize {
        match self.w_degree {
            WDegree::Same => self.k,
            WDegree::PlusOne => self.k + 1,
        }
    }

    pub fn quad_degree(&self) -> usize {
        self.quadrature_degree.unwrap_or(2 * self.k.max(self.kw()) + 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.w_degree == WDegree::PlusOne && self.stabilization != Stabilization::LehrenfeldSchoberl {
            return Err(HdgError::Config(
                "W of degree k+1 requires the Lehrenfeld-Schoberl stabilization".into(),
            ));
        }
        let c = self.tau.constant();
        if !c.is_finite() || c == 0.0 {
            return Err(HdgError::Config(format!("stabilization constant must be finite and nonzero, got {c}")));
        }
        match (self.method, self.labeling) {
            (Method::Dirichlet, LabelingRule::AllD) | (Method::Neumann, LabelingRule::AllN) | (Method::Mixed, _) => {
                Ok(())
            }
            (m, l) => Err(HdgError::Config(format!("labeling {l:?} is incompatible with the {} method", m.name()))),
        }
    }
}

/// Per-edge choice of hybrid unknown.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeLabeling {
    labels: Vec<EdgeLabel>,
}

impl EdgeLabeling {
    pub fn uniform(mesh: &Mesh, label: EdgeLabel) -> Self {
        Self { labels: vec![label; mesh.num_edges()] }
    }

    pub fn from_labels(labels: Vec<EdgeLabel>) -> Self {
        Self { labels }
    }

    /// Builds the labeling for `rule`. Parity and seeded labelings are
    /// repaired so every element keeps at least one edge of each kind.
    pub fn build(mesh: &Mesh, rule: LabelingRule) -> Result<Self> {
        let labels = match rule {
            LabelingRule::AllD => return Ok(Self::uniform(mesh, EdgeLabel::D)),
            LabelingRule::AllN => return Ok(Self::uniform(mesh, EdgeLabel::N)),
            LabelingRule::Parity => (0..mesh.num_edges())
                .map(|e| if e % 2 == 0 { EdgeLabel::D } else { EdgeLabel::N })
                .collect(),
            LabelingRule::Seeded(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..mesh.num_edges())
                    .map(|_| if rng.random_bool(0.5) { EdgeLabel::D } else { EdgeLabel::N })
                    .collect()
            }
        };
        let mut labeling = Self { labels };
        labeling.repair(mesh)?;
        Ok(labeling)
    }

    fn repair(&mut self, mesh: &Mesh) -> Result<()> {
        let count = |labels: &[EdgeLabel], t: usize, l: EdgeLabel| {
            mesh.element_edges(t).iter().filter(|&&e| labels[e] == l).count()
        };
        for _ in 0..64 {
            let mut changed = false;
            for t in 0..mesh.num_elements() {
                let edges = mesh.element_edges(t);
                let first = self.labels[edges[0]];
                if edges.iter().any(|&e| self.labels[e] != first) {
                    continue;
                }
                // Flip an edge whose other neighbour keeps a `first` edge afterwards.
                let pick = edges
                    .iter()
                    .copied()
                    .find(|&e| {
                        let edge = &mesh.edges()[e];
                        edge.elements()
                            .filter(|&o| o != t)
                            .all(|o| count(&self.labels, o, first) >= 2)
                    })
                    .unwrap_or(edges[0]);
                self.labels[pick] = match first {
                    EdgeLabel::D => EdgeLabel::N,
                    EdgeLabel::N => EdgeLabel::D,
                };
                changed = true;
            }
            if !changed {
                return Ok(());
            }
        }
        let t = (0..mesh.num_elements())
            .find(|&t| count(&self.labels, t, EdgeLabel::D) == 0 || count(&self.labels, t, EdgeLabel::N) == 0)
            .unwrap_or(0);
        Err(HdgError::Labeling { element: t, reason: "label repair did not converge".into() })
    }

    pub fn label(&self, edge: usize) -> EdgeLabel {
        self.labels[edge]
    }

    pub fn labels(&self) -> &[EdgeLabel] {
        &self.labels
    }

    /// Every element must have a D edge and an N edge.
    pub fn check_mixed(&self, mesh: &Mesh) -> Result<()> {
        for t in 0..mesh.num_elements() {
            let edges = mesh.element_edges(t);
            for (l, what) in [(EdgeLabel::D, "D"), (EdgeLabel::N, "N")] {
                if !edges.iter().any(|&e| self.labels[e] == l) {
                    return Err(HdgError::Labeling { element: t, reason: format!("no {what} edge") });
                }
            }
        }
        Ok(())
    }
}

/// Index layout of an element's local unknowns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LocalLayout {
    pub nk: usize,
    pub nw: usize,
    pub nm: usize,
}

impl LocalLayout {
    pub fn q(&self, c: usize, a: usize) -> usize {
        c * self.nk + a
    }

    pub fn u(&self, b: usize) -> usize {
        2 * self.nk + b
    }

    pub fn t(&self, i: usize, j: usize) -> usize {
        2 * self.nk + self.nw + i * self.nm + j
    }

    pub fn n_interior(&self) -> usize {
        2 * self.nk + self.nw
    }

    pub fn size(&self) -> usize {
        self.n_interior() + 3 * self.nm
    }
}

#[derive(Clone, Debug)]
pub struct ElementBlocks {
    pub layout: LocalLayout,
    pub matrix: DMatrix<f64>,
    pub load: DVector<f64>,
}

fn add_block(e: &mut DMatrix<f64>, at: (usize, usize), scale: f64, block: &DMatrix<f64>) {
    let mut view = e.view_mut(at, block.shape());
    view += block * scale;
}

/// Global numbering of the hybrid unknowns and per-element constants.
#[derive(Clone, Debug)]
pub struct TraceDofs {
    /// First dof of each edge; `None` for boundary D edges (trace fixed to 0).
    pub edge_offset: Vec<Option<usize>>,
    /// Element mean dof for elements without any D edge.
    pub mean_offset: Vec<Option<usize>>,
    pub n_trace: usize,
    pub n_total: usize,
}

/// A discretized problem: mesh, method configuration and derived data.
pub struct HdgProblem<'m> {
    pub mesh: &'m Mesh,
    pub config: MethodConfig,
    pub labeling: EdgeLabeling,
    pub tables: ReferenceTables,
    pub tau: Vec<f64>,
    pub dofs: TraceDofs,
    layout: LocalLayout,
}

impl<'m> HdgProblem<'m> {
    pub fn new(mesh: &'m Mesh, config: MethodConfig) -> Result<Self> {
        config.validate()?;
        let labeling = EdgeLabeling::build(mesh, config.labeling)?;
        Self::with_labeling(mesh, config, labeling)
    }

    pub fn with_labeling(mesh: &'m Mesh, config: MethodConfig, labeling: EdgeLabeling) -> Result<Self> {
        config.validate()?;
        if labeling.labels.len() != mesh.num_edges() {
            return Err(HdgError::Config("labeling does not cover every edge".into()));
        }
        let tables = ReferenceTables::new(config.k, config.kw(), config.quad_degree())?;
        let tau = mesh
            .edges()
            .iter()
            .map(|e| match config.tau {
                TauRule::Constant(c) => c,
                TauRule::InverseH(c) => c / e.length,
            })
            .collect();
        let nm = config.k + 1;
        let mut offset = 0;
        let edge_offset = mesh
            .edges()
            .iter()
            .enumerate()
            .map(|(e, edge)| {
                if labeling.label(e) == EdgeLabel::D && edge.is_boundary() {
                    None
                } else {
                    offset += nm;
                    Some(offset - nm)
                }
            })
            .collect();
        let n_trace = offset;
        let mean_offset = (0..mesh.num_elements())
            .map(|t| {
                let floating = mesh.element_edges(t).iter().all(|&e| labeling.label(e) == EdgeLabel::N);
                floating.then(|| {
                    offset += 1;
                    offset - 1
                })
            })
            .collect();
        let dofs = TraceDofs { edge_offset, mean_offset, n_trace, n_total: offset };
        let layout = LocalLayout { nk: tables.nk(), nw: tables.nw(), nm };
        Ok(Self { mesh, config, labeling, tables, tau, dofs, layout })
    }

    pub fn layout(&self) -> LocalLayout {
        self.layout
    }

    pub fn geometry(&self, element: usize) -> ElementGeometry {
        ElementGeometry::new(self.mesh, element, &self.tables)
    }

    fn is_ls(&self) -> bool {
        self.config.stabilization == Stabilization::LehrenfeldSchoberl
    }

    /// Checks that the local problem of every element with only D edges is
    /// a saddle point with positive-definite `(q, q)` block and negative-definite
    /// `u` Schur complement.
    pub fn check_local_definiteness(&self) -> Result<()> {
        let lay = self.layout;
        let (nq, nw) = (2 * lay.nk, lay.nw);
        let zero = |_: [f64; 2]| 0.0;
        for t in 0..self.mesh.num_elements() {
            let edges = self.mesh.element_edges(t);
            if edges.iter().any(|&e| self.labeling.label(e) == EdgeLabel::N) {
                continue;
            }
            let e = self.element_blocks(t, &zero).matrix;
            let fail = |what: &str| HdgError::NotPositiveDefinite { context: format!("local {what} block of element {t}") };
            let aqq = e.view((0, 0), (nq, nq)).into_owned().cholesky().ok_or_else(|| fail("(q,q)"))?;
            let aqu = e.view((0, nq), (nq, nw)).into_owned();
            let schur = aqu.transpose() * aqq.solve(&aqu) - e.view((nq, nq), (nw, nw));
            schur.cholesky().ok_or_else(|| fail("u Schur"))?;
        }
        Ok(())
    }

    /// Local matrix and load vector of the unified formulation on `element`.
    pub fn element_blocks(&self, element: usize, f: Source) -> ElementBlocks {
        let g = self.geometry(element);
        let tb = &self.tables;
        let lay = self.layout;
        let (nk, nw) = (lay.nk, lay.nw);
        let mut e = DMatrix::zeros(lay.size(), lay.size());
        let mut load = DVector::zeros(lay.size());

        let wd = DMatrix::from_diagonal(&DVector::from_column_slice(&g.volume_weights));
        let wphi = &wd * &tb.vol_v;
        let mass = tb.vol_v.transpose() * &wphi;
        for c in 0..2 {
            e.view_mut((c * nk, c * nk), (nk, nk)).copy_from(&mass);
            // v rows, u columns: -(w, d_c phi)
            let div_u = g.v_grad[c].transpose() * &wd * &tb.vol_w;
            add_block(&mut e, (lay.q(c, 0), lay.u(0)), -1.0, &div_u);
            // w rows, q columns: (phi, d_c w)
            let grad_w = g.w_grad[c].transpose() * &wphi;
            add_block(&mut e, (lay.u(0), lay.q(c, 0)), 1.0, &grad_w);
        }
        for (q, p) in g.volume_points.iter().enumerate() {
            let fw = f(*p) * g.volume_weights[q];
            for b in 0..nw {
                load[lay.u(b)] -= fw * tb.vol_w[(q, b)];
            }
        }

        for i in 0..3 {
            let edge = g.edges[i];
            let n = g.normal(i);
            let s = g.signs[i];
            let tau = self.tau[edge];
            let len = g.map.edge_lengths[i];
            let phi = g.edge_v(tb, i);
            let w = g.edge_w(tb, i);
            let psi = &tb.edge_m;
            let de = DMatrix::from_diagonal(&DVector::from_column_slice(&g.edge_weights[i]));
            let de_psi = &de * psi;
            let a_vm = phi.transpose() * &de_psi;
            let a_wm = w.transpose() * &de_psi;
            let a_mm = psi.transpose() * &de_psi;
            let (t0, u0) = (lay.t(i, 0), lay.u(0));
            match self.labeling.label(edge) {
                EdgeLabel::D => {
                    let a_vw = phi.transpose() * &de * w;
                    for c in 0..2 {
                        let q0 = lay.q(c, 0);
                        add_block(&mut e, (q0, t0), n[c], &a_vm);
                        add_block(&mut e, (t0, q0), n[c], &a_vm.transpose());
                        add_block(&mut e, (u0, q0), -n[c], &a_vw.transpose());
                    }
                    let a_uu = if self.is_ls() { &a_wm * a_wm.transpose() / len } else { w.transpose() * &de * w };
                    add_block(&mut e, (u0, u0), -tau, &a_uu);
                    add_block(&mut e, (u0, t0), tau, &a_wm);
                    add_block(&mut e, (t0, u0), tau, &a_wm.transpose());
                    add_block(&mut e, (t0, t0), -tau, &a_mm);
                }
                EdgeLabel::N => {
                    let a_vw = phi.transpose() * &de * w;
                    let a_vv = phi.transpose() * &de * phi;
                    for c in 0..2 {
                        let q0 = lay.q(c, 0);
                        add_block(&mut e, (q0, u0), n[c], &a_vw);
                        for c2 in 0..2 {
                            add_block(&mut e, (q0, lay.q(c2, 0)), n[c] * n[c2] / tau, &a_vv);
                        }
                        add_block(&mut e, (q0, t0), -s * n[c] / tau, &a_vm);
                        add_block(&mut e, (t0, q0), -s * n[c] / tau, &a_vm.transpose());
                    }
                    add_block(&mut e, (u0, t0), -s, &a_wm);
                    add_block(&mut e, (t0, u0), -s, &a_wm.transpose());
                    add_block(&mut e, (t0, t0), 1.0 / tau, &a_mm);
                }
            }
        }
        ElementBlocks { layout: lay, matrix: e, load }
    }

    /// Local indices of the element unknowns that stay global after
    /// condensation, paired with their global dof numbers.
    fn global_part(&self, element: usize) -> Vec<(usize, usize)> {
        let lay = self.layout;
        let mut out = Vec::with_capacity(3 * lay.nm + 1);
        if let Some(d) = self.dofs.mean_offset[element] {
            out.push((lay.u(0), d));
        }
        for (i, &e) in self.mesh.element_edges(element).iter().enumerate() {
            if let Some(off) = self.dofs.edge_offset[e] {
                out.extend((0..lay.nm).map(|j| (lay.t(i, j), off + j)));
            }
        }
        out
    }

    fn interior_part(&self, element: usize) -> Vec<usize> {
        let skip = self.dofs.mean_offset[element].map(|_| self.layout.u(0));
        (0..self.layout.n_interior()).filter(|&r| Some(r) != skip).collect()
    }

    fn condense_element(&self, element: usize, f: Source) -> Result<LocalElimination> {
        let blocks = self.element_blocks(element, f);
        let interior = self.interior_part(element);
        let global = self.global_part(element);
        let gl: Vec<usize> = global.iter().map(|p| p.0).collect();
        let pick = |rows: &[usize], cols: &[usize]| {
            DMatrix::from_fn(rows.len(), cols.len(), |r, c| blocks.matrix[(rows[r], cols[c])])
        };
        let e_ii = pick(&interior, &interior);
        let e_ig = pick(&interior, &gl);
        let e_gi = pick(&gl, &interior);
        let e_gg = pick(&gl, &gl);
        let f_i = DVector::from_fn(interior.len(), |r, _| blocks.load[interior[r]]);
        let f_g = DVector::from_fn(gl.len(), |r, _| blocks.load[gl[r]]);

        let scale = e_ii.amax();
        let lu = e_ii.lu();
        let min_pivot = lu.u().diagonal().iter().fold(f64::INFINITY, |m, d| m.min(d.abs()));
        if min_pivot.is_nan() || min_pivot <= 1e-13 * scale {
            return Err(HdgError::SingularLocal { element });
        }
        let x = lu.solve(&e_ig).ok_or(HdgError::SingularLocal { element })?;
        let y = lu.solve(&f_i).ok_or(HdgError::SingularLocal { element })?;
        let schur = e_gg - &e_gi * &x;
        let rhs = f_g - &e_gi * &y;
        Ok(LocalElimination {
            interior,
            global_local: gl,
            global_dofs: global.iter().map(|p| p.1).collect(),
            x,
            y,
            schur,
            rhs,
        })
    }

    /// Generic static condensation onto the hybrid unknowns (and element
    /// means of floating elements). The assembled operator is the negated
    /// Schur complement, which is symmetric positive definite for the
    /// Dirichlet-type method.
    pub fn condense(&self, f: Source) -> Result<CondensedSystem> {
        let locals = par::try_map_indexed(self.config.execution, self.mesh.num_elements(), |t| {
            self.condense_element(t, f)
        })?;
        let n = self.dofs.n_total;
        let mut entries = Vec::new();
        let mut rhs = DVector::zeros(n);
        for loc in &locals {
            for (r, &gr) in loc.global_dofs.iter().enumerate() {
                rhs[gr] -= loc.rhs[r];
                for (c, &gc) in loc.global_dofs.iter().enumerate() {
                    entries.push((gr, gc, -loc.schur[(r, c)]));
                }
            }
        }
        let spd = self.dofs.mean_offset.iter().all(Option::is_none)
            && self.labeling.labels.iter().all(|&l| l == EdgeLabel::D);
        let system = LinearSystem::from_triplets(n, entries, rhs).with_hints(true, spd)?;
        Ok(CondensedSystem { system, locals })
    }

    /// All element and hybrid unknowns in one system (the reference path for
    /// the condensed solvers).
    pub fn assemble_monolithic(&self, f: Source) -> Result<MonolithicSystem> {
        let lay = self.layout;
        let n_int = lay.n_interior();
        let n_elem = self.mesh.num_elements();
        let offset = n_elem * n_int;
        let n = offset + self.dofs.n_trace;
        let blocks = par::map_indexed(self.config.execution, n_elem, |t| self.element_blocks(t, f));
        let mut entries = Vec::new();
        let mut rhs = DVector::zeros(n);
        for (t, b) in blocks.iter().enumerate() {
            let mut map: Vec<Option<usize>> = (0..n_int).map(|r| Some(t * n_int + r)).collect();
            for &e in &self.mesh.element_edges(t) {
                let off = self.dofs.edge_offset[e];
                map.extend((0..lay.nm).map(|j| off.map(|o| offset + o + j)));
            }
            // local edge order must follow element_edges
            for (r, gr) in map.iter().enumerate() {
                let Some(gr) = *gr else { continue };
                rhs[gr] += b.load[r];
                for (c, gc) in map.iter().enumerate() {
                    if let Some(gc) = *gc {
                        let v = b.matrix[(r, c)];
                        if v != 0.0 {
                            entries.push((gr, gc, v));
                        }
                    }
                }
            }
        }
        let system = LinearSystem::from_triplets(n, entries, rhs).with_hints(true, false)?;
        Ok(MonolithicSystem { system, n_interior: n_int, trace_offset: offset })
    }

    /// Element unknowns from the condensed solution.
    pub fn recover_interior(&self, condensed: &CondensedSystem, global: &DVector<f64>) -> HdgSolution {
        let lay = self.layout;
        let per_element = par::map_indexed(self.config.execution, self.mesh.num_elements(), |t| {
            let loc = &condensed.locals[t];
            let tg = DVector::from_fn(loc.global_dofs.len(), |r, _| global[loc.global_dofs[r]]);
            let xi = &loc.y - &loc.x * &tg;
            let mut full = DVector::zeros(lay.n_interior());
            for (r, &li) in loc.interior.iter().enumerate() {
                full[li] = xi[r];
            }
            for (r, &li) in loc.global_local.iter().enumerate() {
                if li < lay.n_interior() {
                    full[li] = tg[r];
                }
            }
            full
        });
        let traces = self.edge_traces(|dof| global[dof]);
        self.assemble_solution(per_element, traces)
    }

    fn edge_traces(&self, value: impl Fn(usize) -> f64) -> Vec<DVector<f64>> {
        let nm = self.layout.nm;
        self.dofs
            .edge_offset
            .iter()
            .map(|off| match off {
                Some(o) => DVector::from_fn(nm, |j, _| value(o + j)),
                None => DVector::zeros(nm),
            })
            .collect()
    }

    fn assemble_solution(&self, interior: Vec<DVector<f64>>, traces: Vec<DVector<f64>>) -> HdgSolution {
        let lay = self.layout;
        let mut q = Vec::with_capacity(interior.len());
        let mut u = Vec::with_capacity(interior.len());
        for x in &interior {
            q.push(x.rows(0, 2 * lay.nk).into_owned());
            u.push(x.rows(2 * lay.nk, lay.nw).into_owned());
        }
        let mut sol = HdgSolution {
            q,
            u,
            traces,
            uhat: Vec::new(),
            qhatn: Vec::new(),
        };
        let sides = par::map_indexed(self.config.execution, self.mesh.num_elements(), |t| {
            self.derived_traces(&sol, t)
        });
        for (uh, qh) in sides {
            sol.uhat.push(uh);
            sol.qhatn.push(qh);
        }
        sol
    }

    /// Values at the edge quadrature points of local edge `i`:
    /// `(q . n, u or P_M u, u_hat, q_hat . n)` computed from the flux relation.
    pub fn side_values(&self, sol: &HdgSolution, g: &ElementGeometry, i: usize) -> SideValues {
        let tb = &self.tables;
        let t = g.element;
        let edge = g.edges[i];
        let n = g.normal(i);
        let nk = self.layout.nk;
        let tau = self.tau[edge];
        let phi = g.edge_v(tb, i);
        let w = g.edge_w(tb, i);
        let psi = &tb.edge_m;
        let qx = sol.q[t].rows(0, nk);
        let qy = sol.q[t].rows(nk, nk);
        let qn = (phi * qx) * n[0] + (phi * qy) * n[1];
        let u_trace = w * &sol.u[t];
        let u_stab = if self.is_ls() {
            let len = g.map.edge_lengths[i];
            let de = DVector::from_column_slice(&g.edge_weights[i]);
            let coef = psi.transpose() * u_trace.component_mul(&de) / len;
            psi * coef
        } else {
            u_trace
        };
        let hybrid = psi * &sol.traces[edge];
        let (uhat, qhatn) = match self.labeling.label(edge) {
            EdgeLabel::D => {
                let qh = &qn + (&u_stab - &hybrid) * tau;
                (hybrid, qh)
            }
            EdgeLabel::N => {
                let qh = hybrid * g.signs[i];
                let uh = &u_stab + (&qn - &qh) / tau;
                (uh, qh)
            }
        };
        SideValues { qn, u_stab, uhat, qhatn, tau }
    }

    fn derived_traces(&self, sol: &HdgSolution, t: usize) -> ([DVector<f64>; 3], [DVector<f64>; 3]) {
        let g = self.geometry(t);
        let psi = &self.tables.edge_m;
        let mut uh: [DVector<f64>; 3] = Default::default();
        let mut qh: [DVector<f64>; 3] = Default::default();
        for i in 0..3 {
            let sv = self.side_values(sol, &g, i);
            let de = DVector::from_column_slice(&g.edge_weights[i]);
            let len = g.map.edge_lengths[i];
            uh[i] = psi.transpose() * sv.uhat.component_mul(&de) / len;
            qh[i] = psi.transpose() * sv.qhatn.component_mul(&de) / len;
        }
        (uh, qh)
    }

    /// Condense, solve and recover in one call.
    pub fn solve(&self, f: Source) -> Result<HdgSolution> {
        let condensed = self.condense(f)?;
        let out = solver::solve(&condensed.system)?;
        Ok(self.recover_interior(&condensed, &out.x))
    }

    /// Solves the monolithic system and converts it into an [`HdgSolution`].
    pub fn solve_monolithic(&self, f: Source) -> Result<HdgSolution> {
        let mono = self.assemble_monolithic(f)?;
        let out = solver::solve(&mono.system)?;
        Ok(self.solution_from_monolithic(&mono, &out.x))
    }

    pub fn solution_from_monolithic(&self, mono: &MonolithicSystem, x: &DVector<f64>) -> HdgSolution {
        let n_int = mono.n_interior;
        let interior = (0..self.mesh.num_elements())
            .map(|t| x.rows(t * n_int, n_int).into_owned())
            .collect();
        let traces = self.edge_traces(|dof| x[mono.trace_offset + dof]);
        self.assemble_solution(interior, traces)
    }
}

/// Edge quadrature values on one element side.
#[derive(Clone, Debug)]
pub struct SideValues {
    pub qn: DVector<f64>,
    /// `u` for the standard flux, `P_M u` for the Lehrenfeld-Schoberl flux.
    pub u_stab: DVector<f64>,
    pub uhat: DVector<f64>,
    pub qhatn: DVector<f64>,
    pub tau: f64,
}

#[derive(Clone, Debug)]
pub struct LocalElimination {
    pub interior: Vec<usize>,
    pub global_local: Vec<usize>,
    pub global_dofs: Vec<usize>,
    x: DMatrix<f64>,
    y: DVector<f64>,
    pub schur: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct CondensedSystem {
    pub system: LinearSystem,
    pub locals: Vec<LocalElimination>,
}

#[derive(Clone, Debug)]
pub struct MonolithicSystem {
    pub system: LinearSystem,
    pub n_interior: usize,
    pub trace_offset: usize,
}

/// Discrete solution: element coefficients and hybrid traces.
#[derive(Clone, Debug)]
pub struct HdgSolution {
    /// Per element, `[q_x; q_y]` over the `P_k` basis.
    pub q: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    /// Per edge: `u_hat` on D edges (zero on the boundary), `q_hat . n_e` on N edges.
    pub traces: Vec<DVector<f64>>,
    /// Per element side, the scalar trace over the edge basis (global parameter).
    pub uhat: Vec<[DVector<f64>; 3]>,
    /// Per element side, the outward numerical flux over the edge basis.
    pub qhatn: Vec<[DVector<f64>; 3]>,
}

impl HdgSolution {
    pub fn max_abs_coefficient(&self) -> f64 {
        let m = |v: &[DVector<f64>]| v.iter().map(|x| x.amax()).fold(0.0, f64::max);
        m(&self.q).max(m(&self.u)).max(m(&self.traces))
    }
}

fn require(problem: &HdgProblem, method: Method) -> Result<()> {
    if problem.config.method != method {
        return Err(HdgError::Config(format!(
            "{} condensation requested for a {} configuration",
            method.name(),
            problem.config.method.name()
        )));
    }
    Ok(())
}

/// Global SPD system in the interior-edge scalar traces.
pub fn condense_dirichlet(problem: &HdgProblem, f: Source) -> Result<CondensedSystem> {
    require(problem, Method::Dirichlet)?;
    problem.condense(f)
}

/// Global symmetric system in the edge fluxes and element means.
pub fn condense_neumann(problem: &HdgProblem, f: Source) -> Result<CondensedSystem> {
    require(problem, Method::Neumann)?;
    problem.condense(f)
}

/// Global system in D-edge traces and N-edge fluxes. Every element needs a
/// D and an N edge unless the labeling contains no N edge at all.
pub fn condense_mixed(problem: &HdgProblem, f: Source) -> Result<CondensedSystem> {
    require(problem, Method::Mixed)?;
    if problem.labeling.labels().contains(&EdgeLabel::N) {
        problem.labeling.check_mixed(problem.mesh)?;
    }
    problem.condense(f)
}
