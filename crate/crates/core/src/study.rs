//! Refinement studies, table output and the built-in verification suite.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{HdgError, Result};
use crate::mesh::{build_structured_mesh, import_mesh, mesh_stats, Mesh, MeshPattern};
use crate::par::Execution;
use crate::schemes::{
    condense_dirichlet, condense_mixed, condense_neumann, HdgProblem, HdgSolution, LabelingRule, Method,
    MethodConfig, Stabilization, TauRule, WDegree,
};
use crate::solver::{self, infsup_estimate};
use crate::verify::{self, ConvergenceReport, ReportRow};

/// Exact solution `u`, flux `q = -grad u` and source `f = div q`.
#[derive(Clone, Debug, PartialEq)]
pub struct ManufacturedSolution {
    pub id: String,
    kind: SolutionKind,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum SolutionKind {
    Sine,
    /// `x(1-x)y(1-y)` times a monomial factor of the given degree.
    Bubble(u32),
    /// Zero source, errors measured against the sine solution.
    ZeroSource,
}

pub const SOLUTION_IDS: &[&str] = &["paper", "patch", "patch-4", "patch-5", "patch-6", "zero-rhs"];

impl ManufacturedSolution {
    pub fn from_id(id: &str) -> Result<Self> {
        let kind = match id {
            "paper" => SolutionKind::Sine,
            "zero-rhs" => SolutionKind::ZeroSource,
            "patch" | "patch-4" => SolutionKind::Bubble(0),
            "patch-5" => SolutionKind::Bubble(1),
            "patch-6" => SolutionKind::Bubble(2),
            _ => {
                return Err(HdgError::Config(format!(
                    "unknown solution id '{id}', expected one of {}",
                    SOLUTION_IDS.join(", ")
                )))
            }
        };
        Ok(Self { id: id.to_string(), kind })
    }

    /// Whether `u` solves the problem with source `f`.
    pub fn consistent(&self) -> bool {
        self.kind != SolutionKind::ZeroSource
    }

    /// Polynomial degree of `u`, `None` if not a polynomial.
    pub fn degree(&self) -> Option<usize> {
        match self.kind {
            SolutionKind::Bubble(m) => Some(4 + m as usize),
            _ => None,
        }
    }

    /// Factor `m` with gradient and Laplacian.
    fn factor(m: u32, [x, y]: [f64; 2]) -> (f64, [f64; 2], f64) {
        match m {
            0 => (1.0, [0.0, 0.0], 0.0),
            1 => (x + 2.0 * y, [1.0, 2.0], 0.0),
            _ => (x * x + x * y, [2.0 * x + y, x], 2.0),
        }
    }

    fn bubble([x, y]: [f64; 2]) -> (f64, [f64; 2], f64) {
        let (bx, by) = (x * (1.0 - x), y * (1.0 - y));
        (bx * by, [(1.0 - 2.0 * x) * by, bx * (1.0 - 2.0 * y)], -2.0 * (by + bx))
    }

    pub fn u(&self, p: [f64; 2]) -> f64 {
        match self.kind {
            SolutionKind::Sine | SolutionKind::ZeroSource => (PI * p[0]).sin() * (PI * p[1]).sin(),
            SolutionKind::Bubble(m) => Self::bubble(p).0 * Self::factor(m, p).0,
        }
    }

    pub fn q(&self, p: [f64; 2]) -> [f64; 2] {
        match self.kind {
            SolutionKind::Sine | SolutionKind::ZeroSource => [
                -PI * (PI * p[0]).cos() * (PI * p[1]).sin(),
                -PI * (PI * p[0]).sin() * (PI * p[1]).cos(),
            ],
            SolutionKind::Bubble(m) => {
                let (b, gb, _) = Self::bubble(p);
                let (f, gf, _) = Self::factor(m, p);
                [-(gb[0] * f + b * gf[0]), -(gb[1] * f + b * gf[1])]
            }
        }
    }

    pub fn f(&self, p: [f64; 2]) -> f64 {
        match self.kind {
            SolutionKind::Sine => 2.0 * PI * PI * (PI * p[0]).sin() * (PI * p[1]).sin(),
            SolutionKind::ZeroSource => 0.0,
            SolutionKind::Bubble(m) => {
                let (b, gb, lb) = Self::bubble(p);
                let (f, gf, lf) = Self::factor(m, p);
                -(lb * f + 2.0 * (gb[0] * gf[0] + gb[1] * gf[1]) + b * lf)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MeshSource {
    Structured(MeshPattern),
    /// Triangle-format files `PATH.node` and `PATH.ele`.
    File(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Markdown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TauKind {
    Constant,
    InverseH,
}

#[derive(Clone, Debug)]
pub struct StudyConfig {
    pub method: Method,
    pub k: usize,
    pub w_degree: WDegree,
    pub stabilization: Stabilization,
    pub tau: f64,
    pub tau_kind: TauKind,
    pub mesh: MeshSource,
    pub refinements: Vec<usize>,
    pub solution: String,
    pub labeling: Option<LabelingRule>,
    pub checks: bool,
    pub execution: Execution,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            method: Method::Dirichlet,
            k: 1,
            w_degree: WDegree::Same,
            stabilization: Stabilization::Standard,
            tau: 1.0,
            tau_kind: TauKind::Constant,
            mesh: MeshSource::Structured(MeshPattern::RightSplit),
            refinements: vec![4, 8, 16, 32],
            solution: "paper".into(),
            labeling: None,
            checks: true,
            execution: Execution::default(),
        }
    }
}

impl StudyConfig {
    pub fn method_config(&self) -> MethodConfig {
        let mut c = MethodConfig::new(self.method, self.k);
        c.w_degree = self.w_degree;
        c.stabilization = self.stabilization;
        c.tau = match self.tau_kind {
            TauKind::Constant => TauRule::Constant(self.tau),
            TauKind::InverseH => TauRule::InverseH(self.tau),
        };
        if let Some(l) = self.labeling {
            c.labeling = l;
        }
        c.execution = self.execution;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.method_config().validate()?;
        ManufacturedSolution::from_id(&self.solution)?;
        if self.refinements.windows(2).any(|w| w[0] >= w[1]) {
            return Err(HdgError::Config("refinement list must be strictly increasing".into()));
        }
        if self.refinements.contains(&0) {
            return Err(HdgError::Config("refinement levels must be positive".into()));
        }
        Ok(())
    }

    fn meshes(&self) -> Result<Vec<(Option<usize>, Mesh)>> {
        match &self.mesh {
            MeshSource::Structured(p) => Ok(self.refinements.iter().map(|&n| (Some(n), build_structured_mesh(n, *p))).collect()),
            MeshSource::File(path) => {
                let read = |ext: &str| {
                    let p = path.with_extension(ext);
                    std::fs::read_to_string(&p).map_err(|e| HdgError::Parse(format!("{}: {e}", p.display())))
                };
                Ok(vec![(None, import_mesh(&read("node")?, &read("ele")?)?)])
            }
        }
    }
}

/// Named pass/fail outcome of one check.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn bound(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self { name: name.into(), passed: value <= limit, detail: format!("{value:.3e} <= {limit:.0e}") }
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct StudyOutcome {
    pub report: ConvergenceReport,
    pub checks: Vec<CheckResult>,
}

impl StudyOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Condenses with the method-specific entry point, solves and recovers.
pub fn solve_problem(problem: &HdgProblem, f: crate::schemes::Source) -> Result<(HdgSolution, f64)> {
    let condensed = match problem.config.method {
        Method::Dirichlet => condense_dirichlet(problem, f)?,
        Method::Neumann => condense_neumann(problem, f)?,
        Method::Mixed => condense_mixed(problem, f)?,
    };
    let out = solver::solve(&condensed.system)?;
    Ok((problem.recover_interior(&condensed, &out.x), out.relative_residual))
}

pub const IDENTITY_TOLERANCE: f64 = 1e-10;
pub const COROLLARY_SLACK: f64 = 1e-6;

/// One row of a study on a given mesh.
pub fn study_row(mesh: &Mesh, inv_h: Option<usize>, config: &MethodConfig, sol_id: &ManufacturedSolution) -> Result<ReportRow> {
    let problem = HdgProblem::new(mesh, config.clone())?;
    let f = |p: [f64; 2]| sol_id.f(p);
    let u = |p: [f64; 2]| sol_id.u(p);
    let q = |p: [f64; 2]| sol_id.q(p);
    let (sol, solve_resid) = solve_problem(&problem, &f)?;
    let tables = verify::error_tables(&problem)?;
    let err_q = verify::l2_error_vector(mesh, &tables, &sol.q, &q);
    let err_u = verify::l2_error_scalar(mesh, &tables, &sol.u, &u);
    let (err_piwu, err_q_piv) = if config.kw() == config.k {
        let p = verify::projection_error_checks(&problem, &sol, &q, &u)?;
        (Some(p.piw_u_minus_uh), Some(p.q_minus_piv_q))
    } else {
        (None, None)
    };
    let h = mesh_stats(mesh).h;
    Ok(ReportRow {
        inv_h: inv_h.map_or(1.0 / h, |n| n as f64),
        h,
        err_q,
        err_u,
        err_piwu,
        err_q_piv,
        energy_resid: verify::energy_identity_residual(&problem, &sol, &f),
        flux_resid: verify::flux_residual(&problem, &sol),
        transmission_resid: verify::transmission_residual(&problem, &sol),
        solve_resid,
    })
}

fn row_checks(row: &ReportRow, consistent: bool) -> Vec<CheckResult> {
    let n = format!("1/h={}", g6(row.inv_h));
    let mut out = vec![
        CheckResult::bound(format!("energy-identity {n}"), row.energy_resid, IDENTITY_TOLERANCE),
        CheckResult::bound(format!("flux-residual {n}"), row.flux_resid, IDENTITY_TOLERANCE),
        CheckResult::bound(format!("transmission {n}"), row.transmission_resid, IDENTITY_TOLERANCE),
        CheckResult::bound(format!("solve-residual {n}"), row.solve_resid, IDENTITY_TOLERANCE),
    ];
    if let (Some(piv), true) = (row.err_q_piv, consistent) {
        let ratio = if piv > 0.0 { row.err_q / piv } else { 0.0 };
        out.push(CheckResult::bound(format!("corollary {n}"), ratio, 2.0 + COROLLARY_SLACK));
    }
    out
}

pub fn run_study(config: &StudyConfig) -> Result<StudyOutcome> {
    config.validate()?;
    let mc = config.method_config();
    let sol = ManufacturedSolution::from_id(&config.solution)?;
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for (n, mesh) in config.meshes()? {
        let row = study_row(&mesh, n, &mc, &sol)?;
        if config.checks {
            checks.extend(row_checks(&row, sol.consistent()));
        }
        rows.push(row);
    }
    let report = ConvergenceReport {
        method: mc.method.name().into(),
        k: mc.k,
        kw: mc.kw(),
        stab: match mc.stabilization {
            Stabilization::Standard => "standard".into(),
            Stabilization::LehrenfeldSchoberl => "ls".into(),
        },
        tau: match config.tau_kind {
            TauKind::Constant => g6(config.tau),
            TauKind::InverseH => format!("{}/h", g6(config.tau)),
        },
        rows,
    };
    Ok(StudyOutcome { report, checks })
}

/// `%g`-style formatting with 6 significant digits.
pub fn g6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let trim = |s: String| {
        if s.contains('.') { s.trim_end_matches('0').trim_end_matches('.').to_string() } else { s }
    };
    let sci = format!("{x:.5e}");
    let (mant, e) = sci.split_once('e').expect("scientific format");
    let sci_exp: i32 = e.parse().expect("integer exponent");
    if !(-5..6).contains(&sci_exp) {
        format!("{}e{}{:02}", trim(mant.to_string()), if sci_exp < 0 { '-' } else { '+' }, sci_exp.abs())
    } else {
        trim(format!("{x:.*}", (5 - sci_exp).max(0) as usize))
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or("--".into(), g6)
}

pub const CSV_HEADER: &str =
    "method,k,kW,stab,tau,inv_h,err_q,ord_q,err_u,ord_u,err_piwu,ord_piwu,energy_resid,flux_resid";

pub fn emit(report: &ConvergenceReport, format: Format) -> String {
    let (oq, ou, op) = (report.orders_q(), report.orders_u(), report.orders_piwu());
    let mut out = String::new();
    match format {
        Format::Csv => {
            out.push_str(CSV_HEADER);
            out.push('\n');
            for (i, r) in report.rows.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    report.method,
                    report.k,
                    report.kw,
                    report.stab,
                    report.tau,
                    g6(r.inv_h),
                    g6(r.err_q),
                    opt(oq[i]),
                    g6(r.err_u),
                    opt(ou[i]),
                    opt(r.err_piwu),
                    opt(op[i]),
                    g6(r.energy_resid),
                    g6(r.flux_resid),
                );
            }
        }
        Format::Markdown => {
            let _ = writeln!(
                out,
                "**{}**, k = {}, k_W = {}, {} stabilization, tau = {}\n",
                report.method, report.k, report.kw, report.stab, report.tau
            );
            out.push_str("| 1/h | ‖q − q_h‖ | Order | ‖u − u_h‖ | Order | ‖Π_W u − u_h‖ | Order |\n");
            out.push_str("|---:|---:|---:|---:|---:|---:|---:|\n");
            for (i, r) in report.rows.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} | {} | {} |",
                    g6(r.inv_h),
                    g6(r.err_q),
                    opt(oq[i]),
                    g6(r.err_u),
                    opt(ou[i]),
                    opt(r.err_piwu),
                    opt(op[i]),
                );
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct SuiteConfig {
    pub tau: f64,
    pub execution: Execution,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { tau: 1.0, execution: Execution::default() }
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct SuiteReport {
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn guarded(name: String, run: impl FnOnce() -> Result<CheckResult>) -> CheckResult {
    run().unwrap_or_else(|e| CheckResult { name, passed: false, detail: e.to_string() })
}

/// Small-mesh checks (n <= 4) of every discrete identity and structural property.
pub fn run_verification_suite(config: &SuiteConfig) -> SuiteReport {
    let sol = ManufacturedSolution::from_id("paper").expect("registered");
    let f = |p: [f64; 2]| sol.f(p);
    let q = |p: [f64; 2]| sol.q(p);
    let u = |p: [f64; 2]| sol.u(p);
    let cfg = |method: Method, k: usize, ls: bool| {
        let mut c = if ls { MethodConfig::lehrenfeld_schoberl(method, k) } else { MethodConfig::new(method, k) };
        c.tau = match c.tau {
            TauRule::Constant(_) => TauRule::Constant(config.tau),
            TauRule::InverseH(_) => TauRule::InverseH(config.tau),
        };
        c.execution = config.execution;
        c
    };
    let methods = [Method::Dirichlet, Method::Neumann, Method::Mixed];
    let mut checks = Vec::new();

    for method in methods {
        for k in [1, 2] {
            for n in [1, 2] {
                let name = format!("oracle-equivalence {} k={k} n={n}", method.name());
                checks.push(guarded(name.clone(), || {
                    let mesh = build_structured_mesh(n, MeshPattern::RightSplit);
                    let p = HdgProblem::new(&mesh, cfg(method, k, false))?;
                    let (a, _) = solve_problem(&p, &f)?;
                    let b = p.solve_monolithic(&f)?;
                    let scale = b.max_abs_coefficient().max(f64::MIN_POSITIVE);
                    let diff = solution_difference(&a, &b) / scale;
                    Ok(CheckResult::bound(name, diff, 1e-9))
                }));
            }
        }
    }

    let mesh4 = build_structured_mesh(4, MeshPattern::RightSplit);
    for method in methods {
        for (k, ls) in [(1, false), (2, false), (1, true)] {
            let tag = format!("{} k={k}{}", method.name(), if ls { " ls" } else { "" });
            let name = format!("identities {tag}");
            let solved = HdgProblem::new(&mesh4, cfg(method, k, ls)).and_then(|p| {
                let s = solve_problem(&p, &f)?;
                Ok((p, s.0))
            });
            match solved {
                Ok((p, s)) => {
                    checks.push(CheckResult::bound(
                        format!("energy-identity {tag}"),
                        verify::energy_identity_residual(&p, &s, &f),
                        IDENTITY_TOLERANCE,
                    ));
                    checks.push(CheckResult::bound(format!("flux-residual {tag}"), verify::flux_residual(&p, &s), IDENTITY_TOLERANCE));
                    checks.push(CheckResult::bound(
                        format!("transmission {tag}"),
                        verify::transmission_residual(&p, &s),
                        IDENTITY_TOLERANCE,
                    ));
                    if !ls {
                        checks.push(guarded(format!("corollary {tag}"), || {
                            let e = verify::projection_error_checks(&p, &s, &q, &u)?;
                            Ok(CheckResult::bound(format!("corollary {tag}"), e.corollary_ratio, 2.0 + COROLLARY_SLACK))
                        }));
                    }
                }
                Err(e) => checks.push(CheckResult { name, passed: false, detail: e.to_string() }),
            }
        }
    }

    for k in 1..=3 {
        let name = format!("m-index k={k}");
        checks.push(guarded(name.clone(), || {
            let tables = crate::fem::ReferenceTables::new(k, k, 2 * k + 2)?;
            let s = crate::projections::ElementSpaces::new(&mesh4, 0, &tables, [config.tau; 3]);
            let index = crate::projections::m_index(&s)?;
            let dec = crate::projections::solenoidal_decomposition(&s)?;
            let expected_sbb = [0, 0, 1, 3][k];
            Ok(CheckResult {
                name,
                passed: index == 0 && dec.vsbb.ncols() == expected_sbb,
                detail: format!("I_M = {index}, dim V_sbb = {}", dec.vsbb.ncols()),
            })
        }));
    }

    for n in [2, 4] {
        let name = format!("inf-sup n={n}");
        checks.push(guarded(name.clone(), || {
            let beta = infsup_estimate(&build_structured_mesh(n, MeshPattern::RightSplit), 1)?;
            Ok(CheckResult {
                name,
                passed: beta >= 0.5f64.sqrt() - 1e-8 && beta <= 1.0 + 1e-8,
                detail: format!("beta = {beta:.6}"),
            })
        }));
    }

    for (ls, tag) in [(false, "standard"), (true, "ls")] {
        let name = format!("local-definiteness {tag}");
        checks.push(guarded(name.clone(), || {
            HdgProblem::new(&mesh4, cfg(Method::Dirichlet, 1, ls))?.check_local_definiteness()?;
            Ok(CheckResult { name, passed: true, detail: "all local problems definite".into() })
        }));
    }

    let name = "k0-smoke dirichlet".to_string();
    checks.push(guarded(name.clone(), || {
        let p = HdgProblem::new(&mesh4, cfg(Method::Dirichlet, 0, false))?;
        let (s, _) = solve_problem(&p, &f)?;
        let tables = verify::error_tables(&p)?;
        let e = verify::l2_error_scalar(&mesh4, &tables, &s.u, &u);
        Ok(CheckResult { name, passed: e.is_finite(), detail: format!("err_u = {e:.3e}") })
    }));

    SuiteReport { checks }
}

/// Max coefficient difference between two solutions.
pub fn solution_difference(a: &HdgSolution, b: &HdgSolution) -> f64 {
    let d = |x: &[nalgebra::DVector<f64>], y: &[nalgebra::DVector<f64>]| {
        x.iter().zip(y).map(|(p, q)| (p - q).amax()).fold(0.0, f64::max)
    };
    d(&a.q, &b.q).max(d(&a.u, &b.u)).max(d(&a.traces, &b.traces))
}
