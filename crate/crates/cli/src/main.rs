//! `hdg`: convergence studies and verification checks for the HDG solvers.
//!
//! Exit status: 0 when every enabled check passes, 1 when a check fails,
//! 2 for configuration errors, 3 for numerical failures.

mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hdg_core::mesh::MeshPattern;
use hdg_core::par::Execution;
use hdg_core::schemes::{LabelingRule, Method, Stabilization, WDegree};
use hdg_core::study::{
    emit, run_study, run_verification_suite, CheckResult, Format, MeshSource, StudyConfig, SuiteConfig, TauKind,
};
use hdg_core::HdgError;

const EXIT_CHECK: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "hdg", version, about = "HDG convergence studies for the 2-D diffusion problem")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a refinement study and print the convergence table.
    Run(RunArgs),
    /// Run the small-mesh verification suite.
    Verify(VerifyArgs),
}

#[derive(Args)]
#[command(args_override_self = true)]
struct RunArgs {
    #[arg(long, value_enum, default_value = "dirichlet")]
    method: MethodArg,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long = "w-degree", value_enum, default_value = "same")]
    w_degree: WDegreeArg,
    #[arg(long, value_enum, default_value = "standard")]
    stab: StabArg,
    /// Stabilization constant `c` (`tau = c` or `tau = c / h_e`).
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    tau: f64,
    /// Defaults to `inv-h` with `--stab ls`, `const` otherwise.
    #[arg(long = "tau-rule", value_enum)]
    tau_rule: Option<TauRuleArg>,
    /// `right-split`, `criss-cross` or `file:PATH` (reads PATH.node and PATH.ele).
    #[arg(long, default_value = "right-split", value_parser = parse_mesh)]
    mesh: MeshSource,
    /// Comma-separated `1/h` values.
    #[arg(long, default_value = "4,8,16,32", value_delimiter = ',')]
    refine: Vec<usize>,
    #[arg(long, default_value = "paper")]
    solution: String,
    /// `parity`, `seed:INT`, `all-d` or `all-n`; defaults to the method's own labeling.
    #[arg(long, value_parser = parse_labeling)]
    labeling: Option<LabelingRule>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Table destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "on")]
    checks: Toggle,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct VerifyArgs {
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    tau: f64,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct CommonArgs {
    /// Worker threads; 1 runs sequentially.
    #[arg(long)]
    jobs: Option<usize>,
    /// Full-precision JSON sidecar.
    #[arg(long)]
    json: Option<PathBuf>,
    /// `key = value` file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Dirichlet,
    Neumann,
    Mixed,
}

#[derive(Clone, Copy, ValueEnum)]
enum WDegreeArg {
    Same,
    PlusOne,
}

#[derive(Clone, Copy, ValueEnum)]
enum StabArg {
    Standard,
    Ls,
}

#[derive(Clone, Copy, ValueEnum)]
enum TauRuleArg {
    Const,
    InvH,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Md,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

fn parse_mesh(s: &str) -> Result<MeshSource, String> {
    match s {
        "right-split" => Ok(MeshSource::Structured(MeshPattern::RightSplit)),
        "criss-cross" => Ok(MeshSource::Structured(MeshPattern::CrissCross)),
        _ => match s.strip_prefix("file:") {
            Some(p) if !p.is_empty() => Ok(MeshSource::File(PathBuf::from(p))),
            _ => Err("expected right-split, criss-cross or file:PATH".into()),
        },
    }
}

fn parse_labeling(s: &str) -> Result<LabelingRule, String> {
    match s {
        "parity" => Ok(LabelingRule::Parity),
        "all-d" => Ok(LabelingRule::AllD),
        "all-n" => Ok(LabelingRule::AllN),
        _ => s
            .strip_prefix("seed:")
            .and_then(|v| v.parse().ok())
            .map(LabelingRule::Seeded)
            .ok_or_else(|| "expected parity, seed:INT, all-d or all-n".into()),
    }
}

/// Error reported by `main`, carrying its exit status.
struct Failure {
    code: u8,
    message: String,
}

impl From<HdgError> for Failure {
    fn from(e: HdgError) -> Self {
        let code = if e.is_config() { EXIT_CONFIG } else { EXIT_NUMERICAL };
        Self { code, message: e.to_string() }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_CONFIG, message: message.into() }
}

/// Splices the flags of any `--config` file in right after the subcommand,
/// so explicit flags override them.
fn expand_config(argv: Vec<String>) -> Result<Vec<String>, Failure> {
    let pos = argv.iter().position(|a| a == "--config" || a.starts_with("--config="));
    let Some(pos) = pos else { return Ok(argv) };
    let path = match argv[pos].strip_prefix("--config=") {
        Some(p) => p.to_string(),
        None => argv.get(pos + 1).cloned().ok_or_else(|| config_error("--config requires a path"))?,
    };
    let flags = config::flags_from_file(path.as_ref()).map_err(config_error)?;
    let sub = argv.iter().position(|a| a == "run" || a == "verify").unwrap_or(0);
    let mut out = argv[..=sub].to_vec();
    out.extend(flags);
    out.extend_from_slice(&argv[sub + 1..]);
    Ok(out)
}

/// Applies `--jobs` to the global rayon pool.
fn execution(jobs: Option<usize>) -> Result<Execution, Failure> {
    match jobs {
        Some(0) => Err(config_error("--jobs must be positive")),
        Some(1) => Ok(Execution::Sequential),
        #[cfg(feature = "parallel")]
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| config_error(format!("thread pool: {e}")))?;
            Ok(Execution::Parallel)
        }
        _ => Ok(Execution::default()),
    }
}

/// `HDG_SEED` replaces the seed of a seeded labeling.
fn seed_override(labeling: Option<LabelingRule>, env: Option<String>) -> Result<Option<LabelingRule>, Failure> {
    match (labeling, env) {
        (Some(LabelingRule::Seeded(_)), Some(v)) => v
            .trim()
            .parse()
            .map(|s| Some(LabelingRule::Seeded(s)))
            .map_err(|_| config_error(format!("HDG_SEED must be an unsigned integer, got '{v}'"))),
        (l, _) => Ok(l),
    }
}

fn study_config(args: &RunArgs, execution: Execution) -> Result<StudyConfig, Failure> {
    let stabilization = match args.stab {
        StabArg::Standard => Stabilization::Standard,
        StabArg::Ls => Stabilization::LehrenfeldSchoberl,
    };
    let tau_kind = match args.tau_rule {
        Some(TauRuleArg::Const) => TauKind::Constant,
        Some(TauRuleArg::InvH) => TauKind::InverseH,
        None if stabilization == Stabilization::LehrenfeldSchoberl => TauKind::InverseH,
        None => TauKind::Constant,
    };
    Ok(StudyConfig {
        method: match args.method {
            MethodArg::Dirichlet => Method::Dirichlet,
            MethodArg::Neumann => Method::Neumann,
            MethodArg::Mixed => Method::Mixed,
        },
        k: args.k,
        w_degree: match args.w_degree {
            WDegreeArg::Same => WDegree::Same,
            WDegreeArg::PlusOne => WDegree::PlusOne,
        },
        stabilization,
        tau: args.tau,
        tau_kind,
        mesh: args.mesh.clone(),
        refinements: args.refine.clone(),
        solution: args.solution.clone(),
        labeling: seed_override(args.labeling, std::env::var("HDG_SEED").ok())?,
        checks: args.checks == Toggle::On,
        execution,
    })
}

fn write_json(path: &PathBuf, value: &impl serde::Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| config_error(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn report_checks(checks: &[CheckResult]) {
    let mut err = std::io::stderr().lock();
    for c in checks {
        let _ = writeln!(err, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
}

fn run(args: RunArgs) -> Result<bool, Failure> {
    let exec = execution(args.common.jobs)?;
    let config = study_config(&args, exec)?;
    let outcome = run_study(&config)?;
    let format = match args.format {
        FormatArg::Csv => Format::Csv,
        FormatArg::Md => Format::Markdown,
    };
    let table = emit(&outcome.report, format);
    match &args.out {
        Some(path) => std::fs::write(path, &table).map_err(|e| config_error(format!("{}: {e}", path.display())))?,
        None => print!("{table}"),
    }
    if let Some(path) = &args.common.json {
        write_json(path, &outcome)?;
    }
    report_checks(&outcome.checks);
    Ok(outcome.passed())
}

fn verify(args: VerifyArgs) -> Result<bool, Failure> {
    let execution = execution(args.common.jobs)?;
    let report = run_verification_suite(&SuiteConfig { tau: args.tau, execution });
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = report.failures().count();
    println!("{} checks, {failed} failed", report.checks.len());
    if let Some(path) = &args.common.json {
        write_json(path, &report)?;
    }
    Ok(report.passed())
}

fn main() -> ExitCode {
    let outcome = expand_config(std::env::args().collect()).and_then(|argv| {
        let cli = Cli::try_parse_from(argv).unwrap_or_else(|e| e.exit());
        match cli.command {
            Command::Run(a) => run(a),
            Command::Verify(a) => verify(a),
        }
    });
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECK),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
