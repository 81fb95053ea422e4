//! Command-line frontend binding graph, spec, and bundle files to the four
//! engine modes: bounds, verify, minimize/maximize, and certify, plus the
//! embedded selftest corpus.
//!
//! Exit codes: 0 verified/success (minimize: gap within tolerance),
//! 1 falsified/infeasible, 2 unknown or budget exhausted, 3 file or parse
//! errors, 64 usage errors.

pub mod config;
pub mod report;

use clap::{Parser, Subcommand};
use config::{CommonFlags, EffectiveConfig};
use ndarray::Array1;
use report::{
    digest_file, emit_result, CexSection, GradientSection, InputDigest, LinearSection, ResultDoc,
    ResultSection, StatsSection, TubeRow,
};
use std::path::{Path, PathBuf};
use veribound::bab::{verify, VerifyStatus};
use veribound::boundprop::{output_bounds, BoundMode};
use veribound::control::{
    build_barrier, build_contraction, build_continuous_lyapunov, build_discrete_lyapunov,
    build_robust_roa, load_bundle, reach_tube, LevelParams, SystemBundle,
};
use veribound::graph::load_graph;
use veribound::interval::BoxDomain;
use veribound::jacobian::augment_with_jacobian;
use veribound::optimize::{maximize, minimize, OptStatus};
use veribound::relax::RelaxParams;
use veribound::spec::{parse_spec, SpecCnf};
use veribound::Graph;

pub const EXIT_VERIFIED: i32 = 0;
pub const EXIT_FALSIFIED: i32 = 1;
pub const EXIT_UNKNOWN: i32 = 2;
pub const EXIT_FILE: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

#[derive(Parser)]
#[command(
    name = "veribound",
    version,
    about = "Certified bounds, satisfiability checking, and global optimization for computation graphs over box domains"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Compute certified output bounds of a graph over a box.
    Bounds(BoundsArgs),
    /// Verify a CNF specification by falsification, bounding, and
    /// branch-and-bound.
    Verify(VerifyArgs),
    /// Certified global minimization of a linear objective over the box.
    Minimize(OptimizeArgs),
    /// Certified global maximization of a linear objective over the box.
    Maximize(OptimizeArgs),
    /// Build and check a control certificate from a system bundle.
    Certify(CertifyArgs),
    /// Run the embedded fixture suite.
    Selftest(SelftestArgs),
}

#[derive(clap::Args)]
pub struct BoundsArgs {
    /// Graph file.
    #[arg(long)]
    pub graph: PathBuf,
    /// Input box as whitespace-separated lower/upper pairs: "l1 u1 l2 u2 …".
    #[arg(long, name = "box", allow_hyphen_values = true)]
    pub r#box: String,
    /// Bounding mode: crown or ibp.
    #[arg(long, default_value = "crown", value_parser = parse_mode)]
    pub mode: BoundMode,
    /// Append certified gradient bounds to the report (scalar outputs only).
    #[arg(long)]
    pub with_jacobian: bool,
    #[command(flatten)]
    pub common: CommonFlags,
}

#[derive(clap::Args)]
pub struct VerifyArgs {
    /// Graph file.
    #[arg(long)]
    pub graph: PathBuf,
    /// Specification file; its box is the verification domain.
    #[arg(long)]
    pub spec: PathBuf,
    #[command(flatten)]
    pub common: CommonFlags,
}

#[derive(clap::Args)]
pub struct OptimizeArgs {
    /// Graph file.
    #[arg(long)]
    pub graph: PathBuf,
    /// Input box as whitespace-separated lower/upper pairs.
    #[arg(long, name = "box", allow_hyphen_values = true)]
    pub r#box: String,
    /// Objective row over the output coordinates, e.g. "1 0.5".
    #[arg(long)]
    pub objective: String,
    /// Optional CNF constraints file.
    #[arg(long)]
    pub constraints: Option<PathBuf>,
    /// Stop once primal − certified bound is at most this.
    #[arg(long)]
    pub gap_tol: Option<f64>,
    #[command(flatten)]
    pub common: CommonFlags,
}

#[derive(clap::Args)]
pub struct CertifyArgs {
    /// Certificate kind: reach, lyap-discrete, lyap-continuous, robust-roa,
    /// contraction, or barrier.
    #[arg(long)]
    pub kind: String,
    /// System bundle file with the graph fragments.
    #[arg(long)]
    pub system: PathBuf,
    /// State box as whitespace-separated lower/upper pairs.
    #[arg(long, name = "box", allow_hyphen_values = true)]
    pub r#box: String,
    /// Disturbance box (robust-roa only).
    #[arg(long)]
    pub box_w: Option<String>,
    /// Sublevel threshold ρ.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Decrease rate κ.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Inner shell level (continuous Lyapunov).
    #[arg(long)]
    pub c1: Option<f64>,
    /// Outer shell level (continuous Lyapunov).
    #[arg(long)]
    pub c2: Option<f64>,
    /// Barrier class-K slope α.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Displacement radius ε (contraction).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Contraction rate.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Disturbance budget ν (robust-roa).
    #[arg(long)]
    pub nu: Option<f64>,
    /// Control polytope vertices file (barrier).
    #[arg(long)]
    pub vertices: Option<PathBuf>,
    /// Reachability horizon (reach).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Reachability divergence ceiling on box widths (reach).
    #[arg(long, default_value_t = 1e6)]
    pub ceiling: f64,
    #[command(flatten)]
    pub common: CommonFlags,
}

#[derive(clap::Args)]
pub struct SelftestArgs {
    #[command(flatten)]
    pub common: CommonFlags,
}

fn parse_mode(s: &str) -> Result<BoundMode, String> {
    match s {
        "crown" => Ok(BoundMode::Crown),
        "ibp" => Ok(BoundMode::Ibp),
        other => Err(format!("unknown mode `{other}` (expected crown or ibp)")),
    }
}

/// Parse "l1 u1 l2 u2 …" into a box.
fn parse_box(text: &str) -> Result<BoxDomain, String> {
    let nums: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| format!("box literal `{t}`: {e}")))
        .collect::<Result<_, _>>()?;
    if nums.is_empty() || nums.len() % 2 != 0 {
        return Err(format!(
            "box needs an even, positive number of values (lower/upper pairs), got {}",
            nums.len()
        ));
    }
    let lower: Vec<f64> = nums.iter().step_by(2).copied().collect();
    let upper: Vec<f64> = nums.iter().skip(1).step_by(2).copied().collect();
    BoxDomain::from_slices(&lower, &upper).map_err(|e| e.to_string())
}

fn parse_row(text: &str) -> Result<Array1<f64>, String> {
    let nums: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| format!("objective literal `{t}`: {e}")))
        .collect::<Result<_, _>>()?;
    if nums.is_empty() {
        return Err("objective row is empty".into());
    }
    Ok(Array1::from(nums))
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn file(message: impl Into<String>) -> Failure {
        Failure { code: EXIT_FILE, message: message.into() }
    }
}

/// Parse and run; returns the process exit code. Diagnostics go to stderr,
/// result documents to `--out` or stdout.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(command: Command) -> Result<i32, Failure> {
    let workers = |c: &CommonFlags| -> Result<usize, Failure> {
        let cfg = EffectiveConfig::resolve(c, None)
            .map_err(|m| Failure { code: EXIT_USAGE, message: m })?;
        Ok(cfg.workers.max(1))
    };
    let n = match &command {
        Command::Bounds(a) => workers(&a.common)?,
        Command::Verify(a) => workers(&a.common)?,
        Command::Minimize(a) | Command::Maximize(a) => workers(&a.common)?,
        Command::Certify(a) => workers(&a.common)?,
        Command::Selftest(a) => workers(&a.common)?,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Failure { code: EXIT_FILE, message: format!("worker pool: {e}") })?;
    pool.install(|| match command {
        Command::Bounds(args) => cmd_bounds(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Minimize(args) => cmd_optimize(args, false),
        Command::Maximize(args) => cmd_optimize(args, true),
        Command::Certify(args) => cmd_certify(args),
        Command::Selftest(args) => cmd_selftest(args),
    })
}

fn load_graph_input(path: &Path) -> Result<(Graph, InputDigest), Failure> {
    let digest = digest_file("graph", path).map_err(Failure::file)?;
    let graph = load_graph(path).map_err(|e| Failure::file(e.to_string()))?;
    Ok((graph, digest))
}

fn cmd_bounds(args: BoundsArgs) -> Result<i32, Failure> {
    let cfg = EffectiveConfig::resolve(&args.common, None)
        .map_err(|m| Failure { code: EXIT_USAGE, message: m })?;
    let (graph, digest) = load_graph_input(&args.graph)?;
    let domain = parse_box(&args.r#box).map_err(|m| Failure { code: EXIT_USAGE, message: m })?;

    let started = std::time::Instant::now();
    let (graph, value_dim, grad_range) = if args.with_jacobian {
        let aug = augment_with_jacobian(&graph).map_err(|e| Failure::file(e.to_string()))?;
        let dim = aug.value_slice.len();
        (aug.graph, dim, Some(aug.grad_slice))
    } else {
        let dim = graph.output_dim();
        (graph, dim, None)
    };
    let (bounds, affine) = output_bounds(&graph, &domain, &RelaxParams::default(), args.mode)
        .map_err(|e| Failure::file(e.to_string()))?;
    eprintln!("bounds computed in {:.2?}", started.elapsed());

    let to_rows = |m: &ndarray::Array2<f64>| -> Vec<Vec<f64>> {
        m.rows().into_iter().map(|r| r.to_vec()).collect()
    };
    let result = ResultSection {
        lower: Some(bounds.lower.iter().take(value_dim).copied().collect()),
        upper: Some(bounds.upper.iter().take(value_dim).copied().collect()),
        linear: Some(LinearSection {
            lower_coeffs: to_rows(&affine.lower_coeffs),
            lower_bias: affine.lower_bias.to_vec(),
            upper_coeffs: to_rows(&affine.upper_coeffs),
            upper_bias: affine.upper_bias.to_vec(),
        }),
        gradient: grad_range.map(|r| GradientSection {
            lower: bounds.lower.slice(ndarray::s![r.clone()]).to_vec(),
            upper: bounds.upper.slice(ndarray::s![r]).to_vec(),
        }),
        ..Default::default()
    };
    let doc = ResultDoc {
        format_version: report::FORMAT_VERSION,
        mode: "bounds".into(),
        inputs: vec![digest],
        config: cfg,
        result,
        stats: None,
    };
    emit_result(&doc, args.common.out.as_deref()).map_err(Failure::file)?;
    Ok(EXIT_VERIFIED)
}

fn verify_to_doc(
    mode: &str,
    graph: &Graph,
    spec: &SpecCnf,
    cfg: EffectiveConfig,
    inputs: Vec<InputDigest>,
    out: Option<&Path>,
) -> Result<i32, Failure> {
    let started = std::time::Instant::now();
    let res = verify(graph, spec, &cfg.verify_config())
        .map_err(|e| Failure::file(e.to_string()))?;
    eprintln!(
        "{} in {:.2?} ({} domains)",
        res.status.as_str(),
        started.elapsed(),
        res.stats.domains_visited
    );
    let code = match res.status {
        VerifyStatus::Verified => EXIT_VERIFIED,
        VerifyStatus::Falsified => EXIT_FALSIFIED,
        VerifyStatus::Unknown => EXIT_UNKNOWN,
    };
    let doc = ResultDoc {
        format_version: report::FORMAT_VERSION,
        mode: mode.into(),
        inputs,
        config: cfg,
        result: ResultSection {
            status: Some(res.status.as_str().into()),
            counterexample: res.counterexample.as_ref().map(|c| CexSection {
                x: c.x.to_vec(),
                clause_index: c.clause_index,
                margin: c.margin,
            }),
            ..Default::default()
        },
        stats: Some(StatsSection::from(&res.stats)),
    };
    emit_result(&doc, out).map_err(Failure::file)?;
    Ok(code)
}

fn cmd_verify(args: VerifyArgs) -> Result<i32, Failure> {
    let cfg = EffectiveConfig::resolve(&args.common, None)
        .map_err(|m| Failure { code: EXIT_USAGE, message: m })?;
    let (graph, graph_digest) = load_graph_input(&args.graph)?;
    let spec_digest = digest_file("spec", &args.spec).map_err(Failure::file)?;
    let spec = parse_spec(&args.spec, graph.output_dim())
        .map_err(|e| Failure::file(e.to_string()))?;
    spec.check_dims(&graph).map_err(|e| Failure::file(e.to_string()))?;
    verify_to_doc(
        "verify",
        &graph,
        &spec,
        cfg,
        vec![graph_digest, spec_digest],
        args.common.out.as_deref(),
    )
}

fn cmd_optimize(args: OptimizeArgs, maximize_mode: bool) -> Result<i32, Failure> {
    let cfg = EffectiveConfig::resolve(&args.common, args.gap_tol)
        .map_err(|m| Failure { code: EXIT_USAGE, message: m })?;
    let (graph, graph_digest) = load_graph_input(&args.graph)?;
    let domain = parse_box(&args.r#box).map_err(|m| Failure { code: EXIT_USAGE, message: m })?;
    let objective =
        parse_row(&args.objective).map_err(|m| Failure { code: EXIT_USAGE, message: m })?;
    let mut inputs = vec![graph_digest];
    let constraints = match &args.constraints {
        Some(path) => {
            inputs.push(digest_file("constraints", path).map_err(Failure::file)?);
            let spec =
                parse_spec(path, graph.output_dim()).map_err(|e| Failure::file(e.to_string()))?;
            Some(spec)
        }
        None => None,
    };

    let started = std::time::Instant::now();
    let opt_cfg = cfg.opt_config();
    let res = if maximize_mode {
        maximize(&graph, &objective, &domain, constraints.as_ref(), &opt_cfg)
    } else {
        minimize(&graph, &objective, &domain, constraints.as_ref(), &opt_cfg)
    }
    .map_err(|e| Failure::file(e.to_string()))?;
    eprintln!(
        "{} in {:.2?} ({} domains, gap {:.3e})",
        res.status.as_str(),
        started.elapsed(),
        res.stats.domains_visited,
        res.gap
    );
    let code = match res.status {
        OptStatus::OptimalWithinGap => EXIT_VERIFIED,
        OptStatus::Infeasible => EXIT_FALSIFIED,
        OptStatus::BudgetExhausted => EXIT_UNKNOWN,
    };
    let doc = ResultDoc {
        format_version: report::FORMAT_VERSION,
        mode: if maximize_mode { "maximize".into() } else { "minimize".into() },
        inputs,
        config: cfg,
        result: ResultSection {
            status: Some(res.status.as_str().into()),
            primal_value: Some(res.primal_value),
            certified_bound: Some(res.certified_bound),
            gap: Some(res.gap),
            x_best: res.x_best.as_ref().map(|x| x.to_vec()),
            ..Default::default()
        },
        stats: Some(StatsSection::from(&res.stats)),
    };
    emit_result(&doc, args.common.out.as_deref()).map_err(Failure::file)?;
    Ok(code)
}

fn level_params(args: &CertifyArgs) -> LevelParams {
    LevelParams {
        rho: args.rho,
        c1: args.c1,
        c2: args.c2,
        kappa: args.kappa,
        alpha: args.alpha,
        nu: args.nu,
        epsilon: args.epsilon,
        rate: args.rate,
        ..Default::default()
    }
}

fn load_vertices(path: &Path) -> Result<Vec<Array1<f64>>, String> {
    #[derive(serde::Deserialize)]
    struct VertexFile {
        vertices: Vec<Vec<f64>>,
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let file: VertexFile =
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(file.vertices.into_iter().map(Array1::from).collect())
}

fn cmd_certify(args: CertifyArgs) -> Result<i32, Failure> {
    let cfg = EffectiveConfig::resolve(&args.common, None)
        .map_err(|m| Failure { code: EXIT_USAGE, message: m })?;
    let bundle_digest = digest_file("system", &args.system).map_err(Failure::file)?;
    let bundle: SystemBundle =
        load_bundle(&args.system).map_err(|e| Failure::file(e.to_string()))?;
    let domain = parse_box(&args.r#box).map_err(|m| Failure { code: EXIT_USAGE, message: m })?;
    let params = level_params(&args);

    if args.kind == "reach" {
        let steps = args.steps.unwrap_or(1);
        let started = std::time::Instant::now();
        let tube = reach_tube(&bundle, &domain, steps, args.ceiling, &RelaxParams::default())
            .map_err(|e| Failure::file(e.to_string()))?;
        eprintln!("tube of {} steps in {:.2?}", tube.len(), started.elapsed());
        let doc = ResultDoc {
            format_version: report::FORMAT_VERSION,
            mode: "certify-reach".into(),
            inputs: vec![bundle_digest],
            config: cfg,
            result: ResultSection {
                tube: Some(
                    tube.iter()
                        .map(|b| TubeRow { lower: b.lower.to_vec(), upper: b.upper.to_vec() })
                        .collect(),
                ),
                ..Default::default()
            },
            stats: None,
        };
        emit_result(&doc, args.common.out.as_deref()).map_err(Failure::file)?;
        return Ok(EXIT_VERIFIED);
    }

    let (graph, spec) = match args.kind.as_str() {
        "lyap-discrete" => build_discrete_lyapunov(&bundle, &domain, &params),
        "lyap-continuous" => build_continuous_lyapunov(&bundle, &domain, &params),
        "robust-roa" => {
            let box_w = args
                .box_w
                .as_deref()
                .ok_or_else(|| Failure { code: EXIT_USAGE, message: "--box-w is required for robust-roa".into() })?;
            let domain_w =
                parse_box(box_w).map_err(|m| Failure { code: EXIT_USAGE, message: m })?;
            build_robust_roa(&bundle, &domain, &domain_w, &params)
        }
        "contraction" => build_contraction(&bundle, &domain, &params),
        "barrier" => {
            let path = args.vertices.as_deref().ok_or_else(|| Failure {
                code: EXIT_USAGE,
                message: "--vertices is required for barrier".into(),
            })?;
            let vertices = load_vertices(path).map_err(Failure::file)?;
            build_barrier(&bundle, &domain, &params, &vertices)
        }
        other => {
            return Err(Failure {
                code: EXIT_USAGE,
                message: format!("unknown certificate kind `{other}`"),
            })
        }
    }
    .map_err(|e| Failure::file(e.to_string()))?;

    verify_to_doc(
        &format!("certify-{}", args.kind),
        &graph,
        &spec,
        cfg,
        vec![bundle_digest],
        args.common.out.as_deref(),
    )
}

fn cmd_selftest(args: SelftestArgs) -> Result<i32, Failure> {
    let _ = EffectiveConfig::resolve(&args.common, None)
        .map_err(|m| Failure { code: EXIT_USAGE, message: m })?;
    let mut failures = 0;
    for case in veribound::fixtures::selftest_cases() {
        let started = std::time::Instant::now();
        match (case.run)() {
            Ok(detail) => {
                println!("[PASS] {} — {} ({:.2?})", case.name, detail, started.elapsed())
            }
            Err(message) => {
                println!("[FAIL] {} — {} ({:.2?})", case.name, message, started.elapsed());
                failures += 1;
            }
        }
    }
    if failures == 0 {
        println!("selftest: all cases passed");
        Ok(EXIT_VERIFIED)
    } else {
        println!("selftest: {failures} case(s) failed");
        Ok(EXIT_FALSIFIED)
    }
}
