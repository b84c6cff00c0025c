//! Command-line front end for the mass-lumped P1 heat-equation toolkit.
//!
//! Subcommands:
//!
//! - `mesh gen|check|stats` — structured triangulations of the unit square,
//!   structural/acuteness validation, and quality statistics;
//! - `solve` — one theta-scheme run with trajectory and state output;
//! - `diag range|positivity|gn|sobolev|fracpower|imagpower` — operator
//!   diagnostics with per-sample CSV output and a pass/fail summary;
//! - `study linear|semilinear` — multi-level convergence studies with
//!   fitted slopes and plot-ready CSV reports.
//!
//! Exit codes: 0 success, 1 runtime failure (I/O, solver breakdown),
//! 2 validation or check failure (bad parameters, malformed mesh, stability
//! refusal, diagnostic violations), 64 usage error.
//!
//! Every emitted file starts with `#` header lines recording the crate
//! version, the command line, and the seed, so identical invocations
//! produce byte-identical files (modulo the wall-clock `runtime_s` column
//! of study reports).

use clap::{Args, Parser, Subcommand, ValueEnum};
use dmrfem::assembly::{DiscreteOperatorSet, FemFunction};
use dmrfem::error::Error;
use dmrfem::experiments::{
    emit_report, manufactured_problem, run_linear_case, run_semilinear_study, Nonlinearity,
    SemilinearStudyConfig,
};
use dmrfem::mesh::{
    check_acuteness, compute_mesh_stats, generate_structured_mesh, load_mesh, save_mesh,
};
use dmrfem::norms;
use dmrfem::spectral;
use dmrfem::stepper::{
    solve_linear, solve_theta_scheme, InitialData, LoadVariant, SchemeConfig, SourceTerm,
};
use dmrfem::textio;
use dmrfem::tolerances::POSITIVITY_REL_SLACK;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::sync::Arc;

type Result<T> = std::result::Result<T, Error>;

/// Largest admissible relative gap between the quadrature and eigenvector
/// routes to fractional powers before `diag fracpower` fails.
const FRACTIONAL_XCHECK_REL: f64 = 1e-6;

/// Largest admissible deviation of an imaginary-power operator norm from 1
/// before `diag imagpower` fails.
const IMAGINARY_NORM_TOL: f64 = 1e-12;

#[derive(Parser, Debug)]
#[command(
    name = "dmrfem",
    version,
    about = "Mass-lumped P1 finite elements for the heat equation: mesh tooling, \
             theta-scheme solves, operator diagnostics, and convergence studies"
)]
struct Cli {
    /// Seed for all randomized diagnostics; recorded in output headers.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads for parallel sections (also honored from the
    /// DMRFEM_JOBS environment variable; flag wins). Defaults to all cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate, validate, and measure triangulations.
    #[command(subcommand)]
    Mesh(MeshCmd),
    /// Run one theta-scheme heat solve and record the trajectory.
    Solve(Box<SolveArgs>),
    /// Operator diagnostics with per-sample CSV output.
    #[command(subcommand)]
    Diag(DiagCmd),
    /// Multi-level convergence studies with fitted slopes.
    #[command(subcommand)]
    Study(StudyCmd),
}

#[derive(Subcommand, Debug)]
enum MeshCmd {
    /// Write a structured triangulation of the unit square.
    Gen {
        /// Cells per side; the mesh has 2*n^2 triangles.
        #[arg(long)]
        n: usize,
        /// Output path.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Validate a mesh file: structure, orientation, and acuteness
    /// (exit 2 on failure).
    Check {
        /// Mesh file to validate.
        path: PathBuf,
    },
    /// Print size and quality statistics of a mesh file.
    Stats {
        /// Mesh file to measure.
        path: PathBuf,
    },
}

/// Built-in problems for `solve`.
#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Problem {
    /// Forced problem with a known closed-form solution
    /// `x^{5/2}(1-x)^{5/2} y(1-y) e^t`.
    Manufactured,
    /// Zero source with initial value `sin(pi x) sin(pi y)`; decays like
    /// the continuous heat semigroup.
    Decay,
}

impl std::fmt::Display for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Problem::Manufactured => write!(f, "manufactured"),
            Problem::Decay => write!(f, "decay"),
        }
    }
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// Mesh file (see `mesh gen`).
    #[arg(long)]
    mesh: PathBuf,
    /// Implicitness parameter in [0, 1]: 0 explicit, 1/2 trapezoidal,
    /// 1 implicit.
    #[arg(long)]
    theta: f64,
    /// Time step.
    #[arg(long)]
    tau: f64,
    /// Final time.
    #[arg(long = "T")]
    t_final: f64,
    /// Load discretization: A integrates the source against the basis,
    /// B feeds the lumped projection of the source.
    #[arg(long, default_value = "A")]
    variant: LoadVariant,
    /// Built-in problem.
    #[arg(long, value_enum, default_value_t = Problem::Manufactured)]
    problem: Problem,
    /// Trajectory CSV (columns n,t,linf,l2; one row per step).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Run even when the step exceeds the stability bound.
    #[arg(long)]
    force: bool,
    /// Directory for full nodal state dumps, one text file per step.
    #[arg(long)]
    dump_states: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum DiagCmd {
    /// Sample the numerical range of the lumped Laplacian under the
    /// q-duality pairing and check the mesh-size bound (exit 2 on
    /// violations).
    Range(RangeArgs),
    /// Probe nonnegativity preservation: implicit steps from random
    /// nonnegative data plus entrywise resolvent checks (exit 2 on
    /// violations).
    Positivity(PositivityArgs),
    /// Measure the max-norm versus operator/function norm ratio on random
    /// functions.
    Gn(GnArgs),
    /// Measure the max-norm versus fractional-power norm ratio on random
    /// functions.
    Sobolev(SobolevArgs),
    /// Cross-validate fractional powers: contour quadrature against the
    /// eigenvector route (exit 2 when they disagree).
    Fracpower(FracArgs),
    /// Operator norms of imaginary powers in the lumped 2-norm
    /// (exit 2 when any norm is off 1).
    Imagpower(ImagArgs),
}

#[derive(Args, Debug)]
struct RangeArgs {
    /// Mesh file.
    #[arg(long)]
    mesh: PathBuf,
    /// Duality exponent q in (1, infinity).
    #[arg(long, default_value_t = 2.0)]
    q: f64,
    /// Number of random samples.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    /// Draw complex-valued samples instead of real ones.
    #[arg(long)]
    complex: bool,
    /// CSV output path (stdout when omitted).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PositivityArgs {
    /// Mesh file.
    #[arg(long)]
    mesh: PathBuf,
    /// Number of random (initial value, source) pairs.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// Step size of the implicit runs.
    #[arg(long, default_value_t = 0.01)]
    tau: f64,
    /// Steps per run.
    #[arg(long, default_value_t = 5)]
    steps: usize,
    /// CSV output path (stdout when omitted).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GnArgs {
    /// Mesh file.
    #[arg(long)]
    mesh: PathBuf,
    /// Lumped-norm exponent q.
    #[arg(long, default_value_t = 2.0)]
    q: f64,
    /// Number of random samples.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// CSV output path (stdout when omitted).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SobolevArgs {
    /// Mesh file.
    #[arg(long)]
    mesh: PathBuf,
    /// Lumped-norm exponent q.
    #[arg(long, default_value_t = 2.0)]
    q: f64,
    /// Fractional power in (d/(2q), 1].
    #[arg(long, default_value_t = 0.75)]
    alpha: f64,
    /// Number of random samples.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// CSV output path (stdout when omitted).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FracArgs {
    /// Mesh file.
    #[arg(long)]
    mesh: PathBuf,
    /// Power exponent in [-1, 1].
    #[arg(long, default_value_t = -0.5, allow_hyphen_values = true)]
    z: f64,
    /// Number of random samples.
    #[arg(long, default_value_t = 5)]
    samples: usize,
    /// CSV output path (stdout when omitted).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ImagArgs {
    /// Mesh file.
    #[arg(long)]
    mesh: PathBuf,
    /// Imaginary exponents t to test.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 1.0, 10.0], allow_hyphen_values = true)]
    t: Vec<f64>,
    /// CSV output path (stdout when omitted).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum StudyCmd {
    /// Manufactured-solution convergence of the linear theta scheme.
    Linear {
        /// Cases to run. 1: explicit at the stability bound, T=0.1;
        /// 2/3: trapezoidal with tau=h / tau=h^2, T=0.5;
        /// 4/5: implicit with tau=h / tau=h^2, T=0.5.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1u8, 2, 3, 4, 5])]
        cases: Vec<u8>,
        /// Load discretization.
        #[arg(long, default_value = "A")]
        variant: LoadVariant,
        /// Mesh resolutions (cells per side).
        #[arg(long, value_delimiter = ',', default_values_t = vec![8usize, 16, 32, 64])]
        levels: Vec<usize>,
        /// Output directory for report CSVs.
        #[arg(long)]
        out: PathBuf,
    },
    /// Self-convergence of the semi-implicit semilinear scheme against a
    /// fine reference run.
    Semilinear {
        /// Nonlinearity: 'usq' (u squared) or 'zero'.
        #[arg(long = "f", default_value = "usq")]
        nonlinearity: Nonlinearity,
        /// Mesh resolutions (powers of two, each dividing the largest).
        #[arg(long, value_delimiter = ',', default_values_t = vec![8usize, 16, 32, 64])]
        levels: Vec<usize>,
        /// Reference resolution (cells per side).
        #[arg(long, default_value_t = 128)]
        ref_n: usize,
        /// Reference time step.
        #[arg(long, default_value_t = 1e-4)]
        ref_tau: f64,
        /// Final time.
        #[arg(long = "T", default_value_t = 0.25)]
        t_final: f64,
        /// Amplitude of the product-sine initial value.
        #[arg(long, default_value_t = 0.1)]
        amplitude: f64,
        /// Output directory for report CSVs.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 64,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    // Deterministic output: dense kernels run sequentially so identical
    // invocations reproduce files bit for bit.
    dmrfem::force_sequential_dense_algebra();
    if let Err(e) = configure_threads(cli.jobs) {
        eprintln!("error: {e}");
        std::process::exit(2);
    }
    match run(&cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}

/// Maps library errors onto the exit-code taxonomy: parameter/mesh/stability
/// problems are validation failures (2), everything else is a runtime
/// failure (1).
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_)
        | Error::InvalidMesh(_)
        | Error::Parse { .. }
        | Error::MeshMismatch(_)
        | Error::Stability { .. } => 2,
        _ => 1,
    }
}

fn configure_threads(jobs: Option<usize>) -> Result<()> {
    let jobs = match jobs {
        Some(j) => Some(j),
        None => match std::env::var("DMRFEM_JOBS") {
            Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
                Error::invalid_argument(format!(
                    "DMRFEM_JOBS must be a positive integer, got '{v}'"
                ))
            })?),
            Err(_) => None,
        },
    };
    if let Some(j) = jobs {
        if j == 0 {
            return Err(Error::invalid_argument("worker thread count must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| {
                Error::invalid_argument(format!("could not configure {j} worker threads: {e}"))
            })?;
    }
    Ok(())
}

/// Header entries shared by every output file of one invocation.
struct HeaderInfo {
    command: String,
    seed: u64,
}

impl HeaderInfo {
    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("command", self.command.clone()),
            ("seed", self.seed.to_string()),
        ]
    }
}

/// The invocation with the binary path normalized to the program name, so
/// headers do not depend on how the executable was located.
fn command_line() -> String {
    std::iter::once("dmrfem".to_string())
        .chain(std::env::args().skip(1))
        .collect::<Vec<_>>()
        .join(" ")
}

fn run(cli: &Cli) -> Result<i32> {
    let hdr = HeaderInfo {
        command: command_line(),
        seed: cli.seed,
    };
    match &cli.cmd {
        Cmd::Mesh(m) => mesh_cmd(m, &hdr),
        Cmd::Solve(s) => solve_cmd(s, &hdr),
        Cmd::Diag(d) => diag_cmd(d, cli.seed, &hdr),
        Cmd::Study(s) => study_cmd(s, &hdr),
    }
}

fn load_ops(path: &Path) -> Result<DiscreteOperatorSet> {
    let mesh = Arc::new(load_mesh(path)?);
    DiscreteOperatorSet::assemble(mesh)
}

/// Writes a diagnostic CSV to the given path, or prints it when no path
/// was requested.
fn emit_csv(out: &Option<PathBuf>, body: &str) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, body)?;
            Ok(())
        }
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn mesh_cmd(cmd: &MeshCmd, hdr: &HeaderInfo) -> Result<i32> {
    match cmd {
        MeshCmd::Gen { n, out } => {
            let mesh = generate_structured_mesh(*n)?;
            save_mesh(&mesh, out, &hdr.entries())?;
            let stats = compute_mesh_stats(&mesh);
            println!(
                "wrote {} ({} nodes, {} elements, h = {})",
                out.display(),
                mesh.n_nodes(),
                mesh.n_elems(),
                textio::summary(stats.h)
            );
            Ok(0)
        }
        MeshCmd::Check { path } => {
            let mesh = load_mesh(path)?;
            println!(
                "structure: ok ({} nodes, {} elements, {} interior)",
                mesh.n_nodes(),
                mesh.n_elems(),
                mesh.n_interior()
            );
            let report = check_acuteness(&mesh)?;
            if report.pass {
                println!(
                    "acuteness: ok (largest off-diagonal stiffness entry {}, \
                     angle test agrees: {})",
                    textio::summary(report.max_offdiag),
                    report.angle_check_agrees
                );
                Ok(0)
            } else {
                println!(
                    "acuteness: FAIL ({} positive off-diagonal entries, largest {})",
                    report.violations.len(),
                    textio::summary(report.max_offdiag)
                );
                for (i, j, v) in report.violations.iter().take(5) {
                    println!("  nodes {i}-{j}: {}", textio::summary(*v));
                }
                Ok(2)
            }
        }
        MeshCmd::Stats { path } => {
            let mesh = load_mesh(path)?;
            let stats = compute_mesh_stats(&mesh);
            println!("nodes: {}", mesh.n_nodes());
            println!("elements: {}", mesh.n_elems());
            println!("interior: {}", mesh.n_interior());
            println!("h: {}", textio::summary(stats.h));
            println!("kappa: {}", textio::summary(stats.kappa));
            println!("shape_ratio: {}", textio::summary(stats.shape_ratio));
            println!("size_ratio: {}", textio::summary(stats.size_ratio));
            println!("domain_measure: {}", textio::summary(stats.domain_measure));
            Ok(0)
        }
    }
}

fn solve_cmd(a: &SolveArgs, hdr: &HeaderInfo) -> Result<i32> {
    let ops = load_ops(&a.mesh)?;
    let mut cfg = SchemeConfig::new(a.theta, a.tau, a.t_final)?.with_variant(a.variant);
    if a.force {
        cfg = cfg.forced();
    }
    if let Some(dir) = &a.dump_states {
        std::fs::create_dir_all(dir)?;
    }
    let problem = manufactured_problem();
    let manufactured_spatial = |x: f64, y: f64| problem.spatial_source(x, y);
    let manufactured_temporal = |t: f64| problem.temporal(t);
    let manufactured_initial = |x: f64, y: f64| problem.initial(x, y);
    let decay_initial = |x: f64, y: f64| {
        (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin()
    };
    let (source, initial) = match a.problem {
        Problem::Manufactured => (
            SourceTerm::Separable {
                spatial: &manufactured_spatial,
                temporal: &manufactured_temporal,
            },
            InitialData::Project(&manufactured_initial),
        ),
        Problem::Decay => (SourceTerm::Zero, InitialData::Project(&decay_initial)),
    };
    let mut rows = String::new();
    let summary = solve_linear(&ops, &cfg, source, initial, |k, t, u| {
        let l2 = norms::lq_norm(&ops, u, 2.0)?;
        rows.push_str(&format!(
            "{k},{},{},{}\n",
            textio::full(t),
            textio::full(u.max_abs()),
            textio::full(l2)
        ));
        if let Some(dir) = &a.dump_states {
            let mut entries = hdr.entries();
            entries.push(("step", k.to_string()));
            entries.push(("t", textio::full(t)));
            let mut body = textio::header(&entries);
            for v in u.values() {
                body.push_str(&textio::full(*v));
                body.push('\n');
            }
            std::fs::write(dir.join(format!("state_{k:06}.txt")), body)?;
        }
        Ok(())
    })?;
    if let Some(out) = &a.out {
        let mut entries = hdr.entries();
        let params = format!(
            "theta={} tau={} T={} variant={} problem={}",
            a.theta, a.tau, a.t_final, a.variant, a.problem
        );
        entries.push(("scheme", params));
        let mut body = textio::header(&entries);
        body.push_str("n,t,linf,l2\n");
        body.push_str(&rows);
        std::fs::write(out, body)?;
    }
    println!("steps: {}", summary.steps);
    println!("t_end: {}", textio::summary(summary.t_end));
    println!("max_abs: {}", textio::summary(summary.max_abs));
    if summary.stability.required {
        println!(
            "tau_max: {} (satisfied: {})",
            textio::summary(summary.stability.tau_max),
            summary.stability.satisfied
        );
    }
    Ok(0)
}

fn diag_cmd(cmd: &DiagCmd, seed: u64, hdr: &HeaderInfo) -> Result<i32> {
    match cmd {
        DiagCmd::Range(a) => range_cmd(a, seed, hdr),
        DiagCmd::Positivity(a) => positivity_cmd(a, seed, hdr),
        DiagCmd::Gn(a) => gn_cmd(a, seed, hdr),
        DiagCmd::Sobolev(a) => sobolev_cmd(a, seed, hdr),
        DiagCmd::Fracpower(a) => fracpower_cmd(a, seed, hdr),
        DiagCmd::Imagpower(a) => imagpower_cmd(a, hdr),
    }
}

fn random_function(ops: &DiscreteOperatorSet, rng: &mut ChaCha8Rng) -> Result<FemFunction> {
    let vals: Vec<f64> = (0..ops.n_dofs()).map(|_| rng.random::<f64>() - 0.5).collect();
    ops.function_from_values(vals)
}

fn range_cmd(a: &RangeArgs, seed: u64, hdr: &HeaderInfo) -> Result<i32> {
    let ops = load_ops(&a.mesh)?;
    let range = spectral::numerical_range_sample(&ops, a.q, a.samples, a.complex, seed)?;
    let violations = range
        .points
        .iter()
        .filter(|z| z.norm() > range.bound)
        .count();
    let mut entries = hdr.entries();
    entries.push(("q", a.q.to_string()));
    let mut body = textio::header(&entries);
    body.push_str("sample,re,im\n");
    for (k, z) in range.points.iter().enumerate() {
        body.push_str(&format!("{k},{},{}\n", textio::full(z.re), textio::full(z.im)));
    }
    body.push_str(&format!(
        "# r_estimate={} bound={} violations={violations}\n",
        textio::full(range.r_estimate),
        textio::full(range.bound)
    ));
    emit_csv(&a.out, &body)?;
    println!(
        "numerical range: {} samples, largest magnitude {}, bound {}, violations {}",
        range.points.len(),
        textio::summary(range.r_estimate),
        textio::summary(range.bound),
        violations
    );
    Ok(if violations == 0 { 0 } else { 2 })
}

fn positivity_cmd(a: &PositivityArgs, seed: u64, hdr: &HeaderInfo) -> Result<i32> {
    let ops = load_ops(&a.mesh)?;
    if a.steps == 0 {
        return Err(Error::invalid_argument("positivity probe needs at least one step"));
    }
    let acute = check_acuteness(ops.mesh())?;
    let cfg = SchemeConfig::new(1.0, a.tau, a.tau * a.steps as f64)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = String::new();
    let mut violations = 0usize;
    let mut worst = f64::INFINITY;
    for s in 0..a.samples {
        let u0: Vec<f64> = (0..ops.n_dofs()).map(|_| rng.random::<f64>()).collect();
        let g: Vec<f64> = (0..ops.n_dofs()).map(|_| rng.random::<f64>()).collect();
        let scale = u0.iter().chain(&g).fold(0.0_f64, |m, v| m.max(*v));
        let u0 = ops.function_from_values(u0)?;
        let g = ops.function_from_values(g)?;
        let loads = vec![g; a.steps];
        let mut min_v = f64::INFINITY;
        solve_theta_scheme(&ops, &cfg, &loads, InitialData::Values(u0), |_, _, u| {
            for v in u.values() {
                min_v = min_v.min(*v);
            }
            Ok(())
        })?;
        worst = worst.min(min_v);
        if min_v < -POSITIVITY_REL_SLACK * scale {
            violations += 1;
        }
        rows.push_str(&format!("{s},{}\n", textio::full(min_v)));
    }
    // Entrywise resolvent probe: images of unit basis vectors expose any
    // negative resolvent entry directly.
    let n = ops.n_dofs();
    let hat_ids: Vec<usize> = if n <= 200 {
        (0..n).collect()
    } else {
        (0..200).map(|_| rng.random_range(0..n)).collect()
    };
    let hats: Vec<FemFunction> = hat_ids
        .iter()
        .map(|&j| {
            let mut v = vec![0.0; n];
            v[j] = 1.0;
            ops.function_from_values(v)
        })
        .collect::<Result<_>>()?;
    let mut resolvent_min = f64::INFINITY;
    for t in [a.tau, 10.0 * a.tau] {
        for r in spectral::backward_euler_resolvent_multi(&ops, t, &hats)? {
            for v in r.values() {
                resolvent_min = resolvent_min.min(*v);
            }
        }
    }
    let resolvent_ok = resolvent_min >= -POSITIVITY_REL_SLACK;
    let mut body = textio::header(&hdr.entries());
    body.push_str("sample,min_value\n");
    body.push_str(&rows);
    body.push_str(&format!(
        "# samples={} violations={violations} min_state={} resolvent_min={} acute={}\n",
        a.samples,
        textio::full(worst),
        textio::full(resolvent_min),
        acute.pass
    ));
    emit_csv(&a.out, &body)?;
    println!(
        "positivity: {} runs, smallest nodal value {}, smallest resolvent entry {}, \
         acute mesh: {}",
        a.samples,
        textio::summary(worst),
        textio::summary(resolvent_min),
        acute.pass
    );
    Ok(if violations == 0 && resolvent_ok { 0 } else { 2 })
}

fn gn_cmd(a: &GnArgs, seed: u64, hdr: &HeaderInfo) -> Result<i32> {
    let ops = load_ops(&a.mesh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = hdr.entries();
    entries.push(("q", a.q.to_string()));
    let mut body = textio::header(&entries);
    body.push_str("sample,ratio\n");
    let mut max_ratio = 0.0_f64;
    for s in 0..a.samples {
        let v = random_function(&ops, &mut rng)?;
        let r = spectral::gn_ratio(&ops, &v, a.q)?;
        max_ratio = max_ratio.max(r);
        body.push_str(&format!("{s},{}\n", textio::full(r)));
    }
    body.push_str(&format!("# max_ratio={}\n", textio::full(max_ratio)));
    emit_csv(&a.out, &body)?;
    println!(
        "interpolation ratio: {} samples, max {}",
        a.samples,
        textio::summary(max_ratio)
    );
    Ok(0)
}

fn sobolev_cmd(a: &SobolevArgs, seed: u64, hdr: &HeaderInfo) -> Result<i32> {
    let ops = load_ops(&a.mesh)?;
    let eig = spectral::eigendecompose(&ops)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = hdr.entries();
    entries.push(("q", a.q.to_string()));
    entries.push(("alpha", a.alpha.to_string()));
    let mut body = textio::header(&entries);
    body.push_str("sample,ratio\n");
    let mut max_ratio = 0.0_f64;
    for s in 0..a.samples {
        let v = random_function(&ops, &mut rng)?;
        let r = spectral::sobolev_ratio(&ops, &eig, &v, a.q, a.alpha)?;
        max_ratio = max_ratio.max(r);
        body.push_str(&format!("{s},{}\n", textio::full(r)));
    }
    body.push_str(&format!("# max_ratio={}\n", textio::full(max_ratio)));
    emit_csv(&a.out, &body)?;
    println!(
        "embedding ratio: {} samples, max {}",
        a.samples,
        textio::summary(max_ratio)
    );
    Ok(0)
}

fn fracpower_cmd(a: &FracArgs, seed: u64, hdr: &HeaderInfo) -> Result<i32> {
    let ops = load_ops(&a.mesh)?;
    let eig = spectral::eigendecompose(&ops)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = hdr.entries();
    entries.push(("z", a.z.to_string()));
    let mut body = textio::header(&entries);
    body.push_str("sample,rel_gap\n");
    let mut max_gap = 0.0_f64;
    for s in 0..a.samples {
        let v = random_function(&ops, &mut rng)?;
        let via_eig = spectral::fractional_power_eigen(&ops, &eig, a.z, &v)?;
        let via_quad = spectral::fractional_power_quadrature(&ops, a.z, &v)?;
        let diff = FemFunction::linear_comb(1.0, &via_eig, -1.0, &via_quad);
        let gap = norms::lumped_norm(&ops, &diff, 2.0)?
            / norms::lumped_norm(&ops, &via_eig, 2.0)?;
        max_gap = max_gap.max(gap);
        body.push_str(&format!("{s},{}\n", textio::full(gap)));
    }
    let pass = max_gap <= FRACTIONAL_XCHECK_REL;
    body.push_str(&format!(
        "# max_rel_gap={} tol={FRACTIONAL_XCHECK_REL:e} pass={pass}\n",
        textio::full(max_gap)
    ));
    emit_csv(&a.out, &body)?;
    println!(
        "fractional power z={} cross-check: {} samples, largest relative gap {} \
         (tolerance {FRACTIONAL_XCHECK_REL:e})",
        a.z,
        a.samples,
        textio::summary(max_gap)
    );
    Ok(if pass { 0 } else { 2 })
}

fn imagpower_cmd(a: &ImagArgs, hdr: &HeaderInfo) -> Result<i32> {
    let ops = load_ops(&a.mesh)?;
    let eig = spectral::eigendecompose(&ops)?;
    let mut body = textio::header(&hdr.entries());
    body.push_str("t,norm,deviation\n");
    let mut max_dev = 0.0_f64;
    for &t in &a.t {
        let norm = spectral::imaginary_power_norm(&eig, t)?;
        let dev = (norm - 1.0).abs();
        max_dev = max_dev.max(dev);
        body.push_str(&format!(
            "{},{},{}\n",
            textio::full(t),
            textio::full(norm),
            textio::full(dev)
        ));
    }
    let pass = max_dev <= IMAGINARY_NORM_TOL;
    body.push_str(&format!(
        "# max_deviation={} tol={IMAGINARY_NORM_TOL:e} pass={pass}\n",
        textio::full(max_dev)
    ));
    emit_csv(&a.out, &body)?;
    println!(
        "imaginary powers: {} exponents, largest deviation from 1 is {}",
        a.t.len(),
        textio::summary(max_dev)
    );
    Ok(if pass { 0 } else { 2 })
}

fn study_cmd(cmd: &StudyCmd, hdr: &HeaderInfo) -> Result<i32> {
    match cmd {
        StudyCmd::Linear {
            cases,
            variant,
            levels,
            out,
        } => {
            if cases.is_empty() {
                return Err(Error::invalid_argument("no cases requested"));
            }
            std::fs::create_dir_all(out)?;
            for &c in cases {
                let report = run_linear_case(c, *variant, levels)?;
                let path = out.join(format!("case{c}_variant{variant}.csv"));
                let files = emit_report(&report, &path, &hdr.entries())?;
                println!(
                    "case {c} variant {variant}: fitted slope {:.4} over {} levels -> {}",
                    report.fitted_slope,
                    report.rows.len(),
                    files[0].display()
                );
            }
            Ok(0)
        }
        StudyCmd::Semilinear {
            nonlinearity,
            levels,
            ref_n,
            ref_tau,
            t_final,
            amplitude,
            out,
        } => {
            std::fs::create_dir_all(out)?;
            let cfg = SemilinearStudyConfig {
                levels: levels.clone(),
                ref_n: *ref_n,
                ref_tau: *ref_tau,
                t_final: *t_final,
                amplitude: *amplitude,
                nonlinearity: *nonlinearity,
            };
            let study = run_semilinear_study(&cfg)?;
            let lq_files = emit_report(
                &study.lq_report,
                &out.join("semilinear_lptlq.csv"),
                &hdr.entries(),
            )?;
            let linf_files = emit_report(
                &study.linf_report,
                &out.join("semilinear_linf.csv"),
                &hdr.entries(),
            )?;
            println!(
                "semilinear f={nonlinearity}: time-integrated slope {:.4} -> {}",
                study.lq_report.fitted_slope,
                lq_files[0].display()
            );
            println!(
                "semilinear f={nonlinearity}: max-norm slope {:.4} -> {}",
                study.linf_report.fitted_slope,
                linf_files[0].display()
            );
            println!(
                "reference solve took {} s",
                textio::summary(study.reference_runtime_s)
            );
            Ok(0)
        }
    }
}
