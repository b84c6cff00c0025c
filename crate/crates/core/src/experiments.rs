//! Convergence studies on the unit square.
//!
//! A manufactured solution drives the linear studies:
//!
//! ```text
//! u(x, y, t) = x^{5/2} (1-x)^{5/2} y (1-y) e^t,
//! ```
//!
//! which satisfies `u' = Delta u + g` with homogeneous Dirichlet data and
//! the source
//!
//! ```text
//! g = sqrt(s) e^t [ s^2 z - (5/4)(3-4x)(1-4x) z + 2 s^2 ],
//! s = x(1-x),  z = y(1-y),
//! ```
//!
//! obtained by differentiating `u` (the `2 s^2` term is `-u_yy` after the
//! common factor `sqrt(s) e^t` is pulled out). The solution has limited
//! regularity at the `x`-boundaries (`x^{5/2}` is not `C^3` up to `x = 0`),
//! which is exactly what makes the convergence orders of the theta scheme
//! interesting to measure.
//!
//! Five standard cases are provided, each pairing an implicitness
//! parameter with a step rule, plus a semilinear self-convergence study
//! against a fine reference run. Reports carry per-level errors in the
//! time-discrete norm `(sum_n tau |e^{n+theta}|_{L^q}^p)^{1/p}` and a
//! least-squares slope of `log error` against `log h`.

use crate::assembly::{DiscreteOperatorSet, FemFunction};
use crate::error::{Error, Result};
use crate::mesh::{generate_structured_mesh, MeshStats};
use crate::norms::{self, NormSpec, SequenceAccumulator, SpatialNorm};
use crate::stepper::{
    solve_linear, solve_semilinear, InitialData, LoadVariant, SchemeConfig, SourceTerm,
    TrajectorySeries,
};
use crate::textio;
use rayon::prelude::*;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

fn sq(x: f64) -> f64 {
    x * x
}

/// `x (1 - x)`, clamped against negative rounding dust so fractional
/// powers stay real for arguments at or just outside the unit interval.
fn edge_product(x: f64) -> f64 {
    (x * (1.0 - x)).max(0.0)
}

/// The manufactured problem: exact solution, initial value, and matching
/// source term for `u' = Delta u + g` on the unit square with homogeneous
/// Dirichlet boundary values.
#[derive(Debug, Clone, Copy, Default)]
pub struct ManufacturedProblem;

/// Returns the manufactured problem bundle.
pub fn manufactured_problem() -> ManufacturedProblem {
    ManufacturedProblem
}

impl ManufacturedProblem {
    /// Exact solution `u(x, y, t)`.
    pub fn solution(&self, x: f64, y: f64, t: f64) -> f64 {
        self.spatial_solution(x, y) * self.temporal(t)
    }

    /// Initial value `u(x, y, 0)`.
    pub fn initial(&self, x: f64, y: f64) -> f64 {
        self.spatial_solution(x, y)
    }

    /// Source `g(x, y, t)`.
    pub fn source(&self, x: f64, y: f64, t: f64) -> f64 {
        self.spatial_source(x, y) * self.temporal(t)
    }

    /// Spatial factor of the solution: `s^{5/2} y (1-y)` with `s = x(1-x)`.
    pub fn spatial_solution(&self, x: f64, y: f64) -> f64 {
        edge_product(x).powf(2.5) * edge_product(y)
    }

    /// Spatial factor of the source:
    /// `sqrt(s) [ s^2 z - (5/4)(3-4x)(1-4x) z + 2 s^2 ]`.
    pub fn spatial_source(&self, x: f64, y: f64) -> f64 {
        let s = edge_product(x);
        let z = edge_product(y);
        s.sqrt() * (sq(s) * z - 1.25 * (3.0 - 4.0 * x) * (1.0 - 4.0 * x) * z + 2.0 * sq(s))
    }

    /// Temporal factor `e^t`, shared by solution and source.
    pub fn temporal(&self, t: f64) -> f64 {
        t.exp()
    }
}

/// Step-size rule of a convergence case.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauRule {
    /// Largest stable step of the explicit scheme (default margin).
    StabilityBound,
    /// `tau = h`.
    EqualH,
    /// `tau = h^2`.
    HSquared,
}

impl TauRule {
    /// Evaluates the rule for a mesh.
    pub fn tau(&self, stats: &MeshStats, theta: f64, dim: usize) -> Result<f64> {
        match self {
            TauRule::StabilityBound => {
                let bound =
                    crate::stepper::check_stability(theta, 1.0, stats.kappa, dim, 2.0, None)?
                        .tau_max;
                if !bound.is_finite() {
                    return Err(Error::invalid_argument(
                        "the stability-bound step rule requires theta < 1/2",
                    ));
                }
                Ok(bound)
            }
            TauRule::EqualH => Ok(stats.h),
            TauRule::HSquared => Ok(stats.h * stats.h),
        }
    }
}

/// Parameters of one convergence case.
#[derive(Debug, Clone, Copy)]
pub struct CaseSpec {
    /// Case number in `1..=5`.
    pub id: u8,
    /// Implicitness parameter.
    pub theta: f64,
    /// Step rule.
    pub tau_rule: TauRule,
    /// Final time.
    pub t_final: f64,
}

/// The five standard cases: explicit at the stability bound, then
/// Crank-Nicolson and backward Euler with `tau = h` and `tau = h^2`.
pub fn case_spec(id: u8) -> Result<CaseSpec> {
    let (theta, tau_rule, t_final) = match id {
        1 => (0.0, TauRule::StabilityBound, 0.1),
        2 => (0.5, TauRule::EqualH, 0.5),
        3 => (0.5, TauRule::HSquared, 0.5),
        4 => (1.0, TauRule::EqualH, 0.5),
        5 => (1.0, TauRule::HSquared, 0.5),
        other => {
            return Err(Error::invalid_argument(format!(
                "case must lie in 1..=5, got {other}"
            )))
        }
    };
    Ok(CaseSpec {
        id,
        theta,
        tau_rule,
        t_final,
    })
}

/// One refinement level of a convergence report.
#[derive(Debug, Clone, Copy)]
pub struct LevelRow {
    /// Cells per side of the structured mesh.
    pub n: usize,
    /// Largest element diameter.
    pub h: f64,
    /// Time step used.
    pub tau: f64,
    /// Measured error.
    pub error: f64,
    /// Wall-clock seconds for this level.
    pub runtime_s: f64,
}

/// A fitted convergence study.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    /// Study label (`case1` .. `case5`, `semilinear-lptlq`, ...).
    pub label: String,
    /// Load variant, when the study runs the linear scheme.
    pub variant: Option<LoadVariant>,
    /// Per-level results, sorted by `h` descending.
    pub rows: Vec<LevelRow>,
    /// Least-squares slope of `log error` against `log h`.
    pub fitted_slope: f64,
    /// Time exponent of the error norm.
    pub p: f64,
    /// Space exponent of the error norm.
    pub q: f64,
    /// Whether consecutive states were theta-averaged before measuring.
    pub theta_averaged: bool,
}

impl ConvergenceReport {
    fn variant_str(&self) -> &'static str {
        match self.variant {
            Some(LoadVariant::A) => "A",
            Some(LoadVariant::B) => "B",
            None => "-",
        }
    }
}

/// Least-squares slope of `log error` against `log h`. Requires at least
/// two levels and strictly positive data.
pub fn fit_slope(hs: &[f64], errors: &[f64]) -> Result<f64> {
    if hs.len() != errors.len() || hs.len() < 2 {
        return Err(Error::invalid_argument(format!(
            "slope fit needs matching lists of at least 2 points, got {} and {}",
            hs.len(),
            errors.len()
        )));
    }
    if hs.iter().chain(errors).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::invalid_argument(
            "slope fit requires positive finite step sizes and errors",
        ));
    }
    let lx: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in lx.iter().zip(&ly) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    if den == 0.0 {
        return Err(Error::invalid_argument(
            "slope fit requires at least two distinct step sizes",
        ));
    }
    Ok(num / den)
}

fn checked_levels(levels: &[usize]) -> Result<Vec<usize>> {
    let mut ls = levels.to_vec();
    ls.sort_unstable();
    ls.dedup();
    if ls.len() < 2 {
        return Err(Error::invalid_argument(
            "a convergence study needs at least two distinct refinement levels",
        ));
    }
    if ls.iter().any(|&n| n < 2) {
        return Err(Error::invalid_argument(
            "refinement levels must be at least 2 cells per side",
        ));
    }
    Ok(ls)
}

/// Time-discrete error of a stored trajectory against an exact solution:
/// states are compared with the nodal interpolant of `u_exact` at matching
/// times, consecutive differences are theta-averaged, and the result is
/// the `(sum_n tau |.|_{L^q}^p)^{1/p}` norm of that sequence.
pub fn linear_error(
    ops: &DiscreteOperatorSet,
    traj: &TrajectorySeries,
    u_exact: &dyn Fn(f64, f64, f64) -> f64,
    p: f64,
    q: f64,
    theta: f64,
) -> Result<f64> {
    let diffs: Vec<FemFunction> = traj
        .states
        .iter()
        .enumerate()
        .map(|(k, u)| {
            let t = k as f64 * traj.tau;
            let interp = ops.nodal_interpolant(&|x, y| u_exact(x, y, t));
            ops.check(u)?;
            Ok(FemFunction::linear_comb(1.0, u, -1.0, &interp))
        })
        .collect::<Result<_>>()?;
    let averaged = norms::theta_average(&diffs, theta)?;
    norms::bochner_norm(
        ops,
        &averaged,
        &NormSpec { p, q, tau: traj.tau },
        SpatialNorm::Lebesgue,
    )
}

/// Runs one case of the linear convergence study over the given refinement
/// levels (in parallel) and fits the slope. Errors are measured in the
/// theta-averaged `(p, q) = (4, 2)` norm against the nodal interpolant of
/// the manufactured solution.
pub fn run_linear_case(
    case_id: u8,
    variant: LoadVariant,
    levels: &[usize],
) -> Result<ConvergenceReport> {
    let case = case_spec(case_id)?;
    let levels = checked_levels(levels)?;
    let problem = manufactured_problem();
    let rows: Vec<LevelRow> = levels
        .par_iter()
        .map(|&n| -> Result<LevelRow> {
            let start = Instant::now();
            let mesh = Arc::new(generate_structured_mesh(n)?);
            let ops = DiscreteOperatorSet::assemble(mesh)?;
            let tau = case.tau_rule.tau(ops.stats(), case.theta, ops.mesh().dim())?;
            let cfg = SchemeConfig::new(case.theta, tau, case.t_final)?.with_variant(variant);
            let error = linear_case_error(&ops, &cfg, &problem)?;
            Ok(LevelRow {
                n,
                h: ops.stats().h,
                tau,
                error,
                runtime_s: start.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<_>>()?;
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let errs: Vec<f64> = rows.iter().map(|r| r.error).collect();
    let fitted_slope = fit_slope(&hs, &errs)?;
    Ok(ConvergenceReport {
        label: format!("case{case_id}"),
        variant: Some(variant),
        rows,
        fitted_slope,
        p: 4.0,
        q: 2.0,
        theta_averaged: true,
    })
}

/// Solves one level of the linear study, streaming the theta-averaged
/// error so no trajectory is kept in memory.
fn linear_case_error(
    ops: &DiscreteOperatorSet,
    cfg: &SchemeConfig,
    problem: &ManufacturedProblem,
) -> Result<f64> {
    let interp = ops.nodal_interpolant(&|x, y| problem.spatial_solution(x, y));
    let spatial = |x: f64, y: f64| problem.spatial_source(x, y);
    let temporal = |t: f64| problem.temporal(t);
    let initial = |x: f64, y: f64| problem.initial(x, y);
    let mut acc = SequenceAccumulator::new(NormSpec {
        p: 4.0,
        q: 2.0,
        tau: cfg.tau,
    });
    let theta = cfg.theta;
    let mut prev: Option<FemFunction> = None;
    solve_linear(
        ops,
        cfg,
        SourceTerm::Separable {
            spatial: &spatial,
            temporal: &temporal,
        },
        InitialData::Project(&initial),
        |_, t, u| {
            // The interpolant of the exact solution at time t is the fixed
            // spatial interpolant scaled by e^t.
            let diff = FemFunction::linear_comb(1.0, u, -problem.temporal(t), &interp);
            if let Some(p) = prev.take() {
                let avg = FemFunction::linear_comb(1.0 - theta, &p, theta, &diff);
                acc.push(norms::lq_norm(ops, &avg, 2.0)?);
            }
            prev = Some(diff);
            Ok(())
        },
    )?;
    Ok(acc.finish())
}

/// Scalar nonlinearity of the semilinear study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Nonlinearity {
    /// `f(u) = 0`; reduces the scheme to the linear homogeneous case.
    Zero,
    /// `f(u) = u^2`.
    #[default]
    Square,
}

impl Nonlinearity {
    /// Evaluates the nonlinearity.
    pub fn apply(&self, z: f64) -> f64 {
        match self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::Square => z * z,
        }
    }
}

impl std::fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Nonlinearity::Zero => write!(f, "zero"),
            Nonlinearity::Square => write!(f, "usq"),
        }
    }
}

impl std::str::FromStr for Nonlinearity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" | "0" => Ok(Nonlinearity::Zero),
            "usq" | "square" | "u2" => Ok(Nonlinearity::Square),
            other => Err(Error::invalid_argument(format!(
                "unknown nonlinearity '{other}', expected zero or usq"
            ))),
        }
    }
}

/// Configuration of the semilinear self-convergence study. The backward
/// Euler scheme integrates `u' = Delta u + f(u)` from
/// `u0 = amplitude * P_h(sin(pi x) sin(pi y))` with `tau = h^2` per level,
/// and errors are measured against a fine reference run on nested grids.
#[derive(Debug, Clone)]
pub struct SemilinearStudyConfig {
    /// Refinement levels; powers of two, each dividing the largest.
    pub levels: Vec<usize>,
    /// Cells per side of the reference mesh; a multiple of every level.
    pub ref_n: usize,
    /// Reference time step.
    pub ref_tau: f64,
    /// Final time.
    pub t_final: f64,
    /// Amplitude of the initial value.
    pub amplitude: f64,
    /// Nonlinearity descriptor.
    pub nonlinearity: Nonlinearity,
}

impl Default for SemilinearStudyConfig {
    fn default() -> Self {
        SemilinearStudyConfig {
            levels: vec![8, 16, 32, 64],
            ref_n: 128,
            ref_tau: 1e-4,
            t_final: 0.25,
            amplitude: 0.1,
            nonlinearity: Nonlinearity::Square,
        }
    }
}

/// Results of the semilinear study: the `(p, q) = (4, 2)` time-discrete
/// error and the all-steps maximum-norm error, each with fitted slopes.
#[derive(Debug, Clone)]
pub struct SemilinearStudy {
    /// `(sum_n tau |e^n|_{L^2}^4)^{1/4}` per level.
    pub lq_report: ConvergenceReport,
    /// `max_n |e^n|_{L^infinity}` per level.
    pub linf_report: ConvergenceReport,
    /// Wall-clock seconds spent on the reference solve.
    pub reference_runtime_s: f64,
}

/// Runs the semilinear study: one fine reference solve, streamed onto the
/// node grid of the largest level at the union of all coarse time points
/// (linear interpolation in the reference time), then one coarse solve per
/// level comparing node values at shared grid points.
pub fn run_semilinear_study(cfg: &SemilinearStudyConfig) -> Result<SemilinearStudy> {
    let levels = checked_levels(&cfg.levels)?;
    let grid_n = *levels.last().expect("checked_levels guarantees entries");
    for &n in &levels {
        if !n.is_power_of_two() {
            return Err(Error::invalid_argument(format!(
                "semilinear levels must be powers of two for exact step nesting, got {n}"
            )));
        }
        if grid_n % n != 0 {
            return Err(Error::invalid_argument(format!(
                "every level must divide the largest ({grid_n}), got {n}"
            )));
        }
    }
    if cfg.ref_n % grid_n != 0 || cfg.ref_n <= grid_n {
        return Err(Error::invalid_argument(format!(
            "the reference resolution ({}) must be a proper multiple of the largest \
             level ({grid_n})",
            cfg.ref_n
        )));
    }
    if !(cfg.ref_tau > 0.0 && cfg.ref_tau.is_finite() && cfg.ref_tau <= cfg.t_final) {
        return Err(Error::invalid_argument(format!(
            "reference step must lie in (0, t_final], got {}",
            cfg.ref_tau
        )));
    }
    if !(cfg.t_final > 0.0 && cfg.t_final.is_finite()) {
        return Err(Error::invalid_argument(format!(
            "t_final must be positive and finite, got {}",
            cfg.t_final
        )));
    }
    // Coarse steps are the exact dyadic h^2 = 2/n^2, so every coarse time
    // is an exact multiple of the storage step tau_grid.
    let tau_grid = 2.0 / (grid_n * grid_n) as f64;
    let n_store_f = cfg.t_final / tau_grid;
    let n_store = n_store_f.round() as usize;
    if n_store == 0 || (n_store_f - n_store as f64).abs() > 1e-9 {
        return Err(Error::invalid_argument(format!(
            "t_final ({}) must be a multiple of the finest coarse step ({tau_grid})",
            cfg.t_final
        )));
    }

    let amplitude = cfg.amplitude;
    let initial =
        move |x: f64, y: f64| amplitude * (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin();
    let f = cfg.nonlinearity;
    let f_closure = move |z: f64| f.apply(z);

    // Reference solve, restricted on the fly to the storage grid.
    let ref_start = Instant::now();
    let ref_mesh = Arc::new(generate_structured_mesh(cfg.ref_n)?);
    let ref_ops = DiscreteOperatorSet::assemble(ref_mesh)?;
    let stride = cfg.ref_n / grid_n;
    let gp1 = grid_n + 1;
    let rp1 = cfg.ref_n + 1;
    let restrict_map: Vec<Option<usize>> = (0..gp1 * gp1)
        .map(|k| {
            let (i, j) = (k % gp1, k / gp1);
            ref_ops.mesh().interior_index((j * stride) * rp1 + i * stride)
        })
        .collect();
    let ref_cfg = SchemeConfig::new(1.0, cfg.ref_tau, cfg.t_final)?;
    let mut store: Vec<Vec<f64>> = Vec::with_capacity(n_store + 1);
    let mut prev: Option<(f64, Vec<f64>)> = None;
    let tiny = cfg.ref_tau * 1e-9;
    let ref_run = solve_semilinear(
        &ref_ops,
        &ref_cfg,
        &f_closure,
        InitialData::Project(&initial),
        |_, t, u| {
            let cur: Vec<f64> = restrict_map
                .iter()
                .map(|m| m.map_or(0.0, |idx| u.values()[idx]))
                .collect();
            if store.is_empty() {
                store.push(cur.clone());
            }
            if let Some((tp, pr)) = &prev {
                while store.len() <= n_store {
                    let ts = store.len() as f64 * tau_grid;
                    if ts > t + tiny {
                        break;
                    }
                    let frac = ((ts - tp) / (t - tp)).clamp(0.0, 1.0);
                    store.push(
                        pr.iter()
                            .zip(&cur)
                            .map(|(a, b)| a + frac * (b - a))
                            .collect(),
                    );
                }
            }
            prev = Some((t, cur));
            Ok(())
        },
    );
    match ref_run {
        Ok(_) => {}
        Err(Error::Overflow { step }) => {
            return Err(Error::invalid_argument(format!(
                "the reference solution left the finite range at t = {:.6} (step {step}); \
                 the solution life span ends before t_final = {} — shorten t_final",
                step as f64 * cfg.ref_tau,
                cfg.t_final
            )));
        }
        Err(e) => return Err(e),
    }
    if store.len() != n_store + 1 {
        return Err(Error::invalid_argument(format!(
            "reference run covered {} of {} required comparison times; \
             t_final is not reachable with the requested reference step",
            store.len(),
            n_store + 1
        )));
    }
    let reference_runtime_s = ref_start.elapsed().as_secs_f64();

    // Coarse solves, one per level, compared on shared nodes.
    struct LevelErrors {
        row_template: LevelRow,
        lq: f64,
        linf: f64,
    }
    let results: Vec<LevelErrors> = levels
        .par_iter()
        .map(|&n| -> Result<LevelErrors> {
            let start = Instant::now();
            let mesh = Arc::new(generate_structured_mesh(n)?);
            let ops = DiscreteOperatorSet::assemble(mesh)?;
            let tau = 2.0 / (n * n) as f64;
            let step_stride = {
                let r = grid_n / n;
                r * r
            };
            let node_stride = grid_n / n;
            let np1 = n + 1;
            // Coarse interior dof -> flat index on the storage grid.
            let mut dof_to_grid = vec![0usize; ops.n_dofs()];
            for node in 0..np1 * np1 {
                if let Some(ii) = ops.mesh().interior_index(node) {
                    let (i, j) = (node % np1, node / np1);
                    dof_to_grid[ii] = (j * node_stride) * gp1 + i * node_stride;
                }
            }
            let scheme = SchemeConfig::new(1.0, tau, cfg.t_final)?;
            let mut acc = SequenceAccumulator::new(NormSpec {
                p: 4.0,
                q: 2.0,
                tau,
            });
            let mut linf = 0.0_f64;
            solve_semilinear(
                &ops,
                &scheme,
                &f_closure,
                InitialData::Project(&initial),
                |k, _, u| {
                    let reference = &store[k * step_stride];
                    let diff: Vec<f64> = u
                        .values()
                        .iter()
                        .zip(&dof_to_grid)
                        .map(|(v, &g)| v - reference[g])
                        .collect();
                    let e = ops.function_from_values(diff)?;
                    linf = linf.max(e.max_abs());
                    if k >= 1 {
                        acc.push(norms::lq_norm(&ops, &e, 2.0)?);
                    }
                    Ok(())
                },
            )?;
            Ok(LevelErrors {
                row_template: LevelRow {
                    n,
                    h: ops.stats().h,
                    tau,
                    error: 0.0,
                    runtime_s: start.elapsed().as_secs_f64(),
                },
                lq: acc.finish(),
                linf,
            })
        })
        .collect::<Result<_>>()?;

    let make_report = |label: &str, pick: &dyn Fn(&LevelErrors) -> f64, p: f64, q: f64| -> Result<ConvergenceReport> {
        let rows: Vec<LevelRow> = results
            .iter()
            .map(|r| LevelRow {
                error: pick(r),
                ..r.row_template
            })
            .collect();
        let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
        let errs: Vec<f64> = rows.iter().map(|r| r.error).collect();
        let fitted_slope = fit_slope(&hs, &errs)?;
        Ok(ConvergenceReport {
            label: label.to_string(),
            variant: None,
            rows,
            fitted_slope,
            p,
            q,
            theta_averaged: false,
        })
    };
    Ok(SemilinearStudy {
        lq_report: make_report("semilinear-lptlq", &|r| r.lq, 4.0, 2.0)?,
        linf_report: make_report("semilinear-linf", &|r| r.linf, f64::INFINITY, f64::INFINITY)?,
        reference_runtime_s,
    })
}

/// Writes a report as CSV plus a log10 companion file (same name with a
/// `_log10` suffix) for plotting. Extra header entries (command line, seed)
/// are emitted before the report metadata. Returns the written paths.
/// Emission is a pure function of its arguments, so re-emitting an identical
/// report yields byte-identical files.
pub fn emit_report(
    report: &ConvergenceReport,
    path: &Path,
    extra_header: &[(&str, String)],
) -> Result<Vec<PathBuf>> {
    if report.rows.is_empty() {
        return Err(Error::invalid_argument("cannot emit an empty report"));
    }
    let norm_desc = format!(
        "p={} q={} theta_averaged={}",
        report.p, report.q, report.theta_averaged
    );
    let mut entries: Vec<(&str, String)> = extra_header.to_vec();
    entries.extend([
        ("report", report.label.clone()),
        ("variant", report.variant_str().to_string()),
        ("norm", norm_desc),
    ]);
    let mut main = textio::header(&entries);
    main.push_str("case,variant,n,h,tau,error,runtime_s\n");
    for r in &report.rows {
        main.push_str(&format!(
            "{},{},{},{},{},{},{:.3}\n",
            report.label,
            report.variant_str(),
            r.n,
            textio::full(r.h),
            textio::full(r.tau),
            textio::full(r.error),
            r.runtime_s
        ));
    }
    main.push_str(&format!("# fitted_slope={:.4}\n", report.fitted_slope));
    std::fs::write(path, &main)?;

    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("report");
    let log_path = path.with_file_name(format!("{stem}_log10.csv"));
    let mut log = textio::header(&entries);
    log.push_str("case,variant,n,log10_h,log10_tau,log10_error\n");
    for r in &report.rows {
        log.push_str(&format!(
            "{},{},{},{},{},{}\n",
            report.label,
            report.variant_str(),
            r.n,
            textio::full(r.h.log10()),
            textio::full(r.tau.log10()),
            textio::full(r.error.log10()),
        ));
    }
    log.push_str(&format!("# fitted_slope={:.4}\n", report.fitted_slope));
    std::fs::write(&log_path, &log)?;
    Ok(vec![path.to_path_buf(), log_path])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stepper::solve_linear_trajectory;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ops_for(n: usize) -> DiscreteOperatorSet {
        let mesh = Arc::new(generate_structured_mesh(n).unwrap());
        DiscreteOperatorSet::assemble(mesh).unwrap()
    }

    #[test]
    fn manufactured_solution_boundary_and_center_values() {
        let p = manufactured_problem();
        for v in [0.0, 1.0] {
            for w in [0.0, 0.25, 0.5, 1.0] {
                assert_eq!(p.solution(v, w, 0.0), 0.0);
                assert_eq!(p.solution(w, v, 0.3), 0.0);
            }
        }
        // 0.25^{5/2} * 0.25 = 2^{-10} * ... : s = 1/4, s^{5/2} = 1/32,
        // z = 1/4, so u(1/2, 1/2, 0) = 1/128.
        let center = p.solution(0.5, 0.5, 0.0);
        assert!((center - 0.0078125).abs() < 1e-16);
        // The time factor multiplies everything.
        assert!((p.solution(0.3, 0.7, 1.0) - p.solution(0.3, 0.7, 0.0) * 1.0_f64.exp()).abs() < 1e-16);
    }

    /// Finite-difference oracle: the source must satisfy
    /// du/dt - Laplace(u) - g = 0. Both derivatives are formed from the
    /// solution values alone with fourth-order central stencils, so this
    /// checks the hand-derived g independently.
    #[test]
    fn source_term_matches_finite_difference_residual() {
        let p = manufactured_problem();
        let u = |x: f64, y: f64, t: f64| p.solution(x, y, t);
        let h = 1e-3;
        let d2 = |f: &dyn Fn(f64) -> f64, c: f64| {
            (-f(c + 2.0 * h) + 16.0 * f(c + h) - 30.0 * f(c)
                + 16.0 * f(c - h)
                - f(c - 2.0 * h))
                / (12.0 * h * h)
        };
        let d1 = |f: &dyn Fn(f64) -> f64, c: f64| {
            (-f(c + 2.0 * h) + 8.0 * f(c + h) - 8.0 * f(c - h) + f(c - 2.0 * h))
                / (12.0 * h)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut worst = 0.0_f64;
        for _ in 0..20 {
            // Interior sample window: the solution is smooth inside the
            // square but only C^2-ish up to the x-boundaries, so the
            // stencil stays away from them.
            let x = 0.1 + 0.8 * rng.random::<f64>();
            let y = 0.1 + 0.8 * rng.random::<f64>();
            let t = rng.random::<f64>();
            let ut = d1(&|s| u(x, y, s), t);
            let uxx = d2(&|s| u(s, y, t), x);
            let uyy = d2(&|s| u(x, s, t), y);
            let g = p.source(x, y, t);
            let residual = (ut - uxx - uyy - g).abs();
            let scale = 1.0 + ut.abs() + (uxx + uyy).abs() + g.abs();
            let rel = residual / scale;
            worst = worst.max(rel);
            assert!(rel <= 1e-8, "({x:.3}, {y:.3}, {t:.3}): residual {rel:.3e}");
        }
        // Headroom check so the bound is meaningfully away from failure.
        assert!(worst < 1e-9, "worst relative residual {worst:.3e}");
    }

    #[test]
    fn case_specs_and_tau_rules() {
        assert!(case_spec(0).is_err());
        assert!(case_spec(6).is_err());
        let c1 = case_spec(1).unwrap();
        assert_eq!((c1.theta, c1.t_final), (0.0, 0.1));
        let c3 = case_spec(3).unwrap();
        assert_eq!((c3.theta, c3.t_final), (0.5, 0.5));
        let ops = ops_for(8);
        // Explicit stability bound with the default margin: kappa^2 / 9.
        let kappa = ops.stats().kappa;
        let tau = TauRule::StabilityBound.tau(ops.stats(), 0.0, 2).unwrap();
        assert!((tau - kappa * kappa / 9.0).abs() < 1e-18);
        assert!((TauRule::EqualH.tau(ops.stats(), 0.5, 2).unwrap() - ops.stats().h).abs() < 1e-16);
        let h2 = ops.stats().h * ops.stats().h;
        assert!((TauRule::HSquared.tau(ops.stats(), 1.0, 2).unwrap() - h2).abs() < 1e-16);
        // The bound rule is meaningless for unconditionally stable schemes.
        assert!(TauRule::StabilityBound.tau(ops.stats(), 1.0, 2).is_err());
    }

    #[test]
    fn slope_fit_recovers_synthetic_exponents() {
        let hs: [f64; 4] = [0.125, 0.0625, 0.03125, 0.015625];
        for alpha in [0.5, 1.0, 1.7, 2.0, 3.25] {
            let errs: Vec<f64> = hs.iter().map(|h| 3.7 * h.powf(alpha)).collect();
            let got = fit_slope(&hs, &errs).unwrap();
            assert!((got - alpha).abs() < 1e-6, "alpha {alpha}: got {got}");
        }
        assert!(fit_slope(&[0.1], &[0.2]).is_err());
        assert!(fit_slope(&[0.1, 0.2], &[0.0, 0.1]).is_err());
        assert!(fit_slope(&[0.1, 0.1], &[0.2, 0.2]).is_err());
    }

    #[test]
    fn linear_error_vanishes_when_states_match_the_interpolant() {
        let ops = ops_for(6);
        let p = manufactured_problem();
        let interp = ops.nodal_interpolant(&|x, y| p.spatial_solution(x, y));
        let tau = 0.05;
        let states: Vec<FemFunction> = (0..=6)
            .map(|k| interp.scaled(p.temporal(k as f64 * tau)))
            .collect();
        let traj = TrajectorySeries { states, tau };
        let err = linear_error(&ops, &traj, &|x, y, t| p.solution(x, y, t), 4.0, 2.0, 0.5)
            .unwrap();
        assert!(err < 1e-14, "err = {err}");
    }

    #[test]
    fn linear_error_is_positively_homogeneous() {
        let ops = ops_for(6);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tau = 0.1;
        let states: Vec<FemFunction> = (0..5)
            .map(|_| {
                let vals: Vec<f64> =
                    (0..ops.n_dofs()).map(|_| rng.random::<f64>() - 0.5).collect();
                ops.function_from_values(vals).unwrap()
            })
            .collect();
        let doubled: Vec<FemFunction> = states.iter().map(|s| s.scaled(2.0)).collect();
        let zero = |_: f64, _: f64, _: f64| 0.0;
        let a = linear_error(&ops, &TrajectorySeries { states, tau }, &zero, 4.0, 2.0, 1.0)
            .unwrap();
        let b = linear_error(
            &ops,
            &TrajectorySeries { states: doubled, tau },
            &zero,
            4.0,
            2.0,
            1.0,
        )
        .unwrap();
        assert!((b - 2.0 * a).abs() < 1e-13 * a);
    }

    #[test]
    fn streaming_case_error_matches_the_offline_form() {
        // The streaming accumulator inside run_linear_case must agree with
        // linear_error on a stored trajectory.
        let ops = ops_for(6);
        let p = manufactured_problem();
        let case = case_spec(5).unwrap();
        let tau = TauRule::HSquared.tau(ops.stats(), case.theta, 2).unwrap();
        let cfg = SchemeConfig::new(case.theta, tau, case.t_final).unwrap();
        let streamed = linear_case_error(&ops, &cfg, &p).unwrap();
        let spatial = |x: f64, y: f64| p.spatial_source(x, y);
        let temporal = |t: f64| p.temporal(t);
        let initial = |x: f64, y: f64| p.initial(x, y);
        let (traj, _) = solve_linear_trajectory(
            &ops,
            &cfg,
            SourceTerm::Separable {
                spatial: &spatial,
                temporal: &temporal,
            },
            InitialData::Project(&initial),
        )
        .unwrap();
        let offline = linear_error(
            &ops,
            &traj,
            &|x, y, t| p.solution(x, y, t),
            4.0,
            2.0,
            case.theta,
        )
        .unwrap();
        assert!(
            (streamed - offline).abs() < 1e-12 * offline,
            "{streamed} vs {offline}"
        );
    }

    #[test]
    fn backward_euler_case_converges_on_two_levels() {
        let report = run_linear_case(5, LoadVariant::A, &[8, 16]).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert!(report.rows[0].h > report.rows[1].h);
        assert!(report.rows[0].error > report.rows[1].error);
        assert!(
            (1.5..=2.5).contains(&report.fitted_slope),
            "slope {}",
            report.fitted_slope
        );
        assert!(report.rows.iter().all(|r| r.error > 0.0));
    }

    #[test]
    fn load_variants_differ_but_approach_each_other() {
        // Variant B feeds the projected load, so trajectories differ from
        // variant A at fixed h but both converge to the same solution.
        let mut gaps = Vec::new();
        for n in [8, 16] {
            let ops = ops_for(n);
            let p = manufactured_problem();
            let tau = ops.stats().h * ops.stats().h;
            let spatial = |x: f64, y: f64| p.spatial_source(x, y);
            let temporal = |t: f64| p.temporal(t);
            let initial = |x: f64, y: f64| p.initial(x, y);
            let mut finals = Vec::new();
            for variant in [LoadVariant::A, LoadVariant::B] {
                let cfg = SchemeConfig::new(0.5, tau, 0.1).unwrap().with_variant(variant);
                let summary = solve_linear(
                    &ops,
                    &cfg,
                    SourceTerm::Separable {
                        spatial: &spatial,
                        temporal: &temporal,
                    },
                    InitialData::Project(&initial),
                    |_, _, _| Ok(()),
                )
                .unwrap();
                finals.push(summary.final_state);
            }
            let diff = FemFunction::linear_comb(1.0, &finals[0], -1.0, &finals[1]);
            assert!(diff.max_abs() > 0.0);
            gaps.push(diff.max_abs());
        }
        assert!(gaps[1] < gaps[0], "gaps {gaps:?}");
    }

    #[test]
    fn semilinear_study_validations() {
        let bad_levels = SemilinearStudyConfig {
            levels: vec![6, 12],
            ref_n: 24,
            ..Default::default()
        };
        assert!(run_semilinear_study(&bad_levels).is_err());
        let non_divisor = SemilinearStudyConfig {
            levels: vec![4, 8],
            ref_n: 12,
            ..Default::default()
        };
        assert!(run_semilinear_study(&non_divisor).is_err());
        let too_coarse_ref = SemilinearStudyConfig {
            levels: vec![4, 8],
            ref_n: 8,
            ..Default::default()
        };
        assert!(run_semilinear_study(&too_coarse_ref).is_err());
    }

    #[test]
    fn semilinear_tiny_study_produces_decreasing_positive_errors() {
        let cfg = SemilinearStudyConfig {
            levels: vec![4, 8],
            ref_n: 16,
            ref_tau: 5e-4,
            t_final: 0.25,
            amplitude: 0.1,
            nonlinearity: Nonlinearity::Square,
        };
        let study = run_semilinear_study(&cfg).unwrap();
        for report in [&study.lq_report, &study.linf_report] {
            assert_eq!(report.rows.len(), 2);
            assert!(report.rows.iter().all(|r| r.error > 0.0 && r.error.is_finite()));
            assert!(report.rows[0].error > report.rows[1].error);
            // Exact dyadic step rule.
            for r in &report.rows {
                assert_eq!(r.tau, 2.0 / (r.n * r.n) as f64);
            }
        }
        assert!(study.reference_runtime_s >= 0.0);
    }

    #[test]
    fn semilinear_zero_nonlinearity_matches_the_linear_solver() {
        // With f = 0 the coarse runs are plain backward Euler decay, so the
        // study must reproduce solve_linear exactly on each level.
        let n = 8;
        let ops = ops_for(n);
        let tau = 2.0 / (n * n) as f64;
        let cfg = SchemeConfig::new(1.0, tau, 0.25).unwrap();
        let initial = |x: f64, y: f64| {
            0.1 * (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin()
        };
        let linear = solve_linear(
            &ops,
            &cfg,
            SourceTerm::Zero,
            InitialData::Project(&initial),
            |_, _, _| Ok(()),
        )
        .unwrap();
        let f = |_z: f64| 0.0;
        let semi = solve_semilinear(&ops, &cfg, &f, InitialData::Project(&initial), |_, _, _| {
            Ok(())
        })
        .unwrap();
        for (a, b) in linear
            .final_state
            .values()
            .iter()
            .zip(semi.final_state.values())
        {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn report_emission_is_deterministic_and_well_formed() {
        let report = ConvergenceReport {
            label: "case9".to_string(),
            variant: Some(LoadVariant::A),
            rows: (0..4)
                .map(|k| {
                    let h = 0.25 / (1 << k) as f64;
                    LevelRow {
                        n: 4 << k,
                        h,
                        tau: h * h,
                        error: 3.0 * h * h,
                        runtime_s: 0.125,
                    }
                })
                .collect(),
            fitted_slope: 2.0,
            p: 4.0,
            q: 2.0,
            theta_averaged: true,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        let extra = [("command", "study linear --cases 9".to_string())];
        let written = emit_report(&report, &path, &extra).unwrap();
        assert_eq!(written.len(), 2);
        assert!(std::fs::read_to_string(&written[0])
            .unwrap()
            .contains("# command: study linear --cases 9"));
        let text = std::fs::read_to_string(&written[0]).unwrap();
        let data_lines: Vec<&str> = text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.starts_with("case,"))
            .collect();
        assert_eq!(data_lines.len(), 4);
        assert!(text.contains("# fitted_slope=2.0000"));
        assert!(text.contains("case,variant,n,h,tau,error,runtime_s"));
        let log_text = std::fs::read_to_string(&written[1]).unwrap();
        assert!(log_text.contains("log10_error"));
        // Re-emission is byte-identical.
        emit_report(&report, &path, &extra).unwrap();
        assert_eq!(std::fs::read_to_string(&written[0]).unwrap(), text);
        assert_eq!(std::fs::read_to_string(&written[1]).unwrap(), log_text);
        // Synthetic exact h^2 data fits slope 2 to the printed precision.
        let hs: Vec<f64> = report.rows.iter().map(|r| r.h).collect();
        let errs: Vec<f64> = report.rows.iter().map(|r| r.error).collect();
        assert!((fit_slope(&hs, &errs).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn nonlinearity_parsing_and_display() {
        assert_eq!("usq".parse::<Nonlinearity>().unwrap(), Nonlinearity::Square);
        assert_eq!("zero".parse::<Nonlinearity>().unwrap(), Nonlinearity::Zero);
        assert!("cubic".parse::<Nonlinearity>().is_err());
        assert_eq!(Nonlinearity::Square.to_string(), "usq");
        assert_eq!(Nonlinearity::Square.apply(3.0), 9.0);
        assert_eq!(Nonlinearity::Zero.apply(3.0), 0.0);
    }
}
