//! Theta-scheme time stepping for the mass-lumped heat equation.
//!
//! One step of the scheme for `u' = Delta u + g` reads
//!
//! ```text
//! D (u^{n+1} - u^n) / tau + S u^{n+theta} = l^{n+theta},
//! u^{n+theta} = (1 - theta) u^n + theta u^{n+1},
//! ```
//!
//! with `D` the lumped mass diagonal and `S` the stiffness matrix, i.e. the
//! linear system `(D + tau theta S) u^{n+1} = D u^n - tau (1-theta) S u^n +
//! tau l^{n+theta}`. The load `l` comes in two variants:
//!
//! - variant `A`: `l = b`, the plain load vector `b_j = integral g phi_j`,
//!   theta-averaged in time;
//! - variant `B`: `l = D M^{-1} b`, which first projects `g` onto the P1
//!   space and then feeds the lumped form of the projection.
//!
//! For `theta >= 1/2` the scheme is unconditionally stable. For
//! `theta < 1/2` stability in the `q`-norm requires
//!
//! ```text
//! tau <= kappa_h^2 (2 sin(theta_q) - eps) / ((1 - 2 theta) (d + 1)^2),
//! theta_q = arccos |1 - 2/q|,  eps in (0, 2 sin(theta_q)),
//! ```
//!
//! with `kappa_h` the smallest vertex-to-facet distance of the mesh. When
//! no margin `eps` is supplied the bound is evaluated at `eps =
//! sin(theta_q)`, i.e. `tau_max = kappa_h^2 sin(theta_q) / ((1 - 2 theta)
//! (d + 1)^2)`. Violations abort the solve unless the caller forces it.
//!
//! Also provided: the same recurrence with caller-supplied abstract loads
//! `g^n` entering as `D g^n` (for regularity and positivity probes), and a
//! semi-implicit backward Euler path for semilinear right-hand sides
//! `u' = Delta u + f(u)`.

use crate::assembly::{DiscreteOperatorSet, FemFunction};
use crate::error::{Error, Result};
use crate::linalg::SpdSolver;
use crate::tolerances;

/// `theta_q = arccos |1 - 2/q|` for `q` in `(1, infinity)`.
pub fn theta_q(q: f64) -> Result<f64> {
    if !(q > 1.0 && q.is_finite()) {
        return Err(Error::invalid_argument(format!(
            "stability exponent q must lie in (1, infinity), got {q}"
        )));
    }
    Ok((1.0 - 2.0 / q).abs().acos())
}

/// Outcome of the conditional stability test.
#[derive(Debug, Clone, Copy)]
pub struct StabilityCheck {
    /// Whether the scheme is conditionally stable (`theta < 1/2`).
    pub required: bool,
    /// Whether the requested step satisfies the bound.
    pub satisfied: bool,
    /// Largest admissible step (`infinity` for `theta >= 1/2`).
    pub tau_max: f64,
}

/// Evaluates the stability bound for a `theta`-scheme with step `tau` on a
/// mesh with smallest altitude `kappa_h` in dimension `dim`, targeting the
/// `q`-norm. `epsilon` is the margin inside the bound; `None` uses
/// `sin(theta_q)`.
pub fn check_stability(
    theta: f64,
    tau: f64,
    kappa_h: f64,
    dim: usize,
    q: f64,
    epsilon: Option<f64>,
) -> Result<StabilityCheck> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::invalid_argument(format!(
            "theta must lie in [0, 1], got {theta}"
        )));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid_argument(format!(
            "tau must be positive and finite, got {tau}"
        )));
    }
    if !(kappa_h > 0.0) {
        return Err(Error::invalid_argument(format!(
            "kappa_h must be positive, got {kappa_h}"
        )));
    }
    if theta >= 0.5 {
        return Ok(StabilityCheck {
            required: false,
            satisfied: true,
            tau_max: f64::INFINITY,
        });
    }
    let s = theta_q(q)?.sin();
    let eps = epsilon.unwrap_or(s);
    if !(eps > 0.0 && eps < 2.0 * s) {
        return Err(Error::invalid_argument(format!(
            "stability margin must lie in (0, {:.6}), got {eps}",
            2.0 * s
        )));
    }
    let d1 = (dim + 1) as f64;
    let tau_max = kappa_h * kappa_h * (2.0 * s - eps) / ((1.0 - 2.0 * theta) * d1 * d1);
    Ok(StabilityCheck {
        required: true,
        satisfied: tau <= tau_max * (1.0 + tolerances::STABILITY_CMP_SLACK),
        tau_max,
    })
}

/// How the source term enters the right-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoadVariant {
    /// Plain load vector `b_j = integral g phi_j`.
    #[default]
    A,
    /// Projected load `D M^{-1} b` (lumped form of the L2 projection).
    B,
}

impl std::fmt::Display for LoadVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LoadVariant::A => write!(f, "A"),
            LoadVariant::B => write!(f, "B"),
        }
    }
}

impl std::str::FromStr for LoadVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(LoadVariant::A),
            "B" | "b" => Ok(LoadVariant::B),
            other => Err(Error::invalid_argument(format!(
                "unknown load variant '{other}', expected A or B"
            ))),
        }
    }
}

/// Parameters of a theta-scheme run.
#[derive(Debug, Clone, Copy)]
pub struct SchemeConfig {
    /// Implicitness parameter in `[0, 1]`.
    pub theta: f64,
    /// Time step.
    pub tau: f64,
    /// Final time; the number of steps is `floor(t_final / tau)`.
    pub t_final: f64,
    /// Load variant.
    pub variant: LoadVariant,
    /// Norm exponent targeted by the stability bound.
    pub stability_q: f64,
    /// Stability margin; `None` uses `sin(theta_q)`.
    pub epsilon: Option<f64>,
    /// Proceed even if the stability bound is violated.
    pub force: bool,
}

impl SchemeConfig {
    /// Creates a configuration with variant `A`, stability exponent 2, the
    /// default margin, and enforcement on.
    pub fn new(theta: f64, tau: f64, t_final: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::invalid_argument(format!(
                "theta must lie in [0, 1], got {theta}"
            )));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::invalid_argument(format!(
                "tau must be positive and finite, got {tau}"
            )));
        }
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::invalid_argument(format!(
                "t_final must be positive and finite, got {t_final}"
            )));
        }
        Ok(SchemeConfig {
            theta,
            tau,
            t_final,
            variant: LoadVariant::A,
            stability_q: 2.0,
            epsilon: None,
            force: false,
        })
    }

    /// Number of steps `floor(t_final / tau)`, with a relative guard so an
    /// exact multiple is not lost to rounding.
    pub fn n_steps(&self) -> usize {
        let r = self.t_final / self.tau;
        (r * (1.0 + 1e-12)).floor() as usize
    }

    /// Sets the load variant.
    pub fn with_variant(mut self, v: LoadVariant) -> Self {
        self.variant = v;
        self
    }

    /// Sets the stability exponent.
    pub fn with_stability_q(mut self, q: f64) -> Self {
        self.stability_q = q;
        self
    }

    /// Sets the stability margin.
    pub fn with_epsilon(mut self, eps: f64) -> Self {
        self.epsilon = Some(eps);
        self
    }

    /// Disables stability enforcement.
    pub fn forced(mut self) -> Self {
        self.force = true;
        self
    }
}

/// Time-dependent source term `g(x, y, t)`.
pub enum SourceTerm<'a> {
    /// `g = 0`.
    Zero,
    /// `g(x, y, t) = spatial(x, y) * temporal(t)`; the spatial load vector
    /// is assembled once.
    Separable {
        /// Spatial factor.
        spatial: &'a dyn Fn(f64, f64) -> f64,
        /// Temporal factor.
        temporal: &'a dyn Fn(f64) -> f64,
    },
    /// General space-time source; one load assembly per step.
    General(&'a dyn Fn(f64, f64, f64) -> f64),
}

/// Initial state of a run.
pub enum InitialData<'a> {
    /// L2 projection of a function onto the P1 space.
    Project(&'a dyn Fn(f64, f64) -> f64),
    /// Ready-made coefficient vector.
    Values(FemFunction),
}

/// Result of a time-stepping run.
#[derive(Debug, Clone)]
pub struct SolveSummary {
    /// Number of steps taken.
    pub steps: usize,
    /// Final time reached (`steps * tau`).
    pub t_end: f64,
    /// Largest nodal magnitude over the whole run.
    pub max_abs: f64,
    /// Stability assessment of the run.
    pub stability: StabilityCheck,
    /// State after the last step.
    pub final_state: FemFunction,
}

enum StepSolver {
    /// `theta = 0`: the system matrix is the lumped diagonal.
    Diagonal(Vec<f64>),
    Spd(Box<SpdSolver>),
}

impl StepSolver {
    fn build(ops: &DiscreteOperatorSet, tau_theta: f64) -> Result<Self> {
        if tau_theta == 0.0 {
            Ok(StepSolver::Diagonal(ops.lumped_masses().to_vec()))
        } else {
            let m = ops
                .stiffness()
                .scaled_plus_diag(tau_theta, ops.lumped_masses())?;
            Ok(StepSolver::Spd(Box::new(SpdSolver::new(&m)?)))
        }
    }

    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        match self {
            StepSolver::Diagonal(d) => {
                Ok(rhs.iter().zip(d).map(|(r, d)| r / d).collect())
            }
            StepSolver::Spd(s) => s.solve(rhs),
        }
    }
}

fn resolve_initial(
    ops: &DiscreteOperatorSet,
    initial: InitialData<'_>,
) -> Result<FemFunction> {
    match initial {
        InitialData::Project(f) => ops.l2_projection(f),
        InitialData::Values(v) => {
            ops.check(&v)?;
            Ok(v)
        }
    }
}

fn stability_gate(
    ops: &DiscreteOperatorSet,
    cfg: &SchemeConfig,
) -> Result<StabilityCheck> {
    let check = check_stability(
        cfg.theta,
        cfg.tau,
        ops.stats().kappa,
        ops.mesh().dim(),
        cfg.stability_q,
        cfg.epsilon,
    )?;
    if check.required && !check.satisfied && !cfg.force {
        return Err(Error::Stability {
            tau: cfg.tau,
            tau_max: check.tau_max,
        });
    }
    Ok(check)
}

/// Runs the theta scheme for `u' = Delta u + g` with homogeneous Dirichlet
/// data. The observer receives every state in order, starting with the
/// initial one: `observer(step, t, u)` for `step = 0 ..= n_steps`.
pub fn solve_linear(
    ops: &DiscreteOperatorSet,
    cfg: &SchemeConfig,
    source: SourceTerm<'_>,
    initial: InitialData<'_>,
    mut observer: impl FnMut(usize, f64, &FemFunction) -> Result<()>,
) -> Result<SolveSummary> {
    let stability = stability_gate(ops, cfg)?;
    let n_steps = cfg.n_steps();
    let tau = cfg.tau;
    let theta = cfg.theta;
    let solver = StepSolver::build(ops, tau * theta)?;
    let n = ops.n_dofs();
    let lumped = ops.lumped_masses();

    let spatial_load = match &source {
        SourceTerm::Separable { spatial, .. } => Some(ops.load_vector(*spatial)),
        _ => None,
    };
    // Load vector at time t (before the variant transform).
    let raw_load = |t: f64| -> Vec<f64> {
        match &source {
            SourceTerm::Zero => vec![0.0; n],
            SourceTerm::Separable { temporal, .. } => {
                let c = temporal(t);
                spatial_load.as_ref().unwrap().iter().map(|b| b * c).collect()
            }
            SourceTerm::General(g) => ops.load_vector(&|x, y| g(x, y, t)),
        }
    };
    let mut u = resolve_initial(ops, initial)?;
    let mut max_abs = u.max_abs();
    observer(0, 0.0, &u)?;

    let mut b_prev = raw_load(0.0);
    let mut su = vec![0.0; n];
    for step in 0..n_steps {
        let t_next = (step + 1) as f64 * tau;
        let b_next = raw_load(t_next);
        // Theta-average of the load, then the variant transform.
        let mut load: Vec<f64> = b_prev
            .iter()
            .zip(&b_next)
            .map(|(a, b)| (1.0 - theta) * a + theta * b)
            .collect();
        if cfg.variant == LoadVariant::B && !matches!(source, SourceTerm::Zero) {
            let proj = ops.mass_solve(&load)?;
            for (l, (&p, &d)) in load.iter_mut().zip(proj.iter().zip(lumped)) {
                *l = p * d;
            }
        }
        ops.stiffness().matvec_into(u.values(), &mut su);
        let rhs: Vec<f64> = (0..n)
            .map(|j| {
                lumped[j] * u.values()[j] - tau * (1.0 - theta) * su[j] + tau * load[j]
            })
            .collect();
        let next = solver.solve(&rhs)?;
        u = ops.function_from_values(next)?;
        if !u.all_finite() {
            return Err(Error::Overflow { step: step + 1 });
        }
        max_abs = max_abs.max(u.max_abs());
        observer(step + 1, t_next, &u)?;
        b_prev = b_next;
    }
    Ok(SolveSummary {
        steps: n_steps,
        t_end: n_steps as f64 * tau,
        max_abs,
        stability,
        final_state: u,
    })
}

/// Runs the theta scheme with caller-supplied abstract loads: step `n` uses
/// `D (u^{n+1} - u^n) / tau + S u^{n+theta} = D g^n`, i.e. the load `g^n`
/// is a nodal function entering through the lumped mass. `loads` must
/// provide at least `n_steps` entries.
pub fn solve_theta_scheme(
    ops: &DiscreteOperatorSet,
    cfg: &SchemeConfig,
    loads: &[FemFunction],
    initial: InitialData<'_>,
    mut observer: impl FnMut(usize, f64, &FemFunction) -> Result<()>,
) -> Result<SolveSummary> {
    let stability = stability_gate(ops, cfg)?;
    let n_steps = cfg.n_steps();
    if loads.len() < n_steps {
        return Err(Error::invalid_argument(format!(
            "{} loads supplied but {n_steps} steps requested",
            loads.len()
        )));
    }
    let tau = cfg.tau;
    let theta = cfg.theta;
    let solver = StepSolver::build(ops, tau * theta)?;
    let n = ops.n_dofs();
    let lumped = ops.lumped_masses();
    let mut u = resolve_initial(ops, initial)?;
    let mut max_abs = u.max_abs();
    observer(0, 0.0, &u)?;
    let mut su = vec![0.0; n];
    for step in 0..n_steps {
        ops.check(&loads[step])?;
        let g = loads[step].values();
        ops.stiffness().matvec_into(u.values(), &mut su);
        let rhs: Vec<f64> = (0..n)
            .map(|j| {
                lumped[j] * (u.values()[j] + tau * g[j]) - tau * (1.0 - theta) * su[j]
            })
            .collect();
        let next = solver.solve(&rhs)?;
        u = ops.function_from_values(next)?;
        if !u.all_finite() {
            return Err(Error::Overflow { step: step + 1 });
        }
        max_abs = max_abs.max(u.max_abs());
        observer(step + 1, (step + 1) as f64 * tau, &u)?;
    }
    Ok(SolveSummary {
        steps: n_steps,
        t_end: n_steps as f64 * tau,
        max_abs,
        stability,
        final_state: u,
    })
}

/// Semi-implicit backward Euler for the semilinear problem
/// `u' = Delta u + f(u)`: `(D + tau S) u^{n+1} = D u^n + tau b(u^n)` with
/// `b_j(v) = integral f(v_h(x)) phi_j(x)`. Only `theta = 1` is supported;
/// the nonlinearity is evaluated at the previous state, so each step costs
/// one linear solve.
pub fn solve_semilinear(
    ops: &DiscreteOperatorSet,
    cfg: &SchemeConfig,
    f: &dyn Fn(f64) -> f64,
    initial: InitialData<'_>,
    mut observer: impl FnMut(usize, f64, &FemFunction) -> Result<()>,
) -> Result<SolveSummary> {
    if cfg.theta != 1.0 {
        return Err(Error::invalid_argument(format!(
            "the semilinear scheme is backward Euler only (theta = 1), got theta = {}",
            cfg.theta
        )));
    }
    let stability = stability_gate(ops, cfg)?;
    let n_steps = cfg.n_steps();
    let tau = cfg.tau;
    let solver = StepSolver::build(ops, tau)?;
    let n = ops.n_dofs();
    let lumped = ops.lumped_masses();
    let mut u = resolve_initial(ops, initial)?;
    let mut max_abs = u.max_abs();
    observer(0, 0.0, &u)?;
    for step in 0..n_steps {
        let b = ops.nonlinear_load(&u, f)?;
        let rhs: Vec<f64> = (0..n)
            .map(|j| lumped[j] * u.values()[j] + tau * b[j])
            .collect();
        let next = solver.solve(&rhs)?;
        u = ops.function_from_values(next)?;
        if !u.all_finite() {
            return Err(Error::Overflow { step: step + 1 });
        }
        max_abs = max_abs.max(u.max_abs());
        observer(step + 1, (step + 1) as f64 * tau, &u)?;
    }
    Ok(SolveSummary {
        steps: n_steps,
        t_end: n_steps as f64 * tau,
        max_abs,
        stability,
        final_state: u,
    })
}

/// Radial truncation of a scalar nonlinearity at level `m > 0`:
/// `f_m(z) = f(z)` for `|z| <= m` and `f(m sign(z))` beyond.
pub fn truncate_nonlinearity<'a>(
    f: &'a dyn Fn(f64) -> f64,
    m: f64,
) -> Result<impl Fn(f64) -> f64 + 'a> {
    if !(m > 0.0) {
        return Err(Error::invalid_argument(format!(
            "truncation level must be positive, got {m}"
        )));
    }
    Ok(move |z: f64| {
        if z.abs() <= m {
            f(z)
        } else {
            f(m * z.signum())
        }
    })
}

/// A stored trajectory: all states of a run plus the step size.
#[derive(Debug, Clone)]
pub struct TrajectorySeries {
    /// States `u^0 .. u^N` in step order.
    pub states: Vec<FemFunction>,
    /// Step size.
    pub tau: f64,
}

/// Convenience wrapper around [`solve_linear`] that stores the whole
/// trajectory. Memory grows with `n_dofs * n_steps`; prefer the observer
/// form for long runs.
pub fn solve_linear_trajectory(
    ops: &DiscreteOperatorSet,
    cfg: &SchemeConfig,
    source: SourceTerm<'_>,
    initial: InitialData<'_>,
) -> Result<(TrajectorySeries, SolveSummary)> {
    let mut states = Vec::with_capacity(cfg.n_steps() + 1);
    let summary = solve_linear(ops, cfg, source, initial, |_, _, u| {
        states.push(u.clone());
        Ok(())
    })?;
    Ok((TrajectorySeries { states, tau: cfg.tau }, summary))
}
