//! Discrete norms for P1 functions and time sequences of them.
//!
//! Three families of spatial norms, each taking the exponent `q` as an
//! `f64` with `f64::INFINITY` for the max norm:
//!
//! - the *lumped* norm `(sum_j |v_j|^q |Lambda_j|)^{1/q}` over free nodes,
//!   with `|Lambda_j|` the node measure;
//! - the *Lebesgue* norm of the P1 function itself, computed exactly
//!   through the consistent mass matrix for `q = 2` and by element
//!   quadrature otherwise (`q = infinity` reduces to the nodal max, since
//!   P1 functions attain their extrema at vertices);
//! - the *gradient* seminorm, exact for every `q` because P1 gradients are
//!   constant per element.
//!
//! Time sequences are measured by the weighted little-Lebesgue norm
//! `(sum_n tau * N(v^n)^p)^{1/p}` over all supplied entries, with the max
//! over entries for `p = infinity`. The theta-weighted average of a
//! sequence, `v^{n+theta} = (1-theta) v^n + theta v^{n+1}`, shortens the
//! sequence by one entry.

use crate::assembly::{DiscreteOperatorSet, FemFunction};
use crate::error::{Error, Result};
use crate::linalg::Scalar;

/// Validates a Lebesgue exponent: any `q >= 1`, including infinity.
fn check_exponent(q: f64, name: &str) -> Result<()> {
    if q.is_nan() || q < 1.0 {
        return Err(Error::invalid_argument(format!(
            "{name} exponent must satisfy {name} >= 1 (or be infinite), got {q}"
        )));
    }
    Ok(())
}

/// Lumped norm `(sum_j |v_j|^q |Lambda_j|)^{1/q}`; `q = infinity` gives the
/// nodal max.
pub fn lumped_norm<T: Scalar>(
    ops: &DiscreteOperatorSet,
    f: &FemFunction<T>,
    q: f64,
) -> Result<f64> {
    ops.check(f)?;
    check_exponent(q, "q")?;
    if q.is_infinite() {
        return Ok(f.max_abs());
    }
    let mut acc = 0.0;
    for (v, &w) in f.values().iter().zip(ops.lumped_masses()) {
        acc += v.modulus().powf(q) * w;
    }
    Ok(acc.powf(1.0 / q))
}

/// Lumped inner product `(x, y)_h = sum_j x_j conj(y_j) |Lambda_j|`,
/// returned as `(real, imaginary)` parts via the scalar kernel. For real
/// functions the imaginary part is zero.
pub fn lumped_inner<T: Scalar>(
    ops: &DiscreteOperatorSet,
    x: &FemFunction<T>,
    y: &FemFunction<T>,
) -> Result<f64> {
    ops.check(x)?;
    ops.check(y)?;
    let mut acc = 0.0;
    for ((a, b), &w) in x.values().iter().zip(y.values()).zip(ops.lumped_masses()) {
        acc += a.dot(*b) * w;
    }
    Ok(acc)
}

/// Lebesgue norm of the P1 function. Exact for `q = 2` (mass matrix) and
/// `q = infinity` (nodal max); element quadrature otherwise.
pub fn lq_norm<T: Scalar>(
    ops: &DiscreteOperatorSet,
    f: &FemFunction<T>,
    q: f64,
) -> Result<f64> {
    ops.check(f)?;
    check_exponent(q, "q")?;
    if q.is_infinite() {
        return Ok(f.max_abs());
    }
    if q == 2.0 {
        let mv = ops.mass().matvec(f.values());
        let mut acc = 0.0;
        for (a, b) in f.values().iter().zip(&mv) {
            acc += a.dot(*b);
        }
        return Ok(acc.max(0.0).sqrt());
    }
    let vals = f.values();
    let mut acc = 0.0;
    ops.for_each_element_quad(|local, w, lam, _area| {
        let mut u = T::ZERO;
        for a in 0..3 {
            if let Some(ia) = local[a] {
                u += vals[ia].scale(lam[a]);
            }
        }
        acc += w * u.modulus().powf(q);
    });
    Ok(acc.powf(1.0 / q))
}

/// Gradient seminorm `(sum_K |K| |grad v|^q)^{1/q}`; exact for every `q`
/// because P1 gradients are constant on elements. `q = infinity` gives the
/// largest element gradient magnitude; `q = 2` equals `sqrt(v^T S v)`.
pub fn w1q_seminorm<T: Scalar>(
    ops: &DiscreteOperatorSet,
    f: &FemFunction<T>,
    q: f64,
) -> Result<f64> {
    ops.check(f)?;
    check_exponent(q, "q")?;
    let vals = f.values();
    let mut acc = 0.0f64;
    let mut max_grad = 0.0f64;
    ops.for_each_element(|local, grads, area| {
        let mut gx = T::ZERO;
        let mut gy = T::ZERO;
        for a in 0..3 {
            if let Some(ia) = local[a] {
                gx += vals[ia].scale(grads[a][0]);
                gy += vals[ia].scale(grads[a][1]);
            }
        }
        let mag = (gx.modulus_sq() + gy.modulus_sq()).sqrt();
        if q.is_infinite() {
            max_grad = max_grad.max(mag);
        } else {
            acc += area * mag.powf(q);
        }
    });
    if q.is_infinite() {
        Ok(max_grad)
    } else {
        Ok(acc.powf(1.0 / q))
    }
}

/// Spatial norm selector for sequence norms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialNorm {
    /// Lebesgue norm of the P1 function ([`lq_norm`]).
    Lebesgue,
    /// Lumped nodal norm ([`lumped_norm`]).
    Lumped,
}

/// Exponents and step size of a sequence norm
/// `(sum_n tau * ||v^n||_q^p)^{1/p}`.
#[derive(Debug, Clone, Copy)]
pub struct NormSpec {
    /// Time exponent, `>= 1` or infinite.
    pub p: f64,
    /// Space exponent, `>= 1` or infinite.
    pub q: f64,
    /// Time-step weight.
    pub tau: f64,
}

impl NormSpec {
    /// Validates the exponents and step weight.
    pub fn validate(&self) -> Result<()> {
        check_exponent(self.p, "p")?;
        check_exponent(self.q, "q")?;
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid_argument(format!(
                "tau must be positive and finite, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Applies the spatial norm selected by `spatial`.
pub fn spatial_norm<T: Scalar>(
    ops: &DiscreteOperatorSet,
    f: &FemFunction<T>,
    q: f64,
    spatial: SpatialNorm,
) -> Result<f64> {
    match spatial {
        SpatialNorm::Lebesgue => lq_norm(ops, f, q),
        SpatialNorm::Lumped => lumped_norm(ops, f, q),
    }
}

/// Weighted sequence norm over all supplied entries:
/// `(sum_n tau * N_q(v^n)^p)^{1/p}`, max over entries for `p = infinity`.
pub fn bochner_norm<T: Scalar>(
    ops: &DiscreteOperatorSet,
    series: &[FemFunction<T>],
    spec: &NormSpec,
    spatial: SpatialNorm,
) -> Result<f64> {
    spec.validate()?;
    if series.is_empty() {
        return Err(Error::invalid_argument(
            "sequence norm of an empty sequence is undefined",
        ));
    }
    let mut acc = SequenceAccumulator::new(*spec);
    for f in series {
        acc.push(spatial_norm(ops, f, spec.q, spatial)?);
    }
    Ok(acc.finish())
}

/// Streaming accumulator for the weighted sequence norm, for callers that
/// cannot afford to keep a full trajectory in memory.
#[derive(Debug, Clone)]
pub struct SequenceAccumulator {
    spec: NormSpec,
    acc: f64,
    count: usize,
}

impl SequenceAccumulator {
    /// Starts an empty accumulation with validated exponents.
    pub fn new(spec: NormSpec) -> Self {
        SequenceAccumulator { spec, acc: 0.0, count: 0 }
    }

    /// Adds one entry's spatial norm value.
    pub fn push(&mut self, norm_value: f64) {
        if self.spec.p.is_infinite() {
            self.acc = self.acc.max(norm_value);
        } else {
            self.acc += self.spec.tau * norm_value.powf(self.spec.p);
        }
        self.count += 1;
    }

    /// Number of entries pushed.
    pub fn len(&self) -> usize {
        self.count
    }

    /// True before any entry is pushed.
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Completes the accumulation.
    pub fn finish(&self) -> f64 {
        if self.spec.p.is_infinite() {
            self.acc
        } else {
            self.acc.powf(1.0 / self.spec.p)
        }
    }
}

/// Theta-weighted averages of consecutive entries:
/// `v^{n+theta} = (1-theta) v^n + theta v^{n+1}`. The result has one entry
/// fewer than the input.
pub fn theta_average<T: Scalar>(
    series: &[FemFunction<T>],
    theta: f64,
) -> Result<Vec<FemFunction<T>>> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::invalid_argument(format!(
            "theta must lie in [0, 1], got {theta}"
        )));
    }
    if series.is_empty() {
        return Err(Error::invalid_argument(
            "theta average of an empty sequence is undefined",
        ));
    }
    Ok(series
        .windows(2)
        .map(|w| FemFunction::linear_comb(1.0 - theta, &w[0], theta, &w[1]))
        .collect())
}
