//! Quadrature rules on triangles.
//!
//! The workhorse is the symmetric 7-point rule, exact for polynomials of
//! total degree 5. Barycentric points and weights (weights normalized to sum
//! to one, so physical weights are `w * area`):
//!
//! - centroid `(1/3, 1/3, 1/3)`, weight `9/40`;
//! - three points `(1-2b, b, b)` and permutations with `b = (6+sqrt15)/21`,
//!   weight `(155+sqrt15)/1200`;
//! - three points with `b = (6-sqrt15)/21`, weight `(155-sqrt15)/1200`.
//!
//! A refined level subdivides each triangle into its four midpoint
//! subtriangles and applies the same rule on each, for integrands (such as
//! composed nonlinearities) that are not well resolved by a single rule.

use once_cell::sync::Lazy;

/// A quadrature rule in barycentric coordinates; weights sum to one.
#[derive(Debug, Clone)]
pub struct TriQuadRule {
    /// Barycentric coordinates of each point, `(l0, l1, l2)`.
    pub points: Vec<[f64; 3]>,
    /// Reference weights; multiply by the element area for physical weights.
    pub weights: Vec<f64>,
}

static GAUSS7: Lazy<TriQuadRule> = Lazy::new(|| {
    let s15 = 15f64.sqrt();
    let b1 = (6.0 + s15) / 21.0;
    let a1 = (9.0 - 2.0 * s15) / 21.0;
    let w1 = (155.0 + s15) / 1200.0;
    let b2 = (6.0 - s15) / 21.0;
    let a2 = (9.0 + 2.0 * s15) / 21.0;
    let w2 = (155.0 - s15) / 1200.0;
    let third = 1.0 / 3.0;
    TriQuadRule {
        points: vec![
            [third, third, third],
            [a1, b1, b1],
            [b1, a1, b1],
            [b1, b1, a1],
            [a2, b2, b2],
            [b2, a2, b2],
            [b2, b2, a2],
        ],
        weights: vec![9.0 / 40.0, w1, w1, w1, w2, w2, w2],
    }
});

/// The symmetric 7-point rule, exact through degree 5.
pub fn gauss7() -> &'static TriQuadRule {
    &GAUSS7
}

/// Quadrature refinement level for element integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QuadLevel {
    /// Single 7-point rule per element (degree-5 exact).
    #[default]
    Standard,
    /// Four-fold midpoint subdivision, 28 points per element.
    Refined,
}

/// Visits the physical quadrature points of a triangle with vertices `p` and
/// area `area`, calling `f(x, y, weight)` with physical weights that sum to
/// `area`.
pub fn for_each_point(
    p: &[[f64; 2]; 3],
    area: f64,
    level: QuadLevel,
    mut f: impl FnMut(f64, f64, f64),
) {
    match level {
        QuadLevel::Standard => rule_on(p, area, &mut f),
        QuadLevel::Refined => {
            let m01 = mid(p[0], p[1]);
            let m12 = mid(p[1], p[2]);
            let m20 = mid(p[2], p[0]);
            let quarter = area / 4.0;
            rule_on(&[p[0], m01, m20], quarter, &mut f);
            rule_on(&[m01, p[1], m12], quarter, &mut f);
            rule_on(&[m20, m12, p[2]], quarter, &mut f);
            rule_on(&[m01, m12, m20], quarter, &mut f);
        }
    }
}

/// Like [`for_each_point`] but also reports the barycentric coordinates of
/// each point with respect to the *original* triangle, which is what P1
/// basis evaluation needs.
pub fn for_each_point_bary(
    p: &[[f64; 2]; 3],
    area: f64,
    level: QuadLevel,
    mut f: impl FnMut(f64, f64, f64, [f64; 3]),
) {
    match level {
        QuadLevel::Standard => {
            let rule = gauss7();
            for (pt, w) in rule.points.iter().zip(&rule.weights) {
                let x = pt[0] * p[0][0] + pt[1] * p[1][0] + pt[2] * p[2][0];
                let y = pt[0] * p[0][1] + pt[1] * p[1][1] + pt[2] * p[2][1];
                f(x, y, w * area, *pt);
            }
        }
        QuadLevel::Refined => {
            // Subtriangle vertices in barycentric coordinates of the parent.
            const V: [[[f64; 3]; 3]; 4] = [
                [[1.0, 0.0, 0.0], [0.5, 0.5, 0.0], [0.5, 0.0, 0.5]],
                [[0.5, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.5, 0.5]],
                [[0.5, 0.0, 0.5], [0.0, 0.5, 0.5], [0.0, 0.0, 1.0]],
                [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]],
            ];
            let rule = gauss7();
            let quarter = area / 4.0;
            for sub in &V {
                for (pt, w) in rule.points.iter().zip(&rule.weights) {
                    let mut lam = [0.0; 3];
                    for c in 0..3 {
                        lam[c] =
                            pt[0] * sub[0][c] + pt[1] * sub[1][c] + pt[2] * sub[2][c];
                    }
                    let x = lam[0] * p[0][0] + lam[1] * p[1][0] + lam[2] * p[2][0];
                    let y = lam[0] * p[0][1] + lam[1] * p[1][1] + lam[2] * p[2][1];
                    f(x, y, w * quarter, lam);
                }
            }
        }
    }
}

fn rule_on(p: &[[f64; 2]; 3], area: f64, f: &mut impl FnMut(f64, f64, f64)) {
    let rule = gauss7();
    for (pt, w) in rule.points.iter().zip(&rule.weights) {
        let x = pt[0] * p[0][0] + pt[1] * p[1][0] + pt[2] * p[2][0];
        let y = pt[0] * p[0][1] + pt[1] * p[1][1] + pt[2] * p[2][1];
        f(x, y, w * area);
    }
}

fn mid(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exact integral of x^p y^q over the unit reference triangle
    /// {x, y >= 0, x + y <= 1}: p! q! / (p + q + 2)!.
    fn monomial_exact(p: u32, q: u32) -> f64 {
        fn fact(k: u32) -> f64 {
            (1..=k).map(|i| i as f64).product()
        }
        fact(p) * fact(q) / fact(p + q + 2)
    }

    fn integrate(level: QuadLevel, p: u32, q: u32) -> f64 {
        let tri = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let mut acc = 0.0;
        for_each_point(&tri, 0.5, level, |x, y, w| {
            acc += w * x.powi(p as i32) * y.powi(q as i32);
        });
        acc
    }

    #[test]
    fn weights_sum_to_one() {
        let r = gauss7();
        let s: f64 = r.weights.iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
        for pt in &r.points {
            assert!((pt[0] + pt[1] + pt[2] - 1.0).abs() < 1e-15);
            assert!(pt.iter().all(|&l| l > 0.0));
        }
    }

    #[test]
    fn exact_through_degree_five() {
        for p in 0..=5u32 {
            for q in 0..=(5 - p) {
                let got = integrate(QuadLevel::Standard, p, q);
                let want = monomial_exact(p, q);
                assert!(
                    (got - want).abs() <= 1e-15 * want.max(1e-3),
                    "x^{p} y^{q}: got {got}, want {want}"
                );
            }
        }
    }

    #[test]
    fn refined_matches_on_degree_five_and_sums_area() {
        for p in 0..=5u32 {
            for q in 0..=(5 - p) {
                let got = integrate(QuadLevel::Refined, p, q);
                let want = monomial_exact(p, q);
                assert!((got - want).abs() <= 1e-14 * want.max(1e-3));
            }
        }
        let tri = [[1.0, 2.0], [4.0, 2.5], [2.0, 5.0]];
        let area = 0.5 * ((4.0 - 1.0) * (5.0 - 2.0) - (2.0 - 1.0) * (2.5 - 2.0));
        for level in [QuadLevel::Standard, QuadLevel::Refined] {
            let mut s = 0.0;
            for_each_point(&tri, area, level, |_, _, w| s += w);
            assert!((s - area).abs() < 1e-14 * area);
        }
    }

    #[test]
    fn refined_reduces_error_on_rough_integrand() {
        // |x - 1/3|^{1/2} is not a polynomial; subdivision must help.
        let tri = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let f = |x: f64, _y: f64| (x - 1.0 / 3.0).abs().sqrt();
        let mut coarse = 0.0;
        let mut fine = 0.0;
        for_each_point(&tri, 0.5, QuadLevel::Standard, |x, y, w| coarse += w * f(x, y));
        for_each_point(&tri, 0.5, QuadLevel::Refined, |x, y, w| fine += w * f(x, y));
        // Reference by 256-fold uniform barycentric subdivision of the rule.
        let mut reference = 0.0;
        let k = 64;
        for i in 0..k {
            for j in 0..(k - i) {
                let x0 = i as f64 / k as f64;
                let y0 = j as f64 / k as f64;
                let d = 1.0 / k as f64;
                let lower = [[x0, y0], [x0 + d, y0], [x0, y0 + d]];
                let a = 0.5 * d * d;
                for_each_point(&lower, a, QuadLevel::Standard, |x, y, w| {
                    reference += w * f(x, y)
                });
                if i + j < k - 1 {
                    let upper = [[x0 + d, y0], [x0 + d, y0 + d], [x0, y0 + d]];
                    for_each_point(&upper, a, QuadLevel::Standard, |x, y, w| {
                        reference += w * f(x, y)
                    });
                }
            }
        }
        assert!((fine - reference).abs() < (coarse - reference).abs());
    }

    #[test]
    fn barycentric_variant_consistent() {
        let tri = [[0.2, 0.1], [1.3, 0.4], [0.5, 1.7]];
        let area = 0.5 * ((1.3 - 0.2) * (1.7 - 0.1) - (0.5 - 0.2) * (0.4 - 0.1));
        for level in [QuadLevel::Standard, QuadLevel::Refined] {
            let mut max_dev = 0.0f64;
            let mut wsum = 0.0;
            for_each_point_bary(&tri, area, level, |x, y, w, lam| {
                let xr = lam[0] * tri[0][0] + lam[1] * tri[1][0] + lam[2] * tri[2][0];
                let yr = lam[0] * tri[0][1] + lam[1] * tri[1][1] + lam[2] * tri[2][1];
                max_dev = max_dev.max((x - xr).abs().max((y - yr).abs()));
                max_dev = max_dev.max((lam[0] + lam[1] + lam[2] - 1.0).abs());
                wsum += w;
            });
            assert!(max_dev < 1e-14);
            assert!((wsum - area).abs() < 1e-14);
        }
    }
}
