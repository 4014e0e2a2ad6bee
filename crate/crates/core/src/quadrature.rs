//! Gauss-Legendre rules and the nested outer/inner quadrature plan used by
//! the integral prior.
//!
//! The outer rule discretizes the fidelity integral over the whole time
//! domain with a single M-point rule. Each inner integral (vector field from
//! the domain start to an outer node) uses a composite rule: K Gauss points
//! per inter-knot piece, which is exact when the field composed with the
//! spline is a piecewise polynomial of degree <= 2K-1. The pieces below an
//! outer node are shared across nodes, so the plan splits every inner rule
//! into full pieces plus one partial segment.

use crate::basis::{eval_basis, BasisMatrix, BasisSpec};
use crate::error::{Error, Result};

/// Nodes and weights of a quadrature rule on `[a, b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub interval: (f64, f64),
}

impl GaussRule {
    /// Integrate `f` with this rule.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// A rule with no nodes over a degenerate interval.
    pub(crate) fn empty(at: f64) -> Self {
        Self {
            nodes: Vec::new(),
            weights: Vec::new(),
            interval: (at, at),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Newton tolerance on the reference interval.
const NEWTON_TOL: f64 = 1e-14;
const NEWTON_MAX_ITER: usize = 100;

/// Legendre polynomial P_n and its derivative at `x`, via the three-term
/// recurrence.
fn legendre_and_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    // P_n'(x) = n (x P_n - P_{n-1}) / (x^2 - 1)
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// n-point Gauss-Legendre rule on `[a, b]`.
///
/// Roots of P_n are found by Newton iteration from the Chebyshev-like initial
/// guess; the rule is exact for polynomials of degree <= 2n-1.
pub fn gauss_legendre(n: usize, interval: (f64, f64)) -> Result<GaussRule> {
    let (a, b) = interval;
    if n < 1 {
        return Err(Error::InvalidDimension(
            "quadrature rule needs at least one node".into(),
        ));
    }
    if !(a < b) {
        return Err(Error::InvalidDimension(format!(
            "quadrature interval [{a}, {b}] is empty or reversed"
        )));
    }

    let mut ref_nodes = vec![0.0; n];
    let mut ref_weights = vec![0.0; n];

    // Roots are symmetric; solve the first half and mirror.
    let half = n.div_ceil(2);
    for i in 0..half {
        let mut x = -(std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        if n % 2 == 1 && i == half - 1 {
            x = 0.0;
        }
        let mut converged = false;
        let mut dp = 0.0;
        for _ in 0..NEWTON_MAX_ITER {
            let (p, d) = legendre_and_deriv(n, x);
            dp = d;
            if x != 0.0 || n % 2 == 0 {
                let dx = p / d;
                x -= dx;
                if dx.abs() <= NEWTON_TOL {
                    converged = true;
                    break;
                }
            } else {
                // x = 0 is an exact root for odd n.
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::QuadratureNonConvergence { n, node: i });
        }
        if x == 0.0 {
            let (_, d) = legendre_and_deriv(n, x);
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        ref_nodes[i] = x;
        ref_weights[i] = w;
        ref_nodes[n - 1 - i] = -x;
        ref_weights[n - 1 - i] = w;
    }

    let mid = 0.5 * (a + b);
    let hw = 0.5 * (b - a);
    let nodes: Vec<f64> = ref_nodes.iter().map(|&x| mid + hw * x).collect();
    let weights: Vec<f64> = ref_weights.iter().map(|&w| hw * w).collect();
    Ok(GaussRule {
        nodes,
        weights,
        interval,
    })
}

/// Composite rule for the integral from the domain start to `t`: K points on
/// every inter-knot piece fully below `t`, plus K points on the remaining
/// partial segment. Exact for piecewise polynomials of degree <= 2K-1 on the
/// knot grid.
pub fn composite_prefix_rule(breaks: &[f64], k: usize, t: f64) -> Result<GaussRule> {
    let start = breaks[0];
    let end = *breaks.last().unwrap();
    let slack = 1e-12 * (end - start).abs().max(1.0);
    if t < start - slack || t > end + slack {
        return Err(Error::OutOfDomain {
            time: t,
            lo: start,
            hi: end,
        });
    }
    let t = t.clamp(start, end);
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for w in breaks.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if t >= hi - slack {
            let rule = gauss_legendre(k, (lo, hi))?;
            nodes.extend(rule.nodes);
            weights.extend(rule.weights);
        } else {
            if t > lo + slack {
                let rule = gauss_legendre(k, (lo, t))?;
                nodes.extend(rule.nodes);
                weights.extend(rule.weights);
            }
            break;
        }
    }
    Ok(GaussRule {
        nodes,
        weights,
        interval: (start, t),
    })
}

/// Precomputed quadrature plan for the nested integrals of the c-prior.
///
/// The composite rule for outer node m decomposes as the full pieces with
/// index below `piece_of[m]` plus `partial[m]`; `inner_rule(m)` materializes
/// the whole rule on `[t1, xi_m]` (the `[0, xi_m]` integral under the
/// internal time-shift convention that puts the domain start at 0). All
/// basis matrices the posterior needs are evaluated here, so no basis
/// evaluation happens during sampling.
#[derive(Debug, Clone)]
pub struct QuadraturePlan {
    pub outer: GaussRule,
    /// Inter-knot breakpoints, domain start to domain end.
    pub breaks: Vec<f64>,
    /// K-point rule on each full piece `[breaks[j], breaks[j+1]]`.
    pub pieces: Vec<GaussRule>,
    pub piece_basis: Vec<BasisMatrix>,
    /// Piece index containing each outer node.
    pub piece_of: Vec<usize>,
    /// K-point rule on `[breaks[piece_of[m]], xi_m]` (empty when the node
    /// coincides with a breakpoint).
    pub partial: Vec<GaussRule>,
    pub partial_basis: Vec<BasisMatrix>,
    /// Inner nodes per piece.
    pub k_inner: usize,
    pub basis_at_outer: BasisMatrix,
    /// Basis row at the domain start (Phi(0) under the shift convention).
    pub basis_at_zero: Vec<f64>,
    /// Basis row at the domain end.
    pub basis_at_end: Vec<f64>,
}

impl QuadraturePlan {
    pub fn outer_len(&self) -> usize {
        self.outer.nodes.len()
    }

    pub fn inner_len(&self) -> usize {
        self.k_inner
    }

    /// The full composite inner rule on `[t1, xi_m]`.
    pub fn inner_rule(&self, m: usize) -> GaussRule {
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for j in 0..self.piece_of[m] {
            nodes.extend_from_slice(&self.pieces[j].nodes);
            weights.extend_from_slice(&self.pieces[j].weights);
        }
        nodes.extend_from_slice(&self.partial[m].nodes);
        weights.extend_from_slice(&self.partial[m].weights);
        GaussRule {
            nodes,
            weights,
            interval: (self.breaks[0], self.outer.nodes[m]),
        }
    }
}

/// Build the nested plan: M outer nodes on the basis domain, composite inner
/// rules with K nodes per inter-knot piece.
pub fn build_plan(spec: &BasisSpec, m_outer: usize, k_inner: usize) -> Result<QuadraturePlan> {
    if m_outer < 1 || k_inner < 1 {
        return Err(Error::InvalidDimension(
            "quadrature plan needs M >= 1 and K >= 1".into(),
        ));
    }
    let (lo, hi) = spec.domain;
    let outer = gauss_legendre(m_outer, (lo, hi))?;
    let breaks = spec.breakpoints();
    let slack = 1e-12 * (hi - lo).abs().max(1.0);

    let mut pieces = Vec::with_capacity(breaks.len() - 1);
    let mut piece_basis = Vec::with_capacity(breaks.len() - 1);
    for w in breaks.windows(2) {
        let rule = gauss_legendre(k_inner, (w[0], w[1]))?;
        piece_basis.push(eval_basis(spec, &rule.nodes)?);
        pieces.push(rule);
    }

    let mut piece_of = Vec::with_capacity(m_outer);
    let mut partial = Vec::with_capacity(m_outer);
    let mut partial_basis = Vec::with_capacity(m_outer);
    for &xi in &outer.nodes {
        // Piece index with breaks[j] <= xi < breaks[j+1].
        let j = match breaks[1..breaks.len() - 1]
            .binary_search_by(|b| b.partial_cmp(&xi).unwrap())
        {
            Ok(idx) => idx + 1,
            Err(idx) => idx,
        };
        piece_of.push(j);
        let seg_lo = breaks[j];
        if xi > seg_lo + slack {
            let rule = gauss_legendre(k_inner, (seg_lo, xi))?;
            partial_basis.push(eval_basis(spec, &rule.nodes)?);
            partial.push(rule);
        } else {
            partial_basis.push(eval_basis(spec, &[])?);
            partial.push(GaussRule::empty(seg_lo));
        }
    }

    let basis_at_outer = eval_basis(spec, &outer.nodes)?;
    let ends = eval_basis(spec, &[lo, hi])?;
    let basis_at_zero = ends.value_row(0).to_vec();
    let basis_at_end = ends.value_row(1).to_vec();
    Ok(QuadraturePlan {
        outer,
        breaks,
        pieces,
        piece_basis,
        piece_of,
        partial,
        partial_basis,
        k_inner,
        basis_at_outer,
        basis_at_zero,
        basis_at_end,
    })
}

/// Recommended (M, K) for a basis and a polynomial-degree bound on the model.
///
/// M is half the outer node count that would integrate products of splines
/// exactly; K is the smallest per-piece count whose 2K-1 exactness degree
/// covers the vector field composed with the spline.
pub fn default_quadrature_sizes(spec: &BasisSpec, model_poly_degree: usize) -> (usize, usize) {
    let degree = spec.order - 1;
    let interior = spec.num_basis - spec.order;
    let m = ((degree + 1) * interior).div_ceil(2).max(1);
    let target = degree * model_poly_degree;
    let k = (target + 1).div_ceil(2).max(1);
    (m, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::make_basis;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn one_point_rule_is_midpoint() {
        let r = gauss_legendre(1, (-1.0, 1.0)).unwrap();
        assert_relative_eq!(r.nodes[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(r.weights[0], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn two_point_rule_matches_analytic_roots() {
        let r = gauss_legendre(2, (-1.0, 1.0)).unwrap();
        let x = 1.0 / 3.0f64.sqrt();
        assert_relative_eq!(r.nodes[0], -x, epsilon = 1e-14);
        assert_relative_eq!(r.nodes[1], x, epsilon = 1e-14);
        assert_relative_eq!(r.weights[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(r.weights[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn five_point_rule_integrates_t9_on_0_20() {
        let r = gauss_legendre(5, (0.0, 20.0)).unwrap();
        let got = r.integrate(|t| t.powi(9));
        let exact = 20f64.powi(10) / 10.0;
        assert_relative_eq!(got, exact, max_relative = 1e-12);
    }

    #[test]
    fn exactness_up_to_degree_2n_minus_1() {
        // Deterministic sweep of intervals; monomials up to the exactness
        // degree must integrate to closed form.
        let intervals = [(-1.0, 1.0), (0.0, 20.0), (-3.5, 1.25), (2.0, 7.75)];
        for n in 1..=20 {
            for &(a, b) in &intervals {
                let r = gauss_legendre(n, (a, b)).unwrap();
                for d in 0..=(2 * n - 1) {
                    let got = r.integrate(|t| t.powi(d as i32));
                    let p = d as f64 + 1.0;
                    let exact = (b.powf(p) - a.powf(p)) / p;
                    let scale = exact.abs().max(1e-6);
                    assert!(
                        ((got - exact) / scale).abs() < 1e-10,
                        "n={n} d={d} on [{a},{b}]: got {got}, exact {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn nodes_symmetric_weights_positive() {
        for n in 1..=20 {
            let r = gauss_legendre(n, (2.0, 5.0)).unwrap();
            let mid = 3.5;
            for i in 0..n {
                assert!(r.weights[i] > 0.0);
                assert_relative_eq!(
                    r.nodes[i] - mid,
                    -(r.nodes[n - 1 - i] - mid),
                    epsilon = 1e-12
                );
                if i > 0 {
                    assert!(r.nodes[i] > r.nodes[i - 1]);
                }
            }
            assert!(r.nodes[0] > 2.0 && r.nodes[n - 1] < 5.0);
        }
    }

    #[test]
    fn composite_prefix_rule_is_exact_per_piece() {
        // A piecewise cubic with a kink at every break integrates exactly.
        let breaks = vec![0.0, 1.0, 2.5, 4.0];
        let f = |t: f64| {
            let cell = if t < 1.0 {
                0
            } else if t < 2.5 {
                1
            } else {
                2
            };
            (cell as f64 + 1.0) * t * t * t - cell as f64 * t
        };
        let exact_cell = |lo: f64, hi: f64, cell: usize| {
            let c = cell as f64;
            (c + 1.0) * (hi.powi(4) - lo.powi(4)) / 4.0 - c * (hi * hi - lo * lo) / 2.0
        };
        let t = 3.1;
        let exact = exact_cell(0.0, 1.0, 0) + exact_cell(1.0, 2.5, 1) + exact_cell(2.5, t, 2);
        let rule = composite_prefix_rule(&breaks, 2, t).unwrap();
        assert_relative_eq!(rule.integrate(f), exact, max_relative = 1e-13);
        // Weights cover exactly [0, t].
        assert_relative_eq!(rule.weights.iter().sum::<f64>(), t, epsilon = 1e-12);
    }

    #[test]
    fn plan_shapes_and_inner_intervals() {
        let spec = make_basis(4, 10, (0.0, 20.0)).unwrap();
        let plan = build_plan(&spec, 30, 5).unwrap();
        assert_eq!(plan.outer_len(), 30);
        assert_eq!(plan.pieces.len(), 7); // 6 interior knots -> 7 pieces
        for (m, &xi) in plan.outer.nodes.iter().enumerate() {
            let rule = plan.inner_rule(m);
            assert_eq!(rule.interval, (0.0, xi));
            let total: f64 = rule.weights.iter().sum();
            assert_relative_eq!(total, xi, epsilon = 1e-10);
            for w in rule.nodes.windows(2) {
                assert!(w[1] > w[0]);
            }
            assert!(rule.nodes[0] > 0.0 && *rule.nodes.last().unwrap() < xi);
        }
        assert_eq!(plan.basis_at_zero.len(), 10);
        assert_eq!(plan.basis_at_end.len(), 10);
        // Clamped basis: first function is 1 at the left endpoint.
        assert_relative_eq!(plan.basis_at_zero[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(plan.basis_at_end[9], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn plan_is_deterministic() {
        let spec = make_basis(4, 13, (0.0, 20.0)).unwrap();
        let p1 = build_plan(&spec, 40, 4).unwrap();
        let p2 = build_plan(&spec, 40, 4).unwrap();
        assert_eq!(p1.outer.nodes, p2.outer.nodes);
        assert_eq!(p1.outer.weights, p2.outer.weights);
        for m in 0..40 {
            let (a, b) = (p1.inner_rule(m), p2.inner_rule(m));
            assert_eq!(a.nodes, b.nodes);
            assert_eq!(a.weights, b.weights);
        }
        assert_eq!(p1.basis_at_zero, p2.basis_at_zero);
    }

    #[test]
    fn default_sizes_match_recommendations() {
        // Cubic basis with 79 interior knots -> M = 158.
        let fn_spec = make_basis(4, 83, (0.0, 20.0)).unwrap();
        let (m, k) = default_quadrature_sizes(&fn_spec, 3);
        assert_eq!(m, 158);
        assert_eq!(k, 5); // degree-3 field composed with a cubic spline

        let lv_spec = make_basis(4, 43, (0.0, 20.0)).unwrap();
        let (_, k_lv) = default_quadrature_sizes(&lv_spec, 2);
        assert_eq!(k_lv, 4); // degree-2 field
    }

    proptest! {
        #[test]
        fn weights_sum_to_interval_length(n in 1usize..25, a in -10.0f64..10.0, len in 0.1f64..30.0) {
            let b = a + len;
            let r = gauss_legendre(n, (a, b)).unwrap();
            let total: f64 = r.weights.iter().sum();
            prop_assert!((total - len).abs() < 1e-12 * len.max(1.0));
        }
    }
}
