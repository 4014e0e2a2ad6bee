//! Clamped B-spline bases: construction, evaluation, and penalized
//! least-squares smoothing used to initialize the fit.
//!
//! Trajectories are represented as `x_i(t) = Phi(t)' c_i` where `Phi` holds
//! `num_basis` B-spline functions on a clamped, equally spaced knot vector.

use nalgebra::{DMatrix, DMatrixView, DVector};

use crate::error::{Error, Result};

#[cfg(debug_assertions)]
use std::sync::atomic::{AtomicU64, Ordering};

/// Counts individual basis-row evaluations in debug builds, so tests can
/// assert that posterior evaluation never touches the recursion.
#[cfg(debug_assertions)]
static EVAL_COUNT: AtomicU64 = AtomicU64::new(0);

#[cfg(debug_assertions)]
pub fn basis_eval_count() -> u64 {
    EVAL_COUNT.load(Ordering::Relaxed)
}

/// B-spline basis configuration: order (degree + 1), number of basis
/// functions, and the closed time domain.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec {
    pub order: usize,
    pub num_basis: usize,
    pub domain: (f64, f64),
    knots: Vec<f64>,
}

impl BasisSpec {
    /// Full clamped knot vector (boundary knots repeated `order` times).
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn interior_knots(&self) -> usize {
        self.num_basis - self.order
    }

    /// Unique breakpoints: domain start, interior knots, domain end.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.interior_knots() + 2);
        b.push(self.domain.0);
        b.extend_from_slice(&self.knots[self.order..self.num_basis]);
        b.push(self.domain.1);
        b
    }
}

/// Basis values and first derivatives at a set of evaluation times.
///
/// Rows are indexed by time; storage is transposed (each time's basis vector
/// is contiguous) so the posterior can run matrix products over it directly.
#[derive(Debug, Clone)]
pub struct BasisMatrix {
    pub times: Vec<f64>,
    num_basis: usize,
    values: Vec<f64>,
    derivs: Vec<f64>,
}

impl BasisMatrix {
    pub fn num_times(&self) -> usize {
        self.times.len()
    }

    pub fn num_basis(&self) -> usize {
        self.num_basis
    }

    /// Basis values `phi_l(times[j])`, contiguous over l.
    pub fn value_row(&self, j: usize) -> &[f64] {
        &self.values[j * self.num_basis..(j + 1) * self.num_basis]
    }

    /// First derivatives `phi_l'(times[j])`.
    pub fn deriv_row(&self, j: usize) -> &[f64] {
        &self.derivs[j * self.num_basis..(j + 1) * self.num_basis]
    }

    /// View of the value rows as an (num_basis x num_times) matrix whose
    /// column j is the basis vector at times[j].
    pub fn values_view(&self) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.values, self.num_basis, self.times.len())
    }

    pub fn derivs_view(&self) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.derivs, self.num_basis, self.times.len())
    }
}

/// Basis coefficients for all components; `component(i)` is the paper's
/// column vector c_i.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineCoefficients {
    /// (num_basis x num_components), column i = c_i.
    pub mat: DMatrix<f64>,
}

impl SplineCoefficients {
    pub fn new(mat: DMatrix<f64>) -> Self {
        Self { mat }
    }

    pub fn zeros(num_basis: usize, num_components: usize) -> Self {
        Self {
            mat: DMatrix::zeros(num_basis, num_components),
        }
    }

    pub fn num_components(&self) -> usize {
        self.mat.ncols()
    }

    pub fn num_basis(&self) -> usize {
        self.mat.nrows()
    }

    pub fn component(&self, i: usize) -> &[f64] {
        let l = self.mat.nrows();
        &self.mat.as_slice()[i * l..(i + 1) * l]
    }

    pub fn is_finite(&self) -> bool {
        self.mat.iter().all(|v| v.is_finite())
    }
}

/// Build a clamped, equally spaced B-spline basis.
pub fn make_basis(order: usize, num_basis: usize, domain: (f64, f64)) -> Result<BasisSpec> {
    if order < 2 {
        return Err(Error::InvalidDimension(format!(
            "spline order must be at least 2, got {order}"
        )));
    }
    if num_basis < order {
        return Err(Error::InvalidDimension(format!(
            "need at least as many basis functions ({num_basis}) as the order ({order})"
        )));
    }
    let (lo, hi) = domain;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidDimension(format!(
            "domain [{lo}, {hi}] must be a nondegenerate finite interval"
        )));
    }
    let interior = num_basis - order;
    let step = (hi - lo) / (interior + 1) as f64;
    let mut knots = Vec::with_capacity(num_basis + order);
    knots.extend(std::iter::repeat_n(lo, order));
    for i in 1..=interior {
        knots.push(lo + step * i as f64);
    }
    knots.extend(std::iter::repeat_n(hi, order));
    Ok(BasisSpec {
        order,
        num_basis,
        domain,
        knots,
    })
}

/// Locate the knot span index i with knots[i] <= t < knots[i+1], clamped so
/// the domain endpoints are well defined (left-continuous at the right end).
fn find_span(spec: &BasisSpec, t: f64) -> usize {
    let p = spec.order - 1;
    let n = spec.num_basis - 1;
    let knots = &spec.knots;
    if t >= knots[n + 1] {
        return n;
    }
    if t <= knots[p] {
        return p;
    }
    let mut lo = p;
    let mut hi = n + 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if t < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// All nonzero basis functions and derivatives up to `n_ders` at `t`
/// (The NURBS Book, algorithm A2.3). Row d of the result holds the d-th
/// derivatives of the `order` nonzero functions at the span.
fn ders_basis_funs(spec: &BasisSpec, span: usize, t: f64, n_ders: usize) -> Vec<Vec<f64>> {
    let p = spec.order - 1;
    let knots = &spec.knots;
    let mut ndu = vec![vec![0.0; p + 1]; p + 1];
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    ndu[0][0] = 1.0;
    for j in 1..=p {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }

    let nd = n_ders.min(p);
    let mut ders = vec![vec![0.0; p + 1]; n_ders + 1];
    for j in 0..=p {
        ders[0][j] = ndu[j][p];
    }
    let mut a = vec![vec![0.0; p + 1]; 2];
    for r in 0..=p {
        let mut s1 = 0usize;
        let mut s2 = 1usize;
        a[0][0] = 1.0;
        for k in 1..=nd {
            let mut d = 0.0;
            let rk = r as isize - k as isize;
            let pk = (p - k) as isize;
            if r as isize >= k as isize {
                a[s2][0] = a[s1][0] / ndu[(pk + 1) as usize][rk as usize];
                d = a[s2][0] * ndu[rk as usize][pk as usize];
            }
            let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2 = if r as isize - 1 <= pk { k - 1 } else { p - r };
            for j in j1..=j2 {
                a[s2][j] = (a[s1][j] - a[s1][j - 1])
                    / ndu[(pk + 1) as usize][(rk + j as isize) as usize];
                d += a[s2][j] * ndu[(rk + j as isize) as usize][pk as usize];
            }
            if r as isize <= pk {
                a[s2][k] = -a[s1][k - 1] / ndu[(pk + 1) as usize][r];
                d += a[s2][k] * ndu[r][pk as usize];
            }
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut factor = p as f64;
    for k in 1..=nd {
        for v in ders[k].iter_mut() {
            *v *= factor;
        }
        factor *= (p - k) as f64;
    }
    ders
}

fn check_in_domain(spec: &BasisSpec, t: f64) -> Result<f64> {
    let (lo, hi) = spec.domain;
    let slack = 1e-9 * (hi - lo).abs();
    if !t.is_finite() || t < lo - slack || t > hi + slack {
        return Err(Error::OutOfDomain { time: t, lo, hi });
    }
    Ok(t.clamp(lo, hi))
}

/// Evaluate all basis functions and first derivatives at the given times.
pub fn eval_basis(spec: &BasisSpec, times: &[f64]) -> Result<BasisMatrix> {
    let (values, derivs, _) = eval_rows(spec, times, 1)?;
    Ok(BasisMatrix {
        times: times.to_vec(),
        num_basis: spec.num_basis,
        values,
        derivs,
    })
}

/// Second-derivative rows, used by the roughness penalty.
pub(crate) fn eval_second_derivs(spec: &BasisSpec, times: &[f64]) -> Result<Vec<f64>> {
    let (_, _, second) = eval_rows(spec, times, 2)?;
    Ok(second)
}

#[allow(clippy::type_complexity)]
fn eval_rows(
    spec: &BasisSpec,
    times: &[f64],
    n_ders: usize,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let l = spec.num_basis;
    let p = spec.order - 1;
    let mut values = vec![0.0; times.len() * l];
    let mut derivs = vec![0.0; times.len() * l];
    let mut second = if n_ders >= 2 {
        vec![0.0; times.len() * l]
    } else {
        Vec::new()
    };
    for (j, &raw_t) in times.iter().enumerate() {
        let t = check_in_domain(spec, raw_t)?;
        let span = find_span(spec, t);
        let ders = ders_basis_funs(spec, span, t, n_ders);
        let first = span - p;
        for r in 0..=p {
            values[j * l + first + r] = ders[0][r];
            derivs[j * l + first + r] = ders[1][r];
            if n_ders >= 2 {
                second[j * l + first + r] = ders[2][r];
            }
        }
    }
    #[cfg(debug_assertions)]
    EVAL_COUNT.fetch_add(times.len() as u64, Ordering::Relaxed);
    Ok((values, derivs, second))
}

/// Exact Gram matrix of second derivatives, integrated per inter-knot
/// interval with a rule that is exact for the piecewise-polynomial integrand.
pub(crate) fn roughness_matrix(spec: &BasisSpec) -> Result<DMatrix<f64>> {
    let l = spec.num_basis;
    let mut pen = DMatrix::zeros(l, l);
    if spec.order == 2 {
        return Ok(pen); // piecewise-linear splines have zero second derivative
    }
    let n_points = (spec.order - 2).max(1);
    let breaks = spec.breakpoints();
    for w in breaks.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let rule = crate::quadrature::gauss_legendre(n_points, (w[0], w[1]))?;
        let rows = eval_second_derivs(spec, &rule.nodes)?;
        for (q, &weight) in rule.weights.iter().enumerate() {
            let row = &rows[q * l..(q + 1) * l];
            for a in 0..l {
                if row[a] == 0.0 {
                    continue;
                }
                for b in 0..l {
                    pen[(a, b)] += weight * row[a] * row[b];
                }
            }
        }
    }
    Ok(pen)
}

/// Penalized least-squares smoothing of observed data, one component at a
/// time. `observations` is (num_times x num_components) with NaN marking a
/// missing entry. Minimizes the squared residual at observed points plus
/// `roughness_penalty * integral of (second derivative)^2`.
pub fn smooth_data(
    spec: &BasisSpec,
    times: &[f64],
    observations: &DMatrix<f64>,
    roughness_penalty: f64,
) -> Result<SplineCoefficients> {
    if observations.nrows() != times.len() {
        return Err(Error::InvalidDimension(format!(
            "observations have {} rows but {} times were given",
            observations.nrows(),
            times.len()
        )));
    }
    let l = spec.num_basis;
    let num_comp = observations.ncols();
    let basis = eval_basis(spec, times)?;
    let pen = roughness_matrix(spec)?;
    let mut coeffs = DMatrix::zeros(l, num_comp);

    for i in 0..num_comp {
        let observed: Vec<usize> = (0..times.len())
            .filter(|&j| observations[(j, i)].is_finite())
            .collect();
        if observed.len() < spec.order {
            return Err(Error::TooFewObservations {
                component: i,
                found: observed.len(),
                required: spec.order,
            });
        }
        let mut normal = &pen * roughness_penalty;
        let mut rhs = DVector::zeros(l);
        for &j in &observed {
            let row = basis.value_row(j);
            let y = observations[(j, i)];
            for a in 0..l {
                if row[a] == 0.0 {
                    continue;
                }
                rhs[a] += y * row[a];
                for b in 0..l {
                    normal[(a, b)] += row[a] * row[b];
                }
            }
        }
        let lu = normal.lu();
        let diag = lu.u().diagonal();
        let max_pivot = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let min_pivot = diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        let rel = if max_pivot > 0.0 {
            min_pivot / max_pivot
        } else {
            0.0
        };
        if rel < 1e-10 {
            return Err(Error::RankDeficient {
                component: i,
                pivot: rel,
            });
        }
        let sol = lu.solve(&rhs).ok_or(Error::RankDeficient {
            component: i,
            pivot: rel,
        })?;
        coeffs.set_column(i, &sol);
    }
    Ok(SplineCoefficients::new(coeffs))
}

/// Spline values `Phi(t)' c_i` for every component at the given times;
/// returns (num_times x num_components).
pub fn spline_values(
    spec: &BasisSpec,
    coeffs: &SplineCoefficients,
    times: &[f64],
) -> Result<DMatrix<f64>> {
    let basis = eval_basis(spec, times)?;
    let mut out = DMatrix::zeros(times.len(), coeffs.num_components());
    for j in 0..times.len() {
        let row = basis.value_row(j);
        for i in 0..coeffs.num_components() {
            out[(j, i)] = dot(row, coeffs.component(i));
        }
    }
    Ok(out)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
