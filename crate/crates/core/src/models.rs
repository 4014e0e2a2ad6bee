//! ODE system registry: vector fields with analytic Jacobians and parameter
//! constraints. Ships FitzHugh-Nagumo and Lotka-Volterra; user systems plug
//! in through the same trait.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A first-order ODE system `x'(t) = f(x, theta, t)` with its Jacobians.
///
/// Jacobians are written into caller-provided row-major buffers
/// (`jac_x`: dim_state x dim_state, `jac_theta`: dim_state x dim_params).
pub trait OdeSystem: Send + Sync {
    fn name(&self) -> &str;
    fn dim_state(&self) -> usize;
    fn dim_params(&self) -> usize;
    fn f(&self, x: &[f64], theta: &[f64], t: f64, out: &mut [f64]);
    fn jac_x(&self, x: &[f64], theta: &[f64], t: f64, out: &mut [f64]);
    fn jac_theta(&self, x: &[f64], theta: &[f64], t: f64, out: &mut [f64]);
    /// Which parameters are constrained positive (sampled on log scale).
    fn param_positive(&self) -> Vec<bool>;
    /// Conservative bound on the polynomial degree of f in x, for quadrature
    /// sizing.
    fn poly_degree(&self) -> usize;
}

pub type OdeModel = Arc<dyn OdeSystem>;

/// FitzHugh-Nagumo spike-potential system with theta = (a, b, c):
/// V' = c (V - V^3/3 + R), R' = -(V - a + b R) / c.
#[derive(Debug, Clone, Copy)]
pub struct FitzHughNagumo;

impl OdeSystem for FitzHughNagumo {
    fn name(&self) -> &str {
        "fn"
    }

    fn dim_state(&self) -> usize {
        2
    }

    fn dim_params(&self) -> usize {
        3
    }

    fn f(&self, x: &[f64], theta: &[f64], _t: f64, out: &mut [f64]) {
        let (v, r) = (x[0], x[1]);
        let (a, b, c) = (theta[0], theta[1], theta[2]);
        out[0] = c * (v - v * v * v / 3.0 + r);
        out[1] = -(v - a + b * r) / c;
    }

    fn jac_x(&self, x: &[f64], theta: &[f64], _t: f64, out: &mut [f64]) {
        let v = x[0];
        let (b, c) = (theta[1], theta[2]);
        out[0] = c * (1.0 - v * v); // d f1 / d V
        out[1] = c; // d f1 / d R
        out[2] = -1.0 / c; // d f2 / d V
        out[3] = -b / c; // d f2 / d R
    }

    fn jac_theta(&self, x: &[f64], theta: &[f64], _t: f64, out: &mut [f64]) {
        let (v, r) = (x[0], x[1]);
        let (a, b, c) = (theta[0], theta[1], theta[2]);
        out[0] = 0.0;
        out[1] = 0.0;
        out[2] = v - v * v * v / 3.0 + r;
        out[3] = 1.0 / c;
        out[4] = -r / c;
        out[5] = (v - a + b * r) / (c * c);
    }

    fn param_positive(&self) -> Vec<bool> {
        vec![true, true, true]
    }

    fn poly_degree(&self) -> usize {
        3
    }
}

/// Lotka-Volterra predator-prey system with theta = (t1, t2, t3, t4):
/// x1' = t1 x1 - t2 x1 x2, x2' = -t3 x2 + t4 x1 x2.
#[derive(Debug, Clone, Copy)]
pub struct LotkaVolterra;

impl OdeSystem for LotkaVolterra {
    fn name(&self) -> &str {
        "lv"
    }

    fn dim_state(&self) -> usize {
        2
    }

    fn dim_params(&self) -> usize {
        4
    }

    fn f(&self, x: &[f64], theta: &[f64], _t: f64, out: &mut [f64]) {
        let (x1, x2) = (x[0], x[1]);
        out[0] = theta[0] * x1 - theta[1] * x1 * x2;
        out[1] = -theta[2] * x2 + theta[3] * x1 * x2;
    }

    fn jac_x(&self, x: &[f64], theta: &[f64], _t: f64, out: &mut [f64]) {
        let (x1, x2) = (x[0], x[1]);
        out[0] = theta[0] - theta[1] * x2;
        out[1] = -theta[1] * x1;
        out[2] = theta[3] * x2;
        out[3] = -theta[2] + theta[3] * x1;
    }

    fn jac_theta(&self, x: &[f64], _theta: &[f64], _t: f64, out: &mut [f64]) {
        let (x1, x2) = (x[0], x[1]);
        out[0] = x1;
        out[1] = -x1 * x2;
        out[2] = 0.0;
        out[3] = 0.0;
        out[4] = 0.0;
        out[5] = 0.0;
        out[6] = -x2;
        out[7] = x1 * x2;
    }

    fn param_positive(&self) -> Vec<bool> {
        vec![true; 4]
    }

    fn poly_degree(&self) -> usize {
        2
    }
}

pub fn fn_model() -> OdeModel {
    Arc::new(FitzHughNagumo)
}

pub fn lv_model() -> OdeModel {
    Arc::new(LotkaVolterra)
}

/// Wraps a vector field lacking analytic Jacobians with central-difference
/// Jacobians (step 1e-6); accuracy is limited to roughly sqrt(machine eps)
/// relative, which the gradient checks account for.
pub struct FiniteDiffJacobians<F> {
    pub name: String,
    pub dim_state: usize,
    pub dim_params: usize,
    pub f: F,
    pub param_positive: Vec<bool>,
    pub poly_degree: usize,
}

const FD_STEP: f64 = 1e-6;

impl<F> OdeSystem for FiniteDiffJacobians<F>
where
    F: Fn(&[f64], &[f64], f64, &mut [f64]) + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn dim_state(&self) -> usize {
        self.dim_state
    }

    fn dim_params(&self) -> usize {
        self.dim_params
    }

    fn f(&self, x: &[f64], theta: &[f64], t: f64, out: &mut [f64]) {
        (self.f)(x, theta, t, out)
    }

    fn jac_x(&self, x: &[f64], theta: &[f64], t: f64, out: &mut [f64]) {
        let i = self.dim_state;
        let mut xp = x.to_vec();
        let mut fp = vec![0.0; i];
        let mut fm = vec![0.0; i];
        for a in 0..i {
            xp[a] = x[a] + FD_STEP;
            (self.f)(&xp, theta, t, &mut fp);
            xp[a] = x[a] - FD_STEP;
            (self.f)(&xp, theta, t, &mut fm);
            xp[a] = x[a];
            for row in 0..i {
                out[row * i + a] = (fp[row] - fm[row]) / (2.0 * FD_STEP);
            }
        }
    }

    fn jac_theta(&self, x: &[f64], theta: &[f64], t: f64, out: &mut [f64]) {
        let i = self.dim_state;
        let p = self.dim_params;
        let mut tp = theta.to_vec();
        let mut fp = vec![0.0; i];
        let mut fm = vec![0.0; i];
        for a in 0..p {
            tp[a] = theta[a] + FD_STEP;
            (self.f)(x, &tp, t, &mut fp);
            tp[a] = theta[a] - FD_STEP;
            (self.f)(x, &tp, t, &mut fm);
            tp[a] = theta[a];
            for row in 0..i {
                out[row * p + a] = (fp[row] - fm[row]) / (2.0 * FD_STEP);
            }
        }
    }

    fn param_positive(&self) -> Vec<bool> {
        self.param_positive.clone()
    }

    fn poly_degree(&self) -> usize {
        self.poly_degree
    }
}

/// Result of comparing analytic Jacobians against central differences.
#[derive(Debug, Clone)]
pub struct JacobianReport {
    pub trials: usize,
    pub max_rel_err_jac_x: f64,
    pub max_rel_err_jac_theta: f64,
}

impl JacobianReport {
    pub fn max_rel_err(&self) -> f64 {
        self.max_rel_err_jac_x.max(self.max_rel_err_jac_theta)
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(1.0);
    (a - b).abs() / scale
}

/// Validate a model's Jacobians at random states; errors above 1e-5 fail.
pub fn check_jacobians(model: &dyn OdeSystem, trials: usize, seed: u64) -> Result<JacobianReport> {
    use rand::SeedableRng;
    if trials < 1 {
        return Err(Error::InvalidConfig("trials must be >= 1".into()));
    }
    let i = model.dim_state();
    let p = model.dim_params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_x: f64 = 0.0;
    let mut max_t: f64 = 0.0;

    let mut x = vec![0.0; i];
    let mut theta = vec![0.0; p];
    let mut jx = vec![0.0; i * i];
    let mut jt = vec![0.0; i * p];
    let mut fp = vec![0.0; i];
    let mut fm = vec![0.0; i];

    for _ in 0..trials {
        for v in x.iter_mut() {
            *v = rng.random_range(-2.0..2.0);
        }
        for (v, &pos) in theta.iter_mut().zip(&model.param_positive()) {
            *v = if pos {
                rng.random_range(0.1..3.0)
            } else {
                rng.random_range(-2.0..2.0)
            };
        }
        let t = rng.random_range(0.0..10.0);

        model.jac_x(&x, &theta, t, &mut jx);
        for a in 0..i {
            let orig = x[a];
            x[a] = orig + FD_STEP;
            model.f(&x, &theta, t, &mut fp);
            x[a] = orig - FD_STEP;
            model.f(&x, &theta, t, &mut fm);
            x[a] = orig;
            for row in 0..i {
                let fd = (fp[row] - fm[row]) / (2.0 * FD_STEP);
                max_x = max_x.max(rel_err(jx[row * i + a], fd));
            }
        }

        model.jac_theta(&x, &theta, t, &mut jt);
        for a in 0..p {
            let orig = theta[a];
            theta[a] = orig + FD_STEP;
            model.f(&x, &theta, t, &mut fp);
            theta[a] = orig - FD_STEP;
            model.f(&x, &theta, t, &mut fm);
            theta[a] = orig;
            for row in 0..i {
                let fd = (fp[row] - fm[row]) / (2.0 * FD_STEP);
                max_t = max_t.max(rel_err(jt[row * p + a], fd));
            }
        }
    }

    let report = JacobianReport {
        trials,
        max_rel_err_jac_x: max_x,
        max_rel_err_jac_theta: max_t,
    };
    if report.max_rel_err() > 1e-5 {
        return Err(Error::JacobianMismatch {
            model: model.name().to_string(),
            max_rel_err: report.max_rel_err(),
        });
    }
    Ok(report)
}

/// Name-keyed registry so the CLI (and user extensions) can resolve models.
pub struct ModelRegistry {
    models: BTreeMap<String, OdeModel>,
}

impl ModelRegistry {
    pub fn with_builtins() -> Self {
        let mut reg = Self {
            models: BTreeMap::new(),
        };
        reg.register("fn", fn_model());
        reg.register("fitzhugh-nagumo", fn_model());
        reg.register("lv", lv_model());
        reg.register("lotka-volterra", lv_model());
        reg
    }

    pub fn register(&mut self, name: &str, model: OdeModel) {
        self.models.insert(name.to_string(), model);
    }

    pub fn get(&self, name: &str) -> Result<OdeModel> {
        self.models
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownModel(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.models.keys().map(|s| s.as_str()).collect()
    }
}

impl Default for ModelRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fn_field_at_reference_point() {
        let m = fn_model();
        let mut out = [0.0; 2];
        m.f(&[-1.0, 1.0], &[0.2, 0.2, 3.0], 0.0, &mut out);
        assert_relative_eq!(out[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(out[1], 1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn fn_jac_x_at_origin() {
        let m = fn_model();
        let mut jx = [0.0; 4];
        m.jac_x(&[0.0, 0.0], &[0.2, 0.2, 3.0], 0.0, &mut jx);
        assert_relative_eq!(jx[0], 3.0, epsilon = 1e-14); // d f1 / d V = c at V=0
        assert_relative_eq!(jx[1], 3.0, epsilon = 1e-14);
        assert_relative_eq!(jx[2], -1.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(jx[3], -0.2 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn lv_equilibrium_and_reference_point() {
        let m = lv_model();
        let mut out = [0.0; 2];
        m.f(&[1.0, 1.0], &[1.0, 1.0, 1.0, 1.0], 0.0, &mut out);
        assert_relative_eq!(out[0], 0.0, epsilon = 1e-14);
        assert_relative_eq!(out[1], 0.0, epsilon = 1e-14);

        // Direct substitution of the hare-lynx point estimates.
        m.f(
            &[24.27, 12.22],
            &[0.720, 0.028, 0.496, 0.013],
            0.0,
            &mut out,
        );
        assert_relative_eq!(out[0], 9.1701768, epsilon = 1e-9);
        assert_relative_eq!(out[1], -2.2055878, epsilon = 1e-9);
    }

    #[test]
    fn lv_jac_theta_structure() {
        let m = lv_model();
        let (x1, x2) = (1.7, 0.4);
        let mut jt = [0.0; 8];
        m.jac_theta(&[x1, x2], &[1.0, 1.0, 1.0, 1.0], 0.0, &mut jt);
        assert_eq!(
            jt,
            [x1, -x1 * x2, 0.0, 0.0, 0.0, 0.0, -x2, x1 * x2]
        );
    }

    #[test]
    fn shipped_jacobians_validate() {
        let r = check_jacobians(fn_model().as_ref(), 100, 42).unwrap();
        assert!(r.max_rel_err() < 1e-6, "FN max rel err {}", r.max_rel_err());
        let r = check_jacobians(lv_model().as_ref(), 100, 42).unwrap();
        assert!(r.max_rel_err() < 1e-6, "LV max rel err {}", r.max_rel_err());
    }

    #[test]
    fn wrong_jacobian_fails_validation() {
        struct Broken;
        impl OdeSystem for Broken {
            fn name(&self) -> &str {
                "broken"
            }
            fn dim_state(&self) -> usize {
                1
            }
            fn dim_params(&self) -> usize {
                1
            }
            fn f(&self, x: &[f64], theta: &[f64], _t: f64, out: &mut [f64]) {
                out[0] = theta[0] * x[0] * x[0];
            }
            fn jac_x(&self, x: &[f64], theta: &[f64], _t: f64, out: &mut [f64]) {
                out[0] = theta[0] * x[0]; // missing factor 2
            }
            fn jac_theta(&self, x: &[f64], _theta: &[f64], _t: f64, out: &mut [f64]) {
                out[0] = x[0] * x[0];
            }
            fn param_positive(&self) -> Vec<bool> {
                vec![false]
            }
            fn poly_degree(&self) -> usize {
                2
            }
        }
        assert!(matches!(
            check_jacobians(&Broken, 50, 1),
            Err(Error::JacobianMismatch { .. })
        ));
    }

    #[test]
    fn finite_diff_wrapper_passes_checks() {
        let wrapped = FiniteDiffJacobians {
            name: "fn-fd".into(),
            dim_state: 2,
            dim_params: 3,
            f: |x: &[f64], theta: &[f64], t: f64, out: &mut [f64]| {
                FitzHughNagumo.f(x, theta, t, out)
            },
            param_positive: vec![true, true, true],
            poly_degree: 3,
        };
        let r = check_jacobians(&wrapped, 25, 7).unwrap();
        assert!(r.max_rel_err() < 1e-5);
    }

    #[test]
    fn registry_resolves_builtins() {
        let reg = ModelRegistry::with_builtins();
        assert_eq!(reg.get("fn").unwrap().dim_params(), 3);
        assert_eq!(reg.get("lotka-volterra").unwrap().dim_params(), 4);
        assert!(matches!(reg.get("nope"), Err(Error::UnknownModel(_))));
    }

    #[test]
    fn finite_inputs_give_finite_fields() {
        let mut out = [0.0; 2];
        for m in [fn_model(), lv_model()] {
            for &v in &[-5.0, 0.0, 5.0] {
                for &r in &[-5.0, 5.0] {
                    let theta = vec![0.5; m.dim_params()];
                    m.f(&[v, r], &theta, 1.0, &mut out);
                    assert!(out.iter().all(|y| y.is_finite()));
                }
            }
        }
    }
}
