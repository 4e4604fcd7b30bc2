//! Candidate first integrals `u(t, x)` and their derivatives.
//!
//! Candidates come in two flavours: plain analytic functions, and
//! noise-aware closed forms that capture a sampled realization (its Wiener
//! path and jump record), which is how exactly-conserved candidates for the
//! registry families are written down.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::calculus::differential::{ScalarFieldFn, VectorFieldFn};
use crate::error::{Error, Result};
use crate::model::fd_step;
use crate::noise::NoiseRealization;

/// `(i, j) -> d^2 u / dx_i dx_j`
pub type HessFieldFn = dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync;

#[derive(Clone)]
pub struct CandidateIntegral {
    u: Arc<ScalarFieldFn>,
    du_dt: Option<Arc<ScalarFieldFn>>,
    grad: Option<Arc<VectorFieldFn>>,
    hess: Option<Arc<HessFieldFn>>,
}

impl CandidateIntegral {
    pub fn new(u: impl Fn(f64, &DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            u: Arc::new(u),
            du_dt: None,
            grad: None,
            hess: None,
        }
    }

    pub fn with_time_derivative(
        mut self,
        f: impl Fn(f64, &DVector<f64>) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.du_dt = Some(Arc::new(f));
        self
    }

    pub fn with_gradient(
        mut self,
        f: impl Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.grad = Some(Arc::new(f));
        self
    }

    pub fn with_hessian(
        mut self,
        f: impl Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.hess = Some(Arc::new(f));
        self
    }

    pub fn value(&self, t: f64, x: &DVector<f64>) -> f64 {
        (self.u)(t, x)
    }

    /// `du/dt`, central difference in `t` when not supplied. Meaningless for
    /// noise-aware candidates between nodes; those should supply nothing and
    /// avoid calling this.
    pub fn time_derivative(&self, t: f64, x: &DVector<f64>) -> f64 {
        if let Some(f) = &self.du_dt {
            return f(t, x);
        }
        let h = fd_step(t);
        ((self.u)(t + h, x) - (self.u)(t - h, x)) / (2.0 * h)
    }

    pub fn gradient(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        if let Some(f) = &self.grad {
            return f(t, x);
        }
        let n = x.len();
        let mut out = DVector::zeros(n);
        let mut xp = x.clone();
        for i in 0..n {
            let h = fd_step(x[i]);
            xp[i] = x[i] + h;
            let up = (self.u)(t, &xp);
            xp[i] = x[i] - h;
            let um = (self.u)(t, &xp);
            xp[i] = x[i];
            out[i] = (up - um) / (2.0 * h);
        }
        out
    }

    pub fn hessian(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        if let Some(f) = &self.hess {
            return f(t, x);
        }
        let n = x.len();
        let mut out = DMatrix::zeros(n, n);
        let mut xp = x.clone();
        for j in 0..n {
            let h = fd_step(x[j]);
            xp[j] = x[j] + h;
            let gp = self.gradient(t, &xp);
            xp[j] = x[j] - h;
            let gm = self.gradient(t, &xp);
            xp[j] = x[j];
            for i in 0..n {
                out[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        // Symmetrize the finite-difference result.
        for i in 0..n {
            for j in (i + 1)..n {
                let s = 0.5 * (out[(i, j)] + out[(j, i)]);
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }

    /// Probe finiteness and Hessian symmetry (<= 1e-8) at the given points.
    pub fn validate(&self, probes: &[(f64, DVector<f64>)]) -> Result<()> {
        for (t, x) in probes {
            let v = self.value(*t, x);
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "candidate non-finite at t = {t}"
                )));
            }
            let h = self.hessian(*t, x);
            for i in 0..x.len() {
                for j in 0..x.len() {
                    if (h[(i, j)] - h[(j, i)]).abs() > 1e-8 {
                        return Err(Error::InvalidInput(format!(
                            "candidate Hessian asymmetric at t = {t}: ({i},{j})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Node-indexed lookup of a realization: cumulative Wiener path and jump
/// prefixes, evaluated at node times (exact there, linear in between).
struct RealizationLookup {
    nodes: Vec<f64>,
    wiener: Vec<Vec<f64>>,
}

impl RealizationLookup {
    fn new(noise: &NoiseRealization) -> Self {
        Self {
            nodes: noise.nodes().to_vec(),
            wiener: noise.wiener_path(),
        }
    }

    /// `(lower node, interpolation weight)`; weight 0 on exact hits.
    fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.nodes.len();
        if t <= self.nodes[0] {
            return (0, 0.0);
        }
        if t >= self.nodes[n - 1] {
            return (n - 1, 0.0);
        }
        let idx = match self
            .nodes
            .binary_search_by(|v| v.partial_cmp(&t).unwrap())
        {
            Ok(i) => return (i, 0.0),
            Err(i) => i - 1,
        };
        let near = 1e-12 * (1.0 + t.abs());
        if (self.nodes[idx] - t).abs() <= near {
            return (idx, 0.0);
        }
        if (self.nodes[idx + 1] - t).abs() <= near {
            return (idx + 1, 0.0);
        }
        let w = (t - self.nodes[idx]) / (self.nodes[idx + 1] - self.nodes[idx]);
        (idx, w)
    }

    fn wiener_at(&self, k: usize, t: f64) -> f64 {
        let (i, w) = self.locate(t);
        if w == 0.0 {
            self.wiener[k][i]
        } else {
            (1.0 - w) * self.wiener[k][i] + w * self.wiener[k][i + 1]
        }
    }
}

/// Exact candidate for the additive family (constant `a`, `b`, marks
/// `g = gamma`): `u(t,x) = sum_i [x_i - a_i t - (B W(t))_i - sum_{tau <= t} gamma_i]`.
pub fn additive_candidate(
    drift: Vec<f64>,
    diffusion_columns: Vec<Vec<f64>>,
    noise: &NoiseRealization,
) -> CandidateIntegral {
    let n = drift.len();
    let look = Arc::new(RealizationLookup::new(noise));
    // Jump prefix: cumulative mark sum after each node.
    let mut prefix = vec![DVector::zeros(n)];
    for i in 1..noise.nodes().len() {
        let mut cur: DVector<f64> = prefix[i - 1].clone();
        if let Some(j) = noise.jump_at_node(i) {
            cur += &j.mark;
        }
        prefix.push(cur);
    }
    let prefix = Arc::new(prefix);
    let look2 = look.clone();
    let m = diffusion_columns.len();
    CandidateIntegral::new(move |t, x| {
        let (i, _) = look2.locate(t);
        let mut acc = 0.0;
        for c in 0..n {
            let mut bw = 0.0;
            for (k, col) in diffusion_columns.iter().enumerate().take(m) {
                bw += col[c] * look2.wiener_at(k, t);
            }
            acc += x[c] - drift[c] * t - bw - prefix[i][c];
        }
        acc
    })
    .with_gradient(move |_, x| DVector::from_element(x.len(), 1.0))
    .with_hessian(move |_, x| DMatrix::zeros(x.len(), x.len()))
}

/// Exact candidate for the geometric family:
/// `u(t,x) = x exp[-(alpha - sigma^2/2) t - sigma W(t)] / prod_{tau <= t} (1 + c)`.
pub fn geometric_candidate(alpha: f64, sigma: f64, noise: &NoiseRealization) -> CandidateIntegral {
    let look = Arc::new(RealizationLookup::new(noise));
    let mut prefix = vec![1.0_f64];
    for i in 1..noise.nodes().len() {
        let mut cur = prefix[i - 1];
        if let Some(j) = noise.jump_at_node(i) {
            cur *= 1.0 + j.mark[0];
        }
        prefix.push(cur);
    }
    let prefix = Arc::new(prefix);
    let factor = move |t: f64, look: &RealizationLookup, prefix: &[f64]| -> f64 {
        let (i, _) = look.locate(t);
        (-(alpha - 0.5 * sigma * sigma) * t - sigma * look.wiener_at(0, t)).exp() / prefix[i]
    };
    let l2 = look.clone();
    let p2 = prefix.clone();
    CandidateIntegral::new(move |t, x| x[0] * factor(t, &l2, &p2))
        .with_gradient(move |t, _| DVector::from_vec(vec![factor(t, &look, &prefix)]))
        .with_hessian(|_, _| DMatrix::zeros(1, 1))
}

/// Exact candidate for the pure-jump family: `u(t,x) = x - sum_{tau <= t} gamma`.
pub fn pure_jump_candidate(noise: &NoiseRealization) -> CandidateIntegral {
    let look = Arc::new(RealizationLookup::new(noise));
    let mut prefix = vec![0.0_f64];
    for i in 1..noise.nodes().len() {
        let mut cur = prefix[i - 1];
        if let Some(j) = noise.jump_at_node(i) {
            cur += j.mark[0];
        }
        prefix.push(cur);
    }
    let prefix = Arc::new(prefix);
    CandidateIntegral::new(move |t, x| {
        let (i, _) = look.locate(t);
        x[0] - prefix[i]
    })
    .with_gradient(|_, _| DVector::from_vec(vec![1.0]))
    .with_hessian(|_, _| DMatrix::zeros(1, 1))
}

/// Squared radius, conserved by the deterministic 2D rotation.
pub fn rotation_energy_candidate() -> CandidateIntegral {
    CandidateIntegral::new(|_, x| x[0] * x[0] + x[1] * x[1])
        .with_time_derivative(|_, _| 0.0)
        .with_gradient(|_, x| DVector::from_vec(vec![2.0 * x[0], 2.0 * x[1]]))
        .with_hessian(|_, _| DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0])))
}

/// The coordinate function `u = x_0` (not a first integral of anything but
/// the trivial model; used as the negative control).
pub fn coordinate_candidate() -> CandidateIntegral {
    CandidateIntegral::new(|_, x| x[0])
        .with_time_derivative(|_, _| 0.0)
        .with_gradient(|_, x| {
            let mut g = DVector::zeros(x.len());
            g[0] = 1.0;
            g
        })
        .with_hessian(|_, x| DMatrix::zeros(x.len(), x.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry;
    use crate::timegrid::TimeGrid;

    #[test]
    fn fd_fallbacks_match_analytic_quadratic() {
        let c = CandidateIntegral::new(|_, x| x[0] * x[0] + 3.0 * x[0]);
        let x = DVector::from_vec(vec![0.7]);
        assert!((c.gradient(0.0, &x)[0] - (2.0 * 0.7 + 3.0)).abs() < 1e-7);
        assert!((c.hessian(0.0, &x)[(0, 0)] - 2.0).abs() < 1e-4);
        c.validate(&[(0.0, x)]).unwrap();
    }

    #[test]
    fn time_derivative_fd() {
        let c = CandidateIntegral::new(|t, _| 2.0 * t * t);
        let x = DVector::zeros(1);
        assert!((c.time_derivative(1.0, &x) - 4.0).abs() < 1e-6);
    }

    #[test]
    fn pure_jump_candidate_is_exactly_conserved() {
        let model = registry::pure_jump(&[(1.0, 2.0), (-0.5, 1.0)]).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 50).unwrap();
        for seed in 0..10 {
            let noise = crate::noise::sample_noise(&model, &grid, seed).unwrap();
            let u = pure_jump_candidate(&noise);
            let x0 = DVector::from_vec(vec![0.3]);
            let traj = crate::path::simulate_path(&model, &x0, &noise).unwrap();
            let u0 = u.value(0.0, &x0);
            for (i, &t) in traj.nodes().iter().enumerate() {
                let v = u.value(t, traj.state(i));
                // Bookkeeping identity; association rounding only.
                assert!((v - u0).abs() <= 1e-14, "drift at node {i}: {}", v - u0);
            }
        }
    }

    #[test]
    fn geometric_candidate_matches_closed_form_inverse() {
        let model = registry::geometric(0.3, 0.4, &[(0.2, 1.5)]).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 64).unwrap();
        let noise = crate::noise::sample_noise(&model, &grid, 3).unwrap();
        let u = geometric_candidate(0.3, 0.4, &noise);
        let exact = registry::geometric_closed_form(0.3, 0.4, 1.0, &noise);
        // u(t, x_exact(t)) = x0 along the exact solution.
        for (i, &t) in noise.nodes().iter().enumerate() {
            let x = DVector::from_vec(vec![exact[i]]);
            assert!((u.value(t, &x) - 1.0).abs() < 1e-12);
        }
    }
}
