//! The flow-map Jacobian determinant `J(t)` along a trajectory.
//!
//! Between jumps `J` satisfies `dJ = J { K dt + tr(grad b_k) dw_k }` with
//!
//! ```text
//! K = sum_i da_i/dx_i
//!   + 1/2 sum_k [ (sum_i db_ik/dx_i)(sum_j db_jk/dx_j)
//!               - sum_{i,j} (db_ik/dx_j)(db_jk/dx_i) ]
//! ```
//!
//! and at a jump it is multiplied by `det[I + dg/dx]` evaluated at the left
//! limit. Both integration routes work in log form, so positivity is
//! structural; they differ only in how increments are accumulated, which is
//! exactly what the cross-check is for.

use crate::error::{Error, Result};
use crate::jump::jump_jacobian_det;
use crate::model::JumpDiffusionModel;
use crate::noise::NoiseRealization;
use crate::path::Trajectory;
use nalgebra::DVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianMethod {
    /// Per-step multiplicative accumulation: `J *= exp(increment)`, jump
    /// factors multiplied in directly.
    SdeIntegrated,
    /// Closed-form exponential of the accumulated quadratures plus the sum
    /// of log jump factors, evaluated per node.
    ClosedForm,
}

#[derive(Debug, Clone)]
pub struct JacobianSeries {
    pub method: JacobianMethod,
    values: Vec<f64>,
}

impl JacobianSeries {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, node: usize) -> f64 {
        self.values[node]
    }

    pub fn terminal(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

/// Divergence part of the Jacobian drift:
/// `K(t,x)` evaluated from the model's spatial derivatives.
pub fn k_coefficient(model: &JumpDiffusionModel, t: f64, x: &DVector<f64>) -> f64 {
    let n = model.dim();
    let grad_a = model.grad_drift(t, x);
    let mut k = (0..n).map(|i| grad_a[(i, i)]).sum::<f64>();
    if model.wiener_dim() > 0 {
        let grad_b = model.grad_diffusion(t, x);
        for gb in &grad_b {
            let div: f64 = (0..n).map(|i| gb[(i, i)]).sum();
            let mut cross = 0.0;
            for i in 0..n {
                for j in 0..n {
                    cross += gb[(i, j)] * gb[(j, i)];
                }
            }
            k += 0.5 * (div * div - cross);
        }
    }
    k
}

/// Per-component diffusion divergence `tr(grad b_k)`, the Wiener loading of
/// the Jacobian SDE.
pub fn diffusion_divergence(model: &JumpDiffusionModel, t: f64, x: &DVector<f64>) -> Vec<f64> {
    let n = model.dim();
    if model.wiener_dim() == 0 {
        return Vec::new();
    }
    model
        .grad_diffusion(t, x)
        .iter()
        .map(|gb| (0..n).map(|i| gb[(i, i)]).sum())
        .collect()
}

/// Evolve `J` along `traj` by both methods; `J(t0) = 1`.
pub fn evolve_jacobian(
    model: &JumpDiffusionModel,
    traj: &Trajectory,
    noise: &NoiseRealization,
) -> Result<(JacobianSeries, JacobianSeries)> {
    if traj.nodes() != noise.nodes() {
        return Err(Error::GridMismatch(
            "trajectory and noise live on different grids".into(),
        ));
    }
    let nodes = traj.nodes();
    let steps = noise.n_steps();
    let m = model.wiener_dim();

    let mut a_values = Vec::with_capacity(nodes.len());
    let mut b_values = Vec::with_capacity(nodes.len());
    a_values.push(1.0);
    b_values.push(1.0);

    let mut j_direct = 1.0_f64;
    let mut log_quadrature = 0.0_f64;
    let mut log_jumps = 0.0_f64;

    for s in 0..steps {
        let t = nodes[s];
        let dt = nodes[s + 1] - nodes[s];
        let x = traj.state(s);
        let k = k_coefficient(model, t, x);
        let div = diffusion_divergence(model, t, x);
        let mut increment = (k - 0.5 * div.iter().map(|d| d * d).sum::<f64>()) * dt;
        for kk in 0..m {
            increment += div[kk] * noise.increment(s, kk);
        }

        let mut jump_factor = 1.0;
        if let Some(jump) = noise.jump_at_node(s + 1) {
            let left = traj
                .left_limit(jump.node)
                .ok_or_else(|| Error::GridMismatch("trajectory misses a jump left limit".into()))?;
            let mark = &jump.mark;
            let det = jump_jacobian_det(model, jump.time, left, mark);
            if det <= 0.0 {
                return Err(Error::InvariantViolation(format!(
                    "jump determinant {det:.6e} <= 0 at t = {}: log form undefined",
                    jump.time
                )));
            }
            jump_factor = det;
            log_jumps += det.ln();
        }

        j_direct *= increment.exp() * jump_factor;
        log_quadrature += increment;

        a_values.push(j_direct);
        b_values.push((log_quadrature + log_jumps).exp());
    }

    Ok((
        JacobianSeries {
            method: JacobianMethod::SdeIntegrated,
            values: a_values,
        },
        JacobianSeries {
            method: JacobianMethod::ClosedForm,
            values: b_values,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{JumpDiffusionModel, MarkMeasure};
    use crate::noise::sample_noise;
    use crate::path::simulate_path;
    use crate::timegrid::TimeGrid;
    use nalgebra::DMatrix;

    #[test]
    fn k_vanishes_for_constant_coefficients() {
        let model = JumpDiffusionModel::builder("const", 1, 1)
            .drift(|_, _| DVector::from_vec(vec![2.0]))
            .diffusion(|_, _| DMatrix::from_vec(1, 1, vec![0.7]))
            .build()
            .unwrap();
        let k = k_coefficient(&model, 0.3, &DVector::from_vec(vec![0.4]));
        assert!(k.abs() < 1e-9, "K = {k}");
    }

    #[test]
    fn k_is_drift_divergence_for_linear_drift() {
        let model = JumpDiffusionModel::builder("lin-a", 1, 1)
            .drift(|_, x| DVector::from_vec(vec![0.8 * x[0]]))
            .diffusion(|_, _| DMatrix::from_vec(1, 1, vec![0.7]))
            .build()
            .unwrap();
        let k = k_coefficient(&model, 0.0, &DVector::from_vec(vec![1.2]));
        assert!((k - 0.8).abs() < 1e-7, "K = {k}");
    }

    #[test]
    fn k_b_terms_cancel_in_one_dimension() {
        // b = sigma x, a = 0: (db/dx)^2 - (db/dx)(db/dx) = 0.
        let model = JumpDiffusionModel::builder("gbm-b", 1, 1)
            .drift(|_, _| DVector::zeros(1))
            .diffusion(|_, x| DMatrix::from_vec(1, 1, vec![0.6 * x[0]]))
            .build()
            .unwrap();
        let k = k_coefficient(&model, 0.0, &DVector::from_vec(vec![1.5]));
        assert!(k.abs() < 1e-9, "K = {k}");
    }

    #[test]
    fn jacobian_constant_model_stays_one() {
        let marks = MarkMeasure::from_pairs(&[(vec![0.3], 2.0)]).unwrap();
        let model = JumpDiffusionModel::builder("const-all", 1, 1)
            .drift(|_, _| DVector::from_vec(vec![0.5]))
            .diffusion(|_, _| DMatrix::from_vec(1, 1, vec![0.4]))
            .jump(marks, |_, _, g| g.clone())
            .build()
            .unwrap();
        let grid = TimeGrid::uniform(0.0, 2.0, 64).unwrap();
        let noise = sample_noise(&model, &grid, 9).unwrap();
        let traj = simulate_path(&model, &DVector::zeros(1), &noise).unwrap();
        let (a, b) = evolve_jacobian(&model, &traj, &noise).unwrap();
        for (&ja, &jb) in a.values().iter().zip(b.values()) {
            assert!((ja - 1.0).abs() < 1e-12);
            assert!((jb - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_linear_drift_gives_exponential() {
        // dJ = alpha J dt, alpha = 0.5, T = 1: J(1) = e^{0.5}.
        let model = JumpDiffusionModel::builder("lin", 1, 0)
            .drift(|_, x| DVector::from_vec(vec![0.5 * x[0]]))
            .diffusion(|_, _| DMatrix::zeros(1, 0))
            .build()
            .unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 1000).unwrap();
        let noise = sample_noise(&model, &grid, 1).unwrap();
        let traj = simulate_path(&model, &DVector::from_vec(vec![1.0]), &noise).unwrap();
        let (a, b) = evolve_jacobian(&model, &traj, &noise).unwrap();
        let expect = 0.5_f64.exp();
        assert!((a.terminal() - expect).abs() < 1e-3, "J = {}", a.terminal());
        assert!((b.terminal() - expect).abs() < 1e-3);
    }

    #[test]
    fn single_proportional_jump_multiplies_by_one_plus_c() {
        // g = c x with c = 0.5, a = b = 0, exactly one realized jump:
        // J(T) = 1.5 exactly in the direct route.
        let marks = MarkMeasure::from_pairs(&[(vec![0.5], 0.7)]).unwrap();
        let model = JumpDiffusionModel::builder("one-jump", 1, 0)
            .drift(|_, _| DVector::zeros(1))
            .diffusion(|_, _| DMatrix::zeros(1, 0))
            .jump(marks, |_, x, g| DVector::from_vec(vec![g[0] * x[0]]))
            .grad_jump(|_, _, g| DMatrix::from_vec(1, 1, vec![g[0]]))
            .build()
            .unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 16).unwrap();
        let mut seed = 0;
        let noise = loop {
            let n = sample_noise(&model, &grid, seed).unwrap();
            if n.jumps().len() == 1 {
                break n;
            }
            seed += 1;
        };
        let traj = simulate_path(&model, &DVector::from_vec(vec![1.0]), &noise).unwrap();
        let (a, b) = evolve_jacobian(&model, &traj, &noise).unwrap();
        assert_eq!(a.terminal(), 1.5);
        assert!((b.terminal() - 1.5).abs() < 1e-12);
        assert!(a.values().iter().all(|&j| j > 0.0));
    }

    #[test]
    fn methods_agree_on_stochastic_model() {
        let marks = MarkMeasure::from_pairs(&[(vec![0.2], 1.0)]).unwrap();
        let model = JumpDiffusionModel::builder("gbm-jump", 1, 1)
            .drift(|_, x| DVector::from_vec(vec![0.3 * x[0]]))
            .diffusion(|_, x| DMatrix::from_vec(1, 1, vec![0.4 * x[0]]))
            .jump(marks, |_, x, g| DVector::from_vec(vec![g[0] * x[0]]))
            .build()
            .unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 200).unwrap();
        for seed in 0..10 {
            let noise = sample_noise(&model, &grid, seed).unwrap();
            let traj = simulate_path(&model, &DVector::from_vec(vec![1.0]), &noise).unwrap();
            let (a, b) = evolve_jacobian(&model, &traj, &noise).unwrap();
            for (&ja, &jb) in a.values().iter().zip(b.values()) {
                assert!(ja > 0.0 && jb > 0.0);
                assert!((ja - jb).abs() <= 1e-8 * jb.abs(), "{ja} vs {jb}");
            }
        }
    }
}
