//! Euler-Maruyama path simulation of the generalized Ito SDE under a sampled
//! noise realization.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::JumpDiffusionModel;
use crate::noise::NoiseRealization;

/// A simulated path on the noise grid. At jump nodes the stored state is the
/// post-jump value; `left_limits` keeps the pre-jump state.
#[derive(Debug, Clone)]
pub struct Trajectory {
    nodes: Vec<f64>,
    states: Vec<DVector<f64>>,
    /// `(node index, pre-jump state)` for every jump node, ascending.
    left_limits: Vec<(usize, DVector<f64>)>,
}

impl Trajectory {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn state(&self, node: usize) -> &DVector<f64> {
        &self.states[node]
    }

    pub fn terminal(&self) -> &DVector<f64> {
        self.states.last().unwrap()
    }

    pub fn left_limits(&self) -> &[(usize, DVector<f64>)] {
        &self.left_limits
    }

    pub fn left_limit(&self, node: usize) -> Option<&DVector<f64>> {
        self.left_limits
            .binary_search_by_key(&node, |(i, _)| *i)
            .ok()
            .map(|k| &self.left_limits[k].1)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Explicit Euler-Maruyama between nodes:
/// `x_{i+1} = x_i + a(t_i, x_i) dt + b(t_i, x_i) dw_i`.
/// At a jump node the continuous step is applied first, the left limit
/// recorded, then `g(tau, x-, gamma)` added.
pub fn simulate_path(
    model: &JumpDiffusionModel,
    x0: &DVector<f64>,
    noise: &NoiseRealization,
) -> Result<Trajectory> {
    if x0.len() != model.dim() {
        return Err(Error::InvalidInput(format!(
            "x0 has dimension {}, model expects {}",
            x0.len(),
            model.dim()
        )));
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("x0 must be finite".into()));
    }
    if noise.wiener_dim() != model.wiener_dim() {
        return Err(Error::GridMismatch(
            "noise realization was sampled for a different Wiener dimension".into(),
        ));
    }

    let nodes = noise.nodes();
    let m = model.wiener_dim();
    let mut states = Vec::with_capacity(nodes.len());
    let mut left_limits = Vec::new();
    states.push(x0.clone());

    let mut x = x0.clone();
    for s in 0..noise.n_steps() {
        let t = nodes[s];
        let dt = nodes[s + 1] - nodes[s];
        let mut next = &x + model.drift(t, &x) * dt;
        if m > 0 {
            let b = model.diffusion(t, &x);
            let dw = noise.step_increments(s);
            for k in 0..m {
                for i in 0..x.len() {
                    next[i] += b[(i, k)] * dw[k];
                }
            }
        }
        if let Some(jump) = noise.jump_at_node(s + 1) {
            let mark = &jump.mark;
            let left = next.clone();
            next += model.jump_amplitude(jump.time, &left, mark);
            left_limits.push((s + 1, left));
        }
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence {
                step: s + 1,
                t: nodes[s + 1],
            });
        }
        states.push(next.clone());
        x = next;
    }

    Ok(Trajectory {
        nodes: nodes.to_vec(),
        states,
        left_limits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{JumpDiffusionModel, MarkMeasure};
    use crate::noise::sample_noise;
    use crate::timegrid::TimeGrid;
    use nalgebra::DMatrix;

    fn constant_model(a: f64, b: f64) -> JumpDiffusionModel {
        JumpDiffusionModel::builder("const", 1, 1)
            .drift(move |_, _| DVector::from_vec(vec![a]))
            .diffusion(move |_, _| DMatrix::from_vec(1, 1, vec![b]))
            .build()
            .unwrap()
    }

    #[test]
    fn zero_coefficients_keep_state_constant() {
        let model = constant_model(0.0, 0.0);
        let grid = TimeGrid::uniform(0.0, 1.0, 32).unwrap();
        let noise = sample_noise(&model, &grid, 1).unwrap();
        let traj = simulate_path(&model, &DVector::from_vec(vec![1.0]), &noise).unwrap();
        assert!(traj.states().iter().all(|x| x[0] == 1.0));
    }

    #[test]
    fn constant_drift_is_integrated_exactly() {
        let model = constant_model(1.0, 0.0);
        let grid = TimeGrid::uniform(0.0, 1.0, 17).unwrap();
        let noise = sample_noise(&model, &grid, 1).unwrap();
        let traj = simulate_path(&model, &DVector::zeros(1), &noise).unwrap();
        assert!((traj.terminal()[0] - 1.0).abs() < 1e-13);
    }

    #[test]
    fn unit_diffusion_reproduces_wiener_prefix_sums() {
        // a = 0, b = 1: x(t_i) equals the prefix sum of the sampled
        // increments exactly (the prefix-sum oracle reads the realization).
        let model = constant_model(0.0, 1.0);
        let grid = TimeGrid::uniform(0.0, 1.0, 100).unwrap();
        let noise = sample_noise(&model, &grid, 42).unwrap();
        let traj = simulate_path(&model, &DVector::zeros(1), &noise).unwrap();
        let w = noise.wiener_path();
        for (i, x) in traj.states().iter().enumerate() {
            assert_eq!(x[0], w[0][i], "node {i}");
        }
    }

    #[test]
    fn jump_consistency_at_every_jump_node() {
        let marks = MarkMeasure::from_pairs(&[(vec![0.4], 2.0), (vec![-0.2], 1.0)]).unwrap();
        let model = JumpDiffusionModel::builder("jumpy", 1, 1)
            .drift(|_, x| DVector::from_vec(vec![0.3 * x[0]]))
            .diffusion(|_, _| DMatrix::from_vec(1, 1, vec![0.2]))
            .jump(marks, |_, x, g| DVector::from_vec(vec![g[0] * (1.0 + 0.1 * x[0])]))
            .build()
            .unwrap();
        let grid = TimeGrid::uniform(0.0, 2.0, 50).unwrap();
        for seed in 0..20 {
            let noise = sample_noise(&model, &grid, seed).unwrap();
            let traj = simulate_path(&model, &DVector::from_vec(vec![0.5]), &noise).unwrap();
            for jump in noise.jumps() {
                let left = traj.left_limit(jump.node).expect("left limit recorded");
                let mark = &jump.mark;
                let g = model.jump_amplitude(jump.time, left, mark);
                let post = traj.state(jump.node);
                // post - pre = g(tau, pre, gamma) exactly
                assert_eq!(post[0], left[0] + g[0]);
            }
            assert_eq!(traj.left_limits().len(), noise.jumps().len());
        }
    }

    #[test]
    fn determinism_same_seed_same_path() {
        let model = constant_model(0.1, 0.9);
        let grid = TimeGrid::uniform(0.0, 1.0, 64).unwrap();
        let n1 = sample_noise(&model, &grid, 11).unwrap();
        let n2 = sample_noise(&model, &grid, 11).unwrap();
        let t1 = simulate_path(&model, &DVector::zeros(1), &n1).unwrap();
        let t2 = simulate_path(&model, &DVector::zeros(1), &n2).unwrap();
        for (a, b) in t1.states().iter().zip(t2.states()) {
            assert_eq!(a[0].to_bits(), b[0].to_bits());
        }
    }

    #[test]
    fn divergence_reports_step() {
        let model = JumpDiffusionModel::builder("explosive", 1, 0)
            .drift(|_, x| DVector::from_vec(vec![x[0] * x[0] * x[0] * 1e6]))
            .diffusion(|_, _| DMatrix::zeros(1, 0))
            .build()
            .unwrap();
        let grid = TimeGrid::uniform(0.0, 10.0, 40).unwrap();
        let noise = sample_noise(&model, &grid, 3).unwrap();
        let r = simulate_path(&model, &DVector::from_vec(vec![2.0]), &noise);
        match r {
            Err(Error::Divergence { step, .. }) => assert!(step > 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
