//! Built-in model families. All registry models carry analytic spatial
//! derivatives, so nothing in the report pipeline falls back to finite
//! differences unless a user model omits them.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{JumpDiffusionModel, MarkMeasure};
use crate::noise::NoiseRealization;

/// Constant drift and diffusion, optional constant-mark jumps `g = gamma`.
/// The mark dimension equals the state dimension.
pub fn additive(
    drift: Vec<f64>,
    diffusion_columns: Vec<Vec<f64>>,
    jumps: Option<MarkMeasure>,
) -> Result<JumpDiffusionModel> {
    let n = drift.len();
    let m = diffusion_columns.len();
    for col in &diffusion_columns {
        if col.len() != n {
            return Err(Error::InvalidModel(
                "additive: diffusion columns must have state dimension".into(),
            ));
        }
    }
    let mut b = DMatrix::zeros(n, m);
    for (k, col) in diffusion_columns.iter().enumerate() {
        for i in 0..n {
            b[(i, k)] = col[i];
        }
    }
    let a = DVector::from_vec(drift);
    let nn = n;
    let mut builder = JumpDiffusionModel::builder("additive", n, m)
        .drift(move |_, _| a.clone())
        .diffusion(move |_, _| b.clone())
        .grad_drift(move |_, _| DMatrix::zeros(nn, nn))
        .grad_diffusion(move |_, _| vec![DMatrix::zeros(nn, nn); m])
        .hess_diffusion(move |_, _| vec![vec![DMatrix::zeros(nn, nn); nn]; m]);
    if let Some(marks) = jumps {
        if marks.mark_dim() != n && !marks.is_empty() {
            return Err(Error::InvalidModel(
                "additive: marks must have the state dimension".into(),
            ));
        }
        builder = builder
            .jump(marks, |_, _, g| g.clone())
            .grad_jump(move |_, _, _| DMatrix::zeros(nn, nn));
    }
    builder.build()
}

/// 1D geometric jump diffusion: `a = alpha x`, `b = sigma x`,
/// `g = c x` per atom (mark is the scalar factor `c`).
pub fn geometric(alpha: f64, sigma: f64, jump_factors: &[(f64, f64)]) -> Result<JumpDiffusionModel> {
    for &(c, _) in jump_factors {
        if c <= -1.0 {
            return Err(Error::InvalidModel(format!(
                "geometric: jump factor {c} <= -1 makes the jump map singular"
            )));
        }
    }
    let marks = if jump_factors.is_empty() {
        MarkMeasure::none()
    } else {
        MarkMeasure::from_pairs(
            &jump_factors
                .iter()
                .map(|&(c, rate)| (vec![c], rate))
                .collect::<Vec<_>>(),
        )?
    };
    let mut builder = JumpDiffusionModel::builder("geometric", 1, 1)
        .drift(move |_, x| DVector::from_vec(vec![alpha * x[0]]))
        .diffusion(move |_, x| DMatrix::from_vec(1, 1, vec![sigma * x[0]]))
        .grad_drift(move |_, _| DMatrix::from_vec(1, 1, vec![alpha]))
        .grad_diffusion(move |_, _| vec![DMatrix::from_vec(1, 1, vec![sigma])])
        .hess_diffusion(move |_, _| vec![vec![DMatrix::zeros(1, 1)]]);
    if !marks.is_empty() {
        builder = builder
            .jump(marks, |_, x, g| DVector::from_vec(vec![g[0] * x[0]]))
            .grad_jump(|_, _, g| DMatrix::from_vec(1, 1, vec![g[0]]));
    }
    builder.build()
}

/// 1D Ornstein-Uhlenbeck with additive jumps: `a = -theta x`, `b = sigma`,
/// `g = gamma`.
pub fn ou_jump(theta: f64, sigma: f64, marks: &[(f64, f64)]) -> Result<JumpDiffusionModel> {
    let measure = if marks.is_empty() {
        MarkMeasure::none()
    } else {
        MarkMeasure::from_pairs(
            &marks
                .iter()
                .map(|&(g, rate)| (vec![g], rate))
                .collect::<Vec<_>>(),
        )?
    };
    let mut builder = JumpDiffusionModel::builder("ou_jump", 1, 1)
        .drift(move |_, x| DVector::from_vec(vec![-theta * x[0]]))
        .diffusion(move |_, _| DMatrix::from_vec(1, 1, vec![sigma]))
        .grad_drift(move |_, _| DMatrix::from_vec(1, 1, vec![-theta]))
        .grad_diffusion(move |_, _| vec![DMatrix::zeros(1, 1)])
        .hess_diffusion(move |_, _| vec![vec![DMatrix::zeros(1, 1)]]);
    if !measure.is_empty() {
        builder = builder
            .jump(measure, |_, _, g| g.clone())
            .grad_jump(|_, _, _| DMatrix::zeros(1, 1));
    }
    builder.build()
}

/// 1D pure jump process: `a = b = 0`, `g = gamma`.
pub fn pure_jump(marks: &[(f64, f64)]) -> Result<JumpDiffusionModel> {
    if marks.is_empty() {
        return Err(Error::InvalidModel("pure_jump needs at least one atom".into()));
    }
    let measure = MarkMeasure::from_pairs(
        &marks
            .iter()
            .map(|&(g, rate)| (vec![g], rate))
            .collect::<Vec<_>>(),
    )?;
    JumpDiffusionModel::builder("pure_jump", 1, 0)
        .drift(|_, _| DVector::zeros(1))
        .diffusion(|_, _| DMatrix::zeros(1, 0))
        .grad_drift(|_, _| DMatrix::zeros(1, 1))
        .grad_diffusion(|_, _| Vec::new())
        .hess_diffusion(|_, _| Vec::new())
        .jump(measure, |_, _, g| g.clone())
        .grad_jump(|_, _, _| DMatrix::zeros(1, 1))
        .build()
}

/// 2D rigid rotation `a = omega (-x2, x1)` with optional isotropic noise of
/// strength `eps` (diffusion `eps I`).
pub fn rotation2d(omega: f64, noise: Option<f64>) -> Result<JumpDiffusionModel> {
    let eps = noise.unwrap_or(0.0);
    let m = if eps != 0.0 { 2 } else { 0 };
    JumpDiffusionModel::builder("rotation2d", 2, m)
        .drift(move |_, x| DVector::from_vec(vec![-omega * x[1], omega * x[0]]))
        .diffusion(move |_, _| {
            if m == 0 {
                DMatrix::zeros(2, 0)
            } else {
                DMatrix::from_diagonal(&DVector::from_vec(vec![eps, eps]))
            }
        })
        .grad_drift(move |_, _| DMatrix::from_vec(2, 2, vec![0.0, omega, -omega, 0.0]))
        .grad_diffusion(move |_, _| vec![DMatrix::zeros(2, 2); m])
        .hess_diffusion(move |_, _| vec![vec![DMatrix::zeros(2, 2); 2]; m])
        .build()
}

/// Closed-form geometric jump-diffusion solution at every node of `noise`:
/// `x(t) = x0 exp[(alpha - sigma^2/2) t + sigma W(t)] prod_{tau_i <= t} (1 + c_i)`.
pub fn geometric_closed_form(
    alpha: f64,
    sigma: f64,
    x0: f64,
    noise: &NoiseRealization,
) -> Vec<f64> {
    let nodes = noise.nodes();
    let w = noise.wiener_path();
    let mut jump_product = 1.0;
    let mut out = Vec::with_capacity(nodes.len());
    for (i, &t) in nodes.iter().enumerate() {
        if let Some(jump) = noise.jump_at_node(i) {
            let c = jump.mark[0];
            jump_product *= 1.0 + c;
        }
        let wt = if w.is_empty() { 0.0 } else { w[0][i] };
        out.push(x0 * ((alpha - 0.5 * sigma * sigma) * t + sigma * wt).exp() * jump_product);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::JumpShape;
    use crate::noise::sample_noise;
    use crate::path::simulate_path;
    use crate::report::fit_order;
    use crate::timegrid::TimeGrid;

    #[test]
    fn registry_models_pass_the_smoothness_probe() {
        let models = vec![
            additive(vec![0.5], vec![vec![0.3]], Some(MarkMeasure::from_pairs(&[(vec![0.2], 1.0)]).unwrap())).unwrap(),
            geometric(0.3, 0.4, &[(0.2, 1.0)]).unwrap(),
            ou_jump(1.0, 1.0, &[(0.5, 1.0)]).unwrap(),
            pure_jump(&[(1.0, 1.0)]).unwrap(),
            rotation2d(0.7, Some(0.1)).unwrap(),
        ];
        for m in &models {
            m.validate(17).unwrap_or_else(|e| panic!("{}: {e}", m.name));
        }
        assert_eq!(models[1].jump_shape(), JumpShape::StateDependent);
        assert_eq!(models[2].jump_shape(), JumpShape::StateIndependent);
    }

    #[test]
    fn geometric_factor_below_minus_one_rejected() {
        assert!(geometric(0.1, 0.2, &[(-1.0, 1.0)]).is_err());
    }

    #[test]
    fn closed_form_matches_exact_cases() {
        // sigma = 0, no jumps: x(t) = x0 e^{alpha t}.
        let model = geometric(0.4, 0.0, &[]).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 10).unwrap();
        let noise = sample_noise(&model, &grid, 0).unwrap();
        let exact = geometric_closed_form(0.4, 0.0, 2.0, &noise);
        assert!((exact.last().unwrap() - 2.0 * 0.4_f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn strong_convergence_order_at_least_half() {
        // Pathwise strong error of Euler-Maruyama vs the closed form under
        // the same (bridge-coupled) noise: fitted order >= 0.45 across a
        // Richardson triple dt, dt/2, dt/4.
        let alpha = 0.3;
        let sigma = 0.5;
        let model = geometric(alpha, sigma, &[(0.2, 1.0)]).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 64).unwrap();
        let seeds: Vec<u64> = (0..40).collect();

        let mut level_errors = vec![0.0_f64; 3];
        let mut dts = vec![0.0_f64; 3];
        for &seed in &seeds {
            let mut noise = sample_noise(&model, &grid, seed).unwrap();
            for level in 0..3 {
                let traj = simulate_path(&model, &DVector::from_vec(vec![1.0]), &noise).unwrap();
                let exact = geometric_closed_form(alpha, sigma, 1.0, &noise);
                let err = (traj.terminal()[0] - exact.last().unwrap()).abs();
                level_errors[level] += err * err;
                dts[level] = 1.0 / (64 << level) as f64;
                if level < 2 {
                    noise = noise.refine();
                }
            }
        }
        let samples: Vec<(f64, f64)> = dts
            .iter()
            .zip(&level_errors)
            .map(|(&dt, &e2)| (dt, (e2 / seeds.len() as f64).sqrt()))
            .collect();
        let order = fit_order(&samples).unwrap();
        assert!(order >= 0.45, "strong order {order:.3}, samples {samples:?}");
    }
}
