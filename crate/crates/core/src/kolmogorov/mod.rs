//! Deterministic forward and backward Kolmogorov integro-PDEs for the jump
//! diffusion, drift compensation, and the Monte Carlo / Chapman / duality
//! cross-checks.

pub mod backward;
pub mod chapman;
pub mod forward;
pub mod mc;

pub use backward::{solve_backward, BackwardConfig, BackwardField, TerminalData};
pub use chapman::chapman_consistency;
pub use forward::{
    gaussian_slice, mollified_delta, slice_moments, solve_forward, window_mass, DensityField,
    ForwardConfig, JumpFormulation,
};
pub use mc::{monte_carlo_density, Histogram, InitialSampler};

use crate::model::JumpDiffusionModel;
use crate::report::VerificationReport;
use crate::space::SpaceGrid;

/// Replace the drift by the compensated drift
/// `a_bar = a - sum_j rate_j g(t, x, gamma_j)` (the centered-measure
/// coefficient change). Everything else is untouched.
pub fn compensate_drift(model: &JumpDiffusionModel) -> JumpDiffusionModel {
    model.compensated()
}

/// Backward-forward duality: `integral v(s, y) p(s, y) dy` must be constant
/// in `s` when `v` solves the backward equation with terminal data `phi` and
/// `p` solves the forward equation. Both solvers are independent, so the
/// drift of the overlap is a genuine two-sided error measure.
pub fn duality_check(
    model: &JumpDiffusionModel,
    p0: &[f64],
    space: &SpaceGrid,
    t_end: f64,
    phi: &(dyn Fn(&nalgebra::DVector<f64>) -> f64 + Sync),
    phi_name: &str,
    checkpoints: &[f64],
) -> crate::error::Result<VerificationReport> {
    let forward = solve_forward(
        model,
        p0,
        space,
        &ForwardConfig {
            snapshot_times: checkpoints.to_vec(),
            ..ForwardConfig::to_time(t_end)
        },
    )?;
    let backward = solve_backward(
        model,
        TerminalData::Fn(phi),
        space,
        &BackwardConfig {
            s_checkpoints: checkpoints.to_vec(),
            ..BackwardConfig::over(0.0, t_end)
        },
    )?;

    let mut report = VerificationReport::new(format!("duality_{phi_name}"));
    report.config("model", &model.name);
    report.config("t_end", t_end);
    report.config("phi", phi_name);

    let overlap = |s: f64| -> f64 {
        let (_, p_s) = forward.slice_at(s);
        let (_, v_s) = backward.slice_at(s);
        let weighted: Vec<f64> = v_s.iter().zip(p_s.iter()).map(|(a, b)| a * b).collect();
        space.integrate(&weighted)
    };

    let reference = overlap(t_end);
    report.metric("overlap_at_t_end", reference);
    let mut max_drift = 0.0_f64;
    for &s in checkpoints {
        let o = overlap(s);
        report.metric(format!("overlap_at_{s}"), o);
        max_drift = max_drift.max((o - reference).abs());
    }
    report.metric("max_drift", max_drift);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry;
    use nalgebra::DVector;

    #[test]
    fn compensation_arithmetic() {
        // No jumps: unchanged.
        let plain = registry::additive(vec![5.0], vec![vec![1.0]], None).unwrap();
        let comp = compensate_drift(&plain);
        let x = DVector::from_vec(vec![0.3]);
        assert_eq!(comp.drift(0.0, &x)[0], 5.0);

        // One atom g = 2 at rate 1, a = 5: compensated drift 3.
        let marks = crate::model::MarkMeasure::from_pairs(&[(vec![2.0], 1.0)]).unwrap();
        let jumpy = registry::additive(vec![5.0], vec![vec![1.0]], Some(marks)).unwrap();
        let comp = compensate_drift(&jumpy);
        assert!((comp.drift(0.0, &x)[0] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn compensation_state_dependent_two_atoms() {
        // g = gamma x with gamma in {0.1, -0.2}, rates {1, 2}:
        // a_bar(x) = a(x) - (0.1 - 0.4) x = a(x) + 0.3 x.
        let model = registry::geometric(0.5, 0.0, &[(0.1, 1.0), (-0.2, 2.0)]).unwrap();
        let comp = compensate_drift(&model);
        for &xv in &[0.5, 1.0, -2.0] {
            let x = DVector::from_vec(vec![xv]);
            let expected = 0.5 * xv + 0.3 * xv;
            assert!(
                (comp.drift(0.0, &x)[0] - expected).abs() < 1e-12,
                "x = {xv}"
            );
        }
        // Compensated gradient matches too.
        let g = comp.grad_drift(0.0, &DVector::from_vec(vec![1.0]));
        assert!((g[(0, 0)] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn duality_overlap_constant_for_ou() {
        let model = registry::ou_jump(1.0, 1.0, &[]).unwrap();
        let space = crate::space::SpaceGrid::line(-5.0, 5.0, 257).unwrap();
        let p0 = gaussian_slice(&space, &[0.5], 0.09);
        let phi = |y: &DVector<f64>| y[0].cos();
        let rep = duality_check(
            &model,
            &p0,
            &space,
            0.5,
            &phi,
            "cos",
            &[0.0, 0.25, 0.5],
        )
        .unwrap();
        let drift = rep.metrics.iter().find(|(k, _)| k == "max_drift").unwrap().1;
        assert!(drift <= 5e-2, "duality drift {drift:.3e}");
    }
}
