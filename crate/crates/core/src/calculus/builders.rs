//! Coefficient systems that make a candidate function a stochastic first
//! integral of the jump diffusion.
//!
//! Both variants share the continuous coefficients
//!
//! ```text
//! Q = -[ a_i du/dx_i + 1/2 b_ik b_jk d2u/dx_i dx_j
//!        - b_ik d/dx_i (b_jk du/dx_j) ]
//! D_k = -b_ik du/dx_i
//! ```
//!
//! and differ in the jump coefficient: for a state-independent amplitude
//! `G(t,x,gamma) = u(t, x - g(t,gamma)) - u(t,x)`, while a state-dependent
//! amplitude routes the shift through the inverse jump map,
//! `G(t,x,gamma) = u(t, x - g(t, x^{-1}(t,x,gamma), gamma)) - u(t,x)`.

use nalgebra::{DMatrix, DVector};

use crate::calculus::candidate::CandidateIntegral;
use crate::calculus::differential::FieldDifferential;
use crate::error::{Error, Result};
use crate::jump::inverse_jump_map;
use crate::model::{JumpDiffusionModel, JumpShape};

fn continuous_coefficients(
    u: &CandidateIntegral,
    model: &JumpDiffusionModel,
) -> (
    impl Fn(f64, &DVector<f64>) -> f64 + Send + Sync,
    impl Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync,
    impl Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync,
) {
    let n = model.dim();
    let m = model.wiener_dim();

    let q = {
        let u = u.clone();
        let model = model.clone();
        move |t: f64, x: &DVector<f64>| -> f64 {
            let grad = u.gradient(t, x);
            let hess = u.hessian(t, x);
            let a = model.drift(t, x);
            let b = model.diffusion(t, x);
            let grad_b = model.grad_diffusion(t, x);

            let term_drift = a.dot(&grad);
            let mut term_diff = 0.0;
            let mut term_transport = 0.0;
            for k in 0..m {
                for i in 0..n {
                    for j in 0..n {
                        term_diff += 0.5 * b[(i, k)] * b[(j, k)] * hess[(i, j)];
                        term_transport += b[(i, k)]
                            * (grad_b[k][(j, i)] * grad[j] + b[(j, k)] * hess[(j, i)]);
                    }
                }
            }
            -(term_drift + term_diff - term_transport)
        }
    };

    let d = {
        let u = u.clone();
        let model = model.clone();
        move |t: f64, x: &DVector<f64>| -> DVector<f64> {
            let grad = u.gradient(t, x);
            let b = model.diffusion(t, x);
            -(b.transpose() * grad)
        }
    };

    let d_grad = {
        let u = u.clone();
        let model = model.clone();
        move |t: f64, x: &DVector<f64>| -> DMatrix<f64> {
            let grad = u.gradient(t, x);
            let hess = u.hessian(t, x);
            let b = model.diffusion(t, x);
            let grad_b = model.grad_diffusion(t, x);
            let mut out = DMatrix::zeros(m, n);
            for k in 0..m {
                for i in 0..n {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += grad_b[k][(j, i)] * grad[j] + b[(j, k)] * hess[(j, i)];
                    }
                    out[(k, i)] = -acc;
                }
            }
            out
        }
    };

    (q, d, d_grad)
}

/// Coefficient triple for a state-independent jump amplitude.
pub fn first_integral_coeffs_xindep(
    u: &CandidateIntegral,
    model: &JumpDiffusionModel,
) -> Result<FieldDifferential> {
    if model.has_jumps() && model.jump_shape() == JumpShape::StateDependent {
        return Err(Error::WrongVariant(
            "jump amplitude depends on the state (grad_g probe exceeds 1e-10); \
             use first_integral_coeffs_xdep"
                .into(),
        ));
    }
    let (q, d, d_grad) = continuous_coefficients(u, model);
    let mut diff = FieldDifferential::new(model.wiener_dim(), q, d).with_d_grad(d_grad);
    if model.has_jumps() {
        let u = u.clone();
        let model_g = model.clone();
        diff = diff.with_jump(move |t, x, mark| {
            let shifted = x - model_g.jump_amplitude(t, x, mark);
            Ok(u.value(t, &shifted) - u.value(t, x))
        });
    }
    Ok(diff)
}

/// Coefficient triple for a state-dependent jump amplitude: the jump
/// coefficient pulls the shift back through the inverse jump map. Inverse-map
/// failures propagate out of the jump coefficient with their context.
pub fn first_integral_coeffs_xdep(
    u: &CandidateIntegral,
    model: &JumpDiffusionModel,
) -> Result<FieldDifferential> {
    let (q, d, d_grad) = continuous_coefficients(u, model);
    let mut diff = FieldDifferential::new(model.wiener_dim(), q, d).with_d_grad(d_grad);
    if model.has_jumps() {
        let u = u.clone();
        let model_g = model.clone();
        diff = diff.with_jump(move |t, x, mark| {
            let x_inv = inverse_jump_map(&model_g, t, x, mark)?;
            let shifted = x - model_g.jump_amplitude(t, &x_inv, mark);
            Ok(u.value(t, &shifted) - u.value(t, x))
        });
    }
    Ok(diff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::candidate::CandidateIntegral;
    use crate::model::MarkMeasure;
    use crate::registry;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn linear_candidate() -> CandidateIntegral {
        CandidateIntegral::new(|_, x| x[0])
            .with_gradient(|_, x| DVector::from_element(x.len(), 1.0))
            .with_hessian(|_, x| DMatrix::zeros(x.len(), x.len()))
    }

    #[test]
    fn constant_coefficients_give_q_minus_a_d_minus_b() {
        // 1D, a, b constant, u = x: Q = -a, D = -b.
        let model = registry::additive(vec![0.7], vec![vec![0.4]], None).unwrap();
        let u = linear_candidate();
        let diff = first_integral_coeffs_xindep(&u, &model).unwrap();
        let x = DVector::from_vec(vec![0.3]);
        assert!((diff.q(0.2, &x) + 0.7).abs() < 1e-12);
        assert!((diff.d(0.2, &x)[0] + 0.4).abs() < 1e-12);
    }

    #[test]
    fn additive_jump_gives_g_minus_gamma() {
        // u = x, g = gamma: G = -gamma.
        let marks = MarkMeasure::from_pairs(&[(vec![0.6], 1.0)]).unwrap();
        let model = registry::additive(vec![0.0], vec![vec![0.0]], Some(marks)).unwrap();
        let u = linear_candidate();
        let diff = first_integral_coeffs_xindep(&u, &model).unwrap();
        let x = DVector::from_vec(vec![1.1]);
        let mark = DVector::from_vec(vec![0.6]);
        assert!((diff.g(0.0, &x, &mark).unwrap() + 0.6).abs() < 1e-12);
    }

    #[test]
    fn quadratic_candidate_q_from_hand_evaluation() {
        // 1D a = 0, b = sigma constant, u = x^2. Hand evaluation of the three
        // Q terms: Q = -[0 + sigma^2 - 2 sigma^2] = sigma^2.
        let sigma = 0.8;
        let model = registry::additive(vec![0.0], vec![vec![sigma]], None).unwrap();
        let u = CandidateIntegral::new(|_, x| x[0] * x[0])
            .with_gradient(|_, x| DVector::from_vec(vec![2.0 * x[0]]))
            .with_hessian(|_, _| DMatrix::from_vec(1, 1, vec![2.0]));
        let diff = first_integral_coeffs_xindep(&u, &model).unwrap();
        let x = DVector::from_vec(vec![0.9]);
        assert!(
            (diff.q(0.0, &x) - sigma * sigma).abs() < 1e-12,
            "Q = {}",
            diff.q(0.0, &x)
        );
    }

    #[test]
    fn wrong_variant_is_rejected() {
        let model = registry::geometric(0.1, 0.2, &[(0.3, 1.0)]).unwrap();
        let u = linear_candidate();
        match first_integral_coeffs_xindep(&u, &model) {
            Err(Error::WrongVariant(_)) => {}
            other => panic!("expected wrong-variant error, got {other:?}"),
        }
    }

    #[test]
    fn builders_agree_for_state_independent_jumps() {
        // g independent of x: both builders produce identical G on random
        // probes to 1e-12.
        let marks = MarkMeasure::from_pairs(&[(vec![0.4], 1.0), (vec![-0.7], 0.5)]).unwrap();
        let model = registry::additive(vec![0.2], vec![vec![0.5]], Some(marks)).unwrap();
        let u = CandidateIntegral::new(|_, x| (x[0] * 0.9).sin() + 0.3 * x[0]);
        let a = first_integral_coeffs_xindep(&u, &model).unwrap();
        let b = first_integral_coeffs_xdep(&u, &model).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let t: f64 = rng.random::<f64>();
            let x = DVector::from_vec(vec![rng.random::<f64>() * 4.0 - 2.0]);
            let atom = usize::from(rng.random::<bool>());
            let mark = model.marks().atoms()[atom].mark.clone();
            let ga = a.g(t, &x, &mark).unwrap();
            let gb = b.g(t, &x, &mark).unwrap();
            assert!((ga - gb).abs() <= 1e-12, "|dG| = {}", (ga - gb).abs());
        }
    }

    #[test]
    fn xdep_linear_jump_g_matches_substitution() {
        // 1D g = c x, u = x: x^{-1} = x / (1+c), G = x/(1+c) - x.
        let c = 0.5;
        let model = registry::geometric(0.0, 0.0, &[(c, 1.0)]).unwrap();
        let u = linear_candidate();
        let diff = first_integral_coeffs_xdep(&u, &model).unwrap();
        let mark = DVector::from_vec(vec![c]);
        let x = DVector::from_vec(vec![3.0]);
        let g = diff.g(0.0, &x, &mark).unwrap();
        assert!((g - (3.0 / 1.5 - 3.0)).abs() < 1e-10, "G = {g}");
    }

    #[test]
    fn xdep_log_candidate_gives_constant_g() {
        // u = log|x|, g = c x with c = 0.5: G = -log 1.5 independent of x.
        let c = 0.5;
        let model = registry::geometric(0.0, 0.0, &[(c, 1.0)]).unwrap();
        let u = CandidateIntegral::new(|_, x: &DVector<f64>| x[0].abs().ln());
        let diff = first_integral_coeffs_xdep(&u, &model).unwrap();
        let mark = DVector::from_vec(vec![c]);
        for &xv in &[0.5, 1.0, 2.0, 7.3] {
            let g = diff.g(0.0, &DVector::from_vec(vec![xv]), &mark).unwrap();
            assert!((g + 1.5_f64.ln()).abs() < 1e-9, "G = {g} at x = {xv}");
        }
    }
}
