//! Pointwise explicit evolution of a grid field by its generalized
//! differential under a fixed noise realization.
//!
//! The update has no spatial coupling because `Q`, `D`, `G` are given
//! functions of `(t, x)`:
//! `u_{i+1}(x_j) = u_i(x_j) + Q(t_i, x_j) dt + D_k(t_i, x_j) dw_k`,
//! plus `G(tau, x_j, gamma)` at jump nodes.

use crate::calculus::differential::FieldDifferential;
use crate::error::{Error, Result};
use crate::noise::NoiseRealization;
use crate::space::GridField;

pub fn evolve_field(
    initial: &GridField,
    diff: &FieldDifferential,
    noise: &NoiseRealization,
) -> Result<GridField> {
    if diff.wiener_dim() != noise.wiener_dim() {
        return Err(Error::GridMismatch(
            "field differential and noise have different Wiener dimensions".into(),
        ));
    }
    let nodes = noise.nodes();
    let t0 = *initial.times.last().unwrap();
    if (t0 - nodes[0]).abs() > 1e-12 * (1.0 + t0.abs()) {
        return Err(Error::GridMismatch(format!(
            "initial slice is at t = {t0}, noise starts at {}",
            nodes[0]
        )));
    }

    let grid = initial.grid.clone();
    let points: Vec<_> = (0..grid.len()).map(|j| grid.point(j)).collect();
    let m = diff.wiener_dim();

    let mut slices = Vec::with_capacity(nodes.len());
    slices.push(initial.slices.last().unwrap().clone());

    for s in 0..noise.n_steps() {
        let t = nodes[s];
        let dt = nodes[s + 1] - nodes[s];
        let dw = noise.step_increments(s);
        let jump = noise.jump_at_node(s + 1);
        let prev = &slices[s];
        let mut next = Vec::with_capacity(prev.len());
        for (j, x) in points.iter().enumerate() {
            let mut v = prev[j] + diff.q(t, x) * dt;
            if m > 0 {
                let d = diff.d(t, x);
                for k in 0..m {
                    v += d[k] * dw[k];
                }
            }
            if let Some(jp) = jump {
                v += diff.g(jp.time, x, &jp.mark)?;
            }
            if !v.is_finite() {
                return Err(Error::Divergence {
                    step: s + 1,
                    t: nodes[s + 1],
                });
            }
            next.push(v);
        }
        slices.push(next);
    }

    Ok(GridField {
        grid,
        times: nodes.to_vec(),
        slices,
    })
}
