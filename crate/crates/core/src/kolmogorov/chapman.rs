//! Chapman consistency: `p(t, x) = integral p(t, x / s, y) p(s, y) dy`.
//!
//! Transition densities are never stored as a four-argument tensor. For each
//! bin `B` of the final-state axis, the backward solver is run from the
//! indicator terminal data `1_B`, giving `V_B(s, y) = P(x(t) in B | x(s) = y)`;
//! the mixture side is then `integral V_B(s, y) p(s, y) dy`, compared against
//! the binned forward density. The forward and backward solvers are
//! independent discretizations, so the gap is a genuine two-sided check. At
//! `s = t` the terminal data mixes identically and the gap is pure
//! quadrature rounding.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kolmogorov::backward::{solve_backward, BackwardConfig, TerminalData};
use crate::kolmogorov::forward::{solve_forward, ForwardConfig};
use crate::model::JumpDiffusionModel;
use crate::report::{Table, VerificationReport};
use crate::space::SpaceGrid;

/// Indicator weight vector of bin `[edge_lo, edge_hi]` whose edges sit on
/// grid nodes: interior nodes weigh 1, shared edge nodes 0.5.
fn bin_weights(space: &SpaceGrid, i_lo: usize, i_hi: usize) -> Vec<f64> {
    let n = space.axes()[0].n;
    let mut w = vec![0.0; n];
    for (j, wj) in w.iter_mut().enumerate() {
        if j > i_lo && j < i_hi {
            *wj = 1.0;
        } else if j == i_lo {
            *wj = if j == 0 { 1.0 } else { 0.5 };
        } else if j == i_hi {
            *wj = if j == n - 1 { 1.0 } else { 0.5 };
        }
    }
    w
}

/// L1 gap between the forward density at `t_end` and the backward-mixture
/// reconstruction through intermediate time `s`, over `n_bins` node-aligned
/// bins. 1D only.
pub fn chapman_consistency(
    model: &JumpDiffusionModel,
    p0: &[f64],
    space: &SpaceGrid,
    s: f64,
    t_end: f64,
    n_bins: usize,
) -> Result<VerificationReport> {
    if space.dim() != 1 {
        return Err(Error::InvalidInput(
            "transition-density checks are desk-scale 1D".into(),
        ));
    }
    let n = space.axes()[0].n;
    if (n - 1) % n_bins != 0 {
        return Err(Error::InvalidInput(format!(
            "bins must align with nodes: {} cells not divisible by {n_bins}",
            n - 1
        )));
    }
    if !(s >= 0.0 && s <= t_end) {
        return Err(Error::InvalidInput("need 0 <= s <= t_end".into()));
    }

    let forward = solve_forward(
        model,
        p0,
        space,
        &ForwardConfig {
            snapshot_times: vec![s],
            ..ForwardConfig::to_time(t_end)
        },
    )?;
    let (s_stored, p_s) = forward.slice_at(s);
    let p_s = p_s.clone();
    let s_stored = *s_stored;
    let p_t = forward.field.last().to_vec();

    let per_bin = (n - 1) / n_bins;
    let bins: Vec<(usize, usize)> = (0..n_bins)
        .map(|b| (b * per_bin, (b + 1) * per_bin))
        .collect();

    let rows: Vec<Vec<f64>> = bins
        .par_iter()
        .map(|&(i_lo, i_hi)| -> Result<Vec<f64>> {
            let w = bin_weights(space, i_lo, i_hi);
            let forward_mass = {
                let weighted: Vec<f64> = w.iter().zip(&p_t).map(|(a, b)| a * b).collect();
                space.integrate(&weighted)
            };
            let mixture_mass = if s_stored >= t_end {
                // Identity mixing.
                forward_mass
            } else {
                let v = solve_backward(
                    model,
                    TerminalData::Slice(w),
                    space,
                    &BackwardConfig::over(s_stored, t_end),
                )?;
                let weighted: Vec<f64> = v
                    .at_start()
                    .iter()
                    .zip(&p_s)
                    .map(|(a, b)| a * b)
                    .collect();
                space.integrate(&weighted)
            };
            Ok(vec![
                space.axes()[0].coord(i_lo),
                space.axes()[0].coord(i_hi),
                forward_mass,
                mixture_mass,
            ])
        })
        .collect::<Result<Vec<_>>>()?;

    let l1_gap: f64 = rows.iter().map(|r| (r[2] - r[3]).abs()).sum();

    let mut report = VerificationReport::new("chapman_consistency");
    report.config("model", &model.name);
    report.config("s", s_stored);
    report.config("t_end", t_end);
    report.config("bins", n_bins);
    report.metric("l1_gap", l1_gap);
    report.metric("forward_mass", space.integrate(&p_t));
    report.tables.push(Table {
        name: "chapman_bins".into(),
        headers: vec![
            "bin_lo".into(),
            "bin_hi".into(),
            "forward_mass".into(),
            "mixture_mass".into(),
        ],
        rows,
    });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kolmogorov::forward::gaussian_slice;
    use crate::registry;

    #[test]
    fn identity_mixing_at_s_equals_t() {
        let model = registry::ou_jump(1.0, 1.0, &[(0.5, 1.0)]).unwrap();
        let space = SpaceGrid::line(-4.0, 4.0, 257).unwrap();
        let p0 = gaussian_slice(&space, &[0.0], 0.09);
        let rep = chapman_consistency(&model, &p0, &space, 0.25, 0.25, 32).unwrap();
        let gap = rep.metrics.iter().find(|(k, _)| k == "l1_gap").unwrap().1;
        assert!(gap <= 1e-8, "identity-mixing gap {gap:.3e}");
    }

    #[test]
    fn static_model_any_s() {
        let model = registry::additive(vec![0.0], vec![vec![0.0]], None).unwrap();
        let space = SpaceGrid::line(-4.0, 4.0, 257).unwrap();
        let p0 = gaussian_slice(&space, &[0.0], 0.25);
        let rep = chapman_consistency(&model, &p0, &space, 0.1, 0.3, 32).unwrap();
        let gap = rep.metrics.iter().find(|(k, _)| k == "l1_gap").unwrap().1;
        assert!(gap <= 1e-8, "static gap {gap:.3e}");
    }
}
