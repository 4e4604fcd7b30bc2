//! The backward Kolmogorov integro-PDE in the initial variables `(s, y)`:
//!
//! ```text
//! dv/ds + a_j dv/dy_j + 1/2 b_jk b_ik d^2 v/dy_j dy_i
//!       + sum_atoms rate * [ v(s, y + g(s,y,gamma)) - v(s,y) ] = 0
//! ```
//!
//! integrated backward from terminal data `phi` at `s = t_end`. The jump
//! term substitutes forward, `y + g(s, y, gamma)` - no inverse map in the
//! backward direction, unlike the forward equation; off-grid evaluations
//! clamp to the nearest edge value, so the integro operator annihilates
//! constants exactly.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::kernel::cfl_max_dt;
use crate::model::JumpDiffusionModel;
use crate::space::{interpolate, GridField, OutOfDomain, SpaceGrid};

pub enum TerminalData<'a> {
    Fn(&'a (dyn Fn(&DVector<f64>) -> f64 + Sync)),
    Slice(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct BackwardConfig {
    pub s_start: f64,
    pub t_end: f64,
    /// Fixed step request; refused if it violates the CFL bound.
    pub dt: Option<f64>,
    /// s-values at which slices are stored (besides s_start and t_end).
    pub s_checkpoints: Vec<f64>,
}

impl BackwardConfig {
    pub fn over(s_start: f64, t_end: f64) -> Self {
        Self {
            s_start,
            t_end,
            dt: None,
            s_checkpoints: Vec::new(),
        }
    }
}

/// Backward field `v(s, y)`: slices stored at ascending `s` values, the
/// first at `s_start`, the last the terminal data at `t_end`.
#[derive(Debug, Clone)]
pub struct BackwardField {
    pub field: GridField,
}

impl BackwardField {
    pub fn at_start(&self) -> &[f64] {
        &self.field.slices[0]
    }

    pub fn slice_at(&self, s: f64) -> (&f64, &Vec<f64>) {
        let i = self.field.nearest_time_index(s);
        (&self.field.times[i], &self.field.slices[i])
    }
}

fn auto_dt(model: &JumpDiffusionModel, space: &SpaceGrid, s0: f64, t1: f64) -> f64 {
    let mut dt = cfl_max_dt(model, space, &[s0, 0.5 * (s0 + t1), t1]);
    let rate = model.marks().total_rate();
    if rate > 0.0 {
        dt = dt.min(0.01 / rate);
    }
    dt.min(t1 - s0)
}

pub fn solve_backward(
    model: &JumpDiffusionModel,
    phi: TerminalData<'_>,
    space: &SpaceGrid,
    cfg: &BackwardConfig,
) -> Result<BackwardField> {
    if model.dim() != space.dim() {
        return Err(Error::GridMismatch(format!(
            "model dimension {} vs grid dimension {}",
            model.dim(),
            space.dim()
        )));
    }
    if cfg.s_start >= cfg.t_end {
        return Err(Error::InvalidInput(
            "backward solve needs s_start < t_end".into(),
        ));
    }
    let terminal: Vec<f64> = match phi {
        TerminalData::Fn(f) => (0..space.len()).map(|j| f(&space.point(j))).collect(),
        TerminalData::Slice(v) => {
            if v.len() != space.len() {
                return Err(Error::GridMismatch(
                    "terminal slice does not match the grid".into(),
                ));
            }
            v
        }
    };
    if terminal.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("terminal data must be bounded".into()));
    }

    let required = cfl_max_dt(
        model,
        space,
        &[cfg.s_start, 0.5 * (cfg.s_start + cfg.t_end), cfg.t_end],
    );
    let dt_target = match cfg.dt {
        Some(dt) => {
            if dt > required * (1.0 + 1e-9) {
                return Err(Error::CflViolation {
                    given: dt,
                    required,
                });
            }
            dt
        }
        None => auto_dt(model, space, cfg.s_start, cfg.t_end),
    };
    let steps = ((cfg.t_end - cfg.s_start) / dt_target).ceil().max(1.0) as usize;
    let dt = (cfg.t_end - cfg.s_start) / steps as f64;

    let n = model.dim();
    let m = model.wiener_dim();
    let atoms = model.marks().atoms().to_vec();
    let points: Vec<DVector<f64>> = (0..space.len()).map(|j| space.point(j)).collect();

    // Clamp-ghost neighbor lookup per axis.
    let neighbor = |j: usize, ax: usize, dir: isize| -> usize {
        match space.dim() {
            1 => {
                let i = j as isize + dir;
                i.clamp(0, space.axes()[0].n as isize - 1) as usize
            }
            _ => {
                let n1 = space.axes()[1].n;
                let (i0, i1) = ((j / n1) as isize, (j % n1) as isize);
                let (mut a0, mut a1) = (i0, i1);
                if ax == 0 {
                    a0 = (i0 + dir).clamp(0, space.axes()[0].n as isize - 1);
                } else {
                    a1 = (i1 + dir).clamp(0, space.axes()[1].n as isize - 1);
                }
                (a0 as usize) * n1 + a1 as usize
            }
        }
    };

    let mut v = terminal.clone();
    let mut new = vec![0.0; v.len()];
    // Store slices while stepping down in s, then reverse to ascending.
    let mut stored: Vec<(f64, Vec<f64>)> = vec![(cfg.t_end, terminal)];
    let checkpoint_steps: Vec<usize> = cfg
        .s_checkpoints
        .iter()
        .map(|&sv| (((cfg.t_end - sv) / dt).round().max(0.0) as usize).min(steps))
        .collect();

    for step in 0..steps {
        let s = cfg.t_end - step as f64 * dt;
        for j in 0..space.len() {
            let y = &points[j];
            let a = model.drift(s, y);
            let b = model.diffusion(s, y);
            let mut rhs = 0.0;
            for ax in 0..n {
                let dx = space.axes()[ax].dx();
                // Upwind by the sign of a: information comes from y + a tau.
                let dv = if a[ax] >= 0.0 {
                    (v[neighbor(j, ax, 1)] - v[j]) / dx
                } else {
                    (v[j] - v[neighbor(j, ax, -1)]) / dx
                };
                rhs += a[ax] * dv;
                let mut b_axax = 0.0;
                for k in 0..m {
                    b_axax += b[(ax, k)] * b[(ax, k)];
                }
                rhs += 0.5
                    * b_axax
                    * (v[neighbor(j, ax, 1)] - 2.0 * v[j] + v[neighbor(j, ax, -1)])
                    / (dx * dx);
            }
            if n == 2 && m > 0 {
                let mut b01 = 0.0;
                for k in 0..m {
                    b01 += b[(0, k)] * b[(1, k)];
                }
                if b01 != 0.0 {
                    let pp = v[neighbor(neighbor(j, 0, 1), 1, 1)];
                    let pm = v[neighbor(neighbor(j, 0, 1), 1, -1)];
                    let mp = v[neighbor(neighbor(j, 0, -1), 1, 1)];
                    let mm = v[neighbor(neighbor(j, 0, -1), 1, -1)];
                    rhs += b01 * (pp - pm - mp + mm)
                        / (4.0 * space.axes()[0].dx() * space.axes()[1].dx());
                }
            }
            for atom in &atoms {
                let shifted = y + model.jump_amplitude(s, y, &atom.mark);
                let vs = interpolate(space, &v, shifted.as_slice(), OutOfDomain::Clamp);
                rhs += atom.rate * (vs - v[j]);
            }
            new[j] = v[j] + dt * rhs;
            if !new[j].is_finite() {
                return Err(Error::Divergence { step: step + 1, t: s - dt });
            }
        }
        std::mem::swap(&mut v, &mut new);
        if checkpoint_steps.contains(&(step + 1)) || step + 1 == steps {
            stored.push((cfg.t_end - (step + 1) as f64 * dt, v.clone()));
        }
    }

    stored.reverse();
    let times: Vec<f64> = stored.iter().map(|(t, _)| *t).collect();
    let slices: Vec<Vec<f64>> = stored.into_iter().map(|(_, s)| s).collect();
    Ok(BackwardField {
        field: GridField {
            grid: space.clone(),
            times,
            slices,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry;

    #[test]
    fn constants_are_preserved_exactly() {
        // phi = 1: the integro operator annihilates constants; v stays 1
        // to 1e-6 (structurally, up to rounding).
        let model = registry::ou_jump(1.0, 1.0, &[(0.5, 1.0)]).unwrap();
        let space = SpaceGrid::line(-4.0, 4.0, 256).unwrap();
        let one = |_: &DVector<f64>| 1.0;
        let sol = solve_backward(
            &model,
            TerminalData::Fn(&one),
            &space,
            &BackwardConfig::over(0.0, 0.5),
        )
        .unwrap();
        for slice in &sol.field.slices {
            for v in slice {
                assert!((v - 1.0).abs() <= 1e-6, "constant drifted to {v}");
            }
        }
    }

    #[test]
    fn pure_jump_matches_poisson_mixture() {
        // a = b = 0, one unit atom at rate 1:
        // v(s,y) = sum_k e^{-tau} tau^k / k! phi(y + k), phi = cos.
        let model = registry::pure_jump(&[(1.0, 1.0)]).unwrap();
        let space = SpaceGrid::line(-10.0, 10.0, 641).unwrap(); // dy = 1/32
        let phi = |y: &DVector<f64>| y[0].cos();
        let sol = solve_backward(
            &model,
            TerminalData::Fn(&phi),
            &space,
            &BackwardConfig::over(0.0, 1.0),
        )
        .unwrap();
        let tau = 1.0_f64;
        let mut max_err = 0.0_f64;
        for j in 0..space.len() {
            let y = space.point(j)[0];
            if !(-5.0..=5.0).contains(&y) {
                continue;
            }
            let mut expected = 0.0;
            let mut term = (-tau).exp();
            for k in 0..40 {
                if k > 0 {
                    term *= tau / k as f64;
                }
                expected += term * (y + k as f64).cos();
            }
            max_err = max_err.max((sol.at_start()[j] - expected).abs());
        }
        assert!(max_err <= 1e-2, "Poisson mixture error {max_err:.3e}");
    }

    #[test]
    fn diffusion_matches_gaussian_convolution() {
        // no jumps, a = 0, b = sqrt(2): v_tau = v_yy, so cos decays e^{-tau}.
        let model = registry::additive(vec![0.0], vec![vec![2.0_f64.sqrt()]], None).unwrap();
        let space = SpaceGrid::line(-10.0, 10.0, 641).unwrap();
        let phi = |y: &DVector<f64>| y[0].cos();
        let sol = solve_backward(
            &model,
            TerminalData::Fn(&phi),
            &space,
            &BackwardConfig::over(0.0, 0.5),
        )
        .unwrap();
        let decay = (-0.5_f64).exp();
        let mut max_err = 0.0_f64;
        for j in 0..space.len() {
            let y = space.point(j)[0];
            if !(-5.0..=5.0).contains(&y) {
                continue;
            }
            max_err = max_err.max((sol.at_start()[j] - decay * y.cos()).abs());
        }
        assert!(max_err <= 1e-2, "heat semigroup error {max_err:.3e}");
    }
}
