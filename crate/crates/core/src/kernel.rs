//! The stochastic integro-PDE for the kernel density `rho(t, x)` of the
//! stochastic integral invariant under one noise realization:
//!
//! ```text
//! d_t rho = -d(rho a_i)/dx_i dt + 1/2 d^2(rho b_ik b_jk)/dx_i dx_j dt
//!           - d(rho b_ik)/dx_i dw_k
//! ```
//!
//! plus, at each realized jump, the replacement
//! `rho <- rho(t, x - g(t, x^{-1}(t,x,gamma), gamma)) * Dbar(x^{-1})`
//! (cubic-interpolated pull-back times the inverse-map Jacobian
//! determinant).
//!
//! Discretization: conservative first-order upwind for the advective flux
//! (deterministic and stochastic displacements combined per face, Ito:
//! coefficients at the left time point) and conservative central differences
//! for the diffusion term, explicit Euler stepping under the CFL bound
//! `dt <= min(dx^2/(2 max|B|), dx/(2 max|a|), 0.1/total_rate)`. The domain is
//! a truncated box with absorbing (zero) exterior; boundary leakage is
//! tracked, not redistributed. Fields are never clipped; reports carry both
//! raw and clipped-at-zero masses.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::jacobian::evolve_jacobian;
use crate::jump::pull_back;
use crate::model::JumpDiffusionModel;
use crate::noise::NoiseRealization;
use crate::path::simulate_path;
use crate::report::{residual_stats, VerificationReport};
use crate::space::{interpolate, GridField, OutOfDomain, SpaceGrid};

/// CFL-stable step for the explicit schemes, scanned over the grid at the
/// given time samples.
pub fn cfl_max_dt(model: &JumpDiffusionModel, space: &SpaceGrid, t_samples: &[f64]) -> f64 {
    let n = model.dim();
    let m = model.wiener_dim();
    let mut max_b = 0.0_f64;
    let mut max_a = vec![0.0_f64; n];
    for &t in t_samples {
        for idx in 0..space.len() {
            let x = space.point(idx);
            let a = model.drift(t, &x);
            let b = model.diffusion(t, &x);
            for i in 0..n {
                max_a[i] = max_a[i].max(a[i].abs());
                for j in 0..n {
                    let mut bij = 0.0;
                    for k in 0..m {
                        bij += b[(i, k)] * b[(j, k)];
                    }
                    max_b = max_b.max(bij.abs());
                }
            }
        }
    }
    let mut dt = f64::INFINITY;
    for (i, axis) in space.axes().iter().enumerate() {
        let dx = axis.dx();
        if max_b > 0.0 {
            dt = dt.min(dx * dx / (2.0 * max_b));
        }
        if max_a[i] > 0.0 {
            dt = dt.min(dx / (2.0 * max_a[i]));
        }
    }
    let rate = model.marks().total_rate();
    if rate > 0.0 {
        dt = dt.min(0.1 / rate);
    }
    dt
}

/// Number of uniform base steps over `[t0, t_end]` satisfying the CFL bound.
pub fn cfl_steps(model: &JumpDiffusionModel, space: &SpaceGrid, t0: f64, t_end: f64) -> usize {
    let dt = cfl_max_dt(model, space, &[t0, 0.5 * (t0 + t_end), t_end]);
    ((t_end - t0) / dt).ceil().max(1.0) as usize
}

#[derive(Debug, Clone, Default)]
pub struct KernelConfig {
    /// Store every time slice (needed by the pathwise-identity check).
    pub store_full_history: bool,
    /// Extra snapshot times (nearest node); `t0` and the final time are
    /// always stored.
    pub snapshot_times: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct KernelField {
    pub field: GridField,
    /// Signed accumulated mass lost through the boundary: advective and
    /// diffusive face fluxes plus mass carried out by jump pull-backs.
    pub boundary_loss: f64,
    pub noise_seed: u64,
}

impl KernelField {
    pub fn final_mass(&self) -> f64 {
        self.field.grid.integrate(self.field.last())
    }
}

pub(crate) struct AxisSweep {
    pub(crate) stride: usize,
    pub(crate) lines: Vec<usize>,
    pub(crate) len: usize,
    pub(crate) dx: f64,
    pub(crate) transverse: f64,
}

pub(crate) fn axis_sweeps(space: &SpaceGrid) -> Vec<AxisSweep> {
    let cell: f64 = space.axes().iter().map(|a| a.dx()).product();
    match space.dim() {
        1 => vec![AxisSweep {
            stride: 1,
            lines: vec![0],
            len: space.axes()[0].n,
            dx: space.axes()[0].dx(),
            transverse: cell / space.axes()[0].dx(),
        }],
        _ => {
            let (n0, n1) = (space.axes()[0].n, space.axes()[1].n);
            vec![
                AxisSweep {
                    stride: n1,
                    lines: (0..n1).collect(),
                    len: n0,
                    dx: space.axes()[0].dx(),
                    transverse: cell / space.axes()[0].dx(),
                },
                AxisSweep {
                    stride: 1,
                    lines: (0..n0).map(|i| i * n1).collect(),
                    len: n1,
                    dx: space.axes()[1].dx(),
                    transverse: cell / space.axes()[1].dx(),
                },
            ]
        }
    }
}

/// One conservative explicit step shared by the kernel SPDE and the forward
/// Kolmogorov solver. `dw` is empty for the deterministic solver. Returns
/// the boundary mass lost during the step.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conservative_step(
    space: &SpaceGrid,
    sweeps: &[AxisSweep],
    rho: &[f64],
    new: &mut [f64],
    a_nodes: &[DVector<f64>],
    bbt_diag: &[Vec<f64>],
    bbt_off: Option<&[f64]>,
    b_nodes: Option<&[nalgebra::DMatrix<f64>]>,
    dt: f64,
    dw: &[f64],
) -> f64 {
    let mut loss = 0.0;
    new.copy_from_slice(rho);
    let dim = space.dim();

    for (ax, sweep) in sweeps.iter().enumerate() {
        for &base in &sweep.lines {
            let at = |i: usize| base + i * sweep.stride;
            let node_disp = |i: usize| -> f64 {
                let j = at(i);
                let mut d = a_nodes[j][ax] * dt;
                if let Some(b) = b_nodes {
                    for (k, &w) in dw.iter().enumerate() {
                        d += b[j][(ax, k)] * w;
                    }
                }
                d
            };
            // Advective + stochastic transport, donor-cell upwind per face.
            // Face f sits between node f-1 and node f; faces 0 and len are
            // the outer boundary (absorbing exterior).
            let mut flux_prev = {
                let disp = node_disp(0);
                if disp >= 0.0 {
                    0.0
                } else {
                    disp * rho[at(0)]
                }
            };
            loss -= flux_prev * sweep.transverse;
            for f in 1..=sweep.len {
                let flux = if f == sweep.len {
                    let disp = node_disp(sweep.len - 1);
                    if disp >= 0.0 {
                        disp * rho[at(sweep.len - 1)]
                    } else {
                        0.0
                    }
                } else {
                    let disp = 0.5 * (node_disp(f - 1) + node_disp(f));
                    if disp >= 0.0 {
                        disp * rho[at(f - 1)]
                    } else {
                        disp * rho[at(f)]
                    }
                };
                new[at(f - 1)] -= (flux - flux_prev) / sweep.dx;
                flux_prev = flux;
            }
            loss += flux_prev * sweep.transverse;

            // Conservative diffusion: face gradients of q = rho * B_axax.
            let q = |i: usize| rho[at(i)] * bbt_diag[ax][at(i)];
            let mut grad_prev = 0.5 * (q(0) - 0.0) / sweep.dx;
            loss += dt * grad_prev * sweep.transverse;
            for f in 1..=sweep.len {
                let grad = if f == sweep.len {
                    0.5 * (0.0 - q(sweep.len - 1)) / sweep.dx
                } else {
                    0.5 * (q(f) - q(f - 1)) / sweep.dx
                };
                new[at(f - 1)] += dt * (grad - grad_prev) / sweep.dx;
                grad_prev = grad;
            }
            loss -= dt * grad_prev * sweep.transverse;
        }
    }

    // Mixed diffusion in 2D: d^2(rho B_01)/dx0 dx1, zero-padded central.
    if dim == 2 {
        if let Some(off) = bbt_off {
            let (n0, n1) = (space.axes()[0].n, space.axes()[1].n);
            let (dx0, dx1) = (space.axes()[0].dx(), space.axes()[1].dx());
            let q = |i0: isize, i1: isize| -> f64 {
                if i0 < 0 || i1 < 0 || i0 >= n0 as isize || i1 >= n1 as isize {
                    0.0
                } else {
                    let j = i0 as usize * n1 + i1 as usize;
                    rho[j] * off[j]
                }
            };
            for i0 in 0..n0 as isize {
                for i1 in 0..n1 as isize {
                    let mixed = (q(i0 + 1, i1 + 1) - q(i0 + 1, i1 - 1) - q(i0 - 1, i1 + 1)
                        + q(i0 - 1, i1 - 1))
                        / (4.0 * dx0 * dx1);
                    new[(i0 as usize) * n1 + i1 as usize] += dt * mixed;
                }
            }
        }
    }

    loss
}

/// Validate an initial density slice: nonnegative and unit trapezoid mass.
pub(crate) fn validate_density(space: &SpaceGrid, rho0: &[f64], what: &str) -> Result<()> {
    if rho0.len() != space.len() {
        return Err(Error::GridMismatch(format!(
            "{what}: slice has {} values for a {}-point grid",
            rho0.len(),
            space.len()
        )));
    }
    if rho0.iter().any(|v| !v.is_finite() || *v < -1e-12) {
        return Err(Error::InvalidInput(format!(
            "{what}: initial density must be finite and nonnegative"
        )));
    }
    let mass = space.integrate(rho0);
    if (mass - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidInput(format!(
            "{what}: initial mass {mass} differs from 1 beyond quadrature tolerance 1e-10"
        )));
    }
    Ok(())
}

/// Evaluate the per-node coefficient caches at time `t`.
pub(crate) fn coefficient_grids(
    model: &JumpDiffusionModel,
    space: &SpaceGrid,
    t: f64,
    drift_override: Option<&dyn Fn(f64, &DVector<f64>) -> DVector<f64>>,
) -> (
    Vec<DVector<f64>>,
    Vec<Vec<f64>>,
    Option<Vec<f64>>,
    Vec<nalgebra::DMatrix<f64>>,
) {
    let n = model.dim();
    let m = model.wiener_dim();
    let len = space.len();
    let mut a_nodes = Vec::with_capacity(len);
    let mut b_nodes = Vec::with_capacity(len);
    let mut bbt_diag = vec![vec![0.0; len]; n];
    let mut bbt_off = if n == 2 { Some(vec![0.0; len]) } else { None };
    for idx in 0..len {
        let x = space.point(idx);
        let a = match drift_override {
            Some(f) => f(t, &x),
            None => model.drift(t, &x),
        };
        let b = model.diffusion(t, &x);
        for (i, diag) in bbt_diag.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in 0..m {
                acc += b[(i, k)] * b[(i, k)];
            }
            diag[idx] = acc;
        }
        if let Some(off) = bbt_off.as_mut() {
            let mut acc = 0.0;
            for k in 0..m {
                acc += b[(0, k)] * b[(1, k)];
            }
            off[idx] = acc;
        }
        a_nodes.push(a);
        b_nodes.push(b);
    }
    (a_nodes, bbt_diag, bbt_off, b_nodes)
}

/// Apply the jump replacement slice-wide; returns the mass carried out of
/// the domain (pull-back points outside contribute zero).
pub(crate) fn apply_jump_pullback(
    model: &JumpDiffusionModel,
    space: &SpaceGrid,
    slice: &[f64],
    t: f64,
    mark: &DVector<f64>,
) -> Result<(Vec<f64>, f64)> {
    let mut out = Vec::with_capacity(slice.len());
    for idx in 0..space.len() {
        let x = space.point(idx);
        let pb = pull_back(model, t, &x, mark)?;
        let v = interpolate(space, slice, pb.sample_point.as_slice(), OutOfDomain::Zero);
        out.push(v * pb.det_inverse);
    }
    let before = space.integrate(slice);
    let after = space.integrate(&out);
    Ok((out, before - after))
}

/// Solve the kernel SPDE under `noise`. The noise grid must satisfy the CFL
/// bound; build it with [`cfl_steps`].
pub fn solve_kernel_spde(
    model: &JumpDiffusionModel,
    rho0: &[f64],
    space: &SpaceGrid,
    noise: &NoiseRealization,
    cfg: &KernelConfig,
) -> Result<KernelField> {
    if model.dim() != space.dim() {
        return Err(Error::GridMismatch(format!(
            "model dimension {} vs grid dimension {}",
            model.dim(),
            space.dim()
        )));
    }
    validate_density(space, rho0, "kernel")?;
    let nodes = noise.nodes();
    let given_dt = noise.grid().dt_max();
    let required =
        cfl_max_dt(model, space, &[nodes[0], 0.5 * (nodes[0] + nodes[nodes.len() - 1]), nodes[nodes.len() - 1]]);
    if given_dt > required * (1.0 + 1e-9) {
        return Err(Error::CflViolation {
            given: given_dt,
            required,
        });
    }

    let sweeps = axis_sweeps(space);
    let m = model.wiener_dim();
    let snapshot_nodes: Vec<usize> = cfg
        .snapshot_times
        .iter()
        .map(|&t| {
            nodes
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    (*a - t).abs().partial_cmp(&(*b - t).abs()).unwrap()
                })
                .map(|(i, _)| i)
                .unwrap()
        })
        .collect();

    let mut rho = rho0.to_vec();
    let mut new = vec![0.0; rho.len()];
    let mut boundary_loss = 0.0;
    let mut times = vec![nodes[0]];
    let mut slices = vec![rho.clone()];

    for s in 0..noise.n_steps() {
        let t = nodes[s];
        let dt = nodes[s + 1] - nodes[s];
        let dw = noise.step_increments(s);
        let (a_nodes, bbt_diag, bbt_off, b_nodes) = coefficient_grids(model, space, t, None);
        boundary_loss += conservative_step(
            space,
            &sweeps,
            &rho,
            &mut new,
            &a_nodes,
            &bbt_diag,
            bbt_off.as_deref(),
            if m > 0 { Some(&b_nodes) } else { None },
            dt,
            dw,
        );
        std::mem::swap(&mut rho, &mut new);

        if let Some(jump) = noise.jump_at_node(s + 1) {
            let (replaced, lost) =
                apply_jump_pullback(model, space, &rho, jump.time, &jump.mark)?;
            rho = replaced;
            boundary_loss += lost;
        }

        if rho.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: s + 1,
                t: nodes[s + 1],
            });
        }
        let mass = space.integrate(&rho);
        if mass < 0.5 {
            return Err(Error::Instability(format!(
                "kernel mass collapsed to {mass:.3e} at t = {}",
                nodes[s + 1]
            )));
        }

        let store = cfg.store_full_history
            || s + 1 == noise.n_steps()
            || snapshot_nodes.contains(&(s + 1));
        if store {
            times.push(nodes[s + 1]);
            slices.push(rho.clone());
        }
    }

    Ok(KernelField {
        field: GridField {
            grid: space.clone(),
            times,
            slices,
        },
        boundary_loss,
        noise_seed: noise.seed(),
    })
}

/// Pathwise invariant `J(t) rho(t, x(t; x0)) = rho(0, x0)` checked along an
/// ensemble of trajectories started from grid nodes with `rho0 > threshold`
/// (`1e-4`), all driven by the kernel's own noise realization.
pub fn check_pathwise_invariant(
    model: &JumpDiffusionModel,
    kernel: &KernelField,
    noise: &NoiseRealization,
    max_starts: usize,
) -> Result<VerificationReport> {
    let grid = &kernel.field.grid;
    if kernel.field.times.len() != noise.nodes().len() {
        return Err(Error::GridMismatch(
            "pathwise check needs a kernel solved with store_full_history".into(),
        ));
    }
    let rho0 = kernel.field.initial();
    let threshold = 1e-4;
    let candidates: Vec<usize> = (0..grid.len()).filter(|&j| rho0[j] > threshold).collect();
    if candidates.is_empty() {
        return Err(Error::InvalidInput(
            "no start points with rho0 above threshold".into(),
        ));
    }
    let stride = (candidates.len() / max_starts.max(1)).max(1);
    let starts: Vec<usize> = candidates.iter().copied().step_by(stride).collect();

    let mut per_start_residuals = Vec::new();
    let mut excluded_paths = 0usize;
    let mut divergent = 0usize;
    for &j0 in &starts {
        let x0 = grid.point(j0);
        let traj = match simulate_path(model, &x0, noise) {
            Ok(t) => t,
            Err(Error::Divergence { .. }) => {
                divergent += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let (jac, _) = evolve_jacobian(model, &traj, noise)?;
        let mut sup = 0.0_f64;
        let mut excluded_nodes = false;
        for (i, x) in traj.states().iter().enumerate() {
            if !grid.well_inside(x.as_slice(), 2.0) {
                excluded_nodes = true;
                continue;
            }
            let rho_here = interpolate(
                grid,
                &kernel.field.slices[i],
                x.as_slice(),
                OutOfDomain::Zero,
            );
            sup = sup.max((jac.at(i) * rho_here - rho0[j0]).abs());
        }
        if excluded_nodes {
            excluded_paths += 1;
        }
        per_start_residuals.push(sup);
    }

    let (max, rms) = residual_stats(&per_start_residuals);
    let mut report = VerificationReport::new("kernel_pathwise_invariant");
    report.config("model", &model.name);
    report.config("starts", starts.len());
    report.config("seed", noise.seed());
    report.metric("max_residual", max);
    report.metric("rms_residual", rms);
    report.metric("excluded_paths", excluded_paths as f64);
    report.metric("divergent_paths", divergent as f64);
    if excluded_paths > 0 {
        report.note(format!(
            "{excluded_paths} paths partially excluded (left the domain interior)"
        ));
    }
    Ok(report)
}

/// Named bounded test functions for the global-invariant checks.
pub fn test_functions(dim: usize) -> Vec<(&'static str, Box<dyn Fn(&DVector<f64>) -> f64 + Sync>)> {
    let _ = dim;
    vec![
        ("one", Box::new(|_: &DVector<f64>| 1.0)),
        ("x", Box::new(|x: &DVector<f64>| x[0])),
        ("x^2", Box::new(|x: &DVector<f64>| x[0] * x[0])),
        ("cos_x", Box::new(|x: &DVector<f64>| x[0].cos())),
    ]
}

/// Global invariant identities: quadrature of `f * rho(T)` against a
/// common-noise Monte Carlo average of `f(x(T; y))` with `y ~ rho0`, plus the
/// normalization gap and the boundary-loss ledger.
pub fn check_global_invariants(
    model: &JumpDiffusionModel,
    kernel: &KernelField,
    noise: &NoiseRealization,
    n_samples: usize,
    mc_seed: u64,
) -> Result<VerificationReport> {
    let grid = &kernel.field.grid;
    let rho0 = kernel.field.initial();
    let rho_t = kernel.field.last();

    // Rejection-sample y ~ rho0 (works in 1D and 2D).
    let bound = rho0.iter().fold(0.0_f64, |m, &v| m.max(v)) * 1.0001;
    let mut rng = ChaCha12Rng::seed_from_u64(mc_seed);
    let mut samples = Vec::with_capacity(n_samples);
    let mut proposals = 0usize;
    while samples.len() < n_samples {
        proposals += 1;
        if proposals > 2000 * n_samples {
            return Err(Error::Instability(
                "rejection sampling from rho0 is not making progress".into(),
            ));
        }
        let y: Vec<f64> = grid
            .axes()
            .iter()
            .map(|a| a.lo + rng.random::<f64>() * (a.hi - a.lo))
            .collect();
        let yv = DVector::from_vec(y);
        let dens = interpolate(grid, rho0, yv.as_slice(), OutOfDomain::Zero).max(0.0);
        if rng.random::<f64>() * bound < dens {
            samples.push(yv);
        }
    }

    let mut divergent = 0usize;
    let mut terminals = Vec::with_capacity(n_samples);
    for y in &samples {
        match simulate_path(model, y, noise) {
            Ok(traj) => terminals.push(traj.terminal().clone()),
            Err(Error::Divergence { .. }) => divergent += 1,
            Err(e) => return Err(e),
        }
    }
    if terminals.is_empty() {
        return Err(Error::Instability("all invariant-check paths diverged".into()));
    }

    let mut report = VerificationReport::new("kernel_global_invariants");
    report.config("model", &model.name);
    report.config("mc_samples", terminals.len());
    report.config("mc_seed", mc_seed);
    report.config("seed", noise.seed());

    let mass = grid.integrate(rho_t);
    let clipped: Vec<f64> = rho_t.iter().map(|v| v.max(0.0)).collect();
    report.metric("mass", mass);
    report.metric("mass_clipped_at_zero", grid.integrate(&clipped));
    report.metric("mass_gap", (mass - 1.0).abs());
    report.metric("boundary_loss", kernel.boundary_loss);
    report.metric("divergent_paths", divergent as f64);
    if kernel.boundary_loss.abs() > 1e-3 {
        report.note(format!(
            "large boundary loss {:.3e}",
            kernel.boundary_loss
        ));
    }

    for (name, f) in test_functions(grid.dim()) {
        let weighted: Vec<f64> = (0..grid.len())
            .map(|j| f(&grid.point(j)) * rho_t[j])
            .collect();
        let left = grid.integrate(&weighted);
        let vals: Vec<f64> = terminals.iter().map(|x| f(x)).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
            / (vals.len().saturating_sub(1).max(1)) as f64;
        let se = (var / vals.len() as f64).sqrt();
        report.metric(format!("lhs_{name}"), left);
        report.metric(format!("rhs_{name}"), mean);
        report.metric(format!("se_{name}"), se);
        // Statistical band plus a small allowance for scheme error.
        report.check_le(
            format!("gap_{name}"),
            (left - mean).abs(),
            3.0 * se + 0.01,
        );
    }
    Ok(report)
}
