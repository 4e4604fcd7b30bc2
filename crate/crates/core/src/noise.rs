//! Driving-noise sampling: Wiener increments on a time grid plus a sorted
//! list of Poisson jump events, regenerated bit-identically from a seed.
//!
//! Jump times are sampled exactly (exponential interarrivals at the total
//! rate) and inserted as grid nodes, so jump counts are exact and left limits
//! are well defined. Brownian-bridge refinement subdivides every interval
//! while keeping the realization on the same probability-space element:
//! coarse and fine paths share their values at the coarse nodes and all jump
//! times and marks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::JumpDiffusionModel;
use crate::timegrid::TimeGrid;

/// One realized jump: time (always a grid node), node index, atom index, and
/// the atom's mark vector.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub node: usize,
    pub atom: usize,
    pub mark: nalgebra::DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    grid: TimeGrid,
    /// Row-major `[step][component]`, each entry ~ N(0, dt_step).
    increments: Vec<f64>,
    m: usize,
    jumps: Vec<JumpEvent>,
    seed: u64,
    level: u32,
}

// Distinct ChaCha streams keep jump sampling, Wiener sampling, and each
// bridge level statistically independent while fully seed-determined.
const STREAM_JUMPS: u64 = 1;
const STREAM_WIENER: u64 = 2;
const STREAM_BRIDGE_BASE: u64 = 16;

/// Sample a driving-noise record for `model` on `grid`.
///
/// Draw order is fixed (jumps first, then Wiener increments step-major,
/// component-minor), making regeneration from `(seed, model, grid)`
/// bit-identical.
pub fn sample_noise(
    model: &JumpDiffusionModel,
    grid: &TimeGrid,
    seed: u64,
) -> Result<NoiseRealization> {
    let marks = model.marks();
    if !marks.is_empty() && marks.total_rate() <= 0.0 {
        return Err(Error::InvalidModel(
            "nonempty atom list with zero total rate".into(),
        ));
    }

    let mut jump_times: Vec<f64> = Vec::new();
    let mut jump_atoms: Vec<usize> = Vec::new();
    if !marks.is_empty() {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(STREAM_JUMPS);
        let total = marks.total_rate();
        let mut t = grid.t0();
        loop {
            // Exponential(total) interarrival via inverse CDF.
            let u: f64 = rng.random();
            t += -(1.0 - u).ln() / total;
            if t > grid.t_end() {
                break;
            }
            let mut pick: f64 = rng.random::<f64>() * total;
            let mut atom = marks.atoms().len() - 1;
            for (j, a) in marks.atoms().iter().enumerate() {
                if pick < a.rate {
                    atom = j;
                    break;
                }
                pick -= a.rate;
            }
            jump_times.push(t);
            jump_atoms.push(atom);
        }
    }

    let grid = grid.with_inserted(&jump_times);
    let nodes = grid.nodes();
    let jumps: Vec<JumpEvent> = jump_times
        .iter()
        .zip(&jump_atoms)
        .map(|(&time, &atom)| {
            let node = nodes
                .binary_search_by(|n| n.partial_cmp(&time).unwrap())
                .expect("jump time was inserted as a node");
            JumpEvent {
                time,
                node,
                atom,
                mark: marks.atoms()[atom].mark.clone(),
            }
        })
        .collect();

    let m = model.wiener_dim();
    let steps = grid.n_steps();
    let mut increments = vec![0.0; steps * m];
    if m > 0 {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(STREAM_WIENER);
        for (s, w) in nodes.windows(2).enumerate() {
            let sdt = (w[1] - w[0]).sqrt();
            for k in 0..m {
                let z: f64 = StandardNormal.sample(&mut rng);
                increments[s * m + k] = sdt * z;
            }
        }
    }

    Ok(NoiseRealization {
        grid,
        increments,
        m,
        jumps,
        seed,
        level: 0,
    })
}

impl NoiseRealization {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn nodes(&self) -> &[f64] {
        self.grid.nodes()
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    pub fn wiener_dim(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn jumps(&self) -> &[JumpEvent] {
        &self.jumps
    }

    /// Jump event landing on grid node `node`, if any.
    pub fn jump_at_node(&self, node: usize) -> Option<&JumpEvent> {
        self.jumps.iter().find(|j| j.node == node)
    }

    /// Increment of component `k` over step `s` (from node `s` to `s + 1`).
    pub fn increment(&self, s: usize, k: usize) -> f64 {
        self.increments[s * self.m + k]
    }

    pub fn step_increments(&self, s: usize) -> &[f64] {
        &self.increments[s * self.m..(s + 1) * self.m]
    }

    /// Cumulative Wiener path per component at every node (`W(t0) = 0`).
    pub fn wiener_path(&self) -> Vec<Vec<f64>> {
        let steps = self.n_steps();
        let mut path = vec![vec![0.0; steps + 1]; self.m];
        for s in 0..steps {
            for k in 0..self.m {
                path[k][s + 1] = path[k][s] + self.increment(s, k);
            }
        }
        path
    }

    /// Brownian-bridge subdivision: every interval is split at its midpoint;
    /// jump times and marks are held fixed. The refined record is a finer
    /// view of the same realization (values at coarse nodes are preserved).
    pub fn refine(&self) -> NoiseRealization {
        let fine_grid = self.grid.refined();
        let steps = self.grid.n_steps();
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(STREAM_BRIDGE_BASE + self.level as u64);
        let mut increments = vec![0.0; 2 * steps * self.m];
        for s in 0..steps {
            let dt = self.grid.nodes()[s + 1] - self.grid.nodes()[s];
            for k in 0..self.m {
                let dw = self.increment(s, k);
                let z: f64 = StandardNormal.sample(&mut rng);
                let xi = 0.5 * dt.sqrt() * z;
                increments[(2 * s) * self.m + k] = 0.5 * dw + xi;
                increments[(2 * s + 1) * self.m + k] = 0.5 * dw - xi;
            }
        }
        let fine_nodes = fine_grid.nodes();
        let jumps = self
            .jumps
            .iter()
            .map(|j| JumpEvent {
                time: j.time,
                node: fine_nodes
                    .binary_search_by(|n| n.partial_cmp(&j.time).unwrap())
                    .expect("coarse nodes survive refinement"),
                atom: j.atom,
                mark: j.mark.clone(),
            })
            .collect();
        NoiseRealization {
            grid: fine_grid,
            increments,
            m: self.m,
            jumps,
            seed: self.seed,
            level: self.level + 1,
        }
    }
}
