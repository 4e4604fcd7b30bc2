//! Monte Carlo terminal-state density estimation: the empirical check of the
//! expectation link between kernel solutions and the forward equation.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::JumpDiffusionModel;
use crate::noise::sample_noise;
use crate::path::simulate_path;
use crate::space::{interpolate, OutOfDomain, SpaceGrid};
use crate::timegrid::TimeGrid;

#[derive(Debug, Clone)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Normalized density estimate per bin.
    pub density: Vec<f64>,
    /// Monte Carlo standard error of the density estimate per bin.
    pub se: Vec<f64>,
    pub n_effective: usize,
    pub n_divergent: usize,
    pub n_out_of_range: usize,
}

impl Histogram {
    /// L1 distance between this estimate and a grid density, over the
    /// histogram bins (the grid density is bin-averaged by quadrature).
    pub fn l1_vs_density(&self, grid: &SpaceGrid, slice: &[f64]) -> f64 {
        let mut acc = 0.0;
        for b in 0..self.counts.len() {
            let (lo, hi) = (self.edges[b], self.edges[b + 1]);
            let width = hi - lo;
            let pde_mass = crate::kolmogorov::forward::window_mass(grid, slice, lo, hi);
            acc += (self.density[b] - pde_mass / width).abs() * width;
        }
        acc
    }
}

pub enum InitialSampler<'a> {
    Point(DVector<f64>),
    Density { grid: &'a SpaceGrid, slice: &'a [f64] },
}

/// Simulate `n_paths` independent paths and bin terminal first components.
/// Path `i` uses seed `base_seed + i`; reduction order is fixed, so the
/// result is independent of thread count.
pub fn monte_carlo_density(
    model: &JumpDiffusionModel,
    init: &InitialSampler<'_>,
    time: &TimeGrid,
    edges: Vec<f64>,
    n_paths: usize,
    base_seed: u64,
) -> Result<Histogram> {
    if n_paths < 1000 {
        return Err(Error::InvalidInput(
            "Monte Carlo density estimation needs at least 1000 paths".into(),
        ));
    }
    if edges.len() < 2 || edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("bin edges must be increasing".into()));
    }

    let terminal: Vec<Option<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|i| -> Result<Option<f64>> {
            let seed = base_seed.wrapping_add(i as u64);
            let x0 = match init {
                InitialSampler::Point(x) => x.clone(),
                InitialSampler::Density { grid, slice } => {
                    let mut rng = ChaCha12Rng::seed_from_u64(base_seed ^ 0x5eed_ca5e);
                    rng.set_stream(i as u64);
                    let bound = slice.iter().fold(0.0_f64, |m, &v| m.max(v)) * 1.0001;
                    let mut tries = 0;
                    loop {
                        tries += 1;
                        if tries > 100_000 {
                            return Err(Error::Instability(
                                "initial-density rejection sampling stalled".into(),
                            ));
                        }
                        let y: Vec<f64> = grid
                            .axes()
                            .iter()
                            .map(|a| a.lo + rng.random::<f64>() * (a.hi - a.lo))
                            .collect();
                        let dens =
                            interpolate(grid, slice, &y, OutOfDomain::Zero).max(0.0);
                        if rng.random::<f64>() * bound < dens {
                            break DVector::from_vec(y);
                        }
                    }
                }
            };
            let noise = sample_noise(model, time, seed)?;
            match simulate_path(model, &x0, &noise) {
                Ok(traj) => Ok(Some(traj.terminal()[0])),
                Err(Error::Divergence { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut counts = vec![0u64; edges.len() - 1];
    let mut n_divergent = 0usize;
    let mut n_out = 0usize;
    let mut n_effective = 0usize;
    for t in &terminal {
        match t {
            None => n_divergent += 1,
            Some(x) => {
                n_effective += 1;
                if *x < edges[0] || *x >= *edges.last().unwrap() {
                    n_out += 1;
                    continue;
                }
                let last = counts.len() - 1;
                let b = edges.partition_point(|e| *e <= *x) - 1;
                counts[b.min(last)] += 1;
            }
        }
    }
    if n_effective == 0 {
        return Err(Error::Instability("all Monte Carlo paths diverged".into()));
    }

    let n = n_effective as f64;
    let mut density = Vec::with_capacity(counts.len());
    let mut se = Vec::with_capacity(counts.len());
    for (b, &c) in counts.iter().enumerate() {
        let width = edges[b + 1] - edges[b];
        let p = c as f64 / n;
        density.push(p / width);
        se.push((p * (1.0 - p) / n).sqrt() / width);
    }

    Ok(Histogram {
        edges,
        counts,
        density,
        se,
        n_effective,
        n_divergent,
        n_out_of_range: n_out,
    })
}
