//! Time discretization shared by path and field solvers.

use crate::error::{Error, Result};

/// A strictly increasing node list on `[t0, t_end]`.
///
/// Construction starts from a uniform partition; jump times are inserted as
/// extra nodes when a noise realization is sampled (superposition), so jump
/// counts stay exact and left limits are well defined.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    t_end: f64,
    base_steps: usize,
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn uniform(t0: f64, t_end: f64, base_steps: usize) -> Result<Self> {
        if !(t0.is_finite() && t_end.is_finite()) || t_end <= t0 {
            return Err(Error::InvalidInput(format!(
                "time grid needs finite t0 < t_end, got [{t0}, {t_end}]"
            )));
        }
        if base_steps == 0 {
            return Err(Error::InvalidInput("time grid needs at least one step".into()));
        }
        let dt = (t_end - t0) / base_steps as f64;
        let mut nodes: Vec<f64> = (0..=base_steps).map(|i| t0 + i as f64 * dt).collect();
        // Close the interval exactly despite rounding.
        *nodes.last_mut().unwrap() = t_end;
        Ok(Self {
            t0,
            t_end,
            base_steps,
            nodes,
        })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn base_steps(&self) -> usize {
        self.base_steps
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn n_steps(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Largest node spacing.
    pub fn dt_max(&self) -> f64 {
        self.nodes
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Merge extra strictly-interior times into the node list, keeping it
    /// strictly increasing. Times coinciding with an existing node (to within
    /// one ulp-scale tolerance) are not duplicated.
    pub(crate) fn with_inserted(&self, times: &[f64]) -> Self {
        let mut nodes = self.nodes.clone();
        for &t in times {
            debug_assert!(t > self.t0 && t <= self.t_end);
            match nodes.binary_search_by(|n| n.partial_cmp(&t).unwrap()) {
                Ok(_) => {}
                Err(pos) => {
                    let near = |a: f64, b: f64| (a - b).abs() <= 1e-14 * (1.0 + a.abs().max(b.abs()));
                    let dup = (pos > 0 && near(nodes[pos - 1], t))
                        || (pos < nodes.len() && near(nodes[pos], t));
                    if !dup {
                        nodes.insert(pos, t);
                    }
                }
            }
        }
        Self {
            t0: self.t0,
            t_end: self.t_end,
            base_steps: self.base_steps,
            nodes,
        }
    }

    /// Split every interval at its midpoint (used by Brownian-bridge
    /// refinement; existing nodes, hence jump times, are preserved).
    pub(crate) fn refined(&self) -> Self {
        let mut nodes = Vec::with_capacity(self.nodes.len() * 2 - 1);
        for w in self.nodes.windows(2) {
            nodes.push(w[0]);
            nodes.push(0.5 * (w[0] + w[1]));
        }
        nodes.push(self.t_end);
        Self {
            t0: self.t0,
            t_end: self.t_end,
            base_steps: self.base_steps * 2,
            nodes,
        }
    }
}
