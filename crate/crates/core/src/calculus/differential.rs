//! The generalized stochastic differential of a random field:
//! `d_t F = Q dt + D_k dw_k + integral G(t,x,gamma) nu(dt,dgamma)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::model::fd_step;

pub type ScalarFieldFn = dyn Fn(f64, &DVector<f64>) -> f64 + Send + Sync;
pub type VectorFieldFn = dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync;
/// Jump term; fallible because state-dependent forms go through the inverse
/// jump map.
pub type JumpTermFn = dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> Result<f64> + Send + Sync;
/// `(k, i) -> dD_k/dx_i`
pub type DGradFn = dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// Coefficient triple `(Q, D_k, G)` of a field differential, with the
/// spatial derivative of `D` available analytically or by central
/// differences.
#[derive(Clone)]
pub struct FieldDifferential {
    m: usize,
    q: Arc<ScalarFieldFn>,
    d: Arc<VectorFieldFn>,
    g: Option<Arc<JumpTermFn>>,
    d_grad: Option<Arc<DGradFn>>,
}

impl std::fmt::Debug for FieldDifferential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FieldDifferential")
            .field("m", &self.m)
            .field("has_jump", &self.g.is_some())
            .finish()
    }
}

impl FieldDifferential {
    pub fn new(
        m: usize,
        q: impl Fn(f64, &DVector<f64>) -> f64 + Send + Sync + 'static,
        d: impl Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            m,
            q: Arc::new(q),
            d: Arc::new(d),
            g: None,
            d_grad: None,
        }
    }

    /// The zero differential (a field constant in time).
    pub fn zero(m: usize) -> Self {
        Self::new(m, |_, _| 0.0, move |_, _| DVector::zeros(m))
    }

    pub fn with_jump(
        mut self,
        g: impl Fn(f64, &DVector<f64>, &DVector<f64>) -> Result<f64> + Send + Sync + 'static,
    ) -> Self {
        self.g = Some(Arc::new(g));
        self
    }

    pub fn with_d_grad(
        mut self,
        f: impl Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.d_grad = Some(Arc::new(f));
        self
    }

    pub fn wiener_dim(&self) -> usize {
        self.m
    }

    pub fn q(&self, t: f64, x: &DVector<f64>) -> f64 {
        (self.q)(t, x)
    }

    pub fn d(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        (self.d)(t, x)
    }

    pub fn has_jump_term(&self) -> bool {
        self.g.is_some()
    }

    pub fn g(&self, t: f64, x: &DVector<f64>, mark: &DVector<f64>) -> Result<f64> {
        match &self.g {
            Some(g) => g(t, x, mark),
            None => Ok(0.0),
        }
    }

    /// `(k, i) -> dD_k/dx_i`, central differences when not supplied.
    pub fn d_grad(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        if let Some(f) = &self.d_grad {
            return f(t, x);
        }
        let n = x.len();
        let mut out = DMatrix::zeros(self.m, n);
        let mut xp = x.clone();
        for i in 0..n {
            let h = fd_step(x[i]);
            xp[i] = x[i] + h;
            let dp = (self.d)(t, &xp);
            xp[i] = x[i] - h;
            let dm = (self.d)(t, &xp);
            xp[i] = x[i];
            for k in 0..self.m {
                out[(k, i)] = (dp[k] - dm[k]) / (2.0 * h);
            }
        }
        out
    }
}
