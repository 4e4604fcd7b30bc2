//! Jump-diffusion model definition: drift `a(t,x)`, diffusion `b(t,x)`, jump
//! amplitude `g(t,x,gamma)`, their spatial derivatives (analytic or
//! finite-difference fallback), and the finite-atom jump mark measure.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

/// One atom of the jump mark measure: mark vector and arrival rate (1/time).
#[derive(Debug, Clone)]
pub struct MarkAtom {
    pub mark: DVector<f64>,
    pub rate: f64,
}

/// Finite-atom realization of the mark measure. Atoms make every mark-space
/// integral an exact finite sum; the total jump intensity is finite by
/// construction.
#[derive(Debug, Clone)]
pub struct MarkMeasure {
    atoms: Vec<MarkAtom>,
    total_rate: f64,
}

impl MarkMeasure {
    pub fn new(atoms: Vec<MarkAtom>) -> Result<Self> {
        let mut dim = None;
        for a in &atoms {
            if !(a.rate.is_finite() && a.rate > 0.0) {
                return Err(Error::InvalidModel(format!(
                    "mark atom rate must be positive, got {}",
                    a.rate
                )));
            }
            match dim {
                None => dim = Some(a.mark.len()),
                Some(d) if d != a.mark.len() => {
                    return Err(Error::InvalidModel(
                        "mark atoms must share one mark dimension".into(),
                    ))
                }
                _ => {}
            }
        }
        let total_rate = atoms.iter().map(|a| a.rate).sum();
        Ok(Self { atoms, total_rate })
    }

    /// Jump-free measure.
    pub fn none() -> Self {
        Self {
            atoms: Vec::new(),
            total_rate: 0.0,
        }
    }

    /// Convenience constructor from `(mark vector, rate)` pairs.
    pub fn from_pairs(pairs: &[(Vec<f64>, f64)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|(m, r)| MarkAtom {
                    mark: DVector::from_vec(m.clone()),
                    rate: *r,
                })
                .collect(),
        )
    }

    pub fn atoms(&self) -> &[MarkAtom] {
        &self.atoms
    }

    pub fn total_rate(&self) -> f64 {
        self.total_rate
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn mark_dim(&self) -> usize {
        self.atoms.first().map_or(0, |a| a.mark.len())
    }
}

pub type DriftFn = dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync;
pub type DiffusionFn = dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync;
pub type JumpAmplitudeFn =
    dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;
/// `(i, j) -> da_i/dx_j`
pub type GradDriftFn = dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync;
/// `[k](i, j) -> db_ik/dx_j`
pub type GradDiffusionFn = dyn Fn(f64, &DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync;
/// `(i, j) -> dg_i/dx_j` at fixed mark
pub type GradJumpFn = dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync;
/// `[k][i](j, l) -> d^2 b_ik / dx_j dx_l`
pub type HessDiffusionFn =
    dyn Fn(f64, &DVector<f64>) -> Vec<Vec<DMatrix<f64>>> + Send + Sync;

/// Whether the jump amplitude depends on the state (decides which
/// first-integral coefficient system and which inverse-map route apply).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JumpShape {
    StateIndependent,
    StateDependent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Analytic,
    FiniteDifference,
}

/// Step used by all central-difference fallbacks.
pub(crate) fn fd_step(x: f64) -> f64 {
    1e-6 * (1.0 + x.abs())
}

#[derive(Clone)]
pub struct JumpDiffusionModel {
    pub name: String,
    n: usize,
    m: usize,
    drift: Arc<DriftFn>,
    diffusion: Arc<DiffusionFn>,
    jump: Option<Arc<JumpAmplitudeFn>>,
    grad_a: Option<Arc<GradDriftFn>>,
    grad_b: Option<Arc<GradDiffusionFn>>,
    grad_g: Option<Arc<GradJumpFn>>,
    hess_b: Option<Arc<HessDiffusionFn>>,
    marks: MarkMeasure,
    jump_shape: JumpShape,
}

impl std::fmt::Debug for JumpDiffusionModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JumpDiffusionModel")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("atoms", &self.marks.atoms().len())
            .field("jump_shape", &self.jump_shape)
            .finish()
    }
}

pub struct ModelBuilder {
    name: String,
    n: usize,
    m: usize,
    drift: Option<Arc<DriftFn>>,
    diffusion: Option<Arc<DiffusionFn>>,
    jump: Option<Arc<JumpAmplitudeFn>>,
    grad_a: Option<Arc<GradDriftFn>>,
    grad_b: Option<Arc<GradDiffusionFn>>,
    grad_g: Option<Arc<GradJumpFn>>,
    hess_b: Option<Arc<HessDiffusionFn>>,
    marks: MarkMeasure,
}

impl ModelBuilder {
    pub fn drift(mut self, f: impl Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.drift = Some(Arc::new(f));
        self
    }

    pub fn diffusion(
        mut self,
        f: impl Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.diffusion = Some(Arc::new(f));
        self
    }

    pub fn jump(
        mut self,
        marks: MarkMeasure,
        g: impl Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.marks = marks;
        self.jump = Some(Arc::new(g));
        self
    }

    pub fn grad_drift(
        mut self,
        f: impl Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.grad_a = Some(Arc::new(f));
        self
    }

    pub fn grad_diffusion(
        mut self,
        f: impl Fn(f64, &DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    ) -> Self {
        self.grad_b = Some(Arc::new(f));
        self
    }

    pub fn grad_jump(
        mut self,
        f: impl Fn(f64, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.grad_g = Some(Arc::new(f));
        self
    }

    pub fn hess_diffusion(
        mut self,
        f: impl Fn(f64, &DVector<f64>) -> Vec<Vec<DMatrix<f64>>> + Send + Sync + 'static,
    ) -> Self {
        self.hess_b = Some(Arc::new(f));
        self
    }

    pub fn build(self) -> Result<JumpDiffusionModel> {
        let drift = self
            .drift
            .ok_or_else(|| Error::InvalidModel("drift a(t,x) is required".into()))?;
        let diffusion = self
            .diffusion
            .ok_or_else(|| Error::InvalidModel("diffusion b(t,x) is required".into()))?;
        if !self.marks.is_empty() && self.jump.is_none() {
            return Err(Error::InvalidModel(
                "mark atoms supplied without a jump amplitude g".into(),
            ));
        }
        let mut model = JumpDiffusionModel {
            name: self.name,
            n: self.n,
            m: self.m,
            drift,
            diffusion,
            jump: self.jump,
            grad_a: self.grad_a,
            grad_b: self.grad_b,
            grad_g: self.grad_g,
            hess_b: self.hess_b,
            marks: self.marks,
            jump_shape: JumpShape::StateIndependent,
        };
        model.jump_shape = model.probe_jump_shape();
        model.check_dimensions()?;
        Ok(model)
    }
}

impl JumpDiffusionModel {
    pub fn builder(name: impl Into<String>, n: usize, m: usize) -> ModelBuilder {
        ModelBuilder {
            name: name.into(),
            n,
            m,
            drift: None,
            diffusion: None,
            jump: None,
            grad_a: None,
            grad_b: None,
            grad_g: None,
            hess_b: None,
            marks: MarkMeasure::none(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn wiener_dim(&self) -> usize {
        self.m
    }

    pub fn marks(&self) -> &MarkMeasure {
        &self.marks
    }

    pub fn has_jumps(&self) -> bool {
        !self.marks.is_empty()
    }

    pub fn jump_shape(&self) -> JumpShape {
        self.jump_shape
    }

    pub fn drift(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        (self.drift)(t, x)
    }

    pub fn diffusion(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        (self.diffusion)(t, x)
    }

    pub fn jump_amplitude(&self, t: f64, x: &DVector<f64>, mark: &DVector<f64>) -> DVector<f64> {
        match &self.jump {
            Some(g) => g(t, x, mark),
            None => DVector::zeros(self.n),
        }
    }

    /// `(i,j) -> da_i/dx_j`, analytic when supplied, else central differences.
    pub fn grad_drift(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        if let Some(f) = &self.grad_a {
            return f(t, x);
        }
        jacobian_fd(self.n, x, |xp| (self.drift)(t, xp))
    }

    /// `[k](i,j) -> db_ik/dx_j`.
    pub fn grad_diffusion(&self, t: f64, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        if let Some(f) = &self.grad_b {
            return f(t, x);
        }
        let mut out = vec![DMatrix::zeros(self.n, self.n); self.m];
        let mut xp = x.clone();
        for j in 0..self.n {
            let h = fd_step(x[j]);
            xp[j] = x[j] + h;
            let bp = (self.diffusion)(t, &xp);
            xp[j] = x[j] - h;
            let bm = (self.diffusion)(t, &xp);
            xp[j] = x[j];
            for k in 0..self.m {
                for i in 0..self.n {
                    out[k][(i, j)] = (bp[(i, k)] - bm[(i, k)]) / (2.0 * h);
                }
            }
        }
        out
    }

    /// `(i,j) -> dg_i/dx_j` at a fixed mark.
    pub fn grad_jump(&self, t: f64, x: &DVector<f64>, mark: &DVector<f64>) -> DMatrix<f64> {
        if let Some(f) = &self.grad_g {
            return f(t, x, mark);
        }
        match &self.jump {
            Some(g) => jacobian_fd(self.n, x, |xp| g(t, xp, mark)),
            None => DMatrix::zeros(self.n, self.n),
        }
    }

    /// `[k][i](j,l) -> d^2 b_ik/dx_j dx_l`, differencing `grad_diffusion`
    /// when no analytic Hessian is supplied.
    pub fn hess_diffusion(&self, t: f64, x: &DVector<f64>) -> Vec<Vec<DMatrix<f64>>> {
        if let Some(f) = &self.hess_b {
            return f(t, x);
        }
        let mut out = vec![vec![DMatrix::zeros(self.n, self.n); self.n]; self.m];
        let mut xp = x.clone();
        for l in 0..self.n {
            let h = fd_step(x[l]);
            xp[l] = x[l] + h;
            let gp = self.grad_diffusion(t, &xp);
            xp[l] = x[l] - h;
            let gm = self.grad_diffusion(t, &xp);
            xp[l] = x[l];
            for k in 0..self.m {
                for i in 0..self.n {
                    for j in 0..self.n {
                        out[k][i][(j, l)] = (gp[k][(i, j)] - gm[k][(i, j)]) / (2.0 * h);
                    }
                }
            }
        }
        out
    }

    /// Which derivative callables are analytic vs finite-difference
    /// (finite-difference substitutions are flagged in reports).
    pub fn derivative_provenance(&self) -> Vec<(&'static str, Provenance)> {
        let p = |o: bool| {
            if o {
                Provenance::Analytic
            } else {
                Provenance::FiniteDifference
            }
        };
        vec![
            ("grad_a", p(self.grad_a.is_some())),
            ("grad_b", p(self.grad_b.is_some())),
            ("grad_g", p(self.grad_g.is_some() || self.jump.is_none())),
            ("hess_b", p(self.hess_b.is_some())),
        ]
    }

    fn probe_points(&self, seed: u64, count: usize) -> Vec<(f64, DVector<f64>)> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let t = rng.random::<f64>() * 2.0;
                let x = DVector::from_fn(self.n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
                (t, x)
            })
            .collect()
    }

    fn probe_jump_shape(&self) -> JumpShape {
        if self.jump.is_none() || self.marks.is_empty() {
            return JumpShape::StateIndependent;
        }
        for (t, x) in self.probe_points(0x6a75_6d70, 5) {
            for atom in self.marks.atoms() {
                let g = self.grad_jump(t, &x, &atom.mark);
                if g.amax() > 1e-10 {
                    return JumpShape::StateDependent;
                }
            }
        }
        JumpShape::StateIndependent
    }

    fn check_dimensions(&self) -> Result<()> {
        let x = DVector::zeros(self.n);
        let a = (self.drift)(0.0, &x);
        if a.len() != self.n {
            return Err(Error::InvalidModel(format!(
                "drift returns dimension {}, expected {}",
                a.len(),
                self.n
            )));
        }
        let b = (self.diffusion)(0.0, &x);
        if b.nrows() != self.n || b.ncols() != self.m {
            return Err(Error::InvalidModel(format!(
                "diffusion returns {}x{}, expected {}x{}",
                b.nrows(),
                b.ncols(),
                self.n,
                self.m
            )));
        }
        if let Some(g) = &self.jump {
            for atom in self.marks.atoms() {
                let gv = g(0.0, &x, &atom.mark);
                if gv.len() != self.n {
                    return Err(Error::InvalidModel(format!(
                        "jump amplitude returns dimension {}, expected {}",
                        gv.len(),
                        self.n
                    )));
                }
            }
        }
        Ok(())
    }

    /// The same model with drift replaced by the compensated drift
    /// `a_bar(t,x) = a(t,x) - sum_j rate_j g(t, x, gamma_j)`, the coefficient
    /// change that rewrites the jump integral against the centered measure.
    pub fn compensated(&self) -> JumpDiffusionModel {
        if !self.has_jumps() {
            let mut out = self.clone();
            out.name = format!("{}+compensated", self.name);
            return out;
        }
        let base = self.clone();
        let base_grad = self.clone();
        let drift = move |t: f64, x: &DVector<f64>| -> DVector<f64> {
            let mut a = base.drift(t, x);
            for atom in base.marks().atoms() {
                a -= base.jump_amplitude(t, x, &atom.mark) * atom.rate;
            }
            a
        };
        let grad = move |t: f64, x: &DVector<f64>| -> DMatrix<f64> {
            let mut g = base_grad.grad_drift(t, x);
            for atom in base_grad.marks().atoms() {
                g -= base_grad.grad_jump(t, x, &atom.mark) * atom.rate;
            }
            g
        };
        let mut out = self.clone();
        out.name = format!("{}+compensated", self.name);
        out.drift = Arc::new(drift);
        out.grad_a = Some(Arc::new(grad));
        out
    }

    /// Smoothness probe: supplied analytic derivatives must agree with
    /// central finite differences at randomly probed `(t, x)` to relative
    /// tolerance 1e-5.
    pub fn validate(&self, seed: u64) -> Result<()> {
        let rel = 1e-5;
        let agree = |got: f64, fd: f64, what: &str, t: f64| -> Result<()> {
            let scale = 1.0 + got.abs().max(fd.abs());
            if (got - fd).abs() > rel * scale {
                return Err(Error::InvalidModel(format!(
                    "{what} disagrees with finite differences at t = {t}: analytic {got:.8e} vs fd {fd:.8e}"
                )));
            }
            Ok(())
        };
        for (t, x) in self.probe_points(seed, 8) {
            if let Some(f) = &self.grad_a {
                let got = f(t, &x);
                let fd = jacobian_fd(self.n, &x, |xp| (self.drift)(t, xp));
                for i in 0..self.n {
                    for j in 0..self.n {
                        agree(got[(i, j)], fd[(i, j)], "grad_a", t)?;
                    }
                }
            }
            if let Some(f) = &self.grad_b {
                let got = f(t, &x);
                let fd = {
                    let saved = self.grad_b.clone();
                    let _ = saved; // fd route below does not use the analytic callable
                    let mut out = vec![DMatrix::zeros(self.n, self.n); self.m];
                    let mut xp = x.clone();
                    for j in 0..self.n {
                        let h = fd_step(x[j]);
                        xp[j] = x[j] + h;
                        let bp = (self.diffusion)(t, &xp);
                        xp[j] = x[j] - h;
                        let bm = (self.diffusion)(t, &xp);
                        xp[j] = x[j];
                        for k in 0..self.m {
                            for i in 0..self.n {
                                out[k][(i, j)] = (bp[(i, k)] - bm[(i, k)]) / (2.0 * h);
                            }
                        }
                    }
                    out
                };
                for k in 0..self.m {
                    for i in 0..self.n {
                        for j in 0..self.n {
                            agree(got[k][(i, j)], fd[k][(i, j)], "grad_b", t)?;
                        }
                    }
                }
            }
            if let (Some(f), Some(g)) = (&self.grad_g, &self.jump) {
                for atom in self.marks.atoms() {
                    let got = f(t, &x, &atom.mark);
                    let fd = jacobian_fd(self.n, &x, |xp| g(t, xp, &atom.mark));
                    for i in 0..self.n {
                        for j in 0..self.n {
                            agree(got[(i, j)], fd[(i, j)], "grad_g", t)?;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Central-difference Jacobian of a vector-valued map.
pub(crate) fn jacobian_fd(
    n: usize,
    x: &DVector<f64>,
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, n);
    let mut xp = x.clone();
    for j in 0..n {
        let h = fd_step(x[j]);
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        for i in 0..n {
            out[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_1d(alpha: f64, sigma: f64) -> JumpDiffusionModel {
        JumpDiffusionModel::builder("test", 1, 1)
            .drift(move |_, x| DVector::from_vec(vec![alpha * x[0]]))
            .diffusion(move |_, x| DMatrix::from_vec(1, 1, vec![sigma * x[0]]))
            .build()
            .unwrap()
    }

    #[test]
    fn mark_measure_invariants() {
        let m = MarkMeasure::from_pairs(&[(vec![1.0], 0.5), (vec![-2.0], 1.5)]).unwrap();
        assert!((m.total_rate() - 2.0).abs() <= f64::EPSILON * 2.0);
        assert_eq!(m.mark_dim(), 1);
        assert!(MarkMeasure::from_pairs(&[(vec![1.0], 0.0)]).is_err());
        assert!(MarkMeasure::from_pairs(&[(vec![1.0], -1.0)]).is_err());
        assert!(MarkMeasure::from_pairs(&[(vec![1.0], 1.0), (vec![1.0, 2.0], 1.0)]).is_err());
        assert!(MarkMeasure::none().is_empty());
    }

    #[test]
    fn fd_fallback_matches_analytic_gradients() {
        let m = linear_1d(0.7, 0.3);
        let x = DVector::from_vec(vec![1.3]);
        let ga = m.grad_drift(0.2, &x);
        assert!((ga[(0, 0)] - 0.7).abs() < 1e-7);
        let gb = m.grad_diffusion(0.2, &x);
        assert!((gb[0][(0, 0)] - 0.3).abs() < 1e-7);
    }

    #[test]
    fn validate_catches_wrong_analytic_derivative() {
        let good = JumpDiffusionModel::builder("good", 1, 1)
            .drift(|_, x| DVector::from_vec(vec![x[0] * x[0]]))
            .diffusion(|_, _| DMatrix::from_vec(1, 1, vec![1.0]))
            .grad_drift(|_, x| DMatrix::from_vec(1, 1, vec![2.0 * x[0]]))
            .build()
            .unwrap();
        good.validate(7).unwrap();

        let bad = JumpDiffusionModel::builder("bad", 1, 1)
            .drift(|_, x| DVector::from_vec(vec![x[0] * x[0]]))
            .diffusion(|_, _| DMatrix::from_vec(1, 1, vec![1.0]))
            .grad_drift(|_, x| DMatrix::from_vec(1, 1, vec![3.0 * x[0]]))
            .build()
            .unwrap();
        assert!(bad.validate(7).is_err());
    }

    #[test]
    fn jump_shape_probe() {
        let marks = MarkMeasure::from_pairs(&[(vec![0.5], 1.0)]).unwrap();
        let additive = JumpDiffusionModel::builder("additive-jump", 1, 1)
            .drift(|_, _| DVector::zeros(1))
            .diffusion(|_, _| DMatrix::zeros(1, 1))
            .jump(marks.clone(), |_, _, g| g.clone())
            .build()
            .unwrap();
        assert_eq!(additive.jump_shape(), JumpShape::StateIndependent);

        let proportional = JumpDiffusionModel::builder("proportional-jump", 1, 1)
            .drift(|_, _| DVector::zeros(1))
            .diffusion(|_, _| DMatrix::zeros(1, 1))
            .jump(marks, |_, x, g| DVector::from_vec(vec![g[0] * x[0]]))
            .build()
            .unwrap();
        assert_eq!(proportional.jump_shape(), JumpShape::StateDependent);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let r = JumpDiffusionModel::builder("broken", 2, 1)
            .drift(|_, _| DVector::zeros(1))
            .diffusion(|_, _| DMatrix::zeros(2, 1))
            .build();
        assert!(matches!(r, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn hessian_fd_of_quadratic_diffusion() {
        let m = JumpDiffusionModel::builder("quad-b", 1, 1)
            .drift(|_, _| DVector::zeros(1))
            .diffusion(|_, x| DMatrix::from_vec(1, 1, vec![x[0] * x[0]]))
            .build()
            .unwrap();
        let h = m.hess_diffusion(0.0, &DVector::from_vec(vec![0.4]));
        assert!((h[0][0][(0, 0)] - 2.0).abs() < 1e-3, "{}", h[0][0][(0, 0)]);
    }
}
