//! Mechanical-system abstraction in port-Hamiltonian form.
//!
//! A [`PlantModel`] holds the model-defining maps — mass matrix `M(q)`,
//! potential `V(q)` with gradient, damping `D(x)`, input matrix `G(q)` — and
//! computes every derived matrix the controller and the certificates need:
//!
//! - the skew-symmetric gyroscopic matrix `S_H(x)` with entries
//!   `S_H[k,j] = ½ Σ_i (∂M_ki/∂q_j − ∂M_ij/∂q_k) (M⁻¹p)_i`,
//! - `Ṁ(q) = Σ_k (∂M/∂q_k) q̇_k` with `q̇ = M⁻¹p`,
//! - `E(x) = S_H(x) − ½Ṁ(q)` and `Γ(x) = (E(x) + D(x)) M⁻¹(q)`.
//!
//! `E` is defined so that `∇_q(½pᵀM⁻¹p) = E M⁻¹ p`; [`check_gyro_identity`]
//! measures the residual of that identity against a central finite difference
//! and is the authoritative self-check for any model's partials.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::linalg;
use crate::Result;

pub type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type StateMatrixFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type PartialsFn = Arc<dyn Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync>;

/// Whether a model's mass partials come from closed-form expressions or are
/// synthesized by central differences. Tolerances for the skew-symmetry and
/// identity checks adapt to this.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartialsSource {
    Analytic,
    Numeric,
}

impl PartialsSource {
    /// Tolerance for `‖S_H + S_Hᵀ‖_max` under this partials source.
    pub fn skew_tolerance(self) -> f64 {
        match self {
            PartialsSource::Analytic => 1e-12,
            PartialsSource::Numeric => 1e-6,
        }
    }
}

/// Generalized state `x = col(q, p)` with `p = M(q) q̇`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizedState {
    pub q: DVector<f64>,
    pub p: DVector<f64>,
}

impl GeneralizedState {
    pub fn new(q: DVector<f64>, p: DVector<f64>) -> Result<Self> {
        if q.len() != p.len() {
            return Err(Error::Dimension {
                expected: q.len(),
                got: p.len(),
            });
        }
        if !(q.iter().all(|v| v.is_finite()) && p.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFiniteState);
        }
        Ok(Self { q, p })
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }
}

/// A fully actuated mechanical system. Immutable after construction; all
/// evaluation methods are pure, so a model can be shared read-only across
/// threads.
#[derive(Clone)]
pub struct PlantModel {
    name: String,
    dof: usize,
    mass: MatrixFn,
    partials: PartialsFn,
    partials_source: PartialsSource,
    potential: ScalarFn,
    potential_grad: VectorFn,
    damping: StateMatrixFn,
    input: MatrixFn,
    input_cond_cap: f64,
}

/// Step-by-step constructor for [`PlantModel`]. Damping defaults to zero,
/// the input matrix to identity, and the potential to zero; mass partials
/// default to central differences of the mass map.
pub struct PlantModelBuilder {
    name: String,
    dof: usize,
    mass: Option<MatrixFn>,
    partials: Option<PartialsFn>,
    potential: Option<ScalarFn>,
    potential_grad: Option<VectorFn>,
    damping: Option<StateMatrixFn>,
    input: Option<MatrixFn>,
    input_cond_cap: f64,
}

impl PlantModelBuilder {
    pub fn mass(mut self, f: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.mass = Some(Arc::new(f));
        self
    }

    /// Closed-form partials `[∂M/∂q_1, …, ∂M/∂q_n]`.
    pub fn mass_partials(
        mut self,
        f: impl Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    ) -> Self {
        self.partials = Some(Arc::new(f));
        self
    }

    pub fn potential(mut self, f: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        self.potential = Some(Arc::new(f));
        self
    }

    pub fn potential_grad(
        mut self,
        f: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.potential_grad = Some(Arc::new(f));
        self
    }

    pub fn damping(
        mut self,
        f: impl Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.damping = Some(Arc::new(f));
        self
    }

    pub fn input_matrix(
        mut self,
        f: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.input = Some(Arc::new(f));
        self
    }

    pub fn input_cond_cap(mut self, cap: f64) -> Self {
        self.input_cond_cap = cap;
        self
    }

    pub fn build(self) -> PlantModel {
        let n = self.dof;
        let mass = self
            .mass
            .unwrap_or_else(|| Arc::new(move |_q: &DVector<f64>| DMatrix::identity(n, n)));
        let (partials, partials_source) = match self.partials {
            Some(p) => (p, PartialsSource::Analytic),
            None => {
                let m = Arc::clone(&mass);
                let f: PartialsFn =
                    Arc::new(move |q: &DVector<f64>| linalg::central_matrix_partials(|qq| m(qq), q));
                (f, PartialsSource::Numeric)
            }
        };
        let potential = self
            .potential
            .unwrap_or_else(|| Arc::new(|_q: &DVector<f64>| 0.0));
        let potential_grad = match self.potential_grad {
            Some(g) => g,
            None => {
                let v = Arc::clone(&potential);
                Arc::new(move |q: &DVector<f64>| linalg::central_gradient(|qq| v(qq), q))
            }
        };
        let damping = self
            .damping
            .unwrap_or_else(|| Arc::new(move |_q: &DVector<f64>, _p: &DVector<f64>| DMatrix::zeros(n, n)));
        let input = self
            .input
            .unwrap_or_else(|| Arc::new(move |_q: &DVector<f64>| DMatrix::identity(n, n)));
        PlantModel {
            name: self.name,
            dof: n,
            mass,
            partials,
            partials_source,
            potential,
            potential_grad,
            damping,
            input,
            input_cond_cap: self.input_cond_cap,
        }
    }
}

impl PlantModel {
    pub fn builder(name: impl Into<String>, dof: usize) -> PlantModelBuilder {
        PlantModelBuilder {
            name: name.into(),
            dof,
            mass: None,
            partials: None,
            potential: None,
            potential_grad: None,
            damping: None,
            input: None,
            input_cond_cap: 1e8,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn partials_source(&self) -> PartialsSource {
        self.partials_source
    }

    pub fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        (self.mass)(q)
    }

    pub fn mass_partials(&self, q: &DVector<f64>) -> Vec<DMatrix<f64>> {
        (self.partials)(q)
    }

    pub fn potential(&self, q: &DVector<f64>) -> f64 {
        (self.potential)(q)
    }

    pub fn potential_grad(&self, q: &DVector<f64>) -> DVector<f64> {
        (self.potential_grad)(q)
    }

    pub fn damping(&self, x: &GeneralizedState) -> DMatrix<f64> {
        (self.damping)(&x.q, &x.p)
    }

    pub fn input_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        (self.input)(q)
    }

    pub fn input_cond_cap(&self) -> f64 {
        self.input_cond_cap
    }

    /// `M(q)⁻¹ v` by Cholesky solve.
    pub fn mass_solve(&self, q: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.mass_matrix(q);
        let chol = m.cholesky().ok_or_else(|| Error::InvalidMass {
            q: q.iter().copied().collect(),
            reason: "Cholesky factorization failed (not positive definite)".into(),
        })?;
        Ok(chol.solve(v))
    }

    /// Generalized velocity `q̇ = M(q)⁻¹ p`.
    pub fn velocity(&self, x: &GeneralizedState) -> Result<DVector<f64>> {
        self.mass_solve(&x.q, &x.p)
    }

    /// Total energy `H(x) = ½ pᵀ M⁻¹(q) p + V(q)`.
    pub fn hamiltonian(&self, x: &GeneralizedState) -> Result<f64> {
        let v = self.velocity(x)?;
        Ok(0.5 * x.p.dot(&v) + self.potential(&x.q))
    }

    /// Configuration gradient of the kinetic energy,
    /// `∇_q(½pᵀM⁻¹p)_k = −½ q̇ᵀ (∂M/∂q_k) q̇`.
    pub fn kinetic_grad(&self, x: &GeneralizedState) -> Result<DVector<f64>> {
        let v = self.velocity(x)?;
        let parts = self.mass_partials(&x.q);
        let mut grad = DVector::zeros(self.dof);
        for (k, dm) in parts.iter().enumerate() {
            grad[k] = -0.5 * v.dot(&(dm * &v));
        }
        Ok(grad)
    }

    /// Full configuration gradient `∇_q H = ∇_q(½pᵀM⁻¹p) + ∇V`.
    pub fn hamiltonian_grad_q(&self, x: &GeneralizedState) -> Result<DVector<f64>> {
        Ok(self.kinetic_grad(x)? + self.potential_grad(&x.q))
    }

    /// Skew-symmetric gyroscopic matrix `S_H(x)`, entry-wise
    /// `S_H[k,j] = ½ Σ_i (∂M_ki/∂q_j − ∂M_ij/∂q_k) (M⁻¹p)_i`.
    pub fn gyro_matrix(&self, x: &GeneralizedState) -> Result<DMatrix<f64>> {
        let v = self.velocity(x)?;
        let parts = self.mass_partials(&x.q);
        let n = self.dof;
        let mut s = DMatrix::zeros(n, n);
        for k in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += (parts[j][(k, i)] - parts[k][(i, j)]) * v[i];
                }
                s[(k, j)] = 0.5 * acc;
            }
        }
        Ok(s)
    }

    /// `Ṁ(q) = Σ_k (∂M/∂q_k) q̇_k` with `q̇ = M⁻¹p`. Symmetric; zero for
    /// constant mass or `p = 0`.
    pub fn mdot_matrix(&self, x: &GeneralizedState) -> Result<DMatrix<f64>> {
        let v = self.velocity(x)?;
        let parts = self.mass_partials(&x.q);
        let n = self.dof;
        let mut mdot = DMatrix::zeros(n, n);
        for (k, dm) in parts.iter().enumerate() {
            mdot += dm * v[k];
        }
        Ok(mdot)
    }

    /// `E(x) = S_H(x) − ½ Ṁ(q)`.
    pub fn e_matrix(&self, x: &GeneralizedState) -> Result<DMatrix<f64>> {
        Ok(self.gyro_matrix(x)? - self.mdot_matrix(x)? * 0.5)
    }

    /// `Γ(x) = (E(x) + D(x)) M⁻¹(q)`.
    pub fn gamma(&self, x: &GeneralizedState) -> Result<DMatrix<f64>> {
        let ed = self.e_matrix(x)? + self.damping(x);
        let m = self.mass_matrix(&x.q);
        let chol = m.cholesky().ok_or_else(|| Error::InvalidMass {
            q: x.q.iter().copied().collect(),
            reason: "Cholesky factorization failed (not positive definite)".into(),
        })?;
        // (E+D) M⁻¹ = (M⁻¹ (E+D)ᵀ)ᵀ, and Cholesky solves M X = B column-wise.
        Ok(chol.solve(&ed.transpose()).transpose())
    }

    /// Validate the model contracts at one configuration: `M` symmetric to
    /// 1e-12 and positive definite, `G` invertible within the condition cap,
    /// and (for analytic partials) agreement with central differences to
    /// relative error 1e-6.
    pub fn validate_at(&self, q: &DVector<f64>) -> Result<()> {
        let m = self.mass_matrix(q);
        let scale = m.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1.0);
        let asym = linalg::max_asymmetry(&m);
        if asym > 1e-12 * scale {
            return Err(Error::InvalidMass {
                q: q.iter().copied().collect(),
                reason: format!("asymmetry {asym:.3e} exceeds 1e-12 relative"),
            });
        }
        let min_eig = linalg::min_eig_sym(&m);
        if min_eig <= 0.0 {
            return Err(Error::InvalidMass {
                q: q.iter().copied().collect(),
                reason: format!("minimum eigenvalue {min_eig:.3e} is not positive"),
            });
        }
        let g = self.input_matrix(q);
        let cond = linalg::cond_2(&g);
        if !cond.is_finite() || cond > self.input_cond_cap {
            return Err(Error::IllConditionedInput {
                q: q.iter().copied().collect(),
                cond,
                cap: self.input_cond_cap,
            });
        }
        if self.partials_source == PartialsSource::Analytic {
            let analytic = self.mass_partials(q);
            let numeric = linalg::central_matrix_partials(|qq| self.mass_matrix(qq), q);
            for k in 0..self.dof {
                let diff = (&analytic[k] - &numeric[k]).norm();
                let denom = analytic[k].norm().max(1.0);
                let rel = diff / denom;
                if rel > 1e-6 {
                    return Err(Error::BadMassPartials {
                        q: q.iter().copied().collect(),
                        coord: k,
                        rel_err: rel,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Relative residual of the gyroscopic identity `∇_q(½pᵀM⁻¹p) = E M⁻¹ p`,
/// with the left side computed by central finite differences of the kinetic
/// energy. Returns the residual unconditionally; callers compare against
/// their tolerance (1e-6 for analytic partials).
pub fn check_gyro_identity(model: &PlantModel, x: &GeneralizedState) -> Result<f64> {
    let p = x.p.clone();
    let kinetic = |q: &DVector<f64>| -> f64 {
        let m = model.mass_matrix(q);
        let v = m
            .cholesky()
            .map(|c| c.solve(&p))
            .unwrap_or_else(|| DVector::zeros(p.len()));
        0.5 * p.dot(&v)
    };
    let lhs = linalg::central_gradient(kinetic, &x.q);
    let rhs = model.e_matrix(x)? * model.velocity(x)?;
    let denom = rhs.norm().max(1.0);
    Ok((lhs - rhs).norm() / denom)
}
