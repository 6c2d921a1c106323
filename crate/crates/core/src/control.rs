//! Controllers: the gyroscopic passivity-based integral control (PBIC) law
//! and the energy-shaping/damping-injection (ES-DI) baseline.
//!
//! The PBIC torque is
//!
//! ```text
//! u = G⁻¹[ ∇V(q) − M_d M⁻¹ K_p q̄ − Γ K_p q̄ − K_p q̇ − K_d M_d⁻¹ p̄ + z ]
//! ```
//!
//! with `q̄ = q − q⋆`, `p̄ = p + K_p q̄`, the shaped output `ȳ = M_d⁻¹ p̄`, and
//! the integrator extension `ż = −K_i ȳ`. The term ordering above is kept
//! verbatim in the implementation so it can be audited line by line.
//!
//! Both controllers are stateless; the integrator state `z` is owned by the
//! simulation loop and passed in.

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::linalg;
use crate::plant::{GeneralizedState, PlantModel};
use crate::Result;

fn require_spd(name: &'static str, m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if linalg::max_asymmetry(m) > 1e-12 {
        return Err(Error::InvalidGains {
            name,
            min_eig: f64::NAN,
        });
    }
    let min_eig = linalg::min_eig_sym(m);
    if min_eig <= 1e-12 {
        return Err(Error::InvalidGains { name, min_eig });
    }
    Ok(())
}

/// PBIC gains `K_p, K_i, K_d, M_d ≻ 0` and the target configuration `q⋆`.
#[derive(Clone, Debug)]
pub struct ControllerGains {
    kp: DMatrix<f64>,
    ki: DMatrix<f64>,
    kd: DMatrix<f64>,
    md: DMatrix<f64>,
    md_inv: DMatrix<f64>,
    ki_inv: DMatrix<f64>,
    q_star: DVector<f64>,
}

impl ControllerGains {
    pub fn new(
        kp: DMatrix<f64>,
        ki: DMatrix<f64>,
        kd: DMatrix<f64>,
        md: DMatrix<f64>,
        q_star: DVector<f64>,
    ) -> Result<Self> {
        require_spd("K_p", &kp)?;
        require_spd("K_i", &ki)?;
        require_spd("K_d", &kd)?;
        require_spd("M_d", &md)?;
        let n = q_star.len();
        for (name, m) in [("K_p", &kp), ("K_i", &ki), ("K_d", &kd), ("M_d", &md)] {
            if m.nrows() != n {
                let _ = name;
                return Err(Error::Dimension {
                    expected: n,
                    got: m.nrows(),
                });
            }
        }
        let md_inv = md
            .clone()
            .cholesky()
            .expect("SPD checked above")
            .inverse();
        let ki_inv = ki
            .clone()
            .cholesky()
            .expect("SPD checked above")
            .inverse();
        Ok(Self {
            kp,
            ki,
            kd,
            md,
            md_inv,
            ki_inv,
            q_star,
        })
    }

    /// Diagonal gains, the common case.
    pub fn diagonal(kp: &[f64], ki: &[f64], kd: &[f64], md: &[f64], q_star: DVector<f64>) -> Result<Self> {
        let diag = |v: &[f64]| DMatrix::from_diagonal(&DVector::from_row_slice(v));
        Self::new(diag(kp), diag(ki), diag(kd), diag(md), q_star)
    }

    pub fn dof(&self) -> usize {
        self.q_star.len()
    }

    pub fn kp(&self) -> &DMatrix<f64> {
        &self.kp
    }

    pub fn ki(&self) -> &DMatrix<f64> {
        &self.ki
    }

    pub fn kd(&self) -> &DMatrix<f64> {
        &self.kd
    }

    pub fn md(&self) -> &DMatrix<f64> {
        &self.md
    }

    pub fn md_inv(&self) -> &DMatrix<f64> {
        &self.md_inv
    }

    pub fn ki_inv(&self) -> &DMatrix<f64> {
        &self.ki_inv
    }

    pub fn q_star(&self) -> &DVector<f64> {
        &self.q_star
    }

    /// Same gains retargeted at a different configuration.
    pub fn with_target(mut self, q_star: DVector<f64>) -> Result<Self> {
        if q_star.len() != self.dof() {
            return Err(Error::Dimension {
                expected: self.dof(),
                got: q_star.len(),
            });
        }
        self.q_star = q_star;
        Ok(self)
    }
}

/// ES-DI baseline gains `K_es, K_di ≻ 0` and the target configuration.
#[derive(Clone, Debug)]
pub struct BaselineGains {
    kes: DMatrix<f64>,
    kdi: DMatrix<f64>,
    q_star: DVector<f64>,
}

impl BaselineGains {
    pub fn new(kes: DMatrix<f64>, kdi: DMatrix<f64>, q_star: DVector<f64>) -> Result<Self> {
        require_spd("K_es", &kes)?;
        require_spd("K_di", &kdi)?;
        if kes.nrows() != q_star.len() || kdi.nrows() != q_star.len() {
            return Err(Error::Dimension {
                expected: q_star.len(),
                got: kes.nrows(),
            });
        }
        Ok(Self { kes, kdi, q_star })
    }

    pub fn diagonal(kes: &[f64], kdi: &[f64], q_star: DVector<f64>) -> Result<Self> {
        let diag = |v: &[f64]| DMatrix::from_diagonal(&DVector::from_row_slice(v));
        Self::new(diag(kes), diag(kdi), q_star)
    }

    pub fn kes(&self) -> &DMatrix<f64> {
        &self.kes
    }

    pub fn kdi(&self) -> &DMatrix<f64> {
        &self.kdi
    }

    pub fn q_star(&self) -> &DVector<f64> {
        &self.q_star
    }

    pub fn dof(&self) -> usize {
        self.q_star.len()
    }
}

/// Closed-loop coordinates `q̄ = q − q⋆`, `p̄ = p + K_p q̄`, `z̄ = z + d_m`.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedState {
    pub q_bar: DVector<f64>,
    pub p_bar: DVector<f64>,
    pub z_bar: DVector<f64>,
}

impl AugmentedState {
    pub fn zeros(n: usize) -> Self {
        Self {
            q_bar: DVector::zeros(n),
            p_bar: DVector::zeros(n),
            z_bar: DVector::zeros(n),
        }
    }

    pub fn dof(&self) -> usize {
        self.q_bar.len()
    }

    /// Flatten to `col(q̄, p̄, z̄)`.
    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.dof();
        let mut v = DVector::zeros(3 * n);
        v.rows_mut(0, n).copy_from(&self.q_bar);
        v.rows_mut(n, n).copy_from(&self.p_bar);
        v.rows_mut(2 * n, n).copy_from(&self.z_bar);
        v
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        let n = v.len() / 3;
        Self {
            q_bar: v.rows(0, n).into_owned(),
            p_bar: v.rows(n, n).into_owned(),
            z_bar: v.rows(2 * n, n).into_owned(),
        }
    }

    pub fn norm(&self) -> f64 {
        (self.q_bar.norm_squared() + self.p_bar.norm_squared() + self.z_bar.norm_squared()).sqrt()
    }
}

/// Closed-loop Hamiltonian
/// `H̄(x̄) = ½p̄ᵀM_d⁻¹p̄ + ½q̄ᵀK_p q̄ + ½z̄ᵀK_i⁻¹z̄`.
pub fn closed_loop_energy(gains: &ControllerGains, aug: &AugmentedState) -> f64 {
    0.5 * aug.p_bar.dot(&(gains.md_inv() * &aug.p_bar))
        + 0.5 * aug.q_bar.dot(&(gains.kp() * &aug.q_bar))
        + 0.5 * aug.z_bar.dot(&(gains.ki_inv() * &aug.z_bar))
}

/// Gradient of the closed-loop Hamiltonian,
/// `∇H̄ = col(K_p q̄, M_d⁻¹ p̄, K_i⁻¹ z̄)`.
pub fn closed_loop_energy_grad(gains: &ControllerGains, aug: &AugmentedState) -> DVector<f64> {
    let n = aug.dof();
    let mut g = DVector::zeros(3 * n);
    g.rows_mut(0, n).copy_from(&(gains.kp() * &aug.q_bar));
    g.rows_mut(n, n).copy_from(&(gains.md_inv() * &aug.p_bar));
    g.rows_mut(2 * n, n).copy_from(&(gains.ki_inv() * &aug.z_bar));
    g
}

/// The ε-scaled Lyapunov candidate
/// `S(x̄) = H̄(x̄) − ε ∇_p̄ᵀH̄ M_d ∇_z̄H̄ = H̄(x̄) − ε p̄ᵀK_i⁻¹z̄`.
pub fn lyapunov_candidate(gains: &ControllerGains, epsilon: f64, aug: &AugmentedState) -> f64 {
    closed_loop_energy(gains, aug) - epsilon * aug.p_bar.dot(&(gains.ki_inv() * &aug.z_bar))
}

/// Shaped output `ȳ = M_d⁻¹ p̄` with `p̄ = p + K_p(q − q⋆)`.
pub fn new_output(gains: &ControllerGains, x: &GeneralizedState) -> DVector<f64> {
    let q_bar = &x.q - gains.q_star();
    let p_bar = &x.p + gains.kp() * &q_bar;
    gains.md_inv() * p_bar
}

/// Integrator extension `ż = −K_i ȳ`; vanishes exactly at `(q⋆, 0)`.
pub fn integrator_rate(gains: &ControllerGains, x: &GeneralizedState) -> DVector<f64> {
    -(gains.ki() * new_output(gains, x))
}

/// The PBIC torque. Fails if `G(q)` is ill-conditioned, carrying the
/// condition number in the error.
pub fn pbic_control(
    model: &PlantModel,
    gains: &ControllerGains,
    x: &GeneralizedState,
    z: &DVector<f64>,
) -> Result<DVector<f64>> {
    let q_bar = &x.q - gains.q_star();
    let p_bar = &x.p + gains.kp() * &q_bar;
    let q_dot = model.velocity(x)?;
    let gamma = model.gamma(x)?;
    let kp_qbar = gains.kp() * &q_bar;

    // Bracket of the control law, term by term in the order of the law.
    let rhs = model.potential_grad(&x.q)
        - gains.md() * model.mass_solve(&x.q, &kp_qbar)?
        - gamma * &kp_qbar
        - gains.kp() * q_dot
        - gains.kd() * (gains.md_inv() * &p_bar)
        + z;

    let g = model.input_matrix(&x.q);
    let cond = linalg::cond_2(&g);
    if !cond.is_finite() || cond > model.input_cond_cap() {
        return Err(Error::IllConditionedInput {
            q: x.q.iter().copied().collect(),
            cond,
            cap: model.input_cond_cap(),
        });
    }
    let u = g.lu().solve(&rhs).ok_or(Error::IllConditionedInput {
        q: x.q.iter().copied().collect(),
        cond,
        cap: model.input_cond_cap(),
    })?;
    Ok(u)
}

/// The ES-DI baseline `u = −K_es(q − q⋆) − K_di q̇`. No gravity compensation:
/// a disturbed or gravity-loaded plant settles with a steady-state offset.
pub fn esdi_control(
    model: &PlantModel,
    gains: &BaselineGains,
    x: &GeneralizedState,
) -> Result<DVector<f64>> {
    let q_dot = model.velocity(x)?;
    Ok(-(gains.kes() * (&x.q - gains.q_star())) - gains.kdi() * q_dot)
}

/// Map plant coordinates into the augmented closed-loop coordinates.
/// `d_m` is the (simulator-known) matched disturbance absorbed into `z̄`.
pub fn to_augmented(
    x: &GeneralizedState,
    z: &DVector<f64>,
    gains: &ControllerGains,
    d_m: &DVector<f64>,
) -> AugmentedState {
    let q_bar = &x.q - gains.q_star();
    let p_bar = &x.p + gains.kp() * &q_bar;
    AugmentedState {
        q_bar,
        p_bar,
        z_bar: z + d_m,
    }
}

/// Inverse of [`to_augmented`].
pub fn from_augmented(
    aug: &AugmentedState,
    gains: &ControllerGains,
    d_m: &DVector<f64>,
) -> (GeneralizedState, DVector<f64>) {
    let q = &aug.q_bar + gains.q_star();
    let p = &aug.p_bar - gains.kp() * &aug.q_bar;
    let z = &aug.z_bar - d_m;
    (GeneralizedState { q, p }, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn case2_gains(q_star: DVector<f64>) -> ControllerGains {
        ControllerGains::diagonal(
            &[10.0, 7.5, 7.5],
            &[15.0, 10.0, 10.0],
            &[7.0, 5.0, 5.0],
            &[0.2, 0.2, 0.2],
            q_star,
        )
        .unwrap()
    }

    #[test]
    fn gains_must_be_spd() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let id = DMatrix::identity(2, 2);
        assert!(matches!(
            ControllerGains::new(bad, id.clone(), id.clone(), id, DVector::zeros(2)),
            Err(Error::InvalidGains { name: "K_p", .. })
        ));
    }

    #[test]
    fn pbic_is_gravity_compensation_at_equilibrium() {
        let model = models::build_surrogate_arm();
        let q_star = DVector::from_vec(vec![0.4, 1.2, -0.3]);
        let gains = case2_gains(q_star.clone());
        let x = GeneralizedState::new(q_star.clone(), DVector::zeros(3)).unwrap();
        let u = pbic_control(&model, &gains, &x, &DVector::zeros(3)).unwrap();
        let grad_v = model.potential_grad(&q_star);
        assert!((u - grad_v).amax() < 1e-14);
    }

    #[test]
    fn pbic_velocity_terms_for_point_mass() {
        // q = q⋆, z = 0, ∇V = 0, Γ = 0: u = −(1/m)K_p p − K_d M_d⁻¹ p.
        let m = 2.0;
        let model = models::build_point_mass(3, m).unwrap();
        let gains = case2_gains(DVector::from_vec(vec![0.1, -0.2, 0.3]));
        let p = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let x = GeneralizedState::new(gains.q_star().clone(), p.clone()).unwrap();
        let u = pbic_control(&model, &gains, &x, &DVector::zeros(3)).unwrap();
        let expected = -(gains.kp() * &p) / m - gains.kd() * (gains.md_inv() * &p);
        assert!((u - expected).amax() < 1e-13);
    }

    #[test]
    fn integrator_rate_scalar_arithmetic() {
        // n=1: K_i = 2, M_d = 0.5, K_p = 1, q − q⋆ = 1, p = 0 → ż = −4.
        let gains = ControllerGains::diagonal(&[1.0], &[2.0], &[1.0], &[0.5], DVector::zeros(1))
            .unwrap();
        let x = GeneralizedState::new(DVector::from_element(1, 1.0), DVector::zeros(1)).unwrap();
        let zdot = integrator_rate(&gains, &x);
        assert_relative_eq!(zdot[0], -4.0, epsilon = 1e-14);
    }

    #[test]
    fn integrator_rate_vanishes_at_target() {
        let gains = case2_gains(DVector::from_vec(vec![0.4, 1.2, -0.3]));
        let x = GeneralizedState::new(gains.q_star().clone(), DVector::zeros(3)).unwrap();
        assert_eq!(integrator_rate(&gains, &x), DVector::zeros(3));
    }

    #[test]
    fn integrator_rate_decomposes_through_new_output() {
        let gains = case2_gains(DVector::from_vec(vec![0.4, 1.2, -0.3]));
        let x = GeneralizedState::new(
            DVector::from_vec(vec![1.0, 0.5, -0.9]),
            DVector::from_vec(vec![0.3, -2.0, 1.2]),
        )
        .unwrap();
        let direct = integrator_rate(&gains, &x);
        let via_output = -(gains.ki() * new_output(&gains, &x));
        assert_eq!(direct, via_output);
    }

    #[test]
    fn esdi_scalar_arithmetic() {
        // K_es = 75, q − q⋆ = 0.1, p = 0 → u = −7.5.
        let model = models::build_point_mass(1, 1.0).unwrap();
        let gains = BaselineGains::diagonal(&[75.0], &[7.0], DVector::zeros(1)).unwrap();
        let x = GeneralizedState::new(DVector::from_element(1, 0.1), DVector::zeros(1)).unwrap();
        let u = esdi_control(&model, &gains, &x).unwrap();
        assert_relative_eq!(u[0], -7.5, epsilon = 1e-14);
    }

    #[test]
    fn esdi_vanishes_at_target_rest() {
        let model = models::build_surrogate_arm();
        let q_star = DVector::from_vec(vec![0.4, 1.2, -0.3]);
        let gains =
            BaselineGains::diagonal(&[75.0, 50.0, 50.0], &[7.0, 5.0, 5.0], q_star.clone()).unwrap();
        let x = GeneralizedState::new(q_star, DVector::zeros(3)).unwrap();
        assert_eq!(esdi_control(&model, &gains, &x).unwrap(), DVector::zeros(3));
    }

    #[test]
    fn shifted_equilibrium_maps_to_origin() {
        let gains = case2_gains(DVector::from_vec(vec![0.4, 1.2, -0.3]));
        let d_m = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let x = GeneralizedState::new(gains.q_star().clone(), DVector::zeros(3)).unwrap();
        let aug = to_augmented(&x, &(-d_m.clone()), &gains, &d_m);
        assert_eq!(aug, AugmentedState::zeros(3));
    }

    proptest! {
        #[test]
        fn augmented_round_trip(
            vals in proptest::collection::vec(-10.0f64..10.0, 9),
            dm in proptest::collection::vec(-3.0f64..3.0, 3),
        ) {
            let gains = case2_gains(DVector::from_vec(vec![0.4, 1.2, -0.3]));
            let d_m = DVector::from_row_slice(&dm);
            let x = GeneralizedState::new(
                DVector::from_row_slice(&vals[0..3]),
                DVector::from_row_slice(&vals[3..6]),
            ).unwrap();
            let z = DVector::from_row_slice(&vals[6..9]);
            let aug = to_augmented(&x, &z, &gains, &d_m);
            let (x2, z2) = from_augmented(&aug, &gains, &d_m);
            prop_assert!((x2.q - &x.q).amax() <= 1e-14);
            prop_assert!((x2.p - &x.p).amax() <= 1e-14);
            prop_assert!((z2 - &z).amax() <= 1e-14);
        }

        #[test]
        fn esdi_is_linear_in_error(offset in -1.0f64..1.0, scale in 0.25f64..4.0) {
            let model = models::build_point_mass(1, 1.0).unwrap();
            let gains = BaselineGains::diagonal(&[75.0], &[7.0], DVector::zeros(1)).unwrap();
            let x1 = GeneralizedState::new(
                DVector::from_element(1, offset),
                DVector::from_element(1, 0.5 * offset),
            ).unwrap();
            let x2 = GeneralizedState::new(&x1.q * scale, &x1.p * scale).unwrap();
            let u1 = esdi_control(&model, &gains, &x1).unwrap();
            let u2 = esdi_control(&model, &gains, &x2).unwrap();
            prop_assert!((u2 - &u1 * scale).amax() <= 1e-9 * (1.0 + u1.amax()));
        }
    }
}
