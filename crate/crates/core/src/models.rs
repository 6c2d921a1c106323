//! Concrete plant instances.
//!
//! Three models cover the test and regression needs:
//!
//! - **point mass** — constant mass matrix, zero potential; every gyroscopic
//!   quantity vanishes, which pins down the trivial cases exactly.
//! - **two-link arm** — planar elbow manipulator with uniform-rod links; the
//!   configuration-dependent inertia exercises nonzero `S_H`, `Ṁ`, `E`.
//! - **surrogate arm** — a three-joint roll–pitch–roll chain (shoulder roll
//!   `q₁`, elbow pitch `q₂`, elbow roll `q₃`) with `D = 0` and `G = I₃`,
//!   used by the case1/case2/case3 regression scenarios. Gravity acts only
//!   through the pitch joint. The default constants are fixed; see
//!   [`SurrogateArmParams`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::plant::PlantModel;
use crate::Result;

fn require_positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveParameter { name, value })
    }
}

/// Parameters for the n-dimensional point mass. `damping` is a viscous
/// coefficient `c` giving `D = c·Iₙ` (zero by default).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointMassParams {
    pub dof: usize,
    pub mass: f64,
    pub damping: f64,
}

impl Default for PointMassParams {
    fn default() -> Self {
        Self {
            dof: 3,
            mass: 1.0,
            damping: 0.0,
        }
    }
}

/// `M = mass·Iₙ`, `V = 0`, `G = Iₙ`; all mass partials vanish.
pub fn build_point_mass(dof: usize, mass: f64) -> Result<PlantModel> {
    build_point_mass_with(&PointMassParams {
        dof,
        mass,
        damping: 0.0,
    })
}

pub fn build_point_mass_with(params: &PointMassParams) -> Result<PlantModel> {
    if params.dof == 0 {
        return Err(Error::NonPositiveParameter {
            name: "dof",
            value: 0.0,
        });
    }
    require_positive("mass", params.mass)?;
    if params.damping < 0.0 {
        return Err(Error::NonPositiveParameter {
            name: "damping",
            value: params.damping,
        });
    }
    let n = params.dof;
    let mass = params.mass;
    let damping = params.damping;
    Ok(PlantModel::builder("point_mass", n)
        .mass(move |_q| DMatrix::identity(n, n) * mass)
        .mass_partials(move |_q| vec![DMatrix::zeros(n, n); n])
        .potential(|_q| 0.0)
        .potential_grad(move |_q| DVector::zeros(n))
        .damping(move |_q, _p| DMatrix::identity(n, n) * damping)
        .build())
}

/// Parameters for the planar two-link arm. Links are uniform rods: the center
/// of mass sits at `l/2` and the link inertia about its center is `m l²/12`.
/// Angles are measured from straight down.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoLinkParams {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub l2: f64,
    pub gravity: f64,
}

impl Default for TwoLinkParams {
    fn default() -> Self {
        Self {
            m1: 1.5,
            m2: 1.0,
            l1: 0.5,
            l2: 0.4,
            gravity: 9.81,
        }
    }
}

/// Standard planar elbow manipulator with cosine coupling in the off-diagonal
/// inertia term and gravity potential.
pub fn build_two_link(m1: f64, m2: f64, l1: f64, l2: f64, gravity: f64) -> Result<PlantModel> {
    build_two_link_with(&TwoLinkParams {
        m1,
        m2,
        l1,
        l2,
        gravity,
    })
}

pub fn build_two_link_with(params: &TwoLinkParams) -> Result<PlantModel> {
    require_positive("m1", params.m1)?;
    require_positive("m2", params.m2)?;
    require_positive("l1", params.l1)?;
    require_positive("l2", params.l2)?;
    if params.gravity < 0.0 || !params.gravity.is_finite() {
        return Err(Error::NonPositiveParameter {
            name: "gravity",
            value: params.gravity,
        });
    }
    let TwoLinkParams {
        m1,
        m2,
        l1,
        l2,
        gravity: g,
    } = *params;
    let (lc1, lc2) = (0.5 * l1, 0.5 * l2);
    let (i1, i2) = (m1 * l1 * l1 / 12.0, m2 * l2 * l2 / 12.0);
    // M(q) = [a + 2b·cos q₂, d + b·cos q₂; d + b·cos q₂, d]
    let a = i1 + i2 + m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2);
    let b = m2 * l1 * lc2;
    let d = i2 + m2 * lc2 * lc2;

    Ok(PlantModel::builder("two_link", 2)
        .mass(move |q| {
            let c2 = q[1].cos();
            DMatrix::from_row_slice(
                2,
                2,
                &[a + 2.0 * b * c2, d + b * c2, d + b * c2, d],
            )
        })
        .mass_partials(move |q| {
            let s2 = q[1].sin();
            vec![
                DMatrix::zeros(2, 2),
                DMatrix::from_row_slice(2, 2, &[-2.0 * b * s2, -b * s2, -b * s2, 0.0]),
            ]
        })
        .potential(move |q| {
            -(m1 * lc1 + m2 * l1) * g * q[0].cos() - m2 * lc2 * g * (q[0] + q[1]).cos()
        })
        .potential_grad(move |q| {
            let s1 = q[0].sin();
            let s12 = (q[0] + q[1]).sin();
            DVector::from_vec(vec![
                (m1 * lc1 + m2 * l1) * g * s1 + m2 * lc2 * g * s12,
                m2 * lc2 * g * s12,
            ])
        })
        .build())
}

/// Parameters of the three-joint roll–pitch–roll arm.
///
/// The kinetic energy is
/// `½[j₁q̇₁² + A(q̇₂² + sin²q₂·q̇₁²) + j₂q̇₂² + j₃(q̇₃ − cos q₂·q̇₁)²]`
/// with `A = m₂l₂² + m₃l₃²`: the shoulder roll `q₁` turns about the vertical
/// axis, the elbow pitch `q₂` swings the arm masses in a vertical plane
/// (`q₂ = 0` is straight down), and the forearm roll `q₃` spins rotor inertia
/// `j₃` about the arm axis, whose vertical projection couples it to `q₁` by
/// `−cos q₂`. The joint inertias `j₁, j₂, j₃` are rotor/gyration terms that
/// carry no gravity moment, so gravity enters only through the pitch masses:
/// `V = −(m₂l₂ + m₃l₃)·g·cos q₂`.
///
/// The defaults put every joint's effective inertia near the slow-mode
/// crossover of the case2/case3 gain sets (matching the regression scenarios)
/// while keeping the peak gravity torque below 10 N·m.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateArmParams {
    /// Shoulder-roll rotor inertia (kg·m²).
    pub j1: f64,
    /// Elbow-pitch rotor inertia (kg·m²).
    pub j2: f64,
    /// Forearm-roll rotor inertia (kg·m²).
    pub j3: f64,
    /// Upper-arm point mass (kg) at distance `l2` from the pitch axis.
    pub m2: f64,
    pub l2: f64,
    /// Forearm point mass (kg) on the roll axis at distance `l3`.
    pub m3: f64,
    pub l3: f64,
    pub gravity: f64,
}

impl Default for SurrogateArmParams {
    fn default() -> Self {
        Self {
            j1: 4.61,
            j2: 3.61,
            j3: 2.0,
            m2: 1.5,
            l2: 0.35,
            m3: 1.0,
            l3: 0.45,
            gravity: 9.81,
        }
    }
}

/// Surrogate three-DoF arm with the default constants, `D = 0₃ₓ₃`, `G = I₃`.
pub fn build_surrogate_arm() -> PlantModel {
    build_surrogate_arm_with(&SurrogateArmParams::default())
        .expect("default surrogate parameters are valid")
}

pub fn build_surrogate_arm_with(params: &SurrogateArmParams) -> Result<PlantModel> {
    require_positive("j1", params.j1)?;
    require_positive("j2", params.j2)?;
    require_positive("j3", params.j3)?;
    require_positive("m2", params.m2)?;
    require_positive("l2", params.l2)?;
    require_positive("m3", params.m3)?;
    require_positive("l3", params.l3)?;
    if params.gravity < 0.0 || !params.gravity.is_finite() {
        return Err(Error::NonPositiveParameter {
            name: "gravity",
            value: params.gravity,
        });
    }
    let SurrogateArmParams {
        j1,
        j2,
        j3,
        m2,
        l2,
        m3,
        l3,
        gravity: g,
    } = *params;
    let arm = m2 * l2 * l2 + m3 * l3 * l3;
    let grav = (m2 * l2 + m3 * l3) * g;

    Ok(PlantModel::builder("surrogate_arm", 3)
        .mass(move |q| {
            let (s, c) = q[1].sin_cos();
            let mut m = DMatrix::zeros(3, 3);
            m[(0, 0)] = j1 + arm * s * s + j3 * c * c;
            m[(0, 2)] = -j3 * c;
            m[(2, 0)] = -j3 * c;
            m[(1, 1)] = j2 + arm;
            m[(2, 2)] = j3;
            m
        })
        .mass_partials(move |q| {
            let (s, c) = q[1].sin_cos();
            let mut d2 = DMatrix::zeros(3, 3);
            d2[(0, 0)] = 2.0 * (arm - j3) * s * c;
            d2[(0, 2)] = j3 * s;
            d2[(2, 0)] = j3 * s;
            vec![DMatrix::zeros(3, 3), d2, DMatrix::zeros(3, 3)]
        })
        .potential(move |q| -grav * q[1].cos())
        .potential_grad(move |q| DVector::from_vec(vec![0.0, grav * q[1].sin(), 0.0]))
        .build())
}

/// Names of the catalog models with their default parameters, used by the
/// sweep-style tests.
pub fn catalog() -> Vec<PlantModel> {
    vec![
        build_point_mass_with(&PointMassParams::default()).expect("default point mass"),
        build_two_link_with(&TwoLinkParams::default()).expect("default two-link"),
        build_surrogate_arm(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{check_gyro_identity, GeneralizedState};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn random_state(rng: &mut ChaCha8Rng, n: usize) -> GeneralizedState {
        let q = DVector::from_fn(n, |_, _| rng.random_range(-PI..PI));
        let p = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
        GeneralizedState::new(q, p).unwrap()
    }

    #[test]
    fn point_mass_hamiltonian_is_half_norm_over_mass() {
        let model = build_point_mass(2, 1.0).unwrap();
        let x = GeneralizedState::new(DVector::zeros(2), DVector::from_vec(vec![3.0, 4.0])).unwrap();
        assert_relative_eq!(model.hamiltonian(&x).unwrap(), 12.5, epsilon = 1e-15);
    }

    #[test]
    fn point_mass_rejects_bad_parameters() {
        assert!(build_point_mass(2, 0.0).is_err());
        assert!(build_point_mass(2, -1.0).is_err());
        assert!(build_point_mass(0, 1.0).is_err());
    }

    #[test]
    fn two_link_rejects_bad_parameters() {
        assert!(build_two_link(0.0, 1.0, 1.0, 1.0, 9.81).is_err());
        assert!(build_two_link(1.0, 1.0, -0.5, 1.0, 9.81).is_err());
    }

    #[test]
    fn two_link_decouples_at_right_angle() {
        // cos(π/2) = 0 kills the coupling contribution: M₁₂ = d exactly.
        let p = TwoLinkParams::default();
        let model = build_two_link_with(&p).unwrap();
        let m = model.mass_matrix(&DVector::from_vec(vec![0.3, FRAC_PI_2]));
        let lc2 = 0.5 * p.l2;
        let d = p.m2 * p.l2 * p.l2 / 12.0 + p.m2 * lc2 * lc2;
        assert_relative_eq!(m[(0, 1)], d, epsilon = 1e-14);
        assert_relative_eq!(m[(1, 0)], d, epsilon = 1e-14);
    }

    #[test]
    fn two_link_matches_energy_assembled_inertia() {
        // Independent route: assemble M from per-link Jacobians,
        // M = Σ mᵢ Jᵥᵢᵀ Jᵥᵢ + Iᵢ Jωᵢᵀ Jωᵢ.
        let p = TwoLinkParams::default();
        let model = build_two_link_with(&p).unwrap();
        let (lc1, lc2) = (0.5 * p.l1, 0.5 * p.l2);
        let (i1, i2) = (p.m1 * p.l1 * p.l1 / 12.0, p.m2 * p.l2 * p.l2 / 12.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let q1: f64 = rng.random_range(-PI..PI);
            let q2: f64 = rng.random_range(-PI..PI);
            let jv1 = DMatrix::from_row_slice(2, 2, &[lc1 * q1.cos(), 0.0, lc1 * q1.sin(), 0.0]);
            let jv2 = DMatrix::from_row_slice(
                2,
                2,
                &[
                    p.l1 * q1.cos() + lc2 * (q1 + q2).cos(),
                    lc2 * (q1 + q2).cos(),
                    p.l1 * q1.sin() + lc2 * (q1 + q2).sin(),
                    lc2 * (q1 + q2).sin(),
                ],
            );
            let jw1 = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
            let jw2 = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
            let assembled = jv1.transpose() * &jv1 * p.m1
                + jv2.transpose() * &jv2 * p.m2
                + jw1.transpose() * &jw1 * i1
                + jw2.transpose() * &jw2 * i2;
            let m = model.mass_matrix(&DVector::from_vec(vec![q1, q2]));
            assert!((m - assembled).norm() < 1e-12);
        }
    }

    #[test]
    fn two_link_energy_matches_velocity_form() {
        // H = ½pᵀM⁻¹p + V must equal ½q̇ᵀMq̇ + V with q̇ = M⁻¹p.
        let model = build_two_link_with(&TwoLinkParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let x = random_state(&mut rng, 2);
            let v = model.velocity(&x).unwrap();
            let m = model.mass_matrix(&x.q);
            let lagrangian_energy = 0.5 * v.dot(&(&m * &v)) + model.potential(&x.q);
            assert_relative_eq!(
                model.hamiltonian(&x).unwrap(),
                lagrangian_energy,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn two_link_gyro_identity_holds() {
        let model = build_two_link_with(&TwoLinkParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = random_state(&mut rng, 2);
            assert!(check_gyro_identity(&model, &x).unwrap() <= 1e-6);
        }
    }

    #[test]
    fn surrogate_arm_gravity_vanishes_hanging_down() {
        let model = build_surrogate_arm();
        let grad = model.potential_grad(&DVector::from_vec(vec![0.7, 0.0, -0.2]));
        assert_eq!(grad, DVector::zeros(3));
    }

    #[test]
    fn surrogate_arm_gyro_vanishes_at_rest() {
        let model = build_surrogate_arm();
        let x = GeneralizedState::new(
            DVector::from_vec(vec![0.3, 1.1, -0.8]),
            DVector::zeros(3),
        )
        .unwrap();
        assert_eq!(model.gyro_matrix(&x).unwrap(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn catalog_models_pass_invariants_at_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for model in catalog() {
            let n = model.dof();
            for _ in 0..1000 {
                let x = random_state(&mut rng, n);
                model.validate_at(&x.q).unwrap();
            }
        }
    }

    #[test]
    fn catalog_skew_symmetry_and_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for model in catalog() {
            let n = model.dof();
            for _ in 0..200 {
                let x = random_state(&mut rng, n);
                let s = model.gyro_matrix(&x).unwrap();
                assert!((&s + s.transpose()).amax() <= model.partials_source().skew_tolerance());
                // Linearity in p: doubling p must double S_H bit-exactly
                // (power-of-two scaling commutes with the linear solve).
                let x2 = GeneralizedState::new(x.q.clone(), &x.p * 2.0).unwrap();
                let s2 = model.gyro_matrix(&x2).unwrap();
                assert_eq!(s2, s * 2.0);
            }
        }
    }

    #[test]
    fn catalog_mdot_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for model in catalog() {
            let n = model.dof();
            for _ in 0..200 {
                let x = random_state(&mut rng, n);
                let mdot = model.mdot_matrix(&x).unwrap();
                assert!(crate::linalg::max_asymmetry(&mdot) <= 1e-12);
            }
        }
    }

    #[test]
    fn corrupted_partials_trip_the_identity_check() {
        // Flip the sign of one partial entry; the residual must blow past 1e-2.
        let p = TwoLinkParams::default();
        let lc2 = 0.5 * p.l2;
        let b = p.m2 * p.l1 * lc2;
        let good = build_two_link_with(&p).unwrap();
        let corrupted = PlantModel::builder("two_link_corrupted", 2)
            .mass({
                let good = good.clone();
                move |q| good.mass_matrix(q)
            })
            .mass_partials(move |q| {
                let s2 = q[1].sin();
                vec![
                    DMatrix::zeros(2, 2),
                    // (0,0) entry sign flipped.
                    DMatrix::from_row_slice(2, 2, &[2.0 * b * s2, -b * s2, -b * s2, 0.0]),
                ]
            })
            .build();
        let x = GeneralizedState::new(
            DVector::from_vec(vec![0.4, 1.1]),
            DVector::from_vec(vec![2.0, -1.5]),
        )
        .unwrap();
        assert!(check_gyro_identity(&corrupted, &x).unwrap() > 1e-2);
        assert!(check_gyro_identity(&good, &x).unwrap() <= 1e-6);
    }
}
