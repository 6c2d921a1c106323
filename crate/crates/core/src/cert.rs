//! Numerical stability certificates for the PBIC closed loop.
//!
//! Everything here is sampling-based and region-scoped: a certificate is
//! issued over a declared compact box in the augmented coordinates, sampled
//! deterministically from a seed. The pieces:
//!
//! - the damping condition `½(ΓM_d + M_dΓᵀ) + K_d ⪰ 0`,
//! - the Hamiltonian eigenvalue bounds `β_min, β_max` (taken on `M_d⁻¹`,
//!   `K_p`, `K_i⁻¹`, the quadratic-form matrices of `H̄`),
//! - the ε-scaled Lyapunov candidate `S = H̄ − ε p̄ᵀK_i⁻¹z̄` with its sandwich
//!   constants `κ₁, κ₂` and the feasibility search for ε,
//! - the dissipation matrix `Υ` with `Ṡ = −∇H̄ᵀ Υ ∇H̄`, its sampled minimum
//!   eigenvalue `μ`, and the decay-rate / overshoot / gain-margin numbers
//!   derived from it,
//! - trajectory-level verification: the exponential decay envelope, the
//!   output overshoot bound, and the finite-difference dissipation audit.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{
    self, from_augmented, AugmentedState, ControllerGains,
};
use crate::error::Error;
use crate::linalg;
use crate::plant::{GeneralizedState, PlantModel};
use crate::sim::Trajectory;
use crate::Result;

/// Positive-semidefiniteness tolerance on minimum eigenvalues.
pub const PSD_TOL: f64 = -1e-10;
/// Strict-positivity threshold used inside the ε feasibility test.
pub const PD_THRESHOLD: f64 = 1e-10;

// ---------------------------------------------------------------------------
// Region
// ---------------------------------------------------------------------------

/// Axis-aligned sampling box in augmented coordinates, centered at the
/// origin (the shifted equilibrium).
#[derive(Clone, Debug, PartialEq)]
pub struct RegionBox {
    pub q_half: DVector<f64>,
    pub p_half: DVector<f64>,
    pub z_half: DVector<f64>,
}

/// Serializable summary of a [`RegionBox`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegionDescription {
    pub q_half: Vec<f64>,
    pub p_half: Vec<f64>,
    pub z_half: Vec<f64>,
}

impl RegionBox {
    pub fn new(q_half: DVector<f64>, p_half: DVector<f64>, z_half: DVector<f64>) -> Self {
        Self {
            q_half,
            p_half,
            z_half,
        }
    }

    /// Uniform half-widths per block.
    pub fn uniform(n: usize, q_half: f64, p_half: f64, z_half: f64) -> Self {
        Self {
            q_half: DVector::from_element(n, q_half),
            p_half: DVector::from_element(n, p_half),
            z_half: DVector::from_element(n, z_half),
        }
    }

    /// The outer box of the `H̄ ≤ h` sublevel set, inflated by `inflation`
    /// (1.2 = 20%). Block-wise: `‖q̄‖ ≤ √(2h/λ_min(K_p))`,
    /// `‖p̄‖ ≤ √(2h·λ_max(M_d))`, `‖z̄‖ ≤ √(2h·λ_max(K_i))`.
    pub fn from_energy_level(gains: &ControllerGains, h: f64, inflation: f64) -> Self {
        let n = gains.dof();
        let (kp_lo, _) = linalg::eig_range_sym(gains.kp());
        let (_, md_hi) = linalg::eig_range_sym(gains.md());
        let (_, ki_hi) = linalg::eig_range_sym(gains.ki());
        let h = h.max(0.0);
        Self::uniform(
            n,
            inflation * (2.0 * h / kp_lo).sqrt(),
            inflation * (2.0 * h * md_hi).sqrt(),
            inflation * (2.0 * h * ki_hi).sqrt(),
        )
    }

    pub fn dof(&self) -> usize {
        self.q_half.len()
    }

    pub fn contains(&self, aug: &AugmentedState) -> bool {
        let inside = |v: &DVector<f64>, half: &DVector<f64>| {
            v.iter().zip(half.iter()).all(|(x, h)| x.abs() <= *h)
        };
        inside(&aug.q_bar, &self.q_half)
            && inside(&aug.p_bar, &self.p_half)
            && inside(&aug.z_bar, &self.z_half)
    }

    fn half_widths_flat(&self) -> DVector<f64> {
        let n = self.dof();
        let mut v = DVector::zeros(3 * n);
        v.rows_mut(0, n).copy_from(&self.q_half);
        v.rows_mut(n, n).copy_from(&self.p_half);
        v.rows_mut(2 * n, n).copy_from(&self.z_half);
        v
    }

    /// Latin-hypercube sample of the box: each of the `3n` coordinates is
    /// stratified into `count` bins with one point per bin, bins permuted
    /// independently per coordinate. Deterministic in `seed`.
    pub fn sample_lhs(&self, count: usize, seed: u64) -> Vec<AugmentedState> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = self.half_widths_flat();
        let dims = half.len();
        let mut bins: Vec<Vec<usize>> = (0..dims)
            .map(|_| {
                let mut idx: Vec<usize> = (0..count).collect();
                // Fisher–Yates
                for i in (1..count).rev() {
                    let j = rng.random_range(0..=i);
                    idx.swap(i, j);
                }
                idx
            })
            .collect();
        let mut out = Vec::with_capacity(count);
        for k in 0..count {
            let mut v = DVector::zeros(dims);
            for (d, bin) in bins.iter_mut().enumerate() {
                let u: f64 = rng.random_range(0.0..1.0);
                let frac = (bin[k] as f64 + u) / count as f64;
                v[d] = (2.0 * frac - 1.0) * half[d];
            }
            out.push(AugmentedState::from_vector(&v));
        }
        out
    }

    /// Plain uniform sample of the box, deterministic in `seed`.
    pub fn sample_uniform(&self, count: usize, seed: u64) -> Vec<AugmentedState> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = self.half_widths_flat();
        let dims = half.len();
        (0..count)
            .map(|_| {
                let mut v = DVector::zeros(dims);
                for d in 0..dims {
                    v[d] = rng.random_range(-1.0..1.0) * half[d];
                }
                AugmentedState::from_vector(&v)
            })
            .collect()
    }

    pub fn description(&self) -> RegionDescription {
        RegionDescription {
            q_half: self.q_half.iter().copied().collect(),
            p_half: self.p_half.iter().copied().collect(),
            z_half: self.z_half.iter().copied().collect(),
        }
    }

    /// Plant-coordinate state corresponding to a region sample
    /// (`q = q̄ + q⋆`, `p = p̄ − K_p q̄`).
    pub fn plant_state(aug: &AugmentedState, gains: &ControllerGains) -> GeneralizedState {
        let zero = DVector::zeros(aug.dof());
        let (x, _z) = from_augmented(aug, gains, &zero);
        x
    }
}

// ---------------------------------------------------------------------------
// Pointwise certificate quantities
// ---------------------------------------------------------------------------

/// The damping condition `½(Γ(x)M_d + M_dΓᵀ(x)) + K_d ⪰ 0` at one state.
/// Returns the verdict (tolerance −1e-10 on the minimum eigenvalue) and the
/// minimum eigenvalue itself.
pub fn check_damping_condition(
    model: &PlantModel,
    gains: &ControllerGains,
    x: &GeneralizedState,
) -> Result<(bool, f64)> {
    let gamma = model.gamma(x)?;
    let gm = &gamma * gains.md();
    let condition = linalg::sym_part(&gm) * 2.0 * 0.5 + gains.kd();
    let min_eig = linalg::min_eig_sym(&condition);
    Ok((min_eig >= PSD_TOL, min_eig))
}

/// Worst case of the damping condition over region samples. Returns
/// `(all_hold, worst_min_eig, witness)` where the witness is the sample
/// attaining the worst eigenvalue.
pub fn damping_condition_over(
    model: &PlantModel,
    gains: &ControllerGains,
    samples: &[AugmentedState],
) -> Result<(bool, f64, Option<AugmentedState>)> {
    let mut worst = f64::INFINITY;
    let mut witness = None;
    for aug in samples {
        let x = RegionBox::plant_state(aug, gains);
        let (_, eig) = check_damping_condition(model, gains, &x)?;
        if eig < worst {
            worst = eig;
            witness = Some(aug.clone());
        }
    }
    Ok((worst >= PSD_TOL, worst, witness))
}

/// Eigenvalue bounds of the closed-loop Hamiltonian's quadratic form:
/// `β_min = min{λ_min(M_d⁻¹), λ_min(K_p), λ_min(K_i⁻¹)}` and
/// `β_max = max{λ_max(M_d⁻¹), λ_max(K_p), λ_max(K_i⁻¹)}`, computed from the
/// eigenvalues of `M_d` and `K_i` themselves (λ(A⁻¹) = 1/λ(A)).
pub fn beta_bounds(gains: &ControllerGains) -> (f64, f64) {
    let (kp_lo, kp_hi) = linalg::eig_range_sym(gains.kp());
    let (md_lo, md_hi) = linalg::eig_range_sym(gains.md());
    let (ki_lo, ki_hi) = linalg::eig_range_sym(gains.ki());
    let beta_min = (1.0 / md_hi).min(kp_lo).min(1.0 / ki_hi);
    let beta_max = (1.0 / md_lo).max(kp_hi).max(1.0 / ki_lo);
    (beta_min, beta_max)
}

/// Sandwich constants of the Lyapunov candidate:
/// `κ₁ = (β_min − εβ_max²λ_max(M_d))/2`, `κ₂ = (β_max + εβ_max²λ_max(M_d))/2`.
/// `κ₁ ≤ 0` means ε is too large for a valid certificate.
pub fn kappas(gains: &ControllerGains, epsilon: f64) -> (f64, f64) {
    let (beta_min, beta_max) = beta_bounds(gains);
    let (_, md_hi) = linalg::eig_range_sym(gains.md());
    let shift = epsilon * beta_max * beta_max * md_hi;
    ((beta_min - shift) / 2.0, (beta_max + shift) / 2.0)
}

/// The dissipation matrix `Υ(x̄; ε)` of `Ṡ = −∇H̄ᵀ Υ ∇H̄`, assembled
/// symmetric:
///
/// ```text
/// Υ = [ M̄⁻¹        0          −(ε/2)M̄⁻¹M_d       ]
///     [ 0          υ₂₂        −(ε/2)(Γ̄M_d + K_d)ᵀ ]
///     [ ·ᵀ          ·ᵀ          εK_i               ]
/// υ₂₂ = K_d + ½(Γ̄M_d + M_dΓ̄ᵀ) − εM_d
/// ```
///
/// with `M̄ = M(q̄ + q⋆)` and `Γ̄(q̄, p̄) = Γ(q̄ + q⋆, p̄ − K_p q̄)`. The `−εM_d`
/// term in `υ₂₂` is what the time derivative of
/// `S = H̄ − εp̄ᵀK_i⁻¹z̄` along the closed loop produces
/// (`d/dt[p̄ᵀK_i⁻¹z̄]` contributes `−p̄ᵀM_d⁻¹p̄ = −∇_p̄H̄ᵀM_d∇_p̄H̄`); the
/// finite-difference dissipation audit checks this block algebra end to end.
pub fn upsilon(
    model: &PlantModel,
    gains: &ControllerGains,
    epsilon: f64,
    aug: &AugmentedState,
) -> Result<DMatrix<f64>> {
    let n = gains.dof();
    let x = RegionBox::plant_state(aug, gains);
    let m = model.mass_matrix(&x.q);
    let m_inv = m
        .cholesky()
        .ok_or_else(|| Error::InvalidMass {
            q: x.q.iter().copied().collect(),
            reason: "Cholesky factorization failed (not positive definite)".into(),
        })?
        .inverse();
    let gamma_bar = model.gamma(&x)?;

    let gm = &gamma_bar * gains.md();
    let u22 = gains.kd() + linalg::sym_part(&gm) - gains.md() * epsilon;
    let u_qz = &m_inv * gains.md() * (-epsilon / 2.0);
    let u_pz = (&gm + gains.kd()).transpose() * (-epsilon / 2.0);
    let u33 = gains.ki() * epsilon;

    let mut ups = DMatrix::zeros(3 * n, 3 * n);
    ups.view_mut((0, 0), (n, n)).copy_from(&m_inv);
    ups.view_mut((n, n), (n, n)).copy_from(&u22);
    ups.view_mut((2 * n, 2 * n), (n, n)).copy_from(&u33);
    ups.view_mut((0, 2 * n), (n, n)).copy_from(&u_qz);
    ups.view_mut((2 * n, 0), (n, n)).copy_from(&u_qz.transpose());
    ups.view_mut((n, 2 * n), (n, n)).copy_from(&u_pz);
    ups.view_mut((2 * n, n), (n, n)).copy_from(&u_pz.transpose());
    // The q̄/p̄ off-diagonal block of the quadratic form is zero.
    Ok(linalg::sym_part(&ups))
}

/// Positive-definiteness of `Υ` at one sample via the Schur test:
/// `Υ₁₁ ≻ 0` and `Υ₃₃ − Υ₁₂ᵀΥ₁₁⁻¹Υ₁₂ ≻ 0`, both with minimum eigenvalue
/// above [`PD_THRESHOLD`]. Returns the smaller of the two margins.
pub fn upsilon_schur_margin(
    model: &PlantModel,
    gains: &ControllerGains,
    epsilon: f64,
    aug: &AugmentedState,
) -> Result<f64> {
    let n = gains.dof();
    let ups = upsilon(model, gains, epsilon, aug)?;
    let u11 = ups.view((0, 0), (2 * n, 2 * n)).into_owned();
    let u12 = ups.view((0, 2 * n), (2 * n, n)).into_owned();
    let u33 = ups.view((2 * n, 2 * n), (n, n)).into_owned();
    let eig11 = linalg::min_eig_sym(&u11);
    if eig11 <= PD_THRESHOLD {
        return Ok(eig11);
    }
    let chol = match u11.cholesky() {
        Some(c) => c,
        None => return Ok(f64::NEG_INFINITY),
    };
    let schur = &u33 - u12.transpose() * chol.solve(&u12);
    let eig_schur = linalg::min_eig_sym(&schur);
    Ok(eig11.min(eig_schur))
}

/// Outcome of the ε feasibility search.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpsilonSelection {
    pub epsilon: f64,
    /// The κ₁ > 0 root `β_min/(β_max²λ_max(M_d))` capping the search.
    pub cap: f64,
}

/// Largest ε in `(0, ε_cap]` such that κ₁(ε) > 0 and `Υ(x̄; ε) ≻ 0` at every
/// sample, found by bisection to 1e-6 relative. The feasible set is an
/// interval (λ_min of an affine matrix family is concave in ε), so bisection
/// against the upper boundary is sound.
pub fn select_epsilon(
    model: &PlantModel,
    gains: &ControllerGains,
    samples: &[AugmentedState],
) -> Result<EpsilonSelection> {
    let (beta_min, beta_max) = beta_bounds(gains);
    let (_, md_hi) = linalg::eig_range_sym(gains.md());
    let cap = beta_min / (beta_max * beta_max * md_hi);

    let feasible = |eps: f64| -> Result<std::result::Result<(), String>> {
        let (k1, _) = kappas(gains, eps);
        if k1 <= 0.0 {
            return Ok(Err(format!("kappa1 = {k1:.3e} not positive at eps = {eps:.6e}")));
        }
        for (idx, aug) in samples.iter().enumerate() {
            let margin = upsilon_schur_margin(model, gains, eps, aug)?;
            if margin <= PD_THRESHOLD {
                return Ok(Err(format!(
                    "Upsilon minimum eigenvalue margin {margin:.3e} at sample {idx} (x̄ = {:?}) for eps = {eps:.6e}",
                    aug.to_vector().iter().copied().collect::<Vec<_>>()
                )));
            }
        }
        Ok(Ok(()))
    };

    // Scan down from the cap for a feasible lower bracket.
    let mut hi = cap;
    let mut lo = cap * 0.5;
    loop {
        match feasible(lo)? {
            Ok(()) => break,
            Err(witness) => {
                hi = lo;
                lo *= 0.5;
                if lo < 1e-18 * cap {
                    return Err(Error::EpsilonInfeasible { witness });
                }
            }
        }
    }
    // Bisect the feasibility boundary in (lo, hi].
    while (hi - lo) / lo > 1e-6 {
        let mid = 0.5 * (hi + lo);
        match feasible(mid)? {
            Ok(()) => lo = mid,
            Err(_) => hi = mid,
        }
    }
    Ok(EpsilonSelection { epsilon: lo, cap })
}

/// Empirical check of the sandwich `κ₁‖x̄‖² ≤ S(x̄) ≤ κ₂‖x̄‖²` on uniform
/// random samples of the region.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SandwichReport {
    pub samples: usize,
    pub violations: usize,
    /// Smallest value of `S − κ₁‖x̄‖²` (≥ 0 when the lower bound holds).
    pub worst_lower_margin: f64,
    /// Smallest value of `κ₂‖x̄‖² − S` (≥ 0 when the upper bound holds).
    pub worst_upper_margin: f64,
}

pub fn sandwich_check(
    gains: &ControllerGains,
    epsilon: f64,
    region: &RegionBox,
    count: usize,
    seed: u64,
) -> SandwichReport {
    let (k1, k2) = kappas(gains, epsilon);
    let mut violations = 0;
    let mut worst_lo = f64::INFINITY;
    let mut worst_hi = f64::INFINITY;
    for aug in region.sample_uniform(count, seed) {
        let s = control::lyapunov_candidate(gains, epsilon, &aug);
        let nsq = aug.norm().powi(2);
        let slack = 1e-12 * nsq.max(1.0);
        let lo_margin = s - k1 * nsq;
        let hi_margin = k2 * nsq - s;
        if lo_margin < -slack || hi_margin < -slack {
            violations += 1;
        }
        worst_lo = worst_lo.min(lo_margin);
        worst_hi = worst_hi.min(hi_margin);
    }
    SandwichReport {
        samples: count,
        violations,
        worst_lower_margin: worst_lo,
        worst_upper_margin: worst_hi,
    }
}

/// Sampled minimum eigenvalue of `Υ` over the region (plus any extra states,
/// typically the reenactment trajectory).
#[derive(Clone, Debug)]
pub struct MuEstimate {
    pub mu: f64,
    pub argmin: AugmentedState,
}

pub fn mu_estimate(
    model: &PlantModel,
    gains: &ControllerGains,
    epsilon: f64,
    samples: &[AugmentedState],
    extra_states: &[AugmentedState],
) -> Result<MuEstimate> {
    let mut mu = f64::INFINITY;
    let mut argmin = None;
    for aug in samples.iter().chain(extra_states.iter()) {
        let ups = upsilon(model, gains, epsilon, aug)?;
        let eig = linalg::min_eig_sym(&ups);
        if eig < mu {
            mu = eig;
            argmin = Some(aug.clone());
        }
    }
    let argmin = argmin.ok_or_else(|| Error::CertificateInvalid("no samples for mu".into()))?;
    if mu <= 0.0 {
        return Err(Error::CertificateInvalid(format!(
            "mu = {mu:.3e} is not positive (argmin x̄ = {:?})",
            argmin.to_vector().iter().copied().collect::<Vec<_>>()
        )));
    }
    Ok(MuEstimate { mu, argmin })
}

/// Decay-rate upper bounds. The matched-case denominator uses
/// `λ_max(M_d⁻¹)` and the unmatched one `λ_max(M_d)`; the two source
/// formulas genuinely differ and both values are reported.
pub fn rate_bounds(
    mu: f64,
    beta_max: f64,
    epsilon: f64,
    md: &DMatrix<f64>,
    theta: f64,
) -> (f64, f64) {
    let (md_lo, md_hi) = linalg::eig_range_sym(md);
    let matched = mu * beta_max / (1.0 + epsilon * beta_max * (1.0 / md_lo));
    let unmatched = mu * beta_max * (1.0 - theta) / (1.0 + epsilon * beta_max * md_hi);
    (matched, unmatched)
}

/// Output overshoot bound `ξ = λ_max(M_d⁻¹)·√(κ₂/κ₁)·‖x̄₀‖`.
pub fn overshoot_bound(kappa1: f64, kappa2: f64, md: &DMatrix<f64>, x0_norm: f64) -> f64 {
    let (md_lo, _) = linalg::eig_range_sym(md);
    (1.0 / md_lo) * (kappa2 / kappa1).sqrt() * x0_norm
}

/// ISS gain margin `g_m = μβ_max²θ/λ_max(K_p)`.
pub fn gain_margin(mu: f64, beta_max: f64, theta: f64, kp: &DMatrix<f64>) -> f64 {
    let (_, kp_hi) = linalg::eig_range_sym(kp);
    mu * beta_max * beta_max * theta / kp_hi
}

/// Radius of the ultimate ball `‖x̄‖ = ‖d_u‖/g_m`.
pub fn iss_ball_radius(gain_margin: f64, d_u: &DVector<f64>) -> f64 {
    d_u.norm() / gain_margin
}

// ---------------------------------------------------------------------------
// Certificate
// ---------------------------------------------------------------------------

/// Per-condition outcomes backing a certificate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertificateValidity {
    pub damping_condition: bool,
    pub damping_min_eig: f64,
    pub kappa1_positive: bool,
    pub mu_positive: bool,
    pub sandwich_violations: usize,
    pub valid: bool,
}

/// A region-scoped stability certificate: every tuning quantity of the
/// matched and unmatched analyses, with the sampling inputs that produced it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Certificate {
    pub theta: f64,
    pub epsilon: f64,
    pub epsilon_cap: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub mu: f64,
    pub mu_argmin: Vec<f64>,
    pub rate_bound_matched: f64,
    pub rate_bound_unmatched: f64,
    pub overshoot_xi: f64,
    pub initial_xbar_norm: f64,
    pub gain_margin: f64,
    pub iss_radius: Option<f64>,
    pub region: RegionDescription,
    pub region_samples: usize,
    pub seed: u64,
    pub validity: CertificateValidity,
}

/// Issue a certificate for `gains` on `model` over `region`, scaled to the
/// initial condition `x̄₀`. `extra_states` (typically a simulated trajectory)
/// are included in the μ minimization. Fails with
/// [`Error::EpsilonInfeasible`] when no ε works, carrying the witness.
#[allow(clippy::too_many_arguments)]
pub fn certify(
    model: &PlantModel,
    gains: &ControllerGains,
    region: &RegionBox,
    x0: &AugmentedState,
    d_u: Option<&DVector<f64>>,
    theta: f64,
    n_samples: usize,
    seed: u64,
    extra_states: &[AugmentedState],
) -> Result<Certificate> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidScenario(format!(
            "theta must lie in (0,1), got {theta}"
        )));
    }
    let samples = region.sample_lhs(n_samples, seed);
    let (damping_ok, damping_min_eig, damping_witness) =
        damping_condition_over(model, gains, &samples)?;
    if !damping_ok {
        return Err(Error::EpsilonInfeasible {
            witness: format!(
                "damping condition fails: min eigenvalue {damping_min_eig:.3e} at x̄ = {:?}",
                damping_witness
                    .map(|w| w.to_vector().iter().copied().collect::<Vec<_>>())
                    .unwrap_or_default()
            ),
        });
    }
    let selection = select_epsilon(model, gains, &samples)?;
    let epsilon = selection.epsilon;
    let (beta_min, beta_max) = beta_bounds(gains);
    let (kappa1, kappa2) = kappas(gains, epsilon);
    let mu_est = mu_estimate(model, gains, epsilon, &samples, extra_states)?;
    let (rate_m, rate_u) = rate_bounds(mu_est.mu, beta_max, epsilon, gains.md(), theta);
    let x0_norm = x0.norm();
    let xi = overshoot_bound(kappa1, kappa2, gains.md(), x0_norm);
    let gm = gain_margin(mu_est.mu, beta_max, theta, gains.kp());
    let iss_radius = d_u
        .filter(|d| d.norm() > 0.0)
        .map(|d| iss_ball_radius(gm, d));
    let sandwich = sandwich_check(gains, epsilon, region, n_samples, seed.wrapping_add(1));

    let validity = CertificateValidity {
        damping_condition: damping_ok,
        damping_min_eig,
        kappa1_positive: kappa1 > 0.0,
        mu_positive: mu_est.mu > 0.0,
        sandwich_violations: sandwich.violations,
        valid: damping_ok && kappa1 > 0.0 && mu_est.mu > 0.0 && sandwich.violations == 0,
    };

    Ok(Certificate {
        theta,
        epsilon,
        epsilon_cap: selection.cap,
        beta_min,
        beta_max,
        kappa1,
        kappa2,
        mu: mu_est.mu,
        mu_argmin: mu_est.argmin.to_vector().iter().copied().collect(),
        rate_bound_matched: rate_m,
        rate_bound_unmatched: rate_u,
        overshoot_xi: xi,
        initial_xbar_norm: x0_norm,
        gain_margin: gm,
        iss_radius,
        region: region.description(),
        region_samples: n_samples,
        seed,
        validity,
    })
}

// ---------------------------------------------------------------------------
// Trajectory-level verification
// ---------------------------------------------------------------------------

/// Result of checking a trajectory against the decay envelope
/// `‖x̄(t)‖ ≤ √(κ₂/κ₁)‖x̄₀‖·e^{−rate·t}` and the overshoot bound `‖ȳ‖ ≤ ξ`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvelopeReport {
    /// Envelope and overshoot both hold and the trajectory stayed in region.
    pub passed: bool,
    /// Time of the first envelope violation, if any.
    pub first_violation: Option<f64>,
    /// Largest ratio `‖x̄(t)‖ / envelope(t)` over the run (≤ 1 + slack when
    /// the envelope holds).
    pub worst_ratio: f64,
    /// First time the trajectory left the certified region; a region exit
    /// invalidates the envelope check rather than failing it.
    pub region_exit: Option<f64>,
    pub envelope_rate: f64,
    pub envelope_prefactor: f64,
    pub overshoot_xi: f64,
    pub overshoot_peak: f64,
    pub overshoot_ok: bool,
}

/// Pointwise envelope verification with multiplicative slack `1 + 1e-6`.
pub fn verify_envelope(
    traj: &Trajectory,
    cert: &Certificate,
    region: &RegionBox,
) -> EnvelopeReport {
    const SLACK: f64 = 1e-6;
    let prefactor = (cert.kappa2 / cert.kappa1).sqrt() * cert.initial_xbar_norm;
    let rate = cert.rate_bound_matched;

    let mut first_violation = None;
    let mut worst_ratio = 0.0f64;
    let mut region_exit = None;
    for (k, aug) in traj.xbar.iter().enumerate() {
        let t = traj.times[k];
        if region_exit.is_none() && !region.contains(aug) {
            region_exit = Some(t);
        }
        let envelope = prefactor * (-rate * t).exp();
        let norm = traj.norm_xbar[k];
        if envelope > 0.0 {
            worst_ratio = worst_ratio.max(norm / envelope);
        }
        if norm > envelope * (1.0 + SLACK) && first_violation.is_none() {
            first_violation = Some(t);
        }
    }

    let overshoot_peak = traj.peak_norm_ybar();
    let overshoot_ok = overshoot_peak <= cert.overshoot_xi * (1.0 + SLACK);
    EnvelopeReport {
        passed: first_violation.is_none() && region_exit.is_none() && overshoot_ok,
        first_violation,
        worst_ratio,
        region_exit,
        envelope_rate: rate,
        envelope_prefactor: prefactor,
        overshoot_xi: cert.overshoot_xi,
        overshoot_peak,
        overshoot_ok,
    }
}

/// Finite-difference audit of the dissipation identity
/// `Ṡ = −∇H̄ᵀ Υ ∇H̄` along a trajectory, plus monotonicity of `S`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DissipationAudit {
    pub checked: usize,
    pub within_tol: usize,
    pub fraction_within: f64,
    pub worst_rel_err: f64,
    pub monotone: bool,
    pub worst_step_increase: f64,
}

/// Central-difference `Ṡ` at interior samples against the quadratic form,
/// relative tolerance `tol`. `S` is recomputed from the stored augmented
/// states with the supplied ε, so the audit is independent of the channel
/// recorded at simulation time.
pub fn dissipation_audit(
    model: &PlantModel,
    gains: &ControllerGains,
    epsilon: f64,
    traj: &Trajectory,
    tol: f64,
) -> Result<DissipationAudit> {
    let n_samples = traj.xbar.len();
    if n_samples < 3 {
        return Err(Error::InvalidScenario(
            "dissipation audit needs at least 3 samples".into(),
        ));
    }
    let dt = traj.dt;
    let s: Vec<f64> = traj
        .xbar
        .iter()
        .map(|aug| control::lyapunov_candidate(gains, epsilon, aug))
        .collect();

    let mut checked = 0;
    let mut within = 0;
    let mut worst_rel = 0.0f64;
    for k in 1..n_samples - 1 {
        let fd = (s[k + 1] - s[k - 1]) / (2.0 * dt);
        let aug = &traj.xbar[k];
        let grad = control::closed_loop_energy_grad(gains, aug);
        let ups = upsilon(model, gains, epsilon, aug)?;
        let qf = -grad.dot(&(&ups * &grad));
        let denom = qf.abs().max(fd.abs()).max(f64::MIN_POSITIVE);
        let rel = (fd - qf).abs() / denom;
        checked += 1;
        if rel <= tol {
            within += 1;
        }
        worst_rel = worst_rel.max(rel);
    }

    let mut monotone = true;
    let mut worst_step = f64::NEG_INFINITY;
    for k in 1..n_samples {
        let inc = s[k] - s[k - 1];
        worst_step = worst_step.max(inc);
        if inc > 1e-10 {
            monotone = false;
        }
    }

    Ok(DissipationAudit {
        checked,
        within_tol: within,
        fraction_within: within as f64 / checked as f64,
        worst_rel_err: worst_rel,
        monotone,
        worst_step_increase: worst_step,
    })
}
