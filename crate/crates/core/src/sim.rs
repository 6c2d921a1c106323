//! Deterministic fixed-step simulation.
//!
//! Two integration paths cover the same closed loop and cross-validate each
//! other:
//!
//! - [`simulate_plant`] integrates the physical plant
//!   `q̇ = ∇_p H + d_u`, `ṗ = −∇_q H − D ∇_p H + G u + d_m` together with the
//!   controller's integrator state `z`.
//! - [`simulate_closed_loop_direct`] integrates the augmented closed-loop
//!   form in `(q̄, p̄, z̄)` directly, with the matched disturbance absorbed
//!   into `z̄ = z + d_m` and an unmatched disturbance entering the `q̄` row.
//!
//! Both use classical RK4 with a fixed step, so runs are reproducible
//! bit-for-bit.

use std::io::Write;

use nalgebra::DVector;

use crate::control::{
    self, integrator_rate, pbic_control, to_augmented, AugmentedState, BaselineGains,
    ControllerGains,
};
use crate::error::Error;
use crate::plant::{GeneralizedState, PlantModel};
use crate::Result;

/// Hard cap on the state norm; beyond this the run is reported as diverged.
const STATE_NORM_CAP: f64 = 1e9;

/// Constant-after-onset step disturbances. `d_m` enters the momentum
/// (actuated) channel, `d_u` the configuration channel.
#[derive(Clone, Debug)]
pub struct DisturbanceSpec {
    pub d_m: DVector<f64>,
    pub d_u: DVector<f64>,
    pub onset: f64,
}

impl DisturbanceSpec {
    pub fn none(n: usize) -> Self {
        Self {
            d_m: DVector::zeros(n),
            d_u: DVector::zeros(n),
            onset: 0.0,
        }
    }

    pub fn matched(d_m: DVector<f64>) -> Self {
        let n = d_m.len();
        Self {
            d_m,
            d_u: DVector::zeros(n),
            onset: 0.0,
        }
    }

    pub fn unmatched(d_u: DVector<f64>) -> Self {
        let n = d_u.len();
        Self {
            d_m: DVector::zeros(n),
            d_u,
            onset: 0.0,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.d_m.len() != n || self.d_u.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: self.d_m.len(),
            });
        }
        if !self.onset.is_finite() || self.onset < 0.0 {
            return Err(Error::InvalidScenario(format!(
                "disturbance onset must be finite and ≥ 0, got {}",
                self.onset
            )));
        }
        if !(self.d_m.iter().chain(self.d_u.iter()).all(|v| v.is_finite())) {
            return Err(Error::NonFiniteState);
        }
        Ok(())
    }

    fn active(&self, t: f64) -> bool {
        t >= self.onset
    }

    pub fn matched_at(&self, t: f64) -> DVector<f64> {
        if self.active(t) {
            self.d_m.clone()
        } else {
            DVector::zeros(self.d_m.len())
        }
    }

    pub fn unmatched_at(&self, t: f64) -> DVector<f64> {
        if self.active(t) {
            self.d_u.clone()
        } else {
            DVector::zeros(self.d_u.len())
        }
    }
}

/// Feedback law applied by [`simulate_plant`]. `None` leaves the plant
/// unforced (u = 0).
#[derive(Clone)]
pub enum Controller {
    None,
    Pbic(ControllerGains),
    Esdi(BaselineGains),
}

/// Harness options. The torque clamp is a post-hoc saturation applied on top
/// of the control law; it is off by default and its activation is flagged in
/// the trajectory, since the stability certificates assume the unclamped law.
#[derive(Clone, Debug)]
pub struct SimOptions {
    /// ε used for the recorded Lyapunov channel `S = H̄ − ε p̄ᵀK_i⁻¹z̄`.
    /// Only affects that derived output, never the dynamics.
    pub s_epsilon: f64,
    pub torque_limit: Option<f64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            s_epsilon: 0.0,
            torque_limit: None,
        }
    }
}

/// One classical fourth-order Runge–Kutta update of `ẏ = f(t, y)`. A
/// non-finite field evaluation aborts with a divergence error carrying the
/// stage time.
pub fn rk4_step<F>(f: &F, t: f64, y: &DVector<f64>, dt: f64) -> Result<DVector<f64>>
where
    F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let eval = |tt: f64, yy: &DVector<f64>| -> Result<DVector<f64>> {
        let k = f(tt, yy)?;
        if k.iter().all(|v| v.is_finite()) {
            Ok(k)
        } else {
            Err(Error::Divergence {
                t: tt,
                reason: "non-finite vector-field evaluation".into(),
            })
        }
    };
    let k1 = eval(t, y)?;
    let k2 = eval(t + 0.5 * dt, &(y + &k1 * (0.5 * dt)))?;
    let k3 = eval(t + 0.5 * dt, &(y + &k2 * (0.5 * dt)))?;
    let k4 = eval(t + dt, &(y + &k3 * dt))?;
    Ok(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// Time-stamped closed-loop record with derived energy and certificate
/// channels. `xbar`/`ybar` and the `hbar`/`lyapunov` channels are only
/// populated for PBIC runs; elsewhere they hold NaN so the CSV schema stays
/// fixed.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub q: Vec<DVector<f64>>,
    pub p: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub xbar: Vec<AugmentedState>,
    pub ybar: Vec<DVector<f64>>,
    pub hamiltonian: Vec<f64>,
    pub hbar: Vec<f64>,
    pub lyapunov: Vec<f64>,
    pub norm_xbar: Vec<f64>,
    pub norm_ybar: Vec<f64>,
    /// ε used for the `lyapunov` channel.
    pub s_epsilon: f64,
    /// True if the optional torque clamp saturated at least once.
    pub torque_clamped: bool,
}

impl Trajectory {
    fn with_capacity(n_samples: usize, dt: f64, s_epsilon: f64) -> Self {
        Self {
            dt,
            times: Vec::with_capacity(n_samples),
            q: Vec::with_capacity(n_samples),
            p: Vec::with_capacity(n_samples),
            z: Vec::with_capacity(n_samples),
            u: Vec::with_capacity(n_samples),
            xbar: Vec::new(),
            ybar: Vec::new(),
            hamiltonian: Vec::with_capacity(n_samples),
            hbar: Vec::with_capacity(n_samples),
            lyapunov: Vec::with_capacity(n_samples),
            norm_xbar: Vec::with_capacity(n_samples),
            norm_ybar: Vec::with_capacity(n_samples),
            s_epsilon,
            torque_clamped: false,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dof(&self) -> usize {
        self.q.first().map_or(0, |v| v.len())
    }

    pub fn final_state(&self) -> Option<GeneralizedState> {
        Some(GeneralizedState {
            q: self.q.last()?.clone(),
            p: self.p.last()?.clone(),
        })
    }

    /// Write the trajectory as CSV with the fixed column schema
    /// `t, q1..qn, p1..pn, z1..zn, u1..un, H, Hbar, S, norm_xbar, norm_ybar`.
    /// Floats use shortest round-trip formatting, so the file is bit-exactly
    /// reproducible for identical runs.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.dof();
        let mut header = String::from("t");
        for c in ["q", "p", "z", "u"] {
            for i in 1..=n {
                header.push_str(&format!(",{c}{i}"));
            }
        }
        header.push_str(",H,Hbar,S,norm_xbar,norm_ybar");
        writeln!(w, "{header}")?;
        for k in 0..self.len() {
            let mut line = format!("{}", self.times[k]);
            for vs in [&self.q[k], &self.p[k], &self.z[k], &self.u[k]] {
                for v in vs.iter() {
                    line.push_str(&format!(",{v}"));
                }
            }
            line.push_str(&format!(
                ",{},{},{},{},{}",
                self.hamiltonian[k],
                self.hbar[k],
                self.lyapunov[k],
                self.norm_xbar[k],
                self.norm_ybar[k]
            ));
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// `‖q(T) − q⋆‖` at the final sample.
    pub fn steady_state_error(&self, q_star: &DVector<f64>) -> f64 {
        self.q.last().map_or(f64::NAN, |q| (q - q_star).norm())
    }

    /// Error norms for decay fitting: `‖x̄‖` when augmented channels exist,
    /// otherwise `‖col(q − q⋆, p)‖`.
    pub fn error_norms(&self, q_star: &DVector<f64>) -> Vec<f64> {
        if !self.xbar.is_empty() {
            self.norm_xbar.clone()
        } else {
            (0..self.len())
                .map(|k| {
                    ((&self.q[k] - q_star).norm_squared() + self.p[k].norm_squared()).sqrt()
                })
                .collect()
        }
    }

    /// Largest per-joint magnitude of the shaped output, `max_t |ȳ_i(t)|`.
    pub fn peak_ybar_per_joint(&self) -> Option<DVector<f64>> {
        let first = self.ybar.first()?;
        let mut peak: DVector<f64> = DVector::zeros(first.len());
        for y in &self.ybar {
            for i in 0..peak.len() {
                peak[i] = peak[i].max(y[i].abs());
            }
        }
        Some(peak)
    }

    pub fn peak_norm_ybar(&self) -> f64 {
        self.norm_ybar.iter().copied().fold(f64::NAN, f64::max)
    }
}

/// Least-squares slope fit of `log‖x̄(t)‖` over the final 60% of samples
/// before the norm first drops below the 1e-8 floor; returns the decay rate
/// (negated slope). `None` if fewer than two usable samples.
pub fn fitted_decay_rate(times: &[f64], norms: &[f64]) -> Option<f64> {
    const FLOOR: f64 = 1e-8;
    const WINDOW: f64 = 0.6;
    let k_floor = norms
        .iter()
        .position(|&v| !(v >= FLOOR))
        .unwrap_or(norms.len());
    if k_floor < 2 {
        return None;
    }
    let start = ((1.0 - WINDOW) * k_floor as f64).ceil() as usize;
    let (ts, ls): (Vec<f64>, Vec<f64>) = (start..k_floor)
        .filter(|&k| norms[k] > 0.0)
        .map(|k| (times[k], norms[k].ln()))
        .unzip();
    if ts.len() < 2 {
        return None;
    }
    let n = ts.len() as f64;
    let tm = ts.iter().sum::<f64>() / n;
    let lm = ls.iter().sum::<f64>() / n;
    let sxx: f64 = ts.iter().map(|t| (t - tm) * (t - tm)).sum();
    let sxy: f64 = ts.iter().zip(&ls).map(|(t, l)| (t - tm) * (l - lm)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(-(sxy / sxx))
}

/// Sup-norm discrepancy between the augmented states of two trajectories,
/// over all samples and channels.
pub fn sup_xbar_discrepancy(a: &Trajectory, b: &Trajectory) -> f64 {
    assert_eq!(a.xbar.len(), b.xbar.len(), "trajectories must align");
    a.xbar
        .iter()
        .zip(&b.xbar)
        .map(|(xa, xb)| (xa.to_vector() - xb.to_vector()).amax())
        .fold(0.0, f64::max)
}

fn check_finite(y: &DVector<f64>, t: f64) -> Result<()> {
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::Divergence {
            t,
            reason: "non-finite state component".into(),
        });
    }
    if y.amax() > STATE_NORM_CAP {
        return Err(Error::Divergence {
            t,
            reason: format!("state norm exceeded {STATE_NORM_CAP:.1e}"),
        });
    }
    Ok(())
}

fn step_count(t_final: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidScenario(format!("dt must be positive, got {dt}")));
    }
    if t_final < dt {
        return Err(Error::InvalidScenario(format!(
            "duration {t_final} shorter than one step {dt}"
        )));
    }
    Ok((t_final / dt).round() as usize)
}

fn apply_clamp(u: DVector<f64>, limit: Option<f64>, clamped: &mut bool) -> DVector<f64> {
    match limit {
        None => u,
        Some(lim) => {
            let mut out = u;
            for v in out.iter_mut() {
                if v.abs() > lim {
                    *v = v.signum() * lim;
                    *clamped = true;
                }
            }
            out
        }
    }
}

/// Simulate the physical plant in closed loop with `controller` under the
/// given disturbances. The integrator state `z` is carried alongside `(q, p)`
/// as one coupled 3n-dimensional ODE. Deterministic for fixed inputs.
pub fn simulate_plant(
    model: &PlantModel,
    controller: &Controller,
    disturbance: &DisturbanceSpec,
    x0: &GeneralizedState,
    z0: &DVector<f64>,
    t_final: f64,
    dt: f64,
    opts: &SimOptions,
) -> Result<Trajectory> {
    let n = model.dof();
    if x0.dof() != n || z0.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: x0.dof(),
        });
    }
    disturbance.validate(n)?;
    model.validate_at(&x0.q)?;
    let steps = step_count(t_final, dt)?;

    let mut clamped = false;
    let control_at = |t: f64, x: &GeneralizedState, z: &DVector<f64>, clamped: &mut bool| -> Result<DVector<f64>> {
        let _ = t;
        let u = match controller {
            Controller::None => DVector::zeros(n),
            Controller::Pbic(g) => pbic_control(model, g, x, z)?,
            Controller::Esdi(g) => control::esdi_control(model, g, x)?,
        };
        Ok(apply_clamp(u, opts.torque_limit, clamped))
    };

    let mut traj = Trajectory::with_capacity(steps + 1, dt, opts.s_epsilon);
    let mut y = DVector::zeros(3 * n);
    y.rows_mut(0, n).copy_from(&x0.q);
    y.rows_mut(n, n).copy_from(&x0.p);
    y.rows_mut(2 * n, n).copy_from(z0);

    for step in 0..=steps {
        let t = step as f64 * dt;
        record_plant_sample(
            model,
            controller,
            disturbance,
            opts,
            t,
            &y,
            &mut traj,
            &mut clamped,
        )?;

        if step < steps {
            let field = |tt: f64, yy: &DVector<f64>| -> Result<DVector<f64>> {
                let x = GeneralizedState {
                    q: yy.rows(0, n).into_owned(),
                    p: yy.rows(n, n).into_owned(),
                };
                let z = yy.rows(2 * n, n).into_owned();
                let mut stage_clamped = false;
                let u = control_at(tt, &x, &z, &mut stage_clamped)?;
                let v = model.velocity(&x)?;
                let dq = &v + disturbance.unmatched_at(tt);
                let dp = -model.hamiltonian_grad_q(&x)? - model.damping(&x) * &v
                    + model.input_matrix(&x.q) * &u
                    + disturbance.matched_at(tt);
                let dz = match controller {
                    Controller::Pbic(g) => integrator_rate(g, &x),
                    _ => DVector::zeros(n),
                };
                let mut dy = DVector::zeros(3 * n);
                dy.rows_mut(0, n).copy_from(&dq);
                dy.rows_mut(n, n).copy_from(&dp);
                dy.rows_mut(2 * n, n).copy_from(&dz);
                Ok(dy)
            };
            y = rk4_step(&field, t, &y, dt)?;
            check_finite(&y, t + dt)?;
        }
    }
    traj.torque_clamped = clamped;
    Ok(traj)
}

#[allow(clippy::too_many_arguments)]
fn record_plant_sample(
    model: &PlantModel,
    controller: &Controller,
    disturbance: &DisturbanceSpec,
    opts: &SimOptions,
    t: f64,
    y: &DVector<f64>,
    traj: &mut Trajectory,
    clamped: &mut bool,
) -> Result<()> {
    let n = model.dof();
    let x = GeneralizedState {
        q: y.rows(0, n).into_owned(),
        p: y.rows(n, n).into_owned(),
    };
    let z = y.rows(2 * n, n).into_owned();
    let u = match controller {
        Controller::None => DVector::zeros(n),
        Controller::Pbic(g) => apply_clamp(pbic_control(model, g, &x, &z)?, opts.torque_limit, clamped),
        Controller::Esdi(g) => {
            apply_clamp(control::esdi_control(model, g, &x)?, opts.torque_limit, clamped)
        }
    };
    traj.times.push(t);
    traj.hamiltonian.push(model.hamiltonian(&x)?);
    match controller {
        Controller::Pbic(g) => {
            let aug = to_augmented(&x, &z, g, &disturbance.matched_at(t));
            let ybar = control::new_output(g, &x);
            traj.hbar.push(control::closed_loop_energy(g, &aug));
            traj.lyapunov
                .push(control::lyapunov_candidate(g, opts.s_epsilon, &aug));
            traj.norm_xbar.push(aug.norm());
            traj.norm_ybar.push(ybar.norm());
            traj.xbar.push(aug);
            traj.ybar.push(ybar);
        }
        _ => {
            traj.hbar.push(f64::NAN);
            traj.lyapunov.push(f64::NAN);
            traj.norm_xbar.push(f64::NAN);
            traj.norm_ybar.push(f64::NAN);
        }
    }
    traj.q.push(x.q);
    traj.p.push(x.p);
    traj.z.push(z);
    traj.u.push(u);
    Ok(())
}

/// Simulate the augmented closed-loop form directly:
///
/// ```text
/// q̄̇ = −M̄⁻¹∇_q̄H̄ + M̄⁻¹M_d∇_p̄H̄ + d_u
/// p̄̇ = −M_dM̄⁻¹∇_q̄H̄ − (Γ̄M_d + K_d)∇_p̄H̄ + K_i∇_z̄H̄
/// z̄̇ = −K_i∇_p̄H̄
/// ```
///
/// with `M̄(q̄) = M(q̄ + q⋆)` and `Γ̄(q̄, p̄) = Γ(q̄ + q⋆, p̄ − K_p q̄)`. A matched
/// disturbance is absorbed into `z̄` and therefore requires onset 0.
pub fn simulate_closed_loop_direct(
    model: &PlantModel,
    gains: &ControllerGains,
    disturbance: &DisturbanceSpec,
    aug0: &AugmentedState,
    t_final: f64,
    dt: f64,
    opts: &SimOptions,
) -> Result<Trajectory> {
    let n = model.dof();
    if gains.dof() != n || aug0.dof() != n {
        return Err(Error::Dimension {
            expected: n,
            got: aug0.dof(),
        });
    }
    disturbance.validate(n)?;
    if disturbance.d_m.amax() != 0.0 && disturbance.onset != 0.0 {
        return Err(Error::InvalidScenario(
            "the direct closed-loop form absorbs d_m into z̄, which requires onset 0".into(),
        ));
    }
    let steps = step_count(t_final, dt)?;

    let field = |tt: f64, yy: &DVector<f64>| -> Result<DVector<f64>> {
        let aug = AugmentedState::from_vector(yy);
        let q = &aug.q_bar + gains.q_star();
        let p = &aug.p_bar - gains.kp() * &aug.q_bar;
        let x_plant = GeneralizedState { q, p };
        let gamma_bar = model.gamma(&x_plant)?;

        let w_q = gains.kp() * &aug.q_bar;
        let w_p = gains.md_inv() * &aug.p_bar;
        let w_z = gains.ki_inv() * &aug.z_bar;

        let m_inv_wq = model.mass_solve(&x_plant.q, &w_q)?;
        let m_inv_md_wp = model.mass_solve(&x_plant.q, &(gains.md() * &w_p))?;

        let dq = -&m_inv_wq + m_inv_md_wp + disturbance.unmatched_at(tt);
        let dp = -(gains.md() * m_inv_wq) - (&gamma_bar * gains.md() + gains.kd()) * &w_p
            + gains.ki() * &w_z;
        let dz = -(gains.ki() * &w_p);

        let mut dy = DVector::zeros(3 * n);
        dy.rows_mut(0, n).copy_from(&dq);
        dy.rows_mut(n, n).copy_from(&dp);
        dy.rows_mut(2 * n, n).copy_from(&dz);
        Ok(dy)
    };

    let mut clamped = false;
    let mut traj = Trajectory::with_capacity(steps + 1, dt, opts.s_epsilon);
    let mut y = aug0.to_vector();
    for step in 0..=steps {
        let t = step as f64 * dt;
        let aug = AugmentedState::from_vector(&y);
        let (x, z) = control::from_augmented(&aug, gains, &disturbance.d_m);
        let u = apply_clamp(pbic_control(model, gains, &x, &z)?, opts.torque_limit, &mut clamped);
        let ybar = gains.md_inv() * &aug.p_bar;

        traj.times.push(t);
        traj.hamiltonian.push(model.hamiltonian(&x)?);
        traj.hbar.push(control::closed_loop_energy(gains, &aug));
        traj.lyapunov
            .push(control::lyapunov_candidate(gains, opts.s_epsilon, &aug));
        traj.norm_xbar.push(aug.norm());
        traj.norm_ybar.push(ybar.norm());
        traj.q.push(x.q);
        traj.p.push(x.p);
        traj.z.push(z);
        traj.u.push(u);
        traj.xbar.push(aug);
        traj.ybar.push(ybar);

        if step < steps {
            y = rk4_step(&field, t, &y, dt)?;
            check_finite(&y, t + dt)?;
        }
    }
    traj.torque_clamped = clamped;
    Ok(traj)
}
