//! Dev-only calibration harness (run with `--ignored --nocapture`).

use nalgebra::{DMatrix, DVector};
use pbic_core::cert::{self, RegionBox};
use pbic_core::control::{self, AugmentedState, BaselineGains, ControllerGains};
use pbic_core::models::{self, SurrogateArmParams};
use pbic_core::plant::GeneralizedState;
use pbic_core::sim::{self, Controller, DisturbanceSpec, SimOptions, Trajectory};
use std::f64::consts::FRAC_PI_2;

const KP: [f64; 3] = [10.0, 7.5, 7.5];
const KI: [f64; 3] = [15.0, 10.0, 10.0];
const KD: [f64; 3] = [7.0, 5.0, 5.0];

fn gains(md: f64, q_star: DVector<f64>) -> ControllerGains {
    ControllerGains::diagonal(&KP, &KI, &KD, &[md, md, md], q_star).unwrap()
}

fn q_star() -> DVector<f64> {
    DVector::from_vec(vec![0.4, FRAC_PI_2, 0.3])
}

fn x0() -> GeneralizedState {
    GeneralizedState::new(&q_star() - DVector::from_element(3, 0.5), DVector::zeros(3)).unwrap()
}

fn dm() -> DisturbanceSpec {
    DisturbanceSpec::matched(DVector::from_element(3, 1.0))
}

fn run_pbic(model: &pbic_core::plant::PlantModel, md: f64, t_final: f64, dt: f64) -> Trajectory {
    sim::simulate_plant(
        model,
        &Controller::Pbic(gains(md, q_star())),
        &dm(),
        &x0(),
        &DVector::zeros(3),
        t_final,
        dt,
        &SimOptions::default(),
    )
    .unwrap()
}

fn esdi_equilibrium(model: &pbic_core::plant::PlantModel, kes: &DMatrix<f64>, d: &DVector<f64>) -> DVector<f64> {
    // Fixed point of q = q⋆ + K_es⁻¹(d_m − ∇V(q)).
    let qs = q_star();
    let mut q = qs.clone();
    let kes_inv = kes.clone().try_inverse().unwrap();
    for _ in 0..200 {
        q = &qs + &kes_inv * (d - model.potential_grad(&q));
    }
    q
}

#[test]
#[ignore]
fn calibrate_all() {
    let candidates = vec![
        ("A j3 light", SurrogateArmParams { j1: 4.61, j2: 3.61, j3: 2.0, m2: 1.5, l2: 0.35, m3: 1.0, l3: 0.45, gravity: 9.81 }),
        ("B j2 4.2", SurrogateArmParams { j1: 4.61, j2: 4.2, j3: 2.0, m2: 1.5, l2: 0.35, m3: 1.0, l3: 0.45, gravity: 9.81 }),
        ("C j1 5.2", SurrogateArmParams { j1: 5.2, j2: 3.61, j3: 2.0, m2: 1.5, l2: 0.35, m3: 1.0, l3: 0.45, gravity: 9.81 }),
        ("D all heavy", SurrogateArmParams { j1: 4.8, j2: 3.8, j3: 3.9, m2: 1.5, l2: 0.35, m3: 1.0, l3: 0.45, gravity: 9.81 }),
        ("E j2 3.9 j3 1.0", SurrogateArmParams { j1: 4.61, j2: 3.9, j3: 1.0, m2: 1.5, l2: 0.35, m3: 1.0, l3: 0.45, gravity: 9.81 }),
        ("F light", SurrogateArmParams { j1: 1.0, j2: 0.8, j3: 0.3, m2: 1.5, l2: 0.35, m3: 1.0, l3: 0.45, gravity: 9.81 }),
    ];

    for (label, params) in &candidates {
        let model = models::build_surrogate_arm_with(params).unwrap();
        println!("=== candidate {label}: {params:?}");
        let m_at_star = model.mass_matrix(&q_star());
        println!("M(q*) diag = {:.3} {:.3} {:.3}  M13={:.3}", m_at_star[(0,0)], m_at_star[(1,1)], m_at_star[(2,2)], m_at_star[(0,2)]);

        // --- case2 / case3 runs
        let tr2 = run_pbic(&model, 0.2, 20.0, 1e-3);
        let tr3 = run_pbic(&model, 0.06, 20.0, 1e-3);
        let r2 = sim::fitted_decay_rate(&tr2.times, &tr2.norm_xbar).unwrap();
        let r3 = sim::fitted_decay_rate(&tr3.times, &tr3.norm_xbar).unwrap();
        let pk2 = tr2.peak_ybar_per_joint().unwrap();
        let pk3 = tr3.peak_ybar_per_joint().unwrap();
        println!("fitted rate case2 = {r2:.4}, case3 = {r3:.4}, gap = {:+.2}%", (r3 - r2) / r2 * 100.0);
        println!("peak ybar case2 = [{:.2} {:.2} {:.2}]  case3 = [{:.2} {:.2} {:.2}]",
            pk2[0], pk2[1], pk2[2], pk3[0], pk3[1], pk3[2]);
        println!("steady err case2 = {:.2e}", tr2.steady_state_error(&q_star()));

        // --- case1 baseline
        let base = BaselineGains::diagonal(&[75.0, 50.0, 50.0], &[7.0, 5.0, 5.0], q_star()).unwrap();
        let tr1 = sim::simulate_plant(&model, &Controller::Esdi(base.clone()), &dm(), &x0(), &DVector::zeros(3), 20.0, 1e-3, &SimOptions::default()).unwrap();
        let e1 = tr1.steady_state_error(&q_star());
        let qe = esdi_equilibrium(&model, base.kes(), &dm().d_m);
        let fb_err = (tr1.q.last().unwrap() - &qe).norm();
        println!("case1 steady err = {:.3e} (ratio vs case2 {:.0}x), force-balance match = {:.2e}",
            e1, e1 / tr2.steady_state_error(&q_star()), fb_err);

        // --- certificate (case2)
        let g2 = gains(0.2, q_star());
        let aug0 = control::to_augmented(&x0(), &DVector::zeros(3), &g2, &dm().d_m);
        let h0 = control::closed_loop_energy(&g2, &aug0);
        let region = RegionBox::from_energy_level(&g2, h0, 1.2);
        println!("H0 = {h0:.2}, region q/p/z half = {:.2}/{:.2}/{:.2}", region.q_half[0], region.p_half[0], region.z_half[0]);
        let traj_states: Vec<AugmentedState> = tr2.xbar.iter().step_by(10).cloned().collect();
        match cert::certify(&model, &g2, &region, &aug0, None, 0.5, 4000, 42, &traj_states) {
            Ok(c) => {
                println!("eps = {:.4e} (cap {:.4e}), k1 = {:.3e}, k2 = {:.3}, mu = {:.4}, rate_m = {:.4}, xi = {:.1}, gm = {:.4}",
                    c.epsilon, c.epsilon_cap, c.kappa1, c.kappa2, c.mu, c.rate_bound_matched, c.overshoot_xi, c.gain_margin);
                // envelope + fault injection
                let rep = cert::verify_envelope(&tr2, &c, &region);
                println!("envelope pass = {}, worst ratio = {:.3e}, region exit = {:?}", rep.passed, rep.worst_ratio, rep.region_exit);
                let mut c10 = c.clone();
                c10.rate_bound_matched *= 10.0;
                let rep10 = cert::verify_envelope(&tr2, &c10, &region);
                println!("x10 envelope violated = {} at t = {:?}", !rep10.passed, rep10.first_violation);
                // dissipation audit, both variants
                let audit = cert::dissipation_audit(&model, &g2, c.epsilon, &tr2, 1e-4).unwrap();
                println!("audit(-eps*Md): frac = {:.6}, worst = {:.3e}, monotone = {}", audit.fraction_within, audit.worst_rel_err, audit.monotone);
                // paper-text variant: Q_B = Q_A - eps*w_p'(Md^{-1}-Md)w_p
                let eps = c.epsilon;
                let mut within_b = 0usize;
                let mut checked_b = 0usize;
                let mut worst_b: f64 = 0.0;
                let s: Vec<f64> = tr2.xbar.iter().map(|a| control::lyapunov_candidate(&g2, eps, a)).collect();
                for k in 1..tr2.xbar.len() - 1 {
                    let fd = (s[k + 1] - s[k - 1]) / (2.0 * tr2.dt);
                    let aug = &tr2.xbar[k];
                    let grad = control::closed_loop_energy_grad(&g2, aug);
                    let ups = cert::upsilon(&model, &g2, eps, aug).unwrap();
                    let qf_a = -grad.dot(&(&ups * &grad));
                    let wp = g2.md_inv() * &aug.p_bar;
                    let shift = wp.dot(&((g2.md_inv() - g2.md()) * &wp));
                    let qf_b = qf_a + eps * shift;
                    let rel = (fd - qf_b).abs() / qf_b.abs().max(fd.abs()).max(f64::MIN_POSITIVE);
                    checked_b += 1;
                    if rel <= 1e-4 { within_b += 1; }
                    worst_b = worst_b.max(rel);
                }
                println!("audit(-eps*MdInv, paper text): frac = {:.6}, worst = {:.3e}", within_b as f64 / checked_b as f64, worst_b);
                // ISS runs (direct form)
                for du_scale in [0.05, 0.025] {
                    let du = DisturbanceSpec::unmatched(DVector::from_element(3, du_scale));
                    let tru = sim::simulate_closed_loop_direct(&model, &g2, &du, &aug0, 20.0, 1e-3, &SimOptions::default()).unwrap();
                    let tail_start = tru.len() * 3 / 4;
                    let ult: f64 = tru.norm_xbar[tail_start..].iter().copied().fold(0.0, f64::max);
                    let radius = (c.kappa2 / c.kappa1).sqrt() * du.d_u.norm() / c.gain_margin;
                    println!("du = {du_scale}: ultimate = {ult:.4e}, certified radius = {radius:.3e}");
                }
            }
            Err(e) => println!("CERTIFY FAILED: {e}"),
        }

        // --- cross-sim factor
        let g2c = gains(0.2, q_star());
        let aug0c = control::to_augmented(&x0(), &DVector::zeros(3), &g2c, &dm().d_m);
        for dt in [1e-3, 5e-4] {
            let pl = sim::simulate_plant(&model, &Controller::Pbic(g2c.clone()), &dm(), &x0(), &DVector::zeros(3), 5.0, dt, &SimOptions::default()).unwrap();
            let di = sim::simulate_closed_loop_direct(&model, &g2c, &dm(), &aug0c, 5.0, dt, &SimOptions::default()).unwrap();
            println!("cross-sim dt = {dt}: sup disc = {:.3e}", sim::sup_xbar_discrepancy(&pl, &di));
        }
        println!();
    }
}
