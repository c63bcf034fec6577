use std::f64::consts::TAU;

use afc_core::comb::{build_depth_profile, multimode_capacity, CombSpec};
use afc_core::memory::{absorb_and_echo, auto_grid};
use afc_core::pulse::{
    design_chirped_pulse, predicted_eta_chirped, predicted_eta_pi, required_rabi_chirped, required_rabi_pi,
    ControlPulse, SignalTrainSpec,
};
use afc_core::C64;
use proptest::prelude::*;

const MHZ: f64 = TAU * 1e6;
const KHZ: f64 = TAU * 1e3;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chirped_efficiency_grows_with_rabi(a in 0.05f64..5.0, b in 0.05f64..5.0, product in 2.0f64..20.0) {
        let chirp = 2.0 * MHZ;
        let tau = product / chirp;
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(predicted_eta_chirped(lo * MHZ, chirp, tau) <= predicted_eta_chirped(hi * MHZ, chirp, tau) + 1e-12);
    }

    #[test]
    fn pi_efficiency_grows_with_rabi(a in 0.05f64..20.0, b in 0.05f64..20.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(predicted_eta_pi(lo * MHZ, 4.0 * MHZ) <= predicted_eta_pi(hi * MHZ, 4.0 * MHZ) + 1e-12);
    }

    #[test]
    fn chirped_rabi_round_trip(eta in 0.05f64..0.999, product in 2.0f64..20.0) {
        let chirp = 2.0 * MHZ;
        let tau = product / chirp;
        if let Ok(omega) = required_rabi_chirped(eta, chirp, tau) {
            prop_assert!((predicted_eta_chirped(omega, chirp, tau) - eta).abs() < 1e-6);
        }
    }

    #[test]
    fn pi_rabi_round_trip(eta in 0.05f64..0.999) {
        let omega = required_rabi_pi(eta, 4.0 * MHZ).unwrap();
        prop_assert!((predicted_eta_pi(omega, 4.0 * MHZ) - eta).abs() < 1e-6);
    }

    #[test]
    fn design_meets_target(eta in 0.5f64..0.99, rabi in 0.5f64..10.0) {
        let band = 12.0 * MHZ;
        let p = design_chirped_pulse(band, eta, rabi * MHZ, None).unwrap();
        prop_assert!(p.tau >= 4.0 / band * (1.0 - 1e-12));
        prop_assert!(predicted_eta_chirped(p.omega_max, p.chirp_span, p.tau) >= eta - 1e-6);
        prop_assert!((p.t_cut - 7.0 * p.tau).abs() < 1e-15);
        prop_assert!((p.chirp_span - 0.5 * band).abs() < 1e-6);
    }

    #[test]
    fn envelope_is_symmetric(t in 0.0f64..3.0, product in 2.0f64..20.0, center in -5.0f64..5.0) {
        let chirp = 2.0 * MHZ;
        let tau = product / chirp;
        let p = ControlPulse::allen_eberly(1.0 * MHZ, tau, chirp, 7.0 * tau, center * 1e-6).unwrap();
        let (c, dt) = (p.center, t * tau);
        prop_assert!((p.rabi(c + dt) - p.rabi(c - dt)).abs() <= 1e-9 * p.omega_max);
        prop_assert!((p.detuning(0.0, c + dt) + p.detuning(0.0, c - dt)).abs() <= 1e-9 * chirp);
    }

    #[test]
    fn capacity_falls_linearly_with_gate(t1 in 0.0f64..4e-6, t2 in 0.0f64..4e-6) {
        let comb = CombSpec::new(25.0 * KHZ, 100.0 * KHZ, 40, 4.0).unwrap();
        let c1 = multimode_capacity(&comb, t1).unwrap().real;
        let c2 = multimode_capacity(&comb, t2).unwrap().real;
        let slope = 1.0 / comb.mode_duration();
        prop_assert!(((c1 - c2) - slope * (t2 - t1)).abs() < 1e-9);
    }
}

#[test]
fn echo_energy_is_bounded() {
    let mut last = 0.0;
    for depth in [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0] {
        let comb = CombSpec::new(25.0 * KHZ, 100.0 * KHZ, 40, depth).unwrap();
        let grid = auto_grid(&comb, 64e-6).unwrap();
        let profile = build_depth_profile(&comb, &grid.spectral()).unwrap();
        let tau = comb.mode_duration();
        let train = SignalTrainSpec::new(1, tau, tau).unwrap();
        let echo = absorb_and_echo(&profile, &train, &grid).unwrap();
        assert!((0.0..=1.0).contains(&echo.eta_echo), "d = {depth}: {}", echo.eta_echo);
        if depth <= 4.0 {
            assert!(echo.eta_echo >= last - 1e-9, "d = {depth}");
        }
        last = echo.eta_echo;
    }
}

#[test]
fn multimode_echo_is_linear() {
    let comb = CombSpec::new(25.0 * KHZ, 100.0 * KHZ, 40, 4.0).unwrap();
    let grid = auto_grid(&comb, 64e-6).unwrap();
    let profile = build_depth_profile(&comb, &grid.spectral()).unwrap();
    let tau = comb.mode_duration();
    let run = |amps: [f64; 3]| {
        let a = amps.iter().map(|&x| C64::new(x, 0.0)).collect();
        let train = SignalTrainSpec::with_amplitudes(a, tau, tau, 0.0).unwrap();
        absorb_and_echo(&profile, &train, &grid).unwrap().output
    };
    let all = run([1.0, -0.5, 2.0]);
    let parts = [run([1.0, 0.0, 0.0]), run([0.0, -0.5, 0.0]), run([0.0, 0.0, 2.0])];
    let peak = all.iter().map(|z| z.norm()).fold(0.0, f64::max);
    for n in 0..all.len() {
        let sum = parts[0][n] + parts[1][n] + parts[2][n];
        assert!((all[n] - sum).norm() <= 1e-9 * peak);
    }
}
