//! Control pulses, signal trains and the analytic pulse-design formulas.
//!
//! Two control families share a sech envelope
//! `Ω(t) = Ω_max·sech((t - t_c)/τ_c)` gated by a square window of full
//! width `T_cut`:
//!
//! - [`PulseKind::Pi`]: no chirp; area `π·Ω_max·τ_c` (a pi-pulse when
//!   `Ω_max·τ_c = 1`).
//! - [`PulseKind::AllenEberly`]: detuning swept as
//!   `Δ_max·tanh((t - t_c)/τ_c)` across the comb.

use std::f64::consts::PI;
use std::io::{self, Write};

use crate::error::{require_non_negative, require_positive};
use crate::grid::TimeGrid;
use crate::integrate::{adaptive_simpson, bisect_boundary};
use crate::{Error, Result, C64};

/// Gate length in units of `τ_c` used when none is given.
pub const DEFAULT_GATE_FACTOR: f64 = 7.0;

/// Smallest admissible chirp-duration product `Δ_max·τ_c`.
pub const MIN_CHIRP_PRODUCT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PulseKind {
    Pi,
    AllenEberly,
}

impl PulseKind {
    pub fn name(&self) -> &'static str {
        match self {
            PulseKind::Pi => "pi",
            PulseKind::AllenEberly => "allen_eberly",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlPulse {
    pub kind: PulseKind,
    /// Peak Rabi frequency `Ω_max` (rad/s).
    pub omega_max: f64,
    /// Characteristic time `τ_c` (s).
    pub tau: f64,
    /// Chirp half-span `Δ_max` (rad/s); zero for pi-pulses.
    pub chirp_span: f64,
    /// Full width of the square gate (s).
    pub t_cut: f64,
    /// Pulse centre on the protocol timeline (s).
    pub center: f64,
}

impl ControlPulse {
    pub fn pi(omega_max: f64, tau: f64, t_cut: f64, center: f64) -> Result<Self> {
        Self::new(PulseKind::Pi, omega_max, tau, 0.0, t_cut, center)
    }

    /// Sech pi-pulse (`Ω_max·τ_c = 1`) gated at `7τ_c`.
    pub fn pi_area(omega_max: f64, center: f64) -> Result<Self> {
        require_positive("omega_max", omega_max)?;
        let tau = 1.0 / omega_max;
        Self::pi(omega_max, tau, DEFAULT_GATE_FACTOR * tau, center)
    }

    pub fn allen_eberly(omega_max: f64, tau: f64, chirp_span: f64, t_cut: f64, center: f64) -> Result<Self> {
        Self::new(PulseKind::AllenEberly, omega_max, tau, chirp_span, t_cut, center)
    }

    /// Allen–Eberly pulse with `Δ_max·τ_c = product`, gated at `7τ_c`.
    pub fn chirped_with_product(omega_max: f64, chirp_span: f64, product: f64, center: f64) -> Result<Self> {
        require_positive("chirp_span", chirp_span)?;
        require_positive("chirp_product", product)?;
        let tau = product / chirp_span;
        Self::allen_eberly(omega_max, tau, chirp_span, DEFAULT_GATE_FACTOR * tau, center)
    }

    pub fn new(
        kind: PulseKind,
        omega_max: f64,
        tau: f64,
        chirp_span: f64,
        t_cut: f64,
        center: f64,
    ) -> Result<Self> {
        require_non_negative("omega_max", omega_max)?;
        require_positive("tau", tau)?;
        require_non_negative("chirp_span", chirp_span)?;
        require_positive("t_cut", t_cut)?;
        if !center.is_finite() {
            return Err(Error::invalid("center", "must be finite"));
        }
        if kind == PulseKind::Pi && chirp_span != 0.0 {
            return Err(Error::invalid("chirp_span", "must be 0 for pi-pulses"));
        }
        Ok(Self { kind, omega_max, tau, chirp_span, t_cut, center })
    }

    pub fn with_center(mut self, center: f64) -> Self {
        self.center = center;
        self
    }

    pub fn with_omega(mut self, omega_max: f64) -> Self {
        self.omega_max = omega_max;
        self
    }

    /// Same envelope, chirp and gate, irrespective of centre time.
    pub fn same_shape(&self, other: &ControlPulse) -> bool {
        self.kind == other.kind
            && self.omega_max == other.omega_max
            && self.tau == other.tau
            && self.chirp_span == other.chirp_span
            && self.t_cut == other.t_cut
    }

    /// `[t_c - T_cut/2, t_c + T_cut/2]`.
    pub fn gate(&self) -> (f64, f64) {
        (self.center - 0.5 * self.t_cut, self.center + 0.5 * self.t_cut)
    }

    /// Normalised envelope `g(t)`.
    pub fn envelope(&self, t: f64) -> f64 {
        let s = t - self.center;
        if s.abs() > 0.5 * self.t_cut {
            0.0
        } else {
            1.0 / (s / self.tau).cosh()
        }
    }

    /// Normalised chirp `f(t)`; zero for pi-pulses.
    pub fn chirp(&self, t: f64) -> f64 {
        match self.kind {
            PulseKind::Pi => 0.0,
            PulseKind::AllenEberly => ((t - self.center) / self.tau).tanh(),
        }
    }

    pub fn rabi(&self, t: f64) -> f64 {
        rabi_envelope(self, t)
    }

    pub fn detuning(&self, atom_detuning: f64, t: f64) -> f64 {
        instantaneous_detuning(self, atom_detuning, t)
    }

    pub fn area(&self) -> f64 {
        pulse_area(self)
    }
}

/// `Ω_max·sech((t - t_c)/τ_c)` inside the gate, zero outside.
pub fn rabi_envelope(pulse: &ControlPulse, t: f64) -> f64 {
    pulse.omega_max * pulse.envelope(t)
}

/// `Δ_max·tanh((t - t_c)/τ_c) + Δ_j` (just `Δ_j` for pi-pulses).
pub fn instantaneous_detuning(pulse: &ControlPulse, atom_detuning: f64, t: f64) -> f64 {
    pulse.chirp_span * pulse.chirp(t) + atom_detuning
}

/// Area of the gated envelope, by adaptive quadrature.
pub fn pulse_area(pulse: &ControlPulse) -> f64 {
    if pulse.omega_max == 0.0 {
        return 0.0;
    }
    let (a, b) = pulse.gate();
    // The integrand is smooth and bounded, so quadrature cannot fail here.
    adaptive_simpson(|t| pulse.rabi(t), a, b, 1e-12, 0.0, 64).expect("sech quadrature")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdiabaticityReport {
    /// `2Δ_max >= Γ`.
    pub covers_band: bool,
    /// `Δ_max·τ_c >= 2`.
    pub duration_ok: bool,
    /// Resonant transfer efficiency predicted from the Rabi frequency.
    pub predicted_eta: f64,
}

pub fn adiabaticity_report(pulse: &ControlPulse, bandwidth: f64) -> Result<AdiabaticityReport> {
    if pulse.kind != PulseKind::AllenEberly {
        return Err(Error::UnsupportedKind(PulseKind::Pi.name()));
    }
    let product = pulse.chirp_span * pulse.tau;
    Ok(AdiabaticityReport {
        covers_band: 2.0 * pulse.chirp_span >= bandwidth * (1.0 - 1e-12),
        duration_ok: product >= MIN_CHIRP_PRODUCT * (1.0 - 1e-12),
        predicted_eta: predicted_eta_chirped(pulse.omega_max, pulse.chirp_span, pulse.tau),
    })
}

/// Resonant transfer efficiency of an Allen–Eberly pulse,
/// `1 - exp(π Δ_max τ_c (sqrt(1 - (Ω/Δ_max)²) - 1))`, saturating at 1 once
/// `Ω_max > Δ_max`.
pub fn predicted_eta_chirped(omega_max: f64, chirp_span: f64, tau: f64) -> f64 {
    if omega_max <= 0.0 {
        return 0.0;
    }
    if omega_max > chirp_span {
        return 1.0;
    }
    let r = omega_max / chirp_span;
    let exponent = PI * chirp_span * tau * ((1.0 - r * r).sqrt() - 1.0);
    -exponent.exp_m1()
}

/// Worst-case transfer efficiency of a sech pi-pulse across a band `Γ`,
/// `sech²(πΓ/(4Ω_max))`; the inverse of [`required_rabi_pi`].
pub fn predicted_eta_pi(omega_max: f64, bandwidth: f64) -> f64 {
    if omega_max <= 0.0 {
        return 0.0;
    }
    let x = PI * bandwidth / (4.0 * omega_max);
    let s = 1.0 / x.cosh();
    s * s
}

/// Peak Rabi frequency for resonant efficiency `eta` with an Allen–Eberly
/// pulse of chirp `Δ_max` and duration `τ_c` (natural logarithm).
pub fn required_rabi_chirped(eta: f64, chirp_span: f64, tau: f64) -> Result<f64> {
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(Error::invalid("eta", format!("must be in [0, 1), got {eta}")));
    }
    if eta >= 1.0 {
        return Err(Error::UnreachableEfficiency(eta));
    }
    require_positive("chirp_span", chirp_span)?;
    require_positive("tau", tau)?;
    let product = chirp_span * tau;
    if product < MIN_CHIRP_PRODUCT * (1.0 - 1e-12) {
        return Err(Error::PulseTooShort { eta, product });
    }
    let inner = (-eta).ln_1p() / (PI * product) + 1.0;
    // inner < 0 is the branch beyond Ω = Δ_max, where the formula no longer
    // describes the transfer.
    if !(0.0..=1.0).contains(&inner) {
        return Err(Error::PulseTooShort { eta, product });
    }
    Ok(chirp_span * (1.0 - inner * inner).sqrt())
}

/// `(π/4)·Γ / arcsech(sqrt(eta))`.
pub fn required_rabi_pi(eta: f64, bandwidth: f64) -> Result<f64> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::invalid("eta", format!("must be in (0, 1), got {eta}")));
    }
    if eta >= 1.0 {
        return Err(Error::UnreachableEfficiency(eta));
    }
    require_positive("bandwidth", bandwidth)?;
    Ok(0.25 * PI * bandwidth / arcsech(eta.sqrt()))
}

/// `arcsech(x) = ln(1/x + sqrt(1/x² - 1))` for `0 < x <= 1`.
pub fn arcsech(x: f64) -> f64 {
    let inv = 1.0 / x;
    (inv + (inv * inv - 1.0).sqrt()).ln()
}

/// Shortest Allen–Eberly pulse covering `Γ` that reaches `eta_target` with
/// the available Rabi frequency.
///
/// The chirp is fixed at `Δ_max = Γ/2` and `τ_c` is searched upward from
/// `4/Γ`. With `tau_max` the search is confined to `[4/Γ, tau_max]`;
/// without it the bracket is grown until the target is met. The returned
/// pulse is centred at zero and gated at `7τ_c`.
pub fn design_chirped_pulse(
    bandwidth: f64,
    eta_target: f64,
    omega_available: f64,
    tau_max: Option<f64>,
) -> Result<ControlPulse> {
    require_positive("bandwidth", bandwidth)?;
    require_positive("omega_available", omega_available)?;
    if !(eta_target.is_finite() && eta_target > 0.0) {
        return Err(Error::invalid("eta_target", format!("must be in (0, 1), got {eta_target}")));
    }
    if eta_target >= 1.0 {
        return Err(Error::UnreachableEfficiency(eta_target));
    }
    let chirp = 0.5 * bandwidth;
    let tau_min = 4.0 / bandwidth;
    let reaches = |tau: f64| predicted_eta_chirped(omega_available, chirp, tau) >= eta_target;

    let tau = if reaches(tau_min) {
        tau_min
    } else {
        let hi = match tau_max {
            Some(limit) => {
                if !(limit >= tau_min && reaches(limit)) {
                    return Err(Error::NoDesign { eta: eta_target, tau_max: limit });
                }
                limit
            }
            None => {
                let mut hi = 2.0 * tau_min;
                while !reaches(hi) {
                    hi *= 2.0;
                    if hi > tau_min * 1e15 {
                        return Err(Error::NoDesign { eta: eta_target, tau_max: hi });
                    }
                }
                hi
            }
        };
        bisect_boundary(tau_min, hi, 1e-9, reaches)
    };
    ControlPulse::allen_eberly(omega_available, tau, chirp, DEFAULT_GATE_FACTOR * tau, 0.0)
}

/// Longest `τ_c` that still leaves room for one mode before the echo:
/// `(2π/Δ - 12π/Γ)/7`.
pub fn single_mode_tau_limit(echo_time: f64, mode_duration: f64) -> f64 {
    (echo_time - mode_duration) / DEFAULT_GATE_FACTOR
}

/// CSV `t_s,omega_rad_s,detuning_rad_s` of the pulse over its gate, at zero
/// atomic detuning.
pub fn write_pulse_csv<W: Write>(pulse: &ControlPulse, samples: usize, mut w: W) -> io::Result<()> {
    writeln!(w, "t_s,omega_rad_s,detuning_rad_s")?;
    let (a, b) = pulse.gate();
    let samples = samples.max(2);
    for i in 0..samples {
        let t = a + (b - a) * i as f64 / (samples - 1) as f64;
        writeln!(w, "{:?},{:?},{:?}", t, pulse.rabi(t), pulse.detuning(0.0, t))?;
    }
    Ok(())
}

/// A train of Gaussian temporal modes.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalTrainSpec {
    pub mode_count: usize,
    /// Mode duration and spacing `τ_mode` (s).
    pub mode_duration: f64,
    /// One complex amplitude per mode.
    pub amplitudes: Vec<C64>,
    /// Carrier offset from the comb centre (rad/s).
    pub carrier_detuning: f64,
    /// Centre of the first mode (s).
    pub first_center: f64,
}

impl SignalTrainSpec {
    pub fn new(mode_count: usize, mode_duration: f64, first_center: f64) -> Result<Self> {
        Self::with_amplitudes(vec![C64::new(1.0, 0.0); mode_count], mode_duration, first_center, 0.0)
    }

    pub fn with_amplitudes(
        amplitudes: Vec<C64>,
        mode_duration: f64,
        first_center: f64,
        carrier_detuning: f64,
    ) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::invalid("mode_count", "must be at least 1"));
        }
        require_positive("mode_duration", mode_duration)?;
        if !(first_center.is_finite() && carrier_detuning.is_finite()) {
            return Err(Error::invalid("first_center", "must be finite"));
        }
        Ok(Self {
            mode_count: amplitudes.len(),
            mode_duration,
            amplitudes,
            carrier_detuning,
            first_center,
        })
    }

    /// Gaussian standard deviation `σ_t = τ_mode/6`.
    pub fn sigma_t(&self) -> f64 {
        self.mode_duration / 6.0
    }

    pub fn mode_center(&self, m: usize) -> f64 {
        self.first_center + m as f64 * self.mode_duration
    }

    pub fn last_center(&self) -> f64 {
        self.mode_center(self.mode_count - 1)
    }

    /// Occupied interval, half a mode duration either side of the centres.
    pub fn span(&self) -> (f64, f64) {
        (self.first_center - 0.5 * self.mode_duration, self.last_center() + 0.5 * self.mode_duration)
    }

    /// Angular bandwidth `≈ 6/τ_mode`.
    pub fn bandwidth(&self) -> f64 {
        6.0 / self.mode_duration
    }

    pub fn amplitude_at(&self, t: f64) -> C64 {
        let s2 = 2.0 * self.sigma_t().powi(2);
        let sum: C64 = self
            .amplitudes
            .iter()
            .enumerate()
            .map(|(m, &a)| {
                let x = t - self.mode_center(m);
                a * (-x * x / s2).exp()
            })
            .sum();
        sum * C64::from_polar(1.0, -self.carrier_detuning * t)
    }
}

/// Samples the train envelope on `grid`.
pub fn build_signal_train(spec: &SignalTrainSpec, grid: &TimeGrid) -> Result<Vec<C64>> {
    let (a, b) = spec.span();
    if a < grid.start() || b > grid.stop() {
        return Err(Error::Grid(format!(
            "signal train [{a:.6e}, {b:.6e}] s extends beyond the time grid [{:.6e}, {:.6e}] s",
            grid.start(),
            grid.stop()
        )));
    }
    Ok(grid.times().into_iter().map(|t| spec.amplitude_at(t)).collect())
}
