//! Two-level propagators on the `{s, e}` subspace.
//!
//! In the frame used throughout, `|s⟩` carries no energy and `|e⟩` carries
//! the instantaneous detuning `Δ_j(t)`; the control couples them with
//! `Ω(t)/2`:
//!
//! ```text
//! H(t) = [[0, Ω(t)/2], [Ω(t)/2, Δ_j(t)]]
//! ```
//!
//! This is the control-phase choice under which the pi-pulse propagator is
//! `[[cos A/2, -i sin A/2], [-i sin A/2, cos A/2]]` and the adiabatic mixing
//! angle obeys `tan 2θ = -Ω/Δ_j`. A common control phase cancels in the
//! round-trip amplitude `u_es(U₂)·u_se(U₁)`.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::integrate::adaptive_simpson;
use crate::pulse::{ControlPulse, PulseKind};
use crate::{Error, Result, C64};

pub const DEFAULT_TOL: f64 = 1e-9;

/// Above this many detunings [`transfer_profile`] may decimate.
pub const DECIMATION_THRESHOLD: usize = 2048;
pub const DECIMATION_STRIDE: usize = 4;

const MAX_STEPS: usize = 20_000_000;

/// Complex 2×2 matrix acting on `(c_s, c_e)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Propagator {
    pub u_ss: C64,
    pub u_se: C64,
    pub u_es: C64,
    pub u_ee: C64,
}

impl Propagator {
    pub fn identity() -> Self {
        let (one, zero) = (C64::new(1.0, 0.0), C64::new(0.0, 0.0));
        Self { u_ss: one, u_se: zero, u_es: zero, u_ee: one }
    }

    pub fn entries(&self) -> [C64; 4] {
        [self.u_ss, self.u_se, self.u_es, self.u_ee]
    }

    /// Matrix product `self · rhs`.
    pub fn mul(&self, rhs: &Propagator) -> Propagator {
        Propagator {
            u_ss: self.u_ss * rhs.u_ss + self.u_se * rhs.u_es,
            u_se: self.u_ss * rhs.u_se + self.u_se * rhs.u_ee,
            u_es: self.u_es * rhs.u_ss + self.u_ee * rhs.u_es,
            u_ee: self.u_es * rhs.u_se + self.u_ee * rhs.u_ee,
        }
    }

    pub fn adjoint(&self) -> Propagator {
        Propagator {
            u_ss: self.u_ss.conj(),
            u_se: self.u_es.conj(),
            u_es: self.u_se.conj(),
            u_ee: self.u_ee.conj(),
        }
    }

    /// `max |U†U - I|` over the four entries.
    pub fn unitarity_error(&self) -> f64 {
        self.adjoint().mul(self).max_abs_diff(&Propagator::identity())
    }

    pub fn max_abs_diff(&self, other: &Propagator) -> f64 {
        self.entries()
            .iter()
            .zip(other.entries().iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    fn is_finite(&self) -> bool {
        self.entries().iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// A time-dependent drive of the two-level system.
pub trait Drive: Sync {
    /// Rabi frequency `Ω(t)`.
    fn rabi(&self, t: f64) -> f64;
    /// Detuning sweep added to the atom's static detuning.
    fn sweep(&self, t: f64) -> f64;
    /// Integration window `[start, end]`.
    fn window(&self) -> (f64, f64);
    /// Upper bound on the integrator step.
    fn max_step(&self) -> f64;
}

impl Drive for ControlPulse {
    fn rabi(&self, t: f64) -> f64 {
        ControlPulse::rabi(self, t)
    }
    fn sweep(&self, t: f64) -> f64 {
        self.detuning(0.0, t)
    }
    fn window(&self) -> (f64, f64) {
        self.gate()
    }
    fn max_step(&self) -> f64 {
        self.tau / 50.0
    }
}

/// Square resonant drive of constant Rabi frequency over `[0, duration]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantDrive {
    pub omega: f64,
    pub duration: f64,
}

impl Drive for ConstantDrive {
    fn rabi(&self, _t: f64) -> f64 {
        self.omega
    }
    fn sweep(&self, _t: f64) -> f64 {
        0.0
    }
    fn window(&self) -> (f64, f64) {
        (0.0, self.duration)
    }
    fn max_step(&self) -> f64 {
        self.duration / 16.0
    }
}

/// `exp(-iK)` for Hermitian `K = [[k11, k12], [conj(k12), k22]]`.
fn expm_hermitian(k11: f64, k22: f64, k12: C64) -> Propagator {
    let k0 = 0.5 * (k11 + k22);
    let kz = 0.5 * (k11 - k22);
    let norm = (kz * kz + k12.norm_sqr()).sqrt();
    let (cos, sinc) = if norm < 1e-8 {
        let n2 = norm * norm;
        (1.0 - 0.5 * n2, 1.0 - n2 / 6.0)
    } else {
        (norm.cos(), norm.sin() / norm)
    };
    let phase = C64::from_polar(1.0, -k0);
    let minus_i = C64::new(0.0, -1.0);
    Propagator {
        u_ss: phase * (cos + minus_i * sinc * kz),
        u_se: phase * minus_i * sinc * k12,
        u_es: phase * minus_i * sinc * k12.conj(),
        u_ee: phase * (cos - minus_i * sinc * kz),
    }
}

/// One fourth-order Magnus step from `t` to `t + h`.
fn magnus_step<D: Drive + ?Sized>(drive: &D, atom_detuning: f64, t: f64, h: f64) -> Propagator {
    const OFFSET: f64 = 0.288_675_134_594_812_9; // sqrt(3)/6
    let (t1, t2) = (t + (0.5 - OFFSET) * h, t + (0.5 + OFFSET) * h);
    let (a1, b1) = (0.5 * drive.rabi(t1), drive.sweep(t1) + atom_detuning);
    let (a2, b2) = (0.5 * drive.rabi(t2), drive.sweep(t2) + atom_detuning);
    // [H2, H1] = [[0, c], [-c, 0]] for real symmetric H with zero (s, s) entry.
    let c = a2 * b1 - a1 * b2;
    let s = 3f64.sqrt() * h * h / 12.0;
    let k12 = C64::new(0.5 * h * (a1 + a2), -s * c);
    expm_hermitian(0.0, 0.5 * h * (b1 + b2), k12)
}

/// Full-window propagator of `drive` for an atom at `atom_detuning`.
///
/// Fourth-order Magnus steps keep every step exactly unitary; step size is
/// chosen by step doubling so that the local error stays below `tol`.
pub fn propagate<D: Drive + ?Sized>(drive: &D, atom_detuning: f64, tol: f64) -> Result<Propagator> {
    if !(1e-12..=1e-4).contains(&tol) {
        return Err(Error::invalid("tol", format!("must lie in [1e-12, 1e-4], got {tol}")));
    }
    let (start, end) = drive.window();
    let max_step = drive.max_step();
    if !(atom_detuning.is_finite() && start.is_finite() && end.is_finite() && max_step > 0.0) {
        return Err(Error::Numeric("non-finite propagation input".into()));
    }
    let mut u = Propagator::identity();
    let span = end - start;
    if span <= 0.0 {
        return Ok(u);
    }
    let min_step = span * 1e-14;
    let mut t = start;
    let mut h = max_step.min(span / 64.0);
    let mut steps = 0usize;
    while t < end {
        h = h.min(end - t).min(max_step);
        let full = magnus_step(drive, atom_detuning, t, h);
        let half = magnus_step(drive, atom_detuning, t + 0.5 * h, 0.5 * h)
            .mul(&magnus_step(drive, atom_detuning, t, 0.5 * h));
        let err = full.max_abs_diff(&half) / 15.0;
        if !err.is_finite() || !half.is_finite() {
            return Err(Error::Numeric(format!("non-finite propagator at t = {t:.6e}")));
        }
        if err <= tol || h <= min_step {
            u = half.mul(&u);
            t += h;
            steps += 1;
            if steps > MAX_STEPS {
                return Err(Error::Numeric("step budget exhausted".into()));
            }
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * (tol / err).powf(0.2)).clamp(0.2, 5.0) };
        h *= factor;
        if end - t < min_step {
            break;
        }
    }
    Ok(u)
}

/// Gate-window propagator of a control pulse (see [`propagate`]).
pub fn propagate_numeric(pulse: &ControlPulse, atom_detuning: f64, tol: f64) -> Result<Propagator> {
    propagate(pulse, atom_detuning, tol)
}

/// Resonant rotation by area `A`.
pub fn propagator_pi_analytic(area: f64) -> Propagator {
    let (c, s) = ((0.5 * area).cos(), (0.5 * area).sin());
    Propagator {
        u_ss: C64::new(c, 0.0),
        u_se: C64::new(0.0, -s),
        u_es: C64::new(0.0, -s),
        u_ee: C64::new(c, 0.0),
    }
}

/// Mixing angle with `tan 2θ = -Ω/Δ`, continuous while `Ω > 0`:
/// `θ → 0` for `Δ ≫ Ω` and `θ → -π/2` for `-Δ ≫ Ω`.
fn mixing_angle(omega: f64, detuning: f64) -> f64 {
    -0.5 * omega.atan2(detuning)
}

/// Adiabatic-following propagator of an Allen–Eberly pulse.
///
/// Mixing angles are taken at the true gate endpoints; the dressed phases
/// `u± = exp(-i ∫ (Δ ± sqrt(Ω² + Δ²))/2)` are integrated numerically.
pub fn propagator_adiabatic_analytic(pulse: &ControlPulse, atom_detuning: f64) -> Result<Propagator> {
    if pulse.kind != PulseKind::AllenEberly {
        return Err(Error::UnsupportedKind(PulseKind::Pi.name()));
    }
    let (a, b) = pulse.gate();
    let detuning = |t: f64| pulse.detuning(atom_detuning, t);
    let (w0, w1) = (pulse.rabi(a), pulse.rabi(b));
    let (d0, d1) = (detuning(a), detuning(b));
    for (t, w, d) in [(a, w0, d0), (b, w1, d1)] {
        if w == 0.0 && d == 0.0 {
            return Err(Error::DegenerateCrossing { t });
        }
    }
    if pulse.omega_max == 0.0 && d0.signum() != d1.signum() {
        let x = (-atom_detuning / pulse.chirp_span).clamp(-1.0, 1.0);
        return Err(Error::DegenerateCrossing { t: pulse.center + pulse.tau * x.atanh() });
    }
    let (th0, th1) = (mixing_angle(w0, d0), mixing_angle(w1, d1));
    let (c0, s0) = (th0.cos(), th0.sin());
    let (c1, s1) = (th1.cos(), th1.sin());

    let panels = 256;
    let int_detuning = adaptive_simpson(detuning, a, b, 1e-11, 0.0, panels)?;
    let int_dressed = adaptive_simpson(
        |t| pulse.rabi(t).hypot(detuning(t)),
        a,
        b,
        1e-11,
        0.0,
        panels,
    )?;
    let u_minus = C64::from_polar(1.0, -0.5 * (int_detuning - int_dressed));
    let u_plus = C64::from_polar(1.0, -0.5 * (int_detuning + int_dressed));
    Ok(Propagator {
        u_ss: c0 * c1 * u_minus + s0 * s1 * u_plus,
        u_se: s0 * c1 * u_minus - c0 * s1 * u_plus,
        u_es: c0 * s1 * u_minus - s0 * c1 * u_plus,
        u_ee: s0 * s1 * u_minus + c0 * c1 * u_plus,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferOptions {
    pub tol: f64,
    /// Solve every [`DECIMATION_STRIDE`]-th detuning on large uniform grids
    /// and interpolate the rest.
    pub decimate: bool,
}

impl Default for TransferOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, decimate: true }
    }
}

/// Per-detuning transfer amplitudes of a control-pulse pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferProfile {
    pub detunings: Vec<f64>,
    /// `u_se` of the first pulse (e → s).
    pub t1: Vec<C64>,
    /// `u_es` of the second pulse (s → e).
    pub t2: Vec<C64>,
    /// `u_es(U₂)·u_se(U₁)`.
    pub t_double: Vec<C64>,
}

impl TransferProfile {
    /// CSV `detuning_rad_s,re_t1,im_t1,re_t2,im_t2,re_tdouble,im_tdouble`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "detuning_rad_s,re_t1,im_t1,re_t2,im_t2,re_tdouble,im_tdouble")?;
        for i in 0..self.detunings.len() {
            let (a, b, c) = (self.t1[i], self.t2[i], self.t_double[i]);
            writeln!(w, "{:?},{:?},{:?},{:?},{:?},{:?},{:?}", self.detunings[i], a.re, a.im, b.re, b.im, c.re, c.im)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.detunings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detunings.is_empty()
    }
}

fn is_uniform(x: &[f64]) -> bool {
    if x.len() < 3 {
        return true;
    }
    let step = x[1] - x[0];
    step > 0.0
        && x.windows(2).all(|w| ((w[1] - w[0]) - step).abs() <= 1e-9 * step.abs().max(f64::MIN_POSITIVE))
}

/// Cubic Lagrange interpolation through the four knots around `x`.
fn interpolate_cubic(xs: &[f64], ys: &[C64], x: f64) -> C64 {
    let n = xs.len();
    if n < 4 {
        // Too few knots for a cubic; fall back to linear.
        let i = xs.partition_point(|&k| k <= x).clamp(1, n.max(2) - 1);
        if n == 1 {
            return ys[0];
        }
        let f = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
        return ys[i - 1] * (1.0 - f) + ys[i] * f;
    }
    let i = xs.partition_point(|&k| k <= x).clamp(2, n - 2);
    let idx = [i - 2, i - 1, i, i + 1];
    let mut out = C64::new(0.0, 0.0);
    for &j in &idx {
        let mut w = 1.0;
        for &m in &idx {
            if m != j {
                w *= (x - xs[m]) / (xs[j] - xs[m]);
            }
        }
        out += ys[j] * w;
    }
    out
}

/// Transfer amplitudes of `pulse1` (e → s) and `pulse2` (s → e) over a
/// detuning grid.
///
/// When decimating, interpolation acts on the amplitudes with the free
/// `e`-state phase over the gate removed, which leaves slowly varying
/// curves.
pub fn transfer_profile(
    pulse1: &ControlPulse,
    pulse2: &ControlPulse,
    detunings: &[f64],
    opts: TransferOptions,
) -> Result<TransferProfile> {
    let n = detunings.len();
    if detunings.iter().any(|d| !d.is_finite()) {
        return Err(Error::Numeric("non-finite detuning".into()));
    }
    let decimated = opts.decimate && n > DECIMATION_THRESHOLD && is_uniform(detunings);
    let solve: Vec<usize> = if decimated {
        let mut v: Vec<usize> = (0..n).step_by(DECIMATION_STRIDE).collect();
        if *v.last().unwrap() != n - 1 {
            v.push(n - 1);
        }
        v
    } else {
        (0..n).collect()
    };
    let shared = pulse1.same_shape(pulse2);
    let solved: Vec<(C64, C64)> = solve
        .par_iter()
        .map(|&i| {
            let d = detunings[i];
            let u1 = propagate_numeric(pulse1, d, opts.tol)?;
            let u2 = if shared { u1 } else { propagate_numeric(pulse2, d, opts.tol)? };
            Ok((u1.u_se, u2.u_es))
        })
        .collect::<Result<_>>()?;

    let (w1, w2) = (pulse1.t_cut, pulse2.t_cut);
    if !decimated {
        let t1: Vec<C64> = solved.iter().map(|s| s.0).collect();
        let t2: Vec<C64> = solved.iter().map(|s| s.1).collect();
        let t_double = t1.iter().zip(&t2).map(|(a, b)| a * b).collect();
        return Ok(TransferProfile { detunings: detunings.to_vec(), t1, t2, t_double });
    }

    let demod = |d: f64, window: f64| C64::from_polar(1.0, d * window);
    let xs: Vec<f64> = solve.iter().map(|&i| detunings[i]).collect();
    let y1: Vec<C64> = solve.iter().zip(&solved).map(|(&i, s)| s.0 * demod(detunings[i], 0.5 * w1)).collect();
    let y2: Vec<C64> = solve.iter().zip(&solved).map(|(&i, s)| s.1 * demod(detunings[i], 0.5 * w2)).collect();
    let yd: Vec<C64> = solve
        .iter()
        .zip(&solved)
        .map(|(&i, s)| s.0 * s.1 * demod(detunings[i], 0.5 * (w1 + w2)))
        .collect();
    let mut t1 = Vec::with_capacity(n);
    let mut t2 = Vec::with_capacity(n);
    let mut t_double = Vec::with_capacity(n);
    for &d in detunings {
        t1.push(interpolate_cubic(&xs, &y1, d) * demod(d, -0.5 * w1));
        t2.push(interpolate_cubic(&xs, &y2, d) * demod(d, -0.5 * w2));
        t_double.push(interpolate_cubic(&xs, &yd, d) * demod(d, -0.5 * (w1 + w2)));
    }
    // Knots are reproduced exactly.
    for (&i, s) in solve.iter().zip(&solved) {
        t1[i] = s.0;
        t2[i] = s.1;
        t_double[i] = s.0 * s.1;
    }
    Ok(TransferProfile { detunings: detunings.to_vec(), t1, t2, t_double })
}

/// `sin²(A/2)` transfer of a resonant rotation; convenience for checks.
pub fn rotation_transfer(area: f64) -> f64 {
    (0.5 * area).sin().powi(2)
}
