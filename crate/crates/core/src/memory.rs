//! End-to-end storage protocol.
//!
//! The comb acts on the signal as the single-pass linear response
//! `exp(-d(ω)/2 + iφ(ω))`. Control pulses enter as a spectral filter on the
//! no-control output: atoms at detuning `Δ` are carried to the spin level
//! and back with amplitude `t_double(Δ)`, which delays their re-emission by
//! the storage time `T_s`.

use std::f64::consts::TAU;
use std::io::{self, Write};

use rayon::prelude::*;

use crate::bloch::{transfer_profile, TransferOptions, DEFAULT_TOL};
use crate::comb::{build_depth_profile, multimode_capacity, CombSpec, DepthProfile};
use crate::grid::{energy, Fourier, TimeGrid};
use crate::integrate::bisect_boundary;
use crate::pulse::{
    build_signal_train, predicted_eta_chirped, predicted_eta_pi, ControlPulse, PulseKind, SignalTrainSpec,
    DEFAULT_GATE_FACTOR,
};
use crate::{Error, Result, C64};

/// Transfer amplitudes are solved for `|Δ| <= TRANSFER_BAND·Γ` and taken as
/// zero outside, where the comb holds no excitation.
pub const TRANSFER_BAND: f64 = 0.75;

/// Half-width of the delay search in [`overlap_fidelity`], in mode durations.
pub const OVERLAP_SEARCH: f64 = 0.25;

/// Smallest power-of-two grid with spectral span `4Γ` that resolves the comb
/// peaks and lasts at least `min_duration`.
pub fn auto_grid(comb: &CombSpec, min_duration: f64) -> Result<TimeGrid> {
    let dt = TAU / (4.0 * comb.bandwidth());
    let resolve = TAU / comb.max_spectral_spacing();
    TimeGrid::covering(dt, resolve.max(min_duration))
}

/// Control-pulse placement relative to the signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolTimeline {
    /// Centre of the first signal mode.
    pub t0_signal: f64,
    pub t_control1: f64,
    pub t_control2: f64,
    /// `T_s = t_control2 - t_control1`.
    pub storage_delay: f64,
    /// `T_0 = 2π/Δ - (t_control1 - t0_signal)`.
    pub t0_offset: f64,
}

impl ProtocolTimeline {
    pub fn new(t0_signal: f64, t_control1: f64, storage_delay: f64, echo_time: f64) -> Result<Self> {
        for (name, v) in [("t0_signal", t0_signal), ("t_control1", t_control1), ("storage_delay", storage_delay)] {
            if !v.is_finite() {
                return Err(Error::invalid(name, "must be finite"));
            }
        }
        Ok(Self {
            t0_signal,
            t_control1,
            t_control2: t_control1 + storage_delay,
            storage_delay,
            t0_offset: echo_time - (t_control1 - t0_signal),
        })
    }

    /// First control midway between the end of the train and the start of
    /// the first echo; `T_s` defaults to `T_cut + τ_mode` rounded up to a
    /// whole number of grid steps.
    pub fn auto(
        comb: &CombSpec,
        train: &SignalTrainSpec,
        t_cut: f64,
        storage_delay: Option<f64>,
        dt: f64,
    ) -> Result<Self> {
        let tau = train.mode_duration;
        let train_end = train.last_center() + 0.5 * tau;
        let echo_start = train.first_center + comb.echo_time() - 0.5 * tau;
        let t_control1 = 0.5 * (train_end + echo_start);
        let storage_delay = match storage_delay {
            Some(ts) => ts,
            None => ((t_cut + tau) / dt).ceil() * dt,
        };
        Self::new(train.first_center, t_control1, storage_delay, comb.echo_time())
    }

    /// Checks pulse placement against the signal, its echoes and the grid.
    ///
    /// A gate may clip the Gaussian tails of a mode but not its core
    /// (`±τ_mode/4` around the centre).
    pub fn validate(
        &self,
        comb: &CombSpec,
        train: &SignalTrainSpec,
        pulse1: &ControlPulse,
        pulse2: &ControlPulse,
        grid: &TimeGrid,
    ) -> Result<()> {
        let fail = |m: String| Err(Error::Timeline(m));
        let near = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-12);
        if !near(pulse1.center, self.t_control1) || !near(pulse2.center, self.t_control2) {
            return fail("control-pulse centres do not match the timeline".into());
        }
        if self.storage_delay <= 0.5 * (pulse1.t_cut + pulse2.t_cut) {
            return fail(format!(
                "storage delay {:.4e} s does not separate gates of {:.4e} s and {:.4e} s",
                self.storage_delay, pulse1.t_cut, pulse2.t_cut
            ));
        }
        let echo = comb.echo_time();
        let tau = train.mode_duration;
        let core = 0.25 * tau;
        let (g1a, g1b) = pulse1.gate();
        let (g2a, g2b) = pulse2.gate();
        let covers = |a: f64, b: f64, c: f64| a < c + core && b > c - core;
        for m in 0..train.mode_count {
            let c = train.mode_center(m);
            if covers(g1a, g1b, c) || covers(g2a, g2b, c) {
                return fail(format!("a control gate overlaps signal mode {m}"));
            }
            if covers(g1a, g1b, c + echo) {
                return fail(format!("first control gate overlaps the echo of mode {m}"));
            }
            if covers(g2a, g2b, c + echo + self.storage_delay) {
                return fail(format!("second control gate overlaps the recall of mode {m}"));
            }
        }
        if g1a < train.last_center() {
            return fail("first control gate starts before the last signal mode".into());
        }
        if g1b > train.first_center + echo {
            return fail("first control gate ends after the first echo".into());
        }
        let recall_end = train.last_center() + echo + self.storage_delay + tau;
        if grid.start() > train.span().0 || recall_end > grid.stop() {
            return fail(format!(
                "recall window ends at {:.4e} s, beyond the {:.4e} s time grid",
                recall_end,
                grid.stop()
            ));
        }
        Ok(())
    }
}

/// No-control response of the comb.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoOutcome {
    pub input: Vec<C64>,
    pub output: Vec<C64>,
    pub eta_echo: f64,
    /// Echo energy centroid minus input energy centroid.
    pub echo_time: f64,
    /// Integration window `[start, end)` of the first echo.
    pub window: (f64, f64),
}

/// First-echo window `[t_first + T - τ, t_last + T + τ]`, kept clear of the
/// transmitted signal and of the second echo.
pub fn echo_window(train: &SignalTrainSpec, echo_time: f64) -> Result<(f64, f64)> {
    let tau = train.mode_duration;
    let duration = train.mode_count as f64 * tau;
    let ambiguous = Err(Error::AmbiguousWindow { duration, echo_time });
    if duration > echo_time {
        return ambiguous;
    }
    let lo = (train.first_center + echo_time - tau).max(train.last_center() + tau);
    let hi = (train.last_center() + echo_time + tau).min(train.first_center + 2.0 * echo_time - tau);
    if lo >= hi {
        return ambiguous;
    }
    Ok((lo, hi))
}

fn check_profile_grid(profile: &DepthProfile, grid: &TimeGrid) -> Result<()> {
    let sg = grid.spectral();
    let same = profile.grid.sample_count() == sg.sample_count()
        && (profile.grid.spacing() - sg.spacing()).abs() <= 1e-9 * sg.spacing();
    if same {
        Ok(())
    } else {
        Err(Error::Grid("depth profile is not sampled on the dual of the time grid".into()))
    }
}

fn centroid(samples: &[C64], grid: &TimeGrid, range: (usize, usize)) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for n in range.0..range.1 {
        let w = samples[n].norm_sqr();
        num += w * grid.time(n);
        den += w;
    }
    (den > 0.0).then(|| num / den)
}

fn full_range(grid: &TimeGrid) -> (usize, usize) {
    (0, grid.sample_count())
}

/// Absorbs the train and measures the first echo.
pub fn absorb_and_echo(profile: &DepthProfile, train: &SignalTrainSpec, grid: &TimeGrid) -> Result<EchoOutcome> {
    check_profile_grid(profile, grid)?;
    let comb = profile.spec.bandwidth();
    if train.bandwidth() > comb {
        return Err(Error::SignalTooShort { bandwidth: train.bandwidth(), comb });
    }
    let echo = profile.spec.echo_time();
    let window = echo_window(train, echo)?;
    let input = build_signal_train(train, grid)?;
    let fourier = Fourier::new(*grid);
    let output = fourier.filter(&input, &profile.transmission());

    let dt = grid.dt();
    let e_in = energy(&input, dt, full_range(grid));
    if e_in <= 0.0 {
        return Err(Error::invalid("amplitudes", "signal train carries no energy"));
    }
    let range = grid.index_range(window.0, window.1);
    let eta_echo = energy(&output, dt, range) / e_in;
    let t_in = centroid(&input, grid, full_range(grid)).unwrap_or(train.first_center);
    let echo_time = centroid(&output, grid, range).map_or(f64::NAN, |t| t - t_in);
    Ok(EchoOutcome { input, output, eta_echo, echo_time, window })
}

/// Delay-refined overlap `|∫ conj(out(t)) in(t - τ) dt|² / (E_in E_out)`
/// maximised over `τ ∈ expected_delay ± half_width`.
pub fn overlap_fidelity(
    input: &[C64],
    output: &[C64],
    grid: &TimeGrid,
    expected_delay: f64,
    half_width: f64,
) -> Result<f64> {
    let dt = grid.dt();
    let e_in = energy(input, dt, full_range(grid));
    let e_out = energy(output, dt, full_range(grid));
    if !(e_in > 0.0 && e_out > 0.0) {
        return Err(Error::UndefinedOverlap);
    }
    let fourier = Fourier::new(*grid);
    let a = fourier.to_spectrum(input);
    let b = fourier.to_spectrum(output);
    let freqs = grid.spectral().frequencies();
    // Keep only bins carrying weight; the rest contribute nothing.
    let peak = a.iter().zip(&b).map(|(x, y)| (x * y).norm()).fold(0.0, f64::max);
    let terms: Vec<(f64, C64)> = a
        .iter()
        .zip(&b)
        .zip(&freqs)
        .map(|((x, y), &w)| (w, y.conj() * x))
        .filter(|(_, z)| z.norm() > 1e-16 * peak)
        .collect();
    let scale = 1.0 / (grid.duration() * (e_in * e_out).sqrt());
    let fidelity = |tau: f64| -> f64 {
        let c: C64 = terms.iter().map(|&(w, z)| z * C64::from_polar(1.0, w * tau)).sum();
        (c * scale).norm_sqr()
    };
    let (lo, hi) = (expected_delay - half_width, expected_delay + half_width);
    let coarse = 64;
    let step = (hi - lo) / coarse as f64;
    let best = (0..=coarse)
        .map(|i| lo + i as f64 * step)
        .max_by(|x, y| fidelity(*x).total_cmp(&fidelity(*y)))
        .unwrap_or(expected_delay);
    // Golden-section refinement inside the neighbouring coarse cells.
    let (mut a0, mut b0) = ((best - step).max(lo), (best + step).min(hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b0 - g * (b0 - a0);
    let mut x2 = a0 + g * (b0 - a0);
    let (mut f1, mut f2) = (fidelity(x1), fidelity(x2));
    for _ in 0..60 {
        if f1 >= f2 {
            b0 = x2;
            x2 = x1;
            f2 = f1;
            x1 = b0 - g * (b0 - a0);
            f1 = fidelity(x1);
        } else {
            a0 = x1;
            x1 = x2;
            f1 = f2;
            x2 = a0 + g * (b0 - a0);
            f2 = fidelity(x2);
        }
    }
    Ok(f1.max(f2).max(fidelity(best)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolOptions {
    pub tol: f64,
    pub decimate: bool,
    /// Accept chirped pairs whose shapes differ.
    pub allow_mismatched_chirp: bool,
    /// Replace the pulse pair by a perfect transfer (`t_double ≡ 1`).
    pub force_identity: bool,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, decimate: true, allow_mismatched_chirp: false, force_identity: false }
    }
}

/// Figures of merit of one storage run.
#[derive(Debug, Clone, PartialEq)]
pub struct StorageResult {
    /// Peak Rabi frequency of the first control pulse.
    pub omega: f64,
    pub eta_echo: f64,
    /// `eta_tot / eta_echo`.
    pub eta_sq: f64,
    pub eta_tot: f64,
    pub overlap: f64,
    /// Recall energy centroid minus input energy centroid.
    pub echo_time: f64,
    /// First-echo energy left behind by the first pulse.
    pub leakage: f64,
    pub capacity_int: usize,
    /// `|t_double|²` averaged with the echo's spectral weights.
    pub eta_sq_spectral: f64,
    pub warnings: Vec<String>,
}

pub const STORAGE_CSV_HEADER: &str = "omega_rad_s,eta_echo,eta_sq,eta_tot,overlap,echo_time_s,leakage,capacity_int";

impl StorageResult {
    pub fn csv_row(&self) -> String {
        format!(
            "{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            self.omega,
            self.eta_echo,
            self.eta_sq,
            self.eta_tot,
            self.overlap,
            self.echo_time,
            self.leakage,
            self.capacity_int
        )
    }
}

pub fn write_storage_csv<W: Write>(rows: &[StorageResult], mut w: W) -> io::Result<()> {
    writeln!(w, "{STORAGE_CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

/// CSV `t_s,re_E,im_E`.
pub fn write_envelope_csv<W: Write>(grid: &TimeGrid, samples: &[C64], mut w: W) -> io::Result<()> {
    writeln!(w, "t_s,re_E,im_E")?;
    for (n, z) in samples.iter().enumerate() {
        writeln!(w, "{:?},{:?},{:?}", grid.time(n), z.re, z.im)?;
    }
    Ok(())
}

/// Metrics plus the fields they were computed from.
#[derive(Debug, Clone)]
pub struct StorageRun {
    pub result: StorageResult,
    pub echo: EchoOutcome,
    /// Recalled field restricted to the recall window.
    pub recalled: Vec<C64>,
    pub recall_window: (f64, f64),
}

/// Runs absorption, transfer to the spin level and recall.
pub fn run_protocol(
    profile: &DepthProfile,
    train: &SignalTrainSpec,
    pulse1: &ControlPulse,
    pulse2: &ControlPulse,
    timeline: &ProtocolTimeline,
    grid: &TimeGrid,
    opts: &ProtocolOptions,
) -> Result<StorageRun> {
    let comb = &profile.spec;
    let mut warnings = Vec::new();
    if pulse1.kind != pulse2.kind {
        return Err(Error::invalid("control", "both control pulses must be of the same kind"));
    }
    if pulse1.kind == PulseKind::AllenEberly && !pulse1.same_shape(pulse2) {
        if !opts.allow_mismatched_chirp {
            return Err(Error::invalid("control", "chirped pulses must share envelope and chirp"));
        }
        warnings.push("mismatched chirped pulses".to_string());
    }
    let edge = train.carrier_detuning.abs() + 0.5 * train.bandwidth();
    if edge > 0.5 * comb.bandwidth() {
        warnings.push("signal spectrum extends beyond the comb band".to_string());
    }
    timeline.validate(comb, train, pulse1, pulse2, grid)?;
    let echo = absorb_and_echo(profile, train, grid)?;

    let freqs = grid.spectral().frequencies();
    let band = TRANSFER_BAND * comb.bandwidth();
    let inside: Vec<usize> = (0..freqs.len()).filter(|&k| freqs[k].abs() <= band).collect();
    let n = freqs.len();
    let mut t1 = vec![C64::new(0.0, 0.0); n];
    let mut t_double = vec![C64::new(0.0, 0.0); n];
    let shift;
    if opts.force_identity {
        for k in 0..n {
            t1[k] = C64::new(1.0, 0.0);
            t_double[k] = C64::new(1.0, 0.0);
        }
        shift = timeline.storage_delay;
    } else {
        let detunings: Vec<f64> = inside.iter().map(|&k| freqs[k]).collect();
        let topts = TransferOptions { tol: opts.tol, decimate: opts.decimate };
        let prof = transfer_profile(pulse1, pulse2, &detunings, topts)?;
        for (j, &k) in inside.iter().enumerate() {
            t1[k] = prof.t1[j];
            t_double[k] = prof.t_double[j];
        }
        shift = timeline.storage_delay + 0.5 * (pulse1.t_cut + pulse2.t_cut);
    }
    let filter: Vec<C64> = freqs.iter().zip(&t_double).map(|(&w, &t)| t * C64::from_polar(1.0, w * shift)).collect();
    let fourier = Fourier::new(*grid);
    let shifted = fourier.filter(&echo.output, &filter);

    let ts = timeline.storage_delay;
    let recall_window = (echo.window.0 + ts, echo.window.1 + ts);
    let range = grid.index_range(recall_window.0, recall_window.1);
    let dt = grid.dt();
    let e_in = energy(&echo.input, dt, full_range(grid));
    let eta_tot = energy(&shifted, dt, range) / e_in;
    let mut recalled = vec![C64::new(0.0, 0.0); n];
    recalled[range.0..range.1].copy_from_slice(&shifted[range.0..range.1]);

    let t_in = centroid(&echo.input, grid, full_range(grid)).unwrap_or(train.first_center);
    let echo_time = centroid(&shifted, grid, range).map_or(f64::NAN, |t| t - t_in);
    let overlap = if eta_tot > 0.0 {
        overlap_fidelity(
            &echo.input,
            &recalled,
            grid,
            comb.echo_time() + ts,
            OVERLAP_SEARCH * train.mode_duration,
        )?
    } else {
        0.0
    };

    // Spectral weights of the no-control echo.
    let echo_range = grid.index_range(echo.window.0, echo.window.1);
    let mut echo_only = vec![C64::new(0.0, 0.0); n];
    echo_only[echo_range.0..echo_range.1].copy_from_slice(&echo.output[echo_range.0..echo_range.1]);
    let weights: Vec<f64> = fourier.to_spectrum(&echo_only).iter().map(|z| z.norm_sqr()).collect();
    let total: f64 = weights.iter().sum();
    let average = |f: &dyn Fn(usize) -> f64| -> f64 {
        if total > 0.0 {
            (0..n).map(|k| weights[k] * f(k)).sum::<f64>() / total
        } else {
            0.0
        }
    };
    let eta_sq_spectral = average(&|k| t_double[k].norm_sqr());
    let leakage = echo.eta_echo * average(&|k| 1.0 - t1[k].norm_sqr());

    let eta_sq = if echo.eta_echo > 0.0 { eta_tot / echo.eta_echo } else { 0.0 };
    let capacity_int = multimode_capacity(comb, pulse1.t_cut)?.int;
    let result = StorageResult {
        omega: pulse1.omega_max,
        eta_echo: echo.eta_echo,
        eta_sq,
        eta_tot,
        overlap,
        echo_time,
        leakage,
        capacity_int,
        eta_sq_spectral,
        warnings,
    };
    Ok(StorageRun { result, echo, recalled, recall_window })
}

/// Control-pulse families compared in Rabi sweeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PulseFamily {
    /// Sech pi-pulses, `τ_c = 1/Ω`, gated at `7τ_c`.
    Pi,
    /// Allen–Eberly pulses sweeping the whole comb (`Δ_max = Γ/2`) with the
    /// given `Δ_max·τ_c`, gated at `7τ_c`.
    Chirped { product: f64 },
}

impl PulseFamily {
    pub fn label(&self) -> String {
        match self {
            PulseFamily::Pi => "pi".to_string(),
            PulseFamily::Chirped { product } => format!("chirped_{product}"),
        }
    }

    /// Pulse shape at Rabi frequency `omega`, centred at zero.
    pub fn pulse(&self, comb: &CombSpec, omega: f64) -> Result<ControlPulse> {
        match *self {
            PulseFamily::Pi => ControlPulse::pi_area(omega, 0.0),
            PulseFamily::Chirped { product } => {
                ControlPulse::chirped_with_product(omega, 0.5 * comb.bandwidth(), product, 0.0)
            }
        }
    }

    /// Analytic resonant transfer efficiency.
    pub fn predicted_eta(&self, comb: &CombSpec, omega: f64) -> f64 {
        match *self {
            PulseFamily::Pi => predicted_eta_pi(omega, comb.bandwidth()),
            PulseFamily::Chirped { product } => {
                let chirp = 0.5 * comb.bandwidth();
                predicted_eta_chirped(omega, chirp, product / chirp)
            }
        }
    }

    /// Gate length at Rabi frequency `omega`.
    pub fn t_cut(&self, comb: &CombSpec, omega: f64) -> f64 {
        match *self {
            PulseFamily::Pi => DEFAULT_GATE_FACTOR / omega,
            PulseFamily::Chirped { product } => DEFAULT_GATE_FACTOR * product / (0.5 * comb.bandwidth()),
        }
    }
}

/// Comb, signal and grid shared by every point of a sweep.
#[derive(Debug, Clone)]
pub struct ProtocolSetup {
    pub profile: DepthProfile,
    pub train: SignalTrainSpec,
    pub grid: TimeGrid,
    /// Fixed storage delay; `None` picks one per pulse (see
    /// [`ProtocolTimeline::auto`]).
    pub storage_delay: Option<f64>,
}

impl ProtocolSetup {
    pub fn new(comb: &CombSpec, train: SignalTrainSpec, grid: TimeGrid, storage_delay: Option<f64>) -> Result<Self> {
        let profile = build_depth_profile(comb, &grid.spectral())?;
        Ok(Self { profile, train, grid, storage_delay })
    }

    pub fn comb(&self) -> &CombSpec {
        &self.profile.spec
    }

    /// Places two copies of `shape` on an automatic timeline.
    pub fn place(&self, shape: &ControlPulse) -> Result<(ControlPulse, ControlPulse, ProtocolTimeline)> {
        let tl = ProtocolTimeline::auto(self.comb(), &self.train, shape.t_cut, self.storage_delay, self.grid.dt())?;
        Ok((shape.with_center(tl.t_control1), shape.with_center(tl.t_control2), tl))
    }

    pub fn run(&self, shape: &ControlPulse, opts: &ProtocolOptions) -> Result<StorageRun> {
        let (p1, p2, tl) = self.place(shape)?;
        run_protocol(&self.profile, &self.train, &p1, &p2, &tl, &self.grid, opts)
    }

    pub fn run_family(&self, family: PulseFamily, omega: f64, opts: &ProtocolOptions) -> Result<StorageRun> {
        self.run(&family.pulse(self.comb(), omega)?, opts)
    }
}

/// One row of a Rabi sweep; `outcome` holds the error when the point failed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub omega: f64,
    pub outcome: std::result::Result<StorageResult, Error>,
    /// Analytic `η²` at this Rabi frequency.
    pub predicted_eta_sq: f64,
    /// `eta_sq` did not drop (beyond 10⁻³) from the previous successful row.
    pub monotone: bool,
}

/// Runs the protocol at every Rabi frequency in `omegas` (in parallel).
pub fn sweep_rabi(setup: &ProtocolSetup, family: PulseFamily, omegas: &[f64], opts: &ProtocolOptions) -> Vec<SweepRow> {
    let outcomes: Vec<_> = omegas
        .par_iter()
        .map(|&w| setup.run_family(family, w, opts).map(|r| r.result))
        .collect();
    let mut prev: Option<f64> = None;
    omegas
        .iter()
        .zip(outcomes)
        .map(|(&omega, outcome)| {
            let monotone = match (&outcome, prev) {
                (Ok(r), Some(p)) => r.eta_sq >= p - 1e-3,
                _ => true,
            };
            if let Ok(r) = &outcome {
                prev = Some(r.eta_sq);
            }
            SweepRow { omega, outcome, predicted_eta_sq: family.predicted_eta(setup.comb(), omega).powi(2), monotone }
        })
        .collect()
}

/// Smallest Rabi frequency in `[lo, hi]` whose simulated `eta_sq` reaches
/// `target`, assuming a monotone response. Points that fail to run count as
/// below target.
pub fn find_rabi_for_eta_sq(
    setup: &ProtocolSetup,
    family: PulseFamily,
    target: f64,
    lo: f64,
    hi: f64,
    opts: &ProtocolOptions,
) -> Result<f64> {
    let reaches = |w: f64| setup.run_family(family, w, opts).map(|r| r.result.eta_sq >= target).unwrap_or(false);
    if !reaches(hi) {
        return Err(Error::UnreachableEfficiency(target));
    }
    if reaches(lo) {
        return Ok(lo);
    }
    Ok(bisect_boundary(lo, hi, 2e-3, reaches))
}

/// Convenience: `2π/Δ` plus the storage delay.
pub fn expected_recall_delay(comb: &CombSpec, timeline: &ProtocolTimeline) -> f64 {
    comb.echo_time() + timeline.storage_delay
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comb::CombSpec;

    const KHZ: f64 = TAU * 1e3;
    const MHZ: f64 = TAU * 1e6;

    fn pr_comb() -> CombSpec {
        CombSpec::new(25.0 * KHZ, 100.0 * KHZ, 40, 4.0).unwrap()
    }

    fn pr_setup(modes: usize) -> ProtocolSetup {
        let comb = pr_comb();
        let tau = comb.mode_duration();
        let train = SignalTrainSpec::new(modes, tau, tau).unwrap();
        let grid = auto_grid(&comb, 64e-6).unwrap();
        ProtocolSetup::new(&comb, train, grid, None).unwrap()
    }

    #[test]
    fn auto_grid_for_pr_comb() {
        let g = auto_grid(&pr_comb(), 64e-6).unwrap();
        assert_eq!(g.sample_count(), 8192);
        assert!((g.dt() - 62.5e-9).abs() < 1e-15);
    }

    #[test]
    fn echo_window_examples() {
        let train = SignalTrainSpec::new(1, 1.5e-6, 1.5e-6).unwrap();
        let (a, b) = echo_window(&train, 10e-6).unwrap();
        assert!((a - 10e-6).abs() < 1e-15 && (b - 13e-6).abs() < 1e-15);
        let long = SignalTrainSpec::new(8, 1.5e-6, 1.5e-6).unwrap();
        assert!(matches!(echo_window(&long, 10e-6), Err(Error::AmbiguousWindow { .. })));
    }

    #[test]
    fn pr_echo_efficiency_and_time() {
        let s = pr_setup(1);
        let echo = absorb_and_echo(&s.profile, &s.train, &s.grid).unwrap();
        assert!((echo.eta_echo - 0.25).abs() < 0.05, "{}", echo.eta_echo);
        assert!((echo.echo_time - 10e-6).abs() < 0.15e-6, "{}", echo.echo_time);
    }

    #[test]
    fn empty_comb_has_no_echo() {
        let comb = CombSpec::new(25.0 * KHZ, 100.0 * KHZ, 40, 0.0).unwrap();
        let tau = comb.mode_duration();
        let train = SignalTrainSpec::new(1, tau, tau).unwrap();
        let grid = auto_grid(&comb, 64e-6).unwrap();
        let profile = build_depth_profile(&comb, &grid.spectral()).unwrap();
        let echo = absorb_and_echo(&profile, &train, &grid).unwrap();
        assert!(echo.eta_echo < 1e-12);
        for (a, b) in echo.input.iter().zip(&echo.output) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn short_signal_is_rejected() {
        let comb = pr_comb();
        let train = SignalTrainSpec::new(1, 0.2e-6, 1e-6).unwrap();
        let grid = auto_grid(&comb, 64e-6).unwrap();
        let profile = build_depth_profile(&comb, &grid.spectral()).unwrap();
        assert!(matches!(absorb_and_echo(&profile, &train, &grid), Err(Error::SignalTooShort { .. })));
    }

    #[test]
    fn overlap_examples() {
        let g = TimeGrid::new(0.0, 100.0, 1024).unwrap();
        let f = |t: f64| C64::new((-(t - 20.0f64).powi(2) / 4.0).exp(), 0.0);
        let input: Vec<C64> = g.times().iter().map(|&t| f(t)).collect();
        let out: Vec<C64> = g.times().iter().map(|&t| f(t - 30.0)).collect();
        assert!((overlap_fidelity(&input, &out, &g, 30.0, 1.0).unwrap() - 1.0).abs() < 1e-9);
        let scaled: Vec<C64> = out.iter().map(|z| z * 0.3).collect();
        assert!((overlap_fidelity(&input, &scaled, &g, 29.6, 1.0).unwrap() - 1.0).abs() < 1e-9);
        let zero = vec![C64::new(0.0, 0.0); 1024];
        assert!(matches!(overlap_fidelity(&input, &zero, &g, 0.0, 1.0), Err(Error::UndefinedOverlap)));
    }

    #[test]
    fn strong_pi_pulses_recall_everything() {
        let s = pr_setup(1);
        let omega = 10.0 * s.comb().bandwidth();
        let run = s.run_family(PulseFamily::Pi, omega, &ProtocolOptions::default()).unwrap();
        let r = &run.result;
        assert!(r.eta_sq >= 0.98, "{}", r.eta_sq);
        let (_, _, tl) = s.place(&PulseFamily::Pi.pulse(s.comb(), omega).unwrap()).unwrap();
        let expected = expected_recall_delay(s.comb(), &tl);
        assert!((r.echo_time - expected).abs() < 0.1 * s.train.mode_duration, "{} {}", r.echo_time, expected);
        assert!(r.overlap > 0.95);
        assert!((r.eta_sq - r.eta_sq_spectral).abs() < 0.01);
    }

    #[test]
    fn no_control_means_no_recall() {
        let s = pr_setup(1);
        let shape = ControlPulse::pi(0.0, 0.2e-6, 1.4e-6, 0.0).unwrap();
        let run = s.run(&shape, &ProtocolOptions::default()).unwrap();
        assert!(run.result.eta_tot < 1e-20);
        assert_eq!(run.result.overlap, 0.0);
    }

    #[test]
    fn identity_transfer_keeps_echo_efficiency() {
        let s = pr_setup(1);
        let shape = PulseFamily::Chirped { product: 2.0 }.pulse(s.comb(), MHZ).unwrap();
        let opts = ProtocolOptions { force_identity: true, ..Default::default() };
        let r = s.run(&shape, &opts).unwrap().result;
        assert!((r.eta_tot - r.eta_echo).abs() < 1e-9 * r.eta_echo, "{} {}", r.eta_tot, r.eta_echo);
    }

    #[test]
    fn mismatched_chirps_need_opt_in() {
        let s = pr_setup(1);
        let shape = PulseFamily::Chirped { product: 2.0 }.pulse(s.comb(), MHZ).unwrap();
        let (p1, p2, tl) = s.place(&shape).unwrap();
        let p2 = p2.with_omega(2.0 * MHZ);
        let opts = ProtocolOptions::default();
        assert!(run_protocol(&s.profile, &s.train, &p1, &p2, &tl, &s.grid, &opts).is_err());
        let opts = ProtocolOptions { allow_mismatched_chirp: true, ..opts };
        let r = run_protocol(&s.profile, &s.train, &p1, &p2, &tl, &s.grid, &opts).unwrap();
        assert_eq!(r.result.warnings.len(), 1);
    }

    #[test]
    fn timeline_rejects_overlapping_gates() {
        let s = pr_setup(1);
        let shape = PulseFamily::Chirped { product: 2.0 }.pulse(s.comb(), MHZ).unwrap();
        let (p1, _, tl) = s.place(&shape).unwrap();
        let bad = ProtocolTimeline::new(tl.t0_signal, tl.t_control1, 0.5 * shape.t_cut, s.comb().echo_time()).unwrap();
        let p2 = shape.with_center(bad.t_control2);
        assert!(matches!(bad.validate(s.comb(), &s.train, &p1, &p2, &s.grid), Err(Error::Timeline(_))));
        let early = ProtocolTimeline::new(tl.t0_signal, tl.t0_signal, 2e-6, s.comb().echo_time()).unwrap();
        let (q1, q2) = (shape.with_center(early.t_control1), shape.with_center(early.t_control2));
        assert!(matches!(early.validate(s.comb(), &s.train, &q1, &q2, &s.grid), Err(Error::Timeline(_))));
    }

    #[test]
    fn csv_headers() {
        let mut out = Vec::new();
        write_storage_csv(&[], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), format!("{STORAGE_CSV_HEADER}\n"));
        let g = TimeGrid::new(0.0, 1.0, 2).unwrap();
        let mut out = Vec::new();
        write_envelope_csv(&g, &[C64::new(1.0, 2.0), C64::new(0.0, 0.0)], &mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().starts_with("t_s,re_E,im_E\n0.0,1.0,2.0\n"));
    }
}
