//! Uniform time and angular-frequency grids and the Fourier pair that links
//! them.
//!
//! Field envelopes use the convention `E(t) = (1/2π) ∫ Ẽ(ω) e^{-iωt} dω`, so
//! an atom (or spectral component) at detuning `ω` oscillates as `e^{-iωt}`
//! and a delay by `τ` multiplies the spectrum by `e^{+iωτ}`. Spectra are
//! stored in ascending frequency order, `ω_k = (k - N/2)·dω`.

use std::f64::consts::TAU;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::{Error, Result, C64};

/// Uniformly spaced angular frequencies centred on zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralGrid {
    sample_count: usize,
    spacing: f64,
}

impl SpectralGrid {
    /// A grid of `sample_count` samples (a power of two) spanning `span` rad/s.
    pub fn new(sample_count: usize, span: f64) -> Result<Self> {
        check_pow2(sample_count)?;
        if !(span.is_finite() && span > 0.0) {
            return Err(Error::Grid(format!("span must be finite and > 0, got {span}")));
        }
        Ok(Self { sample_count, spacing: span / sample_count as f64 })
    }

    pub fn sample_count(&self) -> usize { self.sample_count }

    /// Sample spacing `dω`.
    pub fn spacing(&self) -> f64 { self.spacing }

    /// Total span `N·dω`.
    pub fn span(&self) -> f64 { self.spacing * self.sample_count as f64 }

    pub fn frequency(&self, k: usize) -> f64 {
        (k as f64 - (self.sample_count / 2) as f64) * self.spacing
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.sample_count).map(|k| self.frequency(k)).collect()
    }

    /// The time grid whose discrete Fourier dual this is, starting at `start`.
    pub fn dual_time_grid(&self, start: f64) -> TimeGrid {
        let dt = TAU / self.span();
        TimeGrid { start, dt, sample_count: self.sample_count }
    }
}

/// Uniformly spaced times `t_n = start + n·dt`, `n = 0..N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    start: f64,
    dt: f64,
    sample_count: usize,
}

impl TimeGrid {
    /// `sample_count` samples covering `[start, stop)`.
    pub fn new(start: f64, stop: f64, sample_count: usize) -> Result<Self> {
        check_pow2(sample_count)?;
        if !(start.is_finite() && stop.is_finite() && stop > start) {
            return Err(Error::Grid(format!("need finite start < stop, got [{start}, {stop})")));
        }
        Ok(Self { start, dt: (stop - start) / sample_count as f64, sample_count })
    }

    /// Smallest power-of-two grid starting at zero with spacing at most
    /// `max_dt` that lasts at least `min_duration`; the spacing is kept at
    /// exactly `max_dt`.
    pub fn covering(max_dt: f64, min_duration: f64) -> Result<Self> {
        if !(max_dt.is_finite() && max_dt > 0.0 && min_duration.is_finite() && min_duration > 0.0) {
            return Err(Error::Grid(format!(
                "cannot build grid with dt {max_dt} and duration {min_duration}"
            )));
        }
        let needed = (min_duration / max_dt).ceil().max(2.0);
        if needed > (1u64 << 40) as f64 {
            return Err(Error::Grid(format!("grid of {needed} samples is too large")));
        }
        let sample_count = (needed as usize).next_power_of_two();
        Ok(Self { start: 0.0, dt: max_dt, sample_count })
    }

    pub fn start(&self) -> f64 { self.start }
    pub fn stop(&self) -> f64 { self.start + self.duration() }
    pub fn dt(&self) -> f64 { self.dt }
    pub fn sample_count(&self) -> usize { self.sample_count }
    pub fn duration(&self) -> f64 { self.dt * self.sample_count as f64 }

    pub fn time(&self, n: usize) -> f64 { self.start + n as f64 * self.dt }

    pub fn times(&self) -> Vec<f64> {
        (0..self.sample_count).map(|n| self.time(n)).collect()
    }

    /// The Fourier-dual frequency grid.
    pub fn spectral(&self) -> SpectralGrid {
        SpectralGrid { sample_count: self.sample_count, spacing: TAU / self.duration() }
    }

    /// Index range `[lo, hi)` of samples with `a <= t < b`, clipped to the grid.
    pub fn index_range(&self, a: f64, b: f64) -> (usize, usize) {
        let to_index = |t: f64| {
            let x = ((t - self.start) / self.dt).ceil();
            x.clamp(0.0, self.sample_count as f64) as usize
        };
        (to_index(a), to_index(b))
    }
}

fn check_pow2(n: usize) -> Result<()> {
    if n >= 2 && n.is_power_of_two() {
        Ok(())
    } else {
        Err(Error::Grid(format!("sample count must be a power of two >= 2, got {n}")))
    }
}

/// FFT plans for one grid size; cheap to build, not shared between tasks.
pub struct Fourier {
    grid: TimeGrid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Fourier {
    pub fn new(grid: TimeGrid) -> Self {
        let mut planner = FftPlanner::new();
        let n = grid.sample_count();
        Self { grid, forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) }
    }

    pub fn grid(&self) -> &TimeGrid { &self.grid }

    /// `Ẽ(ω_k) = Σ_n E(t_n) e^{iω_k t_n} dt`.
    pub fn to_spectrum(&self, samples: &[C64]) -> Vec<C64> {
        let g = &self.grid;
        assert_eq!(samples.len(), g.sample_count(), "envelope length does not match grid");
        let mut buf: Vec<C64> = samples
            .iter()
            .enumerate()
            .map(|(n, &x)| if n % 2 == 0 { x } else { -x })
            .collect();
        self.inverse.process(&mut buf);
        let sg = g.spectral();
        for (k, y) in buf.iter_mut().enumerate() {
            *y *= C64::from_polar(g.dt(), sg.frequency(k) * g.start());
        }
        buf
    }

    /// Inverse of [`Fourier::to_spectrum`].
    pub fn to_time(&self, spectrum: &[C64]) -> Vec<C64> {
        let g = &self.grid;
        assert_eq!(spectrum.len(), g.sample_count(), "spectrum length does not match grid");
        let sg = g.spectral();
        let mut buf: Vec<C64> = spectrum
            .iter()
            .enumerate()
            .map(|(k, &y)| y * C64::from_polar(1.0, -sg.frequency(k) * g.start()))
            .collect();
        self.forward.process(&mut buf);
        let scale = 1.0 / g.duration();
        buf.iter_mut().enumerate().for_each(|(n, x)| {
            *x *= if n % 2 == 0 { scale } else { -scale };
        });
        buf
    }

    /// Applies the spectral filter `h` (sampled on the dual grid) to `samples`.
    pub fn filter(&self, samples: &[C64], h: &[C64]) -> Vec<C64> {
        let mut spec = self.to_spectrum(samples);
        spec.iter_mut().zip(h).for_each(|(s, &f)| *s *= f);
        self.to_time(&spec)
    }
}

/// `∫|E|² dt` over the samples `[lo, hi)`.
pub fn energy(samples: &[C64], dt: f64, range: (usize, usize)) -> f64 {
    samples[range.0..range.1].iter().map(|x| x.norm_sqr()).sum::<f64>() * dt
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_parseval() {
        let g = TimeGrid::new(-3.0, 5.0, 256).unwrap();
        let f = Fourier::new(g);
        let x: Vec<C64> = g
            .times()
            .iter()
            .map(|&t| C64::new((-(t - 1.0f64).powi(2)).exp(), 0.3 * (-(t * t)).exp()))
            .collect();
        let spec = f.to_spectrum(&x);
        let back = f.to_time(&spec);
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).norm() < 1e-12);
        }
        let e_t: f64 = x.iter().map(|v| v.norm_sqr()).sum::<f64>() * g.dt();
        let e_w: f64 = spec.iter().map(|v| v.norm_sqr()).sum::<f64>() * g.spectral().spacing() / TAU;
        assert!((e_t - e_w).abs() < 1e-12 * e_t);
    }

    #[test]
    fn oscillation_sign_convention() {
        // e^{-iω0 t} must land on the bin at +ω0.
        let g = TimeGrid::new(0.0, 1.0, 64).unwrap();
        let w0 = g.spectral().frequency(40);
        let x: Vec<C64> = g.times().iter().map(|&t| C64::from_polar(1.0, -w0 * t)).collect();
        let spec = Fourier::new(g).to_spectrum(&x);
        let peak = (0..64).max_by(|&a, &b| spec[a].norm().total_cmp(&spec[b].norm())).unwrap();
        assert_eq!(peak, 40);
    }

    #[test]
    fn spectral_phase_is_a_delay() {
        let g = TimeGrid::new(0.0, 20.0, 512).unwrap();
        let pulse = |t: f64| C64::new((-(t - 5.0f64).powi(2)).exp(), 0.0);
        let x: Vec<C64> = g.times().iter().map(|&t| pulse(t)).collect();
        let tau = 3.3;
        let sg = g.spectral();
        let h: Vec<C64> = (0..512).map(|k| C64::from_polar(1.0, sg.frequency(k) * tau)).collect();
        let y = Fourier::new(g).filter(&x, &h);
        for (n, v) in y.iter().enumerate() {
            assert!((v - pulse(g.time(n) - tau)).norm() < 1e-9);
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(TimeGrid::new(0.0, 1.0, 100).is_err());
        assert!(SpectralGrid::new(3, 1.0).is_err());
    }
}
