//! Atomic frequency comb structure.
//!
//! A comb is `N_peak` Gaussian absorption peaks of FWHM `γ`, spaced by `Δ`
//! and placed symmetrically about zero detuning (the signal carrier). The
//! optical-depth profile `d(ω)` is paired with the dispersion phase `φ(ω)`
//! that makes the single-pass amplitude transmission `exp(-d/2 + iφ)` a
//! causal response.

use std::f64::consts::{LN_2, PI, TAU};
use std::io::{self, Write};

use rayon::prelude::*;

use crate::error::{require_non_negative, require_positive};
use crate::grid::{Fourier, SpectralGrid};
use crate::{Error, Result, C64};

/// Peaks further than this many FWHM from a sample are not summed.
const PEAK_REACH: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombSpec {
    /// Gaussian FWHM `γ` of one peak (rad/s).
    pub peak_width: f64,
    /// Peak spacing `Δ` (rad/s).
    pub peak_spacing: f64,
    pub peak_count: usize,
    /// Optical depth `αL` at a peak centre.
    pub depth_per_peak: f64,
}

impl CombSpec {
    pub fn new(peak_width: f64, peak_spacing: f64, peak_count: usize, depth_per_peak: f64) -> Result<Self> {
        require_positive("peak_width", peak_width)?;
        require_positive("peak_spacing", peak_spacing)?;
        require_non_negative("depth_per_peak", depth_per_peak)?;
        if peak_count == 0 {
            return Err(Error::invalid("peak_count", "must be at least 1"));
        }
        if peak_spacing < peak_width {
            return Err(Error::invalid(
                "peak_spacing",
                format!("peaks unresolved: spacing {peak_spacing} < width {peak_width}"),
            ));
        }
        Ok(Self { peak_width, peak_spacing, peak_count, depth_per_peak })
    }

    /// Total bandwidth `Γ = N_peak·Δ`.
    pub fn bandwidth(&self) -> f64 {
        self.peak_count as f64 * self.peak_spacing
    }

    /// Time of the first echo, `2π/Δ`.
    pub fn echo_time(&self) -> f64 {
        TAU / self.peak_spacing
    }

    pub fn finesse(&self) -> f64 {
        comb_finesse(self)
    }

    /// Shortest efficiently stored mode, `12π/Γ`.
    pub fn mode_duration(&self) -> f64 {
        12.0 * PI / self.bandwidth()
    }

    pub fn peak_center(&self, k: usize) -> f64 {
        (k as f64 - 0.5 * (self.peak_count as f64 - 1.0)) * self.peak_spacing
    }

    pub fn peak_centers(&self) -> Vec<f64> {
        (0..self.peak_count).map(|k| self.peak_center(k)).collect()
    }

    /// Optical depth at detuning `omega`.
    pub fn depth_at(&self, omega: f64) -> f64 {
        let c = 4.0 * LN_2 / (self.peak_width * self.peak_width);
        let reach = PEAK_REACH * self.peak_width;
        let first = self.peak_center(0);
        let lo = ((omega - reach - first) / self.peak_spacing).ceil().max(0.0) as usize;
        let hi = ((omega + reach - first) / self.peak_spacing).floor();
        if hi < 0.0 {
            return 0.0;
        }
        let hi = (hi as usize).min(self.peak_count - 1);
        (lo..=hi)
            .map(|k| {
                let x = omega - self.peak_center(k);
                self.depth_per_peak * (-c * x * x).exp()
            })
            .sum()
    }

    /// Smallest spectral span accepted by [`build_depth_profile`].
    pub fn required_span(&self) -> f64 {
        2.0 * self.bandwidth()
    }

    /// Largest spectral spacing accepted by [`build_depth_profile`].
    pub fn max_spectral_spacing(&self) -> f64 {
        self.peak_width / 8.0
    }
}

/// `F = Δ/γ`.
pub fn comb_finesse(spec: &CombSpec) -> f64 {
    spec.peak_spacing / spec.peak_width
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capacity {
    /// Storage window over mode duration.
    pub real: f64,
    /// `floor(real)`, never negative.
    pub int: usize,
}

/// Number of `12π/Γ` modes that fit in the echo time once a control gate of
/// length `t_cut` has been reserved.
pub fn multimode_capacity(spec: &CombSpec, t_cut: f64) -> Result<Capacity> {
    require_non_negative("t_cut", t_cut)?;
    let echo_time = spec.echo_time();
    if t_cut >= echo_time {
        return Err(Error::NoStorageWindow { t_cut, echo_time });
    }
    let real = (echo_time - t_cut) / spec.mode_duration();
    Ok(Capacity { real, int: real.floor().max(0.0) as usize })
}

/// Optical depth and dispersion phase sampled on a spectral grid.
#[derive(Debug, Clone)]
pub struct DepthProfile {
    pub spec: CombSpec,
    pub grid: SpectralGrid,
    pub depth: Vec<f64>,
    pub phase: Vec<f64>,
}

/// Samples `d(ω)` on `grid` and derives `φ(ω)` as the discrete Hilbert
/// partner of `d/2`.
pub fn build_depth_profile(spec: &CombSpec, grid: &SpectralGrid) -> Result<DepthProfile> {
    let limit = spec.max_spectral_spacing();
    if grid.spacing() > limit * (1.0 + 1e-12) {
        return Err(Error::Resolution { spacing: grid.spacing(), limit });
    }
    let required = spec.required_span();
    if grid.span() < required * (1.0 - 1e-12) {
        return Err(Error::Coverage { span: grid.span(), required });
    }
    let depth: Vec<f64> = (0..grid.sample_count())
        .into_par_iter()
        .map(|k| spec.depth_at(grid.frequency(k)))
        .collect();
    let phase = causal_phase(&depth, grid);
    Ok(DepthProfile { spec: *spec, grid: *grid, depth, phase })
}

/// Phase `φ` such that `-d/2 + iφ` is the spectrum of a causal function.
///
/// The log-amplitude is taken to the time domain, folded onto `t >= 0` and
/// transformed back; the imaginary part of the result is `φ`.
fn causal_phase(depth: &[f64], grid: &SpectralGrid) -> Vec<f64> {
    let n = grid.sample_count();
    let fourier = Fourier::new(grid.dual_time_grid(0.0));
    let log_amp: Vec<C64> = depth.iter().map(|&d| C64::new(-0.5 * d, 0.0)).collect();
    let mut cepstrum = fourier.to_time(&log_amp);
    for (i, c) in cepstrum.iter_mut().enumerate() {
        if i == 0 || i == n / 2 {
            continue;
        }
        *c = if i < n / 2 { *c * 2.0 } else { C64::new(0.0, 0.0) };
    }
    fourier.to_spectrum(&cepstrum).iter().map(|z| z.im).collect()
}

impl DepthProfile {
    /// Single-pass amplitude transmission `exp(-d/2 + iφ)`.
    pub fn transmission(&self) -> Vec<C64> {
        self.depth
            .iter()
            .zip(&self.phase)
            .map(|(&d, &p)| C64::from_polar((-0.5 * d).exp(), p))
            .collect()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.grid.frequencies()
    }

    /// CSV with header `omega_rad_s,depth,phase_rad`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "omega_rad_s,depth,phase_rad")?;
        for (k, (d, p)) in self.depth.iter().zip(&self.phase).enumerate() {
            writeln!(w, "{:?},{:?},{:?}", self.grid.frequency(k), d, p)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const KHZ: f64 = TAU * 1e3;
    const MHZ: f64 = TAU * 1e6;

    fn pr_comb() -> CombSpec {
        CombSpec::new(25.0 * KHZ, 100.0 * KHZ, 40, 4.0).unwrap()
    }

    fn pr_grid(spec: &CombSpec) -> SpectralGrid {
        let n = 8192;
        SpectralGrid::new(n, (n as f64 * spec.max_spectral_spacing()).max(2.0 * spec.bandwidth())).unwrap()
    }

    #[test]
    fn derived_quantities() {
        let c = pr_comb();
        assert!((c.bandwidth() - 4.0 * MHZ).abs() < 1e-3);
        assert!((c.echo_time() - 10e-6).abs() < 1e-15);
        assert!((c.mode_duration() - 1.5e-6).abs() < 1e-15);
    }

    #[test]
    fn finesse_examples() {
        assert!((comb_finesse(&pr_comb()) - 4.0).abs() < 1e-12);
        let flat = CombSpec::new(KHZ, KHZ, 10, 1.0).unwrap();
        assert_eq!(comb_finesse(&flat), 1.0);
        let eu = CombSpec::new(2.0 * KHZ, 20.0 * KHZ, 600, 40.0).unwrap();
        assert!((comb_finesse(&eu) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_unresolved_peaks() {
        assert!(CombSpec::new(2.0, 1.0, 4, 1.0).is_err());
        assert!(CombSpec::new(0.0, 1.0, 4, 1.0).is_err());
        assert!(CombSpec::new(1.0, 2.0, 0, 1.0).is_err());
    }

    #[test]
    fn capacity_examples() {
        let c = multimode_capacity(&pr_comb(), 0.0).unwrap();
        assert!((c.real - 20.0 / 3.0).abs() < 1e-9);
        assert_eq!(c.int, 6);

        let narrow = CombSpec::new(KHZ, 4.0 * KHZ, 1000, 4.0).unwrap();
        let c = multimode_capacity(&narrow, 7.0 * 1.25e-6).unwrap();
        assert!((c.real - 160.8333).abs() < 1e-3, "{}", c.real);
        assert_eq!(c.int, 160);

        let spec = pr_comb();
        let c = multimode_capacity(&spec, spec.echo_time() - spec.mode_duration()).unwrap();
        assert!((c.real - 1.0).abs() < 1e-9);

        assert!(matches!(
            multimode_capacity(&spec, spec.echo_time()),
            Err(Error::NoStorageWindow { .. })
        ));
    }

    #[test]
    fn depth_at_peaks_and_between() {
        let spec = pr_comb();
        let profile = build_depth_profile(&spec, &pr_grid(&spec)).unwrap();
        for w in spec.peak_centers() {
            let d = spec.depth_at(w);
            assert!((d - 4.0).abs() < 0.04, "{d}");
        }
        // Both neighbours at 2γ contribute 4·2^-16 each.
        let mid = spec.depth_at(0.0);
        let expected = 2.0 * 4.0 * (-16.0 * LN_2).exp();
        assert!((mid - expected).abs() < 1e-3 * expected, "{mid} vs {expected}");
        let max = profile.depth.iter().cloned().fold(0.0, f64::max);
        assert!((max - 4.0).abs() < 0.04);
        assert!(profile.depth.iter().all(|&d| d >= 0.0));
    }

    #[test]
    fn phase_is_odd_for_symmetric_comb() {
        let spec = pr_comb();
        let grid = pr_grid(&spec);
        let profile = build_depth_profile(&spec, &grid).unwrap();
        let n = grid.sample_count();
        let centre = n / 2;
        assert!(profile.phase[centre].abs() < 1e-9);
        for k in 1..n / 2 {
            let a = profile.phase[centre + k];
            let b = profile.phase[centre - k];
            assert!((a + b).abs() < 1e-9, "k={k}: {a} {b}");
        }
    }

    #[test]
    fn causal_transmission() {
        let spec = pr_comb();
        let grid = pr_grid(&spec);
        let profile = build_depth_profile(&spec, &grid).unwrap();
        let fourier = Fourier::new(grid.dual_time_grid(0.0));
        let h = fourier.to_time(&profile.transmission());
        let n = h.len();
        let total: f64 = h.iter().map(|x| x.norm_sqr()).sum();
        let acausal: f64 = h[n / 2 + 1..].iter().map(|x| x.norm_sqr()).sum();
        assert!(acausal < 1e-4 * total, "acausal fraction {}", acausal / total);
    }

    #[test]
    fn resolution_and_coverage_errors() {
        let spec = pr_comb();
        let coarse = SpectralGrid::new(1024, 1024.0 * spec.peak_width / 4.0).unwrap();
        assert!(matches!(build_depth_profile(&spec, &coarse), Err(Error::Resolution { .. })));
        let small = SpectralGrid::new(16, spec.peak_width).unwrap();
        assert!(matches!(build_depth_profile(&spec, &small), Err(Error::Coverage { .. })));
    }

    #[test]
    fn csv_header() {
        let spec = CombSpec::new(1.0, 4.0, 2, 1.0).unwrap();
        let grid = SpectralGrid::new(256, 32.0).unwrap();
        let profile = build_depth_profile(&spec, &grid).unwrap();
        let mut out = Vec::new();
        profile.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("omega_rad_s,depth,phase_rad\n"));
        assert_eq!(text.lines().count(), 257);
    }
}
