//! Scenario files and the commands behind the `afcsim` binary.
//!
//! Scenarios are TOML with the sections `[comb]`, `[signal]`, `[control]`,
//! `[timeline]`, `[grid]`, `[sweep]`, `[capacity]` and `[output]`.
//! Frequencies are given in Hz (converted to rad/s by 2π) and times in
//! seconds. Every command output is plain text; CSV files start with
//! `# afcsim config_sha256=<hash>` where the hash is taken over the
//! effective configuration echo.

use std::f64::consts::TAU;
use std::fmt;
use std::fmt::Write as _;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::comb::{build_depth_profile, multimode_capacity, CombSpec};
use crate::grid::TimeGrid;
use crate::memory::{
    absorb_and_echo, auto_grid, run_protocol, sweep_rabi, write_envelope_csv, write_storage_csv, ProtocolOptions,
    ProtocolSetup, ProtocolTimeline, PulseFamily, StorageResult, STORAGE_CSV_HEADER,
};
use crate::pulse::{
    adiabaticity_report, design_chirped_pulse, predicted_eta_chirped, single_mode_tau_limit, write_pulse_csv,
    ControlPulse, PulseKind, SignalTrainSpec, DEFAULT_GATE_FACTOR,
};
use crate::{Error, C64};

/// Canned scenarios shipped with the crate.
pub const CANNED: &[(&str, &str)] = &[
    ("pr_fig2", include_str!("../scenarios/pr_fig2.toml")),
    ("pr_narrow", include_str!("../scenarios/pr_narrow.toml")),
    ("eu_sectionV", include_str!("../scenarios/eu_sectionV.toml")),
];

pub fn canned(name: &str) -> Option<&'static str> {
    CANNED.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

/// A configuration problem, located by key and (when known) line.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}, key `{}`: {}", self.key, self.message),
            None => write!(f, "key `{}`: {}", self.key, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug)]
pub enum ScenarioError {
    Config(ConfigError),
    Model(Error),
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioError::Config(e) => write!(f, "configuration error: {e}"),
            ScenarioError::Model(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ScenarioError {}

impl From<ConfigError> for ScenarioError {
    fn from(e: ConfigError) -> Self {
        ScenarioError::Config(e)
    }
}

impl From<Error> for ScenarioError {
    fn from(e: Error) -> Self {
        ScenarioError::Model(e)
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    comb: Option<RawComb>,
    signal: Option<RawSignal>,
    control: Option<RawControl>,
    timeline: Option<RawTimeline>,
    grid: Option<RawGrid>,
    sweep: Option<RawSweep>,
    capacity: Option<RawCapacity>,
    output: Option<RawOutput>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawComb {
    peak_width_hz: Option<f64>,
    peak_spacing_hz: Option<f64>,
    peak_count: Option<i64>,
    depth_per_peak: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSignal {
    mode_count: Option<i64>,
    mode_duration_s: Option<f64>,
    first_mode_center_s: Option<f64>,
    carrier_detuning_hz: Option<f64>,
    amplitudes: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawControl {
    family: Option<String>,
    rabi_max_hz: Option<f64>,
    tau_s: Option<f64>,
    chirp_span_hz: Option<f64>,
    chirp_product: Option<f64>,
    t_cut_s: Option<f64>,
    design_eta: Option<f64>,
    design_rabi_hz: Option<f64>,
    design_tau_max_s: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTimeline {
    storage_delay_s: Option<f64>,
    t_control1_s: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    sample_count: Option<i64>,
    time_span_s: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    rabi_min_hz: Option<f64>,
    rabi_max_hz: Option<f64>,
    points: Option<i64>,
    families: Option<Vec<String>>,
    chirp_products: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCapacity {
    rabi_hz: Option<Vec<f64>>,
    eta_tot_target: Option<f64>,
    eta_echo: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<String>,
}

/// How the control pulses were specified.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlSource {
    Explicit,
    /// Designed from `(η_target, Ω_available, τ_max)`.
    Designed { eta: f64, rabi: f64, tau_max: Option<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub rabi_min: f64,
    pub rabi_max: f64,
    pub points: usize,
    pub families: Vec<PulseFamily>,
}

impl SweepConfig {
    /// Evenly spaced Rabi frequencies (rad/s).
    pub fn omegas(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.rabi_min];
        }
        let step = (self.rabi_max - self.rabi_min) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.rabi_min + i as f64 * step).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityConfig {
    pub rabi: Vec<f64>,
    pub eta_tot_target: f64,
    pub eta_echo: f64,
}

/// A validated scenario with all defaults resolved.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub comb: CombSpec,
    pub signal: SignalTrainSpec,
    /// Control-pulse shape centred at zero.
    pub control: Option<ControlPulse>,
    pub control_source: Option<ControlSource>,
    pub storage_delay: Option<f64>,
    pub t_control1: Option<f64>,
    pub grid: TimeGrid,
    pub sweep: Option<SweepConfig>,
    pub capacity: Option<CapacityConfig>,
    pub output_dir: String,
    /// Effective configuration, reparseable TOML.
    pub effective: String,
    /// SHA-256 of `effective`, hex.
    pub hash: String,
}

struct Ctx<'a> {
    text: &'a str,
}

impl Ctx<'_> {
    fn err(&self, section: &str, key: Option<&str>, message: impl Into<String>) -> ConfigError {
        let full = match key {
            Some(k) => format!("{section}.{k}"),
            None => section.to_string(),
        };
        ConfigError { key: full, line: locate(self.text, section, key), message: message.into() }
    }

    fn required<T: Copy>(&self, section: &str, key: &str, v: Option<T>) -> Result<T, ConfigError> {
        v.ok_or_else(|| self.err(section, Some(key), "missing required key"))
    }

    fn positive(&self, section: &str, key: &str, v: f64) -> Result<f64, ConfigError> {
        if v.is_finite() && v > 0.0 {
            Ok(v)
        } else {
            Err(self.err(section, Some(key), format!("must be a finite positive number, got {v}")))
        }
    }

    fn count(&self, section: &str, key: &str, v: i64) -> Result<usize, ConfigError> {
        if v >= 1 {
            Ok(v as usize)
        } else {
            Err(self.err(section, Some(key), format!("must be at least 1, got {v}")))
        }
    }

    fn model(&self, section: &str, key: Option<&str>, e: Error) -> ConfigError {
        self.err(section, key, e.to_string())
    }
}

/// 1-based line of `key` inside `[section]`, or of the section header when
/// `key` is `None` or absent.
fn locate(text: &str, section: &str, key: Option<&str>) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == section {
                header = Some(i + 1);
            }
            continue;
        }
        if current != section {
            continue;
        }
        if let (Some(k), Some((lhs, _))) = (key, line.split_once('=')) {
            if lhs.trim() == k {
                return Some(i + 1);
            }
        }
    }
    header
}

fn toml_error(text: &str, e: &toml::de::Error) -> ConfigError {
    let message = e.message().to_string();
    let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
    let mut section = String::new();
    let mut key = None;
    if let Some(n) = line {
        for raw in text.lines().take(n) {
            let l = raw.trim();
            if let Some(name) = l.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
            }
        }
        key = text.lines().nth(n - 1).and_then(|l| l.split_once('=')).map(|(k, _)| k.trim().to_string());
    }
    if let Some(rest) = message.split("unknown field `").nth(1) {
        key = rest.split('`').next().map(str::to_string);
    }
    let key = match (section.is_empty(), key) {
        (false, Some(k)) => format!("{section}.{k}"),
        (true, Some(k)) => k,
        (false, None) => section,
        (true, None) => "<document>".to_string(),
    };
    ConfigError { key, line, message }
}

fn float(x: f64) -> String {
    format!("{x:?}")
}

fn hz(x: f64) -> f64 {
    x / TAU
}

/// Parses and validates a scenario.
pub fn parse_scenario(text: &str) -> Result<Scenario, ConfigError> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
    let cx = Ctx { text };

    let rc = raw.comb.ok_or_else(|| cx.err("comb", None, "missing required section"))?;
    let width = cx.positive("comb", "peak_width_hz", cx.required("comb", "peak_width_hz", rc.peak_width_hz)?)?;
    let spacing = cx.positive("comb", "peak_spacing_hz", cx.required("comb", "peak_spacing_hz", rc.peak_spacing_hz)?)?;
    let count = cx.count("comb", "peak_count", cx.required("comb", "peak_count", rc.peak_count)?)?;
    let depth = cx.required("comb", "depth_per_peak", rc.depth_per_peak)?;
    if !(depth.is_finite() && depth >= 0.0) {
        return Err(cx.err("comb", Some("depth_per_peak"), format!("must be >= 0, got {depth}")));
    }
    let comb = CombSpec::new(TAU * width, TAU * spacing, count, depth).map_err(|e| cx.model("comb", None, e))?;

    let rs = raw.signal.unwrap_or_default();
    let amplitudes: Vec<C64> = match (&rs.amplitudes, rs.mode_count) {
        (Some(a), n) => {
            if a.is_empty() {
                return Err(cx.err("signal", Some("amplitudes"), "must not be empty"));
            }
            if let Some(n) = n {
                if n as usize != a.len() {
                    return Err(cx.err("signal", Some("mode_count"), "does not match the number of amplitudes"));
                }
            }
            a.iter().map(|&x| C64::new(x, 0.0)).collect()
        }
        (None, n) => vec![C64::new(1.0, 0.0); cx.count("signal", "mode_count", n.unwrap_or(1))?],
    };
    let mode_duration = match rs.mode_duration_s {
        Some(v) => cx.positive("signal", "mode_duration_s", v)?,
        None => comb.mode_duration(),
    };
    let first_center = rs.first_mode_center_s.unwrap_or(mode_duration);
    let carrier = TAU * rs.carrier_detuning_hz.unwrap_or(0.0);
    let signal = SignalTrainSpec::with_amplitudes(amplitudes, mode_duration, first_center, carrier)
        .map_err(|e| cx.model("signal", None, e))?;

    let (control, control_source) = parse_control(&cx, &comb, raw.control.unwrap_or_default())?;

    let rt = raw.timeline.unwrap_or_default();
    let storage_delay = rt.storage_delay_s.map(|v| cx.positive("timeline", "storage_delay_s", v)).transpose()?;
    let t_control1 = rt.t_control1_s;

    let sweep = raw.sweep.map(|s| parse_sweep(&cx, &control, s)).transpose()?;
    let capacity = raw.capacity.map(|c| parse_capacity(&cx, c)).transpose()?;

    let rg = raw.grid.unwrap_or_default();
    let grid = match (rg.sample_count, rg.time_span_s) {
        (Some(n), Some(span)) => {
            let span = cx.positive("grid", "time_span_s", span)?;
            let n = cx.count("grid", "sample_count", n)?;
            TimeGrid::new(0.0, span, n).map_err(|e| cx.model("grid", Some("sample_count"), e))?
        }
        (None, None) => {
            let longest_gate = longest_gate(&comb, control.as_ref(), sweep.as_ref());
            let ts = storage_delay.unwrap_or(longest_gate + mode_duration);
            let end = signal.last_center() + comb.echo_time() + ts + 2.0 * mode_duration;
            auto_grid(&comb, 2.0 * end).map_err(|e| cx.model("grid", None, e))?
        }
        (Some(_), None) => return Err(cx.err("grid", Some("time_span_s"), "required when sample_count is given")),
        (None, Some(_)) => return Err(cx.err("grid", Some("sample_count"), "required when time_span_s is given")),
    };
    build_depth_profile(&comb, &grid.spectral()).map_err(|e| cx.model("grid", Some("sample_count"), e))?;

    let output_dir = raw.output.and_then(|o| o.dir).unwrap_or_else(|| "afcsim_out".to_string());

    let mut scenario = Scenario {
        comb,
        signal,
        control,
        control_source,
        storage_delay,
        t_control1,
        grid,
        sweep,
        capacity,
        output_dir,
        effective: String::new(),
        hash: String::new(),
    };
    scenario.effective = effective_config(&scenario);
    scenario.hash = Sha256::digest(scenario.effective.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
    Ok(scenario)
}

fn parse_control(
    cx: &Ctx<'_>,
    comb: &CombSpec,
    rc: RawControl,
) -> Result<(Option<ControlPulse>, Option<ControlSource>), ConfigError> {
    let sec = "control";
    if rc.design_eta.is_some() || rc.design_rabi_hz.is_some() {
        for (key, present) in [
            ("rabi_max_hz", rc.rabi_max_hz.is_some()),
            ("tau_s", rc.tau_s.is_some()),
            ("chirp_span_hz", rc.chirp_span_hz.is_some()),
            ("chirp_product", rc.chirp_product.is_some()),
            ("t_cut_s", rc.t_cut_s.is_some()),
        ] {
            if present {
                return Err(cx.err(sec, Some(key), "cannot be combined with a design request"));
            }
        }
        if let Some(f) = &rc.family {
            if f != "chirped" {
                return Err(cx.err(sec, Some("family"), "design requests produce chirped pulses"));
            }
        }
        let eta = cx.required(sec, "design_eta", rc.design_eta)?;
        let rabi = TAU * cx.positive(sec, "design_rabi_hz", cx.required(sec, "design_rabi_hz", rc.design_rabi_hz)?)?;
        let tau_max = rc.design_tau_max_s.map(|v| cx.positive(sec, "design_tau_max_s", v)).transpose()?;
        let pulse = design_chirped_pulse(comb.bandwidth(), eta, rabi, tau_max)
            .map_err(|e| cx.model(sec, Some("design_eta"), e))?;
        return Ok((Some(pulse), Some(ControlSource::Designed { eta, rabi, tau_max })));
    }
    let Some(family) = rc.family.as_deref() else {
        let any = rc.rabi_max_hz.is_some()
            || rc.tau_s.is_some()
            || rc.chirp_span_hz.is_some()
            || rc.chirp_product.is_some()
            || rc.t_cut_s.is_some();
        if any {
            return Err(cx.err(sec, Some("family"), "missing required key"));
        }
        return Ok((None, None));
    };
    let rabi = TAU * cx.required(sec, "rabi_max_hz", rc.rabi_max_hz)?;
    if !(rabi.is_finite() && rabi >= 0.0) {
        return Err(cx.err(sec, Some("rabi_max_hz"), "must be >= 0"));
    }
    let gate = |tau: f64| -> Result<f64, ConfigError> {
        match rc.t_cut_s {
            Some(t) => cx.positive(sec, "t_cut_s", t),
            None => Ok(DEFAULT_GATE_FACTOR * tau),
        }
    };
    let pulse = match family {
        "pi" => {
            if rc.chirp_span_hz.is_some() || rc.chirp_product.is_some() {
                return Err(cx.err(sec, Some("family"), "pi-pulses take no chirp"));
            }
            match (rc.tau_s, rc.t_cut_s) {
                (None, None) => ControlPulse::pi_area(rabi, 0.0),
                (Some(t), _) => {
                    let tau = cx.positive(sec, "tau_s", t)?;
                    ControlPulse::pi(rabi, tau, gate(tau)?, 0.0)
                }
                (None, Some(_)) => return Err(cx.err(sec, Some("tau_s"), "required when t_cut_s is given")),
            }
        }
        "chirped" => {
            let chirp = match rc.chirp_span_hz {
                Some(v) => TAU * cx.positive(sec, "chirp_span_hz", v)?,
                None => 0.5 * comb.bandwidth(),
            };
            let tau = match (rc.tau_s, rc.chirp_product) {
                (Some(_), Some(_)) => {
                    return Err(cx.err(sec, Some("chirp_product"), "give either tau_s or chirp_product"))
                }
                (Some(t), None) => cx.positive(sec, "tau_s", t)?,
                (None, Some(p)) => cx.positive(sec, "chirp_product", p)? / chirp,
                (None, None) => return Err(cx.err(sec, Some("chirp_product"), "missing required key")),
            };
            ControlPulse::allen_eberly(rabi, tau, chirp, gate(tau)?, 0.0)
        }
        other => return Err(cx.err(sec, Some("family"), format!("unknown family `{other}` (pi or chirped)"))),
    }
    .map_err(|e| cx.model(sec, None, e))?;
    Ok((Some(pulse), Some(ControlSource::Explicit)))
}

fn parse_sweep(cx: &Ctx<'_>, control: &Option<ControlPulse>, rs: RawSweep) -> Result<SweepConfig, ConfigError> {
    let sec = "sweep";
    let lo = cx.positive(sec, "rabi_min_hz", cx.required(sec, "rabi_min_hz", rs.rabi_min_hz)?)?;
    let hi = cx.positive(sec, "rabi_max_hz", cx.required(sec, "rabi_max_hz", rs.rabi_max_hz)?)?;
    if hi < lo {
        return Err(cx.err(sec, Some("rabi_max_hz"), "must not be below rabi_min_hz"));
    }
    let points = cx.count(sec, "points", rs.points.unwrap_or(20))?;
    let default_product = control
        .filter(|p| p.kind == PulseKind::AllenEberly)
        .map(|p| p.chirp_span * p.tau);
    let products = match rs.chirp_products {
        Some(v) => v,
        None => vec![default_product.unwrap_or(15.7)],
    };
    for &p in &products {
        cx.positive(sec, "chirp_products", p)?;
    }
    let names = rs.families.unwrap_or_else(|| vec!["pi".to_string(), "chirped".to_string()]);
    let mut families = Vec::new();
    for name in &names {
        match name.as_str() {
            "pi" => families.push(PulseFamily::Pi),
            "chirped" => families.extend(products.iter().map(|&product| PulseFamily::Chirped { product })),
            other => return Err(cx.err(sec, Some("families"), format!("unknown family `{other}`"))),
        }
    }
    if families.is_empty() {
        return Err(cx.err(sec, Some("families"), "must name at least one family"));
    }
    Ok(SweepConfig { rabi_min: TAU * lo, rabi_max: TAU * hi, points, families })
}

fn parse_capacity(cx: &Ctx<'_>, rc: RawCapacity) -> Result<CapacityConfig, ConfigError> {
    let sec = "capacity";
    let rabi = rc.rabi_hz.ok_or_else(|| cx.err(sec, Some("rabi_hz"), "missing required key"))?;
    if rabi.is_empty() {
        return Err(cx.err(sec, Some("rabi_hz"), "must not be empty"));
    }
    for &r in &rabi {
        cx.positive(sec, "rabi_hz", r)?;
    }
    let target = cx.positive(sec, "eta_tot_target", cx.required(sec, "eta_tot_target", rc.eta_tot_target)?)?;
    let echo = cx.positive(sec, "eta_echo", cx.required(sec, "eta_echo", rc.eta_echo)?)?;
    if echo > 1.0 {
        return Err(cx.err(sec, Some("eta_echo"), "must not exceed 1"));
    }
    Ok(CapacityConfig { rabi: rabi.iter().map(|r| TAU * r).collect(), eta_tot_target: target, eta_echo: echo })
}

fn longest_gate(comb: &CombSpec, control: Option<&ControlPulse>, sweep: Option<&SweepConfig>) -> f64 {
    let mut longest = control.map_or(0.0, |p| p.t_cut);
    if let Some(s) = sweep {
        for f in &s.families {
            longest = longest.max(f.t_cut(comb, s.rabi_min));
        }
    }
    longest
}

fn effective_config(s: &Scenario) -> String {
    let mut o = String::new();
    let c = &s.comb;
    let _ = writeln!(o, "[comb]");
    let _ = writeln!(o, "peak_width_hz = {}", float(hz(c.peak_width)));
    let _ = writeln!(o, "peak_spacing_hz = {}", float(hz(c.peak_spacing)));
    let _ = writeln!(o, "peak_count = {}", c.peak_count);
    let _ = writeln!(o, "depth_per_peak = {}", float(c.depth_per_peak));
    let _ = writeln!(o, "# bandwidth_hz = {}", float(hz(c.bandwidth())));
    let _ = writeln!(o, "# echo_time_s = {}", float(c.echo_time()));
    let _ = writeln!(o, "# finesse = {}", float(c.finesse()));

    let g = &s.signal;
    let _ = writeln!(o, "\n[signal]");
    let _ = writeln!(o, "mode_count = {}", g.mode_count);
    let _ = writeln!(o, "mode_duration_s = {}", float(g.mode_duration));
    let _ = writeln!(o, "first_mode_center_s = {}", float(g.first_center));
    let _ = writeln!(o, "carrier_detuning_hz = {}", float(hz(g.carrier_detuning)));
    let amps: Vec<String> = g.amplitudes.iter().map(|a| float(a.re)).collect();
    let _ = writeln!(o, "amplitudes = [{}]", amps.join(", "));
    let _ = writeln!(o, "# sigma_t_s = {}", float(g.sigma_t()));

    let _ = writeln!(o, "\n[control]");
    match (&s.control, &s.control_source) {
        (Some(p), Some(ControlSource::Designed { eta, rabi, tau_max })) => {
            let _ = writeln!(o, "design_eta = {}", float(*eta));
            let _ = writeln!(o, "design_rabi_hz = {}", float(hz(*rabi)));
            if let Some(t) = tau_max {
                let _ = writeln!(o, "design_tau_max_s = {}", float(*t));
            }
            let _ = writeln!(o, "# designed tau_s = {}", float(p.tau));
            let _ = writeln!(o, "# designed chirp_span_hz = {}", float(hz(p.chirp_span)));
            let _ = writeln!(o, "# designed t_cut_s = {}", float(p.t_cut));
        }
        (Some(p), _) => {
            let family = if p.kind == PulseKind::Pi { "pi" } else { "chirped" };
            let _ = writeln!(o, "family = \"{family}\"");
            let _ = writeln!(o, "rabi_max_hz = {}", float(hz(p.omega_max)));
            let _ = writeln!(o, "tau_s = {}", float(p.tau));
            if p.kind == PulseKind::AllenEberly {
                let _ = writeln!(o, "chirp_span_hz = {}", float(hz(p.chirp_span)));
                let _ = writeln!(o, "# chirp_product = {}", float(p.chirp_span * p.tau));
            }
            let _ = writeln!(o, "t_cut_s = {}", float(p.t_cut));
        }
        (None, _) => {
            let _ = writeln!(o, "# no control pulses");
        }
    }

    let _ = writeln!(o, "\n[timeline]");
    match s.storage_delay {
        Some(t) => {
            let _ = writeln!(o, "storage_delay_s = {}", float(t));
        }
        None => {
            let _ = writeln!(o, "# storage_delay_s = auto (gate length plus one mode, rounded up to the time step)");
        }
    }
    match s.t_control1 {
        Some(t) => {
            let _ = writeln!(o, "t_control1_s = {}", float(t));
        }
        None => {
            let _ = writeln!(o, "# t_control1_s = auto (midway between the last mode and the first echo)");
        }
    }

    let _ = writeln!(o, "\n[grid]");
    let _ = writeln!(o, "sample_count = {}", s.grid.sample_count());
    let _ = writeln!(o, "time_span_s = {}", float(s.grid.duration()));
    let _ = writeln!(o, "# dt_s = {}", float(s.grid.dt()));

    if let Some(sw) = &s.sweep {
        let _ = writeln!(o, "\n[sweep]");
        let _ = writeln!(o, "rabi_min_hz = {}", float(hz(sw.rabi_min)));
        let _ = writeln!(o, "rabi_max_hz = {}", float(hz(sw.rabi_max)));
        let _ = writeln!(o, "points = {}", sw.points);
        let mut names: Vec<&str> = Vec::new();
        let mut products = Vec::new();
        for f in &sw.families {
            match f {
                PulseFamily::Pi => names.push("\"pi\""),
                PulseFamily::Chirped { product } => {
                    if !names.contains(&"\"chirped\"") {
                        names.push("\"chirped\"");
                    }
                    products.push(float(*product));
                }
            }
        }
        let _ = writeln!(o, "families = [{}]", names.join(", "));
        if !products.is_empty() {
            let _ = writeln!(o, "chirp_products = [{}]", products.join(", "));
        }
    }

    if let Some(cap) = &s.capacity {
        let _ = writeln!(o, "\n[capacity]");
        let rabi: Vec<String> = cap.rabi.iter().map(|r| float(hz(*r))).collect();
        let _ = writeln!(o, "rabi_hz = [{}]", rabi.join(", "));
        let _ = writeln!(o, "eta_tot_target = {}", float(cap.eta_tot_target));
        let _ = writeln!(o, "eta_echo = {}", float(cap.eta_echo));
    }

    let _ = writeln!(o, "\n[output]");
    let _ = writeln!(o, "dir = {:?}", s.output_dir);
    o
}

/// Numerical settings shared by every command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub tol: f64,
    pub decimate: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { tol: crate::bloch::DEFAULT_TOL, decimate: true }
    }
}

impl RunOptions {
    fn protocol(&self) -> ProtocolOptions {
        ProtocolOptions { tol: self.tol, decimate: self.decimate, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub contents: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutput {
    pub files: Vec<OutputFile>,
    pub summary: String,
}

impl Scenario {
    fn header(&self) -> String {
        format!("# afcsim config_sha256={}\n", self.hash)
    }

    fn file(&self, name: &str, body: Vec<u8>) -> OutputFile {
        let mut contents = self.header();
        contents.push_str(&String::from_utf8(body).expect("CSV output is UTF-8"));
        OutputFile { name: name.to_string(), contents }
    }

    fn effective_file(&self) -> OutputFile {
        self.file("effective_config.toml", self.effective.clone().into_bytes())
    }

    fn require_control(&self) -> Result<ControlPulse, ScenarioError> {
        self.control.ok_or_else(|| {
            ScenarioError::Config(ConfigError {
                key: "control".into(),
                line: None,
                message: "this command needs control pulses or a design request".into(),
            })
        })
    }

    fn timeline_for(&self, shape: &ControlPulse) -> Result<ProtocolTimeline, Error> {
        match self.t_control1 {
            Some(t1) => {
                let tau = self.signal.mode_duration;
                let ts = self.storage_delay.unwrap_or(((shape.t_cut + tau) / self.grid.dt()).ceil() * self.grid.dt());
                ProtocolTimeline::new(self.signal.first_center, t1, ts, self.comb.echo_time())
            }
            None => ProtocolTimeline::auto(&self.comb, &self.signal, shape.t_cut, self.storage_delay, self.grid.dt()),
        }
    }
}

fn write_into<F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>>(f: F) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory cannot fail");
    buf
}

/// No-control echo: envelope and summary.
pub fn cmd_echo(s: &Scenario, _opts: &RunOptions) -> Result<CommandOutput, ScenarioError> {
    let profile = build_depth_profile(&s.comb, &s.grid.spectral())?;
    let echo = absorb_and_echo(&profile, &s.signal, &s.grid)?;
    let envelope = write_into(|w| write_envelope_csv(&s.grid, &echo.output, w));
    let summary_csv = format!(
        "eta_echo,echo_time_s,window_start_s,window_end_s\n{:?},{:?},{:?},{:?}\n",
        echo.eta_echo, echo.echo_time, echo.window.0, echo.window.1
    );
    let summary = format!(
        "eta_echo = {:.6}\necho_time = {:.6e} s (expected {:.6e} s)\necho window = [{:.6e}, {:.6e}] s\n",
        echo.eta_echo,
        echo.echo_time,
        s.comb.echo_time(),
        echo.window.0,
        echo.window.1
    );
    Ok(CommandOutput {
        files: vec![
            s.effective_file(),
            s.file("echo_envelope.csv", envelope),
            s.file("echo_summary.csv", summary_csv.into_bytes()),
        ],
        summary,
    })
}

/// Full storage run with the configured control pulses.
pub fn cmd_store(s: &Scenario, opts: &RunOptions) -> Result<CommandOutput, ScenarioError> {
    let shape = s.require_control()?;
    let profile = build_depth_profile(&s.comb, &s.grid.spectral())?;
    let tl = s.timeline_for(&shape)?;
    let (p1, p2) = (shape.with_center(tl.t_control1), shape.with_center(tl.t_control2));
    let run = run_protocol(&profile, &s.signal, &p1, &p2, &tl, &s.grid, &opts.protocol())?;
    let r = &run.result;
    let mut body = format!(
        "# echo_window_s={},{} recall_window_s={},{} storage_delay_s={}\n",
        run.echo.window.0, run.echo.window.1, run.recall_window.0, run.recall_window.1, tl.storage_delay
    )
    .into_bytes();
    body.extend(write_into(|w| write_storage_csv(std::slice::from_ref(r), w)));
    let envelope = write_into(|w| write_envelope_csv(&s.grid, &run.recalled, w));
    let mut summary = format!(
        "eta_echo = {:.6}\neta_sq = {:.6}\neta_tot = {:.6}\noverlap = {:.6}\nrecall_time = {:.6e} s (expected {:.6e} s)\nleakage = {:.6}\ncapacity_int = {}\n",
        r.eta_echo,
        r.eta_sq,
        r.eta_tot,
        r.overlap,
        r.echo_time,
        s.comb.echo_time() + tl.storage_delay,
        r.leakage,
        r.capacity_int
    );
    for w in &r.warnings {
        summary.push_str(&format!("warning: {w}\n"));
    }
    Ok(CommandOutput {
        files: vec![s.effective_file(), s.file("storage.csv", body), s.file("recall_envelope.csv", envelope)],
        summary,
    })
}

/// Rabi sweeps for every configured family.
pub fn cmd_sweep(s: &Scenario, opts: &RunOptions) -> Result<CommandOutput, ScenarioError> {
    let sweep = s.sweep.as_ref().ok_or_else(|| {
        ScenarioError::Config(ConfigError { key: "sweep".into(), line: None, message: "missing [sweep] section".into() })
    })?;
    let setup = ProtocolSetup::new(&s.comb, s.signal.clone(), s.grid, s.storage_delay)?;
    let omegas = sweep.omegas();
    let mut files = vec![s.effective_file()];
    let mut comparison =
        String::from("family,omega_rad_s,eta_sq,predicted_eta_sq,overlap,capacity_int,monotone,status\n");
    let mut summary = String::new();
    for family in &sweep.families {
        let rows = sweep_rabi(&setup, *family, &omegas, &opts.protocol());
        let mut csv = format!("{STORAGE_CSV_HEADER}\n");
        let mut failures = 0;
        for row in &rows {
            match &row.outcome {
                Ok(r) => {
                    csv.push_str(&r.csv_row());
                    csv.push('\n');
                    let _ = writeln!(
                        comparison,
                        "{},{:?},{:?},{:?},{:?},{},{},ok",
                        family.label(),
                        row.omega,
                        r.eta_sq,
                        row.predicted_eta_sq,
                        r.overlap,
                        r.capacity_int,
                        row.monotone
                    );
                }
                Err(e) => {
                    failures += 1;
                    let _ = writeln!(csv, "{:?},NaN,NaN,NaN,NaN,NaN,NaN,NaN", row.omega);
                    let status = e.to_string().replace([',', '\n'], ";");
                    let _ = writeln!(
                        comparison,
                        "{},{:?},NaN,{:?},NaN,NaN,{},error: {status}",
                        family.label(),
                        row.omega,
                        row.predicted_eta_sq,
                        row.monotone
                    );
                }
            }
        }
        let best = rows.iter().filter_map(|r| r.outcome.as_ref().ok()).map(|r| r.eta_sq).fold(f64::NAN, f64::max);
        let _ = writeln!(summary, "{}: {} points, {} failed, max eta_sq {:.4}", family.label(), rows.len(), failures, best);
        files.push(s.file(&format!("sweep_{}.csv", family.label()), csv.into_bytes()));
    }
    files.push(s.file("sweep_comparison.csv", comparison.into_bytes()));
    Ok(CommandOutput { files, summary })
}

/// Designed pulse, gate and capacity per available Rabi frequency.
pub fn cmd_capacity(s: &Scenario, _opts: &RunOptions) -> Result<CommandOutput, ScenarioError> {
    let cap = s.capacity.as_ref().ok_or_else(|| {
        ScenarioError::Config(ConfigError {
            key: "capacity".into(),
            line: None,
            message: "missing [capacity] section".into(),
        })
    })?;
    let eta = (cap.eta_tot_target / cap.eta_echo).sqrt();
    let tau_max = single_mode_tau_limit(s.comb.echo_time(), s.comb.mode_duration());
    let mut csv = String::from(
        "rabi_rad_s,tau_s,t_cut_s,capacity_real,capacity_int,predicted_eta,predicted_eta_tot,status\n",
    );
    let mut summary = format!("per-pass efficiency needed: eta = {eta:.4}\n");
    for &rabi in &cap.rabi {
        let designed = design_chirped_pulse(s.comb.bandwidth(), eta, rabi, Some(tau_max))
            .and_then(|p| multimode_capacity(&s.comb, p.t_cut).map(|c| (p, c)));
        match designed {
            Ok((p, c)) => {
                let pe = predicted_eta_chirped(p.omega_max, p.chirp_span, p.tau);
                let _ = writeln!(
                    csv,
                    "{:?},{:?},{:?},{:?},{},{:?},{:?},ok",
                    rabi,
                    p.tau,
                    p.t_cut,
                    c.real,
                    c.int,
                    pe,
                    cap.eta_echo * pe * pe
                );
                let _ = writeln!(
                    summary,
                    "Ω = 2π×{:.4} MHz: τ_c = {:.4e} s, T_cut = {:.4e} s, {} modes, η_tot = {:.4}",
                    rabi / TAU / 1e6,
                    p.tau,
                    p.t_cut,
                    c.int,
                    cap.eta_echo * pe * pe
                );
            }
            Err(e) => {
                let status = e.to_string().replace([',', '\n'], ";");
                let _ = writeln!(csv, "{rabi:?},NaN,NaN,NaN,NaN,NaN,NaN,unreachable: {status}");
                let _ = writeln!(summary, "Ω = 2π×{:.4} MHz: {e}", rabi / TAU / 1e6);
            }
        }
    }
    let limit = multimode_capacity(&s.comb, 0.0)?;
    let _ = writeln!(csv, "inf,0,0,{:?},{},1,{:?},pi_limit", limit.real, limit.int, cap.eta_echo);
    let _ = writeln!(summary, "Ω → ∞: {} modes", limit.int);
    Ok(CommandOutput { files: vec![s.effective_file(), s.file("capacity.csv", csv.into_bytes())], summary })
}

/// Pulse-design report for the configured control.
pub fn cmd_design(s: &Scenario, _opts: &RunOptions) -> Result<CommandOutput, ScenarioError> {
    let p = s.require_control()?;
    let mut csv = String::from("rabi_rad_s,chirp_span_rad_s,tau_s,t_cut_s,chirp_product,predicted_eta,capacity_int\n");
    let capacity = multimode_capacity(&s.comb, p.t_cut).map(|c| c.int.to_string()).unwrap_or_else(|_| "0".into());
    let predicted = match p.kind {
        PulseKind::AllenEberly => predicted_eta_chirped(p.omega_max, p.chirp_span, p.tau),
        PulseKind::Pi => crate::pulse::predicted_eta_pi(p.omega_max, s.comb.bandwidth()),
    };
    let _ = writeln!(
        csv,
        "{:?},{:?},{:?},{:?},{:?},{:?},{}",
        p.omega_max,
        p.chirp_span,
        p.tau,
        p.t_cut,
        p.chirp_span * p.tau,
        predicted,
        capacity
    );
    let mut summary = format!(
        "kind = {}\nrabi = 2π×{:.6} MHz\ntau_c = {:.6e} s\nt_cut = {:.6e} s\npredicted eta = {:.6}\ncapacity = {}\n",
        p.kind.name(),
        p.omega_max / TAU / 1e6,
        p.tau,
        p.t_cut,
        predicted,
        capacity
    );
    if p.kind == PulseKind::AllenEberly {
        let r = adiabaticity_report(&p, s.comb.bandwidth())?;
        let _ = writeln!(summary, "covers band = {}\nduration ok = {}", r.covers_band, r.duration_ok);
    }
    Ok(CommandOutput { files: vec![s.effective_file(), s.file("design.csv", csv.into_bytes())], summary })
}

/// Optical depth and dispersion phase of the comb.
pub fn cmd_dump_comb(s: &Scenario, _opts: &RunOptions) -> Result<CommandOutput, ScenarioError> {
    let profile = build_depth_profile(&s.comb, &s.grid.spectral())?;
    let body = write_into(|w| profile.write_csv(w));
    let summary = format!(
        "{} samples, spacing {:.6e} rad/s, span {:.6e} rad/s\n",
        profile.grid.sample_count(),
        profile.grid.spacing(),
        profile.grid.span()
    );
    Ok(CommandOutput { files: vec![s.effective_file(), s.file("comb.csv", body)], summary })
}

/// Rabi frequency and detuning sweep of the control pulse across its gate.
pub fn cmd_dump_pulse(s: &Scenario, _opts: &RunOptions) -> Result<CommandOutput, ScenarioError> {
    let p = s.require_control()?;
    let body = write_into(|w| write_pulse_csv(&p, 2001, w));
    let summary = format!("{} pulse, gate [{:.6e}, {:.6e}] s, area {:.6}\n", p.kind.name(), p.gate().0, p.gate().1, p.area());
    Ok(CommandOutput { files: vec![s.effective_file(), s.file("pulse.csv", body)], summary })
}

/// Rows of a storage table, for callers that assemble their own output.
pub fn storage_table(rows: &[StorageResult]) -> String {
    String::from_utf8(write_into(|w| write_storage_csv(rows, w))).expect("CSV output is UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MHZ: f64 = TAU * 1e6;

    fn parse(text: &str) -> Scenario {
        parse_scenario(text).unwrap()
    }

    #[test]
    fn canned_scenarios_parse() {
        for (name, text) in CANNED {
            parse_scenario(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn pr_fig2_has_both_chirp_configs() {
        let s = parse(canned("pr_fig2").unwrap());
        let products: Vec<f64> = s
            .sweep
            .unwrap()
            .families
            .iter()
            .filter_map(|f| match f {
                PulseFamily::Chirped { product } => Some(*product),
                PulseFamily::Pi => None,
            })
            .collect();
        assert_eq!(products, vec![2.0, 15.7]);
        assert!((s.comb.bandwidth() - 4.0 * MHZ).abs() < 1e-3);
    }

    #[test]
    fn eu_comb_values() {
        let s = parse(canned("eu_sectionV").unwrap());
        assert!((s.comb.peak_width - TAU * 2e3).abs() < 1e-9);
        assert!((s.comb.peak_spacing - TAU * 20e3).abs() < 1e-9);
        assert!((s.comb.bandwidth() - 12.0 * MHZ).abs() < 1e-3);
        assert_eq!(s.comb.peak_count, 600);
    }

    #[test]
    fn design_request_echoes_tau() {
        let s = parse(canned("eu_sectionV").unwrap());
        assert!(matches!(s.control_source, Some(ControlSource::Designed { .. })));
        let tau = s.control.unwrap().tau;
        assert!((tau - 1.727e-6).abs() < 0.01e-6, "{tau}");
        assert!(s.effective.contains("# designed tau_s = "));
    }

    #[test]
    fn effective_config_is_a_fixed_point() {
        for (_, text) in CANNED {
            let s = parse(text);
            let again = parse(&s.effective);
            assert_eq!(s.effective, again.effective);
            assert_eq!(s.hash, again.hash);
        }
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let text = "[comb]\npeak_width_hz = 25e3\npeak_spacing_hz = 100e3\npeak_count = 40\ndepth_per_peak = 4\nbogus = 1\n";
        let e = parse_scenario(text).unwrap_err();
        assert_eq!(e.key, "comb.bogus");
        assert_eq!(e.line, Some(6));
    }

    #[test]
    fn missing_key_names_key() {
        let text = "[comb]\npeak_width_hz = 25e3\npeak_count = 40\ndepth_per_peak = 4\n";
        let e = parse_scenario(text).unwrap_err();
        assert_eq!(e.key, "comb.peak_spacing_hz");
        assert_eq!(e.line, Some(1));
    }

    #[test]
    fn unit_violation_names_key_and_line() {
        let text = "[comb]\npeak_width_hz = -25e3\npeak_spacing_hz = 100e3\npeak_count = 40\ndepth_per_peak = 4\n";
        let e = parse_scenario(text).unwrap_err();
        assert_eq!(e.key, "comb.peak_width_hz");
        assert_eq!(e.line, Some(2));
        let text = "[comb]\npeak_width_hz = \"wide\"\npeak_spacing_hz = 100e3\npeak_count = 40\ndepth_per_peak = 4\n";
        let e = parse_scenario(text).unwrap_err();
        assert_eq!(e.key, "comb.peak_width_hz");
        assert_eq!(e.line, Some(2));
    }

    #[test]
    fn pr_fig2_echo() {
        let s = parse(canned("pr_fig2").unwrap());
        let out = cmd_echo(&s, &RunOptions::default()).unwrap();
        let summary = out.files.iter().find(|f| f.name == "echo_summary.csv").unwrap();
        let eta: f64 = summary.contents.lines().nth(2).unwrap().split(',').next().unwrap().parse().unwrap();
        assert!((eta - 0.25).abs() < 0.05);
        for f in &out.files {
            assert!(f.contents.starts_with(&format!("# afcsim config_sha256={}\n", s.hash)));
        }
    }

    #[test]
    fn empty_comb_echo_is_zero() {
        let text = "[comb]\npeak_width_hz = 25e3\npeak_spacing_hz = 100e3\npeak_count = 40\ndepth_per_peak = 0\n";
        let out = cmd_echo(&parse(text), &RunOptions::default()).unwrap();
        assert!(out.summary.starts_with("eta_echo = 0.000000"));
    }

    #[test]
    fn eu_capacity_rows() {
        let s = parse(canned("eu_sectionV").unwrap());
        let out = cmd_capacity(&s, &RunOptions::default()).unwrap();
        let csv = &out.files.iter().find(|f| f.name == "capacity.csv").unwrap().contents;
        let rows: Vec<Vec<&str>> = csv.lines().skip(2).map(|l| l.split(',').collect()).collect();
        let caps: Vec<i64> = rows.iter().map(|r| r[4].parse().unwrap()).collect();
        assert!((caps[0] - 75).abs() <= 2, "{caps:?}");
        assert!((caps[1] - 99).abs() <= 2, "{caps:?}");
        assert_eq!(*caps.last().unwrap(), 100);
        let eta_tot: f64 = rows[0][6].parse().unwrap();
        assert!((eta_tot - 0.8).abs() < 0.03);
    }

    #[test]
    fn control_conflicts_are_config_errors() {
        let base = "[comb]\npeak_width_hz = 25e3\npeak_spacing_hz = 100e3\npeak_count = 40\ndepth_per_peak = 4\n";
        let e = parse_scenario(&format!("{base}[control]\ndesign_eta = 0.9\ndesign_rabi_hz = 1e6\ntau_s = 1e-6\n"))
            .unwrap_err();
        assert_eq!(e.key, "control.tau_s");
        let e = parse_scenario(&format!("{base}[control]\nrabi_max_hz = 1e6\n")).unwrap_err();
        assert_eq!(e.key, "control.family");
        let e = parse_scenario(&format!("{base}[control]\nfamily = \"chirped\"\nrabi_max_hz = 1e6\n")).unwrap_err();
        assert_eq!(e.key, "control.chirp_product");
    }
}
