//! One-dimensional Yee-grid FDTD over horizontally layered lossy dielectrics.
//!
//! The antenna sits `air_gap` above the surface and acts as a soft electric
//! source and receiver at the same node. The returned A-scan is the scattered
//! field: the recorded total field minus a free-space reference run on the
//! same grid, so the trace is silent until the first echo returns.
//!
//! Trace time starts at the beginning of the simulation; the source pulse
//! peaks at [`AScan::t0`].

use std::f64::consts::PI;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;
const FREE_SPACE_IMPEDANCE: f64 = 376.730_313_668;

/// Cells of air kept above the antenna before the top absorbing boundary.
const TOP_PAD_CELLS: usize = 16;
/// Cells of the bottom material kept below the stack when the bottom absorbs.
const BOTTOM_PAD_CELLS: usize = 16;
/// Highest frequency resolved by the grid, as a multiple of the center frequency.
const MAX_FREQUENCY_FACTOR: f64 = 3.0;
/// Pulse half-width in units of the waveform width parameter.
const HALF_WIDTH_SIGMAS: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialLayer {
    pub relative_permittivity: f64,
    /// S/m
    pub conductivity: f64,
    /// m
    pub thickness: f64,
}

impl MaterialLayer {
    pub fn new(relative_permittivity: f64, conductivity: f64, thickness: f64) -> Result<Self> {
        let layer = Self {
            relative_permittivity,
            conductivity,
            thickness,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.relative_permittivity >= 1.0) {
            return Err(Error::Config(format!(
                "relative permittivity must be >= 1, got {}",
                self.relative_permittivity
            )));
        }
        if !(self.conductivity >= 0.0) || !self.conductivity.is_finite() {
            return Err(Error::Config(format!(
                "conductivity must be >= 0, got {}",
                self.conductivity
            )));
        }
        if !(self.thickness > 0.0) || !self.thickness.is_finite() {
            return Err(Error::Config(format!(
                "layer thickness must be > 0, got {}",
                self.thickness
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BottomBoundary {
    /// Buried metal plate.
    PerfectConductor,
    Absorbing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStack {
    /// Antenna height above the surface, m.
    pub air_gap: f64,
    /// Top layer first.
    pub layers: Vec<MaterialLayer>,
    pub bottom_boundary: BottomBoundary,
}

impl LayerStack {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("layer stack needs at least one layer".into()));
        }
        if !(self.air_gap >= 0.0) || !self.air_gap.is_finite() {
            return Err(Error::Config(format!("air gap must be >= 0, got {}", self.air_gap)));
        }
        self.layers.iter().try_for_each(MaterialLayer::validate)
    }

    pub fn total_depth(&self) -> f64 {
        self.layers.iter().map(|l| l.thickness).sum()
    }

    pub fn max_permittivity(&self) -> f64 {
        self.layers.iter().map(|l| l.relative_permittivity).fold(1.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveformKind {
    Ricker,
    Gaussian,
    GaussianDerivative,
}

impl FromStr for WaveformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ricker" => Ok(Self::Ricker),
            "gaussian" => Ok(Self::Gaussian),
            "gaussian_derivative" => Ok(Self::GaussianDerivative),
            other => Err(Error::Config(format!("unknown waveform kind `{other}`"))),
        }
    }
}

/// Width parameter of every pulse shape: `1 / (pi f)`.
pub fn pulse_sigma(center_frequency: f64) -> f64 {
    1.0 / (PI * center_frequency)
}

/// Time from pulse onset to its peak; outside `t_peak ± half_width` the
/// pulse is below 1e-13 of its peak.
pub fn pulse_half_width(center_frequency: f64) -> f64 {
    HALF_WIDTH_SIGMAS * pulse_sigma(center_frequency)
}

/// Source excitation at time `t` relative to the pulse peak, peak-normalized.
///
/// The Ricker wavelet is the negated, normalized second derivative of a
/// Gaussian with peak frequency `f`.
pub fn waveform(kind: WaveformKind, f: f64, t: f64) -> f64 {
    debug_assert!(f > 0.0);
    let u = t / pulse_sigma(f);
    let g = (-u * u).exp();
    match kind {
        WaveformKind::Ricker => (1.0 - 2.0 * u * u) * g,
        WaveformKind::Gaussian => g,
        // d/du exp(-u^2) peaks at |u| = 1/sqrt(2) with magnitude sqrt(2) e^{-1/2}.
        WaveformKind::GaussianDerivative => -2.0 * u * g / (std::f64::consts::SQRT_2 * (-0.5f64).exp()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadarConfig {
    pub waveform_kind: WaveformKind,
    /// Hz
    pub center_frequency: f64,
    /// Trace duration from simulation start, s.
    pub time_window: f64,
    pub cells_per_min_wavelength: u32,
    pub courant_factor: f64,
    pub gain: f64,
    /// Standard deviation of additive noise relative to the clean trace peak.
    pub noise_std: f64,
    /// Standard deviation of a per-trace time shift, s.
    pub time_jitter: f64,
    /// Output samples per trace after resampling.
    pub trace_len: usize,
}

impl Default for RadarConfig {
    fn default() -> Self {
        Self {
            waveform_kind: WaveformKind::Ricker,
            center_frequency: 2.7e9,
            time_window: 8e-9,
            // 20 cells leave over 2 output samples of phase lag at high permittivity.
            cells_per_min_wavelength: 40,
            courant_factor: 0.95,
            gain: 1.0,
            noise_std: 0.0,
            time_jitter: 0.0,
            trace_len: 1640,
        }
    }
}

impl RadarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.courant_factor > 1.0 {
            return Err(Error::Stability(self.courant_factor));
        }
        if !(self.courant_factor > 0.0) {
            return Err(Error::Config(format!(
                "courant factor must be in (0, 1], got {}",
                self.courant_factor
            )));
        }
        if !(self.center_frequency > 0.0) || !self.center_frequency.is_finite() {
            return Err(Error::Config("center frequency must be > 0".into()));
        }
        if !(self.time_window > 0.0) || !self.time_window.is_finite() {
            return Err(Error::Config("time window must be > 0".into()));
        }
        if self.cells_per_min_wavelength < 10 {
            return Err(Error::Config(format!(
                "need at least 10 cells per minimum wavelength, got {}",
                self.cells_per_min_wavelength
            )));
        }
        if self.trace_len < 2 {
            return Err(Error::Config("trace length must be >= 2".into()));
        }
        if !self.gain.is_finite() || !(self.noise_std >= 0.0) || !(self.time_jitter >= 0.0) {
            return Err(Error::Config(
                "gain must be finite; noise_std and time_jitter must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Output sample spacing.
    pub fn output_dt(&self) -> f64 {
        self.time_window / self.trace_len as f64
    }

    /// Time of the source peak within the trace.
    pub fn source_peak_time(&self) -> f64 {
        pulse_half_width(self.center_frequency)
    }
}

/// A uniformly sampled radar trace.
#[derive(Debug, Clone, PartialEq)]
pub struct AScan {
    pub samples: Vec<f64>,
    /// Sample spacing, s.
    pub dt: f64,
    /// Time of the source pulse peak, s.
    pub t0: f64,
}

impl AScan {
    pub fn new(samples: Vec<f64>, dt: f64) -> Self {
        Self { samples, dt, t0: 0.0 }
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    pub fn peak_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Linear interpolation at time `t`; zero outside the recorded span.
    pub fn value_at(&self, t: f64) -> f64 {
        interpolate(&self.samples, self.dt, t)
    }
}

/// Two-way travel time from the antenna to interface `interface_index`
/// (0 is the surface, `k` the bottom of layer `k`).
pub fn expected_two_way_delay(stack: &LayerStack, interface_index: usize) -> Result<f64> {
    if interface_index > stack.layers.len() {
        return Err(Error::Config(format!(
            "interface {interface_index} out of range for {} layers",
            stack.layers.len()
        )));
    }
    let in_layers: f64 = stack.layers[..interface_index]
        .iter()
        .map(|l| 2.0 * l.thickness * l.relative_permittivity.sqrt())
        .sum();
    Ok((2.0 * stack.air_gap + in_layers) / SPEED_OF_LIGHT)
}

/// Per-node material coefficients of one run.
struct Grid {
    ca: Vec<f64>,
    cb: Vec<f64>,
    bottom: Termination,
}

enum Termination {
    Conductor,
    /// First-order Mur with the given coefficient.
    Mur(f64),
}

/// Piecewise-constant depth profile below the antenna.
struct Profile {
    /// (start depth, end depth, permittivity, conductivity); the last segment is open-ended.
    segments: Vec<(f64, f64, f64, f64)>,
}

impl Profile {
    fn of(stack: &LayerStack) -> Self {
        let mut segments = vec![(f64::NEG_INFINITY, stack.air_gap, 1.0, 0.0)];
        let mut z = stack.air_gap;
        for l in &stack.layers {
            segments.push((z, z + l.thickness, l.relative_permittivity, l.conductivity));
            z += l.thickness;
        }
        let last = stack.layers.last().expect("validated non-empty");
        segments.push((z, f64::INFINITY, last.relative_permittivity, last.conductivity));
        Self { segments }
    }

    fn air() -> Self {
        Self {
            segments: vec![(f64::NEG_INFINITY, f64::INFINITY, 1.0, 0.0)],
        }
    }

    /// Arithmetic mean of (permittivity, conductivity) over `[lo, hi]`.
    fn average(&self, lo: f64, hi: f64) -> (f64, f64) {
        let (mut eps, mut sig) = (0.0, 0.0);
        for &(a, b, e, s) in &self.segments {
            let w = (hi.min(b) - lo.max(a)).max(0.0);
            eps += w * e;
            sig += w * s;
        }
        let span = hi - lo;
        (eps / span, sig / span)
    }
}

struct Discretization {
    dx: f64,
    dt: f64,
    steps: usize,
    /// Cells from antenna to the stack bottom.
    span_cells: usize,
}

fn discretize(stack: &LayerStack, radar: &RadarConfig) -> Discretization {
    let f_max = MAX_FREQUENCY_FACTOR * radar.center_frequency;
    let dx_max = SPEED_OF_LIGHT / (f_max * stack.max_permittivity().sqrt()) / radar.cells_per_min_wavelength as f64;
    // The stack bottom falls exactly on a node.
    let span = stack.air_gap + stack.total_depth();
    let span_cells = ((span / dx_max).ceil() as usize).max(1);
    let dx = span / span_cells as f64;
    let dt = radar.courant_factor * dx / SPEED_OF_LIGHT;
    let steps = (radar.time_window / dt).ceil() as usize + 2;
    Discretization {
        dx,
        dt,
        steps,
        span_cells,
    }
}

fn build_grid(profile: &Profile, nodes: usize, bottom: BottomBoundary, d: &Discretization, courant: f64) -> Grid {
    let antenna = TOP_PAD_CELLS;
    let mut ca = vec![1.0; nodes];
    let mut cb = vec![0.0; nodes];
    let mut last_eps = 1.0;
    for k in 0..nodes {
        let z = (k as f64 - antenna as f64) * d.dx;
        let (eps, sig) = profile.average(z - 0.5 * d.dx, z + 0.5 * d.dx);
        let loss = sig * d.dt / (2.0 * VACUUM_PERMITTIVITY * eps);
        ca[k] = (1.0 - loss) / (1.0 + loss);
        cb[k] = courant * FREE_SPACE_IMPEDANCE / eps / (1.0 + loss);
        last_eps = eps;
    }
    let bottom = match bottom {
        BottomBoundary::PerfectConductor => Termination::Conductor,
        BottomBoundary::Absorbing => {
            let s = courant / last_eps.sqrt();
            Termination::Mur((s - 1.0) / (s + 1.0))
        }
    };
    Grid { ca, cb, bottom }
}

/// Runs the leapfrog loop and returns the field at the antenna for every step.
fn run(grid: &Grid, source: &[f64], courant: f64) -> Vec<f64> {
    let nodes = grid.ca.len();
    let last = nodes - 1;
    let antenna = TOP_PAD_CELLS;
    let mut e = vec![0.0; nodes];
    let mut h = vec![0.0; nodes - 1];
    let ch = courant / FREE_SPACE_IMPEDANCE;
    let mur_top = (courant - 1.0) / (courant + 1.0);
    let mut record = Vec::with_capacity(source.len());
    for (n, &s) in source.iter().enumerate() {
        // The wavefront advances at most one cell per step.
        let front = (antenna + n + 2).min(last);
        for k in 0..front {
            h[k] += ch * (e[k + 1] - e[k]);
        }
        let (e0, e1) = (e[0], e[1]);
        let (el, elm1) = (e[last], e[last - 1]);
        for k in 1..front.min(last) {
            e[k] = grid.ca[k] * e[k] + grid.cb[k] * (h[k] - h[k - 1]);
        }
        e[antenna] += s;
        e[0] = e1 + mur_top * (e[1] - e0);
        match grid.bottom {
            Termination::Conductor => e[last] = 0.0,
            Termination::Mur(c) => {
                if front >= last {
                    e[last] = elm1 + c * (e[last - 1] - el);
                }
            }
        }
        record.push(e[antenna]);
    }
    record
}

fn interpolate(samples: &[f64], dt: f64, t: f64) -> f64 {
    if t < 0.0 || samples.is_empty() {
        return 0.0;
    }
    let x = t / dt;
    let i = x.floor() as usize;
    if i + 1 >= samples.len() {
        return if i + 1 == samples.len() && x == i as f64 {
            samples[i]
        } else {
            0.0
        };
    }
    let w = x - i as f64;
    samples[i] * (1.0 - w) + samples[i + 1] * w
}

/// Noise-free scattered-field trace of `stack`, resampled to `radar.trace_len`.
pub fn simulate_clean(stack: &LayerStack, radar: &RadarConfig) -> Result<AScan> {
    stack.validate()?;
    radar.validate()?;
    let t0 = radar.source_peak_time();
    let first_echo = t0 + expected_two_way_delay(stack, 0)?;
    if radar.time_window <= first_echo {
        return Err(Error::Config(format!(
            "time window {:.3e} s ends before the first echo at {:.3e} s",
            radar.time_window, first_echo
        )));
    }

    let d = discretize(stack, radar);
    let source: Vec<f64> = (0..d.steps)
        .map(|n| waveform(radar.waveform_kind, radar.center_frequency, n as f64 * d.dt - t0))
        .collect();

    let scene_nodes = TOP_PAD_CELLS
        + d.span_cells
        + 1
        + match stack.bottom_boundary {
            BottomBoundary::PerfectConductor => 0,
            BottomBoundary::Absorbing => BOTTOM_PAD_CELLS,
        };
    let scene = build_grid(
        &Profile::of(stack),
        scene_nodes,
        stack.bottom_boundary,
        &d,
        radar.courant_factor,
    );
    let total = run(&scene, &source, radar.courant_factor);

    // Deep enough that nothing returns from the reference bottom within the window.
    let reference_nodes = TOP_PAD_CELLS + d.steps + 4;
    let reference = build_grid(
        &Profile::air(),
        reference_nodes,
        BottomBoundary::Absorbing,
        &d,
        radar.courant_factor,
    );
    let incident = run(&reference, &source, radar.courant_factor);

    let scattered: Vec<f64> = total.iter().zip(&incident).map(|(a, b)| a - b).collect();
    let dt_out = radar.output_dt();
    let samples = (0..radar.trace_len)
        .map(|i| interpolate(&scattered, d.dt, i as f64 * dt_out))
        .collect();
    Ok(AScan {
        samples,
        dt: dt_out,
        t0,
    })
}

/// Applies the gain, time jitter and additive noise of `radar` to a clean trace.
pub fn apply_domain_gap(clean: &AScan, radar: &RadarConfig, seed: u64) -> AScan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift = if radar.time_jitter > 0.0 {
        Normal::new(0.0, radar.time_jitter)
            .expect("finite std")
            .sample(&mut rng)
    } else {
        0.0
    };
    let noise_scale = radar.noise_std * clean.peak_abs();
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let samples = (0..clean.n())
        .map(|i| {
            let base = if shift == 0.0 {
                clean.samples[i]
            } else {
                clean.value_at(clean.time(i) - shift)
            };
            let mut v = radar.gain * base;
            if noise_scale > 0.0 {
                v += noise_scale * noise.sample(&mut rng);
            }
            v
        })
        .collect();
    AScan {
        samples,
        dt: clean.dt,
        t0: clean.t0,
    }
}

/// Simulated trace with the radar's domain-gap perturbations drawn from `seed`.
pub fn simulate_ascan(stack: &LayerStack, radar: &RadarConfig, seed: u64) -> Result<AScan> {
    let clean = simulate_clean(stack, radar)?;
    Ok(apply_domain_gap(&clean, radar, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(eps: f64, sigma: f64, d: f64) -> LayerStack {
        LayerStack {
            air_gap: 0.02,
            layers: vec![MaterialLayer::new(eps, sigma, d).unwrap()],
            bottom_boundary: BottomBoundary::PerfectConductor,
        }
    }

    #[test]
    fn ricker_peak_is_one() {
        assert_eq!(waveform(WaveformKind::Ricker, 2.7e9, 0.0), 1.0);
    }

    #[test]
    fn gaussian_tail_vanishes() {
        let f = 1e9;
        let s = pulse_sigma(f);
        for k in [6.01, 7.0, 10.0] {
            assert!(waveform(WaveformKind::Gaussian, f, k * s).abs() < 1e-12);
            assert!(waveform(WaveformKind::Gaussian, f, -k * s).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_derivative_peak_normalized() {
        let f = 1e9;
        let t = pulse_sigma(f) / std::f64::consts::SQRT_2;
        assert!((waveform(WaveformKind::GaussianDerivative, f, -t) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ricker_integrates_to_zero() {
        // Composite Simpson quadrature over +-12 sigma.
        let f = 2.7e9;
        let s = pulse_sigma(f);
        let n = 20_000;
        let (a, b) = (-12.0 * s, 12.0 * s);
        let dt = (b - a) / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * waveform(WaveformKind::Ricker, f, a + i as f64 * dt);
        }
        let integral = acc * dt / 3.0;
        assert!(integral.abs() < 1e-8 * dt, "integral {integral}");
    }

    #[test]
    fn unknown_waveform_is_config_error() {
        assert!(matches!("square".parse::<WaveformKind>(), Err(Error::Config(_))));
        assert_eq!("ricker".parse::<WaveformKind>().unwrap(), WaveformKind::Ricker);
    }

    #[test]
    fn delay_examples() {
        let mut s = single(4.0, 0.0, 0.15);
        s.air_gap = 0.0;
        let t = expected_two_way_delay(&s, 1).unwrap();
        assert!((t - 2.0 * 0.15 * 2.0 / SPEED_OF_LIGHT).abs() < 1e-18);
        assert!((t - 2.0e-9).abs() < 1e-11);

        let vac = LayerStack {
            air_gap: 0.1,
            layers: vec![
                MaterialLayer::new(1.0, 0.0, 0.1).unwrap(),
                MaterialLayer::new(1.0, 0.0, 0.1).unwrap(),
            ],
            bottom_boundary: BottomBoundary::Absorbing,
        };
        let t = expected_two_way_delay(&vac, 2).unwrap();
        assert!((t - 0.6 / SPEED_OF_LIGHT).abs() < 1e-18);
        assert!((t - 2.0e-9).abs() < 1e-11);
        assert!(expected_two_way_delay(&vac, 3).is_err());
        assert!(expected_two_way_delay(&vac, 0).unwrap() < expected_two_way_delay(&vac, 1).unwrap());
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(MaterialLayer::new(0.5, 0.0, 0.1).is_err());
        assert!(MaterialLayer::new(4.0, -0.1, 0.1).is_err());
        assert!(MaterialLayer::new(4.0, 0.0, 0.0).is_err());
        let radar = RadarConfig {
            courant_factor: 1.2,
            ..RadarConfig::default()
        };
        assert!(matches!(
            simulate_clean(&single(4.0, 0.0, 0.15), &radar),
            Err(Error::Stability(_))
        ));
        let radar = RadarConfig {
            time_window: 0.2e-9,
            ..RadarConfig::default()
        };
        assert!(matches!(
            simulate_clean(&single(4.0, 0.0, 0.15), &radar),
            Err(Error::Config(_))
        ));
        let radar = RadarConfig {
            cells_per_min_wavelength: 5,
            ..RadarConfig::default()
        };
        assert!(radar.validate().is_err());
        let empty = LayerStack {
            air_gap: 0.0,
            layers: vec![],
            bottom_boundary: BottomBoundary::Absorbing,
        };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn clean_gap_knobs_are_identity() {
        let radar = RadarConfig::default();
        let clean = simulate_clean(&single(6.0, 0.01, 0.2), &radar).unwrap();
        let noisy = simulate_ascan(&single(6.0, 0.01, 0.2), &radar, 99).unwrap();
        assert_eq!(clean, noisy);
    }

    #[test]
    fn gap_is_deterministic_in_seed() {
        let radar = RadarConfig {
            gain: 0.8,
            noise_std: 0.02,
            time_jitter: 20e-12,
            ..RadarConfig::default()
        };
        let s = single(6.0, 0.01, 0.2);
        let a = simulate_ascan(&s, &radar, 7).unwrap();
        let b = simulate_ascan(&s, &radar, 7).unwrap();
        let c = simulate_ascan(&s, &radar, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn interpolation_edges() {
        let s = [1.0, 3.0];
        assert_eq!(interpolate(&s, 1.0, 0.5), 2.0);
        assert_eq!(interpolate(&s, 1.0, 1.0), 3.0);
        assert_eq!(interpolate(&s, 1.0, -0.1), 0.0);
        assert_eq!(interpolate(&s, 1.0, 1.5), 0.0);
    }
}
