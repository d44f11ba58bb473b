//! Behavioral model of a single Pt/Al2O3/TiO2-x/Ti/Pt memristor.
//!
//! Switching kinetics are linear in the over-threshold voltage with
//! multiplicative soft-bound windows:
//!
//! ```text
//! v >  v_set   : dg = +beta_set   * (v - v_set)    * width * (g_hi - g) / (g_hi - g_lo)
//! v < -v_reset : dg = -beta_reset * (|v| - v_reset) * width * (g - g_lo) / (g_hi - g_lo)
//! ```
//!
//! Reads follow `I = g_eff * v * (1 + kappa * v)` with
//! `g_eff = g * (1 + alpha(g) * (t - t_ref))` and
//! `alpha(g) = alpha0 * (g_ref / g)^alpha_exponent`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

/// Largest |v| accepted by a read. Every threshold sampled from the default
/// spec is well above this.
pub const READ_LIMIT: f64 = 0.5;

/// Sampled thresholds are truncated from below at this value.
pub const THRESHOLD_FLOOR: f64 = 0.05;

/// Relative conductance change that counts as switching when measuring thresholds.
pub const SWITCHING_CRITERION: f64 = 0.05;

/// Population statistics of a device technology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceSpec {
    pub g_min: f64,
    pub g_max: f64,
    pub vset_mean: f64,
    pub vset_sigma: f64,
    pub vreset_mean: f64,
    pub vreset_sigma: f64,
    /// S / (V s) over threshold.
    pub beta_set: f64,
    pub beta_reset: f64,
    /// Quadratic read nonlinearity, 1/V.
    pub kappa_mean: f64,
    pub kappa_sigma: f64,
    /// Temperature coefficient (1/K) at `g_ref`.
    pub alpha0: f64,
    pub g_ref: f64,
    pub alpha_exponent: f64,
    /// Reference temperature, Celsius.
    pub t_ref: f64,
    pub forming_voltage_mean: f64,
    pub forming_voltage_sigma: f64,
    pub forming_fail_prob: f64,
}

impl Default for DeviceSpec {
    fn default() -> Self {
        DeviceSpec {
            g_min: 10e-6,
            g_max: 100e-6,
            vset_mean: 1.0,
            vset_sigma: 0.15,
            vreset_mean: 1.0,
            vreset_sigma: 0.15,
            beta_set: 50.0,
            beta_reset: 50.0,
            kappa_mean: 0.25,
            kappa_sigma: 0.1,
            alpha0: 2e-3,
            g_ref: 10e-6,
            alpha_exponent: 1.0,
            t_ref: 25.0,
            forming_voltage_mean: 2.5,
            forming_voltage_sigma: 0.3,
            forming_fail_prob: 0.1,
        }
    }
}

impl DeviceSpec {
    /// Same spec without device-to-device threshold spread and without read asymmetry.
    pub fn ideal() -> Self {
        DeviceSpec {
            vset_sigma: 0.0,
            vreset_sigma: 0.0,
            kappa_mean: 0.0,
            kappa_sigma: 0.0,
            ..DeviceSpec::default()
        }
    }

    pub fn g_mid(&self) -> f64 {
        0.5 * (self.g_min + self.g_max)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.g_min,
            self.g_max,
            self.vset_mean,
            self.vset_sigma,
            self.vreset_mean,
            self.vreset_sigma,
            self.beta_set,
            self.beta_reset,
            self.kappa_mean,
            self.kappa_sigma,
            self.alpha0,
            self.g_ref,
            self.alpha_exponent,
            self.t_ref,
            self.forming_voltage_mean,
            self.forming_voltage_sigma,
            self.forming_fail_prob,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return Err(Error::config("device spec contains a non-finite value"));
        }
        if !(self.g_min > 0.0 && self.g_min < self.g_max) {
            return Err(Error::config(format!(
                "need 0 < g_min < g_max, got g_min={} g_max={}",
                self.g_min, self.g_max
            )));
        }
        if self.vset_mean <= 0.0 || self.vreset_mean <= 0.0 {
            return Err(Error::config("threshold means must be positive"));
        }
        if self.vset_sigma < 0.0
            || self.vreset_sigma < 0.0
            || self.kappa_sigma < 0.0
            || self.forming_voltage_sigma < 0.0
        {
            return Err(Error::config("standard deviations must be non-negative"));
        }
        if self.beta_set < 0.0 || self.beta_reset < 0.0 {
            return Err(Error::config("switching rates must be non-negative"));
        }
        if self.g_ref <= 0.0 {
            return Err(Error::config("g_ref must be positive"));
        }
        if !(0.0..=1.0).contains(&self.forming_fail_prob) {
            return Err(Error::config(format!(
                "forming_fail_prob must be in [0, 1], got {}",
                self.forming_fail_prob
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Defect {
    #[default]
    None,
    StuckOn,
    StuckOff,
}

/// How stress pulses are sourced (forming and threshold staircases).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PulseMode {
    #[default]
    VoltagePulses,
    CurrentPulses,
}

/// Conductance-dependent linear temperature drift.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thermal {
    pub alpha0: f64,
    pub g_ref: f64,
    pub exponent: f64,
    pub t_ref: f64,
}

impl Thermal {
    pub fn from_spec(spec: &DeviceSpec) -> Self {
        Thermal {
            alpha0: spec.alpha0,
            g_ref: spec.g_ref,
            exponent: spec.alpha_exponent,
            t_ref: spec.t_ref,
        }
    }

    /// Temperature coefficient at conductance `g`, 1/K.
    pub fn alpha(&self, g: f64) -> f64 {
        if self.exponent == 0.0 {
            self.alpha0
        } else {
            self.alpha0 * (self.g_ref / g).powf(self.exponent)
        }
    }

    /// `g * (1 + alpha(g) * (t - t_ref))`; exactly `g` at the reference temperature.
    #[inline]
    pub fn drifted(&self, g: f64, t: f64) -> f64 {
        if t == self.t_ref {
            g
        } else {
            g * (1.0 + self.alpha(g) * (t - self.t_ref))
        }
    }
}

/// One device instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemristorState {
    /// Programmed conductance, S.
    pub g: f64,
    /// Per-device switching window. Equal to the spec's `[g_min, g_max]`
    /// unless R_ON/R_OFF variation has been applied.
    pub g_lo: f64,
    pub g_hi: f64,
    pub v_set: f64,
    /// Positive magnitude; applied with negative polarity.
    pub v_reset: f64,
    pub beta_set: f64,
    pub beta_reset: f64,
    pub kappa: f64,
    pub thermal: Thermal,
    /// Voltage needed to form the filament.
    pub v_form: f64,
    pub defect: Defect,
    pub formed: bool,
}

impl MemristorState {
    pub fn alpha(&self) -> f64 {
        self.thermal.alpha(self.g)
    }

    pub fn is_stuck(&self) -> bool {
        self.defect != Defect::None
    }

    /// Effective small-signal conductance at temperature `t`.
    #[inline]
    pub fn conductance_at(&self, t: f64) -> f64 {
        self.thermal.drifted(self.g, t)
    }

    /// Read current at `v` volts and `t` Celsius.
    pub fn read_current(&self, v: f64, t: f64) -> Result<f64> {
        check_read(v)?;
        Ok(self.current_unchecked(v, t))
    }

    #[inline]
    pub(crate) fn current_unchecked(&self, v: f64, t: f64) -> f64 {
        self.conductance_at(t) * v * (1.0 + self.kappa * v)
    }

    /// Returns the state after one rectangular pulse.
    pub fn apply_pulse(&self, v: f64, width: f64) -> Result<MemristorState> {
        let mut next = self.clone();
        next.pulse(v, width)?;
        Ok(next)
    }

    /// In-place form of [`apply_pulse`](Self::apply_pulse). Returns whether `g` changed.
    pub fn pulse(&mut self, v: f64, width: f64) -> Result<bool> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::PulseWidth(width));
        }
        if !self.formed {
            return Err(Error::FormingRequired);
        }
        Ok(self.pulse_unchecked(v, width))
    }

    #[inline]
    pub(crate) fn pulse_unchecked(&mut self, v: f64, width: f64) -> bool {
        if self.defect != Defect::None {
            return false;
        }
        let span = self.g_hi - self.g_lo;
        let before = self.g;
        if v > self.v_set {
            let window = (self.g_hi - self.g) / span;
            self.g += self.beta_set * (v - self.v_set) * width * window;
        } else if v < -self.v_reset {
            let window = (self.g - self.g_lo) / span;
            self.g -= self.beta_reset * (-v - self.v_reset) * width * window;
        } else {
            return false;
        }
        self.g = self.g.clamp(self.g_lo, self.g_hi);
        self.g != before
    }

    /// Forces a stuck defect, pinning `g` at the corresponding bound.
    pub fn make_stuck(&mut self, defect: Defect) {
        self.defect = defect;
        match defect {
            Defect::StuckOn => self.g = self.g_hi,
            Defect::StuckOff => self.g = self.g_lo,
            Defect::None => {}
        }
    }

    /// Measures set and reset thresholds with staircase pulse sweeps.
    pub fn extract_thresholds(&self, sweep: &ThresholdSweep) -> Result<Thresholds> {
        sweep.validate()?;
        if !self.formed {
            return Err(Error::FormingRequired);
        }
        Ok(Thresholds {
            set: self.staircase(sweep, 1.0),
            reset: self.staircase(sweep, -1.0),
        })
    }

    fn staircase(&self, sweep: &ThresholdSweep, polarity: f64) -> Option<f64> {
        let mut dev = self.clone();
        let steps = (sweep.v_max / sweep.v_step).floor() as usize;
        for k in 1..=steps {
            let level = k as f64 * sweep.v_step;
            let before = dev.g;
            // A current source drives |v| = i / g across the device.
            let amplitude = match sweep.mode {
                PulseMode::VoltagePulses => level,
                PulseMode::CurrentPulses => level * sweep.g_nominal / before,
            };
            dev.pulse_unchecked(polarity * amplitude, sweep.width);
            if (dev.g - before).abs() > SWITCHING_CRITERION * before {
                return Some(amplitude);
            }
        }
        None
    }
}

/// Staircase parameters for threshold extraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdSweep {
    pub v_step: f64,
    pub v_max: f64,
    pub width: f64,
    pub mode: PulseMode,
    /// In current mode the staircase steps `i = level * g_nominal`.
    pub g_nominal: f64,
}

impl Default for ThresholdSweep {
    fn default() -> Self {
        ThresholdSweep {
            v_step: 0.05,
            v_max: 3.0,
            width: 5e-6,
            mode: PulseMode::VoltagePulses,
            g_nominal: 55e-6,
        }
    }
}

impl ThresholdSweep {
    pub fn with_step(v_step: f64) -> Self {
        ThresholdSweep {
            v_step,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.v_step > 0.0 && self.v_max > self.v_step && self.width > 0.0) {
            return Err(Error::config(
                "threshold sweep needs v_step > 0, v_max > v_step, width > 0",
            ));
        }
        if self.mode == PulseMode::CurrentPulses && self.g_nominal <= 0.0 {
            return Err(Error::config("current-mode sweep needs g_nominal > 0"));
        }
        Ok(())
    }
}

/// Result of [`MemristorState::extract_thresholds`]; `None` means no switching
/// was observed up to the sweep limit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub set: Option<f64>,
    pub reset: Option<f64>,
}

pub(crate) fn check_read(v: f64) -> Result<()> {
    if v.abs() > READ_LIMIT || !v.is_finite() {
        return Err(Error::ReadRegime {
            v,
            limit: READ_LIMIT,
        });
    }
    Ok(())
}

fn truncated_normal<R: Rng>(rng: &mut R, mean: f64, sigma: f64, floor: f64) -> f64 {
    if sigma == 0.0 {
        return mean.max(floor);
    }
    let dist = Normal::new(mean, sigma).expect("sigma validated non-negative");
    for _ in 0..1000 {
        let x = dist.sample(rng);
        if x > floor {
            return x;
        }
    }
    floor
}

fn normal<R: Rng>(rng: &mut R, mean: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return mean;
    }
    Normal::new(mean, sigma)
        .expect("sigma validated non-negative")
        .sample(rng)
}

/// Draws one device. A formed device starts at `g_min`; a virgin one sits
/// below `g_min` in its high-resistive state.
pub fn sample_device(spec: &DeviceSpec, seed: u64, formed: bool) -> Result<MemristorState> {
    spec.validate()?;
    Ok(sample_unchecked(spec, seed, formed))
}

pub(crate) fn sample_unchecked(spec: &DeviceSpec, seed: u64, formed: bool) -> MemristorState {
    let mut rng = rng::rng(seed);
    let v_set = truncated_normal(&mut rng, spec.vset_mean, spec.vset_sigma, THRESHOLD_FLOOR);
    let v_reset = truncated_normal(
        &mut rng,
        spec.vreset_mean,
        spec.vreset_sigma,
        THRESHOLD_FLOOR,
    );
    let kappa = normal(&mut rng, spec.kappa_mean, spec.kappa_sigma);
    let v_form = truncated_normal(
        &mut rng,
        spec.forming_voltage_mean,
        spec.forming_voltage_sigma,
        THRESHOLD_FLOOR,
    );
    let virgin: f64 = rng.random_range(0.05..0.15);
    MemristorState {
        g: if formed { spec.g_min } else { virgin * spec.g_min },
        g_lo: spec.g_min,
        g_hi: spec.g_max,
        v_set,
        v_reset,
        beta_set: spec.beta_set,
        beta_reset: spec.beta_reset,
        kappa,
        thermal: Thermal::from_spec(spec),
        v_form,
        defect: Defect::None,
        formed,
    }
}
