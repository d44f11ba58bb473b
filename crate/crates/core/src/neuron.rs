//! Opamp neuron: differential transimpedance, clipping activation and output
//! scaling, plus the temperature-compensated output stage.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::device::{DeviceSpec, MemristorState, Thermal};
use crate::rng::{self, stream};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum NeuronFault {
    #[default]
    None,
    StuckHigh,
    StuckLow,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeuronParams {
    /// Transimpedance feedback resistance, ohms.
    pub r_f: f64,
    /// Small-signal slope of the clipping stage.
    pub gain: f64,
    /// Clip level of the differential stage, volts.
    pub v_sat: f64,
    /// Hidden-layer output range after scaling, volts.
    pub out_swing: f64,
    /// Output neurons skip the scaling stage.
    pub is_output_layer: bool,
    pub fault: NeuronFault,
}

impl Default for NeuronParams {
    fn default() -> Self {
        NeuronParams {
            r_f: 2000.0,
            gain: 10.0,
            v_sat: 5.0,
            out_swing: 0.2,
            is_output_layer: false,
            fault: NeuronFault::None,
        }
    }
}

impl NeuronParams {
    pub fn output() -> Self {
        NeuronParams {
            is_output_layer: true,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_f > 0.0
            && self.gain > 0.0
            && self.v_sat > 0.0
            && self.out_swing > 0.0
            && self.out_swing <= self.v_sat)
        {
            return Err(Error::config(format!(
                "neuron needs r_f > 0, gain > 0, v_sat > 0, 0 < out_swing <= v_sat; got {self:?}"
            )));
        }
        Ok(())
    }

    /// Output scale applied after the clip.
    #[inline]
    pub fn scale(&self) -> f64 {
        if self.is_output_layer {
            1.0
        } else {
            self.out_swing / self.v_sat
        }
    }

    /// Largest magnitude the neuron can emit.
    #[inline]
    pub fn swing(&self) -> f64 {
        if self.is_output_layer {
            self.v_sat
        } else {
            self.out_swing
        }
    }

    /// Output as a function of the transimpedance voltage `r_f * (i+ - i-)`.
    #[inline]
    pub fn activate(&self, v_diff: f64) -> f64 {
        match self.fault {
            NeuronFault::StuckHigh => self.swing(),
            NeuronFault::StuckLow => -self.swing(),
            NeuronFault::None => (self.gain * v_diff).clamp(-self.v_sat, self.v_sat) * self.scale(),
        }
    }

    /// d(output)/d(v_diff): `gain * scale` in the linear region, 0 when clipped or faulted.
    #[inline]
    pub fn slope(&self, v_diff: f64) -> f64 {
        if self.fault != NeuronFault::None || (self.gain * v_diff).abs() >= self.v_sat {
            0.0
        } else {
            self.gain * self.scale()
        }
    }
}

pub fn neuron_out(i_plus: f64, i_minus: f64, p: &NeuronParams) -> f64 {
    p.activate(p.r_f * (i_plus - i_minus))
}

/// Derivative of [`neuron_out`] with respect to the transimpedance voltage.
pub fn neuron_derivative(i_plus: f64, i_minus: f64, p: &NeuronParams) -> f64 {
    p.slope(p.r_f * (i_plus - i_minus))
}

/// Marks `round(frac * n)` neurons stuck high and low (disjoint, seeded), then
/// applies per-neuron swing overrides `(index, out_swing)`.
pub fn inject_neuron_faults(
    bank: &[NeuronParams],
    stuck_high_frac: f64,
    stuck_low_frac: f64,
    swing_overrides: &[(usize, f64)],
    seed: u64,
) -> Result<Vec<NeuronParams>> {
    let n = bank.len();
    for f in [stuck_high_frac, stuck_low_frac] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::config(format!("fault fraction {f} outside [0, 1]")));
        }
    }
    let n_high = (stuck_high_frac * n as f64).round() as usize;
    let n_low = (stuck_low_frac * n as f64).round() as usize;
    if n_high + n_low > n {
        return Err(Error::config("stuck-neuron fractions exceed the bank size"));
    }
    let mut out = bank.to_vec();
    if n_high + n_low > 0 {
        let mut r = rng::rng(rng::derive(seed, stream::NEURON_FAULTS, 0));
        let picks = index::sample(&mut r, n, n_high + n_low);
        for (k, i) in picks.iter().enumerate() {
            out[i].fault = if k < n_high {
                NeuronFault::StuckHigh
            } else {
                NeuronFault::StuckLow
            };
        }
    }
    for &(i, swing) in swing_overrides {
        if i >= n {
            return Err(Error::Index {
                row: i,
                col: 0,
                rows: n,
                cols: 1,
            });
        }
        out[i].out_swing = swing;
        out[i].validate()?;
    }
    Ok(out)
}

/// Swing overrides of the hybrid-training demo bank (10 hidden neurons):
/// neurons 0, 6, 7 at 0.4 V, neurons 1, 3, 4 at 0.1 V, the rest at default.
pub fn demo_swing_overrides() -> Vec<(usize, f64)> {
    vec![(0, 0.4), (6, 0.4), (7, 0.4), (1, 0.1), (3, 0.1), (4, 0.1)]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Feedback {
    /// Temperature-independent resistor, ohms.
    FixedResistor(f64),
    /// Memristor in the opamp feedback path.
    Memristor(MemristorState),
}

impl Feedback {
    pub fn conductance(&self, t: f64) -> f64 {
        match self {
            Feedback::FixedResistor(r) => 1.0 / r,
            Feedback::Memristor(m) => m.conductance_at(t),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompensationParams {
    pub feedback: Feedback,
    /// Bias-path conductance, S (drifts with its own temperature coefficient).
    pub g_bias: f64,
    pub v_bias: f64,
    /// Drift law of the bias conductance.
    pub thermal: Thermal,
}

/// `-(I_w + g_bias(t) * v_bias) / g_fb(t)`.
pub fn compensated_output(weighted_current: f64, comp: &CompensationParams, t: f64) -> Result<f64> {
    if comp.g_bias < 0.0 {
        return Err(Error::config("g_bias must be non-negative"));
    }
    let g_fb = comp.feedback.conductance(t);
    if !(g_fb.is_finite() && g_fb > 0.0) {
        return Err(Error::SingularFeedback(g_fb));
    }
    let g_bias = comp.thermal.drifted(comp.g_bias, t);
    Ok(-(weighted_current + g_bias * comp.v_bias) / g_fb)
}

/// Single-ended vector-by-matrix multiplier used for the temperature study.
///
/// Column `j` computes `-(sum_i G_ij(t) v_i + G_BIAS(t) v_bias) / g_fb(t)`.
/// Weights in [-1, 1] map to `g_bias + w * span / 2`, so the array sits
/// around the bias conductance. The memristive feedback is a device
/// programmed to `g_bias`; the baseline is a fixed resistor `1 / g_bias`,
/// which gives both circuits the same gain at the reference temperature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftStudy {
    pub inputs: usize,
    pub outputs: usize,
    /// Centre of the weight mapping and the G_BIAS conductance, S.
    pub g_bias: f64,
    /// Full conductance span of the weight mapping, S.
    pub span: f64,
    pub v_bias: f64,
    /// Inputs are drawn uniformly from `[0, v_in_max]`.
    pub v_in_max: f64,
    pub patterns: usize,
    pub seed: u64,
}

impl Default for DriftStudy {
    fn default() -> Self {
        DriftStudy {
            inputs: 16,
            outputs: 10,
            g_bias: 90e-6,
            span: 20e-6,
            v_bias: -0.1,
            v_in_max: 0.2,
            patterns: 40,
            seed: 0,
        }
    }
}

/// Worst-case output drift at one temperature offset, volts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftPoint {
    pub delta_t: f64,
    pub fixed_resistor: f64,
    pub memristor: f64,
}

impl DriftStudy {
    pub fn validate(&self, spec: &DeviceSpec) -> Result<()> {
        if self.inputs == 0 || self.outputs == 0 || self.patterns == 0 {
            return Err(Error::config("drift study needs inputs, outputs and patterns"));
        }
        let lo = self.g_bias - self.span / 2.0;
        let hi = self.g_bias + self.span / 2.0;
        if !(self.span >= 0.0 && lo >= spec.g_min && hi <= spec.g_max) {
            return Err(Error::config(format!(
                "weight mapping [{lo:e}, {hi:e}] S leaves the device range"
            )));
        }
        if !(self.v_in_max > 0.0 && self.v_in_max.is_finite() && self.v_bias.is_finite()) {
            return Err(Error::config("drift study voltages must be finite, v_in_max > 0"));
        }
        Ok(())
    }

    /// Maximum |v(t_ref + dT) - v(t_ref)| over all patterns and columns, for
    /// both feedback kinds.
    pub fn run(&self, spec: &DeviceSpec, delta_ts: &[f64]) -> Result<Vec<DriftPoint>> {
        use rand::Rng;
        self.validate(spec)?;
        let thermal = Thermal::from_spec(spec);
        let mut r = rng::rng(rng::derive(self.seed, stream::INIT, 0));
        let g: Vec<f64> = (0..self.inputs * self.outputs)
            .map(|_| self.g_bias + r.random_range(-1.0..=1.0) * self.span / 2.0)
            .collect();
        let v: Vec<f64> = (0..self.inputs * self.patterns)
            .map(|_| r.random_range(0.0..=self.v_in_max))
            .collect();
        let mut fb = crate::device::sample_device(&DeviceSpec::ideal(), self.seed, true)?;
        fb.g = self.g_bias;
        fb.thermal = thermal;
        let stage = |feedback: Feedback| CompensationParams {
            feedback,
            g_bias: self.g_bias,
            v_bias: self.v_bias,
            thermal,
        };
        let memristive = stage(Feedback::Memristor(fb));
        let fixed = stage(Feedback::FixedResistor(1.0 / self.g_bias));
        let outputs = |comp: &CompensationParams, t: f64| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(self.patterns * self.outputs);
            for p in 0..self.patterns {
                let x = &v[p * self.inputs..(p + 1) * self.inputs];
                for j in 0..self.outputs {
                    let i: f64 = x
                        .iter()
                        .enumerate()
                        .map(|(i, vi)| thermal.drifted(g[i * self.outputs + j], t) * vi)
                        .sum();
                    out.push(compensated_output(i, comp, t)?);
                }
            }
            Ok(out)
        };
        let max_drift = |comp: &CompensationParams, dt: f64| -> Result<f64> {
            let a = outputs(comp, thermal.t_ref)?;
            let b = outputs(comp, thermal.t_ref + dt)?;
            Ok(a.iter().zip(&b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        };
        delta_ts
            .iter()
            .map(|&dt| {
                Ok(DriftPoint {
                    delta_t: dt,
                    fixed_resistor: max_drift(&fixed, dt)?,
                    memristor: max_drift(&memristive, dt)?,
                })
            })
            .collect()
    }
}
