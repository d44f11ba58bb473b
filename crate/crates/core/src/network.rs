//! Two crossbars and two neuron banks wired as a 3-layer perceptron.
//!
//! Layer `l` has `inputs + 1` rows (the last row is the bias, driven at
//! `+input_voltage`) and `2 * neurons` columns: columns `(2j, 2j + 1)` hold the
//! `(G+, G-)` pair of neuron `j`. Unit weights `w` in `[-1, 1]` map to
//! measured conductances `g_mid +/- scale * w / 2`.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::bench::{score, Dataset, Score};
use crate::crossbar::{Crossbar, ReadNoise, ReadSnapshot, DEFAULT_READ_VOLTAGE};
use crate::device::DeviceSpec;
use crate::grid::Grid;
use crate::neuron::NeuronParams;
use crate::rng;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub n_inputs: usize,
    pub n_hidden: usize,
    pub n_outputs: usize,
    pub input_voltage: f64,
    /// Lowest / highest measured conductance used by the weight mapping, S.
    /// Kept inside the device window so read asymmetry cannot push a target
    /// out of reach.
    pub map_g_lo: f64,
    pub map_g_hi: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            n_inputs: 16,
            n_hidden: 10,
            n_outputs: 4,
            input_voltage: 0.2,
            map_g_lo: 12e-6,
            map_g_hi: 100e-6,
        }
    }
}

impl NetworkConfig {
    pub fn letters(n_outputs: usize) -> Self {
        NetworkConfig {
            n_outputs,
            ..Default::default()
        }
    }

    pub fn mnist(n_hidden: usize) -> Self {
        NetworkConfig {
            n_inputs: 784,
            n_hidden,
            n_outputs: 10,
            ..Default::default()
        }
    }

    pub fn rows1(&self) -> usize {
        self.n_inputs + 1
    }

    pub fn rows2(&self) -> usize {
        self.n_hidden + 1
    }

    pub fn device_count(&self) -> usize {
        self.rows1() * 2 * self.n_hidden + self.rows2() * 2 * self.n_outputs
    }

    /// Conductance per unit weight.
    pub fn unit_scale(&self) -> f64 {
        self.map_g_hi - self.map_g_lo
    }

    pub fn g_mid(&self) -> f64 {
        0.5 * (self.map_g_lo + self.map_g_hi)
    }

    pub fn validate(&self, spec: &DeviceSpec) -> Result<()> {
        if self.n_inputs == 0 || self.n_hidden == 0 || self.n_outputs == 0 {
            return Err(Error::config("network layers must be non-empty"));
        }
        if !(self.input_voltage > 0.0 && self.input_voltage <= crate::device::READ_LIMIT) {
            return Err(Error::config(format!(
                "input_voltage must be in (0, {}], got {}",
                crate::device::READ_LIMIT,
                self.input_voltage
            )));
        }
        if !(spec.g_min <= self.map_g_lo && self.map_g_lo < self.map_g_hi && self.map_g_hi <= spec.g_max)
        {
            return Err(Error::config(format!(
                "mapping range [{}, {}] must lie inside the device window [{}, {}]",
                self.map_g_lo, self.map_g_hi, spec.g_min, spec.g_max
            )));
        }
        Ok(())
    }

    /// Input row voltages for a pattern: `V (2p - 1)` per pixel, then the bias.
    pub fn encode(&self, pixels: &[f64]) -> Result<Vec<f64>> {
        if pixels.len() != self.n_inputs {
            return Err(Error::Dimension {
                what: "input pattern",
                expected: self.n_inputs,
                got: pixels.len(),
            });
        }
        let v = self.input_voltage;
        let mut out: Vec<f64> = pixels.iter().map(|&p| v * (2.0 * p - 1.0)).collect();
        out.push(v);
        Ok(out)
    }
}

/// Unit weights of both layers; row `inputs` of each grid is the bias weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w1: Grid<f64>,
    pub w2: Grid<f64>,
}

impl Weights {
    pub fn zeros(cfg: &NetworkConfig) -> Self {
        Weights {
            w1: Grid::filled(cfg.rows1(), cfg.n_hidden, 0.0),
            w2: Grid::filled(cfg.rows2(), cfg.n_outputs, 0.0),
        }
    }

    pub fn check(&self, cfg: &NetworkConfig) -> Result<()> {
        self.w1.ensure_dims(cfg.rows1(), cfg.n_hidden, "layer-1 weights")?;
        self.w2.ensure_dims(cfg.rows2(), cfg.n_outputs, "layer-2 weights")?;
        if self.w1.iter().chain(self.w2.iter()).any(|w| !w.is_finite()) {
            return Err(Error::config("weights must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum WeightScale {
    /// `(g_hi - g_lo) / max|w|`.
    Auto,
    /// Fixed conductance per unit weight.
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightMap {
    pub g_plus: Grid<f64>,
    pub g_minus: Grid<f64>,
    /// Conductance per unit weight.
    pub scale: f64,
}

impl WeightMap {
    /// Crossbar layout: column `2j` = `g_plus[.., j]`, `2j + 1` = `g_minus[.., j]`.
    pub fn interleaved(&self) -> Grid<f64> {
        let (rows, n) = self.g_plus.dims();
        Grid::from_fn(rows, 2 * n, |r, c| {
            if c % 2 == 0 {
                *self.g_plus.get(r, c / 2)
            } else {
                *self.g_minus.get(r, c / 2)
            }
        })
    }
}

/// Signed weights to clamped differential conductance pairs around the range midpoint.
/// An all-zero matrix under [`WeightScale::Auto`] maps everything to mid-range with scale 0.
pub fn map_weights(w: &Grid<f64>, g_lo: f64, g_hi: f64, scale: WeightScale) -> Result<WeightMap> {
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::config("weights must be finite"));
    }
    if !(g_lo < g_hi) {
        return Err(Error::config("mapping needs g_lo < g_hi"));
    }
    let s = match scale {
        WeightScale::Fixed(s) => s,
        WeightScale::Auto => {
            let m = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if m == 0.0 {
                0.0
            } else {
                (g_hi - g_lo) / m
            }
        }
    };
    let mid = 0.5 * (g_lo + g_hi);
    Ok(WeightMap {
        g_plus: w.map(|&x| (mid + 0.5 * s * x).clamp(g_lo, g_hi)),
        g_minus: w.map(|&x| (mid - 0.5 * s * x).clamp(g_lo, g_hi)),
        scale: s,
    })
}

/// Unit weights from a crossbar-layout conductance grid: `(g+ - g-) / scale`.
pub fn weights_from_pairs(g: &Grid<f64>, scale: f64) -> Grid<f64> {
    Grid::from_fn(g.rows(), g.cols() / 2, |r, j| {
        (g.get(r, 2 * j) - g.get(r, 2 * j + 1)) / scale
    })
}

#[derive(Clone, Debug)]
pub struct Network {
    pub config: NetworkConfig,
    pub xbar1: Crossbar,
    pub xbar2: Crossbar,
    pub hidden: Vec<NeuronParams>,
    pub output: Vec<NeuronParams>,
    pub scale1: f64,
    pub scale2: f64,
    /// Multiplicative read-noise sigma applied during inference.
    pub read_noise_sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub class: usize,
    pub outputs: Vec<f64>,
    pub hidden: Vec<f64>,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = k;
        }
    }
    best
}

impl Network {
    /// Formed, unprogrammed arrays (every device at `g_min`) and default neuron banks.
    pub fn assemble(config: &NetworkConfig, spec: &DeviceSpec, seed: u64) -> Result<Self> {
        config.validate(spec)?;
        let xbar1 = Crossbar::build(config.rows1(), 2 * config.n_hidden, spec, rng::derive(seed, 100, 1))?;
        let xbar2 = Crossbar::build(config.rows2(), 2 * config.n_outputs, spec, rng::derive(seed, 100, 2))?;
        let s = config.unit_scale();
        Ok(Network {
            config: config.clone(),
            xbar1,
            xbar2,
            hidden: vec![NeuronParams::default(); config.n_hidden],
            output: vec![NeuronParams::output(); config.n_outputs],
            scale1: s,
            scale2: s,
            read_noise_sigma: 0.0,
        })
    }

    pub fn device_count(&self) -> usize {
        self.xbar1.device_count() + self.xbar2.device_count()
    }

    pub fn spec(&self) -> &DeviceSpec {
        self.xbar1.spec()
    }

    /// Measured-conductance targets (crossbar layout) for both layers.
    pub fn targets(&self, w: &Weights) -> Result<(Grid<f64>, Grid<f64>)> {
        w.check(&self.config)?;
        let (lo, hi) = (self.config.map_g_lo, self.config.map_g_hi);
        let t1 = map_weights(&w.w1, lo, hi, WeightScale::Fixed(self.scale1))?.interleaved();
        let t2 = map_weights(&w.w2, lo, hi, WeightScale::Fixed(self.scale2))?.interleaved();
        Ok((t1, t2))
    }

    /// Lossless import: every working device is set directly to the stored
    /// conductance whose read at `+DEFAULT_READ_VOLTAGE` equals its target.
    pub fn program_ideal(&mut self, w: &Weights) -> Result<()> {
        let (t1, t2) = self.targets(w)?;
        for (xbar, t) in [(&mut self.xbar1, t1), (&mut self.xbar2, t2)] {
            for (r, c, &m) in t.indexed() {
                let kv = xbar.cell(r, c).kappa * DEFAULT_READ_VOLTAGE;
                xbar.force_conductance(r, c, m / (1.0 + kv))?;
            }
        }
        Ok(())
    }

    /// Sets every device to the middle of the mapping range (all weights zero).
    pub fn program_mid(&mut self) -> Result<()> {
        self.program_ideal(&Weights::zeros(&self.config))
    }

    /// Weights implied by the stored conductances at the reference temperature.
    pub fn effective_weights(&self) -> Weights {
        let read = |x: &Crossbar| {
            Grid::from_fn(x.rows(), x.cols(), |r, c| {
                let cell = x.cell(r, c);
                cell.current_unchecked(DEFAULT_READ_VOLTAGE, cell.thermal.t_ref) / DEFAULT_READ_VOLTAGE
            })
        };
        Weights {
            w1: weights_from_pairs(&read(&self.xbar1), self.scale1),
            w2: weights_from_pairs(&read(&self.xbar2), self.scale2),
        }
    }

    pub fn infer(&self, pixels: &[f64], t: f64) -> Result<Inference> {
        self.infer_with(pixels, t, &mut ReadNoise::off())
    }

    pub fn infer_with(&self, pixels: &[f64], t: f64, noise: &mut ReadNoise) -> Result<Inference> {
        let v1 = self.config.encode(pixels)?;
        let mut i1 = vec![0.0; self.xbar1.cols()];
        self.xbar1.vmm_into(&v1, t, noise, &mut i1)?;
        let mut v2: Vec<f64> = self
            .hidden
            .iter()
            .enumerate()
            .map(|(j, p)| crate::neuron::neuron_out(i1[2 * j], i1[2 * j + 1], p))
            .collect();
        let hidden = v2.clone();
        v2.push(self.config.input_voltage);
        let mut i2 = vec![0.0; self.xbar2.cols()];
        self.xbar2.vmm_into(&v2, t, noise, &mut i2)?;
        let outputs: Vec<f64> = self
            .output
            .iter()
            .enumerate()
            .map(|(k, p)| crate::neuron::neuron_out(i2[2 * k], i2[2 * k + 1], p))
            .collect();
        Ok(Inference {
            class: argmax(&outputs),
            outputs,
            hidden,
        })
    }

    /// Classifies every pattern. With nonzero `read_noise_sigma` the noise
    /// stream is seeded by `noise_seed`.
    pub fn predict(&self, data: &Dataset, t: f64, noise_seed: u64) -> Result<Vec<usize>> {
        let mut noise = ReadNoise::new(self.read_noise_sigma, noise_seed)?;
        if noise.is_off() {
            let fast = FastForward::new(self, t);
            return data.inputs.iter().map(|x| fast.class(self, x)).collect();
        }
        data.inputs
            .iter()
            .map(|x| self.infer_with(x, t, &mut noise).map(|r| r.class))
            .collect()
    }

    pub fn evaluate(&self, data: &Dataset, t: f64, noise_seed: u64) -> Result<Score> {
        if data.is_empty() {
            return Err(Error::config("cannot evaluate on an empty dataset"));
        }
        let preds = self.predict(data, t, noise_seed)?;
        score(&preds, &data.labels, self.config.n_outputs.max(data.n_classes))
    }

    pub fn snapshot(&self) -> NetworkSnapshot {
        NetworkSnapshot {
            config: self.config.clone(),
            spec: self.spec().clone(),
            conductance1: self.xbar1.conductances(),
            conductance2: self.xbar2.conductances(),
            hidden: self.hidden.clone(),
            output: self.output.clone(),
            scale1: self.scale1,
            scale2: self.scale2,
        }
    }
}

/// Noise-free inference through frozen read snapshots of both crossbars.
pub(crate) struct FastForward {
    pub s1: ReadSnapshot,
    pub s2: ReadSnapshot,
}

impl FastForward {
    pub fn new(net: &Network, t: f64) -> Self {
        FastForward {
            s1: net.xbar1.read_snapshot(t),
            s2: net.xbar2.read_snapshot(t),
        }
    }

    pub fn class(&self, net: &Network, pixels: &[f64]) -> Result<usize> {
        let v1 = net.config.encode(pixels)?;
        let mut i1 = vec![0.0; self.s1.cols()];
        self.s1.vmm_into(&v1, &mut i1)?;
        let mut v2: Vec<f64> = net
            .hidden
            .iter()
            .enumerate()
            .map(|(j, p)| crate::neuron::neuron_out(i1[2 * j], i1[2 * j + 1], p))
            .collect();
        v2.push(net.config.input_voltage);
        let mut i2 = vec![0.0; self.s2.cols()];
        self.s2.vmm_into(&v2, &mut i2)?;
        let out: Vec<f64> = net
            .output
            .iter()
            .enumerate()
            .map(|(k, p)| crate::neuron::neuron_out(i2[2 * k], i2[2 * k + 1], p))
            .collect();
        Ok(argmax(&out))
    }
}

/// Serializable view of a network's programmed state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSnapshot {
    pub config: NetworkConfig,
    pub spec: DeviceSpec,
    pub conductance1: Grid<f64>,
    pub conductance2: Grid<f64>,
    pub hidden: Vec<NeuronParams>,
    pub output: Vec<NeuronParams>,
    pub scale1: f64,
    pub scale2: f64,
}

impl NetworkSnapshot {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_conductance_csv<W: Write>(&self, layer: usize, out: W) -> io::Result<()> {
        match layer {
            1 => self.conductance1.write_csv(out),
            _ => self.conductance2.write_csv(out),
        }
    }
}

/// Pure-arithmetic forward pass of an ideal network: weights, scales and neuron
/// banks, no devices.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftwareModel {
    pub config: NetworkConfig,
    pub weights: Weights,
    pub scale1: f64,
    pub scale2: f64,
    pub hidden: Vec<NeuronParams>,
    pub output: Vec<NeuronParams>,
}

impl SoftwareModel {
    pub fn new(net: &Network, weights: &Weights) -> Self {
        SoftwareModel {
            config: net.config.clone(),
            weights: weights.clone(),
            scale1: net.scale1,
            scale2: net.scale2,
            hidden: net.hidden.clone(),
            output: net.output.clone(),
        }
    }

    pub fn forward(&self, pixels: &[f64]) -> Result<Inference> {
        let v1 = self.config.encode(pixels)?;
        let layer = |v: &[f64], w: &Grid<f64>, s: f64, bank: &[NeuronParams]| -> Vec<f64> {
            (0..w.cols())
                .map(|j| {
                    let dot: f64 = v.iter().enumerate().map(|(i, &x)| x * w.get(i, j)).sum();
                    bank[j].activate(bank[j].r_f * s * dot)
                })
                .collect()
        };
        let hidden = layer(&v1, &self.weights.w1, self.scale1, &self.hidden);
        let mut v2 = hidden.clone();
        v2.push(self.config.input_voltage);
        let outputs = layer(&v2, &self.weights.w2, self.scale2, &self.output);
        Ok(Inference {
            class: argmax(&outputs),
            outputs,
            hidden,
        })
    }

    pub fn evaluate(&self, data: &Dataset) -> Result<Score> {
        let preds = data
            .inputs
            .iter()
            .map(|x| self.forward(x).map(|r| r.class))
            .collect::<Result<Vec<_>>>()?;
        score(&preds, &data.labels, self.config.n_outputs.max(data.n_classes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn default_network_has_428_devices() {
        let net = Network::assemble(&NetworkConfig::default(), &DeviceSpec::default(), 1).unwrap();
        assert_eq!(net.device_count(), 428);
        assert_eq!((net.xbar1.rows(), net.xbar1.cols()), (17, 20));
        assert_eq!((net.xbar2.rows(), net.xbar2.cols()), (11, 8));
    }

    #[test]
    fn mnist_scale_is_accepted() {
        let net = Network::assemble(&NetworkConfig::mnist(300), &DeviceSpec::default(), 1).unwrap();
        assert_eq!(net.xbar1.rows(), 785);
        assert_eq!(net.xbar2.cols(), 20);
    }

    #[test]
    fn mapping_examples() {
        let w = Grid::from_vec(1, 3, vec![0.0, 2.0, -1.0]).unwrap();
        let m = map_weights(&w, 10e-6, 100e-6, WeightScale::Auto).unwrap();
        assert!((m.g_plus.get(0, 0) - 55e-6).abs() < 1e-18);
        assert!((m.g_minus.get(0, 0) - 55e-6).abs() < 1e-18);
        assert!((m.g_plus.get(0, 1) - 100e-6).abs() < 1e-18);
        assert!((m.g_minus.get(0, 1) - 10e-6).abs() < 1e-18);
        let back = weights_from_pairs(&m.interleaved(), m.scale);
        let again = map_weights(&back, 10e-6, 100e-6, WeightScale::Fixed(m.scale)).unwrap();
        for (a, b) in again.g_plus.iter().zip(m.g_plus.iter()) {
            assert!((a - b).abs() < 1e-18);
        }
        let z = map_weights(&Grid::filled(2, 2, 0.0), 10e-6, 100e-6, WeightScale::Auto).unwrap();
        assert_eq!(z.scale, 0.0);
    }

    #[test]
    fn zero_weights_give_zero_outputs_and_class_zero() {
        let mut net = Network::assemble(&NetworkConfig::default(), &DeviceSpec::ideal(), 1).unwrap();
        net.program_mid().unwrap();
        let r = net.infer(&[1.0; 16], 25.0).unwrap();
        assert!(r.outputs.iter().all(|&o| o.abs() < 1e-12));
        assert_eq!(r.class, 0);
    }

    #[test]
    fn wrong_pixel_count_is_rejected() {
        let net = Network::assemble(&NetworkConfig::default(), &DeviceSpec::ideal(), 1).unwrap();
        assert!(matches!(net.infer(&[0.0; 15], 25.0), Err(Error::Dimension { .. })));
    }

    fn random_weights(cfg: &NetworkConfig, seed: u64) -> Weights {
        let mut r = rng::rng(seed);
        let mut w = Weights::zeros(cfg);
        for x in w.w1.as_mut_slice().iter_mut().chain(w.w2.as_mut_slice()) {
            *x = r.random_range(-1.0..1.0);
        }
        w
    }

    #[test]
    fn hardware_matches_software_on_ideal_devices() {
        let cfg = NetworkConfig::default();
        let mut net = Network::assemble(&cfg, &DeviceSpec::ideal(), 3).unwrap();
        let w = random_weights(&cfg, 4);
        net.program_ideal(&w).unwrap();
        let soft = SoftwareModel::new(&net, &w);
        let mut r = rng::rng(9);
        for _ in 0..200 {
            let x: Vec<f64> = (0..16).map(|_| r.random_range(0..2) as f64).collect();
            let hw = net.infer(&x, 25.0).unwrap();
            let sw = soft.forward(&x).unwrap();
            for (a, b) in hw.outputs.iter().chain(&hw.hidden).zip(sw.outputs.iter().chain(&sw.hidden)) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-3), "{a} vs {b}");
            }
            assert!(hw.hidden.iter().all(|h| h.abs() <= 0.2 + 1e-15));
        }
    }

    #[test]
    fn inference_never_moves_second_layer_devices() {
        let cfg = NetworkConfig::default();
        let mut net = Network::assemble(&cfg, &DeviceSpec::default(), 5).unwrap();
        net.program_ideal(&random_weights(&cfg, 6)).unwrap();
        let before = net.xbar2.conductances();
        let mut r = rng::rng(1);
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..16).map(|_| r.random_range(0..2) as f64).collect();
            net.infer(&x, 25.0).unwrap();
        }
        assert_eq!(net.xbar2.conductances(), before);
    }

    #[test]
    fn argmax_ties_and_scaling() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        let v = [0.3, -1.0, 0.7, 0.69];
        let scaled: Vec<f64> = v.iter().map(|x| x * 7.5).collect();
        assert_eq!(argmax(&v), argmax(&scaled));
    }

    #[test]
    fn assemble_is_deterministic() {
        let a = Network::assemble(&NetworkConfig::default(), &DeviceSpec::default(), 11).unwrap();
        let b = Network::assemble(&NetworkConfig::default(), &DeviceSpec::default(), 11).unwrap();
        assert_eq!(a.snapshot(), b.snapshot());
        assert!(a.snapshot().to_json().unwrap().contains("conductance1"));
    }
}
