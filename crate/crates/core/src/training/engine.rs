//! Backpropagation through the hardware forward model.
//!
//! Unconstrained layers compute `z_j = r_f * s * sum_i v_i w_ij`, the same
//! arithmetic as [`SoftwareModel`]. Constrained layers (defect-aware training)
//! model each differential pair cell by cell: measured conductances affine in
//! `w`, frozen stuck cells, and the read nonlinearity
//! `I = m v (1 + k v) / (1 + k v_read)` of a cell whose read at `+v_read` is `m`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bench::Dataset;
use crate::crossbar::kappa_from_asymmetry;
use crate::device::Defect;
use crate::grid::Grid;
use crate::network::{argmax, Network, NetworkConfig, SoftwareModel, Weights};
use crate::neuron::NeuronParams;
use crate::rng::{self, stream};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Loss {
    /// Squared error of output voltages against `+/- target_v`; outputs already
    /// beyond their target on the correct side contribute nothing.
    #[default]
    SquaredError,
    /// Softmax over output voltages divided by `ce_temperature`.
    CrossEntropySoftmaxReadout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainHyper {
    pub learning_rate: f64,
    /// Multiplicative learning-rate factor applied after every epoch.
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: Loss,
    pub seed: u64,
    /// Stop once training fidelity (percent) reaches this value.
    pub early_stop_fidelity: Option<f64>,
    pub target_v: f64,
    pub ce_temperature: f64,
    /// Initial weights are uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
    /// Learning-rate multiplier for the first layer, whose gradients are much
    /// smaller than the second layer's on wide inputs.
    pub hidden_lr_factor: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            learning_rate: 0.2,
            lr_decay: 1.0,
            epochs: 300,
            batch_size: 1,
            loss: Loss::SquaredError,
            seed: 0,
            early_stop_fidelity: None,
            target_v: 1.0,
            ce_temperature: 1.0,
            init_scale: 0.3,
            hidden_lr_factor: 1.0,
        }
    }
}

impl TrainHyper {
    /// Settings for the wide 784-input network.
    pub fn mnist() -> Self {
        TrainHyper {
            learning_rate: 0.008,
            lr_decay: 0.9,
            epochs: 20,
            init_scale: 0.1,
            hidden_lr_factor: 100.0,
            ..TrainHyper::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::config("lr_decay must be in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(self.hidden_lr_factor > 0.0 && self.hidden_lr_factor.is_finite()) {
            return Err(Error::config("hidden_lr_factor must be positive"));
        }
        if !(self.target_v > 0.0 && self.ce_temperature > 0.0 && self.init_scale >= 0.0) {
            return Err(Error::config(
                "target_v and ce_temperature must be positive, init_scale non-negative",
            ));
        }
        Ok(())
    }
}

/// Everything the forward model needs except the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Arch {
    pub config: NetworkConfig,
    pub scale1: f64,
    pub scale2: f64,
    pub hidden: Vec<NeuronParams>,
    pub output: Vec<NeuronParams>,
}

impl Arch {
    pub fn of(net: &Network) -> Self {
        Arch {
            config: net.config.clone(),
            scale1: net.scale1,
            scale2: net.scale2,
            hidden: net.hidden.clone(),
            output: net.output.clone(),
        }
    }

    pub fn software(&self, w: &Weights) -> SoftwareModel {
        SoftwareModel {
            config: self.config.clone(),
            weights: w.clone(),
            scale1: self.scale1,
            scale2: self.scale2,
            hidden: self.hidden.clone(),
            output: self.output.clone(),
        }
    }
}

/// One differential pair in measured-conductance terms:
/// `m+ = a_p + b_p w`, `m- = a_m + b_m w`, `w` in `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairModel {
    pub a_p: f64,
    pub b_p: f64,
    pub a_m: f64,
    pub b_m: f64,
    /// `1 + k v` numerator coefficient and `1 / (1 + k v_read)` for each cell.
    pub k_p: f64,
    pub n_p: f64,
    pub k_m: f64,
    pub n_m: f64,
    pub lo: f64,
    pub hi: f64,
}

impl PairModel {
    #[inline]
    fn current(&self, w: f64, v: f64) -> f64 {
        let mp = self.a_p + self.b_p * w;
        let mm = self.a_m + self.b_m * w;
        mp * v * (1.0 + self.k_p * v) * self.n_p - mm * v * (1.0 + self.k_m * v) * self.n_m
    }

    #[inline]
    fn d_dw(&self, v: f64) -> f64 {
        self.b_p * v * (1.0 + self.k_p * v) * self.n_p - self.b_m * v * (1.0 + self.k_m * v) * self.n_m
    }

    #[inline]
    fn d_dv(&self, w: f64, v: f64) -> f64 {
        let mp = self.a_p + self.b_p * w;
        let mm = self.a_m + self.b_m * w;
        mp * (1.0 + 2.0 * self.k_p * v) * self.n_p - mm * (1.0 + 2.0 * self.k_m * v) * self.n_m
    }

    /// Measured-conductance targets `(m+, m-)` for weight `w`.
    pub fn targets(&self, w: f64) -> (f64, f64) {
        (self.a_p + self.b_p * w, self.a_m + self.b_m * w)
    }
}

/// Per-pair models of one layer; `rows x neurons`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerConstraints {
    pub pairs: Grid<PairModel>,
}

impl LayerConstraints {
    /// Builds pair models from diagnosed stuck flags, measured conductances
    /// (reads at `+v_read`) and asymmetry percentages, all in crossbar layout.
    pub fn from_maps(
        cfg: &NetworkConfig,
        scale: f64,
        flags: &Grid<Defect>,
        measured: &Grid<f64>,
        asymmetry: &Grid<f64>,
        v_read: f64,
    ) -> Result<Self> {
        let (rows, cols) = flags.dims();
        measured.ensure_dims(rows, cols, "measured conductance map")?;
        asymmetry.ensure_dims(rows, cols, "asymmetry map")?;
        if cols % 2 != 0 {
            return Err(Error::config("crossbar maps need an even column count"));
        }
        let (lo_m, hi_m, mid) = (cfg.map_g_lo, cfg.map_g_hi, cfg.g_mid());
        let kappa = |r, c| kappa_from_asymmetry(*asymmetry.get(r, c), v_read);
        let pairs = Grid::from_fn(rows, cols / 2, |r, j| {
            let (cp, cm) = (2 * j, 2 * j + 1);
            let (k_p, k_m) = (kappa(r, cp), kappa(r, cm));
            let (sp, sm) = (*flags.get(r, cp) != Defect::None, *flags.get(r, cm) != Defect::None);
            let (gp, gm) = (*measured.get(r, cp), *measured.get(r, cm));
            let (a_p, b_p, a_m, b_m, lo, hi) = match (sp, sm) {
                (false, false) => (mid, 0.5 * scale, mid, -0.5 * scale, -1.0, 1.0),
                (true, false) => (gp, 0.0, gp, -scale, (gp - hi_m) / scale, (gp - lo_m) / scale),
                (false, true) => (gm, scale, gm, 0.0, (lo_m - gm) / scale, (hi_m - gm) / scale),
                (true, true) => (gp, 0.0, gm, 0.0, 0.0, 0.0),
            };
            let lo = lo.max(-1.0);
            let hi = hi.min(1.0);
            let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, hi) };
            PairModel {
                a_p,
                b_p,
                a_m,
                b_m,
                k_p,
                n_p: 1.0 / (1.0 + k_p * v_read),
                k_m,
                n_m: 1.0 / (1.0 + k_m * v_read),
                lo,
                hi,
            }
        });
        Ok(LayerConstraints { pairs })
    }

    /// Crossbar-layout measured targets for unit weights `w`, with stuck cells
    /// given a placeholder inside `[g_lo, g_hi]` (they are skipped during import).
    pub fn targets(&self, w: &Grid<f64>, flags: &Grid<Defect>, g_lo: f64, g_hi: f64) -> Grid<f64> {
        let (rows, n) = self.pairs.dims();
        Grid::from_fn(rows, 2 * n, |r, c| {
            let (mp, mm) = self.pairs.get(r, c / 2).targets(*w.get(r, c / 2));
            let m = if c % 2 == 0 { mp } else { mm };
            if *flags.get(r, c) != Defect::None {
                m.clamp(g_lo, g_hi)
            } else {
                m
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraints {
    pub layer1: LayerConstraints,
    pub layer2: LayerConstraints,
}

impl Constraints {
    pub fn check(&self, cfg: &NetworkConfig) -> Result<()> {
        self.layer1.pairs.ensure_dims(cfg.rows1(), cfg.n_hidden, "layer-1 constraints")?;
        self.layer2.pairs.ensure_dims(cfg.rows2(), cfg.n_outputs, "layer-2 constraints")?;
        Ok(())
    }
}

/// Trace entry: state after `epoch` (1-based; 0 is the initial state).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub errors: usize,
    pub fidelity: f64,
    pub loss: f64,
}

#[derive(Clone, Copy)]
enum LayerRef<'a> {
    Dense { scale: f64 },
    Pairs(&'a LayerConstraints),
}

impl LayerRef<'_> {
    /// `z_j = r_f_j * (layer current difference)`.
    fn forward(&self, v: &[f64], w: &Grid<f64>, bank: &[NeuronParams], z: &mut [f64]) {
        let n = w.cols();
        let wd = w.as_slice();
        z.iter_mut().for_each(|x| *x = 0.0);
        match self {
            LayerRef::Dense { scale } => {
                for (i, &vi) in v.iter().enumerate() {
                    let row = &wd[i * n..(i + 1) * n];
                    for (acc, &wij) in z.iter_mut().zip(row) {
                        *acc += vi * wij;
                    }
                }
                for (zj, p) in z.iter_mut().zip(bank) {
                    *zj = p.r_f * scale * *zj;
                }
            }
            LayerRef::Pairs(c) => {
                let pd = c.pairs.as_slice();
                for (i, &vi) in v.iter().enumerate() {
                    for j in 0..n {
                        z[j] += pd[i * n + j].current(wd[i * n + j], vi);
                    }
                }
                for (zj, p) in z.iter_mut().zip(bank) {
                    *zj *= p.r_f;
                }
            }
        }
    }

    /// `dv_i = sum_j g_j * dz_j/dv_i`, where `g_j = dL/dz_j * r_f_j`.
    fn backward_input(&self, v: &[f64], w: &Grid<f64>, g: &[f64], dv: &mut [f64]) {
        let n = w.cols();
        let wd = w.as_slice();
        match self {
            LayerRef::Dense { scale } => {
                for (i, d) in dv.iter_mut().enumerate() {
                    let row = &wd[i * n..(i + 1) * n];
                    *d = scale * row.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            LayerRef::Pairs(c) => {
                let pd = c.pairs.as_slice();
                for (i, d) in dv.iter_mut().enumerate() {
                    *d = (0..n)
                        .map(|j| g[j] * pd[i * n + j].d_dv(wd[i * n + j], v[i]))
                        .sum();
                }
            }
        }
    }

    /// Applies `w_ij -= lr * sum_s g_s[j] * dz/dw_ij(v_s[i])` and projects onto bounds.
    fn update(&self, w: &mut Grid<f64>, vs: &[Vec<f64>], gs: &[Vec<f64>], lr: f64) {
        let n = w.cols();
        let rows = w.rows();
        let wd = w.as_mut_slice();
        match self {
            LayerRef::Dense { scale } => {
                let f = lr * scale;
                for i in 0..rows {
                    let row = &mut wd[i * n..(i + 1) * n];
                    for (v, g) in vs.iter().zip(gs) {
                        let c = f * v[i];
                        for (wij, &gj) in row.iter_mut().zip(g) {
                            *wij -= c * gj;
                        }
                    }
                    for wij in row.iter_mut() {
                        *wij = wij.clamp(-1.0, 1.0);
                    }
                }
            }
            LayerRef::Pairs(c) => {
                let pd = c.pairs.as_slice();
                for i in 0..rows {
                    for j in 0..n {
                        let p = &pd[i * n + j];
                        let mut x = wd[i * n + j];
                        for (v, g) in vs.iter().zip(gs) {
                            x -= lr * g[j] * p.d_dw(v[i]);
                        }
                        wd[i * n + j] = x.clamp(p.lo, p.hi);
                    }
                }
            }
        }
    }

    fn grad(&self, v: &[f64], g: &[f64], w: &Grid<f64>) -> Grid<f64> {
        let n = w.cols();
        match self {
            LayerRef::Dense { scale } => Grid::from_fn(w.rows(), n, |i, j| scale * v[i] * g[j]),
            LayerRef::Pairs(c) => Grid::from_fn(w.rows(), n, |i, j| g[j] * c.pairs.get(i, j).d_dw(v[i])),
        }
    }
}

/// Loss value and dL/d(output) for one pattern.
pub fn output_loss(
    loss: Loss,
    out: &[f64],
    label: usize,
    target_v: f64,
    tau: f64,
    d_out: &mut [f64],
) -> f64 {
    match loss {
        Loss::SquaredError => {
            let mut l = 0.0;
            for (k, (&o, d)) in out.iter().zip(d_out.iter_mut()).enumerate() {
                let e = if k == label {
                    (o - target_v).min(0.0)
                } else {
                    (o + target_v).max(0.0)
                };
                *d = e;
                l += 0.5 * e * e;
            }
            l
        }
        Loss::CrossEntropySoftmaxReadout => {
            let m = out.iter().fold(f64::NEG_INFINITY, |m, &o| m.max(o / tau));
            let mut z = 0.0;
            for (&o, d) in out.iter().zip(d_out.iter_mut()) {
                *d = (o / tau - m).exp();
                z += *d;
            }
            for (k, d) in d_out.iter_mut().enumerate() {
                let p = *d / z;
                *d = (p - if k == label { 1.0 } else { 0.0 }) / tau;
            }
            -(out[label] / tau - m - z.ln())
        }
    }
}

struct Scratch {
    v1: Vec<f64>,
    z1: Vec<f64>,
    h: Vec<f64>,
    z2: Vec<f64>,
    out: Vec<f64>,
    d_out: Vec<f64>,
    g2: Vec<f64>,
    dh: Vec<f64>,
    g1: Vec<f64>,
}

impl Scratch {
    fn new(cfg: &NetworkConfig) -> Self {
        Scratch {
            v1: vec![0.0; cfg.rows1()],
            z1: vec![0.0; cfg.n_hidden],
            h: vec![0.0; cfg.rows2()],
            z2: vec![0.0; cfg.n_outputs],
            out: vec![0.0; cfg.n_outputs],
            d_out: vec![0.0; cfg.n_outputs],
            g2: vec![0.0; cfg.n_outputs],
            dh: vec![0.0; cfg.rows2()],
            g1: vec![0.0; cfg.n_hidden],
        }
    }
}

/// Forward and backward passes for one architecture, optionally constrained.
pub struct Engine<'a> {
    arch: &'a Arch,
    l1: LayerRef<'a>,
    l2: LayerRef<'a>,
}

impl<'a> Engine<'a> {
    pub fn new(arch: &'a Arch, constraints: Option<&'a Constraints>) -> Result<Self> {
        let (l1, l2) = match constraints {
            None => (
                LayerRef::Dense { scale: arch.scale1 },
                LayerRef::Dense { scale: arch.scale2 },
            ),
            Some(c) => {
                c.check(&arch.config)?;
                (LayerRef::Pairs(&c.layer1), LayerRef::Pairs(&c.layer2))
            }
        };
        Ok(Engine { arch, l1, l2 })
    }

    fn forward(&self, w: &Weights, x: &[f64], s: &mut Scratch) -> Result<()> {
        let cfg = &self.arch.config;
        s.v1 = cfg.encode(x)?;
        self.l1.forward(&s.v1, &w.w1, &self.arch.hidden, &mut s.z1);
        for (j, p) in self.arch.hidden.iter().enumerate() {
            s.h[j] = p.activate(s.z1[j]);
        }
        s.h[cfg.n_hidden] = cfg.input_voltage;
        self.l2.forward(&s.h, &w.w2, &self.arch.output, &mut s.z2);
        for (k, p) in self.arch.output.iter().enumerate() {
            s.out[k] = p.activate(s.z2[k]);
        }
        Ok(())
    }

    /// Fills `g2` and `g1` (dL/dz times r_f) for the current forward state.
    fn backward(&self, w: &Weights, label: usize, hyper: &TrainHyper, s: &mut Scratch) -> f64 {
        let l = output_loss(hyper.loss, &s.out, label, hyper.target_v, hyper.ce_temperature, &mut s.d_out);
        for (k, p) in self.arch.output.iter().enumerate() {
            s.g2[k] = s.d_out[k] * p.slope(s.z2[k]) * p.r_f;
        }
        self.l2.backward_input(&s.h, &w.w2, &s.g2, &mut s.dh);
        for (j, p) in self.arch.hidden.iter().enumerate() {
            s.g1[j] = s.dh[j] * p.slope(s.z1[j]) * p.r_f;
        }
        l
    }

    /// Output voltages for one pattern.
    pub fn outputs(&self, w: &Weights, x: &[f64]) -> Result<Vec<f64>> {
        let mut s = Scratch::new(&self.arch.config);
        self.forward(w, x, &mut s)?;
        Ok(s.out)
    }

    /// Misclassified count over the dataset.
    pub fn errors(&self, w: &Weights, data: &Dataset) -> Result<usize> {
        let mut s = Scratch::new(&self.arch.config);
        let mut errors = 0;
        for (x, &l) in data.inputs.iter().zip(&data.labels) {
            self.forward(w, x, &mut s)?;
            errors += usize::from(argmax(&s.out) != l);
        }
        Ok(errors)
    }

    /// Loss and analytic gradient for one pattern.
    pub fn loss_and_grad(
        &self,
        w: &Weights,
        x: &[f64],
        label: usize,
        hyper: &TrainHyper,
    ) -> Result<(f64, Weights)> {
        let mut s = Scratch::new(&self.arch.config);
        self.forward(w, x, &mut s)?;
        let l = self.backward(w, label, hyper, &mut s);
        Ok((
            l,
            Weights {
                w1: self.l1.grad(&s.v1, &s.g1, &w.w1),
                w2: self.l2.grad(&s.h, &s.g2, &w.w2),
            },
        ))
    }

    /// Loss only (for finite-difference checks).
    pub fn loss(&self, w: &Weights, x: &[f64], label: usize, hyper: &TrainHyper) -> Result<f64> {
        let mut s = Scratch::new(&self.arch.config);
        self.forward(w, x, &mut s)?;
        let mut d = vec![0.0; self.arch.config.n_outputs];
        Ok(output_loss(hyper.loss, &s.out, label, hyper.target_v, hyper.ce_temperature, &mut d))
    }

    fn clamp_initial(&self, w: &mut Weights) {
        for (layer, grid) in [(self.l1, &mut w.w1), (self.l2, &mut w.w2)] {
            if let LayerRef::Pairs(c) = layer {
                for (x, p) in grid.as_mut_slice().iter_mut().zip(c.pairs.as_slice()) {
                    *x = x.clamp(p.lo, p.hi);
                }
            }
        }
    }

    /// Seeded uniform initial weights, projected onto the feasible set.
    pub fn initial_weights(&self, hyper: &TrainHyper) -> Weights {
        let mut r = rng::rng(rng::derive(hyper.seed, stream::INIT, 0));
        let mut w = Weights::zeros(&self.arch.config);
        let a = hyper.init_scale;
        for x in w.w1.as_mut_slice().iter_mut().chain(w.w2.as_mut_slice()) {
            *x = if a > 0.0 { r.random_range(-a..=a) } else { 0.0 };
        }
        self.clamp_initial(&mut w);
        w
    }

    /// Mini-batch gradient descent from `w`.
    pub fn train_from(
        &self,
        mut w: Weights,
        data: &Dataset,
        hyper: &TrainHyper,
    ) -> Result<(Weights, Vec<EpochRecord>)> {
        hyper.validate()?;
        w.check(&self.arch.config)?;
        if let Some(&l) = data.labels.iter().find(|&&l| l >= self.arch.config.n_outputs) {
            return Err(Error::config(format!(
                "label {l} out of range for {} outputs",
                self.arch.config.n_outputs
            )));
        }
        let n = data.len();
        let fid = |errors: usize| 100.0 * (n - errors) as f64 / n.max(1) as f64;
        let mut trace = Vec::with_capacity(hyper.epochs + 1);
        let e0 = self.errors(&w, data)?;
        trace.push(EpochRecord {
            epoch: 0,
            errors: e0,
            fidelity: fid(e0),
            loss: f64::NAN,
        });
        if hyper.early_stop_fidelity.is_some_and(|f| fid(e0) >= f) || n == 0 {
            return Ok((w, trace));
        }
        let mut s = Scratch::new(&self.arch.config);
        let mut order: Vec<usize> = (0..n).collect();
        let mut lr = hyper.learning_rate;
        let bs = hyper.batch_size.min(n);
        let mut v1s: Vec<Vec<f64>> = Vec::with_capacity(bs);
        let mut g1s: Vec<Vec<f64>> = Vec::with_capacity(bs);
        let mut hs: Vec<Vec<f64>> = Vec::with_capacity(bs);
        let mut g2s: Vec<Vec<f64>> = Vec::with_capacity(bs);
        for epoch in 1..=hyper.epochs {
            let mut r = rng::rng(rng::derive(hyper.seed, stream::SHUFFLE, epoch as u64));
            order.shuffle(&mut r);
            let mut total = 0.0;
            for batch in order.chunks(bs) {
                v1s.clear();
                g1s.clear();
                hs.clear();
                g2s.clear();
                for &k in batch {
                    self.forward(&w, &data.inputs[k], &mut s)?;
                    total += self.backward(&w, data.labels[k], hyper, &mut s);
                    v1s.push(s.v1.clone());
                    g1s.push(s.g1.clone());
                    hs.push(s.h.clone());
                    g2s.push(s.g2.clone());
                }
                let step = lr / batch.len() as f64;
                self.l2.update(&mut w.w2, &hs, &g2s, step);
                self.l1.update(&mut w.w1, &v1s, &g1s, step * hyper.hidden_lr_factor);
            }
            if !total.is_finite() || w.w1.iter().chain(w.w2.iter()).any(|x| !x.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
            lr *= hyper.lr_decay;
            let e = self.errors(&w, data)?;
            trace.push(EpochRecord {
                epoch,
                errors: e,
                fidelity: fid(e),
                loss: total / n as f64,
            });
            if hyper.early_stop_fidelity.is_some_and(|f| fid(e) >= f) {
                break;
            }
        }
        Ok((w, trace))
    }
}

/// Ideal-hardware training; returns unit weights and the error trace.
pub fn train_precursor(
    arch: &Arch,
    data: &Dataset,
    hyper: &TrainHyper,
) -> Result<(Weights, Vec<EpochRecord>)> {
    let e = Engine::new(arch, None)?;
    let w0 = e.initial_weights(hyper);
    e.train_from(w0, data, hyper)
}

/// Training through the measured hardware model. `None` constraints reduce
/// exactly to [`train_precursor`].
pub fn train_defect_aware(
    arch: &Arch,
    data: &Dataset,
    constraints: Option<&Constraints>,
    hyper: &TrainHyper,
) -> Result<(Weights, Vec<EpochRecord>)> {
    let e = Engine::new(arch, constraints)?;
    let w0 = e.initial_weights(hyper);
    e.train_from(w0, data, hyper)
}
