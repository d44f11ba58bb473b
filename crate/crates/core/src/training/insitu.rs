//! Batch-mode, fixed-amplitude in-situ training (Manhattan rule).

use serde::{Deserialize, Serialize};

use crate::bench::Dataset;
use crate::crossbar::{Crossbar, DEFAULT_READ_VOLTAGE};
use crate::grid::Grid;
use crate::network::{argmax, Network};
use crate::{Error, Result};

use super::engine::{output_loss, EpochRecord, Loss};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InSituConfig {
    pub v_pulse_set: f64,
    /// Reset amplitude as a positive magnitude.
    pub v_pulse_reset: f64,
    pub width: f64,
    pub epochs: usize,
    pub loss: Loss,
    pub target_v: f64,
    pub ce_temperature: f64,
    /// Stop as soon as an epoch's batch has no misclassified pattern.
    pub stop_when_perfect: bool,
}

impl Default for InSituConfig {
    fn default() -> Self {
        InSituConfig {
            v_pulse_set: 1.01,
            v_pulse_reset: 1.01,
            width: 6e-5,
            epochs: 60,
            loss: Loss::SquaredError,
            target_v: 0.5,
            ce_temperature: 1.0,
            stop_when_perfect: true,
        }
    }
}

impl InSituConfig {
    /// Gentler pulses for adjusting imported weights.
    pub fn fine_tuning() -> Self {
        InSituConfig {
            v_pulse_set: 1.25,
            v_pulse_reset: 1.25,
            width: 1e-6,
            epochs: 30,
            ..InSituConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for v in [self.v_pulse_set, self.v_pulse_reset] {
            if !(v > crate::device::READ_LIMIT && v.is_finite()) {
                return Err(Error::config(format!(
                    "in-situ pulse amplitude {v} V must exceed the read regime"
                )));
            }
        }
        if !(self.width > 0.0 && self.target_v > 0.0 && self.ce_temperature > 0.0) {
            return Err(Error::config("in-situ width, target_v and ce_temperature must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochOutcome {
    /// Misclassified patterns in this epoch's forward pass (before the update).
    pub errors: usize,
    pub loss: f64,
    pub set_pulses: usize,
    pub reset_pulses: usize,
}

fn measured(x: &Crossbar) -> Grid<f64> {
    Grid::from_fn(x.rows(), x.cols(), |r, c| {
        let cell = x.cell(r, c);
        cell.current_unchecked(DEFAULT_READ_VOLTAGE, cell.thermal.t_ref) / DEFAULT_READ_VOLTAGE
    })
}

/// One full-batch epoch: hardware forward pass on every pattern, sign of the
/// accumulated gradient per weight, one set and one reset pulse per moved pair.
/// With `stop_when_perfect`, an epoch without misclassifications applies no pulses.
pub fn insitu_epoch(net: &mut Network, data: &Dataset, cfg: &InSituConfig) -> Result<EpochOutcome> {
    cfg.validate()?;
    let t = net.spec().t_ref;
    let (h_n, o_n) = (net.config.n_hidden, net.config.n_outputs);
    let m2 = measured(&net.xbar2);
    let mut grad1 = Grid::filled(net.config.rows1(), h_n, 0.0);
    let mut grad2 = Grid::filled(net.config.rows2(), o_n, 0.0);
    let mut i1 = vec![0.0; 2 * h_n];
    let mut i2 = vec![0.0; 2 * o_n];
    let mut z1 = vec![0.0; h_n];
    let mut h = vec![0.0; h_n + 1];
    let mut z2 = vec![0.0; o_n];
    let mut out = vec![0.0; o_n];
    let mut d_out = vec![0.0; o_n];
    let mut g2 = vec![0.0; o_n];
    let s1 = net.xbar1.read_snapshot(t);
    let s2 = net.xbar2.read_snapshot(t);
    let mut outcome = EpochOutcome::default();
    for (x, &label) in data.inputs.iter().zip(&data.labels) {
        let v1 = net.config.encode(x)?;
        s1.vmm_into(&v1, &mut i1)?;
        for (j, p) in net.hidden.iter().enumerate() {
            z1[j] = p.r_f * (i1[2 * j] - i1[2 * j + 1]);
            h[j] = p.activate(z1[j]);
        }
        h[h_n] = net.config.input_voltage;
        s2.vmm_into(&h, &mut i2)?;
        for (k, p) in net.output.iter().enumerate() {
            z2[k] = p.r_f * (i2[2 * k] - i2[2 * k + 1]);
            out[k] = p.activate(z2[k]);
        }
        outcome.errors += usize::from(argmax(&out) != label);
        outcome.loss += output_loss(cfg.loss, &out, label, cfg.target_v, cfg.ce_temperature, &mut d_out);
        for (k, p) in net.output.iter().enumerate() {
            g2[k] = d_out[k] * p.slope(z2[k]) * p.r_f;
        }
        for (j, &hj) in h.iter().enumerate() {
            for k in 0..o_n {
                *grad2.get_mut(j, k) += g2[k] * hj;
            }
        }
        for (j, p) in net.hidden.iter().enumerate() {
            let dh: f64 = (0..o_n)
                .map(|k| g2[k] * (m2.get(j, 2 * k) - m2.get(j, 2 * k + 1)))
                .sum();
            let g1 = dh * p.slope(z1[j]) * p.r_f;
            if g1 != 0.0 {
                for (i, &vi) in v1.iter().enumerate() {
                    *grad1.get_mut(i, j) += g1 * vi;
                }
            }
        }
    }
    if cfg.stop_when_perfect && outcome.errors == 0 {
        return Ok(outcome);
    }
    let (s1, r1) = apply_manhattan(&mut net.xbar1, &grad1, cfg)?;
    let (s2, r2) = apply_manhattan(&mut net.xbar2, &grad2, cfg)?;
    outcome.set_pulses = s1 + s2;
    outcome.reset_pulses = r1 + r2;
    Ok(outcome)
}

/// Pulses for one crossbar: all set pulses, then all reset pulses, each in
/// row-major cell order.
fn apply_manhattan(xbar: &mut Crossbar, grad: &Grid<f64>, cfg: &InSituConfig) -> Result<(usize, usize)> {
    let mut sets = Vec::new();
    let mut resets = Vec::new();
    for (r, j, &g) in grad.indexed() {
        if g == 0.0 {
            continue;
        }
        // descent: weight increases when the gradient is negative
        let (up, down) = if g < 0.0 { (2 * j, 2 * j + 1) } else { (2 * j + 1, 2 * j) };
        sets.push((r, up));
        resets.push((r, down));
    }
    sets.sort_unstable();
    resets.sort_unstable();
    for &(r, c) in &sets {
        xbar.write_pulse(r, c, cfg.v_pulse_set, cfg.width)?;
    }
    for &(r, c) in &resets {
        xbar.write_pulse(r, c, -cfg.v_pulse_reset, cfg.width)?;
    }
    Ok((sets.len(), resets.len()))
}

/// Runs up to `cfg.epochs` epochs. Record `k` holds the errors seen by epoch
/// `k + 1`'s forward pass; a final record holds the state after the last update.
pub fn run_insitu(net: &mut Network, data: &Dataset, cfg: &InSituConfig) -> Result<Vec<EpochRecord>> {
    let n = data.len().max(1) as f64;
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..cfg.epochs {
        let o = insitu_epoch(net, data, cfg)?;
        trace.push(EpochRecord {
            epoch,
            errors: o.errors,
            fidelity: 100.0 * (n - o.errors as f64) / n,
            loss: o.loss / n,
        });
        if cfg.stop_when_perfect && o.errors == 0 {
            return Ok(trace);
        }
    }
    let s = net.evaluate(data, net.spec().t_ref, 0)?;
    trace.push(EpochRecord {
        epoch: cfg.epochs,
        errors: s.total - s.correct,
        fidelity: s.fidelity,
        loss: f64::NAN,
    });
    Ok(trace)
}
