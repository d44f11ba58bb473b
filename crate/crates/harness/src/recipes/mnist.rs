//! MNIST: one shared software precursor, imported into a fresh defective
//! network per seed, optionally fine-tuned in situ.

use std::collections::BTreeMap;

use xbarsim::bench::{load_mnist_dir, Dataset};
use xbarsim::network::{Network, NetworkConfig, Weights};
use xbarsim::rng;
use xbarsim::training::{import_weights, run_insitu, train_precursor, Arch, EpochRecord, ImportMethod};

use super::{build_network, stream};
use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::report::{num, SeedOutcome, Table};

/// Statistical import spread used when the knob is unset.
pub const DEFAULT_IMPORT_ACCURACY: f64 = 0.05;

pub struct MnistData {
    pub train: Dataset,
    pub test: Dataset,
    /// Leading training images used as the hybrid fine-tuning batch.
    pub batch: Dataset,
    pub weights: Weights,
    pub precursor_trace: Vec<EpochRecord>,
    pub software_error: f64,
}

impl MnistData {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let dir = cfg.mnist_dir()?;
        let (train, test) = load_mnist_dir(&dir)
            .map_err(|e| HarnessError::Data(format!("cannot load MNIST from {}: {e}", dir.display())))?;
        let subset = |d: Dataset, n: usize| if n == 0 { d } else { d.take(n) };
        let train = subset(train, cfg.mnist.train_subset);
        let test = subset(test, cfg.mnist.test_subset);
        if train.is_empty() || test.is_empty() {
            return Err(HarnessError::Data(format!("MNIST files in {} are empty", dir.display())));
        }
        Self::from_datasets(cfg, train, test)
    }

    /// Trains the precursor on already-loaded data.
    pub fn from_datasets(cfg: &ExperimentConfig, train: Dataset, test: Dataset) -> Result<Self> {
        let net = Network::assemble(&net_config(cfg, &train), &cfg.device, 0)?;
        let arch = Arch::of(&net);
        let (weights, precursor_trace) = train_precursor(&arch, &train, &cfg.mnist.precursor)?;
        let software_error = arch.software(&weights).evaluate(&test)?.error_percent();
        let batch = train.take(cfg.mnist.hybrid_batch);
        Ok(MnistData {
            train,
            test,
            batch,
            weights,
            precursor_trace,
            software_error,
        })
    }

    pub fn notes(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("train_subset".to_string(), self.train.len() as f64),
            ("test_subset".to_string(), self.test.len() as f64),
            ("hybrid_batch".to_string(), self.batch.len() as f64),
            ("software_error".to_string(), self.software_error),
        ])
    }

    pub fn tables(&self) -> Vec<Table> {
        let mut t = Table::new("precursor_trace", &["epoch", "errors", "fidelity"]);
        for r in &self.precursor_trace {
            t.push(vec![r.epoch.to_string(), r.errors.to_string(), num(r.fidelity)]);
        }
        vec![t]
    }
}

fn net_config(cfg: &ExperimentConfig, train: &Dataset) -> NetworkConfig {
    NetworkConfig {
        n_inputs: train.n_inputs(),
        n_outputs: train.n_classes,
        ..NetworkConfig::mnist(cfg.mnist.hidden)
    }
}

pub fn run(cfg: &ExperimentConfig, data: &MnistData, seed: u64) -> Result<SeedOutcome> {
    let (mut net, import_sigma) = build_network(cfg, &net_config(cfg, &data.train), seed)?;
    let accuracy = cfg.knobs.import_accuracy.unwrap_or(DEFAULT_IMPORT_ACCURACY);
    import_weights(&mut net, &data.weights, &ImportMethod::Statistical { accuracy }, import_sigma, seed)?;
    let t = cfg.device.t_ref + cfg.knobs.temperature_offset;
    let mut out = SeedOutcome::new(seed);
    let eval = |net: &Network, k: u64| -> Result<f64> {
        Ok(net
            .evaluate(&data.test, t, rng::derive(seed, stream::EVAL, k))?
            .error_percent())
    };
    out.metric("import_only_error", eval(&net, 0)?);
    if let Some(h) = &cfg.mnist.hybrid {
        let trace = run_insitu(&mut net, &data.batch, h)?;
        out.metric("hybrid_error", eval(&net, 1)?);
        let mut table = Table::new("hybrid_trace", &["epoch", "errors", "fidelity"]);
        for r in &trace {
            table.push(vec![r.epoch.to_string(), r.errors.to_string(), num(r.fidelity)]);
        }
        out.tables.push(table);
    }
    Ok(out)
}
