//! Letter-classification recipes comparing training schemes on paired seeds.

use std::collections::BTreeMap;

use xbarsim::bench::{letter_dataset, Dataset};
use xbarsim::network::NetworkConfig;
use xbarsim::rng;
use xbarsim::training::{run_scheme, ImportMethod, Scheme, SchemeConfig, TrainingReport};

use super::{build_network, stream};
use crate::config::{ExperimentConfig, Recipe};
use crate::error::{HarnessError, Result};
use crate::report::{num, SeedOutcome, Table};

pub struct LetterData {
    pub train: Dataset,
    pub test: Dataset,
}

impl LetterData {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let path = cfg.letters.patterns.as_deref();
        let (train, test) = letter_dataset(path, cfg.letters.classes).map_err(|e| match path {
            Some(p) => HarnessError::Data(format!("cannot load letter patterns {}: {e}", p.display())),
            None => HarnessError::Simulation(e),
        })?;
        Ok(LetterData { train, test })
    }

    pub fn notes(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("train_patterns".to_string(), self.train.len() as f64),
            ("test_patterns".to_string(), self.test.len() as f64),
        ])
    }
}

/// Schemes compared by each letter recipe; the first is the reference.
pub fn schemes(recipe: Recipe) -> &'static [Scheme] {
    match recipe {
        Recipe::DefectAware => &[Scheme::ExSitu, Scheme::DefectAware],
        Recipe::InSitu => &[Scheme::ExSitu, Scheme::InSitu],
        Recipe::Hybrid => &[Scheme::ExSitu, Scheme::Hybrid],
        _ => &[Scheme::ExSitu],
    }
}

/// The configured schemes with the import-accuracy knob and import noise applied.
pub(crate) fn scheme_config(cfg: &ExperimentConfig, import_sigma: f64) -> Result<SchemeConfig> {
    let mut sc = cfg.letters.schemes.clone();
    if let Some(a) = cfg.knobs.import_accuracy {
        match &mut sc.import {
            ImportMethod::WriteVerify(t) if a > 0.0 => t.tolerance = a,
            ImportMethod::WriteVerify(_) => {
                return Err(HarnessError::config("write-verify import needs import_accuracy > 0"))
            }
            ImportMethod::Statistical { accuracy } => *accuracy = a,
            ImportMethod::Exact => {
                return Err(HarnessError::config(
                    "import_accuracy needs a write-verify or statistical import",
                ))
            }
        }
    }
    sc.import_noise_sigma = import_sigma;
    Ok(sc)
}

pub fn run(cfg: &ExperimentConfig, data: &LetterData, seed: u64) -> Result<SeedOutcome> {
    let net_cfg = NetworkConfig {
        n_inputs: data.train.n_inputs(),
        ..NetworkConfig::letters(data.train.n_classes)
    };
    let (net, import_sigma) = build_network(cfg, &net_cfg, seed)?;
    let sc = scheme_config(cfg, import_sigma)?;
    let t = cfg.device.t_ref + cfg.knobs.temperature_offset;
    let mut out = SeedOutcome::new(seed);
    let mut trace = Table::new("trace", &["scheme", "epoch", "errors", "fidelity", "phase"]);
    for &scheme in schemes(cfg.recipe) {
        let (trained, mut rep) = run_scheme(scheme, net.clone(), &data.train, Some(&data.test), &sc, seed)?;
        if cfg.knobs.temperature_offset != 0.0 {
            rep.train_fidelity = trained
                .evaluate(&data.train, t, rng::derive(seed, stream::EVAL, 0))?
                .fidelity;
            rep.test_fidelity = Some(
                trained
                    .evaluate(&data.test, t, rng::derive(seed, stream::EVAL, 1))?
                    .fidelity,
            );
        }
        record(&mut out, &mut trace, &rep);
    }
    out.tables = vec![trace];
    Ok(out)
}

fn record(out: &mut SeedOutcome, trace: &mut Table, rep: &TrainingReport) {
    let tag = rep.scheme.tag();
    out.metric(&format!("{tag}_train_fidelity"), rep.train_fidelity);
    if let Some(f) = rep.test_fidelity {
        out.metric(&format!("{tag}_test_fidelity"), f);
    }
    if let Some(f) = rep.software_fidelity {
        out.metric(&format!("{tag}_software_fidelity"), f);
    }
    if let Some((a, b)) = &rep.import {
        let cells = (a.cells + b.cells) as f64;
        out.metric(&format!("{tag}_import_within"), (a.within_tolerance + b.within_tolerance) as f64 / cells);
    }
    let rows = rep
        .precursor_trace
        .iter()
        .map(|r| (r, "precursor"))
        .chain(rep.insitu_trace.iter().map(|r| (r, "in-situ")));
    for (r, phase) in rows {
        trace.push(vec![
            tag.into(),
            r.epoch.to_string(),
            r.errors.to_string(),
            num(r.fidelity),
            phase.into(),
        ]);
    }
}
