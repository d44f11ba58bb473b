//! Named experiments. Each recipe prepares shared inputs once, then runs one
//! independent task per seed.

mod devices;
mod letters;
mod mnist;
mod temperature;

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use xbarsim::network::{Network, NetworkConfig};
use xbarsim::neuron::inject_neuron_faults;
use xbarsim::rng;
use xbarsim::training::apply_weight_noise;

use crate::config::{ExperimentConfig, Recipe};
use crate::error::Result;
use crate::report::{RecipeReport, SeedOutcome, Table};

pub use letters::LetterData;
pub use mnist::MnistData;

/// Seed streams owned by the harness, disjoint from the core library's.
pub(crate) mod stream {
    pub const DEFECTS_1: u64 = 101;
    pub const DEFECTS_2: u64 = 102;
    pub const BOUNDS_1: u64 = 103;
    pub const BOUNDS_2: u64 = 104;
    pub const NEURONS: u64 = 105;
    pub const FORMING: u64 = 106;
    pub const THRESHOLDS: u64 = 107;
    pub const TUNING: u64 = 108;
    pub const EVAL: u64 = 109;
}

/// Inputs shared by every seed of a run.
#[derive(Clone)]
pub enum Prepared {
    Nothing,
    Letters(Arc<LetterData>),
    Mnist(Arc<MnistData>),
}

impl Prepared {
    /// Facts recorded in the report and manifest.
    pub fn notes(&self) -> BTreeMap<String, f64> {
        match self {
            Prepared::Nothing => BTreeMap::new(),
            Prepared::Letters(d) => d.notes(),
            Prepared::Mnist(d) => d.notes(),
        }
    }

    pub fn tables(&self) -> Vec<Table> {
        match self {
            Prepared::Mnist(d) => d.tables(),
            _ => Vec::new(),
        }
    }
}

/// Loads datasets and trains shared precursors. Knobs do not affect the result,
/// so a sweep prepares once.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    Ok(match cfg.recipe {
        r if r.is_letter_task() => Prepared::Letters(Arc::new(LetterData::load(cfg)?)),
        Recipe::Mnist => Prepared::Mnist(Arc::new(MnistData::load(cfg)?)),
        _ => Prepared::Nothing,
    })
}

/// One seed of a recipe. Single-threaded and fully determined by its inputs.
pub fn run_seed(cfg: &ExperimentConfig, prep: &Prepared, seed: u64) -> Result<SeedOutcome> {
    match (cfg.recipe, prep) {
        (Recipe::Forming, _) => devices::forming(cfg, seed),
        (Recipe::Thresholds, _) => devices::thresholds(cfg, seed),
        (Recipe::Tuning, _) => devices::tuning(cfg, seed),
        (Recipe::Temperature, _) => temperature::run(cfg, seed),
        (r, Prepared::Letters(d)) if r.is_letter_task() => letters::run(cfg, d, seed),
        (Recipe::Mnist, Prepared::Mnist(d)) => mnist::run(cfg, d, seed),
        (r, _) => Err(crate::error::HarnessError::config(format!(
            "recipe {r} was given inputs prepared for another recipe"
        ))),
    }
}

/// Runs every seed (in parallel) and aggregates.
pub fn run_prepared(cfg: &ExperimentConfig, prep: &Prepared) -> Result<RecipeReport> {
    cfg.validate()?;
    let outcomes = cfg
        .seeds
        .par_iter()
        .map(|&s| run_seed(cfg, prep, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(RecipeReport::aggregate(cfg, outcomes, prep.notes(), prep.tables()))
}

pub fn run_recipe(cfg: &ExperimentConfig) -> Result<RecipeReport> {
    let prep = prepare(cfg)?;
    run_prepared(cfg, &prep)
}

/// Assembles a network and applies the defect, variation and noise knobs.
/// Returns the network and the import-noise sigma.
pub(crate) fn build_network(
    cfg: &ExperimentConfig,
    net_cfg: &NetworkConfig,
    seed: u64,
) -> Result<(Network, f64)> {
    let k = &cfg.knobs;
    let mut net = Network::assemble(net_cfg, &cfg.device, seed)?;
    let (on, off) = k.stuck_split();
    if k.stuck_fraction > 0.0 {
        net.xbar1.inject_cell_defects(on, off, rng::derive(seed, stream::DEFECTS_1, 0))?;
        net.xbar2.inject_cell_defects(on, off, rng::derive(seed, stream::DEFECTS_2, 0))?;
    }
    net.xbar1.perturb_bounds(k.bound_sigma, rng::derive(seed, stream::BOUNDS_1, 0))?;
    net.xbar2.perturb_bounds(k.bound_sigma, rng::derive(seed, stream::BOUNDS_2, 0))?;
    if k.neuron_fraction > 0.0 {
        let half = 0.5 * k.neuron_fraction;
        net.hidden = inject_neuron_faults(&net.hidden, half, half, &[], rng::derive(seed, stream::NEURONS, 0))?;
    }
    let import_sigma = apply_weight_noise(&mut net, k.noise_sigma, k.noise_phase)?;
    Ok((net, import_sigma))
}
