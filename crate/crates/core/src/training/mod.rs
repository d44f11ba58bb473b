//! Training schemes: ex-situ (precursor + import), defect-aware ex-situ,
//! in-situ Manhattan-rule, and hybrid.

mod engine;
mod insitu;

use std::io::{self, Write};
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bench::Dataset;
use crate::crossbar::{Crossbar, DEFAULT_READ_VOLTAGE};
use crate::device::Defect;
use crate::grid::Grid;
use crate::network::{Network, Weights};
use crate::progtune::{diagnose_defects, import_with_skip, TuneConfig, TuningReport, TuningSummary};
use crate::rng::{self, stream};
use crate::{Error, Result};

pub use engine::{
    output_loss, train_defect_aware, train_precursor, Arch, Constraints, Engine, EpochRecord,
    LayerConstraints, Loss, PairModel, TrainHyper,
};
pub use insitu::{insitu_epoch, run_insitu, EpochOutcome, InSituConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    ExSitu,
    DefectAware,
    InSitu,
    Hybrid,
}

impl Scheme {
    pub fn tag(&self) -> &'static str {
        match self {
            Scheme::ExSitu => "ex-situ",
            Scheme::DefectAware => "defect-aware",
            Scheme::InSitu => "in-situ",
            Scheme::Hybrid => "hybrid",
        }
    }
}

/// How target conductances reach the devices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ImportMethod {
    /// Every working device lands exactly on its target.
    Exact,
    /// Closed-loop write-verify through the crossbar.
    WriteVerify(TuneConfig),
    /// Working devices land uniformly within `+/- accuracy` (relative) of their
    /// target, drawn from a seeded stream. Stands in for write-verify at array
    /// sizes where pulse-level simulation of every cell is too slow.
    Statistical { accuracy: f64 },
}

impl Default for ImportMethod {
    fn default() -> Self {
        ImportMethod::WriteVerify(TuneConfig::default())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoisePhase {
    Import,
    Inference,
    Both,
}

/// Configures synaptic noise: sets the network's inference read-noise sigma
/// (for `Inference`/`Both`) and returns the import-noise sigma to use.
pub fn apply_weight_noise(net: &mut Network, sigma: f64, phase: NoisePhase) -> Result<f64> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::config("noise sigma must be >= 0"));
    }
    let (import, inference) = match phase {
        NoisePhase::Import => (sigma, 0.0),
        NoisePhase::Inference => (0.0, sigma),
        NoisePhase::Both => (sigma, sigma),
    };
    net.read_noise_sigma = inference;
    Ok(import)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportOutcome {
    /// Write-verify reports per layer (absent for exact/statistical imports).
    pub layer1: Option<TuningReport>,
    pub layer2: Option<TuningReport>,
}

impl ImportOutcome {
    pub fn summaries(&self) -> Option<(TuningSummary, TuningSummary)> {
        Some((self.layer1.as_ref()?.summary(), self.layer2.as_ref()?.summary()))
    }
}

fn perturb_targets(t: &mut Grid<f64>, sigma: f64, g_lo: f64, g_hi: f64, seed: u64) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma checked");
    let mut r = rng::rng(seed);
    for x in t.as_mut_slice() {
        *x = (*x * (1.0 + normal.sample(&mut r))).clamp(g_lo, g_hi);
    }
}

fn import_layer(
    xbar: &mut Crossbar,
    targets: &Grid<f64>,
    method: &ImportMethod,
    skip: Option<&Grid<Defect>>,
    seed: u64,
) -> Result<Option<TuningReport>> {
    match method {
        ImportMethod::WriteVerify(cfg) => import_with_skip(xbar, targets, cfg, skip).map(Some),
        ImportMethod::Exact | ImportMethod::Statistical { .. } => {
            let acc = match method {
                ImportMethod::Statistical { accuracy } => {
                    if !(*accuracy >= 0.0 && *accuracy < 1.0) {
                        return Err(Error::config("import accuracy must be in [0, 1)"));
                    }
                    *accuracy
                }
                _ => 0.0,
            };
            let mut r = rng::rng(seed);
            for (row, col, &m) in targets.indexed() {
                let m = if acc > 0.0 {
                    m * (1.0 + r.random_range(-acc..=acc))
                } else {
                    m
                };
                let kv = xbar.cell(row, col).kappa * DEFAULT_READ_VOLTAGE;
                xbar.force_conductance(row, col, m / (1.0 + kv))?;
            }
            Ok(None)
        }
    }
}

/// Imports measured-conductance targets (crossbar layout) into both layers,
/// after optional multiplicative Gaussian target noise.
pub fn import_targets(
    net: &mut Network,
    mut t1: Grid<f64>,
    mut t2: Grid<f64>,
    method: &ImportMethod,
    noise_sigma: f64,
    skip: Option<(&Grid<Defect>, &Grid<Defect>)>,
    seed: u64,
) -> Result<ImportOutcome> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::config("import noise sigma must be >= 0"));
    }
    let (g_lo, g_hi) = (net.spec().g_min, net.spec().g_max);
    perturb_targets(&mut t1, noise_sigma, g_lo, g_hi, rng::derive(seed, stream::IMPORT_NOISE, 1));
    perturb_targets(&mut t2, noise_sigma, g_lo, g_hi, rng::derive(seed, stream::IMPORT_NOISE, 2));
    let layer1 = import_layer(&mut net.xbar1, &t1, method, skip.map(|s| s.0), rng::derive(seed, stream::IMPORT_NOISE, 3))?;
    let layer2 = import_layer(&mut net.xbar2, &t2, method, skip.map(|s| s.1), rng::derive(seed, stream::IMPORT_NOISE, 4))?;
    Ok(ImportOutcome { layer1, layer2 })
}

/// Maps unit weights to targets and imports them. Stuck cells stay as they
/// are; write-verify reports them as failures.
pub fn import_weights(
    net: &mut Network,
    w: &Weights,
    method: &ImportMethod,
    noise_sigma: f64,
    seed: u64,
) -> Result<ImportOutcome> {
    let (t1, t2) = net.targets(w)?;
    import_targets(net, t1, t2, method, noise_sigma, None, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemeConfig {
    pub hyper: TrainHyper,
    pub import: ImportMethod,
    pub import_noise_sigma: f64,
    /// Pure in-situ training.
    pub insitu: InSituConfig,
    /// In-situ fine-tuning after the ex-situ import in the hybrid scheme.
    pub hybrid: InSituConfig,
    /// Initial weights of pure in-situ training are uniform in `+/- insitu_init`.
    pub insitu_init: f64,
    /// Write-verify settings for defect diagnosis in the defect-aware scheme.
    pub diagnose: TuneConfig,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            hyper: TrainHyper::default(),
            import: ImportMethod::default(),
            import_noise_sigma: 0.0,
            insitu: InSituConfig::default(),
            hybrid: InSituConfig::fine_tuning(),
            insitu_init: 0.1,
            diagnose: TuneConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub scheme: Scheme,
    pub seed: u64,
    /// Software trace of the precursor (ex-situ / defect-aware), if any.
    pub precursor_trace: Vec<EpochRecord>,
    /// Hardware in-situ trace (in-situ / hybrid), if any.
    pub insitu_trace: Vec<EpochRecord>,
    pub software_fidelity: Option<f64>,
    pub train_fidelity: f64,
    pub test_fidelity: Option<f64>,
    pub import: Option<(TuningSummary, TuningSummary)>,
    pub wall_time_s: f64,
}

impl TrainingReport {
    /// Error-decay trace as `epoch,errors,fidelity,phase`.
    pub fn write_trace_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "epoch,errors,fidelity,phase")?;
        for r in &self.precursor_trace {
            writeln!(out, "{},{},{},precursor", r.epoch, r.errors, r.fidelity)?;
        }
        for r in &self.insitu_trace {
            writeln!(out, "{},{},{},in-situ", r.epoch, r.errors, r.fidelity)?;
        }
        Ok(())
    }
}

/// Seeded uniform weights in `+/- scale` (in-situ initialization).
pub fn random_weights(net: &Network, scale: f64, seed: u64) -> Weights {
    let mut r = rng::rng(rng::derive(seed, stream::INIT, 1));
    let mut w = Weights::zeros(&net.config);
    for x in w.w1.as_mut_slice().iter_mut().chain(w.w2.as_mut_slice()) {
        *x = if scale > 0.0 { r.random_range(-scale..=scale) } else { 0.0 };
    }
    w
}

/// Diagnoses both crossbars (leaving working cells at mid-range) and builds
/// the defect-aware constraints. Returns `None` constraints when nothing was
/// found, together with the diagnosed flags.
pub fn measure_constraints(
    net: &mut Network,
    diagnose: &TuneConfig,
) -> Result<(Option<Constraints>, Grid<Defect>, Grid<Defect>)> {
    let (map1, _) = diagnose_defects(&mut net.xbar1, diagnose)?;
    let (map2, _) = diagnose_defects(&mut net.xbar2, diagnose)?;
    let g1 = net.xbar1.measure_maps(diagnose.v_read, &mut crate::crossbar::ReadNoise::off())?;
    let g2 = net.xbar2.measure_maps(diagnose.v_read, &mut crate::crossbar::ReadNoise::off())?;
    let clean = |m: &crate::crossbar::DefectMap| {
        m.flags.iter().all(|d| *d == Defect::None) && m.asymmetry.iter().all(|a| *a == 0.0)
    };
    let constraints = if clean(&map1) && clean(&map2) {
        None
    } else {
        Some(Constraints {
            layer1: LayerConstraints::from_maps(&net.config, net.scale1, &map1.flags, &g1.conductance, &map1.asymmetry, diagnose.v_read)?,
            layer2: LayerConstraints::from_maps(&net.config, net.scale2, &map2.flags, &g2.conductance, &map2.asymmetry, diagnose.v_read)?,
        })
    };
    Ok((constraints, map1.flags, map2.flags))
}

/// Runs one training scheme on `net` (defects already injected) and reports
/// fidelity on `train` and, if given, `test`.
pub fn run_scheme(
    scheme: Scheme,
    mut net: Network,
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &SchemeConfig,
    seed: u64,
) -> Result<(Network, TrainingReport)> {
    let start = Instant::now();
    let hyper = TrainHyper {
        seed,
        ..cfg.hyper.clone()
    };
    let arch = Arch::of(&net);
    let mut precursor_trace = Vec::new();
    let mut insitu_trace = Vec::new();
    let mut software_fidelity = None;
    let mut import = None;
    match scheme {
        Scheme::ExSitu | Scheme::Hybrid => {
            let (w, trace) = train_precursor(&arch, train, &hyper)?;
            software_fidelity = trace.last().map(|r| r.fidelity);
            precursor_trace = trace;
            let out = import_weights(&mut net, &w, &cfg.import, cfg.import_noise_sigma, seed)?;
            import = out.summaries();
            if scheme == Scheme::Hybrid && cfg.hybrid.epochs > 0 {
                insitu_trace = run_insitu(&mut net, train, &cfg.hybrid)?;
            }
        }
        Scheme::DefectAware => {
            let (constraints, f1, f2) = measure_constraints(&mut net, &cfg.diagnose)?;
            let (w, trace) = train_defect_aware(&arch, train, constraints.as_ref(), &hyper)?;
            software_fidelity = trace.last().map(|r| r.fidelity);
            precursor_trace = trace;
            let (t1, t2) = match &constraints {
                None => net.targets(&w)?,
                Some(c) => {
                    let (lo, hi) = (net.spec().g_min, net.spec().g_max);
                    (
                        c.layer1.targets(&w.w1, &f1, lo, hi),
                        c.layer2.targets(&w.w2, &f2, lo, hi),
                    )
                }
            };
            let out = import_targets(&mut net, t1, t2, &cfg.import, cfg.import_noise_sigma, Some((&f1, &f2)), seed)?;
            import = out.summaries();
        }
        Scheme::InSitu => {
            let w0 = random_weights(&net, cfg.insitu_init, seed);
            net.program_ideal(&w0)?;
            insitu_trace = run_insitu(&mut net, train, &cfg.insitu)?;
        }
    }
    let t = net.spec().t_ref;
    let train_fidelity = net.evaluate(train, t, rng::derive(seed, stream::READ_NOISE, 0))?.fidelity;
    let test_fidelity = match test {
        Some(d) if !d.is_empty() => Some(net.evaluate(d, t, rng::derive(seed, stream::READ_NOISE, 1))?.fidelity),
        _ => None,
    };
    let report = TrainingReport {
        scheme,
        seed,
        precursor_trace,
        insitu_trace,
        software_fidelity,
        train_fidelity,
        test_fidelity,
        import,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok((net, report))
}

#[cfg(test)]
mod tests;
