//! Experiment configuration: one JSON document per experiment.
//!
//! A file only needs the keys it changes. It is merged over the defaults of its
//! recipe and then decoded strictly, so misspelled keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use xbarsim::device::{DeviceSpec, ThresholdSweep};
use xbarsim::neuron::DriftStudy;
use xbarsim::progtune::{FormingConfig, TuneConfig};
use xbarsim::training::{ImportMethod, InSituConfig, NoisePhase, SchemeConfig, TrainHyper};

use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the default MNIST directory.
pub const MNIST_ENV: &str = "XBARSIM_MNIST_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recipe {
    /// Forming statistics in voltage- and current-pulse modes.
    Forming,
    /// Set / reset threshold distributions.
    Thresholds,
    /// Write-verify tuning of a target pattern.
    Tuning,
    /// Letter task, ex-situ training with write-verify import.
    ExSitu,
    /// Letter task with stuck cells: ex-situ versus defect-aware ex-situ.
    DefectAware,
    /// Letter task: in-situ Manhattan-rule training versus ex-situ.
    InSitu,
    /// Letter task with stuck cells: ex-situ versus hybrid.
    Hybrid,
    /// MNIST: import-only and hybrid hardware error.
    Mnist,
    /// Output drift of the compensated and uncompensated multiplier.
    Temperature,
}

impl Recipe {
    pub const ALL: [Recipe; 9] = [
        Recipe::Forming,
        Recipe::Thresholds,
        Recipe::Tuning,
        Recipe::ExSitu,
        Recipe::DefectAware,
        Recipe::InSitu,
        Recipe::Hybrid,
        Recipe::Mnist,
        Recipe::Temperature,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Recipe::Forming => "forming",
            Recipe::Thresholds => "thresholds",
            Recipe::Tuning => "tuning",
            Recipe::ExSitu => "ex-situ",
            Recipe::DefectAware => "defect-aware",
            Recipe::InSitu => "in-situ",
            Recipe::Hybrid => "hybrid",
            Recipe::Mnist => "mnist",
            Recipe::Temperature => "temperature",
        }
    }

    pub fn is_letter_task(&self) -> bool {
        matches!(
            self,
            Recipe::ExSitu | Recipe::DefectAware | Recipe::InSitu | Recipe::Hybrid
        )
    }

    /// Knobs that change this recipe's outcome.
    pub fn knobs(&self) -> &'static [Knob] {
        use Knob::*;
        match self {
            Recipe::Forming | Recipe::Thresholds | Recipe::Temperature => &[],
            Recipe::Tuning => &[ImportAccuracy, StuckFraction],
            Recipe::ExSitu | Recipe::DefectAware | Recipe::InSitu | Recipe::Hybrid | Recipe::Mnist => &[
                ImportAccuracy,
                StuckFraction,
                BoundSigma,
                NoiseSigma,
                NoisePhase,
                NeuronFraction,
                TemperatureOffset,
            ],
        }
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Recipe {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Recipe::ALL.into_iter().find(|r| r.name() == s).ok_or_else(|| {
            let names: Vec<_> = Recipe::ALL.iter().map(|r| r.name()).collect();
            HarnessError::config(format!("unknown recipe {s:?}; known recipes: {}", names.join(", ")))
        })
    }
}

/// Defect, noise and environment settings shared by the network recipes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Knobs {
    /// Relative import accuracy. Overrides the write-verify tolerance or the
    /// statistical spread of the configured import; MNIST imports default to 0.05.
    pub import_accuracy: Option<f64>,
    /// Fraction of stuck devices in every crossbar.
    pub stuck_fraction: f64,
    /// Share of the stuck devices that are stuck-on; the rest are stuck-off.
    pub stuck_on_share: f64,
    /// Relative sigma of per-device g_min / g_max variation.
    pub bound_sigma: f64,
    pub noise_sigma: f64,
    pub noise_phase: NoisePhase,
    /// Fraction of hidden neurons stuck, split evenly between high and low.
    pub neuron_fraction: f64,
    /// Inference temperature relative to the reference temperature, K.
    pub temperature_offset: f64,
}

impl Default for Knobs {
    fn default() -> Self {
        Knobs {
            import_accuracy: None,
            stuck_fraction: 0.0,
            stuck_on_share: 0.5,
            bound_sigma: 0.0,
            noise_sigma: 0.0,
            noise_phase: NoisePhase::Import,
            neuron_fraction: 0.0,
            temperature_offset: 0.0,
        }
    }
}

impl Knobs {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, x: f64| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(HarnessError::config(format!("knobs.{name} must be in [0, 1], got {x}")))
            }
        };
        unit("stuck_fraction", self.stuck_fraction)?;
        unit("stuck_on_share", self.stuck_on_share)?;
        unit("neuron_fraction", self.neuron_fraction)?;
        if let Some(a) = self.import_accuracy {
            if !(0.0..1.0).contains(&a) {
                return Err(HarnessError::config("knobs.import_accuracy must be in [0, 1)"));
            }
        }
        for (name, x) in [("bound_sigma", self.bound_sigma), ("noise_sigma", self.noise_sigma)] {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(HarnessError::config(format!("knobs.{name} must be >= 0, got {x}")));
            }
        }
        if !self.temperature_offset.is_finite() {
            return Err(HarnessError::config("knobs.temperature_offset must be finite"));
        }
        Ok(())
    }

    pub fn stuck_split(&self) -> (f64, f64) {
        let on = self.stuck_fraction * self.stuck_on_share;
        (on, self.stuck_fraction - on)
    }
}

/// A sweepable knob.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Knob {
    ImportAccuracy,
    StuckFraction,
    BoundSigma,
    NoiseSigma,
    NoisePhase,
    NeuronFraction,
    TemperatureOffset,
}

impl Knob {
    pub const ALL: [Knob; 7] = [
        Knob::ImportAccuracy,
        Knob::StuckFraction,
        Knob::BoundSigma,
        Knob::NoiseSigma,
        Knob::NoisePhase,
        Knob::NeuronFraction,
        Knob::TemperatureOffset,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Knob::ImportAccuracy => "import_accuracy",
            Knob::StuckFraction => "stuck_fraction",
            Knob::BoundSigma => "bound_sigma",
            Knob::NoiseSigma => "noise_sigma",
            Knob::NoisePhase => "noise_phase",
            Knob::NeuronFraction => "neuron_fraction",
            Knob::TemperatureOffset => "temperature_offset",
        }
    }

    /// Sets the knob from its textual value.
    pub fn apply(&self, knobs: &mut Knobs, value: &str) -> Result<()> {
        let bad = |e: &dyn fmt::Display| {
            HarnessError::config(format!("bad value {value:?} for {}: {e}", self.name()))
        };
        if *self == Knob::NoisePhase {
            knobs.noise_phase = match value.to_ascii_lowercase().as_str() {
                "import" => NoisePhase::Import,
                "inference" => NoisePhase::Inference,
                "both" => NoisePhase::Both,
                _ => return Err(bad(&"expected import, inference or both")),
            };
            return Ok(());
        }
        let x: f64 = value.parse().map_err(|e| bad(&e))?;
        let slot = match self {
            Knob::ImportAccuracy => {
                knobs.import_accuracy = Some(x);
                return Ok(());
            }
            Knob::StuckFraction => &mut knobs.stuck_fraction,
            Knob::BoundSigma => &mut knobs.bound_sigma,
            Knob::NoiseSigma => &mut knobs.noise_sigma,
            Knob::NeuronFraction => &mut knobs.neuron_fraction,
            Knob::TemperatureOffset => &mut knobs.temperature_offset,
            Knob::NoisePhase => unreachable!(),
        };
        *slot = x;
        Ok(())
    }
}

impl FromStr for Knob {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Knob::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<_> = Knob::ALL.iter().map(|k| k.name()).collect();
            HarnessError::config(format!("unknown knob {s:?}; known knobs: {}", names.join(", ")))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LetterSetup {
    pub classes: usize,
    /// Pattern file (16 binary pixels and a label per line); builtin glyphs when absent.
    pub patterns: Option<PathBuf>,
    pub schemes: SchemeConfig,
}

impl Default for LetterSetup {
    fn default() -> Self {
        LetterSetup {
            classes: 4,
            patterns: None,
            schemes: SchemeConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MnistSetup {
    /// Directory with the four IDX files; falls back to the environment variable.
    pub dir: Option<PathBuf>,
    pub hidden: usize,
    /// Leading training images used by the precursor (0 = all).
    pub train_subset: usize,
    /// Leading test images used for scoring (0 = all).
    pub test_subset: usize,
    pub precursor: TrainHyper,
    pub hybrid: Option<InSituConfig>,
    /// Leading training images in the hybrid fine-tuning batch.
    pub hybrid_batch: usize,
}

impl Default for MnistSetup {
    fn default() -> Self {
        MnistSetup {
            dir: None,
            hidden: 300,
            train_subset: 0,
            test_subset: 0,
            precursor: TrainHyper::mnist(),
            hybrid: Some(InSituConfig {
                width: 3e-9,
                epochs: 4,
                ..InSituConfig::fine_tuning()
            }),
            hybrid_batch: 3000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FormingSetup {
    pub rows: usize,
    pub cols: usize,
    pub config: FormingConfig,
}

impl Default for FormingSetup {
    fn default() -> Self {
        FormingSetup {
            rows: 50,
            cols: 40,
            config: FormingConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdSetup {
    pub devices: usize,
    pub sweep: ThresholdSweep,
}

impl Default for ThresholdSetup {
    fn default() -> Self {
        ThresholdSetup {
            devices: 500,
            sweep: ThresholdSweep::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TuningPattern {
    /// 20x20 grayscale face.
    Smiley,
    /// Grayscale text image (one row of 0..=255 levels per line).
    Image(PathBuf),
    /// Uniform random measured-conductance targets, S.
    Random { rows: usize, cols: usize, g_lo: f64, g_hi: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuningSetup {
    pub pattern: TuningPattern,
    pub config: TuneConfig,
    /// Histogram bin width, percent.
    pub bin_percent: f64,
}

impl Default for TuningSetup {
    fn default() -> Self {
        TuningSetup {
            pattern: TuningPattern::Smiley,
            config: TuneConfig::default(),
            bin_percent: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TemperatureSetup {
    pub study: DriftStudy,
    pub delta_ts: Vec<f64>,
    /// G_BIAS of the comparison run with a low-conductance mapping, S.
    pub low_g_bias: f64,
}

impl Default for TemperatureSetup {
    fn default() -> Self {
        TemperatureSetup {
            study: DriftStudy::default(),
            delta_ts: (0..=10).map(|k| 5.0 * k as f64).collect(),
            low_g_bias: 25e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub version: u32,
    pub recipe: Recipe,
    pub device: DeviceSpec,
    pub seeds: Vec<u64>,
    pub knobs: Knobs,
    pub letters: LetterSetup,
    pub mnist: MnistSetup,
    pub forming: FormingSetup,
    pub thresholds: ThresholdSetup,
    pub tuning: TuningSetup,
    pub temperature: TemperatureSetup,
    /// Output directory; the command line overrides it. Not part of the hash.
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::for_recipe(Recipe::ExSitu)
    }
}

impl ExperimentConfig {
    /// Desk-scale defaults of a recipe.
    pub fn for_recipe(recipe: Recipe) -> Self {
        let mut cfg = ExperimentConfig {
            version: SCHEMA_VERSION,
            recipe,
            device: DeviceSpec::default(),
            seeds: (0..20).collect(),
            knobs: Knobs::default(),
            letters: LetterSetup::default(),
            mnist: MnistSetup::default(),
            forming: FormingSetup::default(),
            thresholds: ThresholdSetup::default(),
            tuning: TuningSetup::default(),
            temperature: TemperatureSetup::default(),
            out_dir: None,
        };
        match recipe {
            Recipe::Forming | Recipe::Thresholds | Recipe::Temperature => cfg.seeds = vec![0],
            Recipe::Tuning => {
                cfg.seeds = vec![0];
                // the face spans 7 to 84 kOhm
                cfg.device.g_max = 150e-6;
            }
            Recipe::InSitu => cfg.letters.classes = 3,
            Recipe::DefectAware | Recipe::Hybrid => cfg.knobs.stuck_fraction = 0.1,
            Recipe::Mnist => {
                cfg.seeds = (0..3).collect();
                cfg.mnist.train_subset = 9000;
                cfg.mnist.test_subset = 1000;
            }
            Recipe::ExSitu => {}
        }
        cfg
    }

    /// Parses a JSON document over the defaults of its recipe. `recipe`
    /// overrides (and must agree with) the document's own `recipe` key.
    pub fn from_json(text: &str, recipe: Option<Recipe>) -> Result<Self> {
        let doc: Value = serde_json::from_str(text)
            .map_err(|e| HarnessError::config(format!("config is not valid JSON: {e}")))?;
        let Value::Object(map) = &doc else {
            return Err(HarnessError::config("config must be a JSON object"));
        };
        match map.get("version") {
            Some(v) if v.as_u64() == Some(SCHEMA_VERSION as u64) => {}
            Some(v) => {
                return Err(HarnessError::config(format!(
                    "unsupported config version {v}; this build reads version {SCHEMA_VERSION}"
                )))
            }
            None => {
                return Err(HarnessError::config(format!(
                    "config needs \"version\": {SCHEMA_VERSION}"
                )))
            }
        }
        let own = match map.get("recipe") {
            Some(Value::String(s)) => Some(s.parse::<Recipe>()?),
            Some(other) => return Err(HarnessError::config(format!("recipe must be a string, got {other}"))),
            None => None,
        };
        let recipe = match (recipe, own) {
            (Some(a), Some(b)) if a != b => {
                return Err(HarnessError::config(format!(
                    "command line asks for recipe {a} but the config names {b}"
                )))
            }
            (a, b) => a.or(b).ok_or_else(|| HarnessError::config("no recipe given"))?,
        };
        let mut merged = serde_json::to_value(ExperimentConfig::for_recipe(recipe))
            .expect("config serializes");
        merge(&mut merged, doc);
        merged["recipe"] = Value::String(recipe.name().into());
        let cfg: ExperimentConfig = serde_json::from_value(merged)
            .map_err(|e| HarnessError::config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, recipe: Option<Recipe>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text, recipe)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCHEMA_VERSION {
            return Err(HarnessError::config(format!("unsupported config version {}", self.version)));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::config("seeds must not be empty"));
        }
        self.device.validate()?;
        self.knobs.validate()?;
        let l = &self.letters;
        if !(2..=4).contains(&l.classes) && l.patterns.is_none() {
            return Err(HarnessError::config(format!(
                "letters.classes must be 2..=4 for the builtin glyphs, got {}",
                l.classes
            )));
        }
        l.schemes.hyper.validate()?;
        l.schemes.insitu.validate()?;
        l.schemes.hybrid.validate()?;
        if let ImportMethod::WriteVerify(t) = &l.schemes.import {
            t.validate()?;
        }
        let m = &self.mnist;
        if m.hidden == 0 || m.hybrid_batch == 0 {
            return Err(HarnessError::config("mnist.hidden and mnist.hybrid_batch must be positive"));
        }
        m.precursor.validate()?;
        if let Some(h) = &m.hybrid {
            h.validate()?;
        }
        if self.forming.rows == 0 || self.forming.cols == 0 {
            return Err(HarnessError::config("forming array must be non-empty"));
        }
        self.forming.config.validate()?;
        if self.thresholds.devices == 0 {
            return Err(HarnessError::config("thresholds.devices must be positive"));
        }
        self.tuning.config.validate()?;
        if !(self.tuning.bin_percent > 0.0) {
            return Err(HarnessError::config("tuning.bin_percent must be positive"));
        }
        if let TuningPattern::Random { rows, cols, g_lo, g_hi } = &self.tuning.pattern {
            if *rows == 0 || *cols == 0 || !(g_lo <= g_hi) {
                return Err(HarnessError::config("random tuning pattern needs rows, cols > 0 and g_lo <= g_hi"));
            }
        }
        let t = &self.temperature;
        t.study.validate(&self.device)?;
        DriftStudy { g_bias: t.low_g_bias, ..t.study.clone() }.validate(&self.device)?;
        if t.delta_ts.iter().any(|x| !x.is_finite()) {
            return Err(HarnessError::config("temperature.delta_ts must be finite"));
        }
        Ok(())
    }

    /// Canonical JSON: every field explicit, output directory dropped.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        serde_json::to_string(&c).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// MNIST directory from the config or the environment.
    pub fn mnist_dir(&self) -> Result<PathBuf> {
        self.mnist
            .dir
            .clone()
            .or_else(|| std::env::var_os(MNIST_ENV).map(PathBuf::from))
            .ok_or_else(|| {
                HarnessError::Data(format!(
                    "no MNIST directory: set mnist.dir in the config or {MNIST_ENV}"
                ))
            })
    }
}

/// Recursive object merge; non-object values in `patch` replace `base`.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}
