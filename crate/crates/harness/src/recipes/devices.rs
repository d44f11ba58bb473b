//! Device-level recipes: forming, threshold extraction, write-verify tuning.

use rand::Rng;
use xbarsim::crossbar::Crossbar;
use xbarsim::device::{sample_device, PulseMode};
use xbarsim::grid::Grid;
use xbarsim::progtune::{
    form_array, gray_to_conductance, import_conductance_map, read_gray_image, smiley_face, FormingConfig,
    TuneConfig, R_BLACK, R_WHITE,
};
use xbarsim::rng;

use super::stream;
use crate::config::{ExperimentConfig, TuningPattern};
use crate::error::{HarnessError, Result};
use crate::report::{num, SeedOutcome, Table};

fn mode_tag(mode: PulseMode) -> &'static str {
    match mode {
        PulseMode::VoltagePulses => "voltage",
        PulseMode::CurrentPulses => "current",
    }
}

/// Forms a fresh virgin array in each pulse mode (independent devices).
pub fn forming(cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutcome> {
    let mut out = SeedOutcome::new(seed);
    let mut levels = Table::new("forming_levels", &["mode", "level"]);
    let mut outcomes = Table::new("forming_outcomes", &["mode", "automatic", "manual", "failed"]);
    for (k, mode) in [PulseMode::VoltagePulses, PulseMode::CurrentPulses].into_iter().enumerate() {
        let tag = mode_tag(mode);
        let s = rng::derive(seed, stream::FORMING, k as u64);
        let mut xbar = Crossbar::build_virgin(cfg.forming.rows, cfg.forming.cols, &cfg.device, s)?;
        let fc = FormingConfig {
            mode,
            ..cfg.forming.config.clone()
        };
        let rep = form_array(&mut xbar, &fc, s)?;
        let n = rep.attempted().max(1) as f64;
        out.metric(&format!("{tag}_manual_rate"), rep.manual.len() as f64 / n);
        out.metric(&format!("{tag}_failed_rate"), rep.failed.len() as f64 / n);
        // a manual retry that still fails also needed intervention
        out.metric(&format!("{tag}_intervention_rate"), (rep.manual.len() + rep.failed.len()) as f64 / n);
        out.metric(&format!("{tag}_devices"), rep.attempted() as f64);
        for l in &rep.forming_levels {
            levels.push(vec![tag.into(), num(*l)]);
        }
        outcomes.push(vec![
            tag.into(),
            rep.automatic.len().to_string(),
            rep.manual.len().to_string(),
            rep.failed.len().to_string(),
        ]);
    }
    out.tables = vec![outcomes, levels];
    Ok(out)
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, var.sqrt())
}

/// Staircase threshold extraction over freshly sampled formed devices.
pub fn thresholds(cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutcome> {
    let mut out = SeedOutcome::new(seed);
    let mut table = Table::new("thresholds", &["device", "set", "reset"]);
    let (mut set, mut reset) = (Vec::new(), Vec::new());
    for i in 0..cfg.thresholds.devices {
        let mut d = sample_device(&cfg.device, rng::derive(seed, stream::THRESHOLDS, i as u64), true)?;
        // mid-window, so both polarities have room to switch
        d.g = 0.5 * (d.g_lo + d.g_hi);
        let th = d.extract_thresholds(&cfg.thresholds.sweep)?;
        let cell = |x: Option<f64>| x.map(num).unwrap_or_default();
        table.push(vec![i.to_string(), cell(th.set), cell(th.reset)]);
        set.extend(th.set);
        reset.extend(th.reset);
    }
    for (name, v) in [("set", &set), ("reset", &reset)] {
        let (m, sd) = mean_sd(v);
        out.metric(&format!("{name}_mean"), m);
        out.metric(&format!("{name}_sd"), sd);
        out.metric(&format!("{name}_unswitched"), (cfg.thresholds.devices - v.len()) as f64);
    }
    out.tables = vec![table];
    Ok(out)
}

fn tuning_targets(cfg: &ExperimentConfig, seed: u64) -> Result<Grid<f64>> {
    Ok(match &cfg.tuning.pattern {
        TuningPattern::Smiley => gray_to_conductance(&smiley_face(), R_BLACK, R_WHITE),
        TuningPattern::Image(path) => {
            let img = read_gray_image(path, None)
                .map_err(|e| HarnessError::Data(format!("cannot read image {}: {e}", path.display())))?;
            gray_to_conductance(&img, R_BLACK, R_WHITE)
        }
        TuningPattern::Random { rows, cols, g_lo, g_hi } => {
            let mut r = rng::rng(rng::derive(seed, stream::TUNING, 1));
            Grid::from_fn(*rows, *cols, |_, _| r.random_range(*g_lo..=*g_hi))
        }
    })
}

/// Write-verify tuning of the configured pattern into a fresh array.
pub fn tuning(cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutcome> {
    let targets = tuning_targets(cfg, seed)?;
    let (lo, hi) = targets
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &t| (a.min(t), b.max(t)));
    if lo < cfg.device.g_min || hi > cfg.device.g_max {
        return Err(HarnessError::config(format!(
            "tuning targets span [{lo:e}, {hi:e}] S, outside the device window [{:e}, {:e}] S",
            cfg.device.g_min, cfg.device.g_max
        )));
    }
    let (rows, cols) = targets.dims();
    let mut xbar = Crossbar::build(rows, cols, &cfg.device, rng::derive(seed, stream::TUNING, 0))?;
    let (on, off) = cfg.knobs.stuck_split();
    if cfg.knobs.stuck_fraction > 0.0 {
        xbar.inject_cell_defects(on, off, rng::derive(seed, stream::TUNING, 2))?;
    }
    let tc = TuneConfig {
        tolerance: cfg.knobs.import_accuracy.unwrap_or(cfg.tuning.config.tolerance),
        ..cfg.tuning.config.clone()
    };
    let rep = import_conductance_map(&mut xbar, &targets, &tc)?;
    let s = rep.summary();
    let mut out = SeedOutcome::new(seed);
    let working = (s.cells - s.stuck).max(1);
    out.metric("within_fraction", s.within_fraction);
    out.metric("within_fraction_working", s.within_tolerance as f64 / working as f64);
    out.metric("stuck", s.stuck as f64);
    out.metric("failures", s.failures as f64);
    out.metric("median_pulses", s.median_pulses);
    out.metric("max_abs_error_converged", s.max_abs_error_converged);

    let mut hist = Table::new("tuning_errors", &["lo_percent", "hi_percent", "count"]);
    for (a, b, n) in rep.error_histogram(cfg.tuning.bin_percent) {
        hist.push(vec![num(a), num(b), n.to_string()]);
    }
    let mut map = Table::new(
        "tuning_map",
        &["row", "col", "target", "measured", "rel_error", "pulses", "status"],
    );
    for (r, c, e) in rep.errors.indexed() {
        let status = rep
            .failures
            .iter()
            .find(|f| f.row == r && f.col == c)
            .map(|f| format!("{:?}", f.reason).to_lowercase())
            .unwrap_or_else(|| "ok".into());
        map.push(vec![
            r.to_string(),
            c.to_string(),
            num(*rep.targets.get(r, c)),
            num(*rep.measured.get(r, c)),
            num(*e),
            rep.pulses.get(r, c).to_string(),
            status,
        ]);
    }
    out.tables = vec![hist, map];
    Ok(out)
}
