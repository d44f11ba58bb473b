//! Device programming: automated forming and write-verify tuning.
//!
//! Tuning never sees device thresholds directly. It reads, pulses, reads
//! again, and escalates the amplitude whenever a pulse produced no measurable
//! change. An overshoot flips the polarity and restarts the escalation from
//! `v_write_start`.

use std::io::{self, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::crossbar::{Crossbar, DefectMap, ReadNoise};
use crate::device::{check_read, Defect, PulseMode};
use crate::grid::Grid;
use crate::rng::{self, stream};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FormingConfig {
    pub v_start: f64,
    pub v_step: f64,
    pub v_max: f64,
    /// Compliance current, A.
    pub i_stop: f64,
    pub width: f64,
    pub mode: PulseMode,
    /// Manual retries (each doubles the compliance) after an automatic failure.
    pub max_attempts: u32,
}

impl Default for FormingConfig {
    fn default() -> Self {
        FormingConfig {
            v_start: 1.5,
            v_step: 0.1,
            v_max: 4.5,
            i_stop: 20e-6,
            width: 100e-6,
            mode: PulseMode::VoltagePulses,
            max_attempts: 1,
        }
    }
}

impl FormingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_start < self.v_max && self.v_step > 0.0 && self.i_stop > 0.0 && self.width > 0.0)
        {
            return Err(Error::config(
                "forming needs v_start < v_max, v_step > 0, i_stop > 0, width > 0",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FormingReport {
    pub automatic: Vec<(usize, usize)>,
    /// Cells that needed the manual compliance adjustment and then formed.
    pub manual: Vec<(usize, usize)>,
    pub failed: Vec<(usize, usize)>,
    /// Cells that were already formed.
    pub skipped: Vec<(usize, usize)>,
    /// Stress level (V, or V-equivalent in current mode) at which each formed cell switched.
    pub forming_levels: Vec<f64>,
}

impl FormingReport {
    pub fn attempted(&self) -> usize {
        self.automatic.len() + self.manual.len() + self.failed.len()
    }

    pub fn manual_rate(&self) -> f64 {
        self.manual.len() as f64 / self.attempted().max(1) as f64
    }
}

/// Runs the forming flow on every unformed cell.
///
/// Per cell: ramp the stress from `v_start` in `v_step` increments until the
/// compliance current is reached. A cell with an abnormally demanding filament
/// (probability `forming_fail_prob`) does not reach compliance on the automatic
/// ramp; it is flagged and re-ramped with the compliance doubled.
pub fn form_array(xbar: &mut Crossbar, cfg: &FormingConfig, seed: u64) -> Result<FormingReport> {
    cfg.validate()?;
    let fail_prob = xbar.spec().forming_fail_prob;
    let g_virgin_nominal = 0.1 * xbar.spec().g_min;
    let cols = xbar.cols();
    let mut report = FormingReport::default();
    for k in 0..xbar.device_count() {
        let (r, c) = (k / cols, k % cols);
        let mut rng = rng::rng(rng::derive(seed, stream::FORMING, k as u64));
        let hard = rng.random_bool(fail_prob);
        let cell = xbar.cell_mut(r, c);
        if cell.formed {
            report.skipped.push((r, c));
            continue;
        }
        // A demanding filament needs twice the nominal compliance to form.
        let needed = if hard { 2.0 * cfg.i_stop } else { cfg.i_stop };
        let mut compliance = cfg.i_stop;
        let mut outcome = None;
        for attempt in 0..=cfg.max_attempts {
            if attempt > 0 {
                compliance *= 2.0;
            }
            if let Some(level) = ramp(cell.g, cell.v_form, compliance, needed, cfg, g_virgin_nominal) {
                outcome = Some((attempt, level));
                break;
            }
        }
        match outcome {
            Some((attempt, level)) => {
                cell.formed = true;
                cell.g = cell.g_lo;
                report.forming_levels.push(level);
                if attempt == 0 {
                    report.automatic.push((r, c));
                } else {
                    report.manual.push((r, c));
                }
            }
            None => report.failed.push((r, c)),
        }
    }
    Ok(report)
}

/// One stress ramp; returns the stress level at which compliance was reached.
fn ramp(
    g_virgin: f64,
    v_form: f64,
    compliance: f64,
    needed: f64,
    cfg: &FormingConfig,
    g_virgin_nominal: f64,
) -> Option<f64> {
    let steps = ((cfg.v_max - cfg.v_start) / cfg.v_step + 1e-9).floor() as usize;
    for k in 0..=steps {
        let level = cfg.v_start + k as f64 * cfg.v_step;
        let v_device = match cfg.mode {
            PulseMode::VoltagePulses => level,
            // Current source sized so that a nominal virgin cell sees `level` volts.
            PulseMode::CurrentPulses => level * g_virgin_nominal / g_virgin,
        };
        // The filament forms once the stress exceeds the forming voltage and the
        // source can supply the current it draws; the source then limits at compliance.
        if v_device >= v_form && compliance >= needed {
            return Some(v_device);
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneConfig {
    /// Relative accuracy |g - target| / target.
    pub tolerance: f64,
    pub v_read: f64,
    pub v_write_start: f64,
    pub v_write_step: f64,
    pub v_write_max: f64,
    pub max_pulses: u32,
    pub width: f64,
    /// Relative conductance change below which a pulse counts as "no response".
    pub response_floor: f64,
    /// Whole-array verify passes during imports.
    pub verify_passes: u32,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            tolerance: 0.05,
            v_read: 0.2,
            v_write_start: 0.5,
            v_write_step: 0.02,
            v_write_max: 1.6,
            max_pulses: 2000,
            width: 1e-6,
            response_floor: 0.005,
            verify_passes: 3,
        }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::config(format!(
                "tolerance must be in (0, 1), got {}",
                self.tolerance
            )));
        }
        if self.max_pulses < 1 {
            return Err(Error::config("max_pulses must be >= 1"));
        }
        check_read(self.v_read)?;
        if self.v_read <= 0.0 {
            return Err(Error::config("v_read must be positive"));
        }
        if !(self.v_write_start > 0.0
            && self.v_write_step > 0.0
            && self.v_write_max >= self.v_write_start
            && self.width > 0.0
            && self.response_floor > 0.0)
        {
            return Err(Error::config(
                "write schedule needs 0 < v_write_start <= v_write_max, v_write_step > 0, width > 0, response_floor > 0",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureReason {
    /// No conductance response in either polarity at full amplitude.
    Stuck,
    /// The device moves, but not further toward the target (window bound).
    Saturated,
    /// Pulse budget exhausted.
    NoConvergence,
    /// Converged, but later writes on shared lines pushed it out of tolerance.
    Disturbed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TuneOutcome {
    Converged,
    Failed(FailureReason),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub outcome: TuneOutcome,
    pub pulses: u32,
    /// Measured conductance I(v_read)/v_read after tuning.
    pub g_measured: f64,
    pub rel_error: f64,
}

/// Measured conductance at the verify bias (reference temperature, noise-free).
pub fn read_conductance(xbar: &Crossbar, row: usize, col: usize, v_read: f64) -> f64 {
    let cell = xbar.cell(row, col);
    cell.current_unchecked(v_read, cell.thermal.t_ref) / v_read
}

fn check_target(xbar: &Crossbar, target: f64) -> Result<()> {
    let spec = xbar.spec();
    let slack = 1e-12;
    if !(target >= spec.g_min * (1.0 - slack) && target <= spec.g_max * (1.0 + slack)) {
        return Err(Error::config(format!(
            "target conductance {target} S outside [{}, {}]",
            spec.g_min, spec.g_max
        )));
    }
    Ok(())
}

/// Write-verify one cell toward `target` (measured conductance, S).
pub fn tune_cell(
    xbar: &mut Crossbar,
    row: usize,
    col: usize,
    target: f64,
    cfg: &TuneConfig,
) -> Result<TuneResult> {
    cfg.validate()?;
    check_target(xbar, target)?;
    if row >= xbar.rows() || col >= xbar.cols() {
        return Err(Error::Index {
            row,
            col,
            rows: xbar.rows(),
            cols: xbar.cols(),
        });
    }
    tune_unchecked(xbar, row, col, target, cfg)
}

fn tune_unchecked(
    xbar: &mut Crossbar,
    row: usize,
    col: usize,
    target: f64,
    cfg: &TuneConfig,
) -> Result<TuneResult> {
    let read = |x: &Crossbar| read_conductance(x, row, col, cfg.v_read);
    let within = |g: f64| ((g - target) / target).abs() <= cfg.tolerance;
    let finish = |outcome, pulses, g: f64| TuneResult {
        outcome,
        pulses,
        g_measured: g,
        rel_error: (g - target) / target,
    };

    let mut g = read(xbar);
    if within(g) {
        return Ok(finish(TuneOutcome::Converged, 0, g));
    }
    let mut dir = (target - g).signum();
    let mut amp = cfg.v_write_start;
    let mut pulses = 0u32;
    while pulses < cfg.max_pulses {
        xbar.write_pulse(row, col, dir * amp, cfg.width)?;
        pulses += 1;
        let g_new = read(xbar);
        if within(g_new) {
            return Ok(finish(TuneOutcome::Converged, pulses, g_new));
        }
        let responded = (g_new - g).abs() >= cfg.response_floor * g;
        let new_dir = (target - g_new).signum();
        if new_dir != dir {
            dir = new_dir;
            amp = cfg.v_write_start;
        } else if !responded {
            if amp >= cfg.v_write_max {
                // Full amplitude did nothing: probe the other polarity.
                xbar.write_pulse(row, col, -dir * cfg.v_write_max, cfg.width)?;
                pulses += 1;
                let g_probe = read(xbar);
                if (g_probe - g_new).abs() < cfg.response_floor * g_new {
                    return Ok(finish(TuneOutcome::Failed(FailureReason::Stuck), pulses, g_probe));
                }
                xbar.write_pulse(row, col, dir * cfg.v_write_max, cfg.width)?;
                pulses += 1;
                let g_back = read(xbar);
                let outcome = if within(g_back) {
                    TuneOutcome::Converged
                } else {
                    TuneOutcome::Failed(FailureReason::Saturated)
                };
                return Ok(finish(outcome, pulses, g_back));
            }
            amp = (amp + cfg.v_write_step).min(cfg.v_write_max);
        }
        g = g_new;
    }
    Ok(finish(
        TuneOutcome::Failed(FailureReason::NoConvergence),
        pulses,
        g,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneFailure {
    pub row: usize,
    pub col: usize,
    pub reason: FailureReason,
    pub g_measured: f64,
}

/// Outcome of a whole-array import. Every cell is either within tolerance or
/// listed in `failures`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub tolerance: f64,
    pub targets: Grid<f64>,
    pub measured: Grid<f64>,
    /// Signed relative error (measured - target) / target.
    pub errors: Grid<f64>,
    pub pulses: Grid<u32>,
    pub failures: Vec<TuneFailure>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningSummary {
    pub cells: usize,
    pub within_tolerance: usize,
    pub within_fraction: f64,
    pub tolerance: f64,
    pub failures: usize,
    pub stuck: usize,
    pub median_pulses: f64,
    pub total_pulses: u64,
    pub max_abs_error_converged: f64,
}

impl TuningReport {
    pub fn is_failure(&self, row: usize, col: usize) -> bool {
        self.failures.iter().any(|f| f.row == row && f.col == col)
    }

    pub fn within_tolerance(&self) -> usize {
        self.errors.len() - self.failures.len()
    }

    pub fn within_fraction(&self) -> f64 {
        self.within_tolerance() as f64 / self.errors.len().max(1) as f64
    }

    pub fn stuck(&self) -> Vec<(usize, usize)> {
        self.failures
            .iter()
            .filter(|f| f.reason == FailureReason::Stuck)
            .map(|f| (f.row, f.col))
            .collect()
    }

    /// Relative errors of the cells that ended within tolerance.
    pub fn converged_errors(&self) -> Vec<f64> {
        let mut failed = Grid::filled(self.errors.rows(), self.errors.cols(), false);
        for f in &self.failures {
            failed.set(f.row, f.col, true);
        }
        self.errors
            .indexed()
            .filter(|(r, c, _)| !failed.get(*r, *c))
            .map(|(_, _, e)| *e)
            .collect()
    }

    pub fn median_pulses(&self) -> f64 {
        let mut p: Vec<u32> = self.pulses.iter().copied().collect();
        p.sort_unstable();
        median_sorted_u32(&p)
    }

    /// Histogram of converged-cell relative errors in percent: `(lo, hi, count)`.
    pub fn error_histogram(&self, bin_percent: f64) -> Vec<(f64, f64, usize)> {
        let span = 100.0 * self.tolerance;
        let nbins = ((2.0 * span) / bin_percent).ceil().max(1.0) as usize;
        let mut counts = vec![0usize; nbins];
        for e in self.converged_errors() {
            let x = 100.0 * e;
            let k = (((x + span) / bin_percent).floor().max(0.0) as usize).min(nbins - 1);
            counts[k] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .map(|(k, n)| {
                let lo = -span + k as f64 * bin_percent;
                (lo, lo + bin_percent, n)
            })
            .collect()
    }

    pub fn summary(&self) -> TuningSummary {
        TuningSummary {
            cells: self.errors.len(),
            within_tolerance: self.within_tolerance(),
            within_fraction: self.within_fraction(),
            tolerance: self.tolerance,
            failures: self.failures.len(),
            stuck: self.stuck().len(),
            median_pulses: self.median_pulses(),
            total_pulses: self.pulses.iter().map(|&p| p as u64).sum(),
            max_abs_error_converged: self
                .converged_errors()
                .iter()
                .fold(0.0, |m, e| m.max(e.abs())),
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "row,col,target,measured,rel_error,pulses,status")?;
        let mut status = Grid::filled(self.errors.rows(), self.errors.cols(), "ok".to_string());
        for f in &self.failures {
            status.set(f.row, f.col, format!("{:?}", f.reason).to_lowercase());
        }
        for (r, c, e) in self.errors.indexed() {
            writeln!(
                out,
                "{r},{c},{},{},{},{},{}",
                self.targets.get(r, c),
                self.measured.get(r, c),
                e,
                self.pulses.get(r, c),
                status.get(r, c)
            )?;
        }
        Ok(())
    }
}

fn median_sorted_u32(p: &[u32]) -> f64 {
    match p.len() {
        0 => 0.0,
        n if n % 2 == 1 => p[n / 2] as f64,
        n => 0.5 * (p[n / 2 - 1] as f64 + p[n / 2] as f64),
    }
}

/// Tunes every cell toward `targets` (measured conductance at `cfg.v_read`),
/// row-major, then re-verifies the whole array up to `verify_passes` times.
pub fn import_conductance_map(
    xbar: &mut Crossbar,
    targets: &Grid<f64>,
    cfg: &TuneConfig,
) -> Result<TuningReport> {
    import_with_skip(xbar, targets, cfg, None)
}

/// Like [`import_conductance_map`], but cells flagged in `skip` are left untouched
/// (known stuck devices) and reported as failures if out of tolerance.
pub fn import_with_skip(
    xbar: &mut Crossbar,
    targets: &Grid<f64>,
    cfg: &TuneConfig,
    skip: Option<&Grid<Defect>>,
) -> Result<TuningReport> {
    cfg.validate()?;
    let (rows, cols) = (xbar.rows(), xbar.cols());
    targets.ensure_dims(rows, cols, "target map")?;
    if let Some(s) = skip {
        s.ensure_dims(rows, cols, "skip map")?;
    }
    for &t in targets.iter() {
        check_target(xbar, t)?;
    }
    let mut pulses = Grid::filled(rows, cols, 0u32);
    let mut last: Grid<Option<FailureReason>> = Grid::filled(rows, cols, None);
    let mut gave_up = Grid::filled(rows, cols, false);
    if let Some(s) = skip {
        for (r, c, d) in s.indexed() {
            if *d != Defect::None {
                gave_up.set(r, c, true);
                last.set(r, c, Some(FailureReason::Stuck));
            }
        }
    }
    for _ in 0..cfg.verify_passes.max(1) {
        let mut touched = false;
        for r in 0..rows {
            for c in 0..cols {
                if *gave_up.get(r, c) {
                    continue;
                }
                let target = *targets.get(r, c);
                let g = read_conductance(xbar, r, c, cfg.v_read);
                if ((g - target) / target).abs() <= cfg.tolerance {
                    continue;
                }
                touched = true;
                let res = tune_unchecked(xbar, r, c, target, cfg)?;
                *pulses.get_mut(r, c) += res.pulses;
                match res.outcome {
                    TuneOutcome::Converged => last.set(r, c, None),
                    TuneOutcome::Failed(reason) => {
                        last.set(r, c, Some(reason));
                        if reason != FailureReason::NoConvergence {
                            gave_up.set(r, c, true);
                        }
                    }
                }
            }
        }
        if !touched {
            break;
        }
    }

    let measured = Grid::from_fn(rows, cols, |r, c| read_conductance(xbar, r, c, cfg.v_read));
    let errors = Grid::from_fn(rows, cols, |r, c| {
        (measured.get(r, c) - targets.get(r, c)) / targets.get(r, c)
    });
    let mut failures = Vec::new();
    for (r, c, e) in errors.indexed() {
        if e.abs() > cfg.tolerance {
            failures.push(TuneFailure {
                row: r,
                col: c,
                reason: last.get(r, c).unwrap_or(FailureReason::Disturbed),
                g_measured: *measured.get(r, c),
            });
        }
    }
    Ok(TuningReport {
        tolerance: cfg.tolerance,
        targets: targets.clone(),
        measured,
        errors,
        pulses,
        failures,
    })
}

/// Finds stuck devices by tuning every cell to mid-range and collecting the
/// cells that never respond. Leaves working cells at mid-range. The returned
/// map also carries the measured asymmetry.
pub fn diagnose_defects(xbar: &mut Crossbar, cfg: &TuneConfig) -> Result<(DefectMap, TuningReport)> {
    let spec = xbar.spec().clone();
    let mid = Grid::filled(xbar.rows(), xbar.cols(), spec.g_mid());
    let report = import_conductance_map(xbar, &mid, cfg)?;
    let maps = xbar.measure_maps(cfg.v_read, &mut ReadNoise::off())?;
    let mut flags = Grid::filled(xbar.rows(), xbar.cols(), Defect::None);
    for f in report.failures.iter().filter(|f| f.reason == FailureReason::Stuck) {
        let g = *maps.conductance.get(f.row, f.col);
        let flag = if g > spec.g_mid() {
            Defect::StuckOn
        } else {
            Defect::StuckOff
        };
        flags.set(f.row, f.col, flag);
    }
    Ok((
        DefectMap {
            flags,
            asymmetry: maps.asymmetry,
        },
        report,
    ))
}

/// Resistance endpoints of the grayscale demo pattern: white / black pixels.
pub const R_WHITE: f64 = 84e3;
pub const R_BLACK: f64 = 7e3;

/// Maps 8-bit gray levels linearly onto resistance `[r_black, r_white]` and
/// returns the conductance targets.
pub fn gray_to_conductance(image: &Grid<u8>, r_black: f64, r_white: f64) -> Grid<f64> {
    image.map(|&level| {
        let r = r_black + (r_white - r_black) * level as f64 / 255.0;
        1.0 / r
    })
}

/// Reads a grayscale image: either whitespace-separated 0..=255 integers (one
/// image row per line), or, when `raw_dims` is given, raw 8-bit bytes.
pub fn read_gray_image(path: &Path, raw_dims: Option<(usize, usize)>) -> Result<Grid<u8>> {
    let bytes = std::fs::read(path)?;
    match raw_dims {
        Some((rows, cols)) => {
            if bytes.len() != rows * cols {
                return Err(Error::Format {
                    offset: bytes.len().min(rows * cols),
                    msg: format!("raw image has {} bytes, expected {}", bytes.len(), rows * cols),
                });
            }
            Grid::from_vec(rows, cols, bytes)
        }
        None => parse_gray_text(&String::from_utf8_lossy(&bytes)),
    }
}

pub fn parse_gray_text(text: &str) -> Result<Grid<u8>> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<u8> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<u8>().map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: format!("bad gray level {s:?}: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        match cols {
            None => cols = Some(vals.len()),
            Some(n) if n != vals.len() => {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected {n} values, got {}", vals.len()),
                })
            }
            _ => {}
        }
        data.extend(vals);
        rows += 1;
    }
    let cols = cols.ok_or(Error::Parse {
        line: 1,
        msg: "empty image".into(),
    })?;
    Grid::from_vec(rows, cols, data)
}

/// A 20x20, 256-level smiley face: dark face on a light vertical gradient.
pub fn smiley_face() -> Grid<u8> {
    let n = 20;
    Grid::from_fn(n, n, |r, c| {
        let (y, x) = (r as f64 - 9.5, c as f64 - 9.5);
        let d = (x * x + y * y).sqrt();
        let background = (150.0 + 100.0 * r as f64 / 19.0) as u8;
        let eye = |ex: f64, ey: f64| ((x - ex).powi(2) + (y - ey).powi(2)).sqrt() < 1.6;
        let mouth = y > 1.5 && (d - 5.0).abs() < 0.9 && x.abs() < 5.0;
        if d > 9.0 {
            background
        } else if eye(-3.5, -3.0) || eye(3.5, -3.0) || mouth {
            0
        } else {
            (60.0 + 60.0 * d / 9.0) as u8
        }
    })
}
