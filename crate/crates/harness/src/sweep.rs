//! Parameter sweeps: a recipe evaluated over a grid of knob values and seeds.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Knob, Recipe};
use crate::error::{HarnessError, Result};
use crate::recipes::{prepare, run_seed, Prepared};
use crate::report::{num, Manifest, SeedOutcome, Table};
use crate::stats::Aggregate;

/// One sweep axis, parsed from `knob=v1,v2,...`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub knob: Knob,
    pub values: Vec<String>,
}

impl Axis {
    pub fn new(knob: Knob, values: &[&str]) -> Self {
        Axis {
            knob,
            values: values.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl FromStr for Axis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| HarnessError::config(format!("axis {s:?} must look like knob=v1,v2,...")))?;
        let values = v
            .split(',')
            .map(str::trim)
            .filter(|x| !x.is_empty())
            .map(String::from)
            .collect();
        Ok(Axis {
            knob: k.trim().parse()?,
            values,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// One value per axis.
    pub values: Vec<String>,
    pub metrics: BTreeMap<String, Aggregate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub recipe: Recipe,
    pub config_hash: String,
    pub axes: Vec<Axis>,
    pub seeds: Vec<u64>,
    pub points: Vec<SweepPoint>,
    pub notes: BTreeMap<String, f64>,
}

/// Cartesian product of the axes, first axis slowest.
pub fn grid(axes: &[Axis]) -> Vec<Vec<String>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v.clone());
                    p
                })
            })
            .collect()
    })
}

/// The base config with one grid point's knob values applied.
pub fn point_config(base: &ExperimentConfig, axes: &[Axis], values: &[String]) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    for (axis, v) in axes.iter().zip(values) {
        axis.knob.apply(&mut cfg.knobs, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run_sweep(base: &ExperimentConfig, axes: &[Axis]) -> Result<SweepReport> {
    check_axes(base.recipe, axes)?;
    let prep = prepare(base)?;
    run_sweep_prepared(base, axes, &prep)
}

fn check_axes(recipe: Recipe, axes: &[Axis]) -> Result<()> {
    for (i, a) in axes.iter().enumerate() {
        if !recipe.knobs().contains(&a.knob) {
            return Err(HarnessError::config(format!(
                "knob {} has no effect on recipe {recipe}",
                a.knob.name()
            )));
        }
        if axes[..i].iter().any(|b| b.knob == a.knob) {
            return Err(HarnessError::config(format!("knob {} appears on two axes", a.knob.name())));
        }
    }
    Ok(())
}

/// Runs every (grid point, seed) task in parallel; results are collected in
/// grid order, so the report does not depend on the thread count.
pub fn run_sweep_prepared(base: &ExperimentConfig, axes: &[Axis], prep: &Prepared) -> Result<SweepReport> {
    check_axes(base.recipe, axes)?;
    let points = grid(axes);
    let configs = points
        .iter()
        .map(|v| point_config(base, axes, v))
        .collect::<Result<Vec<_>>>()?;
    let tasks: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|p| base.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let outcomes = tasks
        .par_iter()
        .map(|&(p, s)| run_seed(&configs[p], prep, s))
        .collect::<Result<Vec<SeedOutcome>>>()?;
    let per_point = base.seeds.len();
    let points = points
        .into_iter()
        .enumerate()
        .map(|(p, values)| {
            let chunk = &outcomes[p * per_point..(p + 1) * per_point];
            let mut metrics: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for o in chunk {
                for (k, v) in &o.metrics {
                    metrics.entry(k.clone()).or_default().push(*v);
                }
            }
            SweepPoint {
                values,
                metrics: metrics.into_iter().map(|(k, v)| (k, Aggregate::of(v))).collect(),
            }
        })
        .collect();
    Ok(SweepReport {
        recipe: base.recipe,
        config_hash: base.hash(),
        axes: axes.to_vec(),
        seeds: base.seeds.clone(),
        points,
        notes: prep.notes(),
    })
}

impl SweepReport {
    /// Median of `metric` at every grid point, in grid order.
    pub fn medians(&self, metric: &str) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| p.metrics.get(metric).map_or(f64::NAN, |a| a.median))
            .collect()
    }

    /// One row per (grid point, metric).
    pub fn table(&self) -> Table {
        let mut header: Vec<&str> = self.axes.iter().map(|a| a.knob.name()).collect();
        header.extend(["metric", "median", "q25", "q75", "seeds"]);
        let mut t = Table::new("sweep", &header);
        for p in &self.points {
            for (m, a) in &p.metrics {
                let mut row = p.values.clone();
                row.extend([m.clone(), num(a.median), num(a.q25), num(a.q75), a.values.len().to_string()]);
                t.push(row);
            }
        }
        t
    }

    /// Writes `sweep.csv`, `sweep.json` and the manifest.
    pub fn write(&self, base: &ExperimentConfig, dir: &Path, wall_time_s: f64) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let json = dir.join("sweep.json");
        let text = serde_json::to_string_pretty(self).expect("sweep report serializes");
        fs::write(&json, text + "\n").map_err(|e| HarnessError::io(&json, e))?;
        let csv = self.table().write(dir)?;
        let manifest = Manifest::new(base, &self.seeds, &self.notes, wall_time_s).write(dir)?;
        Ok(vec![json, csv, manifest])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_parsing() {
        let a: Axis = "stuck_fraction=0, 0.05,0.1".parse().unwrap();
        assert_eq!(a.knob, Knob::StuckFraction);
        assert_eq!(a.values, ["0", "0.05", "0.1"]);
        assert!("stuck_fraction".parse::<Axis>().is_err());
        assert!("nonsense=1".parse::<Axis>().is_err());
        assert!("bound_sigma=".parse::<Axis>().unwrap().values.is_empty());
    }

    #[test]
    fn grid_is_row_major_cartesian() {
        let g = grid(&[
            Axis::new(Knob::NoiseSigma, &["0", "0.1"]),
            Axis::new(Knob::NoisePhase, &["import", "both"]),
        ]);
        assert_eq!(g.len(), 4);
        assert_eq!(g[1], ["0", "both"]);
        assert_eq!(g[2], ["0.1", "import"]);
        assert_eq!(grid(&[]), vec![Vec::<String>::new()]);
    }

    #[test]
    fn inapplicable_knob_is_rejected() {
        let cfg = ExperimentConfig::for_recipe(Recipe::Temperature);
        let e = run_sweep(&cfg, &[Axis::new(Knob::StuckFraction, &["0.1"])]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
