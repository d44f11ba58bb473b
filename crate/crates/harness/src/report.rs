//! Tidy tables, summaries and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Recipe};
use crate::error::{HarnessError, Result};
use crate::stats::Aggregate;

/// A named table of string cells, written as one CSV file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len(), "row width of {}", self.name);
        self.rows.push(row);
    }

    /// Prepends a constant column.
    pub fn with_leading(mut self, column: &str, value: &str) -> Self {
        self.header.insert(0, column.to_string());
        for r in &mut self.rows {
            r.insert(0, value.to_string());
        }
        self
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| HarnessError::Data(format!("csv encoding of {}: {e}", self.name));
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv of utf-8 cells"))
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("{}.csv", self.name));
        fs::write(&path, self.to_csv()?).map_err(|e| HarnessError::io(&path, e))?;
        Ok(path)
    }
}

/// Shortest round-trip formatting, so equal values print identically.
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// Concatenates tables with equal names, in first-seen order.
pub fn merge_tables(parts: impl IntoIterator<Item = Table>) -> Vec<Table> {
    let mut out: Vec<Table> = Vec::new();
    for t in parts {
        match out.iter_mut().find(|o| o.name == t.name) {
            Some(o) => {
                debug_assert_eq!(o.header, t.header);
                o.rows.extend(t.rows);
            }
            None => out.push(t),
        }
    }
    out
}

/// Per-seed metrics and tables of one recipe run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    pub tables: Vec<Table>,
}

impl SeedOutcome {
    pub fn new(seed: u64) -> Self {
        SeedOutcome {
            seed,
            ..Default::default()
        }
    }

    pub fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecipeReport {
    pub recipe: Recipe,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    /// Metric name -> aggregate over seeds.
    pub metrics: BTreeMap<String, Aggregate>,
    /// Scalar facts that do not vary by seed (subsample sizes, software baselines).
    pub notes: BTreeMap<String, f64>,
    #[serde(skip)]
    pub tables: Vec<Table>,
}

impl RecipeReport {
    pub fn aggregate(
        cfg: &ExperimentConfig,
        outcomes: Vec<SeedOutcome>,
        notes: BTreeMap<String, f64>,
        extra_tables: Vec<Table>,
    ) -> Self {
        let mut metrics: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for o in &outcomes {
            for (k, v) in &o.metrics {
                metrics.entry(k.clone()).or_default().push(*v);
            }
        }
        let mut per_seed = Table::new("metrics", &["seed", "metric", "value"]);
        for o in &outcomes {
            for (k, v) in &o.metrics {
                per_seed.push(vec![o.seed.to_string(), k.clone(), num(*v)]);
            }
        }
        let seeds = outcomes.iter().map(|o| o.seed).collect();
        let tables = merge_tables(
            std::iter::once(per_seed)
                .chain(extra_tables)
                .chain(outcomes.into_iter().flat_map(|o| {
                    let s = o.seed.to_string();
                    o.tables.into_iter().map(move |t| t.with_leading("seed", &s))
                })),
        );
        RecipeReport {
            recipe: cfg.recipe,
            config_hash: cfg.hash(),
            seeds,
            metrics: metrics.into_iter().map(|(k, v)| (k, Aggregate::of(v))).collect(),
            notes,
            tables,
        }
    }

    pub fn median(&self, metric: &str) -> Option<f64> {
        self.metrics.get(metric).map(|a| a.median)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Writes `summary.json`, every table as CSV, and the manifest.
    pub fn write(&self, cfg: &ExperimentConfig, dir: &Path, wall_time_s: f64) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let mut files = Vec::new();
        let summary = dir.join("summary.json");
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(&summary, text + "\n").map_err(|e| HarnessError::io(&summary, e))?;
        files.push(summary);
        for t in &self.tables {
            files.push(t.write(dir)?);
        }
        files.push(Manifest::new(cfg, &self.seeds, &self.notes, wall_time_s).write(dir)?);
        Ok(files)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub recipe: Recipe,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    /// Subsample sizes and other run-shaping facts.
    pub notes: BTreeMap<String, f64>,
    pub wall_time_s: f64,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(cfg: &ExperimentConfig, seeds: &[u64], notes: &BTreeMap<String, f64>, wall_time_s: f64) -> Self {
        let mut config = cfg.clone();
        config.out_dir = None;
        Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            recipe: cfg.recipe,
            config_hash: cfg.hash(),
            seeds: seeds.to_vec(),
            notes: notes.clone(),
            wall_time_s,
            config,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| HarnessError::io(&path, e))?;
        Ok(path)
    }
}
