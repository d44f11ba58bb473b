//! Experiment harness for `xbarsim`: named recipes, knob sweeps over seeds,
//! tidy CSV reports and run manifests.
//!
//! Every task is single-threaded and seeded; parallelism is only across
//! (grid point, seed) tasks, so outputs do not depend on the thread count.

pub mod config;
pub mod error;
pub mod recipes;
pub mod report;
pub mod stats;
pub mod sweep;

pub use config::{ExperimentConfig, Knob, Knobs, Recipe};
pub use error::{HarnessError, Result};
pub use recipes::{prepare, run_prepared, run_recipe, Prepared};
pub use report::{RecipeReport, Table};
pub use sweep::{run_sweep, run_sweep_prepared, Axis, SweepReport};
