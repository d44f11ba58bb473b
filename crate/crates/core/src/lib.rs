//! Behavioral simulator of memristive-crossbar multilayer perceptrons.
//!
//! The crate is layered bottom-up:
//!
//! * [`device`] – a single metal-oxide memristor: read, pulse switching,
//!   threshold extraction, temperature drift and stuck defects.
//! * [`crossbar`] – a passive array of devices with virtual-ground
//!   vector-by-matrix multiplication and V/2 half-select writes.
//! * [`progtune`] – forming and write-verify tuning.
//! * [`neuron`] – the opamp neuron and the temperature-compensated output stage.
//! * [`network`] – two crossbars and neuron banks wired as a 3-layer perceptron.
//! * [`training`] – ex-situ, defect-aware, in-situ (Manhattan rule) and hybrid training.
//! * [`bench`] – the 4x4 letter task, MNIST IDX loading and scoring.

pub mod bench;
pub mod crossbar;
pub mod device;
mod error;
pub mod grid;
pub mod network;
pub mod neuron;
pub mod progtune;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
