//! Simulation and analysis toolkit for the weakly asymmetric Atlas zero-range process.

pub mod bg;
pub mod boundary;
pub mod config;
pub mod dynamics;
pub mod fields;
pub mod harness;
pub mod params;
pub mod replica;
pub mod spde;
pub mod stats;

pub use config::{Configuration, FlagChange, Move};
pub use dynamics::{simulate, Event, EventKind, Observer, SimOptions, SimOutcome, SimState};
pub use params::{ModelParams, ParamError};
