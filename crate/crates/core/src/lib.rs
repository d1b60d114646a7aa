//! Trust-based fuzzy congestion control (TFCC) for wireless multimedia sensor
//! networks.
//!
//! The crate is layered bottom-up:
//!
//! * [`fuzzy`] – trapezoidal partitions, Mamdani rule tables, centroid
//!   defuzzification; [`tables`] holds the bundled partitions and rule bases.
//! * [`trust`] – trust metrics from link observation windows, the stage-1
//!   trust pipeline, link classification and malicious-node identification.
//! * [`congestion`] – queue congestion indices and the stage-2 σ_CT pipeline.
//! * [`routing`] – shortest-path routing over trusted links.
//! * [`rate`] – trust-ordered priorities and rate control.
//! * [`sim`] – the deterministic discrete-event simulator tying it together.
//! * [`config`] and [`experiment`] – scenario files, seed sweeps and CSV output.

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod config;
pub mod congestion;
pub mod experiment;
pub mod fuzzy;
pub mod rate;
pub mod routing;
pub mod sim;
pub mod tables;
pub mod trust;

pub use config::{Protocol, ScenarioConfig};
pub use sim::Simulation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Planar position in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}
