//! System-level radio network simulator for studying a deployable base
//! station (cell-on-wheels or cell-on-wings) operating co-channel with a
//! public macro network.
//!
//! The crate is organised around the simulation pipeline:
//!
//! - [`scenario`] — deployment geometry, base stations, users, access
//!   policies, the four built-in scenario presets, and the rigid cluster
//!   translation used by the distance sweep.
//! - [`propagation`] — rural-macro pathloss, LOS sampling, lognormal
//!   shadowing, sector antenna patterns, and per-link cell-gain tables.
//! - [`radio`] — received power, DL/UL SINR under load-weighted
//!   interference, uplink power control, and the link rate model.
//! - [`traffic`] — cell selection, admission, drop decisions, bandwidth
//!   allocation with mission-critical priority, load-coupling fixed point,
//!   and per-user traffic accounting.
//! - [`experiment`] — Monte-Carlo runs over presets, the
//!   macro-to-deployable distance sweep, aggregation, and CSV/manifest
//!   emission.
//!
//! Everything is deterministic: a scenario seed fully determines user
//! drops, LOS states and shadowing draws, and results are independent of
//! worker-thread count.

pub mod error;
pub mod experiment;
pub mod propagation;
pub mod radio;
pub mod scenario;
pub mod seed;
pub mod traffic;
pub mod units;

pub use error::{Error, Result};
pub use experiment::{AggregateMetrics, RunSpec, SweepSpec, SweepTable};
pub use propagation::{AntennaConfig, AntennaPattern, CellGain, LinkGainTable, LinkState, RmaParams};
pub use radio::{LinkRateModel, NoiseModel, UplinkPowerControl};
pub use scenario::{
    AccessPolicy, BaseStationSpec, BsKind, McAccess, NetworkId, Position, ScenarioConfig,
    ScenarioPreset, SectorInstance, ServiceProfile, UserClass, UserSpec,
};
pub use traffic::{Attachment, CellAllocation, TrafficReport};
