//! Random-access channel laboratory: outage-based block-fading PHY,
//! collision-resolution protocols (tree algorithm, O-NDMA, IR-ARQ),
//! closed-form tradeoff analytics, Monte Carlo estimators and a
//! random-arrival queueing simulator.

pub mod dmt;
pub mod error;
pub mod math;
pub mod phy;
pub mod protocols;
pub mod queueing;
pub mod rng;
pub mod simkit;

pub use dmt::{AntennaConfig, BetaModel, GtaObjective, GtaRecursionTable, HighSnrBeta, TradeoffPoint};
pub use error::{Error, Result};
pub use phy::{ChannelSet, CombiningGain, UserSet};
pub use protocols::{EpochContext, EpochOutcome, Protocol, ProtocolParams, RateSpec, SlotRecord};
pub use queueing::{DelayReport, QueueConfig, StabilityVerdict};
pub use simkit::{BetaTable, ThroughputEstimate};
