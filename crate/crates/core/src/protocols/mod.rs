//! Slot-level execution of one collision-resolution epoch.
//!
//! An epoch starts when the participants (chosen by the probability-p_t
//! rule) transmit for the first time and ends at the receiver's ACK. Only
//! the initial participants may transmit until then. Each runner returns an
//! [`EpochOutcome`]; with `trace` set it also records one [`SlotRecord`]
//! per slot.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_pt, check_range, Error, Result};
use crate::phy::{ChannelSet, CombiningGain, UserSet};

mod gta;
mod irarq;
mod ondma;

pub use gta::{run_gta_epoch, run_gta_epoch_with, FairSplit, GroupSplitter, ScriptedSplits};
pub use irarq::run_irarq_epoch;
pub use ondma::run_ondma_epoch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "gta")]
    Gta,
    #[serde(rename = "ondma")]
    Ondma,
    #[serde(rename = "irarq")]
    IrArq,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Gta, Protocol::Ondma, Protocol::IrArq];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Gta => "gta",
            Protocol::Ondma => "ondma",
            Protocol::IrArq => "irarq",
        }
    }

    pub fn has_deadline(self) -> bool {
        matches!(self, Protocol::IrArq)
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "gta" | "tree" => Ok(Protocol::Gta),
            "ondma" => Ok(Protocol::Ondma),
            "irarq" | "ir" => Ok(Protocol::IrArq),
            _ => Err(Error::UnknownProtocol(s.to_string())),
        }
    }
}

/// First-round rate: a constant number of bits per channel use, or a
/// multiplexing gain `r` with `R = r log2(1 + snr)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "value")]
pub enum RateSpec {
    Fixed(f64),
    Multiplexing(f64),
}

impl RateSpec {
    pub fn bits(self, snr: f64) -> f64 {
        match self {
            RateSpec::Fixed(r) => r,
            RateSpec::Multiplexing(r) => r * (1.0 + snr).log2(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub p_t: f64,
    pub rate: RateSpec,
    /// Maximum number of IR-ARQ rounds; ignored by GTA and O-NDMA.
    pub deadline: u32,
    pub combining: CombiningGain,
}

impl ProtocolParams {
    pub fn new(p_t: f64, rate: RateSpec, deadline: u32) -> Result<Self> {
        let p = ProtocolParams {
            p_t,
            rate,
            deadline,
            combining: CombiningGain::Unit,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_combining(mut self, combining: CombiningGain) -> Self {
        self.combining = combining;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_pt(self.p_t)?;
        let r = match self.rate {
            RateSpec::Fixed(r) | RateSpec::Multiplexing(r) => r,
        };
        check_range("rate", r, r >= 0.0 && r.is_finite(), "[0, inf)")?;
        if self.deadline == 0 {
            return Err(Error::OutOfRange {
                name: "L",
                value: 0.0,
                expected: "[1, inf)",
            });
        }
        Ok(())
    }
}

/// Everything an epoch runner needs. Participants are fixed for the epoch.
#[derive(Debug, Clone, Copy)]
pub struct EpochContext<'a> {
    pub participants: UserSet,
    pub channels: &'a ChannelSet,
    pub params: &'a ProtocolParams,
    pub trace: bool,
}

impl<'a> EpochContext<'a> {
    pub fn new(participants: UserSet, channels: &'a ChannelSet, params: &'a ProtocolParams) -> Self {
        debug_assert!(participants.is_subset_of(UserSet::first(channels.users())));
        EpochContext {
            participants,
            channels,
            params,
            trace: false,
        }
    }

    pub fn traced(mut self) -> Self {
        self.trace = true;
        self
    }

    pub(crate) fn rate(&self) -> f64 {
        self.params.rate.bits(self.channels.snr())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotDecision {
    Idle,
    Collision,
    /// A single user transmitted alone and was decoded (or not).
    Clean {
        ok: bool,
    },
    /// O-NDMA repetition slot before the last one.
    Repeat,
    /// O-NDMA final slot; lists the users whose single-user decoder failed.
    Resolved {
        errors: UserSet,
    },
    Nack,
    /// IR-ARQ ACK; `ok` is false when the deadline forced it.
    Ack {
        ok: bool,
    },
}

impl fmt::Display for SlotDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotDecision::Idle => f.write_str("idle"),
            SlotDecision::Collision => f.write_str("collision"),
            SlotDecision::Clean { ok: true } => f.write_str("clean ok"),
            SlotDecision::Clean { ok: false } => f.write_str("clean outage"),
            SlotDecision::Repeat => f.write_str("repeat"),
            SlotDecision::Resolved { errors } => write!(f, "resolved errors={errors}"),
            SlotDecision::Nack => f.write_str("nack"),
            SlotDecision::Ack { ok: true } => f.write_str("ack ok"),
            SlotDecision::Ack { ok: false } => f.write_str("ack outage"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotRecord {
    pub epoch: u64,
    /// 1-based slot index within the epoch.
    pub slot: u32,
    pub active: UserSet,
    pub decision: SlotDecision,
}

impl fmt::Display for SlotRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.epoch, self.slot, self.active, self.decision)
    }
}

/// Result of one epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochOutcome {
    /// Epoch length in slots (>= 1).
    pub length: u32,
    pub participants: UserSet,
    /// Packets that left their transmitter, decoded or not.
    pub delivered: UserSet,
    /// Delivered packets the receiver decoded correctly.
    pub decoded_ok: UserSet,
    /// Tree-algorithm users excluded from this epoch; their packets stay queued.
    pub pruned: UserSet,
    pub trace: Vec<SlotRecord>,
}

impl EpochOutcome {
    pub(crate) fn idle(ctx: &EpochContext<'_>) -> Self {
        let mut out = EpochOutcome::empty(ctx.participants);
        out.length = 1;
        out.record(ctx, UserSet::EMPTY, SlotDecision::Idle);
        out
    }

    pub(crate) fn empty(participants: UserSet) -> Self {
        EpochOutcome {
            length: 0,
            participants,
            delivered: UserSet::EMPTY,
            decoded_ok: UserSet::EMPTY,
            pruned: UserSet::EMPTY,
            trace: Vec::new(),
        }
    }

    /// Append a trace record for the slot numbered `self.length`.
    pub(crate) fn record(&mut self, ctx: &EpochContext<'_>, active: UserSet, decision: SlotDecision) {
        if ctx.trace {
            self.trace.push(SlotRecord {
                epoch: ctx.channels.epoch(),
                slot: self.length,
                active,
                decision,
            });
        }
    }

    /// Initial collision size.
    pub fn k(&self) -> usize {
        self.participants.len()
    }

    pub fn is_idle(&self) -> bool {
        self.participants.is_empty()
    }

    /// Delivered packets that were not decoded.
    pub fn errors(&self) -> UserSet {
        self.delivered.minus(self.decoded_ok)
    }

    pub fn trace_lines(&self) -> String {
        self.trace.iter().map(|r| format!("{r}\n")).collect()
    }
}

/// Probability-p_t rule: each eligible user transmits independently with
/// probability `p_t`.
pub fn choose_participants<R: Rng + ?Sized>(eligible: UserSet, p_t: f64, rng: &mut R) -> UserSet {
    eligible.iter().filter(|_| rng.random_bool(p_t)).collect()
}

/// Run one epoch of `protocol`. Only the tree algorithm consumes randomness.
pub fn run_epoch<R: Rng + ?Sized>(protocol: Protocol, ctx: &EpochContext<'_>, rng: &mut R) -> EpochOutcome {
    match protocol {
        Protocol::Gta => run_gta_epoch(ctx, rng),
        Protocol::Ondma => run_ondma_epoch(ctx),
        Protocol::IrArq => run_irarq_epoch(ctx),
    }
}
