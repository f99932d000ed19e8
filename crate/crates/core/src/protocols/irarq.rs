use super::{EpochContext, EpochOutcome, SlotDecision};
use crate::phy::SubsetRates;

/// Incremental-redundancy ARQ with joint decoding across users and rounds.
///
/// After round l the receiver holds l sub-blocks from each participant and
/// ACKs as soon as every subset constraint is met; at round L it ACKs
/// regardless, and the packets leave their queues either way.
pub fn run_irarq_epoch(ctx: &EpochContext<'_>) -> EpochOutcome {
    let users = ctx.participants;
    if users.is_empty() {
        return EpochOutcome::idle(ctx);
    }
    let rate = ctx.rate();
    let deadline = ctx.params.deadline;
    let rates = SubsetRates::new(ctx.channels, users);
    let mut out = EpochOutcome::empty(users);
    out.delivered = users;
    for round in 1..=deadline {
        out.length = round;
        let outage = rates.outage(rate, round);
        if !outage {
            out.decoded_ok = users;
            out.record(ctx, users, SlotDecision::Ack { ok: true });
            break;
        }
        if round == deadline {
            out.record(ctx, users, SlotDecision::Ack { ok: false });
        } else {
            out.record(ctx, users, SlotDecision::Nack);
        }
    }
    out
}
