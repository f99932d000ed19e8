use super::{EpochContext, EpochOutcome, SlotDecision};
use crate::phy::single_user_outage;

/// Orthogonal NDMA: a k-user collision always takes k slots, after which
/// each user is recovered by its own single-user decoder.
pub fn run_ondma_epoch(ctx: &EpochContext<'_>) -> EpochOutcome {
    let users = ctx.participants;
    if users.is_empty() {
        return EpochOutcome::idle(ctx);
    }
    let k = users.len();
    let rate = ctx.rate();
    let gain = ctx.params.combining.factor(k);
    let mut out = EpochOutcome::empty(users);
    for _ in 1..k {
        out.length += 1;
        out.record(ctx, users, SlotDecision::Repeat);
    }
    out.length += 1;
    out.delivered = users;
    out.decoded_ok = users
        .iter()
        .filter(|&u| !single_user_outage(ctx.channels, u, rate, gain))
        .collect();
    let decision = if k == 1 {
        SlotDecision::Clean {
            ok: !out.decoded_ok.is_empty(),
        }
    } else {
        SlotDecision::Resolved { errors: out.errors() }
    };
    out.record(ctx, users, decision);
    out
}
