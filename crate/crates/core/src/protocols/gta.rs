use std::collections::VecDeque;

use rand::Rng;

use super::{EpochContext, EpochOutcome, SlotDecision};
use crate::phy::{single_user_outage, UserSet};

/// Chooses the left subgroup when a collision splits.
pub trait GroupSplitter {
    fn split(&mut self, group: UserSet) -> UserSet;
}

/// Fair random split: each member joins the left group with probability 1/2.
pub struct FairSplit<'a, R: Rng + ?Sized>(pub &'a mut R);

impl<R: Rng + ?Sized> GroupSplitter for FairSplit<'_, R> {
    fn split(&mut self, group: UserSet) -> UserSet {
        group.iter().filter(|_| self.0.random_bool(0.5)).collect()
    }
}

/// Replays a fixed sequence of left groups. Once the script runs out the
/// lowest-indexed member is split off alone, which always terminates.
#[derive(Debug, Clone, Default)]
pub struct ScriptedSplits {
    script: VecDeque<UserSet>,
}

impl ScriptedSplits {
    pub fn new<I: IntoIterator<Item = UserSet>>(splits: I) -> Self {
        ScriptedSplits {
            script: splits.into_iter().collect(),
        }
    }
}

impl GroupSplitter for ScriptedSplits {
    fn split(&mut self, group: UserSet) -> UserSet {
        match self.script.pop_front() {
            Some(left) => UserSet::from_bits(left.bits() & group.bits()),
            None => group.iter().next().map(UserSet::single).unwrap_or_default(),
        }
    }
}

/// Tree-algorithm epoch with fair random splits.
pub fn run_gta_epoch<R: Rng + ?Sized>(ctx: &EpochContext<'_>, rng: &mut R) -> EpochOutcome {
    run_gta_epoch_with(ctx, &mut FairSplit(rng))
}

/// Tree-algorithm epoch with an explicit splitter.
///
/// A collision of the current group costs one slot and splits it. The
/// split is observed through the control channels, so:
/// * an empty left group costs nothing and the whole group collides again;
/// * a singleton left group gets one clean slot, then the rest continues;
/// * a larger left group continues alone and the right group is pruned.
///
/// This is the tree whose expected length and delivered count satisfy the
/// `X_k`, `J_k` recursions.
pub fn run_gta_epoch_with<S: GroupSplitter + ?Sized>(ctx: &EpochContext<'_>, splitter: &mut S) -> EpochOutcome {
    let users = ctx.participants;
    if users.is_empty() {
        return EpochOutcome::idle(ctx);
    }
    let rate = ctx.rate();
    let mut out = EpochOutcome::empty(users);
    let mut group = users;
    loop {
        out.length += 1;
        if group.len() == 1 {
            clean_slot(ctx, &mut out, group, rate);
            break;
        }
        out.record(ctx, group, SlotDecision::Collision);
        let left = splitter.split(group);
        match left.len() {
            0 => {}
            1 => {
                out.length += 1;
                clean_slot(ctx, &mut out, left, rate);
                group = group.minus(left);
            }
            _ => {
                out.pruned = out.pruned.union(group.minus(left));
                group = left;
            }
        }
    }
    out
}

fn clean_slot(ctx: &EpochContext<'_>, out: &mut EpochOutcome, single: UserSet, rate: f64) {
    let user = single.iter().next().expect("clean slot needs one user");
    let ok = !single_user_outage(ctx.channels, user, rate, 1.0);
    out.delivered.insert(user);
    if ok {
        out.decoded_ok.insert(user);
    }
    out.record(ctx, single, SlotDecision::Clean { ok });
}
