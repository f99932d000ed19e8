//! Random arrivals: analytic delay via an M/G/1-with-vacations model and a
//! slot-level queue simulator with stability and delay measurement.
//!
//! Time is continuous with slot `s` covering `[s, s + 1)`. Arrivals land at
//! uniform instants inside their slot and become eligible at the next epoch
//! start; a packet departs at the end of the last slot of the epoch that
//! delivers it.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dmt::{self, AntennaConfig, BetaModel};
use crate::error::{check_pt, check_range, Error, Result};
use crate::math::{binomial_pmf, RegressionSums};
use crate::phy::{ChannelSet, UserSet};
use crate::protocols::{choose_participants, run_epoch, EpochContext, Protocol, ProtocolParams};
use crate::rng::{derive_seed, run_chunks, substream, SimRng};
use crate::simkit::Estimate;

/// Solution of the steady-state transmission-probability equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoint {
    /// Per-user probability of transmitting at an epoch start.
    pub p: f64,
    /// Set when `lambda = 0`: queues are empty and `p` sits at its 0 boundary.
    pub empty_queues: bool,
}

fn load<B: BetaModel + ?Sized>(users: usize, p: f64, deadline: u32, beta: &B) -> f64 {
    dmt::retransmission_load(users, p, deadline, beta)
}

/// Root `p` of `K p = lambda (1 + sum_k B(K,k,p) sum_{l<L} beta_k(l))` by
/// bisection on `(0, p_t]`. Returns [`Error::Unstable`] when the left side
/// cannot catch up even at `p = p_t`.
pub fn solve_transmission_probability<B: BetaModel + ?Sized>(
    lambda: f64,
    users: usize,
    p_t: f64,
    deadline: u32,
    beta: &B,
) -> Result<FixedPoint> {
    check_range("lambda", lambda, lambda >= 0.0 && lambda.is_finite(), "[0, inf)")?;
    check_pt(p_t)?;
    if users == 0 {
        return Err(Error::InvalidConfig("K must be at least 1".into()));
    }
    if lambda == 0.0 {
        return Ok(FixedPoint {
            p: 0.0,
            empty_queues: true,
        });
    }
    let k = users as f64;
    let g = |p: f64| k * p - lambda * (1.0 + load(users, p, deadline, beta));
    let top = g(p_t);
    if top < 0.0 {
        return Err(Error::Unstable {
            lambda,
            limit: k * p_t / (1.0 + load(users, p_t, deadline, beta)),
        });
    }
    if top == 0.0 {
        return Ok(FixedPoint {
            p: p_t,
            empty_queues: false,
        });
    }
    // g(0+) = -lambda < 0 < g(p_t)
    let (mut lo, mut hi) = (0.0, p_t);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    Ok(FixedPoint {
        p: 0.5 * (lo + hi),
        empty_queues: false,
    })
}

/// First and second moments of the relevant (`U`) and irrelevant (`V`)
/// epoch lengths seen by a tagged user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochMoments {
    pub eu: f64,
    pub eu2: f64,
    pub ev: f64,
    pub ev2: f64,
}

/// Epoch-length moments when every other user transmits with probability
/// `p`: `U` counts the tagged user among the colliders, `V` does not.
pub fn epoch_length_moments<B: BetaModel + ?Sized>(
    p: f64,
    users: usize,
    deadline: u32,
    beta: &B,
) -> Result<EpochMoments> {
    check_range("p", p, (0.0..=1.0).contains(&p), "[0, 1]")?;
    if users == 0 {
        return Err(Error::InvalidConfig("K must be at least 1".into()));
    }
    let rounds = 1..deadline.max(1) as usize;
    let first = |k: usize| -> f64 { rounds.clone().map(|l| beta.beta(k, l)).sum() };
    let second = |k: usize| -> f64 { rounds.clone().map(|l| (2 * l + 1) as f64 * beta.beta(k, l)).sum() };
    let mut m = EpochMoments {
        eu: 1.0,
        eu2: 1.0,
        ev: 1.0,
        ev2: 1.0,
    };
    for k in 1..=users {
        let w = binomial_pmf(users - 1, k - 1, p);
        m.eu += w * first(k);
        m.eu2 += w * second(k);
    }
    for k in 1..users {
        let w = binomial_pmf(users - 1, k, p);
        m.ev += w * first(k);
        m.ev2 += w * second(k);
    }
    Ok(m)
}

/// Average packet delay in slots from the M/G/1-with-vacations model.
///
/// A tagged user's service time is one relevant epoch plus a geometric
/// number of irrelevant ones (it sits out each epoch start with
/// probability `1 - p_t`); the remaining vacation is an irrelevant epoch.
pub fn analytic_delay<B: BetaModel + ?Sized>(
    lambda: f64,
    users: usize,
    p_t: f64,
    deadline: u32,
    beta: &B,
) -> Result<f64> {
    let fp = solve_transmission_probability(lambda, users, p_t, deadline, beta)?;
    let m = epoch_length_moments(fp.p, users, deadline, beta)?;
    let k = users as f64;
    let skip = 1.0 / p_t - 1.0;
    // Service time Y = U + G V with G ~ Geometric, E[G] = 1/p_t - 1.
    let ey = m.eu + skip * m.ev;
    let ey2 = m.eu2 + (2.0 - p_t) * (1.0 - p_t) / (p_t * p_t) * m.ev2 + 2.0 * skip * m.eu * m.ev;
    let denom = 2.0 * (k - lambda * ey);
    if denom <= 0.0 {
        return Err(Error::Unstable { lambda, limit: k / ey });
    }
    Ok(ey + lambda * ey2 / denom + m.ev2 / (2.0 * m.ev))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArrivalProcess {
    /// Poisson arrivals with mean `lambda / K` per user per slot.
    #[default]
    Poisson,
    /// At most one arrival per user per slot, with probability `lambda / K`.
    Bernoulli,
}

/// When a tree-algorithm user whose packet was pruned may transmit again.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrunedReentry {
    /// Eligible at the very next epoch start.
    #[default]
    Immediate,
    /// Sits out one epoch first.
    SkipOneEpoch,
}

/// Measurement settings for [`simulate_random_arrivals`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueueConfig {
    pub arrivals: ArrivalProcess,
    /// Leading fraction of the horizon excluded from delay statistics.
    pub warmup_fraction: f64,
    /// Backlog-slope threshold (packets/slot) for the stability verdict.
    pub trend_epsilon: f64,
    /// Batches for the batch-means delay interval.
    pub batches: usize,
    pub pruned_reentry: PrunedReentry,
}

impl Default for QueueConfig {
    fn default() -> Self {
        QueueConfig {
            arrivals: ArrivalProcess::Poisson,
            warmup_fraction: 0.2,
            trend_epsilon: 1e-3,
            batches: 32,
            pruned_reentry: PrunedReentry::Immediate,
        }
    }
}

impl QueueConfig {
    fn validate(&self) -> Result<()> {
        let w = self.warmup_fraction;
        check_range("warmup_fraction", w, (0.0..0.5).contains(&w), "[0, 0.5)")?;
        let e = self.trend_epsilon;
        check_range("trend_epsilon", e, e > 0.0, "(0, inf)")?;
        if self.batches < 2 {
            return Err(Error::InvalidArgument("need at least 2 batches".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StabilityVerdict {
    Stable,
    Unstable,
    Inconclusive,
}

impl std::fmt::Display for StabilityVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StabilityVerdict::Stable => "stable",
            StabilityVerdict::Unstable => "unstable",
            StabilityVerdict::Inconclusive => "inconclusive",
        })
    }
}

/// Packet accounting checked at every epoch boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct WorkLedger {
    pub arrivals: u64,
    pub departed: u64,
    pub queued: u64,
}

impl WorkLedger {
    pub fn balanced(&self) -> bool {
        self.arrivals == self.departed + self.queued
    }
}

/// Result of one random-arrival replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelayReport {
    pub lambda: f64,
    /// Mean delay in slots with its batch-means interval half-width;
    /// `None` when no packet departed inside the measurement window.
    pub delay: Option<Estimate>,
    pub delay_ci: f64,
    /// Fraction of non-idle epochs (after warmup) with a decoding error.
    pub error: Estimate,
    pub verdict: StabilityVerdict,
    /// Least-squares backlog slope over the second half (packets/slot).
    pub backlog_slope: f64,
    pub measured_packets: u64,
    pub epochs: u64,
    pub slots: u64,
    pub ledger: WorkLedger,
}

struct ArrivalStream {
    kind: ArrivalProcess,
    users: usize,
    per_user: f64,
    gap: Option<Exp<f64>>,
    next: f64,
}

impl ArrivalStream {
    fn new(kind: ArrivalProcess, users: usize, lambda: f64, rng: &mut SimRng) -> Result<Self> {
        let per_user = lambda / users as f64;
        let mut s = ArrivalStream {
            kind,
            users,
            per_user,
            gap: None,
            next: f64::INFINITY,
        };
        match kind {
            ArrivalProcess::Poisson if lambda > 0.0 => {
                let exp = Exp::new(lambda).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                s.next = exp.sample(rng);
                s.gap = Some(exp);
            }
            ArrivalProcess::Poisson => {}
            ArrivalProcess::Bernoulli => {
                check_range("lambda / K", per_user, per_user <= 1.0, "[0, 1]")?;
            }
        }
        Ok(s)
    }

    /// Push `(user, instant)` for every arrival inside slot `slot`.
    fn slot(&mut self, slot: u64, rng: &mut SimRng, out: &mut Vec<(usize, f64)>) {
        let end = (slot + 1) as f64;
        match self.kind {
            ArrivalProcess::Poisson => {
                // A rate-lambda Poisson process thinned uniformly over users
                // gives independent Poisson(lambda/K) counts per slot.
                if let Some(gap) = self.gap {
                    while self.next < end {
                        out.push((rng.random_range(0..self.users), self.next));
                        self.next += gap.sample(rng);
                    }
                }
            }
            ArrivalProcess::Bernoulli => {
                for u in 0..self.users {
                    if rng.random_bool(self.per_user) {
                        out.push((u, slot as f64 + rng.random::<f64>()));
                    }
                }
            }
        }
    }
}

/// Simulate `horizon` slots of random-access operation with empty initial
/// queues.
///
/// Each epoch start, every user with a non-empty queue (and not sitting out
/// after a prune) transmits its head packet with probability `p_t`.
/// Delivered packets leave the queue whether or not they were decoded;
/// pruned packets stay at the head.
#[allow(clippy::too_many_arguments)]
pub fn simulate_random_arrivals(
    protocol: Protocol,
    config: &AntennaConfig,
    params: &ProtocolParams,
    lambda: f64,
    snr: f64,
    horizon: u64,
    seed: u64,
    qcfg: &QueueConfig,
) -> Result<DelayReport> {
    config.validate()?;
    params.validate()?;
    qcfg.validate()?;
    check_range("lambda", lambda, lambda >= 0.0 && lambda.is_finite(), "[0, inf)")?;
    check_range("snr", snr, snr > 0.0 && snr.is_finite(), "(0, inf)")?;
    let warmup = (horizon as f64 * qcfg.warmup_fraction).floor() as u64;
    if horizon < 2 || horizon <= warmup {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} must exceed the warmup of {warmup} slots"
        )));
    }
    let mut rng = substream(seed, 0);
    let users = config.users;
    let mut arrivals = ArrivalStream::new(qcfg.arrivals, users, lambda, &mut rng)?;
    let mut channels = ChannelSet::draw(config, snr, 0, &mut rng)?;
    let mut queues: Vec<VecDeque<f64>> = vec![VecDeque::new(); users];
    let mut ledger = WorkLedger::default();
    let mut arrived = Vec::new();
    let mut sitting_out = UserSet::EMPTY;

    let trend_from = horizon / 2;
    let mut trend = RegressionSums::default();
    let window = (horizon - warmup) as f64;
    let mut batch_sum = vec![0.0; qcfg.batches];
    let mut batch_n = vec![0u64; qcfg.batches];
    let (mut busy, mut failed) = (0u64, 0u64);

    let mut t = 0u64;
    let mut epochs = 0u64;
    while t < horizon {
        let eligible: UserSet = (0..users)
            .filter(|&u| !queues[u].is_empty() && !sitting_out.contains(u))
            .collect();
        let participants = choose_participants(eligible, params.p_t, &mut rng);
        if !participants.is_empty() && epochs > 0 {
            channels.redraw(&mut rng);
        }
        let ctx = EpochContext::new(participants, &channels, params);
        let out = run_epoch(protocol, &ctx, &mut rng);
        epochs += 1;
        let end = t + out.length as u64;

        for s in t..end {
            arrived.clear();
            arrivals.slot(s, &mut rng, &mut arrived);
            for &(u, at) in &arrived {
                queues[u].push_back(at);
            }
            ledger.arrivals += arrived.len() as u64;
            ledger.queued += arrived.len() as u64;
            if s >= trend_from && s < horizon {
                trend.push(s as f64, ledger.queued as f64);
            }
        }

        for u in out.delivered.iter() {
            let at = queues[u].pop_front().expect("delivered user had a queued packet");
            ledger.departed += 1;
            ledger.queued -= 1;
            let depart = end as f64;
            if end > warmup && end <= horizon {
                let b = (((end - warmup) as f64 - 1e-9) / window * qcfg.batches as f64) as usize;
                let b = b.min(qcfg.batches - 1);
                batch_sum[b] += depart - at;
                batch_n[b] += 1;
            }
        }
        if t >= warmup && !out.is_idle() {
            busy += 1;
            if !out.errors().is_empty() {
                failed += 1;
            }
        }
        sitting_out = match qcfg.pruned_reentry {
            PrunedReentry::Immediate => UserSet::EMPTY,
            PrunedReentry::SkipOneEpoch => out.pruned,
        };
        assert!(ledger.balanced(), "packet ledger out of balance: {ledger:?}");
        debug_assert_eq!(ledger.queued, queues.iter().map(|q| q.len() as u64).sum::<u64>());
        t = end;
    }

    let backlog_slope = trend.fit().map_or(0.0, |(_, b)| b);
    let verdict = if backlog_slope > qcfg.trend_epsilon {
        StabilityVerdict::Unstable
    } else if backlog_slope.abs() < qcfg.trend_epsilon {
        StabilityVerdict::Stable
    } else {
        StabilityVerdict::Inconclusive
    };
    let measured: u64 = batch_n.iter().sum();
    let (delay, delay_ci) = batch_means(&batch_sum, &batch_n)?;
    Ok(DelayReport {
        lambda,
        delay,
        delay_ci,
        error: Estimate::proportion(failed, busy),
        verdict,
        backlog_slope,
        measured_packets: measured,
        epochs,
        slots: t,
        ledger,
    })
}

/// Overall mean plus a Student-t 95% half-width from the batch averages.
fn batch_means(sums: &[f64], counts: &[u64]) -> Result<(Option<Estimate>, f64)> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Ok((None, f64::NAN));
    }
    let mean = sums.iter().sum::<f64>() / total as f64;
    let means: Vec<f64> = sums
        .iter()
        .zip(counts)
        .filter(|(_, &n)| n > 0)
        .map(|(s, &n)| s / n as f64)
        .collect();
    let b = means.len();
    if b < 2 {
        return Ok((Some(Estimate::new(mean, f64::INFINITY)), f64::INFINITY));
    }
    let bm = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|m| (m - bm).powi(2)).sum::<f64>() / (b - 1) as f64;
    let se = (var / b as f64).sqrt();
    let t = StudentsT::new(0.0, 1.0, (b - 1) as f64)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?
        .inverse_cdf(0.975);
    Ok((Some(Estimate::new(mean, se)), t * se))
}

/// Verdicts along an ascending arrival-rate grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryScan {
    pub reports: Vec<DelayReport>,
    /// Midpoint between the last stable point below the first unstable one
    /// and that unstable point.
    pub boundary: Option<f64>,
}

/// Run [`simulate_random_arrivals`] at every grid point (grid point `i` uses
/// seed `derive_seed(seed, i)`) and locate the stability boundary.
#[allow(clippy::too_many_arguments)]
pub fn stability_boundary_scan(
    protocol: Protocol,
    config: &AntennaConfig,
    params: &ProtocolParams,
    snr: f64,
    lambda_grid: &[f64],
    horizon: u64,
    seed: u64,
    qcfg: &QueueConfig,
    workers: Option<usize>,
) -> Result<BoundaryScan> {
    if lambda_grid.is_empty() {
        return Err(Error::InvalidArgument("arrival-rate grid is empty".into()));
    }
    if lambda_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "arrival-rate grid must be strictly ascending".into(),
        ));
    }
    let reports = run_chunks(lambda_grid.len() as u64, 1, workers, |i, _| {
        simulate_random_arrivals(
            protocol,
            config,
            params,
            lambda_grid[i as usize],
            snr,
            horizon,
            derive_seed(seed, i),
            qcfg,
        )
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let first_unstable = reports.iter().position(|r| r.verdict == StabilityVerdict::Unstable);
    let boundary = first_unstable.and_then(|u| {
        reports[..u]
            .iter()
            .rposition(|r| r.verdict == StabilityVerdict::Stable)
            .map(|s| 0.5 * (lambda_grid[s] + lambda_grid[u]))
    });
    Ok(BoundaryScan { reports, boundary })
}

/// One CSV row of random-arrival output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelayRow {
    pub protocol: Protocol,
    #[serde(rename = "K")]
    pub users: usize,
    #[serde(rename = "M")]
    pub tx: usize,
    #[serde(rename = "N")]
    pub rx: usize,
    #[serde(rename = "L")]
    pub deadline: u32,
    pub p_t: f64,
    #[serde(rename = "r_A")]
    pub r_a: f64,
    pub snr_db: f64,
    pub lambda: f64,
    pub delay: Option<f64>,
    pub delay_ci: Option<f64>,
    /// Queueing-model prediction; `None` where it does not apply or the
    /// load is beyond its stability limit.
    pub analytic: Option<f64>,
    pub pe: f64,
    pub verdict: StabilityVerdict,
    pub seed: u64,
}
