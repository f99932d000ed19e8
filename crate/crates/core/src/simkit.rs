//! Monte Carlo estimators: persistent-outage tables, fully-loaded
//! throughput, system error probability and diversity slopes.
//!
//! Every estimator splits its work into fixed chunks, runs chunk `i` on
//! substream `i` of the master seed and reduces integer counts, so results
//! are bitwise reproducible and independent of the worker count.

use serde::{Deserialize, Serialize};

use crate::dmt::{self, AntennaConfig, BetaModel};
use crate::error::{check_range, Error, Result};
use crate::math::binomial_pmf;
use crate::phy::{ChannelSet, UserSet};
use crate::protocols::{choose_participants, run_epoch, EpochContext, EpochOutcome, Protocol, ProtocolParams};
use crate::rng::{run_chunks, substream, SimRng};

const CHUNK: u64 = 1 << 14;

/// Seed and parallelism for a Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonteCarlo {
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl MonteCarlo {
    pub fn new(seed: u64) -> Self {
        MonteCarlo { seed, workers: None }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = Some(workers);
        self
    }

    fn chunks<T: Send>(&self, total: u64, f: impl Fn(&mut SimRng, u64) -> T + Sync + Send) -> Result<Vec<T>> {
        let seed = self.seed;
        run_chunks(total, CHUNK, self.workers, |i, units| f(&mut substream(seed, i), units))
    }
}

/// A point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn new(value: f64, stderr: f64) -> Self {
        Estimate { value, stderr }
    }

    pub fn exact(value: f64) -> Self {
        Estimate { value, stderr: 0.0 }
    }

    /// Binomial proportion with normal-approximation error.
    pub fn proportion(successes: u64, trials: u64) -> Self {
        let n = trials.max(1) as f64;
        let p = successes as f64 / n;
        Estimate::new(p, (p * (1.0 - p) / n).sqrt())
    }

    /// `|a - b|` in units of the combined standard error. Two exact equal
    /// values give 0, two exact different values give infinity.
    pub fn z_distance(&self, other: &Estimate) -> f64 {
        let diff = (self.value - other.value).abs();
        let se = self.stderr.hypot(other.stderr);
        if diff == 0.0 {
            0.0
        } else {
            diff / se
        }
    }

    /// 95% normal interval.
    pub fn interval95(&self) -> (f64, f64) {
        let h = 1.96 * self.stderr;
        (self.value - h, self.value + h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaSource {
    MonteCarlo,
    HighSnrIndicator,
    ClosedForm,
}

/// Persistent-outage probabilities `beta_k(l)` for `k = 1..=K`,
/// `l = 0..=L`, with `beta_k(0) = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaTable {
    users: usize,
    deadline: u32,
    /// `values[k - 1][l]`.
    values: Vec<Vec<f64>>,
    /// Monte Carlo only: `hist[k - 1][j]` counts trials whose first
    /// decodable round is `j + 1`; `j = L` collects the undecodable ones.
    hist: Option<Vec<Vec<u64>>>,
    source: BetaSource,
    trials: u64,
    /// Linear SNR; infinite for the high-SNR table.
    snr: f64,
}

impl BetaTable {
    /// High-SNR indicator table for first-round multiplexing gain `r`.
    pub fn high_snr(config: &AntennaConfig, r: f64, deadline: u32) -> Result<Self> {
        config.validate()?;
        check_range("r", r, r >= 0.0, "[0, inf)")?;
        let model = dmt::HighSnrBeta::new(config, r);
        let mut t = BetaTable::from_fn(config.users, deadline, |k, l| model.beta(k, l))?;
        t.source = BetaSource::HighSnrIndicator;
        t.snr = f64::INFINITY;
        Ok(t)
    }

    /// Table from explicit values `f(k, l)` for `l >= 1`; `beta_k(0)` is
    /// set to 1.
    pub fn from_fn(users: usize, deadline: u32, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        if users == 0 {
            return Err(Error::InvalidConfig("K must be at least 1".into()));
        }
        if deadline == 0 {
            return Err(Error::OutOfRange {
                name: "L",
                value: 0.0,
                expected: "[1, inf)",
            });
        }
        let mut values = Vec::with_capacity(users);
        for k in 1..=users {
            let mut row = vec![1.0];
            for l in 1..=deadline as usize {
                let v = f(k, l);
                check_range("beta", v, (0.0..=1.0).contains(&v), "[0, 1]")?;
                if v > row[l - 1] {
                    return Err(Error::InvalidArgument(format!(
                        "beta_{k}({l}) = {v} exceeds beta_{k}({}) = {}",
                        l - 1,
                        row[l - 1]
                    )));
                }
                row.push(v);
            }
            values.push(row);
        }
        Ok(BetaTable {
            users,
            deadline,
            values,
            hist: None,
            source: BetaSource::ClosedForm,
            trials: 0,
            snr: f64::NAN,
        })
    }

    fn from_histogram(users: usize, deadline: u32, hist: Vec<Vec<u64>>, trials: u64, snr: f64) -> Self {
        let n = trials as f64;
        let values = hist
            .iter()
            .map(|h| {
                // beta(l) = #(first decodable round > l) / trials
                let mut tail = trials;
                let mut row = Vec::with_capacity(deadline as usize + 1);
                row.push(1.0);
                for count in h.iter().take(deadline as usize) {
                    tail -= count;
                    row.push(tail as f64 / n);
                }
                row
            })
            .collect();
        BetaTable {
            users,
            deadline,
            values,
            hist: Some(hist),
            source: BetaSource::MonteCarlo,
            trials,
            snr,
        }
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn deadline(&self) -> u32 {
        self.deadline
    }

    pub fn source(&self) -> BetaSource {
        self.source
    }

    pub fn trials(&self) -> u64 {
        self.trials
    }

    pub fn snr(&self) -> f64 {
        self.snr
    }

    /// `beta_k(l)`. `k = 0` (no collision) has nothing to decode, so every
    /// round past the zeroth is 0; rounds past `L` repeat `beta_k(L)`.
    pub fn get(&self, k: usize, l: usize) -> f64 {
        if l == 0 {
            return 1.0;
        }
        if k == 0 {
            return 0.0;
        }
        assert!(k <= self.users, "k = {k} exceeds K = {}", self.users);
        self.values[k - 1][l.min(self.deadline as usize)]
    }

    /// Probability that a k-collision ends exactly at round `l`,
    /// `alpha_k(l) = beta_k(l - 1) - beta_k(l)`.
    pub fn alpha(&self, k: usize, l: usize) -> f64 {
        assert!(l >= 1, "alpha is defined for rounds >= 1");
        self.get(k, l - 1) - self.get(k, l)
    }

    /// Standard error of `beta_k(l)`; zero for analytic tables.
    pub fn stderr(&self, k: usize, l: usize) -> f64 {
        if self.source != BetaSource::MonteCarlo || l == 0 {
            return 0.0;
        }
        let b = self.get(k, l);
        (b * (1.0 - b) / self.trials as f64).sqrt()
    }

    /// Mean and standard error of `sum_{l=1}^{L-1} beta_k(l)`, the expected
    /// number of extra rounds after a k-collision.
    pub fn extra_rounds(&self, k: usize) -> Estimate {
        let l_max = self.deadline as usize;
        let mean: f64 = (1..l_max).map(|l| self.get(k, l)).sum();
        let Some(hist) = &self.hist else {
            return Estimate::exact(mean);
        };
        // Per trial the extra-round count is min(first round, L) - 1.
        let n = self.trials as f64;
        let second: f64 = hist[k - 1]
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                let z = j.min(l_max - 1) as f64;
                c as f64 * z * z
            })
            .sum::<f64>()
            / n;
        let var = (second - mean * mean).max(0.0);
        Estimate::new(mean, (var / n).sqrt())
    }

    /// Retransmission load `sum_k B(K,k,p) sum_{l<L} beta_k(l)` with its
    /// standard error. Rows for different k come from independent draws.
    pub fn load(&self, p: f64) -> Estimate {
        let mut value = 0.0;
        let mut var = 0.0;
        for k in 1..=self.users {
            let w = binomial_pmf(self.users, k, p);
            let e = self.extra_rounds(k);
            value += w * e.value;
            var += (w * e.stderr).powi(2);
        }
        Estimate::new(value, var.sqrt())
    }
}

impl BetaModel for BetaTable {
    fn beta(&self, k: usize, round: usize) -> f64 {
        self.get(k, round)
    }
}

/// Estimate `beta_k(l)` for every `k = 1..=K` and `l <= L` at linear SNR
/// `snr` and first-round rate `rate` (bits per channel use).
///
/// Each trial draws an independent k-user channel for every k, finds the
/// first round at which joint decoding succeeds and records it in a
/// histogram; `beta_k(l)` is the fraction of trials with that round
/// beyond `l`. Channel draws do not depend on `snr`, so two tables with
/// the same seed are paired across SNR.
pub fn estimate_beta(
    config: &AntennaConfig,
    snr: f64,
    rate: f64,
    deadline: u32,
    trials: u64,
    mc: &MonteCarlo,
) -> Result<BetaTable> {
    config.validate()?;
    check_range("snr", snr, snr > 0.0, "(0, inf)")?;
    check_range("R", rate, rate >= 0.0, "[0, inf)")?;
    if deadline == 0 {
        return Err(Error::OutOfRange {
            name: "L",
            value: 0.0,
            expected: "[1, inf)",
        });
    }
    if trials == 0 {
        return Err(Error::ZeroTrials);
    }
    let users = config.users;
    let bins = deadline as usize + 1;
    let parts = mc.chunks(trials, |rng, units| {
        let mut hist = vec![vec![0u64; bins]; users];
        let mut channels: Vec<ChannelSet> = (1..=users)
            .map(|k| {
                let cfg = AntennaConfig { users: k, ..*config };
                ChannelSet::draw(&cfg, snr, 0, rng).expect("validated config")
            })
            .collect();
        for t in 0..units {
            for (k, ch) in channels.iter_mut().enumerate() {
                if t > 0 {
                    ch.redraw(rng);
                }
                let first = first_decodable(ch, UserSet::first(k + 1), rate, deadline);
                hist[k][first.map_or(deadline as usize, |l| l as usize - 1)] += 1;
            }
        }
        hist
    })?;
    let mut hist = vec![vec![0u64; bins]; users];
    for part in parts {
        for (acc, row) in hist.iter_mut().zip(part) {
            for (a, c) in acc.iter_mut().zip(row) {
                *a += c;
            }
        }
    }
    Ok(BetaTable::from_histogram(users, deadline, hist, trials, snr))
}

fn first_decodable(ch: &ChannelSet, active: UserSet, rate: f64, deadline: u32) -> Option<u32> {
    crate::phy::SubsetRates::new(ch, active).first_decodable_round(rate, deadline)
}

/// Fully-loaded throughput.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputEstimate {
    /// Delivered packets per slot, i.e. throughput in units of `R`.
    pub packets_per_slot: Estimate,
    /// First-round rate `R` in bits per channel use.
    pub rate: f64,
    pub slots: u64,
    pub epochs: u64,
}

impl ThroughputEstimate {
    /// Throughput in bits per channel use.
    pub fn bits_per_channel_use(&self) -> Estimate {
        Estimate::new(
            self.packets_per_slot.value * self.rate,
            self.packets_per_slot.stderr * self.rate,
        )
    }
}

/// Integer sums for a ratio-of-means estimator `sum x / sum y`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct RatioSums {
    n: u64,
    sx: u64,
    sy: u64,
    sxx: u64,
    syy: u64,
    sxy: u64,
}

impl RatioSums {
    fn push(&mut self, x: u64, y: u64) {
        self.n += 1;
        self.sx += x;
        self.sy += y;
        self.sxx += x * x;
        self.syy += y * y;
        self.sxy += x * y;
    }

    fn merge(&mut self, o: &RatioSums) {
        self.n += o.n;
        self.sx += o.sx;
        self.sy += o.sy;
        self.sxx += o.sxx;
        self.syy += o.syy;
        self.sxy += o.sxy;
    }

    /// Delta-method standard error of the ratio.
    fn estimate(&self) -> Estimate {
        let n = self.n as f64;
        let r = self.sx as f64 / self.sy as f64;
        if self.n < 2 {
            return Estimate::new(r, f64::INFINITY);
        }
        let ybar = self.sy as f64 / n;
        let resid = self.sxx as f64 - 2.0 * r * self.sxy as f64 + r * r * self.syy as f64;
        let var = resid.max(0.0) / (n - 1.0) / (n * ybar * ybar);
        Estimate::new(r, var.sqrt())
    }
}

/// Back-to-back epochs with every queue always backlogged.
struct LoadedRunner<'a> {
    protocol: Protocol,
    params: &'a ProtocolParams,
    all: UserSet,
    channels: ChannelSet,
    fresh: bool,
}

impl<'a> LoadedRunner<'a> {
    fn new(
        protocol: Protocol,
        config: &AntennaConfig,
        params: &'a ProtocolParams,
        snr: f64,
        rng: &mut SimRng,
    ) -> Result<Self> {
        Ok(LoadedRunner {
            protocol,
            params,
            all: UserSet::first(config.users),
            channels: ChannelSet::draw(config, snr, 0, rng)?,
            fresh: true,
        })
    }

    fn next(&mut self, rng: &mut SimRng) -> EpochOutcome {
        if !self.fresh {
            self.channels.redraw(rng);
        }
        self.fresh = false;
        let participants = choose_participants(self.all, self.params.p_t, rng);
        let ctx = EpochContext::new(participants, &self.channels, self.params);
        run_epoch(self.protocol, &ctx, rng)
    }
}

fn check_sim_inputs(config: &AntennaConfig, params: &ProtocolParams, snr: f64) -> Result<()> {
    config.validate()?;
    params.validate()?;
    check_range("snr", snr, snr > 0.0 && snr.is_finite(), "(0, inf)")
}

/// Simulate `slots` slots of fully-loaded operation and report delivered
/// packets per slot (renewal-reward ratio over complete epochs; each chunk
/// finishes the epoch that crosses its slot budget).
pub fn fully_loaded_throughput(
    protocol: Protocol,
    config: &AntennaConfig,
    params: &ProtocolParams,
    snr: f64,
    slots: u64,
    mc: &MonteCarlo,
) -> Result<ThroughputEstimate> {
    check_sim_inputs(config, params, snr)?;
    if slots == 0 {
        return Err(Error::ZeroTrials);
    }
    let parts = mc.chunks(slots, |rng, budget| -> Result<RatioSums> {
        let mut runner = LoadedRunner::new(protocol, config, params, snr, rng)?;
        let mut sums = RatioSums::default();
        while sums.sy < budget {
            let out = runner.next(rng);
            sums.push(out.delivered.len() as u64, out.length as u64);
        }
        Ok(sums)
    })?;
    let mut sums = RatioSums::default();
    for p in parts {
        sums.merge(&p?);
    }
    Ok(ThroughputEstimate {
        packets_per_slot: sums.estimate(),
        rate: params.rate.bits(snr),
        slots: sums.sy,
        epochs: sums.n,
    })
}

/// Renewal-reward throughput in packets per slot. The tree algorithm and
/// O-NDMA deliver every resolved packet whatever the channel, so only
/// IR-ARQ depends on `table` (whose error propagates into the estimate).
pub fn renewal_reward_throughput(
    protocol: Protocol,
    config: &AntennaConfig,
    p_t: f64,
    table: &BetaTable,
) -> Result<Estimate> {
    if table.users() != config.users {
        return Err(Error::InvalidArgument(format!(
            "beta table has K = {} but the configuration has K = {}",
            table.users(),
            config.users
        )));
    }
    let value = dmt::saturated_throughput(protocol, config, p_t, table.deadline(), table)?;
    if protocol != Protocol::IrArq {
        return Ok(Estimate::exact(value));
    }
    // value = p K / (1 + load)
    let load = table.load(p_t);
    let k = config.users as f64;
    let stderr = p_t * k * load.stderr / (1.0 + load.value).powi(2);
    Ok(Estimate::new(value, stderr))
}

/// System and per-user error probabilities over non-idle epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    pub system: Estimate,
    pub per_user: Vec<Estimate>,
    /// Epochs simulated, idle ones included.
    pub epochs: u64,
    pub busy_epochs: u64,
    pub system_errors: u64,
    pub user_errors: Vec<u64>,
}

impl ErrorEstimate {
    /// `max_i e_i <= e_sys <= sum_i e_i` on the raw counts.
    pub fn sandwich_holds(&self) -> bool {
        let max = self.user_errors.iter().copied().max().unwrap_or(0);
        let sum: u64 = self.user_errors.iter().sum();
        max <= self.system_errors && self.system_errors <= sum
    }
}

#[derive(Debug, Clone, Default)]
struct ErrorCounts {
    epochs: u64,
    busy: u64,
    system: u64,
    users: Vec<u64>,
}

/// Fraction of non-idle fully-loaded epochs in which at least one delivered
/// packet is not decoded, with per-user rates over the same epochs.
///
/// Panics if the counts ever violate the union-bound sandwich, which would
/// mean the error accounting itself is broken.
pub fn system_error_probability(
    protocol: Protocol,
    config: &AntennaConfig,
    params: &ProtocolParams,
    snr: f64,
    trials: u64,
    mc: &MonteCarlo,
) -> Result<ErrorEstimate> {
    check_sim_inputs(config, params, snr)?;
    if trials == 0 {
        return Err(Error::ZeroTrials);
    }
    let users = config.users;
    let parts = mc.chunks(trials, |rng, units| -> Result<ErrorCounts> {
        let mut runner = LoadedRunner::new(protocol, config, params, snr, rng)?;
        let mut c = ErrorCounts {
            users: vec![0; users],
            ..Default::default()
        };
        for _ in 0..units {
            let out = runner.next(rng);
            c.epochs += 1;
            if out.is_idle() {
                continue;
            }
            c.busy += 1;
            let errors = out.errors();
            if !errors.is_empty() {
                c.system += 1;
            }
            for u in errors.iter() {
                c.users[u] += 1;
            }
        }
        Ok(c)
    })?;
    let mut total = ErrorCounts {
        users: vec![0; users],
        ..Default::default()
    };
    for p in parts {
        let p = p?;
        total.epochs += p.epochs;
        total.busy += p.busy;
        total.system += p.system;
        for (a, b) in total.users.iter_mut().zip(&p.users) {
            *a += b;
        }
    }
    let est = ErrorEstimate {
        system: Estimate::proportion(total.system, total.busy),
        per_user: total
            .users
            .iter()
            .map(|&e| Estimate::proportion(e, total.busy))
            .collect(),
        epochs: total.epochs,
        busy_epochs: total.busy,
        system_errors: total.system,
        user_errors: total.users,
    };
    assert!(
        est.sandwich_holds(),
        "error counts violate max_i e_i <= e <= sum_i e_i: system {}, per user {:?}",
        est.system_errors,
        est.user_errors
    );
    Ok(est)
}

/// Diversity estimate: least-squares slope of `-log2 P_e` against
/// `log2 snr` over the samples in the top decade of SNR. `samples` holds
/// `(linear snr, P_e)` pairs.
pub fn diversity_slope(samples: &[(f64, f64)]) -> Result<f64> {
    if samples.len() < 3 {
        return Err(Error::InsufficientSamples {
            needed: 3,
            got: samples.len(),
        });
    }
    for &(snr, pe) in samples {
        check_range("snr", snr, snr > 0.0 && snr.is_finite(), "(0, inf)")?;
        if pe.is_nan() || pe <= 0.0 {
            return Err(Error::NonPositiveProbability(pe));
        }
    }
    let top = samples.iter().map(|s| s.0).fold(f64::MIN, f64::max);
    let (xs, ys): (Vec<f64>, Vec<f64>) = samples
        .iter()
        .filter(|s| s.0 >= top / 10.0 * (1.0 - 1e-12))
        .map(|&(snr, pe)| (snr.log2(), -pe.log2()))
        .unzip();
    if xs.len() < 3 {
        return Err(Error::InsufficientSamples {
            needed: 3,
            got: xs.len(),
        });
    }
    crate::math::linear_fit(&xs, &ys)
        .map(|(_, slope)| slope)
        .ok_or_else(|| Error::InvalidArgument("SNR samples are not distinct".into()))
}

/// One CSV row of Monte Carlo output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimRow {
    pub snr_db: f64,
    pub protocol: Protocol,
    #[serde(rename = "L")]
    pub deadline: u32,
    pub p_t: f64,
    pub r: f64,
    pub metric: String,
    pub value: f64,
    pub stderr: f64,
    pub trials: u64,
    pub seed: u64,
}
