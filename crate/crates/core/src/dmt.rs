//! Closed-form diversity-multiplexing(-delay) tradeoffs.
//!
//! Everything here is a pure function of its arguments. The point-to-point
//! curve [`point_to_point_dmt`] is the single primitive; the coordinated
//! MAC curve, the three protocol curves, the stability limits and the
//! saturated throughput formulas are all built on top of it.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{check_pt, check_range, Error, Result};
use crate::math::binomial_pmf;
use crate::protocols::Protocol;

/// K users with M transmit antennas each, one receiver with N antennas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AntennaConfig {
    pub users: usize,
    pub tx: usize,
    pub rx: usize,
}

impl AntennaConfig {
    pub fn new(users: usize, tx: usize, rx: usize) -> Result<Self> {
        let cfg = AntennaConfig { users, tx, rx };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.tx == 0 || self.rx == 0 {
            return Err(Error::InvalidConfig(format!(
                "K={}, M={}, N={}: every dimension must be at least 1",
                self.users, self.tx, self.rx
            )));
        }
        if self.users > 32 {
            return Err(Error::InvalidConfig(format!(
                "K={} exceeds the supported maximum of 32 users",
                self.users
            )));
        }
        Ok(())
    }

    /// Degrees of freedom of the coordinated MAC, `min{K M, N}`.
    pub fn degrees_of_freedom(&self) -> f64 {
        (self.users * self.tx).min(self.rx) as f64
    }

    /// Span of the single-user curve, `min{M, N}`.
    pub fn single_user_span(&self) -> f64 {
        self.tx.min(self.rx) as f64
    }
}

/// One point on a tradeoff curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub r_e: f64,
    pub d: f64,
    /// ARQ deadline; `None` for GTA and O-NDMA.
    pub deadline: Option<u32>,
}

fn p2p(tx: usize, rx: usize, r: f64) -> f64 {
    let span = tx.min(rx) as f64;
    if r >= span {
        return 0.0;
    }
    let corner = |k: f64| (tx as f64 - k) * (rx as f64 - k);
    let k = r.floor();
    let frac = r - k;
    corner(k) + (corner(k + 1.0) - corner(k)) * frac
}

fn mac(k: usize, tx: usize, rx: usize, r: f64) -> f64 {
    let threshold = (tx as f64).min(rx as f64 / (k as f64 + 1.0));
    if r <= threshold {
        p2p(tx, rx, r)
    } else {
        p2p(k * tx, rx, k as f64 * r)
    }
}

/// Point-to-point MIMO tradeoff `d^{M,N}(r)`: the piecewise-linear curve
/// through `(k, (M-k)(N-k))`, `k = 0..=min{M,N}`, and zero beyond.
pub fn point_to_point_dmt(tx: usize, rx: usize, r: f64) -> Result<f64> {
    check_range("r", r, r >= 0.0, "[0, inf)")?;
    if tx == 0 || rx == 0 {
        return Err(Error::InvalidConfig(format!("M={tx}, N={rx}")));
    }
    Ok(p2p(tx, rx, r))
}

/// Tradeoff of the coordinated k-user multiple access channel.
///
/// Below `min{M, N/(k+1)}` each user sees the point-to-point curve; above
/// it the k users behave as one kM-antenna transmitter at rate `k r`.
pub fn mac_dmt(k: usize, tx: usize, rx: usize, r: f64) -> Result<f64> {
    check_range("r", r, r >= 0.0, "[0, inf)")?;
    if k == 0 || tx == 0 || rx == 0 {
        return Err(Error::InvalidConfig(format!("k={k}, M={tx}, N={rx}")));
    }
    Ok(mac(k, tx, rx, r))
}

/// Expected epoch length `X_k` and expected delivered packets `J_k` of the
/// tree algorithm for an initial collision of `k` users, k = 0..=k_max.
#[derive(Debug, Clone, PartialEq)]
pub struct GtaRecursionTable {
    x_exact: Vec<BigRational>,
    j_exact: Vec<BigRational>,
    x: Vec<f64>,
    j: Vec<f64>,
}

impl GtaRecursionTable {
    pub fn k_max(&self) -> usize {
        self.x.len() - 1
    }

    pub fn x(&self, k: usize) -> f64 {
        self.x[k]
    }

    pub fn j(&self, k: usize) -> f64 {
        self.j[k]
    }

    pub fn x_exact(&self, k: usize) -> &BigRational {
        &self.x_exact[k]
    }

    pub fn j_exact(&self, k: usize) -> &BigRational {
        &self.j_exact[k]
    }

    /// `sum_k B(K,k,p) X_k / sum_k B(K,k,p) J_k` for K = `users`: the factor
    /// by which the tree inflates the first-round multiplexing gain.
    pub fn penalty_ratio(&self, users: usize, p_t: f64) -> f64 {
        let (sx, sj) = (0..=users).fold((0.0, 0.0), |(sx, sj), k| {
            let w = binomial_pmf(users, k, p_t);
            (sx + w * self.x[k], sj + w * self.j[k])
        });
        sx / sj
    }
}

fn half_pmf(k: usize, i: usize) -> BigRational {
    let mut c = BigInt::one();
    for t in 0..i {
        c = c * BigInt::from(k - t) / BigInt::from(t + 1);
    }
    BigRational::new(c, BigInt::one() << k)
}

/// Solve the tree-algorithm recursions exactly.
///
/// For k >= 2, `X_k` and `J_k` appear on both sides with total coefficient
/// `B(k,0,1/2) + B(k,k,1/2) = 2^{1-k}`, so each step is a division by
/// `1 - 2^{1-k}`.
pub fn gta_recursion(k_max: usize) -> GtaRecursionTable {
    let one = BigRational::one();
    let mut x = vec![one.clone(), one.clone()];
    let mut j = vec![BigRational::zero(), one.clone()];
    for k in 2..=k_max {
        let b1 = half_pmf(k, 1);
        let mut rx = one.clone() + &b1 * (&one + &x[k - 1]);
        let mut rj = &b1 * (&one + &j[k - 1]);
        for i in 2..k {
            let b = half_pmf(k, i);
            rx += &b * &x[i];
            rj += &b * &j[i];
        }
        let self_weight = half_pmf(k, 0) + half_pmf(k, k);
        let denom = &one - self_weight;
        x.push(rx / &denom);
        j.push(rj / &denom);
    }
    x.truncate(k_max + 1);
    j.truncate(k_max + 1);
    let to_f = |v: &BigRational| v.to_f64().unwrap_or(f64::NAN);
    GtaRecursionTable {
        x: x.iter().map(to_f).collect(),
        j: j.iter().map(to_f).collect(),
        x_exact: x,
        j_exact: j,
    }
}

/// Tradeoff of the tree algorithm at transmission probability `p_t`.
pub fn gta_dmt(config: &AntennaConfig, p_t: f64, r_e: f64) -> Result<f64> {
    config.validate()?;
    check_pt(p_t)?;
    check_range("r_e", r_e, r_e >= 0.0, "[0, inf)")?;
    let ratio = gta_recursion(config.users).penalty_ratio(config.users, p_t);
    Ok(mac(1, config.tx, config.rx, ratio * r_e))
}

/// What [`gta_optimal_pt`] optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GtaObjective {
    /// Widest effective-multiplexing span (smallest penalty ratio).
    MaxSpan,
    /// Largest diversity at the given effective multiplexing gain.
    MaxDiversity { r_e: f64 },
}

const PT_GRID: usize = 2000;

fn minimize_on_unit<F: Fn(f64) -> f64>(f: F) -> f64 {
    // Coarse grid, ties toward larger p_t.
    let mut best_p = 1.0;
    let mut best = f(1.0);
    for i in (1..PT_GRID).rev() {
        let p = i as f64 / PT_GRID as f64;
        let v = f(p);
        if v < best {
            best = v;
            best_p = p;
        }
    }
    // Golden-section refinement inside the bracketing grid cell pair.
    let h = 1.0 / PT_GRID as f64;
    let (mut a, mut b) = ((best_p - h).max(f64::MIN_POSITIVE), (best_p + h).min(1.0));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a) < 1e-13 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let refined = 0.5 * (a + b);
    if f(refined) < best {
        refined
    } else {
        best_p
    }
}

/// Transmission probability that optimizes the tree-algorithm tradeoff.
pub fn gta_optimal_pt(config: &AntennaConfig, objective: GtaObjective) -> Result<f64> {
    config.validate()?;
    let table = gta_recursion(config.users);
    let k = config.users;
    let p_span = minimize_on_unit(|p| table.penalty_ratio(k, p));
    match objective {
        GtaObjective::MaxSpan => Ok(p_span),
        GtaObjective::MaxDiversity { r_e } => {
            check_range("r_e", r_e, r_e >= 0.0, "[0, inf)")?;
            // d is strictly decreasing in the penalty until it hits zero, so
            // the span optimum also maximizes d. When d is the same for every
            // p_t (r_e = 0, or zero everywhere) the tie goes to p_t = 1.
            let d = mac(1, config.tx, config.rx, table.penalty_ratio(k, p_span) * r_e);
            Ok(if r_e > 0.0 && d > 0.0 { p_span } else { 1.0 })
        }
    }
}

/// `(K p_t + (1 - p_t)^K) / (K p_t)`: slots spent per delivered packet.
pub fn ondma_penalty_ratio(users: usize, p_t: f64) -> f64 {
    let kp = users as f64 * p_t;
    (kp + (1.0 - p_t).powi(users as i32)) / kp
}

/// O-NDMA tradeoff at transmission probability `p_t`; `p_t = 1` gives the
/// optimal curve `d_1^{MAC}(r_e)`.
pub fn ondma_dmt(config: &AntennaConfig, p_t: f64, r_e: f64) -> Result<f64> {
    config.validate()?;
    check_pt(p_t)?;
    check_range("r_e", r_e, r_e >= 0.0, "[0, inf)")?;
    let r = ondma_penalty_ratio(config.users, p_t) * r_e;
    Ok(mac(1, config.tx, config.rx, r))
}

/// High-SNR limit of the persistent-outage probability `beta_k(round)`:
/// one when `r > min{round M, round N / k}`, zero otherwise (including the
/// boundary itself).
pub fn beta_highsnr(k: usize, tx: usize, rx: usize, r: f64, round: usize) -> f64 {
    let l = round as f64;
    let threshold = (l * tx as f64).min(l * rx as f64 / k as f64);
    if r > threshold {
        1.0
    } else {
        0.0
    }
}

/// Source of `beta_k(round)` values: a Monte Carlo table, the high-SNR
/// indicators, or any closure `(k, round) -> probability`.
pub trait BetaModel {
    fn beta(&self, k: usize, round: usize) -> f64;
}

impl<F: Fn(usize, usize) -> f64> BetaModel for F {
    fn beta(&self, k: usize, round: usize) -> f64 {
        self(k, round)
    }
}

/// High-SNR indicator model for a fixed first-round multiplexing gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HighSnrBeta {
    pub tx: usize,
    pub rx: usize,
    pub r: f64,
}

impl HighSnrBeta {
    pub fn new(config: &AntennaConfig, r: f64) -> Self {
        HighSnrBeta {
            tx: config.tx,
            rx: config.rx,
            r,
        }
    }
}

impl BetaModel for HighSnrBeta {
    fn beta(&self, k: usize, round: usize) -> f64 {
        if round == 0 {
            return 1.0;
        }
        beta_highsnr(k, self.tx, self.rx, self.r, round)
    }
}

/// `sum_{k=1}^K B(K,k,p) sum_{l=1}^{L-1} beta_k(l)`: expected number of
/// extra ARQ rounds per epoch.
pub fn retransmission_load<B: BetaModel + ?Sized>(users: usize, p: f64, deadline: u32, beta: &B) -> f64 {
    (1..=users)
        .map(|k| {
            let inner: f64 = (1..deadline as usize).map(|l| beta.beta(k, l)).sum();
            binomial_pmf(users, k, p) * inner
        })
        .sum()
}

/// Effective multiplexing gain of IR-ARQ for first-round gain `r`.
pub fn irarq_effective_multiplexing<B: BetaModel + ?Sized>(
    config: &AntennaConfig,
    p_t: f64,
    r: f64,
    deadline: u32,
    beta: &B,
) -> Result<f64> {
    config.validate()?;
    check_pt(p_t)?;
    check_deadline(deadline)?;
    check_range("r", r, r >= 0.0 && r <= config.single_user_span(), "[0, min{M,N}]")?;
    let k = config.users as f64;
    Ok(p_t * k * r / (1.0 + retransmission_load(config.users, p_t, deadline, beta)))
}

/// IR-ARQ diversity for a given first-round multiplexing gain `r`,
/// `d_K^{MAC}(r / L)`.
pub fn irarq_dmdt_at_rate(config: &AntennaConfig, r: f64, deadline: u32) -> Result<f64> {
    config.validate()?;
    check_deadline(deadline)?;
    check_range("r", r, r >= 0.0, "[0, inf)")?;
    Ok(mac(config.users, config.tx, config.rx, r / deadline as f64))
}

/// Optimal IR-ARQ diversity-multiplexing-delay tradeoff,
/// `d_K^{MAC}(r_e / (K L))`, attained at `(r, p_t) = (r_e / K, 1)`.
pub fn irarq_dmdt(config: &AntennaConfig, r_e: f64, deadline: u32) -> Result<f64> {
    config.validate()?;
    check_deadline(deadline)?;
    let dof = config.degrees_of_freedom();
    // r_e = min{KM, N} itself is reached with r* on the indicator boundary.
    check_range("r_e", r_e, r_e >= 0.0 && r_e <= dof, "[0, min{KM,N}]")?;
    let k = config.users as f64;
    Ok(mac(config.users, config.tx, config.rx, r_e / (k * deadline as f64)))
}

/// Diversity under random arrivals with fixed arrival multiplexing gain.
pub fn random_arrival_diversity(
    protocol: Protocol,
    config: &AntennaConfig,
    r_a: f64,
    deadline: Option<u32>,
) -> Result<f64> {
    config.validate()?;
    check_range("r_A", r_a, r_a >= 0.0, "[0, inf)")?;
    match protocol {
        Protocol::Gta | Protocol::Ondma => Ok(mac(1, config.tx, config.rx, r_a)),
        Protocol::IrArq => {
            let l = deadline.ok_or_else(|| Error::InvalidArgument("IR-ARQ diversity needs a deadline".into()))?;
            irarq_dmdt_at_rate(config, r_a, l)
        }
    }
}

/// Saturated (fully-loaded) throughput in packets per slot, i.e. the
/// renewal-reward value of `eta_FL / R`. For IR-ARQ the persistent-outage
/// probabilities come from `beta`; the other two protocols ignore it.
pub fn saturated_throughput<B: BetaModel + ?Sized>(
    protocol: Protocol,
    config: &AntennaConfig,
    p_t: f64,
    deadline: u32,
    beta: &B,
) -> Result<f64> {
    config.validate()?;
    check_pt(p_t)?;
    let k = config.users;
    Ok(match protocol {
        Protocol::Gta => 1.0 / gta_recursion(k).penalty_ratio(k, p_t),
        Protocol::Ondma => 1.0 / ondma_penalty_ratio(k, p_t),
        Protocol::IrArq => {
            check_deadline(deadline)?;
            p_t * k as f64 / (1.0 + retransmission_load(k, p_t, deadline, beta))
        }
    })
}

/// Supremum of the stable total arrival rate (packets/slot).
///
/// For every protocol the limit coincides with the saturated throughput:
/// the tree-algorithm ratio, `K p_t / (K p_t + (1-p_t)^K)` for O-NDMA, and
/// `p_t K / (1 + load)` for IR-ARQ. Pass [`HighSnrBeta`] for the high-SNR
/// region or a Monte Carlo table for finite SNR.
pub fn stability_region<B: BetaModel + ?Sized>(
    protocol: Protocol,
    config: &AntennaConfig,
    p_t: f64,
    deadline: u32,
    beta: &B,
) -> Result<f64> {
    saturated_throughput(protocol, config, p_t, deadline, beta)
}

/// Grid search for the IR-ARQ transmission probability with the largest
/// stability limit. No closed form exists in general.
pub fn irarq_best_pt_grid<B: BetaModel + ?Sized>(
    config: &AntennaConfig,
    deadline: u32,
    beta: &B,
    steps: usize,
) -> Result<(f64, f64)> {
    if steps == 0 {
        return Err(Error::InvalidArgument("grid needs at least one step".into()));
    }
    let mut best = (1.0, stability_region(Protocol::IrArq, config, 1.0, deadline, beta)?);
    for i in (1..steps).rev() {
        let p = i as f64 / steps as f64;
        let v = stability_region(Protocol::IrArq, config, p, deadline, beta)?;
        if v > best.1 {
            best = (p, v);
        }
    }
    Ok(best)
}

/// Tradeoff curve sampled on `r_e = 0, step, 2 step, ...` below
/// `min{KM, N}`. GTA and O-NDMA are evaluated at `p_t`; IR-ARQ uses its
/// optimal parameters and needs `deadline`.
pub fn tradeoff_curve(
    protocol: Protocol,
    config: &AntennaConfig,
    p_t: f64,
    deadline: Option<u32>,
    step: f64,
) -> Result<Vec<TradeoffPoint>> {
    config.validate()?;
    check_range("step", step, step > 0.0, "(0, inf)")?;
    let dof = config.degrees_of_freedom();
    let n = (dof / step).ceil() as usize;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let r_e = i as f64 * step;
        if r_e >= dof {
            break;
        }
        let (d, l) = match protocol {
            Protocol::Gta => (gta_dmt(config, p_t, r_e)?, None),
            Protocol::Ondma => (ondma_dmt(config, p_t, r_e)?, None),
            Protocol::IrArq => {
                let l = deadline.ok_or_else(|| Error::InvalidArgument("IR-ARQ curve needs a deadline".into()))?;
                (irarq_dmdt(config, r_e, l)?, Some(l))
            }
        };
        out.push(TradeoffPoint { r_e, d, deadline: l });
    }
    Ok(out)
}

fn check_deadline(deadline: u32) -> Result<()> {
    if deadline == 0 {
        Err(Error::OutOfRange {
            name: "L",
            value: 0.0,
            expected: "[1, inf)",
        })
    } else {
        Ok(())
    }
}
