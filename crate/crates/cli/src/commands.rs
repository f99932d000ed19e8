use std::fs::File;
use std::io::{self, Write};

use anyhow::Context;
use ralab_core::dmt::{beta_highsnr, gta_recursion, random_arrival_diversity, stability_region, tradeoff_curve};
use ralab_core::queueing::{analytic_delay, simulate_random_arrivals, stability_boundary_scan, DelayRow};
use ralab_core::rng::derive_seed;
use ralab_core::simkit::{
    diversity_slope, estimate_beta, fully_loaded_throughput, renewal_reward_throughput, system_error_probability,
    BetaTable, MonteCarlo, SimRow,
};
use ralab_core::{HighSnrBeta, Protocol, ProtocolParams};
use serde::Serialize;

use crate::config::{db_to_linear, ConfigError, RateMode, Settings};

pub struct Output {
    csv: csv::Writer<Box<dyn Write>>,
}

impl Output {
    pub fn open(settings: &Settings) -> anyhow::Result<Self> {
        let sink: Box<dyn Write> = match &settings.out {
            Some(path) => Box::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?),
            None => Box::new(io::stdout().lock()),
        };
        Ok(Output {
            csv: csv::Writer::from_writer(sink),
        })
    }

    fn row<T: Serialize>(&mut self, row: &T) -> anyhow::Result<()> {
        self.csv.serialize(row)?;
        Ok(())
    }

    pub fn finish(mut self) -> anyhow::Result<()> {
        self.csv.flush()?;
        Ok(())
    }
}

fn monte_carlo(s: &Settings, seed: u64) -> MonteCarlo {
    let mc = MonteCarlo::new(seed);
    match s.workers {
        Some(w) => mc.with_workers(w),
        None => mc,
    }
}

fn params(s: &Settings, p_t: f64, deadline: u32) -> anyhow::Result<ProtocolParams> {
    Ok(ProtocolParams::new(p_t, s.rate(), deadline)?.with_combining(s.combining))
}

#[derive(Serialize)]
struct DmtRow {
    r_e: f64,
    d: f64,
    protocol: Protocol,
    #[serde(rename = "L")]
    deadline: Option<u32>,
    p_t: Option<f64>,
}

pub fn dmt(s: &Settings, out: &mut Output) -> anyhow::Result<()> {
    for &protocol in &s.protocols {
        if protocol.has_deadline() {
            for &l in &s.deadlines {
                for pt in tradeoff_curve(protocol, &s.antennas, 1.0, Some(l), s.step)? {
                    out.row(&DmtRow {
                        r_e: pt.r_e,
                        d: pt.d,
                        protocol,
                        deadline: Some(l),
                        p_t: None,
                    })?;
                }
            }
        } else {
            for p_t in s.p_t_for(protocol)? {
                for pt in tradeoff_curve(protocol, &s.antennas, p_t, None, s.step)? {
                    out.row(&DmtRow {
                        r_e: pt.r_e,
                        d: pt.d,
                        protocol,
                        deadline: None,
                        p_t: Some(p_t),
                    })?;
                }
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct RecursionRow {
    k: usize,
    #[serde(rename = "X")]
    x: f64,
    #[serde(rename = "J")]
    j: f64,
    #[serde(rename = "X_exact")]
    x_exact: String,
    #[serde(rename = "J_exact")]
    j_exact: String,
}

pub fn recursion(s: &Settings, out: &mut Output) -> anyhow::Result<()> {
    let k_max = s.antennas.users;
    let table = gta_recursion(k_max);
    for k in 1..=k_max {
        out.row(&RecursionRow {
            k,
            x: table.x(k),
            j: table.j(k),
            x_exact: table.x_exact(k).to_string(),
            j_exact: table.j_exact(k).to_string(),
        })?;
    }
    Ok(())
}

#[derive(Serialize)]
struct BetaRow {
    snr_db: f64,
    k: usize,
    l: usize,
    beta: f64,
    stderr: f64,
    high_snr: Option<f64>,
    trials: u64,
    seed: u64,
}

pub fn beta(s: &Settings, out: &mut Output) -> anyhow::Result<()> {
    let seed = s.require_seed()?;
    let deadline = *s.deadlines.iter().max().expect("validated nonempty");
    let cfg = &s.antennas;
    for &snr_db in &s.snr_db {
        let snr = db_to_linear(snr_db);
        // same seed at every SNR so the curves are paired
        let table = estimate_beta(cfg, snr, s.rate().bits(snr), deadline, s.trials, &monte_carlo(s, seed))?;
        for k in 1..=cfg.users {
            for l in 1..=deadline as usize {
                out.row(&BetaRow {
                    snr_db,
                    k,
                    l,
                    beta: table.get(k, l),
                    stderr: table.stderr(k, l),
                    high_snr: (s.rate_mode == RateMode::Multiplexing).then(|| beta_highsnr(k, cfg.tx, cfg.rx, s.r, l)),
                    trials: s.trials,
                    seed,
                })?;
            }
        }
    }
    Ok(())
}

pub fn throughput(s: &Settings, out: &mut Output) -> anyhow::Result<()> {
    let seed = s.require_seed()?;
    let cfg = &s.antennas;
    let mut index = 0;
    for &protocol in &s.protocols {
        for l in s.deadlines_for(protocol) {
            for p_t in s.p_t_for(protocol)? {
                for &snr_db in &s.snr_db {
                    let snr = db_to_linear(snr_db);
                    let run_seed = derive_seed(seed, index);
                    index += 1;
                    let p = params(s, p_t, l)?;
                    let table = if protocol.has_deadline() {
                        estimate_beta(cfg, snr, s.rate().bits(snr), l, s.trials, &monte_carlo(s, run_seed))?
                    } else {
                        // only the IR-ARQ value reads the table
                        BetaTable::high_snr(cfg, 0.0, l)?
                    };
                    let renewal = renewal_reward_throughput(protocol, cfg, p_t, &table)?;
                    let sim = fully_loaded_throughput(protocol, cfg, &p, snr, s.trials, &monte_carlo(s, run_seed ^ 1))?;
                    let row = |metric: &str, value: f64, stderr: f64| SimRow {
                        snr_db,
                        protocol,
                        deadline: l,
                        p_t,
                        r: s.r,
                        metric: metric.to_string(),
                        value,
                        stderr,
                        trials: s.trials,
                        seed: run_seed,
                    };
                    out.row(&row(
                        "throughput",
                        sim.packets_per_slot.value,
                        sim.packets_per_slot.stderr,
                    ))?;
                    out.row(&row("renewal", renewal.value, renewal.stderr))?;
                }
            }
        }
    }
    Ok(())
}

pub fn pe(s: &Settings, out: &mut Output) -> anyhow::Result<()> {
    let seed = s.require_seed()?;
    let cfg = &s.antennas;
    let mut index = 0;
    for &protocol in &s.protocols {
        for l in s.deadlines_for(protocol) {
            for p_t in s.p_t_for(protocol)? {
                let p = params(s, p_t, l)?;
                let mut samples = Vec::with_capacity(s.snr_db.len());
                for &snr_db in &s.snr_db {
                    let snr = db_to_linear(snr_db);
                    let run_seed = derive_seed(seed, index);
                    index += 1;
                    let e = system_error_probability(protocol, cfg, &p, snr, s.trials, &monte_carlo(s, run_seed))?;
                    out.row(&SimRow {
                        snr_db,
                        protocol,
                        deadline: l,
                        p_t,
                        r: s.r,
                        metric: "pe".into(),
                        value: e.system.value,
                        stderr: e.system.stderr,
                        trials: s.trials,
                        seed: run_seed,
                    })?;
                    if e.system.value > 0.0 {
                        samples.push((snr, e.system.value));
                    }
                }
                if s.rate_mode == RateMode::Multiplexing {
                    if let Ok(slope) = diversity_slope(&samples) {
                        let target = random_arrival_diversity(protocol, cfg, s.r, Some(l))?;
                        eprintln!("{protocol} L={l} p_t={p_t:.4}: fitted diversity {slope:.3}, high-SNR {target:.4}");
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn delay(s: &Settings, out: &mut Output) -> anyhow::Result<()> {
    let seed = s.require_seed()?;
    let cfg = &s.antennas;
    let k = cfg.users as f64;
    if let Some(bad) = s.lambda.iter().find(|&&l| !(0.0..=k).contains(&l)) {
        return Err(ConfigError(format!("lambda = {bad} is outside [0, {k}]")).into());
    }
    let mut index = 0;
    for &protocol in &s.protocols {
        for l in s.deadlines_for(protocol) {
            for p_t in s.p_t_for(protocol)? {
                let p = params(s, p_t, l)?;
                for &snr_db in &s.snr_db {
                    let snr = db_to_linear(snr_db);
                    let table = if protocol.has_deadline() {
                        let mc = monte_carlo(s, derive_seed(seed, u64::MAX - index));
                        Some(estimate_beta(cfg, snr, s.rate().bits(snr), l, s.trials, &mc)?)
                    } else {
                        None
                    };
                    for &lambda in &s.lambda {
                        let run_seed = derive_seed(seed, index);
                        index += 1;
                        let rep =
                            simulate_random_arrivals(protocol, cfg, &p, lambda, snr, s.horizon, run_seed, &s.queue)?;
                        let analytic = table
                            .as_ref()
                            .and_then(|t| analytic_delay(lambda, cfg.users, p_t, l, t).ok());
                        out.row(&DelayRow {
                            protocol,
                            users: cfg.users,
                            tx: cfg.tx,
                            rx: cfg.rx,
                            deadline: l,
                            p_t,
                            r_a: s.r,
                            snr_db,
                            lambda,
                            delay: rep.delay.map(|d| d.value),
                            delay_ci: rep.delay.map(|_| rep.delay_ci),
                            analytic,
                            pe: rep.error.value,
                            verdict: rep.verdict,
                            seed: run_seed,
                        })?;
                    }
                }
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct StabilityRow {
    protocol: Protocol,
    #[serde(rename = "K")]
    users: usize,
    #[serde(rename = "M")]
    tx: usize,
    #[serde(rename = "N")]
    rx: usize,
    #[serde(rename = "L")]
    deadline: u32,
    p_t: f64,
    #[serde(rename = "r_A")]
    r_a: f64,
    lambda_max: f64,
    simulated_boundary: Option<f64>,
    snr_db: Option<f64>,
}

/// Analytic stability limits, high-SNR in multiplexing mode and on a Monte
/// Carlo beta table at the first SNR in fixed-rate mode. With `scan`, also
/// the simulated boundary over the arrival-rate grid at that SNR.
pub fn stability(s: &Settings, scan: bool, out: &mut Output) -> anyhow::Result<()> {
    let cfg = &s.antennas;
    let snr_db = s.snr_db[0];
    let snr = db_to_linear(snr_db);
    let seed = if scan || s.rate_mode == RateMode::FixedR {
        Some(s.require_seed()?)
    } else {
        s.seed
    };
    let high = HighSnrBeta::new(cfg, s.r);
    let mut index = 0;
    for &protocol in &s.protocols {
        for l in s.deadlines_for(protocol) {
            let table = match (s.rate_mode, seed) {
                (RateMode::FixedR, Some(seed)) => Some(estimate_beta(
                    cfg,
                    snr,
                    s.rate().bits(snr),
                    l,
                    s.trials,
                    &monte_carlo(s, derive_seed(seed, u64::MAX - index)),
                )?),
                _ => None,
            };
            for p_t in s.p_t_for(protocol)? {
                let lambda_max = match &table {
                    Some(t) => stability_region(protocol, cfg, p_t, l, t)?,
                    None => stability_region(protocol, cfg, p_t, l, &high)?,
                };
                let simulated_boundary = match (scan, seed) {
                    (true, Some(seed)) => {
                        let p = params(s, p_t, l)?;
                        let run_seed = derive_seed(seed, index);
                        let res = stability_boundary_scan(
                            protocol, cfg, &p, snr, &s.lambda, s.horizon, run_seed, &s.queue, s.workers,
                        )?;
                        res.boundary
                    }
                    _ => None,
                };
                index += 1;
                out.row(&StabilityRow {
                    protocol,
                    users: cfg.users,
                    tx: cfg.tx,
                    rx: cfg.rx,
                    deadline: l,
                    p_t,
                    r_a: s.r,
                    lambda_max,
                    simulated_boundary,
                    snr_db: (scan || table.is_some()).then_some(snr_db),
                })?;
            }
        }
    }
    Ok(())
}
