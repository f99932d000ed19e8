//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails or overruns its runtime budget.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use ralab_core::dmt::{
    gta_dmt, gta_optimal_pt, gta_recursion, irarq_best_pt_grid, irarq_dmdt, ondma_dmt, stability_region,
};
use ralab_core::phy::ChannelSet;
use ralab_core::protocols::run_gta_epoch;
use ralab_core::queueing::{simulate_random_arrivals, stability_boundary_scan, DelayReport, QueueConfig};
use ralab_core::rng::{run_chunks, substream};
use ralab_core::simkit::{
    diversity_slope, estimate_beta, fully_loaded_throughput, renewal_reward_throughput, system_error_probability,
    Estimate, MonteCarlo,
};
use ralab_core::{
    AntennaConfig, CombiningGain, EpochContext, GtaObjective, HighSnrBeta, Protocol, ProtocolParams, RateSpec, UserSet,
};

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict {
            pass,
            detail: detail.into(),
        }
    }
}

/// Collects individual checks; the criterion passes only if all do.
#[derive(Default)]
struct Checks {
    failed: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        if !ok {
            self.failed.push(what);
        }
    }

    fn note(&mut self, what: impl Into<String>) {
        self.notes.push(what.into());
    }

    fn finish(self) -> Verdict {
        if self.failed.is_empty() {
            Verdict::new(true, self.notes.join("; "))
        } else {
            Verdict::new(false, self.failed.join("; "))
        }
    }
}

fn scalar2() -> AntennaConfig {
    AntennaConfig::new(2, 1, 1).unwrap()
}

fn vector2() -> AntennaConfig {
    AntennaConfig::new(2, 1, 2).unwrap()
}

fn db(x: f64) -> f64 {
    10f64.powf(x / 10.0)
}

fn inv_sqrt3() -> f64 {
    1.0 / 3f64.sqrt()
}

// 1. Tree-algorithm closed form and optimal p_t.
fn c1() -> Verdict {
    let cfg = scalar2();
    let table = gta_recursion(2);
    let mut c = Checks::default();
    let mut worst: f64 = 0.0;
    for i in 1..=100 {
        let p = i as f64 / 100.0;
        let closed = (1.0 + 3.0 * p * p) / (2.0 * p);
        worst = worst.max((table.penalty_ratio(2, p) - closed).abs());
        // same coefficient read off the curve: d = 1 - coef * r_e
        let r_e = 0.01;
        let coef = (1.0 - gta_dmt(&cfg, p, r_e).unwrap()) / r_e;
        worst = worst.max((coef - closed).abs());
    }
    c.check(worst <= 1e-12, format!("coefficient error {worst:.2e} > 1e-12"));
    c.note(format!("max coefficient error {worst:.1e}"));
    let p = gta_optimal_pt(&cfg, GtaObjective::MaxSpan).unwrap();
    c.check((p - inv_sqrt3()).abs() <= 1e-4, format!("optimal p_t {p} != 1/sqrt3"));
    c.note(format!("p_t* = {p:.8}"));
    c.finish()
}

// 2. Simulated tree epochs against the recursions.
fn c2() -> Verdict {
    let epochs = 1_000_000u64;
    let table = gta_recursion(4);
    let mut c = Checks::default();
    for k in 1..=4usize {
        let params = ProtocolParams::new(1.0, RateSpec::Fixed(0.0), 1).unwrap();
        let parts = run_chunks(epochs, 1 << 15, None, |chunk, units| {
            let mut rng = substream(2000 + k as u64, chunk);
            let ch = ChannelSet::scalar(1.0, &vec![1.0; k]).unwrap();
            let ctx = EpochContext::new(UserSet::first(k), &ch, &params);
            let (mut s1, mut s2, mut d1, mut d2) = (0u64, 0u64, 0u64, 0u64);
            for _ in 0..units {
                let out = run_gta_epoch(&ctx, &mut rng);
                let (l, d) = (out.length as u64, out.delivered.len() as u64);
                s1 += l;
                s2 += l * l;
                d1 += d;
                d2 += d * d;
            }
            [s1, s2, d1, d2]
        })
        .unwrap();
        let tot = parts.iter().fold([0u64; 4], |mut a, p| {
            for i in 0..4 {
                a[i] += p[i];
            }
            a
        });
        let n = epochs as f64;
        let est = |s: u64, s2: u64| {
            let m = s as f64 / n;
            Estimate::new(m, ((s2 as f64 / n - m * m).max(0.0) / n).sqrt())
        };
        let len = est(tot[0], tot[1]);
        let del = est(tot[2], tot[3]);
        let zx = len.z_distance(&Estimate::exact(table.x(k)));
        let zj = del.z_distance(&Estimate::exact(table.j(k)));
        c.check(
            zx <= 3.0,
            format!("k={k}: length {:.4} vs X={:.4} (z={zx:.2})", len.value, table.x(k)),
        );
        c.check(
            zj <= 3.0,
            format!("k={k}: delivered {:.4} vs J={:.4} (z={zj:.2})", del.value, table.j(k)),
        );
        c.note(format!("k={k}: z_X={zx:.2} z_J={zj:.2}"));
    }
    c.finish()
}

// 3. Stability regions: closed forms and simulated boundary scans.
fn c3() -> Verdict {
    let cfg = scalar2();
    let mut c = Checks::default();
    let low = HighSnrBeta::new(&cfg, 0.3);
    let high = HighSnrBeta::new(&cfg, 0.7);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
    for p in [1.0, inv_sqrt3(), 0.5] {
        let gta = stability_region(Protocol::Gta, &cfg, p, 1, &low).unwrap();
        let ondma = stability_region(Protocol::Ondma, &cfg, p, 1, &low).unwrap();
        let ir_lo = stability_region(Protocol::IrArq, &cfg, p, 2, &low).unwrap();
        let ir_hi = stability_region(Protocol::IrArq, &cfg, p, 2, &high).unwrap();
        c.check(close(gta, 2.0 * p / (1.0 + 3.0 * p * p)), format!("GTA p={p}: {gta}"));
        c.check(
            close(ondma, 2.0 * p / (2.0 * p + (1.0 - p).powi(2))),
            format!("O-NDMA p={p}: {ondma}"),
        );
        c.check(close(ir_lo, 2.0 * p), format!("IR-ARQ r<0.5 p={p}: {ir_lo}"));
        c.check(
            close(ir_hi, 2.0 * p / (1.0 + p * p)),
            format!("IR-ARQ r>0.5 p={p}: {ir_hi}"),
        );
    }
    // maximal regions
    let p_gta = gta_optimal_pt(&cfg, GtaObjective::MaxSpan).unwrap();
    let gta_max = stability_region(Protocol::Gta, &cfg, p_gta, 1, &low).unwrap();
    c.check((gta_max - inv_sqrt3()).abs() <= 1e-9, format!("GTA max {gta_max}"));
    let ondma_max = stability_region(Protocol::Ondma, &cfg, 1.0, 1, &low).unwrap();
    c.check(ondma_max == 1.0, format!("O-NDMA max {ondma_max}"));
    for (beta, want) in [(&low, 2.0), (&high, 1.0)] {
        let (p, v) = irarq_best_pt_grid(&cfg, 2, beta, 1000).unwrap();
        c.check(
            p == 1.0 && close(v, want),
            format!("IR-ARQ max {v} at p={p}, want {want}"),
        );
    }

    // simulated scans at 50 dB, grid step 0.05
    let snr = db(50.0);
    let q = QueueConfig::default();
    let mut seed = 300;
    for p in [1.0, inv_sqrt3(), 0.5] {
        for (protocol, r_a, deadline) in [
            (Protocol::Gta, 0.45, 1),
            (Protocol::Ondma, 0.45, 1),
            (Protocol::IrArq, 0.3, 2),
            (Protocol::IrArq, 0.7, 2),
        ] {
            seed += 1;
            let beta = HighSnrBeta::new(&cfg, r_a);
            let analytic = stability_region(protocol, &cfg, p, deadline, &beta).unwrap();
            let first = ((analytic - 0.2) / 0.05).floor().max(0.0) as usize;
            let grid: Vec<f64> = (first..first + 9).map(|i| i as f64 * 0.05).collect();
            let params = ProtocolParams::new(p, RateSpec::Multiplexing(r_a), deadline).unwrap();
            let scan = stability_boundary_scan(protocol, &cfg, &params, snr, &grid, 1_000_000, seed, &q, None).unwrap();
            let label = format!("{protocol} p_t={p:.3} r_A={r_a}");
            match scan.boundary {
                Some(b) => {
                    c.check(
                        (b - analytic).abs() <= 0.05,
                        format!("{label}: boundary {b:.3} vs {analytic:.3}"),
                    );
                    c.note(format!("{label}: {b:.3}/{analytic:.3}"));
                }
                None => c.check(false, format!("{label}: no stable/unstable transition on the grid")),
            }
        }
    }
    c.finish()
}

// 4. Tradeoff curve orderings.
fn c4() -> Verdict {
    let mut c = Checks::default();
    let cfg = scalar2();
    let p_gta = gta_optimal_pt(&cfg, GtaObjective::MaxSpan).unwrap();
    for i in 1..100 {
        let r_e = i as f64 / 100.0;
        let gta = gta_dmt(&cfg, p_gta, r_e).unwrap();
        let ondma = ondma_dmt(&cfg, 1.0, r_e).unwrap();
        for l in 1..=4 {
            let ir = irarq_dmdt(&cfg, r_e, l).unwrap();
            c.check(ir >= ondma, format!("scalar r_e={r_e} L={l}: IR {ir} < O-NDMA {ondma}"));
        }
        c.check(ondma >= gta, format!("scalar r_e={r_e}: O-NDMA {ondma} < GTA {gta}"));
    }
    let v = vector2();
    let p_gta = gta_optimal_pt(&v, GtaObjective::MaxSpan).unwrap();
    let mut prev = f64::INFINITY;
    for eps in [1e-1, 1e-2, 1e-3, 1e-6] {
        let d = irarq_dmdt(&v, 2.0 - eps, 1).unwrap();
        c.check(d > 0.0 && d < prev, format!("vector IR d({}) = {d}", 2.0 - eps));
        prev = d;
    }
    c.check(prev < 1e-5, format!("vector IR d near r_e=2 is {prev}"));
    for r_e in [1.0, 1.5, 1.99] {
        let g = gta_dmt(&v, p_gta, r_e).unwrap();
        let o = ondma_dmt(&v, 1.0, r_e).unwrap();
        c.check(
            g == 0.0 && o == 0.0,
            format!("vector r_e={r_e}: GTA {g}, O-NDMA {o} should be 0"),
        );
    }
    c.note(format!("vector IR d(2 - 1e-6) = {prev:.1e}"));
    c.finish()
}

fn delay_run(l: u32, lambda: f64, snr: f64, seed: u64) -> DelayReport {
    let params = ProtocolParams::new(1.0, RateSpec::Multiplexing(0.45), l).unwrap();
    simulate_random_arrivals(
        Protocol::IrArq,
        &scalar2(),
        &params,
        lambda,
        snr,
        2_000_000,
        seed,
        &QueueConfig::default(),
    )
    .unwrap()
}

// 5. IR-ARQ delay at 40 dB against the high-SNR formula.
fn c5() -> Verdict {
    let mut c = Checks::default();
    for (i, lambda) in [0.4, 1.0, 1.6].into_iter().enumerate() {
        let rep = delay_run(2, lambda, db(40.0), 500 + i as u64);
        let d = rep.delay.expect("packets departed").value;
        let target = 1.5 + lambda / (2.0 * (2.0 - lambda));
        c.check(
            (d - target).abs() <= 0.05,
            format!("lambda={lambda}: D={d:.4} (+-{:.4}) vs {target:.4}", rep.delay_ci),
        );
        c.note(format!("lambda={lambda}: D={d:.4} vs {target:.4}"));
    }
    c.finish()
}

// 6. Diversity slopes over 20..50 dB at r_A = 0.45.
fn c6() -> Verdict {
    let cfg = scalar2();
    let mut c = Checks::default();
    let cases = [
        (Protocol::Gta, inv_sqrt3(), 1, 0.55, 1_000_000u64),
        (Protocol::Ondma, 1.0, 1, 0.55, 1_000_000),
        (Protocol::IrArq, 1.0, 2, 0.775, 2_000_000),
        (Protocol::IrArq, 1.0, 4, 0.8875, 10_000_000),
    ];
    for (protocol, p_t, l, target, trials) in cases {
        let params = ProtocolParams::new(p_t, RateSpec::Multiplexing(0.45), l).unwrap();
        let samples: Vec<(f64, f64)> = (0..=12)
            .map(|i| {
                let snr = db(20.0 + 2.5 * i as f64);
                let mc = MonteCarlo::new(600 + 20 * l as u64 + i);
                let e = system_error_probability(protocol, &cfg, &params, snr, trials, &mc).unwrap();
                (snr, e.system.value)
            })
            .collect();
        let label = format!("{protocol} L={l}");
        match diversity_slope(&samples) {
            Ok(d) => {
                c.check((d - target).abs() <= 0.1, format!("{label}: slope {d:.3} vs {target}"));
                c.note(format!("{label}: {d:.3}/{target}"));
            }
            Err(e) => c.check(false, format!("{label}: {e}")),
        }
    }
    c.finish()
}

// 7. Renewal-reward throughput on Monte Carlo beta against simulation.
fn c7() -> Verdict {
    let cfg = scalar2();
    let mut c = Checks::default();
    let mut seed = 700;
    for snr_db in [10.0, 30.0] {
        let snr = db(snr_db);
        for (protocol, p_t, l) in [
            (Protocol::Gta, inv_sqrt3(), 1),
            (Protocol::Ondma, 1.0, 1),
            (Protocol::IrArq, 1.0, 4),
            (Protocol::IrArq, 0.6, 3),
        ] {
            seed += 2;
            let rate = RateSpec::Multiplexing(0.45);
            let params = ProtocolParams::new(p_t, rate, l).unwrap();
            let table = estimate_beta(&cfg, snr, rate.bits(snr), l, 1_000_000, &MonteCarlo::new(seed)).unwrap();
            let analytic = renewal_reward_throughput(protocol, &cfg, p_t, &table).unwrap();
            let sim = fully_loaded_throughput(protocol, &cfg, &params, snr, 1_000_000, &MonteCarlo::new(seed + 1))
                .unwrap()
                .packets_per_slot;
            let z = sim.z_distance(&analytic);
            let label = format!("{protocol} {snr_db} dB p_t={p_t:.3} L={l}");
            c.check(
                z <= 3.0,
                format!(
                    "{label}: sim {:.5} vs renewal {:.5} (z={z:.2})",
                    sim.value, analytic.value
                ),
            );
            c.note(format!("{label}: z={z:.2}"));
        }
    }
    c.finish()
}

// 8. Union-bound sandwich on every error run.
fn c8() -> Verdict {
    let mut c = Checks::default();
    let mut runs = 0;
    let mut seed = 800;
    for (k, m, n) in [(2, 1, 1), (3, 1, 1), (2, 1, 2), (3, 2, 2)] {
        let cfg = AntennaConfig::new(k, m, n).unwrap();
        for protocol in Protocol::ALL {
            for snr_db in [0.0, 10.0, 20.0] {
                for combining in [CombiningGain::Unit, CombiningGain::Slots] {
                    seed += 1;
                    let params = ProtocolParams::new(0.8, RateSpec::Multiplexing(0.45), 3)
                        .unwrap()
                        .with_combining(combining);
                    // the estimator itself asserts the sandwich; a panic
                    // surfaces as a failed criterion
                    let e =
                        system_error_probability(protocol, &cfg, &params, db(snr_db), 50_000, &MonteCarlo::new(seed))
                            .unwrap();
                    let max_user = e.user_errors.iter().copied().max().unwrap_or(0);
                    let ok = e.sandwich_holds() && e.system_errors <= k as u64 * max_user;
                    c.check(
                        ok,
                        format!(
                            "{protocol} K={k} M={m} N={n} {snr_db} dB: system {} users {:?}",
                            e.system_errors, e.user_errors
                        ),
                    );
                    runs += 1;
                }
            }
        }
    }
    c.note(format!("{runs} runs"));
    c.finish()
}

// 9. Single-user outage against the exponential closed form.
fn c9() -> Verdict {
    let cfg = AntennaConfig::new(1, 1, 1).unwrap();
    let mut c = Checks::default();
    let mut seed = 900;
    for rate in [0.5, 1.0, 2.0] {
        for snr in [3.0, 10.0, 100.0] {
            seed += 1;
            let params = ProtocolParams::new(1.0, RateSpec::Fixed(rate), 1).unwrap();
            let e = system_error_probability(Protocol::Ondma, &cfg, &params, snr, 1_000_000, &MonteCarlo::new(seed))
                .unwrap();
            let oracle = 1.0 - (-(2f64.powf(rate) - 1.0) / snr).exp();
            let z = e.system.z_distance(&Estimate::exact(oracle));
            c.check(
                z <= 3.0,
                format!("R={rate} snr={snr}: {:.5} vs {oracle:.5} (z={z:.2})", e.system.value),
            );
        }
    }
    c.note("9 points within 3 s.e.");
    c.finish()
}

// 10. Larger deadline: lower error probability, longer delay.
fn c10() -> Verdict {
    let mut c = Checks::default();
    let l2 = delay_run(2, 1.0, db(15.0), 1002);
    let l4 = delay_run(4, 1.0, db(15.0), 1004);
    let (pe2, pe4) = (l2.error.interval95(), l4.error.interval95());
    c.check(
        pe4.1 < pe2.0,
        format!(
            "P_e L=4 {:.5} {pe4:?} vs L=2 {:.5} {pe2:?}",
            l4.error.value, l2.error.value
        ),
    );
    let (d2, d4) = (l2.delay.unwrap().value, l4.delay.unwrap().value);
    c.check(
        d4 - l4.delay_ci > d2 + l2.delay_ci,
        format!("D L=4 {d4:.4}+-{:.4} vs L=2 {d2:.4}+-{:.4}", l4.delay_ci, l2.delay_ci),
    );
    c.note(format!(
        "P_e {:.4} -> {:.4}, D {d2:.3} -> {d4:.3}",
        l2.error.value, l4.error.value
    ));
    c.finish()
}

type Criterion = (u32, &'static str, u64, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "tree-algorithm closed form", 1, c1),
        (2, "recursion vs simulation", 60, c2),
        (3, "stability regions", 600, c3),
        (4, "tradeoff orderings", 10, c4),
        (5, "high-SNR IR-ARQ delay", 300, c5),
        (6, "diversity slopes", 1800, c6),
        (7, "renewal-reward throughput", 300, c7),
        (8, "sandwich bound", 300, c8),
        (9, "single-user outage oracle", 120, c9),
        (10, "delay/error tradeoff in L", 300, c10),
    ];
    let mut failures = 0;
    for (id, title, budget, f) in criteria {
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::new(false, format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let in_budget = elapsed <= Duration::from_secs(budget);
        let pass = verdict.pass && in_budget;
        if !pass {
            failures += 1;
        }
        let budget_note = if in_budget {
            String::new()
        } else {
            format!(" over {budget}s budget;")
        };
        println!(
            "criterion {id:>2} {title}: {} ({}){budget_note} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            verdict.detail,
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failures} failed", 10 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
