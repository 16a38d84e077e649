//! Acceptance suite: the ten primary criteria at their stated tolerances.
//! Prints one PASS/FAIL line per criterion and exits nonzero if any fails.
//! Runs without the libtest harness so the lines are never captured.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use fusegp::experiments::StreamData;
use fusegp::verify::{
    consensus, disparity_medians, fusion_exactness, gradient_check, gradient_unbiasedness, ingest_timings,
    lemma1_scaling, loss_totals, streaming_vs_batch, two_agent_summary, PatternSetup, ScalingSetup,
};
use rayon::prelude::*;

const SEED: u64 = 0;

struct Outcome {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
    elapsed: Duration,
    limit: Duration,
}

fn run(id: usize, name: &'static str, limit_s: u64, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (ok, detail) = f();
    let elapsed = start.elapsed();
    let limit = Duration::from_secs(limit_s);
    let outcome = Outcome {
        id,
        name,
        passed: ok && elapsed <= limit,
        detail,
        elapsed,
        limit,
    };
    println!(
        "{} [{}] {}: {} ({:.2} s, limit {} s)",
        if outcome.passed { "PASS" } else { "FAIL" },
        outcome.id,
        outcome.name,
        outcome.detail,
        outcome.elapsed.as_secs_f64(),
        outcome.limit.as_secs()
    );
    outcome
}

fn datasets(setup: &PatternSetup, count: u64) -> Vec<StreamData> {
    (0..count)
        .into_par_iter()
        .map(|i| setup.data(SEED + i).expect("synthetic data"))
        .collect()
}

fn main() -> ExitCode {
    let setup = PatternSetup::desk();
    let mut results = Vec::new();

    results.push(run(1, "streaming equals batch", 1, || {
        let e = streaming_vs_batch(SEED).unwrap();
        (e <= 1e-10, format!("relative Frobenius {e:.3e} <= 1e-10"))
    }));

    results.push(run(2, "fusion equals full-data posterior", 1, || {
        let e = fusion_exactness(SEED).unwrap();
        (e <= 1e-8, format!("relative Frobenius {e:.3e} <= 1e-8"))
    }));

    results.push(run(3, "message-passing consensus", 5, || {
        let c = consensus(&[2, 8, 32], SEED).unwrap();
        (
            c.max_error <= 1e-10 && c.extra_round_change == 0.0,
            format!(
                "max error {:.3e} <= 1e-10, change after extra rounds {:.3e} == 0",
                c.max_error, c.extra_round_change
            ),
        )
    }));

    results.push(run(4, "Monte Carlo error scaling in bank size", 300, || {
        let fit = lemma1_scaling(&ScalingSetup::lemma1(SEED)).unwrap();
        (
            (-0.65..=-0.35).contains(&fit.slope),
            format!(
                "slope {:.3} in [-0.65, -0.35], medians [{}]",
                fit.slope,
                fit.medians.iter().map(|m| format!("{m:.3e}")).collect::<Vec<_>>().join(", ")
            ),
        )
    }));

    results.push(run(5, "subsampled gradient is unbiased", 120, || {
        let z = gradient_unbiasedness(500, SEED).unwrap();
        (z <= 3.0, format!("max |z| {z:.3} <= 3"))
    }));

    results.push(run(6, "gradient vs finite differences", 30, || {
        let e = gradient_check(SEED).unwrap();
        (e <= 1e-4, format!("max relative error {e:.3e} <= 1e-4"))
    }));

    results.push(run(7, "two-agent fusion gain", 600, || {
        let data = datasets(&setup, setup.two_agent_seeds);
        let s = two_agent_summary(&setup, &data, SEED).unwrap();
        let frac = s.fraction_improved();
        let (early, late) = (s.gap_at(20).unwrap_or(f64::NAN), s.gap_at(200).unwrap_or(f64::NAN));
        (
            frac >= 0.9 && late < early,
            format!("post <= pre at {:.0}% of checkpoints (>= 90%), gap at 200 {late:.4} < gap at 20 {early:.4}", 100.0 * frac),
        )
    }));

    results.push(run(8, "decentralized vs centralized under loss", 900, || {
        let data = datasets(&setup, setup.loss_seeds);
        let totals = loss_totals(&setup, &data, SEED).unwrap();
        let n = setup.loss_seeds as f64;
        let mut ok = true;
        let mut parts = Vec::new();
        for (rate, dec, cen) in totals {
            let (dec, cen) = (dec / n, cen / n);
            if rate == 0.0 {
                ok &= (dec - cen).abs() <= 1e-10;
            } else {
                ok &= dec <= cen;
            }
            parts.push(format!("loss {rate}: dec {dec:.4} cen {cen:.4}"));
        }
        (ok, parts.join(", "))
    }));

    results.push(run(9, "constant-cost ingestion", 120, || {
        let (t1, t100) = ingest_timings(50, 10, 100, SEED).unwrap();
        let ratio = t100 / t1;
        (ratio <= 2.0, format!("block 100 / block 1 time ratio {ratio:.3} <= 2"))
    }));

    results.push(run(10, "frozen and active agents after fusion", 300, || {
        let data = datasets(&setup, setup.two_agent_seeds);
        let [fp, fq, ap, aq] = disparity_medians(&setup, &data, SEED).unwrap();
        (
            fq < fp && aq <= 1.05 * ap,
            format!("frozen post {fq:.4} < pre {fp:.4}, active post {aq:.4} <= 1.05 x pre {ap:.4}"),
        )
    }));

    let failed: Vec<_> = results.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
