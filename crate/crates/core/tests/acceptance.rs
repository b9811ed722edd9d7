//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p keycoll --test acceptance`.

use std::cmp::Ordering;
use std::time::{Duration, Instant};

use keycoll::bounds::exact_distinct_probability;
use keycoll::cli::run_cli;
use keycoll::dictionary::probe_budget;
use keycoll::*;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20_240_601;

type Criterion = (&'static str, Duration, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// `prod_{k<N} (1 - k / 2^bits)` as an exact rational.
fn rational_distinct(bits: u32, count: u64) -> BigRational {
    let space = BigInt::from(1u64 << bits);
    let mut p = BigRational::one();
    for k in 0..count {
        p *= BigRational::new(&space - BigInt::from(k), space.clone());
    }
    p
}

fn criterion_1() -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run_cli(
        [
            "keycoll", "verify", "prop2", "--n", "20", "--m", "10", "--t", "12",
        ],
        &mut out,
        &mut err,
    );
    let out = String::from_utf8(out).unwrap();
    let reported = out
        .lines()
        .next()
        .and_then(|l| {
            l.split_whitespace()
                .find_map(|kv| kv.strip_prefix("p_hat_exp_bound="))
        })
        .and_then(|v| v.parse::<f64>().ok());
    let closed = 1.0 - (-4.0f64).exp();
    match reported {
        Some(v) => check(
            code == 0 && (v - closed).abs() <= 1e-6 && v >= 0.98 && out.contains("0.981684"),
            format!("exp bound {v:.9} vs 1-e^-4 = {closed:.9}"),
        ),
        None => check(false, format!("no p_hat_exp_bound in output (exit {code})")),
    }
}

fn criterion_2() -> Outcome {
    let closed = prop2_eval(20, 10, 12).unwrap().p_hat_exact_bound;
    let reference = 1.0 - (1.0 - 2f64.powi(-10)).powi(4096);
    let est = mc_hit_rate(20, 10, 12, 500, SEED).unwrap();
    let z = est.z_score(closed);
    check(
        (closed - reference).abs() < 1e-12 && z <= 4.0 && est.estimate >= 0.96,
        format!(
            "estimate {:.4} ({} / {}), closed form {closed:.5}, z = {z:.2}",
            est.estimate, est.successes, est.trials
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut worst_rel = 0.0f64;
    let mut failures = Vec::new();
    let mut cases = 0;
    for n in [4u32, 6, 8] {
        for m in 1..=n {
            let count = 1u64 << m;
            cases += 1;
            let r = prop1_eval(n, count).unwrap();
            if !(r.p_exact >= r.p_exp_bound
                && r.p_exp_bound >= r.p_poly_bound
                && r.p_poly_bound > r.p_final_bound)
            {
                failures.push(format!("n={n} N={count}"));
            }
            if n == 4 {
                let oracle = rational_distinct(12, count).to_f64().unwrap();
                worst_rel = worst_rel.max(((r.p_exact - oracle) / oracle).abs());
            }
        }
    }
    check(
        failures.is_empty() && worst_rel <= 1e-12,
        format!("{cases} cases, chain failures {failures:?}, n=4 max rel err vs rational {worst_rel:.2e}"),
    )
}

fn criterion_4() -> Outcome {
    let oracle = rational_distinct(12, 64).to_f64().unwrap();
    let exact = exact_distinct_probability(12, 64).unwrap();
    let est = mc_distinctness(4, 64, 100_000, SEED).unwrap();
    let z = est.z_score(exact);
    check(
        ((exact - oracle) / oracle).abs() <= 1e-12 && z <= 4.0,
        format!(
            "exact p {exact:.7}, estimate {:.5} +- {:.5}, z = {z:.2}",
            est.estimate, est.stderr
        ),
    )
}

fn criterion_5() -> Outcome {
    let (n, m) = (24, 16);
    let spec = CipherSpec::ideal(n).unwrap();
    let x0 = default_x0(n);
    let keys = enumerate_keys(KeyMode::Sampled, n, m, SEED).unwrap();
    let dict = Dictionary::build(spec, &keys, x0.clone()).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 1);
    let chosen: Vec<KeyValue> = rand::seq::index::sample(&mut rng, keys.len(), 1000)
        .into_iter()
        .map(|i| keys[i])
        .collect();
    let own = run_attack(&dict, &capture_targets(&spec, &x0, &chosen).unwrap()).unwrap();
    let own_ok = own.hits_unique == 1000
        && own.misses == 0
        && own.false_positives == Some(0)
        && own
            .recovered
            .iter()
            .all(|r| r.candidates == [chosen[r.index]]);

    let uniform: Vec<KeyValue> = (0..1000)
        .map(|_| KeyValue(rng.gen_range(0..1u32 << n)))
        .collect();
    let rep = run_attack(&dict, &capture_targets(&spec, &x0, &uniform).unwrap()).unwrap();
    let p = 2f64.powi(m as i32 - n as i32);
    let mean = 1000.0 * p;
    let sd = (1000.0 * p * (1.0 - p)).sqrt();
    let hits = (rep.hits_unique + rep.hits_ambiguous) as f64;
    let band_ok = (hits - mean).abs() <= 4.0 * sd && rep.false_positives == Some(0);
    check(
        own_ok && band_ok,
        format!(
            "own keys: {} unique / {} misses / {:?} fp; uniform keys: {hits} hits, expected {mean:.2} +- {:.2}",
            own.hits_unique,
            own.misses,
            own.false_positives,
            4.0 * sd
        ),
    )
}

fn criterion_6() -> Outcome {
    let spec = CipherSpec::trunc(8, 2).unwrap();
    let x0 = default_x0(8);
    let keys = enumerate_keys(KeyMode::Sequential, 8, 8, 0).unwrap();
    let dict = Dictionary::build(spec, &keys, x0.clone()).unwrap();
    let shape_ok = dict.entry_count() == 64 && dict.entries().iter().all(|e| e.keys.len() == 4);
    let report = run_attack(&dict, &capture_targets(&spec, &x0, &keys).unwrap()).unwrap();
    let classes_ok = report.hits_ambiguous == 256
        && report.false_positives == Some(0)
        && report.recovered.iter().all(|r| {
            let truth = keys[r.index];
            r.candidates.len() == 4 && r.candidates.iter().all(|k| k.0 & 0x3f == truth.0 & 0x3f)
        });
    check(
        shape_ok && classes_ok,
        format!(
            "{} entries, max size {}, {} ambiguous hits of 4 candidates",
            dict.entry_count(),
            dict.max_entry_size(),
            report.hits_ambiguous
        ),
    )
}

/// Counts comparisons of a plain binary search, independently of `lookup`.
fn counted_search(entries: &[DictEntry], fp: &Fingerprint) -> u32 {
    let mut comparisons = 0;
    let mut cmp = |e: &DictEntry| {
        comparisons += 1;
        e.fp.cmp(fp)
    };
    let (mut lo, mut hi) = (0, entries.len());
    while lo < hi {
        let mid = (lo + hi) / 2;
        match cmp(&entries[mid]) {
            Ordering::Equal => break,
            Ordering::Less => lo = mid + 1,
            Ordering::Greater => hi = mid,
        }
    }
    comparisons
}

fn criterion_7() -> Outcome {
    let spec = CipherSpec::ideal(16).unwrap();
    let keys = enumerate_keys(KeyMode::Sampled, 16, 10, SEED).unwrap();
    let dict = Dictionary::build(spec, &keys, default_x0(16)).unwrap();
    let budget = probe_budget(dict.entry_count());
    let mut max_probes = 0;
    let mut agree = true;
    for e in dict.entries() {
        let probes = dict.lookup(&e.fp).unwrap().probes();
        agree &= probes == counted_search(dict.entries(), &e.fp);
        max_probes = max_probes.max(probes);
    }
    check(
        dict.entry_count() == 1024 && budget == 11 && max_probes <= 11 && agree,
        format!(
            "{} entries, max probes {max_probes} (budget {budget}), instrumented count agrees: {agree}",
            dict.entry_count()
        ),
    )
}

fn criterion_8() -> Outcome {
    let spec = CipherSpec::feistel(20, 8).unwrap();
    let keys = enumerate_keys(KeyMode::Sampled, 20, 14, SEED).unwrap();
    let files: Vec<Vec<u8>> = [1, 2, 4, 8]
        .into_iter()
        .map(|w| {
            Dictionary::build_with_workers(spec, &keys, default_x0(20), w)
                .unwrap()
                .to_bytes()
                .unwrap()
        })
        .collect();
    let identical = files.iter().all(|f| *f == files[0]);

    let mut roundtrips = true;
    for d in [
        Dictionary::from_bytes(&files[0]).unwrap(),
        Dictionary::build(
            CipherSpec::trunc(8, 2).unwrap(),
            &enumerate_keys(KeyMode::Sequential, 8, 8, 0).unwrap(),
            default_x0(8),
        )
        .unwrap(),
    ] {
        let bytes = d.to_bytes().unwrap();
        roundtrips &= Dictionary::from_bytes(&bytes).unwrap() == d;
    }

    // n = 8 ideal: header is 31 bytes, each entry 3 + 2 + 1 bytes
    let small = Dictionary::build(
        CipherSpec::ideal(8).unwrap(),
        &enumerate_keys(KeyMode::Sequential, 8, 8, 0).unwrap(),
        default_x0(8),
    )
    .unwrap()
    .to_bytes()
    .unwrap();
    let corrupt = |f: &dyn Fn(&mut Vec<u8>)| {
        let mut b = small.clone();
        f(&mut b);
        Dictionary::from_bytes(&b)
            .map(|_| ())
            .map_err(|e| e.to_string())
    };
    // n = 20: fingerprints carry 4 pad bits
    let mut padded = files[0].clone();
    let header = 4 + 2 + 1 + 1 + 2 + 2 + 8 + 8 + 8;
    padded[header] |= 0x80;

    let diagnostics = [
        ("bad magic", corrupt(&|b| b[0] = b'X')),
        ("version mismatch", corrupt(&|b| b[4] = 2)),
        ("truncated", corrupt(&|b| b.truncate(b.len() - 1))),
        ("unsorted entries", corrupt(&|b| b[31] = 0xff)),
        (
            "nonzero pad bits",
            Dictionary::from_bytes(&padded)
                .map(|_| ())
                .map_err(|e| e.to_string()),
        ),
    ];
    let mut diag_ok = true;
    let mut seen = Vec::new();
    for (expected, result) in &diagnostics {
        let ok = matches!(result, Err(msg) if msg.starts_with(expected));
        diag_ok &= ok;
        seen.push(format!("{expected}:{}", if ok { "ok" } else { "MISSING" }));
    }
    check(
        identical && roundtrips && diag_ok,
        format!(
            "workers 1/2/4/8 identical: {identical}, round trips: {roundtrips}, diagnostics [{}]",
            seen.join(" ")
        ),
    )
}

fn main() {
    let criteria: [Criterion; 8] = [
        (
            "prop2 threshold via verify",
            Duration::from_secs(1),
            criterion_1,
        ),
        (
            "prop2 Monte Carlo hit rate",
            Duration::from_secs(120),
            criterion_2,
        ),
        ("prop1 bound chain", Duration::from_secs(5), criterion_3),
        (
            "distinctness Monte Carlo",
            Duration::from_secs(30),
            criterion_4,
        ),
        ("attack correctness", Duration::from_secs(60), criterion_5),
        ("collision entries", Duration::from_secs(1), criterion_6),
        ("probe budget", Duration::from_secs(60), criterion_7),
        (
            "determinism and format",
            Duration::from_secs(60),
            criterion_8,
        ),
    ];
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let pass = outcome.pass && elapsed <= *budget;
        if !pass {
            failed += 1;
        }
        println!(
            "[{}] criterion {}: {name}: {} ({:.2?} of {:?})",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            outcome.detail,
            elapsed,
            budget
        );
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
