//! Acceptance criteria. Runs as a plain binary and prints one line per
//! criterion; exits non-zero if any criterion fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use recal::map::save_map;
use recal::synth::{synth_cohort_scenario, synth_generate};
use recal::transforms::{brightness, zoom_out};
use recal::{
    apply, build_pool, ece, error_rate, fit, fit_global_temperature, fit_temperature, group_inputs,
    group_number, group_rank_analysis, load_map, shrink_temperature, CalibrationConfig,
    ConfidenceComparisonMode, ImageTensorSet, LogitsTable, ReliabilityBins, TemperatureFitConfig,
    TransformKind,
};

type Check = std::result::Result<String, String>;

/// Name, check and wall-clock limit.
type Criterion = (&'static str, fn() -> Check, Duration);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

/// Softmax of `row` computed directly, without max-shifting.
fn naive_softmax(row: &[f64]) -> Vec<f64> {
    let denom: f64 = row.iter().map(|v| v.exp()).sum();
    row.iter().map(|v| v.exp() / denom).collect()
}

fn first_argmax(p: &[f64]) -> usize {
    (0..p.len()).fold(0, |best, j| if p[j] > p[best] { j } else { best })
}

/// The four prediction-change cells, read directly off their definitions.
fn table_cell(
    row: &[f64],
    row_t: &[f64],
    mode: ConfidenceComparisonMode,
) -> (usize, (usize, usize, f64, f64)) {
    let (p, p_t) = (naive_softmax(row), naive_softmax(row_t));
    let (y, y_t) = (first_argmax(&p), first_argmax(&p_t));
    let conf_t = match mode {
        ConfidenceComparisonMode::TransformedMax => p_t[y_t],
        ConfidenceComparisonMode::OriginalIndex => p_t[y],
    };
    let cell = match (y != y_t, conf_t > p[y]) {
        (true, true) => 1,
        (true, false) => 2,
        (false, true) => 3,
        (false, false) => 4,
    };
    (cell, (y, y_t, p[y], conf_t))
}

fn random_table(rng: &mut ChaCha8Rng, n: usize, k: usize, scale: f64) -> LogitsTable {
    let logits = (0..n * k)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    let labels = (0..n).map(|_| rng.random_range(0..k)).collect();
    LogitsTable::new(logits, k, Some(labels)).unwrap()
}

/// 1. error rate is unchanged by applying any fitted map.
fn accuracy_preservation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut iterations = 0;
    for seed in 0..50u64 {
        let a_sharp = rng.random_range(1.0..4.0);
        let gap = rng.random_range(0.0..0.5);
        let s = synth_cohort_scenario(5000, 10, a_sharp, gap, seed).map_err(|e| e.to_string())?;
        let out = fit(
            &s.validation,
            &s.validation_transformed,
            &s.descriptor.pool,
            CalibrationConfig::default(),
            TemperatureFitConfig::default(),
        )
        .map_err(|e| e.to_string())?;
        iterations += out.map.iterations.len();
        for (z, zt) in [
            (&s.validation, &s.validation_transformed),
            (&s.test, &s.test_transformed),
        ] {
            let calibrated = apply(z, zt, &out.map).map_err(|e| e.to_string())?;
            let before = error_rate(z).unwrap();
            let after = error_rate(&calibrated).unwrap();
            ensure!(
                before == after,
                "seed {seed}: error rate {before} -> {after}"
            );
        }
    }
    Ok(format!(
        "50 maps, {iterations} iterations total, error rates identical"
    ))
}

/// 2. temperature scaling recovers the sharpening factor.
fn temperature_recovery() -> Check {
    let t = synth_generate(20_000, 10, 1.0, 2.5, 7).map_err(|e| e.to_string())?;
    let fitted =
        fit_temperature(&t, &TemperatureFitConfig::default()).map_err(|e| e.to_string())?;
    let rel = (fitted - 2.5).abs() / 2.5;
    ensure!(rel <= 0.05, "fitted {fitted}, relative error {rel}");
    Ok(format!("T = {fitted:.4} (relative error {rel:.4})"))
}

/// 3. a single identity transformation reduces to plain temperature scaling.
fn identity_pool_equivalence() -> Check {
    let z = synth_generate(5000, 10, 1.0, 2.0, 3).map_err(|e| e.to_string())?;
    let pool = build_pool(TransformKind::SyntheticLossy, 0.5, 0.5, 1, 3).unwrap();
    let cfg = CalibrationConfig::default();
    let tc = TemperatureFitConfig::default();
    let recal = fit(&z, std::slice::from_ref(&z), &pool, cfg, tc).map_err(|e| e.to_string())?;
    let ts = fit_global_temperature(&z, cfg, tc).map_err(|e| e.to_string())?;
    let t_global = ts.map.iterations[0].temperatures[0];
    let ece_recal = ece(&recal.calibrated, cfg.ece_bins).unwrap();
    let ece_ts = ece(&ts.calibrated, cfg.ece_bins).unwrap();
    ensure!(
        (ece_recal - ece_ts).abs() <= 1e-9,
        "ECE {ece_recal} vs TS {ece_ts}"
    );
    let first = &recal.map.iterations[0];
    ensure!(
        first.temperatures[..3] == [1.0, 1.0, 1.0],
        "iteration 1 temperatures {:?}",
        first.temperatures
    );
    ensure!(
        (first.raw_temperatures[3] - t_global).abs() <= 1e-6
            && first.temperatures[3] == first.raw_temperatures[3],
        "group 4 temperature {} / raw {} vs global {t_global}",
        first.temperatures[3],
        first.raw_temperatures[3]
    );
    Ok(format!(
        "ECE {ece_recal:.6} == TS {ece_ts:.6}, sigma_4 = {:.6} = T, {} iterations",
        first.temperatures[3],
        recal.map.iterations.len()
    ))
}

/// 4. group-wise calibration beats one global temperature on two cohorts.
fn groupwise_advantage() -> Check {
    let mut wins = 0;
    let (mut sum_recal, mut sum_ts) = (0.0, 0.0);
    let mut detail = Vec::new();
    for seed in 0..5u64 {
        let s = synth_cohort_scenario(20_000, 10, 3.0, 0.4, seed).map_err(|e| e.to_string())?;
        let cfg = CalibrationConfig::default();
        let tc = TemperatureFitConfig::default();
        let recal = fit(
            &s.validation,
            &s.validation_transformed,
            &s.descriptor.pool,
            cfg,
            tc,
        )
        .map_err(|e| e.to_string())?;
        let ts = fit_global_temperature(&s.validation, cfg, tc).map_err(|e| e.to_string())?;
        let e_recal = ece(
            &apply(&s.test, &s.test_transformed, &recal.map).unwrap(),
            cfg.ece_bins,
        )
        .unwrap();
        let e_ts = ece(&apply(&s.test, &[], &ts.map).unwrap(), cfg.ece_bins).unwrap();
        if e_recal < e_ts {
            wins += 1;
        }
        sum_recal += e_recal;
        sum_ts += e_ts;
        detail.push(format!("{e_recal:.4}/{e_ts:.4}"));
    }
    let ratio = sum_recal / sum_ts;
    ensure!(
        wins >= 4,
        "ReCal won {wins}/5 seeds (recal/ts: {})",
        detail.join(" ")
    );
    ensure!(
        ratio <= 0.8,
        "mean ECE ratio {ratio:.3} (recal/ts: {})",
        detail.join(" ")
    );
    Ok(format!(
        "won {wins}/5, mean ratio {ratio:.3} (recal/ts: {})",
        detail.join(" ")
    ))
}

/// 5. shrinkage endpoints.
fn shrinkage_endpoints() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let raw = rng.random_range(0.05..20.0);
        let n = rng.random_range(1..100_000usize);
        let empty = shrink_temperature(raw, 0, n).map_err(|e| e.to_string())?;
        let full = shrink_temperature(raw, n, n).map_err(|e| e.to_string())?;
        ensure!(empty == 1.0, "shrink({raw}, 0, {n}) = {empty}");
        ensure!(full == raw, "shrink({raw}, {n}, {n}) = {full}");
    }
    Ok("1000 random temperatures, both endpoints exact".into())
}

/// 6. grouping agrees with the closed-form group number.
fn grouping_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 10_000;
    let k = 5;
    let z = random_table(&mut rng, n, k, 3.0);
    // a tenth of the rows are copied unchanged to exercise the tie branch
    let mut zt_values = Vec::with_capacity(n * k);
    for i in 0..n {
        if i % 10 == 0 {
            zt_values.extend_from_slice(z.row(i));
        } else {
            zt_values.extend((0..k).map(|_| rng.random_range(-3.0..3.0)));
        }
    }
    let z_t = LogitsTable::new(zt_values, k, None).unwrap();
    for mode in [
        ConfidenceComparisonMode::TransformedMax,
        ConfidenceComparisonMode::OriginalIndex,
    ] {
        let p = group_inputs(&z, &z_t, mode).map_err(|e| e.to_string())?;
        ensure!(
            p.sizes().iter().sum::<usize>() == n,
            "{mode}: sizes {:?}",
            p.sizes()
        );
        let mut seen = vec![false; n];
        for g in p.groups() {
            for &i in g {
                ensure!(!seen[i], "{mode}: sample {i} in two groups");
                seen[i] = true;
            }
        }
        ensure!(seen.iter().all(|&s| s), "{mode}: partition not exhaustive");
        for i in 0..n {
            let (expected, (y, y_t, p_hat, p_hat_t)) = table_cell(z.row(i), z_t.row(i), mode);
            ensure!(
                p.group_of(i) == expected,
                "{mode}: sample {i} in group {} not {expected}",
                p.group_of(i)
            );
            let formula = group_number(y, y_t, p_hat, p_hat_t);
            ensure!(
                formula == expected,
                "{mode}: sample {i} formula gives {formula}, table gives {expected}"
            );
        }
    }
    Ok(format!("{n} pairs agree in both modes"))
}

/// 7. ECE hand example and brute-force Brier/NLL.
fn metric_oracles() -> Check {
    let bins =
        ReliabilityBins::from_predictions(&[0.9, 0.9, 0.6, 0.6], &[true, false, true, false], 10)
            .map_err(|e| e.to_string())?;
    ensure!(
        (bins.ece() - 0.25).abs() <= 1e-12,
        "hand ECE {}",
        bins.ece()
    );

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let t = random_table(&mut rng, 50, 10, 4.0);
        let labels = t.labels().unwrap();
        let (mut brier, mut nll) = (0.0, 0.0);
        for i in 0..50 {
            let row = t.row(i);
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            for (j, &v) in row.iter().enumerate() {
                let p = v.exp() / denom;
                let y = if j == labels[i] { 1.0 } else { 0.0 };
                brier += (p - y) * (p - y);
            }
            nll -= (row[labels[i]].exp() / denom).max(1e-300).ln();
        }
        brier /= 500.0;
        nll /= 50.0;
        let db = (recal::brier_normalized(&t).unwrap() - brier).abs();
        let dn = (recal::nll(&t).unwrap() - nll).abs();
        ensure!(db <= 1e-12 && dn <= 1e-12, "brier diff {db}, nll diff {dn}");
        worst = worst.max(db).max(dn);
    }
    Ok(format!(
        "hand ECE 0.25, worst Brier/NLL deviation {worst:.1e}"
    ))
}

/// 8. rank analysis on a measured zoom-out 0.9x ECE row.
fn rank_analysis() -> Check {
    let d = group_rank_analysis(&[[0.047142, 0.040512, 0.025389, 0.020825]])
        .map_err(|e| e.to_string())?;
    ensure!(d.ranks[0] == [4, 3, 2, 1], "ranks {:?}", d.ranks[0]);
    ensure!(
        d.fractions[3][0] == 1.0 && d.fractions[0][3] == 1.0,
        "fractions {:?}",
        d.fractions
    );
    Ok("ranks (4, 3, 2, 1)".into())
}

/// 9. saved maps replay the fit exactly and fits are reproducible.
fn coherence_and_determinism() -> Check {
    let s = synth_cohort_scenario(4000, 10, 3.0, 0.4, 9).map_err(|e| e.to_string())?;
    let run = || {
        fit(
            &s.validation,
            &s.validation_transformed,
            &s.descriptor.pool,
            CalibrationConfig::default(),
            TemperatureFitConfig::default(),
        )
        .unwrap()
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (p1, p2) = (dir.path().join("a.json"), dir.path().join("b.json"));
    let first = run();
    save_map(&first.map, &p1).map_err(|e| e.to_string())?;
    save_map(&run().map, &p2).map_err(|e| e.to_string())?;
    let bytes1 = std::fs::read(&p1).unwrap();
    ensure!(bytes1 == std::fs::read(&p2).unwrap(), "map files differ");
    let loaded = load_map(&p1).map_err(|e| e.to_string())?;
    let replay =
        apply(&s.validation, &s.validation_transformed, &loaded).map_err(|e| e.to_string())?;
    let worst = replay
        .logits()
        .iter()
        .zip(first.calibrated.logits())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure!(worst <= 1e-10, "replay deviates by {worst}");
    Ok(format!(
        "{} iterations, identical {}-byte files, replay deviation {worst:.1e}",
        first.map.iterations.len(),
        bytes1.len()
    ))
}

/// 10. image transform identities, shapes and ranges.
fn transform_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for case in 0..100 {
        let dims = [
            rng.random_range(1..3),
            rng.random_range(1..4),
            rng.random_range(1..24),
            rng.random_range(1..24),
        ];
        let count = dims.iter().product();
        let values = (0..count).map(|_| rng.random::<f32>()).collect();
        let t = ImageTensorSet::new(dims, values).unwrap();
        let scale = rng.random_range(0.01..=1.0);
        let z = zoom_out(&t, scale).map_err(|e| e.to_string())?;
        ensure!(
            z.dims() == dims,
            "case {case}: zoom dims {:?} != {dims:?}",
            z.dims()
        );
        let b = brightness(&t, scale).map_err(|e| e.to_string())?;
        ensure!(
            b.values().iter().all(|v| (0.0..=1.0).contains(v)),
            "case {case}: brightness out of range"
        );
        ensure!(
            zoom_out(&t, 1.0).unwrap() == t,
            "case {case}: zoom(1) not identity"
        );
        ensure!(
            brightness(&t, 1.0).unwrap() == t,
            "case {case}: brightness(1) not identity"
        );
    }
    Ok("100 random tensors".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        (
            "AC1 accuracy preservation",
            accuracy_preservation,
            Duration::from_secs(30),
        ),
        (
            "AC2 temperature recovery",
            temperature_recovery,
            Duration::from_secs(5),
        ),
        (
            "AC3 identity-pool equivalence",
            identity_pool_equivalence,
            Duration::from_secs(10),
        ),
        (
            "AC4 group-wise advantage",
            groupwise_advantage,
            Duration::from_secs(120),
        ),
        (
            "AC5 shrinkage endpoints",
            shrinkage_endpoints,
            Duration::from_secs(1),
        ),
        (
            "AC6 grouping oracle",
            grouping_oracle,
            Duration::from_secs(5),
        ),
        ("AC7 metric oracles", metric_oracles, Duration::from_secs(1)),
        ("AC8 rank analysis", rank_analysis, Duration::from_secs(1)),
        (
            "AC9 fit/apply coherence and determinism",
            coherence_and_determinism,
            Duration::from_secs(10),
        ),
        (
            "AC10 transform identities",
            transform_identities,
            Duration::from_secs(5),
        ),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, check, limit) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if elapsed > limit => {
                Err(format!("{msg}; took {elapsed:.2?}, limit {limit:?}"))
            }
            other => other,
        };
        match outcome {
            Ok(msg) => println!("PASS  {name} [{elapsed:.2?}]: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name} [{elapsed:.2?}]: {msg}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
