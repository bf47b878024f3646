//! Synthetic classifier outputs for exercising the pipeline without a
//! network.
//!
//! Every generator is a pure function of its seed. Each one seeds its own
//! ChaCha8 stream and draws in sample order, row by row, class by class.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::error::{Error, Result};
use crate::map::{build_pool, TransformKind, TransformationPool};
use crate::table::LogitsTable;

/// Smallest probability represented in generated logits.
pub const LOG_FLOOR_PROBABILITY: f64 = 1e-12;

/// Draws a symmetric Dirichlet vector by normalising Gamma variates.
fn dirichlet(rng: &mut ChaCha8Rng, gamma: &Gamma<f64>, k: usize) -> Vec<f64> {
    let mut p: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = p.iter().sum();
    if sum > 0.0 {
        for v in &mut p {
            *v /= sum;
        }
    } else {
        // every variate underflowed; fall back to uniform
        p.fill(1.0 / k as f64);
    }
    p
}

fn sample_class(rng: &mut ChaCha8Rng, p: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, &pj) in p.iter().enumerate() {
        acc += pj;
        if u < acc {
            return j;
        }
    }
    // u landed in the rounding slack above the last partial sum
    p.iter().rposition(|&pj| pj > 0.0).unwrap_or(p.len() - 1)
}

/// True class probabilities, sampled labels and `sharpen * ln p` logits
/// for `n` samples, drawn from `rng`.
fn draw_samples(
    rng: &mut ChaCha8Rng,
    n: usize,
    k: usize,
    alpha: f64,
    sharpen: impl Fn(usize) -> f64,
) -> Result<LogitsTable> {
    let gamma =
        Gamma::new(alpha, 1.0).map_err(|e| Error::contract(format!("dirichlet alpha: {e}")))?;
    let mut logits = Vec::with_capacity(n * k);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let p = dirichlet(rng, &gamma, k);
        labels.push(sample_class(rng, &p));
        let a = sharpen(i);
        logits.extend(p.iter().map(|&pj| a * pj.max(LOG_FLOOR_PROBABILITY).ln()));
    }
    LogitsTable::new(logits, k, Some(labels))
}

/// Labeled logits whose calibration is known by construction.
///
/// For each sample a probability vector `p ~ Dirichlet(alpha)` is drawn, the
/// label is drawn from `p`, and the logits are `sharpen_a * ln p`.
/// `sharpen_a = 1` gives calibrated logits; larger values overconfident ones.
pub fn synth_generate(
    n: usize,
    k: usize,
    dirichlet_alpha: f64,
    sharpen_a: f64,
    seed: u64,
) -> Result<LogitsTable> {
    if n < 1 || k < 2 {
        return Err(Error::contract(format!(
            "need n >= 1 and k >= 2, got n={n}, k={k}"
        )));
    }
    if !(dirichlet_alpha > 0.0 && dirichlet_alpha.is_finite())
        || !(sharpen_a > 0.0 && sharpen_a.is_finite())
    {
        return Err(Error::contract(
            "dirichlet_alpha and sharpen_a must be positive and finite",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw_samples(&mut rng, n, k, dirichlet_alpha, |_| sharpen_a)
}

/// Contracts row `i` toward zero by `lossiness(i)` and adds Gaussian noise.
fn contract_rows(
    z: &LogitsTable,
    lossiness: impl Fn(usize) -> f64,
    noise_sd: f64,
    rng: &mut ChaCha8Rng,
) -> Result<LogitsTable> {
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::contract(format!("noise: {e}")))?;
    let k = z.class_count();
    let mut out = Vec::with_capacity(z.logits().len());
    for (i, row) in z.rows().enumerate() {
        let keep = 1.0 - lossiness(i);
        for &v in row {
            let eps = if noise_sd > 0.0 {
                noise.sample(rng)
            } else {
                0.0
            };
            out.push(keep * v + eps);
        }
    }
    LogitsTable::new(out, k, z.labels().map(<[usize]>::to_vec))
}

/// Simulated logits of a lossy transformed input:
/// `(1 - lossiness) * z + eps`, `eps ~ N(0, noise_sd^2)` per entry.
pub fn synth_lossy_logits(
    z: &LogitsTable,
    lossiness: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<LogitsTable> {
    if !(0.0..=1.0).contains(&lossiness) {
        return Err(Error::contract(format!(
            "lossiness {lossiness} outside [0, 1]"
        )));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::contract(format!(
            "noise_sd {noise_sd} must be non-negative"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    contract_rows(z, |_| lossiness, noise_sd, &mut rng)
}

/// Fixed knobs of [`synth_cohort_scenario`].
pub mod scenario_defaults {
    /// Dirichlet concentration of the true class probabilities.
    pub const DIRICHLET_ALPHA: f64 = 1.0;
    /// Pool size; parameters are drawn from `[RANGE_LOW, RANGE_HIGH]`.
    pub const POOL_SIZE: usize = 10;
    pub const RANGE_LOW: f64 = 0.1;
    pub const RANGE_HIGH: f64 = 0.9;
    /// Lossiness of the calibrated cohort is `BASE_LOSSINESS * (1 - s)`
    /// for pool parameter `s`.
    pub const BASE_LOSSINESS: f64 = 0.5;
    /// Standard deviation of the noise added to every transformed logit.
    pub const NOISE_SD: f64 = 0.5;
}

/// Ground truth of a cohort scenario. Never shown to calibrators.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDescriptor {
    pub a_sharp: f64,
    pub transform_gap: f64,
    pub seed: u64,
    pub pool: TransformationPool,
    /// `true` for cohort A (sharpened, strong lossy response).
    pub validation_cohort: Vec<bool>,
    pub test_cohort: Vec<bool>,
}

/// Validation and test splits plus one transformed table per pool entry.
#[derive(Debug, Clone)]
pub struct CohortScenario {
    pub validation: LogitsTable,
    pub validation_transformed: Vec<LogitsTable>,
    pub test: LogitsTable,
    pub test_transformed: Vec<LogitsTable>,
    pub descriptor: ScenarioDescriptor,
}

/// Two-cohort data where one global temperature cannot fit everyone.
///
/// Each sample joins cohort A with probability 1/2. Cohort A logits are
/// sharpened by `a_sharp`; cohort B logits are calibrated. For pool
/// parameter `s` the transformed logits follow [`synth_lossy_logits`] with
/// lossiness `0.5 * (1 - s)` for cohort B and `min(1, 0.5 * (1 - s) + gap)`
/// for cohort A, and noise sd 0.5 for both. The pool is
/// `build_pool(synthetic_lossy, 0.1, 0.9, 10, seed)`, so a calibrator built
/// with the same seed and pool notation `s:0.1:0.9:10` sees the same pool.
///
/// `n` samples are generated for each split.
pub fn synth_cohort_scenario(
    n: usize,
    k: usize,
    a_sharp: f64,
    transform_gap: f64,
    seed: u64,
) -> Result<CohortScenario> {
    use scenario_defaults::*;

    if n < 1 || k < 2 {
        return Err(Error::contract(format!(
            "need n >= 1 and k >= 2, got n={n}, k={k}"
        )));
    }
    if !(a_sharp > 0.0 && a_sharp.is_finite()) {
        return Err(Error::contract(format!(
            "a_sharp {a_sharp} must be positive"
        )));
    }
    if !(0.0..=1.0).contains(&transform_gap) {
        return Err(Error::contract(format!(
            "transform_gap {transform_gap} outside [0, 1]"
        )));
    }
    let pool = build_pool(
        TransformKind::SyntheticLossy,
        RANGE_LOW,
        RANGE_HIGH,
        POOL_SIZE,
        seed,
    )?;
    // same key as the pool, different stream
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);

    let split = |rng: &mut ChaCha8Rng| -> Result<(LogitsTable, Vec<LogitsTable>, Vec<bool>)> {
        let cohort: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.5).collect();
        let z = draw_samples(rng, n, k, DIRICHLET_ALPHA, |i| {
            if cohort[i] {
                a_sharp
            } else {
                1.0
            }
        })?;
        let transformed = pool
            .entries()
            .iter()
            .map(|spec| {
                let base = BASE_LOSSINESS * (1.0 - spec.parameter());
                contract_rows(
                    &z,
                    |i| {
                        if cohort[i] {
                            (base + transform_gap).min(1.0)
                        } else {
                            base
                        }
                    },
                    NOISE_SD,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((z, transformed, cohort))
    };
    let (validation, validation_transformed, validation_cohort) = split(&mut rng)?;
    let (test, test_transformed, test_cohort) = split(&mut rng)?;
    Ok(CohortScenario {
        validation,
        validation_transformed,
        test,
        test_transformed,
        descriptor: ScenarioDescriptor {
            a_sharp,
            transform_gap,
            seed,
            pool,
            validation_cohort,
            test_cohort,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{ece, predict};

    #[test]
    fn generate_is_deterministic() {
        let a = synth_generate(200, 5, 1.0, 1.0, 9).unwrap();
        let b = synth_generate(200, 5, 1.0, 1.0, 9).unwrap();
        let c = synth_generate(200, 5, 1.0, 1.0, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn generate_rejects_bad_params() {
        assert!(synth_generate(0, 5, 1.0, 1.0, 0).is_err());
        assert!(synth_generate(5, 1, 1.0, 1.0, 0).is_err());
        assert!(synth_generate(5, 3, 0.0, 1.0, 0).is_err());
        assert!(synth_generate(5, 3, 1.0, -1.0, 0).is_err());
    }

    #[test]
    fn calibrated_by_construction() {
        let t = synth_generate(20_000, 10, 1.0, 1.0, 2024).unwrap();
        let e = ece(&t, 15).unwrap();
        assert!(e < 0.02, "ece {e}");
    }

    #[test]
    fn lossy_identity_and_collapse() {
        let z = synth_generate(50, 4, 1.0, 2.0, 1).unwrap();
        assert_eq!(synth_lossy_logits(&z, 0.0, 0.0, 5).unwrap(), z);
        let flat = synth_lossy_logits(&z, 1.0, 0.0, 5).unwrap();
        assert!(flat.logits().iter().all(|&v| v == 0.0));
        for row in flat.rows() {
            assert!((predict(row).1 - 0.25).abs() < 1e-15);
        }
        assert_eq!(flat.labels(), z.labels());
    }

    #[test]
    fn lossy_rejects_bad_params() {
        let z = synth_generate(5, 3, 1.0, 1.0, 0).unwrap();
        assert!(synth_lossy_logits(&z, -0.1, 0.0, 0).is_err());
        assert!(synth_lossy_logits(&z, 1.1, 0.0, 0).is_err());
        assert!(synth_lossy_logits(&z, 0.5, -1.0, 0).is_err());
    }

    #[test]
    fn lossiness_lowers_mean_confidence() {
        let z = synth_generate(10_000, 10, 1.0, 1.0, 77).unwrap();
        let mean_conf =
            |t: &LogitsTable| t.rows().map(|r| predict(r).1).sum::<f64>() / t.sample_count() as f64;
        let base = mean_conf(&synth_lossy_logits(&z, 0.0, 0.3, 8).unwrap());
        let lossy = mean_conf(&synth_lossy_logits(&z, 0.5, 0.3, 8).unwrap());
        assert!(lossy < base, "{lossy} >= {base}");
    }

    #[test]
    fn scenario_shapes_and_determinism() {
        let s = synth_cohort_scenario(300, 4, 3.0, 0.4, 12).unwrap();
        assert_eq!(s.validation_transformed.len(), scenario_defaults::POOL_SIZE);
        assert_eq!(s.test_transformed.len(), scenario_defaults::POOL_SIZE);
        for t in s.validation_transformed.iter() {
            s.validation.check_aligned(t, "v").unwrap();
        }
        for t in s.test_transformed.iter() {
            s.test.check_aligned(t, "t").unwrap();
        }
        assert_eq!(
            s.descriptor.pool,
            build_pool(TransformKind::SyntheticLossy, 0.1, 0.9, 10, 12).unwrap()
        );
        let again = synth_cohort_scenario(300, 4, 3.0, 0.4, 12).unwrap();
        assert_eq!(again.validation, s.validation);
        assert_eq!(again.test_transformed, s.test_transformed);
        assert_eq!(again.descriptor, s.descriptor);
        assert!(synth_cohort_scenario(10, 4, 0.0, 0.4, 1).is_err());
        assert!(synth_cohort_scenario(10, 4, 3.0, 1.5, 1).is_err());
    }

    #[test]
    fn sharpened_scenario_is_miscalibrated() {
        let s = synth_cohort_scenario(20_000, 10, 3.0, 0.4, 3).unwrap();
        let e = ece(&s.validation, 15).unwrap();
        assert!(e > 0.05, "ece {e}");
    }
}
