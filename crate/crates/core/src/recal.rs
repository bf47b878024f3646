//! Recursive group-wise temperature calibration.
//!
//! Fitting repeats three steps until the validation ECE settles or the
//! iteration budget runs out:
//!
//! 1. sample a pool entry uniformly with replacement,
//! 2. group the current original logits against that entry's current
//!    transformed logits,
//! 3. fit a temperature per group, shrink it toward 1 by the group's share
//!    of the validation set, and divide the group's rows of both tables by it.
//!
//! Only the sampled entry's transformed table is rescaled; the others keep
//! whatever state they had. Replaying the stored temperatures on new data
//! follows the same steps without refitting.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grouping::group_inputs;
use crate::map::{
    fingerprint, CalibrationConfig, CalibrationIteration, CalibrationMap, TransformationPool,
    FORMAT_VERSION,
};
use crate::metrics::ece;
use crate::table::LogitsTable;
use crate::temperature::{
    apply_temperature, fit_temperature, shrink_temperature, TemperatureFitConfig,
};

/// In-progress fit: current logits, ECE history and the sampling generator.
#[derive(Debug, Clone)]
pub struct FitState {
    original: LogitsTable,
    transformed: Vec<LogitsTable>,
    pool: TransformationPool,
    config: CalibrationConfig,
    temperature_config: TemperatureFitConfig,
    iterations: Vec<CalibrationIteration>,
    ece_trace: Vec<f64>,
    rng: ChaCha8Rng,
    fingerprint: String,
    converged: bool,
}

impl FitState {
    pub fn new(
        validation: &LogitsTable,
        transformed: &[LogitsTable],
        pool: &TransformationPool,
        config: CalibrationConfig,
        temperature_config: TemperatureFitConfig,
    ) -> Result<Self> {
        config.validate()?;
        temperature_config.validate()?;
        validation.require_labels("calibration fitting")?;
        if transformed.len() != pool.len() {
            return Err(Error::contract(format!(
                "{} transformed tables for a pool of {}",
                transformed.len(),
                pool.len()
            )));
        }
        for (j, t) in transformed.iter().enumerate() {
            validation.check_aligned(t, &format!("transformed table {j}"))?;
        }
        let initial = ece(validation, config.ece_bins)?;
        Ok(Self {
            original: validation.clone(),
            transformed: transformed.to_vec(),
            pool: pool.clone(),
            config,
            temperature_config,
            iterations: Vec::new(),
            ece_trace: vec![initial],
            rng: pool.sampler(),
            fingerprint: fingerprint(validation, Some(pool), &config),
            converged: false,
        })
    }

    /// True once the stopping rule fired or the iteration budget is spent.
    pub fn is_done(&self) -> bool {
        self.converged || self.iterations.len() >= self.config.max_iterations
    }

    /// Runs one iteration. Returns `false` without doing anything when the
    /// fit is already done.
    pub fn step(&mut self) -> Result<bool> {
        if self.is_done() {
            return Ok(false);
        }
        let j = self.rng.random_range(0..self.pool.len());
        let partition = group_inputs(
            &self.original,
            &self.transformed[j],
            self.config.confidence_comparison_mode,
        )?;
        let n = self.original.sample_count();
        let mut raw = [1.0; 4];
        let mut temps = [1.0; 4];
        for (g, idx) in partition.groups().iter().enumerate() {
            if !idx.is_empty() {
                let group = self.original.select(idx)?;
                raw[g] = fit_temperature(&group, &self.temperature_config)?;
            }
            temps[g] = shrink_temperature(raw[g], idx.len(), n)?;
            for &i in idx {
                self.original.scale_row(i, temps[g]);
                self.transformed[j].scale_row(i, temps[g]);
            }
        }
        let after = ece(&self.original, self.config.ece_bins)?;
        let before = *self.ece_trace.last().expect("trace starts non-empty");
        self.ece_trace.push(after);
        self.iterations.push(CalibrationIteration {
            transform_index: Some(j),
            raw_temperatures: raw,
            temperatures: temps,
            group_sizes: partition.sizes(),
            validation_ece_after: after,
        });
        if (after - before).abs() < self.config.stopping_delta {
            self.converged = true;
        }
        Ok(true)
    }

    /// Validation ECE before fitting, then after each completed iteration.
    pub fn ece_trace(&self) -> &[f64] {
        &self.ece_trace
    }

    pub fn iterations(&self) -> &[CalibrationIteration] {
        &self.iterations
    }

    /// Current original-input logits.
    pub fn calibrated(&self) -> &LogitsTable {
        &self.original
    }

    pub fn transformed(&self) -> &[LogitsTable] {
        &self.transformed
    }

    pub fn to_map(&self) -> CalibrationMap {
        CalibrationMap {
            format_version: FORMAT_VERSION,
            pool: Some(self.pool.clone()),
            config: self.config,
            initial_validation_ece: self.ece_trace[0],
            iterations: self.iterations.clone(),
            fingerprint: self.fingerprint.clone(),
        }
    }
}

/// Result of [`fit`]: the map plus the final validation logits.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub map: CalibrationMap,
    pub calibrated: LogitsTable,
    pub ece_trace: Vec<f64>,
}

/// Fits a calibration map on labeled validation logits and one aligned
/// transformed table per pool entry.
pub fn fit(
    validation: &LogitsTable,
    transformed: &[LogitsTable],
    pool: &TransformationPool,
    config: CalibrationConfig,
    temperature_config: TemperatureFitConfig,
) -> Result<FitOutcome> {
    let mut state = FitState::new(validation, transformed, pool, config, temperature_config)?;
    while state.step()? {}
    Ok(FitOutcome {
        map: state.to_map(),
        calibrated: state.original,
        ece_trace: state.ece_trace,
    })
}

/// Plain temperature scaling packaged as a single uniform iteration.
pub fn fit_global_temperature(
    validation: &LogitsTable,
    config: CalibrationConfig,
    temperature_config: TemperatureFitConfig,
) -> Result<FitOutcome> {
    config.validate()?;
    let initial = ece(validation, config.ece_bins)?;
    let t = fit_temperature(validation, &temperature_config)?;
    let calibrated = apply_temperature(validation, t)?;
    let after = ece(&calibrated, config.ece_bins)?;
    let map = CalibrationMap {
        format_version: FORMAT_VERSION,
        pool: None,
        config,
        initial_validation_ece: initial,
        iterations: vec![CalibrationIteration {
            transform_index: None,
            raw_temperatures: [t; 4],
            temperatures: [t; 4],
            group_sizes: [0, 0, 0, validation.sample_count()],
            validation_ece_after: after,
        }],
        fingerprint: fingerprint(validation, None, &config),
    };
    Ok(FitOutcome {
        map,
        calibrated,
        ece_trace: vec![initial, after],
    })
}

/// Replays `map` on `z`. `transformed` must hold one table per pool entry.
pub fn apply(
    z: &LogitsTable,
    transformed: &[LogitsTable],
    map: &CalibrationMap,
) -> Result<LogitsTable> {
    let pool_size = map.pool.as_ref().map_or(0, TransformationPool::len);
    if transformed.len() != pool_size {
        return Err(Error::contract(format!(
            "{} transformed tables for a pool of {pool_size}",
            transformed.len()
        )));
    }
    let referenced = transformed.iter().cloned().enumerate().collect();
    apply_referenced(z, referenced, map)
}

/// Replays `map` given only the transformed tables its iterations use,
/// keyed by pool index.
pub fn apply_referenced(
    z: &LogitsTable,
    mut transformed: BTreeMap<usize, LogitsTable>,
    map: &CalibrationMap,
) -> Result<LogitsTable> {
    map.validate()?;
    for j in map.referenced_transforms() {
        let t = transformed.get(&j).ok_or_else(|| {
            Error::contract(format!("missing transformed table for pool entry {j}"))
        })?;
        z.check_aligned(t, &format!("transformed table {j}"))?;
    }
    let mode = map.config.confidence_comparison_mode;
    let mut current = z.clone();
    for it in &map.iterations {
        match it.transform_index {
            None => {
                let t = it.temperatures[0];
                for i in 0..current.sample_count() {
                    current.scale_row(i, t);
                }
            }
            Some(j) => {
                let table_t = transformed.get_mut(&j).expect("checked above");
                let partition = group_inputs(&current, table_t, mode)?;
                for (g, idx) in partition.groups().iter().enumerate() {
                    for &i in idx {
                        current.scale_row(i, it.temperatures[g]);
                        table_t.scale_row(i, it.temperatures[g]);
                    }
                }
            }
        }
    }
    Ok(current)
}

/// Like [`apply_referenced`], logging a warning when `expected_fingerprint`
/// is given and differs from the map's.
pub fn apply_checked(
    z: &LogitsTable,
    transformed: BTreeMap<usize, LogitsTable>,
    map: &CalibrationMap,
    expected_fingerprint: Option<&str>,
) -> Result<LogitsTable> {
    if let Some(expected) = expected_fingerprint {
        if expected != map.fingerprint {
            log::warn!(
                "calibration map fingerprint {} does not match expected {expected}; \
                 the map may come from a different pipeline",
                map.fingerprint
            );
        }
    }
    apply_referenced(z, transformed, map)
}
