//! Single-parameter temperature scaling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::PROBABILITY_FLOOR;
use crate::table::LogitsTable;

/// Search settings for [`fit_temperature`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFitConfig {
    pub t_min: f64,
    pub t_max: f64,
    /// Final bracket width, measured in log-temperature (i.e. relative).
    pub tolerance: f64,
    pub max_evals: usize,
    /// A minimiser within this relative distance of 1 is reported as
    /// exactly 1: the search cannot tell such points apart from no scaling.
    pub unit_snap: f64,
}

impl Default for TemperatureFitConfig {
    fn default() -> Self {
        Self {
            t_min: 0.05,
            t_max: 20.0,
            tolerance: 1e-6,
            max_evals: 200,
            unit_snap: 1e-5,
        }
    }
}

impl TemperatureFitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_min > 0.0 && self.t_min < self.t_max && self.t_max.is_finite()) {
            return Err(Error::contract(format!(
                "temperature interval [{}, {}] must satisfy 0 < t_min < t_max < inf",
                self.t_min, self.t_max
            )));
        }
        if self.tolerance.is_nan()
            || self.tolerance <= 0.0
            || self.unit_snap.is_nan()
            || self.unit_snap < 0.0
        {
            return Err(Error::contract(
                "tolerance must be positive and unit_snap non-negative",
            ));
        }
        if self.max_evals < 3 {
            return Err(Error::contract("max_evals must be at least 3"));
        }
        Ok(())
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "temperature {t} must be positive and finite"
        )))
    }
}

/// Divides every logit by `temperature`. Row argmax is unchanged.
pub fn apply_temperature(table: &LogitsTable, temperature: f64) -> Result<LogitsTable> {
    check_temperature(temperature)?;
    table.map_logits(|v| v / temperature)
}

/// Golden-section minimisation of `f` on `[lo, hi]`. Returns the best
/// evaluated point and its value.
pub(crate) fn golden_section(
    f: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    tolerance: f64,
    max_evals: usize,
) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut evals = 2;
    while hi - lo > tolerance && evals < max_evals {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
        evals += 1;
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Rows shifted so their maximum is 0, with the label logit pulled out,
/// so each NLL evaluation is one multiply and one `exp` per entry.
struct ShiftedRows {
    shifted: Vec<f64>,
    label_logit: Vec<f64>,
    class_count: usize,
}

impl ShiftedRows {
    fn new(table: &LogitsTable, labels: &[usize]) -> Self {
        let mut shifted = Vec::with_capacity(table.logits().len());
        let mut label_logit = Vec::with_capacity(labels.len());
        for (row, &y) in table.rows().zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            shifted.extend(row.iter().map(|v| v - max));
            label_logit.push(row[y] - max);
        }
        Self {
            shifted,
            label_logit,
            class_count: table.class_count(),
        }
    }

    fn nll(&self, temperature: f64) -> f64 {
        let beta = 1.0 / temperature;
        let cap = -PROBABILITY_FLOOR.ln();
        let total: f64 = self
            .shifted
            .chunks_exact(self.class_count)
            .zip(&self.label_logit)
            .map(|(row, &s_y)| {
                let sum: f64 = row.iter().map(|&s| (s * beta).exp()).sum();
                (sum.ln() - s_y * beta).min(cap)
            })
            .sum();
        total / self.label_logit.len() as f64
    }
}

/// Fits the temperature minimising the NLL of `table`.
///
/// Golden-section search over `ln T` in `[ln t_min, ln t_max]`, then the
/// result is compared against `T = 1` and the better of the two is
/// returned, so the fitted temperature never raises the NLL on `table`.
pub fn fit_temperature(table: &LogitsTable, config: &TemperatureFitConfig) -> Result<f64> {
    config.validate()?;
    let labels = table.require_labels("temperature fitting")?;
    let rows = ShiftedRows::new(table, labels);
    let objective = |log_t: f64| rows.nll(log_t.exp());
    let (log_t, best) = golden_section(
        objective,
        config.t_min.ln(),
        config.t_max.ln(),
        config.tolerance,
        config.max_evals,
    );
    let unscaled = rows.nll(1.0);
    if log_t.abs() <= config.unit_snap || unscaled <= best {
        return Ok(1.0);
    }
    Ok(log_t.exp())
}

/// Pulls a fitted group temperature toward 1 in proportion to how small
/// the group is: `(1 - g/n) * 1 + (g/n) * raw`.
pub fn shrink_temperature(raw: f64, group_size: usize, validation_size: usize) -> Result<f64> {
    check_temperature(raw)?;
    if validation_size == 0 {
        return Err(Error::contract("validation size must be at least 1"));
    }
    if group_size > validation_size {
        return Err(Error::contract(format!(
            "group size {group_size} exceeds validation size {validation_size}"
        )));
    }
    let weight = group_size as f64 / validation_size as f64;
    Ok((1.0 - weight) * 1.0 + weight * raw)
}
