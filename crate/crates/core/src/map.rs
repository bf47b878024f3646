//! Transformation pools and calibration maps.
//!
//! A map is saved as a JSON document:
//!
//! ```text
//! {
//!   "format_version": 1,
//!   "pool": {"seed": 7, "kind": "zoom_out", "range": [0.1, 0.9], "parameters": [...]},
//!   "config": {"max_iterations": 100, "stopping_delta": 0.0001, "ece_bins": 15,
//!              "confidence_comparison_mode": "transformed_max"},
//!   "initial_validation_ece": 0.08,
//!   "iterations": [{"transform_index": 3, "raw_temperatures": [..4], "temperatures": [..4],
//!                   "group_sizes": [..4], "validation_ece_after": 0.03}],
//!   "fingerprint": "9f2c..."
//! }
//! ```
//!
//! A plain temperature-scaling map has `"pool": null` and a single
//! iteration whose `transform_index` is `null`; it scales every row.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grouping::ConfidenceComparisonMode;
use crate::metrics::DEFAULT_BIN_COUNT;
use crate::table::LogitsTable;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    ZoomOut,
    Brightness,
    SyntheticLossy,
}

impl TransformKind {
    /// One-letter code used in pool notation (`z:0.1:0.9:20`).
    pub fn code(self) -> char {
        match self {
            Self::ZoomOut => 'z',
            Self::Brightness => 'b',
            Self::SyntheticLossy => 's',
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ZoomOut => "zoom_out",
            Self::Brightness => "brightness",
            Self::SyntheticLossy => "synthetic_lossy",
        })
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "z" | "zoom" | "zoom_out" => Ok(Self::ZoomOut),
            "b" | "brightness" => Ok(Self::Brightness),
            "s" | "synthetic" | "synthetic_lossy" => Ok(Self::SyntheticLossy),
            other => Err(Error::contract(format!(
                "unknown transformation kind `{other}`"
            ))),
        }
    }
}

/// One lossy label-invariant transformation with its strength parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformationSpec {
    kind: TransformKind,
    parameter: f64,
}

impl TransformationSpec {
    pub fn new(kind: TransformKind, parameter: f64) -> Result<Self> {
        if !(parameter > 0.0 && parameter <= 1.0) {
            return Err(Error::domain(format!(
                "transformation parameter {parameter} outside (0, 1]"
            )));
        }
        Ok(Self { kind, parameter })
    }

    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    pub fn parameter(&self) -> f64 {
        self.parameter
    }
}

/// Ordered set of transformations of a single kind, with parameters drawn
/// from a seeded generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoolDoc", into = "PoolDoc")]
pub struct TransformationPool {
    entries: Vec<TransformationSpec>,
    seed: u64,
    range_low: f64,
    range_high: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoolDoc {
    seed: u64,
    kind: TransformKind,
    range: [f64; 2],
    parameters: Vec<f64>,
}

impl From<TransformationPool> for PoolDoc {
    fn from(p: TransformationPool) -> Self {
        PoolDoc {
            seed: p.seed,
            kind: p.kind(),
            range: [p.range_low, p.range_high],
            parameters: p.entries.iter().map(|e| e.parameter).collect(),
        }
    }
}

impl TryFrom<PoolDoc> for TransformationPool {
    type Error = Error;

    fn try_from(d: PoolDoc) -> Result<Self> {
        let entries = d
            .parameters
            .iter()
            .map(|&p| TransformationSpec::new(d.kind, p))
            .collect::<Result<Vec<_>>>()?;
        Self::from_entries(entries, d.seed, d.range[0], d.range[1])
    }
}

fn check_range(low: f64, high: f64) -> Result<()> {
    if low > 0.0 && low <= high && high <= 1.0 {
        Ok(())
    } else {
        Err(Error::contract(format!(
            "parameter range [{low}, {high}] must satisfy 0 < low <= high <= 1"
        )))
    }
}

impl TransformationPool {
    /// Assembles a pool from explicit entries, checking its invariants.
    pub fn from_entries(
        entries: Vec<TransformationSpec>,
        seed: u64,
        range_low: f64,
        range_high: f64,
    ) -> Result<Self> {
        check_range(range_low, range_high)?;
        let Some(first) = entries.first() else {
            return Err(Error::contract("transformation pool is empty"));
        };
        let kind = first.kind;
        for e in &entries {
            if e.kind != kind {
                return Err(Error::contract("a pool holds a single transformation kind"));
            }
            if e.parameter < range_low || e.parameter > range_high {
                return Err(Error::contract(format!(
                    "pool parameter {} outside [{range_low}, {range_high}]",
                    e.parameter
                )));
            }
        }
        Ok(Self {
            entries,
            seed,
            range_low,
            range_high,
        })
    }

    pub fn entries(&self) -> &[TransformationSpec] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn kind(&self) -> TransformKind {
        self.entries[0].kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn range(&self) -> (f64, f64) {
        (self.range_low, self.range_high)
    }

    /// The pool's generator positioned just after the parameter draws.
    /// Transformation sampling during fitting continues from here.
    pub fn sampler(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        for _ in 0..self.entries.len() {
            let _: f64 = rng.random();
        }
        rng
    }
}

/// Draws `count` parameters uniformly from `[range_low, range_high]`.
///
/// Each entry consumes exactly one `f64` draw from a ChaCha8 generator
/// seeded with `seed`, in entry order.
pub fn build_pool(
    kind: TransformKind,
    range_low: f64,
    range_high: f64,
    count: usize,
    seed: u64,
) -> Result<TransformationPool> {
    check_range(range_low, range_high)?;
    if count == 0 {
        return Err(Error::contract("pool size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = (0..count)
        .map(|_| {
            let u: f64 = rng.random();
            let p = (range_low + (range_high - range_low) * u).clamp(range_low, range_high);
            TransformationSpec::new(kind, p)
        })
        .collect::<Result<Vec<_>>>()?;
    TransformationPool::from_entries(entries, seed, range_low, range_high)
}

/// Pool specification in `kind:low:high:count` notation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolSpec {
    pub kind: TransformKind,
    pub range_low: f64,
    pub range_high: f64,
    pub count: usize,
}

impl PoolSpec {
    pub fn build(&self, seed: u64) -> Result<TransformationPool> {
        build_pool(self.kind, self.range_low, self.range_high, self.count, seed)
    }
}

impl FromStr for PoolSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::contract(format!("pool `{s}` is not of the form kind:low:high:count"));
        if parts.len() != 4 {
            return Err(bad());
        }
        let spec = PoolSpec {
            kind: parts[0].parse()?,
            range_low: parts[1].parse().map_err(|_| bad())?,
            range_high: parts[2].parse().map_err(|_| bad())?,
            count: parts[3].parse().map_err(|_| bad())?,
        };
        check_range(spec.range_low, spec.range_high)?;
        if spec.count == 0 {
            return Err(Error::contract("pool size must be at least 1"));
        }
        Ok(spec)
    }
}

impl fmt::Display for PoolSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}:{}",
            self.kind.code(),
            self.range_low,
            self.range_high,
            self.count
        )
    }
}

/// Settings recorded with a fitted map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub max_iterations: usize,
    #[serde(with = "extended_float")]
    pub stopping_delta: f64,
    pub ece_bins: usize,
    pub confidence_comparison_mode: ConfidenceComparisonMode,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            stopping_delta: 1e-4,
            ece_bins: DEFAULT_BIN_COUNT,
            confidence_comparison_mode: ConfidenceComparisonMode::default(),
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::contract("max_iterations must be at least 1"));
        }
        if self.stopping_delta.is_nan() || self.stopping_delta < 0.0 {
            return Err(Error::contract(format!(
                "stopping_delta {} must be non-negative",
                self.stopping_delta
            )));
        }
        if self.ece_bins < 1 {
            return Err(Error::contract("ece_bins must be at least 1"));
        }
        Ok(())
    }
}

/// JSON has no infinity; `+inf` is written as the string `"inf"`.
mod extended_float {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(de::Error::custom(format!("invalid number `{s}`"))),
        }
    }
}

/// One round of group-wise scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationIteration {
    /// Pool entry used for grouping; `None` scales every row uniformly.
    pub transform_index: Option<usize>,
    pub raw_temperatures: [f64; 4],
    pub temperatures: [f64; 4],
    pub group_sizes: [usize; 4],
    pub validation_ece_after: f64,
}

/// Everything needed to replay a fit on new data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationMap {
    pub format_version: u32,
    pub pool: Option<TransformationPool>,
    pub config: CalibrationConfig,
    pub initial_validation_ece: f64,
    pub iterations: Vec<CalibrationIteration>,
    pub fingerprint: String,
}

fn between_one_and(value: f64, raw: f64) -> bool {
    value >= raw.min(1.0) && value <= raw.max(1.0)
}

impl CalibrationMap {
    /// Checks the structural invariants of a map.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Format(m));
        if self.format_version != FORMAT_VERSION {
            return fail(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            ));
        }
        self.config
            .validate()
            .map_err(|e| Error::Format(e.to_string()))?;
        if self.iterations.len() > self.config.max_iterations {
            return fail(format!(
                "{} iterations exceed max_iterations {}",
                self.iterations.len(),
                self.config.max_iterations
            ));
        }
        if !(0.0..=1.0).contains(&self.initial_validation_ece) {
            return fail("initial_validation_ece outside [0, 1]".into());
        }
        let n: usize = self
            .iterations
            .first()
            .map_or(0, |it| it.group_sizes.iter().sum());
        for (l, it) in self.iterations.iter().enumerate() {
            match (it.transform_index, &self.pool) {
                (Some(j), Some(pool)) if j >= pool.len() => {
                    return fail(format!(
                        "iteration {l}: transform_index {j} >= pool size {}",
                        pool.len()
                    ))
                }
                (Some(_), None) => {
                    return fail(format!("iteration {l}: transform_index without a pool"))
                }
                (None, _) if it.temperatures.iter().any(|&t| t != it.temperatures[0]) => {
                    return fail(format!(
                        "iteration {l}: uniform iteration with unequal temperatures"
                    ))
                }
                _ => {}
            }
            for k in 0..4 {
                let (t, raw) = (it.temperatures[k], it.raw_temperatures[k]);
                if !(t > 0.0 && t.is_finite() && raw > 0.0 && raw.is_finite()) {
                    return fail(format!("iteration {l}: non-positive temperature"));
                }
                if it.transform_index.is_some() && !between_one_and(t, raw) {
                    return fail(format!(
                        "iteration {l}: temperature {t} not between 1 and {raw}"
                    ));
                }
            }
            if it.group_sizes.iter().sum::<usize>() != n {
                return fail(format!("iteration {l}: group sizes do not sum to {n}"));
            }
            if !(0.0..=1.0).contains(&it.validation_ece_after) {
                return fail(format!(
                    "iteration {l}: validation_ece_after outside [0, 1]"
                ));
            }
        }
        Ok(())
    }

    /// Validation ECE before fitting followed by the ECE after each iteration.
    pub fn ece_trace(&self) -> Vec<f64> {
        std::iter::once(self.initial_validation_ece)
            .chain(self.iterations.iter().map(|it| it.validation_ece_after))
            .collect()
    }

    /// Pool entries that at least one iteration groups by, ascending.
    pub fn referenced_transforms(&self) -> Vec<usize> {
        let mut used: Vec<usize> = self
            .iterations
            .iter()
            .filter_map(|it| it.transform_index)
            .collect();
        used.sort_unstable();
        used.dedup();
        used
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("map serialization cannot fail");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        match value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
        {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => {
                return Err(Error::Format(format!(
                    "unsupported format_version {v} (expected {FORMAT_VERSION})"
                )))
            }
            None => return Err(Error::Format("missing field `format_version`".into())),
        }
        let map: CalibrationMap =
            serde_json::from_value(value).map_err(|e| Error::Format(e.to_string()))?;
        map.validate()?;
        Ok(map)
    }
}

pub fn save_map(map: &CalibrationMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, map.to_json()).map_err(|e| Error::io(path, e))
}

pub fn load_map(path: impl AsRef<Path>) -> Result<CalibrationMap> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    CalibrationMap::from_json(&text)
}

/// Hex SHA-256 over the validation logits, labels, pool and config.
pub fn fingerprint(
    validation: &LogitsTable,
    pool: Option<&TransformationPool>,
    config: &CalibrationConfig,
) -> String {
    let mut h = Sha256::new();
    h.update((validation.sample_count() as u64).to_le_bytes());
    h.update((validation.class_count() as u64).to_le_bytes());
    for v in validation.logits() {
        h.update(v.to_bits().to_le_bytes());
    }
    if let Some(labels) = validation.labels() {
        for &y in labels {
            h.update((y as u64).to_le_bytes());
        }
    }
    if let Some(pool) = pool {
        h.update(serde_json::to_vec(pool).expect("pool serialization cannot fail"));
    }
    h.update(serde_json::to_vec(config).expect("config serialization cannot fail"));
    hex::encode(h.finalize())
}
