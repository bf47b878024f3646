//! Four-way grouping of samples by how a lossy label-invariant
//! transformation moves their prediction and confidence.
//!
//! | prediction \ confidence | increased | not increased |
//! |-------------------------|-----------|---------------|
//! | changed                 | group 1   | group 2       |
//! | unchanged               | group 3   | group 4       |
//!
//! "Increased" is strict: equal confidences land in the right column.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{class_probability, predict, ReliabilityBins};
use crate::table::LogitsTable;

/// Which probability of the transformed row is compared against the
/// original confidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceComparisonMode {
    /// The transformed row's own top probability.
    #[default]
    TransformedMax,
    /// The transformed row's probability of the original prediction.
    OriginalIndex,
}

impl fmt::Display for ConfidenceComparisonMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::TransformedMax => "transformed_max",
            Self::OriginalIndex => "original_index",
        })
    }
}

impl FromStr for ConfidenceComparisonMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transformed_max" => Ok(Self::TransformedMax),
            "original_index" => Ok(Self::OriginalIndex),
            other => Err(Error::contract(format!(
                "unknown comparison mode `{other}` (expected transformed_max or original_index)"
            ))),
        }
    }
}

/// Disjoint, exhaustive split of `0..n` into groups 1 to 4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupPartition {
    groups: [Vec<usize>; 4],
    // 0-based group of every sample
    membership: Vec<u8>,
}

impl GroupPartition {
    /// Builds a partition from 1-based group numbers, one per sample.
    pub fn from_group_numbers(numbers: &[u8]) -> Result<Self> {
        let mut groups: [Vec<usize>; 4] = Default::default();
        let mut membership = Vec::with_capacity(numbers.len());
        for (i, &g) in numbers.iter().enumerate() {
            if !(1..=4).contains(&g) {
                return Err(Error::contract(format!("group number {g} for sample {i}")));
            }
            groups[usize::from(g - 1)].push(i);
            membership.push(g - 1);
        }
        Ok(Self { groups, membership })
    }

    /// Indices of group `k` (1-based).
    pub fn group(&self, k: usize) -> &[usize] {
        &self.groups[k - 1]
    }

    pub fn groups(&self) -> &[Vec<usize>; 4] {
        &self.groups
    }

    pub fn sizes(&self) -> [usize; 4] {
        [0, 1, 2, 3].map(|g| self.groups[g].len())
    }

    /// 1-based group of sample `i`.
    pub fn group_of(&self, i: usize) -> usize {
        usize::from(self.membership[i]) + 1
    }

    pub fn sample_count(&self) -> usize {
        self.membership.len()
    }
}

/// `2 * [y == y_t] + [p >= p_t] + 1`.
pub fn group_number(y_hat: usize, y_hat_t: usize, p_hat: f64, p_hat_t: f64) -> usize {
    2 * usize::from(y_hat == y_hat_t) + usize::from(p_hat >= p_hat_t) + 1
}

/// Prediction and confidence of an original row and its transformed row.
pub(crate) fn compare_rows(
    row: &[f64],
    row_t: &[f64],
    mode: ConfidenceComparisonMode,
) -> (usize, usize, f64, f64) {
    let (y, p) = predict(row);
    let (y_t, p_t_max) = predict(row_t);
    let p_t = match mode {
        ConfidenceComparisonMode::TransformedMax => p_t_max,
        ConfidenceComparisonMode::OriginalIndex => class_probability(row_t, y),
    };
    (y, y_t, p, p_t)
}

/// Groups the samples of `z` by comparing each row with its transformed
/// counterpart in `z_t`.
pub fn group_inputs(
    z: &LogitsTable,
    z_t: &LogitsTable,
    mode: ConfidenceComparisonMode,
) -> Result<GroupPartition> {
    if z.sample_count() != z_t.sample_count() || z.class_count() != z_t.class_count() {
        return Err(Error::contract(format!(
            "cannot group {}x{} logits against {}x{} transformed logits",
            z.sample_count(),
            z.class_count(),
            z_t.sample_count(),
            z_t.class_count()
        )));
    }
    let mut groups: [Vec<usize>; 4] = Default::default();
    let mut membership = Vec::with_capacity(z.sample_count());
    for (i, (row, row_t)) in z.rows().zip(z_t.rows()).enumerate() {
        let (y, y_t, p, p_t) = compare_rows(row, row_t, mode);
        let changed = y != y_t;
        let increased = p_t > p;
        let g = match (changed, increased) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        };
        groups[g].push(i);
        membership.push(g as u8);
    }
    Ok(GroupPartition { groups, membership })
}

/// ECE and size of one group; `ece` is `None` for an empty group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupStat {
    pub ece: Option<f64>,
    pub count: usize,
}

/// For every transformed table, the per-group ECE of the original logits
/// and the group sizes.
pub fn group_ece_table(
    z: &LogitsTable,
    z_t_list: &[LogitsTable],
    bin_count: usize,
    mode: ConfidenceComparisonMode,
) -> Result<Vec<[GroupStat; 4]>> {
    z.require_labels("group ECE table")?;
    z_t_list
        .iter()
        .enumerate()
        .map(|(j, z_t)| {
            z.check_aligned(z_t, &format!("transformed table {j}"))?;
            let partition = group_inputs(z, z_t, mode)?;
            let mut row = [GroupStat {
                ece: None,
                count: 0,
            }; 4];
            for (g, idx) in partition.groups().iter().enumerate() {
                row[g].count = idx.len();
                if !idx.is_empty() {
                    let sub = z.select(idx)?;
                    row[g].ece = Some(ReliabilityBins::from_table(&sub, bin_count)?.ece());
                }
            }
            Ok(row)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ece;

    fn t(rows: &[Vec<f64>]) -> LogitsTable {
        LogitsTable::from_rows(rows, None).unwrap()
    }

    #[test]
    fn identity_transform_is_group_four() {
        let z = t(&[vec![2.0, 0.0], vec![0.0, 1.0], vec![0.3, 0.3]]);
        for mode in [
            ConfidenceComparisonMode::TransformedMax,
            ConfidenceComparisonMode::OriginalIndex,
        ] {
            let p = group_inputs(&z, &z, mode).unwrap();
            assert_eq!(p.sizes(), [0, 0, 0, 3]);
        }
    }

    #[test]
    fn changed_and_less_confident_is_group_two() {
        let p = group_inputs(
            &t(&[vec![2.0, 0.0]]),
            &t(&[vec![0.0, 1.0]]),
            ConfidenceComparisonMode::TransformedMax,
        )
        .unwrap();
        assert_eq!(p.group_of(0), 2);
    }

    #[test]
    fn original_index_mode_reads_original_class() {
        // transformed row predicts class 1 with 0.73; class 0 gets 0.27
        let z = t(&[vec![0.1, 0.0]]);
        let z_t = t(&[vec![0.0, 1.0]]);
        let max = group_inputs(&z, &z_t, ConfidenceComparisonMode::TransformedMax).unwrap();
        let orig = group_inputs(&z, &z_t, ConfidenceComparisonMode::OriginalIndex).unwrap();
        assert_eq!(max.group_of(0), 1);
        assert_eq!(orig.group_of(0), 2);
    }

    #[test]
    fn unchanged_and_more_confident_is_group_three() {
        let p = group_inputs(
            &t(&[vec![0.1, 0.0]]),
            &t(&[vec![3.0, 0.0]]),
            ConfidenceComparisonMode::TransformedMax,
        )
        .unwrap();
        assert_eq!(p.group_of(0), 3);
    }

    #[test]
    fn group_number_cells() {
        assert_eq!(group_number(0, 1, 0.4, 0.6), 1);
        assert_eq!(group_number(0, 1, 0.6, 0.6), 2);
        assert_eq!(group_number(2, 2, 0.4, 0.6), 3);
        assert_eq!(group_number(2, 2, 0.6, 0.6), 4);
    }

    #[test]
    fn shape_mismatch() {
        let a = t(&[vec![1.0, 0.0]]);
        let b = t(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let c = t(&[vec![1.0, 0.0, 0.0]]);
        let mode = ConfidenceComparisonMode::default();
        assert!(matches!(
            group_inputs(&a, &b, mode),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            group_inputs(&a, &c, mode),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn partition_from_numbers() {
        let p = GroupPartition::from_group_numbers(&[4, 1, 1, 3]).unwrap();
        assert_eq!(p.group(1), &[1, 2]);
        assert_eq!(p.sizes(), [2, 0, 1, 1]);
        assert!(GroupPartition::from_group_numbers(&[0]).is_err());
        assert!(GroupPartition::from_group_numbers(&[5]).is_err());
    }

    #[test]
    fn ece_table_identity_row() {
        let z = LogitsTable::from_rows(
            &[vec![2.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.5]],
            Some(vec![0, 0, 0]),
        )
        .unwrap();
        let rows = group_ece_table(
            &z,
            std::slice::from_ref(&z),
            15,
            ConfidenceComparisonMode::default(),
        )
        .unwrap();
        assert_eq!(rows[0][3].count, 3);
        assert_eq!(rows[0][3].ece, Some(ece(&z, 15).unwrap()));
        assert_eq!(
            rows[0][0],
            GroupStat {
                ece: None,
                count: 0
            }
        );
    }

    #[test]
    fn mode_round_trips_through_strings() {
        for m in [
            ConfidenceComparisonMode::TransformedMax,
            ConfidenceComparisonMode::OriginalIndex,
        ] {
            assert_eq!(
                m.to_string().parse::<ConfidenceComparisonMode>().unwrap(),
                m
            );
        }
        assert!("max".parse::<ConfidenceComparisonMode>().is_err());
    }
}
