//! NMSE scoring, trial aggregation and analytic complexity counts.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelSet;
use crate::estimators::ParameterVector;
use crate::signal::{Scheme, SystemConfig};
use crate::tensor::CMatrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("shape mismatch: estimate {estimate:?} vs truth {truth:?}")]
    Shape {
        estimate: (usize, usize),
        truth: (usize, usize),
    },
    #[error("reference has zero norm")]
    ZeroReference,
}

/// `‖H − Ĥ‖²_F / ‖H‖²_F`.
pub fn nmse(h_hat: &CMatrix, h: &CMatrix) -> Result<f64, MetricsError> {
    if h_hat.shape() != h.shape() {
        return Err(MetricsError::Shape {
            estimate: h_hat.shape(),
            truth: h.shape(),
        });
    }
    let denom = h.frob_norm_sq();
    if denom == 0.0 {
        return Err(MetricsError::ZeroReference);
    }
    Ok((h - h_hat).frob_norm_sq() / denom)
}

/// NMSE of the stacked parameter vector `[vec(H_UA); vec(H_URᵀ ⋄ H_RA)]`.
pub fn aggregate_vector_nmse(est: &ParameterVector, truth: &ChannelSet) -> Result<f64, MetricsError> {
    let want = ParameterVector::from_channels(truth);
    for (e, t) in [(&est.h_ua, &want.h_ua), (&est.cascaded, &want.cascaded)] {
        if e.shape() != t.shape() {
            return Err(MetricsError::Shape {
                estimate: e.shape(),
                truth: t.shape(),
            });
        }
    }
    let denom = want.h_ua.frob_norm_sq() + want.cascaded.frob_norm_sq();
    if denom == 0.0 {
        return Err(MetricsError::ZeroReference);
    }
    let err = (&want.h_ua - &est.h_ua).frob_norm_sq()
        + (&want.cascaded - &est.cascaded).frob_norm_sq();
    Ok(err / denom)
}

/// One row of the analytic complexity table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Update {
    /// Stage-1 direct path, computed once.
    HUaStage1,
    /// Two-stage `Ĥ_RA(i)`.
    HRaIter,
    /// Two-stage `Ẑ(i)`.
    ZIter,
    /// E-ALS joint `[Ĥ_UA Ĥ_RA](i)`.
    HJointIter,
    /// E-ALS `Ẑ(i)`.
    ZEalsIter,
}

impl Update {
    pub fn per_iteration(self) -> bool {
        !matches!(self, Update::HUaStage1)
    }

    pub fn name(self) -> &'static str {
        match self {
            Update::HUaStage1 => "H_UA_stage1",
            Update::HRaIter => "H_RA_iter",
            Update::ZIter => "Z_iter",
            Update::HJointIter => "H_joint_iter",
            Update::ZEalsIter => "Z_eals_iter",
        }
    }
}

impl fmt::Display for Update {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Analytic operation counts for one method at fixed dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityTally {
    pub rows: Vec<(Update, u64)>,
}

impl ComplexityTally {
    pub fn count(&self, update: Update) -> Option<u64> {
        self.rows.iter().find(|(u, _)| *u == update).map(|&(_, c)| c)
    }

    pub fn one_time(&self) -> u64 {
        self.rows
            .iter()
            .filter(|(u, _)| !u.per_iteration())
            .map(|&(_, c)| c)
            .sum()
    }

    pub fn per_iteration(&self) -> u64 {
        self.rows
            .iter()
            .filter(|(u, _)| u.per_iteration())
            .map(|&(_, c)| c)
            .sum()
    }

    /// One-time costs plus `iterations` times the per-iteration rows.
    pub fn total(&self, iterations: usize) -> u64 {
        self.one_time() + iterations as u64 * self.per_iteration()
    }
}

/// Evaluates the per-update complexity rows for `scheme` at `dims`.
///
/// The exit-time `Ĥ_UR = Ẑ·X†` product is not part of the table.
pub fn complexity_formula(scheme: Scheme, dims: &SystemConfig) -> ComplexityTally {
    let m = dims.antennas as u64;
    let k = dims.users as u64;
    let n = dims.ris_elements as u64;
    let b = dims.blocks as u64;
    let l = dims.pilots_per_block as u64;
    let l_off = dims.off_stage_len as u64;
    let rows = match scheme {
        Scheme::TwoStage => vec![
            (Update::HUaStage1, m * k * l_off),
            (
                Update::HRaIter,
                n.pow(3) + n * n * b * l + n * b * l * (b * l + m + 1),
            ),
            (
                Update::ZIter,
                n.pow(3) + n * n * m * l + n * m * l * (m * l + b + 1),
            ),
        ],
        Scheme::EAls => {
            let nk = n + k;
            vec![
                (
                    Update::HJointIter,
                    nk.pow(3) + nk * nk * b * l + nk * (b * l + m + 1) * b * l,
                ),
                (
                    Update::ZEalsIter,
                    n.pow(3) + n * n * b * m + n * b * m * (b * m + l + 1) + b * m * (k + k * l + l),
                ),
            ]
        }
    };
    ComplexityTally { rows }
}

/// Mergeable sample collector reporting mean and median.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleStats {
    values: Vec<f64>,
}

impl SampleStats {
    pub fn push(&mut self, v: f64) {
        self.values.push(v);
    }

    /// Order-insensitive merge.
    pub fn merge(&mut self, other: &SampleStats) {
        self.values.extend_from_slice(&other.values);
    }

    pub fn count(&self) -> usize {
        self.values.len()
    }

    pub fn mean(&self) -> Option<f64> {
        if self.values.is_empty() {
            return None;
        }
        let mut sorted = self.values.clone();
        // Summing in sorted order makes the mean independent of merge order.
        sorted.sort_by(f64::total_cmp);
        Some(sorted.iter().sum::<f64>() / sorted.len() as f64)
    }

    pub fn median(&self) -> Option<f64> {
        if self.values.is_empty() {
            return None;
        }
        let mut sorted = self.values.clone();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        Some(if sorted.len().is_multiple_of(2) {
            0.5 * (sorted[mid - 1] + sorted[mid])
        } else {
            sorted[mid]
        })
    }
}

impl FromIterator<f64> for SampleStats {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Self {
            values: iter.into_iter().collect(),
        }
    }
}
