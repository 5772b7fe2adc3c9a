//! Output-space ensembles of trained drivers.
//!
//! Members each predict residuals for the same input; the per-element mean is
//! added to the reference once. Self-ensembles use the last snapshots of one
//! run, cross ensembles combine independently trained runs.

use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;

use crate::audio::FeatureSequence;
use crate::driver::{predict_residuals, AttitudeCondition, DriverCheckpoint, Mode};
use crate::error::{Error, Result};
use crate::params::{apply_residual, HeadParams, ParamSequence};

/// Default member count for a self-ensemble.
pub const SELF_ENSEMBLE_SIZE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleKind {
    SelfEnsemble,
    Cross,
}

impl EnsembleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnsembleKind::SelfEnsemble => "self",
            EnsembleKind::Cross => "cross",
        }
    }
}

impl FromStr for EnsembleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self" => Ok(EnsembleKind::SelfEnsemble),
            "cross" => Ok(EnsembleKind::Cross),
            other => Err(Error::InvalidArgument(format!(
                "unknown ensemble kind {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    members: Vec<DriverCheckpoint>,
    kind: EnsembleKind,
}

impl EnsembleSpec {
    pub fn new(members: Vec<DriverCheckpoint>, kind: EnsembleKind) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::InvalidArgument("ensemble needs at least one member".into()))?
            .config();
        for m in &members[1..] {
            let c = m.config();
            if c.input_dim != first.input_dim
                || c.attitude_dim != first.attitude_dim
                || c.output_dim != first.output_dim
            {
                return Err(Error::InvalidArgument(format!(
                    "incompatible ensemble member: dims ({}, {}, {}) vs ({}, {}, {})",
                    c.input_dim,
                    c.attitude_dim,
                    c.output_dim,
                    first.input_dim,
                    first.attitude_dim,
                    first.output_dim
                )));
            }
        }
        Ok(EnsembleSpec { members, kind })
    }

    pub fn single(member: DriverCheckpoint) -> Self {
        EnsembleSpec {
            members: vec![member],
            kind: EnsembleKind::Cross,
        }
    }

    pub fn members(&self) -> &[DriverCheckpoint] {
        &self.members
    }

    pub fn kind(&self) -> EnsembleKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Elementwise mean that is exact for identical inputs, cancels `±r`
/// exactly and does not depend on input order.
fn ordered_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let lo = values[0];
    let spread: f64 = values.iter().map(|v| v - lo).sum();
    lo + spread / values.len() as f64
}

/// Mean of the member residual matrices (all `T × 73`).
pub fn mean_residuals(residuals: &[Array2<f64>]) -> Result<Array2<f64>> {
    let first = residuals
        .first()
        .ok_or_else(|| Error::InvalidArgument("no residuals to average".into()))?;
    if let Some(bad) = residuals.iter().find(|r| r.dim() != first.dim()) {
        return Err(Error::InvalidArgument(format!(
            "residual shapes differ: {:?} vs {:?}",
            bad.dim(),
            first.dim()
        )));
    }
    let mut buf = vec![0.0; residuals.len()];
    Ok(Array2::from_shape_fn(first.dim(), |ix| {
        for (b, r) in buf.iter_mut().zip(residuals) {
            *b = r[ix];
        }
        ordered_mean(&mut buf)
    }))
}

pub fn member_residuals(
    spec: &EnsembleSpec,
    features: &FeatureSequence,
    attitude: Option<&AttitudeCondition>,
) -> Result<Vec<Array2<f64>>> {
    spec.members
        .par_iter()
        .map(|m| predict_residuals(m.weights(), features, Mode::Infer, attitude))
        .collect()
}

pub fn ensemble_predict(
    spec: &EnsembleSpec,
    features: &FeatureSequence,
    reference: &HeadParams,
    attitude: Option<&AttitudeCondition>,
) -> Result<ParamSequence> {
    let residuals = member_residuals(spec, features, attitude)?;
    apply_residual(reference, &mean_residuals(&residuals)?)
}

/// Indices of the `k` smallest losses, ascending; ties go to the earlier index.
pub fn top_k_indices(losses: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > losses.len() {
        return Err(Error::InvalidArgument(format!(
            "k must be in 1..={}, got {k}",
            losses.len()
        )));
    }
    if losses.iter().any(|l| l.is_nan()) {
        return Err(Error::InvalidArgument("validation loss is NaN".into()));
    }
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]));
    order.truncate(k);
    Ok(order)
}

/// Cross ensemble of the `k` candidates with the smallest validation loss.
pub fn select_top_k(candidates: &[(DriverCheckpoint, f64)], k: usize) -> Result<EnsembleSpec> {
    let losses: Vec<f64> = candidates.iter().map(|(_, l)| *l).collect();
    let members = top_k_indices(&losses, k)?
        .into_iter()
        .map(|i| candidates[i].0.clone())
        .collect();
    EnsembleSpec::new(members, EnsembleKind::Cross)
}
