//! Generation and motion losses over parameter sequences.
//!
//! Frame 0 is pinned to the reference, so only frames `1..T` contribute to the
//! generation loss. Norms are unsquared: Euclidean on expression and crop,
//! L1 on pose. The motion loss compares inter-frame crop changes.

use ndarray::{s, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::params::{ParamSequence, Selector, PARAM_DIM};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub gen: f64,
    pub mot: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.gen + self.mot
    }
}

impl std::ops::Add for LossParts {
    type Output = LossParts;
    fn add(self, o: LossParts) -> LossParts {
        LossParts {
            gen: self.gen + o.gen,
            mot: self.mot + o.mot,
        }
    }
}

fn check_lengths(pred: &ParamSequence, truth: &ParamSequence) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(pred.len(), truth.len()));
    }
    Ok(())
}

fn l2(v: ArrayView1<'_, f64>) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn loss_gen(pred: &ParamSequence, truth: &ParamSequence) -> Result<f64> {
    check_lengths(pred, truth)?;
    Ok(loss_and_grad(&pred.to_matrix(), &truth.to_matrix()).0.gen)
}

pub fn loss_mot(pred: &ParamSequence, truth: &ParamSequence) -> Result<f64> {
    check_lengths(pred, truth)?;
    if pred.len() < 2 {
        return Err(Error::SequenceTooShort {
            what: "motion loss",
            min: 2,
            got: pred.len(),
        });
    }
    Ok(loss_and_grad(&pred.to_matrix(), &truth.to_matrix()).0.mot)
}

pub fn loss_total(pred: &ParamSequence, truth: &ParamSequence) -> Result<f64> {
    Ok(loss_gen(pred, truth)? + loss_mot(pred, truth)?)
}

/// Both losses and `∂(gen + mot)/∂pred` for `T × 73` matrices of equal shape.
///
/// The gradient row for frame 0 is zero (pinned frame). Norm gradients at
/// the zero vector use the subgradient 0.
pub(crate) fn loss_and_grad(pred: &Array2<f64>, truth: &Array2<f64>) -> (LossParts, Array2<f64>) {
    let t_len = pred.nrows();
    let diff = pred - truth;
    let mut grad = Array2::zeros((t_len, PARAM_DIM));
    let mut parts = LossParts::default();

    for t in 1..t_len {
        for sel in [Selector::Expression, Selector::Crop] {
            let r = sel.range();
            let e = diff.slice(s![t, r.clone()]);
            let n = l2(e);
            parts.gen += n;
            if n > 0.0 {
                for (k, v) in r.zip(e.iter()) {
                    grad[[t, k]] += v / n;
                }
            }
        }
        for k in Selector::Pose.range() {
            let v = diff[[t, k]];
            parts.gen += v.abs();
            grad[[t, k]] += if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            };
        }
    }

    let crop = Selector::Crop.range();
    for t in 1..t_len {
        // e = Δc − Δĉ = −(diff[t] − diff[t−1]) restricted to crop
        let e: Vec<f64> = crop
            .clone()
            .map(|k| -(diff[[t, k]] - diff[[t - 1, k]]))
            .collect();
        let n = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        parts.mot += n;
        if n > 0.0 {
            for (i, k) in crop.clone().enumerate() {
                grad[[t, k]] -= e[i] / n;
                grad[[t - 1, k]] += e[i] / n;
            }
        }
    }
    grad.row_mut(0).fill(0.0);
    (parts, grad)
}
