//! 3DMM head parameters: expression β (64), pose p (6), crop c (3).
//!
//! Packed order is `[β | p | c]`. Pose is three rotation components (radians)
//! followed by three translations; crop is `(x, y, scale)` where `x, y` are
//! offsets in the renderer's normalized `[-1, 1]` image coordinates.

use ndarray::{s, Array2, ArrayView1};

use crate::error::{check_dim, Error, Result};

pub const EXPRESSION_DIM: usize = 64;
pub const POSE_DIM: usize = 6;
pub const CROP_DIM: usize = 3;
pub const PARAM_DIM: usize = EXPRESSION_DIM + POSE_DIM + CROP_DIM;

pub const POSE_OFFSET: usize = EXPRESSION_DIM;
pub const CROP_OFFSET: usize = EXPRESSION_DIM + POSE_DIM;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadParams {
    pub expression: [f64; EXPRESSION_DIM],
    pub pose: [f64; POSE_DIM],
    pub crop: [f64; CROP_DIM],
}

impl Default for HeadParams {
    fn default() -> Self {
        Self::identity()
    }
}

impl HeadParams {
    pub fn zeros() -> Self {
        HeadParams {
            expression: [0.0; EXPRESSION_DIM],
            pose: [0.0; POSE_DIM],
            crop: [0.0; CROP_DIM],
        }
    }

    /// Neutral parameters: no expression, no motion, unit crop scale.
    pub fn identity() -> Self {
        let mut p = Self::zeros();
        p.crop[2] = 1.0;
        p
    }

    pub fn pack(&self) -> [f64; PARAM_DIM] {
        let mut v = [0.0; PARAM_DIM];
        v[..POSE_OFFSET].copy_from_slice(&self.expression);
        v[POSE_OFFSET..CROP_OFFSET].copy_from_slice(&self.pose);
        v[CROP_OFFSET..].copy_from_slice(&self.crop);
        v
    }

    pub fn unpack(v: &[f64]) -> Result<Self> {
        check_dim("head parameter vector", PARAM_DIM, v.len())?;
        let mut p = Self::zeros();
        p.expression.copy_from_slice(&v[..POSE_OFFSET]);
        p.pose.copy_from_slice(&v[POSE_OFFSET..CROP_OFFSET]);
        p.crop.copy_from_slice(&v[CROP_OFFSET..]);
        Ok(p)
    }

    pub fn crop_scale(&self) -> f64 {
        self.crop[2]
    }

    /// In-plane rotation used by the toy renderer.
    pub fn roll(&self) -> f64 {
        self.pose[0]
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.pack();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite head parameter".into()));
        }
        if !(self.crop_scale() > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "crop scale must be positive, got {}",
                self.crop_scale()
            )));
        }
        Ok(())
    }

    fn add_packed(&self, delta: ArrayView1<'_, f64>) -> Self {
        let mut v = self.pack();
        for (a, d) in v.iter_mut().zip(delta.iter()) {
            *a += d;
        }
        // length checked by callers
        Self::unpack(&v).expect("packed length")
    }
}

/// Which component block of the parameter vector to look at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector {
    Expression,
    Pose,
    Crop,
}

impl Selector {
    pub fn range(self) -> std::ops::Range<usize> {
        match self {
            Selector::Expression => 0..POSE_OFFSET,
            Selector::Pose => POSE_OFFSET..CROP_OFFSET,
            Selector::Crop => CROP_OFFSET..PARAM_DIM,
        }
    }
}

/// Non-empty sequence of per-frame head parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSequence {
    frames: Vec<HeadParams>,
}

impl ParamSequence {
    pub fn new(frames: Vec<HeadParams>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::SequenceTooShort {
                what: "parameter sequence",
                min: 1,
                got: 0,
            });
        }
        Ok(ParamSequence { frames })
    }

    pub fn from_matrix(m: &Array2<f64>) -> Result<Self> {
        check_dim("parameter matrix width", PARAM_DIM, m.ncols())?;
        let frames = m
            .rows()
            .into_iter()
            .map(|r| HeadParams::unpack(&r.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(frames)
    }

    pub fn to_matrix(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.len(), PARAM_DIM));
        for (mut row, f) in m.rows_mut().into_iter().zip(&self.frames) {
            row.assign(&ArrayView1::from(&f.pack()));
        }
        m
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[HeadParams] {
        &self.frames
    }

    pub fn first(&self) -> &HeadParams {
        &self.frames[0]
    }

    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len() {
            return Err(Error::IndexOutOfRange {
                index: start + len,
                len: self.len(),
            });
        }
        Self::new(self.frames[start..start + len].to_vec())
    }
}

/// Frame `t` is `reference + residuals[t]`; frame 0 is pinned to the reference.
pub fn apply_residual(reference: &HeadParams, residuals: &Array2<f64>) -> Result<ParamSequence> {
    check_dim("residual width", PARAM_DIM, residuals.ncols())?;
    if residuals.nrows() == 0 {
        return Err(Error::SequenceTooShort {
            what: "residuals",
            min: 1,
            got: 0,
        });
    }
    let frames = residuals
        .rows()
        .into_iter()
        .enumerate()
        .map(|(t, r)| {
            if t == 0 {
                *reference
            } else {
                reference.add_packed(r)
            }
        })
        .collect();
    ParamSequence::new(frames)
}

/// Inter-frame changes of the selected block: row `t − 1` is `x[t] − x[t − 1]`.
pub fn motion_delta(seq: &ParamSequence, selector: Selector) -> Result<Array2<f64>> {
    if seq.len() < 2 {
        return Err(Error::SequenceTooShort {
            what: "motion delta",
            min: 2,
            got: seq.len(),
        });
    }
    let m = seq.to_matrix();
    let block = m.slice(s![.., selector.range()]);
    let n = seq.len();
    Ok(&block.slice(s![1..n, ..]) - &block.slice(s![0..n - 1, ..]))
}
