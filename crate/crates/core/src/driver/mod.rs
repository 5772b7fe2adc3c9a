//! Sequential audio-to-parameter driver.
//!
//! Input features are batch-normalized (over batch × time), optionally
//! concatenated with a one-hot listener attitude, and fed through a stack of
//! unidirectional LSTM layers with inverted dropout between layers. A linear
//! head maps the top hidden state to a 73-dim residual per frame, which is
//! added to the reference frame's parameters.

mod lstm;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::audio::{FeatureSequence, FEATURE_DIM};
use crate::error::{check_dim, Error, Result};
use crate::params::{apply_residual, HeadParams, ParamSequence, PARAM_DIM};

pub use lstm::dropout_mask;
pub(crate) use lstm::{backward, forward_batch, Batch, ForwardPass};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriverConfig {
    pub input_dim: usize,
    /// One-hot attitude categories appended after normalization; 0 disables.
    pub attitude_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub dropout: f64,
    pub output_dim: usize,
}

impl Default for DriverConfig {
    fn default() -> Self {
        DriverConfig {
            input_dim: FEATURE_DIM,
            attitude_dim: 0,
            hidden_dim: 256,
            num_layers: 4,
            dropout: 0.2,
            output_dim: PARAM_DIM,
        }
    }
}

impl DriverConfig {
    pub fn with_hidden(self, hidden_dim: usize) -> Self {
        Self { hidden_dim, ..self }
    }

    pub fn with_layers(self, num_layers: usize) -> Self {
        Self { num_layers, ..self }
    }

    pub fn with_dropout(self, dropout: f64) -> Self {
        Self { dropout, ..self }
    }

    pub fn with_attitude(self, attitude_dim: usize) -> Self {
        Self {
            attitude_dim,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.num_layers == 0 {
            return bad("num_layers must be >= 1".into());
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        check_dim("driver input_dim", FEATURE_DIM, self.input_dim)?;
        check_dim("driver output_dim", PARAM_DIM, self.output_dim)?;
        Ok(())
    }

    pub(crate) fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim + self.attitude_dim
        } else {
            self.hidden_dim
        }
    }
}

/// Listener attitude as a category index; encoded one-hot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttitudeCondition {
    index: usize,
    categories: usize,
}

impl AttitudeCondition {
    pub fn new(index: usize, categories: usize) -> Result<Self> {
        if index >= categories {
            return Err(Error::IndexOutOfRange {
                index,
                len: categories,
            });
        }
        Ok(AttitudeCondition { index, categories })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.categories];
        v[self.index] = 1.0;
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// Batch statistics and inverted dropout with masks drawn from `dropout_seed`.
    Train { dropout_seed: u64 },
    /// Running statistics, no dropout.
    Infer,
}

/// One LSTM layer; gate blocks are stacked `[input | forget | cell | output]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    /// `4H × in`
    pub w_ih: Array2<f64>,
    /// `4H × H`
    pub w_hh: Array2<f64>,
    /// `4H`
    pub bias: Array1<f64>,
}

impl LstmLayer {
    fn zeros(input: usize, hidden: usize) -> Self {
        LstmLayer {
            w_ih: Array2::zeros((4 * hidden, input)),
            w_hh: Array2::zeros((4 * hidden, hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }
}

/// The trainable tensors of a driver. Also used to hold gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensors {
    pub norm_scale: Array1<f64>,
    pub norm_shift: Array1<f64>,
    pub layers: Vec<LstmLayer>,
    /// `73 × H`
    pub out_w: Array2<f64>,
    pub out_b: Array1<f64>,
}

impl Tensors {
    pub fn zeros(config: &DriverConfig) -> Self {
        Tensors {
            norm_scale: Array1::zeros(config.input_dim),
            norm_shift: Array1::zeros(config.input_dim),
            layers: (0..config.num_layers)
                .map(|l| LstmLayer::zeros(config.layer_input_dim(l), config.hidden_dim))
                .collect(),
            out_w: Array2::zeros((config.output_dim, config.hidden_dim)),
            out_b: Array1::zeros(config.output_dim),
        }
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["norm.scale".to_string(), "norm.shift".to_string()];
        for l in 0..self.layers.len() {
            names.push(format!("lstm.{l}.w_ih"));
            names.push(format!("lstm.{l}.w_hh"));
            names.push(format!("lstm.{l}.bias"));
        }
        names.push("out.weight".into());
        names.push("out.bias".into());
        names
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = vec![vec![self.norm_scale.len()], vec![self.norm_shift.len()]];
        for layer in &self.layers {
            shapes.push(layer.w_ih.shape().to_vec());
            shapes.push(layer.w_hh.shape().to_vec());
            shapes.push(vec![layer.bias.len()]);
        }
        shapes.push(self.out_w.shape().to_vec());
        shapes.push(vec![self.out_b.len()]);
        shapes
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![
            self.norm_scale.as_slice().unwrap(),
            self.norm_shift.as_slice().unwrap(),
        ];
        for layer in &self.layers {
            v.push(layer.w_ih.as_slice().unwrap());
            v.push(layer.w_hh.as_slice().unwrap());
            v.push(layer.bias.as_slice().unwrap());
        }
        v.push(self.out_w.as_slice().unwrap());
        v.push(self.out_b.as_slice().unwrap());
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![
            self.norm_scale.as_slice_mut().unwrap(),
            self.norm_shift.as_slice_mut().unwrap(),
        ];
        for layer in &mut self.layers {
            v.push(layer.w_ih.as_slice_mut().unwrap());
            v.push(layer.w_hh.as_slice_mut().unwrap());
            v.push(layer.bias.as_slice_mut().unwrap());
        }
        v.push(self.out_w.as_slice_mut().unwrap());
        v.push(self.out_b.as_slice_mut().unwrap());
        v
    }

    pub fn num_values(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn scale(&mut self, k: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= k);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriverWeights {
    pub config: DriverConfig,
    pub params: Tensors,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl DriverWeights {
    pub fn all_finite(&self) -> bool {
        self.params.all_finite()
            && self.running_mean.iter().all(|v| v.is_finite())
            && self.running_var.iter().all(|v| v.is_finite())
    }

    /// Blend batch statistics into the running estimates (variance stored unbiased).
    pub fn update_running_stats(&mut self, batch: &NormStats) {
        let n = batch.count as f64;
        let unbias = if batch.count > 1 { n / (n - 1.0) } else { 1.0 };
        for j in 0..self.running_mean.len() {
            self.running_mean[j] =
                (1.0 - BN_MOMENTUM) * self.running_mean[j] + BN_MOMENTUM * batch.mean[j];
            self.running_var[j] =
                (1.0 - BN_MOMENTUM) * self.running_var[j] + BN_MOMENTUM * batch.var[j] * unbias;
        }
    }
}

fn glorot_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

/// Random `n × n` orthogonal matrix (QR of a Gaussian matrix, sign-fixed).
pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    Array2::from_shape_fn((n, n), |(i, j)| {
        let sign = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
        q[(i, j)] * sign
    })
}

pub fn init_weights(config: &DriverConfig, seed: u64) -> Result<DriverWeights> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = config.hidden_dim;
    let mut params = Tensors::zeros(config);
    params.norm_scale.fill(1.0);
    for (l, layer) in params.layers.iter_mut().enumerate() {
        layer.w_ih = glorot_uniform(&mut rng, 4 * h, config.layer_input_dim(l));
        for gate in 0..4 {
            let q = random_orthogonal(&mut rng, h);
            layer
                .w_hh
                .slice_mut(ndarray::s![gate * h..(gate + 1) * h, ..])
                .assign(&q);
        }
        layer.bias.slice_mut(ndarray::s![h..2 * h]).fill(1.0);
    }
    params.out_w = glorot_uniform(&mut rng, config.output_dim, h);
    Ok(DriverWeights {
        config: *config,
        params,
        running_mean: Array1::zeros(config.input_dim),
        running_var: Array1::ones(config.input_dim),
    })
}

/// Per-column mean and biased variance over `count` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
    pub count: usize,
}

impl NormStats {
    pub fn from_rows(x: &Array2<f64>) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::SequenceTooShort {
                what: "batch statistics",
                min: 1,
                got: 0,
            });
        }
        let mean = x.sum_axis(Axis(0)) / n as f64;
        let mut var = Array1::zeros(x.ncols());
        for row in x.rows() {
            for j in 0..row.len() {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        var /= n as f64;
        Ok(NormStats {
            mean,
            var,
            count: n,
        })
    }

    pub fn running(weights: &DriverWeights) -> Self {
        NormStats {
            mean: weights.running_mean.clone(),
            var: weights.running_var.clone(),
            count: 0,
        }
    }

    pub fn inv_std(&self) -> Array1<f64> {
        self.var.mapv(|v| 1.0 / (v + BN_EPS).sqrt())
    }
}

/// `(x − mean) / √(var + ε) · scale + shift`, per column.
pub fn normalize_input(
    x: &Array2<f64>,
    stats: &NormStats,
    scale: &Array1<f64>,
    shift: &Array1<f64>,
) -> Result<Array2<f64>> {
    check_dim("normalization width", stats.mean.len(), x.ncols())?;
    check_dim("normalization scale", stats.mean.len(), scale.len())?;
    check_dim("normalization shift", stats.mean.len(), shift.len())?;
    if stats.var.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument("negative variance".into()));
    }
    let inv_std = stats.inv_std();
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        for j in 0..row.len() {
            row[j] = (row[j] - stats.mean[j]) * inv_std[j] * scale[j] + shift[j];
        }
    }
    Ok(out)
}

fn check_attitude(config: &DriverConfig, attitude: Option<&AttitudeCondition>) -> Result<()> {
    match attitude {
        Some(a) => check_dim("attitude categories", config.attitude_dim, a.categories()),
        None if config.attitude_dim == 0 => Ok(()),
        None => Err(Error::InvalidArgument(
            "model expects an attitude condition".into(),
        )),
    }
}

/// Per-frame residuals (`T × 73`) for one sequence.
pub fn predict_residuals(
    weights: &DriverWeights,
    features: &FeatureSequence,
    mode: Mode,
    attitude: Option<&AttitudeCondition>,
) -> Result<Array2<f64>> {
    check_attitude(&weights.config, attitude)?;
    if features.is_empty() {
        return Err(Error::SequenceTooShort {
            what: "driver input",
            min: 1,
            got: 0,
        });
    }
    let batch = Batch::single(features.matrix(), attitude);
    let pass = forward_batch(weights, &batch, mode)?;
    Ok(pass.residuals_of(0))
}

/// Drive a parameter sequence from audio features.
pub fn forward(
    weights: &DriverWeights,
    features: &FeatureSequence,
    reference: &HeadParams,
    mode: Mode,
    attitude: Option<&AttitudeCondition>,
) -> Result<ParamSequence> {
    let residuals = predict_residuals(weights, features, mode, attitude)?;
    apply_residual(reference, &residuals)
}

/// Snapshot of driver weights as persisted on disk.
///
/// Checkpoint files store `f32`, so constructing a checkpoint rounds every
/// value to `f32` precision; saving and loading is then lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverCheckpoint {
    weights: DriverWeights,
}

fn round_f32(v: &mut f64) {
    *v = *v as f32 as f64;
}

impl DriverCheckpoint {
    pub fn new(mut weights: DriverWeights) -> Self {
        for s in weights.params.slices_mut() {
            s.iter_mut().for_each(round_f32);
        }
        weights.running_mean.iter_mut().for_each(round_f32);
        weights.running_var.iter_mut().for_each(round_f32);
        weights.config.dropout = weights.config.dropout as f32 as f64;
        DriverCheckpoint { weights }
    }

    pub fn weights(&self) -> &DriverWeights {
        &self.weights
    }

    pub fn config(&self) -> &DriverConfig {
        &self.weights.config
    }

    pub fn into_weights(self) -> DriverWeights {
        self.weights
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::FeatureSequence;

    fn tiny() -> DriverConfig {
        DriverConfig::default().with_hidden(6).with_layers(2)
    }

    fn features(t: usize, seed: u64) -> FeatureSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Array2::from_shape_fn((t, FEATURE_DIM), |_| rng.random_range(-1.0..1.0));
        FeatureSequence::from_matrix(m, 30.0).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_seed_dependent() {
        let a = init_weights(&tiny(), 7).unwrap();
        let b = init_weights(&tiny(), 7).unwrap();
        let c = init_weights(&tiny(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn recurrent_blocks_are_orthogonal_and_forget_bias_is_one() {
        let w = init_weights(&DriverConfig::default().with_hidden(16), 3).unwrap();
        for layer in &w.params.layers {
            for gate in 0..4 {
                let q = layer
                    .w_hh
                    .slice(ndarray::s![gate * 16..(gate + 1) * 16, ..]);
                let qtq = q.t().dot(&q);
                for ((i, j), v) in qtq.indexed_iter() {
                    let target = if i == j { 1.0 } else { 0.0 };
                    assert!((v - target).abs() < 1e-5);
                }
            }
            assert!(layer
                .bias
                .slice(ndarray::s![16..32])
                .iter()
                .all(|&b| b == 1.0));
            assert!(layer
                .bias
                .slice(ndarray::s![..16])
                .iter()
                .all(|&b| b == 0.0));
        }
        let bound = (6.0 / (73.0 + 16.0f64)).sqrt();
        assert!(w.params.out_w.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(init_weights(&tiny().with_layers(0), 0).is_err());
        assert!(init_weights(&tiny().with_hidden(0), 0).is_err());
        assert!(init_weights(&tiny().with_dropout(1.0), 0).is_err());
    }

    #[test]
    fn zero_head_reproduces_reference() {
        let mut w = init_weights(&tiny(), 1).unwrap();
        w.params.out_w.fill(0.0);
        let mut reference = HeadParams::identity();
        reference.expression[3] = 0.7;
        let out = forward(&w, &features(9, 2), &reference, Mode::Infer, None).unwrap();
        assert_eq!(out.len(), 9);
        assert!(out.frames().iter().all(|f| *f == reference));
    }

    #[test]
    fn infer_is_deterministic() {
        let w = init_weights(&tiny(), 1).unwrap();
        let f = features(12, 5);
        let r = HeadParams::identity();
        let a = forward(&w, &f, &r, Mode::Infer, None).unwrap();
        let b = forward(&w, &f, &r, Mode::Infer, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reference_shift_shifts_every_frame() {
        let w = init_weights(&tiny(), 4).unwrap();
        let f = features(6, 9);
        let r0 = HeadParams::identity();
        let mut r1 = r0;
        r1.pose[1] += 0.25;
        r1.expression[10] -= 1.5;
        let a = forward(&w, &f, &r0, Mode::Infer, None).unwrap().to_matrix();
        let b = forward(&w, &f, &r1, Mode::Infer, None).unwrap().to_matrix();
        let delta = &b - &a;
        for row in delta.rows() {
            assert!((row[crate::params::POSE_OFFSET + 1] - 0.25).abs() < 1e-12);
            assert!((row[10] + 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn attitude_contract() {
        let cfg = tiny().with_attitude(3);
        let w = init_weights(&cfg, 4).unwrap();
        let f = features(5, 1);
        let r = HeadParams::identity();
        assert!(forward(&w, &f, &r, Mode::Infer, None).is_err());
        let a = AttitudeCondition::new(2, 3).unwrap();
        assert_eq!(a.one_hot(), vec![0.0, 0.0, 1.0]);
        let out0 = forward(
            &w,
            &f,
            &r,
            Mode::Infer,
            Some(&AttitudeCondition::new(0, 3).unwrap()),
        )
        .unwrap();
        let out2 = forward(&w, &f, &r, Mode::Infer, Some(&a)).unwrap();
        assert_ne!(out0, out2);
        assert!(AttitudeCondition::new(3, 3).is_err());
        let wrong = AttitudeCondition::new(0, 4).unwrap();
        assert!(forward(&w, &f, &r, Mode::Infer, Some(&wrong)).is_err());
    }

    #[test]
    fn feature_width_mismatch_is_an_error() {
        let w = init_weights(&tiny(), 0).unwrap();
        assert!(FeatureSequence::from_matrix(Array2::zeros((4, 44)), 30.0).is_err());
        let empty = FeatureSequence::from_matrix(Array2::zeros((0, FEATURE_DIM)), 30.0).unwrap();
        assert!(forward(&w, &empty, &HeadParams::identity(), Mode::Infer, None).is_err());
    }

    #[test]
    fn normalization_examples() {
        let one = Array1::ones(2);
        let zero = Array1::zeros(2);
        // constant column normalizes to the shift
        let x = Array2::from_shape_vec((3, 2), vec![5.0, 1.0, 5.0, 2.0, 5.0, 3.0]).unwrap();
        let stats = NormStats::from_rows(&x).unwrap();
        let shift = Array1::from(vec![0.3, 0.0]);
        let y = normalize_input(&x, &stats, &one, &shift).unwrap();
        assert!(y.column(0).iter().all(|&v| v == 0.3));

        // two sequences of one frame each, stacked: [[1, 2], [3, 6]]
        let batch = Array2::from_shape_vec((2, 2), vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let stats = NormStats::from_rows(&batch).unwrap();
        assert_eq!(stats.mean.to_vec(), vec![2.0, 4.0]);
        assert_eq!(stats.var.to_vec(), vec![1.0, 4.0]);
        let y = normalize_input(&batch, &stats, &one, &zero).unwrap();
        let e0 = 1.0 / (1.0 + BN_EPS).sqrt();
        let e1 = 2.0 / (4.0 + BN_EPS).sqrt();
        assert!((y[[0, 0]] + e0).abs() < 1e-12 && (y[[1, 0]] - e0).abs() < 1e-12);
        assert!((y[[0, 1]] + e1).abs() < 1e-12 && (y[[1, 1]] - e1).abs() < 1e-12);

        // already standardized input passes through up to the ε rescaling
        let std = NormStats {
            mean: zero.clone(),
            var: one.clone(),
            count: 0,
        };
        let y = normalize_input(&batch, &std, &one, &zero).unwrap();
        for (a, b) in y.iter().zip(batch.iter()) {
            assert!((a - b).abs() <= b.abs() * 1e-5);
        }
    }

    #[test]
    fn running_stats_use_momentum() {
        let mut w = init_weights(&tiny(), 0).unwrap();
        let batch = NormStats {
            mean: Array1::from_elem(FEATURE_DIM, 2.0),
            var: Array1::from_elem(FEATURE_DIM, 3.0),
            count: 4,
        };
        w.update_running_stats(&batch);
        assert!((w.running_mean[0] - 0.2).abs() < 1e-12);
        assert!((w.running_var[0] - (0.9 + 0.1 * 4.0)).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_rounds_to_f32() {
        let w = init_weights(&tiny(), 11).unwrap();
        let ck = DriverCheckpoint::new(w.clone());
        for (a, b) in ck.weights().params.slices().iter().zip(w.params.slices()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
        assert_eq!(DriverCheckpoint::new(ck.weights().clone()), ck);
    }
}
