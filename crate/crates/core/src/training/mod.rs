//! Losses, exact gradients, AdamW, and the clip-sampling training loop.

mod loss;
mod optim;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::FeatureSequence;
use crate::driver::{
    backward, forward_batch, init_weights, AttitudeCondition, Batch, DriverCheckpoint,
    DriverConfig, DriverWeights, Mode, NormStats, Tensors,
};
use crate::error::{Error, Result};
use crate::params::{apply_residual, HeadParams, ParamSequence};

pub use loss::{loss_gen, loss_mot, loss_total, LossParts};
pub use optim::{adamw_step, cosine_lr, AdamWConfig, OptimizerState};

/// One supervised clip: features aligned frame-by-frame with ground truth.
#[derive(Debug, Clone)]
pub struct TrainClip {
    pub features: FeatureSequence,
    pub params: ParamSequence,
    pub attitude: Option<AttitudeCondition>,
}

impl TrainClip {
    pub fn new(
        features: FeatureSequence,
        params: ParamSequence,
        attitude: Option<AttitudeCondition>,
    ) -> Result<Self> {
        if features.len() != params.len() {
            return Err(Error::LengthMismatch(features.len(), params.len()));
        }
        Ok(TrainClip {
            features,
            params,
            attitude,
        })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Frames `start..start + len`; the window's first truth frame is its reference.
    pub fn window(&self, start: usize, len: usize) -> Result<Sample> {
        let truth = self.params.window(start, len)?;
        Ok(Sample {
            features: self.features.window(start, len)?,
            reference: *truth.first(),
            truth,
            attitude: self.attitude,
        })
    }
}

/// A training example as seen by the gradient computation.
#[derive(Debug, Clone)]
pub struct Sample {
    pub features: FeatureSequence,
    pub reference: HeadParams,
    pub truth: ParamSequence,
    pub attitude: Option<AttitudeCondition>,
}

#[derive(Debug, Clone)]
pub struct GradientResult {
    /// Mean over the batch of each loss term.
    pub loss: LossParts,
    pub grads: Tensors,
    /// Normalization statistics the forward pass used.
    pub stats: NormStats,
}

fn stack(samples: &[Sample]) -> Result<Batch> {
    let views: Vec<_> = samples.iter().map(|s| s.features.matrix().view()).collect();
    let attitudes: Vec<_> = samples.iter().map(|s| s.attitude).collect();
    Batch::from_sequences(&views, &attitudes)
}

fn batch_losses(
    weights: &DriverWeights,
    samples: &[Sample],
    mode: Mode,
) -> Result<(crate::driver::ForwardPass, LossParts, Array2<f64>)> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let batch = stack(samples)?;
    let pass = forward_batch(weights, &batch, mode)?;
    let size = samples.len();
    let inv = 1.0 / size as f64;
    let mut total = LossParts::default();
    let mut d_res = Array2::zeros(pass.residuals.dim());
    for (b, s) in samples.iter().enumerate() {
        if s.truth.len() != batch.t_len {
            return Err(Error::LengthMismatch(s.truth.len(), batch.t_len));
        }
        let pred = apply_residual(&s.reference, &pass.residuals_of(b))?.to_matrix();
        let (parts, grad) = loss::loss_and_grad(&pred, &s.truth.to_matrix());
        total = total + parts;
        for t in 1..batch.t_len {
            let mut row = d_res.row_mut(t * size + b);
            row.scaled_add(inv, &grad.row(t));
        }
    }
    let mean = LossParts {
        gen: total.gen * inv,
        mot: total.mot * inv,
    };
    Ok((pass, mean, d_res))
}

/// Mean per-clip losses of a batch without gradients.
pub fn batch_loss(weights: &DriverWeights, samples: &[Sample], mode: Mode) -> Result<LossParts> {
    Ok(batch_losses(weights, samples, mode)?.1)
}

/// Exact reverse-mode gradients of the mean per-clip total loss.
pub fn gradients(
    weights: &DriverWeights,
    samples: &[Sample],
    mode: Mode,
) -> Result<GradientResult> {
    let (pass, loss, d_res) = batch_losses(weights, samples, mode)?;
    let grads = backward(weights, &pass, &d_res)?;
    Ok(GradientResult {
        loss,
        grads,
        stats: pass.stats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub clip_length: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub seed: u64,
    /// Emit a checkpoint every this many steps; 0 disables snapshots.
    pub snapshot_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            clip_length: 90,
            batch_size: 128,
            steps: 2000,
            lr_max: 5e-3,
            lr_min: 1e-4,
            weight_decay: 0.05,
            betas: (0.9, 0.999),
            eps: 1e-8,
            seed: 0,
            snapshot_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.clip_length < 2 {
            return bad("clip_length must be >= 2".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.lr_min > 0.0 && self.lr_max >= self.lr_min) {
            return bad(format!(
                "need lr_max >= lr_min > 0, got {} / {}",
                self.lr_max, self.lr_min
            ));
        }
        Ok(())
    }

    fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.betas.0,
            beta2: self.betas.1,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    /// Learning rate used at `step` (the last step reaches `lr_min`).
    pub fn lr_at(&self, step: usize) -> Result<f64> {
        cosine_lr(step, self.steps.saturating_sub(1), self.lr_max, self.lr_min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: LossParts,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: DriverCheckpoint,
    /// `(steps completed, checkpoint)` in training order.
    pub snapshots: Vec<(usize, DriverCheckpoint)>,
    pub history: Vec<LossRecord>,
}

impl TrainOutcome {
    /// The last `n` snapshots, oldest first.
    pub fn last_snapshots(&self, n: usize) -> Vec<DriverCheckpoint> {
        let skip = self.snapshots.len().saturating_sub(n);
        self.snapshots[skip..]
            .iter()
            .map(|(_, c)| c.clone())
            .collect()
    }
}

/// Train a driver from scratch on random `clip_length` windows.
pub fn train(
    dataset: &[TrainClip],
    driver: &DriverConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let weights = init_weights(driver, config.seed)?;
    train_from(weights, dataset, config)
}

/// Continue training from the given weights.
pub fn train_from(
    mut weights: DriverWeights,
    dataset: &[TrainClip],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let t_len = config.clip_length;
    if let Some(short) = dataset.iter().find(|c| c.len() < t_len) {
        return Err(Error::SequenceTooShort {
            what: "training clip",
            min: t_len,
            got: short.len(),
        });
    }
    let adamw = config.adamw();
    let mut state = OptimizerState::new(&weights.params);
    // The sampling stream is decoupled from the init seed stream.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_c1a5_0000_0001);
    let mut history = Vec::with_capacity(config.steps);
    let mut snapshots = Vec::new();

    for step in 0..config.steps {
        let lr = config.lr_at(step)?;
        let samples = (0..config.batch_size)
            .map(|_| {
                let clip = &dataset[rng.random_range(0..dataset.len())];
                let start = rng.random_range(0..=clip.len() - t_len);
                clip.window(start, t_len)
            })
            .collect::<Result<Vec<_>>>()?;
        let dropout_seed = rng.random::<u64>();
        let result = gradients(&weights, &samples, Mode::Train { dropout_seed })?;
        adamw_step(&mut weights.params, &result.grads, &mut state, lr, &adamw)?;
        weights.update_running_stats(&result.stats);
        if !weights.all_finite() {
            return Err(Error::NumericalBlowup("training step"));
        }
        history.push(LossRecord {
            step,
            lr,
            loss: result.loss,
        });
        if config.snapshot_every > 0 && (step + 1) % config.snapshot_every == 0 {
            snapshots.push((step + 1, DriverCheckpoint::new(weights.clone())));
        }
    }
    Ok(TrainOutcome {
        checkpoint: DriverCheckpoint::new(weights),
        snapshots,
        history,
    })
}

/// Mean of the trailing `window` total losses.
pub fn smoothed_tail(history: &[LossRecord], window: usize) -> f64 {
    let n = window.min(history.len()).max(1);
    let tail = &history[history.len().saturating_sub(n)..];
    tail.iter().map(|r| r.loss.total()).sum::<f64>() / n as f64
}
