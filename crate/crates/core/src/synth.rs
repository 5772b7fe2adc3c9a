//! Procedural paired data: audio, ground-truth head parameters, and frames.
//!
//! Audio is a few enveloped tones plus noise. Ground-truth parameters are
//! `base + M·φ(lp(x)) + bob`, where `x` are the extracted audio features,
//! `lp` is a causal exponential low-pass, `φ` standardizes each feature
//! (optionally followed by `tanh`), `M` is a seeded 73×45 matrix and `bob` a
//! small sinusoidal drift on the crop translation. Frames composite a warped
//! head sprite over a static textured background.

use std::f64::consts::TAU;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::audio::{extract_features, quantize_pcm16, AudioClip, FeatureSequence, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::params::{HeadParams, ParamSequence, CROP_OFFSET, PARAM_DIM, POSE_OFFSET};
use crate::renderer::{affine_grid, pixel_coord, sample_border, Frame};
use crate::training::TrainClip;

/// Mean background color; the texture stays within ±`BACKGROUND_TEXTURE`.
pub const BACKGROUND_COLOR: [f64; 3] = [0.2, 0.2, 0.2];
pub const BACKGROUND_TEXTURE: f64 = 0.05;

const EXPRESSION_SCALE: f64 = 0.1;
const POSE_SCALE: f64 = 0.02;
const CROP_SCALE: f64 = 0.01;
const CALIBRATION_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_clips: usize,
    pub clip_seconds: f64,
    pub fps: f64,
    pub sample_rate: u32,
    pub image_size: usize,
    /// Weight of the newest frame in the low-pass, in (0, 1].
    pub smoothing: f64,
    pub bob_amplitude: f64,
    pub noise_level: f64,
    pub nonlinear: bool,
    /// Rank of the feature-to-parameter map; `FEATURE_DIM` or more means full rank.
    pub mapping_rank: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_clips: 32,
            clip_seconds: 6.0,
            fps: 30.0,
            sample_rate: 16_000,
            image_size: 64,
            smoothing: 0.5,
            bob_amplitude: 0.002,
            noise_level: 0.005,
            nonlinear: false,
            mapping_rank: 4,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_clips == 0 {
            return bad("n_clips must be positive");
        }
        if !(self.clip_seconds > 0.0) {
            return bad("clip_seconds must be positive");
        }
        if !(self.fps > 0.0) || !self.fps.is_finite() {
            return Err(Error::InvalidFps(self.fps));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidSampleRate(0));
        }
        if self.image_size < 8 {
            return bad("image_size must be at least 8");
        }
        if !(self.smoothing > 0.0 && self.smoothing <= 1.0) {
            return bad("smoothing must be in (0, 1]");
        }
        if self.mapping_rank == 0 {
            return bad("mapping_rank must be positive");
        }
        if !(self.bob_amplitude >= 0.0) || !(self.noise_level >= 0.0) {
            return bad("bob amplitude and noise level must be >= 0");
        }
        Ok(())
    }
}

/// Everything needed to regenerate a dataset, derived from one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub config: SynthConfig,
    /// `PARAM_DIM × FEATURE_DIM`.
    pub mapping: Array2<f64>,
    pub feature_offset: Array1<f64>,
    pub feature_inv_scale: Array1<f64>,
    pub background: Frame,
    /// Full-canvas RGBA layer holding the centered head, interleaved.
    pub sprite: Vec<f64>,
}

/// Per-clip sinusoidal drift on crop x and y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bob {
    pub amplitude: f64,
    /// Cycles per second for x and y.
    pub freq: [f64; 2],
    pub phase: [f64; 2],
}

impl Bob {
    pub fn at(&self, t: f64) -> [f64; 2] {
        [
            self.amplitude * (TAU * self.freq[0] * t + self.phase[0]).sin(),
            self.amplitude * (TAU * self.freq[1] * t + self.phase[1]).sin(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    pub audio: AudioClip,
    pub features: FeatureSequence,
    pub params: ParamSequence,
    pub base: HeadParams,
    pub bob: Bob,
    /// Empty unless frames were requested.
    pub frames: Vec<Frame>,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn tone_audio(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Result<AudioClip> {
    let sr = cfg.sample_rate as f64;
    let n = (cfg.clip_seconds * sr).round() as usize;
    let nyquist = sr / 2.0;
    let n_tones = rng.random_range(2..=4);
    let tones: Vec<[f64; 5]> = (0..n_tones)
        .map(|_| {
            [
                rng.random_range(120.0..(0.3 * nyquist).max(240.0)),
                rng.random_range(0.05..0.2),
                rng.random_range(0.3..3.0),
                rng.random_range(0.0..TAU),
                rng.random_range(0.0..TAU),
            ]
        })
        .collect();
    let noise = Normal::new(0.0, cfg.noise_level.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let mut v = 0.0;
            for &[f, amp, env_f, env_ph, ph] in &tones {
                let env = 0.5 + 0.5 * (TAU * env_f * t + env_ph).sin();
                v += amp * env * env * (TAU * f * t + ph).sin();
            }
            let v = v + if cfg.noise_level > 0.0 {
                noise.sample(rng)
            } else {
                0.0
            };
            // WAV storage is 16-bit; keep the in-memory clip identical to it
            quantize_pcm16(v)
        })
        .collect();
    AudioClip::new(samples, cfg.sample_rate)
}

/// Causal exponential smoothing along time, starting at the first row.
pub fn low_pass(x: &Array2<f64>, smoothing: f64) -> Array2<f64> {
    let mut out = x.clone();
    for t in 1..x.nrows() {
        for k in 0..x.ncols() {
            out[[t, k]] = smoothing * x[[t, k]] + (1.0 - smoothing) * out[[t - 1, k]];
        }
    }
    out
}

fn make_background(rng: &mut ChaCha8Rng, size: usize) -> Result<Frame> {
    let waves: Vec<[f64; 4]> = (0..4)
        .map(|_| {
            [
                rng.random_range(0.2..1.2),
                rng.random_range(0.2..1.2),
                rng.random_range(0.0..TAU),
                rng.random_range(-1.0..1.0),
            ]
        })
        .collect();
    Frame::from_fn(size, size, |y, x| {
        let mut rgb = [0.0; 3];
        for (c, v) in rgb.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, &[fx, fy, ph, w]) in waves.iter().enumerate() {
                acc += w * (fx * x as f64 + fy * y as f64 + ph + (c + i) as f64).sin();
            }
            *v = BACKGROUND_COLOR[c] + BACKGROUND_TEXTURE * (acc / 4.0).clamp(-1.0, 1.0);
        }
        rgb
    })
}

/// A round face with two eyes and a mouth, centered, alpha 0 elsewhere.
fn make_sprite(size: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(size * size * 4);
    for y in 0..size {
        for x in 0..size {
            let gx = crate::renderer::normalize_coord(x, size);
            let gy = crate::renderer::normalize_coord(y, size);
            let r2 = gx * gx + gy * gy;
            let eye = ((gx.abs() - 0.18).powi(2) + (gy + 0.12).powi(2)) < 0.07f64.powi(2);
            let mouth = gx.abs() < 0.18 && (gy - 0.2).abs() < 0.04;
            let px = if r2 > 0.45f64.powi(2) {
                [0.0; 4]
            } else if eye || mouth {
                [0.45, 0.3, 0.3, 1.0]
            } else {
                [0.85, 0.7, 0.6, 1.0]
            };
            out.extend_from_slice(&px);
        }
    }
    out
}

impl SynthSpec {
    pub fn new(seed: u64) -> Result<Self> {
        Self::with_config(seed, SynthConfig::default())
    }

    pub fn with_config(seed: u64, config: SynthConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, 0);
        let rank = config.mapping_rank.min(FEATURE_DIM);
        let mut gauss = |r: usize, c: usize| {
            Array2::from_shape_simple_fn((r, c), || StandardNormal.sample(&mut rng))
        };
        let (left, right): (Array2<f64>, Array2<f64>) =
            (gauss(PARAM_DIM, rank), gauss(rank, FEATURE_DIM));
        let norm = ((rank * FEATURE_DIM) as f64).sqrt();
        let mut mapping = left.dot(&right);
        for (j, mut row) in mapping.rows_mut().into_iter().enumerate() {
            let group = if j < POSE_OFFSET {
                EXPRESSION_SCALE
            } else if j < CROP_OFFSET {
                POSE_SCALE
            } else {
                CROP_SCALE
            };
            row *= group / norm;
        }
        let background = make_background(&mut rng, config.image_size)?;

        // Standardize features with statistics from a dedicated clip.
        let mut cal_rng = rng_for(seed, CALIBRATION_STREAM);
        let cal = extract_features(&tone_audio(&mut cal_rng, &config)?, config.fps)?;
        let lp = low_pass(cal.matrix(), config.smoothing);
        let feature_offset = lp.mean_axis(Axis(0)).expect("non-empty calibration");
        let feature_inv_scale = lp.std_axis(Axis(0), 0.0).mapv(|s| 1.0 / s.max(1e-6));

        Ok(SynthSpec {
            seed,
            sprite: make_sprite(config.image_size),
            config,
            mapping,
            feature_offset,
            feature_inv_scale,
            background,
        })
    }

    /// Noise-free residual part `M·φ(lp(x))`, one row per frame.
    pub fn drive(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        crate::error::check_dim("synth features", FEATURE_DIM, features.ncols())?;
        let mut z = low_pass(features, self.config.smoothing);
        z -= &self.feature_offset;
        z *= &self.feature_inv_scale;
        if self.config.nonlinear {
            z.mapv_inplace(f64::tanh);
        }
        Ok(z.dot(&self.mapping.t()))
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.config.n_clips {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.config.n_clips,
            });
        }
        Ok(())
    }

    /// Audio, features and parameters of clip `index` (no frames).
    pub fn gen_clip_data(&self, index: usize) -> Result<SynthClip> {
        self.check_index(index)?;
        let mut rng = rng_for(self.seed, index as u64 + 1);
        let audio = tone_audio(&mut rng, &self.config)?;
        let features = extract_features(&audio, self.config.fps)?;

        let mut base = HeadParams::identity();
        let normal = |rng: &mut ChaCha8Rng, s: f64| -> f64 {
            let z: f64 = StandardNormal.sample(rng);
            s * z
        };
        base.expression
            .iter_mut()
            .for_each(|b| *b = normal(&mut rng, 0.05));
        base.pose
            .iter_mut()
            .for_each(|p| *p = normal(&mut rng, 0.02));
        base.crop[0] = normal(&mut rng, 0.02);
        base.crop[1] = normal(&mut rng, 0.02);
        base.crop[2] = 1.0 + normal(&mut rng, 0.02);
        let bob = Bob {
            amplitude: self.config.bob_amplitude,
            freq: [rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)],
            phase: [rng.random_range(0.0..TAU), rng.random_range(0.0..TAU)],
        };

        let drive = self.drive(features.matrix())?;
        let base_row = base.pack();
        let frames = (0..features.len())
            .map(|t| {
                let mut row: Vec<f64> = base_row
                    .iter()
                    .zip(drive.row(t))
                    .map(|(b, d)| b + d)
                    .collect();
                let [bx, by] = bob.at(t as f64 / self.config.fps);
                row[CROP_OFFSET] += bx;
                row[CROP_OFFSET + 1] += by;
                HeadParams::unpack(&row)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SynthClip {
            audio,
            features,
            params: ParamSequence::new(frames)?,
            base,
            bob,
            frames: Vec::new(),
        })
    }

    pub fn gen_clip(&self, index: usize) -> Result<SynthClip> {
        let mut clip = self.gen_clip_data(index)?;
        clip.frames = clip
            .params
            .frames()
            .par_iter()
            .map(|p| self.render_frame(p))
            .collect::<Result<_>>()?;
        Ok(clip)
    }

    /// The head sprite warped by `params` over the static background.
    pub fn render_frame(&self, params: &HeadParams) -> Result<Frame> {
        let n = self.config.image_size;
        let grid = affine_grid(params, n, n)?;
        let bg = self.background.data();
        let mut data = vec![0.0; n * n * 3];
        let mut px = [0.0; 4];
        for (i, out) in data.chunks_exact_mut(3).enumerate() {
            let [gx, gy] = grid.coords()[i];
            sample_border(
                &self.sprite,
                n,
                n,
                4,
                pixel_coord(gx, n),
                pixel_coord(gy, n),
                &mut px,
            );
            let a = px[3];
            for c in 0..3 {
                out[c] = (1.0 - a) * bg[i * 3 + c] + a * px[c];
            }
        }
        Frame::new(n, n, data)
    }

    /// All clips as training data, generated in parallel.
    pub fn train_clips(&self) -> Result<Vec<TrainClip>> {
        (0..self.config.n_clips)
            .into_par_iter()
            .map(|i| {
                let c = self.gen_clip_data(i)?;
                TrainClip::new(c.features, c.params, None)
            })
            .collect()
    }
}
