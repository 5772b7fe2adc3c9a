//! Audio clips and the 45-dimensional per-video-frame feature sequence.
//!
//! One feature frame is produced per video frame. Block `i` is a 25 ms window
//! centered on the timestamp `i / fps`, zero-padded where it overhangs the clip.

use ndarray::{s, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::mfcc::{delta_sequence, MfccExtractor, LOG_FLOOR, N_MFCC};

pub const FEATURE_DIM: usize = 3 * N_MFCC + 3;
pub const DEFAULT_WINDOW_SECONDS: f64 = 0.025;

const ENERGY_IDX: usize = 3 * N_MFCC;
const LOUDNESS_IDX: usize = ENERGY_IDX + 1;
const ZCR_IDX: usize = ENERGY_IDX + 2;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidSampleRate(sample_rate));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Full-scale value of 16-bit PCM: sample `v` is stored as `round(v·32768)`.
pub const PCM16_SCALE: f64 = 32768.0;

pub fn pcm16_code(v: f64) -> i16 {
    (v * PCM16_SCALE)
        .round()
        .clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Snap a sample to the value it will have after a 16-bit PCM round trip.
pub fn quantize_pcm16(v: f64) -> f64 {
    pcm16_code(v) as f64 / PCM16_SCALE
}

/// One packed feature row: `[mfcc | Δ | ΔΔ | energy | loudness | zcr]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    pub mfcc: [f64; N_MFCC],
    pub mfcc_delta: [f64; N_MFCC],
    pub mfcc_delta2: [f64; N_MFCC],
    pub energy: f64,
    pub loudness: f64,
    pub zcr: f64,
}

impl FeatureFrame {
    pub fn pack(&self) -> [f64; FEATURE_DIM] {
        let mut out = [0.0; FEATURE_DIM];
        out[..N_MFCC].copy_from_slice(&self.mfcc);
        out[N_MFCC..2 * N_MFCC].copy_from_slice(&self.mfcc_delta);
        out[2 * N_MFCC..3 * N_MFCC].copy_from_slice(&self.mfcc_delta2);
        out[ENERGY_IDX] = self.energy;
        out[LOUDNESS_IDX] = self.loudness;
        out[ZCR_IDX] = self.zcr;
        out
    }

    pub fn unpack(row: ArrayView1<'_, f64>) -> Result<Self> {
        if row.len() != FEATURE_DIM {
            return Err(Error::DimensionMismatch {
                what: "feature frame",
                expected: FEATURE_DIM,
                got: row.len(),
            });
        }
        let grab = |lo: usize| {
            let mut a = [0.0; N_MFCC];
            for (i, v) in a.iter_mut().enumerate() {
                *v = row[lo + i];
            }
            a
        };
        Ok(FeatureFrame {
            mfcc: grab(0),
            mfcc_delta: grab(N_MFCC),
            mfcc_delta2: grab(2 * N_MFCC),
            energy: row[ENERGY_IDX],
            loudness: row[LOUDNESS_IDX],
            zcr: row[ZCR_IDX],
        })
    }
}

/// `T × 45` feature matrix, one row per video frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    data: Array2<f64>,
    fps: f64,
}

impl FeatureSequence {
    pub fn from_matrix(data: Array2<f64>, fps: f64) -> Result<Self> {
        if data.ncols() != FEATURE_DIM {
            return Err(Error::DimensionMismatch {
                what: "feature sequence width",
                expected: FEATURE_DIM,
                got: data.ncols(),
            });
        }
        if !(fps > 0.0) {
            return Err(Error::InvalidFps(fps));
        }
        Ok(FeatureSequence { data, fps })
    }

    pub fn from_frames(frames: &[FeatureFrame], fps: f64) -> Result<Self> {
        let mut data = Array2::zeros((frames.len(), FEATURE_DIM));
        for (mut row, f) in data.rows_mut().into_iter().zip(frames) {
            row.assign(&ArrayView1::from(&f.pack()));
        }
        Self::from_matrix(data, fps)
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.data
    }

    pub fn frame(&self, i: usize) -> Result<FeatureFrame> {
        if i >= self.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.len(),
            });
        }
        FeatureFrame::unpack(self.data.row(i))
    }

    /// Frames `start..start + len` as a new sequence.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len() {
            return Err(Error::IndexOutOfRange {
                index: start + len,
                len: self.len(),
            });
        }
        Ok(FeatureSequence {
            data: self.data.slice(s![start..start + len, ..]).to_owned(),
            fps: self.fps,
        })
    }
}

fn check_fps(fps: f64) -> Result<()> {
    if fps > 0.0 && fps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidFps(fps))
    }
}

/// Window length in samples. A non-positive `window_seconds` falls back to
/// the hop length.
pub fn window_len(sample_rate: u32, fps: f64, window_seconds: f64) -> usize {
    let seconds = if window_seconds > 0.0 {
        window_seconds
    } else {
        1.0 / fps
    };
    ((seconds * sample_rate as f64).round() as usize).max(2)
}

/// Number of video frames covered by a clip: `floor(duration · fps)`.
pub fn frame_count(n_samples: usize, sample_rate: u32, fps: f64) -> usize {
    (n_samples as f64 * fps / sample_rate as f64 + 1e-9).floor() as usize
}

/// Cut the clip into one block per video frame, each centered on `i / fps`.
pub fn frame_signal(clip: &AudioClip, fps: f64, window_seconds: f64) -> Result<Vec<Vec<f64>>> {
    if clip.samples.is_empty() {
        return Err(Error::EmptyAudio);
    }
    check_fps(fps)?;
    let len = window_len(clip.sample_rate, fps, window_seconds);
    let n = frame_count(clip.samples.len(), clip.sample_rate, fps);
    let samples_per_frame = clip.sample_rate as f64 / fps;
    let half = (len / 2) as isize;
    Ok((0..n)
        .map(|i| {
            let center = (i as f64 * samples_per_frame).round() as isize;
            let start = center - half;
            (0..len as isize)
                .map(|k| {
                    let idx = start + k;
                    if idx >= 0 && (idx as usize) < clip.samples.len() {
                        clip.samples[idx as usize]
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect())
}

/// `(energy, loudness, zcr)` of a raw (unwindowed) block.
///
/// Energy is the mean square, loudness `10·log10(energy + 1e-10)`, and the
/// zero-crossing rate counts consecutive pairs with strictly opposite signs.
pub fn scalar_features(block: &[f64]) -> (f64, f64, f64) {
    if block.is_empty() {
        return (0.0, 10.0 * LOG_FLOOR.log10(), 0.0);
    }
    let energy = block.iter().map(|x| x * x).sum::<f64>() / block.len() as f64;
    let loudness = 10.0 * (energy + LOG_FLOOR).log10();
    let zcr = if block.len() < 2 {
        0.0
    } else {
        let crossings = block.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
        crossings as f64 / (block.len() - 1) as f64
    };
    (energy, loudness, zcr)
}

/// Full feature extraction with the default 25 ms window.
pub fn extract_features(clip: &AudioClip, fps: f64) -> Result<FeatureSequence> {
    extract_features_with_window(clip, fps, DEFAULT_WINDOW_SECONDS)
}

pub fn extract_features_with_window(
    clip: &AudioClip,
    fps: f64,
    window_seconds: f64,
) -> Result<FeatureSequence> {
    let blocks = frame_signal(clip, fps, window_seconds)?;
    let len = window_len(clip.sample_rate, fps, window_seconds);
    let extractor = MfccExtractor::new(len, clip.sample_rate, N_MFCC)?;
    let t_len = blocks.len();
    let mut mfcc = Array2::zeros((t_len, N_MFCC));
    let mut data = Array2::zeros((t_len, FEATURE_DIM));
    for (t, block) in blocks.iter().enumerate() {
        let c = extractor.compute(block)?;
        mfcc.row_mut(t).assign(&ArrayView1::from(&c));
        let (energy, loudness, zcr) = scalar_features(block);
        data[[t, ENERGY_IDX]] = energy;
        data[[t, LOUDNESS_IDX]] = loudness;
        data[[t, ZCR_IDX]] = zcr;
    }
    let d1 = delta_sequence(&mfcc, 1)?;
    let d2 = delta_sequence(&mfcc, 2)?;
    data.slice_mut(s![.., ..N_MFCC]).assign(&mfcc);
    data.slice_mut(s![.., N_MFCC..2 * N_MFCC]).assign(&d1);
    data.slice_mut(s![.., 2 * N_MFCC..3 * N_MFCC]).assign(&d2);
    FeatureSequence::from_matrix(data, fps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_counts() {
        let clip = AudioClip::new(vec![0.1; 16_000], 16_000).unwrap();
        assert_eq!(frame_signal(&clip, 30.0, 0.025).unwrap().len(), 30);
        let half = AudioClip::new(vec![0.1; 8_000], 16_000).unwrap();
        let blocks = frame_signal(&half, 30.0, 0.025).unwrap();
        assert_eq!(blocks.len(), 15);
        assert!(blocks.iter().all(|b| b.len() == 400));
    }

    #[test]
    fn framing_errors() {
        let empty = AudioClip::new(vec![], 16_000).unwrap();
        assert!(matches!(
            frame_signal(&empty, 30.0, 0.025),
            Err(Error::EmptyAudio)
        ));
        let clip = AudioClip::new(vec![0.0; 100], 16_000).unwrap();
        assert!(matches!(
            frame_signal(&clip, 0.0, 0.025),
            Err(Error::InvalidFps(_))
        ));
        assert!(matches!(
            frame_signal(&clip, -3.0, 0.025),
            Err(Error::InvalidFps(_))
        ));
        assert!(AudioClip::new(vec![0.0], 0).is_err());
    }

    #[test]
    fn first_block_is_zero_padded_on_the_left() {
        let clip = AudioClip::new(vec![1.0; 1600], 16_000).unwrap();
        let blocks = frame_signal(&clip, 10.0, 0.025).unwrap();
        assert_eq!(blocks[0][..200], [0.0; 200]);
        assert!(blocks[0][200..].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn non_positive_window_uses_hop() {
        let clip = AudioClip::new(vec![0.0; 16_000], 16_000).unwrap();
        let blocks = frame_signal(&clip, 40.0, 0.0).unwrap();
        assert_eq!(blocks[0].len(), 400);
    }

    #[test]
    fn scalar_feature_examples() {
        let (e, l, z) = scalar_features(&[0.0; 32]);
        assert_eq!((e, z), (0.0, 0.0));
        assert!((l + 100.0).abs() < 1e-12);

        let alt: Vec<f64> = (0..50)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let (e, _, z) = scalar_features(&alt);
        assert_eq!(e, 1.0);
        assert_eq!(z, 1.0);

        let (e, l, z) = scalar_features(&[0.5; 4]);
        assert_eq!(e, 0.25);
        assert!((l - (-6.020_599_913_279_624)).abs() < 1e-6);
        assert_eq!(z, 0.0);
    }

    #[test]
    fn silence_features() {
        let clip = AudioClip::new(vec![0.0; 16_000], 16_000).unwrap();
        let f = extract_features(&clip, 30.0).unwrap();
        assert_eq!(f.matrix().ncols(), FEATURE_DIM);
        for t in 0..f.len() {
            let fr = f.frame(t).unwrap();
            assert!(fr
                .mfcc_delta
                .iter()
                .chain(&fr.mfcc_delta2)
                .all(|&v| v == 0.0));
            assert_eq!(fr.zcr, 0.0);
        }
    }

    #[test]
    fn pack_order() {
        let frame = FeatureFrame {
            mfcc: [1.0; N_MFCC],
            mfcc_delta: [2.0; N_MFCC],
            mfcc_delta2: [3.0; N_MFCC],
            energy: 4.0,
            loudness: 5.0,
            zcr: 0.5,
        };
        let p = frame.pack();
        assert_eq!(p[13], 1.0);
        assert_eq!(p[14], 2.0);
        assert_eq!(p[41], 3.0);
        assert_eq!(&p[42..], &[4.0, 5.0, 0.5]);
        assert_eq!(FeatureFrame::unpack(ArrayView1::from(&p)).unwrap(), frame);
    }
}
