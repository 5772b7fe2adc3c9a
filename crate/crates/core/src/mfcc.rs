//! Mel-frequency cepstral coefficients and regression deltas.
//!
//! Pipeline per block: Hann window, zero-padded FFT (next power of two), power
//! spectrum, triangular mel filterbank (unnormalized, 0 Hz to Nyquist), natural
//! log floored at [`LOG_FLOOR`], orthonormal DCT-II.

use std::sync::Arc;

use ndarray::Array2;
use rustfft::{num_complex::Complex, Fft, FftPlanner};

use crate::error::{Error, Result};

pub const N_MEL_FILTERS: usize = 26;
pub const N_MFCC: usize = 14;
pub const LOG_FLOOR: f64 = 1e-10;
/// Half-width of the regression window used by [`delta_sequence`].
pub const DELTA_WINDOW: usize = 2;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters over the one-sided power spectrum (`fft_size / 2 + 1` bins).
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `n_filters` rows of `n_bins` weights.
    weights: Array2<f64>,
    /// Filter edge frequencies in Hz, `n_filters + 2` points.
    edges: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_filters: usize, fft_size: usize, sample_rate: u32) -> Self {
        let nyquist = sample_rate as f64 / 2.0;
        let mel_max = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_filters + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (n_filters + 1) as f64))
            .collect();
        let n_bins = fft_size / 2 + 1;
        let bin_hz = sample_rate as f64 / fft_size as f64;
        let mut weights = Array2::zeros((n_filters, n_bins));
        for m in 0..n_filters {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = if f > lo && f <= center {
                    (f - lo) / (center - lo)
                } else if f > center && f < hi {
                    (hi - f) / (hi - center)
                } else {
                    0.0
                };
                weights[[m, k]] = w;
            }
        }
        MelFilterbank { weights, edges }
    }

    pub fn n_filters(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    /// Filter edge frequencies (Hz); filter `m` spans `edges[m]..edges[m + 2]`.
    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.weights
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(power).map(|(w, p)| w * p).sum())
            .collect()
    }
}

/// Orthonormal DCT-II matrix, `n × n`, row `k` is basis function `k`.
pub fn dct_matrix(n: usize) -> Array2<f64> {
    let mut d = Array2::zeros((n, n));
    let nf = n as f64;
    for k in 0..n {
        let scale = if k == 0 {
            (1.0 / nf).sqrt()
        } else {
            (2.0 / nf).sqrt()
        };
        for m in 0..n {
            d[[k, m]] =
                scale * (std::f64::consts::PI * k as f64 * (2 * m + 1) as f64 / (2.0 * nf)).cos();
        }
    }
    d
}

/// Symmetric Hann window of length `len`.
pub fn hann_window(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = (len - 1) as f64;
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / denom).cos())
        .collect()
}

/// Reusable MFCC extractor for a fixed block length and sample rate.
pub struct MfccExtractor {
    block_len: usize,
    n_coeffs: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    fft_size: usize,
    filterbank: MelFilterbank,
    dct: Array2<f64>,
}

impl std::fmt::Debug for MfccExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MfccExtractor")
            .field("block_len", &self.block_len)
            .field("fft_size", &self.fft_size)
            .field("n_coeffs", &self.n_coeffs)
            .finish()
    }
}

impl MfccExtractor {
    pub fn new(block_len: usize, sample_rate: u32, n_coeffs: usize) -> Result<Self> {
        if block_len < 2 {
            return Err(Error::BlockTooShort {
                len: block_len,
                min: 2,
            });
        }
        if sample_rate == 0 {
            return Err(Error::InvalidSampleRate(sample_rate));
        }
        if n_coeffs == 0 || n_coeffs > N_MEL_FILTERS {
            return Err(Error::InvalidArgument(format!(
                "n_coeffs must be in 1..={N_MEL_FILTERS}, got {n_coeffs}"
            )));
        }
        let fft_size = block_len.next_power_of_two();
        let fft = FftPlanner::new().plan_fft_forward(fft_size);
        Ok(MfccExtractor {
            block_len,
            n_coeffs,
            window: hann_window(block_len),
            fft,
            fft_size,
            filterbank: MelFilterbank::new(N_MEL_FILTERS, fft_size, sample_rate),
            dct: dct_matrix(N_MEL_FILTERS),
        })
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    /// Log mel energies of one block (before the DCT).
    pub fn log_mel(&self, block: &[f64]) -> Result<Vec<f64>> {
        if block.len() != self.block_len {
            return Err(Error::DimensionMismatch {
                what: "mfcc block length",
                expected: self.block_len,
                got: block.len(),
            });
        }
        let mut buf: Vec<Complex<f64>> = block
            .iter()
            .zip(&self.window)
            .map(|(s, w)| Complex::new(s * w, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(self.fft_size)
            .collect();
        self.fft.process(&mut buf);
        let power: Vec<f64> = buf[..self.filterbank.n_bins()]
            .iter()
            .map(|c| c.norm_sqr())
            .collect();
        Ok(self
            .filterbank
            .apply(&power)
            .into_iter()
            .map(|e| e.max(LOG_FLOOR).ln())
            .collect())
    }

    pub fn compute(&self, block: &[f64]) -> Result<Vec<f64>> {
        let log_mel = self.log_mel(block)?;
        Ok(self
            .dct
            .rows()
            .into_iter()
            .take(self.n_coeffs)
            .map(|row| row.iter().zip(&log_mel).map(|(d, x)| d * x).sum())
            .collect())
    }
}

/// First `n_coeffs` MFCCs of a single block.
pub fn mfcc_frame(block: &[f64], sample_rate: u32, n_coeffs: usize) -> Result<Vec<f64>> {
    MfccExtractor::new(block.len(), sample_rate, n_coeffs)?.compute(block)
}

/// Regression deltas along the time axis (rows) with edge replication.
///
/// Order 1 is `Σₙ n·(x[t+n] − x[t−n]) / (2·Σₙ n²)` for `n = 1..=2`; order 2 is
/// the delta of the order-1 result.
pub fn delta_sequence(coeffs: &Array2<f64>, order: u32) -> Result<Array2<f64>> {
    match order {
        1 => Ok(regression_delta(coeffs)),
        2 => Ok(regression_delta(&regression_delta(coeffs))),
        _ => Err(Error::InvalidArgument(format!(
            "delta order must be 1 or 2, got {order}"
        ))),
    }
}

fn regression_delta(x: &Array2<f64>) -> Array2<f64> {
    let (t_len, k_len) = x.dim();
    let mut out = Array2::zeros((t_len, k_len));
    if t_len == 0 {
        return out;
    }
    let last = t_len as isize - 1;
    let at = |t: isize| t.clamp(0, last) as usize;
    let denom: f64 = 2.0 * (1..=DELTA_WINDOW).map(|n| (n * n) as f64).sum::<f64>();
    for t in 0..t_len as isize {
        for k in 0..k_len {
            let mut acc = 0.0;
            for n in 1..=DELTA_WINDOW as isize {
                acc += n as f64 * (x[[at(t + n), k]] - x[[at(t - n), k]]);
            }
            out[[t as usize, k]] = acc / denom;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dct_is_orthonormal() {
        let d = dct_matrix(N_MEL_FILTERS);
        let prod = d.dot(&d.t());
        let mut worst: f64 = 0.0;
        for ((i, j), v) in prod.indexed_iter() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((v - target).abs());
        }
        assert!(worst < 1e-10, "max deviation {worst}");
    }

    #[test]
    fn zero_block_gives_constant_log_floor_cepstrum() {
        let c = mfcc_frame(&[0.0; 400], 16_000, N_MFCC).unwrap();
        let expected_c0 = (N_MEL_FILTERS as f64).sqrt() * LOG_FLOOR.ln();
        assert!((c[0] - expected_c0).abs() < 1e-9);
        for v in &c[1..] {
            assert!(v.abs() < 1e-9, "AC coefficient {v}");
        }
    }

    #[test]
    fn too_short_block_is_rejected() {
        assert!(matches!(
            mfcc_frame(&[0.5], 16_000, 14),
            Err(Error::BlockTooShort { .. })
        ));
        assert!(mfcc_frame(&[0.0; 64], 16_000, 27).is_err());
    }

    #[test]
    fn interior_bins_partition_unity() {
        let fb = MelFilterbank::new(N_MEL_FILTERS, 512, 16_000);
        let w = fb.weights();
        assert!(w.iter().all(|&v| v >= 0.0));
        let first_center = fb.edges()[1];
        let last_center = fb.edges()[N_MEL_FILTERS];
        let bin_hz = 16_000.0 / 512.0;
        let mut checked = 0;
        for k in 0..fb.n_bins() {
            let f = k as f64 * bin_hz;
            if f >= first_center && f <= last_center {
                let s: f64 = w.column(k).sum();
                assert!((0.99..=1.01).contains(&s), "bin {k} sums to {s}");
                checked += 1;
            }
        }
        assert!(checked > 200);
    }

    #[test]
    fn delta_of_constant_is_zero() {
        let x = Array2::from_elem((7, 3), 4.2);
        assert!(delta_sequence(&x, 1).unwrap().iter().all(|&v| v == 0.0));
        assert!(delta_sequence(&x, 2).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn delta_of_ramp_is_one_in_interior() {
        let x = Array2::from_shape_fn((10, 2), |(t, _)| t as f64);
        let d1 = delta_sequence(&x, 1).unwrap();
        for t in 2..8 {
            assert!((d1[[t, 0]] - 1.0).abs() < 1e-12);
        }
        let d2 = delta_sequence(&x, 2).unwrap();
        for t in 4..6 {
            assert!(d2[[t, 1]].abs() < 1e-12);
        }
    }

    #[test]
    fn single_frame_delta_is_zero_and_bad_order_errors() {
        let x = Array2::from_elem((1, 4), 3.0);
        assert!(delta_sequence(&x, 1).unwrap().iter().all(|&v| v == 0.0));
        assert!(delta_sequence(&x, 3).is_err());
    }
}
