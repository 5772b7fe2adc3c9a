//! Evaluation metrics: PSNR, Fréchet distance between Gaussian statistics,
//! and a distance on expression coefficients.
//!
//! Frame-level Fréchet distances here embed frames as 4×4 grayscale
//! thumbnails (16 dims). That is a cheap stand-in for a learned embedding and
//! is labeled as such in every report.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::params::{ParamSequence, Selector};
use crate::renderer::Frame;

/// Eigenvalues below this fraction of the largest are treated as zero.
pub const EIG_CLAMP_REL: f64 = 1e-10;
/// Tolerated negative eigenvalue, relative to `max(1, λmax)`.
pub const PSD_TOL: f64 = 1e-9;
pub const THUMB_SIDE: usize = 4;

/// Mean squared error over two equal-length buffers.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "metric input",
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("empty metric input".into()));
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// PSNR in dB on raw buffers. Identical inputs give `f64::INFINITY`.
pub fn psnr_values(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?, peak))
}

pub fn psnr(a: &Frame, b: &Frame, peak: f64) -> Result<f64> {
    a.same_dims(b)?;
    psnr_values(a.data(), b.data(), peak)
}

/// PSNR of the pooled MSE over paired frame sequences.
pub fn psnr_sequence(a: &[Frame], b: &[Frame], peak: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("empty frame sequence".into()));
    }
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        x.same_dims(y)?;
        total += mse(x.data(), y.data())?;
    }
    Ok(psnr_from_mse(total / a.len() as f64, peak))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: Array1<f64>,
    pub covariance: Array2<f64>,
}

impl GaussianStats {
    pub fn new(mean: Array1<f64>, covariance: Array2<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.dim() != (d, d) {
            return Err(Error::DimensionMismatch {
                what: "covariance",
                expected: d,
                got: covariance.nrows(),
            });
        }
        Ok(GaussianStats { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and unbiased covariance of the rows of `features` (`N × d`).
pub fn gaussian_stats(features: ArrayView2<'_, f64>) -> Result<GaussianStats> {
    let (n, d) = features.dim();
    if n < 2 {
        return Err(Error::SequenceTooShort {
            what: "gaussian statistics",
            min: 2,
            got: n,
        });
    }
    let mut mean = Array1::zeros(d);
    for row in features.rows() {
        mean += &row;
    }
    mean /= n as f64;
    let centered = &features - &mean;
    let mut cov = centered.t().dot(&centered) / (n - 1) as f64;
    for i in 0..d {
        for j in (i + 1)..d {
            let s = 0.5 * (cov[[i, j]] + cov[[j, i]]);
            cov[[i, j]] = s;
            cov[[j, i]] = s;
        }
    }
    GaussianStats::new(mean, cov)
}

fn to_nalgebra(m: &Array2<f64>) -> DMatrix<f64> {
    let (r, c) = m.dim();
    DMatrix::from_fn(r, c, |i, j| 0.5 * (m[[i, j]] + m[[j, i]]))
}

/// Eigenvalues of a symmetric matrix, checked for PSD and clamped.
fn psd_eigen(m: DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let mut eig = m.symmetric_eigen();
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let lmin = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if lmin < -PSD_TOL * lmax.max(1.0) {
        return Err(Error::NotPsd(lmin));
    }
    let floor = EIG_CLAMP_REL * lmax;
    eig.eigenvalues.iter_mut().for_each(|l| {
        if *l < floor {
            *l = 0.0;
        }
    });
    Ok(eig)
}

/// `‖μ₁−μ₂‖² + Tr(Σ₁ + Σ₂ − 2(Σ₁Σ₂)^{1/2})`.
///
/// The trace of the square root is taken from the symmetric form
/// `Σ₁^{1/2} Σ₂ Σ₁^{1/2}`, which has the same eigenvalues as `Σ₁Σ₂`.
pub fn frechet_distance(p: &GaussianStats, q: &GaussianStats) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            what: "gaussian statistics",
            expected: p.dim(),
            got: q.dim(),
        });
    }
    let s1 = to_nalgebra(&p.covariance);
    let s2 = to_nalgebra(&q.covariance);
    psd_eigen(s2.clone())?;
    let e1 = psd_eigen(s1.clone())?;
    let root = &e1.eigenvectors
        * DMatrix::from_diagonal(&e1.eigenvalues.map(f64::sqrt))
        * e1.eigenvectors.transpose();
    let inner = &root * &s2 * &root;
    let inner = (&inner + inner.transpose()) * 0.5;
    let trace_sqrt: f64 = psd_eigen(inner)?.eigenvalues.iter().map(|l| l.sqrt()).sum();

    let mean_term: f64 = p
        .mean
        .iter()
        .zip(q.mean.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let d = mean_term + s1.trace() + s2.trace() - 2.0 * trace_sqrt;
    Ok(d.max(0.0))
}

/// Mean over frames of the Euclidean distance between expression vectors.
pub fn exp_distance(pred: &ParamSequence, truth: &ParamSequence) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(pred.len(), truth.len()));
    }
    let sum: f64 = pred
        .frames()
        .iter()
        .zip(truth.frames())
        .map(|(a, b)| {
            a.expression
                .iter()
                .zip(&b.expression)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    debug_assert_eq!(
        Selector::Expression.range().len(),
        pred.first().expression.len()
    );
    Ok(sum / pred.len() as f64)
}

/// 4×4 grayscale block means of a frame, row-major.
pub fn thumbnail_features(frame: &Frame) -> Result<[f64; THUMB_SIDE * THUMB_SIDE]> {
    let (h, w) = frame.dims();
    if h < THUMB_SIDE || w < THUMB_SIDE {
        return Err(Error::InvalidArgument(format!(
            "frame {h}x{w} smaller than the {THUMB_SIDE}x{THUMB_SIDE} thumbnail"
        )));
    }
    let mut out = [0.0; THUMB_SIDE * THUMB_SIDE];
    for (cell, v) in out.iter_mut().enumerate() {
        let (by, bx) = (cell / THUMB_SIDE, cell % THUMB_SIDE);
        let (y0, y1) = (by * h / THUMB_SIDE, (by + 1) * h / THUMB_SIDE);
        let (x0, x1) = (bx * w / THUMB_SIDE, (bx + 1) * w / THUMB_SIDE);
        let mut acc = 0.0;
        for y in y0..y1 {
            for x in x0..x1 {
                let [r, g, b] = frame.pixel(y, x);
                acc += (r + g + b) / 3.0;
            }
        }
        *v = acc / ((y1 - y0) * (x1 - x0)) as f64;
    }
    Ok(out)
}

pub fn frame_stats(frames: &[Frame]) -> Result<GaussianStats> {
    let n = THUMB_SIDE * THUMB_SIDE;
    let mut m = Array2::zeros((frames.len(), n));
    for (i, f) in frames.iter().enumerate() {
        for (k, v) in thumbnail_features(f)?.iter().enumerate() {
            m[[i, k]] = *v;
        }
    }
    gaussian_stats(m.view())
}

/// Flat evaluation summary; absent fields were not requested.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub psnr: Option<f64>,
    pub frechet: Option<f64>,
    pub expfd: Option<f64>,
}

const KEYS: [&str; 4] = [
    "psnr_db",
    "psnr_infinite",
    "frechet_thumb16",
    "expfd_beta_proxy",
];

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_infinite() => "inf".into(),
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

impl MetricsReport {
    fn values(&self) -> [String; 4] {
        [
            fmt_opt(self.psnr),
            self.psnr
                .map(|p| p.is_infinite().to_string())
                .unwrap_or_default(),
            fmt_opt(self.frechet),
            fmt_opt(self.expfd),
        ]
    }

    /// `key=value` lines, one per metric that was computed.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(self.values()) {
            if !v.is_empty() {
                let _ = writeln!(out, "{k}={v}");
            }
        }
        out
    }

    pub fn csv_header() -> String {
        format!("label,{}", KEYS.join(","))
    }

    pub fn to_csv_row(&self, label: &str) -> String {
        format!("{label},{}", self.values().join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::HeadParams;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stats_1d(mean: f64, var: f64) -> GaussianStats {
        GaussianStats::new(array![mean], array![[var]]).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = Frame::filled(4, 4, [0.3; 3]).unwrap();
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);

        let x: Vec<f64> = (0..48).map(|i| (i * 5 % 200) as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v + 16.0).collect();
        let db = psnr_values(&x, &y, 255.0).unwrap();
        assert!((db - 10.0 * (255.0f64 * 255.0 / 256.0).log10()).abs() < 1e-12);
        assert!((db - 24.05).abs() < 0.01);
        assert_eq!(db, psnr_values(&y, &x, 255.0).unwrap());

        let b = Frame::filled(4, 5, [0.3; 3]).unwrap();
        assert!(psnr(&a, &b, 1.0).is_err());
    }

    #[test]
    fn stats_examples() {
        let s = gaussian_stats(array![[0.0], [2.0]].view()).unwrap();
        assert_eq!(s.mean[0], 1.0);
        assert_eq!(s.covariance[[0, 0]], 2.0);
        let same = gaussian_stats(array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]].view()).unwrap();
        assert!(same.covariance.iter().all(|&v| v == 0.0));
        assert!(gaussian_stats(array![[1.0, 2.0]].view()).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Array2::from_shape_fn((20, 5), |_| rng.random::<f64>());
        let s = gaussian_stats(m.view()).unwrap();
        assert_eq!(s.covariance, s.covariance.t());
    }

    #[test]
    fn frechet_closed_forms() {
        assert!(
            (frechet_distance(&stats_1d(0.0, 1.0), &stats_1d(1.0, 4.0)).unwrap() - 2.0).abs()
                < 1e-10
        );
        let s = stats_1d(0.3, 0.7);
        assert!(frechet_distance(&s, &s).unwrap().abs() < 1e-8);

        let zero = GaussianStats::new(array![1.0, 2.0], Array2::zeros((2, 2))).unwrap();
        let other = GaussianStats::new(array![0.0, 0.0], Array2::zeros((2, 2))).unwrap();
        assert!((frechet_distance(&zero, &other).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn frechet_errors() {
        let a = stats_1d(0.0, 1.0);
        let b = GaussianStats::new(array![0.0, 0.0], Array2::eye(2)).unwrap();
        assert!(frechet_distance(&a, &b).is_err());
        let neg = GaussianStats::new(array![0.0, 0.0], array![[1.0, 0.0], [0.0, -0.5]]).unwrap();
        assert!(matches!(frechet_distance(&b, &neg), Err(Error::NotPsd(_))));
    }

    #[test]
    fn exp_distance_examples() {
        let truth = ParamSequence::new(vec![HeadParams::identity()]).unwrap();
        let mut p = HeadParams::identity();
        p.expression.iter_mut().for_each(|b| *b += 0.1);
        let pred = ParamSequence::new(vec![p]).unwrap();
        assert!((exp_distance(&pred, &truth).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(exp_distance(&truth, &truth).unwrap(), 0.0);

        let mut p3 = HeadParams::identity();
        p3.expression.iter_mut().for_each(|b| *b += 0.3);
        let pred3 = ParamSequence::new(vec![p3]).unwrap();
        assert!((exp_distance(&pred3, &truth).unwrap() - 3.0 * 0.8).abs() < 1e-12);

        let two = ParamSequence::new(vec![HeadParams::identity(); 2]).unwrap();
        assert!(exp_distance(&two, &truth).is_err());
    }

    #[test]
    fn thumbnail_of_constant_frame() {
        let f = Frame::filled(9, 10, [0.2, 0.4, 0.6]).unwrap();
        assert!(thumbnail_features(&f)
            .unwrap()
            .iter()
            .all(|v| (v - 0.4).abs() < 1e-15));
        assert!(thumbnail_features(&Frame::filled(3, 8, [0.0; 3]).unwrap()).is_err());
    }

    #[test]
    fn report_formats() {
        let r = MetricsReport {
            psnr: Some(f64::INFINITY),
            frechet: None,
            expfd: Some(0.0),
        };
        assert_eq!(
            r.to_key_values(),
            "psnr_db=inf\npsnr_infinite=true\nexpfd_beta_proxy=0\n"
        );
        assert_eq!(r.to_csv_row("a"), "a,inf,true,,0");
        assert_eq!(MetricsReport::csv_header().split(',').count(), 5);
    }

    proptest! {
        #[test]
        fn frechet_symmetric(seed in 0u64..1000, d in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut make = || {
                let m = Array2::from_shape_fn((d + 3, d), |_| rng.random::<f64>() * 2.0 - 1.0);
                gaussian_stats(m.view()).unwrap()
            };
            let (p, q) = (make(), make());
            let a = frechet_distance(&p, &q).unwrap();
            let b = frechet_distance(&q, &p).unwrap();
            prop_assert!((a - b).abs() < 1e-8, "{} vs {}", a, b);
            prop_assert!(a >= 0.0);
        }
    }
}
