//! Foreground-background fusion for generated frames over a static background.
//!
//! Per frame: segment background, take the per-pixel median over the last
//! five masks (fewer at start-up), intersect with the reference image's
//! background mask (soft intersection = min), smooth the seam with a 7×7
//! Gaussian, and composite reference background over the generated frame.

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::renderer::Frame;

pub const MEDIAN_WINDOW: usize = 5;
pub const BLUR_SIZE: usize = 7;
pub const BLUR_SIGMA: f64 = 1.5;

/// Soft background mask, 1 = background.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Mask {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::DimensionMismatch {
                what: "mask buffer",
                expected: height * width,
                got: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "mask value {v} outside [0, 1]"
            )));
        }
        Ok(Mask {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, v: f64) -> Result<Self> {
        Self::new(height, width, vec![v; height * width])
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    fn check_same(&self, dims: (usize, usize)) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::InvalidArgument(format!(
                "mask dimensions {:?} do not match {:?}",
                self.dims(),
                dims
            )));
        }
        Ok(())
    }
}

/// Produces a background mask for a frame.
pub trait Segmenter: Sync {
    fn segment(&self, frame: &Frame) -> Result<Mask>;
}

/// Background wherever every channel is within `tol` of a known color.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdSegmenter {
    pub background: [f64; 3],
    pub tol: f64,
}

impl ThresholdSegmenter {
    pub fn new(background: [f64; 3], tol: f64) -> Result<Self> {
        if !(tol >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be >= 0, got {tol}"
            )));
        }
        Ok(ThresholdSegmenter { background, tol })
    }
}

impl Segmenter for ThresholdSegmenter {
    fn segment(&self, frame: &Frame) -> Result<Mask> {
        let values = frame
            .data()
            .chunks_exact(3)
            .map(|px| {
                let dist = px
                    .iter()
                    .zip(&self.background)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                if dist <= self.tol {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Mask::new(frame.height(), frame.width(), values)
    }
}

pub fn threshold_segment(frame: &Frame, background: [f64; 3], tol: f64) -> Result<Mask> {
    ThresholdSegmenter::new(background, tol)?.segment(frame)
}

/// Per-pixel median over the given masks (lower median for even counts).
pub fn temporal_median(history: &[&Mask]) -> Result<Mask> {
    let first = history
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty mask history".into()))?;
    for m in history {
        m.check_same(first.dims())?;
    }
    let n = history.len();
    let mut buf = vec![0.0; n];
    let values = (0..first.values.len())
        .map(|i| {
            for (b, m) in buf.iter_mut().zip(history) {
                *b = m.values[i];
            }
            buf.sort_by(f64::total_cmp);
            buf[(n - 1) / 2]
        })
        .collect();
    Mask::new(first.height, first.width, values)
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

fn blur_axis(src: &[f64], h: usize, w: usize, taps: &[f64], horizontal: bool) -> Vec<f64> {
    let half = (taps.len() / 2) as isize;
    let norm: f64 = taps.iter().sum();
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let off = k as isize - half;
                let (yy, xx) = if horizontal {
                    (y, (x as isize + off).clamp(0, w as isize - 1) as usize)
                } else {
                    ((y as isize + off).clamp(0, h as isize - 1) as usize, x)
                };
                acc += t * src[yy * w + xx];
            }
            // dividing by the same tap sum keeps constant regions exactly constant
            out[y * w + x] = (acc / norm).clamp(0.0, 1.0);
        }
    }
    out
}

/// Separable Gaussian blur with border-replicated padding.
pub fn gaussian_blur(mask: &Mask, size: usize, sigma: f64) -> Result<Mask> {
    let taps = gaussian_kernel(size, sigma);
    let (h, w) = mask.dims();
    let tmp = blur_axis(&mask.values, h, w, &taps, true);
    Mask::new(h, w, blur_axis(&tmp, h, w, &taps, false))
}

/// Intersection of the stabilized and reference masks, smoothed.
pub fn fusion_mask(med: &Mask, ref_mask: &Mask) -> Result<Mask> {
    med.check_same(ref_mask.dims())?;
    let values = med
        .values
        .iter()
        .zip(&ref_mask.values)
        .map(|(a, b)| a.min(*b))
        .collect();
    let intersection = Mask::new(med.height, med.width, values)?;
    gaussian_blur(&intersection, BLUR_SIZE, BLUR_SIGMA)
}

/// `(1 − m)·generated + m·reference`, per pixel.
pub fn composite(generated: &Frame, reference: &Frame, fmask: &Mask) -> Result<Frame> {
    generated.same_dims(reference)?;
    fmask.check_same(generated.dims())?;
    let data = generated
        .data()
        .chunks_exact(3)
        .zip(reference.data().chunks_exact(3))
        .zip(&fmask.values)
        .flat_map(|((g, r), &m)| {
            let mut px = [0.0; 3];
            for c in 0..3 {
                let v = (1.0 - m) * g[c] + m * r[c];
                px[c] = v.clamp(g[c].min(r[c]), g[c].max(r[c]));
            }
            px
        })
        .collect();
    Frame::new(generated.height(), generated.width(), data)
}

/// Causal streaming fusion against a fixed reference frame.
#[derive(Debug, Clone)]
pub struct FusionStream {
    reference: Frame,
    ref_mask: Mask,
    history: VecDeque<Mask>,
}

impl FusionStream {
    pub fn new(reference: Frame, ref_mask: Mask) -> Result<Self> {
        ref_mask.check_same(reference.dims())?;
        Ok(FusionStream {
            reference,
            ref_mask,
            history: VecDeque::with_capacity(MEDIAN_WINDOW),
        })
    }

    pub fn with_segmenter(reference: Frame, segmenter: &dyn Segmenter) -> Result<Self> {
        let ref_mask = segmenter.segment(&reference)?;
        Self::new(reference, ref_mask)
    }

    /// Record the current frame's mask and return the fusion mask for it.
    pub fn push_mask(&mut self, mask: Mask) -> Result<Mask> {
        mask.check_same(self.reference.dims())?;
        if self.history.len() == MEDIAN_WINDOW {
            self.history.pop_front();
        }
        self.history.push_back(mask);
        let window: Vec<&Mask> = self.history.iter().collect();
        let med = temporal_median(&window)?;
        fusion_mask(&med, &self.ref_mask)
    }

    pub fn push(&mut self, generated: &Frame, mask: Mask) -> Result<Frame> {
        generated.same_dims(&self.reference)?;
        let fmask = self.push_mask(mask)?;
        composite(generated, &self.reference, &fmask)
    }
}

/// Fuse a whole sequence; segmentation runs in parallel, the median stage in order.
pub fn fuse_sequence(
    generated: &[Frame],
    reference: &Frame,
    segmenter: &dyn Segmenter,
) -> Result<Vec<Frame>> {
    if generated.is_empty() {
        return Err(Error::InvalidArgument("no frames to fuse".into()));
    }
    let masks = generated
        .par_iter()
        .map(|f| segmenter.segment(f))
        .collect::<Result<Vec<_>>>()?;
    fuse_with_masks(generated, reference, masks, segmenter.segment(reference)?)
}

/// Fuse with precomputed masks (one per generated frame, plus the reference's).
pub fn fuse_with_masks(
    generated: &[Frame],
    reference: &Frame,
    masks: Vec<Mask>,
    ref_mask: Mask,
) -> Result<Vec<Frame>> {
    if masks.len() != generated.len() {
        return Err(Error::LengthMismatch(masks.len(), generated.len()));
    }
    let mut stream = FusionStream::new(reference.clone(), ref_mask)?;
    let fmasks = masks
        .into_iter()
        .map(|m| stream.push_mask(m))
        .collect::<Result<Vec<_>>>()?;
    generated
        .par_iter()
        .zip(fmasks.par_iter())
        .map(|(g, m)| composite(g, reference, m))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_from(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Mask {
        let v = (0..h)
            .flat_map(|y| (0..w).map(move |x| (y, x)))
            .map(|(y, x)| f(y, x))
            .collect();
        Mask::new(h, w, v).unwrap()
    }

    #[test]
    fn threshold_examples() {
        let bg = [0.2, 0.4, 0.6];
        let f = Frame::filled(3, 4, bg).unwrap();
        assert!(threshold_segment(&f, bg, 0.0)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 1.0));

        let mut data = f.data().to_vec();
        data[5] += 0.01;
        let f2 = Frame::new(3, 4, data).unwrap();
        let m = threshold_segment(&f2, bg, 0.0).unwrap();
        assert_eq!(m.at(0, 1), 0.0);
        assert_eq!(m.values().iter().filter(|&&v| v == 1.0).count(), 11);

        let gray = Frame::filled(2, 2, [0.5; 3]).unwrap();
        assert!(threshold_segment(&gray, [0.5; 3], 0.1)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 1.0));
        assert!(ThresholdSegmenter::new(bg, -0.1).is_err());
    }

    #[test]
    fn median_examples() {
        let pix = |v: f64| Mask::filled(1, 1, v).unwrap();
        let hist = [pix(1.0), pix(1.0), pix(0.0), pix(1.0), pix(0.0)];
        let refs: Vec<&Mask> = hist.iter().collect();
        assert_eq!(temporal_median(&refs).unwrap().at(0, 0), 1.0);
        // even window takes the lower median
        let even = [pix(1.0), pix(0.0), pix(1.0), pix(0.0)];
        let refs: Vec<&Mask> = even.iter().collect();
        assert_eq!(temporal_median(&refs).unwrap().at(0, 0), 0.0);

        let m = mask_from(3, 3, |y, x| ((x + y) % 2) as f64);
        assert_eq!(temporal_median(&[&m]).unwrap(), m);
        assert_eq!(temporal_median(&[&m, &m, &m, &m, &m]).unwrap(), m);
        assert!(temporal_median(&[]).is_err());
    }

    #[test]
    fn kernel_sums_to_one() {
        let k = gaussian_kernel(BLUR_SIZE, BLUR_SIGMA);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let (sum2d, _) = k
            .iter()
            .flat_map(|a| k.iter().map(move |b| a * b))
            .fold((0.0, ()), |(s, _), v| (s + v, ()));
        assert!((sum2d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fusion_mask_examples() {
        let ones = Mask::filled(9, 9, 1.0).unwrap();
        let zeros = Mask::filled(9, 9, 0.0).unwrap();
        assert_eq!(fusion_mask(&ones, &ones).unwrap(), ones);
        assert_eq!(fusion_mask(&zeros, &ones).unwrap(), zeros);
        assert_eq!(fusion_mask(&ones, &zeros).unwrap(), zeros);

        let spot = mask_from(15, 15, |y, x| if (y, x) == (7, 7) { 1.0 } else { 0.0 });
        let blurred = fusion_mask(&spot, &Mask::filled(15, 15, 1.0).unwrap()).unwrap();
        let k = gaussian_kernel(BLUR_SIZE, BLUR_SIGMA);
        assert!((blurred.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((blurred.at(7, 7) - k[3] * k[3]).abs() < 1e-15);
        assert!((blurred.at(7, 9) - k[3] * k[5]).abs() < 1e-15);
        assert_eq!(blurred.at(7, 11), 0.0);

        assert!(fusion_mask(&ones, &Mask::filled(9, 8, 1.0).unwrap()).is_err());
    }

    #[test]
    fn composite_examples() {
        let g = Frame::filled(2, 3, [100.0 / 255.0; 3]).unwrap();
        let r = Frame::filled(2, 3, [200.0 / 255.0; 3]).unwrap();
        assert_eq!(
            composite(&g, &r, &Mask::filled(2, 3, 0.0).unwrap()).unwrap(),
            g
        );
        assert_eq!(
            composite(&g, &r, &Mask::filled(2, 3, 1.0).unwrap()).unwrap(),
            r
        );
        let half = composite(&g, &r, &Mask::filled(2, 3, 0.5).unwrap()).unwrap();
        assert!(half
            .data()
            .iter()
            .all(|v| (v - 150.0 / 255.0).abs() < 1e-12));
        assert!(composite(&g, &r, &Mask::filled(3, 2, 0.5).unwrap()).is_err());
    }

    #[test]
    fn fuse_sequence_edge_cases() {
        let reference =
            Frame::from_fn(10, 10, |y, x| [(x as f64) / 9.0, (y as f64) / 9.0, 0.5]).unwrap();
        let seg = ThresholdSegmenter::new([0.0, 0.0, 0.5], 2.0).unwrap();
        let same = vec![reference.clone(); 4];
        for f in fuse_sequence(&same, &reference, &seg).unwrap() {
            assert_eq!(f, reference);
        }
        struct Nothing;
        impl Segmenter for Nothing {
            fn segment(&self, frame: &Frame) -> Result<Mask> {
                Mask::filled(frame.height(), frame.width(), 0.0)
            }
        }
        let gen: Vec<Frame> = (0..3)
            .map(|i| Frame::filled(10, 10, [0.1 * i as f64, 0.2, 0.3]).unwrap())
            .collect();
        assert_eq!(fuse_sequence(&gen, &reference, &Nothing).unwrap(), gen);
        assert!(fuse_sequence(&[], &reference, &Nothing).is_err());
    }

    #[test]
    fn stream_is_causal() {
        let reference = Frame::filled(6, 6, [0.2, 0.2, 0.2]).unwrap();
        let seg = ThresholdSegmenter::new([0.2; 3], 0.05).unwrap();
        let gen: Vec<Frame> = (0..7)
            .map(|i| {
                Frame::from_fn(6, 6, |y, x| {
                    if (x + y + i) % 3 == 0 {
                        [0.9; 3]
                    } else {
                        [0.2; 3]
                    }
                })
                .unwrap()
            })
            .collect();
        let full = fuse_sequence(&gen, &reference, &seg).unwrap();
        let prefix = fuse_sequence(&gen[..4], &reference, &seg).unwrap();
        assert_eq!(&full[..4], &prefix[..]);
    }

    proptest! {
        #[test]
        fn composite_bounded(m in 0.0f64..=1.0, a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let g = Frame::filled(1, 1, [a; 3]).unwrap();
            let r = Frame::filled(1, 1, [b; 3]).unwrap();
            let out = composite(&g, &r, &Mask::filled(1, 1, m).unwrap()).unwrap();
            prop_assert!(out.data()[0] >= a.min(b) && out.data()[0] <= a.max(b));
        }

        #[test]
        fn median_permutation_invariant(vals in proptest::collection::vec(0.0f64..=1.0, 1..=5), rot in 0usize..5) {
            let masks: Vec<Mask> = vals.iter().map(|&v| Mask::filled(1, 1, v).unwrap()).collect();
            let refs: Vec<&Mask> = masks.iter().collect();
            let mut rotated = refs.clone();
            let k = rot % rotated.len();
            rotated.rotate_left(k);
            prop_assert_eq!(temporal_median(&refs).unwrap(), temporal_median(&rotated).unwrap());
        }
    }
}
