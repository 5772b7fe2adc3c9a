//! Frames, sampling grids, and a toy warp renderer.
//!
//! Normalized coordinates are align-corners style: `(-1, -1)` is the center of
//! the top-left pixel and `(1, 1)` the center of the bottom-right pixel. Grids
//! are inverse maps: each output pixel names the source location it reads.
//! Sampling is bilinear with border padding, so anything outside the image
//! takes the value of the nearest edge pixel.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::params::HeadParams;

/// `H × W × 3` image with channel values in `[0, 1]`, stored row-major, interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Frame {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("frame must be at least 1x1".into()));
        }
        if data.len() != height * width * 3 {
            return Err(Error::DimensionMismatch {
                what: "frame buffer",
                expected: height * width * 3,
                got: data.len(),
            });
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Frame {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn same_dims(&self, other: &Frame) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::InvalidArgument(format!(
                "frame dimensions differ: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }
}

/// Normalized coordinate of pixel index `i` along an axis of length `n`.
pub fn normalize_coord(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (n - 1) as f64
    }
}

/// Pixel coordinate of normalized `g` along an axis of length `n`.
pub fn pixel_coord(g: f64, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        (g + 1.0) * 0.5 * (n - 1) as f64
    }
}

/// Per-output-pixel source coordinates `(x, y)` in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    height: usize,
    width: usize,
    coords: Vec<[f64; 2]>,
}

impl SampleGrid {
    pub fn new(height: usize, width: usize, coords: Vec<[f64; 2]>) -> Result<Self> {
        if coords.len() != height * width {
            return Err(Error::DimensionMismatch {
                what: "sample grid",
                expected: height * width,
                got: coords.len(),
            });
        }
        if coords.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("non-finite grid coordinate".into()));
        }
        Ok(SampleGrid {
            height,
            width,
            coords,
        })
    }

    pub fn identity(height: usize, width: usize) -> Self {
        let coords = (0..height)
            .flat_map(|y| {
                (0..width).map(move |x| [normalize_coord(x, width), normalize_coord(y, height)])
            })
            .collect();
        SampleGrid {
            height,
            width,
            coords,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn at(&self, y: usize, x: usize) -> [f64; 2] {
        self.coords[y * self.width + x]
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }
}

/// Inverse warp for translation by `crop.xy`, uniform scale by `crop.scale`
/// and in-plane rotation by `pose[0]`, all about the image center.
pub fn affine_grid(params: &HeadParams, height: usize, width: usize) -> Result<SampleGrid> {
    let scale = params.crop_scale();
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "crop scale must be positive, got {scale}"
        )));
    }
    let (tx, ty) = (params.crop[0], params.crop[1]);
    let (sin, cos) = params.roll().sin_cos();
    let coords = (0..height)
        .flat_map(|y| {
            (0..width).map(move |x| {
                let px = (normalize_coord(x, width) - tx) / scale;
                let py = (normalize_coord(y, height) - ty) / scale;
                [cos * px + sin * py, -sin * px + cos * py]
            })
        })
        .collect();
    SampleGrid::new(height, width, coords)
}

// Sub-nanopixel offsets are round-off from the normalize/denormalize trip.
const SNAP: f64 = 1e-9;

fn clamp_axis(p: f64, n: usize) -> (usize, usize, f64) {
    let max = (n - 1) as f64;
    let mut p = p.clamp(0.0, max);
    let r = p.round();
    if (p - r).abs() < SNAP {
        p = r;
    }
    let i0 = p.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, p - i0 as f64)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Bilinear sample of an interleaved `height × width × channels` plane at
/// pixel coordinates `(px, py)` with border replication.
pub fn sample_border(
    data: &[f64],
    height: usize,
    width: usize,
    channels: usize,
    px: f64,
    py: f64,
    out: &mut [f64],
) {
    let (x0, x1, fx) = clamp_axis(px, width);
    let (y0, y1, fy) = clamp_axis(py, height);
    let at = |y: usize, x: usize, c: usize| data[(y * width + x) * channels + c];
    for (c, o) in out.iter_mut().enumerate().take(channels) {
        let (v00, v01, v10, v11) = (at(y0, x0, c), at(y0, x1, c), at(y1, x0, c), at(y1, x1, c));
        let v = lerp(lerp(v00, v01, fx), lerp(v10, v11, fx), fy);
        let lo = v00.min(v01).min(v10).min(v11);
        let hi = v00.max(v01).max(v10).max(v11);
        *o = v.clamp(lo, hi);
    }
}

pub fn grid_sample_border(image: &Frame, grid: &SampleGrid) -> Result<Frame> {
    let (h, w) = grid.dims();
    let mut data = vec![0.0; h * w * 3];
    for (i, px) in data.chunks_exact_mut(3).enumerate() {
        let [gx, gy] = grid.coords[i];
        sample_border(
            &image.data,
            image.height,
            image.width,
            3,
            pixel_coord(gx, image.width),
            pixel_coord(gy, image.height),
            px,
        );
    }
    Frame::new(h, w, data)
}

/// Converts head parameters plus a reference image into a frame.
pub trait Renderer: Sync {
    fn render(&self, reference: &Frame, params: &HeadParams) -> Result<Frame>;

    fn render_sequence(&self, reference: &Frame, params: &[HeadParams]) -> Result<Vec<Frame>> {
        params
            .par_iter()
            .map(|p| self.render(reference, p))
            .collect()
    }
}

/// Warps the whole reference image by crop and in-plane rotation; ignores
/// expression.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyRenderer;

impl Renderer for ToyRenderer {
    fn render(&self, reference: &Frame, params: &HeadParams) -> Result<Frame> {
        toy_render(reference, params)
    }
}

pub fn toy_render(reference: &Frame, params: &HeadParams) -> Result<Frame> {
    let grid = affine_grid(params, reference.height, reference.width)?;
    grid_sample_border(reference, &grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn test_card(h: usize, w: usize) -> Frame {
        Frame::from_fn(h, w, |y, x| {
            let v = ((y * 7 + x * 3) % 11) as f64 / 10.0;
            [v, 1.0 - v, (x as f64) / (w as f64)]
        })
        .unwrap()
    }

    #[test]
    fn identity_params_give_identity_grid() {
        let g = affine_grid(&HeadParams::identity(), 5, 7).unwrap();
        assert_eq!(g, SampleGrid::identity(5, 7));
    }

    #[test]
    fn translation_shifts_grid() {
        let mut p = HeadParams::identity();
        p.crop[0] = 0.5;
        let g = affine_grid(&p, 4, 6).unwrap();
        let id = SampleGrid::identity(4, 6);
        for (a, b) in g.coords().iter().zip(id.coords()) {
            assert!((a[0] - (b[0] - 0.5)).abs() < 1e-12);
            assert_eq!(a[1], b[1]);
        }
    }

    #[test]
    fn half_turn_negates_grid() {
        let mut p = HeadParams::identity();
        p.pose[0] = std::f64::consts::PI;
        let g = affine_grid(&p, 5, 5).unwrap();
        let id = SampleGrid::identity(5, 5);
        for (a, b) in g.coords().iter().zip(id.coords()) {
            assert!((a[0] + b[0]).abs() < 1e-12 && (a[1] + b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn non_positive_scale_rejected() {
        let mut p = HeadParams::identity();
        p.crop[2] = 0.0;
        assert!(affine_grid(&p, 3, 3).is_err());
    }

    #[test]
    fn identity_sampling_is_exact() {
        let img = test_card(9, 13);
        let out = grid_sample_border(&img, &SampleGrid::identity(9, 13)).unwrap();
        assert_eq!(out, img);
        assert_eq!(toy_render(&img, &HeadParams::identity()).unwrap(), img);
    }

    #[test]
    fn halfway_sample() {
        let data = [0.0, 10.0];
        let mut out = [0.0];
        sample_border(&data, 1, 2, 1, 0.5, 0.0, &mut out);
        assert!((out[0] - 5.0).abs() < 1e-9);
    }

    #[test]
    fn far_right_replicates_last_column() {
        let img = test_card(6, 8);
        let mut p = HeadParams::identity();
        p.crop[0] = -5.0;
        let out = toy_render(&img, &p).unwrap();
        for y in 0..6 {
            for x in 0..8 {
                assert_eq!(out.pixel(y, x), img.pixel(y, 7));
            }
        }
    }

    #[test]
    fn integer_translation_moves_pixels() {
        let img = test_card(8, 8);
        let mut p = HeadParams::identity();
        // two pixels right, one pixel down (pixel pitch is 2/7)
        p.crop[0] = 2.0 * 2.0 / 7.0;
        p.crop[1] = 2.0 / 7.0;
        let out = toy_render(&img, &p).unwrap();
        for y in 1..8 {
            for x in 2..8 {
                assert_eq!(out.pixel(y, x), img.pixel(y - 1, x - 2));
            }
        }
    }

    #[test]
    fn frame_validation() {
        assert!(Frame::new(1, 1, vec![0.0, 0.5, 1.5]).is_err());
        assert!(Frame::new(0, 1, vec![]).is_err());
        assert!(Frame::new(2, 2, vec![0.0; 11]).is_err());
    }

    proptest! {
        #[test]
        fn output_within_input_range(tx in -1.5f64..1.5, ty in -1.5f64..1.5, s in 0.3f64..3.0, rot in -3.2f64..3.2) {
            let img = test_card(7, 9);
            let mut p = HeadParams::identity();
            p.crop = [tx, ty, s];
            p.pose[0] = rot;
            let out = toy_render(&img, &p).unwrap();
            for c in 0..3 {
                let vals = img.data().iter().skip(c).step_by(3);
                let lo = vals.clone().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.cloned().fold(f64::NEG_INFINITY, f64::max);
                for v in out.data().iter().skip(c).step_by(3) {
                    prop_assert!(*v >= lo && *v <= hi);
                }
            }
        }

        #[test]
        fn subpixel_translation_is_lipschitz_on_ramps(dx in -0.2f64..0.2) {
            // horizontal ramp with unit step per pixel scaled into [0, 1]
            let w = 10;
            let img = Frame::from_fn(4, w, |_, x| {
                let v = x as f64 / (w - 1) as f64;
                [v, v, v]
            }).unwrap();
            let mut p = HeadParams::identity();
            p.crop[0] = dx;
            let out = toy_render(&img, &p).unwrap();
            let step = 1.0 / (w - 1) as f64;
            let shift_px = dx.abs() * (w - 1) as f64 / 2.0;
            for (a, b) in out.data().iter().zip(img.data()) {
                prop_assert!((a - b).abs() <= step * shift_px.ceil() + 1e-12);
            }
        }
    }
}
