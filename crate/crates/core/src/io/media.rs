//! Audio (WAV, raw f32) and image (8-bit PNG) files.

use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Rgb, RgbImage};

use crate::audio::{pcm16_code, AudioClip};
use crate::error::{Error, Result};
use crate::fusion::{Mask, Segmenter};
use crate::io::text::FrameManifest;
use crate::renderer::Frame;

pub const FRAME_MANIFEST: &str = "manifest.txt";

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}

/// 16-bit PCM mono WAV with the canonical 44-byte header. Samples outside
/// [-1, 1) are clipped.
pub fn save_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| wav_err(path, e);
    let mut w = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in &clip.samples {
        w.write_sample(pcm16_code(s)).map_err(wrap)?;
    }
    w.finalize().map_err(wrap)
}

/// Reads integer or float WAV; multi-channel input is averaged to mono.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let wrap = |e: hound::Error| wav_err(path, e);
    let mut r = hound::WavReader::open(path).map_err(wrap)?;
    let spec = r.spec();
    let raw: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => r
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wrap)?,
        hound::SampleFormat::Int => {
            let full = (1i64 << (spec.bits_per_sample - 1)) as f64;
            r.samples::<i32>()
                .map(|s| s.map(|v| v as f64 / full))
                .collect::<std::result::Result<_, _>>()
                .map_err(wrap)?
        }
    };
    let ch = spec.channels as usize;
    let samples = if ch == 1 {
        raw
    } else {
        raw.chunks_exact(ch)
            .map(|c| c.iter().sum::<f64>() / ch as f64)
            .collect()
    };
    AudioClip::new(samples, spec.sample_rate)
}

/// Headerless little-endian `f32` samples; the rate comes from the caller.
pub fn load_raw_f32(path: impl AsRef<Path>, sample_rate: u32) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(path, "length is not a multiple of 4"));
    }
    let samples = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    AudioClip::new(samples, sample_rate)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn image_err(path: &Path, e: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

/// Quantizes to 8 bits per channel.
pub fn save_png(path: impl AsRef<Path>, frame: &Frame) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = frame.dims();
    let bytes: Vec<u8> = frame.data().iter().map(|&v| to_u8(v)).collect();
    let img: RgbImage = ImageBuffer::from_raw(w as u32, h as u32, bytes)
        .ok_or_else(|| Error::InvalidArgument("frame buffer size".into()))?;
    img.save(path).map_err(|e| image_err(path, e))
}

pub fn load_png(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img
        .pixels()
        .flat_map(|Rgb(p)| p.map(|c| c as f64 / 255.0))
        .collect();
    Frame::new(h as usize, w as usize, data)
}

pub fn save_mask_png(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = mask.dims();
    let bytes: Vec<u8> = mask.values().iter().map(|&v| to_u8(v)).collect();
    let img: GrayImage = ImageBuffer::from_raw(w as u32, h as u32, bytes)
        .ok_or_else(|| Error::InvalidArgument("mask buffer size".into()))?;
    img.save(path).map_err(|e| image_err(path, e))
}

/// Grayscale mask, white = background.
pub fn load_mask_png(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|e| image_err(path, e))?
        .to_luma8();
    let (w, h) = img.dimensions();
    let values = img.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
    Mask::new(h as usize, w as usize, values)
}

pub fn frame_file_name(i: usize) -> String {
    format!("{i:06}.png")
}

/// Writes `%06d.png` frames plus the manifest.
pub fn save_frame_dir(
    dir: impl AsRef<Path>,
    frames: &[Frame],
    manifest: &FrameManifest,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in frames.iter().enumerate() {
        save_png(dir.join(frame_file_name(i)), f)?;
    }
    let m = FrameManifest {
        frames: frames.len(),
        ..manifest.clone()
    };
    let path = dir.join(FRAME_MANIFEST);
    std::fs::write(&path, m.to_text()).map_err(|e| Error::io(&path, e))
}

pub fn load_frame_dir(dir: impl AsRef<Path>) -> Result<(Vec<Frame>, FrameManifest)> {
    let dir = dir.as_ref();
    let path = dir.join(FRAME_MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest = FrameManifest::parse(&text, &path)?;
    let frames = (0..manifest.frames)
        .map(|i| load_png(dir.join(frame_file_name(i))))
        .collect::<Result<Vec<_>>>()?;
    Ok((frames, manifest))
}

/// Masks from an external segmenter, one grayscale PNG per frame index.
#[derive(Debug, Clone)]
pub struct MaskDir {
    pub dir: PathBuf,
}

impl MaskDir {
    pub fn load(&self, index: usize) -> Result<Mask> {
        load_mask_png(self.dir.join(frame_file_name(index)))
    }

    pub fn load_reference(&self) -> Result<Mask> {
        load_mask_png(self.dir.join("reference.png"))
    }
}

/// Writes masks produced by any segmenter in the `MaskDir` layout.
pub fn export_masks(
    dir: impl AsRef<Path>,
    frames: &[Frame],
    reference: &Frame,
    segmenter: &dyn Segmenter,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_mask_png(dir.join("reference.png"), &segmenter.segment(reference)?)?;
    for (i, f) in frames.iter().enumerate() {
        save_mask_png(dir.join(frame_file_name(i)), &segmenter.segment(f)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::quantize_pcm16;

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let samples: Vec<f64> = (0..100)
            .map(|i| quantize_pcm16((i as f64 * 0.1).sin()))
            .collect();
        let clip = AudioClip::new(samples, 16_000).unwrap();
        save_wav(&p, &clip).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 44 + 200);
        assert_eq!(load_wav(&p).unwrap(), clip);
    }

    #[test]
    fn int_wav_is_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        for s in [16384i16, 0, -32768, -32768] {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        let clip = load_wav(&p).unwrap();
        assert_eq!(clip.samples, vec![0.25, -1.0]);
        assert_eq!(clip.sample_rate, 8000);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = Frame::from_fn(5, 7, |y, x| {
            [(x * 30) as f64 / 255.0, (y * 50) as f64 / 255.0, 1.0]
        })
        .unwrap();
        let p = dir.path().join("f.png");
        save_png(&p, &f).unwrap();
        let back = load_png(&p).unwrap();
        assert_eq!(back, f);
        let bytes = std::fs::read(&p).unwrap();
        save_png(&p, &back).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), bytes);
    }

    #[test]
    fn frame_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<Frame> = (0..3)
            .map(|i| Frame::filled(4, 4, [i as f64 / 255.0; 3]).unwrap())
            .collect();
        let m = FrameManifest {
            fps: 30.0,
            frames: 0,
            reference: Some("ref.png".into()),
        };
        save_frame_dir(dir.path(), &frames, &m).unwrap();
        assert!(dir.path().join("000002.png").exists());
        let (back, m2) = load_frame_dir(dir.path()).unwrap();
        assert_eq!(back, frames);
        assert_eq!(m2.frames, 3);
    }
}
