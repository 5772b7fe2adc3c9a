//! Checkpoint (`CHDR`) and feature (`CHFT`) files. All numbers little-endian;
//! tensor payloads are `f32`, row-major.

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::audio::{FeatureSequence, FEATURE_DIM};
use crate::driver::{AttitudeCondition, DriverCheckpoint, DriverConfig, DriverWeights, Tensors};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CHDR";
pub const FEATURE_MAGIC: &[u8; 4] = b"CHFT";
pub const FORMAT_VERSION: u32 = 1;

const RUNNING_MEAN: &str = "norm.running_mean";
const RUNNING_VAR: &str = "norm.running_var";

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v)
            .map_err(|_| Error::InvalidArgument(format!("{v} does not fit in u32")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    fn f32(&mut self, v: f64) {
        self.0.extend_from_slice(&(v as f32).to_le_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::format(self.path, "unexpected end of file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::format(self.path, "payload too large"))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::format(self.path, "bad magic"));
        }
        let version = self.u32()? as u32;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(self.path, "trailing bytes"));
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_to_bytes(ckpt: &DriverCheckpoint) -> Result<Vec<u8>> {
    let w = ckpt.weights();
    let cfg = &w.config;
    let mut out = Writer(Vec::new());
    out.bytes(CHECKPOINT_MAGIC);
    out.u32(FORMAT_VERSION as usize)?;
    for v in [
        cfg.input_dim,
        cfg.attitude_dim,
        cfg.hidden_dim,
        cfg.num_layers,
        cfg.output_dim,
    ] {
        out.u32(v)?;
    }
    out.f32(cfg.dropout);

    let mut names = w.params.names();
    let mut shapes = w.params.shapes();
    let mut data: Vec<&[f64]> = w.params.slices();
    names.extend([RUNNING_MEAN.to_string(), RUNNING_VAR.to_string()]);
    shapes.extend([vec![w.running_mean.len()], vec![w.running_var.len()]]);
    data.extend([
        w.running_mean.as_slice().expect("contiguous"),
        w.running_var.as_slice().expect("contiguous"),
    ]);

    out.u32(names.len())?;
    for ((name, shape), values) in names.iter().zip(&shapes).zip(data) {
        out.u32(name.len())?;
        out.bytes(name.as_bytes());
        out.u32(shape.len())?;
        for &d in shape {
            out.u32(d)?;
        }
        values.iter().for_each(|&v| out.f32(v));
    }
    Ok(out.0)
}

pub fn checkpoint_from_bytes(bytes: &[u8], path: &Path) -> Result<DriverCheckpoint> {
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        path,
    };
    r.header(CHECKPOINT_MAGIC)?;
    let config = DriverConfig {
        input_dim: r.u32()?,
        attitude_dim: r.u32()?,
        hidden_dim: r.u32()?,
        num_layers: r.u32()?,
        output_dim: r.u32()?,
        dropout: r.f32s(1)?[0],
    };
    config.validate()?;

    let mut params = Tensors::zeros(&config);
    let mut running_mean = Array1::zeros(config.input_dim);
    let mut running_var = Array1::zeros(config.input_dim);
    let names = params.names();
    let shapes = params.shapes();
    let count = r.u32()?;
    if count != names.len() + 2 {
        return Err(Error::format(
            path,
            format!("expected {} tensors, found {count}", names.len() + 2),
        ));
    }
    let mut seen = vec![false; count];
    let mut slots = params.slices_mut();
    for _ in 0..count {
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::format(path, "tensor name is not utf-8"))?
            .to_string();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let idx = match name.as_str() {
            RUNNING_MEAN => names.len(),
            RUNNING_VAR => names.len() + 1,
            n => names
                .iter()
                .position(|m| m == n)
                .ok_or_else(|| Error::format(path, format!("unknown tensor {n:?}")))?,
        };
        let expected = if idx < names.len() {
            shapes[idx].clone()
        } else {
            vec![config.input_dim]
        };
        if shape != expected {
            return Err(Error::format(
                path,
                format!("tensor {name} has shape {shape:?}, expected {expected:?}"),
            ));
        }
        if std::mem::replace(&mut seen[idx], true) {
            return Err(Error::format(path, format!("duplicate tensor {name}")));
        }
        let values = r.f32s(shape.iter().product())?;
        let dst: &mut [f64] = if idx < names.len() {
            slots[idx]
        } else if idx == names.len() {
            running_mean.as_slice_mut().expect("contiguous")
        } else {
            running_var.as_slice_mut().expect("contiguous")
        };
        dst.copy_from_slice(&values);
    }
    drop(slots);
    r.finish()?;
    let weights = DriverWeights {
        config,
        params,
        running_mean,
        running_var,
    };
    Ok(DriverCheckpoint::new(weights))
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &DriverCheckpoint) -> Result<()> {
    write_file(path.as_ref(), &checkpoint_to_bytes(ckpt)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<DriverCheckpoint> {
    let path = path.as_ref();
    checkpoint_from_bytes(&read_file(path)?, path)
}

/// Feature rows, with an optional one-hot attitude block appended per row.
pub fn features_to_bytes(
    features: &FeatureSequence,
    attitude: Option<&AttitudeCondition>,
) -> Result<Vec<u8>> {
    let extra = attitude.map(|a| a.one_hot()).unwrap_or_default();
    let mut out = Writer(Vec::new());
    out.bytes(FEATURE_MAGIC);
    out.u32(FORMAT_VERSION as usize)?;
    out.u32(features.len())?;
    out.u32(FEATURE_DIM + extra.len())?;
    for row in features.matrix().rows() {
        row.iter().chain(&extra).for_each(|&v| out.f32(v));
    }
    Ok(out.0)
}

pub fn features_from_bytes(
    bytes: &[u8],
    fps: f64,
    path: &Path,
) -> Result<(FeatureSequence, Option<AttitudeCondition>)> {
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        path,
    };
    r.header(FEATURE_MAGIC)?;
    let frames = r.u32()?;
    let dim = r.u32()?;
    if dim < FEATURE_DIM {
        return Err(Error::format(
            path,
            format!("feature dim {dim} < {FEATURE_DIM}"),
        ));
    }
    let expected = frames.checked_mul(dim).and_then(|n| n.checked_mul(4));
    if expected != Some(bytes.len() - r.pos) {
        return Err(Error::format(
            path,
            "payload length does not match frames x dim",
        ));
    }
    let values = r.f32s(frames * dim)?;
    let full = Array2::from_shape_vec((frames, dim), values)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let attitude = if dim > FEATURE_DIM {
        let cats = dim - FEATURE_DIM;
        let first = full.row(0);
        let hot = (FEATURE_DIM..dim)
            .find(|&k| first[k] == 1.0)
            .ok_or_else(|| Error::format(path, "attitude block is not one-hot"))?;
        let cond = AttitudeCondition::new(hot - FEATURE_DIM, cats)?;
        let one_hot = cond.one_hot();
        for row in full.rows() {
            if row
                .iter()
                .skip(FEATURE_DIM)
                .zip(&one_hot)
                .any(|(a, b)| a != b)
            {
                return Err(Error::format(path, "attitude block varies across frames"));
            }
        }
        Some(cond)
    } else {
        None
    };
    let data = full.slice(ndarray::s![.., ..FEATURE_DIM]).to_owned();
    Ok((FeatureSequence::from_matrix(data, fps)?, attitude))
}

pub fn save_features(
    path: impl AsRef<Path>,
    features: &FeatureSequence,
    attitude: Option<&AttitudeCondition>,
) -> Result<()> {
    write_file(path.as_ref(), &features_to_bytes(features, attitude)?)
}

pub fn load_features(
    path: impl AsRef<Path>,
    fps: f64,
) -> Result<(FeatureSequence, Option<AttitudeCondition>)> {
    let path = path.as_ref();
    features_from_bytes(&read_file(path)?, fps, path)
}
