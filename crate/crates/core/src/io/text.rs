//! Text formats: parameter CSV, loss log, ensemble and frame-directory manifests.
//!
//! Floats are written with Rust's shortest round-trip formatting, which is
//! locale-independent and parses back to the identical `f64`.

use std::path::{Path, PathBuf};

use crate::ensemble::{EnsembleKind, EnsembleSpec};
use crate::error::{Error, Result};
use crate::io::binary::load_checkpoint;
use crate::params::{HeadParams, ParamSequence, PARAM_DIM};
use crate::training::LossRecord;

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One frame per line, 73 comma-separated values, no header.
pub fn params_to_csv(seq: &ParamSequence) -> String {
    let mut out = String::new();
    for f in seq.frames() {
        let row: Vec<String> = f.pack().iter().map(|v| format!("{v}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn params_from_csv(text: &str, path: &Path) -> Result<ParamSequence> {
    let frames = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let values = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
            if values.len() != PARAM_DIM {
                return Err(Error::format(
                    path,
                    format!(
                        "line {}: {} columns, expected {PARAM_DIM}",
                        i + 1,
                        values.len()
                    ),
                ));
            }
            HeadParams::unpack(&values)
        })
        .collect::<Result<Vec<_>>>()?;
    if frames.is_empty() {
        return Err(Error::format(path, "no parameter rows"));
    }
    ParamSequence::new(frames)
}

pub fn save_params(path: impl AsRef<Path>, seq: &ParamSequence) -> Result<()> {
    write_text(path.as_ref(), &params_to_csv(seq))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ParamSequence> {
    let path = path.as_ref();
    params_from_csv(&read_text(path)?, path)
}

pub const LOSS_HEADER: &str = "step,lr,loss_gen,loss_mot,loss_total";

pub fn loss_csv(history: &[LossRecord]) -> String {
    let mut out = format!("{LOSS_HEADER}\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.step,
            r.lr,
            r.loss.gen,
            r.loss.mot,
            r.loss.total()
        ));
    }
    out
}

pub fn save_loss_csv(path: impl AsRef<Path>, history: &[LossRecord]) -> Result<()> {
    write_text(path.as_ref(), &loss_csv(history))
}

/// `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::format(path, format!("expected key=value, got {l:?}")))
        })
        .collect()
}

/// Member paths are written as given and resolved relative to the manifest.
pub fn ensemble_manifest(kind: EnsembleKind, members: &[PathBuf]) -> String {
    let mut out = format!("kind={}\n", kind.as_str());
    for m in members {
        out.push_str(&format!("member={}\n", m.display()));
    }
    out
}

pub fn read_ensemble_manifest(path: &Path) -> Result<(EnsembleKind, Vec<PathBuf>)> {
    let dir = path.parent().unwrap_or(Path::new(""));
    let mut kind = None;
    let mut members = Vec::new();
    for (k, v) in parse_key_values(&read_text(path)?, path)? {
        match k.as_str() {
            "kind" => kind = Some(v.parse::<EnsembleKind>()?),
            "member" => members.push(dir.join(v)),
            other => return Err(Error::format(path, format!("unknown key {other:?}"))),
        }
    }
    let kind = kind.ok_or_else(|| Error::format(path, "missing kind"))?;
    Ok((kind, members))
}

pub fn load_ensemble(path: impl AsRef<Path>) -> Result<EnsembleSpec> {
    let (kind, members) = read_ensemble_manifest(path.as_ref())?;
    let ckpts = members
        .iter()
        .map(load_checkpoint)
        .collect::<Result<Vec<_>>>()?;
    EnsembleSpec::new(ckpts, kind)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameManifest {
    pub fps: f64,
    pub frames: usize,
    pub reference: Option<String>,
}

impl FrameManifest {
    pub fn to_text(&self) -> String {
        let mut out = format!("fps={}\nframes={}\n", self.fps, self.frames);
        if let Some(r) = &self.reference {
            out.push_str(&format!("reference={r}\n"));
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut fps = None;
        let mut frames = None;
        let mut reference = None;
        let bad = |k: &str| Error::format(path, format!("bad value for {k}"));
        for (k, v) in parse_key_values(text, path)? {
            match k.as_str() {
                "fps" => fps = Some(v.parse::<f64>().map_err(|_| bad("fps"))?),
                "frames" => frames = Some(v.parse::<usize>().map_err(|_| bad("frames"))?),
                "reference" => reference = Some(v),
                other => return Err(Error::format(path, format!("unknown key {other:?}"))),
            }
        }
        Ok(FrameManifest {
            fps: fps.ok_or_else(|| Error::format(path, "missing fps"))?,
            frames: frames.ok_or_else(|| Error::format(path, "missing frames"))?,
            reference,
        })
    }
}
