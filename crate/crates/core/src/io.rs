//! On-disk formats: model checkpoints, feature matrices and spike rasters.
//! Byte layouts are documented in `docs/formats.md`.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::frontend::Spectrogram;
use crate::spikes::SpikeTrain;
use crate::tensor::{NamedTensor, Parameters};
use crate::training::Pipeline;

pub const CHECKPOINT_MAGIC: &str = "spiking-leaf-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the payload, in f32 elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub config: PipelineConfig,
    pub labels: Vec<String>,
    pub tensors: Vec<TensorEntry>,
}

fn format_err(what: &'static str, reason: impl Into<String>) -> Error {
    Error::Format {
        what,
        reason: reason.into(),
    }
}

/// `u64 LE header length | JSON header | f32 LE payload`.
pub fn checkpoint_bytes(pipeline: &Pipeline, labels: &[String]) -> Result<Vec<u8>> {
    let tensors = pipeline.named_tensors();
    let mut entries = Vec::with_capacity(tensors.len());
    let mut payload = Vec::new();
    let mut offset = 0;
    for t in &tensors {
        entries.push(TensorEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            offset,
        });
        offset += t.data.len();
        for &v in &t.data {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        format: CHECKPOINT_MAGIC.into(),
        version: CHECKPOINT_VERSION,
        config: pipeline.config.clone(),
        labels: labels.to_vec(),
        tensors: entries,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + json.len() + payload.len());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn write_checkpoint(path: impl AsRef<Path>, pipeline: &Pipeline, labels: &[String]) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(pipeline, labels)?)?;
    Ok(())
}

/// Rebuilds the pipeline from its stored config, then overwrites every tensor.
pub fn parse_checkpoint(bytes: &[u8]) -> Result<(Pipeline, Vec<String>)> {
    if bytes.len() < 8 {
        return Err(format_err("checkpoint", "truncated length prefix"));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(8..8usize.saturating_add(hlen))
        .ok_or_else(|| format_err("checkpoint", "truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    if header.format != CHECKPOINT_MAGIC || header.version != CHECKPOINT_VERSION {
        return Err(format_err(
            "checkpoint",
            format!("unsupported format {} v{}", header.format, header.version),
        ));
    }
    let payload = &bytes[8 + hlen..];
    if payload.len() % 4 != 0 {
        return Err(format_err("checkpoint", "payload is not a whole number of f32 values"));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        let len: usize = e.shape.iter().product();
        let data = values
            .get(e.offset..e.offset + len)
            .ok_or_else(|| format_err("checkpoint", format!("tensor `{}` runs past the payload", e.name)))?;
        tensors.push(NamedTensor {
            name: e.name.clone(),
            shape: e.shape.clone(),
            data: data.to_vec(),
        });
    }
    let mut pipeline = Pipeline::init(&header.config, 0)?;
    let expected = pipeline.named_tensors();
    for t in &expected {
        match tensors.iter().find(|x| x.name == t.name) {
            Some(x) if x.shape == t.shape => {}
            Some(x) => {
                return Err(Error::Shape(format!(
                    "tensor `{}` has shape {:?}, config implies {:?}",
                    t.name, x.shape, t.shape
                )))
            }
            None => return Err(Error::Shape(format!("tensor `{}` missing from checkpoint", t.name))),
        }
    }
    if tensors.len() != expected.len() {
        return Err(Error::Shape("checkpoint holds tensors the config does not use".into()));
    }
    pipeline.assign_named(&tensors)?;
    Ok((pipeline, header.labels))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(Pipeline, Vec<String>)> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    parse_checkpoint(&std::fs::read(path)?)
}

/// Shortest round-trip decimal representation.
fn num(v: f64) -> String {
    format!("{v}")
}

/// Long format `frame,channel,value`, frame-major, one row per matrix entry.
pub fn features_csv(f: &Spectrogram) -> String {
    let mut s = String::from("frame,channel,value\n");
    for t in 0..f.frames {
        for (c, v) in f.frame(t).iter().enumerate() {
            let _ = writeln!(s, "{t},{c},{}", num(*v));
        }
    }
    s
}

/// Inverse of [`features_csv`]; rows must be complete and in frame-major order.
pub fn parse_features_csv(text: &str, hop: usize) -> Result<Spectrogram> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("frame,channel,value") {
        return Err(format_err("feature csv", "missing `frame,channel,value` header"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let bad = || format_err("feature csv", format!("row {}: expected `frame,channel,value`", i + 1));
        let mut cols = line.split(',');
        let t: usize = cols.next().and_then(|c| c.trim().parse().ok()).ok_or_else(bad)?;
        let c: usize = cols.next().and_then(|c| c.trim().parse().ok()).ok_or_else(bad)?;
        let v: f64 = cols.next().and_then(|c| c.trim().parse().ok()).ok_or_else(bad)?;
        if cols.next().is_some() {
            return Err(bad());
        }
        rows.push((t, c, v));
    }
    let channels = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
    let frames = if channels == 0 { 0 } else { rows.len() / channels };
    if frames * channels != rows.len() {
        return Err(format_err("feature csv", "rows do not form a complete matrix"));
    }
    for (i, &(t, c, _)) in rows.iter().enumerate() {
        if (t, c) != (i / channels, i % channels) {
            return Err(format_err(
                "feature csv",
                format!("row {}: entry ({t}, {c}) out of order", i + 1),
            ));
        }
    }
    Ok(Spectrogram::new(
        frames,
        channels,
        rows.into_iter().map(|r| r.2).collect(),
        hop,
    ))
}

/// `u32 T | u32 N | T*N f32`, all little-endian, frame-major.
pub fn features_bin(f: &Spectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * f.values.len());
    out.extend_from_slice(&(f.frames as u32).to_le_bytes());
    out.extend_from_slice(&(f.channels as u32).to_le_bytes());
    for &v in &f.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn parse_features_bin(bytes: &[u8], hop: usize) -> Result<Spectrogram> {
    if bytes.len() < 8 {
        return Err(format_err("feature bin", "truncated header"));
    }
    let t = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let n = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    if bytes.len() != 8 + 4 * t * n {
        return Err(format_err(
            "feature bin",
            format!("expected {} payload bytes", 4 * t * n),
        ));
    }
    let values = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok(Spectrogram::new(t, n, values, hop))
}

/// Event list `t,neuron`, sorted by time then neuron; header only when silent.
pub fn raster_csv(s: &SpikeTrain) -> String {
    let mut out = String::from("t,neuron\n");
    for (t, n) in s.events() {
        let _ = writeln!(out, "{t},{n}");
    }
    out
}

pub fn parse_raster_csv(text: &str, steps: usize, neurons: usize) -> Result<SpikeTrain> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("t,neuron") {
        return Err(format_err("raster csv", "missing `t,neuron` header"));
    }
    let mut events = Vec::new();
    for (i, line) in lines.enumerate() {
        let parsed = line
            .split_once(',')
            .and_then(|(t, n)| Some((t.trim().parse().ok()?, n.trim().parse().ok()?)));
        events.push(parsed.ok_or_else(|| format_err("raster csv", format!("row {}: expected `t,neuron`", i + 1)))?);
    }
    SpikeTrain::from_events(steps, neurons, &events)
}

/// NumPy `.npy` v1.0, dtype `|u1`, C order, shape `(T, N)`.
pub fn raster_npy(s: &SpikeTrain) -> Vec<u8> {
    let dict = format!(
        "{{'descr': '|u1', 'fortran_order': False, 'shape': ({}, {}), }}",
        s.steps(),
        s.neurons()
    );
    // magic(6) + version(2) + len(2) + dict + padding + '\n' is a multiple of 64.
    let unpadded = 10 + dict.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    let header_len = dict.len() + pad + 1;
    let mut out = Vec::with_capacity(10 + header_len + s.as_bytes().len());
    out.extend_from_slice(b"\x93NUMPY\x01\x00");
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.extend(std::iter::repeat(b' ').take(pad));
    out.push(b'\n');
    out.extend_from_slice(s.as_bytes());
    out
}

pub fn parse_raster_npy(bytes: &[u8]) -> Result<SpikeTrain> {
    if bytes.len() < 10 || &bytes[..8] != b"\x93NUMPY\x01\x00" {
        return Err(format_err("npy", "not a v1.0 .npy file"));
    }
    let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let header = std::str::from_utf8(
        bytes
            .get(10..10 + hlen)
            .ok_or_else(|| format_err("npy", "truncated header"))?,
    )
    .map_err(|_| format_err("npy", "header is not UTF-8"))?;
    if !header.contains("'descr': '|u1'") || !header.contains("'fortran_order': False") {
        return Err(format_err("npy", "expected C-ordered |u1 data"));
    }
    let shape = header
        .split("'shape': (")
        .nth(1)
        .and_then(|r| r.split(')').next())
        .ok_or_else(|| format_err("npy", "missing shape"))?;
    let dims: Vec<usize> = shape
        .split(',')
        .map(str::trim)
        .filter(|d| !d.is_empty())
        .map(|d| d.parse().map_err(|_| format_err("npy", format!("bad dimension `{d}`"))))
        .collect::<Result<_>>()?;
    let [t, n] = dims[..] else {
        return Err(format_err("npy", "expected a 2-d array"));
    };
    let data = &bytes[10 + hlen..];
    if data.len() != t * n {
        return Err(format_err(
            "npy",
            format!("expected {} data bytes, found {}", t * n, data.len()),
        ));
    }
    let events: Vec<(usize, usize)> = data
        .iter()
        .enumerate()
        .filter(|(_, &b)| b != 0)
        .map(|(i, _)| (i / n.max(1), i % n.max(1)))
        .collect();
    if data.iter().any(|&b| b > 1) {
        return Err(format_err("npy", "raster values must be 0 or 1"));
    }
    SpikeTrain::from_events(t, n, &events)
}

/// Writes `bytes` via a sibling temp file and rename, so readers never see a partial file.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("partial");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
