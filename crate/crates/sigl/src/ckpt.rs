//! Checkpoint container: magic, version, a JSON header describing every
//! tensor, then raw little-endian IEEE-754 payloads at 64-byte-aligned
//! offsets.
//!
//! Layout:
//!   bytes 0..4    magic "SIGL"
//!   bytes 4..8    format version, u32 LE
//!   bytes 8..16   header length in bytes, u64 LE
//!   then          UTF-8 JSON header
//!   then          zero padding to the first 64-byte boundary
//!   then          payload; each record's `offset` is relative to the
//!                 payload start and is itself a multiple of 64
//!
//! Readers are strict: bad magic, unknown version, malformed or truncated
//! records, and dtype/shape disagreements are all hard errors. Whether a
//! *name* is expected is the caller's business (the training state knows its
//! slot list); this module only guarantees the container is sound.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub const MAGIC: [u8; 4] = *b"SIGL";
pub const VERSION: u32 = 1;
const ALIGN: usize = 64;

#[derive(Debug)]
pub enum CkptError {
    Io(std::io::Error),
    /// Structural problem at a byte offset: what was expected there.
    Format { offset: usize, expected: String },
    /// The header parsed but its contents are unusable.
    Header(String),
}

impl std::fmt::Display for CkptError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CkptError::Io(e) => write!(f, "checkpoint io: {e}"),
            CkptError::Format { offset, expected } => {
                write!(f, "malformed checkpoint at byte {offset}: expected {expected}")
            }
            CkptError::Header(s) => write!(f, "checkpoint header: {s}"),
        }
    }
}

impl std::error::Error for CkptError {}

impl From<std::io::Error> for CkptError {
    fn from(e: std::io::Error) -> Self {
        CkptError::Io(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    /// Byte offset relative to the payload start; a multiple of 64.
    pub offset: u64,
}

/// Mirror of the network shape parameters, spelled out field by field so the
/// file format stays stable even if the in-memory struct changes.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NetHeader {
    pub target_res: usize,
    pub base_res: usize,
    pub ch: usize,
    pub nz: usize,
    pub embed_dim: usize,
    pub leaky_slope: f64,
    pub nonlocal_res: usize,
    pub blocks_per_stage: usize,
}

impl From<sigl_core::net::NetworkConfig> for NetHeader {
    fn from(c: sigl_core::net::NetworkConfig) -> Self {
        NetHeader {
            target_res: c.target_res,
            base_res: c.base_res,
            ch: c.ch,
            nz: c.nz,
            embed_dim: c.embed_dim,
            leaky_slope: c.leaky_slope,
            nonlocal_res: c.nonlocal_res,
            blocks_per_stage: c.blocks_per_stage,
        }
    }
}

impl From<NetHeader> for sigl_core::net::NetworkConfig {
    fn from(h: NetHeader) -> Self {
        sigl_core::net::NetworkConfig {
            target_res: h.target_res,
            base_res: h.base_res,
            ch: h.ch,
            nz: h.nz,
            embed_dim: h.embed_dim,
            leaky_slope: h.leaky_slope,
            nonlocal_res: h.nonlocal_res,
            blocks_per_stage: h.blocks_per_stage,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainHeader {
    pub lr_d: f64,
    pub lr_g: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch: usize,
    pub ema_decay: f64,
    pub standing_passes: usize,
    pub standing_batch: usize,
    pub steps: u64,
    pub seed: u64,
    pub interpolate: bool,
}

impl From<sigl_core::train::TrainConfig> for TrainHeader {
    fn from(c: sigl_core::train::TrainConfig) -> Self {
        TrainHeader {
            lr_d: c.lr_d,
            lr_g: c.lr_g,
            beta1: c.beta1,
            beta2: c.beta2,
            adam_eps: c.adam_eps,
            batch: c.batch,
            ema_decay: c.ema_decay,
            standing_passes: c.standing_passes,
            standing_batch: c.standing_batch,
            steps: c.steps,
            seed: c.seed,
            interpolate: c.interpolate,
        }
    }
}

impl From<TrainHeader> for sigl_core::train::TrainConfig {
    fn from(h: TrainHeader) -> Self {
        sigl_core::train::TrainConfig {
            lr_d: h.lr_d,
            lr_g: h.lr_g,
            beta1: h.beta1,
            beta2: h.beta2,
            adam_eps: h.adam_eps,
            batch: h.batch,
            ema_decay: h.ema_decay,
            standing_passes: h.standing_passes,
            standing_batch: h.standing_batch,
            steps: h.steps,
            seed: h.seed,
            interpolate: h.interpolate,
        }
    }
}

/// What kind of model the file holds, with its rebuild parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Meta {
    Train {
        net: NetHeader,
        train: TrainHeader,
        /// Steps completed when this file was written.
        step: u64,
        adam_g_t: u64,
        adam_d_t: u64,
        /// Hash seed of the text encoder the model was trained against.
        encoder_seed: u64,
    },
    Classifier {
        classes: usize,
        features: usize,
        leaky_slope: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Header {
    pub meta: Meta,
    pub tensors: Vec<TensorRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn dtype(&self) -> Dtype {
        match self {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            TensorData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            TensorData::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    fn from_le_bytes(dtype: Dtype, bytes: &[u8]) -> Self {
        match dtype {
            Dtype::F32 => TensorData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            Dtype::F64 => TensorData::F64(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        }
    }
}

/// One tensor headed into or out of a file.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: TensorData) -> Self {
        NamedTensor {
            name: name.into(),
            shape,
            data,
        }
    }
}

fn align_up(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

/// Serialize header + tensors to `path`. Tensor order is preserved; names
/// must be unique and every shape must match its data length.
pub fn write_checkpoint(
    path: &Path,
    mut header: Header,
    tensors: &[NamedTensor],
) -> Result<(), CkptError> {
    let mut seen = BTreeMap::new();
    let mut offset = 0usize;
    header.tensors.clear();
    for t in tensors {
        if seen.insert(t.name.clone(), ()).is_some() {
            return Err(CkptError::Header(format!("duplicate tensor name {}", t.name)));
        }
        let numel: usize = t.shape.iter().product();
        if numel != t.data.len() {
            return Err(CkptError::Header(format!(
                "{}: shape {:?} holds {numel} elements but {} were given",
                t.name,
                t.shape,
                t.data.len()
            )));
        }
        header.tensors.push(TensorRecord {
            name: t.name.clone(),
            shape: t.shape.clone(),
            dtype: t.data.dtype(),
            offset: offset as u64,
        });
        offset = align_up(offset + t.data.len() * t.data.dtype().width());
    }

    let header_json =
        serde_json::to_vec(&header).map_err(|e| CkptError::Header(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + header_json.len() + offset);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    let payload_start = align_up(out.len());
    out.resize(payload_start, 0);
    for (rec, t) in header.tensors.iter().zip(tensors) {
        let want = payload_start + rec.offset as usize;
        out.resize(want, 0);
        out.extend_from_slice(&t.data.to_le_bytes());
    }

    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    f.sync_all()?;
    Ok(())
}

#[derive(Debug)]
pub struct LoadedCheckpoint {
    pub header: Header,
    pub tensors: BTreeMap<String, NamedTensor>,
}

pub fn read_checkpoint(path: &Path) -> Result<LoadedCheckpoint, CkptError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 {
        return Err(CkptError::Format {
            offset: bytes.len(),
            expected: "at least 16 bytes of preamble".into(),
        });
    }
    if bytes[0..4] != MAGIC {
        return Err(CkptError::Format {
            offset: 0,
            expected: "magic \"SIGL\"".into(),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(CkptError::Format {
            offset: 4,
            expected: format!("format version {VERSION}, found {version}"),
        });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header_end = 16usize.checked_add(header_len).ok_or(CkptError::Format {
        offset: 8,
        expected: "sane header length".into(),
    })?;
    if bytes.len() < header_end {
        return Err(CkptError::Format {
            offset: 16,
            expected: format!("{header_len} bytes of JSON header"),
        });
    }
    let header: Header = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| CkptError::Header(e.to_string()))?;
    let payload_start = align_up(header_end);

    let mut tensors = BTreeMap::new();
    for rec in &header.tensors {
        if rec.offset as usize % ALIGN != 0 {
            return Err(CkptError::Header(format!(
                "{}: offset {} is not 64-byte aligned",
                rec.name, rec.offset
            )));
        }
        let numel: usize = rec.shape.iter().product();
        let begin = payload_start + rec.offset as usize;
        let end = begin + numel * rec.dtype.width();
        if end > bytes.len() {
            return Err(CkptError::Format {
                offset: begin,
                expected: format!(
                    "{} payload bytes for tensor {}",
                    numel * rec.dtype.width(),
                    rec.name
                ),
            });
        }
        let data = TensorData::from_le_bytes(rec.dtype, &bytes[begin..end]);
        let prev = tensors.insert(
            rec.name.clone(),
            NamedTensor::new(rec.name.clone(), rec.shape.clone(), data),
        );
        if prev.is_some() {
            return Err(CkptError::Header(format!("duplicate tensor name {}", rec.name)));
        }
    }
    Ok(LoadedCheckpoint { header, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_header() -> Header {
        Header {
            meta: Meta::Train {
                net: sigl_core::net::NetworkConfig::miniature().into(),
                train: sigl_core::train::TrainConfig::standard(10, 3).into(),
                step: 7,
                adam_g_t: 7,
                adam_d_t: 7,
                encoder_seed: 0,
            },
            tensors: Vec::new(),
        }
    }

    fn tmp(name: &str) -> std::path::PathBuf {
        std::env::temp_dir().join(format!("sigl-ckpt-{}-{name}", std::process::id()))
    }

    #[test]
    fn roundtrip_preserves_every_bit_and_both_dtypes() {
        let path = tmp("roundtrip.ckpt");
        let tensors = vec![
            NamedTensor::new(
                "g/w",
                vec![2, 3],
                TensorData::F32(vec![1.0, -2.5, 3.25e-20, f32::MIN_POSITIVE, 0.0, -0.0]),
            ),
            NamedTensor::new(
                "adam/m",
                vec![4],
                TensorData::F64(vec![std::f64::consts::PI, -1.0, 1e-300, 4.0]),
            ),
            NamedTensor::new("empty_ok", vec![0], TensorData::F32(vec![])),
        ];
        write_checkpoint(&path, sample_header(), &tensors).unwrap();
        let loaded = read_checkpoint(&path).unwrap();
        assert!(matches!(loaded.header.meta, Meta::Train { step: 7, .. }));
        assert_eq!(loaded.tensors.len(), 3);
        for t in &tensors {
            assert_eq!(&loaded.tensors[&t.name], t);
        }
        let _ = fs::remove_file(&path);
    }

    #[test]
    fn payload_offsets_are_aligned() {
        let path = tmp("aligned.ckpt");
        let tensors = vec![
            NamedTensor::new("a", vec![1], TensorData::F32(vec![1.0])),
            NamedTensor::new("b", vec![1], TensorData::F64(vec![2.0])),
        ];
        write_checkpoint(&path, sample_header(), &tensors).unwrap();
        let loaded = read_checkpoint(&path).unwrap();
        for rec in &loaded.header.tensors {
            assert_eq!(rec.offset % 64, 0, "{} at {}", rec.name, rec.offset);
        }
        assert_eq!(loaded.header.tensors[1].offset, 64);
        let _ = fs::remove_file(&path);
    }

    #[test]
    fn identical_state_produces_identical_bytes() {
        let a = tmp("det-a.ckpt");
        let b = tmp("det-b.ckpt");
        let tensors = vec![NamedTensor::new(
            "x",
            vec![3],
            TensorData::F32(vec![0.1, 0.2, 0.3]),
        )];
        write_checkpoint(&a, sample_header(), &tensors).unwrap();
        write_checkpoint(&b, sample_header(), &tensors).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        let _ = fs::remove_file(&a);
        let _ = fs::remove_file(&b);
    }

    #[test]
    fn corrupt_preambles_are_rejected_with_offsets() {
        let path = tmp("corrupt.ckpt");
        let tensors = vec![NamedTensor::new("x", vec![1], TensorData::F32(vec![1.0]))];
        write_checkpoint(&path, sample_header(), &tensors).unwrap();
        let good = fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        match read_checkpoint(&path) {
            Err(CkptError::Format { offset: 0, .. }) => {}
            other => panic!("expected magic failure, got {other:?}"),
        }

        let mut bad = good.clone();
        bad[4] = 99;
        fs::write(&path, &bad).unwrap();
        match read_checkpoint(&path) {
            Err(CkptError::Format { offset: 4, .. }) => {}
            other => panic!("expected version failure, got {other:?}"),
        }

        // truncating the payload loses tensor bytes
        let bad = good[..good.len() - 2].to_vec();
        fs::write(&path, &bad).unwrap();
        assert!(matches!(
            read_checkpoint(&path),
            Err(CkptError::Format { .. })
        ));

        let _ = fs::remove_file(&path);
    }

    #[test]
    fn shape_data_disagreement_is_rejected_at_write_time() {
        let path = tmp("mismatch.ckpt");
        let tensors = vec![NamedTensor::new("x", vec![5], TensorData::F32(vec![1.0]))];
        assert!(matches!(
            write_checkpoint(&path, sample_header(), &tensors),
            Err(CkptError::Header(_))
        ));
        let _ = fs::remove_file(&path);
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let path = tmp("dup.ckpt");
        let tensors = vec![
            NamedTensor::new("x", vec![1], TensorData::F32(vec![1.0])),
            NamedTensor::new("x", vec![1], TensorData::F32(vec![2.0])),
        ];
        assert!(matches!(
            write_checkpoint(&path, sample_header(), &tensors),
            Err(CkptError::Header(_))
        ));
        let _ = fs::remove_file(&path);
    }
}
