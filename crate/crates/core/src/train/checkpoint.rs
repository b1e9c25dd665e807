//! Binary checkpoint format:
//!
//! ```text
//! magic     8 bytes  b"PYRCKPT\0"
//! version   u32 LE
//! hlen      u64 LE   length of the JSON header
//! header    hlen bytes of UTF-8 JSON
//! tensors   f32 LE values of every parameter tensor in declaration order
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::{Layer, LayerSpec, Model, ModelConfig};
use crate::nn::{ConvParams, DenseParams};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"PYRCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub seed: u64,
    pub step: u64,
    pub param_count: usize,
    pub shapes: Vec<Vec<usize>>,
}

impl CheckpointHeader {
    /// The header a model built from `config` is saved with.
    pub fn new(config: &ModelConfig, seed: u64, step: u64) -> Self {
        let shapes: Vec<Vec<usize>> = config
            .layer_specs()
            .iter()
            .filter_map(LayerSpec::param_shapes)
            .flat_map(|(w, b)| [w, b])
            .collect();
        Self {
            config: config.clone(),
            seed,
            step,
            param_count: shapes.iter().map(|s| s.iter().product::<usize>()).sum(),
            shapes,
        }
    }
}

pub fn encode_checkpoint(model: &Model<f32>) -> Result<Vec<u8>> {
    let header = CheckpointHeader::new(&model.config, model.seed, model.step);
    if header.param_count != model.param_count() {
        return Err(Error::Checkpoint("model parameters do not match its config".into()));
    }
    let json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(20 + json.len() + 4 * header.param_count);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for t in model.parameters() {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(bytes)
}

pub fn save_checkpoint(model: &Model<f32>, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model)?)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint(format!("truncated file while reading {what}")));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn decode_checkpoint(mut bytes: &[u8]) -> Result<Model<f32>> {
    let cur = &mut bytes;
    if take(cur, 8, "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(cur, 4, "version")?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {VERSION})"
        )));
    }
    let hlen = u64::from_le_bytes(take(cur, 8, "header length")?.try_into().expect("8 bytes"));
    let hlen = usize::try_from(hlen).map_err(|_| Error::Checkpoint("header length overflows".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(take(cur, hlen, "header")?)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    header
        .config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("header config: {e}")))?;

    let specs = header.config.layer_specs();
    let expected = CheckpointHeader::new(&header.config, header.seed, header.step);
    if header.shapes != expected.shapes {
        return Err(Error::Checkpoint("tensor shapes do not match the header config".into()));
    }
    let total = expected.param_count;
    if total != header.param_count {
        return Err(Error::Checkpoint(format!(
            "header param_count {} but shapes hold {total}",
            header.param_count
        )));
    }
    if cur.len() != 4 * total {
        return Err(Error::Checkpoint(format!(
            "expected {} bytes of tensor data, found {}{}",
            4 * total,
            cur.len(),
            if cur.len() < 4 * total { " (truncated file)" } else { "" }
        )));
    }

    let mut read_tensor = |shape: Vec<usize>| -> Result<Tensor<f32>> {
        let n: usize = shape.iter().product();
        let raw = take(cur, 4 * n, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Tensor::new(shape, data)
    };
    let mut layers = Vec::with_capacity(specs.len());
    for spec in &specs {
        let layer = match spec {
            LayerSpec::Conv { .. } => {
                let (w, b) = spec.param_shapes().expect("conv has params");
                Layer::Conv(ConvParams::new(read_tensor(w)?, read_tensor(b)?)?)
            }
            LayerSpec::Dense { .. } => {
                let (w, b) = spec.param_shapes().expect("dense has params");
                Layer::Dense(DenseParams::new(read_tensor(w)?, read_tensor(b)?)?)
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::MaxPool => Layer::MaxPool,
            LayerSpec::Flatten { .. } => Layer::Flatten,
            LayerSpec::Dropout { rate } => Layer::Dropout(*rate),
            LayerSpec::Softmax => Layer::Softmax,
        };
        layers.push(layer);
    }
    Model::from_layers(header.config, layers, header.seed, header.step)
}

/// Read only the JSON header (cheap even for full-size models).
pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader> {
    use std::io::Read;
    let mut f = std::fs::File::open(path)
        .map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?;
    let mut fixed = [0u8; 20];
    f.read_exact(&mut fixed)
        .map_err(|_| Error::Checkpoint("truncated file while reading preamble".into()))?;
    if &fixed[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(fixed[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(fixed[12..20].try_into().expect("8 bytes")) as usize;
    let mut json = Vec::new();
    f.take(hlen as u64).read_to_end(&mut json)?;
    if json.len() != hlen {
        return Err(Error::Checkpoint("truncated file while reading header".into()));
    }
    serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}
