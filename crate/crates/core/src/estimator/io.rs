//! Model file: magic, little-endian `u64` header length, JSON header, then
//! every parameter as little-endian `f64` at the offsets the header lists.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EstimatorConfig, EstimatorError, EstimatorModel, FeatureScaling, ModelMetadata, Network};

pub const MODEL_MAGIC: &[u8; 8] = b"ESOTNET1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the blob, in `f64` elements.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: EstimatorConfig,
    scaling: FeatureScaling,
    metadata: ModelMetadata,
    tensors: Vec<TensorEntry>,
}

pub fn save_model(path: &Path, model: &EstimatorModel) -> Result<(), EstimatorError> {
    let io = |source| EstimatorError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut tensors = Vec::new();
    let mut blob = Vec::new();
    let mut offset = 0;
    for (name, shape, data) in model.network.tensors() {
        tensors.push(TensorEntry { name, shape, offset });
        offset += data.len();
        for v in data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        config: model.network.config,
        scaling: model.scaling,
        metadata: model.metadata.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    f.write_all(MODEL_MAGIC).map_err(io)?;
    f.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    f.write_all(&json).map_err(io)?;
    f.write_all(&blob).map_err(io)?;
    f.flush().map_err(io)
}

pub fn load_model(path: &Path) -> Result<EstimatorModel, EstimatorError> {
    let p = path.display().to_string();
    let fmt = |msg: String| EstimatorError::Format { path: p.clone(), msg };
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| EstimatorError::Io { path: p.clone(), source })?;
    if bytes.len() < 16 || &bytes[..8] != MODEL_MAGIC {
        return Err(fmt("not an estimator model (bad magic)".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| fmt("truncated header".into()))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| fmt(format!("header: {e}")))?;
    header.config.validate()?;
    let blob = &bytes[16 + hlen..];
    if blob.len() % 8 != 0 {
        return Err(fmt("parameter blob is not a whole number of f64 values".into()));
    }
    let values: Vec<f64> = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();

    let mut network = Network::zeros(header.config);
    let expected: Vec<(String, Vec<usize>)> = network.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
    if expected.len() != header.tensors.len() {
        return Err(fmt(format!("expected {} tensors, found {}", expected.len(), header.tensors.len())));
    }
    for ((name, shape), (entry, dst)) in expected.iter().zip(header.tensors.iter().zip(network.tensors_mut())) {
        if *name != entry.name || *shape != entry.shape {
            return Err(fmt(format!("tensor {} {:?} does not match {} {:?}", entry.name, entry.shape, name, shape)));
        }
        let src = values
            .get(entry.offset..entry.offset + dst.len())
            .ok_or_else(|| fmt(format!("tensor {} runs past the blob", entry.name)))?;
        dst.copy_from_slice(src);
    }
    if !network.is_finite() {
        return Err(fmt("non-finite parameters".into()));
    }
    Ok(EstimatorModel {
        network,
        scaling: header.scaling,
        metadata: header.metadata,
    })
}
