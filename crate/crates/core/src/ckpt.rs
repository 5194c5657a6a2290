//! Checkpoint format: a directory holding
//!   manifest.json  — dtype, model config, named tensor index
//!   weights.bin    — concatenated raw little-endian floats
//!   vocab.txt      — one token per line
//!   chars.txt      — one character per line
//! Weights are stored f64 by default; f32 payloads load losslessly into
//! the f64 compute path.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::{Charset, Vocab};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into weights.bin, in elements.
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    dtype: Dtype,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

const FORMAT: &str = "nl2sql-checkpoint-v1";

pub fn save_model(model: &Model, dir: &Path, dtype: Dtype) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    let mut bin = BufWriter::new(File::create(dir.join("weights.bin"))?);
    let mut offset = 0;
    for (_, name, tensor) in model.params.iter() {
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: tensor.shape().to_vec(),
            offset,
            len: tensor.numel(),
        });
        offset += tensor.numel();
        match dtype {
            Dtype::F64 => {
                for v in tensor.data() {
                    bin.write_all(&v.to_le_bytes())?;
                }
            }
            Dtype::F32 => {
                for v in tensor.data() {
                    bin.write_all(&(*v as f32).to_le_bytes())?;
                }
            }
        }
    }
    bin.flush()?;

    let manifest = Manifest {
        format: FORMAT.to_string(),
        dtype,
        config: model.cfg.clone(),
        tensors: entries,
    };
    let mf = File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(mf), &manifest)
        .map_err(|e| Error::Checkpoint(format!("manifest write: {e}")))?;

    let mut vf = BufWriter::new(File::create(dir.join("vocab.txt"))?);
    model.vocab.save(&mut vf)?;
    vf.flush()?;
    let mut cf = BufWriter::new(File::create(dir.join("chars.txt"))?);
    model.charset.save(&mut cf)?;
    cf.flush()?;
    Ok(())
}

pub fn load_model(dir: &Path) -> Result<Model> {
    let mf = File::open(dir.join("manifest.json"))
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", dir.display())))?;
    let manifest: Manifest = serde_json::from_reader(BufReader::new(mf))
        .map_err(|e| Error::Checkpoint(format!("manifest parse: {e}")))?;
    if manifest.format != FORMAT {
        return Err(Error::Checkpoint(format!(
            "unknown checkpoint format {:?}",
            manifest.format
        )));
    }
    let vocab = Vocab::load(
        BufReader::new(File::open(dir.join("vocab.txt"))?),
        manifest.config.embed_dim,
    )?;
    let charset = Charset::load(BufReader::new(File::open(dir.join("chars.txt"))?))?;

    // Build the architecture with placeholder weights, then overwrite every
    // tensor from the file. Name mismatches are structural errors.
    let word = Tensor::zeros(&[vocab.len(), manifest.config.embed_dim]);
    let chars = Tensor::zeros(&[charset.len(), manifest.config.embed_dim]);
    let mut model = Model::init(manifest.config.clone(), vocab, charset, word, chars, 0)?;

    let mut raw = Vec::new();
    File::open(dir.join("weights.bin"))?.read_to_end(&mut raw)?;
    let elem = match manifest.dtype {
        Dtype::F64 => 8,
        Dtype::F32 => 4,
    };

    let mut seen = 0;
    for entry in &manifest.tensors {
        let id = model.params.by_name(&entry.name).ok_or_else(|| {
            Error::Checkpoint(format!("checkpoint names unknown tensor {:?}", entry.name))
        })?;
        let start = entry.offset * elem;
        let end = start + entry.len * elem;
        if end > raw.len() {
            return Err(Error::Checkpoint(format!(
                "weights.bin too short for tensor {:?}",
                entry.name
            )));
        }
        let data: Vec<f64> = match manifest.dtype {
            Dtype::F64 => raw[start..end]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect(),
            Dtype::F32 => raw[start..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect(),
        };
        let tensor = Tensor::new(entry.shape.clone(), data)
            .map_err(|e| Error::Checkpoint(format!("tensor {:?}: {e}", entry.name)))?;
        model.params.set(id, tensor)?;
        seen += 1;
    }
    if seen != model.params.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {seen} tensors, architecture needs {}",
            model.params.len()
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::char_matrix;
    use crate::model::ModelConfig;
    use rand::SeedableRng;

    fn small_model(seed: u64) -> Model {
        let corpus = ["alpha", "beta", "gamma"];
        let vocab = Vocab::build(corpus, 6);
        let charset = Charset::build(corpus);
        let mut rng = crate::TrainRng::seed_from_u64(seed);
        let wm = Tensor::zeros(&[vocab.len(), 6]);
        let cm = char_matrix(&charset, 6, None, &mut rng).unwrap();
        let cfg = ModelConfig {
            embed_dim: 6,
            hidden: 4,
            lstm_layers: 2,
            n_cond_slots: 4,
            max_word_chars: 6,
            dropout: 0.0,
            gamma: 3.0,
        };
        Model::init(cfg, vocab, charset, wm, cm, seed).unwrap()
    }

    #[test]
    fn save_load_round_trip_bit_exact() {
        let model = small_model(42);
        let dir = tempfile::tempdir().unwrap();
        save_model(&model, dir.path(), Dtype::F64).unwrap();
        let loaded = load_model(dir.path()).unwrap();
        assert_eq!(loaded.cfg, model.cfg);
        assert_eq!(loaded.params.len(), model.params.len());
        for ((_, na, ta), (_, nb, tb)) in model.params.iter().zip(loaded.params.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta, tb, "tensor {na} must round-trip bit-exactly");
        }
    }

    #[test]
    fn f32_payload_loads() {
        let model = small_model(7);
        let dir = tempfile::tempdir().unwrap();
        save_model(&model, dir.path(), Dtype::F32).unwrap();
        let loaded = load_model(dir.path()).unwrap();
        for ((_, _, ta), (_, _, tb)) in model.params.iter().zip(loaded.params.iter()) {
            for (a, b) in ta.data().iter().zip(tb.data()) {
                assert!((a - b).abs() < 1e-6, "f32 round trip within float precision");
            }
        }
    }

    #[test]
    fn missing_checkpoint_is_a_checkpoint_error() {
        match load_model(Path::new("/nonexistent/ckpt")) {
            Err(Error::Checkpoint(_)) => {}
            Err(other) => panic!("unexpected error {other}"),
            Ok(_) => panic!("load of a missing checkpoint must fail"),
        }
    }
}
