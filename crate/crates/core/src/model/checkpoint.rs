//! Self-describing binary checkpoints. A file carries everything
//! needed to rebuild a predictor: the model and context configuration
//! as a key/value section, the vocabulary in id order, and every
//! parameter tensor by name as little-endian `f32`, so a save/load
//! round trip reproduces the forward pass bit for bit.

use super::params::ParamSet;
use super::tensor::Tensor2;
use super::{ModelConfig, ModelError};
use crate::context::ContextSettings;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

/// Format revision written after the magic bytes.
pub const CHECKPOINT_VERSION: u32 = 1;

const MAGIC: &[u8; 4] = b"TBCP";
/// Upper bound on any length-prefixed string, to fail fast on corrupt
/// prefixes instead of allocating garbage.
const MAX_STRING: u32 = 1 << 20;
/// Upper bound on elements in a single tensor.
const MAX_ELEMENTS: u64 = 1 << 28;

/// A complete trained model: configuration, vocabulary, and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub context: ContextSettings,
    /// Whether the vocabulary was built over lowercased text.
    pub lowercase: bool,
    /// Tokens in id order, exactly as the tokenizer holds them.
    pub vocab: Vec<String>,
    pub params: ParamSet,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {CHECKPOINT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("checkpoint config is missing key {0:?}")]
    MissingKey(String),
    #[error("checkpoint config has unknown key {0:?}")]
    UnknownKey(String),
    #[error("checkpoint config key {key:?} has unreadable value {value:?}")]
    BadValue { key: String, value: String },
    #[error("checkpoint is missing tensor {0:?}")]
    MissingTensor(String),
    #[error("checkpoint has unknown tensor {0:?}")]
    UnknownTensor(String),
    #[error("checkpoint lists tensor {0:?} twice")]
    DuplicateTensor(String),
    #[error("tensor {name} has shape {got:?}, expected {expected:?}")]
    TensorShape { name: String, expected: (usize, usize), got: (usize, usize) },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<(), CheckpointError> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn write_string(w: &mut impl Write, s: &str) -> Result<(), CheckpointError> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_string(r: &mut impl Read) -> Result<String, CheckpointError> {
    let len = read_u32(r)?;
    if len > MAX_STRING {
        return Err(CheckpointError::Corrupt(format!("string length {len} exceeds limit")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| CheckpointError::Corrupt("string is not utf-8".into()))
}

impl Checkpoint {
    /// The key/value view of the configuration, in the order it is
    /// written.
    fn config_pairs(&self) -> BTreeMap<String, String> {
        let mut kv = BTreeMap::new();
        kv.insert("d_model".into(), self.model.d_model.to_string());
        kv.insert("n_layers".into(), self.model.n_layers.to_string());
        kv.insert("n_heads".into(), self.model.n_heads.to_string());
        kv.insert("d_ff".into(), self.model.d_ff.to_string());
        kv.insert("dropout".into(), self.model.dropout.to_string());
        kv.insert("label_space".into(), self.model.label_space.as_str().to_string());
        kv.insert("seed".into(), self.model.seed.to_string());
        kv.insert("scope".into(), self.context.scope.as_str().to_string());
        kv.insert("metadata_mode".into(), self.context.metadata_mode.as_str().to_string());
        kv.insert("max_tokens".into(), self.context.max_tokens.to_string());
        kv.insert("team_slots".into(), self.context.team_slots.to_string());
        kv.insert("player_slots".into(), self.context.player_slots.to_string());
        kv.insert("lowercase".into(), self.lowercase.to_string());
        kv
    }

    pub fn save(&self, w: &mut impl Write) -> Result<(), CheckpointError> {
        w.write_all(MAGIC)?;
        write_u32(w, CHECKPOINT_VERSION)?;

        let kv = self.config_pairs();
        write_u32(w, kv.len() as u32)?;
        for (key, value) in &kv {
            write_string(w, key)?;
            write_string(w, value)?;
        }

        write_u32(w, self.vocab.len() as u32)?;
        for token in &self.vocab {
            write_string(w, token)?;
        }

        let tensors = self.params.visit();
        write_u32(w, tensors.len() as u32)?;
        for (name, tensor) in tensors {
            write_string(w, &name)?;
            write_u32(w, tensor.rows() as u32)?;
            write_u32(w, tensor.cols() as u32)?;
            for &v in tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(r: &mut impl Read) -> Result<Checkpoint, CheckpointError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }

        let n_keys = read_u32(r)?;
        let mut kv = BTreeMap::new();
        for _ in 0..n_keys {
            let key = read_string(r)?;
            let value = read_string(r)?;
            kv.insert(key, value);
        }
        let mut take = |key: &str| {
            kv.remove(key).ok_or_else(|| CheckpointError::MissingKey(key.to_string()))
        };
        fn parse<T: std::str::FromStr>(key: &str, value: String) -> Result<T, CheckpointError> {
            value
                .parse()
                .map_err(|_| CheckpointError::BadValue { key: key.to_string(), value })
        }
        let model = ModelConfig {
            d_model: parse("d_model", take("d_model")?)?,
            n_layers: parse("n_layers", take("n_layers")?)?,
            n_heads: parse("n_heads", take("n_heads")?)?,
            d_ff: parse("d_ff", take("d_ff")?)?,
            dropout: parse("dropout", take("dropout")?)?,
            label_space: parse("label_space", take("label_space")?)?,
            seed: parse("seed", take("seed")?)?,
        };
        let context = ContextSettings {
            scope: parse("scope", take("scope")?)?,
            metadata_mode: parse("metadata_mode", take("metadata_mode")?)?,
            max_tokens: parse("max_tokens", take("max_tokens")?)?,
            team_slots: parse("team_slots", take("team_slots")?)?,
            player_slots: parse("player_slots", take("player_slots")?)?,
        };
        let lowercase = parse("lowercase", take("lowercase")?)?;
        if let Some(stray) = kv.into_keys().next() {
            return Err(CheckpointError::UnknownKey(stray));
        }
        model.validate()?;

        let n_tokens = read_u32(r)?;
        let mut vocab = Vec::with_capacity(n_tokens as usize);
        for _ in 0..n_tokens {
            vocab.push(read_string(r)?);
        }

        // Shapes come from the configuration, so name and shape checks
        // catch files whose header and payload disagree.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ParamSet::init(&model, &context, vocab.len(), &mut rng);
        let mut expected: BTreeMap<String, (usize, usize)> =
            params.visit().into_iter().map(|(name, t)| (name, t.shape())).collect();
        let n_tensors = read_u32(r)?;
        let mut loaded: BTreeMap<String, Tensor2> = BTreeMap::new();
        for _ in 0..n_tensors {
            let name = read_string(r)?;
            let rows = read_u32(r)? as usize;
            let cols = read_u32(r)? as usize;
            if (rows as u64).saturating_mul(cols as u64) > MAX_ELEMENTS {
                return Err(CheckpointError::Corrupt(format!(
                    "tensor {name} claims {rows}×{cols} elements"
                )));
            }
            let Some(shape) = expected.remove(&name) else {
                return Err(if loaded.contains_key(&name) {
                    CheckpointError::DuplicateTensor(name)
                } else {
                    CheckpointError::UnknownTensor(name)
                });
            };
            if shape != (rows, cols) {
                return Err(CheckpointError::TensorShape {
                    name,
                    expected: shape,
                    got: (rows, cols),
                });
            }
            let mut tensor = Tensor2::zeros(rows, cols);
            let mut buf = [0u8; 4];
            for v in tensor.data_mut() {
                r.read_exact(&mut buf)?;
                *v = f32::from_le_bytes(buf);
            }
            loaded.insert(name, tensor);
        }
        if let Some(missing) = expected.into_keys().next() {
            return Err(CheckpointError::MissingTensor(missing));
        }
        for (name, slot) in params.visit_mut() {
            *slot = loaded.remove(&name).expect("every expected tensor was loaded");
        }

        Ok(Checkpoint { model, context, lowercase, vocab, params })
    }

    pub fn save_to_path(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.save(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_from_path(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
        let file = std::fs::File::open(path)?;
        Checkpoint::load(&mut std::io::BufReader::new(file))
    }
}
