//! Versioned binary checkpoints.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! magic "ARTRCKPT" | u32 version
//! u64 len | config text
//! u64 count | count x (u64 len | name | u32 ndim | ndim x u64 dim | f64 data...)
//! u64 count | count x (u64 len | token)           vocabulary, id order
//! u64 count | count x (u64 len | token | f64)     tf-idf weights
//! [u8; 32] seed | u64 stream | u128 word_pos      rng state
//! u64 epoch
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{Shape, Tensor};
use crate::config::{Config, ConfigError};
use crate::model::{ArTree, ModelError};
use crate::train::TrainState;
use crate::vocab::{TfidfTable, Vocabulary, UNK};

pub const MAGIC: &[u8; 8] = b"ARTRCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    Version(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("parameter {name}: checkpoint shape {found} does not match model shape {expected}")]
    ShapeMismatch { name: String, expected: Shape, found: Shape },
    #[error("checkpoint config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Everything restored from a checkpoint file.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: ArTree,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
}

impl From<Checkpoint> for TrainState {
    fn from(c: Checkpoint) -> Self {
        TrainState::from_model(c.model, c.rng, c.epoch)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let out = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn len(&mut self) -> Result<usize, CheckpointError> {
        let n = self.u64()?;
        // A length larger than the remaining bytes can only mean truncation.
        if n > (self.bytes.len() - self.pos) as u64 {
            return Err(CheckpointError::Truncated);
        }
        Ok(n as usize)
    }

    fn str(&mut self) -> Result<String, CheckpointError> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Malformed("invalid UTF-8".into()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

/// Serializes a model with the rng state and epoch counter.
pub fn encode(model: &ArTree, rng: &ChaCha8Rng, epoch: usize) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.str(&model.config.to_text());
    w.u64(model.store.len() as u64);
    for (_, name, tensor) in model.store.iter() {
        w.str(name);
        let shape = tensor.shape();
        w.u32(2);
        w.u64(shape.rows as u64);
        w.u64(shape.cols as u64);
        for &v in tensor.data() {
            w.f64(v);
        }
    }
    let tokens = model.vocab.tokens();
    w.u64(tokens.len() as u64);
    for t in tokens {
        w.str(t);
    }
    let entries = model.tfidf.sorted_entries();
    w.u64(entries.len() as u64);
    for (t, v) in entries {
        w.str(t);
        w.f64(v);
    }
    w.0.extend_from_slice(&rng.get_seed());
    w.u64(rng.get_stream());
    w.0.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    w.u64(epoch as u64);
    w.0
}

fn read_params(r: &mut Reader<'_>) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let count = r.len()?;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.str()?;
        let ndim = r.u32()?;
        let dims = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let shape = match dims[..] {
            [rows, cols] => Shape::new(rows, cols),
            [n] => Shape::vector(n),
            [] => Shape::scalar(),
            _ => return Err(CheckpointError::Malformed(format!("{name}: {ndim} dimensions"))),
        };
        let len = shape.rows.checked_mul(shape.cols).ok_or(CheckpointError::Truncated)?;
        if len.checked_mul(8).is_none_or(|b| b > r.bytes.len() - r.pos) {
            return Err(CheckpointError::Truncated);
        }
        let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        params.push((name, Tensor::new(shape, data)));
    }
    Ok(params)
}

/// Copies named parameters into `model`, failing on unknown names or shape changes.
pub fn assign_params(model: &mut ArTree, params: Vec<(String, Tensor)>) -> Result<(), CheckpointError> {
    for (name, tensor) in &params {
        let id = model
            .store
            .find(name)
            .ok_or_else(|| CheckpointError::Malformed(format!("unknown parameter {name}")))?;
        let expected = model.store.get(id).shape();
        if expected != tensor.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: name.clone(),
                expected,
                found: tensor.shape(),
            });
        }
    }
    if params.len() != model.store.len() {
        return Err(CheckpointError::Malformed(format!(
            "{} parameters stored, model has {}",
            params.len(),
            model.store.len()
        )));
    }
    model.load_params(&params)?;
    Ok(())
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len()).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let config = Config::parse_str(&r.str()?, "checkpoint")?;
    let params = read_params(&mut r)?;

    let n_tokens = r.len()?;
    let tokens = (0..n_tokens).map(|_| r.str()).collect::<Result<Vec<_>, _>>()?;
    if tokens.first().map(String::as_str) != Some(UNK) {
        return Err(CheckpointError::Malformed("vocabulary must start with the unknown token".into()));
    }
    let vocab = Vocabulary::from_tokens(tokens[1..].iter().cloned());
    if vocab.len() != tokens.len() {
        return Err(CheckpointError::Malformed("duplicate vocabulary entries".into()));
    }
    let n_weights = r.len()?;
    let weights = (0..n_weights)
        .map(|_| Ok((r.str()?, r.f64()?)))
        .collect::<Result<_, CheckpointError>>()?;
    let tfidf = TfidfTable::from_weights(weights);

    let seed: [u8; 32] = r.array()?;
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.array()?);
    let epoch = r.u64()? as usize;
    if r.pos != bytes.len() {
        return Err(CheckpointError::Malformed("trailing bytes".into()));
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);

    // Initial values are overwritten by the stored parameters.
    let mut model = ArTree::new(config, vocab, tfidf, None, &mut ChaCha8Rng::seed_from_u64(0))?;
    assign_params(&mut model, params)?;
    Ok(Checkpoint { model, rng, epoch })
}

pub fn save_checkpoint(path: &Path, model: &ArTree, rng: &ChaCha8Rng, epoch: usize) -> Result<(), CheckpointError> {
    fs::write(path, encode(model, rng, epoch)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}

/// Loads only the parameters of a checkpoint into an existing model.
pub fn load_params_into(model: &mut ArTree, path: &Path) -> Result<(), CheckpointError> {
    let c = load_checkpoint(path)?;
    let params = c.model.store.iter().map(|(_, n, t)| (n.to_string(), t.clone())).collect();
    assign_params(model, params)
}
