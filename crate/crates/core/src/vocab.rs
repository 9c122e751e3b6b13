//! Vocabulary, word vectors, tf-idf weights and dataset ingestion.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde_json::Value;
use thiserror::Error;

use crate::autodiff::{Shape, Tensor};

pub const UNK: &str = "<unk>";
pub const UNK_ID: usize = 0;

/// Half-width of the uniform range used for rows without a pretrained vector.
pub const OOV_INIT_RANGE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("min_freq must be at least 1")]
    MinFreq,
    #[error("empty token list")]
    EmptyTokens,
    #[error("embedding dimension must be positive")]
    ZeroDim,
}

/// Lowercases and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Bijective token/id mapping with id 0 reserved for unknown tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    ids: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Builds a vocabulary from an explicit token list (after the unknown token).
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary {
            ids: HashMap::from([(UNK.to_string(), UNK_ID)]),
            tokens: vec![UNK.to_string()],
        };
        for t in tokens {
            let t = t.into();
            if !vocab.ids.contains_key(&t) {
                vocab.ids.insert(t.clone(), vocab.tokens.len());
                vocab.tokens.push(t);
            }
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`, or [`UNK_ID`].
    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }
}

/// Collects tokens with frequency at least `min_freq`, ordered by descending
/// frequency and then lexicographically.
pub fn build_vocab<'a, I, S>(corpus: I, min_freq: usize) -> Result<Vocabulary, DataError>
where
    I: IntoIterator<Item = &'a [S]>,
    S: AsRef<str> + 'a,
{
    if min_freq == 0 {
        return Err(DataError::MinFreq);
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut seen_any = false;
    for sentence in corpus {
        seen_any = true;
        for tok in sentence {
            *counts.entry(tok.as_ref()).or_default() += 1;
        }
    }
    if !seen_any || counts.is_empty() {
        return Err(DataError::EmptyCorpus);
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_freq && t != UNK)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(Vocabulary::from_tokens(kept.into_iter().map(|(t, _)| t)))
}

/// `V x D_x` word-vector matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
    pub finetune: bool,
}

impl EmbeddingTable {
    /// Every row drawn uniformly from `[-0.05, 0.05]`.
    pub fn random(vocab_size: usize, dim: usize, finetune: bool, rng: &mut impl Rng) -> Self {
        let matrix = Tensor::from_fn(Shape::new(vocab_size, dim), |_| {
            rng.gen_range(-OOV_INIT_RANGE..=OOV_INIT_RANGE)
        });
        EmbeddingTable { matrix, finetune }
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape().cols
    }

    pub fn rows(&self) -> usize {
        self.matrix.shape().rows
    }

    /// Row `i` is the vector of `ids[i]`.
    pub fn lookup(&self, ids: &[usize]) -> Result<Tensor, DataError> {
        if ids.is_empty() {
            return Err(DataError::EmptyTokens);
        }
        let dim = self.dim();
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            data.extend_from_slice(self.matrix.row(id));
        }
        Ok(Tensor::matrix(ids.len(), dim, data))
    }
}

/// Token lookup into an embedding table, unknown tokens mapping to the
/// reserved row.
pub fn lookup<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, table: &EmbeddingTable) -> Result<Tensor, DataError> {
    table.lookup(&vocab.encode(tokens))
}

/// Reads whitespace-separated word vectors (`token v1 ... v_dim` per line).
///
/// Tokens found in both the file and `vocab` get the file's vector; all other
/// rows, including the unknown row, are drawn from `rng`.
pub fn load_pretrained(
    path: &Path,
    dim: usize,
    vocab: &Vocabulary,
    finetune: bool,
    rng: &mut impl Rng,
) -> Result<EmbeddingTable, DataError> {
    if dim == 0 {
        return Err(DataError::ZeroDim);
    }
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut table = EmbeddingTable::random(vocab.len(), dim, finetune, rng);
    let parse_err = |line: usize, message: String| DataError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().unwrap_or_default();
        let values: Vec<&str> = fields.collect();
        if values.len() != dim {
            return Err(parse_err(
                line_no,
                format!("expected {dim} values after token, found {}", values.len()),
            ));
        }
        let mut row = Vec::with_capacity(dim);
        for v in values {
            row.push(
                v.parse::<f64>()
                    .map_err(|_| parse_err(line_no, format!("cannot parse {v:?} as a number")))?,
            );
        }
        if let Some(&id) = vocab.ids.get(token) {
            table.matrix.row_mut(id).copy_from_slice(&row);
        }
    }
    Ok(table)
}

/// Smoothed tf-idf weights computed over a corpus of sentences.
///
/// `tf = count(w) / total tokens`, `idf = ln((1 + docs) / (1 + df(w))) + 1`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TfidfTable {
    weights: HashMap<String, f64>,
}

impl TfidfTable {
    pub fn from_weights(weights: HashMap<String, f64>) -> Self {
        TfidfTable { weights }
    }

    /// Zero for tokens absent from the corpus.
    pub fn weight(&self, token: &str) -> f64 {
        self.weights.get(token).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Entries sorted by token.
    pub fn sorted_entries(&self) -> Vec<(&str, f64)> {
        let mut v: Vec<(&str, f64)> = self.weights.iter().map(|(k, &w)| (k.as_str(), w)).collect();
        v.sort_by(|a, b| a.0.cmp(b.0));
        v
    }
}

pub fn compute_tfidf<'a, I, S>(corpus: I) -> TfidfTable
where
    I: IntoIterator<Item = &'a [S]>,
    S: AsRef<str> + 'a,
{
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut doc_freq: HashMap<&str, usize> = HashMap::new();
    let mut total_tokens = 0usize;
    let mut docs = 0usize;
    for sentence in corpus {
        docs += 1;
        let mut seen: Vec<&str> = Vec::new();
        for tok in sentence {
            let tok = tok.as_ref();
            total_tokens += 1;
            *counts.entry(tok).or_default() += 1;
            if !seen.contains(&tok) {
                seen.push(tok);
                *doc_freq.entry(tok).or_default() += 1;
            }
        }
    }
    if total_tokens == 0 {
        return TfidfTable::default();
    }
    let weights = counts
        .into_iter()
        .map(|(tok, count)| {
            let tf = count as f64 / total_tokens as f64;
            let idf = ((1.0 + docs as f64) / (1.0 + doc_freq[tok] as f64)).ln() + 1.0;
            (tok.to_string(), tf * idf)
        })
        .collect();
    TfidfTable { weights }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LabeledExample {
    Single {
        tokens: Vec<String>,
        label: usize,
    },
    Pair {
        premise: Vec<String>,
        hypothesis: Vec<String>,
        label: usize,
    },
}

impl LabeledExample {
    pub fn label(&self) -> usize {
        match self {
            LabeledExample::Single { label, .. } | LabeledExample::Pair { label, .. } => *label,
        }
    }

    /// One token list for single-sentence records, two for pairs.
    pub fn sentences(&self) -> Vec<&[String]> {
        match self {
            LabeledExample::Single { tokens, .. } => vec![tokens],
            LabeledExample::Pair { premise, hypothesis, .. } => vec![premise, hypothesis],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetFormat {
    Single,
    Pair,
}

/// How raw label fields map to class ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSet {
    names: Vec<String>,
    num_classes: usize,
}

impl LabelSet {
    /// Integer labels `0..num_classes`.
    pub fn numeric(num_classes: usize) -> Self {
        LabelSet {
            names: Vec::new(),
            num_classes,
        }
    }

    /// String labels, class id = position in `names`. Integers are also accepted.
    pub fn named(names: Vec<String>) -> Self {
        let num_classes = names.len();
        LabelSet { names, num_classes }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn resolve(&self, value: &Value) -> Result<usize, String> {
        match value {
            Value::Number(n) => {
                let id = n
                    .as_u64()
                    .ok_or_else(|| format!("label {n} is not a non-negative integer"))? as usize;
                if id >= self.num_classes {
                    return Err(format!("label {id} out of range for {} classes", self.num_classes));
                }
                Ok(id)
            }
            Value::String(s) => self
                .names
                .iter()
                .position(|n| n == s)
                .ok_or_else(|| format!("unknown label {s:?}")),
            other => Err(format!("label must be a number or string, got {other}")),
        }
    }
}

/// Reads line-delimited JSON records.
///
/// Single: `{"sentence": ..., "label": ...}`; pair:
/// `{"premise": ..., "hypothesis": ..., "label": ...}`. Blank lines are skipped.
pub fn read_dataset(path: &Path, format: DatasetFormat, labels: &LabelSet) -> Result<Vec<LabeledExample>, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_dataset(&text, format, labels).map_err(|(line, message)| DataError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    })
}

/// Parses dataset text; errors carry the 1-based line number.
pub fn parse_dataset(
    text: &str,
    format: DatasetFormat,
    labels: &LabelSet,
) -> Result<Vec<LabeledExample>, (usize, String)> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: Value = serde_json::from_str(line).map_err(|e| (line_no, format!("invalid record: {e}")))?;
        let field = |name: &str| -> Result<&Value, (usize, String)> {
            record
                .get(name)
                .ok_or_else(|| (line_no, format!("missing field {name:?}")))
        };
        let text_field = |name: &str| -> Result<Vec<String>, (usize, String)> {
            let v = field(name)?
                .as_str()
                .ok_or_else(|| (line_no, format!("field {name:?} must be a string")))?;
            let tokens = tokenize(v);
            if tokens.is_empty() {
                return Err((line_no, format!("field {name:?} has no tokens")));
            }
            Ok(tokens)
        };
        let example = match format {
            DatasetFormat::Single => {
                let tokens = text_field("sentence")?;
                let label = labels.resolve(field("label")?).map_err(|m| (line_no, m))?;
                LabeledExample::Single { tokens, label }
            }
            DatasetFormat::Pair => {
                let premise = text_field("premise")?;
                let hypothesis = text_field("hypothesis")?;
                let label = labels.resolve(field("label")?).map_err(|m| (line_no, m))?;
                LabeledExample::Pair {
                    premise,
                    hypothesis,
                    label,
                }
            }
        };
        out.push(example);
    }
    Ok(out)
}
