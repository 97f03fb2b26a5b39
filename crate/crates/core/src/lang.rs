//! Phrase embeddings: per-token vectors, mean pooling, PCA reduction.
//!
//! Two token backends exist. [`ToyEncoder`] hashes each whitespace token to
//! a fixed pseudo-random vector, which is enough to tell the synthetic
//! vocabulary apart. An embedding file supplies already-pooled vectors
//! computed elsewhere (for example, mean-pooled states of a pretrained text encoder).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One row per token, `cols` values per row.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TokenMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::invalid("token_matrix", "at least one token row is required"))?;
        let cols = first.len();
        if cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid(
                "token_matrix",
                "rows must share a positive length",
            ));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Deterministic context-free token embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyEncoder {
    dim: usize,
}

const TOY_DOMAIN: &[u8] = b"refrec-toy-token-v1\0";

impl ToyEncoder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("token embedding dim must be positive".into()));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row for a single token: SHA-256 of the token seeds a ChaCha8 stream,
    /// each 64-bit draw maps to a value in `[-1, 1]`.
    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut hasher = Sha256::new();
        hasher.update(TOY_DOMAIN);
        hasher.update(token.as_bytes());
        let seed: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..self.dim)
            .map(|_| {
                let unit = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
                2.0 * unit - 1.0
            })
            .collect()
    }

    pub fn encode(&self, phrase: &str) -> Result<TokenMatrix> {
        let rows: Vec<Vec<f64>> = phrase
            .split_whitespace()
            .map(|t| self.token_vector(t))
            .collect();
        if rows.is_empty() {
            return Err(Error::invalid("toy_encode", "phrase has no tokens"));
        }
        TokenMatrix::from_rows(&rows)
    }
}

/// Column-wise mean over tokens.
pub fn mean_pool(tokens: &TokenMatrix) -> Vec<f64> {
    let mut out = vec![0.0; tokens.cols];
    for r in 0..tokens.rows {
        for (o, v) in out.iter_mut().zip(tokens.row(r)) {
            *o += v;
        }
    }
    let n = tokens.rows as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

/// A fixed-length phrase vector after reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseEmbedding {
    pub vector: Vec<f64>,
    pub phrase: String,
}

impl PhraseEmbedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    /// A zero vector, used when the language branch is switched off.
    pub fn blank(dim: usize) -> Self {
        Self {
            vector: vec![0.0; dim],
            phrase: String::new(),
        }
    }
}

/// Principal axes of a sample set, largest variance first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k x d`, row-major; rows are orthonormal.
    pub components: Vec<f64>,
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    /// Fits the top `k` eigenvectors of the sample covariance (unbiased,
    /// divisor `n - 1`). Each component is signed so that its
    /// largest-magnitude coordinate is positive.
    pub fn fit(samples: &[Vec<f64>], k: usize) -> Result<Self> {
        let n = samples.len();
        let d = samples.first().map_or(0, Vec::len);
        if k == 0 || d == 0 {
            return Err(Error::invalid(
                "pca_fit",
                "k and the sample dimension must be positive",
            ));
        }
        if k > d {
            return Err(Error::invalid(
                "pca_fit",
                format!("k = {k} exceeds dimension {d}"),
            ));
        }
        if n < k {
            return Err(Error::invalid(
                "pca_fit",
                format!("{n} samples are not enough for {k} components"),
            ));
        }
        if samples.iter().any(|s| s.len() != d) {
            return Err(Error::invalid(
                "pca_fit",
                "samples have inconsistent lengths",
            ));
        }

        let mut mean = vec![0.0; d];
        for s in samples {
            mean.iter_mut().zip(s).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        let mut cov = DMatrix::<f64>::zeros(d, d);
        for s in samples {
            let centered: Vec<f64> = s.iter().zip(&mean).map(|(v, m)| v - m).collect();
            for i in 0..d {
                for j in i..d {
                    cov[(i, j)] += centered[i] * centered[j];
                }
            }
        }
        let denom = (n.saturating_sub(1)).max(1) as f64;
        for i in 0..d {
            for j in i..d {
                let v = cov[(i, j)] / denom;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }

        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });

        let mut components = Vec::with_capacity(k * d);
        let mut explained_variance = Vec::with_capacity(k);
        for &idx in order.iter().take(k) {
            let mut axis: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
            let pivot = axis
                .iter()
                .enumerate()
                .fold((0, 0.0_f64), |(bi, bv), (i, v)| {
                    if v.abs() > bv {
                        (i, v.abs())
                    } else {
                        (bi, bv)
                    }
                })
                .0;
            if axis[pivot] < 0.0 {
                axis.iter_mut().for_each(|v| *v = -*v);
            }
            components.extend(axis);
            explained_variance.push(eig.eigenvalues[idx].max(0.0));
        }
        Ok(Self {
            mean,
            components,
            explained_variance,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.explained_variance.len()
    }

    pub fn component(&self, i: usize) -> &[f64] {
        let d = self.input_dim();
        &self.components[i * d..(i + 1) * d]
    }

    /// `components * (v - mean)`.
    pub fn transform(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "pca_transform",
                lhs: vec![self.input_dim()],
                rhs: vec![v.len()],
            });
        }
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok((0..self.output_dim())
            .map(|i| {
                self.component(i)
                    .iter()
                    .zip(&centered)
                    .map(|(c, x)| c * x)
                    .sum()
            })
            .collect())
    }
}

/// Reads `phrase<TAB>v1,v2,...` records. Blank lines and `#` comments are
/// skipped; a repeated phrase keeps its last vector.
pub fn load_embedding_file(path: &Path) -> Result<HashMap<String, Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut table = HashMap::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (phrase, values) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected `phrase<TAB>values`".into()))?;
        if phrase.is_empty() {
            return Err(parse_err("empty phrase".into()));
        }
        let vector = values
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(format!("bad number: {e}")))?;
        match dim {
            None => dim = Some(vector.len()),
            Some(d) if d != vector.len() => {
                return Err(parse_err(format!(
                    "vector has {} values, earlier lines have {d}",
                    vector.len()
                )))
            }
            _ => {}
        }
        if table.insert(phrase.to_string(), vector).is_some() {
            log::warn!(
                "{}:{line_no}: duplicate phrase {phrase:?}, keeping the later vector",
                path.display()
            );
        }
    }
    Ok(table)
}

/// Writes records in the format [`load_embedding_file`] reads. Values use
/// the shortest representation that parses back to the same `f64`.
pub fn write_embedding_file<'a>(
    path: &Path,
    entries: impl IntoIterator<Item = (&'a str, &'a [f64])>,
) -> Result<()> {
    let mut out = String::new();
    for (phrase, vector) in entries {
        if phrase.contains('\t') || phrase.contains('\n') {
            return Err(Error::invalid(
                "write_embedding_file",
                format!("phrase {phrase:?} contains a tab or newline"),
            ));
        }
        out.push_str(phrase);
        out.push('\t');
        for (i, v) in vector.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{v}").expect("writing to a String");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Where raw (pre-PCA) phrase vectors come from.
#[derive(Debug, Clone)]
pub enum EmbeddingSource {
    Toy(ToyEncoder),
    Table {
        dim: usize,
        vectors: HashMap<String, Vec<f64>>,
    },
}

impl EmbeddingSource {
    pub fn from_file(path: &Path) -> Result<Self> {
        let vectors = load_embedding_file(path)?;
        let dim = vectors.values().next().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::format(path, "embedding file has no vectors"));
        }
        Ok(Self::Table { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Toy(enc) => enc.dim(),
            Self::Table { dim, .. } => *dim,
        }
    }

    pub fn raw_vector(&self, phrase: &str) -> Result<Vec<f64>> {
        match self {
            Self::Toy(enc) => Ok(mean_pool(&enc.encode(phrase)?)),
            Self::Table { vectors, .. } => vectors.get(phrase).cloned().ok_or_else(|| {
                Error::invalid(
                    "embedding lookup",
                    format!("no vector for phrase {phrase:?}"),
                )
            }),
        }
    }
}

/// Raw source followed by a frozen PCA projection.
#[derive(Debug, Clone)]
pub struct PhraseEmbedder {
    pub source: EmbeddingSource,
    pub pca: PcaModel,
}

impl PhraseEmbedder {
    /// Fits the projection on the distinct phrases given (normally the
    /// training split only).
    pub fn fit<'a>(
        source: EmbeddingSource,
        phrases: impl IntoIterator<Item = &'a str>,
        k: usize,
    ) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        let mut samples = Vec::new();
        for p in phrases {
            if seen.insert(p) {
                samples.push(source.raw_vector(p)?);
            }
        }
        let pca = PcaModel::fit(&samples, k)?;
        Ok(Self { source, pca })
    }

    pub fn dim(&self) -> usize {
        self.pca.output_dim()
    }

    pub fn embed(&self, phrase: &str) -> Result<PhraseEmbedding> {
        let raw = self.source.raw_vector(phrase)?;
        Ok(PhraseEmbedding {
            vector: self.pca.transform(&raw)?,
            phrase: phrase.to_string(),
        })
    }
}
