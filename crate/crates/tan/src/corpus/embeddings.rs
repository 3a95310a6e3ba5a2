//! Word-embedding text files and the model's embedding table.
//!
//! File format (word2vec text output): a header line `<vocab-size>
//! <dimension>`, then one `word v1 … vd` line per word, whitespace
//! delimited.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Vocabulary, PAD_ID};
use crate::numerics::{Scalar, Tensor};

/// How tokens missing from the embedding file get a vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OovPolicy {
    /// A per-word vector, uniform(−0.1, 0.1), seeded by FNV-1a(word) ⊕ run
    /// seed — deterministic across runs and platforms.
    #[default]
    SeededRandom,
    /// Every missing token starts from the shared `<unk>` vector.
    SharedUnknown,
}

/// Contents of an embedding text file, before vocabulary alignment.
#[derive(Debug)]
pub struct RawEmbeddings {
    vectors: HashMap<String, Vec<f64>>,
    dim: usize,
}

impl RawEmbeddings {
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let content = std::fs::read_to_string(path)?;
        Self::parse(&content)
    }

    pub fn parse(content: &str) -> Result<Self, CorpusError> {
        let mut lines = content.lines().enumerate();
        let (_, header) = lines.next().ok_or(CorpusError::EmbeddingFormat {
            line: 1,
            message: "empty file".into(),
        })?;
        let mut parts = header.split_whitespace();
        let declared: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or(CorpusError::EmbeddingFormat {
                line: 1,
                message: "header must be `<vocab-size> <dimension>`".into(),
            })?;
        let dim: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or(CorpusError::EmbeddingFormat {
                line: 1,
                message: "header must be `<vocab-size> <dimension>`".into(),
            })?;

        let mut vectors = HashMap::with_capacity(declared);
        let mut rows = 0usize;
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let mut fields = line.split_whitespace();
            let word = fields.next().expect("non-empty line has a first field");
            let values: Result<Vec<f64>, _> = fields.map(str::parse).collect();
            let values = values.map_err(|e| CorpusError::EmbeddingFormat {
                line: lineno,
                message: format!("bad float: {e}"),
            })?;
            if values.len() != dim {
                return Err(CorpusError::EmbeddingFormat {
                    line: lineno,
                    message: format!("expected {dim} values, found {}", values.len()),
                });
            }
            rows += 1;
            if vectors.contains_key(word) {
                log::warn!("duplicate embedding for {word:?} at line {lineno}; keeping the first");
            } else {
                vectors.insert(word.to_string(), values);
            }
        }
        if rows != declared {
            return Err(CorpusError::EmbeddingFormat {
                line: rows + 1,
                message: format!("header declares {declared} rows, file has {rows}"),
            });
        }
        Ok(RawEmbeddings { vectors, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(|v| v.as_slice())
    }
}

/// FNV-1a 64-bit hash; combined with the run seed it fixes each word's
/// fallback vector.
fn fnv1a(word: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in word.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn seeded_vector<T: Scalar>(word: &str, dim: usize, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(word) ^ seed);
    Tensor::<T>::rand_uniform(&[dim], -0.1, 0.1, &mut rng)
        .data()
        .to_vec()
}

/// Vocabulary-aligned embedding matrix: one row per vocabulary index.
/// The padding row is zero; all other rows come from the embedding file
/// or from the OOV policy. Immutable after construction unless embedding
/// fine-tuning is enabled in the model.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable<T> {
    vocab: Vocabulary,
    matrix: Tensor<T>,
}

impl<T: Scalar> EmbeddingTable<T> {
    /// Builds the table for `vocab`. With `raw` absent every non-padding
    /// row follows the seeded-random fallback.
    pub fn build(
        vocab: Vocabulary,
        raw: Option<&RawEmbeddings>,
        dim: usize,
        policy: OovPolicy,
        seed: u64,
    ) -> Result<Self, CorpusError> {
        if let Some(raw) = raw {
            if raw.dim() != dim {
                return Err(CorpusError::DimensionMismatch {
                    expected: dim,
                    got: raw.dim(),
                });
            }
        }
        let unk_row: Vec<T> = seeded_vector(super::UNK_TOKEN, dim, seed);
        let mut data = Vec::with_capacity(vocab.len() * dim);
        for (i, token) in vocab.tokens().iter().enumerate() {
            if i == PAD_ID {
                data.extend(std::iter::repeat(T::zero()).take(dim));
                continue;
            }
            if let Some(vec) = raw.and_then(|r| r.get(token)) {
                data.extend(vec.iter().map(|&v| T::from_f64(v)));
                continue;
            }
            match policy {
                OovPolicy::SeededRandom => data.extend(seeded_vector::<T>(token, dim, seed)),
                OovPolicy::SharedUnknown => data.extend(unk_row.iter().copied()),
            }
        }
        let matrix = Tensor::matrix(vocab.len(), dim, data).expect("row count times dim");
        Ok(EmbeddingTable { vocab, matrix })
    }

    pub fn from_parts(vocab: Vocabulary, matrix: Tensor<T>) -> Self {
        assert_eq!(vocab.len(), matrix.rows());
        EmbeddingTable { vocab, matrix }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn matrix(&self) -> &Tensor<T> {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut Tensor<T> {
        &mut self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn row(&self, id: usize) -> &[T] {
        self.matrix.row(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_loads() {
        let raw = RawEmbeddings::parse("2 3\nfood 0.1 0.2 0.3\nwine -1 0 1\n").unwrap();
        assert_eq!(raw.len(), 2);
        assert_eq!(raw.dim(), 3);
        assert_eq!(raw.get("wine").unwrap(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn wrong_arity_names_the_line() {
        let err = RawEmbeddings::parse("2 3\nfood 0.1 0.2 0.3\nwine -1 0\n").unwrap_err();
        match err {
            CorpusError::EmbeddingFormat { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn row_count_must_match_header() {
        let err = RawEmbeddings::parse("3 2\nfood 0.1 0.2\n").unwrap_err();
        assert!(matches!(err, CorpusError::EmbeddingFormat { .. }));
    }

    #[test]
    fn duplicate_word_keeps_first_occurrence() {
        let raw = RawEmbeddings::parse("2 1\nfood 1.0\nfood 2.0\n").unwrap();
        assert_eq!(raw.get("food").unwrap(), &[1.0]);
    }

    #[test]
    fn fallback_table_is_reproducible_from_the_seed() {
        let lists = [vec!["pasta".to_string(), "decor".to_string()]];
        let vocab = Vocabulary::from_corpus(lists.iter().map(|v| v.as_slice()));
        let a = EmbeddingTable::<f64>::build(vocab.clone(), None, 8, OovPolicy::SeededRandom, 7)
            .unwrap();
        let b = EmbeddingTable::<f64>::build(vocab.clone(), None, 8, OovPolicy::SeededRandom, 7)
            .unwrap();
        let c =
            EmbeddingTable::<f64>::build(vocab, None, 8, OovPolicy::SeededRandom, 8).unwrap();
        assert_eq!(a.matrix(), b.matrix());
        assert_ne!(a.matrix(), c.matrix());
        assert!(a.row(PAD_ID).iter().all(|&v| v == 0.0));
        assert!(a.row(3).iter().all(|&v| (-0.1..0.1).contains(&v)));
    }

    #[test]
    fn shared_unknown_rows_match_the_unk_row() {
        let lists = [vec!["pasta".to_string()]];
        let vocab = Vocabulary::from_corpus(lists.iter().map(|v| v.as_slice()));
        let raw = RawEmbeddings::parse("1 4\nother 1 2 3 4\n").unwrap();
        let table =
            EmbeddingTable::<f64>::build(vocab, Some(&raw), 4, OovPolicy::SharedUnknown, 1)
                .unwrap();
        assert_eq!(table.row(3), table.row(super::super::UNK_ID));
    }

    #[test]
    fn known_words_use_file_vectors() {
        let lists = [vec!["pasta".to_string()]];
        let vocab = Vocabulary::from_corpus(lists.iter().map(|v| v.as_slice()));
        let raw = RawEmbeddings::parse("1 2\npasta 0.5 -0.5\n").unwrap();
        let table =
            EmbeddingTable::<f64>::build(vocab, Some(&raw), 2, OovPolicy::SeededRandom, 1)
                .unwrap();
        assert_eq!(table.row(3), &[0.5, -0.5]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let lists = [vec!["pasta".to_string()]];
        let vocab = Vocabulary::from_corpus(lists.iter().map(|v| v.as_slice()));
        let raw = RawEmbeddings::parse("1 2\npasta 0.5 -0.5\n").unwrap();
        let err = EmbeddingTable::<f64>::build(vocab, Some(&raw), 3, OovPolicy::SeededRandom, 1)
            .unwrap_err();
        assert!(matches!(err, CorpusError::DimensionMismatch { .. }));
    }
}
