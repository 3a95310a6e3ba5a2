//! Corpus handling: SemEval review XML, preprocessing, vocabulary,
//! embeddings, and train/validation splitting.

mod embeddings;
mod preprocess;
mod semeval;
mod split;

pub use embeddings::{EmbeddingTable, OovPolicy, RawEmbeddings};
pub use preprocess::{preprocess, Stopwords, EMPTY_TOKEN, PAD_TOKEN, UNK_TOKEN};
pub use semeval::{parse_semeval2014, parse_semeval2016};
pub use split::{filter_unlabeled, stratified_split};

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::numerics::Scalar;

#[derive(Debug)]
pub enum CorpusError {
    Io(std::io::Error),
    /// Malformed XML, with the 1-based position reported by the parser.
    Xml {
        line: u32,
        col: u32,
        message: String,
    },
    /// Well-formed XML that does not follow the expected schema.
    Schema(String),
    /// Embedding text file violates the declared header or row arity.
    EmbeddingFormat {
        line: usize,
        message: String,
    },
    /// Embedding file dimension differs from the configured dimension.
    DimensionMismatch {
        expected: usize,
        got: usize,
    },
    Json(serde_json::Error),
}

impl fmt::Display for CorpusError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorpusError::Io(e) => write!(f, "i/o error: {e}"),
            CorpusError::Xml { line, col, message } => {
                write!(f, "xml parse error at {line}:{col}: {message}")
            }
            CorpusError::Schema(msg) => write!(f, "schema error: {msg}"),
            CorpusError::EmbeddingFormat { line, message } => {
                write!(f, "embedding file, line {line}: {message}")
            }
            CorpusError::DimensionMismatch { expected, got } => {
                write!(f, "embedding dimension {got} does not match configured {expected}")
            }
            CorpusError::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for CorpusError {}

impl From<std::io::Error> for CorpusError {
    fn from(e: std::io::Error) -> Self {
        CorpusError::Io(e)
    }
}

impl From<serde_json::Error> for CorpusError {
    fn from(e: serde_json::Error) -> Self {
        CorpusError::Json(e)
    }
}

/// A review sentence as read from a dataset file: surface text plus the
/// gold category set. Categories may be empty (kept for test sets).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSentence {
    pub id: String,
    pub text: String,
    pub categories: BTreeSet<String>,
}

/// Fixed, ordered category list. Label vectors and the per-category output
/// heads index into it, so the order never changes once a model exists.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryInventory {
    names: Vec<String>,
}

impl CategoryInventory {
    /// Collects the distinct categories of a labeled corpus in sorted
    /// order, which makes the inventory independent of file ordering.
    pub fn from_sentences(sentences: &[RawSentence]) -> Self {
        let set: BTreeSet<String> = sentences
            .iter()
            .flat_map(|s| s.categories.iter().cloned())
            .collect();
        CategoryInventory {
            names: set.into_iter().collect(),
        }
    }

    pub fn from_names(names: Vec<String>) -> Self {
        CategoryInventory { names }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// 0/1 label vector for a category set; categories outside the
    /// inventory are ignored here and validated by the callers that care.
    pub fn label_vector(&self, categories: &BTreeSet<String>) -> Vec<bool> {
        self.names.iter().map(|n| categories.contains(n)).collect()
    }
}

/// Token-indexed lookup shared by the embedding table and the encoder.
/// Index 0 is padding, 1 the empty-sentence marker, 2 the unknown token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_corpus<'a>(token_lists: impl Iterator<Item = &'a [String]>) -> Self {
        let mut vocab = Vocabulary::reserved();
        for tokens in token_lists {
            for token in tokens {
                vocab.intern(token);
            }
        }
        vocab
    }

    fn reserved() -> Self {
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in [PAD_TOKEN, EMPTY_TOKEN, UNK_TOKEN] {
            vocab.intern(t);
        }
        vocab
    }

    /// Rebuilds the lookup map from a stored token list.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }

    fn intern(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let i = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), i);
        i
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of `token`, falling back to the unknown-token row.
    pub fn get_or_unk(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub const PAD_ID: usize = 0;
pub const EMPTY_ID: usize = 1;
pub const UNK_ID: usize = 2;

/// A preprocessed, encoded sentence ready for the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<String>,
    pub token_ids: Vec<usize>,
    /// 0/1 membership per inventory position.
    pub labels: Vec<bool>,
}

impl Sentence {
    pub fn encode(
        raw: &RawSentence,
        stopwords: &Stopwords,
        vocab: &Vocabulary,
        inventory: &CategoryInventory,
    ) -> Self {
        let tokens = preprocess(&raw.text, stopwords);
        let token_ids = tokens.iter().map(|t| vocab.get_or_unk(t)).collect();
        Sentence {
            id: raw.id.clone(),
            tokens,
            token_ids,
            labels: inventory.label_vector(&raw.categories),
        }
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn gold_indices(&self) -> BTreeSet<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| if l { Some(i) } else { None })
            .collect()
    }

    pub fn target_vector<T: Scalar>(&self) -> Vec<T> {
        self.labels
            .iter()
            .map(|&l| if l { T::one() } else { T::zero() })
            .collect()
    }
}

/// Canonical on-disk corpus form:
/// `{"inventory": [...], "sentences": [{"id", "tokens", "categories"}]}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusFile {
    pub inventory: Vec<String>,
    pub sentences: Vec<CorpusFileSentence>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusFileSentence {
    pub id: String,
    pub tokens: Vec<String>,
    pub categories: BTreeSet<String>,
}

impl CorpusFile {
    pub fn build(
        inventory: &CategoryInventory,
        raws: &[RawSentence],
        stopwords: &Stopwords,
    ) -> Self {
        CorpusFile {
            inventory: inventory.names().to_vec(),
            sentences: raws
                .iter()
                .map(|r| CorpusFileSentence {
                    id: r.id.clone(),
                    tokens: preprocess(&r.text, stopwords),
                    categories: r.categories.clone(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String, CorpusError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, CorpusError> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(id: &str, text: &str, cats: &[&str]) -> RawSentence {
        RawSentence {
            id: id.to_string(),
            text: text.to_string(),
            categories: cats.iter().map(|c| c.to_string()).collect(),
        }
    }

    #[test]
    fn inventory_order_is_sorted_and_stable() {
        let sentences = vec![
            raw("1", "x", &["SERVICE", "FOOD"]),
            raw("2", "y", &["AMBIENCE"]),
        ];
        let inv = CategoryInventory::from_sentences(&sentences);
        assert_eq!(inv.names(), &["AMBIENCE", "FOOD", "SERVICE"]);
        assert_eq!(inv.position("FOOD"), Some(1));
    }

    #[test]
    fn label_vector_follows_inventory_order() {
        let inv = CategoryInventory::from_names(vec!["A".into(), "B".into(), "C".into()]);
        let cats: BTreeSet<String> = ["C", "A"].iter().map(|s| s.to_string()).collect();
        assert_eq!(inv.label_vector(&cats), vec![true, false, true]);
    }

    #[test]
    fn vocabulary_reserves_special_tokens() {
        let vocab = Vocabulary::from_corpus(std::iter::empty());
        assert_eq!(vocab.get(PAD_TOKEN), Some(PAD_ID));
        assert_eq!(vocab.get(EMPTY_TOKEN), Some(EMPTY_ID));
        assert_eq!(vocab.get(UNK_TOKEN), Some(UNK_ID));
        assert_eq!(vocab.get_or_unk("never-seen"), UNK_ID);
    }

    #[test]
    fn encode_decode_round_trips_known_tokens() {
        let lists = [vec!["pasta".to_string(), "overpriced".to_string()]];
        let vocab = Vocabulary::from_corpus(lists.iter().map(|v| v.as_slice()));
        for token in &lists[0] {
            let id = vocab.get(token).unwrap();
            assert_eq!(vocab.token(id), token);
        }
    }

    proptest! {
        #[test]
        fn corpus_json_round_trip(
            ids in proptest::collection::vec("[a-z0-9:]{1,8}", 1..8),
            cats in proptest::collection::vec(proptest::collection::btree_set("[A-Z#/]{1,10}", 0..3), 1..8),
        ) {
            let n = ids.len().min(cats.len());
            let file = CorpusFile {
                inventory: vec!["FOOD".into(), "PRICE".into()],
                sentences: (0..n).map(|i| CorpusFileSentence {
                    id: format!("{}-{}", ids[i], i),
                    tokens: vec!["token".into()],
                    categories: cats[i].clone(),
                }).collect(),
            };
            let parsed = CorpusFile::from_json(&file.to_json().unwrap()).unwrap();
            prop_assert_eq!(parsed, file);
        }
    }
}
