//! Tokenization and stopword removal.
//!
//! Rules: lowercase, split on Unicode whitespace, strip leading and
//! trailing non-alphanumeric characters from each token, drop tokens that
//! become empty, then drop stopwords. A sentence left with no tokens maps
//! to the single reserved [`EMPTY_TOKEN`] so test-set alignment with gold
//! labels survives preprocessing.

use std::collections::HashSet;
use std::path::Path;

use super::CorpusError;

pub const PAD_TOKEN: &str = "<pad>";
pub const EMPTY_TOKEN: &str = "<empty>";
pub const UNK_TOKEN: &str = "<unk>";

/// The stopword list. The repository embeds a fixed English list
/// (one token per line, UTF-8) so preprocessing is reproducible without
/// third-party downloads; a file can override it.
#[derive(Clone, Debug)]
pub struct Stopwords {
    words: HashSet<String>,
}

const EMBEDDED: &str = include_str!("../../assets/stopwords.txt");

impl Stopwords {
    pub fn embedded() -> Self {
        Stopwords::from_str(EMBEDDED)
    }

    pub fn from_path(path: &Path) -> Result<Self, CorpusError> {
        Ok(Stopwords::from_str(&std::fs::read_to_string(path)?))
    }

    fn from_str(s: &str) -> Self {
        Stopwords {
            words: s
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect(),
        }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.words.contains(token)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

pub fn preprocess(text: &str, stopwords: &Stopwords) -> Vec<String> {
    let mut out: Vec<String> = text
        .to_lowercase()
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|t| !t.is_empty())
        .filter(|t| !stopwords.contains(t))
        .map(str::to_string)
        .collect();
    if out.is_empty() {
        out.push(EMPTY_TOKEN.to_string());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overpriced_example_keeps_content_words() {
        let sw = Stopwords::embedded();
        assert_eq!(
            preprocess("It is very overpriced and not very tasty.", &sw),
            vec!["overpriced", "tasty"]
        );
    }

    #[test]
    fn all_punctuation_maps_to_empty_token() {
        let sw = Stopwords::embedded();
        assert_eq!(preprocess("!!!", &sw), vec![EMPTY_TOKEN]);
    }

    #[test]
    fn lowercasing_and_stopword_removal() {
        let sw = Stopwords::embedded();
        assert_eq!(preprocess("The FOOD was GREAT", &sw), vec!["food", "great"]);
    }

    #[test]
    fn inner_punctuation_survives_trimming() {
        let sw = Stopwords::embedded();
        assert_eq!(
            preprocess("\"semi-private\" (room)!", &sw),
            vec!["semi-private", "room"]
        );
    }

    #[test]
    fn all_stopwords_map_to_empty_token() {
        let sw = Stopwords::embedded();
        assert_eq!(preprocess("it is and was", &sw), vec![EMPTY_TOKEN]);
    }

    #[test]
    fn embedded_list_is_nonempty_and_lowercase() {
        let sw = Stopwords::embedded();
        assert!(sw.len() > 100);
        for w in ["it", "is", "very", "and", "not", "the", "was"] {
            assert!(sw.contains(w), "missing expected stopword {w}");
        }
    }
}
