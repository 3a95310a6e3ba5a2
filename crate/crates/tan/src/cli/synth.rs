//! Synthetic restaurant corpus with planted keyword–category structure.
//!
//! 64 sentences over four categories with disjoint keyword sets, written
//! in the 2014 XML layout together with a ready-to-run training
//! configuration, so end-to-end runs need no external data.

use std::path::{Path, PathBuf};

use rand::prelude::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::CliError;

pub const CATEGORIES: [(&str, [&str; 3]); 4] = [
    ("food", ["pasta", "burger", "sushi"]),
    ("price", ["overpriced", "cheap", "bargain"]),
    ("service", ["waiter", "rude", "attentive"]),
    ("ambience", ["decor", "cozy", "noisy"]),
];
const FILLERS: [&str; 4] = ["restaurant", "place", "evening", "visited"];
const GLUE: [&str; 6] = ["the", "was", "and", "very", "it", "is"];

pub struct SynthSentence {
    pub text: String,
    pub categories: Vec<&'static str>,
}

/// Deterministic per seed: 13 single-label sentences per category plus
/// 12 double-label ones.
pub fn generate_corpus(seed: u64) -> Vec<SynthSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sentences = Vec::with_capacity(64);

    for (cat, keywords) in CATEGORIES {
        for j in 0..13 {
            let mut content: Vec<&str> = vec![keywords[j % 3]];
            if j % 2 == 0 {
                content.push(keywords[(j + 1) % 3]);
            }
            let n_fillers = if content.len() == 1 {
                rng.gen_range(1..=2)
            } else {
                rng.gen_range(0..=2)
            };
            for _ in 0..n_fillers {
                content.push(FILLERS[rng.gen_range(0..FILLERS.len())]);
            }
            content.shuffle(&mut rng);
            sentences.push(SynthSentence {
                text: render_text(&content, &mut rng),
                categories: vec![cat],
            });
        }
    }

    let pairs = [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2), (1, 3)];
    for (round, &(a, b)) in pairs.iter().cycle().take(12).enumerate() {
        let (cat_a, kws_a) = CATEGORIES[a];
        let (cat_b, kws_b) = CATEGORIES[b];
        let mut content = vec![
            kws_a[round % 3],
            kws_b[rng.gen_range(0..3)],
        ];
        if rng.gen_bool(0.5) {
            content.push(FILLERS[rng.gen_range(0..FILLERS.len())]);
        }
        content.shuffle(&mut rng);
        sentences.push(SynthSentence {
            text: render_text(&content, &mut rng),
            categories: vec![cat_a, cat_b],
        });
    }
    sentences
}

/// Sprinkles stopword glue between content tokens; preprocessing strips
/// it, leaving exactly the planted tokens.
fn render_text(content: &[&str], rng: &mut ChaCha8Rng) -> String {
    let mut words: Vec<String> = Vec::new();
    for (i, token) in content.iter().enumerate() {
        if i == 0 || rng.gen_bool(0.6) {
            words.push(GLUE[rng.gen_range(0..GLUE.len())].to_string());
        }
        words.push(token.to_string());
    }
    let mut text = words.join(" ");
    text.push('.');
    let mut chars = text.chars();
    let first = chars.next().expect("nonempty").to_uppercase().to_string();
    format!("{first}{}", chars.as_str())
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn corpus_to_xml(sentences: &[SynthSentence]) -> String {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<sentences>\n");
    for (i, s) in sentences.iter().enumerate() {
        out.push_str(&format!("  <sentence id=\"s{i}\">\n"));
        out.push_str(&format!("    <text>{}</text>\n", xml_escape(&s.text)));
        out.push_str("    <aspectCategories>\n");
        for cat in &s.categories {
            out.push_str(&format!(
                "      <aspectCategory category=\"{cat}\" polarity=\"neutral\"/>\n"
            ));
        }
        out.push_str("    </aspectCategories>\n");
        out.push_str("  </sentence>\n");
    }
    out.push_str("</sentences>\n");
    out
}

pub struct SynthOutput {
    pub xml_path: PathBuf,
    pub config_path: PathBuf,
}

/// Writes the corpus XML and a training configuration tuned for a fast
/// from-scratch overfit on it (random embeddings, small encoder).
pub fn write_synth(out_dir: &Path, seed: u64) -> Result<SynthOutput, CliError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out_dir.display())))?;
    let xml_path = out_dir.join("synthetic_train.xml");
    let config_path = out_dir.join("synthetic_config.json");
    let corpus = generate_corpus(seed);
    std::fs::write(&xml_path, corpus_to_xml(&corpus))
        .map_err(|e| CliError::Data(e.to_string()))?;

    let config = serde_json::json!({
        "format": "semeval2014",
        "train_xml": xml_path,
        "out_dir": out_dir.join("run"),
        "embedding_dim": 64,
        "topics": 4,
        "hidden": 32,
        "p1": 16,
        "p2": 16,
        "dropout": 0.1,
        "learning_rate": 0.01,
        "batch_size": 16,
        "max_epochs": 300,
        "patience": 20,
        "threshold": 0.5,
        "seed": seed,
        "val_ratio": 0.1
    });
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).expect("static json"))
        .map_err(|e| CliError::Data(e.to_string()))?;
    Ok(SynthOutput {
        xml_path,
        config_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_semeval2014, preprocess, Stopwords};
    use std::collections::BTreeSet;

    #[test]
    fn corpus_has_64_sentences_with_planted_structure() {
        let corpus = generate_corpus(42);
        assert_eq!(corpus.len(), 64);
        let singles = corpus.iter().filter(|s| s.categories.len() == 1).count();
        assert_eq!(singles, 52);
        assert_eq!(corpus.len() - singles, 12);
    }

    #[test]
    fn keyword_sets_are_disjoint_and_survive_preprocessing() {
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        for (_, kws) in CATEGORIES {
            for kw in kws {
                assert!(seen.insert(kw), "{kw} appears in two categories");
            }
        }
        let sw = Stopwords::embedded();
        let corpus = generate_corpus(42);
        for s in &corpus {
            let tokens = preprocess(&s.text, &sw);
            for cat in &s.categories {
                let kws = CATEGORIES.iter().find(|(c, _)| c == cat).unwrap().1;
                assert!(
                    tokens.iter().any(|t| kws.contains(&t.as_str())),
                    "no {cat} keyword in {:?}",
                    tokens
                );
            }
            // Glue words are all stopwords, so only planted tokens remain.
            for t in &tokens {
                assert!(
                    CATEGORIES.iter().any(|(_, kws)| kws.contains(&t.as_str()))
                        || FILLERS.contains(&t.as_str()),
                    "unexpected token {t}"
                );
            }
        }
    }

    #[test]
    fn xml_round_trips_through_the_real_parser() {
        let corpus = generate_corpus(42);
        let xml = corpus_to_xml(&corpus);
        let parsed = parse_semeval2014(&xml).unwrap();
        assert_eq!(parsed.len(), 64);
        assert!(parsed.iter().all(|s| !s.categories.is_empty()));
        let cats: BTreeSet<&str> = parsed
            .iter()
            .flat_map(|s| s.categories.iter().map(|c| c.as_str()))
            .collect();
        assert_eq!(
            cats,
            ["AMBIENCE", "FOOD", "PRICE", "SERVICE"].into_iter().collect()
        );
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let a = corpus_to_xml(&generate_corpus(42));
        let b = corpus_to_xml(&generate_corpus(42));
        let c = corpus_to_xml(&generate_corpus(43));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
