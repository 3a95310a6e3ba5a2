//! Parsers for the two SemEval restaurant-review XML layouts.
//!
//! 2014 task-4 format:
//! ```xml
//! <sentences>
//!   <sentence id="813">
//!     <text>All the money went into the interior decoration...</text>
//!     <aspectCategories>
//!       <aspectCategory category="food" polarity="negative"/>
//!     </aspectCategories>
//!   </sentence>
//! </sentences>
//! ```
//!
//! 2016 task-5 format:
//! ```xml
//! <Reviews>
//!   <Review rid="1004293">
//!     <sentences>
//!       <sentence id="1004293:0">
//!         <text>Judging from previous posts...</text>
//!         <Opinions>
//!           <Opinion category="RESTAURANT#GENERAL" polarity="negative"/>
//!         </Opinions>
//!       </sentence>
//!     </sentences>
//!   </Review>
//! </Reviews>
//! ```
//!
//! Category names are uppercased into the inventory form; duplicates
//! within one sentence collapse to a set.

use std::collections::BTreeSet;

use super::{CorpusError, RawSentence};

fn xml_error(doc: &str, e: roxmltree::Error) -> CorpusError {
    let _ = doc;
    let pos = e.pos();
    CorpusError::Xml {
        line: pos.row,
        col: pos.col,
        message: e.to_string(),
    }
}

fn sentence_text(node: roxmltree::Node) -> Result<String, CorpusError> {
    let text_node = node
        .children()
        .find(|c| c.has_tag_name("text"))
        .ok_or_else(|| CorpusError::Schema("sentence element without <text>".into()))?;
    Ok(text_node.text().unwrap_or("").to_string())
}

fn sentence_id(node: roxmltree::Node) -> Result<String, CorpusError> {
    let id = node
        .attribute("id")
        .ok_or_else(|| CorpusError::Schema("sentence element without id attribute".into()))?;
    if id.is_empty() {
        return Err(CorpusError::Schema("empty sentence id".into()));
    }
    Ok(id.to_string())
}

fn collect_sentences<F>(
    xml: &str,
    expected_root: &[&str],
    categories_of: F,
) -> Result<Vec<RawSentence>, CorpusError>
where
    F: Fn(roxmltree::Node) -> BTreeSet<String>,
{
    let doc = roxmltree::Document::parse(xml).map_err(|e| xml_error(xml, e))?;
    let root = doc.root_element();
    if !expected_root.contains(&root.tag_name().name()) {
        return Err(CorpusError::Schema(format!(
            "unexpected root element <{}>, expected one of {:?}",
            root.tag_name().name(),
            expected_root
        )));
    }
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for node in doc.descendants().filter(|n| n.has_tag_name("sentence")) {
        let id = sentence_id(node)?;
        if !seen.insert(id.clone()) {
            return Err(CorpusError::Schema(format!("duplicate sentence id {id}")));
        }
        out.push(RawSentence {
            id,
            text: sentence_text(node)?,
            categories: categories_of(node),
        });
    }
    if out.is_empty() {
        return Err(CorpusError::Schema("no sentence elements found".into()));
    }
    Ok(out)
}

/// SemEval-2014 task-4 restaurant file → one [`RawSentence`] per
/// `<sentence>`; categories come from `aspectCategory` attributes.
pub fn parse_semeval2014(xml: &str) -> Result<Vec<RawSentence>, CorpusError> {
    collect_sentences(xml, &["sentences"], |node| {
        node.descendants()
            .filter(|n| n.has_tag_name("aspectCategory"))
            .filter_map(|n| n.attribute("category"))
            .map(|c| c.to_uppercase())
            .collect()
    })
}

/// SemEval-2016 task-5 restaurant file → one [`RawSentence`] per
/// `<sentence>`; categories come from `Opinion` elements and keep the
/// `ASPECT#ATTRIBUTE` form.
pub fn parse_semeval2016(xml: &str) -> Result<Vec<RawSentence>, CorpusError> {
    collect_sentences(xml, &["Reviews"], |node| {
        node.descendants()
            .filter(|n| n.has_tag_name("Opinion"))
            .filter_map(|n| n.attribute("category"))
            .map(|c| c.to_uppercase())
            .collect()
    })
}
