//! Sparse tf-idf text features over question body, title, and tags.
//!
//! The model is fit on a training corpus only and then applied to any row,
//! so test-set vocabulary never influences the feature space. Each of the
//! three fields gets its own vocabulary, capped by document frequency, and
//! each document's field vector is L2-normalized independently.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

/// Splits text into lowercase alphanumeric runs of length two or more.
/// Single-character runs are dropped as noise.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(|t| t.to_lowercase())
        .collect()
}

/// Vocabulary caps per field, counted in distinct terms.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TextConfig {
    pub body_cap: usize,
    pub title_cap: usize,
    pub tags_cap: usize,
}

impl Default for TextConfig {
    fn default() -> Self {
        TextConfig { body_cap: 500, title_cap: 300, tags_cap: 200 }
    }
}

/// Borrowed view of one document's text fields. `body_plain` must already
/// have markup and code stripped; code tokens are not part of the model.
#[derive(Debug, Clone, Copy)]
pub struct DocText<'a> {
    pub body_plain: &'a str,
    pub title: &'a str,
    pub tags: &'a [String],
}

/// Per-field vocabulary with inverse document frequencies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldModel {
    vocab: Vec<String>,
    idf: Vec<f64>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl FieldModel {
    /// Fits a vocabulary of at most `cap` terms from tokenized documents.
    /// Terms are ranked by document frequency, ties broken lexicographically
    /// so the vocabulary is deterministic. idf = ln((1 + N) / (1 + df)) + 1.
    fn fit(docs: &[Vec<String>], cap: usize) -> FieldModel {
        let n_docs = docs.len();
        let mut df: HashMap<&str, u64> = HashMap::new();
        let mut seen: Vec<&str> = Vec::new();
        for doc in docs {
            seen.clear();
            for term in doc {
                if !seen.contains(&term.as_str()) {
                    seen.push(term);
                    *df.entry(term).or_insert(0) += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, u64)> = df.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(cap);
        let vocab: Vec<String> = ranked.iter().map(|(t, _)| t.to_string()).collect();
        let idf: Vec<f64> = ranked
            .iter()
            .map(|(_, df)| ((1.0 + n_docs as f64) / (1.0 + *df as f64)).ln() + 1.0)
            .collect();
        let mut model = FieldModel { vocab, idf, index: HashMap::new() };
        model.rebuild_index();
        model
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    pub fn width(&self) -> usize {
        self.vocab.len()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    /// tf-idf weights for one tokenized document, L2-normalized, sorted by
    /// column index. Documents with no in-vocabulary terms yield an empty
    /// vector rather than a NaN-filled one.
    fn transform(&self, doc_tokens: &[String]) -> Vec<(u32, f64)> {
        let mut tf: HashMap<u32, f64> = HashMap::new();
        for term in doc_tokens {
            if let Some(&col) = self.index.get(term.as_str()) {
                *tf.entry(col).or_insert(0.0) += 1.0;
            }
        }
        let mut weights: Vec<(u32, f64)> = tf
            .into_iter()
            .map(|(col, count)| (col, count * self.idf[col as usize]))
            .collect();
        let norm = weights.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, w) in weights.iter_mut() {
                *w /= norm;
            }
        }
        weights.sort_by_key(|(col, _)| *col);
        weights
    }
}

/// Fitted tf-idf model over the three text fields. Column layout of the
/// combined sparse row is body, then title, then tags.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextModel {
    pub config: TextConfig,
    pub body: FieldModel,
    pub title: FieldModel,
    pub tags: FieldModel,
    n_docs: usize,
}

/// Tags are atomic: each tag string is a single token, never split further.
fn tag_tokens(tags: &[String]) -> Vec<String> {
    tags.iter()
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

impl TextModel {
    /// Fits all three field vocabularies on a training corpus.
    pub fn fit(config: TextConfig, docs: &[DocText]) -> Result<TextModel> {
        if docs.is_empty() {
            return Err(PipelineError::config(
                "cannot fit a text model on an empty corpus",
            ));
        }
        let body_docs: Vec<Vec<String>> =
            docs.iter().map(|d| tokens(d.body_plain)).collect();
        let title_docs: Vec<Vec<String>> = docs.iter().map(|d| tokens(d.title)).collect();
        let tag_docs: Vec<Vec<String>> = docs.iter().map(|d| tag_tokens(d.tags)).collect();
        Ok(TextModel {
            config,
            body: FieldModel::fit(&body_docs, config.body_cap),
            title: FieldModel::fit(&title_docs, config.title_cap),
            tags: FieldModel::fit(&tag_docs, config.tags_cap),
            n_docs: docs.len(),
        })
    }

    /// Total sparse width: body, title, and tag columns concatenated.
    pub fn width(&self) -> usize {
        self.body.width() + self.title.width() + self.tags.width()
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    /// Column ranges of each field within the combined sparse row.
    pub fn field_ranges(&self) -> [(usize, usize); 3] {
        let b = self.body.width();
        let t = self.title.width();
        let g = self.tags.width();
        [(0, b), (b, b + t), (b + t, b + t + g)]
    }

    /// Transforms one document into a combined sparse row. Each field is
    /// L2-normalized on its own, then shifted into its column range.
    pub fn transform(&self, doc: &DocText) -> Vec<(u32, f64)> {
        let body_off = 0u32;
        let title_off = self.body.width() as u32;
        let tags_off = title_off + self.title.width() as u32;
        let mut row = Vec::new();
        for (col, w) in self.body.transform(&tokens(doc.body_plain)) {
            row.push((body_off + col, w));
        }
        for (col, w) in self.title.transform(&tokens(doc.title)) {
            row.push((title_off + col, w));
        }
        for (col, w) in self.tags.transform(&tag_tokens(doc.tags)) {
            row.push((tags_off + col, w));
        }
        row
    }

    /// Restores the term lookup tables after deserialization.
    pub fn rebuild_indexes(&mut self) {
        self.body.rebuild_index();
        self.title.rebuild_index();
        self.tags.rebuild_index();
    }
}
