//! Feature extraction for labeled question cohorts.
//!
//! Five feature groups are computed per question as of the dataset's
//! prediction time: sparse tf-idf text features plus dense question, answer,
//! user, and tag features. Extraction reads exactly one store snapshot, the
//! one at prediction time, so later data cannot leak into features by
//! construction.

pub mod html;
pub mod pos;
pub mod text;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::cohort::CohortDataset;
use crate::error::{PipelineError, Result};
use crate::store::column::crc32;
use crate::store::{Snapshot, Store, StoredAnswer, StoredQuestion, StoredUser};
use crate::timestamp::Timestamp;

use html::strip_html;
use pos::count_pos;
use text::{DocText, TextConfig, TextModel};

/// Questions carry at most five tags; each gets a feature slot.
pub const TAG_SLOTS: usize = 5;
/// Number of trailing gap-length windows for per-tag popularity counts.
pub const PRE_POP_WINDOWS: usize = 4;

pub const QUESTION_FEATURES: usize = 12;
pub const ANSWER_FEATURES: usize = 15;
pub const USER_FEATURES: usize = 4;
pub const TAG_FEATURES: usize = TAG_SLOTS * (3 + PRE_POP_WINDOWS);

const DENSE_MAGIC: &[u8; 8] = b"QFDNS001";
const SPARSE_MAGIC: &[u8; 8] = b"QFSPR001";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureGroup {
    Text,
    Question,
    Answer,
    User,
    Tag,
}

impl FeatureGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureGroup::Text => "text",
            FeatureGroup::Question => "question",
            FeatureGroup::Answer => "answer",
            FeatureGroup::User => "user",
            FeatureGroup::Tag => "tag",
        }
    }

    /// Canonical layout order of the dense block.
    pub const DENSE_ORDER: [FeatureGroup; 4] = [
        FeatureGroup::Question,
        FeatureGroup::Answer,
        FeatureGroup::User,
        FeatureGroup::Tag,
    ];

    pub fn all() -> BTreeSet<FeatureGroup> {
        [
            FeatureGroup::Text,
            FeatureGroup::Question,
            FeatureGroup::Answer,
            FeatureGroup::User,
            FeatureGroup::Tag,
        ]
        .into_iter()
        .collect()
    }

    pub fn all_dense() -> BTreeSet<FeatureGroup> {
        FeatureGroup::DENSE_ORDER.into_iter().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueKind {
    Numeric,
    SparseTextWeight,
}

/// Whether a feature may carry the NaN missing marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingPolicy {
    Never,
    Nan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub group: FeatureGroup,
    pub kind: ValueKind,
    pub missing: MissingPolicy,
}

/// Ordered feature list: all dense columns first, then sparse text columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureDef>,
    pub n_dense: usize,
}

impl FeatureSchema {
    pub fn dense(&self) -> &[FeatureDef] {
        &self.features[..self.n_dense]
    }

    pub fn sparse(&self) -> &[FeatureDef] {
        &self.features[self.n_dense..]
    }

    pub fn dense_index(&self, name: &str) -> Option<usize> {
        self.dense().iter().position(|d| d.name == name)
    }

    pub fn groups(&self) -> BTreeSet<FeatureGroup> {
        self.features.iter().map(|d| d.group).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.n_dense > self.features.len() {
            return Err(PipelineError::format("schema dense count exceeds feature count"));
        }
        let mut names = BTreeSet::new();
        for (i, def) in self.features.iter().enumerate() {
            if !names.insert(def.name.as_str()) {
                return Err(PipelineError::format(format!(
                    "duplicate feature name {}",
                    def.name
                )));
            }
            let dense = i < self.n_dense;
            if dense != (def.kind == ValueKind::Numeric) {
                return Err(PipelineError::format(format!(
                    "feature {} kind does not match its block",
                    def.name
                )));
            }
        }
        Ok(())
    }
}

const QUESTION_NAMES: [&str; QUESTION_FEATURES] = [
    "ageByCreDate",
    "ageByLastAct",
    "score",
    "viewCount",
    "commentCount",
    "answerCount",
    "bodyLen",
    "codeLen",
    "titleLen",
    "nOfVerbs",
    "nOfPRP",
    "nOfNouns",
];

const USER_NAMES: [&str; USER_FEATURES] = ["userRep", "UserViews", "UserUpVote", "UserDownVote"];

fn answer_names() -> Vec<String> {
    let mut names = Vec::with_capacity(ANSWER_FEATURES);
    for x in ["First", "Best", "Last"] {
        names.push(format!("TimeToGet{x}Ans"));
        names.push(format!("{x}AnsScore"));
        names.push(format!("{x}AnsComCount"));
        names.push(format!("{x}AnsBodyLen"));
        names.push(format!("TimeTo{x}AnsLastActDate"));
    }
    names
}

fn tag_names() -> Vec<String> {
    let mut names = Vec::with_capacity(TAG_FEATURES);
    for q in 1..=TAG_SLOTS {
        names.push(format!("TagExistTime_{q}"));
        names.push(format!("TagPop_{q}"));
        names.push(format!("TagActiveTime_{q}"));
        for k in 1..=PRE_POP_WINDOWS {
            names.push(format!("TagPrePop_{k}_{q}"));
        }
    }
    names
}

/// Feature names of one dense group, in column order.
pub fn group_feature_names(group: FeatureGroup) -> Vec<String> {
    match group {
        FeatureGroup::Question => QUESTION_NAMES.iter().map(|s| s.to_string()).collect(),
        FeatureGroup::Answer => answer_names(),
        FeatureGroup::User => USER_NAMES.iter().map(|s| s.to_string()).collect(),
        FeatureGroup::Tag => tag_names(),
        FeatureGroup::Text => Vec::new(),
    }
}

fn group_missing_policy(group: FeatureGroup) -> MissingPolicy {
    match group {
        // Every dataset row is present at the snapshot, so question features
        // always have values. The other groups can be structurally absent.
        FeatureGroup::Question => MissingPolicy::Never,
        _ => MissingPolicy::Nan,
    }
}

/// Builds the schema for a group subset. The text group needs a fitted model
/// because its columns are the model's vocabulary.
pub fn build_schema(
    groups: &BTreeSet<FeatureGroup>,
    text_model: Option<&TextModel>,
) -> Result<FeatureSchema> {
    if groups.is_empty() {
        return Err(PipelineError::config("feature group set is empty"));
    }
    let mut features = Vec::new();
    for group in FeatureGroup::DENSE_ORDER {
        if !groups.contains(&group) {
            continue;
        }
        let missing = group_missing_policy(group);
        for name in group_feature_names(group) {
            features.push(FeatureDef { name, group, kind: ValueKind::Numeric, missing });
        }
    }
    let n_dense = features.len();
    if groups.contains(&FeatureGroup::Text) {
        let model = text_model.ok_or_else(|| {
            PipelineError::config("text feature group requested without a fitted text model")
        })?;
        for (prefix, field) in
            [("TfIdfBody", &model.body), ("TfIdfTitle", &model.title), ("TfIdfTags", &model.tags)]
        {
            for term in field.vocab() {
                features.push(FeatureDef {
                    name: format!("{prefix}:{term}"),
                    group: FeatureGroup::Text,
                    kind: ValueKind::SparseTextWeight,
                    missing: MissingPolicy::Never,
                });
            }
        }
    }
    let schema = FeatureSchema { features, n_dense };
    schema.validate()?;
    Ok(schema)
}

/// Per-tag usage statistics at prediction time.
#[derive(Debug, Clone, Copy)]
struct TagStat {
    first_use: Timestamp,
    last_use: Timestamp,
    pop: u64,
    pre_pop: [u64; PRE_POP_WINDOWS],
}

/// Loads one snapshot's rows into memory and computes features from them.
/// Holding only the prediction-time snapshot is the leakage guard: there is
/// no path from here to any later dump.
pub struct FeatureExtractor<'a> {
    snapshot: &'a Snapshot,
    prediction_time: Timestamp,
    questions: HashMap<u64, StoredQuestion>,
    answers_by_parent: HashMap<u64, Vec<StoredAnswer>>,
    users: HashMap<u64, StoredUser>,
    tag_stats: HashMap<String, TagStat>,
    clamped_answer_times: AtomicU64,
}

impl<'a> FeatureExtractor<'a> {
    pub fn new(snapshot: &'a Snapshot, gap_months: f64) -> Result<FeatureExtractor<'a>> {
        if !(gap_months > 0.0) {
            return Err(PipelineError::config("gap_months must be positive"));
        }
        let prediction_time = snapshot.dump_time();
        let questions_vec = snapshot.questions()?;

        // Window k covers creation dates in (T - k*gap, T - (k-1)*gap].
        let edges: Vec<Timestamp> = (0..=PRE_POP_WINDOWS)
            .map(|k| prediction_time.minus_months(k as f64 * gap_months))
            .collect();
        let mut tag_stats: HashMap<String, TagStat> = HashMap::new();
        for q in &questions_vec {
            for tag in &q.tags {
                let stat = tag_stats.entry(tag.clone()).or_insert(TagStat {
                    first_use: q.creation_date,
                    last_use: q.creation_date,
                    pop: 0,
                    pre_pop: [0; PRE_POP_WINDOWS],
                });
                stat.first_use = stat.first_use.min(q.creation_date);
                stat.last_use = stat.last_use.max(q.creation_date);
                stat.pop += 1;
                for k in 1..=PRE_POP_WINDOWS {
                    if q.creation_date > edges[k] && q.creation_date <= edges[k - 1] {
                        stat.pre_pop[k - 1] += 1;
                        break;
                    }
                }
            }
        }

        let mut answers_by_parent: HashMap<u64, Vec<StoredAnswer>> = HashMap::new();
        for a in snapshot.answers()? {
            answers_by_parent.entry(a.parent_question_id).or_default().push(a);
        }
        let users = snapshot.users()?.into_iter().map(|u| (u.id, u)).collect();
        let questions = questions_vec.into_iter().map(|q| (q.id, q)).collect();

        Ok(FeatureExtractor {
            snapshot,
            prediction_time,
            questions,
            answers_by_parent,
            users,
            tag_stats,
            clamped_answer_times: AtomicU64::new(0),
        })
    }

    pub fn prediction_time(&self) -> Timestamp {
        self.prediction_time
    }

    /// Answer creation dates earlier than their question's creation date,
    /// clamped to a zero time-to-answer so far.
    pub fn clamped_answer_times(&self) -> u64 {
        self.clamped_answer_times.load(Ordering::Relaxed)
    }

    fn question(&self, id: u64) -> Result<&StoredQuestion> {
        self.questions.get(&id).ok_or_else(|| {
            PipelineError::data(format!(
                "question {id} absent at snapshot {}",
                self.prediction_time
            ))
        })
    }

    /// Title and code-stripped body text for part-of-speech counting.
    fn question_nl_text(&self, id: u64) -> Result<String> {
        let (title, body_html) = self.snapshot.question_text(id)?.ok_or_else(|| {
            PipelineError::data(format!("stored text missing for question {id}"))
        })?;
        let stripped = strip_html(&body_html);
        let mut text = title;
        text.push(' ');
        text.push_str(&stripped.plain);
        Ok(text)
    }

    pub fn question_row(&self, id: u64) -> Result<[f64; QUESTION_FEATURES]> {
        let q = self.question(id)?;
        let pos = count_pos(&self.question_nl_text(id)?);
        Ok([
            self.prediction_time.months_since(q.creation_date).max(0.0),
            self.prediction_time.months_since(q.last_activity_date).max(0.0),
            q.score as f64,
            q.view_count as f64,
            q.comment_count as f64,
            q.answer_count as f64,
            q.body_len as f64,
            q.code_len as f64,
            q.title_len as f64,
            pos.verbs as f64,
            pos.pronouns as f64,
            pos.nouns as f64,
        ])
    }

    /// Minutes from question creation to answer creation, clamped at zero
    /// when the data is inconsistent.
    fn time_to_answer(&self, q: &StoredQuestion, a: &StoredAnswer) -> f64 {
        let minutes = a.creation_date.minutes_since(q.creation_date);
        if minutes < 0.0 {
            self.clamped_answer_times.fetch_add(1, Ordering::Relaxed);
            0.0
        } else {
            minutes
        }
    }

    pub fn answer_row(&self, id: u64) -> Result<[f64; ANSWER_FEATURES]> {
        let q = self.question(id)?;
        let mut out = [f64::NAN; ANSWER_FEATURES];
        let Some(answers) = self.answers_by_parent.get(&id) else {
            return Ok(out);
        };
        if answers.is_empty() {
            return Ok(out);
        }
        let first = answers
            .iter()
            .min_by_key(|a| (a.creation_date, a.id))
            .expect("non-empty");
        let last = answers
            .iter()
            .max_by_key(|a| (a.creation_date, a.id))
            .expect("non-empty");
        // Best = the accepted answer when one is recorded and present,
        // otherwise the highest-scoring answer (ties: earliest, then id).
        let best = q
            .accepted_answer_id
            .and_then(|aid| answers.iter().find(|a| a.id == aid))
            .unwrap_or_else(|| {
                answers
                    .iter()
                    .max_by(|a, b| {
                        a.score
                            .cmp(&b.score)
                            .then(b.creation_date.cmp(&a.creation_date))
                            .then(b.id.cmp(&a.id))
                    })
                    .expect("non-empty")
            });
        for (i, ans) in [first, best, last].into_iter().enumerate() {
            let base = i * 5;
            out[base] = self.time_to_answer(q, ans);
            out[base + 1] = ans.score as f64;
            out[base + 2] = ans.comment_count as f64;
            out[base + 3] = ans.body_len as f64;
            out[base + 4] = ans.last_activity_date.minutes_since(ans.creation_date).max(0.0);
        }
        Ok(out)
    }

    pub fn user_row(&self, id: u64) -> Result<[f64; USER_FEATURES]> {
        let q = self.question(id)?;
        let owner = q.owner_user_id.and_then(|uid| self.users.get(&uid));
        Ok(match owner {
            Some(u) => [
                u.reputation as f64,
                u.profile_views as f64,
                u.up_votes as f64,
                u.down_votes as f64,
            ],
            None => [f64::NAN; USER_FEATURES],
        })
    }

    pub fn tag_row(&self, id: u64) -> Result<[f64; TAG_FEATURES]> {
        let q = self.question(id)?;
        let mut out = [f64::NAN; TAG_FEATURES];
        for (slot, tag) in q.tags.iter().take(TAG_SLOTS).enumerate() {
            let stat = self.tag_stats.get(tag).ok_or_else(|| {
                PipelineError::data(format!("no usage stats for tag {tag} (question {id})"))
            })?;
            let base = slot * (3 + PRE_POP_WINDOWS);
            out[base] = self.prediction_time.days_since(stat.first_use).max(0.0);
            out[base + 1] = stat.pop as f64;
            out[base + 2] = stat.last_use.days_since(stat.first_use).max(0.0);
            for k in 0..PRE_POP_WINDOWS {
                out[base + 3 + k] = stat.pre_pop[k] as f64;
            }
        }
        Ok(out)
    }

    /// Text fields of one question for the tf-idf model: code-stripped body,
    /// title, and tags.
    fn doc_fields(&self, id: u64) -> Result<(String, String, Vec<String>)> {
        let q = self.question(id)?;
        let (title, body_html) = self.snapshot.question_text(id)?.ok_or_else(|| {
            PipelineError::data(format!("stored text missing for question {id}"))
        })?;
        Ok((strip_html(&body_html).plain, title, q.tags.clone()))
    }

    /// Fits a tf-idf model on the given training rows only.
    pub fn fit_text_model(&self, train_ids: &[u64], config: TextConfig) -> Result<TextModel> {
        let mut owned = Vec::with_capacity(train_ids.len());
        for &id in train_ids {
            owned.push(self.doc_fields(id)?);
        }
        let docs: Vec<DocText> = owned
            .iter()
            .map(|(body, title, tags)| DocText { body_plain: body, title, tags })
            .collect();
        TextModel::fit(config, &docs)
    }

    /// Sparse tf-idf row for one question under a fitted model.
    pub fn transform_text(&self, model: &TextModel, id: u64) -> Result<Vec<(u32, f64)>> {
        let (body, title, tags) = self.doc_fields(id)?;
        Ok(model.transform(&DocText { body_plain: &body, title: &title, tags: &tags }))
    }

    fn named(names: &[String], values: &[f64]) -> BTreeMap<String, f64> {
        names.iter().cloned().zip(values.iter().copied()).collect()
    }
}

/// Dense question features as a name → value map.
pub fn extract_question_features(
    store: &Store,
    question_id: u64,
    prediction_time: Timestamp,
) -> Result<BTreeMap<String, f64>> {
    let snap = store.snapshot(prediction_time)?;
    let ex = FeatureExtractor::new(&snap, f64::from(crate::cohort::CohortConfig::default().gap_months))?;
    Ok(FeatureExtractor::named(
        &group_feature_names(FeatureGroup::Question),
        &ex.question_row(question_id)?,
    ))
}

pub fn extract_answer_features(
    store: &Store,
    question_id: u64,
    prediction_time: Timestamp,
) -> Result<BTreeMap<String, f64>> {
    let snap = store.snapshot(prediction_time)?;
    let ex = FeatureExtractor::new(&snap, f64::from(crate::cohort::CohortConfig::default().gap_months))?;
    Ok(FeatureExtractor::named(
        &group_feature_names(FeatureGroup::Answer),
        &ex.answer_row(question_id)?,
    ))
}

pub fn extract_user_features(
    store: &Store,
    question_id: u64,
    prediction_time: Timestamp,
) -> Result<BTreeMap<String, f64>> {
    let snap = store.snapshot(prediction_time)?;
    let ex = FeatureExtractor::new(&snap, f64::from(crate::cohort::CohortConfig::default().gap_months))?;
    Ok(FeatureExtractor::named(
        &group_feature_names(FeatureGroup::User),
        &ex.user_row(question_id)?,
    ))
}

pub fn extract_tag_features(
    store: &Store,
    question_id: u64,
    prediction_time: Timestamp,
    gap_months: f64,
) -> Result<BTreeMap<String, f64>> {
    let snap = store.snapshot(prediction_time)?;
    let ex = FeatureExtractor::new(&snap, gap_months)?;
    Ok(FeatureExtractor::named(
        &group_feature_names(FeatureGroup::Tag),
        &ex.tag_row(question_id)?,
    ))
}

/// Feature values for every question of a dataset, aligned to its row order.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub schema: FeatureSchema,
    /// Question ids in dataset order.
    pub row_ids: Vec<u64>,
    /// Row-major dense block, missing values as NaN.
    pub dense: Vec<f64>,
    /// Per-row sparse text weights, sorted by column.
    pub sparse: Vec<Vec<(u32, f64)>>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_dense(&self) -> usize {
        self.schema.n_dense
    }

    pub fn n_sparse(&self) -> usize {
        self.schema.features.len() - self.schema.n_dense
    }

    pub fn dense_at(&self, row: usize, col: usize) -> f64 {
        self.dense[row * self.n_dense() + col]
    }

    pub fn dense_column(&self, col: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|r| self.dense_at(r, col)).collect()
    }

    /// Bit-level equality. NaN missing markers compare equal to themselves,
    /// which float `==` would not do.
    pub fn same_bits(&self, other: &FeatureMatrix) -> bool {
        self.schema == other.schema
            && self.row_ids == other.row_ids
            && self.dense.len() == other.dense.len()
            && self
                .dense
                .iter()
                .zip(&other.dense)
                .all(|(a, b)| a.to_bits() == b.to_bits())
            && self.sparse == other.sparse
    }

    fn check_block_sizes(&self) -> Result<()> {
        if self.dense.len() != self.n_rows() * self.n_dense() {
            return Err(PipelineError::format("dense block size mismatch"));
        }
        if self.sparse.len() != self.n_rows() {
            return Err(PipelineError::format("sparse block row count mismatch"));
        }
        Ok(())
    }

    /// Writes matrix.json, dense.bin, and sparse.bin into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.check_block_sizes()?;
        fs::create_dir_all(dir)?;
        let header = MatrixHeader {
            schema: self.schema.clone(),
            row_ids: self.row_ids.clone(),
        };
        let header_json = serde_json::to_vec_pretty(&header)
            .map_err(|e| PipelineError::format(format!("matrix.json: {e}")))?;
        fs::write(dir.join("matrix.json"), header_json)?;

        let mut dense = Vec::with_capacity(24 + self.dense.len() * 8 + 4);
        dense.extend_from_slice(DENSE_MAGIC);
        dense.extend_from_slice(&(self.n_rows() as u64).to_le_bytes());
        dense.extend_from_slice(&(self.n_dense() as u64).to_le_bytes());
        for v in &self.dense {
            dense.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32(&dense[8..]);
        dense.extend_from_slice(&crc.to_le_bytes());
        fs::write(dir.join("dense.bin"), &dense)?;

        let nnz: usize = self.sparse.iter().map(Vec::len).sum();
        let mut sparse = Vec::with_capacity(24 + nnz * 16 + 4);
        sparse.extend_from_slice(SPARSE_MAGIC);
        sparse.extend_from_slice(&(self.n_rows() as u64).to_le_bytes());
        sparse.extend_from_slice(&(nnz as u64).to_le_bytes());
        for (row, cols) in self.sparse.iter().enumerate() {
            for &(col, w) in cols {
                sparse.extend_from_slice(&(row as u32).to_le_bytes());
                sparse.extend_from_slice(&col.to_le_bytes());
                sparse.extend_from_slice(&w.to_le_bytes());
            }
        }
        let crc = crc32(&sparse[8..]);
        sparse.extend_from_slice(&crc.to_le_bytes());
        fs::write(dir.join("sparse.bin"), &sparse)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<FeatureMatrix> {
        let header: MatrixHeader =
            serde_json::from_slice(&fs::read(dir.join("matrix.json"))?)
                .map_err(|e| PipelineError::format(format!("matrix.json: {e}")))?;
        header.schema.validate()?;
        let n_rows = header.row_ids.len();
        let n_dense = header.schema.n_dense;
        let n_sparse = header.schema.features.len() - n_dense;

        let dense_bytes = fs::read(dir.join("dense.bin"))?;
        let dense = read_dense_block(&dense_bytes, n_rows, n_dense)?;
        let sparse_bytes = fs::read(dir.join("sparse.bin"))?;
        let sparse = read_sparse_block(&sparse_bytes, n_rows, n_sparse)?;
        Ok(FeatureMatrix { schema: header.schema, row_ids: header.row_ids, dense, sparse })
    }

    /// Dense block as CSV for inspection; missing values are empty cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("question_id");
        for def in self.schema.dense() {
            out.push(',');
            out.push_str(&def.name);
        }
        out.push('\n');
        for (row, id) in self.row_ids.iter().enumerate() {
            out.push_str(&id.to_string());
            for col in 0..self.n_dense() {
                out.push(',');
                let v = self.dense_at(row, col);
                if !v.is_nan() {
                    out.push_str(&format!("{v}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixHeader {
    schema: FeatureSchema,
    row_ids: Vec<u64>,
}

fn read_dense_block(bytes: &[u8], n_rows: usize, n_dense: usize) -> Result<Vec<f64>> {
    let bad = |m: &str| PipelineError::format(format!("dense.bin: {m}"));
    if bytes.len() < 28 || &bytes[..8] != DENSE_MAGIC {
        return Err(bad("bad magic or truncated"));
    }
    let crc_stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    if crc32(&bytes[8..bytes.len() - 4]) != crc_stored {
        return Err(bad("checksum mismatch"));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    if rows != n_rows || cols != n_dense {
        return Err(bad("shape does not match matrix.json"));
    }
    let payload = &bytes[24..bytes.len() - 4];
    if payload.len() != rows * cols * 8 {
        return Err(bad("payload size mismatch"));
    }
    Ok(payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn read_sparse_block(bytes: &[u8], n_rows: usize, n_sparse: usize) -> Result<Vec<Vec<(u32, f64)>>> {
    let bad = |m: &str| PipelineError::format(format!("sparse.bin: {m}"));
    if bytes.len() < 28 || &bytes[..8] != SPARSE_MAGIC {
        return Err(bad("bad magic or truncated"));
    }
    let crc_stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    if crc32(&bytes[8..bytes.len() - 4]) != crc_stored {
        return Err(bad("checksum mismatch"));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let nnz = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    if rows != n_rows {
        return Err(bad("row count does not match matrix.json"));
    }
    let payload = &bytes[24..bytes.len() - 4];
    if payload.len() != nnz * 16 {
        return Err(bad("payload size mismatch"));
    }
    let mut sparse = vec![Vec::new(); rows];
    let mut prev: Option<(u32, u32)> = None;
    for entry in payload.chunks_exact(16) {
        let row = u32::from_le_bytes(entry[0..4].try_into().unwrap());
        let col = u32::from_le_bytes(entry[4..8].try_into().unwrap());
        let w = f64::from_le_bytes(entry[8..16].try_into().unwrap());
        if row as usize >= rows || col as usize >= n_sparse {
            return Err(bad("entry out of range"));
        }
        if let Some(p) = prev {
            if (row, col) <= p {
                return Err(bad("entries not strictly ordered"));
            }
        }
        prev = Some((row, col));
        sparse[row as usize].push((col, w));
    }
    Ok(sparse)
}

/// Computes the requested feature groups for every question of a dataset,
/// in dataset row order. Reads only the prediction-time snapshot.
pub fn build_feature_matrix(
    store: &Store,
    dataset: &CohortDataset,
    groups: &BTreeSet<FeatureGroup>,
    text_model: Option<&TextModel>,
) -> Result<FeatureMatrix> {
    let schema = build_schema(groups, text_model)?;
    let snapshot = store.snapshot(dataset.current_dump)?;
    let extractor = FeatureExtractor::new(&snapshot, dataset.gap_months)?;

    let n_dense = schema.n_dense;
    let mut row_ids = Vec::with_capacity(dataset.questions.len());
    let mut dense = Vec::with_capacity(dataset.questions.len() * n_dense);
    let mut sparse = Vec::with_capacity(dataset.questions.len());
    let want_text = groups.contains(&FeatureGroup::Text);

    for q in &dataset.questions {
        let id = q.question_id;
        row_ids.push(id);
        for group in FeatureGroup::DENSE_ORDER {
            if !groups.contains(&group) {
                continue;
            }
            match group {
                FeatureGroup::Question => dense.extend_from_slice(&extractor.question_row(id)?),
                FeatureGroup::Answer => dense.extend_from_slice(&extractor.answer_row(id)?),
                FeatureGroup::User => dense.extend_from_slice(&extractor.user_row(id)?),
                FeatureGroup::Tag => dense.extend_from_slice(&extractor.tag_row(id)?),
                FeatureGroup::Text => unreachable!("text is not a dense group"),
            }
        }
        sparse.push(if want_text {
            extractor.transform_text(text_model.expect("checked by build_schema"), id)?
        } else {
            Vec::new()
        });
    }

    // A NaN outside a declared-missing column is an extraction bug, not data.
    for (col, def) in schema.dense().iter().enumerate() {
        if def.missing == MissingPolicy::Never {
            for row in 0..row_ids.len() {
                if dense[row * n_dense + col].is_nan() {
                    return Err(PipelineError::format(format!(
                        "feature {} may not be missing but row {} is NaN",
                        def.name, row
                    )));
                }
            }
        }
    }

    Ok(FeatureMatrix { schema, row_ids, dense, sparse })
}
