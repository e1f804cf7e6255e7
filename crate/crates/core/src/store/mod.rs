//! Per-dump columnar snapshot store.
//!
//! Layout on disk: one immutable directory per committed snapshot plus a
//! `manifest.json` naming them. The manifest is the commit point: a write
//! materializes a fresh uniquely named directory, then atomically replaces
//! the manifest, then deletes unreferenced directories. A crash at any step
//! leaves readers on the old state or the new state, never in between.
//!
//! Single writer per store; any number of readers, which only follow the
//! manifest.

pub mod column;
pub mod text_blob;

use crate::error::{PipelineError, Result};
use crate::featurize::html::strip_html;
use crate::ingest::DumpSnapshot;
use crate::timestamp::Timestamp;
use column::{CellValue, ColumnData, ColumnFileReader, ColumnFileWriter, EntityKind, IoCounters};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use text_blob::TextBlobReader;

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestFile {
    bytes: u64,
    crc32: u32,
    rows: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestSnapshot {
    dump_time: Timestamp,
    dir: String,
    has_text: bool,
    files: BTreeMap<String, ManifestFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    revision: u64,
    snapshots: Vec<ManifestSnapshot>,
}

impl Manifest {
    fn empty() -> Self {
        Manifest {
            format_version: FORMAT_VERSION,
            revision: 0,
            snapshots: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct WriteOptions {
    /// Persist raw title/body text alongside the columns.
    pub include_text: bool,
}

impl Default for WriteOptions {
    fn default() -> Self {
        WriteOptions { include_text: true }
    }
}

pub struct Store {
    root: PathBuf,
    manifest: Manifest,
    counters: Arc<IoCounters>,
}

/// One question's view delta over a period.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewDelta {
    pub question_id: u64,
    pub period_start: Timestamp,
    pub period_end: Timestamp,
    pub views_in_period: u64,
}

/// Outcome of a delta query, with anomaly counts for dump inconsistencies.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeltaReport {
    /// Sorted by question id.
    pub deltas: Vec<ViewDelta>,
    /// Present at period start but gone at period end.
    pub deleted: u64,
    /// Absent at period start; their start count is taken as 0.
    pub created_in_period: u64,
    /// Cumulative count decreased across dumps; clamped to 0.
    pub clamped_negative: u64,
}

#[derive(Debug, Clone, Copy)]
pub enum IdSelection<'a> {
    All,
    Set(&'a [u64]),
}

/// Fully decoded per-question row.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredQuestion {
    pub id: u64,
    pub view_count: u64,
    pub score: i64,
    pub answer_count: u64,
    pub comment_count: u64,
    pub favorite_count: u64,
    pub creation_date: Timestamp,
    pub last_activity_date: Timestamp,
    pub owner_user_id: Option<u64>,
    pub accepted_answer_id: Option<u64>,
    pub closed_date: Option<Timestamp>,
    pub tags: Vec<String>,
    pub title_len: u64,
    pub body_len: u64,
    pub code_len: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredAnswer {
    pub id: u64,
    pub parent_question_id: u64,
    pub score: i64,
    pub comment_count: u64,
    pub creation_date: Timestamp,
    pub last_activity_date: Timestamp,
    pub body_len: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredUser {
    pub id: u64,
    pub reputation: u64,
    pub profile_views: u64,
    pub up_votes: u64,
    pub down_votes: u64,
}

/// One named column with its row ids, as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotColumn {
    pub dump_time: Timestamp,
    pub entity: EntityKind,
    pub name: String,
    pub ids: Vec<u64>,
    pub data: ColumnData,
}

impl Store {
    /// Opens a store, creating the directory if needed. A missing manifest
    /// means an empty store.
    pub fn open(root: impl Into<PathBuf>) -> Result<Store> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let manifest_path = root.join(MANIFEST_NAME);
        let manifest = if manifest_path.exists() {
            let bytes = fs::read(&manifest_path)?;
            let m: Manifest = serde_json::from_slice(&bytes)
                .map_err(|e| PipelineError::format(format!("manifest: {e}")))?;
            if m.format_version != FORMAT_VERSION {
                return Err(PipelineError::format(format!(
                    "store format version {} unsupported",
                    m.format_version
                )));
            }
            m
        } else {
            Manifest::empty()
        };
        Ok(Store {
            root,
            manifest,
            counters: Arc::new(IoCounters::default()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn io_counters(&self) -> &IoCounters {
        &self.counters
    }

    /// Dump times of committed snapshots, ascending.
    pub fn dump_times(&self) -> Vec<Timestamp> {
        let mut v: Vec<Timestamp> = self.manifest.snapshots.iter().map(|s| s.dump_time).collect();
        v.sort();
        v
    }

    pub fn has_snapshot(&self, t: Timestamp) -> bool {
        self.manifest.snapshots.iter().any(|s| s.dump_time == t)
    }

    fn entry(&self, t: Timestamp) -> Result<&ManifestSnapshot> {
        self.manifest
            .snapshots
            .iter()
            .find(|s| s.dump_time == t)
            .ok_or_else(|| PipelineError::data(format!("no snapshot at {t}")))
    }

    pub fn snapshot(&self, t: Timestamp) -> Result<Snapshot> {
        let e = self.entry(t)?;
        Ok(Snapshot {
            dir: self.root.join(&e.dir),
            dump_time: e.dump_time,
            has_text: e.has_text,
            counters: Arc::clone(&self.counters),
            readers: Mutex::new(HashMap::new()),
            text: Mutex::new(None),
        })
    }

    /// Persists one dump. Replaces any previous snapshot with the same
    /// dump time. Records are sorted by id here; duplicate ids are a data
    /// error.
    pub fn write_snapshot(&mut self, snap: &DumpSnapshot, opts: WriteOptions) -> Result<()> {
        let tmp = self.root.join(".tmp-write");
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;

        let mut q_order: Vec<usize> = (0..snap.questions.len()).collect();
        q_order.sort_by_key(|&i| snap.questions[i].id);
        for w in q_order.windows(2) {
            if snap.questions[w[0]].id == snap.questions[w[1]].id {
                return Err(PipelineError::data(format!(
                    "duplicate question id {}",
                    snap.questions[w[0]].id
                )));
            }
        }
        let mut a_order: Vec<usize> = (0..snap.answers.len()).collect();
        a_order.sort_by_key(|&i| snap.answers[i].id);
        for w in a_order.windows(2) {
            if snap.answers[w[0]].id == snap.answers[w[1]].id {
                return Err(PipelineError::data(format!(
                    "duplicate answer id {}",
                    snap.answers[w[0]].id
                )));
            }
        }
        let mut u_order: Vec<usize> = (0..snap.users.len()).collect();
        u_order.sort_by_key(|&i| snap.users[i].id);
        for w in u_order.windows(2) {
            if snap.users[w[0]].id == snap.users[w[1]].id {
                return Err(PipelineError::data(format!(
                    "duplicate user id {}",
                    snap.users[w[0]].id
                )));
            }
        }

        self.write_questions(&tmp, snap, &q_order)?;
        self.write_answers(&tmp, snap, &a_order)?;
        self.write_users(&tmp, snap, &u_order)?;
        if opts.include_text {
            let entries: Vec<(u64, &str, &str)> = q_order
                .iter()
                .map(|&i| {
                    let q = &snap.questions[i];
                    (q.id, q.title.as_str(), q.body_html.as_str())
                })
                .collect();
            text_blob::write_blob(&tmp.join("text.blob"), &entries)?;
        }

        let mut files = BTreeMap::new();
        let row_counts: [(&str, u64); 4] = [
            ("questions.col", snap.questions.len() as u64),
            ("answers.col", snap.answers.len() as u64),
            ("users.col", snap.users.len() as u64),
            ("text.blob", snap.questions.len() as u64),
        ];
        for (name, rows) in row_counts {
            let path = tmp.join(name);
            if !path.exists() {
                continue;
            }
            let (bytes, crc) = file_crc(&path)?;
            files.insert(name.to_string(), ManifestFile { bytes, crc32: crc, rows });
        }

        let revision = self.manifest.revision + 1;
        let dir_name = format!(
            "snap-{}-r{}",
            snap.dump_time.to_path_component(),
            revision
        );
        let final_dir = self.root.join(&dir_name);
        if final_dir.exists() {
            // leftover from a write that never committed its manifest
            fs::remove_dir_all(&final_dir)?;
        }
        fs::rename(&tmp, &final_dir)?;

        let mut manifest = self.manifest.clone();
        manifest.revision = revision;
        manifest
            .snapshots
            .retain(|s| s.dump_time != snap.dump_time);
        manifest.snapshots.push(ManifestSnapshot {
            dump_time: snap.dump_time,
            dir: dir_name,
            has_text: opts.include_text,
            files,
        });
        manifest.snapshots.sort_by_key(|s| s.dump_time);
        self.commit_manifest(manifest)?;
        self.sweep_orphans();
        Ok(())
    }

    fn commit_manifest(&mut self, manifest: Manifest) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(&manifest)
            .map_err(|e| PipelineError::format(format!("manifest encode: {e}")))?;
        let tmp = self.root.join("manifest.json.tmp");
        {
            let mut f = File::create(&tmp)?;
            use std::io::Write;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, self.root.join(MANIFEST_NAME))?;
        self.manifest = manifest;
        Ok(())
    }

    /// Removes directories not referenced by the committed manifest.
    /// Failures here are harmless; the next write retries.
    fn sweep_orphans(&self) {
        let Ok(entries) = fs::read_dir(&self.root) else { return };
        let live: Vec<&str> = self.manifest.snapshots.iter().map(|s| s.dir.as_str()).collect();
        for entry in entries.flatten() {
            let name = entry.file_name();
            let Some(name) = name.to_str() else { continue };
            let is_dir = entry.file_type().map(|t| t.is_dir()).unwrap_or(false);
            if !is_dir {
                continue;
            }
            if (name.starts_with("snap-") && !live.contains(&name)) || name.starts_with(".tmp-") {
                let _ = fs::remove_dir_all(entry.path());
            }
        }
    }

    fn write_questions(&self, dir: &Path, snap: &DumpSnapshot, order: &[usize]) -> Result<()> {
        let n = order.len();
        let mut w = ColumnFileWriter::new(EntityKind::Question, n as u64);
        let qs = |f: &dyn Fn(&crate::ingest::QuestionRecord) -> u64| -> Vec<u64> {
            order.iter().map(|&i| f(&snap.questions[i])).collect()
        };
        w.push("id", ColumnData::U64(qs(&|q| q.id)))?;
        w.push("view_count", ColumnData::U64(qs(&|q| q.view_count)))?;
        w.push(
            "score",
            ColumnData::I64(order.iter().map(|&i| snap.questions[i].score).collect()),
        )?;
        w.push("answer_count", ColumnData::U64(qs(&|q| q.answer_count)))?;
        w.push("comment_count", ColumnData::U64(qs(&|q| q.comment_count)))?;
        w.push("favorite_count", ColumnData::U64(qs(&|q| q.favorite_count)))?;
        w.push(
            "creation_date",
            ColumnData::Ts(order.iter().map(|&i| snap.questions[i].creation_date).collect()),
        )?;
        w.push(
            "last_activity_date",
            ColumnData::Ts(
                order
                    .iter()
                    .map(|&i| snap.questions[i].last_activity_date)
                    .collect(),
            ),
        )?;
        w.push(
            "owner_user_id",
            ColumnData::OptU64(order.iter().map(|&i| snap.questions[i].owner_user_id).collect()),
        )?;
        w.push(
            "accepted_answer_id",
            ColumnData::OptU64(
                order
                    .iter()
                    .map(|&i| snap.questions[i].accepted_answer_id)
                    .collect(),
            ),
        )?;
        w.push(
            "closed_date",
            ColumnData::OptTs(order.iter().map(|&i| snap.questions[i].closed_date).collect()),
        )?;
        w.push(
            "tags",
            ColumnData::Str(order.iter().map(|&i| snap.questions[i].tags.join("|")).collect()),
        )?;
        let mut title_len = Vec::with_capacity(n);
        let mut body_len = Vec::with_capacity(n);
        let mut code_len = Vec::with_capacity(n);
        for &i in order {
            let q = &snap.questions[i];
            title_len.push(q.title.chars().count() as u64);
            let stripped = strip_html(&q.body_html);
            body_len.push((stripped.plain_chars + stripped.code_chars) as u64);
            code_len.push(stripped.code_chars as u64);
        }
        w.push("title_len", ColumnData::U64(title_len))?;
        w.push("body_len", ColumnData::U64(body_len))?;
        w.push("code_len", ColumnData::U64(code_len))?;
        let mut f = File::create(dir.join("questions.col"))?;
        w.write_to(&mut f)
    }

    fn write_answers(&self, dir: &Path, snap: &DumpSnapshot, order: &[usize]) -> Result<()> {
        let n = order.len();
        let mut w = ColumnFileWriter::new(EntityKind::Answer, n as u64);
        w.push(
            "id",
            ColumnData::U64(order.iter().map(|&i| snap.answers[i].id).collect()),
        )?;
        w.push(
            "parent_question_id",
            ColumnData::U64(
                order
                    .iter()
                    .map(|&i| snap.answers[i].parent_question_id)
                    .collect(),
            ),
        )?;
        w.push(
            "score",
            ColumnData::I64(order.iter().map(|&i| snap.answers[i].score).collect()),
        )?;
        w.push(
            "comment_count",
            ColumnData::U64(order.iter().map(|&i| snap.answers[i].comment_count).collect()),
        )?;
        w.push(
            "creation_date",
            ColumnData::Ts(order.iter().map(|&i| snap.answers[i].creation_date).collect()),
        )?;
        w.push(
            "last_activity_date",
            ColumnData::Ts(
                order
                    .iter()
                    .map(|&i| snap.answers[i].last_activity_date)
                    .collect(),
            ),
        )?;
        w.push(
            "body_len",
            ColumnData::U64(
                order
                    .iter()
                    .map(|&i| {
                        let s = strip_html(&snap.answers[i].body_html);
                        (s.plain_chars + s.code_chars) as u64
                    })
                    .collect(),
            ),
        )?;
        let mut f = File::create(dir.join("answers.col"))?;
        w.write_to(&mut f)
    }

    fn write_users(&self, dir: &Path, snap: &DumpSnapshot, order: &[usize]) -> Result<()> {
        let n = order.len();
        let mut w = ColumnFileWriter::new(EntityKind::User, n as u64);
        w.push(
            "id",
            ColumnData::U64(order.iter().map(|&i| snap.users[i].id).collect()),
        )?;
        w.push(
            "reputation",
            ColumnData::U64(order.iter().map(|&i| snap.users[i].reputation).collect()),
        )?;
        w.push(
            "profile_views",
            ColumnData::U64(order.iter().map(|&i| snap.users[i].profile_views).collect()),
        )?;
        w.push(
            "up_votes",
            ColumnData::U64(order.iter().map(|&i| snap.users[i].up_votes).collect()),
        )?;
        w.push(
            "down_votes",
            ColumnData::U64(order.iter().map(|&i| snap.users[i].down_votes).collect()),
        )?;
        let mut f = File::create(dir.join("users.col"))?;
        w.write_to(&mut f)
    }

    /// Views gained per question between two dumps. Explicit id sets use
    /// point reads and touch only the requested ids' segments; `All` scans
    /// the id and view-count columns once per side.
    pub fn views_between(
        &self,
        selection: IdSelection,
        t1: Timestamp,
        t2: Timestamp,
        strict: bool,
    ) -> Result<DeltaReport> {
        if t1 >= t2 {
            return Err(PipelineError::config(format!(
                "views_between needs t1 < t2, got {t1} and {t2}"
            )));
        }
        let s1 = self.snapshot(t1)?;
        let s2 = self.snapshot(t2)?;
        let mut report = DeltaReport::default();
        let mut push = |id: u64, vc1: u64, vc2: u64| -> Result<()> {
            let views = if vc2 >= vc1 {
                vc2 - vc1
            } else {
                if strict {
                    return Err(PipelineError::data(format!(
                        "question {id}: view count decreased from {vc1} to {vc2}"
                    )));
                }
                report.clamped_negative += 1;
                0
            };
            report.deltas.push(ViewDelta {
                question_id: id,
                period_start: t1,
                period_end: t2,
                views_in_period: views,
            });
            Ok(())
        };
        match selection {
            IdSelection::All => {
                let (ids1, vc1) = s1.question_views()?;
                let (ids2, vc2) = s2.question_views()?;
                let mut i = 0usize;
                for (j, &id) in ids2.iter().enumerate() {
                    while i < ids1.len() && ids1[i] < id {
                        report.deleted += 1;
                        i += 1;
                    }
                    if i < ids1.len() && ids1[i] == id {
                        push(id, vc1[i], vc2[j])?;
                        i += 1;
                    } else {
                        report.created_in_period += 1;
                        push(id, 0, vc2[j])?;
                    }
                }
                report.deleted += (ids1.len() - i) as u64;
            }
            IdSelection::Set(ids) => {
                let mut ids: Vec<u64> = ids.to_vec();
                ids.sort_unstable();
                ids.dedup();
                let r1 = s1.columns(EntityKind::Question)?;
                let r2 = s2.columns(EntityKind::Question)?;
                for id in ids {
                    let Some(idx2) = r2.find_sorted("id", id)? else {
                        report.deleted += 1;
                        continue;
                    };
                    let vc2 = r2.cell("view_count", idx2)?.as_u64()?;
                    let vc1 = match r1.find_sorted("id", id)? {
                        Some(idx1) => r1.cell("view_count", idx1)?.as_u64()?,
                        None => {
                            report.created_in_period += 1;
                            0
                        }
                    };
                    push(id, vc1, vc2)?;
                }
            }
        }
        Ok(report)
    }

    /// Checks every committed file against its manifest checksum, then
    /// every column against its own.
    pub fn verify(&self) -> Result<()> {
        for s in &self.manifest.snapshots {
            let dir = self.root.join(&s.dir);
            for (name, meta) in &s.files {
                let path = dir.join(name);
                let (bytes, crc) = file_crc(&path)?;
                if bytes != meta.bytes || crc != meta.crc32 {
                    return Err(PipelineError::format(format!(
                        "{}: size or checksum mismatch",
                        path.display()
                    )));
                }
            }
            let snap = self.snapshot(s.dump_time)?;
            for kind in [EntityKind::Question, EntityKind::Answer, EntityKind::User] {
                snap.columns(kind)?.verify()?;
            }
        }
        Ok(())
    }
}

fn file_crc(path: &Path) -> Result<(u64, u32)> {
    let mut f = File::open(path)?;
    let mut buf = vec![0u8; 64 * 1024];
    let mut len = 0u64;
    let mut crc_bytes = Vec::new();
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        len += n as u64;
        crc_bytes.extend_from_slice(&buf[..n]);
    }
    Ok((len, column::crc32(&crc_bytes)))
}

/// Read view of one committed snapshot. File handles open lazily and are
/// cached for the lifetime of the view.
pub struct Snapshot {
    dir: PathBuf,
    dump_time: Timestamp,
    has_text: bool,
    counters: Arc<IoCounters>,
    readers: Mutex<HashMap<EntityKind, Arc<ColumnFileReader>>>,
    text: Mutex<Option<Arc<TextBlobReader>>>,
}

impl Snapshot {
    pub fn dump_time(&self) -> Timestamp {
        self.dump_time
    }

    pub fn has_text(&self) -> bool {
        self.has_text
    }

    pub fn columns(&self, entity: EntityKind) -> Result<Arc<ColumnFileReader>> {
        let mut cache = self.readers.lock().unwrap();
        if let Some(r) = cache.get(&entity) {
            return Ok(Arc::clone(r));
        }
        let r = Arc::new(ColumnFileReader::open(
            &self.dir.join(entity.file_name()),
            Arc::clone(&self.counters),
        )?);
        cache.insert(entity, Arc::clone(&r));
        Ok(r)
    }

    fn text_reader(&self) -> Result<Arc<TextBlobReader>> {
        if !self.has_text {
            return Err(PipelineError::config(
                "snapshot was written without raw text (text elided)",
            ));
        }
        let mut cache = self.text.lock().unwrap();
        if let Some(r) = cache.as_ref() {
            return Ok(Arc::clone(r));
        }
        let r = Arc::new(TextBlobReader::open(
            &self.dir.join("text.blob"),
            Arc::clone(&self.counters),
        )?);
        *cache = Some(Arc::clone(&r));
        Ok(r)
    }

    /// Raw title and body HTML for one question.
    pub fn question_text(&self, id: u64) -> Result<Option<(String, String)>> {
        self.text_reader()?.get(id)
    }

    fn question_views(&self) -> Result<(Vec<u64>, Vec<u64>)> {
        let r = self.columns(EntityKind::Question)?;
        let ColumnData::U64(ids) = r.read_column("id")? else {
            return Err(PipelineError::format("id column has wrong kind"));
        };
        let ColumnData::U64(views) = r.read_column("view_count")? else {
            return Err(PipelineError::format("view_count column has wrong kind"));
        };
        Ok((ids, views))
    }

    pub fn question_ids(&self) -> Result<Vec<u64>> {
        let r = self.columns(EntityKind::Question)?;
        match r.read_column("id")? {
            ColumnData::U64(ids) => Ok(ids),
            _ => Err(PipelineError::format("id column has wrong kind")),
        }
    }

    /// One full column together with the snapshot's id column.
    pub fn read_column(&self, entity: EntityKind, name: &str) -> Result<SnapshotColumn> {
        let r = self.columns(entity)?;
        let ColumnData::U64(ids) = r.read_column("id")? else {
            return Err(PipelineError::format("id column has wrong kind"));
        };
        let data = r.read_column(name)?;
        for w in ids.windows(2) {
            if w[0] >= w[1] {
                return Err(PipelineError::format("id column not strictly increasing"));
            }
        }
        if data.len() != ids.len() {
            return Err(PipelineError::format("column length differs from id column"));
        }
        Ok(SnapshotColumn {
            dump_time: self.dump_time,
            entity,
            name: name.to_string(),
            ids,
            data,
        })
    }

    pub fn questions(&self) -> Result<Vec<StoredQuestion>> {
        let r = self.columns(EntityKind::Question)?;
        let u64c = |name: &str| -> Result<Vec<u64>> {
            match r.read_column(name)? {
                ColumnData::U64(v) => Ok(v),
                _ => Err(PipelineError::format(format!("{name}: wrong kind"))),
            }
        };
        let ids = u64c("id")?;
        let view_count = u64c("view_count")?;
        let ColumnData::I64(score) = r.read_column("score")? else {
            return Err(PipelineError::format("score: wrong kind"));
        };
        let answer_count = u64c("answer_count")?;
        let comment_count = u64c("comment_count")?;
        let favorite_count = u64c("favorite_count")?;
        let ColumnData::Ts(creation_date) = r.read_column("creation_date")? else {
            return Err(PipelineError::format("creation_date: wrong kind"));
        };
        let ColumnData::Ts(last_activity_date) = r.read_column("last_activity_date")? else {
            return Err(PipelineError::format("last_activity_date: wrong kind"));
        };
        let ColumnData::OptU64(owner_user_id) = r.read_column("owner_user_id")? else {
            return Err(PipelineError::format("owner_user_id: wrong kind"));
        };
        let ColumnData::OptU64(accepted_answer_id) = r.read_column("accepted_answer_id")? else {
            return Err(PipelineError::format("accepted_answer_id: wrong kind"));
        };
        let ColumnData::OptTs(closed_date) = r.read_column("closed_date")? else {
            return Err(PipelineError::format("closed_date: wrong kind"));
        };
        let ColumnData::Str(tags) = r.read_column("tags")? else {
            return Err(PipelineError::format("tags: wrong kind"));
        };
        let title_len = u64c("title_len")?;
        let body_len = u64c("body_len")?;
        let code_len = u64c("code_len")?;
        Ok((0..ids.len())
            .map(|i| StoredQuestion {
                id: ids[i],
                view_count: view_count[i],
                score: score[i],
                answer_count: answer_count[i],
                comment_count: comment_count[i],
                favorite_count: favorite_count[i],
                creation_date: creation_date[i],
                last_activity_date: last_activity_date[i],
                owner_user_id: owner_user_id[i],
                accepted_answer_id: accepted_answer_id[i],
                closed_date: closed_date[i],
                tags: split_joined_tags(&tags[i]),
                title_len: title_len[i],
                body_len: body_len[i],
                code_len: code_len[i],
            })
            .collect())
    }

    pub fn answers(&self) -> Result<Vec<StoredAnswer>> {
        let r = self.columns(EntityKind::Answer)?;
        let u64c = |name: &str| -> Result<Vec<u64>> {
            match r.read_column(name)? {
                ColumnData::U64(v) => Ok(v),
                _ => Err(PipelineError::format(format!("{name}: wrong kind"))),
            }
        };
        let ids = u64c("id")?;
        let parent = u64c("parent_question_id")?;
        let ColumnData::I64(score) = r.read_column("score")? else {
            return Err(PipelineError::format("score: wrong kind"));
        };
        let comment_count = u64c("comment_count")?;
        let ColumnData::Ts(creation_date) = r.read_column("creation_date")? else {
            return Err(PipelineError::format("creation_date: wrong kind"));
        };
        let ColumnData::Ts(last_activity_date) = r.read_column("last_activity_date")? else {
            return Err(PipelineError::format("last_activity_date: wrong kind"));
        };
        let body_len = u64c("body_len")?;
        Ok((0..ids.len())
            .map(|i| StoredAnswer {
                id: ids[i],
                parent_question_id: parent[i],
                score: score[i],
                comment_count: comment_count[i],
                creation_date: creation_date[i],
                last_activity_date: last_activity_date[i],
                body_len: body_len[i],
            })
            .collect())
    }

    pub fn users(&self) -> Result<Vec<StoredUser>> {
        let r = self.columns(EntityKind::User)?;
        let u64c = |name: &str| -> Result<Vec<u64>> {
            match r.read_column(name)? {
                ColumnData::U64(v) => Ok(v),
                _ => Err(PipelineError::format(format!("{name}: wrong kind"))),
            }
        };
        let ids = u64c("id")?;
        let reputation = u64c("reputation")?;
        let profile_views = u64c("profile_views")?;
        let up_votes = u64c("up_votes")?;
        let down_votes = u64c("down_votes")?;
        Ok((0..ids.len())
            .map(|i| StoredUser {
                id: ids[i],
                reputation: reputation[i],
                profile_views: profile_views[i],
                up_votes: up_votes[i],
                down_votes: down_votes[i],
            })
            .collect())
    }

    /// Point read of one u64 question field.
    pub fn question_u64(&self, id: u64, column: &str) -> Result<Option<u64>> {
        let r = self.columns(EntityKind::Question)?;
        match r.find_sorted("id", id)? {
            None => Ok(None),
            Some(idx) => match r.cell(column, idx)? {
                CellValue::U64(v) => Ok(Some(v)),
                other => Err(PipelineError::format(format!(
                    "expected u64 cell for {column}, got {other:?}"
                ))),
            },
        }
    }
}

fn split_joined_tags(joined: &str) -> Vec<String> {
    if joined.is_empty() {
        Vec::new()
    } else {
        joined.split('|').map(|s| s.to_string()).collect()
    }
}
