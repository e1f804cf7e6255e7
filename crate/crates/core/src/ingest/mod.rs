//! Streaming parsers for Posts/Users/Tags dump files.
//!
//! Parsing is a single pass over one stream; peak memory is bounded by the
//! largest single row. Rows with structural damage abort in strict mode and
//! are skipped with a counted warning otherwise; rows missing a mandatory
//! attribute or failing a record invariant are always skipped with a
//! warning, in either mode.

pub mod tokenizer;

use crate::error::{PipelineError, Result};
use crate::timestamp::Timestamp;
use std::io::BufRead;
use tokenizer::{RawRow, RowTokenError, RowTokenizer};

pub const MAX_TAGS: usize = 5;

/// A question as of one dump. Counters are cumulative at dump time.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionRecord {
    pub id: u64,
    pub creation_date: Timestamp,
    pub score: i64,
    pub view_count: u64,
    pub body_html: String,
    pub title: String,
    pub tags: Vec<String>,
    pub answer_count: u64,
    pub comment_count: u64,
    pub favorite_count: u64,
    pub accepted_answer_id: Option<u64>,
    pub owner_user_id: Option<u64>,
    pub last_activity_date: Timestamp,
    pub closed_date: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnswerRecord {
    pub id: u64,
    pub parent_question_id: u64,
    pub creation_date: Timestamp,
    pub score: i64,
    pub comment_count: u64,
    pub body_html: String,
    pub last_activity_date: Timestamp,
    pub owner_user_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserRecord {
    pub id: u64,
    pub reputation: u64,
    pub profile_views: u64,
    pub up_votes: u64,
    pub down_votes: u64,
    pub creation_date: Timestamp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagRecord {
    pub name: String,
    pub question_count: u64,
}

/// Everything extracted from one dump, stamped with its publication time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DumpSnapshot {
    pub dump_time: Timestamp,
    pub questions: Vec<QuestionRecord>,
    pub answers: Vec<AnswerRecord>,
    pub users: Vec<UserRecord>,
    pub tags: Vec<TagRecord>,
}

impl DumpSnapshot {
    pub fn new(dump_time: Timestamp) -> Self {
        DumpSnapshot {
            dump_time,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Post {
    Question(QuestionRecord),
    Answer(AnswerRecord),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Abort on structurally malformed rows instead of skipping them.
    pub strict: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseCounters {
    pub rows: u64,
    pub questions: u64,
    pub answers: u64,
    pub users: u64,
    pub tags: u64,
    pub skipped_other_type: u64,
    pub skipped_malformed: u64,
}

impl ParseCounters {
    pub fn merge(&mut self, other: &ParseCounters) {
        self.rows += other.rows;
        self.questions += other.questions;
        self.answers += other.answers;
        self.users += other.users;
        self.tags += other.tags;
        self.skipped_other_type += other.skipped_other_type;
        self.skipped_malformed += other.skipped_malformed;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseWarning {
    pub byte_offset: u64,
    pub reason: String,
}

/// Reads one dump's files into a snapshot. Users and tags files are
/// optional because some exports omit them.
pub fn read_dump(
    dump_time: Timestamp,
    posts: &std::path::Path,
    users: Option<&std::path::Path>,
    tags: Option<&std::path::Path>,
    opts: ParseOptions,
) -> Result<(DumpSnapshot, ParseCounters, Vec<ParseWarning>)> {
    fn open(path: &std::path::Path) -> Result<std::io::BufReader<std::fs::File>> {
        let file = std::fs::File::open(path).map_err(|e| {
            PipelineError::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?;
        Ok(std::io::BufReader::with_capacity(1 << 16, file))
    }

    let mut snap = DumpSnapshot::new(dump_time);
    let mut counters = ParseCounters::default();
    let mut warnings = Vec::new();

    let mut parser = PostParser::new(open(posts)?, dump_time, opts);
    for post in &mut parser {
        match post? {
            Post::Question(q) => snap.questions.push(q),
            Post::Answer(a) => snap.answers.push(a),
        }
    }
    counters.merge(parser.counters());
    warnings.extend_from_slice(parser.warnings());

    if let Some(path) = users {
        let mut parser = UserParser::new(open(path)?, opts);
        for user in &mut parser {
            snap.users.push(user?);
        }
        counters.merge(parser.counters());
        warnings.extend_from_slice(parser.warnings());
    }

    if let Some(path) = tags {
        let mut parser = TagParser::new(open(path)?, opts);
        for tag in &mut parser {
            snap.tags.push(tag?);
        }
        counters.merge(parser.counters());
        warnings.extend_from_slice(parser.warnings());
    }

    Ok((snap, counters, warnings))
}

/// Bound on retained warnings so that parsing stays constant-memory; the
/// full count is in [`ParseCounters::skipped_malformed`].
const WARNING_SAMPLE_CAP: usize = 100;

struct WarningSink {
    sample: Vec<ParseWarning>,
}

impl WarningSink {
    fn new() -> Self {
        WarningSink { sample: Vec::new() }
    }

    fn emit(&mut self, byte_offset: u64, reason: String) {
        log::warn!("skipping dump row at byte {byte_offset}: {reason}");
        if self.sample.len() < WARNING_SAMPLE_CAP {
            self.sample.push(ParseWarning { byte_offset, reason });
        }
    }
}

/// Row-level problem: the row is well-formed XML but not a usable record.
enum RowIssue {
    Missing(&'static str),
    Invalid(&'static str, String),
}

impl RowIssue {
    fn describe(&self) -> String {
        match self {
            RowIssue::Missing(attr) => format!("missing mandatory attribute {attr}"),
            RowIssue::Invalid(what, detail) => format!("invalid {what}: {detail}"),
        }
    }
}

fn req<'a>(row: &'a RawRow, name: &'static str) -> std::result::Result<&'a str, RowIssue> {
    row.attr(name).ok_or(RowIssue::Missing(name))
}

fn parse_u64(row: &RawRow, name: &'static str, default: u64) -> std::result::Result<u64, RowIssue> {
    match row.attr(name) {
        None => Ok(default),
        Some(v) => v
            .trim()
            .parse::<u64>()
            .map_err(|_| RowIssue::Invalid(name, v.to_string())),
    }
}

fn parse_i64(row: &RawRow, name: &'static str, default: i64) -> std::result::Result<i64, RowIssue> {
    match row.attr(name) {
        None => Ok(default),
        Some(v) => v
            .trim()
            .parse::<i64>()
            .map_err(|_| RowIssue::Invalid(name, v.to_string())),
    }
}

fn parse_opt_id(row: &RawRow, name: &'static str) -> std::result::Result<Option<u64>, RowIssue> {
    match row.attr(name) {
        None => Ok(None),
        Some(v) => {
            let id = v
                .trim()
                .parse::<u64>()
                .map_err(|_| RowIssue::Invalid(name, v.to_string()))?;
            // 0 and negative owner ids mark community/deleted owners in dumps
            Ok(if id == 0 { None } else { Some(id) })
        }
    }
}

fn parse_ts(value: &str, name: &'static str) -> std::result::Result<Timestamp, RowIssue> {
    Timestamp::parse(value).map_err(|_| RowIssue::Invalid(name, value.to_string()))
}

fn parse_opt_ts(
    row: &RawRow,
    name: &'static str,
) -> std::result::Result<Option<Timestamp>, RowIssue> {
    match row.attr(name) {
        None => Ok(None),
        Some(v) => parse_ts(v, name).map(Some),
    }
}

/// Split a Tags attribute into an ordered, lowercased tag list. Both the
/// bracketed form `<a><b>` and the pipe form `a|b` (with or without edge
/// pipes) occur across dump eras.
pub fn split_tags(raw: &str) -> Vec<String> {
    let raw = raw.trim();
    let parts: Vec<&str> = if raw.contains('<') {
        raw.trim_start_matches('<')
            .trim_end_matches('>')
            .split("><")
            .collect()
    } else {
        raw.split('|').collect()
    };
    parts
        .into_iter()
        .map(|t| t.trim().to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

fn build_question(
    row: &RawRow,
    dump_time: Timestamp,
) -> std::result::Result<QuestionRecord, RowIssue> {
    let id = req(row, "Id")?
        .trim()
        .parse::<u64>()
        .map_err(|_| RowIssue::Invalid("Id", row.attr("Id").unwrap_or("").to_string()))?;
    let creation_date = parse_ts(req(row, "CreationDate")?, "CreationDate")?;
    let last_activity_date = match row.attr("LastActivityDate") {
        Some(v) => parse_ts(v, "LastActivityDate")?,
        None => creation_date,
    };
    let tags = split_tags(row.attr("Tags").unwrap_or(""));
    let rec = QuestionRecord {
        id,
        creation_date,
        score: parse_i64(row, "Score", 0)?,
        view_count: parse_u64(row, "ViewCount", 0)?,
        body_html: row.attr("Body").unwrap_or("").to_string(),
        title: row.attr("Title").unwrap_or("").to_string(),
        tags,
        answer_count: parse_u64(row, "AnswerCount", 0)?,
        comment_count: parse_u64(row, "CommentCount", 0)?,
        favorite_count: parse_u64(row, "FavoriteCount", 0)?,
        accepted_answer_id: parse_opt_id(row, "AcceptedAnswerId")?,
        owner_user_id: parse_opt_id(row, "OwnerUserId")?,
        last_activity_date,
        closed_date: parse_opt_ts(row, "ClosedDate")?,
    };
    if rec.id == 0 {
        return Err(RowIssue::Invalid("Id", "0".into()));
    }
    if rec.tags.is_empty() || rec.tags.len() > MAX_TAGS {
        return Err(RowIssue::Invalid("Tags", format!("{} tags", rec.tags.len())));
    }
    if rec.last_activity_date < rec.creation_date {
        return Err(RowIssue::Invalid(
            "LastActivityDate",
            "earlier than CreationDate".into(),
        ));
    }
    if rec.creation_date > dump_time {
        return Err(RowIssue::Invalid(
            "CreationDate",
            "later than dump time".into(),
        ));
    }
    Ok(rec)
}

fn build_answer(row: &RawRow, dump_time: Timestamp) -> std::result::Result<AnswerRecord, RowIssue> {
    let id = req(row, "Id")?
        .trim()
        .parse::<u64>()
        .map_err(|_| RowIssue::Invalid("Id", row.attr("Id").unwrap_or("").to_string()))?;
    let parent = req(row, "ParentId")?
        .trim()
        .parse::<u64>()
        .map_err(|_| RowIssue::Invalid("ParentId", row.attr("ParentId").unwrap_or("").to_string()))?;
    let creation_date = parse_ts(req(row, "CreationDate")?, "CreationDate")?;
    let last_activity_date = match row.attr("LastActivityDate") {
        Some(v) => parse_ts(v, "LastActivityDate")?,
        None => creation_date,
    };
    let rec = AnswerRecord {
        id,
        parent_question_id: parent,
        creation_date,
        score: parse_i64(row, "Score", 0)?,
        comment_count: parse_u64(row, "CommentCount", 0)?,
        body_html: row.attr("Body").unwrap_or("").to_string(),
        last_activity_date,
        owner_user_id: parse_opt_id(row, "OwnerUserId")?,
    };
    if rec.id == 0 || rec.parent_question_id == 0 {
        return Err(RowIssue::Invalid("Id/ParentId", "0".into()));
    }
    if rec.last_activity_date < rec.creation_date {
        return Err(RowIssue::Invalid(
            "LastActivityDate",
            "earlier than CreationDate".into(),
        ));
    }
    if rec.creation_date > dump_time {
        return Err(RowIssue::Invalid(
            "CreationDate",
            "later than dump time".into(),
        ));
    }
    Ok(rec)
}

/// Streaming iterator over a Posts dump: yields questions and answers in
/// file order, skipping other post types.
pub struct PostParser<R> {
    tok: RowTokenizer<R>,
    dump_time: Timestamp,
    opts: ParseOptions,
    counters: ParseCounters,
    warnings: WarningSink,
    fused: bool,
}

impl<R: BufRead> PostParser<R> {
    pub fn new(reader: R, dump_time: Timestamp, opts: ParseOptions) -> Self {
        PostParser {
            tok: RowTokenizer::new(reader),
            dump_time,
            opts,
            counters: ParseCounters::default(),
            warnings: WarningSink::new(),
            fused: false,
        }
    }

    pub fn counters(&self) -> &ParseCounters {
        &self.counters
    }

    pub fn warnings(&self) -> &[ParseWarning] {
        &self.warnings.sample
    }

    fn build(&mut self, row: &RawRow) -> Option<Post> {
        let type_id = match row.attr("PostTypeId") {
            None => {
                self.counters.skipped_malformed += 1;
                self.warnings
                    .emit(row.byte_offset, RowIssue::Missing("PostTypeId").describe());
                return None;
            }
            Some(v) => v.trim().parse::<u32>().unwrap_or(u32::MAX),
        };
        match type_id {
            1 => match build_question(row, self.dump_time) {
                Ok(q) => {
                    self.counters.questions += 1;
                    Some(Post::Question(q))
                }
                Err(issue) => {
                    self.counters.skipped_malformed += 1;
                    self.warnings.emit(row.byte_offset, issue.describe());
                    None
                }
            },
            2 => match build_answer(row, self.dump_time) {
                Ok(a) => {
                    self.counters.answers += 1;
                    Some(Post::Answer(a))
                }
                Err(issue) => {
                    self.counters.skipped_malformed += 1;
                    self.warnings.emit(row.byte_offset, issue.describe());
                    None
                }
            },
            _ => {
                self.counters.skipped_other_type += 1;
                None
            }
        }
    }
}

impl<R: BufRead> Iterator for PostParser<R> {
    type Item = Result<Post>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.fused {
            return None;
        }
        loop {
            match self.tok.next_row() {
                Ok(None) => return None,
                Ok(Some(row)) => {
                    self.counters.rows += 1;
                    if let Some(post) = self.build(&row) {
                        return Some(Ok(post));
                    }
                }
                Err(RowTokenError::Io(e)) => {
                    self.fused = true;
                    return Some(Err(PipelineError::Io(e)));
                }
                Err(RowTokenError::Malformed(e)) => {
                    if self.opts.strict {
                        self.fused = true;
                        return Some(Err(PipelineError::Parse {
                            offset: e.byte_offset,
                            reason: e.reason,
                        }));
                    }
                    self.counters.skipped_malformed += 1;
                    self.warnings.emit(e.byte_offset, e.reason);
                    if let Err(io) = self.tok.resync() {
                        self.fused = true;
                        return Some(Err(PipelineError::Io(io)));
                    }
                }
            }
        }
    }
}

/// Streaming iterator over a Users dump.
pub struct UserParser<R> {
    tok: RowTokenizer<R>,
    opts: ParseOptions,
    counters: ParseCounters,
    warnings: WarningSink,
    fused: bool,
}

impl<R: BufRead> UserParser<R> {
    pub fn new(reader: R, opts: ParseOptions) -> Self {
        UserParser {
            tok: RowTokenizer::new(reader),
            opts,
            counters: ParseCounters::default(),
            warnings: WarningSink::new(),
            fused: false,
        }
    }

    pub fn counters(&self) -> &ParseCounters {
        &self.counters
    }

    pub fn warnings(&self) -> &[ParseWarning] {
        &self.warnings.sample
    }

    fn build(row: &RawRow) -> std::result::Result<UserRecord, RowIssue> {
        let id = req(row, "Id")?
            .trim()
            .parse::<u64>()
            .map_err(|_| RowIssue::Invalid("Id", row.attr("Id").unwrap_or("").to_string()))?;
        let creation_date = parse_ts(req(row, "CreationDate")?, "CreationDate")?;
        if id == 0 {
            return Err(RowIssue::Invalid("Id", "0".into()));
        }
        Ok(UserRecord {
            id,
            reputation: parse_u64(row, "Reputation", 0)?,
            profile_views: parse_u64(row, "Views", 0)?,
            up_votes: parse_u64(row, "UpVotes", 0)?,
            down_votes: parse_u64(row, "DownVotes", 0)?,
            creation_date,
        })
    }
}

impl<R: BufRead> Iterator for UserParser<R> {
    type Item = Result<UserRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.fused {
            return None;
        }
        loop {
            match self.tok.next_row() {
                Ok(None) => return None,
                Ok(Some(row)) => {
                    self.counters.rows += 1;
                    match Self::build(&row) {
                        Ok(u) => {
                            self.counters.users += 1;
                            return Some(Ok(u));
                        }
                        Err(issue) => {
                            self.counters.skipped_malformed += 1;
                            self.warnings.emit(row.byte_offset, issue.describe());
                        }
                    }
                }
                Err(RowTokenError::Io(e)) => {
                    self.fused = true;
                    return Some(Err(PipelineError::Io(e)));
                }
                Err(RowTokenError::Malformed(e)) => {
                    if self.opts.strict {
                        self.fused = true;
                        return Some(Err(PipelineError::Parse {
                            offset: e.byte_offset,
                            reason: e.reason,
                        }));
                    }
                    self.counters.skipped_malformed += 1;
                    self.warnings.emit(e.byte_offset, e.reason);
                    if let Err(io) = self.tok.resync() {
                        self.fused = true;
                        return Some(Err(PipelineError::Io(io)));
                    }
                }
            }
        }
    }
}

/// Streaming iterator over a Tags dump. Tag names normalize to lowercase.
pub struct TagParser<R> {
    tok: RowTokenizer<R>,
    opts: ParseOptions,
    counters: ParseCounters,
    warnings: WarningSink,
    fused: bool,
}

impl<R: BufRead> TagParser<R> {
    pub fn new(reader: R, opts: ParseOptions) -> Self {
        TagParser {
            tok: RowTokenizer::new(reader),
            opts,
            counters: ParseCounters::default(),
            warnings: WarningSink::new(),
            fused: false,
        }
    }

    pub fn counters(&self) -> &ParseCounters {
        &self.counters
    }

    pub fn warnings(&self) -> &[ParseWarning] {
        &self.warnings.sample
    }

    fn build(row: &RawRow) -> std::result::Result<TagRecord, RowIssue> {
        let name = req(row, "TagName")?.trim().to_lowercase();
        if name.is_empty() {
            return Err(RowIssue::Invalid("TagName", "empty".into()));
        }
        if name.contains('<') || name.contains('>') {
            return Err(RowIssue::Invalid("TagName", name));
        }
        Ok(TagRecord {
            name,
            question_count: parse_u64(row, "Count", 0)?,
        })
    }
}

impl<R: BufRead> Iterator for TagParser<R> {
    type Item = Result<TagRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.fused {
            return None;
        }
        loop {
            match self.tok.next_row() {
                Ok(None) => return None,
                Ok(Some(row)) => {
                    self.counters.rows += 1;
                    match Self::build(&row) {
                        Ok(t) => {
                            self.counters.tags += 1;
                            return Some(Ok(t));
                        }
                        Err(issue) => {
                            self.counters.skipped_malformed += 1;
                            self.warnings.emit(row.byte_offset, issue.describe());
                        }
                    }
                }
                Err(RowTokenError::Io(e)) => {
                    self.fused = true;
                    return Some(Err(PipelineError::Io(e)));
                }
                Err(RowTokenError::Malformed(e)) => {
                    if self.opts.strict {
                        self.fused = true;
                        return Some(Err(PipelineError::Parse {
                            offset: e.byte_offset,
                            reason: e.reason,
                        }));
                    }
                    self.counters.skipped_malformed += 1;
                    self.warnings.emit(e.byte_offset, e.reason);
                    if let Err(io) = self.tok.resync() {
                        self.fused = true;
                        return Some(Err(PipelineError::Io(io)));
                    }
                }
            }
        }
    }
}
