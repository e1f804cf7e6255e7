//! Synthetic multi-dump corpora with a controllable forgetting signal.
//!
//! Questions carry one primary tag drawn from an "up" or "down" trending
//! pool. Down questions are created long before the prediction time and up
//! questions recently, so tag-window and age features separate the two
//! groups. The final inter-dump period is drawn from the planted signal: at
//! strength s a down question's future views are forced below the labeling
//! threshold (and an up question's above it) with probability s, otherwise
//! the growth is labeling-neutral noise. The generator writes dump XML plus
//! a JSON manifest holding its own ground-truth labels, so downstream
//! results are checkable against construction.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::cohort::{top_count, Label};
use crate::error::{PipelineError, Result};
use crate::ingest::tokenizer::encode_entities;
use crate::ingest::{AnswerRecord, DumpSnapshot, QuestionRecord, TagRecord, UserRecord};
use crate::timestamp::{Timestamp, MILLIS_PER_DAY, MILLIS_PER_MINUTE};

/// Selection fraction and growth threshold the manifest's expected labels
/// assume; they mirror the cohort builder's defaults.
pub const EXPECTED_TOP_FRACTION: f64 = 0.15;
pub const EXPECTED_GROWTH_THRESHOLD: f64 = -0.05;

const MAX_ANSWERS_PER_QUESTION: u64 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_questions: u64,
    pub n_users: u64,
    pub n_tags: u64,
    /// Strictly increasing dump publication times.
    pub dump_times: Vec<Timestamp>,
    /// View model: per-period means follow a Zipf curve over question rank,
    /// floored, then scaled per period by the primary tag's trend.
    pub zipf_exponent: f64,
    pub base_views_per_period: f64,
    pub min_views_per_period: f64,
    /// Negative-binomial dispersion; 0 makes view draws deterministic
    /// (exactly the rounded mean), for uniform-view corpora.
    pub view_dispersion: f64,
    pub up_trend_per_period: f64,
    pub down_trend_per_period: f64,
    /// Share of tags (and of questions) on the down-trending side.
    pub down_tag_fraction: f64,
    /// Probability that a question's final-period views are forced to the
    /// labeled side implied by its trend direction.
    pub signal_strength: f64,
    /// Answer model.
    pub mean_answers: f64,
    pub mean_answer_latency_minutes: f64,
    /// Text model.
    pub vocabulary: u64,
    pub body_words: u64,
    pub title_words: u64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_questions: 1000,
            n_users: 200,
            n_tags: 20,
            dump_times: vec![
                Timestamp::parse("2015-01-01").unwrap(),
                Timestamp::parse("2015-07-01").unwrap(),
                Timestamp::parse("2016-01-01").unwrap(),
            ],
            zipf_exponent: 1.05,
            base_views_per_period: 400.0,
            min_views_per_period: 30.0,
            view_dispersion: 2.0,
            up_trend_per_period: 1.3,
            down_trend_per_period: 0.6,
            down_tag_fraction: 0.5,
            signal_strength: 1.0,
            mean_answers: 1.8,
            mean_answer_latency_minutes: 600.0,
            vocabulary: 400,
            body_words: 30,
            title_words: 7,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users < 1 {
            return Err(PipelineError::config("n_users must be at least 1"));
        }
        if self.n_tags < 2 {
            return Err(PipelineError::config("n_tags must be at least 2"));
        }
        if self.dump_times.is_empty() {
            return Err(PipelineError::config("at least one dump time is required"));
        }
        if !self.dump_times.windows(2).all(|w| w[0] < w[1]) {
            return Err(PipelineError::config(
                "dump times must be strictly increasing",
            ));
        }
        for (name, p) in [
            ("down_tag_fraction", self.down_tag_fraction),
            ("signal_strength", self.signal_strength),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(PipelineError::config(format!(
                    "{name} must be in [0, 1], got {p}"
                )));
            }
        }
        if self.zipf_exponent < 0.0
            || self.base_views_per_period <= 0.0
            || self.min_views_per_period < 0.0
            || self.view_dispersion < 0.0
            || self.up_trend_per_period <= 0.0
            || self.down_trend_per_period <= 0.0
            || self.mean_answers < 0.0
            || self.mean_answer_latency_minutes <= 0.0
        {
            return Err(PipelineError::config("view/answer model parameters out of range"));
        }
        if self.vocabulary < 10 || self.body_words < 1 || self.title_words < 1 {
            return Err(PipelineError::config("text model parameters out of range"));
        }
        Ok(())
    }

    fn n_down_tags(&self) -> u64 {
        if self.down_tag_fraction == 0.0 {
            0
        } else if self.down_tag_fraction == 1.0 {
            self.n_tags
        } else {
            ((self.down_tag_fraction * self.n_tags as f64).round() as u64)
                .clamp(1, self.n_tags - 1)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Up,
    Down,
}

/// One expected dataset row, computed by the generator from its own counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedQuestion {
    pub question_id: u64,
    pub current_views: u64,
    pub future_views: u64,
    pub label: Label,
    /// The label the signal forced, when it did; None for noise draws.
    pub planted: Option<Label>,
}

/// What the final dump triple should produce downstream, under the default
/// selection fraction and growth threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedDataset {
    pub last_dump: Timestamp,
    pub current_dump: Timestamp,
    pub next_dump: Timestamp,
    pub top_fraction: f64,
    pub growth_threshold: f64,
    pub total: usize,
    pub being_forgotten: usize,
    pub unforgotten: usize,
    /// Sorted by question id.
    pub questions: Vec<ExpectedQuestion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub config: SynthConfig,
    pub tag_directions: BTreeMap<String, Trend>,
    /// Per-question primary tag direction, keyed by question id.
    pub question_directions: BTreeMap<u64, Trend>,
    /// Present when the corpus has at least three dumps.
    pub expected: Option<ExpectedDataset>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DumpFiles {
    pub dump_time: Timestamp,
    pub posts: PathBuf,
    pub users: PathBuf,
    pub tags: PathBuf,
}

#[derive(Debug, Clone)]
pub struct GeneratedCorpus {
    /// Internal records per dump, in file order; the round-trip invariant
    /// is that parsing the written files reproduces these exactly.
    pub dumps: Vec<DumpSnapshot>,
    pub manifest: SynthManifest,
    pub files: Vec<DumpFiles>,
    pub manifest_path: PathBuf,
}

struct AnswerPlan {
    id: u64,
    creation: Timestamp,
    owner: u64,
    score: i64,
    comment_count: u64,
    body: String,
}

struct QuestionPlan {
    id: u64,
    creation: Timestamp,
    owner: u64,
    tags: Vec<String>,
    direction: Trend,
    title: String,
    body: String,
    score: i64,
    comment_count: u64,
    favorite_count: u64,
    accepted: Option<u64>,
    answers: Vec<AnswerPlan>,
    /// Views gained per period; slot 0 is everything before the first dump.
    period_views: Vec<u64>,
    planted: Option<Label>,
}

fn draw_views(rng: &mut ChaCha8Rng, mean: f64, dispersion: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    if dispersion <= 0.0 {
        return mean.round() as u64;
    }
    // Negative binomial as a Gamma-Poisson mixture.
    let gamma = Gamma::new(dispersion, mean / dispersion).expect("gamma params");
    let lambda: f64 = gamma.sample(rng);
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("poisson param").sample(rng) as u64
}

fn synth_word(i: u64) -> String {
    match i % 5 {
        0 => format!("term{i}"),
        1 => format!("w{i}ing"),
        2 => format!("x{i}ed"),
        3 => format!("n{i}tion"),
        _ => format!("item{i}"),
    }
}

/// Words biased toward a per-tag block of the vocabulary, so text features
/// carry the tag identity.
fn draw_word(rng: &mut ChaCha8Rng, vocab: u64, tag_index: u64) -> String {
    let block = (vocab / 5).max(1);
    let idx = if rng.gen_bool(0.7) {
        (tag_index * 37 + rng.gen_range(0..block)) % vocab
    } else {
        rng.gen_range(0..vocab)
    };
    synth_word(idx)
}

fn timestamp_between(rng: &mut ChaCha8Rng, lo: Timestamp, hi: Timestamp) -> Timestamp {
    let (a, b) = (lo.millis(), hi.millis());
    Timestamp::from_millis(rng.gen_range(a..=b))
}

pub fn generate(config: &SynthConfig, out_dir: &Path) -> Result<GeneratedCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dumps = &config.dump_times;
    let k = dumps.len();
    let prediction_time = dumps[k.saturating_sub(2)];
    let gap_months = if k >= 2 {
        dumps[k - 1].months_since(dumps[k - 2])
    } else {
        6.0
    };

    let n_down = config.n_down_tags();
    let tag_names: Vec<String> = (0..config.n_tags).map(|i| format!("tag{i}")).collect();
    let tag_directions: BTreeMap<String, Trend> = tag_names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let dir = if (i as u64) < n_down { Trend::Down } else { Trend::Up };
            (name.clone(), dir)
        })
        .collect();

    let mut questions = plan_questions(config, &mut rng, &tag_names, n_down, prediction_time, gap_months);
    draw_period_views(config, &mut rng, &mut questions);

    let users = plan_users(config, &mut rng);
    let dump_snaps: Vec<DumpSnapshot> = dumps
        .iter()
        .enumerate()
        .map(|(i, &t)| build_dump(&questions, &users, &tag_names, t, i))
        .collect();

    let expected = if k >= 3 {
        Some(expected_dataset(&questions, dumps)?)
    } else {
        None
    };
    let manifest = SynthManifest {
        config: config.clone(),
        tag_directions,
        question_directions: questions.iter().map(|q| (q.id, q.direction)).collect(),
        expected,
    };

    fs::create_dir_all(out_dir)?;
    let mut files = Vec::with_capacity(k);
    for snap in &dump_snaps {
        let dir = out_dir.join(format!("dump-{}", snap.dump_time.to_path_component()));
        fs::create_dir_all(&dir)?;
        let posts = dir.join("Posts.xml");
        let users_path = dir.join("Users.xml");
        let tags_path = dir.join("Tags.xml");
        fs::write(&posts, render_posts(snap))?;
        fs::write(&users_path, render_users(snap))?;
        fs::write(&tags_path, render_tags(snap))?;
        files.push(DumpFiles {
            dump_time: snap.dump_time,
            posts,
            users: users_path,
            tags: tags_path,
        });
    }
    let manifest_path = out_dir.join("manifest.json");
    let body = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| PipelineError::format(format!("manifest: {e}")))?;
    fs::write(&manifest_path, body)?;

    Ok(GeneratedCorpus { dumps: dump_snaps, manifest, files, manifest_path })
}

fn plan_questions(
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
    tag_names: &[String],
    n_down: u64,
    prediction_time: Timestamp,
    gap_months: f64,
) -> Vec<QuestionPlan> {
    // Down questions were asked long ago, up questions recently; the gap
    // between the windows is what tag-window and age features pick up.
    let down_window = (
        prediction_time.minus_months(gap_months * 3.5),
        prediction_time.minus_months(gap_months * 2.5),
    );
    let up_window = (
        prediction_time.minus_months(gap_months * 1.5),
        prediction_time.minus_months(gap_months * 0.5),
    );

    let mut next_answer_id = config.n_questions + 1;
    let mut questions = Vec::with_capacity(config.n_questions as usize);
    for qi in 0..config.n_questions {
        let id = qi + 1;
        let direction = if rng.gen_bool(config.down_tag_fraction) { Trend::Down } else { Trend::Up };
        let (pool_start, pool_len) = match direction {
            Trend::Down => (0, n_down.max(1)),
            Trend::Up => (n_down, (config.n_tags - n_down).max(1)),
        };
        let primary = pool_start + rng.gen_range(0..pool_len);
        let mut tags = vec![tag_names[primary as usize].clone()];
        for _ in 0..rng.gen_range(0usize..3) {
            let extra = pool_start + rng.gen_range(0..pool_len);
            let name = &tag_names[extra as usize];
            if !tags.contains(name) && tags.len() < 5 {
                tags.push(name.clone());
            }
        }
        let window = match direction {
            Trend::Down => down_window,
            Trend::Up => up_window,
        };
        let creation = timestamp_between(rng, window.0, window.1);
        let owner = rng.gen_range(0..config.n_users) + 1;

        let mut title = String::from("how do i use");
        if rng.gen_bool(0.3) {
            title.push_str(" you");
        }
        for _ in 0..config.title_words {
            title.push(' ');
            title.push_str(&draw_word(rng, config.vocabulary, primary));
        }
        let mut body = String::from("<p>");
        if rng.gen_bool(0.3) {
            body.push_str("it ");
        }
        for w in 0..config.body_words {
            if w > 0 {
                body.push(' ');
            }
            body.push_str(&draw_word(rng, config.vocabulary, primary));
        }
        body.push_str("</p>");
        if rng.gen_bool(0.5) {
            let _ = write!(body, "<code>let v{} = {};</code>", id, rng.gen_range(0..100));
        }

        let n_answers = if config.mean_answers > 0.0 {
            (Poisson::new(config.mean_answers).expect("poisson param").sample(rng) as u64)
                .min(MAX_ANSWERS_PER_QUESTION)
        } else {
            0
        };
        let latency = Exp::new(1.0 / config.mean_answer_latency_minutes).expect("exp param");
        let mut answers = Vec::with_capacity(n_answers as usize);
        for _ in 0..n_answers {
            let minutes = latency.sample(rng).max(1.0);
            let creation = creation.plus_millis((minutes * MILLIS_PER_MINUTE as f64) as i64);
            let mut body = String::from("<p>try");
            for _ in 0..8 {
                body.push(' ');
                body.push_str(&draw_word(rng, config.vocabulary, primary));
            }
            body.push_str("</p>");
            answers.push(AnswerPlan {
                id: next_answer_id,
                creation,
                owner: rng.gen_range(0..config.n_users) + 1,
                score: rng.gen_range(-2i64..15),
                comment_count: rng.gen_range(0u64..5),
                body,
            });
            next_answer_id += 1;
        }
        answers.sort_by_key(|a| (a.creation, a.id));
        let accepted = if !answers.is_empty() && rng.gen_bool(0.6) {
            Some(answers[0].id)
        } else {
            None
        };

        questions.push(QuestionPlan {
            id,
            creation,
            owner,
            tags,
            direction,
            title,
            body,
            score: rng.gen_range(-3i64..40),
            comment_count: rng.gen_range(0u64..8),
            favorite_count: rng.gen_range(0u64..20),
            accepted,
            answers,
            period_views: Vec::new(),
            planted: None,
        });
    }
    questions
}

/// Draws per-period views. The final period of a 3+ dump corpus comes from
/// the signal rule instead of the trend model.
fn draw_period_views(config: &SynthConfig, rng: &mut ChaCha8Rng, questions: &mut [QuestionPlan]) {
    let dumps = &config.dump_times;
    let k = dumps.len();
    let forced_final = k >= 3;

    for (rank, q) in questions.iter_mut().enumerate() {
        // Zipf over question rank, floored so the selectable top is never
        // starved of views.
        let zipf = config.base_views_per_period / (1.0 + rank as f64).powf(config.zipf_exponent);
        let rate = zipf.max(config.min_views_per_period);
        let trend = match q.direction {
            Trend::Down => config.down_trend_per_period,
            Trend::Up => config.up_trend_per_period,
        };
        let normal_periods = if forced_final { k - 1 } else { k };
        let mut views = vec![0u64; k];
        for (i, slot) in views.iter_mut().enumerate().take(normal_periods) {
            // A question only accrues views once it exists.
            if q.creation > dumps[i] {
                continue;
            }
            let mean = rate * trend.powi(i as i32);
            *slot = draw_views(rng, mean, config.view_dispersion);
        }
        q.period_views = views;
    }

    if forced_final {
        for q in questions.iter_mut() {
            if q.creation > dumps[k - 2] {
                continue;
            }
            let current: u64 = {
                let cum_current: u64 = q.period_views[..k - 1].iter().sum();
                let cum_last: u64 = q.period_views[..k - 2].iter().sum();
                cum_current - cum_last
            };
            let final_slot = k - 1;
            if current == 0 {
                q.period_views[final_slot] = draw_views(
                    rng,
                    config.min_views_per_period.max(1.0),
                    config.view_dispersion,
                );
                continue;
            }
            let forced = rng.gen_bool(config.signal_strength);
            let delta = if forced {
                match q.direction {
                    Trend::Down => rng.gen_range(-0.6..-0.2),
                    Trend::Up => rng.gen_range(0.05..0.5),
                }
            } else {
                rng.gen_range(-0.55..0.45)
            };
            if forced {
                q.planted = Some(match q.direction {
                    Trend::Down => Label::BeingForgotten,
                    Trend::Up => Label::Unforgotten,
                });
            }
            q.period_views[final_slot] = (current as f64 * (1.0 + delta)).round().max(0.0) as u64;
        }
    }
}

fn plan_users(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<UserRecord> {
    let first_dump = config.dump_times[0];
    (0..config.n_users)
        .map(|i| {
            let id = i + 1;
            let creation = first_dump.plus_millis(
                -rng.gen_range(30i64..2000) * MILLIS_PER_DAY,
            );
            UserRecord {
                id,
                reputation: (5000.0 / (1.0 + i as f64).powf(1.1)) as u64 + rng.gen_range(1..50),
                profile_views: rng.gen_range(0..500),
                up_votes: rng.gen_range(0..300),
                down_votes: rng.gen_range(0..60),
                creation_date: creation,
            }
        })
        .collect()
}

fn build_dump(
    questions: &[QuestionPlan],
    users: &[UserRecord],
    tag_names: &[String],
    t: Timestamp,
    period_index: usize,
) -> DumpSnapshot {
    let mut snap = DumpSnapshot::new(t);
    let mut tag_counts: BTreeMap<&str, u64> = tag_names.iter().map(|n| (n.as_str(), 0)).collect();
    for q in questions {
        if q.creation > t {
            continue;
        }
        for tag in &q.tags {
            *tag_counts.get_mut(tag.as_str()).expect("known tag") += 1;
        }
        let visible_answers: Vec<&AnswerPlan> =
            q.answers.iter().filter(|a| a.creation <= t).collect();
        let last_activity = visible_answers
            .iter()
            .map(|a| a.creation)
            .max()
            .map_or(q.creation, |latest| latest.max(q.creation));
        let accepted = q.accepted.filter(|id| {
            visible_answers.iter().any(|a| a.id == *id)
        });
        let view_count: u64 = q.period_views[..=period_index].iter().sum();
        snap.questions.push(QuestionRecord {
            id: q.id,
            creation_date: q.creation,
            score: q.score,
            view_count,
            body_html: q.body.clone(),
            title: q.title.clone(),
            tags: q.tags.clone(),
            answer_count: visible_answers.len() as u64,
            comment_count: q.comment_count,
            favorite_count: q.favorite_count,
            accepted_answer_id: accepted,
            owner_user_id: Some(q.owner),
            last_activity_date: last_activity,
            closed_date: None,
        });
        for a in visible_answers {
            snap.answers.push(AnswerRecord {
                id: a.id,
                parent_question_id: q.id,
                creation_date: a.creation,
                score: a.score,
                comment_count: a.comment_count,
                body_html: a.body.clone(),
                last_activity_date: a.creation,
                owner_user_id: Some(a.owner),
            });
        }
    }
    snap.answers.sort_by_key(|a| a.id);
    snap.users = users.to_vec();
    snap.tags = tag_names
        .iter()
        .map(|n| TagRecord { name: n.clone(), question_count: tag_counts[n.as_str()] })
        .collect();
    snap
}

/// Mirrors the downstream selection and labeling rules on the generator's
/// own counts for the final dump triple.
fn expected_dataset(questions: &[QuestionPlan], dumps: &[Timestamp]) -> Result<ExpectedDataset> {
    let k = dumps.len();
    let (t_last, t_current, t_next) = (dumps[k - 3], dumps[k - 2], dumps[k - 1]);
    let mut pairs: Vec<(u64, u64)> = questions
        .iter()
        .filter(|q| q.creation <= t_current)
        .map(|q| {
            let cum_current: u64 = q.period_views[..k - 1].iter().sum();
            let cum_last: u64 = q.period_views[..k - 2].iter().sum();
            (q.id, cum_current - cum_last)
        })
        .collect();
    pairs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let n = pairs.len();
    let top = top_count(EXPECTED_TOP_FRACTION, n);
    let mut end = top;
    if top > 0 {
        let cutoff = pairs[top - 1].1;
        while end < n && pairs[end].1 == cutoff {
            end += 1;
        }
    }
    pairs.truncate(end);
    if let Some((id, _)) = pairs.iter().find(|(_, v)| *v == 0) {
        return Err(PipelineError::config(format!(
            "expected selection reaches zero-view question {id}; raise min_views_per_period"
        )));
    }

    let by_id: BTreeMap<u64, &QuestionPlan> = questions.iter().map(|q| (q.id, q)).collect();
    let mut rows: Vec<ExpectedQuestion> = pairs
        .into_iter()
        .map(|(id, current)| {
            let q = by_id[&id];
            let future = q.period_views[k - 1];
            let growth = (future as f64 - current as f64) / current as f64;
            let label = if growth < EXPECTED_GROWTH_THRESHOLD {
                Label::BeingForgotten
            } else {
                Label::Unforgotten
            };
            ExpectedQuestion {
                question_id: id,
                current_views: current,
                future_views: future,
                label,
                planted: q.planted,
            }
        })
        .collect();
    rows.sort_by_key(|r| r.question_id);
    let being_forgotten = rows.iter().filter(|r| r.label == Label::BeingForgotten).count();
    Ok(ExpectedDataset {
        last_dump: t_last,
        current_dump: t_current,
        next_dump: t_next,
        top_fraction: EXPECTED_TOP_FRACTION,
        growth_threshold: EXPECTED_GROWTH_THRESHOLD,
        total: rows.len(),
        being_forgotten,
        unforgotten: rows.len() - being_forgotten,
        questions: rows,
    })
}

fn push_attr(out: &mut String, name: &str, value: &str) {
    out.push(' ');
    out.push_str(name);
    out.push_str("=\"");
    out.push_str(&encode_entities(value));
    out.push('"');
}

fn render_posts(snap: &DumpSnapshot) -> String {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<posts>\n");
    for q in &snap.questions {
        out.push_str("  <row");
        push_attr(&mut out, "Id", &q.id.to_string());
        push_attr(&mut out, "PostTypeId", "1");
        if let Some(a) = q.accepted_answer_id {
            push_attr(&mut out, "AcceptedAnswerId", &a.to_string());
        }
        push_attr(&mut out, "CreationDate", &q.creation_date.to_iso());
        push_attr(&mut out, "Score", &q.score.to_string());
        push_attr(&mut out, "ViewCount", &q.view_count.to_string());
        push_attr(&mut out, "Body", &q.body_html);
        if let Some(o) = q.owner_user_id {
            push_attr(&mut out, "OwnerUserId", &o.to_string());
        }
        push_attr(&mut out, "LastActivityDate", &q.last_activity_date.to_iso());
        push_attr(&mut out, "Title", &q.title);
        let tags: String = q.tags.iter().map(|t| format!("<{t}>")).collect();
        push_attr(&mut out, "Tags", &tags);
        push_attr(&mut out, "AnswerCount", &q.answer_count.to_string());
        push_attr(&mut out, "CommentCount", &q.comment_count.to_string());
        push_attr(&mut out, "FavoriteCount", &q.favorite_count.to_string());
        if let Some(c) = q.closed_date {
            push_attr(&mut out, "ClosedDate", &c.to_iso());
        }
        out.push_str(" />\n");
    }
    for a in &snap.answers {
        out.push_str("  <row");
        push_attr(&mut out, "Id", &a.id.to_string());
        push_attr(&mut out, "PostTypeId", "2");
        push_attr(&mut out, "ParentId", &a.parent_question_id.to_string());
        push_attr(&mut out, "CreationDate", &a.creation_date.to_iso());
        push_attr(&mut out, "Score", &a.score.to_string());
        push_attr(&mut out, "Body", &a.body_html);
        if let Some(o) = a.owner_user_id {
            push_attr(&mut out, "OwnerUserId", &o.to_string());
        }
        push_attr(&mut out, "LastActivityDate", &a.last_activity_date.to_iso());
        push_attr(&mut out, "CommentCount", &a.comment_count.to_string());
        out.push_str(" />\n");
    }
    out.push_str("</posts>\n");
    out
}

fn render_users(snap: &DumpSnapshot) -> String {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<users>\n");
    for u in &snap.users {
        out.push_str("  <row");
        push_attr(&mut out, "Id", &u.id.to_string());
        push_attr(&mut out, "Reputation", &u.reputation.to_string());
        push_attr(&mut out, "CreationDate", &u.creation_date.to_iso());
        push_attr(&mut out, "Views", &u.profile_views.to_string());
        push_attr(&mut out, "UpVotes", &u.up_votes.to_string());
        push_attr(&mut out, "DownVotes", &u.down_votes.to_string());
        out.push_str(" />\n");
    }
    out.push_str("</users>\n");
    out
}

fn render_tags(snap: &DumpSnapshot) -> String {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<tags>\n");
    for (i, t) in snap.tags.iter().enumerate() {
        out.push_str("  <row");
        push_attr(&mut out, "Id", &(i + 1).to_string());
        push_attr(&mut out, "TagName", &t.name);
        push_attr(&mut out, "Count", &t.question_count.to_string());
        out.push_str(" />\n");
    }
    out.push_str("</tags>\n");
    out
}
