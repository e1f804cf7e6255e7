//! Labeled datasets of recently highly viewed questions, plus the
//! descriptive period analyses (staleness of historical top questions,
//! view concentration, top-set persistence, growth histograms, closed
//! comparisons).
//!
//! A dataset comes from a dump triple (last, current, next): current-period
//! views select the top questions, future-period views label them. The
//! growth threshold comparison is strict (`<`), and top-fraction selection
//! includes every question tied with the boundary value.

use crate::error::{PipelineError, Result};
use crate::store::{IdSelection, Store};
use crate::timestamp::Timestamp;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CohortConfig {
    /// Nominal months between consecutive dumps of a triple.
    #[serde(default = "default_gap_months")]
    pub gap_months: u32,
    /// Fraction of questions kept as "highly viewed", by current-period views.
    #[serde(default = "default_fraction")]
    pub highly_viewed_fraction: f64,
    /// Growth below this labels a question as being forgotten.
    #[serde(default = "default_threshold")]
    pub forgotten_growth_threshold: f64,
    /// Top-percent grid for the staleness analysis.
    #[serde(default = "default_grid")]
    pub top_n_percent_grid: Vec<f64>,
    /// A historical top question receiving fewer than this many views in the
    /// reference window counts as stale.
    #[serde(default = "default_ceiling")]
    pub stale_view_ceiling: u64,
}

fn default_gap_months() -> u32 {
    6
}
fn default_fraction() -> f64 {
    0.15
}
fn default_threshold() -> f64 {
    -0.05
}
fn default_grid() -> Vec<f64> {
    vec![0.10, 0.20, 0.30, 0.40, 0.50]
}
fn default_ceiling() -> u64 {
    50
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            gap_months: default_gap_months(),
            highly_viewed_fraction: default_fraction(),
            forgotten_growth_threshold: default_threshold(),
            top_n_percent_grid: default_grid(),
            stale_view_ceiling: default_ceiling(),
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.highly_viewed_fraction > 0.0 && self.highly_viewed_fraction <= 1.0) {
            return Err(PipelineError::config(format!(
                "highly_viewed_fraction must be in (0,1], got {}",
                self.highly_viewed_fraction
            )));
        }
        if !(self.forgotten_growth_threshold < 0.0) {
            return Err(PipelineError::config(format!(
                "forgotten_growth_threshold must be negative, got {}",
                self.forgotten_growth_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    BeingForgotten,
    Unforgotten,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::BeingForgotten => "being_forgotten",
            Label::Unforgotten => "unforgotten",
        }
    }

    pub fn parse(s: &str) -> Result<Label> {
        match s {
            "being_forgotten" => Ok(Label::BeingForgotten),
            "unforgotten" => Ok(Label::Unforgotten),
            other => Err(PipelineError::format(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledQuestion {
    pub question_id: u64,
    pub current_views: u64,
    pub future_views: u64,
    pub views_growth: f64,
    pub label: Label,
    pub prediction_time: Timestamp,
}

#[derive(Debug, Clone, Serialize)]
pub struct CohortDataset {
    pub last_dump: Timestamp,
    pub current_dump: Timestamp,
    pub next_dump: Timestamp,
    /// Dump spacing used when the dataset was built. Downstream feature
    /// extraction reuses it as the tag-popularity window length.
    pub gap_months: f64,
    /// Sorted by question id.
    pub questions: Vec<LabeledQuestion>,
    pub total: usize,
    pub being_forgotten: usize,
    pub unforgotten: usize,
    /// Selected questions that vanished before the next dump and were
    /// dropped from the dataset.
    pub dropped_absent_next: u64,
    /// Negative cumulative-count deltas clamped while computing the two
    /// periods.
    pub clamped_negative_current: u64,
    pub clamped_negative_future: u64,
}

/// ceil(fraction * n) with a tolerance so that decimal fractions hitting an
/// integer exactly (0.15 * 100) do not round up past it.
pub fn top_count(fraction: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let exact = fraction * n as f64;
    let k = if (exact - exact.round()).abs() < 1e-9 {
        exact.round()
    } else {
        exact.ceil()
    } as usize;
    k.clamp(1, n)
}

/// Ranks (views, id) pairs and returns the ids of the top `fraction`,
/// extended through ties at the boundary.
fn select_top(mut pairs: Vec<(u64, u64)>, fraction: f64) -> Vec<(u64, u64)> {
    pairs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let k = top_count(fraction, pairs.len());
    if k == 0 {
        return Vec::new();
    }
    let cutoff = pairs[k - 1].1;
    let mut end = k;
    while end < pairs.len() && pairs[end].1 == cutoff {
        end += 1;
    }
    pairs.truncate(end);
    pairs
}

pub fn build_dataset(
    store: &Store,
    t_last: Timestamp,
    t_current: Timestamp,
    t_next: Timestamp,
    config: &CohortConfig,
) -> Result<CohortDataset> {
    config.validate()?;
    if !(t_last < t_current && t_current < t_next) {
        return Err(PipelineError::config(format!(
            "dump triple must be ordered, got {t_last}, {t_current}, {t_next}"
        )));
    }
    let current = store.views_between(IdSelection::All, t_last, t_current, false)?;
    let pairs: Vec<(u64, u64)> = current
        .deltas
        .iter()
        .map(|d| (d.question_id, d.views_in_period))
        .collect();
    let selected = select_top(pairs, config.highly_viewed_fraction);
    if let Some((id, _)) = selected.iter().find(|(_, v)| *v == 0) {
        return Err(PipelineError::data(format!(
            "selection reached zero-view questions (e.g. id {id}); the corpus has too few viewed questions for fraction {}",
            config.highly_viewed_fraction
        )));
    }
    let ids: Vec<u64> = selected.iter().map(|(id, _)| *id).collect();
    let current_by_id: HashMap<u64, u64> = selected.into_iter().collect();
    let future = store.views_between(IdSelection::Set(&ids), t_current, t_next, false)?;

    let mut questions = Vec::with_capacity(future.deltas.len());
    for d in &future.deltas {
        let current_views = current_by_id[&d.question_id];
        let future_views = d.views_in_period;
        let views_growth = (future_views as f64 - current_views as f64) / current_views as f64;
        let label = if views_growth < config.forgotten_growth_threshold {
            Label::BeingForgotten
        } else {
            Label::Unforgotten
        };
        questions.push(LabeledQuestion {
            question_id: d.question_id,
            current_views,
            future_views,
            views_growth,
            label,
            prediction_time: t_current,
        });
    }
    questions.sort_by_key(|q| q.question_id);
    let being_forgotten = questions.iter().filter(|q| q.label == Label::BeingForgotten).count();
    let total = questions.len();
    Ok(CohortDataset {
        last_dump: t_last,
        current_dump: t_current,
        next_dump: t_next,
        gap_months: f64::from(config.gap_months),
        unforgotten: total - being_forgotten,
        total,
        being_forgotten,
        questions,
        dropped_absent_next: future.deleted,
        clamped_negative_current: current.clamped_negative,
        clamped_negative_future: future.clamped_negative,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignalRow {
    pub dump_time: Timestamp,
    pub top_n_percent: f64,
    /// Questions counted (top set minus any deleted before the window end).
    pub measured: usize,
    pub fraction_stale: f64,
}

/// For each dump: among its all-time most viewed questions, the fraction
/// that gained fewer than the ceiling views inside the reference window.
/// Top sets rank by raw accumulated view count (no tie extension; ties
/// break by id). Questions gone by the window end are excluded.
pub fn forgotten_signal(
    store: &Store,
    dump_times: &[Timestamp],
    reference_window: (Timestamp, Timestamp),
    config: &CohortConfig,
) -> Result<Vec<SignalRow>> {
    config.validate()?;
    let (w1, w2) = reference_window;
    let mut rows = Vec::new();
    for &t in dump_times {
        let snap = store.snapshot(t)?;
        let ids = snap.question_ids()?;
        let col = snap.read_column(crate::store::column::EntityKind::Question, "view_count")?;
        let crate::store::column::ColumnData::U64(views) = col.data else {
            return Err(PipelineError::format("view_count column has wrong kind"));
        };
        let mut pairs: Vec<(u64, u64)> = ids.into_iter().zip(views).collect();
        pairs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        for &pct in &config.top_n_percent_grid {
            let k = top_count(pct, pairs.len());
            let top_ids: Vec<u64> = pairs[..k].iter().map(|(id, _)| *id).collect();
            let window = store.views_between(IdSelection::Set(&top_ids), w1, w2, false)?;
            let stale = window
                .deltas
                .iter()
                .filter(|d| d.views_in_period < config.stale_view_ceiling)
                .count();
            let measured = window.deltas.len();
            rows.push(SignalRow {
                dump_time: t,
                top_n_percent: pct,
                measured,
                fraction_stale: if measured == 0 { 0.0 } else { stale as f64 / measured as f64 },
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationRow {
    pub top_k: f64,
    pub share: f64,
}

/// Share of all views in (t1, t2] captured by the top-K% questions of that
/// period. Exactly ceil(K*n) questions count (no tie extension), so a
/// uniform corpus yields share == K when K*n is integral.
pub fn view_concentration(
    store: &Store,
    t1: Timestamp,
    t2: Timestamp,
    top_k_grid: &[f64],
) -> Result<Vec<ConcentrationRow>> {
    let report = store.views_between(IdSelection::All, t1, t2, false)?;
    let mut views: Vec<u64> = report.deltas.iter().map(|d| d.views_in_period).collect();
    views.sort_unstable_by(|a, b| b.cmp(a));
    let total: u64 = views.iter().sum();
    if total == 0 {
        log::warn!("view_concentration: no views between {t1} and {t2}; shares are 0");
    }
    let mut rows = Vec::new();
    for &k in top_k_grid {
        let count = top_count(k, views.len());
        let share = if total == 0 {
            0.0
        } else {
            views[..count].iter().sum::<u64>() as f64 / total as f64
        };
        rows.push(ConcentrationRow { top_k: k, share });
    }
    Ok(rows)
}

pub type Period = (Timestamp, Timestamp);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapRow {
    pub first_start: Timestamp,
    pub first_end: Timestamp,
    pub second_start: Timestamp,
    pub second_end: Timestamp,
    pub question_overlap: f64,
    pub tag_overlap: f64,
}

fn highly_viewed_set(store: &Store, period: Period, fraction: f64) -> Result<BTreeSet<u64>> {
    let report = store.views_between(IdSelection::All, period.0, period.1, false)?;
    if report.deltas.is_empty() {
        return Err(PipelineError::data(format!(
            "no questions in period {} .. {}",
            period.0, period.1
        )));
    }
    let pairs: Vec<(u64, u64)> = report
        .deltas
        .iter()
        .map(|d| (d.question_id, d.views_in_period))
        .collect();
    Ok(select_top(pairs, fraction).into_iter().map(|(id, _)| id).collect())
}

/// Tag popularity within a period: number of questions carrying the tag
/// that were created inside the period, counted at the period-end snapshot.
fn tag_counts(store: &Store, period: Period) -> Result<BTreeMap<String, u64>> {
    let snap = store.snapshot(period.1)?;
    let questions = snap.questions()?;
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for q in &questions {
        if q.creation_date > period.0 && q.creation_date <= period.1 {
            for tag in &q.tags {
                *counts.entry(tag.clone()).or_insert(0) += 1;
            }
        }
    }
    Ok(counts)
}

fn top_tag_set(counts: &BTreeMap<String, u64>, fraction: f64) -> BTreeSet<String> {
    let mut pairs: Vec<(&String, u64)> = counts.iter().map(|(t, &c)| (t, c)).collect();
    pairs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let k = top_count(fraction, pairs.len());
    if k == 0 {
        return BTreeSet::new();
    }
    let cutoff = pairs[k - 1].1;
    let mut end = k;
    while end < pairs.len() && pairs[end].1 == cutoff {
        end += 1;
    }
    pairs[..end].iter().map(|(t, _)| (*t).clone()).collect()
}

/// For each (period, following period) pair: the fraction of the first
/// period's highly viewed questions still highly viewed in the second, and
/// the same for top tags by in-period popularity.
pub fn persistence_overlap(
    store: &Store,
    period_pairs: &[(Period, Period)],
    config: &CohortConfig,
) -> Result<Vec<OverlapRow>> {
    config.validate()?;
    let f = config.highly_viewed_fraction;
    let mut rows = Vec::new();
    for &(a, b) in period_pairs {
        let qa = highly_viewed_set(store, a, f)?;
        let qb = highly_viewed_set(store, b, f)?;
        let q_overlap = qa.intersection(&qb).count() as f64 / qa.len() as f64;
        let ca = tag_counts(store, a)?;
        let cb = tag_counts(store, b)?;
        if ca.is_empty() || cb.is_empty() {
            return Err(PipelineError::data(format!(
                "no questions created in period {} .. {} or its successor",
                a.0, a.1
            )));
        }
        let ta = top_tag_set(&ca, f);
        let tb = top_tag_set(&cb, f);
        let t_overlap = ta.intersection(&tb).count() as f64 / ta.len() as f64;
        rows.push(OverlapRow {
            first_start: a.0,
            first_end: a.1,
            second_start: b.0,
            second_end: b.1,
            question_overlap: q_overlap,
            tag_overlap: t_overlap,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthHistogram {
    pub edges: Vec<f64>,
    /// edges.len() + 1 bins: below the first edge, between consecutive
    /// edges (half-open, lower inclusive), and at or above the last.
    pub counts: Vec<u64>,
}

pub fn views_growth_histogram(dataset: &CohortDataset, edges: &[f64]) -> Result<GrowthHistogram> {
    for w in edges.windows(2) {
        if !(w[0] < w[1]) {
            return Err(PipelineError::config("histogram edges must be strictly increasing"));
        }
    }
    let mut counts = vec![0u64; edges.len() + 1];
    for q in &dataset.questions {
        let bin = edges.partition_point(|&e| e <= q.views_growth);
        counts[bin] += 1;
    }
    Ok(GrowthHistogram {
        edges: edges.to_vec(),
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub count: usize,
    pub answers: Quartiles,
    pub comments: Quartiles,
    pub score: Quartiles,
    pub views: Quartiles,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosedComparison {
    pub closed_fraction: f64,
    /// Absent when the dataset has no closed questions.
    pub closed: Option<GroupSummary>,
    pub dataset: GroupSummary,
}

/// Linear-interpolation quantile on a sorted slice.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = (n as f64 - 1.0) * p;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (h - lo as f64)
        }
    }
}

fn summarize(rows: &[(f64, f64, f64, f64)]) -> GroupSummary {
    let mut cols: [Vec<f64>; 4] = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for &(a, c, s, v) in rows {
        cols[0].push(a);
        cols[1].push(c);
        cols[2].push(s);
        cols[3].push(v);
    }
    for col in &mut cols {
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
    }
    let q = |col: &[f64]| Quartiles {
        q1: quantile(col, 0.25),
        median: quantile(col, 0.5),
        q3: quantile(col, 0.75),
    };
    GroupSummary {
        count: rows.len(),
        answers: q(&cols[0]),
        comments: q(&cols[1]),
        score: q(&cols[2]),
        views: q(&cols[3]),
    }
}

/// Closed questions (closed_date at or before the current dump) against the
/// whole dataset, on accumulated engagement indicators at the current dump.
pub fn closed_comparison(
    store: &Store,
    dataset: &CohortDataset,
    t_current: Timestamp,
) -> Result<ClosedComparison> {
    let snap = store.snapshot(t_current)?;
    let questions = snap.questions()?;
    let by_id: HashMap<u64, &crate::store::StoredQuestion> =
        questions.iter().map(|q| (q.id, q)).collect();
    let mut all_rows = Vec::with_capacity(dataset.questions.len());
    let mut closed_rows = Vec::new();
    for lq in &dataset.questions {
        let q = by_id.get(&lq.question_id).ok_or_else(|| {
            PipelineError::data(format!(
                "dataset question {} missing from snapshot {t_current}",
                lq.question_id
            ))
        })?;
        let row = (
            q.answer_count as f64,
            q.comment_count as f64,
            q.score as f64,
            q.view_count as f64,
        );
        all_rows.push(row);
        if q.closed_date.is_some_and(|c| c <= t_current) {
            closed_rows.push(row);
        }
    }
    if all_rows.is_empty() {
        return Err(PipelineError::data("closed_comparison on an empty dataset"));
    }
    Ok(ClosedComparison {
        closed_fraction: closed_rows.len() as f64 / all_rows.len() as f64,
        closed: (!closed_rows.is_empty()).then(|| summarize(&closed_rows)),
        dataset: summarize(&all_rows),
    })
}

// ---- serialization -------------------------------------------------------

pub fn dataset_to_csv(dataset: &CohortDataset) -> String {
    let mut out = String::from(
        "question_id,current_views,future_views,views_growth,label,prediction_time\n",
    );
    for q in &dataset.questions {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            q.question_id,
            q.current_views,
            q.future_views,
            q.views_growth,
            q.label.as_str(),
            q.prediction_time
        ));
    }
    out
}

/// Parses a CSV produced by [`dataset_to_csv`] plus its sidecar fields.
pub fn dataset_from_csv(csv: &str, sidecar: &DatasetSidecar) -> Result<CohortDataset> {
    let mut questions = Vec::new();
    for (i, line) in csv.lines().enumerate() {
        if i == 0 {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(PipelineError::format(format!(
                "dataset csv line {} has {} fields",
                i + 1,
                fields.len()
            )));
        }
        let parse_err =
            |what: &str| PipelineError::format(format!("dataset csv line {}: bad {what}", i + 1));
        questions.push(LabeledQuestion {
            question_id: fields[0].parse().map_err(|_| parse_err("question_id"))?,
            current_views: fields[1].parse().map_err(|_| parse_err("current_views"))?,
            future_views: fields[2].parse().map_err(|_| parse_err("future_views"))?,
            views_growth: fields[3].parse().map_err(|_| parse_err("views_growth"))?,
            label: Label::parse(fields[4])?,
            prediction_time: Timestamp::parse(fields[5])
                .map_err(|_| parse_err("prediction_time"))?,
        });
    }
    let being_forgotten = questions.iter().filter(|q| q.label == Label::BeingForgotten).count();
    let total = questions.len();
    Ok(CohortDataset {
        last_dump: sidecar.last_dump,
        current_dump: sidecar.current_dump,
        next_dump: sidecar.next_dump,
        gap_months: f64::from(sidecar.config.gap_months),
        unforgotten: total - being_forgotten,
        total,
        being_forgotten,
        questions,
        dropped_absent_next: sidecar.dropped_absent_next,
        clamped_negative_current: sidecar.clamped_negative_current,
        clamped_negative_future: sidecar.clamped_negative_future,
    })
}

/// The JSON companion of a dataset CSV: the config that produced it plus
/// the counts needed to rebuild the dataset struct.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub config: CohortConfig,
    pub last_dump: Timestamp,
    pub current_dump: Timestamp,
    pub next_dump: Timestamp,
    pub total: usize,
    pub being_forgotten: usize,
    pub unforgotten: usize,
    pub dropped_absent_next: u64,
    pub clamped_negative_current: u64,
    pub clamped_negative_future: u64,
}

impl DatasetSidecar {
    pub fn new(dataset: &CohortDataset, config: &CohortConfig) -> Self {
        DatasetSidecar {
            config: config.clone(),
            last_dump: dataset.last_dump,
            current_dump: dataset.current_dump,
            next_dump: dataset.next_dump,
            total: dataset.total,
            being_forgotten: dataset.being_forgotten,
            unforgotten: dataset.unforgotten,
            dropped_absent_next: dataset.dropped_absent_next,
            clamped_negative_current: dataset.clamped_negative_current,
            clamped_negative_future: dataset.clamped_negative_future,
        }
    }
}

pub fn signal_to_csv(rows: &[SignalRow]) -> String {
    let mut out = String::from("dump_time,top_n_percent,measured,fraction_stale\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.dump_time, r.top_n_percent, r.measured, r.fraction_stale
        ));
    }
    out
}

pub fn concentration_to_csv(rows: &[ConcentrationRow]) -> String {
    let mut out = String::from("top_k,share\n");
    for r in rows {
        out.push_str(&format!("{},{}\n", r.top_k, r.share));
    }
    out
}

pub fn overlap_to_csv(rows: &[OverlapRow]) -> String {
    let mut out = String::from(
        "first_start,first_end,second_start,second_end,question_overlap,tag_overlap\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.first_start, r.first_end, r.second_start, r.second_end, r.question_overlap, r.tag_overlap
        ));
    }
    out
}

pub fn histogram_to_csv(h: &GrowthHistogram) -> String {
    let mut out = String::from("bin_low,bin_high,count\n");
    for (i, &count) in h.counts.iter().enumerate() {
        let low = if i == 0 { "-inf".to_string() } else { h.edges[i - 1].to_string() };
        let high = if i == h.edges.len() { "inf".to_string() } else { h.edges[i].to_string() };
        out.push_str(&format!("{low},{high},{count}\n"));
    }
    out
}

pub fn closed_comparison_to_csv(c: &ClosedComparison) -> String {
    let mut out = String::from("group,count,indicator,q1,median,q3\n");
    let mut push_group = |name: &str, g: &GroupSummary| {
        for (ind, q) in [
            ("answers", g.answers),
            ("comments", g.comments),
            ("score", g.score),
            ("views", g.views),
        ] {
            out.push_str(&format!(
                "{name},{},{ind},{},{},{}\n",
                g.count, q.q1, q.median, q.q3
            ));
        }
    };
    if let Some(g) = &c.closed {
        push_group("closed", g);
    }
    push_group("dataset", &c.dataset);
    out
}
