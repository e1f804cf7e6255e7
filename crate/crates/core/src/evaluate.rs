//! Repeated-split prediction experiments over labeled datasets.
//!
//! Each dataset gets `n_runs` independent seeded train/test splits. Text
//! models are fit on each run's training rows only, one boosted model is
//! trained per (feature set, run), and F1 plus accuracy are measured on
//! the held-out rows. Results aggregate to min/max/avg across datasets per
//! feature set, with a per-view-bin breakdown and a gain-based feature
//! ranking alongside. Everything downstream of the plan seed is
//! deterministic, so a re-run reproduces the report byte for byte.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::ops::Range;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{CohortDataset, Label};
use crate::error::{PipelineError, Result};
use crate::featurize::text::{TextConfig, TextModel};
use crate::featurize::{
    build_feature_matrix, build_schema, FeatureExtractor, FeatureGroup, FeatureMatrix,
};
use crate::gbt::{fit, BoostConfig, BoostedEnsemble, FeatureSource};
use crate::store::Store;

/// How many fresh splits to try when one side of a draw is single-class.
pub const REDRAW_CAP: u32 = 10;

/// One row of the incremental feature-set table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureSet {
    TfidfBody,
    TfidfTitle,
    TfidfTag,
    TfidfBodyTitle,
    Text,
    Question,
    User,
    Answer,
    Tag,
    QuestionUser,
    QuestionUserAnswer,
    QuestionUserAnswerTag,
    All,
}

/// Which slice of the sparse tf-idf block a feature set uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TextPart {
    Body,
    Title,
    Tags,
    BodyTitle,
    Whole,
}

impl FeatureSet {
    /// Canonical report order.
    pub const CANONICAL: [FeatureSet; 13] = [
        FeatureSet::TfidfBody,
        FeatureSet::TfidfTitle,
        FeatureSet::TfidfTag,
        FeatureSet::TfidfBodyTitle,
        FeatureSet::Text,
        FeatureSet::Question,
        FeatureSet::User,
        FeatureSet::Answer,
        FeatureSet::Tag,
        FeatureSet::QuestionUser,
        FeatureSet::QuestionUserAnswer,
        FeatureSet::QuestionUserAnswerTag,
        FeatureSet::All,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FeatureSet::TfidfBody => "tfidf-body",
            FeatureSet::TfidfTitle => "tfidf-title",
            FeatureSet::TfidfTag => "tfidf-tag",
            FeatureSet::TfidfBodyTitle => "tfidf-(body+title)",
            FeatureSet::Text => "Text",
            FeatureSet::Question => "Question",
            FeatureSet::User => "User",
            FeatureSet::Answer => "Answer",
            FeatureSet::Tag => "Tag",
            FeatureSet::QuestionUser => "Question+User",
            FeatureSet::QuestionUserAnswer => "Question+User+Answer",
            FeatureSet::QuestionUserAnswerTag => "Question+User+Answer+Tag",
            FeatureSet::All => "All",
        }
    }

    pub fn parse(s: &str) -> Result<FeatureSet> {
        FeatureSet::CANONICAL
            .into_iter()
            .find(|f| f.label() == s)
            .ok_or_else(|| PipelineError::config(format!("unknown feature set {s:?}")))
    }

    fn dense_groups(self) -> &'static [FeatureGroup] {
        use FeatureGroup::{Answer, Question, Tag, User};
        match self {
            FeatureSet::Question => &[Question],
            FeatureSet::User => &[User],
            FeatureSet::Answer => &[Answer],
            FeatureSet::Tag => &[Tag],
            FeatureSet::QuestionUser => &[Question, User],
            FeatureSet::QuestionUserAnswer => &[Question, User, Answer],
            FeatureSet::QuestionUserAnswerTag | FeatureSet::All => {
                &[Question, User, Answer, Tag]
            }
            _ => &[],
        }
    }

    fn text_part(self) -> Option<TextPart> {
        match self {
            FeatureSet::TfidfBody => Some(TextPart::Body),
            FeatureSet::TfidfTitle => Some(TextPart::Title),
            FeatureSet::TfidfTag => Some(TextPart::Tags),
            FeatureSet::TfidfBodyTitle => Some(TextPart::BodyTitle),
            FeatureSet::Text | FeatureSet::All => Some(TextPart::Whole),
            _ => None,
        }
    }
}

impl Serialize for FeatureSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for FeatureSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        FeatureSet::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Whether per-bin scores come from models trained inside each bin or from
/// the whole-dataset model applied bin by bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinMode {
    WithinBin,
    GlobalModel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentPlan {
    pub feature_sets: Vec<FeatureSet>,
    pub n_runs: u32,
    /// Fraction of rows in each training split.
    pub train_ratio: f64,
    pub seed: u64,
    /// Equal-count view bins for the per-bin breakdown.
    pub n_bins: u32,
    pub bin_mode: BinMode,
    pub importance_top_k: usize,
    pub boost: BoostConfig,
    pub text: TextConfig,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            feature_sets: FeatureSet::CANONICAL.to_vec(),
            n_runs: 5,
            train_ratio: 0.9,
            seed: 0,
            n_bins: 10,
            bin_mode: BinMode::WithinBin,
            importance_top_k: 10,
            boost: BoostConfig::default(),
            text: TextConfig::default(),
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.feature_sets.is_empty() {
            return Err(PipelineError::config("at least one feature set is required"));
        }
        let distinct: BTreeSet<&str> = self.feature_sets.iter().map(|f| f.label()).collect();
        if distinct.len() != self.feature_sets.len() {
            return Err(PipelineError::config("duplicate feature set in plan"));
        }
        if self.n_runs < 1 {
            return Err(PipelineError::config("n_runs must be at least 1"));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(PipelineError::config(format!(
                "train_ratio must be in (0, 1), got {}",
                self.train_ratio
            )));
        }
        if self.n_bins < 1 {
            return Err(PipelineError::config("n_bins must be at least 1"));
        }
        if self.importance_top_k < 1 {
            return Err(PipelineError::config("importance_top_k must be at least 1"));
        }
        self.boost.validate()
    }
}

/// One labeled dataset plus the store its features come from.
pub struct DatasetInput<'a> {
    pub name: String,
    pub store: &'a Store,
    pub dataset: CohortDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub true_neg: usize,
}

/// Counts prediction outcomes; `true` is the being-forgotten class.
pub fn confusion(predicted: &[bool], actual: &[bool]) -> Confusion {
    assert_eq!(predicted.len(), actual.len());
    let mut c = Confusion { true_pos: 0, false_pos: 0, false_neg: 0, true_neg: 0 };
    for (&p, &a) in predicted.iter().zip(actual) {
        match (p, a) {
            (true, true) => c.true_pos += 1,
            (true, false) => c.false_pos += 1,
            (false, true) => c.false_neg += 1,
            (false, false) => c.true_neg += 1,
        }
    }
    c
}

impl Confusion {
    /// F1 of the positive class; 0 when no true or predicted positives
    /// exist at all.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.true_pos + self.false_pos + self.false_neg;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.true_pos as f64 / denom as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.true_pos + self.false_pos + self.false_neg + self.true_neg;
        if total == 0 {
            0.0
        } else {
            (self.true_pos + self.true_neg) as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RunMetric {
    pub f1: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub dataset: String,
    pub feature_set: FeatureSet,
    pub mean_f1: f64,
    pub mean_accuracy: f64,
    pub runs: Vec<RunMetric>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregateRow {
    pub feature_set: FeatureSet,
    pub gap_months: f64,
    pub datasets: usize,
    pub f1_min: f64,
    pub f1_max: f64,
    pub f1_avg: f64,
    pub accuracy_min: f64,
    pub accuracy_max: f64,
    pub accuracy_avg: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BinRow {
    pub dataset: String,
    /// 1-based, ascending current-period views.
    pub bin: usize,
    pub view_min: u64,
    pub view_max: u64,
    pub n: usize,
    pub forgotten_fraction: f64,
    /// Mean over runs that produced a usable split inside the bin.
    pub mean_f1: Option<f64>,
    pub valid_runs: u32,
    /// No run had both classes in the bin's training rows.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ImportanceRow {
    pub rank: usize,
    pub feature: String,
    pub percent: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunInfo {
    pub split_seed: u64,
    pub redraws: u32,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetSummary {
    pub name: String,
    pub gap_months: f64,
    pub total: usize,
    pub being_forgotten: usize,
    pub prevalence: f64,
    pub runs: Vec<RunInfo>,
}

/// Wall-clock cost of one unit of work; "bins" covers a dataset's whole
/// per-bin pass.
#[derive(Debug, Clone)]
pub struct Timing {
    pub dataset: String,
    pub work: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub plan: ExperimentPlan,
    pub datasets: Vec<DatasetSummary>,
    pub cells: Vec<CellResult>,
    pub aggregates: Vec<AggregateRow>,
    pub bins: Vec<BinRow>,
    pub importance: Vec<ImportanceRow>,
    /// Timings never enter the serialized report: they would break
    /// byte-identical re-runs. They are delivered separately.
    #[serde(skip)]
    pub timings: Vec<Timing>,
}

fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-cell seed derivation from the plan seed.
fn mix_seed(base: u64, tags: &[u64]) -> u64 {
    let mut acc = splitmix(base ^ 0x9E37_79B9_7F4A_7C15);
    for &t in tags {
        acc = splitmix(acc ^ splitmix(t.wrapping_add(0xD1B5_4A32_D192_ED03)));
    }
    acc
}

fn draw_split(rng: &mut ChaCha8Rng, n: usize, ratio: f64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    // Row order inside a split is dataset order, so accumulation order
    // does not depend on the shuffle.
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

fn two_classes(rows: &[usize], labels: &[bool]) -> bool {
    rows.iter().any(|&r| labels[r]) && rows.iter().any(|&r| !labels[r])
}

/// Draws splits until both sides hold both classes, counting redraws.
fn draw_valid_split(
    seed: u64,
    labels: &[bool],
    ratio: f64,
) -> Result<(Vec<usize>, Vec<usize>, u32)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut redraws = 0u32;
    loop {
        let (train, test) = draw_split(&mut rng, labels.len(), ratio);
        if two_classes(&test, labels) && two_classes(&train, labels) {
            return Ok((train, test, redraws));
        }
        redraws += 1;
        if redraws > REDRAW_CAP {
            return Err(PipelineError::data(format!(
                "no split with both classes on each side after {REDRAW_CAP} redraws"
            )));
        }
    }
}

/// Contiguous equal-count chunks; sizes differ by at most one.
pub fn equal_count_bins(n: usize, n_bins: usize) -> Vec<Range<usize>> {
    (0..n_bins)
        .map(|b| (b * n / n_bins)..((b + 1) * n / n_bins))
        .collect()
}

/// Cross-dataset mean importance, normalized to percentages and ranked.
pub fn rank_features(per_dataset: &[BTreeMap<String, f64>]) -> Vec<ImportanceRow> {
    if per_dataset.is_empty() {
        return Vec::new();
    }
    let mut mean: BTreeMap<String, f64> = BTreeMap::new();
    for map in per_dataset {
        for (name, value) in map {
            *mean.entry(name.clone()).or_insert(0.0) += value;
        }
    }
    let n = per_dataset.len() as f64;
    for v in mean.values_mut() {
        *v /= n;
    }
    let total: f64 = mean.values().sum();
    if !(total > 0.0) {
        return Vec::new();
    }
    let mut rows: Vec<ImportanceRow> = mean
        .into_iter()
        .map(|(feature, v)| ImportanceRow { rank: 0, feature, percent: v / total * 100.0 })
        .collect();
    rows.sort_by(|a, b| b.percent.total_cmp(&a.percent).then_with(|| a.feature.cmp(&b.feature)));
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    rows
}

/// Per-run sparse text block shared by every feature set of that run.
struct RunText {
    names: Vec<String>,
    /// Full-width sparse rows aligned to dataset row order.
    rows: Vec<Vec<(u32, f64)>>,
    body_width: usize,
    title_width: usize,
    tags_width: usize,
}

impl RunText {
    fn range(&self, part: TextPart) -> (usize, usize) {
        match part {
            TextPart::Body => (0, self.body_width),
            TextPart::Title => (self.body_width, self.title_width),
            TextPart::Tags => (self.body_width + self.title_width, self.tags_width),
            TextPart::BodyTitle => (0, self.body_width + self.title_width),
            TextPart::Whole => (0, self.names.len()),
        }
    }
}

/// A feature-set slice of one run's columns, restricted to a row subset.
struct SplitSource<'a> {
    dense: &'a FeatureMatrix,
    dense_cols: &'a [usize],
    text: Option<(&'a RunText, usize, usize)>,
    rows: &'a [usize],
}

impl<'a> SplitSource<'a> {
    fn new(
        dense: &'a FeatureMatrix,
        dense_cols: &'a [usize],
        text: Option<&'a RunText>,
        part: Option<TextPart>,
        rows: &'a [usize],
    ) -> SplitSource<'a> {
        let text = match (text, part) {
            (Some(t), Some(p)) => {
                let (start, len) = t.range(p);
                Some((t, start, len))
            }
            _ => None,
        };
        SplitSource { dense, dense_cols, text, rows }
    }
}

impl FeatureSource for SplitSource<'_> {
    fn n_rows(&self) -> usize {
        self.rows.len()
    }

    fn n_cols(&self) -> usize {
        self.dense_cols.len() + self.text.map_or(0, |(_, _, len)| len)
    }

    fn column(&self, j: usize) -> Vec<f64> {
        if j < self.dense_cols.len() {
            let col = self.dense_cols[j];
            self.rows.iter().map(|&r| self.dense.dense_at(r, col)).collect()
        } else {
            let (t, start, _) = self.text.expect("column index beyond dense block");
            let col = (start + (j - self.dense_cols.len())) as u32;
            self.rows
                .iter()
                .map(|&r| match t.rows[r].binary_search_by_key(&col, |e| e.0) {
                    Ok(i) => t.rows[r][i].1,
                    Err(_) => 0.0,
                })
                .collect()
        }
    }

    fn feature_name(&self, j: usize) -> String {
        if j < self.dense_cols.len() {
            self.dense.schema.dense()[self.dense_cols[j]].name.clone()
        } else {
            let (t, start, _) = self.text.expect("column index beyond dense block");
            t.names[start + (j - self.dense_cols.len())].clone()
        }
    }
}

fn gather(labels: &[bool], rows: &[usize]) -> Vec<bool> {
    rows.iter().map(|&r| labels[r]).collect()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

struct RunOutput {
    info: RunInfo,
    train: Vec<usize>,
    test: Vec<usize>,
    metrics: Vec<RunMetric>,
    seconds: Vec<f64>,
    all_importance: Option<Vec<(String, f64)>>,
    all_model: Option<BoostedEnsemble>,
    text: RunText,
}

struct DatasetOutput {
    summary: DatasetSummary,
    cells: Vec<CellResult>,
    bins: Vec<BinRow>,
    importance: Option<BTreeMap<String, f64>>,
    timings: Vec<Timing>,
}

fn fit_run_text(
    extractor: &FeatureExtractor,
    dense: &FeatureMatrix,
    train: &[usize],
    config: TextConfig,
) -> Result<RunText> {
    let train_ids: Vec<u64> = train.iter().map(|&i| dense.row_ids[i]).collect();
    let model: TextModel = extractor.fit_text_model(&train_ids, config)?;
    let schema = build_schema(&[FeatureGroup::Text].into_iter().collect(), Some(&model))?;
    let names = schema.sparse().iter().map(|d| d.name.clone()).collect();
    let rows = dense
        .row_ids
        .iter()
        .map(|&id| extractor.transform_text(&model, id))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunText {
        names,
        rows,
        body_width: model.body.width(),
        title_width: model.title.width(),
        tags_width: model.tags.width(),
    })
}

#[allow(clippy::too_many_arguments)]
fn process_run(
    plan: &ExperimentPlan,
    d_idx: usize,
    run: u32,
    dense: &FeatureMatrix,
    extractor: &FeatureExtractor,
    labels: &[bool],
    dense_cols: &[Vec<usize>],
    keep_model: bool,
) -> Result<RunOutput> {
    let split_seed = mix_seed(plan.seed, &[1, d_idx as u64, u64::from(run)]);
    let (train, test, redraws) = draw_valid_split(split_seed, labels, plan.train_ratio)?;
    let text = fit_run_text(extractor, dense, &train, plan.text)?;
    let train_labels_cache = gather(labels, &train);
    let test_labels = gather(labels, &test);

    let mut metrics = Vec::with_capacity(plan.feature_sets.len());
    let mut seconds = Vec::with_capacity(plan.feature_sets.len());
    let mut all_importance = None;
    let mut all_model = None;
    for (s_idx, set) in plan.feature_sets.iter().enumerate() {
        let started = Instant::now();
        let cfg = BoostConfig {
            seed: mix_seed(plan.seed, &[2, d_idx as u64, u64::from(run), s_idx as u64]),
            ..plan.boost
        };
        let train_src =
            SplitSource::new(dense, &dense_cols[s_idx], Some(&text), set.text_part(), &train);
        let model = fit(&train_src, &train_labels_cache, &cfg)?;
        let test_src =
            SplitSource::new(dense, &dense_cols[s_idx], Some(&text), set.text_part(), &test);
        let predicted = model.predict_labels(&test_src)?;
        let c = confusion(&predicted, &test_labels);
        metrics.push(RunMetric { f1: c.f1(), accuracy: c.accuracy() });
        seconds.push(started.elapsed().as_secs_f64());
        if *set == FeatureSet::All {
            all_importance = Some(model.feature_importance());
            if keep_model {
                all_model = Some(model);
            }
        }
    }
    // Per-bin scoring under the global-model mode needs a full-feature
    // model even when the plan's table omits the All row.
    if keep_model && all_model.is_none() {
        let cfg = BoostConfig {
            seed: mix_seed(plan.seed, &[4, d_idx as u64, u64::from(run)]),
            ..plan.boost
        };
        let all_cols: Vec<usize> = (0..dense.schema.n_dense).collect();
        let src = SplitSource::new(dense, &all_cols, Some(&text), Some(TextPart::Whole), &train);
        all_model = Some(fit(&src, &train_labels_cache, &cfg)?);
    }

    Ok(RunOutput {
        info: RunInfo { split_seed, redraws, n_train: train.len(), n_test: test.len() },
        train,
        test,
        metrics,
        seconds,
        all_importance,
        all_model,
        text,
    })
}

fn bin_analysis(
    plan: &ExperimentPlan,
    d_idx: usize,
    name: &str,
    dataset: &CohortDataset,
    dense: &FeatureMatrix,
    labels: &[bool],
    runs: &[RunOutput],
) -> Result<Vec<BinRow>> {
    let n = dataset.questions.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (dataset.questions[i].current_views, dataset.questions[i].question_id));
    let all_cols: Vec<usize> = (0..dense.schema.n_dense).collect();

    let mut rows = Vec::with_capacity(plan.n_bins as usize);
    for (b, range) in equal_count_bins(n, plan.n_bins as usize).into_iter().enumerate() {
        let members = &order[range.start..range.end];
        if members.is_empty() {
            rows.push(BinRow {
                dataset: name.to_string(),
                bin: b + 1,
                view_min: 0,
                view_max: 0,
                n: 0,
                forgotten_fraction: 0.0,
                mean_f1: None,
                valid_runs: 0,
                degenerate: true,
            });
            continue;
        }
        let mut in_bin = vec![false; n];
        for &i in members {
            in_bin[i] = true;
        }
        let views: Vec<u64> =
            members.iter().map(|&i| dataset.questions[i].current_views).collect();
        let forgotten = members.iter().filter(|&&i| labels[i]).count();

        let mut f1s = Vec::new();
        for (r_idx, run) in runs.iter().enumerate() {
            // Intersections keep dataset row order, so a single bin
            // reproduces the whole-dataset splits exactly.
            let train_b: Vec<usize> = run.train.iter().filter(|&&i| in_bin[i]).copied().collect();
            let test_b: Vec<usize> = run.test.iter().filter(|&&i| in_bin[i]).copied().collect();
            if test_b.is_empty() || !two_classes(&train_b, labels) {
                continue;
            }
            let predicted = match plan.bin_mode {
                BinMode::WithinBin => {
                    let cfg = BoostConfig {
                        seed: mix_seed(
                            plan.seed,
                            &[3, d_idx as u64, b as u64, r_idx as u64],
                        ),
                        ..plan.boost
                    };
                    let train_src = SplitSource::new(
                        dense,
                        &all_cols,
                        Some(&run.text),
                        Some(TextPart::Whole),
                        &train_b,
                    );
                    let model = fit(&train_src, &gather(labels, &train_b), &cfg)?;
                    let test_src = SplitSource::new(
                        dense,
                        &all_cols,
                        Some(&run.text),
                        Some(TextPart::Whole),
                        &test_b,
                    );
                    model.predict_labels(&test_src)?
                }
                BinMode::GlobalModel => {
                    let model = run.all_model.as_ref().expect("kept for global bin mode");
                    let test_src = SplitSource::new(
                        dense,
                        &all_cols,
                        Some(&run.text),
                        Some(TextPart::Whole),
                        &test_b,
                    );
                    model.predict_labels(&test_src)?
                }
            };
            f1s.push(confusion(&predicted, &gather(labels, &test_b)).f1());
        }

        rows.push(BinRow {
            dataset: name.to_string(),
            bin: b + 1,
            view_min: *views.iter().min().expect("non-empty bin"),
            view_max: *views.iter().max().expect("non-empty bin"),
            n: members.len(),
            forgotten_fraction: forgotten as f64 / members.len() as f64,
            mean_f1: if f1s.is_empty() { None } else { Some(mean(&f1s)) },
            valid_runs: f1s.len() as u32,
            degenerate: f1s.is_empty(),
        });
    }
    Ok(rows)
}

fn process_dataset(
    plan: &ExperimentPlan,
    d_idx: usize,
    input: &DatasetInput,
) -> Result<DatasetOutput> {
    let dataset = &input.dataset;
    let n = dataset.questions.len();
    if n < 2 {
        return Err(PipelineError::data(format!(
            "dataset {} has {n} rows; need at least 2 to split",
            input.name
        )));
    }
    let labels: Vec<bool> =
        dataset.questions.iter().map(|q| q.label == Label::BeingForgotten).collect();
    if !two_classes(&(0..n).collect::<Vec<_>>(), &labels) {
        return Err(PipelineError::data(format!(
            "dataset {} is single-class; nothing to learn",
            input.name
        )));
    }

    let started = Instant::now();
    let dense = build_feature_matrix(input.store, dataset, &FeatureGroup::all_dense(), None)?;
    let snapshot = input.store.snapshot(dataset.current_dump)?;
    let extractor = FeatureExtractor::new(&snapshot, dataset.gap_months)?;
    let features_seconds = started.elapsed().as_secs_f64();

    let dense_cols: Vec<Vec<usize>> = plan
        .feature_sets
        .iter()
        .map(|set| {
            let groups = set.dense_groups();
            dense
                .schema
                .dense()
                .iter()
                .enumerate()
                .filter(|(_, def)| groups.contains(&def.group))
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    let keep_model = plan.bin_mode == BinMode::GlobalModel;

    let runs: Vec<RunOutput> = (0..plan.n_runs)
        .into_par_iter()
        .map(|run| {
            process_run(plan, d_idx, run, &dense, &extractor, &labels, &dense_cols, keep_model)
        })
        .collect::<Result<_>>()?;

    let cells: Vec<CellResult> = plan
        .feature_sets
        .iter()
        .enumerate()
        .map(|(s_idx, set)| {
            let per_run: Vec<RunMetric> = runs.iter().map(|r| r.metrics[s_idx]).collect();
            CellResult {
                dataset: input.name.clone(),
                feature_set: *set,
                mean_f1: mean(&per_run.iter().map(|m| m.f1).collect::<Vec<_>>()),
                mean_accuracy: mean(&per_run.iter().map(|m| m.accuracy).collect::<Vec<_>>()),
                runs: per_run,
            }
        })
        .collect();

    let bin_started = Instant::now();
    let bins = bin_analysis(plan, d_idx, &input.name, dataset, &dense, &labels, &runs)?;

    let mut timings = vec![Timing {
        dataset: input.name.clone(),
        work: "features".to_string(),
        seconds: features_seconds,
    }];
    for (s_idx, set) in plan.feature_sets.iter().enumerate() {
        timings.push(Timing {
            dataset: input.name.clone(),
            work: set.label().to_string(),
            seconds: runs.iter().map(|r| r.seconds[s_idx]).sum(),
        });
    }
    timings.push(Timing {
        dataset: input.name.clone(),
        work: "bins".to_string(),
        seconds: bin_started.elapsed().as_secs_f64(),
    });

    let importance = {
        let collected: Vec<&Vec<(String, f64)>> =
            runs.iter().filter_map(|r| r.all_importance.as_ref()).collect();
        if collected.is_empty() {
            None
        } else {
            let mut acc: BTreeMap<String, f64> = BTreeMap::new();
            for imp in &collected {
                for (name, v) in imp.iter() {
                    *acc.entry(name.clone()).or_insert(0.0) += v;
                }
            }
            let k = collected.len() as f64;
            for v in acc.values_mut() {
                *v /= k;
            }
            Some(acc)
        }
    };

    Ok(DatasetOutput {
        summary: DatasetSummary {
            name: input.name.clone(),
            gap_months: dataset.gap_months,
            total: dataset.total,
            being_forgotten: dataset.being_forgotten,
            prevalence: dataset.being_forgotten as f64 / dataset.total as f64,
            runs: runs.iter().map(|r| r.info.clone()).collect(),
        },
        cells,
        bins,
        importance,
        timings,
    })
}

pub fn run_experiment(plan: &ExperimentPlan, inputs: &[DatasetInput]) -> Result<ExperimentReport> {
    plan.validate()?;
    if inputs.is_empty() {
        return Err(PipelineError::config("at least one dataset is required"));
    }
    let names: BTreeSet<&str> = inputs.iter().map(|i| i.name.as_str()).collect();
    if names.len() != inputs.len() {
        return Err(PipelineError::config("dataset names must be unique"));
    }

    let mut datasets = Vec::with_capacity(inputs.len());
    let mut cells = Vec::new();
    let mut bins = Vec::new();
    let mut timings = Vec::new();
    let mut importance_maps = Vec::new();
    for (d_idx, input) in inputs.iter().enumerate() {
        let out = process_dataset(plan, d_idx, input)?;
        datasets.push(out.summary);
        cells.extend(out.cells);
        bins.extend(out.bins);
        timings.extend(out.timings);
        if let Some(map) = out.importance {
            importance_maps.push(map);
        }
    }

    // Aggregate across datasets sharing a gap, in Table layout.
    let mut gaps: Vec<f64> = datasets.iter().map(|d| d.gap_months).collect();
    gaps.sort_by(f64::total_cmp);
    gaps.dedup();
    let mut aggregates = Vec::new();
    for set in &plan.feature_sets {
        for &gap in &gaps {
            let group: Vec<&CellResult> = cells
                .iter()
                .filter(|c| {
                    c.feature_set == *set
                        && datasets
                            .iter()
                            .any(|d| d.name == c.dataset && d.gap_months == gap)
                })
                .collect();
            if group.is_empty() {
                continue;
            }
            let f1s: Vec<f64> = group.iter().map(|c| c.mean_f1).collect();
            let accs: Vec<f64> = group.iter().map(|c| c.mean_accuracy).collect();
            let fold =
                |v: &[f64], pick: fn(f64, f64) -> f64| v.iter().copied().reduce(pick).unwrap();
            aggregates.push(AggregateRow {
                feature_set: *set,
                gap_months: gap,
                datasets: group.len(),
                f1_min: fold(&f1s, f64::min),
                f1_max: fold(&f1s, f64::max),
                f1_avg: mean(&f1s),
                accuracy_min: fold(&accs, f64::min),
                accuracy_max: fold(&accs, f64::max),
                accuracy_avg: mean(&accs),
            });
        }
    }

    let importance = rank_features(&importance_maps);
    Ok(ExperimentReport {
        plan: plan.clone(),
        datasets,
        cells,
        aggregates,
        bins,
        importance,
        timings,
    })
}

impl ExperimentReport {
    /// Table-shaped aggregate CSV: one row per feature set and gap.
    pub fn table_csv(&self) -> String {
        let mut out = String::from(
            "feature_set,gap_months,datasets,f1_min,f1_max,f1_avg,accuracy_min,accuracy_max,accuracy_avg\n",
        );
        for a in &self.aggregates {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                a.feature_set.label(),
                a.gap_months,
                a.datasets,
                a.f1_min,
                a.f1_max,
                a.f1_avg,
                a.accuracy_min,
                a.accuracy_max,
                a.accuracy_avg
            ));
        }
        out
    }

    pub fn bins_csv(&self) -> String {
        let mut out = String::from(
            "dataset,bin,view_min,view_max,n,forgotten_fraction,mean_f1,valid_runs,degenerate\n",
        );
        for b in &self.bins {
            let f1 = b.mean_f1.map_or(String::new(), |v| v.to_string());
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                b.dataset,
                b.bin,
                b.view_min,
                b.view_max,
                b.n,
                b.forgotten_fraction,
                f1,
                b.valid_runs,
                b.degenerate
            ));
        }
        out
    }

    pub fn importance_csv(&self) -> String {
        let mut out = String::from("rank,feature,percent\n");
        for r in &self.importance {
            out.push_str(&format!("{},{},{}\n", r.rank, r.feature, r.percent));
        }
        out
    }

    pub fn top_importance(&self) -> &[ImportanceRow] {
        let k = self.plan.importance_top_k.min(self.importance.len());
        &self.importance[..k]
    }

    pub fn manifest_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)
            .map_err(|e| PipelineError::format(format!("report: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn timings_log(&self) -> String {
        let mut out = String::new();
        for t in &self.timings {
            out.push_str(&format!("{}\t{}\t{:.3}s\n", t.dataset, t.work, t.seconds));
        }
        out
    }
}
