//! Per-feature predictiveness statistics: Mann-Whitney U, Spearman rank
//! correlation with the label, and single-feature ranking AUC.
//!
//! All three share a mid-rank transform, so ties are handled consistently.
//! Inputs must be finite; the report layer strips missing markers before
//! calling in here.

use serde::Serialize;

use crate::cohort::{CohortDataset, Label};
use crate::error::{PipelineError, Result};
use crate::featurize::FeatureMatrix;

/// 1-based ranks with ties assigned their average rank.
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Complementary error function via a rational approximation with relative
/// error below 1.3e-7, far inside the 0.02 tolerance the normal path is
/// held to against exact enumeration.
pub fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + z / 2.0);
    let tau = t
        * (-z * z - 1.265_512_23
            + t * (1.000_023_68
                + t * (0.374_091_96
                    + t * (0.096_784_18
                        + t * (-0.186_288_06
                            + t * (0.278_868_07
                                + t * (-1.135_203_98
                                    + t * (1.488_515_87
                                        + t * (-0.822_152_23 + t * 0.170_872_77)))))))))
        .exp();
    if x >= 0.0 {
        tau
    } else {
        2.0 - tau
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    /// Two-sided p-value.
    pub p: f64,
}

/// Enumerates every way to assign `k` of the pooled ranks to the first
/// sample and collects the resulting rank sums.
fn subset_rank_sums(ranks: &[f64], k: usize) -> Vec<f64> {
    fn rec(ranks: &[f64], start: usize, left: usize, acc: f64, out: &mut Vec<f64>) {
        if left == 0 {
            out.push(acc);
            return;
        }
        for i in start..=ranks.len() - left {
            rec(ranks, i + 1, left - 1, acc + ranks[i], out);
        }
    }
    let mut out = Vec::new();
    rec(ranks, 0, k, 0.0, &mut out);
    out
}

/// Exact two-sided p: the fraction of rank assignments at least as far from
/// the null mean as the observed U. Conditioning on the observed mid-ranks
/// handles ties exactly.
fn exact_p(pooled_ranks: &[f64], n_a: usize, u_obs: f64) -> f64 {
    let n_b = pooled_ranks.len() - n_a;
    let mu = (n_a * n_b) as f64 / 2.0;
    let rank_offset = (n_a * (n_a + 1)) as f64 / 2.0;
    let threshold = (u_obs - mu).abs() - 1e-9;
    let sums = subset_rank_sums(pooled_ranks, n_a);
    let hits = sums
        .iter()
        .filter(|&&s| ((s - rank_offset) - mu).abs() >= threshold)
        .count();
    hits as f64 / sums.len() as f64
}

/// Normal approximation with continuity correction, tie-corrected variance,
/// and an Edgeworth kurtosis term. The null U distribution is platykurtic,
/// so a plain normal tail is visibly off for small samples; the kurtosis
/// term uses the exact no-tie fourth central moment
/// μ4 = n_a·n_b·(n+1)/240 · (n_a·n_b·(5n+7) − 2n(n+1))
/// and keeps the approximation within 0.02 of exact enumeration for all
/// tie-free samples with both sides ≥ 3.
fn normal_p(u_obs: f64, n_a: usize, n_b: usize, pooled: &[f64]) -> f64 {
    let n = (n_a + n_b) as f64;
    let mu = (n_a * n_b) as f64 / 2.0;
    let mut sorted = pooled.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut tie_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_sum += t * t * t - t;
        i = j + 1;
    }
    let var = (n_a as f64 * n_b as f64 / 12.0) * ((n + 1.0) - tie_sum / (n * (n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let z = -((u_obs - mu).abs() - 0.5).max(0.0) / var.sqrt();

    let (na, nb) = (n_a as f64, n_b as f64);
    let mu4 = na * nb * (n + 1.0) / 240.0 * (na * nb * (5.0 * n + 7.0) - 2.0 * n * (n + 1.0));
    let var_no_ties = na * nb * (n + 1.0) / 12.0;
    let gamma2 = mu4 / (var_no_ties * var_no_ties) - 3.0;

    let cdf = 0.5 * erfc(-z / std::f64::consts::SQRT_2);
    let pdf = (-z * z / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let tail = (cdf - gamma2 / 24.0 * (z * z * z - 3.0 * z) * pdf).clamp(0.0, 0.5);
    (2.0 * tail).min(1.0)
}

/// Two-sided Mann-Whitney U test. Exact enumeration when n_a·n_b ≤ 64,
/// normal approximation beyond. U is reported for `a`.
pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(PipelineError::config("mann_whitney requires non-empty samples"));
    }
    let (n_a, n_b) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    let ranks = mid_ranks(&pooled);
    let r_a: f64 = ranks[..n_a].iter().sum();
    let u_a = r_a - (n_a * (n_a + 1)) as f64 / 2.0;
    let p = if n_a * n_b <= 64 {
        exact_p(&ranks, n_a, u_a)
    } else {
        normal_p(u_a, n_a, n_b, &pooled)
    };
    Ok(MannWhitney { u: u_a, p })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpearmanResult {
    pub rho: f64,
    /// Set when either rank vector has zero variance; rho is 0 then.
    pub degenerate: bool,
}

/// Spearman rank correlation: Pearson correlation of the mid-ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<SpearmanResult> {
    if x.len() != y.len() {
        return Err(PipelineError::config("spearman requires equal lengths"));
    }
    if x.len() < 2 {
        return Err(PipelineError::config("spearman requires at least 2 points"));
    }
    let rx = mid_ranks(x);
    let ry = mid_ranks(y);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..rx.len() {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        return Ok(SpearmanResult { rho: 0.0, degenerate: true });
    }
    Ok(SpearmanResult { rho: cov / (vx * vy).sqrt(), degenerate: false })
}

/// Rank-based AUC of the positive class: P(pos > neg) + half the tie
/// probability, before any orientation correction.
pub fn auc_unoriented(values: &[f64], labels: &[bool]) -> Result<f64> {
    if values.len() != labels.len() {
        return Err(PipelineError::config("auc requires equal lengths"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(PipelineError::config("auc requires both classes present"));
    }
    let ranks = mid_ranks(values);
    let r_pos: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| *r)
        .sum();
    let u_pos = r_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u_pos / (n_pos as f64 * n_neg as f64))
}

/// Orientation-corrected single-feature AUC: max(auc, 1 − auc), so a
/// feature predictive in either direction scores above 0.5.
pub fn single_feature_auc(values: &[f64], labels: &[bool]) -> Result<f64> {
    let a = auc_unoriented(values, labels)?;
    Ok(a.max(1.0 - a))
}

/// One dense feature's predictiveness against the dataset label.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureReportRow {
    pub feature: String,
    /// Mann-Whitney U of the being_forgotten sample.
    pub u_statistic: f64,
    pub p_value: f64,
    pub spearman_rho: f64,
    pub auc: f64,
    pub p_significant: bool,
    pub n_forgotten: usize,
    pub n_unforgotten: usize,
    pub n_missing: usize,
    /// Entirely missing feature, single-class comparison, or zero rank
    /// variance: the neutral values above are placeholders, not findings.
    pub degenerate: bool,
}

/// Computes U test, Spearman rho, and AUC for every dense feature of the
/// matrix. Missing values are excluded per feature and counted. Rows come
/// back sorted by AUC descending.
pub fn predictiveness_report(
    matrix: &FeatureMatrix,
    dataset: &CohortDataset,
) -> Result<Vec<FeatureReportRow>> {
    let ids: Vec<u64> = dataset.questions.iter().map(|q| q.question_id).collect();
    if matrix.row_ids != ids {
        return Err(PipelineError::data(
            "feature matrix rows do not align with the dataset",
        ));
    }
    let forgotten: Vec<bool> = dataset
        .questions
        .iter()
        .map(|q| q.label == Label::BeingForgotten)
        .collect();

    let mut rows = Vec::with_capacity(matrix.schema.n_dense);
    for (col, def) in matrix.schema.dense().iter().enumerate() {
        let column = matrix.dense_column(col);
        let mut values = Vec::new();
        let mut labels = Vec::new();
        let mut sample_f = Vec::new();
        let mut sample_u = Vec::new();
        let mut n_missing = 0usize;
        for (v, &is_f) in column.iter().zip(&forgotten) {
            if v.is_nan() {
                n_missing += 1;
                continue;
            }
            values.push(*v);
            labels.push(is_f);
            if is_f {
                sample_f.push(*v);
            } else {
                sample_u.push(*v);
            }
        }

        let row = if sample_f.is_empty() || sample_u.is_empty() {
            FeatureReportRow {
                feature: def.name.clone(),
                u_statistic: (sample_f.len() * sample_u.len()) as f64 / 2.0,
                p_value: 1.0,
                spearman_rho: 0.0,
                auc: 0.5,
                p_significant: false,
                n_forgotten: sample_f.len(),
                n_unforgotten: sample_u.len(),
                n_missing,
                degenerate: true,
            }
        } else {
            let mw = mann_whitney(&sample_f, &sample_u)?;
            let label01: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
            let sp = spearman(&values, &label01)?;
            let auc = single_feature_auc(&values, &labels)?;
            FeatureReportRow {
                feature: def.name.clone(),
                u_statistic: mw.u,
                p_value: mw.p,
                spearman_rho: sp.rho,
                auc,
                p_significant: mw.p < 0.05,
                n_forgotten: sample_f.len(),
                n_unforgotten: sample_u.len(),
                n_missing,
                degenerate: sp.degenerate,
            }
        };
        rows.push(row);
    }
    rows.sort_by(|a, b| b.auc.total_cmp(&a.auc).then_with(|| a.feature.cmp(&b.feature)));
    Ok(rows)
}

pub fn report_to_csv(rows: &[FeatureReportRow]) -> String {
    let mut out = String::from(
        "feature,u_statistic,p_value,spearman_rho,auc,p_lt_0.05,n_forgotten,n_unforgotten,n_missing,degenerate\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.feature,
            r.u_statistic,
            r.p_value,
            r.spearman_rho,
            r.auc,
            r.p_significant,
            r.n_forgotten,
            r.n_unforgotten,
            r.n_missing,
            r.degenerate
        ));
    }
    out
}
