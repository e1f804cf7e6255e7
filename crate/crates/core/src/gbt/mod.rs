//! Gradient-boosted decision trees for binary classification.
//!
//! Logistic loss, second-order (Newton) leaf values, histogram split
//! finding over globally pre-binned features, and native missing-value
//! routing: each split learns which side NaN rows follow. Trees store leaf
//! values already scaled by the learning rate, so the ensemble score is
//! base_score plus a plain sum over trees.

pub mod binning;
pub mod tree;

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::PipelineError;
use crate::featurize::FeatureMatrix;
use crate::store::column::crc32;
use binning::{bin_feature, BinnedFeature, MISSING_BIN};
use tree::{Node, RegressionTree};

const MODEL_MAGIC: &[u8; 8] = b"QFGBT001";
const MODEL_VERSION: u32 = 1;

/// Split candidates must clear this gain to beat staying a leaf; filters
/// float-noise splits on exactly uninformative features.
const MIN_GAIN: f64 = 1e-12;

/// Columnar access to training data. NaN marks a missing value; sparse
/// text weights should densify with 0.0 (zero is a meaningful tf-idf
/// weight, not an absent one).
pub trait FeatureSource {
    fn n_rows(&self) -> usize;
    fn n_cols(&self) -> usize;
    fn column(&self, j: usize) -> Vec<f64>;
    fn feature_name(&self, j: usize) -> String;
}

impl FeatureSource for FeatureMatrix {
    fn n_rows(&self) -> usize {
        FeatureMatrix::n_rows(self)
    }

    fn n_cols(&self) -> usize {
        self.schema.features.len()
    }

    fn column(&self, j: usize) -> Vec<f64> {
        let n_dense = self.n_dense();
        if j < n_dense {
            self.dense_column(j)
        } else {
            let col = (j - n_dense) as u32;
            self.sparse
                .iter()
                .map(|row| match row.binary_search_by_key(&col, |e| e.0) {
                    Ok(i) => row[i].1,
                    Err(_) => 0.0,
                })
                .collect()
        }
    }

    fn feature_name(&self, j: usize) -> String {
        self.schema.features[j].name.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoostConfig {
    pub n_rounds: u32,
    pub learning_rate: f64,
    pub max_depth: u32,
    pub min_samples_leaf: u32,
    pub histogram_bins: u32,
    pub l2_leaf_regularization: f64,
    pub subsample: f64,
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            n_rounds: 200,
            learning_rate: 0.1,
            max_depth: 6,
            min_samples_leaf: 20,
            histogram_bins: 256,
            l2_leaf_regularization: 1.0,
            subsample: 1.0,
            seed: 0,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.n_rounds < 1 {
            return Err(PipelineError::config("n_rounds must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(PipelineError::config("learning_rate must be in (0, 1]"));
        }
        if self.max_depth < 1 {
            return Err(PipelineError::config("max_depth must be at least 1"));
        }
        if self.min_samples_leaf < 1 {
            return Err(PipelineError::config("min_samples_leaf must be at least 1"));
        }
        // u16 bin codes, with the max reserved for missing.
        if self.histogram_bins < 2 || self.histogram_bins > u32::from(u16::MAX - 1) {
            return Err(PipelineError::config("histogram_bins must be in [2, 65534]"));
        }
        if !(self.l2_leaf_regularization >= 0.0 && self.l2_leaf_regularization.is_finite()) {
            return Err(PipelineError::config(
                "l2_leaf_regularization must be finite and non-negative",
            ));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(PipelineError::config("subsample must be in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostedEnsemble {
    pub config: BoostConfig,
    pub feature_names: Vec<String>,
    /// Log-odds of the training prevalence.
    pub base_score: f64,
    /// Leaf values include the learning-rate factor.
    pub trees: Vec<RegressionTree>,
    /// Total split gain accumulated per feature.
    pub importance: Vec<f64>,
    /// Sum of all split gains; equals the importance total.
    pub total_gain: f64,
    /// Training log-loss after each round.
    pub loss: Vec<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gradient and hessian of the per-row logistic loss at raw score `f`.
pub fn logistic_grad_hess(f: f64, y: f64) -> (f64, f64) {
    let p = sigmoid(f);
    (p - y, p * (1.0 - p))
}

/// Per-row logistic loss -[y ln p + (1-y) ln(1-p)] at raw score `f`.
pub fn logistic_loss(f: f64, y: f64) -> f64 {
    let p = sigmoid(f).clamp(1e-15, 1.0 - 1e-15);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

#[derive(Debug, Clone, Copy)]
struct SplitCand {
    gain: f64,
    feature: u32,
    bin: u16,
    missing_left: bool,
}

struct TreeBuilder<'a> {
    binned: &'a [BinnedFeature],
    grad: &'a [f64],
    hess: &'a [f64],
    max_depth: usize,
    min_leaf: u32,
    lambda: f64,
    eta: f64,
    importance: &'a mut [f64],
    total_gain: &'a mut f64,
}

impl TreeBuilder<'_> {
    fn grow(&mut self, rows: Vec<u32>) -> RegressionTree {
        let mut nodes = Vec::new();
        self.grow_node(rows, 0, &mut nodes);
        RegressionTree { nodes }
    }

    fn grow_node(&mut self, rows: Vec<u32>, depth: usize, nodes: &mut Vec<Node>) -> u32 {
        let idx = nodes.len() as u32;
        nodes.push(Node::Leaf { value: f64::NAN });
        let mut g = 0.0;
        let mut h = 0.0;
        for &r in &rows {
            g += self.grad[r as usize];
            h += self.hess[r as usize];
        }
        if depth < self.max_depth && rows.len() as u32 >= 2 * self.min_leaf {
            if let Some(split) = self.best_split(&rows, g, h) {
                self.importance[split.feature as usize] += split.gain;
                *self.total_gain += split.gain;
                let codes = &self.binned[split.feature as usize].codes;
                let (left_rows, right_rows): (Vec<u32>, Vec<u32>) =
                    rows.into_iter().partition(|&r| {
                        let c = codes[r as usize];
                        if c == MISSING_BIN {
                            split.missing_left
                        } else {
                            c <= split.bin
                        }
                    });
                let threshold =
                    self.binned[split.feature as usize].edges[split.bin as usize];
                let left = self.grow_node(left_rows, depth + 1, nodes);
                let right = self.grow_node(right_rows, depth + 1, nodes);
                nodes[idx as usize] = Node::Internal {
                    feature: split.feature,
                    threshold,
                    missing_left: split.missing_left,
                    left,
                    right,
                };
                return idx;
            }
        }
        nodes[idx as usize] = Node::Leaf {
            value: -g / (h + self.lambda) * self.eta,
        };
        idx
    }

    /// Best candidate over all features, or None when no split clears
    /// MIN_GAIN. Ties break toward the lower feature index, then the lower
    /// bin, then routing missing left; the scan order makes that the first
    /// candidate seen, so strict comparison suffices.
    fn best_split(&self, rows: &[u32], g_total: f64, h_total: f64) -> Option<SplitCand> {
        let parent = g_total * g_total / (h_total + self.lambda);
        let count_total = rows.len() as u32;
        let per_feature: Vec<Option<SplitCand>> = (0..self.binned.len())
            .into_par_iter()
            .map(|j| self.best_split_on_feature(j, rows, g_total, h_total, count_total, parent))
            .collect();
        let mut best: Option<SplitCand> = None;
        for cand in per_feature.into_iter().flatten() {
            if best.map_or(true, |b| cand.gain > b.gain) {
                best = Some(cand);
            }
        }
        best.filter(|b| b.gain > MIN_GAIN)
    }

    fn best_split_on_feature(
        &self,
        j: usize,
        rows: &[u32],
        g_total: f64,
        h_total: f64,
        count_total: u32,
        parent: f64,
    ) -> Option<SplitCand> {
        let bf = &self.binned[j];
        let n_edges = bf.edges.len();
        if n_edges < 2 {
            return None;
        }
        let mut hist_g = vec![0.0; n_edges];
        let mut hist_h = vec![0.0; n_edges];
        let mut hist_c = vec![0u32; n_edges];
        let mut g_miss = 0.0;
        let mut h_miss = 0.0;
        let mut c_miss = 0u32;
        for &r in rows {
            let r = r as usize;
            let c = bf.codes[r];
            if c == MISSING_BIN {
                g_miss += self.grad[r];
                h_miss += self.hess[r];
                c_miss += 1;
            } else {
                let c = c as usize;
                hist_g[c] += self.grad[r];
                hist_h[c] += self.hess[r];
                hist_c[c] += 1;
            }
        }
        let mut best: Option<SplitCand> = None;
        let mut gl = 0.0;
        let mut hl = 0.0;
        let mut cl = 0u32;
        for b in 0..n_edges - 1 {
            gl += hist_g[b];
            hl += hist_h[b];
            cl += hist_c[b];
            for missing_left in [true, false] {
                let (g_left, h_left, c_left) = if missing_left {
                    (gl + g_miss, hl + h_miss, cl + c_miss)
                } else {
                    (gl, hl, cl)
                };
                let c_right = count_total - c_left;
                if c_left < self.min_leaf || c_right < self.min_leaf {
                    continue;
                }
                let g_right = g_total - g_left;
                let h_right = h_total - h_left;
                let dl = h_left + self.lambda;
                let dr = h_right + self.lambda;
                if dl <= 0.0 || dr <= 0.0 {
                    continue;
                }
                let gain = 0.5 * (g_left * g_left / dl + g_right * g_right / dr - parent);
                if best.map_or(true, |x| gain > x.gain) {
                    best = Some(SplitCand {
                        gain,
                        feature: j as u32,
                        bin: b as u16,
                        missing_left,
                    });
                }
            }
        }
        best
    }
}

/// Fits a boosted ensemble. Labels are the positive-class indicator;
/// both classes must be present.
pub fn fit(
    source: &dyn FeatureSource,
    labels: &[bool],
    config: &BoostConfig,
) -> Result<BoostedEnsemble, PipelineError> {
    config.validate()?;
    let n = source.n_rows();
    if labels.len() != n {
        return Err(PipelineError::data(format!(
            "feature matrix has {n} rows but {} labels were given",
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&b| b).count();
    if n_pos == 0 || n_pos == n {
        return Err(PipelineError::data(
            "training labels contain a single class",
        ));
    }
    let n_cols = source.n_cols();
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(n_cols);
    let mut feature_names = Vec::with_capacity(n_cols);
    for j in 0..n_cols {
        let col = source.column(j);
        if col.len() != n {
            return Err(PipelineError::data(format!(
                "column {j} has {} values for {n} rows",
                col.len()
            )));
        }
        feature_names.push(source.feature_name(j));
        columns.push(col);
    }
    let binned: Vec<BinnedFeature> = columns
        .par_iter()
        .map(|col| bin_feature(col, config.histogram_bins as usize))
        .collect();

    let y: Vec<f64> = labels.iter().map(|&b| f64::from(u8::from(b))).collect();
    let prevalence = n_pos as f64 / n as f64;
    let base_score = (prevalence / (1.0 - prevalence)).ln();
    let mut scores = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trees = Vec::with_capacity(config.n_rounds as usize);
    let mut importance = vec![0.0; n_cols];
    let mut total_gain = 0.0;
    let mut loss = Vec::with_capacity(config.n_rounds as usize);

    for _ in 0..config.n_rounds {
        for i in 0..n {
            let (g, h) = logistic_grad_hess(scores[i], y[i]);
            grad[i] = g;
            hess[i] = h;
        }
        let rows: Vec<u32> = if config.subsample < 1.0 {
            let k = ((n as f64) * config.subsample).floor().max(1.0) as usize;
            let mut pool: Vec<u32> = (0..n as u32).collect();
            for i in 0..k {
                let j = rng.gen_range(i..n);
                pool.swap(i, j);
            }
            let mut sample = pool[..k].to_vec();
            sample.sort_unstable();
            sample
        } else {
            (0..n as u32).collect()
        };
        let tree = {
            let mut builder = TreeBuilder {
                binned: &binned,
                grad: &grad,
                hess: &hess,
                max_depth: config.max_depth as usize,
                min_leaf: config.min_samples_leaf,
                lambda: config.l2_leaf_regularization,
                eta: config.learning_rate,
                importance: &mut importance,
                total_gain: &mut total_gain,
            };
            builder.grow(rows)
        };
        for (i, score) in scores.iter_mut().enumerate() {
            *score += tree.predict(|f| columns[f as usize][i]);
        }
        let round_loss =
            scores.iter().zip(&y).map(|(&f, &yy)| logistic_loss(f, yy)).sum::<f64>() / n as f64;
        loss.push(round_loss);
        trees.push(tree);
    }

    Ok(BoostedEnsemble {
        config: *config,
        feature_names,
        base_score,
        trees,
        importance,
        total_gain,
        loss,
    })
}

impl BoostedEnsemble {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Raw ensemble scores (log-odds) per row.
    pub fn predict_score(&self, source: &dyn FeatureSource) -> Result<Vec<f64>, PipelineError> {
        if source.n_cols() != self.n_features() {
            return Err(PipelineError::config(format!(
                "model expects {} features but the matrix has {}",
                self.n_features(),
                source.n_cols()
            )));
        }
        let n = source.n_rows();
        let mut used: Vec<u32> = self
            .trees
            .iter()
            .flat_map(|t| t.nodes.iter())
            .filter_map(|node| match node {
                Node::Internal { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .collect();
        used.sort_unstable();
        used.dedup();
        let mut cols: HashMap<u32, Vec<f64>> = HashMap::new();
        for f in used {
            let col = source.column(f as usize);
            if col.len() != n {
                return Err(PipelineError::data(format!(
                    "column {f} has {} values for {n} rows",
                    col.len()
                )));
            }
            cols.insert(f, col);
        }
        Ok((0..n)
            .map(|i| {
                let mut s = self.base_score;
                for t in &self.trees {
                    s += t.predict(|f| cols[&f][i]);
                }
                s
            })
            .collect())
    }

    pub fn predict_proba(&self, source: &dyn FeatureSource) -> Result<Vec<f64>, PipelineError> {
        Ok(self.predict_score(source)?.into_iter().map(sigmoid).collect())
    }

    /// Class labels at the 0.5 probability threshold.
    pub fn predict_labels(&self, source: &dyn FeatureSource) -> Result<Vec<bool>, PipelineError> {
        Ok(self.predict_proba(source)?.into_iter().map(|p| p >= 0.5).collect())
    }

    /// (feature name, total split gain) pairs in feature order.
    pub fn feature_importance(&self) -> Vec<(String, f64)> {
        self.feature_names
            .iter()
            .cloned()
            .zip(self.importance.iter().copied())
            .collect()
    }

    pub fn loss_trajectory(&self) -> &[f64] {
        &self.loss
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        push_u32(&mut out, MODEL_VERSION);
        push_u32(&mut out, self.config.n_rounds);
        push_f64(&mut out, self.config.learning_rate);
        push_u32(&mut out, self.config.max_depth);
        push_u32(&mut out, self.config.min_samples_leaf);
        push_u32(&mut out, self.config.histogram_bins);
        push_f64(&mut out, self.config.l2_leaf_regularization);
        push_f64(&mut out, self.config.subsample);
        push_u64(&mut out, self.config.seed);
        push_f64(&mut out, self.base_score);
        push_u64(&mut out, self.feature_names.len() as u64);
        for name in &self.feature_names {
            push_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
        }
        for &v in &self.importance {
            push_f64(&mut out, v);
        }
        push_f64(&mut out, self.total_gain);
        push_u64(&mut out, self.loss.len() as u64);
        for &v in &self.loss {
            push_f64(&mut out, v);
        }
        push_u64(&mut out, self.trees.len() as u64);
        for tree in &self.trees {
            push_u64(&mut out, tree.nodes.len() as u64);
            for node in &tree.nodes {
                match node {
                    Node::Leaf { value } => {
                        out.push(0);
                        push_f64(&mut out, *value);
                    }
                    Node::Internal {
                        feature,
                        threshold,
                        missing_left,
                        left,
                        right,
                    } => {
                        out.push(1);
                        push_u32(&mut out, *feature);
                        push_f64(&mut out, *threshold);
                        out.push(u8::from(*missing_left));
                        push_u32(&mut out, *left);
                        push_u32(&mut out, *right);
                    }
                }
            }
        }
        let crc = crc32(&out[MODEL_MAGIC.len()..]);
        push_u32(&mut out, crc);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<BoostedEnsemble, PipelineError> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(MODEL_MAGIC.len())?;
        if magic != MODEL_MAGIC {
            return Err(PipelineError::format("not a boosted-ensemble file"));
        }
        if bytes.len() < MODEL_MAGIC.len() + 4 {
            return Err(PipelineError::format("model file truncated"));
        }
        let body = &bytes[MODEL_MAGIC.len()..bytes.len() - 4];
        let stored_crc =
            u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        if crc32(body) != stored_crc {
            return Err(PipelineError::format("model checksum mismatch"));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(PipelineError::format(format!(
                "unsupported model version {version}"
            )));
        }
        let config = BoostConfig {
            n_rounds: r.u32()?,
            learning_rate: r.f64()?,
            max_depth: r.u32()?,
            min_samples_leaf: r.u32()?,
            histogram_bins: r.u32()?,
            l2_leaf_regularization: r.f64()?,
            subsample: r.f64()?,
            seed: r.u64()?,
        };
        let base_score = r.f64()?;
        let n_features = r.u64()? as usize;
        let mut feature_names = Vec::with_capacity(n_features);
        for _ in 0..n_features {
            let len = r.u32()? as usize;
            let raw = r.take(len)?;
            let name = std::str::from_utf8(raw)
                .map_err(|_| PipelineError::format("feature name is not utf-8"))?;
            feature_names.push(name.to_string());
        }
        let mut importance = Vec::with_capacity(n_features);
        for _ in 0..n_features {
            importance.push(r.f64()?);
        }
        let total_gain = r.f64()?;
        let n_loss = r.u64()? as usize;
        let mut loss = Vec::with_capacity(n_loss);
        for _ in 0..n_loss {
            loss.push(r.f64()?);
        }
        let n_trees = r.u64()? as usize;
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let n_nodes = r.u64()? as usize;
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                let tag = r.u8()?;
                let node = match tag {
                    0 => Node::Leaf { value: r.f64()? },
                    1 => Node::Internal {
                        feature: r.u32()?,
                        threshold: r.f64()?,
                        missing_left: r.u8()? != 0,
                        left: r.u32()?,
                        right: r.u32()?,
                    },
                    other => {
                        return Err(PipelineError::format(format!(
                            "unknown tree node tag {other}"
                        )))
                    }
                };
                nodes.push(node);
            }
            for node in &nodes {
                if let Node::Internal { left, right, .. } = node {
                    if *left as usize >= nodes.len() || *right as usize >= nodes.len() {
                        return Err(PipelineError::format("tree child index out of range"));
                    }
                }
            }
            trees.push(RegressionTree { nodes });
        }
        if r.remaining() != 4 {
            return Err(PipelineError::format("trailing bytes after model data"));
        }
        Ok(BoostedEnsemble {
            config,
            feature_names,
            base_score,
            trees,
            importance,
            total_gain,
            loss,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), PipelineError> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &std::path::Path) -> Result<BoostedEnsemble, PipelineError> {
        BoostedEnsemble::from_bytes(&std::fs::read(path)?)
    }
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], PipelineError> {
        if self.pos + n > self.bytes.len() {
            return Err(PipelineError::format("model file truncated"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, PipelineError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, PipelineError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, PipelineError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, PipelineError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}
