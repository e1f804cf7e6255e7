//! Equal-frequency histogram binning of feature columns.
//!
//! Bins are built once per feature at fit start from the training values.
//! Bin i covers (edges[i-1], edges[i]], so a split "bin ≤ b" is exactly the
//! predicate "value ≤ edges[b]" on raw values.

/// Bin code for a missing (NaN) value.
pub const MISSING_BIN: u16 = u16::MAX;

/// A feature column reduced to bin codes plus the edges that define them.
#[derive(Debug, Clone)]
pub struct BinnedFeature {
    /// Upper-inclusive bin boundaries, strictly increasing. Empty when the
    /// column has no finite values at all.
    pub edges: Vec<f64>,
    /// Per-row bin index, MISSING_BIN for NaN.
    pub codes: Vec<u16>,
}

/// Strictly increasing bin edges from sorted finite values. With at most
/// `max_bins` distinct values every distinct value gets its own bin;
/// otherwise edges sit at equal-count quantile ranks.
pub fn equal_frequency_edges(sorted: &[f64], max_bins: usize) -> Vec<f64> {
    assert!(max_bins >= 2);
    if sorted.is_empty() {
        return Vec::new();
    }
    let mut distinct: Vec<f64> = Vec::new();
    for &v in sorted {
        if distinct.last() != Some(&v) {
            distinct.push(v);
        }
    }
    if distinct.len() <= max_bins {
        return distinct;
    }
    let n = sorted.len();
    let mut edges: Vec<f64> = Vec::with_capacity(max_bins);
    for k in 1..=max_bins {
        let rank = (k * n).div_ceil(max_bins) - 1;
        let v = sorted[rank];
        if edges.last() != Some(&v) {
            edges.push(v);
        }
    }
    debug_assert_eq!(edges.last(), sorted.last());
    edges
}

/// Bin index of `v` under `edges`: the first edge ≥ v. Values beyond the
/// last edge (unseen at fit time) clamp into the final bin.
pub fn bin_of(edges: &[f64], v: f64) -> usize {
    let i = edges.partition_point(|&e| e < v);
    i.min(edges.len() - 1)
}

/// Bins one column. NaN values become MISSING_BIN.
pub fn bin_feature(values: &[f64], max_bins: usize) -> BinnedFeature {
    let mut finite: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    finite.sort_by(|a, b| a.total_cmp(b));
    let edges = equal_frequency_edges(&finite, max_bins);
    let codes = values
        .iter()
        .map(|&v| {
            if v.is_nan() {
                MISSING_BIN
            } else {
                bin_of(&edges, v) as u16
            }
        })
        .collect();
    BinnedFeature { edges, codes }
}
