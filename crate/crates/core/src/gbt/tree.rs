//! Regression trees used as boosting base learners.

/// One node in a flat tree. Internal nodes route rows by "value ≤ threshold";
/// missing values follow the learned default direction.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Internal {
        feature: u32,
        threshold: f64,
        missing_left: bool,
        left: u32,
        right: u32,
    },
}

/// A regression tree over raw feature values. Root is node 0.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    /// Routes one row to its leaf value. `get(feature)` returns the raw
    /// value, NaN for missing.
    pub fn predict(&self, get: impl Fn(u32) -> f64) -> f64 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Internal {
                    feature,
                    threshold,
                    missing_left,
                    left,
                    right,
                } => {
                    let v = get(feature);
                    let go_left = if v.is_nan() { missing_left } else { v <= threshold };
                    i = if go_left { left as usize } else { right as usize };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    /// Depth of the deepest leaf; a lone root leaf has depth 0.
    pub fn depth(&self) -> usize {
        self.depth_from(0)
    }

    fn depth_from(&self, i: usize) -> usize {
        match self.nodes[i] {
            Node::Leaf { .. } => 0,
            Node::Internal { left, right, .. } => {
                1 + self
                    .depth_from(left as usize)
                    .max(self.depth_from(right as usize))
            }
        }
    }
}
