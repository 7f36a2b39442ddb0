use serde::{Deserialize, Serialize};

use super::LearnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Smallest accepted drop in node variance (SSE reduction / node size).
    pub min_variance_gain: f64,
    /// Backup splits kept per node for masked features.
    pub max_surrogates: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            max_depth: 8,
            min_leaf: 10,
            min_variance_gain: 0.0,
            max_surrogates: 4,
        }
    }
}

/// A backup split: `x[feature] <= threshold` sends the sample left when
/// `left_below`, right otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Surrogate {
    pub feature: usize,
    pub threshold: f64,
    pub left_below: bool,
    /// Share of the node's training samples routed like the primary split.
    pub agreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        n_samples: usize,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        surrogates: Vec<Surrogate>,
        /// Branch for a masked feature with no usable surrogate (the larger child).
        default_left: bool,
    },
    Leaf {
        value: f64,
        n_samples: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
    pub hyperparams: Hyperparams,
    pub schema_id: String,
    pub n_features: usize,
}

/// Row-major sample matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self, LearnError> {
        let mut data = Vec::new();
        let mut n = 0;
        let mut cols = None;
        for row in rows {
            match cols {
                None => cols = Some(row.len()),
                Some(c) if c != row.len() => {
                    return Err(LearnError::Shape(format!(
                        "row {n} has {} features, expected {c}",
                        row.len()
                    )))
                }
                _ => {}
            }
            if let Some(j) = row.iter().position(|x| !x.is_finite()) {
                return Err(LearnError::NonFinite { sample: n, feature: j });
            }
            data.extend_from_slice(row);
            n += 1;
        }
        Ok(Self {
            rows: n,
            cols: cols.unwrap_or(0),
            data,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }
}

struct Best {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct Builder<'a> {
    columns: Vec<Vec<f64>>,
    y: &'a [f64],
    hp: Hyperparams,
    nodes: Vec<Node>,
}

/// CART regression tree by greedy variance reduction. Candidate thresholds
/// are midpoints between consecutive distinct values; equal gains go to the
/// lowest feature index, then the lowest threshold.
pub fn fit_matrix(x: &Matrix, y: &[f64], hp: &Hyperparams, schema_id: &str) -> Result<RegressionTree, LearnError> {
    if x.rows == 0 {
        return Err(LearnError::EmptyDataset);
    }
    if y.len() != x.rows {
        return Err(LearnError::Shape(format!("{} targets for {} samples", y.len(), x.rows)));
    }
    let min_leaf = hp.min_leaf.max(1);
    if x.rows < 2 * min_leaf {
        return Err(LearnError::TooFewSamples {
            need: 2 * min_leaf,
            got: x.rows,
        });
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(LearnError::NonFiniteTarget { sample: i });
    }
    let mut b = Builder {
        columns: (0..x.cols).map(|j| x.column(j)).collect(),
        y,
        hp: Hyperparams { min_leaf, ..*hp },
        nodes: Vec::new(),
    };
    b.grow((0..x.rows as u32).collect(), 0);
    Ok(RegressionTree {
        nodes: b.nodes,
        hyperparams: b.hp,
        schema_id: schema_id.to_string(),
        n_features: x.cols,
    })
}

impl Builder<'_> {
    fn grow(&mut self, idx: Vec<u32>, depth: usize) -> usize {
        let n = idx.len();
        // Shifted by the first value so that a constant node averages exactly.
        let y0 = self.y[idx[0] as usize];
        let mean = y0 + idx.iter().map(|&i| self.y[i as usize] - y0).sum::<f64>() / n as f64;
        let sse: f64 = idx.iter().map(|&i| (self.y[i as usize] - mean).powi(2)).sum();
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: mean,
            n_samples: n,
        });
        if depth >= self.hp.max_depth || n < 2 * self.hp.min_leaf || sse <= 0.0 {
            return id;
        }
        let Some(best) = self.best_split(&idx, mean) else {
            return id;
        };
        if best.gain <= 0.0 || best.gain / n as f64 <= self.hp.min_variance_gain {
            return id;
        }
        let col = &self.columns[best.feature];
        let (left_idx, right_idx): (Vec<u32>, Vec<u32>) = idx.iter().partition(|&&i| col[i as usize] <= best.threshold);
        let surrogates = self.surrogates(&idx, best.feature, best.threshold);
        let default_left = left_idx.len() >= right_idx.len();
        let left = self.grow(left_idx, depth + 1);
        let right = self.grow(right_idx, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
            n_samples: n,
            surrogates,
            default_left,
        };
        id
    }

    fn best_split(&self, idx: &[u32], mean: f64) -> Option<Best> {
        let n = idx.len();
        let min_leaf = self.hp.min_leaf;
        let total: f64 = idx.iter().map(|&i| self.y[i as usize] - mean).sum();
        let mut best: Option<Best> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
        for (f, col) in self.columns.iter().enumerate() {
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (col[i as usize], self.y[i as usize] - mean)));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            if pairs[0].0 == pairs[n - 1].0 {
                continue;
            }
            let mut sum_left = 0.0;
            for k in 1..n {
                sum_left += pairs[k - 1].1;
                if k < min_leaf || n - k < min_leaf || pairs[k - 1].0 == pairs[k].0 {
                    continue;
                }
                let sum_right = total - sum_left;
                let gain =
                    sum_left * sum_left / k as f64 + sum_right * sum_right / (n - k) as f64 - total * total / n as f64;
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(Best {
                        feature: f,
                        threshold: midpoint(pairs[k - 1].0, pairs[k].0),
                        gain,
                    });
                }
            }
        }
        best
    }

    /// CART surrogates: for every other feature the threshold and direction
    /// that best reproduce the primary routing, kept when they beat sending
    /// everything to the larger child.
    fn surrogates(&self, idx: &[u32], primary: usize, threshold: f64) -> Vec<Surrogate> {
        if self.hp.max_surrogates == 0 {
            return Vec::new();
        }
        let n = idx.len();
        let pcol = &self.columns[primary];
        let goes_left: Vec<bool> = idx.iter().map(|&i| pcol[i as usize] <= threshold).collect();
        let n_left = goes_left.iter().filter(|&&l| l).count();
        let majority = n_left.max(n - n_left);
        let mut found: Vec<Surrogate> = Vec::new();
        let mut pairs: Vec<(f64, bool)> = Vec::with_capacity(n);
        for (f, col) in self.columns.iter().enumerate() {
            if f == primary {
                continue;
            }
            pairs.clear();
            pairs.extend(idx.iter().zip(&goes_left).map(|(&i, &l)| (col[i as usize], l)));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_below = 0usize;
            let mut best: Option<(usize, f64, bool)> = None;
            for k in 1..n {
                if pairs[k - 1].1 {
                    left_below += 1;
                }
                if pairs[k - 1].0 == pairs[k].0 {
                    continue;
                }
                let right_below = k - left_below;
                let same = left_below + (n - n_left - right_below);
                let flipped = right_below + (n_left - left_below);
                let (agree, dir) = if flipped > same { (flipped, false) } else { (same, true) };
                if best.is_none_or(|b| agree > b.0) {
                    best = Some((agree, midpoint(pairs[k - 1].0, pairs[k].0), dir));
                }
            }
            if let Some((agree, t, dir)) = best {
                if agree > majority {
                    found.push(Surrogate {
                        feature: f,
                        threshold: t,
                        left_below: dir,
                        agreement: agree as f64 / n as f64,
                    });
                }
            }
        }
        // Stable sort keeps the lower feature index first among equals.
        found.sort_by(|a, b| b.agreement.total_cmp(&a.agreement));
        found.truncate(self.hp.max_surrogates);
        found
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m < b {
        m
    } else {
        a
    }
}

impl RegressionTree {
    /// Leaf value for `x`. Features flagged in `mask` are treated as missing:
    /// the first surrogate on an unmasked feature decides, else the larger child.
    pub fn predict_row(&self, x: &[f64], mask: Option<&[bool]>) -> f64 {
        let missing = |f: usize| mask.is_some_and(|m| m.get(f).copied().unwrap_or(false));
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    surrogates,
                    default_left,
                    ..
                } => {
                    let go_left = if !missing(*feature) {
                        x[*feature] <= *threshold
                    } else {
                        surrogates
                            .iter()
                            .find(|s| !missing(s.feature))
                            .map(|s| (x[s.feature] <= s.threshold) == s.left_below)
                            .unwrap_or(*default_left)
                    };
                    at = if go_left { *left } else { *right };
                }
            }
        }
    }

    /// Internal nodes on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { value, n_samples } => Some((*value, *n_samples)),
            _ => None,
        })
    }

    /// Index of the leaf `x` reaches, ignoring masks.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut at = 0;
        while let Node::Split {
            feature,
            threshold,
            left,
            right,
            ..
        } = &self.nodes[at]
        {
            at = if x[*feature] <= *threshold { *left } else { *right };
        }
        at
    }
}
