//! Regression trees grown level by level with exhaustive midpoint thresholds
//! and the variance-reduction criterion.
//!
//! Each feature is sorted once per fit; a level of the tree is then grown
//! with one pass per feature over the presorted rows, carrying running sums
//! for every node on the current frontier.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LEAF: u32 = u32::MAX;
const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 8,
            min_samples_leaf: 1,
        }
    }
}

impl TreeParams {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.max_depth == 0 {
            return Err(Error::invalid("tree depth must be >= 1"));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::invalid("min_samples_leaf must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Node {
    feature: u32,
    threshold: f64,
    left: u32,
    right: u32,
    value: f64,
}

impl Node {
    fn leaf() -> Self {
        Node {
            feature: LEAF,
            threshold: 0.0,
            left: 0,
            right: 0,
            value: 0.0,
        }
    }
}

/// Binary regression tree; rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.feature == LEAF).count()
    }

    /// Features used by at least one split.
    pub fn split_features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self
            .nodes
            .iter()
            .filter(|n| n.feature != LEAF)
            .map(|n| n.feature as usize)
            .collect();
        f.sort_unstable();
        f.dedup();
        f
    }

    pub(crate) fn predict_row(&self, x: &DMatrix<f64>, i: usize) -> f64 {
        let mut k = 0usize;
        loop {
            let node = &self.nodes[k];
            if node.feature == LEAF {
                return node.value;
            }
            k = if x[(i, node.feature as usize)] <= node.threshold {
                node.left as usize
            } else {
                node.right as usize
            };
        }
    }
}

/// Row indices of each column sorted by value (ties by row index).
pub(crate) struct Presorted {
    order: Vec<Vec<u32>>,
}

impl Presorted {
    pub(crate) fn new(x: &DMatrix<f64>) -> Self {
        let n = x.nrows();
        let order = x
            .column_iter()
            .map(|c| {
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| c[a as usize].total_cmp(&c[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Presorted { order }
    }
}

struct Best {
    gain: f64,
    feature: u32,
    threshold: f64,
}

/// Fits a tree to `target`, using only rows with `include[i]` when given.
pub(crate) fn grow(
    x: &DMatrix<f64>,
    sorted: &Presorted,
    target: &[f64],
    include: Option<&[bool]>,
    params: &TreeParams,
) -> Tree {
    let n = x.nrows();
    let data = x.as_slice();
    let min_leaf = params.min_samples_leaf;
    let mut nodes = vec![Node::leaf()];
    let mut node_of: Vec<u32> = (0..n)
        .map(|i| {
            if include.is_none_or(|m| m[i]) {
                0
            } else {
                NONE
            }
        })
        .collect();
    let mut frontier: Vec<u32> = vec![0];
    let mut depth = 0;

    loop {
        let m = frontier.len();
        let mut slot_of = vec![NONE; nodes.len()];
        for (s, &id) in frontier.iter().enumerate() {
            slot_of[id as usize] = s as u32;
        }
        let mut tot_s = vec![0.0; m];
        let mut tot_c = vec![0usize; m];
        for i in 0..n {
            let id = node_of[i];
            if id == NONE {
                continue;
            }
            let s = slot_of[id as usize];
            if s != NONE {
                tot_s[s as usize] += target[i];
                tot_c[s as usize] += 1;
            }
        }
        for s in 0..m {
            if tot_c[s] > 0 {
                nodes[frontier[s] as usize].value = tot_s[s] / tot_c[s] as f64;
            }
        }
        if depth >= params.max_depth {
            break;
        }

        let mut best: Vec<Best> = (0..m)
            .map(|s| {
                let parent = if tot_c[s] > 0 {
                    tot_s[s] * tot_s[s] / tot_c[s] as f64
                } else {
                    0.0
                };
                Best {
                    gain: 1e-12 * parent.abs().max(1.0),
                    feature: LEAF,
                    threshold: 0.0,
                }
            })
            .collect();
        let mut left_s = vec![0.0; m];
        let mut left_c = vec![0usize; m];
        let mut last_x = vec![f64::NEG_INFINITY; m];
        for (f, order) in sorted.order.iter().enumerate() {
            let col = &data[f * n..(f + 1) * n];
            left_s.fill(0.0);
            left_c.fill(0);
            for &i in order {
                let i = i as usize;
                let id = node_of[i];
                if id == NONE {
                    continue;
                }
                let s = slot_of[id as usize];
                if s == NONE {
                    continue;
                }
                let s = s as usize;
                let xi = col[i];
                let lc = left_c[s];
                if lc >= min_leaf && tot_c[s] - lc >= min_leaf && xi > last_x[s] {
                    let ls = left_s[s];
                    let rs = tot_s[s] - ls;
                    let rc = (tot_c[s] - lc) as f64;
                    let gain =
                        ls * ls / lc as f64 + rs * rs / rc - tot_s[s] * tot_s[s] / tot_c[s] as f64;
                    if gain > best[s].gain {
                        let mut thr = 0.5 * (last_x[s] + xi);
                        if thr >= xi {
                            thr = last_x[s];
                        }
                        best[s] = Best {
                            gain,
                            feature: f as u32,
                            threshold: thr,
                        };
                    }
                }
                left_s[s] += target[i];
                left_c[s] += 1;
                last_x[s] = xi;
            }
        }

        let mut next = Vec::new();
        for (s, b) in best.iter().enumerate() {
            if b.feature == LEAF {
                continue;
            }
            let l = nodes.len() as u32;
            nodes.push(Node::leaf());
            nodes.push(Node::leaf());
            let node = &mut nodes[frontier[s] as usize];
            node.feature = b.feature;
            node.threshold = b.threshold;
            node.left = l;
            node.right = l + 1;
            next.push(l);
            next.push(l + 1);
        }
        if next.is_empty() {
            break;
        }
        for i in 0..n {
            let id = node_of[i];
            if id == NONE || slot_of[id as usize] == NONE {
                continue;
            }
            let node = &nodes[id as usize];
            if node.feature == LEAF {
                continue;
            }
            node_of[i] = if data[node.feature as usize * n + i] <= node.threshold {
                node.left
            } else {
                node.right
            };
        }
        frontier = next;
        depth += 1;
    }
    Tree { nodes }
}

pub(super) fn fit_cart(x: &DMatrix<f64>, y: &[f64], params: &TreeParams) -> Tree {
    grow(x, &Presorted::new(x), y, None, params)
}
