use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::numerics::{DenseMatrix, Scalar};
use crate::rng::{streams, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum IsoNode {
    /// Rows with `value < split` go left.
    Split {
        dim: usize,
        split: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        size: usize,
    },
}

/// Nodes in depth-first order; index 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoTree {
    pub nodes: Vec<IsoNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoForestModel {
    pub trees: Vec<IsoTree>,
    pub subsample_size: usize,
    pub n_trees: usize,
}

fn harmonic(n: usize) -> f64 {
    (1..=n).map(|i| 1.0 / i as f64).sum()
}

/// `c(m) = 2 H(m-1) - 2 (m-1) / m`, the mean unsuccessful-search path length
/// of a binary search tree on `m` points; `c(0) = c(1) = 0`.
pub fn average_path_length(m: usize) -> f64 {
    if m <= 1 {
        return 0.0;
    }
    2.0 * harmonic(m - 1) - 2.0 * (m - 1) as f64 / m as f64
}

fn build(
    data: &[Vec<f64>],
    rows: &mut [usize],
    depth: usize,
    limit: usize,
    rng: &mut Rng,
    nodes: &mut Vec<IsoNode>,
) -> usize {
    let id = nodes.len();
    nodes.push(IsoNode::Leaf { size: rows.len() });
    if depth >= limit || rows.len() <= 1 {
        return id;
    }
    let dims = data[0].len();
    let ranges: Vec<(usize, f64, f64)> = (0..dims)
        .filter_map(|d| {
            let (lo, hi) = rows
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                    (lo.min(data[r][d]), hi.max(data[r][d]))
                });
            (hi > lo).then_some((d, lo, hi))
        })
        .collect();
    if ranges.is_empty() {
        return id;
    }
    let (dim, lo, hi) = ranges[rng.below(ranges.len())];
    let mut split = lo;
    while split <= lo {
        split = rng.uniform_range(lo, hi);
    }
    let mut mid = 0;
    for i in 0..rows.len() {
        if data[rows[i]][dim] < split {
            rows.swap(i, mid);
            mid += 1;
        }
    }
    let (l, r) = rows.split_at_mut(mid);
    let left = build(data, l, depth + 1, limit, rng, nodes);
    let right = build(data, r, depth + 1, limit, rng, nodes);
    nodes[id] = IsoNode::Split {
        dim,
        split,
        left,
        right,
    };
    id
}

/// Fits `n_trees` trees, each on its own seeded subsample without
/// replacement, with height limit `⌈log₂ subsample_size⌉`.
pub fn iforest_fit<T: Scalar>(
    data: &DenseMatrix<T>,
    n_trees: usize,
    subsample_size: usize,
    seed: u64,
) -> Result<IsoForestModel> {
    if n_trees == 0 {
        return Err(Error::InvalidConfig(
            "isolation forest needs at least one tree".into(),
        ));
    }
    if subsample_size < 2 || subsample_size > data.rows() {
        return Err(Error::InvalidConfig(format!(
            "subsample size must lie in [2, {}], got {subsample_size}",
            data.rows()
        )));
    }
    let limit = (subsample_size as f64).log2().ceil() as usize;
    let trees = (0..n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = Rng::fork(seed, streams::IFOREST, t as u64);
            let idx = rng.sample_without_replacement(data.rows(), subsample_size);
            let sub: Vec<Vec<f64>> = idx
                .iter()
                .map(|&i| data.row(i).iter().map(|v| v.as_f64()).collect())
                .collect();
            let mut rows: Vec<usize> = (0..sub.len()).collect();
            let mut nodes = Vec::new();
            build(&sub, &mut rows, 0, limit, &mut rng, &mut nodes);
            IsoTree { nodes }
        })
        .collect();
    Ok(IsoForestModel {
        trees,
        subsample_size,
        n_trees,
    })
}

impl IsoTree {
    /// Edges from the root to the row's leaf plus `c(leaf size)`.
    pub fn path_length(&self, row: &[f64]) -> f64 {
        let mut node = 0;
        let mut depth = 0.0;
        loop {
            match self.nodes[node] {
                IsoNode::Split {
                    dim,
                    split,
                    left,
                    right,
                } => {
                    node = if row[dim] < split { left } else { right };
                    depth += 1.0;
                }
                IsoNode::Leaf { size } => return depth + average_path_length(size),
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &IsoTree, n: usize) -> usize {
            match t.nodes[n] {
                IsoNode::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
                IsoNode::Leaf { .. } => 0,
            }
        }
        go(self, 0)
    }
}

impl IsoForestModel {
    /// Mean path length over trees.
    pub fn expected_path_length<T: Scalar>(&self, row: &[T]) -> f64 {
        let r: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
        self.trees.iter().map(|t| t.path_length(&r)).sum::<f64>() / self.trees.len() as f64
    }
}

/// `2^(-E[h(x)] / c(ψ))` per row, in `(0, 1]`.
pub fn iforest_score<T: Scalar>(model: &IsoForestModel, data: &DenseMatrix<T>) -> Vec<f64> {
    let cn = average_path_length(model.subsample_size);
    (0..data.rows())
        .into_par_iter()
        .map(|i| 2f64.powf(-model.expected_path_length(data.row(i)) / cn))
        .collect()
}
