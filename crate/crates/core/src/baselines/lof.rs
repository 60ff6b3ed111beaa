use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::numerics::{DenseMatrix, Scalar};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LofConfig {
    pub k: usize,
}

impl Default for LofConfig {
    fn default() -> Self {
        Self { k: 20 }
    }
}

struct Neighbourhood {
    k_distance: f64,
    /// Every other row within `k_distance` (may exceed `k` on ties).
    members: Vec<(usize, f64)>,
}

fn neighbourhoods(points: &[Vec<f64>], k: usize) -> Vec<Neighbourhood> {
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            let p = &points[i];
            let mut d: Vec<(usize, f64)> = points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, q)| {
                    (
                        j,
                        p.iter()
                            .zip(q)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt(),
                    )
                })
                .collect();
            d.select_nth_unstable_by(k - 1, |a, b| a.1.total_cmp(&b.1));
            let k_distance = d[k - 1].1;
            let mut members: Vec<(usize, f64)> = d
                .into_iter()
                .filter(|&(_, dist)| dist <= k_distance)
                .collect();
            members.sort_unstable_by_key(|m| m.0);
            Neighbourhood {
                k_distance,
                members,
            }
        })
        .collect()
}

/// Local Outlier Factor with brute-force Euclidean neighbours.
///
/// A row whose neighbours all coincide with it has zero mean reachability
/// distance; its local reachability density is taken as `+∞`, and the ratio
/// of two infinite densities as 1, so clusters of exact duplicates score 1.
pub fn lof_score<T: Scalar>(data: &DenseMatrix<T>, config: &LofConfig) -> Result<Vec<f64>> {
    let n = data.rows();
    if config.k == 0 || config.k >= n {
        return Err(Error::InvalidConfig(format!(
            "LOF needs 1 <= k < N = {n}, got k = {}",
            config.k
        )));
    }
    let points: Vec<Vec<f64>> = (0..n)
        .map(|i| data.row(i).iter().map(|v| v.as_f64()).collect())
        .collect();
    let hoods = neighbourhoods(&points, config.k);
    let lrd: Vec<f64> = hoods
        .par_iter()
        .map(|h| {
            let mean_reach = h
                .members
                .iter()
                .map(|&(o, d)| d.max(hoods[o].k_distance))
                .sum::<f64>()
                / h.members.len() as f64;
            if mean_reach == 0.0 {
                f64::INFINITY
            } else {
                1.0 / mean_reach
            }
        })
        .collect();
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let h = &hoods[i];
            h.members
                .iter()
                .map(|&(o, _)| {
                    if lrd[o].is_infinite() && lrd[i].is_infinite() {
                        1.0
                    } else {
                        lrd[o] / lrd[i]
                    }
                })
                .sum::<f64>()
                / h.members.len() as f64
        })
        .collect())
}
