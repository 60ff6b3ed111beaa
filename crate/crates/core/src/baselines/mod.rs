//! Point-anomaly baselines: Isolation Forest and Local Outlier Factor.
//!
//! Both treat each row as a single observation; callers pass the joined
//! `[c, x]` matrix. Scores are oriented like the model's: higher means more
//! anomalous.

mod iforest;
mod lof;

pub use iforest::{
    average_path_length, iforest_fit, iforest_score, IsoForestModel, IsoNode, IsoTree,
};
pub use lof::{lof_score, LofConfig};
