//! Second-order gradient-boosted decision trees with a softmax objective.
//!
//! One regression tree per class per round, trained on the gradient and
//! hessian of the multiclass log-loss with respect to raw scores. Split
//! search is exact greedy over midpoints of consecutive distinct feature
//! values; leaf weights, structure scores, and split gains follow the usual
//! second-order formulas with L2 leaf regularization `lambda` and per-leaf
//! penalty `gamma`. Fitting is fully deterministic.

mod ensemble;
mod objective;
mod tree;

pub use ensemble::{BoostConfig, Ensemble};
pub use objective::{log_loss_from_raw, softmax_grad_hess, GradHess};
pub use tree::{build_tree, leaf_weight, split_gain, structure_score, Node, Tree};

use crate::error::{Error, Result};

/// Row-major dense feature matrix: one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    /// Builds from per-sample rows. All rows must share one width >= 1 and
    /// contain only finite values.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<FeatureMatrix> {
        if rows.is_empty() {
            return Err(Error::InvalidData("feature matrix needs at least one row".into()));
        }
        let cols = rows[0].len();
        if cols == 0 {
            return Err(Error::InvalidData("feature rows must have width >= 1".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::InvalidData(format!(
                    "row {} has width {}, expected {}",
                    i,
                    row.len(),
                    cols
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("feature [{}][{}] is {}", i, j, v)));
                }
                data.push(v);
            }
        }
        Ok(FeatureMatrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}
