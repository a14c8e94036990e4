//! Boosted ensemble: fitting, prediction, JSON round-trip.

use super::objective::softmax_grad_hess;
use super::tree::{build_tree, Tree};
use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::tensor::softmax_slice;
use serde::{Deserialize, Serialize};

/// Boosting hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoostConfig {
    /// Shrinkage applied to every tree's contribution. In (0, 1].
    pub learning_rate: f64,
    /// Maximum number of split edges on any root-to-leaf path. At least 1.
    pub max_depth: usize,
    /// Number of boosting rounds; each round grows one tree per class.
    pub n_estimators: usize,
    /// L2 regularization on leaf weights. Non-negative.
    pub lambda: f64,
    /// Per-leaf penalty subtracted from every split gain. Non-negative.
    pub gamma: f64,
    /// Minimum hessian sum allowed in a child; 0 disables the constraint.
    pub min_child_hessian: f64,
    /// Initial raw score for every class.
    pub base_score: f64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            learning_rate: 0.1,
            max_depth: 15,
            n_estimators: 500,
            lambda: 1.0,
            gamma: 0.0,
            min_child_hessian: 0.0,
            base_score: 0.0,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if self.max_depth < 1 {
            return Err(Error::InvalidConfig("max_depth must be >= 1".into()));
        }
        if self.n_estimators < 1 {
            return Err(Error::InvalidConfig("n_estimators must be >= 1".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        if !(self.min_child_hessian >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "min_child_hessian must be >= 0, got {}",
                self.min_child_hessian
            )));
        }
        if !self.base_score.is_finite() {
            return Err(Error::InvalidConfig("base_score must be finite".into()));
        }
        Ok(())
    }
}

/// A fitted multiclass boosted ensemble: `rounds[t][c]` is the tree grown
/// for class `c` at round `t`. Raw score of class c on sample x is
/// base_score + learning_rate * sum_t rounds[t][c].output(x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub class_count: usize,
    pub feature_count: usize,
    pub config: BoostConfig,
    pub rounds: Vec<Vec<Tree>>,
}

impl Ensemble {
    /// An ensemble with no rounds; predicts uniform probabilities.
    pub fn empty(class_count: usize, feature_count: usize, config: BoostConfig) -> Result<Ensemble> {
        if class_count < 2 {
            return Err(Error::InvalidConfig(format!(
                "class_count must be >= 2, got {}",
                class_count
            )));
        }
        if feature_count < 1 {
            return Err(Error::InvalidConfig("feature_count must be >= 1".into()));
        }
        config.validate()?;
        Ok(Ensemble {
            class_count,
            feature_count,
            config,
            rounds: Vec::new(),
        })
    }

    /// Fits an ensemble by second-order boosting on the softmax log-loss.
    ///
    /// Each round recomputes per-sample gradients and hessians from the
    /// current raw scores, grows one tree per class in class order, and adds
    /// learning_rate times each tree's outputs to that class's raw scores.
    /// Deterministic: same inputs, same ensemble, bit for bit.
    pub fn fit(
        features: &FeatureMatrix,
        labels: &[usize],
        class_count: usize,
        cfg: &BoostConfig,
    ) -> Result<Ensemble> {
        cfg.validate()?;
        let n = features.n_rows();
        if n < 2 {
            return Err(Error::InvalidData(format!(
                "need at least 2 samples to fit, got {}",
                n
            )));
        }
        if labels.len() != n {
            return Err(Error::InvalidData(format!(
                "{} labels for {} samples",
                labels.len(),
                n
            )));
        }
        if class_count < 2 {
            return Err(Error::InvalidConfig(format!(
                "class_count must be >= 2, got {}",
                class_count
            )));
        }
        for (i, &y) in labels.iter().enumerate() {
            if y >= class_count {
                return Err(Error::InvalidLabel(format!(
                    "label {} of sample {} out of range for {} classes",
                    y, i, class_count
                )));
            }
        }
        let first = labels[0];
        if labels.iter().all(|&y| y == first) {
            return Err(Error::InvalidData(
                "training labels contain a single class; need at least 2".into(),
            ));
        }

        let c_count = class_count;
        let mut raw = vec![cfg.base_score; n * c_count];
        let mut rounds = Vec::with_capacity(cfg.n_estimators);
        for _ in 0..cfg.n_estimators {
            // Gradients/hessians of every sample at the current raw scores.
            let mut gh_by_class = vec![Vec::with_capacity(n); c_count];
            for i in 0..n {
                let gh = softmax_grad_hess(&raw[i * c_count..(i + 1) * c_count], labels[i])?;
                for c in 0..c_count {
                    gh_by_class[c].push(gh[c]);
                }
            }
            let mut round = Vec::with_capacity(c_count);
            for (c, gh_c) in gh_by_class.iter().enumerate() {
                let tree = build_tree(features, gh_c, cfg)?;
                for i in 0..n {
                    raw[i * c_count + c] += cfg.learning_rate * tree.output(features.row(i));
                }
                round.push(tree);
            }
            rounds.push(round);
        }
        Ok(Ensemble {
            class_count: c_count,
            feature_count: features.n_cols(),
            config: cfg.clone(),
            rounds,
        })
    }

    /// Raw (pre-softmax) scores for one sample.
    pub fn predict_raw(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.feature_count {
            return Err(Error::InvalidData(format!(
                "sample has {} features, ensemble expects {}",
                features.len(),
                self.feature_count
            )));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature {} is {}", i, features[i])));
        }
        let mut raw = vec![self.config.base_score; self.class_count];
        for round in &self.rounds {
            for (c, tree) in round.iter().enumerate() {
                raw[c] += self.config.learning_rate * tree.output(features);
            }
        }
        Ok(raw)
    }

    /// Predicted class index and softmax probabilities. Argmax ties break
    /// to the lowest class index.
    pub fn predict(&self, features: &[f64]) -> Result<(usize, Vec<f64>)> {
        let raw = self.predict_raw(features)?;
        let probs = softmax_slice(&raw);
        let mut best = 0;
        for c in 1..probs.len() {
            if probs[c] > probs[best] {
                best = c;
            }
        }
        Ok((best, probs))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    /// Parses and structurally validates a serialized ensemble.
    pub fn from_json(json: &str) -> Result<Ensemble> {
        let ensemble: Ensemble =
            serde_json::from_str(json).map_err(|e| Error::Serialize(e.to_string()))?;
        ensemble.validate()?;
        Ok(ensemble)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::Serialize(format!(
                "class_count must be >= 2, got {}",
                self.class_count
            )));
        }
        if self.feature_count < 1 {
            return Err(Error::Serialize("feature_count must be >= 1".into()));
        }
        self.config
            .validate()
            .map_err(|e| Error::Serialize(e.to_string()))?;
        for (t, round) in self.rounds.iter().enumerate() {
            if round.len() != self.class_count {
                return Err(Error::Serialize(format!(
                    "round {} has {} trees, expected {}",
                    t,
                    round.len(),
                    self.class_count
                )));
            }
            for tree in round {
                tree.validate(self.feature_count)?;
            }
        }
        Ok(())
    }
}
