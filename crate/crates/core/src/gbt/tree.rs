//! Regression trees grown by exact greedy split search.

use super::{BoostConfig, FeatureMatrix, GradHess};
use crate::error::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Optimal leaf weight: -grad_sum / (hess_sum + lambda).
///
/// This is the closed-form minimizer of the second-order leaf objective
/// g*w + (h + lambda)*w^2/2. Errors if the denominator is not positive.
pub fn leaf_weight(grad_sum: f64, hess_sum: f64, lambda: f64) -> Result<f64> {
    let denom = hess_sum + lambda;
    if !(denom > 0.0) {
        return Err(Error::DegenerateLeaf(format!(
            "hess_sum + lambda = {} must be positive",
            denom
        )));
    }
    Ok(-grad_sum / denom)
}

/// Structure score of a fixed tree shape with the given per-leaf stats:
/// -1/2 * sum_j G_j^2 / (H_j + lambda) + gamma * T. Lower is better.
pub fn structure_score(leaf_stats: &[(f64, f64)], lambda: f64, gamma: f64) -> Result<f64> {
    if leaf_stats.is_empty() {
        return Err(Error::InvalidData("structure score needs at least one leaf".into()));
    }
    let mut acc = 0.0;
    for &(g, h) in leaf_stats {
        let denom = h + lambda;
        if !(denom > 0.0) {
            return Err(Error::DegenerateLeaf(format!(
                "hess_sum + lambda = {} must be positive",
                denom
            )));
        }
        acc += g * g / denom;
    }
    Ok(-0.5 * acc + gamma * leaf_stats.len() as f64)
}

/// Gain of splitting one leaf into (left, right), each given as
/// (grad_sum, hess_sum):
/// 1/2 * [G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - (G_L+G_R)^2/(H_L+H_R+lambda)] - gamma.
///
/// Equals the structure-score decrease from performing the split.
pub fn split_gain(left: (f64, f64), right: (f64, f64), lambda: f64, gamma: f64) -> Result<f64> {
    let (gl, hl) = left;
    let (gr, hr) = right;
    let dl = hl + lambda;
    let dr = hr + lambda;
    let dp = hl + hr + lambda;
    if !(dl > 0.0) || !(dr > 0.0) || !(dp > 0.0) {
        return Err(Error::DegenerateLeaf(
            "split sides need hess_sum + lambda > 0".into(),
        ));
    }
    let g = gl + gr;
    Ok(0.5 * (gl * gl / dl + gr * gr / dr - g * g / dp) - gamma)
}

/// One tree node. Trees are stored as a flat list with `nodes[0]` the root;
/// split nodes hold child indices into that list. Samples with
/// feature < threshold go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        weight: f64,
    },
}

/// A single regression tree over a fixed feature width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Routes one sample from the root to a leaf and returns its weight.
    pub fn output(&self, features: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { weight } => return weight,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if features[feature] < threshold { left } else { right };
                }
            }
        }
    }

    /// Number of edges on the longest root-to-leaf path. A lone leaf is 0.
    pub fn depth(&self) -> usize {
        self.depth_from(0)
    }

    fn depth_from(&self, at: usize) -> usize {
        match self.nodes[at] {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => {
                1 + self.depth_from(left).max(self.depth_from(right))
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    /// Structural checks for trees rebuilt from serialized form: child
    /// indices in bounds, every feature index within `width`, all floats
    /// finite, and the node graph reachable from the root without cycles.
    pub fn validate(&self, width: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Serialize("tree has no nodes".into()));
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(at) = stack.pop() {
            if at >= self.nodes.len() {
                return Err(Error::Serialize(format!("node index {} out of bounds", at)));
            }
            if seen[at] {
                return Err(Error::Serialize(format!("node {} reachable twice", at)));
            }
            seen[at] = true;
            match self.nodes[at] {
                Node::Leaf { weight } => {
                    if !weight.is_finite() {
                        return Err(Error::Serialize(format!("leaf {} weight {}", at, weight)));
                    }
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if feature >= width {
                        return Err(Error::Serialize(format!(
                            "split {} uses feature {} but width is {}",
                            at, feature, width
                        )));
                    }
                    if !threshold.is_finite() {
                        return Err(Error::Serialize(format!(
                            "split {} threshold {}",
                            at, threshold
                        )));
                    }
                    stack.push(left);
                    stack.push(right);
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Grows one tree on (features, grad/hess) by exact greedy search.
///
/// At each node every feature is scanned in ascending index order and every
/// midpoint between consecutive distinct sorted values is evaluated; the
/// best strictly positive gain wins, ties broken toward the lowest feature
/// index then the lowest threshold. Candidates whose child hessian sum falls
/// below `min_child_hessian` are skipped. Recursion stops at `max_depth`,
/// when no candidate has positive gain, or when a node is constant in every
/// feature.
pub fn build_tree(features: &FeatureMatrix, gh: &[GradHess], cfg: &BoostConfig) -> Result<Tree> {
    cfg.validate()?;
    if features.n_rows() == 0 {
        return Err(Error::InvalidData("cannot grow a tree on zero samples".into()));
    }
    if gh.len() != features.n_rows() {
        return Err(Error::InvalidData(format!(
            "{} grad/hess entries for {} samples",
            gh.len(),
            features.n_rows()
        )));
    }
    for (i, x) in gh.iter().enumerate() {
        if !x.grad.is_finite() || !x.hess.is_finite() {
            return Err(Error::NonFinite(format!("grad/hess of sample {}", i)));
        }
        if x.hess < 0.0 {
            return Err(Error::InvalidData(format!(
                "sample {} has negative hessian {}",
                i, x.hess
            )));
        }
    }
    let indices: Vec<usize> = (0..features.n_rows()).collect();
    let mut nodes = Vec::new();
    grow(&mut nodes, features, gh, indices, 0, cfg)?;
    Ok(Tree { nodes })
}

fn grow(
    nodes: &mut Vec<Node>,
    features: &FeatureMatrix,
    gh: &[GradHess],
    indices: Vec<usize>,
    depth: usize,
    cfg: &BoostConfig,
) -> Result<usize> {
    let grad_sum: f64 = indices.iter().map(|&i| gh[i].grad).sum();
    let hess_sum: f64 = indices.iter().map(|&i| gh[i].hess).sum();

    let candidate = if depth < cfg.max_depth {
        best_split(features, gh, &indices, cfg)
    } else {
        None
    };

    match candidate {
        None => {
            let weight = leaf_weight(grad_sum, hess_sum, cfg.lambda)?;
            nodes.push(Node::Leaf { weight });
            Ok(nodes.len() - 1)
        }
        Some(c) => {
            let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
                .iter()
                .partition(|&&i| features.row(i)[c.feature] < c.threshold);
            debug_assert!(!left_idx.is_empty() && !right_idx.is_empty());
            let me = nodes.len();
            nodes.push(Node::Split {
                feature: c.feature,
                threshold: c.threshold,
                left: 0,
                right: 0,
            });
            let l = grow(nodes, features, gh, left_idx, depth + 1, cfg)?;
            let r = grow(nodes, features, gh, right_idx, depth + 1, cfg)?;
            if let Node::Split { left, right, .. } = &mut nodes[me] {
                *left = l;
                *right = r;
            }
            Ok(me)
        }
    }
}

/// Best candidate over all features, or None when no split has gain > 0.
/// Feature scans run in parallel but are combined sequentially in feature
/// order, so the result never depends on thread count.
fn best_split(
    features: &FeatureMatrix,
    gh: &[GradHess],
    indices: &[usize],
    cfg: &BoostConfig,
) -> Option<Candidate> {
    if indices.len() < 2 {
        return None;
    }
    let per_feature: Vec<Option<Candidate>> = (0..features.n_cols())
        .into_par_iter()
        .map(|f| best_split_on_feature(features, gh, indices, f, cfg))
        .collect();
    let mut best: Option<Candidate> = None;
    for cand in per_feature.into_iter().flatten() {
        // Strict > keeps the earlier (lower feature index) candidate on ties;
        // within a feature the scan already kept the lowest threshold.
        match best {
            Some(b) if cand.gain <= b.gain => {}
            _ => best = Some(cand),
        }
    }
    best.filter(|c| c.gain > 0.0)
}

fn best_split_on_feature(
    features: &FeatureMatrix,
    gh: &[GradHess],
    indices: &[usize],
    feature: usize,
    cfg: &BoostConfig,
) -> Option<Candidate> {
    let mut vals: Vec<(f64, f64, f64)> = indices
        .iter()
        .map(|&i| (features.row(i)[feature], gh[i].grad, gh[i].hess))
        .collect();
    vals.sort_by(|a, b| a.0.total_cmp(&b.0));

    let total_g: f64 = vals.iter().map(|v| v.1).sum();
    let total_h: f64 = vals.iter().map(|v| v.2).sum();

    let mut best: Option<Candidate> = None;
    let mut left_g = 0.0;
    let mut left_h = 0.0;
    for w in 0..vals.len() - 1 {
        left_g += vals[w].1;
        left_h += vals[w].2;
        // Split points exist only between distinct consecutive values.
        if vals[w].0 == vals[w + 1].0 {
            continue;
        }
        let right_g = total_g - left_g;
        let right_h = total_h - left_h;
        if left_h < cfg.min_child_hessian || right_h < cfg.min_child_hessian {
            continue;
        }
        let threshold = 0.5 * (vals[w].0 + vals[w + 1].0);
        // Midpoint of adjacent f64 values can round onto the lower value,
        // which would leave the left side empty under `< threshold`.
        if threshold <= vals[w].0 || threshold > vals[w + 1].0 {
            continue;
        }
        let gain = match split_gain((left_g, left_h), (right_g, right_h), cfg.lambda, cfg.gamma) {
            Ok(g) => g,
            Err(_) => continue,
        };
        match best {
            Some(b) if gain <= b.gain => {}
            _ => {
                best = Some(Candidate {
                    gain,
                    feature,
                    threshold,
                })
            }
        }
    }
    best
}
