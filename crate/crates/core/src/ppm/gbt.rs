//! Gradient-boosted regression trees on squared loss.
//!
//! Each stage fits a depth-limited tree to the current residuals with exact
//! greedy splits; leaves hold the mean residual of their rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            n_trees: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_leaf: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "node")]
pub enum Node {
    Leaf {
        value: f64,
    },
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.nodes.len() == 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtFit {
    pub base: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

impl GbtFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    r: &'a [f64],
    params: &'a GbtParams,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Builder<'_> {
    fn mean(&self, rows: &[usize]) -> f64 {
        rows.iter().map(|&i| self.r[i]).sum::<f64>() / rows.len() as f64
    }

    fn best_split(&self, rows: &[usize]) -> Option<BestSplit> {
        let n = rows.len();
        let min_leaf = self.params.min_leaf.max(1);
        if n < 2 * min_leaf {
            return None;
        }
        let total: f64 = rows.iter().map(|&i| self.r[i]).sum();
        let base = total * total / n as f64;
        let p = self.x[rows[0]].len();
        let mut best: Option<BestSplit> = None;
        let mut order = rows.to_vec();
        for f in 0..p {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left = 0.0;
            for k in 1..n {
                left += self.r[order[k - 1]];
                if k < min_leaf || n - k < min_leaf {
                    continue;
                }
                let (lo, hi) = (self.x[order[k - 1]][f], self.x[order[k]][f]);
                if lo >= hi {
                    continue;
                }
                let right = total - left;
                let gain = left * left / k as f64 + right * right / (n - k) as f64 - base;
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mut t = lo + (hi - lo) / 2.0;
                    if t >= hi {
                        t = lo;
                    }
                    best = Some(BestSplit {
                        feature: f,
                        threshold: t,
                        gain,
                    });
                }
            }
        }
        let scale = rows.iter().map(|&i| self.r[i] * self.r[i]).sum::<f64>();
        best.filter(|b| b.gain > 1e-12 * scale.max(f64::MIN_POSITIVE))
    }

    fn grow(&mut self, rows: &[usize], depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: self.mean(rows),
        });
        if depth >= self.params.max_depth {
            return id;
        }
        let Some(split) = self.best_split(rows) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.x[i][split.feature] <= split.threshold);
        let left = self.grow(&l, depth + 1);
        let right = self.grow(&r, depth + 1);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

fn fit_tree(x: &[Vec<f64>], r: &[f64], params: &GbtParams) -> Tree {
    let mut b = Builder {
        x,
        r,
        params,
        nodes: Vec::new(),
    };
    let rows: Vec<usize> = (0..x.len()).collect();
    b.grow(&rows, 0);
    Tree { nodes: b.nodes }
}

pub fn fit_gbt(x: &[Vec<f64>], y: &[f64], params: &GbtParams) -> Result<GbtFit> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::validation(format!(
            "{n} feature rows for {} targets",
            y.len()
        )));
    }
    if n < 2 * params.min_leaf.max(1) {
        return Err(Error::validation(format!(
            "boosting with min_leaf {} needs at least {} rows, got {n}",
            params.min_leaf,
            2 * params.min_leaf.max(1)
        )));
    }
    if !(params.learning_rate > 0.0 && params.learning_rate.is_finite()) {
        return Err(Error::validation("learning rate must be positive"));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in boosting inputs".into()));
    }
    let base = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base; n];
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut resid = vec![0.0; n];
    for _ in 0..params.n_trees {
        for i in 0..n {
            resid[i] = y[i] - pred[i];
        }
        let t = fit_tree(x, &resid, params);
        for i in 0..n {
            pred[i] += params.learning_rate * t.predict(&x[i]);
        }
        trees.push(t);
    }
    Ok(GbtFit {
        base,
        learning_rate: params.learning_rate,
        trees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn train_rmse(f: &GbtFit, x: &[Vec<f64>], y: &[f64]) -> f64 {
        (x.iter()
            .zip(y)
            .map(|(r, t)| (f.predict(r) - t).powi(2))
            .sum::<f64>()
            / y.len() as f64)
            .sqrt()
    }

    #[test]
    fn no_trees_predicts_mean() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let p = GbtParams {
            n_trees: 0,
            ..Default::default()
        };
        let f = fit_gbt(&x, &y, &p).unwrap();
        assert_eq!(f.predict(&[100.0]), 4.5);
    }

    #[test]
    fn step_function_converges_geometrically() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| if i < 10 { 0.0 } else { 1.0 }).collect();
        let p = GbtParams {
            n_trees: 200,
            max_depth: 1,
            learning_rate: 0.1,
            min_leaf: 1,
        };
        let f = fit_gbt(&x, &y, &p).unwrap();
        // residual after m stages is 0.5 * 0.9^m
        let bound = 0.5 * 0.9f64.powi(200) + 1e-12;
        assert!(train_rmse(&f, &x, &y) <= bound);
    }

    #[test]
    fn constant_target_gives_zero_leaves() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let f = fit_gbt(&x, &[2.0; 12], &GbtParams::default()).unwrap();
        assert!(f
            .trees
            .iter()
            .all(|t| t.is_leaf() && t.nodes[0] == Node::Leaf { value: 0.0 }));
    }

    #[test]
    fn identical_rows_make_single_leaves() {
        let x = vec![vec![1.0, 1.0]; 12];
        let y: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let f = fit_gbt(&x, &y, &GbtParams::default()).unwrap();
        assert!(f.trees.iter().all(Tree::is_leaf));
    }

    #[test]
    fn too_few_rows() {
        let x = vec![vec![1.0]; 9];
        assert!(fit_gbt(&x, &[0.0; 9], &GbtParams::default()).is_err());
    }
}
