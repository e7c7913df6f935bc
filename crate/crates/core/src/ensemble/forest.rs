//! Random forest of Gini-split decision trees with bootstrap resampling.

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};

pub const FOREST_FORMAT: &str = "spikeforge.forest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Features tried per split; `None` uses `floor(sqrt(n_features))`.
    pub max_features: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 4,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf {
        class: Label,
    },
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Root at index 0.
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(class: Label) -> Self {
        Self {
            nodes: vec![Node::Leaf { class }],
        }
    }

    pub fn predict(&self, x: ArrayView1<f64>) -> Label {
        let mut idx = 0;
        loop {
            match self.nodes[idx] {
                Node::Leaf { class } => return class,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => idx = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], idx: usize) -> usize {
            match nodes[idx] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub n_features: usize,
    pub max_depth: usize,
    pub seed: u64,
    pub trees: Vec<Tree>,
}

/// `1 - sum_k p_k^2` over class counts.
pub fn gini(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    1.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 / n as f64;
            p * p
        })
        .sum::<f64>()
}

fn majority(counts: [usize; 2]) -> Label {
    Label::from(counts[1] > counts[0])
}

fn class_counts(labels: &[Label], idx: &[usize]) -> [usize; 2] {
    let mut c = [0usize; 2];
    for &i in idx {
        c[labels[i] as usize] += 1;
    }
    c
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [Label],
    max_depth: usize,
    max_features: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    /// Best (feature, threshold) among a random feature subset, by weighted
    /// child impurity; `None` when no split reduces impurity.
    fn best_split(&self, idx: &[usize], rng: &mut Rng) -> Option<(usize, f64)> {
        let parent = class_counts(self.y, idx);
        let parent_gini = gini(&parent);
        let mut features: Vec<usize> = (0..self.x.ncols()).collect();
        rng.shuffle(&mut features);
        features.truncate(self.max_features);
        features.sort_unstable();
        let n = idx.len() as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        for &f in &features {
            let mut pairs: Vec<(f64, Label)> =
                idx.iter().map(|&i| (self.x[[i, f]], self.y[i])).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = [0usize; 2];
            for k in 0..pairs.len() - 1 {
                left[pairs[k].1 as usize] += 1;
                if pairs[k].0 == pairs[k + 1].0 {
                    continue;
                }
                let right = [parent[0] - left[0], parent[1] - left[1]];
                let nl = (k + 1) as f64;
                let impurity = (nl * gini(&left) + (n - nl) * gini(&right)) / n;
                if impurity < parent_gini - 1e-12 && best.map_or(true, |(b, _, _)| impurity < b) {
                    best = Some((impurity, f, 0.5 * (pairs[k].0 + pairs[k + 1].0)));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize, rng: &mut Rng) -> usize {
        let counts = class_counts(self.y, &idx);
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf {
            class: majority(counts),
        });
        if depth >= self.max_depth || counts[0] == 0 || counts[1] == 0 {
            return at;
        }
        let Some((feature, threshold)) = self.best_split(&idx, rng) else {
            return at;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.x[[i, feature]] <= threshold);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[at] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        at
    }
}

impl ForestModel {
    pub fn fit<'a>(
        x: ArrayView2<'a, f64>,
        y: &'a [Label],
        cfg: &ForestConfig,
        seed: u64,
    ) -> Result<Self> {
        let n = x.nrows();
        if n != y.len() {
            return Err(Error::shape(format!(
                "{n} feature rows for {} labels",
                y.len()
            )));
        }
        if n < 2 {
            return Err(Error::arg("forest needs at least two samples"));
        }
        if y.iter().any(|&c| c > 1) {
            return Err(Error::arg("forest labels must be 0 or 1"));
        }
        if cfg.n_trees == 0 {
            return Err(Error::arg("forest needs at least one tree"));
        }
        let d = x.ncols();
        let max_features = cfg
            .max_features
            .unwrap_or(((d as f64).sqrt().floor() as usize).max(1))
            .clamp(1, d.max(1));
        if y.iter().all(|&c| c == y[0]) {
            log::warn!(
                "forest trained on a single class; every tree predicts {}",
                y[0]
            );
        }
        let trees = (0..cfg.n_trees)
            .map(|t| {
                let mut rng = Rng::new(derive_seed(seed, &[t as u64]));
                let sample: Vec<usize> = (0..n).map(|_| rng.below(n)).collect();
                let mut b = Builder {
                    x,
                    y,
                    max_depth: cfg.max_depth,
                    max_features,
                    nodes: Vec::new(),
                };
                b.grow(sample, 0, &mut rng);
                Tree { nodes: b.nodes }
            })
            .collect();
        Ok(Self {
            n_features: d,
            max_depth: cfg.max_depth,
            seed,
            trees,
        })
    }

    /// `[votes for 0, votes for 1]`.
    pub fn votes(&self, x: ArrayView1<f64>) -> Result<[usize; 2]> {
        if self.trees.is_empty() {
            return Err(Error::State("forest has not been fitted".into()));
        }
        if x.len() != self.n_features {
            return Err(Error::shape(format!(
                "{} features, forest expects {}",
                x.len(),
                self.n_features
            )));
        }
        let mut v = [0usize; 2];
        for t in &self.trees {
            v[t.predict(x) as usize] += 1;
        }
        Ok(v)
    }

    /// Majority vote; ties go to class 0.
    pub fn predict(&self, x: ArrayView1<f64>) -> Result<Label> {
        Ok(majority(self.votes(x)?))
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.trees {
            for node in &t.nodes {
                match *node {
                    Node::Leaf { class } if class > 1 => {
                        return Err(Error::Data(format!("leaf class {class} out of range")))
                    }
                    Node::Split {
                        feature,
                        left,
                        right,
                        ..
                    } if feature >= self.n_features
                        || left >= t.nodes.len()
                        || right >= t.nodes.len() =>
                    {
                        return Err(Error::Data("malformed tree node".into()))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}
