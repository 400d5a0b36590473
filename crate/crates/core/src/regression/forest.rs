use super::Matrix;
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Random forest hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `⌈p/3⌉`.
    pub mtry: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: 8, min_leaf: 5, mtry: None }
    }
}

impl ForestParams {
    pub fn resolved_mtry(&self, n_features: usize) -> usize {
        self.mtry.unwrap_or_else(|| n_features.div_ceil(3)).clamp(1, n_features.max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(v) => return *v,
                Node::Split { feature, threshold, left, right } => {
                    at = if row[*feature] <= *threshold { *left } else { *right }
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }
}

/// Bagged CART regression trees; the prediction is the mean over trees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub params: ForestParams,
    pub trees: Vec<RegressionTree>,
}

impl ForestModel {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Fits a forest. Tree `t` draws its bootstrap sample and split candidates
/// from stream `t` of `seed`, so the result does not depend on thread count.
pub fn fit_forest(features: &Matrix, targets: &[f64], params: &ForestParams, seed: u64) -> Result<ForestModel> {
    let n = features.n_rows();
    let needed = (2 * params.min_leaf).max(1);
    if n < needed {
        return Err(Error::TooFewSamples { needed, got: n });
    }
    if params.n_trees == 0 {
        return Err(Error::InvalidConfig("forest needs at least one tree".into()));
    }
    let builder = TreeBuilder {
        features,
        targets,
        min_leaf: params.min_leaf.max(1),
        max_depth: params.max_depth,
        mtry: params.resolved_mtry(features.n_cols()),
    };
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, t as u64);
            let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            builder.build(sample, &mut rng)
        })
        .collect();
    Ok(ForestModel { params: params.clone(), trees })
}

struct TreeBuilder<'a> {
    features: &'a Matrix,
    targets: &'a [f64],
    min_leaf: usize,
    max_depth: usize,
    mtry: usize,
}

/// Per-tree working set. Bootstrap position `i` holds row `rows[i]`;
/// `order[f]` lists positions sorted by feature `f`, and every node owns the
/// same contiguous segment of each list.
struct Workspace {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    order: Vec<Vec<u32>>,
    goes_left: Vec<bool>,
    scratch: Vec<u32>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    sse: f64,
    position: usize,
}

impl TreeBuilder<'_> {
    fn build<R: Rng>(&self, rows: Vec<usize>, rng: &mut R) -> RegressionTree {
        let n = rows.len();
        let p = self.features.n_cols();
        let x: Vec<Vec<f64>> = (0..p).map(|f| rows.iter().map(|&r| self.features.get(r, f)).collect()).collect();
        let order = x
            .iter()
            .map(|col| {
                let mut o: Vec<u32> = (0..n as u32).collect();
                o.sort_unstable_by(|&a, &b| {
                    let (a, b) = (a as usize, b as usize);
                    col[a].total_cmp(&col[b]).then(rows[a].cmp(&rows[b])).then(a.cmp(&b))
                });
                o
            })
            .collect();
        let mut ws = Workspace {
            x,
            y: rows.iter().map(|&r| self.targets[r]).collect(),
            order,
            goes_left: vec![false; n],
            scratch: Vec::with_capacity(n),
        };
        let mut nodes = Vec::new();
        self.grow(&mut ws, 0, n, 0, rng, &mut nodes);
        RegressionTree { nodes }
    }

    fn grow<R: Rng>(
        &self,
        ws: &mut Workspace,
        start: usize,
        end: usize,
        depth: usize,
        rng: &mut R,
        nodes: &mut Vec<Node>,
    ) -> usize {
        let at = nodes.len();
        let len = end - start;
        let (sum, sum_sq) = ws.order[0][start..end].iter().fold((0.0, 0.0), |(s, q), &i| {
            let y = ws.y[i as usize];
            (s + y, q + y * y)
        });
        nodes.push(Node::Leaf(sum / len as f64));

        let parent_sse = sum_sq - sum * sum / len as f64;
        if depth >= self.max_depth || len < 2 * self.min_leaf || parent_sse <= 1e-12 * sum_sq.max(1.0) {
            return at;
        }
        let Some(best) = self.best_split(ws, start, end, sum, sum_sq, rng) else {
            return at;
        };
        if best.sse >= parent_sse {
            return at;
        }
        let mid = start + best.position;
        for (k, &i) in ws.order[best.feature][start..end].iter().enumerate() {
            ws.goes_left[i as usize] = k < best.position;
        }
        for f in 0..ws.order.len() {
            stable_partition(&mut ws.order[f][start..end], &ws.goes_left, &mut ws.scratch);
        }
        let left = self.grow(ws, start, mid, depth + 1, rng, nodes);
        let right = self.grow(ws, mid, end, depth + 1, rng, nodes);
        nodes[at] = Node::Split { feature: best.feature, threshold: best.threshold, left, right };
        at
    }

    fn best_split<R: Rng>(
        &self,
        ws: &Workspace,
        start: usize,
        end: usize,
        sum: f64,
        sum_sq: f64,
        rng: &mut R,
    ) -> Option<BestSplit> {
        let n = end - start;
        let p = ws.x.len();
        let mut best: Option<BestSplit> = None;
        for feature in sample(rng, p, self.mtry.min(p)).into_iter() {
            let col = &ws.x[feature];
            let segment = &ws.order[feature][start..end];
            let mut left_sum = 0.0;
            for k in 1..n {
                left_sum += ws.y[segment[k - 1] as usize];
                if k < self.min_leaf || n - k < self.min_leaf {
                    continue;
                }
                let lo = col[segment[k - 1] as usize];
                let hi = col[segment[k] as usize];
                if lo >= hi {
                    continue;
                }
                let right_sum = sum - left_sum;
                let sse = sum_sq - left_sum * left_sum / k as f64 - right_sum * right_sum / (n - k) as f64;
                if best.as_ref().is_none_or(|b| sse < b.sse) {
                    let mid = 0.5 * (lo + hi);
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some(BestSplit { feature, threshold, sse, position: k });
                }
            }
        }
        best
    }
}

/// Moves positions flagged in `goes_left` to the front, keeping relative order
/// on both sides.
fn stable_partition(segment: &mut [u32], goes_left: &[bool], scratch: &mut Vec<u32>) {
    scratch.clear();
    let mut write = 0;
    for k in 0..segment.len() {
        let i = segment[k];
        if goes_left[i as usize] {
            segment[write] = i;
            write += 1;
        } else {
            scratch.push(i);
        }
    }
    segment[write..].copy_from_slice(scratch);
}
