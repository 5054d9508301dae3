//! Gradient-boosted regression trees with squared loss.
//!
//! Each round fits one depth-limited tree to the current residuals by exact
//! greedy search over all midpoints between distinct feature values. A split
//! is scored by the usual second-order gain with an L2 penalty `lambda` on
//! leaf weights; with squared loss every hessian is 1, so a leaf over rows
//! `S` takes the value `sum_{i in S} residual_i / (|S| + lambda)`.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtHyperParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// L2 penalty on leaf weights.
    pub l2_leaf: f64,
    /// Minimum number of (sampled) rows in each child of a split.
    pub min_child_weight: f64,
    /// Fraction of rows drawn without replacement for each round.
    pub subsample: f64,
}

impl Default for GbtHyperParams {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 4,
            learning_rate: 0.1,
            l2_leaf: 1.0,
            min_child_weight: 1.0,
            subsample: 0.8,
        }
    }
}

impl GbtHyperParams {
    pub fn validate(&self) -> Result<()> {
        let lr_ok = self.learning_rate > 0.0 && self.learning_rate <= 1.0;
        let ss_ok = self.subsample > 0.0 && self.subsample <= 1.0;
        if !lr_ok || !ss_ok || !(self.l2_leaf >= 0.0) || !(self.min_child_weight >= 0.0) {
            return Err(Error::InvalidParams(format!("invalid GBT hyperparameters {self:?}")));
        }
        Ok(())
    }
}

/// A regression tree node. Rows with `x[feature] < threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    pub fn eval(&self, row: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if row[*feature] < *threshold { left } else { right };
                }
            }
        }
    }

    /// Index path to the leaf reached by `row`, as a bit string (left = 0).
    pub fn leaf_id(&self, row: &[f64]) -> u64 {
        let mut node = self;
        let mut id = 1u64;
        while let Node::Split {
            feature,
            threshold,
            left,
            right,
        } = node
        {
            let go_left = row[*feature] < *threshold;
            id = (id << 1) | u64::from(!go_left);
            node = if go_left { left } else { right };
        }
        id
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf { .. })
    }

    fn for_each_leaf(&self, f: &mut impl FnMut(f64)) {
        match self {
            Node::Leaf { value } => f(*value),
            Node::Split { left, right, .. } => {
                left.for_each_leaf(f);
                right.for_each_leaf(f);
            }
        }
    }
}

/// Fitted ensemble. Predictions are `base_prediction + learning_rate * sum(tree(x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub n_features: usize,
    pub base_prediction: f64,
    pub learning_rate: f64,
    pub trees: Vec<Node>,
}

impl GbtModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.base_prediction
            + self.learning_rate * self.trees.iter().map(|t| t.eval(row)).sum::<f64>()
    }

    pub fn predict<R: AsRef<[f64]>>(&self, x: &[R]) -> Result<Vec<f64>> {
        x.iter()
            .map(|row| {
                let row = row.as_ref();
                if row.len() != self.n_features {
                    return Err(Error::DimensionMismatch {
                        expected: self.n_features,
                        got: row.len(),
                    });
                }
                Ok(self.predict_row(row))
            })
            .collect()
    }

    pub fn max_depth(&self) -> usize {
        self.trees.iter().map(Node::depth).max().unwrap_or(0)
    }

    pub fn leaves_finite(&self) -> bool {
        let mut ok = true;
        for t in &self.trees {
            t.for_each_leaf(&mut |v| ok &= v.is_finite());
        }
        ok
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Caps every label at `ceiling`.
pub fn clip_labels(y: &[f64], ceiling: f64) -> Vec<f64> {
    y.iter().map(|&v| v.min(ceiling)).collect()
}

pub fn fit<R: AsRef<[f64]>>(
    x: &[R],
    y: &[f64],
    hyper: &GbtHyperParams,
    seed: u64,
) -> Result<GbtModel> {
    fit_with_trace(x, y, hyper, seed).map(|(m, _)| m)
}

/// Like [`fit`], also returning the training RMSE after each round.
pub fn fit_with_trace<R: AsRef<[f64]>>(
    x: &[R],
    y: &[f64],
    hyper: &GbtHyperParams,
    seed: u64,
) -> Result<(GbtModel, Vec<f64>)> {
    hyper.validate()?;
    let n = x.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite training label".into()));
    }
    let d = x[0].as_ref().len();
    if d == 0 {
        return Err(Error::InvalidInput("no features".into()));
    }
    let mut cols = vec![vec![0.0; n]; d];
    for (i, row) in x.iter().enumerate() {
        let row = row.as_ref();
        if row.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite feature in row {i}")));
        }
        for (f, v) in row.iter().enumerate() {
            cols[f][i] = *v;
        }
    }
    let sorted: Vec<Vec<usize>> = cols
        .iter()
        .map(|c| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| c[a].total_cmp(&c[b]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let base = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base; n];
    let mut trees = Vec::with_capacity(hyper.n_trees);
    let mut trace = Vec::with_capacity(hyper.n_trees);
    let sample_size = ((hyper.subsample * n as f64).round() as usize).clamp(1, n);
    let builder = TreeBuilder {
        cols: &cols,
        sorted: &sorted,
        hyper,
    };
    let mut in_sample = vec![true; n];
    for round in 0..hyper.n_trees {
        if sample_size < n {
            let mut rng = seed::rng(seed::derive(seed, &[seed::TAG_FIT, round as u64]));
            in_sample.iter_mut().for_each(|s| *s = false);
            for i in index::sample(&mut rng, n, sample_size) {
                in_sample[i] = true;
            }
        }
        let residuals: Vec<f64> = y.iter().zip(&pred).map(|(t, p)| t - p).collect();
        let tree = builder.build(&residuals, &in_sample);
        for (i, p) in pred.iter_mut().enumerate() {
            *p += hyper.learning_rate * tree.eval(&row_of(&cols, i));
        }
        trees.push(tree);
        trace.push(rmse(y, &pred));
    }
    Ok((
        GbtModel {
            n_features: d,
            base_prediction: base,
            learning_rate: hyper.learning_rate,
            trees,
        },
        trace,
    ))
}

fn row_of(cols: &[Vec<f64>], i: usize) -> Vec<f64> {
    cols.iter().map(|c| c[i]).collect()
}

pub fn rmse(y: &[f64], pred: &[f64]) -> f64 {
    (y.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64).sqrt()
}

struct TreeBuilder<'a> {
    cols: &'a [Vec<f64>],
    sorted: &'a [Vec<usize>],
    hyper: &'a GbtHyperParams,
}

struct ArenaNode {
    sum: f64,
    count: f64,
    sum_sq: f64,
    split: Option<(usize, f64, usize, usize)>,
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

const CLOSED: usize = usize::MAX;

impl TreeBuilder<'_> {
    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.hyper.l2_leaf)
    }

    fn build(&self, residuals: &[f64], in_sample: &[bool]) -> Node {
        let n = residuals.len();
        let mut arena = vec![ArenaNode {
            sum: 0.0,
            count: 0.0,
            sum_sq: 0.0,
            split: None,
        }];
        let mut node_of = vec![CLOSED; n];
        for i in 0..n {
            if in_sample[i] {
                node_of[i] = 0;
                arena[0].sum += residuals[i];
                arena[0].count += 1.0;
                arena[0].sum_sq += residuals[i] * residuals[i];
            }
        }
        let mut open: Vec<usize> = vec![0];
        for _depth in 0..self.hyper.max_depth {
            if open.is_empty() {
                break;
            }
            // slot in `open` for each arena id
            let mut slot = vec![CLOSED; arena.len()];
            for (s, &id) in open.iter().enumerate() {
                slot[id] = s;
            }
            let mut best: Vec<Option<Candidate>> = vec![None; open.len()];
            for (f, order) in self.sorted.iter().enumerate() {
                let col = &self.cols[f];
                let mut left_g = vec![0.0; open.len()];
                let mut left_h = vec![0.0; open.len()];
                let mut last_x = vec![f64::NAN; open.len()];
                for &i in order {
                    let id = node_of[i];
                    if id == CLOSED || slot[id] == CLOSED {
                        continue;
                    }
                    let s = slot[id];
                    let xi = col[i];
                    if left_h[s] > 0.0 && xi > last_x[s] {
                        let node = &arena[id];
                        let (gl, hl) = (left_g[s], left_h[s]);
                        let (gr, hr) = (node.sum - gl, node.count - hl);
                        if hl >= self.hyper.min_child_weight && hr >= self.hyper.min_child_weight {
                            let gain = self.score(gl, hl) + self.score(gr, hr)
                                - self.score(node.sum, node.count);
                            let min_gain = 1e-9 * node.sum_sq;
                            if gain > min_gain && best[s].is_none_or(|b| gain > b.gain) {
                                let mut threshold = 0.5 * (last_x[s] + xi);
                                if threshold <= last_x[s] {
                                    threshold = xi;
                                }
                                best[s] = Some(Candidate {
                                    gain,
                                    feature: f,
                                    threshold,
                                });
                            }
                        }
                    }
                    left_g[s] += residuals[i];
                    left_h[s] += 1.0;
                    last_x[s] = xi;
                }
            }
            let mut next_open = Vec::new();
            for (s, &id) in open.iter().enumerate() {
                if let Some(c) = best[s] {
                    let l = arena.len();
                    for _ in 0..2 {
                        arena.push(ArenaNode {
                            sum: 0.0,
                            count: 0.0,
                            sum_sq: 0.0,
                            split: None,
                        });
                    }
                    arena[id].split = Some((c.feature, c.threshold, l, l + 1));
                    next_open.extend([l, l + 1]);
                }
            }
            for i in 0..n {
                let id = node_of[i];
                if id == CLOSED || slot[id] == CLOSED {
                    continue;
                }
                match arena[id].split {
                    Some((f, thr, l, r)) => {
                        let child = if self.cols[f][i] < thr { l } else { r };
                        node_of[i] = child;
                        arena[child].sum += residuals[i];
                        arena[child].count += 1.0;
                        arena[child].sum_sq += residuals[i] * residuals[i];
                    }
                    None => node_of[i] = CLOSED,
                }
            }
            open = next_open;
        }
        self.materialise(&arena, 0)
    }

    fn materialise(&self, arena: &[ArenaNode], id: usize) -> Node {
        let node = &arena[id];
        match node.split {
            Some((feature, threshold, l, r)) => Node::Split {
                feature,
                threshold,
                left: Box::new(self.materialise(arena, l)),
                right: Box::new(self.materialise(arena, r)),
            },
            None => Node::Leaf {
                value: if node.count + self.hyper.l2_leaf > 0.0 {
                    node.sum / (node.count + self.hyper.l2_leaf)
                } else {
                    0.0
                },
            },
        }
    }
}

/// K-fold cross-validated RMSE. Rows are assigned to folds by a seeded
/// shuffle.
pub fn cross_val_rmse<R: AsRef<[f64]> + Sync>(
    x: &[R],
    y: &[f64],
    hyper: &GbtHyperParams,
    folds: usize,
    seed: u64,
) -> Result<f64> {
    let n = x.len();
    if folds < 2 || n < 2 * folds {
        return Err(Error::InsufficientData {
            needed: 2 * folds.max(2),
            got: n,
        });
    }
    let mut rng = seed::rng(seed::derive(seed, &[seed::TAG_FIT, u64::MAX]));
    let perm = index::sample(&mut rng, n, n).into_vec();
    let fold_ids: Vec<usize> = (0..folds).collect();
    let per_fold = crate::par::map(&fold_ids, |&k| -> Result<f64> {
        let (mut tx, mut ty, mut vx, mut vy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (pos, &i) in perm.iter().enumerate() {
            if pos % folds == k {
                vx.push(x[i].as_ref());
                vy.push(y[i]);
            } else {
                tx.push(x[i].as_ref());
                ty.push(y[i]);
            }
        }
        let model = fit(&tx, &ty, hyper, seed::derive(seed, &[k as u64]))?;
        let pred = model.predict(&vx)?;
        Ok(vy.iter().zip(&pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
    });
    let mut sq = 0.0;
    for s in per_fold {
        sq += s?;
    }
    Ok((sq / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn exact_hyper(depth: usize) -> GbtHyperParams {
        GbtHyperParams {
            n_trees: 1,
            max_depth: depth,
            learning_rate: 1.0,
            l2_leaf: 0.0,
            min_child_weight: 1.0,
            subsample: 1.0,
        }
    }

    #[test]
    fn clipping() {
        assert_eq!(clip_labels(&[0.3, 2.7, 0.9], 1.0), vec![0.3, 1.0, 0.9]);
        assert_eq!(clip_labels(&[0.1, 0.5], 1.0), vec![0.1, 0.5]);
        assert_eq!(clip_labels(&[5.0, 5.0, 5.0], 1.0), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn constant_labels_give_trivial_trees() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i * 7 % 5) as f64]).collect();
        let y = vec![0.1; 30];
        let model = fit(&x, &y, &GbtHyperParams::default(), 3).unwrap();
        assert!(model.trees.iter().all(Node::is_leaf));
        for p in model.predict(&x).unwrap() {
            assert_abs_diff_eq!(p, 0.1, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_point_exact_fit() {
        let x = vec![vec![0.0], vec![1.0]];
        let model = fit(&x, &[0.0, 1.0], &exact_hyper(1), 0).unwrap();
        assert_eq!(model.predict(&x).unwrap(), vec![0.0, 1.0]);
        match &model.trees[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 0.5);
            }
            leaf => panic!("expected a split, got {leaf:?}"),
        }
    }

    #[test]
    fn zero_trees_predict_base() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        let hyper = GbtHyperParams { n_trees: 0, ..Default::default() };
        let model = fit(&x, &[1.0, 2.0, 6.0], &hyper, 0).unwrap();
        assert_eq!(model.predict(&[[10.0], [-4.0]]).unwrap(), vec![3.0, 3.0]);
    }

    #[test]
    fn errors() {
        let hyper = GbtHyperParams::default();
        assert!(matches!(fit(&[vec![1.0]], &[1.0], &hyper, 0), Err(Error::InsufficientData { .. })));
        assert!(fit(&[vec![1.0], vec![2.0]], &[1.0, f64::NAN], &hyper, 0).is_err());
        let model = fit(&[vec![1.0, 0.0], vec![2.0, 1.0]], &[1.0, 2.0], &hyper, 0).unwrap();
        assert!(matches!(model.predict(&[vec![1.0]]), Err(Error::DimensionMismatch { expected: 2, got: 1 })));
        let bad = GbtHyperParams { learning_rate: 0.0, ..hyper };
        assert!(fit(&[vec![1.0], vec![2.0]], &[1.0, 2.0], &bad, 0).is_err());
    }

    #[test]
    fn lowest_feature_wins_ties() {
        // both features separate the labels equally well
        let x = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let model = fit(&x, &[0.0, 1.0], &exact_hyper(1), 0).unwrap();
        assert!(matches!(model.trees[0], Node::Split { feature: 0, .. }));
    }

    fn toy_data(n: usize) -> (Vec<[f64; 3]>, Vec<f64>) {
        let pts = crate::sobol::sobol_points(3, n, 1).unwrap();
        let x: Vec<[f64; 3]> = pts.iter().map(|p| [p[0], p[1], p[2]]).collect();
        let y = x
            .iter()
            .map(|p| (p[0] - 0.3).powi(2) + (3.0 * p[1]).sin() * 0.2 + p[2] * p[0])
            .collect();
        (x, y)
    }

    #[test]
    fn json_round_trip_and_depth_limit() {
        let (x, y) = toy_data(200);
        let hyper = GbtHyperParams { n_trees: 20, max_depth: 3, ..Default::default() };
        let model = fit(&x, &y, &hyper, 1).unwrap();
        assert!(model.max_depth() <= 3);
        assert!(model.leaves_finite());
        let back = GbtModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
        assert!(model.to_json().unwrap().contains("\"kind\": \"split\""));
    }

    #[test]
    fn deterministic_given_seed() {
        let (x, y) = toy_data(300);
        let hyper = GbtHyperParams { n_trees: 30, ..Default::default() };
        assert_eq!(fit(&x, &y, &hyper, 9).unwrap(), fit(&x, &y, &hyper, 9).unwrap());
        assert_ne!(fit(&x, &y, &hyper, 9).unwrap(), fit(&x, &y, &hyper, 10).unwrap());
    }

    #[test]
    fn piecewise_constant_predictions() {
        let (x, y) = toy_data(256);
        let model = fit(&x, &y, &GbtHyperParams { n_trees: 15, ..Default::default() }, 2).unwrap();
        let a = [0.41, 0.52, 0.13];
        let b = [0.4100001, 0.5200001, 0.1300001];
        let same = model.trees.iter().all(|t| t.leaf_id(&a) == t.leaf_id(&b));
        if same {
            assert_eq!(model.predict_row(&a), model.predict_row(&b));
        }
    }

    #[test]
    fn cross_validation_runs() {
        let (x, y) = toy_data(200);
        let hyper = GbtHyperParams { n_trees: 50, ..Default::default() };
        let cv = cross_val_rmse(&x, &y, &hyper, 5, 0).unwrap();
        let spread = {
            let m = y.iter().sum::<f64>() / y.len() as f64;
            rmse(&y, &vec![m; y.len()])
        };
        assert!(cv < spread, "cv {cv} vs spread {spread}");
        assert!(cross_val_rmse(&x[..5], &y[..5], &hyper, 5, 0).is_err());
    }

    proptest! {
        #[test]
        fn training_rmse_non_increasing(seed in any::<u64>(), lr in 0.05..1.0f64, depth in 1usize..5) {
            let (x, mut y) = toy_data(120);
            let mut rng = crate::seed::rng(seed);
            use rand::Rng;
            for v in y.iter_mut() { *v += rng.random_range(-0.05..0.05); }
            let hyper = GbtHyperParams { n_trees: 25, max_depth: depth, learning_rate: lr,
                l2_leaf: 0.0, min_child_weight: 1.0, subsample: 1.0 };
            let (_, trace) = fit_with_trace(&x, &y, &hyper, seed).unwrap();
            for w in trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12, "{:?}", trace);
            }
        }

        #[test]
        fn predict_is_row_wise(perm_seed in any::<u64>()) {
            let (x, y) = toy_data(100);
            let model = fit(&x, &y, &GbtHyperParams { n_trees: 10, ..Default::default() }, 0).unwrap();
            let preds = model.predict(&x).unwrap();
            let mut rng = crate::seed::rng(perm_seed);
            let perm = index::sample(&mut rng, x.len(), x.len()).into_vec();
            let shuffled: Vec<[f64; 3]> = perm.iter().map(|&i| x[i]).collect();
            let sp = model.predict(&shuffled).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                prop_assert_eq!(sp[k], preds[i]);
            }
        }
    }
}
