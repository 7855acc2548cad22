//! Gradient-boosted regression trees: exact pre-sorted splits, leaf-wise
//! best-first growth, a Tweedie objective with log link, row bagging, column
//! subsampling, early stopping, and split-gain feature importance.

use crate::error::{Error, Result};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Tweedie deviance with log link; 1 < power < 2.
    Tweedie { power: f64 },
    SquaredError,
}

impl Objective {
    fn validate(&self) -> Result<()> {
        if let Objective::Tweedie { power } = self {
            if !(*power > 1.0 && *power < 2.0) {
                return Err(Error::validation(format!(
                    "tweedie power must be in (1, 2), got {power}"
                )));
            }
        }
        Ok(())
    }

    /// Raw-score starting point: log link for tweedie, plain mean otherwise.
    fn init_score(&self, targets: &[f64]) -> f64 {
        let mean = targets.iter().sum::<f64>() / targets.len() as f64;
        match self {
            Objective::Tweedie { .. } => (mean + 1e-12).ln(),
            Objective::SquaredError => mean,
        }
    }

    /// Gradient and hessian of the per-row loss at raw score `f`.
    fn grad_hess(&self, y: f64, f: f64) -> (f64, f64) {
        match self {
            Objective::Tweedie { power } => {
                let a = ((1.0 - power) * f).exp();
                let b = ((2.0 - power) * f).exp();
                let g = -y * a + b;
                let h = -(1.0 - power) * y * a + (2.0 - power) * b;
                (g, h)
            }
            Objective::SquaredError => (f - y, 1.0),
        }
    }

    /// Loss whose gradient is [`grad_hess`](Self::grad_hess); used for the
    /// monotone-training-loss property.
    pub fn loss(&self, y: f64, f: f64) -> f64 {
        match self {
            Objective::Tweedie { power } => {
                -y * ((1.0 - power) * f).exp() / (1.0 - power)
                    + ((2.0 - power) * f).exp() / (2.0 - power)
            }
            Objective::SquaredError => 0.5 * (f - y) * (f - y),
        }
    }

    /// Maps a raw score to the prediction scale.
    fn link(&self, f: f64) -> f64 {
        match self {
            Objective::Tweedie { .. } => f.exp(),
            Objective::SquaredError => f,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbtConfig {
    pub rounds: usize,
    pub learning_rate: f64,
    pub objective: Objective,
    pub num_leaves: usize,
    pub min_data_in_leaf: usize,
    pub bagging_fraction: f64,
    pub bagging_freq: usize,
    pub colsample: f64,
    pub lambda_l1: f64,
    pub lambda_l2: f64,
    pub early_stopping_rounds: usize,
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        GbtConfig {
            rounds: 3600,
            learning_rate: 0.2,
            objective: Objective::Tweedie { power: 1.1 },
            num_leaves: 200,
            min_data_in_leaf: 30,
            bagging_fraction: 0.85,
            bagging_freq: 7,
            colsample: 0.85,
            lambda_l1: 0.5,
            lambda_l2: 0.5,
            early_stopping_rounds: 50,
            seed: 42,
        }
    }
}

impl GbtConfig {
    fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        if self.rounds < 1 {
            return Err(Error::validation("rounds must be ≥ 1"));
        }
        if self.num_leaves < 2 {
            return Err(Error::validation("num_leaves must be ≥ 2"));
        }
        for (name, v) in [
            ("bagging_fraction", self.bagging_fraction),
            ("colsample", self.colsample),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::validation(format!("{name} must be in (0, 1]")));
            }
        }
        if self.lambda_l1 < 0.0 || self.lambda_l2 < 0.0 {
            return Err(Error::validation("lambda penalties must be ≥ 0"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::validation("learning_rate must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        gain: f64,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    at = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Booster {
    pub objective: Objective,
    pub init_score: f64,
    pub num_features: usize,
    pub trees: Vec<Tree>,
}

/// soft-threshold: sign(g)·max(0, |g| − λ1).
fn threshold_l1(g: f64, lambda_l1: f64) -> f64 {
    g.signum() * (g.abs() - lambda_l1).max(0.0)
}

/// Structure score of a leaf holding statistics (G, H).
fn leaf_score(g: f64, h: f64, l1: f64, l2: f64) -> f64 {
    let t = threshold_l1(g, l1);
    t * t / (h + l2)
}

fn leaf_value(g: f64, h: f64, l1: f64, l2: f64) -> f64 {
    -threshold_l1(g, l1) / (h + l2)
}

#[derive(Debug, Clone, Copy)]
struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
    /// Rows ≤ threshold, in the node's sorted-by-feature order.
    left_count: usize,
}

/// Best split of one node by exhaustive scan over pre-sorted feature columns.
///
/// Candidates sit between distinct consecutive values; the stored threshold is
/// their midpoint unless rounding would reach the upper value, in which case
/// the lower value itself is used, so the `x ≤ threshold` predicate always
/// reproduces the training-time partition. Among equal gains the first
/// candidate wins: lowest feature index, then lowest threshold.
fn best_split(
    features: &Array2<f64>,
    rows: &[usize],
    grads: &[f64],
    hess: &[f64],
    columns: &[usize],
    config: &GbtConfig,
) -> Option<SplitChoice> {
    let (l1, l2) = (config.lambda_l1, config.lambda_l2);
    let mut g_total = 0.0;
    let mut h_total = 0.0;
    for &r in rows {
        g_total += grads[r];
        h_total += hess[r];
    }
    let parent_score = leaf_score(g_total, h_total, l1, l2);

    let mut best: Option<SplitChoice> = None;
    let mut order: Vec<usize> = rows.to_vec();
    for &feature in columns {
        // Stable sort from the node's row order, so tied values keep a
        // well-defined sequence independent of other features.
        order.copy_from_slice(rows);
        order.sort_by(|a, b| features[[*a, feature]].total_cmp(&features[[*b, feature]]));
        let mut g_left = 0.0;
        let mut h_left = 0.0;
        for (i, &r) in order.iter().enumerate().take(order.len() - 1) {
            g_left += grads[r];
            h_left += hess[r];
            let v = features[[r, feature]];
            let v_next = features[[order[i + 1], feature]];
            if v == v_next {
                continue;
            }
            let left_count = i + 1;
            let right_count = order.len() - left_count;
            if left_count < config.min_data_in_leaf || right_count < config.min_data_in_leaf {
                continue;
            }
            let gain = leaf_score(g_left, h_left, l1, l2)
                + leaf_score(g_total - g_left, h_total - h_left, l1, l2)
                - parent_score;
            if gain <= 0.0 {
                continue;
            }
            if best.map_or(true, |b| gain > b.gain) {
                let mid = v + (v_next - v) / 2.0;
                let threshold = if mid < v_next { mid } else { v };
                best = Some(SplitChoice {
                    feature,
                    threshold,
                    gain,
                    left_count,
                });
            }
        }
    }
    best
}

/// Pending leaf in the best-first queue, ordered by gain (ties: the node
/// created earlier wins, keeping growth deterministic).
struct Candidate {
    node: usize,
    created: usize,
    rows: Vec<usize>,
    choice: SplitChoice,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.choice.gain == other.choice.gain && self.created == other.created
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.choice
            .gain
            .total_cmp(&other.choice.gain)
            .then(other.created.cmp(&self.created))
    }
}

fn grow_tree(
    features: &Array2<f64>,
    rows: Vec<usize>,
    grads: &[f64],
    hess: &[f64],
    columns: &[usize],
    config: &GbtConfig,
) -> Tree {
    let (l1, l2) = (config.lambda_l1, config.lambda_l2);
    let make_leaf = |rows: &[usize]| {
        let mut g = 0.0;
        let mut h = 0.0;
        for &r in rows {
            g += grads[r];
            h += hess[r];
        }
        Node::Leaf {
            value: config.learning_rate * leaf_value(g, h, l1, l2),
        }
    };

    let mut tree = Tree {
        nodes: vec![make_leaf(&rows)],
    };
    let mut heap = BinaryHeap::new();
    let mut created = 0;
    if let Some(choice) = best_split(features, &rows, grads, hess, columns, config) {
        heap.push(Candidate {
            node: 0,
            created,
            rows,
            choice,
        });
    }

    let mut leaves = 1;
    while leaves < config.num_leaves {
        let Some(candidate) = heap.pop() else { break };
        let Candidate {
            node, rows, choice, ..
        } = candidate;

        // Re-partition by the stored predicate so training matches prediction.
        let mut left_rows = Vec::with_capacity(choice.left_count);
        let mut right_rows = Vec::with_capacity(rows.len() - choice.left_count);
        for r in rows {
            if features[[r, choice.feature]] <= choice.threshold {
                left_rows.push(r);
            } else {
                right_rows.push(r);
            }
        }

        let left = tree.nodes.len();
        let right = left + 1;
        tree.nodes.push(make_leaf(&left_rows));
        tree.nodes.push(make_leaf(&right_rows));
        tree.nodes[node] = Node::Split {
            feature: choice.feature,
            threshold: choice.threshold,
            left,
            right,
            gain: choice.gain,
        };
        leaves += 1;

        for (child, child_rows) in [(left, left_rows), (right, right_rows)] {
            if let Some(choice) = best_split(features, &child_rows, grads, hess, columns, config) {
                created += 1;
                heap.push(Candidate {
                    node: child,
                    created,
                    rows: child_rows,
                    choice,
                });
            }
        }
    }
    tree
}

fn validate_table(features: &Array2<f64>, targets: &[f64]) -> Result<()> {
    if features.nrows() == 0 || targets.is_empty() {
        return Err(Error::validation("gbt: empty training data"));
    }
    if features.nrows() != targets.len() {
        return Err(Error::validation(format!(
            "gbt: {} feature rows vs {} targets",
            features.nrows(),
            targets.len()
        )));
    }
    if features.iter().any(|v| !v.is_finite()) || targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("gbt: non-finite training values"));
    }
    Ok(())
}

/// Boosts leaf-wise trees on gradient/hessian statistics of the objective.
/// With a holdout, stops once its RMSE (on the prediction scale) has not
/// improved for `early_stopping_rounds` rounds and keeps the best prefix.
pub fn gbt_train(
    config: &GbtConfig,
    features: &Array2<f64>,
    targets: &[f64],
    valid: Option<(&Array2<f64>, &[f64])>,
) -> Result<Booster> {
    config.validate()?;
    validate_table(features, targets)?;
    let n = features.nrows();
    if n < config.min_data_in_leaf {
        return Err(Error::validation(format!(
            "gbt: {n} rows < min_data_in_leaf {}",
            config.min_data_in_leaf
        )));
    }
    if let Objective::Tweedie { .. } = config.objective {
        if targets.iter().any(|y| *y < 0.0) {
            return Err(Error::validation("gbt: tweedie requires non-negative targets"));
        }
    }
    if let Some((vf, vt)) = valid {
        validate_table(vf, vt)?;
        if vf.ncols() != features.ncols() {
            return Err(Error::validation(format!(
                "gbt: holdout has {} features, train has {}",
                vf.ncols(),
                features.ncols()
            )));
        }
    }

    let num_features = features.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init_score = config.objective.init_score(targets);
    let mut scores = vec![init_score; n];
    let mut valid_scores = valid.map(|(vf, _)| vec![init_score; vf.nrows()]);
    let mut grads = vec![0.0; n];
    let mut hess = vec![0.0; n];

    let mut booster = Booster {
        objective: config.objective,
        init_score,
        num_features,
        trees: Vec::new(),
    };

    let mut bagged: Vec<usize> = (0..n).collect();
    let mut best_rmse = f64::INFINITY;
    let mut best_round: usize = 0;

    for round in 0..config.rounds {
        if config.bagging_fraction < 1.0 && round % config.bagging_freq.max(1) == 0 {
            let take = ((config.bagging_fraction * n as f64).floor() as usize).max(1);
            bagged = rand::seq::index::sample(&mut rng, n, take).into_vec();
            bagged.sort_unstable();
        }
        let columns: Vec<usize> = if config.colsample < 1.0 {
            let take = ((config.colsample * num_features as f64).floor() as usize).max(1);
            let mut cols = rand::seq::index::sample(&mut rng, num_features, take).into_vec();
            cols.sort_unstable();
            cols
        } else {
            (0..num_features).collect()
        };

        for ((g, h), (&y, &f)) in grads
            .iter_mut()
            .zip(hess.iter_mut())
            .zip(targets.iter().zip(scores.iter()))
        {
            (*g, *h) = config.objective.grad_hess(y, f);
        }

        let tree = grow_tree(features, bagged.clone(), &grads, &hess, &columns, config);
        for (i, f) in scores.iter_mut().enumerate() {
            *f += tree.predict_row(features.row(i).as_slice().expect("row-major table"));
        }
        if let (Some(vs), Some((vf, _))) = (valid_scores.as_mut(), valid) {
            for (i, f) in vs.iter_mut().enumerate() {
                *f += tree.predict_row(vf.row(i).as_slice().expect("row-major table"));
            }
        }
        booster.trees.push(tree);

        if let (Some(vs), Some((_, vt))) = (valid_scores.as_ref(), valid) {
            let mut sse = 0.0;
            for (f, y) in vs.iter().zip(vt) {
                let err = config.objective.link(*f) - y;
                sse += err * err;
            }
            let rmse = (sse / vt.len() as f64).sqrt();
            if rmse < best_rmse {
                best_rmse = rmse;
                best_round = round;
            } else if round - best_round >= config.early_stopping_rounds {
                booster.trees.truncate(best_round + 1);
                break;
            }
        }
    }
    Ok(booster)
}

/// Raw additive score for one row (before the link).
fn raw_score(booster: &Booster, row: &[f64]) -> f64 {
    booster.init_score
        + booster
            .trees
            .iter()
            .map(|t| t.predict_row(row))
            .sum::<f64>()
}

/// Predicts on the target scale: tweedie boosters return exp(raw score).
pub fn gbt_predict(booster: &Booster, rows: &Array2<f64>) -> Result<Vec<f64>> {
    if rows.ncols() != booster.num_features {
        return Err(Error::validation(format!(
            "gbt: {} features supplied, booster expects {}",
            rows.ncols(),
            booster.num_features
        )));
    }
    Ok((0..rows.nrows())
        .map(|i| {
            let raw = raw_score(booster, rows.row(i).as_slice().expect("row-major table"));
            booster.objective.link(raw)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImportance {
    /// Total split gain per feature.
    pub gains: Vec<f64>,
    /// Number of splits per feature.
    pub counts: Vec<usize>,
    /// 1-based rank per feature: gain descending, ties by split count then
    /// feature index.
    pub ranks: Vec<usize>,
}

impl FeatureImportance {
    /// Feature indices from most to least important.
    pub fn order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.ranks.len()).collect();
        order.sort_by_key(|&j| self.ranks[j]);
        order
    }

    /// Writes `feature,gain,count,rank` rows in rank order.
    pub fn write_csv(&self, path: &Path, feature_names: &[String]) -> Result<()> {
        if feature_names.len() != self.gains.len() {
            return Err(Error::validation(format!(
                "importance has {} features, {} names given",
                self.gains.len(),
                feature_names.len()
            )));
        }
        let mut body = String::from("feature,gain,count,rank\n");
        for &j in &self.order() {
            let _ = writeln!(
                body,
                "{},{:?},{},{}",
                feature_names[j], self.gains[j], self.counts[j], self.ranks[j]
            );
        }
        fs::write(path, body).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Aggregates split gain and split count per feature across all trees.
pub fn feature_importance(booster: &Booster) -> FeatureImportance {
    let mut gains = vec![0.0; booster.num_features];
    let mut counts = vec![0usize; booster.num_features];
    for tree in &booster.trees {
        for node in &tree.nodes {
            if let Node::Split { feature, gain, .. } = node {
                gains[*feature] += gain;
                counts[*feature] += 1;
            }
        }
    }
    let mut order: Vec<usize> = (0..booster.num_features).collect();
    order.sort_by(|&a, &b| {
        gains[b]
            .total_cmp(&gains[a])
            .then(counts[b].cmp(&counts[a]))
            .then(a.cmp(&b))
    });
    let mut ranks = vec![0; booster.num_features];
    for (pos, &j) in order.iter().enumerate() {
        ranks[j] = pos + 1;
    }
    FeatureImportance { gains, counts, ranks }
}

impl Booster {
    /// Text serialization: header lines, then one block per tree.
    pub fn to_text(&self) -> String {
        let mut out = String::from("booster v1\n");
        let _ = match self.objective {
            Objective::Tweedie { power } => writeln!(out, "objective=tweedie:{power:?}"),
            Objective::SquaredError => writeln!(out, "objective=squared_error"),
        };
        let _ = writeln!(out, "init_score={:?}", self.init_score);
        let _ = writeln!(out, "num_features={}", self.num_features);
        let _ = writeln!(out, "num_trees={}", self.trees.len());
        for (ti, tree) in self.trees.iter().enumerate() {
            let _ = writeln!(out, "\ntree {ti}");
            for (ni, node) in tree.nodes.iter().enumerate() {
                match node {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                        gain,
                    } => {
                        let _ = writeln!(
                            out,
                            "node {ni} split feature={feature} threshold={threshold:?} \
                             left={left} right={right} gain={gain:?}"
                        );
                    }
                    Node::Leaf { value } => {
                        let _ = writeln!(out, "node {ni} leaf value={value:?}");
                    }
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Booster> {
        let fail = |msg: String| Error::Decode(format!("booster text: {msg}"));
        let mut lines = text.lines().peekable();
        if lines.next() != Some("booster v1") {
            return Err(fail("missing `booster v1` header".into()));
        }
        let mut field = |prefix: &str| -> Result<String> {
            let line = lines
                .next()
                .ok_or_else(|| fail(format!("missing {prefix}")))?;
            line.strip_prefix(prefix)
                .map(str::to_string)
                .ok_or_else(|| fail(format!("expected {prefix}, got `{line}`")))
        };
        let objective_text = field("objective=")?;
        let objective = if objective_text == "squared_error" {
            Objective::SquaredError
        } else if let Some(power) = objective_text.strip_prefix("tweedie:") {
            Objective::Tweedie {
                power: power.parse().map_err(|e| fail(format!("power: {e}")))?,
            }
        } else {
            return Err(fail(format!("unknown objective `{objective_text}`")));
        };
        let init_score: f64 = field("init_score=")?
            .parse()
            .map_err(|e| fail(format!("init_score: {e}")))?;
        let num_features: usize = field("num_features=")?
            .parse()
            .map_err(|e| fail(format!("num_features: {e}")))?;
        let num_trees: usize = field("num_trees=")?
            .parse()
            .map_err(|e| fail(format!("num_trees: {e}")))?;

        let rest: Vec<&str> = lines.collect();
        let mut trees = Vec::with_capacity(num_trees);
        let mut current: Option<Tree> = None;
        for line in rest {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(index) = line.strip_prefix("tree ") {
                let id: usize = index.parse().map_err(|e| fail(format!("tree id: {e}")))?;
                if let Some(tree) = current.take() {
                    trees.push(tree);
                }
                if id != trees.len() {
                    return Err(fail(format!("tree {id} out of order")));
                }
                current = Some(Tree::default());
                continue;
            }
            let tree = current
                .as_mut()
                .ok_or_else(|| fail("node before first tree".into()))?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() < 3 || parts[0] != "node" {
                return Err(fail(format!("bad node line `{line}`")));
            }
            let kv = |token: &str, key: &str| -> Result<String> {
                token
                    .strip_prefix(key)
                    .map(str::to_string)
                    .ok_or_else(|| fail(format!("expected {key}<v> in `{line}`")))
            };
            match parts[2] {
                "split" => {
                    if parts.len() != 8 {
                        return Err(fail(format!("bad split line `{line}`")));
                    }
                    tree.nodes.push(Node::Split {
                        feature: kv(parts[3], "feature=")?
                            .parse()
                            .map_err(|e| fail(format!("feature: {e}")))?,
                        threshold: kv(parts[4], "threshold=")?
                            .parse()
                            .map_err(|e| fail(format!("threshold: {e}")))?,
                        left: kv(parts[5], "left=")?
                            .parse()
                            .map_err(|e| fail(format!("left: {e}")))?,
                        right: kv(parts[6], "right=")?
                            .parse()
                            .map_err(|e| fail(format!("right: {e}")))?,
                        gain: kv(parts[7], "gain=")?
                            .parse()
                            .map_err(|e| fail(format!("gain: {e}")))?,
                    });
                }
                "leaf" => {
                    if parts.len() != 4 {
                        return Err(fail(format!("bad leaf line `{line}`")));
                    }
                    tree.nodes.push(Node::Leaf {
                        value: kv(parts[3], "value=")?
                            .parse()
                            .map_err(|e| fail(format!("value: {e}")))?,
                    });
                }
                other => return Err(fail(format!("unknown node kind `{other}`"))),
            }
        }
        if let Some(tree) = current.take() {
            trees.push(tree);
        }
        if trees.len() != num_trees {
            return Err(fail(format!(
                "expected {num_trees} trees, parsed {}",
                trees.len()
            )));
        }
        Ok(Booster {
            objective,
            init_score,
            num_features,
            trees,
        })
    }

    pub fn save_text(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load_text(path: &Path) -> Result<Booster> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Booster::from_text(&text)
    }
}
