//! Gradient-boosted regression trees: squared-error boosting with shrinkage
//! and exact splits on presorted columns. Desk-scale row counts make exact
//! splitting affordable, so there is no histogram approximation.

use crate::error::{Error, Result};
use crate::rng::derive_rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtHyperparams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub row_subsample: f64,
    pub feature_subsample: f64,
}

impl Default for GbtHyperparams {
    fn default() -> Self {
        GbtHyperparams {
            n_trees: 200,
            max_depth: 4,
            learning_rate: 0.05,
            min_samples_leaf: 5,
            row_subsample: 0.8,
            feature_subsample: 0.8,
        }
    }
}

impl GbtHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(Error::Validation("gbt counts must be positive".into()));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("row_subsample", self.row_subsample),
            ("feature_subsample", self.feature_subsample),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Validation(format!("{name} out of range (0,1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Node {
    feature: usize,
    threshold: f64,
    /// Children node indices; -1 marks a leaf.
    left: i32,
    right: i32,
    /// Leaf value, already scaled by the learning rate.
    value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut idx = 0usize;
        loop {
            let node = &self.nodes[idx];
            if node.left < 0 {
                return node.value;
            }
            idx = if row[node.feature] <= node.threshold {
                node.left as usize
            } else {
                node.right as usize
            };
        }
    }

    fn predict_columns(&self, columns: &[Vec<f64>], row: usize) -> f64 {
        let mut idx = 0usize;
        loop {
            let node = &self.nodes[idx];
            if node.left < 0 {
                return node.value;
            }
            idx = if columns[node.feature][row] <= node.threshold {
                node.left as usize
            } else {
                node.right as usize
            };
        }
    }

    /// Split described by the root, if any (used by the stump oracle tests).
    pub fn root_split(&self) -> Option<(usize, f64)> {
        let root = &self.nodes[0];
        (root.left >= 0).then_some((root.feature, root.threshold))
    }

    /// Leaf values in node order.
    pub fn leaf_values(&self) -> Vec<f64> {
        self.nodes.iter().filter(|n| n.left < 0).map(|n| n.value).collect()
    }
}

/// Trained boosted ensemble with its feature schema and imputation medians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub base: f64,
    pub trees: Vec<Tree>,
    pub schema: Vec<String>,
    /// Training-median imputation values per schema column.
    pub medians: Vec<f64>,
    pub hp: GbtHyperparams,
    pub seed: u64,
}

impl GbtModel {
    /// Predicts one row given values aligned with `schema`. Absent values
    /// must already be imputed (see [`GbtModel::impute`]).
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        debug_assert_eq!(row.len(), self.schema.len());
        let mut v = self.base;
        for tree in &self.trees {
            v += tree.predict(row);
        }
        v
    }

    /// Predictions for a batch of schema-aligned rows. Errors on a schema
    /// width mismatch rather than silently accepting extra columns.
    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        for row in rows {
            if row.len() != self.schema.len() {
                return Err(Error::Learn(format!(
                    "schema mismatch: expected {} columns, got {}",
                    self.schema.len(),
                    row.len()
                )));
            }
        }
        Ok(rows.iter().map(|r| self.predict_row(r)).collect())
    }

    /// Replaces absent values with the training medians, in schema order.
    pub fn impute(&self, row: &[Option<f64>]) -> Vec<f64> {
        row.iter()
            .zip(&self.medians)
            .map(|(v, m)| v.unwrap_or(*m))
            .collect()
    }
}

/// Per-column training median; 0 for all-absent columns.
pub fn column_medians(columns: &[Vec<Option<f64>>]) -> Vec<f64> {
    columns
        .iter()
        .map(|col| {
            let mut present: Vec<f64> = col.iter().filter_map(|v| *v).collect();
            if present.is_empty() {
                return 0.0;
            }
            present.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = present.len();
            if n % 2 == 1 {
                present[n / 2]
            } else {
                0.5 * (present[n / 2 - 1] + present[n / 2])
            }
        })
        .collect()
}

#[derive(Clone)]
struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Fits a boosted ensemble to (columns, y). `columns` are imputed,
/// column-major features aligned with `schema`; rows must be in time order
/// when the caller cares about time-ordered validation.
pub fn fit_gbt(
    columns: &[Vec<f64>],
    y: &[f64],
    schema: Vec<String>,
    medians: Vec<f64>,
    hp: &GbtHyperparams,
    seed: u64,
) -> Result<GbtModel> {
    hp.validate()?;
    let n_rows = y.len();
    let n_feats = columns.len();
    if n_rows == 0 {
        return Err(Error::Learn("no training rows".into()));
    }
    debug_assert!(columns.iter().all(|c| c.len() == n_rows));
    debug_assert_eq!(schema.len(), n_feats);

    let base = y.iter().sum::<f64>() / n_rows as f64;
    let mut pred = vec![base; n_rows];
    let mut trees = Vec::with_capacity(hp.n_trees);

    for tree_idx in 0..hp.n_trees {
        let mut rng = derive_rng(seed, &format!("tree:{tree_idx}"));
        // row subsample without replacement, kept in time order
        let rows: Vec<u32> = if hp.row_subsample < 1.0 {
            let k = ((hp.row_subsample * n_rows as f64).ceil() as usize).clamp(1, n_rows);
            let mut all: Vec<u32> = (0..n_rows as u32).collect();
            all.partial_shuffle(&mut rng, k);
            let mut chosen = all[..k].to_vec();
            chosen.sort_unstable();
            chosen
        } else {
            (0..n_rows as u32).collect()
        };
        let feats: Vec<usize> = if hp.feature_subsample < 1.0 && n_feats > 1 {
            let k = ((hp.feature_subsample * n_feats as f64).ceil() as usize).clamp(1, n_feats);
            let mut all: Vec<usize> = (0..n_feats).collect();
            all.partial_shuffle(&mut rng, k);
            let mut chosen = all[..k].to_vec();
            chosen.sort_unstable();
            chosen
        } else {
            (0..n_feats).collect()
        };

        let residuals: Vec<f64> = rows.iter().map(|&r| y[r as usize] - pred[r as usize]).collect();
        let tree = grow_tree(columns, &rows, &residuals, &feats, hp);
        // update predictions for all rows, not just the sampled ones
        for (r, p) in pred.iter_mut().enumerate() {
            *p += tree.predict_columns(columns, r);
        }
        trees.push(tree);
    }

    Ok(GbtModel { base, trees, schema, medians, hp: clone_hp(hp), seed })
}

fn clone_hp(hp: &GbtHyperparams) -> GbtHyperparams {
    hp.clone()
}

/// Grows one depth-limited regression tree on the sampled rows. Level-wise:
/// each feature's sampled values are sorted once and scanned per level with
/// per-node running statistics, so a level costs O(rows x features).
fn grow_tree(
    columns: &[Vec<f64>],
    rows: &[u32],
    residuals: &[f64],
    feats: &[usize],
    hp: &GbtHyperparams,
) -> Tree {
    let n = rows.len();
    // residual lookup indexed by position within `rows`
    let mut pos_of_row = vec![u32::MAX; columns[0].len()];
    for (pos, &r) in rows.iter().enumerate() {
        pos_of_row[r as usize] = pos as u32;
    }

    // presort sampled rows per feature (stable: ties keep row order)
    let sorted: Vec<Vec<u32>> = feats
        .iter()
        .map(|&f| {
            let mut idx = rows.to_vec();
            idx.sort_by(|&a, &b| {
                columns[f][a as usize]
                    .partial_cmp(&columns[f][b as usize])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect();

    let sum_all: f64 = residuals.iter().sum();
    let mut nodes = vec![Node {
        feature: 0,
        threshold: 0.0,
        left: -1,
        right: -1,
        value: hp.learning_rate * sum_all / n as f64,
    }];
    // node id per sampled-row position; one node (root) at level 0
    let mut node_of_pos = vec![0u32; n];
    let mut level_nodes: Vec<u32> = vec![0];
    let mut node_stats: Vec<(usize, f64)> = vec![(n, sum_all)]; // (count, sum) by node id

    for _depth in 0..hp.max_depth {
        if level_nodes.is_empty() {
            break;
        }
        let mut best: Vec<Option<BestSplit>> = vec![None; nodes.len()];
        let mut active = vec![false; nodes.len()];
        for &nid in &level_nodes {
            active[nid as usize] = true;
        }
        for (fi, &f) in feats.iter().enumerate() {
            // per-node scan state: count/sum of the left side, previous value
            let mut left_cnt = vec![0usize; nodes.len()];
            let mut left_sum = vec![0.0f64; nodes.len()];
            let mut prev_val = vec![f64::NAN; nodes.len()];
            for &r in &sorted[fi] {
                let pos = pos_of_row[r as usize] as usize;
                let nid = node_of_pos[pos] as usize;
                if !active[nid] {
                    continue;
                }
                let v = columns[f][r as usize];
                let (n_node, sum_node) = node_stats[nid];
                let lc = left_cnt[nid];
                if lc >= hp.min_samples_leaf
                    && n_node - lc >= hp.min_samples_leaf
                    && v > prev_val[nid]
                {
                    let ls = left_sum[nid];
                    let rs = sum_node - ls;
                    let rc = n_node - lc;
                    let gain = ls * ls / lc as f64 + rs * rs / rc as f64
                        - sum_node * sum_node / n_node as f64;
                    let better = match &best[nid] {
                        Some(b) => gain > b.gain,
                        None => gain > 1e-12,
                    };
                    if better {
                        best[nid] = Some(BestSplit {
                            gain,
                            feature: f,
                            threshold: 0.5 * (prev_val[nid] + v),
                        });
                    }
                }
                left_cnt[nid] += 1;
                left_sum[nid] += residuals[pos];
                prev_val[nid] = v;
            }
        }

        let mut next_level: Vec<u32> = Vec::new();
        let mut split_of: Vec<Option<(usize, f64, u32, u32)>> = vec![None; nodes.len()];
        for &nid in &level_nodes {
            let nid = nid as usize;
            if let Some(split) = &best[nid] {
                let left_id = nodes.len() as u32;
                let right_id = left_id + 1;
                nodes[nid].feature = split.feature;
                nodes[nid].threshold = split.threshold;
                nodes[nid].left = left_id as i32;
                nodes[nid].right = right_id as i32;
                nodes.push(Node { feature: 0, threshold: 0.0, left: -1, right: -1, value: 0.0 });
                nodes.push(Node { feature: 0, threshold: 0.0, left: -1, right: -1, value: 0.0 });
                node_stats.push((0, 0.0));
                node_stats.push((0, 0.0));
                split_of[nid] = Some((split.feature, split.threshold, left_id, right_id));
                next_level.push(left_id);
                next_level.push(right_id);
            }
        }
        if next_level.is_empty() {
            break;
        }
        // reassign rows to children and accumulate child stats
        for (pos, &r) in rows.iter().enumerate() {
            let nid = node_of_pos[pos] as usize;
            if let Some((f, thr, left_id, right_id)) = split_of[nid] {
                let child = if columns[f][r as usize] <= thr { left_id } else { right_id };
                node_of_pos[pos] = child;
                let stats = &mut node_stats[child as usize];
                stats.0 += 1;
                stats.1 += residuals[pos];
            }
        }
        for &cid in &next_level {
            let (cnt, sum) = node_stats[cid as usize];
            nodes[cid as usize].value = hp.learning_rate * sum / cnt as f64;
        }
        level_nodes = next_level;
    }

    Tree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}")).collect()
    }

    #[test]
    fn constant_target_predicts_constant() {
        let columns = vec![(0..30).map(|i| i as f64).collect::<Vec<f64>>()];
        let y = vec![4.2; 30];
        let model =
            fit_gbt(&columns, &y, schema(1), vec![0.0], &GbtHyperparams::default(), 0).unwrap();
        for r in 0..30 {
            let p = model.predict_row(&[columns[0][r]]);
            assert!((p - 4.2).abs() < 1e-12);
        }
    }

    #[test]
    fn step_function_high_r2() {
        let xs: Vec<f64> = (0..200).map(|i| i as f64 / 200.0).collect();
        let y: Vec<f64> = xs.iter().map(|&x| if x < 0.37 { -1.0 } else { 2.0 }).collect();
        let hp = GbtHyperparams {
            n_trees: 50,
            learning_rate: 0.3,
            row_subsample: 1.0,
            feature_subsample: 1.0,
            ..Default::default()
        };
        let model = fit_gbt(&[xs.clone()], &y, schema(1), vec![0.0], &hp, 3).unwrap();
        let preds: Vec<f64> = xs.iter().map(|&x| model.predict_row(&[x])).collect();
        let my = y.iter().sum::<f64>() / y.len() as f64;
        let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
        let ss_res: f64 = y.iter().zip(&preds).map(|(v, p)| (v - p).powi(2)).sum();
        assert!(1.0 - ss_res / ss_tot > 0.99);
    }

    #[test]
    fn same_seed_bit_identical() {
        let columns: Vec<Vec<f64>> = (0..5)
            .map(|f| (0..120).map(|i| ((i * (f + 3)) as f64 * 0.37).sin()).collect())
            .collect();
        let y: Vec<f64> = (0..120).map(|i| (i as f64 * 0.11).cos()).collect();
        let hp = GbtHyperparams { n_trees: 20, ..Default::default() };
        let a = fit_gbt(&columns, &y, schema(5), vec![0.0; 5], &hp, 42).unwrap();
        let b = fit_gbt(&columns, &y, schema(5), vec![0.0; 5], &hp, 42).unwrap();
        assert_eq!(a, b);
        let row: Vec<f64> = columns.iter().map(|c| c[7]).collect();
        assert_eq!(a.predict_row(&row).to_bits(), b.predict_row(&row).to_bits());
    }

    #[test]
    fn predict_checks_schema_width() {
        let columns = vec![vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0]];
        let y: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let hp = GbtHyperparams { n_trees: 2, min_samples_leaf: 2, ..Default::default() };
        let model = fit_gbt(&columns, &y, schema(1), vec![0.0], &hp, 0).unwrap();
        assert!(model.predict(&[vec![1.0, 2.0]]).is_err());
        assert!(model.predict(&[]).unwrap().is_empty());
    }

    #[test]
    fn empty_training_set_errors() {
        let err = fit_gbt(&[vec![]], &[], schema(1), vec![0.0], &GbtHyperparams::default(), 0);
        assert!(err.is_err());
    }

    #[test]
    fn medians_skip_absent() {
        let cols = vec![vec![Some(1.0), None, Some(3.0)], vec![None, None, None]];
        assert_eq!(column_medians(&cols), vec![2.0, 0.0]);
    }
}
