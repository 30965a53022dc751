//! Clustering evaluation: accuracy under the optimal cluster-to-class
//! assignment, normalized mutual information, adjusted Rand index and the
//! confusion matrix.

use std::collections::BTreeMap;

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("label vectors differ in length ({truth} ground-truth vs {pred} predicted)")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("at least {required} labels are required, got {actual}")]
    TooFew { required: usize, actual: usize },
    #[error("malformed report: {0}")]
    Report(String),
}

/// Ground-truth classes and predicted clusters for the same samples.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelPair {
    y_true: Vec<usize>,
    y_pred: Vec<usize>,
}

impl LabelPair {
    pub fn new(y_true: Vec<usize>, y_pred: Vec<usize>) -> Result<Self, MetricsError> {
        if y_true.len() != y_pred.len() {
            return Err(MetricsError::LengthMismatch {
                truth: y_true.len(),
                pred: y_pred.len(),
            });
        }
        if y_true.is_empty() {
            return Err(MetricsError::TooFew { required: 1, actual: 0 });
        }
        Ok(Self { y_true, y_pred })
    }

    pub fn len(&self) -> usize {
        self.y_true.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_true.is_empty()
    }

    pub fn y_true(&self) -> &[usize] {
        &self.y_true
    }

    pub fn y_pred(&self) -> &[usize] {
        &self.y_pred
    }
}

/// Counts indexed by dense class and cluster positions.
struct Contingency {
    classes: Vec<usize>,
    clusters: Vec<usize>,
    counts: Vec<Vec<u64>>,
}

impl Contingency {
    fn new(pair: &LabelPair) -> Self {
        let dense = |labels: &[usize]| -> (Vec<usize>, BTreeMap<usize, usize>) {
            let ids: Vec<usize> = labels
                .iter()
                .copied()
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            let index = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
            (ids, index)
        };
        let (classes, class_index) = dense(&pair.y_true);
        let (clusters, cluster_index) = dense(&pair.y_pred);
        let mut counts = vec![vec![0u64; clusters.len()]; classes.len()];
        for (t, p) in pair.y_true.iter().zip(&pair.y_pred) {
            counts[class_index[t]][cluster_index[p]] += 1;
        }
        Self {
            classes,
            clusters,
            counts,
        }
    }

    fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    fn col_sums(&self) -> Vec<u64> {
        (0..self.clusters.len()).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }

    /// Maximum-weight matching on the contingency table padded to square.
    /// Returns, for each padded class slot, the padded cluster slot it gets.
    fn match_square(&self) -> (usize, Vec<usize>) {
        let k = self.classes.len().max(self.clusters.len());
        let weights = Matrix::from_fn(k, k, |(i, j)| {
            if i < self.classes.len() && j < self.clusters.len() {
                self.counts[i][j] as i64
            } else {
                0
            }
        });
        let (total, assignment) = kuhn_munkres(&weights);
        (total as usize, assignment)
    }
}

/// Best achievable fraction of samples whose cluster maps to their class,
/// over injective cluster-to-class maps.
pub fn accuracy(pair: &LabelPair) -> f64 {
    let (matched, _) = Contingency::new(pair).match_square();
    matched as f64 / pair.len() as f64
}

fn entropy(counts: &[u64], n: f64) -> f64 {
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Mutual information normalized by the geometric mean of the two entropies.
///
/// When either partition is a single cluster the entropies vanish; the score
/// is then 1 if both partitions are identical up to relabeling and 0 otherwise.
pub fn nmi(pair: &LabelPair) -> f64 {
    let table = Contingency::new(pair);
    let n = pair.len() as f64;
    let rows = table.row_sums();
    let cols = table.col_sums();
    let hu = entropy(&rows, n);
    let hv = entropy(&cols, n);
    if hu == 0.0 || hv == 0.0 {
        return if table.classes.len() == table.clusters.len() { 1.0 } else { 0.0 };
    }
    let mut mi = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (rows[i] as f64 * cols[j] as f64)).ln();
            }
        }
    }
    (mi / (hu * hv).sqrt()).clamp(0.0, 1.0)
}

fn comb2(x: u64) -> i128 {
    let x = x as i128;
    x * (x - 1) / 2
}

/// Adjusted Rand index under the permutation model.
///
/// Computed as `2(I·C − A·B) / ((A + B)·C − 2A·B)` in integers, with `I` the
/// pair-agreement count, `A` and `B` the pair counts of each partition and
/// `C = n(n-1)/2`, so the only rounding is the final division.
pub fn ari(pair: &LabelPair) -> Result<f64, MetricsError> {
    if pair.len() < 2 {
        return Err(MetricsError::TooFew {
            required: 2,
            actual: pair.len(),
        });
    }
    let table = Contingency::new(pair);
    let index: i128 = table.counts.iter().flatten().map(|&c| comb2(c)).sum();
    let a: i128 = table.row_sums().into_iter().map(comb2).sum();
    let b: i128 = table.col_sums().into_iter().map(comb2).sum();
    let c = comb2(pair.len() as u64);
    let num = 2 * (index * c - a * b);
    let den = (a + b) * c - 2 * a * b;
    if den == 0 {
        // both partitions all-singletons or both one cluster
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}

/// Square confusion matrix. Rows are classes in ascending id order, columns
/// are clusters reordered so that column `k` holds the cluster assigned to
/// row `k`. Padding rows/columns (when the counts differ) carry `None` labels
/// and zero counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub row_labels: Vec<Option<usize>>,
    pub col_labels: Vec<Option<usize>>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn size(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.size()).map(|i| self.counts[i][i]).sum()
    }

    /// Count for ground-truth `class` and predicted `cluster` ids.
    pub fn count(&self, class: usize, cluster: usize) -> u64 {
        let r = self.row_labels.iter().position(|l| *l == Some(class));
        let c = self.col_labels.iter().position(|l| *l == Some(cluster));
        match (r, c) {
            (Some(r), Some(c)) => self.counts[r][c],
            _ => 0,
        }
    }
}

pub fn confusion_matrix(pair: &LabelPair) -> ConfusionMatrix {
    let table = Contingency::new(pair);
    let (_, assignment) = table.match_square();
    let k = assignment.len();
    let row_labels: Vec<Option<usize>> = (0..k).map(|i| table.classes.get(i).copied()).collect();
    let col_labels: Vec<Option<usize>> = assignment.iter().map(|&j| table.clusters.get(j).copied()).collect();
    let counts = (0..k)
        .map(|i| {
            assignment
                .iter()
                .map(|&j| {
                    if i < table.classes.len() && j < table.clusters.len() {
                        table.counts[i][j]
                    } else {
                        0
                    }
                })
                .collect()
        })
        .collect();
    ConfusionMatrix {
        row_labels,
        col_labels,
        counts,
    }
}

/// One predicted cluster and the class it was matched to, if any.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterMatch {
    pub cluster: usize,
    pub class: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub nmi: f64,
    pub acc: f64,
    pub ari: f64,
    pub confusion: ConfusionMatrix,
    pub assignment: Vec<ClusterMatch>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "n,nmi,acc,ari";

    pub fn to_csv_row(&self) -> String {
        format!("{},{},{},{}", self.n, self.nmi, self.acc, self.ari)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, MetricsError> {
        serde_json::from_str(s).map_err(|e| MetricsError::Report(e.to_string()))
    }
}

/// All metrics at once. Needs at least two samples (for ARI).
pub fn evaluate(pair: &LabelPair) -> Result<EvalReport, MetricsError> {
    let ari = ari(pair)?;
    let confusion = confusion_matrix(pair);
    let mut assignment: Vec<ClusterMatch> = confusion
        .col_labels
        .iter()
        .zip(&confusion.row_labels)
        .filter_map(|(cluster, class)| cluster.map(|cluster| ClusterMatch { cluster, class: *class }))
        .collect();
    assignment.sort_by_key(|m| m.cluster);
    Ok(EvalReport {
        n: pair.len(),
        nmi: nmi(pair),
        acc: confusion.trace() as f64 / pair.len() as f64,
        ari,
        confusion,
        assignment,
    })
}
