//! Cluster-index alignment across clients.
//!
//! Independently trained clients label the same underlying clusters in
//! arbitrary order. The anchor client's indexing is canonical; every other
//! client's soft assignment is permuted onto it by counting hard-label
//! co-occurrences over shared samples and solving the resulting assignment
//! problem.

use std::collections::HashMap;

use crate::clustering::{predict, SoftAssignment};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Per-sample integer cluster ids in `[0, K)`.
pub type LabelVector = Vec<usize>;

/// `K x K` nonnegative cost matrix.
pub type CostMatrix = Matrix;

/// A `K x K` permutation: row `i` maps cluster `i` to cluster `forward[i]`.
///
/// As a boolean matrix it has exactly one set entry per row and per column,
/// so `A A^T = I`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationMatrix {
    forward: Vec<usize>,
}

impl PermutationMatrix {
    pub fn identity(k: usize) -> Self {
        PermutationMatrix {
            forward: (0..k).collect(),
        }
    }

    pub fn from_forward(forward: Vec<usize>) -> Result<Self> {
        let k = forward.len();
        let mut seen = vec![false; k];
        for (i, &j) in forward.iter().enumerate() {
            if j >= k {
                return Err(Error::LabelOutOfRange {
                    label: j,
                    k,
                    index: i,
                });
            }
            if seen[j] {
                return Err(Error::dims(
                    "PermutationMatrix::from_forward",
                    format!("column {j} assigned twice"),
                ));
            }
            seen[j] = true;
        }
        Ok(PermutationMatrix { forward })
    }

    pub fn k(&self) -> usize {
        self.forward.len()
    }

    /// Image of cluster `i`.
    pub fn map(&self, i: usize) -> usize {
        self.forward[i]
    }

    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    pub fn is_identity(&self) -> bool {
        self.forward.iter().enumerate().all(|(i, &j)| i == j)
    }

    /// Dense 0/1 matrix form.
    pub fn as_matrix(&self) -> Matrix {
        let k = self.k();
        let mut m = Matrix::zeros(k, k);
        for (i, &j) in self.forward.iter().enumerate() {
            m[(i, j)] = 1.0;
        }
        m
    }

    /// `Q * A`: reorders the columns of `q`, preserving row sums.
    pub fn apply_to_columns(&self, q: &Matrix) -> Result<Matrix> {
        let k = self.k();
        if q.cols() != k {
            return Err(Error::dims(
                "PermutationMatrix::apply_to_columns",
                format!("q has {} cols, permutation is {k}x{k}", q.cols()),
            ));
        }
        let mut out = Matrix::zeros(q.rows(), k);
        for i in 0..q.rows() {
            let src = q.row(i).to_vec();
            let dst = out.row_mut(i);
            for (l, &j) in self.forward.iter().enumerate() {
                dst[j] = src[l];
            }
        }
        Ok(out)
    }

    /// Relabels hard labels: `label -> map(label)`.
    pub fn apply_to_labels(&self, labels: &[usize]) -> Vec<usize> {
        labels.iter().map(|&l| self.forward[l]).collect()
    }
}

/// Co-occurrence counts over samples labeled by both sides:
/// `out[i][j] = #{n : labels[n] = i and anchor_labels[n] = j}`.
pub fn confusion(labels: &[usize], anchor_labels: &[usize], k: usize) -> Result<CostMatrix> {
    if labels.len() != anchor_labels.len() {
        return Err(Error::dims(
            "confusion",
            format!(
                "{} labels vs {} anchor labels",
                labels.len(),
                anchor_labels.len()
            ),
        ));
    }
    let mut out = Matrix::zeros(k, k);
    for (idx, (&a, &b)) in labels.iter().zip(anchor_labels).enumerate() {
        if a >= k {
            return Err(Error::LabelOutOfRange {
                label: a,
                k,
                index: idx,
            });
        }
        if b >= k {
            return Err(Error::LabelOutOfRange {
                label: b,
                k,
                index: idx,
            });
        }
        out[(a, b)] += 1.0;
    }
    Ok(out)
}

/// Turns agreement counts into a minimization cost: `max entry - entry`.
pub fn cost_from_confusion(counts: &CostMatrix) -> CostMatrix {
    let max = counts.as_slice().iter().cloned().fold(0.0, f64::max);
    let mut out = counts.clone();
    for v in out.as_mut_slice() {
        *v = max - *v;
    }
    out
}

/// Minimum-cost perfect assignment on a square, finite, nonnegative cost
/// matrix. Among all minimum-cost permutations, returns the lexicographically
/// smallest (by the row-to-column map).
pub fn hungarian(cost: &CostMatrix) -> Result<PermutationMatrix> {
    let k = cost.rows();
    if cost.cols() != k {
        return Err(Error::dims(
            "hungarian",
            format!("{}x{} is not square", cost.rows(), cost.cols()),
        ));
    }
    if k == 0 {
        return Ok(PermutationMatrix::identity(0));
    }
    cost.check_finite("hungarian")?;

    let all: Vec<usize> = (0..k).collect();
    let base = min_assignment_cost(cost, &all, &all);
    let tol = 1e-9 * base.abs().max(1.0);

    // Fix rows in order, choosing the smallest column that still admits an
    // optimal completion.
    let mut forward = vec![0usize; k];
    let mut used = vec![false; k];
    let mut prefix_cost = 0.0;
    for i in 0..k {
        let rest_rows: Vec<usize> = (i + 1..k).collect();
        let mut chosen = None;
        for j in 0..k {
            if used[j] {
                continue;
            }
            let rest_cols: Vec<usize> = (0..k).filter(|&c| !used[c] && c != j).collect();
            let completion = if rest_rows.is_empty() {
                0.0
            } else {
                min_assignment_cost(cost, &rest_rows, &rest_cols)
            };
            if prefix_cost + cost[(i, j)] + completion <= base + tol {
                chosen = Some(j);
                break;
            }
        }
        let j = chosen.expect("an optimal column always exists");
        forward[i] = j;
        used[j] = true;
        prefix_cost += cost[(i, j)];
    }
    Ok(PermutationMatrix { forward })
}

/// Minimum assignment cost on the submatrix `rows x cols` via shortest
/// augmenting paths with potentials (O(k^3)).
fn min_assignment_cost(cost: &CostMatrix, rows: &[usize], cols: &[usize]) -> f64 {
    let n = rows.len();
    debug_assert_eq!(n, cols.len());
    if n == 0 {
        return 0.0;
    }
    const FREE: usize = usize::MAX;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![FREE; n + 1]; // owner[j] = row occupying column j; n is virtual
    let mut way = vec![0usize; n + 1];

    for i in 0..n {
        owner[n] = i;
        let mut j0 = n;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut visited = vec![false; n + 1];
        loop {
            visited[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = n;
            for j in 0..n {
                if !visited[j] {
                    let cur = cost[(rows[i0], cols[j])] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if visited[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == FREE {
                break;
            }
        }
        while j0 != n {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
        }
    }

    let mut total = 0.0;
    for j in 0..n {
        total += cost[(rows[owner[j]], cols[j])];
    }
    total
}

/// Aligns every client's soft assignment onto the anchor client's cluster
/// indexing (the anchor gets the identity permutation).
///
/// Hard labels are compared only over samples present on both the client and
/// the anchor; a client sharing no samples with the anchor cannot be aligned.
pub fn align_all(
    assignments: &[SoftAssignment],
    sample_ids: &[Vec<u64>],
    anchor: usize,
) -> Result<(Vec<SoftAssignment>, Vec<PermutationMatrix>)> {
    assert!(
        !assignments.is_empty(),
        "align_all needs at least one client"
    );
    assert_eq!(assignments.len(), sample_ids.len());
    assert!(anchor < assignments.len(), "anchor index out of range");
    let k = assignments[anchor].cols();

    let anchor_labels = predict(&assignments[anchor]);
    let anchor_pos: HashMap<u64, usize> = sample_ids[anchor]
        .iter()
        .enumerate()
        .map(|(pos, &id)| (id, pos))
        .collect();

    let mut aligned = Vec::with_capacity(assignments.len());
    let mut perms = Vec::with_capacity(assignments.len());
    for (m, q) in assignments.iter().enumerate() {
        if m == anchor {
            aligned.push(q.clone());
            perms.push(PermutationMatrix::identity(k));
            continue;
        }
        if q.cols() != k {
            return Err(Error::dims(
                "align_all",
                format!("client {m} has {} clusters, anchor has {k}", q.cols()),
            ));
        }
        let labels = predict(q);
        let mut own = Vec::new();
        let mut anc = Vec::new();
        for (pos, id) in sample_ids[m].iter().enumerate() {
            if let Some(&apos) = anchor_pos.get(id) {
                own.push(labels[pos]);
                anc.push(anchor_labels[apos]);
            }
        }
        if own.is_empty() {
            return Err(Error::AlignmentImpossible { view: m });
        }
        let counts = confusion(&own, &anc, k)?;
        let perm = hungarian(&cost_from_confusion(&counts))?;
        aligned.push(perm.apply_to_columns(q)?);
        perms.push(perm);
    }
    Ok((aligned, perms))
}
