//! Shared clustering kernels: k-means, Student's-t soft assignment,
//! confidence sharpening, and hard prediction.
//!
//! The same kernels serve both sides of the federation: clients assign their
//! embedded features against local centroids, the server assigns imputed
//! global features against k-means centroids.

use crate::error::{Error, Result};
use crate::matrix::{pairwise_sqdist, row_normalize, Matrix};
use crate::rng::RngStream;

/// `K x d` cluster centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroids(pub Matrix);

impl Centroids {
    pub fn k(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }
}

/// Row-stochastic `n x K` membership probabilities.
///
/// Every row sums to 1 within 1e-9 and entries lie in `[0, 1]`.
pub type SoftAssignment = Matrix;

#[derive(Debug, Clone)]
pub struct KmeansOptions {
    pub max_iter: usize,
    /// Stop when the relative objective decrease falls below this.
    pub tol: f64,
    /// Independent k-means++ starts; the best objective wins.
    pub restarts: usize,
}

impl Default for KmeansOptions {
    fn default() -> Self {
        KmeansOptions {
            max_iter: 300,
            tol: 1e-6,
            restarts: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KmeansResult {
    pub centroids: Centroids,
    pub labels: Vec<usize>,
    /// Objective after each Lloyd iteration of the winning restart;
    /// non-increasing.
    pub objective_trace: Vec<f64>,
}

impl KmeansResult {
    pub fn objective(&self) -> f64 {
        *self
            .objective_trace
            .last()
            .expect("trace has at least one entry")
    }
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Every returned centroid owns at least one point: if a cluster empties, it
/// is reseeded to the point farthest from its own centroid. Fully
/// deterministic for a fixed rng stream.
pub fn kmeans(
    z: &Matrix,
    k: usize,
    opts: &KmeansOptions,
    rng: &mut RngStream,
) -> Result<KmeansResult> {
    let n = z.rows();
    if k == 0 || n < k {
        return Err(Error::InsufficientPoints { n, k });
    }
    let mut best: Option<KmeansResult> = None;
    for _ in 0..opts.restarts.max(1) {
        let run = lloyd_once(z, k, opts, rng)?;
        if best
            .as_ref()
            .map_or(true, |b| run.objective() < b.objective())
        {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn lloyd_once(
    z: &Matrix,
    k: usize,
    opts: &KmeansOptions,
    rng: &mut RngStream,
) -> Result<KmeansResult> {
    let n = z.rows();
    let mut centroids = seed_plus_plus(z, k, rng);
    let mut labels = vec![0usize; n];
    let mut trace = Vec::new();
    let mut prev_obj = f64::INFINITY;

    for _ in 0..opts.max_iter.max(1) {
        let dists = pairwise_sqdist(z, &centroids)?;

        // Assignment step; ties break to the lowest centroid index.
        for i in 0..n {
            let row = dists.row(i);
            let mut arg = 0;
            for j in 1..k {
                if row[j] < row[arg] {
                    arg = j;
                }
            }
            labels[i] = arg;
        }

        // Update step.
        let mut sums = Matrix::zeros(k, z.cols());
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = labels[i];
            counts[c] += 1;
            let srow = sums.row_mut(c);
            for (s, &v) in srow.iter_mut().zip(z.row(i)) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let inv = 1.0 / counts[j] as f64;
                for v in sums.row_mut(j) {
                    *v *= inv;
                }
            } else {
                // Empty-cluster repair: reseed to the point farthest from its
                // own centroid (lowest index on ties), stealing it.
                let d = pairwise_sqdist(z, &centroids)?;
                let mut far = 0;
                let mut far_d = -1.0;
                for i in 0..n {
                    let di = d[(i, labels[i])];
                    if di > far_d {
                        far_d = di;
                        far = i;
                    }
                }
                sums.row_mut(j).copy_from_slice(z.row(far));
                labels[far] = j;
            }
        }
        centroids = sums;

        // Objective against the updated centroids.
        let dists = pairwise_sqdist(z, &centroids)?;
        let mut obj = 0.0;
        for i in 0..n {
            let row = dists.row(i);
            let mut m = row[0];
            for &v in &row[1..] {
                if v < m {
                    m = v;
                }
            }
            obj += m;
        }
        trace.push(obj);
        if prev_obj.is_finite() {
            let decrease = prev_obj - obj;
            if decrease < opts.tol * prev_obj.max(f64::MIN_POSITIVE) {
                break;
            }
        }
        prev_obj = obj;
    }

    // Final assignment consistent with the returned centroids.
    let dists = pairwise_sqdist(z, &centroids)?;
    for i in 0..n {
        let row = dists.row(i);
        let mut arg = 0;
        for j in 1..k {
            if row[j] < row[arg] {
                arg = j;
            }
        }
        labels[i] = arg;
    }

    Ok(KmeansResult {
        centroids: Centroids(centroids),
        labels,
        objective_trace: trace,
    })
}

/// k-means++: first center uniform, the rest weighted by squared distance to
/// the nearest chosen center.
fn seed_plus_plus(z: &Matrix, k: usize, rng: &mut RngStream) -> Matrix {
    let n = z.rows();
    let d = z.cols();
    let mut centers = Matrix::zeros(k, d);
    let first = rng.below(n);
    centers.row_mut(0).copy_from_slice(z.row(first));

    let mut min_d: Vec<f64> = (0..n)
        .map(|i| sqdist_rows(z.row(i), centers.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = min_d.iter().sum();
        let pick = if total > 0.0 {
            rng.weighted(&min_d)
        } else {
            // All points coincide with chosen centers; any point works.
            rng.below(n)
        };
        let src = z.row(pick).to_vec();
        centers.row_mut(c).copy_from_slice(&src);
        for i in 0..n {
            let d2 = sqdist_rows(z.row(i), &src);
            if d2 < min_d[i] {
                min_d[i] = d2;
            }
        }
    }
    centers
}

fn sqdist_rows(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Degree-1 Student's-t similarity, row-normalized:
/// `out[i][j] = (1 + ||z_i - u_j||^2)^-1 / sum_j (1 + ||z_i - u_j||^2)^-1`.
pub fn student_t_assign(z: &Matrix, centers: &Centroids) -> Result<SoftAssignment> {
    let mut sims = pairwise_sqdist(z, &centers.0)?;
    for v in sims.as_mut_slice() {
        *v = 1.0 / (1.0 + *v);
    }
    row_normalize(&sims)
}

/// Confidence sharpening: row-normalize, square, row-normalize.
///
/// Preserves each row's argmax and never decreases the row maximum.
pub fn sharpen(s: &SoftAssignment) -> Result<SoftAssignment> {
    let mut p = row_normalize(s)?;
    for v in p.as_mut_slice() {
        *v *= *v;
    }
    row_normalize(&p)
}

/// Hard predictions: row argmax, ties broken toward the smallest index.
pub fn predict(p: &SoftAssignment) -> Vec<usize> {
    (0..p.rows())
        .map(|i| {
            let row = p.row(i);
            let mut arg = 0;
            for j in 1..row.len() {
                if row[j] > row[arg] {
                    arg = j;
                }
            }
            arg
        })
        .collect()
}
