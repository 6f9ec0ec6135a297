//! Clustering metrics: accuracy (best cluster-to-class matching), normalized
//! mutual information, and adjusted Rand index.
//!
//! All three are invariant to relabeling permutations of either argument.

use serde::{Deserialize, Serialize};

use crate::alignment::{cost_from_confusion, hungarian};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// The three scores reported throughout the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsTriple {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
}

pub fn compute_all(pred: &[usize], truth: &[usize]) -> Result<MetricsTriple> {
    Ok(MetricsTriple {
        acc: acc(pred, truth)?,
        nmi: nmi(pred, truth)?,
        ari: ari(pred, truth)?,
    })
}

fn check_lengths(pred: &[usize], truth: &[usize], context: &'static str) -> Result<usize> {
    if pred.len() != truth.len() {
        return Err(Error::dims(
            context,
            format!("{} predictions vs {} labels", pred.len(), truth.len()),
        ));
    }
    if pred.is_empty() {
        return Err(Error::dims(context, "empty label vectors"));
    }
    Ok(pred.len())
}

/// Contingency counts padded to a square `r x r` matrix,
/// `r = max label + 1` over both vectors.
fn contingency(pred: &[usize], truth: &[usize]) -> Matrix {
    let r = pred
        .iter()
        .chain(truth)
        .map(|&l| l + 1)
        .max()
        .unwrap_or(1);
    let mut m = Matrix::zeros(r, r);
    for (&p, &t) in pred.iter().zip(truth) {
        m[(p, t)] += 1.0;
    }
    m
}

/// Clustering accuracy: the matched fraction under the best
/// cluster-to-class permutation (solved via `hungarian` on the flipped
/// contingency counts).
pub fn acc(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let n = check_lengths(pred, truth, "acc")?;
    let counts = contingency(pred, truth);
    let perm = hungarian(&cost_from_confusion(&counts))?;
    let matched: f64 = perm
        .forward()
        .iter()
        .enumerate()
        .map(|(i, &j)| counts[(i, j)])
        .sum();
    Ok(matched / n as f64)
}

/// Normalized mutual information with arithmetic-mean normalization:
/// `I(pred; truth) / ((H(pred) + H(truth)) / 2)`.
///
/// If both partitions are single clusters the partitions are identical and
/// the score is 1; if exactly one side is a single cluster the mutual
/// information is zero and so is the score.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let n = check_lengths(pred, truth, "nmi")? as f64;
    let counts = contingency(pred, truth);
    let r = counts.rows();
    let mut row_tot = vec![0.0; r];
    let mut col_tot = vec![0.0; r];
    for i in 0..r {
        for j in 0..r {
            row_tot[i] += counts[(i, j)];
            col_tot[j] += counts[(i, j)];
        }
    }
    let entropy = |tot: &[f64]| -> f64 {
        tot.iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| {
                let p = c / n;
                -p * p.ln()
            })
            .sum()
    };
    let h_pred = entropy(&row_tot);
    let h_truth = entropy(&col_tot);
    if h_pred == 0.0 && h_truth == 0.0 {
        return Ok(1.0);
    }
    let mut info = 0.0;
    for i in 0..r {
        for j in 0..r {
            let c = counts[(i, j)];
            if c > 0.0 {
                info += (c / n) * ((n * c) / (row_tot[i] * col_tot[j])).ln();
            }
        }
    }
    let score = info / ((h_pred + h_truth) / 2.0);
    Ok(score.clamp(0.0, 1.0))
}

/// Adjusted Rand index via the pair-counting contingency formula:
/// `(RI - E[RI]) / (max RI - E[RI])`.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let n = check_lengths(pred, truth, "ari")? as f64;
    let counts = contingency(pred, truth);
    let r = counts.rows();
    let mut row_tot = vec![0.0; r];
    let mut col_tot = vec![0.0; r];
    for i in 0..r {
        for j in 0..r {
            row_tot[i] += counts[(i, j)];
            col_tot[j] += counts[(i, j)];
        }
    }
    let choose2 = |x: f64| x * (x - 1.0) / 2.0;
    let index: f64 = (0..r)
        .flat_map(|i| (0..r).map(move |j| (i, j)))
        .map(|(i, j)| choose2(counts[(i, j)]))
        .sum();
    let a: f64 = row_tot.iter().map(|&x| choose2(x)).sum();
    let b: f64 = col_tot.iter().map(|&x| choose2(x)).sum();
    let expected = a * b / choose2(n);
    let max = (a + b) / 2.0;
    if (max - expected).abs() < 1e-12 {
        // Both partitions trivial (all-singletons or single-cluster): they
        // are then identical, so perfect agreement.
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn all_perfect_on_identical() {
        let labels = vec![0, 0, 1, 1, 2, 2];
        assert_eq!(acc(&labels, &labels).unwrap(), 1.0);
        assert!((nmi(&labels, &labels).unwrap() - 1.0).abs() < 1e-12);
        assert!((ari(&labels, &labels).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_invariant_to_permutation() {
        let truth = vec![0, 0, 1, 1, 2, 2, 0, 1, 2];
        let pred: Vec<usize> = truth.iter().map(|&l| (l + 1) % 3).collect();
        assert_eq!(acc(&pred, &truth).unwrap(), 1.0);
        assert!((nmi(&pred, &truth).unwrap() - 1.0).abs() < 1e-12);
        assert!((ari(&pred, &truth).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_prediction_has_zero_nmi() {
        let truth = vec![0, 0, 1, 1];
        let pred = vec![0, 0, 0, 0];
        assert_eq!(nmi(&pred, &truth).unwrap(), 0.0);
    }

    #[test]
    fn both_single_cluster_is_perfect() {
        let a = vec![0, 0, 0];
        let b = vec![1, 1, 1];
        assert_eq!(nmi(&a, &b).unwrap(), 1.0);
        assert_eq!(ari(&a, &b).unwrap(), 1.0);
        assert_eq!(acc(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(acc(&[0], &[0, 1]).is_err());
        assert!(nmi(&[0], &[0, 1]).is_err());
        assert!(ari(&[0], &[0, 1]).is_err());
    }

    fn brute_force_acc(pred: &[usize], truth: &[usize], k: usize) -> f64 {
        // Max matched fraction over all k! relabelings of pred.
        let mut perm: Vec<usize> = (0..k).collect();
        let mut best = 0.0;
        fn rec(perm: &mut Vec<usize>, at: usize, pred: &[usize], truth: &[usize], best: &mut f64) {
            if at == perm.len() {
                let hits = pred
                    .iter()
                    .zip(truth)
                    .filter(|&(&p, &t)| perm[p] == t)
                    .count();
                let frac = hits as f64 / pred.len() as f64;
                if frac > *best {
                    *best = frac;
                }
                return;
            }
            for i in at..perm.len() {
                perm.swap(at, i);
                rec(perm, at + 1, pred, truth, best);
                perm.swap(at, i);
            }
        }
        rec(&mut perm, 0, pred, truth, &mut best);
        best
    }

    #[test]
    fn acc_matches_brute_force_permutation_max() {
        let mut rng = RngStream::new(1, 0);
        for _ in 0..100 {
            let k = 2 + rng.below(5); // 2..=6
            let n = 10 + rng.below(30);
            let pred: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
            let truth: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
            let got = acc(&pred, &truth).unwrap();
            let want = brute_force_acc(&pred, &truth, k);
            assert!((got - want).abs() < 1e-12, "got {got} want {want}");
        }
    }

    /// Independent NMI oracle: mutual information via the three-entropy
    /// identity I = H(pred) + H(truth) - H(joint).
    fn nmi_oracle(pred: &[usize], truth: &[usize]) -> f64 {
        let n = pred.len() as f64;
        let mut joint = std::collections::HashMap::new();
        let mut pc = std::collections::HashMap::new();
        let mut tc = std::collections::HashMap::new();
        for (&p, &t) in pred.iter().zip(truth) {
            *joint.entry((p, t)).or_insert(0.0) += 1.0;
            *pc.entry(p).or_insert(0.0) += 1.0;
            *tc.entry(t).or_insert(0.0) += 1.0;
        }
        let h = |counts: &std::collections::HashMap<usize, f64>| -> f64 {
            counts
                .values()
                .map(|&c| {
                    let p = c / n;
                    -p * p.ln()
                })
                .sum()
        };
        let h_joint: f64 = joint
            .values()
            .map(|&c| {
                let p = c / n;
                -p * p.ln()
            })
            .sum();
        let (hp, ht) = (h(&pc), h(&tc));
        if hp == 0.0 && ht == 0.0 {
            return 1.0;
        }
        ((hp + ht - h_joint) / ((hp + ht) / 2.0)).clamp(0.0, 1.0)
    }

    #[test]
    fn nmi_matches_entropy_identity_oracle() {
        let mut rng = RngStream::new(2, 0);
        for _ in 0..100 {
            let k = 2 + rng.below(4);
            let n = 20 + rng.below(40);
            let pred: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
            let truth: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
            let got = nmi(&pred, &truth).unwrap();
            let want = nmi_oracle(&pred, &truth);
            assert!((got - want).abs() < 1e-10, "got {got} want {want}");
        }
    }

    /// Independent ARI oracle: O(n^2) pair counting.
    fn ari_oracle(pred: &[usize], truth: &[usize]) -> f64 {
        let n = pred.len();
        let (mut n11, mut n00, mut n10, mut n01) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for i in 0..n {
            for j in i + 1..n {
                let same_p = pred[i] == pred[j];
                let same_t = truth[i] == truth[j];
                match (same_p, same_t) {
                    (true, true) => n11 += 1.0,
                    (false, false) => n00 += 1.0,
                    (true, false) => n10 += 1.0,
                    (false, true) => n01 += 1.0,
                }
            }
        }
        let denom = (n11 + n10) * (n10 + n00) + (n11 + n01) * (n01 + n00);
        if denom == 0.0 {
            return 1.0;
        }
        2.0 * (n11 * n00 - n10 * n01) / denom
    }

    #[test]
    fn ari_matches_pair_counting_oracle() {
        let mut rng = RngStream::new(3, 0);
        for _ in 0..100 {
            let k = 2 + rng.below(4);
            let n = 15 + rng.below(30);
            let pred: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
            let truth: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
            let got = ari(&pred, &truth).unwrap();
            let want = ari_oracle(&pred, &truth);
            assert!((got - want).abs() < 1e-10, "got {got} want {want}");
        }
    }

    #[test]
    fn ari_can_go_negative_for_adversarial_labelings() {
        // Worse-than-chance pairing.
        let truth = vec![0, 0, 1, 1];
        let pred = vec![0, 1, 0, 1];
        let v = ari(&pred, &truth).unwrap();
        assert!(v <= 0.0);
        assert!(v >= -1.0);
    }

    #[test]
    fn metrics_in_valid_ranges_on_random_pairs() {
        let mut rng = RngStream::new(4, 0);
        for _ in 0..50 {
            let k = 2 + rng.below(4);
            let n = 10 + rng.below(20);
            let pred: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
            let truth: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
            let m = compute_all(&pred, &truth).unwrap();
            assert!((0.0..=1.0).contains(&m.acc));
            assert!((0.0..=1.0).contains(&m.nmi));
            assert!((-1.0..=1.0).contains(&m.ari));
        }
    }
}
