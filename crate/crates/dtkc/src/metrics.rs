//! Label-based external validation: optimal-matching clustering accuracy and
//! normalized mutual information. Labels are only ever consumed here, after
//! training — the loss functions accept none.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("prediction and truth lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("label {label} out of range [0, {k})")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("empty label vectors")]
    Empty,
}

/// Minimum-cost perfect assignment on a square integer matrix
/// (Jonker-Volgenant style potentials, O(n³)). Returns `assign[row] = col`.
fn hungarian_min(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1]; // column -> row (1-based)
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
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
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        if p[j] != 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

fn validate(pred: &[usize], truth: &[usize], k: usize) -> Result<(), MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(MetricError::Empty);
    }
    for &l in pred.iter().chain(truth.iter()) {
        if l >= k {
            return Err(MetricError::LabelOutOfRange { label: l, k });
        }
    }
    Ok(())
}

/// Unsupervised clustering accuracy: the matched fraction under the best
/// one-to-one assignment of predicted clusters to true classes, computed by
/// optimal assignment on the k×k confusion matrix (zero-padded when either
/// side uses fewer than k ids).
pub fn hungarian_accuracy(pred: &[usize], truth: &[usize], k: usize) -> Result<f64, MetricError> {
    validate(pred, truth, k)?;
    let mut confusion = vec![vec![0i64; k]; k];
    for (&p, &t) in pred.iter().zip(truth.iter()) {
        confusion[p][t] += 1;
    }
    // maximize matches == minimize negated counts
    let cost: Vec<Vec<i64>> = confusion.iter().map(|r| r.iter().map(|&c| -c).collect()).collect();
    let assign = hungarian_min(&cost);
    let matched: i64 = (0..k).map(|c| confusion[c][assign[c]]).sum();
    Ok(matched as f64 / pred.len() as f64)
}

/// Normalized mutual information with the arithmetic-mean normalization:
/// NMI = I(pred; truth) / ((H(pred) + H(truth)) / 2), with 0/0 → 0.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64, MetricError> {
    let k = pred
        .iter()
        .chain(truth.iter())
        .copied()
        .max()
        .map(|m| m + 1)
        .unwrap_or(0);
    validate(pred, truth, k.max(1))?;
    let n = pred.len() as f64;
    let mut joint = vec![vec![0f64; k]; k];
    let mut pp = vec![0f64; k];
    let mut pt = vec![0f64; k];
    for (&p, &t) in pred.iter().zip(truth.iter()) {
        joint[p][t] += 1.0;
        pp[p] += 1.0;
        pt[t] += 1.0;
    }
    let entropy = |counts: &[f64]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| {
                let q = c / n;
                -q * q.ln()
            })
            .sum()
    };
    let h_pred = entropy(&pp);
    let h_truth = entropy(&pt);
    let mut mi = 0.0;
    for a in 0..k {
        for b in 0..k {
            let c = joint[a][b];
            if c > 0.0 {
                let pab = c / n;
                mi += pab * (pab / ((pp[a] / n) * (pt[b] / n))).ln();
            }
        }
    }
    let denom = 0.5 * (h_pred + h_truth);
    if denom <= 0.0 {
        return Ok(0.0);
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}
