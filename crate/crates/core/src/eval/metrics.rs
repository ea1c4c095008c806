use mn_autodiff::Matrix;

use super::EvalError;

fn check_labels(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<(), EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::Length(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(&label) = y_true.iter().chain(y_pred).find(|&&c| c >= k) {
        return Err(EvalError::LabelRange { label, classes: k });
    }
    Ok(())
}

/// Unweighted mean of per-class F1 over all `k` classes. A class absent from
/// both vectors scores 0.
pub fn macro_f1(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<f64, EvalError> {
    check_labels(y_true, y_pred, k)?;
    let mut tp = vec![0u64; k];
    let mut fp = vec![0u64; k];
    let mut fn_ = vec![0u64; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let total: f64 = (0..k)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if denom == 0 {
                0.0
            } else {
                (2 * tp[c]) as f64 / denom as f64
            }
        })
        .sum();
    Ok(total / k as f64)
}

/// Pooled F1 over all classes. For single-label data this is the accuracy.
pub fn micro_f1(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<f64, EvalError> {
    check_labels(y_true, y_pred, k)?;
    let correct = y_true.iter().zip(y_pred).filter(|(t, p)| t == p).count();
    let wrong = y_true.len() - correct;
    // tp / (tp + (fp + fn) / 2) with fp = fn = wrong
    Ok((2 * correct) as f64 / (2 * correct + 2 * wrong) as f64)
}

/// Area under the ROC curve of one score vector, ties counted as half.
fn binary_auc(positive: &[bool], score: &[f64]) -> Option<f64> {
    let n = score.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| score[a].total_cmp(&score[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && score[order[j + 1]] == score[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their midrank
        let midrank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if positive[idx] {
                pos_rank_sum += midrank;
            }
        }
        i = j + 1;
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Macro one-vs-rest ROC AUC. `scores` holds one column per class. Classes
/// without both positives and negatives are left out of the average.
pub fn auc(y_true: &[usize], scores: &Matrix, k: usize) -> Result<f64, EvalError> {
    if scores.rows() != y_true.len() {
        return Err(EvalError::Length(y_true.len(), scores.rows()));
    }
    if scores.cols() != k {
        return Err(EvalError::Length(k, scores.cols()));
    }
    if y_true.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(&label) = y_true.iter().find(|&&c| c >= k) {
        return Err(EvalError::LabelRange { label, classes: k });
    }
    let mut total = 0.0;
    let mut used = 0usize;
    let mut column = vec![0.0; y_true.len()];
    let mut positive = vec![false; y_true.len()];
    for c in 0..k {
        for i in 0..y_true.len() {
            column[i] = scores.get(i, c);
            positive[i] = y_true[i] == c;
        }
        if let Some(a) = binary_auc(&positive, &column) {
            total += a;
            used += 1;
        }
    }
    if used == 0 {
        return Err(EvalError::NoScorableClass);
    }
    Ok(total / used as f64)
}
