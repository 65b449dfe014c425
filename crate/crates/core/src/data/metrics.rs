use crate::error::{Error, Result};

/// Micro- and macro-averaged F1 over `index`.
///
/// Macro averages over all `num_classes` classes; a class with no true
/// positives (including one absent from both predictions and truth) scores 0.
pub fn micro_macro_f1(pred: &[usize], truth: &[i64], index: &[usize], num_classes: usize) -> Result<(f64, f64)> {
    if index.is_empty() {
        return Err(Error::InvalidInput("F1 over an empty index set".into()));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    let mut correct = 0usize;
    for &i in index {
        let (Some(&p), Some(&t)) = (pred.get(i), truth.get(i)) else {
            return Err(Error::IndexOutOfRange {
                index: i,
                n: pred.len().min(truth.len()),
            });
        };
        if t < 0 || t as usize >= num_classes || p >= num_classes {
            return Err(Error::InvalidInput(format!(
                "node {i}: label {t} / prediction {p} outside 0..{num_classes}"
            )));
        }
        let t = t as usize;
        if p == t {
            tp[t] += 1;
            correct += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let micro = correct as f64 / index.len() as f64;
    let macro_sum: f64 = (0..num_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if tp[c] == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Ok((micro, macro_sum / num_classes as f64))
}
