use std::cmp::Ordering;

use crate::autodiff::sigmoid;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// A decoder query initialised from an encoder token.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectedQuery<T> {
    pub token: usize,
    /// `max_c sigmoid(logit[token, c])`.
    pub score: T,
    pub bbox: [T; 4],
}

/// Top-`k` tokens by their best class probability, descending. Equal scores
/// keep the lower token index first.
pub fn select_queries<T: Scalar>(logits: &Matrix<T>, boxes: &Matrix<T>, k: usize) -> Result<Vec<SelectedQuery<T>>> {
    let t = logits.rows();
    if boxes.rows() != t || boxes.cols() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "{} logit rows vs boxes {:?}",
            t,
            boxes.shape()
        )));
    }
    if k == 0 || k > t {
        return Err(Error::InvalidArgument(format!("cannot select {k} of {t} tokens")));
    }
    let scores: Vec<T> = (0..t)
        .map(|i| {
            let m = logits.row(i).iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            sigmoid(m)
        })
        .collect();
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    Ok(order
        .into_iter()
        .take(k)
        .map(|i| SelectedQuery {
            token: i,
            score: scores[i],
            bbox: [boxes.get(i, 0), boxes.get(i, 1), boxes.get(i, 2), boxes.get(i, 3)],
        })
        .collect())
}
