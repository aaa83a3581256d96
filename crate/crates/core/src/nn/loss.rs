use ndarray::{Array1, Array2, ArrayView1};

use super::Scalar;

/// Numerically stable softmax of one logit vector.
pub fn softmax<T: Scalar>(logits: ArrayView1<'_, T>) -> Array1<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut p = logits.mapv(|z| (z - max).exp());
    let sum = p.sum();
    p /= sum;
    p
}

pub fn softmax_rows<T: Scalar>(logits: &Array2<T>) -> Array2<T> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let p = softmax(row.view());
        row.assign(&p);
    }
    out
}

/// Mean cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn cross_entropy<T: Scalar>(logits: &Array2<T>, labels: &[usize]) -> (T, Array2<T>) {
    assert_eq!(logits.nrows(), labels.len());
    let n = T::of(labels.len() as f64);
    let mut grad = softmax_rows(logits);
    let mut loss = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&z| (z - max).exp()).sum::<T>().ln() + max;
        loss += lse - row[y];
        grad[[i, y]] -= T::one();
    }
    grad /= n;
    (loss / n, grad)
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: impl IntoIterator<Item = T>) -> usize {
    let mut best = 0;
    let mut best_val: Option<T> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best_val {
            Some(b) if !(v > b) => {}
            _ => {
                best = i;
                best_val = Some(v);
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax([1.0, 1.0, 1.0]), 0);
        assert_eq!(argmax([0.0, 2.0, 2.0]), 1);
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let logits: Array2<f64> = array![[0.3, -1.2, 2.0], [0.0, 0.5, -0.5]];
        let labels = [2, 0];
        let (_, grad) = cross_entropy(&logits, &labels);
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut up = logits.clone();
                up[[i, j]] += h;
                let mut down = logits.clone();
                down[[i, j]] -= h;
                let fd = (cross_entropy(&up, &labels).0 - cross_entropy(&down, &labels).0) / (2.0 * h);
                assert!((fd - grad[[i, j]]).abs() < 1e-8);
            }
        }
    }
}
