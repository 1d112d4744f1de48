//! Scaled dot-product attention for a single head.

use super::mat::{gemm, matmul, Mat};

/// Row-softmax of `q kᵀ / sqrt(d_k)`, with entries above the diagonal
/// excluded when `causal` is set.
pub fn attention_weights(q: &Mat, k: &Mat, causal: bool) -> Mat {
    assert_eq!(q.cols, k.cols, "query/key widths differ");
    let scale = 1.0 / (q.cols as f64).sqrt();
    let mut s = Mat::zeros(q.rows, k.rows);
    gemm(scale, q, false, k, true, 0.0, &mut s);
    for i in 0..s.rows {
        let row = s.row_mut(i);
        let visible = if causal { (i + 1).min(row.len()) } else { row.len() };
        let max = row[..visible].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in &mut row[..visible] {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in &mut row[..visible] {
            *v /= z;
        }
        row[visible..].fill(0.0);
    }
    s
}

/// `softmax(q kᵀ / sqrt(d_k) + mask) v`.
pub fn attention(q: &Mat, k: &Mat, v: &Mat, causal: bool) -> Mat {
    matmul(&attention_weights(q, k, causal), v)
}

/// Gradients of one attention head given the forward weights `p` and the
/// upstream gradient `d_out`. Returns (dq, dk, dv).
pub(crate) fn attention_backward(q: &Mat, k: &Mat, v: &Mat, p: &Mat, d_out: &Mat) -> (Mat, Mat, Mat) {
    let scale = 1.0 / (q.cols as f64).sqrt();
    let mut dp = Mat::zeros(p.rows, p.cols);
    gemm(1.0, d_out, false, v, true, 0.0, &mut dp);
    let mut dv = Mat::zeros(v.rows, v.cols);
    gemm(1.0, p, true, d_out, false, 0.0, &mut dv);
    // softmax backward, row-wise: ds = p * (dp - <dp, p>)
    let mut ds = dp;
    for i in 0..p.rows {
        let pr = p.row(i);
        let dot: f64 = ds.row(i).iter().zip(pr).map(|(a, b)| a * b).sum();
        for (g, &pv) in ds.row_mut(i).iter_mut().zip(pr) {
            *g = pv * (*g - dot);
        }
    }
    let mut dq = Mat::zeros(q.rows, q.cols);
    gemm(scale, &ds, false, k, false, 0.0, &mut dq);
    let mut dk = Mat::zeros(k.rows, k.cols);
    gemm(scale, &ds, true, q, false, 0.0, &mut dk);
    (dq, dk, dv)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Literal loops over the attention definition.
    fn dense_loop_oracle(q: &Mat, k: &Mat, v: &Mat) -> Mat {
        let t = q.rows;
        let dk = q.cols as f64;
        let mut out = Mat::zeros(t, v.cols);
        for i in 0..t {
            let scores: Vec<f64> = (0..=i)
                .map(|j| (0..q.cols).map(|c| q.get(i, c) * k.get(j, c)).sum::<f64>() / dk.sqrt())
                .collect();
            let denom: f64 = scores.iter().map(|s| s.exp()).sum();
            for j in 0..=i {
                let w = scores[j].exp() / denom;
                for c in 0..v.cols {
                    out.set(i, c, out.get(i, c) + w * v.get(j, c));
                }
            }
        }
        out
    }

    #[test]
    fn single_position_returns_value_row() {
        let q = Mat::from_vec(1, 2, vec![0.3, -1.0]);
        let k = Mat::from_vec(1, 2, vec![2.0, 5.0]);
        let v = Mat::from_vec(1, 3, vec![1.0, 2.0, 3.0]);
        assert_eq!(attention(&q, &k, &v, true), v);
    }

    #[test]
    fn zero_scores_average_visible_rows() {
        let q = Mat::zeros(2, 2);
        let k = Mat::zeros(2, 2);
        let v = Mat::from_vec(2, 2, vec![1.0, 2.0, 3.0, 6.0]);
        let out = attention(&q, &k, &v, true);
        assert_eq!(out.row(0), &[1.0, 2.0]);
        assert_eq!(out.row(1), &[2.0, 4.0]);
    }

    #[test]
    fn matches_dense_loop_oracle() {
        let mut rng = crate::seed::stream(5, "attn");
        for _ in 0..20 {
            let q = Mat::randn(4, 8, 1.0, &mut rng);
            let k = Mat::randn(4, 8, 1.0, &mut rng);
            let v = Mat::randn(4, 8, 1.0, &mut rng);
            let got = attention(&q, &k, &v, true);
            let want = dense_loop_oracle(&q, &k, &v);
            for (a, b) in got.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn weights_rows_sum_to_one() {
        let mut rng = crate::seed::stream(6, "attn");
        let q = Mat::randn(6, 4, 3.0, &mut rng);
        let k = Mat::randn(6, 4, 3.0, &mut rng);
        let p = attention_weights(&q, &k, true);
        for i in 0..6 {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.row(i)[i + 1..].iter().all(|&x| x == 0.0));
        }
    }
}
