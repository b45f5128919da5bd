//! Activation, pooling and loss primitives with hand-written gradients.

use crate::error::{Error, Result};

/// Elementwise `max(0, x)`.
pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Passes `dy` where `x > 0`; the subgradient at 0 is 0.
pub fn relu_backward(x: &[f64], dy: &[f64]) -> Vec<f64> {
    x.iter().zip(dy).map(|(&v, &d)| if v > 0.0 { d } else { 0.0 }).collect()
}

/// Column maxima of a row-major `rows × cols` set, and the row each came from.
/// Ties go to the lowest row.
pub fn set_maxpool(m: &[f64], rows: usize, cols: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    if rows == 0 {
        return Err(Error::Empty("max-pool over an empty set"));
    }
    if m.len() != rows * cols {
        return Err(Error::shape(format!("{} values for a {rows}x{cols} set", m.len())));
    }
    let mut out = m[..cols].to_vec();
    let mut arg = vec![0usize; cols];
    for r in 1..rows {
        let row = &m[r * cols..(r + 1) * cols];
        for c in 0..cols {
            if row[c] > out[c] {
                out[c] = row[c];
                arg[c] = r;
            }
        }
    }
    Ok((out, arg))
}

/// Routes each column's gradient to the row that won it.
pub fn set_maxpool_backward(dy: &[f64], argmax_rows: &[usize], rows: usize) -> Vec<f64> {
    let cols = dy.len();
    let mut dm = vec![0.0; rows * cols];
    for (c, (&d, &r)) in dy.iter().zip(argmax_rows).enumerate() {
        dm[r * cols + c] += d;
    }
    dm
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Weighted cross-entropy `-w_t log p_t` and its gradient `w_t (p - onehot_t)`.
pub fn softmax_ce(logits: &[f64], target: usize, class_weights: &[f64]) -> Result<(f64, Vec<f64>)> {
    let k = logits.len();
    if target >= k {
        return Err(Error::LabelOutOfRange { label: target as u32, num_classes: k });
    }
    if class_weights.len() != k {
        return Err(Error::shape(format!("{} class weights for {k} logits", class_weights.len())));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let w = class_weights[target];
    let loss = -w * (logits[target] - max - log_sum);
    let mut grad = softmax(logits);
    grad[target] -= 1.0;
    grad.iter_mut().for_each(|g| *g *= w);
    Ok((loss, grad))
}

pub const DICE_EPSILON: f64 = 1.0;

/// Soft Dice averaged over classes, for `rows × k` probabilities and one-hot targets.
pub fn dice_loss(probs: &[f64], targets: &[f64], k: usize) -> Result<(f64, Vec<f64>)> {
    if k == 0 || probs.len() != targets.len() || probs.len() % k != 0 {
        return Err(Error::shape("dice loss needs equal-shape rows x k inputs"));
    }
    let mut inter = vec![0.0; k];
    let mut psum = vec![0.0; k];
    let mut tsum = vec![0.0; k];
    for (p, t) in probs.chunks_exact(k).zip(targets.chunks_exact(k)) {
        for c in 0..k {
            inter[c] += p[c] * t[c];
            psum[c] += p[c];
            tsum[c] += t[c];
        }
    }
    let mut loss = 0.0;
    let mut denom = vec![0.0; k];
    for c in 0..k {
        denom[c] = psum[c] + tsum[c] + DICE_EPSILON;
        loss += 1.0 - (2.0 * inter[c] + DICE_EPSILON) / denom[c];
    }
    loss /= k as f64;

    let mut grad = vec![0.0; probs.len()];
    for (g, t) in grad.chunks_exact_mut(k).zip(targets.chunks_exact(k)) {
        for c in 0..k {
            let num = 2.0 * t[c] * denom[c] - (2.0 * inter[c] + DICE_EPSILON);
            g[c] = -num / (denom[c] * denom[c]) / k as f64;
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{finite_difference_grad, max_relative_error};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_fixtures() {
        assert_eq!(relu(&[-1.0, 0.0, 2.0]), vec![0.0, 0.0, 2.0]);
        assert_eq!(relu_backward(&[-1.0, 0.0, 2.0], &[5.0, 5.0, 5.0]), vec![0.0, 0.0, 5.0]);
    }

    #[test]
    fn relu_matches_finite_differences_away_from_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x: Vec<f64> = (0..8)
                .map(|_| loop {
                    let v: f64 = rng.random_range(-2.0..2.0);
                    if v.abs() >= 1e-3 {
                        break v;
                    }
                })
                .collect();
            let c: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f = |v: &[f64]| relu(v).iter().zip(&c).map(|(a, b)| a * b).sum::<f64>();
            let num = finite_difference_grad(f, &x, 1e-6).unwrap();
            let ana = relu_backward(&x, &c);
            assert!(max_relative_error(&ana, &num) < 1e-6);
        }
    }

    #[test]
    fn maxpool_fixtures() {
        assert_eq!(set_maxpool(&[1.0, 5.0, 3.0, 2.0], 2, 2).unwrap().0, vec![3.0, 5.0]);
        assert_eq!(set_maxpool(&[4.0, -1.0], 1, 2).unwrap().0, vec![4.0, -1.0]);
        let (_, arg) = set_maxpool(&[2.0, 2.0, 2.0, 1.0], 2, 2).unwrap();
        assert_eq!(arg, vec![0, 0]);
        assert!(set_maxpool(&[], 0, 3).is_err());
        let dm = set_maxpool_backward(&[1.0, 2.0], &[1, 0], 2);
        assert_eq!(dm, vec![0.0, 2.0, 1.0, 0.0]);
    }

    #[test]
    fn ce_fixtures() {
        let (loss, _) = softmax_ce(&[0.3; 4], 2, &[1.0; 4]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        let (loss, grad) = softmax_ce(&[0.0, 800.0], 1, &[1.0, 1.0]).unwrap();
        assert!(loss.abs() < 1e-12 && grad.iter().all(|g| g.abs() < 1e-12));
        let (loss, grad) = softmax_ce(&[1.0, 2.0], 0, &[0.0, 1.0]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
        assert!(softmax_ce(&[1.0, 2.0], 2, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn ce_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let k = rng.random_range(2..10);
            let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..2.0)).collect();
            let t = rng.random_range(0..k);
            let (_, ana) = softmax_ce(&logits, t, &w).unwrap();
            let num = finite_difference_grad(|l| softmax_ce(l, t, &w).unwrap().0, &logits, 1e-6).unwrap();
            assert!(max_relative_error(&ana, &num) < 1e-5);
        }
    }

    fn one_hot_rows(labels: &[usize], k: usize) -> Vec<f64> {
        let mut t = vec![0.0; labels.len() * k];
        for (i, &l) in labels.iter().enumerate() {
            t[i * k + l] = 1.0;
        }
        t
    }

    #[test]
    fn dice_fixtures() {
        let labels: Vec<usize> = (0..120).map(|i| i % 3).collect();
        let t = one_hot_rows(&labels, 3);
        let (loss, _) = dice_loss(&t, &t, 3).unwrap();
        assert!(loss < 1e-3);

        // predictions shifted by one class never overlap the targets
        let shifted: Vec<usize> = labels.iter().map(|l| (l + 1) % 3).collect();
        let p = one_hot_rows(&shifted, 3);
        let (loss, _) = dice_loss(&p, &t, 3).unwrap();
        let expected = 1.0 - DICE_EPSILON / (40.0 + 40.0 + DICE_EPSILON);
        assert!((loss - expected).abs() < 1e-12);
        assert!(dice_loss(&p[..6], &t, 3).is_err());
    }

    #[test]
    fn dice_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let (n, k) = (rng.random_range(2..8), rng.random_range(2..5));
            let logits: Vec<f64> = (0..n * k).map(|_| rng.random_range(-2.0..2.0)).collect();
            let probs: Vec<f64> = logits.chunks(k).flat_map(softmax).collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let t = one_hot_rows(&labels, k);
            let (_, ana) = dice_loss(&probs, &t, k).unwrap();
            let num = finite_difference_grad(|p| dice_loss(p, &t, k).unwrap().0, &probs, 1e-6).unwrap();
            assert!(max_relative_error(&ana, &num) < 1e-5);
        }
    }

    proptest! {
        #[test]
        fn maxpool_permutation_invariant(m in prop::collection::vec(-5.0f64..5.0, 12), shift in 0usize..4) {
            let (rows, cols) = (4, 3);
            let mut rotated = Vec::with_capacity(12);
            for r in 0..rows {
                let src = (r + shift) % rows;
                rotated.extend_from_slice(&m[src * cols..(src + 1) * cols]);
            }
            let (a, _) = set_maxpool(&m, rows, cols).unwrap();
            let (b, arg) = set_maxpool(&rotated, rows, cols).unwrap();
            prop_assert_eq!(a, b);
            let dm = set_maxpool_backward(&[1.0; 3], &arg, rows);
            for c in 0..cols {
                let hits = (0..rows).filter(|r| dm[r * cols + c] != 0.0).count();
                prop_assert_eq!(hits, 1);
            }
        }
    }
}
