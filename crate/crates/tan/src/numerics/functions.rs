//! Forward definitions of the model's non-linear primitives.
//!
//! These are plain functions over slices; the recorded operations in
//! [`super::tape`] call into them so the forward path is identical whether
//! or not gradients are wanted.

use super::tensor::{Scalar, Tensor, TensorError};

/// Additive guard inside square roots of vector norms. Keeps gradients
/// finite at the origin while perturbing forward values by less than 1e-9
/// anywhere the fixtures look.
pub const NORM_GUARD: f64 = 1e-12;

/// Logistic function, evaluated without overflow for large |x|.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn guarded_norm<T: Scalar>(v: &[T]) -> T {
    let sum_sq: T = v.iter().map(|&x| x * x).sum();
    (sum_sq + T::from_f64(NORM_GUARD)).sqrt()
}

/// Rescales a vector to length ‖v‖²/(1+‖v‖²) while preserving its direction.
///
/// Computed as `(n/(1+n²))·v` with `n = sqrt(Σv² + 1e-12)`, so the zero
/// vector maps to the zero vector exactly and the gradient stays finite.
pub fn squash<T: Scalar>(v: &[T]) -> Vec<T> {
    let n = guarded_norm(v);
    let factor = n / (T::one() + n * n);
    v.iter().map(|&x| factor * x).collect()
}

/// Softmax over the unmasked positions; masked positions are exactly zero.
///
/// Fails with [`TensorError::AllMasked`] when no position is unmasked.
pub fn masked_softmax<T: Scalar>(scores: &[T], mask: &[bool]) -> Result<Vec<T>, TensorError> {
    if scores.len() != mask.len() {
        return Err(TensorError::MaskLength {
            scores: scores.len(),
            mask: mask.len(),
        });
    }
    let mut max = T::neg_infinity();
    for (&s, &m) in scores.iter().zip(mask) {
        if m && s > max {
            max = s;
        }
    }
    if max == T::neg_infinity() {
        return Err(TensorError::AllMasked);
    }
    let mut out = vec![T::zero(); scores.len()];
    let mut total = T::zero();
    for (i, (&s, &m)) in scores.iter().zip(mask).enumerate() {
        if m {
            let e = (s - max).exp();
            out[i] = e;
            total = total + e;
        }
    }
    for o in &mut out {
        *o = *o / total;
    }
    Ok(out)
}

/// Mean squared error `(1/n) Σ (yᵢ − ŷᵢ)²` over all elements.
pub fn mse_loss<T: Scalar>(pred: &[T], target: &[T]) -> Result<T, TensorError> {
    if pred.len() != target.len() {
        return Err(TensorError::ShapeMismatch {
            op: "mse_loss",
            left: vec![pred.len()],
            right: vec![target.len()],
        });
    }
    let n = T::from_f64(pred.len() as f64);
    let sum: T = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum();
    Ok(sum / n)
}

/// Each row rescaled to unit length. A row of zero length is an error.
pub fn row_normalized<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    if t.shape().len() != 2 {
        return Err(TensorError::RankMismatch {
            op: "row_normalized",
            got: t.shape().to_vec(),
        });
    }
    let (rows, cols) = (t.rows(), t.cols());
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let row = t.row(r);
        if row.iter().all(|&x| x == T::zero()) {
            return Err(TensorError::DegenerateRow { row: r });
        }
        let n = guarded_norm(row);
        data.extend(row.iter().map(|&x| x / n));
    }
    Tensor::matrix(rows, cols, data)
}

/// Frobenius norm of `Tₙ·Tₙᵀ − I` where `Tₙ` is the row-normalized topic
/// matrix. Zero exactly when the rows are pairwise orthogonal.
pub fn orthogonality_penalty<T: Scalar>(t: &Tensor<T>) -> Result<T, TensorError> {
    let tn = row_normalized(t)?;
    let k = tn.rows();
    let mut sum_sq = T::zero();
    for i in 0..k {
        for j in 0..k {
            let dot: T = tn.row(i).iter().zip(tn.row(j)).map(|(&a, &b)| a * b).sum();
            let target = if i == j { T::one() } else { T::zero() };
            sum_sq = sum_sq + (dot - target) * (dot - target);
        }
    }
    Ok(sum_sq.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn squash_zero_vector_stays_zero() {
        assert_eq!(squash(&[0.0f64, 0.0, 0.0]), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn squash_unit_vector_halves() {
        let out = squash(&[1.0f64, 0.0]);
        assert_abs_diff_eq!(out[0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(out[1], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn squash_three_four_matches_hand_evaluation() {
        // ‖v‖ = 5, factor 25/26 on the unit vector (0.6, 0.8).
        let out = squash(&[3.0f64, 4.0]);
        assert_abs_diff_eq!(out[0], 15.0 / 26.0, epsilon = 1e-9);
        assert_abs_diff_eq!(out[1], 20.0 / 26.0, epsilon = 1e-9);
    }

    #[test]
    fn squash_norm_bound_direction_and_monotonicity() {
        // 1e5 random vectors, dims 1..=512, magnitudes 1e-8..=1e4.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut previous: Option<(f64, f64)> = None;
        for _ in 0..100_000 {
            let dim = rng.gen_range(1..=512usize);
            let magnitude = 10f64.powf(rng.gen_range(-8.0..4.0));
            let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = norm(&v);
            if n == 0.0 {
                continue;
            }
            for x in &mut v {
                *x *= magnitude / n;
            }
            let out = squash(&v);
            let out_norm = norm(&out);
            assert!((0.0..1.0).contains(&out_norm), "‖squash(v)‖ = {out_norm}");
            let cos = v
                .iter()
                .zip(&out)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / (norm(&v) * out_norm);
            assert_abs_diff_eq!(cos, 1.0, epsilon = 1e-9);
            if let Some((prev_in, prev_out)) = previous {
                if prev_in < magnitude {
                    assert!(prev_out < out_norm);
                } else if prev_in > magnitude {
                    assert!(prev_out > out_norm);
                }
            }
            previous = Some((magnitude, out_norm));
        }
    }

    #[test]
    fn masked_softmax_uniform_scores() {
        let out = masked_softmax(&[0.0f64, 0.0, 0.0], &[true, true, true]).unwrap();
        for o in out {
            assert_abs_diff_eq!(o, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn masked_softmax_ln2_scores() {
        let out = masked_softmax(&[2.0f64.ln(), 0.0, 0.0], &[true, true, true]).unwrap();
        assert_abs_diff_eq!(out[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(out[2], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn masked_softmax_single_unmasked_position() {
        let out = masked_softmax(&[5.0f64, 7.0], &[true, false]).unwrap();
        assert_eq!(out, vec![1.0, 0.0]);
    }

    #[test]
    fn masked_softmax_all_masked_is_an_error() {
        assert_eq!(
            masked_softmax(&[1.0f64, 2.0], &[false, false]).unwrap_err(),
            TensorError::AllMasked
        );
    }

    #[test]
    fn mse_loss_fixtures() {
        assert_eq!(mse_loss(&[0.3f64, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            mse_loss(&[0.5f64, 0.5], &[1.0, 0.0]).unwrap(),
            0.25,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            mse_loss(&[0.0f64; 4], &[1.0; 4]).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert!(mse_loss(&[0.0f64], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn penalty_identity_rows_is_zero() {
        let t = Tensor::matrix(3, 3, vec![1.0f64, 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        assert_abs_diff_eq!(orthogonality_penalty(&t).unwrap(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn penalty_duplicated_unit_rows_is_sqrt_two() {
        // Tₙ·Tₙᵀ − I = [[0,1],[1,0]], Frobenius norm √2.
        let t = Tensor::matrix(2, 2, vec![1.0f64, 0.0, 1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(
            orthogonality_penalty(&t).unwrap(),
            2.0f64.sqrt(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn penalty_sixty_degree_rows() {
        // Off-diagonals cos 60° = 0.5, √(0.25 + 0.25) = √0.5.
        let t = Tensor::matrix(2, 2, vec![1.0f64, 0.0, 0.5, 0.75f64.sqrt()]).unwrap();
        assert_abs_diff_eq!(
            orthogonality_penalty(&t).unwrap(),
            0.5f64.sqrt(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn penalty_rejects_zero_row() {
        let t = Tensor::matrix(2, 2, vec![1.0f64, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(
            orthogonality_penalty(&t).unwrap_err(),
            TensorError::DegenerateRow { row: 1 }
        );
    }

    proptest! {
        #[test]
        fn squash_output_shorter_than_one(v in proptest::collection::vec(-1e4f64..1e4, 1..32)) {
            let out = squash(&v);
            prop_assert!(norm(&out) < 1.0);
        }

        #[test]
        fn masked_softmax_sums_to_one_and_shift_invariant(
            scores in proptest::collection::vec(-30.0f64..30.0, 1..24),
            offset in -50.0f64..50.0,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut mask: Vec<bool> = (0..scores.len()).map(|_| rng.gen_bool(0.7)).collect();
            mask[0] = true;
            let out = masked_softmax(&scores, &mask).unwrap();
            let total: f64 = out.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            for (o, &m) in out.iter().zip(&mask) {
                prop_assert!(*o >= 0.0);
                if !m {
                    prop_assert_eq!(*o, 0.0);
                }
            }
            let shifted: Vec<f64> = scores.iter().map(|s| s + offset).collect();
            let out2 = masked_softmax(&shifted, &mask).unwrap();
            for (a, b) in out.iter().zip(&out2) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn penalty_invariant_under_positive_row_scaling(
            rows in 2usize..5,
            cols in 2usize..6,
            seed in any::<u64>(),
            scale in 1e-3f64..1e3,
            which in any::<usize>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = Tensor::<f64>::rand_uniform(&[rows, cols], -1.0, 1.0, &mut rng);
            prop_assume!((0..rows).all(|r| t.row(r).iter().any(|&x| x != 0.0)));
            let base = orthogonality_penalty(&t).unwrap();
            let mut scaled = t.clone();
            let r = which % rows;
            for c in 0..cols {
                let i = r * cols + c;
                scaled.data_mut()[i] *= scale;
            }
            let after = orthogonality_penalty(&scaled).unwrap();
            prop_assert!((base - after).abs() < 1e-9, "{base} vs {after}");
        }
    }
}
