//! Central finite-difference oracle for reverse-mode gradients.

use crate::tensor::Tensor;
use crate::var::{backward, Var};

/// Compare analytic gradients against central differences for a scalar
/// function of several tensors. Returns the max relative error over all
/// input elements; the denominator saturates at 1 so small-gradient entries
/// are judged absolutely.
pub fn finite_diff_check<F>(build: F, inputs: &[Tensor], eps: f32) -> f32
where
    F: Fn(&[Var]) -> Var,
{
    let leaves: Vec<Var> = inputs.iter().map(|t| Var::leaf(t.clone())).collect();
    let loss = build(&leaves);
    assert_eq!(loss.value().numel(), 1, "finite_diff_check needs a scalar function");
    let grads = backward(&loss);

    let eval = |tensors: &[Tensor]| -> f32 {
        let leaves: Vec<Var> = tensors.iter().map(|t| Var::leaf(t.clone())).collect();
        build(&leaves).scalar_value()
    };

    let mut worst = 0.0f32;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(&leaves[i])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.shape()));
        for e in 0..input.numel() {
            let orig = input.data()[e];
            work[i].data_mut()[e] = orig + eps;
            let plus = eval(&work);
            work[i].data_mut()[e] = orig - eps;
            let minus = eval(&work);
            work[i].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[e];
            let denom = a.abs().max(numeric.abs()).max(1.0);
            let rel = (a - numeric).abs() / denom;
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::var::{mean_all, sum_all};

    #[test]
    fn sum_is_exact_at_binary_eps() {
        // Exact binary inputs and eps = 2^-10: every float op lands on a
        // representable value, so the central difference is exactly 1.
        let x = Tensor::from_vec(&[4], vec![0.5, -1.0, 2.0, 0.0]);
        let err = finite_diff_check(|vars| sum_all(&vars[0]), &[x], 0.0009765625);
        assert_eq!(err, 0.0);
    }

    #[test]
    fn mean_is_within_layer_tolerance() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.25]);
        let err = finite_diff_check(|vars| mean_all(&vars[0]), &[x], 1e-3);
        assert!(err < 1e-3, "err {err}");
    }
}
