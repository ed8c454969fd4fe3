//! Central finite-difference gradients, the oracle for every backward rule.

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Default perturbation for the element type: 1e-5 in float64, 1e-3 in float32.
pub fn default_eps<T: Float>() -> f64 {
    match T::DTYPE {
        crate::tensor::DType::F64 => 1e-5,
        crate::tensor::DType::F32 => 1e-3,
    }
}

/// (f(x + eps e_i) - f(x - eps e_i)) / 2 eps for every element i.
pub fn finite_diff_grad<T, F>(mut f: F, x: &Tensor<T>, eps: f64) -> Result<Tensor<T>>
where
    T: Float,
    F: FnMut(&Tensor<T>) -> Result<f64>,
{
    if eps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::Contract(format!("finite-difference eps must be positive, got {eps}")));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = T::lit(orig.as_f64() + eps);
        let plus = f(&probe)?;
        probe.data_mut()[i] = T::lit(orig.as_f64() - eps);
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad.push(T::lit((plus - minus) / (2.0 * eps)));
    }
    Tensor::new(x.shape().to_vec(), grad)
}

/// Like [`finite_diff_grad`] for functions that return a tensor; rejects
/// non-scalar results.
pub fn finite_diff_grad_tensor<T, F>(mut f: F, x: &Tensor<T>, eps: f64) -> Result<Tensor<T>>
where
    T: Float,
    F: FnMut(&Tensor<T>) -> Result<Tensor<T>>,
{
    finite_diff_grad(
        |probe| {
            let out = f(probe)?;
            if out.numel() != 1 {
                return Err(Error::Contract(format!(
                    "finite differences need a scalar function, got shape {:?}",
                    out.shape()
                )));
            }
            Ok(out.data()[0].as_f64())
        },
        x,
        eps,
    )
}

/// Max relative error between two gradient tensors:
/// max |a - b| / max(max |a|, max |b|), with 0 when both are zero.
pub fn rel_error<T: Float>(analytic: &Tensor<T>, numeric: &Tensor<T>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "rel_error: shape mismatch");
    let mut diff = 0.0f64;
    let mut scale = 0.0f64;
    for (a, n) in analytic.data().iter().zip(numeric.data()) {
        let (a, n) = (a.as_f64(), n.as_f64());
        diff = diff.max((a - n).abs());
        scale = scale.max(a.abs()).max(n.abs());
    }
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{Tape, Var};
    use crate::tensor::Rng;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor::<f64>::from_f64(vec![4], &[0.3, -1.0, 2.0, 7.0]).unwrap();
        let g = finite_diff_grad(|t| Ok(t.data().iter().sum::<f64>()), &x, 1e-5).unwrap();
        for v in g.data() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn square_at_three() {
        let x = Tensor::<f64>::scalar(3.0);
        let g = finite_diff_grad(|t| Ok(t.data()[0] * t.data()[0]), &x, 1e-5).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_eps_and_non_scalar() {
        let x = Tensor::<f64>::zeros(vec![2]);
        assert!(finite_diff_grad(|_| Ok(0.0), &x, 0.0).is_err());
        assert!(finite_diff_grad_tensor(|t| Ok(t.clone()), &x, 1e-5).is_err());
    }

    #[test]
    fn float32_default_eps() {
        assert_eq!(default_eps::<f32>(), 1e-3);
        assert_eq!(default_eps::<f64>(), 1e-5);
    }

    #[test]
    fn softmax_cross_entropy_matches_backward() {
        let mut rng = Rng::new(11);
        let logits = Tensor::<f64>::rand_uniform(vec![3, 5], -2.0, 2.0, &mut rng);
        let target = Tensor::<f64>::from_fn(vec![3, 5], |i| if i % 5 == (i / 5) { 1.0 } else { 0.0 });
        fn loss_of<'t>(x: &Tensor<f64>, tape: &'t Tape<f64>, target: &Tensor<f64>) -> (Var<'t, f64>, Var<'t, f64>) {
            let x = tape.param(x.clone());
            let p = x.softmax().unwrap();
            let logp = p.ln().unwrap();
            let t = tape.constant(target.clone());
            let l = logp.mul(&t).unwrap().sum().unwrap().neg().unwrap();
            (x, l)
        }
        let tape = Tape::new();
        let (x, l) = loss_of(&logits, &tape, &target);
        tape.backward(l).unwrap();
        let analytic = x.grad().unwrap();
        let numeric = finite_diff_grad(
            |t| {
                let tape = Tape::new();
                let (_, l) = loss_of(t, &tape, &target);
                l.value().item()
            },
            &logits,
            1e-5,
        )
        .unwrap();
        assert!(rel_error(&analytic, &numeric) < 1e-6);
    }
}
