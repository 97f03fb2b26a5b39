use super::Tensor;
use crate::error::{Error, Result};

/// Compares the analytic gradient of a scalar function against central
/// differences and returns the worst relative error,
/// `|analytic - numeric| / max(1e-8, |numeric|)`, over all coordinates of `x`.
///
/// `f` is called once on a differentiable copy of `x` and twice per
/// coordinate on perturbed constant copies.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::invalid(
            "grad_check",
            format!("eps must be positive, got {eps}"),
        ));
    }
    let shape = x.shape().to_vec();
    let leaf = Tensor::param(shape.clone(), x.data().to_vec())?;
    let out = f(&leaf)?;
    if out.numel() != 1 {
        return Err(Error::NonScalarLoss(out.shape().to_vec()));
    }
    out.backward()?;
    let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);

    let mut probe = x.data().to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = f(&Tensor::new(shape.clone(), probe.clone())?)?.item()?;
        probe[i] = orig - eps;
        let minus = f(&Tensor::new(shape.clone(), probe.clone())?)?.item()?;
        probe[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let rel = (analytic[i] - numeric).abs() / numeric.abs().max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::new(vec![4], vec![0.3, -1.2, 2.0, 0.0]).unwrap();
        let err = grad_check(|t| Ok(t.sum()), &x, 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn rejects_non_scalar_output() {
        let x = Tensor::new(vec![2], vec![0.3, -1.2]).unwrap();
        assert!(matches!(
            grad_check(|t| Ok(t.relu()), &x, 1e-5),
            Err(Error::NonScalarLoss(_))
        ));
        assert!(grad_check(|t| Ok(t.sum()), &x, 0.0).is_err());
    }
}
