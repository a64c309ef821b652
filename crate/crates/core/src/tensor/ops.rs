use super::{Real, Tensor};
use crate::error::{shape_err, Error, Result};

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Logistic function, evaluated on the branch that never overflows `exp`.
#[inline]
pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err!("{:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

/// Mean binary cross-entropy of `sigmoid(logits)` against `target`, fused:
/// `max(z,0) − z·t + ln(1 + e^{−|z|})`. Returns the loss (accumulated in
/// f64) and its gradient `(σ(z) − t) / N`.
pub fn bce_with_logits<T: Real>(logits: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    same_shape(logits, target)?;
    if let Some(bad) = target.data().iter().find(|t| !(**t >= T::zero() && **t <= T::one())) {
        return Err(Error::InvalidInput(format!("BCE target {bad} outside [0, 1]")));
    }
    let n = T::from_f64(logits.len() as f64);
    let mut total = 0.0f64;
    let mut grad = logits.clone();
    for (g, &t) in grad.data_mut().iter_mut().zip(target.data()) {
        let z = *g;
        let term = z.max(T::zero()) - z * t + (-z.abs()).exp().ln_1p();
        total += term.as_f64();
        *g = (sigmoid_scalar(z) - t) / n;
    }
    Ok((total / logits.len() as f64, grad))
}

/// Mean squared error and its gradient `2(p − t) / N`.
pub fn mse_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    same_shape(pred, target)?;
    let n = T::from_f64(pred.len() as f64);
    let two = T::from_f64(2.0);
    let mut total = 0.0f64;
    let mut grad = pred.clone();
    for (g, &t) in grad.data_mut().iter_mut().zip(target.data()) {
        let d = *g - t;
        total += d.as_f64() * d.as_f64();
        *g = two * d / n;
    }
    Ok((total / pred.len() as f64, grad))
}
