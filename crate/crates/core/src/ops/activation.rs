use crate::tensor::{DiffArray, Scalar};

/// Elementwise `max(x, 0)`.
pub fn relu<T: Scalar>(x: &DiffArray<T>) -> DiffArray<T> {
    let mut y = DiffArray::zeros(x.shape());
    for (o, &v) in y.values.iter_mut().zip(&x.values) {
        *o = if v > T::zero() { v } else { T::zero() };
    }
    y
}

/// Subgradient 0 at exactly 0.
pub fn relu_backward<T: Scalar>(x: &mut DiffArray<T>, y: &DiffArray<T>) {
    for ((g, &v), &dy) in x.grad.iter_mut().zip(&x.values).zip(&y.grad) {
        if v > T::zero() {
            *g += dy;
        }
    }
}

pub fn sigmoid<T: Scalar>(x: &DiffArray<T>) -> DiffArray<T> {
    let mut y = DiffArray::zeros(x.shape());
    for (o, &v) in y.values.iter_mut().zip(&x.values) {
        *o = (T::one() + (-v).exp()).recip();
    }
    y
}

/// Uses the forward output: `dy/dx = y (1 - y)`.
pub fn sigmoid_backward<T: Scalar>(x: &mut DiffArray<T>, y: &DiffArray<T>) {
    for ((g, &s), &dy) in x.grad.iter_mut().zip(&y.values).zip(&y.grad) {
        *g += dy * s * (T::one() - s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values_and_mask() {
        let mut x = DiffArray::<f64>::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        let mut y = relu(&x);
        assert_eq!(y.values, vec![0.0, 0.0, 2.0]);
        y.grad = vec![1.0; 3];
        relu_backward(&mut x, &y);
        assert_eq!(x.grad, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn sigmoid_range() {
        let x = DiffArray::<f64>::from_vec(&[4], vec![-40.0, -1.0, 0.0, 40.0]).unwrap();
        let y = sigmoid(&x);
        assert_eq!(y.values[2], 0.5);
        assert!(y.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
