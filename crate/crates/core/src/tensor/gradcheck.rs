use super::{Element, Tensor4};

/// Central-difference gradient of a scalar function:
/// `(f(x + εe_i) - f(x - εe_i)) / 2ε` for every element `i`.
pub fn finite_difference_grad<T: Element>(mut f: impl FnMut(&Tensor4<T>) -> T, x: &Tensor4<T>, eps: T) -> Tensor4<T> {
    let mut probe = x.clone();
    let mut grad = Tensor4::zeros(x.shape());
    let two_eps = eps + eps;
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let hi = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let lo = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (hi - lo) / two_eps;
    }
    grad
}

/// `‖a - b‖₂ / max(‖a‖₂, ‖b‖₂)` over the flattened slices; 0 when both vanish.
pub fn relative_error<T: Element>(a: &[T], b: &[T]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_error operands differ in length");
    let (mut diff, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.to_f64().unwrap_or(f64::NAN), y.to_f64().unwrap_or(f64::NAN));
        diff += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    let denom = na.max(nb).sqrt();
    if denom == 0.0 {
        return diff.sqrt();
    }
    diff.sqrt() / denom
}
