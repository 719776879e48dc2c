/// Central-difference gradient of a scalar function,
/// `(f(x + h e_i) - f(x - h e_i)) / (2 h)` for each coordinate.
///
/// Used by tests to validate analytic backward passes; the O(h^2) error of
/// the central stencil keeps a step of about 1e-6 accurate to roughly 1e-8
/// for well-scaled functions.
pub fn finite_diff_gradient<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        grad.push((plus - minus) / (2.0 * h));
    }
    grad
}
