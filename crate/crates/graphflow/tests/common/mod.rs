//! Shared test oracles. Everything here is deliberately independent of the
//! tape's backward pass: gradients are re-derived from forward evaluations
//! only, so agreement is evidence rather than tautology.

use graphflow::tensor::{Rng, Tensor};

pub const FD_H: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// Max relative error between analytic gradients and central differences.
/// The denominator floors at 1.0 so near-zero gradients are compared
/// absolutely.
pub fn fd_max_rel_err(
    f: &mut dyn FnMut(&[Tensor]) -> f64,
    inputs: &[Tensor],
    analytic: &[Option<Tensor>],
) -> f64 {
    let mut worst = 0.0f64;
    for (which, inp) in inputs.iter().enumerate() {
        let Some(ad) = &analytic[which] else { continue };
        assert_eq!(ad.shape, inp.shape, "gradient shape mismatch on input {which}");
        for j in 0..inp.numel() {
            let mut plus = inputs.to_vec();
            plus[which].data[j] += FD_H;
            let mut minus = inputs.to_vec();
            minus[which].data[j] -= FD_H;
            let fd = (f(&plus) - f(&minus)) / (2.0 * FD_H);
            let rel = (ad.data[j] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(rel);
        }
    }
    worst
}

pub fn randn_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), rng.normal_vec(n)).unwrap()
}
