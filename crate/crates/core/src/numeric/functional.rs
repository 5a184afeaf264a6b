//! Plain (non-differentiable) versions of the basic numeric operations.
//! The tape in [`crate::numeric::graph`] reuses these kernels for its
//! forward passes.

use crate::error::{Error, Result};
use crate::numeric::Real;

/// Probabilities below this are clamped before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

pub fn softmax<F: Real>(logits: &[F]) -> Result<Vec<F>> {
    if logits.is_empty() {
        return Err(Error::Dimension("softmax of an empty vector".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("softmax input is not finite".into()));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out, None);
    Ok(out)
}

/// Max-subtracted softmax. Positions where `mask` is false get probability 0.
pub(crate) fn softmax_in_place<F: Real>(xs: &mut [F], mask: Option<&[bool]>) {
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    let max = xs
        .iter()
        .enumerate()
        .filter(|(i, _)| keep(*i))
        .map(|(_, &v)| v)
        .fold(F::neg_infinity(), F::max);
    let mut total = F::zero();
    for (i, x) in xs.iter_mut().enumerate() {
        if keep(i) {
            *x = (*x - max).exp();
            total += *x;
        } else {
            *x = F::zero();
        }
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

pub fn cross_entropy<F: Real>(probabilities: &[F], target: usize) -> Result<F> {
    let p = probabilities.get(target).ok_or_else(|| {
        Error::Index(format!(
            "target {target} out of range for {} classes",
            probabilities.len()
        ))
    })?;
    Ok(-p.max(F::from_f64_lossy(LOG_CLAMP)).ln())
}

pub fn layer_norm<F: Real>(x: &[F], gain: &[F], bias: &[F], eps: F) -> Result<Vec<F>> {
    if x.len() != gain.len() || x.len() != bias.len() {
        return Err(Error::Dimension(format!(
            "layer_norm lengths x={} gain={} bias={}",
            x.len(),
            gain.len(),
            bias.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::Dimension("layer_norm of an empty vector".into()));
    }
    let mut out = vec![F::zero(); x.len()];
    layer_norm_row(x, gain, bias, eps, &mut out, None);
    Ok(out)
}

/// Normalizes one row. Returns the inverse standard deviation; when
/// `xhat` is given the standardized values are written there as well.
pub(crate) fn layer_norm_row<F: Real>(
    x: &[F],
    gain: &[F],
    bias: &[F],
    eps: F,
    out: &mut [F],
    xhat: Option<&mut [F]>,
) -> F {
    let n = F::from_usize(x.len()).unwrap();
    let mean = x.iter().copied().sum::<F>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
    let denom = (var + eps).sqrt();
    // Zero variance with eps = 0: every standardized value is 0.
    let inv_std = if denom > F::zero() {
        denom.recip()
    } else {
        F::zero()
    };
    match xhat {
        Some(xhat) => {
            for i in 0..x.len() {
                xhat[i] = (x[i] - mean) * inv_std;
                out[i] = xhat[i] * gain[i] + bias[i];
            }
        }
        None => {
            for i in 0..x.len() {
                out[i] = (x[i] - mean) * inv_std * gain[i] + bias[i];
            }
        }
    }
    inv_std
}

/// Exact GELU, `x * Phi(x)`.
#[inline]
pub fn gelu<F: Real>(x: F) -> F {
    let half = F::from_f64_lossy(0.5);
    let inv_sqrt2 = F::from_f64_lossy(std::f64::consts::FRAC_1_SQRT_2);
    half * x * (F::one() + (x * inv_sqrt2).erf())
}

#[inline]
pub(crate) fn gelu_grad<F: Real>(x: F) -> F {
    let half = F::from_f64_lossy(0.5);
    let inv_sqrt2 = F::from_f64_lossy(std::f64::consts::FRAC_1_SQRT_2);
    let inv_sqrt_2pi = F::from_f64_lossy(0.398_942_280_401_432_7);
    half * (F::one() + (x * inv_sqrt2).erf()) + x * inv_sqrt_2pi * (-half * x * x).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_examples() {
        assert!(close(&softmax(&[0.0, 0.0]).unwrap(), &[0.5, 0.5], 1e-15));
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!(close(&p, &[2.0 / 3.0, 1.0 / 3.0], 1e-15));
        assert!(close(
            &softmax(&[1000.0, 1000.0]).unwrap(),
            &[0.5, 0.5],
            1e-15
        ));
    }

    #[test]
    fn softmax_errors() {
        assert!(matches!(softmax::<f64>(&[]), Err(Error::Dimension(_))));
        assert!(matches!(softmax(&[f64::NAN, 1.0]), Err(Error::Numeric(_))));
    }

    #[test]
    fn cross_entropy_examples() {
        let ce = cross_entropy(&[0.25; 4], 3).unwrap();
        assert!((ce - 4f64.ln()).abs() < 1e-15);
        assert_eq!(cross_entropy(&[1.0, 0.0], 0).unwrap(), 0.0);
        assert!((cross_entropy(&[0.5, 0.5], 1).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(matches!(
            cross_entropy(&[0.5, 0.5], 2),
            Err(Error::Index(_))
        ));
        // clamped instead of infinite
        let clamped = cross_entropy(&[1.0, 0.0], 1).unwrap();
        assert!((clamped - (-(1e-12f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn layer_norm_examples() {
        let ones = [1.0, 1.0, 1.0];
        let out = layer_norm(&ones, &ones, &[0.0; 3], 1e-12).unwrap();
        assert!(close(&out, &[0.0; 3], 1e-15));
        let out = layer_norm(&[1.0, 3.0], &[1.0, 1.0], &[0.0, 0.0], 0.0).unwrap();
        assert!(close(&out, &[-1.0, 1.0], 1e-15));
        let out = layer_norm(&[2.0, 4.0], &[2.0, 2.0], &[1.0, 1.0], 0.0).unwrap();
        assert!(close(&out, &[-1.0, 3.0], 1e-15));
        assert!(matches!(
            layer_norm(&[1.0, 2.0], &[1.0], &[0.0, 0.0], 0.0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn gelu_derivative_matches_finite_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            xs in prop::collection::vec(-50.0f64..50.0, 1..20),
            shift in -500.0f64..500.0,
        ) {
            let p = softmax(&xs).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            let shifted: Vec<f64> = xs.iter().map(|x| x + shift).collect();
            let q = softmax(&shifted).unwrap();
            prop_assert!(close(&p, &q, 1e-9));
        }

        #[test]
        fn cross_entropy_is_non_negative(
            xs in prop::collection::vec(-20.0f64..20.0, 1..10),
            t in 0usize..10,
        ) {
            let p = softmax(&xs).unwrap();
            let t = t % p.len();
            prop_assert!(cross_entropy(&p, t).unwrap() >= 0.0);
        }
    }
}
