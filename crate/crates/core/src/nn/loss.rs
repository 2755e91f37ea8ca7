use super::Real;
use crate::error::{Error, Result};

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;

pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn clamp_prob<T: Real>(p: T) -> T {
    let eps = T::from_f64(BCE_EPS).expect("eps representable");
    p.max(eps).min(T::one() - eps)
}

/// Mean binary cross-entropy.
pub fn bce_loss<T: Real>(p: &[T], y: &[T]) -> Result<T> {
    if p.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: p.len(),
            right: y.len(),
        });
    }
    if p.is_empty() {
        return Ok(T::zero());
    }
    let total: T = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = clamp_prob(p);
            -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
        })
        .sum();
    Ok(total / T::from_usize(p.len()).expect("length fits"))
}

/// Derivative of one sample's BCE term with respect to its logit, given
/// `p = sigmoid(logit)`. Zero where the clamp is active.
pub fn bce_logit_grad<T: Real>(p: T, y: T) -> T {
    let eps = T::from_f64(BCE_EPS).expect("eps representable");
    if p < eps || p > T::one() - eps {
        T::zero()
    } else {
        p - y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_examples() {
        let ln2 = std::f64::consts::LN_2;
        assert!((bce_loss(&[0.5f64], &[1.0]).unwrap() - ln2).abs() < 1e-12);
        let near = bce_loss(&[1.0 - 1e-7f64], &[1.0]).unwrap();
        assert!((near - 1e-7).abs() < 1e-9, "{near}");
        assert!((bce_loss(&[0.5f64, 0.5], &[0.0, 1.0]).unwrap() - ln2).abs() < 1e-12);
        assert!(bce_loss(&[1.0f64], &[0.0]).unwrap().is_finite());
        assert!(matches!(
            bce_loss(&[0.5f64], &[1.0, 0.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn sigmoid_is_stable_and_in_range() {
        for z in [-1000.0f64, -30.0, -1.0, 0.0, 1.0, 30.0, 1000.0] {
            let p = sigmoid(z);
            assert!((0.0..=1.0).contains(&p));
        }
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!((sigmoid(2.0f64) + sigmoid(-2.0f64) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn logit_gradient_matches_finite_difference() {
        let h = 1e-4;
        for &z in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            for &y in &[0.0f64, 1.0] {
                let f = |z: f64| bce_loss(&[sigmoid(z)], &[y]).unwrap();
                let numeric = (f(z + h) - f(z - h)) / (2.0 * h);
                let analytic = bce_logit_grad(sigmoid(z), y);
                assert!((numeric - analytic).abs() / analytic.abs().max(1e-6) < 1e-4);
            }
        }
    }
}
