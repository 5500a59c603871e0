//! Closed-form speculative-decoding throughput model.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-token acceptance probability, window size, and draft/target
/// per-token cost ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpecDecParams<T> {
    pub alpha: T,
    pub gamma: u32,
    pub cost_ratio: T,
}

impl<T: Scalar> SpecDecParams<T> {
    pub fn new(alpha: T, gamma: u32, cost_ratio: T) -> Result<Self> {
        if !(alpha >= T::zero() && alpha <= T::one()) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in [0, 1], got {alpha}"
            )));
        }
        if !(cost_ratio > T::zero() && cost_ratio.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "cost ratio must be positive, got {cost_ratio}"
            )));
        }
        Ok(SpecDecParams {
            alpha,
            gamma,
            cost_ratio,
        })
    }
}

fn gamma_as<T: Scalar>(gamma: u32) -> T {
    T::from_u32(gamma).expect("window size fits the scalar type")
}

/// Expected tokens committed per round: accepted drafts plus the one
/// correction (or bonus) token from the target.
pub fn expected_tau<T: Scalar>(alpha: T, gamma: u32) -> T {
    let one = T::one();
    if alpha == one {
        return gamma_as::<T>(gamma) + one;
    }
    (one - alpha.powi(gamma as i32 + 1)) / (one - alpha)
}

/// Expected speedup over target-only autoregressive decoding.
pub fn expected_speedup<T: Scalar>(params: &SpecDecParams<T>) -> T {
    let one = T::one();
    let g = gamma_as::<T>(params.gamma);
    let draft_cost = params.cost_ratio * g + one;
    if params.alpha == one {
        return (g + one) / draft_cost;
    }
    (one - params.alpha.powi(params.gamma as i32 + 1)) / ((one - params.alpha) * draft_cost)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_without_acceptance_is_one() {
        for g in 0..13 {
            assert_eq!(expected_tau(0.0f64, g), 1.0);
        }
    }

    #[test]
    fn tau_full_acceptance_limit() {
        assert_eq!(expected_tau(1.0f64, 4), 5.0);
    }

    #[test]
    fn tau_point_value() {
        // 1 + .8 + .64 + .512 + .4096
        assert!((expected_tau(0.8f64, 4) - 3.3616).abs() < 1e-12);
    }

    #[test]
    fn speedup_degenerate_window_is_exactly_one() {
        for a in [0.0, 0.3, 0.99, 1.0] {
            for c in [0.01, 0.1, 2.0] {
                let p = SpecDecParams::new(a, 0, c).unwrap();
                assert_eq!(expected_speedup(&p), 1.0);
            }
        }
    }

    #[test]
    fn speedup_point_values() {
        let p = SpecDecParams::new(0.0f64, 4, 0.1).unwrap();
        assert!((expected_speedup(&p) - 1.0 / 1.4).abs() < 1e-12);
        let p = SpecDecParams::new(0.8f64, 4, 0.1).unwrap();
        assert!((expected_speedup(&p) - 3.3616 / 1.4).abs() < 1e-12);
        assert!((expected_speedup(&p) - 2.401142857142857).abs() < 1e-12);
    }

    #[test]
    fn f32_agrees_with_f64() {
        let a = expected_tau(0.7f32, 6) as f64;
        let b = expected_tau(0.7f64, 6);
        assert!((a - b).abs() < 1e-5);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(SpecDecParams::new(1.1f64, 1, 0.1).is_err());
        assert!(SpecDecParams::new(0.5f64, 1, 0.0).is_err());
        assert!(SpecDecParams::new(f64::NAN, 1, 0.1).is_err());
    }

    #[test]
    fn tau_monotone_on_grid() {
        for gi in 0..=12u32 {
            let mut prev = 0.0;
            for ai in 0..=10 {
                let v = expected_tau(ai as f64 / 10.0, gi);
                assert!(v >= prev);
                prev = v;
            }
        }
        for ai in 0..=10 {
            let a = ai as f64 / 10.0;
            let mut prev = 0.0;
            for g in 0..=12 {
                let v = expected_tau(a, g);
                assert!(v >= prev);
                prev = v;
            }
        }
    }
}
