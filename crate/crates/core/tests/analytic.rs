use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specsim::latency::{expected_speedup, expected_tau};
use specsim::SpecDecParams;

/// Simulated rounds: accept drafts until the first rejection, then add the
/// target's token (correction or bonus).
fn mc_tau(alpha: f64, gamma: u32, rounds: u32, rng: &mut impl Rng) -> f64 {
    let mut total = 0u64;
    for _ in 0..rounds {
        let mut accepted = 0;
        while accepted < gamma && rng.random::<f64>() < alpha {
            accepted += 1;
        }
        total += u64::from(accepted) + 1;
    }
    total as f64 / f64::from(rounds)
}

#[test]
fn tau_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for ai in 1..=9 {
        let alpha = ai as f64 / 10.0;
        for gamma in 1..=12 {
            let mc = mc_tau(alpha, gamma, 100_000, &mut rng);
            let exact = expected_tau(alpha, gamma);
            assert!((mc - exact).abs() / exact < 0.01, "alpha {alpha} gamma {gamma}: {mc} vs {exact}");
        }
    }
}

#[test]
fn tau_matches_series_sum() {
    for ai in 0..=20 {
        let alpha = ai as f64 / 20.0;
        for gamma in 0..=12 {
            let series: f64 = (0..=gamma).map(|i| alpha.powi(i as i32)).sum();
            assert!((expected_tau(alpha, gamma) - series).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_window_speedup_is_one() {
    for alpha in [0.0, 0.25, 0.8, 1.0] {
        let p = SpecDecParams::new(alpha, 0, 0.3).unwrap();
        assert_eq!(expected_speedup(&p), 1.0);
    }
}

proptest! {
    #[test]
    fn speedup_is_tau_over_cost(alpha in 0.0f64..=1.0, gamma in 0u32..=12, c in 0.001f64..5.0) {
        let p = SpecDecParams::new(alpha, gamma, c).unwrap();
        let want = expected_tau(alpha, gamma) / (c * f64::from(gamma) + 1.0);
        prop_assert!((expected_speedup(&p) - want).abs() <= 1e-12 * want.max(1.0));
    }

    #[test]
    fn tau_bounded(alpha in 0.0f64..=1.0, gamma in 0u32..=12) {
        let t = expected_tau(alpha, gamma);
        prop_assert!(t >= 1.0 - 1e-12 && t <= f64::from(gamma) + 1.0 + 1e-12);
    }
}
