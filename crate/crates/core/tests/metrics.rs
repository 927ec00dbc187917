mod common;

use common::{brute_force_mdd, rng};
use proptest::prelude::*;
use rand_distr::{Distribution, Normal};
use sigport::metrics::{annualized_return, annualized_volatility, max_drawdown, MetricSummary, DAYS_PER_YEAR};

#[test]
fn geometric_walk_volatility_matches_its_parameter() {
    let sigma: f64 = 0.03;
    let mut r = rng(31);
    let n = Normal::new(0.0, sigma).unwrap();
    let mut v = vec![1.0];
    for _ in 0..10_000 {
        let last = *v.last().unwrap();
        v.push(last * f64::exp(n.sample(&mut r)));
    }
    let expected = sigma * DAYS_PER_YEAR.sqrt();
    let got = annualized_volatility(&v).unwrap();
    assert!((got - expected).abs() <= 0.05 * expected, "{got} vs {expected}");
}

#[test]
fn drawdown_of_a_known_path() {
    let v = [1.0, 1.2, 0.9, 1.5, 0.75, 1.0];
    assert!((max_drawdown(&v).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn ratios_are_none_without_risk() {
    let v: Vec<f64> = (0..40).map(|i| 1.0 + 0.01 * i as f64).collect();
    let s = MetricSummary::from_daily_values(&v).unwrap();
    assert_eq!(s.mdd, 0.0);
    assert_eq!(s.calmar, None);
    assert!(s.sharpe.is_some());
}

fn series() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-0.2f64..0.2, 2..200).prop_map(|rets| {
        let mut v = vec![1.0];
        for x in rets {
            let last = *v.last().unwrap();
            v.push(last * (1.0 + x));
        }
        v
    })
}

proptest! {
    #[test]
    fn drawdown_matches_brute_force(v in series()) {
        let fast = max_drawdown(&v).unwrap();
        prop_assert!((fast - brute_force_mdd(&v)).abs() <= 1e-12);
        prop_assert!((0.0..1.0).contains(&fast));
    }

    #[test]
    fn metrics_are_scale_invariant(v in series(), c in 0.01f64..100.0) {
        let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
        let (a, b) = (MetricSummary::from_daily_values(&v).unwrap(), MetricSummary::from_daily_values(&scaled).unwrap());
        prop_assert!((a.annualized_return - b.annualized_return).abs() <= 1e-9 * a.annualized_return.abs().max(1.0));
        prop_assert!((a.annualized_volatility - b.annualized_volatility).abs() <= 1e-9);
        prop_assert!((a.mdd - b.mdd).abs() <= 1e-12);
    }

    #[test]
    fn return_compounds_over_whole_years(g in -0.002f64..0.003, years in 1usize..4) {
        let v: Vec<f64> = (0..=365 * years).map(|i| (1.0 + g).powi(i as i32)).collect();
        let expected = (1.0 + g).powi(365) - 1.0;
        prop_assert!((annualized_return(&v).unwrap() - expected).abs() <= 1e-10);
    }
}
