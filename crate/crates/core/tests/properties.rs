use hrshift_core::design::{split_onsets, OnsetSeries};
use hrshift_core::mt::simes;
use hrshift_core::noise::{ar1_covariance, ar1_precision};
use hrshift_core::posi::pava;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ar1_precision_inverts_covariance(rho in -0.95f64..0.95, t in 2usize..40) {
        let prod = ar1_precision(rho, t).unwrap() * ar1_covariance(rho, t).unwrap();
        let err = (prod - nalgebra::DMatrix::<f64>::identity(t, t)).abs().max();
        prop_assert!(err < 1e-9, "max error {}", err);
    }

    #[test]
    fn split_onsets_partitions_the_series(
        bits in proptest::collection::vec(any::<bool>(), 5..80),
        cut_frac in proptest::collection::vec(0.0f64..1.0, 0..4),
    ) {
        let ind: Vec<u8> = bits.iter().map(|&b| b as u8).collect();
        let u = OnsetSeries::from_indicator("c", &ind).unwrap();
        let t = ind.len();
        let mut cps: Vec<usize> = cut_frac.iter().map(|f| 1 + (f * (t - 1) as f64) as usize).collect();
        cps.sort_unstable();
        cps.dedup();
        let parts = split_onsets(&u, &cps).unwrap();
        prop_assert_eq!(parts.len(), cps.len() + 1);
        for i in 0..t {
            let hits = parts.iter().filter(|s| s.indicator()[i]).count();
            prop_assert_eq!(hits, ind[i] as usize);
        }
    }

    #[test]
    fn pava_is_monotone_and_mean_preserving(v in proptest::collection::vec(0.0f64..1.0, 1..60)) {
        let f = pava(&v);
        prop_assert!(f.windows(2).all(|w| w[0] <= w[1] + 1e-15));
        let d = f.iter().sum::<f64>() - v.iter().sum::<f64>();
        prop_assert!(d.abs() < 1e-9);
    }

    #[test]
    fn simes_lies_between_min_and_bonferroni(p in proptest::collection::vec(0.0f64..1.0, 1..20)) {
        let s = simes(&p).unwrap();
        let min = p.iter().cloned().fold(1.0, f64::min);
        prop_assert!(s + 1e-15 >= min);
        prop_assert!(s <= (min * p.len() as f64).min(1.0) + 1e-15);
    }
}
