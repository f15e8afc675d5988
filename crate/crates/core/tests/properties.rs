use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use cvgmm_core::conduct::{delta_matrix, enumerate_partitions, logit_shares, markup, Partition};
use cvgmm_core::gmm::quadratic_form;
use cvgmm_core::selection::{make_splits, select_min};

proptest! {
    #[test]
    fn splits_partition_the_sample(t in 2usize..200, r in 2usize..8, k_frac in 0.0f64..1.0) {
        prop_assume!(r <= t);
        let k = 1 + ((r - 1) as f64 * k_frac) as usize % (r - 1);
        let plan = make_splits(t, r, k).unwrap();
        let folds = plan.folds();
        prop_assert_eq!(folds.len(), r);
        prop_assert_eq!(folds[0].start, 0);
        prop_assert_eq!(folds[r - 1].end, t);
        for (i, f) in folds.iter().enumerate() {
            prop_assert_eq!(f.start, i * t / r);
            prop_assert_eq!(f.end, (i + 1) * t / r);
        }
        for s in 0..plan.num_splits() {
            let mut all = plan.train_indices(s);
            prop_assert!(!all.is_empty());
            all.extend(plan.valid_indices(s));
            all.sort_unstable();
            prop_assert_eq!(all, (0..t).collect::<Vec<_>>());
        }
    }

    #[test]
    fn select_min_takes_first_minimum(scores in prop::collection::vec(-5i32..5, 1..12)) {
        let xs: Vec<f64> = scores.iter().map(|&s| s as f64).collect();
        let best = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let expected = xs.iter().position(|&x| x == best).unwrap();
        prop_assert_eq!(select_min(&xs), Some(expected));
    }

    #[test]
    fn psd_quadratic_forms_are_nonnegative(a in prop::collection::vec(-3.0f64..3.0, 9), g in prop::collection::vec(-3.0f64..3.0, 3)) {
        let a = DMatrix::from_vec(3, 3, a);
        let w = a.transpose() * &a;
        prop_assert!(quadratic_form(&DVector::from_vec(g), &w) >= 0.0);
    }

    #[test]
    fn logit_shares_leave_room_for_the_outside_good(delta in prop::collection::vec(-20.0f64..20.0, 1..6)) {
        let s = logit_shares(&DVector::from_vec(delta));
        prop_assert!(s.iter().all(|&x| x > 0.0));
        prop_assert!(s.sum() < 1.0);
    }

    #[test]
    fn markup_solves_the_first_order_conditions(
        delta in prop::collection::vec(-3.0f64..3.0, 3),
        alpha in -3.0f64..-0.05,
        which in 0usize..5,
    ) {
        let part = &enumerate_partitions(3).unwrap()[which];
        let s = logit_shares(&DVector::from_vec(delta));
        let m = markup(part, &s, alpha).unwrap();
        let d = delta_matrix(part, &s, alpha, 1.0);
        prop_assert!((d * m - &s).amax() < 1e-10);
    }

    #[test]
    fn partitions_round_trip_through_text(j in 1usize..6) {
        for p in enumerate_partitions(j).unwrap() {
            prop_assert_eq!(Partition::parse(&p.to_string()).unwrap(), p);
        }
    }
}
