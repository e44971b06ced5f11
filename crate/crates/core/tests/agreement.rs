mod common;

use obs_core::evaluation::{icc3, krippendorff_alpha, AlphaLevel, MetricError};
use obs_core::RatingMatrix;
use proptest::prelude::*;

fn matrix(rows: &[Vec<Option<f64>>]) -> RatingMatrix {
    RatingMatrix::numeric(rows.to_vec()).unwrap()
}

fn complete_rows() -> impl Strategy<Value = Vec<Vec<Option<f64>>>> {
    (3usize..5).prop_flat_map(|k| {
        prop::collection::vec(prop::collection::vec((1u8..=5).prop_map(|v| Some(v as f64)), k), 4..25)
    })
}

fn sparse_rows() -> impl Strategy<Value = Vec<Vec<Option<f64>>>> {
    prop::collection::vec(prop::collection::vec(prop::option::weighted(0.8, (1u8..=5).prop_map(f64::from)), 4), 4..25)
}

proptest! {
    #[test]
    fn icc_matches_stepwise_oracle(rows in complete_rows()) {
        let x: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v.unwrap()).collect()).collect();
        if let Ok(icc) = icc3(&matrix(&rows)) {
            if !icc.degenerate {
                prop_assert!((icc.value - common::icc3_stepwise(&x)).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn icc_ignores_shift_and_rater_order(rows in complete_rows(), c in -10.0f64..10.0) {
        let m = matrix(&rows);
        let Ok(base) = icc3(&m) else { return Ok(()) };
        let shifted = icc3(&m.shifted(c)).unwrap();
        prop_assert!((base.value - shifted.value).abs() <= 1e-9);
        let order: Vec<usize> = (0..m.raters()).rev().collect();
        prop_assert!((base.value - icc3(&m.permute_raters(&order)).unwrap().value).abs() <= 1e-9);
    }

    #[test]
    fn alpha_matches_pair_oracle(rows in sparse_rows()) {
        let m = matrix(&rows);
        for (level, ordinal) in [(AlphaLevel::Ordinal, true), (AlphaLevel::Interval, false)] {
            if let Ok(a) = krippendorff_alpha(&m, level) {
                prop_assert!((a - common::alpha_pairs(&rows, ordinal)).abs() <= 1e-6);
                prop_assert!(a <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn alpha_ignores_shift_and_rater_order(rows in sparse_rows(), c in -3.0f64..3.0) {
        let m = matrix(&rows);
        let order: Vec<usize> = vec![2, 0, 3, 1];
        for level in [AlphaLevel::Ordinal, AlphaLevel::Interval] {
            let Ok(base) = krippendorff_alpha(&m, level) else { continue };
            prop_assert!((base - krippendorff_alpha(&m.shifted(c), level).unwrap()).abs() <= 1e-9);
            prop_assert!((base - krippendorff_alpha(&m.permute_raters(&order), level).unwrap()).abs() <= 1e-9);
        }
    }
}

#[test]
fn degenerate_inputs() {
    let flat = matrix(&vec![vec![Some(3.0); 3]; 4]);
    assert!(matches!(krippendorff_alpha(&flat, AlphaLevel::Interval), Err(MetricError::DegenerateVariance)));
    let icc = icc3(&flat).unwrap();
    assert!(icc.degenerate);
    assert_eq!(icc.value, 0.0);

    let lonely = matrix(&[vec![Some(1.0), None], vec![None, Some(4.0)]]);
    assert!(matches!(krippendorff_alpha(&lonely, AlphaLevel::Ordinal), Err(MetricError::NoPairableValues)));
    assert!(matches!(icc3(&lonely), Err(MetricError::IncompleteMatrix)));
    assert!(RatingMatrix::likert5(vec![vec![Some(6), Some(1)]]).is_err());
}

#[test]
fn csv_layouts() {
    let with_ids = "item,a,b,c\n1,9,2,5\n2,6,1,3\n3,8,4,6\n";
    let bare = "9,2,5\n6,1,3\n8,4,6\n";
    let named = "character,a,b,c\nobc1,9,2,5\nobc2,6,1,3\nobc3,8,4,6\n";
    let gaps = "a,b,c\n9,,5\n6,1,3\n8,4,\n";
    let m = RatingMatrix::from_csv(with_ids.as_bytes(), false).unwrap();
    assert_eq!((m.items(), m.raters()), (3, 3));
    assert_eq!(m, RatingMatrix::from_csv(bare.as_bytes(), false).unwrap());
    assert_eq!(m, RatingMatrix::from_csv(named.as_bytes(), false).unwrap());
    let g = RatingMatrix::from_csv(gaps.as_bytes(), false).unwrap();
    assert!(!g.is_complete());
    assert_eq!(g.rows()[0][1], None);
}

#[test]
fn worked_example_alpha() {
    let m = RatingMatrix::likert5(common::reliability_example()).unwrap();
    let rows = common::as_f64(&common::reliability_example());
    let ordinal = krippendorff_alpha(&m, AlphaLevel::Ordinal).unwrap();
    let interval = krippendorff_alpha(&m, AlphaLevel::Interval).unwrap();
    assert!((ordinal - common::alpha_pairs(&rows, true)).abs() < 1e-9);
    assert!((interval - common::alpha_pairs(&rows, false)).abs() < 1e-9);
    assert!((ordinal - 0.815).abs() < 5e-4 && (interval - 0.849).abs() < 5e-4);
}
