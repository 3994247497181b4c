use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use rplsim::metrics::{ci95, t_quantile_975, Stat};

// two-sided 97.5% Student-t quantiles from standard tables
const T_TABLE: [(usize, f64); 8] = [
    (1, 12.706_204_736_174_7),
    (2, 4.302_652_729_749_464),
    (3, 3.182_446_305_284_263),
    (4, 2.776_445_105_197_799),
    (5, 2.570_581_835_636_314),
    (9, 2.262_157_162_798_205),
    (19, 2.093_024_054_408_263),
    (29, 2.045_229_642_132_703),
];

#[test]
fn quantiles_match_tables() {
    for (dof, t) in T_TABLE {
        assert_abs_diff_eq!(t_quantile_975(dof), t, epsilon = 1e-9);
    }
}

#[test]
fn half_width_on_known_samples() {
    // n = 10, mean 5.5, s^2 = 55/6
    let v: Vec<f64> = (1..=10).map(f64::from).collect();
    let expected = 2.262_157_162_798_205 * (55.0f64 / 6.0).sqrt() / 10f64.sqrt();
    assert_abs_diff_eq!(ci95(&v), expected, epsilon = 1e-9);

    // n = 2: half-width = t(1) * |a - b| / 2
    assert_abs_diff_eq!(ci95(&[0.7, 0.9]), 12.706_204_736_174_7 * 0.1, epsilon = 1e-9);
}

#[test]
fn degenerate_inputs() {
    assert!(ci95(&[]).is_nan());
    assert!(ci95(&[1.0]).is_nan());
    assert_abs_diff_eq!(ci95(&[0.98; 10]), 0.0, epsilon = 1e-12);
    let s = Stat::of(&[1.0, f64::NAN, 3.0]);
    assert_eq!(s.n, 2);
    assert_eq!(s.mean, 2.0);
    assert_eq!(s.median, 2.0);
}

proptest! {
    #[test]
    fn closed_form_agrees(v in proptest::collection::vec(-1e3f64..1e3, 2..40)) {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
        let expected = t_quantile_975(v.len() - 1) * (ss / (n - 1.0)).sqrt() / n.sqrt();
        prop_assert!((ci95(&v) - expected).abs() <= 1e-9 * expected.max(1.0));
    }

    #[test]
    fn shift_invariant_and_scale_equivariant(v in proptest::collection::vec(0.0f64..1.0, 2..30), shift in -10.0f64..10.0, k in 0.1f64..10.0) {
        let base = ci95(&v);
        let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
        let scaled: Vec<f64> = v.iter().map(|x| x * k).collect();
        prop_assert!((ci95(&shifted) - base).abs() <= 1e-9);
        prop_assert!((ci95(&scaled) - k * base).abs() <= 1e-9);
    }
}
