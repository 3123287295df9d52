use dqdv_core::derivative::joint_prior_covariance;
use dqdv_core::kernel::{jitter, k, k_cross, k_dd, Hyperparams};
use proptest::prelude::*;

fn hp() -> impl Strategy<Value = Hyperparams> {
    (0.01f64..2.0, 0.01f64..10.0).prop_map(|(l, s)| Hyperparams::new(l, s, 1e-3).unwrap())
}

proptest! {
    #[test]
    fn cross_block_is_first_derivative(x in -3.0f64..3.0, xs in -3.0f64..3.0, hp in hp()) {
        let h = 1e-5 * hp.length_scale;
        let fd = (k(x, xs + h, &hp) - k(x, xs - h, &hp)) / (2.0 * h);
        let scale = hp.signal_std * hp.signal_std / hp.length_scale;
        prop_assert!((k_cross(x, xs, &hp) - fd).abs() <= 1e-6 * fd.abs().max(scale));
    }

    #[test]
    fn second_block_is_mixed_derivative(a in -3.0f64..3.0, b in -3.0f64..3.0, hp in hp()) {
        let h = 1e-4 * hp.length_scale;
        let fd = (k_cross(a + h, b, &hp) - k_cross(a - h, b, &hp)) / (2.0 * h);
        let scale = hp.signal_std * hp.signal_std / (hp.length_scale * hp.length_scale);
        prop_assert!((k_dd(a, b, &hp) - fd).abs() <= 1e-6 * fd.abs().max(scale));
    }

    #[test]
    fn symmetries(a in -3.0f64..3.0, b in -3.0f64..3.0, hp in hp()) {
        prop_assert_eq!(k(a, b, &hp), k(b, a, &hp));
        prop_assert_eq!(k_dd(a, b, &hp), k_dd(b, a, &hp));
        prop_assert_eq!(k_cross(a, b, &hp), -k_cross(b, a, &hp));
        prop_assert!(k(a, b, &hp) <= k(a, a, &hp));
    }

    #[test]
    fn joint_prior_is_positive_definite(mut xs in prop::collection::vec(-2.0f64..2.0, 1..12), hp in hp()) {
        xs.sort_by(f64::total_cmp);
        xs.dedup_by(|a, b| (*a - *b).abs() < 0.2 * hp.length_scale);
        let mut c = joint_prior_covariance(&xs, &hp);
        let n = c.nrows();
        for i in 0..n {
            c[(i, i)] += jitter(hp.signal_std) * (1.0 + 1.0 / (hp.length_scale * hp.length_scale));
        }
        prop_assert!((c.clone() - c.transpose()).amax() == 0.0);
        prop_assert!(c.cholesky().is_some());
    }
}

#[test]
fn prior_derivative_variance() {
    let hp = Hyperparams::new(0.05, 0.01, 1e-4).unwrap();
    assert!((k_dd(3.3, 3.3, &hp) - hp.derivative_prior_variance()).abs() <= 1e-15);
    assert!((hp.derivative_prior_variance() - 0.04).abs() < 1e-15);
}
