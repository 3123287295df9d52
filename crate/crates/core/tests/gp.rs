use dqdv_core::derivative::draw_mvn;
use dqdv_core::gp::{
    fit_default, log_marginal_likelihood, log_marginal_likelihood_of, FittedGP, TrainingSet,
};
use dqdv_core::kernel::{jitter, kernel_matrix, Block, Hyperparams};
use dqdv_core::math::linspace;
use proptest::prelude::*;

fn dataset() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    prop::collection::vec((0.0f64..1.0, -1.0f64..1.0), 20).prop_map(|pts| {
        let mut xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        xs.sort_by(f64::total_cmp);
        let ys = xs
            .iter()
            .zip(&pts)
            .map(|(x, p)| (5.0 * x).sin() + 0.2 * p.1)
            .collect();
        (xs, ys)
    })
}

fn hp() -> impl Strategy<Value = [f64; 3]> {
    (0.05f64..0.5, 0.3f64..3.0, 0.05f64..0.5).prop_map(|(l, s, n)| [l, s, n])
}

fn lml(xs: &[f64], ys: &[f64], p: [f64; 3]) -> dqdv_core::gp::Lml {
    log_marginal_likelihood_of(xs, ys, &Hyperparams::new(p[0], p[1], p[2]).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_matches_central_differences((xs, ys) in dataset(), p in hp()) {
        let g = lml(&xs, &ys, p).gradient;
        let h: f64 = 1e-5;
        for j in 0..3 {
            let (mut up, mut dn) = (p, p);
            up[j] *= h.exp();
            dn[j] *= (-h).exp();
            let fd = (lml(&xs, &ys, up).value - lml(&xs, &ys, dn).value) / (2.0 * h);
            prop_assert!((g[j] - fd).abs() <= 1e-5 * fd.abs().max(1.0), "component {}: {} vs {}", j, g[j], fd);
        }
    }

    #[test]
    fn permutation_invariant((xs, ys) in dataset(), p in hp(), rot in 1usize..19) {
        let mut px = xs.clone();
        let mut py = ys.clone();
        px.rotate_left(rot);
        py.rotate_left(rot);
        let (a, b) = (lml(&xs, &ys, p).value, lml(&px, &py, p).value);
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn shift_invariant((xs, ys) in dataset(), p in hp(), dx in -5.0f64..5.0, dy in -50.0f64..50.0) {
        let sx: Vec<f64> = xs.iter().map(|x| x + dx).collect();
        let sy: Vec<f64> = ys.iter().map(|y| y + dy).collect();
        let (a, b) = (lml(&xs, &ys, p), lml(&sx, &sy, p));
        prop_assert!((a.value - b.value).abs() <= 1e-8 * a.value.abs().max(1.0));

        let hp = Hyperparams::new(p[0], p[1], p[2]).unwrap();
        let m = FittedGP::condition(TrainingSet::new(xs.clone(), ys.clone()).unwrap(), hp).unwrap();
        let s = FittedGP::condition(TrainingSet::new(xs.clone(), sy).unwrap(), hp).unwrap();
        let grid = linspace(-0.2, 1.2, 30);
        for (u, v) in m.posterior_mean(&grid).iter().zip(s.posterior_mean(&grid)) {
            prop_assert!((v - u - dy).abs() <= 1e-9 * (1.0 + dy.abs()));
        }
    }

    #[test]
    fn posterior_variance_below_prior((xs, ys) in dataset(), p in hp()) {
        let hp = Hyperparams::new(p[0], p[1], p[2]).unwrap();
        let m = FittedGP::condition(TrainingSet::new(xs, ys).unwrap(), hp).unwrap();
        let prior = p[1] * p[1] + p[2] * p[2];
        for v in m.posterior_variance(&linspace(-0.5, 1.5, 60)) {
            prop_assert!(v >= -1e-12 && v <= prior * (1.0 + 1e-12));
        }
    }
}

#[test]
fn factor_and_weights_reconstruct() {
    let xs = linspace(3.0, 4.0, 80);
    let ys: Vec<f64> = xs.iter().map(|x| 0.02 * (4.0 * x).tanh()).collect();
    let m = FittedGP::condition(
        TrainingSet::new(xs, ys).unwrap(),
        Hyperparams::new(0.1, 0.01, 1e-4).unwrap(),
    )
    .unwrap();
    let (l, kn) = (m.cholesky_factor(), m.noisy_gram());
    let rel = (&l * l.transpose() - &kn).norm() / kn.norm();
    assert!(rel <= 1e-8, "{rel}");
    let y = m.training_set().ys();
    let mean = m.training_set().y_mean();
    let scale = m.training_set().y_scale();
    let r = &kn * m.alpha();
    let resid: f64 = r
        .iter()
        .zip(y)
        .map(|(a, b)| (a - (b - mean) / scale).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = y
        .iter()
        .map(|b| ((b - mean) / scale).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!(resid <= 1e-8 * norm, "{resid}");
}

#[test]
fn recovers_prior_length_scale() {
    let truth = Hyperparams::new(0.05, 0.01, 1e-4).unwrap();
    let xs = linspace(3.0, 4.0, 200);
    let mut gram = kernel_matrix(&xs, &xs, &truth, Block::VV);
    for i in 0..xs.len() {
        gram[(i, i)] += truth.noise_std * truth.noise_std + jitter(truth.signal_std);
    }
    let lower = gram.cholesky().unwrap().l();
    let mut ls: Vec<f64> = draw_mvn(&vec![0.0; xs.len()], &lower, 20, 99)
        .into_iter()
        .map(|ys| {
            let t = TrainingSet::new(xs.clone(), ys).unwrap();
            let start = log_marginal_likelihood(&t, &truth).unwrap().value;
            let m = fit_default(t).unwrap();
            assert!(m.lml() >= start - 1e-6);
            m.hyperparams().length_scale
        })
        .collect();
    ls.sort_by(f64::total_cmp);
    let median = 0.5 * (ls[9] + ls[10]);
    assert!(
        median > 0.025 && median < 0.1,
        "median {median}, all {ls:?}"
    );
}
