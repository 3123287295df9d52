use dqdv_core::baseline::{fd_dqdv, noise_gain, sg_smooth, SgConfig};
use dqdv_core::derivative::{default_grid, derivative_posterior};
use dqdv_core::gp::{fit_default, TrainingSet};
use dqdv_core::ingest::{clean_qv, coulomb_count, extract_cc_charge, CleanConfig};
use dqdv_core::synth::{generate_log, SynthCell, SynthSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

proptest! {
    #[test]
    fn smoothing_is_linear(
        x in prop::collection::vec(-1.0f64..1.0, 40),
        y in prop::collection::vec(-1.0f64..1.0, 40),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        half in 2usize..8,
    ) {
        let cfg = SgConfig { window: 2 * half + 1, polyorder: 2, resample_n: 40 };
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let (sx, sy, sm) = (sg_smooth(&x, &cfg).unwrap(), sg_smooth(&y, &cfg).unwrap(), sg_smooth(&mix, &cfg).unwrap());
        for i in 0..40 {
            prop_assert!((sm[i] - a * sx[i] - b * sy[i]).abs() <= 1e-12);
        }
    }
}

#[test]
fn interior_variance_matches_noise_gain() {
    let cfg = SgConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let trials = 10_000;
    let mid = 50;
    let (mut s, mut ss) = (0.0, 0.0);
    for _ in 0..trials {
        let x: Vec<f64> = (0..100).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y = sg_smooth(&x, &cfg).unwrap()[mid];
        s += y;
        ss += y * y;
    }
    let mean = s / trials as f64;
    let var = ss / trials as f64 - mean * mean;
    let gain = noise_gain(&cfg).unwrap();
    assert!((var - gain).abs() <= 0.1 * gain, "{var} vs {gain}");
}

#[test]
fn noise_free_cell_is_recovered() {
    for spec in [SynthSpec::plating(), SynthSpec::baseline()] {
        let spec = SynthSpec {
            noise_std: 0.0,
            ..spec
        };
        let cell = SynthCell::new(&spec).unwrap();
        let log = generate_log(&spec).unwrap();
        let seg = &extract_cc_charge(&log, 0.01).unwrap()[0];
        let qv = clean_qv(&coulomb_count(seg), &CleanConfig::default()).unwrap();
        let d = fd_dqdv(&qv, &SgConfig::default()).unwrap();
        let truth: Vec<f64> = d.grid.iter().map(|v| cell.dqdv(*v)).collect();
        let peak = truth.iter().fold(0.0f64, |a, b| a.max(*b));
        let mse = d
            .dqdv
            .iter()
            .zip(&truth)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / truth.len() as f64;
        assert!(mse.sqrt() <= 0.02 * peak, "rmse {} peak {peak}", mse.sqrt());
    }
}

#[test]
fn gp_beats_a_range_of_sg_settings() {
    let configs: Vec<SgConfig> = [(7, 2), (11, 2), (15, 2), (21, 2), (11, 3), (21, 3), (31, 3)]
        .into_iter()
        .map(|(window, polyorder)| SgConfig {
            window,
            polyorder,
            resample_n: 400,
        })
        .collect();
    let seeds = 10;
    let mut wins = vec![0; configs.len()];
    for seed in 0..seeds {
        let spec = SynthSpec {
            seed,
            ..SynthSpec::plating()
        };
        let cell = SynthCell::new(&spec).unwrap();
        let seg = &extract_cc_charge(&generate_log(&spec).unwrap(), 0.01).unwrap()[0];
        let qv = clean_qv(&coulomb_count(seg), &CleanConfig::default()).unwrap();
        let m = fit_default(TrainingSet::new(qv.v.clone(), qv.q.clone()).unwrap()).unwrap();
        let post = derivative_posterior(&m, &default_grid(&m, 400), 0.95).unwrap();
        let gp = rmse(&post.grid, &post.mean, &cell);
        for (w, cfg) in wins.iter_mut().zip(&configs) {
            let d = fd_dqdv(&qv, cfg).unwrap();
            *w += usize::from(gp < rmse(&d.grid, &d.dqdv, &cell));
        }
    }
    for (w, cfg) in wins.iter().zip(&configs) {
        assert!(*w >= 8, "{cfg:?}: GP better in {w}/{seeds}");
    }
}

fn rmse(grid: &[f64], est: &[f64], cell: &SynthCell) -> f64 {
    let se: f64 = grid
        .iter()
        .zip(est)
        .map(|(v, y)| (y - cell.dqdv(*v)).powi(2))
        .sum();
    (se / grid.len() as f64).sqrt()
}
