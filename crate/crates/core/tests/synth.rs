use dqdv_core::ingest::{clean_qv, CleanConfig};
use dqdv_core::ingest::{coulomb_count, extract_cc_charge};
use dqdv_core::metrics::{degradation_rate, throughput_series};
use dqdv_core::synth::{generate_log, true_dqdv, FadeModel, NoiseMode, SynthCell, SynthSpec};

#[test]
fn noise_free_round_trip_through_ingest() {
    let spec = SynthSpec {
        noise_std: 0.0,
        ..SynthSpec::plating()
    };
    let cell = SynthCell::new(&spec).unwrap();
    let segs = extract_cc_charge(&generate_log(&spec).unwrap(), 0.01).unwrap();
    assert_eq!(segs.len(), 1);
    let c = coulomb_count(&segs[0]);
    let offset = cell.q(c.v[0]);
    for (v, q) in c.v.iter().zip(&c.q) {
        assert!((q + offset - cell.q(*v)).abs() <= 1e-6, "at {v}: {q}");
    }
}

#[test]
fn linear_fade_yields_its_rate() {
    let spec = SynthSpec {
        fade_rate: 0.02,
        n_cycles: 10,
        ..SynthSpec::plating()
    };
    let segs = extract_cc_charge(&generate_log(&spec).unwrap(), 0.01).unwrap();
    assert_eq!(segs.len(), 10);
    let curves: Vec<_> = segs
        .iter()
        .map(|s| clean_qv(&coulomb_count(s), &CleanConfig::default()).unwrap())
        .collect();
    let rate = degradation_rate(&throughput_series(&curves).unwrap(), 0).unwrap();
    assert!((rate - 2.0).abs() <= 0.05, "{rate}");
}

#[test]
fn generation_is_bit_deterministic() {
    for mode in [NoiseMode::Charge, NoiseMode::Voltage] {
        let spec = SynthSpec {
            noise_mode: mode,
            noise_std: if mode == NoiseMode::Voltage {
                1e-3
            } else {
                2e-5
            },
            n_cycles: 3,
            fade_model: FadeModel::Geometric,
            fade_rate: 0.01,
            seed: 123,
            ..SynthSpec::baseline()
        };
        let a = generate_log(&spec).unwrap();
        assert_eq!(a, generate_log(&spec).unwrap());
        assert_ne!(a, generate_log(&SynthSpec { seed: 124, ..spec }).unwrap());
    }
}

#[test]
fn true_derivative_matches_fine_differences() {
    let spec = SynthSpec::plating();
    let cell = SynthCell::new(&spec).unwrap();
    let [a, b] = spec.v_range;
    let h = (b - a) / 1e5;
    for i in 1..200 {
        let v = a + (b - a) * i as f64 / 200.0;
        let d = |h: f64| (cell.q(v + h) - cell.q(v - h)) / (2.0 * h);
        let fd = (4.0 * d(h) - d(2.0 * h)) / 3.0;
        let exact = true_dqdv(&spec, v).unwrap();
        assert!(
            (fd - exact).abs() <= 1e-8 * exact.abs(),
            "at {v}: {fd} vs {exact}"
        );
    }
}
