use cpdfs_core::polarization::Pol;
use cpdfs_core::timetag::io::{read_binary, read_text, write_binary, write_text};
use cpdfs_core::timetag::{
    all_settings, calibrate_offsets, conditional_histogram, expected_accidentals, extract_threefold,
    fit_gaussian_peak, pulse_keys, simulate_setting_runs, simulate_streams, start_stop_histogram,
    CalibrationOptions, Channel, CoincidenceWindows, ExperimentConfig, OutcomeTable, PerDetector,
    TagStreams,
};
use cpdfs_core::tomography::MeasurementSetting;
use proptest::prelude::*;

fn hh() -> MeasurementSetting {
    MeasurementSetting::new(Pol::H, Pol::H)
}

#[test]
fn dark_count_accidentals_match_product_formula() {
    let rate = 7e5;
    let cfg = ExperimentConfig {
        duration_ps: 10_000_000_000_000,
        dark_rate_hz: PerDetector::uniform(rate),
        ..ExperimentConfig::default()
    }
    .silent();
    let cfg = ExperimentConfig {
        dark_rate_hz: PerDetector::uniform(rate),
        ..cfg
    };
    let s = simulate_streams(&cfg, &OutcomeTable::ideal(), hh(), 77, 0).unwrap();
    let w = 6_000;
    let windows = CoincidenceWindows {
        w_a: w,
        w_r: w,
        w_b: w,
        ..CoincidenceWindows::default()
    };
    let got = extract_threefold(&s, &windows, cfg.rep_period_ps, cfg.clock_divider).unwrap().count as f64;
    let refs = (s.get(Channel::Clock).len() as u64 * cfg.clock_divider) as f64;
    let expected = expected_accidentals([rate; 3], [w; 3], refs);
    let sigma = expected.sqrt();
    println!("accidentals: observed {got}, expected {expected:.1} ± {sigma:.1}");
    assert!(expected > 30.0);
    assert!((got - expected).abs() < 3.0 * sigma);
}

#[test]
fn clock_histogram_peaks_are_one_pulse_apart() {
    let cfg = ExperimentConfig {
        duration_ps: 100_000_000_000,
        efficiency: PerDetector::uniform(0.5),
        pair_rate: 0.0,
        dark_rate_hz: PerDetector::uniform(0.0),
        threefold_prob: 0.0,
        ..ExperimentConfig::default()
    };
    let s = simulate_streams(&cfg, &OutcomeTable::ideal(), hh(), 5, 0).unwrap();
    let bin = 20;
    let h = start_stop_histogram(s.get(Channel::Clock), s.get(Channel::APrime), bin, cfg.clock_period_ps())
        .unwrap();
    let rep = cfg.rep_period_ps as usize;
    let per_period = rep / bin as usize;
    let mut centers = Vec::new();
    for k in 0..cfg.clock_divider as usize {
        let counts = &h.counts[k * per_period..(k + 1) * per_period];
        let i = counts.iter().enumerate().max_by_key(|(_, c)| **c).unwrap().0 + k * per_period;
        let fit = fit_gaussian_peak(&h, h.bin_center(i), 400.0).unwrap();
        centers.push(fit.mean);
    }
    for pair in centers.windows(2) {
        let spacing = pair[1] - pair[0];
        assert!(
            (spacing - cfg.rep_period_ps as f64).abs() <= bin as f64,
            "spacing {spacing}"
        );
    }
}

#[test]
fn pair_peak_width_is_root_two_jitter() {
    let cfg = ExperimentConfig {
        duration_ps: 10_000_000_000,
        efficiency: PerDetector::uniform(1.0),
        mu: 0.0,
        echo_ratio: 0.0,
        dark_rate_hz: PerDetector::uniform(0.0),
        threefold_prob: 0.0,
        ..ExperimentConfig::default()
    };
    let s = simulate_streams(&cfg, &OutcomeTable::ideal(), hh(), 9, 0).unwrap();
    let h = conditional_histogram(
        s.get(Channel::APrime),
        |_| true,
        s.get(Channel::BPrime),
        -2_500,
        10,
        10_000,
    )
    .unwrap();
    let fit = fit_gaussian_peak(&h, cfg.pair_delay_ps as f64, 600.0).unwrap();
    let target = 2f64.sqrt() * cfg.jitter_sigma_ps;
    println!("pair peak: mean {:.1} ps, sigma {:.1} ps (target {target:.1})", fit.mean, fit.sigma);
    assert!((fit.sigma / target - 1.0).abs() < 0.1);
    assert!((fit.mean - cfg.pair_delay_ps as f64).abs() < 10.0);
}

#[test]
fn calibration_recovers_simulated_offsets() {
    let cfg = ExperimentConfig {
        duration_ps: 2_000_000_000,
        ..ExperimentConfig::default()
    };
    let settings = all_settings();
    let runs = simulate_setting_runs(&cfg, &OutcomeTable::ideal(), &settings[..6], 12).unwrap();
    let refs: Vec<&TagStreams> = runs.iter().map(|r| &r.streams).collect();
    let o = calibrate_offsets(&refs, cfg.rep_period_ps, cfg.clock_divider, &CalibrationOptions::default())
        .unwrap();
    println!("calibrated {o:?}");
    let truth = [
        cfg.delay_a_ps as i64,
        cfg.delay_r_ps as i64,
        (cfg.delay_a_ps + cfg.pair_delay_ps) as i64,
    ];
    for (got, want) in [o.dt1, o.dt2, o.dt3].into_iter().zip(truth) {
        assert!((got - want).abs() <= 10, "offsets {o:?}");
    }
}

#[test]
fn calibration_fails_without_signal() {
    let cfg = ExperimentConfig {
        duration_ps: 100_000_000,
        ..ExperimentConfig::default()
    }
    .silent();
    let s = simulate_streams(&cfg, &OutcomeTable::ideal(), hh(), 1, 0).unwrap();
    assert!(calibrate_offsets(&[&s], cfg.rep_period_ps, cfg.clock_divider, &CalibrationOptions::default()).is_err());
}

#[test]
fn genuine_counts_follow_outcome_table() {
    let cfg = ExperimentConfig {
        duration_ps: 5_000_000_000,
        threefold_prob: 0.02,
        ..ExperimentConfig::default()
    };
    let table = OutcomeTable::ideal();
    let w = CoincidenceWindows::default();
    let count = |m, n| {
        let s = simulate_streams(&cfg, &table, MeasurementSetting::new(m, n), 3, 0).unwrap();
        extract_threefold(&s, &w, cfg.rep_period_ps, cfg.clock_divider).unwrap().count
    };
    let (hh, hv) = (count(Pol::H, Pol::H), count(Pol::H, Pol::V));
    assert!(hh > 200, "HH {hh}");
    assert!(hv * 20 < hh, "HH {hh}, HV {hv}");
}

fn brute_force_hit(t: u64, clock: &[u64], offset: i64, width: u64, rep: u64, divider: u64) -> bool {
    clock.iter().any(|&c| {
        (0..divider).any(|l| {
            let lo = (c + l * rep) as i64 + offset - (width / 2) as i64;
            let t = t as i64;
            t >= lo && t < lo + width as i64
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn pulse_keys_match_brute_force(
        tags in prop::collection::vec(0u64..200_000, 0..40),
        offset in -2_000i64..12_000,
        width in 1u64..1_000,
    ) {
        let clock = vec![10_000, 60_000, 110_000];
        let (rep, divider) = (12_500, 4);
        let mut tags = tags;
        tags.sort_unstable();
        let keys = pulse_keys(&tags, &clock, offset, width, rep, divider).unwrap();
        let hits = tags.iter().filter(|&&t| brute_force_hit(t, &clock, offset, width, rep, divider)).count();
        prop_assert_eq!(keys.is_empty(), hits == 0);
        prop_assert!(keys.len() <= hits);
        prop_assert!(keys.windows(2).all(|k| k[0] < k[1]));
    }

    #[test]
    fn tag_files_round_trip(chans in prop::collection::vec((0u8..4, any::<u64>()), 0..200)) {
        let mut streams: [Vec<u64>; 4] = Default::default();
        for (c, t) in chans {
            streams[c as usize].push(t);
        }
        let s = TagStreams::from_unsorted(streams, 123);
        let mut bin = Vec::new();
        write_binary(&mut bin, &s).unwrap();
        prop_assert_eq!(&read_binary(&bin[..], 123).unwrap(), &s);
        let mut txt = Vec::new();
        write_text(&mut txt, &s).unwrap();
        prop_assert_eq!(&read_text(&txt[..], 123).unwrap(), &s);
    }
}
