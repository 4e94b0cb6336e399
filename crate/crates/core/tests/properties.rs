use proptest::prelude::*;

use mimo_detect::channel::{apply_channel, gen_iid_gaussian, gen_kronecker, sigma2_from_snr};
use mimo_detect::detectors::{Detect, DetectorKind};
use mimo_detect::harness::{run_sweep, ChannelSource, SweepConfig};
use mimo_detect::models::{decode_params, encode_params, init_full_params, BoundModel, IidParams, ModelParams, OampNetParams};
use mimo_detect::numerics::RngStream;
use mimo_detect::trainer::{train_on_channel, TrainConfig};
use mimo_detect::Constellation;

// the matched filter keeps inter-stream interference, so it is left out
const CLASSICAL: [DetectorKind; 6] = [
    DetectorKind::Zf,
    DetectorKind::Mmse,
    DetectorKind::Vblast,
    DetectorKind::Amp,
    DetectorKind::Oamp,
    DetectorKind::Ml,
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn near_noiseless_detection_recovers_symbols(seed in 0u64..1_000_000, order_pick in 0usize..2) {
        let order = [4, 16][order_pick];
        let c = Constellation::new(order).unwrap();
        // tall enough that AMP also decodes cleanly
        let (n_r, n_t) = (32, 2);
        let h = gen_iid_gaussian(n_r, n_t, RngStream::new(seed, 0)).unwrap().h;
        let mut rng = RngStream::new(seed, 1).rng();
        let s = c.sample_symbols(n_t, &mut rng);
        let s2 = sigma2_from_snr(&h, 60.0);
        let y = apply_channel(&h, &c.to_points(&s), s2, &mut rng).unwrap();
        for kind in CLASSICAL {
            let det = kind.prepare_classical(&h, s2, &c).unwrap();
            let r = det.detect(&y).unwrap();
            prop_assert_eq!(&r.symbols, &s, "{}", kind);
        }
    }

    #[test]
    fn parameter_blobs_round_trip(layers in 1usize..6, seed in 0u64..1000, kind in 0usize..3) {
        let h = gen_kronecker(5, 3, 0.4, 0.2, RngStream::new(seed, 0)).unwrap().h;
        let mut p = match kind {
            0 => ModelParams::Iid(IidParams::new(layers)),
            1 => ModelParams::OampNet(OampNetParams::new(layers)),
            _ => ModelParams::Full(init_full_params(&h, layers)),
        };
        let f: Vec<f64> = (0..p.len()).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 37.0 - 13.0).collect();
        p.set_flat(&f).unwrap();
        let q = decode_params(&encode_params(&p)).unwrap();
        prop_assert_eq!(q, p);
    }

    #[test]
    fn learned_models_are_deterministic_per_input(seed in 0u64..1000) {
        let c = Constellation::new(16).unwrap();
        let h = gen_iid_gaussian(8, 4, RngStream::new(seed, 0)).unwrap().h;
        let s2 = sigma2_from_snr(&h, 15.0);
        let mut rng = RngStream::new(seed, 1).rng();
        let y = apply_channel(&h, &c.to_points(&c.sample_symbols(4, &mut rng)), s2, &mut rng).unwrap();
        for p in [
            ModelParams::Iid(IidParams::new(4)),
            ModelParams::OampNet(OampNetParams::new(4)),
            ModelParams::Full(init_full_params(&h, 4)),
        ] {
            let m = BoundModel::new(&p, &h, s2, &c).unwrap();
            let a = m.detect(&y).unwrap();
            let b = m.detect(&y).unwrap();
            prop_assert_eq!(&a.symbols, &b.symbols);
            prop_assert!(a.soft.iter().all(|v| v.re.is_finite() && v.im.is_finite()));
        }
    }
}

fn sweep(threads: usize, channel: ChannelSource) -> String {
    let mut cfg = SweepConfig::new(
        vec![DetectorKind::Mmse, DetectorKind::Amp, DetectorKind::Vblast],
        4,
        channel,
        vec![4.0, 8.0],
        11,
    );
    cfg.threads = Some(threads);
    cfg.block_uses = 40;
    cfg.max_symbols = 12_000;
    cfg.min_errors = 50;
    run_sweep(&cfg).unwrap().to_csv()
}

#[test]
fn sweeps_do_not_depend_on_thread_count() {
    for ch in [
        ChannelSource::Iid { n_r: 12, n_t: 6 },
        ChannelSource::Kron { n_r: 12, n_t: 6, rho_r: 0.6, rho_t: 0.3 },
    ] {
        let one = sweep(1, ch.clone());
        assert_eq!(one, sweep(4, ch.clone()));
        assert_eq!(one, sweep(1, ch));
    }
}

#[test]
fn common_random_numbers_across_detectors() {
    // with shared channels and data, ML never makes more errors than ZF in
    // total once noise is negligible, and both see identical symbol counts
    let mut cfg = SweepConfig::new(vec![DetectorKind::Zf, DetectorKind::Ml], 4, ChannelSource::Iid { n_r: 4, n_t: 2 }, vec![30.0], 3);
    cfg.block_uses = 50;
    cfg.max_symbols = 4000;
    cfg.min_errors = u64::MAX;
    let r = run_sweep(&cfg).unwrap();
    let zf = r.row(DetectorKind::Zf, 30.0).unwrap();
    let ml = r.row(DetectorKind::Ml, 30.0).unwrap();
    assert_eq!(zf.symbols, ml.symbols);
    assert_eq!(zf.blocks.len(), ml.blocks.len());
    assert!(ml.errors <= zf.errors);
}

#[test]
fn held_out_loss_falls_across_training_windows() {
    let c = Constellation::new(4).unwrap();
    let h = gen_kronecker(8, 4, 0.7, 0.7, RngStream::new(21, 0)).unwrap().h;
    let mut cfg = TrainConfig::new(1000, (8.0, 12.0), RngStream::new(22, 0));
    cfg.batch_size = 100;
    cfg.history_every = 100;
    let out = train_on_channel(&h, &c, &cfg, &ModelParams::Full(init_full_params(&h, 6))).unwrap();
    let losses: Vec<f64> = out.history.iter().map(|(_, l)| *l).collect();
    assert_eq!(losses.len(), 11);
    let falling = losses.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(falling >= 9, "{losses:?}");
    assert!(out.improved);
}
