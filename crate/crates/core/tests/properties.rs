mod common;

use std::collections::BTreeMap;

use common::oracles::{ap_oracle, f1_oracle};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roar::encoders::svae_loss;
use roar::fieldsim::label_failures;
use roar::fusion::{ForwardMode, Variant, STATE_LIMIT};
use roar::numerics::{
    adam_step, hardtanh, scaled_dot_product_attention, AdamConfig, AdamState, MultiHeadAttention, ParamStore, Tensor,
};
use roar::pipeline::{f1_score, pr_auc, rebalance, total_loss, windows_for_lengths, BatchOutputs, LossCoefficients};

fn unit_vec(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, n)
}

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1usize..120, prop::sample::select(vec![2u32, 5, 1000])).prop_flat_map(|(n, levels)| {
        (
            prop::collection::vec((0..=levels).prop_map(move |k| k as f64 / levels as f64), n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_total_is_the_weighted_sum(
        n in 1usize..12,
        alpha in 0.0..10.0f64,
        beta in 0.0..2.0f64,
        gamma in 0.0..2.0f64,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let out = BatchOutputs {
            svae_per_frame: (0..n).map(|_| r.gen_range(0.0..40.0)).collect(),
            y_hat: (0..n * 10).map(|_| r.gen_range(0.0..1.0)).collect(),
            y_future: (0..n * 10).map(|_| r.gen()).collect(),
            p_camera: (0..n).map(|_| r.gen_range(0.0..1.0)).collect(),
            occ_camera: (0..n).map(|_| r.gen()).collect(),
            p_lidar: (0..n).map(|_| r.gen_range(0.0..1.0)).collect(),
            occ_lidar: (0..n).map(|_| r.gen()).collect(),
        };
        let b = total_loss(&out, LossCoefficients { alpha, beta, gamma }).unwrap();
        let sum = b.svae + alpha * b.anomaly + beta * b.cam_occ + gamma * b.lidar_occ;
        prop_assert!((b.total - sum).abs() <= 1e-12 * sum.max(1.0));
        prop_assert!(b.anomaly >= 0.0 && b.cam_occ >= 0.0 && b.lidar_occ >= 0.0);
    }

    #[test]
    fn metrics_match_oracles((scores, mut labels) in scored_labels(), t in 0.0..1.0f64) {
        labels[0] = true;
        let f = f1_score(&scores, &labels, t).unwrap();
        prop_assert!((f.f1 - f1_oracle(&scores, &labels, t)).abs() <= 1e-9);
        prop_assert_eq!(f.tp + f.fp + f.fn_ + f.tn, scores.len());
        let ap = pr_auc(&scores, &labels).unwrap();
        prop_assert!((ap - ap_oracle(&scores, &labels)).abs() <= 1e-9);
        prop_assert!((0.0..=1.0).contains(&ap));
    }

    #[test]
    fn rebalanced_windows_stay_inside_their_episodes(
        lengths in prop::collection::vec(0usize..40, 1..30),
        seq_len in 1usize..10,
        target in 0.05..0.95f64,
        seed in any::<u64>(),
    ) {
        let windows = windows_for_lengths(&lengths, seq_len).unwrap();
        prop_assume!(!windows.is_empty());
        let flags: Vec<bool> = windows.iter().map(|w| (w.episode + w.start) % 3 == 0).collect();
        let picked = rebalance(&flags, target, seed).unwrap();
        prop_assert_eq!(picked.len(), windows.len());
        for &i in &picked {
            let w = windows[i];
            prop_assert!(w.start + w.len <= lengths[w.episode]);
            prop_assert_eq!(w.len, seq_len);
        }
        let before = flags.iter().filter(|&&f| f).count();
        let after = picked.iter().filter(|&&i| flags[i]).count();
        if before > 0 && before < flags.len() {
            let want = (target * flags.len() as f64).round() as usize;
            prop_assert!(after.abs_diff(want) <= before.abs_diff(want));
        }
    }

    #[test]
    fn hardtanh_stays_in_bounds(xs in prop::collection::vec(-1e6..1e6f64, 1..50), lo in -20.0..0.0f64, w in 0.1..40.0f64) {
        let hi = lo + w;
        let y = hardtanh(&Tensor::new(vec![xs.len()], xs.clone()).unwrap(), lo, hi);
        for (a, b) in xs.iter().zip(y.data()) {
            prop_assert!(*b >= lo && *b <= hi);
            if *a >= lo && *a <= hi {
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn attention_rows_are_distributions(seed in any::<u64>(), n in 1usize..6, scale in 0.1..50.0f64) {
        use rand::Rng;
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mha = MultiHeadAttention::new("a", 16, 4);
        let mut store = ParamStore::new();
        mha.init(&mut store, &mut r).unwrap();
        let mut x = || Tensor::new(vec![n, 16], (0..n * 16).map(|_| r.gen_range(-scale..scale)).collect()).unwrap();
        let (q, k, v) = (x(), x(), x());
        let out = scaled_dot_product_attention(&q, &k, &v, 4, &mha.projections(&store)).unwrap();
        prop_assert_eq!(out.weights.len(), 4);
        for w in &out.weights {
            for row in w.data().chunks(n) {
                prop_assert!(row.iter().all(|&p| p >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn adam_without_gradient_or_decay_is_a_fixed_point(values in prop::collection::vec(-5.0..5.0f64, 1..20), steps in 1usize..5) {
        let mut params = ParamStore::new();
        params.insert("w", Tensor::new(vec![values.len()], values.clone()).unwrap()).unwrap();
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::zeros(&[values.len()]));
        let mut state = AdamState::new(AdamConfig { weight_decay: 0.0, ..AdamConfig::default() });
        for _ in 0..steps {
            adam_step(&mut params, &grads, &mut state).unwrap();
        }
        prop_assert_eq!(params.get("w").unwrap().data(), values.as_slice());
    }

    #[test]
    fn failure_labels_are_shifts(timeline in prop::collection::vec(any::<bool>(), 1..40), horizon in 1usize..12) {
        for t in 0..timeline.len() {
            let y = label_failures(&timeline, t, horizon);
            prop_assert_eq!(y.len(), horizon);
            for (i, v) in y.iter().enumerate() {
                prop_assert_eq!(*v, timeline.get(t + i).copied().unwrap_or(false));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn state_is_bounded_for_any_weights(seed in any::<u64>(), gain in 1.0..200.0f64, frames in 5usize..40) {
        let (model, mut params) = common::small_model(Variant::Full, seed);
        for name in ["fusion.attn.v.weight", "fusion.attn.o.weight", "fusion.attn.v.bias"] {
            params.get_mut(name).unwrap().data_mut().iter_mut().for_each(|w| *w *= gain);
        }
        let eps = common::small_episodes(1, seed);
        let f = &eps[0].frames[..frames.min(eps[0].len())];
        let steps = model.roar_forward(&params, f, ForwardMode::EVAL, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for s in &steps {
            prop_assert!(s.new_state.max_abs() <= STATE_LIMIT);
            prop_assert!(s.y_hat.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn svae_loss_is_nonnegative(seed in any::<u64>(), ranges in unit_vec(271..272)) {
        let (model, params) = common::small_model(Variant::Full, seed);
        let max = common::small_world().lidar_max_range;
        let scan = roar::fieldsim::LidarScan { ranges: ranges.iter().map(|r| (r * max).max(1e-3)).collect() };
        let svae = model.svae.as_ref().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for noise in [None, Some(&mut rng as &mut dyn rand::RngCore)] {
            let out = svae.encode(&params, &scan, noise).unwrap();
            prop_assert!(svae_loss(&out, &scan, max).unwrap() >= 0.0);
        }
    }
}
