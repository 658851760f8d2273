mod common;

use common::{small_episodes, small_model, small_world};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roar::encoders::param_names;
use roar::fieldsim::Frame;
use roar::fusion::{
    fuse_step, repeated_label_query, ForwardMode, LatentState, Sensor, Variant, STATE_DIM, STATE_LIMIT,
};
use roar::numerics::{AttentionProjections, Tensor};

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(99)
}

fn frames(n: usize, seed: u64) -> Vec<Frame> {
    small_episodes(3, seed)
        .into_iter()
        .flat_map(|e| e.frames)
        .take(n)
        .collect()
}

#[test]
fn sensor_tokens_are_shared_between_queries_and_keys() {
    let (model, params) = small_model(Variant::Full, 1);
    let f = frames(1, 1).remove(0);
    let f_path = model.path.encode(&params, &f.path).unwrap();
    let f_cam = model.camera.encode(&params, &f.camera).unwrap();
    let f_lidar = model
        .svae
        .as_ref()
        .unwrap()
        .encode(&params, &f.scan, None)
        .unwrap()
        .feature;
    let hc = model.occlusion_head(&params, &f_cam, Sensor::Camera).unwrap().hidden;
    let hl = model.occlusion_head(&params, &f_lidar, Sensor::Lidar).unwrap().hidden;
    let h = LatentState {
        h: (0..STATE_DIM).map(|i| (i as f64 * 0.37).sin()).collect(),
    };
    let out = fuse_step(&model.attention, &params, &h, &f_path, &f_cam, &f_lidar, &hc, &hl).unwrap();
    for j in 1..4 {
        assert_eq!(out.queries.row(j), out.keys.row(j));
    }
    assert_eq!(out.keys.row(0), h.h.as_slice());
    let occ: Vec<f64> = hc.iter().chain(&hl).copied().collect();
    assert_eq!(out.queries.row(0), occ.as_slice());
    assert_eq!(out.keys.row(1), f_path.values.as_slice());
    assert_eq!(out.keys.row(3), f_lidar.values.as_slice());
    assert!(out.new_state.max_abs() <= STATE_LIMIT);
}

#[test]
fn zero_occlusion_query_with_identity_projections_attends_uniformly() {
    let (model, mut params) = small_model(Variant::Full, 2);
    let id = AttentionProjections::identity(STATE_DIM);
    let a = &model.attention;
    for (lin, w, b) in [
        (&a.query, &id.w_q, &id.b_q),
        (&a.key, &id.w_k, &id.b_k),
        (&a.value, &id.w_v, &id.b_v),
        (&a.output, &id.w_o, &id.b_o),
    ] {
        params
            .get_mut(&lin.weight)
            .unwrap()
            .data_mut()
            .copy_from_slice(w.data());
        params.get_mut(&lin.bias).unwrap().data_mut().copy_from_slice(b.data());
    }
    let mut r = rng();
    let feat = |r: &mut ChaCha8Rng| {
        roar::encoders::FeatureVec::new((0..STATE_DIM).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
    };
    let (fp, fc, fl) = (feat(&mut r), feat(&mut r), feat(&mut r));
    let h = LatentState {
        h: (0..STATE_DIM).map(|_| r.gen_range(-1.0..1.0)).collect(),
    };
    let out = fuse_step(&model.attention, &params, &h, &fp, &fc, &fl, &[0.0; 32], &[0.0; 32]).unwrap();
    let heads = model.config.heads;
    for head in 0..heads {
        let row = &out.weights[head * 16..head * 16 + 4];
        for w in row {
            assert!((w - 0.25).abs() < 1e-15, "head {head}: {row:?}");
        }
    }
}

#[test]
fn state_stays_bounded_under_extreme_inputs() {
    let (model, mut params) = small_model(Variant::Full, 3);
    for name in ["fusion.attn.v.weight", "fusion.attn.o.weight"] {
        params
            .get_mut(name)
            .unwrap()
            .data_mut()
            .iter_mut()
            .for_each(|w| *w *= 60.0);
    }
    let world = small_world();
    let mut r = rng();
    let mut seq = Vec::with_capacity(500);
    let base = frames(40, 3);
    for t in 0..500 {
        let mut f = base[t % base.len()].clone();
        let hi = t % 2 == 0;
        f.camera
            .pixels
            .iter_mut()
            .for_each(|p| *p = if hi || r.gen::<bool>() { 1.0 } else { 0.0 });
        f.path
            .pixels
            .iter_mut()
            .for_each(|p| *p = r.gen_range(0.0..=1.0f32).round());
        f.scan
            .ranges
            .iter_mut()
            .for_each(|x| *x = if r.gen::<bool>() { world.lidar_max_range } else { 1e-3 });
        seq.push(f);
    }
    let out = model
        .roar_forward(&params, &seq, ForwardMode::EVAL, &mut rng())
        .unwrap();
    assert_eq!(out.len(), 500);
    let peak = out.iter().map(|s| s.new_state.max_abs()).fold(0.0, f64::max);
    assert!(peak <= STATE_LIMIT, "peak {peak}");
    assert!(peak >= STATE_LIMIT * 0.5, "adversarial setup too weak: peak {peak}");
}

#[test]
fn no_state_outputs_ignore_earlier_frames() {
    let (model, params) = small_model(Variant::NoState, 4);
    let a = frames(12, 4);
    let b = frames(12, 5);
    let mut mixed = b[..11].to_vec();
    mixed.push(a[11].clone());
    let ra = model.roar_forward(&params, &a, ForwardMode::EVAL, &mut rng()).unwrap();
    let rm = model
        .roar_forward(&params, &mixed, ForwardMode::EVAL, &mut rng())
        .unwrap();
    assert_eq!(ra[11].y_hat, rm[11].y_hat);
    assert_eq!(ra[11].attended, rm[11].attended);
}

#[test]
fn full_model_state_carries_history() {
    let (model, params) = small_model(Variant::Full, 4);
    let a = frames(12, 4);
    let b = frames(12, 5);
    let mut mixed = b[..11].to_vec();
    mixed.push(a[11].clone());
    let ra = model.roar_forward(&params, &a, ForwardMode::EVAL, &mut rng()).unwrap();
    let rm = model
        .roar_forward(&params, &mixed, ForwardMode::EVAL, &mut rng())
        .unwrap();
    assert_ne!(ra[11].y_hat, rm[11].y_hat);
}

#[test]
fn each_episode_starts_from_zero_state() {
    let (model, params) = small_model(Variant::Full, 5);
    let a = frames(10, 6);
    let b = frames(10, 7);
    let _ = model.roar_forward(&params, &a, ForwardMode::EVAL, &mut rng()).unwrap();
    let rb = model.roar_forward(&params, &b, ForwardMode::EVAL, &mut rng()).unwrap();
    let alone = model
        .roar_forward(&params, &b[..1], ForwardMode::EVAL, &mut rng())
        .unwrap();
    assert_eq!(rb[0], alone[0]);
    let joined: Vec<Frame> = a.iter().chain(&b).cloned().collect();
    let rj = model
        .roar_forward(&params, &joined, ForwardMode::EVAL, &mut rng())
        .unwrap();
    assert_ne!(rj[10].y_hat, rb[0].y_hat);
}

#[test]
fn occlusion_hiddens_reach_fusion_unchanged() {
    let (model, params) = small_model(Variant::Full, 6);
    let f = frames(1, 8);
    let step = model
        .roar_forward(&params, &f, ForwardMode::EVAL, &mut rng())
        .unwrap()
        .remove(0);
    let f_cam = model.camera.encode(&params, &f[0].camera).unwrap();
    let f_lidar = model
        .svae
        .as_ref()
        .unwrap()
        .encode(&params, &f[0].scan, None)
        .unwrap()
        .feature;
    let f_path = model.path.encode(&params, &f[0].path).unwrap();
    let hc = model.occlusion_head(&params, &f_cam, Sensor::Camera).unwrap();
    let hl = model.occlusion_head(&params, &f_lidar, Sensor::Lidar).unwrap();
    assert_eq!(step.hidden_camera, hc.hidden);
    assert_eq!(step.hidden_lidar.as_ref(), Some(&hl.hidden));
    assert_eq!(step.y_camera, hc.prob);
    let q0: Vec<f64> = hc.hidden.iter().chain(&hl.hidden).copied().collect();
    assert_eq!(step.query0, q0);
    let fused = fuse_step(
        &model.attention,
        &params,
        &LatentState::zeros(),
        &f_path,
        &f_cam,
        &f_lidar,
        &hc.hidden,
        &hl.hidden,
    )
    .unwrap();
    assert_eq!(fused.attended, step.attended);
    assert_eq!(fused.new_state, step.new_state);
    let y = model
        .predict_anomalies(&params, &step.attended, false, &mut rng())
        .unwrap();
    assert_eq!(y, step.y_hat);
}

#[test]
fn prediction_head_is_deterministic_in_eval_and_neutral_at_zero() {
    let (model, mut params) = small_model(Variant::Full, 7);
    let mut r = rng();
    let att = Tensor::matrix(
        4,
        STATE_DIM,
        (0..4 * STATE_DIM).map(|_| r.gen_range(-3.0..3.0)).collect(),
    )
    .unwrap();
    let a = model
        .predict_anomalies(&params, &att, false, &mut ChaCha8Rng::seed_from_u64(1))
        .unwrap();
    let b = model
        .predict_anomalies(&params, &att, false, &mut ChaCha8Rng::seed_from_u64(2))
        .unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), small_world().horizon);
    let c = model
        .predict_anomalies(&params, &att, true, &mut ChaCha8Rng::seed_from_u64(1))
        .unwrap();
    assert_ne!(a, c);
    for name in [
        "fusion.head.fc1.weight",
        "fusion.head.fc1.bias",
        "fusion.head.fc2.weight",
        "fusion.head.fc2.bias",
    ] {
        params.get_mut(name).unwrap().data_mut().fill(0.0);
    }
    let z = model.predict_anomalies(&params, &att, false, &mut rng()).unwrap();
    assert!(z.iter().all(|&p| p == 0.5));
    assert!(model
        .predict_anomalies(&params, &Tensor::zeros(&[3, STATE_DIM]), false, &mut rng())
        .is_err());
}

#[test]
fn camera_only_variant_has_no_lidar_parameters() {
    let (model, params) = small_model(Variant::IoRoar, 8);
    assert!(param_names(&params, "").all(|n| !n.contains("svae") && !n.contains("lidar")));
    assert_eq!(model.tokens(), 3);
    let f = frames(3, 9);
    let out = model.roar_forward(&params, &f, ForwardMode::EVAL, &mut rng()).unwrap();
    assert!(out
        .iter()
        .all(|s| s.y_lidar.is_none() && s.attended.shape() == [3, STATE_DIM]));
    assert_eq!(&out[0].query0[..32], out[0].hidden_camera.as_slice());
    assert!(out[0].query0[32..].iter().all(|&v| v == 0.0));
}

#[test]
fn fixed_occlusion_query_is_the_label_vector() {
    let (model, params) = small_model(Variant::FixedOcclusion, 9);
    let f = frames(30, 10);
    let out = model.roar_forward(&params, &f, ForwardMode::EVAL, &mut rng()).unwrap();
    for (s, fr) in out.iter().zip(&f) {
        assert_eq!(s.query0, repeated_label_query(fr.occ_camera_auto, fr.occ_lidar_auto));
    }
    assert!(
        f.iter().any(|fr| fr.occ_camera_auto || fr.occ_lidar_auto),
        "no occluded frame sampled"
    );
}

#[test]
fn no_occlusion_query_is_the_state() {
    let (model, params) = small_model(Variant::NoOcclusion, 10);
    let f = frames(6, 11);
    let out = model.roar_forward(&params, &f, ForwardMode::EVAL, &mut rng()).unwrap();
    assert_eq!(out[0].query0, vec![0.0; STATE_DIM]);
    for t in 1..out.len() {
        assert_eq!(out[t].query0, out[t - 1].new_state.h);
    }
}
