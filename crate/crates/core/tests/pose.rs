use affordem::pose::{
    build_pose_dictionary, collect_pairs, fit_regressor, kernel_features, RegressorParams,
};
use affordem::protocol::{crop_all, degrade_all};
use affordem::{
    fit_keypoint_regressor, generate_dataset, AnnotationLevel, BoundingBox, DatasetRecord, RegressorInput,
    SceneConfig,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (-d2 / (gamma * gamma)).exp()
}

#[test]
fn ridge_weights_satisfy_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..60 {
        let dim = 2 * rng.random_range(1..6);
        let t = rng.random_range(5..40);
        let d = rng.random_range(1..=t.min(12));
        let gamma = rng.random_range(0.5..5.0);
        let lambda = 10f64.powf(rng.random_range(-3.0..0.0));
        let inputs: Vec<f64> = (0..t * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let targets: Vec<[f64; 2]> = (0..t).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let dict = build_pose_dictionary(&inputs, dim, d, 3).unwrap();
        let alpha = fit_keypoint_regressor(&inputs, &targets, dim, &dict, gamma, lambda).unwrap();
        let d = dict.len() / dim;
        let phi = DMatrix::from_fn(t, d, |r, c| {
            rbf(&inputs[r * dim..(r + 1) * dim], &dict[c * dim..(c + 1) * dim], gamma)
        });
        let x = DMatrix::from_fn(t, 2, |r, c| targets[r][c]);
        let lhs = (phi.transpose() * &phi + DMatrix::identity(d, d) * lambda) * &alpha;
        let residual = (lhs - phi.transpose() * x).amax();
        assert!(residual < 1e-8, "residual {residual:e}");
    }
}

#[test]
fn near_interpolation_at_separated_dictionary_entries() {
    let dim = 4;
    let dict: Vec<f64> = (0..6).flat_map(|k| (0..dim).map(move |j| 10.0 * k as f64 + j as f64)).collect();
    let targets: Vec<[f64; 2]> = (0..6).map(|k| [k as f64 * 0.3 - 1.0, 1.0 - k as f64 * 0.2]).collect();
    let alpha = fit_keypoint_regressor(&dict, &targets, dim, &dict, 3.0, 1e-9).unwrap();
    for (k, t) in targets.iter().enumerate() {
        let phi = kernel_features(&dict[k * dim..(k + 1) * dim], &dict, 3.0);
        for c in 0..2 {
            let p: f64 = phi.iter().enumerate().map(|(d, v)| v * alpha[(d, c)]).sum();
            assert!((p - t[c]).abs() < 1e-3);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_responses_lie_in_unit_interval(
        h in prop::collection::vec(-3.0f64..3.0, 6),
        dict in prop::collection::vec(-3.0f64..3.0, 18),
        gamma in 0.1f64..20.0,
    ) {
        let phi = kernel_features(&h, &dict, gamma);
        prop_assert_eq!(phi.len(), 3);
        prop_assert!(phi.iter().all(|v| *v >= 0.0 && *v <= 1.0));
        let own = kernel_features(&h, &h, gamma);
        prop_assert_eq!(own[0], 1.0);
    }
}

fn shifted(record: &DatasetRecord, dx: usize, dy: usize) -> DatasetRecord {
    let b = record.bbox;
    DatasetRecord {
        pose: record.pose.as_ref().map(|p| p.translated(dx as f64, dy as f64)),
        bbox: BoundingBox::new(b.left + dx, b.top + dy, b.width, b.height).unwrap(),
        ..record.clone()
    }
}

#[test]
fn predictions_follow_translations_of_pose_and_box() {
    let ds = generate_dataset(&SceneConfig::default(), 24).unwrap();
    let records = degrade_all(&ds.records, AnnotationLevel::Keypoints).unwrap();
    let params = RegressorParams { dictionary_size: 8, gamma: 5.0, lambda: 0.1 };
    for input in [RegressorInput::Pose, RegressorInput::BoundingBox] {
        let pairs = collect_pairs(&records, 2, input);
        let reg = fit_regressor(&pairs, 2, input, params, 0).unwrap();
        for r in &records[..6] {
            let base = reg.predict_position(r).unwrap();
            let moved = reg.predict_position(&shifted(r, 7, 3)).unwrap();
            assert!((moved[0] - base[0] - 7.0).abs() < 1e-9 && (moved[1] - base[1] - 3.0).abs() < 1e-9);
        }
    }
}

#[test]
fn pose_regression_beats_the_box_center_on_fresh_scenes() {
    let ds = generate_dataset(&SceneConfig { seed: 9, ..SceneConfig::default() }, 60).unwrap();
    let records = degrade_all(&crop_all(&ds.records, 30), AnnotationLevel::Keypoints).unwrap();
    let (train, test) = records.split_at(45);
    let params = RegressorParams { dictionary_size: 20, gamma: 10.0, lambda: 0.1 };
    let reg = fit_regressor(&collect_pairs(train, 2, RegressorInput::Pose), 2, RegressorInput::Pose, params, 0).unwrap();
    let (mut model, mut center, mut n) = (0.0, 0.0, 0);
    for r in test {
        let (cx, cy) = r.bbox.center();
        for kp in r.keypoints().iter().filter(|k| k.label == 2) {
            let p = reg.predict_position(r).unwrap();
            model += ((p[0] - kp.x as f64).powi(2) + (p[1] - kp.y as f64).powi(2)).sqrt();
            center += ((cx - kp.x as f64).powi(2) + (cy - kp.y as f64).powi(2)).sqrt();
            n += 1;
        }
    }
    assert!(n > 5);
    assert!(model < 0.5 * center, "model {:.2} px, box center {:.2} px", model / n as f64, center / n as f64);
}
