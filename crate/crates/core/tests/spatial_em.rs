use affordem::em::{init_prior_from_keypoints, EmState};
use affordem::protocol::{crop_all, degrade_all};
use affordem::spatial::fit_spatial_mixture;
use affordem::{
    em_step, estep_labelmap, estep_posterior, generate_dataset, prepare_em_records, run_em, AnnotationLevel,
    DatasetRecord, EmConfig, GaussianComponent, ImageLabelSet, Keypoint, LabelMap, SceneConfig, SgdConfig,
    SpatialPrior,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_component(rng: &mut ChaCha8Rng, w: f64, h: f64) -> GaussianComponent {
    let a: f64 = rng.random_range(1.0..80.0);
    let b: f64 = rng.random_range(1.0..80.0);
    let c = rng.random_range(-0.9..0.9) * (a * b).sqrt();
    GaussianComponent {
        weight: rng.random_range(0.05..1.0),
        mean: [rng.random_range(0.0..w), rng.random_range(0.0..h)],
        covariance: [a, c, c, b],
    }
}

#[test]
fn posterior_rows_sum_to_one_and_absent_labels_are_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (w, h) = (20, 16);
    for _ in 0..150 {
        let l = rng.random_range(2..=7usize);
        let present: Vec<u8> = (2..=l as u8).filter(|_| rng.random_bool(0.5)).collect();
        let mut prior = SpatialPrior::new(10f64.powf(rng.random_range(-6.0..-1.0)));
        for z in &present {
            let k = rng.random_range(1..4);
            prior
                .mixtures
                .insert(*z, (0..k).map(|_| random_component(&mut rng, w as f64, h as f64)).collect());
        }
        let set = ImageLabelSet::from_labels(present.iter().copied());
        let post = estep_posterior(&prior, &set, w, h, l).unwrap();
        for i in 0..w * h {
            let p = post.pixel(i);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for z in 2..=l as u8 {
                if !present.contains(&z) {
                    assert_eq!(p[z as usize - 1], 0.0);
                }
            }
        }
    }
}

#[test]
fn initialization_disc_boundary_matches_density_equation() {
    // exp(-r^2/80) / (2 pi 40) = 1e-3
    let r = (80.0 * (2.0 * std::f64::consts::PI * 40.0 * 1e-3f64).recip().ln()).sqrt();
    assert!((r - 10.51).abs() < 0.01);
    let (w, h) = (41, 41);
    let mut prior = SpatialPrior::new(1e-3);
    prior.mixtures.insert(2, vec![GaussianComponent::isotropic(1.0, [20.0, 20.0], 40.0)]);
    let map = estep_labelmap(&prior, &ImageLabelSet::from_labels([2]), w, h, 2).unwrap();
    let mut ring = (f64::INFINITY, 0.0f64);
    for y in 0..h {
        for x in 0..w {
            let d = ((x as f64 - 20.0).powi(2) + (y as f64 - 20.0).powi(2)).sqrt();
            let label = map.get(x, y);
            assert_eq!(label, if d < r { 2 } else { 1 }, "pixel ({x}, {y}) at distance {d}");
            if label == 1 {
                ring.0 = ring.0.min(d);
            } else {
                ring.1 = ring.1.max(d);
            }
        }
    }
    // innermost background and outermost foreground pixels bracket r
    assert!(ring.1 < r && r < ring.0 && ring.0 - ring.1 < 0.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mixture_weights_sum_to_one_with_spd_covariances(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (24usize, 18usize);
        let regions: Vec<Vec<usize>> = (0..rng.random_range(1..5))
            .map(|_| (0..rng.random_range(1..40)).map(|_| rng.random_range(0..w * h)).collect())
            .collect();
        let comps = fit_spatial_mixture(&regions, w, 1.0);
        prop_assert!((comps.iter().map(|c| c.weight).sum::<f64>() - 1.0).abs() < 1e-12);
        for c in comps {
            prop_assert!(c.determinant() > 0.0 && c.min_eigenvalue() > 0.0);
        }
    }
}

fn small_suite(count: usize) -> Vec<DatasetRecord> {
    let ds = generate_dataset(&SceneConfig { seed: 5, ..SceneConfig::default() }, count).unwrap();
    crop_all(&ds.records, 30)
}

fn quick_config() -> EmConfig {
    EmConfig {
        sgd: SgdConfig {
            learning_rate: 0.05,
            iterations: 300,
            decay_period: 150,
            ..SgdConfig::default()
        },
        max_iterations: 3,
        ..EmConfig::default()
    }
}

fn class_iou(pred: &LabelMap, truth: &LabelMap) -> f64 {
    let (mut inter, mut union) = (0, 0);
    for (p, t) in pred.labels().iter().zip(truth.labels()) {
        let (p, t) = (*p > 1, *t > 1);
        inter += (p && t) as usize;
        union += (p || t) as usize;
    }
    inter as f64 / union as f64
}

#[test]
fn em_keeps_pins_and_label_sets() {
    let full = small_suite(6);
    let kp = degrade_all(&full[..4], AnnotationLevel::Keypoints).unwrap();
    let il = degrade_all(&full[4..], AnnotationLevel::ImageLabels).unwrap();
    let config = quick_config();
    let records = prepare_em_records(&kp, &il).unwrap();
    let mut state = EmState::initialize(&records, 4, &config).unwrap();
    // image-label records have no estimate before the first scorer exists
    assert!(state.estimates[4..].iter().all(Option::is_none));
    for _ in 0..2 {
        state = em_step(&state, &records, 4, &config).unwrap();
        for (k, r) in records.iter().enumerate() {
            let y = state.estimates[k].as_ref().unwrap();
            assert!(y.labels().iter().all(|l| *l == 1 || r.labels.contains(*l)));
            if r.has_keypoints {
                let prior = state.priors[k].as_ref().unwrap();
                assert!(prior.pins_hold(), "record {}", r.id);
                assert_eq!(prior.pinned, r.keypoints);
            }
        }
    }
    assert_eq!(state.trace.len(), 2);
    assert!(state.trace.iter().all(|t| (0.0..=1.0).contains(&t.changed_fraction)));
}

#[test]
fn unit_threshold_runs_exactly_one_step() {
    let full = small_suite(4);
    let kp = degrade_all(&full, AnnotationLevel::Keypoints).unwrap();
    let config = EmConfig { change_threshold: 1.0, ..quick_config() };
    let out = run_em(&kp, &[], 4, &config, None).unwrap();
    assert_eq!(out.iterations(), 1);
    let records = prepare_em_records(&kp, &[]).unwrap();
    let step = em_step(&EmState::initialize(&records, 4, &config).unwrap(), &records, 4, &config).unwrap();
    assert_eq!(out.state.estimates, step.estimates);
    assert_eq!(out.state.scorer, step.scorer);
}

/// Elongated class-2 ellipse (semi-axes 18 x 6) centered in a textured frame.
fn ellipse_record(k: usize) -> (DatasetRecord, LabelMap) {
    let (w, h) = (64, 48);
    let vertical = k % 2 == 1;
    let (cx, cy) = (32.0 + (k as f64 - 1.5) * 2.0, 24.0);
    let (ax, ay) = if vertical { (6.0, 18.0) } else { (18.0, 6.0) };
    let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
    let mut values = Vec::with_capacity(w * h * 3);
    let mut labels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let inside = ((x as f64 - cx) / ax).powi(2) + ((y as f64 - cy) / ay).powi(2) <= 1.0;
            let base = if inside { [0.85, 0.2, 0.18] } else { [0.3, 0.32, 0.3] };
            for c in base {
                values.push((c + rng.random_range(-0.05..0.05f64)).clamp(0.0, 1.0));
            }
            labels.push(if inside { 2 } else { 1 });
        }
    }
    let truth = LabelMap::new(w, h, labels).unwrap();
    let record = DatasetRecord {
        id: format!("ellipse{k}"),
        image: affordem::PixelGrid::new(w, h, 3, values).unwrap(),
        annotation: affordem::Annotation::Keypoints {
            keypoints: vec![Keypoint { label: 2, x: cx as usize, y: cy as usize }],
            labels: ImageLabelSet::from_labels([2]),
        },
        pose: None,
        bbox: affordem::BoundingBox::new(0, 0, w, h).unwrap(),
        actor: 0,
    };
    (record, truth)
}

#[test]
fn one_step_improves_on_the_initialization_disc() {
    let (records, truths): (Vec<_>, Vec<_>) = (0..4).map(ellipse_record).unzip();
    let config = quick_config();
    let prepared = prepare_em_records(&records, &[]).unwrap();
    let init = EmState::initialize(&prepared, 2, &config).unwrap();
    let step = em_step(&init, &prepared, 2, &config).unwrap();
    let mean = |estimates: &[Option<LabelMap>]| {
        estimates
            .iter()
            .zip(&truths)
            .map(|(y, t)| class_iou(y.as_ref().unwrap(), t))
            .sum::<f64>()
            / truths.len() as f64
    };
    let (before, after) = (mean(&init.estimates), mean(&step.estimates));
    assert!(after > before + 0.1, "disc {before:.3}, one step {after:.3}");
}

#[test]
fn single_keypoint_prior_is_the_initialization_gaussian() {
    let kp = [Keypoint { label: 3, x: 12, y: 9 }];
    let prior = init_prior_from_keypoints(&kp, &ImageLabelSet::from_labels([3]), &EmConfig::default());
    assert_eq!(prior.mixtures[&3], vec![GaussianComponent::isotropic(1.0, [12.0, 9.0], 40.0)]);
    assert!(prior.pins_hold());
}
