use affordem::{loss_and_gradient, pixel_posterior, FeatureGrid, LabelMap, PixelScorer};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_grid(rng: &mut ChaCha8Rng, w: usize, h: usize, dim: usize) -> FeatureGrid {
    FeatureGrid {
        width: w,
        height: h,
        dim,
        values: (0..w * h * dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
    }
}

fn random_scorer(rng: &mut ChaCha8Rng, l: usize, dim: usize) -> PixelScorer {
    PixelScorer::with_parts(
        l,
        dim,
        (0..l * dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        (0..dim).map(|_| rng.random_range(-0.5..0.5)).collect(),
        (0..dim).map(|_| rng.random_range(0.5..2.0)).collect(),
    )
    .unwrap()
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for trial in 0..60 {
        let l = 2 + trial % 6;
        let dim = rng.random_range(2..6);
        let grids: Vec<FeatureGrid> = (0..2).map(|_| random_grid(&mut rng, 6, 6, dim)).collect();
        let maps: Vec<LabelMap> = (0..2)
            .map(|_| LabelMap::new(6, 6, (0..36).map(|_| rng.random_range(1..=l as u8)).collect()).unwrap())
            .collect();
        let batch: Vec<(&FeatureGrid, &LabelMap)> = grids.iter().zip(&maps).collect();
        let scorer = random_scorer(&mut rng, l, dim);
        let wd = rng.random_range(0.0..1e-2);
        let (_, grad) = loss_and_gradient(&scorer, &batch, wd).unwrap();
        for k in 0..l * dim {
            let mut plus = scorer.clone();
            plus.weights_mut()[k] += step;
            let mut minus = scorer.clone();
            minus.weights_mut()[k] -= step;
            let numeric = (loss_and_gradient(&plus, &batch, wd).unwrap().0
                - loss_and_gradient(&minus, &batch, wd).unwrap().0)
                / (2.0 * step);
            let rel = (numeric - grad[k]).abs() / numeric.abs().max(grad[k].abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posterior_is_a_distribution(seed in 0u64..10_000, l in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = random_grid(&mut rng, 5, 4, 3);
        let post = pixel_posterior(&random_scorer(&mut rng, l, 3), &grid).unwrap();
        for i in 0..post.len() {
            let p = post.pixel(i);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn loss_is_nonnegative(seed in 0u64..10_000, l in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = random_grid(&mut rng, 4, 4, 3);
        let map = LabelMap::new(4, 4, (0..16).map(|_| rng.random_range(1..=l as u8)).collect()).unwrap();
        let (loss, _) = loss_and_gradient(&random_scorer(&mut rng, l, 3), &[(&grid, &map)], 0.0).unwrap();
        prop_assert!(loss >= 0.0 && loss.is_finite());
    }
}
