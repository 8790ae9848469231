use proptest::prelude::*;
use rahfl::augment::{augmix, sample_chain, AugKind, MixConfig, MixDraw, SimpleAugParams};
use rahfl::datagen::{render_pattern, Image, Pattern};
use rahfl::rng::Streams;

fn within_four_sigma(count: usize, n: usize, p: f64) -> bool {
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    (count as f64 - n as f64 * p).abs() <= 4.0 * sd
}

#[test]
fn chain_depth_and_kind_frequencies() {
    let mut rng = Streams::new(0).get("augment", 0);
    let n = 10_000;
    let mut depths = [0usize; 3];
    let mut kinds = [0usize; 9];
    let mut ops = 0;
    for _ in 0..n {
        let chain = sample_chain(&mut rng);
        depths[chain.depth() - 1] += 1;
        for op in chain.ops() {
            let k = AugKind::ALL.iter().position(|&x| x == op.kind).unwrap();
            kinds[k] += 1;
            ops += 1;
            assert!((0.0..=1.0).contains(&op.magnitude));
        }
    }
    for d in depths {
        let freq = d as f64 / n as f64;
        assert!((0.30..=0.37).contains(&freq), "depth frequency {freq}");
    }
    for k in kinds {
        assert!(within_four_sigma(k, ops, 1.0 / 9.0), "kind count {k} of {ops}");
    }
}

#[test]
fn mixing_coefficient_is_uniform_at_unit_alpha() {
    let cfg = MixConfig::default();
    let mut rng = Streams::new(1).get("augment", 0);
    let n = 100_000;
    let mut total = 0.0;
    for _ in 0..n {
        let draw = MixDraw::sample(&cfg, &mut rng).unwrap();
        let sum: f64 = draw.weights.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12, "weights sum {sum}");
        total += draw.eta;
    }
    let mean = total / n as f64;
    assert!((mean - 0.5).abs() <= 0.01, "mean eta {mean}");
}

#[test]
fn geometric_ops_leave_constant_images_alone() {
    let kinds = [
        AugKind::Rotate,
        AugKind::ShearX,
        AugKind::ShearY,
        AugKind::TranslateX,
        AugKind::TranslateY,
        AugKind::Autocontrast,
    ];
    let image = Image::filled(12, 12, 1, 0.37);
    let mut rng = Streams::new(2).get("augment", 0);
    for _ in 0..200 {
        let out = MixDraw::sample_from(&MixConfig::default(), &kinds, &mut rng).unwrap().apply(&image);
        for (a, b) in out.pixels().iter().zip(image.pixels()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn flip_fires_half_the_time() {
    let mut rng = Streams::new(3).get("augment", 0);
    let n = 10_000;
    let flips = (0..n).filter(|_| SimpleAugParams::sample(16, 16, &mut rng).flip).count();
    let freq = flips as f64 / n as f64;
    assert!((0.47..=0.53).contains(&freq), "flip frequency {freq}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mixed_pixels_stay_between_contributors(seed in any::<u64>(), class in 0usize..8) {
        let image = render_pattern(Pattern::for_class(class), 10, &mut Streams::new(seed).get("img", 0));
        let draw = MixDraw::sample(&MixConfig::default(), &mut Streams::new(seed).get("augment", 0)).unwrap();
        let out = draw.apply(&image);
        let chains: Vec<Image> = draw.chains.iter().map(|c| c.apply(&image)).collect();
        for (i, &v) in out.pixels().iter().enumerate() {
            let contributors = chains.iter().map(|c| c.pixels()[i]).chain([image.pixels()[i]]);
            let (lo, hi) = contributors.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn augmix_and_simple_outputs_are_in_range(seed in any::<u64>()) {
        let image = render_pattern(Pattern::for_class((seed % 8) as usize), 12, &mut Streams::new(seed).get("img", 0));
        let mut rng = Streams::new(seed).get("augment", 0);
        let mixed = augmix(&image, &MixConfig { num_sequences: 4, alpha: 0.5 }, &mut rng).unwrap();
        let simple = rahfl::augment::simple_augment(&image, &mut rng);
        for out in [mixed, simple] {
            prop_assert_eq!(out.shape(), image.shape());
            prop_assert!(out.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
