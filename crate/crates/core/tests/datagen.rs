use rahfl::datagen::{
    apply_corruption, corrupt_dataset, make_synthetic_dataset, partition, render_pattern, CorruptionKind,
    CorruptionSpec, Dataset, PartitionPlan, PartitionScheme, Pattern,
};
use rahfl::federation::{ClientState, TrainSettings};
use rahfl::numcore::{Model, ModelSpec};
use rahfl::rng::Streams;

#[test]
fn synthetic_classes_are_learnable_by_a_small_mlp() {
    let s = Streams::new(11);
    let data = make_synthetic_dataset(200, 4, 16, &mut s.get("data", 0)).unwrap();
    let spec = ModelSpec::new(256, vec![32], 4).unwrap();
    let model = Model::init(spec, &mut s.get("init", 0)).unwrap();
    let mut client = ClientState::new(0, model, 0.01, data.clone(), 1, 1, s.get("train", 0), s.get("aug", 0)).unwrap();
    // full-batch epochs: one Adam step each
    let settings = TrainSettings::cross_entropy_only(200);
    let mut steps = 0;
    while steps < 200 {
        client.train_epoch(&settings).unwrap();
        steps += 1;
        if client.evaluate(&data).unwrap() >= 0.9 {
            break;
        }
    }
    let acc = client.evaluate(&data).unwrap();
    assert!(acc >= 0.9, "train accuracy {acc} after {steps} steps");
}

#[test]
fn distortion_grows_with_severity_for_every_kind() {
    let image = render_pattern(Pattern::for_class(3), 16, &mut Streams::new(0).get("img", 0));
    for kind in CorruptionKind::ALL {
        let means: Vec<f64> = (1..=5u8)
            .map(|severity| {
                let spec = CorruptionSpec::new(kind, severity).unwrap();
                (0..100u64)
                    .map(|seed| {
                        let out = apply_corruption(&image, spec, &mut Streams::new(seed).get("c", 0)).unwrap();
                        out.l1_distance(&image)
                    })
                    .sum::<f64>()
                    / 100.0
            })
            .collect();
        for w in means.windows(2) {
            assert!(w[1] >= w[0], "{}: mean L1 by severity {means:?}", kind.name());
        }
        assert!(means[4] > means[0], "{}: {means:?}", kind.name());
    }
}

#[test]
fn corruption_preserves_shape_and_range() {
    let image = render_pattern(Pattern::for_class(1), 12, &mut Streams::new(1).get("img", 0));
    let mut rng = Streams::new(2).get("c", 0);
    for kind in CorruptionKind::ALL {
        for severity in 1..=5 {
            let out = apply_corruption(&image, CorruptionSpec::new(kind, severity).unwrap(), &mut rng).unwrap();
            assert_eq!(out.shape(), image.shape());
            assert!(out.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

fn synthetic(n: usize, seed: u64) -> Dataset {
    make_synthetic_dataset(n, 4, 8, &mut Streams::new(seed).get("data", 0)).unwrap()
}

#[test]
fn zero_rate_is_bitwise_identity() {
    let data = synthetic(300, 0);
    let out = corrupt_dataset(&data, 0.0, &mut Streams::new(1).get("c", 0)).unwrap();
    assert_eq!(out, data);
}

#[test]
fn full_rate_flags_everything() {
    let data = synthetic(300, 0);
    let out = corrupt_dataset(&data, 1.0, &mut Streams::new(1).get("c", 0)).unwrap();
    assert!(out.examples().iter().all(|e| e.corrupted));
    assert_eq!(out.labels().unwrap(), data.labels().unwrap());
}

#[test]
fn half_rate_fraction_is_within_binomial_bounds() {
    let data = synthetic(10_000, 3);
    let out = corrupt_dataset(&data, 0.5, &mut Streams::new(4).get("c", 0)).unwrap();
    let frac = out.corrupted_fraction();
    assert!((0.47..=0.53).contains(&frac), "corrupted fraction {frac}");
}

#[test]
fn iid_split_class_counts_are_hypergeometric() {
    let data = synthetic(800, 5);
    let plan = PartitionPlan {
        scheme: PartitionScheme::Iid,
        beta: 1.0,
        client_sizes: vec![200, 200],
    };
    // population 800 with 200 per class, 200 draws per client
    let (pop, succ, draws) = (800.0, 200.0, 200.0);
    let p: f64 = succ / pop;
    let mean = draws * p;
    let sd = (draws * p * (1.0 - p) * (pop - draws) / (pop - 1.0)).sqrt();
    for seed in 0..5 {
        let parts = partition(&data, &plan, &mut Streams::new(seed).get("partition", 0)).unwrap();
        for part in &parts {
            assert_eq!(part.len(), 200);
            for count in part.class_counts() {
                assert!((count as f64 - mean).abs() <= 4.0 * sd, "count {count}, mean {mean}, sd {sd}");
            }
        }
    }
}

#[test]
fn huge_beta_is_nearly_uniform() {
    let data = synthetic(4000, 6);
    let plan = PartitionPlan {
        scheme: PartitionScheme::Dirichlet,
        beta: 1e6,
        client_sizes: vec![400, 400, 400],
    };
    let parts = partition(&data, &plan, &mut Streams::new(7).get("partition", 0)).unwrap();
    for part in &parts {
        for count in part.class_counts() {
            let share = count as f64 / part.len() as f64;
            assert!((share - 0.25).abs() <= 0.02, "class share {share}");
        }
    }
}

#[test]
fn unit_beta_skews_labels() {
    let data = synthetic(2000, 8);
    let plan = PartitionPlan {
        scheme: PartitionScheme::Dirichlet,
        beta: 1.0,
        client_sizes: vec![300; 4],
    };
    let mut skewed = false;
    for seed in 0..5 {
        let parts = partition(&data, &plan, &mut Streams::new(seed).get("partition", 0)).unwrap();
        for part in &parts {
            let counts = part.class_counts();
            let max = *counts.iter().max().unwrap() as f64;
            let min = *counts.iter().min().unwrap() as f64;
            skewed |= max > 2.0 * min;
        }
    }
    assert!(skewed);
}

#[test]
fn partitions_are_disjoint_and_exact() {
    let data = synthetic(1000, 9);
    for scheme in [PartitionScheme::Iid, PartitionScheme::Dirichlet] {
        let plan = PartitionPlan {
            scheme,
            beta: 0.5,
            client_sizes: vec![100, 250, 300],
        };
        let idx = rahfl::datagen::partition_indices(&data, &plan, &mut Streams::new(1).get("p", 0)).unwrap();
        let mut all: Vec<usize> = idx.iter().flatten().copied().collect();
        assert_eq!(idx.iter().map(Vec::len).collect::<Vec<_>>(), plan.client_sizes);
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 650);
    }
}
