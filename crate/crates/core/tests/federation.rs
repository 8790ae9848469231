use proptest::prelude::*;
use rahfl::augment::MixConfig;
use rahfl::datagen::{make_synthetic_dataset, Dataset, LabeledExample};
use rahfl::federation::{
    build_transfer_matrix, evaluate, run_experiment, ClientState, ExperimentConfig, FederationState,
    KnowledgeMatrix, Mode, TrainSettings,
};
use rahfl::losses::{cross_entropy_on, ContrastiveMode, LossWeights};
use rahfl::numcore::{AdamState, Model, ModelSpec, Tape};
use rahfl::rng::Streams;
use rand::seq::SliceRandom;

fn data(n: usize, side: usize, seed: u64) -> Dataset {
    make_synthetic_dataset(n, 4, side, &mut Streams::new(seed).get("data", 0)).unwrap()
}

fn model(input: usize, hidden: Vec<usize>, seed: u64) -> Model {
    Model::init(ModelSpec::new(input, hidden, 4).unwrap(), &mut Streams::new(seed).get("init", 0)).unwrap()
}

fn client(data: Dataset, hidden: Vec<usize>, lr: f64, seed: u64) -> ClientState {
    let s = Streams::new(seed);
    let m = model(data.input_dim(), hidden, seed);
    ClientState::new(0, m, lr, data, 1, 1, s.get("train", 0), s.get("augment", 0)).unwrap()
}

fn full_settings(batch_size: usize) -> TrainSettings {
    TrainSettings {
        weights: LossWeights::default(),
        mix: MixConfig::default(),
        batch_size,
        aug: true,
        contrastive: ContrastiveMode::Dcl,
    }
}

#[test]
fn untrained_model_is_near_chance() {
    // Labels shuffled independently of the images, so predictions cannot
    // correlate with them and the binomial bound around 1/C applies.
    let d = data(2000, 8, 1);
    let mut labels = d.labels().unwrap();
    labels.shuffle(&mut Streams::new(1).get("labels", 0));
    let examples = d
        .examples()
        .iter()
        .zip(labels)
        .map(|(e, y)| LabeledExample {
            label: Some(y),
            ..e.clone()
        })
        .collect();
    let d = Dataset::new(examples, 4).unwrap();
    for seed in 0..3 {
        let acc = evaluate(&model(64, vec![32], seed), &d).unwrap();
        assert!((0.20..=0.30).contains(&acc), "accuracy {acc}");
    }
}

#[test]
fn untrained_models_average_chance_on_structured_data() {
    let d = data(2000, 8, 1);
    let accs: Vec<f64> = (0..40).map(|seed| evaluate(&model(64, vec![32], seed), &d).unwrap()).collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((0.20..=0.30).contains(&mean), "mean accuracy {mean} over {accs:?}");
}

#[test]
fn memorized_set_scores_perfectly() {
    let d = data(10, 8, 2);
    let mut c = client(d.clone(), vec![32], 0.01, 2);
    c.pretrain(150, &TrainSettings::cross_entropy_only(10)).unwrap();
    assert_eq!(c.evaluate(&d).unwrap(), 1.0);
}

#[test]
fn pretraining_fits_clean_data_and_loss_mostly_falls() {
    for seed in 0..3 {
        let d = data(200, 16, 10 + seed);
        let mut c = client(d.clone(), vec![64, 32], 0.001, seed);
        let epochs = c.pretrain(40, &TrainSettings::cross_entropy_only(32)).unwrap();
        let acc = c.evaluate(&d).unwrap();
        assert!(acc >= 0.9, "seed {seed}: train accuracy {acc}");
        let falls = epochs.windows(2).filter(|w| w[1].total <= w[0].total).count();
        assert!(falls as f64 >= 0.8 * (epochs.len() - 1) as f64, "seed {seed}: {falls} falls");
    }
}

#[test]
fn full_local_objective_decreases() {
    for seed in 0..3 {
        let d = data(64, 16, 20 + seed);
        let mut c = client(d, vec![64, 32], 0.001, seed);
        let epochs = c.pretrain(5, &full_settings(16)).unwrap();
        let (first, last) = (epochs[0].total, epochs[4].total);
        assert!(last < first, "seed {seed}: {first} -> {last}");
        assert!(epochs.iter().all(|e| e.parts.jsd > 0.0 && e.parts.dcl > 0.0));
    }
}

#[test]
fn disabled_extras_reduce_to_plain_cross_entropy() {
    let d = data(40, 8, 3);
    let settings = TrainSettings {
        weights: LossWeights {
            mu: 7.0,
            gamma: 2.0,
            ..LossWeights::default()
        },
        aug: false,
        contrastive: ContrastiveMode::Off,
        ..full_settings(16)
    };
    let mut c = client(d.clone(), vec![16], 0.01, 4);
    c.pretrain(3, &settings).unwrap();

    // hand-rolled cross-entropy training with the same shuffle stream
    let mut m = model(64, vec![16], 4);
    let mut adam = AdamState::new(m.params(), 0.01);
    let mut order_rng = Streams::new(4).get("train", 0);
    let labels = d.labels().unwrap();
    for _ in 0..3 {
        let mut order: Vec<usize> = (0..d.len()).collect();
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(16) {
            let mut tape = Tape::new();
            let bound = m.bind(&mut tape);
            let x = tape.constant(d.batch(chunk));
            let out = m.forward_on(&mut tape, &bound, x).unwrap();
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let loss = cross_entropy_on(&mut tape, out.logits, &y).unwrap();
            let grads = tape.backward(loss).unwrap();
            let grads = m.collect_grads(&bound, &tape, &grads);
            adam.step(m.params_mut(), &grads).unwrap();
        }
    }
    assert_eq!(c.model(), &m);
}

#[test]
fn asymmetric_matrix_halves_symmetric_work() {
    let m = build_transfer_matrix(&[0.61, 0.72, 0.55, 0.68]);
    let per_batch: usize = (0..4).map(|p| m.sources(p).len()).sum();
    assert_eq!(per_batch, 6);
    assert_eq!(KnowledgeMatrix::symmetric(4, 0).ones(), 12);
}

fn distinct_accuracies() -> impl Strategy<Value = Vec<f64>> {
    (2usize..=20).prop_flat_map(|k| {
        proptest::collection::btree_set(0u32..10_000, k)
            .prop_map(|set| set.into_iter().map(|v| f64::from(v) / 10_000.0).collect::<Vec<_>>())
            .prop_shuffle()
    })
}

proptest! {
    #[test]
    fn distinct_accuracies_give_half_the_pairs(accs in distinct_accuracies()) {
        let k = accs.len();
        let m = build_transfer_matrix(&accs);
        prop_assert_eq!(m.ones(), k * (k - 1) / 2);
        let top = (0..k).max_by(|&a, &b| accs[a].total_cmp(&accs[b])).unwrap();
        for q in 0..k {
            prop_assert_eq!(m.get(top, q), 0);
            prop_assert_eq!(m.get(q, q), 0);
            if q != top {
                prop_assert_eq!(m.get(q, top), 1);
            }
        }
    }

    #[test]
    fn ties_add_one_per_pair(levels in proptest::collection::vec(0u8..4, 1..12)) {
        let k = levels.len();
        let accs: Vec<f64> = levels.iter().map(|&l| f64::from(l) / 4.0).collect();
        let tied = (0..k).flat_map(|p| (p + 1..k).map(move |q| (p, q))).filter(|&(p, q)| levels[p] == levels[q]).count();
        let m = build_transfer_matrix(&accs);
        prop_assert_eq!(m.ones(), k * (k - 1) / 2 + tied);
        for p in 0..k {
            for q in 0..k {
                prop_assert!(m.get(p, q) <= 1);
            }
        }
    }
}

fn small(mode: Mode) -> ExperimentConfig {
    ExperimentConfig {
        mode,
        rounds: 3,
        samples_per_client: 120,
        public_size: 80,
        eval_size: 80,
        test_size: 120,
        pretrain_epochs: 2,
        ..ExperimentConfig::desk()
    }
}

#[test]
fn same_seed_reproduces_metrics_regardless_of_threads() {
    let cfg = small(Mode::Rahfl);
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&ExperimentConfig { threads: 4, ..cfg.clone() }).unwrap();
    assert_eq!(a.metrics, b.metrics);
    let c = run_experiment(&ExperimentConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.metrics, c.metrics);
}

#[test]
fn protocol_invariants_hold_under_instrumentation() {
    for mode in [Mode::AsymHfl, Mode::HflSymmetric, Mode::Rahfl] {
        let r = run_experiment(&small(mode)).unwrap();
        let inst = &r.instrumentation;
        let k = r.clients.len();
        for (owner, readers) in inst.private_reads.iter().enumerate() {
            for (reader, &n) in readers.iter().enumerate() {
                assert!(reader == owner || n == 0, "client {reader} read client {owner}'s data");
            }
            assert!(readers[owner] > 0);
        }
        assert_eq!(inst.snapshot_violations, 0);
        assert_eq!(inst.foreign_mutations, 0);
        assert_eq!(inst.kl_terms_per_batch.len(), 3);
        for (terms, &ones) in inst.kl_terms_per_batch.iter().zip(&inst.matrix_ones) {
            if mode == Mode::HflSymmetric {
                assert_eq!(ones, k * (k - 1));
            }
            assert!(terms.iter().all(|&t| t == ones), "{mode}: {terms:?} vs {ones}");
        }
    }
}

#[test]
fn stale_matrix_is_reused_between_updates() {
    let cfg = ExperimentConfig {
        matrix_update_period: 2,
        ..small(Mode::AsymHfl)
    };
    let mut state = FederationState::new(&cfg).unwrap();
    state.pretrain().unwrap();
    let mut rounds_built = Vec::new();
    for _ in 0..3 {
        state.run_round().unwrap();
        rounds_built.push(state.matrix().unwrap().round());
    }
    assert_eq!(rounds_built, vec![0, 0, 2]);
}
