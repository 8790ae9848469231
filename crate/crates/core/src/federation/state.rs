//! Federation orchestration: data setup, pretraining and collaborative rounds.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::client::{ClientState, EpochStats, TrainSettings};
use super::config::{ExperimentConfig, Mode, PhaseOrder, PretrainLoss};
use super::matrix::KnowledgeMatrix;
use crate::datagen::{corrupt_dataset, load_manifest_dataset, make_synthetic_dataset, partition, Dataset, PartitionPlan, Pattern};
use crate::error::{Error, Result};
use crate::numcore::{Model, ModelSpec, Tensor};
use crate::rng::Streams;

/// Per-round report, one entry per client in each vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub acc_clean: Vec<f64>,
    pub acc_corrupt: Vec<f64>,
    pub loss_ce: Vec<f64>,
    pub loss_jsd: Vec<f64>,
    pub loss_supcon: Vec<f64>,
    pub loss_dcl: Vec<f64>,
    pub loss_col: Vec<f64>,
    /// Ones in the transfer matrix used this round.
    pub matrix_ones: usize,
}

/// Access and protocol counters maintained while a federation runs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Instrumentation {
    /// `private_reads[owner][reader]`: batches of `owner`'s private data read by `reader`.
    pub private_reads: Vec<Vec<u64>>,
    /// Reads of another client's public-set outputs.
    pub peer_output_reads: u64,
    /// For each collaborative round, KL terms evaluated on each public batch,
    /// summed over learners.
    pub kl_terms_per_batch: Vec<Vec<usize>>,
    /// Ones in the transfer matrix of each collaborative round.
    pub matrix_ones: Vec<usize>,
    /// Rounds in which a source snapshot changed during distillation.
    pub snapshot_violations: u64,
    /// Models that changed during distillation without being a learner.
    pub foreign_mutations: u64,
}

/// Static description of a client, for reports.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientInfo {
    pub id: usize,
    pub arch: String,
    pub private_size: usize,
    pub local_epochs: usize,
}

pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub clients: Vec<ClientInfo>,
    pub metrics: Vec<RoundMetrics>,
    pub instrumentation: Instrumentation,
}

struct SplitData {
    private: Vec<Dataset>,
    public: Dataset,
    eval: Dataset,
    test_clean: Dataset,
    test_corrupt: Dataset,
}

fn fingerprint(tensors: &[Tensor]) -> u64 {
    let mut h = DefaultHasher::new();
    for t in tensors {
        t.shape().hash(&mut h);
        for v in t.data() {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

fn build_data(cfg: &ExperimentConfig, streams: &Streams) -> Result<SplitData> {
    let needed = cfg.clients * cfg.samples_per_client + cfg.eval_size + cfg.test_size;
    let pool = match &cfg.manifest {
        Some(path) => {
            let d = load_manifest_dataset(path)?;
            if d.len() < needed {
                return Err(Error::config(
                    "manifest",
                    format!("{} holds {} examples, the run needs {needed}", path.display(), d.len()),
                ));
            }
            d
        }
        None => make_synthetic_dataset(needed, cfg.num_classes, cfg.image_side, &mut streams.get("data", 0))?,
    };
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut streams.get("split", 0));
    let eval = pool.subset(&order[..cfg.eval_size])?;
    let test_clean = pool.subset(&order[cfg.eval_size..cfg.eval_size + cfg.test_size])?;
    let rest = pool.subset(&order[cfg.eval_size + cfg.test_size..])?;
    let plan = PartitionPlan {
        scheme: cfg.partition,
        beta: cfg.dirichlet_beta,
        client_sizes: vec![cfg.samples_per_client; cfg.clients],
    };
    let private = partition(&rest, &plan, &mut streams.get("partition", 0))?
        .iter()
        .enumerate()
        .map(|(k, d)| corrupt_dataset(d, cfg.corruption_rate, &mut streams.get("corruption", k as u64)))
        .collect::<Result<Vec<_>>>()?;
    let test_corrupt = corrupt_dataset(&test_clean, 1.0, &mut streams.get("test_corruption", 0))?;

    let public = match &cfg.public_manifest {
        Some(path) => load_manifest_dataset(path)?,
        None => {
            let (h, w, c) = pool.image_shape();
            if h != w || c != 1 {
                return Err(Error::config(
                    "public_manifest",
                    format!("synthetic public data is square grayscale; source images are {h}x{w}x{c}"),
                ));
            }
            // every pattern family, so part of the public set is unlike any task class
            make_synthetic_dataset(cfg.public_size, Pattern::ALL.len(), h, &mut streams.get("public", 0))?
        }
    };
    if public.input_dim() != pool.input_dim() {
        return Err(Error::config("public_manifest", "public images differ in shape from the private data"));
    }
    let mut public = public.without_labels();
    if !cfg.public_clean {
        public = corrupt_dataset(&public, cfg.corruption_rate, &mut streams.get("public_corruption", 0))?;
    }
    Ok(SplitData {
        private,
        public,
        eval,
        test_clean,
        test_corrupt,
    })
}

/// Runs `f` on every client, spread over up to `threads` scoped workers.
/// Results come back in client order.
fn for_each_client<T, F>(clients: &mut [ClientState], threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut ClientState) -> Result<T> + Sync,
{
    if threads <= 1 || clients.len() <= 1 {
        return clients.iter_mut().map(f).collect();
    }
    let chunk = clients.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = clients
            .chunks_mut(chunk)
            .map(|part| s.spawn(|| part.iter_mut().map(&f).collect::<Result<Vec<T>>>()))
            .collect();
        let mut out = Vec::new();
        for h in handles {
            out.extend(h.join().expect("client worker panicked")?);
        }
        Ok(out)
    })
}

pub struct FederationState {
    config: ExperimentConfig,
    clients: Vec<ClientState>,
    public_data: Dataset,
    public_batch: Tensor,
    eval_split: Dataset,
    test_clean: Dataset,
    test_corrupt: Dataset,
    matrix: Option<KnowledgeMatrix>,
    round: usize,
    settings: TrainSettings,
    instrumentation: Instrumentation,
}

impl FederationState {
    /// Validates `config`, builds all datasets and initializes client models.
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let config = config.resolved();
        let streams = Streams::new(config.seed);
        let data = build_data(&config, &streams)?;
        let archs = config.client_architectures()?;
        let local_epochs = config.local_epochs.expect("resolved");
        let input_dim = data.public.input_dim();
        let clients = data
            .private
            .into_iter()
            .zip(archs)
            .enumerate()
            .map(|(k, (private, hidden))| {
                let spec = ModelSpec::new(input_dim, hidden, config.num_classes)?;
                let model = Model::init(spec, &mut streams.get("init", k as u64))?;
                ClientState::new(
                    k,
                    model,
                    config.learning_rate,
                    private,
                    local_epochs,
                    config.clients,
                    streams.get("train", k as u64),
                    streams.get("augment", k as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let settings = TrainSettings {
            weights: config.loss_weights(),
            mix: config.mix_config(),
            batch_size: config.batch_size,
            aug: config.aug_enabled(),
            contrastive: config.contrastive_mode(),
        };
        let public_batch = data.public.all_images_batch();
        let k = clients.len();
        Ok(Self {
            config,
            clients,
            public_data: data.public,
            public_batch,
            eval_split: data.eval,
            test_clean: data.test_clean,
            test_corrupt: data.test_corrupt,
            matrix: None,
            round: 0,
            settings,
            instrumentation: Instrumentation {
                private_reads: vec![vec![0; k]; k],
                ..Instrumentation::default()
            },
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn matrix(&self) -> Option<&KnowledgeMatrix> {
        self.matrix.as_ref()
    }

    pub fn public_data(&self) -> &Dataset {
        &self.public_data
    }

    pub fn eval_split(&self) -> &Dataset {
        &self.eval_split
    }

    pub fn test_clean(&self) -> &Dataset {
        &self.test_clean
    }

    pub fn test_corrupt(&self) -> &Dataset {
        &self.test_corrupt
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn settings(&self) -> &TrainSettings {
        &self.settings
    }

    pub fn instrumentation(&self) -> Instrumentation {
        let mut inst = self.instrumentation.clone();
        inst.private_reads = self.clients.iter().map(|c| c.private_reads().to_vec()).collect();
        inst
    }

    pub fn client_info(&self) -> Vec<ClientInfo> {
        self.clients
            .iter()
            .map(|c| ClientInfo {
                id: c.id(),
                arch: c.model().spec().arch_name(),
                private_size: c.private_len(),
                local_epochs: c.local_epochs(),
            })
            .collect()
    }

    /// Pretrains every client for the configured number of epochs; returns
    /// each client's per-epoch means.
    pub fn pretrain(&mut self) -> Result<Vec<Vec<EpochStats>>> {
        let settings = match self.config.pretrain_loss {
            PretrainLoss::Ce => TrainSettings::cross_entropy_only(self.config.batch_size),
            PretrainLoss::Full => self.settings.clone(),
        };
        let epochs = self.config.pretrain_epochs;
        for_each_client(&mut self.clients, self.config.threads, |c| c.pretrain(epochs, &settings))
    }

    /// Held-out accuracy of every client on the eval split.
    pub fn eval_accuracies(&self) -> Result<Vec<f64>> {
        self.clients.iter().map(|c| c.evaluate(&self.eval_split)).collect()
    }

    fn local_phase(&mut self) -> Result<Vec<EpochStats>> {
        let settings = &self.settings;
        let stats = for_each_client(&mut self.clients, self.config.threads, |c| c.local_update(settings))?;
        Ok(stats.iter().map(|s| EpochStats::merge(s)).collect())
    }

    /// Snapshot, matrix refresh and one distillation pass per learning
    /// client. Returns each client's mean collaborative loss and the matrix.
    fn collaborative_phase(&mut self) -> Result<(Vec<f64>, KnowledgeMatrix)> {
        let k = self.clients.len();
        let public = &self.public_batch;
        let snapshots = for_each_client(&mut self.clients, self.config.threads, |c| c.public_outputs(public))?;

        let rebuild = self.round % self.config.matrix_update_period == 0;
        let matrix = match (&self.matrix, self.config.mode) {
            (_, Mode::HflSymmetric) => KnowledgeMatrix::symmetric(k, self.round),
            (Some(m), _) if !rebuild => m.clone(),
            _ => KnowledgeMatrix::from_accuracies(&self.eval_accuracies()?, self.round),
        };

        let snapshot_print = fingerprint(&snapshots);
        let model_prints: Vec<u64> = self.clients.iter().map(|c| fingerprint(c.model().params())).collect();
        let batch_size = self.config.batch_size;
        let results = for_each_client(&mut self.clients, self.config.threads, |c| {
            let sources = matrix.sources(c.id());
            let targets: Vec<&Tensor> = sources.iter().map(|&q| &snapshots[q]).collect();
            if targets.is_empty() {
                let batches = public.rows().div_ceil(batch_size);
                return Ok((0.0, vec![0; batches], 0u64));
            }
            let (loss, terms) = c.distill(public, &targets, batch_size)?;
            Ok((loss, terms, sources.len() as u64))
        })?;

        if fingerprint(&snapshots) != snapshot_print {
            self.instrumentation.snapshot_violations += 1;
        }
        for (c, before) in self.clients.iter().zip(&model_prints) {
            let learned = !matrix.sources(c.id()).is_empty();
            if !learned && fingerprint(c.model().params()) != *before {
                self.instrumentation.foreign_mutations += 1;
            }
        }
        let batches = results.first().map_or(0, |r| r.1.len());
        let mut per_batch = vec![0; batches];
        let mut losses = Vec::with_capacity(k);
        for (loss, terms, peers) in results {
            for (acc, t) in per_batch.iter_mut().zip(terms) {
                *acc += t;
            }
            self.instrumentation.peer_output_reads += peers;
            losses.push(loss);
        }
        self.instrumentation.kl_terms_per_batch.push(per_batch);
        self.instrumentation.matrix_ones.push(matrix.ones());
        self.matrix = Some(matrix.clone());
        Ok((losses, matrix))
    }

    /// One full round: collaborative and local phases (in the configured
    /// order; local only for `local_only`), then evaluation.
    pub fn run_round(&mut self) -> Result<RoundMetrics> {
        let k = self.clients.len();
        let (col, ones, local) = if self.config.mode.collaborates() {
            match self.config.phase_order {
                PhaseOrder::CollaborativeFirst => {
                    let (col, m) = self.collaborative_phase()?;
                    let local = self.local_phase()?;
                    (col, m.ones(), local)
                }
                PhaseOrder::LocalFirst => {
                    let local = self.local_phase()?;
                    let (col, m) = self.collaborative_phase()?;
                    (col, m.ones(), local)
                }
            }
        } else {
            (vec![0.0; k], 0, self.local_phase()?)
        };
        self.round += 1;
        let acc_clean = self.clients.iter().map(|c| c.evaluate(&self.test_clean)).collect::<Result<_>>()?;
        let acc_corrupt = self.clients.iter().map(|c| c.evaluate(&self.test_corrupt)).collect::<Result<_>>()?;
        Ok(RoundMetrics {
            round: self.round,
            acc_clean,
            acc_corrupt,
            loss_ce: local.iter().map(|s| s.parts.ce).collect(),
            loss_jsd: local.iter().map(|s| s.parts.jsd).collect(),
            loss_supcon: local.iter().map(|s| s.parts.supcon).collect(),
            loss_dcl: local.iter().map(|s| s.parts.dcl).collect(),
            loss_col: col,
            matrix_ones: ones,
        })
    }
}

/// Builds the federation, pretrains, and runs every round, calling
/// `on_round` after each one.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    mut on_round: impl FnMut(&RoundMetrics),
) -> Result<ExperimentResult> {
    let mut state = FederationState::new(config)?;
    state.pretrain()?;
    let mut metrics = Vec::with_capacity(state.config.rounds);
    for _ in 0..state.config.rounds {
        let m = state.run_round()?;
        on_round(&m);
        metrics.push(m);
    }
    Ok(ExperimentResult {
        config: state.config.clone(),
        clients: state.client_info(),
        metrics,
        instrumentation: state.instrumentation(),
    })
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with(config, |_| {})
}
