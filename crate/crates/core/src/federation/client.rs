//! Per-client state and training steps.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{augmix, simple_augment, MixConfig};
use crate::datagen::{images_to_batch, Dataset, Image};
use crate::error::{Error, Result};
use crate::losses::{collaborative_on, local_loss_on, ContrastiveMode, LocalViews, LossParts, LossWeights};
use crate::numcore::{softmax, AdamState, Model, Tape, Tensor};
use crate::rng::{split, StreamRng};

/// Rows per forward pass when only inference is needed.
const EVAL_CHUNK: usize = 512;

/// Knobs of the local objective shared by all clients.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub weights: LossWeights,
    pub mix: MixConfig,
    pub batch_size: usize,
    /// Mixed augmentation and the consistency term.
    pub aug: bool,
    pub contrastive: ContrastiveMode,
}

impl TrainSettings {
    /// Plain cross-entropy training.
    pub fn cross_entropy_only(batch_size: usize) -> Self {
        Self {
            weights: LossWeights::default(),
            mix: MixConfig::default(),
            batch_size,
            aug: false,
            contrastive: ContrastiveMode::Off,
        }
    }

    fn needs_complex(&self) -> bool {
        self.aug
            || self.contrastive == ContrastiveMode::Supcon
            || (self.contrastive == ContrastiveMode::Dcl && self.weights.gamma > 0.0)
    }

    fn effective_weights(&self) -> LossWeights {
        LossWeights {
            mu: if self.aug { self.weights.mu } else { 0.0 },
            ..self.weights
        }
    }
}

/// Mean loss components over the batches of one epoch (or round).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub parts: LossParts,
    pub total: f64,
    pub batches: usize,
}

impl EpochStats {
    fn accumulate(&mut self, parts: LossParts, total: f64) {
        self.parts.ce += parts.ce;
        self.parts.jsd += parts.jsd;
        self.parts.supcon += parts.supcon;
        self.parts.dcl += parts.dcl;
        self.total += total;
        self.batches += 1;
    }

    fn finish(mut self) -> Self {
        if self.batches > 0 {
            let n = self.batches as f64;
            self.parts.ce /= n;
            self.parts.jsd /= n;
            self.parts.supcon /= n;
            self.parts.dcl /= n;
            self.total /= n;
        }
        self
    }

    /// Batch-weighted mean of several epochs.
    pub fn merge(epochs: &[EpochStats]) -> Self {
        let mut acc = EpochStats::default();
        for e in epochs {
            let w = e.batches as f64;
            acc.parts.ce += e.parts.ce * w;
            acc.parts.jsd += e.parts.jsd * w;
            acc.parts.supcon += e.parts.supcon * w;
            acc.parts.dcl += e.parts.dcl * w;
            acc.total += e.total * w;
            acc.batches += e.batches;
        }
        acc.finish()
    }
}

/// `T_l = max(⌊N_0 / N_k⌋, 1)`.
pub fn auto_local_epochs(public_size: usize, private_size: usize) -> usize {
    (public_size / private_size.max(1)).max(1)
}

pub struct ClientState {
    id: usize,
    model: Model,
    adam: AdamState,
    private_data: Dataset,
    local_epochs: usize,
    train_rng: StreamRng,
    aug_rng: StreamRng,
    /// `private_reads[reader]`: batches of this client's data read by `reader`.
    private_reads: Vec<u64>,
}

impl ClientState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: usize,
        model: Model,
        learning_rate: f64,
        private_data: Dataset,
        local_epochs: usize,
        num_clients: usize,
        train_rng: StreamRng,
        aug_rng: StreamRng,
    ) -> Result<Self> {
        if local_epochs == 0 {
            return Err(Error::invalid("local epochs must be at least 1"));
        }
        if private_data.input_dim() != model.spec().input_dim {
            return Err(Error::DimensionMismatch {
                context: "client data vs model input",
                expected: vec![model.spec().input_dim],
                actual: vec![private_data.input_dim()],
            });
        }
        private_data.labels()?;
        let adam = AdamState::new(model.params(), learning_rate);
        Ok(Self {
            id,
            model,
            adam,
            private_data,
            local_epochs,
            train_rng,
            aug_rng,
            private_reads: vec![0; num_clients.max(id + 1)],
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn local_epochs(&self) -> usize {
        self.local_epochs
    }

    pub fn private_len(&self) -> usize {
        self.private_data.len()
    }

    /// Access counters for this client's private data, indexed by reader.
    pub fn private_reads(&self) -> &[u64] {
        &self.private_reads
    }

    /// Label distribution of the private set (reporting only).
    pub fn class_counts(&self) -> Vec<usize> {
        self.private_data.class_counts()
    }

    pub fn corrupted_fraction(&self) -> f64 {
        self.private_data.corrupted_fraction()
    }

    fn read_private(&mut self, reader: usize, indices: &[usize]) -> (Vec<Image>, Vec<usize>) {
        self.private_reads[reader] += 1;
        let examples = self.private_data.examples();
        let images = indices.iter().map(|&i| examples[i].image.clone()).collect();
        let labels = indices
            .iter()
            .map(|&i| examples[i].label.expect("private data is labeled"))
            .collect();
        (images, labels)
    }

    fn apply_grads(&mut self, tape: &Tape, bound: &crate::numcore::BoundModel, loss: crate::numcore::Var) -> Result<()> {
        let grads = tape.backward(loss)?;
        let grads = self.model.collect_grads(bound, tape, &grads);
        self.adam.step(self.model.params_mut(), &grads)
    }

    /// One pass over the private data with the configured local objective.
    pub fn train_epoch(&mut self, settings: &TrainSettings) -> Result<EpochStats> {
        if settings.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        let weights = settings.effective_weights();
        let mut order: Vec<usize> = (0..self.private_data.len()).collect();
        order.shuffle(&mut self.train_rng);
        let mut stats = EpochStats::default();
        for chunk in order.chunks(settings.batch_size) {
            let (images, labels) = self.read_private(self.id, chunk);
            // each view family draws from its own child of the batch stream
            let mut first_rng = split(&mut self.aug_rng);
            let mut second_rng = split(&mut self.aug_rng);
            let mut simple_rng = split(&mut self.aug_rng);
            let complex = if settings.needs_complex() {
                let mut first = Vec::with_capacity(images.len());
                let mut second = Vec::with_capacity(images.len());
                for img in &images {
                    first.push(augmix(img, &settings.mix, &mut first_rng)?);
                    second.push(augmix(img, &settings.mix, &mut second_rng)?);
                }
                Some((images_to_batch(&first), images_to_batch(&second)))
            } else {
                None
            };
            let simple = if settings.contrastive == ContrastiveMode::Dcl {
                let views: Vec<Image> = images
                    .iter()
                    .map(|img| simple_augment(img, &mut simple_rng))
                    .collect();
                Some(images_to_batch(&views))
            } else {
                None
            };
            let views = LocalViews {
                original: images_to_batch(&images),
                complex,
                simple,
            };
            let mut tape = Tape::new();
            let bound = self.model.bind(&mut tape);
            let loss = local_loss_on(&mut tape, &self.model, &bound, &views, &labels, &weights, settings.contrastive)?;
            let total = tape.value(loss.total).item();
            self.apply_grads(&tape, &bound, loss.total)?;
            stats.accumulate(loss.parts, total);
        }
        Ok(stats.finish())
    }

    /// `epochs` passes of the local objective (or plain cross-entropy when
    /// `settings` says so); returns per-epoch means.
    pub fn pretrain(&mut self, epochs: usize, settings: &TrainSettings) -> Result<Vec<EpochStats>> {
        (0..epochs).map(|_| self.train_epoch(settings)).collect()
    }

    /// `T_l` epochs of the local objective.
    pub fn local_update(&mut self, settings: &TrainSettings) -> Result<Vec<EpochStats>> {
        self.pretrain(self.local_epochs, settings)
    }

    /// Softmax outputs on the public batch.
    pub fn public_outputs(&self, public: &Tensor) -> Result<Tensor> {
        predict_probs(&self.model, public)
    }

    /// One pass over the public data distilling from `targets` (snapshots of
    /// the sources' outputs). Returns the mean loss and the number of KL terms
    /// evaluated on each public batch.
    pub fn distill(&mut self, public: &Tensor, targets: &[&Tensor], batch_size: usize) -> Result<(f64, Vec<usize>)> {
        if batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        let n = public.rows();
        let mut kl_terms = Vec::new();
        let mut total = 0.0;
        for start in (0..n).step_by(batch_size) {
            let idx: Vec<usize> = (start..(start + batch_size).min(n)).collect();
            let x = public.select_rows(&idx);
            let batch_targets: Vec<Tensor> = targets.iter().map(|t| t.select_rows(&idx)).collect();
            let weighted: Vec<(&Tensor, f64)> = batch_targets.iter().map(|t| (t, 1.0)).collect();
            kl_terms.push(weighted.len());
            if weighted.is_empty() {
                continue;
            }
            let mut tape = Tape::new();
            let bound = self.model.bind(&mut tape);
            let input = tape.constant(x);
            let out = self.model.forward_on(&mut tape, &bound, input)?;
            let loss = collaborative_on(&mut tape, out.logits, &weighted)?;
            total += tape.value(loss).item();
            self.apply_grads(&tape, &bound, loss)?;
        }
        let batches = kl_terms.len().max(1) as f64;
        Ok((total / batches, kl_terms))
    }

    /// Held-out accuracy of this client's model.
    pub fn evaluate(&self, data: &Dataset) -> Result<f64> {
        evaluate(&self.model, data)
    }
}

fn predict_probs(model: &Model, inputs: &Tensor) -> Result<Tensor> {
    let mut rows = Vec::with_capacity(inputs.len());
    for start in (0..inputs.rows()).step_by(EVAL_CHUNK) {
        let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(inputs.rows())).collect();
        let (_, logits) = model.forward(&inputs.select_rows(&idx))?;
        rows.extend(softmax(&logits).into_data());
    }
    Tensor::matrix(inputs.rows(), model.spec().num_classes, rows)
}

/// Fraction of examples whose argmax logit (lowest index on ties) matches
/// the label.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<f64> {
    let labels = data.labels()?;
    let mut correct = 0usize;
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(data.len())).collect();
        let (_, logits) = model.forward(&data.batch(&idx))?;
        correct += logits
            .argmax_rows()
            .iter()
            .zip(&labels[start..])
            .filter(|(p, y)| p == y)
            .count();
    }
    Ok(correct as f64 / data.len() as f64)
}
