//! Experiment configuration: every knob of a run, with validation that names
//! the offending key.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::MixConfig;
use crate::datagen::{PartitionScheme, Pattern};
use crate::error::{Error, Result};
use crate::losses::{ContrastiveMode, LossWeights};

/// Collaboration protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// No collaboration at all.
    LocalOnly,
    /// Every client distills from every other client.
    HflSymmetric,
    /// Accuracy-gated one-way distillation, plain local training.
    AsymHfl,
    /// Asymmetric distillation plus the robust local objective.
    Rahfl,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::LocalOnly, Mode::HflSymmetric, Mode::AsymHfl, Mode::Rahfl];

    pub fn name(self) -> &'static str {
        match self {
            Mode::LocalOnly => "local_only",
            Mode::HflSymmetric => "hfl_symmetric",
            Mode::AsymHfl => "asym_hfl",
            Mode::Rahfl => "rahfl",
        }
    }

    pub fn collaborates(self) -> bool {
        self != Mode::LocalOnly
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Mode::ALL.iter().map(|m| m.name()).collect();
                Error::config("mode", format!("unknown mode {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// Order of the two phases inside a round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseOrder {
    CollaborativeFirst,
    LocalFirst,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainLoss {
    /// Plain cross-entropy.
    Ce,
    /// The same local objective the rounds use.
    Full,
}

/// Which contrastive objective a `dcl`-enabled run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Contrastive {
    Dcl,
    /// Ablation: complex views substituted into the supervised contrastive batch.
    Supcon,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// Number of clients `K`.
    pub clients: usize,
    /// Hidden-layer templates such as `"64-32"`, optionally repeated with
    /// `"x2"`; the expanded list is assigned to clients cyclically.
    pub architectures: Vec<String>,
    pub num_classes: usize,
    /// Side of the synthetic square images.
    pub image_side: usize,
    /// Labeled manifest dataset to use instead of synthetic data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Public-set manifest; synthetic public data is generated when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub public_manifest: Option<PathBuf>,
    /// Private examples per client `N_k`.
    pub samples_per_client: usize,
    /// Public examples `N_0`.
    pub public_size: usize,
    /// Held-out labeled split used for the transfer matrix.
    pub eval_size: usize,
    pub test_size: usize,
    /// Fraction `ξ` of private examples replaced by corrupted versions.
    pub corruption_rate: f64,
    pub partition: PartitionScheme,
    pub dirichlet_beta: f64,
    /// Collaborative rounds `T_c`.
    pub rounds: usize,
    /// Rebuild the transfer matrix every `T_f` rounds.
    pub matrix_update_period: usize,
    pub pretrain_epochs: usize,
    pub pretrain_loss: PretrainLoss,
    /// `T_l`; derived as `max(⌊N_0/N_k⌋, 1)` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_epochs: Option<usize>,
    pub mu: f64,
    pub gamma: f64,
    pub tau_c: f64,
    pub tau_d: f64,
    pub mix_sequences: usize,
    pub mix_alpha: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub phase_order: PhaseOrder,
    /// Keep the public set uncorrupted; otherwise it is corrupted at `ξ`.
    pub public_clean: bool,
    /// Mixed augmentation + consistency term; defaults to on only for `rahfl`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aug: Option<bool>,
    /// Contrastive objective; defaults to on only for `rahfl`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dcl: Option<bool>,
    pub contrastive: Contrastive,
    /// Worker threads for per-client phases.
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Rahfl,
            clients: 4,
            architectures: vec!["64-32".into(), "128-64".into(), "32".into(), "96-48-24".into()],
            num_classes: 4,
            image_side: 16,
            manifest: None,
            public_manifest: None,
            samples_per_client: 600,
            public_size: 400,
            eval_size: 500,
            test_size: 1000,
            corruption_rate: 0.5,
            partition: PartitionScheme::Iid,
            dirichlet_beta: 1.0,
            rounds: 40,
            matrix_update_period: 1,
            pretrain_epochs: 40,
            pretrain_loss: PretrainLoss::Ce,
            local_epochs: None,
            mu: 12.0,
            gamma: 1.0,
            tau_c: 0.2,
            tau_d: 0.2,
            mix_sequences: 3,
            mix_alpha: 1.0,
            batch_size: 256,
            learning_rate: 0.001,
            seed: 0,
            out_dir: PathBuf::from("runs/latest"),
            phase_order: PhaseOrder::CollaborativeFirst,
            public_clean: true,
            aug: None,
            dcl: None,
            contrastive: Contrastive::Dcl,
            threads: 1,
        }
    }
}

fn range(ok: bool, key: &'static str, reason: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(key, reason()))
    }
}

/// Parses `"64-32"`, `"mlp-64-32"` or `"64-32x3"` into hidden widths and a
/// repetition count.
pub fn parse_architecture(template: &str) -> Result<(Vec<usize>, usize)> {
    let bad = || Error::config("architectures", format!("cannot parse architecture {template:?}"));
    let body = template.trim().trim_start_matches("mlp-");
    let (dims, repeat) = match body.split_once('x') {
        Some((d, r)) => (d, r.parse::<usize>().map_err(|_| bad())?),
        None => (body, 1),
    };
    let hidden = dims
        .split('-')
        .map(|w| w.parse::<usize>().ok().filter(|&w| w > 0))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(bad)?;
    if hidden.is_empty() || repeat == 0 {
        return Err(bad());
    }
    Ok((hidden, repeat))
}

impl ExperimentConfig {
    /// Desk-scale preset: small enough for a laptop run in about a minute.
    pub fn desk() -> Self {
        Self {
            clients: 4,
            image_side: 16,
            num_classes: 4,
            samples_per_client: 600,
            public_size: 400,
            eval_size: 400,
            test_size: 1000,
            rounds: 10,
            batch_size: 32,
            pretrain_epochs: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        range(self.clients >= 1, "clients", || "need at least one client".into())?;
        range(!self.architectures.is_empty(), "architectures", || "list is empty".into())?;
        for a in &self.architectures {
            parse_architecture(a)?;
        }
        range(self.num_classes >= 2, "num_classes", || format!("must be >= 2, got {}", self.num_classes))?;
        if self.manifest.is_none() {
            range(self.num_classes <= Pattern::ALL.len(), "num_classes", || {
                format!("synthetic data has {} pattern families, got {}", Pattern::ALL.len(), self.num_classes)
            })?;
        }
        range(self.image_side >= 8, "image_side", || format!("must be >= 8, got {}", self.image_side))?;
        range(self.samples_per_client >= 1, "samples_per_client", || "must be >= 1".into())?;
        range(self.public_size >= 1, "public_size", || "must be >= 1".into())?;
        range(self.eval_size >= 1, "eval_size", || "must be >= 1".into())?;
        range(self.test_size >= 1, "test_size", || "must be >= 1".into())?;
        range((0.0..=1.0).contains(&self.corruption_rate), "corruption_rate", || {
            format!("must be in [0, 1], got {}", self.corruption_rate)
        })?;
        range(self.dirichlet_beta > 0.0 && self.dirichlet_beta.is_finite(), "dirichlet_beta", || {
            format!("must be positive, got {}", self.dirichlet_beta)
        })?;
        range(self.matrix_update_period >= 1, "matrix_update_period", || "must be >= 1".into())?;
        range(self.local_epochs != Some(0), "local_epochs", || "must be >= 1".into())?;
        range(self.mu >= 0.0 && self.mu.is_finite(), "mu", || format!("must be >= 0, got {}", self.mu))?;
        range(self.gamma >= 0.0 && self.gamma.is_finite(), "gamma", || format!("must be >= 0, got {}", self.gamma))?;
        range(self.tau_c > 0.0 && self.tau_c.is_finite(), "tau_c", || format!("must be > 0, got {}", self.tau_c))?;
        range(self.tau_d > 0.0 && self.tau_d.is_finite(), "tau_d", || format!("must be > 0, got {}", self.tau_d))?;
        range(self.mix_sequences >= 1, "mix_sequences", || "must be >= 1".into())?;
        range(self.mix_alpha > 0.0 && self.mix_alpha.is_finite(), "mix_alpha", || {
            format!("must be > 0, got {}", self.mix_alpha)
        })?;
        range(self.batch_size >= 1, "batch_size", || "must be >= 1".into())?;
        range(self.learning_rate > 0.0 && self.learning_rate.is_finite(), "learning_rate", || {
            format!("must be > 0, got {}", self.learning_rate)
        })?;
        range(self.threads >= 1, "threads", || "must be >= 1".into())?;
        Ok(())
    }

    /// Copy with every derived default filled in.
    pub fn resolved(&self) -> Self {
        let rahfl = self.mode == Mode::Rahfl;
        Self {
            aug: Some(self.aug.unwrap_or(rahfl)),
            dcl: Some(self.dcl.unwrap_or(rahfl)),
            local_epochs: Some(
                self.local_epochs
                    .unwrap_or_else(|| super::auto_local_epochs(self.public_size, self.samples_per_client)),
            ),
            ..self.clone()
        }
    }

    pub fn aug_enabled(&self) -> bool {
        self.aug.unwrap_or(self.mode == Mode::Rahfl)
    }

    pub fn dcl_enabled(&self) -> bool {
        self.dcl.unwrap_or(self.mode == Mode::Rahfl)
    }

    pub fn contrastive_mode(&self) -> ContrastiveMode {
        match (self.dcl_enabled(), self.contrastive) {
            (false, _) => ContrastiveMode::Off,
            (true, Contrastive::Dcl) => ContrastiveMode::Dcl,
            (true, Contrastive::Supcon) => ContrastiveMode::Supcon,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            mu: self.mu,
            gamma: self.gamma,
            tau_c: self.tau_c,
            tau_d: self.tau_d,
        }
    }

    pub fn mix_config(&self) -> MixConfig {
        MixConfig {
            num_sequences: self.mix_sequences,
            alpha: self.mix_alpha,
        }
    }

    /// Hidden widths of every client, in client order.
    pub fn client_architectures(&self) -> Result<Vec<Vec<usize>>> {
        let mut expanded = Vec::new();
        for a in &self.architectures {
            let (hidden, repeat) = parse_architecture(a)?;
            expanded.extend(std::iter::repeat_n(hidden, repeat));
        }
        Ok((0..self.clients).map(|k| expanded[k % expanded.len()].clone()).collect())
    }
}
