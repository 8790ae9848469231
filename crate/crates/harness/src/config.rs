//! Config files: flat `key = value` TOML (sections allowed and flattened),
//! layered over a preset, validated before anything runs.

use std::fmt::Write as _;
use std::path::Path;

use rahfl::federation::ExperimentConfig;
use toml::{Table, Value};

use crate::error::{HarnessError, Result};

/// Every config key with a one-line description, in documentation order.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("mode", "collaboration protocol: local_only | hfl_symmetric | asym_hfl | rahfl"),
    ("clients", "number of clients K"),
    ("architectures", "hidden-layer templates, e.g. [\"64-32\", \"128x2\"], assigned to clients cyclically"),
    ("num_classes", "number of classes C (at most 8 for synthetic data)"),
    ("image_side", "side of synthetic square images"),
    ("manifest", "labeled manifest dataset to use instead of synthetic data"),
    ("public_manifest", "manifest for the public set (labels ignored); synthetic when absent"),
    ("samples_per_client", "private examples per client N_k"),
    ("public_size", "public examples N_0"),
    ("eval_size", "held-out labeled examples used to build the transfer matrix"),
    ("test_size", "clean test examples (a corrupted copy is scored too)"),
    ("corruption_rate", "probability xi that a private example is corrupted, in [0, 1]"),
    ("partition", "client split: iid | dirichlet"),
    ("dirichlet_beta", "Dirichlet concentration beta for label-skewed splits (> 0)"),
    ("rounds", "collaborative rounds T_c"),
    ("matrix_update_period", "rebuild the transfer matrix every T_f rounds"),
    ("pretrain_epochs", "pretraining epochs per client"),
    ("pretrain_loss", "pretraining objective: ce | full"),
    ("local_epochs", "local epochs per round T_l; default max(floor(N_0 / N_k), 1)"),
    ("mu", "weight of the consistency term"),
    ("gamma", "weight of the similarity-distribution regularizer"),
    ("tau_c", "temperature of the supervised contrastive term (> 0)"),
    ("tau_d", "temperature of the similarity distributions (> 0)"),
    ("mix_sequences", "augmentation chains mixed per view"),
    ("mix_alpha", "Dirichlet/Beta concentration of the mixing weights (> 0)"),
    ("batch_size", "mini-batch size for local and collaborative updates"),
    ("learning_rate", "Adam learning rate"),
    ("seed", "master seed; overridden by --seed or RAHFL_SEED"),
    ("out_dir", "output directory for metrics; overridden by --out"),
    ("phase_order", "round phase order: collaborative_first | local_first"),
    ("public_clean", "keep the public set uncorrupted (false corrupts it at xi)"),
    ("aug", "mixed augmentation and consistency term; default true only for rahfl"),
    ("dcl", "contrastive objective; default true only for rahfl"),
    ("contrastive", "contrastive objective when enabled: dcl | supcon (ablation)"),
    ("threads", "worker threads for per-client phases; overridden by RAHFL_THREADS"),
];

/// Starting point that a config file is layered on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Preset {
    /// Paper-scale defaults.
    #[default]
    Paper,
    /// Small synthetic run that finishes in seconds.
    Desk,
}

impl Preset {
    pub fn config(self) -> ExperimentConfig {
        match self {
            Preset::Paper => ExperimentConfig::default(),
            Preset::Desk => ExperimentConfig::desk(),
        }
    }
}

/// Help text listing every key.
pub fn keys_help() -> String {
    let mut out = String::from("Config keys (flat `key = value`; [sections] are allowed and flattened):\n");
    for (key, doc) in CONFIG_KEYS {
        let _ = writeln!(out, "  {key:<22} {doc}");
    }
    out
}

fn config_table(cfg: &ExperimentConfig) -> Result<Table> {
    Ok(Table::try_from(cfg)?)
}

/// Lifts keys out of `[section]` tables so sections are purely cosmetic.
fn flatten(table: Table, origin: &str) -> Result<Table> {
    let mut flat = Table::new();
    let mut insert = |key: String, value: Value| {
        if flat.insert(key.clone(), value).is_some() {
            return Err(HarnessError::ConfigSyntax {
                origin: origin.to_string(),
                message: format!("key `{key}` is set more than once"),
            });
        }
        Ok(())
    };
    for (key, value) in table {
        match value {
            Value::Table(section) => {
                for (k, v) in section {
                    insert(k, v)?;
                }
            }
            other => insert(key, other)?,
        }
    }
    Ok(flat)
}

fn from_table(table: Table, origin: &str) -> Result<ExperimentConfig> {
    // Round-trip through text so the error span locates the offending key.
    let text = toml::to_string(&table)?;
    let cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| {
        let key = e.span().and_then(|span| {
            let line_start = text[..span.start].rfind('\n').map_or(0, |i| i + 1);
            let line = text[line_start..].lines().next()?;
            Some(line.split('=').next()?.trim().to_string())
        });
        let message = e.message().trim().to_string();
        HarnessError::ConfigSyntax {
            origin: origin.to_string(),
            message: match key {
                Some(key) => format!("key `{key}`: {message}"),
                None => message,
            },
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parses config text layered over `base` and validates the result.
pub fn parse_config_str(text: &str, base: &ExperimentConfig, origin: &str) -> Result<ExperimentConfig> {
    let overrides: Table = toml::from_str(text).map_err(|e| HarnessError::ConfigSyntax {
        origin: origin.to_string(),
        message: e.to_string(),
    })?;
    let mut merged = config_table(base)?;
    merged.extend(flatten(overrides, origin)?);
    from_table(merged, origin)
}

/// Reads and validates a config file over the paper-scale defaults.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    load_config(Some(path), Preset::Paper)
}

pub fn load_config(path: Option<&Path>, preset: Preset) -> Result<ExperimentConfig> {
    let base = preset.config();
    match path {
        None => {
            base.validate()?;
            Ok(base)
        }
        Some(p) => {
            if !p.is_file() {
                return Err(HarnessError::MissingConfig(p.to_path_buf()));
            }
            let text = std::fs::read_to_string(p)?;
            parse_config_str(&text, &base, &p.display().to_string())
        }
    }
}

/// Parses a command-line value: TOML literal if it is one, `on`/`off` as
/// booleans, otherwise a bare string.
pub fn parse_value(raw: &str) -> Value {
    match raw {
        "on" => return Value::Boolean(true),
        "off" => return Value::Boolean(false),
        _ => {}
    }
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Returns `cfg` with `key` set to `raw`, revalidated.
pub fn with_override(cfg: &ExperimentConfig, key: &str, raw: &str) -> Result<ExperimentConfig> {
    let mut table = config_table(cfg)?;
    table.insert(key.to_string(), parse_value(raw));
    from_table(table, &format!("override {key}={raw}"))
}

/// TOML text of the config with every derived default resolved.
pub fn effective_config_toml(cfg: &ExperimentConfig) -> Result<String> {
    Ok(toml::to_string(&cfg.resolved())?)
}
