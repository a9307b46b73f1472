//! Experiment configuration: one TOML file referencing the environment spec
//! and carrying the annotation, training, evaluation, and validation
//! sections, plus the master seed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pqmlab::loss::LossSpec;
use pqmlab::mdp::{EnvSpec, PolicyParams, PolicyPreset};
use pqmlab::train::{OptimizerKind, TrainConfig};

use crate::manifest::sha256_hex;
use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub completer_preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub completer_alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub completer_beta: Option<f64>,
    pub k_completions: usize,
    #[serde(default = "default_true")]
    pub mark_after_first_error: bool,
}

fn default_true() -> bool {
    true
}

impl Default for AnnotationSection {
    fn default() -> Self {
        Self {
            completer_preset: Some(PolicyPreset::Expert.name().to_string()),
            completer_alpha: None,
            completer_beta: None,
            k_completions: 8,
            mark_after_first_error: true,
        }
    }
}

impl AnnotationSection {
    /// Resolve the completer against the environment's shape parameters.
    pub fn completer(&self, env: &EnvSpec) -> Result<PolicyParams, CliError> {
        let (mut alpha, mut beta) = match &self.completer_preset {
            Some(name) => name
                .parse::<PolicyPreset>()
                .map_err(|e| CliError::Config(format!("annotation.completer_preset: {e}")))?
                .alpha_beta(),
            None => PolicyPreset::Expert.alpha_beta(),
        };
        if let Some(a) = self.completer_alpha {
            alpha = a;
        }
        if let Some(b) = self.completer_beta {
            beta = b;
        }
        PolicyParams::new(
            alpha,
            beta,
            env.horizon,
            env.feature_noise,
            env.distractor_count,
        )
        .map_err(|e| CliError::Config(format!("annotation completer: {e}")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub loss: LossSpec,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    /// Explicit training seed; derived from the master seed when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_hidden")]
    pub hidden_width: usize,
}

fn default_lr() -> f64 {
    2e-3
}
fn default_steps() -> usize {
    2000
}
fn default_batch() -> usize {
    16
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::AdaptiveMoment
}
fn default_eval_every() -> usize {
    100
}
fn default_model() -> String {
    "mlp1".to_string()
}
fn default_hidden() -> usize {
    8
}

impl TrainSection {
    pub fn train_config(&self, master_seed: u64) -> Result<TrainConfig, CliError> {
        let cfg = TrainConfig {
            loss: self.loss,
            learning_rate: self.learning_rate,
            steps: self.steps,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            seed: self
                .seed
                .unwrap_or_else(|| pqmlab::seed::derive_labeled(master_seed, "train", &[])),
            eval_every: self.eval_every,
        };
        cfg.validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub ladder: Vec<usize>,
    #[serde(default = "default_pool_questions")]
    pub pool_questions: usize,
}

fn default_pool_questions() -> usize {
    100
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            ladder: vec![1, 8, 16, 32, 64],
            pool_questions: default_pool_questions(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateSection {
    pub grad_tolerance: f64,
    pub param_grad_tolerance: f64,
    pub grad_points: usize,
    pub assumption_states: usize,
    pub assumption_rollouts: usize,
    pub assumption_sigma: f64,
    pub theorem_regimes: usize,
    pub theorem_patterns: usize,
    pub shaping_trials: usize,
}

impl Default for ValidateSection {
    fn default() -> Self {
        Self {
            grad_tolerance: 1e-6,
            param_grad_tolerance: 1e-5,
            grad_points: 20,
            assumption_states: 256,
            assumption_rollouts: 32,
            assumption_sigma: 3.0,
            theorem_regimes: 100,
            theorem_patterns: 1000,
            shaping_trials: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    /// Path of the environment spec file, relative to this config file.
    pub environment: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    #[serde(default)]
    pub annotation: AnnotationSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub validate: ValidateSection,
}

/// A loaded and validated experiment: resolved paths, parsed environment,
/// and the effective master seed.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub file: ExperimentFile,
    pub env: EnvSpec,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Digest over the experiment config and environment spec text.
    pub config_digest: String,
}

/// Seed precedence: --seed flag, then PQMLAB_SEED, then the config file.
pub fn resolve_seed(flag: Option<u64>, config_seed: u64) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("PQMLAB_SEED") {
        Ok(text) => text.trim().parse::<u64>().map_err(|_| {
            CliError::Config(format!("PQMLAB_SEED is not a valid u64: {text:?}"))
        }),
        Err(_) => Ok(config_seed),
    }
}

pub fn load_experiment(
    config_path: &Path,
    seed_flag: Option<u64>,
    out_flag: Option<&Path>,
) -> Result<Experiment, CliError> {
    let text = fs::read_to_string(config_path).map_err(|e| {
        CliError::Config(format!("cannot read config {}: {e}", config_path.display()))
    })?;
    let file: ExperimentFile = toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", config_path.display())))?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let env_path = base.join(&file.environment);
    let env_text = fs::read_to_string(&env_path).map_err(|e| {
        CliError::Config(format!(
            "environment spec {} referenced by {}: {e}",
            env_path.display(),
            config_path.display()
        ))
    })?;
    let env = EnvSpec::parse(&env_text).map_err(|e| CliError::Config(e.to_string()))?;
    if file.eval.ladder.is_empty() || file.eval.ladder.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::Config(
            "eval.ladder must be a nonempty strictly ascending list".into(),
        ));
    }
    if let Some(train) = &file.train {
        train.train_config(file.seed)?;
        match train.model.as_str() {
            "linear" | "mlp1" => {}
            other => {
                return Err(CliError::Config(format!(
                    "train.model must be \"linear\" or \"mlp1\", got {other:?}"
                )))
            }
        }
    }
    let out_dir = match out_flag {
        Some(p) => p.to_path_buf(),
        None => base.join(&file.output_dir),
    };
    fs::create_dir_all(&out_dir).map_err(|e| {
        CliError::Config(format!(
            "output directory {} is not writable: {e}",
            out_dir.display()
        ))
    })?;
    let seed = resolve_seed(seed_flag, file.seed)?;
    let config_digest = sha256_hex(format!("{text}\n--env--\n{env_text}").as_bytes());
    Ok(Experiment {
        file,
        env,
        out_dir,
        seed,
        config_digest,
    })
}
