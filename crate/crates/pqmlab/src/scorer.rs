//! Trainable step scorers and their checkpoints.
//!
//! A scorer maps observable step features to one raw Q estimate. Two kinds
//! are provided: a linear head and a one-hidden-layer tanh network. Scoring
//! is a pure function of (params, features): the same inputs always produce
//! the same score.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Linear,
    Mlp1,
}

/// Parameterized map from step features to a scalar raw Q estimate.
///
/// Parameter layout: linear is `[w(dim), b]`; mlp1 is
/// `[W(hidden x dim, row-major), b_hidden(hidden), v(hidden), c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerModel {
    pub kind: ScorerKind,
    pub feature_dim: usize,
    /// Hidden layer width; 0 for the linear kind.
    pub hidden_width: usize,
    pub params: Vec<f64>,
}

impl ScorerModel {
    /// Zero-initialized linear scorer, so early training is analytically
    /// checkable.
    pub fn linear(feature_dim: usize) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::Config("feature_dim must be >= 1".into()));
        }
        Ok(Self {
            kind: ScorerKind::Linear,
            feature_dim,
            hidden_width: 0,
            params: vec![0.0; feature_dim + 1],
        })
    }

    /// One-hidden-layer tanh scorer. Hidden and head weights draw from a
    /// seed-pinned uniform range scaled by 1/sqrt(fan-in); biases start at
    /// zero.
    pub fn mlp1(feature_dim: usize, hidden_width: usize, seed: u64) -> Result<Self> {
        if feature_dim == 0 || hidden_width == 0 {
            return Err(Error::Config(
                "feature_dim and hidden_width must be >= 1".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::derive(seed, &[0x6d6c70]));
        let n = Self::param_len(ScorerKind::Mlp1, feature_dim, hidden_width);
        let mut params = vec![0.0; n];
        let w_scale = 1.0 / (feature_dim as f64).sqrt();
        for p in params.iter_mut().take(hidden_width * feature_dim) {
            *p = (rng.random::<f64>() * 2.0 - 1.0) * w_scale;
        }
        let v_scale = 1.0 / (hidden_width as f64).sqrt();
        let v_start = hidden_width * feature_dim + hidden_width;
        for p in params.iter_mut().skip(v_start).take(hidden_width) {
            *p = (rng.random::<f64>() * 2.0 - 1.0) * v_scale;
        }
        Ok(Self {
            kind: ScorerKind::Mlp1,
            feature_dim,
            hidden_width,
            params,
        })
    }

    pub fn param_len(kind: ScorerKind, feature_dim: usize, hidden_width: usize) -> usize {
        match kind {
            ScorerKind::Linear => feature_dim + 1,
            ScorerKind::Mlp1 => hidden_width * feature_dim + 2 * hidden_width + 1,
        }
    }

    fn check_features(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.feature_dim {
            return Err(Error::Mismatch(format!(
                "scorer expects feature_dim {}, got {}",
                self.feature_dim,
                features.len()
            )));
        }
        Ok(())
    }

    /// Raw score of one step.
    pub fn score_step(&self, features: &[f64]) -> Result<f64> {
        self.check_features(features)?;
        Ok(match self.kind {
            ScorerKind::Linear => {
                let (w, b) = self.params.split_at(self.feature_dim);
                w.iter().zip(features).map(|(wi, xi)| wi * xi).sum::<f64>() + b[0]
            }
            ScorerKind::Mlp1 => {
                let (h, d) = (self.hidden_width, self.feature_dim);
                let weights = &self.params[..h * d];
                let b_hidden = &self.params[h * d..h * d + h];
                let v = &self.params[h * d + h..h * d + 2 * h];
                let c = self.params[h * d + 2 * h];
                let mut out = c;
                for k in 0..h {
                    let pre: f64 = weights[k * d..(k + 1) * d]
                        .iter()
                        .zip(features)
                        .map(|(wi, xi)| wi * xi)
                        .sum::<f64>()
                        + b_hidden[k];
                    out += v[k] * pre.tanh();
                }
                out
            }
        })
    }

    /// One raw score per step of a trajectory.
    pub fn score_steps(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        traj.steps
            .iter()
            .map(|step| self.score_step(&step.features))
            .collect()
    }

    /// Accumulate `scale * d(score)/d(params)` at one step into `acc`.
    pub fn accumulate_param_grad(
        &self,
        features: &[f64],
        scale: f64,
        acc: &mut [f64],
    ) -> Result<()> {
        self.check_features(features)?;
        if acc.len() != self.params.len() {
            return Err(Error::Mismatch(format!(
                "gradient buffer has {} slots for {} params",
                acc.len(),
                self.params.len()
            )));
        }
        match self.kind {
            ScorerKind::Linear => {
                for (a, &x) in acc.iter_mut().zip(features) {
                    *a += scale * x;
                }
                acc[self.feature_dim] += scale;
            }
            ScorerKind::Mlp1 => {
                let (h, d) = (self.hidden_width, self.feature_dim);
                let b_hidden = &self.params[h * d..h * d + h];
                let v = &self.params[h * d + h..h * d + 2 * h];
                for k in 0..h {
                    let pre: f64 = self.params[k * d..(k + 1) * d]
                        .iter()
                        .zip(features)
                        .map(|(wi, xi)| wi * xi)
                        .sum::<f64>()
                        + b_hidden[k];
                    let t = pre.tanh();
                    let dtanh = 1.0 - t * t;
                    let back = scale * v[k] * dtanh;
                    for (j, &x) in features.iter().enumerate() {
                        acc[k * d + j] += back * x;
                    }
                    acc[h * d + k] += back;
                    acc[h * d + h + k] += scale * t;
                }
                acc[h * d + 2 * h] += scale;
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointWire {
    schema_version: u32,
    kind: ScorerKind,
    feature_dim: usize,
    hidden_width: usize,
    params: Vec<f64>,
    train_config_digest: Option<String>,
}

/// Write a checkpoint as structured text. `train_config_digest` ties the
/// file back to the exact training configuration when one applies.
pub fn save_checkpoint(
    model: &ScorerModel,
    path: &Path,
    train_config_digest: Option<&str>,
) -> Result<()> {
    let wire = CheckpointWire {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        kind: model.kind,
        feature_dim: model.feature_dim,
        hidden_width: model.hidden_width,
        params: model.params.clone(),
        train_config_digest: train_config_digest.map(str::to_string),
    };
    let text = serde_json::to_string_pretty(&wire).map_err(|e| Error::Parse {
        location: path.display().to_string(),
        message: e.to_string(),
    })?;
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Load a checkpoint, validating the schema version and parameter shape.
/// Decode failures report the byte offset of the error.
pub fn load_checkpoint(path: &Path) -> Result<ScorerModel> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let wire: CheckpointWire = serde_json::from_str(&text).map_err(|e| {
        let offset = byte_offset(&text, e.line(), e.column());
        Error::Parse {
            location: format!("{} (byte offset {offset})", path.display()),
            message: e.to_string(),
        }
    })?;
    if wire.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(Error::Invariant {
            field: "schema_version".into(),
            message: format!(
                "checkpoint schema {} unsupported (expected {})",
                wire.schema_version, CHECKPOINT_SCHEMA_VERSION
            ),
        });
    }
    let expected = ScorerModel::param_len(wire.kind, wire.feature_dim, wire.hidden_width);
    if wire.params.len() != expected
        || (wire.kind == ScorerKind::Linear && wire.hidden_width != 0)
        || (wire.kind == ScorerKind::Mlp1 && wire.hidden_width == 0)
        || wire.feature_dim == 0
    {
        return Err(Error::Invariant {
            field: "params".into(),
            message: format!(
                "checkpoint shape is inconsistent: {} params for kind {:?}, dim {}, width {}",
                wire.params.len(),
                wire.kind,
                wire.feature_dim,
                wire.hidden_width
            ),
        });
    }
    Ok(ScorerModel {
        kind: wire.kind,
        feature_dim: wire.feature_dim,
        hidden_width: wire.hidden_width,
        params: wire.params,
    })
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in text.split('\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1);
        }
        offset += l.len() + 1;
    }
    text.len()
}
