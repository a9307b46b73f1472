//! Minibatch first-order training of step scorers.
//!
//! The trainer composes the loss-zoo gradients with the scorer's parameter
//! Jacobian by the chain rule, averages per-trajectory losses over each
//! batch, and applies momentum SGD or Adam under a cosine schedule with 10%
//! warmup. Shuffling is a fixed schedule derived from the seed, batches are
//! accumulated in index order, and every run with the same inputs produces
//! bit-identical parameter trajectories.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::CorpusRecord;
use crate::error::{Error, Result};
use crate::loss::{eval_step_loss, LossSpec};
use crate::scorer::ScorerModel;
use crate::seed;

const TAG_SHUFFLE: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    AdaptiveMoment,
}

/// Training configuration; expressible as a structured text file with keys
/// `loss.family`, `loss.zeta`, `loss.wrong_order`, `learning_rate`, `steps`,
/// `batch_size`, `optimizer`, `seed`, `eval_every`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossSpec,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub eval_every: usize,
}

impl TrainConfig {
    /// Defaults sized for the synthetic corpora: Adam at 2e-3 for 2000
    /// steps of 16 trajectories.
    pub fn new(loss: LossSpec) -> Self {
        Self {
            loss,
            learning_rate: 2e-3,
            steps: 2000,
            batch_size: 16,
            optimizer: OptimizerKind::AdaptiveMoment,
            seed: 0,
            eval_every: 100,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.loss.family.is_step_loss() {
            return Err(Error::Config(format!(
                "loss family {} is not a per-trajectory training objective",
                self.loss.family.name()
            )));
        }
        if self.loss.zeta.is_nan() || self.loss.zeta < 0.0 {
            return Err(Error::Config("loss.zeta must be >= 0".into()));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "batch_size and eval_every must be positive".into(),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, used to tie checkpoints to the
    /// exact configuration.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let bytes = hasher.finalize();
        bytes.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Cosine-decayed learning rate with 10% linear warmup.
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        let warmup = ((self.steps as f64 * 0.1).round() as usize).max(1);
        if step < warmup {
            self.learning_rate * (step + 1) as f64 / warmup as f64
        } else {
            let span = (self.steps.saturating_sub(warmup)).max(1) as f64;
            let progress = (step - warmup) as f64 / span;
            self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
        }
    }
}

enum Optimizer {
    Sgd {
        velocity: Vec<f64>,
    },
    Adam {
        m: Vec<f64>,
        v: Vec<f64>,
        t: u32,
    },
}

impl Optimizer {
    fn new(kind: OptimizerKind, n: usize) -> Self {
        match kind {
            OptimizerKind::SgdMomentum => Optimizer::Sgd {
                velocity: vec![0.0; n],
            },
            OptimizerKind::AdaptiveMoment => Optimizer::Adam {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        match self {
            Optimizer::Sgd { velocity } => {
                const MU: f64 = 0.9;
                for ((p, vel), &g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
                    *vel = MU * *vel + g;
                    *p -= lr * *vel;
                }
            }
            Optimizer::Adam { m, v, t } => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                *t += 1;
                let bc1 = 1.0 - B1.powi(*t as i32);
                let bc2 = 1.0 - B2.powi(*t as i32);
                for i in 0..params.len() {
                    m[i] = B1 * m[i] + (1.0 - B1) * grad[i];
                    v[i] = B2 * v[i] + (1.0 - B2) * grad[i] * grad[i];
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
                }
            }
        }
    }
}

fn soft_targets(record: &CorpusRecord) -> Option<&[f64]> {
    record.annotation.as_ref().map(|a| a.soft_labels.as_slice())
}

/// Mean loss over a batch and its gradient over the model parameters, both
/// accumulated in index order.
pub fn batch_loss_and_grad(
    model: &ScorerModel,
    batch: &[&CorpusRecord],
    loss: &LossSpec,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Domain("gradient of an empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; model.params.len()];
    for record in batch {
        let scores = model.score_steps(&record.trajectory)?;
        let out = eval_step_loss(loss, &scores, &record.labels, soft_targets(record))?;
        value += scale * out.value;
        for (step, step_grad) in record.trajectory.steps.iter().zip(&out.grad) {
            model.accumulate_param_grad(&step.features, scale * step_grad, &mut grad)?;
        }
    }
    Ok((value, grad))
}

/// Exact chain-rule gradient of the batch-mean loss over the parameters.
pub fn parameter_grad(
    model: &ScorerModel,
    batch: &[&CorpusRecord],
    loss: &LossSpec,
) -> Result<Vec<f64>> {
    Ok(batch_loss_and_grad(model, batch, loss)?.1)
}

/// Central-finite-difference check of [`parameter_grad`] at the model's
/// current parameters. Returns max over parameters of |Δ| / max(1, |analytic|).
pub fn param_grad_check(
    model: &ScorerModel,
    batch: &[&CorpusRecord],
    loss: &LossSpec,
    h: f64,
) -> Result<f64> {
    let analytic = parameter_grad(model, batch, loss)?;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    #[allow(clippy::needless_range_loop)]
    for i in 0..model.params.len() {
        probe.params[i] = model.params[i] + h;
        let up = batch_loss_and_grad(&probe, batch, loss)?.0;
        probe.params[i] = model.params[i] - h;
        let down = batch_loss_and_grad(&probe, batch, loss)?.0;
        probe.params[i] = model.params[i];
        let numeric = (up - down) / (2.0 * h);
        let err = (numeric - analytic[i]).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// One row of the training trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    /// Fraction of within-trajectory (correct, wrong) step pairs the model
    /// orders correctly on the eval subsample; absent when no such pairs
    /// exist.
    pub rank_agreement: Option<f64>,
}

/// Size cap of the fixed subsample used for trace rows.
const EVAL_SAMPLE: usize = 256;

fn eval_trace(
    model: &ScorerModel,
    sample: &[&CorpusRecord],
    loss: &LossSpec,
    step: usize,
) -> Result<TraceRow> {
    let (value, _) = batch_loss_and_grad(model, sample, loss)?;
    let mut ordered = 0usize;
    let mut pairs = 0usize;
    for record in sample {
        let scores = model.score_steps(&record.trajectory)?;
        // Rank agreement is diagnosed against the gold latent states when
        // the corpus carries them, else against the training labels.
        let truth: Vec<bool> = record
            .trajectory
            .steps
            .iter()
            .map(|s| s.latent_correct)
            .collect::<Option<Vec<bool>>>()
            .unwrap_or_else(|| record.labels.labels.clone());
        for (i, &ci) in truth.iter().enumerate() {
            if !ci {
                continue;
            }
            for (j, &cj) in truth.iter().enumerate() {
                if cj {
                    continue;
                }
                pairs += 1;
                if scores[i] > scores[j] {
                    ordered += 1;
                }
            }
        }
    }
    Ok(TraceRow {
        step,
        loss: value,
        rank_agreement: (pairs > 0).then(|| ordered as f64 / pairs as f64),
    })
}

/// Train a scorer on a labeled corpus. Returns the trained model and the
/// per-interval metric trace (a row at step 0, one per `eval_every` steps,
/// and one at the final step).
pub fn train(
    model: &ScorerModel,
    corpus: &[CorpusRecord],
    cfg: &TrainConfig,
) -> Result<(ScorerModel, Vec<TraceRow>)> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Domain("training corpus is empty".into()));
    }
    for record in corpus {
        if record.trajectory.feature_dim() != model.feature_dim {
            return Err(Error::Mismatch(format!(
                "trajectory {} has feature_dim {} but the model expects {}",
                record.trajectory.question_id,
                record.trajectory.feature_dim(),
                model.feature_dim
            )));
        }
        if matches!(cfg.loss.family, crate::loss::LossFamily::MseSoft)
            && record.annotation.is_none()
        {
            return Err(Error::Mismatch(format!(
                "mse_soft needs soft labels but trajectory {} has no annotation",
                record.trajectory.question_id
            )));
        }
    }

    let mut model = model.clone();
    let mut optimizer = Optimizer::new(cfg.optimizer, model.params.len());
    let sample: Vec<&CorpusRecord> = corpus.iter().take(EVAL_SAMPLE).collect();
    let mut trace = vec![eval_trace(&model, &sample, &cfg.loss, 0)?];

    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;
    let mut epoch = 0u64;
    for step in 0..cfg.steps {
        let mut batch: Vec<&CorpusRecord> = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor >= order.len() {
                order = shuffled_indices(corpus.len(), cfg.seed, epoch);
                epoch += 1;
                cursor = 0;
            }
            batch.push(&corpus[order[cursor]]);
            cursor += 1;
        }
        let (_, grad) = batch_loss_and_grad(&model, &batch, &cfg.loss)?;
        optimizer.step(&mut model.params, &grad, cfg.learning_rate_at(step));
        if (step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps {
            trace.push(eval_trace(&model, &sample, &cfg.loss, step + 1)?);
        }
    }
    Ok((model, trace))
}

fn shuffled_indices(n: usize, seed_value: u64, epoch: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed::derive(
        seed_value,
        &[TAG_SHUFFLE, epoch],
    ));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{LossFamily, LossSpec};
    use crate::mdp::{sample_trajectory, PolicyParams};

    fn corpus(noise: f64, n: usize, seed: u64) -> Vec<CorpusRecord> {
        let params = PolicyParams::new(0.75, 0.15, 5, noise, 3).unwrap();
        (0..n)
            .map(|i| {
                let (t, l) = sample_trajectory(&params, &format!("q{i}"), seed);
                CorpusRecord::new(t, l).unwrap()
            })
            .collect()
    }

    fn spec(family: LossFamily) -> LossSpec {
        LossSpec::new(family, 2.0).unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_params_bit_exact() {
        let corpus = corpus(0.4, 24, 3);
        let model = ScorerModel::mlp1(crate::mdp::FEATURE_DIM, 4, 9).unwrap();
        let mut cfg = TrainConfig::new(spec(LossFamily::Practical));
        cfg.learning_rate = 0.0;
        cfg.steps = 50;
        let (trained, _) = train(&model, &corpus, &cfg).unwrap();
        assert_eq!(trained.params, model.params);
    }

    #[test]
    fn identical_seeds_reproduce_traces() {
        let corpus = corpus(0.6, 32, 5);
        let model = ScorerModel::linear(crate::mdp::FEATURE_DIM).unwrap();
        let mut cfg = TrainConfig::new(spec(LossFamily::Bce));
        cfg.steps = 120;
        let (m1, t1) = train(&model, &corpus, &cfg).unwrap();
        let (m2, t2) = train(&model, &corpus, &cfg).unwrap();
        assert_eq!(m1.params, m2.params);
        assert_eq!(t1, t2);
    }

    #[test]
    fn separable_corpus_drives_bce_loss_down() {
        // Zero feature noise leaves the class means unit-separated, so a
        // logistic scorer must fit it nearly perfectly.
        let corpus = corpus(0.0, 64, 7);
        let model = ScorerModel::linear(crate::mdp::FEATURE_DIM).unwrap();
        let mut cfg = TrainConfig::new(spec(LossFamily::Bce));
        cfg.learning_rate = 0.05;
        cfg.steps = 2000;
        cfg.batch_size = 32;
        let (_, trace) = train(&model, &corpus, &cfg).unwrap();
        let last = trace.last().unwrap();
        assert!(last.loss < 0.05, "final loss {}", last.loss);
    }

    #[test]
    fn loss_decreases_for_every_family_in_100_steps() {
        let mut records = corpus(0.5, 48, 11);
        let annotate_cfg = crate::annotate::AnnotationConfig::new(
            PolicyParams::new(0.85, 0.1, 5, 0.5, 3).unwrap(),
            8,
            13,
        )
        .unwrap()
        .with_mark_after_first_error(false);
        records = records
            .iter()
            .map(|r| crate::annotate::annotate_record(r, &annotate_cfg).unwrap())
            .collect();
        for family in LossFamily::ALL.into_iter().filter(|f| f.is_step_loss()) {
            let mut cfg = TrainConfig::new(spec(family));
            cfg.steps = 100;
            cfg.learning_rate = 5e-3;
            cfg.eval_every = 100;
            let model = ScorerModel::linear(crate::mdp::FEATURE_DIM).unwrap();
            let (_, trace) = train(&model, &records, &cfg).unwrap();
            let initial = trace.first().unwrap().loss;
            let last = trace.last().unwrap().loss;
            assert!(
                last < initial,
                "{}: loss went {initial} -> {last}",
                family.name()
            );
        }
    }

    #[test]
    fn parameter_grad_matches_finite_differences() {
        let corpus = corpus(0.5, 6, 17);
        let batch: Vec<&CorpusRecord> = corpus.iter().collect();
        for (kind, model) in [
            ("linear", ScorerModel::linear(crate::mdp::FEATURE_DIM).unwrap()),
            ("mlp1", ScorerModel::mlp1(crate::mdp::FEATURE_DIM, 4, 3).unwrap()),
        ] {
            for family in [LossFamily::Bce, LossFamily::Practical, LossFamily::Theorem] {
                let loss = spec(family);
                let grad = parameter_grad(&model, &batch, &loss).unwrap();
                let h = 1e-6;
                let mut probe = model.clone();
                for i in 0..model.params.len() {
                    probe.params[i] = model.params[i] + h;
                    let up = batch_loss_and_grad(&probe, &batch, &loss).unwrap().0;
                    probe.params[i] = model.params[i] - h;
                    let down = batch_loss_and_grad(&probe, &batch, &loss).unwrap().0;
                    probe.params[i] = model.params[i];
                    let numeric = (up - down) / (2.0 * h);
                    let err = (numeric - grad[i]).abs() / grad[i].abs().max(1.0);
                    assert!(err < 1e-5, "{kind}/{}: param {i} err {err}", family.name());
                }
            }
        }
    }

    #[test]
    fn batch_of_identical_trajectories_equals_single_gradient() {
        let corpus = corpus(0.5, 1, 23);
        let loss = spec(LossFamily::Practical);
        let model = ScorerModel::mlp1(crate::mdp::FEATURE_DIM, 3, 5).unwrap();
        let single = parameter_grad(&model, &[&corpus[0]], &loss).unwrap();
        let repeated = parameter_grad(&model, &[&corpus[0]; 4], &loss).unwrap();
        for (a, b) in single.iter().zip(&repeated) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sharded_accumulation_matches_sequential_within_tolerance() {
        let corpus = corpus(0.5, 32, 29);
        let refs: Vec<&CorpusRecord> = corpus.iter().collect();
        let loss = spec(LossFamily::Practical);
        let model = ScorerModel::linear(crate::mdp::FEATURE_DIM).unwrap();
        let (value, grad) = batch_loss_and_grad(&model, &refs, &loss).unwrap();

        let mut sharded_value = 0.0;
        let mut sharded_grad = vec![0.0; grad.len()];
        for chunk in refs.chunks(8) {
            let (v, g) = batch_loss_and_grad(&model, chunk, &loss).unwrap();
            let w = chunk.len() as f64 / refs.len() as f64;
            sharded_value += w * v;
            for (acc, gi) in sharded_grad.iter_mut().zip(&g) {
                *acc += w * gi;
            }
        }
        assert!((value - sharded_value).abs() < 1e-10);
        for (a, b) in grad.iter().zip(&sharded_grad) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn mse_soft_without_annotation_is_rejected() {
        let corpus = corpus(0.5, 4, 31);
        let model = ScorerModel::linear(crate::mdp::FEATURE_DIM).unwrap();
        let cfg = TrainConfig::new(spec(LossFamily::MseSoft));
        assert!(train(&model, &corpus, &cfg).is_err());
    }

    #[test]
    fn config_file_round_trip_and_validation() {
        let text = "learning_rate = 0.002\nsteps = 100\nbatch_size = 8\n\
                    optimizer = \"adaptive_moment\"\nseed = 7\neval_every = 10\n\n\
                    [loss]\nfamily = \"practical\"\nzeta = 4.0\n";
        let cfg = TrainConfig::parse(text).unwrap();
        assert_eq!(cfg.loss.family, LossFamily::Practical);
        assert_eq!(cfg.loss.zeta, 4.0);
        assert_eq!(cfg.seed, 7);

        let bad = text.replace("practical", "inter_pair");
        assert!(TrainConfig::parse(&bad).is_err());

        assert_eq!(cfg.digest(), cfg.digest());
        let mut other = cfg.clone();
        other.seed = 8;
        assert_ne!(cfg.digest(), other.digest());
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let mut cfg = TrainConfig::new(spec(LossFamily::Bce));
        cfg.steps = 100;
        cfg.learning_rate = 1.0;
        assert!(cfg.learning_rate_at(0) < 0.2);
        assert!((cfg.learning_rate_at(9) - 1.0).abs() < 1e-12);
        assert!(cfg.learning_rate_at(99) < 0.01);
    }
}
