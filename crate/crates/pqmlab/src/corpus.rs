//! Line-delimited corpus files.
//!
//! One JSON record per trajectory, schema-versioned, with floats written at
//! full round-trip precision. Field names are part of the file contract:
//! `{schema_version, question_id, gold_answer, final_answer,
//! steps:[{index, features, latent_correct?}], labels, first_error?,
//! step_scores?, soft_labels?, n_success?, k?}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::AggregationMode;
use crate::trajectory::{ScoredTrajectory, Step, StepLabels, Trajectory};

pub const CORPUS_SCHEMA_VERSION: u32 = 1;

/// Per-step Monte-Carlo annotation statistics attached to a record.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationExtension {
    /// Success fraction per step, in [0, 1].
    pub soft_labels: Vec<f64>,
    /// Successful completions per step.
    pub n_success: Vec<usize>,
    /// Completions sampled per step.
    pub k: usize,
}

/// One corpus entry: a trajectory, its step labels, and optional score /
/// annotation payloads.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRecord {
    pub trajectory: Trajectory,
    pub labels: StepLabels,
    pub scored: Option<ScoredTrajectory>,
    pub annotation: Option<AnnotationExtension>,
}

impl CorpusRecord {
    pub fn new(trajectory: Trajectory, labels: StepLabels) -> Result<Self> {
        if labels.horizon() != trajectory.horizon() {
            return Err(Error::Mismatch(format!(
                "trajectory {} has H={} but labels cover {} steps",
                trajectory.question_id,
                trajectory.horizon(),
                labels.horizon()
            )));
        }
        Ok(Self {
            trajectory,
            labels,
            scored: None,
            annotation: None,
        })
    }

    pub fn with_scores(mut self, scored: ScoredTrajectory) -> Result<Self> {
        if scored.step_scores.len() != self.trajectory.horizon() {
            return Err(Error::Mismatch(format!(
                "trajectory {} has H={} but {} step scores were given",
                self.trajectory.question_id,
                self.trajectory.horizon(),
                scored.step_scores.len()
            )));
        }
        self.scored = Some(scored);
        Ok(self)
    }

    pub fn with_annotation(mut self, annotation: AnnotationExtension) -> Result<Self> {
        let h = self.trajectory.horizon();
        if annotation.soft_labels.len() != h || annotation.n_success.len() != h {
            return Err(Error::Mismatch(format!(
                "trajectory {} has H={} but annotation covers {} soft labels / {} counts",
                self.trajectory.question_id,
                h,
                annotation.soft_labels.len(),
                annotation.n_success.len()
            )));
        }
        self.annotation = Some(annotation);
        Ok(self)
    }
}

#[derive(Serialize, Deserialize)]
struct WireRecord {
    schema_version: u32,
    question_id: String,
    gold_answer: String,
    final_answer: String,
    steps: Vec<Step>,
    labels: Vec<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    first_error: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    step_scores: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    soft_labels: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_success: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
}

fn to_wire(record: &CorpusRecord) -> WireRecord {
    WireRecord {
        schema_version: CORPUS_SCHEMA_VERSION,
        question_id: record.trajectory.question_id.clone(),
        gold_answer: record.trajectory.gold_answer.clone(),
        final_answer: record.trajectory.final_answer.clone(),
        steps: record.trajectory.steps.clone(),
        labels: record.labels.labels.clone(),
        first_error: record.labels.first_error,
        step_scores: record.scored.as_ref().map(|s| s.step_scores.clone()),
        soft_labels: record.annotation.as_ref().map(|a| a.soft_labels.clone()),
        n_success: record.annotation.as_ref().map(|a| a.n_success.clone()),
        k: record.annotation.as_ref().map(|a| a.k),
    }
}

fn from_wire(wire: WireRecord, line: usize) -> Result<CorpusRecord> {
    let at = |field: &str, message: String| Error::Invariant {
        field: format!("line {line}: {field}"),
        message,
    };
    if wire.schema_version != CORPUS_SCHEMA_VERSION {
        return Err(at(
            "schema_version",
            format!(
                "unsupported schema version {} (expected {})",
                wire.schema_version, CORPUS_SCHEMA_VERSION
            ),
        ));
    }
    let trajectory = Trajectory::new(
        wire.question_id,
        wire.steps,
        wire.final_answer,
        wire.gold_answer,
    )
    .map_err(|e| at("steps", e.to_string()))?;
    if wire.labels.len() != trajectory.horizon() {
        return Err(at(
            "labels",
            format!(
                "labels length {} does not match H={}",
                wire.labels.len(),
                trajectory.horizon()
            ),
        ));
    }
    let labels = StepLabels {
        labels: wire.labels,
        first_error: wire.first_error,
    };
    labels.validate().map_err(|e| at("labels", e.to_string()))?;

    let mut record = CorpusRecord::new(trajectory, labels)?;
    if let Some(step_scores) = wire.step_scores {
        // trajectory_score is not stored; it is recomputed with the
        // reference (min) aggregator.
        let scored = ScoredTrajectory::new(
            record.trajectory.question_id.clone(),
            step_scores,
            AggregationMode::Min,
        )
        .map_err(|e| at("step_scores", e.to_string()))?;
        record = record.with_scores(scored).map_err(|e| at("step_scores", e.to_string()))?;
    }
    match (wire.soft_labels, wire.n_success, wire.k) {
        (None, None, None) => {}
        (Some(soft_labels), Some(n_success), Some(k)) => {
            if k == 0 {
                return Err(at("k", "k must be >= 1".into()));
            }
            for (i, (&s, &n)) in soft_labels.iter().zip(&n_success).enumerate() {
                let expected = n as f64 / k as f64;
                if (s - expected).abs() > 1e-12 || n > k {
                    return Err(at(
                        "soft_labels",
                        format!("step {}: soft label {s} inconsistent with {n}/{k}", i + 1),
                    ));
                }
            }
            record = record
                .with_annotation(AnnotationExtension {
                    soft_labels,
                    n_success,
                    k,
                })
                .map_err(|e| at("soft_labels", e.to_string()))?;
        }
        _ => {
            return Err(at(
                "soft_labels",
                "annotation fields soft_labels, n_success, k must appear together".into(),
            ));
        }
    }
    Ok(record)
}

/// Write a corpus as line-delimited records. Returns the record count.
///
/// All trajectories must share one feature dimension; a mismatch is rejected
/// with the offending question id before anything is written.
pub fn serialize_corpus(records: &[CorpusRecord], destination: &Path) -> Result<usize> {
    if let Some(first) = records.first() {
        let dim = first.trajectory.feature_dim();
        for record in &records[1..] {
            if record.trajectory.feature_dim() != dim {
                return Err(Error::FeatureDim {
                    question_id: record.trajectory.question_id.clone(),
                    expected: dim,
                    found: record.trajectory.feature_dim(),
                });
            }
        }
    }
    let io_err = |source| Error::Io {
        path: destination.display().to_string(),
        source,
    };
    let mut writer = BufWriter::new(File::create(destination).map_err(io_err)?);
    for record in records {
        let line = serde_json::to_string(&to_wire(record)).map_err(|e| Error::Parse {
            location: destination.display().to_string(),
            message: e.to_string(),
        })?;
        writer.write_all(line.as_bytes()).map_err(io_err)?;
        writer.write_all(b"\n").map_err(io_err)?;
    }
    writer.flush().map_err(io_err)?;
    Ok(records.len())
}

/// Read a corpus written by [`serialize_corpus`], re-validating all
/// invariants. Order is preserved; errors carry the 1-based line number.
pub fn parse_corpus(source: &Path) -> Result<Vec<CorpusRecord>> {
    let io_err = |source_err| Error::Io {
        path: source.display().to_string(),
        source: source_err,
    };
    let reader = BufReader::new(File::open(source).map_err(io_err)?);
    let mut records = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: WireRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            location: format!("{}:{line_no}", source.display()),
            message: e.to_string(),
        })?;
        let record = from_wire(wire, line_no)?;
        let record_dim = record.trajectory.feature_dim();
        match dim {
            None => dim = Some(record_dim),
            Some(d) if d != record_dim => {
                return Err(Error::FeatureDim {
                    question_id: record.trajectory.question_id.clone(),
                    expected: d,
                    found: record_dim,
                });
            }
            _ => {}
        }
        records.push(record);
    }
    Ok(records)
}
