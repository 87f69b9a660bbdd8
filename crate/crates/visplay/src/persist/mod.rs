//! Run-directory persistence: transcript records, curated datasets, the run
//! report, metrics export, and the hashed file manifest.
//!
//! Layout under the run directory:
//! `manifest.json`, `config.toml`, `base.ckpt`, `report.json`, `metrics.csv`,
//! and per iteration `iter_k/{questioner.ckpt,reasoner.ckpt,curated.jsonl,transcript.jsonl}`.
//! Transcript records embed every constant needed to recompute their rewards
//! and advantages offline, so `audit` works on a transcript file alone.

pub mod audit;

use crate::config::RunConfig;
use crate::error::{Result, VisplayError};
use crate::grpo::GrpoStats;
use crate::policy::TokenSequence;
use crate::rewards::RewardBreakdown;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const ARTIFACT_VERSION: u32 = 1;
pub const GRAMMAR_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// transcript records
// ---------------------------------------------------------------------------

/// One JSONL line of a training transcript.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TranscriptRecord {
    QuestionerGroup(QuestionerGroupRecord),
    ReasonerGroup(ReasonerGroupRecord),
}

/// One questioner rollout group: G questions on one scene with the full
/// reward decomposition per member.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuestionerGroupRecord {
    pub iteration: usize,
    pub step: u64,
    pub scene_id: u64,
    pub grid_w: u8,
    pub grid_h: u8,
    pub lambda: f64,
    pub bleu_threshold: f64,
    pub eps_norm: f64,
    pub members: Vec<QuestionMemberRecord>,
    pub advantages: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuestionMemberRecord {
    pub text: String,
    /// Sampled tokens including the trailing end marker (when present).
    pub tokens: Vec<usize>,
    pub old_logprob: f64,
    /// Format or grammar error message for invalid questions.
    pub error: Option<String>,
    /// Reasoner answers (canonical), present only for valid questions.
    pub answers: Option<Vec<String>>,
    pub pseudo_label: Option<String>,
    pub confidence: Option<f64>,
    pub tie_broken: Option<bool>,
    pub breakdown: RewardBreakdown,
}

/// One reasoner rollout group: G sampled answers to one curated question.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReasonerGroupRecord {
    pub iteration: usize,
    pub step: u64,
    pub scene_id: u64,
    pub question_text: String,
    pub pseudo_label: String,
    pub eps_norm: f64,
    /// Canonical answer strings, one per group member.
    pub answers: Vec<String>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

// ---------------------------------------------------------------------------
// curated dataset
// ---------------------------------------------------------------------------

/// One (scene, question, pseudo-label) training triple retained by curation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CuratedSample {
    pub scene_id: u64,
    pub question: TokenSequence,
    pub pseudo_label: String,
    pub confidence: f64,
    pub iteration: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationStats {
    pub sampled: usize,
    pub discarded_format: usize,
    pub discarded_grammar: usize,
    /// Below tau_low: noisy/unstable generations.
    pub discarded_low: usize,
    /// Above tau_high: trivial samples.
    pub discarded_high: usize,
    pub deduped: usize,
    /// Dropped by the budget cut after the priority sort.
    pub truncated: usize,
    pub retained: usize,
}

impl CurationStats {
    /// Discard accounting: every sampled candidate lands in exactly one bin.
    pub fn accounts(&self) -> bool {
        self.discarded_format
            + self.discarded_grammar
            + self.discarded_low
            + self.discarded_high
            + self.deduped
            + self.truncated
            + self.retained
            == self.sampled
    }
}

// ---------------------------------------------------------------------------
// run report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KindAccuracy {
    pub correct: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub n: usize,
    pub per_kind: BTreeMap<String, KindAccuracy>,
}

/// Per-GRPO-step statistics plus phase-specific extras.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepStats {
    pub step: u64,
    pub grpo: GrpoStats,
    /// Mean r_unc over valid questions this step (questioner phases only).
    pub difficulty: Option<f64>,
    pub validity_rate: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuestionerPhaseStats {
    pub mean_final_reward: f64,
    /// Mean r_unc over valid questions = model-perceived difficulty.
    pub mean_difficulty: f64,
    pub validity_rate: f64,
    pub mean_cluster_size: f64,
    pub steps: Vec<StepStats>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReasonerPhaseStats {
    pub skipped: bool,
    pub mean_binary_reward: f64,
    pub steps: Vec<StepStats>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub questioner: QuestionerPhaseStats,
    pub curation: CurationStats,
    pub reasoner: ReasonerPhaseStats,
    /// This iteration's reasoner on the fixed probe set (held-out scenes).
    pub eval: EvalReport,
    /// Fraction of curated pseudo-labels matching the oracle; None when the
    /// curated set is empty.
    pub pseudo_label_accuracy: Option<f64>,
}

/// Table-style matrix: one frozen question set per iteration, evaluated under
/// every persisted reasoner.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrozenQsetReport {
    /// Iteration whose questioner generated the set.
    pub iteration: usize,
    pub n_questions: usize,
    /// (model name, accuracy) for "base", "iter1", ... in order.
    pub accuracy_by_model: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u32,
    pub seed: u64,
    /// Base (pretrained, never self-played) reasoner on the probe set.
    pub base_eval: EvalReport,
    pub iterations: Vec<IterationReport>,
    pub frozen_questionsets: Vec<FrozenQsetReport>,
    /// Linear-regression slope of mean difficulty over iteration index.
    pub difficulty_slope: f64,
}

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: u32,
    pub grammar_version: u32,
    pub config: RunConfig,
    pub vocab: Vec<String>,
    /// Human-readable description of the scene feature vector layout.
    pub feature_layout: Vec<String>,
    /// Relative path -> sha256 hex of every other file in the run directory.
    pub files: BTreeMap<String, String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

// ---------------------------------------------------------------------------
// io helpers
// ---------------------------------------------------------------------------

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.push(b'\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a JSONL file; parse failures carry 1-based line numbers.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(line).map_err(|e| VisplayError::TranscriptParse {
            line: i + 1,
            message: e.to_string(),
        })?;
        items.push(item);
    }
    Ok(items)
}

pub fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}

/// Collects every file under the run dir (except the manifest itself) with
/// its content hash, in sorted relative-path order.
pub fn inventory(run_dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut files = Vec::new();
    collect_files(run_dir, run_dir, &mut files)?;
    let mut map = BTreeMap::new();
    for rel in files {
        if rel == MANIFEST_FILE {
            continue;
        }
        let hash = sha256_hex(&run_dir.join(&rel))?;
        map.insert(rel, hash);
    }
    Ok(map)
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .expect("under root")
                .to_string_lossy()
                .into_owned();
            out.push(rel);
        }
    }
    Ok(())
}

/// Recomputes every hash listed in the manifest; returns the mismatching or
/// missing paths.
pub fn verify_manifest(run_dir: &Path) -> Result<Vec<String>> {
    let manifest: RunManifest = read_json(&run_dir.join(MANIFEST_FILE))?;
    let mut bad = Vec::new();
    for (rel, hash) in &manifest.files {
        let path = run_dir.join(rel);
        if !path.is_file() || sha256_hex(&path)? != *hash {
            bad.push(rel.clone());
        }
    }
    Ok(bad)
}

pub const METRICS_HEADER: &str =
    "iteration,role,step,loss,mean_reward,mean_advantage_abs,mean_ratio,clip_fraction,kl,difficulty,validity_rate";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Renders the metrics CSV from a run report: one row per (iteration, role,
/// step) plus one summary row per phase.
pub fn metrics_csv(report: &RunReport) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    let mut row = |iter: usize, role: &str, step: &str, g: &GrpoStats, diff: Option<f64>, val: Option<f64>| {
        out.push_str(&format!(
            "{iter},{role},{step},{},{},{},{},{},{},{},{}\n",
            g.loss,
            g.mean_reward,
            g.mean_advantage_abs,
            g.mean_ratio,
            g.clip_fraction,
            g.kl,
            fmt_opt(diff),
            fmt_opt(val),
        ));
    };
    for it in &report.iterations {
        for s in &it.questioner.steps {
            row(it.iteration, "questioner", &s.step.to_string(), &s.grpo, s.difficulty, s.validity_rate);
        }
        let q = &it.questioner;
        let summary = GrpoStats {
            mean_reward: q.mean_final_reward,
            ..GrpoStats::default()
        };
        row(it.iteration, "questioner_summary", "", &summary, Some(q.mean_difficulty), Some(q.validity_rate));
        for s in &it.reasoner.steps {
            row(it.iteration, "reasoner", &s.step.to_string(), &s.grpo, None, None);
        }
        let summary = GrpoStats {
            mean_reward: it.reasoner.mean_binary_reward,
            ..GrpoStats::default()
        };
        row(it.iteration, "reasoner_summary", "", &summary, None, None);
    }
    out
}

pub fn write_metrics_csv(path: &Path, report: &RunReport) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(metrics_csv(report).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_roundtrip_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let items = vec![
            serde_json::json!({"a": 1}),
            serde_json::json!({"a": 2.5}),
        ];
        write_jsonl(&path, &items).unwrap();
        let back: Vec<serde_json::Value> = read_jsonl(&path).unwrap();
        assert_eq!(items, back);

        std::fs::write(&path, "{\"a\":1}\nnot json\n").unwrap();
        let err = read_jsonl::<serde_json::Value>(&path).unwrap_err();
        match err {
            VisplayError::TranscriptParse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn inventory_and_verify() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), "hello").unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("sub/b.txt"), "world").unwrap();
        let files = inventory(dir.path()).unwrap();
        assert_eq!(files.len(), 2);
        let manifest = RunManifest {
            artifact_version: ARTIFACT_VERSION,
            grammar_version: GRAMMAR_VERSION,
            config: RunConfig::default(),
            vocab: vec![],
            feature_layout: vec![],
            files,
        };
        write_json(&dir.path().join(MANIFEST_FILE), &manifest).unwrap();
        assert!(verify_manifest(dir.path()).unwrap().is_empty());
        std::fs::write(dir.path().join("a.txt"), "tampered").unwrap();
        assert_eq!(verify_manifest(dir.path()).unwrap(), vec!["a.txt".to_string()]);
    }

    #[test]
    fn curation_stats_accounting() {
        let s = CurationStats {
            sampled: 10,
            discarded_format: 1,
            discarded_grammar: 2,
            discarded_low: 1,
            discarded_high: 1,
            deduped: 1,
            truncated: 1,
            retained: 3,
        };
        assert!(s.accounts());
        let bad = CurationStats { retained: 4, ..s };
        assert!(!bad.accounts());
    }
}
