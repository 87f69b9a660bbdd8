//! The self-play loop: alternating questioner and reasoner GRPO phases with
//! curation in between, plus base-model construction and oracle evaluation.

mod eval;
mod phases;
mod pretrain;

pub use eval::{build_frozen_qset, build_probe_set, evaluate_reasoner, ProbeQuestion};
pub use phases::{train_questioner_phase, train_reasoner_phase};
pub use pretrain::pretrain_base;

use crate::config::RunConfig;
use crate::error::Result;
use crate::microworld::{canonicalize_answer, generate_scene, oracle_answer, parse_question, Grammar, Scene};
use crate::persist::{
    self, CuratedSample, EvalReport, FrozenQsetReport, IterationReport, RunManifest, RunReport,
    TranscriptRecord,
};
use crate::policy::{
    save_checkpoint, sample_sequence, AdamState, PolicyParams, PolicySnapshot,
};
use crate::rngutil::label;
use crate::vocab::Vocab;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

// ---------------------------------------------------------------------------
// role contexts
// ---------------------------------------------------------------------------

/// Questioner context: scene features followed by an all-zero question bag,
/// so both roles share one parameter shape (the shared-base contract).
/// Width of the question-dependent context tail for a given spec/vocab:
/// per-position token one-hots, per-position match grids, and one named-cell
/// channel readout.
pub fn question_context_len(capacity: usize, vocab: &Vocab) -> usize {
    Vocab::QUESTION_SLOTS * (vocab.size() + capacity) + crate::microworld::CELL_CHANNELS
}

pub fn questioner_context(scene: &Scene, vocab: &Vocab) -> Vec<f64> {
    let cap = scene.grid_w as usize * scene.grid_h as usize;
    let mut v = scene.feature_vector.clone();
    v.extend(std::iter::repeat(0.0).take(question_context_len(cap, vocab)));
    v
}

/// Reasoner context: scene features, the question's per-position one-hot slot
/// encoding (which preserves argument order), and hand-rolled cross-modal
/// fusion — for each slot holding an attribute-value token, a grid marking
/// the cells whose object matches it; for a slot holding a cell token, a grid
/// marking that cell; plus the full channel readout of the first named cell.
/// Fusion hands the policy the *selection* step (the analog of image-text
/// attention in a multimodal model) while tallying, filter intersection and
/// comparison remain its job.
pub fn reasoner_context(scene: &Scene, question_payload: &[usize], vocab: &Vocab) -> Vec<f64> {
    use crate::microworld::{AttrValue, CELL_CHANNELS};
    let cap = scene.grid_w as usize * scene.grid_h as usize;
    let mut v = scene.feature_vector.clone();
    v.extend(vocab.slots(question_payload));

    let cell_index = |r: usize, c: usize| r * scene.grid_w as usize + c;
    let parse_cell = |text: &str| -> Option<(usize, usize)> {
        let (r, c) = text.strip_prefix("at=")?.split_once(':')?;
        Some((r.parse().ok()?, c.parse().ok()?))
    };
    let mut named_cell: Option<(usize, usize)> = None;
    for slot in 0..Vocab::QUESTION_SLOTS {
        let mut grid = vec![0.0; cap];
        if let Some(&tok) = question_payload.get(slot) {
            let text = vocab.token_text(tok);
            if let Some((r, c)) = parse_cell(text) {
                if r < scene.grid_h as usize && c < scene.grid_w as usize {
                    grid[cell_index(r, c)] = 1.0;
                    named_cell.get_or_insert((r, c));
                }
            } else if let Some(val) = AttrValue::all().iter().find(|v| v.token() == text) {
                for o in scene.objects.iter().filter(|o| val.matches(o)) {
                    grid[cell_index(o.cell.0 as usize, o.cell.1 as usize)] = 1.0;
                }
            }
        }
        v.extend(grid);
    }
    match named_cell {
        Some((r, c)) => {
            let base = cell_index(r, c) * CELL_CHANNELS;
            let channels = scene.feature_vector[base..base + CELL_CHANNELS].to_vec();
            v.extend(channels);
        }
        None => v.extend(std::iter::repeat(0.0).take(CELL_CHANNELS)),
    }
    v
}

/// Samples one sequence and fills in its detokenized text.
pub fn sample_with_text(
    params: &PolicyParams,
    ctx: &[f64],
    vocab: &Vocab,
    rng: &mut ChaCha8Rng,
) -> Result<crate::policy::TokenSequence> {
    let mut s = sample_sequence(params, ctx, 1.0, rng)?;
    s.text = vocab.detokenize(s.payload());
    Ok(s)
}

/// Final-token answer protocol: a reasoner response may carry a witness
/// trace (cells it looked at) before its answer, so the answer is the last
/// token of the payload. An empty payload yields the empty string, which
/// never matches a canonical oracle answer.
pub fn extract_answer(payload: &[usize], vocab: &Vocab) -> String {
    match payload.last() {
        Some(&t) => canonicalize_answer(vocab.token_text(t)),
        None => String::new(),
    }
}

// ---------------------------------------------------------------------------
// answer sampling
// ---------------------------------------------------------------------------

/// Source of reasoner answers for a (scene, question) pair. The production
/// implementation samples a frozen reasoner snapshot; tests substitute
/// deterministic fixtures (e.g. a reasoner that always answers the same).
pub trait AnswerSampler: Sync {
    /// Returns `m` canonical answer strings.
    fn sample_answers(
        &self,
        scene: &Scene,
        question_payload: &[usize],
        m: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<String>>;
}

/// Samples a frozen reasoner snapshot at temperature 1.
pub struct PolicyAnswerSampler<'a> {
    pub snapshot: &'a PolicySnapshot,
    pub vocab: &'a Vocab,
}

impl AnswerSampler for PolicyAnswerSampler<'_> {
    fn sample_answers(
        &self,
        scene: &Scene,
        question_payload: &[usize],
        m: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<String>> {
        let ctx = reasoner_context(scene, question_payload, self.vocab);
        (0..m)
            .map(|_| {
                let s = sample_with_text(&self.snapshot.params, &ctx, self.vocab, rng)?;
                Ok(extract_answer(s.payload(), self.vocab))
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// run state and orchestration
// ---------------------------------------------------------------------------

/// Everything that evolves across iterations. Serializable, so a run can be
/// checkpointed after any iteration and resumed bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfPlayState {
    pub questioner: PolicyParams,
    pub reasoner: PolicyParams,
    pub q_opt: AdamState,
    pub r_opt: AdamState,
    pub q_step: u64,
    pub r_step: u64,
    /// Index of the next iteration to run (1-based).
    pub next_iteration: usize,
}

impl SelfPlayState {
    pub fn from_base(base: &PolicyParams) -> Self {
        let dims = base.dims();
        SelfPlayState {
            questioner: base.clone(),
            reasoner: base.clone(),
            q_opt: AdamState::new(dims),
            r_opt: AdamState::new(dims),
            q_step: 0,
            r_step: 0,
            next_iteration: 1,
        }
    }
}

/// Artifacts of one iteration, handed to the caller for persistence.
pub struct IterationOutput {
    pub report: IterationReport,
    pub transcript: Vec<TranscriptRecord>,
    pub curated: Vec<CuratedSample>,
    /// Frozen question set generated by this iteration's questioner on the
    /// eval scenes (Table-2-style protocol).
    pub frozen_qset: Vec<ProbeQuestion>,
}

/// One self-play iteration: questioner phase (reasoner frozen) -> curation
/// (both frozen) -> reasoner phase (questioner frozen) -> oracle evaluation.
pub fn run_iteration(
    state: &mut SelfPlayState,
    cfg: &RunConfig,
    train_scenes: &[Scene],
    eval_scenes: &[Scene],
    vocab: &Vocab,
    grammar: &Grammar,
    probes: &[ProbeQuestion],
) -> Result<IterationOutput> {
    let iteration = state.next_iteration;
    let mut transcript = Vec::new();

    // questioner phase with the reasoner frozen
    let reasoner_frozen = state.reasoner.snapshot(state.r_step);
    let sampler = PolicyAnswerSampler {
        snapshot: &reasoner_frozen,
        vocab,
    };
    let q_stats = train_questioner_phase(
        &mut state.questioner,
        &mut state.q_opt,
        &mut state.q_step,
        &sampler,
        train_scenes,
        vocab,
        grammar,
        cfg,
        iteration,
        &mut transcript,
    )?;
    // freezing contract: the frozen role is bit-identical after the phase
    assert_eq!(
        reasoner_frozen.params, state.reasoner,
        "reasoner moved during questioner phase"
    );

    // curation with both roles frozen
    let questioner_frozen = state.questioner.snapshot(state.q_step);
    let sampler = PolicyAnswerSampler {
        snapshot: &reasoner_frozen,
        vocab,
    };
    let (curated, curation_stats) = crate::curation::curate(
        &questioner_frozen,
        &sampler,
        train_scenes,
        vocab,
        grammar,
        cfg.curation.n_candidates,
        cfg.curation.m_samples,
        cfg.curation.tau_low,
        cfg.curation.tau_high,
        cfg.effective_budget(),
        cfg.seed,
        iteration,
    )?;

    // reasoner phase with the questioner frozen; skipped on an empty dataset
    let r_stats = train_reasoner_phase(
        &mut state.reasoner,
        &mut state.r_opt,
        &mut state.r_step,
        &curated,
        train_scenes,
        vocab,
        cfg,
        iteration,
        &mut transcript,
    )?;
    assert_eq!(
        questioner_frozen.params, state.questioner,
        "questioner moved during reasoner phase"
    );

    // oracle-side reporting (never fed back into training)
    let eval = evaluate_reasoner(&state.reasoner, eval_scenes, probes, vocab);
    let pseudo_label_accuracy = pseudo_label_accuracy(&curated, train_scenes, grammar);
    let frozen_qset = build_frozen_qset(
        &questioner_frozen,
        eval_scenes,
        vocab,
        grammar,
        cfg.eval.frozen_qset_per_scene,
        cfg.seed,
        iteration,
    )?;

    state.next_iteration += 1;
    Ok(IterationOutput {
        report: IterationReport {
            iteration,
            questioner: q_stats,
            curation: curation_stats,
            reasoner: r_stats,
            eval,
            pseudo_label_accuracy,
        },
        transcript,
        curated,
        frozen_qset,
    })
}

/// Fraction of curated pseudo-labels equal to the oracle answer.
fn pseudo_label_accuracy(curated: &[CuratedSample], scenes: &[Scene], grammar: &Grammar) -> Option<f64> {
    if curated.is_empty() {
        return None;
    }
    let by_id: std::collections::HashMap<u64, &Scene> =
        scenes.iter().map(|s| (s.scene_id, s)).collect();
    let correct = curated
        .iter()
        .filter(|c| {
            let scene = by_id[&c.scene_id];
            let ast = parse_question(&c.question.text, grammar).expect("curated question parses");
            oracle_answer(scene, &ast) == c.pseudo_label
        })
        .count();
    Some(correct as f64 / curated.len() as f64)
}

/// Least-squares slope of y over x = 0, 1, 2, ...
pub fn regression_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &y) in ys.iter().enumerate() {
        let dx = i as f64 - mean_x;
        num += dx * (y - mean_y);
        den += dx * dx;
    }
    num / den
}

pub fn make_train_scenes(cfg: &RunConfig) -> Result<Vec<Scene>> {
    let spec = cfg.scenes.gen_spec();
    let seed = crate::rngutil::derive_seed(cfg.seed, &[label::SCENE_TRAIN]);
    (0..cfg.scenes.train_count as u64)
        .map(|id| generate_scene(id, seed, &spec))
        .collect()
}

/// Eval scenes draw from a different seed stream and use a disjoint id range.
pub fn make_eval_scenes(cfg: &RunConfig) -> Result<Vec<Scene>> {
    let spec = cfg.scenes.gen_spec();
    let seed = crate::rngutil::derive_seed(cfg.seed, &[label::SCENE_EVAL]);
    let base = cfg.scenes.train_count as u64;
    (base..base + cfg.scenes.eval_count as u64)
        .map(|id| generate_scene(id, seed, &spec))
        .collect()
}

/// Executes a full run into `out_dir`: base-model construction, all
/// iterations, and every persisted artifact including the hashed manifest.
pub fn run(cfg: &RunConfig, out_dir: &Path) -> Result<RunReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.toml"), cfg.to_toml_string())?;

    let spec = cfg.scenes.gen_spec();
    let vocab = Vocab::build(&spec);
    let grammar = Grammar::new(spec.grid_w, spec.grid_h);
    let train_scenes = make_train_scenes(cfg)?;
    let eval_scenes = make_eval_scenes(cfg)?;

    let base = pretrain_base(cfg, &train_scenes, &vocab, &grammar)?;
    save_checkpoint(&out_dir.join("base.ckpt"), &base, "base", 0)?;

    let probes = build_probe_set(&eval_scenes, &vocab, &grammar, cfg.eval.probe_per_scene, cfg.seed)?;
    let base_eval = evaluate_reasoner(&base, &eval_scenes, &probes, &vocab);

    let mut state = SelfPlayState::from_base(&base);
    let mut iterations = Vec::new();
    let mut frozen_qsets: Vec<(usize, Vec<ProbeQuestion>)> = Vec::new();
    // reasoner lineage for the frozen-questionset matrix
    let mut reasoners: Vec<(String, PolicyParams)> = vec![("base".to_string(), base.clone())];

    for _ in 0..cfg.iterations {
        let out = run_iteration(
            &mut state,
            cfg,
            &train_scenes,
            &eval_scenes,
            &vocab,
            &grammar,
            &probes,
        )?;
        let k = out.report.iteration;
        let iter_dir = out_dir.join(format!("iter_{k}"));
        std::fs::create_dir_all(&iter_dir)?;
        save_checkpoint(&iter_dir.join("questioner.ckpt"), &state.questioner, "questioner", state.q_step)?;
        save_checkpoint(&iter_dir.join("reasoner.ckpt"), &state.reasoner, "reasoner", state.r_step)?;
        persist::write_jsonl(&iter_dir.join("curated.jsonl"), &out.curated)?;
        persist::write_jsonl(&iter_dir.join("transcript.jsonl"), &out.transcript)?;
        reasoners.push((format!("iter{k}"), state.reasoner.clone()));
        frozen_qsets.push((k, out.frozen_qset));
        iterations.push(out.report);
    }

    // Table-2-style matrix: each frozen question set scored under every
    // persisted reasoner.
    let frozen_questionsets = frozen_qsets
        .iter()
        .map(|(k, qset)| FrozenQsetReport {
            iteration: *k,
            n_questions: qset.len(),
            accuracy_by_model: reasoners
                .iter()
                .map(|(name, params)| {
                    let rep: EvalReport = evaluate_reasoner(params, &eval_scenes, qset, &vocab);
                    (name.clone(), rep.accuracy)
                })
                .collect(),
        })
        .collect();

    let difficulties: Vec<f64> = iterations
        .iter()
        .map(|it: &IterationReport| it.questioner.mean_difficulty)
        .collect();
    let report = RunReport {
        version: persist::ARTIFACT_VERSION,
        seed: cfg.seed,
        base_eval,
        iterations,
        frozen_questionsets,
        difficulty_slope: regression_slope(&difficulties),
    };
    persist::write_json(&out_dir.join("report.json"), &report)?;
    persist::write_metrics_csv(&out_dir.join("metrics.csv"), &report)?;

    let manifest = RunManifest {
        artifact_version: persist::ARTIFACT_VERSION,
        grammar_version: persist::GRAMMAR_VERSION,
        config: cfg.clone(),
        vocab: vocab.listing().to_vec(),
        feature_layout: vec![
            "per-cell channels, row-major (grid_h x grid_w x CELL_CHANNELS entries: occupancy, color/shape/size one-hots)"
                .to_string(),
            "color counts / capacity (4 entries)".to_string(),
            "shape counts / capacity (3 entries)".to_string(),
            "size counts / capacity (2 entries)".to_string(),
            "object count / capacity".to_string(),
            "mean object row / (grid_h - 1), mean object col / (grid_w - 1)".to_string(),
            "question token one-hot per position (QUESTION_SLOTS x vocab-size entries; zero for questioner)"
                .to_string(),
            "per-slot cell match grids (QUESTION_SLOTS x capacity entries; zero for questioner)"
                .to_string(),
            "named-cell channel readout (CELL_CHANNELS entries; zero for questioner)".to_string(),
        ],
        files: persist::inventory(out_dir)?,
    };
    persist::write_json(&out_dir.join(persist::MANIFEST_FILE), &manifest)?;
    Ok(report)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Small config for loop tests: tiny scene set, few steps.
    pub(crate) fn tiny_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.seed = 7;
        cfg.iterations = 1;
        cfg.scenes.train_count = 6;
        cfg.scenes.eval_count = 4;
        cfg.policy.hidden_dim = 10;
        cfg.pretrain.steps = 30;
        cfg.questioner.steps = 2;
        cfg.questioner.group_size = 4;
        cfg.questioner.batch = 2;
        cfg.reasoner.steps = 2;
        cfg.reasoner.group_size = 4;
        cfg.reasoner.batch = 2;
        cfg.curation.n_candidates = 3;
        cfg.curation.m_samples = 4;
        cfg.validate().unwrap();
        cfg
    }

    #[test]
    fn train_eval_scene_ids_disjoint() {
        let cfg = tiny_config();
        let train = make_train_scenes(&cfg).unwrap();
        let eval = make_eval_scenes(&cfg).unwrap();
        for t in &train {
            for e in &eval {
                assert_ne!(t.scene_id, e.scene_id);
            }
        }
    }

    #[test]
    fn regression_slope_values() {
        assert!((regression_slope(&[0.0, 1.0, 2.0]) - 1.0).abs() < 1e-12);
        assert!((regression_slope(&[5.0, 5.0, 5.0])).abs() < 1e-12);
        assert!(regression_slope(&[3.0, 2.0, 1.0]) < 0.0);
    }

    #[test]
    fn state_roundtrip_resumes_bit_for_bit() {
        // Running iterations 1 and 2 straight through equals running
        // iteration 1, JSON round-tripping the state, then iteration 2.
        let mut cfg = tiny_config();
        cfg.iterations = 2;
        let spec = cfg.scenes.gen_spec();
        let vocab = Vocab::build(&spec);
        let grammar = Grammar::new(spec.grid_w, spec.grid_h);
        let train = make_train_scenes(&cfg).unwrap();
        let eval = make_eval_scenes(&cfg).unwrap();
        let probes = build_probe_set(&eval, &vocab, &grammar, 2, cfg.seed).unwrap();
        let base = pretrain_base(&cfg, &train, &vocab, &grammar).unwrap();

        let mut a = SelfPlayState::from_base(&base);
        run_iteration(&mut a, &cfg, &train, &eval, &vocab, &grammar, &probes).unwrap();
        let json = serde_json::to_string(&a).unwrap();
        let out_a = run_iteration(&mut a, &cfg, &train, &eval, &vocab, &grammar, &probes).unwrap();

        let mut b: SelfPlayState = serde_json::from_str(&json).unwrap();
        let out_b = run_iteration(&mut b, &cfg, &train, &eval, &vocab, &grammar, &probes).unwrap();

        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&out_a.report).unwrap(),
            serde_json::to_string(&out_b.report).unwrap()
        );
    }
}
