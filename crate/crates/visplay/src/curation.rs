//! Curation: builds the pseudo-labeled dataset for the reasoner phase from a
//! frozen questioner and a frozen reasoner.
//!
//! Per scene, N candidate questions are sampled; format- or grammar-invalid
//! candidates are discarded before any reasoner sampling. Survivors get m
//! reasoner answers, a majority-vote pseudo-label, and a confidence c; the
//! informative band tau_low <= c <= tau_high (inclusive) is retained,
//! deduplicated by (scene_id, question text), and truncated to the budget by
//! a deterministic priority: |c - 0.5| ascending, then scene_id, then text.

use crate::error::Result;
use crate::microworld::{Grammar, Scene};
use crate::persist::{CuratedSample, CurationStats};
use crate::policy::PolicySnapshot;
use crate::rewards::confidence;
use crate::rngutil::{label, stream_rng};
use crate::selfplay::{questioner_context, sample_with_text, AnswerSampler};
use crate::vocab::Vocab;
use rayon::prelude::*;
use std::collections::HashSet;

const SUB_QUESTION: u64 = 0;
const SUB_ANSWERS: u64 = 1;

/// Per-scene candidate outcome, merged in scene order for determinism.
struct SceneHarvest {
    kept: Vec<CuratedSample>,
    discarded_format: usize,
    discarded_grammar: usize,
    discarded_low: usize,
    discarded_high: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn curate(
    questioner: &PolicySnapshot,
    reasoner: &dyn AnswerSampler,
    scenes: &[Scene],
    vocab: &Vocab,
    grammar: &Grammar,
    n_candidates: usize,
    m_samples: usize,
    tau_low: f64,
    tau_high: f64,
    budget: usize,
    seed: u64,
    iteration: usize,
) -> Result<(Vec<CuratedSample>, CurationStats)> {
    assert!(tau_low <= tau_high && (0.0..=1.0).contains(&tau_low) && tau_high <= 1.0);
    assert!(n_candidates >= 1 && m_samples >= 1 && budget >= 1);

    let harvests: Vec<SceneHarvest> = scenes
        .par_iter()
        .map(|scene| harvest_scene(
            questioner, reasoner, scene, vocab, grammar, n_candidates, m_samples, tau_low,
            tau_high, seed, iteration,
        ))
        .collect::<Result<_>>()?;

    let mut stats = CurationStats {
        sampled: scenes.len() * n_candidates,
        ..CurationStats::default()
    };
    let mut passing = Vec::new();
    for h in harvests {
        stats.discarded_format += h.discarded_format;
        stats.discarded_grammar += h.discarded_grammar;
        stats.discarded_low += h.discarded_low;
        stats.discarded_high += h.discarded_high;
        passing.extend(h.kept);
    }

    // dedup by (scene_id, text), keeping the first occurrence in the
    // deterministic scene-order/candidate-order stream
    let mut seen: HashSet<(u64, String)> = HashSet::new();
    let before = passing.len();
    passing.retain(|s| seen.insert((s.scene_id, s.question.text.clone())));
    stats.deduped = before - passing.len();

    // budget truncation by priority: c closest to 0.5, ties by scene then text
    passing.sort_by(|a, b| {
        let ka = (a.confidence - 0.5).abs();
        let kb = (b.confidence - 0.5).abs();
        ka.total_cmp(&kb)
            .then(a.scene_id.cmp(&b.scene_id))
            .then(a.question.text.cmp(&b.question.text))
    });
    if passing.len() > budget {
        stats.truncated = passing.len() - budget;
        passing.truncate(budget);
    }
    stats.retained = passing.len();
    debug_assert!(stats.accounts());

    if passing.is_empty() {
        eprintln!("iteration {iteration}: curation produced an empty dataset");
    }
    Ok((passing, stats))
}

#[allow(clippy::too_many_arguments)]
fn harvest_scene(
    questioner: &PolicySnapshot,
    reasoner: &dyn AnswerSampler,
    scene: &Scene,
    vocab: &Vocab,
    grammar: &Grammar,
    n_candidates: usize,
    m_samples: usize,
    tau_low: f64,
    tau_high: f64,
    seed: u64,
    iteration: usize,
) -> Result<SceneHarvest> {
    let ctx = questioner_context(scene, vocab);
    let mut h = SceneHarvest {
        kept: Vec::new(),
        discarded_format: 0,
        discarded_grammar: 0,
        discarded_low: 0,
        discarded_high: 0,
    };
    for k in 0..n_candidates {
        let path = [label::CURATION, iteration as u64, scene.scene_id, k as u64];
        let mut qpath = path.to_vec();
        qpath.push(SUB_QUESTION);
        let mut rng = stream_rng(seed, &qpath);
        let seq = sample_with_text(&questioner.params, &ctx, vocab, &mut rng)?;
        // invalid candidates die before any reasoner sampling
        match grammar.parse(&seq.text) {
            Err(crate::error::VisplayError::Format(_)) => {
                h.discarded_format += 1;
                continue;
            }
            Err(_) => {
                h.discarded_grammar += 1;
                continue;
            }
            Ok(_) => {}
        }
        let mut apath = path.to_vec();
        apath.push(SUB_ANSWERS);
        let mut rng = stream_rng(seed, &apath);
        let answers = reasoner.sample_answers(scene, seq.payload(), m_samples, &mut rng)?;
        let cr = confidence(&answers)?;
        if cr.confidence < tau_low {
            h.discarded_low += 1;
        } else if cr.confidence > tau_high {
            h.discarded_high += 1;
        } else {
            h.kept.push(CuratedSample {
                scene_id: scene.scene_id,
                question: seq,
                pseudo_label: cr.pseudo_label,
                confidence: cr.confidence,
                iteration,
            });
        }
    }
    Ok(h)
}
