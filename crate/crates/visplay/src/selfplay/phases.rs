//! Questioner and reasoner GRPO training phases.
//!
//! Rollout generation fans out per group with rayon; every rollout draws its
//! random stream from (seed, phase label, iteration, step, group index,
//! member index), so results are identical regardless of worker count.
//! Parameter updates happen on the calling thread in group order.

use super::{questioner_context, reasoner_context, sample_with_text, AnswerSampler};
use crate::config::RunConfig;
use crate::error::Result;
use crate::grpo::{grpo_step, RolloutGroup};
use crate::microworld::{Grammar, Scene};
use crate::persist::{
    CuratedSample, QuestionMemberRecord, QuestionerGroupRecord, QuestionerPhaseStats,
    ReasonerGroupRecord, ReasonerPhaseStats, StepStats, TranscriptRecord,
};
use crate::policy::{AdamState, PolicyParams, PolicySnapshot};
use crate::rewards::{
    cluster_group, confidence, diversity_penalty, questioner_reward, reasoner_reward,
    uncertainty_reward, RewardBreakdown,
};
use crate::rngutil::{label, stream_rng};
use crate::vocab::Vocab;
use rayon::prelude::*;
use std::collections::HashMap;

/// rng sub-stream tags below (phase, iteration, step, group index).
const SUB_QUESTION: u64 = 0;
const SUB_ANSWERS: u64 = 1;

/// Builds one questioner rollout group on a scene: G sampled questions, m
/// frozen-reasoner answers per valid question, the full reward stack, and the
/// transcript record mirroring it.
#[allow(clippy::too_many_arguments)]
fn build_question_group(
    snapshot: &PolicySnapshot,
    reasoner: &dyn AnswerSampler,
    scene: &Scene,
    vocab: &Vocab,
    grammar: &Grammar,
    cfg: &RunConfig,
    iteration: usize,
    step: u64,
    group_idx: u64,
) -> Result<(RolloutGroup, QuestionerGroupRecord)> {
    let g = cfg.questioner.group_size;
    let m = cfg.curation.m_samples;
    let lambda = cfg.rewards.lambda;
    let ctx = questioner_context(scene, vocab);
    let base_path = [
        label::QUESTIONER_PHASE,
        iteration as u64,
        step,
        group_idx,
    ];

    let mut sequences = Vec::with_capacity(g);
    for i in 0..g {
        let mut path = base_path.to_vec();
        path.extend([i as u64, SUB_QUESTION]);
        let mut rng = stream_rng(cfg.seed, &path);
        sequences.push(sample_with_text(&snapshot.params, &ctx, vocab, &mut rng)?);
    }

    // cluster the whole group (valid or not); redundancy is a property of the
    // sampled set
    let payloads: Vec<Vec<usize>> = sequences.iter().map(|s| s.payload().to_vec()).collect();
    let clusters = cluster_group(&payloads, cfg.rewards.bleu_threshold);

    let mut members = Vec::with_capacity(g);
    let mut rewards = Vec::with_capacity(g);
    for (i, seq) in sequences.iter().enumerate() {
        let (cluster_id, cluster_size) = clusters[i];
        let r_div = diversity_penalty(cluster_size, g, lambda)?;
        let validity = grammar.parse(&seq.text).map(|_| ());
        let mut rec = QuestionMemberRecord {
            text: seq.text.clone(),
            tokens: seq.tokens.clone(),
            old_logprob: 0.0, // filled from the rollout group below
            error: validity.as_ref().err().map(|e| e.to_string()),
            answers: None,
            pseudo_label: None,
            confidence: None,
            tie_broken: None,
            breakdown: RewardBreakdown {
                valid: false,
                r_unc: 0.0,
                r_div,
                cluster_id,
                cluster_size,
                final_reward: 0.0,
            },
        };
        if validity.is_ok() {
            let mut path = base_path.to_vec();
            path.extend([i as u64, SUB_ANSWERS]);
            let mut rng = stream_rng(cfg.seed, &path);
            let answers = reasoner.sample_answers(scene, seq.payload(), m, &mut rng)?;
            let cr = confidence(&answers)?;
            let r_unc = uncertainty_reward(cr.confidence)?;
            rec.breakdown.valid = true;
            rec.breakdown.r_unc = r_unc;
            rec.breakdown.final_reward = questioner_reward(true, r_unc, r_div);
            rec.answers = Some(answers);
            rec.pseudo_label = Some(cr.pseudo_label);
            rec.confidence = Some(cr.confidence);
            rec.tie_broken = Some(cr.tie_broken);
        }
        rewards.push(rec.breakdown.final_reward);
        members.push(rec);
    }

    let group = RolloutGroup::new(ctx, sequences, rewards, cfg.questioner.eps_norm, snapshot);
    for (rec, &lp) in members.iter_mut().zip(&group.old_logprobs) {
        rec.old_logprob = lp;
    }
    let record = QuestionerGroupRecord {
        iteration,
        step,
        scene_id: scene.scene_id,
        grid_w: scene.grid_w,
        grid_h: scene.grid_h,
        lambda,
        bleu_threshold: cfg.rewards.bleu_threshold,
        eps_norm: cfg.questioner.eps_norm,
        advantages: group.advantages.clone(),
        members,
    };
    Ok((group, record))
}

/// One questioner training phase: `cfg.questioner.steps` GRPO steps over
/// scene batches with the reasoner frozen.
#[allow(clippy::too_many_arguments)]
pub fn train_questioner_phase(
    questioner: &mut PolicyParams,
    opt: &mut AdamState,
    q_step: &mut u64,
    reasoner: &dyn AnswerSampler,
    scenes: &[Scene],
    vocab: &Vocab,
    grammar: &Grammar,
    cfg: &RunConfig,
    iteration: usize,
    transcript: &mut Vec<TranscriptRecord>,
) -> Result<QuestionerPhaseStats> {
    let hyper = cfg.questioner.grpo_hyper(cfg.curation.m_samples);
    let mut steps = Vec::with_capacity(cfg.questioner.steps);
    let (mut sum_reward, mut sum_unc, mut sum_cluster) = (0.0, 0.0, 0.0);
    let (mut n_total, mut n_valid) = (0usize, 0usize);
    // pre-update policy: the KL anchor for every step of this phase
    let reference = questioner.snapshot(*q_step);

    for step_idx in 0..cfg.questioner.steps {
        let snapshot = questioner.snapshot(*q_step);
        let batch: Vec<(u64, &Scene)> = (0..cfg.questioner.batch)
            .map(|k| {
                let idx = (step_idx * cfg.questioner.batch + k) % scenes.len();
                (k as u64, &scenes[idx])
            })
            .collect();
        let built: Vec<(RolloutGroup, QuestionerGroupRecord)> = batch
            .par_iter()
            .map(|(k, scene)| {
                build_question_group(
                    &snapshot, reasoner, scene, vocab, grammar, cfg, iteration, *q_step, *k,
                )
            })
            .collect::<Result<_>>()?;

        let (mut step_unc, mut step_valid, mut step_total) = (0.0, 0usize, 0usize);
        let mut groups = Vec::with_capacity(built.len());
        for (group, record) in built {
            for mrec in &record.members {
                step_total += 1;
                sum_cluster += mrec.breakdown.cluster_size as f64;
                sum_reward += mrec.breakdown.final_reward;
                if mrec.breakdown.valid {
                    step_valid += 1;
                    step_unc += mrec.breakdown.r_unc;
                }
            }
            transcript.push(TranscriptRecord::QuestionerGroup(record));
            groups.push(group);
        }
        let stats = grpo_step(questioner, &snapshot, &groups, &hyper, opt)?;
        *q_step += 1;
        n_total += step_total;
        n_valid += step_valid;
        sum_unc += step_unc;
        steps.push(StepStats {
            step: *q_step - 1,
            grpo: stats,
            difficulty: (step_valid > 0).then(|| step_unc / step_valid as f64),
            validity_rate: Some(step_valid as f64 / step_total as f64),
        });
    }

    Ok(QuestionerPhaseStats {
        mean_final_reward: sum_reward / n_total.max(1) as f64,
        mean_difficulty: if n_valid > 0 { sum_unc / n_valid as f64 } else { 0.0 },
        validity_rate: n_valid as f64 / n_total.max(1) as f64,
        mean_cluster_size: sum_cluster / n_total.max(1) as f64,
        steps,
    })
}

/// Builds one reasoner rollout group on a curated question: G sampled
/// answers scored 0/1 against the pseudo-label.
fn build_answer_group(
    snapshot: &PolicySnapshot,
    sample: &CuratedSample,
    scene: &Scene,
    vocab: &Vocab,
    cfg: &RunConfig,
    iteration: usize,
    step: u64,
    group_idx: u64,
) -> Result<(RolloutGroup, ReasonerGroupRecord)> {
    let g = cfg.reasoner.group_size;
    let ctx = reasoner_context(scene, sample.question.payload(), vocab);

    let mut sequences = Vec::with_capacity(g);
    let mut answers = Vec::with_capacity(g);
    let mut rewards = Vec::with_capacity(g);
    for j in 0..g {
        let mut rng = stream_rng(
            cfg.seed,
            &[label::REASONER_PHASE, iteration as u64, step, group_idx, j as u64],
        );
        let seq = sample_with_text(&snapshot.params, &ctx, vocab, &mut rng)?;
        let canon = super::extract_answer(seq.payload(), vocab);
        rewards.push(reasoner_reward(&canon, &sample.pseudo_label));
        answers.push(canon);
        sequences.push(seq);
    }
    let group = RolloutGroup::new(ctx, sequences, rewards.clone(), cfg.reasoner.eps_norm, snapshot);
    let record = ReasonerGroupRecord {
        iteration,
        step,
        scene_id: sample.scene_id,
        question_text: sample.question.text.clone(),
        pseudo_label: sample.pseudo_label.clone(),
        eps_norm: cfg.reasoner.eps_norm,
        answers,
        rewards,
        advantages: group.advantages.clone(),
    };
    Ok((group, record))
}

/// One reasoner training phase over the curated dataset with the questioner
/// frozen. An empty dataset skips the phase and leaves the reasoner
/// untouched.
#[allow(clippy::too_many_arguments)]
pub fn train_reasoner_phase(
    reasoner: &mut PolicyParams,
    opt: &mut AdamState,
    r_step: &mut u64,
    dataset: &[CuratedSample],
    scenes: &[Scene],
    vocab: &Vocab,
    cfg: &RunConfig,
    iteration: usize,
    transcript: &mut Vec<TranscriptRecord>,
) -> Result<ReasonerPhaseStats> {
    if dataset.is_empty() {
        eprintln!("iteration {iteration}: curated dataset empty, reasoner phase skipped");
        return Ok(ReasonerPhaseStats {
            skipped: true,
            mean_binary_reward: 0.0,
            steps: Vec::new(),
        });
    }
    let by_id: HashMap<u64, &Scene> = scenes.iter().map(|s| (s.scene_id, s)).collect();
    let hyper = cfg.reasoner.grpo_hyper(cfg.curation.m_samples);
    let mut steps = Vec::with_capacity(cfg.reasoner.steps);
    let (mut sum_reward, mut n_items) = (0.0, 0usize);

    for step_idx in 0..cfg.reasoner.steps {
        let snapshot = reasoner.snapshot(*r_step);
        let batch: Vec<(u64, &CuratedSample)> = (0..cfg.reasoner.batch)
            .map(|k| {
                let idx = (step_idx * cfg.reasoner.batch + k) % dataset.len();
                (k as u64, &dataset[idx])
            })
            .collect();
        let built: Vec<(RolloutGroup, ReasonerGroupRecord)> = batch
            .par_iter()
            .map(|(k, sample)| {
                build_answer_group(
                    &snapshot,
                    sample,
                    by_id[&sample.scene_id],
                    vocab,
                    cfg,
                    iteration,
                    *r_step,
                    *k,
                )
            })
            .collect::<Result<_>>()?;
        let mut groups = Vec::with_capacity(built.len());
        for (group, record) in built {
            sum_reward += record.rewards.iter().sum::<f64>();
            n_items += record.rewards.len();
            transcript.push(TranscriptRecord::ReasonerGroup(record));
            groups.push(group);
        }
        let stats = grpo_step(reasoner, &snapshot, &groups, &hyper, opt)?;
        *r_step += 1;
        steps.push(StepStats {
            step: *r_step - 1,
            grpo: stats,
            difficulty: None,
            validity_rate: None,
        });
    }

    Ok(ReasonerPhaseStats {
        skipped: false,
        mean_binary_reward: sum_reward / n_items as f64,
        steps,
    })
}
