//! Base-model construction: a brief supervised warm-up standing in for the
//! pretrained backbone both roles start from.
//!
//! Question examples (grammar-enumerated ASTs) teach the tag structure and
//! question surface; answer examples pair a question with either the oracle
//! witness trace (probability `answer_grounding`) — the supporting cells in
//! row-major order followed by the answer token — or a uniformly random bare
//! answer token. The trace gives decoding genuine step-by-step structure:
//! where the model is unsure, sampled responses disagree through their
//! witness paths, so majority votes carry more information than a single
//! greedy decode — the gap self-play later distills back into the policy.
//! Where it has mastered a question the canonical trace makes its samples
//! agree, so confidence separates mastered from unmastered questions.
//! Oracle labels appear only here and in offline evaluation, never inside
//! the self-play loop.

use super::{questioner_context, reasoner_context};
use crate::config::RunConfig;
use crate::error::Result;
use crate::microworld::{enumerate_asts, oracle_trace, Grammar, ScanOrder, Scene};
use crate::policy::{apply_update, nll_grad, AdamState, PolicyParams, Tensors};
use crate::rngutil::{label, stream_rng};
use crate::vocab::{Vocab, END_TOKEN};
use rand::Rng;

pub fn pretrain_base(
    cfg: &RunConfig,
    scenes: &[Scene],
    vocab: &Vocab,
    grammar: &Grammar,
) -> Result<PolicyParams> {
    let dims = cfg.policy_dims();
    let mut params = PolicyParams::init(dims, cfg.seed);
    let mut opt = AdamState::new(dims);
    let asts = enumerate_asts(grammar);
    let encoded: Vec<Vec<usize>> = asts
        .iter()
        .map(|a| vocab.encode_question(&a.serialize()).expect("grammar output encodes"))
        .collect();
    let answer_tokens = vocab.answer_tokens();
    // Sample kind-balanced rather than uniformly over ASTs: raw enumeration is
    // dominated by one kind, which would skew both roles' starting points.
    let mut kind_names: Vec<&str> = Vec::new();
    let mut kind_pools: Vec<Vec<usize>> = Vec::new();
    for (i, ast) in asts.iter().enumerate() {
        match kind_names.iter().position(|k| *k == ast.kind_name()) {
            Some(p) => kind_pools[p].push(i),
            None => {
                kind_names.push(ast.kind_name());
                kind_pools.push(vec![i]);
            }
        }
    }

    for step in 0..cfg.pretrain.steps {
        let mut rng = stream_rng(cfg.seed, &[label::PRETRAIN, step as u64]);
        let mut grads = Tensors::zeros(dims);
        let w = 1.0 / cfg.pretrain.batch as f64;
        for _ in 0..cfg.pretrain.batch {
            let scene = &scenes[rng.gen_range(0..scenes.len())];
            let pool = &kind_pools[rng.gen_range(0..kind_pools.len())];
            let q = pool[rng.gen_range(0..pool.len())];
            let tokens = &encoded[q];
            if rng.gen::<f64>() < 0.5 {
                // questioner-style example: emit a well-formed question
                let ctx = questioner_context(scene, vocab);
                nll_grad(&params, &ctx, tokens, w, &mut grads);
            } else {
                // reasoner-style example: answer the question
                let payload = &tokens[..tokens.len() - 1]; // strip end marker
                let ctx = reasoner_context(scene, payload, vocab);
                let target: Vec<usize> = if rng.gen::<f64>() < cfg.pretrain.answer_grounding {
                    oracle_trace(scene, &asts[q], ScanOrder::RowMajor)
                        .iter()
                        .map(|t| vocab.lookup(t).expect("trace tokens are in vocab"))
                        .chain(std::iter::once(END_TOKEN))
                        .collect()
                } else {
                    vec![answer_tokens[rng.gen_range(0..answer_tokens.len())], END_TOKEN]
                };
                nll_grad(&params, &ctx, &target, w, &mut grads);
            }
        }
        apply_update(&mut params.tensors, &grads, &mut opt, cfg.pretrain.lr);
    }
    Ok(params)
}
