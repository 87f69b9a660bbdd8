//! Forward computation: sampling, exact sequence log-probabilities, and full
//! per-step categorical distributions.

use super::{PolicyParams, Tensors};
use crate::error::{Result, VisplayError};
use crate::vocab::END_TOKEN;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// An ordered token sequence with its log-probability metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<usize>,
    pub text: String,
    pub logprob_sum: f64,
    pub per_step_logprobs: Vec<f64>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens without the trailing end marker; the payload used for BLEU and
    /// bag-of-tokens encodings.
    pub fn payload(&self) -> &[usize] {
        match self.tokens.split_last() {
            Some((&last, rest)) if last == END_TOKEN => rest,
            _ => &self.tokens,
        }
    }
}

/// Precomputed context projection: ctx_vec[j] = sum_i ctx[i] * W_ctx[i][j].
pub(super) fn context_vec(t: &Tensors, ctx: &[f64]) -> Vec<f64> {
    let d = t.dims.hidden;
    assert_eq!(ctx.len(), t.dims.ctx, "context length mismatch");
    let w = t.ctx_proj();
    let mut v = vec![0.0; d];
    for (i, &x) in ctx.iter().enumerate() {
        if x != 0.0 {
            for j in 0..d {
                v[j] += x * w[i * d + j];
            }
        }
    }
    v
}

/// One recurrence step: h = tanh(h_prev * W_mix + embed[prev] + ctx_vec + b_h).
pub(super) fn hidden_step(t: &Tensors, h_prev: &[f64], prev_tok: usize, ctx_vec: &[f64]) -> Vec<f64> {
    let d = t.dims.hidden;
    let mix = t.mix();
    let emb = &t.embed()[prev_tok * d..(prev_tok + 1) * d];
    let b_h = t.b_h();
    let mut pre = vec![0.0; d];
    for j in 0..d {
        pre[j] = emb[j] + ctx_vec[j] + b_h[j];
    }
    for (k, &h) in h_prev.iter().enumerate() {
        if h != 0.0 {
            for j in 0..d {
                pre[j] += h * mix[k * d + j];
            }
        }
    }
    pre.iter_mut().for_each(|x| *x = x.tanh());
    pre
}

pub(super) fn logits(t: &Tensors, h: &[f64]) -> Vec<f64> {
    let (d, v) = (t.dims.hidden, t.dims.vocab);
    let out = t.out();
    let mut l = t.b_out().to_vec();
    for (j, &hj) in h.iter().enumerate().take(d) {
        if hj != 0.0 {
            for k in 0..v {
                l[k] += hj * out[j * v + k];
            }
        }
    }
    l
}

/// Log-softmax, numerically stable.
pub(super) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&x| x - log_z).collect()
}

pub(super) fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).iter().map(|&x| x.exp()).collect()
}

fn check_finite(logits: &[f64], step: usize) -> Result<()> {
    if logits.iter().any(|x| !x.is_finite()) {
        Err(VisplayError::NonFiniteLogits { step })
    } else {
        Ok(())
    }
}

/// Samples a sequence token by token at the given temperature. Recorded
/// per-step log-probabilities are those of the sampled tokens under the
/// sampling distribution. Deterministic given the rng state. Stops at the
/// end token or max_len.
pub fn sample_sequence<R: Rng>(
    params: &PolicyParams,
    ctx: &[f64],
    temperature: f64,
    rng: &mut R,
) -> Result<TokenSequence> {
    assert!(temperature > 0.0, "temperature must be positive");
    let t = &params.tensors;
    let ctx_vec = context_vec(t, ctx);
    let mut h = vec![0.0; t.dims.hidden];
    let mut prev = END_TOKEN;
    let mut tokens = Vec::new();
    let mut lps = Vec::new();
    for step in 0..t.dims.max_len {
        h = hidden_step(t, &h, prev, &ctx_vec);
        let l = logits(t, &h);
        check_finite(&l, step)?;
        let scaled: Vec<f64> = l.iter().map(|&x| x / temperature).collect();
        let lsm = log_softmax(&scaled);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut tok = t.dims.vocab - 1;
        for (k, &lp) in lsm.iter().enumerate() {
            acc += lp.exp();
            if u < acc {
                tok = k;
                break;
            }
        }
        tokens.push(tok);
        lps.push(lsm[tok]);
        prev = tok;
        if tok == END_TOKEN {
            break;
        }
    }
    Ok(TokenSequence {
        tokens,
        text: String::new(),
        logprob_sum: lps.iter().sum(),
        per_step_logprobs: lps,
    })
}

/// Greedy (argmax) decoding; deterministic, no rng. Recorded logprobs are the
/// temperature-1 log-probabilities of the chosen tokens.
pub fn greedy_sequence(params: &PolicyParams, ctx: &[f64]) -> Result<TokenSequence> {
    let t = &params.tensors;
    let ctx_vec = context_vec(t, ctx);
    let mut h = vec![0.0; t.dims.hidden];
    let mut prev = END_TOKEN;
    let mut tokens = Vec::new();
    let mut lps = Vec::new();
    for step in 0..t.dims.max_len {
        h = hidden_step(t, &h, prev, &ctx_vec);
        let l = logits(t, &h);
        check_finite(&l, step)?;
        let lsm = log_softmax(&l);
        let tok = lsm
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(k, _)| k)
            .unwrap();
        tokens.push(tok);
        lps.push(lsm[tok]);
        prev = tok;
        if tok == END_TOKEN {
            break;
        }
    }
    Ok(TokenSequence {
        tokens,
        text: String::new(),
        logprob_sum: lps.iter().sum(),
        per_step_logprobs: lps,
    })
}

/// Exact log pi(seq | ctx) at temperature 1.
pub fn sequence_logprob(params: &PolicyParams, ctx: &[f64], tokens: &[usize]) -> f64 {
    let t = &params.tensors;
    let ctx_vec = context_vec(t, ctx);
    let mut h = vec![0.0; t.dims.hidden];
    let mut prev = END_TOKEN;
    let mut sum = 0.0;
    for &tok in tokens {
        h = hidden_step(t, &h, prev, &ctx_vec);
        let lsm = log_softmax(&logits(t, &h));
        sum += lsm[tok];
        prev = tok;
    }
    sum
}

/// Full categorical distribution at each decoding step along a prefix.
/// Returns prefix.len() probability vectors; entry s is the distribution
/// from which prefix[s] was drawn.
pub fn step_distributions(params: &PolicyParams, ctx: &[f64], prefix: &[usize]) -> Vec<Vec<f64>> {
    let t = &params.tensors;
    let ctx_vec = context_vec(t, ctx);
    let mut h = vec![0.0; t.dims.hidden];
    let mut prev = END_TOKEN;
    let mut dists = Vec::with_capacity(prefix.len());
    for &tok in prefix {
        h = hidden_step(t, &h, prev, &ctx_vec);
        dists.push(softmax(&logits(t, &h)));
        prev = tok;
    }
    dists
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyDims;
    use crate::rngutil::stream_rng;

    fn dims() -> PolicyDims {
        PolicyDims {
            vocab: 6,
            hidden: 4,
            ctx: 5,
            max_len: 8,
        }
    }

    fn zero_policy() -> PolicyParams {
        PolicyParams {
            init_seed: 0,
            tensors: Tensors::zeros(dims()),
        }
    }

    #[test]
    fn zero_weights_give_uniform_distributions() {
        let p = zero_policy();
        let ctx = vec![0.3; 5];
        let dists = step_distributions(&p, &ctx, &[1, 2, 3]);
        for d in dists {
            for &x in &d {
                assert!((x - 1.0 / 6.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn distributions_are_probability_vectors() {
        for seed in 0..20u64 {
            let p = PolicyParams::init(dims(), seed);
            let ctx = vec![0.5; 5];
            for d in step_distributions(&p, &ctx, &[0, 1, 2, 3, 4]) {
                assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(d.iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn sampling_deterministic_given_rng_state() {
        let p = PolicyParams::init(dims(), 9);
        let ctx = vec![0.1, 0.2, 0.3, 0.4, 0.5];
        let a = sample_sequence(&p, &ctx, 1.0, &mut stream_rng(1, &[2])).unwrap();
        let b = sample_sequence(&p, &ctx, 1.0, &mut stream_rng(1, &[2])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn logprob_sum_matches_per_step() {
        let p = PolicyParams::init(dims(), 9);
        let ctx = vec![0.1; 5];
        let s = sample_sequence(&p, &ctx, 1.0, &mut stream_rng(3, &[4])).unwrap();
        let sum: f64 = s.per_step_logprobs.iter().sum();
        assert!((s.logprob_sum - sum).abs() < 1e-12);
        // At temperature 1 the recorded sum equals the exact sequence logprob.
        let exact = sequence_logprob(&p, &ctx, &s.tokens);
        assert!((s.logprob_sum - exact).abs() < 1e-9);
        assert!(s.logprob_sum.exp() > 0.0 && s.logprob_sum.exp() <= 1.0);
    }

    #[test]
    fn greedy_is_argmax_and_deterministic() {
        let p = PolicyParams::init(dims(), 11);
        let ctx = vec![0.7; 5];
        let a = greedy_sequence(&p, &ctx).unwrap();
        let b = greedy_sequence(&p, &ctx).unwrap();
        assert_eq!(a, b);
        let dists = step_distributions(&p, &ctx, &a.tokens);
        for (s, d) in dists.iter().enumerate() {
            let argmax = d
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(a.tokens[s], argmax);
        }
    }

    #[test]
    fn uniform_policy_logprob_is_neg_l_ln_v() {
        let p = zero_policy();
        let ctx = vec![0.0; 5];
        let lp = sequence_logprob(&p, &ctx, &[1, 2, 3]);
        assert!((lp + 3.0 * (6.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn single_token_vocab_forced_sequence() {
        let d = PolicyDims {
            vocab: 1,
            hidden: 3,
            ctx: 2,
            max_len: 4,
        };
        let p = PolicyParams::init(d, 5);
        let lp = sequence_logprob(&p, &[0.1, 0.2], &[0]);
        assert_eq!(lp, 0.0);
    }

    #[test]
    fn uniform_logit_sampling_frequencies_chi_square() {
        // 10,000 draws of the first token from a zero-weight policy: each of
        // the 6 tokens should land within 3 sigma of uniform.
        let p = zero_policy();
        let ctx = vec![0.0; 5];
        let mut counts = [0usize; 6];
        let mut rng = stream_rng(123, &[0]);
        let n = 10_000;
        for _ in 0..n {
            let s = sample_sequence(&p, &ctx, 1.0, &mut rng).unwrap();
            counts[s.tokens[0]] += 1;
        }
        let expect = n as f64 / 6.0;
        let sigma = (n as f64 * (1.0 / 6.0) * (5.0 / 6.0)).sqrt();
        for &c in &counts {
            assert!(
                (c as f64 - expect).abs() < 3.0 * sigma,
                "count {c} outside 3 sigma of {expect}"
            );
        }
    }

    #[test]
    fn sequence_terminates_properly() {
        let p = PolicyParams::init(dims(), 2);
        let ctx = vec![0.2; 5];
        for i in 0..50u64 {
            let s = sample_sequence(&p, &ctx, 1.0, &mut stream_rng(7, &[i])).unwrap();
            assert!(s.len() <= 8);
            if s.len() < 8 {
                assert_eq!(*s.tokens.last().unwrap(), END_TOKEN);
            }
        }
    }
}
