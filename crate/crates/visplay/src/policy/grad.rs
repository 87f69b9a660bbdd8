//! Hand-derived backpropagation through the policy.
//!
//! Three gradient accumulators share one forward/backward core:
//! - sequence log-probability (surrogate term of the GRPO loss),
//! - exact per-step categorical KL against a frozen snapshot,
//! - plain negative log-likelihood (base-model construction).
//!
//! Each accumulates `coef * d(quantity)/d(params)` into a gradient buffer and
//! returns the quantity itself, so callers compose losses without touching
//! the recurrence math.

use super::forward::{context_vec, hidden_step, log_softmax, logits, softmax};
use super::{PolicyParams, Tensors};
use crate::vocab::END_TOKEN;

struct SeqForward {
    /// Hidden state after each step (hs[s] produced the step-s logits).
    hs: Vec<Vec<f64>>,
    /// Input token at each step (END as the start symbol).
    prevs: Vec<usize>,
    /// Temperature-1 softmax at each step.
    probs: Vec<Vec<f64>>,
}

fn run_forward(t: &Tensors, ctx_vec: &[f64], tokens: &[usize]) -> SeqForward {
    let mut hs = Vec::with_capacity(tokens.len());
    let mut prevs = Vec::with_capacity(tokens.len());
    let mut probs = Vec::with_capacity(tokens.len());
    let mut h = vec![0.0; t.dims.hidden];
    let mut prev = END_TOKEN;
    for &tok in tokens {
        h = hidden_step(t, &h, prev, ctx_vec);
        probs.push(softmax(&logits(t, &h)));
        hs.push(h.clone());
        prevs.push(prev);
        prev = tok;
    }
    SeqForward { hs, prevs, probs }
}

/// Backward pass: given per-step dL/dlogits, accumulate dL/dparams.
fn run_backward(
    t: &Tensors,
    ctx: &[f64],
    fwd: &SeqForward,
    dlogits: &[Vec<f64>],
    grads: &mut Tensors,
) {
    let (d, v) = (t.dims.hidden, t.dims.vocab);
    let out = t.out();
    let mix = t.mix();
    let steps = fwd.hs.len();

    let [g_embed, g_ctx, g_mix, g_bh, g_out, g_bout] = grads.block_ranges();
    // da summed over steps feeds the (constant) context projection gradient.
    let mut da_sum = vec![0.0; d];
    let mut dh_carry = vec![0.0; d];

    for s in (0..steps).rev() {
        let h = &fwd.hs[s];
        let dl = &dlogits[s];

        // output head
        for j in 0..d {
            if h[j] != 0.0 {
                let row = &mut grads.data[g_out.start + j * v..g_out.start + (j + 1) * v];
                for k in 0..v {
                    row[k] += h[j] * dl[k];
                }
            }
        }
        for k in 0..v {
            grads.data[g_bout.start + k] += dl[k];
        }

        // dh = out * dl + carry from step s+1
        let mut dh = std::mem::take(&mut dh_carry);
        for j in 0..d {
            let row = &out[j * v..(j + 1) * v];
            let mut acc = 0.0;
            for k in 0..v {
                acc += row[k] * dl[k];
            }
            dh[j] += acc;
        }

        // through tanh
        let mut da = vec![0.0; d];
        for j in 0..d {
            da[j] = dh[j] * (1.0 - h[j] * h[j]);
            da_sum[j] += da[j];
        }

        // recurrence and embedding
        let h_prev: &[f64] = if s == 0 { &[] } else { &fwd.hs[s - 1] };
        if s > 0 {
            for k in 0..d {
                if h_prev[k] != 0.0 {
                    let row = &mut grads.data[g_mix.start + k * d..g_mix.start + (k + 1) * d];
                    for j in 0..d {
                        row[j] += h_prev[k] * da[j];
                    }
                }
            }
        }
        let prev = fwd.prevs[s];
        {
            let row = &mut grads.data[g_embed.start + prev * d..g_embed.start + (prev + 1) * d];
            for j in 0..d {
                row[j] += da[j];
            }
        }
        for j in 0..d {
            grads.data[g_bh.start + j] += da[j];
        }

        // carry to previous hidden state
        dh_carry = vec![0.0; d];
        if s > 0 {
            for k in 0..d {
                let row = &mix[k * d..(k + 1) * d];
                let mut acc = 0.0;
                for j in 0..d {
                    acc += row[j] * da[j];
                }
                dh_carry[k] = acc;
            }
        }
    }

    for (i, &x) in ctx.iter().enumerate() {
        if x != 0.0 {
            let row = &mut grads.data[g_ctx.start + i * d..g_ctx.start + (i + 1) * d];
            for j in 0..d {
                row[j] += x * da_sum[j];
            }
        }
    }
}

/// Accumulates `coef * d log pi(tokens | ctx) / d params` and returns the
/// log-probability.
pub fn accumulate_logprob_grad(
    params: &PolicyParams,
    ctx: &[f64],
    tokens: &[usize],
    coef: f64,
    grads: &mut Tensors,
) -> f64 {
    let t = &params.tensors;
    let ctx_vec = context_vec(t, ctx);
    let fwd = run_forward(t, &ctx_vec, tokens);
    let mut logprob = 0.0;
    let mut dlogits = Vec::with_capacity(tokens.len());
    for (s, &tok) in tokens.iter().enumerate() {
        let p = &fwd.probs[s];
        logprob += p[tok].ln();
        let mut dl: Vec<f64> = p.iter().map(|&pk| -coef * pk).collect();
        dl[tok] += coef;
        dlogits.push(dl);
    }
    if coef != 0.0 {
        run_backward(t, ctx, &fwd, &dlogits, grads);
    }
    logprob
}

/// Accumulates `weight * d NLL / d params` where NLL = -log pi(tokens | ctx);
/// returns the NLL. Used for supervised base-model construction.
pub fn nll_grad(
    params: &PolicyParams,
    ctx: &[f64],
    tokens: &[usize],
    weight: f64,
    grads: &mut Tensors,
) -> f64 {
    -accumulate_logprob_grad(params, ctx, tokens, -weight, grads)
}

/// Accumulates `weight * d/dparams sum_s KL(pi_params(.|prefix_s) || pi_snapshot)`
/// along the decoding steps of `tokens`, and returns the summed per-step KL.
///
/// dKL(p||q)/dz_j = p_j (ln p_j - ln q_j - KL) for softmax logits z.
pub fn accumulate_kl_grad(
    params: &PolicyParams,
    snapshot: &PolicyParams,
    ctx: &[f64],
    tokens: &[usize],
    weight: f64,
    grads: &mut Tensors,
) -> f64 {
    let t = &params.tensors;
    let ctx_vec = context_vec(t, ctx);
    let fwd = run_forward(t, &ctx_vec, tokens);

    // old-policy distributions along the same prefix
    let snap_t = &snapshot.tensors;
    let snap_ctx_vec = context_vec(snap_t, ctx);
    let mut q_h = vec![0.0; snap_t.dims.hidden];
    let mut prev = END_TOKEN;
    let mut kl_sum = 0.0;
    let mut dlogits = Vec::with_capacity(tokens.len());
    for (s, &tok) in tokens.iter().enumerate() {
        q_h = hidden_step(snap_t, &q_h, prev, &snap_ctx_vec);
        let log_q = log_softmax(&logits(snap_t, &q_h));
        let p = &fwd.probs[s];
        let mut kl = 0.0;
        for (k, &pk) in p.iter().enumerate() {
            if pk > 0.0 {
                kl += pk * (pk.ln() - log_q[k]);
            }
        }
        kl_sum += kl;
        let dl: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(k, &pk)| weight * pk * (pk.ln() - log_q[k] - kl))
            .collect();
        dlogits.push(dl);
        prev = tok;
    }
    if weight != 0.0 {
        run_backward(t, ctx, &fwd, &dlogits, grads);
    }
    kl_sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{PolicyDims, PolicyParams};
    use crate::rngutil::stream_rng;
    use rand::Rng;

    fn dims() -> PolicyDims {
        PolicyDims {
            vocab: 5,
            hidden: 3,
            ctx: 4,
            max_len: 6,
        }
    }

    fn fd_check<F: Fn(&PolicyParams) -> f64>(
        params: &PolicyParams,
        analytic: &Tensors,
        f: F,
        tol: f64,
    ) {
        let step = 1e-5;
        for i in 0..params.tensors.data.len() {
            let mut plus = params.clone();
            plus.tensors.data[i] += step;
            let mut minus = params.clone();
            minus.tensors.data[i] -= step;
            let fd = (f(&plus) - f(&minus)) / (2.0 * step);
            let a = analytic.data[i];
            let denom = a.abs().max(fd.abs()).max(1e-6);
            assert!(
                (a - fd).abs() / denom < tol,
                "param {i}: analytic {a} vs fd {fd}"
            );
        }
    }

    #[test]
    fn logprob_gradient_matches_finite_differences() {
        for seed in 0..5u64 {
            let p = PolicyParams::init(dims(), seed);
            let mut rng = stream_rng(seed, &[99]);
            let ctx: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let tokens = vec![1, 3, 2, 0];
            let mut g = Tensors::zeros(dims());
            accumulate_logprob_grad(&p, &ctx, &tokens, 1.0, &mut g);
            fd_check(&p, &g, |q| sequence_logprob_of(q, &ctx, &tokens), 1e-4);
        }
    }

    fn sequence_logprob_of(p: &PolicyParams, ctx: &[f64], tokens: &[usize]) -> f64 {
        crate::policy::sequence_logprob(p, ctx, tokens)
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        for seed in 0..5u64 {
            let p = PolicyParams::init(dims(), seed);
            let snap = PolicyParams::init(dims(), seed + 100);
            let mut rng = stream_rng(seed, &[7]);
            let ctx: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let tokens = vec![2, 4, 1];
            let mut g = Tensors::zeros(dims());
            let kl = accumulate_kl_grad(&p, &snap, &ctx, &tokens, 1.0, &mut g);
            assert!(kl >= 0.0);
            let snap2 = snap.clone();
            fd_check(
                &p,
                &g,
                move |q| {
                    let mut dummy = Tensors::zeros(dims());
                    accumulate_kl_grad(q, &snap2, &ctx, &tokens, 0.0, &mut dummy)
                },
                1e-4,
            );
        }
    }

    #[test]
    fn kl_with_itself_is_zero() {
        let p = PolicyParams::init(dims(), 3);
        let ctx = vec![0.3; 4];
        let mut g = Tensors::zeros(dims());
        let kl = accumulate_kl_grad(&p, &p, &ctx, &[1, 2, 3], 1.0, &mut g);
        assert!(kl.abs() < 1e-12);
        assert!(g.max_abs() < 1e-12);
    }

    #[test]
    fn nll_is_negative_logprob() {
        let p = PolicyParams::init(dims(), 4);
        let ctx = vec![0.1; 4];
        let tokens = vec![1, 2, 0];
        let mut g1 = Tensors::zeros(dims());
        let nll = nll_grad(&p, &ctx, &tokens, 1.0, &mut g1);
        let lp = sequence_logprob_of(&p, &ctx, &tokens);
        assert!((nll + lp).abs() < 1e-12);
    }
}
