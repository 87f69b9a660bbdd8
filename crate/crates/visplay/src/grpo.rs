//! Group-relative advantage normalization and the clipped, KL-regularized
//! policy loss, shared by both roles.

use crate::error::{Result, VisplayError};
use crate::policy::{
    accumulate_kl_grad, accumulate_logprob_grad, apply_update, sequence_logprob, AdamState,
    PolicyParams, PolicySnapshot, Tensors, TokenSequence,
};
use serde::{Deserialize, Serialize};

/// Log-ratio clamp before exponentiation; response-level ratios of long
/// sequences overflow otherwise.
pub const LOG_RATIO_CLAMP: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrpoHyper {
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub eps_norm: f64,
    pub lr: f64,
    pub group_size: usize,
    pub reasoner_samples: usize,
}

impl Default for GrpoHyper {
    fn default() -> Self {
        GrpoHyper {
            clip_eps: 0.2,
            kl_beta: 0.01,
            eps_norm: 1e-6,
            lr: 1e-3,
            group_size: 8,
            reasoner_samples: 8,
        }
    }
}

/// One group of sequences sampled from a single context, with rewards and
/// group-normalized advantages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub context: Vec<f64>,
    pub sequences: Vec<TokenSequence>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub old_logprobs: Vec<f64>,
}

impl RolloutGroup {
    pub fn new(
        context: Vec<f64>,
        sequences: Vec<TokenSequence>,
        rewards: Vec<f64>,
        eps_norm: f64,
        snapshot: &PolicySnapshot,
    ) -> Self {
        let advantages = normalize_advantages(&rewards, eps_norm);
        let old_logprobs = sequences
            .iter()
            .map(|s| sequence_logprob(&snapshot.params, &context, &s.tokens))
            .collect();
        RolloutGroup {
            context,
            sequences,
            rewards,
            advantages,
            old_logprobs,
        }
    }
}

/// A_i = (r_i - mean) / (population std + eps_norm).
pub fn normalize_advantages(rewards: &[f64], eps_norm: f64) -> Vec<f64> {
    let g = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / g;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g;
    let denom = var.sqrt() + eps_norm;
    rewards.iter().map(|r| (r - mean) / denom).collect()
}

/// Per-item surrogate term: min(rho*A, clip(rho, 1-eps, 1+eps)*A). Flat in
/// rho beyond 1+eps for A > 0 and below 1-eps for A < 0.
pub fn surrogate_term(rho: f64, adv: f64, clip_eps: f64) -> f64 {
    let clipped = rho.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    (rho * adv).min(clipped * adv)
}

/// Per-step statistics appended to the metrics CSV.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct GrpoStats {
    pub loss: f64,
    pub mean_reward: f64,
    pub mean_advantage_abs: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub kl: f64,
}

/// Loss and analytic gradient over a batch of rollout groups.
///
/// loss = mean over groups of
///   -(1/G) sum_i min(rho_i A_i, clip(rho_i) A_i) + beta * KL_group
/// where rho_i = exp(clamped log-ratio) against the rollout policy (whose
/// log-probs are stored in the group) and KL_group is the exact categorical
/// KL(pi || pi_old) against `reference` — the pre-update policy snapshotted
/// at the start of the phase — averaged over all decoding steps of the
/// group's sequences. Anchoring the KL to the phase-start policy (rather
/// than the per-step rollout policy, against which a single-update KL is
/// identically zero) is what gives beta teeth.
pub fn loss_and_grad(
    params: &PolicyParams,
    reference: &PolicySnapshot,
    groups: &[RolloutGroup],
    hyper: &GrpoHyper,
) -> Result<(f64, Tensors, GrpoStats)> {
    assert!(!groups.is_empty(), "empty batch");
    let mut grads = Tensors::zeros(params.dims());
    let gw = 1.0 / groups.len() as f64;
    let mut loss = 0.0;
    let mut stats = GrpoStats::default();
    let mut n_items = 0usize;
    let mut n_clipped = 0usize;

    for group in groups {
        let g = group.sequences.len() as f64;
        let mut surr = 0.0;
        for (i, seq) in group.sequences.iter().enumerate() {
            let adv = group.advantages[i];
            let lp_new = sequence_logprob(params, &group.context, &seq.tokens);
            let log_diff = (lp_new - group.old_logprobs[i]).clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP);
            let rho = log_diff.exp();
            let s1 = rho * adv;
            let s2 = rho.clamp(1.0 - hyper.clip_eps, 1.0 + hyper.clip_eps) * adv;
            let obj = s1.min(s2);
            surr += obj;
            stats.mean_ratio += rho;
            stats.mean_reward += group.rewards[i];
            stats.mean_advantage_abs += adv.abs();
            n_items += 1;
            if s2 < s1 {
                n_clipped += 1;
            }
            // d obj / d log pi: active only on the unclipped, unclamped branch
            let coef = if s1 <= s2 && log_diff.abs() < LOG_RATIO_CLAMP {
                rho * adv
            } else {
                0.0
            };
            let total = -(gw / g) * coef;
            if total != 0.0 {
                accumulate_logprob_grad(params, &group.context, &seq.tokens, total, &mut grads);
            }
        }
        loss += gw * (-surr / g);

        if hyper.kl_beta != 0.0 {
            let total_steps: usize = group.sequences.iter().map(|s| s.len()).sum();
            if total_steps > 0 {
                let w = gw * hyper.kl_beta / total_steps as f64;
                let mut kl_sum = 0.0;
                for seq in &group.sequences {
                    kl_sum += accumulate_kl_grad(
                        params,
                        &reference.params,
                        &group.context,
                        &seq.tokens,
                        w,
                        &mut grads,
                    );
                }
                let kl_group = kl_sum / total_steps as f64;
                loss += gw * hyper.kl_beta * kl_group;
                stats.kl += gw * kl_group;
            }
        }
    }

    if !loss.is_finite() {
        return Err(VisplayError::NonFiniteLoss(format!("loss = {loss}")));
    }
    if !grads.all_finite() {
        return Err(VisplayError::NonFiniteGradient(
            "non-finite entries in policy gradient".into(),
        ));
    }
    let n = n_items as f64;
    stats.loss = loss;
    stats.mean_ratio /= n;
    stats.mean_reward /= n;
    stats.mean_advantage_abs /= n;
    stats.clip_fraction = n_clipped as f64 / n;
    Ok((loss, grads, stats))
}

/// Convenience alias matching the policy-side contract: the GRPO loss and its
/// gradient through the policy's computation graph.
pub fn loss_gradient(
    params: &PolicyParams,
    reference: &PolicySnapshot,
    batch: &[RolloutGroup],
    hyper: &GrpoHyper,
) -> Result<(f64, Tensors)> {
    let (loss, grads, _) = loss_and_grad(params, reference, batch, hyper)?;
    Ok((loss, grads))
}

/// Loss only (used by finite-difference oracles in tests).
pub fn grpo_loss(
    params: &PolicyParams,
    reference: &PolicySnapshot,
    groups: &[RolloutGroup],
    hyper: &GrpoHyper,
) -> Result<f64> {
    loss_and_grad(params, reference, groups, hyper).map(|(l, _, _)| l)
}

/// Single gradient step on the mean loss over groups.
pub fn grpo_step(
    params: &mut PolicyParams,
    reference: &PolicySnapshot,
    groups: &[RolloutGroup],
    hyper: &GrpoHyper,
    optimizer: &mut AdamState,
) -> Result<GrpoStats> {
    let (_, grads, stats) = loss_and_grad(params, reference, groups, hyper)?;
    apply_update(&mut params.tensors, &grads, optimizer, hyper.lr);
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{sample_sequence, PolicyDims};
    use crate::rngutil::stream_rng;

    fn dims() -> PolicyDims {
        PolicyDims {
            vocab: 6,
            hidden: 4,
            ctx: 5,
            max_len: 8,
        }
    }

    fn make_group(
        params: &PolicyParams,
        snapshot: &PolicySnapshot,
        rewards: Vec<f64>,
        seed: u64,
    ) -> RolloutGroup {
        let ctx = vec![0.2, -0.1, 0.4, 0.0, 0.3];
        let mut rng = stream_rng(seed, &[1]);
        let seqs: Vec<_> = (0..rewards.len())
            .map(|_| sample_sequence(&snapshot.params, &ctx, 1.0, &mut rng).unwrap())
            .collect();
        let _ = params;
        RolloutGroup::new(ctx, seqs, rewards, 1e-6, snapshot)
    }

    #[test]
    fn advantage_example_exact() {
        let a = normalize_advantages(&[1.0, 0.0, 0.0, 1.0], 0.0);
        assert_eq!(a, vec![1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn advantage_all_equal_zero() {
        let a = normalize_advantages(&[0.7, 0.7, 0.7], 1e-6);
        assert!(a.iter().all(|&x| x.abs() < 1e-9));
    }

    #[test]
    fn advantage_spreadsheet_recompute() {
        // mean = 0.5, population var = ((0.3)^2 + (0.3)^2 + 0) / 3 = 0.06,
        // std = sqrt(0.06)
        let r = [0.2, 0.8, 0.5];
        let a = normalize_advantages(&r, 0.0);
        let std = 0.06f64.sqrt();
        assert!((a[0] - (-0.3 / std)).abs() < 1e-12);
        assert!((a[1] - (0.3 / std)).abs() < 1e-12);
        assert!(a[2].abs() < 1e-12);
    }

    #[test]
    fn advantage_mean_property() {
        let mut rng = stream_rng(0, &[0]);
        use rand::Rng;
        for _ in 0..200 {
            let g = rng.gen_range(2..=16);
            let rewards: Vec<f64> = (0..g).map(|_| rng.gen_range(0.0..1.0)).collect();
            let a = normalize_advantages(&rewards, 1e-6);
            let mean = a.iter().sum::<f64>() / g as f64;
            assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn loss_at_snapshot_is_minus_mean_advantage() {
        let p = PolicyParams::init(dims(), 3);
        let snap = p.snapshot(0);
        let hyper = GrpoHyper {
            kl_beta: 0.0,
            ..GrpoHyper::default()
        };
        let group = make_group(&p, &snap, vec![1.0, 0.0, 0.0, 1.0], 5);
        let mean_adv = group.advantages.iter().sum::<f64>() / 4.0;
        let loss = grpo_loss(&p, &snap, &[group.clone()], &hyper).unwrap();
        let per_item: f64 = group.advantages.iter().sum::<f64>() / 4.0;
        assert!((loss - (-per_item)).abs() < 1e-9);
        let _ = mean_adv;
        // With beta > 0 the KL of identical policies is 0, so the loss is
        // unchanged.
        let hyper_kl = GrpoHyper::default();
        let loss_kl = grpo_loss(&p, &snap, &[group], &hyper_kl).unwrap();
        assert!((loss_kl - loss).abs() < 1e-12);
    }

    #[test]
    fn zero_advantages_zero_loss_and_grad() {
        let p = PolicyParams::init(dims(), 4);
        let snap = p.snapshot(0);
        let hyper = GrpoHyper {
            kl_beta: 0.0,
            ..GrpoHyper::default()
        };
        let group = make_group(&p, &snap, vec![0.5, 0.5, 0.5, 0.5], 6);
        let (loss, grads, _) = loss_and_grad(&p, &snap, &[group], &hyper).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn zero_advantage_step_only_decays_moments() {
        let mut p = PolicyParams::init(dims(), 4);
        let before = p.clone();
        let snap = p.snapshot(0);
        let hyper = GrpoHyper {
            kl_beta: 0.0,
            ..GrpoHyper::default()
        };
        let group = make_group(&p, &snap, vec![1.0, 1.0, 1.0], 6);
        let mut opt = AdamState::new(dims());
        grpo_step(&mut p, &snap, &[group], &hyper, &mut opt).unwrap();
        assert_eq!(p, before);
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn positive_advantage_increases_logprob() {
        let mut p = PolicyParams::init(dims(), 8);
        let snap = p.snapshot(0);
        let hyper = GrpoHyper {
            kl_beta: 0.0,
            lr: 1e-4,
            clip_eps: 0.5,
            ..GrpoHyper::default()
        };
        let ctx = vec![0.2, -0.1, 0.4, 0.0, 0.3];
        let mut rng = stream_rng(9, &[1]);
        let seqs: Vec<_> = (0..2)
            .map(|_| sample_sequence(&p, &ctx, 1.0, &mut rng).unwrap())
            .collect();
        let target = seqs[0].tokens.clone();
        let group = RolloutGroup::new(ctx.clone(), seqs, vec![1.0, 0.0], 1e-6, &snap);
        let before = sequence_logprob(&p, &ctx, &target);
        let mut opt = AdamState::new(dims());
        grpo_step(&mut p, &snap, &[group], &hyper, &mut opt).unwrap();
        let after = sequence_logprob(&p, &ctx, &target);
        assert!(after > before, "{after} <= {before}");
    }

    #[test]
    fn loss_invariant_under_group_permutation() {
        let p = PolicyParams::init(dims(), 12);
        let snap = PolicyParams::init(dims(), 13).snapshot(0);
        let hyper = GrpoHyper::default();
        let mut group = make_group(&p, &snap, vec![1.0, 0.0, 0.5, 0.25], 20);
        let loss_a = grpo_loss(&p, &snap, &[group.clone()], &hyper).unwrap();
        // permute members
        group.sequences.rotate_left(1);
        group.rewards.rotate_left(1);
        group.advantages.rotate_left(1);
        group.old_logprobs.rotate_left(1);
        let loss_b = grpo_loss(&p, &snap, &[group], &hyper).unwrap();
        assert!((loss_a - loss_b).abs() < 1e-12);
    }

    #[test]
    fn clip_flatness_on_analytic_term() {
        let eps = 0.2;
        // positive advantage: flat above 1+eps
        let base = surrogate_term(1.2, 1.5, eps);
        for rho in [1.2, 1.5, 3.0, 100.0] {
            assert_eq!(surrogate_term(rho, 1.5, eps), base);
        }
        // negative advantage: flat below 1-eps
        let base = surrogate_term(0.8, -2.0, eps);
        for rho in [0.8, 0.5, 0.1, 1e-6] {
            assert_eq!(surrogate_term(rho, -2.0, eps), base);
        }
        // inside the clip region the term moves with rho
        assert_ne!(surrogate_term(1.0, 1.5, eps), surrogate_term(1.1, 1.5, eps));
    }

    #[test]
    fn deterministic_step() {
        let run = || {
            let mut p = PolicyParams::init(dims(), 21);
            let snap = p.snapshot(0);
            let hyper = GrpoHyper::default();
            let group = make_group(&p, &snap, vec![1.0, 0.0, 0.0, 1.0], 30);
            let mut opt = AdamState::new(dims());
            grpo_step(&mut p, &snap, &[group], &hyper, &mut opt).unwrap();
            p
        };
        assert_eq!(run(), run());
    }
}
