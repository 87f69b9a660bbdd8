//! Small differentiable autoregressive categorical policy.
//!
//! Architecture: token embedding + additive context projection + one tanh
//! mixing layer + linear output head. Both roles use the same shapes, so two
//! policies created from the same init seed are bit-identical (the shared
//! base contract). All math is f64 with hand-derived gradients that are
//! finite-difference checked in tests.

mod adam;
mod checkpoint;
mod forward;
mod grad;

pub use adam::{apply_update, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use forward::{
    greedy_sequence, sample_sequence, sequence_logprob, step_distributions, TokenSequence,
};
pub use grad::{accumulate_kl_grad, accumulate_logprob_grad, nll_grad};

use crate::rngutil::{self, label};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDims {
    pub vocab: usize,
    pub hidden: usize,
    pub ctx: usize,
    pub max_len: usize,
}

impl PolicyDims {
    pub fn n_params(&self) -> usize {
        let (v, d, c) = (self.vocab, self.hidden, self.ctx);
        v * d + c * d + d * d + d + d * v + v
    }
}

/// Flat parameter container; the same shape carries gradients and optimizer
/// moments. Layout: embed (V*d), ctx_proj (C*d), mix (d*d), b_h (d),
/// out (d*V), b_out (V), all row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensors {
    pub dims: PolicyDims,
    pub data: Vec<f64>,
}

impl Tensors {
    pub fn zeros(dims: PolicyDims) -> Self {
        Tensors {
            data: vec![0.0; dims.n_params()],
            dims,
        }
    }

    // block offsets
    fn off_embed(&self) -> usize {
        0
    }
    fn off_ctx(&self) -> usize {
        self.dims.vocab * self.dims.hidden
    }
    fn off_mix(&self) -> usize {
        self.off_ctx() + self.dims.ctx * self.dims.hidden
    }
    fn off_bh(&self) -> usize {
        self.off_mix() + self.dims.hidden * self.dims.hidden
    }
    fn off_out(&self) -> usize {
        self.off_bh() + self.dims.hidden
    }
    fn off_bout(&self) -> usize {
        self.off_out() + self.dims.hidden * self.dims.vocab
    }

    pub fn embed(&self) -> &[f64] {
        &self.data[self.off_embed()..self.off_ctx()]
    }
    pub fn ctx_proj(&self) -> &[f64] {
        &self.data[self.off_ctx()..self.off_mix()]
    }
    pub fn mix(&self) -> &[f64] {
        &self.data[self.off_mix()..self.off_bh()]
    }
    pub fn b_h(&self) -> &[f64] {
        &self.data[self.off_bh()..self.off_out()]
    }
    pub fn out(&self) -> &[f64] {
        &self.data[self.off_out()..self.off_bout()]
    }
    pub fn b_out(&self) -> &[f64] {
        &self.data[self.off_bout()..]
    }

    pub(crate) fn block_ranges(&self) -> [std::ops::Range<usize>; 6] {
        [
            self.off_embed()..self.off_ctx(),
            self.off_ctx()..self.off_mix(),
            self.off_mix()..self.off_bh(),
            self.off_bh()..self.off_out(),
            self.off_out()..self.off_bout(),
            self.off_bout()..self.data.len(),
        ]
    }

    pub fn add_scaled(&mut self, other: &Tensors, scale: f64) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Max-norm distance between two parameter sets.
    pub fn max_abs_diff(&self, other: &Tensors) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub init_seed: u64,
    pub tensors: Tensors,
}

impl PolicyParams {
    /// Deterministic init from a seed: weights uniform in +-1/sqrt(hidden),
    /// biases zero.
    pub fn init(dims: PolicyDims, init_seed: u64) -> PolicyParams {
        let mut t = Tensors::zeros(dims);
        let mut rng = rngutil::stream_rng(init_seed, &[label::POLICY_INIT]);
        let a = 1.0 / (dims.hidden as f64).sqrt();
        let [embed, ctx, mix, bh, out, bout] = t.block_ranges();
        for r in [embed, ctx, mix, out] {
            for x in &mut t.data[r] {
                *x = rng.gen_range(-a..a);
            }
        }
        let _ = (bh, bout); // biases stay zero
        PolicyParams {
            init_seed,
            tensors: t,
        }
    }

    pub fn dims(&self) -> PolicyDims {
        self.tensors.dims
    }

    pub fn snapshot(&self, step: u64) -> PolicySnapshot {
        PolicySnapshot {
            params: self.clone(),
            step,
        }
    }
}

/// Frozen copy of the params used as the old policy during a GRPO step and
/// as a frozen role during the opposite phase. Never mutated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub params: PolicyParams,
    pub step: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_dims() -> PolicyDims {
        PolicyDims {
            vocab: 6,
            hidden: 4,
            ctx: 5,
            max_len: 8,
        }
    }

    #[test]
    fn same_seed_bit_identical() {
        let d = tiny_dims();
        let a = PolicyParams::init(d, 42);
        let b = PolicyParams::init(d, 42);
        assert_eq!(a, b);
        let c = PolicyParams::init(d, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn param_count_matches_layout() {
        let d = tiny_dims();
        let t = Tensors::zeros(d);
        assert_eq!(t.data.len(), d.n_params());
        assert_eq!(d.n_params(), 6 * 4 + 5 * 4 + 16 + 4 + 24 + 6);
    }

    #[test]
    fn init_is_finite_and_bounded() {
        let p = PolicyParams::init(tiny_dims(), 1);
        assert!(p.tensors.all_finite());
        assert!(p.tensors.max_abs() <= 0.5);
    }
}
