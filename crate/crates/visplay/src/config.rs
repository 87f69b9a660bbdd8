//! Run configuration: TOML surface, defaults, and validation.
//!
//! Every field has a default; a config file may override any subset. The
//! fully resolved config is written into the run manifest so runs are
//! self-describing.

use crate::error::{Result, VisplayError};
use crate::microworld::GenSpec;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub train_count: usize,
    pub eval_count: usize,
    pub grid_w: u8,
    pub grid_h: u8,
    pub min_objects: usize,
    pub max_objects: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            train_count: 64,
            eval_count: 32,
            grid_w: 4,
            grid_h: 4,
            min_objects: 3,
            max_objects: 8,
        }
    }
}

impl SceneConfig {
    pub fn gen_spec(&self) -> GenSpec {
        GenSpec {
            grid_w: self.grid_w,
            grid_h: self.grid_h,
            min_objects: self.min_objects,
            max_objects: self.max_objects,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub hidden_dim: usize,
    pub max_len: usize,
    pub param_cap: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            hidden_dim: 24,
            max_len: 40,
            param_cap: 100_000,
        }
    }
}

/// Base-model construction: brief supervised warm-up standing in for the
/// pretrained backbone both roles are cloned from. Question examples teach
/// the tag/grammar surface; answer examples are oracle-labeled with
/// probability `answer_grounding` (uniform answer tokens otherwise), giving
/// the base model weak but above-chance grounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub answer_grounding: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 400,
            batch: 16,
            lr: 0.01,
            answer_grounding: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseConfig {
    pub steps: usize,
    /// Scenes (questioner) or curated questions (reasoner) per training step.
    pub batch: usize,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub eps_norm: f64,
    pub lr: f64,
    pub group_size: usize,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        PhaseConfig {
            steps: 20,
            batch: 4,
            clip_eps: 0.2,
            kl_beta: 0.01,
            eps_norm: 1e-6,
            lr: 2e-3,
            group_size: 8,
        }
    }
}

impl PhaseConfig {
    pub fn grpo_hyper(&self, reasoner_samples: usize) -> crate::grpo::GrpoHyper {
        crate::grpo::GrpoHyper {
            clip_eps: self.clip_eps,
            kl_beta: self.kl_beta,
            eps_norm: self.eps_norm,
            lr: self.lr,
            group_size: self.group_size,
            reasoner_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub lambda: f64,
    pub bleu_threshold: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            lambda: 0.5,
            bleu_threshold: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationConfig {
    /// Candidate questions sampled per scene (N).
    pub n_candidates: usize,
    /// Reasoner samples per candidate (m).
    pub m_samples: usize,
    pub tau_low: f64,
    pub tau_high: f64,
    /// 0 means "4 x train scene count".
    pub budget: usize,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            n_candidates: 8,
            m_samples: 8,
            tau_low: 0.25,
            tau_high: 0.75,
            budget: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Fixed grammar-generated probe questions per held-out scene.
    pub probe_per_scene: usize,
    /// Questioner-generated candidates per held-out scene for the
    /// frozen-questionset protocol.
    pub frozen_qset_per_scene: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            probe_per_scene: 4,
            frozen_qset_per_scene: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub iterations: usize,
    pub scenes: SceneConfig,
    pub policy: PolicyConfig,
    pub pretrain: PretrainConfig,
    pub questioner: PhaseConfig,
    pub reasoner: PhaseConfig,
    pub rewards: RewardConfig,
    pub curation: CurationConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            iterations: 3,
            scenes: SceneConfig::default(),
            policy: PolicyConfig::default(),
            pretrain: PretrainConfig::default(),
            questioner: PhaseConfig::default(),
            reasoner: PhaseConfig::default(),
            rewards: RewardConfig::default(),
            curation: CurationConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| VisplayError::ConfigValidation(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn effective_budget(&self) -> usize {
        if self.curation.budget == 0 {
            4 * self.scenes.train_count
        } else {
            self.curation.budget
        }
    }

    /// Validates every field, collecting all violations.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if let Err(e) = self.scenes.gen_spec().validate() {
            errs.push(format!("scenes: {e}"));
        }
        if self.scenes.train_count == 0 {
            errs.push("scenes.train_count: must be >= 1".into());
        }
        if self.scenes.eval_count == 0 {
            errs.push("scenes.eval_count: must be >= 1".into());
        }
        if self.policy.hidden_dim == 0 {
            errs.push("policy.hidden_dim: must be >= 1".into());
        }
        if self.policy.max_len < 4 {
            errs.push("policy.max_len: must be >= 4 (tags + body + end)".into());
        }
        for (name, phase) in [("questioner", &self.questioner), ("reasoner", &self.reasoner)] {
            if !(phase.clip_eps > 0.0 && phase.clip_eps < 1.0) {
                errs.push(format!("{name}.clip_eps: must lie in (0, 1)"));
            }
            if phase.kl_beta < 0.0 {
                errs.push(format!("{name}.kl_beta: must be >= 0"));
            }
            if phase.eps_norm <= 0.0 {
                errs.push(format!("{name}.eps_norm: must be > 0"));
            }
            if phase.lr <= 0.0 {
                errs.push(format!("{name}.lr: must be > 0"));
            }
            if phase.group_size < 2 {
                errs.push(format!("{name}.group_size: must be >= 2"));
            }
            if phase.batch == 0 {
                errs.push(format!("{name}.batch: must be >= 1"));
            }
        }
        if self.rewards.lambda < 0.0 {
            errs.push("rewards.lambda: must be >= 0".into());
        }
        if !(self.rewards.bleu_threshold > 0.0 && self.rewards.bleu_threshold <= 1.0) {
            errs.push("rewards.bleu_threshold: must lie in (0, 1]".into());
        }
        if self.curation.n_candidates == 0 {
            errs.push("curation.n_candidates: must be >= 1".into());
        }
        if self.curation.m_samples < 2 {
            errs.push("curation.m_samples: must be >= 2".into());
        }
        if !(0.0..=1.0).contains(&self.curation.tau_low) {
            errs.push("curation.tau_low: must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.curation.tau_high) {
            errs.push("curation.tau_high: must lie in [0, 1]".into());
        }
        if self.curation.tau_low > self.curation.tau_high {
            errs.push("curation.tau_low: must be <= curation.tau_high".into());
        }
        if !(0.0..=1.0).contains(&self.pretrain.answer_grounding) {
            errs.push("pretrain.answer_grounding: must lie in [0, 1]".into());
        }
        if self.eval.probe_per_scene == 0 {
            errs.push("eval.probe_per_scene: must be >= 1".into());
        }
        // parameter-count cap check needs the derived dims
        let spec = self.scenes.gen_spec();
        if spec.validate().is_ok() {
            let dims = self.policy_dims();
            if dims.n_params() > self.policy.param_cap {
                errs.push(format!(
                    "policy: parameter count {} exceeds cap {}",
                    dims.n_params(),
                    self.policy.param_cap
                ));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(VisplayError::ConfigValidation(errs))
        }
    }

    /// Policy dimensions implied by the scene spec: context is scene features
    /// concatenated with the question-dependent tail (token slots, match
    /// grids, named-cell readout; zeros for the questioner role).
    pub fn policy_dims(&self) -> crate::policy::PolicyDims {
        let spec = self.scenes.gen_spec();
        let vocab = crate::vocab::Vocab::build(&spec);
        crate::policy::PolicyDims {
            vocab: vocab.size(),
            hidden: self.policy.hidden_dim,
            ctx: spec.feature_len()
                + crate::selfplay::question_context_len(spec.capacity(), &vocab),
            max_len: self.policy.max_len,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_roundtrip_is_identity() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml_string();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_toml_overrides() {
        let cfg = RunConfig::from_toml_str("seed = 99\n[curation]\ntau_high = 0.9\n").unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.curation.tau_high, 0.9);
        assert_eq!(cfg.curation.tau_low, 0.25);
    }

    #[test]
    fn validation_names_every_violated_field() {
        let mut cfg = RunConfig::default();
        cfg.curation.tau_high = -0.5;
        cfg.questioner.clip_eps = 2.0;
        cfg.reasoner.lr = 0.0;
        let err = cfg.validate().unwrap_err();
        let VisplayError::ConfigValidation(errs) = err else {
            panic!("wrong error kind");
        };
        let joined = errs.join("\n");
        assert!(joined.contains("curation.tau_high"));
        assert!(joined.contains("questioner.clip_eps"));
        assert!(joined.contains("reasoner.lr"));
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(RunConfig::from_toml_str("tau_hgih = 0.9\n").is_err());
    }
}
