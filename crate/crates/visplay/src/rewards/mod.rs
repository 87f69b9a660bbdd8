//! Reward components for both roles: pseudo-label confidence, uncertainty
//! reward, BLEU-based diversity regularization, format validity, the
//! composite questioner reward, and the binary reasoner reward.

mod bleu;
mod cluster;

pub use bleu::{bleu, similarity};
pub use cluster::cluster_group;

use crate::error::{Result, VisplayError};
use crate::microworld::Grammar;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Majority-vote pseudo-label and its empirical frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRecord {
    pub answers: Vec<String>,
    pub pseudo_label: String,
    /// Count of the pseudo-label among the answers; confidence = count / m.
    pub count: usize,
    pub m: usize,
    pub confidence: f64,
    pub tie_broken: bool,
}

/// Empirical majority vote over m canonical answers. Ties are broken by the
/// lexicographically smallest answer, with `tie_broken` set.
pub fn confidence(answers: &[String]) -> Result<ConfidenceRecord> {
    if answers.is_empty() {
        return Err(VisplayError::EmptyAnswers);
    }
    let m = answers.len();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for a in answers {
        *counts.entry(a.as_str()).or_insert(0) += 1;
    }
    let max_count = *counts.values().max().unwrap();
    // BTreeMap iteration order is lexicographic, so the first maximal entry
    // is the tie-break winner.
    let pseudo_label = counts
        .iter()
        .find(|(_, &c)| c == max_count)
        .map(|(&a, _)| a.to_string())
        .unwrap();
    let tie_broken = counts.values().filter(|&&c| c == max_count).count() > 1;
    Ok(ConfidenceRecord {
        answers: answers.to_vec(),
        pseudo_label,
        count: max_count,
        m,
        confidence: max_count as f64 / m as f64,
        tie_broken,
    })
}

/// Uncertainty reward: 1 - |2c - 1|. Peaks at c = 0.5, falls linearly to 0 at
/// c = 0 and c = 1.
pub fn uncertainty_reward(c: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&c) {
        return Err(VisplayError::Domain(format!("confidence {c} outside [0,1]")));
    }
    Ok(1.0 - (2.0 * c - 1.0).abs())
}

/// Redundancy penalty for one group member: lambda * |cluster| / G.
pub fn diversity_penalty(cluster_size: usize, group_size: usize, lambda: f64) -> Result<f64> {
    if cluster_size < 1 || cluster_size > group_size {
        return Err(VisplayError::Domain(format!(
            "cluster size {cluster_size} outside [1, {group_size}]"
        )));
    }
    if lambda < 0.0 {
        return Err(VisplayError::Domain("lambda must be >= 0".into()));
    }
    Ok(lambda * cluster_size as f64 / group_size as f64)
}

/// Strict structural validity: the whole string is exactly one
/// `<question>body</question>` pair with nothing around or inside it.
pub fn format_valid(text: &str) -> bool {
    Grammar::strip_tags(text).is_ok()
}

/// Composite questioner reward: valid * ReLU(r_unc - r_div).
pub fn questioner_reward(valid: bool, r_unc: f64, r_div: f64) -> f64 {
    if valid {
        (r_unc - r_div).max(0.0)
    } else {
        0.0
    }
}

/// Binary reasoner reward: exact match on canonical strings.
pub fn reasoner_reward(answer: &str, pseudo_label: &str) -> f64 {
    if answer == pseudo_label {
        1.0
    } else {
        0.0
    }
}

/// Per-question reward decomposition, one transcript line per group member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub valid: bool,
    pub r_unc: f64,
    pub r_div: f64,
    pub cluster_id: usize,
    pub cluster_size: usize,
    pub final_reward: f64,
}

impl RewardBreakdown {
    pub fn invalid() -> Self {
        RewardBreakdown {
            valid: false,
            r_unc: 0.0,
            r_div: 0.0,
            cluster_id: 0,
            cluster_size: 0,
            final_reward: 0.0,
        }
    }

    pub fn valid(r_unc: f64, r_div: f64, cluster_id: usize, cluster_size: usize) -> Self {
        RewardBreakdown {
            valid: true,
            r_unc,
            r_div,
            cluster_id,
            cluster_size,
            final_reward: questioner_reward(true, r_unc, r_div),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn majority_basic() {
        let r = confidence(&s(&["a", "a", "b"])).unwrap();
        assert_eq!(r.pseudo_label, "a");
        assert_eq!((r.count, r.m), (2, 3));
        assert!((r.confidence - 2.0 / 3.0).abs() < 1e-15);
        assert!(!r.tie_broken);
    }

    #[test]
    fn majority_unanimous() {
        let r = confidence(&s(&["x", "x", "x", "x"])).unwrap();
        assert_eq!(r.confidence, 1.0);
    }

    #[test]
    fn majority_tie_lexicographic() {
        let r = confidence(&s(&["3", "3", "7", "7"])).unwrap();
        assert_eq!(r.pseudo_label, "3");
        assert_eq!(r.confidence, 0.5);
        assert!(r.tie_broken);
    }

    #[test]
    fn majority_empty_err() {
        assert!(matches!(confidence(&[]), Err(VisplayError::EmptyAnswers)));
    }

    #[test]
    fn majority_permutation_invariant() {
        let a = confidence(&s(&["a", "b", "a", "c", "a", "b"])).unwrap();
        let b = confidence(&s(&["c", "a", "b", "a", "b", "a"])).unwrap();
        assert_eq!(a.pseudo_label, b.pseudo_label);
        assert_eq!(a.confidence, b.confidence);
    }

    #[test]
    fn uncertainty_paper_values() {
        assert_eq!(uncertainty_reward(0.5).unwrap(), 1.0);
        assert_eq!(uncertainty_reward(1.0).unwrap(), 0.0);
        assert_eq!(uncertainty_reward(0.625).unwrap(), 0.75);
        assert!(uncertainty_reward(1.5).is_err());
    }

    #[test]
    fn uncertainty_symmetric() {
        for i in 0..=100 {
            let c = i as f64 / 100.0;
            let a = uncertainty_reward(c).unwrap();
            let b = uncertainty_reward(1.0 - c).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn diversity_values() {
        assert_eq!(diversity_penalty(8, 8, 0.5).unwrap(), 0.5);
        assert_eq!(diversity_penalty(1, 8, 0.5).unwrap(), 0.0625);
        assert_eq!(diversity_penalty(5, 8, 0.0).unwrap(), 0.0);
        assert!(diversity_penalty(9, 8, 0.5).is_err());
        assert!(diversity_penalty(0, 8, 0.5).is_err());
    }

    #[test]
    fn format_strictness() {
        assert!(format_valid("<question>How many clubs are there</question>"));
        assert!(!format_valid(" <question>x</question>"));
        assert!(!format_valid("<question>x</question> "));
        assert!(!format_valid("How many red circles"));
        assert!(!format_valid("<question>a</question><question>b</question>"));
        assert!(!format_valid("<question>a <question>b</question></question>"));
    }

    #[test]
    fn questioner_reward_cases() {
        assert_eq!(questioner_reward(true, 1.0, 0.0625), 0.9375);
        assert_eq!(questioner_reward(false, 1.0, 0.0), 0.0);
        assert_eq!(questioner_reward(true, 0.2, 0.5), 0.0);
    }

    #[test]
    fn reasoner_reward_exact_match() {
        assert_eq!(reasoner_reward("3", "3"), 1.0);
        assert_eq!(reasoner_reward("yes", "no"), 0.0);
        // Pre-canonicalization "03" normalizes to "3" before comparison.
        let c = crate::microworld::canonicalize_answer("03");
        assert_eq!(reasoner_reward(&c, "3"), 1.0);
    }

    #[test]
    fn final_reward_in_unit_interval() {
        for cs in 1..=8usize {
            for c10 in 0..=10u32 {
                let r_unc = uncertainty_reward(c10 as f64 / 10.0).unwrap();
                let r_div = diversity_penalty(cs, 8, 0.5).unwrap();
                let b = RewardBreakdown::valid(r_unc, r_div, 0, cs);
                assert!((0.0..=1.0).contains(&b.final_reward));
            }
        }
    }
}
