//! BLEU over token-id sequences, used as the pairwise similarity for the
//! diversity clustering.
//!
//! N-grams up to 4 (capped by the shorter sequence length), uniform weights,
//! brevity penalty, add-one smoothing on each n-gram precision. The
//! clustering similarity is symmetrized as max(BLEU(a|b), BLEU(b|a)).

use std::collections::HashMap;

fn ngram_counts(seq: &[usize], n: usize) -> HashMap<&[usize], usize> {
    let mut m = HashMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// BLEU of `candidate` against a single `reference`, with add-one smoothing:
/// p_n = (clipped matches + 1) / (candidate n-grams + 1). A pair with no
/// shared n-grams therefore floors at prod_n 1/(total_n + 1) ^ (1/N) times
/// the brevity penalty, never exactly zero.
pub fn bleu(candidate: &[usize], reference: &[usize]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let max_n = 4.min(candidate.len()).min(reference.len());
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cand = ngram_counts(candidate, n);
        let refr = ngram_counts(reference, n);
        let total: usize = cand.values().sum();
        let matched: usize = cand
            .iter()
            .map(|(g, &c)| c.min(refr.get(g).copied().unwrap_or(0)))
            .sum();
        log_sum += (((matched + 1) as f64) / ((total + 1) as f64)).ln();
    }
    let precision = (log_sum / max_n as f64).exp();
    let bp = if candidate.len() < reference.len() {
        (1.0 - reference.len() as f64 / candidate.len() as f64).exp()
    } else {
        1.0
    };
    bp * precision
}

/// Symmetric similarity in [0, 1] used for clustering.
pub fn similarity(a: &[usize], b: &[usize]) -> f64 {
    bleu(a, b).max(bleu(b, a))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_one() {
        let s = [5, 6, 7, 8, 9];
        assert!((bleu(&s, &s) - 1.0).abs() < 1e-12);
        assert!((similarity(&s, &s) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_worked_five_token_pair() {
        // candidate a b c d e vs reference a b c x y:
        //   p1 = (3+1)/(5+1), p2 = (2+1)/(4+1), p3 = (1+1)/(3+1), p4 = (0+1)/(2+1)
        //   BP = 1 (equal lengths)
        let cand = [1, 2, 3, 4, 5];
        let refr = [1, 2, 3, 6, 7];
        let expected = ((4.0 / 6.0) * (3.0 / 5.0) * 0.5 * (1.0 / 3.0) as f64).powf(0.25);
        assert!((bleu(&cand, &refr) - expected).abs() < 1e-9);
    }

    #[test]
    fn disjoint_unigrams_at_smoothing_floor() {
        // No shared n-grams at any order; equal lengths so BP = 1. The floor
        // is prod_n (1 / (len - n + 2)) ^ (1/4) for len = 5.
        let cand = [1, 2, 3, 4, 5];
        let refr = [6, 7, 8, 9, 10];
        let floor = ((1.0 / 6.0f64) * (1.0 / 5.0) * (1.0 / 4.0) * (1.0 / 3.0)).powf(0.25);
        let got = bleu(&cand, &refr);
        assert!((got - floor).abs() < 1e-12);
        assert!(got <= floor + 1e-12);
    }

    #[test]
    fn short_sequences_cap_ngram_order() {
        // Two-token sequences use n-grams up to 2 only.
        let a = [1, 2];
        let b = [1, 2];
        assert!((bleu(&a, &b) - 1.0).abs() < 1e-12);
        let c = [3, 4];
        let floor = ((1.0 / 3.0f64) * (1.0 / 2.0)).sqrt();
        assert!((bleu(&a, &c) - floor).abs() < 1e-12);
    }

    #[test]
    fn brevity_penalty_applies() {
        let short = [1, 2, 3];
        let long = [1, 2, 3, 4, 5, 6];
        // BLEU(short | long) carries BP = exp(1 - 6/3); the reverse does not.
        assert!(bleu(&short, &long) < bleu(&long, &short));
        assert!(similarity(&short, &long) == bleu(&long, &short));
    }
}
