//! Shared token vocabulary for both roles.
//!
//! One flat vocabulary carries question keywords, filter tokens, cell
//! coordinates, tag tokens, and answer words. Index 0 is the end-of-sequence
//! token, which also serves as the start symbol fed to the policy at step 0.
//! The vocabulary depends only on the grid dimensions and is listed in the
//! run manifest.

use crate::microworld::{GenSpec, ALL_COLORS, ALL_SHAPES, ALL_SIZES};
use std::collections::HashMap;

pub const END_TOKEN: usize = 0;
pub const END_TEXT: &str = "<end>";

#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    open_tag: usize,
    close_tag: usize,
    /// Indices of tokens that are legal single-token answers.
    answer_tokens: Vec<usize>,
}

impl Vocab {
    pub fn build(spec: &GenSpec) -> Vocab {
        let mut tokens: Vec<String> = vec![END_TEXT.to_string()];
        tokens.push("<question>".to_string());
        tokens.push("</question>".to_string());
        for kind in ["count", "exists", "compare_count", "attribute_at"] {
            tokens.push(kind.to_string());
        }
        for c in ALL_COLORS {
            tokens.push(format!("color={}", c.name()));
        }
        for s in ALL_SHAPES {
            tokens.push(format!("shape={}", s.name()));
        }
        for s in ALL_SIZES {
            tokens.push(format!("size={}", s.name()));
        }
        for attr in ["color", "shape", "size"] {
            tokens.push(format!("attr={attr}"));
        }
        for r in 0..spec.grid_h {
            for c in 0..spec.grid_w {
                tokens.push(format!("at={r}:{c}"));
            }
        }
        let answer_start = tokens.len();
        for n in 0..=spec.capacity() {
            tokens.push(n.to_string());
        }
        for w in ["yes", "no", "equal", "first", "second", "none"] {
            tokens.push(w.to_string());
        }
        for c in ALL_COLORS {
            tokens.push(c.name().to_string());
        }
        for s in ALL_SHAPES {
            tokens.push(s.name().to_string());
        }
        for s in ALL_SIZES {
            tokens.push(s.name().to_string());
        }
        let answer_tokens = (answer_start..tokens.len()).collect();

        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        let open_tag = tokens.iter().position(|t| t == "<question>").unwrap();
        let close_tag = tokens.iter().position(|t| t == "</question>").unwrap();
        Vocab {
            tokens,
            index,
            open_tag,
            close_tag,
            answer_tokens,
        }
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token_text(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn listing(&self) -> &[String] {
        &self.tokens
    }

    pub fn lookup(&self, text: &str) -> Option<usize> {
        self.index.get(text).copied()
    }

    pub fn open_tag(&self) -> usize {
        self.open_tag
    }

    pub fn close_tag(&self) -> usize {
        self.close_tag
    }

    pub fn answer_tokens(&self) -> &[usize] {
        &self.answer_tokens
    }

    /// Detokenization: tokens joined with single spaces, except that no space
    /// follows `<question>` and none precedes `</question>`, so a well-formed
    /// token sequence prints exactly as `<question>body</question>`. The end
    /// token is not printed.
    pub fn detokenize(&self, tokens: &[usize]) -> String {
        let mut out = String::new();
        let mut suppress_space = false;
        for &t in tokens {
            if t == END_TOKEN {
                continue;
            }
            let text = &self.tokens[t];
            if !out.is_empty() && !suppress_space && t != self.close_tag {
                out.push(' ');
            }
            out.push_str(text);
            suppress_space = t == self.open_tag;
        }
        out
    }

    /// Encodes a tagged question text to tokens; None if any word is out of
    /// vocabulary. Inverse of `detokenize` for well-formed questions.
    pub fn encode_question(&self, text: &str) -> Option<Vec<usize>> {
        let body = crate::microworld::Grammar::strip_tags(text).ok()?;
        let mut toks = vec![self.open_tag];
        for w in body.split_whitespace() {
            toks.push(self.lookup(w)?);
        }
        toks.push(self.close_tag);
        toks.push(END_TOKEN);
        Some(toks)
    }

    /// Number of positional slots in the question context encoding; generous
    /// upper bound on question payload length (tags + kind + arguments).
    pub const QUESTION_SLOTS: usize = 8;

    /// Question context encoding: QUESTION_SLOTS consecutive one-hot blocks,
    /// one per token position. A plain bag is order-blind, which makes
    /// argument order unrecoverable (compare_count's two sides would be
    /// indistinguishable); per-position blocks keep every token directly
    /// addressable.
    pub fn slots(&self, tokens: &[usize]) -> Vec<f64> {
        let mut v = vec![0.0; Self::QUESTION_SLOTS * self.size()];
        for (i, &t) in tokens.iter().take(Self::QUESTION_SLOTS).enumerate() {
            v[i * self.size() + t] = 1.0;
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detokenize_wellformed_question() {
        let v = Vocab::build(&GenSpec::default());
        let toks = vec![
            v.lookup("<question>").unwrap(),
            v.lookup("count").unwrap(),
            v.lookup("color=red").unwrap(),
            v.lookup("</question>").unwrap(),
            END_TOKEN,
        ];
        assert_eq!(v.detokenize(&toks), "<question>count color=red</question>");
    }

    #[test]
    fn encode_is_inverse() {
        let v = Vocab::build(&GenSpec::default());
        let text = "<question>attribute_at at=1:2 attr=color</question>";
        let toks = v.encode_question(text).unwrap();
        assert_eq!(v.detokenize(&toks), text);
    }

    #[test]
    fn plain_tokens_space_joined() {
        let v = Vocab::build(&GenSpec::default());
        let toks = vec![v.lookup("yes").unwrap(), v.lookup("no").unwrap()];
        assert_eq!(v.detokenize(&toks), "yes no");
    }

    #[test]
    fn answer_tokens_cover_oracle_range() {
        let spec = GenSpec::default();
        let v = Vocab::build(&spec);
        for ans in ["0", "16", "yes", "no", "equal", "first", "second", "none", "red", "triangle", "small"] {
            let id = v.lookup(ans).unwrap();
            assert!(v.answer_tokens().contains(&id));
        }
    }
}
