//! Ground-truth oracle: exact canonical answers for any well-formed question.

use crate::microworld::{AttrKind, AttrValue, Filter, QuestionAst, Scene};

/// Canonical answer form: lowercase, trimmed, internal whitespace collapsed,
/// leading zeros stripped from all-digit strings. Makes exact-match binary
/// rewards well-defined.
pub fn canonicalize_answer(s: &str) -> String {
    let collapsed = s
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    if !collapsed.is_empty() && collapsed.bytes().all(|b| b.is_ascii_digit()) {
        let trimmed = collapsed.trim_start_matches('0');
        if trimmed.is_empty() {
            return "0".to_string();
        }
        return trimmed.to_string();
    }
    collapsed
}

fn count_matching(scene: &Scene, filter: &Filter) -> usize {
    scene.objects.iter().filter(|o| filter.matches(o)).count()
}

fn value_filter(v: AttrValue) -> Filter {
    match v {
        AttrValue::Color(c) => Filter {
            color: Some(c),
            ..Filter::default()
        },
        AttrValue::Shape(s) => Filter {
            shape: Some(s),
            ..Filter::default()
        },
        AttrValue::Size(s) => Filter {
            size: Some(s),
            ..Filter::default()
        },
    }
}

/// Deterministic canonical answer: digits for counts, yes/no for existence,
/// first/second/equal for comparisons, attribute name (or "none") for cell
/// lookups. Total over well-formed questions and invariant under object
/// ordering.
pub fn oracle_answer(scene: &Scene, q: &QuestionAst) -> String {
    match q {
        QuestionAst::Count { filter } => count_matching(scene, filter).to_string(),
        QuestionAst::Exists { filter } => {
            if count_matching(scene, filter) > 0 {
                "yes".to_string()
            } else {
                "no".to_string()
            }
        }
        QuestionAst::CompareCount { first, second } => {
            let a = count_matching(scene, &value_filter(*first));
            let b = count_matching(scene, &value_filter(*second));
            match a.cmp(&b) {
                std::cmp::Ordering::Greater => "first".to_string(),
                std::cmp::Ordering::Less => "second".to_string(),
                std::cmp::Ordering::Equal => "equal".to_string(),
            }
        }
        QuestionAst::AttributeAt { cell, attr } => {
            match scene.objects.iter().find(|o| o.cell == *cell) {
                None => "none".to_string(),
                Some(o) => match attr {
                    AttrKind::Color => o.color.name().to_string(),
                    AttrKind::Shape => o.shape.name().to_string(),
                    AttrKind::Size => o.size.name().to_string(),
                },
            }
        }
    }
}

/// Scan order for witness traces. Row-major and column-major are both valid
/// derivations; warming the base up on a mix keeps its decoding genuinely
/// multimodal, so sampled responses explore different scan paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanOrder {
    RowMajor,
    ColMajor,
}

fn sorted_cells(scene: &Scene, filter: &Filter, order: ScanOrder) -> Vec<(u8, u8)> {
    let mut cells: Vec<(u8, u8)> = scene
        .objects
        .iter()
        .filter(|o| filter.matches(o))
        .map(|o| o.cell)
        .collect();
    match order {
        ScanOrder::RowMajor => cells.sort_unstable(),
        ScanOrder::ColMajor => cells.sort_unstable_by_key(|&(r, c)| (c, r)),
    }
    cells
}

fn at_token(cell: (u8, u8)) -> String {
    format!("at={}:{}", cell.0, cell.1)
}

/// Witness derivation for a question: the supporting cells with a running
/// tally interleaved, then the canonical answer as the final token. For a
/// count the tally makes the answer a purely local continuation — each
/// witness cell is followed by the incremented count, and the final tally is
/// the answer itself — so an answer extracted from a sampled derivation
/// reflects the cells that derivation actually visited. This is the surface
/// form the base model is warmed up to emit; answer extraction (last token)
/// and exact-match rewards stay well-defined while decoding retains genuine
/// step-by-step structure.
pub fn oracle_trace(scene: &Scene, q: &QuestionAst, order: ScanOrder) -> Vec<String> {
    let tallied = |filter: &Filter, trace: &mut Vec<String>| -> usize {
        let cells = sorted_cells(scene, filter, order);
        let n = cells.len();
        for (i, cell) in cells.into_iter().enumerate() {
            trace.push(at_token(cell));
            trace.push((i + 1).to_string());
        }
        n
    };
    let mut trace = Vec::new();
    match q {
        QuestionAst::Count { filter } => {
            // the final tally is the answer; an empty match falls through to
            // the bare "0" appended below
            if tallied(filter, &mut trace) > 0 {
                return trace;
            }
        }
        QuestionAst::Exists { filter } => {
            if let Some(&cell) = sorted_cells(scene, filter, order).first() {
                trace.push(at_token(cell));
            }
        }
        QuestionAst::CompareCount { first, second } => {
            // terse side-count readouts rather than witness enumeration:
            // each side marker is followed by its subcount, and the verdict
            // is a local continuation of the two counts
            trace.push(first.token());
            trace.push(count_matching(scene, &value_filter(*first)).to_string());
            trace.push(second.token());
            trace.push(count_matching(scene, &value_filter(*second)).to_string());
        }
        QuestionAst::AttributeAt { cell, .. } => trace.push(at_token(*cell)),
    }
    trace.push(oracle_answer(scene, q));
    trace
}
