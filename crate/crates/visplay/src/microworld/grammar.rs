//! Question grammar: keyword surface form inside literal `<question>` tags.
//!
//! Surface form is `kind key=value ...`, e.g.
//! `<question>count color=red shape=circle</question>`. Parsing is strict at
//! the tag level (format) and at the body level (grammar); the two failure
//! modes are distinguished because they are logged separately even though
//! both make a question invalid.

use crate::error::{Result, VisplayError};
use crate::microworld::{Color, Shape, Size, ALL_COLORS, ALL_SHAPES, ALL_SIZES};
use serde::{Deserialize, Serialize};

pub const OPEN_TAG: &str = "<question>";
pub const CLOSE_TAG: &str = "</question>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttrKind {
    Color,
    Shape,
    Size,
}

impl AttrKind {
    pub fn name(self) -> &'static str {
        match self {
            AttrKind::Color => "color",
            AttrKind::Shape => "shape",
            AttrKind::Size => "size",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttrValue {
    Color(Color),
    Shape(Shape),
    Size(Size),
}

impl AttrValue {
    pub fn token(&self) -> String {
        match self {
            AttrValue::Color(c) => format!("color={}", c.name()),
            AttrValue::Shape(s) => format!("shape={}", s.name()),
            AttrValue::Size(s) => format!("size={}", s.name()),
        }
    }

    pub fn all() -> Vec<AttrValue> {
        let mut v = Vec::new();
        v.extend(ALL_COLORS.iter().map(|&c| AttrValue::Color(c)));
        v.extend(ALL_SHAPES.iter().map(|&s| AttrValue::Shape(s)));
        v.extend(ALL_SIZES.iter().map(|&s| AttrValue::Size(s)));
        v
    }

    pub fn matches(&self, o: &crate::microworld::SceneObject) -> bool {
        match self {
            AttrValue::Color(c) => o.color == *c,
            AttrValue::Shape(s) => o.shape == *s,
            AttrValue::Size(s) => o.size == *s,
        }
    }
}

/// Conjunctive attribute filter; at most one value per attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Filter {
    pub color: Option<Color>,
    pub shape: Option<Shape>,
    pub size: Option<Size>,
}

impl Filter {
    pub fn matches(&self, o: &crate::microworld::SceneObject) -> bool {
        self.color.map_or(true, |c| o.color == c)
            && self.shape.map_or(true, |s| o.shape == s)
            && self.size.map_or(true, |s| o.size == s)
    }

    fn tokens(&self) -> Vec<String> {
        let mut t = Vec::new();
        if let Some(c) = self.color {
            t.push(format!("color={}", c.name()));
        }
        if let Some(s) = self.shape {
            t.push(format!("shape={}", s.name()));
        }
        if let Some(s) = self.size {
            t.push(format!("size={}", s.name()));
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuestionAst {
    Count { filter: Filter },
    Exists { filter: Filter },
    CompareCount { first: AttrValue, second: AttrValue },
    AttributeAt { cell: (u8, u8), attr: AttrKind },
}

impl QuestionAst {
    pub fn kind_name(&self) -> &'static str {
        match self {
            QuestionAst::Count { .. } => "count",
            QuestionAst::Exists { .. } => "exists",
            QuestionAst::CompareCount { .. } => "compare_count",
            QuestionAst::AttributeAt { .. } => "attribute_at",
        }
    }

    /// Canonical body tokens (without the enclosing tags).
    pub fn body_tokens(&self) -> Vec<String> {
        match self {
            QuestionAst::Count { filter } => {
                let mut t = vec!["count".to_string()];
                t.extend(filter.tokens());
                t
            }
            QuestionAst::Exists { filter } => {
                let mut t = vec!["exists".to_string()];
                t.extend(filter.tokens());
                t
            }
            QuestionAst::CompareCount { first, second } => {
                vec!["compare_count".to_string(), first.token(), second.token()]
            }
            QuestionAst::AttributeAt { cell, attr } => vec![
                "attribute_at".to_string(),
                format!("at={}:{}", cell.0, cell.1),
                format!("attr={}", attr.name()),
            ],
        }
    }

    /// Canonical surface form including tags; `parse_question` inverts this.
    pub fn serialize(&self) -> String {
        format!("{}{}{}", OPEN_TAG, self.body_tokens().join(" "), CLOSE_TAG)
    }
}

/// Grammar bound to a grid size (cell coordinates are part of the lexicon).
#[derive(Debug, Clone, Copy)]
pub struct Grammar {
    pub grid_w: u8,
    pub grid_h: u8,
}

fn parse_color(s: &str) -> Option<Color> {
    ALL_COLORS.iter().copied().find(|c| c.name() == s)
}
fn parse_shape(s: &str) -> Option<Shape> {
    ALL_SHAPES.iter().copied().find(|c| c.name() == s)
}
fn parse_size(s: &str) -> Option<Size> {
    ALL_SIZES.iter().copied().find(|c| c.name() == s)
}

impl Grammar {
    pub fn new(grid_w: u8, grid_h: u8) -> Self {
        Grammar { grid_w, grid_h }
    }

    /// Splits off the tags. FormatError if the string is not exactly
    /// `<question>body</question>` with exactly one tag pair.
    pub fn strip_tags(text: &str) -> Result<&str> {
        if !text.starts_with(OPEN_TAG) {
            return Err(VisplayError::Format("missing opening tag".into()));
        }
        if !text.ends_with(CLOSE_TAG) || text.len() < OPEN_TAG.len() + CLOSE_TAG.len() {
            return Err(VisplayError::Format("missing closing tag".into()));
        }
        let body = &text[OPEN_TAG.len()..text.len() - CLOSE_TAG.len()];
        if body.contains(OPEN_TAG) || body.contains(CLOSE_TAG) || body.contains('<') {
            return Err(VisplayError::Format("extra or nested tags".into()));
        }
        Ok(body)
    }

    fn parse_filter_token(tok: &str) -> Result<AttrValue> {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| VisplayError::Grammar(format!("expected key=value, got `{tok}`")))?;
        match key {
            "color" => parse_color(value)
                .map(AttrValue::Color)
                .ok_or_else(|| VisplayError::Grammar(format!("unknown color `{value}`"))),
            "shape" => parse_shape(value)
                .map(AttrValue::Shape)
                .ok_or_else(|| VisplayError::Grammar(format!("unknown shape `{value}`"))),
            "size" => parse_size(value)
                .map(AttrValue::Size)
                .ok_or_else(|| VisplayError::Grammar(format!("unknown size `{value}`"))),
            _ => Err(VisplayError::Grammar(format!("unknown attribute `{key}`"))),
        }
    }

    fn parse_filter_list(toks: &[&str]) -> Result<Filter> {
        let mut f = Filter::default();
        for tok in toks {
            match Self::parse_filter_token(tok)? {
                AttrValue::Color(c) => {
                    if f.color.replace(c).is_some() {
                        return Err(VisplayError::Grammar("duplicate color filter".into()));
                    }
                }
                AttrValue::Shape(s) => {
                    if f.shape.replace(s).is_some() {
                        return Err(VisplayError::Grammar("duplicate shape filter".into()));
                    }
                }
                AttrValue::Size(s) => {
                    if f.size.replace(s).is_some() {
                        return Err(VisplayError::Grammar("duplicate size filter".into()));
                    }
                }
            }
        }
        Ok(f)
    }

    /// Parses a tagged question string into its AST.
    pub fn parse(&self, text: &str) -> Result<QuestionAst> {
        let body = Self::strip_tags(text)?;
        let toks: Vec<&str> = body.split_whitespace().collect();
        let Some((&kind, args)) = toks.split_first() else {
            return Err(VisplayError::Grammar("empty question body".into()));
        };
        match kind {
            "count" => Ok(QuestionAst::Count {
                filter: Self::parse_filter_list(args)?,
            }),
            "exists" => Ok(QuestionAst::Exists {
                filter: Self::parse_filter_list(args)?,
            }),
            "compare_count" => {
                if args.len() != 2 {
                    return Err(VisplayError::Grammar(
                        "compare_count takes exactly two filters".into(),
                    ));
                }
                Ok(QuestionAst::CompareCount {
                    first: Self::parse_filter_token(args[0])?,
                    second: Self::parse_filter_token(args[1])?,
                })
            }
            "attribute_at" => {
                let mut cell = None;
                let mut attr = None;
                for tok in args {
                    if let Some(coord) = tok.strip_prefix("at=") {
                        let (r, c) = coord.split_once(':').ok_or_else(|| {
                            VisplayError::Grammar(format!("bad cell `{tok}`"))
                        })?;
                        let r: u8 = r
                            .parse()
                            .map_err(|_| VisplayError::Grammar(format!("bad row in `{tok}`")))?;
                        let c: u8 = c
                            .parse()
                            .map_err(|_| VisplayError::Grammar(format!("bad col in `{tok}`")))?;
                        if r >= self.grid_h || c >= self.grid_w {
                            return Err(VisplayError::Grammar(format!(
                                "cell {r}:{c} outside {}x{} grid",
                                self.grid_h, self.grid_w
                            )));
                        }
                        if cell.replace((r, c)).is_some() {
                            return Err(VisplayError::Grammar("duplicate cell argument".into()));
                        }
                    } else if let Some(name) = tok.strip_prefix("attr=") {
                        let k = match name {
                            "color" => AttrKind::Color,
                            "shape" => AttrKind::Shape,
                            "size" => AttrKind::Size,
                            _ => {
                                return Err(VisplayError::Grammar(format!(
                                    "unknown attr `{name}`"
                                )))
                            }
                        };
                        if attr.replace(k).is_some() {
                            return Err(VisplayError::Grammar("duplicate attr argument".into()));
                        }
                    } else {
                        return Err(VisplayError::Grammar(format!("unexpected token `{tok}`")));
                    }
                }
                match (cell, attr) {
                    (Some(cell), Some(attr)) => Ok(QuestionAst::AttributeAt { cell, attr }),
                    _ => Err(VisplayError::Grammar(
                        "attribute_at needs both at= and attr=".into(),
                    )),
                }
            }
            other => Err(VisplayError::Grammar(format!("unknown kind `{other}`"))),
        }
    }
}

/// Convenience wrapper matching the one-argument surface of the grammar.
pub fn parse_question(text: &str, grammar: &Grammar) -> Result<QuestionAst> {
    grammar.parse(text)
}

/// Full enumeration of the grammar for a given grid (used by round-trip and
/// probe-set machinery). The grammar is finite, so "depth bound" is total.
pub fn enumerate_asts(grammar: &Grammar) -> Vec<QuestionAst> {
    let mut filters = Vec::new();
    let colors: Vec<Option<Color>> =
        std::iter::once(None).chain(ALL_COLORS.iter().map(|&c| Some(c))).collect();
    let shapes: Vec<Option<Shape>> =
        std::iter::once(None).chain(ALL_SHAPES.iter().map(|&s| Some(s))).collect();
    let sizes: Vec<Option<Size>> =
        std::iter::once(None).chain(ALL_SIZES.iter().map(|&s| Some(s))).collect();
    for &color in &colors {
        for &shape in &shapes {
            for &size in &sizes {
                filters.push(Filter { color, shape, size });
            }
        }
    }

    let mut out = Vec::new();
    for &filter in &filters {
        out.push(QuestionAst::Count { filter });
        out.push(QuestionAst::Exists { filter });
    }
    for first in AttrValue::all() {
        for second in AttrValue::all() {
            out.push(QuestionAst::CompareCount { first, second });
        }
    }
    for r in 0..grammar.grid_h {
        for c in 0..grammar.grid_w {
            for attr in [AttrKind::Color, AttrKind::Shape, AttrKind::Size] {
                out.push(QuestionAst::AttributeAt { cell: (r, c), attr });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g() -> Grammar {
        Grammar::new(4, 4)
    }

    #[test]
    fn roundtrip_all_asts() {
        let grammar = g();
        for ast in enumerate_asts(&grammar) {
            let text = ast.serialize();
            let parsed = grammar.parse(&text).unwrap();
            assert_eq!(parsed, ast, "round-trip failed for {text}");
        }
    }

    #[test]
    fn format_vs_grammar_errors() {
        let grammar = g();
        // Paper's example output: format-valid, grammar-invalid lexicon.
        let r = grammar.parse("<question>How many clubs are there</question>");
        assert!(matches!(r, Err(VisplayError::Grammar(_))));
        let r = grammar.parse("How many red circles");
        assert!(matches!(r, Err(VisplayError::Format(_))));
        let r = grammar.parse(" <question>count</question>");
        assert!(matches!(r, Err(VisplayError::Format(_))));
        let r = grammar.parse("<question>a</question><question>b</question>");
        assert!(matches!(r, Err(VisplayError::Format(_))));
    }

    #[test]
    fn locked_surface_example() {
        let grammar = g();
        let ast = grammar
            .parse("<question>count color=red shape=circle</question>")
            .unwrap();
        assert_eq!(
            ast,
            QuestionAst::Count {
                filter: Filter {
                    color: Some(Color::Red),
                    shape: Some(Shape::Circle),
                    size: None
                }
            }
        );
    }

    #[test]
    fn out_of_grid_cell_is_grammar_error() {
        let grammar = g();
        let r = grammar.parse("<question>attribute_at at=9:0 attr=color</question>");
        assert!(matches!(r, Err(VisplayError::Grammar(_))));
    }

    #[test]
    fn duplicate_filter_rejected() {
        let grammar = g();
        let r = grammar.parse("<question>count color=red color=blue</question>");
        assert!(matches!(r, Err(VisplayError::Grammar(_))));
    }
}
