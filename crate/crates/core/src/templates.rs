//! Query templates with `⟨name⟩` placeholders, grouped by the phase that
//! consumes them, plus the `(A|B)` / `(A)?` variant notation used to write
//! several templates at once.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const OPEN: char = '⟨';
pub const CLOSE: char = '⟩';

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("no value for placeholder ⟨{0}⟩")]
    MissingValue(String),
    #[error("empty or invalid value for placeholder ⟨{0}⟩")]
    InvalidValue(String),
    #[error("unbalanced placeholder markers in {0:?}")]
    UnbalancedPlaceholder(String),
    #[error("unbalanced variant markers in pattern {0:?}")]
    UnbalancedPattern(String),
    #[error("{kind} template {text:?} has placeholders {{{found}}}, expected {expected}")]
    PlaceholderMismatch {
        kind: TemplateKind,
        text: String,
        found: String,
        expected: &'static str,
    },
    #[error("no {0} templates configured")]
    Empty(TemplateKind),
    #[error("malformed template file: {0}")]
    Malformed(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, TemplateError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    IndividualSeeking,
    RelationSeeking,
    BestMatch,
    Merging,
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TemplateKind::IndividualSeeking => "individual_seeking",
            TemplateKind::RelationSeeking => "relation_seeking",
            TemplateKind::BestMatch => "best_match",
            TemplateKind::Merging => "merging",
        })
    }
}

impl TemplateKind {
    fn accepts(self, found: &BTreeSet<String>) -> bool {
        let has = |n: &str| found.contains(n);
        match self {
            TemplateKind::IndividualSeeking => found.len() == 1 && has("class"),
            TemplateKind::RelationSeeking => {
                has("individual") && found.iter().all(|p| p == "individual" || p == "property")
            }
            TemplateKind::BestMatch => found.len() == 2 && has("individual") && has("classes"),
            TemplateKind::Merging => {
                found.len() == 3 && has("class") && has("ind_1") && has("ind_2")
            }
        }
    }

    fn expected(self) -> &'static str {
        match self {
            TemplateKind::IndividualSeeking => "{class}",
            TemplateKind::RelationSeeking => "{individual} or {individual, property}",
            TemplateKind::BestMatch => "{individual, classes}",
            TemplateKind::Merging => "{class, ind_1, ind_2}",
        }
    }
}

/// Placeholder names occurring in `text`.
pub fn placeholders(text: &str) -> Result<BTreeSet<String>> {
    let mut names = BTreeSet::new();
    let mut rest = text;
    while let Some(start) = rest.find([OPEN, CLOSE]) {
        if rest[start..].starts_with(CLOSE) {
            return Err(TemplateError::UnbalancedPlaceholder(text.to_string()));
        }
        let after = &rest[start + OPEN.len_utf8()..];
        let end = after
            .find([OPEN, CLOSE])
            .filter(|&i| after[i..].starts_with(CLOSE))
            .ok_or_else(|| TemplateError::UnbalancedPlaceholder(text.to_string()))?;
        names.insert(after[..end].to_string());
        rest = &after[end + CLOSE.len_utf8()..];
    }
    Ok(names)
}

/// Replaces every `⟨name⟩` in `text` with its value from `subs`. Keys not
/// used by the template are ignored.
pub fn instantiate(text: &str, subs: &[(&str, &str)]) -> Result<String> {
    placeholders(text)?;
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find(OPEN) {
        out.push_str(&rest[..start]);
        let after = &rest[start + OPEN.len_utf8()..];
        let end = after.find(CLOSE).expect("balanced after validation");
        let name = &after[..end];
        let value = subs
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| TemplateError::MissingValue(name.to_string()))?;
        if value.trim().is_empty() || value.contains([OPEN, CLOSE]) {
            return Err(TemplateError::InvalidValue(name.to_string()));
        }
        out.push_str(value);
        rest = &after[end + CLOSE.len_utf8()..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Renders a set of names as a `, `-separated list in sorted order.
pub fn join_names<'a>(names: impl IntoIterator<Item = &'a str>) -> String {
    let sorted: BTreeSet<&str> = names.into_iter().collect();
    sorted.into_iter().collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryTemplate {
    kind: TemplateKind,
    text: String,
}

impl QueryTemplate {
    pub fn new(kind: TemplateKind, text: &str) -> Result<Self> {
        let found = placeholders(text)?;
        if !kind.accepts(&found) {
            return Err(TemplateError::PlaceholderMismatch {
                kind,
                text: text.to_string(),
                found: found.into_iter().collect::<Vec<_>>().join(", "),
                expected: kind.expected(),
            });
        }
        Ok(Self {
            kind,
            text: text.to_string(),
        })
    }

    pub fn kind(&self) -> TemplateKind {
        self.kind
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn instantiate(&self, subs: &[(&str, &str)]) -> Result<String> {
        instantiate(&self.text, subs)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TemplateLibrary {
    individual_seeking: Vec<QueryTemplate>,
    relation_seeking: Vec<QueryTemplate>,
    best_match: Vec<QueryTemplate>,
    merging: Vec<QueryTemplate>,
    context_prefix: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateFile {
    #[serde(default)]
    individual_seeking: Vec<String>,
    #[serde(default)]
    relation_seeking: Vec<String>,
    #[serde(default)]
    best_match: Vec<String>,
    #[serde(default)]
    merging: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    context_prefix: Option<String>,
}

impl TemplateLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Expands `pattern` and appends every variant to the `kind` list.
    pub fn push_pattern(&mut self, kind: TemplateKind, pattern: &str) -> Result<()> {
        for text in expand_variants(pattern)? {
            let t = QueryTemplate::new(kind, &text)?;
            self.list_mut(kind).push(t);
        }
        Ok(())
    }

    pub fn with_pattern(mut self, kind: TemplateKind, pattern: &str) -> Result<Self> {
        self.push_pattern(kind, pattern)?;
        Ok(self)
    }

    pub fn with_context_prefix(mut self, prefix: &str) -> Self {
        let trimmed = prefix.trim();
        self.context_prefix = (!trimmed.is_empty()).then(|| trimmed.to_string());
        self
    }

    pub fn context_prefix(&self) -> Option<&str> {
        self.context_prefix.as_deref()
    }

    fn list_mut(&mut self, kind: TemplateKind) -> &mut Vec<QueryTemplate> {
        match kind {
            TemplateKind::IndividualSeeking => &mut self.individual_seeking,
            TemplateKind::RelationSeeking => &mut self.relation_seeking,
            TemplateKind::BestMatch => &mut self.best_match,
            TemplateKind::Merging => &mut self.merging,
        }
    }

    pub fn templates(&self, kind: TemplateKind) -> &[QueryTemplate] {
        match kind {
            TemplateKind::IndividualSeeking => &self.individual_seeking,
            TemplateKind::RelationSeeking => &self.relation_seeking,
            TemplateKind::BestMatch => &self.best_match,
            TemplateKind::Merging => &self.merging,
        }
    }

    /// Templates of `kind`, failing when none are configured.
    pub fn require(&self, kind: TemplateKind) -> Result<&[QueryTemplate]> {
        let list = self.templates(kind);
        if list.is_empty() {
            Err(TemplateError::Empty(kind))
        } else {
            Ok(list)
        }
    }

    /// Instantiates `template` and prepends the context prefix, if any.
    pub fn render(&self, template: &QueryTemplate, subs: &[(&str, &str)]) -> Result<String> {
        let query = template.instantiate(subs)?;
        Ok(match &self.context_prefix {
            Some(prefix) => format!("{prefix} {query}"),
            None => query,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: TemplateFile =
            serde_json::from_str(text).map_err(|e| TemplateError::Malformed(e.to_string()))?;
        let mut lib = TemplateLibrary::new();
        for (kind, patterns) in [
            (TemplateKind::IndividualSeeking, &file.individual_seeking),
            (TemplateKind::RelationSeeking, &file.relation_seeking),
            (TemplateKind::BestMatch, &file.best_match),
            (TemplateKind::Merging, &file.merging),
        ] {
            for p in patterns {
                lib.push_pattern(kind, p)?;
            }
        }
        if let Some(prefix) = file.context_prefix {
            lib = lib.with_context_prefix(&prefix);
        }
        Ok(lib)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TemplateError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// The templates used in the nutritional case study.
    pub fn food() -> Self {
        TemplateLibrary::new()
            .with_pattern(
                TemplateKind::IndividualSeeking,
                "(instances|examples) list for class ⟨class⟩(, names only)?",
            )
            .and_then(|l| {
                l.with_pattern(
                    TemplateKind::RelationSeeking,
                    "ingredient list for ⟨individual⟩, names only",
                )
            })
            .and_then(|l| {
                l.with_pattern(
                    TemplateKind::BestMatch,
                    "most adequate class for ⟨individual⟩ among: ⟨classes⟩. concise",
                )
            })
            .and_then(|l| {
                l.with_pattern(
                    TemplateKind::Merging,
                    "in the ⟨class⟩ class, should instances ⟨ind_1⟩ and ⟨ind_2⟩ be merged \
                     together as semantic and ontologic duplicates? yes or no answer only",
                )
            })
            .expect("built-in templates are valid")
    }
}

#[derive(Debug)]
enum Piece {
    Text(String),
    Choice(Vec<Vec<Piece>>),
}

struct PatternParser<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    source: &'a str,
}

impl PatternParser<'_> {
    fn unbalanced(&self) -> TemplateError {
        TemplateError::UnbalancedPattern(self.source.to_string())
    }

    /// Parses until `)` (when nested) or end of input.
    fn sequence(&mut self, nested: bool) -> Result<(Vec<Vec<Piece>>, bool)> {
        let mut branches = vec![Vec::new()];
        let mut text = String::new();
        loop {
            let Some(ch) = self.chars.next() else {
                if nested {
                    return Err(self.unbalanced());
                }
                break;
            };
            match ch {
                '\\' => text.push(self.chars.next().ok_or_else(|| self.unbalanced())?),
                '(' => {
                    flush(&mut text, branches.last_mut().unwrap());
                    let (alternatives, had_bar) = self.sequence(true)?;
                    let optional = self.chars.next_if_eq(&'?').is_some();
                    let branch = branches.last_mut().unwrap();
                    if !had_bar && !optional {
                        // a plain parenthesised span is literal text
                        branch.push(Piece::Text("(".into()));
                        branch.extend(alternatives.into_iter().flatten());
                        branch.push(Piece::Text(")".into()));
                    } else {
                        let mut alternatives = alternatives;
                        if optional {
                            alternatives.push(Vec::new());
                        }
                        branch.push(Piece::Choice(alternatives));
                    }
                }
                ')' if nested => {
                    flush(&mut text, branches.last_mut().unwrap());
                    let had_bar = branches.len() > 1;
                    return Ok((branches, had_bar));
                }
                ')' => return Err(self.unbalanced()),
                '|' if nested => {
                    flush(&mut text, branches.last_mut().unwrap());
                    branches.push(Vec::new());
                }
                other => text.push(other),
            }
        }
        flush(&mut text, branches.last_mut().unwrap());
        Ok((branches, false))
    }
}

fn flush(text: &mut String, branch: &mut Vec<Piece>) {
    if !text.is_empty() {
        branch.push(Piece::Text(std::mem::take(text)));
    }
}

fn expand(pieces: &[Piece]) -> Vec<String> {
    let mut acc = vec![String::new()];
    for piece in pieces {
        let options: Vec<String> = match piece {
            Piece::Text(t) => vec![t.clone()],
            Piece::Choice(alternatives) => alternatives.iter().flat_map(|a| expand(a)).collect(),
        };
        acc = acc
            .iter()
            .flat_map(|prefix| options.iter().map(move |o| format!("{prefix}{o}")))
            .collect();
    }
    acc
}

fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Expands `(A|B)` alternations and `(A)?` optional groups into the full
/// list of template texts, left-to-right, first alternative first.
/// `\` escapes the next character.
pub fn expand_variants(pattern: &str) -> Result<Vec<String>> {
    let mut parser = PatternParser {
        chars: pattern.chars().peekable(),
        source: pattern,
    };
    let (mut branches, _) = parser.sequence(false)?;
    let pieces = branches.pop().unwrap_or_default();
    Ok(expand(&pieces)
        .iter()
        .map(|s| normalize_whitespace(s))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instantiate_examples() {
        assert_eq!(
            instantiate("What is the capital of ⟨c⟩?", &[("c", "Italy")]).unwrap(),
            "What is the capital of Italy?"
        );
        assert_eq!(
            instantiate(
                "examples list for ⟨class⟩ names only",
                &[("class", "recipe"), ("unused", "x")]
            )
            .unwrap(),
            "examples list for recipe names only"
        );
        let lib = TemplateLibrary::food();
        let best = &lib.templates(TemplateKind::BestMatch)[0];
        assert_eq!(
            lib.render(best, &[("individual", "tom"), ("classes", "cat, mouse")])
                .unwrap(),
            "most adequate class for tom among: cat, mouse. concise"
        );
    }

    #[test]
    fn instantiate_errors() {
        assert_eq!(
            instantiate("list for ⟨class⟩", &[]),
            Err(TemplateError::MissingValue("class".into()))
        );
        assert_eq!(
            instantiate("list for ⟨class⟩", &[("class", "  ")]),
            Err(TemplateError::InvalidValue("class".into()))
        );
        assert!(matches!(
            instantiate("list for ⟨class", &[("class", "x")]),
            Err(TemplateError::UnbalancedPlaceholder(_))
        ));
        assert!(placeholders("a ⟩ b").is_err());
    }

    #[test]
    fn expand_case_study_pattern() {
        let v =
            expand_variants("(instances|examples) list for class ⟨class⟩(, names only)?").unwrap();
        assert_eq!(
            v,
            vec![
                "instances list for class ⟨class⟩, names only",
                "instances list for class ⟨class⟩",
                "examples list for class ⟨class⟩, names only",
                "examples list for class ⟨class⟩",
            ]
        );
    }

    #[test]
    fn expand_small_patterns() {
        assert_eq!(
            expand_variants("(a|b)(c)?").unwrap(),
            vec!["ac", "a", "bc", "b"]
        );
        assert_eq!(expand_variants("plain  text ").unwrap(), vec!["plain text"]);
        assert_eq!(
            expand_variants("keep (this) literal").unwrap(),
            vec!["keep (this) literal"]
        );
        assert_eq!(
            expand_variants(r"escaped \(a|b\)").unwrap(),
            vec!["escaped (a|b)"]
        );
        assert!(expand_variants("(a|b").is_err());
        assert!(expand_variants("a|b)").is_err());
    }

    #[test]
    fn kind_validation() {
        use TemplateKind::*;
        assert!(QueryTemplate::new(IndividualSeeking, "list of ⟨class⟩").is_ok());
        assert!(QueryTemplate::new(IndividualSeeking, "list of ⟨klass⟩").is_err());
        assert!(QueryTemplate::new(RelationSeeking, "⟨property⟩ of ⟨individual⟩").is_ok());
        assert!(QueryTemplate::new(RelationSeeking, "ingredients of ⟨individual⟩").is_ok());
        assert!(QueryTemplate::new(RelationSeeking, "⟨property⟩ list").is_err());
        assert!(QueryTemplate::new(BestMatch, "⟨individual⟩ among ⟨classes⟩").is_ok());
        assert!(QueryTemplate::new(BestMatch, "⟨individual⟩ among").is_err());
        assert!(QueryTemplate::new(Merging, "⟨class⟩ ⟨ind_1⟩ ⟨ind_2⟩").is_ok());
        assert!(QueryTemplate::new(Merging, "⟨class⟩ ⟨ind_1⟩ ⟨ind_2⟩ ⟨x⟩").is_err());
    }

    #[test]
    fn library_file_and_prefix() {
        let json = r#"{
            "individual_seeking": ["(instances|examples) list for class ⟨class⟩"],
            "relation_seeking": ["ingredient list for ⟨individual⟩, names only"],
            "best_match": ["best class for ⟨individual⟩ among ⟨classes⟩"],
            "merging": ["same ⟨class⟩? ⟨ind_1⟩ ⟨ind_2⟩"],
            "context_prefix": "zoological context."
        }"#;
        let lib = TemplateLibrary::parse(json).unwrap();
        assert_eq!(lib.templates(TemplateKind::IndividualSeeking).len(), 2);
        let t = &lib.templates(TemplateKind::IndividualSeeking)[1];
        assert_eq!(
            lib.render(t, &[("class", "cat")]).unwrap(),
            "zoological context. examples list for class cat"
        );
        let bad = r#"{"merging": ["⟨class⟩ only"]}"#;
        assert!(matches!(
            TemplateLibrary::parse(bad),
            Err(TemplateError::PlaceholderMismatch { .. })
        ));
        assert_eq!(
            TemplateLibrary::new()
                .require(TemplateKind::Merging)
                .unwrap_err(),
            TemplateError::Empty(TemplateKind::Merging)
        );
    }

    #[test]
    fn join_names_sorts() {
        assert_eq!(join_names(["mouse", "cat"]), "cat, mouse");
    }
}
