//! Extraction of relevant names and yes/no verdicts from free-form oracle
//! responses.
//!
//! A response is either a multi-line list (items introduced by `-`, `*`,
//! `+`, `#`+ or `N.`) or a single-line list whose entries are separated by
//! `,`, `;`, `and`, `or`. When list items are present, the longest run of
//! consecutive item lines wins and everything around it (prologue, epilogue,
//! indented commentary) is ignored.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::OnceLock;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::canonical_identifier;

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("invalid refusal pattern {pattern:?} on line {line}: {source}")]
    Pattern {
        line: usize,
        pattern: String,
        source: regex::Error,
    },
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    MultiLine,
    SingleLine,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub mode: ParseMode,
    pub names: Vec<String>,
    pub raw: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Positive,
    Negative,
    Undetermined,
}

pub const DEFAULT_REFUSALS: [&str; 5] = [
    "i'm sorry",
    "as an ai",
    "language model",
    "i cannot",
    "i do not have access",
];

/// Case-insensitive patterns; a name matching any of them is discarded.
#[derive(Debug, Clone)]
pub struct RefusalRuleSet {
    patterns: Vec<Regex>,
}

impl Default for RefusalRuleSet {
    fn default() -> Self {
        let patterns = DEFAULT_REFUSALS
            .iter()
            .map(|p| case_insensitive(&regex::escape(p)).expect("escaped literal"))
            .collect();
        Self { patterns }
    }
}

fn case_insensitive(pattern: &str) -> Result<Regex, regex::Error> {
    RegexBuilder::new(pattern).case_insensitive(true).build()
}

impl RefusalRuleSet {
    /// One regular expression per line; blank lines and `#` comments are
    /// skipped.
    pub fn parse(text: &str) -> Result<Self, RuleError> {
        let mut patterns = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let re = case_insensitive(line).map_err(|source| RuleError::Pattern {
                line: n + 1,
                pattern: line.to_string(),
                source,
            })?;
            patterns.push(re);
        }
        Ok(Self { patterns })
    }

    pub fn load(path: &Path) -> Result<Self, RuleError> {
        let text = std::fs::read_to_string(path).map_err(|e| RuleError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn is_refusal(&self, name: &str) -> bool {
        let normalized = name.replace(['’', '‘'], "'");
        self.patterns.iter().any(|p| p.is_match(&normalized))
    }

    pub fn filter(&self, names: Vec<String>) -> Vec<String> {
        names.into_iter().filter(|n| !self.is_refusal(n)).collect()
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bullet {
    Dash,
    Star,
    Plus,
    Hash,
    Index(u64),
}

impl Bullet {
    fn same_style(self, other: Bullet) -> bool {
        matches!(
            (self, other),
            (Bullet::Dash, Bullet::Dash)
                | (Bullet::Star, Bullet::Star)
                | (Bullet::Plus, Bullet::Plus)
                | (Bullet::Hash, Bullet::Hash)
                | (Bullet::Index(_), Bullet::Index(_))
        )
    }
}

enum Line<'a> {
    Item {
        indent: usize,
        bullet: Bullet,
        payload: &'a str,
    },
    /// Blank or punctuation-only (e.g. an ellipsis standing for elided items).
    Filler,
    Text {
        indent: usize,
    },
}

fn indent_of(line: &str) -> usize {
    line.chars()
        .take_while(|c| c.is_whitespace())
        .map(|c| if c == '\t' { 4 } else { 1 })
        .sum()
}

/// Splits a leading bullet off `s`, which must already be left-trimmed.
fn split_bullet(s: &str) -> Option<(Bullet, &str)> {
    let first = s.chars().next()?;
    let (bullet, rest) = match first {
        '-' => (Bullet::Dash, &s[1..]),
        '*' => (Bullet::Star, &s[1..]),
        '+' => (Bullet::Plus, &s[1..]),
        '#' => (Bullet::Hash, s.trim_start_matches('#')),
        '0'..='9' => {
            let digits = s.chars().take_while(|c| c.is_ascii_digit()).count();
            let rest = s[digits..].strip_prefix('.')?;
            (Bullet::Index(s[..digits].parse().ok()?), rest)
        }
        _ => return None,
    };
    if !rest.starts_with(char::is_whitespace) {
        return None;
    }
    Some((bullet, rest.trim()))
}

fn classify(line: &str) -> Line<'_> {
    let trimmed = line.trim();
    if !trimmed.chars().any(char::is_alphanumeric) {
        return Line::Filler;
    }
    let indent = indent_of(line);
    match split_bullet(trimmed) {
        // headings that introduce a list are prose, not items
        Some((Bullet::Hash, payload)) if payload.ends_with(':') => Line::Text { indent },
        Some((bullet, payload)) if payload.chars().any(char::is_alphanumeric) => Line::Item {
            indent,
            bullet,
            payload,
        },
        _ => Line::Text { indent },
    }
}

fn separator() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        RegexBuilder::new(r"\s*(?:[,;\r\n]|\band\b|\bor\b)\s*")
            .case_insensitive(true)
            .build()
            .unwrap()
    })
}

const OPEN_QUOTES: &[char] = &['"', '\'', '`', '“', '‘', '«'];
const CLOSE_QUOTES: &[char] = &['"', '\'', '”', '’', '»'];

fn clean_name(raw: &str) -> Option<String> {
    let mut s = raw.trim();
    // nested bullets inside an item payload
    while let Some((_, rest)) = split_bullet(s) {
        s = rest;
    }
    let s = s
        .trim_matches(|c: char| c == '*' || c.is_whitespace())
        .trim_end_matches(['.', ':', '!', '?'])
        .trim();
    let words: Vec<&str> = s
        .split_whitespace()
        .map(|w| {
            w.trim_start_matches(OPEN_QUOTES)
                .trim_end_matches(CLOSE_QUOTES)
        })
        .filter(|w| !w.is_empty())
        .collect();
    let name = words.join(" ");
    let name = name.trim_end_matches(['.', ':', '!', '?']).trim();
    if name.chars().any(char::is_alphanumeric) {
        Some(name.to_string())
    } else {
        None
    }
}

fn split_relevant(text: &str) -> Vec<String> {
    separator().split(text).filter_map(clean_name).collect()
}

#[derive(Debug, Clone, Default)]
pub struct ResponseParser {
    refusals: RefusalRuleSet,
    strict_bullets: bool,
}

impl ResponseParser {
    pub fn new(refusals: RefusalRuleSet) -> Self {
        Self {
            refusals,
            strict_bullets: false,
        }
    }

    /// Require every item of a run to use the same bullet style.
    pub fn strict_bullets(mut self, strict: bool) -> Self {
        self.strict_bullets = strict;
        self
    }

    pub fn refusals(&self) -> &RefusalRuleSet {
        &self.refusals
    }

    /// Longest run of consecutive list items, as payload slices.
    fn longest_run<'a>(&self, text: &'a str) -> Vec<&'a str> {
        let mut best: Vec<&str> = Vec::new();
        let mut run: Vec<&str> = Vec::new();
        let mut base_indent = 0;
        let mut last_bullet: Option<Bullet> = None;
        for line in text.lines() {
            match classify(line) {
                Line::Filler => {}
                Line::Text { indent } => {
                    if run.is_empty() || indent <= base_indent {
                        close(&mut run, &mut best);
                        last_bullet = None;
                    }
                }
                Line::Item {
                    indent,
                    bullet,
                    payload,
                } => {
                    if !run.is_empty() && indent > base_indent + 1 {
                        continue; // nested under the current item
                    }
                    let breaks = match (last_bullet, bullet) {
                        (Some(Bullet::Index(prev)), Bullet::Index(n)) => n <= prev,
                        (Some(prev), b) => self.strict_bullets && !prev.same_style(b),
                        (None, _) => false,
                    };
                    if breaks {
                        close(&mut run, &mut best);
                    }
                    if run.is_empty() {
                        base_indent = indent;
                    }
                    run.push(payload);
                    last_bullet = Some(bullet);
                }
            }
        }
        close(&mut run, &mut best);
        best
    }

    pub fn extract_names(&self, text: &str, truncated: bool) -> ParsedResponse {
        let run = self.longest_run(text);
        let (mode, mut names) = if run.is_empty() {
            (ParseMode::SingleLine, split_relevant(text))
        } else {
            let names = run
                .iter()
                .flat_map(|payload| split_relevant(payload))
                .collect();
            (ParseMode::MultiLine, names)
        };
        if truncated {
            names.pop();
        }
        let names = self.refusals.filter(names);
        ParsedResponse {
            mode: if names.is_empty() {
                ParseMode::None
            } else {
                mode
            },
            names,
            raw: text.to_string(),
        }
    }
}

fn close<'a>(run: &mut Vec<&'a str>, best: &mut Vec<&'a str>) {
    if run.len() > best.len() {
        *best = std::mem::take(run);
    } else {
        run.clear();
    }
}

fn default_parser() -> &'static ResponseParser {
    static PARSER: OnceLock<ResponseParser> = OnceLock::new();
    PARSER.get_or_init(ResponseParser::default)
}

/// Extracts names with the default refusal rules and relaxed bullets.
pub fn extract_names(text: &str, truncated: bool) -> ParsedResponse {
    default_parser().extract_names(text, truncated)
}

pub fn extract_binary(text: &str) -> Verdict {
    static MARKERS: OnceLock<(Regex, Regex)> = OnceLock::new();
    let (positive, negative) = MARKERS.get_or_init(|| {
        (
            case_insensitive(r"\b(?:yes|true|correct)\b").unwrap(),
            case_insensitive(r"\b(?:no|false|incorrect)\b").unwrap(),
        )
    });
    match (positive.is_match(text), negative.is_match(text)) {
        (true, false) => Verdict::Positive,
        (false, true) => Verdict::Negative,
        _ => Verdict::Undetermined,
    }
}

/// Keeps the names whose canonical identifier matches that of some
/// candidate, in their original order.
pub fn restrict_to_candidates<'a>(
    names: &[String],
    candidates: impl IntoIterator<Item = &'a str>,
) -> Vec<String> {
    let allowed: BTreeSet<String> = candidates
        .into_iter()
        .filter_map(|c| canonical_identifier(c).ok())
        .collect();
    names
        .iter()
        .filter(|n| {
            canonical_identifier(n)
                .map(|id| allowed.contains(&id))
                .unwrap_or(false)
        })
        .cloned()
        .collect()
}
