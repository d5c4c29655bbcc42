//! Structural measures of a populated ontology and error ratios computed
//! from an annotation file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::ontology::{Ontology, RelationAssertion};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("annotation line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("unknown error tag {0:?}")]
    UnknownTag(String),
    #[error("annotation references entities missing from the ontology: {}", .0.join(", "))]
    UnknownEntities(Vec<String>),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StructuralStats {
    #[serde(rename = "TI")]
    pub ti: usize,
    #[serde(rename = "minCW")]
    pub min_cw: usize,
    #[serde(rename = "maxCW")]
    pub max_cw: usize,
    #[serde(rename = "TL")]
    pub tl: usize,
    #[serde(rename = "TR")]
    pub tr: usize,
}

/// Class weight is the number of direct members; every declared class
/// counts, including empty ones. An individual counts towards TL when all
/// of its asserted classes are leaves.
pub fn structural_stats(o: &Ontology) -> StructuralStats {
    let mut weights: BTreeMap<&str, usize> = o.classes().map(|c| (c.id.as_str(), 0)).collect();
    let leaves = o.leaf_classes();
    let mut tl = 0;
    for individual in o.individuals() {
        for class in &individual.asserted_classes {
            if let Some(w) = weights.get_mut(class.as_str()) {
                *w += 1;
            }
        }
        if !individual.asserted_classes.is_empty()
            && individual
                .asserted_classes
                .iter()
                .all(|c| leaves.contains(c))
        {
            tl += 1;
        }
    }
    StructuralStats {
        ti: o.individual_count(),
        min_cw: weights.values().copied().min().unwrap_or(0),
        max_cw: weights.values().copied().max().unwrap_or(0),
        tl,
        tr: o.relation_count(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorTag {
    /// Individual asserted in the wrong or a too general class.
    Mis,
    /// Individual meaningful in general but irrelevant to this ontology.
    Ii,
    /// Meaningless individual.
    Mi,
    /// Individual duplicating its class.
    Ci,
    /// Individual duplicating another individual.
    Di,
    /// Invalid relation.
    Wr,
}

impl ErrorTag {
    pub const INDIVIDUAL: [ErrorTag; 5] = [
        ErrorTag::Mis,
        ErrorTag::Ii,
        ErrorTag::Mi,
        ErrorTag::Ci,
        ErrorTag::Di,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorTag::Mis => "mis",
            ErrorTag::Ii => "ii",
            ErrorTag::Mi => "mi",
            ErrorTag::Ci => "ci",
            ErrorTag::Di => "di",
            ErrorTag::Wr => "wr",
        }
    }
}

impl fmt::Display for ErrorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorTag {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, MetricsError> {
        let tag = s.trim();
        let tag = tag.strip_prefix("E_").unwrap_or(tag);
        Ok(match tag.to_ascii_lowercase().as_str() {
            "mis" => ErrorTag::Mis,
            "ii" => ErrorTag::Ii,
            "mi" => ErrorTag::Mi,
            "ci" => ErrorTag::Ci,
            "di" => ErrorTag::Di,
            "wr" => ErrorTag::Wr,
            _ => return Err(MetricsError::UnknownTag(s.to_string())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ErrorAnnotation {
    pub individual_errors: BTreeMap<String, BTreeSet<ErrorTag>>,
    pub relation_errors: BTreeSet<RelationAssertion>,
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    kind: String,
    id_or_triple: String,
    #[serde(default)]
    tags: String,
}

#[derive(Serialize)]
struct CsvOut<'a> {
    kind: &'a str,
    id_or_triple: String,
    tags: String,
}

impl ErrorAnnotation {
    pub fn is_empty(&self) -> bool {
        self.individual_errors.values().all(BTreeSet::is_empty) && self.relation_errors.is_empty()
    }

    pub fn tag_individual(&mut self, id: &str, tag: ErrorTag) {
        self.individual_errors
            .entry(id.to_string())
            .or_default()
            .insert(tag);
    }

    /// Reads the CSV format `kind,id_or_triple,tags`: `kind` is `individual`
    /// or `relation`, triples are `property|subject|object` and tags are
    /// separated by `;`. Relation rows are always `wr`; their tag column
    /// may be empty.
    pub fn parse_csv(text: &str) -> Result<Self, MetricsError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut ann = ErrorAnnotation::default();
        for (n, row) in reader.deserialize::<CsvRow>().enumerate() {
            let line = n + 2;
            let row = row.map_err(|e| MetricsError::Malformed {
                line,
                message: e.to_string(),
            })?;
            let tags = row
                .tags
                .split(';')
                .filter(|t| !t.trim().is_empty())
                .map(ErrorTag::from_str)
                .collect::<Result<BTreeSet<_>, _>>()?;
            match row.kind.to_ascii_lowercase().as_str() {
                "individual" => {
                    if tags.contains(&ErrorTag::Wr) {
                        return Err(MetricsError::Malformed {
                            line,
                            message: "wr applies to relations only".into(),
                        });
                    }
                    ann.individual_errors
                        .entry(row.id_or_triple.clone())
                        .or_default()
                        .extend(tags);
                }
                "relation" => {
                    if tags.iter().any(|t| *t != ErrorTag::Wr) {
                        return Err(MetricsError::Malformed {
                            line,
                            message: "relations only take the wr tag".into(),
                        });
                    }
                    let parts: Vec<&str> = row.id_or_triple.split('|').map(str::trim).collect();
                    let [property, subject, object] = parts[..] else {
                        return Err(MetricsError::Malformed {
                            line,
                            message: format!(
                                "expected property|subject|object, got {:?}",
                                row.id_or_triple
                            ),
                        });
                    };
                    ann.relation_errors
                        .insert(RelationAssertion::new(property, subject, object));
                }
                other => {
                    return Err(MetricsError::Malformed {
                        line,
                        message: format!("unknown kind {other:?}"),
                    })
                }
            }
        }
        Ok(ann)
    }

    pub fn load_csv(path: &Path) -> Result<Self, MetricsError> {
        Self::parse_csv(&std::fs::read_to_string(path)?)
    }

    pub fn to_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for (id, tags) in &self.individual_errors {
            if tags.is_empty() {
                continue;
            }
            let tags = tags
                .iter()
                .map(|t| t.as_str())
                .collect::<Vec<_>>()
                .join(";");
            writer
                .serialize(CsvOut {
                    kind: "individual",
                    id_or_triple: id.clone(),
                    tags,
                })
                .expect("in-memory csv");
        }
        for r in &self.relation_errors {
            writer
                .serialize(CsvOut {
                    kind: "relation",
                    id_or_triple: format!("{}|{}|{}", r.property, r.subject, r.object),
                    tags: "wr".into(),
                })
                .expect("in-memory csv");
        }
        let bytes = writer.into_inner().expect("in-memory csv");
        let text = String::from_utf8(bytes).expect("csv of utf-8 input");
        if text.is_empty() {
            "kind,id_or_triple,tags\n".to_string()
        } else {
            text
        }
    }

    /// Every annotated individual and triple must exist in `o`.
    pub fn validate(&self, o: &Ontology) -> Result<(), MetricsError> {
        let mut missing: Vec<String> = self
            .individual_errors
            .keys()
            .filter(|id| o.individual(id).is_none())
            .cloned()
            .collect();
        missing.extend(
            self.relation_errors
                .iter()
                .filter(|r| !o.has_relation(r))
                .map(|r| format!("{}|{}|{}", r.property, r.subject, r.object)),
        );
        if missing.is_empty() {
            Ok(())
        } else {
            Err(MetricsError::UnknownEntities(missing))
        }
    }
}

/// `num / den` rendered half-up to four decimals; undefined when `den` is 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: usize,
    pub den: usize,
}

impl Ratio {
    pub fn new(num: usize, den: usize) -> Self {
        Self { num, den }
    }

    /// The ratio scaled by 10⁴ and rounded half-up.
    pub fn basis_points(&self) -> Option<u128> {
        if self.den == 0 {
            return None;
        }
        let (n, d) = (self.num as u128, self.den as u128);
        Some((2 * n * 10_000 + d) / (2 * d))
    }

    pub fn rounded(&self) -> Option<f64> {
        self.basis_points().map(|b| b as f64 / 10_000.0)
    }

    pub fn exact(&self) -> Option<f64> {
        (self.den != 0).then(|| self.num as f64 / self.den as f64)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.basis_points() {
            Some(b) => write!(f, "{}.{:04}", b / 10_000, b % 10_000),
            None => f.write_str("n/a"),
        }
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.basis_points() {
            Some(_) => s.serialize_str(&self.to_string()),
            None => s.serialize_none(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    #[serde(rename = "TE")]
    pub te: usize,
    #[serde(rename = "E_mis")]
    pub e_mis: usize,
    #[serde(rename = "E_ii")]
    pub e_ii: usize,
    #[serde(rename = "E_mi")]
    pub e_mi: usize,
    #[serde(rename = "E_ci")]
    pub e_ci: usize,
    #[serde(rename = "E_di")]
    pub e_di: usize,
    #[serde(rename = "E_wr")]
    pub e_wr: usize,
    #[serde(rename = "RIE")]
    pub rie: Ratio,
    #[serde(rename = "RRE")]
    pub rre: Ratio,
}

/// Counts errors by type. An individual with several tags counts once
/// towards TE.
pub fn error_report(stats: &StructuralStats, ann: &ErrorAnnotation) -> ErrorReport {
    let count = |tag: ErrorTag| {
        ann.individual_errors
            .values()
            .filter(|tags| tags.contains(&tag))
            .count()
    };
    let te = ann
        .individual_errors
        .values()
        .filter(|tags| !tags.is_empty())
        .count();
    let e_wr = ann.relation_errors.len();
    ErrorReport {
        te,
        e_mis: count(ErrorTag::Mis),
        e_ii: count(ErrorTag::Ii),
        e_mi: count(ErrorTag::Mi),
        e_ci: count(ErrorTag::Ci),
        e_di: count(ErrorTag::Di),
        e_wr,
        rie: Ratio::new(te, stats.ti),
        rre: Ratio::new(e_wr, stats.tr),
    }
}

/// Validates the annotation against `o` and computes both tables.
pub fn evaluate(
    o: &Ontology,
    ann: &ErrorAnnotation,
) -> Result<(StructuralStats, ErrorReport), MetricsError> {
    ann.validate(o)?;
    let stats = structural_stats(o);
    let report = error_report(&stats, ann);
    Ok((stats, report))
}

/// Right-aligned two-row table.
pub fn render_table(columns: &[(&str, String)]) -> String {
    let widths: Vec<usize> = columns
        .iter()
        .map(|(h, v)| h.chars().count().max(v.chars().count()))
        .collect();
    let row = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    format!(
        "{}\n{}\n",
        row(columns.iter().map(|(h, _)| *h).collect()),
        row(columns.iter().map(|(_, v)| v.as_str()).collect())
    )
}

impl StructuralStats {
    pub fn table(&self) -> String {
        render_table(&[
            ("TI", self.ti.to_string()),
            ("minCW", self.min_cw.to_string()),
            ("maxCW", self.max_cw.to_string()),
            ("TL", self.tl.to_string()),
            ("TR", self.tr.to_string()),
        ])
    }
}

impl ErrorReport {
    pub fn table(&self, stats: &StructuralStats) -> String {
        render_table(&[
            ("TI", stats.ti.to_string()),
            ("TE", self.te.to_string()),
            ("E_mis", self.e_mis.to_string()),
            ("E_ii", self.e_ii.to_string()),
            ("E_mi", self.e_mi.to_string()),
            ("E_ci", self.e_ci.to_string()),
            ("E_di", self.e_di.to_string()),
            ("RIE", self.rie.to_string()),
            ("TR", stats.tr.to_string()),
            ("E_wr", self.e_wr.to_string()),
            ("RRE", self.rre.to_string()),
        ])
    }
}
