//! Ontology model: classes arranged in a subsumption DAG, properties with
//! domain and range, individuals and relation triples.
//!
//! The universal class [`TOP`] is virtual: it is never declared, every
//! class without explicit parents is a direct subclass of it, and no
//! individual is ever asserted into it. The empty class is not modelled at
//! all.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil;

/// Identifier of the virtual universal class.
pub const TOP: &str = "⊤";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OntologyError {
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("unknown property `{0}`")]
    UnknownProperty(String),
    #[error("unknown individual `{0}`")]
    UnknownIndividual(String),
    #[error("rejected name {0:?}: nothing left after normalization")]
    RejectedName(String),
    #[error("invalid {kind} identifier {id:?}")]
    InvalidId { kind: &'static str, id: String },
    #[error("duplicate {kind} `{id}`")]
    Duplicate { kind: &'static str, id: String },
    #[error("class `{0}` lies on a subsumption cycle")]
    Cycle(String),
    #[error(
        "individual `{individual}` has id different from canonical form `{expected}` of its label"
    )]
    NonCanonicalIndividual {
        individual: String,
        expected: String,
    },
    #[error("individual `{individual}` is asserted into comparable classes `{a}` and `{b}`")]
    ComparableAssertions {
        individual: String,
        a: String,
        b: String,
    },
    #[error("{role} `{individual}` of {property} is outside class `{class}`")]
    OutsideClosure {
        property: String,
        role: &'static str,
        individual: String,
        class: String,
    },
    #[error("malformed ontology document: {0}")]
    Malformed(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, OntologyError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassDef {
    pub id: String,
    pub label: String,
    pub parents: BTreeSet<String>,
    pub fancy_name: Option<String>,
}

impl ClassDef {
    /// A class whose label doubles as its identifier source.
    pub fn new(label: &str) -> Result<Self> {
        Ok(Self {
            id: canonical_identifier(label)?,
            label: label.to_string(),
            parents: BTreeSet::new(),
            fancy_name: None,
        })
    }

    pub fn with_parent(mut self, parent: &str) -> Self {
        self.parents.insert(parent.to_string());
        self
    }

    pub fn with_fancy_name(mut self, fancy: &str) -> Self {
        self.fancy_name = Some(fancy.to_string());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PropertyDef {
    pub id: String,
    pub domain: String,
    pub range: String,
    pub fancy_name: Option<String>,
}

impl PropertyDef {
    pub fn new(id: &str, domain: &str, range: &str) -> Self {
        Self {
            id: id.to_string(),
            domain: domain.to_string(),
            range: range.to_string(),
            fancy_name: None,
        }
    }

    pub fn with_fancy_name(mut self, fancy: &str) -> Self {
        self.fancy_name = Some(fancy.to_string());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Individual {
    pub id: String,
    pub label: String,
    pub asserted_classes: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationAssertion {
    pub property: String,
    pub subject: String,
    pub object: String,
}

impl RelationAssertion {
    pub fn new(property: &str, subject: &str, object: &str) -> Self {
        Self {
            property: property.to_string(),
            subject: subject.to_string(),
            object: object.to_string(),
        }
    }
}

/// Effect of a single `add_to_class` call on the assertion set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassChange {
    /// Already asserted into the class or one of its subclasses.
    Unchanged,
    /// New assertion with nothing comparable to replace.
    Added,
    /// New assertion replacing assertions into strict superclasses.
    Specialized { replaced: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub individual: String,
    pub created: bool,
    pub change: ClassChange,
}

impl Assignment {
    pub fn is_noop(&self) -> bool {
        !self.created && self.change == ClassChange::Unchanged
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ontology {
    pub(crate) classes: BTreeMap<String, ClassDef>,
    pub(crate) properties: BTreeMap<String, PropertyDef>,
    pub(crate) individuals: BTreeMap<String, Individual>,
    pub(crate) relations: BTreeSet<RelationAssertion>,
}

/// Lowercases a surface name and collapses every run of non-alphanumeric
/// characters into one underscore, trimming underscores at both ends.
pub fn canonical_identifier(label: &str) -> Result<String> {
    let mut out = String::with_capacity(label.len());
    let mut pending_sep = false;
    for ch in label.trim().chars() {
        if ch.is_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            out.extend(ch.to_lowercase());
        } else {
            pending_sep = true;
        }
    }
    if out.is_empty() {
        return Err(OntologyError::RejectedName(label.to_string()));
    }
    Ok(out)
}

fn is_canonical_class_id(id: &str) -> bool {
    canonical_identifier(id).map(|c| c == id).unwrap_or(false)
}

fn is_valid_property_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_alphanumeric() || c == '_')
}

impl Ontology {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a class. Parents must already be declared, so classes
    /// added this way can never form a cycle.
    pub fn add_class(&mut self, class: ClassDef) -> Result<()> {
        if !is_canonical_class_id(&class.id) {
            return Err(OntologyError::InvalidId {
                kind: "class",
                id: class.id,
            });
        }
        if self.classes.contains_key(&class.id) {
            return Err(OntologyError::Duplicate {
                kind: "class",
                id: class.id,
            });
        }
        for parent in &class.parents {
            if !self.classes.contains_key(parent) {
                return Err(OntologyError::UnknownClass(parent.clone()));
            }
        }
        self.classes.insert(class.id.clone(), class);
        Ok(())
    }

    pub fn add_property(&mut self, property: PropertyDef) -> Result<()> {
        if !is_valid_property_id(&property.id) {
            return Err(OntologyError::InvalidId {
                kind: "property",
                id: property.id,
            });
        }
        if self.properties.contains_key(&property.id) {
            return Err(OntologyError::Duplicate {
                kind: "property",
                id: property.id,
            });
        }
        self.require_class(&property.domain)?;
        self.require_class(&property.range)?;
        self.properties.insert(property.id.clone(), property);
        Ok(())
    }

    pub fn class(&self, id: &str) -> Option<&ClassDef> {
        self.classes.get(id)
    }

    pub fn property(&self, id: &str) -> Option<&PropertyDef> {
        self.properties.get(id)
    }

    pub fn individual(&self, id: &str) -> Option<&Individual> {
        self.individuals.get(id)
    }

    pub fn classes(&self) -> impl Iterator<Item = &ClassDef> {
        self.classes.values()
    }

    pub fn properties(&self) -> impl Iterator<Item = &PropertyDef> {
        self.properties.values()
    }

    pub fn individuals(&self) -> impl Iterator<Item = &Individual> {
        self.individuals.values()
    }

    pub fn relations(&self) -> impl Iterator<Item = &RelationAssertion> {
        self.relations.iter()
    }

    pub fn has_relation(&self, relation: &RelationAssertion) -> bool {
        self.relations.contains(relation)
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn individual_count(&self) -> usize {
        self.individuals.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    /// Copy of this ontology with every individual and relation removed.
    pub fn skeleton(&self) -> Ontology {
        Ontology {
            classes: self.classes.clone(),
            properties: self.properties.clone(),
            ..Ontology::default()
        }
    }

    fn require_class(&self, id: &str) -> Result<()> {
        if self.classes.contains_key(id) {
            Ok(())
        } else {
            Err(OntologyError::UnknownClass(id.to_string()))
        }
    }

    fn require_class_or_top(&self, id: &str) -> Result<()> {
        if id == TOP {
            Ok(())
        } else {
            self.require_class(id)
        }
    }

    /// `a ⊑ b`: true when `a == b` or `b` is reachable from `a` by parent edges.
    pub fn is_subsumed(&self, a: &str, b: &str) -> Result<bool> {
        self.require_class_or_top(a)?;
        self.require_class_or_top(b)?;
        Ok(self.subsumed_unchecked(a, b))
    }

    pub(crate) fn subsumed_unchecked(&self, a: &str, b: &str) -> bool {
        if a == b || b == TOP {
            return true;
        }
        if a == TOP {
            return false;
        }
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([a]);
        while let Some(current) = queue.pop_front() {
            let Some(class) = self.classes.get(current) else {
                continue;
            };
            for parent in &class.parents {
                if parent == b {
                    return true;
                }
                if seen.insert(parent.as_str()) {
                    queue.push_back(parent);
                }
            }
        }
        false
    }

    /// Classes with no declared child.
    pub fn leaf_classes(&self) -> BTreeSet<String> {
        let with_children: BTreeSet<&str> = self
            .classes
            .values()
            .flat_map(|c| c.parents.iter().map(String::as_str))
            .collect();
        self.classes
            .keys()
            .filter(|id| !with_children.contains(id.as_str()))
            .cloned()
            .collect()
    }

    /// Direct subclasses of `class`; for [`TOP`] these are the parentless classes.
    pub fn direct_subclasses(&self, class: &str) -> Result<BTreeSet<String>> {
        self.require_class_or_top(class)?;
        Ok(self
            .classes
            .values()
            .filter(|c| {
                if class == TOP {
                    c.parents.is_empty()
                } else {
                    c.parents.contains(class)
                }
            })
            .map(|c| c.id.clone())
            .collect())
    }

    /// Individuals whose asserted classes contain `class` exactly.
    pub fn direct_members(&self, class: &str) -> Result<BTreeSet<String>> {
        self.require_class_or_top(class)?;
        Ok(self
            .individuals
            .values()
            .filter(|i| i.asserted_classes.contains(class))
            .map(|i| i.id.clone())
            .collect())
    }

    /// Individuals asserted into `class` or any of its subclasses.
    pub fn members_in_closure(&self, class: &str) -> Result<BTreeSet<String>> {
        self.require_class_or_top(class)?;
        Ok(self
            .individuals
            .values()
            .filter(|i| self.in_closure(i, class))
            .map(|i| i.id.clone())
            .collect())
    }

    fn in_closure(&self, individual: &Individual, class: &str) -> bool {
        individual
            .asserted_classes
            .iter()
            .any(|c| self.subsumed_unchecked(c, class))
    }

    /// Label used when rendering a class or property into a query.
    pub fn display_name(&self, entity: &str) -> Result<&str> {
        if let Some(class) = self.classes.get(entity) {
            return Ok(class.fancy_name.as_deref().unwrap_or(&class.label));
        }
        if let Some(property) = self.properties.get(entity) {
            return Ok(property.fancy_name.as_deref().unwrap_or(&property.id));
        }
        Err(OntologyError::UnknownClass(entity.to_string()))
    }

    /// Asserts an individual into `class` unless it already sits in that
    /// class or a more specific one. Assertions into strict superclasses of
    /// `class` are replaced; incomparable assertions are kept.
    pub fn add_to_class(&mut self, individual: &str, class: &str) -> Result<Assignment> {
        self.require_class(class)?;
        let id = canonical_identifier(individual)?;
        let created = !self.individuals.contains_key(&id);
        if created {
            self.individuals.insert(
                id.clone(),
                Individual {
                    id: id.clone(),
                    label: individual.trim().to_string(),
                    asserted_classes: BTreeSet::new(),
                },
            );
        }
        let current = self.individuals[&id].asserted_classes.clone();
        if current.iter().any(|c| self.subsumed_unchecked(c, class)) {
            return Ok(Assignment {
                individual: id,
                created,
                change: ClassChange::Unchanged,
            });
        }
        let replaced: Vec<String> = current
            .into_iter()
            .filter(|c| self.subsumed_unchecked(class, c))
            .collect();
        let entry = self.individuals.get_mut(&id).expect("inserted above");
        for c in &replaced {
            entry.asserted_classes.remove(c);
        }
        entry.asserted_classes.insert(class.to_string());
        let change = if replaced.is_empty() {
            ClassChange::Added
        } else {
            ClassChange::Specialized { replaced }
        };
        Ok(Assignment {
            individual: id,
            created,
            change,
        })
    }

    /// Idempotently inserts `property(subject, object)`. Returns whether the
    /// triple was new.
    pub fn assert_relation(&mut self, property: &str, subject: &str, object: &str) -> Result<bool> {
        let prop = self
            .properties
            .get(property)
            .ok_or_else(|| OntologyError::UnknownProperty(property.to_string()))?;
        for (role, id, class) in [
            ("subject", subject, &prop.domain),
            ("object", object, &prop.range),
        ] {
            let individual = self
                .individuals
                .get(id)
                .ok_or_else(|| OntologyError::UnknownIndividual(id.to_string()))?;
            if !self.in_closure(individual, class) {
                return Err(OntologyError::OutsideClosure {
                    property: property.to_string(),
                    role,
                    individual: id.to_string(),
                    class: class.clone(),
                });
            }
        }
        Ok(self
            .relations
            .insert(RelationAssertion::new(property, subject, object)))
    }

    /// Checks every structural invariant; used after loading a document.
    pub fn validate(&self) -> Result<()> {
        for (id, class) in &self.classes {
            if id != &class.id || !is_canonical_class_id(id) {
                return Err(OntologyError::InvalidId {
                    kind: "class",
                    id: id.clone(),
                });
            }
            for parent in &class.parents {
                self.require_class(parent)?;
            }
        }
        self.check_acyclic()?;
        for (id, prop) in &self.properties {
            if id != &prop.id || !is_valid_property_id(id) {
                return Err(OntologyError::InvalidId {
                    kind: "property",
                    id: id.clone(),
                });
            }
            self.require_class(&prop.domain)?;
            self.require_class(&prop.range)?;
        }
        for (id, individual) in &self.individuals {
            let expected = canonical_identifier(&individual.label)?;
            if id != &individual.id || &expected != id {
                return Err(OntologyError::NonCanonicalIndividual {
                    individual: id.clone(),
                    expected,
                });
            }
            for c in &individual.asserted_classes {
                self.require_class(c)?;
            }
            for a in &individual.asserted_classes {
                for b in &individual.asserted_classes {
                    if a < b && (self.subsumed_unchecked(a, b) || self.subsumed_unchecked(b, a)) {
                        return Err(OntologyError::ComparableAssertions {
                            individual: id.clone(),
                            a: a.clone(),
                            b: b.clone(),
                        });
                    }
                }
            }
        }
        for rel in &self.relations {
            let prop = self
                .properties
                .get(&rel.property)
                .ok_or_else(|| OntologyError::UnknownProperty(rel.property.clone()))?;
            for (role, id, class) in [
                ("subject", &rel.subject, &prop.domain),
                ("object", &rel.object, &prop.range),
            ] {
                let individual = self
                    .individuals
                    .get(id)
                    .ok_or_else(|| OntologyError::UnknownIndividual(id.clone()))?;
                if !self.in_closure(individual, class) {
                    return Err(OntologyError::OutsideClosure {
                        property: rel.property.clone(),
                        role,
                        individual: id.clone(),
                        class: class.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    fn check_acyclic(&self) -> Result<()> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Active,
            Done,
        }
        let mut marks: BTreeMap<&str, Mark> = BTreeMap::new();
        for start in self.classes.keys() {
            if marks.contains_key(start.as_str()) {
                continue;
            }
            // iterative DFS: (class, next parent index)
            let mut stack: Vec<(&str, Vec<&str>)> = Vec::new();
            marks.insert(start, Mark::Active);
            stack.push((start, self.parents_of(start)));
            while let Some((node, pending)) = stack.last_mut() {
                match pending.pop() {
                    Some(parent) => match marks.get(parent) {
                        Some(Mark::Active) => return Err(OntologyError::Cycle(parent.to_string())),
                        Some(Mark::Done) => {}
                        None => {
                            marks.insert(parent, Mark::Active);
                            let next = self.parents_of(parent);
                            stack.push((parent, next));
                        }
                    },
                    None => {
                        marks.insert(node, Mark::Done);
                        stack.pop();
                    }
                }
            }
        }
        Ok(())
    }

    fn parents_of(&self, id: &str) -> Vec<&str> {
        self.classes
            .get(id)
            .map(|c| c.parents.iter().map(String::as_str).collect())
            .unwrap_or_default()
    }

    pub fn load(path: &Path) -> Result<Ontology> {
        let text = std::fs::read_to_string(path).map_err(|e| OntologyError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        deserialize(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, serialize(self).as_bytes()).map_err(|e| OntologyError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

// On-disk layout. Field order is alphabetical so the derived serializer
// emits sorted keys.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    classes: Vec<ClassEntry>,
    individuals: Vec<IndividualEntry>,
    properties: Vec<PropertyEntry>,
    relations: Vec<RelationEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fancy_name: Option<String>,
    id: String,
    label: String,
    #[serde(default)]
    parents: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndividualEntry {
    classes: Vec<String>,
    id: String,
    label: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PropertyEntry {
    domain: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fancy_name: Option<String>,
    id: String,
    range: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelationEntry {
    object: String,
    property: String,
    subject: String,
}

/// Canonical JSON document: 2-space indent, sorted keys, sorted sets,
/// trailing newline.
pub fn serialize(o: &Ontology) -> String {
    let doc = Document {
        classes: o
            .classes
            .values()
            .map(|c| ClassEntry {
                fancy_name: c.fancy_name.clone(),
                id: c.id.clone(),
                label: c.label.clone(),
                parents: c.parents.iter().cloned().collect(),
            })
            .collect(),
        individuals: o
            .individuals
            .values()
            .map(|i| IndividualEntry {
                classes: i.asserted_classes.iter().cloned().collect(),
                id: i.id.clone(),
                label: i.label.clone(),
            })
            .collect(),
        properties: o
            .properties
            .values()
            .map(|p| PropertyEntry {
                domain: p.domain.clone(),
                fancy_name: p.fancy_name.clone(),
                id: p.id.clone(),
                range: p.range.clone(),
            })
            .collect(),
        relations: o
            .relations
            .iter()
            .map(|r| RelationEntry {
                object: r.object.clone(),
                property: r.property.clone(),
                subject: r.subject.clone(),
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("document is always serializable");
    text.push('\n');
    text
}

pub fn deserialize(text: &str) -> Result<Ontology> {
    let doc: Document =
        serde_json::from_str(text).map_err(|e| OntologyError::Malformed(e.to_string()))?;
    let mut o = Ontology::new();
    for c in doc.classes {
        if o.classes.contains_key(&c.id) {
            return Err(OntologyError::Duplicate {
                kind: "class",
                id: c.id,
            });
        }
        o.classes.insert(
            c.id.clone(),
            ClassDef {
                id: c.id,
                label: c.label,
                parents: c.parents.into_iter().collect(),
                fancy_name: c.fancy_name,
            },
        );
    }
    for p in doc.properties {
        if o.properties.contains_key(&p.id) {
            return Err(OntologyError::Duplicate {
                kind: "property",
                id: p.id,
            });
        }
        o.properties.insert(
            p.id.clone(),
            PropertyDef {
                id: p.id,
                domain: p.domain,
                range: p.range,
                fancy_name: p.fancy_name,
            },
        );
    }
    for i in doc.individuals {
        if o.individuals.contains_key(&i.id) {
            return Err(OntologyError::Duplicate {
                kind: "individual",
                id: i.id,
            });
        }
        o.individuals.insert(
            i.id.clone(),
            Individual {
                id: i.id,
                label: i.label,
                asserted_classes: i.classes.into_iter().collect(),
            },
        );
    }
    for r in doc.relations {
        let rel = RelationAssertion {
            property: r.property,
            subject: r.subject,
            object: r.object,
        };
        if !o.relations.insert(rel.clone()) {
            return Err(OntologyError::Duplicate {
                kind: "relation",
                id: format!("{}({}, {})", rel.property, rel.subject, rel.object),
            });
        }
    }
    o.validate()?;
    Ok(o)
}
