//! Ontology population driven by language-model oracles.
//!
//! A class/property skeleton is filled in four phases: individuals are
//! queried per class ([`phases::populate`]), relations per property
//! ([`phases::relate`]), individuals are pushed down to their most specific
//! class ([`phases::redistribute`]) and near-duplicates are merged
//! ([`phases::merge`]).

mod fsutil;
pub mod harness;
pub mod metrics;
pub mod ontology;
pub mod oracle;
pub mod parser;
pub mod phases;
pub mod templates;

pub use fsutil::write_atomic;
pub use ontology::{canonical_identifier, Ontology, OntologyError, TOP};
pub use parser::{extract_binary, extract_names, restrict_to_candidates, ParsedResponse, Verdict};
pub use templates::{TemplateKind, TemplateLibrary};
