//! Synthetic ground truth for offline evaluation.
//!
//! [`generate_kb`] builds a seeded taxonomy with invented member names and
//! one relation family, [`NoisyOracle`] answers pipeline queries from it
//! with configurable noise, and [`auto_annotate`] tags the pipeline output
//! against the truth so the usual error ratios can be computed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::metrics::{
    error_report, structural_stats, ErrorAnnotation, ErrorReport, ErrorTag, MetricsError, Ratio,
    StructuralStats,
};
use crate::ontology::{canonical_identifier, ClassDef, Ontology, OntologyError, PropertyDef};
use crate::oracle::{Backend, BackendError, Completion, Oracle, SamplingParams};
use crate::phases::{run_pipeline, AuditRecord, PhaseError, PipelineConfig};
use crate::templates::{TemplateKind, TemplateLibrary, CLOSE, OPEN};

pub const PROPERTY: &str = "ingredientOf";
pub const REFUSAL: &str = "I'm sorry, as an AI language model I cannot list those.";

const INDIVIDUAL_SEEKING: &str = "List examples of ⟨class⟩, names only.";
const RELATION_SEEKING: &str = "List the ⟨property⟩ of ⟨individual⟩, names only.";
const BEST_MATCH: &str =
    "Which class fits ⟨individual⟩ best among: ⟨classes⟩? Answer with the class name only.";
const MERGING: &str =
    "Within the class ⟨class⟩, are ⟨ind_1⟩ and ⟨ind_2⟩ the same entity? Answer yes or no.";

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("ontology does not share the ground-truth taxonomy: {0}")]
    TaxonomyMismatch(String),
    #[error("malformed ground-truth file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbParams {
    pub n_classes: usize,
    pub branching: usize,
    pub members_per_class: usize,
    pub relations_per_member: usize,
}

impl Default for KbParams {
    fn default() -> Self {
        Self {
            n_classes: 10,
            branching: 2,
            members_per_class: 5,
            relations_per_member: 2,
        }
    }
}

/// Which class a ground-truth name belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolved {
    pub id: String,
    /// False for a near-duplicate spelling of the name.
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthKB {
    pub seed: u64,
    pub params: KbParams,
    /// Classes and the relation property, no individuals.
    pub taxonomy: Ontology,
    /// Class id → ids of the members whose most specific class it is.
    pub members: BTreeMap<String, BTreeSet<String>>,
    /// `(property, subject id)` → object ids.
    pub relations: BTreeMap<(String, String), BTreeSet<String>>,
    labels: BTreeMap<String, String>,
    home: BTreeMap<String, String>,
}

fn word(rng: &mut impl Rng, syllables: usize) -> String {
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
        w.push(VOWELS[rng.gen_range(0..VOWELS.len())] as char);
    }
    let mut chars = w.chars();
    let first = chars.next().expect("non-empty").to_ascii_uppercase();
    std::iter::once(first).chain(chars).collect()
}

fn fresh_word(rng: &mut impl Rng, used: &mut BTreeSet<String>, syllables: usize) -> String {
    loop {
        let w = word(rng, syllables);
        if used.insert(w.to_ascii_lowercase()) {
            return w;
        }
    }
}

/// Deterministic ground truth. Class `k > 0` has parent `(k - 1) / branching`
/// and, occasionally, a second earlier parent. The relation property links
/// members below class 1 to members below class 2 (both fall back to the
/// root in tiny taxonomies).
pub fn generate_kb(seed: u64, params: KbParams) -> Result<GroundTruthKB> {
    let KbParams {
        n_classes,
        branching,
        members_per_class,
        relations_per_member,
    } = params;
    if n_classes == 0 || branching == 0 || members_per_class == 0 || relations_per_member == 0 {
        return Err(HarnessError::InvalidParams(
            "all sizes must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = BTreeSet::new();
    let mut taxonomy = Ontology::new();
    let mut ids: Vec<String> = Vec::with_capacity(n_classes);
    for k in 0..n_classes {
        let mut class = ClassDef::new(&fresh_word(&mut rng, &mut used, 3))?;
        if k > 0 {
            let primary = (k - 1) / branching;
            class = class.with_parent(&ids[primary]);
            let extra = rng.gen_range(0..k);
            if rng.gen_bool(0.2)
                && extra != primary
                && !taxonomy.is_subsumed(&ids[primary], &ids[extra])?
            {
                class = class.with_parent(&ids[extra]);
            }
        }
        ids.push(class.id.clone());
        taxonomy.add_class(class)?;
    }
    let domain = ids[1.min(n_classes - 1)].clone();
    let range = ids[2.min(n_classes - 1)].clone();
    taxonomy
        .add_property(PropertyDef::new(PROPERTY, &domain, &range).with_fancy_name("ingredients"))?;

    let mut members = BTreeMap::new();
    let mut labels = BTreeMap::new();
    for class in &ids {
        let mut set = BTreeSet::new();
        for _ in 0..members_per_class {
            let syllables = rng.gen_range(3..=4);
            let label = fresh_word(&mut rng, &mut used, syllables);
            let id = canonical_identifier(&label)?;
            labels.insert(id.clone(), label);
            set.insert(id);
        }
        members.insert(class.clone(), set);
    }

    let below = |root: &str| -> Vec<String> {
        members
            .iter()
            .filter(|(c, _)| taxonomy.is_subsumed(c, root).unwrap_or(false))
            .flat_map(|(_, m)| m.iter().cloned())
            .collect()
    };
    let subjects = below(&domain);
    let objects = below(&range);
    let mut relations = BTreeMap::new();
    for subject in subjects {
        let pool: Vec<&String> = objects.iter().filter(|o| **o != subject).collect();
        let mut chosen = BTreeSet::new();
        while chosen.len() < relations_per_member.min(pool.len()) {
            chosen.insert(pool[rng.gen_range(0..pool.len())].clone());
        }
        if !chosen.is_empty() {
            relations.insert((PROPERTY.to_string(), subject), chosen);
        }
    }
    Ok(GroundTruthKB::from_parts(
        seed, params, taxonomy, members, relations, labels,
    ))
}

impl GroundTruthKB {
    fn from_parts(
        seed: u64,
        params: KbParams,
        taxonomy: Ontology,
        members: BTreeMap<String, BTreeSet<String>>,
        relations: BTreeMap<(String, String), BTreeSet<String>>,
        labels: BTreeMap<String, String>,
    ) -> Self {
        let home = members
            .iter()
            .flat_map(|(c, ms)| ms.iter().map(move |m| (m.clone(), c.clone())))
            .collect();
        Self {
            seed,
            params,
            taxonomy,
            members,
            relations,
            labels,
            home,
        }
    }

    pub fn member_count(&self) -> usize {
        self.home.len()
    }

    pub fn label(&self, id: &str) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn true_class(&self, id: &str) -> Option<&str> {
        self.home.get(id).map(String::as_str)
    }

    /// Maps a name, or its near-duplicate spelling with a trailing `s`, to
    /// a ground-truth member.
    pub fn resolve(&self, name: &str) -> Option<Resolved> {
        let id = canonical_identifier(name).ok()?;
        if self.home.contains_key(&id) {
            return Some(Resolved { id, exact: true });
        }
        let stem = id.strip_suffix('s')?;
        self.home.contains_key(stem).then(|| Resolved {
            id: stem.to_string(),
            exact: false,
        })
    }

    pub fn is_true_relation(&self, property: &str, subject: &str, object: &str) -> bool {
        let (Some(s), Some(o)) = (self.resolve(subject), self.resolve(object)) else {
            return false;
        };
        self.relations
            .get(&(property.to_string(), s.id))
            .is_some_and(|objs| objs.contains(&o.id))
    }

    /// The taxonomy with every member asserted in its class and every true
    /// relation asserted.
    pub fn truth_ontology(&self) -> Result<Ontology> {
        let mut o = self.taxonomy.clone();
        for (class, ids) in &self.members {
            for id in ids {
                o.add_to_class(&self.labels[id], class)?;
            }
        }
        for ((property, subject), objects) in &self.relations {
            for object in objects {
                o.assert_relation(property, subject, object)?;
            }
        }
        Ok(o)
    }

    /// Members whose class is subsumed by `class`.
    fn members_below(&self, class: &str) -> Vec<&String> {
        self.members
            .iter()
            .filter(|(c, _)| self.taxonomy.is_subsumed(c, class).unwrap_or(false))
            .flat_map(|(_, m)| m.iter())
            .collect()
    }

    /// Members of classes incomparable with `class`.
    fn unrelated_members(&self, class: &str) -> Vec<&String> {
        self.members
            .iter()
            .filter(|(c, _)| {
                !self.taxonomy.is_subsumed(c, class).unwrap_or(true)
                    && !self.taxonomy.is_subsumed(class, c).unwrap_or(true)
            })
            .flat_map(|(_, m)| m.iter())
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthFile {
    seed: u64,
    params: KbParams,
    members: BTreeMap<String, BTreeSet<String>>,
    relations: Vec<TruthRelation>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthRelation {
    property: String,
    subject: String,
    objects: BTreeSet<String>,
}

/// Sidecar path for a KB stored at `path`: `kb.json` → `kb.truth.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.truth.json"))
}

/// Writes the truth ontology to `path` and seed, sizes, class membership
/// and relation truth to the sidecar.
pub fn save_kb(kb: &GroundTruthKB, path: &Path) -> Result<()> {
    kb.truth_ontology()?.save(path)?;
    let file = TruthFile {
        seed: kb.seed,
        params: kb.params,
        members: kb.members.clone(),
        relations: kb
            .relations
            .iter()
            .map(|((p, s), objects)| TruthRelation {
                property: p.clone(),
                subject: s.clone(),
                objects: objects.clone(),
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("truth file serializes");
    text.push('\n');
    crate::fsutil::write_atomic(&sidecar_path(path), text.as_bytes())?;
    Ok(())
}

pub fn load_kb(path: &Path) -> Result<GroundTruthKB> {
    let truth = Ontology::load(path)?;
    let sidecar = sidecar_path(path);
    let file: TruthFile = serde_json::from_str(&std::fs::read_to_string(&sidecar)?)
        .map_err(|e| HarnessError::Malformed(format!("{}: {e}", sidecar.display())))?;
    let mut labels = BTreeMap::new();
    for (class, ids) in &file.members {
        for id in ids {
            let individual = truth
                .individual(id)
                .filter(|i| i.asserted_classes.contains(class))
                .ok_or_else(|| {
                    HarnessError::Malformed(format!("member {id} of {class} not in ontology"))
                })?;
            labels.insert(id.clone(), individual.label.clone());
        }
    }
    let relations = file
        .relations
        .into_iter()
        .map(|r| ((r.property, r.subject), r.objects))
        .collect();
    Ok(GroundTruthKB::from_parts(
        file.seed,
        file.params,
        truth.skeleton(),
        file.members,
        relations,
        labels,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub hallucination_rate: f64,
    pub refusal_rate: f64,
    pub duplication_rate: f64,
    pub seed: u64,
}

impl NoiseProfile {
    pub fn new(
        hallucination_rate: f64,
        refusal_rate: f64,
        duplication_rate: f64,
        seed: u64,
    ) -> Result<Self> {
        let p = Self {
            hallucination_rate,
            refusal_rate,
            duplication_rate,
            seed,
        };
        for (name, v) in [
            ("hallucination", hallucination_rate),
            ("refusal", refusal_rate),
            ("duplication", duplication_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(HarnessError::InvalidParams(format!(
                    "{name} rate {v} outside [0, 1]"
                )));
            }
        }
        Ok(p)
    }

    pub fn zero(seed: u64) -> Self {
        Self {
            hallucination_rate: 0.0,
            refusal_rate: 0.0,
            duplication_rate: 0.0,
            seed,
        }
    }
}

/// The template library whose queries [`NoisyOracle`] understands.
pub fn templates() -> TemplateLibrary {
    TemplateLibrary::new()
        .with_pattern(TemplateKind::IndividualSeeking, INDIVIDUAL_SEEKING)
        .and_then(|l| l.with_pattern(TemplateKind::RelationSeeking, RELATION_SEEKING))
        .and_then(|l| l.with_pattern(TemplateKind::BestMatch, BEST_MATCH))
        .and_then(|l| l.with_pattern(TemplateKind::Merging, MERGING))
        .expect("harness templates are valid")
}

fn template_regex(text: &str) -> Regex {
    let mut pattern = String::from("^");
    let mut rest = text;
    while let Some(start) = rest.find(OPEN) {
        pattern.push_str(&regex::escape(&rest[..start]));
        let after = &rest[start + OPEN.len_utf8()..];
        let end = after.find(CLOSE).expect("validated template");
        pattern.push_str(&format!("(?P<{}>.+)", &after[..end]));
        rest = &after[end + CLOSE.len_utf8()..];
    }
    pattern.push_str(&regex::escape(rest));
    pattern.push('$');
    Regex::new(&pattern).expect("escaped template")
}

/// Answers harness queries from a [`GroundTruthKB`].
///
/// Each query gets its own generator seeded from the profile seed and the
/// query text, so answers are reproducible and independent of call order.
/// Noise is drawn per true name: a plural near-duplicate with probability
/// `d`, an extra wrong name with probability `h`. Wrong names in class
/// lists come from incomparable classes; wrong relation objects come from
/// the range but are not related to the subject. A
/// whole list is replaced by a refusal with probability `r`. Best-match
/// answers pick a wrong candidate with probability `h`.
pub struct NoisyOracle {
    kb: Arc<GroundTruthKB>,
    profile: NoiseProfile,
    individual_seeking: Regex,
    relation_seeking: Regex,
    best_match: Regex,
    merging: Regex,
    calls: AtomicUsize,
}

impl NoisyOracle {
    pub fn new(kb: Arc<GroundTruthKB>, profile: NoiseProfile) -> Self {
        Self {
            kb,
            profile,
            individual_seeking: template_regex(INDIVIDUAL_SEEKING),
            relation_seeking: template_regex(RELATION_SEEKING),
            best_match: template_regex(BEST_MATCH),
            merging: template_regex(MERGING),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn rng_for(&self, query: &str) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.profile.seed.to_le_bytes());
        hasher.update(query.as_bytes());
        ChaCha8Rng::from_seed(hasher.finalize().into())
    }

    fn class_named(&self, display: &str) -> Option<String> {
        let id = canonical_identifier(display).ok()?;
        self.kb.taxonomy.class(&id).map(|c| c.id.clone())
    }

    /// `unrelated` is the pool hallucinated names are drawn from.
    fn noisy_list(
        &self,
        rng: &mut ChaCha8Rng,
        truth: &BTreeSet<String>,
        unrelated: &[&String],
    ) -> String {
        // every draw is made unconditionally so that runs at different rates
        // see the same random stream
        let refuse = rng.gen::<f64>() < self.profile.refusal_rate;
        let mut names = Vec::new();
        for id in truth {
            let label = self.kb.labels[id].clone();
            let duplicate = rng.gen::<f64>() < self.profile.duplication_rate;
            let hallucinate = rng.gen::<f64>() < self.profile.hallucination_rate;
            let pick: usize = rng.gen();
            let invented = word(rng, 4) + "n";
            names.push(label.clone());
            if duplicate {
                names.push(format!("{label}s"));
            }
            if hallucinate {
                names.push(if unrelated.is_empty() {
                    invented
                } else {
                    self.kb.labels[unrelated[pick % unrelated.len()]].clone()
                });
            }
        }
        if refuse || names.is_empty() {
            return REFUSAL.to_string();
        }
        names
            .iter()
            .enumerate()
            .map(|(n, name)| format!("{}. {name}", n + 1))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn answer(&self, query: &str) -> String {
        let mut rng = self.rng_for(query);
        let kb = &self.kb;
        if let Some(c) = self.individual_seeking.captures(query) {
            let Some(class) = self.class_named(&c["class"]) else {
                return REFUSAL.into();
            };
            return self.noisy_list(&mut rng, &kb.members[&class], &kb.unrelated_members(&class));
        }
        if let Some(c) = self.relation_seeking.captures(query) {
            let property = kb
                .taxonomy
                .properties()
                .find(|p| kb.taxonomy.display_name(&p.id).ok() == Some(&c["property"]));
            let subject = kb.resolve(&c["individual"]);
            let (Some(property), Some(subject)) = (property, subject) else {
                return REFUSAL.into();
            };
            let empty = BTreeSet::new();
            let objects = kb
                .relations
                .get(&(property.id.clone(), subject.id.clone()))
                .unwrap_or(&empty);
            // wrong objects come from the range, so relation noise shows up
            // as invalid triples rather than misplaced individuals
            let distractors: Vec<&String> = kb
                .members_below(&property.range)
                .into_iter()
                .filter(|m| !objects.contains(*m) && **m != subject.id)
                .collect();
            return self.noisy_list(&mut rng, objects, &distractors);
        }
        if let Some(c) = self.best_match.captures(query) {
            let Some(member) = kb.resolve(&c["individual"]) else {
                return REFUSAL.into();
            };
            let home = kb.home[&member.id].clone();
            let candidates: Vec<String> = c["classes"]
                .split(", ")
                .filter_map(|d| self.class_named(d))
                .collect();
            let correct = candidates
                .iter()
                .find(|cand| kb.taxonomy.is_subsumed(&home, cand).unwrap_or(false))
                .cloned();
            let wrong: Vec<&String> = candidates
                .iter()
                .filter(|c| Some(*c) != correct.as_ref())
                .collect();
            let mislead = rng.gen::<f64>() < self.profile.hallucination_rate;
            let pick: usize = rng.gen();
            let chosen = if mislead && !wrong.is_empty() {
                wrong[pick % wrong.len()].clone()
            } else {
                correct.unwrap_or(home)
            };
            return kb
                .taxonomy
                .display_name(&chosen)
                .unwrap_or_default()
                .to_string();
        }
        if let Some(c) = self.merging.captures(query) {
            let same = match (kb.resolve(&c["ind_1"]), kb.resolve(&c["ind_2"])) {
                (Some(a), Some(b)) => a.id == b.id,
                _ => false,
            };
            return if same { "Yes." } else { "No." }.into();
        }
        REFUSAL.into()
    }
}

impl Backend for NoisyOracle {
    fn id(&self) -> &str {
        "noisy"
    }

    fn complete(
        &self,
        query: &str,
        _params: &SamplingParams,
    ) -> std::result::Result<Completion, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(Completion::new(self.answer(query)))
    }
}

/// Tags the individuals and relations of `o` against the ground truth:
///
/// - `ci` when the name is the display name of one of its own classes;
/// - `mis` when a ground-truth member is not asserted exactly in its class;
/// - `di` on every extra individual resolving to the same member;
/// - `ii` for other class names used as individuals;
/// - `mi` for names unknown to the KB;
/// - `wr` for triples absent from the relation truth.
pub fn auto_annotate(o: &Ontology, kb: &GroundTruthKB) -> Result<ErrorAnnotation> {
    let ours: BTreeSet<&str> = o.classes().map(|c| c.id.as_str()).collect();
    let theirs: BTreeSet<&str> = kb.taxonomy.classes().map(|c| c.id.as_str()).collect();
    if ours != theirs {
        let diff: Vec<&str> = ours.symmetric_difference(&theirs).copied().collect();
        return Err(HarnessError::TaxonomyMismatch(diff.join(", ")));
    }
    let class_names: BTreeMap<String, String> = o
        .classes()
        .filter_map(|c| {
            let display = o.display_name(&c.id).ok()?;
            Some((canonical_identifier(display).ok()?, c.id.clone()))
        })
        .collect();

    let mut ann = ErrorAnnotation::default();
    let mut groups: BTreeMap<String, Vec<(bool, String)>> = BTreeMap::new();
    for individual in o.individuals() {
        let id = individual.id.as_str();
        if class_names
            .get(id)
            .is_some_and(|c| individual.asserted_classes.contains(c))
        {
            ann.tag_individual(id, ErrorTag::Ci);
            continue;
        }
        match kb.resolve(id) {
            Some(r) => {
                let home = &kb.home[&r.id];
                if individual.asserted_classes.len() != 1
                    || !individual.asserted_classes.contains(home)
                {
                    ann.tag_individual(id, ErrorTag::Mis);
                }
                groups
                    .entry(r.id)
                    .or_default()
                    .push((!r.exact, id.to_string()));
            }
            None if class_names.contains_key(id) => ann.tag_individual(id, ErrorTag::Ii),
            None => ann.tag_individual(id, ErrorTag::Mi),
        }
    }
    for mut group in groups.into_values() {
        group.sort();
        for (_, id) in group.into_iter().skip(1) {
            ann.tag_individual(&id, ErrorTag::Di);
        }
    }
    for r in o.relations() {
        if !kb.is_true_relation(&r.property, &r.subject, &r.object) {
            ann.relation_errors.insert(r.clone());
        }
    }
    Ok(ann)
}

#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub stats: StructuralStats,
    pub errors: ErrorReport,
    /// Ground-truth members present and asserted exactly in their class.
    pub completeness: Ratio,
    pub annotation: ErrorAnnotation,
}

pub fn evaluate(o: &Ontology, kb: &GroundTruthKB) -> Result<Evaluation> {
    let annotation = auto_annotate(o, kb)?;
    let stats = structural_stats(o);
    let errors = error_report(&stats, &annotation);
    let placed = kb
        .home
        .iter()
        .filter(|(id, class)| {
            o.individual(id).is_some_and(|i| {
                i.asserted_classes.len() == 1 && i.asserted_classes.contains(*class)
            })
        })
        .count();
    Ok(Evaluation {
        stats,
        errors,
        completeness: Ratio::new(placed, kb.member_count()),
        annotation,
    })
}

pub struct Simulation {
    pub ontology: Ontology,
    pub records: Vec<AuditRecord>,
    pub evaluation: Evaluation,
    pub oracle_calls: usize,
}

/// Runs the full pipeline on the KB taxonomy against a [`NoisyOracle`]
/// and evaluates the result.
pub fn simulate(
    kb: &Arc<GroundTruthKB>,
    profile: NoiseProfile,
    lambda: usize,
) -> Result<Simulation> {
    let backend = Arc::new(NoisyOracle::new(kb.clone(), profile));
    let oracle = Oracle::new(backend.clone());
    let mut config = PipelineConfig::new(templates(), SamplingParams::for_model("synthetic"));
    config.lambda = lambda;
    let mut ontology = kb.taxonomy.clone();
    let mut records = Vec::new();
    run_pipeline(&mut ontology, &config, &oracle, &mut records)?;
    let evaluation = evaluate(&ontology, kb)?;
    Ok(Simulation {
        ontology,
        records,
        evaluation,
        oracle_calls: backend.calls(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub hallucination_rate: f64,
    pub runs: usize,
    pub mean_rie: f64,
    pub mean_rre: f64,
    pub mean_completeness: f64,
}

/// Mean error ratios over `seeds` for each hallucination rate; KB and
/// noise share the seed of a run. Undefined ratios count as 0.
pub fn noise_sweep(
    params: KbParams,
    seeds: &[u64],
    rates: &[f64],
    refusal_rate: f64,
    duplication_rate: f64,
    lambda: usize,
) -> Result<Vec<SweepRow>> {
    if seeds.is_empty() {
        return Err(HarnessError::InvalidParams("no seeds".into()));
    }
    let kbs = seeds
        .iter()
        .map(|&s| generate_kb(s, params).map(Arc::new))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for &h in rates {
        let (mut rie, mut rre, mut comp) = (0.0, 0.0, 0.0);
        for (kb, &seed) in kbs.iter().zip(seeds) {
            let profile = NoiseProfile::new(h, refusal_rate, duplication_rate, seed)?;
            let e = simulate(kb, profile, lambda)?.evaluation;
            rie += e.errors.rie.exact().unwrap_or(0.0);
            rre += e.errors.rre.exact().unwrap_or(0.0);
            comp += e.completeness.exact().unwrap_or(0.0);
        }
        let n = seeds.len() as f64;
        rows.push(SweepRow {
            hallucination_rate: h,
            runs: seeds.len(),
            mean_rie: rie / n,
            mean_rre: rre / n,
            mean_completeness: comp / n,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phases::DEFAULT_LAMBDA;

    fn kb(seed: u64) -> Arc<GroundTruthKB> {
        Arc::new(generate_kb(seed, KbParams::default()).unwrap())
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(*kb(7), *kb(7));
        assert_ne!(kb(7).members, kb(8).members);
    }

    #[test]
    fn generated_shape() {
        let kb = kb(1);
        assert_eq!(kb.taxonomy.class_count(), 10);
        assert_eq!(kb.member_count(), 50);
        assert!(!kb.relations.is_empty());
        kb.truth_ontology().unwrap().validate().unwrap();
        assert!(generate_kb(
            1,
            KbParams {
                n_classes: 0,
                ..KbParams::default()
            }
        )
        .is_err());
    }

    #[test]
    fn template_regex_captures() {
        let re = template_regex(MERGING);
        let q = templates()
            .render(
                &templates().templates(TemplateKind::Merging)[0],
                &[
                    ("class", "Kotavu"),
                    ("ind_1", "Balomi"),
                    ("ind_2", "Balomis"),
                ],
            )
            .unwrap();
        let c = re.captures(&q).unwrap();
        assert_eq!(
            (&c["class"], &c["ind_1"], &c["ind_2"]),
            ("Kotavu", "Balomi", "Balomis")
        );
    }

    #[test]
    fn zero_noise_lists_are_exact() {
        let kb = kb(3);
        let oracle = NoisyOracle::new(kb.clone(), NoiseProfile::zero(3));
        let (class, ids) = kb.members.iter().next().unwrap();
        let display = kb.taxonomy.display_name(class).unwrap();
        let answer = oracle.answer(&format!("List examples of {display}, names only."));
        let names = crate::parser::extract_names(&answer, false).names;
        let got: BTreeSet<String> = names
            .iter()
            .map(|n| canonical_identifier(n).unwrap())
            .collect();
        assert_eq!(&got, ids);
    }

    #[test]
    fn noisy_answers_are_reproducible() {
        let kb = kb(3);
        let profile = NoiseProfile::new(0.2, 0.1, 0.1, 9).unwrap();
        let a = NoisyOracle::new(kb.clone(), profile);
        let b = NoisyOracle::new(kb.clone(), profile);
        for class in kb.members.keys() {
            let q = format!(
                "List examples of {}, names only.",
                kb.taxonomy.display_name(class).unwrap()
            );
            assert_eq!(a.answer(&q), b.answer(&q));
        }
    }

    #[test]
    fn full_refusal_yields_empty_ontology() {
        let kb = kb(2);
        let sim = simulate(
            &kb,
            NoiseProfile::new(0.0, 1.0, 0.0, 2).unwrap(),
            DEFAULT_LAMBDA,
        )
        .unwrap();
        assert_eq!(sim.ontology.individual_count(), 0);
        assert_eq!(sim.ontology.relation_count(), 0);
    }

    #[test]
    fn planted_errors_are_tagged_once() {
        let kb = kb(4);
        let mut o = kb.truth_ontology().unwrap();
        assert!(auto_annotate(&o, &kb).unwrap().is_empty());

        let (a, b): (Vec<_>, Vec<_>) = {
            let mut it = kb.members.iter();
            let (ca, ma) = it.next().unwrap();
            let (cb, _) = it
                .find(|(c, _)| !kb.taxonomy.is_subsumed(c, ca).unwrap())
                .unwrap();
            (vec![ma.iter().next().unwrap().clone()], vec![cb.clone()])
        };
        let mut wrong = o.clone();
        wrong.add_to_class(&a[0], &b[0]).unwrap();
        let ann = auto_annotate(&wrong, &kb).unwrap();
        assert_eq!(ann.individual_errors.len(), 1);
        assert_eq!(
            ann.individual_errors[&a[0]],
            BTreeSet::from([ErrorTag::Mis])
        );

        let root = kb.taxonomy.classes().next().unwrap().id.clone();
        o.add_to_class("Qxqxqx", &root).unwrap();
        let ann = auto_annotate(&o, &kb).unwrap();
        assert_eq!(ann.individual_errors.len(), 1);
        assert_eq!(
            ann.individual_errors["qxqxqx"],
            BTreeSet::from([ErrorTag::Mi])
        );
    }

    #[test]
    fn kb_persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.json");
        let kb = kb(5);
        save_kb(&kb, &path).unwrap();
        assert!(dir.path().join("kb.truth.json").exists());
        assert_eq!(load_kb(&path).unwrap(), *kb);
    }

    #[test]
    fn taxonomy_mismatch_is_rejected() {
        let kb = kb(6);
        assert!(matches!(
            auto_annotate(&Ontology::new(), &kb),
            Err(HarnessError::TaxonomyMismatch(_))
        ));
    }
}
