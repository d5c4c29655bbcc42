//! The four population phases and the pipeline that chains them.
//!
//! Every oracle call produces one [`AuditRecord`] carrying the query, the
//! raw response, what was extracted from it and the ontology mutations it
//! caused. Replaying the mutations of a run in order over the initial
//! ontology rebuilds the final one (see [`replay`]).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::{Assignment, ClassChange, Ontology, OntologyError, TOP};
use crate::oracle::{Oracle, OracleError, OracleResponse, SamplingParams};
use crate::parser::{extract_binary, restrict_to_candidates, ResponseParser, Verdict};
use crate::templates::{join_names, TemplateError, TemplateKind, TemplateLibrary};

pub const DEFAULT_LAMBDA: usize = 4;

#[derive(Debug, Error)]
pub enum PhaseError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error("{phase} phase aborted: {source}")]
    Oracle {
        phase: Phase,
        #[source]
        source: OracleError,
    },
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error("writing run output: {0}")]
    Output(#[from] std::io::Error),
}

impl PhaseError {
    pub fn is_oracle_failure(&self) -> bool {
        matches!(self, PhaseError::Oracle { .. })
    }
}

pub type Result<T> = std::result::Result<T, PhaseError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Populate,
    Relate,
    Redistribute,
    Merge,
}

impl Phase {
    pub const ALL: [Phase; 4] = [
        Phase::Populate,
        Phase::Relate,
        Phase::Redistribute,
        Phase::Merge,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Populate => "populate",
            Phase::Relate => "relate",
            Phase::Redistribute => "redistribute",
            Phase::Merge => "merge",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Mutation {
    AddToClass {
        individual: String,
        label: String,
        class: String,
        created: bool,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        replaced: Vec<String>,
    },
    Relate {
        property: String,
        subject: String,
        object: String,
    },
    Merge {
        survivor: String,
        dropped: String,
    },
}

impl Mutation {
    fn from_assignment(label: &str, class: &str, a: &Assignment) -> Option<Self> {
        if a.is_noop() {
            return None;
        }
        let replaced = match &a.change {
            ClassChange::Specialized { replaced } => replaced.clone(),
            _ => Vec::new(),
        };
        Some(Mutation::AddToClass {
            individual: a.individual.clone(),
            label: label.to_string(),
            class: class.to_string(),
            created: a.created,
            replaced,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub phase: Phase,
    /// Class being visited, when the phase walks the taxonomy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
    /// Individual(s) the query is about.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub individuals: Vec<String>,
    /// Candidate classes offered in a best-match query.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<String>,
    pub query: String,
    pub response: String,
    pub truncated: bool,
    pub from_cache: bool,
    pub temperature: f64,
    pub names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    pub mutations: Vec<Mutation>,
}

/// Receives audit records as they are produced and ontology snapshots at
/// phase boundaries.
pub trait RunObserver {
    fn record(&mut self, record: &AuditRecord) -> std::io::Result<()>;

    fn phase_finished(&mut self, _phase: Phase, _ontology: &Ontology) -> std::io::Result<()> {
        Ok(())
    }

    fn phase_aborted(&mut self, _phase: Phase, _ontology: &Ontology) -> std::io::Result<()> {
        Ok(())
    }
}

impl RunObserver for Vec<AuditRecord> {
    fn record(&mut self, record: &AuditRecord) -> std::io::Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

/// Writes an audit log, `<run-id>.<phase>.json` snapshots,
/// `<run-id>.<phase>.partial.json` on abort and keeps records in memory.
pub struct RunDirectory {
    dir: PathBuf,
    run_id: String,
    audit: std::fs::File,
    audit_path: PathBuf,
    records: Vec<AuditRecord>,
}

impl RunDirectory {
    /// Creates the directory and truncates any previous audit log of the
    /// same run id.
    pub fn create(dir: &Path, run_id: &str) -> std::io::Result<Self> {
        Self::with_audit_name(dir, run_id, &format!("{run_id}.audit.jsonl"))
    }

    /// Like [`RunDirectory::create`] but logs to `<run-id>.<phase>.audit.jsonl`,
    /// so phases run one command at a time keep separate logs.
    pub fn for_phase(dir: &Path, run_id: &str, phase: Phase) -> std::io::Result<Self> {
        Self::with_audit_name(dir, run_id, &format!("{run_id}.{phase}.audit.jsonl"))
    }

    fn with_audit_name(dir: &Path, run_id: &str, audit_name: &str) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let audit_path = dir.join(audit_name);
        let audit = std::fs::File::create(&audit_path)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            run_id: run_id.to_string(),
            audit,
            audit_path,
            records: Vec::new(),
        })
    }

    pub fn snapshot_path(&self, phase: Phase) -> PathBuf {
        self.dir.join(format!("{}.{}.json", self.run_id, phase))
    }

    pub fn final_path(&self) -> PathBuf {
        self.dir.join(format!("{}.json", self.run_id))
    }

    pub fn audit_path(&self) -> &Path {
        &self.audit_path
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn write_final(&self, ontology: &Ontology) -> std::io::Result<()> {
        save(ontology, &self.final_path())
    }
}

fn save(ontology: &Ontology, path: &Path) -> std::io::Result<()> {
    ontology
        .save(path)
        .map_err(|e| std::io::Error::other(e.to_string()))
}

impl RunObserver for RunDirectory {
    fn record(&mut self, record: &AuditRecord) -> std::io::Result<()> {
        let line = serde_json::to_string(record).map_err(std::io::Error::other)?;
        writeln!(self.audit, "{line}")?;
        self.audit.flush()?;
        self.records.push(record.clone());
        Ok(())
    }

    fn phase_finished(&mut self, phase: Phase, ontology: &Ontology) -> std::io::Result<()> {
        save(ontology, &self.snapshot_path(phase))
    }

    fn phase_aborted(&mut self, phase: Phase, ontology: &Ontology) -> std::io::Result<()> {
        save(
            ontology,
            &self
                .dir
                .join(format!("{}.{}.partial.json", self.run_id, phase)),
        )
    }
}

/// Reads an audit log written by [`RunDirectory`].
pub fn read_audit_log(path: &Path) -> std::io::Result<Vec<AuditRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(std::io::Error::other))
        .collect()
}

/// Everything a single phase needs besides the ontology.
pub struct PhaseContext<'a> {
    pub oracle: &'a Oracle,
    pub library: &'a TemplateLibrary,
    pub parser: &'a ResponseParser,
    pub params: SamplingParams,
    pub lambda: usize,
    pub observer: &'a mut dyn RunObserver,
}

impl PhaseContext<'_> {
    fn ask(&self, phase: Phase, query: &str, params: &SamplingParams) -> Result<OracleResponse> {
        self.oracle
            .ask(query, params)
            .map_err(|source| PhaseError::Oracle { phase, source })
    }

    fn emit(&mut self, record: AuditRecord) -> Result<()> {
        self.observer.record(&record)?;
        Ok(())
    }
}

fn record_for(
    phase: Phase,
    query: String,
    response: &OracleResponse,
    params: &SamplingParams,
) -> AuditRecord {
    AuditRecord {
        phase,
        class: None,
        individuals: Vec::new(),
        candidates: Vec::new(),
        query,
        response: response.text.clone(),
        truncated: response.truncated,
        from_cache: response.from_cache,
        temperature: params.temperature,
        names: Vec::new(),
        verdict: None,
        mutations: Vec::new(),
    }
}

fn require_root(o: &Ontology, root: &str) -> Result<()> {
    o.direct_subclasses(root)?;
    Ok(())
}

fn children_map(o: &Ontology) -> BTreeMap<String, BTreeSet<String>> {
    let mut map: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for class in o.classes() {
        map.entry(class.id.clone()).or_default();
        if class.parents.is_empty() {
            map.entry(TOP.to_string())
                .or_default()
                .insert(class.id.clone());
        }
        for parent in &class.parents {
            map.entry(parent.clone())
                .or_default()
                .insert(class.id.clone());
        }
    }
    map
}

/// Depth-first post-order from `root`: every class after all of its
/// descendants, each class once. [`TOP`] itself is never listed.
pub fn post_order(o: &Ontology, root: &str) -> Result<Vec<String>> {
    require_root(o, root)?;
    let children = children_map(o);
    let mut visited = BTreeSet::new();
    let mut order = Vec::new();
    fn visit(
        node: &str,
        children: &BTreeMap<String, BTreeSet<String>>,
        visited: &mut BTreeSet<String>,
        order: &mut Vec<String>,
    ) {
        if !visited.insert(node.to_string()) {
            return;
        }
        if let Some(kids) = children.get(node) {
            for kid in kids {
                visit(kid, children, visited, order);
            }
        }
        if node != TOP {
            order.push(node.to_string());
        }
    }
    visit(root, &children, &mut visited, &mut order);
    Ok(order)
}

/// Depth-first pre-order from `root` in which a class with several parents
/// is entered only from the last of its parents to be visited, so every
/// class comes after all of its ancestors below `root`, once.
pub fn pre_order(o: &Ontology, root: &str) -> Result<Vec<String>> {
    require_root(o, root)?;
    let children = children_map(o);
    let mut reachable = BTreeSet::new();
    let mut stack = vec![root.to_string()];
    while let Some(node) = stack.pop() {
        if reachable.insert(node.clone()) {
            if let Some(kids) = children.get(&node) {
                stack.extend(kids.iter().cloned());
            }
        }
    }
    let mut pending: BTreeMap<String, usize> = BTreeMap::new();
    for node in &reachable {
        for kid in children.get(node).into_iter().flatten() {
            *pending.entry(kid.clone()).or_default() += 1;
        }
    }
    let mut order = Vec::new();
    fn visit(
        node: &str,
        children: &BTreeMap<String, BTreeSet<String>>,
        pending: &mut BTreeMap<String, usize>,
        order: &mut Vec<String>,
    ) {
        if node != TOP {
            order.push(node.to_string());
        }
        for kid in children.get(node).into_iter().flatten() {
            let count = pending.get_mut(kid).expect("reachable child");
            *count -= 1;
            if *count == 0 {
                visit(kid, children, pending, order);
            }
        }
    }
    visit(root, &children, &mut pending, &mut order);
    Ok(order)
}

/// Queries individual-seeking templates for every class below `root`,
/// most specific classes first.
pub fn populate(o: &mut Ontology, ctx: &mut PhaseContext<'_>, root: &str) -> Result<()> {
    let templates = ctx
        .library
        .require(TemplateKind::IndividualSeeking)?
        .to_vec();
    let params = ctx.params.clone();
    for class in post_order(o, root)? {
        let display = o.display_name(&class)?.to_string();
        for template in &templates {
            let query = ctx.library.render(template, &[("class", &display)])?;
            let response = ctx.ask(Phase::Populate, &query, &params)?;
            let parsed = ctx.parser.extract_names(&response.text, response.truncated);
            let mut record = record_for(Phase::Populate, query, &response, &params);
            record.class = Some(class.clone());
            for name in &parsed.names {
                match o.add_to_class(name, &class) {
                    Ok(a) => record
                        .mutations
                        .extend(Mutation::from_assignment(name, &class, &a)),
                    Err(OntologyError::RejectedName(_)) => continue,
                    Err(e) => return Err(e.into()),
                }
            }
            record.names = parsed.names;
            ctx.emit(record)?;
        }
    }
    Ok(())
}

/// Queries relation-seeking templates for every individual in the domain
/// of `property`; answers become range individuals linked by `property`.
pub fn relate(o: &mut Ontology, ctx: &mut PhaseContext<'_>, property: &str) -> Result<()> {
    let templates = ctx.library.require(TemplateKind::RelationSeeking)?.to_vec();
    let params = ctx.params.clone();
    let prop = o
        .property(property)
        .ok_or_else(|| OntologyError::UnknownProperty(property.to_string()))?
        .clone();
    let display = o.display_name(property)?.to_string();
    for subject in o.members_in_closure(&prop.domain)? {
        let label = o
            .individual(&subject)
            .map(|i| i.label.clone())
            .ok_or_else(|| OntologyError::UnknownIndividual(subject.clone()))?;
        for template in &templates {
            let query = ctx
                .library
                .render(template, &[("individual", &label), ("property", &display)])?;
            let response = ctx.ask(Phase::Relate, &query, &params)?;
            let parsed = ctx.parser.extract_names(&response.text, response.truncated);
            let mut record = record_for(Phase::Relate, query, &response, &params);
            record.class = Some(prop.range.clone());
            record.individuals = vec![subject.clone()];
            for name in &parsed.names {
                let a = match o.add_to_class(name, &prop.range) {
                    Ok(a) => a,
                    Err(OntologyError::RejectedName(_)) => continue,
                    Err(e) => return Err(e.into()),
                };
                record
                    .mutations
                    .extend(Mutation::from_assignment(name, &prop.range, &a));
                if o.assert_relation(property, &subject, &a.individual)? {
                    record.mutations.push(Mutation::Relate {
                        property: property.to_string(),
                        subject: subject.clone(),
                        object: a.individual.clone(),
                    });
                }
            }
            record.names = parsed.names;
            ctx.emit(record)?;
        }
    }
    Ok(())
}

/// Moves individuals down the taxonomy: at each class, every direct member
/// is offered the direct subclasses and moved to the first valid answer.
pub fn redistribute(o: &mut Ontology, ctx: &mut PhaseContext<'_>, root: &str) -> Result<()> {
    let templates = ctx.library.require(TemplateKind::BestMatch)?.to_vec();
    let params = ctx.params.clone();
    for class in pre_order(o, root)? {
        let subclasses = o.direct_subclasses(&class)?;
        if subclasses.is_empty() {
            continue;
        }
        let mut by_display: Vec<(String, String)> = Vec::new();
        for sub in &subclasses {
            by_display.push((o.display_name(sub)?.to_string(), sub.clone()));
        }
        let classes_text = join_names(by_display.iter().map(|(d, _)| d.as_str()));
        for member in o.direct_members(&class)? {
            let label = o
                .individual(&member)
                .map(|i| i.label.clone())
                .ok_or_else(|| OntologyError::UnknownIndividual(member.clone()))?;
            for template in &templates {
                let query = ctx.library.render(
                    template,
                    &[("individual", &label), ("classes", &classes_text)],
                )?;
                let response = ctx.ask(Phase::Redistribute, &query, &params)?;
                let parsed = ctx.parser.extract_names(&response.text, response.truncated);
                let valid = restrict_to_candidates(
                    &parsed.names,
                    by_display.iter().map(|(d, _)| d.as_str()),
                );
                let mut record = record_for(Phase::Redistribute, query, &response, &params);
                record.class = Some(class.clone());
                record.individuals = vec![member.clone()];
                record.candidates = subclasses.iter().cloned().collect();
                record.names = parsed.names;
                let best = valid.first().and_then(|name| {
                    let id = crate::ontology::canonical_identifier(name).ok()?;
                    by_display
                        .iter()
                        .find(|(d, _)| {
                            crate::ontology::canonical_identifier(d).ok().as_ref() == Some(&id)
                        })
                        .map(|(_, c)| c.clone())
                });
                if let Some(best) = &best {
                    let a = o.add_to_class(&member, best)?;
                    record
                        .mutations
                        .extend(Mutation::from_assignment(&label, best, &a));
                }
                ctx.emit(record)?;
                if best.is_some() {
                    break;
                }
            }
        }
    }
    Ok(())
}

/// Length in characters of the longest common substring.
pub fn longest_common_substring(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev = vec![0usize; b.len() + 1];
    let mut best = 0;
    for ca in &a {
        let mut row = vec![0usize; b.len() + 1];
        for (j, cb) in b.iter().enumerate() {
            if ca == cb {
                row[j + 1] = prev[j] + 1;
                best = best.max(row[j + 1]);
            }
        }
        prev = row;
    }
    best
}

/// True when the canonical identifiers share a substring longer than `lambda`.
pub fn syn_similar(a: &str, b: &str, lambda: usize) -> bool {
    let canon =
        |s: &str| crate::ontology::canonical_identifier(s).unwrap_or_else(|_| s.to_string());
    longest_common_substring(&canon(a), &canon(b)) > lambda
}

/// Merges two individuals into the one with the lexicographically smaller
/// id: relations are rewritten onto it, class assertions are unioned and
/// pruned to the most specific ones, and the other is deleted. Returns
/// `(survivor, dropped)`, or `None` when both ids are the same.
pub fn merge_individuals(
    o: &mut Ontology,
    keep: &str,
    drop: &str,
) -> std::result::Result<Option<(String, String)>, OntologyError> {
    if keep == drop {
        return Ok(None);
    }
    for id in [keep, drop] {
        if o.individual(id).is_none() {
            return Err(OntologyError::UnknownIndividual(id.to_string()));
        }
    }
    let (survivor, victim) = if keep < drop {
        (keep, drop)
    } else {
        (drop, keep)
    };
    let (survivor, victim) = (survivor.to_string(), victim.to_string());

    let touched: Vec<_> = o
        .relations
        .iter()
        .filter(|r| r.subject == victim || r.object == victim)
        .cloned()
        .collect();
    for mut r in touched {
        o.relations.remove(&r);
        if r.subject == victim {
            r.subject = survivor.clone();
        }
        if r.object == victim {
            r.object = survivor.clone();
        }
        o.relations.insert(r);
    }

    let dropped = o.individuals.remove(&victim).expect("checked above");
    let mut union = o.individuals[&survivor].asserted_classes.clone();
    union.extend(dropped.asserted_classes);
    let pruned: BTreeSet<String> = union
        .iter()
        .filter(|c| !union.iter().any(|d| d != *c && o.subsumed_unchecked(d, c)))
        .cloned()
        .collect();
    o.individuals
        .get_mut(&survivor)
        .expect("checked above")
        .asserted_classes = pruned;
    Ok(Some((survivor, victim)))
}

/// Asks the oracle, at temperature 0, whether syntactically similar direct
/// members of each class are duplicates, and merges confirmed pairs. Pairs
/// are recomputed after merges until every candidate pair has been decided.
pub fn merge(o: &mut Ontology, ctx: &mut PhaseContext<'_>, root: &str) -> Result<()> {
    let templates = ctx.library.require(TemplateKind::Merging)?.to_vec();
    let params = ctx.params.with_temperature(0.0);
    for class in pre_order(o, root)? {
        let display = o.display_name(&class)?.to_string();
        let mut decided: BTreeSet<(String, String)> = BTreeSet::new();
        loop {
            let members: Vec<String> = o.direct_members(&class)?.into_iter().collect();
            let mut pairs = Vec::new();
            for (n, a) in members.iter().enumerate() {
                for b in &members[n + 1..] {
                    let key = (a.clone(), b.clone());
                    if !decided.contains(&key) && syn_similar(a, b, ctx.lambda) {
                        pairs.push(key);
                    }
                }
            }
            if pairs.is_empty() {
                break;
            }
            for (a, b) in pairs {
                let (Some(ia), Some(ib)) = (o.individual(&a), o.individual(&b)) else {
                    continue;
                };
                if !ia.asserted_classes.contains(&class) || !ib.asserted_classes.contains(&class) {
                    continue;
                }
                let (label_a, label_b) = (ia.label.clone(), ib.label.clone());
                decided.insert((a.clone(), b.clone()));
                for template in &templates {
                    let query = ctx.library.render(
                        template,
                        &[
                            ("class", &display),
                            ("ind_1", &label_a),
                            ("ind_2", &label_b),
                        ],
                    )?;
                    let response = ctx.ask(Phase::Merge, &query, &params)?;
                    let verdict = extract_binary(&response.text);
                    let mut record = record_for(Phase::Merge, query, &response, &params);
                    record.class = Some(class.clone());
                    record.individuals = vec![a.clone(), b.clone()];
                    record.verdict = Some(verdict);
                    let positive = verdict == Verdict::Positive;
                    if positive {
                        if let Some((survivor, dropped)) = merge_individuals(o, &a, &b)? {
                            record.mutations.push(Mutation::Merge { survivor, dropped });
                        }
                    }
                    ctx.emit(record)?;
                    if positive {
                        break;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Re-applies recorded mutations, in order, on top of `initial`.
pub fn replay<'a>(
    initial: &Ontology,
    records: impl IntoIterator<Item = &'a AuditRecord>,
) -> std::result::Result<Ontology, OntologyError> {
    let mut o = initial.clone();
    for record in records {
        for m in &record.mutations {
            match m {
                Mutation::AddToClass { label, class, .. } => {
                    o.add_to_class(label, class)?;
                }
                Mutation::Relate {
                    property,
                    subject,
                    object,
                } => {
                    o.assert_relation(property, subject, object)?;
                }
                Mutation::Merge { survivor, dropped } => {
                    merge_individuals(&mut o, survivor, dropped)?;
                }
            }
        }
    }
    Ok(o)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSet {
    pub populate: bool,
    pub relate: bool,
    pub redistribute: bool,
    pub merge: bool,
}

impl Default for PhaseSet {
    fn default() -> Self {
        Self {
            populate: true,
            relate: true,
            redistribute: true,
            merge: true,
        }
    }
}

impl PhaseSet {
    pub fn only(phase: Phase) -> Self {
        let mut set = Self {
            populate: false,
            relate: false,
            redistribute: false,
            merge: false,
        };
        *set.flag_mut(phase) = true;
        set
    }

    pub fn enabled(&self, phase: Phase) -> bool {
        match phase {
            Phase::Populate => self.populate,
            Phase::Relate => self.relate,
            Phase::Redistribute => self.redistribute,
            Phase::Merge => self.merge,
        }
    }

    fn flag_mut(&mut self, phase: Phase) -> &mut bool {
        match phase {
            Phase::Populate => &mut self.populate,
            Phase::Relate => &mut self.relate,
            Phase::Redistribute => &mut self.redistribute,
            Phase::Merge => &mut self.merge,
        }
    }

    pub fn with(mut self, phase: Phase, on: bool) -> Self {
        *self.flag_mut(phase) = on;
        self
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub root_class: String,
    pub library: TemplateLibrary,
    pub parser: ResponseParser,
    pub params: SamplingParams,
    /// Per-phase overrides of `params`. The merge phase always runs at
    /// temperature 0 regardless.
    pub phase_params: BTreeMap<Phase, SamplingParams>,
    pub lambda: usize,
    pub phases: PhaseSet,
    /// Restrict the relation phase to these properties; all when empty.
    pub properties: Vec<String>,
}

impl PipelineConfig {
    pub fn new(library: TemplateLibrary, params: SamplingParams) -> Self {
        Self {
            root_class: TOP.to_string(),
            library,
            parser: ResponseParser::default(),
            params,
            phase_params: BTreeMap::new(),
            lambda: DEFAULT_LAMBDA,
            phases: PhaseSet::default(),
            properties: Vec::new(),
        }
    }

    pub fn params_for(&self, phase: Phase) -> SamplingParams {
        let p = self
            .phase_params
            .get(&phase)
            .unwrap_or(&self.params)
            .clone();
        if phase == Phase::Merge {
            p.with_temperature(0.0)
        } else {
            p
        }
    }

    pub fn validate(&self, o: &Ontology) -> Result<()> {
        if self.lambda == 0 {
            return Err(PhaseError::Config("λ must be at least 1".into()));
        }
        if self.root_class != TOP && o.class(&self.root_class).is_none() {
            return Err(OntologyError::UnknownClass(self.root_class.clone()).into());
        }
        for p in &self.properties {
            if o.property(p).is_none() {
                return Err(OntologyError::UnknownProperty(p.clone()).into());
            }
        }
        if o.class_count() == 0 {
            return Err(PhaseError::Config("ontology declares no classes".into()));
        }
        if self.phases.relate && o.properties().next().is_none() {
            return Err(PhaseError::Config("ontology declares no properties".into()));
        }
        for phase in Phase::ALL {
            if self.phases.enabled(phase) {
                self.params_for(phase)
                    .validate()
                    .map_err(|e| PhaseError::Config(e.to_string()))?;
                self.library.require(kind_for(phase))?;
            }
        }
        Ok(())
    }
}

fn kind_for(phase: Phase) -> TemplateKind {
    match phase {
        Phase::Populate => TemplateKind::IndividualSeeking,
        Phase::Relate => TemplateKind::RelationSeeking,
        Phase::Redistribute => TemplateKind::BestMatch,
        Phase::Merge => TemplateKind::Merging,
    }
}

/// Runs the enabled phases in order: populate, relate (once per property),
/// redistribute, merge. The observer gets a snapshot after each completed
/// phase; on failure it gets the partial ontology and the run stops.
pub fn run_pipeline(
    o: &mut Ontology,
    config: &PipelineConfig,
    oracle: &Oracle,
    observer: &mut dyn RunObserver,
) -> Result<()> {
    config.validate(o)?;
    for phase in Phase::ALL {
        if !config.phases.enabled(phase) {
            continue;
        }
        log::info!("starting {phase} phase");
        let outcome = run_phase(o, config, oracle, observer, phase);
        if let Err(e) = outcome {
            observer.phase_aborted(phase, o)?;
            return Err(e);
        }
        observer.phase_finished(phase, o)?;
    }
    Ok(())
}

/// Runs a single phase with the pipeline configuration.
pub fn run_phase(
    o: &mut Ontology,
    config: &PipelineConfig,
    oracle: &Oracle,
    observer: &mut dyn RunObserver,
    phase: Phase,
) -> Result<()> {
    let mut ctx = PhaseContext {
        oracle,
        library: &config.library,
        parser: &config.parser,
        params: config.params_for(phase),
        lambda: config.lambda,
        observer,
    };
    let root = config.root_class.as_str();
    match phase {
        Phase::Populate => populate(o, &mut ctx, root),
        Phase::Relate => {
            let properties: Vec<String> = if config.properties.is_empty() {
                o.properties().map(|p| p.id.clone()).collect()
            } else {
                config.properties.clone()
            };
            for p in properties {
                relate(o, &mut ctx, &p)?;
            }
            Ok(())
        }
        Phase::Redistribute => redistribute(o, &mut ctx, root),
        Phase::Merge => merge(o, &mut ctx, root),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::ClassDef;

    #[test]
    fn syn_similar_cases() {
        assert!(syn_similar("maincoone_cat", "maincoone", 4));
        assert!(syn_similar("apple", "apples", 4));
        assert!(!syn_similar("rice", "mice", 4));
        assert_eq!(longest_common_substring("rice", "mice"), 3);
        assert_eq!(longest_common_substring("", "abc"), 0);
    }

    fn diamond() -> Ontology {
        let mut o = Ontology::new();
        o.add_class(ClassDef::new("A").unwrap()).unwrap();
        o.add_class(ClassDef::new("B").unwrap().with_parent("a"))
            .unwrap();
        o.add_class(ClassDef::new("C").unwrap().with_parent("a"))
            .unwrap();
        o.add_class(
            ClassDef::new("D")
                .unwrap()
                .with_parent("b")
                .with_parent("c"),
        )
        .unwrap();
        o
    }

    #[test]
    fn traversal_orders_on_diamond() {
        let o = diamond();
        assert_eq!(post_order(&o, TOP).unwrap(), vec!["d", "b", "c", "a"]);
        assert_eq!(pre_order(&o, TOP).unwrap(), vec!["a", "b", "c", "d"]);
        assert_eq!(pre_order(&o, "b").unwrap(), vec!["b", "d"]);
        assert_eq!(post_order(&o, "c").unwrap(), vec!["d", "c"]);
        assert!(post_order(&o, "zz").is_err());
    }

    #[test]
    fn merge_individuals_rules() {
        let mut o = diamond();
        o.add_property(crate::ontology::PropertyDef::new("p", "a", "a"))
            .unwrap();
        o.add_to_class("apples", "b").unwrap();
        o.add_to_class("apple", "b").unwrap();
        o.add_to_class("x", "a").unwrap();
        o.assert_relation("p", "x", "apples").unwrap();
        o.assert_relation("p", "x", "apple").unwrap();
        o.assert_relation("p", "apples", "x").unwrap();
        let r = merge_individuals(&mut o, "apples", "apple").unwrap();
        assert_eq!(r, Some(("apple".into(), "apples".into())));
        assert!(o.individual("apples").is_none());
        assert_eq!(o.relation_count(), 2);
        assert!(o.has_relation(&crate::ontology::RelationAssertion::new("p", "apple", "x")));
        assert_eq!(merge_individuals(&mut o, "apple", "apple").unwrap(), None);
        assert!(merge_individuals(&mut o, "apple", "nope").is_err());
    }

    #[test]
    fn merge_prunes_union_to_most_specific() {
        let mut o = diamond();
        o.add_to_class("apple", "b").unwrap();
        o.add_to_class("apples", "d").unwrap();
        merge_individuals(&mut o, "apple", "apples").unwrap();
        assert_eq!(
            o.individual("apple").unwrap().asserted_classes,
            BTreeSet::from(["d".to_string()])
        );
    }

    #[test]
    fn merge_phase_always_uses_zero_temperature() {
        let mut config =
            PipelineConfig::new(TemplateLibrary::food(), SamplingParams::for_model("gpt-4"));
        config
            .phase_params
            .insert(Phase::Merge, SamplingParams::for_model("gpt-4"));
        assert_eq!(config.params_for(Phase::Merge).temperature, 0.0);
        assert_eq!(config.params_for(Phase::Populate).temperature, 0.7);
    }
}
