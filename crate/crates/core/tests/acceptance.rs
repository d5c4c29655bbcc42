//! Acceptance checks. Runs as a plain binary (`harness = false`) so that
//! every check prints exactly one PASS/FAIL line, then exits non-zero if
//! any check failed.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ontopop::harness::{self, KbParams, NoiseProfile};
use ontopop::metrics::{error_report, ErrorAnnotation, ErrorTag, StructuralStats};
use ontopop::ontology::{ClassDef, PropertyDef, RelationAssertion};
use ontopop::oracle::{
    Backend, BackendError, Completion, Fallback, HttpBackend, Oracle, ResponseCache, RetryPolicy,
    SamplingParams, ScriptedBackend, Sleeper,
};
use ontopop::parser::{extract_binary, extract_names, ResponseParser};
use ontopop::phases::{
    self, redistribute, run_pipeline, syn_similar, Mutation, Phase, PhaseContext, PipelineConfig,
    RunDirectory,
};
use ontopop::{Ontology, TemplateKind, TemplateLibrary, TOP};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn fixture(name: &str) -> String {
    let path = format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("took {took:?}, limit {limit:?}"))
}

fn params() -> SamplingParams {
    SamplingParams::for_model("gpt-test")
}

// 1 ------------------------------------------------------------------------

fn grammar_corpus() -> Check {
    let start = Instant::now();
    let names = extract_names(&fixture("responses/fake-cat-names.txt"), false).names;
    let expected = [
        "Persian",
        "Siamese",
        "Maine Coon",
        "Bengal",
        "Caracal",
        "Sphynx",
        "Domestic Shorthair",
    ];
    ensure(names == expected, || format!("fake cat names: {names:?}"))?;

    let verbose = extract_names(&fixture("responses/verbose-cats.txt"), false).names;
    let breeds = ["Domestic Shorthair", "Siamese Cat", "Russian Blue"];
    ensure(verbose == breeds, || {
        format!("verbose response: {verbose:?}")
    })?;

    let refusal = extract_names(&fixture("responses/refusal.txt"), false).names;
    ensure(refusal.is_empty(), || format!("refusal: {refusal:?}"))?;
    within(start, Duration::from_secs(1))?;
    Ok(format!(
        "7 names in order, {} breed names, empty refusal",
        verbose.len()
    ))
}

// 2 ------------------------------------------------------------------------

/// Random DAG: node `i` may only have parents among `0..i`.
fn random_dag(rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let n = rng.gen_range(1..=15);
    (0..n)
        .map(|i| (0..i).filter(|_| rng.gen_bool(0.3)).collect::<Vec<usize>>())
        .collect()
}

/// Reflexive-transitive closure: `reach[a][b]` iff a ⊑ b.
fn closure(parents: &[Vec<usize>]) -> Vec<Vec<bool>> {
    let n = parents.len();
    let mut reach = vec![vec![false; n]; n];
    for (i, ps) in parents.iter().enumerate() {
        reach[i][i] = true;
        for &p in ps {
            reach[i][p] = true;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    reach
}

fn class_id(i: usize) -> String {
    format!("c{i}")
}

fn assignment_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut calls_total = 0;
    for case in 0..200 {
        let dag = random_dag(&mut rng);
        let reach = closure(&dag);
        let mut o = Ontology::new();
        for (i, ps) in dag.iter().enumerate() {
            let mut c = ClassDef::new(&class_id(i)).unwrap();
            for &p in ps {
                c = c.with_parent(&class_id(p));
            }
            o.add_class(c).unwrap();
        }
        let individuals = ["ind_a", "ind_b", "ind_c", "ind_d"];
        let mut history: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
        let calls = rng.gen_range(1..=50);
        calls_total += calls;
        for _ in 0..calls {
            let who = individuals[rng.gen_range(0..individuals.len())];
            let class = rng.gen_range(0..dag.len());
            o.add_to_class(who, &class_id(class)).unwrap();
            history.entry(who).or_default().insert(class);
        }
        for (who, seen) in &history {
            let expected: BTreeSet<String> = seen
                .iter()
                .filter(|&&c| !seen.iter().any(|&d| d != c && reach[d][c]))
                .map(|&c| class_id(c))
                .collect();
            let got = &o.individual(who).unwrap().asserted_classes;
            ensure(*got == expected, || {
                format!("case {case}, {who}: got {got:?}, reference {expected:?}")
            })?;
        }
    }
    within(start, Duration::from_secs(10))?;
    Ok(format!("200 DAGs, {calls_total} calls, 100% agreement"))
}

// 3 ------------------------------------------------------------------------

fn context<'a>(
    oracle: &'a Oracle,
    library: &'a TemplateLibrary,
    parser: &'a ResponseParser,
    params: SamplingParams,
    observer: &'a mut Vec<phases::AuditRecord>,
) -> PhaseContext<'a> {
    PhaseContext {
        oracle,
        library,
        parser,
        params,
        lambda: phases::DEFAULT_LAMBDA,
        observer,
    }
}

fn traversal_order() -> Check {
    let mut o = Ontology::new();
    o.add_class(ClassDef::new("Animal").unwrap()).unwrap();
    o.add_class(ClassDef::new("Mammal").unwrap().with_parent("animal"))
        .unwrap();
    o.add_class(ClassDef::new("Cat").unwrap().with_parent("mammal"))
        .unwrap();
    let library = TemplateLibrary::new()
        .with_pattern(
            TemplateKind::IndividualSeeking,
            "list of ⟨class⟩, names only",
        )
        .unwrap();
    let backend = ScriptedBackend::from_pairs(
        [
            ("list of Cat, names only", "1. Persian\n2. Sphynx"),
            ("list of Mammal, names only", "1. Persian\n2. Whale"),
            ("list of Animal, names only", "Persian, Whale, Eagle"),
        ],
        Fallback::Error,
    );
    let oracle = Oracle::new(backend);
    let parser = ResponseParser::default();
    let mut records = Vec::new();
    let mut ctx = context(&oracle, &library, &parser, params(), &mut records);
    phases::populate(&mut o, &mut ctx, TOP).map_err(|e| e.to_string())?;

    let classes = |id: &str| o.individual(id).map(|i| i.asserted_classes.clone());
    let only = |c: &str| Some(BTreeSet::from([c.to_string()]));
    ensure(classes("persian") == only("cat"), || {
        format!("persian in {:?}", classes("persian"))
    })?;
    ensure(classes("whale") == only("mammal"), || {
        format!("whale in {:?}", classes("whale"))
    })?;
    ensure(classes("eagle") == only("animal"), || {
        format!("eagle in {:?}", classes("eagle"))
    })?;
    let order: Vec<_> = records.iter().filter_map(|r| r.class.clone()).collect();
    ensure(order == ["cat", "mammal", "animal"], || {
        format!("visit order {order:?}")
    })?;
    Ok("shared names asserted only in the most specific class".into())
}

// 4 ------------------------------------------------------------------------

/// Scripted best-match answers: at every strict ancestor of an individual's
/// true class, answer the first child leading towards it.
fn placement_script(o: &Ontology, truth: &BTreeMap<String, String>) -> ScriptedBackend {
    let mut rules = Vec::new();
    for (member, home) in truth {
        let label = &o.individual(member).unwrap().label;
        let mut visit: Vec<String> = o.classes().map(|c| c.id.clone()).collect();
        visit.push(TOP.to_string());
        for class in visit {
            let children = o.direct_subclasses(&class).unwrap();
            if children.is_empty() {
                continue;
            }
            let toward = children.iter().find(|c| o.is_subsumed(home, c).unwrap());
            let Some(toward) = toward else { continue };
            let displays: Vec<&str> = children
                .iter()
                .map(|c| o.display_name(c).unwrap())
                .collect();
            let list = ontopop::templates::join_names(displays);
            rules.push((
                format!("best class for {label} among {list}"),
                o.display_name(toward).unwrap().to_string(),
            ));
        }
    }
    ScriptedBackend::from_pairs(
        rules.iter().map(|(p, r)| (p.as_str(), r.as_str())),
        Fallback::Refusal("I'm sorry, I cannot tell.".into()),
    )
}

fn redistribute_fixpoint() -> Check {
    let library = TemplateLibrary::new()
        .with_pattern(
            TemplateKind::BestMatch,
            "best class for ⟨individual⟩ among ⟨classes⟩",
        )
        .unwrap();
    let parser = ResponseParser::default();
    let mut checked = 0;
    for seed in 1..=5u64 {
        let kb = harness::generate_kb(seed, KbParams::default()).map_err(|e| e.to_string())?;
        let mut o = kb.taxonomy.clone();
        let root = o
            .classes()
            .find(|c| c.parents.is_empty())
            .unwrap()
            .id
            .clone();
        let mut truth = BTreeMap::new();
        for (class, members) in &kb.members {
            for m in members {
                o.add_to_class(kb.label(m).unwrap(), &root).unwrap();
                truth.insert(m.clone(), class.clone());
            }
        }
        let initial = o.clone();
        let oracle = Oracle::new(placement_script(&o, &truth));
        let mut records = Vec::new();
        let mut ctx = context(&oracle, &library, &parser, params(), &mut records);
        redistribute(&mut o, &mut ctx, TOP).map_err(|e| e.to_string())?;

        for (m, home) in &truth {
            let got = &o.individual(m).unwrap().asserted_classes;
            ensure(got.len() == 1 && got.contains(home), || {
                format!("seed {seed}: {m} in {got:?}, truth {home}")
            })?;
            checked += 1;
        }
        for r in &records {
            let who = &r.individuals[0];
            let home = &truth[who];
            let valid: BTreeSet<&String> = r
                .candidates
                .iter()
                .filter(|c| o.is_subsumed(home, c).unwrap())
                .collect();
            let taken = r.mutations.iter().any(|m| {
                matches!(m, Mutation::AddToClass { individual, class, .. }
                    if individual == who && valid.contains(class))
            });
            ensure(valid.is_empty() || taken, || {
                format!(
                    "seed {seed}: {who} offered {valid:?} at {:?} but not moved",
                    r.class
                )
            })?;
        }
        let replayed = phases::replay(&initial, &records).map_err(|e| e.to_string())?;
        ensure(replayed == o, || {
            format!("seed {seed}: audit replay diverges")
        })?;
    }
    Ok(format!(
        "{checked} individuals placed, audit replay consistent"
    ))
}

// 5 ------------------------------------------------------------------------

fn merge_behaviour() -> Check {
    let table = [
        ("maincoone_cat", "maincoone", true),
        ("apple", "apples", true),
        ("rice", "mice", false),
    ];
    for (a, b, want) in table {
        ensure(syn_similar(a, b, 4) == want, || {
            format!("syn_similar({a}, {b}) != {want}")
        })?;
    }

    let mut o = Ontology::new();
    o.add_class(ClassDef::new("Food").unwrap()).unwrap();
    o.add_property(PropertyDef::new("pairsWith", "food", "food"))
        .unwrap();
    let bases = ["tomato", "banana", "cherry"];
    let k = 4;
    let mut family = BTreeMap::new();
    for base in bases {
        for n in 0..k {
            let name = format!("{base}{}", "s".repeat(n));
            o.add_to_class(&name, "food").unwrap();
            family.insert(name, base.to_string());
        }
    }
    let mut expected_relations = BTreeSet::new();
    let names: Vec<String> = family.keys().cloned().collect();
    for (i, s) in names.iter().enumerate() {
        let obj = &names[(i * 5 + 3) % names.len()];
        o.assert_relation("pairsWith", s, obj).unwrap();
        expected_relations.insert(RelationAssertion::new(
            "pairsWith",
            &family[s],
            &family[obj],
        ));
    }

    let library = TemplateLibrary::new()
        .with_pattern(
            TemplateKind::Merging,
            "in ⟨class⟩, is ⟨ind_1⟩ the same as ⟨ind_2⟩?",
        )
        .unwrap();
    let oracle = Oracle::new(ScriptedBackend::from_pairs([("*", "Yes")], Fallback::Error));
    let parser = ResponseParser::default();
    let mut records = Vec::new();
    let hot = SamplingParams::new("gpt-test", 0.7, 100).unwrap();
    let mut ctx = context(&oracle, &library, &parser, hot, &mut records);
    phases::merge(&mut o, &mut ctx, TOP).map_err(|e| e.to_string())?;

    let left: BTreeSet<&str> = o.individuals().map(|i| i.id.as_str()).collect();
    ensure(left == BTreeSet::from(bases), || {
        format!("survivors {left:?}")
    })?;
    let relations: BTreeSet<RelationAssertion> = o.relations().cloned().collect();
    ensure(relations == expected_relations, || {
        format!("relations {relations:?}, expected {expected_relations:?}")
    })?;
    ensure(!records.is_empty(), || "no merge queries".into())?;
    ensure(
        records
            .iter()
            .all(|r| r.phase == Phase::Merge && r.temperature == 0.0),
        || "merge record with non-zero temperature".into(),
    )?;
    Ok(format!(
        "truth table holds, {} families of {k} → {} survivors, {} merge records at temperature 0.0",
        bases.len(),
        left.len(),
        records.len()
    ))
}

// 6 ------------------------------------------------------------------------

#[derive(Default)]
struct VirtualClock {
    now: Mutex<Duration>,
}

impl Sleeper for VirtualClock {
    fn sleep(&self, delay: Duration) {
        *self.now.lock().unwrap() += delay;
    }
}

struct FailingBackend {
    failures: usize,
    clock: Arc<VirtualClock>,
    attempts_at: Mutex<Vec<Duration>>,
}

impl Backend for FailingBackend {
    fn id(&self) -> &str {
        "failing"
    }

    fn complete(&self, _query: &str, _params: &SamplingParams) -> Result<Completion, BackendError> {
        let mut at = self.attempts_at.lock().unwrap();
        at.push(*self.clock.now.lock().unwrap());
        if at.len() <= self.failures {
            Err(BackendError::retryable("HTTP 429"))
        } else {
            Ok(Completion::new("ok"))
        }
    }
}

fn observed_gaps(failures: usize, policy: RetryPolicy) -> (Vec<f64>, bool) {
    let clock = Arc::new(VirtualClock::default());
    let backend = Arc::new(FailingBackend {
        failures,
        clock: clock.clone(),
        attempts_at: Mutex::new(Vec::new()),
    });
    let oracle = Oracle::new(backend.clone())
        .with_policy(policy)
        .with_sleeper(clock);
    let ok = oracle.ask("q", &params()).is_ok();
    let at = backend.attempts_at.lock().unwrap().clone();
    let mut prev = Duration::ZERO;
    let gaps = at
        .iter()
        .map(|t| {
            let gap = *t - prev;
            prev = *t;
            gap.as_secs_f64()
        })
        .collect();
    (gaps, ok)
}

fn backoff_schedule() -> Check {
    let (gaps, ok) = observed_gaps(usize::MAX, RetryPolicy::default());
    ensure(!ok && gaps == [0.0, 30.0, 45.0], || {
        format!("defaults: {gaps:?}, ok={ok}")
    })?;
    let longer = RetryPolicy::new(3, Duration::from_secs(30), 1.5).unwrap();
    let (gaps, ok) = observed_gaps(3, longer);
    ensure(ok && gaps == [0.0, 30.0, 45.0, 67.5], || {
        format!("3 failures: {gaps:?}, ok={ok}")
    })?;
    Ok(format!("gaps {gaps:?} s; 3 attempts at defaults"))
}

// 7 ------------------------------------------------------------------------

/// Minimal chat-completions server answering from the food script.
fn mock_server(script: ScriptedBackend) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            counter.fetch_add(1, Ordering::SeqCst);
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap_or(0);
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            let request: serde_json::Value = serde_json::from_slice(&body).unwrap();
            let query = request["messages"][0]["content"]
                .as_str()
                .unwrap_or_default();
            let answer = script
                .complete(query, &params())
                .map(|c| c.text)
                .unwrap_or_default();
            let reply = serde_json::json!({
                "choices": [{"message": {"role": "assistant", "content": answer}, "finish_reason": "stop"}]
            })
            .to_string();
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                reply.len(),
                reply
            );
        }
    });
    (url, hits)
}

fn cache_determinism() -> Check {
    let script = ScriptedBackend::parse(&fixture("food-script.json"))?;
    let (url, hits) = mock_server(script);
    let work = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cache_dir = work.path().join("cache");
    let ontology = Ontology::load(std::path::Path::new(&format!(
        "{}/fixtures/food.json",
        env!("CARGO_MANIFEST_DIR")
    )))
    .map_err(|e| e.to_string())?;
    let library =
        TemplateLibrary::parse(&fixture("food-templates.json")).map_err(|e| e.to_string())?;

    let run = |out: &str| -> Result<Vec<u8>, String> {
        let oracle = Oracle::new(HttpBackend::new(&url, None))
            .with_cache(ResponseCache::open(&cache_dir).map_err(|e| e.to_string())?);
        let config = PipelineConfig::new(library.clone(), params());
        let mut o = ontology.clone();
        let mut dir =
            RunDirectory::create(&work.path().join(out), "run").map_err(|e| e.to_string())?;
        run_pipeline(&mut o, &config, &oracle, &mut dir).map_err(|e| e.to_string())?;
        dir.write_final(&o).map_err(|e| e.to_string())?;
        std::fs::read(dir.final_path()).map_err(|e| e.to_string())
    };
    let first = run("first")?;
    let cold = hits.load(Ordering::SeqCst);
    let second = run("second")?;
    let warm = hits.load(Ordering::SeqCst) - cold;
    ensure(cold > 0, || "first run made no remote calls".into())?;
    ensure(first == second, || "final ontologies differ".into())?;
    ensure(warm == 0, || {
        format!("{warm} remote calls with a warm cache")
    })?;
    Ok(format!(
        "{cold} remote calls cold, 0 warm, byte-identical output ({} bytes)",
        first.len()
    ))
}

// 8 ------------------------------------------------------------------------

fn metrics_arithmetic() -> Check {
    fn report_for(te: usize, ti: usize, e_wr: usize, tr: usize) -> (String, String) {
        let stats = StructuralStats {
            ti,
            tr,
            ..StructuralStats::default()
        };
        let mut ann = ErrorAnnotation::default();
        for i in 0..te {
            ann.tag_individual(&format!("i{i}"), ErrorTag::Mis);
        }
        for i in 0..e_wr {
            ann.relation_errors
                .insert(RelationAssertion::new("p", &format!("s{i}"), "o"));
        }
        let r = error_report(&stats, &ann);
        (r.rie.to_string(), r.rre.to_string())
    }
    let cases = [
        ((44, 511, 51, 736), ("0.0861", "0.0693")),
        ((228, 841, 0, 1), ("0.2711", "0.0000")),
    ];
    for ((te, ti, wr, tr), (rie, rre)) in cases {
        let got = report_for(te, ti, wr, tr);
        ensure(got == (rie.to_string(), rre.to_string()), || {
            format!("TE={te} TI={ti} E_wr={wr} TR={tr}: got {got:?}")
        })?;
    }
    Ok("0.0861, 0.0693, 0.2711".into())
}

// 9 ------------------------------------------------------------------------

fn zero_noise_end_to_end() -> Check {
    let start = Instant::now();
    let params = KbParams {
        n_classes: 10,
        members_per_class: 5,
        ..KbParams::default()
    };
    let kb = Arc::new(harness::generate_kb(1, params).map_err(|e| e.to_string())?);
    let sim = harness::simulate(&kb, NoiseProfile::zero(1), phases::DEFAULT_LAMBDA)
        .map_err(|e| e.to_string())?;
    let e = &sim.evaluation;
    ensure(e.stats.ti > 0 && e.stats.tr > 0, || {
        format!("degenerate run {:?}", e.stats)
    })?;
    ensure(e.errors.te == 0, || {
        format!("RIE {} ({:?})", e.errors.rie, e.annotation)
    })?;
    ensure(e.errors.e_wr == 0, || format!("RRE {}", e.errors.rre))?;
    for (class, members) in &kb.members {
        for m in members {
            let placed = sim
                .ontology
                .individual(m)
                .is_some_and(|i| i.asserted_classes == BTreeSet::from([class.clone()]));
            ensure(placed, || format!("{m} missing from {class}"))?;
        }
    }
    within(start, Duration::from_secs(30))?;
    Ok(format!(
        "RIE {} RRE {}, {} members placed, TR {}",
        e.errors.rie,
        e.errors.rre,
        kb.member_count(),
        e.stats.tr
    ))
}

// 10 -----------------------------------------------------------------------

fn noise_monotonicity() -> Check {
    let start = Instant::now();
    let seeds: Vec<u64> = (1..=20).collect();
    let rates = [0.0, 0.1, 0.2, 0.4];
    let rows = harness::noise_sweep(
        KbParams::default(),
        &seeds,
        &rates,
        0.0,
        0.0,
        phases::DEFAULT_LAMBDA,
    )
    .map_err(|e| e.to_string())?;
    let means: Vec<f64> = rows.iter().map(|r| r.mean_rie).collect();
    ensure(means.windows(2).all(|w| w[0] <= w[1]), || {
        format!("means {means:?}")
    })?;
    ensure((0.10..=0.35).contains(&means[2]), || {
        format!("mean RIE at h=0.2 is {}", means[2])
    })?;
    within(start, Duration::from_secs(300))?;
    let shown: Vec<String> = rates
        .iter()
        .zip(&means)
        .map(|(h, m)| format!("h={h}: {m:.4}"))
        .collect();
    Ok(shown.join(", "))
}

// 11 -----------------------------------------------------------------------

fn random_text(rng: &mut ChaCha8Rng) -> String {
    const PIECES: &[&str] = &[
        "- ",
        "* ",
        "+ ",
        "# ",
        "1. ",
        "10. ",
        "2) ",
        "\n",
        "\n\n",
        "    ",
        "\t",
        ",",
        ";",
        " and ",
        " or ",
        ":",
        "\"",
        "'",
        "**",
        "...",
        "yes",
        "No",
        "true",
        "I'm sorry",
        "⟨",
        "⟩",
        "é",
        "🐈",
        "\u{200b}",
        "\r\n",
    ];
    let len = rng.gen_range(0..64);
    let mut s = String::new();
    for _ in 0..len {
        match rng.gen_range(0..3) {
            0 => s.push_str(PIECES[rng.gen_range(0..PIECES.len())]),
            1 => s.push(rng.gen_range(' '..='~')),
            _ => s.push(rng.gen::<char>()),
        }
    }
    s
}

fn fuzz_totality() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in 0..10_000 {
        let text = random_text(&mut rng);
        let truncated = rng.gen_bool(0.5);
        let outcome = catch_unwind(AssertUnwindSafe(|| {
            let parsed = extract_names(&text, truncated);
            let _ = extract_binary(&text);
            parsed
        }));
        let parsed = outcome.map_err(|_| format!("panic on input #{n}: {text:?}"))?;
        ensure(parsed.names.iter().all(|n| !n.trim().is_empty()), || {
            format!("empty name from {text:?}")
        })?;
    }
    within(start, Duration::from_secs(30))?;
    Ok("10000 inputs, no failures".into())
}

fn main() {
    std::panic::set_hook(Box::new(|_| {}));
    let checks: [Criterion; 11] = [
        ("grammar corpus", grammar_corpus),
        ("assignment vs brute-force reference", assignment_oracle),
        ("populate traversal order", traversal_order),
        ("redistribute fixpoint", redistribute_fixpoint),
        ("merge behaviour", merge_behaviour),
        ("back-off schedule", backoff_schedule),
        ("cache determinism", cache_determinism),
        ("metrics arithmetic", metrics_arithmetic),
        ("zero-noise end to end", zero_noise_end_to_end),
        ("noise monotonicity", noise_monotonicity),
        ("fuzz totality", fuzz_totality),
    ];
    let mut failed = 0;
    for (n, (name, check)) in checks.iter().enumerate() {
        let outcome = catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS criterion {:>2} {name}: {detail}", n + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {:>2} {name}: {why}", n + 1)
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        checks.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
