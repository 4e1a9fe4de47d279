//! Acceptance checks, one line each:
//!
//! ```text
//! PASS  <criterion>  <evidence>
//! FAIL  <criterion>  <what went wrong>
//! ```
//!
//! Every expected value comes from an oracle written here, not from the
//! library. Run with `cargo test -p nlpcheck --test acceptance`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nlpcheck::bundled;
use nlpcheck::expect::{self, eval_inv, eval_relation, neutral_band, ExpectationSpec, Prediction};
use nlpcheck::lexicon::{LexiconEntry, LexiconStore, TagQuery};
use nlpcheck::model::{AdapterSpec, Gateway};
use nlpcheck::perturb::{add_phrase, contraction_variants, typo_swap, PhrasePosition};
use nlpcheck::suite::{self, ReportFormat, RunConfig, SuiteResult, TestSuite};
use nlpcheck::template::{expand, ExpansionConfig, TemplateGroup};

const EXPANSION_GROUPS: usize = 200;
const EXPANSION_BUDGET: Duration = Duration::from_secs(10);
const INV_GRID_CASES: usize = 20_402;
const INV_BUDGET: Duration = Duration::from_secs(5);
const E2E_BUDGET: Duration = Duration::from_secs(60);
const SLICE_SETS: usize = 100;
const SLICE_TOLERANCE: f64 = 1e-9;

/// Documented seeds for the typo examples.
const THAKNS_SEED: u64 = 48;
const JEBTLUE_SEED: u64 = 11;

type Check = Result<String, String>;

fn main() {
    type Criterion = (&'static str, fn() -> Check);
    let criteria: [Criterion; 8] = [
        ("expansion count law", expansion_count_law),
        ("reference example reproduction", reference_examples),
        ("INV rule oracle equivalence", inv_grid),
        ("neutral band conformance", neutral_band_grid),
        ("end-to-end oracle run", end_to_end),
        ("relational logic truth tables", relational_logic),
        ("determinism and suite round-trip", determinism),
        ("slice identity", slice_identity),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match std::panic::catch_unwind(check) {
            Ok(Ok(evidence)) => println!("PASS  {name}  {evidence}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL  {name}  {why}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL  {name}  panicked");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------

/// Random groups over random lexicons; the oracle counts distinct variables
/// (one per shared slot name, one per template for unshared slots).
fn expansion_count_law() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xE1);
    let start = Instant::now();
    let mut total_cases = 0usize;
    let mut groups = 0;
    while groups < EXPANSION_GROUPS {
        let n_lex = rng.gen_range(1..=5);
        let sizes: Vec<usize> = (0..n_lex).map(|_| rng.gen_range(1..=6)).collect();
        let mut store = LexiconStore::new();
        for (l, &size) in sizes.iter().enumerate() {
            let entries = (0..size).map(|i| LexiconEntry::new(format!("w{l}x{i}"))).collect();
            store.insert(format!("L{l}"), entries).unwrap();
        }

        let n_templates = rng.gen_range(1..=3);
        let mut uses: Vec<BTreeSet<usize>> = Vec::new();
        let mut templates = Vec::new();
        for _ in 0..n_templates {
            let mut used = BTreeSet::new();
            let mut src = String::from("t");
            for _ in 0..rng.gen_range(1..=3) {
                let l = rng.gen_range(0..n_lex);
                used.insert(l);
                let modifier = ["", "a:", "cap:"].choose(&mut rng).unwrap();
                src.push_str(&format!(" {{{modifier}L{l}}} and"));
            }
            src.push_str(" {{literal}}.");
            templates.push(src);
            uses.push(used);
        }
        let mentioned: BTreeSet<usize> = uses.iter().flatten().copied().collect();
        let unshared: BTreeSet<usize> = mentioned.iter().copied().filter(|_| rng.gen_bool(0.3)).collect();

        let mut expected: u128 = 1;
        for &l in &mentioned {
            let vars = if unshared.contains(&l) { uses.iter().filter(|u| u.contains(&l)).count() } else { 1 };
            expected *= (sizes[l] as u128).pow(vars as u32);
        }
        if expected > 50_000 {
            continue;
        }

        let mut group = TemplateGroup::parse(&templates).map_err(|e| e.to_string())?;
        for &l in &unshared {
            group = group.with_shared(&format!("L{l}"), false).map_err(|e| e.to_string())?;
        }
        let cfg = ExpansionConfig { max_cases: None, seed: 0, dedupe: false };
        let got = expand(&group, &store, &cfg).map_err(|e| e.to_string())?.len();
        ensure(got as u128 == expected, || format!("{templates:?} unshared {unshared:?}: {got} != {expected}"))?;
        total_cases += got;
        groups += 1;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < EXPANSION_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("{groups} groups, {total_cases} cases, {elapsed:.2?}"))
}

// ---------------------------------------------------------------------------

fn reference_examples() -> Check {
    let mut seen = Vec::new();
    let mut eq = |got: String, want: &str| -> Result<(), String> {
        ensure(got == want, || format!("got {got:?}, want {want:?}"))?;
        seen.push(want.to_string());
        Ok(())
    };
    let v = typo_swap("@SouthwestAir no thanks", 1, THAKNS_SEED).map_err(|e| e.to_string())?;
    eq(v[0].text.clone(), "@SouthwestAir no thakns")?;
    let v = typo_swap("@JetBlue I cri", 1, JEBTLUE_SEED).map_err(|e| e.to_string())?;
    eq(v[0].text.clone(), "@JeBtlue I cri")?;

    let group = TemplateGroup::parse(&["I {NEGATION} {POS_VERB} the {THING}."]).map_err(|e| e.to_string())?;
    let cases = expand(&group, &bundled::all_lexicons(), &ExpansionConfig::default()).map_err(|e| e.to_string())?;
    let texts: Vec<String> = cases.into_iter().map(|c| c.texts[0].clone()).collect();
    ensure(texts.len() == 12, || format!("negation template gave {} cases, want 2x2x3", texts.len()))?;
    let hit = texts.iter().find(|t| *t == "I didn't love the food.").cloned().unwrap_or_default();
    eq(hit, "I didn't love the food.")?;

    let v = add_phrase("@USAirways your service sucks.", "You are lame.", PhrasePosition::End)
        .map_err(|e| e.to_string())?;
    eq(v.text, "@USAirways your service sucks. You are lame.")?;
    let v = contraction_variants("I didn't love the food.");
    eq(v.first().map(|v| v.text.clone()).unwrap_or_default(), "I did not love the food.")?;
    Ok(format!("{} exact strings (typo seeds {THAKNS_SEED}, {JEBTLUE_SEED})", seen.len()))
}

// ---------------------------------------------------------------------------

/// Scores are hundredths; the rule "changes by more than 0.1" is exact in
/// integer arithmetic.
fn inv_oracle(label_changed: bool, i: i32, j: i32) -> bool {
    !(label_changed && (i - j).abs() > 10)
}

fn inv_grid() -> Check {
    let start = Instant::now();
    let spec = ExpectationSpec::inv();
    let mut n = 0;
    for changed in [false, true] {
        for i in 0..=100 {
            for j in 0..=100 {
                let a = Prediction::label("positive", f64::from(i) / 100.0);
                let b = Prediction::label(if changed { "negative" } else { "positive" }, f64::from(j) / 100.0);
                let got = eval_inv(n, &a, &b, &spec).map_err(|e| e.to_string())?.pass;
                let want = inv_oracle(changed, i, j);
                ensure(got == want, || format!("changed={changed} ({i}, {j}): got pass={got}, want {want}"))?;
                n += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(n == INV_GRID_CASES, || format!("{n} cases, want {INV_GRID_CASES}"))?;
    ensure(elapsed < INV_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("{n} cases exact, {elapsed:.2?}"))
}

// ---------------------------------------------------------------------------

fn band_oracle(hundredths: u32) -> &'static str {
    if 3 * hundredths <= 100 {
        "negative"
    } else if 3 * hundredths < 200 {
        "neutral"
    } else {
        "positive"
    }
}

fn neutral_band_grid() -> Check {
    for i in 0..=100u32 {
        let got = neutral_band(f64::from(i) / 100.0).map_err(|e| e.to_string())?;
        ensure(got == band_oracle(i), || format!("{i}/100: got {got}, want {}", band_oracle(i)))?;
    }
    let boundary = [(1.0 / 3.0, "negative"), (2.0 / 3.0, "positive")];
    for (p, want) in boundary {
        let got = neutral_band(p).map_err(|e| e.to_string())?;
        ensure(got == want, || format!("{p}: got {got}, want {want}"))?;
    }
    for bad in [-0.01, 1.01, f64::NAN] {
        ensure(neutral_band(bad).is_err(), || format!("{bad} accepted"))?;
    }
    Ok("101 grid points + 1/3, 2/3 boundaries exact".into())
}

// ---------------------------------------------------------------------------
// End-to-end: the mini suite against an independent re-derivation of every
// case, prediction and verdict.

type OracleEntry = (String, BTreeMap<String, String>);

struct OracleLexicons(HashMap<String, Vec<OracleEntry>>);

impl OracleLexicons {
    fn parse(srcs: &[&str]) -> Self {
        let mut map: HashMap<String, Vec<_>> = HashMap::new();
        for src in srcs {
            let mut current = String::new();
            for line in src.lines() {
                let line = line.trim_end();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                    current = name.to_string();
                    map.entry(current.clone()).or_default();
                    continue;
                }
                let (text, tags) = line.split_once('\t').unwrap_or((line, ""));
                let tags = tags
                    .split(';')
                    .filter_map(|kv| kv.split_once('='))
                    .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                    .collect();
                map.get_mut(&current).unwrap().push((text.trim().to_string(), tags));
            }
        }
        OracleLexicons(map)
    }

    fn texts(&self, name: &str) -> Vec<String> {
        self.0[name].iter().map(|(t, _)| t.clone()).collect()
    }
}

/// Sentiment rule: σ(pos − neg) over lexicon words, with a `not`/`n't` in
/// the three previous tokens flipping a word.
struct OracleModel {
    polarity: HashMap<String, i32>,
}

impl OracleModel {
    fn new(lex: &OracleLexicons) -> Result<Self, String> {
        let mut polarity = HashMap::new();
        for entries in lex.0.values() {
            for (text, tags) in entries {
                let sign = match tags.get("sentiment").map(String::as_str) {
                    Some("pos") => 1,
                    Some("neg") => -1,
                    _ => continue,
                };
                if text.contains(' ') {
                    continue;
                }
                if let Some(prev) = polarity.insert(text.to_lowercase(), sign) {
                    ensure(prev == sign, || format!("`{text}` has both polarities"))?;
                }
            }
        }
        Ok(Self { polarity })
    }

    fn tokens(text: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut word = String::new();
        let flush = |word: &mut String, out: &mut Vec<String>| {
            let w = word.trim_matches('\'').to_string();
            word.clear();
            if w.is_empty() {
                return;
            }
            if w.len() > 3 && w.ends_with("n't") {
                out.push(w[..w.len() - 3].to_string());
                out.push("n't".to_string());
            } else {
                out.push(w);
            }
        };
        for c in text.to_lowercase().chars() {
            if c.is_alphanumeric() || c == '\'' {
                word.push(c);
            } else if c == '’' {
                word.push('\'');
            } else {
                flush(&mut word, &mut out);
            }
        }
        flush(&mut word, &mut out);
        out
    }

    fn prob(&self, text: &str) -> f64 {
        let toks = Self::tokens(text);
        let mut x = 0i32;
        for (i, t) in toks.iter().enumerate() {
            if let Some(&s) = self.polarity.get(t) {
                let negated = toks[i.saturating_sub(3)..i].iter().any(|p| p == "not" || p == "n't");
                x += if negated { -s } else { s };
            }
        }
        1.0 / (1.0 + (-f64::from(x)).exp())
    }

    fn label(&self, text: &str) -> &'static str {
        let p = self.prob(text);
        if p <= 1.0 / 3.0 {
            "negative"
        } else if p < 2.0 / 3.0 {
            "neutral"
        } else {
            "positive"
        }
    }
}

/// Contraction variants for the mini suite's corpus, worked out by hand from
/// the contraction table: expansions take precedence over contractions.
const CONTRACTION_PAIRS: [(&str, &str); 8] = [
    ("I didn't like the food.", "I did not like the food."),
    ("Not that I'm happy about it.", "Not that I am happy about it."),
    ("The flight wasn't bad.", "The flight was not bad."),
    ("The food can't be good.", "The food cannot be good."),
    ("It's not that the service was terrible.", "It is not that the service was terrible."),
    ("Not that it's awful.", "Not that it is awful."),
    ("You are not great.", "You're not great."),
    ("I would rather not", "I'd rather not"),
];

fn rate(failed: usize, total: usize) -> String {
    format!("{:.1}", 100.0 * failed as f64 / total as f64)
}

fn oracle_mini_rates(lex: &OracleLexicons, m: &OracleModel) -> Vec<(String, usize, String)> {
    let mut out = Vec::new();
    let mut push = |name: &str, fails: Vec<bool>| {
        let failed = fails.iter().filter(|f| **f).count();
        out.push((name.to_string(), fails.len(), rate(failed, fails.len())));
    };
    let things = lex.texts("THING");

    let mft = |adjs: &str, accept: &[&str]| -> Vec<bool> {
        let mut seen = BTreeSet::new();
        let mut fails = Vec::new();
        for thing in &things {
            for adj in lex.texts(adjs) {
                let text = format!("The {thing} was {adj}.");
                if seen.insert(text.clone()) {
                    fails.push(!accept.contains(&m.label(&text)));
                }
            }
        }
        fails
    };
    push("positive adjectives should be positive", mft("pos_adj", &["positive"]));
    push("neutral adjectives should be neutral", mft("neutral_adj", &["neutral"]));

    let mut fails = Vec::new();
    for neg in lex.texts("NEGATION") {
        for verb in lex.texts("POS_VERB") {
            for thing in &things {
                fails.push(m.label(&format!("I {neg} {verb} the {thing}.")) != "negative");
            }
        }
    }
    push("negated positive should be negative", fails);

    let mut fails = Vec::new();
    for thing in &things {
        for adj in lex.texts("neg_adj") {
            let l = m.label(&format!("I don't think the {thing} was {adj}."));
            fails.push(l != "positive" && l != "neutral");
        }
    }
    push("negated negative should be positive or neutral", fails);

    let fails = CONTRACTION_PAIRS
        .iter()
        .map(|(a, b)| m.label(a) != m.label(b) && (m.prob(a) - m.prob(b)).abs() > 0.1 + 1e-12)
        .collect();
    push("contractions should not change prediction", fails);

    let mut fails = Vec::new();
    for verb in lex.texts("POS_VERB") {
        for thing in &things {
            let a = format!("I {verb} the {thing}.");
            fails.push(m.prob(&format!("{a} You are lame.")) - m.prob(&a) > 0.1 + 1e-12);
        }
    }
    push("adding a negative phrase should not raise sentiment", fails);

    let corpus = [
        "I love the flight.",
        "The flight was on time.",
        "The food was awful.",
        "I didn't hate the crew.",
        "What a great and amazing crew.",
    ];
    let fails = corpus.iter().map(|t| m.label(&format!("{t} I hate you.")) != "negative").collect();
    push("adding 'I hate you.' should make it negative", fails);
    out
}

fn end_to_end() -> Check {
    let start = Instant::now();
    let lex = OracleLexicons::parse(&[bundled::LEXICONS, bundled::DEMO_LEXICONS]);
    let model = OracleModel::new(&lex)?;
    let want = oracle_mini_rates(&lex, &model);

    let suite = bundled::suite("sentiment_mini").unwrap().map_err(|e| e.to_string())?;
    let types: BTreeSet<&str> = suite.tests.iter().map(|t| t.test_type.as_str()).collect();
    ensure(suite.tests.len() >= 6 && types.len() == 3, || format!("{} tests, types {types:?}", suite.tests.len()))?;
    let gateway =
        Gateway::from_spec(&"toy".parse::<AdapterSpec>().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let result = suite::run_suite(&suite, &bundled::all_lexicons(), &gateway, &RunConfig::default())
        .map_err(|e| e.to_string())?;

    ensure(result.tests.len() == want.len(), || format!("{} tests, oracle has {}", result.tests.len(), want.len()))?;
    let mut cases = 0;
    for (t, (name, n, rate)) in result.tests.iter().zip(&want) {
        let got = t.rate().map(|r| r.to_string()).unwrap_or_default();
        ensure(t.name == *name && t.n_cases == *n && got == *rate, || {
            format!("`{}`: {} cases at {got}%, oracle `{name}` {n} cases at {rate}%", t.name, t.n_cases)
        })?;
        cases += n;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < E2E_BUDGET, || format!("took {elapsed:?}"))?;
    let rates: Vec<&str> = want.iter().map(|(_, _, r)| r.as_str()).collect();
    Ok(format!("{} tests, {cases} cases, rates [{}] match, {elapsed:.2?}", want.len(), rates.join(", ")))
}

// ---------------------------------------------------------------------------

fn relational_logic() -> Check {
    let labels = [expect::DUPLICATE, expect::NON_DUPLICATE];
    let grid: Vec<u32> = (0..=20).collect();
    let score = |k: u32| f64::from(k) * 0.05;
    let mut n = 0;

    let sym = ExpectationSpec::symmetry();
    for la in labels {
        for lb in labels {
            for &i in &grid {
                for &j in &grid {
                    let preds = BTreeMap::from([
                        ("ab".to_string(), Prediction::label(la, score(i))),
                        ("ba".to_string(), Prediction::label(lb, score(j))),
                    ]);
                    let got = eval_relation(n, &preds, &sym).map_err(|e| e.to_string())?.pass;
                    // twentieths: 0.1 is two steps
                    let want = !(la != lb && i.abs_diff(j) > 2);
                    ensure(got == want, || format!("symmetry {la}@{i} {lb}@{j}: got {got}"))?;
                    n += 1;
                }
            }
        }
    }

    let imp = ExpectationSpec::implication();
    for ab in labels {
        for ac in labels {
            for bc in labels {
                for &i in &grid {
                    for &j in &grid {
                        for &k in &grid {
                            let preds = BTreeMap::from([
                                ("ab".to_string(), Prediction::label(ab, score(i))),
                                ("ac".to_string(), Prediction::label(ac, score(j))),
                                ("bc".to_string(), Prediction::label(bc, score(k))),
                            ]);
                            let got = eval_relation(n, &preds, &imp).map_err(|e| e.to_string())?.pass;
                            let d = |l: &str| l == expect::DUPLICATE;
                            let want = !(d(ab) && d(ac) && !d(bc));
                            ensure(got == want, || format!("implication {ab} {ac} {bc}: got {got}"))?;
                            n += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(format!("{n} assignments exact (symmetry 1764, implication 74088)"))
}

// ---------------------------------------------------------------------------

fn cold_report(suite: &TestSuite, spec: &str) -> Result<(String, SuiteResult), String> {
    let gateway =
        Gateway::from_spec(&spec.parse::<AdapterSpec>().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let result = suite::run_suite(suite, &bundled::all_lexicons(), &gateway, &RunConfig::default())
        .map_err(|e| e.to_string())?;
    Ok((suite::render_report(&result, ReportFormat::Json), result))
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut bytes = 0;
    for (name, adapter) in [("sentiment_mini", "toy"), ("sentiment", "toy"), ("qqp", "toy-qqp"), ("mc", "toy-mc")] {
        let suite = bundled::suite(name).unwrap().map_err(|e| e.to_string())?;
        let (a, ra) = cold_report(&suite, adapter)?;
        let (b, rb) = cold_report(&suite, adapter)?;
        ensure(a == b, || format!("{name}: reports differ"))?;
        ensure(ra.tests == rb.tests, || format!("{name}: case-level results differ"))?;
        bytes += a.len();

        let path = dir.path().join(format!("{name}.json"));
        suite.save(&path).map_err(|e| e.to_string())?;
        let back = TestSuite::load(&path).map_err(|e| e.to_string())?;
        ensure(back == suite, || format!("{name}: suite save/load not equal"))?;

        let rpath = dir.path().join(format!("{name}.result.json"));
        ra.save(&rpath).map_err(|e| e.to_string())?;
        let rback = SuiteResult::load(&rpath).map_err(|e| e.to_string())?;
        ensure(rback == ra, || format!("{name}: result save/load not equal"))?;
    }
    Ok(format!("4 suites x 2 cold runs byte-identical ({bytes} report bytes); suites and results round-trip"))
}

// ---------------------------------------------------------------------------

/// Randomizes verdicts (and drops some as errored) in a real templated test,
/// then checks Σ n_v·rate_v / Σ n_v over a tag's values against the overall
/// rate counted here.
fn slice_identity() -> Check {
    let suite = bundled::suite("mc").unwrap().map_err(|e| e.to_string())?;
    let (_, base) = cold_report(&suite, "toy-mc")?;
    let test_name = "Negation in context, may or may not be in question";
    let mut rng = ChaCha8Rng::seed_from_u64(0x511CE);
    let mut worst: f64 = 0.0;
    for set in 0..SLICE_SETS {
        let mut result = base.clone();
        let t = result.tests.iter_mut().find(|t| t.name == test_name).ok_or("test missing")?;
        let p_fail = rng.gen_range(0.0..1.0);
        let (mut judged, mut failed) = (0usize, 0usize);
        for c in &mut t.cases {
            if rng.gen_bool(0.05) {
                c.verdict = None;
                c.error = Some("dropped".into());
                continue;
            }
            let v = c.verdict.as_mut().ok_or("case without verdict")?;
            v.pass = !rng.gen_bool(p_fail);
            judged += 1;
            failed += usize::from(!v.pass);
        }
        t.n_cases = judged;
        t.failed = failed;
        if judged == 0 {
            continue;
        }
        let overall = 100.0 * failed as f64 / judged as f64;

        let slot = ["P1", "P2"].choose(&mut rng).unwrap();
        let values: BTreeSet<String> = t
            .cases
            .iter()
            .filter_map(|c| c.binding.get(slot).and_then(|b| b.tags.get("gender")).map(str::to_string))
            .collect();
        ensure(values.len() >= 2, || format!("{slot}.gender has values {values:?}"))?;
        let (mut weighted, mut n) = (0.0, 0usize);
        for v in &values {
            let q: TagQuery =
                format!("{slot}.gender={v}").parse().map_err(|e: nlpcheck::lexicon::LexiconError| e.to_string())?;
            if let Ok(r) = suite::slice_result(&result, test_name, &q) {
                weighted += r.total as f64 * r.percent();
                n += r.total;
            }
        }
        ensure(n == judged, || format!("set {set}: slices cover {n} of {judged} judged cases"))?;
        let err = (weighted / n as f64 - overall).abs();
        worst = worst.max(err);
        ensure(err <= SLICE_TOLERANCE, || format!("set {set}: weighted {} vs overall {overall}", weighted / n as f64))?;
    }
    Ok(format!("{SLICE_SETS} randomized sets, max |error| {worst:.1e}"))
}
