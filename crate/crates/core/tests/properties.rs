use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use proptest::prelude::*;
use proptest::sample::subsequence;

use nlpcheck::bundled;
use nlpcheck::expect::{
    eval_dir, eval_inv, failure_rate, neutral_band, CaseVerdict, Direction, ExpectationSpec, Prediction, VerdictDetails,
};
use nlpcheck::lexicon::{LexiconEntry, LexiconStore, TagQuery, Tags};
use nlpcheck::model::{toy_model, Gateway, PredictionCache, ToySentiment};
use nlpcheck::perturb::{entity_change, typo_swap, EntityKind, Perturbation};
use nlpcheck::suggest::{
    suggest, triage, MaskQuery, SuggestError, Suggestion, SuggestionProvider, SuppressionList, TriageDecision,
    TriageOptions,
};
use nlpcheck::template::{count_expansions, expand, parse_template, ExpansionConfig, TemplateGroup};

// ---------------------------------------------------------------------------
// generators

/// Modifier-free template source: literal runs (with `{{`/`}}` escapes) and
/// `{slot}` references.
fn template_source() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        "[a-zA-Z .,!?']{1,8}",
        Just("{{".to_string()),
        Just("}}".to_string()),
        "[a-z_][a-z0-9_]{0,6}".prop_map(|s| format!("{{{s}}}")),
    ];
    prop::collection::vec(piece, 1..8).prop_map(|p| p.concat())
}

/// Lexicons `L0..Ln` with distinct, unambiguous fills.
fn store_with(sizes: &[usize]) -> LexiconStore {
    let mut store = LexiconStore::new();
    for (l, &n) in sizes.iter().enumerate() {
        let entries = (0..n)
            .map(|i| LexiconEntry::tagged(format!("w{l}x{i}"), Tags::new().with("parity", ["even", "odd"][i % 2])))
            .collect();
        store.insert(format!("L{l}"), entries).unwrap();
    }
    store
}

/// (lexicon sizes, templates as lists of lexicon indices, unshared lexicons)
fn group_spec() -> impl Strategy<Value = (Vec<usize>, Vec<Vec<usize>>, Vec<bool>)> {
    prop::collection::vec(1usize..5, 1..4).prop_flat_map(|sizes| {
        let n = sizes.len();
        (
            Just(sizes),
            prop::collection::vec(prop::collection::vec(0..n, 1..4), 1..4),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

fn build_group(templates: &[Vec<usize>], unshared: &[bool]) -> TemplateGroup {
    let srcs: Vec<String> =
        templates.iter().map(|t| t.iter().map(|l| format!("<{{L{l}}}>")).collect::<Vec<_>>().join(" ")).collect();
    let mut g = TemplateGroup::parse(&srcs).unwrap();
    let used: BTreeSet<usize> = templates.iter().flatten().copied().collect();
    for l in used {
        if unshared[l] {
            g = g.with_shared(&format!("L{l}"), false).unwrap();
        }
    }
    g
}

fn fills(text: &str) -> Vec<String> {
    text.split('<').skip(1).map(|s| s.split('>').next().unwrap().to_string()).collect()
}

fn label() -> impl Strategy<Value = &'static str> {
    prop_oneof![Just("positive"), Just("negative"), Just("neutral")]
}

fn verdicts() -> impl Strategy<Value = Vec<CaseVerdict>> {
    prop::collection::vec(any::<bool>(), 1..60).prop_map(|passes| {
        passes
            .into_iter()
            .enumerate()
            .map(|(i, pass)| CaseVerdict {
                case_id: i,
                pass,
                details: VerdictDetails { rule: "mft".into(), labels: vec![], scores: vec![] },
            })
            .collect()
    })
}

struct Fixed(Vec<Suggestion>);

impl SuggestionProvider for Fixed {
    fn candidates(&self, _: &MaskQuery) -> Result<Vec<Suggestion>, SuggestError> {
        Ok(self.0.clone())
    }
}

fn candidates() -> impl Strategy<Value = Vec<Suggestion>> {
    prop::collection::btree_map("[a-f]{1,3}", 0u8..=10, 0..15)
        .prop_map(|m| m.into_iter().map(|(text, s)| Suggestion { text, score: f64::from(s) / 10.0 }).collect())
}

// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn template_render_roundtrip(src in template_source()) {
        let ast = parse_template(&src).unwrap();
        prop_assert_eq!(ast.to_source(), src);
    }

    #[test]
    fn expansion_size_matches_count((sizes, templates, unshared) in group_spec()) {
        let store = store_with(&sizes);
        let g = build_group(&templates, &unshared);
        let cfg = ExpansionConfig { max_cases: None, seed: 0, dedupe: false };
        let n = expand(&g, &store, &cfg).unwrap().len();
        prop_assert_eq!(n as u128, count_expansions(&g, &store).unwrap());
    }

    #[test]
    fn shared_slots_agree_across_tuple((sizes, templates, unshared) in group_spec()) {
        let store = store_with(&sizes);
        let g = build_group(&templates, &unshared);
        for case in expand(&g, &store, &ExpansionConfig::default()).unwrap() {
            let mut seen: BTreeMap<usize, String> = BTreeMap::new();
            for (t, text) in templates.iter().zip(&case.texts) {
                let mut within: BTreeMap<usize, String> = BTreeMap::new();
                for (l, fill) in t.iter().zip(fills(text)) {
                    let prefix = format!("w{l}x");
                    prop_assert!(fill.starts_with(&prefix));
                    // one variable per template even when unshared
                    prop_assert_eq!(within.entry(*l).or_insert_with(|| fill.clone()), &fill);
                    if !unshared[*l] {
                        prop_assert_eq!(seen.entry(*l).or_insert_with(|| fill.clone()), &fill);
                    }
                }
            }
        }
    }

    #[test]
    fn sample_is_subset_and_deterministic((sizes, templates, unshared) in group_spec(), k in 1usize..20, seed: u64) {
        let store = store_with(&sizes);
        let g = build_group(&templates, &unshared);
        let full: BTreeSet<Vec<String>> =
            expand(&g, &store, &ExpansionConfig::default()).unwrap().into_iter().map(|c| c.texts).collect();
        let cfg = ExpansionConfig { max_cases: Some(k), seed, dedupe: true };
        let a = expand(&g, &store, &cfg).unwrap();
        let b = expand(&g, &store, &cfg).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), k.min(full.len()));
        for c in a {
            prop_assert!(full.contains(&c.texts));
        }
    }

    #[test]
    fn filter_composes(sizes in prop::collection::vec(1usize..9, 1..3), q1 in 0usize..3, q2 in 0usize..3) {
        let store = store_with(&sizes);
        let queries = ["", "parity=even", "parity=odd"];
        let (a, b): (TagQuery, TagQuery) = (queries[q1].parse().unwrap(), queries[q2].parse().unwrap());
        let lex = store.lexicon("L0").unwrap();
        prop_assert_eq!(lex.filter(&a).filter(&b), lex.filter(&a.and(&b)));
    }

    #[test]
    fn lexicon_file_roundtrip(sizes in prop::collection::vec(0usize..6, 1..4)) {
        let store = store_with(&sizes);
        let text = store.to_file_string();
        let back = LexiconStore::parse(&text).unwrap();
        prop_assert_eq!(&back, &store);
        prop_assert_eq!(back.to_file_string(), text);
    }

    #[test]
    fn suggestions_sorted(list in candidates(), top_k in 1usize..20) {
        let q = MaskQuery::new("I {mask} it.", top_k).unwrap();
        let out = suggest(&Fixed(list.clone()), &q, &SuppressionList::default()).unwrap();
        prop_assert_eq!(out.len(), top_k.min(list.len()));
        for w in out.windows(2) {
            prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].text < w[1].text));
        }
    }

    #[test]
    fn triage_idempotent_and_suppressing(list in candidates(), picks in prop::collection::vec(0u8..3, 15)) {
        let template = "I {mask} it.";
        let mut decisions = BTreeMap::new();
        for (s, p) in list.iter().zip(&picks) {
            match p {
                0 => { decisions.insert(s.text.clone(), TriageDecision::Accept { lexicon: "verbs".into(), tags: Tags::new() }); }
                1 => { decisions.insert(s.text.clone(), TriageDecision::Reject); }
                _ => {}
            }
        }
        let store = store_with(&[1]);
        let opts = TriageOptions { auto_create: true };
        let out = triage(&store, template, &list, &decisions, opts).unwrap();
        let once = out.delta.apply(&store);
        let twice = out.delta.apply(&once);
        prop_assert_eq!(&once, &twice);
        let again = triage(&once, template, &list, &decisions, opts).unwrap().delta.apply(&once);
        prop_assert_eq!(&once, &again);

        let q = MaskQuery::new(template, 100).unwrap();
        let shown = suggest(&Fixed(list.clone()), &q, &out.suppressed).unwrap();
        for (text, d) in &decisions {
            if *d == TriageDecision::Reject {
                prop_assert!(shown.iter().all(|s| &s.text != text));
            }
        }
    }

    #[test]
    fn typo_is_adjacent_transpositions(words in prop::collection::vec("[a-zA-Z@#]{1,9}", 1..6), n in 1usize..3, seed: u64) {
        let text = words.join(" ");
        match typo_swap(&text, n, seed) {
            Ok(v) => {
                let out = &v[0].text;
                let (a, b): (Vec<char>, Vec<char>) = (text.chars().collect(), out.chars().collect());
                prop_assert_eq!(a.len(), b.len());
                let mut sa = a.clone();
                let mut sb = b.clone();
                sa.sort_unstable();
                sb.sort_unstable();
                prop_assert_eq!(sa, sb);
                let mut i = 0;
                let mut swaps = 0;
                while i < a.len() {
                    prop_assert_eq!(a[i].is_whitespace(), b[i].is_whitespace());
                    if a[i] != b[i] {
                        prop_assert!(i + 1 < a.len() && a[i] == b[i + 1] && a[i + 1] == b[i]);
                        prop_assert!(!a[i].is_whitespace() && !a[i + 1].is_whitespace());
                        swaps += 1;
                        i += 2;
                    } else {
                        i += 1;
                    }
                }
                prop_assert_eq!(swaps, n);
                prop_assert_eq!(v[0].delta.apply(&text).unwrap(), out.clone());
                prop_assert_eq!(typo_swap(&text, n, seed).unwrap(), v);
            }
            Err(e) => prop_assert!(matches!(e, nlpcheck::perturb::PerturbError::NoSwapSite)),
        }
    }

    #[test]
    fn entity_change_invertible(first in 0usize..20, city in 0usize..20, seed: u64) {
        let store = bundled::lexicons();
        let name = &store.entries("first_name").unwrap()[first].text;
        let place = &store.entries("city").unwrap()[city].text;
        let text = format!("{name} flew to {place} yesterday.");
        for kind in [EntityKind::PersonName, EntityKind::Location] {
            let v = &entity_change(&text, kind, store, seed).unwrap()[0];
            prop_assert_ne!(&v.text, &text);
            prop_assert_eq!(&v.delta.apply(&text).unwrap(), &v.text);
            prop_assert_eq!(v.delta.inverse().apply(&v.text).unwrap(), text.clone());
            for e in &v.delta.edits {
                prop_assert_ne!(&e.old, &e.new);
            }
            prop_assert_eq!(&entity_change(&text, kind, store, seed).unwrap()[0], v);
        }
    }

    #[test]
    fn perturbations_deterministic_and_change_text(idx in 0usize..6, seed: u64) {
        let store = bundled::all_lexicons();
        let texts = vec!["@united John can't find my bag in Boston".to_string()];
        let p = [
            Perturbation::TypoSwap { n_swaps: 1 },
            Perturbation::Contraction,
            Perturbation::NameChange,
            Perturbation::LocationChange,
            Perturbation::AddUrlHandle { handle: nlpcheck::perturb::UrlHandleKind::Url },
            Perturbation::AddPhrase { phrases: vec!["Thanks.".into(), "Never again.".into()] },
        ][idx].clone();
        let a = p.apply(&texts, None, &store, seed).unwrap();
        prop_assert_eq!(&p.apply(&texts, None, &store, seed).unwrap(), &a);
        prop_assert_ne!(&a.texts, &texts);
    }

    #[test]
    fn inv_symmetric(la in label(), lb in label(), a in 0.0f64..=1.0, b in 0.0f64..=1.0, tol in 0.0f64..0.5) {
        let spec = ExpectationSpec::Inv { tolerance: tol };
        let (pa, pb) = (Prediction::label(la, a), Prediction::label(lb, b));
        prop_assert_eq!(eval_inv(0, &pa, &pb, &spec).unwrap().pass, eval_inv(0, &pb, &pa, &spec).unwrap().pass);
    }

    #[test]
    fn dir_monotone(s in 0.0f64..=1.0, t in 0.0f64..=1.0, eps in 0.0f64..=1.0) {
        let spec = ExpectationSpec::dir(Direction::MustNotIncrease);
        let orig = Prediction::label("positive", s);
        let pass = |x: f64| eval_dir(0, &orig, &Prediction::label("positive", x), &spec).unwrap().pass;
        if pass(t) {
            prop_assert!(pass((t - eps).max(0.0)));
        }
    }

    #[test]
    fn neutral_band_partition(p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
        let rank = |x: f64| match neutral_band(x).unwrap() {
            "negative" => 0,
            "neutral" => 1,
            "positive" => 2,
            other => panic!("{other}"),
        };
        if p <= q {
            prop_assert!(rank(p) <= rank(q));
        }
    }

    #[test]
    fn failure_rate_bounded_and_order_free(v in verdicts(), perm in any::<prop::sample::Index>()) {
        let r = failure_rate(&v).unwrap();
        prop_assert!((0.0..=100.0).contains(&r));
        let mut rotated = v.clone();
        rotated.rotate_left(perm.index(v.len()));
        prop_assert_eq!(failure_rate(&rotated).unwrap(), r);
    }

    #[test]
    fn toy_model_pure(words in subsequence(vec!["good", "bad", "not", "great", "awful", "the", "food", "n't", "love"], 0..9)) {
        let text = words.join(" ");
        prop_assert_eq!(toy_model(&text), toy_model(&text));
    }

    #[test]
    fn gateway_aligned_and_cache_sound(idx in prop::collection::vec(0usize..8, 1..40), jobs in 1usize..5) {
        let pool = ["good food", "bad food", "not good", "awful", "fine", "great flight", "I hate it", "ok"];
        let inputs: Vec<Vec<String>> = idx.iter().map(|&i| vec![pool[i].to_string()]).collect();
        let cache = Arc::new(PredictionCache::in_memory());
        let gw = Gateway::new(Arc::new(ToySentiment::new("toy|prop|1"))).with_cache(cache.clone()).with_jobs(jobs);
        let cold: Vec<Prediction> = gw.predict_batch(&inputs).unwrap().into_iter().map(Result::unwrap).collect();
        let warm: Vec<Prediction> = gw.predict_batch(&inputs).unwrap().into_iter().map(Result::unwrap).collect();
        prop_assert_eq!(&cold, &warm);
        for (p, i) in cold.iter().zip(&inputs) {
            prop_assert_eq!(p, &toy_model(&i[0]));
        }
    }
}
