use std::collections::BTreeSet;

use knotgate_core::model::{serialize_triples, vocab, Term, Triple};
use knotgate_core::pattern::Bindings;
use knotgate_core::store::{Provenance, ProvenanceFilter, Store};
use knotgate_testkit::{alias_classes, iri, random_graph, random_pattern, random_triple, scan};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn provenance(rng: &mut impl Rng) -> Provenance {
    match rng.gen_range(0..3) {
        0 => Provenance::Asserted(format!("urn:dev:d{}", rng.gen_range(0..2))),
        1 => Provenance::Inferred(format!("r{}", rng.gen_range(0..3))),
        _ => Provenance::Loaded(format!("k{}", rng.gen_range(0..2))),
    }
}

#[test]
fn match_agrees_with_linear_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..500 {
        let graph = random_graph(&mut rng, 60);
        let mut store = Store::new();
        for t in &graph {
            store.insert(t.clone(), Provenance::Asserted("urn:dev:x".into()));
        }
        let pattern = random_pattern(&mut rng, &["a", "b"]);
        let unique: Vec<Triple> = store.triple_set().into_iter().collect();
        let expected = scan(&unique, &pattern);
        let got: BTreeSet<Bindings> = store.match_pattern(&pattern).into_iter().map(|(_, b)| b).collect();
        assert_eq!(got, expected, "pattern {pattern}");
        assert_eq!(store.count_matches(&pattern), expected.len());
    }
}

#[test]
fn retract_removes_exactly_the_filtered_triples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let filters = [
        ProvenanceFilter::AnyAsserted,
        ProvenanceFilter::AnyInferred,
        ProvenanceFilter::AnyLoaded,
        ProvenanceFilter::Asserted("urn:dev:d0".into()),
        ProvenanceFilter::Inferred("r1".into()),
        ProvenanceFilter::Loaded("k1".into()),
    ];
    for _ in 0..200 {
        let mut store = Store::new();
        let mut first: Vec<(Triple, Provenance)> = Vec::new();
        for _ in 0..rng.gen_range(0..50) {
            let t = random_triple(&mut rng);
            let p = provenance(&mut rng);
            if !first.iter().any(|(x, _)| *x == t) {
                first.push((t.clone(), p.clone()));
            }
            store.insert(t, p);
        }
        let filter = &filters[rng.gen_range(0..filters.len())];
        let survivors: BTreeSet<Triple> =
            first.iter().filter(|(_, p)| !filter.matches(p)).map(|(t, _)| t.clone()).collect();
        let removed = store.retract(filter);
        assert_eq!(removed, first.len() - survivors.len());
        assert_eq!(store.triple_set(), survivors);
        assert!(store.check_indexes());
    }
}

#[test]
fn load_then_retract_restores_snapshot() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let mut store = Store::new();
        for t in random_graph(&mut rng, 30) {
            store.insert(t, Provenance::Asserted("urn:dev:x".into()));
        }
        let before = store.clone();
        let pack = serialize_triples(&random_graph(&mut rng, 30));
        store.load_pack(&pack, "extra").unwrap();
        store.retract(&ProvenanceFilter::Loaded("extra".into()));
        assert_eq!(store.triple_set(), before.triple_set());
        assert_eq!(store, before);
    }
}

#[test]
fn load_pack_is_all_or_nothing() {
    let mut store = Store::new();
    let doc = "<urn:t:a> <urn:t:p0> <urn:t:b> .\nbroken line\n";
    let err = store.load_pack(doc, "k").unwrap_err();
    assert!(err.to_string().contains('2'), "{err}");
    assert!(store.is_empty());
}

#[test]
fn alias_canonicalization_matches_union_find_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let names = ["urn:x:e", "urn:x:a", "urn:x:d", "urn:x:b", "urn:x:c", "urn:x:f"];
    for _ in 0..100 {
        let pairs: Vec<(Term, Term)> = (0..rng.gen_range(1..5))
            .map(|_| (iri(names[rng.gen_range(0..6)]), iri(names[rng.gen_range(0..6)])))
            .collect();
        let doc: String = pairs.iter().map(|(a, b)| format!("{a} <{}> {b} .\n", vocab::M3_EQUIVALENT_TO)).collect();
        let mut store = Store::new();
        let data: Vec<Triple> =
            names.iter().map(|n| Triple::new(iri(n), iri("urn:t:p0"), iri("urn:t:v")).unwrap()).collect();
        for t in &data[..3] {
            store.insert(t.clone(), Provenance::Asserted("urn:dev:x".into()));
        }
        store.load_pack(&doc, "aliases").unwrap();
        for t in &data[3..] {
            store.insert(t.clone(), Provenance::Asserted("urn:dev:x".into()));
        }
        let classes = alias_classes(&pairs);
        let canonical = |t: &Term| classes.get(t).cloned().unwrap_or_else(|| t.clone());
        for name in names {
            assert_eq!(store.resolve_alias(&iri(name)), canonical(&iri(name)));
        }
        let expected_subjects: BTreeSet<Term> = names.iter().map(|n| canonical(&iri(n))).collect();
        let subjects: BTreeSet<Term> =
            store.iter().filter(|(t, _)| t.predicate() == &iri("urn:t:p0")).map(|(t, _)| t.subject().clone()).collect();
        assert_eq!(subjects, expected_subjects);
        assert!(store.check_indexes());
    }
}
