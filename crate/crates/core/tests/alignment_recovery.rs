use std::collections::BTreeMap;

use clarify_core::alignment::{align, group_and_intersect, parallel_sentences, restrict_pool, train_ibm1};
use clarify_core::corpus::{build_pools, DEFAULT_POOL_CAP};
use clarify_testkit::{dictionary_corpus, gloss_corpus};

#[test]
fn recovers_one_to_one_dictionary() {
    let corpus = dictionary_corpus(50, 500, 3);
    let fit = train_ibm1(&corpus.pairs, 10).unwrap();
    let mut occurrences: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &corpus.pairs {
        for e in &p.l2 {
            *occurrences.entry(e).or_default() += 1;
        }
    }
    let mut checked = 0;
    for (e, f) in &corpus.dictionary {
        if occurrences.get(e.as_str()).copied().unwrap_or(0) >= 5 {
            assert_eq!(fit.table.best(e).unwrap().0, f, "source {e}");
            checked += 1;
        }
    }
    assert!(checked >= 45, "only {checked} frequent sources");
    for (e, row) in &fit.table.probs {
        let total: f64 = row.values().sum();
        assert!((total - 1.0).abs() < 1e-9, "{e}: {total}");
    }
    for pair in fit.log_likelihood.windows(2) {
        assert!(pair[1] >= pair[0] - 1e-9);
    }
}

#[test]
fn links_reproduce_dictionary() {
    let corpus = dictionary_corpus(50, 500, 4);
    let fit = train_ibm1(&corpus.pairs, 10).unwrap();
    for p in corpus.pairs.iter().take(50) {
        let links = align(&fit.table, &p.l2, &p.l1);
        assert_eq!(links.len(), p.l1.len());
        for (i, j) in links {
            assert_eq!(corpus.dictionary[&p.l2[i]], p.l1[j]);
        }
    }
}

#[test]
fn shared_gloss_restricts_pools() {
    let toy = gloss_corpus(&["g1", "g2"], &["g2", "g3"], 5);
    let fit = train_ibm1(&toy.pairs, 10).unwrap();
    let sentences = parallel_sentences(&toy.pairs, "p").unwrap();
    let pools = build_pools(&sentences, &toy.set, DEFAULT_POOL_CAP);
    let grouping = group_and_intersect(&toy.set, &pools, &fit.table);
    assert_eq!(grouping.common.iter().collect::<Vec<_>>(), ["g2"]);
    assert_eq!(grouping.skipped, 0);
    for (lemma, buckets) in &grouping.per_word {
        for (gloss, ids) in buckets {
            for id in ids {
                assert_eq!(&toy.planted[id], gloss, "{lemma} {id}");
            }
        }
        let bucketed: usize = buckets.values().map(Vec::len).sum();
        assert_eq!(bucketed + grouping.unaligned, pools[lemma].len());
    }
    let restricted = restrict_pool(&pools, &grouping);
    assert!(!restricted.fallback);
    for (lemma, pool) in &restricted.pools {
        let expected: Vec<&str> = pools[lemma]
            .iter()
            .filter(|s| toy.planted[&s.id] == "g2")
            .map(|s| s.id.as_str())
            .collect();
        let got: Vec<&str> = pool.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(got, expected);
        assert_eq!(got.len(), 30);
    }
    let again = restrict_pool(&restricted.pools, &grouping);
    assert_eq!(again, restricted);
}

#[test]
fn disjoint_glosses_fall_back() {
    let toy = gloss_corpus(&["g1", "g2"], &["g3", "g4"], 6);
    let fit = train_ibm1(&toy.pairs, 10).unwrap();
    let sentences = parallel_sentences(&toy.pairs, "p").unwrap();
    let pools = build_pools(&sentences, &toy.set, DEFAULT_POOL_CAP);
    let grouping = group_and_intersect(&toy.set, &pools, &fit.table);
    assert!(grouping.common.is_empty());
    let restricted = restrict_pool(&pools, &grouping);
    assert!(restricted.fallback);
    assert_eq!(restricted.pools, pools);
}
