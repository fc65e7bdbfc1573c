//! Recall, exactness and determinism of the HNSW index against an exhaustive
//! cosine scan written independently of the index code.

use curio_core::domain::{EmbeddingVector, MuragId};
use curio_core::hnsw::{HnswIndex, HnswParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_unit_vectors(n: usize, dim: usize, seed: u64) -> Vec<EmbeddingVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let v: Vec<f32> = (0..dim).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect();
            EmbeddingVector::normalized(v).unwrap()
        })
        .collect()
}

fn id(i: usize) -> MuragId {
    MuragId::new(format!("n{i:06}")).unwrap()
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for i in 0..a.len() {
        s += a[i] as f64 * b[i] as f64;
    }
    s
}

/// Exhaustive oracle: every stored vector scored, sorted, cut at k.
fn brute_force(corpus: &[EmbeddingVector], q: &EmbeddingVector, k: usize) -> Vec<(MuragId, f64)> {
    let mut all: Vec<(MuragId, f64)> = corpus
        .iter()
        .enumerate()
        .map(|(i, v)| (id(i), cosine(v.as_slice(), q.as_slice())))
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn build(corpus: &[EmbeddingVector], params: HnswParams) -> HnswIndex {
    let mut index = HnswIndex::new(corpus[0].dim(), params).unwrap();
    for (i, v) in corpus.iter().enumerate() {
        index.insert(id(i), v).unwrap();
    }
    index
}

fn recall(index: &HnswIndex, corpus: &[EmbeddingVector], queries: &[EmbeddingVector], ef: usize) -> f64 {
    let mut total = 0.0;
    for q in queries {
        let truth: Vec<MuragId> = brute_force(corpus, q, 10).into_iter().map(|h| h.0).collect();
        let got = index.search(q, 10, Some(ef)).unwrap();
        total += got.iter().filter(|h| truth.contains(&h.id)).count() as f64 / 10.0;
    }
    total / queries.len() as f64
}

#[test]
fn recall_is_monotone_in_ef() {
    let corpus = random_unit_vectors(3000, 32, 11);
    let queries = random_unit_vectors(50, 32, 12);
    let index = build(&corpus, HnswParams::default());
    let mut last = 0.0;
    for ef in [10, 25, 50, 100, 200, 400] {
        let r = recall(&index, &corpus, &queries, ef);
        assert!(r + 1e-12 >= last, "recall dropped from {last} to {r} at ef={ef}");
        last = r;
    }
    assert!(last >= 0.95);
}

#[test]
fn scores_are_exact_cosines() {
    let corpus = random_unit_vectors(2000, 48, 5);
    let index = build(&corpus, HnswParams::default());
    for q in random_unit_vectors(20, 48, 6) {
        for hit in index.search(&q, 10, None).unwrap() {
            let i: usize = hit.id.as_str()[1..].parse().unwrap();
            assert!((hit.score - cosine(corpus[i].as_slice(), q.as_slice())).abs() < 1e-6);
        }
    }
}

#[test]
fn full_beam_equals_exhaustive_scan() {
    let corpus = random_unit_vectors(1000, 24, 21);
    let index = build(&corpus, HnswParams::default());
    for q in random_unit_vectors(20, 24, 22) {
        let got: Vec<(MuragId, f64)> = index
            .search(&q, 10, Some(corpus.len()))
            .unwrap()
            .into_iter()
            .map(|h| (h.id, h.score))
            .collect();
        assert_eq!(got, brute_force(&corpus, &q, 10));
    }
}

#[test]
fn persisted_index_answers_identically() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = random_unit_vectors(1000, 32, 31);
    let index = build(&corpus, HnswParams::default());
    let path = dir.path().join("hnsw_test.idx");
    index.persist(&path).unwrap();
    let loaded = HnswIndex::load(&path).unwrap();
    for q in random_unit_vectors(20, 32, 32) {
        assert_eq!(index.search(&q, 10, None).unwrap(), loaded.search(&q, 10, None).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn build_and_search_are_deterministic(seed in any::<u64>(), n in 1usize..200, m in 2usize..12) {
        let corpus = random_unit_vectors(n, 8, seed);
        let params = HnswParams { m, ef_construction: 2 * m, ef_search: 16, seed };
        let a = build(&corpus, params);
        let b = build(&corpus, params);
        prop_assert_eq!(a.to_bytes(), b.to_bytes());
        let q = &random_unit_vectors(1, 8, seed ^ 1)[0];
        let hits = a.search(q, 5, None).unwrap();
        prop_assert_eq!(&hits, &b.search(q, 5, None).unwrap());
        prop_assert_eq!(hits.len(), n.min(5));
        prop_assert!(hits.windows(2).all(|w| w[0].score > w[1].score
            || (w[0].score == w[1].score && w[0].id < w[1].id)));
        for (total, reached) in a.layer_reachability() {
            prop_assert_eq!(total, reached);
        }
    }
}
