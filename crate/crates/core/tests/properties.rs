mod common;

use common::*;
use hkv::chunker::{
    boundary_levels, check_tiling, segment, segment_levels, BoundaryKind, ChunkPolicy, Level,
    SeparatorTable, TokenRecord,
};
use hkv::evaluator::{audit_covering, audit_ub_soundness, check_partition, jaccard};
use hkv::kv_index::{build_index, spherical_kmeans, IndexConfig};
use hkv::retriever::{select_active, Budgets};
use proptest::prelude::*;

const WORDS: &[&str] = &[
    "a", "bb", "c.", "d,", "e;", "x\n\n", "}", "---", "。", "y ", "z\t", "q?", "",
];

fn text_tokens(pieces: &[usize]) -> Vec<TokenRecord> {
    pieces
        .iter()
        .enumerate()
        .map(|(id, &w)| TokenRecord::new(id, WORDS[w], vec![1.0, 0.0], vec![0.0, 0.0]))
        .collect()
}

fn level_strategy() -> impl Strategy<Value = Vec<Option<Level>>> {
    prop::collection::vec(prop::option::weighted(0.3, 1u8..=4), 1..200)
}

fn unit_points(d: usize, n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d), n)
        .prop_filter("non-zero", |ps| {
            ps.iter().all(|p| p.iter().any(|x| x.abs() > 1e-3))
        })
        .prop_map(|ps| ps.into_iter().map(unit).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn segmentation_tiles_and_respects_bounds(levels in level_strategy(), min in 1usize..10, extra in 0usize..12) {
        let policy = ChunkPolicy::new(min, min + extra).unwrap();
        let spans = segment_levels(&levels, &policy);
        check_tiling(&spans, levels.len()).unwrap();
        for (i, s) in spans.iter().enumerate() {
            prop_assert!(s.len() <= policy.max_len);
            if i + 1 < spans.len() {
                prop_assert!(s.len() >= policy.min_len);
            } else {
                prop_assert!(!s.is_empty());
            }
            if let BoundaryKind::Natural(l) = s.boundary_kind {
                prop_assert_eq!(levels[s.end - 1], Some(l));
            }
        }
    }

    #[test]
    fn no_better_boundary_lies_inside_the_window(levels in level_strategy()) {
        let policy = ChunkPolicy::default();
        let spans = segment_levels(&levels, &policy);
        for s in spans.iter().filter(|s| s.boundary_kind != BoundaryKind::Tail) {
            let lo = s.start + policy.min_len - 1;
            let hi = (s.start + policy.max_len).min(levels.len());
            let best = (lo..hi).filter_map(|i| levels[i]).min();
            match s.boundary_kind {
                BoundaryKind::Natural(l) => {
                    prop_assert_eq!(Some(l), best);
                    // Rightmost among equals.
                    prop_assert!((s.end..hi).all(|i| levels[i] != Some(l)));
                }
                BoundaryKind::Forced => prop_assert_eq!(best, None),
                BoundaryKind::Tail => unreachable!(),
            }
        }
    }

    #[test]
    fn text_segmentation_reconstructs_and_is_deterministic(pieces in prop::collection::vec(0usize..WORDS.len(), 1..150)) {
        let tokens = text_tokens(&pieces);
        let a = segment(&tokens, &ChunkPolicy::default()).unwrap();
        let b = segment(&tokens, &ChunkPolicy::default()).unwrap();
        prop_assert_eq!(&a, &b);
        let joined: String = a.iter().flat_map(|s| tokens[s.range()].iter().map(|t| t.text.as_str())).collect();
        let original: String = tokens.iter().map(|t| t.text.as_str()).collect();
        prop_assert_eq!(joined, original);
        let levels = boundary_levels(&tokens, &SeparatorTable::default());
        prop_assert_eq!(levels.len(), tokens.len());
    }

    #[test]
    fn kmeans_objective_never_decreases(points in unit_points(4, 3..40), k in 1usize..6, seed in any::<u64>()) {
        let k = k.min(points.len());
        let result = spherical_kmeans(&points, k, 10, seed).unwrap();
        for pair in result.objective.windows(2) {
            prop_assert!(pair[1] >= pair[0] - 1e-9, "{:?}", result.objective);
        }
        for c in &result.centroids {
            prop_assert!((dot(c, c).sqrt() - 1.0).abs() < 1e-9);
        }
        let mut used = vec![false; k];
        for &a in &result.assignment {
            used[a] = true;
        }
        prop_assert!(used.into_iter().all(|u| u));
    }

    #[test]
    fn index_is_sound_partitioned_and_reproducible(seed in 0u64..1000, n in 20usize..600, blobs in 1usize..5) {
        let mut r = rng(seed);
        let centers: Vec<Vec<f64>> = (0..blobs).map(|_| random_unit(&mut r, 8)).collect();
        let tokens = blob_tokens(seed, &centers, n, 0.6);
        let spans = segment(&tokens, &ChunkPolicy::default()).unwrap();
        let cfg = IndexConfig { seed, ..IndexConfig::default() };
        let index = build_index(&tokens, &spans, &cfg).unwrap();
        let again = build_index(&tokens, &spans, &cfg).unwrap();
        prop_assert_eq!(serde_json::to_vec(&index).unwrap(), serde_json::to_vec(&again).unwrap());
        prop_assert!(check_partition(&index).is_ok());
        prop_assert_eq!(audit_covering(&index), 0);
        for c in index.chunks.iter().map(|c| &c.rep_key).chain(index.fine.iter().map(|f| &f.centroid)) {
            prop_assert!((dot(c, c).sqrt() - 1.0).abs() < 1e-9);
        }
        let queries: Vec<Vec<f64>> = (0..30).map(|_| random_vec(&mut r, 8).into_iter().map(|x| 5.0 * x).collect()).collect();
        prop_assert_eq!(audit_ub_soundness(&index, &queries).violations, 0);
    }

    #[test]
    fn larger_budgets_select_supersets(seed in 0u64..1000, k_g in 1usize..6) {
        let mut r = rng(seed);
        let centers: Vec<Vec<f64>> = (0..3).map(|_| random_unit(&mut r, 8)).collect();
        let tokens = blob_tokens(seed, &centers, 1500, 0.5);
        let index = build_index(&tokens, &segment(&tokens, &ChunkPolicy::default()).unwrap(), &IndexConfig::default()).unwrap();
        let q = random_vec(&mut r, 8);
        let mut prev: Vec<usize> = Vec::new();
        for k_c in 1..=index.fine.len() {
            let got = select_active(&index, &q, &Budgets::fixed_clusters(k_g, k_c), &[]).unwrap();
            prop_assert!(prev.iter().all(|c| got.selected_clusters.binary_search(c).is_ok()));
            prev = got.selected_clusters;
        }
        let mut prev: Vec<usize> = Vec::new();
        for budget in [1, 16, 64, 256, 1024] {
            let got = select_active(&index, &q, &Budgets { k_g, ..Budgets::token_budget(budget) }, &[]).unwrap();
            prop_assert!(prev.iter().all(|c| got.selected_clusters.binary_search(c).is_ok()));
            prev = got.selected_clusters;
        }
    }

    #[test]
    fn jaccard_is_symmetric_and_bounded(a in prop::collection::btree_set(0usize..40, 0..20), b in prop::collection::btree_set(0usize..40, 0..20)) {
        let a: Vec<usize> = a.into_iter().collect();
        let b: Vec<usize> = b.into_iter().collect();
        let ab = jaccard(&a, &b);
        prop_assert_eq!(ab, jaccard(&b, &a));
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(jaccard(&a, &a), 1.0);
    }
}

#[test]
fn shrunken_radius_is_caught_by_the_audits() {
    let mut r = rng(77);
    let centers: Vec<Vec<f64>> = (0..3).map(|_| random_unit(&mut r, 8)).collect();
    let tokens = blob_tokens(77, &centers, 2000, 0.6);
    let mut index = build_index(
        &tokens,
        &segment(&tokens, &ChunkPolicy::default()).unwrap(),
        &IndexConfig::default(),
    )
    .unwrap();
    let victim = (0..index.fine.len())
        .max_by(|&a, &b| index.fine[a].radius.total_cmp(&index.fine[b].radius))
        .unwrap();
    index.fine[victim].radius *= 0.1;
    assert!(audit_covering(&index) > 0);
    // Queries along the member farthest from the centroid expose the broken bound.
    let far = index.fine[victim]
        .members
        .iter()
        .max_by(|&&a, &&b| {
            dist(&index.chunks[a].rep_key, &index.fine[victim].centroid).total_cmp(&dist(
                &index.chunks[b].rep_key,
                &index.fine[victim].centroid,
            ))
        })
        .copied()
        .unwrap();
    let q: Vec<f64> = index.chunks[far].rep_key.iter().map(|x| 4.0 * x).collect();
    let audit = audit_ub_soundness(&index, &[q]);
    assert!(audit.violations > 0);
    assert!(audit.worst_excess > 0.0);
}
