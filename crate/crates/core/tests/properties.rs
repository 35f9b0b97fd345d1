use std::collections::BTreeMap;

use proptest::prelude::*;

use srzoo::delivery::{softmax, top_k, ClientCache};
use srzoo::edges::prune;
use srzoo::encoder::{cosine_similarity, default_encode, Embedding};
use srzoo::metrics::psnr;
use srzoo::pixels::{decode_pgm, encode_pgm, partition, Frame, PatchView};
use srzoo::scheduler::{decide_frame, plurality_vote, SchedulerParams};
use srzoo::seed;
use srzoo::sim::scene::{faint_textured, random_flat, random_textured};
use srzoo::zoo::{query_patch, LookupTable, ModelId, ZooEntry};

fn frame_strategy(max_side: usize) -> impl Strategy<Value = Frame> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(w, h)| {
        prop::collection::vec(any::<u8>(), w * h).prop_map(move |px| Frame::new(w, h, px, 0).unwrap())
    })
}

fn unit_vec(d: usize) -> impl Strategy<Value = Embedding> {
    prop::collection::vec(-1.0f64..1.0, d)
        .prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
        .prop_map(|v| Embedding::normalized(&v).unwrap())
}

fn table_from(d: usize, k: usize, centers: Vec<Vec<Embedding>>) -> LookupTable {
    let mut t = LookupTable::new(d, k).unwrap();
    for cs in centers {
        let id = t.next_model_id();
        t.push(ZooEntry {
            model: ModelId {
                id,
                size_bytes: 1,
                source_segment: None,
            },
            centers: cs,
        })
        .unwrap();
    }
    t
}

fn table_strategy(d: usize) -> impl Strategy<Value = (usize, Vec<Vec<Embedding>>)> {
    (1usize..4, 1usize..5).prop_flat_map(move |(k, r)| {
        (Just(k), prop::collection::vec(prop::collection::vec(unit_vec(d), 1..=k), r))
    })
}

/// Similarity between a patch and a copy with every pixel moved by one level.
fn perturbed_similarity(base: Vec<u8>, noise_seed: u64) -> f64 {
    let mut noise = seed::rng(noise_seed, "noise", 0);
    let bumped: Vec<u8> = base
        .iter()
        .map(|&v| {
            let up: bool = rand::Rng::random(&mut noise);
            if (up && v < 255) || v == 0 { v + 1 } else { v - 1 }
        })
        .collect();
    let a = default_encode(&PatchView::from_pixels(32, base).unwrap()).unwrap();
    let b = default_encode(&PatchView::from_pixels(32, bumped).unwrap()).unwrap();
    cosine_similarity(&a, &b).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_tiles_by_floor_division(frame in frame_strategy(70), n in 1usize..24) {
        let patches = partition(&frame, n).unwrap();
        prop_assert_eq!(patches.len(), (frame.width() / n) * (frame.height() / n));
        for p in &patches {
            let (ox, oy) = (p.grid_col as usize * n, p.grid_row as usize * n);
            for y in 0..n {
                for x in 0..n {
                    prop_assert_eq!(p.get(x, y), frame.get(ox + x, oy + y));
                }
            }
        }
    }

    #[test]
    fn pgm_round_trip(frame in frame_strategy(40)) {
        let back = decode_pgm(&encode_pgm(&frame), 0).unwrap();
        prop_assert_eq!(back, frame);
    }

    #[test]
    fn psnr_is_symmetric(a in frame_strategy(16), seed in any::<u64>()) {
        let mut rng = seed::rng(seed, "psnr", 0);
        let px: Vec<u8> = a.luma().iter().map(|_| rand::Rng::random(&mut rng)).collect();
        let b = Frame::new(a.width(), a.height(), px, 0).unwrap();
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert!(psnr(&a, &a).unwrap().is_infinite());
    }

    #[test]
    fn pruning_is_antitone(frame in frame_strategy(64), l1 in 0.0f64..300.0, l2 in 0.0f64..300.0) {
        let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
        let patches = partition(&frame, 8).unwrap();
        let kept_lo = prune(&patches, lo);
        let kept_hi = prune(&patches, hi);
        prop_assert!(kept_hi.len() <= kept_lo.len());
        for p in &kept_hi {
            prop_assert!(kept_lo.contains(p));
        }
    }

    #[test]
    fn unit_perturbation_keeps_embedding(seed in any::<u64>(), kind in 0u8..4, noise_seed in any::<u64>()) {
        let mut rng = seed::rng(seed, "texture", 0);
        let base = match kind {
            0 => random_textured(&mut rng, 3).canonical(32),
            1 => random_flat(&mut rng).canonical(32),
            2 => faint_textured(&mut rng, 6).canonical(32),
            _ => (0..32 * 32).map(|_| rand::Rng::random(&mut rng)).collect(),
        };
        prop_assert!(perturbed_similarity(base, noise_seed) > 0.99);
    }

    #[test]
    fn query_ignores_center_order((k, centers) in table_strategy(4), q in unit_vec(4), rot in 0usize..5) {
        let plain = table_from(4, k, centers.clone());
        let rotated: Vec<Vec<Embedding>> = centers
            .into_iter()
            .map(|mut cs| {
                let r = rot % cs.len();
                cs.rotate_left(r);
                cs
            })
            .collect();
        let shuffled = table_from(4, k, rotated);
        let a = query_patch(&q, &plain).unwrap();
        let b = query_patch(&q, &shuffled).unwrap();
        prop_assert_eq!(a.similarity, b.similarity);
        prop_assert_eq!(a.model_index, b.model_index);
    }

    #[test]
    fn adding_models_never_lowers_best_match(
        (k, centers) in table_strategy(4),
        extra in prop::collection::vec(unit_vec(4), 1..=3),
        q in unit_vec(4),
    ) {
        let before = query_patch(&q, &table_from(4, k, centers.clone())).unwrap();
        let mut grown = centers;
        grown.push(extra.into_iter().take(k).collect());
        let after = query_patch(&q, &table_from(4, k, grown)).unwrap();
        prop_assert!(after.similarity >= before.similarity);
    }

    #[test]
    fn threshold_monotonicity(
        (k, centers) in table_strategy(4),
        patches in prop::collection::vec(unit_vec(4), 1..20),
        b1 in -1.0f64..1.0, b2 in -1.0f64..1.0,
        a1 in 0.0f64..1.0, a2 in 0.0f64..1.0,
    ) {
        let table = table_from(4, k, centers);
        let params = |beta, alpha| SchedulerParams { lambda: 0.0, beta, alpha };
        let (blo, bhi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
        let (alo, ahi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        let total = |d: &srzoo::scheduler::FrameDecision| d.votes.values().sum::<u32>();
        let loose = decide_frame(0, &patches, &table, &params(blo, 0.5), None).unwrap();
        let strict = decide_frame(0, &patches, &table, &params(bhi, 0.5), None).unwrap();
        prop_assert!(total(&strict) <= total(&loose));
        let lenient = decide_frame(0, &patches, &table, &params(0.5, alo), None).unwrap();
        let demanding = decide_frame(0, &patches, &table, &params(0.5, ahi), None).unwrap();
        prop_assert!(!lenient.needs_fine_tune || demanding.needs_fine_tune);
    }

    #[test]
    fn plurality_matches_naive(votes in prop::collection::btree_map(0usize..10, 1u32..6, 1..8)) {
        let max = *votes.values().max().unwrap();
        let expected = votes.iter().filter(|(_, &c)| c == max).map(|(&m, _)| m).min().unwrap();
        prop_assert_eq!(plurality_vote(&votes).unwrap(), expected);
    }

    #[test]
    fn top_k_matches_naive(row in prop::collection::vec(0u8..6, 0..12), k in 0usize..14) {
        let row: Vec<f64> = row.into_iter().map(f64::from).collect();
        let mut naive = Vec::new();
        let mut left: Vec<usize> = (0..row.len()).collect();
        while naive.len() < k && !left.is_empty() {
            let mut best = 0;
            for i in 1..left.len() {
                if row[left[i]] > row[left[best]] {
                    best = i;
                }
            }
            naive.push(left.remove(best));
        }
        prop_assert_eq!(top_k(&row, k), naive);
    }

    #[test]
    fn softmax_is_a_distribution(row in prop::collection::vec(-50.0f64..50.0, 1..10)) {
        let p = softmax(&row);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn cache_never_exceeds_capacity(cap in 1usize..6, ops in prop::collection::vec(0usize..10, 0..60)) {
        let mut cache = ClientCache::new(cap).unwrap();
        for (i, m) in ops.into_iter().enumerate() {
            if i % 3 == 0 {
                cache.insert(&[m]);
                prop_assert!(cache.contains(m));
            } else {
                cache.access(m);
            }
            prop_assert!(cache.len() <= cap);
        }
    }
}

#[test]
fn empty_vote_map_has_no_winner() {
    assert!(plurality_vote(&BTreeMap::new()).is_err());
}

#[test]
fn extreme_flat_patches_survive_perturbation() {
    for v in [0u8, 1, 127, 128, 254, 255] {
        assert!(perturbed_similarity(vec![v; 32 * 32], u64::from(v)) > 0.99, "level {v}");
    }
}
