use std::time::{Duration, Instant};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tm3_core::similarity::{bbs, bbs_count, mbs, reciprocal_rank_pairs, NeighborSearch, SimilarityConfig};
use tm3_core::PatchSet;

fn patch_set(values: Vec<f64>, dim: usize) -> PatchSet<f64> {
    let count = values.len() / dim;
    PatchSet::new(values, count, dim).unwrap()
}

fn arb_set(dim: usize, max: usize) -> impl Strategy<Value = PatchSet<f64>> {
    (1..=max).prop_flat_map(move |n| {
        // A coarse value grid produces plenty of distance ties.
        prop::collection::vec((-4i32..=4).prop_map(|v| v as f64 * 0.5), n * dim).prop_map(move |v| patch_set(v, dim))
    })
}

fn cfg(cap_c: usize, search: NeighborSearch) -> SimilarityConfig<f64> {
    SimilarityConfig { sigma1: 0.5, cap_c, search }
}

fn random_set(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> PatchSet<f64> {
    patch_set((0..count * dim).map(|_| rng.gen_range(-1.0..1.0)).collect(), dim)
}

proptest! {
    #[test]
    fn symmetric_when_sizes_match(
        (p, q) in (1usize..20, 1usize..4).prop_flat_map(|(n, d)| (
            prop::collection::vec(-3.0f64..3.0, n * d).prop_map(move |v| patch_set(v, d)),
            prop::collection::vec(-3.0f64..3.0, n * d).prop_map(move |v| patch_set(v, d)),
        )),
        cap in 1usize..6,
    ) {
        let c = cfg(cap, NeighborSearch::Exhaustive);
        prop_assert!((mbs(&p, &q, &c).unwrap() - mbs(&q, &p, &c).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn tree_and_exhaustive_agree(p in arb_set(2, 40), q in arb_set(2, 40), cap in 1usize..6) {
        let a = reciprocal_rank_pairs(&p, &q, &cfg(cap, NeighborSearch::Exhaustive)).unwrap();
        let b = reciprocal_rank_pairs(&p, &q, &cfg(cap, NeighborSearch::KdTree)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn pairs_respect_the_cap(p in arb_set(3, 30), q in arb_set(3, 30), cap in 1usize..6) {
        let pairs = reciprocal_rank_pairs(&p, &q, &cfg(cap, NeighborSearch::Exhaustive)).unwrap();
        let mut per_i = vec![0usize; p.count()];
        let mut per_j = vec![0usize; q.count()];
        for e in pairs.iter() {
            prop_assert!(e.r >= 1 && e.r <= cap && e.s >= 1 && e.s <= cap);
            per_i[e.i] += 1;
            per_j[e.j] += 1;
        }
        prop_assert!(per_i.iter().chain(&per_j).all(|&k| k <= cap));
    }

    #[test]
    fn cap_one_sum_is_scaled_bbs(p in arb_set(2, 25), q in arb_set(2, 25)) {
        let c = cfg(1, NeighborSearch::Exhaustive);
        let min = p.count().min(q.count()) as f64;
        let sum = mbs(&p, &q, &c).unwrap() * min;
        let expect = c.unit_score() * bbs(&p, &q).unwrap() * min;
        prop_assert!((sum - expect).abs() < 1e-12);
        prop_assert_eq!(bbs_count(&p, &q).unwrap() as f64, (bbs(&p, &q).unwrap() * min).round());
    }

    #[test]
    fn bbs_takes_few_values(
        template in prop::collection::vec(-1.0f64..1.0, 12 * 3),
        batch in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 12 * 3), 1..40),
    ) {
        let t = patch_set(template, 3);
        let mut values: Vec<usize> = batch.into_iter().map(|c| bbs_count(&patch_set(c, 3), &t).unwrap()).collect();
        values.sort_unstable();
        values.dedup();
        prop_assert!(values.len() <= 12 + 1);
    }
}

fn time_pairs(count: usize, dim: usize, reps: usize) -> Duration {
    let mut rng = ChaCha8Rng::seed_from_u64(count as u64);
    let (p, q) = (random_set(&mut rng, count, dim), random_set(&mut rng, count, dim));
    let c = cfg(4, NeighborSearch::KdTree);
    let mut best = Duration::MAX;
    for _ in 0..reps {
        let t = Instant::now();
        std::hint::black_box(reciprocal_rank_pairs(&p, &q, &c).unwrap());
        best = best.min(t.elapsed());
    }
    best
}

#[test]
fn tree_search_grows_subquadratically() {
    let small = time_pairs(144, 3, 15);
    let large = time_pairs(576, 3, 5);
    let ratio = large.as_secs_f64() / small.as_secs_f64();
    println!("time ratio {ratio:.2} for a 4x larger set");
    assert!(ratio < 16.0, "time ratio {ratio:.2} for a 4x larger set");
}
