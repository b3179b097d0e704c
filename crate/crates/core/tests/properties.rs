use proptest::prelude::*;

use xling_core::analysis::overlap_coefficient;
use xling_core::retrieval::rank_embeddings;
use xling_core::stats::{paired_t_test, permutation_test, Metric};

fn counts() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (2usize..12).prop_flat_map(|n| {
        (
            proptest::collection::vec(0usize..20, n).prop_filter("non-empty", |v| v.iter().sum::<usize>() > 0),
            proptest::collection::vec(0usize..20, n).prop_filter("non-empty", |v| v.iter().sum::<usize>() > 0),
        )
    })
}

proptest! {
    #[test]
    fn overlap_is_bounded_symmetric_and_scale_free((a, b) in counts(), k in 1usize..5) {
        let ov = overlap_coefficient(&a, &b);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ov));
        prop_assert!((ov - overlap_coefficient(&b, &a)).abs() <= 1e-12);
        prop_assert!((overlap_coefficient(&a, &a) - 1.0).abs() <= 1e-12);
        let scaled: Vec<usize> = a.iter().map(|v| v * k).collect();
        prop_assert!((overlap_coefficient(&scaled, &b) - ov).abs() <= 1e-12);
    }

    #[test]
    fn ranks_ignore_corpus_order(
        corpus in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 2..10),
        seed in any::<u64>(),
    ) {
        let n = corpus.len();
        let queries: Vec<Vec<f64>> = corpus.iter().map(|v| v.iter().map(|x| x + 0.01).collect()).collect();
        let gold: Vec<usize> = (0..n).collect();
        let base = rank_embeddings(&queries, &corpus, &gold).unwrap();

        let mut order: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let permuted: Vec<Vec<f64>> = order.iter().map(|&k| corpus[k].clone()).collect();
        let mut new_gold = vec![0; n];
        for (pos, &k) in order.iter().enumerate() {
            new_gold[k] = pos;
        }
        let again = rank_embeddings(&queries, &permuted, &new_gold).unwrap();
        // Exact cosine ties may reorder; random vectors make them vanishingly rare.
        prop_assert_eq!(base, again);
    }

    #[test]
    fn t_statistic_is_location_invariant(
        a in proptest::collection::vec(-10.0f64..10.0, 3..20),
        noise in proptest::collection::vec(-1.0f64..1.0, 20),
        c in -100.0f64..100.0,
    ) {
        let b: Vec<f64> = a.iter().zip(&noise).map(|(x, e)| x + e).collect();
        let t = paired_t_test(&a, &b).unwrap();
        let shifted_a: Vec<f64> = a.iter().map(|x| x + c).collect();
        let shifted_b: Vec<f64> = b.iter().map(|x| x + c).collect();
        let u = paired_t_test(&shifted_a, &shifted_b).unwrap();
        prop_assert!((t.t - u.t).abs() <= 1e-6 * t.t.abs().max(1.0));
        prop_assert!((t.p - u.p).abs() <= 1e-6);
        let r = paired_t_test(&b, &a).unwrap();
        prop_assert!((t.t + r.t).abs() <= 1e-9 * t.t.abs().max(1.0));
        prop_assert!((t.p - r.p).abs() <= 1e-12);
    }

    #[test]
    fn permutation_p_ignores_system_labels(
        rows in proptest::collection::vec((0usize..3, 0usize..3, 0usize..3), 1..40),
        seed in any::<u64>(),
    ) {
        let a: Vec<usize> = rows.iter().map(|r| r.0).collect();
        let b: Vec<usize> = rows.iter().map(|r| r.1).collect();
        let gold: Vec<usize> = rows.iter().map(|r| r.2).collect();
        for metric in [Metric::Accuracy, Metric::MicroF1 { outside: 0 }] {
            let ab = permutation_test(&a, &b, &gold, metric, 200, seed).unwrap();
            let ba = permutation_test(&b, &a, &gold, metric, 200, seed).unwrap();
            prop_assert_eq!(ab.p, ba.p);
            prop_assert!(ab.p > 0.0 && ab.p <= 1.0);
        }
    }
}
