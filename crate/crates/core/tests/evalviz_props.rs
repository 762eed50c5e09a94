use proptest::prelude::*;
use tristream_core::evalviz::{auc, auc_pairwise, classification_metrics, tsne_embed, TsneConfig};

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec((0u32..20).prop_map(|v| v as f64 / 20.0), n),
            prop::collection::vec(0u8..2, n),
        )
    })
}

proptest! {
    #[test]
    fn auc_matches_pairwise_count((s, l) in scored()) {
        prop_assume!(l.contains(&0) && l.contains(&1));
        prop_assert!((auc(&s, &l).unwrap() - auc_pairwise(&s, &l).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn auc_ignores_monotone_transforms((s, l) in scored(), a in 0.1f64..5.0, b in -3.0f64..3.0) {
        prop_assume!(l.contains(&0) && l.contains(&1));
        let t: Vec<f64> = s.iter().map(|&x| (a * x + b).exp()).collect();
        prop_assert!((auc(&s, &l).unwrap() - auc(&t, &l).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn auc_flips_with_labels((s, l) in scored()) {
        prop_assume!(l.contains(&0) && l.contains(&1));
        let flipped: Vec<u8> = l.iter().map(|&y| 1 - y).collect();
        prop_assert!((auc(&s, &l).unwrap() + auc(&s, &flipped).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn metrics_ignore_order(
        pairs in prop::collection::vec((0u8..2, 0u8..2), 1..50),
        rot in 0usize..50,
    ) {
        let (p, l): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
        let mut shuffled = pairs.clone();
        let r = rot % shuffled.len();
        shuffled.rotate_left(r);
        shuffled.reverse();
        let (p2, l2): (Vec<u8>, Vec<u8>) = shuffled.into_iter().unzip();
        let (acc, f1, c) = classification_metrics(&p, &l).unwrap();
        let (acc2, f12, c2) = classification_metrics(&p2, &l2).unwrap();
        prop_assert_eq!(acc, acc2);
        prop_assert_eq!(f1, f12);
        prop_assert_eq!(c, c2);
        prop_assert_eq!(c.total(), pairs.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn tsne_commutes_with_permutation(
        feats in prop::collection::vec(prop::collection::vec(-3.0f32..3.0, 4), 8..14),
        rot in 1usize..8,
    ) {
        let cfg = TsneConfig {
            perplexity: 2.0,
            iterations: 60,
            exaggeration_iters: 20,
            ..Default::default()
        };
        let n = feats.len();
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let permuted: Vec<Vec<f32>> = perm.iter().map(|&i| feats[i].clone()).collect();
        let a = tsne_embed(&feats, &cfg).unwrap();
        let b = tsne_embed(&permuted, &cfg).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            for d in 0..3 {
                prop_assert!((a.points[i][d] - b.points[j][d]).abs() < 1e-9, "point {i} axis {d}");
            }
        }
        prop_assert!((a.kl - b.kl).abs() < 1e-9);
    }
}
