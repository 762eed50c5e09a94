use proptest::prelude::*;
use tristream_core::semisup::{pseudo_label_round, Provenance, PseudoLabelPool, Segmenter, SegmenterConfig};
use tristream_core::vision::{resize_heatmap, BinaryMask, GrayImage};

fn tiny_segmenter(seed: u64) -> Segmenter {
    Segmenter::new(
        SegmenterConfig {
            channels: [2, 2, 2],
            input_size: 8,
            ..Default::default()
        },
        seed,
    )
    .unwrap()
}

fn image(seed: u64) -> GrayImage {
    let px = (0..64u64).map(|i| ((i * 31 + seed * 17) % 101) as f32 / 100.0).collect();
    GrayImage::new(8, 8, px).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn seeds_survive_every_round(n_seed in 1usize..4, n_unlab in 1usize..12, k in 1usize..5, rng in any::<u64>()) {
        let seeds: Vec<_> = (0..n_seed)
            .map(|i| {
                let mut m = BinaryMask::empty(8, 8);
                m.set(i, i, true);
                (i, image(i as u64), m)
            })
            .collect();
        let unlab: Vec<_> = (0..n_unlab).map(|i| (100 + i, image(100 + i as u64))).collect();
        let mut all_ids: Vec<usize> = seeds.iter().map(|s| s.0).chain(unlab.iter().map(|u| u.0)).collect();
        all_ids.sort_unstable();
        let mut pool = PseudoLabelPool::new(seeds.clone(), unlab, k, rng).unwrap();
        let seg = tiny_segmenter(rng);
        let mut rounds = 0;
        while !pool.test_set().is_empty() {
            let before = pool.test_set().len();
            let r = pseudo_label_round(&seg, &mut pool).unwrap();
            rounds += 1;
            prop_assert_eq!(r.ids.len(), k.min(before));
            prop_assert!(pool.is_partition_of(&all_ids));
            for (item, (id, img, m)) in pool.train_set().iter().zip(&seeds) {
                prop_assert_eq!(item.id, *id);
                prop_assert_eq!(&item.image, img);
                prop_assert_eq!(&item.mask, m);
                prop_assert_eq!(item.provenance, Provenance::Seed);
            }
        }
        prop_assert_eq!(rounds, n_unlab.div_ceil(k));
        prop_assert_eq!(pool.train_set().len(), n_seed + n_unlab);
    }

    #[test]
    fn segmenter_outputs_probabilities(px in prop::collection::vec(0.0f32..1.0, 144), seed in 0u64..8) {
        let img = GrayImage::new(12, 12, px).unwrap();
        let seg = tiny_segmenter(seed);
        let probs = seg.predict_probs(&img).unwrap();
        prop_assert_eq!((probs.height(), probs.width()), (8, 8));
        prop_assert!(probs.values().iter().all(|v| (0.0..=1.0).contains(v)));
        let m = seg.predict_mask(&img).unwrap();
        prop_assert_eq!((m.height(), m.width()), (12, 12));
        let t = seg.config().threshold;
        let up = resize_heatmap(&probs, 12, 12).unwrap();
        for (b, p) in m.bits().iter().zip(up.values()) {
            prop_assert_eq!(*b, *p >= t);
        }
    }
}
