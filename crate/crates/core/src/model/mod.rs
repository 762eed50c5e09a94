//! Multi-stream network: global, heat-map and infected branches joined by a
//! fusion head, plus class activation maps.

mod backbone;
mod cam;
mod config;
mod network;

pub use backbone::{backbone_forward, bind};
pub use cam::{cam, cam_raw, normalize_minmax};
pub use config::{BackboneConfig, ModelConfig};
pub use network::{
    positive_score, predicted_label, target_vector, Branch, BranchName, BranchSet, FrozenFeatures, GlobalOutput,
    HeatCrop, HeatmapOutput, InfectedOutput, MultiStreamModel, Prediction, PreparedSample, Recorded,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;
    use crate::vision::{crop_resize, BinaryMask, BoundingBox, GrayImage};
    use crate::Error;

    fn small_config() -> ModelConfig {
        ModelConfig {
            backbone: BackboneConfig {
                stage_channels: vec![4, 4],
                blocks_per_stage: 1,
                final_channels: 8,
                input_size: 16,
            },
            num_classes: 2,
            tau: 0.75,
            infected_size: 8,
        }
    }

    fn image(seed: u32) -> GrayImage {
        let px = (0..256u32)
            .map(|i| ((i.wrapping_mul(2654435761).wrapping_add(seed * 97)) % 1000) as f32 / 1000.0)
            .collect();
        GrayImage::new(16, 16, px).unwrap()
    }

    #[test]
    fn shapes_and_ranges() {
        let m = MultiStreamModel::new(small_config(), 1).unwrap();
        let img = image(0);
        let g = m.forward_global(&img).unwrap();
        assert_eq!(g.activations.shape(), &[8, 4, 4]);
        assert!(g.activations.data().iter().all(|&v| v >= 0.0));
        assert_eq!(g.pool.shape(), &[8]);
        assert_eq!(g.logits.shape(), &[2]);
        let mut mask = BinaryMask::empty(16, 16);
        mask.set(3, 3, true);
        let inf = m.forward_infected(&img, &mask, &g.pool).unwrap();
        assert_eq!(inf.pool.len(), 24);
        let h = m.forward_heatmap(&img).unwrap();
        let f = m.forward_fusion(&g.pool, &h.pool, &inf.pool).unwrap();
        assert_eq!(f.shape(), &[2]);
        let p = m.predict(&img, &mask).unwrap();
        assert_eq!(p.pool_f.len(), 40);
        for b in BranchName::ALL {
            assert!(p.probs(b).iter().all(|&q| q > 0.0 && q < 1.0));
        }
        assert_eq!(p.logits[BranchName::Fusion.index()], f);
    }

    #[test]
    fn wrong_input_size() {
        let m = MultiStreamModel::new(small_config(), 1).unwrap();
        let img = GrayImage::filled(8, 8, 0.5).unwrap();
        assert!(matches!(m.forward_global(&img), Err(Error::Dimension(_))));
    }

    #[test]
    fn deterministic_for_a_seed() {
        let a = MultiStreamModel::new(small_config(), 7).unwrap();
        let b = MultiStreamModel::new(small_config(), 7).unwrap();
        let img = image(3);
        assert_eq!(a.forward_global(&img).unwrap(), b.forward_global(&img).unwrap());
        let c = MultiStreamModel::new(small_config(), 8).unwrap();
        assert_ne!(a.forward_global(&img).unwrap().logits, c.forward_global(&img).unwrap().logits);
    }

    #[test]
    fn fusion_dimension_mismatch() {
        let m = MultiStreamModel::new(small_config(), 1).unwrap();
        let z = Tensor::zeros(vec![8]);
        assert!(matches!(m.forward_fusion(&z, &z, &z), Err(Error::Config(_))));
    }

    #[test]
    fn zero_fusion_weights_give_bias() {
        let mut m = MultiStreamModel::new(small_config(), 1).unwrap();
        m.fusion_head[0].value = Tensor::zeros(vec![2, 40]);
        m.fusion_head[1].value = Tensor::new(vec![2], vec![0.25, -1.5]).unwrap();
        let z = Tensor::full(vec![8], 3.0);
        let logits = m.forward_fusion(&z, &z, &Tensor::full(vec![24], 1.0)).unwrap();
        assert_eq!(logits.data(), &[0.25, -1.5]);
    }

    #[test]
    fn hot_corner_selects_corner_crop() {
        let m = MultiStreamModel::new(small_config(), 1).unwrap();
        let img = image(5);
        let mut act = Tensor::zeros(vec![8, 4, 4]);
        act.data_mut()[3] = 5.0; // channel 0, row 0, col 3
        let hc = m.heat_crop(&act, &img).unwrap();
        assert!(!hc.fallback);
        // 4x4 activation cell (0,3) covers image rows 0..=3, cols 12..=15
        let bx = BoundingBox::new(0, 3, 12, 15).unwrap();
        assert_eq!(hc.bbox, bx);
        assert_eq!(hc.crop, crop_resize(&img, &bx, 16, 16).unwrap());
    }

    #[test]
    fn uniform_activations_fall_back() {
        let m = MultiStreamModel::new(small_config(), 1).unwrap();
        let img = image(5);
        let act = Tensor::full(vec![8, 4, 4], 2.0);
        let hc = m.heat_crop(&act, &img).unwrap();
        assert!(hc.fallback);
        assert!(hc.heatmap.values().iter().all(|&v| v == 0.0));
        assert_eq!(hc.crop, img);
    }

    #[test]
    fn infected_branch_is_order_sensitive() {
        let m = MultiStreamModel::new(small_config(), 2).unwrap();
        let img = image(1);
        let mut mask = BinaryMask::empty(16, 16);
        mask.set(4, 2, true);
        mask.set(10, 13, true);
        let g = m.forward_global(&img).unwrap();
        let a = m.forward_infected(&img, &mask, &g.pool).unwrap();
        let empty = m.forward_infected(&img, &BinaryMask::empty(16, 16), &g.pool).unwrap();
        assert!(empty.flags.left_fallback && empty.flags.right_fallback);
        assert_eq!(empty.pool.len(), 24);
        // swapping the image halves (and mask) swaps pool_l and pool_r
        let swapped = {
            let mut px = Vec::new();
            for r in 0..16 {
                for c in 0..16 {
                    let c2 = if c < 8 { c + 8 } else { c - 8 };
                    px.push(img.get(r, c2));
                }
            }
            GrayImage::new(16, 16, px).unwrap()
        };
        let mut sm = BinaryMask::empty(16, 16);
        sm.set(4, 10, true);
        sm.set(10, 5, true);
        let b = m.forward_infected(&swapped, &sm, &g.pool).unwrap();
        assert_eq!(&a.pool.data()[..8], &b.pool.data()[8..16]);
        assert_eq!(&a.pool.data()[8..16], &b.pool.data()[..8]);
        assert_ne!(a.logits, b.logits);
    }

    #[test]
    fn head_routing_by_perturbation() {
        let m = MultiStreamModel::new(small_config(), 4).unwrap();
        let img = image(2);
        let mut mask = BinaryMask::empty(16, 16);
        mask.set(5, 3, true);
        let base = m.prepare(&img, &mask, 1).unwrap();
        let base_p = m.predict_prepared(&base).unwrap();

        // perturbing the infected inputs leaves the global and heat-map heads alone
        let mut alt = base.clone();
        alt.left = GrayImage::filled(8, 8, 0.9).unwrap();
        alt.right = GrayImage::filled(8, 8, 0.1).unwrap();
        let alt_p = m.predict_prepared(&alt).unwrap();
        assert_eq!(base_p.logits[0], alt_p.logits[0]);
        assert_eq!(base_p.logits[1], alt_p.logits[1]);
        assert_ne!(base_p.logits[2], alt_p.logits[2]);
        assert_ne!(base_p.logits[3], alt_p.logits[3]);

        // perturbing the heat-map crop only moves the heat-map and fusion heads
        let mut frozen = m.frozen_features(&base, BranchSet::of(&[BranchName::Global])).unwrap();
        frozen.heat_crop = Some(GrayImage::filled(16, 16, 0.5).unwrap());
        let mut tape = crate::numcore::Tape::<f32>::new();
        let rec = m.record(&mut tape, &base, &frozen, BranchSet::NONE, BranchSet::ALL).unwrap();
        let logits: Vec<Tensor> = rec.logits.iter().map(|v| tape.value(v.unwrap()).clone()).collect();
        assert_eq!(logits[0], base_p.logits[0]);
        assert_ne!(logits[1], base_p.logits[1]);
        assert_eq!(logits[2], base_p.logits[2]);
        assert_ne!(logits[3], base_p.logits[3]);
    }

    #[test]
    fn cached_features_match_recomputation() {
        let m = MultiStreamModel::new(small_config(), 9).unwrap();
        let img = image(4);
        let mut mask = BinaryMask::empty(16, 16);
        mask.set(2, 12, true);
        let s = m.prepare(&img, &mask, 0).unwrap();
        let direct = m.predict_prepared(&s).unwrap();
        let cache = m
            .frozen_features(&s, BranchSet::of(&[BranchName::Global, BranchName::Heatmap, BranchName::Infected]))
            .unwrap();
        let mut tape = crate::numcore::Tape::<f32>::new();
        let rec = m
            .record(&mut tape, &s, &cache, BranchSet::of(&[BranchName::Fusion]), BranchSet::ALL)
            .unwrap();
        for (i, v) in rec.logits.iter().enumerate() {
            assert_eq!(tape.value(v.unwrap()), &direct.logits[i]);
        }
        assert_eq!(rec.leaves.len(), 2);
        let r = m.group_range(BranchName::Fusion);
        assert_eq!(rec.leaves[0].0, r.start);
    }

    #[test]
    fn score_rules() {
        assert_eq!(positive_score(&[0.3]), 0.3);
        assert!((positive_score(&[0.2, 0.6]) - 0.7).abs() < 1e-7);
        assert_eq!(predicted_label(&[0.2, 0.6]), 1);
        assert_eq!(predicted_label(&[0.6, 0.2]), 0);
        assert_eq!(predicted_label(&[0.5]), 1);
        assert_eq!(target_vector::<f32>(1, 2), vec![0.0, 1.0]);
        assert_eq!(target_vector::<f32>(0, 1), vec![0.0]);
    }

    #[test]
    fn fusion_cam_sums_both_global_slots() {
        let mut m = MultiStreamModel::new(small_config(), 1).unwrap();
        let mut w = vec![0.0f32; 80];
        w[40 + 1] = 1.0; // class 1, pool_g slot, channel 1
        w[40 + 32 + 1] = 2.0; // class 1, pool_g inside Pool_in, channel 1
        m.fusion_head[0].value = Tensor::new(vec![2, 40], w).unwrap();
        let cw = m.global_cam_weights(BranchName::Fusion, 1).unwrap();
        assert_eq!(cw[1], 3.0);
        assert_eq!(cw.iter().sum::<f32>(), 3.0);
        assert!(m.global_cam_weights(BranchName::Heatmap, 0).is_err());
    }
}
