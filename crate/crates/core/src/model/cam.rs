use super::network::{BranchName, MultiStreamModel};
use crate::numcore::Tensor;
use crate::vision::{GrayImage, HeatMap};
use crate::{Error, Result};

/// Unnormalised class activation map `sum_k w[k] * f_k(x, y)`.
pub fn cam_raw(activations: &Tensor, weights: &[f32]) -> Result<HeatMap> {
    let (k, h, w) = activations.chw()?;
    if weights.len() != k {
        return Err(Error::Dimension(format!(
            "{} CAM weights for {k} activation channels",
            weights.len()
        )));
    }
    let plane = h * w;
    let mut out = vec![0.0f32; plane];
    for (ch, &wk) in weights.iter().enumerate() {
        let f = &activations.data()[ch * plane..(ch + 1) * plane];
        for (o, &v) in out.iter_mut().zip(f) {
            *o += wk * v;
        }
    }
    HeatMap::new(h, w, out)
}

/// Min-max normalisation into `[0, 1]`; a constant map becomes all zeros.
pub fn normalize_minmax(map: &HeatMap) -> HeatMap {
    let v = map.values();
    let lo = v.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = v.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = hi - lo;
    let vals = if span > 0.0 && span.is_finite() {
        v.iter().map(|&x| (x - lo) / span).collect()
    } else {
        vec![0.0; v.len()]
    };
    HeatMap::new(map.height(), map.width(), vals).expect("same shape")
}

/// Normalised CAM of `class_idx` for a head whose first `K` input columns
/// read the activation channels.
pub fn cam(activations: &Tensor, class_idx: usize, head_weight: &Tensor) -> Result<HeatMap> {
    let (k, _, _) = activations.chw()?;
    let w = head_row(head_weight, class_idx)?;
    if w.len() < k {
        return Err(Error::Dimension(format!("head has {} inputs, activations have {k} channels", w.len())));
    }
    Ok(normalize_minmax(&cam_raw(activations, &w[..k])?))
}

fn head_row(head_weight: &Tensor, class_idx: usize) -> Result<&[f32]> {
    let [c, d] = head_weight.shape() else {
        return Err(Error::Dimension(format!("head weight shape {:?}", head_weight.shape())));
    };
    if class_idx >= *c {
        return Err(Error::Range(format!("class index {class_idx} for a {c}-class head")));
    }
    Ok(&head_weight.data()[class_idx * d..(class_idx + 1) * d])
}

impl MultiStreamModel {
    /// Per-channel weights that the given head applies to the global
    /// activations. The fusion head reads `pool_g` twice (directly and inside
    /// `Pool_in`), so both slots are summed.
    pub fn global_cam_weights(&self, head: BranchName, class_idx: usize) -> Result<Vec<f32>> {
        let k = self.config().pool_dim();
        match head {
            BranchName::Global => Ok(head_row(self.global.head_weight(), class_idx)?.to_vec()),
            BranchName::Fusion => {
                let row = head_row(&self.fusion_head[0].value, class_idx)?;
                Ok((0..k).map(|i| row[i] + row[4 * k + i]).collect())
            }
            other => Err(Error::Validation(format!(
                "the {other} head does not read the global activations directly"
            ))),
        }
    }

    /// Normalised CAM on the global activations of `img` for the global or
    /// fusion head.
    pub fn global_cam(&self, img: &GrayImage, head: BranchName, class_idx: usize) -> Result<HeatMap> {
        let g = self.forward_global(img)?;
        let w = self.global_cam_weights(head, class_idx)?;
        Ok(normalize_minmax(&cam_raw(&g.activations, &w)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_value_is_dot_product() {
        let act = Tensor::new(vec![2, 1, 1], vec![2.0, 3.0]).unwrap();
        let w = [0.5f32, 1.0];
        let oracle: f32 = [2.0f32, 3.0].iter().zip(&w).map(|(f, w)| f * w).sum();
        let m = cam_raw(&act, &w).unwrap();
        assert_eq!(m.values(), &[oracle]);
        assert_eq!(oracle, 4.0);
    }

    #[test]
    fn zero_weights_zero_map() {
        let act = Tensor::new(vec![2, 2, 2], (0..8).map(|i| i as f32).collect()).unwrap();
        let w = Tensor::zeros(vec![2, 2]);
        assert!(cam(&act, 1, &w).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scale_invariance() {
        let act = Tensor::new(vec![2, 2, 2], vec![0.0, 1.0, 4.0, 2.0, 3.0, 0.5, 0.0, 1.0]).unwrap();
        let w = Tensor::new(vec![1, 2], vec![0.3, -0.7]).unwrap();
        let w2 = w.map(|v| 2.0 * v);
        let a = cam(&act, 0, &w).unwrap();
        let b = cam(&act, 0, &w2).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-6);
        }
        assert!(a.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn class_out_of_range() {
        let act = Tensor::zeros(vec![2, 1, 1]);
        let w = Tensor::zeros(vec![2, 2]);
        assert!(matches!(cam(&act, 2, &w), Err(Error::Range(_))));
    }
}
