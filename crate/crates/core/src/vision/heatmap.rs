use super::types::{BinaryMask, HeatMap};
use crate::numcore::Tensor;
use crate::{Error, Result};

/// Channel-summed activation map `S`, min-shifted and divided by its maximum:
/// `H = (S - min S) / max S`. An all-zero `S` yields `H = 0`.
///
/// Activations must be nonnegative (post-relu), which keeps `H` in `[0, 1]`.
pub fn heatmap_normalize(activations: &Tensor) -> Result<HeatMap> {
    let (k, h, w) = activations.chw()?;
    if k == 0 {
        return Err(Error::Validation("heat-map needs at least one channel".into()));
    }
    if let Some(bad) = activations.data().iter().find(|&&v| !(v >= 0.0)) {
        return Err(Error::Validation(format!(
            "heat-map activations must be nonnegative, found {bad}"
        )));
    }
    let plane = h * w;
    let mut sum = vec![0f32; plane];
    for c in 0..k {
        for (s, &v) in sum.iter_mut().zip(&activations.data()[c * plane..(c + 1) * plane]) {
            *s += v;
        }
    }
    let min = sum.iter().copied().fold(f32::INFINITY, f32::min);
    let max = sum.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let values = if max > 0.0 {
        sum.iter().map(|&s| (s - min) / max).collect()
    } else {
        vec![0.0; plane]
    };
    HeatMap::new(h, w, values)
}

/// Cells strictly above `tau` are set.
pub fn binarize(h: &HeatMap, tau: f32) -> BinaryMask {
    let bits = h.values().iter().map(|&v| v > tau).collect();
    BinaryMask::new(h.height(), h.width(), bits).expect("heat-map shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn act(h: usize, w: usize, v: &[f32]) -> Tensor {
        Tensor::new(vec![1, h, w], v.to_vec()).unwrap()
    }

    #[test]
    fn normalizes_by_max() {
        let h = heatmap_normalize(&act(2, 2, &[0., 2., 4., 8.])).unwrap();
        assert_eq!(h.values(), &[0.0, 0.25, 0.5, 1.0]);
        // channel sum: two channels adding up to the same S
        let two = Tensor::new(vec![2, 2, 2], vec![0., 1., 1., 4., 0., 1., 3., 4.]).unwrap();
        assert_eq!(heatmap_normalize(&two).unwrap().values(), &[0.0, 0.25, 0.5, 1.0]);
    }

    #[test]
    fn min_is_subtracted_but_denominator_is_max() {
        let h = heatmap_normalize(&act(1, 3, &[2., 3., 4.])).unwrap();
        assert_eq!(h.values(), &[0.0, 0.25, 0.5]);
    }

    #[test]
    fn constant_and_zero_maps() {
        let h = heatmap_normalize(&act(2, 2, &[3.; 4])).unwrap();
        assert!(h.values().iter().all(|&v| v == 0.0));
        let z = heatmap_normalize(&act(2, 2, &[0.; 4])).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn doubling_is_invariant() {
        let s = [0.5f32, 1.5, 2.25, 7.0];
        let d: Vec<f32> = s.iter().map(|v| v * 2.0).collect();
        assert_eq!(
            heatmap_normalize(&act(2, 2, &s)).unwrap(),
            heatmap_normalize(&act(2, 2, &d)).unwrap()
        );
    }

    #[test]
    fn negative_activation_rejected() {
        let err = heatmap_normalize(&act(1, 2, &[1.0, -0.1])).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn threshold_is_strict() {
        let h = HeatMap::new(2, 2, vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        assert_eq!(binarize(&h, 0.75).bits(), &[false, false, false, true]);
        assert!(binarize(&h, 1.0).is_empty());
        assert_eq!(binarize(&h, 0.5).count(), 1);
    }
}
