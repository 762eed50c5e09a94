use rayon::prelude::*;

use crate::Result;

/// Sparse per-sample gradient: `(parameter index, values)`.
pub type SampleGrads = Vec<(usize, Vec<f32>)>;

/// Runs `f` on every sample in parallel and sums losses and gradients in
/// sample order, so the result does not depend on thread scheduling.
///
/// Returns the summed loss and one optional summed gradient per parameter.
pub fn batch_gradients<S, F>(samples: &[S], n_params: usize, f: F) -> Result<(f64, Vec<Option<Vec<f32>>>)>
where
    S: Sync,
    F: Fn(&S) -> Result<(f64, SampleGrads)> + Sync,
{
    let per_sample: Vec<(f64, SampleGrads)> = samples.par_iter().map(&f).collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut sums: Vec<Option<Vec<f32>>> = vec![None; n_params];
    for (loss, grads) in per_sample {
        total += loss;
        for (i, g) in grads {
            match &mut sums[i] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }
    }
    Ok((total, sums))
}

/// Multiplies every present gradient by `s`.
pub fn scale_grads(grads: &mut [Option<Vec<f32>>], s: f32) {
    for g in grads.iter_mut().flatten() {
        g.iter_mut().for_each(|v| *v *= s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sums_in_order() {
        let xs = [1.0f32, 2.0, 3.0];
        let (loss, g) = batch_gradients(&xs, 3, |&x| Ok((x as f64, vec![(0, vec![x]), (2, vec![x, 1.0])]))).unwrap();
        assert_eq!(loss, 6.0);
        assert_eq!(g[0], Some(vec![6.0]));
        assert_eq!(g[1], None);
        assert_eq!(g[2], Some(vec![6.0, 3.0]));
    }
}
