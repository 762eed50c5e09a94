use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::BackboneConfig;
use crate::numcore::{Parameter, Scalar, Tape, Tensor, Var};
use crate::Result;

/// He-normal weights, zero biases.
pub(crate) fn init_params(prefix: &str, shapes: &[(String, Vec<usize>, bool)], rng: &mut impl Rng) -> Vec<Parameter> {
    shapes
        .iter()
        .map(|(name, shape, is_bias)| {
            let n: usize = shape.iter().product();
            let data = if *is_bias {
                vec![0.0; n]
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let std = (2.0 / fan_in as f64).sqrt();
                let dist = Normal::new(0.0, std).expect("finite std");
                (0..n).map(|_| dist.sample(rng) as f32).collect()
            };
            Parameter::new(format!("{prefix}.{name}"), Tensor::new(shape.clone(), data).expect("shape"), *is_bias)
        })
        .collect()
}

/// Small-scale initialisation for a classification head `[C, D]`.
pub(crate) fn init_head(prefix: &str, classes: usize, dim: usize, rng: &mut impl Rng) -> Vec<Parameter> {
    let std = (1.0 / dim as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    let w: Vec<f32> = (0..classes * dim).map(|_| dist.sample(rng) as f32).collect();
    vec![
        Parameter::new(
            format!("{prefix}.head.weight"),
            Tensor::new(vec![classes, dim], w).expect("shape"),
            false,
        ),
        Parameter::new(format!("{prefix}.head.bias"), Tensor::zeros(vec![classes]), true),
    ]
}

/// Records the parameters on the tape: leaves when trainable, constants
/// otherwise.
pub fn bind<T: Scalar>(tape: &mut Tape<T>, params: &[Parameter], trainable: bool) -> Vec<Var> {
    params
        .iter()
        .map(|p| {
            let t = p.value.cast::<T>();
            if trainable {
                tape.leaf(t)
            } else {
                tape.constant(t)
            }
        })
        .collect()
}

/// Runs the backbone on a `[1, S, S]` input; returns the last (post-relu)
/// activations `[K, S/2^n, S/2^n]`.
pub fn backbone_forward<T: Scalar>(tape: &mut Tape<T>, cfg: &BackboneConfig, params: &[Var], input: Var) -> Result<Var> {
    let mut x = input;
    let mut i = 0;
    for _ in &cfg.stage_channels {
        for _ in 0..cfg.blocks_per_stage {
            x = tape.conv2d(x, params[i], params[i + 1], 1, 1)?;
            x = tape.relu(x);
            i += 2;
        }
        x = tape.maxpool2d(x, 2, 2)?;
    }
    x = tape.conv2d(x, params[i], params[i + 1], 1, 1)?;
    Ok(tape.relu(x))
}
