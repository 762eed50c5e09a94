use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::numcore::{batch_gradients, scale_grads, sgd_step, OptimizerConfig, Parameter, Scalar, Tape, Tensor, Var};
use crate::vision::{resize, resize_heatmap, BinaryMask, GrayImage, HeatMap};
use crate::{Error, Result};

/// Encoder-decoder architecture and its optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterConfig {
    /// Channels of the three encoder levels.
    pub channels: [usize; 3],
    /// Images are resampled to `input_size x input_size` before segmentation.
    pub input_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub batch_size: usize,
    /// Probability at or above which a pixel is labelled infected.
    pub threshold: f32,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        SegmenterConfig {
            channels: [8, 16, 16],
            input_size: 64,
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 8,
            threshold: 0.5,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) {
            return Err(Error::Config("segmenter channels must be >= 1".into()));
        }
        if self.input_size < 4 || !self.input_size.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "segmenter input_size must be a positive multiple of 4, got {}",
                self.input_size
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("segmenter batch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("segmenter threshold {} outside [0,1]", self.threshold)));
        }
        self.optimizer().validate()
    }

    fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            decay_bias: false,
            ..OptimizerConfig::default()
        }
    }

    /// `(name, shape, is_bias)` of every tensor in storage order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>, bool)> {
        let [c0, c1, c2] = self.channels;
        let layers: [(&str, usize, usize, usize); 6] = [
            ("enc1", c0, 1, 3),
            ("enc2", c1, c0, 3),
            ("enc3", c2, c1, 3),
            ("dec2", c1, c2 + c1, 3),
            ("dec1", c0, c1 + c0, 3),
            ("out", 1, c0, 1),
        ];
        layers
            .iter()
            .flat_map(|&(n, co, ci, k)| {
                [
                    (format!("seg.{n}.weight"), vec![co, ci, k, k], false),
                    (format!("seg.{n}.bias"), vec![co], true),
                ]
            })
            .collect()
    }
}

/// Three-level encoder-decoder with skip connections producing a per-pixel
/// infection probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmenter {
    config: SegmenterConfig,
    params: Vec<Parameter>,
}

/// Initial output bias; starts the map near "mostly background".
const OUT_BIAS_INIT: f32 = -2.0;

impl Segmenter {
    pub fn new(config: SegmenterConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = config
            .param_shapes()
            .into_iter()
            .map(|(name, shape, is_bias)| {
                let n: usize = shape.iter().product();
                let data = if is_bias {
                    let v = if name == "seg.out.bias" { OUT_BIAS_INIT } else { 0.0 };
                    vec![v; n]
                } else {
                    let fan_in: usize = shape[1..].iter().product();
                    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
                    (0..n).map(|_| dist.sample(&mut rng) as f32).collect()
                };
                Parameter::new(name, Tensor::new(shape, data).expect("shape"), is_bias)
            })
            .collect();
        Ok(Segmenter { config, params })
    }

    /// Rebuilds a segmenter from stored tensors in [`Self::params`] order.
    pub fn from_parts(config: SegmenterConfig, values: Vec<Tensor>) -> Result<Self> {
        let mut s = Self::new(config, 0)?;
        if values.len() != s.params.len() {
            return Err(Error::Checkpoint(format!(
                "segmenter expects {} tensors, got {}",
                s.params.len(),
                values.len()
            )));
        }
        for (p, v) in s.params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(Error::Checkpoint(format!(
                    "{}: expected shape {:?}, got {:?}",
                    p.name,
                    p.value.shape(),
                    v.shape()
                )));
            }
            p.value = v;
            p.reset_momentum();
        }
        Ok(s)
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    fn input(&self, img: &GrayImage) -> Result<Tensor> {
        let s = self.config.input_size;
        Ok(resize(img, s, s)?.to_tensor())
    }

    /// Records the network on `tape` for a `[1, S, S]` input and returns the
    /// `[1, S, S]` probability map plus the parameter variables.
    fn record<T: Scalar>(&self, tape: &mut Tape<T>, x: &Tensor, trainable: bool) -> Result<(Var, Vec<Var>)> {
        let p: Vec<Var> = self
            .params
            .iter()
            .map(|p| {
                let t = p.value.cast::<T>();
                if trainable {
                    tape.leaf(t)
                } else {
                    tape.constant(t)
                }
            })
            .collect();
        let x = tape.constant(x.cast());
        let conv = |tape: &mut Tape<T>, x: Var, i: usize, pad: usize| tape.conv2d(x, p[2 * i], p[2 * i + 1], 1, pad);
        let e1 = conv(tape, x, 0, 1)?;
        let e1 = tape.relu(e1);
        let d = tape.maxpool2d(e1, 2, 2)?;
        let e2 = conv(tape, d, 1, 1)?;
        let e2 = tape.relu(e2);
        let d = tape.maxpool2d(e2, 2, 2)?;
        let e3 = conv(tape, d, 2, 1)?;
        let e3 = tape.relu(e3);
        let u = tape.upsample2x(e3)?;
        let u = tape.concat(&[u, e2])?;
        let d2 = conv(tape, u, 3, 1)?;
        let d2 = tape.relu(d2);
        let u = tape.upsample2x(d2)?;
        let u = tape.concat(&[u, e1])?;
        let d1 = conv(tape, u, 4, 1)?;
        let d1 = tape.relu(d1);
        let out = conv(tape, d1, 5, 0)?;
        Ok((tape.sigmoid(out), p))
    }

    /// Probability map at the segmenter resolution.
    pub fn predict_probs(&self, img: &GrayImage) -> Result<HeatMap> {
        let mut tape = Tape::<f32>::new();
        let (p, _) = self.record(&mut tape, &self.input(img)?, false)?;
        let s = self.config.input_size;
        HeatMap::new(s, s, tape.value(p).data().to_vec())
    }

    /// Binary mask with the dimensions of `img`.
    pub fn predict_mask(&self, img: &GrayImage) -> Result<BinaryMask> {
        let probs = resize_heatmap(&self.predict_probs(img)?, img.height(), img.width())?;
        let bits = probs.values().iter().map(|&v| v >= self.config.threshold).collect();
        BinaryMask::new(img.height(), img.width(), bits)
    }

    /// Masks for many images, computed in parallel.
    pub fn predict_masks(&self, imgs: &[&GrayImage]) -> Result<Vec<BinaryMask>> {
        imgs.par_iter().map(|img| self.predict_mask(img)).collect()
    }

    /// Mean per-pixel cross-entropy against `mask` at the segmenter resolution.
    pub fn loss(&self, img: &GrayImage, mask: &BinaryMask) -> Result<f32> {
        let (x, labels) = self.prepare(img, mask)?;
        let mut tape = Tape::<f32>::new();
        let (p, _) = self.record(&mut tape, &x, false)?;
        let l = tape.bce(p, &labels)?;
        Ok(tape.value(l).item())
    }

    fn prepare(&self, img: &GrayImage, mask: &BinaryMask) -> Result<(Tensor, Vec<f32>)> {
        let s = self.config.input_size;
        let m = mask.resize_nearest(s, s);
        let labels = m.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Ok((self.input(img)?, labels))
    }

    fn sample_grads(&self, x: &Tensor, labels: &[f32]) -> Result<(f64, Vec<(usize, Vec<f32>)>)> {
        let mut tape = Tape::<f32>::new();
        let (p, vars) = self.record(&mut tape, x, true)?;
        let l = tape.bce(p, labels)?;
        let loss = tape.value(l).item() as f64;
        let mut g = tape.backward(l)?;
        let grads = vars
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| g.take(v).map(|d| (i, d)))
            .collect();
        Ok((loss, grads))
    }
}

/// Trains on `(image, mask)` pairs for `epochs` passes of shuffled
/// minibatches; returns the mean per-sample loss of every epoch.
pub fn train_segmenter(seg: &mut Segmenter, samples: &[(&GrayImage, &BinaryMask)], epochs: usize, seed: u64) -> Result<Vec<f32>> {
    if samples.is_empty() {
        return Err(Error::Validation("segmenter training set is empty".into()));
    }
    for (img, mask) in samples {
        if img.height() != mask.height() || img.width() != mask.width() {
            return Err(Error::Dimension(format!(
                "mask {}x{} does not match image {}x{}",
                mask.height(),
                mask.width(),
                img.height(),
                img.width()
            )));
        }
    }
    let prepared: Vec<(Tensor, Vec<f32>)> = samples
        .par_iter()
        .map(|(img, mask)| seg.prepare(img, mask))
        .collect::<Result<_>>()?;
    let opt = seg.config.optimizer();
    let bs = seg.config.batch_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    for p in &mut seg.params {
        p.reset_momentum();
    }
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(bs) {
            let items: Vec<&(Tensor, Vec<f32>)> = batch.iter().map(|&i| &prepared[i]).collect();
            let (loss, mut grads) = batch_gradients(&items, seg.params.len(), |(x, l)| seg.sample_grads(x, l))?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("segmenter loss is {loss} in epoch {}", epoch + 1)));
            }
            epoch_loss += loss;
            scale_grads(&mut grads, 1.0 / batch.len() as f32);
            let g: Vec<Option<&[f32]>> = grads.iter().map(|g| g.as_deref()).collect();
            let mut params: Vec<&mut Parameter> = seg.params.iter_mut().collect();
            sgd_step(&mut params, &g, &opt, opt.learning_rate)?;
        }
        history.push((epoch_loss / prepared.len() as f64) as f32);
    }
    Ok(history)
}
