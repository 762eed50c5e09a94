use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backbone::{backbone_forward, bind, init_head, init_params};
use super::config::{BackboneConfig, ModelConfig};
use crate::numcore::{sigmoid, Parameter, Scalar, Tape, Tensor, Var};
use crate::vision::{
    binarize, heatmap_normalize, max_connected_component, bbox_of_mask, crop_resize, split_infected_lr,
    BinaryMask, BoundingBox, GrayImage, HeatMap, SplitFlags,
};
use crate::{Error, Result};

/// The four parameter groups of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchName {
    Global,
    Heatmap,
    Infected,
    Fusion,
}

impl BranchName {
    pub const ALL: [BranchName; 4] = [
        BranchName::Global,
        BranchName::Heatmap,
        BranchName::Infected,
        BranchName::Fusion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BranchName::Global => "global",
            BranchName::Heatmap => "heatmap",
            BranchName::Infected => "infected",
            BranchName::Fusion => "fusion",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for BranchName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BranchName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BranchName::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown branch `{s}`")))
    }
}

/// Small set of [`BranchName`]s.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct BranchSet([bool; 4]);

impl BranchSet {
    pub const NONE: BranchSet = BranchSet([false; 4]);
    pub const ALL: BranchSet = BranchSet([true; 4]);

    pub fn of(names: &[BranchName]) -> Self {
        let mut s = BranchSet::NONE;
        for &n in names {
            s.0[n.index()] = true;
        }
        s
    }

    pub fn contains(&self, b: BranchName) -> bool {
        self.0[b.index()]
    }

    pub fn names(&self) -> Vec<BranchName> {
        BranchName::ALL.into_iter().filter(|&b| self.contains(b)).collect()
    }

    pub fn is_disjoint(&self, other: &BranchSet) -> bool {
        self.0.iter().zip(other.0).all(|(&a, b)| !(a && b))
    }

    pub fn is_empty(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }
}

/// One classification branch: a backbone plus an FC head `[weight, bias]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub name: BranchName,
    pub backbone: Vec<Parameter>,
    pub head: Vec<Parameter>,
}

impl Branch {
    pub fn head_weight(&self) -> &Tensor {
        &self.head[0].value
    }

    pub fn params(&self) -> impl Iterator<Item = &Parameter> {
        self.backbone.iter().chain(&self.head)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.backbone.iter_mut().chain(self.head.iter_mut())
    }
}

/// Inputs of one image after the segmenter has run.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub image: GrayImage,
    pub left: GrayImage,
    pub right: GrayImage,
    pub flags: SplitFlags,
    pub label: u8,
}

/// Outputs of frozen sub-networks, computed once and replayed as constants.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrozenFeatures {
    pub pool_g: Option<Tensor>,
    pub heat_crop: Option<GrayImage>,
    pub pool_h: Option<Tensor>,
    pub pool_l: Option<Tensor>,
    pub pool_r: Option<Tensor>,
}

/// Logit variables for the requested heads plus the trainable leaves, given
/// as `(index into MultiStreamModel::params(), var)`.
#[derive(Debug, Clone)]
pub struct Recorded {
    pub logits: [Option<Var>; 4],
    pub leaves: Vec<(usize, Var)>,
    pub pool_f: Option<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalOutput {
    pub activations: Tensor,
    pub pool: Tensor,
    pub logits: Tensor,
}

/// Heat-map localisation of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatCrop {
    pub heatmap: HeatMap,
    /// Largest connected region on the activation grid (`None` when empty).
    pub region: Option<BinaryMask>,
    /// Crop box in image coordinates.
    pub bbox: BoundingBox,
    pub crop: GrayImage,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapOutput {
    pub crop: HeatCrop,
    pub pool: Tensor,
    pub logits: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfectedOutput {
    pub left: GrayImage,
    pub right: GrayImage,
    pub flags: SplitFlags,
    pub pool: Tensor,
    pub logits: Tensor,
}

/// Logits of every head for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: [Tensor; 4],
    pub pool_f: Tensor,
}

impl Prediction {
    pub fn probs(&self, head: BranchName) -> Vec<f32> {
        self.logits[head.index()].data().iter().map(|&z| sigmoid(z)).collect()
    }

    pub fn score(&self, head: BranchName) -> f32 {
        positive_score(&self.probs(head))
    }
}

/// Positive-class score in `(0, 1)` from normalised head outputs.
///
/// With two classes this is `(p1 + 1 - p0) / 2`, which exceeds 0.5 exactly
/// when `p1 > p0` (the argmax rule); with one class it is `p0`.
pub fn positive_score(probs: &[f32]) -> f32 {
    match probs {
        [p] => *p,
        [p0, p1] => 0.5 * (p1 + (1.0 - p0)),
        _ => f32::NAN,
    }
}

pub fn predicted_label(probs: &[f32]) -> u8 {
    match probs {
        [p] => u8::from(*p >= 0.5),
        [p0, p1] => u8::from(p1 > p0),
        _ => 0,
    }
}

/// `{0,1}` target vector for a binary label.
pub fn target_vector<T: Scalar>(label: u8, classes: usize) -> Vec<T> {
    let l = if label == 1 { T::one() } else { T::zero() };
    match classes {
        1 => vec![l],
        _ => vec![T::one() - l, l],
    }
}

/// Global, heat-map and infected branches joined by a fusion head.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiStreamModel {
    config: ModelConfig,
    pub global: Branch,
    pub heatmap: Branch,
    pub infected: Branch,
    pub fusion_head: Vec<Parameter>,
    pub seed: u64,
}

impl MultiStreamModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = config.backbone.param_shapes();
        let k = config.pool_dim();
        let c = config.num_classes;
        let branch = |name: BranchName, rng: &mut ChaCha8Rng| Branch {
            name,
            backbone: init_params(name.as_str(), &shapes, rng),
            head: init_head(name.as_str(), c, if name == BranchName::Infected { 3 * k } else { k }, rng),
        };
        let global = branch(BranchName::Global, &mut rng);
        let heatmap = branch(BranchName::Heatmap, &mut rng);
        let infected = branch(BranchName::Infected, &mut rng);
        let fusion_head = init_head("fusion", c, config.fusion_dim(), &mut rng);
        Ok(MultiStreamModel {
            config,
            global,
            heatmap,
            infected,
            fusion_head,
            seed,
        })
    }

    /// Rebuilds a model from a config and a full parameter list in
    /// [`Self::params`] order.
    pub fn from_parts(config: ModelConfig, seed: u64, values: Vec<Tensor>) -> Result<Self> {
        let mut m = Self::new(config, seed)?;
        if values.len() != m.params().len() {
            return Err(Error::Checkpoint(format!(
                "model expects {} tensors, got {}",
                m.params().len(),
                values.len()
            )));
        }
        for (p, v) in m.params_mut().into_iter().zip(values) {
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
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tau(&self) -> f32 {
        self.config.tau
    }

    pub fn set_tau(&mut self, tau: f32) -> Result<()> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::Config(format!("tau must lie in [0,1], got {tau}")));
        }
        self.config.tau = tau;
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn backbone_cfg(&self) -> &BackboneConfig {
        &self.config.backbone
    }

    /// Every parameter in canonical order: global, heat-map, infected
    /// (backbone then head), then the fusion head.
    pub fn params(&self) -> Vec<&Parameter> {
        self.global
            .params()
            .chain(self.heatmap.params())
            .chain(self.infected.params())
            .chain(&self.fusion_head)
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.global
            .params_mut()
            .chain(self.heatmap.params_mut())
            .chain(self.infected.params_mut())
            .chain(self.fusion_head.iter_mut())
            .collect()
    }

    /// Index range of a group inside [`Self::params`].
    pub fn group_range(&self, name: BranchName) -> std::ops::Range<usize> {
        let g = self.global.backbone.len() + self.global.head.len();
        let h = self.heatmap.backbone.len() + self.heatmap.head.len();
        let i = self.infected.backbone.len() + self.infected.head.len();
        let f = self.fusion_head.len();
        match name {
            BranchName::Global => 0..g,
            BranchName::Heatmap => g..g + h,
            BranchName::Infected => g + h..g + h + i,
            BranchName::Fusion => g + h + i..g + h + i + f,
        }
    }

    pub fn group(&self, name: BranchName) -> Vec<&Parameter> {
        let r = self.group_range(name);
        self.params().into_iter().skip(r.start).take(r.len()).collect()
    }

    pub fn set_frozen(&mut self, names: BranchSet, frozen: bool) {
        for name in names.names() {
            let r = self.group_range(name);
            for p in self.params_mut().into_iter().skip(r.start).take(r.len()) {
                p.frozen = frozen;
            }
        }
    }

    pub fn is_frozen(&self, name: BranchName) -> bool {
        self.group(name).iter().all(|p| p.frozen)
    }

    fn check_image(&self, img: &GrayImage) -> Result<()> {
        let s = self.config.backbone.input_size;
        if img.height() != s || img.width() != s {
            return Err(Error::Dimension(format!(
                "image is {}x{}, model input is {s}x{s}",
                img.height(),
                img.width()
            )));
        }
        Ok(())
    }

    /// Locates the most activated connected region of `activations` and maps
    /// it onto `img`; an empty region falls back to the whole image.
    pub fn heat_crop(&self, activations: &Tensor, img: &GrayImage) -> Result<HeatCrop> {
        let heatmap = heatmap_normalize(activations)?;
        let mask = binarize(&heatmap, self.config.tau);
        let region = max_connected_component(&mask);
        let (bbox, fallback) = match &region {
            Some(r) => (
                bbox_of_mask(r)?.scale((heatmap.height(), heatmap.width()), (img.height(), img.width())),
                false,
            ),
            None => (img.full_box(), true),
        };
        let s = self.config.backbone.input_size;
        let crop = crop_resize(img, &bbox, s, s)?;
        Ok(HeatCrop {
            heatmap,
            region,
            bbox,
            crop,
            fallback,
        })
    }

    /// Left/right crops for the infected branch.
    pub fn prepare(&self, img: &GrayImage, seg_mask: &BinaryMask, label: u8) -> Result<PreparedSample> {
        self.check_image(img)?;
        let (left, right, flags) = split_infected_lr(seg_mask, img, self.config.infected_size)?;
        Ok(PreparedSample {
            image: img.clone(),
            left,
            right,
            flags,
            label,
        })
    }

    pub fn forward_global(&self, img: &GrayImage) -> Result<GlobalOutput> {
        self.check_image(img)?;
        let mut tape = Tape::<f32>::new();
        let bb = bind(&mut tape, &self.global.backbone, false);
        let x = tape.constant(img.to_tensor());
        let act = backbone_forward(&mut tape, self.backbone_cfg(), &bb, x)?;
        let pool = tape.global_avg_pool(act)?;
        let head = bind(&mut tape, &self.global.head, false);
        let logits = tape.linear(pool, head[0], head[1])?;
        Ok(GlobalOutput {
            activations: tape.value(act).clone(),
            pool: tape.value(pool).clone(),
            logits: tape.value(logits).clone(),
        })
    }

    pub fn forward_heatmap(&self, img: &GrayImage) -> Result<HeatmapOutput> {
        let g = self.forward_global(img)?;
        let crop = self.heat_crop(&g.activations, img)?;
        let (pool, logits) = self.run_branch(&self.heatmap, &crop.crop)?;
        Ok(HeatmapOutput { crop, pool, logits })
    }

    pub fn forward_infected(&self, img: &GrayImage, seg_mask: &BinaryMask, pool_g: &Tensor) -> Result<InfectedOutput> {
        self.check_image(img)?;
        let k = self.config.pool_dim();
        if pool_g.shape() != [k] {
            return Err(Error::Dimension(format!(
                "global pooling feature has shape {:?}, expected [{k}]",
                pool_g.shape()
            )));
        }
        let (left, right, flags) = split_infected_lr(seg_mask, img, self.config.infected_size)?;
        let mut tape = Tape::<f32>::new();
        let bb = bind(&mut tape, &self.infected.backbone, false);
        let pl = self.pool_on(&mut tape, &bb, &left)?;
        let pr = self.pool_on(&mut tape, &bb, &right)?;
        let pg = tape.constant(pool_g.clone());
        let pool_in = tape.concat(&[pl, pr, pg])?;
        let head = bind(&mut tape, &self.infected.head, false);
        let logits = tape.linear(pool_in, head[0], head[1])?;
        Ok(InfectedOutput {
            left,
            right,
            flags,
            pool: tape.value(pool_in).clone(),
            logits: tape.value(logits).clone(),
        })
    }

    /// `Pool_f = [pool_g, pool_h, pool_in]` through the fusion head.
    pub fn forward_fusion(&self, pool_g: &Tensor, pool_h: &Tensor, pool_in: &Tensor) -> Result<Tensor> {
        let want = self.config.fusion_dim();
        let got = pool_g.len() + pool_h.len() + pool_in.len();
        if got != want {
            return Err(Error::Config(format!(
                "fusion head expects {want} features, got {} + {} + {}",
                pool_g.len(),
                pool_h.len(),
                pool_in.len()
            )));
        }
        let mut tape = Tape::<f32>::new();
        let parts: Vec<Var> = [pool_g, pool_h, pool_in].iter().map(|t| tape.constant((*t).clone())).collect();
        let pool_f = tape.concat(&parts)?;
        let head = bind(&mut tape, &self.fusion_head, false);
        let logits = tape.linear(pool_f, head[0], head[1])?;
        Ok(tape.value(logits).clone())
    }

    /// All four heads for one image and its segmenter mask.
    pub fn predict(&self, img: &GrayImage, seg_mask: &BinaryMask) -> Result<Prediction> {
        let sample = self.prepare(img, seg_mask, 0)?;
        self.predict_prepared(&sample)
    }

    pub fn predict_prepared(&self, sample: &PreparedSample) -> Result<Prediction> {
        let mut tape = Tape::<f32>::new();
        let rec = self.record(&mut tape, sample, &FrozenFeatures::default(), BranchSet::NONE, BranchSet::ALL)?;
        let logits = rec.logits.map(|v| tape.value(v.expect("all heads recorded")).clone());
        Ok(Prediction {
            logits,
            pool_f: tape.value(rec.pool_f.expect("fusion recorded")).clone(),
        })
    }

    fn pool_on<T: Scalar>(&self, tape: &mut Tape<T>, bb: &[Var], img: &GrayImage) -> Result<Var> {
        let x = tape.constant(img.to_tensor().cast());
        let act = backbone_forward(tape, self.backbone_cfg(), bb, x)?;
        tape.global_avg_pool(act)
    }

    fn run_branch(&self, branch: &Branch, img: &GrayImage) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::<f32>::new();
        let bb = bind(&mut tape, &branch.backbone, false);
        let pool = self.pool_on(&mut tape, &bb, img)?;
        let head = bind(&mut tape, &branch.head, false);
        let logits = tape.linear(pool, head[0], head[1])?;
        Ok((tape.value(pool).clone(), tape.value(logits).clone()))
    }

    /// Constant features of the groups in `frozen`, for replay by
    /// [`Self::record`]. The heat-map crop and pooled feature are only cached
    /// when the global branch is frozen too.
    pub fn frozen_features(&self, sample: &PreparedSample, frozen: BranchSet) -> Result<FrozenFeatures> {
        let mut f = FrozenFeatures::default();
        if frozen.contains(BranchName::Global) {
            let g = self.forward_global(&sample.image)?;
            let crop = self.heat_crop(&g.activations, &sample.image)?;
            if frozen.contains(BranchName::Heatmap) {
                f.pool_h = Some(self.run_branch(&self.heatmap, &crop.crop)?.0);
            }
            f.pool_g = Some(g.pool);
            f.heat_crop = Some(crop.crop);
        }
        if frozen.contains(BranchName::Infected) {
            let mut tape = Tape::<f32>::new();
            let bb = bind(&mut tape, &self.infected.backbone, false);
            let pl = self.pool_on(&mut tape, &bb, &sample.left)?;
            let pr = self.pool_on(&mut tape, &bb, &sample.right)?;
            f.pool_l = Some(tape.value(pl).clone());
            f.pool_r = Some(tape.value(pr).clone());
        }
        Ok(f)
    }

    /// Records the network on `tape` for the heads in `heads`, binding the
    /// groups in `trainable` as differentiable leaves and everything else as
    /// constants. Cached features in `cache` replace recomputation of frozen
    /// sub-networks.
    pub fn record<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        sample: &PreparedSample,
        cache: &FrozenFeatures,
        trainable: BranchSet,
        heads: BranchSet,
    ) -> Result<Recorded> {
        use BranchName::*;
        let mut leaves = Vec::new();
        let mut bind_at = |tape: &mut Tape<T>, params: &[Parameter], offset: usize, train: bool| {
            let vars = bind(tape, params, train);
            if train {
                leaves.extend(vars.iter().enumerate().map(|(i, &v)| (offset + i, v)));
            }
            vars
        };
        let need_h = heads.contains(Heatmap) || heads.contains(Fusion);
        let need_in = heads.contains(Infected) || heads.contains(Fusion);
        let cfg = self.backbone_cfg();

        let g_off = self.group_range(Global).start;
        let h_off = self.group_range(Heatmap).start;
        let i_off = self.group_range(Infected).start;
        let f_off = self.group_range(Fusion).start;

        // global branch
        let train_g = trainable.contains(Global);
        let (pool_g, heat_crop) = match (&cache.pool_g, train_g) {
            (Some(pg), false) => (tape.constant(pg.cast()), cache.heat_crop.clone()),
            _ => {
                self.check_image(&sample.image)?;
                let bb = bind_at(tape, &self.global.backbone, g_off, train_g);
                let x = tape.constant(sample.image.to_tensor().cast());
                let act = backbone_forward(tape, cfg, &bb, x)?;
                let pool = tape.global_avg_pool(act)?;
                let crop = if need_h {
                    let a: Tensor = tape.value(act).cast();
                    Some(self.heat_crop(&a, &sample.image)?.crop)
                } else {
                    None
                };
                (pool, crop)
            }
        };
        let mut logits = [None; 4];
        if heads.contains(Global) {
            let off = g_off + self.global.backbone.len();
            let hd = bind_at(tape, &self.global.head, off, train_g);
            logits[Global.index()] = Some(tape.linear(pool_g, hd[0], hd[1])?);
        }

        // heat-map branch
        let train_h = trainable.contains(Heatmap);
        let mut pool_h = None;
        if need_h {
            pool_h = Some(match (&cache.pool_h, train_h || train_g) {
                (Some(ph), false) => tape.constant(ph.cast()),
                _ => {
                    let crop = heat_crop
                        .as_ref()
                        .ok_or_else(|| Error::Validation("heat-map crop missing from cache".into()))?;
                    let bb = bind_at(tape, &self.heatmap.backbone, h_off, train_h);
                    self.pool_on(tape, &bb, crop)?
                }
            });
            if heads.contains(Heatmap) {
                let off = h_off + self.heatmap.backbone.len();
                let hd = bind_at(tape, &self.heatmap.head, off, train_h);
                logits[Heatmap.index()] = Some(tape.linear(pool_h.unwrap(), hd[0], hd[1])?);
            }
        }

        // infected branch
        let train_i = trainable.contains(Infected);
        let mut pool_in = None;
        if need_in {
            let (pl, pr) = match (&cache.pool_l, &cache.pool_r, train_i) {
                (Some(l), Some(r), false) => (tape.constant(l.cast()), tape.constant(r.cast())),
                _ => {
                    let bb = bind_at(tape, &self.infected.backbone, i_off, train_i);
                    let pl = self.pool_on(tape, &bb, &sample.left)?;
                    let pr = self.pool_on(tape, &bb, &sample.right)?;
                    (pl, pr)
                }
            };
            let p = tape.concat(&[pl, pr, pool_g])?;
            pool_in = Some(p);
            if heads.contains(Infected) {
                let off = i_off + self.infected.backbone.len();
                let hd = bind_at(tape, &self.infected.head, off, train_i);
                logits[Infected.index()] = Some(tape.linear(p, hd[0], hd[1])?);
            }
        }

        // fusion head
        let mut pool_f = None;
        if heads.contains(Fusion) {
            let pf = tape.concat(&[pool_g, pool_h.unwrap(), pool_in.unwrap()])?;
            let hd = bind_at(tape, &self.fusion_head, f_off, trainable.contains(Fusion));
            logits[Fusion.index()] = Some(tape.linear(pf, hd[0], hd[1])?);
            pool_f = Some(pf);
        }
        Ok(Recorded {
            logits,
            leaves,
            pool_f,
        })
    }

    /// Summed cross-entropy of the given heads for one sample.
    pub fn record_loss<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        sample: &PreparedSample,
        cache: &FrozenFeatures,
        trainable: BranchSet,
        heads: BranchSet,
    ) -> Result<(Var, Recorded)> {
        let rec = self.record(tape, sample, cache, trainable, heads)?;
        let target = target_vector::<T>(sample.label, self.config.num_classes);
        let mut total: Option<Var> = None;
        for z in rec.logits.iter().flatten() {
            let p = tape.sigmoid(*z);
            let l = tape.bce(p, &target)?;
            total = Some(match total {
                None => l,
                Some(t) => tape.add(t, l)?,
            });
        }
        let total = total.ok_or_else(|| Error::Validation("no head selected for the loss".into()))?;
        Ok((total, rec))
    }
}
