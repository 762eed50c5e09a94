//! The steps behind each CLI subcommand, usable as a library.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use super::config::RunConfig;
use super::images::{read_gray, read_mask, write_gray, write_mask};
use super::manifest::{Manifest, ManifestRow, Role, Split};
use super::report::MetricsReport;
use crate::evalviz::{render_cam_overlay, tsne_embed, Embedding, EvalResult, TsneConfig};
use crate::model::{predicted_label, BranchName, MultiStreamModel, PreparedSample, Prediction};
use crate::semisup::{run_algorithm1, Algorithm1Report, Provenance, PseudoLabelPool, Segmenter, SemisupConfig};
use crate::trainer::{run_protocol, stratified_split, EpochRecord, Stage, StageOutcome, TrainData};
use crate::vision::{resize, BinaryMask, GrayImage, HeatMap};
use crate::{Error, Result};

/// Reads an image and resamples it to `size x size` when needed.
pub fn load_image(path: &Path, size: usize) -> Result<GrayImage> {
    let img = read_gray(path)?;
    if img.height() == size && img.width() == size {
        Ok(img)
    } else {
        resize(&img, size, size)
    }
}

fn load_mask(path: &Path, size: usize) -> Result<BinaryMask> {
    let m = read_mask(path)?;
    Ok(if m.height() == size && m.width() == size {
        m
    } else {
        m.resize_nearest(size, size)
    })
}

/// Images of the given manifest rows, loaded in parallel.
pub fn load_rows(manifest: &Manifest, rows: &[usize], size: usize) -> Result<Vec<GrayImage>> {
    rows.par_iter()
        .map(|&i| load_image(&manifest.image_path(&manifest.rows[i]), size))
        .collect()
}

/// Result of the semi-supervised segmentation step.
#[derive(Debug, Clone)]
pub struct PseudoOutcome {
    pub segmenter: Segmenter,
    pub report: Algorithm1Report,
    /// `(manifest row, mask, provenance, round)` for every training row
    /// that took part, in row order.
    pub masks: Vec<(usize, BinaryMask, Provenance, usize)>,
}

/// Runs Algorithm 1 over the training split: seed-masked rows seed the
/// pool, unlabeled rows are pseudo-labelled. Images are handled at
/// `size x size`.
pub fn pseudo_label(manifest: &Manifest, cfg: &SemisupConfig, size: usize) -> Result<PseudoOutcome> {
    cfg.validate()?;
    let train: Vec<usize> = (0..manifest.rows.len())
        .filter(|&i| manifest.rows[i].split != Split::Test && manifest.rows[i].role != Role::LabeledOnly)
        .collect();
    let images = load_rows(manifest, &train, size)?;
    let mut seeds = Vec::new();
    let mut unlabeled = Vec::new();
    for (&i, img) in train.iter().zip(images) {
        let row = &manifest.rows[i];
        match (row.role, manifest.mask_path(row)) {
            (Role::SeedMasked, Some(p)) => seeds.push((i, img, load_mask(&p, size)?)),
            _ => unlabeled.push((i, img)),
        }
    }
    if seeds.is_empty() {
        return Err(Error::Validation("manifest has no seed-masked rows outside the test split".into()));
    }
    let mut pool = PseudoLabelPool::new(seeds, unlabeled, cfg.k, cfg.seed)?;
    let mut segmenter = Segmenter::new(cfg.segmenter.clone(), cfg.seed)?;
    let report = run_algorithm1(&mut segmenter, &mut pool, cfg.epochs_per_round, cfg.seed, |_| {})?;
    let mut masks: Vec<_> = pool
        .into_train_set()
        .into_iter()
        .map(|t| (t.id, t.mask, t.provenance, t.round))
        .collect();
    masks.sort_by_key(|m| m.0);
    Ok(PseudoOutcome {
        segmenter,
        report,
        masks,
    })
}

/// Writes pseudo masks, `provenance.csv`, a manifest whose unlabeled rows
/// point at their pseudo masks, and `segmenter.ckpt` under `out`.
pub fn write_pseudo_outputs(manifest: &Manifest, outcome: &PseudoOutcome, seed: u64, out: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut rows: Vec<ManifestRow> = manifest.rows.clone();
    let absolute = |p: PathBuf| -> Result<String> {
        let a = std::path::absolute(&p).map_err(|e| Error::io(&p, e))?;
        Ok(a.to_string_lossy().into_owned())
    };
    for r in &mut rows {
        r.image_path = absolute(manifest.image_path(r))?;
        if let Some(m) = manifest.mask_path(r) {
            r.mask_path = Some(absolute(m)?);
        }
    }
    let mut prov = String::from("row,image_path,mask_path,provenance,round\n");
    for (i, mask, p, round) in &outcome.masks {
        let rel = match p {
            Provenance::Pseudo => {
                let rel = format!("pseudo_masks/mask_{i:05}.pgm");
                write_mask(mask, &out.join(&rel))?;
                rows[*i].mask_path = Some(rel.clone());
                rel
            }
            Provenance::Seed => rows[*i].mask_path.clone().unwrap_or_default(),
        };
        writeln!(prov, "{i},{},{rel},{},{round}", rows[*i].image_path, p.as_str()).unwrap();
    }
    let prov_path = out.join("provenance.csv");
    std::fs::write(&prov_path, prov).map_err(|e| Error::io(&prov_path, e))?;
    save_checkpoint(
        &Checkpoint {
            seed,
            model: None,
            segmenter: Some(outcome.segmenter.clone()),
        },
        &out.join("segmenter.ckpt"),
    )?;
    let m = Manifest {
        dir: out.to_path_buf(),
        rows,
    };
    m.write(&out.join("manifest.csv"))?;
    Ok(m)
}

/// Where the classifier's training rows get their infection masks.
pub enum MaskSource {
    /// Run Algorithm 1 first with the config's semisup settings.
    Algorithm1,
    /// Use manifest masks where present and this segmenter elsewhere.
    Segmenter(Segmenter),
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MultiStreamModel,
    pub segmenter: Segmenter,
    pub stages: Vec<StageOutcome>,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            seed: self.model.seed,
            model: Some(self.model.clone()),
            segmenter: Some(self.segmenter.clone()),
        }
    }

    /// Epoch history as JSON lines.
    pub fn history_jsonl(&self) -> String {
        let recs: Vec<&EpochRecord> = self.stages.iter().flat_map(|s| &s.history).collect();
        recs.iter()
            .map(|r| serde_json::to_string(r).expect("record serialises") + "\n")
            .collect()
    }
}

fn prepare_rows(
    model: &MultiStreamModel,
    manifest: &Manifest,
    rows: &[usize],
    images: Vec<GrayImage>,
    masks: &[Option<BinaryMask>],
    segmenter: &Segmenter,
) -> Result<Vec<PreparedSample>> {
    let size = model.config().backbone.input_size;
    rows.par_iter()
        .zip(images)
        .zip(masks)
        .map(|((&i, img), mask)| {
            let row = &manifest.rows[i];
            let mask = match mask {
                Some(m) => m.clone(),
                None => match manifest.mask_path(row) {
                    Some(p) => load_mask(&p, size)?,
                    None => segmenter.predict_mask(&img)?,
                },
            };
            model.prepare(&img, &mask, row.label)
        })
        .collect()
}

/// Trains the classifier on the manifest's train (and val) rows.
///
/// Validation uses the `val` split when the manifest has one, otherwise a
/// stratified `val_fraction` of the training rows. `init` continues from an
/// existing model (for running single stages).
pub fn train(
    manifest: &Manifest,
    cfg: &RunConfig,
    stages: &[Stage],
    masks: MaskSource,
    init: Option<MultiStreamModel>,
    on_stage: impl FnMut(&StageOutcome),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let size = cfg.model.backbone.input_size;
    let mut model = match init {
        Some(m) => {
            if m.config() != &cfg.model {
                return Err(Error::Config("initial checkpoint was built with a different model config".into()));
            }
            m
        }
        None => MultiStreamModel::new(cfg.model.clone(), cfg.seed)?,
    };
    let mut known: Vec<Option<BinaryMask>> = vec![None; manifest.rows.len()];
    let segmenter = match masks {
        MaskSource::Segmenter(s) => s,
        MaskSource::Algorithm1 => {
            let out = pseudo_label(manifest, &cfg.semisup, size)?;
            for (i, m, _, _) in out.masks {
                known[i] = Some(m);
            }
            out.segmenter
        }
    };
    let mut train_rows: Vec<usize> = manifest
        .rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.split == Split::Train)
        .map(|(i, _)| i)
        .collect();
    let mut val_rows: Vec<usize> = manifest
        .rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.split == Split::Val)
        .map(|(i, _)| i)
        .collect();
    if val_rows.is_empty() {
        let labels: Vec<u8> = train_rows.iter().map(|&i| manifest.rows[i].label).collect();
        let (tr, va) = stratified_split(&labels, cfg.trainer.val_fraction, cfg.trainer.seed);
        val_rows = va.iter().map(|&j| train_rows[j]).collect();
        train_rows = tr.iter().map(|&j| train_rows[j]).collect();
    }
    if train_rows.is_empty() || val_rows.is_empty() {
        return Err(Error::Validation(format!(
            "need training and validation rows, have {} and {}",
            train_rows.len(),
            val_rows.len()
        )));
    }
    let pick = |rows: &[usize]| -> Vec<Option<BinaryMask>> { rows.iter().map(|&i| known[i].clone()).collect() };
    let data = TrainData {
        train: prepare_rows(
            &model,
            manifest,
            &train_rows,
            load_rows(manifest, &train_rows, size)?,
            &pick(&train_rows),
            &segmenter,
        )?,
        val: prepare_rows(
            &model,
            manifest,
            &val_rows,
            load_rows(manifest, &val_rows, size)?,
            &pick(&val_rows),
            &segmenter,
        )?,
    };
    let stages = run_protocol(&mut model, &data, &cfg.trainer, stages, on_stage)?;
    Ok(TrainOutcome {
        model,
        segmenter,
        stages,
    })
}

fn require(ck: &Checkpoint) -> Result<(&MultiStreamModel, &Segmenter)> {
    match (&ck.model, &ck.segmenter) {
        (Some(m), Some(s)) => Ok((m, s)),
        _ => Err(Error::Checkpoint("checkpoint must hold both a classifier and a segmenter".into())),
    }
}

/// Predictions for the rows of one split, with infection masks from the
/// checkpoint's segmenter.
pub fn predict_split(ck: &Checkpoint, manifest: &Manifest, split: Split) -> Result<(Vec<usize>, Vec<Prediction>)> {
    let (model, seg) = require(ck)?;
    let rows: Vec<usize> = (0..manifest.rows.len()).filter(|&i| manifest.rows[i].split == split).collect();
    if rows.is_empty() {
        return Err(Error::Validation(format!("manifest has no `{}` rows", split.as_str())));
    }
    let images = load_rows(manifest, &rows, model.config().backbone.input_size)?;
    let preds = images
        .par_iter()
        .map(|img| model.predict(img, &seg.predict_mask(img)?))
        .collect::<Result<Vec<_>>>()?;
    for p in &preds {
        if p.logits.iter().any(|l| !l.all_finite()) {
            return Err(Error::Numerical("non-finite logits during evaluation".into()));
        }
    }
    Ok((rows, preds))
}

/// Per-head metrics on one split.
pub fn evaluate(ck: &Checkpoint, manifest: &Manifest, split: Split) -> Result<MetricsReport> {
    let (rows, preds) = predict_split(ck, manifest, split)?;
    let labels: Vec<u8> = rows.iter().map(|&i| manifest.rows[i].label).collect();
    let heads = BranchName::ALL
        .iter()
        .map(|&b| {
            let scores = preds.iter().map(|p| p.score(b) as f64).collect();
            let predicted = preds.iter().map(|p| predicted_label(&p.probs(b))).collect();
            EvalResult::new(scores, predicted, labels.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::new(split.as_str(), heads)
}

/// t-SNE of the fusion features of one split. The perplexity is lowered
/// to fit small splits.
pub fn embed(ck: &Checkpoint, manifest: &Manifest, split: Split, cfg: &TsneConfig) -> Result<(Vec<usize>, Embedding)> {
    let (rows, preds) = predict_split(ck, manifest, split)?;
    let feats: Vec<Vec<f32>> = preds.iter().map(|p| p.pool_f.data().to_vec()).collect();
    let mut cfg = cfg.clone();
    let max_perp = (feats.len() as f64 - 1.0) / 3.0;
    if cfg.perplexity >= max_perp {
        cfg.perplexity = (max_perp - 1e-6).max(1.0);
    }
    Ok((rows, tsne_embed(&feats, &cfg)?))
}

/// `id,label,x,y,z,kl` records; `id` is the manifest row index.
pub fn embedding_csv(manifest: &Manifest, rows: &[usize], e: &Embedding) -> String {
    let mut out = String::from("id,label,x,y,z,kl\n");
    for (&i, p) in rows.iter().zip(&e.points) {
        writeln!(
            out,
            "{i},{},{:.6},{:.6},{:.6},{:.6}",
            manifest.rows[i].label, p[0], p[1], p[2], e.kl
        )
        .unwrap();
    }
    out
}

/// Files written by [`heatmap_artifacts`].
#[derive(Debug, Clone)]
pub struct HeatmapFiles {
    pub heatmap: PathBuf,
    pub mask: PathBuf,
    pub crop: PathBuf,
    pub overlay: PathBuf,
    pub fallback: bool,
}

/// Writes the normalised heat map, its binarised region, the crop fed to
/// the heat-map branch and a CAM overlay for one image.
pub fn heatmap_artifacts(ck: &Checkpoint, image: &Path, tau: f32, out: &Path) -> Result<HeatmapFiles> {
    let model = ck
        .model
        .as_ref()
        .ok_or_else(|| Error::Checkpoint("checkpoint holds no classifier".into()))?;
    let mut model = model.clone();
    model.set_tau(tau)?;
    let size = model.config().backbone.input_size;
    let img = load_image(image, size)?;
    let g = model.forward_global(&img)?;
    let crop = model.heat_crop(&g.activations, &img)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let files = HeatmapFiles {
        heatmap: out.join("heatmap.pgm"),
        mask: out.join("mask.pgm"),
        crop: out.join("crop.pgm"),
        overlay: out.join("cam_overlay.ppm"),
        fallback: crop.fallback,
    };
    let hm: &HeatMap = &crop.heatmap;
    write_gray(&GrayImage::new(hm.height(), hm.width(), hm.values().to_vec())?, &files.heatmap)?;
    let region = crop
        .region
        .clone()
        .unwrap_or_else(|| BinaryMask::empty(hm.height(), hm.width()));
    write_mask(&region, &files.mask)?;
    write_gray(&crop.crop, &files.crop)?;
    let class = model.num_classes() - 1;
    let cam = model.global_cam(&img, BranchName::Global, class)?;
    render_cam_overlay(&img, &cam, &files.overlay)?;
    Ok(files)
}

pub fn load_full_checkpoint(path: &Path) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    require(&ck)?;
    Ok(ck)
}
