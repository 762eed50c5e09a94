use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::images::{write_gray, write_mask};
use super::manifest::{Manifest, ManifestRow, Role, Split};
use crate::vision::{BinaryMask, GrayImage};
use crate::{Error, Result};

const BACKGROUND: f32 = 0.6;
const LUNG: f32 = 0.2;
const BLOB: f32 = 0.8;
const NOISE_STD: f64 = 0.04;
const DISTRACTOR_PROB: f64 = 0.5;
const TEST_FRACTION: f64 = 0.25;
const SEED_MASK_FRACTION: f64 = 0.1;

/// One generated image with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub image: GrayImage,
    /// Infected pixels (empty for negatives).
    pub mask: BinaryMask,
    /// Lung field.
    pub lung: BinaryMask,
    pub label: u8,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn disc(size: usize, cr: f64, cc: f64, radius: f64) -> BinaryMask {
    let mut m = BinaryMask::empty(size, size);
    for r in 0..size {
        for c in 0..size {
            if (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2) <= radius * radius {
                m.set(r, c, true);
            }
        }
    }
    m
}

/// Deterministic image `index` of a dataset; even indices are negative.
///
/// A dark elliptical lung field sits on a gray background. Positives carry
/// 1-3 bright blobs inside the lung; any image may carry one bright
/// distractor blob outside it.
pub fn synth_sample(index: usize, size: usize, seed: u64) -> SynthSample {
    let mut rng = rng_for(seed, index as u64);
    let s = size as f64;
    let label = (index % 2) as u8;
    let (cr, cc) = (s / 2.0 + rng.random_range(-s / 16.0..s / 16.0), s / 2.0 + rng.random_range(-s / 16.0..s / 16.0));
    let (a, b) = (rng.random_range(0.30..0.38) * s, rng.random_range(0.24..0.32) * s);
    let mut lung = BinaryMask::empty(size, size);
    for r in 0..size {
        for c in 0..size {
            if ((c as f64 - cc) / a).powi(2) + ((r as f64 - cr) / b).powi(2) <= 1.0 {
                lung.set(r, c, true);
            }
        }
    }

    let mut mask = BinaryMask::empty(size, size);
    if label == 1 {
        let blobs = rng.random_range(1..=3);
        for _ in 0..blobs {
            let radius = rng.random_range(s / 16.0..s / 9.0);
            for _ in 0..200 {
                let (br, bc) = (rng.random_range(cr - b..cr + b), rng.random_range(cc - a..cc + a));
                let d = disc(size, br, bc, radius);
                if !d.is_empty() && d.is_subset_of(&lung) {
                    for (r, c) in d.cells() {
                        mask.set(r, c, true);
                    }
                    break;
                }
            }
        }
    }
    let mut distractor = BinaryMask::empty(size, size);
    if rng.random_bool(DISTRACTOR_PROB) {
        let radius = rng.random_range(s / 16.0..s / 9.0);
        for _ in 0..200 {
            let (br, bc) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
            let d = disc(size, br, bc, radius);
            if d.count() > 4 && d.cells().all(|(r, c)| !lung.get(r, c)) {
                distractor = d;
                break;
            }
        }
    }

    let noise = Normal::new(0.0, NOISE_STD).expect("finite std");
    let px = (0..size * size)
        .map(|i| {
            let (r, c) = (i / size, i % size);
            let base = if mask.get(r, c) || distractor.get(r, c) {
                BLOB
            } else if lung.get(r, c) {
                LUNG
            } else {
                BACKGROUND
            };
            base + noise.sample(&mut rng) as f32
        })
        .collect();
    SynthSample {
        image: GrayImage::new(size, size, px).expect("square image"),
        mask,
        lung,
        label,
    }
}

/// `(split, role)` for each of `n` balanced samples: a stratified quarter
/// goes to test (labeled-only); a tenth of each class's training images
/// (at least one) carries its ground-truth mask.
pub fn synth_assignments(n: usize, seed: u64) -> Vec<(Split, Role)> {
    let mut rng = rng_for(seed, u64::MAX);
    let mut out = vec![(Split::Train, Role::Unlabeled); n];
    for class in 0..2 {
        let mut idx: Vec<usize> = (0..n).filter(|i| i % 2 == class).collect();
        idx.shuffle(&mut rng);
        let n_test = (TEST_FRACTION * idx.len() as f64).round() as usize;
        let n_seed = ((SEED_MASK_FRACTION * (idx.len() - n_test) as f64).round() as usize).max(1);
        for (k, &i) in idx.iter().enumerate() {
            out[i] = if k < n_test {
                (Split::Test, Role::LabeledOnly)
            } else if k < n_test + n_seed {
                (Split::Train, Role::SeedMasked)
            } else {
                (Split::Train, Role::Unlabeled)
            };
        }
    }
    out
}

/// Writes `n` images, their ground-truth masks and `manifest.csv` under
/// `out`. Only seed-masked rows reference their mask in the manifest.
pub fn generate_synthetic(n: usize, size: usize, seed: u64, out: &Path) -> Result<Manifest> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::Validation(format!("n must be a positive even number, got {n}")));
    }
    if size < 32 {
        return Err(Error::Validation(format!("size must be at least 32, got {size}")));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let assign = synth_assignments(n, seed);
    let mut rows = Vec::with_capacity(n);
    for (i, &(split, role)) in assign.iter().enumerate() {
        let s = synth_sample(i, size, seed);
        let image_path = format!("images/img_{i:05}.pgm");
        let mask_file = format!("masks/mask_{i:05}.pgm");
        write_gray(&s.image, &out.join(&image_path))?;
        write_mask(&s.mask, &out.join(&mask_file))?;
        rows.push(ManifestRow {
            image_path,
            label: s.label,
            mask_path: (role == Role::SeedMasked).then_some(mask_file),
            split,
            role,
        });
    }
    let m = Manifest {
        dir: out.to_path_buf(),
        rows,
    };
    m.write(&out.join("manifest.csv"))?;
    Ok(m)
}
