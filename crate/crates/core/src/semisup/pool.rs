use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::segmenter::{train_segmenter, Segmenter, SegmenterConfig};
use crate::vision::{BinaryMask, GrayImage};
use crate::{Error, Result};

/// Origin of a training mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Seed,
    Pseudo,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Seed => "seed",
            Provenance::Pseudo => "pseudo",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledItem {
    pub id: usize,
    pub image: GrayImage,
    pub mask: BinaryMask,
    pub provenance: Provenance,
    /// Round in which the mask was assigned (0 for seed masks).
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledItem {
    pub id: usize,
    pub image: GrayImage,
}

/// Mask-labelled training set and the unlabelled remainder.
///
/// Items only ever move from `test_set` to `train_set`; labelled items are
/// never modified once added.
#[derive(Debug, Clone)]
pub struct PseudoLabelPool {
    train_set: Vec<LabeledItem>,
    test_set: Vec<UnlabeledItem>,
    k: usize,
    rounds: usize,
    rng: ChaCha8Rng,
}

impl PseudoLabelPool {
    /// `seed` holds `(id, image, mask)` triples; ids must be unique across
    /// both sets.
    pub fn new(
        seed_items: Vec<(usize, GrayImage, BinaryMask)>,
        unlabeled: Vec<(usize, GrayImage)>,
        k: usize,
        rng_seed: u64,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("pseudo-label batch size k must be >= 1".into()));
        }
        let mut ids: Vec<usize> = seed_items.iter().map(|s| s.0).chain(unlabeled.iter().map(|u| u.0)).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Validation(format!("image id {} appears twice in the pool", w[0])));
        }
        for (id, img, mask) in &seed_items {
            if img.height() != mask.height() || img.width() != mask.width() {
                return Err(Error::Dimension(format!("seed mask of image {id} does not match its image")));
            }
        }
        Ok(PseudoLabelPool {
            train_set: seed_items
                .into_iter()
                .map(|(id, image, mask)| LabeledItem {
                    id,
                    image,
                    mask,
                    provenance: Provenance::Seed,
                    round: 0,
                })
                .collect(),
            test_set: unlabeled.into_iter().map(|(id, image)| UnlabeledItem { id, image }).collect(),
            k,
            rounds: 0,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
        })
    }

    pub fn train_set(&self) -> &[LabeledItem] {
        &self.train_set
    }

    pub fn test_set(&self) -> &[UnlabeledItem] {
        &self.test_set
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    /// Rounds needed to empty the unlabelled set: `ceil(|test| / k)`.
    pub fn rounds_remaining(&self) -> usize {
        self.test_set.len().div_ceil(self.k)
    }

    /// `true` iff the two sets are disjoint and together hold exactly `ids`.
    pub fn is_partition_of(&self, ids: &[usize]) -> bool {
        let mut have: Vec<usize> = self
            .train_set
            .iter()
            .map(|t| t.id)
            .chain(self.test_set.iter().map(|u| u.id))
            .collect();
        have.sort_unstable();
        let mut want = ids.to_vec();
        want.sort_unstable();
        have == want
    }

    pub fn into_train_set(self) -> Vec<LabeledItem> {
        self.train_set
    }
}

/// Ids moved into the training set by one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundReport {
    pub round: usize,
    pub ids: Vec<usize>,
}

/// Moves `min(k, |test|)` uniformly sampled images into the training set with
/// masks predicted by `seg`.
pub fn pseudo_label_round(seg: &Segmenter, pool: &mut PseudoLabelPool) -> Result<RoundReport> {
    let n = pool.test_set.len();
    if n == 0 {
        return Err(Error::Validation("no unlabeled images left".into()));
    }
    let m = pool.k.min(n);
    let mut picked = index::sample(&mut pool.rng, n, m).into_vec();
    picked.sort_unstable();
    let imgs: Vec<&GrayImage> = picked.iter().map(|&i| &pool.test_set[i].image).collect();
    let masks = seg.predict_masks(&imgs)?;

    pool.rounds += 1;
    let round = pool.rounds;
    let mut chosen = vec![false; n];
    picked.iter().for_each(|&i| chosen[i] = true);
    let mut rest = Vec::with_capacity(n - m);
    let mut moved = Vec::with_capacity(m);
    for (i, item) in std::mem::take(&mut pool.test_set).into_iter().enumerate() {
        if chosen[i] {
            moved.push(item);
        } else {
            rest.push(item);
        }
    }
    let ids = moved.iter().map(|u| u.id).collect();
    pool.train_set.extend(moved.into_iter().zip(masks).map(|(u, mask)| LabeledItem {
        id: u.id,
        image: u.image,
        mask,
        provenance: Provenance::Pseudo,
        round,
    }));
    pool.test_set = rest;
    Ok(RoundReport { round, ids })
}

/// Settings of the semi-supervised loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemisupConfig {
    /// Images pseudo-labelled per round.
    pub k: usize,
    pub epochs_per_round: usize,
    pub seed: u64,
    pub segmenter: SegmenterConfig,
}

impl Default for SemisupConfig {
    fn default() -> Self {
        SemisupConfig {
            k: 100,
            epochs_per_round: 10,
            seed: 0,
            segmenter: SegmenterConfig::default(),
        }
    }
}

impl SemisupConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("semisup k must be >= 1".into()));
        }
        self.segmenter.validate()
    }
}

/// Trace of a full run.
#[derive(Debug, Clone, PartialEq)]
pub struct Algorithm1Report {
    pub rounds: Vec<RoundReport>,
    /// Mean epoch losses of every training call, in call order.
    pub losses: Vec<Vec<f32>>,
}

/// Alternates training and pseudo-labelling until no unlabelled image is
/// left, then trains once more on the full set. `on_step` sees the pool after
/// every training call and every round.
pub fn run_algorithm1(
    seg: &mut Segmenter,
    pool: &mut PseudoLabelPool,
    epochs_per_round: usize,
    seed: u64,
    mut on_step: impl FnMut(&PseudoLabelPool),
) -> Result<Algorithm1Report> {
    if pool.train_set.is_empty() {
        return Err(Error::Validation("Algorithm 1 needs at least one mask-labeled seed image".into()));
    }
    let mut report = Algorithm1Report {
        rounds: Vec::new(),
        losses: Vec::new(),
    };
    let mut call = 0u64;
    let mut train = |seg: &mut Segmenter, pool: &PseudoLabelPool| -> Result<Vec<f32>> {
        let pairs: Vec<(&GrayImage, &BinaryMask)> = pool.train_set.iter().map(|t| (&t.image, &t.mask)).collect();
        call += 1;
        train_segmenter(seg, &pairs, epochs_per_round, seed.wrapping_mul(0x9E37_79B9).wrapping_add(call))
    };
    while !pool.test_set.is_empty() {
        report.losses.push(train(seg, pool)?);
        on_step(pool);
        report.rounds.push(pseudo_label_round(seg, pool)?);
        on_step(pool);
    }
    report.losses.push(train(seg, pool)?);
    on_step(pool);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_seg() -> Segmenter {
        Segmenter::new(
            SegmenterConfig {
                channels: [2, 2, 2],
                input_size: 8,
                ..Default::default()
            },
            0,
        )
        .unwrap()
    }

    fn pool(n_seed: usize, n_unl: usize, k: usize) -> PseudoLabelPool {
        let img = |i: usize| GrayImage::filled(8, 8, (i % 10) as f32 / 10.0).unwrap();
        let seeds = (0..n_seed).map(|i| (i, img(i), BinaryMask::empty(8, 8))).collect();
        let unl = (n_seed..n_seed + n_unl).map(|i| (i, img(i))).collect();
        PseudoLabelPool::new(seeds, unl, k, 11).unwrap()
    }

    #[test]
    fn round_sizes() {
        let seg = tiny_seg();
        let mut p = pool(5, 250, 100);
        let ids: Vec<usize> = (0..255).collect();
        let sizes: Vec<usize> = (0..3).map(|_| pseudo_label_round(&seg, &mut p).unwrap().ids.len()).collect();
        assert_eq!(sizes, vec![100, 100, 50]);
        assert!(p.test_set().is_empty());
        assert!(p.is_partition_of(&ids));
        assert!(pseudo_label_round(&seg, &mut p).is_err());
    }

    #[test]
    fn three_rounds_then_final_training() {
        let mut seg = tiny_seg();
        let mut p = pool(10, 25, 10);
        assert_eq!(p.rounds_remaining(), 3);
        let ids: Vec<usize> = (0..35).collect();
        let mut steps = 0;
        let r = run_algorithm1(&mut seg, &mut p, 1, 0, |p| {
            steps += 1;
            assert!(p.is_partition_of(&ids));
        })
        .unwrap();
        assert_eq!(r.rounds.len(), 3);
        assert_eq!(r.losses.len(), 4);
        assert_eq!(steps, 7);
        let seeds = p.train_set().iter().filter(|t| t.provenance == Provenance::Seed).count();
        assert_eq!(seeds, 10);
        // every unlabeled image was pseudo-labeled exactly once
        let mut pseudo: Vec<usize> = r.rounds.iter().flat_map(|r| r.ids.clone()).collect();
        pseudo.sort_unstable();
        assert_eq!(pseudo, (10..35).collect::<Vec<_>>());
    }

    #[test]
    fn no_unlabeled_is_plain_training() {
        let mut seg = tiny_seg();
        let mut p = pool(4, 0, 10);
        let r = run_algorithm1(&mut seg, &mut p, 2, 0, |_| {}).unwrap();
        assert!(r.rounds.is_empty());
        assert_eq!(r.losses.len(), 1);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let img = GrayImage::filled(8, 8, 0.5).unwrap();
        let r = PseudoLabelPool::new(
            vec![(1, img.clone(), BinaryMask::empty(8, 8))],
            vec![(1, img)],
            5,
            0,
        );
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn deterministic_rounds() {
        let seg = tiny_seg();
        let mut a = pool(2, 30, 7);
        let mut b = pool(2, 30, 7);
        for _ in 0..5 {
            assert_eq!(pseudo_label_round(&seg, &mut a).unwrap(), pseudo_label_round(&seg, &mut b).unwrap());
        }
    }
}
