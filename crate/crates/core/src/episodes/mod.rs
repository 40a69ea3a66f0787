//! 1-way 1-shot episodes over synthetic phantoms.
//!
//! Two sources are supported: supervised episodes pairing two phantoms that
//! share an organ class, and self-supervised episodes where a superpixel of a
//! single phantom is the pseudo-foreground and an augmented copy is the query.

mod augment;
pub mod io;
mod phantom;
mod superpixels;

pub use augment::{apply_augment, augment_pair, AugmentParams};
pub use phantom::{phantom_generate, Organ, Phantom, PhantomSpec};
pub use superpixels::{superpixels, superpixels_with, LabelMap, SLIC_COMPACTNESS, SLIC_ITERATIONS};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{BroError, Result};
use crate::mask::BinaryMask;
use crate::tensor::Tensor;

/// Downsampling factor between images and encoder feature maps.
pub const FEATURE_STRIDE: usize = 4;

const SAMPLING_RETRIES: usize = 64;
/// Pseudo-foreground superpixels must cover this fraction of the image.
pub const PSEUDO_FG_FRACTION: (f64, f64) = (0.01, 0.30);

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub support_image: Tensor,
    pub support_mask: BinaryMask,
    pub query_image: Tensor,
    pub query_mask: BinaryMask,
    /// Organ class; `0` for superpixel pseudo-classes.
    pub class_id: u32,
}

impl Episode {
    pub fn dims(&self) -> (usize, usize) {
        self.support_mask.dims()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EpisodeSource {
    SupervisedPhantom {
        spec: PhantomSpec,
        size: (usize, usize),
        /// Classes an episode may be built around.
        classes: Vec<u32>,
    },
    SslSuperpixel {
        spec: PhantomSpec,
        size: (usize, usize),
        segments: usize,
    },
}

/// Both foreground and background survive nearest-neighbour downsampling
/// to feature resolution.
pub fn usable_at_feature_scale(m: &BinaryMask) -> bool {
    let (h, w) = m.dims();
    let small = m.resize_nearest(h / FEATURE_STRIDE, w / FEATURE_STRIDE);
    let n = small.count();
    n > 0 && n < small.as_slice().len()
}

pub fn sample_episode(source: &EpisodeSource, seed: u64) -> Result<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match source {
        EpisodeSource::SupervisedPhantom { spec, size, classes } => {
            for _ in 0..SAMPLING_RETRIES {
                let support = phantom_generate(rng.random(), spec, size.0, size.1)?;
                let query = phantom_generate(rng.random(), spec, size.0, size.1)?;
                let q_ids = query.class_ids();
                let common: Vec<u32> = support
                    .class_ids()
                    .into_iter()
                    .filter(|c| q_ids.contains(c) && classes.contains(c))
                    .collect();
                if common.is_empty() {
                    continue;
                }
                let class_id = common[rng.random_range(0..common.len())];
                let s_mask = support.mask_for(class_id).expect("class present").clone();
                let q_mask = query.mask_for(class_id).expect("class present").clone();
                if !usable_at_feature_scale(&s_mask) || !usable_at_feature_scale(&q_mask) {
                    continue;
                }
                return Ok(Episode {
                    support_image: support.image,
                    support_mask: s_mask,
                    query_image: query.image,
                    query_mask: q_mask,
                    class_id,
                });
            }
            Err(BroError::Sampling(format!(
                "no common class among {classes:?} after {SAMPLING_RETRIES} phantom pairs (seed {seed})"
            )))
        }
        EpisodeSource::SslSuperpixel { spec, size, segments } => {
            let n = (size.0 * size.1) as f64;
            for _ in 0..SAMPLING_RETRIES {
                let phantom = phantom_generate(rng.random(), spec, size.0, size.1)?;
                let labels = superpixels(&phantom.image, *segments);
                let candidates: Vec<usize> = labels
                    .sizes()
                    .iter()
                    .enumerate()
                    .filter(|(_, &s)| {
                        let f = s as f64 / n;
                        f >= PSEUDO_FG_FRACTION.0 && f <= PSEUDO_FG_FRACTION.1
                    })
                    .map(|(l, _)| l)
                    .collect();
                if candidates.is_empty() {
                    continue;
                }
                let chosen = candidates[rng.random_range(0..candidates.len())];
                let mask = BinaryMask::new(
                    size.0,
                    size.1,
                    labels.labels.iter().map(|&l| l == chosen).collect(),
                )?;
                let (q_img, q_mask) = augment_pair(&phantom.image, &mask, rng.random());
                if !usable_at_feature_scale(&mask) || !usable_at_feature_scale(&q_mask) {
                    continue;
                }
                return Ok(Episode {
                    support_image: phantom.image,
                    support_mask: mask,
                    query_image: q_img,
                    query_mask: q_mask,
                    class_id: 0,
                });
            }
            Err(BroError::Sampling(format!(
                "no usable pseudo-foreground superpixel after {SAMPLING_RETRIES} phantoms (seed {seed})"
            )))
        }
    }
}

/// Deterministic stream of episodes derived from one base seed.
pub fn episode_stream(source: &EpisodeSource, seed: u64, count: usize) -> Result<Vec<Episode>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| sample_episode(source, rng.random())).collect()
}
