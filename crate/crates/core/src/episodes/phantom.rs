//! Synthetic "organ phantoms": a smooth low-frequency background with a few
//! disjoint elliptical organs whose intensities overlap the background.
//! Organ classes differ by shape and by an oriented stripe texture.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{BroError, Result};
use crate::mask::BinaryMask;
use crate::tensor::Tensor;

const PLACEMENT_RETRIES: usize = 400;
const MIN_ORGAN_FRACTION: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    /// Organs per phantom, each with a distinct class.
    pub organ_count: usize,
    /// Class ids are drawn from `1..=num_classes`.
    pub num_classes: u32,
    /// Ellipse semi-axis range as a fraction of `min(H, W)`.
    pub semi_axis: (f64, f64),
    pub organ_intensity: (f64, f64),
    pub background_intensity: (f64, f64),
    /// Peak amplitude of the class-specific stripe texture.
    pub texture_amplitude: f64,
    pub noise_std: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            organ_count: 3,
            num_classes: 6,
            semi_axis: (0.10, 0.20),
            organ_intensity: (0.35, 0.65),
            background_intensity: (0.25, 0.75),
            texture_amplitude: 0.12,
            noise_std: 0.02,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if self.organ_count == 0 {
            return Err(BroError::config("organ_count", "need at least one organ"));
        }
        if self.organ_count as u32 > self.num_classes {
            return Err(BroError::config(
                "organ_count",
                format!("{} organs need at least as many classes, have {}", self.organ_count, self.num_classes),
            ));
        }
        if !range_ok(self.semi_axis) || self.semi_axis.0 <= 0.0 || self.semi_axis.1 >= 0.5 {
            return Err(BroError::config("semi_axis", "expected 0 < min <= max < 0.5"));
        }
        for (key, r) in [
            ("organ_intensity", self.organ_intensity),
            ("background_intensity", self.background_intensity),
        ] {
            if !range_ok(r) || r.0 < 0.0 || r.1 > 1.0 {
                return Err(BroError::config(key, "expected 0 <= min <= max <= 1"));
            }
        }
        if !(self.texture_amplitude >= 0.0) || !(self.noise_std >= 0.0) {
            return Err(BroError::config("texture_amplitude", "amplitudes must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Organ {
    pub class_id: u32,
    pub mask: BinaryMask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    /// H×W intensities in `[0, 1]`.
    pub image: Tensor,
    pub organs: Vec<Organ>,
    pub seed: u64,
}

impl Phantom {
    pub fn class_ids(&self) -> Vec<u32> {
        self.organs.iter().map(|o| o.class_id).collect()
    }

    pub fn mask_for(&self, class_id: u32) -> Option<&BinaryMask> {
        self.organs.iter().find(|o| o.class_id == class_id).map(|o| &o.mask)
    }
}

/// Class-dependent appearance: stripe frequency (cycles per image), stripe
/// orientation and ellipse aspect ratio.
fn class_style(class_id: u32) -> (f64, f64, f64) {
    let c = class_id as f64;
    let freq = 4.0 + 3.0 * ((class_id % 3) as f64);
    let angle = (c * 0.61803398875 * PI) % PI;
    let aspect = 0.55 + 0.15 * ((class_id % 4) as f64);
    (freq, angle, aspect)
}

/// Smooth field in `[0, 1]` built from a few low-frequency cosines.
fn low_frequency_field(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            let fy = rng.random_range(0.0..2.5);
            let fx = rng.random_range(0.0..2.5);
            let phase = rng.random_range(0.0..2.0 * PI);
            let amp = rng.random_range(0.3..1.0);
            (fy, fx, phase, amp)
        })
        .collect();
    let mut field: Vec<f64> = (0..h * w)
        .map(|i| {
            let y = (i / w) as f64 / h as f64;
            let x = (i % w) as f64 / w as f64;
            waves
                .iter()
                .map(|&(fy, fx, ph, a)| a * (2.0 * PI * (fy * y + fx * x) + ph).cos())
                .sum()
        })
        .collect();
    let lo = field.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = field.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    field.iter_mut().for_each(|v| *v = (*v - lo) / span);
    field
}

fn ellipse_mask(h: usize, w: usize, cy: f64, cx: f64, a: f64, b: f64, theta: f64) -> BinaryMask {
    let (s, c) = theta.sin_cos();
    BinaryMask::from_fn(h, w, |y, x| {
        let dy = y as f64 + 0.5 - cy;
        let dx = x as f64 + 0.5 - cx;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / a).powi(2) + (v / b).powi(2) <= 1.0
    })
}

/// True when `m` touches `occupied` or any pixel 4-adjacent to it.
fn overlaps_with_margin(m: &BinaryMask, occupied: &BinaryMask) -> bool {
    let (h, w) = m.dims();
    m.active().into_iter().any(|i| {
        let (y, x) = (i / w, i % w);
        occupied.get(y, x)
            || (y > 0 && occupied.get(y - 1, x))
            || (y + 1 < h && occupied.get(y + 1, x))
            || (x > 0 && occupied.get(y, x - 1))
            || (x + 1 < w && occupied.get(y, x + 1))
    })
}

pub fn phantom_generate(seed: u64, spec: &PhantomSpec, h: usize, w: usize) -> Result<Phantom> {
    spec.validate()?;
    if h < 32 || w < 32 {
        return Err(BroError::config("image_size", format!("phantoms need H, W >= 32, got {h}×{w}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (bg_lo, bg_hi) = spec.background_intensity;
    let field = low_frequency_field(h, w, &mut rng);
    let mut image: Vec<f64> = field.iter().map(|v| bg_lo + (bg_hi - bg_lo) * v).collect();

    let mut classes: Vec<u32> = (1..=spec.num_classes).collect();
    for i in 0..spec.organ_count {
        let j = rng.random_range(i..classes.len());
        classes.swap(i, j);
    }
    classes.truncate(spec.organ_count);

    let side = h.min(w) as f64;
    let min_pixels = (MIN_ORGAN_FRACTION * (h * w) as f64).ceil() as usize;
    let mut occupied = BinaryMask::empty(h, w);
    let mut organs = Vec::with_capacity(spec.organ_count);
    for &class_id in &classes {
        let (freq, angle, aspect) = class_style(class_id);
        let mask = (0..PLACEMENT_RETRIES)
            .find_map(|_| {
                let a = rng.random_range(spec.semi_axis.0..=spec.semi_axis.1) * side;
                let b = a * aspect;
                let theta = rng.random_range(0.0..PI);
                let cy = rng.random_range(a..(h as f64 - a).max(a + 1e-9));
                let cx = rng.random_range(a..(w as f64 - a).max(a + 1e-9));
                let m = ellipse_mask(h, w, cy, cx, a, b, theta);
                (m.count() >= min_pixels && !overlaps_with_margin(&m, &occupied)).then_some(m)
            })
            .ok_or_else(|| {
                BroError::Generation(format!(
                    "could not place organ of class {class_id} after {PLACEMENT_RETRIES} attempts (seed {seed})"
                ))
            })?;

        let base = rng.random_range(spec.organ_intensity.0..=spec.organ_intensity.1);
        let phase = rng.random_range(0.0..2.0 * PI);
        let (sa, ca) = angle.sin_cos();
        for i in mask.active() {
            let y = (i / w) as f64 / side;
            let x = (i % w) as f64 / side;
            let stripe = (2.0 * PI * freq * (x * ca + y * sa) + phase).cos();
            image[i] = base + spec.texture_amplitude * stripe;
        }
        for i in mask.active() {
            occupied.set(i / w, i % w, true);
        }
        organs.push(Organ { class_id, mask });
    }

    if spec.noise_std > 0.0 {
        let noise = Normal::new(0.0, spec.noise_std).expect("validated std");
        for v in &mut image {
            *v += noise.sample(&mut rng);
        }
    }
    image.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));

    Ok(Phantom {
        image: Tensor::new(vec![h, w], image)?,
        organs,
        seed,
    })
}
