//! Self-supervised support→query augmentation: a small random affine warp
//! plus gamma jitter, applied consistently to an image and its mask.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mask::BinaryMask;
use crate::tensor::Tensor;

pub const MAX_ROTATION_DEG: f64 = 15.0;
pub const MAX_TRANSLATION: f64 = 0.05;
pub const SCALE_RANGE: (f64, f64) = (0.9, 1.1);
pub const GAMMA_RANGE: (f64, f64) = (0.8, 1.25);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    /// Translation as a fraction of `(H, W)`.
    pub translate: (f64, f64),
    pub scale: f64,
    pub gamma: f64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            translate: (0.0, 0.0),
            scale: 1.0,
            gamma: 1.0,
        }
    }

    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (glo, ghi) = (GAMMA_RANGE.0.ln(), GAMMA_RANGE.1.ln());
        Self {
            rotation_deg: rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG),
            translate: (
                rng.random_range(-MAX_TRANSLATION..=MAX_TRANSLATION),
                rng.random_range(-MAX_TRANSLATION..=MAX_TRANSLATION),
            ),
            scale: rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1),
            gamma: rng.random_range(glo..=ghi).exp(),
        }
    }
}

pub fn augment_pair(image: &Tensor, mask: &BinaryMask, seed: u64) -> (Tensor, BinaryMask) {
    apply_augment(image, mask, &AugmentParams::sample(seed))
}

/// Inverse-maps every output pixel into the source: bilinear with edge
/// clamping for the image, nearest-neighbour (outside = background) for the mask.
pub fn apply_augment(image: &Tensor, mask: &BinaryMask, p: &AugmentParams) -> (Tensor, BinaryMask) {
    let (h, w) = image.dims2().expect("augment expects an H×W image");
    assert_eq!(mask.dims(), (h, w), "image and mask must share a grid");
    let (sin, cos) = p.rotation_deg.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (ty, tx) = (p.translate.0 * h as f64, p.translate.1 * w as f64);
    let src = |y: usize, x: usize| {
        let dy = (y as f64 - cy - ty) / p.scale;
        let dx = (x as f64 - cx - tx) / p.scale;
        (cy + cos * dy - sin * dx, cx + sin * dy + cos * dx)
    };
    let px = image.data();
    let at = |y: isize, x: isize| {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        px[y * w + x]
    };
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = src(y, x);
            let (y0, x0) = (sy.floor(), sx.floor());
            let (fy, fx) = (sy - y0, sx - x0);
            let (y0, x0) = (y0 as isize, x0 as isize);
            let v = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
            out.push(if p.gamma == 1.0 { v } else { v.clamp(0.0, 1.0).powf(p.gamma) });
        }
    }
    let warped_mask = BinaryMask::from_fn(h, w, |y, x| {
        let (sy, sx) = src(y, x);
        let (ry, rx) = (sy.round(), sx.round());
        ry >= 0.0 && rx >= 0.0 && (ry as usize) < h && (rx as usize) < w && mask.get(ry as usize, rx as usize)
    });
    (
        Tensor::new(vec![h, w], out).expect("same grid as input"),
        warped_mask,
    )
}
