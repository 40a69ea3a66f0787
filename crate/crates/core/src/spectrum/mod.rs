//! Frequency-spectrum entropy of grayscale images.
//!
//! Each image's 2-D DFT magnitude is normalized into a distribution over
//! frequency bins and summarized by its Shannon entropy; a group of images is
//! then summarized by a normal fit of those entropies.

pub mod fft;

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::episodes::{phantom_generate, PhantomSpec};
use crate::error::{BroError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LogBase {
    #[default]
    Natural,
    Two,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BinWeight {
    /// `|X|`
    #[default]
    Magnitude,
    /// `|X|²`
    Power,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EntropyOptions {
    pub base: LogBase,
    pub include_dc: bool,
    pub weight: BinWeight,
}

impl Default for EntropyOptions {
    fn default() -> Self {
        Self {
            base: LogBase::Natural,
            include_dc: true,
            weight: BinWeight::Magnitude,
        }
    }
}

/// `|DFT(image)|` on the same H×W grid, DC at `[0, 0]`.
pub fn magnitude_spectrum(image: &Tensor) -> Result<Tensor> {
    let (h, w) = image.dims2()?;
    if h < 2 || w < 2 {
        return Err(BroError::Shape {
            shape: vec![h, w],
            reason: "magnitude spectrum needs H, W >= 2".into(),
        });
    }
    let spec = fft::fft2_real(image.data(), h, w);
    Tensor::new(vec![h, w], spec.iter().map(|c| c.norm()).collect())
}

pub fn spectral_entropy(spectrum: &Tensor) -> Result<f64> {
    spectral_entropy_with(spectrum, &EntropyOptions::default())
}

/// Entropy of the spectrum treated as a distribution over bins; zero bins add 0.
pub fn spectral_entropy_with(spectrum: &Tensor, opts: &EntropyOptions) -> Result<f64> {
    if spectrum.data().iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(BroError::degenerate("spectral_entropy", "bins must be finite and non-negative"));
    }
    let skip = usize::from(!opts.include_dc);
    let weights: Vec<f64> = spectrum.data()[skip..]
        .iter()
        .map(|&v| match opts.weight {
            BinWeight::Magnitude => v,
            BinWeight::Power => v * v,
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(BroError::degenerate("spectral_entropy", "spectrum is identically zero"));
    }
    let nats: f64 = weights
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| {
            let p = v / total;
            -p * p.ln()
        })
        .sum();
    Ok(match opts.base {
        LogBase::Natural => nats,
        LogBase::Two => nats / std::f64::consts::LN_2,
    })
}

pub fn image_entropy(image: &Tensor, opts: &EntropyOptions) -> Result<f64> {
    spectral_entropy_with(&magnitude_spectrum(image)?, opts)
}

/// Normal distribution fitted by the sample mean and the `n − 1` standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalFit {
    pub mean: f64,
    pub std: f64,
}

impl NormalFit {
    pub fn pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.std;
        (-0.5 * z * z).exp() / (self.std * (2.0 * PI).sqrt())
    }

    /// `points` evenly spaced `(x, pdf(x))` pairs over `mean ± 4·std`.
    pub fn curve(&self, points: usize) -> Vec<(f64, f64)> {
        let (lo, hi) = (self.mean - 4.0 * self.std, self.mean + 4.0 * self.std);
        let points = points.max(2);
        (0..points)
            .map(|i| {
                let x = lo + (hi - lo) * i as f64 / (points - 1) as f64;
                (x, self.pdf(x))
            })
            .collect()
    }
}

pub fn fit_normal(values: &[f64]) -> Result<NormalFit> {
    let n = values.len();
    if n < 2 {
        return Err(BroError::degenerate("fit_normal", format!("need at least 2 values, got {n}")));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) {
        return Err(BroError::degenerate("fit_normal", "zero variance"));
    }
    Ok(NormalFit {
        mean,
        std: var.sqrt(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumReport {
    pub per_image_entropy: Vec<f64>,
    pub fitted_mean: f64,
    pub fitted_std: f64,
    pub group_label: String,
}

impl SpectrumReport {
    pub fn build(label: &str, images: &[Tensor], opts: &EntropyOptions) -> Result<Self> {
        let per_image_entropy = images
            .iter()
            .map(|img| image_entropy(img, opts))
            .collect::<Result<Vec<_>>>()?;
        let fit = fit_normal(&per_image_entropy)?;
        Ok(Self {
            per_image_entropy,
            fitted_mean: fit.mean,
            fitted_std: fit.std,
            group_label: label.to_string(),
        })
    }

    pub fn fit(&self) -> NormalFit {
        NormalFit {
            mean: self.fitted_mean,
            std: self.fitted_std,
        }
    }

    /// `image <name> entropy <v>` per image, then `fit mean <m> std <s>`.
    pub fn to_text(&self, names: &[String]) -> String {
        let mut out = String::new();
        for (name, e) in names.iter().zip(&self.per_image_entropy) {
            let _ = writeln!(out, "image {name} entropy {e}");
        }
        let _ = writeln!(out, "fit mean {} std {}", self.fitted_mean, self.fitted_std);
        out
    }

    /// Gnuplot-friendly `x pdf` columns of the fitted curve.
    pub fn pdf_data(&self, points: usize) -> String {
        let mut out = format!("# {} normal fit mean {} std {}\n", self.group_label, self.fitted_mean, self.fitted_std);
        for (x, p) in self.fit().curve(points) {
            let _ = writeln!(out, "{x} {p}");
        }
        out
    }
}

/// Which group has the higher fitted entropy mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupOrder {
    AHigher,
    BHigher,
    Equal,
}

impl GroupOrder {
    pub fn verdict(&self) -> &'static str {
        match self {
            GroupOrder::AHigher => "A higher",
            GroupOrder::BHigher => "B higher",
            GroupOrder::Equal => "equal",
        }
    }
}

/// Means closer than this are reported as equal.
pub const EQUAL_MEANS_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct GroupComparison {
    pub a: SpectrumReport,
    pub b: SpectrumReport,
    pub order: GroupOrder,
}

pub fn compare_groups(group_a: &[Tensor], group_b: &[Tensor], opts: &EntropyOptions) -> Result<GroupComparison> {
    let a = SpectrumReport::build("A", group_a, opts)?;
    let b = SpectrumReport::build("B", group_b, opts)?;
    let order = if (a.fitted_mean - b.fitted_mean).abs() <= EQUAL_MEANS_TOL {
        GroupOrder::Equal
    } else {
        match a.fitted_mean.partial_cmp(&b.fitted_mean) {
            Some(Ordering::Greater) => GroupOrder::AHigher,
            _ => GroupOrder::BHigher,
        }
    };
    Ok(GroupComparison { a, b, order })
}

/// Broadband "natural-like" texture: white noise over a few hard-edged rectangles.
pub fn broadband_image(seed: u64, h: usize, w: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img: Vec<f64> = (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect();
    for _ in 0..rng.random_range(3..8) {
        let (y0, x0) = (rng.random_range(0..h), rng.random_range(0..w));
        let (y1, x1) = ((y0 + rng.random_range(2..=h / 2)).min(h), (x0 + rng.random_range(2..=w / 2)).min(w));
        let level = rng.random_range(-0.4..0.4);
        for y in y0..y1 {
            for x in x0..x1 {
                img[y * w + x] += level;
            }
        }
    }
    img.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Tensor::new(vec![h, w], img).expect("h×w buffer")
}

/// Low-pass "medical-like" image: a noise-free phantom under a 5×5 box blur.
pub fn lowpass_image(seed: u64, h: usize, w: usize) -> Result<Tensor> {
    let spec = PhantomSpec {
        noise_std: 0.0,
        ..PhantomSpec::default()
    };
    let p = phantom_generate(seed, &spec, h, w)?;
    let src = p.image.data();
    let r = 2isize;
    let blurred = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            let mut acc = 0.0;
            let mut n = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (yy, xx) = (y + dy, x + dx);
                    if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                        acc += src[yy as usize * w + xx as usize];
                        n += 1.0;
                    }
                }
            }
            acc / n
        })
        .collect();
    Tensor::new(vec![h, w], blurred)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DemoCorpus {
    Broadband,
    Lowpass,
}

pub fn demo_corpus(kind: DemoCorpus, count: usize, seed: u64, h: usize, w: usize) -> Result<Vec<Tensor>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let s = rng.random();
            match kind {
                DemoCorpus::Broadband => Ok(broadband_image(s, h, w)),
                DemoCorpus::Lowpass => lowpass_image(s, h, w),
            }
        })
        .collect()
}
