//! Prototype generation and cosine-similarity prediction.

use std::fmt;
use std::str::FromStr;

use crate::error::{BroError, Result};
use crate::mask::BinaryMask;
use crate::tensor::Tensor;

/// Default cosine sharpening multiplier.
pub const DEFAULT_KAPPA: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrototypeKind {
    Foreground,
    Background,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrototypeOrigin {
    GlobalMap,
    GridLocal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prototype {
    pub vector: Vec<f64>,
    pub kind: PrototypeKind,
    pub origin: PrototypeOrigin,
}

impl Prototype {
    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Per-pixel two-class probabilities over an H×W grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionMap {
    pub prob_fg: Tensor,
    pub prob_bg: Tensor,
}

impl PredictionMap {
    pub fn dims(&self) -> (usize, usize) {
        (self.prob_fg.shape()[0], self.prob_fg.shape()[1])
    }

    /// Foreground wherever `prob_fg > 0.5`.
    pub fn binarize(&self) -> BinaryMask {
        let (h, w) = self.dims();
        BinaryMask::new(h, w, self.prob_fg.data().iter().map(|&p| p > 0.5).collect())
            .expect("prediction map is H×W")
    }
}

/// How per-pixel foreground scores from several prototypes are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FgReduction {
    #[default]
    Max,
    SoftmaxWeighted,
}

impl fmt::Display for FgReduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FgReduction::Max => "max",
            FgReduction::SoftmaxWeighted => "softmax",
        })
    }
}

impl FromStr for FgReduction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "max" => Ok(FgReduction::Max),
            "softmax" => Ok(FgReduction::SoftmaxWeighted),
            other => Err(format!("expected `max` or `softmax`, got `{other}`")),
        }
    }
}

fn check_mask(f: &Tensor, m: &BinaryMask) -> Result<(usize, usize, usize)> {
    let (d, h, w) = f.dims3()?;
    if m.dims() != (h, w) {
        return Err(BroError::Dimension {
            op: "masked pooling",
            left: f.shape().to_vec(),
            right: vec![m.height(), m.width()],
        });
    }
    Ok((d, h, w))
}

/// Mean feature vector over a set of flat pixel indices.
pub fn pool_region(f: &Tensor, pixels: &[usize]) -> Result<Vec<f64>> {
    let (d, h, w) = f.dims3()?;
    if pixels.is_empty() {
        return Err(BroError::EmptyRegion("masked pooling over zero pixels".into()));
    }
    let p = h * w;
    let inv = 1.0 / pixels.len() as f64;
    Ok((0..d)
        .map(|c| {
            let plane = &f.data()[c * p..(c + 1) * p];
            pixels.iter().map(|&i| plane[i]).sum::<f64>() * inv
        })
        .collect())
}

/// Scatters the gradient of a pooled vector back onto the map gradient.
pub fn pool_region_backward(pixels: &[usize], grad: &[f64], grad_map: &mut Tensor) {
    let p = grad_map.shape()[1] * grad_map.shape()[2];
    let inv = 1.0 / pixels.len() as f64;
    let data = grad_map.data_mut();
    for (c, g) in grad.iter().enumerate() {
        let plane = &mut data[c * p..(c + 1) * p];
        for &i in pixels {
            plane[i] += g * inv;
        }
    }
}

pub fn masked_avg_pool(f: &Tensor, m: &BinaryMask, kind: PrototypeKind) -> Result<Prototype> {
    check_mask(f, m)?;
    let pixels = m.active();
    if pixels.is_empty() {
        return Err(BroError::EmptyRegion("mask has no active pixel".into()));
    }
    Ok(Prototype {
        vector: pool_region(f, &pixels)?,
        kind,
        origin: PrototypeOrigin::GlobalMap,
    })
}

/// Active pixels of each `cell × cell` grid tile, skipping empty tiles.
pub fn grid_regions(m: &BinaryMask, cell: usize) -> Vec<Vec<usize>> {
    let (h, w) = m.dims();
    let cell = cell.max(1);
    let mut regions = Vec::new();
    for y0 in (0..h).step_by(cell) {
        for x0 in (0..w).step_by(cell) {
            let pixels: Vec<usize> = (y0..(y0 + cell).min(h))
                .flat_map(|y| (x0..(x0 + cell).min(w)).map(move |x| (y, x)))
                .filter(|&(y, x)| m.get(y, x))
                .map(|(y, x)| y * w + x)
                .collect();
            if !pixels.is_empty() {
                regions.push(pixels);
            }
        }
    }
    if regions.is_empty() && !m.is_empty() {
        regions.push(m.active());
    }
    regions
}

/// Masked average pooling per grid cell; a single cell covering the map
/// reproduces [`masked_avg_pool`].
pub fn grid_local_prototypes(
    f: &Tensor,
    m: &BinaryMask,
    cell: usize,
    kind: PrototypeKind,
) -> Result<Vec<Prototype>> {
    check_mask(f, m)?;
    let (_, h, w) = f.dims3()?;
    let origin = if cell >= h.max(w) {
        PrototypeOrigin::GlobalMap
    } else {
        PrototypeOrigin::GridLocal
    };
    grid_regions(m, cell)
        .iter()
        .map(|pixels| {
            Ok(Prototype {
                vector: pool_region(f, pixels)?,
                kind,
                origin,
            })
        })
        .collect()
}

/// Per-pixel `κ · cos(F_q(:, y, x), p)`; zero-norm pixels score 0.
pub fn cosine_map(f_q: &Tensor, p: &Prototype, kappa: f64) -> Result<Tensor> {
    let (d, h, w) = f_q.dims3()?;
    check_prototype(d, p)?;
    let pn = p.norm();
    let plane = h * w;
    let data = f_q.data();
    let out = (0..plane)
        .map(|i| {
            let (mut dot, mut nn) = (0.0, 0.0);
            for c in 0..d {
                let v = data[c * plane + i];
                dot += v * p.vector[c];
                nn += v * v;
            }
            if nn == 0.0 {
                0.0
            } else {
                kappa * dot / (nn.sqrt() * pn)
            }
        })
        .collect();
    Ok(Tensor::from_parts(vec![h, w], out))
}

fn check_prototype(d: usize, p: &Prototype) -> Result<()> {
    if p.vector.len() != d {
        return Err(BroError::Dimension {
            op: "cosine_map",
            left: vec![d],
            right: vec![p.vector.len()],
        });
    }
    if p.norm() == 0.0 {
        return Err(BroError::degenerate("cosine_map", "zero-norm prototype"));
    }
    Ok(())
}

/// Gradients of [`cosine_map`] with respect to the feature map and the prototype.
pub fn cosine_map_backward(
    f_q: &Tensor,
    p: &Prototype,
    kappa: f64,
    grad_map: &Tensor,
) -> Result<(Tensor, Vec<f64>)> {
    let (d, h, w) = f_q.dims3()?;
    check_prototype(d, p)?;
    let pn = p.norm();
    let plane = h * w;
    let data = f_q.data();
    let mut g_f = vec![0.0; d * plane];
    let mut g_p = vec![0.0; d];
    for i in 0..plane {
        let g = grad_map.data()[i];
        if g == 0.0 {
            continue;
        }
        let (mut dot, mut nn) = (0.0, 0.0);
        for c in 0..d {
            let v = data[c * plane + i];
            dot += v * p.vector[c];
            nn += v * v;
        }
        if nn == 0.0 {
            continue;
        }
        let xn = nn.sqrt();
        let cos = dot / (xn * pn);
        let k = g * kappa;
        for c in 0..d {
            let v = data[c * plane + i];
            g_f[c * plane + i] += k * (p.vector[c] / (xn * pn) - cos * v / nn);
            g_p[c] += k * (v / (xn * pn) - cos * p.vector[c] / (pn * pn));
        }
    }
    Ok((Tensor::from_parts(vec![d, h, w], g_f), g_p))
}

/// Per-pixel reduction state kept for the backward pass.
#[derive(Clone, Debug)]
pub struct PredictCache {
    /// d(fg score)/d(fg map k) per pixel, flattened `[k][pixel]`.
    fg_weights: Vec<Vec<f64>>,
    prob_fg: Vec<f64>,
}

pub fn predict(fg_maps: &[Tensor], bg_map: &Tensor) -> Result<PredictionMap> {
    predict_with_cache(fg_maps, bg_map, FgReduction::Max).map(|(p, _)| p)
}

/// Foreground score reduced across `fg_maps`, then a two-way softmax against `bg_map`.
pub fn predict_with_cache(
    fg_maps: &[Tensor],
    bg_map: &Tensor,
    reduction: FgReduction,
) -> Result<(PredictionMap, PredictCache)> {
    let (h, w) = bg_map.dims2()?;
    if fg_maps.is_empty() {
        return Err(BroError::EmptyRegion("predict needs at least one foreground map".into()));
    }
    for m in fg_maps {
        if m.shape() != bg_map.shape() {
            return Err(BroError::Dimension {
                op: "predict",
                left: m.shape().to_vec(),
                right: bg_map.shape().to_vec(),
            });
        }
    }
    let n = h * w;
    let k = fg_maps.len();
    let mut fg_weights = vec![vec![0.0; n]; k];
    let mut prob_fg = vec![0.0; n];
    for i in 0..n {
        let scores: Vec<f64> = fg_maps.iter().map(|m| m.data()[i]).collect();
        let fg = match reduction {
            FgReduction::Max => {
                let (best, &s) = scores
                    .iter()
                    .enumerate()
                    .fold((0, &f64::NEG_INFINITY), |acc, (j, s)| if *s > *acc.1 { (j, s) } else { acc });
                fg_weights[best][i] = 1.0;
                s
            }
            FgReduction::SoftmaxWeighted => {
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = e.iter().sum();
                let fg: f64 = scores.iter().zip(&e).map(|(s, ev)| s * ev / z).sum();
                for (j, (s, ev)) in scores.iter().zip(&e).enumerate() {
                    let wj = ev / z;
                    fg_weights[j][i] = wj * (1.0 + s - fg);
                }
                fg
            }
        };
        prob_fg[i] = sigmoid(fg - bg_map.data()[i]);
    }
    let prob_bg = prob_fg.iter().map(|p| 1.0 - p).collect();
    Ok((
        PredictionMap {
            prob_fg: Tensor::from_parts(vec![h, w], prob_fg.clone()),
            prob_bg: Tensor::from_parts(vec![h, w], prob_bg),
        },
        PredictCache { fg_weights, prob_fg },
    ))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl PredictCache {
    /// Gradients on each foreground map and on the background map.
    pub fn backward(&self, grad_fg: &Tensor, grad_bg: &Tensor) -> (Vec<Tensor>, Tensor) {
        let shape = grad_fg.shape().to_vec();
        let n = self.prob_fg.len();
        let mut g_bg = vec![0.0; n];
        let mut g_fgs = vec![vec![0.0; n]; self.fg_weights.len()];
        for i in 0..n {
            let p = self.prob_fg[i];
            let g_logit = (grad_fg.data()[i] - grad_bg.data()[i]) * p * (1.0 - p);
            g_bg[i] = -g_logit;
            for (g, wts) in g_fgs.iter_mut().zip(&self.fg_weights) {
                g[i] = g_logit * wts[i];
            }
        }
        (
            g_fgs
                .into_iter()
                .map(|g| Tensor::from_parts(shape.clone(), g))
                .collect(),
            Tensor::from_parts(shape, g_bg),
        )
    }
}
