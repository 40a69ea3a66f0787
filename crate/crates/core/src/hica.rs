//! Channel-group adversarial attention.
//!
//! The calibrated support map is cut into groups of `N` neighbouring channels,
//! each group flattened into one row of `G`. The group Gram matrix `B_c = G·Gᵀ`
//! is shifted by the trainable Mean-Offset `α·B_Δ` and turned into the
//! row-stochastic `B_f`, which mixes the groups: `F̃ = B_f · G`.
//! `L_adv = ‖B_f − E‖²` pulls `B_f` back toward the identity.

use std::fmt;
use std::str::FromStr;

use crate::error::{BroError, Result};
use crate::tensor::{
    frobenius_norm, matmul, matmul_nt, matmul_tn, softmax_rows, softmax_rows_backward, transpose,
    Tensor,
};

/// Floor on `‖B_Δ‖` inside the temperature.
pub const SCALE_EPS: f64 = 1e-8;

/// Where the `‖G‖²·‖B_Δ‖` normalizer is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NormPlacement {
    /// Divides the softmax argument (a temperature); `B_f` stays row-stochastic.
    #[default]
    Inside,
    /// Divides the softmax output, the literal reading of the formula.
    Outside,
}

impl fmt::Display for NormPlacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormPlacement::Inside => "inside",
            NormPlacement::Outside => "outside",
        })
    }
}

impl FromStr for NormPlacement {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "inside" => Ok(NormPlacement::Inside),
            "outside" => Ok(NormPlacement::Outside),
            other => Err(format!("expected `inside` or `outside`, got `{other}`")),
        }
    }
}

/// `(D/N) × (H·W·N)` matrix whose row `i` concatenates channels `iN .. iN+N-1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelGroups {
    pub g: Tensor,
    pub group_size: usize,
    pub source_shape: (usize, usize, usize),
}

impl ChannelGroups {
    pub fn num_groups(&self) -> usize {
        self.source_shape.0 / self.group_size
    }

    /// Folds a group-shaped matrix back into a D×H×W map.
    pub fn to_feature_map(&self, m: &Tensor) -> Result<Tensor> {
        let (d, h, w) = self.source_shape;
        if m.shape() != self.g.shape() {
            return Err(BroError::Dimension {
                op: "ChannelGroups::to_feature_map",
                left: m.shape().to_vec(),
                right: self.g.shape().to_vec(),
            });
        }
        m.reshape(&[d, h, w])
    }
}

/// Trainable similarity offset `B_Δ` with its adjustment strength `α`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanOffset {
    pub b_delta: Tensor,
    pub alpha: f64,
}

impl MeanOffset {
    pub fn zeros(groups: usize, alpha: f64) -> Self {
        Self {
            b_delta: Tensor::zeros(&[groups, groups]),
            alpha,
        }
    }

    /// `E / √m`: unit Frobenius norm, so the initial temperature is `‖G‖²`.
    pub fn unit_identity(groups: usize, alpha: f64) -> Self {
        Self {
            b_delta: Tensor::identity(groups).scale(1.0 / (groups as f64).sqrt()),
            alpha,
        }
    }

    pub fn dim(&self) -> usize {
        self.b_delta.shape()[0]
    }
}

#[derive(Clone, Debug)]
pub struct FineSimilarity {
    pub b_f: Tensor,
    pub b_c: Tensor,
}

pub fn channel_groups(f: &Tensor, n: usize) -> Result<ChannelGroups> {
    let (d, h, w) = f.dims3()?;
    if n == 0 || d % n != 0 {
        return Err(BroError::config(
            "group_size",
            format!("group size {n} does not divide channel count D={d}"),
        ));
    }
    // channel rows are contiguous in row-major D×H×W, so grouping is a reshape
    Ok(ChannelGroups {
        g: f.reshape(&[d / n, n * h * w])?,
        group_size: n,
        source_shape: (d, h, w),
    })
}

/// Gram matrix of the group rows.
pub fn coarse_similarity(g: &ChannelGroups) -> Tensor {
    matmul_nt(&g.g, &g.g).expect("a matrix times its own transpose is always well-formed")
}

/// Everything [`fine_similarity_backward`] needs.
#[derive(Clone, Debug)]
pub struct FineCache {
    logits: Tensor,
    softmax: Tensor,
    b_delta: Tensor,
    alpha: f64,
    g_norm: f64,
    offset_norm: f64,
    scale: f64,
    placement: NormPlacement,
}

impl FineCache {
    pub fn scale(&self) -> f64 {
        self.scale
    }
}

pub fn fine_similarity(
    b_c: &Tensor,
    offset: &MeanOffset,
    g_norm: f64,
    placement: NormPlacement,
) -> Result<FineSimilarity> {
    fine_similarity_with_cache(b_c, offset, g_norm, placement).map(|(f, _)| f)
}

pub fn fine_similarity_with_cache(
    b_c: &Tensor,
    offset: &MeanOffset,
    g_norm: f64,
    placement: NormPlacement,
) -> Result<(FineSimilarity, FineCache)> {
    let (r, c) = b_c.dims2()?;
    if r != c || offset.b_delta.shape() != b_c.shape() {
        return Err(BroError::Dimension {
            op: "fine_similarity",
            left: b_c.shape().to_vec(),
            right: offset.b_delta.shape().to_vec(),
        });
    }
    if !(g_norm > 0.0) {
        return Err(BroError::degenerate(
            "fine_similarity",
            format!("group matrix norm must be positive, got {g_norm}"),
        ));
    }
    let offset_norm = frobenius_norm(&offset.b_delta);
    let scale = g_norm * g_norm * offset_norm.max(SCALE_EPS);
    let mut logits = b_c.clone();
    logits.add_scaled(&offset.b_delta, offset.alpha)?;
    let (b_f, softmax) = match placement {
        NormPlacement::Inside => {
            let y = softmax_rows(&logits.scale(1.0 / scale))?;
            (y.clone(), y)
        }
        NormPlacement::Outside => {
            let y = softmax_rows(&logits)?;
            (y.scale(1.0 / scale), y)
        }
    };
    Ok((
        FineSimilarity {
            b_f,
            b_c: b_c.clone(),
        },
        FineCache {
            logits,
            softmax,
            b_delta: offset.b_delta.clone(),
            alpha: offset.alpha,
            g_norm,
            offset_norm,
            scale,
            placement,
        },
    ))
}

/// Gradients of [`fine_similarity`] with respect to `(B_c, B_Δ, ‖G‖)`.
pub fn fine_similarity_backward(cache: &FineCache, grad_b_f: &Tensor) -> Result<(Tensor, Tensor, f64)> {
    let s = cache.scale;
    let (grad_logits, grad_scale) = match cache.placement {
        NormPlacement::Inside => {
            let g_z = softmax_rows_backward(&cache.softmax, grad_b_f)?;
            let g_s = -g_z.dot(&cache.logits)? / (s * s);
            (g_z.scale(1.0 / s), g_s)
        }
        NormPlacement::Outside => {
            let g_s = -grad_b_f.dot(&cache.softmax)? / (s * s);
            let g_x = softmax_rows_backward(&cache.softmax, &grad_b_f.scale(1.0 / s))?;
            (g_x, g_s)
        }
    };
    let gn2 = cache.g_norm * cache.g_norm;
    let mut grad_b_delta = grad_logits.scale(cache.alpha);
    if cache.offset_norm > SCALE_EPS {
        grad_b_delta.add_scaled(&cache.b_delta, grad_scale * gn2 / cache.offset_norm)?;
    }
    let grad_g_norm = grad_scale * 2.0 * cache.g_norm * cache.offset_norm.max(SCALE_EPS);
    Ok((grad_logits, grad_b_delta, grad_g_norm))
}

/// `B_f · G`, folded back to a D×H×W map.
pub fn fuse(b_f: &FineSimilarity, g: &ChannelGroups) -> Result<Tensor> {
    g.to_feature_map(&matmul(&b_f.b_f, &g.g)?)
}

/// `Σᵢ (B_f[i,i] − 1)² + Σ_{i≠k} B_f[i,k]²`.
pub fn adversarial_loss(b_f: &Tensor) -> f64 {
    let n = b_f.shape()[0];
    b_f.data()
        .iter()
        .enumerate()
        .map(|(idx, &v)| {
            let target = if idx / n == idx % n { 1.0 } else { 0.0 };
            (v - target) * (v - target)
        })
        .sum()
}

pub fn adversarial_loss_grad(b_f: &Tensor) -> Tensor {
    let n = b_f.shape()[0];
    let mut g = b_f.scale(2.0);
    for i in 0..n {
        g.data_mut()[i * n + i] -= 2.0;
    }
    g
}

/// Output of a full attention pass over one feature map.
#[derive(Clone, Debug)]
pub struct HicaOutput {
    pub fused: Tensor,
    pub similarity: FineSimilarity,
}

#[derive(Clone, Debug)]
pub struct HicaCache {
    groups: ChannelGroups,
    b_f: Tensor,
    fine: FineCache,
}

impl HicaCache {
    pub fn b_f(&self) -> &Tensor {
        &self.b_f
    }

    /// Backpropagates `grad_fused` (and any extra gradient landing on `B_f`,
    /// e.g. from `L_adv`) to the input map and to `B_Δ`.
    pub fn backward(&self, grad_fused: &Tensor, grad_b_f_extra: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let g = &self.groups.g;
        let grad_fused_m = grad_fused.reshape(g.shape())?;
        let mut grad_b_f = matmul_nt(&grad_fused_m, g)?;
        if let Some(extra) = grad_b_f_extra {
            grad_b_f.add_scaled(extra, 1.0)?;
        }
        let mut grad_g = matmul_tn(&self.b_f, &grad_fused_m)?;

        let (grad_b_c, grad_b_delta, grad_g_norm) = fine_similarity_backward(&self.fine, &grad_b_f)?;
        let sym = grad_b_c.add(&transpose(&grad_b_c)?)?;
        grad_g.add_scaled(&matmul(&sym, g)?, 1.0)?;
        grad_g.add_scaled(g, grad_g_norm / self.fine.g_norm)?;
        Ok((self.groups.to_feature_map(&grad_g)?, grad_b_delta))
    }
}

pub fn hica_forward(
    f_hat: &Tensor,
    group_size: usize,
    offset: &MeanOffset,
    placement: NormPlacement,
) -> Result<(HicaOutput, HicaCache)> {
    let groups = channel_groups(f_hat, group_size)?;
    if offset.dim() != groups.num_groups() {
        return Err(BroError::Dimension {
            op: "hica_forward",
            left: vec![groups.num_groups(), groups.num_groups()],
            right: offset.b_delta.shape().to_vec(),
        });
    }
    let b_c = coarse_similarity(&groups);
    let g_norm = frobenius_norm(&groups.g);
    let (similarity, fine) = fine_similarity_with_cache(&b_c, offset, g_norm, placement)?;
    let fused = fuse(&similarity, &groups)?;
    let b_f = similarity.b_f.clone();
    Ok((
        HicaOutput { fused, similarity },
        HicaCache { groups, b_f, fine },
    ))
}
