//! One episode through the whole model, with gradients.
//!
//! The query branch builds prototypes from the support features and scores the
//! query; the support branch swaps roles, taking prototypes from the query
//! features under the (binarized, detached) query prediction and scoring the
//! support image.

use crate::config::TrainConfig;
use crate::episodes::Episode;
use crate::error::{BroError, Result};
use crate::feac::{calibrate_with_cache, FeacCache};
use crate::hica::{adversarial_loss, adversarial_loss_grad, hica_forward, HicaCache, MeanOffset};
use crate::losses::{reg_loss, seg_loss, seg_loss_backward, total_loss, LossBreakdown};
use crate::mask::BinaryMask;
use crate::prototypes::{
    cosine_map, cosine_map_backward, grid_regions, pool_region, pool_region_backward, predict_with_cache,
    PredictCache, PredictionMap, Prototype, PrototypeKind, PrototypeOrigin,
};
use crate::tensor::Tensor;

use super::conv::{Encoder, EncoderCache};

/// Encoder weights plus the similarity offset.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub encoder: Encoder,
    pub b_delta: Tensor,
}

impl Model {
    pub const PARAM_NAMES: [&'static str; 7] = [
        "conv1.weight",
        "conv1.bias",
        "conv2.weight",
        "conv2.bias",
        "conv3.weight",
        "conv3.bias",
        "b_delta",
    ];

    pub fn new(cfg: &TrainConfig, seed: u64) -> Self {
        Self {
            encoder: Encoder::new(cfg.channels, seed),
            b_delta: MeanOffset::unit_identity(cfg.num_groups(), cfg.alpha)
                .b_delta
                .scale(cfg.offset_init),
        }
    }

    /// Trainable tensors in [`Model::PARAM_NAMES`] order.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self
            .encoder
            .layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect();
        out.push(&self.b_delta);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self
            .encoder
            .layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect();
        out.push(&mut self.b_delta);
        out
    }

    pub fn offset(&self, cfg: &TrainConfig) -> MeanOffset {
        MeanOffset {
            b_delta: self.b_delta.clone(),
            alpha: cfg.effective_alpha(),
        }
    }

    /// Checks the tensors against the configured D and N.
    pub fn check_config(&self, cfg: &TrainConfig) -> Result<()> {
        let d = self.encoder.out_channels();
        if d != cfg.channels {
            return Err(BroError::config("channels", format!("model has D={d}, config says {}", cfg.channels)));
        }
        let m = cfg.num_groups();
        if self.b_delta.shape() != [m, m] {
            return Err(BroError::config(
                "group_size",
                format!(
                    "offset is {:?} but D={} with N={} needs {m}×{m}",
                    self.b_delta.shape(),
                    cfg.channels,
                    cfg.group_size
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeOutput {
    /// Query prediction at feature resolution.
    pub query: PredictionMap,
    /// Support prediction from query-derived prototypes.
    pub support: PredictionMap,
    pub losses: LossBreakdown,
    /// Query mask the support branch pooled under.
    pub swap_mask: BinaryMask,
}

struct Branch {
    feac: Option<FeacCache>,
    hica: Option<HicaCache>,
    fg_regions: Vec<Vec<usize>>,
    fg_protos: Vec<Prototype>,
    bg_pixels: Vec<usize>,
    bg_proto: Prototype,
    predict: PredictCache,
    pred: PredictionMap,
}

/// Prototypes from `f_ref` under `ref_mask`, scored on `f_target`.
fn branch_forward(
    f_ref: &Tensor,
    f_target: &Tensor,
    ref_mask: &BinaryMask,
    offset: &MeanOffset,
    cfg: &TrainConfig,
) -> Result<Branch> {
    let a = &cfg.ablation;
    let (f_hat, feac) = if a.no_feac {
        (f_ref.clone(), None)
    } else {
        let (c, cache) = calibrate_with_cache(f_ref, f_target)?;
        (c.values, Some(cache))
    };
    let (f_tilde, hica) = if a.no_hica {
        (f_hat.clone(), None)
    } else {
        let (out, cache) = hica_forward(&f_hat, cfg.group_size, offset, cfg.norm_placement)?;
        (out.fused, Some(cache))
    };

    let (_, h, w) = f_hat.dims3()?;
    let origin = if cfg.cell >= h.max(w) {
        PrototypeOrigin::GlobalMap
    } else {
        PrototypeOrigin::GridLocal
    };
    let fg_regions = grid_regions(ref_mask, cfg.cell);
    if fg_regions.is_empty() {
        return Err(BroError::EmptyRegion("foreground vanished at feature resolution".into()));
    }
    let fg_protos = fg_regions
        .iter()
        .map(|r| {
            Ok(Prototype {
                vector: pool_region(&f_hat, r)?,
                kind: PrototypeKind::Foreground,
                origin,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let bg_pixels = ref_mask.invert().active();
    let bg_proto = Prototype {
        vector: pool_region(&f_tilde, &bg_pixels)?,
        kind: PrototypeKind::Background,
        origin: PrototypeOrigin::GlobalMap,
    };

    let fg_maps = fg_protos
        .iter()
        .map(|p| cosine_map(f_target, p, cfg.kappa))
        .collect::<Result<Vec<_>>>()?;
    let bg_map = cosine_map(f_target, &bg_proto, cfg.kappa)?;
    let (pred, predict) = predict_with_cache(&fg_maps, &bg_map, cfg.fg_reduction)?;
    Ok(Branch {
        feac,
        hica,
        fg_regions,
        fg_protos,
        bg_pixels,
        bg_proto,
        predict,
        pred,
    })
}

impl Branch {
    /// Gradients on `(f_ref, f_target, B_Δ)` from gradients on the two probability maps.
    fn backward(
        &self,
        f_target: &Tensor,
        g_fg: &Tensor,
        g_bg: &Tensor,
        g_b_f: Option<&Tensor>,
        kappa: f64,
    ) -> Result<(Tensor, Tensor, Option<Tensor>)> {
        let (g_fg_maps, g_bg_map) = self.predict.backward(g_fg, g_bg);
        let shape = f_target.shape();
        let mut g_target = Tensor::zeros(shape);
        let mut g_hat = Tensor::zeros(shape);
        let mut g_tilde = Tensor::zeros(shape);
        for ((p, region), g) in self.fg_protos.iter().zip(&self.fg_regions).zip(&g_fg_maps) {
            let (g_f, g_p) = cosine_map_backward(f_target, p, kappa, g)?;
            g_target.add_scaled(&g_f, 1.0)?;
            pool_region_backward(region, &g_p, &mut g_hat);
        }
        let (g_f, g_p) = cosine_map_backward(f_target, &self.bg_proto, kappa, &g_bg_map)?;
        g_target.add_scaled(&g_f, 1.0)?;
        pool_region_backward(&self.bg_pixels, &g_p, &mut g_tilde);

        let g_b_delta = match &self.hica {
            Some(cache) => {
                let (g_in, g_bd) = cache.backward(&g_tilde, g_b_f)?;
                g_hat.add_scaled(&g_in, 1.0)?;
                Some(g_bd)
            }
            None => {
                g_hat.add_scaled(&g_tilde, 1.0)?;
                None
            }
        };
        let g_ref = match &self.feac {
            Some(cache) => {
                let (g_s, g_q) = cache.backward(&g_hat)?;
                g_target.add_scaled(&g_q, 1.0)?;
                g_s
            }
            None => g_hat,
        };
        Ok((g_ref, g_target, g_b_delta))
    }
}

/// Binarized query prediction, or the true query mask when the prediction
/// has no foreground or no background.
fn swap_mask(pred: &PredictionMap, truth: &BinaryMask) -> BinaryMask {
    let m = pred.binarize();
    if m.is_empty() || m.count() == m.as_slice().len() {
        truth.clone()
    } else {
        m
    }
}

struct Forward {
    out: EpisodeOutput,
    f_s: Tensor,
    f_q: Tensor,
    enc_s: EncoderCache,
    enc_q: EncoderCache,
    m_s: BinaryMask,
    m_q: BinaryMask,
    query: Branch,
    support: Branch,
}

fn run(model: &Model, ep: &Episode, cfg: &TrainConfig) -> Result<Forward> {
    let (f_s, enc_s) = model.encoder.forward(&ep.support_image)?;
    let (f_q, enc_q) = model.encoder.forward(&ep.query_image)?;
    let (_, h, w) = f_s.dims3()?;
    let m_s = ep.support_mask.resize_nearest(h, w);
    let m_q = ep.query_mask.resize_nearest(h, w);
    let offset = model.offset(cfg);

    let query = branch_forward(&f_s, &f_q, &m_s, &offset, cfg)?;
    let seg = seg_loss(&query.pred, &m_q)?;
    let adv = query.hica.as_ref().map_or(0.0, |c| adversarial_loss(c.b_f()));
    let swap = swap_mask(&query.pred, &m_q);
    let support = branch_forward(&f_q, &f_s, &swap, &offset, cfg)?;
    let reg = reg_loss(&support.pred, &m_s)?;
    let losses = total_loss(seg, reg, adv, cfg.effective_beta());
    Ok(Forward {
        out: EpisodeOutput {
            query: query.pred.clone(),
            support: support.pred.clone(),
            losses,
            swap_mask: swap,
        },
        f_s,
        f_q,
        enc_s,
        enc_q,
        m_s,
        m_q,
        query,
        support,
    })
}

pub fn forward_episode(model: &Model, ep: &Episode, cfg: &TrainConfig) -> Result<EpisodeOutput> {
    run(model, ep, cfg).map(|f| f.out)
}

/// Forward pass plus the gradient of the total loss for every tensor in
/// [`Model::params`] order.
pub fn forward_backward(model: &Model, ep: &Episode, cfg: &TrainConfig) -> Result<(EpisodeOutput, Vec<Tensor>)> {
    let fw = run(model, ep, cfg)?;
    let beta = cfg.effective_beta();

    let (g_fg, g_bg) = seg_loss_backward(&fw.query.pred, &fw.m_q)?;
    let adv_grad = match (&fw.query.hica, beta != 0.0) {
        (Some(cache), true) => Some(adversarial_loss_grad(cache.b_f()).scale(beta)),
        _ => None,
    };
    let (mut g_fs, mut g_fq, g_bd_q) = fw.query.backward(&fw.f_q, &g_fg, &g_bg, adv_grad.as_ref(), cfg.kappa)?;

    let (g_fg, g_bg) = seg_loss_backward(&fw.support.pred, &fw.m_s)?;
    let (g_q2, g_s2, g_bd_s) = fw.support.backward(&fw.f_s, &g_fg, &g_bg, None, cfg.kappa)?;
    g_fq.add_scaled(&g_q2, 1.0)?;
    g_fs.add_scaled(&g_s2, 1.0)?;

    let enc_s = model.encoder.backward(&fw.enc_s, &g_fs)?;
    let enc_q = model.encoder.backward(&fw.enc_q, &g_fq)?;
    let mut grads = Vec::with_capacity(Model::PARAM_NAMES.len());
    for (a, b) in enc_s.into_iter().zip(enc_q) {
        grads.push(a.weight.add(&b.weight)?);
        grads.push(a.bias.add(&b.bias)?);
    }
    let mut g_bd = Tensor::zeros(model.b_delta.shape());
    for g in [g_bd_q, g_bd_s].into_iter().flatten() {
        g_bd.add_scaled(&g, 1.0)?;
    }
    grads.push(g_bd);
    Ok((fw.out, grads))
}

/// Query prediction only, at feature resolution.
pub fn predict_query(model: &Model, ep: &Episode, cfg: &TrainConfig) -> Result<PredictionMap> {
    let (f_s, _) = model.encoder.forward(&ep.support_image)?;
    let (f_q, _) = model.encoder.forward(&ep.query_image)?;
    let (_, h, w) = f_s.dims3()?;
    let m_s = ep.support_mask.resize_nearest(h, w);
    Ok(branch_forward(&f_s, &f_q, &m_s, &model.offset(cfg), cfg)?.pred)
}
