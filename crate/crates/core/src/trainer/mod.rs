//! Encoder, end-to-end episode pass, training loop and Dice evaluation.
//!
//! Episodes within a batch may run on a thread pool; their gradients are
//! summed in episode order by a single aggregator, so results do not depend
//! on scheduling.

mod checkpoint;
mod conv;
mod pipeline;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use conv::{Conv2d, ConvCache, ConvGrads, Encoder, EncoderCache};
pub use pipeline::{forward_backward, forward_episode, predict_query, EpisodeOutput, Model};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::TrainConfig;
use crate::episodes::{episode_stream, sample_episode, Episode, EpisodeSource};
use crate::error::{BroError, Result};
use crate::losses::{dice, LossBreakdown};
use crate::tensor::Tensor;

/// SGD with heavy-ball momentum: `v ← μv + g`, `θ ← θ − lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(model: &Model) -> Self {
        Self {
            velocity: model.params().iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn step(&mut self, model: &mut Model, grads: &[Tensor], cfg: &TrainConfig) -> Result<()> {
        let trainable = if cfg.trains_offset() {
            grads.len()
        } else {
            grads.len() - 1
        };
        for ((p, v), g) in model.params_mut().into_iter().zip(&mut self.velocity).zip(grads).take(trainable) {
            *v = v.scale(cfg.momentum);
            v.add_scaled(g, 1.0)?;
            p.add_scaled(v, -cfg.lr)?;
        }
        Ok(())
    }
}

/// Mean losses over one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub seg: f64,
    pub reg: f64,
    pub adv: f64,
    pub total: f64,
}

impl EpochSummary {
    pub fn to_line(&self) -> String {
        format!(
            "epoch {} seg {} reg {} adv {} total {}",
            self.epoch, self.seg, self.reg, self.adv, self.total
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochSummary>,
}

fn pool(threads: usize) -> Result<Option<rayon::ThreadPool>> {
    if threads <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map(Some)
        .map_err(|e| BroError::config("threads", e.to_string()))
}

/// Runs `f` over `items` in order, on `pool` when given.
fn map_ordered<T: Sync, R: Send>(
    pool: Option<&rayon::ThreadPool>,
    items: &[T],
    f: impl Fn(&T) -> R + Sync + Send,
) -> Vec<R> {
    match pool {
        Some(p) => p.install(|| items.par_iter().map(&f).collect()),
        None => items.iter().map(f).collect(),
    }
}

fn check_finite(losses: &LossBreakdown, grads: &[Tensor], epoch: usize, seed: u64) -> Result<()> {
    let finite = [losses.seg, losses.reg, losses.adv, losses.total].iter().all(|v| v.is_finite())
        && grads.iter().all(Tensor::is_finite);
    if finite {
        Ok(())
    } else {
        Err(BroError::NonFinite(format!(
            "training diverged at epoch {epoch}, episode seed {seed}: seg {} reg {} adv {} total {}",
            losses.seg, losses.reg, losses.adv, losses.total
        )))
    }
}

/// Trains on the configured source.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(cfg, &cfg.train_source(), |_| {})
}

/// Trains on `source`, calling `on_epoch` after every epoch.
pub fn train_with(
    cfg: &TrainConfig,
    source: &EpisodeSource,
    mut on_epoch: impl FnMut(&EpochSummary),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let pool = pool(cfg.threads)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::new(cfg, rng.random());
    let mut opt = Sgd::new(&model);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let seeds: Vec<u64> = (0..cfg.episodes_per_epoch).map(|_| rng.random()).collect();
        let mut sum = [0.0; 4];
        for batch in seeds.chunks(cfg.batch_size) {
            let results = map_ordered(pool.as_ref(), batch, |&s| {
                let ep = sample_episode(source, s)?;
                forward_backward(&model, &ep, cfg)
            });
            let mut acc: Option<Vec<Tensor>> = None;
            for (result, &seed) in results.into_iter().zip(batch) {
                let (out, grads) = result?;
                let l = out.losses;
                check_finite(&l, &grads, epoch, seed)?;
                for (s, v) in sum.iter_mut().zip([l.seg, l.reg, l.adv, l.total]) {
                    *s += v;
                }
                match acc.as_mut() {
                    None => acc = Some(grads),
                    Some(a) => {
                        for (a, g) in a.iter_mut().zip(&grads) {
                            a.add_scaled(g, 1.0)?;
                        }
                    }
                }
            }
            let grads: Vec<Tensor> = acc
                .expect("batches are nonempty")
                .iter()
                .map(|g| g.scale(1.0 / batch.len() as f64))
                .collect();
            opt.step(&mut model, &grads, cfg)?;
        }
        let n = cfg.episodes_per_epoch.max(1) as f64;
        let summary = EpochSummary {
            epoch,
            seg: sum[0] / n,
            reg: sum[1] / n,
            adv: sum[2] / n,
            total: sum[3] / n,
        };
        on_epoch(&summary);
        log.push(summary);
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: cfg.clone(),
            model,
        },
        log,
    })
}

/// The fixed evaluation suite described by the config.
pub fn test_episodes(cfg: &TrainConfig) -> Result<Vec<Episode>> {
    episode_stream(&cfg.test_source(), cfg.test_seed, cfg.test_episodes)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_episode: Vec<f64>,
    pub mean: f64,
}

/// Dice of the query prediction, binarized at 0.5 and upsampled to image resolution.
pub fn episode_dice(model: &Model, cfg: &TrainConfig, ep: &Episode) -> Result<f64> {
    let pred = predict_query(model, ep, cfg)?.binarize();
    let (h, w) = ep.query_mask.dims();
    dice(&pred.resize_nearest(h, w), &ep.query_mask)
}

pub fn mean_dice(scores: &[f64]) -> f64 {
    scores.iter().sum::<f64>() / scores.len() as f64
}

pub fn evaluate(ckpt: &Checkpoint, episodes: &[Episode]) -> Result<EvalReport> {
    if episodes.is_empty() {
        return Err(BroError::Sampling("no episodes".into()));
    }
    let cfg = &ckpt.config;
    let pool = pool(cfg.threads)?;
    let per_episode = map_ordered(pool.as_ref(), episodes, |ep| episode_dice(&ckpt.model, cfg, ep))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        mean: mean_dice(&per_episode),
        per_episode,
    })
}
