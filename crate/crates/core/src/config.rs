//! Training configuration and its flat `key = value` text form.
//!
//! Unknown keys, repeated keys and unparsable values are errors naming the
//! key. `#` starts a comment.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::episodes::{EpisodeSource, PhantomSpec};
use crate::error::{BroError, Result};
use crate::hica::NormPlacement;
use crate::prototypes::{FgReduction, DEFAULT_KAPPA};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "BRO_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SourceKind {
    #[default]
    Supervised,
    Ssl,
}

impl std::fmt::Display for SourceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SourceKind::Supervised => "supervised",
            SourceKind::Ssl => "ssl",
        })
    }
}

impl FromStr for SourceKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "supervised" => Ok(SourceKind::Supervised),
            "ssl" => Ok(SourceKind::Ssl),
            other => Err(format!("expected `supervised` or `ssl`, got `{other}`")),
        }
    }
}

/// Mechanisms that can be switched off one at a time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Ablation {
    pub no_feac: bool,
    pub no_hica: bool,
    /// No offset in the attention logits, no adversarial term, offset frozen.
    pub no_ad: bool,
    /// No offset in the attention logits, offset frozen; the adversarial term stays.
    pub no_b_delta: bool,
    /// Adversarial term dropped from the objective; the offset still trains.
    pub no_adv_loss: bool,
}

impl Ablation {
    pub const ALL: Ablation = Ablation {
        no_feac: true,
        no_hica: true,
        no_ad: true,
        no_b_delta: true,
        no_adv_loss: true,
    };
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub group_size: usize,
    pub channels: usize,
    pub kappa: f64,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub threads: usize,
    pub ablation: Ablation,
    pub norm_placement: NormPlacement,
    pub fg_reduction: FgReduction,
    /// Grid cell of the local foreground prototypes, in feature pixels.
    pub cell: usize,
    /// Frobenius norm of the initial offset `c·E/√m`; sets the initial attention temperature.
    pub offset_init: f64,
    pub image_size: usize,
    pub source: SourceKind,
    pub ssl_segments: usize,
    pub train_classes: Vec<u32>,
    pub test_classes: Vec<u32>,
    pub test_episodes: usize,
    pub test_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            beta: 1.0,
            group_size: 4,
            channels: 32,
            kappa: DEFAULT_KAPPA,
            lr: 1e-3,
            momentum: 0.9,
            epochs: 30,
            episodes_per_epoch: 200,
            batch_size: 1,
            seed: 0,
            threads: 1,
            ablation: Ablation::default(),
            norm_placement: NormPlacement::Inside,
            fg_reduction: FgReduction::Max,
            cell: 4,
            offset_init: 0.01,
            image_size: 64,
            source: SourceKind::Supervised,
            ssl_segments: 16,
            train_classes: vec![1, 2, 3, 4, 5, 6],
            test_classes: vec![1, 2, 3, 4, 5, 6],
            test_episodes: 100,
            test_seed: 7919,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| BroError::config(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(BroError::config(key, format!("expected true/false, got `{value}`"))),
    }
}

fn parse_classes(key: &str, value: &str) -> Result<Vec<u32>> {
    value
        .split(',')
        .map(|s| parse::<u32>(key, s.trim()))
        .collect()
}

fn join(classes: &[u32]) -> String {
    classes.iter().map(u32::to_string).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                BroError::config(format!("line {}", n + 1), format!("expected `key = value`, got `{line}`"))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(BroError::config(key, "given more than once"));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BroError::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies `BRO_SEED` when set.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = parse(SEED_ENV, v.trim())?;
        }
        Ok(self)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "alpha" => self.alpha = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "group_size" => self.group_size = parse(key, value)?,
            "channels" => self.channels = parse(key, value)?,
            "kappa" => self.kappa = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "episodes_per_epoch" => self.episodes_per_epoch = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            "no_feac" => self.ablation.no_feac = parse_bool(key, value)?,
            "no_hica" => self.ablation.no_hica = parse_bool(key, value)?,
            "no_ad" => self.ablation.no_ad = parse_bool(key, value)?,
            "no_b_delta" => self.ablation.no_b_delta = parse_bool(key, value)?,
            "no_adv_loss" => self.ablation.no_adv_loss = parse_bool(key, value)?,
            "norm_placement" => self.norm_placement = parse(key, value)?,
            "fg_reduction" => self.fg_reduction = parse(key, value)?,
            "cell" => self.cell = parse(key, value)?,
            "offset_init" => self.offset_init = parse(key, value)?,
            "image_size" => self.image_size = parse(key, value)?,
            "source" => self.source = parse(key, value)?,
            "ssl_segments" => self.ssl_segments = parse(key, value)?,
            "train_classes" => self.train_classes = parse_classes(key, value)?,
            "test_classes" => self.test_classes = parse_classes(key, value)?,
            "test_episodes" => self.test_episodes = parse(key, value)?,
            "test_seed" => self.test_seed = parse(key, value)?,
            _ => return Err(BroError::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("kappa", self.kappa),
            ("lr", self.lr),
            ("momentum", self.momentum),
            ("offset_init", self.offset_init),
        ] {
            if !v.is_finite() {
                return Err(BroError::config(key, format!("must be finite, got {v}")));
            }
        }
        if self.lr < 0.0 {
            return Err(BroError::config("lr", "must not be negative"));
        }
        if self.beta < 0.0 {
            return Err(BroError::config("beta", "must not be negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(BroError::config("momentum", "must lie in [0, 1)"));
        }
        if self.offset_init <= 0.0 {
            return Err(BroError::config("offset_init", "must be positive"));
        }
        if self.kappa <= 0.0 {
            return Err(BroError::config("kappa", "must be positive"));
        }
        if self.channels == 0 {
            return Err(BroError::config("channels", "must be positive"));
        }
        if self.group_size == 0 || !self.channels.is_multiple_of(self.group_size) {
            return Err(BroError::config(
                "group_size",
                format!("group size {} does not divide channel count D={}", self.group_size, self.channels),
            ));
        }
        for (key, v) in [
            ("batch_size", self.batch_size),
            ("threads", self.threads),
            ("cell", self.cell),
            ("ssl_segments", self.ssl_segments),
        ] {
            if v == 0 {
                return Err(BroError::config(key, "must be positive"));
            }
        }
        if self.image_size < 32 || !self.image_size.is_multiple_of(4) {
            return Err(BroError::config("image_size", "must be a multiple of 4 and at least 32"));
        }
        for (key, classes) in [("train_classes", &self.train_classes), ("test_classes", &self.test_classes)] {
            let max = PhantomSpec::default().num_classes;
            if classes.is_empty() || classes.iter().any(|&c| c == 0 || c > max) {
                return Err(BroError::config(key, format!("need class ids in 1..={max}")));
            }
        }
        Ok(())
    }

    /// Canonical text form; `parse(to_text())` round-trips.
    pub fn to_text(&self) -> String {
        let a = &self.ablation;
        let entries: [(&str, String); 28] = [
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("group_size", self.group_size.to_string()),
            ("channels", self.channels.to_string()),
            ("kappa", self.kappa.to_string()),
            ("lr", self.lr.to_string()),
            ("momentum", self.momentum.to_string()),
            ("epochs", self.epochs.to_string()),
            ("episodes_per_epoch", self.episodes_per_epoch.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("threads", self.threads.to_string()),
            ("no_feac", a.no_feac.to_string()),
            ("no_hica", a.no_hica.to_string()),
            ("no_ad", a.no_ad.to_string()),
            ("no_b_delta", a.no_b_delta.to_string()),
            ("no_adv_loss", a.no_adv_loss.to_string()),
            ("norm_placement", self.norm_placement.to_string()),
            ("fg_reduction", self.fg_reduction.to_string()),
            ("cell", self.cell.to_string()),
            ("offset_init", self.offset_init.to_string()),
            ("image_size", self.image_size.to_string()),
            ("source", self.source.to_string()),
            ("ssl_segments", self.ssl_segments.to_string()),
            ("train_classes", join(&self.train_classes)),
            ("test_classes", join(&self.test_classes)),
            ("test_episodes", self.test_episodes.to_string()),
            ("test_seed", self.test_seed.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn num_groups(&self) -> usize {
        self.channels / self.group_size
    }

    /// α as seen by the attention logits.
    pub fn effective_alpha(&self) -> f64 {
        if self.ablation.no_ad || self.ablation.no_b_delta {
            0.0
        } else {
            self.alpha
        }
    }

    /// β as seen by the objective.
    pub fn effective_beta(&self) -> f64 {
        if self.ablation.no_ad || self.ablation.no_adv_loss || self.ablation.no_hica {
            0.0
        } else {
            self.beta
        }
    }

    /// Whether the optimizer updates the offset.
    pub fn trains_offset(&self) -> bool {
        let a = &self.ablation;
        !(a.no_hica || a.no_ad || a.no_b_delta)
    }

    pub fn train_source(&self) -> EpisodeSource {
        self.source_for(&self.train_classes)
    }

    /// Evaluation episodes are always supervised, on the test classes.
    pub fn test_source(&self) -> EpisodeSource {
        EpisodeSource::SupervisedPhantom {
            spec: PhantomSpec::default(),
            size: (self.image_size, self.image_size),
            classes: self.test_classes.clone(),
        }
    }

    fn source_for(&self, classes: &[u32]) -> EpisodeSource {
        let size = (self.image_size, self.image_size);
        match self.source {
            SourceKind::Supervised => EpisodeSource::SupervisedPhantom {
                spec: PhantomSpec::default(),
                size,
                classes: classes.to_vec(),
            },
            SourceKind::Ssl => EpisodeSource::SslSuperpixel {
                spec: PhantomSpec::default(),
                size,
                segments: self.ssl_segments,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.alpha = 0.3;
        cfg.ablation.no_hica = true;
        cfg.norm_placement = NormPlacement::Outside;
        cfg.test_classes = vec![5, 6];
        assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(TrainConfig::parse("").unwrap(), TrainConfig::default());
    }

    #[test]
    fn comments_and_whitespace() {
        let cfg = TrainConfig::parse("# header\n  beta=1.5   # trailing\n\nseed = 9\n").unwrap();
        assert_eq!(cfg.beta, 1.5);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn errors_name_the_key() {
        for (text, key) in [
            ("alhpa = 0.2", "alhpa"),
            ("beta = lots", "beta"),
            ("group_size = 5", "group_size"),
            ("lr = -1", "lr"),
            ("seed = 1\nseed = 2", "seed"),
            ("no_hica = maybe", "no_hica"),
            ("image_size = 30", "image_size"),
            ("alpha = inf", "alpha"),
        ] {
            match TrainConfig::parse(text) {
                Err(BroError::Config { key: k, .. }) => assert_eq!(k, key, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn flag_semantics() {
        let mut cfg = TrainConfig::default();
        assert_eq!((cfg.effective_alpha(), cfg.effective_beta(), cfg.trains_offset()), (0.2, 1.0, true));
        cfg.ablation = Ablation { no_ad: true, ..Ablation::default() };
        assert_eq!((cfg.effective_alpha(), cfg.effective_beta(), cfg.trains_offset()), (0.0, 0.0, false));
        cfg.ablation = Ablation { no_b_delta: true, ..Ablation::default() };
        assert_eq!((cfg.effective_alpha(), cfg.effective_beta(), cfg.trains_offset()), (0.0, 1.0, false));
        cfg.ablation = Ablation { no_adv_loss: true, ..Ablation::default() };
        assert_eq!((cfg.effective_alpha(), cfg.effective_beta(), cfg.trains_offset()), (0.2, 0.0, true));
    }
}
