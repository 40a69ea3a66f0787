//! `bro` command-line interface.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{Ablation, TrainConfig};
use crate::episodes::io::{load_episode, read_manifest, read_pgm, write_episode_set};
use crate::episodes::episode_stream;
use crate::error::BroError;
use crate::spectrum::{
    compare_groups, demo_corpus, BinWeight, DemoCorpus, EntropyOptions, LogBase, SpectrumReport,
};
use crate::tensor::{load_tensor, Tensor};
use crate::trainer::{evaluate, test_episodes, train_with, Checkpoint, TrainOutcome};

pub const VERSION: &str = concat!("bro ", env!("CARGO_PKG_VERSION"));
pub const RUN_MANIFEST: &str = "run_manifest.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG: &str = "train.log";

#[derive(Debug, Parser)]
#[command(name = "bro", version, about = "Background-fused prototype few-shot segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint plus an epoch log.
    Train(TrainArgs),
    /// Score a checkpoint on the episodes listed in a manifest.
    Eval(EvalArgs),
    /// Train and evaluate the full model and its five ablations.
    Ablate(TrainArgs),
    /// Compare spectral entropy of two image directories.
    Spectrum(SpectrumArgs),
    /// Dump sampled episodes as PGM files with a manifest.
    Episodes(EpisodesArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Episode manifest (`episode <id> class <c> support ... query ...` lines).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Optional config that must agree with the checkpoint on D and N.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "bro-run")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    /// Directory of group A images (PGM or binary tensor files).
    #[arg(required_unless_present = "demo")]
    pub dir_a: Option<PathBuf>,
    #[arg(required_unless_present = "demo")]
    pub dir_b: Option<PathBuf>,
    /// Compare generated broadband (A) against low-pass (B) corpora instead.
    #[arg(long, conflicts_with_all = ["dir_a", "dir_b"])]
    pub demo: bool,
    #[arg(long, default_value_t = 50)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write gnuplot data of the fitted densities.
    #[arg(long)]
    pub pdf: bool,
    #[arg(long)]
    pub log2: bool,
    #[arg(long)]
    pub exclude_dc: bool,
    /// Use |X|² instead of |X| as bin weights.
    #[arg(long)]
    pub power: bool,
    #[arg(long, default_value = "bro-run")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EpisodesArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// `train` samples from the training source; `test` writes the evaluation suite.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Episode count for the train split.
    #[arg(long, default_value_t = 10)]
    pub count: usize,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

fn usage(e: BroError) -> Failure {
    Failure::usage(e.to_string())
}

fn runtime(e: BroError) -> Failure {
    Failure::runtime(e.to_string())
}

type CliResult = std::result::Result<(), Failure>;

#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub output: PathBuf,
    pub version: String,
}

impl RunManifest {
    pub fn to_text(&self) -> String {
        let config = self.config.as_ref().map_or("-".to_string(), |p| p.display().to_string());
        format!(
            "command {}\nconfig {}\nseed {}\noutput {}\nversion {}\n",
            self.command,
            config,
            self.seed,
            self.output.display(),
            self.version
        )
    }

    pub fn write(&self) -> CliResult {
        std::fs::create_dir_all(&self.output).map_err(|e| runtime(BroError::io(&self.output, e)))?;
        let path = self.output.join(RUN_MANIFEST);
        std::fs::write(&path, self.to_text()).map_err(|e| runtime(BroError::io(path, e)))
    }
}

fn manifest(command: &str, config: Option<&Path>, seed: u64, out: &Path) -> RunManifest {
    RunManifest {
        command: command.to_string(),
        config: config.map(Path::to_path_buf),
        seed,
        output: out.to_path_buf(),
        version: VERSION.to_string(),
    }
}

fn write_text(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| runtime(BroError::io(path, e)))
}

fn load_config(path: &Path) -> std::result::Result<TrainConfig, Failure> {
    TrainConfig::load(path).and_then(TrainConfig::with_env_seed).map_err(usage)
}

/// Dice values print with a decimal point, e.g. `50.0`.
fn fmt_dice(v: f64) -> String {
    format!("{v:?}")
}

fn train_logged(cfg: &TrainConfig, out: &Path) -> std::result::Result<TrainOutcome, Failure> {
    let mut log = String::new();
    let outcome = train_with(cfg, &cfg.train_source(), |e| {
        let line = e.to_line();
        println!("{line}");
        log.push_str(&line);
        log.push('\n');
    });
    write_text(&out.join(TRAIN_LOG), &log)?;
    let outcome = outcome.map_err(runtime)?;
    outcome.checkpoint.save(&out.join(CHECKPOINT_FILE)).map_err(runtime)?;
    Ok(outcome)
}

fn cmd_train(args: &TrainArgs) -> CliResult {
    let cfg = load_config(&args.config)?;
    manifest("train", Some(&args.config), cfg.seed, &args.out).write()?;
    train_logged(&cfg, &args.out)?;
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> CliResult {
    let ckpt = Checkpoint::load(&args.checkpoint).map_err(|e| match e {
        BroError::Io { .. } => runtime(e),
        other => usage(other),
    })?;
    if let Some(path) = &args.config {
        let cfg = TrainConfig::load(path).map_err(usage)?;
        ckpt.model.check_config(&cfg).map_err(usage)?;
    }
    manifest("eval", args.config.as_deref(), ckpt.config.seed, &args.out).write()?;
    let entries = read_manifest(&args.manifest).map_err(|e| match e {
        BroError::Io { .. } => runtime(e),
        other => usage(other),
    })?;
    if entries.is_empty() {
        return Err(Failure::usage("no episodes"));
    }
    let episodes = entries
        .iter()
        .map(load_episode)
        .collect::<crate::Result<Vec<_>>>()
        .map_err(runtime)?;
    let report = evaluate(&ckpt, &episodes).map_err(runtime)?;
    let mut text = String::new();
    for (entry, d) in entries.iter().zip(&report.per_episode) {
        let _ = writeln!(text, "dice {} {}", entry.id, fmt_dice(*d));
    }
    let _ = writeln!(text, "mean {}", fmt_dice(report.mean));
    print!("{text}");
    write_text(&args.out.join("eval.txt"), &text)
}

/// The six rows of the ablation table, full model first.
pub fn ablation_variants() -> [(&'static str, Ablation); 6] {
    let none = Ablation::default();
    [
        ("full", none),
        ("no_feac", Ablation { no_feac: true, ..none }),
        ("no_hica", Ablation { no_hica: true, ..none }),
        ("no_ad", Ablation { no_ad: true, ..none }),
        ("no_b_delta", Ablation { no_b_delta: true, ..none }),
        ("no_adv_loss", Ablation { no_adv_loss: true, ..none }),
    ]
}

fn cmd_ablate(args: &TrainArgs) -> CliResult {
    let base = load_config(&args.config)?;
    manifest("ablate", Some(&args.config), base.seed, &args.out).write()?;
    let suite = test_episodes(&base).map_err(runtime)?;
    let mut table = format!(
        "# seed {} test_seed {} test_episodes {}\n",
        base.seed, base.test_seed, base.test_episodes
    );
    for (name, ablation) in ablation_variants() {
        let cfg = TrainConfig { ablation, ..base.clone() };
        let dir = args.out.join(name);
        std::fs::create_dir_all(&dir).map_err(|e| runtime(BroError::io(&dir, e)))?;
        write_text(&dir.join("config.txt"), &cfg.to_text())?;
        let outcome = train_logged(&cfg, &dir)?;
        let report = evaluate(&outcome.checkpoint, &suite).map_err(runtime)?;
        let a = &cfg.ablation;
        let row = format!(
            "variant {name} no_feac {} no_hica {} no_ad {} no_b_delta {} no_adv_loss {} alpha {} beta {} trains_offset {} mean_dice {}",
            a.no_feac,
            a.no_hica,
            a.no_ad,
            a.no_b_delta,
            a.no_adv_loss,
            cfg.effective_alpha(),
            cfg.effective_beta(),
            cfg.trains_offset(),
            fmt_dice(report.mean)
        );
        println!("{row}");
        table.push_str(&row);
        table.push('\n');
    }
    write_text(&args.out.join("ablation.txt"), &table)
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("pgm" | "brot")
    )
}

/// Reads every `.pgm` / `.brot` file of a directory, sorted by name.
fn read_image_dir(dir: &Path) -> std::result::Result<(Vec<String>, Vec<Tensor>), Failure> {
    let listing = std::fs::read_dir(dir).map_err(|e| runtime(BroError::io(dir, e)))?;
    let mut paths: Vec<PathBuf> = listing
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    paths.sort();
    let mut images = Vec::with_capacity(paths.len());
    for p in &paths {
        let img = if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
            read_pgm(p)
        } else {
            load_tensor(p).and_then(|t| {
                let (h, w) = t.dims2()?;
                t.reshape(&[h, w])
            })
        };
        images.push(img.map_err(|e| Failure::runtime(format!("cannot read image {}: {e}", p.display())))?);
    }
    if images.len() < 2 {
        return Err(Failure::usage(format!(
            "{} holds {} readable image(s); a normal fit needs at least 2",
            dir.display(),
            images.len()
        )));
    }
    Ok((paths.iter().map(|p| p.display().to_string()).collect(), images))
}

fn cmd_spectrum(args: &SpectrumArgs) -> CliResult {
    manifest("spectrum", None, args.seed, &args.out).write()?;
    let opts = EntropyOptions {
        base: if args.log2 { LogBase::Two } else { LogBase::Natural },
        include_dc: !args.exclude_dc,
        weight: if args.power { BinWeight::Power } else { BinWeight::Magnitude },
    };
    let ((names_a, a), (names_b, b)) = if args.demo {
        if args.count < 2 {
            return Err(Failure::usage("--count must be at least 2"));
        }
        if args.size < 32 {
            return Err(Failure::usage("--size must be at least 32"));
        }
        let gen = |kind, seed, label: &str| {
            demo_corpus(kind, args.count, seed, args.size, args.size)
                .map(|imgs| ((0..imgs.len()).map(|i| format!("{label}/{i:03}")).collect::<Vec<_>>(), imgs))
                .map_err(runtime)
        };
        (
            gen(DemoCorpus::Broadband, args.seed, "broadband")?,
            gen(DemoCorpus::Lowpass, args.seed.wrapping_add(1), "lowpass")?,
        )
    } else {
        let (da, db) = (args.dir_a.as_ref().expect("clap"), args.dir_b.as_ref().expect("clap"));
        (read_image_dir(da)?, read_image_dir(db)?)
    };
    let cmp = compare_groups(&a, &b, &opts).map_err(usage)?;
    let text = format!(
        "# group A\n{}# group B\n{}order {}\n",
        cmp.a.to_text(&names_a),
        cmp.b.to_text(&names_b),
        cmp.order.verdict()
    );
    print!("{text}");
    write_text(&args.out.join("spectrum.txt"), &text)?;
    if args.pdf {
        for (r, file) in [(&cmp.a, "pdf_a.dat"), (&cmp.b, "pdf_b.dat")] {
            write_text(&args.out.join(file), &SpectrumReport::pdf_data(r, 200))?;
        }
    }
    Ok(())
}

fn cmd_episodes(args: &EpisodesArgs) -> CliResult {
    let cfg = load_config(&args.config)?;
    manifest("episodes", Some(&args.config), cfg.seed, &args.out).write()?;
    let episodes = match args.split.as_str() {
        "test" => test_episodes(&cfg),
        "train" => episode_stream(&cfg.train_source(), cfg.seed, args.count),
        other => return Err(Failure::usage(format!("--split must be `train` or `test`, got `{other}`"))),
    }
    .map_err(runtime)?;
    let path = write_episode_set(&args.out, &episodes).map_err(runtime)?;
    println!("wrote {} episodes to {}", episodes.len(), path.display());
    Ok(())
}

pub fn run(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Spectrum(a) => cmd_spectrum(a),
        Command::Episodes(a) => cmd_episodes(a),
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("bro: {}", f.message);
            f.code
        }
    }
}
