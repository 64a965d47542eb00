//! `caltext <train|recognize|eval|viz>` driven by a `key = value` config file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use rayon::prelude::*;

use crate::data::{self, Checkpoint, LineSample, SplitConfig};
use crate::error::{Error, Result};
use crate::metrics::corpus_report;
use crate::model::{Model, ModelConfig, Preset, Recognition};
use crate::training::{LocalizationMode, LossConfig, OptimizerState, Sample, TrainConfig, Trainer};
use crate::viz::{colorize_attention, overlay, step_frames, ColorVector};
use crate::vocab::Vocabulary;

pub const USAGE: &str =
    "usage: caltext <train|recognize|eval|viz> --config <path> [--seed N] [--beam N] [--preset toy|full] [--out DIR]";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Recognize,
    Eval,
    Viz,
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Command::Train),
            "recognize" => Ok(Command::Recognize),
            "eval" => Ok(Command::Eval),
            "viz" => Ok(Command::Viz),
            other => Err(Error::Config(format!("unknown command `{other}`\n{USAGE}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitChoice {
    All,
    Train,
    Validation,
    Test,
}

impl FromStr for SplitChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(SplitChoice::All),
            "train" => Ok(SplitChoice::Train),
            "validation" | "val" => Ok(SplitChoice::Validation),
            "test" => Ok(SplitChoice::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub corpus: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub out: PathBuf,
    pub preset: Preset,
    pub seed: u64,
    pub beam: usize,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub augment: bool,
    pub loss: LossConfig,
    pub strict: bool,
    pub split: SplitChoice,
    pub split_seed: u64,
    pub resume: bool,
    pub opacity: f64,
    pub frames: bool,
    pub png: bool,
    pub dump_attention: bool,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        RunConfig {
            command,
            corpus: None,
            vocab: None,
            checkpoint: None,
            image: None,
            predictions: None,
            out: PathBuf::from("out"),
            preset: Preset::Toy,
            seed: 0,
            beam: 5,
            epochs: 100,
            patience: 10,
            batch_size: 16,
            augment: true,
            loss: LossConfig::default(),
            strict: false,
            split: SplitChoice::All,
            split_seed: 0,
            resume: false,
            opacity: 0.6,
            frames: false,
            png: false,
            dump_attention: false,
        }
    }

    /// Parses `key = value` lines; `#` starts a comment. Relative paths are
    /// taken relative to `base`.
    pub fn parse(command: Command, text: &str, base: &Path) -> Result<Self> {
        let mut cfg = RunConfig::new(command);
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.insert(key.to_string(), i + 1).is_some() {
                return Err(Error::Config(format!("line {}: `{key}` set twice", i + 1)));
            }
            cfg.set(key, value, base)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.loss.validate()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(command: Command, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(command, &text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 || self.batch_size == 0 {
            return Err(Error::Config("`beam` and `batch_size` must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::Config(format!("`opacity` {} outside [0, 1]", self.opacity)));
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("`{key}` has bad value `{v}`")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(Error::Config(format!("`{key}` expects true or false, got `{v}`"))),
            }
        }
        let path = || Some(base.join(value));
        match key {
            "corpus" => self.corpus = path(),
            "vocab" => self.vocab = path(),
            "checkpoint" => self.checkpoint = path(),
            "image" => self.image = path(),
            "predictions" => self.predictions = path(),
            "out" => self.out = base.join(value),
            "preset" => self.preset = value.parse()?,
            "seed" => self.seed = num(key, value)?,
            "beam" => self.beam = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "augment" => self.augment = flag(key, value)?,
            "lambda" => self.loss.lambda = num(key, value)?,
            "gamma" => self.loss.gamma = num(key, value)?,
            "localization" => self.loss.localization = value.parse::<LocalizationMode>()?,
            "clip" => self.loss.clip_threshold = num(key, value)?,
            "rho" => self.loss.rho = num(key, value)?,
            "epsilon" => self.loss.epsilon = num(key, value)?,
            "strict" => self.strict = flag(key, value)?,
            "split" => self.split = value.parse()?,
            "split_seed" => self.split_seed = num(key, value)?,
            "resume" => self.resume = flag(key, value)?,
            "opacity" => self.opacity = num(key, value)?,
            "frames" => self.frames = flag(key, value)?,
            "png" => self.png = flag(key, value)?,
            "dump_attention" => self.dump_attention = flag(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }
}

/// Maps an outcome onto the 0 / 1 / 2 exit contract.
pub fn exit_code(result: &Result<()>) -> i32 {
    match result {
        Ok(()) => EXIT_OK,
        Err(
            Error::Io { .. }
            | Error::Image { .. }
            | Error::Corpus(_)
            | Error::Checkpoint(_)
            | Error::Config(_)
            | Error::Vocabulary(_),
        ) => EXIT_INPUT,
        Err(Error::Shape { .. } | Error::NanGradient(_) | Error::InvalidArgument(_)) => EXIT_INTERNAL,
    }
}

/// Caps rayon's worker count from `CALTEXT_THREADS`, if set.
pub fn init_threads() {
    if let Some(n) = std::env::var("CALTEXT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().is_err() {
            warn!("thread pool already initialized; CALTEXT_THREADS ignored");
        }
    }
}

pub fn run(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    match cfg.command {
        Command::Train => train(cfg),
        Command::Recognize => recognize(cfg),
        Command::Eval => eval(cfg),
        Command::Viz => viz(cfg),
    }
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Config(format!("`{key}` must be set in the config file")))
}

fn load_model(cfg: &RunConfig) -> Result<Model> {
    Checkpoint::load(required(&cfg.checkpoint, "checkpoint")?)?.to_model()
}

fn load_lines(cfg: &RunConfig, vocab: &Vocabulary) -> Result<Vec<LineSample>> {
    let manifest = required(&cfg.corpus, "corpus")?;
    let split = SplitConfig {
        seed: cfg.split_seed,
        ..SplitConfig::default()
    };
    let corpus = data::load_corpus(manifest, vocab, &split)?;
    if !corpus.is_clean() {
        let msg = format!("{} manifest line(s) rejected", corpus.rejected.len());
        if cfg.strict {
            return Err(Error::Corpus(msg));
        }
        warn!("{msg}");
    }
    Ok(match cfg.split {
        SplitChoice::All => corpus.all().cloned().collect(),
        SplitChoice::Train => corpus.train,
        SplitChoice::Validation => corpus.validation,
        SplitChoice::Test => corpus.test,
    })
}

fn prepare(model: &Model, lines: &[LineSample]) -> Result<Vec<Sample>> {
    lines
        .par_iter()
        .map(|l| {
            let image = model.prepare_image(&data::load_gray(&l.image_path)?)?;
            Sample::new(l.id(), image, l.text.as_str(), &model.vocab)
        })
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn train(cfg: &RunConfig) -> Result<()> {
    let vocab = Vocabulary::load(required(&cfg.vocab, "vocab")?)?;
    let manifest = required(&cfg.corpus, "corpus")?;
    let split = SplitConfig {
        seed: cfg.split_seed,
        ..SplitConfig::default()
    };
    let corpus = data::load_corpus(manifest, &vocab, &split)?;
    if cfg.strict && !corpus.is_clean() {
        return Err(Error::Corpus(format!("{} manifest line(s) rejected", corpus.rejected.len())));
    }
    let ckpt_path = cfg.checkpoint.clone().unwrap_or_else(|| cfg.out.join("model.ckpt"));
    let train_cfg = TrainConfig {
        loss: cfg.loss.clone(),
        batch_size: cfg.batch_size,
        augmentation: cfg.augment.then(data::SaltPepper::default),
        shuffle: true,
        probe_beam: cfg.beam,
    };

    let (mut model, resumed) = if cfg.resume && ckpt_path.is_file() {
        let ck = Checkpoint::load(&ckpt_path)?;
        if ck.vocab != vocab {
            return Err(Error::Config("checkpoint vocabulary differs from the vocab file".into()));
        }
        (ck.to_model()?, Some(ck))
    } else {
        (Model::new(ModelConfig::preset(cfg.preset, vocab.size()), vocab, cfg.seed)?, None)
    };
    let mut trainer = Trainer::new(train_cfg, &model, cfg.seed)?;
    if let Some(ck) = &resumed {
        if let Some(opt) = &ck.optimizer {
            trainer.optimizer = OptimizerState::from_arrays(&model.store, opt)?;
        }
        trainer.set_epoch(ck.metadata.get("epoch").and_then(|e| e.parse().ok()).unwrap_or(0));
        if let Some(pos) = ck.metadata.get("rng").and_then(|p| p.parse().ok()) {
            trainer.set_rng_position(pos);
        }
    }

    let train_set = prepare(&model, &corpus.train)?;
    if train_set.is_empty() {
        return Err(Error::Corpus("training split is empty".into()));
    }
    let probe = if corpus.validation.is_empty() {
        train_set.clone()
    } else {
        prepare(&model, &corpus.validation)?
    };
    info!("training on {} lines, probing on {}", train_set.len(), probe.len());

    let log_path = cfg.out.join("train.log");
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for _ in 0..cfg.epochs {
        let stats = trainer.train_epoch(&mut model, &train_set, &probe)?;
        println!("{stats}");
        writeln!(log, "{stats}").map_err(|e| Error::io(&log_path, e))?;

        let mut ck = Checkpoint::from_model(&model);
        ck.optimizer = Some(trainer.optimizer.to_arrays(&model.store));
        ck.metadata.insert("epoch".into(), stats.epoch.to_string());
        ck.metadata.insert("seed".into(), cfg.seed.to_string());
        ck.metadata.insert("rng".into(), trainer.rng_position().to_string());
        ck.save(&ckpt_path)?;

        if stats.probe_cer < best {
            best = stats.probe_cer;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                info!("probe CER stalled for {stale} epochs; stopping");
                break;
            }
        }
    }
    Ok(())
}

fn attention_dump(r: &Recognition) -> String {
    let mut out = String::new();
    for (t, a) in r.alphas.iter().enumerate() {
        let weights: Vec<String> = a.weights.data().iter().map(|w| format!("{w:.6}")).collect();
        let _ = writeln!(out, "{}\t{}x{}\t{}", t + 1, a.h, a.w, weights.join(" "));
    }
    out
}

fn recognize_all(model: &Model, items: &[(String, PathBuf)], beam: usize) -> Result<Vec<(String, Recognition)>> {
    items
        .par_iter()
        .map(|(id, path)| {
            let image = model.prepare_image(&data::load_gray(path)?)?;
            Ok((id.clone(), model.recognize(&image, beam)?))
        })
        .collect()
}

fn recognize(cfg: &RunConfig) -> Result<()> {
    let model = load_model(cfg)?;
    let items: Vec<(String, PathBuf)> = if let Some(image) = &cfg.image {
        let id = image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        vec![(id, image.clone())]
    } else {
        load_lines(cfg, &model.vocab)?
            .into_iter()
            .map(|l| (l.id(), l.image_path))
            .collect()
    };
    let results = recognize_all(&model, &items, cfg.beam)?;
    let mut tsv = String::new();
    for (id, r) in &results {
        let _ = writeln!(tsv, "{id}\t{}", r.text);
        if cfg.dump_attention {
            write_text(&cfg.out.join(format!("{id}.attention.tsv")), &attention_dump(r))?;
        }
    }
    print!("{tsv}");
    write_text(&cfg.out.join("predictions.tsv"), &tsv)
}

/// Reads `line_id \t text` prediction lines.
fn read_predictions(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (id, pred) = line.split_once('\t').unwrap_or((line, ""));
        if out.insert(id.to_string(), data::normalize_text(pred)).is_some() {
            return Err(Error::Corpus(format!("{}:{}: duplicate id `{id}`", path.display(), i + 1)));
        }
    }
    Ok(out)
}

fn eval(cfg: &RunConfig) -> Result<()> {
    let (vocab, model) = match &cfg.predictions {
        Some(_) => (Vocabulary::load(required(&cfg.vocab, "vocab")?)?, None),
        None => {
            let m = load_model(cfg)?;
            (m.vocab.clone(), Some(m))
        }
    };
    let lines = load_lines(cfg, &vocab)?;
    let predictions: BTreeMap<String, String> = match (&cfg.predictions, &model) {
        (Some(path), _) => read_predictions(path)?,
        (None, Some(model)) => {
            let items: Vec<_> = lines.iter().map(|l| (l.id(), l.image_path.clone())).collect();
            recognize_all(model, &items, cfg.beam)?
                .into_iter()
                .map(|(id, r)| (id, r.text))
                .collect()
        }
        (None, None) => unreachable!(),
    };
    let mut triples = Vec::with_capacity(lines.len());
    for l in &lines {
        let id = l.id();
        let pred = predictions
            .get(&id)
            .ok_or_else(|| Error::Corpus(format!("no prediction for line `{id}`")))?;
        triples.push((id, l.text.clone(), pred.clone()));
    }
    let report = corpus_report(triples).map_err(|e| Error::Corpus(e.to_string()))?;
    write_text(&cfg.out.join("report.tsv"), &report.to_tsv())?;
    println!("CER {:.4}", report.cer);
    println!("WER {:.4}", report.wer);
    println!("char_accuracy {:.4}", report.char_accuracy());
    println!("word_accuracy {:.4}", report.word_accuracy());
    if !report.empty_targets.is_empty() {
        println!("empty_targets {}", report.empty_targets.len());
    }
    Ok(())
}

fn viz(cfg: &RunConfig) -> Result<()> {
    let model = load_model(cfg)?;
    let path = required(&cfg.image, "image")?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
    let image = model.prepare_image(&data::load_gray(path)?)?;
    let r = model.recognize(&image, cfg.beam)?;
    let colored = colorize_attention(&r.alphas, ColorVector::YELLOW, ColorVector::GREEN)?;
    let raster = overlay(&image, &colored, cfg.opacity)?;
    data::write_pnm(cfg.out.join(format!("{stem}.attention.ppm")), &raster)?;
    if cfg.png {
        data::write_png(cfg.out.join(format!("{stem}.attention.png")), &raster)?;
    }
    if cfg.frames {
        for (t, frame) in step_frames(&image, &r.alphas, cfg.opacity)?.iter().enumerate() {
            data::write_pnm(cfg.out.join(format!("{stem}.step{:03}.ppm", t + 1)), frame)?;
        }
    }
    println!("{stem}\t{}\tsteps {}", r.text, r.alphas.len());
    Ok(())
}
