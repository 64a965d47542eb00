//! Manifest parsing and writer-disjoint splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::text::normalize_text;
use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LineFlag {
    CrossedOutReadable,
    CrossedOutUnreadable,
    Overwritten,
}

impl LineFlag {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "crossed_out_readable" => Some(LineFlag::CrossedOutReadable),
            "crossed_out_unreadable" => Some(LineFlag::CrossedOutUnreadable),
            "overwritten" => Some(LineFlag::Overwritten),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LineFlag::CrossedOutReadable => "crossed_out_readable",
            LineFlag::CrossedOutUnreadable => "crossed_out_unreadable",
            LineFlag::Overwritten => "overwritten",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSample {
    /// Resolved against the manifest's directory when relative.
    pub image_path: PathBuf,
    pub writer_id: String,
    /// NFC-normalized, whitespace-collapsed ground truth.
    pub text: String,
    pub flags: BTreeSet<LineFlag>,
}

impl LineSample {
    /// Stable identifier used in reports: the image file stem.
    pub fn id(&self) -> String {
        self.image_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub line: usize,
    pub reason: String,
}

/// Parses a manifest: `image_path \t writer_id \t text \t flags`, flags comma-separated.
///
/// Lines whose image is missing or whose text leaves the vocabulary are
/// rejected and returned alongside the accepted samples. Malformed lines
/// are hard errors.
pub fn read_manifest(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<(Vec<LineSample>, Vec<Rejection>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::new();
    let mut rejected = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(Error::Corpus(format!(
                "{}:{line}: expected 3 or 4 tab-separated fields, got {}",
                path.display(),
                fields.len()
            )));
        }
        let mut flags = BTreeSet::new();
        for f in fields.get(3).unwrap_or(&"").split(',').map(str::trim).filter(|f| !f.is_empty()) {
            let flag = LineFlag::parse(f)
                .ok_or_else(|| Error::Corpus(format!("{}:{line}: unknown flag `{f}`", path.display())))?;
            flags.insert(flag);
        }
        let image_path = base.join(fields[0]);
        let sample = LineSample {
            image_path,
            writer_id: fields[1].to_string(),
            text: normalize_text(fields[2]),
            flags,
        };
        if !sample.image_path.is_file() {
            let reason = format!("missing image {}", sample.image_path.display());
            warn!("manifest line {line} rejected: {reason}");
            rejected.push(Rejection { line, reason });
            continue;
        }
        if let Err(e) = vocab.encode_text(&sample.text) {
            let reason = e.to_string();
            warn!("manifest line {line} rejected: {reason}");
            rejected.push(Rejection { line, reason });
            continue;
        }
        samples.push(sample);
    }
    Ok((samples, rejected))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitConfig {
    /// Relative shares of writers for (train, validation, test).
    pub fractions: (f64, f64, f64),
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            fractions: (75.0, 13.0, 12.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub train: Vec<LineSample>,
    pub validation: Vec<LineSample>,
    pub test: Vec<LineSample>,
    pub rejected: Vec<Rejection>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True when no manifest line was rejected; strict callers fail otherwise.
    pub fn is_clean(&self) -> bool {
        self.rejected.is_empty()
    }

    pub fn all(&self) -> impl Iterator<Item = &LineSample> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }
}

/// Assigns whole writers to splits after a seeded shuffle of the sorted writer ids.
pub fn split_by_writer(samples: Vec<LineSample>, config: &SplitConfig) -> Result<Corpus> {
    let (a, b, c) = config.fractions;
    if a < 0.0 || b < 0.0 || c < 0.0 || a + b + c <= 0.0 {
        return Err(Error::Config(format!("invalid split fractions {:?}", config.fractions)));
    }
    let mut by_writer: BTreeMap<String, Vec<LineSample>> = BTreeMap::new();
    for s in samples {
        by_writer.entry(s.writer_id.clone()).or_default().push(s);
    }
    let mut writers: Vec<String> = by_writer.keys().cloned().collect();
    writers.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));

    let n = writers.len();
    let total = a + b + c;
    let mut n_train = (n as f64 * a / total).round() as usize;
    let mut n_val = (n as f64 * b / total).round() as usize;
    if n > 0 && n_train == 0 && a > 0.0 {
        n_train = 1;
    }
    n_train = n_train.min(n);
    n_val = n_val.min(n - n_train);
    if n == 1 {
        warn!("corpus has a single writer; every line goes to the training split");
    }

    let mut corpus = Corpus::default();
    for (i, w) in writers.iter().enumerate() {
        let lines = by_writer.remove(w).unwrap_or_default();
        let split = if i < n_train {
            &mut corpus.train
        } else if i < n_train + n_val {
            &mut corpus.validation
        } else {
            &mut corpus.test
        };
        split.extend(lines);
    }
    Ok(corpus)
}

pub fn load_corpus(path: impl AsRef<Path>, vocab: &Vocabulary, config: &SplitConfig) -> Result<Corpus> {
    let (samples, rejected) = read_manifest(path, vocab)?;
    let mut corpus = split_by_writer(samples, config)?;
    corpus.rejected = rejected;
    Ok(corpus)
}

/// Serializes samples back into manifest lines (image paths written as given).
pub fn write_manifest(path: impl AsRef<Path>, samples: &[LineSample]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for s in samples {
        let flags: Vec<&str> = s.flags.iter().map(|f| f.as_str()).collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            s.image_path.display(),
            s.writer_id,
            s.text,
            flags.join(",")
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
