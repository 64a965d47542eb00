//! Character and word error rates from Levenshtein alignments.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Edit operations turning a target sequence into an output sequence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EditCounts {
    pub insertions: usize,
    pub substitutions: usize,
    pub deletions: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.insertions + self.substitutions + self.deletions
    }
}

impl std::ops::AddAssign for EditCounts {
    fn add_assign(&mut self, o: Self) {
        self.insertions += o.insertions;
        self.substitutions += o.substitutions;
        self.deletions += o.deletions;
    }
}

/// Unit-cost edit counts from `target` to `output`.
///
/// Among minimal alignments the backtrace prefers substitution, then
/// insertion, then deletion.
pub fn levenshtein<T: PartialEq>(target: &[T], output: &[T]) -> EditCounts {
    let (n, m) = (target.len(), output.len());
    let width = m + 1;
    let mut dist = vec![0usize; (n + 1) * width];
    for j in 0..=m {
        dist[j] = j;
    }
    for i in 1..=n {
        dist[i * width] = i;
        for j in 1..=m {
            let sub = dist[(i - 1) * width + j - 1] + usize::from(target[i - 1] != output[j - 1]);
            let ins = dist[i * width + j - 1] + 1;
            let del = dist[(i - 1) * width + j] + 1;
            dist[i * width + j] = sub.min(ins).min(del);
        }
    }

    let mut counts = EditCounts::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dist[i * width + j];
        if i > 0 && j > 0 {
            let mismatch = usize::from(target[i - 1] != output[j - 1]);
            if dist[(i - 1) * width + j - 1] + mismatch == here {
                counts.substitutions += mismatch;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && dist[i * width + j - 1] + 1 == here {
            counts.insertions += 1;
            j -= 1;
        } else {
            counts.deletions += 1;
            i -= 1;
        }
    }
    counts
}

fn rate(edits: usize, n: usize) -> f64 {
    edits as f64 / n as f64 * 100.0
}

fn words(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Character error rate in percent; may exceed 100.
pub fn cer(target: &str, output: &str) -> Result<f64> {
    let t: Vec<char> = target.chars().collect();
    if t.is_empty() {
        return Err(Error::InvalidArgument("CER undefined for an empty target".into()));
    }
    let o: Vec<char> = output.chars().collect();
    Ok(rate(levenshtein(&t, &o).total(), t.len()))
}

/// Word error rate in percent over whitespace-separated tokens.
pub fn wer(target: &str, output: &str) -> Result<f64> {
    let t = words(target);
    if t.is_empty() {
        return Err(Error::InvalidArgument("WER undefined for a target without words".into()));
    }
    Ok(rate(levenshtein(&t, &words(output)).total(), t.len()))
}

pub fn accuracy(rate: f64) -> f64 {
    100.0 - rate
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineScore {
    pub id: String,
    pub chars: usize,
    pub char_edits: EditCounts,
    pub words: usize,
    pub word_edits: EditCounts,
}

impl LineScore {
    pub fn cer(&self) -> f64 {
        rate(self.char_edits.total(), self.chars)
    }

    /// `None` when the target has characters but no words (whitespace only).
    pub fn wer(&self) -> Option<f64> {
        (self.words > 0).then(|| rate(self.word_edits.total(), self.words))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusReport {
    pub lines: Vec<LineScore>,
    /// Line ids whose target was empty; excluded from every aggregate.
    pub empty_targets: Vec<String>,
    pub cer: f64,
    pub wer: f64,
    pub macro_cer: f64,
    pub macro_wer: f64,
}

impl CorpusReport {
    pub fn char_accuracy(&self) -> f64 {
        accuracy(self.cer)
    }

    pub fn word_accuracy(&self) -> f64 {
        accuracy(self.wer)
    }

    /// Tab-separated per-line table followed by aggregate lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for l in &self.lines {
            let wer = l.wer().map_or_else(|| "nan".to_string(), |w| format!("{w:.4}"));
            let e = l.char_edits;
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{:.4}\t{}",
                l.id, l.chars, e.insertions, e.substitutions, e.deletions, l.cer(), wer
            );
        }
        let mut total = EditCounts::default();
        for l in &self.lines {
            total += l.char_edits;
        }
        let n: usize = self.lines.iter().map(|l| l.chars).sum();
        let _ = writeln!(
            out,
            "#micro\t{}\t{}\t{}\t{}\t{:.4}\t{:.4}",
            n, total.insertions, total.substitutions, total.deletions, self.cer, self.wer
        );
        let _ = writeln!(out, "#macro\t\t\t\t\t{:.4}\t{:.4}", self.macro_cer, self.macro_wer);
        for id in &self.empty_targets {
            let _ = writeln!(out, "#empty_target\t{id}");
        }
        out
    }
}

/// Scores `(line_id, target, output)` triples. Aggregates are micro-averaged
/// (total edits over total length); macro averages are also reported.
pub fn corpus_report<I, S>(pairs: I) -> Result<CorpusReport>
where
    I: IntoIterator<Item = (S, S, S)>,
    S: AsRef<str>,
{
    let mut lines = Vec::new();
    let mut empty_targets = Vec::new();
    let mut seen = 0usize;
    for (id, target, output) in pairs {
        seen += 1;
        let (id, target, output) = (id.as_ref(), target.as_ref(), output.as_ref());
        let t: Vec<char> = target.chars().collect();
        if t.is_empty() {
            empty_targets.push(id.to_string());
            continue;
        }
        let o: Vec<char> = output.chars().collect();
        let (tw, ow) = (words(target), words(output));
        lines.push(LineScore {
            id: id.to_string(),
            chars: t.len(),
            char_edits: levenshtein(&t, &o),
            words: tw.len(),
            word_edits: levenshtein(&tw, &ow),
        });
    }
    if seen == 0 {
        return Err(Error::InvalidArgument("corpus report needs at least one line".into()));
    }
    if lines.is_empty() {
        return Err(Error::InvalidArgument("every target line is empty".into()));
    }
    let chars: usize = lines.iter().map(|l| l.chars).sum();
    let char_edits: usize = lines.iter().map(|l| l.char_edits.total()).sum();
    let words_n: usize = lines.iter().map(|l| l.words).sum();
    let word_edits: usize = lines.iter().map(|l| l.word_edits.total()).sum();
    let macro_cer = lines.iter().map(LineScore::cer).sum::<f64>() / lines.len() as f64;
    let wers: Vec<f64> = lines.iter().filter_map(LineScore::wer).collect();
    Ok(CorpusReport {
        cer: rate(char_edits, chars),
        wer: if words_n == 0 { 0.0 } else { rate(word_edits, words_n) },
        macro_cer,
        macro_wer: if wers.is_empty() {
            0.0
        } else {
            wers.iter().sum::<f64>() / wers.len() as f64
        },
        lines,
        empty_targets,
    })
}
