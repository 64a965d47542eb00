use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Index reserved for the end-of-sequence marker. It also seeds decoding as
/// the "previous character" at the first step.
pub const EOS: usize = 0;

/// Bijection between text symbols and indices `1..k`; index 0 is [`EOS`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<String>,
    lookup: HashMap<String, usize>,
    longest: usize,
}

impl Vocabulary {
    pub fn new<I, S>(symbols: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        let mut lookup = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::Vocabulary(format!("empty symbol at entry {}", i + 1)));
            }
            if lookup.insert(s.clone(), i + 1).is_some() {
                return Err(Error::Vocabulary(format!("duplicate symbol {s:?}")));
            }
        }
        let longest = symbols.iter().map(|s| s.chars().count()).max().unwrap_or(0);
        Ok(Vocabulary {
            symbols,
            lookup,
            longest,
        })
    }

    /// Reads a vocabulary file: one symbol per line, line `i` (0-based)
    /// becomes index `i + 1`. Lines are taken verbatim apart from the line
    /// terminator, so a line holding a single space defines the space symbol.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut symbols = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                return Err(Error::Vocabulary(format!(
                    "{}: empty symbol on line {}",
                    path.display(),
                    i + 1
                )));
            }
            symbols.push(line.to_string());
        }
        Self::new(symbols)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for s in &self.symbols {
            out.push_str(s);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Number of classes `k`, including the end marker.
    pub fn size(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn symbol(&self, index: usize) -> Option<&str> {
        index
            .checked_sub(1)
            .and_then(|i| self.symbols.get(i))
            .map(String::as_str)
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.lookup.get(symbol).copied()
    }

    /// Greedy longest-match segmentation into indices, terminated by [`EOS`].
    pub fn encode_text(&self, text: &str) -> Result<Vec<usize>> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut out = Vec::with_capacity(chars.len() + 1);
        let mut pos = 0;
        while pos < chars.len() {
            let start = chars[pos].0;
            let mut matched = None;
            for len in (1..=self.longest.min(chars.len() - pos)).rev() {
                let end = chars.get(pos + len).map_or(text.len(), |c| c.0);
                if let Some(&ix) = self.lookup.get(&text[start..end]) {
                    matched = Some((ix, len));
                    break;
                }
            }
            let Some((ix, len)) = matched else {
                let c = chars[pos].1;
                return Err(Error::Vocabulary(format!(
                    "character {c:?} (U+{:04X}) not in vocabulary",
                    c as u32
                )));
            };
            out.push(ix);
            pos += len;
        }
        out.push(EOS);
        Ok(out)
    }

    /// Inverse of [`Vocabulary::encode_text`]; decoding stops at the first [`EOS`].
    pub fn decode_indices(&self, indices: &[usize]) -> Result<String> {
        let mut out = String::new();
        for &ix in indices {
            if ix == EOS {
                break;
            }
            let s = self.symbol(ix).ok_or_else(|| {
                Error::Vocabulary(format!("index {ix} out of range for k = {}", self.size()))
            })?;
            out.push_str(s);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abc() -> Vocabulary {
        Vocabulary::new(["a", "b", "c", " ", "ch"]).unwrap()
    }

    #[test]
    fn round_trips_every_symbol() {
        let v = abc();
        for (i, s) in v.symbols().iter().enumerate() {
            let enc = v.encode_text(s).unwrap();
            assert_eq!(enc, vec![i + 1, EOS]);
            assert_eq!(v.decode_indices(&enc).unwrap(), *s);
        }
    }

    #[test]
    fn empty_text_is_end_marker_only() {
        assert_eq!(abc().encode_text("").unwrap(), vec![EOS]);
        assert_eq!(abc().decode_indices(&[EOS]).unwrap(), "");
    }

    #[test]
    fn longest_match_wins() {
        let v = abc();
        assert_eq!(v.encode_text("cha b").unwrap(), vec![5, 1, 4, 2, EOS]);
    }

    #[test]
    fn unknown_symbol_names_code_point() {
        let err = abc().encode_text("ax").unwrap_err().to_string();
        assert!(err.contains("U+0078"), "{err}");
        assert!(abc().decode_indices(&[1, 6]).is_err());
    }

    #[test]
    fn rejects_duplicates() {
        assert!(Vocabulary::new(["a", "a"]).is_err());
    }

    #[test]
    fn loads_file_with_space_symbol() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        std::fs::write(&path, "ا\nب\n \nپ\n").unwrap();
        let v = Vocabulary::load(&path).unwrap();
        assert_eq!(v.size(), 5);
        assert_eq!(v.index_of(" "), Some(3));
        v.save(dir.path().join("again.txt")).unwrap();
        assert_eq!(Vocabulary::load(dir.path().join("again.txt")).unwrap(), v);
    }
}
