//! Bitmap-font line images for smoke tests and overfitting runs.
//!
//! Ten 5×7 glyphs plus a space, drawn right to left at 2× scale on a white
//! 32-pixel-high canvas. Text stays in logical order; only the drawing
//! direction is reversed.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::data::raster::write_png;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::vocab::Vocabulary;

pub const HEIGHT: usize = 32;
pub const WIDTH: usize = 128;
const SCALE: usize = 2;
const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;
const ADVANCE: usize = GLYPH_W * SCALE + 2;
const SPACE_ADVANCE: usize = 8;
const MARGIN: usize = 4;

pub const SYMBOLS: [&str; 11] = ["ا", "ب", "ت", "ج", "د", "ر", "س", "ع", "ف", "م", " "];

const BITMAPS: [[&str; GLYPH_H]; 10] = [
    ["..#..", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."],
    [".....", ".....", "#...#", "#...#", "#####", ".....", "..#.."],
    [".#.#.", ".....", "#...#", "#...#", "#####", ".....", "....."],
    ["####.", "...#.", "..#..", ".#...", "#####", ".....", "..#.."],
    ["..##.", "....#", "....#", "....#", "#####", ".....", "....."],
    [".....", "....#", "....#", "...#.", "..#..", ".##..", "#...."],
    [".....", ".....", "#.#.#", "#.#.#", "#####", ".....", "....."],
    [".###.", "#....", ".###.", "#....", "#####", ".....", "....."],
    ["...#.", ".###.", ".#.#.", ".###.", "#####", ".....", "....."],
    [".....", ".###.", "#...#", ".###.", "..#..", "..#..", "..#.."],
];

pub fn vocabulary() -> Vocabulary {
    Vocabulary::new(SYMBOLS).expect("synthetic symbols are unique")
}

fn advance(symbol: &str) -> usize {
    if symbol == " " {
        SPACE_ADVANCE
    } else {
        ADVANCE
    }
}

/// Longest text (in glyphs, no spaces) that fits on one canvas.
pub fn max_glyphs() -> usize {
    (WIDTH - 2 * MARGIN) / ADVANCE
}

/// Draws `text` from the right edge leftwards; `[HEIGHT, WIDTH, 1]`, ink 0, paper 1.
pub fn render_line(text: &str) -> Result<Tensor> {
    let mut image = Tensor::full(&[HEIGHT, WIDTH, 1], 1.0);
    let top = (HEIGHT - GLYPH_H * SCALE) / 2;
    let mut right = WIDTH - MARGIN;
    for ch in text.chars() {
        let symbol = ch.to_string();
        let index = SYMBOLS
            .iter()
            .position(|s| *s == symbol)
            .ok_or_else(|| Error::InvalidArgument(format!("no glyph for {ch:?}")))?;
        let step = advance(&symbol);
        if right < MARGIN + step {
            return Err(Error::InvalidArgument(format!("text {text:?} does not fit in {WIDTH} pixels")));
        }
        let left = right - step + 1;
        if let Some(bitmap) = BITMAPS.get(index) {
            let data = image.data_mut();
            for (gy, row) in bitmap.iter().enumerate() {
                for (gx, px) in row.bytes().enumerate() {
                    if px != b'#' {
                        continue;
                    }
                    for dy in 0..SCALE {
                        for dx in 0..SCALE {
                            let y = top + gy * SCALE + dy;
                            let x = left + gx * SCALE + dx;
                            data[y * WIDTH + x] = 0.0;
                        }
                    }
                }
            }
        }
        right -= step;
    }
    Ok(image)
}

/// Pixel width needed to draw `text`, margins included.
pub fn text_width(text: &str) -> usize {
    2 * MARGIN + text.chars().map(|c| advance(&c.to_string())).sum::<usize>()
}

/// Random glyph string of `min..=max` glyphs with occasional single spaces,
/// always narrow enough to render.
pub fn random_text<R: Rng + ?Sized>(rng: &mut R, min: usize, max: usize) -> String {
    let len = rng.gen_range(min..=max.min(max_glyphs()).max(min));
    let mut out = String::new();
    let mut width = 2 * MARGIN + len * ADVANCE;
    for i in 0..len {
        if i > 0 && rng.gen_bool(0.15) && !out.ends_with(' ') && width + SPACE_ADVANCE <= WIDTH {
            out.push(' ');
            width += SPACE_ADVANCE;
        }
        out.push_str(SYMBOLS[rng.gen_range(0..BITMAPS.len())]);
    }
    out
}

/// Five fixed text lines followed by one blank line.
pub fn fixture_texts() -> Vec<String> {
    ["ابت", "جدر سع", "فما", "بجس", "تفرم ا", ""]
        .into_iter()
        .map(String::from)
        .collect()
}

/// Writes `texts` as PNG lines plus `vocab.txt` and `manifest.tsv` under `dir`.
/// Line `i` is assigned writer `w{i % writers}`. Returns the manifest path.
pub fn write_corpus(dir: impl AsRef<Path>, texts: &[String], writers: usize) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    vocabulary().save(dir.join("vocab.txt"))?;
    let mut manifest = String::new();
    for (i, text) in texts.iter().enumerate() {
        let name = format!("line{i:03}.png");
        write_png(dir.join(&name), &render_line(text)?)?;
        manifest.push_str(&format!("{name}\tw{}\t{text}\n", i % writers.max(1)));
    }
    let path = dir.join("manifest.tsv");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
