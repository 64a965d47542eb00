//! Grayscale line images as `[H, W, 1]` tensors in `[0, 1]`, ink dark.

use std::fs;
use std::path::Path;

use image::ImageReader;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_HEIGHT: usize = 100;
pub const DEFAULT_WIDTH: usize = 800;
/// Images narrower than this are padded to twice their width before resizing.
pub const NARROW_WIDTH: usize = 300;

fn extents(image: &Tensor) -> Result<(usize, usize)> {
    match image.shape() {
        [h, w, 1] => Ok((*h, *w)),
        other => Err(Error::shape("raster", format!("expected [H, W, 1], got {other:?}"))),
    }
}

/// Reads PNG, PGM or PPM into a grayscale tensor scaled to `[0, 1]`.
pub fn load_gray(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::Image {
            path: path.to_path_buf(),
            reason: "zero-area image".into(),
        });
    }
    let data = img.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect();
    Tensor::new(&[h as usize, w as usize, 1], data)
}

pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a binary PGM (P5) for `[H, W, 1]` or PPM (P6) for `[H, W, 3]`.
pub fn write_pnm(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let (h, w, magic) = match image.shape() {
        [h, w, 1] => (*h, *w, "P5"),
        [h, w, 3] => (*h, *w, "P6"),
        other => return Err(Error::shape("write_pnm", format!("expected 1 or 3 channels, got {other:?}"))),
    };
    let mut bytes = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    bytes.extend(image.data().iter().map(|&v| to_u8(v)));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes an 8-bit PNG with one or three channels.
pub fn write_png(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let (h, w, color) = match image.shape() {
        [h, w, 1] => (*h, *w, image::ExtendedColorType::L8),
        [h, w, 3] => (*h, *w, image::ExtendedColorType::Rgb8),
        other => return Err(Error::shape("write_png", format!("expected 1 or 3 channels, got {other:?}"))),
    };
    let bytes: Vec<u8> = image.data().iter().map(|&v| to_u8(v)).collect();
    image::save_buffer(path, &bytes, w as u32, h as u32, color).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Reads an 8-bit RGB raster back as `[H, W, 3]` in `[0, 1]`.
pub fn load_rgb(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect();
    Tensor::new(&[h as usize, w as usize, 3], data)
}

/// Pads left and right with white to `2W`, splitting the extra width evenly
/// (the odd column goes right).
pub fn pad_narrow(image: &Tensor) -> Result<Tensor> {
    let (h, w) = extents(image)?;
    let left = w / 2;
    let out_w = 2 * w;
    let src = image.data();
    Ok(Tensor::from_fn(&[h, out_w, 1], |i| {
        let (y, x) = (i / out_w, i % out_w);
        if x >= left && x < left + w {
            src[y * w + x - left]
        } else {
            1.0
        }
    }))
}

/// Bilinear resize with half-pixel centers; same-size input is passed through exactly.
pub fn resize_bilinear(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let shape = image.shape();
    if shape.len() != 3 || out_h == 0 || out_w == 0 {
        return Err(Error::shape("resize", format!("{shape:?} -> {out_h}x{out_w}")));
    }
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    if (h, w) == (out_h, out_w) {
        return Ok(image.clone());
    }
    let src = image.data();
    let axis = |o: usize, n_out: usize, n_in: usize| {
        let pos = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, pos - lo as f64)
    };
    let cols: Vec<_> = (0..out_w).map(|x| axis(x, out_w, w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for y in 0..out_h {
        let (y0, y1, fy) = axis(y, out_h, h);
        for &(x0, x1, fx) in &cols {
            for ch in 0..c {
                let at = |yy: usize, xx: usize| src[(yy * w + xx) * c + ch];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new(&[out_h, out_w, c], out)
}

/// Narrow-image padding, bilinear resize to `target_h × target_w`, clamp to `[0, 1]`.
pub fn preprocess(image: &Tensor, target_h: usize, target_w: usize) -> Result<Tensor> {
    let (_, w) = extents(image)?;
    let padded;
    let source = if w < NARROW_WIDTH {
        padded = pad_narrow(image)?;
        &padded
    } else {
        image
    };
    let mut out = resize_bilinear(source, target_h, target_w)?;
    for v in out.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaltPepper {
    /// Probability that a pixel is replaced.
    pub amount: f64,
    /// Share of replaced pixels set to white; the rest become black.
    pub salt_fraction: f64,
}

impl Default for SaltPepper {
    fn default() -> Self {
        SaltPepper {
            amount: 0.04,
            salt_fraction: 0.2,
        }
    }
}

impl SaltPepper {
    pub fn apply<R: Rng + ?Sized>(&self, image: &Tensor, rng: &mut R) -> Tensor {
        let mut out = image.clone();
        if self.amount <= 0.0 {
            return out;
        }
        for v in out.data_mut() {
            if rng.gen::<f64>() < self.amount {
                *v = if rng.gen::<f64>() < self.salt_fraction { 1.0 } else { 0.0 };
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_image(h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[h, w, 1], |_| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn narrow_images_are_padded_white_on_both_sides() {
        let img = Tensor::zeros(&[2, 5, 1]);
        let p = pad_narrow(&img).unwrap();
        assert_eq!(p.shape(), &[2, 10, 1]);
        let row: Vec<f64> = p.data()[..10].to_vec();
        assert_eq!(row, [1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn preprocess_examples() {
        let img = random_image(100, 250, 1);
        let out = preprocess(&img, 100, 800).unwrap();
        assert_eq!(out.shape(), &[100, 800, 1]);
        let direct = resize_bilinear(&pad_narrow(&img).unwrap(), 100, 800).unwrap();
        assert_eq!(out, direct);

        let exact = random_image(100, 800, 2);
        assert_eq!(preprocess(&exact, 100, 800).unwrap(), exact);

        let wide = random_image(37, 1234, 3);
        let out = preprocess(&wide, 100, 800).unwrap();
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn bilinear_resize_preserves_constants_and_linear_ramps() {
        let flat = Tensor::full(&[7, 9, 1], 0.3);
        let out = resize_bilinear(&flat, 20, 31).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.3).abs() < 1e-15));

        // a horizontal ramp doubled in width keeps interior samples on the line
        let ramp = Tensor::from_fn(&[1, 4, 1], |i| i as f64);
        let out = resize_bilinear(&ramp, 1, 8).unwrap();
        assert_eq!(out.data(), &[0.0, 0.25, 0.75, 1.25, 1.75, 2.25, 2.75, 3.0]);
    }

    #[test]
    fn salt_pepper_statistics() {
        let img = Tensor::full(&[100, 1000, 1], 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = SaltPepper::default().apply(&img, &mut rng);
        let altered: Vec<f64> = out.data().iter().copied().filter(|&v| v != 0.5).collect();
        assert!(altered.iter().all(|&v| v == 0.0 || v == 1.0));
        let frac = altered.len() as f64 / 100_000.0;
        assert!((frac - 0.04).abs() < 0.005, "{frac}");
        let salt = altered.iter().filter(|&&v| v == 1.0).count() as f64 / altered.len() as f64;
        assert!((salt - 0.2).abs() < 0.03, "{salt}");

        let none = SaltPepper { amount: 0.0, ..Default::default() };
        assert_eq!(none.apply(&img, &mut rng), img);
    }

    #[test]
    fn salt_pepper_is_reproducible() {
        let img = random_image(10, 10, 5);
        let sp = SaltPepper { amount: 0.3, salt_fraction: 0.5 };
        let a = sp.apply(&img, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sp.apply(&img, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn written_rasters_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let rgb = Tensor::from_fn(&[5, 7, 3], |_| f64::from(rng.gen::<u8>()) / 255.0);
        let gray = Tensor::from_fn(&[5, 7, 1], |_| f64::from(rng.gen::<u8>()) / 255.0);

        let ppm = dir.path().join("a.ppm");
        write_pnm(&ppm, &rgb).unwrap();
        assert_eq!(load_rgb(&ppm).unwrap(), rgb);
        let png = dir.path().join("a.png");
        write_png(&png, &rgb).unwrap();
        assert_eq!(load_rgb(&png).unwrap(), rgb);

        let pgm = dir.path().join("g.pgm");
        write_pnm(&pgm, &gray).unwrap();
        assert_eq!(load_gray(&pgm).unwrap(), gray);
        let gpng = dir.path().join("g.png");
        write_png(&gpng, &gray).unwrap();
        assert_eq!(load_gray(&gpng).unwrap(), gray);
    }

    #[test]
    fn unreadable_images_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.png");
        fs::write(&bad, b"not an image").unwrap();
        let err = load_gray(&bad).unwrap_err().to_string();
        assert!(err.contains("bad.png"), "{err}");
        assert!(load_gray(dir.path().join("missing.png")).is_err());
    }
}
