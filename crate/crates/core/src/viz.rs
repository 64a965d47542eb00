//! Spatiotemporal attention images: per-step maps tinted by time and summed.

use crate::data::raster::resize_bilinear;
use crate::decoder::AttentionMap;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorVector {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl ColorVector {
    pub const YELLOW: ColorVector = ColorVector { r: 1.0, g: 1.0, b: 0.0 };
    pub const GREEN: ColorVector = ColorVector { r: 0.0, g: 1.0, b: 0.0 };

    /// Components clamped to `[0, 1]`.
    pub fn new(r: f64, g: f64, b: f64) -> Self {
        ColorVector {
            r: r.clamp(0.0, 1.0),
            g: g.clamp(0.0, 1.0),
            b: b.clamp(0.0, 1.0),
        }
    }

    pub fn lerp(self, other: ColorVector, t: f64) -> Self {
        ColorVector::new(
            (1.0 - t) * self.r + t * other.r,
            (1.0 - t) * self.g + t * other.g,
            (1.0 - t) * self.b + t * other.b,
        )
    }

    pub fn channels(self) -> [f64; 3] {
        [self.r, self.g, self.b]
    }
}

/// Normalized time of 1-based `step` out of `total`.
pub fn normalized_time(step: usize, total: usize) -> f64 {
    (step.saturating_sub(1)) as f64 / total.saturating_sub(1).max(1) as f64
}

/// Color of 1-based `step` out of `total`.
pub fn step_color(step: usize, total: usize, c0: ColorVector, c1: ColorVector) -> ColorVector {
    c0.lerp(c1, normalized_time(step, total))
}

fn check_maps(alphas: &[AttentionMap]) -> Result<(usize, usize)> {
    let first = alphas
        .first()
        .ok_or_else(|| Error::InvalidArgument("no attention maps to colorize".into()))?;
    for a in alphas {
        if (a.h, a.w) != (first.h, first.w) || a.weights.numel() != a.h * a.w {
            return Err(Error::shape(
                "colorize",
                format!("attention maps {}x{} and {}x{} differ", first.h, first.w, a.h, a.w),
            ));
        }
    }
    Ok((first.h, first.w))
}

/// `Σ_t c_t α_t` as an `[h, w, 3]` grid, before any display scaling.
pub fn colorize_raw(alphas: &[AttentionMap], c0: ColorVector, c1: ColorVector) -> Result<Tensor> {
    let (h, w) = check_maps(alphas)?;
    let mut out = Tensor::zeros(&[h, w, 3]);
    let total = alphas.len();
    for (t, a) in alphas.iter().enumerate() {
        let color = step_color(t + 1, total, c0, c1).channels();
        for (l, &weight) in a.weights.data().iter().enumerate() {
            for (ch, c) in color.iter().enumerate() {
                out.data_mut()[l * 3 + ch] += c * weight;
            }
        }
    }
    Ok(out)
}

/// [`colorize_raw`] divided by its largest component, then clamped to `[0, 1]`.
pub fn colorize_attention(alphas: &[AttentionMap], c0: ColorVector, c1: ColorVector) -> Result<Tensor> {
    let mut out = colorize_raw(alphas, c0, c1)?;
    let peak = out.data().iter().copied().fold(0.0, f64::max);
    for v in out.data_mut() {
        if peak > 0.0 {
            *v /= peak;
        }
        *v = v.clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Upsamples `colored` to the image extents and blends:
/// `out = (1 − o)·gray + o·clamp(gray + colored)`.
pub fn overlay(image: &Tensor, colored: &Tensor, opacity: f64) -> Result<Tensor> {
    let &[h, w, 1] = image.shape() else {
        return Err(Error::shape("overlay", format!("image must be [H, W, 1], got {:?}", image.shape())));
    };
    if colored.rank() != 3 || colored.shape()[2] != 3 {
        return Err(Error::shape("overlay", format!("colors must be [h, w, 3], got {:?}", colored.shape())));
    }
    if !(0.0..=1.0).contains(&opacity) {
        return Err(Error::InvalidArgument(format!("opacity {opacity} outside [0, 1]")));
    }
    let up = resize_bilinear(colored, h, w)?;
    let gray = image.data();
    Ok(Tensor::from_fn(&[h, w, 3], |i| {
        let g = gray[i / 3];
        (1.0 - opacity) * g + opacity * (g + up.data()[i]).clamp(0.0, 1.0)
    }))
}

/// One overlay per decoding step, each tinted with that step's color.
pub fn step_frames(image: &Tensor, alphas: &[AttentionMap], opacity: f64) -> Result<Vec<Tensor>> {
    let total = alphas.len();
    alphas
        .iter()
        .enumerate()
        .map(|(t, a)| {
            let color = step_color(t + 1, total, ColorVector::YELLOW, ColorVector::GREEN);
            let single = colorize_attention(std::slice::from_ref(a), color, color)?;
            overlay(image, &single, opacity)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn map(h: usize, w: usize, weights: Vec<f64>) -> AttentionMap {
        AttentionMap {
            h,
            w,
            weights: Tensor::new(&[h * w], weights).unwrap(),
        }
    }

    fn one_hot(h: usize, w: usize, l: usize) -> AttentionMap {
        let mut v = vec![0.0; h * w];
        v[l] = 1.0;
        map(h, w, v)
    }

    fn pixel(t: &Tensor, l: usize) -> [f64; 3] {
        let d = t.data();
        [d[3 * l], d[3 * l + 1], d[3 * l + 2]]
    }

    #[test]
    fn single_step_is_yellow() {
        let c = colorize_attention(&[one_hot(2, 3, 4)], ColorVector::YELLOW, ColorVector::GREEN).unwrap();
        assert_eq!(pixel(&c, 4), [1.0, 1.0, 0.0]);
        for l in (0..6).filter(|&l| l != 4) {
            assert_eq!(pixel(&c, l), [0.0; 3]);
        }
    }

    #[test]
    fn endpoints_and_midpoint_colors() {
        let maps = [one_hot(1, 3, 0), one_hot(1, 3, 1), one_hot(1, 3, 2)];
        let c = colorize_attention(&maps, ColorVector::YELLOW, ColorVector::GREEN).unwrap();
        assert_eq!(pixel(&c, 0), [1.0, 1.0, 0.0]);
        assert_eq!(pixel(&c, 1), [0.5, 1.0, 0.0]);
        assert_eq!(pixel(&c, 2), [0.0, 1.0, 0.0]);
        let mid = ColorVector::YELLOW.lerp(ColorVector::GREEN, 0.5);
        assert_eq!(mid, ColorVector { r: 0.5, g: 1.0, b: 0.0 });
        assert_eq!(normalized_time(1, 1), 0.0);
    }

    #[test]
    fn raw_colorization_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut rand_maps = || -> Vec<AttentionMap> {
            (0..3).map(|_| map(2, 2, (0..4).map(|_| rng.gen_range(0.0..1.0)).collect())).collect()
        };
        let (a, b) = (rand_maps(), rand_maps());
        let sum: Vec<AttentionMap> = a
            .iter()
            .zip(&b)
            .map(|(x, y)| map(2, 2, x.weights.data().iter().zip(y.weights.data()).map(|(p, q)| p + q).collect()))
            .collect();
        let (c0, c1) = (ColorVector::YELLOW, ColorVector::GREEN);
        let lhs = colorize_raw(&sum, c0, c1).unwrap();
        let ra = colorize_raw(&a, c0, c1).unwrap();
        let rb = colorize_raw(&b, c0, c1).unwrap();
        for i in 0..lhs.numel() {
            assert!((lhs.data()[i] - ra.data()[i] - rb.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn overlay_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let image = Tensor::from_fn(&[16, 40, 1], |_| rng.gen_range(0.0..1.0));
        let colored = Tensor::from_fn(&[2, 5, 3], |_| rng.gen_range(0.0..1.0));
        let gray_rgb = Tensor::from_fn(&[16, 40, 3], |i| image.data()[i / 3]);

        assert_eq!(overlay(&image, &colored, 0.0).unwrap(), gray_rgb);
        assert_eq!(overlay(&image, &Tensor::zeros(&[2, 5, 3]), 1.0).unwrap(), gray_rgb);
        let out = overlay(&image, &colored, 0.6).unwrap();
        assert_eq!(out.shape(), &[16, 40, 3]);
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(overlay(&image, &colored, 1.5).is_err());
    }

    #[test]
    fn frames_follow_the_step_colors() {
        let image = Tensor::zeros(&[8, 8, 1]);
        let frames = step_frames(&image, &[one_hot(1, 1, 0), one_hot(1, 1, 0)], 1.0).unwrap();
        assert_eq!(pixel(&frames[0], 0), [1.0, 1.0, 0.0]);
        assert_eq!(pixel(&frames[1], 0), [0.0, 1.0, 0.0]);
    }

    #[test]
    fn rejects_empty_or_mismatched_maps() {
        let (c0, c1) = (ColorVector::YELLOW, ColorVector::GREEN);
        assert!(colorize_attention(&[], c0, c1).is_err());
        assert!(colorize_attention(&[one_hot(1, 2, 0), one_hot(2, 1, 0)], c0, c1).is_err());
    }
}
