//! Label-preserving augmentations applied to training images.

use rand::Rng;

use super::AugmentConfig;
use crate::synth::ImageRecord;

pub fn hflip(img: &ImageRecord) -> ImageRecord {
    remap(img, |y, x| (y, img.size - 1 - x))
}

pub fn vflip(img: &ImageRecord) -> ImageRecord {
    remap(img, |y, x| (img.size - 1 - y, x))
}

fn remap(img: &ImageRecord, src: impl Fn(usize, usize) -> (usize, usize)) -> ImageRecord {
    let mut out = img.clone();
    for y in 0..img.size {
        for x in 0..img.size {
            let (sy, sx) = src(y, x);
            let (o, s) = (img.offset(y, x), img.offset(sy, sx));
            out.pixels[o..o + 3].copy_from_slice(&img.pixels[s..s + 3]);
        }
    }
    out
}

/// Rotates by `degrees` about the image center with bilinear
/// sampling; samples falling outside the image take the nearest edge pixel.
pub fn rotate(img: &ImageRecord, degrees: f64) -> ImageRecord {
    let n = img.size;
    let c = (n as f64 - 1.0) / 2.0;
    let (sin, cos) = degrees.to_radians().sin_cos();
    let last = (n - 1) as f64;
    let mut out = img.clone();
    for y in 0..n {
        for x in 0..n {
            let (dy, dx) = (y as f64 - c, x as f64 - c);
            // Inverse rotation maps each output pixel back into the source.
            let sx = (cos * dx - sin * dy + c).clamp(0.0, last);
            let sy = (sin * dx + cos * dy + c).clamp(0.0, last);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(n - 1), (y0 + 1).min(n - 1));
            let (fx, fy) = ((sx - x0 as f64) as f32, (sy - y0 as f64) as f32);
            let o = img.offset(y, x);
            for ch in 0..3 {
                let p = |yy: usize, xx: usize| img.pixels[img.offset(yy, xx) + ch];
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out.pixels[o + ch] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

/// Multiplies each channel by its own gain, clamping to `[0, 1]`.
pub fn color_gain(img: &ImageRecord, gains: [f32; 3]) -> ImageRecord {
    let mut out = img.clone();
    for px in out.pixels.chunks_exact_mut(3) {
        for (v, g) in px.iter_mut().zip(gains) {
            *v = (*v * g).clamp(0.0, 1.0);
        }
    }
    out
}

/// Applies the enabled transforms in a fixed order: flips, rotation, color.
/// Draws the same number of random values whatever the outcome, so the
/// stream position after each image depends only on the configuration.
pub fn augment<R: Rng + ?Sized>(img: &ImageRecord, cfg: &AugmentConfig, rng: &mut R) -> ImageRecord {
    let mut out = img.clone();
    if cfg.hflip && rng.random_bool(0.5) {
        out = hflip(&out);
    }
    if cfg.vflip && rng.random_bool(0.5) {
        out = vflip(&out);
    }
    if cfg.rotation_deg > 0.0 {
        let deg = rng.random_range(-cfg.rotation_deg..=cfg.rotation_deg);
        out = rotate(&out, deg);
    }
    if cfg.color_jitter > 0.0 {
        let j = cfg.color_jitter;
        let gains = std::array::from_fn(|_| 1.0 + rng.random_range(-j..=j) as f32);
        out = color_gain(&out, gains);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use crate::synth::{apply_artifact, render_base_lesion, ArtifactKind};

    fn image() -> ImageRecord {
        let base = render_base_lesion(5, 1, 32).unwrap();
        apply_artifact(&base, ArtifactKind::Ruler, 9).unwrap()
    }

    #[test]
    fn flips_are_involutions() {
        let img = image();
        assert_eq!(hflip(&hflip(&img)), img);
        assert_eq!(vflip(&vflip(&img)), img);
        assert_ne!(hflip(&img), img);
    }

    #[test]
    fn zero_rotation_is_identity() {
        let img = image();
        let r = rotate(&img, 0.0);
        for (a, b) in r.pixels.iter().zip(&img.pixels) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn quarter_turn_matches_transpose_flip() {
        let img = image();
        let r = rotate(&img, 90.0);
        let n = img.size;
        for y in 0..n {
            for x in 0..n {
                // A quarter turn reads output (y, x) from source (x, n-1-y).
                let want = img.rgb(x, n - 1 - y);
                let got = r.rgb(y, x);
                for ch in 0..3 {
                    assert!((want[ch] - got[ch]).abs() < 1e-4, "({y},{x})");
                }
            }
        }
    }

    #[test]
    fn augment_keeps_labels_and_range() {
        let img = image();
        let mut rng = rng_from(3);
        for _ in 0..20 {
            let a = augment(&img, &AugmentConfig::default(), &mut rng);
            assert_eq!((a.label, a.domain, a.size), (img.label, img.domain, img.size));
            assert!(a.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let same = augment(&img, &AugmentConfig::none(), &mut rng);
        assert_eq!(same, img);
    }
}
