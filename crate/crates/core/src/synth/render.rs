//! Procedural lesion images and artifact overlays.
//!
//! The class signal lives entirely in lesion geometry and texture: benign-like
//! lesions are smooth ellipses with soft shading, melanoma-like lesions are
//! larger on average and have a harmonically perturbed border and a blotched,
//! speckled interior. Skin background and lesion position depend only on the seed, and overlays depend only on their
//! own seed, so an overlay is never informative about the label by itself.

use std::f32::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ArtifactKind;
use crate::error::{EpvtError, Result};
use crate::rng::{derive, rng_from};

pub const MIN_IMAGE_SIZE: usize = 16;

const TAG_SKIN: u64 = 0x51;
const TAG_PLACEMENT: u64 = 0x52;
const TAG_SHAPE: u64 = 0x53;

/// One rendered image, `size × size × 3` in row-major HWC order.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub pixels: Vec<f32>,
    pub size: usize,
    pub label: u8,
    pub domain: ArtifactKind,
    pub seed: u64,
}

impl ImageRecord {
    #[inline]
    pub fn offset(&self, y: usize, x: usize) -> usize {
        (y * self.size + x) * 3
    }

    pub fn rgb(&self, y: usize, x: usize) -> [f32; 3] {
        let o = self.offset(y, x);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    /// Mean over channels at one pixel.
    pub fn luma(&self, y: usize, x: usize) -> f32 {
        let [r, g, b] = self.rgb(y, x);
        (r + g + b) / 3.0
    }

    /// Mean brightness over the `h × w` patch whose top-left corner is `(y, x)`.
    pub fn patch_mean(&self, y: usize, x: usize, h: usize, w: usize) -> f32 {
        let mut acc = 0.0;
        for yy in y..y + h {
            for xx in x..x + w {
                acc += self.luma(yy, xx);
            }
        }
        acc / (h * w) as f32
    }
}

fn smoothstep(e0: f32, e1: f32, x: f32) -> f32 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn blend(px: &mut [f32], color: [f32; 3], alpha: f32) {
    for c in 0..3 {
        px[c] = px[c] * (1.0 - alpha) + color[c] * alpha;
    }
}

/// Lesion boundary radius as a function of angle.
enum Border {
    Ellipse { aspect: f32, tilt: f32 },
    Harmonic { terms: Vec<(f32, f32, f32)> },
}

impl Border {
    fn radius(&self, r0: f32, theta: f32) -> f32 {
        match self {
            Border::Ellipse { aspect, tilt } => {
                let (s, c) = (theta - tilt).sin_cos();
                let q = (c / aspect).powi(2) + (s * aspect).powi(2);
                r0 / q.sqrt()
            }
            Border::Harmonic { terms } => {
                let wobble: f32 = terms
                    .iter()
                    .map(|&(k, amp, phase)| amp * (k * theta + phase).cos())
                    .sum();
                r0 * (1.0 + wobble)
            }
        }
    }
}

/// Renders an artifact-free lesion image.
pub fn render_base_lesion(seed: u64, label: u8, size: usize) -> Result<ImageRecord> {
    if size < MIN_IMAGE_SIZE {
        return Err(EpvtError::InvalidConfig(format!(
            "image size {size} is below the minimum of {MIN_IMAGE_SIZE}"
        )));
    }
    if label > 1 {
        return Err(EpvtError::InvalidConfig(format!("label {label} is not binary")));
    }
    let s = size as f32;

    let mut skin_rng = rng_from(derive(seed, TAG_SKIN));
    let tone: f32 = skin_rng.random_range(-0.08..0.08);
    let skin = [
        0.82 + tone + skin_rng.random_range(-0.03..0.03),
        0.62 + tone + skin_rng.random_range(-0.03..0.03),
        0.52 + tone + skin_rng.random_range(-0.03..0.03),
    ];
    let wave_fx: f32 = skin_rng.random_range(0.5..2.0) * 2.0 * PI / s;
    let wave_fy: f32 = skin_rng.random_range(0.5..2.0) * 2.0 * PI / s;
    let wave_phase: f32 = skin_rng.random_range(0.0..2.0 * PI);

    let mut place_rng = rng_from(derive(seed, TAG_PLACEMENT));
    let cx = s / 2.0 + place_rng.random_range(-0.08..0.08) * s;
    let cy = s / 2.0 + place_rng.random_range(-0.08..0.08) * s;
    let r0 = place_rng.random_range(0.22..0.30) * s * if label == 1 { 1.15 } else { 0.9 };
    let darkness: f32 = place_rng.random_range(0.8..1.2);
    let lesion = [0.45 * darkness, 0.28 * darkness, 0.18 * darkness];

    let mut shape_rng = rng_from(derive(derive(seed, TAG_SHAPE), label as u64));
    let border = if label == 1 {
        Border::Harmonic {
            terms: (2..=7)
                .map(|k| {
                    (
                        k as f32,
                        shape_rng.random_range(0.07..0.12),
                        shape_rng.random_range(0.0..2.0 * PI),
                    )
                })
                .collect(),
        }
    } else {
        Border::Ellipse {
            aspect: shape_rng.random_range(0.92..1.08),
            tilt: shape_rng.random_range(0.0..PI),
        }
    };

    // Label 1 texture: a few dark or pale blotches inside the lesion.
    let blotches: Vec<(f32, f32, f32, f32)> = if label == 1 {
        let n = shape_rng.random_range(3..=5);
        (0..n)
            .map(|_| {
                let a = shape_rng.random_range(0.0..2.0 * PI);
                let d = shape_rng.random_range(0.0..0.7) * r0;
                let radius = shape_rng.random_range(0.15..0.3) * r0;
                let delta = if shape_rng.random_bool(0.65) {
                    -shape_rng.random_range(0.25..0.45)
                } else {
                    shape_rng.random_range(0.2..0.4)
                };
                (cx + d * a.cos(), cy + d * a.sin(), radius, delta)
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut pixels = vec![0.0f32; size * size * 3];
    for y in 0..size {
        for x in 0..size {
            let o = (y * size + x) * 3;
            let (fx, fy) = (x as f32 + 0.5, y as f32 + 0.5);
            let wave = 0.03 * (wave_fx * fx + wave_fy * fy + wave_phase).sin();
            let grain: f32 = skin_rng.random_range(-0.02..0.02);
            for c in 0..3 {
                pixels[o + c] = skin[c] + wave + grain;
            }

            let (dx, dy) = (fx - cx, fy - cy);
            let rho = (dx * dx + dy * dy).sqrt();
            let theta = dy.atan2(dx);
            let edge = border.radius(r0, theta);
            let mask = (edge - rho + 0.5).clamp(0.0, 1.0);
            if mask > 0.0 {
                let texture = if label == 1 {
                    let speck: f32 = shape_rng.random_range(-0.2..0.2);
                    let blotch: f32 = blotches
                        .iter()
                        .map(|&(bx, by, r, delta)| {
                            let q = ((fx - bx).powi(2) + (fy - by).powi(2)) / (2.0 * r * r);
                            delta * (-q).exp()
                        })
                        .sum();
                    (1.0 + speck + blotch).max(0.2)
                } else {
                    1.0 - 0.15 * (1.0 - (rho / edge).min(1.0))
                };
                let color = [lesion[0] * texture, lesion[1] * texture, lesion[2] * texture];
                blend(&mut pixels[o..o + 3], color, mask);
            }
        }
    }
    for p in &mut pixels {
        *p = p.clamp(0.0, 1.0);
    }

    Ok(ImageRecord {
        pixels,
        size,
        label,
        domain: ArtifactKind::Clean,
        seed,
    })
}

/// Image edge carrying the ruler graduation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    Top,
    Bottom,
    Left,
    Right,
}

/// Edge used by the ruler overlay drawn with `seed`.
pub fn ruler_edge(seed: u64) -> Edge {
    match overlay_rng(ArtifactKind::Ruler, seed).random_range(0..4u8) {
        0 => Edge::Top,
        1 => Edge::Bottom,
        2 => Edge::Left,
        _ => Edge::Right,
    }
}

fn overlay_rng(kind: ArtifactKind, seed: u64) -> ChaCha8Rng {
    rng_from(derive(seed, 0xA0 + kind.index() as u64))
}

/// Returns a copy of a clean image with the `kind` overlay drawn on it.
///
/// `Clean` is the identity. Applying an overlay to an image that already has
/// one is rejected.
pub fn apply_artifact(image: &ImageRecord, kind: ArtifactKind, seed: u64) -> Result<ImageRecord> {
    if image.domain != ArtifactKind::Clean {
        return Err(EpvtError::DoubleOverlay(image.domain.to_string()));
    }
    let mut out = image.clone();
    draw_overlay(&mut out.pixels, out.size, kind, seed);
    out.domain = kind;
    Ok(out)
}

/// Draws an overlay in place without touching any domain bookkeeping.
pub(crate) fn draw_overlay(pixels: &mut [f32], size: usize, kind: ArtifactKind, seed: u64) {
    let mut rng = overlay_rng(kind, seed);
    match kind {
        ArtifactKind::Clean => return,
        ArtifactKind::DarkCorner => dark_corner(pixels, size, &mut rng),
        ArtifactKind::Hair => hair(pixels, size, &mut rng),
        ArtifactKind::GelBubble => gel_bubbles(pixels, size, &mut rng),
        ArtifactKind::Ruler => ruler(pixels, size, &mut rng),
    }
    for p in pixels.iter_mut() {
        *p = p.clamp(0.0, 1.0);
    }
}

fn dark_corner(pixels: &mut [f32], size: usize, rng: &mut ChaCha8Rng) {
    let s = size as f32;
    let onset: f32 = rng.random_range(0.62..0.72);
    let strength: f32 = rng.random_range(0.65..0.9);
    let half_diag = s / 2.0 * std::f32::consts::SQRT_2;
    for y in 0..size {
        for x in 0..size {
            let dx = x as f32 + 0.5 - s / 2.0;
            let dy = y as f32 + 0.5 - s / 2.0;
            let rn = (dx * dx + dy * dy).sqrt() / half_diag;
            let shade = smoothstep(onset, 1.0, rn);
            if shade > 0.0 {
                let factor = 1.0 - strength * shade;
                let o = (y * size + x) * 3;
                for c in 0..3 {
                    pixels[o + c] *= factor;
                }
            }
        }
    }
}

fn border_point(rng: &mut ChaCha8Rng, s: f32) -> (f32, f32) {
    let t: f32 = rng.random_range(0.0..s);
    match rng.random_range(0..4u8) {
        0 => (t, 0.0),
        1 => (t, s),
        2 => (0.0, t),
        _ => (s, t),
    }
}

fn hair(pixels: &mut [f32], size: usize, rng: &mut ChaCha8Rng) {
    let s = size as f32;
    let strokes = rng.random_range(2..=5);
    let samples = size * 4;
    for _ in 0..strokes {
        let p0 = border_point(rng, s);
        let p2 = border_point(rng, s);
        let p1 = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        let width: f32 = rng.random_range(0.6..1.1);
        let shade: f32 = rng.random_range(0.6..1.0);
        let color = [0.10 * shade, 0.07 * shade, 0.05 * shade];
        let curve: Vec<(f32, f32)> = (0..=samples)
            .map(|i| {
                let t = i as f32 / samples as f32;
                let u = 1.0 - t;
                (
                    u * u * p0.0 + 2.0 * u * t * p1.0 + t * t * p2.0,
                    u * u * p0.1 + 2.0 * u * t * p1.1 + t * t * p2.1,
                )
            })
            .collect();
        for y in 0..size {
            for x in 0..size {
                let (fx, fy) = (x as f32 + 0.5, y as f32 + 0.5);
                let d2 = curve
                    .iter()
                    .map(|&(cx, cy)| (cx - fx).powi(2) + (cy - fy).powi(2))
                    .fold(f32::INFINITY, f32::min);
                let alpha = (width + 0.5 - d2.sqrt()).clamp(0.0, 1.0) * 0.9;
                if alpha > 0.0 {
                    let o = (y * size + x) * 3;
                    blend(&mut pixels[o..o + 3], color, alpha);
                }
            }
        }
    }
}

fn gel_bubbles(pixels: &mut [f32], size: usize, rng: &mut ChaCha8Rng) {
    let s = size as f32;
    let count = rng.random_range(1..=3);
    for _ in 0..count {
        let r: f32 = rng.random_range(2.0..(0.15 * s).max(2.5));
        let cx: f32 = rng.random_range(0.0..s);
        let cy: f32 = rng.random_range(0.0..s);
        for y in 0..size {
            for x in 0..size {
                let dx = x as f32 + 0.5 - cx;
                let dy = y as f32 + 0.5 - cy;
                let rho = (dx * dx + dy * dy).sqrt();
                let o = (y * size + x) * 3;
                if rho < r - 0.8 {
                    let alpha = 0.2 + 0.55 * (1.0 - (rho / r).powi(2));
                    blend(&mut pixels[o..o + 3], [0.97, 0.97, 0.95], alpha);
                } else if (rho - r).abs() <= 0.8 {
                    for c in 0..3 {
                        pixels[o + c] *= 0.55;
                    }
                }
            }
        }
    }
}

fn ruler(pixels: &mut [f32], size: usize, rng: &mut ChaCha8Rng) {
    let edge = match rng.random_range(0..4u8) {
        0 => Edge::Top,
        1 => Edge::Bottom,
        2 => Edge::Left,
        _ => Edge::Right,
    };
    let spacing = rng.random_range(3..=4usize);
    let offset = rng.random_range(0..spacing);
    let strip = 3usize;
    // (along, depth) → (y, x)
    let at = |along: usize, depth: usize| -> usize {
        let (y, x) = match edge {
            Edge::Top => (depth, along),
            Edge::Bottom => (size - 1 - depth, along),
            Edge::Left => (along, depth),
            Edge::Right => (along, size - 1 - depth),
        };
        (y * size + x) * 3
    };
    for along in 0..size {
        for depth in 0..strip {
            let o = at(along, depth);
            blend(&mut pixels[o..o + 3], [0.92, 0.91, 0.86], 0.85);
        }
    }
    let mut tick = 0usize;
    let mut along = offset;
    while along < size {
        let len = if tick % 2 == 0 { 3 } else { 2 };
        for depth in 0..len {
            let o = at(along, depth);
            blend(&mut pixels[o..o + 3], [0.08, 0.08, 0.08], 0.95);
        }
        tick += 1;
        along += spacing;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_lesion_shape_and_range() {
        let img = render_base_lesion(0, 0, 32).unwrap();
        assert_eq!(img.pixels.len(), 32 * 32 * 3);
        assert_eq!(img.domain, ArtifactKind::Clean);
        assert!(img.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn base_lesion_is_deterministic() {
        let a = render_base_lesion(0, 1, 32).unwrap();
        let b = render_base_lesion(0, 1, 32).unwrap();
        assert_eq!(a.pixels, b.pixels);
    }

    #[test]
    fn small_sizes_are_rejected() {
        assert!(matches!(
            render_base_lesion(0, 0, 15),
            Err(EpvtError::InvalidConfig(_))
        ));
        assert!(render_base_lesion(0, 2, 32).is_err());
    }

    #[test]
    fn clean_overlay_is_identity() {
        let img = render_base_lesion(3, 1, 32).unwrap();
        let out = apply_artifact(&img, ArtifactKind::Clean, 99).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn double_overlay_is_rejected() {
        let img = render_base_lesion(3, 0, 32).unwrap();
        let hair = apply_artifact(&img, ArtifactKind::Hair, 1).unwrap();
        assert_eq!(hair.domain, ArtifactKind::Hair);
        assert!(matches!(
            apply_artifact(&hair, ArtifactKind::Ruler, 1),
            Err(EpvtError::DoubleOverlay(_))
        ));
    }

    #[test]
    fn dark_corner_darkens_corners_only() {
        let img = render_base_lesion(5, 0, 32).unwrap();
        let out = apply_artifact(&img, ArtifactKind::DarkCorner, 1).unwrap();
        for (y, x) in [(0, 0), (0, 28), (28, 0), (28, 28)] {
            assert!(out.patch_mean(y, x, 4, 4) < img.patch_mean(y, x, 4, 4));
        }
        let before = img.patch_mean(14, 14, 4, 4);
        let after = out.patch_mean(14, 14, 4, 4);
        assert!((before - after).abs() <= 1e-6);
    }

    #[test]
    fn ruler_edge_matches_overlay() {
        // The reported edge is the one that gets the light strip.
        for seed in 0..8 {
            let img = render_base_lesion(11, 0, 32).unwrap();
            let out = apply_artifact(&img, ArtifactKind::Ruler, seed).unwrap();
            let (y, x) = match ruler_edge(seed) {
                Edge::Top => (0, 16),
                Edge::Bottom => (31, 16),
                Edge::Left => (16, 0),
                Edge::Right => (16, 31),
            };
            let changed = (0..3).any(|c| {
                let o = out.offset(y, x) + c;
                (out.pixels[o] - img.pixels[o]).abs() > 1e-3
            });
            assert!(changed, "seed {seed}");
        }
    }

    #[test]
    fn every_overlay_stays_in_range() {
        let img = render_base_lesion(8, 1, 24).unwrap();
        for kind in ArtifactKind::ALL {
            let out = apply_artifact(&img, kind, 4).unwrap();
            assert!(out.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
            assert_eq!(out.domain, kind);
        }
    }
}
