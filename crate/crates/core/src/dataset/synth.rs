//! Procedural handwritten-digit corpus.
//!
//! Renders stroke-skeleton glyphs for the ten digit classes at 28x28 with
//! seeded per-example affine jitter (rotation, scale, shear, shift), stroke
//! thickness, and ink-level variation. The output is deliberately MNIST-like:
//! `[0, 1]` grayscale images on black backgrounds with balanced classes, so
//! the full train / attack / evaluate pipeline can run in environments where
//! the real MNIST IDX files are not available.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{idx, LabeledImageSet, Split};
use crate::error::Result;
use crate::rng::seeded_rng;

pub const SIDE: usize = 28;
pub const DIM: usize = SIDE * SIDE;

type Point = (f64, f64);

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64) -> Vec<Point> {
    let n = 24;
    (0..=n)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from_deg: f64, to_deg: f64) -> Vec<Point> {
    let n = 14;
    (0..=n)
        .map(|i| {
            let a = (from_deg + (to_deg - from_deg) * i as f64 / n as f64).to_radians();
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

/// Stroke skeleton of a digit as polylines in the unit glyph box
/// (x right, y down).
fn skeleton(digit: u8) -> Vec<Vec<Point>> {
    match digit {
        0 => vec![ellipse(0.5, 0.5, 0.26, 0.36)],
        1 => vec![vec![(0.35, 0.3), (0.52, 0.13), (0.52, 0.88)]],
        2 => vec![{
            let mut p = arc(0.5, 0.32, 0.25, 0.2, 175.0, 360.0);
            p.extend([(0.75, 0.4), (0.3, 0.86), (0.27, 0.87), (0.76, 0.87)]);
            p
        }],
        3 => vec![{
            let mut p = arc(0.47, 0.3, 0.24, 0.18, 160.0, 380.0);
            p.push((0.52, 0.5));
            p.extend(arc(0.47, 0.67, 0.27, 0.2, 280.0, 520.0));
            p
        }],
        4 => vec![
            vec![(0.62, 0.12), (0.24, 0.58), (0.8, 0.58)],
            vec![(0.62, 0.12), (0.62, 0.88)],
        ],
        5 => vec![{
            let mut p = vec![(0.72, 0.13), (0.31, 0.13), (0.3, 0.45)];
            p.extend(arc(0.48, 0.64, 0.24, 0.22, 250.0, 480.0));
            p
        }],
        6 => vec![{
            let mut p = vec![(0.66, 0.13), (0.44, 0.3), (0.33, 0.55), (0.33, 0.7)];
            p.extend(ellipse(0.51, 0.67, 0.18, 0.19));
            p
        }],
        7 => vec![vec![(0.24, 0.14), (0.78, 0.14), (0.44, 0.88)]],
        8 => vec![ellipse(0.5, 0.31, 0.2, 0.17), ellipse(0.5, 0.67, 0.24, 0.2)],
        9 => vec![{
            let mut p = ellipse(0.48, 0.33, 0.19, 0.18);
            p.extend([(0.67, 0.33), (0.64, 0.65), (0.56, 0.88)]);
            p
        }],
        _ => unreachable!("digit out of range"),
    }
}

struct Jitter {
    rot: f64,
    scale_x: f64,
    scale_y: f64,
    shear: f64,
    dx: f64,
    dy: f64,
    thickness: f64,
    gain: f64,
}

impl Jitter {
    fn sample(rng: &mut ChaCha8Rng) -> Jitter {
        Jitter {
            rot: rng.random_range(-0.22..0.22),
            scale_x: rng.random_range(0.8..1.1),
            scale_y: rng.random_range(0.8..1.1),
            shear: rng.random_range(-0.18..0.18),
            dx: rng.random_range(-1.8..1.8),
            dy: rng.random_range(-1.8..1.8),
            thickness: rng.random_range(1.1..2.1),
            gain: rng.random_range(0.82..1.0),
        }
    }

    /// Glyph-box point to pixel coordinates.
    fn apply(&self, p: Point) -> Point {
        let (mut x, mut y) = (p.0 - 0.5, p.1 - 0.5);
        x += self.shear * y;
        x *= self.scale_x * 21.0;
        y *= self.scale_y * 21.0;
        let (s, c) = self.rot.sin_cos();
        let (rx, ry) = (c * x - s * y, s * x + c * y);
        (rx + 14.0 + self.dx, ry + 14.0 + self.dy)
    }
}

fn dist_to_segment(p: Point, a: Point, b: Point) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0)
    };
    let (dx, dy) = (wx - t * vx, wy - t * vy);
    (dx * dx + dy * dy).sqrt()
}

/// Render one digit with the given per-example jitter into u8 pixels.
fn render(digit: u8, jitter: &Jitter, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let strokes: Vec<Vec<Point>> = skeleton(digit)
        .into_iter()
        .map(|poly| poly.into_iter().map(|p| jitter.apply(p)).collect())
        .collect();
    let mut out = vec![0u8; DIM];
    let half = jitter.thickness / 2.0;
    for py in 0..SIDE {
        for px in 0..SIDE {
            let p = (px as f64 + 0.5, py as f64 + 0.5);
            let mut d = f64::INFINITY;
            for poly in &strokes {
                for seg in poly.windows(2) {
                    d = d.min(dist_to_segment(p, seg[0], seg[1]));
                }
            }
            // 1px antialiased edge around the stroke.
            let alpha = ((half + 0.5 - d).clamp(0.0, 1.0)) * jitter.gain;
            if alpha > 0.0 {
                let ink = alpha * (1.0 - rng.random_range(0.0..0.08));
                out[py * SIDE + px] = (ink * 255.0).round() as u8;
            }
        }
    }
    out
}

/// Generate `count` labeled examples with balanced random classes.
pub fn generate(count: usize, seed: u64, split: Split) -> LabeledImageSet {
    let tag = match split {
        Split::Train => "synth-train",
        Split::Validation => "synth-validation",
    };
    let mut rng = seeded_rng(seed, tag);
    let mut pixels = Vec::with_capacity(count * DIM);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let digit = rng.random_range(0..10u8);
        let jitter = Jitter::sample(&mut rng);
        let img = render(digit, &jitter, &mut rng);
        pixels.extend(img.iter().map(|&b| f32::from(b) / 255.0));
        labels.push(digit);
    }
    LabeledImageSet::new(pixels, DIM, labels, split).expect("generator invariants")
}

/// Materialize a train/validation corpus as IDX files under `dir`.
///
/// Returns (train images, train labels, val images, val labels) paths.
pub fn write_corpus(
    dir: &Path,
    train_count: usize,
    val_count: usize,
    seed: u64,
) -> Result<(PathBuf, PathBuf, PathBuf, PathBuf)> {
    let train = generate(train_count, seed, Split::Train);
    let val = generate(val_count, seed, Split::Validation);
    let ti = dir.join("train-images-idx3-ubyte");
    let tl = dir.join("train-labels-idx1-ubyte");
    let vi = dir.join("val-images-idx3-ubyte");
    let vl = dir.join("val-labels-idx1-ubyte");
    idx::write_images(&ti, SIDE, SIDE, &train.to_bytes())?;
    idx::write_labels(&tl, train.labels())?;
    idx::write_images(&vi, SIDE, SIDE, &val.to_bytes())?;
    idx::write_labels(&vl, val.labels())?;
    Ok((ti, tl, vi, vl))
}
