//! Procedural concrete-like textures with optional dark crack polylines.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

use super::io::save_image;
use super::{Label, Sample};

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Smoothly interpolated lattice noise in `[-1, 1]`, `cells` per side.
fn value_noise(rng: &mut ChaCha8Rng, size: usize, cells: usize) -> Vec<f64> {
    let g = cells + 1;
    let lattice: Vec<f64> = (0..g * g).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        let gy = y as f64 / size as f64 * cells as f64;
        let (y0, ty) = (gy.floor() as usize, smooth(gy.fract()));
        for x in 0..size {
            let gx = x as f64 / size as f64 * cells as f64;
            let (x0, tx) = (gx.floor() as usize, smooth(gx.fract()));
            let at = |yy: usize, xx: usize| lattice[yy * g + xx];
            let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
            let bot = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

/// Gray luminance field: base level, two noise octaves, speckle, and sparse
/// small pits.
fn texture(rng: &mut ChaCha8Rng, size: usize) -> Vec<f64> {
    let base = rng.random_range(0.45..0.70);
    let coarse = value_noise(rng, size, 5);
    let fine = value_noise(rng, size, 23);
    let mut lum: Vec<f64> = coarse
        .iter()
        .zip(&fine)
        .map(|(c, f)| base + 0.08 * c + 0.035 * f + rng.random_range(-0.05..0.05))
        .collect();
    let pits = (size * size) / 2000;
    for _ in 0..pits {
        let (px, py) = (rng.random_range(0..size), rng.random_range(0..size));
        let depth = rng.random_range(0.05..0.15);
        lum[py * size + px] -= depth;
    }
    lum
}

struct Stroke {
    points: Vec<(f64, f64)>,
    width: f64,
}

/// Random walk from an edge toward the far side, ending when it leaves the
/// frame.
fn walk(rng: &mut ChaCha8Rng, size: usize, start: (f64, f64), heading: f64, max_steps: usize) -> Vec<(f64, f64)> {
    let s = size as f64;
    let step = s / 16.0;
    let mut pts = vec![start];
    let (mut x, mut y, mut a) = (start.0, start.1, heading);
    for _ in 0..max_steps {
        a += rng.random_range(-0.35..0.35);
        x += step * a.cos();
        y += step * a.sin();
        pts.push((x, y));
        if !(-step..=s + step).contains(&x) || !(-step..=s + step).contains(&y) {
            break;
        }
    }
    pts
}

fn crack_strokes(rng: &mut ChaCha8Rng, size: usize) -> Vec<Stroke> {
    let s = size as f64;
    let edge = rng.random_range(0..4);
    let t = rng.random_range(0.1..0.9) * s;
    let start = match edge {
        0 => (t, 0.0),
        1 => (s - 1.0, t),
        2 => (t, s - 1.0),
        _ => (0.0, t),
    };
    let to_center = (s / 2.0 - start.1).atan2(s / 2.0 - start.0);
    let heading = to_center + rng.random_range(-0.5..0.5);
    let width: f64 = rng.random_range(1.0..5.0);
    let main = walk(rng, size, start, heading, 40);
    let mut strokes = vec![];
    if rng.random_bool(0.5) && main.len() > 3 {
        let from = main[rng.random_range(1..main.len() - 1)];
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let turn = side * rng.random_range(0.5..1.2);
        let branch = walk(rng, size, from, heading + turn, 10);
        strokes.push(Stroke { points: branch, width: (width * 0.6).max(1.0) });
    }
    strokes.push(Stroke { points: main, width });
    strokes
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) };
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

/// Per-pixel crack coverage in `[0, 1]` with a one-pixel soft edge.
fn coverage(strokes: &[Stroke], size: usize) -> Vec<f64> {
    let mut cov = vec![0.0f64; size * size];
    for st in strokes {
        let r = st.width / 2.0 + 0.5;
        for seg in st.points.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let lo_x = (a.0.min(b.0) - r).floor().max(0.0) as usize;
            let hi_x = ((a.0.max(b.0) + r).ceil().max(0.0) as usize).min(size - 1);
            let lo_y = (a.1.min(b.1) - r).floor().max(0.0) as usize;
            let hi_y = ((a.1.max(b.1) + r).ceil().max(0.0) as usize).min(size - 1);
            if lo_x > hi_x || lo_y > hi_y {
                continue;
            }
            for y in lo_y..=hi_y {
                for x in lo_x..=hi_x {
                    let d = segment_distance((x as f64, y as f64), a, b);
                    let c = (r - d).clamp(0.0, 1.0);
                    let slot = &mut cov[y * size + x];
                    *slot = slot.max(c);
                }
            }
        }
    }
    cov
}

fn to_rgb(lum: &[f64], size: usize) -> Tensor {
    let tint = [1.0, 0.985, 0.955];
    let data = lum
        .iter()
        .flat_map(|&v| tint.map(|t| (v * t).clamp(0.0, 1.0) as f32))
        .collect();
    Tensor::from_parts(vec![size, size, 3], data)
}

/// A texture and the same texture with a crack drawn over it. `index`
/// selects an independent draw under `seed`.
pub fn synth_crack_pair(seed: u64, index: u64, size: usize) -> (Tensor, Tensor) {
    let mut tex_rng = seed::rng(seed, &[0x7e47, index]);
    let lum = texture(&mut tex_rng, size);
    let mut crack_rng = seed::rng(seed, &[0xc4ac, index]);
    let strokes = crack_strokes(&mut crack_rng, size);
    let darkness = crack_rng.random_range(0.15..0.4);
    let cracked: Vec<f64> = lum
        .iter()
        .zip(coverage(&strokes, size))
        .map(|(&v, c)| v * (1.0 - (1.0 - darkness) * c))
        .collect();
    (to_rgb(&lum, size), to_rgb(&cracked, size))
}

/// `n_per_class` cracked then `n_per_class` non-cracked samples at
/// `size x size`. Every sample uses its own texture draw.
pub fn synth_crack_corpus(n_per_class: usize, seed: u64, size: usize) -> Result<Vec<Sample>> {
    if n_per_class == 0 {
        return Err(Error::Config("synthetic corpus needs at least one sample per class".into()));
    }
    if size < 8 {
        return Err(Error::Config(format!("synthetic image size must be >= 8, got {size}")));
    }
    let n = n_per_class as u64;
    let mut out = Vec::with_capacity(2 * n_per_class);
    for i in 0..n {
        out.push(Sample {
            image: synth_crack_pair(seed, i, size).1,
            label: Label::Cracked,
            source_id: format!("synth-c-{i:05}"),
        });
    }
    for i in 0..n {
        out.push(Sample {
            image: synth_crack_pair(seed, n + i, size).0,
            label: Label::NonCracked,
            source_id: format!("synth-n-{i:05}"),
        });
    }
    Ok(out)
}

/// Writes samples as `<root>/<class-dir>/<source_id>.png`.
pub fn write_corpus(samples: &[Sample], root: &Path) -> Result<()> {
    for label in [Label::Cracked, Label::NonCracked] {
        let dir = root.join(label.dir());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for s in samples {
        let name: String = s
            .source_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        save_image(&s.image, &root.join(s.label.dir()).join(format!("{name}.png")))?;
    }
    Ok(())
}
