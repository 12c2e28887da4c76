//! Synthetic fundus photographs with known vessel masks.
//!
//! A branching tree of tapered curves grows from an optic disc inside a
//! circular field of view. Vessels are darker than the background, mostly in
//! the green channel, as in real fundus images. Used where the licensed
//! datasets are unavailable: tests, demos and smoke training.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{write_mask, write_raster, DataError};
use crate::mask::BinaryMask;
use crate::preprocess::RasterImage;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthFundus {
    pub image: RasterImage,
    pub vessels: BinaryMask,
    pub fov: BinaryMask,
}

struct Segment {
    x: f64,
    y: f64,
    angle: f64,
    radius: f64,
    depth: u32,
}

/// Deterministic in `(width, height, seed)`.
pub fn fundus(width: usize, height: usize, seed: u64) -> SynthFundus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (wf, hf) = (width as f64, height as f64);
    let scale = wf.min(hf);
    let (cx, cy, fov_r) = (wf / 2.0, hf / 2.0, 0.47 * scale);
    let fov = BinaryMask::from_fn(width, height, |x, y| {
        (x as f64 + 0.5 - cx).hypot(y as f64 + 0.5 - cy) <= fov_r
    });

    let side = if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
    let disc = (cx + side * 0.22 * scale, cy + rng.gen_range(-0.05..0.05) * scale);
    let disc_r = 0.07 * scale;

    let mut radius_map = vec![0f64; width * height];
    let mut stack: Vec<Segment> = (0..rng.gen_range(5..8))
        .map(|i| Segment {
            x: disc.0,
            y: disc.1,
            angle: i as f64 * 2.0 * PI / 6.0 + rng.gen_range(-0.4..0.4),
            radius: (0.007 * scale).max(1.2) * rng.gen_range(0.9..1.3),
            depth: 0,
        })
        .collect();
    let step = 0.5;
    while let Some(mut s) = stack.pop() {
        let length = rng.gen_range(0.4..0.8) * scale / (1.0 + s.depth as f64 * 0.4);
        let mut travelled = 0.0;
        let mut turn: f64 = rng.gen_range(-0.004..0.004);
        while travelled < length {
            stamp(&mut radius_map, width, height, s.x, s.y, s.radius);
            turn = (turn + rng.gen_range(-0.0008..0.0008)).clamp(-0.006, 0.006);
            s.angle += turn;
            s.x += step * s.angle.cos();
            s.y += step * s.angle.sin();
            travelled += step;
            if (s.x - cx).hypot(s.y - cy) > fov_r + 2.0 * s.radius {
                break;
            }
            if s.depth < 4 && s.radius > 0.9 && rng.gen_bool(0.005) {
                let branch = (s.angle + side_sign(&mut rng) * rng.gen_range(0.5..1.1), s.radius * 0.75);
                stack.push(Segment {
                    x: s.x,
                    y: s.y,
                    angle: branch.0,
                    radius: branch.1,
                    depth: s.depth + 1,
                });
                s.radius *= 0.9;
            }
            s.radius = (s.radius * 0.9997).max(0.7);
        }
    }
    let vessels = BinaryMask::from_fn(width, height, |x, y| radius_map[y * width + x] > 0.0 && fov.get(x, y));

    let mut data = vec![0u8; width * height * 3];
    for y in 0..height {
        for x in 0..width {
            if !fov.get(x, y) {
                continue;
            }
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let rim = (px - cx).hypot(py - cy) / fov_r;
            let shade = 1.0 - 0.35 * rim * rim;
            let glow = (-((px - disc.0).hypot(py - disc.1) / disc_r).powi(2)).exp();
            let depth = radius_map[y * width + x];
            let dark = if depth > 0.0 { 0.55 + 0.1 * (1.0 - depth).max(0.0) } else { 1.0 };
            let noise: f64 = rng.gen_range(-6.0..6.0);
            let rgb = [
                190.0 * shade * (1.0 - 0.35 * (1.0 - dark)) + 50.0 * glow,
                95.0 * shade * dark + 120.0 * glow,
                40.0 * shade * (1.0 - 0.5 * (1.0 - dark)) + 60.0 * glow,
            ];
            for (c, v) in rgb.into_iter().enumerate() {
                data[(y * width + x) * 3 + c] = (v + noise).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    SynthFundus {
        image: RasterImage::new(width, height, 3, data).expect("buffer matches dims"),
        vessels,
        fov,
    }
}

fn side_sign(rng: &mut ChaCha8Rng) -> f64 {
    if rng.gen_bool(0.5) {
        -1.0
    } else {
        1.0
    }
}

/// Marks the disc of radius `r` around `(x, y)`; values record closeness to the centreline.
fn stamp(map: &mut [f64], width: usize, height: usize, x: f64, y: f64, r: f64) {
    let x0 = (x - r).floor().max(0.0) as usize;
    let y0 = (y - r).floor().max(0.0) as usize;
    let x1 = ((x + r).ceil().max(0.0) as usize).min(width);
    let y1 = ((y + r).ceil().max(0.0) as usize).min(height);
    for py in y0..y1 {
        for px in x0..x1 {
            let d = (px as f64 + 0.5 - x).hypot(py as f64 + 0.5 - y);
            if d <= r {
                let v = &mut map[py * width + px];
                *v = v.max(1.0 - d / r + 1e-3);
            }
        }
    }
}

/// Writes `train` and `test` images in the DRIVE directory layout.
pub fn write_drive_layout(
    root: &Path,
    width: usize,
    height: usize,
    train: usize,
    test: usize,
    seed: u64,
) -> Result<(), DataError> {
    for (tag, count, first) in [("training", train, 21), ("test", test, 1)] {
        let base = root.join(tag);
        for dir in ["images", "1st_manual", "mask"] {
            std::fs::create_dir_all(base.join(dir)).map_err(super::io_err(&base))?;
        }
        for i in 0..count {
            let id = format!("{:02}", first + i);
            let f = fundus(width, height, seed.wrapping_mul(1000).wrapping_add((first + i) as u64));
            write_raster(&base.join("images").join(format!("{id}_{tag}.png")), &f.image)?;
            write_mask(&base.join("1st_manual").join(format!("{id}_manual1.png")), &f.vessels)?;
            write_mask(&base.join("mask").join(format!("{id}_{tag}_mask.png")), &f.fov)?;
        }
    }
    Ok(())
}

/// Writes `count` images in the flat CHASE-DB1 layout.
pub fn write_chase_layout(root: &Path, width: usize, height: usize, count: usize, seed: u64) -> Result<(), DataError> {
    std::fs::create_dir_all(root).map_err(super::io_err(root))?;
    for i in 0..count {
        let stem = format!("Image_{:02}{}", i / 2 + 1, if i % 2 == 0 { 'L' } else { 'R' });
        let f = fundus(width, height, seed.wrapping_mul(1000).wrapping_add(i as u64));
        write_raster(&root.join(format!("{stem}.png")), &f.image)?;
        write_mask(&root.join(format!("{stem}_1stHO.png")), &f.vessels)?;
        write_mask(&root.join(format!("{stem}_2ndHO.png")), &f.vessels)?;
    }
    Ok(())
}
