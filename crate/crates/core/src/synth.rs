//! Seeded synthetic tasks: bright shapes on a darker, lightly noisy background.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Task, TaskEntry};
use crate::error::{Error, Result};
use crate::mask::{BitMask, GrayImage};
use crate::pnm;
use crate::seed::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    Disk,
    Rectangle,
    Ring,
    ThinBar,
    Scatter,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 5] = [
        ShapeFamily::Disk,
        ShapeFamily::Rectangle,
        ShapeFamily::Ring,
        ShapeFamily::ThinBar,
        ShapeFamily::Scatter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeFamily::Disk => "disk",
            ShapeFamily::Rectangle => "rectangle",
            ShapeFamily::Ring => "ring",
            ShapeFamily::ThinBar => "thin bar",
            ShapeFamily::Scatter => "scatter",
        }
    }
}

/// Minimum base-intensity gap between object and background.
pub const MIN_CONTRAST: u8 = 64;
const NOISE: i32 = 6;

pub fn family_of(index: usize) -> ShapeFamily {
    ShapeFamily::ALL[index % ShapeFamily::ALL.len()]
}

/// `n` tasks of `side`×`side` pixels; task `i` belongs to family `i mod 5`.
pub fn synth_tasks(n: usize, side: usize, seed: u64) -> Result<Vec<Task>> {
    if n < 1 || side < 16 {
        return Err(Error::InvalidArgument(format!(
            "synth needs n >= 1 and side >= 16, got n={n} side={side}"
        )));
    }
    (0..n).map(|i| synth_task(i, side, seed)).collect()
}

fn synth_task(index: usize, side: usize, seed: u64) -> Result<Task> {
    let family = family_of(index);
    let mut rng = rng_for(seed, "synth", family.name(), &[index as u64]);
    let s = side as i64;
    let (target, prompt) = match family {
        ShapeFamily::Disk => {
            let r = rng.gen_range(s / 8..=s / 3);
            let (cx, cy) = center(&mut rng, s, r);
            (disk(side, cx, cy, r), "the bright disk".to_string())
        }
        ShapeFamily::Rectangle => {
            let w = rng.gen_range(s / 6..=s / 2);
            let h = rng.gen_range(s / 6..=s / 2);
            let x = rng.gen_range(1..s - w);
            let y = rng.gen_range(1..s - h);
            (rect(side, x, y, w, h), "the bright rectangle".to_string())
        }
        ShapeFamily::Ring => {
            let r_out = rng.gen_range(s / 5..=s / 3);
            let thickness = rng.gen_range(3..=(r_out / 2).max(3));
            let (cx, cy) = center(&mut rng, s, r_out);
            let outer = disk(side, cx, cy, r_out);
            let inner = disk(side, cx, cy, r_out - thickness);
            (outer.and_not(&inner)?, "the bright ring".to_string())
        }
        ShapeFamily::ThinBar => {
            let width = rng.gen_range(1..=2);
            let len = rng.gen_range(s / 2..=s - 4);
            let along = rng.gen_range(1..s - len);
            let across = rng.gen_range(1..s - width);
            let m = if rng.gen_bool(0.5) {
                rect(side, along, across, len, width)
            } else {
                rect(side, across, along, width, len)
            };
            (m, "the thin bright bar".to_string())
        }
        ShapeFamily::Scatter => {
            let count = rng.gen_range(2..=3);
            let m = scatter(side, count, &mut rng);
            (m, format!("the {count} scattered bright squares"))
        }
    };
    let bg = rng.gen_range(20u8..=100);
    let fg = bg + rng.gen_range(MIN_CONTRAST + 16..=140);
    let image = GrayImage::from_fn(side, side, |x, y| {
        let base = if target.get(x, y) { fg } else { bg } as i32;
        (base + rng.gen_range(-NOISE..=NOISE)).clamp(0, 255) as u8
    });
    Task::new(format!("synth_{seed}_{index:04}"), image, target, prompt)
}

fn center(rng: &mut impl Rng, s: i64, r: i64) -> (i64, i64) {
    let lo = r + 1;
    let hi = (s - r - 2).max(lo);
    (rng.gen_range(lo..=hi), rng.gen_range(lo..=hi))
}

fn disk(side: usize, cx: i64, cy: i64, r: i64) -> BitMask {
    BitMask::from_fn(side, side, |x, y| {
        let dx = x as i64 - cx;
        let dy = y as i64 - cy;
        dx * dx + dy * dy <= r * r
    })
}

fn rect(side: usize, x: i64, y: i64, w: i64, h: i64) -> BitMask {
    BitMask::from_fn(side, side, |px, py| {
        let (px, py) = (px as i64, py as i64);
        px >= x && px < x + w && py >= y && py < y + h
    })
}

/// Squares of similar size separated by at least two background pixels.
fn scatter(side: usize, count: usize, rng: &mut impl Rng) -> BitMask {
    let s = side as i64;
    let size = rng.gen_range((s / 8).max(3)..=(s / 5).max(4));
    let mut placed: Vec<(i64, i64)> = Vec::new();
    let mut mask = BitMask::new(side, side);
    let mut attempts = 0;
    while placed.len() < count {
        attempts += 1;
        let x = rng.gen_range(1..s - size);
        let y = rng.gen_range(1..s - size);
        let clear = placed
            .iter()
            .all(|&(px, py)| (px - x).abs() >= size + 2 || (py - y).abs() >= size + 2);
        if clear || attempts > 10_000 {
            placed.push((x, y));
            mask.union_in_place(&rect(side, x, y, size, size));
        }
    }
    mask
}

/// Manifest written next to the generated rasters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaskManifest<H> {
    pub run: H,
    pub tasks: Vec<TaskEntry>,
}

/// Writes `images/{id}.pgm`, `targets/{id}.pgm` and `manifest.json` under
/// `dir`; `run` is stored verbatim as the manifest header.
pub fn write_task_set<H: Serialize>(dir: &Path, tasks: &[Task], run: H) -> Result<PathBuf> {
    for sub in ["images", "targets"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut entries = Vec::with_capacity(tasks.len());
    for t in tasks {
        let image_path = PathBuf::from("images").join(format!("{}.pgm", t.id));
        let target_path = PathBuf::from("targets").join(format!("{}.pgm", t.id));
        pnm::write_pgm(dir.join(&image_path), &t.image)?;
        pnm::write_mask(dir.join(&target_path), &t.target)?;
        entries.push(TaskEntry {
            id: t.id.clone(),
            image_path,
            target_path,
            prompt: t.prompt.clone(),
        });
    }
    let path = dir.join("manifest.json");
    let manifest = TaskManifest { run, tasks: entries };
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::components;

    #[test]
    fn deterministic_by_seed() {
        let a = synth_tasks(10, 32, 7).unwrap();
        let b = synth_tasks(10, 32, 7).unwrap();
        assert_eq!(a, b);
        let c = synth_tasks(10, 32, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn all_families_and_constraints() {
        let tasks = synth_tasks(100, 64, 1).unwrap();
        assert_eq!(tasks.len(), 100);
        let mut seen = std::collections::HashSet::new();
        for (i, t) in tasks.iter().enumerate() {
            let family = family_of(i);
            seen.insert(family);
            assert!(!t.target.is_empty());
            assert!(t.prompt.contains(family.name().split(' ').next_back().unwrap()) || family == ShapeFamily::Scatter);
            let n = components(&t.target).len();
            match family {
                ShapeFamily::Scatter => assert!((2..=3).contains(&n), "{} has {n} parts", t.id),
                _ => assert_eq!(n, 1, "{} ({family:?}) has {n} parts", t.id),
            }
            if family == ShapeFamily::ThinBar {
                let (x0, y0, x1, y1) = crate::mask::pixel_bounds(&t.target).unwrap();
                assert!((x1 - x0 + 1).min(y1 - y0 + 1) <= 2);
            }
            // Every object pixel is brighter than every background pixel by
            // the base contrast minus twice the noise amplitude.
            let fg_min = t.target.iter_set().map(|(x, y)| t.image.get(x, y)).min().unwrap();
            let bg_max = t.target.not().iter_set().map(|(x, y)| t.image.get(x, y)).max().unwrap();
            assert!(fg_min as i32 - bg_max as i32 >= MIN_CONTRAST as i32 + 16 - 2 * NOISE);
        }
        assert_eq!(seen.len(), 5);
    }

    #[test]
    fn rejects_small_inputs() {
        assert!(synth_tasks(0, 64, 1).is_err());
        assert!(synth_tasks(3, 15, 1).is_err());
    }
}
