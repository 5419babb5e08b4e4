//! Click-to-mask segmenters.
//!
//! Every segmenter maps `(task, full click history, optional box)` to a mask.
//! The oracle reads the task's ground truth and exists to make harness
//! behavior checkable in closed form; region growing only looks at the image.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::env::Task;
use crate::error::Result;
use crate::mask::{components, neighbors4, BitMask, GrayImage, NormBox, NormPoint};
use crate::remote::{RemoteEndpoint, RemoteSegmenter};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Click {
    pub positive: bool,
    pub point: NormPoint,
}

pub trait Segmenter: Send + Sync {
    fn segment(&self, task: &Task, clicks: &[Click], bbox: Option<NormBox>) -> Result<BitMask>;

    /// Whether the environment should forward box prompts.
    fn supports_box(&self) -> bool {
        false
    }
}

pub const DEFAULT_R_NEG: usize = 2;

/// Ground-truth components hit by positive clicks, carved by negatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OracleSegmenter {
    pub r_neg: usize,
    pub supports_box: bool,
}

impl Default for OracleSegmenter {
    fn default() -> Self {
        Self {
            r_neg: DEFAULT_R_NEG,
            supports_box: false,
        }
    }
}

impl Segmenter for OracleSegmenter {
    fn segment(&self, task: &Task, clicks: &[Click], bbox: Option<NormBox>) -> Result<BitMask> {
        Ok(oracle_segment(&task.target, clicks, bbox, self.r_neg))
    }

    fn supports_box(&self) -> bool {
        self.supports_box
    }
}

pub fn oracle_segment(gt: &BitMask, clicks: &[Click], bbox: Option<NormBox>, r_neg: usize) -> BitMask {
    let (w, h) = gt.dims();
    let mut out = BitMask::new(w, h);
    let positives: Vec<(usize, usize)> = clicks
        .iter()
        .filter(|c| c.positive)
        .map(|c| c.point.to_pixel(w, h))
        .collect();
    if positives.is_empty() {
        return out;
    }
    for comp in components(gt) {
        if positives.iter().any(|&(x, y)| comp.get(x, y)) {
            out.union_in_place(&comp);
        }
    }
    for c in clicks.iter().filter(|c| !c.positive) {
        let (cx, cy) = c.point.to_pixel(w, h);
        for y in cy.saturating_sub(r_neg)..=(cy + r_neg).min(h - 1) {
            for x in cx.saturating_sub(r_neg)..=(cx + r_neg).min(w - 1) {
                out.set(x, y, false);
            }
        }
    }
    if let Some(b) = bbox {
        out.intersect_in_place(&b.to_raster(w, h));
    }
    out
}

pub const DEFAULT_DELTA: u8 = 24;
pub const DEFAULT_CAP: usize = 65_536;

/// Intensity flood fill from each click; negatives subtract.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RegionGrowSegmenter {
    pub delta: u8,
    pub cap: usize,
    pub supports_box: bool,
}

impl RegionGrowSegmenter {
    pub fn new(delta: u8, cap: usize) -> Self {
        assert!(cap >= 1, "region cap must be at least one pixel");
        Self {
            delta,
            cap,
            supports_box: false,
        }
    }
}

impl Default for RegionGrowSegmenter {
    fn default() -> Self {
        Self::new(DEFAULT_DELTA, DEFAULT_CAP)
    }
}

impl Segmenter for RegionGrowSegmenter {
    fn segment(&self, task: &Task, clicks: &[Click], bbox: Option<NormBox>) -> Result<BitMask> {
        Ok(region_grow_segment(&task.image, clicks, bbox, self.delta, self.cap))
    }

    fn supports_box(&self) -> bool {
        self.supports_box
    }
}

pub fn region_grow_segment(
    image: &GrayImage,
    clicks: &[Click],
    bbox: Option<NormBox>,
    delta: u8,
    cap: usize,
) -> BitMask {
    let (w, h) = image.dims();
    let mut pos = BitMask::new(w, h);
    let mut neg = BitMask::new(w, h);
    for c in clicks {
        let (x, y) = c.point.to_pixel(w, h);
        let region = grow(image, x, y, delta, cap);
        if c.positive {
            pos.union_in_place(&region);
        } else {
            neg.union_in_place(&region);
        }
    }
    pos.subtract_in_place(&neg);
    if let Some(b) = bbox {
        pos.intersect_in_place(&b.to_raster(w, h));
    }
    pos
}

/// BFS over 4-neighbors in N, W, E, S order, stopping after `cap` pixels.
fn grow(image: &GrayImage, sx: usize, sy: usize, delta: u8, cap: usize) -> BitMask {
    let (w, h) = image.dims();
    let data = image.data();
    let seed = image.get(sx, sy);
    let mut region = BitMask::new(w, h);
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::new();
    let start = sy * w + sx;
    seen[start] = true;
    queue.push_back(start);
    let mut taken = 0;
    while let Some(i) = queue.pop_front() {
        if taken == cap {
            break;
        }
        region.set(i % w, i / w, true);
        taken += 1;
        for n in neighbors4(i % w, i / w, w, h).into_iter().flatten() {
            if !seen[n] && data[n].abs_diff(seed) <= delta {
                seen[n] = true;
                queue.push_back(n);
            }
        }
    }
    region
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegmenterKind {
    Oracle {
        #[serde(default = "default_r_neg")]
        r_neg: usize,
    },
    RegionGrow {
        #[serde(default = "default_delta")]
        delta: u8,
        #[serde(default = "default_cap")]
        cap: usize,
    },
    Remote { endpoint: RemoteEndpoint },
}

fn default_r_neg() -> usize {
    DEFAULT_R_NEG
}
fn default_delta() -> u8 {
    DEFAULT_DELTA
}
fn default_cap() -> usize {
    DEFAULT_CAP
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmenterSpec {
    #[serde(flatten)]
    pub kind: SegmenterKind,
    #[serde(default)]
    pub supports_box: bool,
}

impl SegmenterSpec {
    pub fn oracle() -> Self {
        Self {
            kind: SegmenterKind::Oracle { r_neg: DEFAULT_R_NEG },
            supports_box: false,
        }
    }

    pub fn region_grow() -> Self {
        Self {
            kind: SegmenterKind::RegionGrow {
                delta: DEFAULT_DELTA,
                cap: DEFAULT_CAP,
            },
            supports_box: false,
        }
    }

    pub fn build(&self) -> Result<Box<dyn Segmenter>> {
        Ok(match &self.kind {
            SegmenterKind::Oracle { r_neg } => Box::new(OracleSegmenter {
                r_neg: *r_neg,
                supports_box: self.supports_box,
            }),
            SegmenterKind::RegionGrow { delta, cap } => {
                if *cap < 1 {
                    return Err(crate::Error::InvalidArgument("region cap must be >= 1".into()));
                }
                Box::new(RegionGrowSegmenter {
                    delta: *delta,
                    cap: *cap,
                    supports_box: self.supports_box,
                })
            }
            SegmenterKind::Remote { endpoint } => {
                Box::new(RemoteSegmenter::new(endpoint.clone(), self.supports_box)?)
            }
        })
    }
}
