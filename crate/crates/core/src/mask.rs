//! Binary rasters, grayscale images and normalized coordinates.
//!
//! Every raster is row-major: pixel `(x, y)` lives at index `y * width + x`.
//! Normalized coordinates address pixel centers, so pixel `(px, py)` maps to
//! `((px + 0.5) / W, (py + 0.5) / H)` and back via `floor(x * W)`.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest `f64` strictly below 1.
pub const ONE_BELOW: f64 = 0.999_999_999_999_999_9;

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl fmt::Debug for BitMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BitMask {}x{} ({} set)", self.width, self.height, self.count())?;
        if self.width * self.height <= 1024 {
            for y in 0..self.height {
                let row: String = (0..self.width)
                    .map(|x| if self.get(x, y) { '#' } else { '.' })
                    .collect();
                writeln!(f, "{row}")?;
            }
        }
        Ok(())
    }
}

impl BitMask {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width >= 1 && height >= 1, "mask dimensions must be positive");
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        let mut m = Self::new(width, height);
        m.bits.fill(true);
        m
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.bits[y * width + x] = f(x, y);
            }
        }
        m
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "mask dimensions must be positive, got {width}x{height}"
            )));
        }
        if bits.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "expected {} bits for {width}x{height}, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    /// Parses rows of `#`/`.` (anything else but `#` is background).
    pub fn from_ascii(rows: &[&str]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        Self::from_fn(width, height, |x, y| rows[y].chars().nth(x) == Some('#'))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Set pixels as `(x, y)` in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % w, i / w))
    }

    pub fn check_same_dims(&self, other: &BitMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        Ok(())
    }

    fn zip_with(&self, other: &BitMask, f: impl Fn(bool, bool) -> bool) -> Result<BitMask> {
        self.check_same_dims(other)?;
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(BitMask {
            width: self.width,
            height: self.height,
            bits,
        })
    }

    pub fn and(&self, other: &BitMask) -> Result<BitMask> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &BitMask) -> Result<BitMask> {
        self.zip_with(other, |a, b| a || b)
    }

    /// `self ∧ ¬other`.
    pub fn and_not(&self, other: &BitMask) -> Result<BitMask> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn not(&self) -> BitMask {
        BitMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn union_in_place(&mut self, other: &BitMask) {
        debug_assert_eq!(self.dims(), other.dims());
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }

    pub fn subtract_in_place(&mut self, other: &BitMask) {
        debug_assert_eq!(self.dims(), other.dims());
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a &= !b;
        }
    }

    pub fn intersect_in_place(&mut self, other: &BitMask) {
        debug_assert_eq!(self.dims(), other.dims());
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a &= b;
        }
    }

    /// Stable 64-bit FNV-1a digest of dimensions and bits.
    pub fn digest(&self) -> u64 {
        let mut h = crate::seed::Fnv::new();
        h.write_u64(self.width as u64);
        h.write_u64(self.height as u64);
        for chunk in self.bits.chunks(8) {
            let byte = chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (i, &b)| acc | ((b as u8) << i));
            h.write(&[byte]);
        }
        h.finish()
    }
}

/// Intersection over union; 1.0 when both masks are empty.
pub fn iou(a: &BitMask, b: &BitMask) -> Result<f64> {
    let (inter, union) = overlap_counts(a, b)?;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// `(|a ∩ b|, |a ∪ b|)`.
pub fn overlap_counts(a: &BitMask, b: &BitMask) -> Result<(usize, usize)> {
    a.check_same_dims(b)?;
    let mut inter = 0;
    let mut union = 0;
    for (&p, &q) in a.bits.iter().zip(&b.bits) {
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    Ok((inter, union))
}

/// 4-connected components, ordered by their first pixel in row-major order.
pub fn components(mask: &BitMask) -> Vec<BitMask> {
    let (w, h) = mask.dims();
    let mut visited = vec![false; w * h];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.bits[start] || visited[start] {
            continue;
        }
        let mut comp = BitMask::new(w, h);
        visited[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            comp.bits[i] = true;
            let (x, y) = (i % w, i / w);
            for n in neighbors4(x, y, w, h).into_iter().flatten() {
                if mask.bits[n] && !visited[n] {
                    visited[n] = true;
                    queue.push_back(n);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// In-bounds 4-neighbors of `(x, y)` as flat indices, in N, W, E, S order.
#[inline]
pub(crate) fn neighbors4(x: usize, y: usize, w: usize, h: usize) -> [Option<usize>; 4] {
    let idx = |x: usize, y: usize| y * w + x;
    [
        (y > 0).then(|| idx(x, y - 1)),
        (x > 0).then(|| idx(x - 1, y)),
        (x + 1 < w).then(|| idx(x + 1, y)),
        (y + 1 < h).then(|| idx(x, y + 1)),
    ]
}

/// A point in normalized image coordinates, `0 <= x, y < 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormPoint {
    pub x: f64,
    pub y: f64,
}

impl NormPoint {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !in_unit(x) || !in_unit(y) {
            return Err(Error::InvalidArgument(format!(
                "normalized point ({x}, {y}) outside [0,1)"
            )));
        }
        Ok(Self { x, y })
    }

    /// Clamps each coordinate into `[0, 1)`; NaN maps to 0.
    pub fn clamped(x: f64, y: f64) -> Self {
        Self {
            x: clamp_unit(x),
            y: clamp_unit(y),
        }
    }

    pub fn from_pixel(px: usize, py: usize, width: usize, height: usize) -> Self {
        Self {
            x: (px as f64 + 0.5) / width as f64,
            y: (py as f64 + 0.5) / height as f64,
        }
    }

    pub fn to_pixel(&self, width: usize, height: usize) -> (usize, usize) {
        (to_pixel_axis(self.x, width), to_pixel_axis(self.y, height))
    }

    pub fn is_valid(&self) -> bool {
        in_unit(self.x) && in_unit(self.y)
    }
}

/// Normalized box corners, `x1 <= x2`, `y1 <= y2`, all in `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl NormBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        if !b.is_valid() {
            return Err(Error::InvalidArgument(format!(
                "invalid normalized box ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        Ok(b)
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2].into_iter().all(in_unit)
            && self.x1 <= self.x2
            && self.y1 <= self.y2
    }

    /// Pixels whose centers fall inside the closed box.
    pub fn to_raster(&self, width: usize, height: usize) -> BitMask {
        BitMask::from_fn(width, height, |x, y| {
            let c = NormPoint::from_pixel(x, y, width, height);
            c.x >= self.x1 && c.x <= self.x2 && c.y >= self.y1 && c.y <= self.y2
        })
    }
}

/// Tight bounding box, `(min / W, min / H, (max + 1) / W, (max + 1) / H)`
/// with upper corners clamped below 1.
pub fn bbox(mask: &BitMask) -> Result<NormBox> {
    let (w, h) = mask.dims();
    let mut min_x = usize::MAX;
    let mut min_y = usize::MAX;
    let mut max_x = 0;
    let mut max_y = 0;
    for (x, y) in mask.iter_set() {
        min_x = min_x.min(x);
        min_y = min_y.min(y);
        max_x = max_x.max(x);
        max_y = max_y.max(y);
    }
    if min_x == usize::MAX {
        return Err(Error::EmptyMask);
    }
    Ok(NormBox {
        x1: min_x as f64 / w as f64,
        y1: min_y as f64 / h as f64,
        x2: ((max_x + 1) as f64 / w as f64).min(ONE_BELOW),
        y2: ((max_y + 1) as f64 / h as f64).min(ONE_BELOW),
    })
}

/// Pixel bounds `(min_x, min_y, max_x, max_y)` inclusive, if nonempty.
pub fn pixel_bounds(mask: &BitMask) -> Option<(usize, usize, usize, usize)> {
    mask.iter_set().fold(None, |acc, (x, y)| {
        Some(match acc {
            None => (x, y, x, y),
            Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
        })
    })
}

fn in_unit(v: f64) -> bool {
    (0.0..1.0).contains(&v)
}

pub(crate) fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, ONE_BELOW)
    }
}

fn to_pixel_axis(v: f64, size: usize) -> usize {
    let p = (v * size as f64).floor();
    if p <= 0.0 {
        0
    } else {
        (p as usize).min(size - 1)
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GrayImage {}x{}", self.width, self.height)
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "gray image {width}x{height} with {} bytes",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rgb(pub [u8; 3]);

impl Rgb {
    pub const GREEN: Rgb = Rgb([0, 255, 0]);
}

impl Default for Rgb {
    fn default() -> Self {
        Rgb::GREEN
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RgbImage {}x{}", self.width, self.height)
    }
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != 3 * width * height {
            return Err(Error::InvalidArgument(format!(
                "rgb image {width}x{height} with {} bytes",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

pub const DEFAULT_ALPHA: f64 = 0.5;

/// Blends `color` over masked pixels; unmasked pixels replicate the gray value.
pub fn render_overlay(image: &GrayImage, mask: &BitMask, color: Rgb, alpha: f64) -> Result<RgbImage> {
    if image.dims() != mask.dims() {
        return Err(Error::dims(image.dims(), mask.dims()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0,1]")));
    }
    let mut data = Vec::with_capacity(3 * image.data.len());
    for (&g, &m) in image.data.iter().zip(&mask.bits) {
        if m {
            for c in color.0 {
                let v = (1.0 - alpha) * g as f64 + alpha * c as f64;
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        } else {
            data.extend_from_slice(&[g, g, g]);
        }
    }
    Ok(RgbImage {
        width: image.width,
        height: image.height,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_cases() {
        let a = BitMask::from_ascii(&["##..", "##..", "##..", "##.."]);
        let b = BitMask::from_ascii(&["####", "####", "....", "...."]);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert!((iou(&a, &b).unwrap() - 4.0 / 12.0).abs() < 1e-15);
        let c = BitMask::from_ascii(&["....", "....", "..##", "..##"]);
        assert_eq!(iou(&a, &c).unwrap(), 0.0);
        assert_eq!(iou(&BitMask::new(3, 3), &BitMask::new(3, 3)).unwrap(), 1.0);
        assert!(matches!(
            iou(&a, &BitMask::new(3, 4)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn components_connectivity() {
        assert!(components(&BitMask::new(4, 4)).is_empty());
        let diag = BitMask::from_ascii(&["#.", ".#"]);
        assert_eq!(components(&diag).len(), 2);
        let ring = BitMask::from_ascii(&["#####", "#...#", "#...#", "#####"]);
        let comps = components(&ring);
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0], ring);
    }

    #[test]
    fn components_ordered_by_first_pixel() {
        let m = BitMask::from_ascii(&["..#", "#..", "#.#"]);
        let comps = components(&m);
        assert_eq!(comps.len(), 3);
        assert!(comps[0].get(2, 0));
        assert!(comps[1].get(0, 1) && comps[1].get(0, 2));
        assert!(comps[2].get(2, 2));
    }

    #[test]
    fn bbox_convention() {
        let full = BitMask::full(10, 10);
        let b = bbox(&full).unwrap();
        assert_eq!((b.x1, b.y1), (0.0, 0.0));
        assert!(b.x2 < 1.0 && b.x2 > 0.999_999);
        let mut single = BitMask::new(10, 10);
        single.set(2, 3, true);
        let b = bbox(&single).unwrap();
        assert!((b.x1 - 0.2).abs() < 1e-12);
        assert!((b.y1 - 0.3).abs() < 1e-12);
        assert!((b.x2 - 0.3).abs() < 1e-12);
        assert!((b.y2 - 0.4).abs() < 1e-12);
        assert!(matches!(bbox(&BitMask::new(3, 3)), Err(Error::EmptyMask)));
    }

    #[test]
    fn box_raster_recovers_pixel_bounds() {
        let mut m = BitMask::new(10, 7);
        m.set(3, 1, true);
        m.set(7, 5, true);
        let r = bbox(&m).unwrap().to_raster(10, 7);
        assert_eq!(pixel_bounds(&r), Some((3, 1, 7, 5)));
        assert_eq!(r.count(), 5 * 5);
        assert_eq!(BitMask::full(10, 7), bbox(&BitMask::full(10, 7)).unwrap().to_raster(10, 7));
    }

    #[test]
    fn pixel_center_mapping() {
        let p = NormPoint::from_pixel(2, 2, 5, 5);
        assert_eq!((p.x, p.y), (0.5, 0.5));
        assert_eq!(p.to_pixel(5, 5), (2, 2));
        assert_eq!(NormPoint::clamped(1.5, -0.2).to_pixel(8, 8), (7, 0));
        assert!(NormPoint::new(1.0, 0.0).is_err());
    }

    #[test]
    fn overlay_cases() {
        let img = GrayImage::filled(2, 1, 100);
        let mut mask = BitMask::new(2, 1);
        mask.set(0, 0, true);
        let out = render_overlay(&img, &mask, Rgb::GREEN, 0.5).unwrap();
        assert_eq!(out.get(0, 0), [50, 178, 50]);
        assert_eq!(out.get(1, 0), [100, 100, 100]);
        let out = render_overlay(&img, &mask, Rgb::GREEN, 1.0).unwrap();
        assert_eq!(out.get(0, 0), [0, 255, 0]);
        let out = render_overlay(&img, &mask, Rgb([9, 9, 9]), 0.0).unwrap();
        assert_eq!(out.get(0, 0), [100, 100, 100]);
        assert!(render_overlay(&img, &BitMask::new(1, 1), Rgb::GREEN, 0.5).is_err());
        assert!(render_overlay(&img, &mask, Rgb::GREEN, 1.5).is_err());
    }

    #[test]
    fn one_below_is_predecessor_of_one() {
        assert_eq!(ONE_BELOW, 1f64.next_down());
    }
}
