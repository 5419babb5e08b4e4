//! Exact squared Euclidean distance transform.
//!
//! Two separable passes of the lower-envelope-of-parabolas algorithm
//! (Felzenszwalb & Huttenlocher) over integer squared distances. The raster is
//! framed by a one-pixel background ring so every position outside the image
//! counts as background and no column ever lacks a zero.

use crate::mask::BitMask;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistanceField {
    width: usize,
    height: usize,
    values: Vec<u64>,
}

impl DistanceField {
    pub fn from_values(width: usize, height: usize, values: Vec<u64>) -> Self {
        assert_eq!(values.len(), width * height);
        Self { width, height, values }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[u64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> u64 {
        self.values[y * self.width + x]
    }

    pub fn max(&self) -> u64 {
        self.values.iter().copied().max().unwrap_or(0)
    }
}

/// For every in-region pixel, the squared distance between pixel centers to
/// the nearest out-of-region pixel (out-of-bounds positions included).
pub fn edt_sq(region: &BitMask) -> DistanceField {
    let (w, h) = region.dims();
    let pw = w + 2;
    let ph = h + 2;
    // Vertical pass: per column, 1-D squared distance to the nearest zero.
    let mut cols = vec![0i64; pw * ph];
    let mut f = vec![0i64; ph];
    let mut d = vec![0i64; ph.max(pw)];
    let mut v = vec![0usize; ph.max(pw)];
    let mut z = vec![0f64; ph.max(pw) + 1];
    let inf = ((pw * pw + ph * ph) as i64) * 4;
    for x in 0..pw {
        for (y, slot) in f.iter_mut().enumerate() {
            let inside = x >= 1 && x <= w && y >= 1 && y <= h && region.get(x - 1, y - 1);
            *slot = if inside { inf } else { 0 };
        }
        lower_envelope(&f, &mut d[..ph], &mut v, &mut z);
        for y in 0..ph {
            cols[y * pw + x] = d[y];
        }
    }
    // Horizontal pass over the interior rows only.
    let mut values = vec![0u64; w * h];
    let mut row = vec![0i64; pw];
    for y in 1..=h {
        row.copy_from_slice(&cols[y * pw..(y + 1) * pw]);
        lower_envelope(&row, &mut d[..pw], &mut v, &mut z);
        for x in 1..=w {
            values[(y - 1) * w + (x - 1)] = d[x] as u64;
        }
    }
    DistanceField {
        width: w,
        height: h,
        values,
    }
}

/// 1-D transform `d[q] = min_p (q - p)^2 + f[p]`.
fn lower_envelope(f: &[i64], d: &mut [i64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s = intersection(f, v[k], q);
        // z[0] is -inf and every f is finite, so k never underflows.
        while s <= z[k] {
            k -= 1;
            s = intersection(f, v[k], q);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, slot) in d.iter_mut().enumerate().take(n) {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as i64 - p as i64;
        *slot = dq * dq + f[p];
    }
}

fn intersection(f: &[i64], p: usize, q: usize) -> f64 {
    let (p, q) = (p as i64, q as i64);
    ((f[q as usize] + q * q) - (f[p as usize] + p * p)) as f64 / (2 * (q - p)) as f64
}

/// First maximum in row-major order, as `((x, y), value)`.
pub fn argmax_point(field: &DistanceField) -> ((usize, usize), u64) {
    let mut best = 0usize;
    for (i, &v) in field.values.iter().enumerate() {
        if v > field.values[best] {
            best = i;
        }
    }
    ((best % field.width, best / field.width), field.values[best])
}
