use std::f64::consts::PI;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::operators::LinearMap;

/// Parallel-beam geometry on a `d×d` pixel grid: `n_angles` angles uniform in
/// `[0, π)` and `n_detectors` bins of unit (pixel) width centered on the
/// rotation axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RadonGeometry {
    pub d: usize,
    pub n_angles: usize,
    pub n_detectors: usize,
}

impl RadonGeometry {
    /// `d` angles and `⌈√2 d⌉` detectors (bumped by one when the parity differs
    /// from `d`, so that no ray at 0 or 90 degrees runs along a pixel edge).
    /// At `d = 100` this is `100 × 142 = 14200` measurements.
    pub fn for_image(d: usize) -> Self {
        let mut n_detectors = (d as f64 * 2f64.sqrt()).ceil() as usize;
        if n_detectors % 2 != d % 2 {
            n_detectors += 1;
        }
        Self {
            d,
            n_angles: d,
            n_detectors,
        }
    }

    pub fn domain_dim(&self) -> usize {
        self.d * self.d
    }

    pub fn range_dim(&self) -> usize {
        self.n_angles * self.n_detectors
    }

    pub fn angle(&self, a: usize) -> f64 {
        a as f64 * PI / self.n_angles as f64
    }

    /// Signed offset of detector `t` from the rotation axis, in pixels.
    pub fn detector_offset(&self, t: usize) -> f64 {
        t as f64 - (self.n_detectors as f64 - 1.0) / 2.0
    }

    fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n_angles == 0 || self.n_detectors == 0 {
            return Err(Error::InvalidArgument(format!(
                "degenerate Radon geometry {self:?}"
            )));
        }
        Ok(())
    }
}

/// Compressed rows of `(pixel, length)` pairs.
#[derive(Debug, Clone)]
struct RowTable {
    offsets: Vec<usize>,
    index: Vec<u32>,
    weight: Vec<f64>,
}

impl RowTable {
    fn gather(&self, x: &DVector<f64>, rows: usize) -> DVector<f64> {
        let out: Vec<f64> = (0..rows)
            .into_par_iter()
            .map(|r| {
                let span = self.offsets[r]..self.offsets[r + 1];
                self.index[span.clone()]
                    .iter()
                    .zip(&self.weight[span])
                    .map(|(&i, &w)| w * x[i as usize])
                    .sum()
            })
            .collect();
        DVector::from_vec(out)
    }
}

/// Discrete parallel-beam Radon transform.
///
/// Each measurement is the exact line integral of the piecewise-constant
/// image along one ray: the sum over crossed pixels of pixel value times
/// intersection length (Siddon's traversal). The adjoint is the transpose of
/// that same system, stored separately so both directions gather in
/// parallel.
#[derive(Debug, Clone)]
pub struct RadonOperator {
    geometry: RadonGeometry,
    rows: RowTable,
    cols: RowTable,
}

/// Parameter values in `(lo, hi)` where the ray `offset + λ·dir` crosses the
/// grid lines `edge_0 + k`, `k = 0..=d`.
fn crossings(offset: f64, dir: f64, d: usize, lo: f64, hi: f64, out: &mut Vec<f64>) {
    if dir.abs() < 1e-12 {
        return;
    }
    let half = d as f64 / 2.0;
    for k in 0..=d {
        let lambda = (-half + k as f64 - offset) / dir;
        if lambda > lo && lambda < hi {
            out.push(lambda);
        }
    }
}

/// Entry/exit parameters of the ray inside the slab `[-half, half]` along one
/// axis, or `None` when the ray misses it.
fn slab(offset: f64, dir: f64, half: f64) -> Option<(f64, f64)> {
    if dir.abs() < 1e-12 {
        return if offset.abs() < half {
            Some((f64::NEG_INFINITY, f64::INFINITY))
        } else {
            None
        };
    }
    let a = (-half - offset) / dir;
    let b = (half - offset) / dir;
    Some((a.min(b), a.max(b)))
}

fn trace_ray(d: usize, theta: f64, s: f64, buf: &mut Vec<f64>, row: &mut Vec<(u32, f64)>) {
    let (sin, cos) = theta.sin_cos();
    // point on the ray closest to the origin, and the ray direction
    let (px, py) = (s * cos, s * sin);
    let (ux, uy) = (-sin, cos);
    let half = d as f64 / 2.0;
    let Some((x_lo, x_hi)) = slab(px, ux, half) else {
        return;
    };
    let Some((y_lo, y_hi)) = slab(py, uy, half) else {
        return;
    };
    let lo = x_lo.max(y_lo);
    let hi = x_hi.min(y_hi);
    if !(hi > lo) {
        return;
    }
    buf.clear();
    buf.push(lo);
    crossings(px, ux, d, lo, hi, buf);
    crossings(py, uy, d, lo, hi, buf);
    buf.push(hi);
    buf.sort_by(f64::total_cmp);
    for w in buf.windows(2) {
        let len = w[1] - w[0];
        if len <= 1e-12 {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let x = px + mid * ux;
        let y = py + mid * uy;
        let col = ((x + half).floor() as isize).clamp(0, d as isize - 1) as usize;
        let from_bottom = ((y + half).floor() as isize).clamp(0, d as isize - 1) as usize;
        let r = d - 1 - from_bottom;
        row.push(((r * d + col) as u32, len));
    }
}

impl RadonOperator {
    pub fn new(geometry: RadonGeometry) -> Result<Self> {
        geometry.validate()?;
        let d = geometry.d;
        let m = geometry.range_dim();
        let traced: Vec<Vec<(u32, f64)>> = (0..m)
            .into_par_iter()
            .map_init(Vec::new, |buf, r| {
                let a = r / geometry.n_detectors;
                let t = r % geometry.n_detectors;
                let mut row = Vec::new();
                trace_ray(
                    d,
                    geometry.angle(a),
                    geometry.detector_offset(t),
                    buf,
                    &mut row,
                );
                row
            })
            .collect();

        let mut rows = RowTable {
            offsets: vec![0],
            index: Vec::new(),
            weight: Vec::new(),
        };
        let mut per_pixel: Vec<Vec<(u32, f64)>> = vec![Vec::new(); d * d];
        for (r, row) in traced.iter().enumerate() {
            for &(p, w) in row {
                rows.index.push(p);
                rows.weight.push(w);
                per_pixel[p as usize].push((r as u32, w));
            }
            rows.offsets.push(rows.index.len());
        }
        let mut cols = RowTable {
            offsets: vec![0],
            index: Vec::new(),
            weight: Vec::new(),
        };
        for entries in per_pixel {
            for (r, w) in entries {
                cols.index.push(r);
                cols.weight.push(w);
            }
            cols.offsets.push(cols.index.len());
        }
        Ok(Self {
            geometry,
            rows,
            cols,
        })
    }

    pub fn geometry(&self) -> &RadonGeometry {
        &self.geometry
    }

    /// Number of stored (ray, pixel) intersections.
    pub fn nnz(&self) -> usize {
        self.rows.index.len()
    }
}

impl LinearMap for RadonOperator {
    fn domain_dim(&self) -> usize {
        self.geometry.domain_dim()
    }
    fn range_dim(&self) -> usize {
        self.geometry.range_dim()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.domain_dim(), "image size mismatch");
        self.rows.gather(x, self.range_dim())
    }
    fn has_adjoint(&self) -> bool {
        true
    }
    fn apply_adjoint(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.range_dim() {
            return Err(Error::DimensionMismatch(format!(
                "sinogram has length {}, expected {}",
                y.len(),
                self.range_dim()
            )));
        }
        Ok(self.cols.gather(y, self.domain_dim()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::adjoint_test;
    use crate::tomo::phantom::disk;

    #[test]
    fn default_geometry_matches_reference_size() {
        let g = RadonGeometry::for_image(100);
        assert_eq!(g.range_dim(), 14200);
        let g = RadonGeometry::for_image(32);
        assert_eq!((g.n_angles, g.n_detectors), (32, 46));
        assert_eq!(RadonGeometry::for_image(33).n_detectors % 2, 1);
    }

    #[test]
    fn zero_image_zero_sinogram() {
        let op = RadonOperator::new(RadonGeometry::for_image(16)).unwrap();
        assert_eq!(op.apply(&DVector::zeros(256)).norm(), 0.0);
    }

    #[test]
    fn adjoint_is_transpose() {
        for d in [8, 15, 32] {
            let op = RadonOperator::new(RadonGeometry::for_image(d)).unwrap();
            assert!(adjoint_test(&op, 100, 3).unwrap() <= 1e-8);
        }
    }

    #[test]
    fn constant_image_gives_chord_lengths() {
        // the horizontal ray (theta = 0) through pixel centers has length d
        let d = 10;
        let g = RadonGeometry {
            d,
            n_angles: 1,
            n_detectors: 10,
        };
        let op = RadonOperator::new(g).unwrap();
        let y = op.apply(&DVector::from_element(d * d, 1.0));
        assert!(y.iter().all(|v| (v - d as f64).abs() < 1e-12));
    }

    #[test]
    fn disk_profiles_agree_under_grid_symmetries() {
        let d = 32;
        let g = RadonGeometry {
            d,
            n_angles: 4,
            n_detectors: 46,
        };
        let op = RadonOperator::new(g).unwrap();
        let y = op.apply(&disk(d, 0.8).pixels);
        let profile = |a: usize| y.rows(a * 46, 46).into_owned();
        assert!((profile(0) - profile(2)).norm() <= 1e-10);
        assert!((profile(1) - profile(3)).norm() <= 1e-10);
    }

    #[test]
    fn disk_profiles_nearly_agree_at_all_angles() {
        let d = 48;
        let g = RadonGeometry::for_image(d);
        let nd = g.n_detectors;
        let op = RadonOperator::new(g).unwrap();
        let y = op.apply(&disk(d, 0.8).pixels);
        let reference = y.rows(0, nd).into_owned();
        for a in 1..g.n_angles {
            let p = y.rows(a * nd, nd).into_owned();
            let rel = (&p - &reference).norm() / reference.norm();
            assert!(rel < 0.05, "angle {a}: {rel}");
        }
    }
}
