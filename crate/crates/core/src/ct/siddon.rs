//! Siddon ray tracing: exact intersection lengths of a zero-width line with
//! the square pixel lattice.

use rayon::prelude::*;

use super::{FanBeamGeometry, ImageGrid, ScanMode, SystemMatrix};
use crate::error::{CoreError, Result};

/// Builds the sparse system matrix for `geometry` over `grid`.
///
/// Each ray is modeled as a zero-width line through the detector-cell center;
/// the row holds the exact chord length (mm) of that line in every pixel it
/// crosses, in traversal order. Identical inputs produce bit-identical
/// matrices.
pub fn build_system_matrix(geometry: &FanBeamGeometry, grid: &ImageGrid) -> Result<SystemMatrix> {
    if geometry.mode == ScanMode::FanFlat && geometry.src_to_iso_mm <= grid.circumradius_mm() {
        return Err(CoreError::InvalidParameter(format!(
            "source circle (r={}) intersects the image support (r={:.3})",
            geometry.src_to_iso_mm,
            grid.circumradius_mm()
        )));
    }
    let half_span = grid.circumradius_mm() + 4.0 * grid.pixel_size_mm;
    let n_det = geometry.n_detectors;
    let rows: Vec<Vec<(u32, f64)>> = (0..geometry.n_rays())
        .into_par_iter()
        .map(|i| {
            let (v, d) = (i / n_det, i % n_det);
            let (p1, p2) = geometry.ray_endpoints(v, d, half_span);
            trace_ray(grid, p1, p2)
        })
        .collect();
    if rows.iter().all(Vec::is_empty) {
        return Err(CoreError::EmptySystemMatrix);
    }
    Ok(SystemMatrix::from_rows(*geometry, *grid, rows))
}

/// Pixel crossings of the segment `p1 -> p2`, as `(pixel_index, length_mm)`.
pub(crate) fn trace_ray(grid: &ImageGrid, p1: (f64, f64), p2: (f64, f64)) -> Vec<(u32, f64)> {
    let px = grid.pixel_size_mm;
    let x0 = -0.5 * grid.width_mm();
    let y0 = -0.5 * grid.height_mm();
    let (dx, dy) = (p2.0 - p1.0, p2.1 - p1.1);
    let seg_len = (dx * dx + dy * dy).sqrt();
    if seg_len == 0.0 {
        return Vec::new();
    }

    // Parameter range of the segment inside the grid bounding box.
    let mut a_min = 0.0f64;
    let mut a_max = 1.0f64;
    for (p, d, lo, extent) in [
        (p1.0, dx, x0, grid.width_mm()),
        (p1.1, dy, y0, grid.height_mm()),
    ] {
        if d.abs() > 1e-300 {
            let a0 = (lo - p) / d;
            let a1 = (lo + extent - p) / d;
            a_min = a_min.max(a0.min(a1));
            a_max = a_max.min(a0.max(a1));
        } else if p < lo || p > lo + extent {
            return Vec::new();
        }
    }
    if a_min >= a_max {
        return Vec::new();
    }

    // Merged, sorted plane-crossing parameters within [a_min, a_max].
    let mut alphas = Vec::with_capacity(grid.n_cols + grid.n_rows + 2);
    alphas.push(a_min);
    for (p, d, lo, n) in [
        (p1.0, dx, x0, grid.n_cols),
        (p1.1, dy, y0, grid.n_rows),
    ] {
        if d.abs() > 1e-300 {
            for i in 0..=n {
                let a = (lo + i as f64 * px - p) / d;
                if a > a_min && a < a_max {
                    alphas.push(a);
                }
            }
        }
    }
    alphas.push(a_max);
    alphas.sort_by(|a, b| a.partial_cmp(b).expect("finite alphas"));

    let mut out = Vec::with_capacity(alphas.len());
    for w in alphas.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = (b - a) * seg_len;
        if len <= 1e-12 * px {
            continue;
        }
        let mid = 0.5 * (a + b);
        let x = p1.0 + mid * dx;
        let y = p1.1 + mid * dy;
        let c = ((x - x0) / px).floor();
        let r_from_bottom = ((y - y0) / px).floor();
        if c < 0.0
            || c >= grid.n_cols as f64
            || r_from_bottom < 0.0
            || r_from_bottom >= grid.n_rows as f64
        {
            continue;
        }
        let r = grid.n_rows - 1 - r_from_bottom as usize;
        let j = (r * grid.n_cols + c as usize) as u32;
        out.push((j, len));
    }
    out
}
