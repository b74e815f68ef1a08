//! Ellipse phantoms: explicit specs, the classic head phantom preset, and a
//! seeded random family for synthetic datasets.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ct::{Image, ImageGrid};
use crate::error::{CoreError, Result};
use crate::rng::named_rng;

/// One ellipse of a phantom. Centers and semi-axes are in mm in the image
/// frame; `value_hu` either overrides or adds to the pixels it covers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx_mm: f64,
    pub cy_mm: f64,
    pub a_mm: f64,
    pub b_mm: f64,
    pub angle_rad: f64,
    pub value_hu: f64,
    pub additive: bool,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.cx_mm;
        let dy = y - self.cy_mm;
        let (s, c) = self.angle_rad.sin_cos();
        let u = c * dx + s * dy;
        let w = -s * dx + c * dy;
        (u / self.a_mm).powi(2) + (w / self.b_mm).powi(2) <= 1.0
    }
}

/// Recipe for a synthetic phantom: ellipses painted in order onto `grid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub grid: ImageGrid,
    pub ellipses: Vec<Ellipse>,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn new(grid: ImageGrid, ellipses: Vec<Ellipse>, seed: u64) -> Result<Self> {
        let half_w = 0.5 * grid.width_mm();
        let half_h = 0.5 * grid.height_mm();
        for (i, e) in ellipses.iter().enumerate() {
            if !(0.0..=3000.0).contains(&e.value_hu) {
                return Err(CoreError::InvalidParameter(format!(
                    "ellipse {i} value {} outside [0, 3000] HU",
                    e.value_hu
                )));
            }
            if !(e.a_mm > 0.0 && e.b_mm > 0.0) {
                return Err(CoreError::InvalidParameter(format!(
                    "ellipse {i} has nonpositive semi-axes"
                )));
            }
            let reach = e.a_mm.max(e.b_mm);
            if e.cx_mm.abs() - reach > half_w || e.cy_mm.abs() - reach > half_h {
                return Err(CoreError::InvalidParameter(format!(
                    "ellipse {i} lies entirely outside the grid support"
                )));
            }
        }
        Ok(Self {
            grid,
            ellipses,
            seed,
        })
    }
}

/// Renders a phantom spec to an offset-HU image. Ellipses are applied in
/// listed order: additive ones accumulate, the rest overwrite.
pub fn make_phantom(spec: &PhantomSpec) -> Image {
    let grid = spec.grid;
    let mut img = Image::zeros(grid);
    for r in 0..grid.n_rows {
        for c in 0..grid.n_cols {
            let (x, y) = grid.pixel_center(r, c);
            let mut v = 0.0;
            for e in &spec.ellipses {
                if e.contains(x, y) {
                    v = if e.additive { v + e.value_hu } else { e.value_hu };
                }
            }
            img.pixels[[r, c]] = v;
        }
    }
    img
}

/// The classic ten-ellipse head phantom, rendered with override semantics so
/// every ellipse value stays in the legal HU band. Normalized coordinates
/// from the standard table are scaled by half the grid extent; the skull rim
/// renders at 2000 offset-HU and the soft tissue near 1000.
pub fn shepp_logan_spec(grid: ImageGrid) -> PhantomSpec {
    let sx = 0.5 * grid.width_mm();
    let sy = 0.5 * grid.height_mm();
    let deg = std::f64::consts::PI / 180.0;
    // (cx, cy, a, b, angle_deg, absolute value in offset-HU)
    let table: [(f64, f64, f64, f64, f64, f64); 10] = [
        (0.0, 0.0, 0.69, 0.92, 0.0, 2000.0),
        (0.0, -0.0184, 0.6624, 0.874, 0.0, 1020.0),
        (0.22, 0.0, 0.11, 0.31, -18.0, 1000.0),
        (-0.22, 0.0, 0.16, 0.41, 18.0, 1000.0),
        (0.0, 0.35, 0.21, 0.25, 0.0, 1030.0),
        (0.0, 0.1, 0.046, 0.046, 0.0, 1030.0),
        (0.0, -0.1, 0.046, 0.046, 0.0, 1030.0),
        (-0.08, -0.605, 0.046, 0.023, 0.0, 1030.0),
        (0.0, -0.605, 0.023, 0.023, 0.0, 1030.0),
        (0.06, -0.605, 0.023, 0.046, 0.0, 1030.0),
    ];
    let ellipses = table
        .iter()
        .map(|&(cx, cy, a, b, ang, v)| Ellipse {
            cx_mm: cx * sx,
            cy_mm: cy * sy,
            a_mm: a * sx,
            b_mm: b * sy,
            angle_rad: ang * deg,
            value_hu: v,
            additive: false,
        })
        .collect();
    PhantomSpec::new(grid, ellipses, 0).expect("preset table is valid")
}

/// Seeded random body phantom: a soft-tissue ellipse around 1000 HU with a
/// handful of brighter additive lesions and darker override holes.
pub fn random_phantom_spec(grid: ImageGrid, seed: u64) -> PhantomSpec {
    let mut rng = named_rng(seed, "phantom");
    let sx = 0.5 * grid.width_mm();
    let sy = 0.5 * grid.height_mm();
    let mut ellipses = Vec::new();

    let body_a = sx * rng.random_range(0.62..0.82);
    let body_b = sy * rng.random_range(0.62..0.82);
    let body_v = rng.random_range(930.0..1070.0);
    ellipses.push(Ellipse {
        cx_mm: sx * rng.random_range(-0.05..0.05),
        cy_mm: sy * rng.random_range(-0.05..0.05),
        a_mm: body_a,
        b_mm: body_b,
        angle_rad: rng.random_range(-0.4..0.4),
        value_hu: body_v,
        additive: false,
    });

    let n_features = rng.random_range(3..8);
    for _ in 0..n_features {
        // Feature centers stay well inside the body ellipse.
        let rho: f64 = rng.random_range(0.0..0.55f64).sqrt();
        let ang = rng.random_range(0.0..std::f64::consts::TAU);
        let cx = rho * body_a * ang.cos();
        let cy = rho * body_b * ang.sin();
        let a = sx * rng.random_range(0.03..0.22);
        let b = sy * rng.random_range(0.03..0.22);
        let bright: bool = rng.random();
        let (value, additive) = if bright {
            (rng.random_range(80.0..700.0), true)
        } else {
            (rng.random_range(300.0..850.0), false)
        };
        ellipses.push(Ellipse {
            cx_mm: cx,
            cy_mm: cy,
            a_mm: a,
            b_mm: b,
            angle_rad: rng.random_range(0.0..std::f64::consts::PI),
            value_hu: value,
            additive,
        });
    }
    PhantomSpec::new(grid, ellipses, seed).expect("generated ellipses are valid")
}
