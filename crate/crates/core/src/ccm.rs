//! Canonical coordinate maps: orthographic renderings of a normalized cloud
//! where each covered pixel stores the 3-D coordinates of the nearest point
//! as its color. Three fixed axis-aligned views form a tri-plane set.
//!
//! The three canonical rotations are the cyclic axis permutations, which map
//! the unit cube onto itself — image-plane coordinates and depth all stay in
//! `[0, 1]` with no translation term needed.

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Orthographic camera rotation. Rows are the camera's right, up, and forward
/// axes expressed in canonical coordinates, so `R * p` yields
/// `(image_x, image_y, depth)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub rotation: [[f64; 3]; 3],
}

impl CameraPose {
    /// Applies the rotation: returns `(image_x, image_y, depth)`.
    pub fn project(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2],
        ]
    }

    /// The camera forward axis (third row).
    pub fn forward(&self) -> [f64; 3] {
        self.rotation[2]
    }

    /// Row-major rotation entries as f32, the order used by the `.ccm` format.
    pub fn to_f32_row_major(&self) -> [f32; 9] {
        let r = &self.rotation;
        [
            r[0][0] as f32, r[0][1] as f32, r[0][2] as f32,
            r[1][0] as f32, r[1][1] as f32, r[1][2] as f32,
            r[2][0] as f32, r[2][1] as f32, r[2][2] as f32,
        ]
    }
}

/// A rendered coordinate map: `h x w` pixels, three float32 channels each
/// (the canonical coordinates of the winning point), plus a coverage mask.
/// Background pixels are 0.0 with `mask = false`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ccm {
    pub h: usize,
    pub w: usize,
    /// Row-major `h*w*3` colors; row 0 is the top of the image.
    pub pixels: Vec<f32>,
    /// Row-major `h*w` coverage flags.
    pub mask: Vec<bool>,
    pub pose: CameraPose,
}

impl Ccm {
    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let base = (row * self.w + col) * 3;
        [self.pixels[base], self.pixels[base + 1], self.pixels[base + 2]]
    }

    pub fn covered(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.w + col]
    }

    pub fn coverage_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// The three canonical maps in [`canonical_views`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct TriPlaneSet {
    pub views: [Ccm; 3],
}

/// The three fixed orthographic views:
///
/// - front: looks along +z; image coordinates are (x, y), depth is z,
/// - right: looks along +x; image coordinates are (y, z), depth is x,
/// - top:   looks along +y; image coordinates are (z, x), depth is y.
///
/// Each is a proper rotation (cyclic axis permutation, determinant +1) and
/// their forward axes are mutually orthogonal.
pub fn canonical_views() -> [CameraPose; 3] {
    [
        CameraPose {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        },
        CameraPose {
            rotation: [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]],
        },
        CameraPose {
            rotation: [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        },
    ]
}

/// Default rendering resolution.
pub const DEFAULT_CCM_RES: usize = 64;

/// Slack allowed when checking that input coordinates sit in the unit cube.
const UNIT_CUBE_TOL: f64 = 1e-6;

fn check_normalized(cloud: &PointCloud) -> Result<()> {
    for (i, p) in cloud.points().iter().enumerate() {
        for &c in p {
            if !(-UNIT_CUBE_TOL..=1.0 + UNIT_CUBE_TOL).contains(&c) {
                return Err(Error::NotNormalized { index: i, value: c });
            }
        }
    }
    Ok(())
}

/// Maps an image-plane coordinate in [0, 1] to a pixel index in [0, res).
fn to_pixel(coord: f64, res: usize) -> usize {
    let raw = (coord * res as f64).floor();
    raw.clamp(0.0, (res - 1) as f64) as usize
}

/// Renders one coordinate map, also returning the winning point index per
/// pixel (useful for consistency checks across views).
pub fn render_ccm_with_winners(
    cloud: &PointCloud,
    pose: &CameraPose,
    h: usize,
    w: usize,
) -> Result<(Ccm, Vec<Option<usize>>)> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if h == 0 || w == 0 {
        return Err(Error::BadCount { requested: h.max(w), available: 1 });
    }
    check_normalized(cloud)?;

    // Depth buffer; iterating points in index order with a strict `<`
    // comparison makes exact depth ties resolve to the lowest point index.
    let mut depth = vec![f64::INFINITY; h * w];
    let mut winner: Vec<Option<usize>> = vec![None; h * w];
    for (i, &p) in cloud.points().iter().enumerate() {
        let [ix, iy, d] = pose.project(p);
        let col = to_pixel(ix, w);
        // Image y is inverted: +y in the view plane is up, row 0 is the top.
        let row = h - 1 - to_pixel(iy, h);
        let at = row * w + col;
        if d < depth[at] {
            depth[at] = d;
            winner[at] = Some(i);
        }
    }

    let mut pixels = vec![0.0f32; h * w * 3];
    let mut mask = vec![false; h * w];
    for (at, win) in winner.iter().enumerate() {
        if let Some(i) = win {
            let p = cloud.point(*i);
            pixels[at * 3] = p[0] as f32;
            pixels[at * 3 + 1] = p[1] as f32;
            pixels[at * 3 + 2] = p[2] as f32;
            mask[at] = true;
        }
    }
    Ok((Ccm { h, w, pixels, mask, pose: *pose }, winner))
}

/// Renders one coordinate map of a normalized cloud under `pose`.
pub fn render_ccm(cloud: &PointCloud, pose: &CameraPose, h: usize, w: usize) -> Result<Ccm> {
    Ok(render_ccm_with_winners(cloud, pose, h, w)?.0)
}

/// Renders the three canonical views at the same resolution.
pub fn render_triplane(cloud: &PointCloud, h: usize, w: usize) -> Result<TriPlaneSet> {
    let [a, b, c] = canonical_views();
    Ok(TriPlaneSet {
        views: [
            render_ccm(cloud, &a, h, w)?,
            render_ccm(cloud, &b, h, w)?,
            render_ccm(cloud, &c, h, w)?,
        ],
    })
}
