//! Synthetic benchmark data: surface samples of parametric solids, plus a
//! view-occlusion operator that keeps one half-space of a cloud, resamples
//! it to the requested input size, and optionally jitters it — producing
//! (complete, partial) training pairs with known geometry.

use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{self, PointCloud};
use crate::rng;

/// The sampled solid families. Dimensions are fixed per family so a name
/// plus a seed fully determines a cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeFamily {
    Sphere,
    Box,
    Cylinder,
    Torus,
    /// A sphere and a box, overlapping; hidden interior patches removed.
    UnionTwo,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 5] = [
        ShapeFamily::Sphere,
        ShapeFamily::Box,
        ShapeFamily::Cylinder,
        ShapeFamily::Torus,
        ShapeFamily::UnionTwo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ShapeFamily::Sphere => "sphere",
            ShapeFamily::Box => "box",
            ShapeFamily::Cylinder => "cylinder",
            ShapeFamily::Torus => "torus",
            ShapeFamily::UnionTwo => "union-two",
        }
    }
}

impl std::fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShapeFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::BadConfig(format!("unknown shape family {s:?}")))
    }
}

// Fixed dimensions (world units; the pipeline normalizes internally).
const SPHERE_R: f64 = 0.5;
const BOX_HALF: [f64; 3] = [0.5, 0.35, 0.25];
const CYL_R: f64 = 0.3;
const CYL_HALF_H: f64 = 0.4;
const TORUS_MAJOR: f64 = 0.35;
const TORUS_MINOR: f64 = 0.15;
const UNION_SPHERE_C: [f64; 3] = [-0.25, 0.0, 0.0];
const UNION_SPHERE_R: f64 = 0.35;
const UNION_BOX_C: [f64; 3] = [0.25, 0.0, 0.0];
const UNION_BOX_HALF: f64 = 0.25;

fn gaussian3<R: Rng>(r: &mut R) -> [f64; 3] {
    [
        StandardNormal.sample(r),
        StandardNormal.sample(r),
        StandardNormal.sample(r),
    ]
}

fn sphere_point<R: Rng>(r: &mut R, center: [f64; 3], radius: f64) -> [f64; 3] {
    loop {
        let g = gaussian3(r);
        let n = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        if n > 1e-9 {
            return [
                center[0] + g[0] / n * radius,
                center[1] + g[1] / n * radius,
                center[2] + g[2] / n * radius,
            ];
        }
    }
}

/// Samples a box surface with face probabilities proportional to area.
fn box_point<R: Rng>(r: &mut R, center: [f64; 3], half: [f64; 3]) -> [f64; 3] {
    let areas = [half[1] * half[2], half[0] * half[2], half[0] * half[1]];
    let total = 2.0 * (areas[0] + areas[1] + areas[2]);
    let mut pick = r.gen_range(0.0..total);
    let mut axis = 0;
    let mut sign = 1.0;
    'outer: for a in 0..3 {
        for s in [1.0, -1.0] {
            if pick < areas[a] {
                axis = a;
                sign = s;
                break 'outer;
            }
            pick -= areas[a];
        }
    }
    let mut p = [0.0; 3];
    for c in 0..3 {
        p[c] = if c == axis {
            sign * half[c]
        } else {
            r.gen_range(-half[c]..half[c])
        };
    }
    [center[0] + p[0], center[1] + p[1], center[2] + p[2]]
}

fn cylinder_point<R: Rng>(r: &mut R) -> [f64; 3] {
    let lateral = 2.0 * std::f64::consts::PI * CYL_R * (2.0 * CYL_HALF_H);
    let caps = 2.0 * std::f64::consts::PI * CYL_R * CYL_R;
    let theta = r.gen_range(0.0..std::f64::consts::TAU);
    if r.gen_range(0.0..lateral + caps) < lateral {
        let z = r.gen_range(-CYL_HALF_H..CYL_HALF_H);
        [CYL_R * theta.cos(), CYL_R * theta.sin(), z]
    } else {
        let z = if r.gen::<bool>() { CYL_HALF_H } else { -CYL_HALF_H };
        let rad = CYL_R * r.gen::<f64>().sqrt();
        [rad * theta.cos(), rad * theta.sin(), z]
    }
}

fn torus_point<R: Rng>(r: &mut R) -> [f64; 3] {
    let phi = r.gen_range(0.0..std::f64::consts::TAU);
    // Uniform surface density needs the minor angle weighted by the local
    // circumference R + r cos(theta); plain rejection on that weight.
    let theta = loop {
        let t = r.gen_range(0.0..std::f64::consts::TAU);
        let accept = (TORUS_MAJOR + TORUS_MINOR * t.cos()) / (TORUS_MAJOR + TORUS_MINOR);
        if r.gen::<f64>() < accept {
            break t;
        }
    };
    let ring = TORUS_MAJOR + TORUS_MINOR * theta.cos();
    [ring * phi.cos(), ring * phi.sin(), TORUS_MINOR * theta.sin()]
}

fn inside_union_sphere(p: [f64; 3]) -> bool {
    let d = [
        p[0] - UNION_SPHERE_C[0],
        p[1] - UNION_SPHERE_C[1],
        p[2] - UNION_SPHERE_C[2],
    ];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2] < UNION_SPHERE_R * UNION_SPHERE_R
}

fn inside_union_box(p: [f64; 3]) -> bool {
    (p[0] - UNION_BOX_C[0]).abs() < UNION_BOX_HALF
        && (p[1] - UNION_BOX_C[1]).abs() < UNION_BOX_HALF
        && (p[2] - UNION_BOX_C[2]).abs() < UNION_BOX_HALF
}

fn union_point<R: Rng>(r: &mut R) -> [f64; 3] {
    let sphere_area = 4.0 * std::f64::consts::PI * UNION_SPHERE_R * UNION_SPHERE_R;
    let box_area = 24.0 * UNION_BOX_HALF * UNION_BOX_HALF;
    loop {
        if r.gen_range(0.0..sphere_area + box_area) < sphere_area {
            let p = sphere_point(r, UNION_SPHERE_C, UNION_SPHERE_R);
            if !inside_union_box(p) {
                return p;
            }
        } else {
            let p = box_point(r, UNION_BOX_C, [UNION_BOX_HALF; 3]);
            if !inside_union_sphere(p) {
                return p;
            }
        }
    }
}

/// `n` surface samples of the family, fully determined by `seed`.
pub fn sample_shape(family: ShapeFamily, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    let mut r = rng::stream(seed, &format!("synth/{family}"));
    let pts: Vec<[f64; 3]> = (0..n)
        .map(|_| match family {
            ShapeFamily::Sphere => sphere_point(&mut r, [0.0; 3], SPHERE_R),
            ShapeFamily::Box => box_point(&mut r, [0.0; 3], BOX_HALF),
            ShapeFamily::Cylinder => cylinder_point(&mut r),
            ShapeFamily::Torus => torus_point(&mut r),
            ShapeFamily::UnionTwo => union_point(&mut r),
        })
        .collect();
    PointCloud::new(pts)
}

/// Indices a random half-space occlusion keeps: the `ceil(fraction * n)`
/// points with the largest projection onto a seeded direction (ties to the
/// lower index), in ascending index order.
pub fn occlusion_keep_indices(cloud: &PointCloud, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::BadConfig(format!(
            "keep fraction must be in (0, 1], got {fraction}"
        )));
    }
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut r = rng::stream(seed, "synth/occlusion");
    let normal = loop {
        let g = gaussian3(&mut r);
        let n = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        if n > 1e-9 {
            break [g[0] / n, g[1] / n, g[2] / n];
        }
    };
    let keep_n = ((fraction * cloud.len() as f64).ceil() as usize).max(1);
    let mut order: Vec<(f64, usize)> = cloud
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| (p[0] * normal[0] + p[1] * normal[1] + p[2] * normal[2], i))
        .collect();
    order.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("finite projections")
            .then(a.1.cmp(&b.1))
    });
    let mut kept: Vec<usize> = order[..keep_n].iter().map(|&(_, i)| i).collect();
    kept.sort_unstable();
    Ok(kept)
}

/// Occludes a complete cloud: keep one half-space (`fraction` of the
/// points), resample to exactly `out_points`, then add isotropic Gaussian
/// jitter of standard deviation `jitter` (zero leaves points verbatim).
pub fn occlude(
    cloud: &PointCloud,
    fraction: f64,
    out_points: usize,
    jitter: f64,
    seed: u64,
) -> Result<PointCloud> {
    let kept = occlusion_keep_indices(cloud, fraction, seed)?;
    if kept.is_empty() {
        return Err(Error::DegenerateOcclusion);
    }
    if kept.len() < out_points {
        return Err(Error::BadCount { requested: out_points, available: kept.len() });
    }
    let visible = cloud.select(&kept);
    let sampled = geometry::farthest_point_sample(&visible, out_points, seed)?;
    if jitter == 0.0 {
        return Ok(sampled);
    }
    if !(jitter > 0.0 && jitter.is_finite()) {
        return Err(Error::BadConfig(format!("jitter must be finite and >= 0, got {jitter}")));
    }
    let mut r = rng::stream(seed, "synth/jitter");
    let pts: Vec<[f64; 3]> = sampled
        .points()
        .iter()
        .map(|p| {
            let g = gaussian3(&mut r);
            [p[0] + g[0] * jitter, p[1] + g[1] * jitter, p[2] + g[2] * jitter]
        })
        .collect();
    PointCloud::new(pts)
}

/// Recipe for one (complete, partial) pair.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub family: ShapeFamily,
    pub gt_points: usize,
    pub partial_points: usize,
    pub keep_fraction: f64,
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            family: ShapeFamily::Sphere,
            gt_points: 2048,
            partial_points: 512,
            keep_fraction: 0.5,
            jitter: 0.0,
            seed: 0,
        }
    }
}

/// A complete cloud and its occluded counterpart.
pub fn generate(spec: &SynthSpec) -> Result<(PointCloud, PointCloud)> {
    let gt = sample_shape(spec.family, spec.gt_points, spec.seed)?;
    let partial = occlude(&gt, spec.keep_fraction, spec.partial_points, spec.jitter, spec.seed)?;
    Ok((gt, partial))
}
