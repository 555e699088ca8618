//! Point set containers and the sampling primitives the pipeline is built on.
//!
//! All geometry here is double precision; the network casts to float32 at the
//! tensor boundary. Point order is significant for storage, but no operation's
//! geometric result depends on it: farthest point sampling picks its seeded
//! start by canonical (lexicographic) rank rather than by storage index, so a
//! permuted copy of a cloud samples the same point set.

use crate::error::{Error, Result};
use crate::rng;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// A finite set of 3-D points. Coordinates must stay finite; constructors
/// reject NaN/infinite input.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::format("point cloud", format!("non-finite coordinate at point {i}")));
            }
        }
        Ok(PointCloud { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn point(&self, i: usize) -> [f64; 3] {
        self.points[i]
    }

    /// Tight axis-aligned bounding box. Errors on an empty cloud.
    pub fn bounding_box(&self) -> Result<AxisBox> {
        if self.points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in &self.points {
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        Ok(AxisBox { min, max })
    }

    /// Concatenation, preserving order: `self` rows first, then `other`.
    pub fn concat(&self, other: &PointCloud) -> PointCloud {
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        PointCloud { points }
    }

    /// Rows at `indices`, in index order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
        }
    }

    /// Flattened row-major coordinates as float32, for the tensor boundary.
    pub fn to_f32(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.points.len() * 3);
        for p in &self.points {
            out.extend_from_slice(&[p[0] as f32, p[1] as f32, p[2] as f32]);
        }
        out
    }

    /// Builds a cloud from flattened row-major float32 coordinates.
    pub fn from_f32(data: &[f32]) -> Result<Self> {
        if data.len() % 3 != 0 {
            return Err(Error::format("point cloud", "flattened length is not a multiple of 3"));
        }
        PointCloud::new(
            data.chunks_exact(3)
                .map(|c| [f64::from(c[0]), f64::from(c[1]), f64::from(c[2])])
                .collect(),
        )
    }
}

/// Axis-aligned box with `min[a] <= max[a]` per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl AxisBox {
    pub fn extent(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn max_extent(&self) -> f64 {
        let e = self.extent();
        e[0].max(e[1]).max(e[2])
    }
}

/// k-nearest-neighbor indices per point; row `i` lists the neighbors of point
/// `i`, nearest first, self excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    pub k: usize,
    /// `n` rows of `k` indices each.
    pub indices: Vec<Vec<usize>>,
}

/// Squared Euclidean distance.
pub fn sqdist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Shifts and uniformly scales a cloud so its tight bounding box starts at the
/// origin and has maximum extent exactly 1: `p' = (p - bbox_min) * s` with
/// `s = 1 / max_extent`. Returns the normalized cloud together with `s` and
/// the offset `bbox_min`, so the transform can be inverted as `p = p'/s + offset`.
pub fn normalize_canonical(cloud: &PointCloud) -> Result<(PointCloud, f64, [f64; 3])> {
    let bbox = cloud.bounding_box()?;
    let extent = bbox.max_extent();
    if extent <= 0.0 {
        return Err(Error::DegenerateExtent);
    }
    let s = 1.0 / extent;
    let points = cloud
        .points
        .iter()
        .map(|p| {
            [
                (p[0] - bbox.min[0]) * s,
                (p[1] - bbox.min[1]) * s,
                (p[2] - bbox.min[2]) * s,
            ]
        })
        .collect();
    Ok((PointCloud { points }, s, bbox.min))
}

/// Applies an already-computed normalization `(scale, offset)` to another
/// cloud: `p' = (p - offset) * scale`. Used to carry a partial scan's frame
/// onto its ground truth so both live in the same canonical coordinates.
pub fn normalize_with(cloud: &PointCloud, scale: f64, offset: [f64; 3]) -> PointCloud {
    let points = cloud
        .points
        .iter()
        .map(|p| {
            [
                (p[0] - offset[0]) * scale,
                (p[1] - offset[1]) * scale,
                (p[2] - offset[2]) * scale,
            ]
        })
        .collect();
    PointCloud { points }
}

/// Inverse of [`normalize_canonical`]: maps canonical coordinates back into
/// the frame described by `(scale, offset)`.
pub fn denormalize(cloud: &PointCloud, scale: f64, offset: [f64; 3]) -> PointCloud {
    let points = cloud
        .points
        .iter()
        .map(|p| {
            [
                p[0] / scale + offset[0],
                p[1] / scale + offset[1],
                p[2] / scale + offset[2],
            ]
        })
        .collect();
    PointCloud { points }
}

/// Canonical rank order: indices sorted by lexicographic point comparison,
/// ties by index. Used to make the seeded FPS start independent of storage
/// order.
fn canonical_rank(points: &[[f64; 3]]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .partial_cmp(&points[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Farthest point sampling, returning the selected row indices in selection
/// order. The first point is drawn by the seeded generator (uniform over
/// canonical ranks, so a permuted cloud starts from the same geometric point);
/// each subsequent pick maximizes the minimum distance to the points already
/// chosen, breaking exact ties by lowest index.
pub fn farthest_point_sample_indices(cloud: &PointCloud, m: usize, seed: u64) -> Result<Vec<usize>> {
    let n = cloud.len();
    if m == 0 || m > n {
        return Err(Error::BadCount { requested: m, available: n });
    }
    let rank = canonical_rank(&cloud.points);
    let first = rank[rng::stream(seed, "fps").gen_range(0..n)];

    let mut chosen = Vec::with_capacity(m);
    chosen.push(first);
    // min_sq[i] = squared distance from point i to the chosen set so far.
    let mut min_sq: Vec<f64> = cloud
        .points
        .iter()
        .map(|&p| sqdist(p, cloud.points[first]))
        .collect();
    while chosen.len() < m {
        let mut best = 0usize;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in min_sq.iter().enumerate() {
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        chosen.push(best);
        let bp = cloud.points[best];
        for (i, d) in min_sq.iter_mut().enumerate() {
            let nd = sqdist(cloud.points[i], bp);
            if nd < *d {
                *d = nd;
            }
        }
    }
    Ok(chosen)
}

/// Farthest point sampling down to `m` points. See
/// [`farthest_point_sample_indices`] for the selection semantics.
pub fn farthest_point_sample(cloud: &PointCloud, m: usize, seed: u64) -> Result<PointCloud> {
    let idx = farthest_point_sample_indices(cloud, m, seed)?;
    Ok(cloud.select(&idx))
}

/// k-nearest neighbors of every point, self excluded. Neighbors are ordered
/// nearest-first; exact distance ties break toward the lower index. Requires
/// `1 <= k < n`.
pub fn knn_graph(cloud: &PointCloud, k: usize) -> Result<NeighborGraph> {
    let n = cloud.len();
    if k == 0 || k >= n {
        return Err(Error::TooFewPoints { n, k });
    }
    let mut indices = Vec::with_capacity(n);
    for i in 0..n {
        let pi = cloud.points[i];
        // (distance, index) pairs over all other points; full sort is fine at
        // the scales this crate targets and keeps the ordering contract obvious.
        let mut cand: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (sqdist(pi, cloud.points[j]), j))
            .collect();
        cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        indices.push(cand[..k].iter().map(|&(_, j)| j).collect());
    }
    Ok(NeighborGraph { k, indices })
}

/// Concatenates two clouds and farthest-point-samples the union down to `m`
/// points. Because FPS never prefers a zero-distance duplicate while distinct
/// points remain, merging a cloud with a copy of itself returns the original
/// point set.
pub fn merge_resample(a: &PointCloud, b: &PointCloud, m: usize, seed: u64) -> Result<PointCloud> {
    farthest_point_sample(&a.concat(b), m, seed)
}

/// A merge seating plan produced by [`balanced_merge_plan`]: which union row
/// fills each seat, plus an additive offset for seats that hold a jittered
/// anchor clone rather than a real point.
#[derive(Debug, Clone)]
pub struct BalancedMergePlan {
    /// Per-seat row into the `anchors ++ evidence` union (anchor rows first).
    pub indices: Vec<usize>,
    /// Per-seat additive offset; zero wherever the seat holds a real point.
    pub jitter: Vec<[f64; 3]>,
}

impl BalancedMergePlan {
    /// The jitter table flattened row-major to float32, ready to feed a
    /// tensor constructor.
    pub fn jitter_f32(&self) -> Vec<f32> {
        self.jitter.iter().flat_map(|row| row.iter().map(|&c| c as f32)).collect()
    }
}

/// Plans an `m`-seat merge of an anchor cloud with an evidence cloud,
/// guaranteeing observationally starved anchors their fair share of seats so
/// dense evidence cannot crowd sparsely observed regions out of the merge.
///
/// Every evidence point is assigned to its nearest anchor. Anchors whose
/// cell comes up empty — nothing was observed near them — are *starved*:
/// each keeps its fair share (`m` over the anchor count) of seats, filled
/// with the anchor itself plus clones jittered at a quarter of its spacing
/// to the nearest other anchor. All remaining seats go to a farthest-point
/// spread over the rest of the union (evidence plus the non-starved
/// anchors), which preserves the plain merge's behavior wherever evidence
/// exists. Seat indices refer to rows of the `anchors ++ evidence`
/// concatenation so a caller holding that union can gather seats directly.
/// Evidence ties between anchors break toward the lower anchor index, and
/// clone jitter is keyed per (anchor, seat) slot from `seed`, so the plan is
/// a pure function of its inputs and one anchor's starvation flipping never
/// reshuffles another's jitter.
pub fn balanced_merge_plan(
    anchors: &PointCloud,
    evidence: &PointCloud,
    m: usize,
    seed: u64,
) -> Result<BalancedMergePlan> {
    let k = anchors.len();
    let n = evidence.len();
    if k == 0 || m == 0 || m > k + n {
        return Err(Error::BadCount { requested: m, available: k + n });
    }
    let share = (m / k).max(1);

    // Every evidence point joins the cell of its nearest anchor.
    let mut cell_count = vec![0usize; k];
    for &p in evidence.points() {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (a, &c) in anchors.points().iter().enumerate() {
            let d = sqdist(p, c);
            if d < best_d {
                best_d = d;
                best = a;
            }
        }
        cell_count[best] += 1;
    }

    // Clone jitter scale per anchor: a quarter of the spacing to its nearest
    // peer, so clones pre-spread inside the anchor's own neighborhood without
    // drowning the downstream offsets in placement noise. A single-anchor
    // cloud has no peer; fall back to a small fixed spread.
    let sigma = |a: usize| -> f64 {
        let d = (0..k)
            .filter(|&b| b != a)
            .map(|b| sqdist(anchors.points()[a], anchors.points()[b]))
            .fold(f64::INFINITY, f64::min);
        if d.is_finite() {
            0.25 * d.sqrt()
        } else {
            0.1
        }
    };

    let mut indices = Vec::with_capacity(m);
    let mut jitter = Vec::with_capacity(m);
    let starved: Vec<usize> = (0..k).filter(|&a| cell_count[a] == 0).collect();
    'guarantee: for &a in &starved {
        let s = sigma(a);
        for seat in 0..share {
            if indices.len() == m {
                break 'guarantee;
            }
            indices.push(a);
            if seat == 0 {
                jitter.push([0.0; 3]);
            } else {
                let mut r =
                    rng::stream_at(seed, "geometry/balanced-merge", (a * share + seat) as u64);
                let gx: f64 = StandardNormal.sample(&mut r);
                let gy: f64 = StandardNormal.sample(&mut r);
                let gz: f64 = StandardNormal.sample(&mut r);
                jitter.push([s * gx, s * gy, s * gz]);
            }
        }
    }

    // Spread the remaining seats over everything observable: the evidence
    // and the anchors that have evidence of their own. `rest` never exceeds
    // the candidate count: the guarantee holds at most `m` seats, and with
    // `share >= 1` the guaranteed plus candidate totals cover `k + n >= m`.
    let rest = m - indices.len();
    if rest > 0 {
        let mut union_rows: Vec<usize> = (0..k).filter(|&a| cell_count[a] > 0).collect();
        union_rows.extend((0..n).map(|j| k + j));
        let sub = PointCloud::new(
            union_rows
                .iter()
                .map(|&row| {
                    if row < k {
                        anchors.points()[row]
                    } else {
                        evidence.points()[row - k]
                    }
                })
                .collect(),
        )?;
        for local in farthest_point_sample_indices(&sub, rest, seed)? {
            indices.push(union_rows[local]);
            jitter.push([0.0; 3]);
        }
    }
    debug_assert_eq!(indices.len(), m);
    Ok(BalancedMergePlan { indices, jitter })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn cloud(points: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(points.to_vec()).unwrap()
    }

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut r = rng::stream(seed, "test-cloud");
        PointCloud::new((0..n).map(|_| [r.gen::<f64>() * 2.0 - 0.5, r.gen::<f64>(), r.gen()]).collect()).unwrap()
    }

    fn as_sorted_set(c: &PointCloud) -> Vec<[u64; 3]> {
        let mut v: Vec<[u64; 3]> = c
            .points()
            .iter()
            .map(|p| [p[0].to_bits(), p[1].to_bits(), p[2].to_bits()])
            .collect();
        v.sort();
        v
    }

    // --- normalize_canonical ---

    #[test]
    fn normalize_reference_box() {
        // bbox [(-1,-1,-1),(1,3,1)]: widest axis is y with extent 4.
        let c = cloud(&[[-1.0, -1.0, -1.0], [1.0, 3.0, 1.0], [0.0, 1.0, 0.0]]);
        let (nc, s, off) = normalize_canonical(&c).unwrap();
        assert_eq!(s, 0.25);
        assert_eq!(off, [-1.0, -1.0, -1.0]);
        assert_eq!(nc.point(1), [0.5, 1.0, 0.5]);
        assert_eq!(nc.point(0), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_unit_output_box() {
        let c = random_cloud(64, 1);
        let (nc, _, _) = normalize_canonical(&c).unwrap();
        let bb = nc.bounding_box().unwrap();
        for a in 0..3 {
            assert!(bb.min[a].abs() < 1e-12, "min must sit at the origin");
            assert!(bb.max[a] <= 1.0 + 1e-12);
        }
        assert!((bb.max_extent() - 1.0).abs() < 1e-12, "max extent must be exactly 1");
    }

    #[test]
    fn normalize_is_idempotent_and_invertible() {
        let c = random_cloud(48, 2);
        let (n1, s, off) = normalize_canonical(&c).unwrap();
        let (n2, s2, off2) = normalize_canonical(&n1).unwrap();
        for (p, q) in n1.points().iter().zip(n2.points()) {
            for a in 0..3 {
                assert!((p[a] - q[a]).abs() < 1e-12, "normalizing twice must be a no-op");
            }
        }
        assert!((s2 - 1.0).abs() < 1e-12);
        assert!(off2.iter().all(|&x| x.abs() < 1e-12));
        let back = denormalize(&n1, s, off);
        for (p, q) in back.points().iter().zip(c.points()) {
            for a in 0..3 {
                assert!((p[a] - q[a]).abs() < 1e-9, "denormalize must invert the transform");
            }
        }
    }

    #[test]
    fn normalize_invariant_to_input_translation_and_scale() {
        let c = random_cloud(32, 3);
        let moved = PointCloud::new(
            c.points().iter().map(|p| [p[0] * 3.5 + 7.0, p[1] * 3.5 - 2.0, p[2] * 3.5 + 0.25]).collect(),
        )
        .unwrap();
        let (na, _, _) = normalize_canonical(&c).unwrap();
        let (nb, _, _) = normalize_canonical(&moved).unwrap();
        for (p, q) in na.points().iter().zip(nb.points()) {
            for a in 0..3 {
                assert!(
                    (p[a] - q[a]).abs() < 1e-9,
                    "canonical form must not depend on input frame: {p:?} vs {q:?}"
                );
            }
        }
    }

    #[test]
    fn normalize_errors() {
        assert!(matches!(normalize_canonical(&cloud(&[])), Err(Error::EmptyCloud)));
        let dup = cloud(&[[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]);
        assert!(matches!(normalize_canonical(&dup), Err(Error::DegenerateExtent)));
        let single = cloud(&[[5.0, 5.0, 5.0]]);
        assert!(matches!(normalize_canonical(&single), Err(Error::DegenerateExtent)));
    }

    // --- farthest_point_sample ---

    /// Finds a seed whose first FPS pick is the given point, so tests can pin
    /// the start without reaching into the selection internals.
    fn seed_starting_at(c: &PointCloud, want: [f64; 3]) -> u64 {
        (0..10_000u64)
            .find(|&s| farthest_point_sample(c, 1, s).unwrap().point(0) == want)
            .expect("some seed must start at the requested point")
    }

    #[test]
    fn fps_three_point_reference() {
        let c = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.1, 0.0, 0.0]]);
        let seed = seed_starting_at(&c, [0.0, 0.0, 0.0]);
        let s = farthest_point_sample(&c, 2, seed).unwrap();
        assert_eq!(s.points(), &[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    }

    #[test]
    fn fps_full_sample_is_permutation() {
        let c = random_cloud(40, 4);
        let s = farthest_point_sample(&c, 40, 9).unwrap();
        assert_eq!(as_sorted_set(&s), as_sorted_set(&c), "m = n must return every point");
    }

    #[test]
    fn fps_never_prefers_duplicates() {
        // Duplicated cloud: sampling back to the original size must recover
        // the original set, because every duplicate has min-distance zero
        // while distinct points remain.
        let c = random_cloud(24, 5);
        for seed in 0..32 {
            let merged = merge_resample(&c, &c, 24, seed).unwrap();
            assert_eq!(as_sorted_set(&merged), as_sorted_set(&c), "seed {seed}");
        }
    }

    #[test]
    fn fps_is_subset_and_deterministic() {
        let c = random_cloud(60, 6);
        let a = farthest_point_sample(&c, 17, 3).unwrap();
        let b = farthest_point_sample(&c, 17, 3).unwrap();
        assert_eq!(a, b, "same seed must reproduce the same sample");
        let set = as_sorted_set(&c);
        for p in a.points() {
            let key = [p[0].to_bits(), p[1].to_bits(), p[2].to_bits()];
            assert!(set.binary_search(&key).is_ok(), "sample must be a subset of the input");
        }
    }

    #[test]
    fn fps_beats_random_subsets_on_min_distance() {
        // Oracle: the defining property of FPS is spread. Its minimum pairwise
        // distance should beat the average random subset by a wide margin.
        let c = random_cloud(128, 7);
        let min_pairwise = |s: &PointCloud| -> f64 {
            let mut best = f64::INFINITY;
            for i in 0..s.len() {
                for j in (i + 1)..s.len() {
                    best = best.min(sqdist(s.point(i), s.point(j)));
                }
            }
            best
        };
        let fps_min = min_pairwise(&farthest_point_sample(&c, 16, 11).unwrap());
        let mut rand_sum = 0.0;
        let trials = 100;
        let mut r = rng::stream(99, "subset");
        for _ in 0..trials {
            let mut idx: Vec<usize> = (0..c.len()).collect();
            // Fisher-Yates prefix shuffle for a uniform 16-subset.
            for i in 0..16 {
                let j = r.gen_range(i..idx.len());
                idx.swap(i, j);
            }
            rand_sum += min_pairwise(&c.select(&idx[..16]));
        }
        let rand_avg = rand_sum / trials as f64;
        assert!(
            fps_min > rand_avg,
            "FPS min pairwise sq-distance {fps_min:.6} must exceed random-subset average {rand_avg:.6}"
        );
    }

    #[test]
    fn fps_permutation_invariant_for_generic_clouds() {
        let c = random_cloud(50, 8);
        let mut perm: Vec<usize> = (0..50).collect();
        perm.reverse();
        perm.swap(3, 27);
        let pc = c.select(&perm);
        let a = farthest_point_sample(&c, 12, 5).unwrap();
        let b = farthest_point_sample(&pc, 12, 5).unwrap();
        assert_eq!(as_sorted_set(&a), as_sorted_set(&b), "sampled set must not depend on storage order");
    }

    #[test]
    fn fps_errors() {
        let c = random_cloud(5, 9);
        assert!(matches!(farthest_point_sample(&c, 0, 0), Err(Error::BadCount { .. })));
        assert!(matches!(farthest_point_sample(&c, 6, 0), Err(Error::BadCount { .. })));
    }

    // --- knn_graph ---

    #[test]
    fn knn_line_reference() {
        let c = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        let g = knn_graph(&c, 1).unwrap();
        assert_eq!(g.indices, vec![vec![1], vec![0], vec![1]]);
        let g2 = knn_graph(&c, 2).unwrap();
        assert_eq!(g2.indices, vec![vec![1, 2], vec![0, 2], vec![1, 0]]);
    }

    #[test]
    fn knn_tie_breaks_to_lower_index() {
        // Points 1 and 2 are equidistant from point 0.
        let c = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [5.0, 0.0, 0.0]]);
        let g = knn_graph(&c, 2).unwrap();
        assert_eq!(g.indices[0], vec![1, 2], "equal distances must order by index");
    }

    #[test]
    fn knn_matches_bruteforce_oracle() {
        // Oracle: an independently written full scan (selection rather than sort).
        let c = random_cloud(128, 10);
        let k = 7;
        let g = knn_graph(&c, k).unwrap();
        for i in 0..c.len() {
            let mut remaining: Vec<usize> = (0..c.len()).filter(|&j| j != i).collect();
            let mut expect = Vec::with_capacity(k);
            for _ in 0..k {
                let mut best = remaining[0];
                let mut best_d = sqdist(c.point(i), c.point(best));
                for &j in &remaining[1..] {
                    let d = sqdist(c.point(i), c.point(j));
                    if d < best_d || (d == best_d && j < best) {
                        best = j;
                        best_d = d;
                    }
                }
                expect.push(best);
                remaining.retain(|&j| j != best);
            }
            assert_eq!(g.indices[i], expect, "row {i} disagrees with the brute-force oracle");
        }
    }

    #[test]
    fn knn_permutes_consistently() {
        let c = random_cloud(40, 11);
        let k = 5;
        let g = knn_graph(&c, k).unwrap();
        let mut perm: Vec<usize> = (0..40).rev().collect();
        perm.swap(1, 17);
        let pc = c.select(&perm);
        let pg = knn_graph(&pc, k).unwrap();
        // inv[old] = new position of original index `old`.
        let mut inv = vec![0usize; 40];
        for (newi, &old) in perm.iter().enumerate() {
            inv[old] = newi;
        }
        for old in 0..40 {
            let expect: Vec<usize> = g.indices[old].iter().map(|&j| inv[j]).collect();
            assert_eq!(pg.indices[inv[old]], expect, "neighbor rows must permute with the cloud");
        }
    }

    #[test]
    fn knn_errors() {
        let c = random_cloud(4, 12);
        assert!(matches!(knn_graph(&c, 0), Err(Error::TooFewPoints { .. })));
        assert!(matches!(knn_graph(&c, 4), Err(Error::TooFewPoints { .. })));
    }

    // --- merge_resample ---

    #[test]
    fn merge_disjoint_singletons_keeps_both() {
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        let b = cloud(&[[1.0, 1.0, 1.0]]);
        let m = merge_resample(&a, &b, 2, 3).unwrap();
        let mut got = as_sorted_set(&m);
        got.dedup();
        assert_eq!(got.len(), 2, "both distinct points must survive");
    }

    #[test]
    fn merge_output_is_subset_of_union() {
        let a = random_cloud(30, 13);
        let b = random_cloud(26, 14);
        let m = merge_resample(&a, &b, 20, 4).unwrap();
        let union = as_sorted_set(&a.concat(&b));
        for p in m.points() {
            let key = [p[0].to_bits(), p[1].to_bits(), p[2].to_bits()];
            assert!(union.binary_search(&key).is_ok());
        }
    }

    // --- balanced_merge_plan ---

    #[test]
    fn balanced_plan_without_starved_anchors_is_a_plain_spread() {
        // Two evidence points sit right next to every anchor, so no anchor
        // is starved and the plan reduces to a farthest-point spread over
        // the union: distinct rows, no jitter anywhere.
        let anchors = random_cloud(5, 31);
        let evidence = PointCloud::new(
            anchors
                .points()
                .iter()
                .flat_map(|&[x, y, z]| [[x + 0.01, y, z], [x, y + 0.01, z]])
                .collect(),
        )
        .unwrap();
        let plan = balanced_merge_plan(&anchors, &evidence, 13, 7).unwrap();
        assert_eq!(plan.indices.len(), 13);
        assert_eq!(plan.jitter.len(), 13);
        for &i in &plan.indices {
            assert!(i < 5 + 10, "seat row {i} outside the anchor++evidence union");
        }
        let mut sorted = plan.indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 13, "a plain spread never repeats a row");
        assert!(plan.jitter.iter().all(|j| j.iter().all(|&c| c == 0.0)));
    }

    #[test]
    fn balanced_plan_keeps_seats_in_unobserved_regions() {
        // Two anchor clusters; evidence only near the first. The far cluster
        // is starved and must keep its full fair share as jittered clones
        // instead of losing its seats to the dense side.
        let mut pts = Vec::new();
        for i in 0..4 {
            pts.push([0.1 * i as f64, 0.0, 0.0]);
        }
        for i in 0..4 {
            pts.push([10.0 + 0.1 * i as f64, 0.0, 0.0]);
        }
        let anchors = cloud(&pts);
        let mut r = rng::stream(77, "balanced-evidence");
        let evidence = PointCloud::new(
            (0..32)
                .map(|_| [r.gen::<f64>() * 0.4, r.gen::<f64>() * 0.1, r.gen::<f64>() * 0.1])
                .collect(),
        )
        .unwrap();
        let plan = balanced_merge_plan(&anchors, &evidence, 32, 7).unwrap();
        assert_eq!(plan.indices.len(), 32);

        // Far anchors (4..8) are starved: share = 32/8 = 4 seats each, one
        // unjittered self plus three local clones.
        for a in 4..8 {
            let occurrences = plan.indices.iter().filter(|&&i| i == a).count();
            assert_eq!(occurrences, 4, "far anchor {a} should hold its full share");
            let zero_jitter = plan
                .indices
                .iter()
                .zip(&plan.jitter)
                .filter(|&(&i, j)| i == a && j.iter().all(|&c| c == 0.0))
                .count();
            assert_eq!(zero_jitter, 1, "exactly one unjittered seat for far anchor {a}");
        }

        // The other 16 seats spread over near anchors and evidence, all
        // real points, never jittered.
        for (seat, (&idx, j)) in plan.indices.iter().zip(&plan.jitter).enumerate() {
            let jn = (j[0] * j[0] + j[1] * j[1] + j[2] * j[2]).sqrt();
            if idx < 4 || idx >= 8 {
                assert_eq!(jn, 0.0, "spread seat {seat} must not be jittered");
            } else {
                // Clone spread stays local: sigma is a quarter of the 0.1
                // anchor spacing, so even a few deviations is far below the
                // 10.0 cluster separation.
                assert!(jn < 1.0, "clone jitter {jn} too large at seat {seat}");
            }
        }
    }

    #[test]
    fn balanced_plan_is_a_pure_function_of_its_inputs() {
        let anchors = random_cloud(16, 51);
        let evidence = random_cloud(64, 52);
        let a = balanced_merge_plan(&anchors, &evidence, 48, 9).unwrap();
        let b = balanced_merge_plan(&anchors, &evidence, 48, 9).unwrap();
        assert_eq!(a.indices, b.indices);
        let bits = |p: &BalancedMergePlan| -> Vec<[u64; 3]> {
            p.jitter.iter().map(|r| [r[0].to_bits(), r[1].to_bits(), r[2].to_bits()]).collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn balanced_plan_rejects_impossible_requests() {
        let anchors = random_cloud(4, 61);
        let evidence = random_cloud(8, 62);
        assert!(balanced_merge_plan(&anchors, &evidence, 0, 1).is_err());
        assert!(balanced_merge_plan(&anchors, &evidence, 13, 1).is_err(), "13 seats from 12 rows");
        let none = PointCloud::new(Vec::new()).unwrap();
        assert!(balanced_merge_plan(&none, &evidence, 4, 1).is_err());
    }

    #[test]
    fn balanced_plan_truncates_the_guarantee_at_the_seat_budget() {
        // Evidence sits exactly on anchors 0..5, leaving 5..10 starved with
        // share 1 (self only). Four seats cannot hold all five guarantees;
        // the earliest starved anchors win.
        let anchors = random_cloud(10, 63);
        let evidence =
            PointCloud::new(anchors.points()[..5].to_vec()).unwrap();
        let plan = balanced_merge_plan(&anchors, &evidence, 4, 1).unwrap();
        assert_eq!(plan.indices, vec![5, 6, 7, 8]);
        assert!(plan.jitter.iter().all(|j| j.iter().all(|&c| c == 0.0)));
    }

    // --- property tests ---

    proptest! {
        #[test]
        fn prop_normalize_output_in_unit_cube(
            pts in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0, -100.0f64..100.0), 2..40)
        ) {
            let c = PointCloud::new(pts.iter().map(|&(x, y, z)| [x, y, z]).collect()).unwrap();
            if let Ok((nc, s, _)) = normalize_canonical(&c) {
                prop_assert!(s > 0.0);
                for p in nc.points() {
                    for a in 0..3 {
                        prop_assert!(p[a] >= -1e-12 && p[a] <= 1.0 + 1e-12);
                    }
                }
            }
        }

        #[test]
        fn prop_fps_subset_size(m in 1usize..20, seed in 0u64..50) {
            let c = random_cloud(20, 15);
            let s = farthest_point_sample(&c, m, seed).unwrap();
            prop_assert_eq!(s.len(), m);
        }
    }
}
