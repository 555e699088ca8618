//! Input encoders: a two-level set-abstraction encoder that turns the
//! partial cloud into one global feature row, and a small strided
//! convolutional encoder shared across the three orthographic coordinate
//! images.

use crate::autodiff::{Graph, NodeId, ParamStore};
use crate::ccm::{Ccm, TriPlaneSet};
use crate::error::Result;
use crate::geometry::{self, PointCloud};

use super::blocks::{Conv2d, Mlp};
use super::SAMPLING_SEED;

/// Two rounds of sample-group-pool over the partial input, then a global
/// max, producing a `(1, 2C)` summary row.
pub struct PointEncoder {
    level1: Mlp,
    level2: Mlp,
    c: usize,
}

impl PointEncoder {
    pub fn new(store: &mut ParamStore, c: usize, seed: u64) -> Result<Self> {
        Ok(PointEncoder {
            // Level inputs are [relative offset ; member payload]: payload is
            // raw coordinates at level 1 and level-1 features at level 2.
            level1: Mlp::new(store, "enc/sa1", &[6, c, c], seed)?,
            level2: Mlp::new(store, "enc/sa2", &[3 + c, 2 * c, 2 * c], seed)?,
            c,
        })
    }

    /// One sample-group-pool round: farthest-point-sample `m` centroids,
    /// group each with its `k` nearest neighbors (plus itself), run the
    /// per-member network on [relative offset ; member feature], max-pool
    /// the group.
    fn abstraction(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        mlp: &Mlp,
        coords: NodeId,
        feats: NodeId,
        host: &PointCloud,
        m: usize,
        k: usize,
    ) -> Result<(NodeId, NodeId, PointCloud)> {
        let centroids = geometry::farthest_point_sample_indices(host, m, SAMPLING_SEED)?;
        let nb = geometry::knn_graph(host, k)?;
        let group = k + 1;
        let mut member_idx = Vec::with_capacity(m * group);
        let mut center_idx = Vec::with_capacity(m * group);
        for &c in &centroids {
            member_idx.push(c);
            member_idx.extend_from_slice(&nb.indices[c]);
            center_idx.extend(std::iter::repeat(c).take(group));
        }
        let members = g.gather_rows(coords, member_idx.clone())?;
        let centers = g.gather_rows(coords, center_idx)?;
        let neg_centers = g.scale(centers, -1.0)?;
        let rel = g.add(members, neg_centers)?;
        let payload = g.gather_rows(feats, member_idx)?;
        let per_member = g.concat(&[rel, payload], 1)?;
        let mapped = mlp.apply(g, store, per_member)?;
        let activated = g.relu(mapped)?;
        let out_dim = mlp.out_dim();
        let grouped = g.reshape(activated, vec![m, group, out_dim])?;
        let pooled = g.max_reduce(grouped, 1)?;
        let new_coords = g.gather_rows(coords, centroids.clone())?;
        let new_host = host.select(&centroids);
        Ok((new_coords, pooled, new_host))
    }

    /// `coords` is the `(N, 3)` graph node for `host`; returns `(1, 2C)`.
    pub fn apply(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        coords: NodeId,
        host: &PointCloud,
    ) -> Result<NodeId> {
        let n = host.len();
        let m1 = (n / 4).max(2);
        let k1 = 16.min(n - 1);
        let (c1, f1, h1) = self.abstraction(g, store, &self.level1, coords, coords, host, m1, k1)?;
        let m2 = (m1 / 4).max(2);
        let k2 = 16.min(m1 - 1);
        let (_c2, f2, _h2) = self.abstraction(g, store, &self.level2, c1, f1, &h1, m2, k2)?;
        let global = g.max_reduce(f2, 0)?;
        g.reshape(global, vec![1, 2 * self.c])
    }
}

/// Strided convolutional encoder for one coordinate image; weights are
/// shared across the three views. Input channels are the three coordinate
/// colors plus the coverage mask.
pub struct CcmEncoder {
    conv0: Conv2d,
    conv1: Conv2d,
    conv2: Conv2d,
    res: usize,
    c: usize,
}

impl CcmEncoder {
    pub const IN_CHANNELS: usize = 4;

    pub fn new(store: &mut ParamStore, c: usize, res: usize, seed: u64) -> Result<Self> {
        Ok(CcmEncoder {
            conv0: Conv2d::new(store, "ccm/conv0", Self::IN_CHANNELS, c / 2, seed)?,
            conv1: Conv2d::new(store, "ccm/conv1", c / 2, c, seed)?,
            conv2: Conv2d::new(store, "ccm/conv2", c, c, seed)?,
            res,
            c,
        })
    }

    /// Packs one rendered view into `(res*res, 4)` pixel rows.
    fn pixel_rows(view: &Ccm) -> (Vec<usize>, Vec<f32>) {
        let n = view.h * view.w;
        let mut rows = Vec::with_capacity(n * Self::IN_CHANNELS);
        for p in 0..n {
            rows.extend_from_slice(&view.pixels[p * 3..p * 3 + 3]);
            rows.push(if view.mask[p] { 1.0 } else { 0.0 });
        }
        (vec![n, Self::IN_CHANNELS], rows)
    }

    /// Encodes one view to a `(1, C)` row.
    pub fn apply(&self, g: &mut Graph, store: &ParamStore, view: &Ccm) -> Result<NodeId> {
        let (shape, rows) = Self::pixel_rows(view);
        let mut x = g.constant(shape, rows)?;
        let mut side = self.res;
        for conv in [&self.conv0, &self.conv1, &self.conv2] {
            x = conv.apply(g, store, x, side)?;
            x = g.relu(x)?;
            side = Conv2d::out_side(side);
        }
        let pooled = g.mean_reduce(x, 0)?;
        g.reshape(pooled, vec![1, self.c])
    }

    /// Encodes all three views with shared weights into `(3, C)`.
    pub fn apply_views(&self, g: &mut Graph, store: &ParamStore, set: &TriPlaneSet) -> Result<NodeId> {
        let rows = set
            .views
            .iter()
            .map(|v| self.apply(g, store, v))
            .collect::<Result<Vec<_>>>()?;
        g.concat(&rows, 0)
    }
}
