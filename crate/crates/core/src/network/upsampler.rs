//! Residual upsampling stages. Each stage reads the current cloud, extracts
//! multi-scale per-point features (edge convolutions over coordinate and
//! feature neighborhoods, then parallel sequence convolutions of several
//! kernel sizes), mixes them with the global fused feature through self- and
//! cross-attention, and decodes one offset per output copy:
//! `out = repeat(points, ratio) + offsets`.

use crate::autodiff::{Graph, NodeId, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::geometry::NeighborGraph;
use crate::rng;
use rand::Rng;

use super::blocks::{
    broadcast_row, repeat_interleave, tile_rows, Conv1d, EdgeConv, Linear, Mlp, TransformerBlock,
};

/// Nearest neighbors in an arbitrary-dimension feature space, computed on
/// host values with the same ordering rules as the geometric version: sort
/// by (distance, index), self excluded.
pub fn knn_features(data: &[f32], n: usize, dim: usize, k: usize) -> Result<NeighborGraph> {
    if n == 0 || k == 0 || k >= n {
        return Err(Error::TooFewPoints { n, k });
    }
    let mut indices = Vec::with_capacity(n);
    for i in 0..n {
        let mut order: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let mut d = 0.0f64;
                for c in 0..dim {
                    let diff = f64::from(data[i * dim + c]) - f64::from(data[j * dim + c]);
                    d += diff * diff;
                }
                (d, j)
            })
            .collect();
        order.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        indices.push(order[..k].iter().map(|&(_, j)| j).collect());
    }
    Ok(NeighborGraph { k, indices })
}

/// Parallel sequence convolutions of different kernel sizes over the point
/// axis, concatenated to a fixed total width.
pub struct Inception {
    branches: Vec<Conv1d>,
}

impl Inception {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        total_width: usize,
        kernels: &[usize],
        seed: u64,
    ) -> Result<Self> {
        if kernels.is_empty() || total_width % kernels.len() != 0 {
            return Err(Error::BadConfig(format!(
                "inception {name:?}: width {total_width} must split over {} branches",
                kernels.len()
            )));
        }
        let per = total_width / kernels.len();
        let branches = kernels
            .iter()
            .enumerate()
            .map(|(i, &k)| Conv1d::new(store, &format!("{name}/k{k}_{i}"), in_dim, per, k, seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(Inception { branches })
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let outs = self
            .branches
            .iter()
            .map(|b| {
                let y = b.apply(g, store, x)?;
                g.relu(y)
            })
            .collect::<Result<Vec<_>>>()?;
        if outs.len() == 1 {
            return Ok(outs[0]);
        }
        g.concat(&outs, 1)
    }
}

/// Sinusoidal embedding of each point's squared distance to the partial
/// input — a cheap "how far from observed evidence" signal injected into the
/// stage tokens. Computed on host values and inserted as a constant, so it
/// shapes the features without being differentiated through.
pub fn distance_embedding(
    g: &mut Graph,
    points: &[f32],
    n: usize,
    partial: &[f32],
    n_partial: usize,
    dim: usize,
) -> Result<NodeId> {
    let mut rows = Vec::with_capacity(n * dim);
    for i in 0..n {
        let mut best = f64::INFINITY;
        for j in 0..n_partial {
            let mut d = 0.0f64;
            for c in 0..3 {
                let diff = f64::from(points[i * 3 + c]) - f64::from(partial[j * 3 + c]);
                d += diff * diff;
            }
            if d < best {
                best = d;
            }
        }
        for t in 0..dim / 2 {
            let freq = std::f64::consts::PI * f64::powi(2.0, (t as i32).min(24));
            rows.push((best * freq).sin() as f32);
            rows.push((best * freq).cos() as f32);
        }
        if dim % 2 == 1 {
            rows.push(best as f32);
        }
    }
    g.constant(vec![n, dim], rows)
}

/// One upsampling stage; see the module docs for the data flow.
pub struct UpsampleStage {
    pub ratio: usize,
    edge1: EdgeConv,
    edge2: EdgeConv,
    incep1: Inception,
    incep2: Inception,
    point_fuse: Mlp,
    global_proj: Linear,
    coord_proj: Linear,
    self_block: TransformerBlock,
    cross_block: TransformerBlock,
    query_proj: Linear,
    copy_emb: ParamId,
    dec_hidden: Linear,
    dec_out: Vec<Linear>,
    edge_k: usize,
    c: usize,
}

pub struct StageSpec {
    pub c: usize,
    pub heads: usize,
    pub ratio: usize,
    pub edge_dims: (usize, usize),
    pub edge_k: usize,
    pub incep_kernels: Vec<usize>,
    pub incep_width: usize,
}

impl UpsampleStage {
    pub fn new(store: &mut ParamStore, name: &str, spec: &StageSpec, seed: u64) -> Result<Self> {
        let d = 2 * spec.c;
        let (e1, e2) = spec.edge_dims;
        let w = spec.incep_width;
        // Copy tags are the only thing distinguishing the `ratio` children of
        // a parent; they must start at the same scale as the query features
        // they are added to, or the children collapse onto each other and the
        // stage wastes its multiplier.
        let mut r = rng::stream(seed, &format!("init/{name}/copy_emb"));
        let emb: Vec<f32> = (0..spec.ratio * d).map(|_| r.gen_range(-0.5..0.5)).collect();
        Ok(UpsampleStage {
            ratio: spec.ratio,
            edge1: EdgeConv::new(store, &format!("{name}/edge1"), 3, e1, seed)?,
            edge2: EdgeConv::new(store, &format!("{name}/edge2"), e1, e2, seed)?,
            incep1: Inception::new(store, &format!("{name}/incep1"), e1, w, &spec.incep_kernels, seed)?,
            incep2: Inception::new(store, &format!("{name}/incep2"), e2, w, &spec.incep_kernels, seed)?,
            point_fuse: Mlp::new(store, &format!("{name}/fuse"), &[2 * w, d], seed)?,
            global_proj: Linear::new(store, &format!("{name}/global"), 4 * spec.c, spec.c, seed)?,
            coord_proj: Linear::new(store, &format!("{name}/coord"), 3, spec.c, seed)?,
            self_block: TransformerBlock::new(store, &format!("{name}/self"), d, spec.heads, seed)?,
            cross_block: TransformerBlock::new(store, &format!("{name}/cross"), d, spec.heads, seed)?,
            query_proj: Linear::new(store, &format!("{name}/query"), 2 * d, d, seed)?,
            copy_emb: store.register(&format!("{name}/copy_emb"), vec![spec.ratio, d], emb)?,
            dec_hidden: Linear::new(store, &format!("{name}/dec_hidden"), d, d, seed)?,
            dec_out: (0..spec.ratio)
                .map(|j| {
                    Linear::with_scale(store, &format!("{name}/dec_out{j}"), d, 3, 0.05, 0.0, seed)
                })
                .collect::<Result<Vec<_>>>()?,
            edge_k: spec.edge_k,
            c: spec.c,
        })
    }

    /// `points` is `(N, 3)`, `fused` is `(1, 4C)`, `partial` is the
    /// normalized input cloud `(Np, 3)`. Returns `(N * ratio, 3)`.
    pub fn apply(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        points: NodeId,
        fused: NodeId,
        partial: NodeId,
    ) -> Result<NodeId> {
        let n = g.shape(points)[0];
        let host_points = g.value(points).data.clone();

        // Multi-scale per-point features over coordinate then feature space.
        let k1 = self.edge_k.min(n - 1);
        let nb1 = knn_features(&host_points, n, 3, k1)?;
        let f1 = self.edge1.apply(g, store, points, &nb1)?;
        let host_f1 = g.value(f1).data.clone();
        let k2 = self.edge_k.min(n - 1);
        let nb2 = knn_features(&host_f1, n, self.edge1.out_dim, k2)?;
        let f2 = self.edge2.apply(g, store, f1, &nb2)?;
        let m1 = self.incep1.apply(g, store, f1)?;
        let m2 = self.incep2.apply(g, store, f2)?;
        let multiscale = g.concat(&[m1, m2], 1)?;
        let fp_prime = self.point_fuse.apply(g, store, multiscale)?;

        // Tokens: projected coordinates next to the broadcast global feature,
        // plus the distance-to-evidence embedding.
        let gq = self.global_proj.apply(g, store, fused)?;
        let gq = broadcast_row(g, gq, n)?;
        let cq = self.coord_proj.apply(g, store, points)?;
        let tokens = g.concat(&[cq, gq], 1)?;
        let n_partial = g.shape(partial)[0];
        let partial_host = g.value(partial).data.clone();
        let emb = distance_embedding(g, &host_points, n, &partial_host, n_partial, 2 * self.c)?;
        let tokens = g.add(tokens, emb)?;

        // Mix tokens among themselves, then against the multi-scale features.
        let fa = self.self_block.apply(g, store, tokens)?;
        let fpi = self.cross_block.apply_cross(g, store, fa, fp_prime)?;

        // Queries: one per output copy = shared projection + per-copy tag.
        let qcat = g.concat(&[fpi, fa], 1)?;
        let q = self.query_proj.apply(g, store, qcat)?;
        let q = g.relu(q)?;
        let rep = repeat_interleave(g, q, self.ratio)?;
        let emb_leaf = g.param(store, self.copy_emb);
        let tags = tile_rows(g, emb_leaf, n)?;
        let queries = g.add(rep, tags)?;

        // Offset decode and residual add. Each copy has its own output head:
        // siblings then separate along parent-dependent directions instead of
        // sharing one global displacement field.
        let h = self.dec_hidden.apply(g, store, queries)?;
        let h = g.relu(h)?;
        let mut per_copy = Vec::with_capacity(self.ratio);
        for (j, head) in self.dec_out.iter().enumerate() {
            let rows: Vec<usize> = (0..n).map(|p| p * self.ratio + j).collect();
            let hj = g.gather_rows(h, rows)?;
            per_copy.push(head.apply(g, store, hj)?);
        }
        // Stack is copy-major; reorder back to parent-major child rows.
        let stacked = g.concat(&per_copy, 0)?;
        let back: Vec<usize> = (0..n * self.ratio)
            .map(|row| (row % self.ratio) * n + row / self.ratio)
            .collect();
        let offsets = g.gather_rows(stacked, back)?;
        let parents = repeat_interleave(g, points, self.ratio)?;
        g.add(parents, offsets)
    }
}

