//! Learnable building blocks shared by the encoder, generator, and
//! upsampler: dense layers, multi-head attention, and the convolution
//! variants (image, sequence, and graph-edge) the pipeline uses.
//!
//! Every block registers its weights in a [`ParamStore`] at construction and
//! replays them into a fresh [`Graph`] per forward pass, so one set of
//! weights can serve any number of passes (and shared blocks — the
//! view-image encoder runs once per view — accumulate gradients from all
//! uses).

use rand::Rng;

use crate::autodiff::{Graph, NodeId, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::geometry::NeighborGraph;
use crate::rng;

/// Uniform Glorot-style init bound for a `(fan_in, fan_out)` weight.
fn init_bound(fan_in: usize, fan_out: usize) -> f32 {
    (6.0 / (fan_in + fan_out) as f64).sqrt() as f32
}

/// Draws an initialized weight matrix; the stream is labeled by parameter
/// name so initialization is independent of registration order.
fn init_weight(name: &str, rows: usize, cols: usize, scale: f32, seed: u64) -> Vec<f32> {
    let bound = init_bound(rows, cols) * scale;
    let mut r = rng::stream(seed, &format!("init/{name}"));
    (0..rows * cols).map(|_| r.gen_range(-bound..bound)).collect()
}

/// Fully connected layer `x W + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, seed: u64) -> Result<Self> {
        Self::with_scale(store, name, in_dim, out_dim, 1.0, 0.0, seed)
    }

    /// `weight_scale` shrinks the init range (offset decoders start near
    /// zero); `bias_value` fills the bias (the coarse head starts at the
    /// cube center).
    pub fn with_scale(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        weight_scale: f32,
        bias_value: f32,
        seed: u64,
    ) -> Result<Self> {
        let w = store.register(
            &format!("{name}/w"),
            vec![in_dim, out_dim],
            init_weight(name, in_dim, out_dim, weight_scale, seed),
        )?;
        let b = store.register(&format!("{name}/b"), vec![out_dim], vec![bias_value; out_dim])?;
        Ok(Linear { w, b, in_dim, out_dim })
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.linear(x, w, b)
    }
}

/// Dense stack with activations between layers (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims` lists layer widths from input to output, e.g. `[6, 32, 32]`.
    pub fn new(store: &mut ParamStore, name: &str, dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::BadConfig(format!("dense stack {name:?} needs at least two widths")));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}/{i}"), w[0], w[1], seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(Mlp { layers })
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(g, store, h)?;
            if i + 1 < self.layers.len() {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty stack").out_dim
    }
}

/// Multi-head attention. Self-attention passes the same node for queries and
/// context; cross-attention separates them. Heads are sliced from one packed
/// projection, attended independently, and re-concatenated.
#[derive(Debug, Clone)]
pub struct Attention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl Attention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, seed: u64) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::BadConfig(format!(
                "attention {name:?}: {heads} heads must evenly divide width {dim}"
            )));
        }
        Ok(Attention {
            wq: Linear::new(store, &format!("{name}/q"), dim, dim, seed)?,
            wk: Linear::new(store, &format!("{name}/k"), dim, dim, seed)?,
            wv: Linear::new(store, &format!("{name}/v"), dim, dim, seed)?,
            wo: Linear::new(store, &format!("{name}/o"), dim, dim, seed)?,
            heads,
            dim,
        })
    }

    /// `queries` is `(Tq, dim)`, `context` is `(Tk, dim)`; returns `(Tq, dim)`.
    pub fn apply(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        queries: NodeId,
        context: NodeId,
    ) -> Result<NodeId> {
        let q = self.wq.apply(g, store, queries)?;
        let k = self.wk.apply(g, store, context)?;
        let v = self.wv.apply(g, store, context)?;
        let dh = self.dim / self.heads;
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        let mut head_outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice(q, 1, h * dh, dh)?;
            let kh = g.slice(k, 1, h * dh, dh)?;
            let vh = g.slice(v, 1, h * dh, dh)?;
            let kt = g.t2(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scaled = g.scale(scores, inv_sqrt)?;
            let weights = g.softmax(scaled)?;
            head_outs.push(g.matmul(weights, vh)?);
        }
        let merged = g.concat(&head_outs, 1)?;
        self.wo.apply(g, store, merged)
    }
}

/// Pre-norm transformer block: attention and feed-forward sublayers, each
/// residual. The normalization is affine-free, so it adds no parameters.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub attn: Attention,
    pub ff: Mlp,
}

pub const NORM_EPS: f64 = 1e-5;

impl TransformerBlock {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, seed: u64) -> Result<Self> {
        Ok(TransformerBlock {
            attn: Attention::new(store, &format!("{name}/attn"), dim, heads, seed)?,
            ff: Mlp::new(store, &format!("{name}/ff"), &[dim, 2 * dim, dim], seed)?,
        })
    }

    /// Self-attention over `x` `(T, dim)`.
    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let n1 = g.layer_norm(x, NORM_EPS)?;
        let a = self.attn.apply(g, store, n1, n1)?;
        let h = g.add(x, a)?;
        let n2 = g.layer_norm(h, NORM_EPS)?;
        let f = self.ff.apply(g, store, n2)?;
        g.add(h, f)
    }

    /// Cross-attention from `x` `(Tq, dim)` into `context` `(Tk, dim)`.
    pub fn apply_cross(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: NodeId,
        context: NodeId,
    ) -> Result<NodeId> {
        let n1 = g.layer_norm(x, NORM_EPS)?;
        let nc = g.layer_norm(context, NORM_EPS)?;
        let a = self.attn.apply(g, store, n1, nc)?;
        let h = g.add(x, a)?;
        let n2 = g.layer_norm(h, NORM_EPS)?;
        let f = self.ff.apply(g, store, n2)?;
        g.add(h, f)
    }
}

/// 1-D convolution along the row axis of an `(N, Cin)` sequence with odd
/// kernel size and zero padding, implemented as an unfold (gather with a
/// synthetic zero row for out-of-range taps) followed by one dense layer.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub lin: Linear,
    pub kernel: usize,
    pub in_dim: usize,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        kernel: usize,
        seed: u64,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::BadConfig(format!("sequence conv {name:?} needs an odd kernel, got {kernel}")));
        }
        Ok(Conv1d {
            lin: Linear::new(store, name, kernel * in_dim, out_dim, seed)?,
            kernel,
            in_dim,
        })
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let n = g.shape(x)[0];
        let pad = (self.kernel - 1) / 2;
        let zero_row = g.zeros(vec![1, self.in_dim]);
        let padded = g.concat(&[x, zero_row], 0)?;
        let mut idx = Vec::with_capacity(n * self.kernel);
        for i in 0..n {
            for t in 0..self.kernel {
                let src = i as isize + t as isize - pad as isize;
                idx.push(if src < 0 || src >= n as isize { n } else { src as usize });
            }
        }
        let unfolded = g.gather_rows(padded, idx)?;
        let stacked = g.reshape(unfolded, vec![n, self.kernel * self.in_dim])?;
        self.lin.apply(g, store, stacked)
    }
}

/// 3x3 stride-2 image convolution with zero padding 1, for square
/// single-image inputs laid out as `(H*W, Cin)` pixel rows. Implemented the
/// same way as [`Conv1d`]: gather taps, then one dense layer.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub lin: Linear,
    pub in_dim: usize,
}

impl Conv2d {
    pub const KERNEL: usize = 3;
    pub const STRIDE: usize = 2;
    pub const PAD: usize = 1;

    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, seed: u64) -> Result<Self> {
        Ok(Conv2d {
            lin: Linear::new(store, name, Self::KERNEL * Self::KERNEL * in_dim, out_dim, seed)?,
            in_dim,
        })
    }

    /// Output side length for an input of side `s`.
    pub fn out_side(s: usize) -> usize {
        (s + 2 * Self::PAD - Self::KERNEL) / Self::STRIDE + 1
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: NodeId, side: usize) -> Result<NodeId> {
        if g.shape(x)[0] != side * side {
            return Err(Error::ShapeMismatch {
                expected: format!("{} pixel rows for side {side}", side * side),
                got: format!("{}", g.shape(x)[0]),
            });
        }
        let out_side = Self::out_side(side);
        let zero_row = g.zeros(vec![1, self.in_dim]);
        let padded = g.concat(&[x, zero_row], 0)?;
        let oob = side * side;
        let mut idx = Vec::with_capacity(out_side * out_side * 9);
        for oy in 0..out_side {
            for ox in 0..out_side {
                for ky in 0..Self::KERNEL {
                    for kx in 0..Self::KERNEL {
                        let iy = (oy * Self::STRIDE + ky) as isize - Self::PAD as isize;
                        let ix = (ox * Self::STRIDE + kx) as isize - Self::PAD as isize;
                        let inside =
                            iy >= 0 && iy < side as isize && ix >= 0 && ix < side as isize;
                        idx.push(if inside { iy as usize * side + ix as usize } else { oob });
                    }
                }
            }
        }
        let unfolded = g.gather_rows(padded, idx)?;
        let stacked = g.reshape(unfolded, vec![out_side * out_side, 9 * self.in_dim])?;
        self.lin.apply(g, store, stacked)
    }
}

/// Edge convolution over a fixed neighbor graph: each point aggregates
/// `max_j W [x_i ; x_j - x_i]` over its neighbors. The neighbor indices are
/// data (recomputed per forward pass by the caller), not parameters.
#[derive(Debug, Clone)]
pub struct EdgeConv {
    pub lin: Linear,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl EdgeConv {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, seed: u64) -> Result<Self> {
        Ok(EdgeConv {
            lin: Linear::new(store, name, 2 * in_dim, out_dim, seed)?,
            in_dim,
            out_dim,
        })
    }

    pub fn apply(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: NodeId,
        neighbors: &NeighborGraph,
    ) -> Result<NodeId> {
        let n = g.shape(x)[0];
        if neighbors.indices.len() != n {
            return Err(Error::ShapeMismatch {
                expected: format!("neighbor lists for {n} points"),
                got: format!("{}", neighbors.indices.len()),
            });
        }
        let k = neighbors.k;
        let mut center_idx = Vec::with_capacity(n * k);
        let mut neigh_idx = Vec::with_capacity(n * k);
        for (i, nb) in neighbors.indices.iter().enumerate() {
            for &j in nb {
                center_idx.push(i);
                neigh_idx.push(j);
            }
        }
        let centers = g.gather_rows(x, center_idx)?;
        let neighs = g.gather_rows(x, neigh_idx)?;
        let neg_centers = g.scale(centers, -1.0)?;
        let diffs = g.add(neighs, neg_centers)?;
        let edges = g.concat(&[centers, diffs], 1)?;
        let mapped = self.lin.apply(g, store, edges)?;
        let activated = g.relu(mapped)?;
        let grouped = g.reshape(activated, vec![n, k, self.out_dim])?;
        g.max_reduce(grouped, 1)
    }
}

/// Repeats each row of `x` `(N, D)` `ratio` times consecutively, returning
/// `(N*ratio, D)` — the structural half of a residual upsampling step.
pub fn repeat_interleave(g: &mut Graph, x: NodeId, ratio: usize) -> Result<NodeId> {
    let n = g.shape(x)[0];
    let idx: Vec<usize> = (0..n * ratio).map(|t| t / ratio).collect();
    g.gather_rows(x, idx)
}

/// Tiles a `(rows, D)` block `times` times vertically: row pattern
/// `0..rows, 0..rows, ...` — the companion of [`repeat_interleave`] for
/// per-copy embeddings.
pub fn tile_rows(g: &mut Graph, x: NodeId, times: usize) -> Result<NodeId> {
    let rows = g.shape(x)[0];
    let idx: Vec<usize> = (0..rows * times).map(|t| t % rows).collect();
    g.gather_rows(x, idx)
}

/// Broadcasts a single row `(1, D)` to `(n, D)`.
pub fn broadcast_row(g: &mut Graph, x: NodeId, n: usize) -> Result<NodeId> {
    g.gather_rows(x, vec![0; n])
}
