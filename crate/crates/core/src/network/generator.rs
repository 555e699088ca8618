//! Coarse-stage modules: fusing the global point feature with the per-view
//! image features through attention, and decoding the fused row into the
//! coarse cloud.

use crate::autodiff::{Graph, NodeId, ParamId, ParamStore};
use crate::error::Result;
use crate::rng;
use rand::Rng;

use super::blocks::{Linear, Mlp, TransformerBlock};

/// Fuses the `(1, 2C)` cloud summary with the optional `(3, C)` view
/// features. Tokens (one for the cloud, one per view) attend to each other,
/// the pooled result is refined, and the output is the cloud summary with
/// the refined row appended: `(1, 4C)`.
pub struct Alignment {
    fp_proj: Linear,
    view_proj: Option<Linear>,
    view_emb: Option<ParamId>,
    block: Option<TransformerBlock>,
    fuse: Mlp,
    c: usize,
}

impl Alignment {
    pub fn new(
        store: &mut ParamStore,
        c: usize,
        heads: usize,
        with_views: bool,
        with_attention: bool,
        seed: u64,
    ) -> Result<Self> {
        let d = 2 * c;
        let (view_proj, view_emb) = if with_views {
            let vp = Linear::new(store, "align/view", c, d, seed)?;
            let mut r = rng::stream(seed, "init/align/view_emb");
            let emb: Vec<f32> = (0..3 * d).map(|_| r.gen_range(-0.02..0.02)).collect();
            let ve = store.register("align/view_emb", vec![3, d], emb)?;
            (Some(vp), Some(ve))
        } else {
            (None, None)
        };
        let block = if with_attention {
            Some(TransformerBlock::new(store, "align/block", d, heads, seed)?)
        } else {
            None
        };
        Ok(Alignment {
            fp_proj: Linear::new(store, "align/fp", d, d, seed)?,
            view_proj,
            view_emb,
            block,
            fuse: Mlp::new(store, "align/fuse", &[d, d, d], seed)?,
            c,
        })
    }

    /// `fp` is `(1, 2C)`; `views` is `(3, C)` when the image branch is on.
    pub fn apply(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        fp: NodeId,
        views: Option<NodeId>,
    ) -> Result<NodeId> {
        let t0 = self.fp_proj.apply(g, store, fp)?;
        let tokens = match (views, &self.view_proj, self.view_emb) {
            (Some(fc), Some(vp), Some(ve)) => {
                let tv = vp.apply(g, store, fc)?;
                let emb = g.param(store, ve);
                let tv = g.add(tv, emb)?;
                g.concat(&[t0, tv], 0)?
            }
            _ => t0,
        };
        let mixed = match &self.block {
            Some(b) => b.apply(g, store, tokens)?,
            None => tokens,
        };
        let pooled = g.mean_reduce(mixed, 0)?;
        let pooled = g.reshape(pooled, vec![1, 2 * self.c])?;
        let fa = self.fuse.apply(g, store, pooled)?;
        g.concat(&[fp, fa], 1)
    }
}

/// Decodes the fused `(1, 4C)` feature into the coarse cloud `(Nc, 3)`.
/// The output head starts with small weights and bias at the cube center,
/// so untrained coarse points sit in a tight blob mid-volume.
pub struct CoarseGenerator {
    hidden: Linear,
    head: Linear,
    n_coarse: usize,
}

impl CoarseGenerator {
    pub fn new(store: &mut ParamStore, c: usize, n_coarse: usize, seed: u64) -> Result<Self> {
        Ok(CoarseGenerator {
            hidden: Linear::new(store, "gen/hidden", 4 * c, 8 * c, seed)?,
            head: Linear::with_scale(store, "gen/head", 8 * c, n_coarse * 3, 0.1, 0.5, seed)?,
            n_coarse,
        })
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, fused: NodeId) -> Result<NodeId> {
        let h = self.hidden.apply(g, store, fused)?;
        let h = g.relu(h)?;
        let flat = self.head.apply(g, store, h)?;
        g.reshape(flat, vec![self.n_coarse, 3])
    }
}
