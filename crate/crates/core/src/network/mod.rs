//! The completion network: a point encoder and a tri-view image encoder
//! fused by attention, a coarse generator, and residual upsampling stages.
//!
//! The full pipeline (`Model::complete`) is deterministic for a given
//! weight set: every data-dependent choice (resampling, neighbor search)
//! uses canonical orderings and a fixed internal stream, so permuting the
//! input point order does not change the output.

pub mod blocks;
pub mod checks;
pub mod encoder;
pub mod generator;
pub mod upsampler;

use crate::autodiff::{Graph, NodeId, ParamStore};
use crate::ccm;
use crate::error::{Error, Result};
use crate::geometry::{self, PointCloud};

use encoder::{CcmEncoder, PointEncoder};
use generator::{Alignment, CoarseGenerator};
use upsampler::{StageSpec, UpsampleStage};

/// Internal stream for the network's own sampling choices (centroid seeding
/// and seed merging). Fixed so a trained model is a pure function of its
/// weights and input.
pub const SAMPLING_SEED: u64 = 0x0DD5_EED5;

/// Architecture and sizing. `c` is the base width: the cloud summary is
/// `2C`, the fused feature `4C`, stage tokens `2C`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub c: usize,
    pub n_in: usize,
    pub n_coarse: usize,
    pub up_ratios: Vec<usize>,
    pub merge_target: usize,
    pub ccm_res: usize,
    pub heads: usize,
    pub edge_dims: (usize, usize),
    pub edge_k: usize,
    pub incep_kernels: Vec<usize>,
    pub incep_width: usize,
    pub use_ccm: bool,
    pub use_alignment: bool,
    pub use_inception: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            c: 32,
            n_in: 512,
            n_coarse: 128,
            up_ratios: vec![2, 2],
            merge_target: 512,
            ccm_res: 32,
            heads: 4,
            edge_dims: (64, 128),
            edge_k: 16,
            incep_kernels: vec![1, 3, 5],
            incep_width: 96,
            use_ccm: true,
            use_alignment: true,
            use_inception: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::BadConfig(msg));
        if self.c < 4 || self.c % 2 != 0 {
            return fail(format!("base width must be an even number >= 4, got {}", self.c));
        }
        if self.heads == 0 || (2 * self.c) % self.heads != 0 {
            return fail(format!("{} heads must divide token width {}", self.heads, 2 * self.c));
        }
        if self.n_in < 32 {
            return fail(format!("need at least 32 input points, got {}", self.n_in));
        }
        if self.n_coarse < 4 {
            return fail(format!("coarse size must be at least 4, got {}", self.n_coarse));
        }
        if self.up_ratios.is_empty() || self.up_ratios.iter().any(|&r| r < 1 || r > 16) {
            return fail(format!("upsample ratios must be in 1..=16, got {:?}", self.up_ratios));
        }
        if self.merge_target < 8 || self.merge_target > self.n_coarse + self.n_in {
            return fail(format!(
                "merge target {} must be in 8..={}",
                self.merge_target,
                self.n_coarse + self.n_in
            ));
        }
        if self.ccm_res < 8 {
            return fail(format!("view image side must be at least 8, got {}", self.ccm_res));
        }
        if self.edge_k < 2 {
            return fail(format!("edge neighborhood must be at least 2, got {}", self.edge_k));
        }
        if self.edge_dims.0 < 2 || self.edge_dims.1 < 2 {
            return fail(format!("edge feature widths must be at least 2, got {:?}", self.edge_dims));
        }
        if self.incep_kernels.is_empty() || self.incep_kernels.iter().any(|&k| k % 2 == 0) {
            return fail(format!("kernel sizes must be odd, got {:?}", self.incep_kernels));
        }
        if self.incep_width % self.incep_kernels.len() != 0 {
            return fail(format!(
                "multi-kernel width {} must split over {} branches",
                self.incep_width,
                self.incep_kernels.len()
            ));
        }
        Ok(())
    }

    /// Final output size: merge target times the product of stage ratios.
    pub fn final_points(&self) -> usize {
        self.merge_target * self.up_ratios.iter().product::<usize>()
    }

    fn stage_spec(&self, ratio: usize) -> StageSpec {
        StageSpec {
            c: self.c,
            heads: self.heads,
            ratio,
            edge_dims: self.edge_dims,
            edge_k: self.edge_k,
            incep_kernels: if self.use_inception {
                self.incep_kernels.clone()
            } else {
                vec![1]
            },
            incep_width: self.incep_width,
        }
    }
}

/// One forward pass's outputs: graph node ids for the coarse cloud, the seed
/// cloud entering the first stage, and every stage output in order (the last
/// one is the final completion).
pub struct ForwardOut {
    pub coarse: NodeId,
    pub seeds: NodeId,
    pub stages: Vec<NodeId>,
    pub trace: ShapeTrace,
}

/// Shapes of the named intermediate features, recorded during a forward
/// pass for contract tests.
#[derive(Debug, Clone, Default)]
pub struct ShapeTrace {
    pub cloud_summary: Vec<usize>,
    pub view_features: Option<Vec<usize>>,
    pub fused: Vec<usize>,
    pub coarse: Vec<usize>,
    pub seeds: Vec<usize>,
    pub stage_outputs: Vec<Vec<usize>>,
}

/// The assembled network with its parameters.
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    point_enc: PointEncoder,
    view_enc: Option<CcmEncoder>,
    align: Alignment,
    coarse_gen: CoarseGenerator,
    stages: Vec<UpsampleStage>,
}

/// Denormalized completion results.
pub struct Completion {
    /// The input after canonical resampling to the configured count.
    pub resampled_input: PointCloud,
    pub coarse: PointCloud,
    /// Stage outputs from first to last; the last is the completion.
    pub stages: Vec<PointCloud>,
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let point_enc = PointEncoder::new(&mut store, cfg.c, seed)?;
        let view_enc = if cfg.use_ccm {
            Some(CcmEncoder::new(&mut store, cfg.c, cfg.ccm_res, seed)?)
        } else {
            None
        };
        let align = Alignment::new(&mut store, cfg.c, cfg.heads, cfg.use_ccm, cfg.use_alignment, seed)?;
        let coarse_gen = CoarseGenerator::new(&mut store, cfg.c, cfg.n_coarse, seed)?;
        let stages = cfg
            .up_ratios
            .iter()
            .enumerate()
            .map(|(i, &r)| UpsampleStage::new(&mut store, &format!("up{i}"), &cfg.stage_spec(r), seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(Model { cfg, store, point_enc, view_enc, align, coarse_gen, stages })
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Builds the forward graph over a normalized partial cloud (all
    /// coordinates in the unit cube, exactly `n_in` points).
    pub fn forward(&self, g: &mut Graph, partial_norm: &PointCloud) -> Result<ForwardOut> {
        if partial_norm.len() != self.cfg.n_in {
            return Err(Error::ConfigMismatch(format!(
                "forward expects {} points, got {}",
                self.cfg.n_in,
                partial_norm.len()
            )));
        }
        let mut trace = ShapeTrace::default();
        let partial = g.constant(vec![self.cfg.n_in, 3], partial_norm.to_f32())?;

        let fp = self.point_enc.apply(g, &self.store, partial, partial_norm)?;
        trace.cloud_summary = g.shape(fp).to_vec();

        let views = match &self.view_enc {
            Some(enc) => {
                let tri = ccm::render_triplane(partial_norm, self.cfg.ccm_res, self.cfg.ccm_res)?;
                let fc = enc.apply_views(g, &self.store, &tri)?;
                trace.view_features = Some(g.shape(fc).to_vec());
                Some(fc)
            }
            None => None,
        };

        let fused = self.align.apply(g, &self.store, fp, views)?;
        trace.fused = g.shape(fused).to_vec();

        let coarse = self.coarse_gen.apply(g, &self.store, fused)?;
        trace.coarse = g.shape(coarse).to_vec();

        // Seed the first stage by giving every coarse point an equal share
        // of the merge seats: seats hold the point itself, a spread of the
        // observed input nearest to it, and jittered clones where the input
        // offers nothing. Density-balancing the seats this way keeps the
        // occluded region from being starved of points — a plain farthest
        // point merge hands most seats to the observed half, and later
        // stages cannot migrate points across the gap. Seats are gathered
        // from the graph union so gradients still reach the coarse cloud.
        let union = g.concat(&[coarse, partial], 0)?;
        let coarse_host = PointCloud::from_f32(&g.value(coarse).data)?;
        let plan = geometry::balanced_merge_plan(
            &coarse_host,
            partial_norm,
            self.cfg.merge_target,
            SAMPLING_SEED,
        )?;
        let gathered = g.gather_rows(union, plan.indices.clone())?;
        let jitter = g.constant(vec![self.cfg.merge_target, 3], plan.jitter_f32())?;
        let seeds = g.add(gathered, jitter)?;
        trace.seeds = g.shape(seeds).to_vec();

        let mut current = seeds;
        let mut stages = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            current = stage.apply(g, &self.store, current, fused, partial)?;
            trace.stage_outputs.push(g.shape(current).to_vec());
            stages.push(current);
        }
        Ok(ForwardOut { coarse, seeds, stages, trace })
    }

    /// Runs the full completion pipeline on a raw cloud: canonical
    /// resampling to the configured input count, normalization, forward
    /// pass, and denormalization of every output back to the input frame.
    pub fn complete(&self, input: &PointCloud) -> Result<Completion> {
        if input.len() < self.cfg.n_in {
            return Err(Error::BadCount { requested: self.cfg.n_in, available: input.len() });
        }
        let resampled = geometry::farthest_point_sample(input, self.cfg.n_in, SAMPLING_SEED)?;
        let (norm, scale, offset) = geometry::normalize_canonical(&resampled)?;
        let mut g = Graph::new();
        let out = self.forward(&mut g, &norm)?;
        let denorm = |id: NodeId| -> Result<PointCloud> {
            let cloud = PointCloud::from_f32(&g.value(id).data)?;
            Ok(geometry::denormalize(&cloud, scale, offset))
        };
        Ok(Completion {
            resampled_input: resampled,
            coarse: denorm(out.coarse)?,
            stages: out.stages.iter().map(|&id| denorm(id)).collect::<Result<Vec<_>>>()?,
        })
    }
}
