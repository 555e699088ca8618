//! Network-level verification: finite-difference checks per block, shape
//! contracts for the named intermediate features, the residual-identity
//! property of the upsampling stages, whole-pipeline permutation invariance,
//! and a census that every registered parameter receives a gradient.

use rand::Rng;

use crate::autodiff::gradcheck::{finite_diff_check, random_tensor, scalarize, CheckReport};
use crate::autodiff::Graph;
use crate::ccm;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::rng;

use super::blocks::repeat_interleave;
use super::{Model, ModelConfig};

/// Small sizing used for gradient checks and contract tests: fast enough to
/// probe densely, wide enough to exercise every code path.
pub fn small_config(c: usize) -> ModelConfig {
    ModelConfig {
        c,
        n_in: 64,
        n_coarse: 16,
        up_ratios: vec![2, 2],
        merge_target: 32,
        ccm_res: 8,
        heads: 2,
        edge_dims: (8, 12),
        edge_k: 4,
        incep_kernels: vec![1, 3, 5],
        incep_width: 12,
        use_ccm: true,
        use_alignment: true,
        use_inception: true,
    }
}

/// Uniform cloud in the unit cube (already a valid normalized input).
pub fn unit_cloud(n: usize, seed: u64) -> PointCloud {
    let mut r = rng::stream(seed, "checks/unit_cloud");
    let pts: Vec<[f64; 3]> = (0..n).map(|_| [r.gen::<f64>(), r.gen::<f64>(), r.gen::<f64>()]).collect();
    PointCloud::new(pts).expect("finite random points")
}

/// Finite-difference reports for every network block plus the assembled
/// pipeline loss, at the given probe density. All weights and (where
/// meaningful) inputs are probed.
pub fn block_suite(seed: u64, min_probes: usize) -> Result<Vec<CheckReport>> {
    let cfg = small_config(8);
    let model = Model::new(cfg.clone(), seed)?;
    let mut reports = Vec::new();

    // Point encoder: probe both the input coordinates and the weights.
    {
        let cloud = unit_cloud(cfg.n_in, seed);
        let mut g = Graph::new();
        let coords = g.leaf(
            crate::autodiff::Tensor::new(vec![cfg.n_in, 3], cloud.to_f32())?.with_grad(),
        );
        let fp = model.point_enc.apply(&mut g, &model.store, coords, &cloud)?;
        let loss = scalarize(&mut g, fp, seed)?;
        let leaves = g.differentiable_leaves();
        reports.push(finite_diff_check(&mut g, loss, &leaves, "point_encoder", seed, min_probes)?);
    }

    // View-image encoder over one rendered view (weights only; pixels are
    // data).
    {
        let cloud = unit_cloud(cfg.n_in, seed.wrapping_add(1));
        let tri = ccm::render_triplane(&cloud, cfg.ccm_res, cfg.ccm_res)?;
        let enc = model.view_enc.as_ref().expect("view branch enabled");
        let mut g = Graph::new();
        let fc = enc.apply(&mut g, &model.store, &tri.views[0])?;
        let loss = scalarize(&mut g, fc, seed)?;
        let leaves = g.differentiable_leaves();
        reports.push(finite_diff_check(&mut g, loss, &leaves, "view_image_encoder", seed, min_probes)?);
    }

    // Feature alignment over random summary and view rows.
    {
        let mut g = Graph::new();
        let fp = g.leaf(random_tensor(vec![1, 2 * cfg.c], -1.0, 1.0, seed, "checks/align/fp").with_grad());
        let fc = g.leaf(random_tensor(vec![3, cfg.c], -1.0, 1.0, seed, "checks/align/fc").with_grad());
        let fused = model.align.apply(&mut g, &model.store, fp, Some(fc))?;
        let loss = scalarize(&mut g, fused, seed)?;
        let leaves = g.differentiable_leaves();
        reports.push(finite_diff_check(&mut g, loss, &leaves, "feature_alignment", seed, min_probes)?);
    }

    // Coarse generator from a random fused row.
    {
        let mut g = Graph::new();
        let fused = g.leaf(random_tensor(vec![1, 4 * cfg.c], -1.0, 1.0, seed, "checks/gen/f").with_grad());
        let coarse = model.coarse_gen.apply(&mut g, &model.store, fused)?;
        let loss = scalarize(&mut g, coarse, seed)?;
        let leaves = g.differentiable_leaves();
        reports.push(finite_diff_check(&mut g, loss, &leaves, "coarse_generator", seed, min_probes)?);
    }

    // One upsampling stage over random seeds.
    {
        let mut g = Graph::new();
        let pts = g.leaf(random_tensor(vec![24, 3], 0.0, 1.0, seed, "checks/up/p").with_grad());
        let fused = g.leaf(random_tensor(vec![1, 4 * cfg.c], -1.0, 1.0, seed, "checks/up/f").with_grad());
        let partial = g.constant(vec![16, 3], random_tensor(vec![16, 3], 0.0, 1.0, seed, "checks/up/part").data)?;
        let out = model.stages[0].apply(&mut g, &model.store, pts, fused, partial)?;
        let loss = scalarize(&mut g, out, seed)?;
        let leaves = g.differentiable_leaves();
        reports.push(finite_diff_check(&mut g, loss, &leaves, "upsample_stage", seed, min_probes)?);
    }

    // Assembled pipeline with the training objective (all weights).
    {
        let cloud = unit_cloud(cfg.n_in, seed.wrapping_add(2));
        let gt = unit_cloud(cfg.n_in * 2, seed.wrapping_add(3));
        let mut g = Graph::new();
        let out = model.forward(&mut g, &cloud)?;
        let gt_node = g.constant(vec![gt.len(), 3], gt.to_f32())?;
        let mut loss = g.arc_chamfer(out.coarse, gt_node)?;
        for &stage in &out.stages {
            let term = g.arc_chamfer(stage, gt_node)?;
            loss = g.add(loss, term)?;
        }
        let leaves = g.differentiable_leaves();
        reports.push(finite_diff_check(&mut g, loss, &leaves, "pipeline_loss", seed, min_probes)?);
    }

    Ok(reports)
}

/// Runs a forward pass and verifies every named intermediate feature shape
/// implied by the configuration.
pub fn verify_shape_contract(cfg: &ModelConfig, seed: u64) -> Result<()> {
    let model = Model::new(cfg.clone(), seed)?;
    let cloud = unit_cloud(cfg.n_in, seed);
    let mut g = Graph::new();
    let out = model.forward(&mut g, &cloud)?;
    let t = &out.trace;
    let check = |what: &str, got: &[usize], want: &[usize]| -> Result<()> {
        if got != want {
            return Err(Error::ShapeMismatch {
                expected: format!("{what} = {want:?}"),
                got: format!("{got:?}"),
            });
        }
        Ok(())
    };
    check("cloud summary", &t.cloud_summary, &[1, 2 * cfg.c])?;
    match (&t.view_features, cfg.use_ccm) {
        (Some(s), true) => check("view features", s, &[3, cfg.c])?,
        (None, false) => {}
        (got, _) => {
            return Err(Error::ShapeMismatch {
                expected: format!("view features present = {}", cfg.use_ccm),
                got: format!("{got:?}"),
            })
        }
    }
    check("fused feature", &t.fused, &[1, 4 * cfg.c])?;
    check("coarse cloud", &t.coarse, &[cfg.n_coarse, 3])?;
    check("stage seeds", &t.seeds, &[cfg.merge_target, 3])?;
    let mut n = cfg.merge_target;
    for (i, r) in cfg.up_ratios.iter().enumerate() {
        n *= r;
        check(&format!("stage {i} output"), &t.stage_outputs[i], &[n, 3])?;
    }
    Ok(())
}

/// With the offset heads zeroed, every stage must reproduce its input
/// verbatim, each row repeated `ratio` times: the learned part rides on an
/// exact structural skeleton. Returns the largest absolute deviation (zero
/// when the property holds exactly).
pub fn residual_identity_deviation(cfg: &ModelConfig, seed: u64) -> Result<f32> {
    let mut model = Model::new(cfg.clone(), seed)?;
    for (i, &ratio) in cfg.up_ratios.iter().enumerate() {
        for j in 0..ratio {
            for part in ["w", "b"] {
                let name = format!("up{i}/dec_out{j}/{part}");
                let id = model
                    .store
                    .lookup(&name)
                    .ok_or_else(|| Error::BadConfig(format!("missing parameter {name}")))?;
                model.store.tensor_mut(id).data.fill(0.0);
            }
        }
    }
    let cloud = unit_cloud(cfg.n_in, seed);
    let mut g = Graph::new();
    let out = model.forward(&mut g, &cloud)?;
    let mut worst = 0.0f32;
    let mut prev = out.seeds;
    for (i, &stage) in out.stages.iter().enumerate() {
        let expect = repeat_interleave(&mut g, prev, cfg.up_ratios[i])?;
        let (got, want) = (g.value(stage), g.value(expect));
        assert_eq!(got.shape, want.shape, "stage {i} skeleton shape");
        for (a, b) in got.data.iter().zip(&want.data) {
            worst = worst.max((a - b).abs());
        }
        prev = stage;
    }
    Ok(worst)
}

/// Completes the same cloud twice — once in given order, once under a fixed
/// permutation — and returns the largest bitwise difference indicator
/// (`true` if any float differs in bits).
pub fn permutation_sensitivity(cfg: &ModelConfig, seed: u64) -> Result<bool> {
    let model = Model::new(cfg.clone(), seed)?;
    let base = unit_cloud(cfg.n_in + 17, seed);
    let mut order: Vec<usize> = (0..base.len()).collect();
    // Deterministic shuffle.
    let mut r = rng::stream(seed, "checks/permute");
    for i in (1..order.len()).rev() {
        order.swap(i, r.gen_range(0..=i));
    }
    let permuted = base.select(&order);
    let a = model.complete(&base)?;
    let b = model.complete(&permuted)?;
    let differs = |x: &PointCloud, y: &PointCloud| -> bool {
        x.len() != y.len()
            || x.points().iter().zip(y.points()).any(|(p, q)| {
                p.iter().zip(q).any(|(u, v)| u.to_bits() != v.to_bits())
            })
    };
    let mut any = differs(&a.coarse, &b.coarse);
    for (sa, sb) in a.stages.iter().zip(&b.stages) {
        any = any || differs(sa, sb);
    }
    Ok(any)
}

/// Runs one training-style backward pass and lists parameters that received
/// no gradient — an empty list means every registered weight participates.
pub fn dead_parameters(cfg: &ModelConfig, seed: u64) -> Result<Vec<String>> {
    let mut model = Model::new(cfg.clone(), seed)?;
    let cloud = unit_cloud(cfg.n_in, seed);
    let gt = unit_cloud(cfg.n_in * 2, seed.wrapping_add(1));
    let mut g = Graph::new();
    let out = model.forward(&mut g, &cloud)?;
    let gt_node = g.constant(vec![gt.len(), 3], gt.to_f32())?;
    let mut loss = g.arc_chamfer(out.coarse, gt_node)?;
    for &stage in &out.stages {
        let term = g.arc_chamfer(stage, gt_node)?;
        loss = g.add(loss, term)?;
    }
    g.backward(loss)?;
    g.apply_param_grads(&mut model.store);
    let dead = model
        .store
        .ids()
        .filter(|&id| model.store.grad(id).is_none())
        .map(|id| model.store.name(id).to_string())
        .collect();
    Ok(dead)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_pass_finite_difference() {
        for r in block_suite(31, 32).unwrap() {
            assert!(r.probes >= 20, "only {} probes for {}", r.probes, r.name);
            assert!(r.pass, "{}", r.line());
        }
    }

    #[test]
    fn shape_contract_holds_across_widths() {
        for c in [8, 32, 64] {
            verify_shape_contract(&small_config(c), 5).unwrap_or_else(|e| {
                panic!("shape contract failed at width {c}: {e}");
            });
        }
    }

    #[test]
    fn zeroed_offset_head_gives_exact_skeleton() {
        let dev = residual_identity_deviation(&small_config(8), 7).unwrap();
        assert_eq!(dev, 0.0, "skeleton must be exact when offsets are zeroed");
    }

    #[test]
    fn completion_ignores_input_order() {
        assert!(
            !permutation_sensitivity(&small_config(8), 11).unwrap(),
            "permuted input must produce bitwise identical completions"
        );
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let dead = dead_parameters(&small_config(8), 3).unwrap();
        assert!(dead.is_empty(), "parameters with no gradient: {dead:?}");
    }

    #[test]
    fn ablation_flags_change_parameter_sets() {
        let full = Model::new(small_config(8), 1).unwrap();
        let mut no_ccm_cfg = small_config(8);
        no_ccm_cfg.use_ccm = false;
        let no_ccm = Model::new(no_ccm_cfg, 1).unwrap();
        let mut flat_cfg = small_config(8);
        flat_cfg.use_inception = false;
        let flat = Model::new(flat_cfg, 1).unwrap();
        assert!(
            no_ccm.param_count() < full.param_count(),
            "disabling the view branch must drop its parameters"
        );
        assert!(
            flat.param_count() < full.param_count(),
            "single-kernel extraction must be smaller than multi-kernel"
        );
    }

    #[test]
    fn complete_rejects_undersized_input() {
        let model = Model::new(small_config(8), 1).unwrap();
        let tiny = unit_cloud(10, 2);
        assert!(model.complete(&tiny).is_err(), "fewer points than the input size must fail");
    }

    #[test]
    fn config_validation_rejects_bad_shapes() {
        let mut cfg = small_config(8);
        cfg.heads = 3;
        assert!(cfg.validate().is_err(), "3 heads cannot divide width 16");
        let mut cfg = small_config(8);
        cfg.c = 7;
        assert!(cfg.validate().is_err(), "odd base width must fail");
        let mut cfg = small_config(8);
        cfg.incep_kernels = vec![2];
        assert!(cfg.validate().is_err(), "even kernels must fail");
        let mut cfg = small_config(8);
        cfg.merge_target = 10_000;
        assert!(cfg.validate().is_err(), "merge target beyond the union size must fail");
    }
}

