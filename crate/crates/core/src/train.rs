//! Training loop: per-iteration graph construction, the multi-stage
//! arcosh-compressed chamfer objective, Adam updates, CSV logging,
//! checkpointing, and optional periodic metric reports.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;

use crate::autodiff::{Adam, AdamHyper, Graph, NodeId};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::eval;
use crate::geometry::{self, PointCloud};
use crate::io;
use crate::metrics;
use crate::network::{Model, SAMPLING_SEED};
use crate::rng;

/// Handles to the loss nodes of one training example.
#[derive(Debug)]
pub struct ExampleLoss {
    /// Sum of all stage terms (scalar node).
    pub total: NodeId,
    /// One `arcosh(1 + squared-chamfer)` term per output: the coarse cloud
    /// first, then every upsampling stage in order.
    pub terms: Vec<NodeId>,
}

/// Builds the training objective for one (partial, complete) pair, both in
/// world coordinates. The partial cloud is resampled to the configured
/// input size and normalized; the ground truth is carried into the same
/// canonical frame so every distance is measured there.
pub fn example_loss(
    model: &Model,
    g: &mut Graph,
    partial: &PointCloud,
    gt: &PointCloud,
) -> Result<ExampleLoss> {
    if partial.len() < model.cfg.n_in {
        return Err(Error::BadCount { requested: model.cfg.n_in, available: partial.len() });
    }
    let resampled = geometry::farthest_point_sample(partial, model.cfg.n_in, SAMPLING_SEED)?;
    let (norm, scale, offset) = geometry::normalize_canonical(&resampled)?;
    let gt_norm = geometry::normalize_with(gt, scale, offset);
    let out = model.forward(g, &norm)?;
    let gt_node = g.constant(vec![gt_norm.len(), 3], gt_norm.to_f32())?;
    let mut terms = vec![g.arc_chamfer(out.coarse, gt_node)?];
    for &stage in &out.stages {
        terms.push(g.arc_chamfer(stage, gt_node)?);
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    Ok(ExampleLoss { total, terms })
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub iter: usize,
    pub loss: f64,
    /// Per-output loss terms, coarse first.
    pub terms: Vec<f64>,
    /// Wall-clock milliseconds for the iteration. Excluded from
    /// reproducibility comparisons: two identical runs differ only here.
    pub ms: u64,
}

/// CSV header for a log whose rows carry `n_terms` loss terms,
/// e.g. `iter,loss,term0,term1,term2,ms` for a coarse + two-stage model.
pub fn log_header(n_terms: usize) -> String {
    let mut s = String::from("iter,loss");
    for i in 0..n_terms {
        s.push_str(&format!(",term{i}"));
    }
    s.push_str(",ms");
    s
}

/// Formats one row to match [`log_header`]. Floats use the shortest
/// round-trip representation, so equal values print identically.
pub fn log_line(row: &TrainLogRow) -> String {
    let mut s = format!("{},{}", row.iter, row.loss);
    for t in &row.terms {
        s.push_str(&format!(",{t}"));
    }
    s.push_str(&format!(",{}", row.ms));
    s
}

/// What a finished run reports back.
#[derive(Debug)]
pub struct TrainSummary {
    /// Mean batch loss at the first iteration (before any update).
    pub first_loss: f64,
    /// Mean batch loss at the last iteration.
    pub final_loss: f64,
    pub rows: Vec<TrainLogRow>,
    /// Path of the final checkpoint.
    pub checkpoint: PathBuf,
}

/// Runs the optimization loop over `pairs` of world-frame
/// (partial, complete) clouds. Writes `train_log.csv`, periodic
/// `ckpt_NNNNNN.gfck` checkpoints and `metrics_NNNNNN.csv` reports per the
/// config, and always a final `model.gfck`, all under `out_dir`.
pub fn train(
    model: &mut Model,
    pairs: &[(PointCloud, PointCloud)],
    tcfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainSummary> {
    if pairs.is_empty() {
        return Err(Error::BadConfig("training needs at least one pair".into()));
    }
    if tcfg.iters == 0 {
        return Err(Error::BadConfig("iters must be positive".into()));
    }
    io::ensure_dir(out_dir)?;
    let mut adam = Adam::new(AdamHyper { lr: tcfg.lr, ..AdamHyper::default() }, &model.store);
    if tcfg.offset_lr_mult != 1.0 {
        adam.set_lr_multiplier(
            &model.store,
            |name| name.contains("/dec_out") || name.ends_with("/copy_emb"),
            tcfg.offset_lr_mult,
        );
    }
    let n_terms = 1 + model.cfg.up_ratios.len();
    let log_path = out_dir.join("train_log.csv");
    let mut log = std::fs::File::create(&log_path).map_err(|e| Error::UnreadableFile {
        path: log_path.display().to_string(),
        reason: e.to_string(),
    })?;
    writeln!(log, "{}", log_header(n_terms)).map_err(Error::from)?;

    let mut rows: Vec<TrainLogRow> = Vec::new();
    let mut first_loss = f64::NAN;
    let mut final_loss = f64::NAN;
    for iter in 0..tcfg.iters {
        let started = Instant::now();
        model.store.zero_grads();
        let mut loss_sum = 0.0f64;
        let mut term_sums = vec![0.0f64; n_terms];
        for b in 0..tcfg.batch {
            let step = (iter * tcfg.batch + b) as u64;
            let idx = rng::stream_at(tcfg.seed, "train/order", step).gen_range(0..pairs.len());
            let (partial, gt) = &pairs[idx];
            let mut g = Graph::new();
            let el = example_loss(model, &mut g, partial, gt)?;
            let v = f64::from(g.value(el.total).data[0]);
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { iter });
            }
            loss_sum += v;
            for (sum, &t) in term_sums.iter_mut().zip(&el.terms) {
                *sum += f64::from(g.value(t).data[0]);
            }
            let scaled = g.scale(el.total, 1.0 / tcfg.batch as f64)?;
            g.backward(scaled)?;
            g.apply_param_grads(&mut model.store);
        }
        adam.set_learning_rate(tcfg.lr_schedule.at(tcfg.lr, iter, tcfg.iters));
        adam.step(&mut model.store)?;

        let loss = loss_sum / tcfg.batch as f64;
        let terms: Vec<f64> = term_sums.iter().map(|s| s / tcfg.batch as f64).collect();
        if iter == 0 {
            first_loss = loss;
        }
        final_loss = loss;
        let last = iter + 1 == tcfg.iters;
        if last || (tcfg.log_every > 0 && iter % tcfg.log_every == 0) {
            let row = TrainLogRow {
                iter,
                loss,
                terms,
                ms: started.elapsed().as_millis() as u64,
            };
            writeln!(log, "{}", log_line(&row)).map_err(Error::from)?;
            rows.push(row);
        }
        if tcfg.checkpoint_every > 0 && (iter + 1) % tcfg.checkpoint_every == 0 && !last {
            let path = out_dir.join(format!("ckpt_{:06}.gfck", iter + 1));
            io::write_checkpoint(&path, &model.store.to_named_tensors())?;
        }
        if tcfg.eval_every > 0 && (iter + 1) % tcfg.eval_every == 0 {
            let path = out_dir.join(format!("metrics_{:06}.csv", iter + 1));
            write_pair_metrics(model, pairs, &path)?;
        }
    }
    let checkpoint = out_dir.join("model.gfck");
    io::write_checkpoint(&checkpoint, &model.store.to_named_tensors())?;
    Ok(TrainSummary { first_loss, final_loss, rows, checkpoint })
}

/// Evaluates the current model on every pair and writes a metrics CSV
/// (final stage against ground truth; fidelity against the partial input).
fn write_pair_metrics(
    model: &Model,
    pairs: &[(PointCloud, PointCloud)],
    path: &Path,
) -> Result<()> {
    let mut rows = Vec::with_capacity(pairs.len());
    for (i, (partial, gt)) in pairs.iter().enumerate() {
        let completion = model.complete(partial)?;
        let last = completion.stages.last().expect("at least one stage");
        let rep = metrics::report(last, gt, Some(partial))?;
        rows.push((format!("pair_{i:04}"), rep));
    }
    eval::write_metric_csv(path, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TrainConfig;
    use crate::network::ModelConfig;
    use crate::synth::{self, ShapeFamily, SynthSpec};

    fn tiny_model() -> Model {
        let cfg = ModelConfig {
            c: 8,
            n_in: 64,
            n_coarse: 16,
            up_ratios: vec![2, 2],
            merge_target: 32,
            ccm_res: 8,
            heads: 2,
            edge_dims: (8, 12),
            edge_k: 4,
            incep_kernels: vec![1, 3],
            incep_width: 8,
            ..ModelConfig::default()
        };
        Model::new(cfg, 7).unwrap()
    }

    fn tiny_pair(seed: u64) -> (PointCloud, PointCloud) {
        let spec = SynthSpec {
            family: ShapeFamily::Sphere,
            gt_points: 256,
            partial_points: 64,
            seed,
            ..SynthSpec::default()
        };
        let (gt, partial) = synth::generate(&spec).unwrap();
        (partial, gt)
    }

    #[test]
    fn example_loss_terms_sum_to_total() {
        let model = tiny_model();
        let (partial, gt) = tiny_pair(1);
        let mut g = Graph::new();
        let el = example_loss(&model, &mut g, &partial, &gt).unwrap();
        assert_eq!(el.terms.len(), 3, "coarse plus two stages");
        let total = f64::from(g.value(el.total).data[0]);
        let sum: f64 = el.terms.iter().map(|&t| f64::from(g.value(t).data[0])).sum();
        assert!(
            (total - sum).abs() <= 1e-6 * sum.abs().max(1.0),
            "total {total} != term sum {sum}"
        );
        assert!(total.is_finite() && total > 0.0, "untrained loss should be positive");
    }

    #[test]
    fn a_few_steps_reduce_the_loss() {
        let mut model = tiny_model();
        let pairs = vec![tiny_pair(2)];
        let dir = tempfile::tempdir().unwrap();
        let tcfg = TrainConfig { iters: 30, lr: 5e-3, log_every: 5, ..TrainConfig::default() };
        let summary = train(&mut model, &pairs, &tcfg, dir.path()).unwrap();
        assert!(
            summary.final_loss < summary.first_loss,
            "loss should drop on a single overfit pair: {} -> {}",
            summary.first_loss,
            summary.final_loss
        );
        assert!(summary.checkpoint.exists(), "final checkpoint must be written");
        let text = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("iter,loss,term0,term1,term2,ms"));
        assert_eq!(lines.count(), summary.rows.len(), "one line per recorded row");
    }

    #[test]
    fn same_seed_runs_match_except_timing() {
        let pairs = vec![tiny_pair(3), tiny_pair(4)];
        let tcfg = TrainConfig { iters: 8, lr: 1e-3, log_every: 1, ..TrainConfig::default() };
        let run = |_: ()| {
            let mut model = tiny_model();
            let dir = tempfile::tempdir().unwrap();
            train(&mut model, &pairs, &tcfg, dir.path()).unwrap().rows
        };
        let a = run(());
        let b = run(());
        assert_eq!(a.len(), b.len());
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.iter, rb.iter);
            assert_eq!(
                ra.loss.to_bits(),
                rb.loss.to_bits(),
                "iteration {} loss must match bitwise",
                ra.iter
            );
            for (ta, tb) in ra.terms.iter().zip(&rb.terms) {
                assert_eq!(ta.to_bits(), tb.to_bits());
            }
        }
    }

    #[test]
    fn batched_gradients_average_cleanly() {
        // batch=2 over a single repeated pair must match batch=1 on it.
        let pair = tiny_pair(5);
        let pairs = vec![pair.clone(), pair];
        let run = |batch: usize| {
            let mut model = tiny_model();
            let dir = tempfile::tempdir().unwrap();
            let tcfg = TrainConfig { iters: 3, batch, log_every: 1, ..TrainConfig::default() };
            train(&mut model, &pairs, &tcfg, dir.path()).unwrap().final_loss
        };
        let single = run(1);
        let double = run(2);
        assert!(
            (single - double).abs() <= 1e-5 * single.abs().max(1.0),
            "identical data must give the same trajectory regardless of batch: {single} vs {double}"
        );
    }

    #[test]
    fn undersized_partial_is_rejected() {
        let model = tiny_model();
        let (partial, gt) = tiny_pair(6);
        let small = geometry::farthest_point_sample(&partial, 32, 0).unwrap();
        let mut g = Graph::new();
        let err = example_loss(&model, &mut g, &small, &gt).unwrap_err();
        assert!(matches!(err, Error::BadCount { requested: 64, available: 32 }), "got {err:?}");
    }
}
