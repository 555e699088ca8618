//! Python bindings: clouds cross the boundary as lists of `(x, y, z)`
//! tuples, metrics come back as dicts, and the full train/complete
//! pipeline is wrapped in the `Pipeline` class.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use tripoint::config::RunConfig;
use tripoint::geometry::PointCloud;
use tripoint::metrics::MetricReport;
use tripoint::network::Model;
use tripoint::{ccm, eval, geometry, metrics, synth, train};

type P3 = (f64, f64, f64);

fn err(e: tripoint::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_cloud(points: Vec<P3>) -> PyResult<PointCloud> {
    PointCloud::new(points.into_iter().map(|(x, y, z)| [x, y, z]).collect()).map_err(err)
}

fn from_cloud(cloud: &PointCloud) -> Vec<P3> {
    cloud.points().iter().map(|p| (p[0], p[1], p[2])).collect()
}

fn report_dict<'py>(py: Python<'py>, r: &MetricReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new_bound(py);
    d.set_item("cd_l1", r.cd_l1)?;
    d.set_item("cd_l2", r.cd_l2)?;
    d.set_item("arc_cd", r.arc_cd)?;
    d.set_item("dcd", r.dcd)?;
    d.set_item("fscore", r.fscore)?;
    d.set_item("fidelity", r.fidelity)?;
    Ok(d)
}

/// Shift/scale a cloud into the canonical unit frame.
/// Returns `(points, scale, offset)` such that `p_norm = (p - offset) * scale`.
#[pyfunction]
fn normalize(points: Vec<P3>) -> PyResult<(Vec<P3>, f64, P3)> {
    let cloud = to_cloud(points)?;
    let (norm, scale, offset) = geometry::normalize_canonical(&cloud).map_err(err)?;
    Ok((from_cloud(&norm), scale, (offset[0], offset[1], offset[2])))
}

/// Farthest-point subsample to `m` points (deterministic in `seed`).
#[pyfunction]
fn farthest_point_sample(points: Vec<P3>, m: usize, seed: u64) -> PyResult<Vec<P3>> {
    let cloud = to_cloud(points)?;
    Ok(from_cloud(&geometry::farthest_point_sample(&cloud, m, seed).map_err(err)?))
}

/// Unsquared chamfer distance (mean of both directional means).
#[pyfunction]
fn chamfer_l1(a: Vec<P3>, b: Vec<P3>) -> PyResult<f64> {
    metrics::chamfer(&to_cloud(a)?, &to_cloud(b)?, metrics::ChamferOrder::L1).map_err(err)
}

/// Squared chamfer distance (sum of both directional means).
#[pyfunction]
fn chamfer_l2(a: Vec<P3>, b: Vec<P3>) -> PyResult<f64> {
    metrics::chamfer(&to_cloud(a)?, &to_cloud(b)?, metrics::ChamferOrder::L2).map_err(err)
}

/// All standard metrics for a (prediction, ground truth) pair as a dict;
/// pass `partial` to fill the fidelity entry.
#[pyfunction]
#[pyo3(signature = (pred, gt, partial=None))]
fn metric_report<'py>(
    py: Python<'py>,
    pred: Vec<P3>,
    gt: Vec<P3>,
    partial: Option<Vec<P3>>,
) -> PyResult<Bound<'py, PyDict>> {
    let partial = partial.map(to_cloud).transpose()?;
    let rep = metrics::report(&to_cloud(pred)?, &to_cloud(gt)?, partial.as_ref()).map_err(err)?;
    report_dict(py, &rep)
}

/// Render the three canonical coordinate maps of a normalized cloud.
/// Each view is a dict with `h`, `w`, `pixels` (flat h*w*3 floats) and
/// `mask` (flat h*w booleans).
#[pyfunction]
#[pyo3(signature = (points, res=32))]
fn render_ccm<'py>(py: Python<'py>, points: Vec<P3>, res: usize) -> PyResult<Bound<'py, PyList>> {
    let cloud = to_cloud(points)?;
    let set = ccm::render_triplane(&cloud, res, res).map_err(err)?;
    let views = PyList::empty_bound(py);
    for view in &set.views {
        let d = PyDict::new_bound(py);
        d.set_item("h", view.h)?;
        d.set_item("w", view.w)?;
        d.set_item("pixels", view.pixels.clone())?;
        d.set_item("mask", view.mask.clone())?;
        views.append(d)?;
    }
    Ok(views)
}

/// Generate a synthetic (complete, partial) pair.
/// `family` is one of: sphere, box, cylinder, torus, union-two.
#[pyfunction]
#[pyo3(signature = (family, gt_points=2048, partial_points=512, keep=0.5, jitter=0.0, seed=0))]
fn synth_pair(
    family: &str,
    gt_points: usize,
    partial_points: usize,
    keep: f64,
    jitter: f64,
    seed: u64,
) -> PyResult<(Vec<P3>, Vec<P3>)> {
    let spec = synth::SynthSpec {
        family: family.parse().map_err(err)?,
        gt_points,
        partial_points,
        keep_fraction: keep,
        jitter,
        seed,
    };
    let (gt, partial) = synth::generate(&spec).map_err(err)?;
    Ok((from_cloud(&gt), from_cloud(&partial)))
}

/// The completion pipeline: configure, train, complete, save, load.
#[pyclass]
struct Pipeline {
    cfg: RunConfig,
    model: Model,
}

#[pymethods]
impl Pipeline {
    /// Build a fresh model. `config` takes `key = value` lines (the same
    /// syntax as the CLI config file); `seed` drives weight initialization.
    #[new]
    #[pyo3(signature = (config=None, seed=0))]
    fn new(config: Option<&str>, seed: u64) -> PyResult<Self> {
        let mut cfg = RunConfig::default();
        if let Some(text) = config {
            cfg.apply_text(text).map_err(err)?;
        }
        cfg.train.seed = seed;
        cfg.validate().map_err(err)?;
        let model = Model::new(cfg.model.clone(), seed).map_err(err)?;
        Ok(Pipeline { cfg, model })
    }

    /// Number of trainable scalars.
    fn param_count(&self) -> usize {
        self.model.store.scalar_count()
    }

    /// The effective configuration as `key = value` text.
    fn config_text(&self) -> String {
        self.cfg.to_text()
    }

    /// Train on (partial, complete) pairs in world coordinates. Logs and
    /// checkpoints go to `out_dir` if given, otherwise to a temp dir.
    /// Returns `{"first_loss": ..., "final_loss": ...}`.
    #[pyo3(signature = (pairs, iters=None, lr=None, out_dir=None))]
    fn train<'py>(
        &mut self,
        py: Python<'py>,
        pairs: Vec<(Vec<P3>, Vec<P3>)>,
        iters: Option<usize>,
        lr: Option<f64>,
        out_dir: Option<&str>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let clouds: Vec<(PointCloud, PointCloud)> = pairs
            .into_iter()
            .map(|(partial, gt)| Ok((to_cloud(partial)?, to_cloud(gt)?)))
            .collect::<PyResult<_>>()?;
        let mut tcfg = self.cfg.train.clone();
        if let Some(i) = iters {
            tcfg.iters = i;
        }
        if let Some(l) = lr {
            tcfg.lr = l;
        }
        let tmp;
        let dir = match out_dir {
            Some(d) => std::path::PathBuf::from(d),
            None => {
                tmp = std::env::temp_dir().join(format!("tripoint-py-{}", std::process::id()));
                tmp.clone()
            }
        };
        let summary = train::train(&mut self.model, &clouds, &tcfg, &dir).map_err(err)?;
        let d = PyDict::new_bound(py);
        d.set_item("first_loss", summary.first_loss)?;
        d.set_item("final_loss", summary.final_loss)?;
        d.set_item("checkpoint", summary.checkpoint.display().to_string())?;
        Ok(d)
    }

    /// Complete a partial cloud. Returns a dict with `resampled_input`,
    /// `coarse`, `stages` (list of clouds), and `completion` (the last
    /// stage).
    fn complete<'py>(&self, py: Python<'py>, points: Vec<P3>) -> PyResult<Bound<'py, PyDict>> {
        let input = to_cloud(points)?;
        let out = self.model.complete(&input).map_err(err)?;
        let d = PyDict::new_bound(py);
        d.set_item("resampled_input", from_cloud(&out.resampled_input))?;
        d.set_item("coarse", from_cloud(&out.coarse))?;
        let stages: Vec<Vec<P3>> = out.stages.iter().map(from_cloud).collect();
        d.set_item("completion", stages.last().expect("at least one stage").clone())?;
        d.set_item("stages", stages)?;
        Ok(d)
    }

    /// Write the weights as a checkpoint file.
    fn save(&self, path: &str) -> PyResult<()> {
        tripoint::io::write_checkpoint(
            std::path::Path::new(path),
            &self.model.store.to_named_tensors(),
        )
        .map_err(err)
    }

    /// Load weights saved by `save` (the architecture must match).
    fn load(&mut self, path: &str) -> PyResult<()> {
        let tensors = tripoint::io::read_checkpoint(std::path::Path::new(path)).map_err(err)?;
        self.model.store.load_named_tensors(&tensors).map_err(err)
    }

    /// Evaluate `(prediction, ground truth)` cloud pairs, returning the
    /// column-wise mean metric dict.
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        pairs: Vec<(Vec<P3>, Vec<P3>)>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let mut reports = Vec::with_capacity(pairs.len());
        for (pred, gt) in pairs {
            reports.push(metrics::report(&to_cloud(pred)?, &to_cloud(gt)?, None).map_err(err)?);
        }
        report_dict(py, &eval::mean_report(&reports))
    }
}

#[pymodule]
fn tripoint_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(farthest_point_sample, m)?)?;
    m.add_function(wrap_pyfunction!(chamfer_l1, m)?)?;
    m.add_function(wrap_pyfunction!(chamfer_l2, m)?)?;
    m.add_function(wrap_pyfunction!(metric_report, m)?)?;
    m.add_function(wrap_pyfunction!(render_ccm, m)?)?;
    m.add_function(wrap_pyfunction!(synth_pair, m)?)?;
    m.add_class::<Pipeline>()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_and_metrics_through_python_types() {
        Python::with_gil(|py| {
            let a = vec![(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)];
            let d = chamfer_l2(a.clone(), a.clone()).unwrap();
            assert_eq!(d, 0.0, "self chamfer must be exactly zero");
            let rep = metric_report(py, a.clone(), a, None).unwrap();
            let fscore: f64 = rep.get_item("fscore").unwrap().unwrap().extract().unwrap();
            assert_eq!(fscore, 1.0);
            let fid = rep.get_item("fidelity").unwrap().unwrap();
            assert!(fid.is_none(), "fidelity must be None without a partial cloud");
        });
    }

    #[test]
    fn pipeline_trains_and_completes_via_bindings() {
        Python::with_gil(|py| {
            let (gt, partial) =
                synth_pair("union-two", 256, 64, 0.5, 0.0, 11).unwrap();
            let config = "c = 8\nn_in = 64\nn_coarse = 16\nmerge_target = 32\nccm_res = 8\n\
                          heads = 2\nedge_dims = 8,12\nedge_k = 4\nincep_width = 12\n\
                          log_every = 1\n";
            let mut pipe = Pipeline::new(Some(config), 0).unwrap();
            assert!(pipe.param_count() > 0);
            let dir = tempfile::tempdir().unwrap();
            let out = pipe
                .train(
                    py,
                    vec![(partial.clone(), gt)],
                    Some(5),
                    Some(5e-3),
                    Some(dir.path().to_str().unwrap()),
                )
                .unwrap();
            let first: f64 = out.get_item("first_loss").unwrap().unwrap().extract().unwrap();
            let last: f64 = out.get_item("final_loss").unwrap().unwrap().extract().unwrap();
            assert!(last < first, "five steps should reduce the loss: {first} -> {last}");

            let done = pipe.complete(py, partial).unwrap();
            let completion: Vec<(f64, f64, f64)> =
                done.get_item("completion").unwrap().unwrap().extract().unwrap();
            assert_eq!(completion.len(), 128, "32 seeds through ratio-2 stages twice");

            // Save / load roundtrip keeps behavior.
            let ckpt = dir.path().join("w.gfck");
            pipe.save(ckpt.to_str().unwrap()).unwrap();
            let mut fresh = Pipeline::new(Some(config), 99).unwrap();
            fresh.load(ckpt.to_str().unwrap()).unwrap();
            let again: Vec<(f64, f64, f64)> = fresh
                .complete(py, done.get_item("resampled_input").unwrap().unwrap().extract().unwrap())
                .unwrap()
                .get_item("completion")
                .unwrap()
                .unwrap()
                .extract()
                .unwrap();
            assert_eq!(again.len(), 128);
        });
    }

    #[test]
    fn bad_inputs_surface_as_value_errors() {
        Python::with_gil(|_py| {
            assert!(synth_pair("pyramid", 64, 16, 0.5, 0.0, 0).is_err());
            assert!(chamfer_l1(vec![], vec![(0.0, 0.0, 0.0)]).is_err());
            assert!(Pipeline::new(Some("c = 7\n"), 0).is_err(), "odd width must be rejected");
        });
    }
}
