//! Batch evaluation: pairs prediction and ground-truth directories by
//! filename, computes the metric suite per pair (optionally with the
//! partial inputs for fidelity), and writes a CSV with one row per pair
//! plus a final `mean` row. Worker-thread count comes from the
//! `TRIPOINT_THREADS` environment variable (default: all available cores).

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::io;
use crate::metrics::{self, MetricReport};

/// Column order of the per-pair metrics CSV.
pub const METRIC_HEADER: &str = "name,cd_l1,cd_l2,arc_cd,dcd,fscore,fidelity";

/// Environment variable capping evaluation worker threads.
pub const THREADS_ENV: &str = "TRIPOINT_THREADS";

fn sig6(v: f64) -> String {
    format!("{v:.5e}")
}

/// Formats a metric cell: six significant digits, empty when absent.
fn cell(v: Option<f64>) -> String {
    v.map(sig6).unwrap_or_default()
}

/// One CSV row matching [`METRIC_HEADER`].
pub fn metric_line(name: &str, r: &MetricReport) -> String {
    format!(
        "{name},{},{},{},{},{},{}",
        cell(r.cd_l1),
        cell(r.cd_l2),
        cell(r.arc_cd),
        cell(r.dcd),
        cell(r.fscore),
        cell(r.fidelity),
    )
}

/// Column-wise arithmetic mean. A column appears in the mean only when
/// every row has it, so a directory evaluated without partial inputs gets
/// an empty fidelity mean rather than a misleading partial average.
pub fn mean_report(rows: &[MetricReport]) -> MetricReport {
    fn mean_of(rows: &[MetricReport], get: impl Fn(&MetricReport) -> Option<f64>) -> Option<f64> {
        let vals: Vec<f64> = rows.iter().filter_map(&get).collect();
        if vals.is_empty() || vals.len() != rows.len() {
            return None;
        }
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
    MetricReport {
        cd_l1: mean_of(rows, |r| r.cd_l1),
        cd_l2: mean_of(rows, |r| r.cd_l2),
        arc_cd: mean_of(rows, |r| r.arc_cd),
        dcd: mean_of(rows, |r| r.dcd),
        fscore: mean_of(rows, |r| r.fscore),
        fidelity: mean_of(rows, |r| r.fidelity),
        notes: Vec::new(),
    }
}

/// Writes named rows plus the `mean` row.
pub fn write_metric_csv(path: &Path, rows: &[(String, MetricReport)]) -> Result<()> {
    let mut text = String::from(METRIC_HEADER);
    text.push('\n');
    for (name, r) in rows {
        text.push_str(&metric_line(name, r));
        text.push('\n');
    }
    let reports: Vec<MetricReport> = rows.iter().map(|(_, r)| r.clone()).collect();
    text.push_str(&metric_line("mean", &mean_report(&reports)));
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::UnreadableFile {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Parses a thread-count override. `None` means "not set".
pub fn parse_thread_env(raw: Option<&str>) -> Result<Option<usize>> {
    match raw {
        None => Ok(None),
        Some(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::BadConfig(format!(
                "{THREADS_ENV} must be a positive integer, got {s:?}"
            ))),
        },
    }
}

fn thread_count() -> Result<usize> {
    let raw = std::env::var(THREADS_ENV).ok();
    Ok(parse_thread_env(raw.as_deref())?.unwrap_or_else(|| {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    }))
}

/// One evaluation job: a display name plus the clouds involved.
pub struct EvalJob {
    pub name: String,
    pub pred: PointCloud,
    pub gt: PointCloud,
    pub partial: Option<PointCloud>,
}

/// Everything an evaluation produced, rows in input order.
#[derive(Debug)]
pub struct EvalOutcome {
    pub rows: Vec<(String, MetricReport)>,
    pub mean: MetricReport,
}

/// Scores jobs on `threads` worker threads. Results keep job order, so the
/// outcome is independent of scheduling.
pub fn evaluate_jobs(jobs: &[EvalJob], threads: usize) -> Result<EvalOutcome> {
    if jobs.is_empty() {
        return Err(Error::BadConfig("nothing to evaluate".into()));
    }
    let threads = threads.clamp(1, jobs.len());
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<MetricReport>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let job = &jobs[i];
                let rep = metrics::report(&job.pred, &job.gt, job.partial.as_ref());
                slots.lock().expect("no poisoned evaluators")[i] = Some(rep);
            });
        }
    });
    let slots = slots.into_inner().expect("workers joined");
    let mut rows = Vec::with_capacity(jobs.len());
    for (job, slot) in jobs.iter().zip(slots) {
        let rep = slot.expect("every slot filled")?;
        rows.push((job.name.clone(), rep));
    }
    let mean = mean_report(&rows.iter().map(|(_, r)| r.clone()).collect::<Vec<_>>());
    Ok(EvalOutcome { rows, mean })
}

fn read_cloud(path: &Path) -> Result<PointCloud> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("xyz") => io::read_xyz(path),
        Some("pcb") => io::read_pcb(path),
        other => Err(Error::BadFormat {
            format: "cloud".into(),
            detail: format!("unsupported extension {other:?} for {}", path.display()),
        }),
    }
}

fn cloud_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::UnreadableFile {
        path: dir.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(p.extension().and_then(|e| e.to_str()), Some("xyz") | Some("pcb"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Builds jobs by filename: every cloud in `pred_dir` must have a matching
/// file in `gt_dir` (and in `partial_dir` when given).
pub fn collect_jobs(
    pred_dir: &Path,
    gt_dir: &Path,
    partial_dir: Option<&Path>,
) -> Result<Vec<EvalJob>> {
    let preds = cloud_files(pred_dir)?;
    if preds.is_empty() {
        return Err(Error::BadConfig(format!(
            "no .xyz or .pcb files in {}",
            pred_dir.display()
        )));
    }
    let mut jobs = Vec::with_capacity(preds.len());
    for pred_path in preds {
        let file = pred_path.file_name().expect("listed files have names");
        let gt_path = gt_dir.join(file);
        if !gt_path.is_file() {
            return Err(Error::MissingPair(gt_path.display().to_string()));
        }
        let partial = match partial_dir {
            Some(dir) => {
                let p = dir.join(file);
                if !p.is_file() {
                    return Err(Error::MissingPair(p.display().to_string()));
                }
                Some(read_cloud(&p)?)
            }
            None => None,
        };
        jobs.push(EvalJob {
            name: file.to_string_lossy().into_owned(),
            pred: read_cloud(&pred_path)?,
            gt: read_cloud(&gt_path)?,
            partial,
        });
    }
    Ok(jobs)
}

/// The `eval` subcommand: pair directories, score, and write the CSV.
pub fn evaluate_dirs(
    pred_dir: &Path,
    gt_dir: &Path,
    partial_dir: Option<&Path>,
    out_csv: &Path,
) -> Result<EvalOutcome> {
    let jobs = collect_jobs(pred_dir, gt_dir, partial_dir)?;
    let outcome = evaluate_jobs(&jobs, thread_count()?)?;
    write_metric_csv(out_csv, &outcome.rows)?;
    Ok(outcome)
}
