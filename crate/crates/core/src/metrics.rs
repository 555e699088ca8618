//! Point set distances and quality scores, all in double precision.
//!
//! These are the evaluation-side definitions; the differentiable training
//! loss mirrors [`chamfer`]/[`arc_cd`] inside the autodiff graph and the two
//! paths are tested against each other.

use crate::error::{Error, Result};
use crate::geometry::{sqdist, PointCloud};

/// Which chamfer convention to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChamferOrder {
    /// Mean squared nearest distance in each direction, summed.
    L2,
    /// Mean unsquared nearest distance in each direction, halved (the common
    /// completion-benchmark reporting convention).
    L1,
}

/// Per-pair metric bundle. Every field is optional so reports can carry only
/// what was computable in context (fidelity needs the partial input, for
/// example). `notes` records convention choices that affect comparability.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub cd_l1: Option<f64>,
    pub cd_l2: Option<f64>,
    pub arc_cd: Option<f64>,
    pub dcd: Option<f64>,
    pub fscore: Option<f64>,
    pub fidelity: Option<f64>,
    /// Convention notes, e.g. the DCD alpha and that fidelity is squared.
    pub notes: Vec<String>,
}

/// Default sharpness for [`dcd`].
pub const DCD_ALPHA: f64 = 1000.0;
/// Default F-score threshold (the "1%" operating point on unit-scale data).
pub const FSCORE_THRESHOLD: f64 = 0.01;

/// For each point of `from`, the squared distance to its nearest neighbor in
/// `to`, plus the index of that neighbor (ties to the lowest index).
fn nearest_sq(from: &PointCloud, to: &PointCloud) -> Vec<(f64, usize)> {
    from.points()
        .iter()
        .map(|&p| {
            let mut best = (f64::INFINITY, 0usize);
            for (j, &q) in to.points().iter().enumerate() {
                let d = sqdist(p, q);
                if d < best.0 {
                    best = (d, j);
                }
            }
            best
        })
        .collect()
}

/// Chamfer distance between two non-empty clouds under the given convention.
pub fn chamfer(p: &PointCloud, q: &PointCloud, order: ChamferOrder) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let pq = nearest_sq(p, q);
    let qp = nearest_sq(q, p);
    let (mut a, mut b) = (0.0, 0.0);
    match order {
        ChamferOrder::L2 => {
            for &(d, _) in &pq {
                a += d;
            }
            for &(d, _) in &qp {
                b += d;
            }
            Ok(a / p.len() as f64 + b / q.len() as f64)
        }
        ChamferOrder::L1 => {
            for &(d, _) in &pq {
                a += d.sqrt();
            }
            for &(d, _) in &qp {
                b += d.sqrt();
            }
            Ok(0.5 * (a / p.len() as f64 + b / q.len() as f64))
        }
    }
}

/// Monotone compression of the squared chamfer distance:
/// `arcosh(1 + CD) = ln((1 + CD) + sqrt((1 + CD)^2 - 1))`. Zero iff the
/// chamfer distance is zero; compresses large errors while keeping stronger
/// gradients than `sqrt` for small ones.
pub fn arc_cd(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    Ok((1.0 + chamfer(p, q, ChamferOrder::L2)?).acosh())
}

/// The three-stage training objective: summed arcosh-chamfer of the coarse
/// seed and both upsampled clouds against the ground truth.
pub fn total_loss(p0: &PointCloud, p1: &PointCloud, p2: &PointCloud, gt: &PointCloud) -> Result<f64> {
    Ok(arc_cd(p0, gt)? + arc_cd(p1, gt)? + arc_cd(p2, gt)?)
}

/// F-score at `threshold`: harmonic mean of precision (fraction of `p` within
/// `threshold` of `gt`, inclusive) and recall (fraction of `gt` within
/// `threshold` of `p`). Zero when both are zero.
pub fn fscore(p: &PointCloud, gt: &PointCloud, threshold: f64) -> Result<f64> {
    if p.is_empty() || gt.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(Error::BadThreshold(threshold));
    }
    let t2 = threshold * threshold;
    let within = |from: &PointCloud, to: &PointCloud| -> f64 {
        let hits = nearest_sq(from, to).iter().filter(|&&(d, _)| d <= t2).count();
        hits as f64 / from.len() as f64
    };
    let precision = within(p, gt);
    let recall = within(gt, p);
    if precision + recall == 0.0 {
        Ok(0.0)
    } else {
        Ok(2.0 * precision * recall / (precision + recall))
    }
}

/// Density-aware chamfer distance. Each point's contribution
/// `(1/n) * exp(-alpha * d^2)` is discounted by `n`, the number of queries
/// that matched the same nearest neighbor, so collapsed predictions score
/// poorly even when plain chamfer looks fine. Symmetric, in `[0, 1]`,
/// and zero exactly for identical duplicate-free clouds.
pub fn dcd(p: &PointCloud, q: &PointCloud, alpha: f64) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::BadThreshold(alpha));
    }
    let direction = |from: &PointCloud, to: &PointCloud| -> f64 {
        let matches = nearest_sq(from, to);
        let mut count = vec![0usize; to.len()];
        for &(_, j) in &matches {
            count[j] += 1;
        }
        let sum: f64 = matches
            .iter()
            .map(|&(d, j)| (-alpha * d).exp() / count[j] as f64)
            .sum();
        sum / from.len() as f64
    };
    Ok(1.0 - 0.5 * (direction(p, q) + direction(q, p)))
}

/// Fidelity: how well the completed cloud preserves the observed input. Mean
/// squared distance from each partial-input point to its nearest completed
/// point (one direction only). The squared convention is recorded in
/// [`MetricReport::notes`] by the evaluation harness.
pub fn fidelity(partial: &PointCloud, completed: &PointCloud) -> Result<f64> {
    if partial.is_empty() || completed.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let sum: f64 = nearest_sq(partial, completed).iter().map(|&(d, _)| d).sum();
    Ok(sum / partial.len() as f64)
}

/// Minimal matching distance: the best (smallest) squared chamfer distance
/// from `completed` to any cloud in `references`. Errors on an empty
/// reference set.
pub fn mmd(completed: &PointCloud, references: &[PointCloud]) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::EmptyReferenceSet);
    }
    let mut best = f64::INFINITY;
    for r in references {
        best = best.min(chamfer(completed, r, ChamferOrder::L2)?);
    }
    Ok(best)
}

/// Builds the standard report for a (prediction, ground truth) pair.
/// `partial` enables the fidelity column when available.
pub fn report(pred: &PointCloud, gt: &PointCloud, partial: Option<&PointCloud>) -> Result<MetricReport> {
    let cd2 = chamfer(pred, gt, ChamferOrder::L2)?;
    Ok(MetricReport {
        cd_l1: Some(chamfer(pred, gt, ChamferOrder::L1)?),
        cd_l2: Some(cd2),
        arc_cd: Some((1.0 + cd2).acosh()),
        dcd: Some(dcd(pred, gt, DCD_ALPHA)?),
        fscore: Some(fscore(pred, gt, FSCORE_THRESHOLD)?),
        fidelity: partial.map(|pc| fidelity(pc, pred)).transpose()?,
        notes: vec![
            format!("dcd_alpha={DCD_ALPHA}"),
            "fidelity=squared".to_string(),
            format!("fscore_threshold={FSCORE_THRESHOLD}"),
        ],
    })
}
