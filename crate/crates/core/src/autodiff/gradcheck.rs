//! Finite-difference verification of the backward pass.
//!
//! Every differentiable op (and, at a higher level, every network block) is
//! checked the same way: run backward once for the analytic gradient, then
//! probe random (leaf, coordinate) pairs with a central difference computed
//! by the float64 tape replay. The replay re-executes data-dependent choices
//! (nearest neighbors, max winners) at the perturbed point, so probe inputs
//! must keep a safety margin between competing winners — helpers below
//! generate such inputs.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

use super::{Graph, NodeId, Tensor};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-3;
/// Relative-error ceiling for a probe to count as matching.
pub const GRAD_REL_TOL: f64 = 1e-3;
/// Error-normalization floor, so near-zero gradients compare absolutely.
pub const GRAD_ERR_FLOOR: f64 = 1e-3;
/// Kink detection gates. Networks with relu and max pooling are piecewise
/// linear: a probe whose ±h interval crosses a piece boundary (kink or
/// winner flip) measures a chord across two pieces, not the derivative of
/// either, so it cannot witness a gradient bug and is resampled. Two
/// complementary signatures find such probes:
///
/// * drift — the central estimates at h and h/2 disagree (off-center
///   crossing; for smooth functions they differ only by O(h^2 f'''));
/// * a forward/backward split at h that does not shrink when h halves
///   (a crossing near the probe point; smooth curvature gives a split of
///   h f'' that halves with h).
///
/// A wrong analytic gradient on a smooth piece still fails the accuracy
/// comparison, because there the estimates agree with each other and
/// disagree with the analytic value.
pub const FD_KINK_DRIFT: f64 = 1e-4;
pub const FD_KINK_JUMP: f64 = 1e-2;
pub const FD_KINK_PERSISTENCE: f64 = 0.6;

/// Outcome of one finite-difference run.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    /// Probes that landed on smooth points and were compared.
    pub probes: usize,
    /// Probes discarded for straddling a piece boundary.
    pub skipped: usize,
    pub max_rel_err: f64,
    /// (leaf position in the checked list, flat coordinate) of the worst probe.
    pub worst_at: (usize, usize),
    pub worst_fd: f64,
    pub worst_analytic: f64,
    pub pass: bool,
}

impl CheckReport {
    pub fn line(&self) -> String {
        format!(
            "{} {}: probes={} skipped={} max_rel_err={:.3e} worst fd={:.6e} analytic={:.6e} at leaf {} coord {}",
            if self.pass { "ok  " } else { "FAIL" },
            self.name,
            self.probes,
            self.skipped,
            self.max_rel_err,
            self.worst_fd,
            self.worst_analytic,
            self.worst_at.0,
            self.worst_at.1,
        )
    }
}

/// Checks the analytic gradient of `loss` with respect to `leaves` against
/// central differences. Expects a freshly built graph with no prior backward
/// call (gradients accumulate, which would skew the analytic side). Probes at
/// least `min_probes` distinct coordinates, spread over all leaves.
pub fn finite_diff_check(
    graph: &mut Graph,
    loss: NodeId,
    leaves: &[NodeId],
    name: &str,
    seed: u64,
    min_probes: usize,
) -> Result<CheckReport> {
    let checked: Vec<NodeId> = leaves
        .iter()
        .copied()
        .filter(|&l| graph.value(l).requires_grad)
        .collect();
    if checked.is_empty() {
        return Err(Error::BadConfig(format!("gradient check {name:?} has no differentiable leaves")));
    }
    graph.backward(loss)?;

    // Flatten the (leaf, coord) space; draw distinct candidate probes, with
    // headroom so non-smooth landings can be replaced.
    let sizes: Vec<usize> = checked.iter().map(|&l| graph.value(l).numel()).collect();
    let total: usize = sizes.iter().sum();
    let want = min_probes.min(total);
    let budget = (min_probes * 4).min(total);
    let mut rng = rng::stream(seed, &format!("gradcheck/{name}"));
    let mut candidates = std::collections::BTreeSet::new();
    while candidates.len() < budget {
        candidates.insert(rng.gen_range(0..total));
    }

    let mut report = CheckReport {
        name: name.to_string(),
        probes: 0,
        skipped: 0,
        max_rel_err: 0.0,
        worst_at: (0, 0),
        worst_fd: 0.0,
        worst_analytic: 0.0,
        pass: true,
    };

    let eval = |graph: &Graph, leaf: NodeId, base: &[f64], coord: usize, h: f64| -> Result<f64> {
        let mut moved = base.to_vec();
        moved[coord] += h;
        graph.replay_f64(loss, &[(leaf, &moved)])
    };
    let f0 = graph.replay_f64(loss, &[])?;

    for flat in candidates {
        if report.probes >= want {
            break;
        }
        // Locate the leaf and coordinate for this flat index.
        let mut leaf_pos = 0;
        let mut coord = flat;
        while coord >= sizes[leaf_pos] {
            coord -= sizes[leaf_pos];
            leaf_pos += 1;
        }
        let leaf = checked[leaf_pos];

        let base: Vec<f64> = graph.value(leaf).data.iter().map(|&v| f64::from(v)).collect();
        let h = FD_STEP;
        let f_p = eval(graph, leaf, &base, coord, h)?;
        let f_m = eval(graph, leaf, &base, coord, -h)?;
        let f_hp = eval(graph, leaf, &base, coord, h / 2.0)?;
        let f_hm = eval(graph, leaf, &base, coord, -h / 2.0)?;
        let fd = (f_p - f_m) / (2.0 * h);
        let fd_half = (f_hp - f_hm) / h;
        let jump_full = ((f_p - f0) / h - (f0 - f_m) / h).abs();
        let jump_half = ((f_hp - f0) / (h / 2.0) - (f0 - f_hm) / (h / 2.0)).abs();
        let scale = fd.abs().max(fd_half.abs()).max(GRAD_ERR_FLOOR);
        let off_center_kink = (fd - fd_half).abs() > FD_KINK_DRIFT * scale;
        let centered_kink =
            jump_full > FD_KINK_JUMP * scale && jump_half > FD_KINK_PERSISTENCE * jump_full;
        if off_center_kink || centered_kink {
            report.skipped += 1;
            continue;
        }
        report.probes += 1;

        let analytic = graph
            .grad(leaf)
            .map(|g| f64::from(g[coord]))
            .unwrap_or(0.0);

        let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(GRAD_ERR_FLOOR);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_at = (leaf_pos, coord);
            report.worst_fd = fd;
            report.worst_analytic = analytic;
        }
    }
    // Skips should be the rare exception; refusing to pass on a mostly
    // non-smooth sample keeps this check honest.
    if report.probes < ((want * 3) / 4).max(1) {
        return Err(Error::BadConfig(format!(
            "gradient check {name:?} found only {} smooth probes of {} wanted ({} skipped)",
            report.probes, want, report.skipped
        )));
    }
    report.pass = report.max_rel_err < GRAD_REL_TOL;
    Ok(report)
}

/// Reduces an arbitrary tensor to a scalar with fixed random mixing weights,
/// so a finite-difference check exercises every output coordinate with a
/// distinct sensitivity.
pub fn scalarize(graph: &mut Graph, x: NodeId, seed: u64) -> Result<NodeId> {
    let shape = graph.shape(x).to_vec();
    let mut rng = rng::stream(seed, "gradcheck/scalarize");
    let weights: Vec<f32> = (0..graph.value(x).numel())
        .map(|_| rng.gen_range(0.5..1.5))
        .collect();
    let c = graph.constant(shape, weights)?;
    let mut y = graph.mul(x, c)?;
    while !graph.shape(y).is_empty() {
        y = graph.mean_reduce(y, 0)?;
    }
    Ok(y)
}

/// Uniform random tensor in `[lo, hi)` drawn from a labeled stream.
pub fn random_tensor(shape: Vec<usize>, lo: f32, hi: f32, seed: u64, label: &str) -> Tensor {
    let mut rng = rng::stream(seed, label);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor { shape, data, requires_grad: false, grad: None }
}

/// Random tensor whose values along `axis` are pairwise separated by more
/// than `gap` within every reduction group, so max/min winners cannot flip
/// under the finite-difference step.
pub fn separated_tensor(shape: Vec<usize>, axis: usize, gap: f32, seed: u64, label: &str) -> Tensor {
    'outer: for attempt in 0..1000 {
        let t = random_tensor(shape.clone(), 0.0, 1.0, seed.wrapping_add(attempt), label);
        let (outer, len, inner) = super::kernels::reduce_layout(&shape, axis);
        for o in 0..outer {
            for i in 0..inner {
                let mut vals: Vec<f32> =
                    (0..len).map(|j| t.data[(o * len + j) * inner + i]).collect();
                vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                if vals.windows(2).any(|w| w[1] - w[0] <= gap) {
                    continue 'outer;
                }
            }
        }
        return t;
    }
    panic!("could not draw a separated tensor for shape {shape:?} axis {axis} gap {gap}");
}

/// Two random point clouds whose mutual nearest-neighbor assignments have a
/// comfortable margin: within each row/column of the pairwise squared
/// distances, the two smallest entries differ by more than `gap`.
pub fn separated_clouds(n: usize, m: usize, gap: f32, seed: u64) -> (Tensor, Tensor) {
    'outer: for attempt in 0..1000 {
        let p = random_tensor(vec![n, 3], 0.0, 1.0, seed.wrapping_add(attempt), "gradcheck/cloud_p");
        let q = random_tensor(vec![m, 3], 0.0, 1.0, seed.wrapping_add(attempt), "gradcheck/cloud_q");
        let mut d = vec![0.0f32; n * m];
        for i in 0..n {
            for j in 0..m {
                let mut s = 0.0;
                for c in 0..3 {
                    let diff = p.data[i * 3 + c] - q.data[j * 3 + c];
                    s += diff * diff;
                }
                d[i * m + j] = s;
            }
        }
        let margin_ok = |vals: &mut Vec<f32>| {
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals.len() < 2 || vals[1] - vals[0] > gap
        };
        for i in 0..n {
            let mut row: Vec<f32> = (0..m).map(|j| d[i * m + j]).collect();
            if !margin_ok(&mut row) {
                continue 'outer;
            }
        }
        for j in 0..m {
            let mut col: Vec<f32> = (0..n).map(|i| d[i * m + j]).collect();
            if !margin_ok(&mut col) {
                continue 'outer;
            }
        }
        return (p, q);
    }
    panic!("could not draw separated clouds n={n} m={m} gap={gap}");
}

/// Runs the whole differentiable-op inventory through finite differences and
/// returns one report per case. Composite cases at the end cover op chaining
/// (multi-layer perceptron) and the training loss (nearest-neighbor terms).
pub fn op_suite(seed: u64, min_probes: usize) -> Result<Vec<CheckReport>> {
    let mut reports = Vec::new();
    let mut case = |name: &str,
                    build: &mut dyn FnMut(&mut Graph) -> Result<(NodeId, Vec<NodeId>)>|
     -> Result<()> {
        let mut g = Graph::new();
        let (out, leaves) = build(&mut g)?;
        let loss = scalarize(&mut g, out, seed)?;
        reports.push(finite_diff_check(&mut g, loss, &leaves, name, seed, min_probes)?);
        Ok(())
    };

    let leaf = |g: &mut Graph, shape: &[usize], lo: f32, hi: f32, label: &str| -> NodeId {
        g.leaf(random_tensor(shape.to_vec(), lo, hi, seed, label).with_grad())
    };

    case("matmul", &mut |g| {
        let a = leaf(g, &[4, 5], -1.0, 1.0, "op/matmul/a");
        let b = leaf(g, &[5, 3], -1.0, 1.0, "op/matmul/b");
        Ok((g.matmul(a, b)?, vec![a, b]))
    })?;
    case("add", &mut |g| {
        let a = leaf(g, &[3, 4], -1.0, 1.0, "op/add/a");
        let b = leaf(g, &[3, 4], -1.0, 1.0, "op/add/b");
        Ok((g.add(a, b)?, vec![a, b]))
    })?;
    case("add_broadcast_row", &mut |g| {
        let a = leaf(g, &[3, 4], -1.0, 1.0, "op/addb/a");
        let b = leaf(g, &[4], -1.0, 1.0, "op/addb/b");
        Ok((g.add(a, b)?, vec![a, b]))
    })?;
    case("add_broadcast_col", &mut |g| {
        let a = leaf(g, &[3, 4], -1.0, 1.0, "op/addc/a");
        let b = leaf(g, &[3, 1], -1.0, 1.0, "op/addc/b");
        Ok((g.add(a, b)?, vec![a, b]))
    })?;
    case("mul", &mut |g| {
        let a = leaf(g, &[3, 4], -1.0, 1.0, "op/mul/a");
        let b = leaf(g, &[3, 4], -1.0, 1.0, "op/mul/b");
        Ok((g.mul(a, b)?, vec![a, b]))
    })?;
    case("concat_axis0", &mut |g| {
        let a = leaf(g, &[2, 3], -1.0, 1.0, "op/cat0/a");
        let b = leaf(g, &[4, 3], -1.0, 1.0, "op/cat0/b");
        Ok((g.concat(&[a, b], 0)?, vec![a, b]))
    })?;
    case("concat_axis1", &mut |g| {
        let a = leaf(g, &[3, 2], -1.0, 1.0, "op/cat1/a");
        let b = leaf(g, &[3, 5], -1.0, 1.0, "op/cat1/b");
        Ok((g.concat(&[a, b], 1)?, vec![a, b]))
    })?;
    case("slice", &mut |g| {
        let a = leaf(g, &[3, 6], -1.0, 1.0, "op/slice/a");
        Ok((g.slice(a, 1, 2, 3)?, vec![a]))
    })?;
    case("reshape", &mut |g| {
        let a = leaf(g, &[3, 4], -1.0, 1.0, "op/reshape/a");
        Ok((g.reshape(a, vec![2, 6])?, vec![a]))
    })?;
    case("transpose_2d", &mut |g| {
        let a = leaf(g, &[3, 4], -1.0, 1.0, "op/t2/a");
        Ok((g.t2(a)?, vec![a]))
    })?;
    case("transpose_3d", &mut |g| {
        let a = leaf(g, &[2, 3, 4], -1.0, 1.0, "op/t3/a");
        Ok((g.transpose(a, vec![2, 0, 1])?, vec![a]))
    })?;
    case("relu", &mut |g| {
        // Keep values away from the kink at zero, where the finite
        // difference straddles the non-differentiable point.
        let mut t = random_tensor(vec![4, 4], -1.0, 1.0, seed, "op/relu/a");
        for v in &mut t.data {
            if v.abs() < 0.05 {
                *v += 0.1_f32.copysign(if *v == 0.0 { 1.0 } else { *v });
            }
        }
        let a = g.leaf(t.with_grad());
        Ok((g.relu(a)?, vec![a]))
    })?;
    case("softmax", &mut |g| {
        let a = leaf(g, &[2, 5], -2.0, 2.0, "op/softmax/a");
        Ok((g.softmax(a)?, vec![a]))
    })?;
    case("layer_norm", &mut |g| {
        let a = leaf(g, &[3, 6], -1.0, 1.0, "op/ln/a");
        Ok((g.layer_norm(a, 1e-5)?, vec![a]))
    })?;
    case("max_reduce", &mut |g| {
        let a = g.leaf(separated_tensor(vec![3, 4], 1, 0.05, seed, "op/max/a").with_grad());
        Ok((g.max_reduce(a, 1)?, vec![a]))
    })?;
    case("min_reduce", &mut |g| {
        let a = g.leaf(separated_tensor(vec![5, 3], 0, 0.05, seed, "op/min/a").with_grad());
        Ok((g.min_reduce(a, 0)?, vec![a]))
    })?;
    case("mean_reduce", &mut |g| {
        let a = leaf(g, &[2, 3, 4], -1.0, 1.0, "op/mean/a");
        Ok((g.mean_reduce(a, 1)?, vec![a]))
    })?;
    case("gather_rows_repeated", &mut |g| {
        let a = leaf(g, &[4, 3], -1.0, 1.0, "op/gather/a");
        Ok((g.gather_rows(a, vec![2, 0, 2, 1, 2])?, vec![a]))
    })?;
    case("exp", &mut |g| {
        let a = leaf(g, &[3, 3], -1.0, 1.0, "op/exp/a");
        Ok((g.exp(a)?, vec![a]))
    })?;
    case("log", &mut |g| {
        let a = leaf(g, &[3, 3], 0.5, 2.0, "op/log/a");
        Ok((g.log(a)?, vec![a]))
    })?;
    case("sqrt", &mut |g| {
        let a = leaf(g, &[3, 3], 0.5, 2.0, "op/sqrt/a");
        Ok((g.sqrt(a)?, vec![a]))
    })?;
    case("arcosh", &mut |g| {
        // Stay clear of 1, where the derivative blows up and the central
        // difference loses accuracy.
        let a = leaf(g, &[3, 3], 1.2, 3.0, "op/arcosh/a");
        Ok((g.arcosh(a)?, vec![a]))
    })?;
    case("scale", &mut |g| {
        let a = leaf(g, &[3, 4], -1.0, 1.0, "op/scale/a");
        Ok((g.scale(a, 2.5)?, vec![a]))
    })?;
    case("add_scalar", &mut |g| {
        let a = leaf(g, &[3, 4], -1.0, 1.0, "op/adds/a");
        Ok((g.add_scalar(a, 0.7)?, vec![a]))
    })?;
    case("pairwise_sqdist", &mut |g| {
        let a = leaf(g, &[4, 3], 0.0, 1.0, "op/pw/a");
        let b = leaf(g, &[5, 3], 0.0, 1.0, "op/pw/b");
        Ok((g.pairwise_sqdist(a, b)?, vec![a, b]))
    })?;
    case("composite_mlp", &mut |g| {
        let x = leaf(g, &[4, 6], -1.0, 1.0, "op/mlp/x");
        let w1 = leaf(g, &[6, 8], -0.5, 0.5, "op/mlp/w1");
        let b1 = leaf(g, &[8], -0.5, 0.5, "op/mlp/b1");
        let w2 = leaf(g, &[8, 3], -0.5, 0.5, "op/mlp/w2");
        let b2 = leaf(g, &[3], -0.5, 0.5, "op/mlp/b2");
        let h = g.linear(x, w1, b1)?;
        let h = g.relu(h)?;
        let y = g.linear(h, w2, b2)?;
        Ok((y, vec![x, w1, b1, w2, b2]))
    })?;
    case("composite_arc_chamfer", &mut |g| {
        let (p, q) = separated_clouds(8, 6, 0.02, seed);
        let p = g.leaf(p.with_grad());
        let q = g.leaf(q.with_grad());
        Ok((g.arc_chamfer(p, q)?, vec![p, q]))
    })?;

    Ok(reports)
}
