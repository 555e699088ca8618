use super::gradcheck::{self, op_suite, separated_clouds};
use super::{Adam, AdamHyper, Graph, ParamStore, Tensor};
use crate::error::Error;

const TOL: f32 = 1e-6;

fn assert_close(got: &[f32], want: &[f32], what: &str) {
    assert_eq!(got.len(), want.len(), "{what}: length {} vs {}", got.len(), want.len());
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!(
            (g - w).abs() <= TOL * w.abs().max(1.0),
            "{what}: coordinate {i} is {g}, expected {w}"
        );
    }
}

#[test]
fn matmul_forward_and_grads() {
    let mut g = Graph::new();
    let a = g.leaf(Tensor::new(vec![1, 1], vec![2.0]).unwrap().with_grad());
    let b = g.leaf(Tensor::new(vec![1, 1], vec![3.0]).unwrap().with_grad());
    let y = g.matmul(a, b).unwrap();
    assert_eq!(g.value(y).data, vec![6.0], "1x1 matmul is plain multiplication");
    let loss = g.reshape(y, vec![]).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(a).unwrap(), &[3.0], "d(ab)/da = b");
    assert_eq!(g.grad(b).unwrap(), &[2.0], "d(ab)/db = a");
}

#[test]
fn matmul_matches_hand_product() {
    let mut g = Graph::new();
    let a = g.constant(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let b = g.constant(vec![3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
    let y = g.matmul(a, b).unwrap();
    assert_close(&g.value(y).data, &[58.0, 64.0, 139.0, 154.0], "2x3 by 3x2 product");
}

#[test]
fn softmax_uniform_on_equal_inputs() {
    let mut g = Graph::new();
    let x = g.constant(vec![2], vec![0.0, 0.0]).unwrap();
    let y = g.softmax(x).unwrap();
    assert_close(&g.value(y).data, &[0.5, 0.5], "softmax of equal logits");
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut g = Graph::new();
    let x = g.constant(vec![3, 4], (0..12).map(|i| (i as f32) * 0.7 - 4.0).collect()).unwrap();
    let y = g.softmax(x).unwrap();
    for r in 0..3 {
        let s: f32 = g.value(y).data[r * 4..(r + 1) * 4].iter().sum();
        assert!((s - 1.0).abs() < 1e-6, "row {r} sums to {s}");
    }
}

#[test]
fn pairwise_sqdist_hand_case() {
    let mut g = Graph::new();
    let p = g.constant(vec![1, 3], vec![0.0, 0.0, 0.0]).unwrap();
    let q = g.constant(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 2.0, 0.0]).unwrap();
    let d = g.pairwise_sqdist(p, q).unwrap();
    assert_close(&g.value(d).data, &[1.0, 4.0], "squared distances to (1,0,0) and (0,2,0)");
}

#[test]
fn chamfer_singleton_gradient() {
    // Clouds {(0,0,0)} and {(1,0,0)}: both directional terms pick the same
    // pair, so d/dp_x of the squared chamfer is 2(p-q) twice = -4.
    let mut g = Graph::new();
    let p = g.leaf(Tensor::new(vec![1, 3], vec![0.0, 0.0, 0.0]).unwrap().with_grad());
    let q = g.constant(vec![1, 3], vec![1.0, 0.0, 0.0]).unwrap();
    let cd = g.chamfer_l2(p, q).unwrap();
    assert_close(&g.value(cd).data, &[2.0], "both directions contribute 1");
    g.backward(cd).unwrap();
    assert_close(g.grad(p).unwrap(), &[-4.0, 0.0, 0.0], "chamfer gradient on singleton");
}

#[test]
fn backward_twice_accumulates() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().with_grad());
    let y = g.mean_reduce(x, 0).unwrap();
    g.backward(y).unwrap();
    assert_close(g.grad(x).unwrap(), &[0.5, 0.5], "mean gradient");
    g.backward(y).unwrap();
    assert_close(g.grad(x).unwrap(), &[1.0, 1.0], "second backward doubles the gradient");
}

#[test]
fn broadcast_add_matches_tiling() {
    let mut g = Graph::new();
    let a = g.constant(vec![3, 4], (0..12).map(|i| i as f32).collect()).unwrap();
    let b = g.constant(vec![4], vec![10.0, 20.0, 30.0, 40.0]).unwrap();
    let y = g.add(a, b).unwrap();
    let tiled: Vec<f32> = vec![10.0, 20.0, 30.0, 40.0].repeat(3);
    let manual: Vec<f32> = (0..12).map(|i| i as f32 + tiled[i]).collect();
    assert_close(&g.value(y).data, &manual, "broadcast equals explicit tiling");
}

#[test]
fn replay_matches_forward_without_overrides() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![2, 2], vec![0.3, -0.7, 1.1, 0.0]).unwrap().with_grad());
    let w = g.leaf(Tensor::new(vec![2, 2], vec![0.5, 0.25, -0.5, 1.0]).unwrap().with_grad());
    let h = g.matmul(x, w).unwrap();
    let h = g.relu(h).unwrap();
    let h = g.softmax(h).unwrap();
    let loss = gradcheck::scalarize(&mut g, h, 7).unwrap();
    let forward = f64::from(g.value(loss).data[0]);
    let replayed = g.replay_f64(loss, &[]).unwrap();
    assert!(
        (forward - replayed).abs() < 1e-6,
        "float64 replay {replayed} strays from float32 forward {forward}"
    );
}

#[test]
fn max_reduce_forwards_only_winner() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![2, 3], vec![1.0, 5.0, 2.0, 7.0, 0.0, 3.0]).unwrap().with_grad());
    let y = g.max_reduce(x, 1).unwrap();
    assert_close(&g.value(y).data, &[5.0, 7.0], "row maxima");
    let s = g.mean_reduce(y, 0).unwrap();
    g.backward(s).unwrap();
    assert_close(
        g.grad(x).unwrap(),
        &[0.0, 0.5, 0.0, 0.5, 0.0, 0.0],
        "gradient lands on the winning entries only"
    );
}

#[test]
fn max_reduce_tie_goes_to_first() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![1, 3], vec![4.0, 4.0, 1.0]).unwrap().with_grad());
    let y = g.max_reduce(x, 1).unwrap();
    let s = g.mean_reduce(y, 0).unwrap();
    g.backward(s).unwrap();
    assert_close(g.grad(x).unwrap(), &[1.0, 0.0, 0.0], "tied maximum routes to the lowest index");
}

#[test]
fn gather_rows_backward_scatter_adds() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap().with_grad());
    let y = g.gather_rows(x, vec![1, 1, 0]).unwrap();
    assert_close(&g.value(y).data, &[3.0, 4.0, 3.0, 4.0, 1.0, 2.0], "gathered rows");
    let mut s = g.mean_reduce(y, 0).unwrap();
    s = g.mean_reduce(s, 0).unwrap();
    g.backward(s).unwrap();
    // Each output coordinate contributes 1/6; row 1 appears twice.
    assert_close(
        g.grad(x).unwrap(),
        &[1.0 / 6.0, 1.0 / 6.0, 2.0 / 6.0, 2.0 / 6.0, 0.0, 0.0],
        "repeated gather indices sum their gradients"
    );
}

#[test]
fn scalar_loss_required() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().with_grad());
    match g.backward(x) {
        Err(Error::NotScalarLoss { shape }) => assert_eq!(shape, vec![2]),
        other => panic!("expected NotScalarLoss, got {other:?}"),
    }
}

#[test]
fn arcosh_rejects_below_one() {
    let mut g = Graph::new();
    let x = g.constant(vec![2], vec![1.5, 0.5]).unwrap();
    assert!(g.arcosh(x).is_err(), "arcosh must reject inputs below 1");
}

#[test]
fn log_rejects_non_positive() {
    let mut g = Graph::new();
    let x = g.constant(vec![2], vec![1.0, 0.0]).unwrap();
    assert!(g.log(x).is_err(), "log must reject zero");
}

#[test]
fn transpose_3d_permutes_axes() {
    let mut g = Graph::new();
    let x = g.constant(vec![2, 3, 4], (0..24).map(|i| i as f32).collect()).unwrap();
    let y = g.transpose(x, vec![2, 0, 1]).unwrap();
    assert_eq!(g.shape(y), &[4, 2, 3]);
    // y[i][j][k] = x[j][k][i]
    let v = &g.value(y).data;
    for i in 0..4 {
        for j in 0..2 {
            for kk in 0..3 {
                let want = (j * 3 * 4 + kk * 4 + i) as f32;
                assert_eq!(v[i * 6 + j * 3 + kk], want, "transposed element ({i},{j},{kk})");
            }
        }
    }
}

#[test]
fn op_inventory_passes_finite_difference() {
    let reports = op_suite(42, 24).unwrap();
    assert!(reports.len() >= 25, "op inventory shrank to {}", reports.len());
    for r in &reports {
        assert!(r.probes >= 9, "only {} probes ran for {}", r.probes, r.name);
        assert!(r.pass, "finite-difference mismatch: {}", r.line());
    }
}

#[test]
fn separated_clouds_have_margin() {
    let (p, q) = separated_clouds(8, 6, 0.02, 9);
    assert_eq!(p.shape, vec![8, 3]);
    assert_eq!(q.shape, vec![6, 3]);
}

#[test]
fn param_grads_flow_to_store_and_shared_use_sums() {
    let mut store = ParamStore::new();
    let w = store.register("w", vec![2], vec![1.0, 2.0]).unwrap();
    let mut g = Graph::new();
    let w1 = g.param(&store, w);
    let w2 = g.param(&store, w);
    let s = g.add(w1, w2).unwrap();
    let mut loss = g.mul(s, s).unwrap();
    loss = g.mean_reduce(loss, 0).unwrap();
    // loss = mean((2w)^2) = 2 w0^2 + 2 w1^2, so dloss/dw = 4w / 1... per
    // coordinate: d/dw_i [ (2w_i)^2 / 2 ] = 4 w_i.
    g.backward(loss).unwrap();
    g.apply_param_grads(&mut store);
    let got = store.grad(w).unwrap();
    assert_close(got, &[4.0, 8.0], "shared parameter accumulates both uses");
}

#[test]
fn param_store_rejects_duplicates() {
    let mut store = ParamStore::new();
    store.register("w", vec![1], vec![0.0]).unwrap();
    assert!(store.register("w", vec![1], vec![0.0]).is_err(), "duplicate names must fail");
}

#[test]
fn param_snapshot_roundtrip_is_exact() {
    let mut store = ParamStore::new();
    store.register("a", vec![2, 2], vec![0.1, -0.2, 0.3, f32::MIN_POSITIVE]).unwrap();
    store.register("b", vec![3], vec![1.5, -2.5, 3.25]).unwrap();
    let snap = store.to_named_tensors();
    let mut other = ParamStore::new();
    other.register("a", vec![2, 2], vec![0.0; 4]).unwrap();
    other.register("b", vec![3], vec![0.0; 3]).unwrap();
    other.load_named_tensors(&snap).unwrap();
    for (x, y) in store.to_named_tensors().iter().zip(other.to_named_tensors().iter()) {
        assert_eq!(x.data, y.data, "tensor {} must load bit-exactly", x.name);
    }
}

#[test]
fn param_load_rejects_shape_and_name_mismatch() {
    let mut store = ParamStore::new();
    store.register("a", vec![2], vec![0.0; 2]).unwrap();
    let mut wrong_shape = store.to_named_tensors();
    wrong_shape[0].dims = vec![1, 2];
    assert!(store.load_named_tensors(&wrong_shape).is_err(), "shape mismatch must fail");
    let mut wrong_name = store.to_named_tensors();
    wrong_name[0].name = "z".into();
    assert!(store.load_named_tensors(&wrong_name).is_err(), "unknown name must fail");
    assert!(store.load_named_tensors(&[]).is_err(), "count mismatch must fail");
}

#[test]
fn adam_minimizes_quadratic() {
    let mut store = ParamStore::new();
    let w = store.register("w", vec![2], vec![0.5, -0.4]).unwrap();
    let hp = AdamHyper { lr: 0.01, ..AdamHyper::default() };
    let mut opt = Adam::new(hp, &store);
    for _ in 0..300 {
        store.zero_grads();
        let mut g = Graph::new();
        let wi = g.param(&store, w);
        let sq = g.mul(wi, wi).unwrap();
        let m = g.mean_reduce(sq, 0).unwrap();
        g.backward(m).unwrap();
        g.apply_param_grads(&mut store);
        opt.step(&mut store).unwrap();
    }
    for (i, v) in store.tensor(w).data.iter().enumerate() {
        assert!(v.abs() < 0.05, "coordinate {i} stuck at {v} after 300 Adam steps on w^2");
    }
}

#[test]
fn adam_lr_multiplier_scales_selected_params_only() {
    let mut store = ParamStore::new();
    let a = store.register("base/w", vec![1], vec![1.0]).unwrap();
    let b = store.register("dec/w", vec![1], vec![1.0]).unwrap();
    let mut opt = Adam::new(AdamHyper { lr: 0.01, ..AdamHyper::default() }, &store);
    opt.set_lr_multiplier(&store, |name| name.starts_with("dec"), 10.0);
    store.accumulate_grad(a, &[0.3]);
    store.accumulate_grad(b, &[0.3]);
    opt.step(&mut store).unwrap();
    // With fresh moments the first Adam step is lr * mult in magnitude
    // (mhat/sqrt(vhat) = 1 up to eps), so the ratio exposes the multiplier.
    let da = f64::from(1.0 - store.tensor(a).data[0]);
    let db = f64::from(1.0 - store.tensor(b).data[0]);
    assert!((da - 0.01).abs() < 1e-6, "base step should be lr, got {da}");
    assert!((db - 0.1).abs() < 1e-5, "multiplied step should be 10x lr, got {db}");
}

#[test]
fn adam_requires_gradients() {
    let mut store = ParamStore::new();
    store.register("w", vec![1], vec![1.0]).unwrap();
    let mut opt = Adam::new(AdamHyper::default(), &store);
    match opt.step(&mut store) {
        Err(Error::MissingGrad { name }) => assert_eq!(name, "w"),
        other => panic!("expected MissingGrad, got {other:?}"),
    }
}

#[test]
fn zero_grads_clears_buffers() {
    let mut store = ParamStore::new();
    let w = store.register("w", vec![1], vec![1.0]).unwrap();
    store.accumulate_grad(w, &[2.0]);
    assert!(store.grad(w).is_some());
    store.zero_grads();
    assert!(store.grad(w).is_none(), "zero_grads leaves no stale gradient");
}

#[test]
fn arc_chamfer_value_matches_host_metric() {
    use crate::geometry::PointCloud;
    use crate::metrics;
    let (pt, qt) = separated_clouds(10, 7, 0.01, 33);
    let to_cloud = |t: &Tensor| {
        let pts: Vec<[f64; 3]> = t
            .data
            .chunks(3)
            .map(|c| [f64::from(c[0]), f64::from(c[1]), f64::from(c[2])])
            .collect();
        PointCloud::new(pts).unwrap()
    };
    let (pc, qc) = (to_cloud(&pt), to_cloud(&qt));
    let want = metrics::arc_cd(&pc, &qc).unwrap();
    let mut g = Graph::new();
    let p = g.leaf(pt);
    let q = g.leaf(qt);
    let a = g.arc_chamfer(p, q).unwrap();
    let got = f64::from(g.value(a).data[0]);
    assert!(
        (got - want).abs() < 1e-5,
        "graph arc-chamfer {got} vs host metric {want}"
    );
}
