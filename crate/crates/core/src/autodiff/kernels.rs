//! Forward kernels, generic over element type.
//!
//! The graph executes these in float32 when it is built and replays them in
//! float64 for finite-difference gradient checks, so each kernel is written
//! once against the [`Real`] trait. Matrix products go through the blocked
//! `matrixmultiply` routines; everything else is straightforward loops with a
//! fixed iteration order, which keeps results bitwise reproducible.

/// The arithmetic surface the kernels need. Implemented for f32 and f64.
pub trait Real:
    Copy
    + PartialOrd
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::fmt::Debug
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn acosh(self) -> Self;
    /// Dense row-major matrix product `c = a(m x k) * b(k x n)`, with the
    /// option to read either operand transposed in place.
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], ta: bool, b: &[Self], tb: bool, c: &mut [Self]);
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    fn exp(self) -> Self {
        self.exp()
    }
    fn ln(self) -> Self {
        self.ln()
    }
    fn sqrt(self) -> Self {
        self.sqrt()
    }
    fn acosh(self) -> Self {
        self.acosh()
    }
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], ta: bool, b: &[Self], tb: bool, c: &mut [Self]) {
        let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
        let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
        unsafe {
            matrixmultiply::sgemm(
                m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, 0.0, c.as_mut_ptr(), n as isize, 1,
            );
        }
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        self.exp()
    }
    fn ln(self) -> Self {
        self.ln()
    }
    fn sqrt(self) -> Self {
        self.sqrt()
    }
    fn acosh(self) -> Self {
        self.acosh()
    }
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], ta: bool, b: &[Self], tb: bool, c: &mut [Self]) {
        let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
        let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
        unsafe {
            matrixmultiply::dgemm(
                m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, 0.0, c.as_mut_ptr(), n as isize, 1,
            );
        }
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for a shape.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Shape of `a + b` under right-aligned broadcasting, if compatible.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da == db || da == 1 || db == 1 {
            out[i] = da.max(db);
        } else {
            return None;
        }
    }
    Some(out)
}

/// Per-output-dim element strides into an operand being broadcast to
/// `out_shape` (0 where the operand's dim is 1).
pub fn broadcast_strides(operand: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let ops = strides(operand);
    let mut s = vec![0usize; rank];
    for i in 0..rank {
        if i >= rank - operand.len() {
            let oi = i - (rank - operand.len());
            s[i] = if operand[oi] == 1 && out_shape[i] != 1 { 0 } else { ops[oi] };
        }
    }
    s
}

/// Walks every linear index of `shape`, yielding the mapped offset for an
/// operand with the given broadcast strides.
pub fn for_each_broadcast(shape: &[usize], ops: &[&[usize]], mut f: impl FnMut(usize, &[usize])) {
    let total = numel(shape);
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut offsets = vec![0usize; ops.len()];
    for lin in 0..total {
        for (o, s) in offsets.iter_mut().zip(ops) {
            *o = idx.iter().zip(s.iter()).map(|(&i, &st)| i * st).sum();
        }
        f(lin, &offsets);
        // Increment the multi-index (row-major order).
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

pub fn add<T: Real>(a: &[T], ash: &[usize], b: &[T], bsh: &[usize], out_shape: &[usize], out: &mut Vec<T>) {
    out.clear();
    if ash == bsh {
        out.extend(a.iter().zip(b).map(|(&x, &y)| x + y));
        return;
    }
    let sa = broadcast_strides(ash, out_shape);
    let sb = broadcast_strides(bsh, out_shape);
    out.resize(numel(out_shape), T::ZERO);
    let o = out.as_mut_slice();
    for_each_broadcast(out_shape, &[&sa, &sb], |lin, offs| {
        o[lin] = a[offs[0]] + b[offs[1]];
    });
}

pub fn mul<T: Real>(a: &[T], b: &[T], out: &mut Vec<T>) {
    out.clear();
    out.extend(a.iter().zip(b).map(|(&x, &y)| x * y));
}

pub fn relu<T: Real>(x: &[T], out: &mut Vec<T>) {
    out.clear();
    out.extend(x.iter().map(|&v| if v > T::ZERO { v } else { T::ZERO }));
}

pub fn scale<T: Real>(x: &[T], c: f64, out: &mut Vec<T>) {
    let c = T::from_f64(c);
    out.clear();
    out.extend(x.iter().map(|&v| v * c));
}

pub fn add_scalar<T: Real>(x: &[T], c: f64, out: &mut Vec<T>) {
    let c = T::from_f64(c);
    out.clear();
    out.extend(x.iter().map(|&v| v + c));
}

pub fn exp<T: Real>(x: &[T], out: &mut Vec<T>) {
    out.clear();
    out.extend(x.iter().map(|&v| v.exp()));
}

pub fn ln<T: Real>(x: &[T], out: &mut Vec<T>) {
    out.clear();
    out.extend(x.iter().map(|&v| v.ln()));
}

pub fn sqrt<T: Real>(x: &[T], out: &mut Vec<T>) {
    out.clear();
    out.extend(x.iter().map(|&v| v.sqrt()));
}

pub fn acosh<T: Real>(x: &[T], out: &mut Vec<T>) {
    out.clear();
    out.extend(x.iter().map(|&v| v.acosh()));
}

pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut Vec<T>) {
    out.resize(m * n, T::ZERO);
    T::gemm(m, k, n, a, false, b, false, out);
}

/// Softmax over the last axis.
pub fn softmax<T: Real>(x: &[T], last: usize, out: &mut Vec<T>) {
    out.resize(x.len(), T::ZERO);
    for (row_in, row_out) in x.chunks_exact(last).zip(out.chunks_exact_mut(last)) {
        let mut m = row_in[0];
        for &v in row_in {
            if v > m {
                m = v;
            }
        }
        let mut sum = T::ZERO;
        for (o, &v) in row_out.iter_mut().zip(row_in) {
            *o = (v - m).exp();
            sum = sum + *o;
        }
        for o in row_out.iter_mut() {
            *o = *o / sum;
        }
    }
}

/// Layer normalization over the last axis (no learned affine; compose with
/// mul/add for gain and bias).
pub fn layer_norm<T: Real>(x: &[T], last: usize, eps: f64, out: &mut Vec<T>) {
    let eps = T::from_f64(eps);
    let n = T::from_f64(last as f64);
    out.resize(x.len(), T::ZERO);
    for (row_in, row_out) in x.chunks_exact(last).zip(out.chunks_exact_mut(last)) {
        let mut mean = T::ZERO;
        for &v in row_in {
            mean = mean + v;
        }
        mean = mean / n;
        let mut var = T::ZERO;
        for &v in row_in {
            let d = v - mean;
            var = var + d * d;
        }
        var = var / n;
        let inv = T::ONE / (var + eps).sqrt();
        for (o, &v) in row_out.iter_mut().zip(row_in) {
            *o = (v - mean) * inv;
        }
    }
}

/// Reduction layout for `axis` of `shape`: (outer, len, inner) such that the
/// input is indexed as `outer * len * inner`.
pub fn reduce_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

/// Extremum reduction along `axis`, dropping the axis. `want_max` selects max
/// vs min; returns the winning in-axis index per output slot (first winner on
/// exact ties) alongside the values.
pub fn extremum_reduce<T: Real>(
    x: &[T],
    shape: &[usize],
    axis: usize,
    want_max: bool,
    out: &mut Vec<T>,
    arg: &mut Vec<usize>,
) {
    let (outer, len, inner) = reduce_layout(shape, axis);
    out.resize(outer * inner, T::ZERO);
    arg.resize(outer * inner, 0);
    for o in 0..outer {
        for i in 0..inner {
            let mut best = x[o * len * inner + i];
            let mut best_j = 0usize;
            for j in 1..len {
                let v = x[(o * len + j) * inner + i];
                let better = if want_max { v > best } else { v < best };
                if better {
                    best = v;
                    best_j = j;
                }
            }
            out[o * inner + i] = best;
            arg[o * inner + i] = best_j;
        }
    }
}

/// Mean along `axis`, dropping the axis.
pub fn mean_reduce<T: Real>(x: &[T], shape: &[usize], axis: usize, out: &mut Vec<T>) {
    let (outer, len, inner) = reduce_layout(shape, axis);
    let inv = T::ONE / T::from_f64(len as f64);
    out.resize(outer * inner, T::ZERO);
    for o in 0..outer {
        for i in 0..inner {
            let mut sum = T::ZERO;
            for j in 0..len {
                sum = sum + x[(o * len + j) * inner + i];
            }
            out[o * inner + i] = sum * inv;
        }
    }
}

/// Copies rows (`axis 0` slices) selected by `indices`.
pub fn gather_rows<T: Real>(x: &[T], row_size: usize, indices: &[usize], out: &mut Vec<T>) {
    out.clear();
    out.reserve(indices.len() * row_size);
    for &i in indices {
        out.extend_from_slice(&x[i * row_size..(i + 1) * row_size]);
    }
}

/// Concatenation along `axis`. `parts` pairs each input buffer with its shape.
pub fn concat<T: Real>(parts: &[(&[T], &[usize])], axis: usize, out_shape: &[usize], out: &mut Vec<T>) {
    let outer: usize = out_shape[..axis].iter().product();
    let inner: usize = out_shape[axis + 1..].iter().product();
    out.clear();
    out.reserve(numel(out_shape));
    for o in 0..outer {
        for (data, shape) in parts {
            let block = shape[axis] * inner;
            out.extend_from_slice(&data[o * block..(o + 1) * block]);
        }
    }
}

/// Contiguous slice `[start, start+len)` along `axis`.
pub fn slice<T: Real>(x: &[T], shape: &[usize], axis: usize, start: usize, len: usize, out: &mut Vec<T>) {
    let (outer, full, inner) = reduce_layout(shape, axis);
    out.clear();
    out.reserve(outer * len * inner);
    for o in 0..outer {
        let base = (o * full + start) * inner;
        out.extend_from_slice(&x[base..base + len * inner]);
    }
}

/// Axis permutation: `out[i0', i1', ...] = x[perm applied]` where output dim
/// `d` is input dim `perm[d]`.
pub fn transpose<T: Real>(x: &[T], shape: &[usize], perm: &[usize], out: &mut Vec<T>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mapped: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    out.resize(numel(&out_shape), T::ZERO);
    let o = out.as_mut_slice();
    for_each_broadcast(&out_shape, &[&mapped], |lin, offs| {
        o[lin] = x[offs[0]];
    });
}

/// All pairwise squared distances between rows of `p` (n x 3) and `q` (m x 3).
pub fn pairwise_sqdist<T: Real>(p: &[T], q: &[T], n: usize, m: usize, out: &mut Vec<T>) {
    out.resize(n * m, T::ZERO);
    for i in 0..n {
        let (px, py, pz) = (p[i * 3], p[i * 3 + 1], p[i * 3 + 2]);
        let row = &mut out[i * m..(i + 1) * m];
        for (j, o) in row.iter_mut().enumerate() {
            let dx = px - q[j * 3];
            let dy = py - q[j * 3 + 1];
            let dz = pz - q[j * 3 + 2];
            *o = dx * dx + dy * dy + dz * dz;
        }
    }
}
