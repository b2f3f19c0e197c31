//! Numeric kernels with a rayon path and a sequential path.
//!
//! Both paths compute every output element with the same operation order, so
//! they are bit-identical; the `parallel` feature only changes who does the work.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many multiply-adds the parallel path is not worth the dispatch.
#[cfg(feature = "parallel")]
const PAR_MIN_WORK: usize = 1 << 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatmulDims {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// `b` is a single `[k, n]` matrix shared by every batch entry.
    pub b_shared: bool,
}

/// Rows computed together; each output element still sums over `k` in order.
const ROW_BLOCK: usize = 4;

#[inline]
fn row_kernel(out: &mut [f64], a_row: &[f64], b: &[f64], n: usize) {
    out.fill(0.0);
    for (p, &av) in a_row.iter().enumerate() {
        let b_row = &b[p * n..(p + 1) * n];
        for (o, &bv) in out.iter_mut().zip(b_row) {
            *o += av * bv;
        }
    }
}

#[inline]
fn block_kernel(out: &mut [f64], a: &[f64], b: &[f64], k: usize, n: usize) {
    if out.len() != ROW_BLOCK * n {
        for (i, row) in out.chunks_mut(n).enumerate() {
            row_kernel(row, &a[i * k..(i + 1) * k], b, n);
        }
        return;
    }
    out.fill(0.0);
    let (o0, rest) = out.split_at_mut(n);
    let (o1, rest) = rest.split_at_mut(n);
    let (o2, o3) = rest.split_at_mut(n);
    for p in 0..k {
        let (a0, a1, a2, a3) = (a[p], a[k + p], a[2 * k + p], a[3 * k + p]);
        let b_row = &b[p * n..(p + 1) * n];
        for ((((x0, x1), x2), x3), &bv) in o0.iter_mut().zip(o1.iter_mut()).zip(o2.iter_mut()).zip(o3.iter_mut()).zip(b_row) {
            *x0 += a0 * bv;
            *x1 += a1 * bv;
            *x2 += a2 * bv;
            *x3 += a3 * bv;
        }
    }
}

/// One batch entry `[m, k] x [k, n]` into `out`, block by block.
#[inline]
fn compute_block(out: &mut [f64], blk: usize, a_mat: &[f64], b_mat: &[f64], d: MatmulDims) {
    let r0 = blk * ROW_BLOCK;
    let rows = out.len() / d.n;
    block_kernel(out, &a_mat[r0 * d.k..(r0 + rows) * d.k], b_mat, d.k, d.n);
}

fn operands<'a>(a: &'a [f64], b: &'a [f64], bi: usize, d: MatmulDims) -> (&'a [f64], &'a [f64]) {
    let a_mat = &a[bi * d.m * d.k..(bi + 1) * d.m * d.k];
    let b_mat = if d.b_shared { b } else { &b[bi * d.k * d.n..(bi + 1) * d.k * d.n] };
    (a_mat, b_mat)
}

pub fn bmm_seq(a: &[f64], b: &[f64], d: MatmulDims) -> Vec<f64> {
    let mut out = vec![0.0; d.batch * d.m * d.n];
    if d.n == 0 || d.m == 0 {
        return out;
    }
    for (bi, ob) in out.chunks_mut(d.m * d.n).enumerate() {
        let (a_mat, b_mat) = operands(a, b, bi, d);
        for (blk, o) in ob.chunks_mut(ROW_BLOCK * d.n).enumerate() {
            compute_block(o, blk, a_mat, b_mat, d);
        }
    }
    out
}

#[cfg(feature = "parallel")]
pub fn bmm_par(a: &[f64], b: &[f64], d: MatmulDims) -> Vec<f64> {
    let mut out = vec![0.0; d.batch * d.m * d.n];
    if d.n == 0 || d.m == 0 {
        return out;
    }
    let min_blocks = (PAR_MIN_WORK / (ROW_BLOCK * d.k * d.n).max(1)).max(1);
    out.par_chunks_mut(d.m * d.n).enumerate().for_each(|(bi, ob)| {
        let (a_mat, b_mat) = operands(a, b, bi, d);
        ob.par_chunks_mut(ROW_BLOCK * d.n)
            .with_min_len(min_blocks)
            .enumerate()
            .for_each(|(blk, o)| compute_block(o, blk, a_mat, b_mat, d));
    });
    out
}

/// Batched product `[batch, m, k] x [batch|1, k, n]`.
pub fn bmm(a: &[f64], b: &[f64], d: MatmulDims) -> Vec<f64> {
    debug_assert_eq!(a.len(), d.batch * d.m * d.k);
    debug_assert_eq!(b.len(), if d.b_shared { 1 } else { d.batch } * d.k * d.n);
    #[cfg(feature = "parallel")]
    {
        if d.batch * d.m * d.k * d.n >= PAR_MIN_WORK {
            return bmm_par(a, b, d);
        }
    }
    bmm_seq(a, b, d)
}

/// Swaps the last two axes of a `[batch, r, c]` buffer.
pub fn transpose_last2(x: &[f64], batch: usize, r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for bi in 0..batch {
        let src = &x[bi * r * c..(bi + 1) * r * c];
        let dst = &mut out[bi * r * c..(bi + 1) * r * c];
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
    }
    out
}

/// Applies `f(row_index, row)` to each `width`-sized row of `out`.
pub fn for_each_row<F>(out: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        if out.len() >= PAR_MIN_WORK {
            let min_rows = (4096 / width).max(1);
            out.par_chunks_mut(width)
                .with_min_len(min_rows)
                .enumerate()
                .for_each(|(i, row)| f(i, row));
            return;
        }
    }
    out.chunks_mut(width).enumerate().for_each(|(i, row)| f(i, row));
}

/// Order-preserving map over indices; parallel when the feature is on.
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        c
    }

    #[test]
    fn matches_naive_product() {
        let mut r = CounterRng::from_seed(11);
        let (m, k, n) = (7, 5, 6);
        let a = r.normal_vec(m * k, 1.0);
        let b = r.normal_vec(k * n, 1.0);
        let d = MatmulDims { batch: 1, m, k, n, b_shared: true };
        let got = bmm(&a, &b, d);
        for (x, y) in got.iter().zip(naive(&a, &b, m, k, n)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_and_sequential_are_bit_identical() {
        let mut r = CounterRng::from_seed(12);
        let d = MatmulDims { batch: 6, m: 40, k: 64, n: 48, b_shared: false };
        let a = r.normal_vec(d.batch * d.m * d.k, 1.0);
        let b = r.normal_vec(d.batch * d.k * d.n, 1.0);
        assert_eq!(bmm_seq(&a, &b, d), bmm_par(&a, &b, d));
    }

    #[test]
    fn transpose_twice_is_identity() {
        let x: Vec<f64> = (0..24).map(|v| v as f64).collect();
        let t = transpose_last2(&x, 2, 3, 4);
        assert_eq!(transpose_last2(&t, 2, 4, 3), x);
    }
}
