//! Inner loops shared by forward and backward rules.
//!
//! Summation order is fixed, so results are bit-reproducible.

use crate::scalar::Scalar;

#[inline]
fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with eight independent accumulators.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for (ca, cb) in a.chunks_exact(8).zip(b.chunks_exact(8)) {
        for l in 0..8 {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    let pairs = [
        acc[0] + acc[4],
        acc[1] + acc[5],
        acc[2] + acc[6],
        acc[3] + acc[7],
    ];
    (pairs[0] + pairs[2]) + (pairs[1] + pairs[3]) + tail
}

/// Range of kernel taps `j` for output row `n` whose source row `n + j - half`
/// lies inside `0..len`.
#[inline]
fn taps(n: usize, len: usize, k: usize) -> std::ops::Range<usize> {
    let half = k / 2;
    let lo = half.saturating_sub(n);
    let hi = k.min(len + half - n);
    lo..hi
}

#[allow(clippy::too_many_arguments)]
pub(super) fn conv1d_forward<T: Scalar>(
    x: &[T],
    w: &[T],
    bias: &[T],
    out: &mut [T],
    batch: usize,
    n: usize,
    k: usize,
    c_in: usize,
    c_out: usize,
) {
    let half = k / 2;
    for b in 0..batch {
        let xs = &x[b * n * c_in..(b + 1) * n * c_in];
        for p in 0..n {
            let row = &mut out[(b * n + p) * c_out..(b * n + p + 1) * c_out];
            row.copy_from_slice(bias);
            for j in taps(p, n, k) {
                let src = p + j - half;
                let xrow = &xs[src * c_in..(src + 1) * c_in];
                let wj = &w[j * c_in * c_out..(j + 1) * c_in * c_out];
                for (i, &a) in xrow.iter().enumerate() {
                    if a != T::zero() {
                        axpy(a, &wj[i * c_out..(i + 1) * c_out], row);
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn conv1d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    gout: &[T],
    mut gx: Option<&mut [T]>,
    mut gw: Option<&mut [T]>,
    batch: usize,
    n: usize,
    k: usize,
    c_in: usize,
    c_out: usize,
) {
    let half = k / 2;
    for b in 0..batch {
        for p in 0..n {
            let grow = &gout[(b * n + p) * c_out..(b * n + p + 1) * c_out];
            for j in taps(p, n, k) {
                let src = b * n + p + j - half;
                let wj = &w[j * c_in * c_out..(j + 1) * c_in * c_out];
                if let Some(gx) = gx.as_deref_mut() {
                    let gxrow = &mut gx[src * c_in..(src + 1) * c_in];
                    for (i, g) in gxrow.iter_mut().enumerate() {
                        *g += dot(grow, &wj[i * c_out..(i + 1) * c_out]);
                    }
                }
                if let Some(gw) = gw.as_deref_mut() {
                    let xrow = &x[src * c_in..(src + 1) * c_in];
                    let gwj = &mut gw[j * c_in * c_out..(j + 1) * c_in * c_out];
                    for (i, &a) in xrow.iter().enumerate() {
                        if a != T::zero() {
                            axpy(a, grow, &mut gwj[i * c_out..(i + 1) * c_out]);
                        }
                    }
                }
            }
        }
    }
}

/// Per-channel mean and biased variance over `rows` rows.
/// Per-channel mean and biased variance, accumulated in `f64` so that `f32`
/// results do not depend on row order.
pub(super) fn channel_moments<T: Scalar>(x: &[T], rows: usize, c: usize) -> (Vec<T>, Vec<T>) {
    let r = rows as f64;
    let mut mean = vec![0.0; c];
    for row in x.chunks_exact(c) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v.as_f64();
        }
    }
    for m in &mut mean {
        *m /= r;
    }
    let mut var = vec![0.0; c];
    for row in x.chunks_exact(c) {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v.as_f64() - m;
            *s += d * d;
        }
    }
    let to_t = |v: Vec<f64>| v.into_iter().map(T::of).collect();
    (to_t(mean), to_t(var.into_iter().map(|s| s / r).collect()))
}
