//! Row-partitioned dense kernels. Each output row is produced by exactly one
//! task with a fixed summation order, so results do not depend on threading.

use crate::par::{self, Execution};
use crate::tensor::Real;

/// `a (m x k) * b (k x n)`.
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    let exec = par::pick(par::execution(), m * k * n);
    par::for_each_row(exec, &mut out, n, |i, row| {
        let a_row = &a[i * k..(i + 1) * k];
        for (t, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let b_row = &b[t * n..(t + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    });
    out
}

/// `a (m x k) * b^T` where `b` is `n x k`.
pub fn matmul_bt<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    let exec = par::pick(par::execution(), m * k * n);
    par::for_each_row(exec, &mut out, n, |i, row| {
        let a_row = &a[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut s = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                s += x * y;
            }
            *o = s;
        }
    });
    out
}

/// `a^T * b` where `a` is `m x k` and `b` is `m x n`; result `k x n`.
pub fn matmul_at<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    let exec: Execution = par::pick(par::execution(), m * k * n);
    par::for_each_row(exec, &mut out, n, |t, row| {
        for i in 0..m {
            let av = a[i * k + t];
            if av == T::zero() {
                continue;
            }
            let b_row = &b[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    });
    out
}

pub fn transpose<T: Real>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}
