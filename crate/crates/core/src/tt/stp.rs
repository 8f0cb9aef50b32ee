//! Left semi-tensor product.
//!
//! For `A` of shape `h x (n*p)` and `B` of shape `p x q`, `A ⋉ B` has shape
//! `h x (n*q)` and consists of `h x q` blocks of width `n`:
//!
//! ```text
//! C[h, q*n + t] = sum_p A[h, p*n + t] * B[p, q]
//! ```
//!
//! Row `h` of `A` is read as `p` consecutive length-`n` blocks, each scaled by
//! the matching entry of column `q` of `B`. With `n = 1` this is the ordinary
//! matrix product.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Accumulates `A ⋉ B` into `out` (length `h * n * q`).
pub fn stp_into<T: Real>(a: &[T], h: usize, b: &[T], p: usize, q: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), h * n * p);
    debug_assert_eq!(b.len(), p * q);
    debug_assert_eq!(out.len(), h * n * q);
    for hh in 0..h {
        let a_row = &a[hh * n * p..(hh + 1) * n * p];
        let c_row = &mut out[hh * n * q..(hh + 1) * n * q];
        for pp in 0..p {
            let a_blk = &a_row[pp * n..(pp + 1) * n];
            let b_row = &b[pp * q..(pp + 1) * q];
            for (qq, &bv) in b_row.iter().enumerate() {
                let c_blk = &mut c_row[qq * n..(qq + 1) * n];
                for (c, &av) in c_blk.iter_mut().zip(a_blk) {
                    *c += av * bv;
                }
            }
        }
    }
}

pub fn stp<T: Real>(a: &[T], h: usize, b: &[T], p: usize, q: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); h * n * q];
    stp_into(a, h, b, p, q, n, &mut out);
    out
}

/// Gradients of `C = A ⋉ B`, accumulated into `da` and `db`.
#[allow(clippy::too_many_arguments)]
pub fn stp_backward<T: Real>(
    a: &[T],
    h: usize,
    b: &[T],
    p: usize,
    q: usize,
    n: usize,
    dc: &[T],
    da: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    if let Some(da) = da {
        for hh in 0..h {
            let dc_row = &dc[hh * n * q..(hh + 1) * n * q];
            let da_row = &mut da[hh * n * p..(hh + 1) * n * p];
            for pp in 0..p {
                let b_row = &b[pp * q..(pp + 1) * q];
                let da_blk = &mut da_row[pp * n..(pp + 1) * n];
                for (qq, &bv) in b_row.iter().enumerate() {
                    let dc_blk = &dc_row[qq * n..(qq + 1) * n];
                    for (d, &g) in da_blk.iter_mut().zip(dc_blk) {
                        *d += g * bv;
                    }
                }
            }
        }
    }
    if let Some(db) = db {
        for hh in 0..h {
            let a_row = &a[hh * n * p..(hh + 1) * n * p];
            let dc_row = &dc[hh * n * q..(hh + 1) * n * q];
            for pp in 0..p {
                let a_blk = &a_row[pp * n..(pp + 1) * n];
                let db_row = &mut db[pp * q..(pp + 1) * q];
                for (qq, d) in db_row.iter_mut().enumerate() {
                    let dc_blk = &dc_row[qq * n..(qq + 1) * n];
                    let mut acc = T::zero();
                    for (&av, &g) in a_blk.iter().zip(dc_blk) {
                        acc += av * g;
                    }
                    *d += acc;
                }
            }
        }
    }
}

/// Checked matrix form: `a` is `h x cols`, `b` is `p x q`, `cols` must equal `n * p`.
pub fn stp_matrix<T: Real>(a: &Tensor<T>, b: &Tensor<T>, n: usize) -> Result<Tensor<T>> {
    let (h, cols) = a.dims2();
    let (p, q) = b.dims2();
    if n == 0 || cols != n * p {
        return Err(Error::shape(
            "stp",
            format!(
                "left {:?} needs {} columns = n({n}) x right rows({p})",
                a.shape(),
                n * p
            ),
        ));
    }
    Tensor::matrix(h, n * q, stp(a.data(), h, b.data(), p, q, n))
}
