//! Slice-level numeric loops shared by the tape and by tape-free inference.

use super::Real;

/// `out[m,n] += a[m,k] · b[k,n]`.
pub fn gemm_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aik == T::zero() {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}

/// `out[k,n] += a[m,k]ᵀ · g[m,n]`.
pub(crate) fn gemm_at_acc<T: Real>(a: &[T], g: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for (kk, &aik) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aik == T::zero() {
                continue;
            }
            let orow = &mut out[kk * n..(kk + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += aik * gv;
            }
        }
    }
}

/// `out[m,k] += g[m,n] · b[k,n]ᵀ`.
pub(crate) fn gemm_bt_acc<T: Real>(g: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for (kk, o) in orow.iter_mut().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            let mut s = T::zero();
            for (&gv, &bv) in grow.iter().zip(brow) {
                s += gv * bv;
            }
            *o += s;
        }
    }
}

pub fn softmax_in_place<T: Real>(z: &mut [T]) {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Causal dilated convolution over `[B, T, Cin]` into `[B, T, Cout]`
/// (accumulating). Tap `k` reads position `t - k·dilation`; earlier positions
/// read as zero.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_forward<T: Real>(
    x: &[T],
    w: &[T],
    bias: &[T],
    out: &mut [T],
    batch: usize,
    steps: usize,
    cin: usize,
    cout: usize,
    kernel: usize,
    dilation: usize,
) {
    for b in 0..batch {
        for t in 0..steps {
            let o = &mut out[(b * steps + t) * cout..(b * steps + t + 1) * cout];
            for (ov, &bv) in o.iter_mut().zip(bias) {
                *ov += bv;
            }
            for k in 0..kernel {
                let Some(src) = t.checked_sub(k * dilation) else { break };
                let xr = &x[(b * steps + src) * cin..(b * steps + src + 1) * cin];
                gemm_acc(xr, &w[k * cin * cout..(k + 1) * cin * cout], o, 1, cin, cout);
            }
        }
    }
}
