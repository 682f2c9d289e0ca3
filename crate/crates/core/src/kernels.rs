//! Raw convolution kernels on channel-major image buffers with circular
//! (periodic) padding.

use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        ((self.h + 2 * self.pad - self.k) / self.stride + 1, (self.w + 2 * self.pad - self.k) / self.stride + 1)
    }

    pub fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

#[inline]
fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

/// Unfold one image `[cin, h, w]` into `[cin·k·k, ho·wo]`.
pub(crate) fn im2col<T: Real>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let (ho, wo) = g.out_hw();
    let mut row = 0;
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let dst = &mut col[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = wrap((oy * g.stride + ky) as isize - g.pad as isize, g.h);
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    if g.stride == 1 {
                        let start = wrap(kx as isize - g.pad as isize, g.w);
                        let first = (g.w - start).min(wo);
                        drow[..first].copy_from_slice(&src[start..start + first]);
                        let mut done = first;
                        while done < wo {
                            let take = (wo - done).min(g.w);
                            drow[done..done + take].copy_from_slice(&src[..take]);
                            done += take;
                        }
                    } else {
                        for (ox, d) in drow.iter_mut().enumerate() {
                            *d = src[wrap((ox * g.stride + kx) as isize - g.pad as isize, g.w)];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &v) in dst.iter_mut().zip(src) {
        *d += v;
    }
}

/// Adjoint of [`im2col`]: accumulate `col` back into `dx`.
pub(crate) fn col2im<T: Real>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let (ho, wo) = g.out_hw();
    let mut row = 0;
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let src = &col[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = wrap((oy * g.stride + ky) as isize - g.pad as isize, g.h);
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let srow = &src[oy * wo..(oy + 1) * wo];
                    if g.stride == 1 {
                        let start = wrap(kx as isize - g.pad as isize, g.w);
                        let first = (g.w - start).min(wo);
                        add_into(&mut dst[start..start + first], &srow[..first]);
                        let mut done = first;
                        while done < wo {
                            let take = (wo - done).min(g.w);
                            add_into(&mut dst[..take], &srow[done..done + take]);
                            done += take;
                        }
                    } else {
                        for (ox, &v) in srow.iter().enumerate() {
                            dst[wrap((ox * g.stride + kx) as isize - g.pad as isize, g.w)] += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Forward convolution of a batch. `out` is `[n, cout, ho, wo]`.
pub(crate) fn conv_forward<T: Real>(
    x: &[T],
    n: usize,
    g: &ConvGeom,
    weight: &[T],
    bias: Option<&[T]>,
    cout: usize,
    out: &mut [T],
    scratch: &mut alloc::vec::Vec<T>,
) {
    let (ho, wo) = g.out_hw();
    let p = ho * wo;
    let kk = g.col_rows();
    let in_sz = g.cin * g.h * g.w;
    if !g.is_pointwise() {
        scratch.resize(kk * p, T::zero());
    }
    for s in 0..n {
        let xs = &x[s * in_sz..(s + 1) * in_sz];
        let col: &[T] = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, g, scratch);
            scratch
        };
        let os = &mut out[s * cout * p..(s + 1) * cout * p];
        match bias {
            Some(b) => {
                for (co, chunk) in os.chunks_mut(p).enumerate() {
                    chunk.fill(b[co]);
                }
            }
            None => os.fill(T::zero()),
        }
        T::gemm(cout, kk, p, T::one(), weight, (kk as isize, 1), col, (p as isize, 1), T::one(), os, (p as isize, 1));
    }
}

/// `[cout, cin, k, k]` to `[cin, cout, k, k]` with both spatial axes reversed.
fn flip_transpose<T: Real>(weight: &[T], cout: usize, cin: usize, k: usize) -> alloc::vec::Vec<T> {
    let kk = k * k;
    let mut out = alloc::vec![T::zero(); weight.len()];
    for co in 0..cout {
        for ci in 0..cin {
            for t in 0..kk {
                out[(ci * cout + co) * kk + (kk - 1 - t)] = weight[(co * cin + ci) * kk + t];
            }
        }
    }
    out
}

/// Backward convolution. Accumulates into `dw`, `db` and (optionally) `dx`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Real>(
    x: &[T],
    n: usize,
    g: &ConvGeom,
    weight: &[T],
    cout: usize,
    dy: &[T],
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
    dx: Option<&mut [T]>,
    scratch: &mut alloc::vec::Vec<T>,
    dcol: &mut alloc::vec::Vec<T>,
) {
    let (ho, wo) = g.out_hw();
    let p = ho * wo;
    let kk = g.col_rows();
    let in_sz = g.cin * g.h * g.w;
    if let Some(db) = db {
        for s in 0..n {
            for (co, chunk) in dy[s * cout * p..(s + 1) * cout * p].chunks(p).enumerate() {
                db[co] += chunk.iter().copied().sum::<T>();
            }
        }
    }
    let mut dw = dw;
    let mut dx = dx;
    // For "same" stride-1 convolutions the input gradient is itself a
    // circular convolution of `dy` with the flipped, transposed kernel.
    let same = !g.is_pointwise() && g.stride == 1 && 2 * g.pad + 1 == g.k;
    let flipped = if same && dx.is_some() { flip_transpose(weight, cout, g.cin, g.k) } else { alloc::vec::Vec::new() };
    let tg = ConvGeom { cin: cout, h: ho, w: wo, k: g.k, stride: 1, pad: g.pad };
    if !g.is_pointwise() {
        scratch.resize(kk * p, T::zero());
        if dx.is_some() {
            dcol.resize(if same { tg.col_rows() * p } else { kk * p }, T::zero());
        }
    }
    for s in 0..n {
        let dys = &dy[s * cout * p..(s + 1) * cout * p];
        if let Some(dw) = dw.as_deref_mut() {
            let xs = &x[s * in_sz..(s + 1) * in_sz];
            let col: &[T] = if g.is_pointwise() {
                xs
            } else {
                im2col(xs, g, scratch);
                scratch
            };
            // dw[cout, kk] += dy[cout, p] · col[kk, p]^T
            T::gemm(cout, p, kk, T::one(), dys, (p as isize, 1), col, (1, p as isize), T::one(), dw, (kk as isize, 1));
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxs = &mut dx[s * in_sz..(s + 1) * in_sz];
            if g.is_pointwise() {
                T::gemm(kk, cout, p, T::one(), weight, (1, kk as isize), dys, (p as isize, 1), T::one(), dxs, (p as isize, 1));
            } else if same {
                let tk = tg.col_rows();
                im2col(dys, &tg, dcol);
                T::gemm(g.cin, tk, p, T::one(), &flipped, (tk as isize, 1), dcol, (p as isize, 1), T::one(), dxs, (p as isize, 1));
            } else {
                T::gemm(kk, cout, p, T::one(), weight, (1, kk as isize), dys, (p as isize, 1), T::zero(), dcol, (p as isize, 1));
                col2im(dcol, g, dxs);
            }
        }
    }
}
