//! Forward and backward kernels for the operator set, on plain slices.

use super::{Scalar, Tensor4};

/// Unfolds one `c x h x w` sample into a `(c*9) x (h*w)` patch matrix for a
/// 3x3 kernel with zero padding 1.
pub(crate) fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    debug_assert_eq!(cols.len(), c * 9 * hw);
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ch * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    // Output column x reads input column x + kx - 1.
                    match kx {
                        0 => {
                            dst[0] = T::ZERO;
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::ZERO;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds patch gradients back into `dx`.
pub(crate) fn col2im_add<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut dx[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ch * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            for (d, &s) in dst[..w - 1].iter_mut().zip(&src[1..]) {
                                *d += s;
                            }
                        }
                        1 => {
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                        _ => {
                            for (d, &s) in dst[1..].iter_mut().zip(&src[..w - 1]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 3x3 same-padding cross-correlation plus bias.
pub(crate) fn conv2d_forward<T: Scalar>(
    x: &Tensor4<T>,
    weight: &Tensor4<T>,
    bias: &Tensor4<T>,
) -> Tensor4<T> {
    let [n, ci, h, w] = x.shape();
    let co = weight.shape()[0];
    let hw = h * w;
    let mut out = Tensor4::zeros([n, co, h, w]);
    let mut cols = vec![T::ZERO; ci * 9 * hw];
    let b = bias.values();
    for s in 0..n {
        im2col(x.sample(s), ci, h, w, &mut cols);
        let o = &mut out.values_mut()[s * co * hw..(s + 1) * co * hw];
        for (oc, plane) in o.chunks_exact_mut(hw).enumerate() {
            plane.fill(b[oc]);
        }
        T::gemm(co, ci * 9, hw, T::ONE, weight.values(), false, &cols, false, T::ONE, o);
    }
    out
}

/// Gradients of [`conv2d_forward`]: `(d_input, d_weight, d_bias)`.
/// `d_input` is only computed when `need_input` is set.
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &Tensor4<T>,
    weight: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    need_input: bool,
) -> (Option<Tensor4<T>>, Tensor4<T>, Tensor4<T>) {
    let [n, ci, h, w] = x.shape();
    let co = weight.shape()[0];
    let hw = h * w;
    let k = ci * 9;
    let mut dw = Tensor4::zeros(weight.shape());
    let mut db = Tensor4::zeros([co, 1, 1, 1]);
    let mut dx = need_input.then(|| Tensor4::zeros(x.shape()));
    let mut cols = vec![T::ZERO; k * hw];
    let mut dcols = if need_input { vec![T::ZERO; k * hw] } else { Vec::new() };
    for s in 0..n {
        let g = grad_out.sample(s);
        for (oc, plane) in g.chunks_exact(hw).enumerate() {
            db.values_mut()[oc] += plane.iter().copied().sum::<T>();
        }
        im2col(x.sample(s), ci, h, w, &mut cols);
        // dW[co, k] += g[co, hw] * cols[k, hw]^T
        T::gemm(co, hw, k, T::ONE, g, false, &cols, true, T::ONE, dw.values_mut());
        if let Some(dx) = dx.as_mut() {
            // dcols[k, hw] = W[co, k]^T * g[co, hw]
            T::gemm(k, co, hw, T::ONE, weight.values(), true, g, false, T::ZERO, &mut dcols);
            let sl = ci * hw;
            col2im_add(&dcols, ci, h, w, &mut dx.values_mut()[s * sl..(s + 1) * sl]);
        }
    }
    (dx, dw, db)
}

/// 2x2 stride-2 max pooling. Returns the output and, per output cell, the
/// flat input index that won. Ties go to the first cell in row-major
/// order within the window.
pub(crate) fn maxpool2_forward<T: Scalar>(x: &Tensor4<T>) -> (Tensor4<T>, Vec<u32>) {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    let xv = x.values();
    let ov = out.values_mut();
    let mut k = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let i0 = base + 2 * y * w + 2 * xx;
                let mut best = i0;
                for cand in [i0 + 1, i0 + w, i0 + w + 1] {
                    if xv[cand] > xv[best] {
                        best = cand;
                    }
                }
                ov[k] = xv[best];
                arg.push(best as u32);
                k += 1;
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool2_backward<T: Scalar>(
    in_shape: [usize; 4],
    argmax: &[u32],
    grad_out: &Tensor4<T>,
) -> Tensor4<T> {
    let mut dx = Tensor4::zeros(in_shape);
    let d = dx.values_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.values()) {
        d[i as usize] += g;
    }
    dx
}

pub(crate) fn upsample2_forward<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    let xv = x.values();
    let ov = out.values_mut();
    for plane in 0..n * c {
        for y in 0..oh {
            let src = &xv[(plane * h + y / 2) * w..][..w];
            let dst = &mut ov[(plane * oh + y) * ow..][..ow];
            for (xx, d) in dst.iter_mut().enumerate() {
                *d = src[xx / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward<T: Scalar>(grad_out: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, oh, ow] = grad_out.shape();
    let (h, w) = (oh / 2, ow / 2);
    let mut dx = Tensor4::zeros([n, c, h, w]);
    let g = grad_out.values();
    let d = dx.values_mut();
    for plane in 0..n * c {
        for y in 0..oh {
            let src = &g[(plane * oh + y) * ow..][..ow];
            let dst = &mut d[(plane * h + y / 2) * w..][..w];
            for (xx, &v) in src.iter().enumerate() {
                dst[xx / 2] += v;
            }
        }
    }
    dx
}

pub(crate) fn concat_forward<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Tensor4<T> {
    let [n, c1, h, w] = a.shape();
    let c2 = b.shape()[1];
    let mut data = Vec::with_capacity(n * (c1 + c2) * h * w);
    for s in 0..n {
        data.extend_from_slice(a.sample(s));
        data.extend_from_slice(b.sample(s));
    }
    Tensor4::new([n, c1 + c2, h, w], data).expect("concat shape")
}

/// Splits a concatenated gradient back into its two channel groups.
pub(crate) fn concat_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    c1: usize,
) -> (Tensor4<T>, Tensor4<T>) {
    let [n, c, h, w] = grad_out.shape();
    let c2 = c - c1;
    let (la, lb) = (c1 * h * w, c2 * h * w);
    let mut da = Vec::with_capacity(n * la);
    let mut db = Vec::with_capacity(n * lb);
    for s in 0..n {
        let g = grad_out.sample(s);
        da.extend_from_slice(&g[..la]);
        db.extend_from_slice(&g[la..]);
    }
    (
        Tensor4::new([n, c1, h, w], da).expect("split shape"),
        Tensor4::new([n, c2, h, w], db).expect("split shape"),
    )
}
