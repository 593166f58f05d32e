//! Shared numeric kernels: im2col/col2im, bilinear warping, broadcasting.
//!
//! Everything here is plain buffer math with no graph bookkeeping; the ops
//! layer and the data-augmentation path both call into it.

use super::{AffineMatrix, Element};

/// Expand one `[C, H, W]` image into a `[C*kh*kw, H*W]` patch matrix for a
/// stride-1 "same" convolution with zero padding.
pub(crate) fn im2col<T: Element>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    col: &mut [T],
) {
    let hw = h * w;
    debug_assert_eq!(x.len(), c * hw);
    debug_assert_eq!(col.len(), c * kh * kw * hw);
    for ci in 0..c {
        let xc = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * hw;
                for oy in 0..h {
                    let iy = oy as isize + ky as isize - pad as isize;
                    let dst = &mut col[row + oy * w..row + (oy + 1) * w];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src_row = &xc[iy as usize * w..(iy as usize + 1) * w];
                    // input x index: ix = ox + kx - pad; valid ox range below
                    let shift = kx as isize - pad as isize;
                    let ox_lo = (-shift).max(0) as usize;
                    let ox_hi = ((w as isize - shift).min(w as isize)).max(0) as usize;
                    dst[..ox_lo].fill(T::zero());
                    dst[ox_hi..].fill(T::zero());
                    if ox_hi > ox_lo {
                        let src_lo = (ox_lo as isize + shift) as usize;
                        dst[ox_lo..ox_hi]
                            .copy_from_slice(&src_row[src_lo..src_lo + (ox_hi - ox_lo)]);
                    }
                }
            }
        }
    }
}

/// Scatter-add the transpose of [`im2col`]: accumulate a `[C*kh*kw, H*W]`
/// patch-gradient matrix back into a `[C, H, W]` image gradient.
pub(crate) fn col2im_add<T: Element>(
    col: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    dx: &mut [T],
) {
    let hw = h * w;
    debug_assert_eq!(dx.len(), c * hw);
    for ci in 0..c {
        let xc = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * hw;
                for oy in 0..h {
                    let iy = oy as isize + ky as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &col[row + oy * w..row + (oy + 1) * w];
                    let shift = kx as isize - pad as isize;
                    let ox_lo = (-shift).max(0) as usize;
                    let ox_hi = ((w as isize - shift).min(w as isize)).max(0) as usize;
                    for ox in ox_lo..ox_hi {
                        let ix = (ox as isize + shift) as usize;
                        xc[iy as usize * w + ix] += src[ox];
                    }
                }
            }
        }
    }
}

/// Compose `after ∘ before` (apply `before`'s output as `after`'s input
/// when mapping output coords to source coords, i.e. sampling first through
/// `before`, then `after`).
pub(crate) fn compose_affine(after: &AffineMatrix, before: &AffineMatrix) -> AffineMatrix {
    // out -> before -> after
    let [a0, a1, a2, a3, a4, a5] = *before;
    let [b0, b1, b2, b3, b4, b5] = *after;
    [
        b0 * a0 + b1 * a3,
        b0 * a1 + b1 * a4,
        b0 * a2 + b1 * a5 + b2,
        b3 * a0 + b4 * a3,
        b3 * a1 + b4 * a4,
        b3 * a2 + b4 * a5 + b5,
    ]
}

/// Bilinear sample of one `[H, W]` plane through an affine coordinate map.
/// Samples falling outside the plane take `fill`.
pub(crate) fn warp_plane<T: Element>(
    src: &[T],
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
    m: &AffineMatrix,
    fill: T,
    out: &mut [T],
) {
    debug_assert_eq!(src.len(), h * w);
    debug_assert_eq!(out.len(), out_h * out_w);
    let at = |y: isize, x: isize| -> T {
        if y < 0 || y >= h as isize || x < 0 || x >= w as isize {
            fill
        } else {
            src[y as usize * w + x as usize]
        }
    };
    for oy in 0..out_h {
        for ox in 0..out_w {
            let sx = m[0] * ox as f64 + m[1] * oy as f64 + m[2];
            let sy = m[3] * ox as f64 + m[4] * oy as f64 + m[5];
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = T::from_f64(sx - x0);
            let fy = T::from_f64(sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let one = T::one();
            let v = (one - fy) * ((one - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                + fy * ((one - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
            out[oy * out_w + ox] = v;
        }
    }
}

/// Adjoint of [`warp_plane`] with respect to the source plane: scatter the
/// output gradient through the same bilinear weights. The fill value is a
/// constant, so out-of-bounds corners contribute nothing.
pub(crate) fn warp_plane_backward<T: Element>(
    grad_out: &[T],
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
    m: &AffineMatrix,
    grad_src: &mut [T],
) {
    debug_assert_eq!(grad_src.len(), h * w);
    for oy in 0..out_h {
        for ox in 0..out_w {
            let g = grad_out[oy * out_w + ox];
            let sx = m[0] * ox as f64 + m[1] * oy as f64 + m[2];
            let sy = m[3] * ox as f64 + m[4] * oy as f64 + m[5];
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = T::from_f64(sx - x0);
            let fy = T::from_f64(sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let one = T::one();
            let mut add = |y: isize, x: isize, wgt: T| {
                if y >= 0 && y < h as isize && x >= 0 && x < w as isize {
                    grad_src[y as usize * w + x as usize] += g * wgt;
                }
            };
            add(y0, x0, (one - fy) * (one - fx));
            add(y0, x0 + 1, (one - fy) * fx);
            add(y0 + 1, x0, fy * (one - fx));
            add(y0 + 1, x0 + 1, fy * fx);
        }
    }
}

/// Right-aligned broadcast of two shapes, NumPy-style.
pub(crate) fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da == db {
            out[i] = da;
        } else if da == 1 {
            out[i] = db;
        } else if db == 1 {
            out[i] = da;
        } else {
            return None;
        }
    }
    Some(out)
}

/// Element strides for iterating a tensor of `shape` as if it had
/// `out_shape` (zero stride on broadcast axes).
pub(crate) fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - shape.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        strides[offset + i] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Apply `f` elementwise over the broadcast of `a` and `b`.
pub(crate) fn broadcast_zip<T: Element>(
    a: &[T],
    a_shape: &[usize],
    b: &[T],
    b_shape: &[usize],
    out_shape: &[usize],
    f: impl Fn(T, T) -> T,
) -> Vec<T> {
    let numel: usize = out_shape.iter().product();
    // Fast path: identical shapes.
    if a_shape == b_shape {
        return a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect();
    }
    // Fast path: `b` repeats over the trailing axes of `a`, e.g. [N, F] + [F].
    // Covers the bias-add in every linear layer.
    if a_shape == out_shape && is_suffix(b_shape, out_shape) && a.len() % b.len() == 0 {
        let mut out = Vec::with_capacity(numel);
        for chunk in a.chunks_exact(b.len()) {
            out.extend(chunk.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)));
        }
        return out;
    }
    // General case: odometer over the output index space.
    let sa = broadcast_strides(a_shape, out_shape);
    let sb = broadcast_strides(b_shape, out_shape);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut ia = 0usize;
    let mut ib = 0usize;
    let mut out = Vec::with_capacity(numel);
    for _ in 0..numel {
        out.push(f(a[ia], b[ib]));
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            ia += sa[ax];
            ib += sb[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
            ia -= sa[ax] * out_shape[ax];
            ib -= sb[ax] * out_shape[ax];
        }
    }
    out
}

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && &big[big.len() - small.len()..] == small
}

/// Sum `grad` (shaped `grad_shape`) down to `target_shape`, undoing a
/// broadcast.
pub(crate) fn reduce_to_shape<T: Element>(
    grad: &[T],
    grad_shape: &[usize],
    target_shape: &[usize],
) -> Vec<T> {
    if grad_shape == target_shape {
        return grad.to_vec();
    }
    let numel: usize = target_shape.iter().product();
    let mut out = vec![T::zero(); numel];
    let st = broadcast_strides(target_shape, grad_shape);
    let rank = grad_shape.len();
    let mut idx = vec![0usize; rank];
    let mut it = 0usize;
    for &g in grad {
        out[it] += g;
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            it += st[ax];
            if idx[ax] < grad_shape[ax] {
                break;
            }
            idx[ax] = 0;
            it -= st[ax] * grad_shape[ax];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes_basic() {
        assert_eq!(broadcast_shapes(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shapes(&[4, 1, 3], &[2, 1]), Some(vec![4, 2, 3]));
        assert_eq!(broadcast_shapes(&[2, 3], &[4]), None);
        assert_eq!(broadcast_shapes(&[1], &[5, 2]), Some(vec![5, 2]));
    }

    #[test]
    fn broadcast_zip_matches_manual_bias_add() {
        let a = vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = vec![10.0f64, 20.0, 30.0];
        let out = broadcast_zip(&a, &[2, 3], &b, &[3], &[2, 3], |x, y| x + y);
        assert_eq!(out, vec![11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
    }

    #[test]
    fn reduce_to_shape_sums_broadcast_axes() {
        let g = vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(reduce_to_shape(&g, &[2, 3], &[3]), vec![5.0, 7.0, 9.0]);
        assert_eq!(reduce_to_shape(&g, &[2, 3], &[2, 1]), vec![6.0, 15.0]);
        assert_eq!(reduce_to_shape(&g, &[2, 3], &[1]), vec![21.0]);
    }

    #[test]
    fn im2col_identity_kernel_position() {
        // 1x1 kernel, pad 0: col equals the image itself.
        let x: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let mut col = vec![0.0; 12];
        im2col(&x, 1, 3, 4, 1, 1, 0, &mut col);
        assert_eq!(col, x);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)> for random buffers.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (c, h, w, kh, kw, pad) = (2, 5, 4, 3, 3, 1);
        let x: Vec<f64> = (0..c * h * w).map(|_| rng.gen::<f64>() - 0.5).collect();
        let cvec: Vec<f64> = (0..c * kh * kw * h * w).map(|_| rng.gen::<f64>() - 0.5).collect();
        let mut col = vec![0.0; cvec.len()];
        im2col(&x, c, h, w, kh, kw, pad, &mut col);
        let lhs: f64 = col.iter().zip(&cvec).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im_add(&cvec, c, h, w, kh, kw, pad, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn warp_identity_matrix_is_identity() {
        let src: Vec<f64> = (0..20).map(|v| v as f64).collect();
        let mut out = vec![0.0; 20];
        warp_plane(&src, 4, 5, 4, 5, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0], -1.0, &mut out);
        assert_eq!(out, src);
    }
}
