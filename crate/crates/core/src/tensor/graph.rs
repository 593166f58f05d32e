//! Graph nodes and the reverse-mode sweep.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use super::kernels;
use super::{AffineMatrix, Element, Tensor, TensorError};

/// Primitive kind plus whatever the backward rule needs beyond the inputs.
pub(crate) enum Op<T: Element> {
    Add,
    Mul,
    Div,
    Matmul,
    Conv2d {
        pad: usize,
    },
    MaxPool2d {
        /// Flat input index of the selected element, per output element.
        argmax: Arc<Vec<u32>>,
    },
    Relu,
    Sqrt,
    Acos,
    Sigmoid,
    Clamp {
        lo: T,
        hi: T,
    },
    Reshape,
    SumAll,
    MeanAll,
    Pad2d {
        pad: usize,
    },
    WarpAffine {
        matrix: AffineMatrix,
        out_hw: (usize, usize),
    },
    SoftmaxXent {
        probs: Arc<Vec<T>>,
        labels: Arc<Vec<u32>>,
    },
}

/// One interior vertex of the autodiff graph: the primitive that produced a
/// tensor and the tensors it consumed, in order.
pub(crate) struct Node<T: Element> {
    pub op: Op<T>,
    pub inputs: Vec<Tensor<T>>,
}

/// Leaf gradients returned by [`backward`], keyed by tensor identity.
pub struct Gradients<T: Element> {
    map: HashMap<u64, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of the loss with respect to `leaf`, if the leaf was reachable.
    pub fn get(&self, leaf: &Tensor<T>) -> Option<&Tensor<T>> {
        self.map.get(&leaf.id())
    }

    pub fn contains(&self, leaf: &Tensor<T>) -> bool {
        self.map.contains_key(&leaf.id())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Reverse-mode sweep from a scalar loss.
///
/// Visits each reachable graph node exactly once in reverse topological
/// order and returns the gradient for every tracked leaf. Leaves that the
/// loss does not depend on are simply absent from the map (a zero
/// gradient).
pub fn backward<T: Element>(loss: &Tensor<T>) -> Result<Gradients<T>, TensorError> {
    if loss.len() != 1 {
        return Err(TensorError::Contract(format!(
            "backward requires a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }

    // Post-order DFS over interior nodes; reversed it yields parents first.
    let order = topo_order(loss);

    let mut adjoints: HashMap<u64, Vec<T>> = HashMap::new();
    adjoints.insert(loss.id(), vec![T::one()]);

    let mut leaf_grads: HashMap<u64, (Vec<T>, Vec<usize>)> = HashMap::new();
    if loss.requires_grad() && loss.node().is_none() {
        leaf_grads.insert(loss.id(), (vec![T::one()], loss.shape().to_vec()));
    }

    for t in order.iter().rev() {
        let Some(g) = adjoints.remove(&t.id()) else {
            continue;
        };
        let node = t.node().expect("topo order contains interior nodes only");
        let needs: Vec<bool> = node.inputs.iter().map(Tensor::tracks_grad).collect();
        let input_grads = vjp(&node.op, &node.inputs, t, &g, &needs);
        for (input, maybe_grad) in node.inputs.iter().zip(input_grads) {
            let Some(gi) = maybe_grad else { continue };
            debug_assert_eq!(gi.len(), input.len());
            if input.node().is_some() {
                accumulate(&mut adjoints, input.id(), gi);
            } else if input.requires_grad() {
                match leaf_grads.entry(input.id()) {
                    std::collections::hash_map::Entry::Occupied(mut e) => {
                        for (dst, src) in e.get_mut().0.iter_mut().zip(&gi) {
                            *dst += *src;
                        }
                    }
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert((gi, input.shape().to_vec()));
                    }
                }
            }
        }
    }

    let map = leaf_grads
        .into_iter()
        .map(|(id, (data, shape))| {
            let t = Tensor::from_vec(data, &shape).expect("gradient shape matches leaf");
            (id, t)
        })
        .collect();
    Ok(Gradients { map })
}

fn accumulate<T: Element>(adjoints: &mut HashMap<u64, Vec<T>>, id: u64, g: Vec<T>) {
    match adjoints.entry(id) {
        std::collections::hash_map::Entry::Occupied(mut e) => {
            for (dst, src) in e.get_mut().iter_mut().zip(&g) {
                *dst += *src;
            }
        }
        std::collections::hash_map::Entry::Vacant(e) => {
            e.insert(g);
        }
    }
}

fn topo_order<T: Element>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut order = Vec::new();
    if root.node().is_none() {
        return order;
    }
    let mut visited: HashSet<u64> = HashSet::new();
    visited.insert(root.id());
    let mut stack: Vec<(Tensor<T>, usize)> = vec![(root.clone(), 0)];
    while let Some((t, i)) = stack.pop() {
        let n_inputs = t.node().map_or(0, |n| n.inputs.len());
        if i < n_inputs {
            let child = t.node().unwrap().inputs[i].clone();
            stack.push((t, i + 1));
            if child.node().is_some() && visited.insert(child.id()) {
                stack.push((child, 0));
            }
        } else {
            order.push(t);
        }
    }
    order
}

/// Vector-Jacobian product: gradient of the loss w.r.t. each input of `op`,
/// given the gradient `g` w.r.t. its output. Entries of `needs` that are
/// false may be returned as `None` without being computed.
fn vjp<T: Element>(
    op: &Op<T>,
    inputs: &[Tensor<T>],
    output: &Tensor<T>,
    g: &[T],
    needs: &[bool],
) -> Vec<Option<Vec<T>>> {
    let two = T::from_f64(2.0);
    match op {
        Op::Add => {
            let (a, b) = (&inputs[0], &inputs[1]);
            let da = needs[0].then(|| kernels::reduce_to_shape(g, output.shape(), a.shape()));
            let db = needs[1].then(|| kernels::reduce_to_shape(g, output.shape(), b.shape()));
            vec![da, db]
        }
        Op::Mul => {
            let (a, b) = (&inputs[0], &inputs[1]);
            let da = needs[0].then(|| {
                let ga = kernels::broadcast_zip(g, output.shape(), b.data(), b.shape(), output.shape(), |gv, bv| gv * bv);
                kernels::reduce_to_shape(&ga, output.shape(), a.shape())
            });
            let db = needs[1].then(|| {
                let gb = kernels::broadcast_zip(g, output.shape(), a.data(), a.shape(), output.shape(), |gv, av| gv * av);
                kernels::reduce_to_shape(&gb, output.shape(), b.shape())
            });
            vec![da, db]
        }
        Op::Div => {
            let (a, b) = (&inputs[0], &inputs[1]);
            let da = needs[0].then(|| {
                let ga = kernels::broadcast_zip(g, output.shape(), b.data(), b.shape(), output.shape(), |gv, bv| gv / bv);
                kernels::reduce_to_shape(&ga, output.shape(), a.shape())
            });
            let db = needs[1].then(|| {
                // d/db (a/b) = -a / b^2 = -y / b
                let gy: Vec<T> = g.iter().zip(output.data()).map(|(&gv, &y)| gv * y).collect();
                let gb = kernels::broadcast_zip(&gy, output.shape(), b.data(), b.shape(), output.shape(), |gyv, bv| {
                    -gyv / bv
                });
                kernels::reduce_to_shape(&gb, output.shape(), b.shape())
            });
            vec![da, db]
        }
        Op::Matmul => {
            let (a, b) = (&inputs[0], &inputs[1]);
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            let da = needs[0].then(|| {
                // dA = g · B^T  [m,k]
                let mut da = vec![T::zero(); m * k];
                unsafe {
                    T::gemm(
                        m, n, k,
                        T::one(),
                        g.as_ptr(), n as isize, 1,
                        b.data().as_ptr(), 1, n as isize, // B^T via strides
                        T::zero(),
                        da.as_mut_ptr(), k as isize, 1,
                    );
                }
                da
            });
            let db = needs[1].then(|| {
                // dB = A^T · g  [k,n]
                let mut db = vec![T::zero(); k * n];
                unsafe {
                    T::gemm(
                        k, m, n,
                        T::one(),
                        a.data().as_ptr(), 1, k as isize, // A^T via strides
                        g.as_ptr(), n as isize, 1,
                        T::zero(),
                        db.as_mut_ptr(), n as isize, 1,
                    );
                }
                db
            });
            vec![da, db]
        }
        Op::Conv2d { pad } => {
            let (x, w) = (&inputs[0], &inputs[1]);
            let (dx, dw) = conv2d_backward(x, w, output.shape(), g, *pad, needs[0], needs[1]);
            vec![dx, dw]
        }
        Op::MaxPool2d { argmax } => {
            let x = &inputs[0];
            let mut dx = vec![T::zero(); x.len()];
            for (&src, &gv) in argmax.iter().zip(g) {
                dx[src as usize] += gv;
            }
            vec![Some(dx)]
        }
        Op::Relu => {
            let x = &inputs[0];
            let dx = x
                .data()
                .iter()
                .zip(g)
                .map(|(&xv, &gv)| if xv > T::zero() { gv } else { T::zero() })
                .collect();
            vec![Some(dx)]
        }
        Op::Sqrt => {
            let dx = output
                .data()
                .iter()
                .zip(g)
                .map(|(&y, &gv)| gv / (two * y))
                .collect();
            vec![Some(dx)]
        }
        Op::Acos => {
            let x = &inputs[0];
            let dx = x
                .data()
                .iter()
                .zip(g)
                .map(|(&xv, &gv)| -gv / (T::one() - xv * xv).sqrt())
                .collect();
            vec![Some(dx)]
        }
        Op::Sigmoid => {
            let dx = output
                .data()
                .iter()
                .zip(g)
                .map(|(&y, &gv)| gv * y * (T::one() - y))
                .collect();
            vec![Some(dx)]
        }
        Op::Clamp { lo, hi } => {
            let x = &inputs[0];
            let dx = x
                .data()
                .iter()
                .zip(g)
                .map(|(&xv, &gv)| if xv > *lo && xv < *hi { gv } else { T::zero() })
                .collect();
            vec![Some(dx)]
        }
        Op::Reshape => vec![Some(g.to_vec())],
        Op::SumAll => {
            let x = &inputs[0];
            vec![Some(vec![g[0]; x.len()])]
        }
        Op::MeanAll => {
            let x = &inputs[0];
            let scale = g[0] / T::from_f64(x.len() as f64);
            vec![Some(vec![scale; x.len()])]
        }
        Op::Pad2d { pad } => {
            let x = &inputs[0];
            let (n, c, h, w) = nchw(x.shape());
            let (ph, pw) = (h + 2 * pad, w + 2 * pad);
            let mut dx = vec![T::zero(); x.len()];
            for img in 0..n * c {
                let src = &g[img * ph * pw..(img + 1) * ph * pw];
                let dst = &mut dx[img * h * w..(img + 1) * h * w];
                for y in 0..h {
                    let row = &src[(y + pad) * pw + pad..(y + pad) * pw + pad + w];
                    dst[y * w..(y + 1) * w].copy_from_slice(row);
                }
            }
            vec![Some(dx)]
        }
        Op::WarpAffine { matrix, out_hw } => {
            let x = &inputs[0];
            let (n, c, h, w) = nchw(x.shape());
            let (oh, ow) = *out_hw;
            let mut dx = vec![T::zero(); x.len()];
            for img in 0..n * c {
                kernels::warp_plane_backward(
                    &g[img * oh * ow..(img + 1) * oh * ow],
                    h,
                    w,
                    oh,
                    ow,
                    matrix,
                    &mut dx[img * h * w..(img + 1) * h * w],
                );
            }
            vec![Some(dx)]
        }
        Op::SoftmaxXent { probs, labels } => {
            let batch = labels.len();
            let k = probs.len() / batch;
            let scale = g[0] / T::from_f64(batch as f64);
            let mut dx = Vec::with_capacity(probs.len());
            for (i, &p) in probs.iter().enumerate() {
                let row = i / k;
                let col = i % k;
                let target = if labels[row] as usize == col { T::one() } else { T::zero() };
                dx.push((p - target) * scale);
            }
            vec![Some(dx)]
        }
    }
}

fn nchw(shape: &[usize]) -> (usize, usize, usize, usize) {
    (shape[0], shape[1], shape[2], shape[3])
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    out_shape: &[usize],
    g: &[T],
    pad: usize,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (n, c, h, wd) = nchw(x.shape());
    let (o, _, kh, kw) = nchw(w.shape());
    let (oh, ow) = (out_shape[2], out_shape[3]);
    let hw = oh * ow;
    let ckk = c * kh * kw;
    let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
    let mut dw = need_dw.then(|| vec![T::zero(); w.len()]);
    let mut col = vec![T::zero(); ckk * hw];
    let mut dcol = vec![T::zero(); ckk * hw];
    for img in 0..n {
        let gi = &g[img * o * hw..(img + 1) * o * hw];
        if let Some(dw) = dw.as_mut() {
            let xi = &x.data()[img * c * h * wd..(img + 1) * c * h * wd];
            kernels::im2col(xi, c, h, wd, kh, kw, pad, &mut col);
            unsafe {
                // dW += g_i [O, HW] x col^T [HW, CKK]
                T::gemm(
                    o, hw, ckk,
                    T::one(),
                    gi.as_ptr(), hw as isize, 1,
                    col.as_ptr(), 1, hw as isize,
                    T::one(),
                    dw.as_mut_ptr(), ckk as isize, 1,
                );
            }
        }
        if let Some(dx) = dx.as_mut() {
            unsafe {
                // dcol = W^T [CKK, O] x g_i [O, HW]
                T::gemm(
                    ckk, o, hw,
                    T::one(),
                    w.data().as_ptr(), 1, ckk as isize,
                    gi.as_ptr(), hw as isize, 1,
                    T::zero(),
                    dcol.as_mut_ptr(), hw as isize, 1,
                );
            }
            kernels::col2im_add(
                &dcol,
                c,
                h,
                wd,
                kh,
                kw,
                pad,
                &mut dx[img * c * h * wd..(img + 1) * c * h * wd],
            );
        }
    }
    (dx, dw)
}
