//! Forward primitives. Each op validates shapes, computes its value, checks
//! the result is finite, and attaches a graph node when an input is tracked.

use std::sync::Arc;

use super::graph::{Node, Op};
use super::kernels;
use super::{ensure_finite, AffineMatrix, Element, Tensor, TensorError};

type OpResult<T> = Result<Tensor<T>, TensorError>;

fn attach<T: Element>(
    op: &'static str,
    data: Vec<T>,
    shape: Vec<usize>,
    node_op: Op<T>,
    inputs: Vec<Tensor<T>>,
) -> OpResult<T> {
    ensure_finite(op, &data)?;
    let node = inputs
        .iter()
        .any(Tensor::tracks_grad)
        .then(|| Node { op: node_op, inputs });
    Ok(Tensor::from_parts(data, shape, node))
}

fn binary_shape<T: Element>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<Vec<usize>, TensorError> {
    kernels::broadcast_shapes(a.shape(), b.shape()).ok_or_else(|| {
        TensorError::shape(
            op,
            format!("shapes {:?} and {:?} do not broadcast", a.shape(), b.shape()),
        )
    })
}

fn require_rank4<T: Element>(op: &'static str, t: &Tensor<T>) -> Result<(), TensorError> {
    if t.shape().len() != 4 {
        return Err(TensorError::shape(
            op,
            format!("expected rank-4 [N, C, H, W] input, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

impl<T: Element> Tensor<T> {
    /// Elementwise sum with broadcasting.
    pub fn add(&self, other: &Tensor<T>) -> OpResult<T> {
        let shape = binary_shape("add", self, other)?;
        let data = kernels::broadcast_zip(
            self.data(),
            self.shape(),
            other.data(),
            other.shape(),
            &shape,
            |a, b| a + b,
        );
        attach("add", data, shape, Op::Add, vec![self.clone(), other.clone()])
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&self, other: &Tensor<T>) -> OpResult<T> {
        let shape = binary_shape("mul", self, other)?;
        let data = kernels::broadcast_zip(
            self.data(),
            self.shape(),
            other.data(),
            other.shape(),
            &shape,
            |a, b| a * b,
        );
        attach("mul", data, shape, Op::Mul, vec![self.clone(), other.clone()])
    }

    /// Elementwise quotient with broadcasting.
    pub fn div(&self, other: &Tensor<T>) -> OpResult<T> {
        let shape = binary_shape("div", self, other)?;
        let data = kernels::broadcast_zip(
            self.data(),
            self.shape(),
            other.data(),
            other.shape(),
            &shape,
            |a, b| a / b,
        );
        attach("div", data, shape, Op::Div, vec![self.clone(), other.clone()])
    }

    /// Subtraction, lowered to `add(mul(other, -1))`.
    pub fn sub(&self, other: &Tensor<T>) -> OpResult<T> {
        self.add(&other.mul(&Tensor::scalar(-T::one()))?)
    }

    /// `[m, k] x [k, n] -> [m, n]` matrix product.
    pub fn matmul(&self, other: &Tensor<T>) -> OpResult<T> {
        if self.shape().len() != 2 || other.shape().len() != 2 {
            return Err(TensorError::shape(
                "matmul",
                format!("expected rank-2 operands, got {:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let (k2, n) = (other.shape()[0], other.shape()[1]);
        if k != k2 {
            return Err(TensorError::shape(
                "matmul",
                format!("inner dimensions disagree: {:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        let mut out = vec![T::zero(); m * n];
        unsafe {
            T::gemm(
                m, k, n,
                T::one(),
                self.data().as_ptr(), k as isize, 1,
                other.data().as_ptr(), n as isize, 1,
                T::zero(),
                out.as_mut_ptr(), n as isize, 1,
            );
        }
        attach("matmul", out, vec![m, n], Op::Matmul, vec![self.clone(), other.clone()])
    }

    /// Stride-1 cross-correlation with "same" zero padding.
    ///
    /// `self` is `[N, C, H, W]`, `weight` is `[O, C, k, k]` with odd `k`;
    /// output is `[N, O, H, W]`.
    pub fn conv2d(&self, weight: &Tensor<T>) -> OpResult<T> {
        require_rank4("conv2d", self)?;
        require_rank4("conv2d", weight)?;
        let (n, c, h, w) = shape4(self.shape());
        let (o, wc, kh, kw) = shape4(weight.shape());
        if wc != c {
            return Err(TensorError::shape(
                "conv2d",
                format!("input has {c} channels but weight expects {wc}"),
            ));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(TensorError::shape(
                "conv2d",
                format!("weight filters must be square with odd size, got {kh}x{kw}"),
            ));
        }
        let pad = kh / 2;
        let hw = h * w;
        let ckk = c * kh * kw;
        let mut out = vec![T::zero(); n * o * hw];
        let mut col = vec![T::zero(); ckk * hw];
        for img in 0..n {
            let xi = &self.data()[img * c * hw..(img + 1) * c * hw];
            kernels::im2col(xi, c, h, w, kh, kw, pad, &mut col);
            unsafe {
                // out_i [O, HW] = W [O, CKK] x col [CKK, HW]
                T::gemm(
                    o, ckk, hw,
                    T::one(),
                    weight.data().as_ptr(), ckk as isize, 1,
                    col.as_ptr(), hw as isize, 1,
                    T::zero(),
                    out[img * o * hw..].as_mut_ptr(), hw as isize, 1,
                );
            }
        }
        attach(
            "conv2d",
            out,
            vec![n, o, h, w],
            Op::Conv2d { pad },
            vec![self.clone(), weight.clone()],
        )
    }

    /// 2x2 max pooling with stride 2 and no padding; ties go to the first
    /// element in row-major order.
    pub fn maxpool2d(&self) -> OpResult<T> {
        require_rank4("maxpool2d", self)?;
        let (n, c, h, w) = shape4(self.shape());
        if h < 2 || w < 2 {
            return Err(TensorError::shape(
                "maxpool2d",
                format!("spatial dims must be at least 2, got {h}x{w}"),
            ));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for img in 0..n * c {
            let base = img * h * w;
            let plane = &self.data()[base..base + h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best_idx = (2 * oy) * w + 2 * ox;
                    let mut best = plane[best_idx];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = (2 * oy + dy) * w + 2 * ox + dx;
                        if plane[idx] > best {
                            best = plane[idx];
                            best_idx = idx;
                        }
                    }
                    out.push(best);
                    argmax.push((base + best_idx) as u32);
                }
            }
        }
        let argmax = Arc::new(argmax);
        attach(
            "maxpool2d",
            out,
            vec![n, c, oh, ow],
            Op::MaxPool2d { argmax },
            vec![self.clone()],
        )
    }

    /// Elementwise `max(x, 0)`.
    pub fn relu(&self) -> OpResult<T> {
        let data = self
            .data()
            .iter()
            .map(|&x| if x > T::zero() { x } else { T::zero() })
            .collect();
        attach("relu", data, self.shape().to_vec(), Op::Relu, vec![self.clone()])
    }

    /// Elementwise square root; negative inputs produce a numeric error.
    pub fn sqrt_elem(&self) -> OpResult<T> {
        let data = self.data().iter().map(|&x| x.sqrt()).collect();
        attach("sqrt", data, self.shape().to_vec(), Op::Sqrt, vec![self.clone()])
    }

    /// Elementwise arccosine; inputs outside [-1, 1] produce a numeric error.
    pub fn acos_elem(&self) -> OpResult<T> {
        let data = self.data().iter().map(|&x| x.acos()).collect();
        attach("acos", data, self.shape().to_vec(), Op::Acos, vec![self.clone()])
    }

    /// Elementwise logistic function.
    pub fn sigmoid(&self) -> OpResult<T> {
        let data = self
            .data()
            .iter()
            .map(|&x| {
                // Split on sign so the exponential never overflows.
                if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                }
            })
            .collect();
        attach("sigmoid", data, self.shape().to_vec(), Op::Sigmoid, vec![self.clone()])
    }

    /// Elementwise clamp into `[lo, hi]`; gradient is zero outside the open
    /// interval.
    pub fn clamp(&self, lo: T, hi: T) -> OpResult<T> {
        if !(lo <= hi) {
            return Err(TensorError::Contract(format!("clamp bounds inverted: [{lo}, {hi}]")));
        }
        let data = self
            .data()
            .iter()
            .map(|&x| if x < lo { lo } else if x > hi { hi } else { x })
            .collect();
        attach(
            "clamp",
            data,
            self.shape().to_vec(),
            Op::Clamp { lo, hi },
            vec![self.clone()],
        )
    }

    /// Same buffer, new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> OpResult<T> {
        let numel: usize = shape.iter().product();
        if numel != self.len() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::shape(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape(), shape),
            ));
        }
        let data = self.data().to_vec();
        attach("reshape", data, shape.to_vec(), Op::Reshape, vec![self.clone()])
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&self) -> OpResult<T> {
        let total = self.data().iter().copied().sum();
        attach("sum", vec![total], vec![1], Op::SumAll, vec![self.clone()])
    }

    /// Mean of all elements, as a scalar tensor.
    pub fn mean(&self) -> OpResult<T> {
        let total: T = self.data().iter().copied().sum();
        let mean = total / T::from_f64(self.len() as f64);
        attach("mean", vec![mean], vec![1], Op::MeanAll, vec![self.clone()])
    }

    /// Zero-pad the two trailing spatial axes by `pad` on every side.
    pub fn pad2d(&self, pad: usize) -> OpResult<T> {
        require_rank4("pad2d", self)?;
        let (n, c, h, w) = shape4(self.shape());
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let mut out = vec![T::zero(); n * c * ph * pw];
        for img in 0..n * c {
            let src = &self.data()[img * h * w..(img + 1) * h * w];
            let dst = &mut out[img * ph * pw..(img + 1) * ph * pw];
            for y in 0..h {
                dst[(y + pad) * pw + pad..(y + pad) * pw + pad + w]
                    .copy_from_slice(&src[y * w..(y + 1) * w]);
            }
        }
        attach(
            "pad2d",
            out,
            vec![n, c, ph, pw],
            Op::Pad2d { pad },
            vec![self.clone()],
        )
    }

    /// Bilinear resample through an affine map from output to source pixel
    /// coordinates; samples outside the source read as zero.
    ///
    /// The map sends output pixel `(ox, oy)` to source `(sx, sy)` with
    /// `sx = m[0]·ox + m[1]·oy + m[2]` and `sy = m[3]·ox + m[4]·oy + m[5]`.
    pub fn affine_transform_2d(&self, matrix: &AffineMatrix, out_hw: (usize, usize)) -> OpResult<T> {
        require_rank4("affine-transform-2d", self)?;
        let (n, c, h, w) = shape4(self.shape());
        let (oh, ow) = out_hw;
        if oh == 0 || ow == 0 {
            return Err(TensorError::shape(
                "affine-transform-2d",
                "output dims must be nonzero",
            ));
        }
        let mut out = vec![T::zero(); n * c * oh * ow];
        for img in 0..n * c {
            kernels::warp_plane(
                &self.data()[img * h * w..(img + 1) * h * w],
                h,
                w,
                oh,
                ow,
                matrix,
                T::zero(),
                &mut out[img * oh * ow..(img + 1) * oh * ow],
            );
        }
        attach(
            "affine-transform-2d",
            out,
            vec![n, c, oh, ow],
            Op::WarpAffine {
                matrix: *matrix,
                out_hw,
            },
            vec![self.clone()],
        )
    }
}

fn shape4(s: &[usize]) -> (usize, usize, usize, usize) {
    (s[0], s[1], s[2], s[3])
}

/// Mean over the batch of `-log softmax(logits)[label]`, stabilized by
/// max-subtraction.
pub fn softmax_cross_entropy<T: Element>(logits: &Tensor<T>, labels: &[u32]) -> OpResult<T> {
    if logits.shape().len() != 2 {
        return Err(TensorError::shape(
            "softmax_cross_entropy",
            format!("expected [batch, k] logits, got {:?}", logits.shape()),
        ));
    }
    let (batch, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != batch {
        return Err(TensorError::Contract(format!(
            "softmax_cross_entropy: {} labels for batch of {batch}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= k) {
        return Err(TensorError::Contract(format!(
            "softmax_cross_entropy: label {bad} out of range for {k} classes"
        )));
    }
    let mut probs = Vec::with_capacity(batch * k);
    let mut total = T::zero();
    for (row, &label) in logits.data().chunks_exact(k).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for &v in row {
            denom += (v - max).exp();
        }
        let log_denom = denom.ln();
        for &v in row {
            probs.push(((v - max) - log_denom).exp());
        }
        total += log_denom - (row[label as usize] - max);
    }
    let loss = total / T::from_f64(batch as f64);
    ensure_finite("softmax_cross_entropy", &[loss])?;
    let node = logits.tracks_grad().then(|| Node {
        op: Op::SoftmaxXent {
            probs: Arc::new(probs),
            labels: Arc::new(labels.to_vec()),
        },
        inputs: vec![logits.clone()],
    });
    Ok(Tensor::from_parts(vec![loss], vec![1], node))
}

#[cfg(test)]
mod tests {
    use super::super::backward;
    use super::*;

    fn t32(data: &[f32], shape: &[usize]) -> Tensor<f32> {
        Tensor::from_vec(data.to_vec(), shape).unwrap()
    }

    #[test]
    fn matmul_identity_passes_through() {
        let eye = t32(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[3, 3]);
        let a = t32(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0], &[3, 3]);
        let out = eye.matmul(&a).unwrap();
        assert_eq!(out.data(), a.data());
    }

    #[test]
    fn relu_sign_definition() {
        let x = t32(&[-1.0, 0.0, 2.5], &[3]);
        assert_eq!(x.relu().unwrap().data(), &[0.0, 0.0, 2.5]);
    }

    #[test]
    fn conv2d_unit_kernel_scales() {
        let x = t32(&[1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]);
        let k = t32(&[3.0], &[1, 1, 1, 1]);
        let out = x.conv2d(&k).unwrap();
        assert_eq!(out.data(), &[3.0, 6.0, 9.0, 12.0]);
    }

    #[test]
    fn maxpool_takes_first_on_ties() {
        let x = t32(&[5.0, 5.0, 5.0, 5.0], &[1, 1, 2, 2]);
        let y = x.clone().maxpool2d().unwrap();
        assert_eq!(y.data(), &[5.0]);
        // Route a gradient through and confirm it lands on the first cell.
        let p = Tensor::param(vec![5.0f32, 5.0, 5.0, 5.0], &[1, 1, 2, 2]).unwrap();
        let loss = p.maxpool2d().unwrap().sum().unwrap();
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.get(&p).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let x = Tensor::param(vec![3.0f64], &[1]).unwrap();
        let loss = x.mul(&x).unwrap().sum().unwrap();
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn uniform_logits_loss_is_ln_k() {
        let logits = t32(&[0.0; 8], &[2, 4]);
        let loss = softmax_cross_entropy(&logits, &[1, 3]).unwrap();
        let expected = (4.0f32).ln();
        assert!((loss.item().unwrap() - expected).abs() < 1e-6);
    }

    #[test]
    fn huge_logit_does_not_overflow() {
        let logits = t32(&[1e9, 0.0], &[1, 2]);
        let loss = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(loss.item().unwrap().abs() < 1e-6);
    }

    #[test]
    fn label_out_of_range_is_contract_error() {
        let logits = t32(&[0.0, 0.0], &[1, 2]);
        let err = softmax_cross_entropy(&logits, &[2]).unwrap_err();
        assert!(matches!(err, TensorError::Contract(_)));
    }

    #[test]
    fn add_broadcasts_bias_row() {
        let x = t32(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let b = t32(&[10.0, 20.0], &[2]);
        let out = x.add(&b).unwrap();
        assert_eq!(out.data(), &[11.0, 22.0, 13.0, 24.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::param(vec![1.0f32, 2.0], &[2]).unwrap();
        let y = x.relu().unwrap();
        assert!(backward(&y).is_err());
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let x = Tensor::param(vec![0.3f64, -1.2, 2.0], &[3]).unwrap();
        let base = x.mul(&x).unwrap().mul(&x).unwrap().sum().unwrap();
        let scaled = x
            .mul(&x)
            .unwrap()
            .mul(&x)
            .unwrap()
            .sum()
            .unwrap()
            .mul(&Tensor::scalar(2.5))
            .unwrap()
            .sum()
            .unwrap();
        let g1 = backward(&base).unwrap();
        let g2 = backward(&scaled).unwrap();
        for (a, b) in g1.get(&x).unwrap().data().iter().zip(g2.get(&x).unwrap().data()) {
            assert!((a * 2.5 - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pad_then_crop_roundtrip_gradient() {
        let x = Tensor::param(vec![1.0f32, 2.0, 3.0, 4.0], &[1, 1, 2, 2]).unwrap();
        let padded = x.pad2d(1).unwrap();
        assert_eq!(padded.shape(), &[1, 1, 4, 4]);
        assert_eq!(padded.data()[5], 1.0);
        let loss = padded.sum().unwrap();
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn nan_output_is_numeric_error() {
        let x = t32(&[-1.0], &[1]);
        assert!(matches!(
            x.sqrt_elem().unwrap_err(),
            TensorError::NonFinite { .. }
        ));
    }

    #[test]
    fn division_grads_flow_to_both_sides() {
        let a = Tensor::param(vec![6.0f64], &[1]).unwrap();
        let b = Tensor::param(vec![2.0f64], &[1]).unwrap();
        let loss = a.div(&b).unwrap().sum().unwrap();
        let grads = backward(&loss).unwrap();
        assert!((grads.get(&a).unwrap().data()[0] - 0.5).abs() < 1e-12);
        assert!((grads.get(&b).unwrap().data()[0] + 1.5).abs() < 1e-12);
    }
}
