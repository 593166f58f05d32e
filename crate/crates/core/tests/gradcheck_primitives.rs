//! Finite-difference check for every autodiff primitive.
//!
//! Each primitive runs on at least ten random instances at `f64` with a
//! central difference of `h = 1e-4`; the maximum relative error must stay
//! below `1e-4`. Non-scalar outputs are contracted against a fixed random
//! cotangent so the whole Jacobian is exercised, not just its row sums.

use atlasbench_core::tensor::gradcheck::{gradcheck, DEFAULT_H};
use atlasbench_core::tensor::{softmax_cross_entropy, Tensor};
use atlasbench_core::util::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
const CASES: u64 = 10;

fn rng_for(tag: &str, case: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(0x67726164, tag, case))
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Contract `t` against the fixed cotangent `r`: `sum(t * r)`.
fn against(
    t: &Tensor<f64>,
    r: &Tensor<f64>,
) -> Result<Tensor<f64>, atlasbench_core::tensor::TensorError> {
    t.mul(r)?.sum()
}

#[test]
fn gradcheck_add_with_broadcast() {
    for case in 0..CASES {
        let mut rng = rng_for("add", case);
        let a = uniform(&mut rng, 6, -2.0, 2.0);
        let b = uniform(&mut rng, 3, -2.0, 2.0);
        let r = Tensor::from_vec(uniform(&mut rng, 6, -1.0, 1.0), &[2, 3]).unwrap();
        let bt = Tensor::from_vec(b.clone(), &[3]).unwrap();
        let rep = gradcheck(&a, &[2, 3], DEFAULT_H, |x| against(&x.add(&bt)?, &r)).unwrap();
        assert!(rep.max_rel_error < TOL, "case {case} lhs: {rep:?}");
        let at = Tensor::from_vec(a, &[2, 3]).unwrap();
        let rep = gradcheck(&b, &[3], DEFAULT_H, |x| against(&at.add(x)?, &r)).unwrap();
        assert!(rep.max_rel_error < TOL, "case {case} rhs: {rep:?}");
    }
}

#[test]
fn gradcheck_mul_with_broadcast() {
    for case in 0..CASES {
        let mut rng = rng_for("mul", case);
        let a = uniform(&mut rng, 6, -2.0, 2.0);
        let b = uniform(&mut rng, 3, -2.0, 2.0);
        let r = Tensor::from_vec(uniform(&mut rng, 6, -1.0, 1.0), &[2, 3]).unwrap();
        let bt = Tensor::from_vec(b.clone(), &[3]).unwrap();
        let rep = gradcheck(&a, &[2, 3], DEFAULT_H, |x| against(&x.mul(&bt)?, &r)).unwrap();
        assert!(rep.max_rel_error < TOL, "case {case} lhs: {rep:?}");
        let at = Tensor::from_vec(a, &[2, 3]).unwrap();
        let rep = gradcheck(&b, &[3], DEFAULT_H, |x| against(&at.mul(x)?, &r)).unwrap();
        assert!(rep.max_rel_error < TOL, "case {case} rhs: {rep:?}");
    }
}

#[test]
fn gradcheck_div_both_sides() {
    for case in 0..CASES {
        let mut rng = rng_for("div", case);
        let a = uniform(&mut rng, 4, -2.0, 2.0);
        // Denominators bounded away from zero.
        let b: Vec<f64> = uniform(&mut rng, 4, 0.5, 2.0)
            .into_iter()
            .map(|v| if case % 2 == 0 { v } else { -v })
            .collect();
        let r = Tensor::from_vec(uniform(&mut rng, 4, -1.0, 1.0), &[4]).unwrap();
        let bt = Tensor::from_vec(b.clone(), &[4]).unwrap();
        let rep = gradcheck(&a, &[4], DEFAULT_H, |x| against(&x.div(&bt)?, &r)).unwrap();
        assert!(rep.max_rel_error < TOL, "case {case} numerator: {rep:?}");
        let at = Tensor::from_vec(a, &[4]).unwrap();
        let rep = gradcheck(&b, &[4], DEFAULT_H, |x| against(&at.div(x)?, &r)).unwrap();
        assert!(rep.max_rel_error < TOL, "case {case} denominator: {rep:?}");
    }
}

#[test]
fn gradcheck_matmul_both_sides() {
    for case in 0..CASES {
        let mut rng = rng_for("matmul", case);
        let (m, k, n) = (3, 4, 2);
        let a = uniform(&mut rng, m * k, -1.5, 1.5);
        let b = uniform(&mut rng, k * n, -1.5, 1.5);
        let r = Tensor::from_vec(uniform(&mut rng, m * n, -1.0, 1.0), &[m, n]).unwrap();
        let bt = Tensor::from_vec(b.clone(), &[k, n]).unwrap();
        let rep = gradcheck(&a, &[m, k], DEFAULT_H, |x| against(&x.matmul(&bt)?, &r)).unwrap();
        assert!(rep.max_rel_error < TOL, "case {case} lhs: {rep:?}");
        let at = Tensor::from_vec(a, &[m, k]).unwrap();
        let rep = gradcheck(&b, &[k, n], DEFAULT_H, |x| against(&at.matmul(x)?, &r)).unwrap();
        assert!(rep.max_rel_error < TOL, "case {case} rhs: {rep:?}");
    }
}

#[test]
fn gradcheck_conv2d_both_sides() {
    for case in 0..CASES {
        let mut rng = rng_for("conv2d", case);
        let (n, c, h, w, o, k) = (2, 2, 5, 4, 3, 3);
        let x = uniform(&mut rng, n * c * h * w, -1.0, 1.0);
        let wt = uniform(&mut rng, o * c * k * k, -1.0, 1.0);
        let r = Tensor::from_vec(uniform(&mut rng, n * o * h * w, -1.0, 1.0), &[n, o, h, w]).unwrap();
        let weight = Tensor::from_vec(wt.clone(), &[o, c, k, k]).unwrap();
        let rep = gradcheck(&x, &[n, c, h, w], DEFAULT_H, |t| {
            against(&t.conv2d(&weight)?, &r)
        })
        .unwrap();
        assert!(rep.max_rel_error < TOL, "case {case} input: {rep:?}");
        let xt = Tensor::from_vec(x, &[n, c, h, w]).unwrap();
        let rep = gradcheck(&wt, &[o, c, k, k], DEFAULT_H, |t| {
            against(&xt.conv2d(t)?, &r)
        })
        .unwrap();
        assert!(rep.max_rel_error < TOL, "case {case} weight: {rep:?}");
    }
}

#[test]
fn gradcheck_maxpool2d() {
    for case in 0..CASES {
        let mut rng = rng_for("maxpool", case);
        // Values spaced at least 0.05 apart so no finite-difference probe
        // crosses an argmax boundary.
        let (n, c, h, w) = (1, 2, 4, 4);
        let mut vals: Vec<f64> = (0..n * c * h * w).map(|i| i as f64 * 0.05).collect();
        for i in (1..vals.len()).rev() {
            let j = rng.gen_range(0..=i);
            vals.swap(i, j);
        }
        let r = Tensor::from_vec(
            uniform(&mut rng, n * c * (h / 2) * (w / 2), -1.0, 1.0),
            &[n, c, h / 2, w / 2],
        )
        .unwrap();
        let rep = gradcheck(&vals, &[n, c, h, w], DEFAULT_H, |x| {
            against(&x.maxpool2d()?, &r)
        })
        .unwrap();
        assert!(rep.max_rel_error < TOL, "case {case}: {rep:?}");
    }
}

#[test]
fn gradcheck_relu_away_from_kink() {
    for case in 0..CASES {
        let mut rng = rng_for("relu", case);
        let x: Vec<f64> = uniform(&mut rng, 8, 0.05, 2.0)
            .into_iter()
            .map(|v| if rng.gen_bool(0.5) { v } else { -v })
            .collect();
        let r = Tensor::from_vec(uniform(&mut rng, 8, -1.0, 1.0), &[8]).unwrap();
        let rep = gradcheck(&x, &[8], DEFAULT_H, |t| against(&t.relu()?, &r)).unwrap();
        assert!(rep.max_rel_error < TOL, "case {case}: {rep:?}");
    }
}

#[test]
fn gradcheck_sqrt() {
    for case in 0..CASES {
        let mut rng = rng_for("sqrt", case);
        let x = uniform(&mut rng, 6, 0.1, 4.0);
        let r = Tensor::from_vec(uniform(&mut rng, 6, -1.0, 1.0), &[6]).unwrap();
        let rep = gradcheck(&x, &[6], DEFAULT_H, |t| against(&t.sqrt_elem()?, &r)).unwrap();
        assert!(rep.max_rel_error < TOL, "case {case}: {rep:?}");
    }
}

#[test]
fn gradcheck_acos_interior() {
    for case in 0..CASES {
        let mut rng = rng_for("acos", case);
        let x = uniform(&mut rng, 6, -0.9, 0.9);
        let r = Tensor::from_vec(uniform(&mut rng, 6, -1.0, 1.0), &[6]).unwrap();
        let rep = gradcheck(&x, &[6], DEFAULT_H, |t| against(&t.acos_elem()?, &r)).unwrap();
        assert!(rep.max_rel_error < TOL, "case {case}: {rep:?}");
    }
}

#[test]
fn gradcheck_sigmoid() {
    for case in 0..CASES {
        let mut rng = rng_for("sigmoid", case);
        let x = uniform(&mut rng, 6, -4.0, 4.0);
        let r = Tensor::from_vec(uniform(&mut rng, 6, -1.0, 1.0), &[6]).unwrap();
        let rep = gradcheck(&x, &[6], DEFAULT_H, |t| against(&t.sigmoid()?, &r)).unwrap();
        assert!(rep.max_rel_error < TOL, "case {case}: {rep:?}");
    }
}

#[test]
fn gradcheck_clamp_interior_and_saturated() {
    for case in 0..CASES {
        let mut rng = rng_for("clamp", case);
        // Mix of points inside (0, 1) and saturated well past the bounds;
        // all at least 0.01 from a bound so probes stay on one side.
        let x: Vec<f64> = (0..8)
            .map(|i| {
                if i % 3 == 0 {
                    rng.gen_range(1.1..2.0)
                } else if i % 3 == 1 {
                    rng.gen_range(-1.0..-0.1)
                } else {
                    rng.gen_range(0.05..0.95)
                }
            })
            .collect();
        let r = Tensor::from_vec(uniform(&mut rng, 8, -1.0, 1.0), &[8]).unwrap();
        let rep = gradcheck(&x, &[8], DEFAULT_H, |t| against(&t.clamp(0.0, 1.0)?, &r)).unwrap();
        assert!(rep.max_rel_error < TOL, "case {case}: {rep:?}");
    }
}

#[test]
fn gradcheck_reshape() {
    for case in 0..CASES {
        let mut rng = rng_for("reshape", case);
        let x = uniform(&mut rng, 12, -2.0, 2.0);
        let r = Tensor::from_vec(uniform(&mut rng, 12, -1.0, 1.0), &[3, 4]).unwrap();
        let rep = gradcheck(&x, &[2, 6], DEFAULT_H, |t| against(&t.reshape(&[3, 4])?, &r)).unwrap();
        assert!(rep.max_rel_error < TOL, "case {case}: {rep:?}");
    }
}

#[test]
fn gradcheck_sum_and_mean() {
    for case in 0..CASES {
        let mut rng = rng_for("sum-mean", case);
        let x = uniform(&mut rng, 9, -2.0, 2.0);
        let rep = gradcheck(&x, &[3, 3], DEFAULT_H, |t| t.sum()).unwrap();
        assert!(rep.max_rel_error < TOL, "case {case} sum: {rep:?}");
        let rep = gradcheck(&x, &[3, 3], DEFAULT_H, |t| t.mean()).unwrap();
        assert!(rep.max_rel_error < TOL, "case {case} mean: {rep:?}");
    }
}

#[test]
fn gradcheck_pad2d() {
    for case in 0..CASES {
        let mut rng = rng_for("pad2d", case);
        let (n, c, h, w) = (1, 2, 3, 3);
        let x = uniform(&mut rng, n * c * h * w, -2.0, 2.0);
        let r = Tensor::from_vec(
            uniform(&mut rng, n * c * (h + 2) * (w + 2), -1.0, 1.0),
            &[n, c, h + 2, w + 2],
        )
        .unwrap();
        let rep = gradcheck(&x, &[n, c, h, w], DEFAULT_H, |t| against(&t.pad2d(1)?, &r)).unwrap();
        assert!(rep.max_rel_error < TOL, "case {case}: {rep:?}");
    }
}

#[test]
fn gradcheck_affine_transform_2d() {
    for case in 0..CASES {
        let mut rng = rng_for("affine", case);
        let (n, c, h, w) = (1, 1, 5, 5);
        let x = uniform(&mut rng, n * c * h * w, -1.0, 1.0);
        // Small rotation + shift + mild scale around the image center.
        let theta: f64 = rng.gen_range(-0.4..0.4);
        let s: f64 = rng.gen_range(0.8..1.2);
        let (tx, ty): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let m = [
            s * theta.cos(),
            -s * theta.sin(),
            cx - s * (theta.cos() * cx - theta.sin() * cy) + tx,
            s * theta.sin(),
            s * theta.cos(),
            cy - s * (theta.sin() * cx + theta.cos() * cy) + ty,
        ];
        let r = Tensor::from_vec(uniform(&mut rng, n * c * h * w, -1.0, 1.0), &[n, c, h, w]).unwrap();
        let rep = gradcheck(&x, &[n, c, h, w], DEFAULT_H, |t| {
            against(&t.affine_transform_2d(&m, (h, w))?, &r)
        })
        .unwrap();
        assert!(rep.max_rel_error < TOL, "case {case}: {rep:?}");
    }
}

#[test]
fn gradcheck_softmax_cross_entropy() {
    for case in 0..CASES {
        let mut rng = rng_for("xent", case);
        let (batch, k) = (3, 5);
        let logits = uniform(&mut rng, batch * k, -3.0, 3.0);
        let labels: Vec<u32> = (0..batch).map(|_| rng.gen_range(0..k as u32)).collect();
        let rep = gradcheck(&logits, &[batch, k], DEFAULT_H, |t| {
            softmax_cross_entropy(t, &labels)
        })
        .unwrap();
        assert!(rep.max_rel_error < TOL, "case {case}: {rep:?}");
    }
}

#[test]
fn softmax_cross_entropy_matches_direct_evaluation() {
    // Value oracle: direct high-precision evaluation without stabilization
    // shortcuts, on moderate logits where naive exponentials are safe.
    for case in 0..CASES {
        let mut rng = rng_for("xent-value", case);
        let (batch, k) = (4, 7);
        let logits = uniform(&mut rng, batch * k, -5.0, 5.0);
        let labels: Vec<u32> = (0..batch).map(|_| rng.gen_range(0..k as u32)).collect();
        let mut expected = 0.0f64;
        for (row, &label) in logits.chunks_exact(k).zip(&labels) {
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            expected -= (row[label as usize].exp() / denom).ln();
        }
        expected /= batch as f64;
        let t = Tensor::from_vec(logits, &[batch, k]).unwrap();
        let got = softmax_cross_entropy(&t, &labels).unwrap().item().unwrap();
        assert!((got - expected).abs() < 1e-10, "case {case}: {got} vs {expected}");
    }
}
