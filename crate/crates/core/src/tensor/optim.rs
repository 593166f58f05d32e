//! First-order optimizers over a fixed parameter list.
//!
//! Tensors are immutable, so a step replaces each parameter with a fresh
//! leaf holding the updated values. Moment buffers are aligned with the
//! parameter list by position.

use super::{Element, Gradients, Tensor, TensorError};

/// Optimizer family plus its fixed hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimKind {
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

struct Slot<T: Element> {
    shape: Vec<usize>,
    /// Momentum buffer, or first moment for Adam.
    m: Vec<T>,
    /// Second moment; unused for SGD.
    v: Vec<T>,
}

/// Stateful optimizer. One instance drives one parameter list; shapes are
/// checked on every step.
pub struct Optimizer<T: Element> {
    kind: OptimKind,
    lr: f64,
    step: u64,
    slots: Option<Vec<Slot<T>>>,
}

impl<T: Element> Optimizer<T> {
    /// SGD with momentum: `v <- beta*v + g; p <- p - lr*v`.
    pub fn sgd_momentum(lr: f64, momentum: f64) -> Result<Self, TensorError> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(TensorError::Contract(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        Self::new(OptimKind::SgdMomentum { momentum }, lr)
    }

    /// Adam with bias-corrected moments.
    pub fn adam(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self, TensorError> {
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(TensorError::Contract(format!(
                "adam betas must lie in [0, 1), got {beta1}, {beta2}"
            )));
        }
        if eps <= 0.0 {
            return Err(TensorError::Contract(format!("adam eps must be positive, got {eps}")));
        }
        Self::new(OptimKind::Adam { beta1, beta2, eps }, lr)
    }

    /// Adam at the conventional settings: beta1 0.9, beta2 0.999, eps 1e-8.
    pub fn adam_default(lr: f64) -> Result<Self, TensorError> {
        Self::adam(lr, 0.9, 0.999, 1e-8)
    }

    fn new(kind: OptimKind, lr: f64) -> Result<Self, TensorError> {
        if !lr.is_finite() || lr < 0.0 {
            return Err(TensorError::Contract(format!(
                "learning rate must be finite and non-negative, got {lr}"
            )));
        }
        Ok(Optimizer {
            kind,
            lr,
            step: 0,
            slots: None,
        })
    }

    pub fn kind(&self) -> OptimKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn set_learning_rate(&mut self, lr: f64) -> Result<(), TensorError> {
        if !lr.is_finite() || lr < 0.0 {
            return Err(TensorError::Contract(format!(
                "learning rate must be finite and non-negative, got {lr}"
            )));
        }
        self.lr = lr;
        Ok(())
    }

    /// Number of completed steps.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update. Parameters absent from `grads` (unreachable from
    /// the loss) are treated as having zero gradient, so momentum still
    /// decays.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &Gradients<T>) -> Result<(), TensorError> {
        let slots = match self.slots.as_mut() {
            Some(slots) => {
                if slots.len() != params.len() {
                    return Err(TensorError::Contract(format!(
                        "optimizer drives {} parameters, got {}",
                        slots.len(),
                        params.len()
                    )));
                }
                slots
            }
            None => self.slots.insert(
                params
                    .iter()
                    .map(|p| Slot {
                        shape: p.shape().to_vec(),
                        m: vec![T::zero(); p.len()],
                        v: vec![T::zero(); p.len()],
                    })
                    .collect(),
            ),
        };
        self.step += 1;
        for (param, slot) in params.iter_mut().zip(slots.iter_mut()) {
            if param.shape() != slot.shape.as_slice() {
                return Err(TensorError::Contract(format!(
                    "parameter shape changed from {:?} to {:?}",
                    slot.shape,
                    param.shape()
                )));
            }
            let zeros: Vec<T>;
            let grad: &[T] = match grads.get(param) {
                Some(g) => g.data(),
                None => {
                    zeros = vec![T::zero(); param.len()];
                    &zeros
                }
            };
            let mut next = param.data().to_vec();
            match self.kind {
                OptimKind::SgdMomentum { momentum } => {
                    let beta = T::from_f64(momentum);
                    let lr = T::from_f64(self.lr);
                    for ((p, m), &g) in next.iter_mut().zip(slot.m.iter_mut()).zip(grad) {
                        *m = beta * *m + g;
                        *p = *p - lr * *m;
                    }
                }
                OptimKind::Adam { beta1, beta2, eps } => {
                    let b1 = T::from_f64(beta1);
                    let b2 = T::from_f64(beta2);
                    let eps = T::from_f64(eps);
                    let t = self.step as i32;
                    let c1 = T::from_f64(1.0 - beta1.powi(t));
                    let c2 = T::from_f64(1.0 - beta2.powi(t));
                    let lr = T::from_f64(self.lr);
                    for ((p, (m, v)), &g) in next
                        .iter_mut()
                        .zip(slot.m.iter_mut().zip(slot.v.iter_mut()))
                        .zip(grad)
                    {
                        *m = b1 * *m + (T::one() - b1) * g;
                        *v = b2 * *v + (T::one() - b2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
            *param = Tensor::param(next, &slot.shape)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::backward;
    use super::*;

    fn run_step(opt: &mut Optimizer<f64>, params: &mut [Tensor<f64>]) {
        // loss = sum of all parameter values, so every gradient is 1.
        let mut loss = params[0].sum().unwrap();
        for p in params.iter().skip(1) {
            loss = loss.add(&p.sum().unwrap()).unwrap();
        }
        let grads = backward(&loss).unwrap();
        opt.step(params, &grads).unwrap();
    }

    #[test]
    fn plain_sgd_moves_by_lr() {
        let mut opt = Optimizer::sgd_momentum(0.1, 0.0).unwrap();
        let mut params = vec![Tensor::param(vec![1.0f64], &[1]).unwrap()];
        run_step(&mut opt, &mut params);
        assert!((params[0].data()[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn momentum_compounds_over_two_steps() {
        // g = 1 both steps, lr = 1, beta = 0.9: total decrease 1 + 1.9.
        let mut opt = Optimizer::sgd_momentum(1.0, 0.9).unwrap();
        let mut params = vec![Tensor::param(vec![0.0f64], &[1]).unwrap()];
        run_step(&mut opt, &mut params);
        run_step(&mut opt, &mut params);
        assert!((params[0].data()[0] + 2.9).abs() < 1e-12);
        assert_eq!(opt.steps(), 2);
    }

    #[test]
    fn adam_first_step_magnitude_is_about_lr() {
        let mut opt = Optimizer::adam_default(0.01).unwrap();
        let mut params = vec![Tensor::param(vec![5.0f64], &[1]).unwrap()];
        run_step(&mut opt, &mut params);
        let delta = 5.0 - params[0].data()[0];
        // First step: m_hat = g, v_hat = g^2, so delta = lr*g/(|g| + eps') ~ lr.
        assert!((delta - 0.01).abs() < 1e-6, "delta {delta}");
    }

    #[test]
    fn updated_params_keep_requires_grad() {
        let mut opt = Optimizer::sgd_momentum(0.1, 0.0).unwrap();
        let mut params = vec![Tensor::param(vec![1.0f64, 2.0], &[2]).unwrap()];
        run_step(&mut opt, &mut params);
        assert!(params[0].requires_grad());
    }

    #[test]
    fn missing_grad_still_decays_momentum() {
        let mut opt = Optimizer::sgd_momentum(1.0, 0.5).unwrap();
        let mut params = vec![
            Tensor::param(vec![0.0f64], &[1]).unwrap(),
            Tensor::param(vec![7.0f64], &[1]).unwrap(),
        ];
        // Loss touches only the first parameter.
        let loss = params[0].sum().unwrap();
        let grads = backward(&loss).unwrap();
        opt.step(&mut params, &grads).unwrap();
        assert!((params[0].data()[0] + 1.0).abs() < 1e-12);
        assert_eq!(params[1].data()[0], 7.0);
        // Second step, again only the first: its momentum buffer is 0.5*1 + 1.
        let loss = params[0].sum().unwrap();
        let grads = backward(&loss).unwrap();
        opt.step(&mut params, &grads).unwrap();
        assert!((params[0].data()[0] + 2.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(Optimizer::<f32>::sgd_momentum(0.1, 1.0).is_err());
        assert!(Optimizer::<f32>::sgd_momentum(f64::NAN, 0.9).is_err());
        assert!(Optimizer::<f32>::adam(0.1, 0.9, 1.5, 1e-8).is_err());
        assert!(Optimizer::<f32>::adam(0.1, 0.9, 0.999, 0.0).is_err());
    }

    #[test]
    fn rejects_parameter_count_change() {
        let mut opt = Optimizer::sgd_momentum(0.1, 0.0).unwrap();
        let mut params = vec![Tensor::param(vec![1.0f64], &[1]).unwrap()];
        run_step(&mut opt, &mut params);
        let mut more = vec![
            Tensor::param(vec![1.0f64], &[1]).unwrap(),
            Tensor::param(vec![1.0f64], &[1]).unwrap(),
        ];
        let loss = more[0].sum().unwrap();
        let grads = backward(&loss).unwrap();
        assert!(opt.step(&mut more, &grads).is_err());
    }
}
