use crate::error::{Error, Result};
use crate::scalar::Real;

/// Adam moments and hyperparameters for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub t: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    /// Steps skipped because of non-finite gradients.
    pub faults: usize,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize, lr: T) -> Self {
        AdamState {
            t: 0,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            faults: 0,
        }
    }

    pub fn with_betas(mut self, beta1: T, beta2: T) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (z, one) = (T::zero(), T::one());
        if !(self.lr > z && self.lr.is_finite()) {
            return Err(Error::Configuration(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.beta1 >= z && self.beta1 < one && self.beta2 >= z && self.beta2 < one) {
            return Err(Error::Configuration("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps > z) {
            return Err(Error::Configuration("Adam eps must be positive".into()));
        }
        Ok(())
    }

    /// Applies one bias-corrected update. Returns `false` (and records a
    /// fault) when the gradient is not finite, leaving everything unchanged.
    pub fn step(&mut self, params: &mut [T], grads: &[T]) -> Result<bool> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                format!("{} parameters and gradients", self.m.len()),
                format!("{} / {}", params.len(), grads.len()),
            ));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            self.faults += 1;
            log::warn!("skipping Adam step {}: non-finite gradient", self.t + 1);
            return Ok(false);
        }
        self.t += 1;
        let one = T::one();
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let c1 = one - self.beta1.powi(t);
        let c2 = one - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut s = AdamState::<f64>::new(3, 0.01);
        let mut p = vec![1.0, 1.0, 1.0];
        s.step(&mut p, &[3.0, -0.2, 0.0]).unwrap();
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] - 1.01).abs() < 1e-9);
        assert_eq!(p[2], 1.0);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::new(2, 0.1);
        let mut p = vec![0.5, -0.5];
        for _ in 0..10 {
            s.step(&mut p, &[0.0, 0.0]).unwrap();
        }
        assert_eq!(p, vec![0.5, -0.5]);
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let mut s = AdamState::<f64>::new(1, 0.01);
        let mut p = vec![0.0];
        let mut last: f64 = 0.0;
        for _ in 0..5000 {
            let before = p[0];
            s.step(&mut p, &[0.7]).unwrap();
            last = before - p[0];
        }
        assert!((last - 0.01).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let mut s = AdamState::new(2, 0.1);
        let mut p = vec![1.0, 2.0];
        assert!(!s.step(&mut p, &[f64::NAN, 1.0]).unwrap());
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(s.faults, 1);
        assert_eq!(s.t, 0);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut s = AdamState::new(2, 0.1);
        assert!(s.step(&mut [1.0], &[1.0]).is_err());
    }
}
