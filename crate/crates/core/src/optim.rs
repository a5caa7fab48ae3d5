//! Adam optimizer.

use alloc::vec::Vec;

use crate::linalg::Mat;

/// Adam hyperparameters and per-parameter moment accumulators.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    /// Accumulators are shaped after `params` and start at zero.
    pub fn new(lr: f64, params: &[&Mat]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: params.iter().map(|p| Mat::zeros(p.rows(), p.cols())).collect(),
            v: params.iter().map(|p| Mat::zeros(p.rows(), p.cols())).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update; `params` and `grads` must line up with
    /// the construction order.
    pub fn step(&mut self, params: &mut [&mut Mat], grads: &[&Mat]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient count mismatch");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert!(p.same_shape(g), "parameter/gradient shape mismatch");
            for ((pv, gv), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= self.lr * mhat / (libm::sqrt(vhat) + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = Mat::from_rows(&[&[1.0, -2.0]]);
        let g = Mat::zeros(1, 2);
        let mut adam = Adam::new(0.1, &[&p]);
        adam.step(&mut [&mut p], &[&g]);
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn single_step_matches_hand_computation() {
        // scalar theta = 1, g = 0.5, lr = 0.1, defaults:
        // m = 0.05, v = 0.00025, mhat = 0.5, vhat = 0.25,
        // delta = -0.1 * 0.5 / (0.5 + 1e-8)
        let mut p = Mat::from_rows(&[&[1.0]]);
        let g = Mat::from_rows(&[&[0.5]]);
        let mut adam = Adam::new(0.1, &[&p]);
        adam.step(&mut [&mut p], &[&g]);
        let expected = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert!((p[(0, 0)] - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_moves_against_its_sign() {
        let mut p = Mat::from_rows(&[&[0.0, 0.0]]);
        let g = Mat::from_rows(&[&[1.0, -1.0]]);
        let mut adam = Adam::new(0.01, &[&p]);
        for _ in 0..20 {
            adam.step(&mut [&mut p], &[&g]);
        }
        assert!(p[(0, 0)] < 0.0);
        assert!(p[(0, 1)] > 0.0);
    }
}
