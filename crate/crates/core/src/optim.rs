//! First-order optimizers over flat parameter blocks.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    /// `block_sizes` fixes the layout of the parameter blocks passed to
    /// [`Optimizer::step`].
    pub fn new(kind: OptimizerKind, lr: f64, block_sizes: &[usize]) -> Self {
        let zeros = |n: &usize| vec![0.0; *n];
        Self {
            kind,
            lr,
            step: 0,
            first: block_sizes.iter().map(zeros).collect(),
            second: block_sizes.iter().map(zeros).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One descent step. `blocks[i]` is updated with `grads[i]` unless
    /// `frozen[i]` is set; frozen blocks keep their moment estimates at zero.
    pub fn step(&mut self, blocks: &mut [&mut [f64]], grads: &[&[f64]], frozen: &[bool]) {
        self.step += 1;
        let t = self.step as i32;
        for (i, (params, grad)) in blocks.iter_mut().zip(grads).enumerate() {
            if frozen.get(i).copied().unwrap_or(false) {
                continue;
            }
            assert_eq!(params.len(), grad.len(), "optimizer block {i} size mismatch");
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, g) in params.iter_mut().zip(grad.iter()) {
                        *p -= self.lr * g;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    let m = &mut self.first[i];
                    let v = &mut self.second[i];
                    for j in 0..params.len() {
                        let g = grad[j];
                        m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                        v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                        let m_hat = m[j] / c1;
                        let v_hat = v[j] / c2;
                        params[j] -= self.lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.5, &[2]);
        let mut p = vec![1.0, -1.0];
        opt.step(&mut [&mut p], &[&[2.0, -4.0]], &[false]);
        assert_eq!(p, vec![0.0, 1.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut opt = Optimizer::new(OptimizerKind::default(), 1e-3, &[3]);
        let mut p = vec![0.0; 3];
        opt.step(&mut [&mut p], &[&[5.0, -0.01, 0.0]], &[false]);
        assert!((p[0] + 1e-3).abs() < 1e-9);
        assert!((p[1] - 1e-3).abs() < 1e-6);
        assert_eq!(p[2], 0.0);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut opt = Optimizer::new(OptimizerKind::default(), 0.05, &[1]);
        let mut p = vec![3.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0)];
            opt.step(&mut [&mut p], &[&g], &[false]);
        }
        assert!((p[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn frozen_block_untouched() {
        let mut opt = Optimizer::new(OptimizerKind::default(), 1.0, &[1, 1]);
        let mut a = vec![1.0];
        let mut b = vec![1.0];
        opt.step(&mut [&mut a, &mut b], &[&[1.0], &[1.0]], &[true, false]);
        assert_eq!(a, vec![1.0]);
        assert!(b[0] < 1.0);
    }

    #[test]
    fn zero_learning_rate_is_exact_identity() {
        let mut opt = Optimizer::new(OptimizerKind::default(), 0.0, &[2]);
        let mut p = vec![0.123, -4.5];
        for _ in 0..10 {
            opt.step(&mut [&mut p], &[&[1.0, -3.0]], &[false]);
        }
        assert_eq!(p, vec![0.123, -4.5]);
    }
}
