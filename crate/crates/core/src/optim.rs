//! First-order optimiser used by every fitting routine.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Optimisation settings shared by SVGP, GPLVM and KPMF fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Learn kernel hyperparameters alongside the model parameters.
    pub train_kernel: bool,
    /// Learn likelihood noise parameters.
    pub train_likelihood: bool,
    /// Minibatch size over training points; `None` means full batch.
    pub batch_size: Option<usize>,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            learning_rate: 0.001,
            seed: 0,
            train_kernel: true,
            train_likelihood: true,
            batch_size: None,
        }
    }
}

/// Adam in ascent form.
#[derive(Debug, Clone)]
pub struct Adam<T: Scalar> {
    learning_rate: T,
    beta1: T,
    beta2: T,
    eps: T,
    first: Vec<T>,
    second: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(dim: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate: T::lit(learning_rate),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            first: vec![T::zero(); dim],
            second: vec![T::zero(); dim],
            t: 0,
        }
    }

    /// Moves `params` along the bias-corrected Adam direction of `grad`.
    pub fn ascend(&mut self, params: &mut [T], grad: &[T]) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.t);
        let c2 = one - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.first[i] = self.beta1 * self.first[i] + (one - self.beta1) * grad[i];
            self.second[i] = self.beta2 * self.second[i] + (one - self.beta2) * grad[i] * grad[i];
            let m_hat = self.first[i] / c1;
            let v_hat = self.second[i] / c2;
            params[i] += self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Means over consecutive non-overlapping windows; a trailing partial window is dropped.
pub fn window_means(trace: &[f64], window: usize) -> Vec<f64> {
    trace.chunks_exact(window.max(1)).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_climbs_concave_quadratic() {
        let mut x = vec![3.0f64, -2.0];
        let mut adam = Adam::new(2, 0.05);
        for _ in 0..2000 {
            let g: Vec<f64> = x.iter().map(|&v| -2.0 * (v - 1.0)).collect();
            adam.ascend(&mut x, &g);
        }
        assert!(x.iter().all(|&v| (v - 1.0).abs() < 1e-3));
    }
}
