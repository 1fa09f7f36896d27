//! Loss and the adaptive-moment optimizer.

use super::matrix::Mat;
use super::ModelError;

/// Mean squared error over all nodes and output dimensions, plus the adjoint
/// of the prediction.
pub fn mse_loss(prediction: &Mat, target: &Mat) -> Result<(f64, Mat), ModelError> {
    if prediction.rows != target.rows || prediction.cols != target.cols {
        return Err(ModelError::Shape(format!(
            "prediction {}x{} vs target {}x{}",
            prediction.rows, prediction.cols, target.rows, target.cols
        )));
    }
    let n = (prediction.rows * prediction.cols) as f64;
    let mut loss = 0.0;
    let mut d_pred = Mat::zeros(prediction.rows, prediction.cols);
    for (i, (p, t)) in prediction.data.iter().zip(&target.data).enumerate() {
        let diff = p - t;
        loss += diff * diff;
        d_pred.data[i] = 2.0 * diff / n;
    }
    Ok((loss / n, d_pred))
}

#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates with bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> AdamState {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, data: &mut [f64], grads: &[f64], lr: f64, hp: &AdamParams) {
        debug_assert_eq!(data.len(), grads.len());
        debug_assert_eq!(data.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - hp.beta1.powi(self.t as i32);
        let bc2 = 1.0 - hp.beta2.powi(self.t as i32);
        for i in 0..data.len() {
            let g = grads[i];
            self.m[i] = hp.beta1 * self.m[i] + (1.0 - hp.beta1) * g;
            self.v[i] = hp.beta2 * self.v[i] + (1.0 - hp.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            data[i] -= lr * mhat / (vhat.sqrt() + hp.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_is_zero_loss_and_gradient() {
        let p = Mat::from_rows(vec![vec![1.0, -2.0], vec![0.5, 3.0]]);
        let (loss, d) = mse_loss(&p, &p).unwrap();
        assert_eq!(loss, 0.0);
        assert!(d.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adam_converges_on_a_quadratic() {
        // f(x) = (x - 3)^2, minimizer 3; gradient 2(x - 3).
        let mut x = vec![0.0f64];
        let mut adam = AdamState::new(1);
        let hp = AdamParams::default();
        for _ in 0..2000 {
            let g = vec![2.0 * (x[0] - 3.0)];
            adam.step(&mut x, &g, 0.05, &hp);
        }
        assert!((x[0] - 3.0).abs() < 1e-6, "x = {}", x[0]);
    }
}
