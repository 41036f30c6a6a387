use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

/// Running statistics of a batch-norm layer. The affine `gamma`/`beta`
/// live with the other parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        BatchNorm {
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }

    /// In train mode normalises with the batch statistics and folds them
    /// into the running averages. A single-row batch has no spread, so it
    /// is normalised with the running statistics instead.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: NormMode,
    ) -> Result<Var> {
        let n = tape.shape(x)[0];
        if mode == NormMode::Eval || n < 2 {
            return self.forward_eval(tape, x, gamma, beta);
        }
        let (y, stats) = tape.batch_norm_train(x, gamma, beta, BN_EPS)?;
        let unbias = n as f64 / (n as f64 - 1.0);
        for j in 0..self.running_mean.len() {
            self.running_mean[j] =
                (1.0 - BN_MOMENTUM) * self.running_mean[j] + BN_MOMENTUM * stats.mean[j];
            self.running_var[j] =
                (1.0 - BN_MOMENTUM) * self.running_var[j] + BN_MOMENTUM * stats.var[j] * unbias;
        }
        Ok(y)
    }

    pub fn forward_eval(&self, tape: &mut Tape, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        tape.batch_norm_eval(
            x,
            gamma,
            beta,
            &self.running_mean,
            &self.running_var,
            BN_EPS,
        )
    }
}

/// Weight of shape `rows x cols` drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn uniform_init(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::new(rows, cols, data).expect("init shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_stats_update_with_momentum() {
        let mut bn = BatchNorm::new(1);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(2, 1, vec![1.0, 3.0]).unwrap());
        let g = tape.constant(Tensor::row(vec![1.0]));
        let b = tape.constant(Tensor::row(vec![0.0]));
        bn.forward(&mut tape, x, g, b, NormMode::Train).unwrap();
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-15);
        // unbiased variance of {1,3} is 2
        assert!((bn.running_var[0] - (0.9 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn eval_mode_is_deterministic_and_stateless() {
        let mut bn = BatchNorm::new(2);
        bn.running_mean = vec![0.5, -1.0];
        bn.running_var = vec![4.0, 0.25];
        let snapshot = bn.clone();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![2.5, 0.0]));
        let g = tape.constant(Tensor::row(vec![1.0, 1.0]));
        let b = tape.constant(Tensor::row(vec![0.0, 0.0]));
        let y1 = bn.forward(&mut tape, x, g, b, NormMode::Eval).unwrap();
        let y2 = bn.forward(&mut tape, x, g, b, NormMode::Eval).unwrap();
        assert_eq!(tape.value(y1), tape.value(y2));
        assert_eq!(bn, snapshot);
        assert!((tape.value(y1).get(0, 0) - 2.0 / (4.0f64 + BN_EPS).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn uniform_init_respects_bound() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let w = uniform_init(16, 8, 16, &mut rng);
        assert!(w.data().iter().all(|v| v.abs() <= 0.25));
        assert!(w.data().iter().any(|v| v.abs() > 0.2));
    }
}
