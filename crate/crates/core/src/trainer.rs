//! REINFORCE with a greedy-rollout baseline.

use std::time::Instant;

use numcore::{Adam, Axis, Tape, Var};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::Norm;
use crate::error::{CapamError, Result};
use crate::instance::{InstanceDistribution, ProblemInstance};
use crate::model::{CapamModel, ModelConfig};
use crate::policy::{run_episode, SelectMode};
use crate::rollout::{lockstep_rollout, Actions, ModelPolicy};
use crate::seed::{derive_seed, rng_for};
use crate::sim::{task_completion_percent, EpisodeResult};
use crate::stats::{mean, paired_t_test_less, PairedTest};

const TRAIN_STREAM: u64 = 1;
const VALIDATION_STREAM: u64 = 2;
const SAMPLE_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub samples_per_epoch: usize,
    pub batch_size: usize,
    pub validation_size: usize,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
    /// Baseline refresh threshold for the one-sided paired t-test.
    pub significance: f64,
    pub seed: u64,
    pub distribution: InstanceDistribution,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            samples_per_epoch: 500_000,
            batch_size: 500,
            validation_size: 10_000,
            learning_rate: 1e-4,
            max_grad_norm: 1.0,
            significance: 0.05,
            seed: 0,
            distribution: InstanceDistribution::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !self.samples_per_epoch.is_multiple_of(self.batch_size) {
            return Err(CapamError::Config(format!(
                "batch size {} must divide samples per epoch {}",
                self.batch_size, self.samples_per_epoch
            )));
        }
        if self.validation_size == 0 {
            return Err(CapamError::Config("validation set is empty".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.max_grad_norm > 0.0) {
            return Err(CapamError::Config(
                "learning rate must be >= 0 and clip norm > 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.significance) {
            return Err(CapamError::Config("significance must lie in [0, 1]".into()));
        }
        self.model.validate()
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.samples_per_epoch / self.batch_size
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchMetrics {
    pub epoch: usize,
    pub batch: usize,
    pub mean_cost: f64,
    pub mean_advantage: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub baseline_updated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub batches: Vec<BatchMetrics>,
    pub validation_cost: f64,
    pub baseline_cost: f64,
    pub test: PairedTest,
    pub baseline_updated: bool,
}

/// Greedy or sampled episodes of `model` (evaluation-mode batch-norm), one
/// per instance, in parallel. Results are in instance order.
pub fn rollout_batch(
    model: &CapamModel,
    instances: &[ProblemInstance],
    mode: SelectMode,
    seeds: &[u64],
) -> Result<Vec<EpisodeResult>> {
    if seeds.len() != instances.len() {
        return Err(CapamError::Contract(
            "one seed per instance required".into(),
        ));
    }
    instances
        .par_iter()
        .zip(seeds)
        .map(|(inst, &seed)| run_episode(inst, &mut ModelPolicy::new(model), mode, seed))
        .collect()
}

fn greedy_costs(model: &CapamModel, instances: &[ProblemInstance]) -> Result<Vec<f64>> {
    let seeds = vec![0; instances.len()];
    Ok(rollout_batch(model, instances, SelectMode::Greedy, &seeds)?
        .iter()
        .map(|r| r.f_cost)
        .collect())
}

/// `mean_e (cost_e - baseline_e) * log p_e`; the baseline is a constant.
pub fn reinforce_loss(
    tape: &mut Tape,
    log_probs: &[Var],
    costs: &[f64],
    baselines: &[f64],
) -> Result<Var> {
    if log_probs.is_empty() || log_probs.len() != costs.len() || costs.len() != baselines.len() {
        return Err(CapamError::Contract(
            "loss needs equally many log-probs, costs and baselines".into(),
        ));
    }
    let mut terms = Vec::with_capacity(log_probs.len());
    for (e, ((&lp, &c), &b)) in log_probs.iter().zip(costs).zip(baselines).enumerate() {
        let v = tape.value(lp).item();
        if !v.is_finite() {
            return Err(CapamError::Policy(format!(
                "episode {e} has log-probability {v}"
            )));
        }
        terms.push(tape.scale(lp, c - b));
    }
    let row = if terms.len() == 1 {
        terms[0]
    } else {
        tape.concat(Axis::Cols, &terms)?
    };
    Ok(tape.mean(row))
}

pub struct Trainer {
    pub config: TrainConfig,
    pub learner: CapamModel,
    pub baseline: CapamModel,
    pub optimizer: Adam,
    validation: Vec<ProblemInstance>,
    baseline_costs: Vec<f64>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let learner = CapamModel::new(config.model.clone(), config.seed)?;
        let mut rng = rng_for(config.seed, &[VALIDATION_STREAM]);
        let validation = (0..config.validation_size)
            .map(|_| config.distribution.sample(&mut rng))
            .collect::<Result<Vec<_>>>()?;
        let baseline_costs = greedy_costs(&learner, &validation)?;
        Ok(Trainer {
            optimizer: Adam::new(config.learning_rate),
            baseline: learner.clone(),
            learner,
            validation,
            baseline_costs,
            config,
        })
    }

    pub fn validation_set(&self) -> &[ProblemInstance] {
        &self.validation
    }

    /// Fresh training instances of one batch; a pure function of the seed.
    pub fn batch_instances(&self, epoch: usize, batch: usize) -> Result<Vec<ProblemInstance>> {
        let mut rng = rng_for(
            self.config.seed,
            &[TRAIN_STREAM, epoch as u64, batch as u64],
        );
        (0..self.config.batch_size)
            .map(|_| self.config.distribution.sample(&mut rng))
            .collect()
    }

    /// One policy-gradient update on a fresh batch.
    pub fn train_batch(&mut self, epoch: usize, batch: usize) -> Result<BatchMetrics> {
        let instances = self.batch_instances(epoch, batch)?;
        let seeds: Vec<u64> = (0..instances.len())
            .map(|i| {
                derive_seed(
                    self.config.seed,
                    &[SAMPLE_STREAM, epoch as u64, batch as u64, i as u64],
                )
            })
            .collect();
        let baselines = greedy_costs(&self.baseline, &instances)?;

        let mut tape = Tape::new();
        let vars = self.learner.params.register(&mut tape);
        let episodes = lockstep_rollout(
            &mut tape,
            &vars,
            &self.learner.config,
            Norm::Train(&mut self.learner.bn),
            &instances,
            Actions::Choose {
                mode: SelectMode::Sample,
                seeds: &seeds,
            },
        )?;
        let costs: Vec<f64> = episodes.iter().map(|e| e.result.f_cost).collect();
        let log_probs: Vec<Var> = episodes.iter().map(|e| e.log_prob).collect();
        let loss = reinforce_loss(&mut tape, &log_probs, &costs, &baselines)?;
        let mut grads = vars.gradients(&tape.backward(loss)?);
        let grad_norm = grads.clip_global_norm(self.config.max_grad_norm);
        self.optimizer.step(&mut self.learner.params, &grads)?;

        let advantages: Vec<f64> = costs.iter().zip(&baselines).map(|(c, b)| c - b).collect();
        Ok(BatchMetrics {
            epoch,
            batch,
            mean_cost: mean(&costs),
            mean_advantage: mean(&advantages),
            grad_norm,
            baseline_updated: false,
        })
    }

    /// Replaces the baseline with the learner when the learner's greedy cost
    /// on the validation set is significantly lower.
    pub fn maybe_update_baseline(&mut self) -> Result<(bool, PairedTest, f64)> {
        let learner_costs = greedy_costs(&self.learner, &self.validation)?;
        let test = paired_t_test_less(&learner_costs, &self.baseline_costs);
        let learner_mean = mean(&learner_costs);
        let updated = test.mean_diff < 0.0 && test.p_value < self.config.significance;
        if updated {
            self.baseline = self.learner.clone();
            self.baseline_costs = learner_costs;
        }
        Ok((updated, test, learner_mean))
    }

    pub fn baseline_validation_cost(&self) -> f64 {
        mean(&self.baseline_costs)
    }

    pub fn train_epoch(&mut self, epoch: usize) -> Result<EpochReport> {
        let mut batches = Vec::with_capacity(self.config.batches_per_epoch());
        for b in 0..self.config.batches_per_epoch() {
            batches.push(self.train_batch(epoch, b)?);
        }
        let baseline_cost = self.baseline_validation_cost();
        let (updated, test, validation_cost) = self.maybe_update_baseline()?;
        if let Some(last) = batches.last_mut() {
            last.baseline_updated = updated;
        }
        Ok(EpochReport {
            epoch,
            batches,
            validation_cost,
            baseline_cost,
            test,
            baseline_updated: updated,
        })
    }

    /// Runs every epoch, calling `on_epoch` after each.
    pub fn run(
        &mut self,
        mut on_epoch: impl FnMut(&Trainer, &EpochReport) -> Result<()>,
    ) -> Result<Vec<EpochReport>> {
        let mut reports = Vec::with_capacity(self.config.epochs);
        for epoch in 0..self.config.epochs {
            let report = self.train_epoch(epoch)?;
            on_epoch(self, &report)?;
            reports.push(report);
        }
        Ok(reports)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub f_cost: f64,
    pub completion_pct: f64,
    pub latency_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub rows: Vec<EvalRow>,
    pub results: Vec<EpisodeResult>,
    pub mean_cost: f64,
    pub mean_completion: f64,
    pub mean_latency_ms: f64,
}

impl EvalSummary {
    pub fn from_rows(rows: Vec<EvalRow>, results: Vec<EpisodeResult>) -> Self {
        let col = |f: fn(&EvalRow) -> f64| mean(&rows.iter().map(f).collect::<Vec<_>>());
        EvalSummary {
            mean_cost: col(|r| r.f_cost),
            mean_completion: col(|r| r.completion_pct),
            mean_latency_ms: col(|r| r.latency_ms),
            rows,
            results,
        }
    }
}

/// Greedy evaluation; latency is the wall-clock time to produce each full
/// assignment sequence.
pub fn evaluate(model: &CapamModel, instances: &[ProblemInstance]) -> Result<EvalSummary> {
    let out: Vec<(EvalRow, EpisodeResult)> = instances
        .par_iter()
        .map(|inst| {
            let start = Instant::now();
            let r = run_episode(inst, &mut ModelPolicy::new(model), SelectMode::Greedy, 0)?;
            let latency_ms = start.elapsed().as_secs_f64() * 1e3;
            Ok((
                EvalRow {
                    f_cost: r.f_cost,
                    completion_pct: task_completion_percent(&r),
                    latency_ms,
                },
                r,
            ))
        })
        .collect::<Result<_>>()?;
    let (rows, results) = out.into_iter().unzip();
    Ok(EvalSummary::from_rows(rows, results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::generate_instance;
    use numcore::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> TrainConfig {
        TrainConfig {
            epochs: 1,
            samples_per_epoch: 8,
            batch_size: 4,
            validation_size: 6,
            learning_rate: 1e-3,
            seed: 3,
            distribution: InstanceDistribution::with_size(5, 2),
            model: ModelConfig {
                k: 1,
                p: 2,
                layers: 1,
                h0: 8,
                hl: 8,
                heads: 2,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn batch_size_must_divide_samples() {
        let cfg = TrainConfig {
            samples_per_epoch: 10,
            batch_size: 4,
            ..tiny()
        };
        assert!(matches!(Trainer::new(cfg), Err(CapamError::Config(_))));
    }

    #[test]
    fn zero_advantage_gives_zero_loss_and_gradient() {
        let mut tape = Tape::new();
        let p = tape.param(Tensor::row(vec![0.3, -0.2]));
        let lp = tape.sum(p);
        let loss = reinforce_loss(&mut tape, &[lp, lp], &[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(tape.value(loss).item(), 0.0);
        assert_eq!(tape.backward(loss).unwrap().get(p).data(), &[0.0, 0.0]);
    }

    #[test]
    fn advantage_sign_flips_loss() {
        let mut tape = Tape::new();
        let lp = tape.param(Tensor::scalar(-1.5));
        let a = reinforce_loss(&mut tape, &[lp], &[2.0], &[1.0]).unwrap();
        let b = reinforce_loss(&mut tape, &[lp], &[1.0], &[2.0]).unwrap();
        assert_eq!(tape.value(a).item(), -tape.value(b).item());
        let mut tape = Tape::new();
        let bad = tape.param(Tensor::scalar(f64::NEG_INFINITY));
        assert!(reinforce_loss(&mut tape, &[bad], &[1.0], &[0.0]).is_err());
    }

    #[test]
    fn epoch_metrics_and_reproducibility() {
        let run = || {
            let mut t = Trainer::new(tiny()).unwrap();
            let r = t.train_epoch(0).unwrap();
            (r.batches, t.learner.params)
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a.len(), 2);
        assert_eq!(a, b);
        assert_eq!(pa, pb);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut t = Trainer::new(TrainConfig {
            learning_rate: 0.0,
            ..tiny()
        })
        .unwrap();
        let before = t.learner.params.clone();
        t.train_epoch(0).unwrap();
        assert_eq!(before, t.learner.params);
    }

    #[test]
    fn identical_models_never_refresh_baseline() {
        let mut t = Trainer::new(tiny()).unwrap();
        let (updated, test, _) = t.maybe_update_baseline().unwrap();
        assert!(!updated);
        assert_eq!(test.p_value, 0.5);
    }

    #[test]
    fn better_learner_replaces_baseline() {
        let mut t = Trainer::new(TrainConfig {
            validation_size: 40,
            ..tiny()
        })
        .unwrap();
        // pretend the baseline is terrible on every validation instance
        t.baseline_costs = t.baseline_costs.iter().map(|c| c + 10.0).collect();
        let (updated, test, _) = t.maybe_update_baseline().unwrap();
        assert!(updated);
        assert_eq!(test.p_value, 0.0);
        assert_eq!(t.baseline.params, t.learner.params);
    }

    #[test]
    fn batch_of_one_and_greedy_determinism() {
        let m = CapamModel::new(tiny().model, 1).unwrap();
        let inst = generate_instance(6, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let a = rollout_batch(&m, std::slice::from_ref(&inst), SelectMode::Greedy, &[1]).unwrap();
        let b = rollout_batch(&m, std::slice::from_ref(&inst), SelectMode::Greedy, &[2]).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a, b);
    }

    #[test]
    fn evaluation_aggregates_per_instance_rows() {
        let m = CapamModel::new(tiny().model, 1).unwrap();
        let insts: Vec<_> = (0..5)
            .map(|s| generate_instance(6, 2, &mut ChaCha8Rng::seed_from_u64(s)).unwrap())
            .collect();
        let s = evaluate(&m, &insts).unwrap();
        let mc = s.rows.iter().map(|r| r.f_cost).sum::<f64>() / 5.0;
        assert!((s.mean_cost - mc).abs() < 1e-12);
        for (row, r) in s.rows.iter().zip(&s.results) {
            assert_eq!(row.completion_pct, task_completion_percent(r));
        }
    }
}
