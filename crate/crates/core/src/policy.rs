//! Action selection and the episode loop shared by every solver.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CapamError, Result};
use crate::instance::ProblemInstance;
use crate::sim::{EpisodeResult, SimState};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectMode {
    #[default]
    Greedy,
    Sample,
}

/// Anything that maps a decision event to a distribution over tasks.
pub trait Policy {
    /// Called once per episode before the first decision.
    fn begin_episode(&mut self, _inst: &ProblemInstance) -> Result<()> {
        Ok(())
    }

    /// Probabilities over all `N` tasks for the deciding `robot`.
    /// Unavailable tasks must get exactly zero.
    fn probabilities(&mut self, state: &SimState<'_>, robot: usize) -> Result<Vec<f64>>;
}

impl<P: Policy + ?Sized> Policy for &mut P {
    fn begin_episode(&mut self, inst: &ProblemInstance) -> Result<()> {
        (**self).begin_episode(inst)
    }

    fn probabilities(&mut self, state: &SimState<'_>, robot: usize) -> Result<Vec<f64>> {
        (**self).probabilities(state, robot)
    }
}

/// Greedy picks the most probable task (lowest index on ties); sample draws
/// from the categorical distribution. Returns the index and its log-probability.
pub fn select(probs: &[f64], mode: SelectMode, rng: &mut impl Rng) -> Result<(usize, f64)> {
    let mut best: Option<usize> = None;
    let mut last_positive = None;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = Some(i);
            if best.is_none_or(|b| p > probs[b]) {
                best = Some(i);
            }
        }
    }
    let idx = match mode {
        SelectMode::Greedy => best,
        SelectMode::Sample => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = last_positive;
            for (i, &p) in probs.iter().enumerate() {
                if p > 0.0 {
                    acc += p;
                    if u < acc {
                        chosen = Some(i);
                        break;
                    }
                }
            }
            chosen
        }
    };
    let idx = idx.ok_or(CapamError::NoFeasibleAction)?;
    Ok((idx, probs[idx].ln()))
}

fn check_distribution(probs: &[f64], mask: &[bool]) -> Result<()> {
    if probs.len() != mask.len() {
        return Err(CapamError::Policy(format!(
            "distribution over {} tasks, instance has {}",
            probs.len(),
            mask.len()
        )));
    }
    let mut total = 0.0;
    for (i, (&p, &m)) in probs.iter().zip(mask).enumerate() {
        if !p.is_finite() || p < 0.0 {
            return Err(CapamError::Policy(format!("probability {p} for task {i}")));
        }
        if !m && p != 0.0 {
            return Err(CapamError::Policy(format!(
                "probability {p} on unavailable task {i}"
            )));
        }
        total += p;
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(CapamError::Policy(format!("probabilities sum to {total}")));
    }
    Ok(())
}

/// Runs one episode to termination.
pub fn run_episode<P: Policy + ?Sized>(
    inst: &ProblemInstance,
    policy: &mut P,
    mode: SelectMode,
    seed: u64,
) -> Result<EpisodeResult> {
    policy.begin_episode(inst)?;
    let mut state = SimState::reset(inst)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log_probs = Vec::with_capacity(inst.n_tasks());
    while let Some(robot) = state.decider() {
        let mask = state.feasible_mask();
        assert!(mask.contains(&true), "decider without an available task");
        let probs = policy.probabilities(&state, robot)?;
        check_distribution(&probs, &mask)?;
        let (task, lp) = select(&probs, mode, &mut rng)?;
        log_probs.push(lp);
        state.step(robot, task)?;
    }
    state.into_result(log_probs)
}

/// Uniform over the available tasks.
#[derive(Clone, Copy, Debug, Default)]
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn probabilities(&mut self, state: &SimState<'_>, _robot: usize) -> Result<Vec<f64>> {
        let mask = state.feasible_mask();
        let n = mask.iter().filter(|&&m| m).count() as f64;
        Ok(mask
            .iter()
            .map(|&m| if m { 1.0 / n } else { 0.0 })
            .collect())
    }
}

/// Probability one on `task`.
pub fn one_hot(n: usize, task: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[task] = 1.0;
    v
}
