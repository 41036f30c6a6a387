//! Finite-difference check of the whole model on a small configuration.

use numcore::{grad_check, BatchNorm, GradCheckOptions, GradCheckReport, Var};

use crate::decoder::Norm;
use crate::error::{CapamError, Result};
use crate::instance::{generate_instance, ProblemInstance};
use crate::model::{CapamModel, ModelConfig};
use crate::policy::SelectMode;
use crate::rollout::{lockstep_rollout, Actions};
use crate::seed::{derive_seed, rng_for};
use crate::trainer::reinforce_loss;

/// Threshold on the maximum relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        k: 2,
        p: 3,
        layers: 1,
        h0: 8,
        hl: 8,
        heads: 2,
        ..Default::default()
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckCase {
    pub name: &'static str,
    pub report: GradCheckReport,
}

fn batch_loss(
    tape: &mut numcore::Tape,
    vars: &numcore::ParamVars,
    model: &CapamModel,
    bn: Norm<'_>,
    insts: &[ProblemInstance],
    lists: &[Vec<usize>],
    advantages: &[f64],
) -> Result<Var> {
    let eps = lockstep_rollout(tape, vars, &model.config, bn, insts, Actions::Forced(lists))?;
    let lps: Vec<Var> = eps.iter().map(|e| e.log_prob).collect();
    let zeros = vec![0.0; advantages.len()];
    reinforce_loss(tape, &lps, advantages, &zeros)
}

/// Finite-difference step and denominator floor. Entries whose gradient is
/// below the floor are judged on absolute error `GRADCHECK_TOLERANCE * floor`;
/// central differences of an `O(1)` loss carry roundoff of about `1e-10` at
/// this step, which a smaller floor would report as error.
pub fn gradcheck_options() -> GradCheckOptions {
    GradCheckOptions {
        step: 1e-5,
        floor: 1e-4,
    }
}

/// Points closer than this to a ReLU kink are redrawn: a perturbation of
/// `step` must not cross one.
pub const MIN_KINK_MARGIN: f64 = 1e-3;

const GRADCHECK_BATCH: usize = 3;
const MAX_DRAWS: u64 = 64;

struct Draw {
    insts: Vec<ProblemInstance>,
    lists: Vec<Vec<usize>>,
}

fn draw(model: &CapamModel, seed: u64, attempt: u64) -> Result<(Draw, f64)> {
    let mut rng = rng_for(seed, &[1, attempt]);
    let insts = (0..GRADCHECK_BATCH)
        .map(|_| generate_instance(4, 2, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let seeds: Vec<u64> = (0..GRADCHECK_BATCH as u64)
        .map(|i| derive_seed(seed, &[2, attempt, i]))
        .collect();
    let mut tape = numcore::Tape::new();
    let vars = model.params.register(&mut tape);
    let sampled = lockstep_rollout(
        &mut tape,
        &vars,
        &model.config,
        Norm::Eval(&model.bn),
        &insts,
        Actions::Choose {
            mode: SelectMode::Sample,
            seeds: &seeds,
        },
    )?;
    let lists: Vec<Vec<usize>> = sampled.iter().map(|e| e.result.sequence.clone()).collect();
    let mut margin = tape.kink_margin();
    let mut tape = numcore::Tape::new();
    let vars = model.params.register(&mut tape);
    let mut bn = model.bn.clone();
    lockstep_rollout(
        &mut tape,
        &vars,
        &model.config,
        Norm::Train(&mut bn),
        &insts,
        Actions::Forced(&lists),
    )?;
    margin = margin.min(tape.kink_margin());
    Ok((Draw { insts, lists }, margin))
}

/// Checks the policy-gradient loss of sampled trajectories on `N = 4`,
/// two-robot instances: one instance with evaluation-mode batch-norm, and a
/// batch of three with training-mode batch-norm. Instance draws that sit within
/// [`MIN_KINK_MARGIN`] of a ReLU kink are replaced by the next draw.
pub fn run_gradcheck(seed: u64) -> Result<Vec<GradCheckCase>> {
    let model = CapamModel::new(gradcheck_config(), derive_seed(seed, &[0]))?;
    let mut chosen = None;
    for attempt in 0..MAX_DRAWS {
        let (d, margin) = draw(&model, seed, attempt)?;
        if margin >= MIN_KINK_MARGIN {
            chosen = Some(d);
            break;
        }
    }
    let Draw { insts, lists } =
        chosen.ok_or_else(|| CapamError::Contract("no draw kept clear of ReLU kinks".into()))?;
    let advantages: Vec<f64> = (0..GRADCHECK_BATCH).map(|i| 1.3 - 0.9 * i as f64).collect();
    let opts = gradcheck_options();

    let eval = grad_check(
        &model.params,
        |tape, vars| -> Result<Var> {
            batch_loss(
                tape,
                vars,
                &model,
                Norm::Eval(&model.bn),
                &insts[..1],
                &lists[..1],
                &advantages[..1],
            )
        },
        &opts,
    )?;
    let train = grad_check(
        &model.params,
        |tape, vars| -> Result<Var> {
            let mut bn: BatchNorm = model.bn.clone();
            batch_loss(
                tape,
                vars,
                &model,
                Norm::Train(&mut bn),
                &insts,
                &lists,
                &advantages,
            )
        },
        &opts,
    )?;
    Ok(vec![
        GradCheckCase {
            name: "eval-mode, 1 instance",
            report: eval,
        },
        GradCheckCase {
            name: "train-mode, batch 3",
            report: train,
        },
    ])
}
