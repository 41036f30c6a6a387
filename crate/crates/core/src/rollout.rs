//! Running the learned policy: single-episode inference through the
//! [`Policy`] interface and differentiable lockstep rollouts for training.

use numcore::{Axis, BatchNorm, ParamVars, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decoder::{
    self, build_context, glimpse, log_probs, project_nodes, refine, NodeCache, Norm,
};
use crate::encoder::encode;
use crate::error::{CapamError, Result};
use crate::instance::ProblemInstance;
use crate::model::{CapamModel, ModelConfig};
use crate::policy::{select, Policy, SelectMode};
use crate::sim::{EpisodeResult, SimState};
use crate::taskgraph::TaskGraph;

/// Encodes an instance and projects its nodes for the decoder.
pub fn prepare(
    tape: &mut Tape,
    vars: &ParamVars,
    cfg: &ModelConfig,
    inst: &ProblemInstance,
) -> Result<NodeCache> {
    let graph = TaskGraph::build(inst, cfg.features, cfg.k)?;
    let emb = encode(tape, &graph, vars, cfg)?;
    project_nodes(tape, emb, vars, cfg)
}

/// Evaluation-mode policy backed by a model; one tape per episode.
pub struct ModelPolicy<'m> {
    model: &'m CapamModel,
    episode: Option<(Tape, ParamVars, NodeCache)>,
}

impl<'m> ModelPolicy<'m> {
    pub fn new(model: &'m CapamModel) -> Self {
        ModelPolicy {
            model,
            episode: None,
        }
    }
}

impl Policy for ModelPolicy<'_> {
    fn begin_episode(&mut self, inst: &ProblemInstance) -> Result<()> {
        let mut tape = Tape::new();
        let vars = self.model.params.register(&mut tape);
        let cache = prepare(&mut tape, &vars, &self.model.config, inst)?;
        self.episode = Some((tape, vars, cache));
        Ok(())
    }

    fn probabilities(&mut self, state: &SimState<'_>, robot: usize) -> Result<Vec<f64>> {
        let (tape, vars, cache) = self
            .episode
            .as_mut()
            .ok_or_else(|| CapamError::Contract("begin_episode was not called".into()))?;
        decoder::action_distribution(
            tape,
            cache,
            state,
            robot,
            vars,
            &self.model.bn,
            &self.model.config,
        )
    }
}

/// How a lockstep rollout picks actions.
pub enum Actions<'a> {
    /// Select with `mode`; episode `e` draws from a generator seeded with `seeds[e]`.
    Choose { mode: SelectMode, seeds: &'a [u64] },
    /// Replay recorded task choices, one list per episode in decision order.
    Forced(&'a [Vec<usize>]),
}

pub struct TapeEpisode {
    pub result: EpisodeResult,
    /// Sum of the log-probabilities of the chosen actions.
    pub log_prob: Var,
}

/// Runs all `instances` together on one tape. At every round each unfinished
/// episode takes one decision; the round's glimpses share one batch-norm
/// call, which is what gives training-mode batch statistics their batch.
pub fn lockstep_rollout(
    tape: &mut Tape,
    vars: &ParamVars,
    cfg: &ModelConfig,
    mut bn: Norm<'_>,
    instances: &[ProblemInstance],
    actions: Actions<'_>,
) -> Result<Vec<TapeEpisode>> {
    let n_ep = instances.len();
    if let Actions::Choose { seeds, .. } = &actions {
        if seeds.len() != n_ep {
            return Err(CapamError::Contract(
                "one seed per instance required".into(),
            ));
        }
    }
    if let Actions::Forced(lists) = &actions {
        if lists.len() != n_ep {
            return Err(CapamError::Contract(
                "one action list per instance required".into(),
            ));
        }
    }
    let caches = instances
        .iter()
        .map(|inst| prepare(tape, vars, cfg, inst))
        .collect::<Result<Vec<_>>>()?;
    let mut states = instances
        .iter()
        .map(SimState::reset)
        .collect::<Result<Vec<_>>>()?;
    let mut rngs: Vec<ChaCha8Rng> = match &actions {
        Actions::Choose { seeds, .. } => seeds
            .iter()
            .map(|&s| ChaCha8Rng::seed_from_u64(s))
            .collect(),
        Actions::Forced(_) => Vec::new(),
    };
    let mut terms: Vec<Vec<Var>> = vec![Vec::new(); n_ep];
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); n_ep];

    loop {
        let active: Vec<(usize, usize)> = states
            .iter()
            .enumerate()
            .filter_map(|(e, s)| s.decider().map(|r| (e, r)))
            .collect();
        if active.is_empty() {
            break;
        }
        let mut masks = Vec::with_capacity(active.len());
        let mut glimpses = Vec::with_capacity(active.len());
        for &(e, r) in &active {
            let mask = states[e].feasible_mask();
            let ctx = build_context(&states[e], r);
            glimpses.push(glimpse(tape, &ctx, &caches[e], &mask, vars, cfg)?);
            masks.push(mask);
        }
        let stacked = if glimpses.len() == 1 {
            glimpses[0]
        } else {
            tape.concat(Axis::Rows, &glimpses)?
        };
        let norm = match &mut bn {
            Norm::Train(b) => Norm::Train(b),
            Norm::Eval(b) => Norm::Eval(b),
        };
        let refined = refine(tape, stacked, vars, norm)?;
        for (row, (&(e, r), mask)) in active.iter().zip(&masks).enumerate() {
            let g = if active.len() == 1 {
                refined
            } else {
                tape.slice(Axis::Rows, refined, row, row + 1)?
            };
            let lp = log_probs(tape, g, &caches[e], mask, cfg)?;
            let task = match &actions {
                Actions::Choose { mode, .. } => {
                    let probs = decoder::probabilities(tape, lp);
                    select(&probs, *mode, &mut rngs[e])?.0
                }
                Actions::Forced(lists) => *lists[e].get(terms[e].len()).ok_or_else(|| {
                    CapamError::Contract(format!("recorded actions of episode {e} ran out"))
                })?,
            };
            let chosen = tape.pick(lp, task)?;
            values[e].push(tape.value(chosen).item());
            terms[e].push(chosen);
            states[e].step(r, task)?;
        }
    }

    let mut out = Vec::with_capacity(n_ep);
    for ((state, ts), vs) in states.into_iter().zip(terms).zip(values) {
        let row = if ts.len() == 1 {
            ts[0]
        } else {
            tape.concat(Axis::Cols, &ts)?
        };
        let log_prob = tape.sum(row);
        out.push(TapeEpisode {
            result: state.into_result(vs)?,
            log_prob,
        });
    }
    Ok(out)
}

/// Log-probability of a recorded trajectory with evaluation-mode batch-norm,
/// as a differentiable scalar.
pub fn trajectory_log_prob(
    tape: &mut Tape,
    vars: &ParamVars,
    cfg: &ModelConfig,
    bn: &BatchNorm,
    inst: &ProblemInstance,
    tasks: &[usize],
) -> Result<Var> {
    let lists = [tasks.to_vec()];
    let ep = lockstep_rollout(
        tape,
        vars,
        cfg,
        Norm::Eval(bn),
        std::slice::from_ref(inst),
        Actions::Forced(&lists),
    )?;
    Ok(ep[0].log_prob)
}
