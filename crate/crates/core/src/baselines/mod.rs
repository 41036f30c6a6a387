//! Non-learning comparison solvers.

pub mod bigmrta;
pub mod ils;
pub mod matching;
pub mod myopic;
pub mod oracle;

use std::fmt;
use std::str::FromStr;

use crate::error::{CapamError, Result};
use crate::instance::ProblemInstance;
use crate::policy::{run_episode, RandomPolicy, SelectMode};
use crate::sim::{EpisodeResult, SimState};

pub use bigmrta::{big_mrta_choice, big_mrta_incentive, BigMrtaPolicy};
pub use ils::{iterated_local_search, IlsConfig, IlsOutcome};
pub use matching::{max_weight_matching, Matching};
pub use myopic::{myopic_choice, MyopicPolicy};
pub use oracle::{exhaustive_oracle, OracleSolution};

/// One task list per robot, in visiting order.
pub type Plan = Vec<Vec<usize>>;

/// Replays a plan through the simulator. At each of its decision events a
/// robot takes the next listed task that is still available, and retires
/// when its list runs out. Tasks on no list expire unvisited.
pub fn follow_plan(inst: &ProblemInstance, plan: &[Vec<usize>]) -> Result<EpisodeResult> {
    if plan.len() != inst.n_robots() {
        return Err(CapamError::Contract(format!(
            "plan has {} lists for {} robots",
            plan.len(),
            inst.n_robots()
        )));
    }
    let mut seen = vec![false; inst.n_tasks()];
    for &t in plan.iter().flatten() {
        if t >= seen.len() || std::mem::replace(&mut seen[t], true) {
            return Err(CapamError::Contract(format!(
                "task {t} is unknown or listed twice"
            )));
        }
    }
    let mut state = SimState::reset(inst)?;
    let mut cursor = vec![0; plan.len()];
    while let Some(r) = state.decider() {
        loop {
            let Some(&task) = plan[r].get(cursor[r]) else {
                state.retire(r)?;
                break;
            };
            cursor[r] += 1;
            if state.is_feasible(task) {
                state.step(r, task)?;
                break;
            }
        }
    }
    state.into_result(Vec::new())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BaselineSolver {
    Myopic,
    BigMrta,
    Ils,
    Oracle,
    Random,
}

impl BaselineSolver {
    pub const ALL: [BaselineSolver; 5] = [
        BaselineSolver::Myopic,
        BaselineSolver::BigMrta,
        BaselineSolver::Ils,
        BaselineSolver::Oracle,
        BaselineSolver::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineSolver::Myopic => "myopic",
            BaselineSolver::BigMrta => "bigmrta",
            BaselineSolver::Ils => "ils",
            BaselineSolver::Oracle => "oracle",
            BaselineSolver::Random => "random",
        }
    }

    /// Solves one instance. `seed` drives the random policy and local search.
    pub fn solve(
        self,
        inst: &ProblemInstance,
        seed: u64,
        ils: &IlsConfig,
    ) -> Result<EpisodeResult> {
        match self {
            BaselineSolver::Myopic => {
                run_episode(inst, &mut MyopicPolicy, SelectMode::Greedy, seed)
            }
            BaselineSolver::BigMrta => {
                run_episode(inst, &mut BigMrtaPolicy, SelectMode::Greedy, seed)
            }
            BaselineSolver::Random => {
                run_episode(inst, &mut RandomPolicy, SelectMode::Sample, seed)
            }
            BaselineSolver::Ils => {
                let cfg = IlsConfig {
                    seed,
                    ..ils.clone()
                };
                Ok(iterated_local_search(inst, &cfg)?.result)
            }
            BaselineSolver::Oracle => Ok(exhaustive_oracle(inst)?.result),
        }
    }
}

impl fmt::Display for BaselineSolver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineSolver {
    type Err = CapamError;

    fn from_str(s: &str) -> Result<Self> {
        BaselineSolver::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| CapamError::Config(format!("unknown solver `{s}`")))
    }
}
