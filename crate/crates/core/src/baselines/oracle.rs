//! Exhaustive search over every decision sequence of tiny instances.

use crate::baselines::myopic::MyopicPolicy;
use crate::baselines::{follow_plan, Plan};
use crate::error::{CapamError, Result};
use crate::instance::ProblemInstance;
use crate::policy::{run_episode, SelectMode};
use crate::sim::{penalty, EpisodeResult, SimState, TaskStatus};

pub const ORACLE_MAX_TASKS: usize = 8;
pub const ORACLE_MAX_ROBOTS: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleSolution {
    pub f_cost: f64,
    pub plan: Plan,
    pub result: EpisodeResult,
    /// Search nodes visited.
    pub explored: u64,
}

/// Penalty already fixed by the state: expired tasks, finished tasks and
/// tasks whose service is under way. Never exceeds the final cost.
fn committed_cost(state: &SimState<'_>) -> f64 {
    let inst = state.instance();
    (0..inst.n_tasks())
        .map(|i| {
            let d = inst.tasks[i].deadline;
            match state.status()[i] {
                TaskStatus::Missed => 1.0,
                TaskStatus::Completed => penalty(TaskStatus::Completed, state.finish_times()[i], d),
                TaskStatus::Active => match state.claimed_by(i) {
                    Some(r) => {
                        penalty(TaskStatus::Completed, Some(state.robots()[r].busy_until), d)
                    }
                    None => 0.0,
                },
            }
        })
        .sum()
}

struct Search {
    best_cost: f64,
    best_plan: Plan,
    plan: Plan,
    explored: u64,
}

impl Search {
    fn visit(&mut self, state: &SimState<'_>) -> Result<()> {
        self.explored += 1;
        let Some(robot) = state.decider() else {
            let (_, cost) = state.episode_cost()?;
            if cost < self.best_cost {
                self.best_cost = cost;
                self.best_plan = self.plan.clone();
            }
            return Ok(());
        };
        if committed_cost(state) >= self.best_cost {
            return Ok(());
        }
        for task in 0..state.instance().n_tasks() {
            if !state.is_feasible(task) {
                continue;
            }
            let mut next = state.clone();
            next.step(robot, task)?;
            self.plan[robot].push(task);
            self.visit(&next)?;
            self.plan[robot].pop();
        }
        let mut next = state.clone();
        next.retire(robot)?;
        self.visit(&next)
    }
}

/// Minimum-cost decision sequence, found by depth-first search over every
/// choice of task (or retirement) at every decision event, with the
/// committed penalty as a pruning bound.
pub fn exhaustive_oracle(inst: &ProblemInstance) -> Result<OracleSolution> {
    if inst.n_tasks() > ORACLE_MAX_TASKS || inst.n_robots() > ORACLE_MAX_ROBOTS {
        return Err(CapamError::SizeGuard(format!(
            "exhaustive search handles at most {ORACLE_MAX_TASKS} tasks and {ORACLE_MAX_ROBOTS} robots, got {} and {}",
            inst.n_tasks(),
            inst.n_robots()
        )));
    }
    let seed_plan = run_episode(inst, &mut MyopicPolicy, SelectMode::Greedy, 0)?
        .robot_sequences(inst.n_robots());
    let seed_cost = follow_plan(inst, &seed_plan)?.f_cost;
    let mut search = Search {
        best_cost: seed_cost,
        best_plan: seed_plan,
        plan: vec![Vec::new(); inst.n_robots()],
        explored: 0,
    };
    search.visit(&SimState::reset(inst)?)?;
    let result = follow_plan(inst, &search.best_plan)?;
    Ok(OracleSolution {
        f_cost: search.best_cost,
        plan: search.best_plan,
        result,
        explored: search.explored,
    })
}
