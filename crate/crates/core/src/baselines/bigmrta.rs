//! Bipartite incentive graph plus maximum-weight matching, rebuilt at every
//! decision event.

use crate::baselines::matching::max_weight_matching;
use crate::baselines::myopic::myopic_choice;
use crate::error::{CapamError, Result};
use crate::policy::{one_hot, Policy};
use crate::sim::SimState;

/// `exp(-(travel + service) / d_max)` if `robot`, starting when it is next
/// free, can finish `task` by its deadline; zero otherwise.
pub fn big_mrta_incentive(state: &SimState<'_>, robot: usize, task: usize) -> f64 {
    let inst = state.instance();
    let start = state.robots()[robot].busy_until.max(state.time());
    let dur = state.travel_and_service(robot, task);
    if start + dur > inst.tasks[task].deadline {
        return 0.0;
    }
    (-dur / inst.max_deadline()).exp()
}

/// Task matched to `robot` when every active robot is matched against the
/// available tasks, falling back to the myopic rule if it stays unmatched.
pub fn big_mrta_choice(state: &SimState<'_>, robot: usize) -> Option<usize> {
    let tasks: Vec<usize> = (0..state.instance().n_tasks())
        .filter(|&i| state.is_feasible(i))
        .collect();
    let robots: Vec<usize> = (0..state.instance().n_robots())
        .filter(|&j| !state.robots()[j].retired)
        .collect();
    let weights: Vec<Vec<f64>> = robots
        .iter()
        .map(|&j| {
            tasks
                .iter()
                .map(|&i| big_mrta_incentive(state, j, i))
                .collect()
        })
        .collect();
    let matching = max_weight_matching(&weights);
    robots
        .iter()
        .position(|&j| j == robot)
        .and_then(|row| matching.col_of(row))
        .map(|c| tasks[c])
        .or_else(|| myopic_choice(state, robot))
}

#[derive(Clone, Copy, Debug, Default)]
pub struct BigMrtaPolicy;

impl Policy for BigMrtaPolicy {
    fn probabilities(&mut self, state: &SimState<'_>, robot: usize) -> Result<Vec<f64>> {
        let task = big_mrta_choice(state, robot).ok_or(CapamError::NoFeasibleAction)?;
        Ok(one_hot(state.instance().n_tasks(), task))
    }
}
