use crate::error::Result;
use crate::policy::{one_hot, Policy};
use crate::sim::SimState;

/// Picks, among the tasks the robot can still finish on time, the one
/// minimising `(travel + service) * remaining slack`, so short jobs about
/// to expire go first. When nothing can be finished on time it takes the
/// quickest task. Ties go to the lowest index.
pub fn myopic_choice(state: &SimState<'_>, robot: usize) -> Option<usize> {
    let t = state.time();
    let mut on_time: Option<(f64, usize)> = None;
    let mut quickest: Option<(f64, usize)> = None;
    for (i, task) in state.instance().tasks.iter().enumerate() {
        if !state.is_feasible(i) {
            continue;
        }
        let dur = state.travel_and_service(robot, i);
        let slack = task.deadline - (t + dur);
        if slack >= 0.0 {
            let score = dur * slack;
            if on_time.is_none_or(|(s, _)| score < s) {
                on_time = Some((score, i));
            }
        }
        if quickest.is_none_or(|(d, _)| dur < d) {
            quickest = Some((dur, i));
        }
    }
    on_time.or(quickest).map(|(_, i)| i)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct MyopicPolicy;

impl Policy for MyopicPolicy {
    fn probabilities(&mut self, state: &SimState<'_>, robot: usize) -> Result<Vec<f64>> {
        let task = myopic_choice(state, robot).ok_or(crate::CapamError::NoFeasibleAction)?;
        Ok(one_hot(state.instance().n_tasks(), task))
    }
}
