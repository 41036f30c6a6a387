//! Deterministic event-driven task-allocation environment.
//!
//! A decision event fires whenever a robot becomes free. The free robot
//! picks one still-available task, travels to it at constant speed and
//! serves it for `workload / capacity`; its next event fires when the
//! service ends. Simultaneous events are ordered by robot index.

use serde::Serialize;

use crate::error::{CapamError, Result};
use crate::instance::ProblemInstance;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Active,
    Completed,
    Missed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobotState {
    /// Last position reached (start, or the most recently finished task).
    pub x: f64,
    pub y: f64,
    pub destination: Option<usize>,
    /// Time of this robot's next decision event.
    pub busy_until: f64,
    /// A retired robot takes no further decisions.
    pub retired: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StatusCounts {
    pub active: usize,
    pub completed: usize,
    pub missed: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Decision {
    pub time: f64,
    pub robot: usize,
    pub task: usize,
    /// Task statuses at the moment of the decision.
    pub counts: StatusCounts,
}

#[derive(Clone, Debug)]
pub struct SimState<'a> {
    inst: &'a ProblemInstance,
    t: f64,
    status: Vec<TaskStatus>,
    finish_time: Vec<Option<f64>>,
    claimed_by: Vec<Option<usize>>,
    robots: Vec<RobotState>,
    decider: Option<usize>,
    sequence: Vec<usize>,
    trace: Vec<Decision>,
}

pub fn distance(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    (ax - bx).hypot(ay - by)
}

impl<'a> SimState<'a> {
    /// Clock at 0, all tasks active, every robot idle at its start with a
    /// decision event at t = 0.
    pub fn reset(inst: &'a ProblemInstance) -> Result<Self> {
        inst.validate()?;
        let robots = inst
            .robots
            .iter()
            .map(|r| RobotState {
                x: r.x,
                y: r.y,
                destination: None,
                busy_until: 0.0,
                retired: false,
            })
            .collect();
        let n = inst.n_tasks();
        let mut s = SimState {
            inst,
            t: 0.0,
            status: vec![TaskStatus::Active; n],
            finish_time: vec![None; n],
            claimed_by: vec![None; n],
            robots,
            decider: None,
            sequence: Vec::with_capacity(n),
            trace: Vec::with_capacity(n),
        };
        s.advance();
        Ok(s)
    }

    pub fn instance(&self) -> &'a ProblemInstance {
        self.inst
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn status(&self) -> &[TaskStatus] {
        &self.status
    }

    pub fn finish_times(&self) -> &[Option<f64>] {
        &self.finish_time
    }

    pub fn robots(&self) -> &[RobotState] {
        &self.robots
    }

    pub fn claimed_by(&self, task: usize) -> Option<usize> {
        self.claimed_by[task]
    }

    /// Robot that must act now, or `None` once the episode is over.
    pub fn decider(&self) -> Option<usize> {
        self.decider
    }

    pub fn sequence(&self) -> &[usize] {
        &self.sequence
    }

    pub fn trace(&self) -> &[Decision] {
        &self.trace
    }

    pub fn is_terminated(&self) -> bool {
        !self.status.contains(&TaskStatus::Active)
    }

    /// Pending decision events `(time, robot)` in processing order.
    pub fn decision_queue(&self) -> Vec<(f64, usize)> {
        let mut q: Vec<(f64, usize)> = self
            .robots
            .iter()
            .enumerate()
            .filter(|(_, r)| !r.retired)
            .map(|(j, r)| (r.busy_until, j))
            .collect();
        q.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        q
    }

    pub fn counts(&self) -> StatusCounts {
        let mut c = StatusCounts {
            active: 0,
            completed: 0,
            missed: 0,
        };
        for s in &self.status {
            match s {
                TaskStatus::Active => c.active += 1,
                TaskStatus::Completed => c.completed += 1,
                TaskStatus::Missed => c.missed += 1,
            }
        }
        c
    }

    pub fn is_feasible(&self, task: usize) -> bool {
        self.status[task] == TaskStatus::Active && self.claimed_by[task].is_none()
    }

    /// Active tasks that no robot is currently heading to or serving.
    pub fn feasible_mask(&self) -> Vec<bool> {
        (0..self.status.len())
            .map(|i| self.is_feasible(i))
            .collect()
    }

    pub fn has_feasible(&self) -> bool {
        (0..self.status.len()).any(|i| self.is_feasible(i))
    }

    /// Travel plus service time for `robot` starting from where it will be
    /// free, to `task`.
    pub fn travel_and_service(&self, robot: usize, task: usize) -> f64 {
        let (px, py) = self.free_position(robot);
        let t = &self.inst.tasks[task];
        distance(px, py, t.x, t.y) / self.inst.speed + t.workload / self.inst.robots[robot].capacity
    }

    /// Where `robot` will be once its current task (if any) is done.
    pub fn free_position(&self, robot: usize) -> (f64, f64) {
        let r = &self.robots[robot];
        match r.destination {
            Some(d) => (self.inst.tasks[d].x, self.inst.tasks[d].y),
            None => (r.x, r.y),
        }
    }

    fn check_decider(&self, robot: usize) -> Result<()> {
        match self.decider {
            Some(d) if d == robot => Ok(()),
            Some(d) => Err(CapamError::Contract(format!(
                "robot {robot} acted but robot {d} is the decider"
            ))),
            None => Err(CapamError::Contract("episode already terminated".into())),
        }
    }

    /// Assigns `task` to the deciding `robot` and advances to the next event.
    pub fn step(&mut self, robot: usize, task: usize) -> Result<()> {
        self.check_decider(robot)?;
        if task >= self.status.len() || !self.is_feasible(task) {
            return Err(CapamError::Contract(format!(
                "task {task} is not available at t = {}",
                self.t
            )));
        }
        self.trace.push(Decision {
            time: self.t,
            robot,
            task,
            counts: self.counts(),
        });
        self.sequence.push(task);
        let dur = self.travel_and_service(robot, task);
        let r = &mut self.robots[robot];
        r.destination = Some(task);
        r.busy_until = self.t + dur;
        self.claimed_by[task] = Some(robot);
        self.advance();
        Ok(())
    }

    /// The deciding robot stops taking tasks for the rest of the episode.
    pub fn retire(&mut self, robot: usize) -> Result<()> {
        self.check_decider(robot)?;
        self.robots[robot].retired = true;
        self.advance();
        Ok(())
    }

    fn next_event(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (j, r) in self.robots.iter().enumerate() {
            if r.retired {
                continue;
            }
            match best {
                Some(b) if self.robots[b].busy_until <= r.busy_until => {}
                _ => best = Some(j),
            }
        }
        best
    }

    fn advance(&mut self) {
        self.decider = None;
        loop {
            let Some(r) = self.next_event() else {
                // Nobody left to act: unclaimed tasks will expire unvisited.
                for i in 0..self.status.len() {
                    if self.is_feasible(i) {
                        self.status[i] = TaskStatus::Missed;
                    }
                }
                return;
            };
            self.t = self.t.max(self.robots[r].busy_until);
            self.complete_due();
            for i in 0..self.status.len() {
                if self.is_feasible(i) && self.inst.tasks[i].deadline < self.t {
                    self.status[i] = TaskStatus::Missed;
                }
            }
            if self.is_terminated() {
                for rob in &mut self.robots {
                    rob.retired = true;
                }
                return;
            }
            if !self.has_feasible() {
                // Only claimed tasks remain, and the available set never grows.
                self.robots[r].retired = true;
                continue;
            }
            self.decider = Some(r);
            return;
        }
    }

    fn complete_due(&mut self) {
        for j in 0..self.robots.len() {
            let r = &self.robots[j];
            if let Some(task) = r.destination {
                if r.busy_until <= self.t {
                    let finish = r.busy_until;
                    let tk = &self.inst.tasks[task];
                    self.status[task] = TaskStatus::Completed;
                    self.finish_time[task] = Some(finish);
                    let r = &mut self.robots[j];
                    r.x = tk.x;
                    r.y = tk.y;
                    r.destination = None;
                }
            }
        }
    }

    /// Per-task penalties and their sum. Late completions cost
    /// `t_f / d`, on-time completions 0, unvisited expirations 1.
    pub fn episode_cost(&self) -> Result<(Vec<f64>, f64)> {
        if !self.is_terminated() {
            return Err(CapamError::Contract(
                "episode cost requested before termination".into(),
            ));
        }
        let penalties: Vec<f64> = self
            .status
            .iter()
            .zip(&self.finish_time)
            .zip(&self.inst.tasks)
            .map(|((s, tf), task)| penalty(*s, *tf, task.deadline))
            .collect();
        let total = penalties.iter().sum();
        Ok((penalties, total))
    }

    pub fn into_result(self, log_probs: Vec<f64>) -> Result<EpisodeResult> {
        let (penalties, f_cost) = self.episode_cost()?;
        Ok(EpisodeResult {
            deadlines: self.inst.tasks.iter().map(|t| t.deadline).collect(),
            sequence: self.sequence,
            finish_times: self.finish_time,
            status: self.status,
            penalties,
            f_cost,
            log_probs,
            trace: self.trace,
        })
    }
}

pub fn penalty(status: TaskStatus, finish: Option<f64>, deadline: f64) -> f64 {
    match (status, finish) {
        (TaskStatus::Completed, Some(tf)) if tf > deadline => tf / deadline,
        (TaskStatus::Completed, _) => 0.0,
        (TaskStatus::Missed, _) => 1.0,
        (TaskStatus::Active, _) => 0.0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeResult {
    /// Tasks in the order they were assigned.
    pub sequence: Vec<usize>,
    pub finish_times: Vec<Option<f64>>,
    pub deadlines: Vec<f64>,
    pub status: Vec<TaskStatus>,
    pub penalties: Vec<f64>,
    pub f_cost: f64,
    /// Log-probability of each chosen action, in decision order.
    pub log_probs: Vec<f64>,
    pub trace: Vec<Decision>,
}

impl EpisodeResult {
    pub fn n_tasks(&self) -> usize {
        self.status.len()
    }

    pub fn on_time(&self) -> usize {
        self.status
            .iter()
            .zip(&self.finish_times)
            .zip(&self.deadlines)
            .filter(|((s, tf), d)| **s == TaskStatus::Completed && tf.is_some_and(|t| t <= **d))
            .count()
    }

    pub fn completed_late(&self) -> usize {
        self.status
            .iter()
            .filter(|s| **s == TaskStatus::Completed)
            .count()
            - self.on_time()
    }

    pub fn missed(&self) -> usize {
        self.status
            .iter()
            .filter(|s| **s == TaskStatus::Missed)
            .count()
    }

    pub fn total_log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }

    /// Task sequence of each robot, from the decision trace.
    pub fn robot_sequences(&self, n_robots: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); n_robots];
        for d in &self.trace {
            out[d.robot].push(d.task);
        }
        out
    }
}

/// Percentage of tasks finished by their deadline.
pub fn task_completion_percent(result: &EpisodeResult) -> f64 {
    100.0 * result.on_time() as f64 / result.n_tasks() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{Robot, TaskNode};

    fn task(x: f64, y: f64, d: f64, w: f64) -> TaskNode {
        TaskNode {
            x,
            y,
            deadline: d,
            workload: w,
        }
    }

    fn robot(x: f64, y: f64, c: f64) -> Robot {
        Robot { x, y, capacity: c }
    }

    fn inst(tasks: Vec<TaskNode>, robots: Vec<Robot>) -> ProblemInstance {
        ProblemInstance::new(tasks, robots).unwrap()
    }

    #[test]
    fn reset_queues_every_robot_at_zero() {
        let p = inst(
            vec![task(10.0, 10.0, 100.0, 10.0)],
            vec![robot(0.0, 0.0, 1.0), robot(5.0, 5.0, 2.0)],
        );
        let s = SimState::reset(&p).unwrap();
        assert_eq!(s.decision_queue(), vec![(0.0, 0), (0.0, 1)]);
        assert_eq!(s.decider(), Some(0));
        assert!(s.status().iter().all(|&st| st == TaskStatus::Active));
        assert_eq!(s.feasible_mask(), vec![true]);
        let again = SimState::reset(&p).unwrap();
        assert_eq!(s.decision_queue(), again.decision_queue());
        assert_eq!(s.robots(), again.robots());
    }

    #[test]
    fn travel_and_service_timing() {
        let p = inst(
            vec![task(3.0, 4.0, 600.0, 10.0), task(90.0, 90.0, 600.0, 10.0)],
            vec![robot(0.0, 0.0, 2.0), robot(100.0, 100.0, 1.0)],
        );
        let mut s = SimState::reset(&p).unwrap();
        s.step(0, 0).unwrap();
        assert_eq!(s.robots()[0].busy_until, 10.0);
        assert_eq!(s.decider(), Some(1));
        assert_eq!(s.feasible_mask(), vec![false, true]);
        s.step(1, 1).unwrap();
        assert_eq!(s.finish_times()[0], Some(10.0));
        assert!(s.is_terminated());
        let r = s.into_result(vec![]).unwrap();
        assert_eq!(r.penalties, vec![0.0, 0.0]);
        assert_eq!(r.f_cost, 0.0);
        assert_eq!(task_completion_percent(&r), 100.0);
    }

    #[test]
    fn late_completion_costs_ratio() {
        // 900 time units of work finishing against a deadline of 600
        let p = inst(
            vec![task(0.0, 0.0, 600.0, 900.0)],
            vec![robot(0.0, 0.0, 1.0)],
        );
        let mut s = SimState::reset(&p).unwrap();
        s.step(0, 0).unwrap();
        let r = s.into_result(vec![]).unwrap();
        assert_eq!(r.finish_times[0], Some(900.0));
        assert_eq!(r.penalties[0], 1.5);
        assert_eq!(r.f_cost, 1.5);
        assert_eq!(r.completed_late(), 1);
        assert_eq!(task_completion_percent(&r), 0.0);
    }

    #[test]
    fn unvisited_expiry_costs_one() {
        let p = inst(
            vec![task(0.0, 0.0, 200.0, 150.0), task(50.0, 50.0, 100.0, 10.0)],
            vec![robot(0.0, 0.0, 1.0)],
        );
        let mut s = SimState::reset(&p).unwrap();
        s.step(0, 0).unwrap();
        // clock jumped to 150 > 100: task 1 expired while nobody was heading to it
        assert!(s.is_terminated());
        let r = s.into_result(vec![]).unwrap();
        assert_eq!(r.status[1], TaskStatus::Missed);
        assert_eq!(r.penalties, vec![0.0, 1.0]);
        assert_eq!(r.f_cost, 1.0);
        assert_eq!(r.on_time() + r.completed_late() + r.missed(), 2);
    }

    #[test]
    fn expired_task_is_masked() {
        let p = inst(
            vec![
                task(0.0, 0.0, 500.0, 100.0),
                task(50.0, 50.0, 50.0, 10.0),
                task(60.0, 60.0, 500.0, 10.0),
            ],
            vec![robot(0.0, 0.0, 1.0)],
        );
        let mut s = SimState::reset(&p).unwrap();
        s.step(0, 0).unwrap();
        assert_eq!(s.time(), 100.0);
        assert_eq!(s.feasible_mask(), vec![false, false, true]);
        assert_eq!(s.status()[1], TaskStatus::Missed);
    }

    #[test]
    fn simultaneous_events_lower_index_first() {
        let p = inst(
            vec![
                task(10.0, 0.0, 600.0, 10.0),
                task(0.0, 10.0, 600.0, 10.0),
                task(50.0, 50.0, 600.0, 10.0),
            ],
            vec![robot(0.0, 0.0, 1.0), robot(0.0, 0.0, 1.0)],
        );
        let mut s = SimState::reset(&p).unwrap();
        s.step(0, 0).unwrap();
        s.step(1, 1).unwrap();
        // both finish at t = 20
        assert_eq!(s.time(), 20.0);
        assert_eq!(s.decider(), Some(0));
        assert_eq!(s.decision_queue(), vec![(20.0, 0), (20.0, 1)]);
    }

    #[test]
    fn wrong_decider_and_infeasible_task_rejected() {
        let p = inst(
            vec![task(10.0, 0.0, 600.0, 10.0), task(0.0, 10.0, 600.0, 10.0)],
            vec![robot(0.0, 0.0, 1.0), robot(0.0, 0.0, 1.0)],
        );
        let mut s = SimState::reset(&p).unwrap();
        assert!(matches!(s.step(1, 0), Err(CapamError::Contract(_))));
        s.step(0, 0).unwrap();
        assert!(matches!(s.step(1, 0), Err(CapamError::Contract(_))));
        assert!(matches!(s.step(1, 7), Err(CapamError::Contract(_))));
    }

    #[test]
    fn cost_before_termination_is_an_error() {
        let p = inst(
            vec![task(10.0, 0.0, 600.0, 10.0)],
            vec![robot(0.0, 0.0, 1.0)],
        );
        let s = SimState::reset(&p).unwrap();
        assert!(matches!(s.episode_cost(), Err(CapamError::Contract(_))));
    }

    #[test]
    fn robot_without_available_task_retires_while_peer_finishes() {
        let p = inst(
            vec![task(10.0, 0.0, 600.0, 10.0)],
            vec![robot(0.0, 0.0, 1.0), robot(0.0, 0.0, 1.0)],
        );
        let mut s = SimState::reset(&p).unwrap();
        s.step(0, 0).unwrap();
        // robot 1 has nothing left to choose; the episode still runs to the finish
        assert_eq!(s.decider(), None);
        assert!(s.is_terminated());
        assert_eq!(s.time(), 20.0);
        assert_eq!(s.finish_times()[0], Some(20.0));
    }

    #[test]
    fn explicit_retirement_leaves_tasks_to_expire() {
        let p = inst(
            vec![task(10.0, 0.0, 600.0, 10.0), task(20.0, 0.0, 600.0, 10.0)],
            vec![robot(0.0, 0.0, 1.0)],
        );
        let mut s = SimState::reset(&p).unwrap();
        s.step(0, 0).unwrap();
        s.retire(0).unwrap();
        let r = s.into_result(vec![]).unwrap();
        assert_eq!(r.status, vec![TaskStatus::Completed, TaskStatus::Missed]);
        assert_eq!(r.f_cost, 1.0);
    }
}
