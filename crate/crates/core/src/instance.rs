//! Problem instances: sampling, benchmark suites and the on-disk format.

use std::fs;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CapamError, Result};
use crate::seed::rng_for;

pub const GRID: f64 = 100.0;
pub const SPEED: f64 = 1.0;
pub const MAX_CAPACITY: f64 = 3.0;
pub const MIN_CAPACITY: f64 = 1.0;
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskNode {
    pub x: f64,
    pub y: f64,
    pub deadline: f64,
    pub workload: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Robot {
    pub x: f64,
    pub y: f64,
    /// Work rate; serving task `i` takes `workload_i / capacity`.
    pub capacity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemInstance {
    pub tasks: Vec<TaskNode>,
    pub robots: Vec<Robot>,
    pub speed: f64,
    pub grid: f64,
}

impl ProblemInstance {
    pub fn new(tasks: Vec<TaskNode>, robots: Vec<Robot>) -> Result<Self> {
        let inst = ProblemInstance {
            tasks,
            robots,
            speed: SPEED,
            grid: GRID,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn n_robots(&self) -> usize {
        self.robots.len()
    }

    /// Largest deadline; the time normaliser of the graph features and context.
    pub fn max_deadline(&self) -> f64 {
        self.tasks.iter().map(|t| t.deadline).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CapamError::Validation(m));
        if self.tasks.is_empty() {
            return bad("instance has no tasks".into());
        }
        if self.robots.is_empty() {
            return bad("instance has no robots".into());
        }
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return bad(format!("speed must be positive, got {}", self.speed));
        }
        if !(self.grid > 0.0 && self.grid.is_finite()) {
            return bad(format!("grid must be positive, got {}", self.grid));
        }
        let inside =
            |x: f64, y: f64| (0.0..=self.grid).contains(&x) && (0.0..=self.grid).contains(&y);
        for (i, t) in self.tasks.iter().enumerate() {
            if !inside(t.x, t.y) {
                return bad(format!(
                    "task {i} at ({}, {}) is outside the grid",
                    t.x, t.y
                ));
            }
            if !(t.deadline > 0.0 && t.deadline.is_finite()) {
                return bad(format!(
                    "task {i} deadline must be positive, got {}",
                    t.deadline
                ));
            }
            if !(t.workload > 0.0 && t.workload.is_finite()) {
                return bad(format!(
                    "task {i} workload must be positive, got {}",
                    t.workload
                ));
            }
        }
        for (j, r) in self.robots.iter().enumerate() {
            if !inside(r.x, r.y) {
                return bad(format!(
                    "robot {j} at ({}, {}) is outside the grid",
                    r.x, r.y
                ));
            }
            if !(MIN_CAPACITY..=MAX_CAPACITY).contains(&r.capacity) {
                return bad(format!("robot {j} capacity {} outside [1, 3]", r.capacity));
            }
        }
        Ok(())
    }

    /// Same instance with tasks reordered: task `i` of the result is task
    /// `perm[i]` of `self`.
    pub fn permute_tasks(&self, perm: &[usize]) -> ProblemInstance {
        ProblemInstance {
            tasks: perm.iter().map(|&p| self.tasks[p].clone()).collect(),
            ..self.clone()
        }
    }
}

/// Uniform sampling ranges for training and validation instances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceDistribution {
    pub n_tasks: usize,
    pub min_robots: usize,
    pub max_robots: usize,
    pub deadline: (f64, f64),
    pub workload: (f64, f64),
    pub capacity: (f64, f64),
    pub integer_capacity: bool,
}

impl Default for InstanceDistribution {
    fn default() -> Self {
        InstanceDistribution {
            n_tasks: 100,
            min_robots: 2,
            max_robots: 7,
            deadline: (50.0, 600.0),
            workload: (10.0, 30.0),
            capacity: (MIN_CAPACITY, MAX_CAPACITY),
            integer_capacity: false,
        }
    }
}

impl InstanceDistribution {
    pub fn with_size(n_tasks: usize, robots: usize) -> Self {
        InstanceDistribution {
            n_tasks,
            min_robots: robots,
            max_robots: robots,
            ..Default::default()
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Result<ProblemInstance> {
        if self.n_tasks == 0 || self.min_robots == 0 || self.min_robots > self.max_robots {
            return Err(CapamError::Config(format!(
                "bad distribution: {} tasks, robots {}..={}",
                self.n_tasks, self.min_robots, self.max_robots
            )));
        }
        let n_robots = rng.random_range(self.min_robots..=self.max_robots);
        let tasks = (0..self.n_tasks)
            .map(|_| TaskNode {
                x: rng.random_range(0.0..=GRID),
                y: rng.random_range(0.0..=GRID),
                deadline: rng.random_range(self.deadline.0..=self.deadline.1),
                workload: rng.random_range(self.workload.0..=self.workload.1),
            })
            .collect();
        let robots = (0..n_robots)
            .map(|_| Robot {
                x: rng.random_range(0.0..=GRID),
                y: rng.random_range(0.0..=GRID),
                capacity: self.draw_capacity(rng),
            })
            .collect();
        ProblemInstance::new(tasks, robots)
    }

    fn draw_capacity(&self, rng: &mut impl Rng) -> f64 {
        let (lo, hi) = self.capacity;
        if self.integer_capacity {
            rng.random_range(lo.ceil() as i64..=hi.floor() as i64) as f64
        } else {
            rng.random_range(lo..=hi)
        }
    }
}

/// One training-distribution scenario with a fixed team size.
pub fn generate_instance(
    n_tasks: usize,
    n_robots: usize,
    rng: &mut impl Rng,
) -> Result<ProblemInstance> {
    if n_tasks < 1 || n_robots < 2 {
        return Err(CapamError::Config(format!(
            "need at least 1 task and 2 robots, got {n_tasks} and {n_robots}"
        )));
    }
    InstanceDistribution::with_size(n_tasks, n_robots).sample(rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeadlineGroup {
    Tight,
    Slack,
}

impl DeadlineGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            DeadlineGroup::Tight => "tight",
            DeadlineGroup::Slack => "slack",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub name: String,
    pub group: DeadlineGroup,
    /// Percentages of tasks whose deadline is drawn from the truncated normal.
    pub normal_fractions: Vec<u32>,
    pub robot_counts: Vec<usize>,
    pub n_tasks: usize,
    pub d_low: f64,
    pub d_high: f64,
    pub cases_per_cell: usize,
    pub integer_capacity: bool,
}

impl SuiteConfig {
    pub fn slack() -> Self {
        SuiteConfig {
            name: "default".into(),
            group: DeadlineGroup::Slack,
            normal_fractions: vec![25, 50, 75, 100],
            robot_counts: vec![2, 3, 5, 7],
            n_tasks: 100,
            d_low: 50.0,
            d_high: 600.0,
            cases_per_cell: 3,
            integer_capacity: false,
        }
    }

    /// The tight group keeps everything but halves `d_high`.
    pub fn tight_of(slack: &SuiteConfig) -> Self {
        SuiteConfig {
            group: DeadlineGroup::Tight,
            d_high: slack.d_high / 2.0,
            ..slack.clone()
        }
    }

    /// Tight and slack groups of the default 96-case benchmark.
    pub fn default_pair() -> [SuiteConfig; 2] {
        let slack = SuiteConfig::slack();
        [SuiteConfig::tight_of(&slack), slack]
    }

    pub fn size(&self) -> usize {
        self.normal_fractions.len() * self.robot_counts.len() * self.cases_per_cell
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetadata {
    pub suite: String,
    pub group: DeadlineGroup,
    pub normal_fraction: u32,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub format_version: u32,
    pub grid: f64,
    pub speed: f64,
    pub tasks: Vec<TaskNode>,
    pub robots: Vec<Robot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<InstanceMetadata>,
}

impl InstanceFile {
    pub fn from_instance(inst: &ProblemInstance, metadata: Option<InstanceMetadata>) -> Self {
        InstanceFile {
            format_version: FORMAT_VERSION,
            grid: inst.grid,
            speed: inst.speed,
            tasks: inst.tasks.clone(),
            robots: inst.robots.clone(),
            metadata,
        }
    }

    pub fn to_instance(&self) -> Result<ProblemInstance> {
        if self.format_version != FORMAT_VERSION {
            return Err(CapamError::Version {
                found: self.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let inst = ProblemInstance {
            tasks: self.tasks.clone(),
            robots: self.robots.clone(),
            speed: self.speed,
            grid: self.grid,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn to_json(&self) -> String {
        // Floats are written in shortest round-trip form, so loading is exact.
        serde_json::to_string_pretty(self).expect("instance serialises") + "\n"
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text).map_err(|e| CapamError::Parse {
            path: path.to_owned(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if file.format_version != FORMAT_VERSION {
            return Err(CapamError::Version {
                found: file.format_version,
                expected: FORMAT_VERSION,
            });
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|source| CapamError::Io {
            path: path.to_owned(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| CapamError::Io {
            path: path.to_owned(),
            source,
        })?;
        InstanceFile::from_json(&text, path)
    }
}

pub fn save_instance(inst: &ProblemInstance, path: &Path) -> Result<()> {
    InstanceFile::from_instance(inst, None).save(path)
}

pub fn load_instance(path: &Path) -> Result<ProblemInstance> {
    InstanceFile::load(path)?.to_instance()
}

/// Normal with mean at the midpoint and std `(hi - lo) / 6`, resampled
/// until it lands in `[lo, hi]`.
fn truncated_normal(lo: f64, hi: f64, rng: &mut impl Rng) -> f64 {
    if hi <= lo {
        return lo;
    }
    let normal = Normal::new(0.5 * (lo + hi), (hi - lo) / 6.0).expect("positive std");
    loop {
        let v = normal.sample(rng);
        if (lo..=hi).contains(&v) {
            return v;
        }
    }
}

fn group_index(g: DeadlineGroup) -> u64 {
    match g {
        DeadlineGroup::Tight => 0,
        DeadlineGroup::Slack => 1,
    }
}

/// Every (fraction, robot count, case) cell of one deadline group.
pub fn generate_suite(suite: &SuiteConfig, seed: u64) -> Result<Vec<InstanceFile>> {
    if suite.d_low > suite.d_high || suite.d_low <= 0.0 {
        return Err(CapamError::Config(format!(
            "invalid deadline limits [{}, {}]",
            suite.d_low, suite.d_high
        )));
    }
    let mut out = Vec::with_capacity(suite.size());
    for &fraction in &suite.normal_fractions {
        if fraction > 100 {
            return Err(CapamError::Config(format!(
                "fraction {fraction}% exceeds 100%"
            )));
        }
        for &robots in &suite.robot_counts {
            for case in 0..suite.cases_per_cell {
                let path = [
                    group_index(suite.group),
                    fraction as u64,
                    robots as u64,
                    case as u64,
                ];
                let case_seed = crate::seed::derive_seed(seed, &path);
                let mut rng = rng_for(case_seed, &[]);
                let dist = InstanceDistribution {
                    n_tasks: suite.n_tasks,
                    min_robots: robots,
                    max_robots: robots,
                    deadline: (suite.d_high, suite.d_high),
                    integer_capacity: suite.integer_capacity,
                    ..Default::default()
                };
                let mut inst = dist.sample(&mut rng)?;
                let n_normal = (suite.n_tasks * fraction as usize + 50) / 100;
                for i in sample_indices(&mut rng, suite.n_tasks, n_normal) {
                    inst.tasks[i].deadline = truncated_normal(suite.d_low, suite.d_high, &mut rng);
                }
                out.push(InstanceFile::from_instance(
                    &inst,
                    Some(InstanceMetadata {
                        suite: suite.name.clone(),
                        group: suite.group,
                        normal_fraction: fraction,
                        seed: case_seed,
                    }),
                ));
            }
        }
    }
    Ok(out)
}

/// File name used when a suite is written to a directory.
pub fn suite_file_name(file: &InstanceFile, index: usize) -> String {
    match &file.metadata {
        Some(m) => format!(
            "{}_{}_f{:03}_r{}_{:03}.json",
            m.suite,
            m.group.as_str(),
            m.normal_fraction,
            file.robots.len(),
            index
        ),
        None => format!("instance_{index:03}.json"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generated_values_respect_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let inst = InstanceDistribution {
                n_tasks: 5,
                ..Default::default()
            }
            .sample(&mut rng)
            .unwrap();
            assert!((2..=7).contains(&inst.n_robots()));
            for t in &inst.tasks {
                assert!((50.0..=600.0).contains(&t.deadline));
                assert!((10.0..=30.0).contains(&t.workload));
                assert!((0.0..=100.0).contains(&t.x) && (0.0..=100.0).contains(&t.y));
            }
            for r in &inst.robots {
                assert!((1.0..=3.0).contains(&r.capacity));
            }
        }
    }

    #[test]
    fn same_seed_same_instance() {
        let a = generate_instance(20, 3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = generate_instance(20, 3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn workload_mean_is_twenty() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let inst = generate_instance(100_000, 2, &mut rng).unwrap();
        let mean = inst.tasks.iter().map(|t| t.workload).sum::<f64>() / 1e5;
        // std of U(10,30) is 5.77; standard error over 1e5 draws is 0.018
        assert!((mean - 20.0).abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn integer_capacity_switch() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dist = InstanceDistribution {
            n_tasks: 1,
            integer_capacity: true,
            ..Default::default()
        };
        for _ in 0..200 {
            let inst = dist.sample(&mut rng).unwrap();
            assert!(inst.robots.iter().all(|r| r.capacity.fract() == 0.0));
        }
    }

    #[test]
    fn too_few_robots_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(generate_instance(10, 1, &mut rng).is_err());
        assert!(generate_instance(0, 2, &mut rng).is_err());
    }

    #[test]
    fn default_suite_has_96_cases() {
        let [tight, slack] = SuiteConfig::default_pair();
        let t = generate_suite(&tight, 7).unwrap();
        let s = generate_suite(&slack, 7).unwrap();
        assert_eq!(t.len() + s.len(), 2 * 4 * 4 * 3);
        let max_t = t
            .iter()
            .flat_map(|f| &f.tasks)
            .map(|x| x.deadline)
            .fold(0.0, f64::max);
        let max_s = s
            .iter()
            .flat_map(|f| &f.tasks)
            .map(|x| x.deadline)
            .fold(0.0, f64::max);
        assert_eq!(max_t, 300.0);
        assert_eq!(max_s, 600.0);
        assert_eq!(tight.d_high * 2.0, slack.d_high);
    }

    #[test]
    fn fraction_controls_pinned_deadlines() {
        let suite = SuiteConfig {
            normal_fractions: vec![25, 100],
            robot_counts: vec![2],
            cases_per_cell: 2,
            ..SuiteConfig::slack()
        };
        for f in generate_suite(&suite, 3).unwrap() {
            let pinned = f
                .tasks
                .iter()
                .filter(|t| t.deadline == suite.d_high)
                .count();
            let frac = f.metadata.as_ref().unwrap().normal_fraction;
            assert!(f
                .tasks
                .iter()
                .all(|t| (suite.d_low..=suite.d_high).contains(&t.deadline)));
            match frac {
                25 => assert_eq!(pinned, 75),
                100 => assert_eq!(pinned, 0),
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn suite_is_pure_function_of_seed() {
        let suite = SuiteConfig::slack();
        assert_eq!(
            generate_suite(&suite, 9).unwrap(),
            generate_suite(&suite, 9).unwrap()
        );
        assert_ne!(
            generate_suite(&suite, 9).unwrap(),
            generate_suite(&suite, 10).unwrap()
        );
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inst.json");
        let inst = generate_instance(30, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        save_instance(&inst, &path).unwrap();
        assert_eq!(load_instance(&path).unwrap(), inst);
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let inst = generate_instance(3, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let text = InstanceFile::from_instance(&inst, None).to_json();
        let cut = &text[..text.len() / 2];
        match InstanceFile::from_json(cut, Path::new("x.json")) {
            Err(CapamError::Parse { line, .. }) => assert!(line > 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_version_rejected() {
        let inst = generate_instance(3, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut file = InstanceFile::from_instance(&inst, None);
        file.format_version = 2;
        let text = file.to_json();
        assert!(matches!(
            InstanceFile::from_json(&text, Path::new("x.json")),
            Err(CapamError::Version {
                found: 2,
                expected: 1
            })
        ));
    }

    #[test]
    fn out_of_bounds_instance_rejected() {
        let task = TaskNode {
            x: 101.0,
            y: 5.0,
            deadline: 100.0,
            workload: 10.0,
        };
        let robot = Robot {
            x: 0.0,
            y: 0.0,
            capacity: 1.0,
        };
        assert!(ProblemInstance::new(vec![task], vec![robot.clone()]).is_err());
        let task = TaskNode {
            x: 1.0,
            y: 5.0,
            deadline: 100.0,
            workload: 10.0,
        };
        let weak = Robot {
            capacity: 0.5,
            ..robot
        };
        assert!(ProblemInstance::new(vec![task], vec![weak]).is_err());
    }
}
