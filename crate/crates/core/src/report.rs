//! Instance-set loading and the rows of the benchmark CSV files.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{CapamError, Result};
use crate::instance::{InstanceFile, InstanceMetadata, ProblemInstance};
use crate::sim::{task_completion_percent, EpisodeResult};

#[derive(Clone, Debug, PartialEq)]
pub struct NamedInstance {
    /// File stem.
    pub name: String,
    pub instance: ProblemInstance,
    pub metadata: Option<InstanceMetadata>,
}

/// Loads one instance file, or every `*.json` in a directory in name order.
pub fn load_instances(path: &Path) -> Result<Vec<NamedInstance>> {
    let io = |source| CapamError::Io {
        path: path.to_owned(),
        source,
    };
    let files = if path.is_dir() {
        let mut files: Vec<_> = fs::read_dir(path)
            .map_err(io)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()
            .map_err(io)?;
        files.retain(|p| p.extension().is_some_and(|e| e == "json"));
        files.sort();
        files
    } else {
        vec![path.to_owned()]
    };
    if files.is_empty() {
        return Err(CapamError::Config(format!(
            "no instance files in {}",
            path.display()
        )));
    }
    files
        .iter()
        .map(|p| {
            let file = InstanceFile::load(p)?;
            Ok(NamedInstance {
                name: p
                    .file_stem()
                    .map_or_else(String::new, |s| s.to_string_lossy().into_owned()),
                instance: file.to_instance()?,
                metadata: file.metadata,
            })
        })
        .collect()
}

/// One `(solver, instance)` outcome. The column set is fixed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub suite: String,
    pub group: String,
    pub fraction: Option<u32>,
    pub robots: usize,
    pub tasks: usize,
    pub solver: String,
    pub seed: Option<u64>,
    pub f_cost: f64,
    pub completion_pct: f64,
    pub latency_ms: Option<f64>,
}

impl BenchRow {
    pub fn new(
        inst: &NamedInstance,
        solver: &str,
        result: &EpisodeResult,
        latency_ms: Option<f64>,
    ) -> Self {
        let meta = inst.metadata.as_ref();
        BenchRow {
            suite: meta.map_or_else(|| inst.name.clone(), |m| m.suite.clone()),
            group: meta.map_or_else(String::new, |m| m.group.as_str().to_owned()),
            fraction: meta.map(|m| m.normal_fraction),
            robots: inst.instance.n_robots(),
            tasks: inst.instance.n_tasks(),
            solver: solver.to_owned(),
            seed: meta.map(|m| m.seed),
            f_cost: result.f_cost,
            completion_pct: task_completion_percent(result),
            latency_ms,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub solver: String,
    pub group: String,
    pub cases: usize,
    pub mean_cost: f64,
    pub mean_completion_pct: f64,
    pub mean_latency_ms: Option<f64>,
}

fn first_seen<T: PartialEq + Clone>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out = Vec::new();
    for it in items {
        if !out.contains(&it) {
            out.push(it);
        }
    }
    out
}

/// Mean cost, completion and latency per solver and deadline group.
pub fn summarize(rows: &[BenchRow]) -> Vec<SummaryRow> {
    let solvers = first_seen(rows.iter().map(|r| r.solver.clone()));
    let mut groups = first_seen(rows.iter().map(|r| r.group.clone()));
    groups.sort();
    let mut out = Vec::new();
    for s in &solvers {
        for g in &groups {
            let sel: Vec<&BenchRow> = rows
                .iter()
                .filter(|r| &r.solver == s && &r.group == g)
                .collect();
            if sel.is_empty() {
                continue;
            }
            let n = sel.len() as f64;
            let latencies: Option<Vec<f64>> = sel.iter().map(|r| r.latency_ms).collect();
            out.push(SummaryRow {
                solver: s.clone(),
                group: g.clone(),
                cases: sel.len(),
                mean_cost: sel.iter().map(|r| r.f_cost).sum::<f64>() / n,
                mean_completion_pct: sel.iter().map(|r| r.completion_pct).sum::<f64>() / n,
                mean_latency_ms: latencies.map(|l| l.iter().sum::<f64>() / n),
            });
        }
    }
    out
}

/// Mean completion % with one row per `(tasks, robots)` size and one
/// column per solver. Returns the header and the formatted rows.
pub fn completion_matrix(rows: &[BenchRow]) -> (Vec<String>, Vec<Vec<String>>) {
    let solvers = first_seen(rows.iter().map(|r| r.solver.clone()));
    let mut sizes = first_seen(rows.iter().map(|r| (r.tasks, r.robots)));
    sizes.sort();
    let mut header = vec!["tasks".to_owned(), "robots".to_owned()];
    header.extend(solvers.iter().cloned());
    let body = sizes
        .iter()
        .map(|&(t, r)| {
            let mut line = vec![t.to_string(), r.to_string()];
            for s in &solvers {
                let vals: Vec<f64> = rows
                    .iter()
                    .filter(|x| x.tasks == t && x.robots == r && &x.solver == s)
                    .map(|x| x.completion_pct)
                    .collect();
                line.push(if vals.is_empty() {
                    String::new()
                } else {
                    format!("{:.2}", vals.iter().sum::<f64>() / vals.len() as f64)
                });
            }
            line
        })
        .collect();
    (header, body)
}

/// One line of an episode trace export.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRecord {
    pub time: f64,
    pub robot: usize,
    pub task: usize,
    pub active: usize,
    pub completed: usize,
    pub missed: usize,
}

pub fn trace_records(result: &EpisodeResult) -> Vec<TraceRecord> {
    result
        .trace
        .iter()
        .map(|d| TraceRecord {
            time: d.time,
            robot: d.robot,
            task: d.task,
            active: d.counts.active,
            completed: d.counts.completed,
            missed: d.counts.missed,
        })
        .collect()
}
