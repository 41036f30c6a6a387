use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use capam_core::baselines::{BaselineSolver, IlsConfig};
use capam_core::diagnostics::{run_gradcheck, GRADCHECK_TOLERANCE};
use capam_core::instance::{
    generate_suite, suite_file_name, InstanceDistribution, InstanceFile, SuiteConfig,
};
use capam_core::report::{
    completion_matrix, load_instances, summarize, trace_records, BenchRow, NamedInstance,
};
use capam_core::rollout::ModelPolicy;
use capam_core::seed::{derive_seed, rng_for};
use capam_core::trainer::{TrainConfig, Trainer};
use capam_core::{run_episode, CapamModel, EpisodeResult, SelectMode};
use rayon::prelude::*;
use serde::Deserialize;

use crate::{BaselineArgs, BenchArgs, EvalArgs, GenerateArgs, GradcheckArgs, Mode, TrainArgs};

/// Name of the learned policy in result tables.
const MODEL_SOLVER: &str = "capam";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

fn write_rows<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SuiteFile {
    suite: Vec<SuiteConfig>,
}

pub fn generate(a: GenerateArgs) -> Result<ExitCode> {
    create_dir(&a.out)?;
    let seed = a.seed.seed;
    let files: Vec<(String, InstanceFile)> = match a.suite.as_deref() {
        None => {
            let robots = match a.robots.as_slice() {
                [r] => *r,
                [] => bail!("--robots is required without --suite"),
                _ => bail!("a single --robots value is expected without --suite"),
            };
            let tasks = a.tasks.context("--tasks is required without --suite")?;
            let dist = InstanceDistribution {
                integer_capacity: a.integer_capacity,
                ..InstanceDistribution::with_size(tasks, robots)
            };
            (0..a.count)
                .map(|i| {
                    let inst = dist.sample(&mut rng_for(seed, &[i as u64]))?;
                    Ok((
                        format!("instance_t{tasks}_r{robots}_{i:04}.json"),
                        InstanceFile::from_instance(&inst, None),
                    ))
                })
                .collect::<Result<_>>()?
        }
        Some(which) => {
            let mut suites: Vec<SuiteConfig> = if which == "default" {
                SuiteConfig::default_pair().to_vec()
            } else {
                let text = fs::read_to_string(which).with_context(|| format!("reading {which}"))?;
                toml::from_str::<SuiteFile>(&text)
                    .with_context(|| format!("parsing {which}"))?
                    .suite
            };
            for s in &mut suites {
                if let Some(t) = a.tasks {
                    s.n_tasks = t;
                }
                if !a.robots.is_empty() {
                    s.robot_counts = a.robots.clone();
                }
                s.integer_capacity |= a.integer_capacity;
            }
            let mut out = Vec::new();
            for suite in &suites {
                for (i, f) in generate_suite(suite, seed)?.into_iter().enumerate() {
                    out.push((suite_file_name(&f, i), f));
                }
            }
            out
        }
    };
    for (name, file) in &files {
        file.save(&a.out.join(name))?;
    }
    println!("wrote {} instances to {}", files.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn train(a: TrainArgs) -> Result<ExitCode> {
    let mut config: TrainConfig = match &a.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    create_dir(&a.out_dir)?;
    fs::write(a.out_dir.join("config.toml"), toml::to_string(&config)?)?;

    let mut trainer = Trainer::new(config.clone())?;
    let mut batch_csv = csv_writer(&a.out_dir.join("training.csv"))?;
    let mut epoch_csv = csv_writer(&a.out_dir.join("epochs.csv"))?;
    epoch_csv.write_record([
        "epoch",
        "validation_cost",
        "baseline_cost",
        "p_value",
        "baseline_updated",
    ])?;
    let started = Instant::now();
    trainer.run(|t, report| {
        let wrap = |e: anyhow::Error| capam_core::CapamError::Config(format!("{e:#}"));
        let mut log = || -> Result<()> {
            for b in &report.batches {
                batch_csv.serialize(b)?;
            }
            batch_csv.flush()?;
            epoch_csv.write_record([
                report.epoch.to_string(),
                report.validation_cost.to_string(),
                report.baseline_cost.to_string(),
                report.test.p_value.to_string(),
                report.baseline_updated.to_string(),
            ])?;
            epoch_csv.flush()?;
            if !a.final_only {
                t.learner.save(
                    &a.out_dir
                        .join(format!("checkpoint_epoch_{:03}.json", report.epoch)),
                )?;
            }
            println!(
                "epoch {:>3}  validation {:.4}  baseline {:.4}  p {:.3e}{}  [{:.1}s]",
                report.epoch,
                report.validation_cost,
                report.baseline_cost,
                report.test.p_value,
                if report.baseline_updated {
                    "  baseline updated"
                } else {
                    ""
                },
                started.elapsed().as_secs_f64()
            );
            Ok(())
        };
        log().map_err(wrap)
    })?;
    trainer.learner.save(&a.out_dir.join("final.json"))?;
    println!(
        "final checkpoint: {}",
        a.out_dir.join("final.json").display()
    );
    Ok(ExitCode::SUCCESS)
}

enum Solver<'m> {
    Model(&'m CapamModel, SelectMode),
    Baseline(BaselineSolver, IlsConfig),
}

impl Solver<'_> {
    fn name(&self) -> &'static str {
        match self {
            Solver::Model(..) => MODEL_SOLVER,
            Solver::Baseline(b, _) => b.name(),
        }
    }

    fn solve(&self, inst: &NamedInstance, seed: u64) -> Result<EpisodeResult> {
        let r = match self {
            Solver::Model(m, mode) => {
                run_episode(&inst.instance, &mut ModelPolicy::new(m), *mode, seed)
            }
            Solver::Baseline(b, ils) => b.solve(&inst.instance, seed, ils),
        };
        r.with_context(|| format!("{} on {}", self.name(), inst.name))
    }
}

struct Outcome {
    row: BenchRow,
    result: EpisodeResult,
}

/// Runs `solver` on every instance in parallel. Instance `i` gets the seed
/// `derive_seed(seed, [i])`, so results do not depend on the thread count.
fn run_all(
    solver: &Solver<'_>,
    instances: &[NamedInstance],
    seed: u64,
    timing: bool,
) -> Result<Vec<Outcome>> {
    instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let start = Instant::now();
            let result = solver.solve(inst, derive_seed(seed, &[i as u64]))?;
            let latency = timing.then(|| start.elapsed().as_secs_f64() * 1e3);
            Ok(Outcome {
                row: BenchRow::new(inst, solver.name(), &result, latency),
                result,
            })
        })
        .collect()
}

fn write_traces(dir: &Path, instances: &[NamedInstance], outcomes: &[Outcome]) -> Result<()> {
    create_dir(dir)?;
    for (inst, o) in instances.iter().zip(outcomes) {
        let path = dir.join(format!("{}.jsonl", inst.name));
        let mut f = std::io::BufWriter::new(
            fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        );
        for rec in trace_records(&o.result) {
            serde_json::to_writer(&mut f, &rec)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
    }
    Ok(())
}

fn print_means(rows: &[BenchRow]) {
    for s in summarize(rows) {
        let group = if s.group.is_empty() { "-" } else { &s.group };
        let latency = s
            .mean_latency_ms
            .map_or_else(String::new, |l| format!("  latency {l:.2} ms"));
        println!(
            "{:<8} {:<6} cases {:>4}  cost {:.4}  completion {:.2}%{latency}",
            s.solver, group, s.cases, s.mean_cost, s.mean_completion_pct
        );
    }
}

fn finish(
    solver: &Solver<'_>,
    instances: &[NamedInstance],
    seed: u64,
    timing: bool,
    out: &Path,
    trace: Option<&Path>,
) -> Result<ExitCode> {
    let outcomes = run_all(solver, instances, seed, timing)?;
    let rows: Vec<BenchRow> = outcomes.iter().map(|o| o.row.clone()).collect();
    write_rows(out, &rows)?;
    if let Some(dir) = trace {
        write_traces(dir, instances, &outcomes)?;
    }
    print_means(&rows);
    Ok(ExitCode::SUCCESS)
}

pub fn eval(a: EvalArgs) -> Result<ExitCode> {
    let model = CapamModel::load(&a.checkpoint)?;
    let instances = load_instances(&a.instances)?;
    let mode = match a.mode {
        Mode::Greedy => SelectMode::Greedy,
        Mode::Sample => SelectMode::Sample,
    };
    finish(
        &Solver::Model(&model, mode),
        &instances,
        a.seed.seed,
        !a.no_timing,
        &a.out,
        a.trace.as_deref(),
    )
}

fn ils_config(budget_ms: u64) -> IlsConfig {
    IlsConfig {
        time_budget: Duration::from_millis(budget_ms),
        ..IlsConfig::default()
    }
}

pub fn baseline(a: BaselineArgs) -> Result<ExitCode> {
    let solver: BaselineSolver = a.solver.parse()?;
    let instances = load_instances(&a.instances)?;
    finish(
        &Solver::Baseline(solver, ils_config(a.ils_budget_ms)),
        &instances,
        a.seed.seed,
        !a.no_timing,
        &a.out,
        a.trace.as_deref(),
    )
}

pub fn bench(a: BenchArgs) -> Result<ExitCode> {
    let instances = load_instances(&a.instances)?;
    let model = a.checkpoint.as_deref().map(CapamModel::load).transpose()?;
    let names: Vec<String> = if a.solvers.is_empty() {
        let mut v: Vec<String> = model.iter().map(|_| MODEL_SOLVER.to_owned()).collect();
        v.extend(
            BaselineSolver::ALL
                .iter()
                .filter(|b| **b != BaselineSolver::Oracle)
                .map(|b| b.name().to_owned()),
        );
        v
    } else {
        a.solvers.clone()
    };
    let ils = ils_config(a.ils_budget_ms);
    let solvers = names
        .iter()
        .map(|n| {
            if n == MODEL_SOLVER {
                let m = model
                    .as_ref()
                    .context("solver `capam` needs --checkpoint")?;
                Ok(Solver::Model(m, SelectMode::Greedy))
            } else {
                Ok(Solver::Baseline(n.parse()?, ils.clone()))
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for s in &solvers {
        rows.extend(
            run_all(s, &instances, a.seed.seed, !a.no_timing)?
                .into_iter()
                .map(|o| o.row),
        );
    }
    create_dir(&a.out_dir)?;
    write_rows(&a.out_dir.join("bench.csv"), &rows)?;
    write_rows(&a.out_dir.join("summary.csv"), &summarize(&rows))?;
    let (header, body) = completion_matrix(&rows);
    let mut w = csv_writer(&a.out_dir.join("completion_matrix.csv"))?;
    w.write_record(&header)?;
    for line in &body {
        w.write_record(line)?;
    }
    w.flush()?;
    print_means(&rows);
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let start = Instant::now();
    let cases = run_gradcheck(a.seed.seed)?;
    let mut ok = true;
    for c in &cases {
        let pass = c.report.max_rel_err < GRADCHECK_TOLERANCE;
        ok &= pass;
        println!(
            "{:<22} entries {:>5}  max rel err {:.3e}  {}",
            c.name,
            c.report.checked,
            c.report.max_rel_err,
            if pass { "ok" } else { "FAILED" }
        );
        if let (false, Some((name, i))) = (pass, &c.report.worst) {
            println!("    worst entry: {name}[{i}]");
        }
    }
    println!("elapsed {:.2}s", start.elapsed().as_secs_f64());
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
