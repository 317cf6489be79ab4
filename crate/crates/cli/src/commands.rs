use std::path::{Path, PathBuf};

use anyhow::Context;
use rayon::prelude::*;
use serde_json::json;

use saasbo::benchmarks::{
    base_function, embedded_problem, load_or_create_rotation, parse_problem_name, rotated_from_spec,
};
use saasbo::driver::{self, median, run_observed, sobol_baseline as baseline, sparse_synthetic, DiagnoseConfig};
use saasbo::persist::{
    records_path, summary_path, timings_path, unix_now, write_manifest, write_records, write_summary, write_timings,
    RecordLine, RecordWriter, RunManifest,
};
use saasbo::{
    BenchmarkProblem, BoConfig, EvaluationHistory, Inference, Kernel, MapConfig, NutsConfig, RunRecord, SaasPriorConfig,
};

use crate::{
    read_table, usage, BaselineArgs, BenchArgs, DiagnoseArgs, Failure, InferenceArg, KernelArg, ModelArgs,
    NutsBudget, ProblemArgs, RunArgs,
};

struct Resolved {
    problem: BenchmarkProblem,
    spec_path: Option<PathBuf>,
}

fn resolve_problem(args: &ProblemArgs, seed: u64, spec_dir: &Path) -> Result<Resolved, Failure> {
    let (family, name_dim) = parse_problem_name(&args.problem).map_err(|e| usage(e.to_string()))?;
    let dim = match (name_dim, args.dim) {
        (Some(a), Some(b)) if a != b => {
            return Err(usage(format!("--problem {} implies D={a} but --dim is {b}", args.problem)))
        }
        (a, b) => a.or(b).unwrap_or(100),
    };
    if family == "rotated-hartmann" {
        let dp = args.dp.unwrap_or(6);
        if dp < 6 || dp > dim {
            return Err(usage(format!("--dp must lie in [6, D={dim}], got {dp}")));
        }
        std::fs::create_dir_all(spec_dir).with_context(|| format!("creating {}", spec_dir.display()))?;
        let path = spec_dir.join(format!("rotated-hartmann{dim}-dp{dp}-seed{seed}.spec"));
        let spec = load_or_create_rotation(&path, dim, dp, seed)?;
        return Ok(Resolved {
            problem: rotated_from_spec(spec),
            spec_path: Some(path),
        });
    }
    if args.dp.is_some() {
        return Err(usage("--dp applies only to rotated-hartmann"));
    }
    let base = base_function(&family).ok_or_else(|| usage(format!("unknown problem `{}`", args.problem)))?;
    if dim < base.dim() {
        return Err(usage(format!("{} needs D >= {}", base.name(), base.dim())));
    }
    Ok(Resolved {
        problem: embedded_problem(base, dim, seed)?,
        spec_path: None,
    })
}

fn kernel(k: KernelArg) -> Kernel {
    match k {
        KernelArg::Rbf => Kernel::Rbf,
        KernelArg::Matern52 => Kernel::Matern52,
    }
}

fn nuts_config(b: NutsBudget) -> NutsConfig {
    match b {
        NutsBudget::Default => NutsConfig::default(),
        NutsBudget::Reduced => NutsConfig::reduced(),
    }
}

fn bo_config(model: &ModelArgs, problem: &BenchmarkProblem, init: Option<usize>, budget: usize) -> Result<BoConfig, Failure> {
    let mut cfg = BoConfig::new(init.unwrap_or_else(|| problem.default_init()), budget);
    cfg.prior = SaasPriorConfig {
        alpha: model.alpha,
        noisy: model.noisy,
    };
    cfg.kernel = kernel(model.kernel);
    cfg.inference = match model.inference {
        InferenceArg::Nuts => Inference::Nuts(nuts_config(model.nuts_budget)),
        InferenceArg::Map => Inference::Map(MapConfig::default()),
    };
    cfg.validate(problem.dim).map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, Failure> {
    if jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure::Runtime(e.into()))
}

/// Writes the summary, stamps the manifest and reports failed replications.
fn finish(
    run_dir: &Path,
    mut manifest: RunManifest,
    results: Vec<anyhow::Result<RunRecord>>,
) -> Result<Vec<RunRecord>, Failure> {
    let seed = manifest.seed;
    let mut records = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push(format!("replication {r} (seed {}) failed: {e:#}", seed + r as u64)),
        }
    }
    if !failures.is_empty() {
        return Err(Failure::Runtime(anyhow::anyhow!(failures.join("\n"))));
    }
    write_summary(&summary_path(run_dir), &driver::summarize(&records))?;
    manifest.finished_at = Some(unix_now());
    write_manifest(run_dir, &manifest)?;
    Ok(records)
}

fn report(run_dir: &Path, records: &[RunRecord]) {
    let finals: Vec<f64> = records.iter().map(|r| r.y_min).collect();
    println!(
        "{}: {} replication(s), median final best {}",
        run_dir.display(),
        records.len(),
        median(&finals)
    );
}

pub fn run(a: RunArgs) -> Result<(), Failure> {
    if a.reps == 0 {
        return Err(usage("--reps must be at least 1"));
    }
    let pool = pool(a.jobs)?;
    let Resolved { problem, spec_path } = resolve_problem(&a.problem, a.seed, &a.out)?;
    let cfg = bo_config(&a.model, &problem, a.init, a.budget)?;
    let run_id = a
        .run_id
        .clone()
        .unwrap_or_else(|| format!("{}-{}-seed{}", problem.name, cfg.inference.name(), a.seed));
    let run_dir = a.out.join(run_id);
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: "run".into(),
        problem: problem.name.clone(),
        problem_spec: spec_path.map(|p| p.display().to_string()),
        dim: problem.dim,
        initial_budget: cfg.initial_budget,
        total_budget: cfg.total_budget,
        seed: a.seed,
        reps: a.reps,
        config: json!({ "bo": cfg, "relevant": problem.relevant() }),
        started_at: unix_now(),
        finished_at: None,
    };
    write_manifest(&run_dir, &manifest)?;

    let results: Vec<anyhow::Result<RunRecord>> = pool.install(|| {
        (0..a.reps)
            .into_par_iter()
            .map(|r| {
                let mut c = cfg.clone();
                c.seed = a.seed + r as u64;
                let mut writer = RecordWriter::create(&records_path(&run_dir, r))?;
                let record = run_observed(&problem.name, problem.dim, |x| problem.evaluate(x), &c, |e| {
                    writer.append(&RecordLine {
                        problem: problem.name.clone(),
                        seed: c.seed,
                        entry: e.clone(),
                    })
                })?;
                write_timings(&timings_path(&run_dir, r), &record)?;
                Ok(record)
            })
            .collect()
    });
    let records = finish(&run_dir, manifest, results)?;
    report(&run_dir, &records);
    Ok(())
}

pub fn sobol_baseline(a: BaselineArgs) -> Result<(), Failure> {
    if a.reps == 0 {
        return Err(usage("--reps must be at least 1"));
    }
    if a.budget == 0 {
        return Err(usage("--budget must be at least 1"));
    }
    let pool = pool(a.jobs)?;
    let Resolved { problem, spec_path } = resolve_problem(&a.problem, a.seed, &a.out)?;
    let run_id = a.run_id.clone().unwrap_or_else(|| format!("{}-sobol-seed{}", problem.name, a.seed));
    let run_dir = a.out.join(run_id);
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: "sobol-baseline".into(),
        problem: problem.name.clone(),
        problem_spec: spec_path.map(|p| p.display().to_string()),
        dim: problem.dim,
        initial_budget: a.budget,
        total_budget: a.budget,
        seed: a.seed,
        reps: a.reps,
        config: json!({ "relevant": problem.relevant() }),
        started_at: unix_now(),
        finished_at: None,
    };
    write_manifest(&run_dir, &manifest)?;
    let results: Vec<anyhow::Result<RunRecord>> = pool.install(|| {
        (0..a.reps)
            .into_par_iter()
            .map(|r| {
                let record = baseline(&problem, a.budget, a.seed + r as u64)?;
                write_records(&records_path(&run_dir, r), &record)?;
                write_timings(&timings_path(&run_dir, r), &record)?;
                Ok(record)
            })
            .collect()
    });
    let records = finish(&run_dir, manifest, results)?;
    report(&run_dir, &records);
    Ok(())
}

pub fn fit_diagnose(a: DiagnoseArgs) -> Result<(), Failure> {
    let (train, test) = match (&a.train, &a.test) {
        (Some(tr), Some(te)) => {
            let (xr, yr) = read_table(tr)?;
            let (xe, ye) = read_table(te)?;
            let train = EvaluationHistory::from_rows(&xr, &yr).map_err(|e| usage(format!("{}: {e}", tr.display())))?;
            let test = EvaluationHistory::from_rows(&xe, &ye).map_err(|e| usage(format!("{}: {e}", te.display())))?;
            (train, test)
        }
        _ => {
            if a.active >= a.synthetic_dim {
                return Err(usage(format!("--active {} outside D={}", a.active, a.synthetic_dim)));
            }
            if a.n_train < 2 || a.n_test == 0 {
                return Err(usage("need --n-train >= 2 and --n-test >= 1"));
            }
            (
                sparse_synthetic(a.synthetic_dim, a.active, a.n_train, a.seed)?,
                sparse_synthetic(a.synthetic_dim, a.active, a.n_test, a.seed.wrapping_add(1000))?,
            )
        }
    };
    if train.dim() != test.dim() {
        return Err(usage(format!("train has D={}, test has D={}", train.dim(), test.dim())));
    }
    let config = DiagnoseConfig {
        nuts: nuts_config(a.nuts_budget).with_seed(a.seed),
        prior: SaasPriorConfig {
            alpha: a.alpha,
            noisy: false,
        },
        ..DiagnoseConfig::default()
    };
    config.prior.validate().map_err(|e| usage(e.to_string()))?;
    let report = driver::fit_diagnose(&train, &test, kernel(a.kernel), &config)?;

    println!("model        test-ll      rmse   near-mean");
    for m in &report.models {
        match (&m.error, m.test_log_likelihood, m.rmse) {
            (None, Some(ll), Some(rmse)) => {
                let near = m.predictions.iter().filter(|p| p.mean.abs() <= 0.1).count();
                println!(
                    "{:<10} {:>10.3} {:>9.4} {:>5}/{}",
                    m.model,
                    ll,
                    rmse,
                    near,
                    m.predictions.len()
                );
            }
            (err, _, _) => println!("{:<10} failed: {}", m.model, err.as_deref().unwrap_or("unknown")),
        }
    }
    if let Some(path) = a.out {
        let text = serde_json::to_string_pretty(&report).context("encoding report")?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn bench_table(a: BenchArgs) -> Result<(), Failure> {
    let Resolved { problem, .. } = resolve_problem(&a.problem, a.seed, &a.out)?;
    let mut cfg = bo_config(&a.model, &problem, a.init, a.budget)?;
    cfg.seed = a.seed;
    let record = saasbo::run(&problem, &cfg)?;
    let modeled: Vec<_> = record.entries.iter().filter(|e| e.t > cfg.initial_budget).collect();
    println!("iteration,n_train,seconds");
    for e in &modeled {
        println!("{},{},{:.4}", e.t, e.t - 1, e.wall_clock);
    }
    if !modeled.is_empty() {
        let mean = modeled.iter().map(|e| e.wall_clock).sum::<f64>() / modeled.len() as f64;
        eprintln!(
            "{} D={} {}: {:.3} s per iteration over {} iterations",
            problem.name,
            problem.dim,
            cfg.inference.name(),
            mean,
            modeled.len()
        );
    }
    Ok(())
}
