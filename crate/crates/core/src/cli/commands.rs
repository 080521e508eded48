use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use super::manifest::RunManifest;
use super::svg::{line_chart, Series};
use super::{CliError, CliResult, GlobalArgs, EXIT_DIVERGED, EXIT_OK, EXIT_VIOLATION};
use crate::approx::{Checkpoint, ValueFunction};
use crate::config::RunConfig;
use crate::diagnostics::{run_check, LemmaId, LemmaReport};
use crate::error::Error;
use crate::oracle::{exact_policy_iteration, relative_l2_on_grid, riccati_band_error, riccati_reference, ExactPiRun, SpatialGrid};
use crate::problem::ControlProblem;
use crate::quadrature::ControlGrid;
use crate::rollout::{evaluate_policy, SdeConfig};
use crate::spi::{pinn_spi_run, IterationExtras, Termination};

/// Samples used for the Riccati band.
const BAND_SAMPLES: usize = 4096;

fn write_file(out: &Path, manifest: &mut RunManifest, name: &str, contents: &str) -> CliResult<()> {
    if let Some(parent) = out.join(name).parent() {
        fs::create_dir_all(parent).map_err(Error::from)?;
    }
    fs::write(out.join(name), contents).map_err(Error::from)?;
    manifest.output(name);
    Ok(())
}

fn write_manifest(out: &Path, manifest: &RunManifest) -> CliResult<()> {
    fs::create_dir_all(out).map_err(Error::from)?;
    manifest.write(&out.join("manifest.json"))?;
    Ok(())
}

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    let path = path.ok_or_else(|| CliError::Usage("--config is required".into()))?;
    Ok(RunConfig::load(path)?)
}

/// Config from `--config`, falling back to the one stored in the checkpoint.
fn config_for_checkpoint(g: &GlobalArgs, ckpt: &Checkpoint) -> CliResult<RunConfig> {
    if let Some(path) = &g.config {
        return Ok(RunConfig::load(path)?);
    }
    let value = ckpt
        .config
        .clone()
        .ok_or_else(|| CliError::Usage("checkpoint carries no config; pass --config".into()))?;
    let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(format!("checkpoint config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

fn default_grid_n(cfg: &RunConfig, d: usize) -> usize {
    cfg.oracle.as_ref().map_or(if d == 1 { 512 } else { 128 }, |o| o.grid_n)
}

fn fd_reference(cfg: &RunConfig, problem: &ControlProblem, controls: &ControlGrid, grid_n: usize) -> CliResult<(SpatialGrid, ExactPiRun)> {
    let d = problem.state_dim();
    if d > 2 {
        return Err(CliError::NoOracle(format!("finite differences need d <= 2, got d = {d}")));
    }
    let (iters, tol) = cfg.oracle.as_ref().map_or((50, 1e-8), |o| (o.pi_iters, o.tol));
    let grid = SpatialGrid::for_problem(problem, grid_n)?;
    let run = exact_policy_iteration(problem, &grid, controls, &vec![0.0; grid.len()], iters, tol)?;
    if !run.converged {
        log::warn!("exact policy iteration stopped after {iters} iterations without reaching tolerance {tol:e}");
    }
    Ok((grid, run))
}

pub fn solve(g: &GlobalArgs, manifest_path: Option<&Path>) -> CliResult<u8> {
    let (mut cfg, deterministic, threads) = match manifest_path {
        Some(path) => {
            if g.seed.is_some() {
                return Err(CliError::Usage("--seed cannot override a manifest".into()));
            }
            let m = RunManifest::load(path)?;
            if m.command != "solve" {
                return Err(CliError::Usage(format!("manifest was written by '{}', not 'solve'", m.command)));
            }
            let cfg = m.config.ok_or_else(|| Error::Config("manifest has no config".into()))?;
            cfg.validate()?;
            (cfg, m.deterministic || g.deterministic, g.threads.or(m.threads))
        }
        None => (load_config(g.config.as_deref())?, g.deterministic, g.threads),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    let out = g.out.as_path();
    let mut manifest = RunManifest::new("solve", Some(cfg.clone()), cfg.seed, deterministic, threads);
    write_manifest(out, &manifest)?;
    fs::create_dir_all(out.join("checkpoints")).map_err(Error::from)?;

    let problem = cfg.build_problem()?;
    let controls = cfg.control_grid(&problem)?;
    let d = problem.state_dim();
    let mut t = Instant::now();
    let oracle = match &cfg.oracle {
        Some(o) if d <= 2 => {
            let (grid, run) = fd_reference(&cfg, &problem, &controls, o.grid_n)?;
            manifest.timings.insert("oracle".into(), t.elapsed().as_secs_f64());
            Some((grid, run.last().values.clone()))
        }
        _ => None,
    };
    let sde = cfg.sde_config(&problem).filter(|_| cfg.rollout.as_ref().is_some_and(|r| r.every > 0));
    if let Some(s) = &sde {
        s.validate()?;
    }
    let every = cfg.rollout.as_ref().map_or(0, |r| r.every);
    let cfg_json = cfg.to_json();
    let fingerprint = controls.fingerprint();

    t = Instant::now();
    let mut checkpoints = Vec::new();
    let outcome = pinn_spi_run(&problem, &controls, &cfg.spi_config(), &mut |view| {
        let name = format!("checkpoints/iter_{:03}.json", view.n);
        Checkpoint::new(cfg.seed, view.n, fingerprint.clone(), view.value.clone(), Some(view.policy.clone()))
            .with_config(cfg_json.clone())
            .save(&out.join(&name))?;
        checkpoints.push(name);
        let oracle_l2 = match &oracle {
            Some((grid, reference)) => Some(relative_l2_on_grid(grid, reference, view.value, None)?),
            None => None,
        };
        let reward = match &sde {
            Some(s) if view.n % every == 0 => {
                let r = evaluate_policy(&problem, &controls, view.policy, s)?;
                Some((r.mean, r.stderr))
            }
            _ => None,
        };
        Ok(IterationExtras { oracle_l2, reward })
    })?;
    manifest.timings.insert("train".into(), t.elapsed().as_secs_f64());
    for c in &checkpoints {
        manifest.output(c);
    }

    write_file(out, &mut manifest, "ledger.csv", &outcome.ledger.to_csv())?;
    let mut hist = String::from("iteration,net,epoch,loss\n");
    for (net, histories) in [("value", &outcome.value_histories), ("policy", &outcome.policy_histories)] {
        for (k, h) in histories.iter().enumerate() {
            for (epoch, loss) in h {
                let _ = writeln!(hist, "{},{net},{epoch},{loss}", k + 1);
            }
        }
    }
    write_file(out, &mut manifest, "loss_history.csv", &hist)?;

    let ledger = &outcome.ledger;
    let pts = |v: Vec<(usize, f64)>| v.into_iter().map(|(n, y)| (n as f64, y)).collect::<Vec<_>>();
    let mut series = vec![
        Series::new("L_value", pts(ledger.series(|r| Some(r.l_value)))),
        Series::new("L_policy", pts(ledger.series(|r| Some(r.l_policy)))),
        Series::new("step8 metric", pts(ledger.series(|r| Some(r.step8_metric)))),
    ];
    let oracle_series = pts(ledger.series(|r| r.oracle_l2));
    if !oracle_series.is_empty() {
        series.push(Series::new("oracle rel. L2", oracle_series));
    }
    write_file(out, &mut manifest, "convergence.svg", &line_chart("Soft policy iteration", "iteration", "value", &series, true))?;
    let rewards = pts(ledger.series(|r| r.reward_estimate));
    if !rewards.is_empty() {
        let chart = line_chart("Discounted reward", "iteration", "mean reward", &[Series::new("reward", rewards)], false);
        write_file(out, &mut manifest, "reward.svg", &chart)?;
    }
    write_manifest(out, &manifest)?;

    match &outcome.termination {
        Termination::Diverged(msg) => {
            eprintln!("training diverged: {msg}");
            Ok(EXIT_DIVERGED)
        }
        Termination::Converged => {
            log::info!("converged after {} iterations", ledger.len());
            Ok(EXIT_OK)
        }
        Termination::MaxIterations => Ok(EXIT_OK),
    }
}

fn report_file(report: &LemmaReport) -> String {
    format!("lemma_{}.csv", report.id.strip_prefix("lemma").unwrap_or(&report.id))
}

/// Reports against a constant kept for information only.
fn informational(report: &LemmaReport) -> bool {
    report.id.ends_with("_printed")
}

pub fn verify(g: &GlobalArgs, lemma: &str, trials: Option<usize>) -> CliResult<u8> {
    let ids: Vec<LemmaId> = if lemma == "all" {
        LemmaId::ALL.to_vec()
    } else {
        vec![LemmaId::from_str(lemma).map_err(|e| CliError::Usage(e.to_string()))?]
    };
    if trials == Some(0) {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    let seed = g.seed.unwrap_or(0);
    let out = g.out.as_path();
    let mut manifest = RunManifest::new("verify", None, seed, g.deterministic, g.threads);
    manifest.arg("lemma", lemma);
    manifest.arg("trials", trials);
    write_manifest(out, &manifest)?;

    let mut summaries = Vec::new();
    let mut violations = 0;
    for id in ids {
        let t = Instant::now();
        let reports = run_check(id, trials.unwrap_or(id.default_trials()), seed)?;
        manifest.timings.insert(format!("lemma_{id}"), t.elapsed().as_secs_f64());
        for r in &reports {
            write_file(out, &mut manifest, &report_file(r), &r.to_csv())?;
            let mut s = r.summary();
            s["informational"] = serde_json::Value::Bool(informational(r));
            summaries.push(s);
            if !informational(r) {
                violations += r.violations;
            }
            let status = if r.holds() { "ok" } else { "VIOLATED" };
            println!("{:<16} {:>6} trials  {:>5} violations  worst slack {:.3e}  {status}", r.id, r.trials, r.violations, r.worst_slack);
        }
    }
    let summary = serde_json::json!({ "seed": seed, "violations": violations, "reports": summaries });
    write_file(out, &mut manifest, "summary.json", &serde_json::to_string_pretty(&summary).map_err(Error::from)?)?;
    write_manifest(out, &manifest)?;
    Ok(if violations == 0 { EXIT_OK } else { EXIT_VIOLATION })
}

pub fn oracle(g: &GlobalArgs, problem_path: Option<&Path>, grid_n: Option<usize>) -> CliResult<u8> {
    let mut cfg = load_config(problem_path.or(g.config.as_deref()))?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    let problem = cfg.build_problem()?;
    let controls = cfg.control_grid(&problem)?;
    let d = problem.state_dim();
    if d > 2 {
        return Err(CliError::NoOracle(format!("finite differences need d <= 2, got d = {d}")));
    }
    let n = grid_n.unwrap_or_else(|| default_grid_n(&cfg, d));
    let out = g.out.as_path();
    let mut manifest = RunManifest::new("oracle", Some(cfg.clone()), cfg.seed, g.deterministic, g.threads);
    manifest.arg("grid_n", n);
    write_manifest(out, &manifest)?;

    let t = Instant::now();
    let (grid, run) = fd_reference(&cfg, &problem, &controls, n)?;
    manifest.timings.insert("oracle".into(), t.elapsed().as_secs_f64());
    let values = &run.last().values;
    let mut nodal = String::new();
    let header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    let _ = writeln!(nodal, "{},v", header.join(","));
    for (idx, v) in values.iter().enumerate() {
        let x: Vec<String> = grid.node(idx).iter().map(|c| c.to_string()).collect();
        let _ = writeln!(nodal, "{},{v}", x.join(","));
    }
    write_file(out, &mut manifest, "nodal.csv", &nodal)?;
    let mut conv = String::from("n,increment\n");
    for (k, inc) in run.increments.iter().enumerate() {
        let _ = writeln!(conv, "{},{inc}", k + 1);
    }
    write_file(out, &mut manifest, "convergence.csv", &conv)?;
    let pts = run.increments.iter().enumerate().map(|(k, v)| ((k + 1) as f64, *v)).collect();
    let chart = line_chart("Exact soft policy iteration", "iteration", "||v(n+1) - v(n)||", &[Series::new("increment", pts)], true);
    write_file(out, &mut manifest, "convergence.svg", &chart)?;
    let summary = serde_json::json!({
        "grid_n": n,
        "iterations": run.increments.len(),
        "converged": run.converged,
        "final_increment": run.increments.last(),
        "l2_norm": grid.l2_norm(values),
    });
    write_file(out, &mut manifest, "summary.json", &serde_json::to_string_pretty(&summary).map_err(Error::from)?)?;
    write_manifest(out, &manifest)?;
    Ok(EXIT_OK)
}

pub fn rollout(g: &GlobalArgs, checkpoint: &Path, paths: Option<usize>, dt: Option<f64>, horizon: Option<f64>) -> CliResult<u8> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let cfg = config_for_checkpoint(g, &ckpt)?;
    let problem = cfg.build_problem()?;
    let controls = cfg.control_grid(&problem)?;
    let policy = ckpt.policy.as_ref().ok_or_else(|| CliError::Usage("checkpoint holds no policy".into()))?;
    policy.check_grid(&controls)?;

    let mut sde = cfg.sde_config(&problem).unwrap_or_else(|| SdeConfig::for_problem(&problem, cfg.seed));
    if let Some(p) = paths {
        sde.paths = p;
    }
    if let Some(v) = dt {
        sde.dt = v;
    }
    if let Some(v) = horizon {
        sde.horizon = v;
    }
    if let Some(s) = g.seed {
        sde.seed = s;
    }
    sde.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let out = g.out.as_path();
    let mut manifest = RunManifest::new("rollout", Some(cfg.clone()), sde.seed, g.deterministic, g.threads);
    manifest.arg("checkpoint", checkpoint.display().to_string());
    manifest.arg("sde", &sde);
    write_manifest(out, &manifest)?;

    let t = Instant::now();
    let report = evaluate_policy(&problem, &controls, policy, &sde)?;
    manifest.timings.insert("rollout".into(), t.elapsed().as_secs_f64());
    let mut csv = String::from("path,reward\n");
    for (i, r) in report.rewards.iter().enumerate() {
        let _ = writeln!(csv, "{i},{r}");
    }
    write_file(out, &mut manifest, "eval.csv", &csv)?;
    let summary = serde_json::json!({
        "mean": report.mean,
        "stderr": report.stderr,
        "paths": sde.paths,
        "truncated_paths": report.truncated_paths,
        "tail_bound": report.tail_bound,
        "dt": sde.dt,
        "horizon": sde.horizon,
        "seed": sde.seed,
        "iteration": ckpt.iteration,
    });
    write_file(out, &mut manifest, "summary.json", &serde_json::to_string_pretty(&summary).map_err(Error::from)?)?;
    write_manifest(out, &manifest)?;
    println!("mean discounted reward {:.6} ± {:.6} over {} paths", report.mean, report.stderr, sde.paths);
    Ok(EXIT_OK)
}

pub fn compare(g: &GlobalArgs, checkpoint: &Path) -> CliResult<u8> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let cfg = config_for_checkpoint(g, &ckpt)?;
    let problem = cfg.build_problem()?;
    let controls = cfg.control_grid(&problem)?;
    let d = problem.state_dim();
    if d > 2 && problem.lqr_spec().is_none() {
        return Err(CliError::NoOracle(format!("d = {d} is beyond finite differences and the problem is not LQR")));
    }
    let value = &ckpt.value;
    if value.state_dim() != d {
        return Err(Error::Dimension { expected: d, got: value.state_dim(), context: "checkpoint value net" }.into());
    }
    let seed = g.seed.unwrap_or(cfg.seed);
    let out = g.out.as_path();
    let mut manifest = RunManifest::new("compare", Some(cfg.clone()), seed, g.deterministic, g.threads);
    manifest.arg("checkpoint", checkpoint.display().to_string());
    write_manifest(out, &manifest)?;

    let t = Instant::now();
    let radius = problem.domain().radius;
    let mut slices = Vec::new();
    let (kind, region, rel) = if d <= 2 {
        let (grid, run) = fd_reference(&cfg, &problem, &controls, default_grid_n(&cfg, d))?;
        let reference = &run.last().values;
        let rel = relative_l2_on_grid(&grid, reference, value, None)?;
        let n = grid.nodes_per_axis();
        for axis in 0..d {
            let mut learned = Vec::new();
            let mut exact = Vec::new();
            for i in 0..n {
                let mut idx = [n / 2; 2];
                idx[axis] = i;
                let flat = if d == 1 { i } else { idx[0] * n + idx[1] };
                let x = grid.node(flat);
                learned.push((x[axis], value.value(&x)?));
                exact.push((x[axis], reference[flat]));
            }
            slices.push((axis, learned, exact));
        }
        ("fd", "full grid", rel)
    } else {
        let rel = riccati_band_error(&problem, value, 0.5, BAND_SAMPLES, seed)?;
        let reference = riccati_reference(&problem)?;
        for axis in 0..d {
            let mut learned = Vec::new();
            let mut exact = Vec::new();
            for i in 0..=200 {
                let mut x = vec![0.0; d];
                x[axis] = radius * (i as f64 / 100.0 - 1.0);
                learned.push((x[axis], value.value(&x)?));
                exact.push((x[axis], reference.value(&x)?));
            }
            slices.push((axis, learned, exact));
        }
        ("riccati", "inner half-domain", rel)
    };
    manifest.timings.insert("compare".into(), t.elapsed().as_secs_f64());

    let mut series = Vec::new();
    for (axis, learned, exact) in slices.into_iter().take(3) {
        series.push(Series::new(format!("learned, x{}", axis + 1), learned));
        series.push(Series::new(format!("{kind}, x{}", axis + 1), exact));
    }
    let chart = line_chart("Value along axis slices", "coordinate", "v", &series, false);
    write_file(out, &mut manifest, "overlay.svg", &chart)?;
    let summary = serde_json::json!({
        "oracle": kind,
        "region": region,
        "relative_l2": rel,
        "iteration": ckpt.iteration,
    });
    write_file(out, &mut manifest, "compare.json", &serde_json::to_string_pretty(&summary).map_err(Error::from)?)?;
    write_manifest(out, &manifest)?;
    println!("relative L2 error against the {kind} oracle ({region}): {rel:.4e}");
    Ok(EXIT_OK)
}
