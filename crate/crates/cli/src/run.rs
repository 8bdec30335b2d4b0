use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use dsm_core::checks::{BoundCheck, BOUND_SLACK};
use dsm_core::corpus::{add_noise, build_problem, load_description, NoiseModel, ProblemDescription};
use dsm_core::flow::{
    integrate_flow, solve_dsm_noisy, stopping_time, DsmSolution, FlowConfig, FlowTrajectory,
};
use dsm_core::hilbert::{ProblemInstance, Vector};
use dsm_core::iterate::{
    run_iteration, taylor_along_iterates, verify_step_recursion, IterationConfig, Schedule,
};
use dsm_core::lemma::{check_lemma_conditions, random_certificates, RecursionTrace};
use dsm_core::reg_root::{
    minimal_norm_solution, regularization_path, solve_regularized, NewtonOptions,
};
use dsm_core::DsmError;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Kind, ProblemRef};
use crate::report::{emit_table, Artifact, Cell, RunReport, Table, TableFormat};
use crate::ConfigError;

/// Slack on unrolled-bound certificates.
pub const LEMMA_SLACK: f64 = 1e-12;

pub struct Context {
    /// Directory that relative problem-file paths are resolved against.
    pub base_dir: PathBuf,
}

pub type Outcome = (RunReport, Vec<Artifact>);

pub fn run_experiment(kind: Kind, cfg: &ExperimentConfig, ctx: &Context) -> Result<Outcome> {
    if let Some(k) = cfg.kind {
        if k != kind {
            return Err(ConfigError(format!("config is for `{k}`, not `{kind}`")).into());
        }
    }
    match kind {
        Kind::Flow => run_flow(cfg, ctx),
        Kind::Iterate => run_iterate(cfg, ctx),
        Kind::RegPath => run_reg_path(cfg, ctx),
        Kind::NoiseStudy => run_noise_study(cfg, ctx),
        Kind::LemmaSim => run_lemma_sim(cfg),
        Kind::Suite => run_suite(cfg, ctx),
    }
}

pub fn resolve_problem(cfg: &ExperimentConfig, ctx: &Context) -> Result<ProblemInstance> {
    match &cfg.problem {
        ProblemRef::Corpus(spec) => {
            let mut spec = spec.clone();
            spec.seed = spec.seed.or(Some(cfg.seed()));
            Ok(build_problem(&spec)?)
        }
        ProblemRef::File { file } => {
            let path = resolve_path(&ctx.base_dir, file);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| ConfigError(format!("cannot read problem file {}: {e}", path.display())))?;
            let desc: ProblemDescription = serde_json::from_str(&text)
                .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
            Ok(load_description(&desc)?)
        }
    }
}

fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn initial_state(p: &ProblemInstance, u0: &Option<Vec<f64>>) -> Result<Vector> {
    match u0 {
        None => Ok(Vector::zeros(p.dim())),
        Some(v) if v.len() == p.dim() => Ok(Vector::new(v.clone())),
        Some(v) => Err(ConfigError(format!("u0 has {} entries, problem has dim {}", v.len(), p.dim())).into()),
    }
}

fn regularized_root(p: &ProblemInstance, f: Option<&Vector>, eps: f64) -> Result<Vector> {
    let init = Vector::zeros(p.dim());
    Ok(solve_regularized(p, f, eps, &init, NewtonOptions::default())?.v)
}

fn tagged(mut c: BoundCheck, tag: String) -> BoundCheck {
    c.id = format!("{}[{tag}]", c.id);
    c
}

fn csv_artifact(name: String, write: impl FnOnce(&mut Vec<u8>) -> dsm_core::Result<()>) -> Result<Artifact> {
    let mut contents = Vec::new();
    write(&mut contents)?;
    Ok(Artifact { name, contents })
}

fn require_nonempty(name: &str, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(ConfigError(format!("{name} must not be empty")).into());
    }
    Ok(())
}

struct FlowRun {
    epsilon: f64,
    at_stopping_time: bool,
    trajectory: FlowTrajectory,
    v_eps: Vector,
}

fn run_flow(cfg: &ExperimentConfig, ctx: &Context) -> Result<Outcome> {
    let params = &cfg.flow;
    require_nonempty("flow.epsilons", &params.epsilons)?;
    let p = resolve_problem(cfg, ctx)?;
    let u0 = initial_state(&p, &params.u0)?;
    let runs: Vec<FlowRun> = params
        .epsilons
        .par_iter()
        .map(|&epsilon| -> Result<FlowRun> {
            let t_end = match params.t_end {
                Some(t) => t,
                None => stopping_time(epsilon)?,
            };
            let config = FlowConfig { epsilon, t_end, tolerances: params.tolerances };
            config.validate()?;
            let trajectory = integrate_flow(&p, p.data(), &config, &u0)?;
            let v_eps = regularized_root(&p, None, epsilon)?;
            Ok(FlowRun { epsilon, at_stopping_time: params.t_end.is_none(), trajectory, v_eps })
        })
        .collect::<Result<_>>()?;

    let mut report = RunReport::new(Kind::Flow, cfg.echo(Kind::Flow), Some(&p));
    report.table = Table::new(&[
        "eps", "t_end", "g0", "g_end", "max_decay_dev", "dist_to_v_eps", "trajectory_ratio", "accepted", "rejected",
    ]);
    let mut artifacts = Vec::new();
    let mut worst_dev: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    for (i, run) in runs.iter().enumerate() {
        let tag = format!("eps={:e}", run.epsilon);
        let traj = &run.trajectory;
        let last = traj.checkpoints.last().expect("at least two checkpoints");
        let bound = traj.trajectory_bound(&run.v_eps);
        worst_dev = worst_dev.max(traj.max_decay_deviation);
        worst_ratio = worst_ratio.max(bound.ratio);
        report.table.push(vec![
            run.epsilon.into(),
            last.t.into(),
            traj.g0.into(),
            last.g.into(),
            traj.max_decay_deviation.into(),
            last.u.distance(&run.v_eps).into(),
            bound.ratio.into(),
            traj.accepted_steps.into(),
            traj.rejected_steps.into(),
        ]);
        report.check(tagged(traj.decay_check(params.tolerances.decay_tol), tag.clone()));
        report.check(tagged(bound, tag.clone()));
        if run.at_stopping_time {
            let sol = DsmSolution { u_final: last.u.clone(), trajectory: traj.clone() };
            report.check(tagged(sol.stopping_bound(&run.v_eps), tag));
        }
        artifacts.push(csv_artifact(format!("flow_{i}.csv"), |w| traj.write_csv(w))?);
    }
    report.metric("max_decay_deviation", worst_dev);
    report.metric("trajectory_bound_worst_ratio", worst_ratio);
    report.metric("trajectory_bound_slack", BOUND_SLACK);
    Ok((report.finish(), artifacts))
}

fn run_iterate(cfg: &ExperimentConfig, ctx: &Context) -> Result<Outcome> {
    let params = &cfg.iterate;
    let p = resolve_problem(cfg, ctx)?;
    let u0 = initial_state(&p, &params.u0)?;
    let schedule = match &params.schedule {
        Some(s) => s.clone(),
        None => Schedule::oracle_for(&p, params.linear_c)?,
    };
    let config = IterationConfig {
        schedule,
        steps: params.steps.clone(),
        max_n: params.max_n,
        stop_residual: params.stop_residual,
        track_oracle: params.track_oracle,
    };
    let history = run_iteration(&p, p.data(), &u0, &config)?;

    let mut report = RunReport::new(Kind::Iterate, cfg.echo(Kind::Iterate), Some(&p));
    let last = history.last();
    report.metric("schedule", &history.schedule);
    report.metric("steps", history.steps.len() - 1);
    report.metric("converged", history.converged);
    report.metric("final_residual", last.residual);
    report.metric("final_eps", last.eps);
    if let Some(y) = p.known_solution() {
        report.metric("final_error_to_y", last.u.distance(y));
    }
    let tracked = history.steps.iter().all(|s| s.oracle_g.is_some());
    if tracked {
        match verify_step_recursion(&history, &p) {
            Ok(rec) => {
                report.metric("recursion_failed_steps", rec.per_step_pass.iter().filter(|ok| !**ok).count());
                report.check(rec.check);
            }
            Err(DsmError::NotApplicable(reason)) => report.metric("recursion_check", reason),
            Err(e) => return Err(e.into()),
        }
        if history.schedule.is_oracle() && p.m2_bound().is_some() {
            report.check(taylor_along_iterates(&history, &p, p.data())?);
        }
    }
    report.table = Table::new(&["n", "eps_n", "h_n", "residual_n", "oracle_g_n", "oracle_b_n"]);
    for s in &history.steps {
        report.table.push(vec![
            s.n.into(),
            s.eps.into(),
            s.h.into(),
            s.residual.into(),
            s.oracle_g.into(),
            s.oracle_b.into(),
        ]);
    }
    let artifacts = vec![csv_artifact("history.csv".into(), |w| history.write_csv(w))?];
    Ok((report.finish(), artifacts))
}

fn run_reg_path(cfg: &ExperimentConfig, ctx: &Context) -> Result<Outcome> {
    let eps = &cfg.reg_path.epsilons;
    require_nonempty("reg_path.epsilons", eps)?;
    let p = resolve_problem(cfg, ctx)?;
    let path = regularization_path(&p, eps, NewtonOptions::default())?;
    let y = match minimal_norm_solution(&p) {
        Ok(y) => Some(y),
        Err(DsmError::NotApplicable(_)) => None,
        Err(e) => return Err(e.into()),
    };

    let mut report = RunReport::new(Kind::RegPath, cfg.echo(Kind::RegPath), Some(&p));
    report.table = Table::new(&["eps", "v_norm", "error_to_y", "b_n", "newton_iters", "converged"]);
    for (i, e) in path.entries.iter().enumerate() {
        let b = if i == 0 { None } else { Some(path.b_gaps[i - 1]) };
        let err = y.as_ref().map(|y| e.root.v.distance(y));
        report.table.push(vec![
            e.epsilon.into(),
            e.v_norm.into(),
            err.into(),
            b.into(),
            e.root.newton_iters.into(),
            e.converged.into(),
        ]);
    }
    report.metric("all_newton_converged", path.entries.iter().all(|e| e.converged));
    if let Some(y) = &y {
        let yn = y.norm();
        let norm_rel = "||V_eps|| <= ||y||";
        let pair_rel = "<V_eps, V_eps - y> <= 0";
        let dist_rel = "||V_eps - y||^2 <= <y, y - V_eps>";
        let pair_tol = 1e-9 * (1.0 + yn * yn);
        let mut norms = Vec::new();
        let mut pairs = Vec::new();
        let mut dists = Vec::new();
        for e in &path.entries {
            let v = &e.root.v;
            let d = v - y;
            norms.push(BoundCheck::new("minimal-norm-bound", norm_rel, v.norm(), yn, 1.0 + 1e-8));
            pairs.push(BoundCheck::new("path-pairing", pair_rel, v.inner(&d), pair_tol, 1.0));
            let rhs = y.inner(&(y - v)) + 1e-9;
            dists.push(BoundCheck::new("path-distance", dist_rel, d.norm().powi(2), rhs, 1.0));
        }
        report.check(BoundCheck::worst_of("minimal-norm-bound", norm_rel, norms));
        report.check(BoundCheck::worst_of("path-pairing", pair_rel, pairs));
        report.check(BoundCheck::worst_of("path-distance", dist_rel, dists));
        let errors: Vec<f64> = path.entries.iter().map(|e| e.root.v.distance(y)).collect();
        report.metric("error_nonincreasing", errors.windows(2).all(|w| w[1] <= w[0]));
        report.metric("final_error_to_y", *errors.last().expect("nonempty path"));
        report.metric("minimal_norm", yn);
    }
    let artifacts = vec![Artifact {
        name: "reg_path.csv".into(),
        contents: emit_table(&report, TableFormat::Csv).into_bytes(),
    }];
    Ok((report.finish(), artifacts))
}

struct NoisyRun {
    delta: f64,
    epsilon: f64,
    t_stop: f64,
    g0: f64,
    stop_check: BoundCheck,
    gap_check: BoundCheck,
    error_to_y: Option<f64>,
    trajectory: FlowTrajectory,
}

fn root_gap_check(p: &ProblemInstance, f_noisy: &Vector, delta: f64, eps: f64) -> Result<BoundCheck> {
    let w = regularized_root(p, Some(f_noisy), eps)?;
    let v = regularized_root(p, None, eps)?;
    Ok(BoundCheck::new(
        "noisy-root-gap",
        "||W_delta - V_eps|| <= delta/eps",
        w.distance(&v),
        delta / eps,
        BOUND_SLACK,
    ))
}

fn run_noise_study(cfg: &ExperimentConfig, ctx: &Context) -> Result<Outcome> {
    let params = &cfg.noise_study;
    require_nonempty("noise_study.deltas", &params.deltas)?;
    if !params.deltas.windows(2).all(|w| w[1] < w[0]) {
        return Err(ConfigError("noise_study.deltas must be strictly decreasing".into()).into());
    }
    let p = resolve_problem(cfg, ctx)?;
    let u0 = Vector::zeros(p.dim());
    let seed = cfg.seed();
    let noisy: Vec<Vector> = params
        .deltas
        .iter()
        .enumerate()
        .map(|(i, &delta)| add_noise(p.data(), NoiseModel { delta, seed: seed.wrapping_add(i as u64) }))
        .collect::<dsm_core::Result<_>>()?;

    let runs: Vec<NoisyRun> = params
        .deltas
        .par_iter()
        .zip(noisy.par_iter())
        .map(|(&delta, fd)| -> Result<NoisyRun> {
            let sol = solve_dsm_noisy(&p, fd, delta, params.b_exp, &u0, params.tolerances)?;
            let w_root = regularized_root(&p, Some(fd), sol.epsilon_used)?;
            Ok(NoisyRun {
                delta,
                epsilon: sol.epsilon_used,
                t_stop: sol.stopping_time,
                g0: sol.trajectory.g0,
                stop_check: sol.stopping_bound(&w_root),
                gap_check: root_gap_check(&p, fd, delta, sol.epsilon_used)?,
                error_to_y: p.known_solution().map(|y| sol.w_final.distance(y)),
                trajectory: sol.trajectory,
            })
        })
        .collect::<Result<_>>()?;

    let mut report = RunReport::new(Kind::NoiseStudy, cfg.echo(Kind::NoiseStudy), Some(&p));
    report.table = Table::new(&[
        "delta", "eps", "t_delta", "g0_delta", "dist_to_w_root", "stop_bound", "root_gap", "gap_bound", "error_to_y",
    ]);
    let mut artifacts = Vec::new();
    for (i, r) in runs.iter().enumerate() {
        let tag = format!("delta={:e}", r.delta);
        report.table.push(vec![
            r.delta.into(),
            r.epsilon.into(),
            r.t_stop.into(),
            r.g0.into(),
            r.stop_check.lhs.into(),
            r.stop_check.rhs.into(),
            r.gap_check.lhs.into(),
            r.gap_check.rhs.into(),
            r.error_to_y.into(),
        ]);
        report.check(tagged(r.stop_check.clone(), tag.clone()));
        report.check(tagged(r.gap_check.clone(), tag));
        artifacts.push(csv_artifact(format!("noise_{i}.csv"), |w| r.trajectory.write_csv(w))?);
    }

    let grid: Vec<(usize, f64)> = (0..noisy.len())
        .flat_map(|i| params.gap_epsilons.iter().map(move |&e| (i, e)))
        .collect();
    let grid_checks: Vec<BoundCheck> = grid
        .par_iter()
        .map(|&(i, eps)| {
            root_gap_check(&p, &noisy[i], params.deltas[i], eps)
                .map(|c| tagged(c, format!("delta={:e},eps={eps:e}", params.deltas[i])))
        })
        .collect::<Result<_>>()?;
    report.metric("gap_grid_points", grid_checks.len());
    for c in grid_checks {
        report.check(c);
    }

    let errors: Vec<f64> = runs.iter().filter_map(|r| r.error_to_y).collect();
    if errors.len() == runs.len() && errors.len() >= 2 {
        let worst = errors.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
        let mut c = BoundCheck::new(
            "stopping-rule-convergence",
            "||w_delta(t_delta) - y|| strictly decreasing as delta decreases",
            worst,
            1.0,
            1.0,
        );
        c.pass = worst < 1.0;
        c.instances = errors.len() - 1;
        report.check(c);
        report.metric("errors_strictly_decreasing", worst < 1.0);
    }
    Ok((report.finish(), artifacts))
}

fn run_lemma_sim(cfg: &ExperimentConfig) -> Result<Outcome> {
    let params = &cfg.lemma_sim;
    if params.horizon == 0 {
        return Err(ConfigError("lemma_sim.horizon must be at least 1".into()).into());
    }
    let a = params.a.generate(params.horizon)?;
    let b = params.b.generate(params.horizon)?;
    let trace = RecursionTrace::new(params.g1, a.clone(), b.clone())?;
    let conditions = check_lemma_conditions(&a, &b, params.horizon)?;

    let mut report = RunReport::new(Kind::LemmaSim, cfg.echo(Kind::LemmaSim), None);
    let ind_rel = "g_{n+1} <= b_n + sum_k b_k prod(1 - a_j) + g_1 prod(1 - a_j)";
    let maj_rel = "product bound <= exponential majorant";
    let factor = 1.0 + LEMMA_SLACK;
    let ind = trace
        .g[1..]
        .iter()
        .zip(&trace.bound)
        .map(|(&g, &bd)| BoundCheck::new("induction-bound", ind_rel, g, bd.max(LEMMA_SLACK), factor));
    report.check(BoundCheck::worst_of("induction-bound", ind_rel, ind));
    let maj = trace
        .bound
        .iter()
        .zip(&trace.majorant)
        .map(|(&bd, &m)| BoundCheck::new("exponential-majorant", maj_rel, bd, m.max(LEMMA_SLACK), factor));
    report.check(BoundCheck::worst_of("exponential-majorant", maj_rel, maj));

    report.metric("g_final", *trace.g.last().expect("nonempty trace"));
    report.metric("tail_sum", conditions.tail_sum);
    report.metric("partial_sum_a", *conditions.partial_sums.last().expect("nonempty"));
    report.metric("divergent_trend", conditions.divergent_trend);
    report.metric("tail_decreasing", conditions.tail_decreasing);
    if params.random_trials > 0 {
        let summary = random_certificates(params.random_trials, cfg.seed(), params.random_max_len, LEMMA_SLACK)?;
        let mut c = BoundCheck::new(
            "random-induction-certificates",
            "g_{n+1} <= product bound <= exponential majorant on random admissible triples",
            summary.failures as f64,
            0.0,
            1.0,
        );
        c.instances = summary.trials;
        report.check(c);
        report.metric("random_certificates", summary);
    }

    report.table = Table::new(&["n", "a_n", "b_n", "g_n+1", "bound_n", "majorant_n"]);
    for n in 0..params.horizon {
        report.table.push(vec![
            (n + 1).into(),
            a[n].into(),
            b[n].into(),
            trace.g[n + 1].into(),
            trace.bound[n].into(),
            trace.majorant[n].into(),
        ]);
    }
    let artifacts = vec![Artifact {
        name: "lemma.csv".into(),
        contents: emit_table(&report, TableFormat::Csv).into_bytes(),
    }];
    Ok((report.finish(), artifacts))
}

fn run_suite(cfg: &ExperimentConfig, ctx: &Context) -> Result<Outcome> {
    if cfg.runs.is_empty() {
        return Err(ConfigError("suite needs a nonempty `runs` list".into()).into());
    }
    let outcomes: Vec<Outcome> = cfg
        .runs
        .par_iter()
        .enumerate()
        .map(|(i, sub)| -> Result<Outcome> {
            let kind = sub
                .kind
                .ok_or_else(|| ConfigError(format!("runs[{i}] has no kind")))?;
            if kind == Kind::Suite {
                return Err(ConfigError(format!("runs[{i}]: suites do not nest")).into());
            }
            let mut sub = sub.clone();
            sub.seed = sub.seed.or(cfg.seed);
            run_experiment(kind, &sub, ctx).with_context(|| format!("runs[{i}] ({kind})"))
        })
        .collect::<Result<_>>()?;

    let mut report = RunReport::new(Kind::Suite, cfg.echo(Kind::Suite), None);
    report.table = Table::new(&["run", "kind", "label", "problem", "checks", "all_passed"]);
    let mut artifacts = Vec::new();
    for (i, (mut sub, files)) in outcomes.into_iter().enumerate() {
        let label = sub.config.get("label").and_then(|v| v.as_str()).unwrap_or("").to_string();
        let problem = sub.problem.as_ref().map_or(String::new(), |p| p.name.clone());
        report.table.push(vec![
            i.into(),
            Cell::Text(sub.kind.clone()),
            Cell::Text(label),
            Cell::Text(problem),
            sub.checks.len().into(),
            sub.all_passed.into(),
        ]);
        for mut a in files {
            a.name = format!("run{i:02}_{}", a.name);
            sub.artifacts.push(a.name.clone());
            artifacts.push(a);
        }
        report.runs.push(sub);
    }
    report.metric("runs", report.runs.len());
    report.metric("failed_checks", report.failed_checks());
    Ok((report.finish(), artifacts))
}
