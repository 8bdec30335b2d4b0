use dsm_core::corpus::*;
use dsm_core::flow::*;
use dsm_core::hilbert::{ProblemInstance, Vector};
use dsm_core::reg_root::{solve_regularized, NewtonOptions};

fn problem(name: &str) -> ProblemInstance {
    build_problem(&CorpusSpec::named(name)).unwrap()
}

fn root(p: &ProblemInstance, f: Option<&Vector>, eps: f64) -> Vector {
    solve_regularized(p, f, eps, &Vector::zeros(p.dim()), NewtonOptions::default())
        .unwrap()
        .v
}

fn run(p: &ProblemInstance, eps: f64, t_end: f64, tolerances: FlowTolerances) -> FlowTrajectory {
    let config = FlowConfig { epsilon: eps, t_end, tolerances };
    integrate_flow(p, p.data(), &config, &Vector::zeros(p.dim())).unwrap()
}

#[test]
fn residual_decays_like_exp_minus_t_on_every_problem() {
    for name in REGISTERED {
        let p = problem(name);
        let traj = run(&p, 1e-2, 5.0, FlowTolerances::default());
        assert_eq!(traj.checkpoints.len(), 10);
        assert!(traj.max_decay_deviation <= 1e-3, "{name}: {}", traj.max_decay_deviation);
        for c in &traj.checkpoints {
            let expected = traj.g0 * (-c.t).exp();
            assert!((c.g / expected - 1.0).abs() <= 1e-3, "{name} at t = {}", c.t);
        }
    }
}

#[test]
fn trajectory_stays_inside_the_shrinking_ball() {
    for name in REGISTERED {
        let p = problem(name);
        let traj = run(&p, 1e-2, 5.0, FlowTolerances::default());
        let v = root(&p, None, 1e-2);
        let check = traj.trajectory_bound(&v);
        assert!(check.pass, "{name}: ratio {}", check.ratio);
        assert_eq!(check.instances, traj.checkpoints.len());
    }
}

#[test]
fn stopping_time_lands_within_g0_eps() {
    for name in [PSD_SINGULAR_LINEAR, CUBIC_MONOTONE] {
        let p = problem(name);
        for eps in [1e-1, 1e-2, 1e-3] {
            let sol = solve_dsm(&p, eps, &Vector::zeros(p.dim()), FlowTolerances::default()).unwrap();
            let last = sol.trajectory.checkpoints.last().unwrap();
            assert_eq!(last.t, -2.0 * eps.ln());
            let check = sol.stopping_bound(&root(&p, None, eps));
            assert!(check.pass, "{name} eps {eps}: ratio {}", check.ratio);
        }
    }
}

#[test]
fn tighter_integration_tolerances_shrink_decay_deviation() {
    let p = problem(CUBIC_MONOTONE);
    let loose = FlowTolerances { rel_tol: 1e-4, abs_tol: 1e-6, ..FlowTolerances::default() };
    let tight = FlowTolerances::default();
    let a = run(&p, 1e-2, 5.0, loose);
    let b = run(&p, 1e-2, 5.0, tight);
    assert!(b.max_decay_deviation < a.max_decay_deviation);
    assert!(b.accepted_steps > a.accepted_steps);
}

#[test]
fn noisy_run_stops_near_the_noisy_root() {
    let p = problem(PSD_SINGULAR_LINEAR);
    for (k, delta) in [1e-2, 1e-3].into_iter().enumerate() {
        let fd = add_noise(p.data(), NoiseModel { delta, seed: k as u64 }).unwrap();
        let sol =
            solve_dsm_noisy(&p, &fd, delta, 0.5, &Vector::zeros(p.dim()), FlowTolerances::default())
                .unwrap();
        assert_eq!(sol.epsilon_used, delta.sqrt());
        let w = root(&p, Some(&fd), sol.epsilon_used);
        assert!(sol.stopping_bound(&w).pass);
    }
}

#[test]
fn noisy_errors_shrink_with_delta() {
    let p = problem(PSD_SINGULAR_LINEAR);
    let y = p.known_solution().unwrap().clone();
    let errors: Vec<f64> = [1e-2, 1e-3, 1e-4]
        .into_iter()
        .enumerate()
        .map(|(k, delta)| {
            let fd = add_noise(p.data(), NoiseModel { delta, seed: k as u64 }).unwrap();
            let sol = solve_dsm_noisy(&p, &fd, delta, 0.5, &Vector::zeros(p.dim()), FlowTolerances::default())
                .unwrap();
            sol.w_final.distance(&y)
        })
        .collect();
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
}

#[test]
fn trajectory_csv_has_one_row_per_checkpoint() {
    let p = problem(HILBERT_PSD);
    let traj = run(&p, 1e-1, 1.0, FlowTolerances { checkpoint_count: 4, ..FlowTolerances::default() });
    let mut buf = Vec::new();
    traj.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("t,g,u_0,"));
    assert_eq!(lines[1].split(',').count(), 2 + p.dim());
}
