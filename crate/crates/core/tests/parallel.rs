use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use apalm::desk::DeskProblem;
use apalm::executor::parallel::{effective_config, parallel_run_full};
use apalm::executor::replay::replay;
use apalm::problem::{FnLoss, SeparableQuadratic};
use apalm::solver::LineSearch;
use apalm::trace::RunStatus;
use apalm::{ApalmError, BlockSpace, GlobalLipschitz, ParallelConfig, Problem, Regularizer, SolverConfig, Throttle, Variant};

fn nmf() -> (Problem, apalm::BlockVector) {
    let p = DeskProblem::Nmf;
    (p.problem().with_global_lipschitz(GlobalLipschitz::Fixed(40.0)).unwrap(), p.initial_point(3))
}

fn cfg(variant: Variant, n: u64) -> SolverConfig {
    SolverConfig {
        variant,
        max_iters: n,
        tol_residual: f64::MIN_POSITIVE,
        seed: 5,
        ..Default::default()
    }
}

#[test]
fn four_worker_runs_replay_bit_for_bit() {
    let (problem, x0) = nmf();
    for variant in [Variant::Deterministic, Variant::Stochastic] {
        let out = parallel_run_full(&problem, &x0, &cfg(variant, 1500), &ParallelConfig::new(4)).unwrap();
        assert_eq!(out.trace.iterations(), 1500);
        assert!(out.script.schedule.max_delay() <= 16);
        let again = replay(&problem, &x0, &out.config, &out.script).unwrap();
        assert_eq!(again.to_csv(), out.trace.to_csv());
        assert_eq!(again.final_point, out.trace.final_point);
        assert!(out.trace.fejer_violations.is_empty());
    }
}

#[test]
fn effective_config_pins_tau_and_rho() {
    let base = cfg(Variant::Deterministic, 10);
    let eff = effective_config(&base, &ParallelConfig { workers: 3, tau_max: None, throttle: Throttle::Block }).unwrap();
    assert_eq!((eff.tau, eff.rho_override), (12, Some(12)));
    let eff = effective_config(&cfg(Variant::Stochastic, 10), &ParallelConfig::new(2)).unwrap();
    assert_eq!((eff.tau, eff.rho_override), (8, None));
}

#[test]
fn zero_staleness_cap_blocks_until_fresh() {
    let (problem, x0) = nmf();
    let pcfg = ParallelConfig { workers: 4, tau_max: Some(0), throttle: Throttle::Block };
    let out = parallel_run_full(&problem, &x0, &cfg(Variant::Deterministic, 800), &pcfg).unwrap();
    assert_eq!(out.script.schedule.max_delay(), 0);
    assert_eq!(out.trace.iterations(), 800);
}

#[test]
fn error_throttle_reports_staleness_or_stays_fresh() {
    let (problem, x0) = nmf();
    let pcfg = ParallelConfig { workers: 4, tau_max: Some(0), throttle: Throttle::Error };
    match parallel_run_full(&problem, &x0, &cfg(Variant::Stochastic, 3000), &pcfg) {
        Ok(out) => assert_eq!(out.script.schedule.max_delay(), 0),
        Err(e) => assert!(matches!(e, ApalmError::Staleness { bound: 0, .. }), "{e}"),
    }
}

#[test]
fn worker_panic_becomes_an_error() {
    let calls = Arc::new(AtomicUsize::new(0));
    let c = calls.clone();
    let loss = FnLoss::new(
        |x| 0.5 * x.norm_sq(),
        move |x, j, out| {
            if c.fetch_add(1, Ordering::SeqCst) == 50 {
                panic!("injected failure");
            }
            out.copy_from_slice(x.block(j));
        },
        |_, _| 1.0,
    );
    let problem = Problem::new(BlockSpace::uniform(4, 1).unwrap(), Arc::new(loss), vec![Regularizer::Zero; 4])
        .unwrap()
        .with_global_lipschitz(GlobalLipschitz::Fixed(1.0))
        .unwrap();
    let x0 = apalm::BlockVector::from_scalars(&[1.0, 2.0, 3.0, 4.0]);
    let err = parallel_run_full(&problem, &x0, &cfg(Variant::Deterministic, 10_000), &ParallelConfig::new(2)).unwrap_err();
    assert!(matches!(err, ApalmError::WorkerPanic(ref m) if m.contains("injected")), "{err}");
}

#[test]
fn line_search_is_rejected_in_parallel() {
    let (problem, x0) = nmf();
    let mut c = cfg(Variant::Deterministic, 10);
    c.linesearch = Some(LineSearch::default());
    assert!(matches!(parallel_run_full(&problem, &x0, &c, &ParallelConfig::new(2)), Err(ApalmError::Config(_))));
}

#[test]
fn parallel_run_stops_on_convergence() {
    let smooth = SeparableQuadratic { curvature: vec![1.0, 2.0, 0.5, 1.5], center: apalm::BlockVector::from_scalars(&[1.0, -2.0, 0.1, 3.0]) };
    let problem = Problem::new(BlockSpace::uniform(4, 1).unwrap(), Arc::new(smooth), vec![Regularizer::L1 { weight: 0.2 }; 4])
        .unwrap()
        .with_global_lipschitz(GlobalLipschitz::Fixed(2.0))
        .unwrap();
    let x0 = apalm::BlockVector::from_scalars(&[0.0; 4]);
    let mut c = cfg(Variant::Deterministic, 200_000);
    c.tol_residual = 1e-8;
    let out = parallel_run_full(&problem, &x0, &c, &ParallelConfig::new(2)).unwrap();
    assert_eq!(out.trace.status, RunStatus::Converged);
    assert!(out.trace.last().res_c <= 1e-8);
    assert!(out.trace.iterations() < 200_000);
}
