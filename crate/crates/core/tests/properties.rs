use std::path::Path;
use std::sync::Arc;

use proptest::prelude::*;

use apalm::executor::replay::replay;
use apalm::history::{rho_tau, DelayPattern, Schedule};
use apalm::problem::SeparableQuadratic;
use apalm::solver::{stepsize_deterministic, stepsize_stochastic};
use apalm::trace::{parse_csv, records_to_csv, TraceRecord};
use apalm::{BlockSpace, BlockVector, GlobalLipschitz, Problem, Regularizer, ReplayScript, SolverConfig, Variant};

fn regularizer() -> impl Strategy<Value = Regularizer> {
    prop_oneof![
        Just(Regularizer::Zero),
        (0.0..2.0f64).prop_map(|w| Regularizer::L1 { weight: w }),
        (0.0..2.0f64).prop_map(|w| Regularizer::L0 { weight: w }),
        Just(Regularizer::IndicatorNonneg),
        (-2.0..0.0f64, 0.0..2.0f64).prop_map(|(lo, hi)| Regularizer::IndicatorBox { lo, hi }),
        (0.1..3.0f64).prop_map(|r| Regularizer::IndicatorBall { radius: r }),
        (0.05..1.0f64).prop_map(|a| Regularizer::NegQuadratic { alpha: a }),
        (0.0..2.0f64).prop_map(|w| Regularizer::SquaredL2 { weight: w }),
    ]
}

fn objective(r: &Regularizer, y: &[f64], v: &[f64], gamma: f64) -> f64 {
    r.value(y) + y.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (2.0 * gamma)
}

proptest! {
    #[test]
    fn prox_beats_perturbed_candidates(
        reg in regularizer(),
        v in prop::collection::vec(-4.0..4.0f64, 1..4),
        frac in 0.01..0.95f64,
        dirs in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 3), 16),
    ) {
        let gamma = if reg.prox_bound().is_finite() { frac * reg.prox_bound() } else { 3.0 * frac };
        let p = reg.prox(&v, gamma).unwrap().point;
        let best = objective(&reg, &p, &v, gamma);
        prop_assert!(best.is_finite());
        for d in &dirs {
            for scale in [1e-3, 1e-1, 1.0] {
                let y: Vec<f64> = p.iter().zip(d).map(|(a, b)| a + scale * b).collect();
                prop_assert!(objective(&reg, &y, &v, gamma) >= best - 1e-9 * best.abs().max(1.0));
            }
        }
        // the zero vector and v itself are always candidates
        prop_assert!(objective(&reg, &vec![0.0; v.len()], &v, gamma) >= best - 1e-12);
        prop_assert!(objective(&reg, &v, &v, gamma) >= best - 1e-12);
    }

    #[test]
    fn stepsizes_stay_below_the_prox_bound(l in 1e-6..1e3f64, m_glob in 0.0..1e2f64, tau in 0usize..20, m in 1usize..50, c in 0.01..0.99f64, lam in 1e-3..10.0f64) {
        let rho = tau.min(3);
        for g in [stepsize_stochastic(l, m_glob, tau, m, c, lam), stepsize_deterministic(l, m_glob, rho, tau, c, lam)] {
            prop_assert!(g > 0.0 && g < lam && g <= c / l);
        }
    }

    #[test]
    fn schedule_text_round_trips(indices in prop::collection::vec(0usize..5, 1..60), tau in 0usize..6, seed in any::<u64>()) {
        let s = Schedule::with_delays(indices, 5, tau, DelayPattern::Random { seed });
        let back = Schedule::parse(&s.to_text(), Path::new("s.txt")).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert!(s.max_delay() <= tau);
    }

    #[test]
    fn rho_tau_is_bounded_by_tau(indices in prop::collection::vec(0usize..4, 0..80), tau in 0usize..10) {
        let r = rho_tau(&indices, tau);
        prop_assert!(r <= tau);
        if tau > 0 && !indices.is_empty() {
            prop_assert!(r >= 1);
        }
    }

    #[test]
    fn trace_csv_round_trips(rows in prop::collection::vec((any::<f64>(), any::<f64>(), 0usize..9, any::<f64>()), 1..20)) {
        let recs: Vec<TraceRecord> = rows
            .iter()
            .enumerate()
            .map(|(k, &(psi, phi, d, g))| TraceRecord { k: k as u64, j: 1, d_max: d, psi, phi, gamma: g, ..TraceRecord::initial(0.0) })
            .collect();
        let back = parse_csv(&records_to_csv(&recs), Path::new("t.csv")).unwrap();
        for (a, b) in recs.iter().zip(&back) {
            for (x, y) in [(a.psi, b.psi), (a.phi, b.phi), (a.gamma, b.gamma)] {
                prop_assert!(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()));
            }
            prop_assert_eq!(a.d_max, b.d_max);
        }
    }

    #[test]
    fn delayed_replay_keeps_lyapunov_monotone(
        curv in prop::collection::vec(0.1..5.0f64, 3),
        center in prop::collection::vec(-3.0..3.0f64, 3),
        tau in 1usize..5,
        seed in any::<u64>(),
    ) {
        let smooth = SeparableQuadratic { curvature: curv.clone(), center: BlockVector::from_scalars(&center) };
        let problem = Problem::new(BlockSpace::uniform(3, 1).unwrap(), Arc::new(smooth), vec![Regularizer::L1 { weight: 0.3 }; 3])
            .unwrap()
            .with_global_lipschitz(GlobalLipschitz::Fixed(curv.iter().cloned().fold(0.0, f64::max)))
            .unwrap();
        let cfg = SolverConfig { variant: Variant::Deterministic, tau, max_iters: 300, tol_residual: f64::MIN_POSITIVE, seed, ..Default::default() };
        let script = ReplayScript::generate(&cfg, 3, 300, DelayPattern::Random { seed });
        let x0 = BlockVector::from_scalars(&[1.0, -2.0, 0.5]);
        let t = replay(&problem, &x0, &cfg, &script).unwrap();
        prop_assert!(t.fejer_violations.is_empty());
        prop_assert!(t.level_set_violations.is_empty());
        prop_assert!(t.m_violations.is_empty());
        let again = replay(&problem, &x0, &cfg, &script).unwrap();
        prop_assert_eq!(again.to_csv(), t.to_csv());
    }
}
