use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use apalm::executor::replay::replay;
use apalm::glrm::{build_glrm, factors_to_point, initial_point, DataMatrix, EntryLoss, GlrmSpec};
use apalm::history::DelayPattern;
use apalm::{BlockVector, GlobalLipschitz, ReplayScript, SolverConfig};

const D1: usize = 8;
const D2: usize = 6;
const RANK: usize = 2;

/// Noiseless `A = X Y^T` with `|A|_F = fro`; returns the factors, the data and the factor scale.
fn planted(d1: usize, d2: usize, fro: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, DataMatrix, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factor = |n| (0..n).map(|_| (0..RANK).map(|_| rng.random_range(-1.0..1.0)).collect()).collect::<Vec<Vec<f64>>>();
    let (x, y) = (factor(d1), factor(d2));
    let rows: Vec<Vec<f64>> = x
        .iter()
        .map(|xi| y.iter().map(|yl| xi.iter().zip(yl).map(|(a, b)| a * b).sum()).collect())
        .collect();
    let norm = rows.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    let scale = (fro / norm).sqrt();
    let shrink = |f: Vec<Vec<f64>>| f.into_iter().map(|r| r.into_iter().map(|v| v * scale).collect()).collect::<Vec<Vec<f64>>>();
    let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * scale * scale).collect()).collect();
    (shrink(x), shrink(y), DataMatrix::from_rows(&rows).unwrap(), scale)
}

fn scaled(x: BlockVector, s: f64) -> BlockVector {
    BlockVector::from_blocks(x.into_blocks().into_iter().map(|b| b.into_iter().map(|v| v * s).collect()).collect())
}

// Without mu the iteration conserves X^T X - Y^T Y up to O(step^2), so the final
// mu |x|^2 is about mu times the imbalance of x^0. Initial points are drawn from the
// default distribution and rescaled to the planted factors.
#[test]
fn planted_rank_two_factors_are_recovered_in_value() {
    let (x, y, data, scale) = planted(D1, D2, 0.2, 7);
    let mut spec = GlrmSpec::new(RANK, EntryLoss::Quadratic);
    spec.mu = 1e-6;
    let problem = build_glrm(&spec, data).unwrap().with_global_lipschitz(GlobalLipschitz::Auto).unwrap();
    assert!(problem.psi_value(&factors_to_point(&x, &y)).unwrap() < 1e-6);
    let cfg = SolverConfig {
        max_iters: 10_000,
        tol_residual: 1e-9,
        ..Default::default()
    };
    let script = ReplayScript::generate(&cfg, D1 + D2, cfg.max_iters, DelayPattern::Zero);
    let finals: Vec<f64> = (1..=10)
        .map(|seed| {
            let x0 = scaled(initial_point(D1, D2, RANK, seed), scale);
            let trace = replay(&problem, &x0, &cfg, &script).unwrap();
            assert!(trace.fejer_violations.is_empty());
            trace.last().psi
        })
        .collect();
    assert!(finals.iter().all(|&p| p <= 1e-6), "{finals:?}");
}

#[test]
fn masked_entries_do_not_change_the_fit() {
    let (_, _, full, _) = planted(6, 5, 1.0, 3);
    let mut entries = Vec::new();
    let mut mask = Vec::new();
    let mut decoy = Vec::new();
    for i in 0..6 {
        for l in 0..5 {
            let hide = (i + 2 * l) % 7 == 0;
            entries.push(full.get(i, l));
            decoy.push(if hide { 1e6 } else { full.get(i, l) });
            mask.push(!hide);
        }
    }
    let spec = GlrmSpec::new(RANK, EntryLoss::Quadratic);
    let a = build_glrm(&spec, DataMatrix::new(6, 5, entries, Some(mask.clone())).unwrap()).unwrap();
    let b = build_glrm(&spec, DataMatrix::new(6, 5, decoy, Some(mask)).unwrap()).unwrap();
    let cfg = SolverConfig { max_iters: 2000, ..Default::default() };
    let script = ReplayScript::generate(&cfg, 11, cfg.max_iters, DelayPattern::Zero);
    let x0 = initial_point(6, 5, RANK, 4);
    let ta = replay(&a.with_global_lipschitz(GlobalLipschitz::Fixed(10.0)).unwrap(), &x0, &cfg, &script).unwrap();
    let tb = replay(&b.with_global_lipschitz(GlobalLipschitz::Fixed(10.0)).unwrap(), &x0, &cfg, &script).unwrap();
    assert_eq!(ta.to_csv(), tb.to_csv());
}
