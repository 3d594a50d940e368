//! Empirical classification of Lyapunov gaps into finite, linear or sublinear regimes.

/// Minimum usable points for a regression.
pub const MIN_POINTS: usize = 20;
/// Minimum coefficient of determination for a regime to be reported.
pub const MIN_R_SQUARED: f64 = 0.99;
/// Fraction of trailing points dropped before fitting.
pub const TAIL_DISCARD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Finite,
    Linear,
    Sublinear,
    Inconclusive,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Finite => "finite",
            Regime::Linear => "linear",
            Regime::Sublinear => "sublinear",
            Regime::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub regime: Regime,
    /// Contraction factor per iteration (linear regime).
    pub rho_hat: f64,
    /// Power-law decay exponent (sublinear regime).
    pub exponent_hat: f64,
    pub theta_hat: f64,
    /// R^2 of the selected fit.
    pub r_squared: f64,
    /// Number of points entering the regressions.
    pub points: usize,
    /// First index of the terminal run of exact zeros (finite regime).
    pub finite_at: Option<usize>,
}

impl RateFit {
    fn inconclusive(points: usize) -> Self {
        RateFit {
            regime: Regime::Inconclusive,
            rho_hat: f64::NAN,
            exponent_hat: f64::NAN,
            theta_hat: f64::NAN,
            r_squared: f64::NAN,
            points,
            finite_at: None,
        }
    }
}

/// Least squares `y = a + b x`; returns `(b, r_squared)`.
fn regress(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return (0.0, 0.0);
    }
    let b = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (b, r2)
}

/// Classifies the gap sequence `phi_k - phi_inf`, indexed by `k`.
pub fn fit_rate(gaps: &[f64]) -> RateFit {
    let n = gaps.len();
    let keep = n - ((n as f64) * TAIL_DISCARD).ceil() as usize;

    let trailing_zeros = gaps.iter().rev().take_while(|&&g| g == 0.0).count();
    if trailing_zeros >= 2 && trailing_zeros < n && n - trailing_zeros < keep {
        return RateFit {
            regime: Regime::Finite,
            finite_at: Some(n - trailing_zeros),
            ..RateFit::inconclusive(n - trailing_zeros)
        };
    }
    if trailing_zeros == n && n >= 2 {
        return RateFit {
            regime: Regime::Finite,
            finite_at: Some(0),
            ..RateFit::inconclusive(0)
        };
    }

    let pts: Vec<(f64, f64)> = gaps[..keep]
        .iter()
        .enumerate()
        .filter(|(_, &g)| g > 0.0 && g.is_finite())
        .map(|(k, &g)| (k as f64, g.ln()))
        .collect();
    if pts.len() < MIN_POINTS {
        return RateFit::inconclusive(pts.len());
    }
    let ks: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let logk: Vec<f64> = ks.iter().map(|k| (k + 1.0).ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let (lin_slope, lin_r2) = regress(&ks, &ys);
    let (pow_slope, pow_r2) = regress(&logk, &ys);

    let linear_ok = lin_r2 >= MIN_R_SQUARED && lin_slope < 0.0;
    let power_ok = pow_r2 >= MIN_R_SQUARED && pow_slope < 0.0;
    let mut fit = RateFit::inconclusive(pts.len());
    if linear_ok && (!power_ok || lin_r2 >= pow_r2) {
        fit.regime = Regime::Linear;
        fit.rho_hat = lin_slope.exp();
        fit.r_squared = lin_r2;
    } else if power_ok {
        let exponent = -pow_slope;
        fit.regime = Regime::Sublinear;
        fit.exponent_hat = exponent;
        fit.theta_hat = (1.0 + 1.0 / exponent) / 2.0;
        fit.r_squared = pow_r2;
    }
    fit
}
