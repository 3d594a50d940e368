//! Per-iteration log, CSV serialization and the key-value run summary.

use std::fmt::Write as _;
use std::path::Path;

use crate::block::BlockVector;
use crate::error::{ApalmError, Result};
use crate::history::Schedule;
use crate::monitor::rate::{fit_rate, RateFit};
use crate::solver::Variant;

pub const CSV_HEADER: &str = "k,j,gamma,d_max,step_norm,psi,phi,res_a,res_b,res_c,res_w";

/// Row `k` describes the iterate `x^k` and the step that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub k: u64,
    /// 1-based block written by step `k - 1`; 0 on the initial row.
    pub j: usize,
    pub gamma: f64,
    pub d_max: usize,
    pub step_norm: f64,
    pub psi: f64,
    pub phi: f64,
    pub res_a: f64,
    pub res_b: f64,
    pub res_c: f64,
    pub res_w: f64,
    /// `L_j` at the iterate before the step.
    pub lipschitz_current: f64,
    /// `L_j` at the delayed snapshot used for the stepsize.
    pub lipschitz_snapshot: f64,
    /// Decrease term of the Lyapunov inequality for the step into this row.
    pub y_decrease: f64,
    /// `|grad difference| / (M |x^k - x^{k-d}|)`; above 1 flags an invalid `M`.
    pub m_check_ratio: f64,
}

impl TraceRecord {
    pub fn initial(psi: f64) -> Self {
        TraceRecord {
            k: 0,
            j: 0,
            gamma: 0.0,
            d_max: 0,
            step_norm: 0.0,
            psi,
            phi: psi,
            res_a: f64::NAN,
            res_b: f64::NAN,
            res_c: f64::NAN,
            res_w: f64::NAN,
            lipschitz_current: f64::NAN,
            lipschitz_snapshot: f64::NAN,
            y_decrease: 0.0,
            m_check_ratio: 0.0,
        }
    }

    fn csv_line(&self, out: &mut String) {
        writeln!(
            out,
            "{},{},{:e},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.k,
            self.j,
            self.gamma,
            self.d_max,
            self.step_norm,
            self.psi,
            self.phi,
            self.res_a,
            self.res_b,
            self.res_c,
            self.res_w
        )
        .unwrap();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceMeta {
    pub variant: Variant,
    pub m: usize,
    pub global_m: f64,
    pub tau: usize,
    pub rho: usize,
    pub c: f64,
    pub psi0: f64,
    pub linesearch: bool,
}

impl TraceMeta {
    /// Weight of the step-norm tail in the Lyapunov function.
    pub fn coef(&self) -> f64 {
        crate::monitor::LyapunovParams::from(self).coef()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    MaxIters,
}

impl RunStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::MaxIters => "max_iters",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub meta: TraceMeta,
    pub records: Vec<TraceRecord>,
    /// Realized `(j_k, d_k)` for every step taken.
    pub schedule: Schedule,
    pub status: RunStatus,
    /// Rows whose step failed the a posteriori check on `M`.
    pub m_violations: Vec<u64>,
    /// Rows `k+1` where the deterministic decrease inequality failed.
    pub fejer_violations: Vec<u64>,
    /// Rows where `Psi(x^k)` left the initial level set.
    pub level_set_violations: Vec<u64>,
    pub final_point: BlockVector,
}

impl Trace {
    pub fn iterations(&self) -> u64 {
        self.records.last().map(|r| r.k).unwrap_or(0)
    }

    pub fn last(&self) -> &TraceRecord {
        self.records.last().expect("a trace always has the initial row")
    }

    pub fn has_flags(&self) -> bool {
        !(self.m_violations.is_empty() && self.fejer_violations.is_empty() && self.level_set_violations.is_empty())
    }

    pub fn phi_gaps(&self) -> Vec<f64> {
        let last = self.last().phi;
        self.records.iter().map(|r| (r.phi - last).max(0.0)).collect()
    }

    pub fn rate_fit(&self) -> RateFit {
        fit_rate(&self.phi_gaps())
    }

    pub fn to_csv(&self) -> String {
        records_to_csv(&self.records)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| ApalmError::io(path, e))
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let m = &self.meta;
        let last = self.last();
        let min_res_c = self
            .records
            .iter()
            .map(|r| r.res_c)
            .filter(|v| !v.is_nan())
            .fold(f64::INFINITY, f64::min);
        let fit = self.rate_fit();
        let kv: Vec<(&str, String)> = vec![
            ("status", self.status.as_str().into()),
            ("iterations", self.iterations().to_string()),
            ("variant", m.variant.to_string()),
            ("m", m.m.to_string()),
            ("M", format!("{:e}", m.global_m)),
            ("tau", m.tau.to_string()),
            ("rho", m.rho.to_string()),
            ("c", format!("{:e}", m.c)),
            ("linesearch", m.linesearch.to_string()),
            ("psi0", format!("{:e}", m.psi0)),
            ("psi_final", format!("{:e}", last.psi)),
            ("phi_final", format!("{:e}", last.phi)),
            ("res_c_final", format!("{:e}", last.res_c)),
            ("res_c_min", format!("{:e}", min_res_c)),
            ("res_w_final", format!("{:e}", self.last_finite(|r| r.res_w))),
            ("max_delay", self.schedule.max_delay().to_string()),
            ("m_violations", self.m_violations.len().to_string()),
            ("fejer_violations", self.fejer_violations.len().to_string()),
            ("level_set_violations", self.level_set_violations.len().to_string()),
            ("rate_regime", fit.regime.as_str().into()),
            ("rate_rho_hat", format!("{:e}", fit.rho_hat)),
            ("rate_exponent_hat", format!("{:e}", fit.exponent_hat)),
            ("rate_theta_hat", format!("{:e}", fit.theta_hat)),
            ("rate_r2", format!("{:e}", fit.r_squared)),
            ("rate_points", fit.points.to_string()),
        ];
        for (k, v) in kv {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }

    fn last_finite(&self, field: impl Fn(&TraceRecord) -> f64) -> f64 {
        self.records.iter().rev().map(field).find(|v| !v.is_nan()).unwrap_or(f64::NAN)
    }

    pub fn write_summary(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.summary()).map_err(|e| ApalmError::io(path, e))
    }
}

pub fn records_to_csv(records: &[TraceRecord]) -> String {
    let mut out = String::with_capacity(128 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        r.csv_line(&mut out);
    }
    out
}

/// Parses a trace CSV; fields not present in the file are NaN.
pub fn parse_csv(text: &str, origin: &Path) -> Result<Vec<TraceRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        Some((_, h)) => {
            return Err(ApalmError::Schema(format!(
                "{}: header {h:?} does not match {CSV_HEADER:?}",
                origin.display()
            )))
        }
        None => return Err(ApalmError::Schema(format!("{}: empty trace", origin.display()))),
    }
    let perr = |line: usize, column: usize, message: String| ApalmError::Parse {
        path: origin.to_path_buf(),
        line,
        column,
        message,
    };
    let mut out = Vec::new();
    for (ln, line) in lines {
        let line_no = ln + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 11 {
            return Err(ApalmError::Schema(format!(
                "{}: line {line_no} has {} fields, expected 11",
                origin.display(),
                f.len()
            )));
        }
        let int = |c: usize| -> Result<u64> {
            f[c].parse::<u64>()
                .map_err(|_| perr(line_no, c + 1, format!("expected an integer, got {:?}", f[c])))
        };
        let real = |c: usize| -> Result<f64> {
            f[c].parse::<f64>()
                .map_err(|_| perr(line_no, c + 1, format!("expected a number, got {:?}", f[c])))
        };
        out.push(TraceRecord {
            k: int(0)?,
            j: int(1)? as usize,
            gamma: real(2)?,
            d_max: int(3)? as usize,
            step_norm: real(4)?,
            psi: real(5)?,
            phi: real(6)?,
            res_a: real(7)?,
            res_b: real(8)?,
            res_c: real(9)?,
            res_w: real(10)?,
            lipschitz_current: f64::NAN,
            lipschitz_snapshot: f64::NAN,
            y_decrease: f64::NAN,
            m_check_ratio: f64::NAN,
        });
    }
    Ok(out)
}

pub fn read_csv(path: &Path) -> Result<Vec<TraceRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| ApalmError::io(path, e))?;
    parse_csv(&text, path)
}

/// Reads a `key = value` summary file.
pub fn parse_summary(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(k: u64) -> TraceRecord {
        TraceRecord {
            k,
            j: 2,
            gamma: 0.125,
            d_max: 3,
            step_norm: 1.5e-7,
            psi: -2.25,
            phi: 1.0 / 3.0,
            res_a: f64::NAN,
            res_b: 0.0,
            res_c: 1e-300,
            res_w: f64::INFINITY,
            ..TraceRecord::initial(0.0)
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let rows = vec![TraceRecord::initial(3.5), rec(1), rec(2)];
        let text = records_to_csv(&rows);
        assert!(text.starts_with("k,j,gamma,d_max,step_norm,psi,phi,res_a,res_b,res_c,res_w\n"));
        let back = parse_csv(&text, Path::new("t.csv")).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!((a.k, a.j, a.d_max), (b.k, b.j, b.d_max));
            for (x, y) in [
                (a.gamma, b.gamma),
                (a.step_norm, b.step_norm),
                (a.psi, b.psi),
                (a.phi, b.phi),
                (a.res_a, b.res_a),
                (a.res_b, b.res_b),
                (a.res_c, b.res_c),
                (a.res_w, b.res_w),
            ] {
                assert!(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()));
            }
        }
    }

    #[test]
    fn schema_errors() {
        let p = Path::new("t.csv");
        assert!(matches!(parse_csv("k,j\n", p), Err(ApalmError::Schema(_))));
        let bad = format!("{CSV_HEADER}\n1,2,3\n");
        assert!(matches!(parse_csv(&bad, p), Err(ApalmError::Schema(_))));
        let bad = format!("{CSV_HEADER}\n1,x,1,0,0,0,0,0,0,0,0\n");
        assert!(matches!(parse_csv(&bad, p), Err(ApalmError::Parse { line: 2, column: 2, .. })));
    }

    #[test]
    fn summary_parses_back() {
        let kv = parse_summary("status = converged\nM = 1e0\n\n");
        assert_eq!(kv[0], ("status".into(), "converged".into()));
        assert_eq!(kv[1].1, "1e0");
    }
}
