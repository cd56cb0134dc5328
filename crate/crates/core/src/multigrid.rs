//! Geometric multigrid V-cycles for Poisson model problems.
//!
//! Levels are indexed `0..=D` with 0 the coarsest grid and `D` the finest.
//! Each coarsening maps `2^m - 1` interior points per side to `2^(m-1) - 1`.
//! Operators are applied matrix-free from the stencil; only the coarsest
//! level is factorised.

use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MultigridError {
    #[error("grid exponent m={m} must be at least {min} for {levels} level(s)")]
    GridTooSmall { m: u32, min: u32, levels: usize },
    #[error("grid exponent m={0} is too large")]
    GridTooLarge(u32),
    #[error("only 1D and 2D problems are supported, got {0}D")]
    Dimension(u8),
    #[error("vector of length {got} does not match level size {expected}")]
    Shape { expected: usize, got: usize },
    #[error("coarse operator is not positive definite")]
    Singular,
    #[error("invalid smoother: {0}")]
    Smoother(String),
    #[error("tolerance must be positive, got {0}")]
    Tolerance(f64),
}

pub type Result<T> = std::result::Result<T, MultigridError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmootherConfig {
    pub omega: f64,
    pub nu1: usize,
    pub nu2: usize,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        SmootherConfig { omega: 2.0 / 3.0, nu1: 2, nu2: 2 }
    }
}

impl SmootherConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega < 1.0) {
            return Err(MultigridError::Smoother(format!("omega {} outside (0, 1)", self.omega)));
        }
        if self.nu1 == 0 || self.nu2 == 0 {
            return Err(MultigridError::Smoother("nu1 and nu2 must be at least 1".into()));
        }
        Ok(())
    }
}

/// One grid of the hierarchy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level {
    /// Interior points per side.
    pub points: usize,
    pub h: f64,
}

#[derive(Debug, Clone)]
pub struct GridHierarchy {
    dims: u8,
    levels: Vec<Level>,
    coarse: Cholesky<f64, Dyn>,
}

impl GridHierarchy {
    /// `-u'' = f` on (0, 1) with `2^m - 1` interior points, coarsened down to
    /// three points.
    pub fn poisson_1d(m: u32) -> Result<Self> {
        Self::new(1, m, m.saturating_sub(1) as usize)
    }

    /// `-Δu = f` on the unit square with the 5-point stencil, coarsened down
    /// to 3x3 points.
    pub fn poisson_2d(m: u32) -> Result<Self> {
        Self::new(2, m, m.saturating_sub(1) as usize)
    }

    /// A hierarchy with `levels` grids (depth `levels - 1`).
    pub fn new(dims: u8, m: u32, levels: usize) -> Result<Self> {
        if dims != 1 && dims != 2 {
            return Err(MultigridError::Dimension(dims));
        }
        let min = levels as u32 + 1;
        if levels == 0 || m < min {
            return Err(MultigridError::GridTooSmall { m, min, levels });
        }
        let cap = if dims == 1 { 24 } else { 12 };
        if m > cap {
            return Err(MultigridError::GridTooLarge(m));
        }
        let finest = m as usize;
        let levels: Vec<Level> = (0..levels)
            .map(|d| {
                let exp = finest - (levels - 1 - d);
                let points = (1usize << exp) - 1;
                Level { points, h: 1.0 / (points + 1) as f64 }
            })
            .collect();
        let mut hier = GridHierarchy {
            dims,
            levels,
            coarse: Cholesky::new(DMatrix::<f64>::identity(1, 1)).expect("identity is SPD"),
        };
        hier.coarse = Cholesky::new(hier.dense_operator(0)).ok_or(MultigridError::Singular)?;
        Ok(hier)
    }

    pub fn dims(&self) -> u8 {
        self.dims
    }

    /// Index of the finest level.
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level(&self, d: usize) -> Level {
        self.levels[d]
    }

    /// Unknowns on level `d`.
    pub fn size(&self, d: usize) -> usize {
        self.levels[d].points.pow(self.dims as u32)
    }

    /// Diagonal entry of `A_d`.
    fn diagonal(&self, d: usize) -> f64 {
        let h = self.levels[d].h;
        2.0 * f64::from(self.dims) / (h * h)
    }

    fn check(&self, d: usize, v: &[f64]) -> Result<()> {
        let expected = self.size(d);
        if v.len() != expected {
            return Err(MultigridError::Shape { expected, got: v.len() });
        }
        Ok(())
    }

    /// `out = A_d u`.
    pub fn apply(&self, d: usize, u: &[f64], out: &mut [f64]) {
        let Level { points: n, h } = self.levels[d];
        let s = 1.0 / (h * h);
        match self.dims {
            1 => {
                for i in 0..n {
                    let left = if i > 0 { u[i - 1] } else { 0.0 };
                    let right = if i + 1 < n { u[i + 1] } else { 0.0 };
                    out[i] = s * (2.0 * u[i] - left - right);
                }
            }
            _ => {
                for y in 0..n {
                    for x in 0..n {
                        let i = y * n + x;
                        let mut acc = 4.0 * u[i];
                        if x > 0 {
                            acc -= u[i - 1];
                        }
                        if x + 1 < n {
                            acc -= u[i + 1];
                        }
                        if y > 0 {
                            acc -= u[i - n];
                        }
                        if y + 1 < n {
                            acc -= u[i + n];
                        }
                        out[i] = s * acc;
                    }
                }
            }
        }
    }

    /// `f - A_d u`.
    pub fn residual(&self, d: usize, u: &[f64], f: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; u.len()];
        self.apply(d, u, &mut r);
        for (ri, fi) in r.iter_mut().zip(f) {
            *ri = fi - *ri;
        }
        r
    }

    /// Full-weighting restriction from level `d` to `d - 1`.
    pub fn restrict(&self, d: usize, fine: &[f64]) -> Vec<f64> {
        let nf = self.levels[d].points;
        let nc = self.levels[d - 1].points;
        match self.dims {
            1 => (0..nc)
                .map(|i| 0.25 * fine[2 * i] + 0.5 * fine[2 * i + 1] + 0.25 * fine[2 * i + 2])
                .collect(),
            _ => {
                const W: [f64; 3] = [0.25, 0.5, 0.25];
                let mut out = vec![0.0; nc * nc];
                for cy in 0..nc {
                    for cx in 0..nc {
                        let mut acc = 0.0;
                        for (dy, wy) in W.iter().enumerate() {
                            for (dx, wx) in W.iter().enumerate() {
                                acc += wy * wx * fine[(2 * cy + dy) * nf + 2 * cx + dx];
                            }
                        }
                        out[cy * nc + cx] = acc;
                    }
                }
                out
            }
        }
    }

    /// Linear (bilinear in 2D) interpolation from level `d - 1` to `d`.
    pub fn prolong(&self, d: usize, coarse: &[f64]) -> Vec<f64> {
        let nf = self.levels[d].points;
        let nc = self.levels[d - 1].points;
        // Coarse value at fine index i along one axis, zero on the boundary.
        let line = |i: usize| -> [(usize, f64); 2] {
            if i % 2 == 1 {
                [(i / 2, 1.0), (usize::MAX, 0.0)]
            } else {
                let right = if i / 2 < nc { i / 2 } else { usize::MAX };
                let left = if i > 0 { i / 2 - 1 } else { usize::MAX };
                [(left, 0.5), (right, 0.5)]
            }
        };
        match self.dims {
            1 => (0..nf)
                .map(|i| {
                    line(i)
                        .iter()
                        .filter(|(j, _)| *j != usize::MAX)
                        .map(|(j, w)| w * coarse[*j])
                        .sum()
                })
                .collect(),
            _ => {
                let mut out = vec![0.0; nf * nf];
                for y in 0..nf {
                    for x in 0..nf {
                        let mut acc = 0.0;
                        for (cy, wy) in line(y) {
                            if cy == usize::MAX {
                                continue;
                            }
                            for (cx, wx) in line(x) {
                                if cx != usize::MAX {
                                    acc += wy * wx * coarse[cy * nc + cx];
                                }
                            }
                        }
                        out[y * nf + x] = acc;
                    }
                }
                out
            }
        }
    }

    /// `A_d` as a dense matrix.
    pub fn dense_operator(&self, d: usize) -> DMatrix<f64> {
        let n = self.size(d);
        let mut a = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.apply(d, &e, &mut col);
            a.set_column(j, &DVector::from_column_slice(&col));
            e[j] = 0.0;
        }
        a
    }

    /// Restriction from `d` to `d - 1` as a dense matrix.
    pub fn dense_restriction(&self, d: usize) -> DMatrix<f64> {
        let (nf, nc) = (self.size(d), self.size(d - 1));
        let mut r = DMatrix::zeros(nc, nf);
        let mut e = vec![0.0; nf];
        for j in 0..nf {
            e[j] = 1.0;
            r.set_column(j, &DVector::from_vec(self.restrict(d, &e)));
            e[j] = 0.0;
        }
        r
    }

    /// Prolongation from `d - 1` to `d` as a dense matrix.
    pub fn dense_prolongation(&self, d: usize) -> DMatrix<f64> {
        let (nf, nc) = (self.size(d), self.size(d - 1));
        let mut p = DMatrix::zeros(nf, nc);
        let mut e = vec![0.0; nc];
        for j in 0..nc {
            e[j] = 1.0;
            p.set_column(j, &DVector::from_vec(self.prolong(d, &e)));
            e[j] = 0.0;
        }
        p
    }

    /// Whether `A_d` admits a Cholesky factorisation.
    pub fn is_spd(&self, d: usize) -> bool {
        Cholesky::new(self.dense_operator(d)).is_some()
    }

    fn coarse_solve(&self, f: &[f64]) -> Vec<f64> {
        self.coarse.solve(&DVector::from_column_slice(f)).as_slice().to_vec()
    }
}

/// `ν` weighted-Jacobi sweeps on `A_d u = f`.
pub fn smooth(hier: &GridHierarchy, d: usize, nu: usize, omega: f64, u: &[f64], f: &[f64]) -> Result<Vec<f64>> {
    hier.check(d, u)?;
    hier.check(d, f)?;
    let mut u = u.to_vec();
    let mut au = vec![0.0; u.len()];
    let step = omega / hier.diagonal(d);
    for _ in 0..nu {
        hier.apply(d, &u, &mut au);
        for ((ui, fi), ai) in u.iter_mut().zip(f).zip(&au) {
            *ui += step * (fi - ai);
        }
    }
    Ok(u)
}

/// Level-visiting events of one V-cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceEvent {
    Smooth { level: usize, steps: usize },
    Restrict { from: usize, to: usize },
    DirectSolve { level: usize },
    Prolong { from: usize, to: usize },
}

/// Resolution changes of a trace: `true` for a restriction, `false` for a
/// prolongation.
pub fn transitions(trace: &[TraceEvent]) -> Vec<bool> {
    trace
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Restrict { .. } => Some(true),
            TraceEvent::Prolong { .. } => Some(false),
            _ => None,
        })
        .collect()
}

pub fn v_cycle(hier: &GridHierarchy, u: &[f64], f: &[f64], cfg: &SmootherConfig) -> Result<Vec<f64>> {
    v_cycle_traced(hier, u, f, cfg).map(|(v, _)| v)
}

/// One V-cycle on the finest level, returning the new iterate and its trace.
pub fn v_cycle_traced(
    hier: &GridHierarchy,
    u: &[f64],
    f: &[f64],
    cfg: &SmootherConfig,
) -> Result<(Vec<f64>, Vec<TraceEvent>)> {
    cfg.validate()?;
    let top = hier.depth();
    hier.check(top, u)?;
    hier.check(top, f)?;
    let mut trace = Vec::new();
    if top == 0 {
        trace.push(TraceEvent::DirectSolve { level: 0 });
        return Ok((hier.coarse_solve(f), trace));
    }

    // Descent: iterates u_d and right-hand sides f_d for d = top..1.
    let mut us: Vec<Vec<f64>> = vec![Vec::new(); top + 1];
    let mut fs: Vec<Vec<f64>> = vec![Vec::new(); top + 1];
    fs[top] = f.to_vec();
    us[top] = smooth(hier, top, cfg.nu1, cfg.omega, u, f)?;
    trace.push(TraceEvent::Smooth { level: top, steps: cfg.nu1 });
    let mut r = hier.residual(top, &us[top], f);
    for d in (1..top).rev() {
        fs[d] = hier.restrict(d + 1, &r);
        trace.push(TraceEvent::Restrict { from: d + 1, to: d });
        let zero = vec![0.0; hier.size(d)];
        us[d] = smooth(hier, d, cfg.nu1, cfg.omega, &zero, &fs[d])?;
        trace.push(TraceEvent::Smooth { level: d, steps: cfg.nu1 });
        r = hier.residual(d, &us[d], &fs[d]);
    }
    let f0 = hier.restrict(1, &r);
    trace.push(TraceEvent::Restrict { from: 1, to: 0 });
    let mut v = hier.coarse_solve(&f0);
    trace.push(TraceEvent::DirectSolve { level: 0 });

    // Ascent: v_d = u_d + P v_{d-1}, then post-smooth from v_d.
    for d in 1..=top {
        let mut corrected = hier.prolong(d, &v);
        trace.push(TraceEvent::Prolong { from: d - 1, to: d });
        for (c, ui) in corrected.iter_mut().zip(&us[d]) {
            *c += ui;
        }
        v = smooth(hier, d, cfg.nu2, cfg.omega, &corrected, &fs[d])?;
        trace.push(TraceEvent::Smooth { level: d, steps: cfg.nu2 });
    }
    Ok((v, trace))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub solution: Vec<f64>,
    pub cycles: usize,
    pub converged: bool,
    /// Residual 2-norm before the first cycle and after each cycle.
    pub residuals: Vec<f64>,
    /// The same divided by `‖f‖₂` (or `1` when `f = 0`).
    pub relative_residuals: Vec<f64>,
}

impl SolveReport {
    pub fn status(&self) -> &'static str {
        if self.converged {
            "converged"
        } else {
            "not converged"
        }
    }

    pub fn residual_csv(&self) -> String {
        let mut out = String::from("cycle,residual,relative_residual\n");
        for (i, (r, rel)) in self.residuals.iter().zip(&self.relative_residuals).enumerate() {
            let _ = writeln!(out, "{i},{r:e},{rel:e}");
        }
        out
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// V-cycles from a zero guess until `‖f - A u‖₂ / ‖f‖₂ <= tol`.
pub fn solve(hier: &GridHierarchy, f: &[f64], tol: f64, max_cycles: usize, cfg: &SmootherConfig) -> Result<SolveReport> {
    solve_from(hier, &vec![0.0; f.len()], f, tol, max_cycles, cfg)
}

pub fn solve_from(
    hier: &GridHierarchy,
    u0: &[f64],
    f: &[f64],
    tol: f64,
    max_cycles: usize,
    cfg: &SmootherConfig,
) -> Result<SolveReport> {
    if !(tol > 0.0) {
        return Err(MultigridError::Tolerance(tol));
    }
    cfg.validate()?;
    let top = hier.depth();
    hier.check(top, u0)?;
    hier.check(top, f)?;
    let fnorm = norm(f);
    let scale = if fnorm > 0.0 { fnorm } else { 1.0 };
    let mut u = u0.to_vec();
    let r0 = norm(&hier.residual(top, &u, f));
    let mut report = SolveReport {
        solution: Vec::new(),
        cycles: 0,
        converged: false,
        residuals: vec![r0],
        relative_residuals: vec![r0 / scale],
    };
    let mut rel = r0 / scale;
    while rel > tol && report.cycles < max_cycles {
        u = v_cycle(hier, &u, f, cfg)?;
        report.cycles += 1;
        let r = norm(&hier.residual(top, &u, f));
        rel = r / scale;
        report.residuals.push(r);
        report.relative_residuals.push(rel);
    }
    report.converged = rel <= tol;
    report.solution = u;
    Ok(report)
}

/// Right-hand side whose continuous solution is `∏ sin(π x_i)`.
pub fn sine_rhs(hier: &GridHierarchy) -> Vec<f64> {
    let dims = hier.dims();
    let scale = f64::from(dims) * std::f64::consts::PI.powi(2);
    sample(hier, |v| scale * v)
}

/// `∏ sin(π x_i)` at the finest grid points.
pub fn sine_solution(hier: &GridHierarchy) -> Vec<f64> {
    sample(hier, |v| v)
}

fn sample(hier: &GridHierarchy, map: impl Fn(f64) -> f64) -> Vec<f64> {
    let Level { points: n, h } = hier.level(hier.depth());
    let s = |i: usize| (std::f64::consts::PI * (i + 1) as f64 * h).sin();
    match hier.dims() {
        1 => (0..n).map(|i| map(s(i))).collect(),
        _ => (0..n * n).map(|i| map(s(i / n) * s(i % n))).collect(),
    }
}
