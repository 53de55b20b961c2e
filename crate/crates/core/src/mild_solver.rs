//! Monotone Picard iteration for the Duhamel equation on a uniform time grid.
//!
//! A slice is u(·, s_j) = β_j + v_j: β_j is the spatially constant far field, carried
//! exactly by the semigroup, and v_j lives on the grid (zero outside the box). The time
//! rule is left-endpoint, with the last subinterval's kernel taken at lag h/2.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frac_kernel::KernelProfile;
use crate::grid::{Convolver, Grid, GridFunction};
use crate::initial_data::InitialMeasure;
use crate::nonlinearity::Nonlinearity;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Box [−H, H]^N.
    pub half_width: f64,
    pub points: usize,
    /// Horizon T.
    pub horizon: f64,
    /// Time steps M.
    pub steps: usize,
    /// F is replaced by min(F, m) when set.
    pub truncation: Option<f64>,
    /// μ is replaced by S(2/n)μ when set.
    pub mollification: Option<usize>,
    /// Defaults to M + 10, enough for the discrete Volterra system to settle exactly.
    pub max_sweeps: Option<usize>,
    pub u_max: f64,
    pub tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            half_width: 8.0,
            points: 256,
            horizon: 0.1,
            steps: 256,
            truncation: None,
            mollification: None,
            max_sweeps: None,
            u_max: 1e8,
            tolerance: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.half_width > 0.0 && self.half_width.is_finite()) || self.points == 0 {
            return Err(Error::Parameter("grid needs H > 0 and at least one point".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) || self.steps == 0 {
            return Err(Error::Parameter("need T > 0 and M >= 1".into()));
        }
        if let Some(m) = self.truncation {
            if !(m > 0.0) {
                return Err(Error::Parameter(format!("truncation level {m} must be positive")));
            }
        }
        if self.mollification == Some(0) {
            return Err(Error::Parameter("mollification index must be positive".into()));
        }
        if self.max_sweeps == Some(0) || !(self.u_max > 0.0) || !(self.tolerance > 0.0) {
            return Err(Error::Parameter("sweeps, U_max and tolerance must be positive".into()));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn sweeps(&self) -> usize {
        self.max_sweeps.unwrap_or(self.steps + 10)
    }

    pub fn grid(&self, dim: usize) -> Result<Grid> {
        Grid::new(dim, self.half_width, self.points)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionTrajectory {
    pub times: Vec<f64>,
    pub slices: Vec<GridFunction>,
    /// Sup-norm over all slices after each sweep; entry 0 is the free evolution.
    pub sup_history: Vec<f64>,
    pub sweeps: usize,
    pub residual: Option<f64>,
    pub warnings: Vec<String>,
}

impl SolutionTrajectory {
    pub fn final_slice(&self) -> &GridFunction {
        self.slices.last().expect("trajectory has slices")
    }

    pub fn sup_norm(&self) -> f64 {
        self.slices.iter().map(GridFunction::sup_norm).fold(0.0, f64::max)
    }

    /// `time,sup_norm` rows.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("time,sup_norm\n");
        for (t, s) in self.times.iter().zip(&self.slices) {
            out.push_str(&format!("{t:.12e},{:.12e}\n", s.sup_norm()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolverOutcome {
    Converged(SolutionTrajectory),
    Diverged {
        time_index: usize,
        sweep: usize,
        sup_norm: f64,
        trajectory: SolutionTrajectory,
    },
    Inconclusive(SolutionTrajectory),
}

impl SolverOutcome {
    pub fn verdict(&self) -> &'static str {
        match self {
            Self::Converged(_) => "converged",
            Self::Diverged { .. } => "diverged",
            Self::Inconclusive(_) => "inconclusive",
        }
    }

    pub fn trajectory(&self) -> &SolutionTrajectory {
        match self {
            Self::Converged(t) | Self::Inconclusive(t) => t,
            Self::Diverged { trajectory, .. } => trajectory,
        }
    }

    pub fn is_converged(&self) -> bool {
        matches!(self, Self::Converged(_))
    }

    pub fn is_diverged(&self) -> bool {
        matches!(self, Self::Diverged { .. })
    }
}

/// Grid, FFT plan and lag spectra shared by every solve with the same configuration.
pub struct Solver {
    profile: Arc<KernelProfile>,
    config: SolverConfig,
    grid: Grid,
    conv: Convolver,
    /// lags[d − 1] is S at lag h/2 for d = 1 and d·h for d ≥ 2.
    lags: Vec<Vec<Complex64>>,
    warnings: Vec<String>,
}

impl std::fmt::Debug for Solver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Solver").field("config", &self.config).finish()
    }
}

fn lag_time(d: usize, h: f64) -> f64 {
    if d == 1 {
        0.5 * h
    } else {
        d as f64 * h
    }
}

impl Solver {
    pub fn new(profile: Arc<KernelProfile>, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.grid(profile.params().dim())?;
        let conv = Convolver::new(&grid);
        let h = config.step();
        let computed: Vec<Result<(Vec<Complex64>, Option<String>)>> = (1..=config.steps)
            .into_par_iter()
            .map(|d| profile.cell_spectrum(&conv, &grid, lag_time(d, h)))
            .collect();
        let mut lags = Vec::with_capacity(config.steps);
        let mut warnings = Vec::new();
        for c in computed {
            let (spec, w) = c?;
            lags.push(spec);
            if let Some(w) = w {
                if warnings.is_empty() {
                    warnings.push(w);
                }
            }
        }
        Ok(Self {
            profile,
            config,
            grid,
            conv,
            lags,
            warnings,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn profile(&self) -> &Arc<KernelProfile> {
        &self.profile
    }

    pub fn times(&self) -> Vec<f64> {
        let h = self.config.step();
        (0..=self.config.steps).map(|j| j as f64 * h).collect()
    }

    /// The data actually evolved: S(2/n)μ's time offset.
    fn offset(&self) -> f64 {
        self.config.mollification.map_or(0.0, |n| 2.0 / n as f64)
    }

    /// S(t)μ on the grid, reusing a lag spectrum when t is a grid lag.
    pub fn semigroup(&self, mu: &InitialMeasure, t: f64) -> Result<GridFunction> {
        if t == 0.0 {
            if !mu.atoms().is_empty() {
                return Err(Error::Precondition(
                    "atoms need mollification (or positive time) to be represented on the grid".into(),
                ));
            }
            let mut out = GridFunction::zeros(&self.grid);
            out.background = mu.background();
            if let Some(d) = mu.density_on(&self.grid)? {
                out.values = d;
            }
            return Ok(out);
        }
        let h = self.config.step();
        let d = (t / h).round() as usize;
        let cached = d >= 2 && d <= self.config.steps && (d as f64 * h) == t;
        if !cached || !mu.atoms().is_empty() {
            return crate::frac_kernel::apply_semigroup(&self.profile, mu, t, &self.grid);
        }
        let mut out = GridFunction::zeros(&self.grid);
        out.time = t;
        out.background = mu.background();
        if let Some(dens) = mu.density_on(&self.grid)? {
            out.values = self.conv.convolve(&dens, &self.lags[d - 1]);
            out.values.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        Ok(out)
    }

    /// Free evolution S(s_j)μ_n at every grid time.
    pub fn free_evolution(&self, mu: &InitialMeasure) -> Result<Vec<GridFunction>> {
        if mu.dim() != self.grid.dim() {
            return Err(Error::Parameter("measure and solver dimensions differ".into()));
        }
        let off = self.offset();
        self.times()
            .into_par_iter()
            .map(|t| {
                let mut g = self.semigroup(mu, t + off)?;
                g.time = t;
                Ok(g)
            })
            .collect()
    }

    fn truncated(&self, f: &Nonlinearity, tau: f64) -> f64 {
        match self.config.truncation {
            Some(m) => f.eval_truncated(tau, m),
            None => f.eval(tau),
        }
    }

    /// Duhamel sums D_j = Σ_{i<j} h·S(lag_{j−i})[F(β_i + v_i) − F(β_i)] and the matching
    /// far-field sums, for j in `from..=M`.
    fn duhamel(&self, f: &Nonlinearity, slices: &[GridFunction], from: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let m = self.config.steps;
        let h = self.config.step();
        let last = slices.len() - 1;
        let forcing: Vec<Vec<Complex64>> = slices[..last.min(m)]
            .par_iter()
            .map(|s| {
                let fb = self.truncated(f, s.background);
                let g: Vec<f64> = s
                    .values
                    .iter()
                    .map(|v| (self.truncated(f, s.background + v) - fb).max(0.0))
                    .collect();
                self.conv.spectrum_of_values(&g)
            })
            .collect();
        let far: Vec<f64> = slices.iter().map(|s| self.truncated(f, s.background)).collect();
        let plen = self.conv.padded_len();
        let local: Vec<Vec<f64>> = (from.max(1)..=m)
            .into_par_iter()
            .map(|j| {
                let mut acc = vec![Complex64::new(0.0, 0.0); plen];
                for i in 0..j {
                    let k = &self.lags[j - i - 1];
                    for ((a, g), kk) in acc.iter_mut().zip(&forcing[i]).zip(k) {
                        *a += g * kk;
                    }
                }
                let mut out = self.conv.inverse_crop(acc);
                out.iter_mut().for_each(|v| *v = (*v * h).max(0.0));
                out
            })
            .collect();
        let mut far_sums = Vec::with_capacity(m + 1);
        let mut acc = 0.0;
        for j in 0..=m {
            far_sums.push(acc);
            if j < m {
                acc += h * far[j];
            }
        }
        (local, far_sums)
    }

    /// One Picard sweep: u_{k+1} = S(t)μ_n + Duhamel(F(u_k)). Slices below `frozen` are
    /// already exact and are copied.
    pub fn picard_sweep(
        &self,
        current: &[GridFunction],
        free: &[GridFunction],
        f: &Nonlinearity,
        frozen: usize,
    ) -> Vec<GridFunction> {
        let from = frozen.max(1);
        let (local, far) = self.duhamel(f, current, from);
        let mut next: Vec<GridFunction> = current[..from].to_vec();
        for (j, d) in (from..=self.config.steps).zip(local) {
            let mut g = free[j].clone();
            for (v, dv) in g.values.iter_mut().zip(d) {
                *v += dv;
            }
            g.background = free[j].background + far[j];
            next.push(g);
        }
        next
    }

    pub fn solve(&self, mu: &InitialMeasure, f: &Nonlinearity) -> Result<SolverOutcome> {
        let free = self.free_evolution(mu)?;
        let times = self.times();
        let mut warnings = self.warnings.clone();
        for g in &free {
            for w in &g.warnings {
                if !warnings.contains(w) {
                    warnings.push(w.clone());
                }
            }
        }
        let mut current = free.clone();
        let sup = |s: &[GridFunction]| s.iter().map(GridFunction::sup_norm).fold(0.0, f64::max);
        let mut history = vec![sup(&current)];
        let traj = |slices: Vec<GridFunction>, history: &[f64], sweeps: usize, warnings: &[String]| SolutionTrajectory {
            times: times.clone(),
            slices,
            sup_history: history.to_vec(),
            sweeps,
            residual: None,
            warnings: warnings.to_vec(),
        };
        let u_max = self.config.u_max;
        let blown = |s: &[GridFunction]| s.iter().position(|g| !(g.sup_norm() <= u_max));
        if let Some(j) = blown(&current) {
            let s = current[j].sup_norm();
            return Ok(SolverOutcome::Diverged {
                time_index: j,
                sweep: 0,
                sup_norm: s,
                trajectory: traj(current, &history, 0, &warnings),
            });
        }
        if f.is_zero() {
            // The Duhamel term vanishes: the free evolution is the fixed point.
            history.push(history[0]);
            return Ok(SolverOutcome::Converged(traj(current, &history, 1, &warnings)));
        }
        for sweep in 1..=self.config.sweeps() {
            let next = self.picard_sweep(&current, &free, f, sweep - 1);
            history.push(sup(&next));
            if let Some(j) = blown(&next) {
                let s = next[j].sup_norm();
                return Ok(SolverOutcome::Diverged {
                    time_index: j,
                    sweep,
                    sup_norm: s,
                    trajectory: traj(next, &history, sweep, &warnings),
                });
            }
            let (a, b) = (current.last().unwrap(), next.last().unwrap());
            let change = a
                .values
                .iter()
                .zip(&b.values)
                .map(|(x, y)| (x - y).abs())
                .fold((a.background - b.background).abs(), f64::max);
            let scale = b.sup_norm();
            current = next;
            if change <= self.config.tolerance * scale || scale == 0.0 {
                return Ok(SolverOutcome::Converged(traj(current, &history, sweep, &warnings)));
            }
        }
        let sweeps = self.config.sweeps();
        Ok(SolverOutcome::Inconclusive(traj(current, &history, sweeps, &warnings)))
    }

    /// Right side of the Duhamel identity at the given slice indices, recomputed with
    /// 2M steps and u linearly interpolated between slices.
    pub fn duhamel_rhs_fine(
        &self,
        mu: &InitialMeasure,
        f: &Nonlinearity,
        slices: &[GridFunction],
        checkpoints: &[usize],
    ) -> Result<Vec<GridFunction>> {
        let m = self.config.steps;
        if slices.len() != m + 1 {
            return Err(Error::Parameter("trajectory length does not match the solver".into()));
        }
        let hf = 0.5 * self.config.step();
        let off = self.offset();
        // Fine slices at s'_i = i·h/2.
        let fine_slice = |i: usize| -> GridFunction {
            if i % 2 == 0 {
                return slices[i / 2].clone();
            }
            let (a, b) = (&slices[i / 2], &slices[i / 2 + 1]);
            let mut g = a.clone();
            for (v, w) in g.values.iter_mut().zip(&b.values) {
                *v = 0.5 * (*v + w);
            }
            g.background = 0.5 * (a.background + b.background);
            g
        };
        let fb = |s: &GridFunction| self.truncated(f, s.background);
        // Lag spectra on the fine grid: d = 1 at h/4, else d·h/2.
        let max_d = checkpoints.iter().map(|&j| 2 * j).max().unwrap_or(0);
        let spectra: Vec<Vec<Complex64>> = (1..=max_d)
            .into_par_iter()
            .map(|d| {
                let t = if d == 1 { 0.5 * hf } else { d as f64 * hf };
                self.profile.cell_spectrum(&self.conv, &self.grid, t).map(|x| x.0)
            })
            .collect::<Result<_>>()?;
        let forcing: Vec<(Vec<Complex64>, f64)> = (0..max_d)
            .into_par_iter()
            .map(|i| {
                let s = fine_slice(i);
                let base = fb(&s);
                let g: Vec<f64> = s.values.iter().map(|v| (self.truncated(f, s.background + v) - base).max(0.0)).collect();
                (self.conv.spectrum_of_values(&g), base)
            })
            .collect();
        checkpoints
            .par_iter()
            .map(|&j| {
                if j > m {
                    return Err(Error::Parameter(format!("checkpoint {j} beyond M = {m}")));
                }
                let t = j as f64 * self.config.step();
                let mut out = self.semigroup(mu, t + off)?;
                out.time = t;
                let jf = 2 * j;
                if jf > 0 {
                    let plen = self.conv.padded_len();
                    let mut acc = vec![Complex64::new(0.0, 0.0); plen];
                    let mut far = 0.0;
                    for i in 0..jf {
                        for ((a, g), k) in acc.iter_mut().zip(&forcing[i].0).zip(&spectra[jf - i - 1]) {
                            *a += g * k;
                        }
                        far += hf * forcing[i].1;
                    }
                    let local = self.conv.inverse_crop(acc);
                    for (v, d) in out.values.iter_mut().zip(local) {
                        *v = (*v + hf * d).max(0.0);
                    }
                    out.background += far;
                }
                Ok(out)
            })
            .collect()
    }

    /// sup over checkpoints and grid of |RHS_{2M} − u|.
    pub fn duhamel_residual(
        &self,
        trajectory: &SolutionTrajectory,
        mu: &InitialMeasure,
        f: &Nonlinearity,
        checkpoints: &[usize],
    ) -> Result<f64> {
        let rhs = self.duhamel_rhs_fine(mu, f, &trajectory.slices, checkpoints)?;
        let mut worst = 0.0f64;
        for (&j, r) in checkpoints.iter().zip(&rhs) {
            let u = &trajectory.slices[j];
            for (a, b) in r.values.iter().zip(&u.values) {
                worst = worst.max((a + r.background - b - u.background).abs());
            }
        }
        Ok(worst)
    }

    pub fn default_checkpoints(&self) -> Vec<usize> {
        let m = self.config.steps;
        let mut c: Vec<usize> = [m / 4, m / 2, 3 * m / 4, m].into_iter().filter(|&j| j > 0).collect();
        c.dedup();
        c
    }
}

/// Build a solver and run it; a converged run carries its residual at the default checkpoints.
pub fn solve(profile: Arc<KernelProfile>, mu: &InitialMeasure, f: &Nonlinearity, config: &SolverConfig) -> Result<SolverOutcome> {
    let solver = Solver::new(profile, config.clone())?;
    let mut out = solver.solve(mu, f)?;
    if let SolverOutcome::Converged(traj) = &mut out {
        let cps = solver.default_checkpoints();
        traj.residual = Some(solver.duhamel_residual(traj, mu, f, &cps)?);
    }
    Ok(out)
}

/// Residual of a solve; refuses anything but a converged outcome.
pub fn duhamel_residual(
    outcome: &SolverOutcome,
    profile: Arc<KernelProfile>,
    mu: &InitialMeasure,
    f: &Nonlinearity,
    config: &SolverConfig,
    checkpoints: &[usize],
) -> Result<f64> {
    let SolverOutcome::Converged(traj) = outcome else {
        return Err(Error::Precondition(format!("residual needs a converged trajectory, got {}", outcome.verdict())));
    };
    Solver::new(profile, config.clone())?.duhamel_residual(traj, mu, f, checkpoints)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LadderEntry {
    pub truncation: Option<f64>,
    pub mollification: Option<usize>,
    pub steps: usize,
    pub verdict: &'static str,
    /// Sup-norm of the final slice (of the witnessing iterate when diverged).
    pub final_sup: f64,
    pub sup_norm: f64,
}

/// Solve along a ladder of (m, n, M) and report sup-norms for monotonicity checks.
pub fn refine_and_compare(
    profile: Arc<KernelProfile>,
    mu: &InitialMeasure,
    f: &Nonlinearity,
    config: &SolverConfig,
    ladder: &[(Option<f64>, Option<usize>, usize)],
) -> Result<Vec<LadderEntry>> {
    let key = |e: &(Option<f64>, Option<usize>, usize)| (e.0.unwrap_or(f64::INFINITY), e.1.unwrap_or(usize::MAX), e.2);
    if !ladder.windows(2).all(|w| {
        let (a, b) = (key(&w[0]), key(&w[1]));
        a.0 <= b.0 && a.1 <= b.1 && a.2 <= b.2
    }) {
        return Err(Error::Parameter("ladder must be sorted increasing in (m, n, M)".into()));
    }
    ladder
        .iter()
        .map(|&(m, n, steps)| {
            let cfg = SolverConfig {
                truncation: m,
                mollification: n,
                steps,
                max_sweeps: None,
                ..config.clone()
            };
            let out = Solver::new(profile.clone(), cfg)?.solve(mu, f)?;
            let traj = out.trajectory();
            Ok(LadderEntry {
                truncation: m,
                mollification: n,
                steps,
                verdict: out.verdict(),
                final_sup: traj.final_slice().sup_norm(),
                sup_norm: traj.sup_norm(),
            })
        })
        .collect()
}
