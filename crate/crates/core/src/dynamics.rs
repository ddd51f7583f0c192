//! Time integration of the hyperviscous Beris-Edwards system on the torus.
//!
//! The stiff linear parts (`Gamma L lap Q`, `mu lap u - eps lap^2 u`) are
//! diagonal in Fourier space and integrated exactly with an integrating
//! factor; transport, stretching, bulk relaxation and the elastic stresses
//! are explicit. Order 1 is integrating-factor Euler, order 2 the
//! integrating-factor Heun scheme.
//!
//! The physical view is the canonical state between steps: each step starts
//! by transforming it, so a run restarted from a checkpoint repeats the
//! uninterrupted run bit for bit.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::read_checkpoint;
use crate::diagnostics::{Diagnostics, DiagnosticsRecord, DiagnosticsSeries};
use crate::error::{Error, Result, StepError};
use crate::spectral::{FieldSet, Grid, PhysicalDerivatives, C64};
use crate::tensor::{
    bulk_force, molecular_field, stress_sigma, stress_tau, stretching_unchecked, BulkParams, Mat3,
    TracelessSym3,
};

/// Largest accepted `||div u|| / ||grad u||` after a step.
pub const DIVERGENCE_DRIFT_TOLERANCE: f64 = 1e-10;
/// Largest accepted pointwise trace/asymmetry of Q relative to `|Q|`.
pub const Q_DRIFT_TOLERANCE: f64 = 1e-12;

const I: C64 = C64::new(0.0, 1.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n: usize,
    #[serde(default = "default_box_scale")]
    pub box_scale: f64,
}

fn default_box_scale() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "default_order")]
    pub order: u8,
    #[serde(default = "default_true")]
    pub dealias: bool,
    #[serde(default = "default_cfl")]
    pub cfl_max: f64,
}

fn default_order() -> u8 {
    2
}

fn default_true() -> bool {
    true
}

fn default_cfl() -> f64 {
    0.4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSpec {
    #[serde(default = "default_cadence")]
    pub cadence: usize,
    /// Cutoff radii for the tail energies, in absolute length units.
    #[serde(default)]
    pub tail_radii: Vec<f64>,
}

fn default_cadence() -> usize {
    1
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        DiagnosticsSpec { cadence: 1, tail_radii: Vec::new() }
    }
}

/// Initial data of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    /// Seeded smooth random fields: energy spectrum `k^2 exp(-(k/k0)^2)`,
    /// solenoidal velocity, rescaled to the given L2 norms.
    Random {
        q_norm: f64,
        u_norm: f64,
        k0: f64,
        #[serde(default)]
        seed: u64,
    },
    /// `Q = amplitude sin(mode x_0 / R) A0`, `u = 0`.
    UniaxialSine { amplitude: f64, mode: u32 },
    /// Gaussian bump of width `width` at the box center: a fixed biaxial
    /// tensor for Q and the swirl `curl(psi e_3)` for u.
    Gaussian { q_amplitude: f64, u_amplitude: f64, width: f64 },
    /// Taylor-Green velocity
    /// `amplitude (sin kx cos ky cos kz, -cos kx sin ky cos kz, 0)`, `k = mode / R`, `Q = 0`.
    TaylorGreen { amplitude: f64, mode: u32 },
    Checkpoint { path: PathBuf },
    Zero,
}

/// Everything a run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub params: BulkParams,
    pub grid: GridSpec,
    pub time: TimeSpec,
    pub init: InitialData,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let t = &self.time;
        let bad = |m: String| Err(Error::Config(m));
        if !(t.dt > 0.0 && t.dt.is_finite()) {
            return bad(format!("time.dt must be positive, got {}", t.dt));
        }
        if !(t.t_final >= 0.0 && t.t_final.is_finite()) {
            return bad(format!("time.t_final must be non-negative, got {}", t.t_final));
        }
        let steps = t.t_final / t.dt;
        if (steps - steps.round()).abs() > 1e-6 * steps.max(1.0) {
            return bad(format!("time.t_final = {} is not a multiple of time.dt = {}", t.t_final, t.dt));
        }
        if t.order != 1 && t.order != 2 {
            return bad(format!("time.order must be 1 or 2, got {}", t.order));
        }
        if !(t.cfl_max > 0.0) {
            return bad(format!("time.cfl_max must be positive, got {}", t.cfl_max));
        }
        if self.diagnostics.cadence == 0 {
            return bad("diagnostics.cadence must be at least 1".into());
        }
        if self.diagnostics.tail_radii.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return bad("diagnostics.tail_radii must be non-negative".into());
        }
        if !self.diagnostics.tail_radii.is_empty() && !self.params.is_stable() {
            return bad("tail energies need a stable bulk potential (c > 0)".into());
        }
        Grid::new(self.grid.n, self.grid.box_scale)?;
        match &self.init {
            InitialData::Random { q_norm, u_norm, k0, .. } => {
                if !(*q_norm >= 0.0 && *u_norm >= 0.0 && *k0 > 0.0) {
                    return bad("init: norms must be non-negative and k0 positive".into());
                }
            }
            InitialData::Gaussian { width, .. } if !(*width > 0.0) => {
                return bad("init.width must be positive".into());
            }
            _ => {}
        }
        Ok(())
    }

    /// Number of steps from `t0` to `t_final`.
    pub fn steps_from(&self, t0: f64) -> usize {
        ((self.time.t_final - t0) / self.time.dt).round().max(0.0) as usize
    }

    pub fn make_grid(&self) -> Result<Grid> {
        Ok(Grid::new(self.grid.n, self.grid.box_scale)?)
    }

    /// Override the random seed of random initial data.
    pub fn with_seed(mut self, seed: u64) -> Self {
        if let InitialData::Random { seed: s, .. } = &mut self.init {
            *s = seed;
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepReport {
    /// Time at the end of the step.
    pub time: f64,
    pub cfl: f64,
    pub max_q: f64,
    pub max_u: f64,
    /// `||div u|| / ||grad u||` after the step.
    pub divergence_drift: f64,
    /// Largest pointwise trace/asymmetry of Q after the step.
    pub q_drift: f64,
    pub wall_seconds: f64,
}

/// Additive forcing of both equations, given in Fourier space.
pub trait Forcing: Send + Sync {
    fn spectral(&self, t: f64, grid: &Grid) -> ([Vec<C64>; 5], [Vec<C64>; 3]);
}

/// Explicit and stiff parts of a tendency, in Fourier space.
#[derive(Clone, Debug)]
pub struct SplitTendency<const K: usize> {
    pub explicit: [Vec<C64>; K],
    pub stiff: [Vec<C64>; K],
}

/// Pointwise kernel output: Q tendency (5), advection `u . grad u` (3),
/// stress `tau + sigma` (9).
const KERNEL_WIDTH: usize = 17;

#[derive(Clone)]
pub struct Solver {
    cfg: SolverConfig,
    grid: Grid,
    /// Stiff symbols per spectral index.
    lq: Vec<f64>,
    lu: Vec<f64>,
    /// `exp(symbol dt)`.
    eq: Vec<f64>,
    eu: Vec<f64>,
    forcing: Option<Arc<dyn Forcing>>,
    /// Flip the sign of tau in the momentum equation (mutation testing only).
    flip_tau: bool,
}

impl std::fmt::Debug for Solver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Solver").field("cfg", &self.cfg).finish()
    }
}

impl Solver {
    pub fn new(cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.make_grid()?;
        let p = &cfg.params;
        let dt = cfg.time.dt;
        let n = grid.len_spectral();
        let lq: Vec<f64> = (0..n).map(|i| -p.relaxation * p.elastic * grid.k_squared(i)).collect();
        let lu: Vec<f64> = (0..n)
            .map(|i| {
                let k2 = grid.k_squared(i);
                -p.viscosity * k2 - p.hyperviscosity * k2 * k2
            })
            .collect();
        let eq = lq.iter().map(|l| (l * dt).exp()).collect();
        let eu = lu.iter().map(|l| (l * dt).exp()).collect();
        Ok(Solver { cfg: cfg.clone(), grid, lq, lu, eq, eu, forcing: None, flip_tau: false })
    }

    pub fn with_forcing(mut self, forcing: Arc<dyn Forcing>) -> Self {
        self.forcing = Some(forcing);
        self
    }

    #[doc(hidden)]
    pub fn with_flipped_tau(mut self) -> Self {
        self.flip_tau = true;
        self
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn params(&self) -> &BulkParams {
        &self.cfg.params
    }

    /// Stability number `max|u| dt/dx + dt Gamma (|a| + 2|b| qmax + 3|c| qmax^2)`.
    pub fn cfl_number(&self, max_u: f64, max_q: f64) -> f64 {
        let p = &self.cfg.params;
        let dt = self.cfg.time.dt;
        max_u * dt / self.grid.dx()
            + dt * p.relaxation * (p.a.abs() + 2.0 * p.b.abs() * max_q + 3.0 * p.c.abs() * max_q * max_q)
    }

    fn finish_spectral(&self, v: &mut [C64]) {
        if self.cfg.time.dealias {
            self.grid.dealias(v);
        } else {
            self.grid.truncate_nyquist(v);
        }
    }

    /// Explicit tendencies at spectral state `(q, u)` and time `t`.
    pub fn explicit_tendency(
        &self,
        q: &[&[C64]; 5],
        u: &[&[C64]; 3],
        t: f64,
    ) -> std::result::Result<([Vec<C64>; 5], [Vec<C64>; 3]), StepError> {
        let grid = &self.grid;
        let p = self.cfg.params;
        let tau_sign = if self.flip_tau { -1.0 } else { 1.0 };
        let d = PhysicalDerivatives::compute(grid, q, u, false);
        let pointwise: Vec<[f64; KERNEL_WIDTH]> = (0..grid.len_physical())
            .into_par_iter()
            .map(|x| {
                let qx = d.q_at(x);
                let gq = d.grad_q_at(x);
                let ux = d.u_at(x);
                let gu = d.grad_u_at(x);
                let bulk = bulk_force(&qx, &p);
                let h = molecular_field(&qx, &d.lap_q_at(x), &p);
                let s = stretching_unchecked(&gu, &qx, p.tumbling);
                let qt = s - gq.directional(&ux) + (bulk - qx * p.a) * p.relaxation;
                let stress = stress_tau(&qx, &h, &gq, &p) * tau_sign + stress_sigma(&qx, &h);
                let adv = gu.mat_vec(&ux);
                let mut out = [0.0; KERNEL_WIDTH];
                out[..5].copy_from_slice(&qt.0);
                out[5..8].copy_from_slice(&adv);
                for i in 0..3 {
                    out[8 + 3 * i..11 + 3 * i].copy_from_slice(&stress.0[i]);
                }
                out
            })
            .collect();
        let column = |c: usize| -> Vec<C64> {
            let v: Vec<f64> = pointwise.iter().map(|row| row[c]).collect();
            grid.forward_unchecked(&v)
        };
        let mut qt: [Vec<C64>; 5] = std::array::from_fn(column);
        let adv: [Vec<C64>; 3] = std::array::from_fn(|i| column(5 + i));
        let stress: [[Vec<C64>; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| column(8 + 3 * i + j)));
        drop(pointwise);
        let mut ut: [Vec<C64>; 3] = std::array::from_fn(|i| {
            (0..grid.len_spectral())
                .into_par_iter()
                .map(|idx| {
                    let k = grid.wavevector(idx);
                    let div = k[0] * stress[i][0][idx] + k[1] * stress[i][1][idx] + k[2] * stress[i][2][idx];
                    I * div - adv[i][idx]
                })
                .collect()
        });
        if let Some(f) = &self.forcing {
            let (fq, fu) = f.spectral(t, grid);
            for (a, b) in qt.iter_mut().zip(fq.iter()) {
                a.par_iter_mut().zip(b.par_iter()).for_each(|(x, y)| *x += y);
            }
            for (a, b) in ut.iter_mut().zip(fu.iter()) {
                a.par_iter_mut().zip(b.par_iter()).for_each(|(x, y)| *x += y);
            }
        }
        grid.leray_project(&mut ut);
        for v in qt.iter_mut().chain(ut.iter_mut()) {
            self.finish_spectral(v);
        }
        let finite = |v: &[Vec<C64>]| v.iter().all(|c| c.par_iter().all(|z| z.re.is_finite() && z.im.is_finite()));
        if !finite(&qt) {
            return Err(StepError::NonFinite("Q tendency"));
        }
        if !finite(&ut) {
            return Err(StepError::NonFinite("velocity tendency"));
        }
        Ok((qt, ut))
    }

    /// Split tendencies of both equations at `state`.
    pub fn rhs(&self, state: &FieldSet) -> std::result::Result<(SplitTendency<5>, SplitTendency<3>), StepError> {
        let q = state.q_spectral();
        let u = state.u_spectral();
        let qr: [&[C64]; 5] = std::array::from_fn(|c| &*q[c]);
        let ur: [&[C64]; 3] = std::array::from_fn(|c| &*u[c]);
        let (eq, eu) = self.explicit_tendency(&qr, &ur, state.time)?;
        let stiff = |f: &[C64], sym: &[f64]| -> Vec<C64> { f.iter().zip(sym).map(|(v, s)| v * s).collect() };
        Ok((
            SplitTendency { explicit: eq, stiff: std::array::from_fn(|c| stiff(qr[c], &self.lq)) },
            SplitTendency { explicit: eu, stiff: std::array::from_fn(|c| stiff(ur[c], &self.lu)) },
        ))
    }

    pub fn rhs_q(&self, state: &FieldSet) -> std::result::Result<SplitTendency<5>, StepError> {
        self.rhs(state).map(|r| r.0)
    }

    pub fn rhs_u(&self, state: &FieldSet) -> std::result::Result<SplitTendency<3>, StepError> {
        self.rhs(state).map(|r| r.1)
    }

    /// Advance one step. The returned state holds only its physical view.
    pub fn step(&self, state: &FieldSet) -> Result<(FieldSet, StepReport)> {
        let start = Instant::now();
        let fail = |source: StepError| Error::Step { time: state.time, source };
        let dt = self.cfg.time.dt;
        let t0 = state.time;
        let max_q = state.max_q_norm();
        let max_u = state.max_speed();
        let cfl = self.cfl_number(max_u, max_q);
        if !cfl.is_finite() {
            return Err(fail(StepError::NonFinite("state")));
        }
        if cfl > self.cfg.time.cfl_max {
            return Err(fail(StepError::CflExceeded { cfl, bound: self.cfg.time.cfl_max }));
        }
        let q0: [Vec<C64>; 5] = std::array::from_fn(|c| state.q[c].spectral(&self.grid).into_owned());
        let u0: [Vec<C64>; 3] = std::array::from_fn(|c| state.u[c].spectral(&self.grid).into_owned());
        let (qr, ur) = refs(&q0, &u0);
        let (nq0, nu0) = self.explicit_tendency(&qr, &ur, t0).map_err(fail)?;

        // E (y + h n)
        let advance = |y: &[C64], n: &[C64], h: f64, e: &[f64]| -> Vec<C64> {
            y.par_iter().zip(n.par_iter()).zip(e.par_iter()).map(|((y, n), e)| (y + n * h) * e).collect()
        };
        let (mut q1, mut u1): ([Vec<C64>; 5], [Vec<C64>; 3]) = match self.cfg.time.order {
            1 => (
                std::array::from_fn(|c| advance(&q0[c], &nq0[c], dt, &self.eq)),
                std::array::from_fn(|c| advance(&u0[c], &nu0[c], dt, &self.eu)),
            ),
            _ => {
                let qs: [Vec<C64>; 5] = std::array::from_fn(|c| advance(&q0[c], &nq0[c], dt, &self.eq));
                let mut us: [Vec<C64>; 3] = std::array::from_fn(|c| advance(&u0[c], &nu0[c], dt, &self.eu));
                self.grid.leray_project(&mut us);
                let (qr, ur) = refs(&qs, &us);
                let (nq1, nu1) = self.explicit_tendency(&qr, &ur, t0 + dt).map_err(fail)?;
                let combine = |y: &[C64], n0: &[C64], n1: &[C64], e: &[f64]| -> Vec<C64> {
                    y.par_iter()
                        .zip(n0.par_iter())
                        .zip(n1.par_iter())
                        .zip(e.par_iter())
                        .map(|(((y, a), b), e)| (y + a * (0.5 * dt)) * e + b * (0.5 * dt))
                        .collect()
                };
                (
                    std::array::from_fn(|c| combine(&q0[c], &nq0[c], &nq1[c], &self.eq)),
                    std::array::from_fn(|c| combine(&u0[c], &nu0[c], &nu1[c], &self.eu)),
                )
            }
        };
        self.grid.leray_project(&mut u1);
        for v in q1.iter_mut().chain(u1.iter_mut()) {
            self.finish_spectral(v);
        }
        let mut next = FieldSet::from_spectral(&self.grid, q1, u1, t0 + dt)?.physical_only();
        next.projected = true;
        let next_time = next.time;
        let fail = |source: StepError| Error::Step { time: next_time, source };
        let divergence_drift = next.divergence_ratio();
        let q_drift = next.q_constraint_drift();
        let max_q = next.max_q_norm();
        let max_u = next.max_speed();
        if !(max_q.is_finite() && max_u.is_finite()) {
            return Err(fail(StepError::NonFinite("state")));
        }
        if !(divergence_drift <= DIVERGENCE_DRIFT_TOLERANCE) {
            return Err(fail(StepError::ConstraintDrift {
                what: "div u",
                drift: divergence_drift,
                tolerance: DIVERGENCE_DRIFT_TOLERANCE,
            }));
        }
        if !(q_drift <= Q_DRIFT_TOLERANCE) {
            return Err(fail(StepError::ConstraintDrift {
                what: "Q symmetric traceless",
                drift: q_drift,
                tolerance: Q_DRIFT_TOLERANCE,
            }));
        }
        let report = StepReport {
            time: next.time,
            cfl: self.cfl_number(max_u, max_q),
            max_q,
            max_u,
            divergence_drift,
            q_drift,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        Ok((next, report))
    }
}

fn refs<'a>(q: &'a [Vec<C64>; 5], u: &'a [Vec<C64>; 3]) -> ([&'a [C64]; 5], [&'a [C64]; 3]) {
    (std::array::from_fn(|c| q[c].as_slice()), std::array::from_fn(|c| u[c].as_slice()))
}

/// Hooks called by [`run_with`]; any error aborts the run.
pub trait RunObserver {
    fn on_record(&mut self, _record: &DiagnosticsRecord) -> Result<()> {
        Ok(())
    }

    /// Called after every accepted step with the global step index.
    fn on_step(&mut self, _state: &FieldSet, _report: &StepReport, _step: usize) -> Result<()> {
        Ok(())
    }
}

impl RunObserver for () {}

#[derive(Debug)]
pub struct RunOutput {
    pub state: FieldSet,
    pub series: DiagnosticsSeries,
    pub reports: Vec<StepReport>,
}

/// Build the initial state described by `cfg.init`.
///
/// Generated data is dealiased (when enabled) and its velocity Leray
/// projected; checkpoint data is used exactly as stored.
pub fn initial_state(cfg: &SolverConfig) -> Result<FieldSet> {
    let grid = cfg.make_grid()?;
    let state = match &cfg.init {
        InitialData::Checkpoint { path } => {
            let (state, _) = read_checkpoint(path)?;
            if state.grid != grid {
                return Err(Error::IncompatibleGrid(format!(
                    "checkpoint grid {}^3 (R = {}) differs from the configured {}^3 (R = {})",
                    state.grid.n(),
                    state.grid.scale(),
                    grid.n(),
                    grid.scale()
                )));
            }
            return Ok(state);
        }
        InitialData::Zero => FieldSet::zeros(&grid),
        InitialData::Random { q_norm, u_norm, k0, seed } => random_state(&grid, *q_norm, *u_norm, *k0, *seed, cfg.time.dealias),
        InitialData::UniaxialSine { amplitude, mode } => {
            let k = *mode as f64 / grid.scale();
            let a0 = TracelessSym3::uniaxial(*amplitude);
            let q = std::array::from_fn(|c| grid.sample(|x| a0.0[c] * (k * x[0]).sin()));
            let u = std::array::from_fn(|_| vec![0.0; grid.len_physical()]);
            FieldSet::from_physical(&grid, q, u, 0.0)?
        }
        InitialData::Gaussian { q_amplitude, u_amplitude, width } => gaussian_state(&grid, *q_amplitude, *u_amplitude, *width)?,
        InitialData::TaylorGreen { amplitude, mode } => {
            let k = *mode as f64 / grid.scale();
            let u0 = grid.sample(|x| amplitude * (k * x[0]).sin() * (k * x[1]).cos() * (k * x[2]).cos());
            let u1 = grid.sample(|x| -amplitude * (k * x[0]).cos() * (k * x[1]).sin() * (k * x[2]).cos());
            let u2 = vec![0.0; grid.len_physical()];
            let q = std::array::from_fn(|_| vec![0.0; grid.len_physical()]);
            FieldSet::from_physical(&grid, q, [u0, u1, u2], 0.0)?
        }
    };
    Ok(prepare(state, cfg.time.dealias))
}

/// Dealias (optionally) and project the velocity; returns a physical-only state.
pub fn prepare(state: FieldSet, dealias: bool) -> FieldSet {
    let grid = state.grid.clone();
    let mut q: [Vec<C64>; 5] = std::array::from_fn(|c| state.q[c].spectral(&grid).into_owned());
    let mut u: [Vec<C64>; 3] = std::array::from_fn(|c| state.u[c].spectral(&grid).into_owned());
    grid.leray_project(&mut u);
    for v in q.iter_mut().chain(u.iter_mut()) {
        if dealias {
            grid.dealias(v);
        } else {
            grid.truncate_nyquist(v);
        }
    }
    let mut out = FieldSet::from_spectral(&grid, q, u, state.time)
        .expect("lengths come from the same grid")
        .physical_only();
    out.projected = true;
    out
}

pub(crate) fn random_state(grid: &Grid, q_norm: f64, u_norm: f64, k0: f64, seed: u64, dealias: bool) -> FieldSet {
    let filtered = |rng: &mut ChaCha8Rng| -> Vec<C64> {
        let noise: Vec<f64> = (0..grid.len_physical()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut s = grid.forward_unchecked(&noise);
        for (idx, v) in s.iter_mut().enumerate() {
            let k2 = grid.k_squared(idx);
            *v *= (-0.5 * k2 / (k0 * k0)).exp();
        }
        s[0] = C64::default();
        if dealias {
            grid.dealias(&mut s);
        } else {
            grid.truncate_nyquist(&mut s);
        }
        s
    };
    let mut rng_u = ChaCha8Rng::seed_from_u64(seed);
    rng_u.set_stream(0);
    let mut rng_q = ChaCha8Rng::seed_from_u64(seed);
    rng_q.set_stream(1);
    let mut u: [Vec<C64>; 3] = std::array::from_fn(|_| filtered(&mut rng_u));
    grid.leray_project(&mut u);
    let mut q: [Vec<C64>; 5] = std::array::from_fn(|_| filtered(&mut rng_q));
    let rescale = |fields: &mut [Vec<C64>], target: f64| {
        let norm: f64 = fields.iter().map(|f| grid.spectral_norm_sq(f)).sum::<f64>().sqrt();
        let s = if norm > 0.0 { target / norm } else { 0.0 };
        for f in fields.iter_mut() {
            f.iter_mut().for_each(|v| *v *= s);
        }
    };
    rescale(&mut u, u_norm);
    rescale(&mut q, q_norm);
    FieldSet::from_spectral(grid, q, u, 0.0).expect("grid lengths").physical_only()
}

fn gaussian_state(grid: &Grid, q_amp: f64, u_amp: f64, width: f64) -> Result<FieldSet> {
    let c = std::f64::consts::PI * grid.scale();
    let r2 = |x: [f64; 3]| (x[0] - c).powi(2) + (x[1] - c).powi(2) + (x[2] - c).powi(2);
    let env = move |x: [f64; 3]| (-0.5 * r2(x) / (width * width)).exp();
    let dir = {
        let m = TracelessSym3::a0().to_matrix() + Mat3::unit(0, 1) + Mat3::unit(1, 0);
        let t = TracelessSym3::from_matrix(&m);
        t * (1.0 / t.norm())
    };
    let q = std::array::from_fn(|k| grid.sample(|x| q_amp * dir.0[k] * env(x)));
    // psi = u_amp width exp(-r^2 / 2 w^2), u = (d_1 psi, -d_0 psi, 0)
    let u0 = grid.sample(|x| -u_amp / width * (x[1] - c) * env(x));
    let u1 = grid.sample(|x| u_amp / width * (x[0] - c) * env(x));
    let u2 = vec![0.0; grid.len_physical()];
    Ok(FieldSet::from_physical(grid, q, [u0, u1, u2], 0.0)?)
}

/// Integrate `cfg` from its initial data to `t_final`.
pub fn run(cfg: &SolverConfig) -> Result<RunOutput> {
    let solver = Solver::new(cfg)?;
    let state = initial_state(cfg)?;
    run_with(&solver, state, &mut ())
}

/// Integrate from `state` to `t_final`, recording diagnostics every
/// `cadence` global steps and at the final time.
pub fn run_with(solver: &Solver, state: FieldSet, observer: &mut dyn RunObserver) -> Result<RunOutput> {
    let cfg = solver.config();
    if state.grid != *solver.grid() {
        return Err(Error::IncompatibleGrid("initial state and solver grids differ".into()));
    }
    let diag = Diagnostics::new(solver.grid(), &cfg.params, &cfg.diagnostics.tail_radii)?;
    let dt = cfg.time.dt;
    let first = (state.time / dt).round() as usize;
    let steps = cfg.steps_from(state.time);
    let cadence = cfg.diagnostics.cadence;
    let mut series = DiagnosticsSeries::new(cfg.params);
    let mut reports = Vec::with_capacity(steps);
    let rec = diag.record(&state);
    observer.on_record(&rec)?;
    series.push(rec);
    let mut state = state;
    for k in 1..=steps {
        let (next, report) = solver.step(&state)?;
        state = next;
        let global = first + k;
        observer.on_step(&state, &report, global)?;
        reports.push(report);
        if global % cadence == 0 || k == steps {
            let rec = diag.record(&state);
            observer.on_record(&rec)?;
            series.push(rec);
        }
    }
    Ok(RunOutput { state, series, reports })
}
