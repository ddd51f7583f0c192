//! Uniaxial reduction `Q = q A0`, `u = 0` with `xi = 0`, where the Q equation
//! collapses to `q_t = Gamma (L q_xx - a q + b q^2 - 6 c q^3)`.
//!
//! Two scalar solvers live here:
//!
//! * [`run_scalar`]: Dirichlet problem on `[0, l]` with a second-order finite
//!   difference Laplacian, implicit diffusion, adaptive step halving and the
//!   Kaplan moment `m = int q phi_1`, `phi_1 = sin(pi x / l)`, tracked next to a
//!   discrete comparison sequence. Used for the blow-up experiments.
//! * [`SpectralScalarSolver`]: the periodic problem on `[0, 2l)` stepped with
//!   exactly the scheme of the tensor solver. Used to cross-check the tensor
//!   solver on data embedded by [`embed_uniaxial`].

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dynamics::{prepare, GridSpec, InitialData, Solver, SolverConfig, TimeSpec};
use crate::error::{Error, ParamError, Result};
use crate::spectral::{FieldSet, Grid};
use crate::tensor::{BulkParams, TracelessSym3};

/// Coefficients of the scalar reaction-diffusion equation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarParams {
    pub relaxation: f64,
    pub elastic: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl ScalarParams {
    pub fn validate(&self) -> std::result::Result<(), ParamError> {
        let all = [self.relaxation, self.elastic, self.a, self.b, self.c];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(ParamError::NonFinite);
        }
        if self.relaxation <= 0.0 {
            return Err(ParamError::NonPositive("relaxation"));
        }
        if self.elastic <= 0.0 {
            return Err(ParamError::NonPositive("elastic"));
        }
        Ok(())
    }

    /// Reaction term `-a q + b q^2 - 6 c q^3` (without `Gamma`).
    pub fn reaction(&self, q: f64) -> f64 {
        q * (-self.a + q * (self.b - 6.0 * self.c * q))
    }
}

/// Initial profile of a scalar run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarInit {
    /// `amplitude sin(mode pi x / l)`.
    Sine {
        amplitude: f64,
        #[serde(default = "one")]
        mode: u32,
    },
    /// `sum_j amplitudes[j-1] sin(j pi x / l)`.
    Sines { amplitudes: Vec<f64> },
    /// Explicit values at the interior nodes.
    Values { values: Vec<f64> },
}

fn one() -> u32 {
    1
}

fn default_ceiling() -> f64 {
    1e6
}

fn default_growth_bound() -> f64 {
    0.05
}

fn default_max_halvings() -> u32 {
    80
}

/// Dirichlet scalar run on `[0, length]` with `intervals` cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarRun {
    pub length: f64,
    pub intervals: usize,
    pub dt: f64,
    pub t_final: f64,
    pub params: ScalarParams,
    pub init: ScalarInit,
    /// `max|q|` at which a run with enough halvings is declared blown up.
    #[serde(default = "default_ceiling")]
    pub ceiling: f64,
    /// Relative bound on the explicit increment `dt Gamma max|N(q)|`.
    #[serde(default = "default_growth_bound")]
    pub growth_bound: f64,
    #[serde(default = "default_max_halvings")]
    pub max_halvings: u32,
}

/// Halvings required before a ceiling crossing counts as blow-up.
pub const BLOWUP_MIN_HALVINGS: u32 = 3;

impl ScalarRun {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.length > 0.0 && self.length.is_finite()) {
            return bad("scalar.length must be positive");
        }
        if self.intervals < 4 {
            return bad("scalar.intervals must be at least 4");
        }
        if !(self.dt > 0.0) || !(self.t_final >= 0.0) {
            return bad("scalar.dt must be positive and scalar.t_final non-negative");
        }
        if !(self.ceiling > 0.0) || !(self.growth_bound > 0.0) {
            return bad("scalar.ceiling and scalar.growth_bound must be positive");
        }
        if let ScalarInit::Values { values } = &self.init {
            if values.len() != self.intervals - 1 {
                return Err(Error::Config(format!(
                    "scalar init has {} values, expected {} interior nodes",
                    values.len(),
                    self.intervals - 1
                )));
            }
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.intervals as f64
    }

    /// Interior node coordinates `x_i = i h`, `i = 1..intervals-1`.
    pub fn nodes(&self) -> Vec<f64> {
        let h = self.spacing();
        (1..self.intervals).map(|i| i as f64 * h).collect()
    }

    pub fn initial_profile(&self) -> Vec<f64> {
        sample_profile(&self.init, self.length, self.intervals)
    }
}

/// Interior values of `init` on `[0, length]` split into `intervals` cells.
pub fn sample_profile(init: &ScalarInit, length: f64, intervals: usize) -> Vec<f64> {
    match init {
        ScalarInit::Sine { amplitude, mode } => {
            let k = *mode as f64 * PI / length;
            let h = length / intervals as f64;
            (1..intervals).map(|i| amplitude * (k * i as f64 * h).sin()).collect()
        }
        ScalarInit::Sines { amplitudes } => {
            let h = length / intervals as f64;
            (1..intervals)
                .map(|i| {
                    let x = i as f64 * h;
                    amplitudes.iter().enumerate().map(|(j, a)| a * ((j + 1) as f64 * PI * x / length).sin()).sum()
                })
                .collect()
        }
        ScalarInit::Values { values } => values.clone(),
    }
}

/// Second-order Dirichlet Laplacian of interior values (boundary values 0).
pub fn dirichlet_laplacian(q: &[f64], h: f64) -> Vec<f64> {
    let n = q.len();
    (0..n)
        .map(|i| {
            let left = if i == 0 { 0.0 } else { q[i - 1] };
            let right = if i + 1 == n { 0.0 } else { q[i + 1] };
            (left - 2.0 * q[i] + right) / (h * h)
        })
        .collect()
}

/// `Gamma (L q_xx - a q + b q^2 - 6 c q^3)` at the interior nodes.
pub fn scalar_rhs(q: &[f64], h: f64, p: &ScalarParams) -> std::result::Result<Vec<f64>, crate::error::StepError> {
    let lap = dirichlet_laplacian(q, h);
    let out: Vec<f64> =
        q.iter().zip(&lap).map(|(&v, &l)| p.relaxation * (p.elastic * l + p.reaction(v))).collect();
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(crate::error::StepError::NonFinite("scalar tendency"))
    }
}

/// Trapezoid approximation of `int_0^l q sin(pi x / l) dx` from interior
/// values on a uniform grid (boundary values 0).
pub fn kaplan_moment(q: &[f64], length: f64) -> f64 {
    let h = length / (q.len() + 1) as f64;
    q.iter().enumerate().map(|(i, v)| v * (PI * (i + 1) as f64 * h / length).sin()).sum::<f64>() * h
}

/// Solve `(1 + 2r) x_i - r x_{i-1} - r x_{i+1} = d_i` with zero boundary values.
fn solve_implicit_diffusion(d: &[f64], r: f64) -> Vec<f64> {
    let n = d.len();
    let diag = 1.0 + 2.0 * r;
    let mut c = vec![0.0; n];
    let mut x = vec![0.0; n];
    c[0] = -r / diag;
    x[0] = d[0] / diag;
    for i in 1..n {
        let m = diag + r * c[i - 1];
        c[i] = -r / m;
        x[i] = (d[i] + r * x[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    x
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScalarSample {
    pub time: f64,
    pub max_q: f64,
    /// Kaplan moment of `s q` with `s` the sign of the data.
    pub moment: f64,
    /// Discrete comparison sequence (NaN when not applicable).
    pub comparison: f64,
    pub dt: f64,
}

/// Comparison ODE `m' = Gamma (-alpha m + beta m^2 + kappa m^3)` bounding the
/// moment from below.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ComparisonOde {
    pub relaxation: f64,
    /// `L lambda_1 + a`.
    pub alpha: f64,
    /// `s b / W`.
    pub beta: f64,
    /// `6 |c| / W^2`.
    pub kappa: f64,
}

impl ComparisonOde {
    pub fn rate(&self, m: f64) -> f64 {
        self.relaxation * m * (-self.alpha + m * (self.beta + self.kappa * m))
    }

    /// Smallest positive `m` above which the rate is positive (0 if it is
    /// positive for all `m > 0`, infinite if it never is).
    pub fn threshold(&self) -> f64 {
        let (a, b, k) = (self.alpha, self.beta, self.kappa);
        if k > 0.0 {
            // k m^2 + b m - a = 0
            let disc = b * b + 4.0 * k * a;
            if disc < 0.0 {
                return 0.0;
            }
            ((-b + disc.sqrt()) / (2.0 * k)).max(0.0)
        } else if b > 0.0 {
            (a / b).max(0.0)
        } else if a < 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    /// Blow-up time from `m0`, `int_{m0}^inf dm / rate(m)`, computed as
    /// `int_0^1 m0 s / (Gamma(-alpha m0 s^2 + beta m0^2 s + kappa m0^3)) ds` by
    /// composite Simpson. `None` when `m0` is not above the threshold.
    pub fn blowup_time(&self, m0: f64) -> Option<f64> {
        if !(m0 > self.threshold()) || (self.kappa == 0.0 && self.beta <= 0.0) {
            return None;
        }
        let f = |s: f64| {
            let den = self.relaxation * (-self.alpha * m0 * s * s + self.beta * m0 * m0 * s + self.kappa * m0.powi(3));
            if s == 0.0 && self.kappa == 0.0 {
                // s / (beta m0^2 s) as s -> 0
                m0 / (self.relaxation * (self.beta * m0 * m0))
            } else {
                m0 * s / den
            }
        };
        let n = 2000;
        let h = 1.0 / n as f64;
        let mut acc = f(0.0) + f(1.0);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        Some(acc * h / 3.0)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BlowupReport {
    pub samples: Vec<ScalarSample>,
    /// `(pi / l)^2`.
    pub lambda1: f64,
    /// `int_0^l phi_1 = 2 l / pi`.
    pub phi1_integral: f64,
    /// Sign `s` of the data used to orient the moment.
    pub sign: f64,
    pub comparison: Option<ComparisonOde>,
    pub threshold: f64,
    pub blowup: bool,
    pub blowup_time: Option<f64>,
    /// First sample time with moment above the comparison threshold.
    pub threshold_time: Option<f64>,
    /// Blow-up time of the continuous comparison ODE from the initial moment.
    pub comparison_blowup_time: Option<f64>,
    /// `p` in `max|q| ~ (T - t)^(-p)`, fitted near the end of a blow-up run.
    pub growth_exponent: Option<f64>,
    pub halvings: u32,
    pub final_time: f64,
    /// Smallest value of `s q` seen (the sign-preservation monitor).
    pub min_signed: f64,
    /// Run stopped at the ceiling without enough halvings.
    pub ceiling_without_halvings: bool,
}

impl BlowupReport {
    /// Moment at least the comparison value at every sample.
    pub fn moment_dominates(&self) -> bool {
        self.samples.iter().all(|s| s.comparison.is_nan() || s.moment >= s.comparison * (1.0 - 1e-12))
    }

    pub fn max_q(&self) -> f64 {
        self.samples.iter().map(|s| s.max_q).fold(0.0, f64::max)
    }

    /// Moment non-decreasing from the threshold-crossing time on.
    pub fn moment_monotone_after_threshold(&self) -> bool {
        let Some(t0) = self.threshold_time else { return false };
        let after: Vec<f64> = self.samples.iter().filter(|s| s.time >= t0).map(|s| s.moment).collect();
        after.windows(2).all(|w| w[1] >= w[0])
    }
}

/// Integrate the Dirichlet scalar problem with implicit diffusion and
/// explicit reaction, halving the step whenever
/// `dt Gamma max|N(q)| > growth_bound * max(1, max|q|)`.
pub fn run_scalar(cfg: &ScalarRun) -> Result<BlowupReport> {
    cfg.validate()?;
    let p = cfg.params;
    let h = cfg.spacing();
    let l = cfg.length;
    let lambda1 = (PI / l).powi(2);
    let w = 2.0 * l / PI;
    let mut q = cfg.initial_profile();
    let total: f64 = q.iter().sum();
    let sign = if total < 0.0 { -1.0 } else { 1.0 };
    let sign_definite = q.iter().all(|v| sign * v >= 0.0);
    let comparison = (p.c <= 0.0 && sign * p.b >= 0.0 && sign_definite && (p.c < 0.0 || p.b != 0.0)).then(|| {
        ComparisonOde {
            relaxation: p.relaxation,
            alpha: p.elastic * lambda1 + p.a,
            beta: sign * p.b / w,
            kappa: 6.0 * p.c.abs() / (w * w),
        }
    });
    let threshold = comparison.map_or(f64::INFINITY, |c| c.threshold());
    let max_abs = |q: &[f64]| q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let moment = |q: &[f64]| sign * kaplan_moment(q, l);
    let mut dt = cfg.dt;
    let mut t = 0.0;
    let mut halvings = 0u32;
    let mut m_cmp = comparison.map_or(f64::NAN, |_| moment(&q));
    let comparison_blowup_time = comparison.and_then(|c| c.blowup_time(moment(&q)));
    let mut samples = vec![ScalarSample { time: 0.0, max_q: max_abs(&q), moment: moment(&q), comparison: m_cmp, dt }];
    let mut min_signed = q.iter().map(|v| sign * v).fold(f64::INFINITY, f64::min);
    let mut blowup = false;
    let mut ceiling_without_halvings = false;
    let t_end = cfg.t_final;
    while t < t_end * (1.0 - 1e-12) {
        let qmax = max_abs(&q);
        if qmax >= cfg.ceiling {
            if halvings >= BLOWUP_MIN_HALVINGS {
                blowup = true;
            } else {
                ceiling_without_halvings = true;
            }
            break;
        }
        let react: Vec<f64> = q.iter().map(|&v| p.relaxation * p.reaction(v)).collect();
        if react.iter().any(|v| !v.is_finite()) {
            return Err(Error::Step { time: t, source: crate::error::StepError::NonFinite("scalar tendency") });
        }
        let rmax = max_abs(&react);
        while dt * rmax > cfg.growth_bound * qmax.max(1.0) {
            dt *= 0.5;
            halvings += 1;
            if halvings > cfg.max_halvings {
                return Err(Error::AdaptiveStall { time: t, dt });
            }
        }
        let step = dt.min(t_end - t);
        let d: Vec<f64> = q.iter().zip(&react).map(|(v, r)| v + step * r).collect();
        q = solve_implicit_diffusion(&d, step * p.relaxation * p.elastic / (h * h));
        t += step;
        if let Some(c) = comparison {
            m_cmp = (m_cmp + step * c.rate(m_cmp)) / (1.0 + step * p.relaxation * p.elastic * lambda1);
        }
        min_signed = q.iter().map(|v| sign * v).fold(min_signed, f64::min);
        samples.push(ScalarSample { time: t, max_q: max_abs(&q), moment: moment(&q), comparison: m_cmp, dt: step });
    }
    let threshold_time = samples.iter().find(|s| s.moment > threshold).map(|s| s.time);
    let growth_exponent = if blowup { fit_growth_exponent(&samples) } else { None };
    Ok(BlowupReport {
        lambda1,
        phi1_integral: w,
        sign,
        comparison,
        threshold,
        blowup,
        blowup_time: blowup.then_some(t),
        threshold_time,
        comparison_blowup_time,
        growth_exponent,
        halvings,
        final_time: t,
        min_signed,
        ceiling_without_halvings,
        samples,
    })
}

/// Least-squares slope `s` of `y / y'` against `t` over the samples with
/// `max|q| >= 100`; for `y ~ (T - t)^(-p)` the slope is `-1/p`.
fn fit_growth_exponent(samples: &[ScalarSample]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = samples
        .windows(2)
        .filter(|w| w[0].max_q >= 100.0 && w[1].time > w[0].time && w[1].max_q > w[0].max_q)
        .map(|w| {
            let tm = 0.5 * (w[0].time + w[1].time);
            let ym = (w[0].max_q * w[1].max_q).sqrt();
            let dy = (w[1].max_q - w[0].max_q) / (w[1].time - w[0].time);
            (tm, ym / dy)
        })
        .collect();
    if pts.len() < 5 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mr = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - mr)).sum();
    let var: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let slope = cov / var;
    (slope < 0.0).then(|| -1.0 / slope)
}

/// Embed interior values `q_1..q_{n/2-1}` as `Q = q(x_0) A0`, `u = 0`, odd
/// reflected about `x_0 = 0` and `x_0 = pi R` so that the periodic field
/// vanishes where the Dirichlet problem does.
pub fn embed_uniaxial(profile: &[f64], grid: &Grid) -> Result<FieldSet> {
    let n = grid.n();
    if profile.len() != n / 2 - 1 {
        return Err(Error::IncompatibleGrid(format!(
            "profile has {} interior values, a {}^3 grid needs {}",
            profile.len(),
            n,
            n / 2 - 1
        )));
    }
    let line = odd_extension(profile);
    let a0 = TracelessSym3::a0();
    let q = std::array::from_fn(|c| {
        (0..grid.len_physical()).map(|x| a0.0[c] * line[grid.physical_coords(x)[0]]).collect()
    });
    let u = std::array::from_fn(|_| vec![0.0; grid.len_physical()]);
    let mut state = FieldSet::from_physical(grid, q, u, 0.0)?;
    state.projected = true;
    Ok(state)
}

/// Periodic line `[0, q_1, .., q_{m}, 0, -q_{m}, .., -q_1]` of length `2m + 2`.
pub fn odd_extension(profile: &[f64]) -> Vec<f64> {
    let mut line = Vec::with_capacity(2 * profile.len() + 2);
    line.push(0.0);
    line.extend_from_slice(profile);
    line.push(0.0);
    line.extend(profile.iter().rev().map(|v| -v));
    line
}

/// Uniaxial amplitude `Q : A0 / |A0|^2` along the `x_0` axis (at `x_1 = x_2 = 0`).
pub fn extract_uniaxial(state: &FieldSet) -> Vec<f64> {
    let grid = &state.grid;
    let q0 = state.q[0].physical(grid);
    (0..grid.n()).map(|i| TracelessSym3([q0[grid.physical_index(i, 0, 0)], 0.0, 0.0, 0.0, 0.0]).uniaxial_amplitude()).collect()
}

/// `max_x |Q - (Q : A0 / |A0|^2) A0|` together with `max_x |Q|`.
pub fn uniaxial_deviation(state: &FieldSet) -> (f64, f64) {
    let q = state.q_physical();
    let mut dev = 0.0f64;
    let mut size = 0.0f64;
    for x in 0..state.grid.len_physical() {
        let rest: f64 = (1..5).map(|c| q[c][x] * q[c][x]).sum();
        dev = dev.max(rest.sqrt());
        size = size.max((rest + q[0][x] * q[0][x]).sqrt());
    }
    (dev, size)
}

/// Largest deviation of `Q` from a function of `x_0` alone.
pub fn transverse_variation(state: &FieldSet) -> f64 {
    let grid = &state.grid;
    let q = state.q_physical();
    let mut worst = 0.0f64;
    for x in 0..grid.len_physical() {
        let [i, _, _] = grid.physical_coords(x);
        let base = grid.physical_index(i, 0, 0);
        for c in 0..5 {
            worst = worst.max((q[c][x] - q[c][base]).abs());
        }
    }
    worst
}

/// Periodic scalar solver on `[0, 2 pi R)` with `n` points that repeats the
/// tensor solver's discretization: exact integrating factor for
/// `Gamma L q_xx`, explicit reaction, 2/3 truncation, order 1 or 2.
#[derive(Clone)]
pub struct SpectralScalarSolver {
    n: usize,
    params: ScalarParams,
    dt: f64,
    order: u8,
    dealias: bool,
    keep: Vec<bool>,
    efactor: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl SpectralScalarSolver {
    pub fn new(n: usize, box_scale: f64, params: ScalarParams, dt: f64, order: u8, dealias: bool) -> Result<Self> {
        params.validate()?;
        if n < 8 || n % 2 != 0 {
            return Err(crate::error::SpectralError::BadResolution(n).into());
        }
        if !(dt > 0.0) || !(order == 1 || order == 2) {
            return Err(Error::Config("scalar solver needs dt > 0 and order 1 or 2".into()));
        }
        let mode = |m: usize| if m <= n / 2 { m as i64 } else { m as i64 - n as i64 };
        let efactor = (0..n)
            .map(|m| {
                let k = if m == n / 2 { 0.0 } else { mode(m) as f64 / box_scale };
                (-params.relaxation * params.elastic * k * k * dt).exp()
            })
            .collect();
        let keep = (0..n).map(|m| 3 * mode(m).unsigned_abs() as usize <= n).collect();
        let mut planner = FftPlanner::new();
        Ok(SpectralScalarSolver {
            n,
            params,
            dt,
            order,
            dealias,
            keep,
            efactor,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        })
    }

    fn truncate(&self, s: &mut [Complex64]) {
        for (m, v) in s.iter_mut().enumerate() {
            if (self.dealias && !self.keep[m]) || m == self.n / 2 {
                *v = Complex64::default();
            }
        }
    }

    fn forward(&self, q: &[f64]) -> Vec<Complex64> {
        let mut s: Vec<Complex64> = q.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fwd.process(&mut s);
        let norm = 1.0 / self.n as f64;
        s.iter_mut().for_each(|v| *v *= norm);
        s
    }

    fn inverse(&self, s: &[Complex64]) -> Vec<f64> {
        let mut w = s.to_vec();
        self.inv.process(&mut w);
        w.iter().map(|v| v.re).collect()
    }

    fn reaction(&self, s: &[Complex64]) -> Vec<Complex64> {
        let q = self.inverse(s);
        let r: Vec<f64> = q.iter().map(|&v| self.params.relaxation * self.params.reaction(v)).collect();
        let mut out = self.forward(&r);
        self.truncate(&mut out);
        out
    }

    /// Advance the periodic line `q` by one step.
    pub fn step(&self, q: &[f64]) -> Vec<f64> {
        let y0 = self.forward(q);
        let n0 = self.reaction(&y0);
        let dt = self.dt;
        let y1: Vec<Complex64> = if self.order == 1 {
            (0..self.n).map(|m| (y0[m] + n0[m] * dt) * self.efactor[m]).collect()
        } else {
            let ys: Vec<Complex64> = (0..self.n).map(|m| (y0[m] + n0[m] * dt) * self.efactor[m]).collect();
            let n1 = self.reaction(&ys);
            (0..self.n).map(|m| (y0[m] + n0[m] * (0.5 * dt)) * self.efactor[m] + n1[m] * (0.5 * dt)).collect()
        };
        let mut y1 = y1;
        self.truncate(&mut y1);
        self.inverse(&y1)
    }

    /// Project a line onto the solver's resolved modes.
    pub fn prepare(&self, q: &[f64]) -> Vec<f64> {
        let mut s = self.forward(q);
        self.truncate(&mut s);
        self.inverse(&s)
    }
}

/// Bulk coefficients of one sweep entry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BulkTriple {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Run `base` once per triple, concurrently; results keep the input order.
pub fn run_sweep(base: &ScalarRun, triples: &[BulkTriple]) -> Vec<Result<BlowupReport>> {
    use rayon::prelude::*;
    triples
        .par_iter()
        .map(|t| {
            let mut cfg = base.clone();
            cfg.params.a = t.a;
            cfg.params.b = t.b;
            cfg.params.c = t.c;
            run_scalar(&cfg)
        })
        .collect()
}

fn default_viscosity() -> f64 {
    1.0
}

fn default_match_tolerance() -> f64 {
    1e-8
}

fn default_uniaxial_tolerance() -> f64 {
    1e-10
}

/// Tensor run from embedded scalar data next to the periodic scalar solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub params: ScalarParams,
    /// Viscosity of the tensor run (the velocity stays zero).
    #[serde(default = "default_viscosity")]
    pub viscosity: f64,
    pub grid: GridSpec,
    pub time: TimeSpec,
    /// Profile on `[0, pi R]`, sampled at the `n/2 - 1` interior grid points.
    pub profile: ScalarInit,
    #[serde(default = "default_match_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_uniaxial_tolerance")]
    pub uniaxial_tolerance: f64,
}

impl CompareConfig {
    pub fn solver_config(&self) -> Result<SolverConfig> {
        let p = self.params;
        let params = BulkParams::new(p.elastic, self.viscosity, p.relaxation, p.a, p.b, p.c, 0.0, 0.0)?;
        let cfg = SolverConfig {
            params,
            grid: self.grid.clone(),
            time: self.time.clone(),
            init: InitialData::Zero,
            diagnostics: Default::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CompareSample {
    pub time: f64,
    /// `max_x |q_tensor - q_scalar|` along the `x_0` line.
    pub max_diff: f64,
    /// `max_x |Q - (Q : A0 / |A0|^2) A0|`.
    pub deviation: f64,
    /// Largest variation of `Q` transverse to `x_0`.
    pub transverse: f64,
    pub max_q: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CompareReport {
    pub samples: Vec<CompareSample>,
    pub max_diff: f64,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub uniaxial_tolerance: f64,
}

impl CompareReport {
    pub fn passed(&self) -> bool {
        self.max_diff <= self.tolerance && self.max_deviation <= self.uniaxial_tolerance
    }
}

/// Step the tensor solver from `embed_uniaxial(profile)` with `xi = 0` and
/// the scalar solver from the odd extension of the same profile, comparing
/// after every step.
pub fn cross_validate(cfg: &CompareConfig) -> Result<CompareReport> {
    let scfg = cfg.solver_config()?;
    let solver = Solver::new(&scfg)?;
    let grid = solver.grid().clone();
    let n = grid.n();
    let profile = sample_profile(&cfg.profile, PI * grid.scale(), n / 2);
    let mut state = prepare(embed_uniaxial(&profile, &grid)?, scfg.time.dealias);
    let scalar = SpectralScalarSolver::new(n, grid.scale(), cfg.params, scfg.time.dt, scfg.time.order, scfg.time.dealias)?;
    let mut line = scalar.prepare(&odd_extension(&profile));
    let sample = |state: &FieldSet, line: &[f64]| {
        let q = extract_uniaxial(state);
        let max_diff = q.iter().zip(line).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let (deviation, max_q) = uniaxial_deviation(state);
        CompareSample { time: state.time, max_diff, deviation, transverse: transverse_variation(state), max_q }
    };
    let mut samples = vec![sample(&state, &line)];
    for _ in 0..scfg.steps_from(0.0) {
        state = solver.step(&state)?.0;
        line = scalar.step(&line);
        samples.push(sample(&state, &line));
    }
    Ok(CompareReport {
        max_diff: samples.iter().map(|s| s.max_diff).fold(0.0, f64::max),
        max_deviation: samples.iter().map(|s| s.deviation).fold(0.0, f64::max),
        tolerance: cfg.tolerance,
        uniaxial_tolerance: cfg.uniaxial_tolerance,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(a: f64, b: f64, c: f64) -> ScalarParams {
        ScalarParams { relaxation: 1.0, elastic: 1.0, a, b, c }
    }

    #[test]
    fn rhs_examples() {
        let h = 0.1;
        assert!(scalar_rhs(&[0.0; 20], h, &params(1.0, 2.0, -1.0)).unwrap().iter().all(|v| *v == 0.0));
        let q = vec![1.0; 50];
        let r = scalar_rhs(&q, h, &params(1.0, 2.0, -1.0)).unwrap();
        // interior nodes away from the boundary see a zero Laplacian
        for v in &r[1..49] {
            assert!((v - 7.0).abs() < 1e-12);
        }
        let l = 2.0;
        let m = 1000;
        let h = l / m as f64;
        let phi: Vec<f64> = (1..m).map(|i| (PI * i as f64 * h / l).sin()).collect();
        let p = ScalarParams { relaxation: 0.7, elastic: 1.3, a: 0.4, b: 0.0, c: 0.0 };
        let r = scalar_rhs(&phi, h, &p).unwrap();
        let lambda1 = (PI / l).powi(2);
        for (ri, fi) in r.iter().zip(&phi) {
            let expect = -p.relaxation * (p.elastic * lambda1 + p.a) * fi;
            // second-order Laplacian: eigenvalue off by O(h^2)
            assert!((ri - expect).abs() < 1e-5);
        }
        assert!(scalar_rhs(&[f64::NAN], h, &p).is_err());
    }

    #[test]
    fn kaplan_moment_examples() {
        let l = 3.0;
        assert_eq!(kaplan_moment(&[0.0; 9], l), 0.0);
        let m = 400;
        let h = l / m as f64;
        let phi: Vec<f64> = (1..m).map(|i| (PI * i as f64 * h / l).sin()).collect();
        assert!((kaplan_moment(&phi, l) - l / 2.0).abs() < 1e-13);
        let s = 1.7;
        let flat = vec![s; m - 1];
        assert!((kaplan_moment(&flat, l) - s * 2.0 * l / PI).abs() < 1e-4);
    }

    #[test]
    fn thomas_matches_dense_product() {
        let d = [1.0, -2.0, 0.5, 3.0, 0.25];
        let r = 0.8;
        let x = solve_implicit_diffusion(&d, r);
        for i in 0..d.len() {
            let left = if i == 0 { 0.0 } else { x[i - 1] };
            let right = if i + 1 == d.len() { 0.0 } else { x[i + 1] };
            assert!(((1.0 + 2.0 * r) * x[i] - r * (left + right) - d[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn comparison_threshold_and_time() {
        let ode = ComparisonOde { relaxation: 1.0, alpha: 1.0, beta: 0.0, kappa: 1.5 };
        assert!((ode.threshold() - (1.0f64 / 1.5).sqrt()).abs() < 1e-14);
        let m0 = PI;
        let w0 = m0.powi(-2);
        let closed = (ode.kappa / (ode.kappa - ode.alpha * w0)).ln() / (2.0 * ode.alpha);
        assert!((ode.blowup_time(m0).unwrap() - closed).abs() < 1e-10 * closed);
        assert!(ode.blowup_time(0.5).is_none());
        let pure = ComparisonOde { relaxation: 2.0, alpha: 0.0, beta: 0.0, kappa: 3.0 };
        let t = pure.blowup_time(2.0).unwrap();
        assert!((t - 0.25 / (2.0 * 2.0 * 3.0)).abs() < 1e-12);
        let quad = ComparisonOde { relaxation: 1.0, alpha: 1.0, beta: 2.0, kappa: 0.0 };
        assert!((quad.threshold() - 0.5).abs() < 1e-15);
        // m' = -m + 2 m^2 from m0 = 1: t* = ln(2 m0 / (2 m0 - 1)) = ln 2
        assert!((quad.blowup_time(1.0).unwrap() - 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn odd_extension_layout() {
        assert_eq!(odd_extension(&[1.0, 2.0, 3.0]), vec![0.0, 1.0, 2.0, 3.0, 0.0, -3.0, -2.0, -1.0]);
    }

    #[test]
    fn embed_examples() {
        let grid = Grid::new(8, 1.0).unwrap();
        let zero = embed_uniaxial(&[0.0; 3], &grid).unwrap();
        assert_eq!(zero.max_q_norm(), 0.0);
        let ones = embed_uniaxial(&[1.0; 3], &grid).unwrap();
        let a0 = TracelessSym3::a0();
        for i in [1, 2, 3] {
            let x = grid.physical_index(i, 5, 2);
            assert_eq!(ones.q_at(x), a0);
        }
        assert!(matches!(embed_uniaxial(&[0.0; 4], &grid), Err(Error::IncompatibleGrid(_))));
        let line = extract_uniaxial(&ones);
        assert!((line[2] - 1.0).abs() < 1e-15 && (line[6] + 1.0).abs() < 1e-15);
        assert_eq!(uniaxial_deviation(&ones).0, 0.0);
        assert_eq!(transverse_variation(&ones), 0.0);
    }

    #[test]
    fn short_cross_validation_matches() {
        let cfg = CompareConfig {
            params: ScalarParams { relaxation: 1.0, elastic: 0.5, a: 0.5, b: 0.0, c: 1.0 },
            viscosity: 1.0,
            grid: GridSpec { n: 8, box_scale: 1.0 },
            time: TimeSpec { dt: 0.01, t_final: 0.05, order: 2, dealias: true, cfl_max: 0.4 },
            profile: ScalarInit::Sine { amplitude: 0.8, mode: 1 },
            tolerance: 1e-8,
            uniaxial_tolerance: 1e-10,
        };
        let r = cross_validate(&cfg).unwrap();
        assert_eq!(r.samples.len(), 6);
        assert!(r.passed(), "{r:?}");
        assert!(r.samples.last().unwrap().max_q < r.samples[0].max_q);
    }

    #[test]
    fn spectral_scalar_heat_mode_decays_exactly() {
        let n = 16;
        let p = ScalarParams { relaxation: 0.5, elastic: 2.0, a: 0.0, b: 0.0, c: 0.0 };
        let dt = 0.01;
        let s = SpectralScalarSolver::new(n, 1.0, p, dt, 2, true).unwrap();
        let q: Vec<f64> = (0..n).map(|i| (2.0 * PI * 2.0 * i as f64 / n as f64).sin()).collect();
        let q1 = s.step(&q);
        let f = (-p.relaxation * p.elastic * 4.0 * dt).exp();
        for (a, b) in q1.iter().zip(&q) {
            assert!((a - f * b).abs() < 1e-14);
        }
    }
}
