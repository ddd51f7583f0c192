//! Energy functionals and identity ledgers evaluated on discrete states.
//!
//! A [`DiagnosticsRecord`] holds the instantaneous integrals of one state.
//! Time integrals and residual series are built from a [`DiagnosticsSeries`]
//! by the trapezoid rule over the recorded times.
//!
//! Localized quantities use a radial cutoff centered at the box center. On a
//! torus the annuli `R <= |x - x_c| <= 2R` are only meaningful while `2R` is
//! below half the period; larger radii are accepted but no longer describe a
//! whole-space tail.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{ParamError, Result};
use crate::spectral::{FieldSet, Grid, PhysicalDerivatives};
use crate::tensor::{
    bulk_force, energy_density, low_order_potential_and_force, molecular_field, stress_sigma,
    stress_tau, stretching_unchecked, BulkParams, Mat3,
};

/// Quintic smoothstep `6t^5 - 15t^4 + 10t^3` on `[0, 1]` with its first two
/// derivatives.
fn smoothstep(t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        (0.0, 0.0, 0.0)
    } else if t >= 1.0 {
        (1.0, 0.0, 0.0)
    } else {
        let t2 = t * t;
        (
            t2 * t * (10.0 - 15.0 * t + 6.0 * t2),
            30.0 * t2 * (1.0 - t) * (1.0 - t),
            60.0 * t * (1.0 - t) * (1.0 - 2.0 * t),
        )
    }
}

/// Radial cutoff `eta_R`: zero on the ball of radius `R` about the box
/// center, one outside radius `2R`, with analytic gradient and Laplacian.
#[derive(Clone, Debug)]
pub struct CutoffProfile {
    pub radius: f64,
    pub eta: Vec<f64>,
    pub grad: [Vec<f64>; 3],
    pub lap: Vec<f64>,
    /// `max(R |grad eta|, R^2 |lap eta|)` over the grid.
    pub constant: f64,
}

impl CutoffProfile {
    /// Radius zero gives `eta = 1` everywhere.
    pub fn new(grid: &Grid, radius: f64) -> std::result::Result<Self, ParamError> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(ParamError::Invalid(format!("cutoff radius must be non-negative, got {radius}")));
        }
        let n = grid.len_physical();
        if radius == 0.0 {
            return Ok(CutoffProfile {
                radius,
                eta: vec![1.0; n],
                grad: std::array::from_fn(|_| vec![0.0; n]),
                lap: vec![0.0; n],
                constant: 0.0,
            });
        }
        let center = std::f64::consts::PI * grid.scale();
        let vals: Vec<[f64; 5]> = (0..n)
            .into_par_iter()
            .map(|x| {
                let p = grid.position(x).map(|v| v - center);
                let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                let (s, ds, dds) = smoothstep((r - radius) / radius);
                if ds == 0.0 && dds == 0.0 {
                    return [s, 0.0, 0.0, 0.0, 0.0];
                }
                let g = ds / radius / r;
                [s, g * p[0], g * p[1], g * p[2], dds / (radius * radius) + 2.0 * ds / (radius * r)]
            })
            .collect();
        let col = |c: usize| vals.iter().map(|v| v[c]).collect::<Vec<f64>>();
        let eta = col(0);
        let grad = [col(1), col(2), col(3)];
        let lap = col(4);
        let constant = vals
            .iter()
            .map(|v| {
                let g = (v[1] * v[1] + v[2] * v[2] + v[3] * v[3]).sqrt();
                (radius * g).max(radius * radius * v[4].abs())
            })
            .fold(0.0, f64::max);
        Ok(CutoffProfile { radius, eta, grad, lap, constant })
    }
}

/// Constants of the modified coercivity bound
/// `1/2|u|^2 + L/2|grad Q|^2 + bulk(Q) + M/2|Q|^2 >= c0 (|u|^2 + |grad Q|^2 + |Q|^2 + |Q|^4)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TailConstants {
    pub m: f64,
    pub c0: f64,
}

impl TailConstants {
    /// Left side minus right side of the bound for pointwise values with
    /// `|u|^2 = u2`, `|grad Q|^2 = gq2`, and tensor `Q`.
    pub fn margin(&self, u2: f64, gq2: f64, q: &crate::tensor::TracelessSym3, p: &BulkParams) -> f64 {
        let q2 = q.norm_sq();
        let lhs = 0.5 * u2 + 0.5 * p.elastic * gq2 + crate::tensor::bulk_energy_density(q, p) + 0.5 * self.m * q2;
        lhs - self.c0 * (u2 + gq2 + q2 + q2 * q2)
    }
}

/// `c0 = min(1/2, L/2, c/8)` and `M = max(1, 2 c0 - a + 2 b^2 / (27 c))`,
/// from `|tr Q^3| <= |Q|^3 / sqrt6` and Young's inequality.
pub fn select_m(p: &BulkParams) -> std::result::Result<TailConstants, ParamError> {
    if !(p.c > 0.0) {
        return Err(ParamError::Unstable(p.c));
    }
    let c0 = 0.5f64.min(0.5 * p.elastic).min(p.c / 8.0);
    let m = (2.0 * c0 - p.a + 2.0 * p.b * p.b / (27.0 * p.c)).max(1.0);
    Ok(TailConstants { m, c0 })
}

/// Per-radius localized quantities of one state.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailRecord {
    pub radius: f64,
    /// `Y_R = int eta (e + M/2 |Q|^2)`.
    pub tail_energy: f64,
    /// `int eta e`.
    pub local_energy: f64,
    /// `int eta (mu|grad u|^2 + eps|lap u|^2 + Gamma|H|^2)`.
    pub local_dissipation: f64,
    /// `int J . grad eta`.
    pub flux: f64,
    /// `-eps int eta u . lap^2 u + eps int eta |lap u|^2`.
    pub hyper_commutator: f64,
    /// `eps/2 int eta |lap u|^2`.
    pub hyper_half: f64,
}

/// Instantaneous integrals of one state.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticsRecord {
    pub time: f64,
    /// `1/2 ||u||^2`.
    pub kinetic: f64,
    pub free_energy: f64,
    /// `mu ||grad u||^2`.
    pub viscous_dissipation: f64,
    /// `eps ||lap u||^2`.
    pub hyper_dissipation: f64,
    /// `Gamma ||H||^2`.
    pub relaxation_dissipation: f64,
    pub q_l2_sq: f64,
    pub grad_q_l2_sq: f64,
    pub lap_q_l2_sq: f64,
    /// `int |Q|^4`.
    pub q_l4_4: f64,
    /// `G(Q) = 1/2 ||Q||^2 - int bulk(Q)`.
    pub g_functional: f64,
    /// `int Q G : grad u - |Q|^2 tr(Q grad u)`, `G = Q + I/3`.
    pub xi_line_linear: f64,
    /// `int B(Q) G : grad u - (B(Q) : Q) tr(Q grad u)`.
    pub xi_line_bulk: f64,
    /// `int B(Q) : (Q - L lap Q)`.
    pub bulk_pairing: f64,
    /// `int A(Q) : S`, evaluated pointwise.
    pub a_s_pairing: f64,
    /// `2(1-a) xi * xi_line_linear + 2 xi * xi_line_bulk`.
    pub a_s_expanded: f64,
    /// `int A(Q) : H`.
    pub a_h_pairing: f64,
    pub max_q: f64,
    pub max_u: f64,
    /// Fraction of `||Q||^2 + ||u||^2` in modes with some `|m_i| > n/4`.
    pub spectral_tail: f64,
    pub tails: Vec<TailRecord>,
}

impl DiagnosticsRecord {
    pub fn total_energy(&self) -> f64 {
        self.kinetic + self.free_energy
    }

    pub fn dissipation(&self) -> f64 {
        self.viscous_dissipation + self.hyper_dissipation + self.relaxation_dissipation
    }

    pub fn csv_header(&self) -> String {
        let mut h = String::from(
            "time,kinetic,free_energy,viscous_dissipation,hyper_dissipation,relaxation_dissipation,\
             q_l2_sq,grad_q_l2_sq,lap_q_l2_sq,q_l4_4,g_functional,xi_line_linear,xi_line_bulk,\
             bulk_pairing,a_s_pairing,a_s_expanded,a_h_pairing,max_q,max_u,spectral_tail",
        );
        for (k, _) in self.tails.iter().enumerate() {
            for name in ["radius", "tail_energy", "local_energy", "local_dissipation", "flux", "hyper_commutator", "hyper_half"] {
                let _ = write!(h, ",{name}_{k}");
            }
        }
        h
    }

    pub fn csv_row(&self) -> String {
        let mut vals = vec![
            self.time,
            self.kinetic,
            self.free_energy,
            self.viscous_dissipation,
            self.hyper_dissipation,
            self.relaxation_dissipation,
            self.q_l2_sq,
            self.grad_q_l2_sq,
            self.lap_q_l2_sq,
            self.q_l4_4,
            self.g_functional,
            self.xi_line_linear,
            self.xi_line_bulk,
            self.bulk_pairing,
            self.a_s_pairing,
            self.a_s_expanded,
            self.a_h_pairing,
            self.max_q,
            self.max_u,
            self.spectral_tail,
        ];
        for t in &self.tails {
            vals.extend([t.radius, t.tail_energy, t.local_energy, t.local_dissipation, t.flux, t.hyper_commutator, t.hyper_half]);
        }
        format_row(&vals)
    }
}

/// Comma separated values with 17 significant digits.
pub fn format_row(vals: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in vals.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{v:.16e}");
    }
    s
}

/// Deterministic sums of `W` pointwise integrands: slab partial sums in slab
/// order, then multiplied by the cell volume.
fn integrate_many<const W: usize>(grid: &Grid, f: impl Fn(usize) -> [f64; W] + Sync) -> [f64; W] {
    let slab = grid.slab();
    let partial: Vec<[f64; W]> = (0..grid.n())
        .into_par_iter()
        .map(|i| {
            let mut acc = [0.0; W];
            for x in i * slab..(i + 1) * slab {
                let v = f(x);
                for (a, b) in acc.iter_mut().zip(v) {
                    *a += b;
                }
            }
            acc
        })
        .collect();
    let mut total = [0.0; W];
    for p in &partial {
        for (a, b) in total.iter_mut().zip(p) {
            *a += b;
        }
    }
    let dv = grid.cell_volume();
    total.map(|v| v * dv)
}

/// Physical fields needed by the localized diagnostics.
struct Snapshot {
    d: PhysicalDerivatives,
    bih_u: [Vec<f64>; 3],
    stress: Vec<Mat3>,
    pressure: Vec<f64>,
}

impl Snapshot {
    fn new(state: &FieldSet, p: &BulkParams, with_pressure: bool) -> Self {
        let grid = &state.grid;
        let d = PhysicalDerivatives::of_state(state, true);
        let u_hat = state.u_spectral();
        let bih_u = std::array::from_fn(|c| {
            if with_pressure {
                grid.inverse_unchecked(&grid.biharmonic(&u_hat[c]))
            } else {
                Vec::new()
            }
        });
        let (stress, pressure) = if with_pressure {
            let stress: Vec<Mat3> = (0..grid.len_physical())
                .into_par_iter()
                .map(|x| {
                    let q = d.q_at(x);
                    let h = molecular_field(&q, &d.lap_q_at(x), p);
                    stress_tau(&q, &h, &d.grad_q_at(x), p) + stress_sigma(&q, &h)
                })
                .collect();
            let pressure = grid
                .solve_pressure([&d.u[0], &d.u[1], &d.u[2]], &stress)
                .expect("fields share the grid");
            (stress, pressure)
        } else {
            (Vec::new(), Vec::new())
        };
        Snapshot { d, bih_u, stress, pressure }
    }

    /// Energy density `e`, dissipation density and flux vector `J` at `x`.
    fn local(&self, x: usize, p: &BulkParams) -> (f64, f64, [f64; 3]) {
        let d = &self.d;
        let q = d.q_at(x);
        let gq = d.grad_q_at(x);
        let u = d.u_at(x);
        let gu = d.grad_u_at(x);
        let lu: [f64; 3] = std::array::from_fn(|c| d.lap_u.as_ref().expect("lap u")[c][x]);
        let h = molecular_field(&q, &d.lap_q_at(x), p);
        let s = stretching_unchecked(&gu, &q, p.tumbling);
        let u2 = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
        let e = 0.5 * u2 + energy_density(&q, &gq, p);
        let diss = p.viscosity * gu.ddot(&gu)
            + p.hyperviscosity * (lu[0] * lu[0] + lu[1] * lu[1] + lu[2] * lu[2])
            + p.relaxation * h.norm_sq();
        let w = s + h * p.relaxation;
        let stress = &self.stress[x];
        let pr = self.pressure[x];
        let j = std::array::from_fn(|jj| {
            let mut v = -(e + pr) * u[jj];
            for i in 0..3 {
                v += p.viscosity * u[i] * gu[(i, jj)] + stress[(i, jj)] * u[i];
            }
            v + p.elastic * gq.0[jj].dot(&w)
        });
        (e, diss, j)
    }
}

/// Evaluator of [`DiagnosticsRecord`]s for a fixed grid, parameter set and
/// list of cutoff radii.
#[derive(Clone, Debug)]
pub struct Diagnostics {
    grid: Grid,
    params: BulkParams,
    cutoffs: Vec<CutoffProfile>,
    tail: Option<TailConstants>,
}

impl Diagnostics {
    pub fn new(grid: &Grid, params: &BulkParams, radii: &[f64]) -> Result<Self> {
        let cutoffs = radii.iter().map(|&r| CutoffProfile::new(grid, r)).collect::<std::result::Result<Vec<_>, _>>()?;
        let tail = if radii.is_empty() { None } else { Some(select_m(params)?) };
        Ok(Diagnostics { grid: grid.clone(), params: *params, cutoffs, tail })
    }

    pub fn cutoffs(&self) -> &[CutoffProfile] {
        &self.cutoffs
    }

    pub fn tail_constants(&self) -> Option<TailConstants> {
        self.tail
    }

    pub fn record(&self, state: &FieldSet) -> DiagnosticsRecord {
        let p = self.params;
        let grid = &self.grid;
        let snap = Snapshot::new(state, &p, !self.cutoffs.is_empty());
        let d = &snap.d;
        let lap_u = d.lap_u.as_ref().expect("lap u computed");
        let v = integrate_many::<15>(grid, |x| {
            let q = d.q_at(x);
            let lq = d.lap_q_at(x);
            let gq = d.grad_q_at(x);
            let u = d.u_at(x);
            let gu = d.grad_u_at(x);
            let bulk = bulk_force(&q, &p);
            let h = molecular_field(&q, &lq, &p);
            let s = stretching_unchecked(&gu, &q, p.tumbling);
            let (g, a) = low_order_potential_and_force(&q, &p);
            let qm = q.to_matrix();
            let gm = qm + Mat3::IDENTITY * (1.0 / 3.0);
            let bm = bulk.to_matrix();
            let tr_q_gu = qm.ddot(&gu.transpose());
            let q2 = q.norm_sq();
            let lu2 = lap_u[0][x].powi(2) + lap_u[1][x].powi(2) + lap_u[2][x].powi(2);
            [
                0.5 * (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]),
                energy_density(&q, &gq, &p),
                gu.ddot(&gu),
                lu2,
                h.norm_sq(),
                q2,
                gq.norm_sq(),
                lq.norm_sq(),
                q2 * q2,
                g,
                qm.matmul(&gm).ddot(&gu) - q2 * tr_q_gu,
                bm.matmul(&gm).ddot(&gu) - bulk.dot(&q) * tr_q_gu,
                bulk.dot(&(q - lq * p.elastic)),
                a.dot(&s),
                a.dot(&h),
            ]
        });
        let tails = self
            .cutoffs
            .iter()
            .map(|cut| {
                let m = self.tail.expect("tail constants exist with cutoffs").m;
                let eps = p.hyperviscosity;
                let w = integrate_many::<6>(grid, |x| {
                    let (e, diss, j) = snap.local(x, &p);
                    let eta = cut.eta[x];
                    let q2 = d.q_at(x).norm_sq();
                    let u = d.u_at(x);
                    let u_bih = u[0] * snap.bih_u[0][x] + u[1] * snap.bih_u[1][x] + u[2] * snap.bih_u[2][x];
                    let lu2 = lap_u[0][x].powi(2) + lap_u[1][x].powi(2) + lap_u[2][x].powi(2);
                    [
                        eta * (e + 0.5 * m * q2),
                        eta * e,
                        eta * diss,
                        j[0] * cut.grad[0][x] + j[1] * cut.grad[1][x] + j[2] * cut.grad[2][x],
                        eps * eta * (lu2 - u_bih),
                        0.5 * eps * eta * lu2,
                    ]
                });
                TailRecord {
                    radius: cut.radius,
                    tail_energy: w[0],
                    local_energy: w[1],
                    local_dissipation: w[2],
                    flux: w[3],
                    hyper_commutator: w[4],
                    hyper_half: w[5],
                }
            })
            .collect();
        let max_q = (0..grid.len_physical()).into_par_iter().map(|x| d.q_at(x).norm()).reduce(|| 0.0, f64::max);
        let max_u = (0..grid.len_physical())
            .into_par_iter()
            .map(|x| {
                let u = d.u_at(x);
                (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt()
            })
            .reduce(|| 0.0, f64::max);
        DiagnosticsRecord {
            time: state.time,
            kinetic: v[0],
            free_energy: v[1],
            viscous_dissipation: p.viscosity * v[2],
            hyper_dissipation: p.hyperviscosity * v[3],
            relaxation_dissipation: p.relaxation * v[4],
            q_l2_sq: v[5],
            grad_q_l2_sq: v[6],
            lap_q_l2_sq: v[7],
            q_l4_4: v[8],
            g_functional: v[9],
            xi_line_linear: v[10],
            xi_line_bulk: v[11],
            bulk_pairing: v[12],
            a_s_pairing: v[13],
            a_s_expanded: 2.0 * (1.0 - p.a) * p.tumbling * v[10] + 2.0 * p.tumbling * v[11],
            a_h_pairing: v[14],
            max_q,
            max_u,
            spectral_tail: spectral_tail(state),
            tails,
        }
    }
}

fn spectral_tail(state: &FieldSet) -> f64 {
    let grid = &state.grid;
    let limit = grid.n() as i64 / 4;
    let mut total = 0.0;
    let mut outer = 0.0;
    for f in state.q_spectral().iter().chain(state.u_spectral().iter()) {
        let (t, o) = f
            .par_iter()
            .enumerate()
            .map(|(idx, v)| {
                let w = grid.spectral_weight(idx) * v.norm_sqr();
                let far = grid.modes(idx).iter().any(|m| m.abs() > limit);
                (w, if far { w } else { 0.0 })
            })
            .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        total += t;
        outer += o;
    }
    if total > 0.0 {
        outer / total
    } else {
        0.0
    }
}

/// `F(Q) = int L/2 |grad Q|^2 + a/2|Q|^2 - b/3 tr(Q^3) + c/4 |Q|^4`.
pub fn free_energy(state: &FieldSet, p: &BulkParams) -> f64 {
    let q_hat = state.q_spectral();
    let grid = &state.grid;
    let q: [Vec<f64>; 5] = std::array::from_fn(|c| grid.inverse_unchecked(&q_hat[c]));
    let gq: [[Vec<f64>; 5]; 3] =
        std::array::from_fn(|a| std::array::from_fn(|c| grid.inverse_unchecked(&grid.derivative(&q_hat[c], a))));
    integrate_many::<1>(grid, |x| {
        let qx = crate::tensor::TracelessSym3(std::array::from_fn(|c| q[c][x]));
        let g = crate::tensor::GradQ(std::array::from_fn(|a| {
            crate::tensor::TracelessSym3(std::array::from_fn(|c| gq[a][c][x]))
        }));
        [energy_density(&qx, &g, p)]
    })[0]
}

/// `Y_R = int eta_R (e + M/2 |Q|^2)` of a single state.
pub fn tail_energy(state: &FieldSet, cutoff: &CutoffProfile, tc: &TailConstants, p: &BulkParams) -> f64 {
    let d = PhysicalDerivatives::of_state(state, false);
    integrate_many::<1>(&state.grid, |x| {
        let q = d.q_at(x);
        let u = d.u_at(x);
        let e = 0.5 * (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]) + energy_density(&q, &d.grad_q_at(x), p);
        [cutoff.eta[x] * (e + 0.5 * tc.m * q.norm_sq())]
    })[0]
}

/// `int J . grad eta_R` of a single state, with the pressure recovered
/// spectrally.
pub fn flux_integral(state: &FieldSet, cutoff: &CutoffProfile, p: &BulkParams) -> f64 {
    let snap = Snapshot::new(state, p, true);
    integrate_many::<1>(&state.grid, |x| {
        let (_, _, j) = snap.local(x, p);
        [j[0] * cutoff.grad[0][x] + j[1] * cutoff.grad[1][x] + j[2] * cutoff.grad[2][x]]
    })[0]
}

/// Recorded diagnostics of a run together with its parameters.
#[derive(Clone, Debug, Serialize)]
pub struct DiagnosticsSeries {
    pub params: BulkParams,
    pub records: Vec<DiagnosticsRecord>,
}

impl DiagnosticsSeries {
    pub fn new(params: BulkParams) -> Self {
        DiagnosticsSeries { params, records: Vec::new() }
    }

    pub fn push(&mut self, record: DiagnosticsRecord) {
        self.records.push(record);
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    /// Cumulative trapezoid integral of `f` over the recorded times.
    pub fn cumulative(&self, f: impl Fn(&DiagnosticsRecord) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.records.len());
        let mut acc = 0.0;
        for (k, r) in self.records.iter().enumerate() {
            if k > 0 {
                let prev = &self.records[k - 1];
                acc += 0.5 * (r.time - prev.time) * (f(prev) + f(r));
            }
            out.push(acc);
        }
        out
    }

    /// `E(t) + int_0^t D - E(0)` with `E = 1/2||u||^2 + F(Q)` and
    /// `D = mu||grad u||^2 + eps||lap u||^2 + Gamma||H||^2`.
    pub fn physical_energy_residual(&self) -> Vec<f64> {
        let Some(first) = self.records.first() else { return Vec::new() };
        let e0 = first.total_energy();
        let diss = self.cumulative(DiagnosticsRecord::dissipation);
        self.records.iter().zip(diss).map(|(r, d)| r.total_energy() + d - e0).collect()
    }

    /// `G(t) - G(0) - int (A, S) - Gamma int (A, H)`.
    pub fn chain_rule_residual(&self) -> Vec<f64> {
        let Some(first) = self.records.first() else { return Vec::new() };
        let g0 = first.g_functional;
        let gamma = self.params.relaxation;
        let src = self.cumulative(|r| r.a_s_pairing + gamma * r.a_h_pairing);
        self.records.iter().zip(src).map(|(r, s)| r.g_functional - g0 - s).collect()
    }

    /// Right side minus left side of the expanded energy inequality, every
    /// term evaluated from its own recorded integral.
    pub fn lh_expanded_gap(&self) -> Vec<f64> {
        let Some(first) = self.records.first() else { return Vec::new() };
        let p = self.params;
        let (l, a, g, xi) = (p.elastic, p.a, p.relaxation, p.tumbling);
        let state_part = |r: &DiagnosticsRecord| 2.0 * r.kinetic + r.q_l2_sq + l * r.grad_q_l2_sq;
        let lhs_rate = self.cumulative(|r| {
            2.0 * r.viscous_dissipation
                + 2.0 * a * g * r.q_l2_sq
                + 2.0 * (a + 1.0) * g * l * r.grad_q_l2_sq
                + 2.0 * g * l * l * r.lap_q_l2_sq
        });
        let rhs_rate = self.cumulative(|r| {
            2.0 * g * r.bulk_pairing + 4.0 * (1.0 - a) * xi * r.xi_line_linear + 4.0 * xi * r.xi_line_bulk
        });
        let s0 = state_part(first);
        self.records
            .iter()
            .zip(lhs_rate.iter().zip(&rhs_rate))
            .map(|(r, (lr, rr))| (s0 + rr) - (state_part(r) + lr))
            .collect()
    }

    /// The gap predicted from the other two ledgers:
    /// `2 eps int ||lap u||^2 - 2 r_phys - 2 r_chain`.
    pub fn lh_gap_from_residuals(&self) -> Vec<f64> {
        let hyper = self.cumulative(|r| r.hyper_dissipation);
        let phys = self.physical_energy_residual();
        let chain = self.chain_rule_residual();
        hyper.iter().zip(phys.iter().zip(&chain)).map(|(h, (p, c))| 2.0 * h - 2.0 * p - 2.0 * c).collect()
    }

    /// `int eta e (t) - int eta e (0) + int_0^t (int eta D + int J.grad eta - hyper_commutator)`
    /// for the cutoff with index `k`.
    pub fn local_energy_residual(&self, k: usize) -> Vec<f64> {
        let Some(first) = self.records.first() else { return Vec::new() };
        let e0 = first.tails[k].local_energy;
        let rate = self.cumulative(|r| {
            let t = &r.tails[k];
            t.local_dissipation + t.flux - t.hyper_commutator
        });
        self.records.iter().zip(rate).map(|(r, s)| r.tails[k].local_energy - e0 + s).collect()
    }

    /// `sqrt(eps) ||lap u||_{L2(0,T;L2)}`.
    pub fn hyper_norm(&self) -> f64 {
        self.cumulative(|r| r.hyper_dissipation).last().copied().unwrap_or(0.0).sqrt()
    }

    /// `sup_t Y_R(t)` for cutoff `k`.
    pub fn sup_tail_energy(&self, k: usize) -> f64 {
        self.records.iter().map(|r| r.tails[k].tail_energy).fold(f64::NEG_INFINITY, f64::max)
    }

    /// `|int_0^T int J . grad eta_R|` for cutoff `k`.
    pub fn cumulative_flux(&self, k: usize) -> f64 {
        self.cumulative(|r| r.tails[k].flux).last().copied().unwrap_or(0.0).abs()
    }

    /// `int_0^T |int J . grad eta_R| dt` for cutoff `k`.
    pub fn absolute_flux(&self, k: usize) -> f64 {
        self.cumulative(|r| r.tails[k].flux.abs()).last().copied().unwrap_or(0.0)
    }
}
