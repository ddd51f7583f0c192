//! Randomized identity suite over the pointwise algebra and the discrete free
//! energy. Each check evaluates its oracle by raw index summation on plain
//! `[[f64; 3]; 3]` arrays, independent of the basis representation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{free_energy, select_m};
use crate::dynamics::random_state;
use crate::spectral::{FieldSet, Grid};
use crate::tensor::{
    bulk_energy_density, bulk_force, coercivity_constants, low_order_potential_and_force, molecular_field,
    stress_sigma, stress_tau, stretching, BulkParams, GradQ, Mat3, TracelessSym3,
};

type Raw = [[f64; 3]; 3];

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Samples per tumbling value for the pointwise identities.
    pub samples: usize,
    pub tumbling: Vec<f64>,
    pub elastic: Vec<f64>,
    /// Samples per parameter triple for the coercivity bounds.
    pub coercivity_samples: usize,
    pub grid_n: usize,
    pub directions: usize,
    /// Flip the sign of `tau` in the cancellation check (fault injection).
    #[serde(skip)]
    pub flip_tau: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 0,
            samples: 10_000,
            tumbling: vec![-1.0, -0.3, 0.0, 0.3, 1.0],
            elastic: vec![0.1, 1.0],
            coercivity_samples: 1_000_000,
            grid_n: 16,
            directions: 20,
            flip_tau: false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentityCheck {
    pub name: String,
    pub samples: usize,
    /// Worst residual; for bound checks, the worst violation (0 if none).
    pub max_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl IdentityCheck {
    fn new(name: impl Into<String>, samples: usize, max_residual: f64, tolerance: f64) -> Self {
        IdentityCheck {
            name: name.into(),
            samples,
            max_residual,
            tolerance,
            passed: max_residual <= tolerance,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<IdentityCheck>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }

    pub fn find(&self, prefix: &str) -> Vec<&IdentityCheck> {
        self.checks.iter().filter(|c| c.name.starts_with(prefix)).collect()
    }
}

fn raw(m: &Mat3) -> Raw {
    m.0
}

fn raw_mul(a: &Raw, b: &Raw) -> Raw {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn raw_ddot(a: &Raw, b: &Raw) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += a[i][j] * b[i][j];
        }
    }
    s
}

fn raw_norm(a: &Raw) -> f64 {
    raw_ddot(a, a).sqrt()
}

/// Unprojected `S` from the defining formula, by index loops.
fn raw_stretching(gu: &Raw, q: &Raw, xi: f64) -> Raw {
    let mut s = [[0.0; 3]; 3];
    let mut tr_qgu = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            tr_qgu += q[i][j] * gu[j][i];
        }
    }
    let g = |i: usize, j: usize| q[i][j] + if i == j { 1.0 / 3.0 } else { 0.0 };
    let d = |i: usize, j: usize| 0.5 * (gu[i][j] + gu[j][i]);
    let w = |i: usize, j: usize| 0.5 * (gu[i][j] - gu[j][i]);
    for i in 0..3 {
        for j in 0..3 {
            let mut v = -2.0 * xi * g(i, j) * tr_qgu;
            for k in 0..3 {
                v += xi * (d(i, k) * g(k, j) + g(i, k) * d(k, j));
                v += w(i, k) * q[k][j] - q[i][k] * w(k, j);
            }
            s[i][j] = v;
        }
    }
    s
}

/// Random admissible pointwise state.
struct Sample {
    q: TracelessSym3,
    h: TracelessSym3,
    grad_u: Mat3,
    grad_q: GradQ,
}

fn random_sym(rng: &mut ChaCha8Rng, scale: f64) -> TracelessSym3 {
    TracelessSym3(std::array::from_fn(|_| scale * rng.gen_range(-1.0..1.0)))
}

fn random_sample(rng: &mut ChaCha8Rng) -> Sample {
    let scale = 10f64.powf(rng.gen_range(-1.0..1.0));
    let q = random_sym(rng, scale);
    let h_scale = 10f64.powf(rng.gen_range(-1.0..1.0));
    let h = random_sym(rng, h_scale);
    let mut gu = Mat3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
    let tr = gu.trace() / 3.0;
    for i in 0..3 {
        gu.0[i][i] -= tr;
    }
    let grad_q = GradQ(std::array::from_fn(|_| random_sym(rng, scale)));
    Sample { q, h, grad_u: gu, grad_q }
}

fn chunk_rngs(seed: u64, stream: u64, total: usize) -> Vec<(ChaCha8Rng, usize)> {
    const CHUNK: usize = 4096;
    (0..total.div_ceil(CHUNK))
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            rng.set_word_pos((k as u128) << 40);
            (rng, CHUNK.min(total - k * CHUNK))
        })
        .collect()
}

/// Worst relative residual of `(tau + sigma) : grad_u + H : S + L grad Q (.) grad Q : grad_u`.
pub fn cancellation_check(p: &BulkParams, samples: usize, seed: u64, flip_tau: bool) -> f64 {
    let sign = if flip_tau { -1.0 } else { 1.0 };
    chunk_rngs(seed, 1, samples)
        .into_par_iter()
        .map(|(mut rng, count)| {
            let mut worst = 0.0f64;
            for _ in 0..count {
                let s = random_sample(&mut rng);
                let tau = raw(&stress_tau(&s.q, &s.h, &s.grad_q, p));
                let sigma = raw(&stress_sigma(&s.q, &s.h));
                let gu = raw(&s.grad_u);
                let st = raw(&stretching(&s.grad_u, &s.q, p.tumbling).expect("trace-free sample").to_matrix());
                let hm = raw(&s.h.to_matrix());
                let mut stress_power = 0.0;
                let mut elastic_power = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        stress_power += (sign * tau[i][j] + sigma[i][j]) * gu[i][j];
                        let mut odot = 0.0;
                        for a in 0..3 {
                            for b in 0..3 {
                                odot += s.grad_q.0[i].to_matrix().0[a][b] * s.grad_q.0[j].to_matrix().0[a][b];
                            }
                        }
                        elastic_power += p.elastic * odot * gu[i][j];
                    }
                }
                let stretch_power = raw_ddot(&hm, &st);
                let mag = stress_power.abs() + stretch_power.abs() + elastic_power.abs();
                if mag > 0.0 {
                    worst = worst.max((stress_power + stretch_power + elastic_power).abs() / mag);
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max)
}

/// Worst relative deviation of the library `S`, `tau`, `sigma` from the raw
/// formulas, plus symmetry/trace defects of the raw `S` and skewness of `sigma`.
fn constitutive_check(p: &BulkParams, samples: usize, seed: u64) -> (f64, f64, f64) {
    chunk_rngs(seed, 2, samples)
        .into_par_iter()
        .map(|(mut rng, count)| {
            let mut agree = 0.0f64;
            let mut s_class = 0.0f64;
            let mut sigma_skew = 0.0f64;
            for _ in 0..count {
                let s = random_sample(&mut rng);
                let qm = raw(&s.q.to_matrix());
                let hm = raw(&s.h.to_matrix());
                let gu = raw(&s.grad_u);
                let st = raw_stretching(&gu, &qm, p.tumbling);
                let lib = raw(&stretching(&s.grad_u, &s.q, p.tumbling).expect("trace-free sample").to_matrix());
                let n = raw_norm(&st).max(f64::MIN_POSITIVE);
                let mut diff = 0.0f64;
                let mut asym = 0.0f64;
                for i in 0..3 {
                    for j in 0..3 {
                        diff = diff.max((st[i][j] - lib[i][j]).abs());
                        asym = asym.max((st[i][j] - st[j][i]).abs());
                    }
                }
                let tr = st[0][0] + st[1][1] + st[2][2];
                agree = agree.max(diff / n);
                s_class = s_class.max(asym.max(tr.abs()) / n);

                // tau by index loops
                let g = |i: usize, j: usize| qm[i][j] + if i == j { 1.0 / 3.0 } else { 0.0 };
                let gh = raw_mul(&std::array::from_fn(|i| std::array::from_fn(|j| g(i, j))), &hm);
                let tr_qh = raw_ddot(&qm, &hm);
                let dq: [Raw; 3] = std::array::from_fn(|k| raw(&s.grad_q.0[k].to_matrix()));
                let tau = raw(&stress_tau(&s.q, &s.h, &s.grad_q, p));
                let mut dtau = 0.0f64;
                let mut ntau = 0.0f64;
                for i in 0..3 {
                    for j in 0..3 {
                        let odot = raw_ddot(&dq[i], &dq[j]);
                        let v = -p.tumbling * (gh[i][j] + gh[j][i]) + 2.0 * p.tumbling * g(i, j) * tr_qh
                            - p.elastic * odot;
                        dtau = dtau.max((v - tau[i][j]).abs());
                        ntau = ntau.max(v.abs());
                    }
                }
                if ntau > 0.0 {
                    agree = agree.max(dtau / ntau);
                }
                let sigma = raw(&stress_sigma(&s.q, &s.h));
                let qh = raw_mul(&qm, &hm);
                let hq = raw_mul(&hm, &qm);
                let nsig = raw_norm(&qh).max(f64::MIN_POSITIVE);
                let mut dsig = 0.0f64;
                for i in 0..3 {
                    for j in 0..3 {
                        dsig = dsig.max((qh[i][j] - hq[i][j] - sigma[i][j]).abs());
                        sigma_skew = sigma_skew.max((sigma[i][j] + sigma[j][i]).abs() / nsig);
                    }
                }
                // sigma : D for the symmetric part of grad_u
                let d = s.grad_u.sym();
                sigma_skew = sigma_skew.max(raw_ddot(&sigma, &raw(&d)).abs() / (nsig * raw_norm(&raw(&d)).max(1e-300)));
                agree = agree.max(dsig / nsig);
            }
            (agree, s_class, sigma_skew)
        })
        .reduce(|| (0.0, 0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1), a.2.max(b.2)))
}

/// `A(Q) : (Omega Q - Q Omega)` relative to `|A| |Omega Q - Q Omega|`, and the
/// central-difference check of `Dg(Q)[P] = A(Q) : P`.
fn low_order_check(p: &BulkParams, samples: usize, seed: u64) -> (f64, f64) {
    chunk_rngs(seed, 3, samples)
        .into_par_iter()
        .map(|(mut rng, count)| {
            let mut comm = 0.0f64;
            let mut chain = 0.0f64;
            for _ in 0..count {
                let q = random_sym(&mut rng, 1.0);
                let (_, a) = low_order_potential_and_force(&q, p);
                let w = Mat3::from_fn(|_, _| rng.gen_range(-1.0..1.0)).skew();
                let qm = raw(&q.to_matrix());
                let c = {
                    let wq = raw_mul(&raw(&w), &qm);
                    let qw = raw_mul(&qm, &raw(&w));
                    let out: Raw = std::array::from_fn(|i| std::array::from_fn(|j| wq[i][j] - qw[i][j]));
                    out
                };
                let am = raw(&a.to_matrix());
                let denom = raw_norm(&am) * raw_norm(&c);
                if denom > 0.0 {
                    comm = comm.max(raw_ddot(&am, &c).abs() / denom);
                }
                let dir = random_sym(&mut rng, 1.0);
                let h = 1e-5;
                let gp = low_order_potential_and_force(&(q + dir * h), p).0;
                let gm = low_order_potential_and_force(&(q - dir * h), p).0;
                let fd = (gp - gm) / (2.0 * h);
                let exact = a.dot(&dir);
                let scale = a.norm() * dir.norm();
                if scale > 0.0 {
                    chain = chain.max((fd - exact).abs() / scale);
                }
            }
            (comm, chain)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)))
}

/// `B(qA0)` and `H(qA0, lap_q A0)` against the scalar closure formulas.
fn uniaxial_closure_check(p: &BulkParams, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(4);
    let a0 = TracelessSym3::a0();
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let q = rng.gen_range(-5.0..5.0);
        let lap = rng.gen_range(-5.0..5.0);
        let scalar_b = p.b * q * q - 6.0 * p.c * q * q * q;
        let b = bulk_force(&TracelessSym3::uniaxial(q), p);
        let h = molecular_field(&TracelessSym3::uniaxial(q), &TracelessSym3::uniaxial(lap), p);
        let scalar_h = p.elastic * lap - p.a * q + scalar_b;
        let scale_b = (p.b * q * q).abs() + (6.0 * p.c * q.powi(3)).abs() + 1.0;
        let scale_h = scale_b + (p.elastic * lap).abs() + (p.a * q).abs();
        worst = worst.max((b - a0 * scalar_b).norm() / (a0.norm() * scale_b));
        worst = worst.max((h - a0 * scalar_h).norm() / (a0.norm() * scale_h));
    }
    worst
}

/// Random direction times a radius in `[0, rmax]`; every eighth sample is
/// uniaxial, where `tr Q^3` is extremal.
fn random_bounded_q(rng: &mut ChaCha8Rng, rmax: f64) -> TracelessSym3 {
    let r = rmax * rng.gen_range(0.0..=1.0);
    let dir = if rng.gen_range(0..8) == 0 {
        TracelessSym3::uniaxial(if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
    } else {
        random_sym(rng, 1.0)
    };
    let n = dir.norm();
    if n == 0.0 {
        TracelessSym3::ZERO
    } else {
        dir * (r / n)
    }
}

/// Worst relative violation of `bulk(Q) >= -C |Q|^2 + c0 |Q|^4` over random
/// `|Q| <= 10` and the uniaxial scan `s A0`, `s in [-10, 10]`.
pub fn coercivity_check(p: &BulkParams, samples: usize, seed: u64) -> std::result::Result<f64, crate::error::ParamError> {
    let k = coercivity_constants(p)?;
    let violation = |q: &TracelessSym3| {
        let lhs = bulk_energy_density(q, p);
        let rhs = k.lower_bound(q.norm());
        let scale = 1.0 + lhs.abs() + rhs.abs();
        ((rhs - lhs) / scale).max(0.0)
    };
    let random = chunk_rngs(seed, 5, samples)
        .into_par_iter()
        .map(|(mut rng, count)| (0..count).map(|_| violation(&random_bounded_q(&mut rng, 10.0))).fold(0.0, f64::max))
        .reduce(|| 0.0, f64::max);
    let scan = (0..=20_000).map(|i| violation(&TracelessSym3::uniaxial(-10.0 + 1e-3 * i as f64))).fold(0.0, f64::max);
    Ok(random.max(scan))
}

/// Worst relative violation of the modified bound with the selected `M`.
pub fn tail_constant_check(p: &BulkParams, samples: usize, seed: u64) -> std::result::Result<f64, crate::error::ParamError> {
    let tc = select_m(p)?;
    Ok(chunk_rngs(seed, 6, samples)
        .into_par_iter()
        .map(|(mut rng, count)| {
            (0..count)
                .map(|_| {
                    let q = random_bounded_q(&mut rng, 10.0);
                    let u2 = rng.gen_range(0.0..100.0);
                    let gq2 = rng.gen_range(0.0..100.0);
                    let margin = tc.margin(u2, gq2, &q, p);
                    let q2 = q.norm_sq();
                    let scale = 1.0 + u2 + gq2 + q2 + q2 * q2;
                    (-margin / scale).max(0.0)
                })
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max))
}

/// Central difference of the discrete `F` along random smooth traceless
/// directions against `-(H, P)` with the spectral Laplacian. Returns the worst
/// relative mismatch.
pub fn variational_check(p: &BulkParams, n: usize, directions: usize, seed: u64) -> crate::error::Result<f64> {
    let grid = Grid::new(n, 1.0)?;
    let base = random_state(&grid, 2.0, 0.0, 1.5, seed, true);
    let q_hat = base.q_spectral();
    let q: [Vec<f64>; 5] = std::array::from_fn(|c| grid.inverse_unchecked(&q_hat[c]));
    let lap: [Vec<f64>; 5] = std::array::from_fn(|c| grid.inverse_unchecked(&grid.laplacian(&q_hat[c])));
    let h: Vec<TracelessSym3> = (0..grid.len_physical())
        .map(|x| {
            molecular_field(&TracelessSym3(std::array::from_fn(|c| q[c][x])), &TracelessSym3(std::array::from_fn(|c| lap[c][x])), p)
        })
        .collect();
    let step = 1e-5;
    let mut worst = 0.0f64;
    for d in 0..directions {
        let dir = random_state(&grid, 2.0, 0.0, 1.5, seed.wrapping_add(1 + d as u64), true);
        let pd = dir.q_physical();
        let shifted = |s: f64| -> crate::error::Result<FieldSet> {
            let qs = std::array::from_fn(|c| q[c].iter().zip(pd[c].iter()).map(|(a, b)| a + s * b).collect());
            let u = std::array::from_fn(|_| vec![0.0; grid.len_physical()]);
            Ok(FieldSet::from_physical(&grid, qs, u, 0.0)?)
        };
        let fd = (free_energy(&shifted(step)?, p) - free_energy(&shifted(-step)?, p)) / (2.0 * step);
        let pairing = grid.sum_by(|x| h[x].dot(&TracelessSym3(std::array::from_fn(|c| pd[c][x])))) * grid.cell_volume();
        worst = worst.max((fd + pairing).abs() / pairing.abs().max(f64::MIN_POSITIVE));
    }
    Ok(worst)
}

/// Parameter triples `(a, b, c)` used for the coercivity sampling.
pub const COERCIVITY_TRIPLES: [(f64, f64, f64); 3] = [(-1.0, 2.0, 1.0), (0.5, 0.0, 2.0), (-3.0, -1.5, 0.25)];

pub const CANCELLATION_TOLERANCE: f64 = 1e-12;
pub const VARIATIONAL_TOLERANCE: f64 = 1e-6;

/// Run the whole suite.
pub fn run_identity_suite(opts: &VerifyOptions) -> crate::error::Result<VerifyReport> {
    let mut report = VerifyReport::default();
    let base = |l: f64, xi: f64| BulkParams::new(l, 1.0, 1.0, -0.7, 1.3, 0.9, xi, 0.0);
    for &xi in &opts.tumbling {
        for &l in &opts.elastic {
            let p = base(l, xi)?;
            let tag = format!("xi={xi},L={l}");
            let r = cancellation_check(&p, opts.samples, opts.seed, opts.flip_tau);
            report.checks.push(IdentityCheck::new(format!("cancellation[{tag}]"), opts.samples, r, CANCELLATION_TOLERANCE));
            let (agree, s_class, sigma) = constitutive_check(&p, opts.samples, opts.seed);
            report.checks.push(IdentityCheck::new(format!("constitutive_oracle[{tag}]"), opts.samples, agree, 1e-12));
            report.checks.push(IdentityCheck::new(format!("stretching_class[{tag}]"), opts.samples, s_class, 1e-12));
            report.checks.push(IdentityCheck::new(format!("sigma_skew[{tag}]"), opts.samples, sigma, 1e-12));
        }
    }
    for &(a, b, c) in &COERCIVITY_TRIPLES {
        let p = BulkParams::new(1.0, 1.0, 1.0, a, b, c, 0.0, 0.0)?;
        let tag = format!("a={a},b={b},c={c}");
        let (comm, chain) = low_order_check(&p, opts.samples, opts.seed);
        report.checks.push(IdentityCheck::new(format!("a_commutes[{tag}]"), opts.samples, comm, 1e-12));
        report.checks.push(IdentityCheck::new(format!("low_order_chain[{tag}]"), opts.samples, chain, 1e-6));
        let u = uniaxial_closure_check(&p, opts.samples, opts.seed);
        report.checks.push(IdentityCheck::new(format!("uniaxial_closure[{tag}]"), opts.samples, u, 1e-14));
        let cv = coercivity_check(&p, opts.coercivity_samples, opts.seed)?;
        report.checks.push(IdentityCheck::new(format!("coercivity[{tag}]"), opts.coercivity_samples, cv, 0.0));
        let tv = tail_constant_check(&p, opts.coercivity_samples, opts.seed)?;
        report.checks.push(IdentityCheck::new(format!("tail_constant[{tag}]"), opts.coercivity_samples, tv, 0.0));
    }
    let p = BulkParams::new(0.8, 1.0, 1.0, -0.5, 1.0, 1.0, 0.0, 0.0)?;
    let v = variational_check(&p, opts.grid_n, opts.directions, opts.seed)?;
    report.checks.push(IdentityCheck::new("variational", opts.directions, v, VARIATIONAL_TOLERANCE));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> VerifyOptions {
        VerifyOptions { samples: 500, coercivity_samples: 5_000, grid_n: 8, directions: 3, ..VerifyOptions::default() }
    }

    #[test]
    fn quick_suite_passes() {
        let r = run_identity_suite(&quick()).unwrap();
        assert!(r.all_passed(), "{:?}", r.failures());
    }

    #[test]
    fn flipped_tau_fails_cancellation_only() {
        let r = run_identity_suite(&VerifyOptions { flip_tau: true, ..quick() }).unwrap();
        let failed = r.failures();
        assert!(!failed.is_empty());
        assert!(failed.iter().all(|n| n.starts_with("cancellation")));
    }

    #[test]
    fn raw_stretching_matches_commutator_for_corotational_case() {
        let a0 = TracelessSym3::a0().to_matrix().0;
        let mut gu = [[0.0; 3]; 3];
        gu[0][1] = 1.0;
        gu[1][0] = -1.0;
        let s = raw_stretching(&gu, &a0, 0.0);
        assert_eq!(s[0][1], -3.0);
        assert_eq!(s[1][0], -3.0);
    }
}
