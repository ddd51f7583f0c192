//! Pointwise algebra of symmetric traceless 3x3 tensors and the closed-form
//! constitutive quantities of the Beris-Edwards model.
//!
//! Every constitutive formula is evaluated with full 3x3 matrices and then
//! projected back onto the five-coefficient representation, so the
//! symmetric-traceless constraint holds by construction.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::ParamError;

const SQRT2: f64 = std::f64::consts::SQRT_2;
// sqrt(6)
const SQRT6: f64 = 2.449_489_742_783_178;

/// Full real 3x3 matrix, row-major. For a velocity gradient the convention is
/// `grad_u[i][j] = d u_i / d x_j`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const ZERO: Mat3 = Mat3([[0.0; 3]; 3]);
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn from_fn(mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = f(i, j);
            }
        }
        Mat3(m)
    }

    pub fn diag(d0: f64, d1: f64, d2: f64) -> Self {
        Mat3([[d0, 0.0, 0.0], [0.0, d1, 0.0], [0.0, 0.0, d2]])
    }

    /// `e_i (x) e_j`.
    pub fn unit(i: usize, j: usize) -> Self {
        let mut m = Mat3::ZERO;
        m.0[i][j] = 1.0;
        m
    }

    pub fn transpose(&self) -> Self {
        Mat3::from_fn(|i, j| self.0[j][i])
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn matmul(&self, rhs: &Mat3) -> Mat3 {
        Mat3::from_fn(|i, j| {
            self.0[i][0] * rhs.0[0][j] + self.0[i][1] * rhs.0[1][j] + self.0[i][2] * rhs.0[2][j]
        })
    }

    /// Frobenius double contraction `A : B = sum_ij A_ij B_ij`.
    pub fn ddot(&self, rhs: &Mat3) -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += self.0[i][j] * rhs.0[i][j];
            }
        }
        s
    }

    pub fn norm(&self) -> f64 {
        self.ddot(self).sqrt()
    }

    /// Symmetric part `(M + M^T) / 2`.
    pub fn sym(&self) -> Mat3 {
        Mat3::from_fn(|i, j| 0.5 * (self.0[i][j] + self.0[j][i]))
    }

    /// Skew part `(M - M^T) / 2`.
    pub fn skew(&self) -> Mat3 {
        Mat3::from_fn(|i, j| 0.5 * (self.0[i][j] - self.0[j][i]))
    }

    pub fn scale(&self, s: f64) -> Mat3 {
        Mat3::from_fn(|i, j| s * self.0[i][j])
    }

    pub fn mat_vec(&self, v: &[f64; 3]) -> [f64; 3] {
        [
            self.0[0][0] * v[0] + self.0[0][1] * v[1] + self.0[0][2] * v[2],
            self.0[1][0] * v[0] + self.0[1][1] * v[1] + self.0[1][2] * v[2],
            self.0[2][0] * v[0] + self.0[2][1] * v[1] + self.0[2][2] * v[2],
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

impl Index<(usize, usize)> for Mat3 {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.0[i][j]
    }
}

impl IndexMut<(usize, usize)> for Mat3 {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.0[i][j]
    }
}

impl Add for Mat3 {
    type Output = Mat3;
    fn add(self, rhs: Mat3) -> Mat3 {
        Mat3::from_fn(|i, j| self.0[i][j] + rhs.0[i][j])
    }
}

impl Sub for Mat3 {
    type Output = Mat3;
    fn sub(self, rhs: Mat3) -> Mat3 {
        Mat3::from_fn(|i, j| self.0[i][j] - rhs.0[i][j])
    }
}

impl Mul<f64> for Mat3 {
    type Output = Mat3;
    fn mul(self, s: f64) -> Mat3 {
        self.scale(s)
    }
}

impl Neg for Mat3 {
    type Output = Mat3;
    fn neg(self) -> Mat3 {
        self.scale(-1.0)
    }
}

/// A symmetric traceless 3x3 tensor stored as five coefficients in the
/// Frobenius-orthonormal basis
///
/// ```text
/// E0 = diag(2,-1,-1)/sqrt6   E1 = diag(0,1,-1)/sqrt2
/// E2 = (e1e2+e2e1)/sqrt2     E3 = (e1e3+e3e1)/sqrt2     E4 = (e2e3+e3e2)/sqrt2
/// ```
///
/// Because the basis is orthonormal, `P : R` is the Euclidean dot product of
/// the coefficient vectors. The uniaxial direction `A0 = diag(2,-1,-1)` is
/// `sqrt(6) E0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TracelessSym3(pub [f64; 5]);

impl TracelessSym3 {
    pub const ZERO: TracelessSym3 = TracelessSym3([0.0; 5]);

    pub fn new(coeffs: [f64; 5]) -> Self {
        TracelessSym3(coeffs)
    }

    /// `s A0` with `A0 = diag(2,-1,-1)`.
    pub fn uniaxial(s: f64) -> Self {
        TracelessSym3([s * SQRT6, 0.0, 0.0, 0.0, 0.0])
    }

    /// `A0 = diag(2,-1,-1)`.
    pub fn a0() -> Self {
        Self::uniaxial(1.0)
    }

    /// Scalar `q` with `Q = q A0 + (orthogonal part)`, i.e. `Q : A0 / |A0|^2`.
    pub fn uniaxial_amplitude(&self) -> f64 {
        self.0[0] / SQRT6
    }

    pub fn coeffs(&self) -> &[f64; 5] {
        &self.0
    }

    pub fn to_matrix(&self) -> Mat3 {
        let [c0, c1, c2, c3, c4] = self.0;
        let d = c0 / SQRT6;
        let e = c1 / SQRT2;
        let m01 = c2 / SQRT2;
        let m02 = c3 / SQRT2;
        let m12 = c4 / SQRT2;
        Mat3([
            [2.0 * d, m01, m02],
            [m01, -d + e, m12],
            [m02, m12, -d - e],
        ])
    }

    /// Orthogonal projection of an arbitrary matrix onto the symmetric
    /// traceless class.
    pub fn from_matrix(m: &Mat3) -> Self {
        let a = &m.0;
        TracelessSym3([
            (2.0 * a[0][0] - a[1][1] - a[2][2]) / SQRT6,
            (a[1][1] - a[2][2]) / SQRT2,
            (a[0][1] + a[1][0]) / SQRT2,
            (a[0][2] + a[2][0]) / SQRT2,
            (a[1][2] + a[2][1]) / SQRT2,
        ])
    }

    pub fn dot(&self, rhs: &TracelessSym3) -> f64 {
        self.0.iter().zip(rhs.0.iter()).map(|(a, b)| a * b).sum()
    }

    /// `|Q|^2 = tr(Q^2)`.
    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `tr(Q^3)`.
    pub fn trace_cube(&self) -> f64 {
        let m = self.to_matrix();
        m.matmul(&m).ddot(&m)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Drop the trace and antisymmetric part of `m`.
pub fn project_traceless_sym(m: &Mat3) -> TracelessSym3 {
    TracelessSym3::from_matrix(m)
}

impl Add for TracelessSym3 {
    type Output = TracelessSym3;
    fn add(self, rhs: Self) -> Self {
        let mut out = self;
        out += rhs;
        out
    }
}

impl AddAssign for TracelessSym3 {
    fn add_assign(&mut self, rhs: Self) {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a += b;
        }
    }
}

impl Sub for TracelessSym3 {
    type Output = TracelessSym3;
    fn sub(self, rhs: Self) -> Self {
        let mut out = self;
        out -= rhs;
        out
    }
}

impl SubAssign for TracelessSym3 {
    fn sub_assign(&mut self, rhs: Self) {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a -= b;
        }
    }
}

impl Mul<f64> for TracelessSym3 {
    type Output = TracelessSym3;
    fn mul(self, s: f64) -> Self {
        TracelessSym3(self.0.map(|v| v * s))
    }
}

impl Neg for TracelessSym3 {
    type Output = TracelessSym3;
    fn neg(self) -> Self {
        self * -1.0
    }
}

/// Spatial gradient of a Q field: slot `i` holds `d Q / d x_i`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradQ(pub [TracelessSym3; 3]);

impl GradQ {
    pub const ZERO: GradQ = GradQ([TracelessSym3::ZERO; 3]);

    /// `|grad Q|^2 = sum_i |d_i Q|^2`.
    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(TracelessSym3::norm_sq).sum()
    }

    /// `(grad Q (.) grad Q)_ij = d_j Q_ab d_i Q_ab`.
    pub fn odot(&self) -> Mat3 {
        Mat3::from_fn(|i, j| self.0[j].dot(&self.0[i]))
    }

    /// `sum_j v_j d_j Q`, the transport derivative along `v`.
    pub fn directional(&self, v: &[f64; 3]) -> TracelessSym3 {
        self.0[0] * v[0] + self.0[1] * v[1] + self.0[2] * v[2]
    }
}

/// Physical parameters of the model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BulkParams {
    /// Elastic constant `L > 0`.
    pub elastic: f64,
    /// Fluid viscosity `mu > 0`.
    pub viscosity: f64,
    /// Relaxation rate `Gamma > 0`.
    pub relaxation: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Tumbling parameter `xi`.
    pub tumbling: f64,
    /// Hyperviscosity `eps >= 0`.
    #[serde(default)]
    pub hyperviscosity: f64,
}

impl BulkParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        elastic: f64,
        viscosity: f64,
        relaxation: f64,
        a: f64,
        b: f64,
        c: f64,
        tumbling: f64,
        hyperviscosity: f64,
    ) -> Result<Self, ParamError> {
        let p = BulkParams { elastic, viscosity, relaxation, a, b, c, tumbling, hyperviscosity };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        let all = [
            self.elastic,
            self.viscosity,
            self.relaxation,
            self.a,
            self.b,
            self.c,
            self.tumbling,
            self.hyperviscosity,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(ParamError::NonFinite);
        }
        if self.elastic <= 0.0 {
            return Err(ParamError::NonPositive("elastic"));
        }
        if self.viscosity <= 0.0 {
            return Err(ParamError::NonPositive("viscosity"));
        }
        if self.relaxation <= 0.0 {
            return Err(ParamError::NonPositive("relaxation"));
        }
        if self.hyperviscosity < 0.0 {
            return Err(ParamError::Negative("hyperviscosity"));
        }
        Ok(())
    }

    /// The quartic coefficient is positive.
    pub fn is_stable(&self) -> bool {
        self.c > 0.0
    }

    pub fn with_tumbling(mut self, xi: f64) -> Self {
        self.tumbling = xi;
        self
    }

    pub fn with_hyperviscosity(mut self, eps: f64) -> Self {
        self.hyperviscosity = eps;
        self
    }
}

/// `B(Q) = b (Q^2 - tr(Q^2)/3 I) - c Q tr(Q^2)`.
pub fn bulk_force(q: &TracelessSym3, p: &BulkParams) -> TracelessSym3 {
    let m = q.to_matrix();
    let m2 = m.matmul(&m);
    let tr2 = m2.trace();
    // the trace of b Q^2 is removed by the projection
    project_traceless_sym(&(m2 * p.b - m * (p.c * tr2)))
}

/// `H = L lap(Q) - a Q + B(Q)`.
pub fn molecular_field(q: &TracelessSym3, lap_q: &TracelessSym3, p: &BulkParams) -> TracelessSym3 {
    *lap_q * p.elastic - *q * p.a + bulk_force(q, p)
}

/// Relative tolerance on `|tr grad_u|` accepted by [`stretching`].
pub const DIVERGENCE_TOLERANCE: f64 = 1e-8;

/// Stretching term
/// `S = xi D G + xi G D - 2 xi G tr(Q grad_u) + Omega Q - Q Omega`, `G = Q + I/3`.
///
/// Fails when `grad_u` is not trace free to [`DIVERGENCE_TOLERANCE`].
pub fn stretching(grad_u: &Mat3, q: &TracelessSym3, xi: f64) -> Result<TracelessSym3, ParamError> {
    let tr = grad_u.trace();
    if !(tr.abs() <= DIVERGENCE_TOLERANCE * (1.0 + grad_u.norm())) {
        return Err(ParamError::Divergence(tr));
    }
    Ok(stretching_unchecked(grad_u, q, xi))
}

/// [`stretching`] without the divergence check, for inner loops whose
/// velocity is already projected.
pub fn stretching_unchecked(grad_u: &Mat3, q: &TracelessSym3, xi: f64) -> TracelessSym3 {
    let qm = q.to_matrix();
    let d = grad_u.sym();
    let w = grad_u.skew();
    let g = qm + Mat3::IDENTITY * (1.0 / 3.0);
    let tr_qgu = qm.ddot(&grad_u.transpose());
    let xi_part = (d.matmul(&g) + g.matmul(&d)) * xi - g * (2.0 * xi * tr_qgu);
    let rot = w.matmul(&qm) - qm.matmul(&w);
    project_traceless_sym(&(xi_part + rot))
}

/// Symmetric stress
/// `tau = -xi G H - xi H G + 2 xi G tr(Q H) - L grad Q (.) grad Q`.
pub fn stress_tau(q: &TracelessSym3, h: &TracelessSym3, grad_q: &GradQ, p: &BulkParams) -> Mat3 {
    let qm = q.to_matrix();
    let hm = h.to_matrix();
    let g = qm + Mat3::IDENTITY * (1.0 / 3.0);
    let xi = p.tumbling;
    let tr_qh = q.dot(h);
    (g.matmul(&hm) + hm.matmul(&g)) * (-xi) + g * (2.0 * xi * tr_qh) - grad_q.odot() * p.elastic
}

/// Antisymmetric stress `sigma = Q H - H Q`.
pub fn stress_sigma(q: &TracelessSym3, h: &TracelessSym3) -> Mat3 {
    let qm = q.to_matrix();
    let hm = h.to_matrix();
    qm.matmul(&hm) - hm.matmul(&qm)
}

/// The three power terms whose sum vanishes identically:
/// `(tau + sigma) : grad_u`, `H : S(grad_u, Q)` and `L (grad Q (.) grad Q) : grad_u`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CancellationTerms {
    pub stress_power: f64,
    pub stretching_power: f64,
    pub elastic_power: f64,
}

impl CancellationTerms {
    pub fn residual(&self) -> f64 {
        self.stress_power + self.stretching_power + self.elastic_power
    }

    pub fn magnitude(&self) -> f64 {
        self.stress_power.abs() + self.stretching_power.abs() + self.elastic_power.abs()
    }

    /// Residual relative to the sum of term magnitudes (0 when all vanish).
    pub fn relative_residual(&self) -> f64 {
        let m = self.magnitude();
        if m == 0.0 {
            0.0
        } else {
            self.residual().abs() / m
        }
    }
}

pub fn cancellation_terms(
    q: &TracelessSym3,
    h: &TracelessSym3,
    grad_u: &Mat3,
    grad_q: &GradQ,
    p: &BulkParams,
) -> Result<CancellationTerms, ParamError> {
    let s = stretching(grad_u, q, p.tumbling)?;
    let stress = stress_tau(q, h, grad_q, p) + stress_sigma(q, h);
    Ok(CancellationTerms {
        stress_power: stress.ddot(grad_u),
        stretching_power: h.dot(&s),
        elastic_power: p.elastic * grad_q.odot().ddot(grad_u),
    })
}

/// `(tau + sigma) : grad_u + H : S + L (grad Q (.) grad Q) : grad_u`, which is
/// zero up to rounding for admissible inputs.
pub fn cancellation_residual(
    q: &TracelessSym3,
    h: &TracelessSym3,
    grad_u: &Mat3,
    grad_q: &GradQ,
    p: &BulkParams,
) -> Result<f64, ParamError> {
    cancellation_terms(q, h, grad_u, grad_q, p).map(|t| t.residual())
}

/// Bulk part `a/2 |Q|^2 - b/3 tr(Q^3) + c/4 |Q|^4` of the free-energy density.
pub fn bulk_energy_density(q: &TracelessSym3, p: &BulkParams) -> f64 {
    let n2 = q.norm_sq();
    0.5 * p.a * n2 - p.b / 3.0 * q.trace_cube() + 0.25 * p.c * n2 * n2
}

/// Free-energy density `L/2 |grad Q|^2 + a/2 |Q|^2 - b/3 tr(Q^3) + c/4 |Q|^4`.
pub fn energy_density(q: &TracelessSym3, grad_q: &GradQ, p: &BulkParams) -> f64 {
    0.5 * p.elastic * grad_q.norm_sq() + bulk_energy_density(q, p)
}

/// Constants of the pointwise lower bound
/// `a/2|Q|^2 - b/3 tr(Q^3) + c/4|Q|^4 >= -c_abc |Q|^2 + c0 |Q|^4`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoercivityConstants {
    pub c_abc: f64,
    pub c0: f64,
}

impl CoercivityConstants {
    /// Lower bound value for a tensor of norm `|Q| = s`.
    pub fn lower_bound(&self, s: f64) -> f64 {
        -self.c_abc * s * s + self.c0 * s.powi(4)
    }
}

/// Uses `|tr(Q^3)| <= |Q|^3 / sqrt6` and Young's inequality with `c0 = c/8`,
/// `C = |a|/2 + 2 b^2 / (3c)`.
pub fn coercivity_constants(p: &BulkParams) -> Result<CoercivityConstants, ParamError> {
    if !(p.c > 0.0) {
        return Err(ParamError::Unstable(p.c));
    }
    Ok(CoercivityConstants {
        c_abc: 0.5 * p.a.abs() + 2.0 * p.b * p.b / (3.0 * p.c),
        c0: p.c / 8.0,
    })
}

/// `g(Q) = (1-a)/2 |Q|^2 + b/3 tr(Q^3) - c/4 |Q|^4` and its gradient
/// `A(Q) = (1-a) Q + B(Q)` within the traceless class.
pub fn low_order_potential_and_force(q: &TracelessSym3, p: &BulkParams) -> (f64, TracelessSym3) {
    let n2 = q.norm_sq();
    let g = 0.5 * (1.0 - p.a) * n2 + p.b / 3.0 * q.trace_cube() - 0.25 * p.c * n2 * n2;
    let a = *q * (1.0 - p.a) + bulk_force(q, p);
    (g, a)
}
