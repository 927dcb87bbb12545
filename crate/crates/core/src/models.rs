//! Three-level pairing model and its unit-sphere picture.
//!
//! Four spatial orbitals form two pair sites, (0, 1) and (2, 3), each holding
//! one electron pair. With occupation strings over spatial orbitals the
//! model states are `|0> = |1010>`, `|1> = |1001>`, `|2> = |0110>` and
//! `|3> = |0101>`. Pair hops within a site connect `|0>` to `|1>, |2>` and
//! those to `|3>`; `|0>` and `|3>` differ by two pair moves and are never
//! coupled directly.
//!
//! Sphere coordinates `(x, y, z)` are amplitudes on `|0>`,
//! `|+> = (|1> + |2>)/sqrt 2` and `|3>`. Anti-Hermitian two-body rotations
//! of a sphere state turn it about the axis `n = (1, 0, 1)/sqrt 2`, so the
//! latitude `asin(n . r)` is conserved under the anti-Hermitian flow and its
//! fixed points are the energy extrema along each latitude circle.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CqeError, Result};
use crate::fock::{two_body_to_operator, Basis, Determinant, SparseOperator, StateVector, TwoBodyTensor, C64};

const SPHERE_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairingModel {
    pub e0: f64,
    pub e1: f64,
    pub e3: f64,
    pub t: f64,
}

impl Default for PairingModel {
    fn default() -> Self {
        PairingModel {
            e0: 0.0,
            e1: 1.0,
            e3: 2.0,
            t: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpherePoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl SpherePoint {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (x * x + y * y + z * z).sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(CqeError::InvalidConfig("sphere point must be nonzero".into()));
        }
        Ok(SpherePoint {
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    pub fn dot(&self, other: &SpherePoint) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Angle above the plane orthogonal to `(1, 0, 1)/sqrt 2`.
    pub fn latitude(&self) -> f64 {
        ((self.x + self.z) * std::f64::consts::FRAC_1_SQRT_2).clamp(-1.0, 1.0).asin()
    }
}

/// Pair sites and the spatial orbitals of the four model states.
const STATE_PAIRS: [[usize; 2]; 4] = [[0, 2], [0, 3], [1, 2], [1, 3]];

fn state_det(k: usize) -> Determinant {
    let [a, b] = STATE_PAIRS[k];
    Determinant::from_orbitals(&[2 * a, 2 * a + 1, 2 * b, 2 * b + 1])
}

pub fn pairing_basis() -> Result<Arc<Basis>> {
    Basis::build(8, 4, 0)
}

/// Add `c a+_p a+_q a_t a_s` to a tensor in operator convention.
fn add_term(t: &mut TwoBodyTensor, c: f64, p: usize, q: usize, tt: usize, s: usize) {
    t[(s, tt, p, q)] += C64::new(c, 0.0);
}

/// Two-body tensor realizing the model on the 4-electron sector:
/// `e0 + (e1 - e0)/2 (N_1 + N_3) + W N_1 N_3 + t sum (P+_hi P_lo + h.c.)`
/// with `W = (e3 - 2 e1 + e0)/4`. Constants and number operators are
/// embedded through `N(N - 1)` and `n_p = (N - 1)^-1 sum_r a+_p a+_r a_r a_p`.
pub fn pairing_tensor(m: &PairingModel) -> TwoBodyTensor {
    let nso = 8;
    let ne = 4.0;
    let mut t = TwoBodyTensor::zeros(nso);
    let constant = m.e0 / (ne * (ne - 1.0));
    let level = (m.e1 - m.e0) / 2.0 / (ne - 1.0);
    let w = (m.e3 - 2.0 * m.e1 + m.e0) / 4.0;
    for p in 0..nso {
        for q in 0..nso {
            if p == q {
                continue;
            }
            add_term(&mut t, constant, p, q, q, p);
            if p / 2 == 1 || p / 2 == 3 {
                add_term(&mut t, level, p, q, q, p);
            }
            if p / 2 == 1 && q / 2 == 3 {
                // n_p n_q for p != q, written twice to stay symmetric
                add_term(&mut t, w / 2.0, p, q, q, p);
                add_term(&mut t, w / 2.0, q, p, p, q);
            }
        }
    }
    for (lo, hi) in [(0, 1), (2, 3)] {
        // P+_hi P_lo = a+_{hi a} a+_{hi b} a_{lo b} a_{lo a}
        add_term(&mut t, m.t, 2 * hi, 2 * hi + 1, 2 * lo + 1, 2 * lo);
        add_term(&mut t, m.t, 2 * lo, 2 * lo + 1, 2 * hi + 1, 2 * hi);
    }
    t.antisymmetrized()
}

/// Sector Hamiltonian of the model on 8 spin orbitals with 4 electrons.
pub fn build_pairing_hamiltonian(m: &PairingModel) -> Result<(SparseOperator, Arc<Basis>)> {
    let basis = pairing_basis()?;
    let h = two_body_to_operator(&pairing_tensor(m), &basis)?.into_hermitian()?;
    Ok((h, basis))
}

/// Model state `|k>`, `k` in 0..4.
pub fn level_state(basis: &Arc<Basis>, k: usize) -> Result<StateVector> {
    StateVector::from_determinant(basis.clone(), state_det(k))
}

pub fn sphere_state(basis: &Arc<Basis>, p: &SpherePoint) -> Result<StateVector> {
    let mut psi = StateVector::zeros(basis.clone());
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let coeffs = [p.x, p.y * s, p.y * s, p.z];
    for (k, c) in coeffs.iter().enumerate() {
        let idx = basis
            .index_of(state_det(k))
            .ok_or_else(|| CqeError::InvalidSector("basis lacks the model states".into()))?;
        psi.amplitudes[idx] = C64::new(*c, 0.0);
    }
    psi.normalize();
    Ok(psi)
}

/// Sphere coordinates of `psi`. The global phase is fixed by making the
/// largest of the three amplitudes real and positive.
pub fn to_sphere(psi: &StateVector) -> Result<SpherePoint> {
    psi.require_undilated()?;
    let basis = &psi.basis;
    let amp = |k: usize| -> Result<C64> {
        basis
            .index_of(state_det(k))
            .map(|i| psi.amplitudes[i])
            .ok_or_else(|| CqeError::InvalidSector("basis lacks the model states".into()))
    };
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let c = [amp(0)?, (amp(1)? + amp(2)?) * s, amp(3)?];
    let inside: f64 = c.iter().map(|z| z.norm_sqr()).sum();
    let leak = (psi.norm_sqr() - inside).max(0.0) / psi.norm_sqr();
    if leak > SPHERE_TOL {
        return Err(CqeError::OffSphere(leak));
    }
    let mut best = 0;
    for k in 1..3 {
        if c[k].norm() > c[best].norm() + 1e-14 {
            best = k;
        }
    }
    let phase = c[best].conj() / c[best].norm();
    let r: Vec<f64> = c.iter().map(|z| (z * phase).re).collect();
    SpherePoint::new(r[0], r[1], r[2])
}

/// Point `(cos theta, 0, sin theta)`.
pub fn great_circle_point(theta: f64) -> SpherePoint {
    SpherePoint {
        x: theta.cos(),
        y: 0.0,
        z: theta.sin(),
    }
}

/// Energy of a sphere point from the 3x3 subspace matrix.
fn sphere_energy(m: &PairingModel, p: [f64; 3]) -> f64 {
    let c = std::f64::consts::SQRT_2 * m.t;
    m.e0 * p[0] * p[0] + m.e1 * p[1] * p[1] + m.e3 * p[2] * p[2] + 2.0 * c * p[1] * (p[0] + p[2])
}

fn latitude_point(lat: f64, phi: f64) -> [f64; 3] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let (sl, cl) = lat.sin_cos();
    let (sp, cp) = phi.sin_cos();
    // n = (1, 0, 1)/sqrt 2, u = (1, 0, -1)/sqrt 2, v = (0, 1, 0)
    [sl * s + cl * cp * s, cl * sp, sl * s - cl * cp * s]
}

/// Lowest-energy point on the latitude circle at `lat`, which is a fixed
/// point of the anti-Hermitian flow.
pub fn latitude_minimizer(m: &PairingModel, lat: f64) -> SpherePoint {
    let e = |phi: f64| sphere_energy(m, latitude_point(lat, phi));
    let n = 720;
    let step = std::f64::consts::TAU / n as f64;
    let mut phi = (0..n)
        .map(|k| k as f64 * step)
        .min_by(|a, b| e(*a).total_cmp(&e(*b)))
        .unwrap();
    let h = 1e-4;
    for _ in 0..50 {
        let d1 = (e(phi + h) - e(phi - h)) / (2.0 * h);
        let d2 = (e(phi + h) - 2.0 * e(phi) + e(phi - h)) / (h * h);
        if d2 <= 0.0 {
            break;
        }
        let dphi = -d1 / d2;
        phi += dphi;
        if dphi.abs() < 1e-15 {
            break;
        }
    }
    // exact stationarity: polish with the analytic derivative
    let de = |phi: f64| {
        let p = latitude_point(lat, phi);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let (sp, cp) = phi.sin_cos();
        let cl = lat.cos();
        let dp = [-cl * sp * s, cl * cp, cl * sp * s];
        let c = std::f64::consts::SQRT_2 * m.t;
        2.0 * (m.e0 * p[0] * dp[0] + m.e1 * p[1] * dp[1] + m.e3 * p[2] * dp[2])
            + 2.0 * c * (dp[1] * (p[0] + p[2]) + p[1] * (dp[0] + dp[2]))
    };
    for _ in 0..20 {
        let g = de(phi);
        let g2 = (de(phi + 1e-6) - de(phi - 1e-6)) / 2e-6;
        if g2 == 0.0 {
            break;
        }
        let dphi = -g / g2;
        phi += dphi;
        if dphi.abs() < 1e-16 {
            break;
        }
    }
    let p = latitude_point(lat, phi);
    SpherePoint {
        x: p[0],
        y: p[1],
        z: p[2],
    }
}

/// `n` spurious-solution starts: the energy minimizers on latitude circles
/// at `(pi/2)(k + 1/2)/n`, `k = 0..n`. These have vanishing anti-Hermitian
/// residual but, away from the ground state's latitude, are not eigenstates.
pub fn equator_states(m: &PairingModel, n: usize) -> Result<Vec<StateVector>> {
    if n == 0 {
        return Err(CqeError::InvalidConfig("need at least one equator state".into()));
    }
    let basis = pairing_basis()?;
    (0..n)
        .map(|k| {
            let lat = std::f64::consts::FRAC_PI_2 * (k as f64 + 0.5) / n as f64;
            sphere_state(&basis, &latitude_minimizer(m, lat))
        })
        .collect()
}

/// Uniformly distributed sphere point.
pub fn random_sphere_point<R: Rng + ?Sized>(rng: &mut R) -> SpherePoint {
    loop {
        let v: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        if let Ok(p) = SpherePoint::new(v[0], v[1], v[2]) {
            return p;
        }
    }
}
