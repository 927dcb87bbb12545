//! Energies, variances, 2-RDMs and the contracted-equation residuals.
//!
//! Tensor convention: `X[i,j,k,l] = <bra| a+_i a+_j a_l a_k |ket>`. Residual
//! norms are Frobenius over all four indices, antisymmetric images included.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CqeError, Result};
use crate::fock::{same_basis, SparseOperator, StateVector, TwoBodyTensor, C64, ZERO};

const NORM_TOL: f64 = 1e-10;

/// Which contracted residual drives the solver.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Cse,
    Hcse,
    Acse,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Cse, Variant::Hcse, Variant::Acse];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Cse => "cse",
            Variant::Hcse => "hcse",
            Variant::Acse => "acse",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = CqeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cse" => Ok(Variant::Cse),
            "hcse" => Ok(Variant::Hcse),
            "acse" => Ok(Variant::Acse),
            other => Err(CqeError::InvalidConfig(format!("unknown variant '{other}'"))),
        }
    }
}

fn check_state(psi: &StateVector, h: &SparseOperator) -> Result<()> {
    if !same_basis(&psi.basis, h.basis()) {
        return Err(CqeError::BasisMismatch);
    }
    psi.require_undilated()?;
    if !psi.is_normalized(NORM_TOL) {
        return Err(CqeError::NotNormalized(psi.norm_sqr()));
    }
    Ok(())
}

/// `<psi|H|psi>`
pub fn energy(psi: &StateVector, h: &SparseOperator) -> Result<f64> {
    check_state(psi, h)?;
    let hpsi = h.matvec(&psi.amplitudes);
    let e: C64 = psi.amplitudes.iter().zip(&hpsi).map(|(a, b)| a.conj() * b).sum();
    debug_assert!(!h.is_flagged_hermitian() || e.im.abs() < 1e-10);
    Ok(e.re)
}

/// `(H - E) psi` with `E = <psi|H|psi>`.
fn shifted_image(psi: &StateVector, h: &SparseOperator, e: f64) -> Vec<C64> {
    let mut phi = h.matvec(&psi.amplitudes);
    phi.iter_mut()
        .zip(&psi.amplitudes)
        .for_each(|(p, a)| *p -= a * e);
    phi
}

/// `<psi|(H - E)^2|psi>`
pub fn variance(psi: &StateVector, h: &SparseOperator) -> Result<f64> {
    let e = energy(psi, h)?;
    let phi = shifted_image(psi, h, e);
    Ok(phi.iter().map(|z| z.norm_sqr()).sum())
}

/// `X[i,j,k,l] = <bra| a+_i a+_j a_l a_k |ket>` over a shared basis, where
/// `ket` may be any (unnormalized) amplitude vector.
pub fn transition_2rdm(bra: &StateVector, ket: &[C64]) -> Result<TwoBodyTensor> {
    bra.require_undilated()?;
    let basis = &bra.basis;
    if ket.len() != basis.dim() {
        return Err(CqeError::DimensionMismatch(format!(
            "ket of length {} for basis of dimension {}",
            ket.len(),
            basis.dim()
        )));
    }
    let n = basis.n_spin_orbitals;
    let mut x = TwoBodyTensor::zeros(n);
    for (col, &det) in basis.dets.iter().enumerate() {
        let c = ket[col];
        if c == ZERO {
            continue;
        }
        let occ: Vec<usize> = det.occupied().collect();
        for (a, &k) in occ.iter().enumerate() {
            let (d1, s1) = det.annihilate(k).unwrap();
            for &l in &occ[a + 1..] {
                let (d2, s2) = d1.annihilate(l).unwrap();
                for j in 0..n {
                    let Some((d3, s3)) = d2.create(j) else { continue };
                    for i in 0..j {
                        let Some((d4, s4)) = d3.create(i) else { continue };
                        if let Some(row) = basis.index_of(d4) {
                            x[(i, j, k, l)] += bra.amplitudes[row].conj() * c * (s1 * s2 * s3 * s4);
                        }
                    }
                }
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            for k in 0..n {
                for l in k + 1..n {
                    let v = x[(j, i, k, l)];
                    x[(i, j, k, l)] = -v;
                    x[(j, i, l, k)] = -v;
                    x[(i, j, l, k)] = v;
                }
            }
        }
    }
    Ok(x)
}

/// Two-particle reduced density matrix `D[i,j,k,l] = <a+_i a+_j a_l a_k>`.
#[derive(Clone, Debug)]
pub struct Rdm2 {
    pub elements: TwoBodyTensor,
}

impl Rdm2 {
    pub fn trace(&self) -> C64 {
        let n = self.elements.n_orbitals();
        let mut t = ZERO;
        for i in 0..n {
            for j in 0..n {
                t += self.elements[(i, j, i, j)];
            }
        }
        t
    }

    pub fn hermitian_defect(&self) -> f64 {
        self.elements.max_abs_diff(&self.elements.adjoint())
    }

    pub fn antisymmetry_defect(&self) -> f64 {
        self.elements.antisymmetry_defect()
    }

    /// Lowest eigenvalue of `D` as a matrix over ordered pairs `i < j`.
    pub fn min_pair_eigenvalue(&self) -> f64 {
        let n = self.elements.n_orbitals();
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|j| (0..j).map(move |i| (i, j)))
            .collect();
        let m = DMatrix::from_fn(pairs.len(), pairs.len(), |r, c| {
            let (i, j) = pairs[r];
            let (k, l) = pairs[c];
            self.elements[(i, j, k, l)]
        });
        let m = (&m + m.adjoint()).scale(0.5);
        m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn compute_2rdm(psi: &StateVector) -> Result<Rdm2> {
    psi.require_undilated()?;
    if !psi.is_normalized(NORM_TOL) {
        return Err(CqeError::NotNormalized(psi.norm_sqr()));
    }
    Ok(Rdm2 {
        elements: transition_2rdm(psi, &psi.amplitudes)?,
    })
}

/// `R[i,j,k,l] = <psi| a+_i a+_j a_l a_k (H - E) |psi>`
pub fn residual_cse(psi: &StateVector, h: &SparseOperator, e: f64) -> Result<TwoBodyTensor> {
    check_state(psi, h)?;
    transition_2rdm(psi, &shifted_image(psi, h, e))
}

/// `S = <{a+a+aa, H - E}> = R + R^dagger`
pub fn residual_hcse(psi: &StateVector, h: &SparseOperator, e: f64) -> Result<TwoBodyTensor> {
    let r = residual_cse(psi, h, e)?;
    Ok(&r + &r.adjoint())
}

/// `A = <[a+a+aa, H]> = R - R^dagger`
pub fn residual_acse(psi: &StateVector, h: &SparseOperator) -> Result<TwoBodyTensor> {
    let e = energy(psi, h)?;
    let r = residual_cse(psi, h, e)?;
    Ok(&r - &r.adjoint())
}

/// All three residuals of one state, sharing a single `(H - E) psi`.
#[derive(Clone, Debug)]
pub struct Residuals {
    pub energy: f64,
    pub r: TwoBodyTensor,
    pub s: TwoBodyTensor,
    pub a: TwoBodyTensor,
}

impl Residuals {
    pub fn compute(psi: &StateVector, h: &SparseOperator) -> Result<Self> {
        let energy = energy(psi, h)?;
        let r = residual_cse(psi, h, energy)?;
        let adj = r.adjoint();
        Ok(Residuals {
            energy,
            s: &r + &adj,
            a: &r - &adj,
            r,
        })
    }

    pub fn get(&self, variant: Variant) -> &TwoBodyTensor {
        match variant {
            Variant::Cse => &self.r,
            Variant::Hcse => &self.s,
            Variant::Acse => &self.a,
        }
    }
}
