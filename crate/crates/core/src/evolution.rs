//! Two-body exponential transformations on statevectors: exact action,
//! single-ancilla dilation of non-unitary steps, and the auxiliary-state
//! residual estimator in exact and shot-sampled form.
//!
//! Dilated vectors are laid out as `[ancilla |0>; ancilla |1>]`. The gadget
//! `exp(i d Y (x) J)` equals `[[cos dJ, sin dJ], [-sin dJ, cos dJ]]`, so starting
//! from `[psi; psi]/sqrt 2` branch 0 carries `(cos dJ + sin dJ) psi`, which is
//! `exp(dJ) psi` up to `O(d^2)`.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{CqeError, Result};
use crate::fock::{
    same_basis, two_body_to_operator, SparseOperator, StateVector, TwoBodyTensor, C64, ONE, ZERO,
};
use crate::residuals::{transition_2rdm, Variant};

const TAYLOR_TOL: f64 = 1e-13;
const HERMITIAN_TOL: f64 = 1e-12;

/// When the dilation ancilla is measured and the state re-dilated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetMode {
    Never,
    Wolfe,
    EveryK,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DilationPolicy {
    pub epsilon: f64,
    pub reset_mode: ResetMode,
    pub wolfe_c1: f64,
    pub max_steps_between_resets: usize,
}

impl Default for DilationPolicy {
    fn default() -> Self {
        DilationPolicy {
            epsilon: 0.5,
            reset_mode: ResetMode::Wolfe,
            wolfe_c1: 1e-4,
            max_steps_between_resets: 10,
        }
    }
}

impl DilationPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(CqeError::InvalidConfig("dilation epsilon must be positive".into()));
        }
        if !(self.wolfe_c1 > 0.0 && self.wolfe_c1 < 1.0) {
            return Err(CqeError::InvalidConfig("wolfe_c1 must lie in (0, 1)".into()));
        }
        if self.max_steps_between_resets == 0 {
            return Err(CqeError::InvalidConfig("max_steps_between_resets must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub delta: f64,
    /// `None` evaluates the auxiliary-state expectation exactly.
    pub shots: Option<u64>,
    pub seed: Option<u64>,
}

impl EstimatorConfig {
    pub fn exact(delta: f64) -> Self {
        EstimatorConfig {
            delta,
            shots: None,
            seed: None,
        }
    }

    pub fn sampled(delta: f64, shots: u64, seed: u64) -> Self {
        EstimatorConfig {
            delta,
            shots: Some(shots),
            seed: Some(seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta.is_finite() && self.delta != 0.0) {
            return Err(CqeError::InvalidConfig("estimator delta must be nonzero".into()));
        }
        match (self.shots, self.seed) {
            (Some(0), _) => Err(CqeError::InvalidConfig("shots must be >= 1".into())),
            (Some(_), None) => Err(CqeError::MissingSeed),
            _ => Ok(()),
        }
    }
}

/// Hermitian and anti-Hermitian parts under the pair-matrix adjoint.
pub fn split_tensor(j: &TwoBodyTensor) -> (TwoBodyTensor, TwoBodyTensor) {
    (j.hermitian_part(), j.antihermitian_part())
}

fn vnorm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `exp(M) v` by a scaled Taylor series, where `apply(x, out)` writes `M x`
/// and `norm_bound` bounds `||M||`.
pub(crate) fn expm_action<F>(mut apply: F, norm_bound: f64, v: &[C64]) -> Result<Vec<C64>>
where
    F: FnMut(&[C64], &mut [C64]),
{
    if !norm_bound.is_finite() {
        return Err(CqeError::ExpmNonConvergence(f64::INFINITY));
    }
    let steps = (2.0 * norm_bound).ceil().max(1.0) as usize;
    let inv = 1.0 / steps as f64;
    let mut out = v.to_vec();
    let mut term = vec![ZERO; v.len()];
    let mut next = vec![ZERO; v.len()];
    for _ in 0..steps {
        term.copy_from_slice(&out);
        let mut converged = false;
        let mut last = 0.0;
        for k in 1..=60 {
            apply(&term, &mut next);
            let f = inv / k as f64;
            next.iter_mut().for_each(|z| *z *= f);
            std::mem::swap(&mut term, &mut next);
            out.iter_mut().zip(&term).for_each(|(o, t)| *o += t);
            last = vnorm(&term);
            if last <= 1e-17 * vnorm(&out).max(1e-300) {
                converged = true;
                break;
            }
        }
        if !converged && last > TAYLOR_TOL * vnorm(&out) {
            return Err(CqeError::ExpmNonConvergence(last));
        }
    }
    Ok(out)
}

/// `exp(scale * op) psi`, unnormalized, as a raw amplitude vector.
pub fn exp_operator_action(op: &SparseOperator, scale: C64, amplitudes: &[C64]) -> Result<Vec<C64>> {
    let bound = op.one_norm() * scale.norm();
    if bound == 0.0 {
        return Ok(amplitudes.to_vec());
    }
    expm_action(
        |x, y| {
            op.matvec_into(x, y);
            y.iter_mut().for_each(|z| *z *= scale);
        },
        bound,
        amplitudes,
    )
}

fn is_antihermitian(j: &TwoBodyTensor) -> bool {
    j.max_abs_diff(&-j.adjoint()) <= 1e-14 * j.frobenius_norm().max(1.0)
}

/// `exp(op(J)) psi`. With `renormalize` the result is normalized and, for
/// non-unitary steps, `success_prob` is scaled by `min(1, |out|^2/|psi|^2)`.
pub fn apply_exp_exact(j: &TwoBodyTensor, psi: &StateVector, renormalize: bool) -> Result<StateVector> {
    psi.require_undilated()?;
    let op = two_body_to_operator(j, &psi.basis)?;
    apply_exp_operator(&op, 1.0, is_antihermitian(j), psi, renormalize)
}

/// As [`apply_exp_exact`] with a pre-assembled operator and step `eta`.
pub fn apply_exp_operator(
    op: &SparseOperator,
    eta: f64,
    unitary: bool,
    psi: &StateVector,
    renormalize: bool,
) -> Result<StateVector> {
    psi.require_undilated()?;
    if !same_basis(op.basis(), &psi.basis) {
        return Err(CqeError::BasisMismatch);
    }
    let amplitudes = exp_operator_action(op, C64::new(eta, 0.0), &psi.amplitudes)?;
    let mut out = StateVector {
        basis: psi.basis.clone(),
        amplitudes,
        n_ancilla: 0,
        success_prob: psi.success_prob,
    };
    if renormalize {
        let old = psi.norm_sqr();
        let new = out.norm_sqr();
        out.normalize();
        if !unitary && old > 0.0 {
            out.success_prob *= (new / old).min(1.0);
        }
    }
    Ok(out)
}

/// `[psi; psi] / sqrt 2`
pub fn dilate(psi: &StateVector) -> Result<StateVector> {
    psi.require_undilated()?;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut amplitudes = Vec::with_capacity(2 * psi.dim());
    amplitudes.extend(psi.amplitudes.iter().map(|a| a * s));
    amplitudes.extend(psi.amplitudes.iter().map(|a| a * s));
    Ok(StateVector {
        basis: psi.basis.clone(),
        amplitudes,
        n_ancilla: 1,
        success_prob: psi.success_prob,
    })
}

/// `exp(i d Y (x) H)` on a dilated vector for Hermitian `h`: the generator
/// is `[[0, dH], [-dH, 0]]`.
fn apply_y_gadget(h: &SparseOperator, delta: f64, dilated: &[C64]) -> Result<Vec<C64>> {
    let dim = h.dim();
    expm_action(
        |x, y| {
            let (x0, x1) = x.split_at(dim);
            let (y0, y1) = y.split_at_mut(dim);
            h.matvec_into(x1, y0);
            h.matvec_into(x0, y1);
            y0.iter_mut().for_each(|z| *z *= delta);
            y1.iter_mut().for_each(|z| *z *= -delta);
        },
        h.one_norm() * delta.abs(),
        dilated,
    )
}

/// One dilated step `exp(i e Y (x) J_H)` with `e = policy.epsilon`. An
/// undilated `psi` is first dilated to `[psi; psi]/sqrt 2`; a dilated one is
/// evolved in place of a measurement.
pub fn apply_dilated(j_h: &TwoBodyTensor, psi: &StateVector, policy: &DilationPolicy) -> Result<StateVector> {
    policy.validate()?;
    let defect = j_h.max_abs_diff(&j_h.adjoint());
    if defect > HERMITIAN_TOL {
        return Err(CqeError::NotHermitian(defect));
    }
    let op = two_body_to_operator(j_h, &psi.basis)?;
    apply_dilated_operator(&op, policy.epsilon, psi)
}

/// As [`apply_dilated`] with a pre-assembled Hermitian operator and step.
pub fn apply_dilated_operator(op: &SparseOperator, delta: f64, psi: &StateVector) -> Result<StateVector> {
    if !same_basis(op.basis(), &psi.basis) {
        return Err(CqeError::BasisMismatch);
    }
    let start = if psi.n_ancilla == 0 { dilate(psi)? } else { psi.clone() };
    let amplitudes = apply_y_gadget(op, delta, &start.amplitudes)?;
    Ok(StateVector { amplitudes, ..start })
}

/// Measure the ancilla in `|0>`: keep branch 0, renormalize, and multiply
/// `success_prob` by the branch weight.
pub fn reset_ancilla(psi: &StateVector) -> Result<StateVector> {
    if psi.n_ancilla == 0 {
        return Ok(psi.clone());
    }
    let total = psi.norm_sqr();
    let mut out = StateVector {
        basis: psi.basis.clone(),
        amplitudes: psi.branch(0).to_vec(),
        n_ancilla: 0,
        success_prob: psi.success_prob,
    };
    let weight = out.norm_sqr() / total;
    out.normalize();
    out.success_prob *= weight;
    Ok(out)
}

/// Pauli word `X^x Z^z` over the spin-orbital qubits.
type Word = (u64, u64);

fn word_mul(a: (C64, Word), b: (C64, Word)) -> (C64, Word) {
    let (ca, (xa, za)) = a;
    let (cb, (xb, zb)) = b;
    let sign = if (za & xb).count_ones() % 2 == 1 { -1.0 } else { 1.0 };
    (ca * cb * sign, (xa ^ xb, za ^ zb))
}

/// Jordan-Wigner expansion of `a+_i a+_j a_l a_k` as a sum of Hermitian
/// words `P = i^{|x&z|} X^x Z^z` with complex coefficients.
fn string_words(i: usize, j: usize, k: usize, l: usize) -> Vec<(Word, C64)> {
    let ladder = |p: usize, create: bool| -> [(C64, Word); 2] {
        let e = 1u64 << p;
        let lt = e - 1;
        let s = if create { 0.5 } else { -0.5 };
        [(C64::new(0.5, 0.0), (e, lt)), (C64::new(s, 0.0), (e, lt | e))]
    };
    let factors = [ladder(i, true), ladder(j, true), ladder(l, false), ladder(k, false)];
    let mut terms: Vec<(C64, Word)> = vec![(ONE, (0, 0))];
    for f in factors {
        terms = terms
            .iter()
            .flat_map(|&t| f.iter().map(move |&g| word_mul(t, g)))
            .collect();
    }
    let mut combined: BTreeMap<Word, C64> = BTreeMap::new();
    for (c, (x, z)) in terms {
        // X^x Z^z = (-i)^m P
        let m = (x & z).count_ones() % 4;
        let phase = [ONE, C64::new(0.0, -1.0), -ONE, C64::new(0.0, 1.0)][m as usize];
        *combined.entry((x, z)).or_insert(ZERO) += c * phase;
    }
    combined.into_iter().filter(|(_, c)| c.norm() > 1e-15).collect()
}

/// `<v|Z_a (x) P|v>` for a dilated vector `v`.
fn word_expectation(psi: &StateVector, (x, z): Word) -> f64 {
    let basis = &psi.basis;
    let dim = basis.dim();
    let m = (x & z).count_ones() % 4;
    let phase = [ONE, C64::new(0.0, 1.0), -ONE, C64::new(0.0, -1.0)][m as usize];
    let mut acc = ZERO;
    for (col, det) in basis.dets.iter().enumerate() {
        let Some(row) = basis.index_of(crate::fock::Determinant(det.0 ^ x)) else { continue };
        let sign = if (z & det.0).count_ones() % 2 == 1 { -1.0 } else { 1.0 };
        let b0 = psi.amplitudes[row].conj() * psi.amplitudes[col];
        let b1 = psi.amplitudes[dim + row].conj() * psi.amplitudes[dim + col];
        acc += (b0 - b1) * sign;
    }
    (acc * phase).re
}

/// Estimated residual and per-element standard errors (zero in exact mode).
#[derive(Clone, Debug)]
pub struct WEstimate {
    pub value: TwoBodyTensor,
    pub sigma: TwoBodyTensor,
}

#[derive(Clone, Copy, PartialEq)]
enum Channel {
    /// `exp(i d Y (x) (H - E))`, yields `S`.
    Hermitian,
    /// `exp(i d Z (x) (H - E))`, yields `i A`.
    AntiHermitian,
}

fn auxiliary_state(psi: &StateVector, h_shift: &SparseOperator, delta: f64, channel: Channel) -> Result<StateVector> {
    let amplitudes = match channel {
        Channel::Hermitian => apply_y_gadget(h_shift, delta, &dilate(psi)?.amplitudes)?,
        Channel::AntiHermitian => {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            let mut a = exp_operator_action(h_shift, C64::new(0.0, delta), &psi.amplitudes)?;
            a.extend(exp_operator_action(h_shift, C64::new(0.0, -delta), &psi.amplitudes)?);
            a.iter_mut().for_each(|z| *z *= s);
            a
        }
    };
    Ok(StateVector {
        basis: psi.basis.clone(),
        amplitudes,
        n_ancilla: 1,
        success_prob: psi.success_prob,
    })
}

/// `<v| Z_a (x) a+_i a+_j a_l a_k |v>` for all indices, exactly.
fn exact_channel(aux: &StateVector) -> Result<TwoBodyTensor> {
    let dim = aux.basis.dim();
    let branch = |b: usize| StateVector {
        basis: aux.basis.clone(),
        amplitudes: aux.amplitudes[b * dim..(b + 1) * dim].to_vec(),
        n_ancilla: 0,
        success_prob: 1.0,
    };
    let b0 = branch(0);
    let b1 = branch(1);
    let t0 = transition_2rdm(&b0, &b0.amplitudes)?;
    let t1 = transition_2rdm(&b1, &b1.amplitudes)?;
    Ok(&t0 - &t1)
}

/// Shot-sampled version of [`exact_channel`]: every distinct word is
/// measured once with `shots` shots, in word order, from `rng`.
fn sampled_channel(aux: &StateVector, shots: u64, rng: &mut ChaCha8Rng) -> Result<(TwoBodyTensor, TwoBodyTensor)> {
    let n = aux.basis.n_spin_orbitals;
    let mut elements: Vec<((usize, usize, usize, usize), Vec<(Word, C64)>)> = Vec::new();
    let mut words: BTreeMap<Word, (f64, f64)> = BTreeMap::new();
    for i in 0..n {
        for j in i + 1..n {
            for k in 0..n {
                for l in k + 1..n {
                    let ws = string_words(i, j, k, l);
                    for (w, _) in &ws {
                        words.entry(*w).or_insert((0.0, 0.0));
                    }
                    elements.push(((i, j, k, l), ws));
                }
            }
        }
    }
    for (w, slot) in words.iter_mut() {
        let exact = word_expectation(aux, *w).clamp(-1.0, 1.0);
        // words that leave the sector have identically zero expectation
        let leaves = aux
            .basis
            .dets
            .iter()
            .all(|d| aux.basis.index_of(crate::fock::Determinant(d.0 ^ w.0)).is_none());
        if leaves {
            *slot = (0.0, 0.0);
            continue;
        }
        let p = (1.0 + exact) / 2.0;
        let k = Binomial::new(shots, p)
            .map_err(|e| CqeError::InvalidConfig(e.to_string()))?
            .sample(rng);
        *slot = (2.0 * k as f64 / shots as f64 - 1.0, exact);
    }
    let mut value = TwoBodyTensor::zeros(n);
    let mut sigma = TwoBodyTensor::zeros(n);
    for ((i, j, k, l), ws) in elements {
        let mut v = ZERO;
        let mut var = 0.0;
        for (w, c) in ws {
            let (est, exact) = words[&w];
            v += c * est;
            var += c.norm_sqr() * (1.0 - exact * exact) / shots as f64;
        }
        let sd = C64::new(var.sqrt(), 0.0);
        for (idx, s) in [((i, j, k, l), 1.0), ((j, i, k, l), -1.0), ((i, j, l, k), -1.0), ((j, i, l, k), 1.0)] {
            value[idx] = v * s;
            sigma[idx] = sd;
        }
    }
    Ok((value, sigma))
}

/// Residual from auxiliary-state measurements. The Hermitian channel gives
/// `<Z (x) Gamma>/d = S + O(d^2)`, the anti-Hermitian one `i A + O(d^2)`;
/// `cse` combines them as `(S + A)/2`.
pub fn estimate_residual_w(
    psi: &StateVector,
    h: &SparseOperator,
    which: Variant,
    cfg: &EstimatorConfig,
) -> Result<TwoBodyTensor> {
    Ok(estimate_residual_w_with_errors(psi, h, which, cfg)?.value)
}

pub fn estimate_residual_w_with_errors(
    psi: &StateVector,
    h: &SparseOperator,
    which: Variant,
    cfg: &EstimatorConfig,
) -> Result<WEstimate> {
    cfg.validate()?;
    let e = crate::residuals::energy(psi, h)?;
    let h_shift = h.shifted(-e);
    let delta = cfg.delta;
    let mut rng = cfg.seed.map(ChaCha8Rng::seed_from_u64);
    let mut run = |channel: Channel| -> Result<(TwoBodyTensor, TwoBodyTensor)> {
        let aux = auxiliary_state(psi, &h_shift, delta, channel)?;
        let (value, sigma) = match (cfg.shots, rng.as_mut()) {
            (Some(shots), Some(rng)) => sampled_channel(&aux, shots, rng)?,
            _ => {
                let v = exact_channel(&aux)?;
                let z = TwoBodyTensor::zeros(v.n_orbitals());
                (v, z)
            }
        };
        let scale = match channel {
            Channel::Hermitian => C64::new(1.0 / delta, 0.0),
            Channel::AntiHermitian => C64::new(0.0, -1.0 / delta),
        };
        Ok((value.scale(scale), sigma * (1.0 / delta.abs())))
    };
    let (value, sigma) = match which {
        Variant::Hcse => run(Channel::Hermitian)?,
        Variant::Acse => run(Channel::AntiHermitian)?,
        Variant::Cse => {
            let (s, ss) = run(Channel::Hermitian)?;
            let (a, sa) = run(Channel::AntiHermitian)?;
            let sigma = TwoBodyTensor::from_fn(s.n_orbitals(), |i, j, k, l| {
                let (x, y) = (ss[(i, j, k, l)].re, sa[(i, j, k, l)].re);
                C64::new(0.5 * (x * x + y * y).sqrt(), 0.0)
            });
            ((&s + &a) * 0.5, sigma)
        }
    };
    Ok(WEstimate { value, sigma })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{apply_string, Basis, Ladder};
    use crate::hamiltonian::{build_hamiltonian, IntegralSet};
    use crate::oracle::dense_expm_apply;
    use crate::residuals::Residuals;
    use rand::Rng;
    use std::sync::Arc;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_h(n: usize, ne: usize, seed: u64) -> (Arc<Basis>, SparseOperator) {
        let ints = IntegralSet::random(n, ne, &mut rng(seed));
        let basis = ints.sector_basis().unwrap();
        let h = build_hamiltonian(&ints, &basis).unwrap();
        (basis, h)
    }

    fn dense(op: &SparseOperator, scale: C64) -> Vec<Vec<C64>> {
        op.to_dense()
            .into_iter()
            .map(|row| row.into_iter().map(|v| v * scale).collect())
            .collect()
    }

    #[test]
    fn split_examples() {
        let mut r = rng(1);
        let j = TwoBodyTensor::random(4, true, &mut r);
        let h = j.hermitian_part();
        let a = j.antihermitian_part();
        let (h1, a1) = split_tensor(&h);
        assert!(h1.max_abs_diff(&h) < 1e-15 && a1.frobenius_norm() < 1e-15);
        let (h2, a2) = split_tensor(&a);
        assert!(h2.frobenius_norm() < 1e-15 && a2.max_abs_diff(&a) < 1e-15);
        let basis = Basis::build(6, 3, 1).unwrap();
        let jj = TwoBodyTensor::random(6, true, &mut r);
        let (jh, ja) = split_tensor(&jj);
        assert!(two_body_to_operator(&jh, &basis).unwrap().hermitian_defect() < 1e-12);
        assert!(two_body_to_operator(&ja, &basis).unwrap().antihermitian_defect() < 1e-12);
        assert!((&jh + &ja).max_abs_diff(&jj) < 1e-15);
    }

    #[test]
    fn exact_exponential() {
        let mut r = rng(2);
        let basis = Basis::build(8, 4, 0).unwrap();
        let psi = StateVector::random(basis.clone(), true, &mut r);
        let zero = TwoBodyTensor::zeros(8);
        let same = apply_exp_exact(&zero, &psi, true).unwrap();
        assert!(same.distance(&psi) < 1e-15);

        let a = TwoBodyTensor::random(8, true, &mut r).antihermitian_part();
        let u = apply_exp_exact(&a, &psi, false).unwrap();
        assert!((u.norm() - 1.0).abs() < 1e-12);
        let u = apply_exp_exact(&a, &psi, true).unwrap();
        assert_eq!(u.success_prob, psi.success_prob);

        let jh = TwoBodyTensor::random(8, true, &mut r).hermitian_part() * 0.3;
        let op = two_body_to_operator(&jh, &basis).unwrap();
        let out = apply_exp_exact(&jh, &psi, false).unwrap();
        let want = dense_expm_apply(&dense(&op, ONE), &psi.amplitudes).unwrap();
        let err = out.amplitudes.iter().zip(&want).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-11, "{err}");
        let normed = apply_exp_exact(&jh, &psi, true).unwrap();
        assert!(normed.is_normalized(1e-12));
        assert!(normed.success_prob <= 1.0);
    }

    #[test]
    fn large_norm_exponential_converges() {
        let (basis, h) = random_h(4, 4, 3);
        let psi = StateVector::random(basis, false, &mut rng(4));
        let out = exp_operator_action(&h, C64::new(0.0, 7.0), &psi.amplitudes).unwrap();
        let want = dense_expm_apply(&dense(&h, C64::new(0.0, 7.0)), &psi.amplitudes).unwrap();
        let err = out.iter().zip(&want).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-11, "{err}");
        assert!(matches!(
            exp_operator_action(&h, C64::new(f64::INFINITY, 0.0), &psi.amplitudes),
            Err(CqeError::ExpmNonConvergence(_))
        ));
    }

    #[test]
    fn dilation_with_zero_generator() {
        let basis = Basis::build(4, 2, 0).unwrap();
        let psi = StateVector::random(basis, true, &mut rng(5));
        let d = apply_dilated(&TwoBodyTensor::zeros(4), &psi, &DilationPolicy::default()).unwrap();
        assert_eq!(d.n_ancilla, 1);
        assert_eq!(d.dim(), 2 * psi.dim());
        for (a, b) in d.branch(0).iter().zip(d.branch(1)) {
            assert!((a - b).norm() < 1e-15);
        }
        let back = reset_ancilla(&d).unwrap();
        assert!((back.success_prob - 0.5).abs() < 1e-15);
        assert!(back.distance(&psi) < 1e-14);
    }

    #[test]
    fn dilation_refuses_non_hermitian() {
        let basis = Basis::build(4, 2, 0).unwrap();
        let psi = StateVector::random(basis, true, &mut rng(6));
        let a = TwoBodyTensor::random(4, true, &mut rng(7)).antihermitian_part();
        assert!(matches!(
            apply_dilated(&a, &psi, &DilationPolicy::default()),
            Err(CqeError::NotHermitian(_))
        ));
    }

    fn single_step_error(jh: &TwoBodyTensor, psi: &StateVector, delta: f64) -> f64 {
        let policy = DilationPolicy {
            epsilon: delta,
            ..DilationPolicy::default()
        };
        let stepped = reset_ancilla(&apply_dilated(jh, psi, &policy).unwrap()).unwrap();
        let exact = apply_exp_exact(&(jh.clone() * delta), psi, true).unwrap();
        stepped.distance(&exact)
    }

    #[test]
    fn dilation_error_is_second_order() {
        let mut r = rng(8);
        let basis = Basis::build(8, 4, 0).unwrap();
        for _ in 0..5 {
            let psi = StateVector::random(basis.clone(), false, &mut r);
            let jh = TwoBodyTensor::random(8, false, &mut r).hermitian_part();
            let op = two_body_to_operator(&jh, &basis).unwrap();
            // unit operator scale
            let nrm = op.to_dense().iter().map(|r| r.iter().map(|v| v.norm_sqr()).sum::<f64>()).sum::<f64>().sqrt()
                / (basis.dim() as f64).sqrt();
            let jh = jh * (1.0 / nrm);
            let errs: Vec<f64> = [0.1, 0.05, 0.025].iter().map(|&d| single_step_error(&jh, &psi, d)).collect();
            for w in errs.windows(2) {
                let ratio = w[0] / w[1];
                assert!((3.6..=4.4).contains(&ratio), "{errs:?}");
            }
        }
    }

    #[test]
    fn repeated_dilation_composes_exactly() {
        // k steps without reset equal one step of k*delta
        let mut r = rng(9);
        let basis = Basis::build(6, 3, 1).unwrap();
        let psi = StateVector::random(basis.clone(), false, &mut r);
        let jh = TwoBodyTensor::random(6, false, &mut r).hermitian_part();
        let op = two_body_to_operator(&jh, &basis).unwrap();
        let mut state = psi.clone();
        for _ in 0..3 {
            state = apply_dilated_operator(&op, 0.05, &state).unwrap();
        }
        let once = apply_dilated_operator(&op, 0.15, &psi).unwrap();
        assert!(state.distance(&once) < 1e-13);
    }

    #[test]
    fn success_probability_bookkeeping() {
        let mut r = rng(10);
        let basis = Basis::build(6, 2, 0).unwrap();
        let mut psi = StateVector::random(basis.clone(), false, &mut r);
        let mut prob = 1.0;
        for _ in 0..4 {
            let jh = TwoBodyTensor::random(6, false, &mut r).hermitian_part();
            let op = two_body_to_operator(&jh, &basis).unwrap();
            let delta = 0.2;
            // branch 0 weight = |(cos dJ + sin dJ) psi|^2 / 2
            let plus = dense_expm_apply(&dense(&op, C64::new(0.0, delta)), &psi.amplitudes).unwrap();
            let minus = dense_expm_apply(&dense(&op, C64::new(0.0, -delta)), &psi.amplitudes).unwrap();
            let b0: Vec<C64> = plus
                .iter()
                .zip(&minus)
                .map(|(p, m)| (p + m) * 0.5 + (p - m) / C64::new(0.0, 2.0))
                .collect();
            let weight = vnorm(&b0).powi(2) / 2.0;
            prob *= weight;
            let before = psi.success_prob;
            psi = reset_ancilla(&apply_dilated_operator(&op, delta, &psi).unwrap()).unwrap();
            assert!(psi.success_prob < before);
            assert!((psi.success_prob - prob).abs() < 1e-10);
        }
    }

    #[test]
    fn string_words_reproduce_operators() {
        let n = 4;
        let nso = 1u64 << n;
        let dense_word = |(x, z): Word| -> Vec<Vec<C64>> {
            let m = (x & z).count_ones() % 4;
            let phase = [ONE, C64::new(0.0, 1.0), -ONE, C64::new(0.0, -1.0)][m as usize];
            let mut out = vec![vec![ZERO; nso as usize]; nso as usize];
            for b in 0..nso {
                let s = if (z & b).count_ones() % 2 == 1 { -1.0 } else { 1.0 };
                out[(b ^ x) as usize][b as usize] = phase * s;
            }
            out
        };
        let mut r = rng(11);
        for _ in 0..40 {
            let idx: Vec<usize> = (0..4).map(|_| r.gen_range(0..n)).collect();
            let (i, j, k, l) = (idx[0], idx[1], idx[2], idx[3]);
            let mut m = vec![vec![ZERO; nso as usize]; nso as usize];
            for (w, c) in string_words(i, j, k, l) {
                let d = dense_word(w);
                for a in 0..nso as usize {
                    for b in 0..nso as usize {
                        m[a][b] += c * d[a][b];
                    }
                }
            }
            let ops = [Ladder::Create(i), Ladder::Create(j), Ladder::Annihilate(l), Ladder::Annihilate(k)];
            for b in 0..nso {
                let mut col = vec![ZERO; nso as usize];
                if let Some((d, s)) = apply_string(crate::fock::Determinant(b), &ops, n).unwrap() {
                    col[d.0 as usize] = C64::new(s, 0.0);
                }
                for a in 0..nso as usize {
                    assert!((m[a][b as usize] - col[a]).norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn exact_estimator_matches_residuals() {
        let (basis, h) = random_h(3, 2, 12);
        let psi = StateVector::random(basis, true, &mut rng(13));
        let exact = Residuals::compute(&psi, &h).unwrap();
        for v in Variant::ALL {
            let est = estimate_residual_w(&psi, &h, v, &EstimatorConfig::exact(1e-3)).unwrap();
            assert!(est.max_abs_diff(exact.get(v)) < 5e-6, "{v}");
        }
    }

    #[test]
    fn estimator_bias_is_even_second_order() {
        let (basis, h) = random_h(3, 3, 14);
        let psi = StateVector::random(basis, false, &mut rng(15));
        let exact = Residuals::compute(&psi, &h).unwrap();
        for v in Variant::ALL {
            let bias = |d: f64| {
                let est = estimate_residual_w(&psi, &h, v, &EstimatorConfig::exact(d)).unwrap();
                (&est - exact.get(v)).frobenius_norm()
            };
            let b: Vec<f64> = [0.1, 0.05, 0.025].iter().map(|&d| bias(d)).collect();
            for w in b.windows(2) {
                assert!((3.6..=4.4).contains(&(w[0] / w[1])), "{v}: {b:?}");
            }
            let plus = estimate_residual_w(&psi, &h, v, &EstimatorConfig::exact(0.1)).unwrap();
            let minus = estimate_residual_w(&psi, &h, v, &EstimatorConfig::exact(-0.1)).unwrap();
            assert!(plus.max_abs_diff(&minus) < 1e-12);
        }
    }

    #[test]
    fn sampling_requires_seed_and_is_reproducible() {
        let (basis, h) = random_h(2, 2, 16);
        let psi = StateVector::random(basis, false, &mut rng(17));
        let cfg = EstimatorConfig {
            delta: 0.1,
            shots: Some(100),
            seed: None,
        };
        assert!(matches!(
            estimate_residual_w(&psi, &h, Variant::Cse, &cfg),
            Err(CqeError::MissingSeed)
        ));
        let cfg = EstimatorConfig::sampled(0.1, 100, 3);
        let a = estimate_residual_w(&psi, &h, Variant::Cse, &cfg).unwrap();
        let b = estimate_residual_w(&psi, &h, Variant::Cse, &cfg).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn shot_noise_within_three_sigma() {
        let (basis, h) = random_h(3, 2, 18);
        let psi = StateVector::random(basis, false, &mut rng(19));
        let (mut inside, mut total) = (0usize, 0usize);
        for seed in 0..4 {
            for v in Variant::ALL {
                let exact = estimate_residual_w(&psi, &h, v, &EstimatorConfig::exact(0.1)).unwrap();
                let est = estimate_residual_w_with_errors(&psi, &h, v, &EstimatorConfig::sampled(0.1, 16000, seed)).unwrap();
                for ((e, x), s) in est.value.as_slice().iter().zip(exact.as_slice()).zip(est.sigma.as_slice()) {
                    if s.re > 0.0 {
                        total += 1;
                        inside += ((e - x).norm() <= 3.0 * s.re) as usize;
                    }
                }
            }
        }
        assert!(total > 0);
        assert!(inside as f64 >= 0.99 * total as f64, "{inside}/{total}");
    }
}
