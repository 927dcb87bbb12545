//! The contracted quantum eigensolver loop: measure the residual, turn it
//! into a two-body direction, line-search the step, update the state.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{CqeError, Result};
use crate::evolution::{
    apply_dilated_operator, apply_exp_operator, dilate, estimate_residual_w, exp_operator_action, reset_ancilla,
    split_tensor, DilationPolicy, EstimatorConfig, ResetMode,
};
use crate::fock::{same_basis, two_body_to_operator, Basis, SparseOperator, StateVector, TwoBodyTensor, C64};
use crate::residuals::{energy, variance, Residuals, Variant};

/// Accepted steps never raise the energy by more than this.
pub const ENERGY_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LineSearch {
    FixedEta { eta: f64 },
    Backtracking { eta0: f64, shrink: f64, c1: f64, max_shrinks: usize },
    Golden { max_eta: f64, tol: f64 },
}

impl Default for LineSearch {
    fn default() -> Self {
        LineSearch::Backtracking {
            eta0: 0.5,
            shrink: 0.5,
            c1: 1e-4,
            max_shrinks: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Execution {
    Exact,
    Dilated { policy: DilationPolicy },
    Sampled { estimator: EstimatorConfig },
}

#[derive(Clone, Debug)]
pub enum InitialState {
    HartreeFock,
    Given(StateVector),
}

#[derive(Clone, Debug)]
pub struct CqeConfig {
    pub variant: Variant,
    pub residual_tolerance: f64,
    pub max_iterations: usize,
    pub line_search: LineSearch,
    pub execution: Execution,
    pub initial_state: InitialState,
    /// Fill `IterationRecord::wall_time`. Off by default so that records are
    /// reproducible byte for byte.
    pub record_timing: bool,
}

impl Default for CqeConfig {
    fn default() -> Self {
        CqeConfig {
            variant: Variant::Cse,
            residual_tolerance: 1e-6,
            max_iterations: 500,
            line_search: LineSearch::default(),
            execution: Execution::Exact,
            initial_state: InitialState::HartreeFock,
            record_timing: false,
        }
    }
}

impl CqeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tolerance > 0.0) {
            return Err(CqeError::InvalidConfig("residual_tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(CqeError::InvalidConfig("max_iterations must be >= 1".into()));
        }
        match self.line_search {
            LineSearch::FixedEta { eta } if !(eta > 0.0) => {
                return Err(CqeError::InvalidConfig("fixed eta must be positive".into()))
            }
            LineSearch::Backtracking { eta0, shrink, c1, .. }
                if !(eta0 > 0.0 && shrink > 0.0 && shrink < 1.0 && c1 > 0.0 && c1 < 1.0) =>
            {
                return Err(CqeError::InvalidConfig("invalid backtracking parameters".into()))
            }
            LineSearch::Golden { max_eta, tol } if !(max_eta > 0.0 && tol > 0.0) => {
                return Err(CqeError::InvalidConfig("invalid golden-section parameters".into()))
            }
            _ => {}
        }
        match &self.execution {
            Execution::Exact => Ok(()),
            Execution::Dilated { policy } => policy.validate(),
            Execution::Sampled { estimator } => estimator.validate(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub n: usize,
    pub energy: f64,
    pub variance: f64,
    pub norm_r: f64,
    pub norm_s: f64,
    pub norm_a: f64,
    /// Norm of the residual that drove the step: exact, or estimated when
    /// sampling.
    pub norm_used: f64,
    /// Step that produced this iterate (0 for the initial state).
    pub eta: f64,
    pub success_prob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIter,
    Stalled,
}

#[derive(Clone, Debug)]
pub struct CqeOutcome {
    pub state: StateVector,
    pub records: Vec<IterationRecord>,
    pub status: Status,
}

/// Descent tensor for a residual: its negative, projected to the exact
/// symmetry class of the variant.
pub fn direction_from_residual(residual: &TwoBodyTensor, variant: Variant) -> TwoBodyTensor {
    match variant {
        Variant::Cse => -residual.clone(),
        Variant::Hcse => -residual.hermitian_part(),
        Variant::Acse => -residual.antihermitian_part(),
    }
}

/// Determinant with the lowest diagonal energy; ties go to the lowest
/// bitmask. In closed-shell sectors (`Sz = 0`, even `N`) only determinants
/// with every spatial orbital doubly occupied or empty compete.
pub fn hartree_fock_state(h: &SparseOperator, basis: &Arc<Basis>) -> Result<StateVector> {
    if !same_basis(h.basis(), basis) {
        return Err(CqeError::BasisMismatch);
    }
    let closed_shell_sector = basis.sz_twice == 0 && basis.n_electrons.is_multiple_of(2);
    let is_closed = |d: u64| (d & 0x5555_5555_5555_5555) << 1 == d & 0xAAAA_AAAA_AAAA_AAAA;
    let mut best = 0;
    let mut best_e = f64::INFINITY;
    for i in 0..basis.dim() {
        if closed_shell_sector && !is_closed(basis.dets[i].0) {
            continue;
        }
        let e = h.get(i, i).re;
        if e < best_e - 1e-12 {
            best = i;
            best_e = e;
        }
    }
    StateVector::from_determinant(basis.clone(), basis.dets[best])
}

/// The state-update map of one iteration: `exp(eta J_H) exp(eta J_A)` in
/// exact form, or through the dilation gadget.
struct Step {
    op_h: Option<SparseOperator>,
    op_a: Option<SparseOperator>,
}

impl Step {
    fn new(j: &TwoBodyTensor, basis: &Arc<Basis>) -> Result<Self> {
        let (jh, ja) = split_tensor(j);
        let build = |t: &TwoBodyTensor| -> Result<Option<SparseOperator>> {
            if t.frobenius_norm() == 0.0 {
                Ok(None)
            } else {
                two_body_to_operator(t, basis).map(Some)
            }
        };
        Ok(Step {
            op_h: build(&jh)?,
            op_a: build(&ja)?,
        })
    }

    fn exact(&self, psi: &StateVector, eta: f64) -> Result<StateVector> {
        let mut out = psi.clone();
        if let Some(a) = &self.op_a {
            out = apply_exp_operator(a, eta, true, &out, true)?;
        }
        if let Some(h) = &self.op_h {
            out = apply_exp_operator(h, eta, false, &out, true)?;
        }
        Ok(out)
    }

    /// Unitary part on both ancilla branches, then the gadget.
    fn dilated(&self, upsilon: &StateVector, eta: f64) -> Result<StateVector> {
        let mut out = if upsilon.n_ancilla == 0 { dilate(upsilon)? } else { upsilon.clone() };
        if let Some(a) = &self.op_a {
            let dim = a.dim();
            let scale = C64::new(eta, 0.0);
            let b0 = exp_operator_action(a, scale, &out.amplitudes[..dim])?;
            let b1 = exp_operator_action(a, scale, &out.amplitudes[dim..])?;
            out.amplitudes[..dim].copy_from_slice(&b0);
            out.amplitudes[dim..].copy_from_slice(&b1);
        }
        if let Some(h) = &self.op_h {
            out = apply_dilated_operator(h, eta, &out)?;
        }
        Ok(out)
    }
}

/// Normalized branch-0 state of a possibly dilated vector, without touching
/// `success_prob`, plus the branch weight.
fn physical(upsilon: &StateVector) -> Result<(StateVector, f64)> {
    if upsilon.n_ancilla == 0 {
        return Ok((upsilon.clone(), 1.0));
    }
    let weight = upsilon.branch(0).iter().map(|z| z.norm_sqr()).sum::<f64>() / upsilon.norm_sqr();
    let mut psi = reset_ancilla(upsilon)?;
    psi.success_prob = upsilon.success_prob;
    Ok((psi, weight))
}

/// Line search on `f(eta)`; returns the accepted `(eta, value)`.
fn line_search<F>(ls: &LineSearch, e0: f64, slope: f64, mut f: F, cap: f64) -> Result<Option<(f64, f64)>>
where
    F: FnMut(f64) -> Result<f64>,
{
    // a trial whose state over- or underflows is a rejected trial
    let mut f = |eta: f64| match f(eta) {
        Err(CqeError::NotNormalized(_)) => Ok(f64::INFINITY),
        other => other,
    };
    let ok = |e: f64| e <= e0 + ENERGY_SLACK;
    match *ls {
        LineSearch::FixedEta { eta } => {
            let eta = eta.min(cap);
            let e = f(eta)?;
            Ok(ok(e).then_some((eta, e)))
        }
        LineSearch::Backtracking { eta0, shrink, c1, max_shrinks } => {
            let armijo = |eta: f64, e: f64| ok(e) && e <= e0 + c1 * eta * slope;
            let mut eta = eta0.min(cap);
            let mut e = f(eta)?;
            if armijo(eta, e) {
                // expand while the energy keeps dropping
                for _ in 0..max_shrinks {
                    let next = (eta / shrink).min(cap);
                    if next <= eta {
                        break;
                    }
                    let en = f(next)?;
                    if en >= e || !armijo(next, en) {
                        break;
                    }
                    (eta, e) = (next, en);
                }
                return Ok(Some((eta, e)));
            }
            for _ in 0..max_shrinks {
                eta *= shrink;
                e = f(eta)?;
                if armijo(eta, e) {
                    return Ok(Some((eta, e)));
                }
            }
            Ok(None)
        }
        LineSearch::Golden { max_eta, tol } => {
            let g = (5f64.sqrt() - 1.0) / 2.0;
            let (mut a, mut b) = (0.0, max_eta.min(cap));
            let mut x1 = b - g * (b - a);
            let mut x2 = a + g * (b - a);
            let mut f1 = f(x1)?;
            let mut f2 = f(x2)?;
            while b - a > tol {
                if f1 <= f2 {
                    b = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = b - g * (b - a);
                    f1 = f(x1)?;
                } else {
                    a = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = a + g * (b - a);
                    f2 = f(x2)?;
                }
            }
            let (eta, e) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
            Ok((ok(e) && eta > 0.0).then_some((eta, e)))
        }
    }
}

pub fn cqe_run(h: &SparseOperator, basis: &Arc<Basis>, cfg: &CqeConfig) -> Result<CqeOutcome> {
    cqe_run_observed(h, basis, cfg, |_, _| {})
}

/// [`cqe_run`] calling `observe` with each recorded iterate.
pub fn cqe_run_observed<O>(h: &SparseOperator, basis: &Arc<Basis>, cfg: &CqeConfig, mut observe: O) -> Result<CqeOutcome>
where
    O: FnMut(&StateVector, &IterationRecord),
{
    cfg.validate()?;
    if !same_basis(h.basis(), basis) {
        return Err(CqeError::BasisMismatch);
    }
    if !h.is_flagged_hermitian() {
        let d = h.hermitian_defect();
        if d > 1e-12 {
            return Err(CqeError::NotHermitian(d));
        }
    }
    let start = match &cfg.initial_state {
        InitialState::HartreeFock => hartree_fock_state(h, basis)?,
        InitialState::Given(psi) => {
            if !same_basis(&psi.basis, basis) {
                return Err(CqeError::BasisMismatch);
            }
            psi.require_undilated()?;
            let mut psi = psi.clone();
            if !psi.is_normalized(1e-10) {
                return Err(CqeError::NotNormalized(psi.norm_sqr()));
            }
            psi.normalize();
            psi
        }
    };
    let clock = Instant::now();
    let mut upsilon = start;
    let mut steps_since_reset = 0usize;
    let mut records = Vec::new();
    let mut eta = 0.0;
    let mut n = 0;
    let status = loop {
        let (psi, weight) = physical(&upsilon)?;
        let res = Residuals::compute(&psi, h)?;
        let var = variance(&psi, h)?;
        let used = match &cfg.execution {
            Execution::Sampled { estimator } => {
                let mut est = *estimator;
                est.seed = est.seed.map(|s| s.wrapping_add(n as u64));
                estimate_residual_w(&psi, h, cfg.variant, &est)?
            }
            _ => res.get(cfg.variant).clone(),
        };
        let record = IterationRecord {
            n,
            energy: res.energy,
            variance: var,
            norm_r: res.r.frobenius_norm(),
            norm_s: res.s.frobenius_norm(),
            norm_a: res.a.frobenius_norm(),
            norm_used: used.frobenius_norm(),
            eta,
            success_prob: upsilon.success_prob * weight,
            wall_time: cfg.record_timing.then(|| clock.elapsed().as_secs_f64()),
        };
        observe(&psi, &record);
        records.push(record);
        if used.frobenius_norm() <= cfg.residual_tolerance {
            break Status::Converged;
        }
        if n >= cfg.max_iterations {
            break Status::MaxIter;
        }
        let j = direction_from_residual(&used, cfg.variant);
        let slope = 2.0 * j.inner(&used).re;
        let step = Step::new(&j, basis)?;
        let e0 = res.energy;
        let accepted: Option<(StateVector, f64)> = match &cfg.execution {
            Execution::Exact | Execution::Sampled { .. } => {
                let found = line_search(
                    &cfg.line_search,
                    e0,
                    slope,
                    |eta| energy(&step.exact(&psi, eta)?, h),
                    f64::INFINITY,
                )?;
                match found {
                    Some((eta, _)) => Some((step.exact(&psi, eta)?, eta)),
                    None => None,
                }
            }
            Execution::Dilated { policy } => {
                let unitary_only = step.op_h.is_none();
                if unitary_only {
                    // the anti-Hermitian factor needs no ancilla
                    if upsilon.n_ancilla == 1 {
                        upsilon = reset_ancilla(&upsilon)?;
                        steps_since_reset = 0;
                    }
                    let from = upsilon.clone();
                    let found = line_search(
                        &cfg.line_search,
                        e0,
                        slope,
                        |eta| energy(&step.exact(&from, eta)?, h),
                        policy.epsilon,
                    )?;
                    match found {
                        Some((eta, _)) => Some((step.exact(&from, eta)?, eta)),
                        None => None,
                    }
                } else {
                    let eval = |from: &StateVector, eta: f64| -> Result<f64> {
                        energy(&physical(&step.dilated(from, eta)?)?.0, h)
                    };
                    let due = match policy.reset_mode {
                        ResetMode::Never => false,
                        ResetMode::Wolfe | ResetMode::EveryK => steps_since_reset >= policy.max_steps_between_resets,
                    };
                    if upsilon.n_ancilla == 1 && due {
                        upsilon = reset_ancilla(&upsilon)?;
                        steps_since_reset = 0;
                    }
                    let mut found =
                        line_search(&cfg.line_search, e0, slope, |eta| eval(&upsilon, eta), policy.epsilon)?;
                    if found.is_none() && policy.reset_mode == ResetMode::Wolfe && upsilon.n_ancilla == 1 {
                        upsilon = reset_ancilla(&upsilon)?;
                        steps_since_reset = 0;
                        found = line_search(&cfg.line_search, e0, slope, |eta| eval(&upsilon, eta), policy.epsilon)?;
                    }
                    match found {
                        Some((eta, _)) => {
                            steps_since_reset += 1;
                            Some((step.dilated(&upsilon, eta)?, eta))
                        }
                        None => None,
                    }
                }
            }
        };
        let Some((next, step_eta)) = accepted else {
            break Status::Stalled;
        };
        upsilon = next;
        eta = step_eta;
        n += 1;
    };
    let state = reset_ancilla(&upsilon)?;
    Ok(CqeOutcome { state, records, status })
}
