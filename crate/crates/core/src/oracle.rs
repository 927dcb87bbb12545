//! Brute-force references: exact diagonalization and dense matrix
//! exponentials.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CqeError, Result};
use crate::fock::{SparseOperator, StateVector, C64, ZERO};

/// Largest sector handled by [`fci_solve`].
pub const FCI_DIM_CAP: usize = 10_000;
/// Below this dimension [`fci_solve`] diagonalizes densely.
pub const DENSE_DIM_LIMIT: usize = 512;
/// Largest matrix accepted by [`dense_expm_apply`].
pub const EXPM_DIM_CAP: usize = 1_000;

const HERMITIAN_TOL: f64 = 1e-12;
const RESIDUAL_TOL: f64 = 1e-10;

/// One eigenpair of a sector Hamiltonian.
#[derive(Clone, Debug)]
pub struct Eigenpair {
    pub value: f64,
    pub vector: StateVector,
}

fn check_hermitian(h: &SparseOperator) -> Result<()> {
    if h.is_flagged_hermitian() {
        return Ok(());
    }
    let defect = h.hermitian_defect();
    if defect > HERMITIAN_TOL {
        return Err(CqeError::NotHermitian(defect));
    }
    Ok(())
}

fn to_dense(h: &SparseOperator) -> DMatrix<C64> {
    let n = h.dim();
    let mut m = DMatrix::from_element(n, n, ZERO);
    for (r, c, v) in h.entries() {
        m[(r, c)] += v;
    }
    m
}

/// The `k` lowest eigenpairs, ascending, each with the largest amplitude
/// made real and positive.
pub fn fci_solve(h: &SparseOperator, k: usize) -> Result<Vec<Eigenpair>> {
    if h.dim() > FCI_DIM_CAP {
        return Err(CqeError::DimensionCap {
            dim: h.dim(),
            cap: FCI_DIM_CAP,
        });
    }
    if h.dim() < DENSE_DIM_LIMIT {
        fci_solve_dense(h, k)
    } else {
        fci_solve_lanczos(h, k)
    }
}

/// Full dense diagonalization.
pub fn fci_solve_dense(h: &SparseOperator, k: usize) -> Result<Vec<Eigenpair>> {
    check_hermitian(h)?;
    let n = h.dim();
    let mut m = to_dense(h);
    // symmetrize away rounding so the eigensolver sees an exact Hermitian matrix
    let mt = m.adjoint();
    m = (m + mt).scale(0.5);
    // Schur vectors of a Hermitian matrix are eigenvectors; nalgebra's
    // Schur is markedly more accurate here than its symmetric_eigen
    let (q, t) = m.schur().unpack();
    let values: Vec<f64> = (0..n).map(|i| t[(i, i)].re).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let pairs = order
        .into_iter()
        .take(k.min(n))
        .map(|i| {
            let amps = q.column(i).iter().copied().collect();
            let mut vector = StateVector::new(h.basis().clone(), amps)?;
            vector.normalize();
            vector.fix_phase();
            Ok(Eigenpair {
                value: values[i],
                vector,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    verify(h, &pairs)?;
    Ok(pairs)
}

/// Lanczos with full reorthogonalization. Eigenpairs are found one at a
/// time, each run kept orthogonal to those already locked, so degenerate
/// levels are resolved.
pub fn fci_solve_lanczos(h: &SparseOperator, k: usize) -> Result<Vec<Eigenpair>> {
    check_hermitian(h)?;
    let n = h.dim();
    let k = k.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut locked: Vec<Vec<C64>> = Vec::new();
    let mut values = Vec::new();
    for _ in 0..k {
        let mut start: Vec<C64> = (0..n)
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), 0.0))
            .collect();
        let mut found = None;
        for _restart in 0..100 {
            let (value, vec, resid) = lanczos_lowest(h, &start, &locked)?;
            if resid < 0.1 * RESIDUAL_TOL * value.abs().max(1.0) {
                found = Some((value, vec));
                break;
            }
            start = vec;
        }
        let (value, vec) = found.ok_or_else(|| {
            CqeError::Eigensolver(format!("Lanczos did not converge eigenpair {}", locked.len()))
        })?;
        values.push(value);
        locked.push(vec);
    }
    let mut pairs = values
        .into_iter()
        .zip(locked)
        .map(|(value, amps)| {
            let mut vector = StateVector::new(h.basis().clone(), amps)?;
            vector.normalize();
            vector.fix_phase();
            Ok(Eigenpair { value, vector })
        })
        .collect::<Result<Vec<_>>>()?;
    pairs.sort_by(|a, b| a.value.total_cmp(&b.value));
    verify(h, &pairs)?;
    Ok(pairs)
}

fn project_out(v: &mut [C64], basis: &[Vec<C64>]) {
    for q in basis {
        let c: C64 = q.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum();
        v.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
    }
}

fn vnorm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// One Lanczos run in the complement of `locked`; returns the lowest Ritz
/// pair and its true residual norm.
fn lanczos_lowest(
    h: &SparseOperator,
    start: &[C64],
    locked: &[Vec<C64>],
) -> Result<(f64, Vec<C64>, f64)> {
    let n = h.dim();
    let max_steps = (n - locked.len()).min(300);
    let mut q = start.to_vec();
    project_out(&mut q, locked);
    project_out(&mut q, locked);
    let nrm = vnorm(&q);
    if nrm == 0.0 {
        return Err(CqeError::Eigensolver("start vector lies in the locked space".into()));
    }
    q.iter_mut().for_each(|z| *z /= nrm);
    let mut krylov: Vec<Vec<C64>> = vec![q];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![ZERO; n];
    loop {
        let j = krylov.len() - 1;
        h.matvec_into(&krylov[j], &mut w);
        let a: C64 = krylov[j].iter().zip(&w).map(|(x, y)| x.conj() * y).sum();
        alpha.push(a.re);
        for _ in 0..2 {
            project_out(&mut w, &krylov);
            project_out(&mut w, locked);
        }
        let b = vnorm(&w);
        let m = alpha.len();
        let done = m >= max_steps || b < 1e-13;
        if done || m.is_multiple_of(10) {
            let t = DMatrix::from_fn(m, m, |r, c| {
                if r == c {
                    alpha[r]
                } else if r + 1 == c {
                    beta[r]
                } else if c + 1 == r {
                    beta[c]
                } else {
                    0.0
                }
            });
            let eig = t.symmetric_eigen();
            let imin = (0..m)
                .min_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]))
                .unwrap();
            let estimate = (b * eig.eigenvectors[(m - 1, imin)]).abs();
            if done || estimate < 1e-3 * RESIDUAL_TOL {
                let y: DVector<f64> = eig.eigenvectors.column(imin).into_owned();
                let mut x = vec![ZERO; n];
                for (c, qv) in y.iter().zip(&krylov) {
                    x.iter_mut().zip(qv).for_each(|(xi, qi)| *xi += qi * *c);
                }
                project_out(&mut x, locked);
                let nx = vnorm(&x);
                x.iter_mut().for_each(|z| *z /= nx);
                let hx = h.matvec(&x);
                let rayleigh: f64 = x.iter().zip(&hx).map(|(a, b)| (a.conj() * b).re).sum();
                let resid = hx
                    .iter()
                    .zip(&x)
                    .map(|(a, b)| (a - b * rayleigh).norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                return Ok((rayleigh, x, resid));
            }
        }
        beta.push(b);
        let next: Vec<C64> = w.iter().map(|z| z / b).collect();
        krylov.push(next);
    }
}

fn verify(h: &SparseOperator, pairs: &[Eigenpair]) -> Result<()> {
    for p in pairs {
        let hv = h.matvec(&p.vector.amplitudes);
        let resid = hv
            .iter()
            .zip(&p.vector.amplitudes)
            .map(|(a, b)| (a - b * p.value).norm_sqr())
            .sum::<f64>()
            .sqrt();
        if resid >= RESIDUAL_TOL * p.value.abs().max(1.0) {
            return Err(CqeError::Eigensolver(format!(
                "eigenpair residual {resid:.3e} at eigenvalue {}",
                p.value
            )));
        }
    }
    Ok(())
}

/// `exp(M) v` for a dense square `M` (row-major rows), by scaling and
/// squaring with a Padé approximant.
pub fn dense_expm_apply(m: &[Vec<C64>], v: &[C64]) -> Result<Vec<C64>> {
    let n = m.len();
    if n > EXPM_DIM_CAP {
        return Err(CqeError::DimensionCap {
            dim: n,
            cap: EXPM_DIM_CAP,
        });
    }
    if v.len() != n || m.iter().any(|row| row.len() != n) {
        return Err(CqeError::DimensionMismatch(format!(
            "matrix of {n} rows with vector of length {}",
            v.len()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mat = DMatrix::from_fn(n, n, |r, c| m[r][c]);
    let e = mat.exp();
    let out = e * DVector::from_column_slice(v);
    Ok(out.iter().copied().collect())
}

/// Golden-file record of reference eigenvalues.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldenRecord {
    pub fixture: String,
    pub eigenvalues: Vec<f64>,
    pub generator_version: String,
}

pub fn generator_version() -> String {
    format!("cqe {}", env!("CARGO_PKG_VERSION"))
}
