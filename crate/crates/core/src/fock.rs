//! Fock-space plumbing: determinants, fixed-(N, Sz) sector bases, fermionic
//! string application and assembly of second-quantized operators as sparse
//! matrices on a sector.
//!
//! Spin orbital `p` lives on bit `p`; even bits are alpha, odd bits beta, so
//! spatial orbital `k` owns bits `2k` and `2k + 1`. Fermionic signs follow the
//! Jordan-Wigner convention: acting on orbital `p` picks up the parity of the
//! occupied orbitals strictly below `p`.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{CqeError, Result};

pub type C64 = Complex64;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

/// Occupation-number bitstring over spin orbitals.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Determinant(pub u64);

impl Determinant {
    pub fn from_orbitals(orbitals: &[usize]) -> Self {
        Determinant(orbitals.iter().fold(0u64, |m, &p| m | (1u64 << p)))
    }

    #[inline]
    pub fn is_occupied(self, p: usize) -> bool {
        (self.0 >> p) & 1 == 1
    }

    #[inline]
    pub fn n_electrons(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Twice the Sz quantum number: alpha count minus beta count.
    pub fn sz_twice(self) -> i32 {
        let alpha = (self.0 & 0x5555_5555_5555_5555).count_ones() as i32;
        let beta = (self.0 & 0xAAAA_AAAA_AAAA_AAAA).count_ones() as i32;
        alpha - beta
    }

    pub fn occupied(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let p = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(p)
            }
        })
    }

    /// (-1)^(number of occupied orbitals below `p`)
    #[inline]
    fn parity_below(self, p: usize) -> f64 {
        let below = self.0 & ((1u64 << p) - 1);
        if below.count_ones().is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    }

    #[inline]
    pub(crate) fn annihilate(self, p: usize) -> Option<(Determinant, f64)> {
        if self.is_occupied(p) {
            Some((Determinant(self.0 & !(1u64 << p)), self.parity_below(p)))
        } else {
            None
        }
    }

    #[inline]
    pub(crate) fn create(self, p: usize) -> Option<(Determinant, f64)> {
        if self.is_occupied(p) {
            None
        } else {
            Some((Determinant(self.0 | (1u64 << p)), self.parity_below(p)))
        }
    }
}

impl fmt::Debug for Determinant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Determinant({:#b})", self.0)
    }
}

/// Elementary ladder operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ladder {
    Create(usize),
    Annihilate(usize),
}

/// Apply an operator string to a determinant. `ops` is written left to
/// right as in the algebra, so the last element acts first. Returns `None`
/// when the string annihilates the determinant.
pub fn apply_string(
    det: Determinant,
    ops: &[Ladder],
    n_spin_orbitals: usize,
) -> Result<Option<(Determinant, f64)>> {
    let mut current = det;
    let mut sign = 1.0;
    for op in ops.iter().rev() {
        let p = match *op {
            Ladder::Create(p) | Ladder::Annihilate(p) => p,
        };
        if p >= n_spin_orbitals {
            return Err(CqeError::OrbitalOutOfRange {
                index: p,
                n_spin_orbitals,
            });
        }
        let step = match *op {
            Ladder::Create(p) => current.create(p),
            Ladder::Annihilate(p) => current.annihilate(p),
        };
        match step {
            Some((next, s)) => {
                current = next;
                sign *= s;
            }
            None => return Ok(None),
        }
    }
    Ok(Some((current, sign)))
}

/// All determinants of a fixed (N, Sz) sector in increasing bitmask order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Basis {
    pub n_spin_orbitals: usize,
    pub n_electrons: usize,
    pub sz_twice: i32,
    pub dets: Vec<Determinant>,
}

impl Basis {
    pub fn build(n_spin_orbitals: usize, n_electrons: usize, sz_twice: i32) -> Result<Arc<Basis>> {
        if !n_spin_orbitals.is_multiple_of(2) {
            return Err(CqeError::InvalidSector(format!(
                "odd spin-orbital count {n_spin_orbitals}"
            )));
        }
        if n_spin_orbitals > 62 {
            return Err(CqeError::InvalidSector(format!(
                "{n_spin_orbitals} spin orbitals exceed the 62-bit determinant width"
            )));
        }
        if n_electrons > n_spin_orbitals {
            return Err(CqeError::InvalidSector(format!(
                "{n_electrons} electrons in {n_spin_orbitals} spin orbitals"
            )));
        }
        let mut dets = Vec::new();
        if n_electrons == 0 {
            if sz_twice == 0 {
                dets.push(Determinant(0));
            }
        } else {
            // Gosper's hack enumerates fixed-popcount masks in increasing order.
            let limit = 1u64 << n_spin_orbitals;
            let mut mask = (1u64 << n_electrons) - 1;
            while mask < limit {
                let det = Determinant(mask);
                if det.sz_twice() == sz_twice {
                    dets.push(det);
                }
                let c = mask & mask.wrapping_neg();
                let r = mask + c;
                mask = (((r ^ mask) >> 2) / c) | r;
            }
        }
        if dets.is_empty() {
            return Err(CqeError::EmptySector {
                n_spin_orbitals,
                n_electrons,
                sz_twice,
            });
        }
        Ok(Arc::new(Basis {
            n_spin_orbitals,
            n_electrons,
            sz_twice,
            dets,
        }))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dets.len()
    }

    #[inline]
    pub fn n_spatial(&self) -> usize {
        self.n_spin_orbitals / 2
    }

    #[inline]
    pub fn index_of(&self, det: Determinant) -> Option<usize> {
        self.dets.binary_search(&det).ok()
    }
}

/// Shorthand for [`Basis::build`].
pub fn build_basis(n_spin_orbitals: usize, n_electrons: usize, sz_twice: i32) -> Result<Arc<Basis>> {
    Basis::build(n_spin_orbitals, n_electrons, sz_twice)
}

pub(crate) fn same_basis(a: &Arc<Basis>, b: &Arc<Basis>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

/// Dense rank-4 coefficient array over spin orbitals.
///
/// Used both for two-body operator coefficients and for two-body expectation
/// tensors (2-RDM, residuals). As an operator, `T[s, t, p, q]` multiplies
/// `a+_p a+_q a_t a_s`; as an expectation tensor `X[i, j, k, l]` stores
/// `<a+_i a+_j a_l a_k ...>`. With these conventions the directional
/// derivative of the energy along `T` is `2 Re sum(conj(T) * R)` elementwise.
#[derive(Clone, PartialEq)]
pub struct TwoBodyTensor {
    n: usize,
    data: Vec<C64>,
}

impl fmt::Debug for TwoBodyTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TwoBodyTensor")
            .field("n", &self.n)
            .field("frobenius", &self.frobenius_norm())
            .finish()
    }
}

impl TwoBodyTensor {
    pub fn zeros(n: usize) -> Self {
        TwoBodyTensor {
            n,
            data: vec![ZERO; n * n * n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize, usize, usize) -> C64) -> Self {
        let mut t = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        t[(i, j, k, l)] = f(i, j, k, l);
                    }
                }
            }
        }
        t
    }

    /// Random antisymmetrized tensor with entries drawn uniformly from
    /// [-1, 1] (real and imaginary parts when `complex`).
    pub fn random<R: Rng + ?Sized>(n: usize, complex: bool, rng: &mut R) -> Self {
        let t = Self::from_fn(n, |_, _, _, _| {
            let re = rng.gen_range(-1.0..1.0);
            let im = if complex { rng.gen_range(-1.0..1.0) } else { 0.0 };
            C64::new(re, im)
        });
        t.antisymmetrized()
    }

    #[inline]
    pub fn n_orbitals(&self) -> usize {
        self.n
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        ((i * self.n + j) * self.n + k) * self.n + l
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    /// Pair-matrix adjoint: `adj[i, j, k, l] = conj(T[k, l, i, j])`.
    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros(self.n);
        let n = self.n;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        out[(i, j, k, l)] = self[(k, l, i, j)].conj();
                    }
                }
            }
        }
        out
    }

    pub fn hermitian_part(&self) -> Self {
        (self + &self.adjoint()) * 0.5
    }

    pub fn antihermitian_part(&self) -> Self {
        (self - &self.adjoint()) * 0.5
    }

    /// Project onto the antisymmetric subspace
    /// `T[i,j,k,l] = -T[j,i,k,l] = -T[i,j,l,k]`. This leaves the represented
    /// operator unchanged.
    pub fn antisymmetrized(&self) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        out[(i, j, k, l)] = (self[(i, j, k, l)] - self[(j, i, k, l)]
                            - self[(i, j, l, k)]
                            + self[(j, i, l, k)])
                            * 0.25;
                    }
                }
            }
        }
        out
    }

    pub fn antisymmetry_defect(&self) -> f64 {
        let n = self.n;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let v = self[(i, j, k, l)];
                        worst = worst
                            .max((v + self[(j, i, k, l)]).norm())
                            .max((v + self[(i, j, l, k)]).norm());
                    }
                }
            }
        }
        worst
    }

    /// Frobenius norm over all four indices; antisymmetric images are not
    /// de-duplicated.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `sum(conj(self) * other)`.
    pub fn inner(&self, other: &Self) -> C64 {
        assert_eq!(self.n, other.n, "tensor size mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.n, other.n, "tensor size mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn scale(&self, c: C64) -> Self {
        TwoBodyTensor {
            n: self.n,
            data: self.data.iter().map(|z| z * c).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl Index<(usize, usize, usize, usize)> for TwoBodyTensor {
    type Output = C64;
    #[inline]
    fn index(&self, (i, j, k, l): (usize, usize, usize, usize)) -> &C64 {
        &self.data[self.offset(i, j, k, l)]
    }
}

impl IndexMut<(usize, usize, usize, usize)> for TwoBodyTensor {
    #[inline]
    fn index_mut(&mut self, (i, j, k, l): (usize, usize, usize, usize)) -> &mut C64 {
        let o = self.offset(i, j, k, l);
        &mut self.data[o]
    }
}

impl<'a> Add<&'a TwoBodyTensor> for &'a TwoBodyTensor {
    type Output = TwoBodyTensor;
    fn add(self, rhs: &TwoBodyTensor) -> TwoBodyTensor {
        assert_eq!(self.n, rhs.n, "tensor size mismatch");
        TwoBodyTensor {
            n: self.n,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl<'a> Sub<&'a TwoBodyTensor> for &'a TwoBodyTensor {
    type Output = TwoBodyTensor;
    fn sub(self, rhs: &TwoBodyTensor) -> TwoBodyTensor {
        assert_eq!(self.n, rhs.n, "tensor size mismatch");
        TwoBodyTensor {
            n: self.n,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul<f64> for TwoBodyTensor {
    type Output = TwoBodyTensor;
    fn mul(mut self, rhs: f64) -> TwoBodyTensor {
        self.data.iter_mut().for_each(|z| *z *= rhs);
        self
    }
}

impl Neg for TwoBodyTensor {
    type Output = TwoBodyTensor;
    fn neg(self) -> TwoBodyTensor {
        self * -1.0
    }
}

/// Compressed-row sparse matrix of an operator restricted to a sector.
#[derive(Clone, Debug)]
pub struct SparseOperator {
    basis: Arc<Basis>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
    hermitian: bool,
}

impl SparseOperator {
    /// Assemble from (row, col, value) triplets; duplicates are summed and
    /// exact zeros dropped.
    pub fn from_triplets(basis: Arc<Basis>, mut triplets: Vec<(usize, usize, C64)>) -> Result<Self> {
        let dim = basis.dim();
        if let Some(&(r, c, _)) = triplets.iter().find(|&&(r, c, _)| r >= dim || c >= dim) {
            return Err(CqeError::DimensionMismatch(format!(
                "entry ({r}, {c}) outside dimension {dim}"
            )));
        }
        triplets.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<C64> = Vec::with_capacity(triplets.len());
        let mut rows = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            if let (Some(&lr), Some(&lc)) = (rows.last(), cols.last()) {
                if lr == r && lc == c {
                    *vals.last_mut().unwrap() += v;
                    continue;
                }
            }
            rows.push(r);
            cols.push(c);
            vals.push(v);
        }
        let keep: Vec<bool> = vals.iter().map(|v| *v != ZERO).collect();
        let mut k = 0;
        let (mut c2, mut v2) = (Vec::with_capacity(cols.len()), Vec::with_capacity(vals.len()));
        for ((r, c), v) in rows.iter().zip(&cols).zip(&vals) {
            if keep[k] {
                row_ptr[r + 1] += 1;
                c2.push(*c);
                v2.push(*v);
            }
            k += 1;
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(SparseOperator {
            basis,
            row_ptr,
            cols: c2,
            vals: v2,
            hermitian: false,
        })
    }

    pub fn identity(basis: Arc<Basis>) -> Self {
        let dim = basis.dim();
        SparseOperator {
            basis,
            row_ptr: (0..=dim).collect(),
            cols: (0..dim).collect(),
            vals: vec![ONE; dim],
            hermitian: true,
        }
    }

    pub fn zero(basis: Arc<Basis>) -> Self {
        let dim = basis.dim();
        SparseOperator {
            basis,
            row_ptr: vec![0; dim + 1],
            cols: Vec::new(),
            vals: Vec::new(),
            hermitian: true,
        }
    }

    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn is_flagged_hermitian(&self) -> bool {
        self.hermitian
    }

    /// Mark as Hermitian after verifying `M = M^dagger` to 1e-12.
    pub fn into_hermitian(mut self) -> Result<Self> {
        let defect = self.hermitian_defect();
        if defect > 1e-12 {
            return Err(CqeError::NotHermitian(defect));
        }
        self.hermitian = true;
        Ok(self)
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim()).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.cols[k], self.vals[k]))
        })
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        match self.cols[range.clone()].binary_search(&col) {
            Ok(k) => self.vals[range.start + k],
            Err(_) => ZERO,
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<C64>> {
        let dim = self.dim();
        let mut m = vec![vec![ZERO; dim]; dim];
        for (r, c, v) in self.entries() {
            m[r][c] += v;
        }
        m
    }

    pub fn adjoint(&self) -> Self {
        let triplets = self.entries().map(|(r, c, v)| (c, r, v.conj())).collect();
        let mut out = Self::from_triplets(self.basis.clone(), triplets)
            .expect("adjoint of in-range operator");
        out.hermitian = self.hermitian;
        out
    }

    /// Largest elementwise `|M - M^dagger|`.
    pub fn hermitian_defect(&self) -> f64 {
        self.entries()
            .map(|(r, c, v)| (v - self.get(c, r).conj()).norm())
            .fold(0.0, f64::max)
    }

    pub fn antihermitian_defect(&self) -> f64 {
        self.entries()
            .map(|(r, c, v)| (v + self.get(c, r).conj()).norm())
            .fold(0.0, f64::max)
    }

    /// `a * self + b * other`.
    pub fn linear_combination(&self, a: C64, other: &SparseOperator, b: C64) -> Result<Self> {
        if !same_basis(&self.basis, &other.basis) {
            return Err(CqeError::BasisMismatch);
        }
        let triplets = self
            .entries()
            .map(|(r, c, v)| (r, c, a * v))
            .chain(other.entries().map(|(r, c, v)| (r, c, b * v)))
            .collect();
        Self::from_triplets(self.basis.clone(), triplets)
    }

    /// `self + shift * I`, preserving the Hermitian flag for real shifts.
    pub fn shifted(&self, shift: f64) -> Self {
        let id = Self::identity(self.basis.clone());
        let mut out = self
            .linear_combination(ONE, &id, C64::new(shift, 0.0))
            .expect("same basis");
        out.hermitian = self.hermitian;
        out
    }

    pub fn max_abs_diff(&self, other: &SparseOperator) -> f64 {
        self.linear_combination(ONE, other, -ONE)
            .map(|d| d.vals.iter().map(|v| v.norm()).fold(0.0, f64::max))
            .unwrap_or(f64::INFINITY)
    }

    /// `out = M x` on raw amplitude slices of length `dim`.
    pub fn matvec_into(&self, x: &[C64], out: &mut [C64]) {
        debug_assert_eq!(x.len(), self.dim());
        debug_assert_eq!(out.len(), self.dim());
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = ZERO;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *o = acc;
        }
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; self.dim()];
        self.matvec_into(x, &mut out);
        out
    }

    /// Induced 1-norm (max column sum), an upper bound for the spectral norm
    /// of Hermitian matrices.
    pub fn one_norm(&self) -> f64 {
        let mut colsum = vec![0.0; self.dim()];
        for (_, c, v) in self.entries() {
            colsum[c] += v.norm();
        }
        colsum.into_iter().fold(0.0, f64::max)
    }
}

/// Matrix of `sum T[s,t,p,q] a+_p a+_q a_t a_s` on the sector. Terms that would
/// leave the sector are dropped.
pub fn two_body_to_operator(t: &TwoBodyTensor, basis: &Arc<Basis>) -> Result<SparseOperator> {
    let n = basis.n_spin_orbitals;
    if t.n_orbitals() != n {
        return Err(CqeError::DimensionMismatch(format!(
            "tensor over {} orbitals, basis over {}",
            t.n_orbitals(),
            n
        )));
    }
    let mut triplets = Vec::new();
    for (col, &det) in basis.dets.iter().enumerate() {
        let occ: Vec<usize> = det.occupied().collect();
        for (a, &s) in occ.iter().enumerate() {
            let (d1, sg1) = det.annihilate(s).unwrap();
            for &tt in &occ[a + 1..] {
                let (d2, sg2) = d1.annihilate(tt).unwrap();
                for q in 0..n {
                    let Some((d3, sg3)) = d2.create(q) else { continue };
                    for p in 0..q {
                        let Some((d4, sg4)) = d3.create(p) else { continue };
                        let coeff = t[(s, tt, p, q)] - t[(tt, s, p, q)] - t[(s, tt, q, p)]
                            + t[(tt, s, q, p)];
                        if coeff == ZERO {
                            continue;
                        }
                        if let Some(row) = basis.index_of(d4) {
                            triplets.push((row, col, coeff * (sg1 * sg2 * sg3 * sg4)));
                        }
                    }
                }
            }
        }
    }
    SparseOperator::from_triplets(basis.clone(), triplets)
}

/// Amplitude vector over a sector basis, optionally doubled by one dilation
/// ancilla. With an ancilla the layout is `[ancilla |0>; ancilla |1>]`.
#[derive(Clone, Debug)]
pub struct StateVector {
    pub basis: Arc<Basis>,
    pub amplitudes: Vec<C64>,
    pub n_ancilla: u8,
    pub success_prob: f64,
}

impl StateVector {
    pub fn new(basis: Arc<Basis>, amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.len() != basis.dim() {
            return Err(CqeError::DimensionMismatch(format!(
                "{} amplitudes for basis of dimension {}",
                amplitudes.len(),
                basis.dim()
            )));
        }
        Ok(StateVector {
            basis,
            amplitudes,
            n_ancilla: 0,
            success_prob: 1.0,
        })
    }

    pub fn zeros(basis: Arc<Basis>) -> Self {
        let dim = basis.dim();
        StateVector {
            basis,
            amplitudes: vec![ZERO; dim],
            n_ancilla: 0,
            success_prob: 1.0,
        }
    }

    pub fn from_determinant(basis: Arc<Basis>, det: Determinant) -> Result<Self> {
        let idx = basis.index_of(det).ok_or_else(|| {
            CqeError::InvalidSector(format!("{det:?} is not in the basis"))
        })?;
        let mut psi = Self::zeros(basis);
        psi.amplitudes[idx] = ONE;
        Ok(psi)
    }

    /// Normalized random state with Gaussian amplitudes.
    pub fn random<R: Rng + ?Sized>(basis: Arc<Basis>, complex: bool, rng: &mut R) -> Self {
        use rand_distr::StandardNormal;
        let amps = (0..basis.dim())
            .map(|_| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = if complex { rng.sample(StandardNormal) } else { 0.0 };
                C64::new(re, im)
            })
            .collect();
        let mut psi = StateVector::new(basis, amps).expect("dimension matches");
        psi.normalize();
        psi
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Scale to unit norm and return the previous norm. Leaves a zero vector
    /// untouched.
    pub fn normalize(&mut self) -> f64 {
        let nrm = self.norm();
        if nrm > 0.0 {
            let inv = 1.0 / nrm;
            self.amplitudes.iter_mut().for_each(|z| *z *= inv);
        }
        nrm
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.norm_sqr() - 1.0).abs() <= tol
    }

    /// `<self|other>`
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn distance(&self, other: &StateVector) -> f64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Amplitudes of one ancilla branch (the whole vector when undilated).
    pub fn branch(&self, ancilla: usize) -> &[C64] {
        let dim = self.basis.dim();
        &self.amplitudes[ancilla * dim..(ancilla + 1) * dim]
    }

    pub(crate) fn require_undilated(&self) -> Result<()> {
        if self.n_ancilla != 0 {
            return Err(CqeError::DilatedState(self.n_ancilla));
        }
        Ok(())
    }

    /// Rotate the global phase so the largest-magnitude amplitude is real
    /// and positive (ties resolved by lowest index).
    pub fn fix_phase(&mut self) {
        let mut best = 0;
        for (i, z) in self.amplitudes.iter().enumerate() {
            if z.norm() > self.amplitudes[best].norm() + 1e-14 {
                best = i;
            }
        }
        let z = self.amplitudes[best];
        if z.norm() > 0.0 {
            let phase = z.conj() / z.norm();
            self.amplitudes.iter_mut().for_each(|a| *a *= phase);
        }
    }
}

/// `op * psi` without normalization. `psi` must be undilated.
pub fn apply_operator(op: &SparseOperator, psi: &StateVector) -> Result<StateVector> {
    if !same_basis(op.basis(), &psi.basis) {
        return Err(CqeError::BasisMismatch);
    }
    psi.require_undilated()?;
    Ok(StateVector {
        basis: psi.basis.clone(),
        amplitudes: op.matvec(&psi.amplitudes),
        n_ancilla: 0,
        success_prob: psi.success_prob,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn binom(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    // Dense Jordan-Wigner matrices built from 2x2 Kronecker factors; qubit p is
    // bit p of the computational-basis index.
    fn kron(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let (ra, rb) = (a.len(), b.len());
        let mut out = vec![vec![0.0; ra * rb]; ra * rb];
        for i in 0..ra {
            for j in 0..ra {
                for k in 0..rb {
                    for l in 0..rb {
                        out[i * rb + k][j * rb + l] = a[i][j] * b[k][l];
                    }
                }
            }
        }
        out
    }

    fn jw_annihilator(p: usize, n: usize) -> Vec<Vec<f64>> {
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let z = vec![vec![1.0, 0.0], vec![0.0, -1.0]];
        let lower = vec![vec![0.0, 1.0], vec![0.0, 0.0]];
        // highest qubit is the leftmost Kronecker factor
        let mut m = vec![vec![1.0]];
        for q in (0..n).rev() {
            let f = if q == p {
                &lower
            } else if q < p {
                &z
            } else {
                &id
            };
            m = kron(&m, f);
        }
        m
    }

    fn transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = a.len();
        (0..n).map(|i| (0..n).map(|j| a[j][i]).collect()).collect()
    }

    fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = a.len();
        let mut out = vec![vec![0.0; n]; n];
        for i in 0..n {
            for k in 0..n {
                if a[i][k] != 0.0 {
                    for j in 0..n {
                        out[i][j] += a[i][k] * b[k][j];
                    }
                }
            }
        }
        out
    }

    fn dense_string(ops: &[Ladder], n: usize) -> Vec<Vec<f64>> {
        let dim = 1 << n;
        let mut m: Vec<Vec<f64>> = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        for op in ops {
            let f = match *op {
                Ladder::Annihilate(p) => jw_annihilator(p, n),
                Ladder::Create(p) => transpose(&jw_annihilator(p, n)),
            };
            m = matmul(&m, &f);
        }
        m
    }

    fn check_string_against_jw(ops: &[Ladder], n: usize) {
        let dense = dense_string(ops, n);
        for b in 0..(1u64 << n) {
            let got = apply_string(Determinant(b), ops, n).unwrap();
            let col: Vec<(usize, f64)> = (0..1usize << n)
                .filter(|&r| dense[r][b as usize] != 0.0)
                .map(|r| (r, dense[r][b as usize]))
                .collect();
            match got {
                None => assert!(col.is_empty(), "{ops:?} on {b:#b}"),
                Some((d, s)) => {
                    assert_eq!(col, vec![(d.0 as usize, s)], "{ops:?} on {b:#b}");
                }
            }
        }
    }

    #[test]
    fn basis_sizes() {
        assert_eq!(build_basis(4, 0, 0).unwrap().dim(), 1);
        let b = build_basis(4, 2, 0).unwrap();
        assert_eq!(b.dim(), binom(2, 1) * binom(2, 1));
        assert_eq!(build_basis(8, 4, 0).unwrap().dim(), 36);
        assert_eq!(build_basis(12, 6, 0).unwrap().dim(), binom(6, 3).pow(2));
        assert!(b.dets.windows(2).all(|w| w[0] < w[1]));
        assert!(b.dets.iter().all(|d| d.n_electrons() == 2 && d.sz_twice() == 0));
    }

    #[test]
    fn empty_and_invalid_sectors() {
        assert!(matches!(build_basis(4, 2, 4), Err(CqeError::EmptySector { .. })));
        assert!(matches!(build_basis(4, 0, 2), Err(CqeError::EmptySector { .. })));
        assert!(build_basis(5, 2, 0).is_err());
        assert!(build_basis(4, 5, 0).is_err());
    }

    #[test]
    fn single_ladder_examples() {
        let r = apply_string(Determinant(0), &[Ladder::Create(0)], 4).unwrap();
        assert_eq!(r, Some((Determinant(1), 1.0)));
        let r = apply_string(Determinant(1), &[Ladder::Create(0)], 4).unwrap();
        assert_eq!(r, None);
        let r = apply_string(
            Determinant(0b0101),
            &[Ladder::Create(1), Ladder::Annihilate(0)],
            4,
        )
        .unwrap();
        // no occupied orbital lies below orbital 0 or between 0 and 1
        assert_eq!(r, Some((Determinant(0b0110), 1.0)));
        let r = apply_string(
            Determinant(0b0101),
            &[Ladder::Create(3), Ladder::Annihilate(0)],
            4,
        )
        .unwrap();
        assert_eq!(r, Some((Determinant(0b1100), -1.0)));
        assert!(matches!(
            apply_string(Determinant(0), &[Ladder::Create(7)], 4),
            Err(CqeError::OrbitalOutOfRange { .. })
        ));
    }

    #[test]
    fn strings_agree_with_dense_jordan_wigner() {
        let n = 4;
        for p in 0..n {
            for q in 0..n {
                check_string_against_jw(&[Ladder::Create(p), Ladder::Annihilate(q)], n);
                for r in 0..n {
                    for s in 0..n {
                        check_string_against_jw(
                            &[
                                Ladder::Create(p),
                                Ladder::Create(q),
                                Ladder::Annihilate(r),
                                Ladder::Annihilate(s),
                            ],
                            n,
                        );
                    }
                }
            }
        }
        // mixed orderings on six orbitals, sampled
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..60 {
            let ops: Vec<Ladder> = (0..4)
                .map(|_| {
                    let p = rng.gen_range(0..6);
                    if rng.gen_bool(0.5) {
                        Ladder::Create(p)
                    } else {
                        Ladder::Annihilate(p)
                    }
                })
                .collect();
            check_string_against_jw(&ops, 6);
        }
    }

    fn dense_two_body(t: &TwoBodyTensor, n: usize) -> Vec<Vec<C64>> {
        let dim = 1 << n;
        let mut out = vec![vec![ZERO; dim]; dim];
        for s in 0..n {
            for tt in 0..n {
                for p in 0..n {
                    for q in 0..n {
                        let c = t[(s, tt, p, q)];
                        if c == ZERO {
                            continue;
                        }
                        let m = dense_string(
                            &[
                                Ladder::Create(p),
                                Ladder::Create(q),
                                Ladder::Annihilate(tt),
                                Ladder::Annihilate(s),
                            ],
                            n,
                        );
                        for i in 0..dim {
                            for j in 0..dim {
                                out[i][j] += c * m[i][j];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn zero_tensor_gives_zero_operator() {
        let b = build_basis(4, 2, 0).unwrap();
        let op = two_body_to_operator(&TwoBodyTensor::zeros(4), &b).unwrap();
        assert_eq!(op.nnz(), 0);
        assert!(two_body_to_operator(&TwoBodyTensor::zeros(6), &b).is_err());
    }

    #[test]
    fn two_body_matches_dense_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // single antisymmetrized element pair
        let mut single = TwoBodyTensor::zeros(6);
        single[(0, 3, 1, 2)] = C64::new(0.7, 0.0);
        let single = single.antisymmetrized();
        let general = TwoBodyTensor::random(6, true, &mut rng);
        // the raw (non-antisymmetrized) tensor must give the same matrix
        let raw = TwoBodyTensor::from_fn(6, |_, _, _, _| C64::new(rng.gen_range(-1.0..1.0), 0.0));
        for t in [&single, &general, &raw] {
            let dense = dense_two_body(t, 6);
            for (ne, sz) in [(2, 0), (3, 1), (4, 0)] {
                let b = build_basis(6, ne, sz).unwrap();
                let op = two_body_to_operator(t, &b).unwrap();
                for (r, dr) in b.dets.iter().enumerate() {
                    for (c, dc) in b.dets.iter().enumerate() {
                        let want = dense[dr.0 as usize][dc.0 as usize];
                        assert!((op.get(r, c) - want).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn symmetry_classes_map_to_matrix_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = build_basis(8, 4, 0).unwrap();
        let t = TwoBodyTensor::random(8, true, &mut rng);
        let h = two_body_to_operator(&t.hermitian_part(), &b).unwrap();
        let a = two_body_to_operator(&t.antihermitian_part(), &b).unwrap();
        assert!(h.hermitian_defect() < 1e-12);
        assert!(a.antihermitian_defect() < 1e-12);
        assert!(h.into_hermitian().is_ok());
    }

    #[test]
    fn operator_assembly_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b = build_basis(6, 3, 1).unwrap();
        let t1 = TwoBodyTensor::random(6, true, &mut rng);
        let t2 = TwoBodyTensor::random(6, true, &mut rng);
        let (ca, cb) = (C64::new(0.3, -1.1), C64::new(-2.0, 0.4));
        let lhs = two_body_to_operator(&(&t1.scale(ca) + &t2.scale(cb)), &b).unwrap();
        let rhs = two_body_to_operator(&t1, &b)
            .unwrap()
            .linear_combination(ca, &two_body_to_operator(&t2, &b).unwrap(), cb)
            .unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn tensor_split_is_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = TwoBodyTensor::random(4, true, &mut rng);
        let sum = &t.hermitian_part() + &t.antihermitian_part();
        assert!(sum.max_abs_diff(&t) < 1e-15);
        assert!(t.antisymmetry_defect() < 1e-15);
        assert!(t.adjoint().adjoint().max_abs_diff(&t) == 0.0);
    }

    #[test]
    fn apply_operator_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = build_basis(4, 2, 0).unwrap();
        let psi = StateVector::random(b.clone(), true, &mut rng);
        let out = apply_operator(&SparseOperator::identity(b.clone()), &psi).unwrap();
        assert_eq!(out.amplitudes, psi.amplitudes);
        let zero = StateVector::zeros(b.clone());
        let t = TwoBodyTensor::random(4, false, &mut rng);
        let op = two_body_to_operator(&t, &b).unwrap();
        assert!(apply_operator(&op, &zero).unwrap().norm() == 0.0);
        let other = build_basis(4, 2, 2).unwrap();
        assert!(matches!(
            apply_operator(&SparseOperator::identity(other), &psi),
            Err(CqeError::BasisMismatch)
        ));
    }
}
