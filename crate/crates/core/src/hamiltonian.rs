//! Electron integrals: FCIDUMP reading and writing, the sector Hamiltonian,
//! and the reduced two-body Hamiltonian `K` with the one-body part embedded.

use std::fmt::Write as _;
use std::io::Read;
use std::sync::Arc;

use rand::Rng;

use crate::error::{CqeError, Result};
use crate::fock::{Basis, Determinant, SparseOperator, TwoBodyTensor, C64};

/// Spatial-orbital integrals in chemist notation.
#[derive(Clone, Debug, PartialEq)]
pub struct IntegralSet {
    pub n_spatial: usize,
    pub n_electrons: usize,
    pub ms2: i32,
    pub core_energy: f64,
    /// `h[p * n + q]`
    pub one_body: Vec<f64>,
    /// `(pq|rs)` at `((p * n + q) * n + r) * n + s`
    pub two_body: Vec<f64>,
    /// Kept only so that files round-trip; never interpreted.
    pub orbsym: Vec<i64>,
    pub isym: i64,
}

impl IntegralSet {
    pub fn zeros(n_spatial: usize, n_electrons: usize, ms2: i32) -> Self {
        IntegralSet {
            n_spatial,
            n_electrons,
            ms2,
            core_energy: 0.0,
            one_body: vec![0.0; n_spatial * n_spatial],
            two_body: vec![0.0; n_spatial.pow(4)],
            orbsym: vec![1; n_spatial],
            isym: 1,
        }
    }

    /// Random real integrals with full permutational symmetry, for tests.
    pub fn random<R: Rng + ?Sized>(n_spatial: usize, n_electrons: usize, rng: &mut R) -> Self {
        let n = n_spatial;
        let mut ints = IntegralSet::zeros(n, n_electrons, (n_electrons % 2) as i32);
        ints.core_energy = rng.gen_range(-1.0..1.0);
        for p in 0..n {
            for q in 0..=p {
                ints.set_h(p, q, rng.gen_range(-1.0..1.0));
            }
        }
        for p in 0..n {
            for q in 0..n {
                for r in 0..n {
                    for s in 0..n {
                        if (p, q) <= (r, s) {
                            ints.set_eri(p, q, r, s, rng.gen_range(-0.5..0.5));
                        }
                    }
                }
            }
        }
        ints
    }

    #[inline]
    pub fn h(&self, p: usize, q: usize) -> f64 {
        self.one_body[p * self.n_spatial + q]
    }

    #[inline]
    pub fn eri(&self, p: usize, q: usize, r: usize, s: usize) -> f64 {
        let n = self.n_spatial;
        self.two_body[((p * n + q) * n + r) * n + s]
    }

    pub fn set_h(&mut self, p: usize, q: usize, v: f64) {
        let n = self.n_spatial;
        self.one_body[p * n + q] = v;
        self.one_body[q * n + p] = v;
    }

    /// Set `(pq|rs)` and its seven permutational images.
    pub fn set_eri(&mut self, p: usize, q: usize, r: usize, s: usize, v: f64) {
        let n = self.n_spatial;
        for (a, b, c, d) in [
            (p, q, r, s),
            (q, p, r, s),
            (p, q, s, r),
            (q, p, s, r),
            (r, s, p, q),
            (s, r, p, q),
            (r, s, q, p),
            (s, r, q, p),
        ] {
            self.two_body[((a * n + b) * n + c) * n + d] = v;
        }
    }

    /// Largest violation of `h` symmetry and of the 8-fold `(pq|rs)` symmetry.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.n_spatial;
        let mut worst = 0.0f64;
        for p in 0..n {
            for q in 0..n {
                worst = worst.max((self.h(p, q) - self.h(q, p)).abs());
                for r in 0..n {
                    for s in 0..n {
                        let v = self.eri(p, q, r, s);
                        for w in [
                            self.eri(q, p, r, s),
                            self.eri(p, q, s, r),
                            self.eri(r, s, p, q),
                        ] {
                            worst = worst.max((v - w).abs());
                        }
                    }
                }
            }
        }
        worst
    }

    pub fn n_spin_orbitals(&self) -> usize {
        2 * self.n_spatial
    }

    /// Basis of the (NELEC, MS2) sector described by the header.
    pub fn sector_basis(&self) -> Result<Arc<Basis>> {
        Basis::build(self.n_spin_orbitals(), self.n_electrons, self.ms2)
    }
}

fn fcidump_err(line: usize, msg: impl Into<String>) -> CqeError {
    CqeError::Fcidump {
        line,
        msg: msg.into(),
    }
}

/// Parse FCIDUMP text. Records `v 0 0 0 0` set the core energy, `v i j 0 0`
/// one-body `h_ij`, `v i 0 0 0` (orbital energies) are skipped, and
/// everything else is a two-body `(ij|kl)`. Indices are 1-based.
pub fn parse_fcidump(text: &str) -> Result<IntegralSet> {
    let mut header = String::new();
    let mut lines = text.lines().enumerate();
    let mut header_done = false;
    for (_, line) in lines.by_ref() {
        let trimmed = line.trim();
        let upper = trimmed.to_ascii_uppercase();
        if upper.starts_with("&END") || upper == "/" {
            header_done = true;
            break;
        }
        if let Some(pos) = upper.find("&END") {
            header.push_str(&trimmed[..pos]);
            header_done = true;
            break;
        }
        header.push_str(trimmed);
        header.push(',');
    }
    if !header_done {
        return Err(fcidump_err(0, "header is not terminated by &END or /"));
    }

    let mut keys: Vec<(String, Vec<String>)> = Vec::new();
    let body = header.trim();
    let body = match body.get(..4) {
        Some(prefix) if prefix.eq_ignore_ascii_case("&FCI") => &body[4..],
        _ => return Err(fcidump_err(1, "header must start with &FCI")),
    };
    for token in body.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        if let Some((k, v)) = token.split_once('=') {
            keys.push((k.trim().to_ascii_uppercase(), vec![v.trim().to_string()]));
        } else if let Some(last) = keys.last_mut() {
            last.1.push(token.to_string());
        } else {
            return Err(fcidump_err(1, format!("unexpected header token '{token}'")));
        }
    }
    let get_int = |name: &str| -> Result<Option<i64>> {
        match keys.iter().find(|(k, _)| k == name) {
            None => Ok(None),
            Some((_, v)) => v[0]
                .parse::<i64>()
                .map(Some)
                .map_err(|_| fcidump_err(1, format!("{name} is not an integer: '{}'", v[0]))),
        }
    };
    let norb = get_int("NORB")?.ok_or_else(|| fcidump_err(1, "missing NORB"))?;
    let nelec = get_int("NELEC")?.ok_or_else(|| fcidump_err(1, "missing NELEC"))?;
    let ms2 = get_int("MS2")?.unwrap_or(0);
    let isym = get_int("ISYM")?.unwrap_or(1);
    if norb <= 0 || nelec < 0 || nelec > 2 * norb {
        return Err(fcidump_err(1, format!("invalid NORB={norb} NELEC={nelec}")));
    }
    let n = norb as usize;
    let mut ints = IntegralSet::zeros(n, nelec as usize, ms2 as i32);
    ints.isym = isym;
    if let Some((_, syms)) = keys.iter().find(|(k, _)| k == "ORBSYM") {
        ints.orbsym = syms
            .iter()
            .map(|s| {
                s.parse::<i64>()
                    .map_err(|_| fcidump_err(1, format!("ORBSYM entry '{s}' is not an integer")))
            })
            .collect::<Result<_>>()?;
    }

    for (idx, line) in lines {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 5 {
            return Err(fcidump_err(
                lineno,
                format!("expected 'value i j k l', got {} fields", fields.len()),
            ));
        }
        let value: f64 = fields[0]
            .replace(['D', 'd'], "E")
            .parse()
            .map_err(|_| fcidump_err(lineno, format!("non-numeric value '{}'", fields[0])))?;
        let mut idx4 = [0usize; 4];
        for (slot, f) in idx4.iter_mut().zip(&fields[1..]) {
            let v: i64 = f
                .parse()
                .map_err(|_| fcidump_err(lineno, format!("non-integer index '{f}'")))?;
            if v < 0 || v > norb {
                return Err(fcidump_err(
                    lineno,
                    format!("index {v} out of range 0..={norb}"),
                ));
            }
            *slot = v as usize;
        }
        match idx4 {
            [0, 0, 0, 0] => ints.core_energy = value,
            [_, 0, 0, 0] => {} // orbital energy
            [i, j, 0, 0] => ints.set_h(i - 1, j - 1, value),
            [i, j, k, l] if i > 0 && j > 0 && k > 0 && l > 0 => {
                ints.set_eri(i - 1, j - 1, k - 1, l - 1, value)
            }
            _ => {
                return Err(fcidump_err(
                    lineno,
                    format!("unsupported index pattern {idx4:?}"),
                ))
            }
        }
    }
    Ok(ints)
}

pub fn read_fcidump<R: Read>(mut reader: R) -> Result<IntegralSet> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    parse_fcidump(&text)
}

/// Canonical FCIDUMP text: unique two-body entries (i>=j, k>=l, ij>=kl), then
/// one-body (i>=j), then the core energy. Values are printed with 17
/// significant digits so parsing the output reproduces every bit.
pub fn write_fcidump(ints: &IntegralSet) -> String {
    let n = ints.n_spatial;
    let mut out = String::new();
    let orbsym: Vec<String> = ints.orbsym.iter().map(|s| s.to_string()).collect();
    let _ = writeln!(
        out,
        " &FCI NORB={},NELEC={},MS2={},",
        n, ints.n_electrons, ints.ms2
    );
    let _ = writeln!(out, "  ORBSYM={},", orbsym.join(","));
    let _ = writeln!(out, "  ISYM={},", ints.isym);
    let _ = writeln!(out, " &END");
    let mut record = |v: f64, i: usize, j: usize, k: usize, l: usize| {
        if v != 0.0 {
            let _ = writeln!(out, "{v:>25.16e} {i:>4} {j:>4} {k:>4} {l:>4}");
        }
    };
    let pair = |a: usize, b: usize| a * (a + 1) / 2 + b;
    for i in 0..n {
        for j in 0..=i {
            for k in 0..n {
                for l in 0..=k {
                    if pair(i, j) >= pair(k, l) {
                        record(ints.eri(i, j, k, l), i + 1, j + 1, k + 1, l + 1);
                    }
                }
            }
        }
    }
    for i in 0..n {
        for j in 0..=i {
            record(ints.h(i, j), i + 1, j + 1, 0, 0);
        }
    }
    let _ = writeln!(out, "{:>25.16e} {:>4} {:>4} {:>4} {:>4}", ints.core_energy, 0, 0, 0, 0);
    out
}

#[inline]
fn spin_orbital(spatial: usize, beta: bool) -> usize {
    2 * spatial + beta as usize
}

/// Sector matrix of
/// `E_core + sum h_pq a+_ps a_qs + 1/2 sum (pq|rs) a+_ps a+_rt a_st a_qs`.
pub fn build_hamiltonian(ints: &IntegralSet, basis: &Arc<Basis>) -> Result<SparseOperator> {
    let n = ints.n_spatial;
    if basis.n_spin_orbitals != 2 * n {
        return Err(CqeError::DimensionMismatch(format!(
            "{} spatial orbitals vs basis over {} spin orbitals",
            n, basis.n_spin_orbitals
        )));
    }
    let mut triplets = Vec::new();
    for (col, &det) in basis.dets.iter().enumerate() {
        triplets.push((col, col, C64::new(ints.core_energy, 0.0)));
        for qs in det.occupied() {
            let (q, sigma) = (qs / 2, qs % 2 == 1);
            let (d1, s1) = det.annihilate(qs).unwrap();
            for p in 0..n {
                let h = ints.h(p, q);
                if h == 0.0 {
                    continue;
                }
                if let Some((d2, s2)) = d1.create(spin_orbital(p, sigma)) {
                    if let Some(row) = basis.index_of(d2) {
                        triplets.push((row, col, C64::new(h * s1 * s2, 0.0)));
                    }
                }
            }
            for st in d1.occupied() {
                let (s, tau) = (st / 2, st % 2 == 1);
                let (d2, s2) = d1.annihilate(st).unwrap();
                for r in 0..n {
                    let Some((d3, s3)) = d2.create(spin_orbital(r, tau)) else { continue };
                    for p in 0..n {
                        let v = ints.eri(p, q, r, s);
                        if v == 0.0 {
                            continue;
                        }
                        let Some((d4, s4)) = d3.create(spin_orbital(p, sigma)) else { continue };
                        if let Some(row) = basis.index_of(d4) {
                            triplets.push((row, col, C64::new(0.5 * v * s1 * s2 * s3 * s4, 0.0)));
                        }
                    }
                }
            }
        }
    }
    SparseOperator::from_triplets(basis.clone(), triplets)?.into_hermitian()
}

/// Reduced Hamiltonian `K` with `sum K[i,j,k,l] a+_i a+_j a_l a_k + E_core = H`
/// on every `n_electrons`-electron state. The one-body term enters through
/// `a+_p a_q = (N-1)^-1 sum_r a+_p a+_r a_r a_q`. The result is antisymmetric and
/// Hermitian, so it represents the same operator under either index
/// convention of [`TwoBodyTensor`].
pub fn reduced_hamiltonian_k(ints: &IntegralSet, n_electrons: usize) -> Result<TwoBodyTensor> {
    if n_electrons < 2 {
        return Err(CqeError::TooFewElectrons(n_electrons));
    }
    let n = ints.n_spatial;
    let nso = 2 * n;
    let mut k = TwoBodyTensor::zeros(nso);
    let w = 1.0 / (n_electrons as f64 - 1.0);
    for pp in 0..nso {
        for qq in 0..nso {
            if pp % 2 != qq % 2 {
                continue;
            }
            let h = ints.h(pp / 2, qq / 2);
            if h != 0.0 {
                for r in 0..nso {
                    k[(pp, r, qq, r)] += C64::new(h * w, 0.0);
                }
            }
            for rr in 0..nso {
                for ss in 0..nso {
                    if rr % 2 != ss % 2 {
                        continue;
                    }
                    let v = ints.eri(pp / 2, qq / 2, rr / 2, ss / 2);
                    if v != 0.0 {
                        k[(pp, rr, qq, ss)] += C64::new(0.5 * v, 0.0);
                    }
                }
            }
        }
    }
    Ok(k.antisymmetrized())
}

/// Energy of a single determinant from the occupied-orbital sums
/// `E_core + sum_i h_ii + 1/2 sum_ij [(ii|jj) - delta_spin (ij|ji)]`.
pub fn determinant_energy(ints: &IntegralSet, det: Determinant) -> f64 {
    let occ: Vec<usize> = det.occupied().collect();
    let mut e = ints.core_energy;
    for &i in &occ {
        e += ints.h(i / 2, i / 2);
        for &j in &occ {
            e += 0.5 * ints.eri(i / 2, i / 2, j / 2, j / 2);
            if i % 2 == j % 2 {
                e -= 0.5 * ints.eri(i / 2, j / 2, j / 2, i / 2);
            }
        }
    }
    e
}
