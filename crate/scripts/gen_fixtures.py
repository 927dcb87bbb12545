#!/usr/bin/env python3
"""Generate the committed FCIDUMP fixtures and reference energies.

Run once from the repository root:

    python3 scripts/gen_fixtures.py
    cargo run --release -p cqe-core --bin cqe -- fcidump normalize --in-place fixtures/*.fcidump

The second step rewrites each file in the canonical layout emitted by the
Rust writer so that parse/serialize round trips are byte-stable.
"""
import json
import os

from pyscf import ao2mo, fci, gto, scf, tools

OUT = os.path.join(os.path.dirname(__file__), "..", "fixtures")

H2_BONDS = [0.5, 0.74, 1.0, 1.25, 1.5, 1.75, 2.0, 2.5]
H4_SIDES = [0.8, 0.9, 1.0, 1.1, 1.25, 1.5, 1.75, 2.0]


def run(label, atom):
    mol = gto.M(atom=atom, basis="sto-3g", unit="Angstrom", verbose=0)
    mf = scf.RHF(mol)
    mf.conv_tol = 1e-12
    e_hf = mf.kernel()
    path = os.path.join(OUT, f"{label}.fcidump")
    tools.fcidump.from_scf(mf, path, tol=1e-14)
    h1 = mf.mo_coeff.T @ mf.get_hcore() @ mf.mo_coeff
    eri = ao2mo.full(mol, mf.mo_coeff)
    cis = fci.direct_spin1.FCI()
    cis.conv_tol = 1e-14
    e_fci, _ = cis.kernel(h1, eri, mol.nao, mol.nelectron, ecore=mol.energy_nuc())
    return {"fixture": label, "e_hf": e_hf, "e_fci": e_fci}


def main():
    os.makedirs(OUT, exist_ok=True)
    refs = []
    for r in H2_BONDS:
        refs.append(run(f"h2_{r:.2f}", f"H 0 0 0; H 0 0 {r}"))
    for b in H4_SIDES:
        atom = f"H 0 0 0; H 1.0 0 0; H 0 {b} 0; H 1.0 {b} 0"
        refs.append(run(f"h4_{b:.2f}", atom))
    with open(os.path.join(OUT, "reference_energies.json"), "w") as fh:
        json.dump({"generator": "pyscf " + __import__("pyscf").__version__,
                   "basis": "sto-3g", "records": refs}, fh, indent=2)
        fh.write("\n")


if __name__ == "__main__":
    main()
