"""Synthetic few-shot benchmark whose label is the presence of an amide (N-C=O) motif."""
from __future__ import annotations

import numpy as np

from .episodes import Dataset, TaskSplit
from .smiles import MolGraph, parse_smiles

FILLER_UNITS = [
    "C", "CC", "CCC", "C(C)C", "C(C)(C)C", "c1ccccc1", "C1CCCCC1", "C1CCCC1", "c1ccncc1",
    "c1ccsc1", "O", "OC", "S", "C(F)(F)F", "C(Cl)", "C=C", "COC", "CC(C)",
]
DECOY_UNITS = [
    "N", "N(C)", "C(=O)", "C(=O)O", "C#N", "CO", "C(O)", "OC(C)", "C(=O)C",
    "NC(=S)", "C(=S)N", "NC(=C)C",
]
MOTIF_UNITS = ["NC(=O)", "C(=O)N", "C(=O)N(C)", "NC(=O)C"]


def has_amide(mol: MolGraph) -> bool:
    """True if some carbon has a double bond to O and a non-aromatic single bond to N."""
    for c, atom in enumerate(mol.atoms):
        if atom.symbol != "C":
            continue
        carbonyl = amine = False
        for b in mol.bonds:
            if c not in (b.i, b.j):
                continue
            other = mol.atoms[b.j if b.i == c else b.i]
            if other.symbol == "O" and b.order == 2:
                carbonyl = True
            elif other.symbol == "N" and b.order == 1 and not b.aromatic:
                amine = True
        if carbonyl and amine:
            return True
    return False


def amide_atoms(mol: MolGraph) -> list[set[int]]:
    """Atom index triples (N, C, O) of every amide motif in the molecule."""
    out = []
    for b in mol.bonds:
        for c, o in ((b.i, b.j), (b.j, b.i)):
            if mol.atoms[c].symbol == "C" and mol.atoms[o].symbol == "O" and b.order == 2:
                for n in mol.neighbors[c]:
                    nb = mol.bonds[mol.bond_index[(min(c, n), max(c, n))]]
                    if mol.atoms[n].symbol == "N" and nb.order == 1 and not nb.aromatic:
                        out.append({n, c, o})
    return out


def random_smiles(rng: np.random.Generator, with_motif: bool, min_units: int = 2,
                  max_units: int = 4) -> str:
    n = int(rng.integers(min_units, max_units + 1))
    units = [FILLER_UNITS[int(rng.integers(len(FILLER_UNITS)))] for _ in range(n)]
    if rng.random() < 0.6:
        units.insert(int(rng.integers(len(units) + 1)), DECOY_UNITS[int(rng.integers(len(DECOY_UNITS)))])
    if with_motif:
        pos = int(rng.integers(1, len(units))) if len(units) > 1 else 1
        units.insert(pos, MOTIF_UNITS[int(rng.integers(len(MOTIF_UNITS)))])
    return "".join(units)


def motif_dataset(n_molecules: int = 500, n_train_tasks: int = 8, n_test_tasks: int = 2,
                  seed: int = 0, missing: float = 0.2, noise: float = 0.0) -> tuple[Dataset, TaskSplit]:
    """Molecules with about half carrying the motif; every task labels motif presence.

    Tasks differ only in which molecules are labelled (``missing`` fraction)
    and in optional per-task label flips (``noise``).
    """
    rng = np.random.default_rng(seed)
    smiles, graphs, truth = [], [], []
    seen = set()
    while len(smiles) < n_molecules:
        smi = random_smiles(rng, with_motif=bool(rng.random() < 0.5))
        if smi in seen:
            continue
        g = parse_smiles(smi)
        seen.add(smi)
        smiles.append(smi)
        graphs.append(g)
        truth.append(float(has_amide(g)))
    n_tasks = n_train_tasks + n_test_tasks
    y = np.array(truth)
    labels = np.tile(y[:, None], (1, n_tasks))
    flips = rng.random(labels.shape) < noise
    labels = np.where(flips, 1.0 - labels, labels)
    labels[rng.random(labels.shape) < missing] = np.nan
    names = [f"amide{t}" for t in range(n_tasks)]
    split = TaskSplit(tuple(names[:n_train_tasks]), tuple(names[n_train_tasks:]))
    return Dataset(smiles, graphs, labels, names), split
