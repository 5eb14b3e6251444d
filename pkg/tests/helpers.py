"""Shared oracles and fixtures-as-functions for the test suite."""
from __future__ import annotations

import csv
import pathlib
from collections import deque

import numpy as np

from adaptmol.smiles import MolGraph, SubgraphState, apply_deletion, candidate_deletions, parse_smiles
from adaptmol.synthetic import random_smiles

DATA = pathlib.Path(__file__).parent / "data"


def corpus_rows() -> list[dict[str, str]]:
    with open(DATA / "grammar_corpus.tsv") as fh:
        return list(csv.DictReader(fh, delimiter="\t"))


def corpus_smiles() -> list[str]:
    return [r["smiles"] for r in corpus_rows()]


def rejected_smiles() -> list[str]:
    return (DATA / "rejected_smiles.txt").read_text().split()


def bfs(adj: dict[int, set[int]], start: int) -> set[int]:
    seen, queue = {start}, deque([start])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return seen


def cyclic_edges(n: int, edges: list[tuple[int, int]]) -> set[tuple[int, int]]:
    """Edges on some cycle: those whose removal leaves their endpoints connected."""
    out = set()
    for e in edges:
        adj: dict[int, set[int]] = {k: set() for k in range(n)}
        for f in edges:
            if f != e:
                adj[f[0]].add(f[1])
                adj[f[1]].add(f[0])
        if e[1] in bfs(adj, e[0]):
            out.add(e)
    return out


def graph_problems(mol: MolGraph) -> list[str]:
    """Every violated MolGraph invariant (empty list when the graph is well formed)."""
    problems = []
    n = mol.num_atoms
    if n == 0:
        return ["no atoms"]
    pairs = [(b.i, b.j) for b in mol.bonds]
    for b in mol.bonds:
        if not (0 <= b.i < b.j < n):
            problems.append(f"bad endpoints {b.i},{b.j}")
        if b.order not in (1, 2, 3):
            problems.append(f"bad order {b.order}")
    if len(set(pairs)) != len(pairs):
        problems.append("duplicate bond")
    adj: dict[int, set[int]] = {k: set() for k in range(n)}
    for i, j in pairs:
        adj[i].add(j)
        adj[j].add(i)
    if len(bfs(adj, 0)) != n:
        problems.append("disconnected")
    ring = cyclic_edges(n, pairs)
    for b in mol.bonds:
        if b.in_ring != ((b.i, b.j) in ring):
            problems.append(f"bond {b.i}-{b.j} ring flag")
    ring_atoms = {x for e in ring for x in e}
    for k, a in enumerate(mol.atoms):
        if a.in_ring != (k in ring_atoms):
            problems.append(f"atom {k} ring flag")
        if a.hydrogens < 0:
            problems.append(f"atom {k} negative H count")
    return problems


def state_is_connected(state: SubgraphState) -> bool:
    keep = state.atoms
    if not keep:
        return False
    adj: dict[int, set[int]] = {k: set() for k in keep}
    for b, m in zip(state.parent.bonds, state.bond_mask):
        if m:
            adj[b.i].add(b.j)
            adj[b.j].add(b.i)
    return bfs(adj, min(keep)) == set(keep)


def random_molecules(count: int, seed: int, max_bonds: int | None = None,
                     min_atoms: int = 1, motif: bool | None = None) -> list[MolGraph]:
    rng = np.random.default_rng(seed)
    out, seen = [], set()
    while len(out) < count:
        with_motif = bool(rng.random() < 0.5) if motif is None else motif
        smi = random_smiles(rng, with_motif, 1, 4)
        if smi in seen:
            continue
        mol = parse_smiles(smi)
        if mol.num_atoms < min_atoms or (max_bonds is not None and len(mol.bonds) > max_bonds):
            continue
        seen.add(smi)
        out.append(mol)
    return out


def random_state(mol: MolGraph, rng: np.random.Generator) -> SubgraphState:
    """Walk a random number of random legal deletions from the full molecule."""
    state = SubgraphState.full(mol)
    for _ in range(int(rng.integers(0, mol.num_atoms))):
        actions = candidate_deletions(state)
        if not actions:
            break
        state = apply_deletion(state, actions[int(rng.integers(len(actions)))])
    return state


def reachable_states(mol: MolGraph) -> dict[frozenset[int], SubgraphState]:
    """Every state reachable from the full molecule by legal deletions (memoised DFS)."""
    seen: dict[frozenset[int], SubgraphState] = {}
    stack = [SubgraphState.full(mol)]
    while stack:
        s = stack.pop()
        if s.atoms in seen:
            continue
        seen[s.atoms] = s
        for a in candidate_deletions(s):
            stack.append(SubgraphState.from_atoms(mol, s.atoms - a.removed))
    return seen


SMILES_ALPHABET = list("CNOSPFBIcnospb()[]=#-:+123456789%0H@/\\.") + ["Cl", "Br", "[nH]", "[NH3+]", "C1", "c1"]


def fuzz_strings(count: int, seed: int) -> list[str]:
    """A third each: random printable ASCII, SMILES-alphabet token soup, and mutated corpus SMILES."""
    rng = np.random.default_rng(seed)
    corpus = corpus_smiles()
    out = []
    for k in range(count):
        n = int(rng.integers(1, 25))
        if k % 3 == 1:
            out.append("".join(chr(int(c)) for c in rng.integers(32, 127, n)))
        elif k % 3 == 0:
            out.append("".join(SMILES_ALPHABET[int(i)] for i in rng.integers(len(SMILES_ALPHABET), size=n)))
        else:
            out.append(mutate(corpus[int(rng.integers(len(corpus)))], rng))
    return out


def mutate(text: str, rng: np.random.Generator) -> str:
    """One to three random deletions, insertions, substitutions or adjacent swaps."""
    chars = list(text)
    for _ in range(int(rng.integers(1, 4))):
        op = int(rng.integers(4))
        pos = int(rng.integers(len(chars) + 1))
        tok = SMILES_ALPHABET[int(rng.integers(len(SMILES_ALPHABET)))]
        if op == 0 and chars:
            del chars[min(pos, len(chars) - 1)]
        elif op == 1:
            chars.insert(pos, tok)
        elif op == 2 and chars:
            chars[min(pos, len(chars) - 1)] = tok
        elif len(chars) > 1:
            i = min(pos, len(chars) - 2)
            chars[i], chars[i + 1] = chars[i + 1], chars[i]
    return "".join(chars)


def jacobi_eigen(a: np.ndarray, tol: float = 1e-14, sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi rotations for a symmetric matrix; eigenvalues sorted descending."""
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    for _ in range(sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2 * a[p, q])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1)) if theta != 0 else 1.0
                c = 1 / np.sqrt(t * t + 1)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q], rot[q, p] = s, -s
                a = rot.T @ a @ rot
                v = v @ rot
    vals = np.diag(a)
    order = np.argsort(-vals)
    return vals[order], v[:, order]


# ---------------------------------------------------------------- metric oracles

def brute_roc_auc(scores, labels) -> float:
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def brute_average_precision(scores, labels) -> float:
    n = len(scores)

    def ahead(j, i):  # j is ranked at or before i
        return scores[j] > scores[i] or (scores[j] == scores[i] and j <= i)

    total = 0.0
    for i in range(n):
        if labels[i] != 1:
            continue
        rank = sum(1 for j in range(n) if ahead(j, i))
        hits = sum(1 for j in range(n) if ahead(j, i) and labels[j] == 1)
        total += hits / rank
    return total / sum(labels)


def brute_f1(preds, labels) -> float:
    tp = fp = fn = 0
    for p, y in zip(preds, labels):
        tp += p == 1 and y == 1
        fp += p == 1 and y == 0
        fn += p == 0 and y == 1
    return 0.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)


def metric_instances(count: int, seed: int):
    """Random (scores, labels, predictions) triples with ties and both classes, n <= 30."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        n = int(rng.integers(2, 31))
        labels = [int(v) for v in rng.integers(0, 2, n)]
        if len(set(labels)) < 2:
            continue
        levels = int(rng.integers(2, 12))
        scores = [float(v) for v in rng.integers(0, levels, n) / levels]
        preds = [int(v) for v in rng.integers(0, 2, n)]
        out.append((scores, labels, preds))
    return out


def exhaustive_best(mol: MolGraph, scorer, cfg) -> float | None:
    """Best score over every reachable state inside the size window and above the threshold."""
    scores = [
        scorer(s) for s in reachable_states(mol).values()
        if cfg.min_atoms <= s.size <= cfg.max_atoms
    ]
    scores = [x for x in scores if x >= cfg.delta]
    return max(scores, default=None)


def balanced_support(ds, task: str, k: int) -> tuple[list[str], list[int]]:
    """The first k positives and first k negatives of a task, in dataset order."""
    col = ds.task_names.index(task)
    pos = [i for i in range(len(ds)) if ds.labels[i, col] == 1][:k]
    neg = [i for i in range(len(ds)) if ds.labels[i, col] == 0][:k]
    return [ds.smiles[i] for i in pos + neg], [1] * len(pos) + [0] * len(neg)
