"""SMILES subset parser, molecular graphs, and the subgraph deletion algebra.

Supported: organic-subset atoms (B C N O P S F Cl Br I), aromatic b c n o p s,
bracket atoms with hydrogen count and charge, bonds ``- = # :``, branches,
ring closures (digits and ``%nn``). Stereo marks, isotopes, atom classes,
wildcards and ``.`` disconnections are rejected.
"""
from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import networkx as nx
import numpy as np

ORGANIC = {"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"}
AROMATIC = {"b", "c", "n", "o", "p", "s"}
BRACKET_ELEMENTS = {
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S",
    "Cl", "Ar", "K", "Ca", "Ti", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Ag", "Cd", "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "Pt",
    "Au", "Hg", "Tl", "Pb", "Bi", "Gd",
}
BRACKET_AROMATIC = {"b", "c", "n", "o", "p", "s", "se", "as"}
BOND_SYMBOLS = {"-": (1, False), "=": (2, False), "#": (3, False), ":": (1, True)}

ELEMENT_SLOTS = ["C", "N", "O", "S", "F", "Cl", "Br", "I", "P", "B", "Si", "Se", "Na", "K", "H"]
ATOM_FEATURE_DIM = 16 + 6 + 1 + 1 + 5 + 5

_BRACKET_RE = re.compile(
    r"^(?P<sym>[A-Z][a-z]?|se|as|[bcnops])(?P<h>H(?P<hn>\d)?)?(?P<chg>[+-](?:\d|\+|-)?)?$"
)


class SmilesError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


@dataclass(frozen=True)
class Atom:
    symbol: str  # element symbol, capitalised ("C", "Cl", ...)
    aromatic: bool = False
    charge: int = 0
    hydrogens: int = 0
    in_ring: bool = False


@dataclass(frozen=True)
class Bond:
    i: int
    j: int
    order: int = 1
    aromatic: bool = False
    in_ring: bool = False


@dataclass(frozen=True)
class Token:
    text: str
    offset: int
    kind: str  # atom | bracket | bond | open | close | ring


@dataclass(frozen=True)
class MolGraph:
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    source_smiles: str = ""

    @property
    def num_atoms(self) -> int:
        return len(self.atoms)

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        nbr: list[list[int]] = [[] for _ in self.atoms]
        for b in self.bonds:
            nbr[b.i].append(b.j)
            nbr[b.j].append(b.i)
        return tuple(tuple(sorted(n)) for n in nbr)

    @cached_property
    def bond_index(self) -> dict[tuple[int, int], int]:
        return {(b.i, b.j): k for k, b in enumerate(self.bonds)}

    @cached_property
    def rings(self) -> tuple[tuple[int, ...], ...]:
        """Smallest set of smallest rings as sorted atom-index tuples."""
        g = nx.Graph()
        g.add_nodes_from(range(self.num_atoms))
        g.add_edges_from((b.i, b.j) for b in self.bonds)
        rings = {tuple(sorted(c)) for c in nx.minimum_cycle_basis(g)}
        return tuple(sorted(rings, key=lambda r: (len(r), r)))

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_atoms, self.num_atoms))
        for b in self.bonds:
            a[b.i, b.j] = a[b.j, b.i] = 1.0
        return a

    def degree(self, idx: int) -> int:
        return len(self.neighbors[idx])


# ---------------------------------------------------------------- lexing

def lex(text: str) -> list[Token]:
    if not text:
        raise SmilesError("empty SMILES", 0)
    tokens: list[Token] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "[":
            end = text.find("]", i + 1)
            if end < 0:
                raise SmilesError("unclosed bracket atom", i)
            tokens.append(Token(text[i:end + 1], i, "bracket"))
            i = end + 1
        elif text.startswith(("Cl", "Br"), i):
            tokens.append(Token(text[i:i + 2], i, "atom"))
            i += 2
        elif ch in ORGANIC or ch in AROMATIC:
            tokens.append(Token(ch, i, "atom"))
            i += 1
        elif ch in BOND_SYMBOLS:
            tokens.append(Token(ch, i, "bond"))
            i += 1
        elif ch == "(":
            tokens.append(Token(ch, i, "open"))
            i += 1
        elif ch == ")":
            tokens.append(Token(ch, i, "close"))
            i += 1
        elif ch.isdigit():
            tokens.append(Token(ch, i, "ring"))
            i += 1
        elif ch == "%":
            if len(text[i + 1:i + 3]) == 2 and text[i + 1:i + 3].isdigit():
                tokens.append(Token(text[i:i + 3], i, "ring"))
                i += 3
            else:
                raise SmilesError("'%' must be followed by two digits", i)
        elif ch == ".":
            raise SmilesError("disconnected structures ('.') are not supported", i)
        elif ch in "/\\@":
            raise SmilesError(f"stereochemistry mark {ch!r} is not supported", i)
        else:
            raise SmilesError(f"unknown atom symbol {ch!r}", i)
    return tokens


def _parse_bracket(tok: Token) -> Atom:
    body = tok.text[1:-1]
    if body[:1].isdigit():
        raise SmilesError("isotopes are not supported", tok.offset + 1)
    if "@" in body:
        raise SmilesError("chirality is not supported", tok.offset + 1 + body.index("@"))
    m = _BRACKET_RE.match(body)
    if m is None:
        raise SmilesError(f"malformed bracket atom {tok.text!r}", tok.offset)
    sym = m.group("sym")
    aromatic = sym[0].islower()
    if aromatic:
        if sym not in BRACKET_AROMATIC:
            raise SmilesError(f"unknown aromatic symbol {sym!r}", tok.offset + 1)
        sym = sym.capitalize()
    elif sym not in BRACKET_ELEMENTS:
        raise SmilesError(f"unknown atom symbol {sym!r}", tok.offset + 1)
    h = 0
    if m.group("h"):
        h = int(m.group("hn") or 1)
    chg = m.group("chg") or ""
    charge = 0
    if chg:
        sign = 1 if chg[0] == "+" else -1
        if len(chg) == 1:
            charge = sign
        elif chg[1].isdigit():
            charge = sign * int(chg[1])
        elif chg[1] == chg[0]:
            charge = 2 * sign
        else:
            raise SmilesError(f"malformed charge in {tok.text!r}", tok.offset)
    return Atom(sym, aromatic, charge, h)


# ---------------------------------------------------------------- parsing

def parse_smiles(text: str) -> MolGraph:
    if not text.isascii():
        raise SmilesError("non-ASCII input", next(i for i, c in enumerate(text) if not c.isascii()))
    tokens = lex(text)
    atoms: list[Atom] = []
    bonds: dict[tuple[int, int], tuple[int, bool]] = {}
    bond_order: list[tuple[int, int]] = []
    stack: list[tuple[int, int]] = []  # (atom index, offset of '(')
    prev: int | None = None
    pending: Token | None = None
    open_rings: dict[str, tuple[int, Token | None, int]] = {}
    just_opened = False

    def add_bond(a: int, b: int, sym: Token | None, offset: int) -> None:
        if a == b:
            raise SmilesError("ring closure bonds an atom to itself", offset)
        key = (min(a, b), max(a, b))
        if key in bonds:
            raise SmilesError("duplicate bond", offset)
        if sym is not None:
            order, arom = BOND_SYMBOLS[sym.text]
        else:
            order, arom = 1, atoms[a].aromatic and atoms[b].aromatic
        bonds[key] = (order, arom)
        bond_order.append(key)

    for tok in tokens:
        if tok.kind in ("atom", "bracket"):
            atom = _parse_bracket(tok) if tok.kind == "bracket" else (
                Atom(tok.text.upper(), True) if tok.text in AROMATIC else Atom(tok.text)
            )
            atoms.append(atom)
            idx = len(atoms) - 1
            if prev is not None:
                add_bond(prev, idx, pending, tok.offset)
            elif pending is not None:
                raise SmilesError("bond symbol without a preceding atom", pending.offset)
            prev, pending, just_opened = idx, None, False
        elif tok.kind == "bond":
            if pending is not None:
                raise SmilesError("consecutive bond symbols", tok.offset)
            if prev is None:
                raise SmilesError("bond symbol without a preceding atom", tok.offset)
            pending = tok
        elif tok.kind == "open":
            if prev is None or just_opened or pending is not None:
                raise SmilesError("branch must follow an atom", tok.offset)
            stack.append((prev, tok.offset))
            just_opened = True
        elif tok.kind == "close":
            if not stack:
                raise SmilesError("unbalanced ')'", tok.offset)
            if just_opened:
                raise SmilesError("empty branch", tok.offset)
            if pending is not None:
                raise SmilesError("dangling bond symbol", pending.offset)
            prev, _ = stack.pop()
        else:  # ring closure
            if prev is None or just_opened:
                raise SmilesError("ring closure must follow an atom", tok.offset)
            label = tok.text.lstrip("%")
            if label in open_rings:
                other, sym, _ = open_rings.pop(label)
                if sym is not None and pending is not None and sym.text != pending.text:
                    raise SmilesError("conflicting ring-closure bond symbols", tok.offset)
                add_bond(other, prev, pending or sym, tok.offset)
            else:
                open_rings[label] = (prev, pending, tok.offset)
            pending = None

    if pending is not None:
        raise SmilesError("dangling bond symbol", pending.offset)
    if stack:
        raise SmilesError("unbalanced '('", stack[-1][1])
    if open_rings:
        raise SmilesError("unmatched ring-closure digit", min(o for _, _, o in open_rings.values()))
    if not atoms:
        raise SmilesError("no atoms", 0)

    bond_list = [Bond(i, j, *bonds[(i, j)]) for i, j in bond_order]
    return _with_ring_flags(atoms, bond_list, text)


def _with_ring_flags(atoms: list[Atom], bonds: list[Bond], source: str) -> MolGraph:
    g = nx.Graph()
    g.add_nodes_from(range(len(atoms)))
    g.add_edges_from((b.i, b.j) for b in bonds)
    bridges = {(min(e), max(e)) for e in nx.bridges(g)}
    ring_bonds = [Bond(b.i, b.j, b.order, b.aromatic, (b.i, b.j) not in bridges) for b in bonds]
    ring_atoms = {x for b in ring_bonds if b.in_ring for x in (b.i, b.j)}
    new_atoms = [
        Atom(a.symbol, a.aromatic, a.charge, a.hydrogens, k in ring_atoms)
        for k, a in enumerate(atoms)
    ]
    return MolGraph(tuple(new_atoms), tuple(ring_bonds), source)


def tokenize(text: str) -> list[str]:
    """Lexical tokens of a SMILES string; the string must parse."""
    parse_smiles(text)
    return [t.text for t in lex(text)]


# ---------------------------------------------------------------- features

def _one_hot(pos: int, size: int) -> list[float]:
    v = [0.0] * size
    v[pos] = 1.0
    return v


def atom_feature_matrix(mol: MolGraph) -> np.ndarray:
    rows = []
    for k, a in enumerate(mol.atoms):
        slot = ELEMENT_SLOTS.index(a.symbol) if a.symbol in ELEMENT_SLOTS else 15
        rows.append(
            _one_hot(slot, 16)
            + _one_hot(min(mol.degree(k), 5), 6)
            + [float(a.aromatic), float(a.in_ring)]
            + _one_hot(max(-2, min(2, a.charge)) + 2, 5)
            + _one_hot(min(a.hydrogens, 4), 5)
        )
    return np.array(rows, dtype=np.float64).reshape(len(rows), ATOM_FEATURE_DIM)


def atom_token(atom: Atom) -> str:
    """SMILES spelling of a single atom (bracketed when charge or H count is set)."""
    sym = atom.symbol.lower() if atom.aromatic else atom.symbol
    if atom.charge == 0 and atom.hydrogens == 0 and (atom.symbol in ORGANIC):
        return sym
    h = "" if atom.hydrogens == 0 else ("H" if atom.hydrogens == 1 else f"H{atom.hydrogens}")
    c = ""
    if atom.charge:
        c = ("+" if atom.charge > 0 else "-") + (str(abs(atom.charge)) if abs(atom.charge) > 1 else "")
    return f"[{sym}{h}{c}]"


# ---------------------------------------------------------------- subgraphs

class ContractError(ValueError):
    """A precondition of a subgraph operation was violated."""


@dataclass(frozen=True)
class SubgraphState:
    parent: MolGraph
    atom_mask: tuple[bool, ...]
    bond_mask: tuple[bool, ...] = field(default=())

    def __post_init__(self):
        if not self.bond_mask:
            induced = tuple(self.atom_mask[b.i] and self.atom_mask[b.j] for b in self.parent.bonds)
            object.__setattr__(self, "bond_mask", induced)

    @classmethod
    def full(cls, mol: MolGraph) -> "SubgraphState":
        return cls(mol, (True,) * mol.num_atoms)

    @classmethod
    def from_atoms(cls, mol: MolGraph, atoms: Iterable[int]) -> "SubgraphState":
        keep = set(atoms)
        return cls(mol, tuple(k in keep for k in range(mol.num_atoms)))

    @cached_property
    def atoms(self) -> frozenset[int]:
        return frozenset(k for k, m in enumerate(self.atom_mask) if m)

    @property
    def size(self) -> int:
        return len(self.atoms)

    def kept_indices(self) -> list[int]:
        return sorted(self.atoms)

    def is_valid(self) -> bool:
        if not self.atoms:
            return False
        for b, m in zip(self.parent.bonds, self.bond_mask):
            if m and not (self.atom_mask[b.i] and self.atom_mask[b.j]):
                return False
        return is_connected(self.parent, self.atoms, self.bond_mask)


@dataclass(frozen=True)
class DeletionAction:
    kind: str  # "bond" or "ring"
    index: int  # bond index or ring index in the parent
    removed: frozenset[int]


def _component(mol: MolGraph, start: int, keep: frozenset[int] | set[int],
               bond_mask: tuple[bool, ...] | None = None, skip: int = -1) -> set[int]:
    seen = {start}
    queue = deque([start])
    bidx = mol.bond_index
    while queue:
        u = queue.popleft()
        for v in mol.neighbors[u]:
            if v in seen or v not in keep:
                continue
            k = bidx[(min(u, v), max(u, v))]
            if k == skip or (bond_mask is not None and not bond_mask[k]):
                continue
            seen.add(v)
            queue.append(v)
    return seen


def is_connected(mol: MolGraph, atoms: frozenset[int] | set[int],
                 bond_mask: tuple[bool, ...] | None = None) -> bool:
    if not atoms:
        return False
    return len(_component(mol, min(atoms), atoms, bond_mask)) == len(atoms)


def candidate_deletions(state: SubgraphState) -> list[DeletionAction]:
    """Legal peripheral deletions: splitting acyclic bonds, then removable rings."""
    mol, keep = state.parent, state.atoms
    anchor = 0 if 0 in keep else min(keep)
    actions: list[DeletionAction] = []
    for k, b in enumerate(mol.bonds):
        if not state.bond_mask[k] or b.aromatic or b.in_ring:
            continue
        side_i = _component(mol, b.i, keep, state.bond_mask, skip=k)
        if b.j in side_i:
            continue
        side_j = keep - side_i
        if len(side_i) != len(side_j):
            removed = side_i if len(side_i) < len(side_j) else side_j
        else:
            removed = side_j if anchor in side_i else side_i
        actions.append(DeletionAction("bond", k, frozenset(removed)))
    for r, ring in enumerate(mol.rings):
        ring_set = set(ring)
        if not ring_set <= keep:
            continue
        exclusive = {
            a for a in ring
            if not any(v in keep and v not in ring_set for v in mol.neighbors[a])
        }
        rest = keep - exclusive
        if not exclusive or not rest or not is_connected(mol, rest):
            continue
        actions.append(DeletionAction("ring", r, frozenset(exclusive)))
    return actions


def apply_deletion(state: SubgraphState, action: DeletionAction) -> SubgraphState:
    if action not in candidate_deletions(state):
        raise ContractError(f"{action} is not a legal deletion for this state")
    return SubgraphState.from_atoms(state.parent, state.atoms - action.removed)


def extract_subgraph(state: SubgraphState) -> MolGraph:
    """Standalone graph of the kept atoms, reindexed in parent order."""
    kept = state.kept_indices()
    remap = {old: new for new, old in enumerate(kept)}
    mol = state.parent
    atoms = [mol.atoms[k] for k in kept]
    bonds = [
        Bond(remap[b.i], remap[b.j], b.order, b.aromatic)
        for b, m in zip(mol.bonds, state.bond_mask) if m
    ]
    return _with_ring_flags(atoms, bonds, mol.source_smiles)


def write_smiles(state: SubgraphState) -> str:
    """A (non-canonical) SMILES string for a connected subgraph.

    Depth-first from the lowest kept atom, neighbours in index order; ring
    closures are numbered in order of opening.
    """
    mol, keep = state.parent, state.atoms
    if not keep or not is_connected(mol, keep, state.bond_mask):
        raise ContractError("write_smiles needs a non-empty connected subgraph")

    def edge(u: int, v: int) -> Bond:
        return mol.bonds[mol.bond_index[(min(u, v), max(u, v))]]

    def symbol(b: Bond) -> str:
        return "" if b.aromatic else {1: "", 2: "=", 3: "#"}[b.order]

    children: dict[int, list[int]] = {k: [] for k in keep}
    closures: dict[int, list[tuple[int, int]]] = {k: [] for k in keep}  # atom -> (label, partner)
    seen: set[int] = set()
    used: set[tuple[int, int]] = set()
    label = 0
    root = min(keep)
    stack = [(root, -1)]
    order = []
    while stack:
        u, par = stack.pop()
        if u in seen:
            continue
        seen.add(u)
        order.append(u)
        if par >= 0:
            children[par].append(u)
            used.add((min(u, par), max(u, par)))
        for v in reversed(mol.neighbors[u]):
            if v in keep and v not in seen:
                stack.append((v, u))
    for u in order:  # remaining kept bonds close rings
        for v in mol.neighbors[u]:
            key = (min(u, v), max(u, v))
            if v in keep and key not in used:
                used.add(key)
                label += 1
                closures[u].append((label, v))
                closures[v].append((label, u))
    pos = {u: k for k, u in enumerate(order)}

    def ring_text(u: int) -> str:
        out = []
        for lab, v in closures[u]:
            digits = str(lab) if lab < 10 else f"%{lab}"
            out.append((symbol(edge(u, v)) if pos[u] < pos[v] else "") + digits)
        return "".join(out)

    parts: list[str] = []
    pending: list[object] = [root]
    while pending:
        item = pending.pop()
        if isinstance(item, str):
            parts.append(item)
            continue
        u = item
        parts.append(atom_token(mol.atoms[u]) + ring_text(u))
        kids = children[u]
        seq: list[object] = []
        for k, v in enumerate(kids):
            branch = k < len(kids) - 1
            seq += (["("] if branch else []) + [symbol(edge(u, v)), v] + ([")"] if branch else [])
        pending.extend(reversed(seq))
    return "".join(parts)


def format_rationale_line(source_smiles: str, atoms: Iterable[int], score: float) -> str:
    return f"{source_smiles}\t{','.join(str(a) for a in sorted(atoms))}\t{score:.4f}"


def parse_rationale_line(line: str) -> tuple[str, list[int], float]:
    smi, idx, score = line.rstrip("\n").split("\t")
    return smi, [int(x) for x in idx.split(",") if x], float(score)
