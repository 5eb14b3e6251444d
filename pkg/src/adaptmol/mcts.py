"""Rationale extraction: Monte Carlo tree search over peripheral deletions.

Each state is a connected subgraph of the source molecule. A state is scored
once, the first time it is generated as a child (or as the root); that score
is the prior R(s, a) of the edge leading to it. Rollouts descend by PUCT
until the state has at most ``min_atoms`` atoms or no legal deletion, and
the leaf score is backed up along the path.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .model import AdaptMol
from .protonet import Prototypes
from .smiles import (
    DeletionAction,
    MolGraph,
    SubgraphState,
    candidate_deletions,
    extract_subgraph,
    format_rationale_line,
    lex,
    parse_smiles,
    write_smiles,
)

log = logging.getLogger(__name__)

Scorer = Callable[[SubgraphState], float]


@dataclass(frozen=True)
class SearchConfig:
    max_atoms: int = 20
    delta: float = 0.5
    c_puct: float = 2.0
    iterations: int = 500
    min_atoms: int = 5

    def __post_init__(self):
        if not 1 <= self.min_atoms <= self.max_atoms:
            raise ValueError("need 1 <= min_atoms <= max_atoms")
        if self.iterations < 1 or self.c_puct <= 0 or not 0 < self.delta < 1:
            raise ValueError("need iterations >= 1, c_puct > 0 and 0 < delta < 1")


@dataclass
class SearchNode:
    state: SubgraphState
    score: float
    actions: list[DeletionAction] | None = None
    children: list["SearchNode"] = field(default_factory=list)
    N: list[int] = field(default_factory=list)
    W: list[float] = field(default_factory=list)
    R: list[float] = field(default_factory=list)
    visited: bool = False

    @property
    def size(self) -> int:
        return self.state.size

    @property
    def expanded(self) -> bool:
        return self.actions is not None

    def Q(self, a: int) -> float:
        return self.W[a] / self.N[a] if self.N[a] > 0 else 0.0


@dataclass
class RationaleEntry:
    source_smiles: str
    atoms: tuple[int, ...]
    graph: MolGraph
    score: float

    def report_line(self) -> str:
        return format_rationale_line(self.source_smiles, self.atoms, self.score)


def select_action(node: SearchNode, cfg: SearchConfig) -> int:
    """argmax_a Q(s,a) + c_puct * R(s,a) * sqrt(sum_b N(s,b) / (1 + N(s,a))); lowest index wins ties."""
    if not node.actions:
        raise ValueError("select_action called on a terminal node")
    total = sum(node.N)
    best, best_val = 0, -math.inf
    for a in range(len(node.actions)):
        val = node.Q(a) + cfg.c_puct * node.R[a] * math.sqrt(total / (1 + node.N[a]))
        if val > best_val:
            best, best_val = a, val
    return best


class Search:
    """One search tree over a single molecule."""

    def __init__(self, mol: MolGraph, scorer: Scorer, cfg: SearchConfig, record: bool = False):
        self.mol, self.scorer, self.cfg = mol, scorer, cfg
        self.nodes: dict[frozenset[int], SearchNode] = {}
        self.trace: list[tuple[list[tuple[frozenset[int], int]], float]] | None = [] if record else None
        self.root = self._node(SubgraphState.full(mol))

    def _node(self, state: SubgraphState) -> SearchNode:
        node = self.nodes.get(state.atoms)
        if node is None:
            node = self.nodes[state.atoms] = SearchNode(state, float(self.scorer(state)))
        return node

    def _expand(self, node: SearchNode) -> None:
        node.actions = candidate_deletions(node.state)
        for act in node.actions:
            child = self._node(SubgraphState.from_atoms(self.mol, node.state.atoms - act.removed))
            node.children.append(child)
            node.R.append(child.score)
        node.N = [0] * len(node.actions)
        node.W = [0.0] * len(node.actions)

    def _is_leaf(self, node: SearchNode) -> bool:
        if node.size <= self.cfg.min_atoms:
            return True
        if not node.expanded:
            self._expand(node)
        return not node.actions

    def rollout(self) -> float:
        node = self.root
        path: list[tuple[SearchNode, int]] = []
        node.visited = True
        while not self._is_leaf(node):
            a = select_action(node, self.cfg)
            path.append((node, a))
            node = node.children[a]
            node.visited = True
        reward = node.score
        for n, a in path:
            n.N[a] += 1
            n.W[a] += reward
        if self.trace is not None:
            self.trace.append(([(n.state.atoms, a) for n, a in path], reward))
        return reward

    def run(self) -> list[RationaleEntry]:
        for _ in range(self.cfg.iterations):
            self.rollout()
        return self.vocabulary()

    def vocabulary(self) -> list[RationaleEntry]:
        cfg = self.cfg
        keep = [
            n for n in self.nodes.values()
            if n.visited and cfg.min_atoms <= n.size <= cfg.max_atoms and n.score >= cfg.delta
        ]
        keep.sort(key=lambda n: (-n.score, n.size, tuple(sorted(n.state.atoms))))
        return [
            RationaleEntry(self.mol.source_smiles, tuple(sorted(n.state.atoms)),
                           extract_subgraph(n.state), n.score)
            for n in keep
        ]


def run_search(mol: MolGraph, scorer: Scorer, cfg: SearchConfig) -> list[RationaleEntry]:
    if mol.num_atoms < cfg.min_atoms:
        log.warning("%s has %d atoms, fewer than min_atoms=%d; no rationale",
                    mol.source_smiles, mol.num_atoms, cfg.min_atoms)
        return []
    return Search(mol, scorer, cfg).run()


# ---------------------------------------------------------------- model scoring

def subgraph_tokens(state: SubgraphState) -> list[str]:
    """Lexical tokens of a depth-first SMILES spelling of the fragment."""
    return [t.text for t in lex(write_smiles(state))]


class ModelScorer:
    """Positive-class probability of a subgraph under a trained model."""

    def __init__(self, model: AdaptMol, protos: Prototypes):
        self.model, self.protos = model, protos
        self.calls = 0

    def __call__(self, state: SubgraphState) -> float:
        if state.size == 0:
            raise ValueError("cannot score an empty subgraph")
        self.calls += 1
        full = state.size == state.parent.num_atoms
        graph = extract_subgraph(state)
        inp = self.model.prepare(graph, state.parent.source_smiles,
                                 None if full else subgraph_tokens(state))
        return float(self.model.predict([inp], self.protos)[0])


def score_subgraph(model: AdaptMol, protos: Prototypes, state: SubgraphState) -> float:
    return ModelScorer(model, protos)(state)


def support_prototypes(model: AdaptMol, smiles: Sequence[str], labels: Sequence[int]) -> Prototypes:
    inputs = [model.prepare(parse_smiles(s)) for s in smiles]
    return model.prototypes(inputs, np.asarray(labels, dtype=int))


def extract_rationales(model: AdaptMol, protos: Prototypes, smiles: Iterable[str],
                       cfg: SearchConfig) -> list[tuple[str, list[RationaleEntry]]]:
    scorer = ModelScorer(model, protos)
    return [(s, run_search(parse_smiles(s), scorer, cfg)) for s in smiles]


def format_report(results: Sequence[tuple[str, list[RationaleEntry]]]) -> str:
    return "".join(e.report_line() + "\n" for _, entries in results for e in entries)


def format_summary(results: Sequence[tuple[str, list[RationaleEntry]]]) -> str:
    lines = []
    for smi, entries in results:
        if entries:
            top = entries[0]
            lines.append(f"{smi}\ttop={','.join(map(str, top.atoms))}\tscore={top.score:.4f}"
                         f"\tcount={len(entries)}")
        else:
            lines.append(f"{smi}\ttop=-\tscore=-\tcount=0")
    return "\n".join(lines) + ("\n" if lines else "")
