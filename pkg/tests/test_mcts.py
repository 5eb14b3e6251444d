import logging
import math

import numpy as np
import pytest

from adaptmol.mcts import (
    ModelScorer,
    Search,
    SearchConfig,
    SearchNode,
    extract_rationales,
    format_report,
    format_summary,
    run_search,
    select_action,
    subgraph_tokens,
    support_prototypes,
)
from adaptmol.smiles import (
    DeletionAction,
    SubgraphState,
    parse_rationale_line,
    parse_smiles,
    write_smiles,
)
from adaptmol.synthetic import amide_atoms

from helpers import balanced_support, exhaustive_best, random_molecules, random_state, state_is_connected


def node_with(R, N=None, W=None):
    n = len(R)
    node = SearchNode(None, 0.0, actions=[DeletionAction("bond", (a,), frozenset({a})) for a in range(n)])
    node.R = list(R)
    node.N = list(N) if N is not None else [0] * n
    node.W = list(W) if W is not None else [0.0] * n
    return node


def amide_scorer(state):
    """Deterministic stand-in model: high when an intact amide survives, smaller fragments preferred."""
    mol = state.parent
    hit = any(m <= state.atoms for m in amide_atoms(mol))
    return (0.6 if hit else 0.2) + 0.3 * (1 - state.size / mol.num_atoms)


# ---------------------------------------------------------------- selection

def test_all_zero_priors_pick_first():
    assert select_action(node_with([0.0, 0.0, 0.0]), SearchConfig()) == 0


def test_higher_prior_wins():
    node = node_with([0.9, 0.8], N=[1, 1], W=[0.6, 0.6])
    assert select_action(node, SearchConfig(c_puct=2.0)) == 0


def test_visited_action_against_fresh_action():
    # 0.9 + c*0.9*sqrt(1/2) against c*0.8: the fresh action wins once c > 5.49
    node = node_with([0.9, 0.8], N=[1, 0], W=[0.9, 0.0])
    assert select_action(node, SearchConfig(c_puct=2.0)) == 0
    assert select_action(node, SearchConfig(c_puct=5.4)) == 0
    assert select_action(node, SearchConfig(c_puct=5.6)) == 1
    assert select_action(node, SearchConfig(c_puct=9.0)) == 1


def test_exploration_constant_can_flip_choice():
    # Q = (0.9, 0.1); the bonus difference 0.5c(sqrt2 - 1) overtakes 0.8 once c > 3.86
    node = node_with([0.5, 0.5], N=[3, 1], W=[2.7, 0.1])
    assert select_action(node, SearchConfig(c_puct=2.0)) == 0
    assert select_action(node, SearchConfig(c_puct=9.0)) == 1


def test_selection_matches_formula():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 6))
        N = rng.integers(0, 5, n)
        W = rng.uniform(0, 1, n) * N
        R = rng.uniform(0, 1, n)
        c = float(rng.uniform(0.1, 5))
        q = np.where(N > 0, W / np.maximum(N, 1), 0.0)
        expected = int(np.argmax(q + c * R * np.sqrt(N.sum() / (1 + N))))
        assert select_action(node_with(R, N, W), SearchConfig(c_puct=c)) == expected


def test_terminal_node_rejected():
    with pytest.raises(ValueError):
        select_action(node_with([]), SearchConfig())


def test_config_validation():
    for bad in ({"min_atoms": 0}, {"min_atoms": 9, "max_atoms": 8}, {"iterations": 0},
                {"c_puct": 0.0}, {"delta": 1.0}):
        with pytest.raises(ValueError):
            SearchConfig(**bad)


# ---------------------------------------------------------------- rollouts

def test_single_rollout_bookkeeping():
    mol = parse_smiles("CCCCCC")
    search = Search(mol, amide_scorer, SearchConfig(min_atoms=5))
    reward = search.rollout()
    root = search.root
    assert sum(root.N) == 1
    a = root.N.index(1)
    assert root.W[a] == reward == root.children[a].score


def test_replayed_trace_reproduces_statistics():
    mol = parse_smiles("CC(=O)NCc1ccccc1OC")
    search = Search(mol, amide_scorer, SearchConfig(iterations=60), record=True)
    search.run()
    N, W = {}, {}
    for path, reward in search.trace:
        for atoms, a in path:
            N[atoms, a] = N.get((atoms, a), 0) + 1
            W[atoms, a] = W.get((atoms, a), 0.0) + reward
    for atoms, node in search.nodes.items():
        for a in range(len(node.N)):
            assert node.N[a] == N.get((atoms, a), 0)
            assert node.W[a] == W.get((atoms, a), 0.0)
    assert sum(search.root.N) == 60 == len(search.trace)


def test_every_state_scored_once():
    calls = []

    def scorer(state):
        calls.append(state.atoms)
        return amide_scorer(state)

    search = Search(parse_smiles("CC(=O)NCC1CCCCC1"), scorer, SearchConfig(iterations=100))
    search.run()
    assert len(calls) == len(set(calls)) == len(search.nodes)


def test_constant_reward_spreads_visits():
    mol = parse_smiles("CCCC(C)CC(CC)C")
    search = Search(mol, lambda s: 0.7, SearchConfig(c_puct=10.0, min_atoms=3, iterations=90))
    search.run()
    visits = search.root.N
    assert len(visits) > 1 and max(visits) - min(visits) <= 1


def test_search_is_deterministic():
    mol = parse_smiles("OC(=O)c1ccccc1NC(=O)C")
    cfg = SearchConfig(iterations=80)
    a = run_search(mol, amide_scorer, cfg)
    b = run_search(mol, amide_scorer, cfg)
    assert [(e.atoms, e.score) for e in a] == [(e.atoms, e.score) for e in b]


# ---------------------------------------------------------------- vocabulary

def test_small_confident_molecule_is_its_own_rationale():
    mol = parse_smiles("CC(=O)NC")
    entries = run_search(mol, lambda s: 0.9, SearchConfig(max_atoms=8, min_atoms=3, iterations=10))
    assert tuple(range(mol.num_atoms)) in [e.atoms for e in entries]


def test_molecule_below_minimum_warns(caplog):
    with caplog.at_level(logging.WARNING):
        assert run_search(parse_smiles("CCO"), amide_scorer, SearchConfig(min_atoms=5)) == []
    assert "min_atoms" in caplog.text


def test_no_entry_below_threshold():
    entries = run_search(parse_smiles("CCCCCCCC"), lambda s: 0.3, SearchConfig(iterations=20))
    assert entries == []


def test_rationales_are_valid_fragments():
    cfg = SearchConfig(max_atoms=8, delta=0.5, iterations=100)
    for mol in random_molecules(20, seed=11, min_atoms=6):
        entries = run_search(mol, amide_scorer, cfg)
        assert len({e.atoms for e in entries}) == len(entries)
        keys = [(-e.score, len(e.atoms), e.atoms) for e in entries]
        assert keys == sorted(keys)
        for e in entries:
            state = SubgraphState.from_atoms(mol, e.atoms)
            assert state_is_connected(state)
            assert cfg.min_atoms <= len(e.atoms) <= cfg.max_atoms and e.score >= cfg.delta
            assert e.graph.num_atoms == len(e.atoms)


def test_search_finds_exhaustive_optimum():
    cfg = SearchConfig(max_atoms=6, iterations=500)
    mols = random_molecules(20, seed=5, max_bonds=10, min_atoms=6, motif=True)
    for mol in mols:
        best = exhaustive_best(mol, amide_scorer, cfg)
        entries = run_search(mol, amide_scorer, cfg)
        got = entries[0].score if entries else None
        assert (best is None and got is None) or abs(got - best) <= 1e-9, mol.source_smiles


def test_report_lines_round_trip():
    mol = parse_smiles("CC(=O)NCC1CCCCC1")
    entries = run_search(mol, amide_scorer, SearchConfig(iterations=50))
    results = [(mol.source_smiles, entries), ("CCO", [])]
    lines = format_report(results).splitlines()
    assert len(lines) == len(entries)
    for line, e in zip(lines, entries):
        smi, atoms, score = parse_rationale_line(line)
        assert smi == mol.source_smiles and tuple(atoms) == e.atoms
        assert abs(score - e.score) <= 5e-5
    summary = format_summary(results).splitlines()
    assert summary[0].endswith(f"count={len(entries)}") and summary[1].endswith("count=0")


# ---------------------------------------------------------------- model scoring

@pytest.fixture(scope="module")
def scorer(trained, motif):
    ds, split = motif
    model = trained["model"]
    smiles, labels = balanced_support(ds, split.test[0], 10)
    protos = support_prototypes(model, smiles, labels)
    return ModelScorer(model, protos), model, protos


def test_full_molecule_score_is_ordinary_prediction(scorer):
    score, model, protos = scorer
    for smi in ["CC(=O)NCc1ccccc1", "CCOC(C)C", "c1ccncc1C(=O)N(C)CC"]:
        mol = parse_smiles(smi)
        expected = model.predict([model.prepare(mol)], protos)[0]
        assert score(SubgraphState.full(mol)) == expected


def test_scores_are_probabilities_and_deterministic(scorer):
    score = scorer[0]
    rng = np.random.default_rng(8)
    mols = random_molecules(25, seed=8, min_atoms=3)
    for k in range(100):
        state = random_state(mols[k % len(mols)], rng)
        s = score(state)
        assert 0.0 <= s <= 1.0 and score(state) == s


def test_empty_state_rejected(scorer):
    with pytest.raises(ValueError):
        scorer[0](SubgraphState.from_atoms(parse_smiles("CCO"), []))


def test_fragment_tokens_spell_the_fragment():
    mol = parse_smiles("CC(=O)NCc1ccccc1")
    state = SubgraphState.from_atoms(mol, [0, 1, 2, 3])
    assert "".join(subgraph_tokens(state)) == write_smiles(state) == "CC(=O)N"


def test_extract_rationales_with_trained_model(scorer, trained):
    _, model, protos = scorer
    cfg = SearchConfig(iterations=50)
    results = extract_rationales(model, protos, ["CC(=O)NCC1CCCCC1", "CCO"], cfg)
    assert [s for s, _ in results] == ["CC(=O)NCC1CCCCC1", "CCO"] and results[1][1] == []
    for e in results[0][1]:
        assert e.score >= cfg.delta
