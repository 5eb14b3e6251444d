"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the pytest terminal
summary; run ``python tests/test_acceptance.py`` to see only these.
"""
import time

import numpy as np
import pytest

from adaptmol import autodiff as ad
from adaptmol.ama import AmaConfig, beta
from adaptmol.autodiff import Tensor
from adaptmol.episodes import TrainConfig, evaluate, meta_train, sample_episode
from adaptmol.mcts import ModelScorer, Search, SearchConfig, run_search, support_prototypes
from adaptmol.metrics import UndefinedMetricError, f1, pr_auc, roc_auc
from adaptmol.model import AdaptMol, ModelConfig
from adaptmol.protonet import episode_loss_from_probs, prototype_weights
from adaptmol.smiles import SmilesError, parse_smiles
from adaptmol.synthetic import motif_dataset

from helpers import (
    balanced_support,
    brute_average_precision,
    brute_f1,
    brute_roc_auc,
    corpus_rows,
    exhaustive_best,
    fuzz_strings,
    graph_problems,
    metric_instances,
    random_molecules,
)

RESULTS: list[str] = []


def verdict(number: int, title: str, ok: bool, detail: str) -> None:
    RESULTS.append(f"{'PASS' if ok else 'FAIL'} criterion {number}: {title} ({detail})")
    assert ok, detail


def test_1_gradient_fidelity():
    start = time.perf_counter()
    ds, split = motif_dataset(n_molecules=60, seed=1)
    model = AdaptMol.init(ModelConfig(hidden=8, seq_dim=4, hash_dim=256), np.random.default_rng(0))
    model.featurizer.fit(ds.smiles)
    rng = np.random.default_rng(2)
    ep = sample_episode(ds, split.train[0], 2, 4, rng)
    sup = [model.prepare(ds.graphs[i]) for i in ep.support]
    qry = [model.prepare(ds.graphs[i]) for i in ep.query]

    def loss():
        return episode_loss_from_probs(model.episode_probabilities(sup, ep.support_labels, qry),
                                       ep.query_labels)

    err = ad.parameter_gradient_check(loss, model.parameters())
    elapsed = time.perf_counter() - start
    verdict(1, "gradient fidelity", err < 1e-4 and elapsed < 60,
            f"max relative error {err:.2e}, {elapsed:.1f} s")


def test_2_beta_schedule():
    cfg = AmaConfig()
    got = [beta("local", "graph", cfg), beta("local", "sequence", cfg),
           beta("global", "graph", cfg), beta("global", "sequence", cfg)]
    worst = max(abs(g - w) for g, w in zip(got, [1.3, 0.8, 0.8, 1.3]))
    verdict(2, "beta schedule", worst <= 1e-12, f"values {got}, max deviation {worst:.1e}")


def test_3_prototype_contract():
    rng = np.random.default_rng(3)
    worst_sum = worst_perm = 0.0
    for _ in range(100):
        n, d = int(rng.integers(2, 9)), int(rng.integers(1, 6))
        z = rng.standard_normal((n, d))
        w = prototype_weights(Tensor(z)).value
        worst_sum = max(worst_sum, abs(w.sum() - 1.0))
        perm = rng.permutation(n)
        worst_perm = max(worst_perm, np.abs(prototype_weights(Tensor(z[perm])).value - w[perm]).max())
    example = prototype_weights(Tensor([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])).value
    ex_err = np.abs(example - [0.3764, 0.3118, 0.3118]).max()
    ok = worst_sum <= 1e-12 and worst_perm <= 1e-12 and ex_err <= 1e-3
    verdict(3, "prototype contract", ok,
            f"sum error {worst_sum:.1e}, permutation error {worst_perm:.1e}, example error {ex_err:.1e}")


def test_4_metric_oracles():
    bad = 0
    for scores, labels, preds in metric_instances(200, seed=4):
        bad += abs(roc_auc(scores, labels) - brute_roc_auc(scores, labels)) > 1e-12
        bad += abs(pr_auc(scores, labels) - brute_average_precision(scores, labels)) > 1e-12
        bad += f1(preds, labels) != brute_f1(preds, labels)
    # ROC-AUC needs both classes; average precision only needs a positive
    raised = 0
    for fn, labels in ((roc_auc, [1, 1, 1]), (roc_auc, [0, 0, 0]), (pr_auc, [0, 0, 0])):
        try:
            fn([0.2, 0.5, 0.9], labels)
        except UndefinedMetricError:
            raised += 1
    all_positive = pr_auc([0.2, 0.5, 0.9], [1, 1, 1])
    verdict(4, "metric oracles", bad == 0 and raised == 3 and all_positive == 1.0,
            f"{bad} disagreements over 200 instances, {raised}/3 undefined inputs rejected")


def test_5_mcts_optimality(trained, motif):
    ds, split = motif
    model = trained["model"]
    smiles, labels = balanced_support(ds, split.test[0], 10)
    scorer = ModelScorer(model, support_prototypes(model, smiles, labels))
    cfg = SearchConfig(max_atoms=6, iterations=500)
    mols = random_molecules(50, seed=5, max_bonds=10, min_atoms=6, motif=True)
    start = time.perf_counter()
    matched = 0
    for mol in mols:
        best = exhaustive_best(mol, scorer, cfg)
        entries = run_search(mol, scorer, cfg)
        got = entries[0].score if entries else None
        matched += (best is None and got is None) or (
            best is not None and got is not None and abs(got - best) <= 1e-9)
    elapsed = time.perf_counter() - start
    verdict(5, "tree search optimality", matched / len(mols) >= 0.95 and elapsed < 300,
            f"{matched}/{len(mols)} optimal, {elapsed:.1f} s")


def test_6_mcts_bookkeeping():
    mols = random_molecules(10, seed=6, min_atoms=8)
    mismatches = nodes = 0
    for mol in mols:
        # a fixed pseudo-random reward per state keeps the search non-trivial
        search = Search(mol, lambda s: (sum(a * a for a in s.atoms) * 7919 % 1000) / 1000,
                        SearchConfig(iterations=200), record=True)
        search.run()
        through: dict = {}
        N: dict = {}
        W: dict = {}
        for path, reward in search.trace:
            for atoms, a in path:
                through[atoms] = through.get(atoms, 0) + 1
                N[atoms, a] = N.get((atoms, a), 0) + 1
                W[atoms, a] = W.get((atoms, a), 0.0) + reward
        for atoms, node in search.nodes.items():
            nodes += 1
            mismatches += sum(node.N) != through.get(atoms, 0)
            mismatches += any(node.N[a] != N.get((atoms, a), 0) or node.W[a] != W.get((atoms, a), 0.0)
                              for a in range(len(node.N)))
    verdict(6, "tree search bookkeeping", mismatches == 0, f"{mismatches} mismatches over {nodes} nodes")


def test_7_synthetic_learnability(trained, motif):
    ds, split = motif
    report = evaluate(trained["model"], ds, list(split.test), 10, runs=10, seed=0)
    auc = report["roc_auc"].mean
    episodes = len(trained["history"].losses)
    cpu = trained["cpu_seconds"]
    verdict(7, "synthetic learnability", auc >= 0.85 and episodes <= 500 and cpu < 600,
            f"held-out ROC-AUC {auc:.4f} after {episodes} episodes, {cpu:.1f} s CPU")


def test_8_determinism_and_persistence(tmp_path):
    ds, split = motif_dataset(n_molecules=200, seed=8)
    cfg = TrainConfig(shots=5, episodes=40, eval_every=20, seed=8,
                      model=ModelConfig(hidden=16, hash_dim=256, seq_dim=8))
    reports = []
    for k in range(2):
        model, _ = meta_train(ds, split, cfg)
        path = tmp_path / f"m{k}.npz"
        model.save(str(path))
        in_memory = evaluate(model, ds, list(split.test), 5, runs=4, seed=1).to_json()
        loaded = evaluate(AdaptMol.load(str(path)), ds, list(split.test), 5, runs=4, seed=1).to_json()
        reports += [in_memory, loaded]
    verdict(8, "determinism and persistence", len(set(reports)) == 1,
            f"{len(set(reports))} distinct report(s) over 2 trainings x (memory, reloaded)")


def test_9_parser_robustness():
    violations = parsed = 0
    for text in fuzz_strings(10_000, seed=9):
        try:
            mol = parse_smiles(text)
        except SmilesError:
            continue
        parsed += 1
        violations += bool(graph_problems(mol))
    rows = corpus_rows()
    wrong = 0
    for r in rows:
        m = parse_smiles(r["smiles"])
        got = (m.num_atoms, len(m.bonds), len(m.rings))
        wrong += got != (int(r["atoms"]), int(r["bonds"]), int(r["rings"])) or bool(graph_problems(m))
    ok = violations == 0 and len(rows) >= 200 and wrong == 0
    verdict(9, "parser robustness", ok,
            f"{violations} invalid graphs from {parsed} parsed fuzz strings, "
            f"{wrong}/{len(rows)} corpus mismatches")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
