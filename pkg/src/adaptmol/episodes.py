"""Datasets, 2-way K-shot episode sampling, meta-training and evaluation."""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .metrics import MetricReport, UndefinedMetricError, f1, pr_auc, roc_auc
from .model import AdaptMol, ModelConfig, MolInput
from .protonet import episode_loss_from_probs
from .smiles import MolGraph, SmilesError, parse_smiles

log = logging.getLogger(__name__)


class DatasetFormatError(ValueError):
    pass


class SamplingError(ValueError):
    pass


@dataclass
class Dataset:
    smiles: list[str]
    graphs: list[MolGraph]
    labels: np.ndarray  # (molecules, tasks); NaN marks a missing label
    task_names: list[str]
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.smiles)

    def task_index(self, task: str | int) -> int:
        if isinstance(task, (int, np.integer)):
            return int(task)
        try:
            return self.task_names.index(task)
        except ValueError:
            raise KeyError(f"unknown task {task!r}") from None

    def labeled(self, task: str | int, value: int) -> np.ndarray:
        col = self.labels[:, self.task_index(task)]
        return np.flatnonzero(col == value)


def read_dataset(text: str, source: str = "<string>") -> Dataset:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or not rows[0] or rows[0][0].strip() != "smiles":
        raise DatasetFormatError(f"{source}:1: header must start with 'smiles'")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2:
        raise DatasetFormatError(f"{source}:1: no task columns")
    tasks = []
    for h in header[1:]:
        if not h.startswith("task_") or len(h) == 5:
            raise DatasetFormatError(f"{source}:1: column {h!r} is not of the form task_<name>")
        tasks.append(h[5:])
    smiles, graphs, labels = [], [], []
    dropped = 0
    for lineno, row in enumerate(rows[1:], 2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(header):
            raise DatasetFormatError(f"{source}:{lineno}: expected {len(header)} fields, got {len(row)}")
        vals = []
        for cell in row[1:]:
            cell = cell.strip()
            if cell == "":
                vals.append(np.nan)
            elif cell in ("0", "1"):
                vals.append(float(cell))
            else:
                raise DatasetFormatError(f"{source}:{lineno}: label {cell!r} is not 0, 1 or empty")
        smi = row[0].strip()
        try:
            graph = parse_smiles(smi)
        except SmilesError as exc:
            log.warning("%s:%d: dropping unparsable SMILES %r (%s)", source, lineno, smi, exc)
            dropped += 1
            continue
        smiles.append(smi)
        graphs.append(graph)
        labels.append(vals)
    if dropped:
        log.warning("%s: dropped %d unparsable molecule(s)", source, dropped)
    lab = np.array(labels, dtype=np.float64).reshape(len(labels), len(tasks))
    return Dataset(smiles, graphs, lab, tasks, dropped)


def load_dataset(path: str) -> Dataset:
    with open(path) as fh:
        return read_dataset(fh.read(), path)


def dataset_to_csv(ds: Dataset) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["smiles"] + [f"task_{t}" for t in ds.task_names])
    for smi, row in zip(ds.smiles, ds.labels):
        w.writerow([smi] + ["" if np.isnan(v) else str(int(v)) for v in row])
    return out.getvalue()


@dataclass(frozen=True)
class TaskSplit:
    train: tuple[str, ...]
    test: tuple[str, ...]

    def __post_init__(self):
        if set(self.train) & set(self.test):
            raise ValueError("train and test tasks overlap")

    def validate(self, ds: Dataset) -> None:
        unknown = (set(self.train) | set(self.test)) - set(ds.task_names)
        if unknown:
            raise DatasetFormatError(f"split names unknown tasks: {sorted(unknown)}")


def read_split(text: str) -> TaskSplit:
    parts: dict[str, tuple[str, ...]] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, rest = line.partition(":")
        if not sep or key.strip() not in ("train", "test"):
            raise DatasetFormatError(f"bad split line {line!r}")
        parts[key.strip()] = tuple(t.strip() for t in rest.split(",") if t.strip())
    if "train" not in parts or "test" not in parts:
        raise DatasetFormatError("split file needs both 'train:' and 'test:' lines")
    return TaskSplit(parts["train"], parts["test"])


def load_split(path: str) -> TaskSplit:
    with open(path) as fh:
        return read_split(fh.read())


def format_split(split: TaskSplit) -> str:
    return f"train: {','.join(split.train)}\ntest: {','.join(split.test)}\n"


# ---------------------------------------------------------------- episodes

@dataclass
class Episode:
    task: str
    support: np.ndarray
    support_labels: np.ndarray
    query: np.ndarray
    query_labels: np.ndarray


def sample_episode(ds: Dataset, task: str | int, shots: int, query_size: int,
                   rng: np.random.Generator) -> Episode:
    """Draw K positives and K negatives for support, then a balanced-as-possible query."""
    t = ds.task_index(task)
    name = ds.task_names[t]
    pos, neg = ds.labeled(t, 1), ds.labeled(t, 0)
    if len(pos) < shots or len(neg) < shots or len(pos) + len(neg) < 2 * shots + 1:
        raise SamplingError(
            f"task {name!r} has {len(pos)} positives / {len(neg)} negatives; "
            f"{shots}-shot needs {shots} of each plus one query molecule")
    sup_pos = rng.choice(pos, shots, replace=False)
    sup_neg = rng.choice(neg, shots, replace=False)
    rest_pos = np.setdiff1d(pos, sup_pos)
    rest_neg = np.setdiff1d(neg, sup_neg)
    m = min(query_size, len(rest_pos) + len(rest_neg))
    n_pos = min(m // 2, len(rest_pos))
    n_neg = min(m - n_pos, len(rest_neg))
    n_pos = m - n_neg
    query = np.concatenate([rng.choice(rest_pos, n_pos, replace=False),
                            rng.choice(rest_neg, n_neg, replace=False)]).astype(int)
    query = query[rng.permutation(query.size)]
    support = np.concatenate([sup_pos, sup_neg]).astype(int)
    col = ds.labels[:, t]
    return Episode(name, support, col[support].astype(int), query, col[query].astype(int))


def available_query(ds: Dataset, task: str | int, shots: int) -> int:
    t = ds.task_index(task)
    return len(ds.labeled(t, 1)) + len(ds.labeled(t, 0)) - 2 * shots


class InputCache:
    """Per-molecule forward inputs, computed once per model featurizer."""

    def __init__(self, model: AdaptMol, ds: Dataset):
        self.model, self.ds = model, ds
        self._cache: dict[int, MolInput] = {}

    def __getitem__(self, idx: int) -> MolInput:
        item = self._cache.get(idx)
        if item is None:
            item = self._cache[idx] = self.model.prepare(self.ds.graphs[idx], self.ds.smiles[idx])
        return item

    def many(self, idxs) -> list[MolInput]:
        return [self[int(i)] for i in idxs]


def episode_probabilities(model: AdaptMol, cache: InputCache, ep: Episode) -> ad.Tensor:
    return model.episode_probabilities(cache.many(ep.support), ep.support_labels, cache.many(ep.query))


# ---------------------------------------------------------------- optimisers

class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: Sequence[ad.Tensor], grads: ad.Gradients) -> None:
        for p in params:
            p.value = p.value - self.lr * grads[p]


class Adam:
    def __init__(self, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.t = 0
        self.m: dict[int, np.ndarray] = {}
        self.v: dict[int, np.ndarray] = {}

    def step(self, params: Sequence[ad.Tensor], grads: ad.Gradients) -> None:
        self.t += 1
        for k, p in enumerate(params):
            g = grads[p]
            m = self.m[k] = self.b1 * self.m.get(k, 0.0) + (1 - self.b1) * g
            v = self.v[k] = self.b2 * self.v.get(k, 0.0) + (1 - self.b2) * g * g
            mhat = m / (1 - self.b1 ** self.t)
            vhat = v / (1 - self.b2 ** self.t)
            p.value = p.value - self.lr * mhat / (np.sqrt(vhat) + self.eps)


OPTIMIZERS = {"sgd": SGD, "adam": Adam}


# ---------------------------------------------------------------- training

@dataclass
class TrainConfig:
    shots: int = 10
    query_size: int = 16
    test_query_size: int = 32
    lr: float = 0.005
    optimizer: str = "sgd"
    episodes: int = 2000
    patience: int = 100
    eval_every: int = 50
    val_fraction: float = 0.2
    val_episodes: int = 4
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if not 0.0005 <= self.lr <= 0.05:
            raise ValueError(f"learning rate {self.lr} outside [0.0005, 0.05]")
        if self.episodes < 0 or self.patience < 1 or self.shots < 1:
            raise ValueError("episodes >= 0, patience >= 1 and shots >= 1 are required")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def echo(self) -> dict:
        return asdict(self)


@dataclass
class TrainHistory:
    losses: list[float] = field(default_factory=list)
    validation: list[tuple[int, float]] = field(default_factory=list)
    best_episode: int | None = None
    stopped_early: bool = False


def _validation_tasks(split: TaskSplit, cfg: TrainConfig) -> tuple[list[str], list[str]]:
    train = list(split.train)
    if len(train) < 2 or cfg.val_fraction <= 0:
        return train, []
    n_val = min(len(train) - 1, max(1, round(cfg.val_fraction * len(train))))
    return train[:-n_val], train[-n_val:]


def fit_featurizer(model: AdaptMol, ds: Dataset, tasks: Sequence[str]) -> None:
    cols = [ds.task_index(t) for t in tasks]
    rows = np.flatnonzero(~np.all(np.isnan(ds.labels[:, cols]), axis=1))
    model.featurizer.fit([ds.smiles[i] for i in rows])


def mean_roc_auc(model: AdaptMol, cache: InputCache, episodes: Sequence[Episode]) -> float:
    scores = []
    for ep in episodes:
        p = episode_probabilities(model, cache, ep).value[:, 0]
        try:
            scores.append(roc_auc(p, ep.query_labels))
        except UndefinedMetricError:
            continue
    return float(np.mean(scores)) if scores else float("nan")


def meta_train(ds: Dataset, split: TaskSplit, cfg: TrainConfig,
               progress: Callable[[int, float], None] | None = None) -> tuple[AdaptMol, TrainHistory]:
    """Episodic training; returns the best validated model (or the last one without validation)."""
    split.validate(ds)
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    init_rng, train_rng, val_rng = (np.random.default_rng(s) for s in seeds)
    model = AdaptMol.init(cfg.model, init_rng)
    model.extra = {"train_config": cfg.echo(), "split": asdict(split)}
    history = TrainHistory()
    if cfg.episodes == 0:
        if split.train:
            fit_featurizer(model, ds, split.train)
        return model, history

    fit_tasks, val_tasks = _validation_tasks(split, cfg)
    fit_featurizer(model, ds, split.train)
    cache = InputCache(model, ds)
    val_eps = [
        sample_episode(ds, t, cfg.shots, cfg.test_query_size, val_rng)
        for t in val_tasks for _ in range(cfg.val_episodes)
    ]
    optimizer = OPTIMIZERS[cfg.optimizer](cfg.lr)
    params = model.parameters()
    best, best_score, bad = None, -math.inf, 0

    for step in range(1, cfg.episodes + 1):
        task = fit_tasks[int(train_rng.integers(len(fit_tasks)))]
        ep = sample_episode(ds, task, cfg.shots, cfg.query_size, train_rng)
        loss = episode_loss_from_probs(episode_probabilities(model, cache, ep), ep.query_labels)
        optimizer.step(params, ad.backward(loss))
        history.losses.append(loss.item())
        if progress is not None:
            progress(step, history.losses[-1])
        if val_eps and (step % cfg.eval_every == 0 or step == cfg.episodes):
            score = mean_roc_auc(model, cache, val_eps)
            history.validation.append((step, score))
            log.info("episode %d: validation ROC-AUC %.4f", step, score)
            if score > best_score:
                best, best_score, bad = model.copy(), score, 0
                history.best_episode = step
            else:
                bad += 1
                if bad >= cfg.patience:
                    history.stopped_early = True
                    break
    return (best if best is not None else model), history


# ---------------------------------------------------------------- evaluation

Predictor = Callable[[AdaptMol, InputCache, Episode], np.ndarray]


def model_predictor(model: AdaptMol, cache: InputCache, ep: Episode) -> np.ndarray:
    return episode_probabilities(model, cache, ep).value[:, 0].copy()


def evaluate(model: AdaptMol, ds: Dataset, test_tasks: Sequence[str], shots: int, runs: int = 10,
             seed: int = 0, query_size: int = 32, jobs: int = 1,
             predictor: Predictor = model_predictor) -> MetricReport:
    """Mean/std of ROC-AUC, F1 (threshold 0.5) and PR-AUC over runs x test tasks."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    cache = InputCache(model, ds)
    usable, skipped = [], []
    for t in test_tasks:
        ok = (len(ds.labeled(t, 1)) >= shots and len(ds.labeled(t, 0)) >= shots
              and available_query(ds, t, shots) >= 1)
        (usable if ok else skipped).append(t)
        if not ok:
            log.warning("skipping task %r: not enough labelled molecules for %d-shot", t, shots)
    for t in usable:  # fill the cache up front so worker threads only read it
        for i in np.flatnonzero(~np.isnan(ds.labels[:, ds.task_index(t)])):
            cache[int(i)]

    def one_run(seed_seq: np.random.SeedSequence) -> list[tuple[float | None, float, float | None]]:
        rng = np.random.default_rng(seed_seq)
        out = []
        for t in usable:
            ep = sample_episode(ds, t, shots, query_size, rng)
            p = predictor(model, cache, ep)
            y = ep.query_labels
            try:
                auc = roc_auc(p, y)
            except UndefinedMetricError:
                auc = None
            try:
                ap = pr_auc(p, y)
            except UndefinedMetricError:
                ap = None
            out.append((auc, f1((p >= 0.5).astype(int), y), ap))
        return out

    seqs = np.random.SeedSequence(seed).spawn(runs)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one_run, seqs))
    else:
        results = [one_run(s) for s in seqs]
    samples: dict[str, list[float]] = {"roc_auc": [], "f1": [], "pr_auc": []}
    for per_run in results:
        for auc, f, ap in per_run:
            if auc is not None:
                samples["roc_auc"].append(auc)
            samples["f1"].append(f)
            if ap is not None:
                samples["pr_auc"].append(ap)
    return MetricReport.from_samples(samples, skipped)
