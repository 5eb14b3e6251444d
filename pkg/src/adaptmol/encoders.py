"""Graph (GIN) and sequence (hashed n-gram + PCA) encoders."""
from __future__ import annotations

import hashlib
import logging
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .smiles import ATOM_FEATURE_DIM, MolGraph, atom_feature_matrix, tokenize

log = logging.getLogger(__name__)

HASH_PERSON = b"adaptmol-ngram"  # blake2b personalisation, part of the feature definition
NGRAM_ORDERS = (1, 2, 3)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-s, s, size=(fan_in, fan_out)), requires_grad=True)


def zeros_param(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with the bias row repeated explicitly via a ones column."""
    ones = Tensor(np.ones((x.shape[0], 1)))
    return x @ w + ones @ b


# ---------------------------------------------------------------- GIN

@dataclass
class GinLayer:
    eps: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class GinParams:
    w_in: Tensor
    b_in: Tensor
    layers: list[GinLayer]

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int = 64, num_layers: int = 3,
             in_dim: int = ATOM_FEATURE_DIM) -> "GinParams":
        layers = [
            GinLayer(
                eps=Tensor(0.0, requires_grad=True),
                w1=glorot(rng, hidden, hidden), b1=zeros_param(1, hidden),
                w2=glorot(rng, hidden, hidden), b2=zeros_param(1, hidden),
            )
            for _ in range(num_layers)
        ]
        return cls(glorot(rng, in_dim, hidden), zeros_param(1, hidden), layers)

    @property
    def hidden(self) -> int:
        return self.w_in.shape[1]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = [("gin.w_in", self.w_in), ("gin.b_in", self.b_in)]
        for k, layer in enumerate(self.layers):
            for name in ("eps", "w1", "b1", "w2", "b2"):
                out.append((f"gin.{k}.{name}", getattr(layer, name)))
        return out


def gin_forward(features: np.ndarray, adjacency: np.ndarray, params: GinParams) -> Tensor:
    """Node embeddings for a (possibly block-diagonal) batch of graphs."""
    adj = Tensor(adjacency)
    h = affine(Tensor(features), params.w_in, params.b_in)
    for layer in params.layers:
        m = h + layer.eps * h + adj @ h
        h = affine(ad.relu(affine(m, layer.w1, layer.b1)), layer.w2, layer.b2)
    return h


def gin_encode(mol: MolGraph, params: GinParams) -> Tensor:
    """Node matrix of shape (num_atoms, hidden)."""
    return gin_forward(atom_feature_matrix(mol), mol.adjacency(), params)


# ---------------------------------------------------------------- sequence

@lru_cache(maxsize=1 << 16)
def _bucket(gram: tuple[str, ...], dim: int, seed: int) -> int:
    h = hashlib.blake2b(
        "\x1f".join(gram).encode("ascii"),
        digest_size=8,
        salt=seed.to_bytes(8, "little"),
        person=HASH_PERSON,
    )
    return int.from_bytes(h.digest(), "little") % dim


def raw_sequence_features(tokens: Sequence[str], dim: int = 2048, seed: int = 0) -> np.ndarray:
    """L2-normalised counts of token 1/2/3-grams hashed into ``dim`` buckets.

    The bucket of an n-gram is ``blake2b(join(gram, 0x1f), digest_size=8,
    salt=seed as 8 little-endian bytes, person=HASH_PERSON)`` read as a
    little-endian integer, modulo ``dim``.
    """
    if not tokens:
        raise ValueError("raw_sequence_features needs at least one token")
    v = np.zeros(dim)
    for n in NGRAM_ORDERS:
        for i in range(len(tokens) - n + 1):
            v[_bucket(tuple(tokens[i:i + n]), dim, seed)] += 1.0
    return v / np.linalg.norm(v)


@dataclass
class PcaState:
    mean: np.ndarray
    projection: np.ndarray  # (d, d_a), orthonormal columns (zero columns when rank-deficient)
    explained_variance: np.ndarray


def _fix_sign(v: np.ndarray) -> np.ndarray:
    return v if v[np.argmax(np.abs(v))] >= 0 else -v


def _power_top(apply, dim: int, basis: list[np.ndarray], rng: np.random.Generator,
               tol: float, max_iter: int) -> tuple[np.ndarray, float]:
    """Dominant eigenpair of a PSD operator restricted to the complement of ``basis``."""
    def deflate(x):
        for b in basis:
            x = x - (b @ x) * b
        return x

    x = deflate(rng.standard_normal(dim))
    norm = np.linalg.norm(x)
    if norm == 0:
        return np.zeros(dim), 0.0
    x /= norm
    for _ in range(max_iter):
        y = deflate(apply(x))
        ny = np.linalg.norm(y)
        if ny == 0:
            return x, 0.0
        y = _fix_sign(y / ny)
        done = np.linalg.norm(y - x) < tol
        x = y
        if done:
            break
    return x, float(x @ apply(x))


def pca_fit(samples: np.ndarray, n_components: int, tol: float = 1e-10, max_iter: int = 1000,
            seed: int = 0) -> PcaState:
    """Top principal axes by power iteration with deflation.

    When there are fewer samples than features the iteration runs on the
    (n, n) Gram matrix of centred samples and the axes are mapped back; the
    non-zero spectrum is identical.
    """
    x = np.asarray(samples, dtype=np.float64)
    n, d = x.shape
    if n <= n_components or n_components < 1:
        raise ValueError(f"pca_fit needs n > n_components >= 1 (n={n}, n_components={n_components})")
    mean = x.mean(axis=0)
    xc = x - mean
    rng = np.random.default_rng(seed)
    gram = n < d
    op = xc @ xc.T / (n - 1) if gram else xc.T @ xc / (n - 1)
    dim = op.shape[0]
    scale = max(np.trace(op), 1e-300)
    basis: list[np.ndarray] = []
    components, variances = [], []
    for k in range(n_components):
        v, lam = _power_top(lambda z: op @ z, dim, basis, rng, tol, max_iter)
        if lam <= 1e-12 * scale:
            log.warning("PCA: data rank below %d, padding %d zero components", n_components,
                        n_components - k)
            break
        basis.append(v)
        if gram:
            u = xc.T @ v
            u = _fix_sign(u / np.linalg.norm(u))
        else:
            u = v
        components.append(u)
        variances.append(lam)
    proj = np.zeros((d, n_components))
    if components:
        proj[:, :len(components)] = np.stack(components, axis=1)
    ev = np.zeros(n_components)
    ev[:len(variances)] = variances
    return PcaState(mean, proj, ev)


@dataclass
class SeqFeaturizer:
    dim: int = 2048
    n_components: int = 32
    seed: int = 0
    pca: PcaState | None = None
    external: dict[str, np.ndarray] = field(default_factory=dict)

    def raw(self, smiles: str, tokens: Sequence[str] | None = None) -> np.ndarray:
        if tokens is None and smiles in self.external:
            return self.external[smiles]
        return raw_sequence_features(tokens if tokens is not None else tokenize(smiles),
                                     self.dim, self.seed)

    def fit(self, smiles: Sequence[str]) -> "SeqFeaturizer":
        raw = np.stack([self.raw(s) for s in smiles])
        self.pca = pca_fit(raw, self.n_components, seed=self.seed)
        return self

    def encode(self, smiles: str, tokens: Sequence[str] | None = None) -> np.ndarray:
        return encode_sequence(self.raw(smiles, tokens), self)


def encode_sequence(raw: np.ndarray, featurizer: SeqFeaturizer) -> np.ndarray:
    """Project raw sequence features onto the fitted principal axes."""
    if featurizer.pca is None:
        raise ValueError("sequence featurizer has not been fitted")
    return featurizer.pca.projection.T @ (raw - featurizer.pca.mean)


def load_external_features(path: str, dim: int) -> dict[str, np.ndarray]:
    """Read ``<smiles>\\t<comma-separated reals>`` lines."""
    out: dict[str, np.ndarray] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            try:
                smi, values = line.split("\t")
                vec = np.array([float(v) for v in values.split(",")])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed feature line") from exc
            if vec.size != dim:
                raise ValueError(f"{path}:{lineno}: expected {dim} values, got {vec.size}")
            out[smi] = vec
    return out
