"""The full encoder stack (GIN + sequence PCA + AMA) and checkpoint persistence."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .ama import AmaConfig, AmaParams, ama_forward_batch
from .autodiff import Tensor
from .encoders import GinParams, PcaState, SeqFeaturizer, gin_forward
from .protonet import Prototypes, build_prototypes, class_probabilities, predict
from .smiles import MolGraph, atom_feature_matrix

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 64
    gin_layers: int = 3
    hash_dim: int = 2048
    seq_dim: int = 32
    heads: int = 2
    beta_min: float = 0.9
    beta_max: float = 1.1
    k: float = 2.0

    @property
    def ama(self) -> AmaConfig:
        return AmaConfig(self.beta_min, self.beta_max, self.k, self.heads)


@dataclass(frozen=True)
class MolInput:
    """Everything the forward pass needs for one molecule."""
    features: np.ndarray
    adjacency: np.ndarray
    seq: np.ndarray

    @property
    def num_atoms(self) -> int:
        return self.features.shape[0]


@dataclass
class AdaptMol:
    config: ModelConfig
    gin: GinParams
    ama: AmaParams
    featurizer: SeqFeaturizer
    extra: dict = field(default_factory=dict)  # free-form config echo stored with checkpoints

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator,
             featurizer: SeqFeaturizer | None = None) -> "AdaptMol":
        gin = GinParams.init(rng, config.hidden, config.gin_layers)
        ama = AmaParams.init(rng, config.hidden, config.seq_dim)
        if featurizer is None:
            featurizer = SeqFeaturizer(config.hash_dim, config.seq_dim)
        return cls(config, gin, ama, featurizer)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return self.gin.named_parameters() + self.ama.named_parameters()

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    # ------------------------------------------------------------ inputs

    def prepare(self, graph: MolGraph, smiles: str | None = None,
                tokens: Sequence[str] | None = None) -> MolInput:
        smiles = graph.source_smiles if smiles is None else smiles
        return MolInput(atom_feature_matrix(graph), graph.adjacency(),
                        self.featurizer.encode(smiles, tokens))

    # ------------------------------------------------------------ forward

    def embed(self, inputs: Sequence[MolInput]) -> Tensor:
        """Final representations (B, hidden) for a batch of molecules."""
        sizes = [m.num_atoms for m in inputs]
        n = sum(sizes)
        feats = np.concatenate([m.features for m in inputs], axis=0)
        adj = np.zeros((n, n))
        member = np.zeros((len(inputs), n))
        start = 0
        for b, m in enumerate(inputs):
            stop = start + m.num_atoms
            adj[start:stop, start:stop] = m.adjacency
            member[b, start:stop] = 1.0
            start = stop
        nodes = gin_forward(feats, adj, self.gin)
        seq = np.stack([m.seq for m in inputs])
        return ama_forward_batch(nodes, seq, member, self.ama, self.config.ama)

    def episode_probabilities(self, support: Sequence[MolInput], support_labels,
                              query: Sequence[MolInput]) -> Tensor:
        """(M, 2) [p_positive, p_negative] for the query molecules."""
        z = self.embed(list(support) + list(query))
        k = len(support)
        sup = _row_block(z, 0, k)
        qry = _row_block(z, k, z.shape[0])
        return class_probabilities(qry, build_prototypes(sup, support_labels))

    def prototypes(self, support: Sequence[MolInput], support_labels) -> Prototypes:
        return build_prototypes(self.embed(support), support_labels)

    def predict(self, query: Sequence[MolInput], protos: Prototypes) -> np.ndarray:
        return np.atleast_1d(predict(self.embed(query), protos).value).copy()

    # ------------------------------------------------------------ persistence

    def save(self, path: str) -> None:
        arrays = {f"param/{name}": p.value for name, p in self.named_parameters()}
        pca = self.featurizer.pca
        if pca is not None:
            arrays["pca/mean"] = pca.mean
            arrays["pca/projection"] = pca.projection
            arrays["pca/explained_variance"] = pca.explained_variance
        meta = {
            "format_version": FORMAT_VERSION,
            "model_config": asdict(self.config),
            "featurizer": {"dim": self.featurizer.dim, "n_components": self.featurizer.n_components,
                           "seed": self.featurizer.seed},
            "extra": self.extra,
        }
        arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path: str) -> "AdaptMol":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(data["meta"].tobytes().decode())
            if meta.get("format_version") != FORMAT_VERSION:
                raise ValueError(f"{path}: unsupported checkpoint format {meta.get('format_version')}")
            config = ModelConfig(**meta["model_config"])
            fz = meta["featurizer"]
            featurizer = SeqFeaturizer(fz["dim"], fz["n_components"], fz["seed"])
            if "pca/mean" in data:
                featurizer.pca = PcaState(data["pca/mean"].copy(), data["pca/projection"].copy(),
                                          data["pca/explained_variance"].copy())
            model = cls.init(config, np.random.default_rng(0), featurizer)
            model.extra = meta.get("extra", {})
            for name, p in model.named_parameters():
                stored = data[f"param/{name}"]
                if stored.shape != p.shape:
                    raise ValueError(f"{path}: {name} has shape {stored.shape}, expected {p.shape}")
                p.value = stored.astype(np.float64).copy()
        return model

    def copy(self) -> "AdaptMol":
        clone = AdaptMol.init(self.config, np.random.default_rng(0), self.featurizer)
        clone.extra = dict(self.extra)
        for (_, dst), (_, src) in zip(clone.named_parameters(), self.named_parameters()):
            dst.value = src.value.copy()
        return clone


def _row_block(m: Tensor, start: int, stop: int) -> Tensor:
    sel = np.zeros((stop - start, m.shape[0]))
    sel[np.arange(stop - start), np.arange(start, stop)] = 1.0
    return Tensor(sel) @ m


def parameters_equal(a: AdaptMol, b: AdaptMol) -> bool:
    return all(
        np.array_equal(p.value, q.value)
        for (_, p), (_, q) in zip(a.named_parameters(), b.named_parameters())
    )


def flat_parameters(model: AdaptMol) -> np.ndarray:
    return np.concatenate([p.value.reshape(-1) for p in model.parameters()])


__all__ = ["AdaptMol", "ModelConfig", "MolInput", "parameters_equal", "flat_parameters"]
