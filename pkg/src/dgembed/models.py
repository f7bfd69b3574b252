"""Gaussian node-embedding models, KL divergence and the triplet objective."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .encoder import EncoderBlock, PointwiseTemporalConv, positional_encoding
from .errors import ConfigurationError, ContractError
from .graph import TemporalGraph, TripletSet
from .layers import GCNLayer, GINELayer, message_edges, normalized_adjacency
from .nn import Dropout, Linear, Module
from .ssm import MambaBlock

MODEL_KINDS = ("st-transformerg2g", "dg-mamba", "gdg-mamba")
SIGMA_EPS = 1e-14


@dataclass
class ModelConfig:
    model: str = "dg-mamba"
    n: int = 0
    d: int = 256
    d_model: int = 64
    d_state: int = 16
    d_conv: int = 4
    intermediate: int = 64
    d_out: int = 64
    lookback: int = 2
    lr: float = 1e-3
    weight_decay: float = 0.0
    dropout: float = 0.0
    epochs: int = 50
    patience: int = 10
    seed: int = 0
    k_near: int = 1
    expand: int = 2
    mamba_layers: int = 1
    scan_method: str = "sequential"
    norm: str = "post"

    def validate(self) -> "ModelConfig":
        if self.model not in MODEL_KINDS:
            raise ConfigurationError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if not 1 <= self.lookback <= 5:
            raise ConfigurationError(f"lookback must be in 1..5, got {self.lookback}")
        for name in ("n", "d_out", "d", "d_model", "d_state", "d_conv", "intermediate", "epochs", "mamba_layers"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.model == "st-transformerg2g" and self.d % 2:
            raise ConfigurationError("st-transformerg2g needs an even d for the positional encoding")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.lr <= 0:
            raise ConfigurationError("lr must be positive")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)


# Tables of published hyperparameters, keyed by dataset.
EMBEDDING_SIZE = {"reality_mining": 64, "uci": 256, "sbm": 64, "bitcoin": 256, "slashdot": 64}
NODE_COUNT = {"reality_mining": 96, "uci": 1899, "sbm": 1000, "bitcoin": 5881, "slashdot": 50825}

ST_TRANSFORMER_PARAMS = {
    # d, lr, d_out, lookback
    "reality_mining": (256, 1e-4, 64, 3),
    "uci": (512, 1e-6, 256, 5),
    "sbm": (256, 1e-4, 64, 5),
    "bitcoin": (256, 1e-5, 256, 4),
    "slashdot": (256, 1e-6, 64, 2),
}

DG_MAMBA_PARAMS = {
    # d_model, d_state, d_conv, lr, weight_decay, intermediate, dropout, lookback
    "reality_mining": (76, 6, 9, 0.00012, 2.45e-05, 64, 0.42, 2),
    "uci": (1899, 5, 5, 0.001, 0.0001, 37, 0.2, 4),
    "sbm": (1000, 25, 6, 0.003, 1.02e-05, 47, 0.32, 2),
    "bitcoin": (128, 2, 2, 0.003, 1.03e-03, 15, 0.37, 2),
    "slashdot": (256, 44, 5, 2.76e-05, 0.00015, 28, 0.44, 2),
}

GDG_MAMBA_PARAMS = {
    "reality_mining": (76, 6, 3, 2.20e-05, 1.46e-05, 49, 0.176, 2),
    "uci": (1899, 3, 7, 0.00014, 0.00025, 8, 0.41, 3),
    "sbm": (1000, 18, 4, 0.000139, 0.0005, 15, 0.18, 1),
    "bitcoin": (128, 45, 3, 3.65e-05, 3.98e-05, 110, 0.41, 3),
    "slashdot": (256, 2, 5, 2.76e-05, 0.00015, 28, 0.44, 4),
}


def published_config(model: str, dataset: str, **overrides) -> ModelConfig:
    """Published hyperparameters for ``model`` on ``dataset``, with overrides."""
    if dataset not in NODE_COUNT:
        raise ConfigurationError(f"no published hyperparameters for dataset {dataset!r}")
    n = NODE_COUNT[dataset]
    if model == "st-transformerg2g":
        d, lr, d_out, lookback = ST_TRANSFORMER_PARAMS[dataset]
        values = dict(model=model, n=n, d=d, lr=lr, d_out=d_out, lookback=lookback, dropout=0.5, intermediate=512)
    elif model in ("dg-mamba", "gdg-mamba"):
        table = DG_MAMBA_PARAMS if model == "dg-mamba" else GDG_MAMBA_PARAMS
        d_model, d_state, d_conv, lr, wd, inter, dropout, lookback = table[dataset]
        values = dict(
            model=model, n=n, d_model=d_model, d_state=d_state, d_conv=d_conv, lr=lr,
            weight_decay=wd, intermediate=inter, dropout=dropout, lookback=lookback,
            d_out=EMBEDDING_SIZE[dataset],
        )
    else:
        raise ConfigurationError(f"unknown model {model!r}")
    values.update(overrides)
    return ModelConfig(**values)


# --- Gaussian embeddings --------------------------------------------------------------

@dataclass
class GaussianEmbedding:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.sigma) <= 0):
            raise ContractError("variances must be positive")


class GaussianHead(Module):
    """Mean and diagonal variance heads: ``sigma = elu(linear(h)) + offset``."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, sigma_offset: float):
        self.mu = Linear(d_in, d_out, rng, name="head_mu")
        self.sigma = Linear(d_in, d_out, rng, name="head_sigma")
        self.sigma_offset = sigma_offset

    def forward(self, h) -> tuple:
        return self.mu(h), ad.elu(self.sigma(h)) + self.sigma_offset


def projection_heads(head: GaussianHead, h) -> tuple:
    return head(h)


def kl_divergence(mu_i, sigma_i, mu_j, sigma_j) -> Tensor:
    """``KL(N(mu_i, diag sigma_i) || N(mu_j, diag sigma_j))`` over the last axis."""
    mu_i, sigma_i, mu_j, sigma_j = map(as_tensor, (mu_i, sigma_i, mu_j, sigma_j))
    if np.any(sigma_i.data <= 0) or np.any(sigma_j.data <= 0):
        raise ContractError("KL divergence needs strictly positive variances")
    L = mu_i.shape[-1]
    diff = mu_j - mu_i
    trace = (sigma_i / sigma_j).sum(axis=-1)
    maha = (diff * diff / sigma_j).sum(axis=-1)
    logdet = ad.log(sigma_j).sum(axis=-1) - ad.log(sigma_i).sum(axis=-1)
    return (trace + maha - L + logdet) * 0.5


def kl_gaussian(a: GaussianEmbedding, b: GaussianEmbedding) -> float:
    return float(kl_divergence(a.mu, a.sigma, b.mu, b.sigma).data)


def triplet_loss(triplets, mu, sigma) -> Tensor:
    """``sum KL(ref||near)^2 + exp(-KL(ref||far))`` over the given triples."""
    rows = triplets.triples if isinstance(triplets, TripletSet) else np.asarray(triplets, dtype=np.int64)
    rows = rows.reshape(-1, 3)
    if len(rows) == 0:
        return Tensor(0.0)
    mu, sigma = as_tensor(mu), as_tensor(sigma)
    if rows.min() < 0 or rows.max() >= mu.shape[0]:
        raise ContractError("triplet refers to a node without an embedding")
    ref, near, far = rows[:, 0], rows[:, 1], rows[:, 2]
    mu_r, sig_r = mu[ref], sigma[ref]
    e_near = kl_divergence(mu_r, sig_r, mu[near], sigma[near])
    e_far = kl_divergence(mu_r, sig_r, mu[far], sigma[far])
    return (e_near * e_near + ad.exp(-e_far)).sum()


# --- model pipelines ----------------------------------------------------------------

class _GraphCache:
    """Per-graph memo of padded adjacency and derived arrays."""

    def __init__(self):
        self.graph = None
        self.items = {}

    def get(self, g: TemporalGraph, key, build):
        if self.graph is not g:
            self.graph, self.items = g, {}
        if key not in self.items:
            self.items[key] = build()
        return self.items[key]


class EmbeddingModel(Module):
    """Shared plumbing: window checks and adjacency features."""

    sigma_offset = 1.0 + SIGMA_EPS

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self._cache = _GraphCache()

    @property
    def lookback(self) -> int:
        return self.cfg.lookback

    def window(self, g: TemporalGraph, t: int) -> range:
        l = self.cfg.lookback
        if t < l or t >= g.T:
            raise ContractError(f"timestamp {t} needs {l} earlier snapshots and must be < T={g.T}")
        if g.n != self.cfg.n:
            raise ContractError(f"model built for n={self.cfg.n}, graph has n={g.n}")
        return range(t - l, t + 1)

    def features(self, g: TemporalGraph, t: int) -> np.ndarray:
        return self._cache.get(g, ("adj", t), lambda: g.adjacency(t).matrix)

    def forward(self, g: TemporalGraph, t: int) -> tuple:
        raise NotImplementedError

    def embed(self, g: TemporalGraph, t: int) -> tuple:
        """Eval-mode (mu, sigma) numpy arrays without recording a graph."""
        was_training = self.training
        self.eval()
        try:
            with ad.no_grad():
                mu, sigma = self.forward(g, t)
        finally:
            self.train(was_training)
        return mu.data, sigma.data


def node_features(g: TemporalGraph, t: int) -> np.ndarray:
    """Zero-padded adjacency rows: one n-wide feature row per node."""
    return g.adjacency(t).matrix


class STTransformerG2G(EmbeddingModel):
    sigma_offset = 1.0

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__(cfg)
        d = cfg.d
        self.gcn = [
            GCNLayer(cfg.n, d, rng, dropout=0.5, name="gcn0"),
            GCNLayer(d, d, rng, dropout=0.5, name="gcn1"),
            GCNLayer(d, d, rng, dropout=0.5, name="gcn2"),
        ]
        self.encoder = EncoderBlock(d, rng, norm=cfg.norm)
        self.combine = PointwiseTemporalConv(cfg.lookback + 1)
        self.intermediate = Linear(d, cfg.intermediate, rng, name="intermediate")
        self.head = GaussianHead(cfg.intermediate, cfg.d_out, rng, self.sigma_offset)

    def spatial(self, g: TemporalGraph, t: int) -> Tensor:
        X = Tensor(self.features(g, t))
        A_norm = self._cache.get(g, ("norm", t), lambda: normalized_adjacency(self.features(g, t)))
        for layer in self.gcn:
            X = layer(X, A_norm)
        return X

    def forward(self, g: TemporalGraph, t: int) -> tuple:
        steps = [self.spatial(g, tau) for tau in self.window(g, t)]
        seq = ad.stack(steps, axis=1)  # (n, l+1, d)
        seq = seq + positional_encoding(len(steps), self.cfg.d)
        h = self.combine(self.encoder(seq))
        h = ad.tanh(self.intermediate(h))
        return self.head(h)

    def attention_matrix(self, g: TemporalGraph, t: int) -> np.ndarray:
        """Encoder attention weights at ``t`` averaged over nodes, (l+1, l+1)."""
        self.embed(g, t)
        return self.encoder.attention.last_weights.mean(axis=0)


class DGMamba(EmbeddingModel):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__(cfg)
        self.input_proj = Linear(cfg.n, cfg.d_model, rng, name="input_proj")
        self.mamba = [
            MambaBlock(cfg.d_model, cfg.d_state, cfg.d_conv, rng, expand=cfg.expand, scan_method=cfg.scan_method)
            for _ in range(cfg.mamba_layers)
        ]
        self.dropout = Dropout(cfg.dropout, rng)
        self.intermediate = Linear(cfg.d_model, cfg.intermediate, rng, name="intermediate")
        self.head = GaussianHead(cfg.intermediate, cfg.d_out, rng, self.sigma_offset)

    def snapshot_features(self, g: TemporalGraph, t: int) -> Tensor:
        return Tensor(self.features(g, t))

    def sequence(self, g: TemporalGraph, t: int) -> Tensor:
        """Projected per-node input sequences, (n, l+1, d_model)."""
        steps = [self.snapshot_features(g, tau) for tau in self.window(g, t)]
        return self.input_proj(ad.stack(steps, axis=1))

    def temporal(self, x: Tensor) -> Tensor:
        for block in self.mamba:
            x = block(x)
        return x

    def forward(self, g: TemporalGraph, t: int) -> tuple:
        e = self.temporal(self.sequence(g, t))
        e = self.dropout(e.mean(axis=1))
        x = ad.elu(ad.tanh(self.intermediate(e)))
        return self.head(x)

    def hidden_attention(self, g: TemporalGraph, t: int) -> np.ndarray:
        """First Mamba block's implicit attention at ``t``, averaged over nodes."""
        from .ssm import hidden_attention

        with ad.no_grad():
            x = self.sequence(g, t)
        return hidden_attention(self.mamba[0], x)


class GDGMamba(DGMamba):
    """DG-Mamba with a GINE convolution over each snapshot's edges first."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__(cfg, rng)
        self.gine = GINELayer(cfg.n, rng, d_edge=1)

    def snapshot_features(self, g: TemporalGraph, t: int) -> Tensor:
        X = Tensor(self.features(g, t))
        src, dst, w = self._cache.get(g, ("edges", t), lambda: message_edges(g.snapshots[t], g.directed))
        return self.gine(X, src, dst, w)


def build_model(cfg: ModelConfig, rng: np.random.Generator | None = None) -> EmbeddingModel:
    cfg.validate()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    kind = {"st-transformerg2g": STTransformerG2G, "dg-mamba": DGMamba, "gdg-mamba": GDGMamba}[cfg.model]
    return kind(cfg, rng)


def st_transformerg2g_forward(model: STTransformerG2G, g: TemporalGraph, t: int) -> tuple:
    return model(g, t)


def dg_mamba_forward(model: DGMamba, g: TemporalGraph, t: int) -> tuple:
    return model(g, t)


def gdg_mamba_forward(model: GDGMamba, g: TemporalGraph, t: int) -> tuple:
    return model(g, t)
