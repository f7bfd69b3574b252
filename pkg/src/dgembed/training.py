"""Training loop with early stopping, checkpoints and embedding export."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import DataError, TrainingError
from .graph import TemporalGraph, sample_triplets
from .models import EmbeddingModel, ModelConfig, build_model, triplet_loss
from .optim import Adam

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"DGEMBCKP"
CHECKPOINT_VERSION = 1


@dataclass
class TrainingHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    def to_csv(self, header: str = "") -> str:
        lines = [f"# {header}"] if header else []
        lines.append("epoch,train_loss,val_loss")
        for i, (tr, va) in enumerate(zip(self.train_loss, self.val_loss), start=1):
            lines.append(f"{i},{tr!r},{va!r}")
        lines.append(f"# best_epoch={self.best_epoch} stopped_epoch={self.stopped_epoch}")
        return "\n".join(lines) + "\n"


def config_hash(cfg: ModelConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def triplet_rng(seed: int, phase: int, epoch: int, t: int) -> np.random.Generator:
    return np.random.default_rng([seed, phase, epoch, t])


def timestamp_loss(model: EmbeddingModel, g: TemporalGraph, t: int, rng: np.random.Generator):
    mu, sigma = model(g, t)
    triplets = sample_triplets(g.snapshots[t], g.n, model.cfg.k_near, rng)
    return triplet_loss(triplets, mu, sigma)


def train(model: EmbeddingModel, g: TemporalGraph, cfg: ModelConfig | None = None):
    """Fit ``model`` on the training timestamps; returns (model, history).

    One optimiser step per training timestamp; triplets are redrawn every
    epoch.  Validation triplets are fixed across epochs.  The weights with
    the lowest validation loss are restored at the end.
    """
    cfg = cfg or model.cfg
    if not g.has_splits:
        raise DataError("training needs a graph with train/val/test splits")
    train_ts = [t for t in range(cfg.lookback, g.train_end)]
    val_ts = [t for t in range(max(cfg.lookback, g.train_end), g.val_end)]
    if not train_ts:
        raise DataError(f"no training timestamps at lookback {cfg.lookback}")
    params = model.parameters()
    opt = Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    history = TrainingHistory()
    best_val, best_state, stale = math.inf, model.state_dict(), 0

    for epoch in range(1, cfg.epochs + 1):
        model.train()
        total = 0.0
        for t in train_ts:
            opt.zero_grad()
            loss = timestamp_loss(model, g, t, triplet_rng(cfg.seed, 0, epoch, t))
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError("non-finite training loss", epoch, t)
            ad.backward(loss)
            opt.step()
            total += value
        history.train_loss.append(total)

        model.eval()
        val = 0.0
        with ad.no_grad():
            for t in val_ts:
                val += float(timestamp_loss(model, g, t, triplet_rng(cfg.seed, 1, 0, t)).data)
        if not math.isfinite(val):
            raise TrainingError("non-finite validation loss", epoch, val_ts[-1] if val_ts else None)
        history.val_loss.append(val)
        log.info("epoch %d train %.6g val %.6g", epoch, total, val)

        if not val_ts or val < best_val:
            best_val, best_state, stale = val, model.state_dict(), 0
            history.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    history.stopped_epoch = history.epochs_run
    model.load_state_dict(best_state)
    model.eval()
    return model, history


def fit(g: TemporalGraph, cfg: ModelConfig):
    """Build from ``cfg`` (seeded) and train."""
    model = build_model(cfg, np.random.default_rng(cfg.seed))
    return train(model, g, cfg)


# --- checkpoints --------------------------------------------------------------------

def save_checkpoint(model: EmbeddingModel, path, extra: dict | None = None) -> None:
    """Binary container: magic, version, JSON header, raw little-endian float64 blobs."""
    state = model.state_dict()
    tensors, offset = [], 0
    for name, arr in state.items():
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = {
        "version": CHECKPOINT_VERSION,
        "config": model.cfg.to_dict(),
        "config_hash": config_hash(model.cfg),
        "tensors": tensors,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for arr in state.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Return (model, header)."""
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise DataError(f"{path} is not a checkpoint")
    version, size = struct.unpack("<IQ", raw[8:20])
    if version != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    header = json.loads(raw[20 : 20 + size])
    body = raw[20 + size :]
    state = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=entry["offset"])
        state[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
    cfg = ModelConfig.from_dict(header["config"])
    model = build_model(cfg, np.random.default_rng(cfg.seed))
    model.load_state_dict(state)
    model.eval()
    return model, header


# --- embeddings ---------------------------------------------------------------------

def embed_all(model: EmbeddingModel, g: TemporalGraph) -> dict:
    """``{t: (mu, sigma)}`` for every timestamp with a full look-back window."""
    return {t: model.embed(g, t) for t in range(model.lookback, g.T)}


def format_embedding_csv(mu: np.ndarray, sigma: np.ndarray, header: str = "") -> str:
    L = mu.shape[1]
    cols = ["node_id"] + [f"mu_{k}" for k in range(L)] + [f"sigma_{k}" for k in range(L)]
    lines = [f"# {header}"] if header else []
    lines.append(",".join(cols))
    for i in range(mu.shape[0]):
        vals = [repr(float(x)) for x in mu[i]] + [repr(float(x)) for x in sigma[i]]
        lines.append(f"{i}," + ",".join(vals))
    return "\n".join(lines) + "\n"


def write_embeddings(embeddings: dict, directory, header: str = "") -> list:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, (mu, sigma) in sorted(embeddings.items()):
        path = directory / f"embeddings_t{t:04d}.csv"
        path.write_text(format_embedding_csv(mu, sigma, header), encoding="utf-8")
        paths.append(path)
    return paths


def read_embeddings(directory) -> dict:
    out = {}
    for path in sorted(Path(directory).glob("embeddings_t*.csv")):
        t = int(path.stem.split("_t")[1])
        rows = [line for line in path.read_text(encoding="utf-8").splitlines() if not line.startswith("#")]
        data = np.array([[float(x) for x in r.split(",")[1:]] for r in rows[1:]])
        L = data.shape[1] // 2
        out[t] = (data[:, :L], data[:, L:])
    return out
