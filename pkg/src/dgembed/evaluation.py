"""Temporal link prediction: pair sampling, logistic classifier, MAP and MRR."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .autodiff import Parameter
from .errors import DataError, SamplingError
from .graph import TemporalGraph
from .optim import Adam


@dataclass
class LinkSamples:
    """Parallel arrays of candidate pairs at one timestamp; label 1 means an edge."""

    t: int
    u: np.ndarray
    v: np.ndarray
    label: np.ndarray

    def __len__(self):
        return len(self.u)


@dataclass
class RankingResult:
    query: tuple
    candidates: np.ndarray
    scores: np.ndarray
    relevant: np.ndarray

    @classmethod
    def rank(cls, query, candidates, scores, relevant) -> "RankingResult":
        """Sort by score descending, ties by candidate id ascending."""
        candidates = np.asarray(candidates)
        scores = np.asarray(scores, dtype=float)
        order = np.lexsort((candidates, -scores))
        return cls(query, candidates[order], scores[order], np.asarray(relevant, dtype=bool)[order])


@dataclass
class Metrics:
    map: float
    mrr: float
    queries: int


def _edge_set(g: TemporalGraph, t: int) -> set:
    s = g.snapshots[t]
    edges = set(zip(s.src.tolist(), s.dst.tolist()))
    if not g.directed:
        edges |= {(v, u) for u, v in edges}
    return edges


def sample_link_pairs(g: TemporalGraph, t: int, ratio: int = 10, rng=None, max_tries: int = 1000) -> LinkSamples:
    """All edges of snapshot ``t`` plus ``ratio`` times as many non-edges.

    Negatives are uniform ordered pairs ``(u, v)`` with ``u != v`` drawn by
    rejection: never an edge, never repeated.  Undirected edges are oriented
    at random so that either endpoint can act as the query source.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    s = g.snapshots[t]
    if s.num_edges == 0:
        raise DataError(f"snapshot {t} has no edges to sample")
    src, dst = s.src.copy(), s.dst.copy()
    if not g.directed:
        flip = rng.random(len(src)) < 0.5
        src[flip], dst[flip] = s.dst[flip], s.src[flip]
    edges = _edge_set(g, t)
    wanted = ratio * len(src)
    if wanted > g.n * (g.n - 1) - len(edges):
        raise SamplingError(f"snapshot {t} is too dense for {wanted} negatives")
    taken = set()
    neg_u, neg_v = [], []
    misses = 0
    while len(neg_u) < wanted:
        u, v = (int(x) for x in rng.integers(g.n, size=2))
        if u == v or (u, v) in edges or (u, v) in taken:
            misses += 1
            if misses > max_tries * max(wanted, 1):
                raise SamplingError(f"gave up finding non-edges at t={t} after {misses} rejections")
            continue
        taken.add((u, v))
        neg_u.append(u)
        neg_v.append(v)
    u = np.concatenate([src, np.array(neg_u, dtype=np.int64)])
    v = np.concatenate([dst, np.array(neg_v, dtype=np.int64)])
    label = np.concatenate([np.ones(len(src)), np.zeros(len(neg_u))])
    return LinkSamples(t, u, v, label)


def pair_features(mu: np.ndarray, u: np.ndarray, v: np.ndarray, sigma: np.ndarray | None = None) -> np.ndarray:
    parts = [mu[u], mu[v]]
    if sigma is not None:
        parts += [sigma[u], sigma[v]]
    return np.concatenate(parts, axis=1)


class LinkClassifier:
    """Logistic regression ``sigmoid(w . x + b)``."""

    def __init__(self, weight: np.ndarray, bias: float):
        self.weight = weight
        self.bias = bias

    def score(self, X: np.ndarray) -> np.ndarray:
        z = X @ self.weight + self.bias
        return expit(z)


def train_link_classifier(X: np.ndarray, y: np.ndarray, lr: float = 1e-3, max_epochs: int = 500, tol: float = 1e-6) -> LinkClassifier:
    """Full-batch Adam on the mean logistic loss until a plateau or ``max_epochs``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(np.unique(y)) < 2:
        raise DataError("link classifier needs both positive and negative samples")
    # Gradients are written out by hand: this loop runs on every evaluation and
    # the tape overhead dominates for a single affine layer.
    w = Parameter(np.zeros(X.shape[1]), "classifier.weight")
    b = Parameter(np.zeros(()), "classifier.bias")
    opt = Adam([w, b], lr=lr)
    prev = np.inf
    for _ in range(max_epochs):
        z = X @ w.data + b.data
        # -[y log s(z) + (1-y) log(1-s(z))] = y softplus(-z) + (1-y) softplus(z)
        value = float(np.mean(y * np.logaddexp(0.0, -z) + (1.0 - y) * np.logaddexp(0.0, z)))
        resid = (expit(z) - y) / len(y)
        w.grad = X.T @ resid
        b.grad = np.asarray(resid.sum())
        opt.step()
        if abs(prev - value) < tol:
            break
        prev = value
    return LinkClassifier(w.data.copy(), float(b.data))


def average_precision(relevant: np.ndarray) -> float:
    rel = np.asarray(relevant, dtype=bool)
    hits = np.cumsum(rel)
    ranks = np.nonzero(rel)[0] + 1
    return float(np.mean(hits[rel] / ranks)) if len(ranks) else 0.0


def compute_map(results) -> float:
    """Mean AP over queries that have at least one relevant candidate."""
    if not results:
        raise DataError("no ranking results")
    aps = [average_precision(r.relevant) for r in results if np.any(r.relevant)]
    return float(np.mean(aps)) if aps else 0.0


def compute_mrr(results) -> float:
    if not results:
        raise DataError("no ranking results")
    total = 0.0
    for r in results:
        hit = np.nonzero(r.relevant)[0]
        if len(hit):
            total += 1.0 / (int(hit[0]) + 1)
    return float(total / len(results))


def rank_queries(samples: LinkSamples, scores: np.ndarray) -> list:
    results = []
    for u in np.unique(samples.u).tolist():
        mask = samples.u == u
        if not np.any(samples.label[mask] == 1):
            continue
        results.append(RankingResult.rank((samples.t, u), samples.v[mask], scores[mask], samples.label[mask] == 1))
    return results


def evaluate(
    embeddings: dict,
    g: TemporalGraph,
    seed: int = 0,
    ratio: int = 10,
    use_sigma: bool = False,
    split: str = "test",
) -> Metrics:
    """Train the classifier on training-period pairs and score ``split`` queries.

    ``embeddings`` maps timestamp to ``(mu, sigma)``; timestamps without an
    entry are skipped.  Negatives are redrawn per timestamp from a stream
    derived from ``seed`` and ``t``.
    """
    train_range, val_range, test_range = g.split_ranges()
    target = {"test": test_range, "val": val_range}[split]

    def features(samples):
        mu, sigma = embeddings[samples.t]
        return pair_features(mu, samples.u, samples.v, sigma if use_sigma else None)

    train_samples = [
        sample_link_pairs(g, t, ratio, np.random.default_rng([seed, 0, t]))
        for t in train_range
        if t in embeddings and g.snapshots[t].num_edges
    ]
    if not train_samples:
        raise DataError("no training-period timestamps with embeddings and edges")
    X = np.concatenate([features(s) for s in train_samples])
    y = np.concatenate([s.label for s in train_samples])
    clf = train_link_classifier(X, y)

    results = []
    for t in target:
        if t not in embeddings or not g.snapshots[t].num_edges:
            continue
        samples = sample_link_pairs(g, t, ratio, np.random.default_rng([seed, 1, t]))
        results.extend(rank_queries(samples, clf.score(features(samples))))
    if not results:
        raise DataError(f"no {split} queries to evaluate")
    return Metrics(compute_map(results), compute_mrr(results), len(results))


def shuffled_embeddings(embeddings: dict, rng: np.random.Generator) -> dict:
    """Same vectors, node identities permuted independently per timestamp."""
    out = {}
    for t, (mu, sigma) in sorted(embeddings.items()):
        perm = rng.permutation(mu.shape[0])
        out[t] = (mu[perm], sigma[perm])
    return out


def metrics_record(metrics: Metrics, dataset: str, model: str, lookback: int, seed: int, epochs_run: int, wall_time_s=None) -> str:
    record = {
        "dataset": dataset,
        "model": model,
        "lookback": lookback,
        "seed": seed,
        "MAP": metrics.map,
        "MRR": metrics.mrr,
        "epochs_run": epochs_run,
        "wall_time_s": wall_time_s,
    }
    return json.dumps(record, sort_keys=False)
