"""Discrete-time dynamic graphs: ingestion, padding, splits, triplets, SBM."""

from __future__ import annotations

import csv
import gzip
import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ContractError, DataError, ParseError

# Train/val/test snapshot counts as published for the benchmark datasets.
PUBLISHED_SPLITS = {
    "reality_mining": (90, 63, 9, 18),
    "uci": (88, 62, 9, 17),
    "sbm": (50, 35, 5, 10),
    "bitcoin_otc": (137, 95, 14, 28),
    "slashdot": (12, 8, 2, 2),
}


@dataclass(frozen=True)
class Snapshot:
    t: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    active: np.ndarray

    @property
    def num_edges(self) -> int:
        return len(self.src)

    def edges(self):
        return list(zip(self.src.tolist(), self.dst.tolist(), self.weight.tolist()))


@dataclass(frozen=True)
class PaddedAdjacency:
    t: int
    matrix: np.ndarray


@dataclass(frozen=True)
class TripletSet:
    t: int
    triples: np.ndarray  # (k, 3) rows of (reference, near, far)

    def __len__(self):
        return len(self.triples)


@dataclass(frozen=True)
class TemporalGraph:
    snapshots: tuple
    n: int
    directed: bool
    train_end: int | None
    val_end: int | None
    node_ids: tuple = ()
    labels: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        T = len(self.snapshots)
        if self.has_splits and not 0 < self.train_end < self.val_end <= T:
            raise DataError(f"invalid split boundaries {self.train_end}/{self.val_end} for T={T}")
        for i, s in enumerate(self.snapshots):
            if s.t != i:
                raise DataError(f"snapshot {i} carries index {s.t}")

    @property
    def T(self) -> int:
        return len(self.snapshots)

    @property
    def has_splits(self) -> bool:
        return self.train_end is not None and self.val_end is not None

    def adjacency(self, t: int) -> PaddedAdjacency:
        return pad_adjacency(self.snapshots[t], self.n, self.directed)

    def split_ranges(self):
        if not self.has_splits:
            raise DataError("graph has no train/val/test split")
        return range(0, self.train_end), range(self.train_end, self.val_end), range(self.val_end, self.T)

    def equals(self, other: "TemporalGraph") -> bool:
        if (self.n, self.directed, self.T, self.train_end, self.val_end) != (
            other.n, other.directed, other.T, other.train_end, other.val_end
        ):
            return False
        for a, b in zip(self.snapshots, other.snapshots):
            for x, y in ((a.src, b.src), (a.dst, b.dst), (a.weight, b.weight), (a.active, b.active)):
                if not np.array_equal(x, y):
                    return False
        return True


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_timestamps(T: int, ratios=(0.7, 0.1, 0.2)) -> tuple:
    """Return ``(train_end, val_end)``; the test split is the remainder."""
    if T < 5:
        raise DataError(f"need at least 5 timestamps to split, got {T}")
    train_end = _round_half_up(ratios[0] * T)
    val_end = train_end + _round_half_up(ratios[1] * T)
    return train_end, val_end


def pad_adjacency(s: Snapshot, n: int, directed: bool = False) -> PaddedAdjacency:
    if s.num_edges and (max(s.src.max(), s.dst.max()) >= n):
        raise ContractError(f"snapshot {s.t} has an endpoint >= n={n}")
    A = np.zeros((n, n))
    A[s.src, s.dst] = s.weight
    if not directed:
        A[s.dst, s.src] = s.weight
    return PaddedAdjacency(s.t, A)


def make_snapshot(t: int, edges, n: int, directed: bool, active=None) -> Snapshot:
    """Build a snapshot from ``(u, v, w)`` triples; later duplicates win."""
    dedup = {}
    for u, v, w in edges:
        key = (u, v) if directed else (min(u, v), max(u, v))
        dedup[key] = float(w)
    keys = sorted(dedup)
    src = np.array([k[0] for k in keys], dtype=np.int64)
    dst = np.array([k[1] for k in keys], dtype=np.int64)
    weight = np.array([dedup[k] for k in keys], dtype=np.float64)
    if not np.all(np.isfinite(weight)):
        raise DataError(f"snapshot {t} has non-finite edge weights")
    if active is None:
        active = np.union1d(src, dst)
    return Snapshot(t, src, dst, weight, np.asarray(active, dtype=np.int64))


# --- ingestion ------------------------------------------------------------------------

def _open_text(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, encoding="utf-8")


def _id_sort_key(token: str):
    try:
        return (0, int(token), token)
    except ValueError:
        return (1, 0, token)


def load_edge_list(
    path,
    format: str = "snapshot",
    bin_width: float | None = None,
    directed: bool = False,
    split: tuple | None = None,
) -> TemporalGraph:
    """Read ``src dst weight tag`` lines into a :class:`TemporalGraph`.

    ``format="snapshot"`` treats the tag as a snapshot id (distinct tags are
    ordered and renumbered 0..T-1); ``format="binned"`` treats it as a unix time
    and assigns ``floor((time - t_min) / bin_width)``, keeping empty bins.
    Node ids are renumbered densely in sorted order (numeric ids numerically).
    """
    path = Path(path)
    if format not in ("snapshot", "binned"):
        raise ConfigurationError(f"unknown edge-list format {format!r}")
    if format == "binned" and not (bin_width and bin_width > 0):
        raise ConfigurationError("binned format needs a positive bin width")
    rows = []
    with _open_text(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ParseError(f"expected 4 fields 'src dst weight tag', got {len(parts)}", lineno)
            try:
                w = float(parts[2])
                tag = float(parts[3])
            except ValueError:
                raise ParseError(f"non-numeric weight or tag in {line!r}", lineno) from None
            if not (math.isfinite(w) and math.isfinite(tag)):
                raise ParseError("non-finite weight or tag", lineno)
            rows.append((parts[0], parts[1], w, tag))
    if not rows:
        raise DataError("no edges")

    node_ids = sorted({r[0] for r in rows} | {r[1] for r in rows}, key=_id_sort_key)
    dense = {tok: i for i, tok in enumerate(node_ids)}
    if format == "snapshot":
        tags = sorted({r[3] for r in rows})
        tag_index = {tag: i for i, tag in enumerate(tags)}
        bins = [tag_index[r[3]] for r in rows]
        T = len(tags)
    else:
        t_min = min(r[3] for r in rows)
        bins = [int(math.floor((r[3] - t_min) / bin_width)) for r in rows]
        T = max(bins) + 1

    per_t = [[] for _ in range(T)]
    for (u, v, w, _), b in zip(rows, bins):
        per_t[b].append((dense[u], dense[v], w))
    n = len(node_ids)
    snapshots = tuple(make_snapshot(t, per_t[t], n, directed) for t in range(T))
    # graphs too short to split still load; training then refuses them
    train_end, val_end = split if split else (split_timestamps(T) if T >= 5 else (None, None))
    return TemporalGraph(snapshots, n, directed, train_end, val_end, tuple(node_ids))


def write_edge_list(g: TemporalGraph, path) -> None:
    """Export with dense ids and the snapshot index as tag."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in g.snapshots:
            for u, v, w in s.edges():
                fh.write(f"{u} {v} {w!r} {s.t}\n")


def write_id_map(g: TemporalGraph, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["original_id", "dense_id"])
        ids = g.node_ids or tuple(str(i) for i in range(g.n))
        for i, tok in enumerate(ids):
            writer.writerow([tok, i])


def graph_stats(g: TemporalGraph) -> dict:
    return {
        "n": g.n,
        "T": g.T,
        "directed": g.directed,
        "train_end": g.train_end,
        "val_end": g.val_end,
        "split": [g.train_end, g.val_end - g.train_end, g.T - g.val_end] if g.has_splits else None,
        "edges_per_snapshot": [s.num_edges for s in g.snapshots],
    }


def save_bundle(g: TemporalGraph, directory, provenance: dict | None = None) -> Path:
    """Write the canonical on-disk dataset bundle.

    Output bytes depend only on ``g`` and ``provenance`` (a small dict such as
    the config hash and seed, stored in ``stats.json`` and as a comment line).
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "snapshots.tsv", "w", encoding="utf-8") as fh:
        if provenance:
            fh.write("# " + " ".join(f"{k}={v}" for k, v in sorted(provenance.items())) + "\n")
        fh.write("t\tsrc\tdst\tweight\n")
        for s in g.snapshots:
            for u, v, w in s.edges():
                fh.write(f"{s.t}\t{u}\t{v}\t{w!r}\n")
    with open(directory / "active.tsv", "w", encoding="utf-8") as fh:
        for s in g.snapshots:
            fh.write(f"{s.t}\t" + " ".join(map(str, s.active.tolist())) + "\n")
    write_id_map(g, directory / "id_map.csv")
    with open(directory / "stats.json", "w", encoding="utf-8") as fh:
        stats = graph_stats(g)
        if provenance:
            stats["provenance"] = provenance
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if g.labels is not None:
        np.savetxt(directory / "labels.tsv", g.labels, fmt="%d", delimiter="\t")
    return directory


def load_bundle(directory) -> TemporalGraph:
    directory = Path(directory)
    if not (directory / "stats.json").exists():
        raise DataError(f"{directory} is not a dataset bundle (stats.json missing)")
    stats = json.loads((directory / "stats.json").read_text(encoding="utf-8"))
    n, T, directed = stats["n"], stats["T"], stats["directed"]
    per_t = [[] for _ in range(T)]
    with open(directory / "snapshots.tsv", encoding="utf-8") as fh:
        for line in fh:
            if line.startswith(("#", "t\t")):
                continue
            t, u, v, w = line.rstrip("\n").split("\t")
            per_t[int(t)].append((int(u), int(v), float(w)))
    active = {}
    with open(directory / "active.tsv", encoding="utf-8") as fh:
        for line in fh:
            t, _, ids = line.rstrip("\n").partition("\t")
            active[int(t)] = [int(x) for x in ids.split()] if ids else []
    with open(directory / "id_map.csv", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        node_ids = tuple(row[0] for row in reader)
    labels = None
    if (directory / "labels.tsv").exists():
        labels = np.loadtxt(directory / "labels.tsv", dtype=np.int64, delimiter="\t", ndmin=2)
    snapshots = tuple(make_snapshot(t, per_t[t], n, directed, active.get(t)) for t in range(T))
    return TemporalGraph(snapshots, n, directed, stats["train_end"], stats["val_end"], node_ids, labels)


# --- distances and triplets ---------------------------------------------------------

def _neighbor_lists(src, dst, n: int) -> list:
    nbrs = [[] for _ in range(n)]
    for u, v in zip(src.tolist(), dst.tolist()):
        if u != v:
            nbrs[u].append(v)
            nbrs[v].append(u)
    return [sorted(set(x)) for x in nbrs]


def _bfs(nbrs: list, source: int, max_depth: float = math.inf) -> dict:
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        if dist[u] >= max_depth:
            continue
        for v in nbrs[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def shortest_path_length(adj: PaddedAdjacency, u: int, v: int):
    """Hop count ignoring direction and weight; ``math.inf`` when unreachable."""
    n = adj.matrix.shape[0]
    if not (0 <= u < n and 0 <= v < n):
        raise ContractError(f"node ids ({u}, {v}) out of range for n={n}")
    src, dst = np.nonzero(adj.matrix)
    dist = _bfs(_neighbor_lists(src, dst, n), u)
    return dist.get(v, math.inf)


def sample_triplets(s: Snapshot, n: int, k_near: int = 1, rng: np.random.Generator | None = None) -> TripletSet:
    """One ``(reference, near, far)`` triple per eligible active node.

    ``near`` is drawn from nodes within ``k_near`` hops, ``far`` from the
    remaining active nodes (farther or unreachable).
    """
    if k_near < 1:
        raise ContractError(f"k_near must be >= 1, got {k_near}")
    rng = rng if rng is not None else np.random.default_rng(0)
    nbrs = _neighbor_lists(s.src, s.dst, n)
    active = s.active
    is_active = np.zeros(n, dtype=bool)
    is_active[active] = True
    n_active = len(active)
    triples = []
    for v in active.tolist():
        if not nbrs[v]:
            continue
        ball = _bfs(nbrs, v, k_near)
        near = sorted(u for u in ball if u != v)
        n_far = n_active - sum(1 for u in ball if is_active[u])
        if not near or n_far <= 0:
            continue
        pick_near = near[rng.integers(len(near))]
        for _ in range(32):
            cand = int(active[rng.integers(n_active)])
            if cand not in ball:
                break
        else:
            far = [u for u in active.tolist() if u not in ball]
            cand = far[rng.integers(len(far))]
        triples.append((v, pick_near, cand))
    arr = np.array(triples, dtype=np.int64).reshape(-1, 3)
    return TripletSet(s.t, arr)


# --- synthetic stochastic block model ------------------------------------------------

def _sample_pairs(members: np.ndarray, rows: np.ndarray, p_in: float, p_out: float, rng) -> set:
    n = len(members)
    edges = set()
    in_rows = np.zeros(n, dtype=bool)
    in_rows[rows] = True
    for u in rows.tolist():
        probs = np.where(members == members[u], p_in, p_out)
        draws = rng.random(n) < probs
        # a pair of two redrawn nodes is drawn once, from the smaller id
        draws[u] = False
        draws[in_rows & (np.arange(n) < u)] = False
        for v in np.nonzero(draws)[0].tolist():
            edges.add((min(u, v), max(u, v)))
    return edges


def generate_sbm(
    n: int,
    communities: int = 3,
    p_in: float = 0.2,
    p_out: float = 0.01,
    churn=(10, 20),
    T: int = 50,
    rng: np.random.Generator | None = None,
    split: tuple | None = None,
) -> TemporalGraph:
    """Evolving stochastic block model with equal-sized communities.

    Each step after the first moves a uniform count in ``churn`` of random
    nodes to a different community and redraws every edge touching them.
    """
    lo, hi = churn
    if communities < 1 or n % communities:
        raise ConfigurationError(f"n={n} is not divisible by {communities} communities")
    if not (0 <= lo <= hi <= n):
        raise ConfigurationError(f"invalid churn range {churn} for n={n}")
    if not (0.0 <= p_out <= 1.0 and 0.0 <= p_in <= 1.0):
        raise ConfigurationError("probabilities must lie in [0, 1]")
    if communities == 1 and hi > 0:
        raise ConfigurationError("churn needs at least two communities")
    rng = rng if rng is not None else np.random.default_rng(0)
    members = np.repeat(np.arange(communities), n // communities)

    # snapshot 0: each unordered pair once
    edges = set()
    upper = np.triu(rng.random((n, n)), k=1)
    probs = np.where(members[:, None] == members[None, :], p_in, p_out)
    for u, v in zip(*np.nonzero((upper > 0) & (upper < probs))):
        edges.add((int(u), int(v)))

    labels = [members.copy()]
    edge_sets = [sorted(edges)]
    for _ in range(1, T):
        count = int(rng.integers(lo, hi + 1))
        moved = np.sort(rng.choice(n, size=count, replace=False))
        for u in moved.tolist():
            shift = int(rng.integers(1, communities))
            members[u] = (members[u] + shift) % communities
        moved_set = set(moved.tolist())
        edges = {e for e in edges if e[0] not in moved_set and e[1] not in moved_set}
        edges |= _sample_pairs(members, moved, p_in, p_out, rng)
        labels.append(members.copy())
        edge_sets.append(sorted(edges))

    all_nodes = np.arange(n)
    snapshots = tuple(
        make_snapshot(t, [(u, v, 1.0) for u, v in es], n, False, active=all_nodes)
        for t, es in enumerate(edge_sets)
    )
    train_end, val_end = split if split else (split_timestamps(T) if T >= 5 else (None, None))
    return TemporalGraph(snapshots, n, False, train_end, val_end, tuple(str(i) for i in range(n)), np.array(labels))
