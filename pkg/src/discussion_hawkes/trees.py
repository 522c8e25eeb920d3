"""Discussion-tree ingestion, validation, windowing and summaries.

A corpus arrives as CSV rows ``id,time,parent_id`` (time in hours since the
corpus epoch, parent_id empty for root posts). Rows are grouped into
clusters: one per root post, each holding strictly increasing event times
and a 1-based parent-index vector linking every comment to its parent.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

TIE_EPS = 1e-9


class TreeDataError(ValueError):
    pass


@dataclass(frozen=True)
class Node:
    id: str
    time: float
    parent_id: str | None = None


@dataclass(frozen=True)
class Cluster:
    """One discussion tree.

    ``times`` are strictly increasing, times[0] is the immigrant (root post).
    ``parents`` is 1-based: parents[0] == 0 and parents[j] in {1..j} points at
    the generating event. ``window_end`` is the observation boundary a.
    """

    times: np.ndarray
    parents: np.ndarray
    window_end: float
    node_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "parents", np.asarray(self.parents, dtype=int))
        t, b = self.times, self.parents
        n = t.shape[0]
        if n < 1 or b.shape[0] != n:
            raise TreeDataError("times and parents must be nonempty and equal length")
        if b[0] != 0:
            raise TreeDataError("root parent index must be 0")
        if n > 1:
            if np.any(np.diff(t) <= 0):
                raise TreeDataError("times must be strictly increasing")
            j = np.arange(1, n)
            if np.any(b[1:] < 1) or np.any(b[1:] > j):
                raise TreeDataError("parents[j] must lie in {1..j}")
            if np.any(t[b[1:] - 1] >= t[1:]):
                raise TreeDataError("each event must be later than its parent")
        if not np.isfinite(self.window_end) or self.window_end <= t[0]:
            raise TreeDataError("window_end must exceed the immigrant time")
        if t[-1] >= self.window_end:
            raise TreeDataError("all times must precede window_end")

    @property
    def n(self) -> int:
        return self.times.shape[0]


@dataclass(frozen=True)
class ClusterSet:
    clusters: tuple[Cluster, ...]
    epoch_label: str = ""

    def __len__(self) -> int:
        return len(self.clusters)

    def __iter__(self):
        return iter(self.clusters)

    def sizes(self) -> np.ndarray:
        return np.array([c.n for c in self.clusters], dtype=int)

    def total_nodes(self) -> int:
        return int(self.sizes().sum())


def parse_nodes(stream, fmt: str = "csv") -> list[Node]:
    """Read ``id,time,parent_id`` rows. Accepts a text/binary stream or str."""
    if fmt != "csv":
        raise TreeDataError(f"unsupported format {fmt!r}")
    if isinstance(stream, (bytes, bytearray)):
        stream = io.StringIO(stream.decode("utf-8"))
    elif isinstance(stream, str):
        stream = io.StringIO(stream)
    elif isinstance(stream, io.RawIOBase) or isinstance(stream, io.BufferedIOBase):
        stream = io.TextIOWrapper(stream, encoding="utf-8")
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or [h.strip() for h in header[:3]] != ["id", "time", "parent_id"]:
        raise TreeDataError("expected CSV header 'id,time,parent_id'")
    nodes: list[Node] = []
    seen: set[str] = set()
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) < 2:
            raise TreeDataError(f"line {lineno}: expected 3 fields, got {len(row)}")
        node_id = row[0].strip()
        if not node_id:
            raise TreeDataError(f"line {lineno}: empty id")
        if node_id in seen:
            raise TreeDataError(f"line {lineno}: duplicate id {node_id!r}")
        seen.add(node_id)
        try:
            t = float(row[1])
        except ValueError:
            raise TreeDataError(f"line {lineno}: malformed time {row[1]!r}") from None
        if not np.isfinite(t) or t < 0:
            raise TreeDataError(f"line {lineno}: time must be finite and >= 0")
        parent = row[2].strip() if len(row) > 2 and row[2].strip() else None
        nodes.append(Node(node_id, t, parent))
    return nodes


def build_clusters(
    nodes: list[Node], window_hours: float = 48.0, epoch_label: str = ""
) -> ClusterSet:
    """Group nodes into one Cluster per root post.

    The observation window is a_i = t_root + window_hours; nodes at or past
    the window boundary are dropped, along with any descendants (a comment
    cannot attach to a truncated tree). Equal timestamps are nudged apart by
    1e-9 h, parents first, so the strict-ordering invariant holds.
    """
    if window_hours <= 0:
        raise TreeDataError("window_hours must be positive")
    by_id = {nd.id: nd for nd in nodes}
    order = {nd.id: i for i, nd in enumerate(nodes)}

    # Resolve each node's root and depth, detecting dangling parents / cycles.
    root: dict[str, str] = {}
    depth: dict[str, int] = {}

    def resolve(nid: str):
        chain = []
        cur = nid
        while cur not in root:
            nd = by_id[cur]
            if nd.parent_id is None:
                root[cur], depth[cur] = cur, 0
                break
            if nd.parent_id not in by_id:
                raise TreeDataError(f"node {cur!r} references missing parent {nd.parent_id!r}")
            if nd.parent_id in chain or nd.parent_id == cur:
                raise TreeDataError(f"cycle detected through node {cur!r}")
            if by_id[nd.parent_id].time > nd.time:
                raise TreeDataError(f"node {cur!r} is earlier than its parent")
            chain.append(cur)
            cur = nd.parent_id
        for c in reversed(chain):
            p = by_id[c].parent_id
            root[c] = root[p]
            depth[c] = depth[p] + 1

    for nd in nodes:
        resolve(nd.id)

    groups: dict[str, list[Node]] = {}
    for nd in nodes:
        groups.setdefault(root[nd.id], []).append(nd)

    clusters = []
    roots_sorted = sorted(groups, key=lambda r: (by_id[r].time, order[r]))
    for r in roots_sorted:
        a = by_id[r].time + window_hours
        members = [nd for nd in groups[r] if nd.time < a]
        kept = {nd.id for nd in members}
        # Drop descendants of dropped nodes (parent chain must be intact).
        changed = True
        while changed:
            changed = False
            for nd in list(members):
                if nd.parent_id is not None and nd.parent_id not in kept:
                    members.remove(nd)
                    kept.discard(nd.id)
                    changed = True
        members.sort(key=lambda nd: (nd.time, depth[nd.id], order[nd.id]))
        times = np.array([nd.time for nd in members], dtype=float)
        for j in range(1, len(times)):
            if times[j] <= times[j - 1]:
                times[j] = times[j - 1] + TIE_EPS
        index = {nd.id: j + 1 for j, nd in enumerate(members)}
        parents = np.array(
            [0 if nd.parent_id is None else index[nd.parent_id] for nd in members], dtype=int
        )
        clusters.append(
            Cluster(times, parents, window_end=a, node_ids=tuple(nd.id for nd in members))
        )
    return ClusterSet(tuple(clusters), epoch_label=epoch_label)


def split_train_test(
    cluster_set: ClusterSet,
    train_frac: float,
    seed: int,
    train_period: tuple[float, float] | None = None,
    test_period: tuple[float, float] | None = None,
) -> tuple[ClusterSet, ClusterSet]:
    """Random disjoint train/test split by cluster, reproducible per seed.

    Periods restrict eligibility by immigrant time (half-open intervals).
    Test clusters are drawn from the remaining eligible pool at the same
    fraction.
    """
    if not 0 < train_frac < 1:
        raise TreeDataError("train_frac must lie in (0, 1)")

    def in_period(c: Cluster, period) -> bool:
        return period is None or (period[0] <= c.times[0] < period[1])

    train_pool = [i for i, c in enumerate(cluster_set) if in_period(c, train_period)]
    if not train_pool:
        raise TreeDataError("no clusters eligible for training split")
    rng = np.random.default_rng(seed)
    n_train = max(1, int(round(train_frac * len(train_pool))))
    train_idx = set(rng.choice(train_pool, size=n_train, replace=False).tolist())

    test_pool = [
        i
        for i, c in enumerate(cluster_set)
        if i not in train_idx and in_period(c, test_period)
    ]
    if not test_pool:
        raise TreeDataError("no clusters eligible for test split")
    n_test = max(1, int(round(train_frac * len(test_pool))))
    test_idx = set(rng.choice(test_pool, size=n_test, replace=False).tolist())

    train = ClusterSet(
        tuple(cluster_set.clusters[i] for i in sorted(train_idx)), cluster_set.epoch_label
    )
    test = ClusterSet(
        tuple(cluster_set.clusters[i] for i in sorted(test_idx)), cluster_set.epoch_label
    )
    return train, test


def offspring_counts(c: Cluster) -> np.ndarray:
    """z_j = number of events whose parent is j (1-based j, 0-based output)."""
    return np.bincount(c.parents[1:], minlength=c.n + 1)[1:]


def hourly_counts(cluster_set: ClusterSet) -> tuple[np.ndarray, float]:
    """Event counts per wall-clock hour over the corpus span.

    Returns (counts, start_hour) where bin b covers
    [start_hour + b, start_hour + b + 1). Empty interior hours get explicit
    zeros.
    """
    times = np.concatenate([c.times for c in cluster_set.clusters])
    if times.size == 0:
        raise TreeDataError("empty cluster set")
    start = float(np.floor(times.min()))
    nbins = int(np.floor(times.max() - start)) + 1
    counts, _ = np.histogram(times, bins=nbins, range=(start, start + nbins))
    return counts.astype(int), start


def cluster_set_to_json(cluster_set: ClusterSet) -> str:
    return json.dumps(
        {
            "epoch_label": cluster_set.epoch_label,
            "clusters": [
                {
                    "times": c.times.tolist(),
                    "parents": c.parents.tolist(),
                    "window_end": c.window_end,
                }
                for c in cluster_set.clusters
            ],
        }
    )


def cluster_set_from_json(s: str) -> ClusterSet:
    d = json.loads(s)
    return ClusterSet(
        tuple(
            Cluster(np.array(c["times"]), np.array(c["parents"]), c["window_end"])
            for c in d["clusters"]
        ),
        epoch_label=d.get("epoch_label", ""),
    )


def cluster_set_to_csv(cluster_set: ClusterSet) -> str:
    """Emit the node CSV format (id,time,parent_id) for a cluster set."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["id", "time", "parent_id"])
    for i, c in enumerate(cluster_set.clusters):
        ids = c.node_ids or tuple(f"c{i}_{j}" for j in range(c.n))
        for j in range(c.n):
            parent = "" if c.parents[j] == 0 else ids[c.parents[j] - 1]
            w.writerow([ids[j], repr(float(c.times[j])), parent])
    return out.getvalue()
