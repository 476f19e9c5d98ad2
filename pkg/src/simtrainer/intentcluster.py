"""Density-based intent mining: cluster dialogue embeddings, pick exemplar scripts.

The clusterer follows the standard hierarchical density pipeline:

1. core distance of each point = distance to its min_samples-th nearest
   neighbor (the point itself is not its own neighbor);
2. mutual reachability d_mr(a, b) = max(core_a, core_b, d(a, b));
3. exact minimum spanning tree over d_mr (Prim, O(n^2), rows computed on
   demand so memory stays O(n));
4. condensed tree with lambda = 1/d_mr and min_cluster_size pruning;
5. cluster extraction by maximizing stability (excess of mass). The root is
   a legal selection, so a corpus with one dense mass yields one cluster
   rather than all-noise.

Points outside every selected cluster are labeled -1. Fewer points than
min_cluster_size is a valid all-noise outcome, not an error.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from .corpus import Dialogue, DialogueScript, Role, Turn, validate_script
from .errors import ContractViolation


@dataclass
class ClusterParams:
    min_cluster_size: int = 5
    min_samples: int | None = None  # None means: use min_cluster_size

    def __post_init__(self) -> None:
        if self.min_cluster_size < 2:
            raise ContractViolation("min_cluster_size must be >= 2")
        if self.min_samples is not None and self.min_samples < 1:
            raise ContractViolation("min_samples must be >= 1")

    @property
    def effective_min_samples(self) -> int:
        return self.min_samples if self.min_samples is not None else self.min_cluster_size


@dataclass(frozen=True)
class CondensedRow:
    """Child (a point id < n, or a cluster id >= n) leaving its parent cluster.

    ``lam`` is 1/d_mr at the departure; ``size`` is the number of points in
    the child.
    """

    parent: int
    child: int
    lam: float
    size: int


@dataclass
class ClusterResult:
    labels: np.ndarray
    stabilities: np.ndarray
    condensed_tree: list[CondensedRow]


@dataclass(frozen=True)
class Scene:
    scene_id: str
    representative_scripts: tuple[DialogueScript, ...]
    member_dialogue_ids: tuple[str, ...]


def core_distances(points: np.ndarray, min_samples: int) -> np.ndarray:
    """Distance from each point to its min_samples-th nearest other point.

    If fewer than min_samples other points exist, the farthest available
    neighbor is used.
    """
    n = len(points)
    k = min(min_samples, n - 1)
    cores = np.zeros(n)
    if k == 0:
        return cores
    block = 256
    for start in range(0, n, block):
        stop = min(start + block, n)
        d = np.linalg.norm(points[start:stop, None, :] - points[None, :, :], axis=2)
        # k-th nearest excluding self: self-distance 0 occupies index 0
        cores[start:stop] = np.partition(d, k, axis=1)[:, k]
    return cores


def mutual_reachability_row(
    points: np.ndarray, cores: np.ndarray, i: int
) -> np.ndarray:
    d = np.linalg.norm(points - points[i], axis=1)
    return np.maximum(np.maximum(cores, cores[i]), d)


def minimum_spanning_tree(points: np.ndarray, cores: np.ndarray) -> list[tuple[int, int, float]]:
    """Prim's algorithm over mutual reachability; returns (u, v, weight) edges."""
    n = len(points)
    in_tree = np.zeros(n, dtype=bool)
    best = np.full(n, np.inf)
    best_from = np.zeros(n, dtype=np.int64)
    edges: list[tuple[int, int, float]] = []
    current = 0
    in_tree[0] = True
    for _ in range(n - 1):
        row = mutual_reachability_row(points, cores, current)
        improved = row < best
        best[improved] = row[improved]
        best_from[improved] = current
        best[in_tree] = np.inf
        nxt = int(np.argmin(best))
        edges.append((int(best_from[nxt]), nxt, float(best[nxt])))
        in_tree[nxt] = True
        best[nxt] = np.inf
        current = nxt
    return edges


def _single_linkage(edges: list[tuple[int, int, float]], n: int) -> list[tuple[int, int, float, int]]:
    """Merge dendrogram in scipy convention: rows (left, right, dist, size).

    Row i creates node n + i.
    """
    parent = list(range(2 * n - 1))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    sizes = [1] * (2 * n - 1)
    merges: list[tuple[int, int, float, int]] = []
    next_id = n
    for u, v, w in sorted(edges, key=lambda e: e[2]):
        ru, rv = find(u), find(v)
        size = sizes[ru] + sizes[rv]
        merges.append((ru, rv, w, size))
        parent[ru] = parent[rv] = next_id
        sizes[next_id] = size
        next_id += 1
    return merges


def _condense(
    merges: list[tuple[int, int, float, int]], n: int, min_cluster_size: int
) -> tuple[list[CondensedRow], dict[int, float]]:
    """Prune the dendrogram into the condensed tree.

    Splits where both sides hold at least min_cluster_size points create
    child clusters; smaller sides fall out of the parent cluster point by
    point. Returns the rows plus each cluster's birth lambda (root birth 0).
    """
    children: dict[int, tuple[int, int, float]] = {}
    for i, (left, right, dist, _) in enumerate(merges):
        children[n + i] = (left, right, dist)

    def subtree_points(node: int) -> list[int]:
        stack, pts = [node], []
        while stack:
            x = stack.pop()
            if x < n:
                pts.append(x)
            else:
                left, right, _ = children[x]
                stack.extend((left, right))
        return pts

    def subtree_size(node: int) -> int:
        return 1 if node < n else merges[node - n][3]

    rows: list[CondensedRow] = []
    births: dict[int, float] = {}
    root_dendro = n + len(merges) - 1 if merges else 0
    root_cluster = n
    births[root_cluster] = 0.0
    next_cluster = n + 1

    # (dendrogram node, condensed cluster it currently belongs to)
    stack: list[tuple[int, int]] = [(root_dendro, root_cluster)]
    while stack:
        node, cluster = stack.pop()
        if node < n:
            # a bare point can only reach here as the whole input (n == 1)
            rows.append(CondensedRow(cluster, node, np.inf, 1))
            continue
        left, right, dist = children[node]
        lam = 1.0 / dist if dist > 0.0 else np.inf
        left_big = subtree_size(left) >= min_cluster_size
        right_big = subtree_size(right) >= min_cluster_size
        if left_big and right_big:
            for side in (left, right):
                child_id = next_cluster
                next_cluster += 1
                rows.append(CondensedRow(cluster, child_id, lam, subtree_size(side)))
                births[child_id] = lam
                stack.append((side, child_id))
        elif left_big or right_big:
            big, small = (left, right) if left_big else (right, left)
            for p in subtree_points(small):
                rows.append(CondensedRow(cluster, p, lam, 1))
            stack.append((big, cluster))
        else:
            for p in subtree_points(left) + subtree_points(right):
                rows.append(CondensedRow(cluster, p, lam, 1))
    return rows, births


def _stability(rows: list[CondensedRow], births: dict[int, float]) -> dict[int, float]:
    stability: dict[int, float] = {c: 0.0 for c in births}
    for row in rows:
        birth = births[row.parent]
        if np.isinf(row.lam) and np.isinf(birth):
            continue  # a zero-distance split inside a zero-distance mass adds nothing
        stability[row.parent] += (row.lam - birth) * row.size
    return stability


def _extract_eom(
    rows: list[CondensedRow], births: dict[int, float], n: int
) -> tuple[list[int], dict[int, float]]:
    """Excess-of-mass selection over the cluster tree, root included."""
    stability = _stability(rows, births)
    cluster_children: dict[int, list[int]] = {c: [] for c in births}
    for row in rows:
        if row.child >= n:
            cluster_children[row.parent].append(row.child)

    selected: dict[int, bool] = {}
    propagated: dict[int, float] = {}
    for cluster in sorted(births, reverse=True):  # children have larger ids
        child_sum = sum(propagated[ch] for ch in cluster_children[cluster])
        if cluster_children[cluster] and child_sum > stability[cluster]:
            selected[cluster] = False
            propagated[cluster] = child_sum
        else:
            selected[cluster] = True
            propagated[cluster] = stability[cluster]

    # a selected ancestor absorbs any selected descendants
    chosen: list[int] = []
    for cluster in sorted(births):  # parents first
        if not selected[cluster]:
            continue
        chosen.append(cluster)
        stack = list(cluster_children[cluster])
        while stack:
            ch = stack.pop()
            selected[ch] = False
            stack.extend(cluster_children[ch])
    return chosen, stability


def hdbscan(points: Sequence[np.ndarray] | np.ndarray, params: ClusterParams | None = None) -> ClusterResult:
    """Cluster points by hierarchical density; labels -1 mark noise."""
    params = params or ClusterParams()
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ContractViolation("hdbscan requires a non-empty 2-D point array")
    n = X.shape[0]
    if n < params.min_cluster_size:
        return ClusterResult(
            labels=np.full(n, -1, dtype=np.int64),
            stabilities=np.zeros(0),
            condensed_tree=[],
        )

    cores = core_distances(X, params.effective_min_samples)
    edges = minimum_spanning_tree(X, cores)
    merges = _single_linkage(edges, n)
    rows, births = _condense(merges, n, params.min_cluster_size)
    chosen, stability = _extract_eom(rows, births, n)

    parent_of_point: dict[int, int] = {}
    cluster_parent: dict[int, int] = {}
    for row in rows:
        if row.child < n:
            parent_of_point[row.child] = row.parent
        else:
            cluster_parent[row.child] = row.parent

    label_of_cluster = {c: i for i, c in enumerate(sorted(chosen))}
    chosen_set = set(chosen)
    labels = np.full(n, -1, dtype=np.int64)
    for point, attach in parent_of_point.items():
        cluster: int | None = attach
        while cluster is not None and cluster not in chosen_set:
            cluster = cluster_parent.get(cluster)
        if cluster is not None:
            labels[point] = label_of_cluster[cluster]
    stabilities = np.array([stability[c] for c in sorted(chosen)])
    return ClusterResult(labels=labels, stabilities=stabilities, condensed_tree=rows)


class HdbscanClusterer(BaseEstimator, ClusterMixin):
    """Estimator facade over :func:`hdbscan`; exposes labels_ and stabilities_."""

    def __init__(self, min_cluster_size: int = 5, min_samples: int | None = None):
        self.min_cluster_size = min_cluster_size
        self.min_samples = min_samples

    def fit(self, X, y=None) -> "HdbscanClusterer":
        result = hdbscan(
            X, ClusterParams(min_cluster_size=self.min_cluster_size, min_samples=self.min_samples)
        )
        self.labels_ = result.labels
        self.stabilities_ = result.stabilities
        self.condensed_tree_ = result.condensed_tree
        return self


def script_from_dialogue(dialogue: Dialogue, scene_id: str) -> DialogueScript | None:
    """Normalize a raw dialogue into a script, or None when impossible.

    Consecutive same-role turns are concatenated with a space to restore
    alternation; leading agent turns are dropped.
    """
    merged: list[tuple[Role, str]] = []
    for turn in dialogue.turns:
        if merged and merged[-1][0] is turn.role:
            merged[-1] = (turn.role, merged[-1][1] + " " + turn.text)
        else:
            merged.append((turn.role, turn.text))
    while merged and merged[0][0] is not Role.CUSTOMER:
        merged.pop(0)
    turns = tuple(Turn(role=role, text=text, index=i) for i, (role, text) in enumerate(merged))
    script = DialogueScript(id=dialogue.id, scene=scene_id, turns=turns)
    if validate_script(script):
        return None
    return script


def select_representatives(
    result: ClusterResult,
    dialogues: Sequence[Dialogue],
    embeddings: np.ndarray,
    per_cluster: int = 3,
) -> list[Scene]:
    """Per cluster, the dialogues nearest the centroid, normalized to scripts.

    Ties break on dialogue id. Dialogues that cannot be normalized into a
    valid script are skipped in favor of the next nearest. A cluster whose
    members all fail normalization yields no scene. No non-noise cluster at
    all yields an empty list.
    """
    if len(dialogues) != len(result.labels) or len(embeddings) != len(result.labels):
        raise ContractViolation("labels, dialogues, and embeddings must align")
    scenes: list[Scene] = []
    for cluster in sorted(set(result.labels.tolist()) - {-1}):
        member_idx = [i for i, lab in enumerate(result.labels) if lab == cluster]
        centroid = embeddings[member_idx].mean(axis=0)
        ordered = sorted(
            member_idx,
            key=lambda i: (float(np.linalg.norm(embeddings[i] - centroid)), dialogues[i].id),
        )
        scene_id = f"scene-{cluster:03d}"
        scripts: list[DialogueScript] = []
        for i in ordered:
            if len(scripts) >= per_cluster:
                break
            script = script_from_dialogue(dialogues[i], scene_id)
            if script is not None:
                scripts.append(script)
        if scripts:
            scenes.append(
                Scene(
                    scene_id=scene_id,
                    representative_scripts=tuple(scripts),
                    member_dialogue_ids=tuple(dialogues[i].id for i in member_idx),
                )
            )
    return scenes
