"""Treelet construction: pairwise decorrelating rotations over maximally
correlated variable pairs, the multi-scale orthonormal basis at every cut
level, forward/inverse transforms, and the top-K energy cut."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import DataMatrix, ValidationError, covariance_matrix, matrix_values

# Pairs within this distance of the maximal similarity count as tied.
SIMILARITY_TIE_TOL = 1e-12
# Rotated variances within this distance count as tied for sum/diff assignment.
VARIANCE_TIE_TOL = 1e-12
# Loadings at or below this magnitude do not count toward a column's support.
SUPPORT_LOADING_TOL = 1e-12


@dataclass(frozen=True)
class MergeRecord:
    """One pairwise rotation: which coordinates merged, at what angle, and
    which coordinate carries the sum forward."""

    level: int
    pair: tuple[int, int]
    theta: float
    similarity_at_merge: float
    sum_index: int
    diff_index: int

    def __post_init__(self):
        i, j = self.pair
        if {self.sum_index, self.diff_index} != {i, j}:
            raise ValidationError("sum/diff indices must be the merged pair")
        if abs(self.theta) > math.pi / 4 + 1e-12:
            raise ValidationError(f"rotation angle {self.theta} exceeds pi/4")
        if not 0.0 <= self.similarity_at_merge <= 1.0:
            raise ValidationError("merge similarity must lie in [0, 1]")


@dataclass(frozen=True)
class TreeletTree:
    """Ordered merge records defining the variable hierarchy and the bases at
    every level."""

    p: int
    merges: tuple[MergeRecord, ...]
    similarity_trace: tuple[float, ...]
    variable_names: tuple[str, ...]

    def __post_init__(self):
        if self.p < 2:
            raise ValidationError("a treelet tree needs at least 2 variables")
        if not 1 <= len(self.merges) <= self.p - 1:
            raise ValidationError("merge count must lie in 1..p-1")
        if len(self.similarity_trace) != len(self.merges):
            raise ValidationError("similarity trace length must equal merge count")
        if len(self.variable_names) != self.p:
            raise ValidationError("variable name count must equal p")
        retired: set[int] = set()
        for level, merge in enumerate(self.merges, start=1):
            if merge.level != level:
                raise ValidationError("merge levels must run 1..max_level in order")
            i, j = merge.pair
            if not (0 <= i < self.p and 0 <= j < self.p and i != j):
                raise ValidationError(f"invalid merge pair {merge.pair}")
            if i in retired or j in retired:
                raise ValidationError("a retired coordinate cannot merge again")
            retired.add(merge.diff_index)

    @property
    def max_level(self) -> int:
        return len(self.merges)

    def retired_at(self, level: int) -> set[int]:
        return {m.diff_index for m in self.merges[:level]}


@dataclass(frozen=True)
class BasisAtLevel:
    """Orthonormal p x p basis after `level` rotations, with per-column
    scale/detail labels and variable supports."""

    level: int
    B: np.ndarray
    kind: tuple[str, ...]
    support: tuple[frozenset[int], ...]

    @property
    def scale_columns(self) -> tuple[int, ...]:
        return tuple(k for k, kd in enumerate(self.kind) if kd == "scale")

    @property
    def detail_columns(self) -> tuple[int, ...]:
        return tuple(k for k, kd in enumerate(self.kind) if kd == "detail")


@dataclass(frozen=True)
class TreeNode:
    """A node of the merge hierarchy together with its scale vector (the
    basis column created when the node formed)."""

    index: int
    support: frozenset[int]
    created_level: int
    coord: int
    children: tuple[int, int] | None
    vector: np.ndarray

    @property
    def is_leaf(self) -> bool:
        return self.children is None

    @property
    def min_member(self) -> int:
        return min(self.support)


def rotation_angle(a: float, b: float, d: float) -> float:
    """Angle with |theta| <= pi/4 zeroing the off-diagonal of [[a, d], [d, b]].

    Solves tan(2 theta) = 2 d / (a - b); the equal-diagonal limit takes
    theta = sign(d) * pi/4, and d = 0 leaves the pair untouched.
    """
    if d == 0.0:
        return 0.0
    if a == b:
        return math.copysign(math.pi / 4.0, d)
    return 0.5 * math.atan(2.0 * d / (a - b))


def _apply_rotation(C: np.ndarray, i: int, j: int, theta: float) -> None:
    """In-place symmetric Givens update of rows/columns i and j (O(p))."""
    c = math.cos(theta)
    s = math.sin(theta)
    a = C[i, i]
    b = C[j, j]
    d = C[i, j]
    row_i = c * C[i, :] + s * C[j, :]
    row_j = -s * C[i, :] + c * C[j, :]
    C[i, :] = row_i
    C[j, :] = row_j
    C[:, i] = row_i
    C[:, j] = row_j
    C[i, i] = c * c * a + 2.0 * c * s * d + s * s * b
    C[j, j] = s * s * a - 2.0 * c * s * d + c * c * b
    off = (c * c - s * s) * d - c * s * (a - b)
    C[i, j] = off
    C[j, i] = off


def jacobi_rotation(C, i: int, j: int) -> tuple[float, np.ndarray]:
    """Rotate coordinates i and j of symmetric C so their covariance vanishes.

    Returns the angle and the updated matrix; the input is not modified.
    """
    C = np.array(C, dtype=float)
    p = C.shape[0]
    if C.ndim != 2 or C.shape[1] != p:
        raise ValidationError("covariance context must be a square matrix")
    if i == j or not (0 <= i < p and 0 <= j < p):
        raise ValidationError(f"invalid coordinate pair ({i}, {j})")
    theta = rotation_angle(C[i, i], C[j, j], C[i, j])
    _apply_rotation(C, i, j, theta)
    return theta, C


def _best_active_pair(C: np.ndarray, active: np.ndarray) -> tuple[int, int, float]:
    """Most-correlated active pair in the current coordinates; ties within
    SIMILARITY_TIE_TOL go to the lexicographically smallest (i, j)."""
    idx = np.nonzero(active)[0]
    sub = C[np.ix_(idx, idx)]
    scale = np.sqrt(np.diag(sub))
    sim = np.abs(sub) / np.outer(scale, scale)
    np.clip(sim, 0.0, 1.0, out=sim)
    rows, cols = np.triu_indices(idx.size, k=1)
    vals = sim[rows, cols]
    best = vals.max()
    # triu_indices is row-major, so the first qualifying entry is the
    # lexicographically smallest pair
    k = int(np.argmax(vals >= best - SIMILARITY_TIE_TOL))
    return int(idx[rows[k]]), int(idx[cols[k]]), float(vals[k])


def build_treelet_tree(X: DataMatrix, max_level: int | None = None) -> TreeletTree:
    """Build the merge hierarchy by repeatedly rotating the most-correlated
    active pair; the higher-variance rotated coordinate continues as the sum."""
    p = X.p
    if max_level is None:
        max_level = p - 1
    if not 1 <= max_level <= p - 1:
        raise ValidationError(f"max_level must lie in 1..{p - 1}, got {max_level}")
    C = covariance_matrix(X).copy()
    active = np.ones(p, dtype=bool)
    merges = []
    trace = []
    for level in range(1, max_level + 1):
        i, j, sim = _best_active_pair(C, active)
        theta = rotation_angle(C[i, i], C[j, j], C[i, j])
        _apply_rotation(C, i, j, theta)
        if C[j, j] - C[i, i] > VARIANCE_TIE_TOL:
            sum_index, diff_index = j, i
        else:
            sum_index, diff_index = i, j
        active[diff_index] = False
        merges.append(MergeRecord(level, (i, j), theta, sim, sum_index, diff_index))
        trace.append(sim)
    return TreeletTree(p, tuple(merges), tuple(trace), X.variable_names)


def basis_at_level(tree: TreeletTree, level: int) -> BasisAtLevel:
    """Product of the first `level` rotations applied to the identity."""
    if not 0 <= level <= tree.max_level:
        raise ValidationError(f"level must lie in 0..{tree.max_level}, got {level}")
    p = tree.p
    B = np.eye(p)
    for merge in tree.merges[:level]:
        i, j = merge.pair
        c = math.cos(merge.theta)
        s = math.sin(merge.theta)
        col_i = c * B[:, i] + s * B[:, j]
        col_j = -s * B[:, i] + c * B[:, j]
        B[:, i] = col_i
        B[:, j] = col_j
    retired = tree.retired_at(level)
    kind = tuple("detail" if k in retired else "scale" for k in range(p))
    support = tuple(
        frozenset(np.nonzero(np.abs(B[:, k]) > SUPPORT_LOADING_TOL)[0].tolist())
        for k in range(p)
    )
    B.setflags(write=False)
    return BasisAtLevel(level, B, kind, support)


def transform(X, basis: BasisAtLevel) -> np.ndarray:
    """Coefficients of the rows of X in the basis (X @ B)."""
    values = matrix_values(X)
    if values.shape[1] != basis.B.shape[0]:
        raise ValidationError(
            f"data has {values.shape[1]} columns but basis expects {basis.B.shape[0]}"
        )
    return values @ basis.B


def inverse_transform(coeffs, basis: BasisAtLevel) -> np.ndarray:
    """Reconstruction from coefficients (coeffs @ B^T)."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.ndim != 2 or coeffs.shape[1] != basis.B.shape[1]:
        raise ValidationError("coefficient matrix does not match the basis dimension")
    return coeffs @ basis.B.T


def energy_profile(tree: TreeletTree, X, K: int) -> tuple[float, ...]:
    """Per-level score: sum of the K largest per-column mean squared coefficients."""
    values = matrix_values(X)
    p = tree.p
    if not 1 <= K <= p:
        raise ValidationError(f"K must lie in 1..{p}, got {K}")
    scores = []
    for level in range(tree.max_level + 1):
        coeffs = transform(values, basis_at_level(tree, level))
        energies = np.mean(coeffs * coeffs, axis=0)
        top = np.sort(energies)[-K:]
        scores.append(float(top.sum()))
    return tuple(scores)


def unsupervised_cut(tree: TreeletTree, X, K: int) -> int:
    """Level maximizing the top-K energy score; ties go to the larger level."""
    scores = energy_profile(tree, X, K)
    best = max(scores)
    tol = 1e-12 * max(1.0, abs(best))
    return max(level for level, score in enumerate(scores) if score >= best - tol)


def partition_at_level(tree: TreeletTree, level: int) -> tuple[frozenset[int], ...]:
    """Scale-support partition of {0..p-1} after `level` merges, ordered by
    smallest member."""
    if not 0 <= level <= tree.max_level:
        raise ValidationError(f"level must lie in 0..{tree.max_level}, got {level}")
    groups: dict[int, set[int]] = {k: {k} for k in range(tree.p)}
    for merge in tree.merges[:level]:
        i, j = merge.pair
        merged = groups.pop(i) | groups.pop(j)
        groups[merge.sum_index] = merged
    return tuple(sorted((frozenset(g) for g in groups.values()), key=min))


def tree_nodes(tree: TreeletTree) -> tuple[tuple[TreeNode, ...], tuple[int, ...]]:
    """All nodes of the merge hierarchy plus the ids of the final active set.

    Leaves come first (ids 0..p-1); each merge appends one internal node whose
    vector is the scale basis column captured when the node formed.
    """
    p = tree.p
    B = np.eye(p)
    nodes: list[TreeNode] = [
        TreeNode(k, frozenset({k}), 0, k, None, B[:, k].copy()) for k in range(p)
    ]
    at_coord: list[int | None] = list(range(p))
    for merge in tree.merges:
        i, j = merge.pair
        c = math.cos(merge.theta)
        s = math.sin(merge.theta)
        col_i = c * B[:, i] + s * B[:, j]
        col_j = -s * B[:, i] + c * B[:, j]
        B[:, i] = col_i
        B[:, j] = col_j
        child_a = at_coord[i]
        child_b = at_coord[j]
        assert child_a is not None and child_b is not None
        node = TreeNode(
            len(nodes),
            nodes[child_a].support | nodes[child_b].support,
            merge.level,
            merge.sum_index,
            (child_a, child_b),
            B[:, merge.sum_index].copy(),
        )
        nodes.append(node)
        at_coord[merge.sum_index] = node.index
        at_coord[merge.diff_index] = None
    roots = sorted(
        (node_id for node_id in at_coord if node_id is not None),
        key=lambda node_id: nodes[node_id].min_member,
    )
    return tuple(nodes), tuple(roots)


def tree_to_json(tree: TreeletTree, indent: int | None = 2) -> str:
    """Serialize merges to JSON; floats use shortest round-trip formatting."""
    payload = {
        "p": tree.p,
        "merges": [
            {
                "level": m.level,
                "i": m.pair[0],
                "j": m.pair[1],
                "theta": m.theta,
                "similarity": m.similarity_at_merge,
                "sum": m.sum_index,
                "diff": m.diff_index,
            }
            for m in tree.merges
        ],
        "names": list(tree.variable_names),
    }
    return json.dumps(payload, indent=indent, sort_keys=True)


def tree_from_json(text: str) -> TreeletTree:
    """Inverse of tree_to_json, re-validating all tree invariants."""
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid tree JSON: {exc}") from None
    try:
        p = int(payload["p"])
        names = tuple(str(name) for name in payload["names"])
        merges = tuple(
            MergeRecord(
                level=int(entry["level"]),
                pair=(int(entry["i"]), int(entry["j"])),
                theta=float(entry["theta"]),
                similarity_at_merge=float(entry["similarity"]),
                sum_index=int(entry["sum"]),
                diff_index=int(entry["diff"]),
            )
            for entry in payload["merges"]
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"invalid tree JSON: missing or malformed field ({exc})") from None
    trace = tuple(m.similarity_at_merge for m in merges)
    return TreeletTree(p, merges, trace, names)
