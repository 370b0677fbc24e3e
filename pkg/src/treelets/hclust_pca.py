"""Two-step baseline: complete-linkage clustering of variables plus the first
principal component of each cluster, with metrics comparing the result to the
treelet hierarchy (partition agreement, cophenetic correlation, principal
angles)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    DataMatrix,
    NumericalError,
    SimilarityMatrix,
    ValidationError,
    covariance_matrix,
)
from .treelet import TreeletTree, basis_at_level, partition_at_level

POWER_ITERATION_TOL = 1e-12
POWER_ITERATION_MAX_ITER = 10000


@dataclass(frozen=True)
class ClusterMerge:
    level: int
    members_a: tuple[int, ...]
    members_b: tuple[int, ...]
    linkage_distance: float


@dataclass(frozen=True)
class ClusterTree:
    """Complete-linkage dendrogram over variables."""

    p: int
    merges: tuple[ClusterMerge, ...]

    def __post_init__(self):
        if len(self.merges) != self.p - 1:
            raise ValidationError("a cluster tree over p variables has p-1 merges")
        previous = -math.inf
        for merge in self.merges:
            # complete linkage is monotone; refuse trees that violate it
            if merge.linkage_distance < previous - 1e-12:
                raise ValidationError("linkage distances must be nondecreasing")
            previous = merge.linkage_distance

    def membership(self, level: int) -> tuple[frozenset[int], ...]:
        """Partition of {0..p-1} after `level` merges, ordered by smallest member."""
        if not 0 <= level <= self.p - 1:
            raise ValidationError(f"level must lie in 0..{self.p - 1}, got {level}")
        groups = {k: frozenset({k}) for k in range(self.p)}
        for merge in self.merges[:level]:
            a = groups.pop(min(merge.members_a))
            b = groups.pop(min(merge.members_b))
            joined = a | b
            groups[min(joined)] = joined
        return tuple(sorted(groups.values(), key=min))


@dataclass(frozen=True)
class LocalPCABasis:
    """One unit-norm first-PC loading vector per cluster, each supported only
    on its cluster's variables (hence mutually orthogonal)."""

    level: int
    clusters: tuple[frozenset[int], ...]
    vectors: np.ndarray  # p x n_clusters, column per cluster


@dataclass(frozen=True)
class ComparisonReport:
    """Per-level agreement between the treelet hierarchy and the clustering
    baseline."""

    p: int
    levels: tuple[int, ...]
    adjusted_rand: tuple[float, ...]
    max_principal_angle: tuple[float, ...]
    cophenetic_correlation: float

    def __post_init__(self):
        for value in self.adjusted_rand:
            if not -1.0 - 1e-9 <= value <= 1.0 + 1e-9:
                raise ValidationError("adjusted Rand values must lie in [-1, 1]")
        for angle in self.max_principal_angle:
            if not -1e-9 <= angle <= math.pi / 2 + 1e-9:
                raise ValidationError("principal angles must lie in [0, pi/2]")

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "levels": list(self.levels),
            "adjusted_rand": list(self.adjusted_rand),
            "max_principal_angle": list(self.max_principal_angle),
            "cophenetic_correlation": self.cophenetic_correlation,
        }


def complete_linkage_tree(S: SimilarityMatrix) -> ClusterTree:
    """Agglomerate on distance 1 - s with complete linkage; distance ties go
    to the pair of clusters with lexicographically smallest minimum members."""
    p = S.p
    members: list[tuple[int, ...]] = [(k,) for k in range(p)]
    D = (1.0 - S.s).copy()
    alive = list(range(p))
    merges = []
    for level in range(1, p):
        sub = D[np.ix_(alive, alive)]
        rows, cols = np.triu_indices(len(alive), k=1)
        vals = sub[rows, cols]
        best = float(vals.min())
        candidates = np.nonzero(vals == best)[0]

        def pair_key(t: int) -> tuple[int, int]:
            ra = members[alive[rows[t]]][0]
            rb = members[alive[cols[t]]][0]
            return (min(ra, rb), max(ra, rb))

        chosen = min(candidates, key=pair_key)
        a = alive[rows[chosen]]
        b = alive[cols[chosen]]
        if members[a][0] > members[b][0]:
            a, b = b, a
        merges.append(ClusterMerge(level, members[a], members[b], best))
        # Lance-Williams complete-linkage update, reusing slot a
        for c in alive:
            if c not in (a, b):
                d = max(D[a, c], D[b, c])
                D[a, c] = D[c, a] = d
        members[a] = tuple(sorted(members[a] + members[b]))
        alive.remove(b)
    return ClusterTree(p, tuple(merges))


def _power_iterate(C: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, float, int, bool]:
    for iteration in range(1, POWER_ITERATION_MAX_ITER + 1):
        w = C @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return v, 0.0, iteration, True
        w /= norm
        if np.max(np.abs(w - v)) < POWER_ITERATION_TOL:
            return w, float(w @ C @ w), iteration, True
        v = w
    return v, float(v @ C @ v), POWER_ITERATION_MAX_ITER, False


def first_pc(C_sub) -> np.ndarray:
    """Leading eigenvector of a symmetric PSD matrix by power iteration.

    Starts from the normalized all-ones vector; if that start is orthogonal to
    the leading eigenvector (detected by the converged Rayleigh quotient
    falling below the largest diagonal entry) it retries from deterministic
    perturbations. The sign is fixed so the largest-magnitude loading is
    positive.
    """
    C = np.asarray(C_sub, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValidationError("covariance submatrix must be square")
    k = C.shape[0]
    if k == 1:
        return np.array([1.0])
    floor = np.max(np.diag(C)) - 1e-10 * max(1.0, float(np.max(np.abs(C))))
    start = np.ones(k) / math.sqrt(k)
    iterations = 0
    for attempt in range(4):
        if attempt == 0:
            v0 = start
        else:
            bump = np.random.default_rng(attempt).standard_normal(k)
            v0 = start + 0.5 * bump
            v0 /= np.linalg.norm(v0)
        v, lam, iters, converged = _power_iterate(C, v0)
        iterations += iters
        if converged and lam >= floor:
            top = int(np.argmax(np.abs(v)))
            return -v if v[top] < 0 else v
    raise NumericalError(
        f"power iteration did not isolate the leading eigenvector after {iterations} iterations"
    )


def local_pca_basis(X: DataMatrix, tree: ClusterTree, level: int) -> LocalPCABasis:
    """First PC of each cluster's covariance submatrix, embedded on its support."""
    if X.p != tree.p:
        raise ValidationError("data and cluster tree disagree on variable count")
    clusters = tree.membership(level)
    C = covariance_matrix(X)
    vectors = np.zeros((X.p, len(clusters)))
    for col, cluster in enumerate(clusters):
        idx = sorted(cluster)
        loading = first_pc(C[np.ix_(idx, idx)])
        vectors[idx, col] = loading
    vectors.setflags(write=False)
    return LocalPCABasis(level, clusters, vectors)


def adjusted_rand_index(part_a, part_b) -> float:
    """Adjusted Rand index between two partitions of the same finite set."""
    sets_a = [frozenset(g) for g in part_a]
    sets_b = [frozenset(g) for g in part_b]
    universe = frozenset().union(*sets_a)
    if universe != frozenset().union(*sets_b):
        raise ValidationError("partitions must cover the same elements")
    n = len(universe)
    if sum(len(g) for g in sets_a) != n or sum(len(g) for g in sets_b) != n:
        raise ValidationError("inputs must be partitions (disjoint groups)")
    sum_cells = 0
    for ga in sets_a:
        for gb in sets_b:
            sum_cells += math.comb(len(ga & gb), 2)
    sum_a = sum(math.comb(len(g), 2) for g in sets_a)
    sum_b = sum(math.comb(len(g), 2) for g in sets_b)
    total = math.comb(n, 2)
    expected = sum_a * sum_b / total
    denom = (sum_a + sum_b) / 2 - expected
    if denom == 0.0:
        # both partitions are all singletons or both a single cluster
        return 1.0
    return (sum_cells - expected) / denom


def max_principal_angle(U: np.ndarray, V: np.ndarray) -> float:
    """Largest principal angle between the column spans of U and V."""
    sv = np.linalg.svd(U.T @ V, compute_uv=False)
    smallest = float(np.clip(sv.min(), -1.0, 1.0))
    return float(np.arccos(smallest))


def _cophenetic_heights_treelet(tree: TreeletTree) -> np.ndarray:
    """Upper-triangle vector of first-shared-group merge levels."""
    p = tree.p
    heights = np.zeros((p, p))
    groups: dict[int, set[int]] = {k: {k} for k in range(p)}
    for merge in tree.merges:
        i, j = merge.pair
        ga = groups.pop(i)
        gb = groups.pop(j)
        for a in ga:
            for b in gb:
                heights[a, b] = heights[b, a] = merge.level
        groups[merge.sum_index] = ga | gb
    return heights[np.triu_indices(p, k=1)]


def _cophenetic_heights_cluster(tree: ClusterTree) -> np.ndarray:
    """Upper-triangle vector of linkage-distance ranks (ties share a rank)."""
    distances = [m.linkage_distance for m in tree.merges]
    ranks = [1 + sum(1 for other in distances if other < d) for d in distances]
    p = tree.p
    heights = np.zeros((p, p))
    for merge, rank in zip(tree.merges, ranks):
        for a in merge.members_a:
            for b in merge.members_b:
                heights[a, b] = heights[b, a] = rank
    return heights[np.triu_indices(p, k=1)]


def _height_correlation(h_a: np.ndarray, h_b: np.ndarray) -> float:
    sd_a = h_a.std()
    sd_b = h_b.std()
    if sd_a == 0.0 or sd_b == 0.0:
        return 1.0 if sd_a == sd_b == 0.0 else 0.0
    return float(np.corrcoef(h_a, h_b)[0, 1])


def compare(X: DataMatrix, ttree: TreeletTree, ctree: ClusterTree) -> ComparisonReport:
    """Per-level adjusted Rand, per-level largest principal angle between the
    scale and local-PCA subspaces, and cophenetic correlation of the trees."""
    if ttree.p != ctree.p or X.p != ttree.p:
        raise ValidationError("comparison inputs must share the same variable count")
    if ttree.max_level != ttree.p - 1:
        raise ValidationError("comparison requires a fully built treelet tree")
    p = ttree.p
    levels = tuple(range(p))
    aris = []
    angles = []
    for level in levels:
        part_t = partition_at_level(ttree, level)
        part_c = ctree.membership(level)
        aris.append(adjusted_rand_index(part_t, part_c))
        basis = basis_at_level(ttree, level)
        U = basis.B[:, list(basis.scale_columns)]
        V = local_pca_basis(X, ctree, level).vectors
        angles.append(max_principal_angle(U, V))
    coph = _height_correlation(
        _cophenetic_heights_treelet(ttree), _cophenetic_heights_cluster(ctree)
    )
    return ComparisonReport(p, levels, tuple(aris), tuple(angles), coph)


def self_comparison(X: DataMatrix, ttree: TreeletTree) -> ComparisonReport:
    """Compare the treelet hierarchy with itself (all-agreement reference)."""
    p = ttree.p
    levels = tuple(range(p))
    aris = []
    angles = []
    for level in levels:
        part = partition_at_level(ttree, level)
        aris.append(adjusted_rand_index(part, part))
        basis = basis_at_level(ttree, level)
        U = basis.B[:, list(basis.scale_columns)]
        angles.append(max_principal_angle(U, U))
    heights = _cophenetic_heights_treelet(ttree)
    return ComparisonReport(p, levels, tuple(aris), tuple(angles), _height_correlation(heights, heights))
