"""Response-aware basis selection: cross-validated cut choice over all levels,
greedy nonuniform frontier descent, and response-augmented tree growth."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import (
    STREAM_FOLDS,
    VARIANCE_FLOOR,
    DataMatrix,
    NumericalError,
    ResponseVector,
    ValidationError,
    check_seed,
    seeded_rng,
)
from .treelet import (
    TreeletTree,
    TreeNode,
    basis_at_level,
    build_treelet_tree,
    partition_at_level,
    transform,
    tree_nodes,
)

LASSO_TOL = 1e-10
LASSO_MAX_SWEEPS = 100000
LEVEL_TIE_TOL = 1e-12
DEFAULT_RIDGE_GRID = (0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0)
LASSO_GRID_SIZE = 20
LASSO_GRID_RATIO = 1e-3


@dataclass(frozen=True)
class FittedModel:
    """Linear model produced by penalty selection plus a final refit."""

    coef: np.ndarray
    intercept: float
    penalty: float

    def __post_init__(self):
        coef = np.asarray(self.coef, dtype=float)
        if not np.all(np.isfinite(coef)) or not math.isfinite(self.intercept):
            raise ValidationError("fitted coefficients must be finite")
        coef.setflags(write=False)
        object.__setattr__(self, "coef", coef)

    def predict(self, features) -> np.ndarray:
        return np.asarray(features, dtype=float) @ self.coef + self.intercept

    @property
    def selected_columns(self) -> tuple[int, ...]:
        return tuple(int(k) for k in np.nonzero(self.coef)[0])


@dataclass(frozen=True)
class Predictor:
    """Penalized linear predictor: ridge (closed form) or lasso (coordinate
    descent). `grid=None` means a built-in default for ridge and a data-driven
    geometric grid for lasso."""

    kind: str
    grid: tuple[float, ...] | None = None
    fitted: FittedModel | None = None

    def __post_init__(self):
        if self.kind not in ("ridge", "lasso"):
            raise ValidationError(f"unknown predictor kind {self.kind!r}")
        if self.grid is not None:
            grid = tuple(float(g) for g in self.grid)
            if not grid:
                raise ValidationError("penalty grid must be nonempty")
            if any(not math.isfinite(g) or g < 0 for g in grid):
                raise ValidationError("penalties must be finite and >= 0")
            object.__setattr__(self, "grid", grid)

    @classmethod
    def ridge(cls, grid=None) -> "Predictor":
        return cls("ridge", tuple(grid) if grid is not None else DEFAULT_RIDGE_GRID)

    @classmethod
    def lasso(cls, grid=None) -> "Predictor":
        return cls("lasso", tuple(grid) if grid is not None else None)

    def resolve_grid(self, features, y) -> tuple[float, ...]:
        if self.grid is not None:
            return self.grid
        if self.kind == "ridge":
            return DEFAULT_RIDGE_GRID
        return lasso_penalty_grid(features, y)

    def fit(self, features, y, cv: "CVConfig | None" = None) -> "Predictor":
        """Choose the penalty by cross-validation on (features, y), refit on
        all rows, and return a copy carrying the fitted coefficients."""
        cv = cv if cv is not None else CVConfig()
        F = np.asarray(features, dtype=float)
        y_values = _response_values(y, F.shape[0])
        grid = self.resolve_grid(F, y_values)
        if len(grid) == 1:
            penalty = grid[0]
        elif self.kind == "ridge":
            penalty = _ridge_penalty_by_cv(F, y_values, grid, cv)
        else:
            _, penalty = _lasso_cv_loss(F, y_values, grid, cv)
        coef, intercept = _fit_linear(self.kind, F, y_values, penalty)
        return replace(self, fitted=FittedModel(coef, intercept, penalty))


@dataclass(frozen=True)
class CVConfig:
    """Deterministic K-fold split: assignment is a pure function of
    (seed, n, folds). `folds=None` resolves to min(10, n)."""

    folds: int | None = None
    seed: int = 0
    loss: str = "mse"

    def __post_init__(self):
        if self.folds is not None and self.folds < 2:
            raise ValidationError("folds must be at least 2")
        check_seed(self.seed)
        if self.loss != "mse":
            raise ValidationError(f"unsupported loss {self.loss!r}")

    def resolve_folds(self, n: int) -> int:
        if self.folds is None:
            return min(10, n)
        if self.folds > n:
            raise ValidationError(f"fewer samples ({n}) than folds ({self.folds})")
        return self.folds


def fold_indices(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Partition 0..n-1 into `folds` groups with sizes differing by at most 1."""
    rng = seeded_rng(STREAM_FOLDS, seed, n, folds)
    perm = rng.permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def _response_values(y, n: int) -> np.ndarray:
    values = y.values if isinstance(y, ResponseVector) else np.asarray(y, dtype=float).ravel()
    if values.shape[0] != n:
        raise ValidationError(f"response has {values.shape[0]} entries but features have {n} rows")
    return values


def _fit_ridge(F: np.ndarray, y: np.ndarray, lam: float) -> tuple[np.ndarray, float]:
    """Regularized normal equations for (1/2n)||y - b0 - F b||^2 + (lam/2)||b||^2."""
    n = F.shape[0]
    f_mean = F.mean(axis=0)
    y_mean = y.mean()
    Fc = F - f_mean
    yc = y - y_mean
    if lam == 0.0:
        coef = np.linalg.lstsq(Fc, yc, rcond=None)[0]
    else:
        gram = Fc.T @ Fc / n + lam * np.eye(F.shape[1])
        coef = np.linalg.solve(gram, Fc.T @ yc / n)
    return coef, float(y_mean - f_mean @ coef)


def lasso_coordinate_descent(
    F, y, lam: float, tol: float = LASSO_TOL, max_sweeps: int = LASSO_MAX_SWEEPS
) -> np.ndarray:
    """Cyclic coordinate descent for (1/2n)||y - F b||^2 + lam ||b||_1.

    No centering or scaling is applied here; columns identically zero keep a
    zero coefficient. Converged when the largest coefficient change in a full
    sweep drops below `tol`.
    """
    F = np.asarray(F, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n, m = F.shape
    col_sq = np.einsum("ij,ij->j", F, F) / n
    coef = np.zeros(m)
    resid = y.copy()
    for _ in range(max_sweeps):
        max_delta = 0.0
        for j in range(m):
            if col_sq[j] == 0.0:
                continue
            old = coef[j]
            if old != 0.0:
                resid += F[:, j] * old
            rho = F[:, j] @ resid / n
            if abs(rho) <= lam:
                new = 0.0
            else:
                new = (rho - math.copysign(lam, rho)) / col_sq[j]
                resid -= F[:, j] * new
            coef[j] = new
            delta = abs(new - old)
            if delta > max_delta:
                max_delta = delta
        if max_delta < tol:
            return coef
    raise NumericalError(f"lasso coordinate descent did not converge within {max_sweeps} sweeps")


def _standardize(F: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    f_mean = F.mean(axis=0)
    Fc = F - f_mean
    scale = np.sqrt(np.einsum("ij,ij->j", Fc, Fc) / F.shape[0])
    safe = np.where(scale > 0.0, scale, 1.0)
    return Fc / safe, f_mean, safe


def _fit_lasso(F: np.ndarray, y: np.ndarray, lam: float) -> tuple[np.ndarray, float]:
    """Lasso on unit-variance features; intercept via centering."""
    y_mean = y.mean()
    Fs, f_mean, scale = _standardize(F)
    scaled_coef = lasso_coordinate_descent(Fs, y - y_mean, lam)
    coef = scaled_coef / scale
    return coef, float(y_mean - f_mean @ coef)


def lasso_penalty_grid(F, y) -> tuple[float, ...]:
    """Geometric grid from the smallest all-zero penalty down by LASSO_GRID_RATIO."""
    F = np.asarray(F, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    Fs, _, _ = _standardize(F)
    lam_max = float(np.max(np.abs(Fs.T @ (y - y.mean())))) / F.shape[0]
    if lam_max <= 0.0:
        return (0.0,)
    return tuple(np.geomspace(lam_max, lam_max * LASSO_GRID_RATIO, LASSO_GRID_SIZE))


def _fit_linear(kind: str, F: np.ndarray, y: np.ndarray, lam: float) -> tuple[np.ndarray, float]:
    if kind == "ridge":
        return _fit_ridge(F, y, lam)
    return _fit_lasso(F, y, lam)


def _mse(actual: np.ndarray, predicted: np.ndarray) -> float:
    gap = actual - predicted
    return float(gap @ gap / gap.size)


def _ridge_penalty_by_cv(F: np.ndarray, y: np.ndarray, grid, cv: CVConfig) -> float:
    """Inner cross-validation over the penalty grid; first minimizer wins."""
    n = F.shape[0]
    folds = min(cv.resolve_folds(n) if cv.folds is None else cv.folds, n)
    if folds < 2 or n < 2:
        return grid[0]
    split = fold_indices(n, folds, cv.seed)
    losses = np.zeros(len(grid))
    everything = np.arange(n)
    for fold in split:
        train = np.setdiff1d(everything, fold)
        for g, lam in enumerate(grid):
            coef, intercept = _fit_ridge(F[train], y[train], lam)
            losses[g] += _mse(y[fold], F[fold] @ coef + intercept)
    return grid[int(np.argmin(losses))]


def _lasso_cv_loss(F: np.ndarray, y: np.ndarray, grid, cv: CVConfig) -> tuple[float, float]:
    """Fold-averaged MSE per penalty over one shared split; returns the
    minimum average and its penalty."""
    n = F.shape[0]
    folds = cv.resolve_folds(n)
    split = fold_indices(n, folds, cv.seed)
    everything = np.arange(n)
    losses = np.zeros(len(grid))
    for fold in split:
        train = np.setdiff1d(everything, fold)
        for g, lam in enumerate(grid):
            coef, intercept = _fit_lasso(F[train], y[train], lam)
            losses[g] += _mse(y[fold], F[fold] @ coef + intercept)
    losses /= len(split)
    best = int(np.argmin(losses))
    return float(losses[best]), float(grid[best])


def cv_loss(X, y, features, predictor: Predictor, cv: CVConfig) -> float:
    """Cross-validated MSE of the predictor on the given feature matrix.

    Ridge chooses its penalty per training fold by an inner CV; lasso chooses
    one penalty by averaging the same outer folds across the grid.
    """
    F = np.asarray(features, dtype=float)
    if F.ndim != 2:
        raise ValidationError("features must be a two-dimensional matrix")
    y_values = _response_values(y, F.shape[0])
    if isinstance(X, DataMatrix) and X.n != F.shape[0]:
        raise ValidationError("features must have one row per sample")
    n = F.shape[0]
    folds = cv.resolve_folds(n)
    if predictor.kind == "lasso":
        grid = predictor.resolve_grid(F, y_values)
        loss, _ = _lasso_cv_loss(F, y_values, grid, cv)
        return loss
    grid = predictor.resolve_grid(F, y_values)
    split = fold_indices(n, folds, cv.seed)
    everything = np.arange(n)
    fold_losses = []
    for fold in split:
        train = np.setdiff1d(everything, fold)
        if len(grid) == 1:
            lam = grid[0]
        else:
            lam = _ridge_penalty_by_cv(F[train], y_values[train], grid, cv)
        coef, intercept = _fit_ridge(F[train], y_values[train], lam)
        fold_losses.append(_mse(y_values[fold], F[fold] @ coef + intercept))
    return float(np.mean(fold_losses))


def cv_basis_selection(
    X: DataMatrix, y: ResponseVector, tree: TreeletTree, predictor: Predictor, cv: CVConfig
) -> tuple[int, tuple[float, ...]]:
    """Level minimizing cross-validated loss of the full basis coordinates;
    the fold split is identical across levels, ties go to the larger level."""
    y.check_paired(X)
    profile = []
    for level in range(tree.max_level + 1):
        features = transform(X, basis_at_level(tree, level))
        profile.append(cv_loss(X, y, features, predictor, cv))
    best = min(profile)
    chosen = max(level for level, loss in enumerate(profile) if loss <= best + LEVEL_TIE_TOL)
    return chosen, tuple(profile)


@dataclass(frozen=True)
class Frontier:
    """An antichain of tree nodes whose scale supports partition the variables."""

    nodes: tuple[TreeNode, ...]
    p: int

    def __post_init__(self):
        ordered = tuple(sorted(self.nodes, key=lambda node: node.min_member))
        object.__setattr__(self, "nodes", ordered)
        covered: set[int] = set()
        total = 0
        for node in ordered:
            total += len(node.support)
            covered |= node.support
        if total != self.p or covered != set(range(self.p)):
            raise ValidationError("frontier supports must partition the variable set")

    def supports(self) -> tuple[frozenset[int], ...]:
        return tuple(node.support for node in self.nodes)


@dataclass(frozen=True)
class ExpansionCandidate:
    """One candidate evaluation in the greedy frontier descent."""

    step: int
    node_support: tuple[int, ...]
    node_created_level: int
    loss_before: float
    loss_after: float
    accepted: bool


@dataclass(frozen=True)
class NonuniformCutoffResult:
    frontier: Frontier
    trace: tuple[ExpansionCandidate, ...]
    root_loss: float
    final_loss: float


def frontier_features(X, frontier_nodes) -> np.ndarray:
    """Scale vectors of the frontier nodes as predictor columns."""
    values = X.values if isinstance(X, DataMatrix) else np.asarray(X, dtype=float)
    V = np.column_stack([node.vector for node in frontier_nodes])
    return values @ V


def nonuniform_cutoff(
    X: DataMatrix,
    y: ResponseVector,
    tree: TreeletTree,
    predictor: Predictor,
    cv: CVConfig,
    tau: float = 0.0,
) -> NonuniformCutoffResult:
    """Greedy descent from the root frontier: at each step replace the node
    whose expansion into its two children lowers the CV loss the most, as long
    as the decrease exceeds tau."""
    if math.isnan(tau) or tau < 0.0:
        raise ValidationError("tau must be a nonnegative threshold")
    y.check_paired(X)
    nodes, roots = tree_nodes(tree)
    frontier = sorted((nodes[r] for r in roots), key=lambda node: node.min_member)

    def loss_of(front) -> float:
        return cv_loss(X, y, frontier_features(X, front), predictor, cv)

    current = loss_of(frontier)
    root_loss = current
    trace: list[ExpansionCandidate] = []
    step = 0
    while True:
        expandable = [node for node in frontier if not node.is_leaf]
        if not expandable:
            break
        evaluations = []
        for node in expandable:
            trial = [nodes[c] for c in node.children]
            trial += [other for other in frontier if other.index != node.index]
            trial.sort(key=lambda entry: entry.min_member)
            evaluations.append((node, trial, loss_of(trial)))
        best_node, best_trial, best_loss = min(
            evaluations, key=lambda entry: (entry[2], entry[0].min_member)
        )
        accepted = (current - best_loss) > tau
        for node, _, loss in evaluations:
            trace.append(
                ExpansionCandidate(
                    step,
                    tuple(sorted(node.support)),
                    node.created_level,
                    current,
                    loss,
                    accepted and node.index == best_node.index,
                )
            )
        if not accepted:
            break
        frontier = best_trial
        current = best_loss
        step += 1
    return NonuniformCutoffResult(Frontier(tuple(frontier), tree.p), tuple(trace), root_loss, current)


def supervised_growth(
    X: DataMatrix, y: ResponseVector
) -> tuple[TreeletTree, tuple[frozenset[int], ...]]:
    """Grow the tree on (y, x): standardize the response, prepend it as
    variable 0, and report the original variables sharing y's scale support at
    each level."""
    y.check_paired(X)
    sd = float(y.values.std(ddof=1))
    if sd <= math.sqrt(VARIANCE_FLOOR):
        raise ValidationError("response has zero variance")
    z = (y.values - y.values.mean()) / sd
    augmented = DataMatrix(np.column_stack([z, X.values]), ("y",) + X.variable_names)
    tree = build_treelet_tree(augmented)
    clusters = []
    for level in range(tree.max_level + 1):
        group = next(g for g in partition_at_level(tree, level) if 0 in g)
        clusters.append(frozenset(member - 1 for member in group if member != 0))
    return tree, tuple(clusters)
