"""Penalised cubic regression splines with GCV smoothing selection.

Each regressor is rescaled to ``[0, 1]`` and given a cubic B-spline basis
with interior knots at equally spaced sample quantiles.  Several regressors
are combined through a row-wise tensor product.  Wiggliness is penalised by
second divided differences of the coefficients taken at the Greville
abscissae, so every function linear in each margin (constants, lines,
bilinear terms) is unpenalised regardless of knot spacing.  The smoothing
parameter minimises generalised cross-validation over a log grid, evaluated
through a Demmler-Reinsch style generalised eigendecomposition so the whole
grid costs a single factorisation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, sparse
from scipy.interpolate import BSpline

from .errors import DegenerateRegressorError, ParameterDomainError, UnsupportedDimensionError

DEGREE = 3
KNOTS_PER_MARGIN = {1: 10, 2: 5, 3: 4}
LAMBDA_GRID = np.logspace(-6, 6, 50)
MIN_ROWS = 100
_RIDGE = 1e-10


@dataclass
class SplineFit:
    """Result of :func:`fit_smooth`.

    ``coef`` solves ``(B'B + lam * S) coef = B'y`` for the basis ``B`` and
    scaled penalty ``S``; ``fitted`` is ``B @ coef``.
    """

    knots: list
    lower: np.ndarray
    upper: np.ndarray
    coef: np.ndarray
    lam: float
    edf: float
    gcv: float
    fitted: np.ndarray
    residuals: np.ndarray
    penalty: np.ndarray
    gcv_grid: np.ndarray

    @property
    def residual_variance(self) -> float:
        """Mean squared residual."""
        return float(np.mean(self.residuals**2))

    @property
    def basis_size(self) -> int:
        return self.coef.size

    def basis(self, x) -> sparse.csr_array:
        x = _as_2d(x)
        scaled = (np.clip(x, self.lower, self.upper) - self.lower) / (self.upper - self.lower)
        return tensor_basis([bspline_basis(scaled[:, j], t) for j, t in enumerate(self.knots)])

    def predict(self, x) -> np.ndarray:
        return self.basis(x) @ self.coef


def _as_2d(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ParameterDomainError("x", x.shape, "expected a vector or an (R, k) matrix")
    return x


def quantile_knots(u, n_interior) -> np.ndarray:
    """Full clamped knot vector on ``[0, 1]`` with interior knots at quantiles of ``u``."""
    probs = np.arange(1, n_interior + 1) / (n_interior + 1)
    interior = np.unique(np.quantile(u, probs))
    interior = interior[(interior > 0) & (interior < 1)]
    return np.r_[np.zeros(DEGREE + 1), interior, np.ones(DEGREE + 1)]


def bspline_basis(u, knots) -> sparse.csr_array:
    """Cubic B-spline design matrix; exactly ``DEGREE + 1`` non-zeros per row."""
    return BSpline.design_matrix(np.asarray(u, dtype=float), knots, DEGREE)


def tensor_basis(margins) -> sparse.csr_array:
    """Row-wise Kronecker product of sparse B-spline bases."""
    if len(margins) == 1:
        return sparse.csr_array(margins[0])
    R = margins[0].shape[0]
    k1 = DEGREE + 1
    vals = np.ones((R, 1))
    cols = np.zeros((R, 1), dtype=np.int64)
    for B in margins:
        B = sparse.csr_array(B)
        bv = B.data.reshape(R, k1)
        bi = B.indices.reshape(R, k1).astype(np.int64)
        vals = (vals[:, :, None] * bv[:, None, :]).reshape(R, -1)
        cols = (cols[:, :, None] * B.shape[1] + bi[:, None, :]).reshape(R, -1)
    width = int(np.prod([B.shape[1] for B in margins]))
    indptr = np.arange(0, vals.size + 1, vals.shape[1])
    return sparse.csr_array((vals.ravel(), cols.ravel(), indptr), shape=(R, width))


def greville(knots) -> np.ndarray:
    n = len(knots) - DEGREE - 1
    return np.array([knots[j + 1:j + DEGREE + 1].mean() for j in range(n)])


def divided_difference_penalty(knots) -> np.ndarray:
    """``D'D`` for second divided differences at the Greville abscissae."""
    g = greville(knots)
    n = g.size
    D = np.zeros((n - 2, n))
    for j in range(1, n - 1):
        hl = g[j] - g[j - 1]
        hr = g[j + 1] - g[j]
        D[j - 1, j - 1] = 1.0 / hl
        D[j - 1, j] = -1.0 / hl - 1.0 / hr
        D[j - 1, j + 1] = 1.0 / hr
    return D.T @ D


def tensor_penalty(knot_list) -> np.ndarray:
    sizes = [len(t) - DEGREE - 1 for t in knot_list]
    total = np.zeros((int(np.prod(sizes)),) * 2)
    for j, t in enumerate(knot_list):
        term = np.ones((1, 1))
        for i, size in enumerate(sizes):
            factor = divided_difference_penalty(t) if i == j else np.eye(size)
            term = np.kron(term, factor)
        total += term
    return total


class PenalizedSystem:
    """Eigen-decomposed ``(B'WB, S)`` pencil for fast solves over many ``lam``."""

    def __init__(self, BtB, S):
        p = BtB.shape[0]
        ridge = _RIDGE * np.trace(BtB) / p
        self.e, self.V = linalg.eigh(S, BtB + ridge * np.eye(p))
        self.e = np.maximum(self.e, 0.0)

    def shrink(self, lam):
        return 1.0 / (1.0 + lam * self.e)


class WeightedGram:
    """``B'WB`` for many diagonal weightings of one sparse basis.

    Rows of a (tensor) B-spline basis share one of a few column patterns, one
    per knot cell.  Grouping rows by pattern turns the sparse product into a
    handful of small dense products.
    """

    def __init__(self, B):
        B = sparse.csr_array(B)
        B.sort_indices()
        R, p = B.shape
        nnz = np.diff(B.indptr)
        self.B = B
        self.p = p
        self.cells = None
        if R == 0 or np.any(nnz != nnz[0]):
            return
        q = int(nnz[0])
        vals = B.data.reshape(R, q)
        cols = B.indices.reshape(R, q).astype(np.int64)
        patterns, inverse = np.unique(cols, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        order = np.argsort(inverse, kind="stable")
        bounds = np.searchsorted(inverse[order], np.arange(patterns.shape[0] + 1))
        self.cells = []
        for c, cc in enumerate(patterns):
            rows = order[bounds[c]:bounds[c + 1]]
            flat = (cc[:, None] * p + cc[None, :]).ravel()
            self.cells.append((rows, vals[rows], flat))

    def gram(self, weights=None) -> np.ndarray:
        if self.cells is None:
            Bw = self.B if weights is None else self.B.multiply(weights[:, None]).tocsr()
            return np.asarray((self.B.T @ Bw).todense())
        G = np.zeros(self.p * self.p)
        for rows, V, flat in self.cells:
            Vw = V if weights is None else V * weights[rows, None]
            G[flat] += (V.T @ Vw).ravel()
        return G.reshape(self.p, self.p)


def solve_penalized(BtB, rhs, S, lam):
    """Solve ``(B'WB + lam S) c = B'Wy`` with a tiny ridge for stability."""
    A = BtB + lam * S
    A += _RIDGE * np.trace(BtB) / BtB.shape[0] * np.eye(BtB.shape[0])
    try:
        c, low = linalg.cho_factor(A, check_finite=False)
        return linalg.cho_solve((c, low), rhs, check_finite=False)
    except linalg.LinAlgError:
        return linalg.lstsq(A, rhs, check_finite=False)[0]


def fit_penalized(B, y, S, lam, weights=None, gram=None):
    """Coefficients of the penalised least-squares problem at a fixed ``lam``.

    ``weights`` are row frequencies (bootstrap counts).  Pass a
    :class:`WeightedGram` for ``B`` as ``gram`` when refitting many times.
    """
    yw = y if weights is None else weights * y
    if gram is not None:
        BtB = gram.gram(weights)
    elif sparse.issparse(B):
        BtB = WeightedGram(B).gram(weights)
    else:
        BtB = B.T @ (B if weights is None else B * weights[:, None])
    return solve_penalized(BtB, B.T @ yw, S, lam)


def fit_smooth(x, y, lam_grid=LAMBDA_GRID, n_knots=None) -> SplineFit:
    """Fit ``y ~ g(x)`` with ``x`` holding one to three regressor columns."""
    x = _as_2d(x)
    y = np.asarray(y, dtype=float)
    R, k = x.shape
    if y.shape != (R,):
        raise ParameterDomainError("y", y.shape, f"expected ({R},)")
    if R < MIN_ROWS:
        raise ParameterDomainError("R", R, f"need at least {MIN_ROWS} rows")
    if k > 3:
        raise UnsupportedDimensionError(
            f"{k} joint regressors requested; tensor smooths support at most 3. "
            "Fit a grouped additive model over smaller subsets instead."
        )
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ParameterDomainError("x/y", "non-finite", "inputs must be finite")
    lower, upper = x.min(axis=0), x.max(axis=0)
    if np.any(upper <= lower):
        j = int(np.flatnonzero(upper <= lower)[0])
        raise DegenerateRegressorError(f"regressor column {j} is constant")

    n_int = n_knots if n_knots is not None else KNOTS_PER_MARGIN[k]
    u = (x - lower) / (upper - lower)
    knots = [quantile_knots(u[:, j], n_int) for j in range(k)]
    B = tensor_basis([bspline_basis(u[:, j], t) for j, t in enumerate(knots)])
    S = tensor_penalty(knots)
    BtB = np.asarray((B.T @ B).todense())
    S *= np.trace(BtB) / np.trace(S)

    ybar = float(y.mean())
    yc = y - ybar
    system = PenalizedSystem(BtB, S)
    z = system.V.T @ (B.T @ yc)
    yy = float(yc @ yc)
    lam_grid = np.asarray(lam_grid, dtype=float)
    gcv = np.empty(lam_grid.size)
    edf = np.empty(lam_grid.size)
    for i, lam in enumerate(lam_grid):
        s = system.shrink(lam)
        rss = max(yy - 2.0 * np.sum(s * z * z) + np.sum((s * z) ** 2), 0.0)
        edf[i] = s.sum()
        gcv[i] = R * rss / (R - edf[i]) ** 2
    best = int(np.argmin(gcv))
    lam = float(lam_grid[best])

    coef = system.V @ (system.shrink(lam) * z)
    # B-splines sum to one and S annihilates constants, so the mean enters as a flat shift
    coef = coef + ybar
    fitted = B @ coef
    return SplineFit(
        knots=knots,
        lower=lower,
        upper=upper,
        coef=coef,
        lam=lam,
        edf=float(edf[best]),
        gcv=float(gcv[best]),
        fitted=fitted,
        residuals=y - fitted,
        penalty=S,
        gcv_grid=gcv,
    )
