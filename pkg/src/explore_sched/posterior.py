"""Gaussian belief over item embeddings with exact conjugate batch updates.

The belief is block-diagonal across items. Each block is kept in information
form (precision matrix and precision-weighted mean), so a batch update is a
pair of additions and sequential updates are exactly associative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import as_matrix, as_vector, check_item
from .exceptions import InputError, NumericalError
from .model import InteractionBatch

SNAPSHOT_VERSION = "explore-sched-posterior v1"


@dataclass(frozen=True)
class DesignMatrix:
    """Per-sample information matrix.

    ``matrix`` is (d, d) in full mode or the (d,) diagonal in diagonal mode.
    ``kind`` is ``"population"`` or ``"empirical"``.
    """

    matrix: np.ndarray
    diagonal: bool = False
    kind: str = "population"

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return np.diag(self.matrix) if self.diagonal else self.matrix

    def diag(self) -> np.ndarray:
        return self.matrix if self.diagonal else np.diag(self.matrix).copy()


@dataclass(frozen=True)
class GaussianPosterior:
    """Snapshot of ``theta | H_t ~ N(mean, covariance)``.

    Attributes
    ----------
    mean : ndarray of shape (K, d)
    precision : ndarray of shape (K, d, d), or (K, d) when ``diagonal``
    period : int
        The period ``t`` this belief applies to; the prior is period 1.
    diagonal : bool
    """

    mean: np.ndarray
    precision: np.ndarray
    period: int = 1
    diagonal: bool = False

    def __post_init__(self):
        for name in ("mean", "precision"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def K(self) -> int:
        return self.mean.shape[0]

    @property
    def d(self) -> int:
        return self.mean.shape[1]

    @property
    def covariance(self) -> np.ndarray:
        """Per-item covariance, (K, d, d) or (K, d) in diagonal mode."""
        if self.diagonal:
            return 1.0 / self.precision
        return _inv_pd(self.precision)

    def variances(self) -> np.ndarray:
        """Marginal variances, shape (K, d)."""
        cov = self.covariance
        return cov if self.diagonal else np.diagonal(cov, axis1=1, axis2=2).copy()

    def to_diagonal(self) -> "GaussianPosterior":
        """Diagonal approximation keeping the marginal variances."""
        if self.diagonal:
            return self
        return GaussianPosterior(self.mean, 1.0 / self.variances(), self.period, True)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """One draw of all item embeddings, shape (K, d)."""
        z = rng.standard_normal(self.mean.shape)
        if self.diagonal:
            return self.mean + np.sqrt(self.covariance) * z
        chol = np.linalg.cholesky(self.covariance)
        return self.mean + np.einsum("kij,kj->ki", chol, z)


def _inv_pd(mats):
    """Invert a stack of SPD matrices via Cholesky, reporting the failing block."""
    out = np.empty_like(mats)
    eye = np.eye(mats.shape[-1])
    for a, m in enumerate(mats):
        try:
            c = np.linalg.cholesky(m)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"precision matrix of item {a} is not positive definite") from exc
        ci = np.linalg.solve(c, eye)
        out[a] = ci.T @ ci
    return out


def make_prior(K: int, d: int, mean0=0.0, variance0=1.0, diagonal: bool = False) -> GaussianPosterior:
    """Prior ``N(mean0, diag(variance0))`` shared by all ``K`` items."""
    if K < 1 or d < 1:
        raise InputError("K and d must be >= 1")
    var = np.broadcast_to(np.asarray(variance0, dtype=np.float64), (d,))
    if not np.all(var > 0) or not np.all(np.isfinite(var)):
        raise InputError(f"prior variance must be positive and finite, got {variance0}")
    mean = np.broadcast_to(np.asarray(mean0, dtype=np.float64), (K, d)).copy()
    prec_diag = np.tile(1.0 / var, (K, 1))
    precision = prec_diag if diagonal else np.stack([np.diag(p) for p in prec_diag])
    return GaussianPosterior(mean, precision, 1, diagonal)


def empirical_design(batch: InteractionBatch, a: int, noise_std: float, diagonal: bool = False) -> DesignMatrix:
    """``s^-2 * sum_i xi_i 1{A_i = a} x_i x_i^T`` over the explore group."""
    X = batch.X
    mask = batch.explored & (batch.actions == a)
    Xa = X[mask]
    if diagonal:
        mat = np.einsum("ij,ij->j", Xa, Xa) / noise_std**2 if len(Xa) else np.zeros(X.shape[1])
    else:
        mat = Xa.T @ Xa / noise_std**2 if len(Xa) else np.zeros((X.shape[1], X.shape[1]))
    return DesignMatrix(mat, diagonal, "empirical")


def population_design(user_sample, K: int, noise_std: float = 1.0, diagonal: bool = True) -> DesignMatrix:
    """Plug-in estimate of ``s^-2 K^-1 E[X X^T]`` from a user sample."""
    X = as_matrix(user_sample, "user_sample")
    if len(X) == 0:
        raise InputError("population design needs a non-empty user sample")
    second_moment = X.T @ X / len(X)
    mat = second_moment / (noise_std**2 * K)
    return DesignMatrix(np.diag(mat).copy() if diagonal else mat, diagonal, "population")


def _item_statistics(batch: InteractionBatch, K: int, noise_std: float, diagonal: bool):
    """Per-item design and reward-weighted feature sums from explore rows."""
    keep = batch.explored
    X, A, R = batch.X[keep], batch.actions[keep], batch.rewards[keep]
    d = batch.X.shape[1]
    onehot = np.zeros((len(A), K))
    onehot[np.arange(len(A)), A] = 1.0
    if diagonal:
        design = onehot.T @ (X * X)
    else:
        design = np.einsum("ik,ij,il->kjl", onehot, X, X) if len(A) else np.zeros((K, d, d))
    xr = onehot.T @ (X * R[:, None])
    return design / noise_std**2, xr / noise_std**2


def _check_precision(precision, diagonal):
    if not diagonal:
        _inv_pd(precision)
    elif not np.all(precision > 0):
        bad = int(np.argwhere(~(precision > 0))[0, 0])
        raise NumericalError(f"non-positive precision for item {bad}")


def posterior_update(post: GaussianPosterior, batch: InteractionBatch, noise_std: float) -> GaussianPosterior:
    """Condition on one period's explore-group data.

    ``Sigma' = (Sigma^-1 + I_a)^-1`` and ``beta' = Sigma' (Sigma^-1 beta + s^-2 sum R x)``
    for each item. In diagonal mode only the diagonal of ``I_a`` is used.
    """
    if batch.X.shape[1] != post.d:
        raise InputError(f"batch has dimension {batch.X.shape[1]}, posterior has {post.d}")
    if len(batch) and (batch.actions.min() < 0 or batch.actions.max() >= post.K):
        raise InputError("batch contains out-of-range item indices")
    design, xr = _item_statistics(batch, post.K, noise_std, post.diagonal)
    if not design.any() and not xr.any():
        _check_precision(post.precision, post.diagonal)
        return GaussianPosterior(post.mean, post.precision, post.period + 1, post.diagonal)
    if post.diagonal:
        info = post.precision * post.mean + xr
        precision = post.precision + design
        _check_precision(precision, True)
        mean = info / precision
    else:
        info = np.einsum("kij,kj->ki", post.precision, post.mean) + xr
        precision = post.precision + design
        cov = _inv_pd(precision)
        mean = np.einsum("kij,kj->ki", cov, info)
    return GaussianPosterior(mean, precision, post.period + 1, post.diagonal)


def posterior_predictive_mean(post: GaussianPosterior, x, a: int) -> float:
    x = as_vector(x, "x", size=post.d)
    return float(x @ post.mean[check_item(a, post.K)])


def dumps(post: GaussianPosterior) -> str:
    """Serialize to the versioned plain-text snapshot format."""
    lines = [
        SNAPSHOT_VERSION,
        f"period {post.period}",
        f"mode {'diagonal' if post.diagonal else 'full'}",
        f"K {post.K}",
        f"d {post.d}",
    ]
    cov = post.covariance
    for a in range(post.K):
        lines.append(f"mean {a} " + " ".join(repr(float(v)) for v in post.mean[a]))
        lines.append(f"cov {a} " + " ".join(repr(float(v)) for v in np.ravel(cov[a])))
    return "\n".join(lines) + "\n"


def loads(text: str) -> GaussianPosterior:
    lines = [ln.split() for ln in text.strip().splitlines()]
    if not lines or " ".join(lines[0]) != SNAPSHOT_VERSION:
        raise InputError("not a posterior snapshot (missing version header)")
    head = {ln[0]: ln[1] for ln in lines[1:5]}
    try:
        period, K, d = int(head["period"]), int(head["K"]), int(head["d"])
        diagonal = {"diagonal": True, "full": False}[head["mode"]]
    except (KeyError, ValueError) as exc:
        raise InputError(f"malformed snapshot header: {exc}") from exc
    mean = np.zeros((K, d))
    cov = np.zeros((K, d) if diagonal else (K, d, d))
    for ln in lines[5:]:
        tag, a, vals = ln[0], int(ln[1]), np.array(ln[2:], dtype=np.float64)
        if tag == "mean":
            mean[a] = vals
        elif tag == "cov":
            cov[a] = vals.reshape(cov.shape[1:])
        else:
            raise InputError(f"unknown snapshot row {tag!r}")
    precision = 1.0 / cov if diagonal else _inv_pd(cov)
    return GaussianPosterior(mean, precision, period, diagonal)
