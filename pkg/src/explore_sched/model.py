"""Ground-truth linear reward model, bandit instances and per-user regret.

Items are indexed ``0..K-1``. Every argmax in the package breaks ties toward
the lowest index, which is what :func:`numpy.argmax` does.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import as_matrix, as_vector, check_item, check_positive, check_probability_vector
from .exceptions import InputError

DEFAULT_NORM_BOUND = 4.0


@dataclass(frozen=True)
class ItemEmbeddings:
    """Item embeddings ``theta`` stored as a ``(K, d)`` array."""

    theta: np.ndarray

    def __post_init__(self):
        theta = as_matrix(self.theta, "theta")
        if theta.shape[0] < 1 or theta.shape[1] < 1:
            raise InputError("theta must have K >= 1 rows and d >= 1 columns")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @property
    def K(self) -> int:
        return self.theta.shape[0]

    @property
    def d(self) -> int:
        return self.theta.shape[1]


@dataclass(frozen=True)
class BanditInstance:
    """Ground truth for one simulated problem.

    Parameters
    ----------
    items : ItemEmbeddings
    users : ndarray of shape (n_users, d)
        Finite pool of user embeddings arrivals are drawn from.
    noise_std : float
        Standard deviation ``s`` of the Gaussian reward noise.
    norm_bound : float
        Bound ``C`` on squared user norms, checked here and never enforced by
        rescaling.
    """

    items: ItemEmbeddings
    users: np.ndarray
    noise_std: float = 1.0
    norm_bound: float = DEFAULT_NORM_BOUND

    def __post_init__(self):
        users = as_matrix(self.users, "users", n_features=self.items.d)
        if users.shape[0] == 0:
            raise InputError("user pool must be non-empty")
        check_positive(self.noise_std, "noise_std")
        check_positive(self.norm_bound, "norm_bound")
        check_norm_bound(users, self.norm_bound)
        users.setflags(write=False)
        object.__setattr__(self, "users", users)

    @property
    def K(self) -> int:
        return self.items.K

    @property
    def d(self) -> int:
        return self.items.d

    def pool_values(self) -> np.ndarray:
        """Expected rewards ``x_i . theta_a`` for every pool user, shape (n_users, K)."""
        return self.users @ self.items.theta.T


@dataclass(frozen=True)
class InteractionBatch:
    """Columnar record of one period's interactions.

    One row per user: embedding ``X``, assigned ``actions``, observed
    ``rewards`` and the ``explored`` flag marking the uniform-exploration group.
    """

    X: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    explored: np.ndarray
    user_index: np.ndarray | None = field(default=None)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            X = X.reshape(len(self.actions), -1)
        actions = np.asarray(self.actions, dtype=np.int64)
        rewards = np.asarray(self.rewards, dtype=np.float64)
        explored = np.asarray(self.explored, dtype=bool)
        if not (len(X) == len(actions) == len(rewards) == len(explored)):
            raise InputError("batch columns have different lengths")
        if not np.all(np.isfinite(rewards)):
            raise InputError("rewards must be finite")
        for name, value in (("X", X), ("actions", actions), ("rewards", rewards), ("explored", explored)):
            object.__setattr__(self, name, value)

    def __len__(self):
        return len(self.actions)

    @classmethod
    def empty(cls, d: int) -> "InteractionBatch":
        return cls(np.zeros((0, d)), np.zeros(0, int), np.zeros(0), np.zeros(0, bool))

    @classmethod
    def from_records(cls, records, d: int) -> "InteractionBatch":
        """Build from an iterable of ``(x, action, reward, explored)`` tuples."""
        records = list(records)
        if not records:
            return cls.empty(d)
        X, a, r, xi = zip(*records)
        return cls(np.vstack([as_vector(x, "x", size=d) for x in X]), a, r, xi)

    def concat(self, other: "InteractionBatch") -> "InteractionBatch":
        return InteractionBatch(
            np.vstack([self.X, other.X]),
            np.concatenate([self.actions, other.actions]),
            np.concatenate([self.rewards, other.rewards]),
            np.concatenate([self.explored, other.explored]),
        )


def check_norm_bound(users, bound):
    sq = np.einsum("ij,ij->i", users, users)
    if np.any(sq > bound * (1 + 1e-12)):
        worst = int(np.argmax(sq))
        raise InputError(f"user {worst} has squared norm {sq[worst]:.6g} > bound C={bound}")


def expected_reward(x, a, items: ItemEmbeddings) -> float:
    """Mean reward ``x . theta_a`` of showing item ``a`` to user ``x``."""
    x = as_vector(x, "x", size=items.d)
    return float(x @ items.theta[check_item(a, items.K)])


def sample_reward(x, a, instance: BanditInstance, rng: np.random.Generator) -> float:
    """Noisy reward ``x . theta_a + eta`` with ``eta ~ N(0, s^2)``."""
    return expected_reward(x, a, instance.items) + instance.noise_std * rng.standard_normal()


def oracle_value(x, items: ItemEmbeddings) -> float:
    x = as_vector(x, "x", size=items.d)
    return float(np.max(items.theta @ x))


def per_user_regret(x, action_distribution, items: ItemEmbeddings) -> float:
    """Gap between the best item's reward and the expected reward under ``p``."""
    x = as_vector(x, "x", size=items.d)
    p = check_probability_vector(action_distribution, items.K)
    values = items.theta @ x
    return float(np.max(values) - p @ values)


def batch_regret(values, probs):
    """Vectorized per-user regret.

    ``values`` has shape (n, K) with true expected rewards, ``probs`` the
    (n, K) assignment distributions. Returns an (n,) array.
    """
    return values.max(axis=1) - np.einsum("ik,ik->i", probs, values)


def greedy_actions(X, coef):
    """Argmax item per row of ``X`` under coefficient matrix ``coef`` (K, d)."""
    return np.argmax(np.asarray(X) @ np.asarray(coef).T, axis=1)


def load_embeddings(path, noise_std=1.0, norm_bound=DEFAULT_NORM_BOUND) -> BanditInstance:
    """Read an embedding file into a :class:`BanditInstance`.

    The file starts with a header line ``d=<int> K=<int>``, then ``K`` rows of
    ``d`` whitespace-separated item coordinates, then one row per user.
    """
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise InputError(f"{path}: empty embedding file")
    header = dict(tok.split("=", 1) for tok in lines[0].split() if "=" in tok)
    try:
        d, K = int(header["d"]), int(header["K"])
    except (KeyError, ValueError) as exc:
        raise InputError(f"{path}: bad header {lines[0]!r}, expected 'd=<int> K=<int>'") from exc
    rows = []
    for lineno, ln in enumerate(lines[1:], start=2):
        try:
            row = [float(tok) for tok in ln.split()]
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from exc
        if len(row) != d:
            raise InputError(f"{path}:{lineno}: expected {d} values, got {len(row)}")
        if not all(np.isfinite(row)):
            raise InputError(f"{path}:{lineno}: NaN/Inf not allowed")
        rows.append(row)
    if len(rows) < K + 1:
        raise InputError(f"{path}: need {K} item rows and at least one user row")
    arr = np.array(rows)
    return BanditInstance(ItemEmbeddings(arr[:K]), arr[K:], noise_std, norm_bound)


def save_embeddings(instance: BanditInstance, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"d={instance.d} K={instance.K}\n")
        for row in np.vstack([instance.items.theta, instance.users]):
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
