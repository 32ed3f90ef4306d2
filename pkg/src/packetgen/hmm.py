"""Diagonal-Gaussian HMM over normalized packets with a tail-anchored idle state.

Each flow is an independent sequence: the forward-backward recursion is reset
at every flow boundary and expected counts are summed over flows before the
M-step.  When the idle state is active it is always the last state.
"""

from __future__ import annotations

import bisect
import itertools
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import DataError, NumericalError

log = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)


class StateStarvationWarning(RuntimeWarning):
    """A state received (almost) no posterior mass and was reset."""


@dataclass
class HmmParams:
    alpha: np.ndarray
    A: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray  # per-state variances, not standard deviations
    idle_active: bool = False

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.A = np.asarray(self.A, dtype=np.float64)
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        K = self.alpha.shape[0]
        if self.A.shape != (K, K) or self.mu.shape != (K, 2) or self.sigma.shape != (K, 2):
            raise ValueError(
                f"inconsistent HMM shapes: alpha {self.alpha.shape}, A {self.A.shape}, "
                f"mu {self.mu.shape}, sigma {self.sigma.shape}"
            )
        self.idle_active = bool(self.idle_active)

    @property
    def K(self) -> int:
        return int(self.alpha.shape[0])

    @property
    def idle_state(self) -> int | None:
        return self.K - 1 if self.idle_active else None

    def copy(self) -> "HmmParams":
        return replace(
            self, alpha=self.alpha.copy(), A=self.A.copy(), mu=self.mu.copy(), sigma=self.sigma.copy()
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(x)) for x in (self.alpha, self.A, self.mu, self.sigma))


@dataclass(frozen=True)
class HmmPriors:
    """Dirichlet pseudo-counts added to the expected transition counts."""

    lambda_self: float = 2.0
    lambda_off: float = 0.5
    lambda_idle: float = 10.0
    lambda_leak: float = 0.1

    def __post_init__(self):
        if min(self.lambda_self, self.lambda_off, self.lambda_idle, self.lambda_leak) < 0:
            raise ValueError("pseudo-counts must be non-negative")

    @classmethod
    def none(cls) -> "HmmPriors":
        return cls(0.0, 0.0, 0.0, 0.0)

    def matrix(self, K: int, idle_active: bool) -> np.ndarray:
        lam = np.full((K, K), self.lambda_off)
        np.fill_diagonal(lam, self.lambda_self)
        if idle_active:
            lam[K - 1, :] = self.lambda_leak
            lam[K - 1, K - 1] = self.lambda_idle
        return lam


@dataclass
class Posteriors:
    gamma: np.ndarray  # (L, K)
    zeta: np.ndarray  # (L - 1, K, K)
    loglik: float


def _row_normalize(M: np.ndarray) -> np.ndarray:
    M = np.array(M, dtype=np.float64)
    s = M.sum(axis=1, keepdims=True)
    bad = ~(np.isfinite(s[:, 0]) & (s[:, 0] > 0)) | ~np.all(np.isfinite(M), axis=1)
    M[bad] = 1.0
    s[bad] = M.shape[1]
    return M / s


def kmeans(points: np.ndarray, k: int, seed: int = 0, max_iter: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's k-means with seeded farthest-point initialization.

    The first centre is a seeded random point; each further centre is the
    point farthest from those already chosen.  Ties go to the lowest index,
    and an emptied cluster keeps its previous centre.
    """
    X = np.asarray(points, dtype=np.float64)
    n = X.shape[0]
    if k < 1 or n == 0:
        raise DataError("k-means needs k >= 1 and at least one point")
    rng = np.random.default_rng(seed)
    idx = [int(rng.integers(n))]
    d2 = np.sum((X - X[idx[0]]) ** 2, axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(d2))
        if d2[nxt] == 0.0:
            raise DataError(f"k-means: fewer than {k} distinct points")
        idx.append(nxt)
        d2 = np.minimum(d2, np.sum((X - X[nxt]) ** 2, axis=1))
    centers = X[idx].copy()
    labels = np.full(n, -1)
    for _ in range(max_iter):
        dist = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_labels = np.argmin(dist, axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = X[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    return centers, labels


def init_hmm(
    train_z: Sequence[np.ndarray],
    k_core: int = 3,
    tail_norm_threshold: float = np.inf,
    theta_tail: float = 0.001,
    eps0: float = 1e-4,
    chi: float = 4.0,
    seed: int = 0,
    priors: HmmPriors | None = None,
) -> HmmParams:
    """Initialize core states from k-means and, if the tail is heavy enough, an idle state.

    The idle state is added when the fraction of packets whose normalized IAT
    exceeds ``tail_norm_threshold`` is larger than ``theta_tail``.  The
    transition matrix starts at the row-normalized prior (uniform if the
    prior is empty).
    """
    if k_core < 1:
        raise ValueError("k_core must be >= 1")
    flows = [np.asarray(z, dtype=np.float64).reshape(-1, 2) for z in train_z]
    pooled = np.vstack(flows) if flows else np.empty((0, 2))
    if pooled.shape[0] == 0:
        raise DataError("no training packets")
    if np.unique(pooled, axis=0).shape[0] < k_core:
        raise DataError(f"k_core={k_core} exceeds the number of distinct training points")

    tail_frac = float(np.mean(pooled[:, 1] > tail_norm_threshold))
    idle = tail_frac > theta_tail
    K = k_core + int(idle)
    log.info("tail fraction %.5f (theta_tail %.5f): idle state %s", tail_frac, theta_tail,
             "active" if idle else "inactive")

    centers, labels = kmeans(pooled, k_core, seed=seed)
    mu = np.empty((K, 2))
    sigma = np.empty((K, 2))
    for k in range(k_core):
        mu[k] = centers[k]
        sigma[k] = pooled[labels == k].var(axis=0) + eps0
    if idle:
        mu[K - 1] = [np.median(pooled[:, 0]), tail_norm_threshold]
        sigma[K - 1] = [chi, 1.0]

    lam = (priors or HmmPriors()).matrix(K, idle)
    return HmmParams(alpha=np.full(K, 1.0 / K), A=_row_normalize(lam), mu=mu, sigma=sigma, idle_active=idle)


def emission_logpdf(params: HmmParams, z: np.ndarray) -> np.ndarray:
    """Log diagonal-Gaussian density of each packet under each state, shape (L, K)."""
    z = np.asarray(z, dtype=np.float64).reshape(-1, 2)
    diff2 = (z[:, None, :] - params.mu[None, :, :]) ** 2
    return -0.5 * np.sum(_LOG_2PI + np.log(params.sigma)[None] + diff2 / params.sigma[None], axis=2)


def forward_backward(params: HmmParams, flow_z: np.ndarray) -> Posteriors:
    """Scaled forward-backward on one flow.

    Emission likelihoods are shifted by their per-packet maximum before
    exponentiation and the forward pass is renormalized at every step; both
    offsets are accumulated in log space for the log-likelihood.
    """
    if not params.is_finite() or np.any(params.sigma <= 0):
        raise NumericalError("non-finite or non-positive HMM parameters")
    logb = emission_logpdf(params, flow_z)
    L, K = logb.shape
    if L == 0:
        raise DataError("flow must contain at least one packet")
    shift = logb.max(axis=1)
    b = np.exp(logb - shift[:, None])
    A = params.A

    fwd = np.empty((L, K))
    c = np.empty(L)
    a = params.alpha * b[0]
    for t in range(L):
        if t:
            a = (fwd[t - 1] @ A) * b[t]
        c[t] = a.sum()
        if not c[t] > 0:
            raise NumericalError(f"flow has zero likelihood at packet {t}")
        fwd[t] = a / c[t]

    bwd = np.empty((L, K))
    bwd[-1] = 1.0
    for t in range(L - 2, -1, -1):
        bwd[t] = A @ (b[t + 1] * bwd[t + 1]) / c[t + 1]

    gamma = fwd * bwd
    gamma /= gamma.sum(axis=1, keepdims=True)
    if L > 1:
        nxt = b[1:] * bwd[1:] / c[1:, None]
        zeta = fwd[:-1, :, None] * A[None, :, :] * nxt[:, None, :]
    else:
        zeta = np.empty((0, K, K))
    loglik = float(np.sum(np.log(c)) + np.sum(shift))
    return Posteriors(gamma=gamma, zeta=zeta, loglik=loglik)


def _flow_stats(params: HmmParams, z: np.ndarray):
    post = forward_backward(params, z)
    return post.gamma, post.zeta.sum(axis=0), post.loglik


def em_fit(
    params: HmmParams,
    flows: Sequence[np.ndarray],
    priors: HmmPriors = HmmPriors(),
    eps0: float = 1e-4,
    max_iters: int = 100,
    rel_tol: float = 1e-5,
    workers: int = 1,
) -> tuple[HmmParams, list[float]]:
    """Multi-sequence Baum-Welch with Dirichlet transition prior and variance floor.

    Returns the fitted parameters and the total data log-likelihood evaluated
    at the start of every iteration.  Iteration stops once the relative
    improvement of the mean per-packet log-likelihood drops below
    ``rel_tol`` or after ``max_iters`` iterations.  ``workers > 1`` runs the
    per-flow E-step in a thread pool; counts are still summed in flow order.
    """
    flows = [np.asarray(z, dtype=np.float64).reshape(-1, 2) for z in flows]
    if not flows:
        raise DataError("em_fit needs at least one flow")
    pooled = np.vstack(flows)
    n_packets = pooled.shape[0]
    pooled_mean = pooled.mean(axis=0)
    pooled_var = pooled.var(axis=0) + eps0
    params = params.copy()
    K = params.K
    lam = priors.matrix(K, params.idle_active)

    trace: list[float] = []
    prev = None
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for it in range(max_iters):
            results = list(pool.map(lambda z: _flow_stats(params, z), flows)) if pool else [
                _flow_stats(params, z) for z in flows
            ]
            gammas = [g for g, _, _ in results]
            n_start = np.sum([g[0] for g in gammas], axis=0)
            n_trans = np.sum([x for _, x, _ in results], axis=0)
            loglik = float(sum(ll for _, _, ll in results))
            trace.append(loglik)

            G = np.vstack(gammas)
            R = G.sum(axis=0)
            new = params.copy()
            with np.errstate(divide="ignore", invalid="ignore"):
                mu = (G.T @ pooled) / R[:, None]
                S = np.stack([G[:, k] @ (pooled - mu[k]) ** 2 for k in range(K)])
                sigma = S / R[:, None] + eps0
            new.mu, new.sigma = mu, sigma
            new.alpha = n_start / n_start.sum()
            new.A = _row_normalize(n_trans + lam)

            for k in np.flatnonzero(R < 1e-8):
                warnings.warn(f"state {k} starved (R={R[k]:.3g}) at iteration {it}; reset",
                              StateStarvationWarning, stacklevel=2)
                new.mu[k] = pooled_mean
                new.sigma[k] = pooled_var
            params = _sanitize(new, pooled_mean, pooled_var, eps0)

            per_packet = loglik / n_packets
            if prev is not None:
                rel = (per_packet - prev) / max(abs(prev), 1e-300)
                if rel < rel_tol:
                    log.info("EM converged after %d iterations (rel improvement %.3g)", it + 1, rel)
                    break
            prev = per_packet
    finally:
        if pool:
            pool.shutdown()
    return params, trace


def _sanitize(p: HmmParams, pooled_mean, pooled_var, eps0: float) -> HmmParams:
    bad_mu = ~np.all(np.isfinite(p.mu), axis=1)
    p.mu[bad_mu] = pooled_mean
    bad_sig = ~np.all(np.isfinite(p.sigma), axis=1)
    p.sigma[bad_sig] = pooled_var
    p.sigma = np.maximum(p.sigma, eps0)
    if not (np.all(np.isfinite(p.alpha)) and p.alpha.sum() > 0):
        p.alpha = np.full(p.K, 1.0 / p.K)
    p.alpha = p.alpha / p.alpha.sum()
    p.A = _row_normalize(p.A)
    return p


def expected_dwell(params: HmmParams, k: int) -> float:
    """Mean number of consecutive packets spent in state ``k``; ``inf`` for an absorbing state."""
    a = float(params.A[k, k])
    if a >= 1.0:
        return math.inf
    return 1.0 / (1.0 - a)


def sample_state_path(params: HmmParams, length: int, rng: np.random.Generator) -> np.ndarray:
    if length < 1:
        raise ValueError("length must be >= 1")
    K = params.K
    start = np.cumsum(params.alpha).tolist()
    rows = [np.cumsum(params.A[k]).tolist() for k in range(K)]
    u = rng.random(length).tolist()
    path = np.empty(length, dtype=np.int64)
    s = min(bisect.bisect_right(start, u[0] * start[-1]), K - 1)
    path[0] = s
    for t in range(1, length):
        cum = rows[s]
        s = min(bisect.bisect_right(cum, u[t] * cum[-1]), K - 1)
        path[t] = s
    return path


def align_states(mu_est: np.ndarray, mu_ref: np.ndarray) -> np.ndarray:
    """Permutation ``perm`` with ``mu_est[perm]`` closest to ``mu_ref`` (squared distance)."""
    K = len(mu_ref)
    best, best_cost = None, np.inf
    for perm in itertools.permutations(range(K)):
        cost = float(np.sum((np.asarray(mu_est)[list(perm)] - mu_ref) ** 2))
        if cost < best_cost:
            best, best_cost = perm, cost
    return np.array(best)
