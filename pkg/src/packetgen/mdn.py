"""Conditional Student-t mixture density network in plain numpy.

The network maps a conditioning vector ``h = [one_hot(state), xi]`` through
two tanh layers to the parameters of an ``M``-component mixture of diagonal
bivariate Student-t densities over the normalized packet ``z``.  Gradients
are derived by hand; ``loss_and_grad`` is checked against finite differences
in the test suite.

Output head layout (``6M`` columns, in order)::

    [0, M)      mixture logits            -> softmax -> omega
    [M, 3M)     locations kappa, (M, 2) row-major
    [3M, 5M)    raw scales,     (M, 2) row-major -> softplus + sigma_floor
    [5M, 6M)    raw dofs                  -> softplus + nu_floor
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import digamma, expit, gammaln, logsumexp

from .errors import DataError, NumericalError

log = logging.getLogger(__name__)

LAYER_ORDER = ("W1", "b1", "W2", "b2", "W3", "b3")


@dataclass(frozen=True)
class MdnConfig:
    num_states: int
    n_components: int = 32
    hidden: int = 128
    sigma_floor: float = 1e-3
    nu_floor: float = 1.01

    def __post_init__(self):
        if self.num_states < 1 or self.n_components < 1 or self.hidden < 1:
            raise ValueError("num_states, n_components and hidden must be >= 1")
        if not self.sigma_floor > 0:
            raise ValueError("sigma_floor must be positive")
        if not self.nu_floor > 1:
            raise ValueError("nu_floor must exceed 1")

    @property
    def input_dim(self) -> int:
        return self.num_states + 1

    @property
    def output_dim(self) -> int:
        return 6 * self.n_components

    def layer_shapes(self) -> dict[str, tuple[int, ...]]:
        H, D, O = self.hidden, self.input_dim, self.output_dim
        return {"W1": (D, H), "b1": (H,), "W2": (H, H), "b2": (H,), "W3": (H, O), "b3": (O,)}

    @property
    def n_params(self) -> int:
        return sum(math.prod(s) for s in self.layer_shapes().values())


@dataclass
class MdnParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, name) for name in LAYER_ORDER]

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_flat(cls, config: MdnConfig, vec: np.ndarray) -> "MdnParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != config.n_params:
            raise ValueError(f"expected {config.n_params} values, got {vec.size}")
        out, pos = {}, 0
        for name, shape in config.layer_shapes().items():
            n = math.prod(shape)
            out[name] = vec[pos:pos + n].reshape(shape).copy()
            pos += n
        return cls(**out)

    def copy(self) -> "MdnParams":
        return MdnParams(*(a.copy() for a in self.arrays()))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass
class MixtureOutput:
    omega: np.ndarray  # (..., M)
    kappa: np.ndarray  # (..., M, 2)
    sigma: np.ndarray  # (..., M, 2)
    nu: np.ndarray  # (..., M)
    log_omega: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.log_omega is None:
            with np.errstate(divide="ignore"):
                self.log_omega = np.log(self.omega)

    def __getitem__(self, idx) -> "MixtureOutput":
        return MixtureOutput(self.omega[idx], self.kappa[idx], self.sigma[idx], self.nu[idx], self.log_omega[idx])

    @property
    def n_components(self) -> int:
        return int(self.omega.shape[-1])


def init_params(config: MdnConfig, seed: int = 0) -> MdnParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases except the dof head."""
    rng = np.random.default_rng(seed)
    arrs = {}
    for name, shape in config.layer_shapes().items():
        if name.startswith("W"):
            bound = 1.0 / math.sqrt(shape[0])
            arrs[name] = rng.uniform(-bound, bound, size=shape)
        else:
            arrs[name] = np.zeros(shape)
    # start the degrees of freedom near 4 rather than at the floor
    M = config.n_components
    arrs["b3"][5 * M:] = 3.0
    return MdnParams(**arrs)


def zero_params(config: MdnConfig) -> MdnParams:
    return MdnParams(**{k: np.zeros(s) for k, s in config.layer_shapes().items()})


def conditioning_vector(state, xi, num_states: int) -> np.ndarray:
    """``[one_hot(state), xi]``; vectorizes over equal-length ``state``/``xi`` arrays."""
    state = np.asarray(state, dtype=np.int64)
    xi = np.broadcast_to(np.asarray(xi, dtype=np.float64), state.shape)
    if np.any((state < 0) | (state >= num_states)):
        raise ValueError("state index out of range")
    h = np.zeros(state.shape + (num_states + 1,))
    np.put_along_axis(h, state[..., None], 1.0, axis=-1)
    h[..., -1] = xi
    return h


def _softplus(x):
    return np.logaddexp(0.0, x)


def _forward_cache(params: MdnParams, h: np.ndarray, config: MdnConfig):
    h1 = np.tanh(h @ params.W1 + params.b1)
    h2 = np.tanh(h1 @ params.W2 + params.b2)
    o = h2 @ params.W3 + params.b3
    M = config.n_components
    N = o.shape[0]
    logits = o[:, :M]
    kappa = o[:, M:3 * M].reshape(N, M, 2)
    s_raw = o[:, 3 * M:5 * M].reshape(N, M, 2)
    n_raw = o[:, 5 * M:]
    log_omega = logits - logsumexp(logits, axis=1, keepdims=True)
    out = MixtureOutput(
        omega=np.exp(log_omega),
        kappa=kappa,
        sigma=_softplus(s_raw) + config.sigma_floor,
        nu=_softplus(n_raw) + config.nu_floor,
        log_omega=log_omega,
    )
    return out, (h1, h2, s_raw, n_raw)


def forward(params: MdnParams, h: np.ndarray, config: MdnConfig) -> MixtureOutput:
    """Mixture parameters for one conditioning vector (shape (K+1,)) or a batch (N, K+1)."""
    h = np.asarray(h, dtype=np.float64)
    single = h.ndim == 1
    out, _ = _forward_cache(params, np.atleast_2d(h), config)
    if not all(np.all(np.isfinite(a)) for a in (out.omega, out.kappa, out.sigma, out.nu)):
        raise NumericalError("non-finite MDN output")
    return out[0] if single else out


def student_t_logpdf(y, kappa, sigma, nu):
    """Log density of the location-scale Student-t distribution."""
    y, kappa, sigma, nu = (np.asarray(a, dtype=np.float64) for a in (y, kappa, sigma, nu))
    if np.any(~(sigma > 0)) or np.any(~(nu > 0)):
        raise ValueError("student_t_logpdf requires sigma > 0 and nu > 0")
    u = (y - kappa) / sigma
    log_c = gammaln(0.5 * (nu + 1.0)) - gammaln(0.5 * nu) - 0.5 * np.log(nu * np.pi) - np.log(sigma)
    res = log_c - 0.5 * (nu + 1.0) * np.log1p(u * u / nu)
    return float(res) if res.ndim == 0 else res


def _component_logpdf(out: MixtureOutput, z: np.ndarray) -> np.ndarray:
    """Per-coordinate Student-t log densities, shape (..., M, 2); dof shared by both coordinates."""
    z = np.asarray(z, dtype=np.float64)
    return student_t_logpdf(z[..., None, :], out.kappa, out.sigma, out.nu[..., None])


def mixture_logpdf(out: MixtureOutput, z) -> np.ndarray | float:
    a = out.log_omega + _component_logpdf(out, z).sum(axis=-1)
    res = logsumexp(a, axis=-1)
    return float(res) if np.ndim(res) == 0 else res


def mixture_nll(out: MixtureOutput, z) -> np.ndarray | float:
    """Negative log-likelihood of ``z`` under the mixture (log-sum-exp evaluated)."""
    res = mixture_logpdf(out, z)
    return -res


# --- training ---------------------------------------------------------------


@dataclass
class WeightedSamples:
    h: np.ndarray  # (N, K+1)
    z: np.ndarray  # (N, 2)
    w: np.ndarray  # (N,)
    state: np.ndarray  # (N,)

    def __len__(self) -> int:
        return int(self.w.shape[0])


def build_training_set(
    flows_z: Sequence[np.ndarray],
    posteriors: Sequence,
    xi: Sequence[float],
    num_states: int,
    idle_state: int | None = None,
    gamma_min_core: float = 0.1,
    gamma_min_idle: float = 0.01,
) -> WeightedSamples:
    """Soft-labelled per-state training slices, reweighted so every state carries equal total weight.

    ``posteriors`` holds either :class:`~packetgen.hmm.Posteriors` or raw
    ``(L, K)`` gamma arrays, aligned with ``flows_z``.
    """
    if not (len(flows_z) == len(posteriors) == len(xi)):
        raise DataError("flows, posteriors and xi must be aligned")
    gammas = [np.asarray(getattr(p, "gamma", p), dtype=np.float64) for p in posteriors]
    for z, g in zip(flows_z, gammas):
        if g.shape != (len(z), num_states):
            raise DataError(f"posterior shape {g.shape} does not match flow of length {len(z)}")
    zs = np.vstack([np.asarray(z, dtype=np.float64).reshape(-1, 2) for z in flows_z]) if flows_z else np.empty((0, 2))
    G = np.vstack(gammas) if gammas else np.empty((0, num_states))
    XI = np.concatenate([np.full(len(z), x, dtype=np.float64) for z, x in zip(flows_z, xi)]) if flows_z else np.empty(0)

    parts_h, parts_z, parts_w, parts_s, totals = [], [], [], [], {}
    for k in range(num_states):
        thr = gamma_min_idle if k == idle_state else gamma_min_core
        keep = G[:, k] >= thr
        if not np.any(keep) or G[keep, k].sum() <= 0:
            warnings.warn(f"state {k} retains no training packets; excluded from balancing", RuntimeWarning)
            continue
        n = int(keep.sum())
        parts_h.append(conditioning_vector(np.full(n, k), XI[keep], num_states))
        parts_z.append(zs[keep])
        parts_w.append(G[keep, k].copy())
        parts_s.append(np.full(n, k))
        totals[k] = float(G[keep, k].sum())

    if not parts_w:
        return WeightedSamples(np.empty((0, num_states + 1)), np.empty((0, 2)), np.empty(0), np.empty(0, dtype=np.int64))
    target = float(np.mean(list(totals.values())))
    for w, s in zip(parts_w, parts_s):
        w *= target / totals[int(s[0])]
    return WeightedSamples(np.vstack(parts_h), np.vstack(parts_z), np.concatenate(parts_w), np.concatenate(parts_s))


def loss_and_grad(
    params: MdnParams, config: MdnConfig, h: np.ndarray, z: np.ndarray, w: np.ndarray
) -> tuple[float, MdnParams]:
    """Weighted summed NLL ``sum_i w_i * nll_i`` and its gradient w.r.t. every parameter."""
    out, (h1, h2, s_raw, n_raw) = _forward_cache(params, h, config)
    N, M = out.omega.shape
    sigma, nu = out.sigma, out.nu[:, :, None]
    u = (z[:, None, :] - out.kappa) / sigma  # (N, M, 2)
    u2 = u * u
    q = nu + u2
    lt = (gammaln(0.5 * (nu + 1)) - gammaln(0.5 * nu) - 0.5 * np.log(nu * np.pi)
          - np.log(sigma) - 0.5 * (nu + 1) * np.log1p(u2 / nu))
    a = out.log_omega + lt.sum(axis=2)
    lse = logsumexp(a, axis=1)
    loss = float(np.dot(w, -lse))
    r = np.exp(a - lse[:, None])  # component responsibilities

    d_lt_dk = (nu + 1) * u / (sigma * q)
    d_lt_ds = -1.0 / sigma + (nu + 1) * u2 / (sigma * q)
    d_lt_dn = (0.5 * digamma(0.5 * (nu + 1)) - 0.5 * digamma(0.5 * nu) - 0.5 / nu
               - 0.5 * np.log1p(u2 / nu) + 0.5 * (nu + 1) * u2 / (nu * q)).sum(axis=2)

    wr = (w[:, None] * r)
    g_logits = w[:, None] * out.omega - wr
    g_kappa = -wr[:, :, None] * d_lt_dk
    g_sraw = -wr[:, :, None] * d_lt_ds * expit(s_raw)
    g_nraw = -wr * d_lt_dn * expit(n_raw)
    do = np.concatenate([g_logits, g_kappa.reshape(N, 2 * M), g_sraw.reshape(N, 2 * M), g_nraw], axis=1)

    gW3 = h2.T @ do
    gb3 = do.sum(axis=0)
    da2 = (do @ params.W3.T) * (1.0 - h2 * h2)
    gW2 = h1.T @ da2
    gb2 = da2.sum(axis=0)
    da1 = (da2 @ params.W2.T) * (1.0 - h1 * h1)
    gW1 = h.T @ da1
    gb1 = da1.sum(axis=0)
    return loss, MdnParams(gW1, gb1, gW2, gb2, gW3, gb3)


@dataclass(frozen=True)
class OptimizerConfig:
    """Adam settings plus the epoch budget and plateau-based early stop."""

    learning_rate: float = 1e-3
    batch_size: int = 512
    epochs: int = 200
    patience: int = 10
    min_rel_improvement: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class _Adam:
    def __init__(self, params: MdnParams, cfg: OptimizerConfig):
        self.cfg = cfg
        self.m = [np.zeros_like(a) for a in params.arrays()]
        self.v = [np.zeros_like(a) for a in params.arrays()]
        self.t = 0

    def step(self, params: MdnParams, grads: MdnParams) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for p, g, m, v in zip(params.arrays(), grads.arrays(), self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p -= c.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


def train_mdn(
    samples: WeightedSamples,
    config: MdnConfig,
    opt: OptimizerConfig = OptimizerConfig(),
    seed: int = 0,
    params: MdnParams | None = None,
) -> tuple[MdnParams, list[float]]:
    """Mini-batch Adam on the weighted NLL; returns params and per-epoch mean weighted loss."""
    n = len(samples)
    if n == 0:
        raise DataError("empty MDN training set")
    if samples.h.shape[1] != config.input_dim:
        raise DataError(f"conditioning dimension {samples.h.shape[1]} != {config.input_dim}")
    rng = np.random.default_rng(seed)
    params = init_params(config, seed) if params is None else params.copy()
    adam = _Adam(params, opt)
    trace: list[float] = []
    best, stale = math.inf, 0
    for epoch in range(opt.epochs):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, opt.batch_size)):
            idx = order[start:start + opt.batch_size]
            loss, grads = loss_and_grad(params, config, samples.h[idx], samples.z[idx], samples.w[idx])
            if not (math.isfinite(loss) and grads.is_finite()):
                raise NumericalError(f"non-finite MDN loss/gradient at epoch {epoch}, batch {b}")
            adam.step(params, grads)
            total += loss
        epoch_loss = total / n
        trace.append(epoch_loss)
        log.debug("epoch %d loss %.6f", epoch, epoch_loss)
        improved = not math.isfinite(best) or epoch_loss < best - opt.min_rel_improvement * max(abs(best), 1.0)
        if improved:
            best, stale = epoch_loss, 0
        else:
            stale += 1
            if stale >= opt.patience:
                log.info("MDN loss plateaued after %d epochs", epoch + 1)
                break
    return params, trace


# --- sampling ---------------------------------------------------------------


def component_probs(out: MixtureOutput, idle_temperature: float = 1.0, is_idle_state: bool = False) -> np.ndarray:
    if not idle_temperature > 0:
        raise ValueError("idle_temperature must be positive")
    if not is_idle_state or idle_temperature == 1.0:
        return out.omega / out.omega.sum()
    scaled = out.log_omega / idle_temperature
    return np.exp(scaled - logsumexp(scaled))


def sample(
    out: MixtureOutput,
    rng: np.random.Generator,
    idle_temperature: float = 1.0,
    is_idle_state: bool = False,
    size: int | None = None,
) -> np.ndarray:
    """Draw normalized packets from one mixture; shape (2,) or (size, 2).

    Component weights are tempered as ``omega**(1/T)`` (renormalized) only for
    the idle state.  Each coordinate is ``kappa + sigma * N(0,1) / sqrt(X/nu)``
    with its own chi-square draw ``X``, so the two coordinates are independent
    given the component, matching the product-form density.
    """
    p = component_probs(out, idle_temperature, is_idle_state)
    n = 1 if size is None else int(size)
    cum = np.cumsum(p)
    comp = np.minimum(np.searchsorted(cum, rng.random(n) * cum[-1], side="right"), len(p) - 1)
    nu = np.repeat(out.nu[comp][:, None], 2, axis=1)
    g = rng.standard_normal((n, 2))
    chi2 = rng.chisquare(nu)
    y = out.kappa[comp] + out.sigma[comp] * g / np.sqrt(chi2 / nu)
    return y[0] if size is None else y
