"""Shared builders for tests that need a hand-specified MDN."""

import numpy as np

from packetgen.mdn import MdnConfig, zero_params


def inv_softplus(y):
    y = np.asarray(y, dtype=np.float64)
    return np.where(y > 30, y, np.log(np.expm1(np.clip(y, 1e-300, 30))))


def constant_mdn(num_states, omega, kappa, sigma, nu, hidden=2):
    """MDN whose output ignores its input: all weights zero, mixture set through the head bias."""
    omega = np.asarray(omega, dtype=np.float64)
    M = omega.size
    cfg = MdnConfig(num_states=num_states, n_components=M, hidden=hidden)
    p = zero_params(cfg)
    p.b3[:M] = np.log(omega)
    p.b3[M:3 * M] = np.asarray(kappa, dtype=np.float64).reshape(-1)
    p.b3[3 * M:5 * M] = inv_softplus(np.asarray(sigma, dtype=np.float64).reshape(-1) - cfg.sigma_floor)
    p.b3[5 * M:] = inv_softplus(np.asarray(nu, dtype=np.float64) - cfg.nu_floor)
    return p, cfg
