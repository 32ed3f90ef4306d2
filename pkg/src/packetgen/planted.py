"""Synthetic ground-truth generators for self-consistency experiments and tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hmm import HmmParams, sample_state_path
from .trace_io import Flow, TraceDataset


def sample_hmm_flows(params: HmmParams, lengths, rng: np.random.Generator):
    """Draw (states, z) per flow from a diagonal-Gaussian HMM."""
    flows, paths = [], []
    sd = np.sqrt(params.sigma)
    for L in lengths:
        s = sample_state_path(params, int(L), rng)
        z = params.mu[s] + sd[s] * rng.standard_normal((int(L), 2))
        flows.append(z)
        paths.append(s)
    return flows, paths


@dataclass
class PlantedTrafficModel:
    """Markov-switching packet source with Student-t emissions in log space.

    ``loc``/``scale`` are (K, 2) arrays over (ln payload, ln iat); ``df`` holds
    one degrees-of-freedom value per state.
    """

    alpha: np.ndarray
    A: np.ndarray
    loc: np.ndarray
    scale: np.ndarray
    df: np.ndarray

    @classmethod
    def default(cls) -> "PlantedTrafficModel":
        # bulk transfer, small control packets, and an occasional pause state;
        # flows start from the stationary distribution of the chain
        A = np.array([[0.75, 0.17, 0.08],
                      [0.20, 0.72, 0.08],
                      [0.30, 0.30, 0.40]])
        evals, evecs = np.linalg.eig(A.T)
        pi = np.real(evecs[:, np.argmax(np.real(evals))])
        return cls(
            alpha=pi / pi.sum(),
            A=A,
            loc=np.array([[6.8, np.log(2e-3)],
                          [4.5, np.log(2e-2)],
                          [5.0, np.log(0.3)]]),
            scale=np.array([[0.35, 0.6],
                            [0.5, 0.8],
                            [0.6, 0.7]]),
            df=np.array([8.0, 5.0, 4.0]),
        )

    def hmm(self) -> HmmParams:
        return HmmParams(self.alpha, self.A, self.loc, self.scale ** 2)

    def sample(self, n_flows: int, length_range=(10, 120), seed: int = 0, prefix: str = "f") -> TraceDataset:
        rng = np.random.default_rng(seed)
        lo, hi = length_range
        lengths = np.exp(rng.uniform(np.log(lo), np.log(hi), n_flows)).astype(int)
        chain = self.hmm()
        flows = []
        for i, L in enumerate(lengths):
            s = sample_state_path(chain, int(L), rng)
            t = rng.standard_t(self.df[s][:, None], size=(int(L), 2))
            u = self.loc[s] + self.scale[s] * t
            flows.append(Flow(f"{prefix}{i}", np.exp(u[:, 0]), np.exp(u[:, 1])))
        return TraceDataset(tuple(flows))
