"""Synthetic flow generation: HMM state path, then per-packet MDN draws mapped back to raw units."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import mdn as mdn_mod
from .hmm import HmmParams, sample_state_path
from .preprocess import ClipConfig, Normalizer, flow_length_feature, inverse_transform
from .errors import DataError
from .trace_io import Flow, TraceDataset


@dataclass(frozen=True)
class GenerationConfig:
    idle_temperature: float = 1.2
    clip: ClipConfig = field(default_factory=ClipConfig)
    seed: int = 0

    def __post_init__(self):
        if not self.idle_temperature > 0:
            raise ValueError("idle_temperature must be positive")


def flow_rng(seed: int, flow_id: str) -> np.random.Generator:
    """Per-flow stream keyed on (seed, flow id); independent of generation order."""
    digest = hashlib.blake2b(str(flow_id).encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, int.from_bytes(digest, "little")])


def generate_flow(
    hmm: HmmParams,
    mdn_params: mdn_mod.MdnParams,
    mdn_config: mdn_mod.MdnConfig,
    norm: Normalizer,
    flow_id: str,
    length: int,
    cfg: GenerationConfig = GenerationConfig(),
    rng: np.random.Generator | None = None,
) -> Flow:
    if length < 1:
        raise ValueError("length must be >= 1")
    if mdn_config.num_states != hmm.K:
        raise DataError(f"MDN expects {mdn_config.num_states} states, HMM has {hmm.K}")
    rng = flow_rng(cfg.seed, flow_id) if rng is None else rng
    path = sample_state_path(hmm, length, rng)
    xi = flow_length_feature(norm, length)
    z = np.empty((length, 2))
    for k in np.unique(path):
        pos = np.flatnonzero(path == k)
        out = mdn_mod.forward(mdn_params, mdn_mod.conditioning_vector(k, xi, hmm.K), mdn_config)
        z[pos] = mdn_mod.sample(out, rng, cfg.idle_temperature, is_idle_state=(k == hmm.idle_state), size=len(pos))
    clip_norm = norm if cfg.clip == norm.clip else replace(norm, clip=cfg.clip)
    payload, iat = inverse_transform(clip_norm, z)
    return Flow(flow_id, payload, iat)


def generate_dataset(
    hmm: HmmParams,
    mdn_params: mdn_mod.MdnParams,
    mdn_config: mdn_mod.MdnConfig,
    norm: Normalizer,
    test: TraceDataset,
    cfg: GenerationConfig = GenerationConfig(),
) -> TraceDataset:
    """One synthetic flow per test flow, with the same id and packet count."""
    if len(test) == 0:
        raise DataError("no test flows to pair with")
    return TraceDataset(tuple(
        generate_flow(hmm, mdn_params, mdn_config, norm, f.id, len(f), cfg) for f in test
    ))
