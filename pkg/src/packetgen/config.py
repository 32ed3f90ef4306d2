"""Flat key-value pipeline configuration.

Config files hold one ``key = value`` pair per line; ``#`` starts a comment.
Every key is a field of :class:`PipelineConfig`.  Command-line flags
override file values, which override the defaults below.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from .errors import DataError
from .hmm import HmmPriors
from .mdn import MdnConfig, OptimizerConfig
from .preprocess import ClipConfig
from .synth import GenerationConfig


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    test_fraction: float = 0.2
    tail_quantile: float = 0.998
    # clipping
    payload_min: float = 1.0
    payload_max: float = 65535.0
    iat_min: float = 1e-7
    iat_max: float = 3600.0
    # HMM
    k_core: int = 3
    # must stay below 1 - tail_quantile, otherwise the idle rule can never fire
    theta_tail: float = 0.001
    eps0: float = 1e-4
    chi: float = 4.0
    lambda_self: float = 2.0
    lambda_off: float = 0.5
    lambda_idle: float = 10.0
    lambda_leak: float = 0.1
    em_max_iters: int = 100
    em_rel_tol: float = 1e-5
    # MDN
    n_components: int = 32
    hidden: int = 128
    sigma_floor: float = 1e-3
    nu_floor: float = 1.01
    gamma_min_core: float = 0.1
    gamma_min_idle: float = 0.01
    learning_rate: float = 1e-3
    batch_size: int = 512
    epochs: int = 200
    patience: int = 10
    # generation
    idle_temperature: float = 1.2
    # E-step thread count; forced to 1 by --strict-sequential
    workers: int = 1

    def clip(self) -> ClipConfig:
        return ClipConfig(self.payload_min, self.payload_max, self.iat_min, self.iat_max)

    def priors(self) -> HmmPriors:
        return HmmPriors(self.lambda_self, self.lambda_off, self.lambda_idle, self.lambda_leak)

    def mdn_config(self, num_states: int) -> MdnConfig:
        return MdnConfig(num_states, self.n_components, self.hidden, self.sigma_floor, self.nu_floor)

    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(
            learning_rate=self.learning_rate, batch_size=self.batch_size,
            epochs=self.epochs, patience=self.patience,
        )

    def generation(self) -> GenerationConfig:
        return GenerationConfig(self.idle_temperature, self.clip(), self.seed)

    def with_overrides(self, **overrides) -> "PipelineConfig":
        known = {f.name: f for f in fields(self)}
        clean = {}
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in known:
                raise DataError(f"unknown config key {key!r}")
            clean[key] = _coerce(key, value, known[key].type)
        return dataclasses.replace(self, **clean)


def _coerce(key: str, value, type_name) -> int | float:
    kind = type_name if isinstance(type_name, str) else type_name.__name__
    try:
        if kind == "int":
            if isinstance(value, str):
                f = float(value)
                if f != int(f):
                    raise ValueError
                return int(f)
            return int(value)
        return float(value)
    except (TypeError, ValueError):
        raise DataError(f"config key {key!r}: cannot interpret {value!r} as {kind}") from None


def parse_config_text(text: str) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    return values


def load_config(path: str | None, base: PipelineConfig = PipelineConfig()) -> PipelineConfig:
    if path is None:
        return base
    with open(path, encoding="utf-8") as fh:
        return base.with_overrides(**parse_config_text(fh.read()))


def dump_config(cfg: PipelineConfig) -> str:
    return "".join(f"{f.name} = {getattr(cfg, f.name)!r}\n" for f in fields(cfg))
