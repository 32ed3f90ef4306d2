"""End-to-end training: split, normalize, fit the HMM, then the MDN on its posteriors."""

from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass

from . import hmm as hmm_mod
from . import mdn as mdn_mod
from .config import PipelineConfig
from .errors import PacketGenError
from .model_io import ModelBundle, quantize_mdn
from .preprocess import fit_normalizer, flow_length_feature, transform_dataset
from .trace_io import TraceDataset, split_by_flow

log = logging.getLogger(__name__)


class StageError(PacketGenError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage}: {cause}")


@contextlib.contextmanager
def stage(name: str):
    log.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


@dataclass
class TrainResult:
    bundle: ModelBundle
    train: TraceDataset
    test: TraceDataset
    em_trace: list[float]
    mdn_trace: list[float]


def fit_model(train: TraceDataset, cfg: PipelineConfig, strict_sequential: bool = False):
    """Fit normalizer, HMM and MDN on training flows; returns (bundle, em_trace, mdn_trace)."""
    workers = 1 if strict_sequential else cfg.workers
    with stage("fit_normalizer"):
        norm = fit_normalizer(train, cfg.clip(), cfg.tail_quantile)
        flows_z = transform_dataset(norm, train)
    with stage("init_hmm"):
        params = hmm_mod.init_hmm(
            flows_z, cfg.k_core, norm.tail_norm_threshold, cfg.theta_tail, cfg.eps0, cfg.chi,
            seed=cfg.seed, priors=cfg.priors(),
        )
    with stage("em_fit"):
        params, em_trace = hmm_mod.em_fit(
            params, flows_z, cfg.priors(), cfg.eps0, cfg.em_max_iters, cfg.em_rel_tol, workers=workers
        )
    with stage("posteriors"):
        posts = [hmm_mod.forward_backward(params, z) for z in flows_z]
    with stage("build_training_set"):
        xi = [flow_length_feature(norm, len(f)) for f in train]
        samples = mdn_mod.build_training_set(
            flows_z, posts, xi, params.K, params.idle_state, cfg.gamma_min_core, cfg.gamma_min_idle
        )
    mdn_cfg = cfg.mdn_config(params.K)
    with stage("train_mdn"):
        mdn_params, mdn_trace = mdn_mod.train_mdn(samples, mdn_cfg, cfg.optimizer(), seed=cfg.seed)
    bundle = ModelBundle(norm, params, quantize_mdn(mdn_params), mdn_cfg, cfg.generation())
    return bundle, em_trace, mdn_trace


def train_pipeline(dataset: TraceDataset, cfg: PipelineConfig, strict_sequential: bool = False) -> TrainResult:
    with stage("split"):
        train, test = split_by_flow(dataset, cfg.test_fraction, cfg.seed)
    bundle, em_trace, mdn_trace = fit_model(train, cfg, strict_sequential)
    return TrainResult(bundle, train, test, em_trace, mdn_trace)
