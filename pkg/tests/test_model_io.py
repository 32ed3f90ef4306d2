import math

import numpy as np
import pytest

from packetgen.errors import ModelFormatError
from packetgen.hmm import HmmParams
from packetgen.mdn import MdnConfig, init_params
from packetgen.model_io import FORMAT_VERSION, ModelBundle, dumps, load, loads, quantize_mdn, save
from packetgen.preprocess import ClipConfig, Normalizer
from packetgen.synth import GenerationConfig


def make_bundle(K=3, M=4, H=6, seed=0):
    rng = np.random.default_rng(seed)
    hmm = HmmParams(rng.dirichlet(np.ones(K)), rng.dirichlet(np.ones(K), K), rng.normal(size=(K, 2)),
                    rng.uniform(0.1, 2, (K, 2)), idle_active=True)
    cfg = MdnConfig(num_states=K, n_components=M, hidden=H)
    clip = ClipConfig(1.0, 1500.0, 1e-7, 3600.0)
    norm = Normalizer.from_moments([5.1, -3.3], [1.2, 2.1], 4.5, math.log(30), 0.9, clip)
    return ModelBundle(norm, hmm, quantize_mdn(init_params(cfg, seed)), cfg, GenerationConfig(1.3, clip, 42))


def assert_bundles_equal(a: ModelBundle, b: ModelBundle):
    for x, y in zip((a.hmm.alpha, a.hmm.A, a.hmm.mu, a.hmm.sigma), (b.hmm.alpha, b.hmm.A, b.hmm.mu, b.hmm.sigma)):
        np.testing.assert_array_equal(x, y)
    assert a.hmm.idle_active == b.hmm.idle_active
    for x, y in zip(a.mdn.arrays(), b.mdn.arrays()):
        np.testing.assert_array_equal(x, y)
    assert a.mdn_config == b.mdn_config
    assert a.generation == b.generation
    na, nb = a.normalizer, b.normalizer
    np.testing.assert_array_equal(na.m, nb.m)
    np.testing.assert_array_equal(na.r, nb.r)
    assert (na.tail_log_threshold, na.tail_norm_threshold, na.flow_len_mean, na.flow_len_std, na.clip) == \
        (nb.tail_log_threshold, nb.tail_norm_threshold, nb.flow_len_mean, nb.flow_len_std, nb.clip)


def test_round_trip_is_exact(tmp_path):
    b = make_bundle()
    path = tmp_path / "m.pgm"
    size = save(b, path)
    assert size == path.stat().st_size
    assert_bundles_equal(b, load(path))
    assert dumps(load(path)) == dumps(b)


def test_stochasticity_survives_serialization():
    b = loads(dumps(make_bundle()))
    assert abs(b.hmm.alpha.sum() - 1) <= 1e-9
    np.testing.assert_allclose(b.hmm.A.sum(axis=1), 1, atol=1e-9)


def test_reference_architecture_payload_size():
    b = make_bundle(K=4, M=32, H=128)
    assert b.mdn_config.n_params == 42048
    assert b.mdn_payload_bytes == 168192
    assert len(dumps(b)) > 168192


def test_wrong_version_rejected():
    data = dumps(make_bundle())
    bad = data.replace(f"format_version = {FORMAT_VERSION}".encode(), b"format_version = 99", 1)
    assert bad != data
    with pytest.raises(ModelFormatError, match="version 99"):
        loads(bad)


@pytest.mark.parametrize("mangle", [
    lambda d: d[:-3],
    lambda d: d + b"\x00",
    lambda d: b"garbage\n" + d,
    lambda d: d[: d.index(b"end_header")],
])
def test_corrupt_files_rejected(mangle):
    with pytest.raises(ModelFormatError):
        loads(mangle(dumps(make_bundle())))


def test_inconsistent_state_count_rejected():
    b = make_bundle(K=3)
    with pytest.raises(ModelFormatError):
        ModelBundle(b.normalizer, b.hmm, init_params(MdnConfig(2, 4, 6)), MdnConfig(2, 4, 6), b.generation)
