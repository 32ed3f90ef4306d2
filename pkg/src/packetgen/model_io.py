"""Single-file model persistence.

Layout: an ASCII header of ``key = value`` lines (hyperparameters and
normalizer fields as exact decimal text), one ``section`` line per binary
array, the line ``end_header``, then the arrays back to back in section
order.  HMM arrays are little-endian float64 so their stochastic constraints
survive exactly; MDN arrays are little-endian float32 in layer order
W1, b1, W2, b2, W3, b3 (row-major).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import ModelFormatError
from .hmm import HmmParams
from .mdn import LAYER_ORDER, MdnConfig, MdnParams
from .preprocess import ClipConfig, Normalizer
from .synth import GenerationConfig

MAGIC = "packetgen-model"
FORMAT_VERSION = 1
HMM_DTYPE = "<f8"
MDN_DTYPE = "<f4"


@dataclass
class ModelBundle:
    normalizer: Normalizer
    hmm: HmmParams
    mdn: MdnParams
    mdn_config: MdnConfig
    generation: GenerationConfig
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        if self.mdn_config.num_states != self.hmm.K:
            raise ModelFormatError(
                f"MDN input expects {self.mdn_config.num_states} states but the HMM has {self.hmm.K}"
            )
        if self.mdn.n_params != self.mdn_config.n_params:
            raise ModelFormatError("MDN weights do not match the MDN configuration")

    @property
    def mdn_payload_bytes(self) -> int:
        return self.mdn_config.n_params * np.dtype(MDN_DTYPE).itemsize


def quantize_mdn(params: MdnParams) -> MdnParams:
    """Round weights to float32 so the stored model equals the in-memory one."""
    return MdnParams(*(a.astype(np.float32).astype(np.float64) for a in params.arrays()))


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _sections(bundle: ModelBundle):
    h = bundle.hmm
    yield "hmm.alpha", HMM_DTYPE, h.alpha
    yield "hmm.A", HMM_DTYPE, h.A
    yield "hmm.mu", HMM_DTYPE, h.mu
    yield "hmm.sigma", HMM_DTYPE, h.sigma
    for name in LAYER_ORDER:
        yield f"mdn.{name}", MDN_DTYPE, getattr(bundle.mdn, name)


def dumps(bundle: ModelBundle) -> bytes:
    n, c, g = bundle.normalizer, bundle.mdn_config, bundle.generation
    header = {
        "format_version": bundle.format_version,
        "num_states": bundle.hmm.K,
        "idle_active": bundle.hmm.idle_active,
        "n_components": c.n_components,
        "hidden": c.hidden,
        "sigma_floor": c.sigma_floor,
        "nu_floor": c.nu_floor,
        "norm.m": " ".join(_fmt(v) for v in n.m),
        "norm.r": " ".join(_fmt(v) for v in n.r),
        "norm.tail_log_threshold": n.tail_log_threshold,
        "norm.tail_norm_threshold": n.tail_norm_threshold,
        "norm.flow_len_mean": n.flow_len_mean,
        "norm.flow_len_std": n.flow_len_std,
        "clip.payload_min": n.clip.payload_min,
        "clip.payload_max": n.clip.payload_max,
        "clip.iat_min": n.clip.iat_min,
        "clip.iat_max": n.clip.iat_max,
        "gen.idle_temperature": g.idle_temperature,
        "gen.seed": g.seed,
    }
    lines = [MAGIC]
    lines += [f"{k} = {v if isinstance(v, str) else _fmt(v)}" for k, v in header.items()]
    blobs = []
    for name, dtype, arr in _sections(bundle):
        data = np.ascontiguousarray(arr, dtype=dtype)
        lines.append(f"section {name} {dtype} {' '.join(str(s) for s in np.shape(arr)) or '-'}")
        blobs.append(data.tobytes())
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii") + b"".join(blobs)


def save(bundle: ModelBundle, path) -> int:
    data = dumps(bundle)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def loads(data: bytes) -> ModelBundle:
    stream = io.BytesIO(data)
    first = stream.readline().decode("ascii", "replace").strip()
    if first != MAGIC:
        raise ModelFormatError("not a packetgen model file")
    header: dict[str, str] = {}
    sections = []
    while True:
        raw = stream.readline()
        if not raw:
            raise ModelFormatError("truncated header")
        line = raw.decode("ascii").strip()
        if line == "end_header":
            break
        if line.startswith("section "):
            _, name, dtype, shape = line.split(" ", 3)
            dims = () if shape == "-" else tuple(int(s) for s in shape.split())
            sections.append((name, dtype, dims))
        else:
            key, value = (s.strip() for s in line.split("=", 1))
            header[key] = value

    version = int(header.get("format_version", "-1"))
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version} (expected {FORMAT_VERSION})")

    arrays = {}
    for name, dtype, dims in sections:
        count = math.prod(dims)
        nbytes = count * np.dtype(dtype).itemsize
        buf = stream.read(nbytes)
        if len(buf) != nbytes:
            raise ModelFormatError(f"truncated section {name}")
        arrays[name] = np.frombuffer(buf, dtype=dtype).astype(np.float64).reshape(dims)
    if stream.read(1):
        raise ModelFormatError("trailing bytes after the last section")

    f = lambda k: float(header[k])  # noqa: E731
    try:
        clip = ClipConfig(f("clip.payload_min"), f("clip.payload_max"), f("clip.iat_min"), f("clip.iat_max"))
        norm = Normalizer(
            m=np.array([float(v) for v in header["norm.m"].split()]),
            r=np.array([float(v) for v in header["norm.r"].split()]),
            tail_log_threshold=f("norm.tail_log_threshold"),
            tail_norm_threshold=f("norm.tail_norm_threshold"),
            flow_len_mean=f("norm.flow_len_mean"),
            flow_len_std=f("norm.flow_len_std"),
            clip=clip,
        )
        hmm = HmmParams(
            alpha=arrays["hmm.alpha"], A=arrays["hmm.A"], mu=arrays["hmm.mu"], sigma=arrays["hmm.sigma"],
            idle_active=bool(int(header["idle_active"])),
        )
        cfg = MdnConfig(
            num_states=int(header["num_states"]), n_components=int(header["n_components"]),
            hidden=int(header["hidden"]), sigma_floor=f("sigma_floor"), nu_floor=f("nu_floor"),
        )
        mdn = MdnParams(**{n: arrays[f"mdn.{n}"] for n in LAYER_ORDER})
        gen = GenerationConfig(f("gen.idle_temperature"), clip, int(header["gen.seed"]))
    except KeyError as exc:
        raise ModelFormatError(f"missing model field {exc}") from None
    return ModelBundle(norm, hmm, mdn, cfg, gen, version)


def load(path) -> ModelBundle:
    with open(path, "rb") as fh:
        return loads(fh.read())
