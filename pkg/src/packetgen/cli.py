"""Command-line interface: ``packetgen {train,generate,evaluate,summarize}``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from . import evaluation, model_io
from .config import PipelineConfig, load_config
from .errors import NumericalError, PacketGenError
from .pipeline import StageError, stage, train_pipeline
from .synth import generate_dataset
from .trace_io import parse_trace, summarize, write_trace

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("packetgen")


def resolve_config(config_path: str | None, seed: int | None = None,
                   idle_temperature: float | None = None) -> PipelineConfig:
    """Defaults, then the config file, then explicit flags."""
    cfg = load_config(config_path)
    return cfg.with_overrides(seed=seed, idle_temperature=idle_temperature)


def cmd_train(args) -> int:
    cfg = resolve_config(args.config, args.seed, args.idle_temperature)
    with stage("parse"):
        dataset = parse_trace(args.trace)
    result = train_pipeline(dataset, cfg, strict_sequential=args.strict_sequential)
    out = args.out
    size = model_io.save(result.bundle, out)
    write_trace(result.test, out + ".test.csv")
    write_trace(result.train, out + ".train.csv")
    with open(out + ".log.json", "w") as fh:
        json.dump({"em_loglik": result.em_trace, "mdn_loss": result.mdn_trace}, fh, indent=1)
    b = result.bundle
    print(f"states: {b.hmm.K} (idle {'active' if b.hmm.idle_active else 'inactive'})")
    print(f"MDN trainable parameters: {b.mdn_config.n_params}")
    print(f"MDN float32 payload: {b.mdn_payload_bytes} bytes ({b.mdn_payload_bytes / 2**20:.3f} MiB)")
    print(f"model file: {out} ({size} bytes)")
    print(f"train/test flows: {len(result.train)}/{len(result.test)}; test split written to {out}.test.csv")
    return EXIT_OK


def cmd_generate(args) -> int:
    with stage("load_model"):
        bundle = model_io.load(args.model)
    gen = bundle.generation
    if args.config:
        file_cfg = load_config(args.config)
        gen = replace(gen, seed=file_cfg.seed, idle_temperature=file_cfg.idle_temperature)
    gen = replace(
        gen,
        seed=gen.seed if args.seed is None else args.seed,
        idle_temperature=gen.idle_temperature if args.idle_temperature is None else args.idle_temperature,
    )
    with stage("parse"):
        test = parse_trace(args.test_trace)
    with stage("generate"):
        synth = generate_dataset(bundle.hmm, bundle.mdn, bundle.mdn_config, bundle.normalizer, test, gen)
    write_trace(synth, args.out)
    print(f"wrote {len(synth)} flows / {synth.n_packets} packets to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    with stage("parse"):
        real = parse_trace(args.real)
        synth = parse_trace(args.synth)
    with stage("evaluate"):
        evaluation.check_paired(real, synth)
        report = evaluation.evaluate(real, synth)
    paths = evaluation.emit_report(report, args.out)
    for feat in evaluation.FEATURES:
        print(f"{feat:8s} ac_rmse={report.ac_rmse[feat]:.4f} wd={report.wd[feat]:.4f}")
    print("wrote " + ", ".join(paths))
    return EXIT_OK


def cmd_summarize(args) -> int:
    with stage("parse"):
        ds = parse_trace(args.trace)
    with stage("summarize"):
        stats = summarize(ds)
    lines = [f"{name},{value:.6g}" for name, value in stats.rows()]
    text = "statistic,value\n" + "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="packetgen", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True, out_help="output path"):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--config", default=None, help="key = value config file")
        sp.add_argument("--out", required=out_required, help=out_help)
        sp.add_argument("--idle-temperature", type=float, default=None)
        sp.add_argument("--strict-sequential", action="store_true",
                        help="disable all parallelism for bit-reproducible runs")

    sp = sub.add_parser("train", help="fit the HMM + MDN model to a trace")
    sp.add_argument("trace")
    common(sp, out_help="model file; the test split is written next to it")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("generate", help="synthesize flows paired to a test trace")
    sp.add_argument("model")
    sp.add_argument("test_trace")
    common(sp, out_help="synthetic trace CSV")
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("evaluate", help="fidelity report for real vs synthetic traces")
    sp.add_argument("real")
    sp.add_argument("synth")
    common(sp, out_help="report directory")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("summarize", help="dataset summary statistics")
    sp.add_argument("trace")
    common(sp, out_required=False, out_help="optional CSV output")
    sp.set_defaults(func=cmd_summarize)
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, (NumericalError, FloatingPointError, ArithmeticError)):
        return EXIT_NUMERIC
    return EXIT_DATA


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    if args.idle_temperature is not None and not args.idle_temperature > 0:
        parser.error("--idle-temperature must be positive")
    try:
        return args.func(args)
    except (PacketGenError, OSError, ValueError) as exc:
        print(f"packetgen {args.command}: error in {exc}" if isinstance(exc, StageError)
              else f"packetgen {args.command}: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
