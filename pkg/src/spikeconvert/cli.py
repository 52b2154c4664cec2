"""Command-line front end for calibration, conversion, runs, and reports.

Exit codes are a stable contract: 0 on success, 2 for usage or input
problems (unknown targets, unreadable or malformed files, bad shapes), 3
when the spike path itself produces a non-finite value. Reports carry no
timestamps and are byte-identical across reruns with the same flags and
seeds. The LAS_SEED environment variable overrides every seed in play.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .calibration import TARGETS, fit_target, sample_distribution
from .energy import E_AC, E_MAC
from .errors import CalibrationError, FormatError, SpikePathError
from .model import (
    ConvertedBlock,
    ModelConfig,
    WeightSet,
    convert,
    dump_json,
    load_block,
    load_config,
    load_weights,
    save_block,
    save_config,
    save_weights,
    spike_forward,
)
from .tensors import Matrix

_INPUT_TENSOR = "input"


def _seed_override() -> int | None:
    raw = os.environ.get("LAS_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"LAS_SEED must be an integer, got {raw!r}")


def _apply_seed_override(cfg: ModelConfig) -> ModelConfig:
    base = _seed_override()
    if base is None:
        return cfg
    import dataclasses

    return dataclasses.replace(
        cfg, seeds={"weights": base, "calibration": base + 1, "input": base + 2}
    )


def _load_input(path: str) -> Matrix:
    ws = load_weights(path)
    if _INPUT_TENSOR not in ws:
        raise FormatError(
            f"{path!r} holds tensors {ws.names}, expected one named "
            f"{_INPUT_TENSOR!r}"
        )
    return ws[_INPUT_TENSOR]


def _run_block(args) -> tuple[ConvertedBlock, Matrix, int]:
    block = load_block(args.block)
    x = _load_input(args.input)
    steps = args.steps if args.steps is not None else block.config.T
    return block, x, steps


def cmd_calibrate(args) -> int:
    if args.samples < 64:
        raise ValueError(f"--samples must be at least 64, got {args.samples}")
    seed = _seed_override()
    if seed is None:
        seed = args.seed
    lo, hi = (None, None) if args.range is None else args.range
    _, report = fit_target(
        args.target, args.levels, args.steps, args.samples, seed, lo=lo, hi=hi
    )
    dump_json(report.to_dict(), args.out)
    print(
        f"fitted {args.target} on [{report.boundaries[0]:.6g}, "
        f"{report.boundaries[-1]:.6g}] with {args.levels} sub-ranges: "
        f"max abs err {report.max_abs_err:.6g} -> {args.out}"
    )
    return 0


def cmd_convert(args) -> int:
    cfg = _apply_seed_override(load_config(args.config))
    weights = load_weights(args.weights)
    dist = args.calib_dist if args.calib_dist is not None else cfg.calib_distribution
    rng = np.random.default_rng(int(cfg.seeds["calibration"]))
    sample = sample_distribution(dist, rows=cfg.seq_len * 32, cols=cfg.d_model, rng=rng)
    block = convert(cfg, weights, sample)
    save_block(block, args.out)
    worst = max(r.max_abs_err for r in block.reports.values())
    print(
        f"converted {cfg.n_layers}-layer block ({len(block.oat)} encoder sites, "
        f"{len(block.hg)} gate sites, worst gate err {worst:.6g}) -> {args.out}"
    )
    return 0


def _run_report(block: ConvertedBlock, trace, steps: int) -> dict:
    return {
        "tool_version": __version__,
        "config": block.config.to_dict(),
        "seed": dict(block.config.seeds),
        "steps": steps,
        "output_rel_err": trace.output_rel_err,
        "per_layer": dict(sorted(trace.per_layer.items())),
        "counters": dict(sorted(trace.counters.items())),
        "ledger": trace.ledger.to_dict(),
        "calibration": {
            site: {"target": r.target, "max_abs_err": r.max_abs_err}
            for site, r in sorted(block.reports.items())
        },
    }


def cmd_run(args) -> int:
    block, x, steps = _run_block(args)
    _, trace = spike_forward(block, x, T=steps)
    if args.report is not None:
        dump_json(_run_report(block, trace, steps), args.report)
    ratio = trace.ledger.to_dict()["ratio"]
    print(
        f"T={steps} output_rel_err={trace.output_rel_err:.6g} "
        f"sops={trace.ledger.sops} ratio={ratio:.6g}"
    )
    return 0


def cmd_compare(args) -> int:
    block, x, steps = _run_block(args)
    _, trace = spike_forward(block, x, T=steps)
    print(f"{'site':<32} {'mean_abs_dev':>16}")
    for site, dev in sorted(trace.per_layer.items()):
        print(f"{site:<32} {dev:>16.6g}")
    print(f"{'output_rel_err':<32} {trace.output_rel_err:>16.6g}")
    return 0


def cmd_sweep(args) -> int:
    block = load_block(args.block)
    x = _load_input(args.input)
    steps_list = [int(s) for s in args.steps_list.split(",") if s.strip()]
    if not steps_list:
        raise ValueError("--steps-list must name at least one timestep")
    lines = ["timestep,mean_rel_err,sops,ratio"]
    for T in steps_list:
        _, trace = spike_forward(block, x, T=T)
        ratio = (trace.ledger.sops * E_AC) / (trace.ledger.flops * E_MAC)
        lines.append(f"{T},{trace.output_rel_err!r},{trace.ledger.sops},{ratio!r}")
    text = "\n".join(lines) + "\n"
    if args.out is not None:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return 0


def cmd_energy(args) -> int:
    with open(args.report, encoding="utf-8") as fh:
        doc = json.load(fh)
    ledger = doc.get("ledger")
    if not ledger or not ledger.get("flops"):
        raise ValueError(
            f"report {args.report!r} records no float-path FLOPs; "
            "the energy ratio is undefined"
        )
    sops = int(ledger["sops"])
    flops = int(ledger["flops"])
    ratio = (sops * E_AC) / (flops * E_MAC)
    print(f"SOPs={sops} FLOPs={flops} E_AC={E_AC} E_MAC={E_MAC} ratio={ratio:.6g}")
    return 0


def cmd_init(args) -> int:
    seeds = {"weights": args.seed, "calibration": args.seed + 1, "input": args.seed + 2}
    cfg = ModelConfig(
        ffn_kind="gated" if args.gated else "standard",
        n_layers=args.layers,
        seeds=seeds,
    )
    cfg = _apply_seed_override(cfg)
    save_config(cfg, args.config_out)
    save_weights(WeightSet.random(cfg, int(cfg.seeds["weights"])), args.weights_out)
    rng = np.random.default_rng(int(cfg.seeds["input"]))
    x = Matrix(rng.standard_normal((cfg.seq_len, cfg.d_model)))
    save_weights(WeightSet({_INPUT_TENSOR: x}), args.input_out)
    print(f"wrote {args.config_out}, {args.weights_out}, {args.input_out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="spikeconvert",
        description="Convert a float transformer block to spike dynamics and "
        "measure fidelity, timestep scaling, and energy.",
    )
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="fit one nonlinearity and write its report")
    c.add_argument("--target", required=True, choices=sorted(TARGETS))
    c.add_argument("--range", nargs=2, type=float, metavar=("LO", "HI"))
    c.add_argument("--levels", type=int, default=8, help="sub-range count N")
    c.add_argument("--steps", type=int, default=16)
    c.add_argument("--samples", type=int, default=4096, help="training samples M")
    c.add_argument("--seed", type=int, default=7)
    c.add_argument("--out", required=True)
    c.set_defaults(fn=cmd_calibrate)

    c = sub.add_parser("convert", help="calibrate a block from config + weights")
    c.add_argument("--config", required=True)
    c.add_argument("--weights", required=True)
    c.add_argument("--calib-dist", choices=("normal", "uniform", "normal_outliers",
                                            "uniform_outliers"))
    c.add_argument("--out", required=True)
    c.set_defaults(fn=cmd_convert)

    c = sub.add_parser("run", help="spike-run a converted block on an input")
    c.add_argument("--block", required=True)
    c.add_argument("--input", required=True)
    c.add_argument("--steps", type=int)
    c.add_argument("--report")
    c.set_defaults(fn=cmd_run)

    c = sub.add_parser("compare", help="print the float-vs-spike error table")
    c.add_argument("--block", required=True)
    c.add_argument("--input", required=True)
    c.add_argument("--steps", type=int)
    c.set_defaults(fn=cmd_compare)

    c = sub.add_parser("sweep", help="emit timestep-sweep CSV")
    c.add_argument("--block", required=True)
    c.add_argument("--input", required=True)
    c.add_argument("--steps-list", default="4,8,10,13,16")
    c.add_argument("--out")
    c.set_defaults(fn=cmd_sweep)

    c = sub.add_parser("energy", help="print the energy ratio from a run report")
    c.add_argument("--report", required=True)
    c.set_defaults(fn=cmd_energy)

    c = sub.add_parser("init", help="write a toy config, weights, and input")
    c.add_argument("--config-out", default="toy_config.json")
    c.add_argument("--weights-out", default="toy_weights.lasw")
    c.add_argument("--input-out", default="toy_input.lasw")
    c.add_argument("--gated", action="store_true")
    c.add_argument("--layers", type=int, default=1)
    c.add_argument("--seed", type=int, default=11)
    c.set_defaults(fn=cmd_init)
    return p


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except SpikePathError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (CalibrationError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
