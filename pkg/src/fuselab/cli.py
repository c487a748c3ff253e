"""Batch command-line front end: simulate -> softmask -> fuse -> eval.

Every command resolves its options (CLI flags win over the optional
``--config`` JSON file, which wins over built-in defaults), writes its
outputs into a directory, and drops a ``manifest.json`` beside them with
the fully resolved configuration so any run can be reproduced exactly.

Exit codes: 0 success, 2 invalid arguments or configuration, 3 invalid
input data, 4 numerical failure. Machine-readable output goes to stdout
or files; human logs go to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .errors import (
    CapacityError,
    ConfigError,
    DegeneratePosteriorError,
    FuselabError,
    GridError,
    StackError,
    SvolError,
)
from .metrics import precision_recall
from .soft_staple import ENUMERATION_GUARD, run_soft_em
from .softmask import SoftMaskConfig, build_soft_stack
from .staple import FusionConfig, binarize, run_em
from .svol_io import read_svol, write_svol
from .synth import generate_phantom, load_simulation_config, simulate_raters
from .volume import ExpertStack, GridKind, validate_stack

_FUSE_DEFAULTS = {
    "variant": "binary",
    "prior": "auto",
    "init_sens": 0.9,
    "init_spec": 0.9,
    "max_iters": 100,
    "tol": 1e-6,
    "mstep_mode": "expected-count",
    "mc_samples": 10000,
    "seed": 0,
    "binarize": False,
    "gamma": 0.3,
    "ratio": 1.2,
    "threshold_mode": "percentile:10",
    "connectivity": 26,
    "max_dilation_iters": 10,
    "threads": 1,
    "force": False,
}

_SOFTMASK_DEFAULTS = {
    "gamma": 0.3,
    "ratio": 1.2,
    "threshold_mode": "percentile:10",
    "connectivity": 26,
    "max_dilation_iters": 10,
    "threads": 1,
    "force": False,
}

_SIMULATE_DEFAULTS = {"seed": None, "threads": 1, "force": False}

_EVAL_DEFAULTS = {"threshold": 0.5, "binarize_truth": False, "threads": 1, "force": False}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.handler(args)
    except (ConfigError, CapacityError) as exc:
        print(f"fuselab: {exc}", file=sys.stderr)
        return 2
    except DegeneratePosteriorError as exc:
        print(f"fuselab: numerical failure: {exc}", file=sys.stderr)
        return 4
    except (SvolError, GridError, StackError) as exc:
        print(f"fuselab: invalid input: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"fuselab: missing input: {exc}", file=sys.stderr)
        return 3
    except FuselabError as exc:
        print(f"fuselab: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fuselab",
        description="Multi-rater label fusion: simulate, softmask, fuse, eval.",
    )
    parser.add_argument("--version", action="version", version=f"fuselab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    fuse = sub.add_parser("fuse", help="fuse expert masks into a consensus")
    fuse.add_argument("inputs", nargs="+", help="expert SVOL files (all binary or all soft)")
    fuse.add_argument("-o", "--out", required=True, help="output directory")
    fuse.add_argument("--variant", choices=["binary", "soft-exact", "soft-mc", "simplified"])
    fuse.add_argument("--prior", help="foreground prior in (0,1), or 'auto'")
    fuse.add_argument("--init-sens", type=float, dest="init_sens")
    fuse.add_argument("--init-spec", type=float, dest="init_spec")
    fuse.add_argument("--max-iters", type=int, dest="max_iters")
    fuse.add_argument("--tol", type=float)
    fuse.add_argument("--mstep-mode", choices=["expected-count", "plugin-mean"], dest="mstep_mode")
    fuse.add_argument("--mc-samples", type=int, dest="mc_samples")
    fuse.add_argument("--binarize", action="store_const", const=True, default=None,
                      help="also write the thresholded consensus mask")
    fuse.add_argument("--flair", help="intensity SVOL; lets binary inputs feed the "
                                      "soft variants via the soft-mask protocol")
    fuse.add_argument("--gamma", type=float, help="soft label for the auto-softmask path")
    fuse.add_argument("--ratio", type=float, help="volume ratio for the auto-softmask path")
    fuse.add_argument("--threshold-mode", dest="threshold_mode",
                      help="'percentile:P' or 'fixed:V' for the auto-softmask path")
    fuse.add_argument("--connectivity", type=int, choices=[6, 18, 26])
    fuse.add_argument("--max-dilation-iters", type=int, dest="max_dilation_iters")
    _common_flags(fuse)
    fuse.set_defaults(handler=_cmd_fuse)

    soft = sub.add_parser("softmask", help="turn binary masks into soft masks")
    soft.add_argument("inputs", nargs="+", help="binary expert SVOL files")
    soft.add_argument("--flair", required=True, help="intensity SVOL gating the dilation")
    soft.add_argument("-o", "--out", required=True, help="output directory")
    soft.add_argument("--gamma", type=float)
    soft.add_argument("--ratio", type=float)
    soft.add_argument("--threshold-mode", dest="threshold_mode",
                      help="'percentile:P' or 'fixed:V'")
    soft.add_argument("--connectivity", type=int, choices=[6, 18, 26])
    soft.add_argument("--max-dilation-iters", type=int, dest="max_dilation_iters")
    _common_flags(soft)
    soft.set_defaults(handler=_cmd_softmask)

    sim = sub.add_parser("simulate", help="generate a phantom plus simulated raters")
    sim.add_argument("spec", help="JSON simulation config")
    sim.add_argument("-o", "--out", required=True, help="output directory")
    _common_flags(sim)
    sim.set_defaults(handler=_cmd_simulate)

    ev = sub.add_parser("eval", help="score a prediction against a truth mask")
    ev.add_argument("truth", help="truth SVOL")
    ev.add_argument("pred", help="prediction SVOL")
    ev.add_argument("--threshold", type=float)
    ev.add_argument("--binarize-truth", action="store_const", const=True, default=None,
                    dest="binarize_truth", help="threshold a soft truth as well")
    ev.add_argument("-o", "--out", help="optional directory for report.json + manifest")
    _common_flags(ev)
    ev.set_defaults(handler=_cmd_eval)
    return parser


def _common_flags(cmd: argparse.ArgumentParser) -> None:
    cmd.add_argument("--threads", type=int, help="worker cap, recorded in the manifest")
    cmd.add_argument("--seed", type=int, help="run seed where the command uses one")
    cmd.add_argument("--force", action="store_const", const=True, default=None,
                     help="allow overwriting existing output files")
    cmd.add_argument("--config", help="JSON file with flag defaults (flags win)")


def _resolve(args, defaults: dict) -> dict:
    """Materialize every option: CLI flag, else config-file value, else default."""
    file_cfg = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                file_cfg = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"--config is not valid JSON: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError("--config must hold a JSON object")
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise ConfigError(f"--config has unknown key(s): {sorted(unknown)}")
    resolved = {}
    for key, default in defaults.items():
        cli_value = getattr(args, key, None)
        resolved[key] = cli_value if cli_value is not None else file_cfg.get(key, default)
    if resolved["threads"] is not None and resolved["threads"] < 1:
        raise ConfigError(f"--threads must be >= 1, got {resolved['threads']}")
    return resolved


def _parse_threshold_mode(text: str) -> tuple[str, float]:
    kind, sep, value = str(text).partition(":")
    if kind not in ("percentile", "fixed") or not sep:
        raise ConfigError(
            f"threshold mode must look like 'percentile:P' or 'fixed:V', got {text!r}"
        )
    try:
        return kind, float(value)
    except ValueError as exc:
        raise ConfigError(f"bad threshold value in {text!r}") from exc


def _parse_prior(text) -> float | str:
    if text == "auto":
        return "auto"
    try:
        return float(text)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"prior must be a number or 'auto', got {text!r}") from exc


def _load_stack(paths) -> ExpertStack:
    grids = [read_svol(p) for p in paths]
    ids = [Path(p).stem for p in paths]
    if len(set(ids)) != len(ids):
        ids = [str(p) for p in paths]
    stack = ExpertStack(tuple(grids), tuple(ids))
    validate_stack(stack)
    return stack


def _prepare_outdir(out, filenames, inputs, force: bool) -> list[Path]:
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    input_paths = {os.path.realpath(p) for p in inputs}
    targets = []
    for name in filenames:
        target = outdir / name
        if os.path.realpath(target) in input_paths:
            raise ConfigError(f"refusing to overwrite input file {target}")
        if target.exists() and not force:
            raise ConfigError(f"output {target} exists; pass --force to overwrite")
        targets.append(target)
    return targets


def _write_json(path: Path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(path: Path, command: str, resolved: dict, inputs, outputs,
                    started: float) -> None:
    _write_json(
        path,
        {
            "command": command,
            "config": resolved,
            "inputs": [str(p) for p in inputs],
            "outputs": [str(p) for p in outputs],
            "version": __version__,
            "duration_s": time.perf_counter() - started,
        },
    )


def _softmask_config(resolved: dict) -> SoftMaskConfig:
    mode, value = _parse_threshold_mode(resolved["threshold_mode"])
    cfg = SoftMaskConfig(
        gamma=resolved["gamma"],
        target_volume_ratio=resolved["ratio"],
        threshold_mode=mode,
        threshold_value=value,
        connectivity=resolved["connectivity"],
        max_dilation_iters=resolved["max_dilation_iters"],
    )
    cfg.validate()
    return cfg


def _cmd_fuse(args) -> int:
    started = time.perf_counter()
    resolved = _resolve(args, _FUSE_DEFAULTS)
    resolved["prior"] = _parse_prior(resolved["prior"])
    config = FusionConfig(
        prior=resolved["prior"],
        init_sens=resolved["init_sens"],
        init_spec=resolved["init_spec"],
        max_iters=resolved["max_iters"],
        tol=resolved["tol"],
        variant=resolved["variant"],
        mstep_mode=resolved["mstep_mode"],
        mc_samples=resolved["mc_samples"],
        mc_seed=resolved["seed"],
    )
    config.validate()
    if config.variant == "soft-exact" and len(args.inputs) > ENUMERATION_GUARD:
        raise ConfigError(
            f"{len(args.inputs)} experts exceed the exact-enumeration guard "
            f"({ENUMERATION_GUARD}); use --variant soft-mc"
        )

    stack = _load_stack(args.inputs)
    used_softmask = False
    if stack.kind is GridKind.BINARY and config.variant != "binary":
        if not args.flair:
            raise ConfigError(
                "binary inputs need --variant binary, or --flair to build "
                "soft masks for the soft variants"
            )
        flair = read_svol(args.flair)
        stack = build_soft_stack(stack, flair, _softmask_config(resolved))
        used_softmask = True
    elif stack.kind is GridKind.SOFT and config.variant == "binary":
        raise ConfigError("soft inputs cannot feed --variant binary; pick a soft variant")

    inputs = list(args.inputs) + ([args.flair] if args.flair and used_softmask else [])
    filenames = ["posterior.svol", "params.json", "manifest.json"]
    if resolved["binarize"]:
        filenames.insert(1, "consensus.svol")
    targets = _prepare_outdir(args.out, filenames, inputs, resolved["force"])
    by_name = dict(zip(filenames, targets))

    result = run_em(stack, config) if config.variant == "binary" else run_soft_em(stack, config)

    write_svol(result.posterior, by_name["posterior.svol"])
    if resolved["binarize"]:
        write_svol(binarize(result.posterior), by_name["consensus.svol"])
    _write_json(
        by_name["params.json"],
        {
            "variant": config.variant,
            "prior": result.prior,
            "expert_ids": list(stack.expert_ids),
            "sens": [float(v) for v in result.params.sens],
            "spec": [float(v) for v in result.params.spec],
            "ll_trace": [float(v) for v in result.ll_trace],
            "iters_run": result.iters_run,
            "converged": result.converged,
            "ll_is_approximate": result.ll_is_approximate,
        },
    )
    _write_manifest(by_name["manifest.json"], "fuse", resolved, inputs,
                    [t for t in targets if t.name != "manifest.json"], started)
    print(f"fuse: wrote {len(targets)} file(s) to {args.out}", file=sys.stderr)
    return 0


def _cmd_softmask(args) -> int:
    started = time.perf_counter()
    resolved = _resolve(args, _SOFTMASK_DEFAULTS)
    cfg = _softmask_config(resolved)
    stack = _load_stack(args.inputs)
    flair = read_svol(args.flair)

    filenames = [Path(p).name for p in args.inputs]
    if len(set(filenames)) != len(filenames):
        raise ConfigError("input basenames collide; rename inputs or split the run")
    inputs = list(args.inputs) + [args.flair]
    targets = _prepare_outdir(args.out, filenames + ["manifest.json"], inputs,
                              resolved["force"])

    soft = build_soft_stack(stack, flair, cfg)
    for grid, target in zip(soft.experts, targets):
        write_svol(grid, target)
    _write_manifest(targets[-1], "softmask", resolved, inputs, targets[:-1], started)
    print(f"softmask: wrote {len(filenames)} soft mask(s) to {args.out}", file=sys.stderr)
    return 0


def _cmd_simulate(args) -> int:
    started = time.perf_counter()
    resolved = _resolve(args, _SIMULATE_DEFAULTS)
    phantom_spec, rater_specs = load_simulation_config(args.spec)
    if resolved["seed"] is not None:
        shift = resolved["seed"] - phantom_spec.seed
        phantom_spec = replace(phantom_spec, seed=resolved["seed"])
        rater_specs = [replace(r, seed=r.seed + shift) for r in rater_specs]
    resolved["seed"] = phantom_spec.seed

    filenames = ["truth.svol", "flair.svol"] + [
        f"expert_{r.rater_id}.svol" for r in rater_specs
    ]
    targets = _prepare_outdir(args.out, filenames + ["manifest.json"], [args.spec],
                              resolved["force"])

    truth, flair = generate_phantom(phantom_spec)
    stack = simulate_raters(truth, rater_specs)
    write_svol(truth, targets[0])
    write_svol(flair, targets[1])
    for grid, target in zip(stack.experts, targets[2:-1]):
        write_svol(grid, target)
    _write_manifest(targets[-1], "simulate", resolved, [args.spec], targets[:-1], started)
    print(f"simulate: wrote {len(filenames)} volume(s) to {args.out}", file=sys.stderr)
    return 0


def _cmd_eval(args) -> int:
    started = time.perf_counter()
    resolved = _resolve(args, _EVAL_DEFAULTS)
    truth = read_svol(args.truth)
    pred = read_svol(args.pred)
    report = precision_recall(
        truth, pred,
        threshold=resolved["threshold"],
        binarize_truth=resolved["binarize_truth"],
    )
    print(report.to_json())
    if args.out:
        targets = _prepare_outdir(args.out, ["report.json", "manifest.json"],
                                  [args.truth, args.pred], resolved["force"])
        _write_json(targets[0], report.to_dict())
        _write_manifest(targets[1], "eval", resolved, [args.truth, args.pred],
                        [targets[0]], started)
    return 0


if __name__ == "__main__":
    sys.exit(main())
