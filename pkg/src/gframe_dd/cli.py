"""Command-line interface.

Exit codes: 0 success, 2 invalid configuration (diagnostics carry file and
line), 3 numeric failure (the message names the module and operation).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .config import ENV_VAR, EXPERIMENT_KINDS, ConfigError, Config, load_config, parse_config
from .experiments import PIPELINES, NumericFailure

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
OVERRIDES = {"seed": "seed", "ntraj": "n_traj", "atten_db": "atten_db"}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def write_manifest(out: Path, cfg: Config, base: Config, kind: str, opts: dict, files: list[Path]) -> Path:
    """manifest.json is a pure function of inputs and outputs so reruns are
    byte-identical; the wall-clock time goes to run_info.json."""
    manifest = {
        "experiment": kind,
        "package_version": __version__,
        "config_sha256": base.digest,
        "experiment_sha256": cfg.digest,
        "seed": opts.get("seed"),
        "n_traj": opts.get("n_traj"),
        "options": _jsonable(opts),
        "versions": {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
                     "pyyaml": yaml.__version__},
        "outputs": {p.name: _sha256(p) for p in sorted(files)},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (out / "run_info.json").write_text(json.dumps({"utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
                                                   "argv": sys.argv[1:]}, indent=2) + "\n")
    return path


def run_experiment(cfg: Config, base: Config, out: str | None = None, seed: int | None = None,
                   ntraj: int | None = None, atten_db: float | None = None) -> list[Path]:
    if cfg.experiment is None:
        raise ConfigError([f"{cfg.source}:1: experiment: block is required to run"])
    kind = cfg.experiment.kind
    opts = dict(cfg.experiment.options)
    for flag, key in OVERRIDES.items():
        value = {"seed": seed, "ntraj": ntraj, "atten_db": atten_db}[flag]
        if value is None:
            continue
        if key not in opts:
            print(f"note: --{flag.replace('_', '-')} does not apply to {kind}", file=sys.stderr)
            continue
        opts[key] = value
    out_dir = Path(out or cfg.experiment.out or Path("out") / kind)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = PIPELINES[kind](cfg, opts, out_dir)
    write_manifest(out_dir, cfg, base, kind, opts, files)
    return files


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"device/noise/calibration config (default: ${ENV_VAR} or packaged)")
    runopts = argparse.ArgumentParser(add_help=False)
    runopts.add_argument("--out", help="output directory")
    runopts.add_argument("--seed", type=int, help="override the experiment seed")
    runopts.add_argument("--ntraj", type=int, help="override the number of noise trajectories")
    runopts.add_argument("--atten-db", type=float, help="override the attenuation on the noise line (dB)")
    ap = argparse.ArgumentParser(prog="gframe-dd", description="Dynamical decoupling in the two-qubit g-frame.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("validate", parents=[common], help="check a config and report problems with line numbers")
    p.add_argument("specs", nargs="*", help="experiment spec files to check against the config")
    p = sub.add_parser("run", parents=[common, runopts], help="run the experiment block of a spec file")
    p.add_argument("spec", help="YAML file with an experiment: block (other blocks override --config)")
    for kind in EXPERIMENT_KINDS:
        sub.add_parser(kind, parents=[common, runopts], help=f"run {kind} with default options")
    return ap


def _load_spec(path: Path, base: Config) -> Config:
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read spec: {exc.strerror}"]) from None
    return parse_config(text, str(path), base)


def _validate(args) -> int:
    status = EXIT_OK
    try:
        base = load_config(args.config)
    except ConfigError as exc:
        _report(exc)
        return EXIT_CONFIG
    checked = [base]
    for spec in args.specs:
        try:
            checked.append(_load_spec(Path(spec), base))
        except ConfigError as exc:
            _report(exc)
            status = EXIT_CONFIG
    for cfg in checked:
        for w in cfg.warnings:
            print(f"warning: {w}", file=sys.stderr)
        print(f"{cfg.source}: ok")
    return status


def _report(exc: ConfigError) -> None:
    for problem in exc.problems:
        print(f"error: {problem}", file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "validate":
        return _validate(args)
    try:
        base = load_config(args.config)
        if args.command == "run":
            cfg = _load_spec(Path(args.spec), base)
        else:
            cfg = parse_config(f"experiment:\n  kind: {args.command}\n", f"<{args.command}>", base)
        for w in cfg.warnings:
            print(f"warning: {w}", file=sys.stderr)
        files = run_experiment(cfg, base, args.out, args.seed, args.ntraj, args.atten_db)
    except ConfigError as exc:
        _report(exc)
        return EXIT_CONFIG
    except NumericFailure as exc:
        print(f"error: numeric failure in {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for f in files:
        print(f)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
