"""YAML configuration: named blocks ``device``, ``noise``, ``calibration``,
``sequences`` and ``experiment``.  See ``docs/config.md`` for the schema.

Every validation problem is reported as ``file:line: block.path: message``.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .device import CouplingModel, Device, DeviceParams, FluxMap
from .filterfn import SequenceKind
from .noise import Lorentzian, NoisePsdModel
from .sequence import Calibration, TransferMap

TWO_PI = 2 * np.pi
ENV_VAR = "GFRAME_DD_CONFIG"
EXPERIMENT_KINDS = ("coupling-map", "chevron", "calibrate", "dd-decay", "dephasing-scan", "predict",
                    "noise-synth")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("\n".join(problems))


class _Map(dict):
    """dict that remembers the source line of each key (1-based)."""

    lines: dict
    line: int = 0


class _Loader(yaml.SafeLoader):
    pass


def _construct_map(loader, node):
    loader.flatten_mapping(node)
    out = _Map()
    out.lines = {}
    out.line = node.start_mark.line + 1
    for k_node, v_node in node.value:
        key = loader.construct_object(k_node, deep=True)
        out[key] = loader.construct_object(v_node, deep=True)
        out.lines[key] = k_node.start_mark.line + 1
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_map)


def default_config_path() -> Path:
    env = os.environ.get(ENV_VAR)
    if env:
        return Path(env)
    return Path(str(resources.files("gframe_dd") / "data" / "default.yaml"))


# ------------------------------------------------------------------ schema

class _Ctx:
    def __init__(self, source: str):
        self.source = source
        self.problems: list[str] = []

    def err(self, node, key, path: str, msg: str) -> None:
        line = 0
        if isinstance(node, _Map):
            line = node.lines.get(key, node.line) if key is not None else node.line
        self.problems.append(f"{self.source}:{line}: {path}: {msg}")


def _num(ctx, node, key, path, default=None, *, required=False, lo=None, hi=None, positive=False):
    if not isinstance(node, dict) or key not in node:
        if required:
            ctx.err(node, None, f"{path}.{key}", "missing required value")
        return default
    v = node[key]
    if isinstance(v, str):
        # YAML 1.1 reads exponents without a sign (5.0e4) as strings
        try:
            v = float(v)
        except ValueError:
            pass
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        ctx.err(node, key, f"{path}.{key}", f"expected a number, got {v!r}")
        return default
    v = float(v)
    if not np.isfinite(v):
        ctx.err(node, key, f"{path}.{key}", "must be finite")
    elif positive and v <= 0:
        ctx.err(node, key, f"{path}.{key}", "must be > 0")
    elif lo is not None and v < lo:
        ctx.err(node, key, f"{path}.{key}", f"must be >= {lo}")
    elif hi is not None and v > hi:
        ctx.err(node, key, f"{path}.{key}", f"must be <= {hi}")
    return v


def _pair(ctx, node, key, path, default=None):
    if not isinstance(node, dict) or key not in node:
        return default
    v = node[key]
    if (not isinstance(v, (list, tuple)) or len(v) != 2
            or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)):
        ctx.err(node, key, f"{path}.{key}", f"expected a pair of numbers, got {v!r}")
        return default
    return (float(v[0]), float(v[1]))


def _unknown(ctx, node, allowed, path):
    if isinstance(node, dict):
        for k in node:
            if k not in allowed:
                ctx.err(node, k, f"{path}.{k}", f"unknown key (allowed: {', '.join(sorted(allowed))})")


def _block(ctx, root, key, path=None):
    node = root.get(key) if isinstance(root, dict) else None
    if node is None:
        return _Map()
    if not isinstance(node, dict):
        ctx.err(root, key, path or key, "expected a mapping")
        return _Map()
    return node


# ------------------------------------------------------------------ device

_PARAM_KEYS = {f.name for f in fields(DeviceParams)}


def _device(ctx, node) -> Device | None:
    _unknown(ctx, node, {"params", "omega_c_idle", "coupler_map", "q1_map", "coupling"}, "device")
    pnode = _block(ctx, node, "params", "device.params")
    _unknown(ctx, pnode, _PARAM_KEYS, "device.params")
    kw = {}
    for k in _PARAM_KEYS:
        v = _num(ctx, pnode, k, "device.params")
        if v is not None:
            kw[k] = v
    params = DeviceParams(**kw)
    for msg in params.violations():
        ctx.err(pnode, None, "device.params", msg)
    idle = _num(ctx, node, "omega_c_idle", "device", 6.15, positive=True)

    def fmap(key, default_fmax, default_window, anchored_ok):
        m = _block(ctx, node, key, f"device.{key}")
        path = f"device.{key}"
        _unknown(ctx, m, {"kind", "f_max", "scale", "offset", "window", "table_phi", "table_freq"}, path)
        kind = m.get("kind", "anchored" if anchored_ok else "analytic")
        window = _pair(ctx, m, "window", path, default_window)
        try:
            if kind == "anchored" and anchored_ok:
                return FluxMap.anchored(_num(ctx, m, "f_max", path, default_fmax, positive=True),
                                        params.phic_idle, idle, window)
            if kind == "analytic":
                return FluxMap("analytic", _num(ctx, m, "f_max", path, default_fmax, positive=True),
                               _num(ctx, m, "scale", path, 1.0, positive=True),
                               _num(ctx, m, "offset", path, 0.0), window)
            if kind == "tabulated":
                return FluxMap("tabulated", window=window, table_phi=tuple(m.get("table_phi", ())),
                               table_freq=tuple(m.get("table_freq", ())))
            ctx.err(m, "kind", f"{path}.kind", f"unknown map kind {kind!r}")
        except (ValueError, TypeError) as exc:
            ctx.err(m, None, path, str(exc))
        return None

    cmap = fmap("coupler_map", params.omegac_max, (-0.1, 0.205), True)
    qmap = fmap("q1_map", params.omega1_max, (-0.45, 0.45), False)
    c = _block(ctx, node, "coupling", "device.coupling")
    _unknown(ctx, c, {"kind", "omega_c_zero", "omega_q", "g12_eff", "g_eff_product"}, "device.coupling")
    ckind = c.get("kind", "anchored")
    coupling = None
    if ckind == "anchored":
        coupling = CouplingModel.anchored(_num(ctx, c, "omega_c_zero", "device.coupling", idle, positive=True),
                                          _num(ctx, c, "omega_q", "device.coupling", params.omega2, positive=True),
                                          _num(ctx, c, "g12_eff", "device.coupling", params.g12))
    elif ckind == "explicit":
        coupling = CouplingModel(_num(ctx, c, "g_eff_product", "device.coupling", required=True) or 0.0,
                                 _num(ctx, c, "g12_eff", "device.coupling", params.g12),
                                 _num(ctx, c, "omega_q", "device.coupling", params.omega2))
    elif ckind == "bare":
        coupling = CouplingModel.bare(params)
    else:
        ctx.err(c, "kind", "device.coupling.kind", f"unknown coupling kind {ckind!r}")
    if cmap is None or qmap is None or coupling is None:
        return None
    try:
        return Device(params, cmap, qmap, coupling, idle)
    except ValueError as exc:
        ctx.err(node, None, "device", str(exc))
        return None


# ------------------------------------------------------------------- noise

_NOISE_KEYS = {"a1", "a2", "lorentz_low", "lorentz_high", "a_white", "a_gl", "alpha_gl", "f_min", "f_max",
               "atten_db"}


def _noise_model(ctx, m, path) -> NoisePsdModel | None:
    n_before = len(ctx.problems)
    _unknown(ctx, m, _NOISE_KEYS, path)
    kw = {}
    for k in ("a1", "a2", "a_white", "a_gl"):
        kw[k] = _num(ctx, m, k, path, 0.0, lo=0.0)
    kw["alpha_gl"] = _num(ctx, m, "alpha_gl", path, 1.1, positive=True)
    kw["f_min"] = _num(ctx, m, "f_min", path, 1e-2, positive=True)
    kw["f_max"] = _num(ctx, m, "f_max", path, 1e8, positive=True)
    kw["atten_db"] = _num(ctx, m, "atten_db", path, 0.0)
    for k in ("lorentz_low", "lorentz_high"):
        lz = _block(ctx, m, k, f"{path}.{k}")
        _unknown(ctx, lz, {"amplitude", "center_hz", "width_hz"}, f"{path}.{k}")
        kw[k] = Lorentzian(_num(ctx, lz, "amplitude", f"{path}.{k}", 0.0, lo=0.0),
                           TWO_PI * _num(ctx, lz, "center_hz", f"{path}.{k}", 0.0, lo=0.0),
                           TWO_PI * _num(ctx, lz, "width_hz", f"{path}.{k}", 1.0, positive=True))
    if kw["f_min"] >= kw["f_max"]:
        ctx.err(m, "f_min", f"{path}.f_min", "must be below f_max")
    if len(ctx.problems) > n_before:
        # field-level messages already name the offending keys
        return None
    try:
        return NoisePsdModel(**kw)
    except ValueError as exc:
        ctx.err(m, None, path, str(exc))
        return None


def noise_to_dict(model: NoisePsdModel) -> dict:
    def lz(l):
        return {"amplitude": float(l.amplitude), "center_hz": float(l.center / TWO_PI),
                "width_hz": float(l.width / TWO_PI)}
    return {"a1": float(model.a1), "a2": float(model.a2), "lorentz_low": lz(model.lorentz_low),
            "lorentz_high": lz(model.lorentz_high), "a_white": float(model.a_white), "a_gl": float(model.a_gl),
            "alpha_gl": float(model.alpha_gl), "f_min": float(model.f_min), "f_max": float(model.f_max),
            "atten_db": float(model.atten_db)}


# ------------------------------------------------------------- calibration

def _transfer(ctx, m, path, device: Device | None, default_kind: str) -> TransferMap | None:
    _unknown(ctx, m, {"kind", "slope", "offset", "amp_range", "phi0", "anchor"}, path)
    kind = m.get("kind", default_kind)
    amp_range = _pair(ctx, m, "amp_range", path)
    try:
        if kind == "linear":
            return TransferMap("linear", _num(ctx, m, "slope", path, 1.0), _num(ctx, m, "offset", path, 0.0),
                               amp_range or (-1e3, 1e3))
        if kind not in ("coupler", "qubit"):
            ctx.err(m, "kind", f"{path}.kind", f"unknown transfer map kind {kind!r}")
            return None
        if device is None:
            return None
        phi0 = _num(ctx, m, "phi0", path)
        anchor = _pair(ctx, m, "anchor", path)
        if anchor is not None:
            return TransferMap.anchored(kind, device, anchor[0], anchor[1], amp_range, phi0)
        return TransferMap(kind, _num(ctx, m, "slope", path, required=True) or 1.0, 0.0,
                           amp_range or (-1e3, 1e3), device, phi0)
    except ValueError as exc:
        ctx.err(m, None, path, str(exc))
        return None


def _calibration(ctx, node, device) -> Calibration | None:
    _unknown(ctx, node, {"amp_to_omega", "amp_to_delta", "crosstalk", "omega_pi", "delta_pi", "grid_ns"},
             "calibration")
    om = _transfer(ctx, _block(ctx, node, "amp_to_omega", "calibration.amp_to_omega"),
                   "calibration.amp_to_omega", device, "linear")
    de = _transfer(ctx, _block(ctx, node, "amp_to_delta", "calibration.amp_to_delta"),
                   "calibration.amp_to_delta", device, "linear")
    xt = node.get("crosstalk", [[1.0, 0.0], [0.0, 1.0]])
    try:
        xt = tuple(tuple(float(x) for x in row) for row in xt)
    except (TypeError, ValueError):
        ctx.err(node, "crosstalk", "calibration.crosstalk", "expected a 2x2 numeric matrix")
        xt = ((1.0, 0.0), (0.0, 1.0))
    op = _block(ctx, node, "omega_pi", "calibration.omega_pi")
    dp = _block(ctx, node, "delta_pi", "calibration.delta_pi")
    _unknown(ctx, op, {"rate_mhz", "width_ns"}, "calibration.omega_pi")
    _unknown(ctx, dp, {"rate_mhz", "width_ns"}, "calibration.delta_pi")
    if om is None or de is None:
        return None
    try:
        return Calibration(om, de, xt,
                           _num(ctx, op, "rate_mhz", "calibration.omega_pi", -25.0),
                           _num(ctx, op, "width_ns", "calibration.omega_pi", 20.0, positive=True) * 1e-9,
                           _num(ctx, dp, "rate_mhz", "calibration.delta_pi", 83.0),
                           _num(ctx, dp, "width_ns", "calibration.delta_pi", 6.0, positive=True) * 1e-9,
                           _num(ctx, node, "grid_ns", "calibration", 0.5, lo=0.0) * 1e-9)
    except ValueError as exc:
        ctx.err(node, None, "calibration", str(exc))
        return None


# --------------------------------------------------------------- sequences

@dataclass(frozen=True)
class SequenceSpec:
    name: str
    kind: SequenceKind
    tau_star: float | None = None   # s, per-sequence override


def _sequences(ctx, node) -> dict[str, SequenceSpec]:
    out = {}
    for name, m in node.items():
        path = f"sequences.{name}"
        if not isinstance(m, dict):
            ctx.err(node, name, path, "expected a mapping with family and n")
            continue
        _unknown(ctx, m, {"family", "n", "tau_star_us"}, path)
        try:
            kind = SequenceKind(str(m.get("family", "")).upper(), int(m.get("n", 0)))
        except (ValueError, TypeError) as exc:
            ctx.err(m, None, path, str(exc))
            continue
        ts = _num(ctx, m, "tau_star_us", path, positive=True)
        out[name] = SequenceSpec(name, kind, None if ts is None else ts * 1e-6)
    return out


# -------------------------------------------------------------- experiment

# key -> (type, default); "num" numbers, "int", "str", "list" (numbers or names), "grid" ({start, stop, num} or list)
EXPERIMENT_SCHEMA: dict[str, dict[str, tuple[str, Any]]] = {
    "coupling-map": {"phi_mphi0": ("grid", {"start": -100.0, "stop": 205.0, "num": 611}),
                     "targets_mhz": ("list", [8.7, -25.0, -97.1])},
    "chevron": {"phi_mphi0": ("grid", {"start": 140.0, "stop": 200.0, "num": 31}),
                "tau_ns": ("grid", {"start": 0.0, "stop": 200.0, "num": 801}),
                "detuning_mhz": ("num", 0.0)},
    "calibrate": {"omega_sweep": ("grid", {"start": 200.0, "stop": 260.0, "num": 61}),
                  "delta_sweep": ("grid", {"start": 60.0, "stop": 76.0, "num": 65}),
                  "n_pulses": ("int", 10), "spacing_ns": ("num", 2.0)},
    "dd-decay": {"noise": ("str", "coupler"), "delta_noise": ("str", ""), "delta_sens_mhz_per_mphi0": ("num", 0.0),
                 "atten_db": ("num", 20.0), "sequences": ("list", ["Y-1", "XY-8"]),
                 "sens_mhz_per_mphi0": ("num", 5.0), "omega_free_mhz": ("num", -25.0),
                 "t_us": ("grid", None), "t_points": ("int", 16), "t_span": ("num", 2.0),
                 "n_traj": ("int", 400), "seed": ("int", 1234), "gamma_bar_1": ("num", 0.18e6),
                 "export_schedules": ("int", 1)},
    "dephasing-scan": {"noise": ("str", "coupler"), "atten_db": ("num", 20.0),
                       "sequences": ("list", ["Y-1", "Y-2", "XY-4", "XY-8"]),
                       "sens_mhz_per_mphi0": ("list", [1.5, 2.5, 3.5, 5.0, 7.0, 10.0]),
                       "omega_free_mhz": ("num", -25.0), "t_points": ("int", 16), "t_span": ("num", 2.0),
                       "n_traj": ("int", 200), "seed": ("int", 1234), "gamma_bar_1": ("num", 0.0)},
    "predict": {"noise": ("str", "coupler"), "atten_db": ("num", 20.0),
                "sequences": ("list", ["Y-1", "Y-2", "XY-4", "XY-8"]),
                "sens_mhz_per_mphi0": ("grid", {"start": 0.5, "stop": 20.0, "num": 40}),
                "reference_sensitivity": ("num", 5.0)},
    "noise-synth": {"noise": ("str", "coupler"), "atten_db": ("num", 0.0), "dt_s": ("num", 1e-8),
                    "n_samples": ("int", 1 << 16), "seed": ("int", 1234), "n_segments": ("int", 64)},
}


@dataclass
class ExperimentSpec:
    kind: str
    options: dict
    out: str | None = None


def _grid(ctx, node, key, path, v):
    if isinstance(v, list):
        if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v) or not v:
            ctx.err(node, key, path, "expected a non-empty list of numbers")
            return None
        return [float(x) for x in v]
    if isinstance(v, dict):
        _unknown(ctx, v, {"start", "stop", "num"}, path)
        a = _num(ctx, v, "start", path, required=True)
        b = _num(ctx, v, "stop", path, required=True)
        n = v.get("num", 2)
        if not isinstance(n, int) or n < 1:
            ctx.err(v, "num", f"{path}.num", "must be a positive integer")
            return None
        if a is None or b is None:
            return None
        return [float(x) for x in np.linspace(a, b, n)]
    ctx.err(node, key, path, "expected a list or {start, stop, num}")
    return None


def _experiment(ctx, node) -> ExperimentSpec | None:
    if not node:
        return None
    kind = node.get("kind")
    if kind not in EXPERIMENT_KINDS:
        ctx.err(node, "kind" if "kind" in node else None, "experiment.kind",
                f"expected one of {', '.join(EXPERIMENT_KINDS)}, got {kind!r}")
        return None
    return ExperimentSpec(kind, experiment_options(ctx, kind, node, "experiment"), node.get("out"))


def experiment_options(ctx, kind: str, node: dict, path: str) -> dict:
    schema = EXPERIMENT_SCHEMA[kind]
    _unknown(ctx, node, set(schema) | {"kind", "out"}, path)
    opts = {}
    for key, (typ, default) in schema.items():
        p = f"{path}.{key}"
        if key not in node:
            opts[key] = _grid(ctx, node, key, p, default) if typ == "grid" and default is not None else default
            continue
        v = node[key]
        if typ == "num":
            opts[key] = _num(ctx, node, key, path, default)
        elif typ == "int":
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                ctx.err(node, key, p, f"expected a non-negative integer, got {v!r}")
                v = default
            opts[key] = v
        elif typ == "str":
            if not isinstance(v, str):
                ctx.err(node, key, p, f"expected a name, got {v!r}")
                v = default
            opts[key] = v
        elif typ == "list":
            if not isinstance(v, list) or not v:
                ctx.err(node, key, p, "expected a non-empty list")
                v = default
            opts[key] = list(v)
        elif typ == "grid":
            opts[key] = _grid(ctx, node, key, p, v)
    return opts


# -------------------------------------------------------------------- top

@dataclass
class Config:
    device: Device | None
    calibration: Calibration | None
    noise: dict[str, NoisePsdModel]
    sequences: dict[str, SequenceSpec]
    experiment: ExperimentSpec | None
    source: str = "<string>"
    text: str = ""
    warnings: list[str] = field(default_factory=list)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    def noise_model(self, name: str, atten_db: float | None = None) -> NoisePsdModel:
        if name not in self.noise:
            raise ConfigError([f"{self.source}: noise model {name!r} not defined "
                               f"(have: {', '.join(sorted(self.noise)) or 'none'})"])
        m = self.noise[name]
        return m if atten_db is None else m.attenuated(atten_db)

    def sequence(self, name: str) -> SequenceSpec:
        if name in self.sequences:
            return self.sequences[name]
        try:
            return SequenceSpec(name, SequenceKind.parse(name))
        except (ValueError, TypeError):
            raise ConfigError([f"{self.source}: sequence {name!r} is neither defined nor a "
                               "label like 'XY-8'"]) from None


def parse_config(text: str, source: str = "<string>", base: "Config | None" = None) -> Config:
    """Parse and validate; raises ConfigError listing every problem.

    Blocks missing from ``text`` are taken from ``base`` when given.
    """
    try:
        root = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 0
        raise ConfigError([f"{source}:{line}: YAML syntax error: {getattr(exc, 'problem', exc)}"]) from None
    if root is None:
        root = _Map()
        root.lines, root.line = {}, 1
    if not isinstance(root, dict):
        raise ConfigError([f"{source}:1: top level must be a mapping of blocks"])
    ctx = _Ctx(source)
    _unknown(ctx, root, {"device", "noise", "calibration", "sequences", "experiment"}, "config")
    if "device" in root or base is None:
        device = _device(ctx, _block(ctx, root, "device"))
    else:
        device = base.device
    if "noise" in root or base is None:
        noise = {}
        nb = _block(ctx, root, "noise")
        for name, m in nb.items():
            if not isinstance(m, dict):
                ctx.err(nb, name, f"noise.{name}", "expected a mapping")
                continue
            model = _noise_model(ctx, m, f"noise.{name}")
            if model is not None:
                noise[name] = model
    else:
        noise = dict(base.noise)
    if "calibration" in root or base is None:
        calib = _calibration(ctx, _block(ctx, root, "calibration"), device)
    else:
        calib = base.calibration
    if "sequences" in root or base is None:
        seqs = _sequences(ctx, _block(ctx, root, "sequences"))
    else:
        seqs = dict(base.sequences)
    exp = _experiment(ctx, _block(ctx, root, "experiment"))
    # cross references
    if exp is not None:
        for key in ("noise", "delta_noise"):
            name = exp.options.get(key)
            if name and name not in noise:
                ctx.err(root["experiment"], key, f"experiment.{key}", f"noise model {name!r} not defined")
        for name in exp.options.get("sequences") or []:
            if name not in seqs:
                try:
                    SequenceKind.parse(str(name))
                except (ValueError, TypeError):
                    ctx.err(root["experiment"], "sequences", "experiment.sequences",
                            f"sequence {name!r} not defined")
    if ctx.problems:
        raise ConfigError(ctx.problems)
    warnings = []
    if device is not None:
        warnings = [f"{source}: device: {w}" for w in device.anchor_report()]
    return Config(device, calib, noise, seqs, exp, source, text, warnings)


def load_config(path=None, base: Config | None = None) -> Config:
    path = Path(path) if path is not None else default_config_path()
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read config: {exc.strerror}"]) from None
    return parse_config(text, str(path), base)


def validate(path=None) -> list[str]:
    """Problems (errors and anchor warnings) for a config file; empty when clean."""
    try:
        cfg = load_config(path)
    except ConfigError as exc:
        return exc.problems
    return cfg.warnings
