"""Named experiment pipelines.  Each takes a validated config, the option
dict of its experiment block and an output directory, writes CSVs there and
returns the written paths.  Numeric failures are re-raised as
:class:`NumericFailure` naming the module and operation."""
from __future__ import annotations

import contextlib
import csv
import zlib
from pathlib import Path

import numpy as np

from . import analysis, dynamics, filterfn, noise, sequence
from .config import Config
from .device import DomainError, SingularityError, flux_sensitivity_analytic

NUMERIC_ERRORS = (dynamics.NumericError, filterfn.QuadratureError, filterfn.FilterPoleError, analysis.FitError,
                  sequence.CalibrationError, sequence.ScheduleError, DomainError, SingularityError,
                  FloatingPointError, np.linalg.LinAlgError)


class NumericFailure(RuntimeError):
    def __init__(self, op: str, exc: Exception):
        self.op = op
        super().__init__(f"{op}: {type(exc).__name__}: {exc}")


@contextlib.contextmanager
def op(name: str):
    try:
        yield
    except NUMERIC_ERRORS as exc:
        raise NumericFailure(name, exc) from exc


def _writer(path: Path):
    fh = path.open("w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def _seq_seed(seed: int, name: str):
    return [int(seed), zlib.crc32(name.encode())]


def _fname(name: str) -> str:
    return name.replace("/", "_")


# ---------------------------------------------------------------- device

def coupling_map(cfg: Config, opts: dict, out: Path) -> list[Path]:
    dev = cfg.device
    lo, hi = dev.coupler_map.window
    phis = np.array(opts["phi_mphi0"]) * 1e-3
    phis = phis[(phis >= lo) & (phis <= hi)]
    paths = []
    with op("device.swap_rate"):
        rates = dev.swap_rate(phis)
        wc = dev.coupler_map.frequency(phis)
        sens = np.array([flux_sensitivity_analytic(dev.coupling, dev.coupler_map, p) for p in phis])
    p = out / "coupling_map.csv"
    fh, w = _writer(p)
    with fh:
        w.writerow(["phi_c_mphi0", "omega_c_ghz", "omega_mhz", "sens_mhz_per_mphi0"])
        for row in zip(phis, wc, rates, sens):
            w.writerow([f"{row[0] * 1e3:.6f}", f"{row[1]:.9f}", f"{row[2]:.9f}", f"{row[3]:.9f}"])
    paths.append(p)
    p = out / "coupling_targets.csv"
    fh, w = _writer(p)
    with fh, op("device.bias_for_rate"):
        w.writerow(["target_mhz", "phi_c_mphi0", "omega_c_ghz", "sens_mhz_per_mphi0"])
        for target in opts["targets_mhz"]:
            phi = dev.bias_for_rate(float(target))
            w.writerow([f"{float(target):.6f}", f"{phi * 1e3:.9f}", f"{dev.coupler_map.frequency(phi):.9f}",
                        f"{dev.sensitivity(phi):.9f}"])
    paths.append(p)
    return paths


def chevron(cfg: Config, opts: dict, out: Path) -> list[Path]:
    dev = cfg.device
    phis = np.array(opts["phi_mphi0"]) * 1e-3
    tau = np.array(opts["tau_ns"]) * 1e-9
    with op("dynamics.swap_chevron"):
        ch = dynamics.swap_chevron(dev, phis, tau, opts["detuning_mhz"])
        fringes = [dynamics.fringe_frequency(tau, row) for row in ch.p01]
    p1 = out / "chevron.csv"
    ch.to_csv(p1)
    p2 = out / "chevron_fringes.csv"
    fh, w = _writer(p2)
    with fh:
        w.writerow(["phi_c_mphi0", "omega_model_mhz", "fringe_mhz"])
        for phi, om, fr in zip(phis, ch.omega, fringes):
            w.writerow([f"{phi * 1e3:.6f}", f"{om:.9f}", f"{fr:.9f}"])
    return [p1, p2]


def calibrate(cfg: Config, opts: dict, out: Path) -> list[Path]:
    cal = cfg.calibration
    n = opts["n_pulses"]
    spacing = opts["spacing_ns"] * 1e-9
    paths = []
    results = []
    for kind, sweep in (("OmegaPi", opts["omega_sweep"]), ("YPi", opts["delta_sweep"])):
        with op(f"sequence.calibrate_pi_amplitude[{kind}]"):
            amp = sequence.calibrate_pi_amplitude(kind, cal, sweep, n, spacing=spacing)
            pops = [sequence.pulse_train_population(kind, a, cal, n, spacing) for a in sweep]
        p = out / f"pulse_train_{kind}.csv"
        fh, w = _writer(p)
        with fh:
            w.writerow(["amplitude_mv", "p01"])
            for a, pp in zip(sweep, pops):
                w.writerow([f"{a:.6f}", f"{pp:.12e}"])
        paths.append(p)
        if kind == "OmegaPi":
            rate, width = cal.amp_to_omega(amp), cal.omega_pi_width
        else:
            rate, width = cal.amp_to_delta(amp), cal.delta_pi_width
        results.append((kind, amp, rate, width, sequence.pi_residual(rate, width)))
    p = out / "calibration.csv"
    fh, w = _writer(p)
    with fh:
        w.writerow(["kind", "amplitude_mv", "rate_mhz", "width_ns", "pi_residual"])
        for kind, amp, rate, width, res in results:
            w.writerow([kind, f"{amp:.9f}", f"{rate:.9f}", f"{width * 1e9:.3f}", f"{res:.3e}"])
        for name, (rate, width) in {"nominal_omega_pi": (cal.omega_pi_rate, cal.omega_pi_width),
                                    "nominal_delta_pi": (cal.delta_pi_rate, cal.delta_pi_width)}.items():
            w.writerow([name, "", f"{rate:.9f}", f"{width * 1e9:.3f}", f"{sequence.pi_residual(rate, width):.3e}"])
    paths.append(p)
    return paths


# -------------------------------------------------------------- dephasing

def _t_grid(kind, calib, gamma_pred: float, opts) -> np.ndarray:
    if opts.get("t_us"):
        return np.array(opts["t_us"]) * 1e-6
    axes = kind.pulse_axes
    busy = sum(calib.pulse_width(a) for a in axes) if axes else 0.0
    t_min = max(0.05 / gamma_pred, 2.0 * busy, 1e-8)
    t_max = max(opts["t_span"] / gamma_pred, 2 * t_min)
    return np.linspace(t_min, t_max, opts["t_points"])


def run_decay(cfg, name, model, sens, opts, seed, n_traj, delta=None, gamma_bar_1=0.0):
    """Simulate one DD decay and fit it.

    Returns (trace, fit, prediction); the time grid spans ``t_span`` 1/e
    times of the filter-function prediction unless ``opts['t_us']`` is set.
    """
    spec = cfg.sequence(name)
    kind = spec.kind
    with op("filterfn.dephasing_rate"):
        pred = filterfn.dephasing_rate(model, sens, kind, reference_sensitivity=None, tau_star=spec.tau_star)
    if pred.gamma_phi <= 0:
        raise NumericFailure("filterfn.dephasing_rate", ValueError(f"zero predicted rate for {name}"))
    t = _t_grid(kind, cfg.calibration, pred.gamma_phi, opts)
    prog = dynamics.dd_program(kind, cfg.calibration, opts["omega_free_mhz"])
    with op("dynamics.run_stochastic"):
        trace = dynamics.run_stochastic(prog, dynamics.NoiseChannel(model, sens), delta, n_traj,
                                        _seq_seed(seed, f"{name}@{sens:.9g}"), t,
                                        envelope_rate=gamma_bar_1, label=name)
    with op("analysis.fit_decay"):
        fit = analysis.fit_decay(trace, gamma_bar_1)
    return trace, fit, pred


def dd_decay(cfg: Config, opts: dict, out: Path) -> list[Path]:
    model = cfg.noise_model(opts["noise"], opts["atten_db"])
    sens = opts["sens_mhz_per_mphi0"]
    delta = None
    if opts["delta_noise"]:
        delta = dynamics.NoiseChannel(cfg.noise_model(opts["delta_noise"]), opts["delta_sens_mhz_per_mphi0"])
    rows, paths = [], []
    for name in opts["sequences"]:
        trace, fit, pred = run_decay(cfg, name, model, sens, opts, opts["seed"], opts["n_traj"], delta,
                                      opts["gamma_bar_1"])
        p = out / f"trace_{_fname(name)}.csv"
        trace.to_csv(p)
        paths.append(p)
        kind = cfg.sequence(name).kind
        rows.append({"sequence": name, "n": kind.n_periods, "sens": sens, "gamma_phi": fit.gamma_phi,
                     "gamma_phi_err": fit.gamma_phi_err, "r2": fit.r2})
        if opts["export_schedules"]:
            with op("sequence.compile"):
                circ = sequence.build_dd_circuit(kind, float(trace.t[-1]), opts["omega_free_mhz"],
                                                 cfg.calibration)
                sched = sequence.compile(circ, cfg.calibration)
            paths.extend(sched.to_csv(out / f"schedule_{_fname(name)}"))
    p = out / "fits.csv"
    analysis.write_fit_results(p, rows)
    paths.append(p)
    return paths


def dephasing_scan(cfg: Config, opts: dict, out: Path) -> list[Path]:
    model = cfg.noise_model(opts["noise"], opts["atten_db"])
    rows, slopes = [], []
    for name in opts["sequences"]:
        kind = cfg.sequence(name).kind
        pts = []
        for sens in opts["sens_mhz_per_mphi0"]:
            _, fit, _ = run_decay(cfg, name, model, float(sens), opts, opts["seed"], opts["n_traj"],
                                   gamma_bar_1=opts["gamma_bar_1"])
            rows.append({"sequence": name, "n": kind.n_periods, "sens": float(sens), "gamma_phi": fit.gamma_phi,
                         "gamma_phi_err": fit.gamma_phi_err, "r2": fit.r2})
            pts.append((float(sens), fit.gamma_phi, fit.gamma_phi_err))
        with op("analysis.slope_vs_sensitivity"):
            sl = analysis.slope_vs_sensitivity(pts)
        with op("filterfn.sequence_coefficient"):
            coef = filterfn.sequence_coefficient(model, kind, tau_star=cfg.sequence(name).tau_star)
        slopes.append((name, kind.n_periods, sl, coef))
    paths = [out / "fits.csv", out / "slopes.csv"]
    analysis.write_fit_results(paths[0], rows)
    fh, w = _writer(paths[1])
    with fh:
        w.writerow(["sequence", "n", "slope_hz_per_mhz_per_mphi0", "slope_err_hz_per_mhz_per_mphi0",
                    "intercept_per_s", "r2", "a_of_n_predicted_hz_per_mhz_per_mphi0"])
        for name, n, sl, coef in slopes:
            w.writerow([name, n, f"{sl.slope:.9e}", f"{sl.slope_err:.9e}", f"{sl.intercept:.9e}",
                        f"{sl.r2:.9f}", f"{coef:.9e}"])
    return paths


def predict(cfg: Config, opts: dict, out: Path) -> list[Path]:
    model = cfg.noise_model(opts["noise"], opts["atten_db"])
    ref = opts["reference_sensitivity"]
    paths, a_rows, seen = [], [], set()
    for name in opts["sequences"]:
        spec = cfg.sequence(name)
        with op("filterfn.dephasing_rate"):
            coef = filterfn.sequence_coefficient(model, spec.kind, reference_sensitivity=ref,
                                                 tau_star=spec.tau_star)
            if ref is not None or spec.tau_star is not None:
                # shared tau*: the rate is exactly |s| A(N)
                curve = [(s, abs(s) * coef) for s in opts["sens_mhz_per_mphi0"]]
            else:
                curve = [(s, filterfn.dephasing_rate(model, s, spec.kind, reference_sensitivity=None).gamma_phi)
                         for s in opts["sens_mhz_per_mphi0"]]
        if spec.kind.n_periods not in seen:
            seen.add(spec.kind.n_periods)
            a_rows.append((spec.kind.n_periods, coef))
        p = out / f"rates_{_fname(name)}.csv"
        filterfn.write_rate_curve_csv(p, curve)
        paths.append(p)
    p = out / "a_of_n.csv"
    filterfn.write_a_of_n_csv(p, sorted(a_rows))
    paths.append(p)
    return paths


def noise_synth(cfg: Config, opts: dict, out: Path) -> list[Path]:
    model = cfg.noise_model(opts["noise"], opts["atten_db"])
    traj = noise.synthesize_trajectory(model, opts["dt_s"], opts["n_samples"], opts["seed"])
    p1 = out / "noise_trajectory.csv"
    traj.to_csv(p1)
    omega, est = noise.periodogram(traj, opts["n_segments"])
    p2 = out / "noise_periodogram.csv"
    fh, w = _writer(p2)
    with fh:
        w.writerow(["omega_rad_s", "psd_estimate_phi0sq_per_hz", "psd_model_phi0sq_per_hz"])
        for om, e in zip(omega, est):
            if om < model.omega_min or om > model.omega_max:
                continue
            w.writerow([f"{om:.9e}", f"{e:.9e}", f"{noise.psd_eval(model, om):.9e}"])
    return [p1, p2]


PIPELINES = {"coupling-map": coupling_map, "chevron": chevron, "calibrate": calibrate, "dd-decay": dd_decay,
             "dephasing-scan": dephasing_scan, "predict": predict, "noise-synth": noise_synth}
