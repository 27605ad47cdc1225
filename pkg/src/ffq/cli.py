"""``ffq`` command-line front end.

Every subcommand resolves a configuration (built-in defaults, then an
optional JSON file, then command-line flags), runs independent cells on a
bounded process pool and writes CSV files plus a ``manifest.json`` sidecar
that echoes the resolved configuration.

Frequencies given on the command line or in configs are ordinary
frequencies in Hz or MHz; internally everything is angular (rad/s).
"""

import argparse
from concurrent.futures import ProcessPoolExecutor
import csv
import datetime
import hashlib
import json
import math
import os
from pathlib import Path
import sys

import numpy as np

from . import __version__
from . import fourlevel, two_qubit
from .noise_engine import (
    EXCEEDS_WINDOW,
    NoiseSpectrum,
    coherence_time,
    evolve_full,
    evolve_monte_carlo,
    evolve_secular,
    gaussian_decay_time,
    make_setup,
)
from .single_qubit import (
    PhysicalConstants,
    QubitBias,
    build_hamiltonian,
    exact_spectrum,
    omega10_slope,
    z_coefficients_numeric,
    Z_LABELS,
)
from .units import TWO_PI, UEV

__all__ = ["main", "build_parser", "resolve_config", "ConfigError", "COMMANDS"]


class ConfigError(ValueError):
    """Invalid configuration file or field."""


_COMMON = {
    "vt_ueV": 47.15,
    "omega_n_ueV": 1.0,
    "f_low_hz": 1e3,
    "f_high_hz": 1e12,
    "delta_gamma": -0.0009,
    "zeeman_scale": 0.4599656,
    "donor_dot_distance_nm": 25.33,
    "hyperfine_mhz": 117.0,
    "seed": 0,
}

_VDD = {"v_dd_mhz": two_qubit.DEFAULT_VDD / TWO_PI / 1e6, "calibration_file": None}

DEFAULTS = {
    "spectrum": {**_COMMON, "b_field": 0.796, "e_min": 0.0, "e_max": 8.0, "n_e": 401},
    "dephase-map": {**_COMMON, "f_low_hz": 1.0, "e_min": 0.0, "e_max": 8.0, "n_e": 101,
                    "b_min": 0.76, "b_max": 0.84, "n_b": 101,
                    "cuts": [0.78, 0.796, 0.81], "n_cut": 1601},
    # relax-map defaults to a slightly larger tunnel coupling than the other commands
    "relax-map": {**_COMMON, **_VDD, "vt_ueV": 47.2, "e_min": -2.0, "e_max": 6.0, "n_e": 101,
                  "b_min": 0.76, "b_max": 0.84, "n_b": 101},
    "evolve": {**_COMMON, **_VDD, "point": "a", "b_field": None, "e_field": None,
               "region": None, "propagator": "fourlevel", "t_max": 2e-6, "n_times": 2001,
               "n_traj": 200, "mc_band_limit_hz": 1e10},
    "fourlevel": {**_COMMON, **_VDD, "point": None, "gap_mhz": 300.0, "g_s_mhz": 3.0,
                  "g2_ratio": 0.1, "g1_mhz": 0.0, "gamma1_mhz": 20.0, "gamma2_mhz": 0.0,
                  "ratio_min": 0.0, "ratio_max": 4.0, "n_delta": 401, "alpha": 1.0},
    "calibrate-vdd": {**_COMMON, "target_ns": 150.0, "point": "a"},
}
COMMANDS = tuple(DEFAULTS)
_POINTS = {k: (v.b_field, v.e_field) for k, v in two_qubit.OPERATING_POINTS.items()}


# --- configuration ---------------------------------------------------------------

def _load_json(path):
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return data


def resolve_config(command, file_config=None, overrides=None):
    """Merge defaults, a config mapping and flag overrides; validate field names and types."""
    if command not in DEFAULTS:
        raise ConfigError(f"unknown command {command!r}")
    cfg = dict(DEFAULTS[command])
    for source in (file_config or {}, overrides or {}):
        for key, value in source.items():
            if key not in cfg:
                raise ConfigError(f"field {key!r}: not a setting of '{command}'")
            default = DEFAULTS[command][key]
            if isinstance(default, (int, float)) and not isinstance(default, bool) and value is not None:
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"field {key!r}: expected a number, got {value!r}")
            cfg[key] = value
    if cfg.get("calibration_file"):
        cal = _load_json(cfg["calibration_file"])
        if "v_dd_mhz" not in cal:
            raise ConfigError(f"{cfg['calibration_file']}: missing field 'v_dd_mhz'")
        cfg["v_dd_mhz"] = float(cal["v_dd_mhz"])
    if not cfg["f_low_hz"] < cfg["f_high_hz"]:
        raise ConfigError("field 'f_low_hz': must be below f_high_hz")
    for lo, hi, n in (("e_min", "e_max", "n_e"), ("b_min", "b_max", "n_b")):
        if lo in cfg:
            if not cfg[lo] < cfg[hi]:
                raise ConfigError(f"field {lo!r}: axis must be strictly increasing")
            if int(cfg[n]) < 1:
                raise ConfigError(f"field {n!r}: must be at least 1")
    return cfg


def _constants(cfg):
    return PhysicalConstants(
        hyperfine_A=TWO_PI * cfg["hyperfine_mhz"] * 1e6,
        delta_gamma=cfg["delta_gamma"],
        zeeman_scale=cfg["zeeman_scale"],
        donor_dot_distance=cfg["donor_dot_distance_nm"] * 1e-9,
    )


def _spectrum(cfg):
    return NoiseSpectrum(TWO_PI * cfg["f_low_hz"], TWO_PI * cfg["f_high_hz"])


def _axis(cfg, name):
    return np.linspace(cfg[f"{name}_min"], cfg[f"{name}_max"], int(cfg[f"n_{name}"]))


# --- output ------------------------------------------------------------------------

def fmt(x):
    """Decimal-point exponent notation such as ``1.234567890e-5``; non-finite as ``inf``/``nan``."""
    if isinstance(x, str):
        return x
    x = float(x)
    if not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    mant, exp = f"{x:.9e}".split("e")
    return f"{mant}e{int(exp)}"


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _timestamp():
    epoch = int(os.environ.get("SOURCE_DATE_EPOCH", "0"))
    return datetime.datetime.fromtimestamp(epoch, tz=datetime.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _write_manifest(out, command, cfg, files, extra=None):
    digests = {}
    for name in files:
        digests[name] = hashlib.sha256((out / name).read_bytes()).hexdigest()
    manifest = {
        "command": command,
        "config": cfg,
        "cutoffs_rad_s": {"omega_l": TWO_PI * cfg["f_low_hz"], "omega_h": TWO_PI * cfg["f_high_hz"]},
        "files": digests,
        "sentinel": {"inf": "coherence time exceeds the window 1/omega_l"},
        "timestamp": _timestamp(),
        "version": __version__,
    }
    if extra:
        manifest.update(extra)
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2, ensure_ascii=False, default=_json_default)
        fh.write("\n")
    return manifest


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _json_float(x):
    x = float(x)
    return x if math.isfinite(x) else str(x)


# --- parallel execution ----------------------------------------------------------

def thread_count(flag=None):
    """Worker count: ``--threads``, else ``FFQ_THREADS``, else the CPU count."""
    if flag is not None:
        n = int(flag)
    elif os.environ.get("FFQ_THREADS"):
        n = int(os.environ["FFQ_THREADS"])
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise ConfigError("thread count must be at least 1")
    return n


def run_cells(func, items, threads):
    """``[func(x) for x in items]``, optionally on a process pool; order is preserved."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items, chunksize=max(1, len(items) // (4 * threads))))


# --- cell workers (module level so they pickle) -----------------------------------

def _dephase_row(args):
    cfg, b_field, e_values = args
    const = _constants(cfg)
    spec = _spectrum(cfg)
    vt = cfg["vt_ueV"] * UEV
    wn = cfg["omega_n_ueV"] * UEV
    slope = omega10_slope(const.field_to_detuning(np.asarray(e_values)), vt, b_field, const)
    return [gaussian_decay_time(spec, float((wn * s) ** 2)) for s in np.atleast_1d(slope)]


def _initial_state(alpha=math.sqrt(3) / 2):
    beta = math.sqrt(1 - alpha * alpha)
    psi = np.array([alpha, beta, 0.0, 0.0])
    return np.outer(psi, psi)


def _four_level(cfg, point):
    rates = two_qubit.point_rates(point, TWO_PI * cfg["v_dd_mhz"] * 1e6, cfg["vt_ueV"],
                                  cfg["omega_n_ueV"] * UEV, _constants(cfg))[3]
    return rates, fourlevel.FourLevelParams.from_rates(rates)


def relaxation_time(cfg, b_field, e_field):
    """Two-qubit ``T1``: ``F_{01,01}(T1) = 1/e`` from the secular four-level model."""
    _, p = _four_level(cfg, (b_field, e_field))
    setup = make_setup(fourlevel.hamiltonian(p), list(fourlevel.noise_operators(p)),
                       _spectrum(cfg), "secular")
    try:
        return coherence_time(setup, _initial_state(), 0, 0)
    except ValueError:
        return EXCEEDS_WINDOW


def _relax_row(args):
    cfg, b_field, e_values = args
    return [relaxation_time(cfg, b_field, float(e)) for e in e_values]


# --- commands ----------------------------------------------------------------------

def cmd_spectrum(cfg, out, threads):
    const = _constants(cfg)
    rows = []
    for e in _axis(cfg, "e"):
        bias = QubitBias.from_field(float(e), cfg["vt_ueV"], cfg["b_field"], const)
        sp = exact_spectrum(build_hamiltonian(bias))
        z = z_coefficients_numeric(sp, bias)
        rows.append([e, bias.epsilon / UEV, *(sp.energies / UEV), sp.omega10 / TWO_PI / 1e6,
                     *(abs(v) for v in z.as_dict().values())])
    header = ["e_field_vcm", "epsilon_ueV", "E0_ueV", "E1_ueV", "E2_ueV", "E3_ueV", "omega10_mhz",
              *(f"abs_z{k}" for k in Z_LABELS)]
    _write_csv(out / "spectrum.csv", header, rows)
    return ["spectrum.csv"], {}


def cmd_dephase_map(cfg, out, threads):
    e_axis, b_axis = _axis(cfg, "e"), _axis(cfg, "b")
    grid = run_cells(_dephase_row, [(cfg, float(b), e_axis.tolist()) for b in b_axis], threads)
    _write_csv(out / "dephase_map.csv", ["b_field_t", *(fmt(e) for e in e_axis)],
               [[b, *row] for b, row in zip(b_axis, grid)])
    e_fine = np.linspace(cfg["e_min"], cfg["e_max"], int(cfg["n_cut"]))
    cuts = run_cells(_dephase_row, [(cfg, float(b), e_fine.tolist()) for b in cfg["cuts"]], threads)
    _write_csv(out / "dephase_cuts.csv", ["e_field_vcm", *(f"T2_s_B{b:g}" for b in cfg["cuts"])],
               [[e, *vals] for e, *vals in zip(e_fine, *cuts)])
    return ["dephase_map.csv", "dephase_cuts.csv"], {"values": "T2 in seconds"}


def cmd_relax_map(cfg, out, threads):
    e_axis, b_axis = _axis(cfg, "e"), _axis(cfg, "b")
    grid = run_cells(_relax_row, [(cfg, float(b), e_axis.tolist()) for b in b_axis], threads)
    _write_csv(out / "relax_map.csv", ["b_field_t", *(fmt(e) for e in e_axis)],
               [[b, *row] for b, row in zip(b_axis, grid)])
    marks = {}
    for name, (b, e) in _POINTS.items():
        marks[name] = {"b_field": b, "e_field": e, "T1_s": _json_float(relaxation_time(cfg, b, e))}
    return ["relax_map.csv"], {"values": "T1 in seconds", "points": marks}


def _dft(signal, dt):
    """Hann-windowed DFT magnitude, zero-padded to the next power of two."""
    x = np.asarray(signal, dtype=float)
    x = (x - x.mean()) * np.hanning(len(x))
    n = 1 << (len(x) - 1).bit_length()
    spec = np.abs(np.fft.rfft(x, n)) / len(x)
    return np.fft.rfftfreq(n, dt), spec


def _evolve_traces(cfg, p, times):
    rho0 = _initial_state()
    traj, clean = fourlevel.evolve_analytic(p, rho0, times)
    prop = cfg["propagator"]
    spec = _spectrum(cfg)
    h_ops = list(fourlevel.noise_operators(p))
    h0 = fourlevel.hamiltonian(p)
    if prop == "fourlevel":
        noisy = traj.evaluate(times, spec)
    elif prop in ("secular", "full"):
        setup = make_setup(h0, h_ops, spec, "secular" if prop == "secular" else "full_K")
        res = evolve_secular(setup, rho0, times) if prop == "secular" else evolve_full(setup, rho0, times)
        noisy = res.rho
    elif prop == "montecarlo":
        noisy = evolve_monte_carlo(h0, h_ops, rho0, times, n_traj=int(cfg["n_traj"]),
                                   seed=int(cfg["seed"]), spectrum=spec,
                                   band_limit=TWO_PI * cfg["mc_band_limit_hz"]).rho
    else:
        raise ConfigError(f"field 'propagator': unknown value {prop!r}")
    return clean, noisy


def cmd_evolve(cfg, out, threads):
    if cfg["b_field"] is not None or cfg["e_field"] is not None:
        if cfg["b_field"] is None or cfg["e_field"] is None:
            raise ConfigError("field 'b_field': explicit bias needs both b_field and e_field")
        point = (cfg["b_field"], cfg["e_field"])
        region = cfg["region"]
    else:
        if cfg["point"] not in _POINTS:
            raise ConfigError(f"field 'point': unknown point label {cfg['point']!r}; use a, b or c")
        point = cfg["point"]
        region = cfg["region"] or point
    rates, p = _four_level(cfg, point)
    times = np.linspace(0.0, cfg["t_max"], int(cfg["n_times"]))
    clean, noisy = _evolve_traces(cfg, p, times)
    rows = []
    for i, t in enumerate(times):
        row = [t]
        for rho in (clean[i], noisy[i]):
            row += [rho[0, 0].real, rho[1, 1].real, rho[2, 2].real + rho[3, 3].real,
                    rho[0, 1].real, rho[0, 1].imag]
        rows.append(row)
    cols = ["P01", "P10", "Pleak", "re_rho01_10", "im_rho01_10"]
    _write_csv(out / "evolve.csv", ["t_s", *(f"{c}_clean" for c in cols), *(f"{c}_noisy" for c in cols)],
               rows)
    freqs, s_clean = _dft(clean[:, 0, 0].real, times[1] - times[0])
    _, s_noisy = _dft(noisy[:, 0, 0].real, times[1] - times[0])
    _write_csv(out / "evolve_dft.csv", ["f_hz", "P01_clean", "P01_noisy"],
               zip(freqs, s_clean, s_noisy))
    extra = {
        "rates_rad_s": {k: getattr(rates, k) for k in ("g_f", "g_l", "g_c", "gamma1", "gamma2", "delta")},
        "dft": {"window": "hann", "padding": "zero, next power of two", "mean_removed": True},
        "initial_state": "sqrt(3)/2 |01> + 1/2 |10>",
    }
    if region is not None:
        extra["swap_time_s"] = math.pi / two_qubit.gate_frequency(rates, region)
    return ["evolve.csv", "evolve_dft.csv"], extra


def cmd_fourlevel(cfg, out, threads):
    if cfg["point"] is not None:
        _, base = _four_level(cfg, cfg["point"])
        gap = base.g_c - base.g_s
        make = lambda r: fourlevel.FourLevelParams(r * gap, base.g_s, base.g_c, base.g_1, base.g_2,
                                                   base.gamma1, base.gamma2)
    else:
        gap = TWO_PI * cfg["gap_mhz"] * 1e6
        g_s = TWO_PI * cfg["g_s_mhz"] * 1e6
        kw = dict(g_s=g_s, g_c=gap + g_s, g_1=TWO_PI * cfg["g1_mhz"] * 1e6, g_2=-cfg["g2_ratio"] * gap,
                  gamma1=TWO_PI * cfg["gamma1_mhz"] * 1e6, gamma2=TWO_PI * cfg["gamma2_mhz"] * 1e6)
        make = lambda r: fourlevel.FourLevelParams(delta=r * gap, **kw)
    ratios = np.linspace(cfg["ratio_min"], cfg["ratio_max"], int(cfg["n_delta"]))
    alpha = float(cfg["alpha"])
    rho0 = _initial_state(alpha)
    rows = []
    for r in ratios:
        p = make(float(r))
        ms = fourlevel.mode_set(p)
        table = fourlevel.amplitudes(p, rho0, 0, 0)
        row = [r, p.delta / TWO_PI / 1e6]
        for i, name in enumerate(fourlevel.MODE_NAMES):
            row += [2 * abs(table[name]), ms.frequencies[i] / TWO_PI / 1e6, ms.rates[i] / TWO_PI / 1e6]
        row.append(fourlevel.equilibrium_leakage_4lv(p, alpha, math.sqrt(1 - alpha * alpha)))
        rows.append(row)
    header = ["delta_over_gap", "delta_mhz"]
    for name in fourlevel.MODE_NAMES:
        header += [f"amp_{name}", f"freq_{name}_mhz", f"rate_{name}_mhz"]
    header.append("P_leak_eq")
    _write_csv(out / "fourlevel_modes.csv", header, rows)
    reports = {}
    for r in (0.1, 1.0, 10.0):
        try:
            rep = fourlevel.case_report(make(r))
            reports[f"{r:g}"] = {k: _json_float(v) for k, v in rep.items()}
        except fourlevel.HierarchyError as exc:
            reports[f"{r:g}"] = {"error": str(exc)}
    return ["fourlevel_modes.csv"], {"case_reports": reports}


def cmd_calibrate_vdd(cfg, out, threads):
    const = _constants(cfg)
    target = cfg["target_ns"] * 1e-9
    try:
        v_dd = two_qubit.calibrate_vdd(target, cfg["point"], vt_ueV=cfg["vt_ueV"], constants=const)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    t_c = two_qubit.swap_time("c", v_dd, vt_ueV=cfg["vt_ueV"], constants=const)
    cal = {"v_dd_mhz": v_dd / TWO_PI / 1e6, "target_ns": cfg["target_ns"], "point": cfg["point"],
           "swap_time_c_ns": t_c * 1e9}
    with open(out / "calibration.json", "w", encoding="utf-8") as fh:
        json.dump(cal, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return ["calibration.json"], {"calibration": cal}


_HANDLERS = {
    "spectrum": cmd_spectrum,
    "dephase-map": cmd_dephase_map,
    "relax-map": cmd_relax_map,
    "evolve": cmd_evolve,
    "fourlevel": cmd_fourlevel,
    "calibrate-vdd": cmd_calibrate_vdd,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="ffq", description="Flip-flop qubit charge-noise sweeps.")
    parser.add_argument("--version", action="version", version=f"ffq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, help="random seed (Monte Carlo)")
        p.add_argument("--threads", type=int, help="worker processes (default: $FFQ_THREADS or CPU count)")
        p.add_argument("--omega-l", type=float, dest="omega_l", help="low noise cutoff in Hz")
        p.add_argument("--omega-h", type=float, dest="omega_h", help="high noise cutoff in Hz")
        p.add_argument("--set", action="append", default=[], metavar="KEY=JSON",
                       help="override one config field, e.g. --set n_e=21")
    return parser


def _overrides(args):
    ov = {}
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        ov["seed"] = args.seed
    if args.omega_l is not None:
        ov["f_low_hz"] = args.omega_l
    if args.omega_h is not None:
        ov["f_high_hz"] = args.omega_h
    for item in args.set:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set {item!r}: expected KEY=VALUE")
        try:
            ov[key] = json.loads(raw)
        except json.JSONDecodeError:
            ov[key] = raw
    return ov


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        file_cfg = _load_json(args.config) if args.config else None
        cfg = resolve_config(args.command, file_cfg, _overrides(args))
        threads = thread_count(args.threads)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        files, extra = _HANDLERS[args.command](cfg, out, threads)
        _write_manifest(out, args.command, cfg, files, extra)
    except (ConfigError, OSError) as exc:
        print(f"ffq: error: {exc}", file=sys.stderr)
        return 2
    print(f"ffq {args.command}: wrote {', '.join(files)} and manifest.json to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
