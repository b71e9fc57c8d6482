"""Command-line front end.

Every verb reads one JSON config file and writes CSV or JSON.  Outputs start
with the SHA-256 of the fully resolved config, so a result can always be
traced back to its inputs.
"""
from __future__ import annotations

import argparse
import hashlib
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .curves import format_float
from .dephasing import (DephasingProblem, filter_function_envelope, gaussian_envelope, phi_echo, phi_fid,
                        product_envelope, solve_two_fluctuator_scalar)
from .errors import AccuracyError, ConfigError, ConvergenceError, DatasetError
from .fit import (echo_rate_gaussian, fid_rate_gaussian, fit_fast_fluctuator, get_preset, load_dataset)
from .noise import (NoiseModel, band_from_dict, correlation, model_from_dict, normalization_constant,
                    spectral_density)
from .qubit import FluxQubitParams, QubitCoupling, br_partial_rates_quadrature, br_rates
from .rtp import EnsembleSpec, Fluctuator, empirical_correlation, empirical_envelope

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_ACCURACY, EXIT_CONVERGENCE = 0, 2, 3, 4, 5
COMMANDS = ("spectrum", "correlate", "decay", "validate", "fit", "br-rates")
DECAY_METHODS = ("gaussian", "filter-function", "two-fluctuator", "ode", "monte-carlo",
                 "gaussian-decay", "exponential-decay")


# config helpers

def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _grid(spec, name: str) -> np.ndarray:
    if spec is None:
        raise ConfigError(f"missing {name}")
    if isinstance(spec, dict):
        try:
            start, stop, num = float(spec["start"]), float(spec["stop"]), int(spec["num"])
        except (KeyError, TypeError, ValueError):
            raise ConfigError(f"{name} needs numeric start, stop and num") from None
        if num < 1:
            raise ConfigError(f"{name} is empty")
        if spec.get("log", False):
            if start <= 0 or stop <= 0:
                raise ConfigError(f"log-spaced {name} needs positive limits")
            return np.geomspace(start, stop, num)
        return np.linspace(start, stop, num)
    try:
        arr = np.asarray(spec, dtype=float).ravel()
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a list of numbers or a start/stop/num block") from None
    if arr.size == 0:
        raise ConfigError(f"{name} is empty")
    return arr


def _preset(cfg):
    name = cfg.get("preset")
    if name is None:
        return None
    try:
        return get_preset(str(name))
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None


def _model(cfg) -> NoiseModel:
    if "model" in cfg:
        return model_from_dict(cfg["model"])
    p = _preset(cfg)
    if p is not None:
        return p.noise_model(float(cfg.get("D_z", 1.0)))
    raise ConfigError("config needs a 'model' block or a 'preset'")


def _resolve(cmd: str, cfg: dict, seed_override):
    """Expand preset shorthand and apply the seed override."""
    cfg = json.loads(json.dumps(cfg))
    if seed_override is not None:
        cfg["seed"] = int(seed_override)
    p = _preset(cfg)
    if p is not None:
        cfg["preset_values"] = p.to_dict()
    cfg["command"] = cmd
    return cfg


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, int(args.threads))
    try:
        return max(1, int(os.environ.get("FLUCTUON_THREADS", "1")))
    except ValueError:
        raise ConfigError("FLUCTUON_THREADS must be an integer") from None


def _csv(header: str, columns: dict) -> str:
    buf = io.StringIO()
    buf.write(f"# {header}\n")
    names = list(columns)
    buf.write(",".join(names) + "\n")
    data = [np.asarray(columns[k], dtype=float) for k in names]
    for i in range(len(data[0])):
        buf.write(",".join(format_float(col[i]) for col in data) + "\n")
    return buf.getvalue()


def _write(text: str, out):
    if out is None or str(out) == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


# verbs

def cmd_spectrum(cfg, args) -> str:
    model = _model(cfg)
    f = _grid(cfg.get("f_grid"), "f_grid")
    if np.any(f < 0):
        raise ConfigError("frequencies must be non-negative")
    w = 2 * math.pi * f
    cols = {"f": f}
    seen = {}
    total = np.zeros_like(f)
    for band in model.bands:
        seen[band.n] = seen.get(band.n, 0) + 1
        name = f"S{band.n}" if seen[band.n] == 1 else f"S{band.n}_{seen[band.n]}"
        s = spectral_density(band, w)
        cols[name] = s
        total = total + s
    cols["S_total"] = total
    slow = [b for b in model.bands if b.n == 1]
    if slow:
        b = slow[0]
        amp = b.sigma ** 2 * normalization_constant(b) / 2.0
        with np.errstate(divide="ignore"):
            cols["ref_1f"] = np.where(w > 0, amp / np.where(w > 0, w, 1.0), np.inf)
    return _csv(cfg["_header"], cols)


def cmd_correlate(cfg, args) -> str:
    model = _model(cfg)
    tau = _grid(cfg.get("tau_grid"), "tau_grid")
    cols = {"tau": tau}
    for i, band in enumerate(model.bands):
        cols[f"chi{band.n}" if f"chi{band.n}" not in cols else f"chi{band.n}_{i}"] = correlation(band, tau)
    cols["chi_total"] = sum(correlation(b, tau) for b in model.bands)
    mc = cfg.get("monte_carlo")
    if mc:
        n_fl = int(mc.get("N", 200))
        traj = int(mc.get("trajectories", 500))
        if n_fl < 1 or traj < 1:
            raise ConfigError("monte_carlo N and trajectories must be positive")
        horizon = float(mc.get("horizon", 2.5 * tau.max() if tau.max() > 0 else 1.0))
        spec = EnsembleSpec((), traj, int(cfg.get("seed", 0)), horizon,
                            sources=tuple((b, n_fl) for b in model.bands))
        mean, se = empirical_correlation(spec, tau, workers=_threads(args))
        cols["mc"], cols["mc_stderr"] = mean, se
    return _csv(cfg["_header"], cols)


def _decay_pairs(cfg, preset, model, D):
    if preset is not None and "model" not in cfg:
        return preset.pairs()
    from .noise import effective_fluctuator
    return [(e.gamma_star, abs(D) * e.a_star) for e in map(effective_fluctuator, model.bands)]


def cmd_decay(cfg, args) -> str:
    preset = _preset(cfg)
    model = _model(cfg)
    D = float(cfg.get("D_z", 1.0))
    protocol = str(cfg.get("protocol", "echo")).lower()
    if protocol not in ("fid", "echo"):
        raise ConfigError("protocol must be 'fid' or 'echo'")
    t = _grid(cfg.get("t_grid"), "t_grid")
    if np.any(t < 0):
        raise ConfigError("t_grid must be non-negative")
    methods = cfg.get("methods", ["two-fluctuator"])
    if isinstance(methods, str):
        methods = [methods]
    bad = [m for m in methods if m not in DECAY_METHODS]
    if bad or not methods:
        raise ConfigError(f"unknown methods {bad}; choose from {DECAY_METHODS}")
    bands_sel = cfg.get("bands", "all")
    pairs = _decay_pairs(cfg, preset, model, D)
    idx = {"all": [0, 1], "slow": [0], "fast": [1]}.get(bands_sel)
    if idx is None:
        raise ConfigError("bands must be 'all', 'slow' or 'fast'")
    if len(model.bands) != 2 and bands_sel != "all":
        raise ConfigError("band selection needs a two-band model")
    if len(model.bands) == 2:
        model = NoiseModel(tuple(model.bands[i] for i in idx))
        pairs = [pairs[i] for i in idx]
    problem = DephasingProblem(model, D, protocol)
    cols = {"t": t}
    for m in methods:
        se = None
        if m == "gaussian":
            vals = gaussian_envelope(problem, t).values
        elif m == "filter-function":
            vals = filter_function_envelope(problem, t).values
        elif m == "two-fluctuator":
            vals = product_envelope(pairs, protocol, t).astype(complex)
        elif m == "ode":
            if len(pairs) == 1:
                pairs2 = pairs + [(1.0, 0.0)]
            else:
                pairs2 = pairs
            (g1, v1), (g2, v2) = pairs2
            y = solve_two_fluctuator_scalar(g1, v1, g2, v2, 1.0, t, protocol, float(cfg.get("omega", 0.0)))
            vals = y[:, 0]
        elif m == "monte-carlo":
            mc = cfg.get("monte_carlo", {})
            traj = int(mc.get("trajectories", cfg.get("trajectories", 10000)))
            if traj < 1:
                raise ConfigError("trajectories must be positive")
            fl = tuple(Fluctuator(v, g) for g, v in pairs if v > 0)
            if not fl:
                vals, se = np.ones_like(t, dtype=complex), np.zeros_like(t)
            else:
                spec = EnsembleSpec(fl, traj, int(cfg.get("seed", 0)), float(max(t.max(), 1e-12)))
                curve = empirical_envelope(spec, protocol, 1.0, t, workers=_threads(args))
                vals, se = curve.values, curve.stderr
        else:
            if preset is None:
                raise ConfigError(f"method {m} needs a preset for its reference rate")
            if m == "gaussian-decay":
                rate = preset.gamma_phi_e if protocol == "echo" else fid_rate_gaussian(preset.v1, preset.v2)
                vals = np.exp(-(rate * t) ** 2).astype(complex)
            else:
                vals = np.exp(-preset.gamma_phi_e * t).astype(complex)
        vals = np.asarray(vals, dtype=complex)
        cols[f"{m}_re"] = vals.real
        cols[f"{m}_im"] = vals.imag
        cols[f"{m}_abs"] = np.abs(vals)
        if se is not None:
            cols[f"{m}_stderr"] = se
    return _csv(cfg["_header"], cols)


DEFAULT_CHECKS = [
    {"gamma": g, "v": v, "protocol": p}
    for g, v in ((1.0, 0.5), (1.0, 1.0), (0.04, 4.92), (1.2, 2.72)) for p in ("fid", "echo")
]


def cmd_validate(cfg, args) -> str:
    traj = int(cfg.get("trajectories", 10000))
    if traj < 1:
        raise ConfigError("trajectories must be at least 1")
    seed = int(cfg.get("seed", 0))
    t = _grid(cfg.get("t_grid", {"start": 0.0, "stop": 3.0, "num": 16}), "t_grid")
    checks = cfg.get("checks", DEFAULT_CHECKS)
    report = []
    for i, chk in enumerate(checks):
        try:
            g, v, p = float(chk["gamma"]), float(chk["v"]), str(chk.get("protocol", "fid"))
        except (KeyError, TypeError, ValueError):
            raise ConfigError(f"check {i} needs gamma, v and protocol") from None
        if p not in ("fid", "echo"):
            raise ConfigError(f"check {i}: protocol must be 'fid' or 'echo'")
        exact = (phi_fid if p == "fid" else phi_echo)(g, v, t)
        if v == 0:
            mean, se = np.ones_like(t), np.zeros_like(t)
        else:
            spec = EnsembleSpec((Fluctuator(v, g),), traj, seed + i, float(t.max()) or 1.0)
            curve = empirical_envelope(spec, p, 1.0, t, workers=_threads(args))
            mean, se = curve.values.real, curve.stderr
        dev = np.abs(mean - exact)
        z = np.where(se > 0, dev / np.where(se > 0, se, 1.0), np.where(dev > 0, np.inf, 0.0))
        report.append({"gamma": g, "v": v, "protocol": p, "max_abs_dev": float(dev.max()),
                       "max_z": float(z.max()), "pass": bool(z.max() <= 3.0)})
    doc = {"config_sha256": cfg["_hash"], "seed": seed, "trajectories": traj, "checks": report,
           "all_pass": all(r["pass"] for r in report)}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def cmd_fit(cfg, args) -> str:
    path = cfg.get("dataset")
    if not path:
        raise ConfigError("fit needs a 'dataset' path")
    preset = _preset(cfg) or get_preset("sample_a")
    slow = cfg.get("slow", {})
    gamma1 = float(slow.get("gamma1", preset.gamma1))
    v1 = float(slow.get("v1", preset.v1))
    gamma_c = float(cfg.get("gamma_c", preset.gamma_c))
    path = Path(path)
    if not path.is_absolute():
        # relative to the config file, so shipped examples run from anywhere
        path = Path(args.config).resolve().parent / path
    ds = load_dataset(path, protocol=cfg.get("protocol", "echo"))
    kw = {}
    if "v2_bounds" in cfg:
        kw["v2_bounds"] = tuple(cfg["v2_bounds"])
    if "gamma0_bounds" in cfg:
        kw["gamma0_bounds"] = tuple(cfg["gamma0_bounds"])
    try:
        res = fit_fast_fluctuator(ds, gamma1, v1, gamma_c, **kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    g_f = fid_rate_gaussian(v1, res.v2)
    A1 = v1 ** 2 / (2 * math.log(gamma_c / preset.gamma_m))
    g_e_model = echo_rate_gaussian(A1, 1.0)
    g_e = float(cfg.get("gamma_phi_E", preset.gamma_phi_e))
    phi = phi_fid if ds.protocol == "fid" else phi_echo
    model = phi(gamma1, v1, ds.t) * phi(res.gamma_2, res.v2, ds.t)
    curve = _csv(cfg["_header"], {"t": ds.t, "data": ds.y, "model": model, "residual": ds.y - model})
    curve_out = cfg.get("curve_out")
    if curve_out is None and args.out not in (None, "-"):
        curve_out = str(Path(args.out).with_suffix("")) + ".curve.csv"
    if curve_out:
        Path(curve_out).write_text(curve)
    extra = {"config_sha256": cfg["_hash"], "protocol": ds.protocol, "gamma1": gamma1, "v1": v1,
             "gamma_c": gamma_c, "gamma_phi_F": g_f, "gamma_phi_E": g_e, "gamma_phi_E_model": g_e_model,
             "rate_ratio": g_f / g_e,
             "curve_csv": curve_out}
    return res.to_json(**extra) + "\n"


def cmd_br_rates(cfg, args) -> str:
    if "flux_qubit" in cfg:
        fq = cfg["flux_qubit"]
        try:
            coupling = FluxQubitParams(float(fq["epsilon"]), float(fq["delta"])).coupling(fq.get("parameter", "epsilon"))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"invalid flux_qubit block: {exc}") from None
    else:
        c = cfg.get("coupling")
        if not c:
            raise ConfigError("br-rates needs a 'coupling' or 'flux_qubit' block")
        try:
            coupling = QubitCoupling(float(c["Omega"]), float(c.get("D_z", 0.0)), float(c.get("D_perp", 0.0)),
                                     c.get("perp_axis", "x"))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"invalid coupling block: {exc}") from None
    if "band" in cfg:
        band = band_from_dict(cfg["band"])
    else:
        band = _model(cfg).bands[-1]
    try:
        rates = br_rates(coupling, band)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    q1, qphi = br_partial_rates_quadrature(coupling, band)
    p1, _ = br_partial_rates_quadrature(coupling, band, kernel="unnormalized")
    doc = {"config_sha256": cfg["_hash"], "coupling": {"Omega": coupling.Omega, "D_z": coupling.D_z,
                                                      "D_perp": coupling.D_perp},
           "band": band.to_dict(), **rates.to_dict(),
           "quadrature": {"gamma1": q1, "gamma_phi": qphi, "gamma1_unnormalized_kernel": p1}}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


HANDLERS = {"spectrum": cmd_spectrum, "correlate": cmd_correlate, "decay": cmd_decay,
            "validate": cmd_validate, "fit": cmd_fit, "br-rates": cmd_br_rates}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fluctuon", description="Fluctuator noise and qubit dephasing toolkit.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON config file")
        sp.add_argument("--out", default=None, help="output path (default stdout)")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--threads", type=int, default=None, help="worker threads for Monte-Carlo runs")
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        try:
            raw = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        cfg = _resolve(args.command, raw, args.seed)
        digest = config_hash(cfg)
        cfg["_hash"] = digest
        cfg["_header"] = f"config_sha256={digest} command={args.command}"
        text = HANDLERS[args.command](cfg, args)
        _write(text, args.out)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, DatasetError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except AccuracyError as exc:
        print(f"accuracy error: {exc}", file=sys.stderr)
        return EXIT_ACCURACY
    except ConvergenceError as exc:
        print(f"convergence error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (ValueError, KeyError, TypeError) as exc:
        # bad values that slipped past the config checks
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
