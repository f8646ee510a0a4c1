"""Scenario runner: ``asip <mode> --config <path> [--out DIR] [--seed N] [--threads N]``.

Config files are flat TOML (``key = value``; one table level is not allowed)
or JSON objects with the same keys.  Every run writes CSV tables with a
header row plus ``report.json``.  Exit codes: 0 success, 2 invalid config,
3 numerical failure, 4 not converged (partial results are still written).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analytic import shock_wave, steady_profile
from .jump_mc import OccupationCapError, run_ensemble
from .meanfield import IntegratorConfig, NotConvergedError, evolve, relax
from .model import LatticeParams, derive_rates
from .spectra import (EigenSolverError, HoppingPair, MatrixKind, build_matrix, detect_ep, spectrum,
                      steady_mode, verify_spectral_composition)
from .twa import SdeConfig, phase_diffusion_experiment, run_twa

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_NOT_CONVERGED = 0, 2, 3, 4

MODES = ("steady", "evolve", "mc", "twa", "spectrum", "scan-xi", "phase-diffusion")

_PARAM_KEYS = {"L": int, "gamma_l": float, "gamma_r": float, "kappa_l": float, "kappa_r": float,
               "nbar_l": float, "nbar_r": float}
_TWA_KEYS = {"n_traj": int, "t_end": float, "dt": float, "initial": str, "amplitude": float,
             "phase_policy": str, "t_ref": float, "record_every": int, "block_size": int}
# key -> type, per mode; "*" applies to every mode
SCHEMA = {
    "*": {"mode": str, "seed": int, "threads": int, "out": str, **_PARAM_KEYS},
    "steady": {"closure": str},
    "evolve": {"t_max": float, "dt_max": float, "rel_tol": float, "abs_tol": float, "steady_tol": float,
               "initial": str, "step_height": float, "step_position": float, "record_every": int},
    "mc": {"n_traj": int, "t_end": float, "count_from": float, "block_size": int, "method": str, "dt": float},
    "twa": dict(_TWA_KEYS),
    "phase-diffusion": {**_TWA_KEYS, "floor_factor": float},
    "spectrum": {"kind": str, "j_l": float, "j_r": float, "gamma_s": float, "speed_c": float},
    "scan-xi": {"gamma_a_values": list, "nbar_r_values": list},
}


class ConfigError(ValueError):
    pass


def _check_type(key, value, kind):
    if kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif kind is list:
        ok = isinstance(value, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise ConfigError(f"key {key!r} must be of type {kind.__name__}, got {value!r}")


@dataclass
class ScenarioConfig:
    """A validated scenario: lattice parameters plus mode-specific options."""

    mode: str
    params: LatticeParams
    options: dict = field(default_factory=dict)
    seed: int = 0
    threads: int = 1
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict, mode: str | None = None) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a key-value mapping")
        mode = mode or data.get("mode")
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}; got {mode!r}")
        if "mode" in data and data["mode"] != mode:
            raise ConfigError(f"config mode {data['mode']!r} conflicts with command-line mode {mode!r}")
        allowed = {**SCHEMA["*"], **SCHEMA[mode]}
        unknown = sorted(set(data) - set(allowed))
        if unknown:
            raise ConfigError(f"unknown keys for mode {mode!r}: {', '.join(unknown)}")
        for key, value in data.items():
            _check_type(key, value, allowed[key])
        if "L" not in data:
            raise ConfigError("missing required key 'L'")
        try:
            params = LatticeParams(**{k: data[k] for k in _PARAM_KEYS if k in data})
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        options = {k: v for k, v in data.items() if k in SCHEMA[mode]}
        seed = data.get("seed", 0)
        if not 0 <= seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        threads = data.get("threads", 1)
        if threads < 1:
            raise ConfigError("threads must be >= 1")
        return cls(mode, params, options, seed, threads, dict(data))

    @classmethod
    def load(cls, path, mode: str | None = None) -> "ScenarioConfig":
        path = Path(path)
        try:
            text = path.read_bytes()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        try:
            if path.suffix.lower() == ".json":
                data = json.loads(text)
            else:
                data = tomllib.loads(text.decode())
        except (ValueError, UnicodeDecodeError) as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        if any(isinstance(v, dict) for v in (data.values() if isinstance(data, dict) else [])):
            raise ConfigError("config must be flat: nested tables are not allowed")
        return cls.from_dict(data, mode)

    def canonical(self) -> dict:
        data = dict(self.raw)
        data["mode"] = self.mode
        data["seed"] = self.seed
        data.pop("threads", None)
        data.pop("out", None)
        return data

    @property
    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def fmt(x) -> str:
    """17 significant digits, enough to round-trip a double."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, complex):
        return [_jsonable(obj.real), _jsonable(obj.imag)]
    return obj


class Outcome:
    """Tables and results collected while a mode runs."""

    def __init__(self, out: Path):
        self.out = out
        self.tables: dict[str, str] = {}
        self.results: dict = {}
        self.converged = True

    def table(self, name, header, rows):
        fname = f"{name}.csv"
        write_csv(self.out / fname, header, rows)
        self.tables[name] = fname


def _profile_rows(n, se=None):
    if se is None:
        return [(p, x) for p, x in enumerate(n, start=1)]
    return [(p, x, s) for p, x, s in zip(range(1, len(n) + 1), n, se)]


def _mode_steady(cfg, res: Outcome):
    prof = steady_profile(cfg.params, cfg.options.get("closure", "finite"))
    res.table("profile", ["p", "n_p"], _profile_rows(prof.occupations))
    res.results.update(profile=prof.occupations, current=prof.current)


def _front_position(n, height):
    """Site (interpolated) where the profile first exceeds half the front height."""
    half = 0.5 * height
    idx = np.nonzero(n >= half)[0]
    if idx.size == 0:
        return math.nan
    k = int(idx[0])
    if k == 0:
        return 1.0
    return k + (half - n[k - 1]) / (n[k] - n[k - 1])


def _mode_evolve(cfg, res: Outcome):
    o = cfg.options
    p = cfg.params
    keys = ("t_max", "dt_max", "rel_tol", "abs_tol", "steady_tol")
    icfg = IntegratorConfig(**{k: o[k] for k in keys if k in o}, record=True)
    initial = o.get("initial", "zero")
    if initial == "zero":
        n0 = np.zeros(p.L)
    elif initial == "step":
        height = o.get("step_height", p.nbar_r)
        pos = o.get("step_position", float(p.L))
        n0 = np.where(np.arange(1, p.L + 1) >= pos, height, 0.0)
    else:
        raise ConfigError(f"unknown evolve initial state {initial!r}")
    run = evolve(n0, p, icfg)
    every = max(1, o.get("record_every", 1))
    height = o.get("step_height", p.nbar_r)
    states = run.states[::every] + ([run.states[-1]] if (len(run.states) - 1) % every else [])
    res.table("series", ["t", "total", "front", "dn_dt_norm"],
              [(s.t, float(np.sum(s.n)), _front_position(s.n, height), s.dn_dt_norm) for s in states])
    res.table("profile", ["p", "n_p"], _profile_rows(run.final.n))
    res.results.update(profile=run.final.n, t_final=run.final.t, steps=run.steps,
                       rejected_negative=run.rejected_negative,
                       max_conservation_error=run.max_conservation_error)
    if initial == "step" and p.gamma_a > 0:
        res.results["front_speed_prediction"] = shock_wave(height, p).speed
    res.converged = run.converged


def _mode_mc(cfg, res: Outcome):
    o = cfg.options
    ens = run_ensemble(cfg.params, o.get("n_traj", 10000), o.get("t_end", 50.0), cfg.seed,
                       count_from=o.get("count_from"), method=o.get("method", "gillespie"),
                       dt=o.get("dt"), threads=cfg.threads, block_size=o.get("block_size", 1024))
    m, se = ens.mean()
    g2, g2se = ens.g2()
    j, jse = ens.current()
    cov = ens.covariance()
    L = cfg.params.L
    res.table("profile", ["p", "n_p", "stderr"], _profile_rows(m, se))
    res.table("g2", ["p", "g2", "stderr"], _profile_rows(g2, g2se))
    res.table("current", ["bond", "j", "stderr"], [(b, x, s) for b, x, s in zip(range(L + 1), j, jse)])
    res.table("covariance", ["p", "q", "c_pq"], [(a + 1, b + 1, cov[a, b]) for a in range(L) for b in range(L)])
    res.results.update(profile=m, profile_stderr=se, current=float(j.mean()), g2=g2, g2_stderr=g2se)


def _sde_config(cfg, keys=_TWA_KEYS):
    o = {k: v for k, v in cfg.options.items() if k in keys}
    return SdeConfig(seed=cfg.seed, threads=cfg.threads, **o)


def _mode_twa(cfg, res: Outcome):
    ens = run_twa(cfg.params, _sde_config(cfg))
    est = ens.estimates()
    n, se = ens.density()
    L = cfg.params.L
    res.table("profile", ["p", "n_p", "stderr"], _profile_rows(n, se))
    res.table("g2", ["p", "g2", "stderr"], _profile_rows(est.g2, est.g2_stderr))
    res.table("coherence", ["tau", "p", "g1_re", "g1_im"],
              [(t, p + 1, est.g1[k, p].real, est.g1[k, p].imag) for k, t in enumerate(est.tau) for p in range(L)])
    res.table("mean_amp", ["t", "mean_amp", "stderr"], zip(est.mean_amp_times, est.mean_amp, est.mean_amp_stderr))
    centres = 0.5 * (est.hist_edges[1:] + est.hist_edges[:-1])
    res.table("wigner_hist", ["p", "re", "im", "count"],
              [(p + 1, centres[i], centres[j], est.hist_complex[p, i, j])
               for p in range(L) for i, j in zip(*np.nonzero(est.hist_complex[p]))])
    res.table("mod2_hist", ["p", "lo", "hi", "count"],
              [(p + 1, est.hist_mod2_edges[p, k], est.hist_mod2_edges[p, k + 1], est.hist_mod2[p, k])
               for p in range(L) for k in range(est.hist_mod2.shape[1])])
    res.results.update(profile=n, profile_stderr=se, g2=est.g2, g2_stderr=est.g2_stderr)


def _mode_phase_diffusion(cfg, res: Outcome):
    sde = _sde_config(cfg)
    if "initial" not in cfg.options:
        sde = SdeConfig(**{**sde.__dict__, "initial": "coherent"})
    fit = phase_diffusion_experiment(cfg.params, sde, cfg.options.get("floor_factor", 5.0))
    res.table("mean_amp", ["t", "mean_amp"], zip(fit.times, fit.mean_amp))
    res.results.update(tau_coh=fit.tau_coh, tau_pred=fit.tau_pred, fit_start=fit.t_start,
                       fit_stop=fit.t_stop, amplified=fit.amplified, current=fit.current)
    res.converged = fit.amplified and math.isfinite(fit.tau_coh)


def _mode_spectrum(cfg, res: Outcome):
    o, p = cfg.options, cfg.params
    kind = MatrixKind(o.get("kind", "neumann_h"))
    if "gamma_s" in o or "speed_c" in o:
        if not ("gamma_s" in o and "speed_c" in o):
            raise ConfigError("gamma_s and speed_c must be given together")
        hop = HoppingPair.from_fluctuations(o["gamma_s"], o["speed_c"])
    elif "j_l" in o or "j_r" in o:
        if not ("j_l" in o and "j_r" in o):
            raise ConfigError("j_l and j_r must be given together")
        hop = HoppingPair(o["j_l"], o["j_r"])
    else:
        hop = HoppingPair.from_params(p)
    mat = build_matrix(kind, hop, p.L)
    spec = spectrum(mat)
    ep = detect_ep(mat)
    res.table("eigenvalues", ["k", "re", "im", "localization"],
              [(k, e.real, e.imag, spec.localization[k]) for k, e in enumerate(spec.eigenvalues)])
    res.results.update(condition_number=spec.condition_number, min_gap=spec.min_gap, ep_flag=spec.ep_flag,
                       reliable=spec.reliable, ep_order=ep.order, ep_eigenvalue=ep.eigenvalue)
    if kind is MatrixKind.NEUMANN_H and hop.gamma_s is not None and hop.gamma_s > 0:
        rep = verify_spectral_composition(hop.gamma_s, hop.speed_c, p.L)
        psi = steady_mode(hop.gamma_s, hop.speed_c, p.L)
        res.table("steady_mode", ["p", "psi"], _profile_rows(psi))
        res.results["composition"] = {
            "ok": rep.ok, "max_pair_distance": rep.max_pair_distance,
            "steady_residual": rep.steady_residual, "factorization_error": rep.factorization_error,
            "current_block_error": rep.current_block_error, "gradient_map_error": rep.gradient_map_error,
        }
    res.results["eigenvalues"] = spec.eigenvalues


def _mode_scan_xi(cfg, res: Outcome):
    o, p = cfg.options, cfg.params
    gammas = o.get("gamma_a_values") or list(np.linspace(0.0, p.gamma_l, 21))
    nbars = o.get("nbar_r_values") or [p.nbar_r]
    rows = []
    for ga in gammas:
        if not 0 <= ga <= p.gamma_l:
            raise ConfigError(f"gamma_a value {ga} outside [0, gamma_l]")
        for nb in nbars:
            r = derive_rates(p.replace(gamma_r=p.gamma_l - ga, nbar_r=nb))
            rows.append((ga, nb, r.xi, r.phase.value, r.n_inf, r.current_j, r.speed_c, r.gamma_a_crit))
    res.table("xi", ["gamma_a", "nbar_r", "xi", "phase", "n_inf", "current", "speed_c", "gamma_a_crit"], rows)
    res.results["points"] = len(rows)


RUNNERS = {"steady": _mode_steady, "evolve": _mode_evolve, "mc": _mode_mc, "twa": _mode_twa,
           "spectrum": _mode_spectrum, "scan-xi": _mode_scan_xi, "phase-diffusion": _mode_phase_diffusion}


def _derived(params):
    try:
        return derive_rates(params).to_dict()
    except ValueError as exc:
        return {"error": str(exc)}


def run(cfg: ScenarioConfig, out) -> tuple[int, dict]:
    """Execute a scenario, write its tables and ``report.json``; return ``(exit code, report)``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    res = Outcome(out)
    start = time.perf_counter()
    status, error = "ok", None
    try:
        RUNNERS[cfg.mode](cfg, res)
    except ConfigError as exc:
        status, error = "invalid", {"type": "invalid_config", "message": str(exc)}
    except NotConvergedError as exc:
        status, error = "not_converged", {"type": "not_converged", "message": str(exc)}
        res.converged = False
    except (ValueError, ArithmeticError, EigenSolverError, OccupationCapError, np.linalg.LinAlgError) as exc:
        status, error = "numerical_failure", {"type": "numerical_failure", "message": str(exc)}
    if status == "ok" and not res.converged:
        status = "not_converged"
    report = {
        "version": __version__,
        "mode": cfg.mode,
        "config": cfg.canonical(),
        "config_hash": cfg.hash,
        "seed": cfg.seed,
        "threads": cfg.threads,
        "params": cfg.params.to_dict(),
        "derived": _derived(cfg.params),
        "status": status,
        "converged": res.converged,
        "tables": res.tables,
        "results": res.results,
        "wall_clock_s": time.perf_counter() - start,
    }
    if error:
        report["error"] = error
    with open(out / "report.json", "w") as fh:
        json.dump(_jsonable(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    code = {"ok": EXIT_OK, "invalid": EXIT_INVALID, "numerical_failure": EXIT_NUMERICAL,
            "not_converged": EXIT_NOT_CONVERGED}[status]
    return code, report


@dataclass
class FieldDiff:
    path: str
    max_abs: float
    max_rel: float
    tolerance: float
    ok: bool


@dataclass
class DiffSummary:
    diffs: list

    @property
    def failures(self) -> list:
        return [d for d in self.diffs if not d.ok]

    @property
    def ok(self) -> bool:
        return not self.failures

    def __str__(self):
        if self.ok:
            return "reports agree"
        return "\n".join(f"{d.path}: max rel {d.max_rel:.3e}, max abs {d.max_abs:.3e} (tol {d.tolerance:.1e})"
                         for d in self.failures)


def _numeric(x):
    try:
        arr = np.asarray(x, dtype=float)
    except (TypeError, ValueError):
        return None
    return arr


def compare(report_a, report_b, tolerances: dict | None = None, default_rtol: float = 1e-9,
            sigma: float | None = None) -> DiffSummary:
    """Field-by-field comparison of the ``results`` of two reports.

    ``tolerances`` maps result names to relative tolerances.  With ``sigma``,
    a field with a ``<name>_stderr`` companion in either report is instead
    compared against ``sigma`` times the combined standard error.  Only
    differences are listed, so identical reports give an empty summary.
    """
    a = report_a["results"] if "results" in report_a else report_a
    b = report_b["results"] if "results" in report_b else report_b
    tolerances = tolerances or {}
    diffs = []
    for key in sorted(set(a) & set(b)):
        if key.endswith("_stderr"):
            continue
        va, vb = _numeric(a[key]), _numeric(b[key])
        if va is None or vb is None:
            if a[key] != b[key]:
                diffs.append(FieldDiff(key, math.inf, math.inf, 0.0, False))
            continue
        if va.shape != vb.shape:
            raise ValueError(f"incompatible shapes for {key!r}: {va.shape} vs {vb.shape}")
        delta = np.abs(va - vb)
        if not np.any(delta) and np.array_equal(np.isnan(va), np.isnan(vb)):
            continue
        scale = np.maximum(np.abs(va), np.abs(vb))
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(scale > 0, delta / scale, 0.0)
        se_a, se_b = a.get(key + "_stderr"), b.get(key + "_stderr")
        if sigma is not None and (se_a is not None or se_b is not None):
            se = np.sqrt(sum(np.asarray(s, float) ** 2 for s in (se_a, se_b) if s is not None))
            tol = float(sigma)
            ok = bool(np.all(delta <= sigma * se))
        else:
            tol = tolerances.get(key, default_rtol)
            ok = bool(np.all(rel <= tol))
        diffs.append(FieldDiff(key, float(np.nanmax(delta)), float(np.nanmax(rel)), tol, ok))
    return DiffSummary(diffs)


def _threads(arg):
    if arg is not None:
        return arg
    env = os.environ.get("ASIP_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"ASIP_THREADS must be an integer, got {env!r}") from None
    return None


def _fail(code, kind, message, out=None):
    err = {"status": kind, "error": {"type": kind, "message": message}}
    print(json.dumps(err), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="asip", description="Bosonic transport scenario runner.")
    parser.add_argument("--version", action="version", version=f"asip {__version__}")
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        sp = sub.add_parser(mode)
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=None)
    cp = sub.add_parser("compare", help="compare two report.json files")
    cp.add_argument("report_a")
    cp.add_argument("report_b")
    cp.add_argument("--rtol", type=float, default=1e-9)
    cp.add_argument("--sigma", type=float, default=None)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK

    if args.mode == "compare":
        try:
            with open(args.report_a) as fa, open(args.report_b) as fb:
                summary = compare(json.load(fa), json.load(fb), default_rtol=args.rtol, sigma=args.sigma)
        except (OSError, ValueError, KeyError) as exc:
            return _fail(EXIT_INVALID, "invalid_input", str(exc))
        print(json.dumps(_jsonable({"ok": summary.ok, "diffs": [d.__dict__ for d in summary.diffs]}), indent=2))
        return EXIT_OK if summary.ok else 1

    try:
        cfg = ScenarioConfig.load(args.config, args.mode)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("seed must be an unsigned 64-bit integer")
            cfg.seed = args.seed
        threads = _threads(args.threads)
        if threads is not None:
            if threads < 1:
                raise ConfigError("threads must be >= 1")
            cfg.threads = threads
    except ConfigError as exc:
        return _fail(EXIT_INVALID, "invalid_config", str(exc))
    out = args.out or cfg.raw.get("out") or f"asip-{cfg.mode}-out"
    code, report = run(cfg, out)
    if code != EXIT_OK:
        print(json.dumps(_jsonable({"status": report["status"], "error": report.get("error"),
                                    "out": str(out)})), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
