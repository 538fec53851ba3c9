"""Batch experiment runner.

Usage::

    alloyloc run experiment.yaml
    alloyloc validate experiment.yaml

An experiment file is YAML (JSON also parses) with the top-level keys
``command``, ``params``, ``seed``, ``output_dir`` and ``workers``. Outputs
go to ``output_dir``, else ``$ALLOYLOC_OUTPUT_DIR``, else the working
directory. Exit codes: 0 success, 2 invalid experiment file, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .floquet import commensurate_grid, floquet_spectrum, periodize, torus_hamiltonian
from .green import GoodnessThresholds, green_report
from .lattice import Box
from .model import (analyze_symbol, assemble_hamiltonian, constant_config, default_potential,
                    exponential_kernel, laplacian_kernel, sample_config, spectral_edge)
from .randomness import (ConfigSampler, EVENT_CSV_HEADER, chernoff_check, dudley_check,
                         estimate_event, omega_event, rademacher_sum_bound,
                         suborthogonality_check, trial_seed)
from .uncertainty import ParameterSchedule, ScheduleError, schedule_parameters, up_experiment
from . import msa

__all__ = ["main", "SpecError", "load_spec", "validate_spec", "run_spec", "COMMANDS"]

OUTPUT_ENV = "ALLOYLOC_OUTPUT_DIR"
EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
TOP_KEYS = {"command", "params", "seed", "output_dir", "workers"}


class SpecError(ValueError):
    """Experiment file problems, one message per offending field."""

    def __init__(self, problems):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


_REQUIRED = object()


class _Reader:
    """Typed access to one table of the experiment file; remembers unknown keys."""

    def __init__(self, table, path, problems):
        if table is None:
            table = {}
        if not isinstance(table, dict):
            problems.append(f"{path}: expected a table")
            table = {}
        self.table, self.path, self.problems, self.seen = table, path, problems, set()

    def get(self, key, kind, default=_REQUIRED, check=None, why=""):
        self.seen.add(key)
        where = f"{self.path}.{key}"
        if key not in self.table:
            if default is _REQUIRED:
                self.problems.append(f"{where}: required")
            return None if default is _REQUIRED else default
        raw = self.table[key]
        try:
            value = _coerce(raw, kind)
        except (TypeError, ValueError):
            self.problems.append(f"{where}: expected {_kind_name(kind)}, got {raw!r}")
            return None if default is _REQUIRED else default
        if check is not None and not check(value):
            self.problems.append(f"{where}: {why or 'invalid value'} (got {raw!r})")
        return value

    def sub(self, key, required=False):
        self.seen.add(key)
        if key not in self.table and required:
            self.problems.append(f"{self.path}.{key}: required")
        return _Reader(self.table.get(key), f"{self.path}.{key}", self.problems)

    def finish(self):
        for key in sorted(set(self.table) - self.seen, key=str):
            self.problems.append(f"{self.path}.{key}: unknown key")


def _coerce(raw, kind):
    if isinstance(kind, tuple) and kind[0] == "list":
        if not isinstance(raw, list) or not raw:
            raise ValueError
        return [_coerce(v, kind[1]) for v in raw]
    if isinstance(kind, tuple) and kind[0] == "choice":
        if raw not in kind[1]:
            raise ValueError
        return raw
    if kind is bool:
        if not isinstance(raw, bool):
            raise ValueError
        return raw
    if kind is int:
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise ValueError
        return raw
    if kind is float:
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ValueError
        return float(raw)
    if kind is str:
        if not isinstance(raw, str):
            raise ValueError
        return raw
    raise TypeError(kind)


def _kind_name(kind):
    if isinstance(kind, tuple):
        return f"one of {list(kind[1])}" if kind[0] == "choice" else f"a list of {_kind_name(kind[1])}"
    return {int: "an integer", float: "a number", bool: "true/false", str: "a string"}[kind]


_pos = (lambda v: v > 0, "must be positive")
_nonneg = (lambda v: v >= 0, "must be >= 0")


# ---------------------------------------------------------------------------
# shared parameter blocks

def _kernel(r):
    kind = r.get("type", ("choice", ("laplacian", "exponential")), "laplacian")
    dim = r.get("dim", int, 1, lambda v: v in (1, 2, 3), "must be 1, 2 or 3")
    rate = r.get("rate", float, 1.0, *_pos)
    amp = r.get("amplitude", float, 1.0, *_pos)
    r.finish()
    return {"type": kind, "dim": dim, "rate": rate, "amplitude": amp}


def _make_kernel(k):
    if k["type"] == "laplacian":
        return laplacian_kernel(k["dim"])
    return exponential_kernel(k["dim"], k["rate"], k["amplitude"])


def _potential(r):
    lam = r.get("lam", float, 1.0, *_nonneg)
    tol = r.get("tol", float, 1e-12, lambda v: 0 < v < 1, "must lie in (0, 1)")
    r.finish()
    return {"lam": lam, "tol": tol}


def _make_potential(pp, dim):
    return default_potential(dim, pp["lam"], pp["tol"])


def _schedule(r, problems, path):
    if "N0_target" in r.table:
        target = r.get("N0_target", int, check=_pos[0], why=_pos[1])
        delta = r.get("delta", float, check=lambda v: 0 < v < 1, why="must lie in (0, 1)")
        small = r.get("smallness", float, 0.1, *_pos)
        r.finish()
        spec = {"N0_target": target, "delta": delta, "smallness": small}
    else:
        spec = {key: r.get(key, int, check=_nonneg[0], why=_nonneg[1]) for key in ("L", "Lp", "K", "Kp")}
        spec["delta"] = r.get("delta", float, 1e-8, lambda v: 0 < v < 1, "must lie in (0, 1)")
        spec["smallness"] = r.get("smallness", float, 0.1, *_pos)
        r.finish()
    if any(v is None for v in spec.values()):
        return spec
    try:
        _make_schedule(spec)
    except ScheduleError as exc:
        problems.extend(f"{path}: {msg}" for msg in str(exc).split("; "))
    return spec


def _make_schedule(s):
    if "N0_target" in s:
        return schedule_parameters(s["N0_target"], s["delta"], s["smallness"])
    return ParameterSchedule.from_factors(s["L"], s["Lp"], s["K"], s["Kp"], s["delta"],
                                          smallness=s["smallness"])


# ---------------------------------------------------------------------------
# commands: each has parse(reader, problems) -> params and run(params, ctx)

@dataclass
class _Context:
    seed: int
    workers: int
    out: Path
    header: str
    written: list

    def csv(self, name, header, rows):
        path = self.out / name
        with open(path, "w", newline="") as fh:
            fh.write(f"# {self.header}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        self.written.append(name)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def _parse_symbol(r, problems):
    return {"kernel": _kernel(r.sub("kernel")),
            "grid_resolution": r.get("grid_resolution", int, None, *_pos)}


def _run_symbol(p, ctx):
    prof = analyze_symbol(_make_kernel(p["kernel"]), p["grid_resolution"])
    return {"profile": prof.to_dict()}


def _parse_edge(r, problems):
    return {"kernel": _kernel(r.sub("kernel")), "potential": _potential(r.sub("potential")),
            "sizes": r.get("sizes", ("list", int), [8, 16, 32, 64], lambda v: min(v) >= 1, "must be >= 1")}


def _run_edge(p, ctx):
    kernel = _make_kernel(p["kernel"])
    pot = _make_potential(p["potential"], kernel.dim)
    prof = analyze_symbol(kernel)
    E = spectral_edge(pot, prof)
    rows = []
    for N in p["sizes"]:
        box = Box.centered(N, kernel.dim)
        cfg = constant_config(box.grown(pot.truncation_radius), 1)
        top = float(np.linalg.eigvalsh(assemble_hamiltonian(box, kernel, pot, cfg).matrix)[-1])
        rows.append([N, top, E - top])
    ctx.csv("edge.csv", ["N", "lambda_max", "deficit"], rows)
    return {"E_star": E, "M": prof.M, "kernel_sum": pot.kernel_sum,
            "sizes": [{"N": r[0], "lambda_max": r[1], "deficit": r[2]} for r in rows]}


def _parse_green(r, problems):
    out = {"kernel": _kernel(r.sub("kernel")), "potential": _potential(r.sub("potential")),
           "N": r.get("N", int, check=_pos[0], why=_pos[1]),
           "gamma": r.get("gamma", float, 0.25, *_pos),
           "energy_offsets": r.get("energy_offsets", ("list", float), [0.0]),
           "configs": r.get("configs", int, 1, *_pos),
           "tolerate_singular": r.get("tolerate_singular", bool, True)}
    return out


def _run_green(p, ctx):
    kernel = _make_kernel(p["kernel"])
    pot = _make_potential(p["potential"], kernel.dim)
    E_star = spectral_edge(pot, analyze_symbol(kernel))
    th = GoodnessThresholds(p["gamma"])
    box = Box.centered(p["N"], kernel.dim)
    rows, good = [], 0
    for c in range(p["configs"]):
        cfg = sample_config(trial_seed(ctx.seed, c), box.grown(pot.truncation_radius))
        H = assemble_hamiltonian(box, kernel, pot, cfg)
        for off in p["energy_offsets"]:
            rep = green_report(H, E_star - off, th)
            if not math.isfinite(rep.operator_norm) and not p["tolerate_singular"]:
                raise ArithmeticError(f"energy {E_star - off} is numerically singular")
            rows.append([c, rep.energy, rep.operator_norm, rep.gamma_hat, rep.certified_rate,
                         int(rep.norm_ok), int(rep.decay_ok), int(rep.good), rep.residual])
            good += rep.good
    ctx.csv("green.csv", ["config", "E", "norm", "gamma_hat", "certified_rate",
                          "norm_ok", "decay_ok", "good", "residual"], rows)
    return {"E_star": E_star, "reports": len(rows), "good": good}


def _parse_floquet(r, problems):
    return {"kernel": _kernel(r.sub("kernel")), "potential": _potential(r.sub("potential")),
            "N": r.get("N", int, 2, lambda v: 0 <= v <= 8, "must lie in 0..8"),
            "P": r.get("P", int, 3, *_pos),
            "configs": r.get("configs", int, 5, *_pos)}


def _run_floquet(p, ctx):
    kernel = _make_kernel(p["kernel"])
    pot = _make_potential(p["potential"], kernel.dim)
    N, P = p["N"], p["P"]
    grid = commensurate_grid(N, P, kernel.dim)
    gaps, rows = [], []
    for c in range(p["configs"]):
        cfg = sample_config(trial_seed(ctx.seed, c), Box.centered(N + pot.truncation_radius, kernel.dim))
        V = periodize(cfg, pot, N)
        fl = floquet_spectrum(kernel, V, N, grid)
        torus = np.linalg.eigvalsh(torus_hamiltonian(kernel, V, N, P))
        gaps.append(float(np.max(np.abs(fl - torus))))
        if c == 0:
            from .floquet import bloch_matrix
            for x in grid:
                for i, v in enumerate(bloch_matrix(kernel, V, x, N).eigvalsh()):
                    rows.append(list(x) + [i, v])
    ctx.csv("bands.csv", [f"x{i + 1}" for i in range(kernel.dim)] + ["index", "value"], rows)
    return {"max_gap": max(gaps), "gaps": gaps, "fibers": len(grid)}


def _parse_up(r, problems):
    out = {"K": r.get("K", int, 1, *_nonneg),
           "Lp": r.get("Lp", int, 1, *_nonneg),
           "Kp": r.get("Kp", ("list", int), [3, 5, 9, 15]),
           "dim": r.get("dim", int, 1, lambda v: v in (1, 2), "must be 1 or 2"),
           "draws": r.get("draws", int, 100, *_pos)}
    if None not in out.values():
        for Kp in out["Kp"]:
            try:
                _up_schedule(out["K"], out["Lp"], Kp)
            except (ScheduleError, ValueError) as exc:
                problems.append(f"params.Kp: K'={Kp}: {exc}")
    return out


def _up_schedule(K, Lp, Kp):
    # L is forced by (2L+1)(2K+1) = (2L'+1)(2K'+1)
    q = (2 * Lp + 1) * (2 * Kp + 1)
    if q % (2 * K + 1):
        raise ValueError(f"2K+1 = {2 * K + 1} does not divide {q}")
    L = (q // (2 * K + 1) - 1) // 2
    return ParameterSchedule.from_factors(L, Lp, K, Kp)


def _run_up(p, ctx):
    scheds = [_up_schedule(p["K"], p["Lp"], Kp) for Kp in p["Kp"]]
    rows = up_experiment(scheds, p["draws"], ctx.seed, p["dim"])
    ctx.csv("up.csv", ["K", "Kp", "mean_rel_error", "std_rel_error", "draws"],
            [[r["K"], r["Kp"], r["mean"], r["std"], r["draws"]] for r in rows])
    return {"rows": rows}


def _parse_tails(r, problems):
    return {"samples": r.get("samples", int, 100_000, lambda v: v >= 10, "must be >= 10"),
            "sum_sizes": r.get("sum_sizes", ("list", int), [1, 4, 16, 64], lambda v: min(v) >= 1, "must be >= 1"),
            "family_sizes": r.get("family_sizes", ("list", int), [4, 16, 64, 256],
                                  lambda v: min(v) >= 2, "must be >= 2")}


def _run_tails(p, ctx):
    n = p["samples"]
    rows, chernoff = [], []
    for i, m in enumerate(p["sum_sizes"]):
        rng = np.random.default_rng(np.random.SeedSequence(ctx.seed, spawn_key=(0, i)))
        x = 2.0 * rng.binomial(m, 0.5, size=n) - m
        ts = np.linspace(0.25, 4.0, 16) * math.sqrt(m)
        for label, bound in (("valid", rademacher_sum_bound(m)), ("halved", rademacher_sum_bound(m) / 2)):
            rep = chernoff_check(x, bound, 2.0, ts)
            chernoff.append({"n": m, "bound": label, "violations": rep["violations"]})
            rows += [[m, label, r["t"], r["empirical"], r["bound"], int(r["violated"])] for r in rep["rows"]]
    ctx.csv("chernoff.csv", ["n", "bound", "t", "empirical", "rhs", "violated"], rows)
    fams = []
    for i, N in enumerate(p["family_sizes"]):
        rng = np.random.default_rng(np.random.SeedSequence(ctx.seed, spawn_key=(1, i)))
        fams.append(rng.standard_normal((n, N)))
    dud = dudley_check(fams)
    sub = suborthogonality_check(p["sum_sizes"], n, ctx.seed)
    return {"chernoff": chernoff, "dudley": dud, "suborthogonality": sub}


def _parse_omega(r, problems):
    scheds = r.table.get("schedules")
    r.seen.add("schedules")
    parsed = []
    if not isinstance(scheds, list) or not scheds:
        problems.append("params.schedules: expected a nonempty list of schedules")
    else:
        for i, s in enumerate(scheds):
            parsed.append(_schedule(_Reader(s, f"params.schedules[{i}]", problems), problems,
                                    f"params.schedules[{i}]"))
    return {"kernel": _kernel(r.sub("kernel")), "potential": _potential(r.sub("potential")),
            "schedules": parsed,
            "variant": r.get("variant", ("choice", ("initial", "free_site")), "initial"),
            "trials": r.get("trials", int, 10_000, *_pos)}


def _run_omega(p, ctx):
    kernel = _make_kernel(p["kernel"])
    pot = _make_potential(p["potential"], kernel.dim)
    if not pot.lam > 0:
        raise SpecError(["params.potential.lam: the event needs lam > 0"])
    prof = analyze_symbol(kernel)
    rows, out = [], []
    for s in p["schedules"]:
        sched = _make_schedule(s)
        smp = ConfigSampler(Box.centered(sched.N0 + pot.truncation_radius, kernel.dim))
        est = estimate_event(lambda c: omega_event(c, pot, prof, sched, p["variant"]), smp,
                             p["trials"], ctx.seed, f"omega_{p['variant']}", ctx.workers)
        rows.append(est.csv_row(sched.N0, _short(sched.to_dict())))
        out.append(est.to_dict() | {"Lp": sched.Lp, "Kp": sched.Kp, "N0": sched.N0})
    ctx.csv("omega.csv", EVENT_CSV_HEADER, rows)
    return {"estimates": out}


def _parse_msa(r, problems):
    return {"kernel": _kernel(r.sub("kernel")), "potential": _potential(r.sub("potential")),
            "schedule": _schedule(r.sub("schedule", required=True), problems, "params.schedule"),
            "depth": r.get("depth", int, 2, lambda v: 1 <= v <= 3, "must lie in 1..3"),
            "gamma": r.get("gamma", float, 0.25, *_pos),
            "trials": r.get("trials", int, 20, *_pos),
            "influence_count": r.get("influence_count", int, 3, *_nonneg)}


def _run_msa(p, ctx):
    kernel = _make_kernel(p["kernel"])
    pot = _make_potential(p["potential"], kernel.dim)
    return msa.msa_run(kernel, pot, _make_schedule(p["schedule"]), p["depth"], p["gamma"],
                       p["trials"], ctx.seed, influence_count=p["influence_count"])


def _parse_wegner(r, problems):
    return {"kernel": _kernel(r.sub("kernel")), "potential": _potential(r.sub("potential")),
            "N1": r.get("N1", int, check=_pos[0], why=_pos[1]),
            "energy_offset": r.get("energy_offset", float, 0.0),
            "etas": r.get("etas", ("list", float), [1e-3, 1e-2, 1e-1], lambda v: min(v) > 0, "must be positive"),
            "trials": r.get("trials", int, 200, *_pos)}


def _run_wegner(p, ctx):
    kernel = _make_kernel(p["kernel"])
    pot = _make_potential(p["potential"], kernel.dim)
    E = spectral_edge(pot, analyze_symbol(kernel)) - p["energy_offset"]
    dist = msa.wegner_distances(pot, kernel, Box.centered(p["N1"], kernel.dim), E, p["trials"], ctx.seed)
    ests = [msa.wegner_estimate(pot, kernel, p["N1"], E, eta, p["trials"], ctx.seed, kernel.dim, dist)
            for eta in p["etas"]]
    ctx.csv("wegner.csv", EVENT_CSV_HEADER + ["eta"],
            [e.csv_row(p["N1"], _short(p)) + [eta] for e, eta in zip(ests, p["etas"])])
    return {"E": E, "estimates": [e.to_dict() | {"eta": eta} for e, eta in zip(ests, p["etas"])]}


def _parse_double(r, problems):
    out = {"kernel": _kernel(r.sub("kernel")), "potential": _potential(r.sub("potential")),
           "N": r.get("N", int, check=_pos[0], why=_pos[1]),
           "k1": r.get("k1", ("list", int)),
           "k2": r.get("k2", ("list", int)),
           "delta": r.get("delta", float, 0.1, *_pos),
           "eta": r.get("eta", float, 0.05, *_pos),
           "gamma": r.get("gamma", float, 0.25, *_pos),
           "trials": r.get("trials", int, 100, *_pos)}
    if None not in out.values():
        from .lattice import box_distance
        if len(out["k1"]) != out["kernel"]["dim"] or len(out["k2"]) != out["kernel"]["dim"]:
            problems.append("params.k1/k2: must have one entry per dimension")
        elif box_distance(Box(tuple(out["k1"]), out["N"]), Box(tuple(out["k2"]), out["N"])) <= out["N"] / 5:
            problems.append("params.k2: blocks must be more than N/5 apart")
    return out


def _run_double(p, ctx):
    kernel = _make_kernel(p["kernel"])
    pot = _make_potential(p["potential"], kernel.dim)
    E_star = spectral_edge(pot, analyze_symbol(kernel))
    grid = msa.energy_grid(E_star, p["delta"], p["eta"])
    est = msa.double_bad_probability(pot, kernel, p["N"], p["k1"], p["k2"], grid,
                                     GoodnessThresholds(p["gamma"]), p["trials"], ctx.seed)
    ctx.csv("double_bad.csv", EVENT_CSV_HEADER, [est.csv_row(p["N"], _short(p))])
    return {"estimate": est.to_dict(), "energies": len(grid)}


def _parse_localize(r, problems):
    return {"kernel": _kernel(r.sub("kernel")), "potential": _potential(r.sub("potential")),
            "N": r.get("N", int, 300, *_pos),
            "configs": r.get("configs", int, 50, *_pos),
            "top": r.get("top", int, 5, *_pos)}


def _run_localize(p, ctx):
    kernel = _make_kernel(p["kernel"])
    pot = _make_potential(p["potential"], kernel.dim)
    box = Box.centered(p["N"], kernel.dim)
    rows = []
    for c in range(p["configs"]):
        cfg = sample_config(trial_seed(ctx.seed, c), box.grown(pot.truncation_radius))
        for rank, dg in enumerate(msa.localization_report(assemble_hamiltonian(box, kernel, pot, cfg),
                                                          top=p["top"])):
            rows.append([c, rank, dg.eigenvalue, *dg.peak_site, dg.concentration_radius,
                         dg.decay_slope, dg.decay_slope_stderr, dg.ipr])
    ctx.csv("localize.csv", ["config", "rank", "eigenvalue"]
            + [f"peak{i + 1}" for i in range(kernel.dim)]
            + ["radius95", "decay_slope", "slope_stderr", "ipr"], rows)
    slopes = np.array([r[-3] for r in rows])
    radii = np.array([r[-4] for r in rows])
    return {"pairs": len(rows), "positive_slope_fraction": float(np.mean(slopes > 0)),
            "radius_within_half_fraction": float(np.mean(radii <= p["N"] / 2))}


COMMANDS = {
    "symbol-analyze": (_parse_symbol, _run_symbol),
    "edge": (_parse_edge, _run_edge),
    "green-scan": (_parse_green, _run_green),
    "floquet-check": (_parse_floquet, _run_floquet),
    "up-check": (_parse_up, _run_up),
    "tails-check": (_parse_tails, _run_tails),
    "omega-mc": (_parse_omega, _run_omega),
    "msa-run": (_parse_msa, _run_msa),
    "wegner-mc": (_parse_wegner, _run_wegner),
    "double-bad-mc": (_parse_double, _run_double),
    "localize": (_parse_localize, _run_localize),
}


# ---------------------------------------------------------------------------
# experiment files

def _short(obj):
    return _digest(obj)[:12]


def _digest(obj):
    return hashlib.sha256(_canonical(obj).encode()).hexdigest()


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, tuple):
        return list(v)
    raise TypeError(f"cannot serialize {type(v).__name__}")


def load_spec(path):
    """Parse a YAML/JSON experiment file into a dict; syntax errors raise SpecError."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise SpecError([f"{path}: {exc.strerror}"]) from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise SpecError([f"{path}: {where}: {getattr(exc, 'problem', None) or exc}"]) from None
    if not isinstance(data, dict):
        raise SpecError([f"{path}: top level must be a table"])
    return data


def validate_spec(data):
    """Resolve defaults and check invariants; returns the resolved experiment."""
    problems = []
    for key in sorted(set(data) - TOP_KEYS, key=str):
        problems.append(f"{key}: unknown key")
    command = data.get("command")
    if command not in COMMANDS:
        problems.append(f"command: expected one of {sorted(COMMANDS)}, got {command!r}")
        raise SpecError(problems)
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        problems.append(f"seed: expected a nonnegative integer, got {seed!r}")
    workers = data.get("workers", os.cpu_count() or 1)
    if isinstance(workers, bool) or not isinstance(workers, int) or workers < 1:
        problems.append(f"workers: expected a positive integer, got {workers!r}")
    out = data.get("output_dir")
    if out is not None and not isinstance(out, str):
        problems.append(f"output_dir: expected a string, got {out!r}")
    parse, _ = COMMANDS[command]
    reader = _Reader(data.get("params"), "params", problems)
    params = parse(reader, problems)
    reader.finish()
    if problems:
        raise SpecError(problems)
    return {"command": command, "params": params, "seed": seed, "workers": workers}


def run_spec(data, output_dir=None):
    """Validate and execute; returns ``(record, written files)``."""
    resolved = validate_spec(data)
    out = Path(output_dir or data.get("output_dir") or os.environ.get(OUTPUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    # the worker count never changes results, so it stays out of the record
    spec_rec = {k: v for k, v in resolved.items() if k != "workers"}
    digest = _digest(spec_rec)
    header = (f"alloyloc {__version__} spec_sha256={digest} numpy={np.__version__} "
              f"scipy={scipy.__version__}")
    ctx = _Context(resolved["seed"], resolved["workers"], out, header, [])
    _, run = COMMANDS[resolved["command"]]
    results = run(resolved["params"], ctx)
    record = {"spec": spec_rec, "spec_sha256": digest, "versions": {
        "alloyloc": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
        "results": results, "outputs": sorted(ctx.written)}
    name = f"{resolved['command']}.json"
    (out / name).write_text(json.dumps(record, sort_keys=True, indent=2, default=_jsonable) + "\n")
    return record, sorted(ctx.written + [name])


def main(argv=None):
    parser = argparse.ArgumentParser(prog="alloyloc", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"alloyloc {__version__}")
    sub = parser.add_subparsers(dest="action", required=True)
    p_run = sub.add_parser("run", help="validate and execute an experiment file")
    p_run.add_argument("spec_file")
    p_run.add_argument("--output-dir", help=f"overrides output_dir and ${OUTPUT_ENV}")
    p_val = sub.add_parser("validate", help="check an experiment file without running it")
    p_val.add_argument("spec_file")
    args = parser.parse_args(argv)
    try:
        data = load_spec(args.spec_file)
        if args.action == "validate":
            validate_spec(data)
            print("ok")
            return EXIT_OK
        _, written = run_spec(data, args.output_dir)
    except SpecError as exc:
        for msg in exc.problems:
            print(f"error: {msg}", file=sys.stderr)
        return EXIT_INVALID
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        # raised by model constructors on inputs the schema cannot see
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    for name in written:
        print(name)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
