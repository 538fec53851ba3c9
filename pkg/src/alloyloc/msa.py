"""Multi-scale pipeline: scales, covers, free sites, eigenvalue variation and
Monte Carlo estimators for the bad events that drive the induction.

Eigenvalue indices follow ``numpy.linalg.eigvalsh`` (ascending); negative
indices count from the top, so ``-1`` is the eigenvalue nearest the edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats

from . import __version__
from .green import (GoodnessThresholds, classify_blocks, green_report)
from .lattice import Box, BoxCover, as_site, box_distance, build_cover, sup_norm
from .model import (analyze_symbol, assemble_hamiltonian, sample_config,
                    spectral_edge)
from .randomness import EventEstimate, trial_seed
from .uncertainty import Infeasible, ParameterSchedule

__all__ = [
    "DegenerateEigenvalue",
    "CrossingDetected",
    "NoQualifyingLabel",
    "SeparationViolated",
    "ScaleSchedule",
    "scale_schedule",
    "BoxCover",
    "build_cover",
    "FreeSiteSelection",
    "select_free_sites",
    "eigen_variation",
    "finite_difference_variation",
    "InfluenceReport",
    "influence",
    "influence_bounds",
    "wegner_distances",
    "wegner_estimate",
    "energy_grid",
    "double_bad_probability",
    "EigenDiagnostics",
    "localization_report",
    "block_goodness",
    "msa_run",
]


class DegenerateEigenvalue(ArithmeticError):
    """The tracked eigenvalue is not simple."""


class CrossingDetected(ArithmeticError):
    """The tracked eigenvalue meets a neighbour along the segment."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class NoQualifyingLabel(ValueError):
    """Some paving block holds no qualifying label."""

    def __init__(self, message, blocks=()):
        super().__init__(message)
        self.blocks = list(blocks)


class SeparationViolated(ValueError):
    """Two blocks are closer than ``N/5``."""


# ---------------------------------------------------------------------------
# scales

SNAP_TOLERANCE = 0.01


@dataclass(frozen=True)
class ScaleSchedule:
    """Scales ``N_0 < N_1 < ...`` with ``N_{k+1} = round(N_k^{4/3})``."""

    scales: tuple
    tolerance: float = SNAP_TOLERANCE

    def violations(self):
        out = []
        for a, b in zip(self.scales, self.scales[1:]):
            target = a ** (4 / 3)
            if abs(b - target) > self.tolerance * target:
                out.append(f"{b} is not within {self.tolerance:.0%} of {a}^(4/3) = {target:.2f}")
        return out

    def to_dict(self):
        return {"scales": list(self.scales), "tolerance": self.tolerance}


def scale_schedule(sched, depth):
    """Scales starting at ``sched.N0`` (or an integer ``N0``), ``depth`` in total."""
    if depth < 1:
        raise ValueError("depth must be at least 1")
    N0 = sched.N0 if isinstance(sched, ParameterSchedule) else int(sched)
    scales = [N0]
    for _ in range(depth - 1):
        target = scales[-1] ** (4 / 3)
        nxt = int(round(target))
        if abs(nxt - target) > SNAP_TOLERANCE * target or nxt <= scales[-1]:
            raise Infeasible(f"no integer scale within 1% of {target:.3f}")
        scales.append(nxt)
    return ScaleSchedule(tuple(scales))


# ---------------------------------------------------------------------------
# free sites

@dataclass(frozen=True)
class FreeSiteSelection:
    """Selected labels away from the bad label ``r0`` and their block centers."""

    r0: tuple
    R_set: tuple
    free_sites: tuple
    block_side: int
    dropped_for_distance: tuple = ()

    def to_dict(self):
        return {"r0": list(self.r0), "R": [list(r) for r in self.R_set],
                "free_sites": [list(s) for s in self.free_sites],
                "block_side": self.block_side,
                "dropped_for_distance": [list(r) for r in self.dropped_for_distance]}


def _qualifier(qualifies):
    if callable(qualifies):
        return qualifies
    allowed = {tuple(np.atleast_1d(q).tolist()) for q in qualifies}
    return lambda r: tuple(r) in allowed


def select_free_sites(cover, qualifies, r0_label, block_side=None, exclusion=40, min_distance=None):
    """Pick one qualifying label per paving block, away from ``r0``.

    The label lattice is paved by cubes of side ``ceil((log N)^2 / 3)``; in
    each cube the first qualifying label (lexicographic) is kept. Labels in
    ``[-exclusion, exclusion]^d + r0`` are then removed, and so is any label
    whose block center lies within ``min_distance`` (default ``50 N``) of the
    center of ``r0``.

    Raises
    ------
    NoQualifyingLabel
        A paving cube contains no qualifying label.
    """
    d = cover.dim
    r0 = as_site(r0_label, d)
    if r0 not in cover.labels:
        raise KeyError(f"label {r0} is not in the cover")
    ok = _qualifier(qualifies)
    N = cover.N
    side = block_side or max(1, math.ceil(math.log(N) ** 2 / 3))
    labels = sorted(cover.labels)
    lo = np.min(np.asarray(labels), axis=0)
    cubes = {}
    for lab in labels:
        key = tuple(((np.asarray(lab) - lo) // side).tolist())
        cubes.setdefault(key, []).append(lab)
    chosen, empty = [], []
    for key in sorted(cubes):
        pick = next((lab for lab in cubes[key] if ok(lab)), None)
        if pick is None:
            empty.append(key)
        else:
            chosen.append(pick)
    if empty:
        raise NoQualifyingLabel(f"{len(empty)} paving blocks hold no qualifying label", empty)
    limit = 50 * N if min_distance is None else min_distance
    c0 = np.asarray(cover.labels[r0])
    R, dropped = [], []
    for lab in chosen:
        if sup_norm(np.asarray(lab) - np.asarray(r0)) <= exclusion:
            continue
        if sup_norm(np.asarray(cover.labels[lab]) - c0) <= limit:
            dropped.append(lab)
            continue
        R.append(lab)
    sites = tuple(cover.labels[lab] for lab in R)
    return FreeSiteSelection(r0, tuple(R), sites, side, tuple(dropped))


# ---------------------------------------------------------------------------
# eigenvalue variation

def _resolve_index(n, idx):
    i = idx if idx >= 0 else n + idx
    if not 0 <= i < n:
        raise IndexError(f"eigen index {idx} out of range for order {n}")
    return i


def _simple_eigenpair(matrix, idx, gap_tol):
    vals, vecs = np.linalg.eigh(matrix)
    i = _resolve_index(len(vals), idx)
    gaps = []
    if i > 0:
        gaps.append(vals[i] - vals[i - 1])
    if i < len(vals) - 1:
        gaps.append(vals[i + 1] - vals[i])
    gap = min(gaps) if gaps else math.inf
    return vals[i], vecs[:, i], gap


def _site_response(H, p, site):
    """``dD_n / d eps_site = lam A_{n - site}`` over the box sites."""
    site = np.asarray(as_site(site, H.box.dim))
    diff = H.box.sites() - site
    R = p.truncation_radius
    inside = np.all(np.abs(diff) <= R, axis=1)
    out = np.zeros(len(diff))
    out[inside] = p.profile[tuple((diff[inside] + R).T)]
    return p.lam * out


def eigen_variation(H, p, site, eigen_index, gap_tol=1e-8):
    """``dE/dt_site = lam sum_n A_{n - site} |xi_n|^2`` for one eigenpair.

    Raises
    ------
    DegenerateEigenvalue
        Gap to a neighbouring eigenvalue is at most ``gap_tol``.
    """
    _, vec, gap = _simple_eigenpair(H.matrix, eigen_index, gap_tol)
    if gap <= gap_tol:
        raise DegenerateEigenvalue(f"eigenvalue gap {gap:.3g} <= {gap_tol:g}")
    return float(np.dot(_site_response(H, p, site), vec ** 2))


def finite_difference_variation(H, p, site, eigen_index, h=1e-6):
    """Central difference of the ``eigen_index``-th eigenvalue in ``t_site``.

    ``D`` is linear in ``t_site``, so ``H(t +- h)`` is ``H`` with
    ``+- h lam A_{n - site}`` added to the diagonal; no config is rebuilt.
    """
    step = np.diag(h * _site_response(H, p, site))
    n = H.order
    i = _resolve_index(n, eigen_index)
    up = np.linalg.eigvalsh(H.matrix + step)[i]
    down = np.linalg.eigvalsh(H.matrix - step)[i]
    return float((up - down) / (2 * h))


@dataclass(frozen=True)
class InfluenceReport:
    """Influence of one free site on a tracked eigenvalue.

    ``I_l`` is the endpoint difference ``E(t=1) - E(t=-1)`` and
    ``I_quadrature`` the integral of the variation formula. The bounds are
    kept in log form, ``log_lower = -l log a`` and ``log_upper = -l log b``.
    """

    l_index: int
    I_l: float
    I_quadrature: float
    log_a: float = math.nan
    log_b: float = math.nan

    @property
    def log_lower(self):
        return -self.l_index * self.log_a

    @property
    def log_upper(self):
        return -self.l_index * self.log_b

    @property
    def lower(self):
        return math.exp(self.log_lower)

    @property
    def upper(self):
        return math.exp(self.log_upper)

    def margins(self):
        """``(log I - log lower, log upper - log I)``; both positive when inside."""
        logI = math.log(self.I_l) if self.I_l > 0 else -math.inf
        return logI - self.log_lower, self.log_upper - logI

    def to_dict(self):
        lo, hi = self.margins()
        return {"l": self.l_index, "I": self.I_l, "I_quadrature": self.I_quadrature,
                "log_a": self.log_a, "log_b": self.log_b,
                "log_lower": self.log_lower, "log_upper": self.log_upper,
                "lower_margin": lo, "upper_margin": hi}


def influence_bounds(N, gamma_N, C1=1.0, C2=1.0):
    """``(log a, log b)`` with ``a = exp(C2 (log N)^2 N)``, ``b = exp(C1 gamma_N (log N)^2 N)``."""
    base = math.log(N) ** 2 * N
    return C2 * base, C1 * gamma_N * base


def _track(box, kernel, p, cfg, site, idx, points, gap_tol):
    """Follow the index-ordered branch over ``t`` in ``[-1, 1]``; check by overlaps."""
    site = as_site(site, box.dim)
    ts = np.linspace(-1.0, 1.0, points)
    prev = None
    values = []
    for t in ts:
        H = assemble_hamiltonian(box, kernel, p, cfg.with_overrides({site: float(t)}))
        val, vec, gap = _simple_eigenpair(H.matrix, idx, gap_tol)
        if gap <= gap_tol:
            raise CrossingDetected(f"gap {gap:.3g} at t={t:.4f}", float(t))
        if prev is not None:
            vals, vecs = np.linalg.eigh(H.matrix)
            best = int(np.argmax(np.abs(vecs.T @ prev)))
            if best != _resolve_index(len(vals), idx):
                raise CrossingDetected(f"overlap tracking left the branch at t={t:.4f}", float(t))
        prev = vec
        values.append(val)
    return ts, np.asarray(values)


def influence(box, kernel, p, cfg, site, eigen_index, l_index=1, r0_site=None,
              gamma_N=None, C1=1.0, C2=1.0, points=41, gap_tol=1e-8):
    """Influence of ``site`` on the ``eigen_index``-th eigenvalue of ``H`` on ``box``.

    Computed as the endpoint difference along the tracked branch and as the
    quadrature of :func:`eigen_variation` over ``t`` in ``[-1, 1]``.

    Raises
    ------
    CrossingDetected
        The branch meets a neighbour, or overlap matching disagrees with the
        index-ordered branch.
    """
    site = as_site(site, box.dim)
    ts, vals = _track(box, kernel, p, cfg, site, eigen_index, points, gap_tol)

    def deriv(t):
        H = assemble_hamiltonian(box, kernel, p, cfg.with_overrides({site: float(t)}))
        return eigen_variation(H, p, site, eigen_index, gap_tol)

    quad, _ = integrate.quad(deriv, -1.0, 1.0, epsabs=1e-13, epsrel=1e-11, limit=200)
    log_a = log_b = math.nan
    if gamma_N is not None:
        log_a, log_b = influence_bounds(box.radius, gamma_N, C1, C2)
    return InfluenceReport(int(l_index), float(vals[-1] - vals[0]), float(quad), log_a, log_b)


# ---------------------------------------------------------------------------
# Wegner and double-bad estimators

def block_goodness(kernel, p, E, N, center=None):
    """Predicate ``(cfg, thresholds) -> bool``: is ``Lambda_N(center)`` good at ``E``."""
    box = Box(as_site(center if center is not None else (0,) * kernel.dim, kernel.dim), N)

    def good(cfg, th):
        return green_report(assemble_hamiltonian(box, kernel, p, cfg), E, th).good

    good.box = box
    return good


def _trial_config(seed, box, p):
    return sample_config(seed, box.grown(p.truncation_radius))


def wegner_distances(p, kernel, box, E, trials, seed):
    """``dist(spec H_box, E)`` for each seeded trial."""
    out = np.empty(trials)
    for i in range(trials):
        cfg = _trial_config(trial_seed(seed, i), box, p)
        vals = np.linalg.eigvalsh(assemble_hamiltonian(box, kernel, p, cfg).matrix)
        out[i] = np.min(np.abs(vals - E))
    return out


def wegner_estimate(p, kernel, N1, E, eta, trials, seed, dim=1, distances=None):
    """Estimate ``P(dist(spec H_{N1}, E) < eta)``.

    ``distances`` may carry the output of :func:`wegner_distances` so several
    ``eta`` share the same trials.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    if distances is None:
        distances = wegner_distances(p, kernel, Box.centered(N1, dim), E, trials, seed)
    hits = int(np.sum(np.asarray(distances) < eta))
    return EventEstimate.from_counts(hits, len(distances), seed, "wegner",
                                     {"N1": N1, "E": E, "eta": eta})


def energy_grid(E_star, delta, eta):
    """Energies from ``E* - delta/2`` to ``E*`` with spacing at most ``eta/2``."""
    if not (delta > 0 and eta > 0):
        raise ValueError("delta and eta must be positive")
    n = max(2, math.ceil((delta / 2) / (eta / 2)) + 1)
    return np.linspace(E_star - delta / 2, E_star, n)


def double_bad_probability(p, kernel, N, k1, k2, energies, th, trials, seed, fixed_energy=False):
    """Estimate ``P(exists E in energies: both Lambda_N(k1), Lambda_N(k2) bad)``.

    With ``fixed_energy=True`` each energy is estimated separately and a
    list of estimates is returned.

    Raises
    ------
    SeparationViolated
        ``box_distance`` between the blocks is at most ``N/5``.
    """
    b1 = Box(as_site(k1, kernel.dim), N)
    b2 = Box(as_site(k2, kernel.dim), N)
    if box_distance(b1, b2) <= N / 5:
        raise SeparationViolated(f"blocks at {b1.center} and {b2.center} are within N/5")
    energies = np.atleast_1d(np.asarray(energies, dtype=float))
    lo = np.minimum(b1.lower, b2.lower)
    hi = np.maximum(b1.upper, b2.upper)
    hull = Box(tuple(((lo + hi) // 2).tolist()), int(np.max(hi - lo + 1) // 2 + 1))
    both = np.zeros((trials, len(energies)), dtype=bool)
    for i in range(trials):
        cfg = _trial_config(trial_seed(seed, i), hull, p)
        H1 = assemble_hamiltonian(b1, kernel, p, cfg)
        H2 = assemble_hamiltonian(b2, kernel, p, cfg)
        for e, E in enumerate(energies):
            both[i, e] = (not green_report(H1, E, th).good) and (not green_report(H2, E, th).good)
    if fixed_energy:
        return [EventEstimate.from_counts(int(both[:, e].sum()), trials, seed, "double_bad",
                                          {"E": float(E)}) for e, E in enumerate(energies)]
    return EventEstimate.from_counts(int(both.any(axis=1).sum()), trials, seed, "double_bad",
                                     {"energies": len(energies)})


# ---------------------------------------------------------------------------
# localization diagnostics

@dataclass(frozen=True)
class EigenDiagnostics:
    """Shape statistics of one eigenvector."""

    eigenvalue: float
    peak_site: tuple
    concentration_radius: int
    decay_slope: float
    decay_slope_stderr: float
    ipr: float

    def to_dict(self):
        return {"eigenvalue": self.eigenvalue, "peak_site": list(self.peak_site),
                "concentration_radius": self.concentration_radius,
                "decay_slope": self.decay_slope, "decay_slope_stderr": self.decay_slope_stderr,
                "ipr": self.ipr}


def _diagnose(value, vec, sites, floor):
    amp = np.abs(vec)
    peak = int(np.argmax(amp))
    dist = sup_norm(sites - sites[peak])
    mass = vec ** 2
    by_radius = np.bincount(dist, weights=mass)
    radius = int(np.argmax(np.cumsum(by_radius) >= 0.95 * mass.sum()))
    # fit the per-distance envelope; values at rounding level carry no shape
    env = np.zeros(dist.max() + 1)
    np.maximum.at(env, dist, amp)
    r = np.arange(len(env))
    keep = env > floor * amp[peak]
    slope = stderr = math.nan
    if keep.sum() >= 3:
        fit = stats.linregress(r[keep], np.log(env[keep]))
        slope, stderr = -fit.slope, fit.stderr
    return EigenDiagnostics(float(value), tuple(int(c) for c in sites[peak]), radius,
                            float(slope), float(stderr), float(np.sum(mass ** 2)))


def localization_report(H, edge_window=None, top=None, floor=1e-12):
    """Diagnostics for eigenpairs in ``edge_window`` or for the ``top`` largest.

    Each entry holds the peak site, the smallest sup-norm radius around it
    carrying 95% of the mass, the decay rate fitted to ``log`` of the
    per-distance envelope of ``|xi|`` (positive means decaying), its standard
    error, and the inverse participation ratio ``sum |xi_n|^4``.
    """
    vals, vecs = H.eigh()
    if top is not None:
        pick = np.arange(len(vals) - top, len(vals))[::-1]
    elif edge_window is not None:
        lo, hi = edge_window
        pick = np.flatnonzero((vals >= lo) & (vals <= hi))[::-1]
    else:
        pick = np.arange(len(vals))[::-1]
    sites = H.box.sites()
    return [_diagnose(vals[i], vecs[:, i], sites, floor) for i in pick]


# ---------------------------------------------------------------------------
# run record

def msa_run(kernel, p, sched, depth=2, gamma=None, trials=20, seed=0, eta=None,
            influence_count=3):
    """Small end-to-end pass: scales, one classification per scale, a Wegner
    estimate at the top scale, free sites and an influence table.

    Returns a JSON-ready dict.
    """
    prof = analyze_symbol(kernel)
    E = spectral_edge(p, prof)
    scales = scale_schedule(sched, depth)
    th = GoodnessThresholds(gamma if gamma is not None else 0.25)
    record = {"version": __version__, "schedule": sched.to_dict(),
              "scales": scales.to_dict(), "energy": E, "classifications": []}
    cfg_seed = trial_seed(seed, 0)
    for N, N1 in zip(scales.scales, scales.scales[1:]):
        region = Box.centered(N1, kernel.dim)
        cfg = sample_config(cfg_seed, region.grown(p.truncation_radius))
        cls = classify_blocks(region, N, kernel, p, cfg, E, th)
        rates = [r.certified_rate for r in cls.blocks.values() if r.good]
        record["classifications"].append({
            "N": N, "N1": N1, "blocks": len(cls.blocks), "bad": len(cls.bad_centers),
            "bad_centers": [list(c) for c in cls.bad_centers],
            "gamma_N": min(rates) if rates else None})
    top = scales.scales[-1]
    eta = eta if eta is not None else 1.0 / top
    est = wegner_estimate(p, kernel, top, E, eta, trials, seed, kernel.dim)
    record["wegner"] = est.to_dict() | {"N1": top, "eta": eta}
    # free sites and influences on the first scale pair
    N, N1 = scales.scales[0], scales.scales[min(1, depth - 1)]
    cover = build_cover(N1, N, kernel.dim) if N1 > N else build_cover(N, N, kernel.dim)
    first = record["classifications"][0] if record["classifications"] else None
    bad = {tuple(c) for c in first["bad_centers"]} if first else set()
    qual = [lab for lab, c in cover.labels.items() if c not in bad]
    r0 = min(cover.labels, key=lambda lab: sup_norm(np.asarray(cover.labels[lab])))
    try:
        sel = select_free_sites(cover, qual, r0, exclusion=0, min_distance=0)
        record["free_sites"] = sel.to_dict()
    except NoQualifyingLabel as exc:
        record["free_sites"] = {"error": str(exc), "blocks": [list(b) for b in exc.blocks]}
        sel = None
    table = []
    if sel is not None:
        box = Box.centered(N1, kernel.dim)
        cfg = sample_config(cfg_seed, box.grown(p.truncation_radius))
        gN = first["gamma_N"] if first and first["gamma_N"] else th.gamma
        for l, s in enumerate(sel.free_sites[:influence_count], start=1):
            try:
                rep = influence(box, kernel, p, cfg, s, -1, l, gamma_N=gN, points=21)
                table.append(rep.to_dict() | {"site": list(s)})
            except (CrossingDetected, DegenerateEigenvalue) as exc:
                table.append({"l": l, "site": list(s), "error": str(exc)})
    record["influence"] = table
    return record
