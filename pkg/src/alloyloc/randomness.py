"""Correlation sums, sub-Gaussian tail checks and Monte Carlo events.

Events are predicates over :class:`~alloyloc.model.DisorderConfig` plus a
sampler; nothing here enumerates subsets of the configuration space except
:func:`exact_probability`, which is limited to small windows.
"""

from __future__ import annotations

import csv
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import optimize, special, stats

from .lattice import Box, as_site
from .model import DisorderConfig, potential_on_box, sample_config

__all__ = [
    "AllZero",
    "CorrelationSum",
    "maximizer_residues",
    "corr_sum",
    "correlation_table",
    "omega_event",
    "OrliczEstimate",
    "estimate_orlicz",
    "chernoff_check",
    "rademacher_sum_bound",
    "dudley_check",
    "suborthogonality_check",
    "trial_seed",
    "ConfigSampler",
    "EventEstimate",
    "evaluate_trials",
    "estimate_event",
    "wilson_interval",
    "trim1",
    "trim2",
    "trim2_set",
    "exact_probability",
    "write_event_csv",
]


class AllZero(ValueError):
    """Every sample is zero, so no Orlicz scale exists."""


# ---------------------------------------------------------------------------
# correlation sums

@dataclass(frozen=True)
class CorrelationSum:
    """One of the block sums ``S``, ``N`` or ``I`` at ``(j, jp, kp)``."""

    kind: str
    j: int
    jp: int
    kp: tuple
    value: complex

    @property
    def modulus(self):
        return abs(self.value)


def maximizer_residues(thetas, N0):
    """Integers ``k_j`` with ``k_j - (2N0+1) theta_j`` in ``[-1/2, 1/2)``."""
    q = 2 * N0 + 1
    return np.floor(q * np.atleast_2d(np.asarray(thetas, dtype=float)) + 0.5).astype(np.int64)


def _phase(kind, thetas, j, jp, N0):
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if kind == "S":
        k = maximizer_residues(thetas, N0)
        return (k[j] - k[jp]) / (2 * N0 + 1)
    return thetas[j] - thetas[jp]


def _prepare(kind, cfg):
    if kind not in ("S", "N", "I"):
        raise ValueError(f"kind must be 'S', 'N' or 'I', got {kind!r}")
    if kind == "I":
        # D is linear in eps, so dropping the l'+m = 0 term is the same as
        # evaluating with site 0 set to zero
        return cfg.with_overrides({(0,) * cfg.dim: 0.0})
    return cfg


def corr_sum(kind, p, cfg, thetas, j, jp, kp, sched):
    """Evaluate one correlation sum.

    ``(2L'+1)^{-d} sum_{l' in Lambda_{L'}} exp(-2 pi i phi.l') D_{l'+k'(2L'+1)}``
    where ``phi`` is ``theta_j - theta_jp`` for ``N`` and ``I`` and
    ``(k_j - k_jp)/(2N0+1)`` for ``S``. ``I`` drops every contribution of
    ``eps_0``. Indices ``j, jp`` are 0-based positions in ``thetas``.
    """
    cfg = _prepare(kind, cfg)
    kp = as_site(kp, p.dim)
    if np.max(np.abs(kp)) > sched.Kp:
        raise ValueError(f"k' = {kp} lies outside Lambda_{sched.Kp}")
    width = 2 * sched.Lp + 1
    block = Box(tuple(c * width for c in kp), sched.Lp)
    D = potential_on_box(p, cfg, block)
    lp = block.sites() - np.asarray(block.center)
    phi = np.broadcast_to(_phase(kind, thetas, j, jp, sched.N0), (p.dim,))
    value = np.sum(np.exp(-2j * np.pi * (lp @ phi)) * D) / width ** p.dim
    return CorrelationSum(kind, int(j), int(jp), kp, complex(value))


def correlation_table(kind, p, cfg, thetas, sched):
    """All sums as an array of shape ``(J, J, (2K'+1)^d)``, ``k'`` in index order."""
    cfg = _prepare(kind, cfg)
    d = p.dim
    width = 2 * sched.Lp + 1
    nk = 2 * sched.Kp + 1
    D = potential_on_box(p, cfg, Box.centered(sched.N0, d)).reshape((nk, width) * d)
    # axes (k'_1, l'_1, k'_2, l'_2, ...) -> (k'_1..k'_d, l'_1..l'_d)
    order = list(range(0, 2 * d, 2)) + list(range(1, 2 * d, 2))
    blocks = D.transpose(order).reshape(nk ** d, width ** d)
    lp = Box.centered(sched.Lp, d).sites()
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    J = len(thetas)
    out = np.empty((J, J, nk ** d), dtype=complex)
    for j in range(J):
        for jp in range(J):
            phi = np.broadcast_to(_phase(kind, thetas, j, jp, sched.N0), (d,))
            out[j, jp] = blocks @ np.exp(-2j * np.pi * (lp @ phi)) / width ** d
    return out


def omega_event(cfg, p, prof, sched, variant="initial"):
    """Membership in the initial-scale bad event.

    ``initial``: ``sup |N| >= lam sum A / (2 J^2)``.
    ``free_site``: ``sup |I| >= lam sum A / (4 J^2)``.
    """
    if not p.lam > 0:
        raise ValueError("the event is degenerate at lam = 0; need lam > 0")
    J = prof.J
    if variant == "initial":
        kind, thr = "N", p.sup_bound / (2 * J ** 2)
    elif variant == "free_site":
        kind, thr = "I", p.sup_bound / (4 * J ** 2)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    table = correlation_table(kind, p, cfg, prof.maximizers, sched)
    return bool(np.abs(table).max() >= thr)


# ---------------------------------------------------------------------------
# Orlicz norms and tail checks

@dataclass(frozen=True)
class OrliczEstimate:
    alpha: float
    norm_estimate: float
    sample_count: int


def estimate_orlicz(samples, alpha=2.0, rtol=1e-10):
    """Scale ``s`` with empirical ``mean(exp((|f|/s)^alpha)) = 2``.

    Raises
    ------
    AllZero
        No nonzero sample.
    """
    f = np.abs(np.asarray(samples, dtype=float)).ravel()
    if f.size == 0:
        raise ValueError("need at least one sample")
    top = f.max()
    if not top > 0:
        raise AllZero("all samples are zero")
    n = f.size
    x = f / top

    # in units of the largest sample; log-mean-exp avoids overflow
    def excess(s):
        return special.logsumexp((x / s) ** alpha) - math.log(n) - math.log(2.0)

    lo = math.log(2 * n) ** (-1 / alpha)
    hi = math.log(2) ** (-1 / alpha)
    if excess(hi) >= 0:
        s = hi
    else:
        s = optimize.brentq(excess, lo, hi, rtol=rtol, xtol=1e-300)
    return OrliczEstimate(float(alpha), float(s * top), n)


def rademacher_sum_bound(n):
    """Upper bound on the psi_2 norm of a sum of ``n`` Rademacher signs.

    Even moments of the sum are dominated by those of ``N(0, n)``, whose
    psi_2 norm is ``sqrt(8n/3)``. For ``n = 1`` the exact ``1/sqrt(ln 2)``
    is returned.
    """
    if n < 1:
        raise ValueError("n must be positive")
    return 1 / math.sqrt(math.log(2)) if n == 1 else math.sqrt(8 * n / 3)


def chernoff_check(samples, norm_upper_bound, alpha=2.0, thresholds=(0.5, 1.0, 2.0), atol=1e-12):
    """Compare empirical tails with ``2 exp(-(t/bound)^alpha)``.

    Each row is ``{t, empirical, bound, slack, violated}``; the slack is
    ``4 sqrt(p(1-p)/n)``.
    """
    f = np.abs(np.asarray(samples, dtype=float)).ravel()
    n = f.size
    rows = []
    for t in thresholds:
        emp = float(np.mean(f >= t))
        rhs = float(2 * math.exp(-((t / norm_upper_bound) ** alpha)))
        slack = 4 * math.sqrt(emp * (1 - emp) / n)
        rows.append({"t": float(t), "empirical": emp, "bound": rhs, "slack": slack,
                     "violated": emp > rhs + slack + atol})
    return {"rows": rows, "violations": sum(r["violated"] for r in rows), "samples": n}


def dudley_check(families, alpha=2.0):
    """Ratio ``|max_i |X_i||_psi / (sqrt(log N) max_i |X_i|_psi)`` per family.

    ``families`` holds ``(trials, N)`` sample matrices with ``N >= 2``.
    """
    rows = []
    for fam in families:
        X = np.asarray(fam, dtype=float)
        if X.ndim != 2 or X.shape[1] < 2:
            raise ValueError("each family needs N >= 2 variables (columns)")
        n_var = X.shape[1]
        top = estimate_orlicz(np.abs(X).max(axis=1), alpha).norm_estimate
        each = max(estimate_orlicz(X[:, i], alpha).norm_estimate for i in range(n_var))
        rows.append({"N": n_var, "max_norm": top, "individual_norm": each,
                     "ratio": top / (math.sqrt(math.log(n_var)) * each)})
    return rows


def suborthogonality_check(ns=(1, 4, 16, 64), trials=100_000, seed=0, correlated=False):
    """``|sum_i eps_i|^2_psi2 / (n |eps_1|^2_psi2)`` for Rademacher sums.

    With ``correlated=True`` every term is the same sign, which makes the
    ratio grow like ``n``.
    """
    rows = []
    for i, n in enumerate(ns):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        if correlated:
            eps = 2.0 * rng.integers(0, 2, size=(trials, 1)) - 1.0
            total = n * eps[:, 0]
        else:
            # a sum of n fair signs is 2 Binomial(n, 1/2) - n
            eps = 2.0 * rng.integers(0, 2, size=(trials, 1)) - 1.0
            total = 2.0 * rng.binomial(n, 0.5, size=trials) - n if n > 1 else eps[:, 0]
        single = estimate_orlicz(eps[:, 0]).norm_estimate
        whole = estimate_orlicz(total).norm_estimate
        rows.append({"n": int(n), "ratio": whole ** 2 / (n * single ** 2)})
    return rows


# ---------------------------------------------------------------------------
# Monte Carlo events

def trial_seed(master, i):
    """Per-trial 64-bit seed from a splittable counter on ``master``."""
    words = np.random.SeedSequence(int(master), spawn_key=(int(i),)).generate_state(2, np.uint32)
    return int(words[0]) | (int(words[1]) << 32)


@dataclass(frozen=True)
class ConfigSampler:
    """I.i.d. fair signs on ``window``; callable on a per-trial seed."""

    window: Box
    fill: str = "plus"

    def __call__(self, seed):
        return sample_config(seed, self.window, self.fill)

    def to_dict(self):
        return {"window": self.window.to_dict(), "fill": self.fill}


def wilson_interval(hits, trials, confidence=0.95):
    ci = stats.binomtest(int(hits), int(trials)).proportion_ci(confidence, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass(frozen=True)
class EventEstimate:
    """Hit count of a predicate over seeded trials with a Wilson interval."""

    hits: int
    trials: int
    p_hat: float
    wilson_lo: float
    wilson_hi: float
    seed: int
    name: str = "event"
    extra: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_counts(cls, hits, trials, seed, name="event", extra=None):
        lo, hi = wilson_interval(hits, trials)
        p = hits / trials
        return cls(int(hits), int(trials), p, min(lo, p), max(hi, p), int(seed), name, extra or {})

    @property
    def half_width(self):
        return (self.wilson_hi - self.wilson_lo) / 2

    def csv_row(self, N="", params_hash=""):
        return [self.name, N, params_hash, self.hits, self.trials, repr(self.p_hat),
                repr(self.wilson_lo), repr(self.wilson_hi), self.seed]

    def to_dict(self):
        return {"name": self.name, "hits": self.hits, "trials": self.trials, "p_hat": self.p_hat,
                "wilson_lo": self.wilson_lo, "wilson_hi": self.wilson_hi, "seed": self.seed}


EVENT_CSV_HEADER = ["event", "N", "params_hash", "hits", "trials", "p_hat", "lo", "hi", "seed"]


def evaluate_trials(predicates, sampler, trials, seed, workers=None):
    """Evaluate several predicates on the same seeded configs.

    Returns a boolean array of shape ``(trials, len(predicates))``; row ``i``
    uses the config drawn from ``trial_seed(seed, i)``, whatever ``workers``.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    preds = list(predicates)

    def one(i):
        cfg = sampler(trial_seed(seed, i))
        return [bool(f(cfg)) for f in preds]

    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(one, range(trials)))
    else:
        rows = [one(i) for i in range(trials)]
    return np.array(rows, dtype=bool).reshape(trials, len(preds))


def estimate_event(predicate, sampler, trials, seed, name="event", workers=None):
    """Fraction of seeded trials where ``predicate`` holds."""
    hits = int(evaluate_trials([predicate], sampler, trials, seed, workers)[:, 0].sum())
    return EventEstimate.from_counts(hits, trials, seed, name)


def write_event_csv(rows, path, header_comment=None):
    """Write ``(estimate, N, params_hash)`` triples as event CSV."""
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_CSV_HEADER)
        for est, N, ph in rows:
            w.writerow(est.csv_row(N, ph))


# ---------------------------------------------------------------------------
# event surgery

def trim1(good, N, thresholds, center=None, dim=1):
    """Window-local version of a goodness predicate at scale ``N``.

    ``good(cfg, thresholds) -> bool``. The returned predicate keeps only the
    config on ``Lambda_{ceil(11N/10)}(center)``, zero outside, and evaluates
    ``good`` with thresholds relaxed by their slack.
    """
    center = as_site(center if center is not None else (0,) * dim, dim)
    window = Box(center, math.ceil(11 * N / 10))
    relaxed = thresholds.relaxed()

    def trimmed(cfg):
        return bool(good(cfg.truncated(window), relaxed))

    trimmed.window = window
    return trimmed


def trim2(bad, site):
    """Site-free version of ``bad``: true if either sign at ``site`` is bad."""
    return trim2_set(bad, [site])


def trim2_set(bad, sites):
    """Free every site in ``sites``; bad if any of the ``2^#Q`` fillings is bad."""
    sites = [tuple(np.atleast_1d(s).tolist()) for s in sites]
    combos = list(itertools.product((1.0, -1.0), repeat=len(sites)))

    def freed(cfg):
        return any(bool(bad(cfg.with_overrides(dict(zip(sites, signs))))) for signs in combos)

    freed.sites = sites
    return freed


def exact_probability(predicate, window, fill="zero"):
    """Exact probability of ``predicate`` under fair signs on ``window``.

    Enumerates all ``2^|window|`` configs; limited to 20 sites.
    """
    if window.size > 20:
        raise ValueError(f"window has {window.size} sites; exact enumeration stops at 20")
    hits = 0
    shape = (window.side,) * window.dim
    for signs in itertools.product((-1.0, 1.0), repeat=window.size):
        cfg = DisorderConfig(window, np.reshape(signs, shape), fill)
        hits += bool(predicate(cfg))
    return Fraction(hits, 2 ** window.size)
