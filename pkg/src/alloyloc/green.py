"""Green's functions on boxes and the certificates built on them.

Covers the resolvent ``G = (H - E)^{-1}`` with its goodness report, the
Neumann-series certificate near the spectral edge, block classification over
a cover, and a direct-inversion check of the coupling lemma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .lattice import Box, build_cover

__all__ = [
    "NearSingular",
    "ContractionFailed",
    "HypothesisUnmet",
    "GoodnessThresholds",
    "GreenReport",
    "green_function",
    "green_report",
    "CertificateResult",
    "initial_certificate",
    "neumann_green",
    "BlockClassification",
    "classify_blocks",
    "CouplingReport",
    "coupling_check",
]

EXACT_NORM_MAX_ORDER = 4096


class NearSingular(ArithmeticError):
    """``E`` is numerically an eigenvalue of ``H``."""

    def __init__(self, energy, gap):
        super().__init__(f"E={energy!r} is within {gap:.3e} of the spectrum")
        self.energy = energy
        self.gap = gap


class ContractionFailed(ArithmeticError):
    """The Neumann series does not contract."""


class HypothesisUnmet(Exception):
    """A coupling-lemma hypothesis fails; the check was skipped."""

    def __init__(self, failed, details=None):
        super().__init__("unmet hypotheses: " + ", ".join(failed))
        self.failed = list(failed)
        self.details = details or {}


@dataclass(frozen=True)
class GoodnessThresholds:
    """Thresholds for a good block.

    A block of radius ``N`` is good at energy ``E`` when
    ``|G| < factor * exp(N**norm_exponent)`` and
    ``|G(n, n')| < factor * exp(-gamma |n - n'|)`` for
    ``|n - n'| > offdiag_start_fraction * N``. ``factor`` is 1 for the strict
    test; :meth:`relaxed` multiplies it by ``slack``.
    """

    gamma: float
    norm_exponent: float = 0.9
    offdiag_start_fraction: float = 0.1
    slack: float = 2.0
    factor: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not 0 < self.norm_exponent < 1:
            raise ValueError("norm_exponent must lie in (0, 1)")
        if self.offdiag_start_fraction < 0 or self.slack < 1 or self.factor <= 0:
            raise ValueError("invalid threshold parameters")

    def relaxed(self, times=1):
        return replace(self, factor=self.factor * self.slack ** times)

    def scaled(self, factor):
        return replace(self, factor=self.factor * factor)

    def log_norm_limit(self, N):
        return N ** self.norm_exponent + math.log(self.factor)

    def to_dict(self):
        return {"gamma": self.gamma, "norm_exponent": self.norm_exponent,
                "offdiag_start_fraction": self.offdiag_start_fraction,
                "slack": self.slack, "factor": self.factor}


@dataclass(frozen=True)
class GreenReport:
    """Goodness verdict for one box at one energy.

    ``decay_samples`` holds, per distance beyond the off-diagonal threshold,
    an upper estimate of the largest ``|G(n, n')|`` at that distance.
    ``certified_rate`` is a rate at which the decay test provably passes
    with factor 1, given the rounding-error bound.
    """

    energy: float
    box: Box
    operator_norm: float
    decay_samples: tuple
    gamma_hat: float
    certified_rate: float
    norm_ok: bool
    decay_ok: bool
    residual: float

    @property
    def good(self):
        return bool(self.norm_ok and self.decay_ok)

    def to_dict(self):
        return {"energy": self.energy, "box": self.box.to_dict(),
                "operator_norm": self.operator_norm,
                "decay_samples": [list(s) for s in self.decay_samples],
                "gamma_hat": self.gamma_hat, "certified_rate": self.certified_rate,
                "norm_ok": self.norm_ok, "decay_ok": self.decay_ok,
                "good": self.good, "residual": self.residual}

    def csv_row(self):
        return {"N": self.box.radius, "E": self.energy, "norm": self.operator_norm,
                "gamma_hat": self.gamma_hat, "good": int(self.good)}


def _matrix(H):
    return np.asarray(getattr(H, "matrix", H), dtype=float)


def _symmetric_norm_power(G, tol=1e-8, maxiter=10_000, seed=0):
    v = np.random.default_rng(seed).standard_normal(G.shape[0])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(maxiter):
        w = G @ (G @ v)
        new = math.sqrt(np.linalg.norm(w))
        v = w / np.linalg.norm(w)
        if abs(new - est) <= tol * new:
            return new
        est = new
    return est


def _resolvent(H, E, singular_tol=None):
    """Return ``(G, norm, gap)``; raises :class:`NearSingular`."""
    A = _matrix(H)
    n = A.shape[0]
    tol = 1e-12 * n if singular_tol is None else singular_tol
    shifted = A - E * np.eye(n)
    if n <= EXACT_NORM_MAX_ORDER:
        w, V = np.linalg.eigh(shifted)
        gap = float(np.min(np.abs(w)))
        if gap < tol:
            raise NearSingular(E, gap)
        G = (V / w) @ V.T
        return G, 1.0 / gap, gap
    G = scipy.linalg.solve(shifted, np.eye(n), assume_a="sym")
    norm = _symmetric_norm_power(G)
    if 1.0 / norm < tol:
        raise NearSingular(E, 1.0 / norm)
    return G, norm, 1.0 / norm


def green_function(H, E, singular_tol=None):
    """``(H - E)^{-1}`` for a real symmetric ``H``.

    Parameters
    ----------
    H : BoxHamiltonian or ndarray
    E : float
    singular_tol : float, optional
        Smallest admissible ``min |spec(H) - E|``; default ``1e-12 * order``.

    Raises
    ------
    NearSingular
    """
    G, _, _ = _resolvent(H, E, singular_tol)
    return G


def _residual(H, E, G):
    A = _matrix(H)
    return float(np.max(np.abs((A - E * np.eye(A.shape[0])) @ G - np.eye(A.shape[0]))))


def _pair_distances(sites):
    diff = np.abs(sites[:, None, :] - sites[None, :, :])
    return diff.max(axis=-1)


_EPS = np.finfo(float).eps


def _weighted_green(A, E, sites, rate):
    """Entries ``G(x, y) exp(rate |x - y|)`` and an entrywise error bound.

    Far off-diagonal resolvent entries fall below rounding level long before
    the decay thresholds do, so they are obtained from the conjugated
    matrices ``exp(rate x_a) (A - E) exp(-rate x_a)``, one per axis. Their
    inverses carry the weight exactly, and each pair reads the axis and sign
    that realize its sup-norm distance. Overflowing entries come back as
    ``inf`` or ``nan``.
    """
    n = A.shape[0]
    shifted = A - E * np.eye(n)
    dist = _pair_distances(sites)
    out = np.full((n, n), np.nan)
    err = np.full((n, n), np.inf)
    nz = shifted != 0
    for a in range(sites.shape[1]):
        delta = sites[:, a][:, None] - sites[:, a][None, :]
        with np.errstate(over="ignore", invalid="ignore"):
            conj = np.where(nz, shifted * np.exp(rate * np.where(nz, delta, 0)), 0.0)
            try:
                Gm = scipy.linalg.solve(conj, np.eye(n), check_finite=False)
            except (np.linalg.LinAlgError, ValueError):
                continue
            absG = np.abs(Gm)
            e = n * _EPS * np.max(np.abs(conj)) * np.outer(absG.sum(axis=1), absG.sum(axis=0))
        plus = delta == dist
        minus = -delta == dist
        out[plus], err[plus] = Gm[plus], e[plus]
        out[minus], err[minus] = Gm.T[minus], e.T[minus]
    return out, err, dist


def _slope(d, y):
    if np.unique(d).size < 2:
        return math.nan
    return float(np.polyfit(d.astype(float), y, 1)[0])


def _decay_statistics(A, E, sites, G, norm, start, gamma, factor):
    """Decay test at ``gamma``, fitted rate, certified rate and envelope.

    The fit first uses entries of the plain inverse that sit well above
    rounding level, then refits on entries recomputed with weights at that
    first rate, keeping only those above their error bound.
    """
    n = A.shape[0]
    dist = _pair_distances(sites)
    iu = np.triu_indices(n, k=1)
    d = dist[iu]
    sel = d > start
    if not np.any(sel):
        return True, math.nan, math.inf, ()
    d = d[sel]
    rows, cols = iu[0][sel], iu[1][sel]

    Wg, _, _ = _weighted_green(A, E, sites, gamma)
    wg = np.abs(Wg[rows, cols])
    decay_ok = bool(np.all(wg < factor))

    g = np.abs(G[rows, cols])
    scale = np.linalg.norm(A - E * np.eye(n), 2)
    e_plain = n * _EPS * scale * norm ** 2
    with np.errstate(divide="ignore"):
        upper_log = np.log(g + e_plain)
        trusted = g > 1e3 * e_plain
        kappa0 = _slope(d[trusted], -np.log(g[trusted])) if np.any(trusted) else math.nan
        gamma_hat = kappa0
        if np.isfinite(kappa0) and kappa0 > 0:
            Wm, Em, _ = _weighted_green(A, E, sites, kappa0)
            w, e = np.abs(Wm[rows, cols]), Em[rows, cols]
            valid = np.isfinite(w) & np.isfinite(e)
            ok = valid & (w > 1e3 * e)
            if np.unique(d[ok]).size >= 2:
                gamma_hat = _slope(d[ok], -np.log(w[ok]) + kappa0 * d[ok])
            upper_log = np.where(valid, np.minimum(upper_log, np.log(w + e) - kappa0 * d), upper_log)
    certified = float(np.min(-upper_log / d))
    env = {}
    for dd, ul in zip(d.tolist(), upper_log.tolist()):
        if ul > env.get(dd, -math.inf):
            env[dd] = ul
    samples = tuple((dd, math.exp(ul)) for dd, ul in sorted(env.items()))
    return decay_ok, gamma_hat, certified, samples


def green_report(H, E, th):
    """Goodness report for the box Hamiltonian ``H`` at energy ``E``.

    A near-singular energy gives a bad report with ``operator_norm = inf``.
    ``decay_samples`` lists, per distance, an upper estimate of the largest
    ``|G(n, n')|``.
    """
    box = H.box
    N = box.radius
    try:
        G, norm, _ = _resolvent(H, E)
    except NearSingular:
        return GreenReport(float(E), box, math.inf, (), math.nan, 0.0, False, False, math.nan)
    residual = _residual(H, E, G)
    norm_ok = bool(math.log(norm) < th.log_norm_limit(N))
    decay_ok, gamma_hat, certified, env = _decay_statistics(
        _matrix(H), E, box.sites(), G, norm, N * th.offdiag_start_fraction,
        th.gamma, th.factor)
    return GreenReport(float(E), box, float(norm), env, gamma_hat, certified,
                       norm_ok, decay_ok, residual)


# ---------------------------------------------------------------------------
# Neumann certificate

@dataclass(frozen=True)
class CertificateResult:
    """Outcome of the Neumann contraction test and the derived norm bound.

    ``bound_status`` is ``"satisfied"``, ``"violated"``, ``"not_applicable"``
    (``delta = 0`` or the contraction fails).
    """

    holds: bool
    contraction_norm: float
    green_norm: float
    bound: float
    bound_status: str
    delta: float

    def to_dict(self):
        return dict(self.__dict__)


def _edge_weights(D_box, E):
    D = np.asarray(D_box, dtype=float)
    if D.ndim == 2:
        D = np.diag(D)
    W = E + 1.0 - D
    if np.any(W <= 0):
        raise ValueError("need E + 1 - D_n > 0 at every site")
    return D, W


def initial_certificate(T_box, D_box, E, delta, M):
    """Neumann contraction test near the spectral edge.

    Holds iff ``|(T+1) W^{-1} (T+1) W^{-1}| <= 1 - delta`` with
    ``W = E + 1 - D``. When it holds and ``delta > 0``, the resolvent norm is
    compared against ``((M+1-delta)^{-1} + (M+1)(M+1-delta)^{-2}) / delta``.

    Parameters
    ----------
    T_box : ndarray
        Hopping part restricted to the box.
    D_box : ndarray
        Potential values (vector or diagonal matrix).
    E, delta, M : float
    """
    T = np.asarray(T_box, dtype=float)
    D, W = _edge_weights(D_box, E)
    n = T.shape[0]
    Q = (T + np.eye(n)) / W[None, :]
    contraction = float(np.linalg.norm(Q @ Q, 2))
    holds = contraction <= 1.0 - delta
    G = green_function(T + np.diag(D), E)
    gnorm = float(np.linalg.norm(G, 2))
    if not holds or delta <= 0 or M + 1 - delta <= 0:
        return CertificateResult(bool(holds), contraction, gnorm, math.nan, "not_applicable", delta)
    bound = (1.0 / (M + 1 - delta) + (M + 1) / (M + 1 - delta) ** 2) / delta
    status = "satisfied" if gnorm <= bound else "violated"
    return CertificateResult(True, contraction, gnorm, float(bound), status, delta)


def neumann_green(T_box, D_box, E, terms):
    """Partial sum ``(D-E-1)^{-1} sum_{s<=terms} (-1)^s ((T+1)(D-E-1)^{-1})^s``.

    Raises
    ------
    ContractionFailed
        If the iteration matrix has spectral radius >= 1, so the terms do not
        decay.
    """
    T = np.asarray(T_box, dtype=float)
    D = np.asarray(D_box, dtype=float)
    if D.ndim == 2:
        D = np.diag(D)
    n = T.shape[0]
    R = 1.0 / (D - E - 1.0)
    step = -(T + np.eye(n)) * R[None, :]
    if terms > 0:
        radius = float(np.max(np.abs(np.linalg.eigvals(step))))
        if radius >= 1.0:
            raise ContractionFailed(f"iteration spectral radius {radius:.4g} >= 1")
    power = np.eye(n)
    total = np.eye(n)
    for _ in range(int(terms)):
        power = power @ step
        total += power
    return R[:, None] * total


# ---------------------------------------------------------------------------
# block classification and the coupling lemma

@dataclass(frozen=True)
class BlockClassification:
    """Green reports for every block of a cover at one energy."""

    scale: int
    region: Box
    blocks: dict
    energy: float

    @property
    def bad_centers(self):
        return [b.center for b, r in self.blocks.items() if not r.good]

    @property
    def good_blocks(self):
        return [b for b, r in self.blocks.items() if r.good]

    def to_dict(self):
        return {"scale": self.scale, "region": self.region.to_dict(), "energy": self.energy,
                "blocks": [r.to_dict() for r in self.blocks.values()],
                "bad_centers": [list(c) for c in self.bad_centers]}


def classify_blocks(region, N, kernel, p, cfg, E, th):
    """Classify every block ``Lambda_N(k)`` of the cover of ``region``."""
    from .model import assemble_hamiltonian

    if N > region.radius:
        raise ValueError("block radius exceeds region radius")
    cover = build_cover(region.radius, N, region.dim, region.center)
    blocks = {}
    for blk in cover.blocks():
        blocks[blk] = green_report(assemble_hamiltonian(blk, kernel, p, cfg), E, th)
    return BlockClassification(int(N), region, blocks, float(E))


@dataclass(frozen=True)
class CouplingReport:
    """Coupling-lemma check: each conclusion maps to (holds, log-margin)."""

    hypotheses: dict
    conclusions: dict
    gamma_N: float
    gamma_N1: float
    rate_loss: float
    variant: str
    asserted: bool = True

    def holds(self, *names):
        names = names or tuple(self.conclusions)
        return all(self.conclusions[n]["holds"] for n in names)

    def to_dict(self):
        return {"hypotheses": self.hypotheses, "conclusions": self.conclusions,
                "gamma_N": self.gamma_N, "gamma_N1": self.gamma_N1,
                "rate_loss": self.rate_loss, "variant": self.variant,
                "asserted": self.asserted}


def _mask(region, box):
    """Sites of ``region`` (index order) lying in ``box``."""
    return box.contains(region.sites())


def _inner_block_mask(region, sites, block, r):
    """Sites n with ``Lambda_r(n) & region`` inside ``block``."""
    lo = np.maximum(sites - r, region.lower)
    hi = np.minimum(sites + r, region.upper)
    return np.all((lo >= block.lower) & (hi <= block.upper), axis=1)


def _as_list(b):
    return list(b) if isinstance(b, (list, tuple)) else [b]


def _norm_and_decay(A, E, sites, log_limit, rate, pair_filter):
    """Log-margins of ``|G| < e^{log_limit}`` and ``|G(x,y)| < e^{-rate|x-y|}``."""
    try:
        _, norm, _ = _resolvent(A, E)
    except NearSingular:
        fail = {"holds": False, "margin": -math.inf}
        return fail, dict(fail)
    margin = log_limit - math.log(norm)
    norm_part = {"holds": bool(margin > 0), "margin": float(margin)}
    W, _, dist = _weighted_green(A, E, sites, rate)
    sel = np.triu(pair_filter(dist), k=1)
    if not np.any(sel):
        return norm_part, {"holds": True, "margin": math.inf}
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = -np.log(np.abs(W[sel]))
    dmargin = float(np.min(np.where(np.isnan(vals), -math.inf, vals)))
    return norm_part, {"holds": bool(dmargin > 0), "margin": dmargin}


def coupling_check(region, inner, buffer, cls, E, th, kernel, p, cfg, rate_loss=None,
                   gamma_N=None):
    """Check the coupling lemma on ``region`` by direct inversion.

    Parameters
    ----------
    region : Box
        The big box, radius ``N1``.
    inner : Box or list of Box
        The possibly bad box(es); up to three are accepted, in which case
        margins are reported but not asserted.
    buffer : Box or list of Box
        A buffer of radius ``L1`` around each inner box.
    cls : BlockClassification
        Classification of the cover of ``region`` at scale ``N``.
    E : float
    th : GoodnessThresholds
    kernel, p, cfg
        Model data used to build ``H`` on ``region``.
    rate_loss : float, optional
        Constant ``C`` in ``gamma_{N1} = gamma_N - C N^{-1/10}``. Default
        ``0.2 * gamma_N * 27**0.1``, which gives ``gamma_{N1} = 0.8 gamma_N``
        at ``N = 27``.
    gamma_N : float, optional
        Decay rate of the good blocks. Default: the smallest certified rate
        among them, which is usually far above ``th.gamma``. Passing
        ``th.gamma`` tests the lemma at the rate that defines goodness.

    Returns
    -------
    CouplingReport

    Raises
    ------
    HypothesisUnmet
    """
    from .model import assemble_hamiltonian

    inners, buffers = _as_list(inner), _as_list(buffer)
    if len(inners) != len(buffers) or not 1 <= len(inners) <= 3:
        raise ValueError("need one buffer per inner box and at most three inner boxes")
    N = cls.scale
    N1 = region.radius
    sites = region.sites()
    H = assemble_hamiltonian(region, kernel, p, cfg).matrix

    inner_mask = np.zeros(len(sites), dtype=bool)
    buffer_masks = []
    hyp, failed = {}, []
    for k, (b0, b1) in enumerate(zip(inners, buffers)):
        inner_mask |= _mask(region, b0)
        m1 = _mask(region, b1)
        buffer_masks.append(m1)
        nbhd = _mask(region, b0.grown(math.ceil(b1.radius / 10)))
        ok = bool(np.all(m1[nbhd]))
        hyp[f"buffer_neighborhood_{k}"] = ok
        if not ok:
            failed.append(f"buffer_neighborhood_{k}")

    good = [b for b in cls.good_blocks if np.all(region.contains(b.sites()))]
    union_good = np.zeros(len(sites), dtype=bool)
    covered = np.zeros(len(sites), dtype=bool)
    r = int(math.floor(N / 5))
    for b in good:
        union_good |= _mask(region, b)
        covered |= _inner_block_mask(region, sites, b, r)
    ok = bool(np.all(covered[~inner_mask]))
    hyp["good_block_cover"] = ok
    if not ok:
        failed.append("good_block_cover")
    all_buffers = np.any(buffer_masks, axis=0)
    ok = bool(np.all(all_buffers | union_good))
    hyp["buffer_and_good_blocks_cover"] = ok
    if not ok:
        failed.append("buffer_and_good_blocks_cover")

    for k, (b1, m1) in enumerate(zip(buffers, buffer_masks)):
        L1 = b1.radius
        idx = np.flatnonzero(m1)
        try:
            _, norm, _ = _resolvent(H[np.ix_(idx, idx)], E)
            lognorm = math.log(norm)
        except NearSingular:
            lognorm = math.inf
        ok = lognorm < L1 ** th.norm_exponent
        hyp[f"buffer_norm_{k}"] = bool(ok)
        if not ok:
            failed.append(f"buffer_norm_{k}")
    if failed:
        raise HypothesisUnmet(failed, hyp)

    if gamma_N is None:
        rates = [cls.blocks[b].certified_rate for b in good]
        finite = [x for x in rates if np.isfinite(x)]
        gamma_N = float(min(finite)) if finite else th.gamma
    gamma_N = float(gamma_N)
    C = 0.2 * gamma_N * 27 ** 0.1 if rate_loss is None else float(rate_loss)
    gamma_N1 = gamma_N - C * N ** -0.1

    conclusions = {}
    idx = np.flatnonzero(union_good)
    conclusions["good_union_norm"], conclusions["good_union_decay"] = _norm_and_decay(
        H[np.ix_(idx, idx)], E, sites[idx], 2 * N ** th.norm_exponent,
        0.8 * gamma_N, lambda d: d >= N)
    conclusions["region_norm"], conclusions["region_decay"] = _norm_and_decay(
        H, E, sites, N1 ** th.norm_exponent, gamma_N1,
        lambda d: d > N1 * th.offdiag_start_fraction)

    variant = "single" if len(inners) == 1 else "three_bad"
    return CouplingReport(hyp, conclusions, gamma_N, gamma_N1, C, variant,
                          asserted=(variant == "single"))
