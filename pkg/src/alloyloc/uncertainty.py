"""Discrete Fourier analysis on Z^d_{2N+1} and the initial-scale parameters.

Vectors on ``Z^d_{2N+1}`` are stored over ``Lambda_N`` in its index order, so
residues are represented by their centered lift. The transform is an explicit
unitary matrix; desk-scale sizes never need an FFT.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .lattice import Box, sup_norm

__all__ = [
    "SupportViolation",
    "DegenerateProjection",
    "Infeasible",
    "ScheduleError",
    "dft_matrix",
    "dft",
    "idft",
    "ParameterSchedule",
    "schedule_parameters",
    "UPResult",
    "construct_b",
    "up_experiment",
    "write_up_csv",
]


class SupportViolation(ValueError):
    """Input vector has mass outside ``Lambda_K``."""


class DegenerateProjection(ArithmeticError):
    """The coset-constant projection of ``a`` vanished numerically."""


class Infeasible(ValueError):
    """No admissible scale near the requested target."""


class ScheduleError(ValueError):
    """A hard constraint of the parameter schedule fails."""


def _dft_1d(N):
    q = 2 * N + 1
    k = np.arange(-N, N + 1)
    return np.exp(-2j * np.pi * np.outer(k, k) / q) / np.sqrt(q)


def dft_matrix(N, dim):
    """Unitary matrix of ``a -> a^`` on ``Lambda_N`` (index order)."""
    F1 = _dft_1d(N)
    F = np.ones((1, 1), dtype=complex)
    for _ in range(dim):
        F = np.kron(F, F1)
    return F


def _infer(a, N, dim):
    a = np.asarray(a)
    if dim is None:
        dim = a.ndim if a.ndim > 1 else 1
    if N is None:
        side = round(a.size ** (1.0 / dim))
        N = (side - 1) // 2
    if a.size != (2 * N + 1) ** dim:
        raise ValueError(f"vector of size {a.size} does not live on Lambda_{N} in dimension {dim}")
    return a.ravel(), N, dim


def dft(a, N=None, dim=None):
    """``a^_l = (2N+1)^{-d/2} sum_n a_n exp(-2 pi i n.l/(2N+1))``."""
    a, N, dim = _infer(a, N, dim)
    return dft_matrix(N, dim) @ a


def idft(a_hat, N=None, dim=None):
    """Inverse of :func:`dft`."""
    a_hat, N, dim = _infer(a_hat, N, dim)
    return dft_matrix(N, dim).conj().T @ a_hat


# ---------------------------------------------------------------------------
# parameter schedule

@dataclass(frozen=True)
class ParameterSchedule:
    """Initial scale ``N0`` with the two factorizations of ``2N0+1``.

    ``(2N0+1) = (2L+1)(2K+1) = (2L'+1)(2K'+1)`` with ``L' < L`` and ``K < K'``.
    The smallness conditions ``delta^{1/12} L <= smallness`` and
    ``K/K' <= smallness`` are reported by :meth:`warnings`, not enforced.
    """

    N0: int
    delta: float
    L: int
    Lp: int
    K: int
    Kp: int
    gamma0: float
    smallness: float = 0.1
    log10_delta_formula: float = None
    log10_gamma0_formula: float = None

    def __post_init__(self):
        bad = self.violations()
        if bad:
            raise ScheduleError("; ".join(bad))

    @property
    def period(self):
        return 2 * self.N0 + 1

    def violations(self):
        out = []
        q = self.period
        if min(self.L, self.Lp, self.K, self.Kp) < 0:
            out.append("L, L', K, K' must be nonnegative")
        if (2 * self.L + 1) * (2 * self.K + 1) != q:
            out.append(f"(2L+1)(2K+1) = {(2 * self.L + 1) * (2 * self.K + 1)} != {q}")
        if (2 * self.Lp + 1) * (2 * self.Kp + 1) != q:
            out.append(f"(2L'+1)(2K'+1) = {(2 * self.Lp + 1) * (2 * self.Kp + 1)} != {q}")
        if not self.Lp < self.L:
            out.append(f"need L' < L, got L'={self.Lp}, L={self.L}")
        if not self.K < self.Kp:
            out.append(f"need K < K', got K={self.K}, K'={self.Kp}")
        if not 0 < self.delta < 1:
            out.append(f"delta must lie in (0, 1), got {self.delta}")
        return out

    def warnings(self):
        out = []
        lhs = self.delta ** (1 / 12) * self.L
        if lhs > self.smallness:
            out.append(f"delta^(1/12) L = {lhs:.4g} exceeds {self.smallness}")
        ratio = self.K / self.Kp
        if ratio > self.smallness:
            out.append(f"K/K' = {ratio:.4g} exceeds {self.smallness}")
        return out

    @classmethod
    def from_factors(cls, L, Lp, K, Kp, delta=1e-8, gamma0=None, smallness=0.1):
        """Build a schedule from explicit factors; ``N0`` follows from ``L, K``."""
        q = (2 * L + 1) * (2 * K + 1)
        N0 = (q - 1) // 2
        if gamma0 is None:
            gamma0 = _gamma0(N0, 1e-6)
        return cls(N0, float(delta), int(L), int(Lp), int(K), int(Kp), float(gamma0), smallness,
                   _log10_delta(N0), _log10_gamma0(N0))

    def to_dict(self):
        out = asdict(self)
        out["warnings"] = self.warnings()
        return out


def _log10_delta(N0):
    # delta = (log N0)^(-1000)
    return -1000.0 * math.log10(math.log(N0)) if N0 > 1 else float("nan")


def _log10_gamma0(N0):
    # gamma0 = (log N0^2)^(-2000)
    return -2000.0 * math.log10(math.log(N0 ** 2)) if N0 > 1 else float("nan")


def _gamma0(N0, floor):
    lg = _log10_gamma0(N0)
    value = 10.0 ** lg if np.isfinite(lg) and lg > -300 else 0.0
    return max(value, floor)


def schedule_parameters(N0_target, delta, smallness=0.1, gamma0_floor=1e-6):
    """Smallest admissible ``N0 >= N0_target`` for the given ``delta``.

    ``L = floor(delta^{-1/24})`` and ``L' = floor(delta^{-1/48})``; ``N0`` is
    the first scale with ``(2L+1)(2L'+1)`` dividing ``2N0+1``, and ``K, K'``
    follow from the two factorizations.

    Raises
    ------
    ScheduleError
        ``L' < L`` fails or the target is too small.
    Infeasible
        No admissible scale within the search window.
    """
    if not 0 < delta < 1:
        raise ScheduleError(f"delta must lie in (0, 1), got {delta}")
    # a tiny nudge keeps exact powers such as 2**-24 from flooring one short
    L = int(math.floor(delta ** (-1 / 24) * (1 + 1e-12)))
    Lp = int(math.floor(delta ** (-1 / 48) * (1 + 1e-12)))
    if not Lp < L:
        raise ScheduleError(f"need L' < L, got L'={Lp}, L={L} at delta={delta}")
    div = (2 * L + 1) * (2 * Lp + 1)
    if div > 2 * N0_target + 1:
        raise ScheduleError(f"target N0={N0_target} is below the divisor {div}")
    for N0 in range(int(N0_target), int(N0_target) + 2 * div + 1):
        q = 2 * N0 + 1
        if q % div == 0:
            K = (q // (2 * L + 1) - 1) // 2
            Kp = (q // (2 * Lp + 1) - 1) // 2
            return ParameterSchedule(N0, float(delta), L, Lp, K, Kp, _gamma0(N0, gamma0_floor),
                                     smallness, _log10_delta(N0), _log10_gamma0(N0))
    raise Infeasible(f"no admissible N0 within {2 * div} of {N0_target}")


# ---------------------------------------------------------------------------
# quantitative uncertainty principle

@dataclass(frozen=True)
class UPResult:
    """Output of :func:`construct_b`."""

    a: np.ndarray
    b: np.ndarray
    rel_error: float
    coset_constancy_defect: float
    norm_defect: float
    extra: dict = field(default_factory=dict)


def _coset_representatives(N0, Lp, Kp, dim):
    """For each residue ``l`` of ``Lambda_{N0}``, the index of ``k'(2L'+1)``."""
    box = Box.centered(N0, dim)
    sites = box.sites()
    width = 2 * Lp + 1
    kprime = np.floor_divide(sites + Lp, width)
    if np.any(np.abs(kprime) > Kp):
        raise ValueError("coset decomposition does not tile Lambda_N0")
    return box.index_map().index(kprime * width), kprime


def construct_b(a, sched, dim=None, atol=1e-12):
    """Coset-constant companion ``b`` of ``a`` with ``|b| = |a|``.

    ``b^`` takes on each coset ``{l' + k'(2L'+1) : l' in Lambda_{L'}}`` the
    value ``a^_{k'(2L'+1)}``; ``b`` is then rescaled to the norm of ``a``.

    Raises
    ------
    SupportViolation
        ``a`` has mass outside ``Lambda_K``.
    DegenerateProjection
        The projected vector is numerically zero.
    """
    a = np.asarray(a, dtype=complex)
    if dim is None:
        dim = a.ndim if a.ndim > 1 else 1
    a = a.ravel()
    N0 = sched.N0
    box = Box.centered(N0, dim)
    if a.size != box.size:
        raise ValueError(f"a must have {box.size} entries, got {a.size}")
    outside = sup_norm(box.sites()) > sched.K
    norm_a = float(np.linalg.norm(a))
    if np.any(np.abs(a[outside]) > atol * max(norm_a, 1.0)):
        raise SupportViolation(f"a has mass outside Lambda_{sched.K}")
    F = dft_matrix(N0, dim)
    a_hat = F @ a
    rep, _ = _coset_representatives(N0, sched.Lp, sched.Kp, dim)
    b_hat = a_hat[rep]
    norm_b = float(np.linalg.norm(b_hat))
    if norm_b <= 1e-14 * max(norm_a, 1e-300) or norm_a == 0:
        raise DegenerateProjection("projected vector vanishes")
    b_hat = b_hat * (norm_a / norm_b)
    b = F.conj().T @ b_hat
    # the defects are measured on the vector actually returned
    bh = F @ b
    spread = np.abs(bh - bh[rep])
    return UPResult(
        a=a, b=b,
        rel_error=float(np.linalg.norm(a - b) / norm_a),
        coset_constancy_defect=float(spread.max()),
        norm_defect=abs(float(np.linalg.norm(b)) - norm_a),
    )


def _random_supported(rng, sched, dim):
    box = Box.centered(sched.N0, dim)
    inside = sup_norm(box.sites()) <= sched.K
    a = np.zeros(box.size, dtype=complex)
    m = int(inside.sum())
    a[inside] = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    return a


def up_experiment(schedules, draws=100, seed=0, dim=1):
    """Mean and std of ``rel_error`` over random ``a`` supported in ``Lambda_K``.

    Returns a list of dicts with keys ``K, Kp, ratio, mean, std, draws``.
    """
    rows = []
    for i, sched in enumerate(schedules):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        errs = np.array([construct_b(_random_supported(rng, sched, dim), sched, dim).rel_error
                         for _ in range(draws)])
        rows.append({"K": sched.K, "Kp": sched.Kp, "ratio": sched.K / sched.Kp,
                     "mean": float(errs.mean()), "std": float(errs.std(ddof=1)) if draws > 1 else 0.0,
                     "draws": draws})
    return rows


def write_up_csv(rows, path, header_comment=None):
    """CSV with columns ``K, K', mean rel_error, std``."""
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["K", "Kp", "mean_rel_error", "std_rel_error", "draws"])
        for r in rows:
            w.writerow([r["K"], r["Kp"], repr(r["mean"]), repr(r["std"]), r["draws"]])
