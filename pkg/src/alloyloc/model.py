"""Hopping kernels, their symbols, the alloy potential and box Hamiltonians.

The operator is ``H = T + D(eps)`` on Z^d where ``T`` is a convolution with a
real even kernel and ``D(eps)_n = lam * sum_m A_{n-m} eps_m`` is driven by
Bernoulli signs. Everything lives on finite windows; sites outside the
sampled window are filled by a fixed policy.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, signal

from .lattice import Box, as_site, one_norm, sup_norm

__all__ = [
    "SymbolAssumptionError",
    "HoppingKernel",
    "laplacian_kernel",
    "exponential_kernel",
    "SymbolProfile",
    "symbol_eval",
    "analyze_symbol",
    "AlloyPotential",
    "default_potential",
    "DisorderConfig",
    "constant_config",
    "sample_config",
    "potential_at",
    "potential_on_box",
    "spectral_edge",
    "BoxHamiltonian",
    "hopping_matrix",
    "assemble_hamiltonian",
]

FILL_VALUES = {"plus": 1.0, "minus": -1.0, "zero": 0.0}


class SymbolAssumptionError(ValueError):
    """The symbol is not quadratically non-degenerate at its maxima."""

    def __init__(self, message, profile=None):
        super().__init__(message)
        self.profile = profile


def _short_hash(*parts):
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, np.ndarray):
            h.update(np.ascontiguousarray(p).tobytes())
            h.update(str(p.shape).encode())
        else:
            h.update(repr(p).encode())
    return h.hexdigest()[:12]


# ---------------------------------------------------------------------------
# hopping kernel

@dataclass(frozen=True)
class HoppingKernel:
    """Truncated real even hopping kernel ``T(n)``.

    Parameters
    ----------
    offsets : ndarray, shape (m, d)
        Lattice vectors with a stored amplitude.
    values : ndarray, shape (m,)
        Amplitudes ``T(n)``.
    decay_rate : float
        Rate ``c`` in the decay certificate ``|T(n)| <= C exp(-c |n|)``.
    decay_prefactor : float
        Constant ``C`` of the certificate. Nearest-neighbour kernels need
        ``C > 1`` because ``|T(e_1)| = 1``.
    truncation_tol : float
        Amplitudes below this are dropped.
    """

    offsets: np.ndarray
    values: np.ndarray
    decay_rate: float
    decay_prefactor: float = 1.0
    truncation_tol: float = 1e-12

    def __post_init__(self):
        offsets = np.atleast_2d(np.asarray(self.offsets, dtype=np.int64))
        values = np.asarray(self.values, dtype=float).ravel()
        if offsets.shape[0] != values.shape[0]:
            raise ValueError("offsets and values differ in length")
        keep = np.abs(values) >= self.truncation_tol
        offsets, values = offsets[keep], values[keep]
        order = np.lexsort(offsets.T[::-1]) if len(values) else np.arange(0)
        offsets, values = offsets[order], values[order]
        if len({tuple(o) for o in offsets}) != len(offsets):
            raise ValueError("duplicate kernel offsets")
        if self.decay_rate <= 0:
            raise ValueError("decay_rate must be positive")
        table = {tuple(o): v for o, v in zip(offsets.tolist(), values)}
        for o, v in table.items():
            if table.get(tuple(-x for x in o)) != v:
                raise ValueError(f"kernel is not even at offset {o}")
        if len(values):
            bound = self.decay_prefactor * np.exp(-self.decay_rate * sup_norm(offsets))
            bad = np.abs(values) > bound * (1 + 1e-12)
            if np.any(bad):
                raise ValueError(
                    f"decay certificate fails at offset {tuple(offsets[bad][0])}")
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_dim", offsets.shape[1])

    @property
    def dim(self):
        return self._dim

    @property
    def truncation_radius(self):
        """Largest stored ``|n|`` (sup norm); 0 for an empty kernel."""
        return int(sup_norm(self.offsets).max()) if len(self.values) else 0

    @property
    def entries(self):
        return {tuple(o): float(v) for o, v in zip(self.offsets.tolist(), self.values)}

    def amplitude(self, n):
        return self.entries.get(as_site(n, self.dim), 0.0)

    def scaled(self, kappa):
        """The dilated kernel ``kappa * T``."""
        return HoppingKernel(self.offsets, kappa * self.values, self.decay_rate,
                             abs(kappa) * self.decay_prefactor, self.truncation_tol)

    def kernel_id(self):
        return _short_hash(self.offsets, self.values)

    def symbol(self, x):
        """``sum_n T(n) exp(2 pi i n.x)`` for points ``x`` of shape (..., d)."""
        x = np.asarray(x, dtype=float)
        if self.dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        if not len(self.values):
            return np.zeros(x.shape[:-1])
        phase = 2 * np.pi * (x @ self.offsets.T)
        return np.cos(phase) @ self.values

    def symbol_gradient(self, x):
        x = np.asarray(x, dtype=float)
        phase = 2 * np.pi * (x @ self.offsets.T)
        return -(np.sin(phase) * self.values) @ (2 * np.pi * self.offsets)

    def symbol_grid(self, resolution):
        """Symbol on the centered grid ``j/resolution`` per axis.

        Returns ``(axis, values)`` where ``axis`` holds the 1D coordinates in
        ``[-1/2, 1/2)`` and ``values`` has shape ``(resolution,)*d``. Offsets
        are folded modulo the grid, which is exact on grid points.
        """
        res = int(resolution)
        acc = np.zeros((res,) * self.dim)
        if len(self.values):
            np.add.at(acc, tuple((self.offsets % res).T), self.values)
        vals = np.real(np.fft.ifftn(acc)) * res ** self.dim
        vals = np.fft.fftshift(vals)
        axis = (np.arange(res) - res // 2) / res
        return axis, vals

    def to_dict(self):
        return {
            "dim": self.dim,
            "offsets": self.offsets.tolist(),
            "values": self.values.tolist(),
            "decay_rate": self.decay_rate,
            "decay_prefactor": self.decay_prefactor,
            "truncation_tol": self.truncation_tol,
            "truncation_radius": self.truncation_radius,
        }

    @classmethod
    def from_dict(cls, data):
        offsets = np.asarray(data["offsets"], dtype=np.int64).reshape(-1, int(data["dim"]))
        return cls(offsets, data["values"], data["decay_rate"],
                   data.get("decay_prefactor", 1.0), data.get("truncation_tol", 1e-12))


def laplacian_kernel(dim):
    """Nearest-neighbour kernel: ``T(n) = 1`` iff ``|n|_1 = 1``.

    The certificate uses ``c = ln 2`` with prefactor 2.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    eye = np.eye(dim, dtype=np.int64)
    offsets = np.concatenate([eye, -eye])
    return HoppingKernel(offsets, np.ones(2 * dim), math.log(2), 2.0)


def exponential_kernel(dim, rate, amplitude=1.0, tol=1e-12):
    """Long-range kernel ``T(n) = amplitude * exp(-rate |n|_1)`` for ``n != 0``.

    Truncated at ``R_T = ceil(-ln(tol) / rate)``.
    """
    if rate <= 0:
        raise ValueError("rate must be positive")
    radius = math.ceil(-math.log(tol) / rate)
    axes = [np.arange(-radius, radius + 1)] * dim
    offsets = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    offsets = offsets[np.any(offsets != 0, axis=1)]
    values = amplitude * np.exp(-rate * one_norm(offsets))
    return HoppingKernel(offsets, values, rate, abs(amplitude), tol)


def symbol_eval(kernel, x):
    """Symbol of ``kernel`` at torus point(s) ``x``."""
    out = kernel.symbol(x)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# symbol analysis

@dataclass(frozen=True)
class SymbolProfile:
    """Extremes of the symbol and its non-degeneracy constant."""

    M: float
    m: float
    maximizers: tuple
    Theta: float
    grid_resolution: int
    Theta_refined: float
    theta_unstable: bool

    @property
    def J(self):
        return len(self.maximizers)

    def to_dict(self):
        return {
            "M": self.M, "m": self.m, "J": self.J,
            "maximizers": [list(t) for t in self.maximizers],
            "Theta": self.Theta, "Theta_refined": self.Theta_refined,
            "theta_unstable": self.theta_unstable,
            "grid_resolution": self.grid_resolution,
        }


def _wrap(x):
    return x - np.floor(x + 0.5)


def _torus_dist2(x, centers):
    """Squared torus distance from points ``x`` (n, d) to each center (J, d)."""
    diff = _wrap(x[:, None, :] - centers[None, :, :])
    return np.sum(diff ** 2, axis=-1)


def _refine(kernel, x0, sign):
    res = optimize.minimize(
        lambda x: -sign * kernel.symbol(x[None, :])[0],
        x0, jac=lambda x: -sign * kernel.symbol_gradient(x[None, :])[0],
        method="BFGS", options={"gtol": 1e-13})
    x = _wrap(res.x)
    return x, float(kernel.symbol(x[None, :])[0])


def _grid_points(axis, dim):
    grids = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def _theta_on_grid(kernel, resolution, M, centers):
    axis, vals = kernel.symbol_grid(resolution)
    pts = _grid_points(axis, kernel.dim)
    d2 = _torus_dist2(pts, centers).min(axis=1)
    spacing = 1.0 / resolution
    outside = d2 > spacing ** 2 * (1 + 1e-9)
    if not np.any(outside):
        return math.inf
    return float(np.min((M - vals.ravel()[outside]) / d2[outside]))


def analyze_symbol(kernel, grid_resolution=None, refine_tol=1e-9):
    """Locate the maxima of the symbol and estimate ``Theta``.

    Parameters
    ----------
    kernel : HoppingKernel
    grid_resolution : int, optional
        Points per axis, at least 64. Defaults to 4096, 256, 64 for
        d = 1, 2, >=3.
    refine_tol : float
        A refined local maximum within this of the global maximum counts as
        a maximizer.

    Returns
    -------
    SymbolProfile
        ``Theta`` is the grid minimum of ``(M - T(x)) / min_j |x - theta_j|^2``
        outside one grid cell around each maximizer. ``theta_unstable`` is set
        when doubling the resolution moves it by more than 5%.

    Raises
    ------
    SymbolAssumptionError
        If the ``Theta`` estimate is not positive (flat or degenerate maxima).
    """
    d = kernel.dim
    res = int(grid_resolution or {1: 4096, 2: 256}.get(d, 64))
    if res < 64:
        raise ValueError("grid_resolution must be at least 64 per axis")
    axis, vals = kernel.symbol_grid(res)
    spacing = 1.0 / res
    flat = vals.ravel()
    pts = _grid_points(axis, d)

    is_max = np.ones(vals.shape, dtype=bool)
    for shift in itertools.product((-1, 0, 1), repeat=d):
        if any(shift):
            is_max &= vals >= np.roll(vals, shift, axis=tuple(range(d)))
    cand = np.flatnonzero(is_max.ravel())
    span = flat.max() - flat.min()
    if len(cand) > 512 or span <= 1e-14 * max(1.0, abs(flat.max())):
        # plateau: refinement is meaningless, report the grid values
        M = float(flat.max())
        prof = SymbolProfile(M, float(flat.min()), (tuple(pts[np.argmax(flat)]),),
                             0.0, res, 0.0, False)
        raise SymbolAssumptionError("symbol has a flat maximum; Theta estimate is 0", prof)

    refined = [_refine(kernel, pts[i], +1) for i in cand]
    M = max(max(v for _, v in refined), float(flat.max()))
    tops = [x for x, v in refined if M - v <= refine_tol * max(1.0, abs(M))]
    clusters = []
    for x in tops:
        if all(np.sqrt(np.sum(_wrap(x - c) ** 2)) > 2 * spacing for c in clusters):
            clusters.append(x)
    clusters.sort(key=lambda c: tuple(c))
    centers = np.array(clusters)
    _, m = _refine(kernel, pts[np.argmin(flat)], -1)
    m = min(m, float(flat.min()))

    theta = _theta_on_grid(kernel, res, M, centers)
    theta_fine = _theta_on_grid(kernel, 2 * res, M, centers)
    unstable = bool(abs(theta_fine - theta) > 0.05 * abs(theta)) if np.isfinite(theta) else False
    maximizers = tuple(tuple(float(v) + 0.0 for v in c) for c in centers)
    prof = SymbolProfile(M, m, maximizers, theta, res, theta_fine, unstable)
    if not theta > 0:
        raise SymbolAssumptionError(
            f"Theta estimate {theta:.3g} is not positive: maxima are degenerate", prof)
    return prof


# ---------------------------------------------------------------------------
# alloy potential and disorder

def _tail_radius(dim, tol):
    """Smallest R with ``sum_{|m| > R} 2^{-|m|} <= tol`` in sup norm."""
    ks = np.arange(1, 400)
    shells = (2 * ks + 1.0) ** dim - (2 * ks - 1.0) ** dim
    tails = np.cumsum((shells * 2.0 ** (-ks))[::-1])[::-1]  # tails[R] = sum_{k > R}
    return int(np.argmax(tails <= tol))


@dataclass(frozen=True)
class AlloyPotential:
    """Coupling ``lam`` and single-site profile ``A`` on ``Lambda_{R_A}``.

    Parameters
    ----------
    lam : float
        Disorder strength, ``lam >= 0``.
    profile : ndarray, shape (2R_A+1,)*d
        ``A_m`` for ``|m| <= R_A``, centered. Nonnegative with ``A_0 > 0``.
    """

    lam: float
    profile: np.ndarray

    def __post_init__(self):
        prof = np.asarray(self.profile, dtype=float)
        if prof.ndim < 1 or len(set(prof.shape)) != 1 or prof.shape[0] % 2 == 0:
            raise ValueError("profile must be a centered cube of odd side")
        if np.any(prof < 0):
            raise ValueError("site profile must be nonnegative")
        center = (prof.shape[0] // 2,) * prof.ndim
        if not prof[center] > 0:
            raise ValueError("site profile needs A_0 > 0")
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError(f"lam must be a finite nonnegative number, got {self.lam}")
        prof.setflags(write=False)
        object.__setattr__(self, "profile", prof)

    @property
    def dim(self):
        return self.profile.ndim

    @property
    def truncation_radius(self):
        return self.profile.shape[0] // 2

    @property
    def kernel_sum(self):
        return float(self.profile.sum())

    @property
    def sup_bound(self):
        """``lam * sum A``, the largest possible ``|D_n|``."""
        return self.lam * self.kernel_sum

    def A(self, m):
        m = np.asarray(as_site(m, self.dim))
        R = self.truncation_radius
        if np.any(np.abs(m) > R):
            return 0.0
        return float(self.profile[tuple(m + R)])

    def tail_sum(self, radius):
        """``sum_{|m| > radius} A_m`` over the stored profile."""
        R = self.truncation_radius
        axes = [np.arange(-R, R + 1)] * self.dim
        norms = np.max(np.abs(np.stack(np.meshgrid(*axes, indexing="ij"))), axis=0)
        return float(self.profile[norms > radius].sum())

    def with_lam(self, lam):
        return AlloyPotential(lam, self.profile)

    def potential_id(self):
        return _short_hash(float(self.lam), self.profile)

    def to_dict(self):
        return {"lam": self.lam, "dim": self.dim,
                "truncation_radius": self.truncation_radius,
                "kernel_sum": self.kernel_sum, "profile": self.profile.tolist()}


def default_potential(dim, lam=1.0, tol=1e-12, radius=None):
    """``A_m = 2^{-|m|}`` truncated where the dropped mass falls below ``tol``."""
    R = _tail_radius(dim, tol) if radius is None else int(radius)
    axes = [np.arange(-R, R + 1)] * dim
    norms = np.max(np.abs(np.stack(np.meshgrid(*axes, indexing="ij"))), axis=0)
    return AlloyPotential(lam, 2.0 ** (-norms.astype(float)))


@dataclass(frozen=True)
class DisorderConfig:
    """Sign field on a window plus a fill policy and continuous overrides.

    Parameters
    ----------
    window : Box
        Sites carrying sampled values.
    values : ndarray, shape (side,)*d
        Entries in ``{-1, +1}`` laid out like ``window``.
    outside_fill : {"plus", "minus", "zero"}
        Value used off the window.
    free_overrides : dict
        ``site -> t`` with ``|t| <= 1``; wins over everything else.
    seed : int or None
        Seed the values came from, for provenance.
    """

    window: Box
    values: np.ndarray
    outside_fill: str = "plus"
    free_overrides: dict = field(default_factory=dict)
    seed: int = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).reshape((self.window.side,) * self.window.dim)
        if not np.all(np.abs(vals) == 1):
            raise ValueError("window values must be +1 or -1")
        if self.outside_fill not in FILL_VALUES:
            raise ValueError(f"outside_fill must be one of {sorted(FILL_VALUES)}")
        over = {}
        for site, t in dict(self.free_overrides).items():
            t = float(t)
            if abs(t) > 1:
                raise ValueError(f"override {t} at {site} exceeds 1 in magnitude")
            over[as_site(site, self.window.dim)] = t
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "free_overrides", over)

    @property
    def dim(self):
        return self.window.dim

    def value(self, n):
        n = as_site(n, self.dim)
        if n in self.free_overrides:
            return self.free_overrides[n]
        if self.window.contains(np.asarray(n)):
            return float(self.values[tuple(np.asarray(n) - self.window.lower)])
        return FILL_VALUES[self.outside_fill]

    def field(self, box):
        """Effective sign field on ``box`` as an array of shape (side,)*d."""
        out = np.full((box.side,) * box.dim, FILL_VALUES[self.outside_fill])
        lo = np.maximum(box.lower, self.window.lower)
        hi = np.minimum(box.upper, self.window.upper)
        if np.all(lo <= hi):
            dst = tuple(slice(a, b + 1) for a, b in zip(lo - box.lower, hi - box.lower))
            src = tuple(slice(a, b + 1) for a, b in zip(lo - self.window.lower, hi - self.window.lower))
            out[dst] = self.values[src]
        for site, t in self.free_overrides.items():
            s = np.asarray(site)
            if box.contains(s):
                out[tuple(s - box.lower)] = t
        return out

    def with_overrides(self, overrides):
        merged = dict(self.free_overrides)
        merged.update({as_site(k, self.dim): v for k, v in overrides.items()})
        return DisorderConfig(self.window, self.values, self.outside_fill, merged, self.seed)

    def without_overrides(self):
        return DisorderConfig(self.window, self.values, self.outside_fill, {}, self.seed)

    def truncated(self, box):
        """Keep only what lies in ``box``; zero everywhere else."""
        lo = np.maximum(box.lower, self.window.lower)
        hi = np.minimum(box.upper, self.window.upper)
        if np.any(lo > hi) or np.any(hi - lo != hi[0] - lo[0]):
            raise ValueError("truncation box must meet the window in a cube")
        center = tuple(int(v) for v in (lo + hi) // 2)
        if np.any((hi - lo) % 2):
            raise ValueError("truncation box must meet the window in an odd cube")
        sub = Box(center, int((hi[0] - lo[0]) // 2))
        src = tuple(slice(a, b + 1) for a, b in zip(lo - self.window.lower, hi - self.window.lower))
        over = {s: t for s, t in self.free_overrides.items() if box.contains(np.asarray(s))}
        vals = self.values[src]
        return DisorderConfig(sub, vals, "zero", over, self.seed)

    def config_id(self):
        return _short_hash(self.window.center, self.window.radius, self.values,
                           self.outside_fill, sorted(self.free_overrides.items()))

    def to_dict(self):
        return {"window": self.window.to_dict(),
                "values": self.values.astype(int).ravel().tolist(),
                "outside_fill": self.outside_fill,
                "free_overrides": [[list(k), v] for k, v in sorted(self.free_overrides.items())],
                "seed": self.seed}


def constant_config(window, sign=1, fill=None):
    """Deterministic config ``eps = sign`` on the window (and outside)."""
    fill = fill or ("plus" if sign > 0 else "minus")
    return DisorderConfig(window, np.full((window.side,) * window.dim, float(np.sign(sign))), fill)


def sample_config(seed, window, fill="plus"):
    """Fair i.i.d. signs on ``window`` from ``numpy.random.default_rng(seed)``."""
    rng = np.random.default_rng(seed)
    vals = 2.0 * rng.integers(0, 2, size=(window.side,) * window.dim) - 1.0
    return DisorderConfig(window, vals, fill, {}, None if seed is None else int(seed))


def potential_on_box(p, cfg, box):
    """``D(eps)_n`` for every site of ``box``, flattened in index order."""
    R = p.truncation_radius
    eps = cfg.field(box.grown(R))
    if p.lam == 0:
        return np.zeros(box.size)
    if box.size * p.profile.size <= 2_000_000:
        out = signal.convolve(eps, p.profile, mode="valid", method="direct")
    else:
        out = signal.fftconvolve(eps, p.profile, mode="valid")
    return p.lam * out.ravel()


def potential_at(p, cfg, n):
    """``D(eps)_n = lam * sum_{|m-n| <= R_A} A_{n-m} value(m)``."""
    n = as_site(n, p.dim)
    box = Box(n, p.truncation_radius)
    eps = cfg.field(box)
    # A_{n-m} with m = n - offset: flip the profile against the field
    flipped = p.profile[(slice(None, None, -1),) * p.dim]
    return float(p.lam * np.sum(flipped * eps))


def spectral_edge(p, prof):
    """Top of the almost-sure spectrum, ``M + lam * sum A``."""
    return float(prof.M + p.lam * p.kernel_sum)


# ---------------------------------------------------------------------------
# box Hamiltonians

@dataclass(frozen=True)
class BoxHamiltonian:
    """Dense restriction of ``H`` to a box, with provenance ids."""

    box: Box
    matrix: np.ndarray
    provenance: dict

    @property
    def order(self):
        return self.matrix.shape[0]

    @property
    def diagonal_potential(self):
        return np.asarray(self.provenance.get("potential_values"))

    def eigh(self):
        return np.linalg.eigh(self.matrix)

    def eigvalsh(self):
        return np.linalg.eigvalsh(self.matrix)

    def to_csv(self, path):
        np.savetxt(path, self.matrix, delimiter=",", fmt="%.17g",
                   header=json.dumps({"box": self.box.to_dict(),
                                      **{k: v for k, v in self.provenance.items()
                                         if k != "potential_values"}}))


def hopping_matrix(box, kernel):
    """Restriction of the convolution by ``kernel`` to ``box``."""
    if box.dim != kernel.dim:
        raise ValueError("box and kernel dimensions differ")
    n = box.size
    mat = np.zeros((n, n))
    if not len(kernel.values):
        return mat
    sites = box.sites()
    imap = box.index_map()
    rows_all = np.arange(n)
    for off, val in zip(kernel.offsets, kernel.values):
        if np.any(np.abs(off) > 2 * box.radius):
            continue
        # H(i, j) = T(n_i - n_j), so column site is n_i - off
        cols_sites = sites - off
        ok = box.contains(cols_sites)
        if not np.any(ok):
            continue
        mat[rows_all[ok], imap.index(cols_sites[ok])] = val
    return mat


def assemble_hamiltonian(box, kernel, p, cfg):
    """``H`` restricted to ``box``: ``T(n_i - n_j)`` off the diagonal,
    ``T(0) + D_n`` on it."""
    if not (box.dim == kernel.dim == p.dim == cfg.dim):
        raise ValueError("box, kernel, potential and config dimensions differ")
    mat = hopping_matrix(box, kernel)
    pot = potential_on_box(p, cfg, box)
    mat[np.diag_indices_from(mat)] += pot
    prov = {"kernel_id": kernel.kernel_id(), "potential_id": p.potential_id(),
            "config_id": cfg.config_id(), "potential_values": pot}
    mat.setflags(write=False)
    return BoxHamiltonian(box, mat, prov)
