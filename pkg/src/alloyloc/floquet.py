"""Periodic approximation and Floquet-Bloch decomposition.

A ``Lambda_N``-periodic operator on Z^d splits into fibers indexed by the
quasi-momentum ``x``. Each fiber is a ``(2N+1)^d`` Hermitian matrix built from
the Floquet transform ``u_k(x) = sum_l u_{k+l} exp(2 pi i l.x)``, with ``l``
running over ``(2N+1) Z^d``. This module is the only place with complex
arithmetic; exported spectra are real.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .lattice import Box
from .model import potential_on_box

__all__ = [
    "PeriodicPotential",
    "periodize",
    "reduce_site",
    "floquet_transform",
    "h_coefficients",
    "FiberMatrix",
    "fiber_matrix",
    "bloch_matrix",
    "floquet_spectrum",
    "commensurate_grid",
    "torus_hamiltonian",
    "floquet_basis",
    "modified_canonical",
    "bloch_wave",
    "spectral_inclusion",
]


def reduce_site(n, N):
    """Split ``n`` as ``k + l`` with ``k`` in ``Lambda_N`` and ``l`` in ``(2N+1)Z^d``.

    Works row-wise on arrays; returns ``(k, l)``.
    """
    n = np.asarray(n)
    q = 2 * N + 1
    k = np.mod(n + N, q) - N
    return k, n - k


@dataclass(frozen=True)
class PeriodicPotential:
    """Potential with period ``2 N0 + 1`` along every axis.

    ``values`` has shape ``(2N0+1,)*d`` and is indexed like ``Lambda_{N0}``.
    """

    N0: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        q = 2 * self.N0 + 1
        if vals.ndim < 1 or any(s != q for s in vals.shape):
            raise ValueError(f"values must have shape ({q},)*d")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def dim(self):
        return self.values.ndim

    def at(self, n):
        """Value at site(s) ``n``; rows of a 2D array are sites."""
        k, _ = reduce_site(n, self.N0)
        idx = np.moveaxis(np.atleast_2d(k) + self.N0, -1, 0)
        out = self.values[tuple(idx)]
        return float(out[0]) if np.ndim(n) == 1 else out

    def on_box(self, box):
        return self.at(box.sites())

    @classmethod
    def zero(cls, N0, dim):
        return cls(N0, np.zeros((2 * N0 + 1,) * dim))

    def to_dict(self):
        return {"N0": self.N0, "dim": self.dim, "values": self.values.ravel().tolist()}


def periodize(cfg, p, N0):
    """Tile ``D(eps)`` computed on ``Lambda_{N0}`` with the true configuration."""
    box = Box.centered(N0, p.dim)
    vals = potential_on_box(p, cfg, box)
    return PeriodicPotential(N0, vals.reshape((box.side,) * box.dim))


def floquet_transform(u, x, N):
    """Floquet coefficients ``(u_k(x))_{k in Lambda_N}`` in index order.

    Parameters
    ----------
    u : dict or (sites, values)
        Finitely supported sequence.
    x : array_like, shape (d,)
        Quasi-momentum.
    N : int
        Period parameter; the period is ``2N+1``.
    """
    if isinstance(u, dict):
        sites = np.array([list(s) if np.ndim(s) else [s] for s in u.keys()], dtype=np.int64)
        vals = np.array(list(u.values()), dtype=complex)
    else:
        sites, vals = u
        sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
        vals = np.asarray(vals, dtype=complex)
    d = sites.shape[1]
    x = np.broadcast_to(np.asarray(x, dtype=float), (d,))
    box = Box.centered(N, d)
    out = np.zeros(box.size, dtype=complex)
    if len(vals):
        k, l = reduce_site(sites, N)
        np.add.at(out, box.index_map().index(k), vals * np.exp(2j * np.pi * (l @ x)))
    return out


def _convolution_fiber(offsets, values, x, N):
    """Matrix ``(c_{k-j}(x))_{k,j in Lambda_N}`` for the sequence ``c``."""
    d = offsets.shape[1] if len(offsets) else np.size(x)
    x = np.broadcast_to(np.asarray(x, dtype=float), (d,))
    box = Box.centered(N, d)
    imap = box.index_map()
    sites = box.sites()
    cols = np.arange(box.size)
    mat = np.zeros((box.size, box.size), dtype=complex)
    for o, v in zip(offsets, values):
        k, _ = reduce_site(sites + o, N)
        l = o - (k - sites)
        np.add.at(mat, (imap.index(k), cols), v * np.exp(2j * np.pi * (l @ x)))
    return mat


def _edge_sequence(kernel, M):
    offsets = np.concatenate([np.zeros((1, kernel.dim), dtype=np.int64), kernel.offsets])
    values = np.concatenate([[M], -kernel.values])
    return offsets, values


def h_coefficients(kernel, M, x, N):
    """Floquet coefficients of the sequence behind ``h = M - T^``."""
    offsets, values = _edge_sequence(kernel, M)
    return floquet_transform((offsets, values), x, N)


@dataclass(frozen=True)
class FiberMatrix:
    """Fiber at quasi-momentum ``x``: ``matrix = hopping_part + diag(diagonal)``."""

    quasi_momentum: np.ndarray
    hopping_part: np.ndarray
    diagonal: np.ndarray

    @property
    def matrix(self):
        return self.hopping_part + np.diag(self.diagonal)

    def eigvalsh(self):
        return np.linalg.eigvalsh(self.matrix)

    def eigh(self):
        return np.linalg.eigh(self.matrix)


def _potential_diag(periodic, N, dim):
    if periodic is None:
        return np.zeros((2 * N + 1) ** dim)
    if periodic.N0 != N and (2 * N + 1) % (2 * periodic.N0 + 1):
        raise ValueError("potential period must divide the fiber period")
    return periodic.on_box(Box.centered(N, periodic.dim))


def fiber_matrix(kernel, periodic, shift, x, N, M):
    """Fiber of ``shift + M - H`` with ``H = T + V``.

    The hopping part is ``(h_{k-j}(x))`` for ``h = M - T^`` and the diagonal
    is ``shift - V``. With ``V = 0, shift = 0`` the eigenvalues are
    ``h(x + s/(2N+1))`` for ``s`` in ``Lambda_N``.
    """
    offsets, values = _edge_sequence(kernel, M)
    P = _convolution_fiber(offsets, values, x, N)
    diag = shift - _potential_diag(periodic, N, kernel.dim)
    return FiberMatrix(np.asarray(x, dtype=float), P, diag)


def bloch_matrix(kernel, periodic, x, N):
    """Fiber of ``H = T + V`` itself; eigenvalues are ``T^(x + s/(2N+1))`` when ``V = 0``."""
    P = _convolution_fiber(kernel.offsets, kernel.values, x, N)
    return FiberMatrix(np.asarray(x, dtype=float), P, _potential_diag(periodic, N, kernel.dim))


def commensurate_grid(N, P, dim):
    """Quasi-momenta ``j / ((2N+1) P)`` in ``[-1/(2(2N+1)), 1/(2(2N+1)))^d``."""
    q = 2 * N + 1
    js = np.arange(-(P // 2), P - P // 2)
    return np.array(list(itertools.product(js, repeat=dim)), dtype=float) / (q * P)


def floquet_spectrum(kernel, periodic, N, x_grid):
    """Sorted union of the eigenvalues of ``bloch_matrix`` over ``x_grid``."""
    x_grid = np.atleast_2d(np.asarray(x_grid, dtype=float))
    vals = [bloch_matrix(kernel, periodic, x, N).eigvalsh() for x in x_grid]
    return np.sort(np.concatenate(vals))


def torus_hamiltonian(kernel, periodic, N, P):
    """``T + V`` on the torus ``Z^d / ((2N+1) P Z)^d`` with wrapped hopping."""
    d = kernel.dim
    L = (2 * N + 1) * P
    axes = [np.arange(L)] * d
    sites = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    strides = L ** np.arange(d - 1, -1, -1)
    n = len(sites)
    H = np.zeros((n, n))
    rows = np.arange(n)
    for o, v in zip(kernel.offsets, kernel.values):
        cols = np.mod(sites - o, L) @ strides
        np.add.at(H, (rows, cols), v)
    if periodic is not None:
        H[rows, rows] += periodic.at(sites)
    return H


def floquet_basis(x, N, dim=None):
    """Columns ``beta_s(x)_k = (2N+1)^{-d/2} exp(-2 pi i (x + s/(2N+1)).k)``.

    Rows and columns follow the index order of ``Lambda_N``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = dim or x.size
    x = np.broadcast_to(x, (d,))
    q = 2 * N + 1
    sites = Box.centered(N, d).sites()
    phase = (sites @ x)[:, None] + (sites @ sites.T) / q
    return np.exp(-2j * np.pi * phase) / q ** (d / 2)


def modified_canonical(l, x, N, dim=None):
    """``v_l = exp(-2 pi i x.l) delta_l`` as a vector over ``Lambda_N``."""
    l = np.atleast_1d(np.asarray(l, dtype=np.int64))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = dim or max(l.size, x.size)
    l = np.broadcast_to(l, (d,))
    x = np.broadcast_to(x, (d,))
    box = Box.centered(N, d)
    v = np.zeros(box.size, dtype=complex)
    v[box.index_map().index(l)] = np.exp(-2j * np.pi * float(x @ l))
    return v


def bloch_wave(phi, x, N, box):
    """Extend fiber coefficients ``phi`` (over ``Lambda_N``) to ``box`` as a Bloch wave.

    ``u_{k+l} = exp(-2 pi i l.x) phi_k``; returns the normalized vector.
    """
    sites = box.sites()
    k, l = reduce_site(sites, N)
    x = np.broadcast_to(np.asarray(x, dtype=float), (box.dim,))
    idx = Box.centered(N, box.dim).index_map().index(k)
    u = np.asarray(phi)[idx] * np.exp(-2j * np.pi * (l @ x))
    return u / np.linalg.norm(u)


def spectral_inclusion(H, E, xi):
    """Return ``(r, dist)`` with ``r = |(H-E) xi|`` and ``dist = dist(spec H, E)``.

    For unit ``xi`` and symmetric ``H`` one always has ``dist <= r``.
    """
    A = np.asarray(H)
    xi = np.asarray(xi)
    xi = xi / np.linalg.norm(xi)
    r = float(np.linalg.norm(A @ xi - E * xi))
    dist = float(np.min(np.abs(np.linalg.eigvalsh(A) - E)))
    return r, dist
