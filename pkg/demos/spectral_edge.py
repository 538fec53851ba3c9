"""
Spectral edge of the alloy model
================================

The all-plus configuration pushes the potential to its maximum everywhere,
so the top eigenvalue of a box creeps up to the edge as the box grows.
"""

import math

import numpy as np

from alloyloc.lattice import Box
from alloyloc.model import (analyze_symbol, assemble_hamiltonian, constant_config,
                            default_potential, laplacian_kernel, spectral_edge)

kernel = laplacian_kernel(1)
profile = analyze_symbol(kernel)
p = default_potential(1, lam=1.0)
E_star = spectral_edge(p, profile)
print(f"symbol max M = {profile.M}, maximizers {list(profile.maximizers)}, E* = {E_star:.9f}")

# the deficit is the lowest Dirichlet eigenvalue of the free chain
for N in (8, 16, 32, 64):
    box = Box((0,), N)
    H = assemble_hamiltonian(box, kernel, p, constant_config(box.grown(p.truncation_radius)))
    top = np.linalg.eigvalsh(H.matrix)[-1]
    print(f"N={N:3d}  deficit {E_star - top:.3e}  closed form {2 - 2 * math.cos(math.pi / (2 * N + 2)):.3e}")
