"""
Gluing good blocks
==================

Classify the N-blocks covering a larger region, then check that the
region's Green function inherits a norm bound and off-diagonal decay.
"""

from alloyloc.green import GoodnessThresholds, classify_blocks, coupling_check
from alloyloc.lattice import Box
from alloyloc.model import (analyze_symbol, default_potential, laplacian_kernel,
                            sample_config, spectral_edge)

kernel = laplacian_kernel(1)
p = default_potential(1, lam=5.0)
E = spectral_edge(p, analyze_symbol(kernel))
th = GoodnessThresholds(0.25)
region = Box((0,), 81)

cfg = sample_config(3, region.grown(p.truncation_radius))
cls = classify_blocks(region, 27, kernel, p, cfg, E, th)
print(f"{len(cls.blocks)} blocks, bad centers {cls.bad_centers}")

rep = coupling_check(region, Box((0,), 27), Box((0,), 40), cls, E, th, kernel, p, cfg)
print(f"gamma_N = {rep.gamma_N:.3f}, gamma_N1 = {rep.gamma_N1:.3f}")
for name, c in rep.conclusions.items():
    print(f"  {name:18s} holds={c['holds']}  log-margin {c['margin']:.2f}")
