"""Edge localization for long-range operators with alloy-type disorder.

Submodules
----------
lattice      boxes, index maps and block covers on Z^d
model        hopping kernels, symbol analysis, alloy potentials, box Hamiltonians
green        finite-volume Green's functions and goodness tests
floquet      periodic approximation and Floquet-Bloch fibers
uncertainty  discrete Fourier transform, uncertainty principle, parameter schedule
randomness   correlation sums, Orlicz-norm checks, Monte Carlo events
msa          scales, free sites, eigenvalue variation, Wegner and localization
cli          batch experiment runner
"""

__version__ = "0.1.0"

from .lattice import Box, BoxCover, build_cover  # noqa: E402
from .model import (AlloyPotential, DisorderConfig, HoppingKernel,  # noqa: E402
                    analyze_symbol, assemble_hamiltonian, default_potential,
                    laplacian_kernel, sample_config, spectral_edge)
from .green import GoodnessThresholds, green_function, green_report  # noqa: E402

__all__ = [
    "__version__",
    "Box",
    "BoxCover",
    "build_cover",
    "AlloyPotential",
    "DisorderConfig",
    "HoppingKernel",
    "analyze_symbol",
    "assemble_hamiltonian",
    "default_potential",
    "laplacian_kernel",
    "sample_config",
    "spectral_edge",
    "GoodnessThresholds",
    "green_function",
    "green_report",
]
