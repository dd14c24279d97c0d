"""Interaction sidebands of fermionic clock atoms in optical lattice sites.

Modules
-------
core       constants, units and shared value types
overlap    axial overlap integrals and thermal interaction factors
spinmodel  N-atom pseudo-spin model: exact evolution and collective sidebands
thermal    finite-temperature two-atom lineshapes and the closed-form sideband
ensemble   averaging over lattice sites with Gaussian beam inhomogeneity
analysis   binning, reflect-and-subtract, Lorentzian centring and a^- fits
cli        configuration-driven command line
"""

__version__ = "0.1.0"
