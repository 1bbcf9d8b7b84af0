"""SIMD SFQ quantum-controller toolkit.

Simulates transmon qubits driven by single-flux-quantum pulse trains,
calibrates per-qubit gate decompositions in software, compiles NISQ
circuits under broadcast (SIMD) control constraints, and models the
power/area/cable cost of the controller hardware.
"""

from sfqctrl.transmon import (
    TransmonSpec,
    FidelityReport,
    free_hamiltonian,
    sfq_kick,
    evolve,
    projected_fidelity,
    flux_frequency,
)

__all__ = [
    "TransmonSpec",
    "FidelityReport",
    "free_hamiltonian",
    "sfq_kick",
    "evolve",
    "projected_fidelity",
    "flux_frequency",
]

__version__ = "0.1.0"
