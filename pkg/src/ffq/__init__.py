"""Charge-noise decoherence of single and dipole-coupled donor flip-flop qubits."""

__version__ = "0.1.0"

from . import fourlevel, noise_engine, single_qubit, two_qubit  # noqa: E402,F401
