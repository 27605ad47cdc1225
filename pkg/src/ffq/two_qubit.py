"""Two dipole-coupled flip-flop qubits.

Product states are indexed ``4*j + k`` where ``j`` (``k``) is the dressed
level of qubit 1 (qubit 2).  Dressed levels are ordered by energy, not by
charge or spin character, so at large detuning the labels ``|2>`` and ``|3>``
need not be the charge-excited pair.

Both qubits are biased identically, so a single spectrum and one set of
``z`` coefficients describe both of them.  All energies are angular
frequencies (rad/s).
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy import constants as _sc
from scipy.optimize import brentq

from . import fourlevel
from .single_qubit import (
    DEFAULT_CONSTANTS,
    QubitBias,
    ZCoefficients,
    exact_spectrum,
    build_hamiltonian,
    z_coefficients_numeric,
    SX_I,
    SZ_TX,
)
from .units import UEV

__all__ = [
    "DipoleParams",
    "CouplingRates",
    "TwoQubitSystem",
    "OperatingPoint",
    "OPERATING_POINTS",
    "ResonanceError",
    "dipole_strength",
    "coupling_rates",
    "build_two_qubit",
    "manifold_block",
    "noise_operators",
    "gate_analytics",
    "equilibrium_leakage",
    "long_time_t1",
    "point_rates",
    "gate_frequency",
    "line_spectrum",
    "swap_time",
    "calibrate_vdd",
    "DEFAULT_VDD",
    "DEFAULT_OMEGA_N",
    "DEFAULT_VT_UEV",
    "MANIFOLD",
]

#: Calibrated dipole strength: 150 ns swap at operating point ``a``.
DEFAULT_VDD = 2 * math.pi * 444.18e6
DEFAULT_OMEGA_N = 1.0 * UEV
DEFAULT_VT_UEV = 47.15
#: Product-basis indices of ``|01>, |10>, |02>, |20>``.
MANIFOLD = (1, 4, 2, 8)


class ResonanceError(ZeroDivisionError):
    """Raised when a closed form is evaluated on its divergent line."""


@dataclass(frozen=True)
class DipoleParams:
    """Either a direct ``v_dd`` (rad/s) or dipole geometry in metres.

    Give ``v_dd`` alone, or all of ``d1, d2, r`` (``eps_r`` defaults to the
    silicon value 11.7).
    """

    v_dd: float = None
    d1: float = None
    d2: float = None
    r: float = None
    eps_r: float = 11.7

    def __post_init__(self):
        geometry = (self.d1, self.d2, self.r)
        if self.v_dd is not None:
            if any(g is not None for g in geometry):
                raise ValueError("give either v_dd or geometry, not both")
            if not self.v_dd > 0:
                raise ValueError("v_dd must be positive")
            return
        if any(g is None for g in geometry):
            raise ValueError("geometry needs d1, d2 and r")
        if not all(g > 0 for g in geometry):
            raise ValueError("d1, d2 and r must be positive")
        if not self.eps_r >= 1:
            raise ValueError("eps_r must be at least 1")


def dipole_strength(params):
    """``V_dd = e^2 d1 d2 / (16 pi eps_r eps_0 r^3)`` converted to rad/s."""
    if params.v_dd is not None:
        return float(params.v_dd)
    energy = (_sc.e**2 * params.d1 * params.d2
              / (16 * math.pi * params.eps_r * _sc.epsilon_0 * params.r**3))
    return energy / _sc.hbar


@dataclass(frozen=True)
class CouplingRates:
    """Dipole coupling rates, effective noise strengths and the qubit-leakage gap.

    ``g_f, g_l, g_c`` are non-negative.  ``gamma2`` carries the sign of
    ``z31 * z10`` so that the product ``g_l * gamma2`` keeps its physical
    sign after ``g_l`` is stored as a magnitude.
    """

    g_f: float
    g_l: float
    g_c: float
    gamma1: float
    gamma2: float
    delta: float


def coupling_rates(z, v_dd, spectrum, omega_n=DEFAULT_OMEGA_N):
    g_l = v_dd * z.z31 * z.z10
    sign = -1.0 if g_l < 0 else 1.0
    return CouplingRates(
        g_f=v_dd * z.z31**2,
        g_l=abs(g_l),
        g_c=v_dd * z.z10**2,
        gamma1=omega_n * (z.z30 - z.z03) / 2,
        gamma2=sign * omega_n * (z.z11 + z.z22) / 2,
        delta=float(spectrum.energies[2] - spectrum.energies[1]),
    )


@dataclass(frozen=True)
class TwoQubitSystem:
    hamiltonian: np.ndarray
    basis_labels: tuple
    mode: str


def _truncated_z(z):
    """Dressed position operator keeping only the ``z10`` and ``z31`` terms."""
    return z.z10 * SX_I + z.z31 * SZ_TX


def build_two_qubit(spectrum, z, v_dd, mode="full_Z"):
    """16x16 Hamiltonian ``diag(E_j + E_k) + V_dd * Z (x) Z`` in the dressed basis.

    ``mode='full_Z'`` rebuilds ``Z`` from all nine coefficients (keeping the
    small Ising-like parts); ``mode='truncated_eq8'`` keeps the four
    ``z10``/``z31`` products only.  The constant and single-qubit parts of
    the dipole energy are assumed compensated by the bias fields.
    """
    if mode == "full_Z":
        zop = z.operator()
    elif mode == "truncated_eq8":
        zop = _truncated_z(z)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    e = np.asarray(spectrum.energies, dtype=float)
    h = np.diag((e[:, None] + e[None, :]).ravel()) + v_dd * np.kron(zop, zop)
    h = 0.5 * (h + h.T)
    labels = tuple((j, k) for j in range(4) for k in range(4))
    return TwoQubitSystem(h, labels, mode)


def manifold_block(system):
    """The ``{|01>, |10>, |02>, |20>}`` block, in that order."""
    idx = np.array(MANIFOLD)
    return system.hamiltonian[np.ix_(idx, idx)]


_MAIN_TERMS = ("30", "03", "33", "11", "22")


def noise_operators(z, omega_n=DEFAULT_OMEGA_N, terms="main"):
    """Charge-noise operators ``h_i = omega_n Z_i / 2`` for both qubits.

    ``terms='main'`` keeps the dephasing (``z30, z03, z33``) and leakage
    (``z11, z22``) parts; ``terms='all'`` keeps all nine coefficients,
    which adds the charge-flip and spin-flip parts that connect the
    single-excitation manifold to ``|00>`` and ``|11>``.
    """
    if terms == "all":
        zop = z.operator()
    elif terms == "main":
        keep = {f"z{k}": (getattr(z, f"z{k}") if k in _MAIN_TERMS else 0.0)
                for k in ("03", "10", "30", "31", "33", "11", "22", "01", "13")}
        zop = ZCoefficients(**keep).operator()
    else:
        raise ValueError(f"unknown terms {terms!r}")
    h = 0.5 * omega_n * zop
    eye = np.eye(4)
    return [np.kron(h, eye), np.kron(eye, h)]


def _nonresonant(rates):
    d2, gc2 = rates.delta**2, rates.g_c**2
    if abs(d2 - gc2) <= 1e-12 * max(d2, gc2):
        raise ResonanceError("delta^2 - g_c^2 vanishes (delta = +-g_c)")
    if rates.delta == 0:
        raise ResonanceError("delta vanishes")
    return d2, gc2


def gate_analytics(rates):
    """Gate frequencies, decay rates and quality factors in the three regimes.

    Point-``a`` quantities use the beat between the two dominant lines
    (``3 g_f``) as gate frequency and ``gamma1`` as decay rate.
    """
    d, gf, gl, gc = rates.delta, rates.g_f, rates.g_l, rates.g_c
    g1, g2 = rates.gamma1, rates.gamma2
    d2, gc2 = _nonresonant(rates)
    slow_den = 2 * gf * g1 - gl * g2
    c_den = d2 * g2 - 2 * gc * gl * g1
    return {
        "omega_slow": 2 * gf * d2 / (gc2 - d2),
        "omega_fast": gc - d,
        "gamma_slow": 2 * d * gf / gc2 * (2 * g1 - (gl / gf) * g2) if gf else 0.0,
        "gamma_fast": g1,
        "omega_c": 2 * gf * d2 / (d2 - gc2),
        "gamma_c": 2 * gl * g2 / d - 4 * g1 * gc * gl**2 / d**3,
        "Q_a": 3 * gf / g1 if g1 else math.inf,
        "Q_b": 2 * gf * d2 / (g1 * (gc2 - d2)) if g1 else math.inf,
        "Q_b_slow": gf * gc2 * d / ((gc2 - d2) * slow_den) if slow_den else math.inf,
        "Q_b_fast": (gc - d) / g1 if g1 else math.inf,
        "Q_c": d**5 * gf / (gl * (d2 - gc2) * c_den) if gl and c_den else math.inf,
    }


def equilibrium_leakage(rates):
    """Long-time charge-excited population starting from ``|01>``."""
    return fourlevel.equilibrium_leakage_4lv(fourlevel.FourLevelParams.from_rates(rates), 1.0, 0.0)


def long_time_t1(z, omega_n, omega0, omega_b):
    """Rate ``omega_n^2 (z10^2/omega0 + z31^2/omega_B)`` of decay out of the
    single-excitation manifold towards ``|00>`` and ``|11>``."""
    return omega_n**2 * (z.z10**2 / omega0 + z.z31**2 / omega_b)


# --- operating points and calibration ------------------------------------------

@dataclass(frozen=True)
class OperatingPoint:
    b_field: float
    e_field: float


OPERATING_POINTS = {
    "a": OperatingPoint(0.796, 3.13),
    "b": OperatingPoint(0.806, 0.95),
    "c": OperatingPoint(0.771, 0.0),
}


def _resolve(point):
    if isinstance(point, OperatingPoint):
        return point
    if isinstance(point, str):
        try:
            return OPERATING_POINTS[point]
        except KeyError:
            raise ValueError(f"unknown operating point {point!r}; use a, b or c") from None
    b, e = point
    return OperatingPoint(float(b), float(e))


def point_rates(point, v_dd=DEFAULT_VDD, vt_ueV=DEFAULT_VT_UEV, omega_n=DEFAULT_OMEGA_N,
                constants=DEFAULT_CONSTANTS):
    """Bias, dressed spectrum, ``z`` coefficients and coupling rates at ``point``.

    ``point`` is ``'a'``, ``'b'``, ``'c'`` or a ``(B [T], E_z - E_c [V/cm])`` pair.
    """
    op = _resolve(point)
    bias = QubitBias.from_field(op.e_field, vt_ueV, op.b_field, constants)
    spectrum = exact_spectrum(build_hamiltonian(bias))
    z = z_coefficients_numeric(spectrum, bias)
    return bias, spectrum, z, coupling_rates(z, v_dd, spectrum, omega_n)


def line_spectrum(params, rho0=None):
    """Lines of ``P_01`` (element ``(0, 0)`` of the four-level model).

    Returns ``(peak_amplitude, |frequency|)`` pairs sorted by decreasing
    amplitude; a line ``2|C| cos(w t)`` has peak amplitude ``2|C|``.  The
    default initial state is ``|01>``.
    """
    if rho0 is None:
        rho0 = np.zeros((4, 4))
        rho0[0, 0] = 1.0
    table = fourlevel.amplitudes(params, rho0, 0, 0)
    freqs = fourlevel.mode_set(params).frequencies
    return sorted(((2 * abs(table[n]), abs(f)) for n, f in zip(fourlevel.MODE_NAMES, freqs)),
                  reverse=True)


def gate_frequency(rates, region):
    """Swap frequency in one of the three coupling regions.

    ``'a'`` (``g_c ~ delta``): the beat ``3 g_f`` between the lines
    ``(2 g_l +- 3 g_f)/2``; ``'b'`` (``g_c > delta``): ``|omega_slow|``;
    ``'c'`` (``g_c < delta``): ``omega_c``.
    """
    if region == "a":
        return 3 * rates.g_f
    analytics = gate_analytics(rates)
    if region == "b":
        return abs(analytics["omega_slow"])
    if region == "c":
        return abs(analytics["omega_c"])
    raise ValueError(f"unknown region {region!r}; use a, b or c")


def swap_time(point, v_dd=DEFAULT_VDD, region=None, vt_ueV=DEFAULT_VT_UEV,
              constants=DEFAULT_CONSTANTS):
    """Noiseless swap time ``pi / omega_gate`` at an operating point.

    ``region`` defaults to the label of a named point and is required for
    explicit ``(B, E)`` points.
    """
    if region is None:
        if not isinstance(point, str):
            raise ValueError("region is required for explicit bias points")
        region = point
    rates = point_rates(point, v_dd, vt_ueV, constants=constants)[3]
    return math.pi / gate_frequency(rates, region)


def calibrate_vdd(target=150e-9, point="a", region=None, vt_ueV=DEFAULT_VT_UEV, constants=DEFAULT_CONSTANTS,
                  bracket=(2 * math.pi * 1e6, 2 * math.pi * 1e11), rtol=1e-4):
    """Dipole strength giving a noiseless swap time ``target`` (s) at ``point``.

    Root-finds on ``log V_dd`` inside ``bracket``; raises ``ValueError`` if
    the target cannot be bracketed.
    """
    if not target > 0:
        raise ValueError("target must be positive")
    if region is None:
        if not isinstance(point, str):
            raise ValueError("region is required for explicit bias points")
        region = point
    _, spectrum, z, _ = point_rates(point, 1.0, vt_ueV, constants=constants)

    def excess(log_v):
        rates = coupling_rates(z, math.exp(log_v), spectrum)
        return math.log(math.pi / gate_frequency(rates, region)) - math.log(target)

    lo, hi = (math.log(b) for b in bracket)
    f_lo, f_hi = excess(lo), excess(hi)
    if f_lo * f_hi > 0:
        raise ValueError(f"target {target:g} s cannot be bracketed by V_dd in {bracket}")
    return math.exp(brentq(excess, lo, hi, xtol=rtol * 0.1, rtol=rtol * 0.1))
