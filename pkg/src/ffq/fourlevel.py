"""Closed-form dynamics of a doubly degenerate four-level system.

States are ordered ``(s_L, s_R, c_L, c_R)``.  The noiseless Hamiltonian is

    H0 = [[0,   g_s, g_1, g_2],
          [g_s, 0,   g_2, g_1],
          [g_1, g_2, d,   g_c],
          [g_2, g_1, g_c, d  ]]

and each side carries its own noise channel,
``h_L = gamma1 (|s_L><c_L| + h.c.) - 2 gamma2 |c_L><c_L|`` (and likewise
``h_R``).  The symmetric and antisymmetric sectors decouple, so ``H0`` is
diagonalized by two mixing angles ``phi_+`` and ``phi_-``.

Eigenvector ``j`` of the rotation is column ``j``: columns 0 and 2 span the
symmetric sector, columns 1 and 3 the antisymmetric one.  The six mode
frequencies are ``w_(j,k) = lambda_j - lambda_k`` for the pairs

    a = (1, 0), b = (3, 0), c = (2, 1), d = (2, 3), e = (2, 0), f = (3, 1).
"""

from dataclasses import dataclass
import math

import numpy as np

from .noise_engine import NoiseSpectrum, j00_exact

__all__ = [
    "FourLevelParams",
    "ModeSet",
    "FourLevelTrajectory",
    "MODE_PAIRS",
    "mixing_angles",
    "rotation_matrix",
    "hamiltonian",
    "noise_operators",
    "mode_set",
    "amplitudes",
    "evolve_analytic",
    "equilibrium_leakage_4lv",
    "case_report",
    "HierarchyError",
]

MODE_NAMES = ("a", "b", "c", "d", "e", "f")
MODE_PAIRS = {"a": (1, 0), "b": (3, 0), "c": (2, 1), "d": (2, 3), "e": (2, 0), "f": (3, 1)}


class HierarchyError(ValueError):
    """Parameters do not satisfy the ordering a regime formula relies on."""


@dataclass(frozen=True)
class FourLevelParams:
    """Energies and noise strengths of the four-level model (rad/s)."""

    delta: float
    g_s: float
    g_c: float
    g_1: float = 0.0
    g_2: float = 0.0
    gamma1: float = 0.0
    gamma2: float = 0.0

    @classmethod
    def from_rates(cls, rates):
        """Map two-qubit coupling rates onto the four-level model.

        ``s_L, s_R, c_L, c_R`` are ``|01>, |10>, |02>, |20>``.  The leakage
        coupling enters as ``g_2 = -g_l`` together with
        ``gamma1 = -rates.gamma2``; this is a gauge choice (a sign flip of
        both charge-excited states) that fixes ``phi_- = -pi/2`` on resonance.
        The charge-dephasing strength of the two-qubit problem becomes
        ``gamma2`` here, and the transition strength becomes ``gamma1``.
        """
        return cls(delta=rates.delta, g_s=rates.g_f, g_c=rates.g_c, g_1=0.0,
                   g_2=-rates.g_l, gamma1=-rates.gamma2, gamma2=rates.gamma1)


@dataclass(frozen=True)
class ModeSet:
    frequencies: np.ndarray
    rates: np.ndarray
    angles: tuple
    rotation: np.ndarray
    eigenvalues: np.ndarray

    def as_dict(self):
        return {name: (float(self.frequencies[i]), float(self.rates[i]))
                for i, name in enumerate(MODE_NAMES)}


def hamiltonian(p):
    return np.array([
        [0.0, p.g_s, p.g_1, p.g_2],
        [p.g_s, 0.0, p.g_2, p.g_1],
        [p.g_1, p.g_2, p.delta, p.g_c],
        [p.g_2, p.g_1, p.g_c, p.delta],
    ])


def noise_operators(p):
    """Left and right noise operators ``(h_L, h_R)``."""
    h_l = np.zeros((4, 4))
    h_l[0, 2] = h_l[2, 0] = p.gamma1
    h_l[2, 2] = -2.0 * p.gamma2
    h_r = np.zeros((4, 4))
    h_r[1, 3] = h_r[3, 1] = p.gamma1
    h_r[3, 3] = -2.0 * p.gamma2
    return h_l, h_r


def mixing_angles(p):
    """``tan(phi_+-) = -2 (g_1 +- g_2) / (-delta -+ (g_c - g_s))`` with the
    quadrant fixed by the signs of numerator and denominator, so that both
    angles tend to ``pi`` for large positive ``delta``."""
    phi_p = math.atan2(-2.0 * (p.g_1 + p.g_2), -p.delta - (p.g_c - p.g_s))
    phi_m = math.atan2(-2.0 * (p.g_1 - p.g_2), -p.delta + (p.g_c - p.g_s))
    return phi_p, phi_m


def rotation_matrix(phi_p, phi_m):
    cp, sp = math.cos(phi_p / 2), math.sin(phi_p / 2)
    cm, sm = math.cos(phi_m / 2), math.sin(phi_m / 2)
    return np.array([
        [cp, cm, sp, sm],
        [cp, -cm, sp, -sm],
        [-sp, -sm, cp, cm],
        [-sp, sm, cp, -cm],
    ]) / math.sqrt(2.0)


def _eigenvalues(p, phi_p, phi_m):
    def pair(a, d, b, phi):
        mean, half = 0.5 * (a + d), 0.5 * (a - d)
        lo = mean + half * math.cos(phi) - b * math.sin(phi)
        hi = mean - half * math.cos(phi) + b * math.sin(phi)
        return lo, hi

    l0, l2 = pair(p.g_s, p.delta + p.g_c, p.g_1 + p.g_2, phi_p)
    l1, l3 = pair(-p.g_s, p.delta - p.g_c, p.g_1 - p.g_2, phi_m)
    return np.array([l0, l1, l2, l3])


def mode_set(p):
    """Mode frequencies, decay rates, mixing angles and rotation in closed form.

    Rates are the differences of the per-column channel diagonals
    ``-gamma2/2 -+ q_+-`` with ``q = (gamma1 sin(phi) - gamma2 cos(phi)) / 2``;
    both channels give the same value, so each mode decays as
    ``exp(-2 J(t,0,0) Gamma^2)``.
    """
    phi_p, phi_m = mixing_angles(p)
    lam = _eigenvalues(p, phi_p, phi_m)
    q_p = 0.5 * (p.gamma1 * math.sin(phi_p) - p.gamma2 * math.cos(phi_p))
    q_m = 0.5 * (p.gamma1 * math.sin(phi_m) - p.gamma2 * math.cos(phi_m))
    diag = np.array([-q_p, -q_m, q_p, q_m]) - 0.5 * p.gamma2
    freqs = np.array([lam[j] - lam[k] for j, k in MODE_PAIRS.values()])
    rates = np.array([diag[j] - diag[k] for j, k in MODE_PAIRS.values()])
    return ModeSet(freqs, rates, (phi_p, phi_m), rotation_matrix(phi_p, phi_m), lam)


def _check_rho(rho0):
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (4, 4):
        raise ValueError("rho0 must be 4x4")
    if np.max(np.abs(rho0 - rho0.conj().T)) > 1e-10 or abs(np.trace(rho0) - 1) > 1e-10:
        raise ValueError("rho0 must be Hermitian with unit trace")
    return rho0


def amplitudes(p, rho0, a, b):
    """Amplitude table ``C_{ab,jk} = R_aj R_bk (R^T rho0 R)_jk``.

    Returns
    -------
    dict
        ``'eq'`` (equilibrium, sum of ``j = k``) and, for each mode name ``m``,
        ``m`` and ``-m`` amplitudes that multiply ``exp(-i w_m t)`` and
        ``exp(+i w_m t)``.
    """
    rho0 = _check_rho(rho0)
    r = mode_set(p).rotation
    c = r[a, :, None] * r[b, None, :] * (r.T @ rho0 @ r)
    table = {"eq": complex(np.trace(c))}
    for name, (j, k) in MODE_PAIRS.items():
        table[name] = complex(c[j, k])
        table["-" + name] = complex(c[k, j])
    return table


@dataclass
class FourLevelTrajectory:
    """Closed-form trajectory: amplitudes for all elements plus modes."""

    params: FourLevelParams
    modes: ModeSet
    table: np.ndarray
    equilibrium: np.ndarray

    def evaluate(self, times, spectrum=None):
        """Density matrices at ``times``; ``spectrum=None`` means noiseless."""
        times = np.asarray(times, dtype=float)
        lam = self.modes.eigenvalues
        w = lam[:, None] - lam[None, :]
        decay = np.zeros((len(times), 4, 4))
        if spectrum is not None:
            gam = np.zeros((4, 4))
            for i, (j, k) in enumerate(MODE_PAIRS.values()):
                gam[j, k] = gam[k, j] = self.modes.rates[i]
            decay = 2.0 * j00_exact(spectrum, times)[:, None, None] * (gam**2)[None]
        factor = np.exp(-1j * w[None] * times[:, None, None] - decay)
        return np.einsum("abjk,tjk->tab", self.table, factor)


def evolve_analytic(p, rho0, times=None, spectrum=None):
    """Closed-form evolution; returns the trajectory object (and values if ``times`` given)."""
    rho0 = _check_rho(rho0)
    modes = mode_set(p)
    r = modes.rotation
    rp = r.T @ rho0 @ r
    table = np.einsum("aj,bk,jk->abjk", r, r, rp)
    equilibrium = np.einsum("abjj->ab", table)
    traj = FourLevelTrajectory(p, modes, table, equilibrium)
    if times is None:
        return traj
    return traj, traj.evaluate(times, spectrum)


def equilibrium_leakage_4lv(p, alpha, beta):
    """Long-time population of the ``c`` states for ``alpha|s_L> + beta|s_R>``."""
    if abs(alpha * alpha + beta * beta - 1) > 1e-12:
        raise ValueError("need alpha^2 + beta^2 = 1")
    phi_p, phi_m = mixing_angles(p)
    return 0.25 * (alpha * beta * (math.cos(2 * phi_m) - math.cos(2 * phi_p))
                   + math.sin(phi_p) ** 2 + math.sin(phi_m) ** 2)


def case_report(p, thresholds=(1.0 / 3.0, 3.0)):
    """Regime classification with the matching gate time and quality factor.

    The regime follows ``r = delta / (g_c - g_s)``: ``r >= 3`` weak coupling
    (case 1), ``1/3 <= r <= 3`` resonance (case 2), otherwise strong coupling
    (case 3).  All regimes assume ``g_c - g_s > |g_2|``.  Gate time
    ``T_g = pi / (2 g_s)``; a vanishing decay rate gives ``Q = inf``.
    """
    gap = p.g_c - p.g_s
    if not gap > abs(p.g_2):
        raise HierarchyError("case analysis requires g_c - g_s > |g_2|")
    if p.g_s <= 0:
        raise HierarchyError("case analysis requires g_s > 0")
    ratio = p.delta / gap
    lo, hi = thresholds
    g2sq = p.g_2 * p.g_2
    gam = abs(p.gamma2)
    if ratio >= hi:
        regime = 1
        den = 2 * math.pi * gam * gap * g2sq
        q = p.delta**3 * p.g_s / den if den else math.inf
        leak = 2 * g2sq / p.delta**2
    elif ratio >= lo:
        regime = 2
        q = 3 * p.g_s / (math.pi * gam) if gam else math.inf
        leak = 0.25
    else:
        regime = 3
        den = 2 * math.pi * gam * abs(p.delta)
        q = (4 * g2sq + gap * gap) ** 1.5 * p.g_s / den if den else math.inf
        leak = 2 * g2sq / (4 * g2sq + gap * gap)
    return {"regime": regime, "ratio": ratio, "gate_time": math.pi / (2 * p.g_s),
            "quality_factor": q, "leakage_estimate": leak}
