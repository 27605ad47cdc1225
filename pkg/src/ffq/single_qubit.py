"""Single flip-flop qubit: Hamiltonian, spectra, position-operator expansion
and sweet-spot search.

Basis conventions
-----------------
The product basis is ordered ``{g-down, g-up, e-down, e-up}``: the charge
index (ground/excited charge-qubit state) is the slow index and the bare
flip-flop index the fast one.  ``sigma`` operators act on the charge index,
``tau`` operators on the flip-flop index, and ``sigma_z |g> = +|g>``,
``tau_z |down> = +|down>``.

Dressed levels are labelled by energy, ``|0> < |1> < |2> < |3>``.  Close to
the operating points this coincides with ``|g-down>, |g-up>, |e-down>,
|e-up>``; far from them (``omega_0 < omega_B``) the character of ``|1>`` and
``|2>`` is swapped while the labels stay energy-ordered.
"""

from dataclasses import dataclass, field, replace
import math

import numpy as np
from scipy import optimize

from .linalg import check_symmetric, gram_schmidt, jacobi_eigh
from .units import MHZ, TWO_PI, UEV, detuning_to_field, field_to_detuning

__all__ = [
    "PhysicalConstants",
    "QubitBias",
    "ChargeQubit",
    "FlipFlopSpectrum",
    "ZCoefficients",
    "PerturbationBreakdown",
    "charge_qubit",
    "build_hamiltonian",
    "position_operator",
    "exact_spectrum",
    "perturbative_spectrum",
    "z_coefficients_formula",
    "z_coefficients_numeric",
    "sweet_spot_condition",
    "omega10",
    "omega10_slope",
    "sweet_spot_detuning",
    "second_order_sweet_spot",
]

_SZ = np.diag([1.0, -1.0])
_SX = np.array([[0.0, 1.0], [1.0, 0.0]])
_SY = np.array([[0.0, -1.0j], [1.0j, 0.0]])
_I2 = np.eye(2)
_PAULI = (_I2, _SX, _SY, _SZ)

SZ_I = np.kron(_SZ, _I2)
SX_I = np.kron(_SX, _I2)
I_TZ = np.kron(_I2, _SZ)
I_TX = np.kron(_I2, _SX)
SZ_TZ = np.kron(_SZ, _SZ)
SX_TZ = np.kron(_SX, _SZ)
SZ_TX = np.kron(_SZ, _SX)
SX_TX = np.kron(_SX, _SX)
_EYE4 = np.eye(4)

# (charge, flip-flop) Pauli index pairs; 0=I, 1=x, 2=y, 3=z.
Z_LABELS = ("03", "10", "30", "31", "33", "11", "22", "01", "13")


class PerturbationBreakdown(ValueError):
    """Raised when the nondegenerate expansion is used with |w0 - wB| <= A/4."""


@dataclass(frozen=True)
class PhysicalConstants:
    """Material and device constants (angular frequencies, hbar = 1).

    ``zeeman_scale`` multiplies ``(gamma_e + gamma_n) * B`` to give the
    flip-flop splitting ``omega_B``.  Its default is calibrated so that a
    tunnel coupling of 47.15 ueV puts the second-order sweet spot at 0.796 T,
    matching the published operating points.  ``donor_dot_distance`` converts
    detuning energies into interface-field offsets E_z - E_c.
    """

    hyperfine_A: float = TWO_PI * 117e6
    gamma_e: float = TWO_PI * 29.97e9
    gamma_n: float = TWO_PI * 17.23e6
    delta_gamma: float = -0.0009
    zeeman_scale: float = 0.4599656
    donor_dot_distance: float = 25.33e-9
    ueV: float = UEV

    def __post_init__(self):
        for name in ("gamma_e", "gamma_n", "zeeman_scale", "donor_dot_distance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.hyperfine_A < 0:
            raise ValueError("hyperfine_A must be non-negative")
        if abs(self.delta_gamma) > 0.007:
            raise ValueError("|delta_gamma| is bounded by 0.007")

    def omega_B(self, b_field):
        return self.zeeman_scale * (self.gamma_e + self.gamma_n) * b_field

    def delta_omega_B(self, b_field):
        return self.delta_gamma * self.gamma_e / (self.gamma_e + self.gamma_n) * self.omega_B(b_field)

    def field_to_detuning(self, e_field_vcm):
        return field_to_detuning(e_field_vcm, self.donor_dot_distance)

    def detuning_to_field(self, epsilon):
        return detuning_to_field(epsilon, self.donor_dot_distance)


DEFAULT_CONSTANTS = PhysicalConstants()


@dataclass(frozen=True)
class QubitBias:
    """Bias point of one flip-flop qubit.

    ``epsilon`` and ``tunnel_coupling`` are angular frequencies (rad/s),
    ``b_field`` is in tesla.
    """

    epsilon: float
    tunnel_coupling: float
    b_field: float
    constants: PhysicalConstants = field(default=DEFAULT_CONSTANTS)

    def __post_init__(self):
        if not self.tunnel_coupling > 0:
            raise ValueError("tunnel_coupling must be positive")
        if not self.b_field > 0:
            raise ValueError("b_field must be positive")

    @classmethod
    def from_field(cls, e_field_vcm, vt_ueV, b_field, constants=DEFAULT_CONSTANTS):
        """Bias from an interface-field offset E_z - E_c (V/cm) and V_t in ueV."""
        return cls(constants.field_to_detuning(e_field_vcm), vt_ueV * UEV, b_field, constants)

    @property
    def e_field(self):
        """Field offset E_z - E_c in V/cm."""
        return self.constants.detuning_to_field(self.epsilon)

    @property
    def omega0(self):
        return math.hypot(self.epsilon, self.tunnel_coupling)

    @property
    def omega_B(self):
        return self.constants.omega_B(self.b_field)

    @property
    def delta_omega_B(self):
        return self.constants.delta_omega_B(self.b_field)

    @property
    def A(self):
        return self.constants.hyperfine_A

    def with_epsilon(self, epsilon):
        return replace(self, epsilon=epsilon)


@dataclass(frozen=True)
class ChargeQubit:
    omega0: float
    eta: float


@dataclass(frozen=True)
class FlipFlopSpectrum:
    """Four ascending energies and the matching eigenvectors (columns)."""

    energies: np.ndarray
    states: np.ndarray
    source: str

    @property
    def omega10(self):
        return self.energies[1] - self.energies[0]

    @property
    def delta(self):
        """Qubit-to-leakage gap E_2 - E_1."""
        return self.energies[2] - self.energies[1]


@dataclass(frozen=True)
class ZCoefficients:
    """Coefficients ``z_jk`` of the electron position operator in the dressed basis."""

    z03: float
    z10: float
    z30: float
    z31: float
    z33: float
    z11: float
    z22: float
    z01: float
    z13: float
    source: str = "formula"

    def as_dict(self):
        return {f"z{k}": getattr(self, f"z{k}") for k in Z_LABELS}

    def operator(self):
        """Rebuild the 4x4 dressed-basis operator from the nine coefficients."""
        z = np.zeros((4, 4))
        for label in Z_LABELS:
            j, k = int(label[0]), int(label[1])
            z = z + getattr(self, f"z{label}") * np.real(np.kron(_PAULI[j], _PAULI[k]))
        return z


def charge_qubit(bias):
    """Charge-qubit splitting and mixing angle, ``tan(eta) = V_t / epsilon``."""
    return ChargeQubit(bias.omega0, math.atan2(bias.tunnel_coupling, bias.epsilon))


def _hamiltonian_arrays(epsilon, vt, omega_b, d_omega_b, a_hf):
    epsilon = np.asarray(epsilon, dtype=float)
    w0 = np.hypot(epsilon, vt)
    c = (epsilon / w0)[..., None, None]
    s = (vt / w0)[..., None, None]
    w0 = w0[..., None, None]
    h_charge = -0.5 * w0 * SZ_I
    h_b = -0.5 * omega_b * I_TZ
    h_db = -0.25 * d_omega_b * (I_TZ + c * SZ_TZ + s * SX_TZ)
    donor = _EYE4 - c * SZ_I - s * SX_I
    h_a = -0.125 * a_hf * donor @ (_EYE4 - 2.0 * I_TX)
    return h_charge + h_b + h_db + h_a


def build_hamiltonian(bias):
    """4x4 single-qubit Hamiltonian in the product basis (rad/s)."""
    h = _hamiltonian_arrays(bias.epsilon, bias.tunnel_coupling, bias.omega_B,
                            bias.delta_omega_B, bias.A)
    return 0.5 * (h + h.T)


def position_operator(bias):
    """Electron position operator ``Z = |i><i| - |d><d|`` in the product basis."""
    q = charge_qubit(bias)
    return math.cos(q.eta) * SZ_I + math.sin(q.eta) * SX_I


def exact_spectrum(h):
    """Numerically exact spectrum of a symmetric 4x4 Hamiltonian."""
    h = np.asarray(h, dtype=float)
    check_symmetric(h)
    w, v = jacobi_eigh(h)
    return FlipFlopSpectrum(w, v, "exact")


def _check_nondegenerate(bias):
    gap = abs(bias.omega0 - bias.omega_B)
    if gap <= bias.A / 4:
        raise PerturbationBreakdown(
            f"|omega_0 - omega_B| = {gap / MHZ:.3f} MHz/2pi does not exceed A/4 = "
            f"{bias.A / 4 / MHZ:.3f} MHz/2pi"
        )


def perturbative_spectrum(bias):
    """Energies to second order and states to first order in the hyperfine coupling."""
    _check_nondegenerate(bias)
    a = bias.A
    w0, wb, dwb = bias.omega0, bias.omega_B, bias.delta_omega_B
    eta = charge_qubit(bias).eta
    c, s = math.cos(eta), math.sin(eta)
    s2 = s * s

    # Common charge-mixing term from the A and Delta-omega_B couplings.
    mix = wb / (4 * w0)
    lin = wb * dwb / (a * w0) if a else 0.0
    quad = wb * dwb**2 / (a * a * w0) if a else 0.0
    pref = a * a / (16 * wb)

    if a:
        e0 = (0.5 * (-w0 - wb) - a / 8 * (1 - c) - dwb / 4 * (1 + c)
              - pref * ((1 - c) ** 2 + s2 * (mix + wb / (w0 + wb) - lin + quad)))
        e1 = (0.5 * (-w0 + wb) - a / 8 * (1 - c) + dwb / 4 * (1 + c)
              - pref * (-(1 - c) ** 2 + s2 * (mix + wb / (w0 - wb) + lin + quad)))
        e2 = (0.5 * (w0 - wb) - a / 8 * (1 + c) - dwb / 4 * (1 - c)
              - pref * ((1 + c) ** 2 + s2 * (-mix - wb / (w0 - wb) + lin - quad)))
        e3 = (0.5 * (w0 + wb) - a / 8 * (1 + c) + dwb / 4 * (1 - c)
              - pref * (-(1 + c) ** 2 + s2 * (-mix - wb / (w0 + wb) - lin - quad)))
    else:
        # A -> 0 limit of the same expressions; only the Delta-omega_B mixing survives.
        q = s2 * dwb**2 / (16 * w0)
        e0 = 0.5 * (-w0 - wb) - dwb / 4 * (1 + c) - q
        e1 = 0.5 * (-w0 + wb) + dwb / 4 * (1 + c) - q
        e2 = 0.5 * (w0 - wb) - dwb / 4 * (1 - c) + q
        e3 = 0.5 * (w0 + wb) + dwb / 4 * (1 - c) + q

    k_m = a * s / (8 * w0) * (1 - 2 * dwb / a) if a else -s * dwb / (4 * w0)
    k_p = a * s / (8 * w0) * (1 + 2 * dwb / a) if a else s * dwb / (4 * w0)
    f_g = a / (4 * wb) * (1 - c)
    f_e = a / (4 * wb) * (1 + c)
    x_p = a * s / (4 * (w0 + wb))
    x_m = a * s / (4 * (w0 - wb))
    states = np.array([
        [1.0, f_g, k_m, -x_p],
        [-f_g, 1.0, -x_m, k_p],
        [-k_m, x_m, 1.0, f_e],
        [x_p, -k_p, -f_e, 1.0],
    ])
    energies = np.array([e0, e1, e2, e3])
    order = np.argsort(energies)
    states = gram_schmidt(states[:, order])
    return FlipFlopSpectrum(energies[order], states, "perturbative")


def z_coefficients_formula(bias):
    """Closed-form position-operator coefficients in the dressed basis."""
    _check_nondegenerate(bias)
    a = bias.A
    w0, wb, dwb = bias.omega0, bias.omega_B, bias.delta_omega_B
    eta = charge_qubit(bias).eta
    c, s = math.cos(eta), math.sin(eta)
    d2 = w0 * w0 - wb * wb
    z11 = -a * w0 * c * s / (2 * d2)
    return ZCoefficients(
        z03=a * a * w0**3 * c * s * s / (4 * wb * d2 * d2),
        z10=s + a * c * s / (4 * w0),
        z30=c - a * s * s / (4 * w0),
        z31=a * w0 * s * s / (2 * d2),
        z33=dwb * s * s / (2 * w0),
        z11=z11,
        z22=z11 * w0 / wb,
        z01=-a * w0 * dwb * c * s * s / (4 * wb * d2),
        z13=-dwb * c * s / (2 * w0),
        source="formula",
    )


def _pauli_components(z_dressed):
    out = {}
    for label in Z_LABELS:
        j, k = int(label[0]), int(label[1])
        out[label] = float(np.real(np.trace(np.kron(_PAULI[j], _PAULI[k]) @ z_dressed)) / 4)
    return out


def z_coefficients_numeric(spectrum, bias=None, z_product=None):
    """Project the position operator onto dressed Pauli products.

    Either ``bias`` (to rebuild ``Z`` in the product basis) or ``z_product``
    must be given.
    """
    if z_product is None:
        if bias is None:
            raise ValueError("need bias or z_product")
        z_product = position_operator(bias)
    z_d = spectrum.states.T @ z_product @ spectrum.states
    comps = _pauli_components(z_d)
    return ZCoefficients(**{f"z{k}": v for k, v in comps.items()}, source="numeric")


def z_sum_of_squares(z_dressed):
    """Sum of all sixteen squared Pauli components; equals tr(Z^2)/4."""
    total = 0.0
    for j in range(4):
        for k in range(4):
            total += (np.trace(np.kron(_PAULI[j], _PAULI[k]) @ z_dressed) / 4).real ** 2
    return total


def sweet_spot_condition(bias):
    """Left side of the lowest-order sweet-spot equation; zero at a sweet spot."""
    w0, wb = bias.omega0, bias.omega_B
    return (bias.delta_omega_B / w0
            + bias.A**2 * w0**2 * bias.epsilon / (2 * (w0**2 - wb**2) ** 2 * wb))


# --- exact omega_10 and its slope, vectorized over epsilon -----------------

def _spectra(epsilon, vt, b_field, constants):
    h = _hamiltonian_arrays(epsilon, vt, constants.omega_B(b_field),
                            constants.delta_omega_B(b_field), constants.hyperfine_A)
    return jacobi_eigh(h)


def omega10(epsilon, vt, b_field, constants=DEFAULT_CONSTANTS):
    """Exact qubit splitting E_1 - E_0 for an array of detunings."""
    w, _ = _spectra(epsilon, vt, b_field, constants)
    return w[..., 1] - w[..., 0]


def omega10_slope(epsilon, vt, b_field, constants=DEFAULT_CONSTANTS):
    """Exact d(omega_10)/d(epsilon) from the Hellmann-Feynman theorem.

    Only the charge term depends on epsilon in the position basis, with
    dH/d(epsilon) = -Z/2, so the slope is (<0|Z|0> - <1|Z|1>)/2.
    """
    epsilon = np.asarray(epsilon, dtype=float)
    w, v = _spectra(epsilon, vt, b_field, constants)
    w0 = np.hypot(epsilon, vt)
    c = (epsilon / w0)[..., None, None]
    s = (vt / w0)[..., None, None]
    z = c * SZ_I + s * SX_I
    zv = z @ v
    diag = np.einsum("...in,...in->...n", v, zv)
    return 0.5 * (diag[..., 0] - diag[..., 1])


def omega10_fd_slope(epsilon, vt, b_field, constants=DEFAULT_CONSTANTS, step=None):
    """Centered finite-difference slope of omega_10 with step 1e-4 * V_t."""
    h = 1e-4 * vt if step is None else step
    epsilon = np.asarray(epsilon, dtype=float)
    return (omega10(epsilon + h, vt, b_field, constants)
            - omega10(epsilon - h, vt, b_field, constants)) / (2 * h)


def omega10_curvature(epsilon, vt, b_field, constants=DEFAULT_CONSTANTS, step=None):
    """Second derivative of omega_10, as a finite difference of the exact slope."""
    h = 1e-4 * vt if step is None else step
    epsilon = np.asarray(epsilon, dtype=float)
    return (omega10_slope(epsilon + h, vt, b_field, constants)
            - omega10_slope(epsilon - h, vt, b_field, constants)) / (2 * h)


def _extremum_side(constants):
    # Sweet spots need z03 = -z33, and z33 has the sign of Delta-omega_B.
    return -1.0 if constants.delta_gamma > 0 else 1.0


def sweet_spot_detuning(vt, b_field, constants=DEFAULT_CONSTANTS, span=20.0, n_grid=401):
    """All first-order sweet spots of omega_10 in ``|epsilon| <= span * V_t``.

    The exact slope is scanned on a uniform grid; sign changes are refined
    with Brent's method.  Local extrema of the slope that do not change sign
    on the grid are polished, so two nearly merged roots are still found.

    Returns
    -------
    tuple of float
        Detunings (rad/s) in ascending order; empty when there is none.
    """
    grid = np.linspace(-span * vt, span * vt, n_grid)
    slope = omega10_slope(grid, vt, b_field, constants)

    def f(x):
        return float(omega10_slope(np.array([x]), vt, b_field, constants)[0])

    xtol = 1e-10 * vt
    brackets = []
    for i in range(n_grid - 1):
        if slope[i] == 0.0:
            brackets.append((grid[i], grid[i]))
        elif slope[i] * slope[i + 1] < 0:
            brackets.append((grid[i], grid[i + 1]))

    # Hidden root pairs between grid points: look at interior extrema of |slope|
    # that approach zero without a sign change.
    for i in range(1, n_grid - 1):
        a0, a1, a2 = slope[i - 1], slope[i], slope[i + 1]
        if a0 * a1 <= 0 or a1 * a2 <= 0:
            continue
        if abs(a1) < abs(a0) and abs(a1) < abs(a2):
            sgn = math.copysign(1.0, a1)
            res = optimize.minimize_scalar(lambda x: sgn * f(x), bounds=(grid[i - 1], grid[i + 1]),
                                           method="bounded", options={"xatol": xtol})
            if res.fun < 0:
                brackets.append((grid[i - 1], res.x))
                brackets.append((res.x, grid[i + 1]))

    roots = []
    for lo, hi in brackets:
        if lo == hi:
            roots.append(lo)
            continue
        roots.append(optimize.brentq(f, lo, hi, xtol=xtol, rtol=1e-12))
    return tuple(sorted(roots))


def _slope_extremum(vt, b_field, constants, span=4.0, n_grid=201):
    """Largest value of (side * slope) over epsilon and where it occurs."""
    side = _extremum_side(constants)
    grid = np.linspace(0.0, side * span * vt, n_grid)
    vals = side * omega10_slope(grid, vt, b_field, constants)
    i = int(np.argmax(vals))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, n_grid - 1)]
    lo, hi = min(lo, hi), max(lo, hi)

    def neg(x):
        return -side * float(omega10_slope(np.array([x]), vt, b_field, constants)[0])

    res = optimize.minimize_scalar(neg, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12 * vt})
    return -res.fun, res.x


def second_order_sweet_spot(vt, constants=DEFAULT_CONSTANTS, b_range=None, n_scan=40):
    """Field and detuning where the two first-order sweet spots merge.

    At the returned point both the slope and the curvature of omega_10 vanish.
    The search runs over fields with ``omega_B < V_t - A/4`` unless
    ``b_range`` is given.

    Returns
    -------
    (b_field, epsilon) or None
    """
    if constants.delta_gamma == 0.0:
        return None
    scale = constants.zeeman_scale * (constants.gamma_e + constants.gamma_n)
    if b_range is None:
        b_hi = (vt - constants.hyperfine_A / 4) / scale
        b_range = (0.5 * vt / scale, b_hi)
    bs = np.linspace(b_range[0], b_range[1], n_scan)

    def h(b):
        return _slope_extremum(vt, b, constants)[0]

    vals = [h(b) for b in bs]
    for i in range(n_scan - 1):
        if vals[i] < 0 <= vals[i + 1] or vals[i] >= 0 > vals[i + 1]:
            b_ss = optimize.brentq(h, bs[i], bs[i + 1], xtol=1e-10 * bs[i], rtol=1e-12)
            return b_ss, _slope_extremum(vt, b_ss, constants)[1]
    return None
