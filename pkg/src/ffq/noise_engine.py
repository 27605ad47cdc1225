"""Classical 1/f charge noise and the second-order cumulant propagator.

The noise enters as ``H(t) = H0 + sum_i f_i(t) h_i`` with independent,
zero-mean Gaussian processes ``f_i`` sharing the 1/f spectrum
``S(w) = S0/|w|`` on ``w_l <= |w| <= w_h``.  Everything is expressed in the
eigenbasis of ``H0`` (rotation ``R``), where the averaged density matrix is

    rho'(t)_jk = exp(-i w_jk t) [exp(-sum_i K_i(t)) rho'(0)]_jk .

``K_i`` is assembled from the decay profile ``J(t, w1, w2)``.  Two term
filters are offered: ``secular`` keeps only ``w1 = w2 = 0`` (diagonal ``K``)
and ``full_K`` also keeps the ``w1 = -w2`` transition terms.
"""

from dataclasses import dataclass, field
import logging
import math

import numpy as np
from scipy import linalg as sla
from scipy.special import sici

from .linalg import check_symmetric, jacobi_eigh
from .units import EULER_GAMMA, TWO_PI

__all__ = [
    "NoiseSpectrum",
    "NoiseChannel",
    "EvolutionSetup",
    "EvolutionResult",
    "correlation",
    "decay_profile_J",
    "decay_profile_J00",
    "j00_exact",
    "j00_asymptotic",
    "decay_profile_Jpm",
    "dephasing_rate",
    "make_setup",
    "evolve_secular",
    "evolve_full",
    "evolve_monte_carlo",
    "gaussian_decay_time",
    "mode_table",
    "coherence_time",
    "EXCEEDS_WINDOW",
]

log = logging.getLogger(__name__)

#: Sentinel returned by :func:`coherence_time` when no crossing occurs in the window.
EXCEEDS_WINDOW = math.inf

_GL_X, _GL_W = np.polynomial.legendre.leggauss(64)


@dataclass(frozen=True)
class NoiseSpectrum:
    """1/f spectrum between angular cutoffs ``omega_l < omega_h``.

    ``S0`` is fixed by requiring ``S(t=0) = 1``.
    """

    omega_l: float = TWO_PI * 1e3
    omega_h: float = TWO_PI * 1e12

    def __post_init__(self):
        if not 0 < self.omega_l < self.omega_h:
            raise ValueError("need 0 < omega_l < omega_h")

    @property
    def log_span(self):
        return math.log(self.omega_h / self.omega_l)

    @property
    def s0(self):
        return 1.0 / (2.0 * self.log_span)

    def density(self, omega):
        omega = np.abs(np.asarray(omega, dtype=float))
        inside = (omega >= self.omega_l) & (omega <= self.omega_h)
        return np.where(inside, self.s0 / np.where(omega > 0, omega, 1.0), 0.0)

    @property
    def window(self):
        """Time window ``[1/omega_h, 1/omega_l]`` in which decay times are searched."""
        return 1.0 / self.omega_h, 1.0 / self.omega_l


@dataclass(frozen=True)
class NoiseChannel:
    """One independent noise source: coupling operator (strength included) and spectrum."""

    operator: np.ndarray
    spectrum: NoiseSpectrum = field(default_factory=NoiseSpectrum)

    def __post_init__(self):
        op = np.asarray(self.operator, dtype=float)
        check_symmetric(op, atol=1e-10)
        object.__setattr__(self, "operator", 0.5 * (op + op.T))


@dataclass(frozen=True)
class EvolutionSetup:
    """Noiseless eigen-decomposition plus the noise channels."""

    rotation: np.ndarray
    energies: np.ndarray
    channels: tuple
    mode: str = "secular"

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        if np.max(np.abs(r.T @ r - np.eye(r.shape[0]))) > 1e-12:
            raise ValueError("rotation is not orthogonal to 1e-12")
        if self.mode not in ("secular", "full_K"):
            raise ValueError(f"unknown mode {self.mode!r}")
        object.__setattr__(self, "channels", tuple(self.channels))

    @property
    def dim(self):
        return len(self.energies)

    @property
    def frequencies(self):
        """Matrix ``w_jk = E_j - E_k``."""
        e = np.asarray(self.energies)
        return e[:, None] - e[None, :]

    def eigen_operators(self):
        """Channel operators in the eigenbasis, ``R^T h_i R``."""
        r = self.rotation
        return [r.T @ ch.operator @ r for ch in self.channels]


@dataclass
class EvolutionResult:
    times: np.ndarray
    rho: np.ndarray
    equilibrium: np.ndarray
    min_eigenvalue: float = 0.0

    def element(self, a, b):
        return self.rho[:, a, b]

    def population(self, a):
        return self.rho[:, a, a].real


def make_setup(h0, operators, spectrum=None, mode="secular"):
    """Diagonalize ``h0`` and wrap the channel ``operators`` (same basis as ``h0``)."""
    spectrum = NoiseSpectrum() if spectrum is None else spectrum
    w, v = jacobi_eigh(h0)
    return EvolutionSetup(v, w, tuple(NoiseChannel(op, spectrum) for op in operators), mode)


# --- correlation function and decay profiles ---------------------------------

def _ci(x):
    return sici(np.abs(x))[1]


def correlation(spec, t):
    """Noise autocorrelation ``S(t) = 2 S0 [Ci(w_h t) - Ci(w_l t)]``; exactly 1 at t = 0."""
    t = np.abs(np.asarray(t, dtype=float))
    safe = np.where(t > 0, t, 1.0)
    val = 2 * spec.s0 * (_ci(spec.omega_h * safe) - _ci(spec.omega_l * safe))
    out = np.where(t > 0, val, 1.0)
    return out if out.ndim else float(out)


def _panels(t, omega_h, osc):
    """Panel edges on [0, t].

    Geometric panels starting at ``1/omega_h`` follow the logarithmic shape
    of ``S(tau)``.  They are subdivided to at most eight periods of ``osc``
    everywhere, and of ``omega_h`` over the first 10^4 periods, where the
    ringing of ``Ci(omega_h tau)`` is still above ~1e-5 of ``S``.
    """
    t = float(t)
    edges = [0.0, min(t, 1.0 / omega_h)]
    while edges[-1] < t:
        edges.append(min(t, 2.0 * edges[-1]))
    ring_end = 1e4 * TWO_PI / omega_h
    fine = []
    for a, b in zip(edges[:-1], edges[1:]):
        rate = max(osc, omega_h if a < ring_end else 0.0)
        n = 1 if rate == 0 else max(1, int(math.ceil((b - a) * rate / (8.0 * TWO_PI))))
        if n > 200000:
            raise ValueError("oscillatory integral too long for direct quadrature")
        fine.extend(np.linspace(a, b, n + 1)[:-1])
    fine.append(t)
    return np.asarray(fine)


def _quad(func, edges):
    a, b = edges[:-1, None], edges[1:, None]
    half = 0.5 * (b - a)
    x = 0.5 * (a + b) + half * _GL_X[None, :]
    return np.sum(half * _GL_W[None, :] * func(x))


def decay_profile_J(spec, t, w1, w2):
    """Decay profile ``J(t, w1, w2) = int_0^t dt1 int_0^t1 dt2 S(t1-t2) e^{i w1 t1} e^{i w2 t2}``.

    The inner integral over the centre time is done analytically, leaving a
    single integral over the lag ``tau``, which is evaluated by composite
    64-point Gauss-Legendre panels (geometric near ``tau = 0``, uniform at
    the oscillation scale).
    """
    t = float(t)
    if t <= 0:
        return 0j
    w = w1 + w2

    if w == 0.0:
        def integrand(tau):
            return correlation(spec, tau) * np.exp(-1j * w2 * tau) * (t - tau)
    else:
        def integrand(tau):
            return (correlation(spec, tau) * np.exp(-1j * w2 * tau)
                    * (np.exp(1j * w * t) - np.exp(1j * w * tau)) / (1j * w))

    osc = max(abs(w1), abs(w2), abs(w))
    edges = _panels(t, spec.omega_h, osc)
    return complex(_quad(integrand, edges))


def _g_antiderivative(a, t):
    """Antiderivative in ``a`` of ``(1 - cos(a t)) / a**3``."""
    at = a * t
    return (0.5 * t * t * _ci(at) - t * np.sin(at) / (2 * a)
            - np.sin(0.5 * at) ** 2 / (a * a))


def j00_exact(spec, t):
    """``J(t, 0, 0)`` in closed form (cosine integrals); vectorized over ``t``."""
    t = np.asarray(t, dtype=float)
    safe = np.where(t > 0, t, 1.0)
    val = 2 * spec.s0 * (_g_antiderivative(spec.omega_h, safe) - _g_antiderivative(spec.omega_l, safe))
    out = np.where(t > 0, val, 0.0)
    return out if out.ndim else float(out)


def j00_asymptotic(spec, t):
    """Quadratic-log form of ``J(t,0,0)`` valid for ``1/w_h << t << 1/w_l``."""
    t = np.asarray(t, dtype=float)
    return t * t * (1.5 - EULER_GAMMA - np.log(spec.omega_l * t)) / (2 * spec.log_span)


def decay_profile_J00(spec, t):
    """``J(t,0,0)``: asymptotic form inside ``10/w_h < t < 0.1/w_l``, exact outside."""
    t = np.asarray(t, dtype=float)
    inside = (t > 10.0 / spec.omega_h) & (t < 0.1 / spec.omega_l)
    safe = np.where(inside, t, 1.0 / math.sqrt(spec.omega_h * spec.omega_l))
    out = np.where(inside, j00_asymptotic(spec, safe), j00_exact(spec, t))
    return out if out.ndim else float(out)


def _jpm_primitive(nu, omega, t):
    """Antiderivative in ``nu`` of ``g(omega - nu) / nu`` with
    ``g(x) = i t / x + (1 - e^{i x t}) / x**2``."""
    x = omega - nu
    ax = np.abs(x)
    xt = x * t
    si_nu, ci_nu = sici(nu * t)
    si_x = sici(xt)[0]
    safe = np.where(ax > 0, ax, 1.0)
    big_l = np.where(ax > 0, np.log(safe) - sici(safe * t)[1], -EULER_GAMMA - np.log(t))
    one_minus_cos = np.where(ax > 0, 2 * np.sin(0.5 * xt) ** 2 / np.where(ax > 0, x, 1.0), 0.0)
    sinc_t = np.where(ax > 0, np.sin(xt) / np.where(ax > 0, x, 1.0), t)
    log_nu = np.log(nu)
    return ((1j * t / omega) * (log_nu - big_l)
            + (log_nu - np.exp(1j * omega * t) * (ci_nu - 1j * si_nu) - big_l + 1j * si_x) / omega**2
            + (one_minus_cos - t * si_x - 1j * sinc_t) / omega)


def _jpm_closed(spec, t, omega):
    def integral(om):
        return _jpm_primitive(spec.omega_h, om, t) - _jpm_primitive(spec.omega_l, om, t)

    return spec.s0 * (integral(omega) + np.conj(integral(-omega)))


def decay_profile_Jpm(spec, t, omega):
    """``J(t, omega, -omega)`` for an array of times.

    Uses a closed form in sine and cosine integrals when ``|omega| t >= 1``
    and direct lag quadrature otherwise (where the closed form cancels badly).
    ``J(t, -omega, omega)`` is the complex conjugate.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.zeros(t.shape, dtype=complex)
    if omega == 0.0:
        out[:] = j00_exact(spec, t)
        return out
    closed = np.abs(omega) * t >= 1.0
    if np.any(closed):
        out[closed] = _jpm_closed(spec, t[closed], omega)
    for i in np.flatnonzero(~closed & (t > 0)):
        out[i] = decay_profile_J(spec, t[i], omega, -omega)
    return out


# --- rates and propagators -----------------------------------------------------

def dephasing_rate(channel, rotation, j, k):
    """``Gamma_jk = (R^T h R)_jj - (R^T h R)_kk`` for one channel."""
    op = channel.operator if isinstance(channel, NoiseChannel) else np.asarray(channel)
    hp = rotation.T @ op @ rotation
    return float(hp[j, j] - hp[k, k])


def _check_rho(rho0, n):
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (n, n):
        raise ValueError(f"rho0 must be {n}x{n}")
    if np.max(np.abs(rho0 - rho0.conj().T)) > 1e-10:
        raise ValueError("rho0 is not Hermitian")
    if abs(np.trace(rho0) - 1) > 1e-10:
        raise ValueError("rho0 must have unit trace")
    return rho0


def _finish(setup, rho_eig, times, rho0_eig):
    r = setup.rotation
    rho = np.einsum("aj,tjk,bk->tab", r, rho_eig, r)
    rho = 0.5 * (rho + np.conj(np.swapaxes(rho, 1, 2)))
    equilibrium = r @ np.diag(np.diag(rho0_eig)) @ r.T
    min_ev = float(np.min(np.linalg.eigvalsh(rho))) if len(times) else 0.0
    if min_ev < -1e-3:
        log.warning("density matrix eigenvalue %.3e below -1e-3 (cumulant truncation)", min_ev)
    else:
        log.debug("minimum density-matrix eigenvalue %.3e", min_ev)
    return EvolutionResult(np.asarray(times, dtype=float), rho, equilibrium.astype(complex), min_ev)


def _gamma_squared_sum(setup):
    """``sum_i Gamma_ijk^2`` as an N x N matrix; channels with distinct spectra kept apart."""
    groups = {}
    for ch, hp in zip(setup.channels, setup.eigen_operators()):
        d = np.diag(hp)
        groups.setdefault(ch.spectrum, 0.0)
        groups[ch.spectrum] = groups[ch.spectrum] + (d[:, None] - d[None, :]) ** 2
    return groups


def evolve_secular(setup, rho0, times):
    """Second-order cumulant evolution keeping only zero-frequency profile terms."""
    n = setup.dim
    rho0 = _check_rho(rho0, n)
    times = np.asarray(times, dtype=float)
    r = setup.rotation
    rho0_eig = r.T @ rho0 @ r
    w = setup.frequencies
    decay = np.zeros((len(times), n, n))
    for spec, g2 in _gamma_squared_sum(setup).items():
        decay = decay + j00_exact(spec, times)[:, None, None] * g2[None]
    rho_eig = rho0_eig[None] * np.exp(-1j * w[None] * times[:, None, None] - decay)
    return _finish(setup, rho_eig, times, rho0_eig)


def _liouville_terms(h, w, tol, keep):
    """Index lists describing ``K`` for one channel.

    Returns a list of ``(row, col, coefficient, omega)`` arrays such that
    ``K[row, col] += coefficient * Jpm(omega)`` with ``Jpm(omega) = J(t, omega, -omega)``.
    Row/column index the row-major vectorization ``m * N + n``.
    """
    n = h.shape[0]
    idx = np.arange(n)
    rows, cols, coef, freq = [], [], [], []

    def allowed(w1, w2):
        if keep == "secular":
            return (np.abs(w1) <= tol) & (np.abs(w2) <= tol)
        return np.abs(w1 + w2) <= tol

    # h h X  ->  sum_b h_mb h_bc J(w_mb, w_bc) X_cn
    m, b, c = np.meshgrid(idx, idx, idx, indexing="ij")
    ok = allowed(w[m, b], w[b, c]) & (h[m, b] * h[b, c] != 0)
    for mm, bb, cc in zip(m[ok], b[ok], c[ok]):
        for nn in range(n):
            rows.append(mm * n + nn)
            cols.append(cc * n + nn)
            coef.append(h[mm, bb] * h[bb, cc])
            freq.append(w[mm, bb])
    # X h h  ->  sum_b X_mc h_cb h_bn J(w_bn, w_cb)
    ok = allowed(w[b, m], w[c, b]) & (h[c, b] * h[b, m] != 0)
    # here m plays the role of n (column of result)
    for nn, bb, cc in zip(m[ok], b[ok], c[ok]):
        for mm in range(n):
            rows.append(mm * n + nn)
            cols.append(mm * n + cc)
            coef.append(h[cc, bb] * h[bb, nn])
            freq.append(w[bb, nn])
    # -(h X h) terms: -h_mc h_dn [J(w_mc, w_dn) + J(w_dn, w_mc)] X_cd
    m4, n4, c4, d4 = np.meshgrid(idx, idx, idx, idx, indexing="ij")
    ok = allowed(w[m4, c4], w[d4, n4]) & (h[m4, c4] * h[d4, n4] != 0)
    for mm, nn, cc, dd in zip(m4[ok], n4[ok], c4[ok], d4[ok]):
        val = -h[mm, cc] * h[dd, nn]
        rows += [mm * n + nn, mm * n + nn]
        cols += [cc * n + dd, cc * n + dd]
        coef += [val, val]
        freq += [w[mm, cc], w[dd, nn]]
    return (np.asarray(rows, dtype=int), np.asarray(cols, dtype=int),
            np.asarray(coef, dtype=float), np.asarray(freq, dtype=float))


def cumulant_generator(setup, times, keep="full", tol=None):
    """Stack of ``sum_i K_i(t)`` matrices, shape ``(T, N^2, N^2)``.

    ``keep='full'`` retains terms with ``w1 + w2 = 0``; ``keep='secular'``
    retains only ``w1 = w2 = 0``.  Frequencies closer than ``tol`` (default
    ``1e-9`` of the largest splitting) count as equal.
    """
    n = setup.dim
    times = np.asarray(times, dtype=float)
    w = setup.frequencies
    if tol is None:
        tol = 1e-9 * max(np.max(np.abs(w)), 1.0)
    out = np.zeros((len(times), n * n, n * n), dtype=complex)
    cache = {}
    for ch, hp in zip(setup.channels, setup.eigen_operators()):
        rows, cols, coef, freq = _liouville_terms(hp, w, tol, keep)
        if not len(rows):
            continue
        # Snap numerically-equal frequencies to a shared key.
        keys = np.round(freq / tol).astype(np.int64) if tol > 0 else freq
        for key in np.unique(keys):
            sel = keys == key
            om = float(np.mean(freq[sel]))
            if abs(om) <= tol:
                om = 0.0
            ck = (ch.spectrum, om)
            if ck not in cache:
                cache[ck] = decay_profile_Jpm(ch.spectrum, times, om)
            jv = cache[ck]
            mat = np.zeros((n * n, n * n))
            np.add.at(mat, (rows[sel], cols[sel]), coef[sel])
            out += jv[:, None, None] * mat[None]
    return out


def evolve_full(setup, rho0, times, keep="full", tol=None):
    """Cumulant evolution with the general Liouville-space ``K(t)``.

    Parameters
    ----------
    keep : {'full', 'secular'}
        Term filter.  ``'secular'`` reproduces :func:`evolve_secular`.
    """
    n = setup.dim
    rho0 = _check_rho(rho0, n)
    times = np.asarray(times, dtype=float)
    r = setup.rotation
    rho0_eig = r.T @ rho0 @ r
    kmat = cumulant_generator(setup, times, keep=keep, tol=tol)
    w = setup.frequencies
    vec0 = rho0_eig.reshape(-1)
    rho_eig = np.empty((len(times), n, n), dtype=complex)
    for i, t in enumerate(times):
        v = sla.expm(-kmat[i]) @ vec0
        rho_eig[i] = v.reshape(n, n) * np.exp(-1j * w * t)
    return _finish(setup, rho_eig, times, rho0_eig)


def _noise_modes(spec, n_modes, band_limit):
    hi = spec.omega_h if band_limit is None else min(spec.omega_h, band_limit)
    if hi <= spec.omega_l:
        raise ValueError("band_limit must exceed omega_l")
    edges = np.geomspace(spec.omega_l, spec.omega_h, n_modes + 1)
    centers = np.sqrt(edges[:-1] * edges[1:])
    dlog = math.log(edges[1] / edges[0])
    # Each bin carries variance 2 S0 dlog, so the full set sums to S(0) = 1.
    amps = np.full(n_modes, math.sqrt(4 * spec.s0 * dlog))
    keep = centers <= hi
    return centers[keep], amps[keep]


def _random_modes(rng, shape):
    """Rayleigh weights (unit mean square) and uniform phases for each cosine.

    A cosine with a Rayleigh amplitude and a uniform phase is a Gaussian
    process, so the sum is Gaussian however few modes fall below ``1/t``.
    """
    x = rng.standard_normal(shape)
    y = rng.standard_normal(shape)
    return np.hypot(x, y) / math.sqrt(2.0), np.arctan2(y, x)


def sample_noise(spec, times, n_traj, rng, n_modes=256, band_limit=None):
    """Random-phase cosine realisations of unit-variance 1/f noise, shape ``(n_traj, T)``."""
    freqs, amps = _noise_modes(spec, n_modes, band_limit)
    weights, phases = _random_modes(rng, (n_traj, len(freqs)))
    times = np.asarray(times, dtype=float)
    arg = times[None, :, None] * freqs[None, None, :] + phases[:, None, :]
    return np.sum((weights * amps)[:, None, :] * np.cos(arg), axis=-1)


def evolve_monte_carlo(h0, operators, rho0, times, n_traj=500, seed=0, spectrum=None,
                       n_modes=256, band_limit=None, steps_per_interval=None, max_step=None):
    """Average of exact noisy trajectories: the validation oracle.

    Each trajectory draws every channel as a sum of ``n_modes`` log-spaced
    cosines with random phases and Rayleigh-distributed amplitudes (modes
    above ``band_limit`` are dropped) and
    integrates the von Neumann equation in the interaction picture of ``h0``
    with classical fourth-order Runge-Kutta.  When every coupling commutes
    with ``h0`` the trajectories are pure phases and are evaluated exactly.

    Parameters
    ----------
    h0 : (N, N) array
    operators : sequence of (N, N) arrays
        Noise couplings ``h_i`` in the same basis as ``h0``.
    times : array
        Increasing output times starting at 0.
    max_step : float, optional
        Largest RK4 step; defaults to ``0.2`` over the fastest of the
        retained noise modes, the coupling spreads and the coupled Bohr
        frequencies.
    """
    spectrum = NoiseSpectrum() if spectrum is None else spectrum
    h0 = np.asarray(h0, dtype=float)
    n = h0.shape[0]
    rho0 = _check_rho(rho0, n)
    times = np.asarray(times, dtype=float)
    if n_traj < 1:
        raise ValueError("n_traj must be at least 1")
    if times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise ValueError("times must start at 0 and increase")

    energies, r = jacobi_eigh(h0)
    w = energies[:, None] - energies[None, :]
    hs = np.array([r.T @ np.asarray(op, dtype=float) @ r for op in operators])
    rho_i = np.broadcast_to(r.T @ rho0 @ r, (n_traj, n, n)).copy()

    freqs, amps = _noise_modes(spectrum, n_modes, band_limit)
    rng = np.random.default_rng(seed)
    weights, phases = _random_modes(rng, (len(hs), n_traj, len(freqs)))
    weights = weights * amps

    off_diag = [hmat - np.diag(np.diag(hmat)) for hmat in hs]
    if all(np.max(np.abs(o)) <= 1e-12 * max(np.max(np.abs(hm)), 1e-300) for o, hm in zip(off_diag, hs)):
        # Couplings commute with h0: each trajectory only picks up the phase
        # exp(-i (d_j - d_k) int_0^t f), and the integral of a cosine sum is exact.
        diag = np.array([np.diag(hmat) for hmat in hs])
        gaps = diag[:, :, None] - diag[:, None, :]
        start = np.sin(phases)
        out = np.empty((len(times), n, n), dtype=complex)
        for k, tk in enumerate(times):
            integral = np.sum(weights * (np.sin(freqs * tk + phases) - start) / freqs, axis=-1)
            phase_arg = np.einsum("cr,cjk->rjk", integral, gaps)
            out[k] = np.mean(rho_i * np.exp(-1j * phase_arg), axis=0)
        return _monte_carlo_result(r, w, times, out, rho0)

    def noise(t):
        return np.sum(weights * np.cos(freqs * t + phases), axis=-1)

    if max_step is None:
        # Fastest scale: the top retained noise mode, the spread of each
        # coupling (f stays within ~4 sigma), and any Bohr frequency the
        # couplings connect in the interaction picture.
        scales = [freqs.max() if len(freqs) else 0.0]
        for hmat in hs:
            ev = np.linalg.eigvalsh(hmat)
            scales.append(4.0 * (ev[-1] - ev[0]))
            off = np.abs(hmat) > 0
            np.fill_diagonal(off, False)
            if np.any(off):
                scales.append(np.max(np.abs(w[off])))
        max_step = 0.2 / max(max(scales), 1e-300)

    def rhs(t, rho):
        f = noise(t)
        hint = hs * np.exp(1j * w * t)[None]
        hn = np.einsum("cr,cab->rab", f, hint)
        return -1j * (hn @ rho - rho @ hn)

    out = np.empty((len(times), n, n), dtype=complex)
    out[0] = rho_i.mean(axis=0)
    t = 0.0
    for k in range(1, len(times)):
        span = times[k] - times[k - 1]
        nsteps = max(1, int(math.ceil(span / max_step)))
        if steps_per_interval is not None:
            nsteps = max(nsteps, steps_per_interval)
        dt = span / nsteps
        for _ in range(nsteps):
            k1 = rhs(t, rho_i)
            k2 = rhs(t + dt / 2, rho_i + dt / 2 * k1)
            k3 = rhs(t + dt / 2, rho_i + dt / 2 * k2)
            k4 = rhs(t + dt, rho_i + dt * k3)
            rho_i = rho_i + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += dt
        drift = np.max(np.abs(np.trace(rho_i, axis1=1, axis2=2) - 1))
        if drift > 1e-6:
            raise RuntimeError(f"trace drift {drift:.2e} exceeds 1e-6; reduce max_step")
        out[k] = rho_i.mean(axis=0)
    return _monte_carlo_result(r, w, times, out, rho0)


def _monte_carlo_result(r, w, times, out, rho0):
    """Back to the lab frame from interaction-picture averages in the eigenbasis."""
    phase = np.exp(-1j * w[None] * times[:, None, None])
    rho = np.einsum("aj,tjk,bk->tab", r, out * phase, r)
    rho = 0.5 * (rho + np.conj(np.swapaxes(rho, 1, 2)))
    rho0_eig = r.T @ rho0 @ r
    equilibrium = r @ np.diag(np.diag(rho0_eig)) @ r.T
    return EvolutionResult(times, rho, equilibrium.astype(complex))


# --- envelopes and coherence times --------------------------------------------

def gaussian_decay_time(spec, gamma_sq, threshold=1.0 / math.e, rtol=1e-4):
    """Smallest ``T`` with ``exp(-J(T,0,0) * gamma_sq) = threshold``.

    Returns :data:`EXCEEDS_WINDOW` when the crossing lies beyond ``1/omega_l``.
    """
    target = -math.log(threshold)
    if gamma_sq <= 0:
        return EXCEEDS_WINDOW
    lo, hi = spec.window

    def excess(t):
        return float(j00_exact(spec, t)) * gamma_sq - target

    if excess(hi) < 0:
        return EXCEEDS_WINDOW
    if excess(lo) >= 0:
        return lo
    # J is monotone in t, so plain bisection in log time is safe.
    a, b = math.log(lo), math.log(hi)
    while b - a > rtol:
        mid = 0.5 * (a + b)
        if excess(math.exp(mid)) < 0:
            a = mid
        else:
            b = mid
    return math.exp(0.5 * (a + b))


def mode_table(setup, rho0, a, b):
    """Oscillating modes of ``rho_ab``: amplitudes, frequencies and decay exponents.

    Modes with identical frequency and decay exponent are merged by summing
    their complex amplitudes.

    Returns
    -------
    equilibrium : complex
    modes : list of (amplitude, frequency, {spectrum: gamma_sq})
    """
    n = setup.dim
    rho0 = _check_rho(rho0, n)
    r = setup.rotation
    rho0_eig = r.T @ rho0 @ r
    c = r[a, :, None] * r[b, None, :] * rho0_eig
    w = setup.frequencies
    groups = _gamma_squared_sum(setup)
    equilibrium = complex(np.trace(c))
    merged = {}
    scale = max(np.max(np.abs(w)), 1.0)
    for j in range(n):
        for k in range(n):
            if j == k or c[j, k] == 0:
                continue
            g2 = tuple((spec, float(m[j, k])) for spec, m in groups.items())
            key = (round(w[j, k] / (1e-9 * scale)),
                   tuple(round(v, 6 - int(math.floor(math.log10(abs(v))))) if v else 0.0 for _, v in g2))
            if key in merged:
                merged[key][0] += c[j, k]
            else:
                merged[key] = [complex(c[j, k]), float(w[j, k]), dict(g2)]
    modes = [tuple(v) for v in merged.values() if abs(v[0]) > 0]
    return equilibrium, modes


def envelope(setup, rho0, a, b, times):
    """Rescaled decay envelope ``F_ab(t)`` from the per-mode Gaussian factors."""
    _, modes = mode_table(setup, rho0, a, b)
    times = np.asarray(times, dtype=float)
    weights = np.array([abs(m[0]) for m in modes])
    if weights.sum() == 0:
        raise ValueError("rho_ab(0) equals its equilibrium value; envelope undefined")
    total = np.zeros_like(times)
    for wgt, (_, _, g2) in zip(weights, modes):
        expo = np.zeros_like(times)
        for spec, val in g2.items():
            expo = expo + j00_exact(spec, times) * val
        total = total + wgt * np.exp(-expo)
    return total / weights.sum()


def coherence_time(setup, rho0, a, b, threshold=1.0 / math.e, n_grid=200, rtol=1e-4):
    """First time the envelope ``F_ab`` drops to ``threshold``.

    The window is ``[1/omega_h, 1/omega_l]`` of the first channel's spectrum.
    Returns :data:`EXCEEDS_WINDOW` if the envelope stays above threshold.
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    if not setup.channels:
        return EXCEEDS_WINDOW
    spec = setup.channels[0].spectrum
    lo, hi = spec.window
    _, modes = mode_table(setup, rho0, a, b)
    if not modes:
        raise ValueError("rho_ab(0) equals its equilibrium value; envelope undefined")
    grid = np.geomspace(lo, hi, n_grid)
    vals = envelope(setup, rho0, a, b, grid) - threshold
    below = np.flatnonzero(vals <= 0)
    if not below.size:
        return EXCEEDS_WINDOW
    i = below[0]
    if i == 0:
        return lo
    x0, x1 = math.log(grid[i - 1]), math.log(grid[i])
    while x1 - x0 > rtol:
        mid = 0.5 * (x0 + x1)
        if envelope(setup, rho0, a, b, [math.exp(mid)])[0] - threshold > 0:
            x0 = mid
        else:
            x1 = mid
    return math.exp(0.5 * (x0 + x1))
