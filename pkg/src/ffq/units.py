"""Unit conversions.

Everything inside the package is expressed with hbar = 1: energies are
angular frequencies in rad/s, times are in seconds.
"""

import math

TWO_PI = 2.0 * math.pi

#: 1 ueV / h = 241.799 MHz, expressed as an angular frequency.
UEV = TWO_PI * 241.799e6
MHZ = TWO_PI * 1e6
GHZ = TWO_PI * 1e9

#: Euler-Mascheroni constant.
EULER_GAMMA = 0.5772156649015329


def ueV(value):
    """Convert an energy in micro-electronvolts to rad/s."""
    return value * UEV


def to_ueV(omega):
    return omega / UEV


def mhz(value):
    """Convert a frequency in MHz (cycles) to rad/s."""
    return value * MHZ


def to_mhz(omega):
    return omega / MHZ


def ghz(value):
    return value * GHZ


def to_ghz(omega):
    return omega / GHZ


def field_to_detuning(e_field_vcm, distance_m):
    """Detuning e*E*d (rad/s) for a field offset in V/cm across ``distance_m``."""
    return e_field_vcm * 100.0 * distance_m * 1e6 * UEV


def detuning_to_field(epsilon, distance_m):
    return epsilon / (100.0 * distance_m * 1e6 * UEV)
