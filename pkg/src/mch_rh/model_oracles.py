"""Closed-form reference values evaluated in extended precision.

These never call the solver: each oracle is a direct formula evaluated with
mpmath, and every value is produced at two working precisions so that a test
can tell a precision problem from a real disagreement.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import mpmath as mp
import numpy as np

from .spectral_geometry import BackgroundPair

HIGH_DPS = 50
LOW_DPS = 30


def _mpc(z):
    return mp.mpc(complex(z).real, complex(z).imag)


def delta_hp(bg: BackgroundPair, lam, side: str = "off", dps: int = HIGH_DPS):
    """((lam + 1/A2)/(lam - 1/A2))^(1/4), principal branch, with a side on Gamma2."""
    with mp.workdps(dps):
        a = mp.mpf(1) / mp.mpf(bg.A2)
        z = _mpc(lam)
        if z.imag == 0 and abs(z.real) < a:
            q = mp.root(abs((z.real + a) / (z.real - a)), 4)
            ang = mp.exp(-1j * mp.pi / 4) if side == "plus" else mp.exp(1j * mp.pi / 4)
            if side not in ("plus", "minus"):
                raise ValueError("points on Gamma2 need a side tag")
            return q * ang
        return mp.power((z + a) / (z - a), mp.mpf(1) / 4)


def model_solution_hp(bg: BackgroundPair, lam, side: str = "off", dps: int = HIGH_DPS) -> mp.matrix:
    with mp.workdps(dps):
        d = delta_hp(bg, lam, side, dps)
        p, m = (d + 1 / d) / 2, (d - 1 / d) / 2
        return mp.matrix([[p, m], [m, p]])


def to_numpy(M) -> np.ndarray:
    return np.array([[complex(M[i, j]) for j in range(M.cols)] for i in range(M.rows)])


def model_zero_coefficients(bg: BackgroundPair, dps: int = HIGH_DPS) -> tuple:
    """(a1, a2, a3) of the model solution from its Taylor data at 0_+.

    From above, delta = exp(-i pi/4) ((a + lam)/(a - lam))^(1/4) near 0, which
    is analytic there, so mpmath can Taylor-expand it directly.
    """
    with mp.workdps(dps):
        a = mp.mpf(1) / mp.mpf(bg.A2)
        omega = mp.exp(-1j * mp.pi / 4)

        def entry(i, j):
            def f(z):
                d = omega * mp.power((a + z) / (a - z), mp.mpf(1) / 4)
                return (d + 1 / d) / 2 if i == j else (d - 1 / d) / 2
            return mp.taylor(f, 0, 1)

        (n11, d11), (n12, d12) = entry(0, 0), entry(0, 1)
        n22 = entry(1, 1)[0]
        r2 = mp.sqrt(2)
        a1 = r2 * n22
        a2 = 1j * r2 * d11
        a3 = r2 * d12
        return tuple(float(mp.re(v)) for v in (a1, a2, a3))


def segment_log_cauchy_hp(a: float, b: float, lam, dps: int = HIGH_DPS):
    """(1/2 pi i) int_a^b dz / (z - lam) via the log antiderivative."""
    with mp.workdps(dps):
        z = _mpc(lam)
        return (mp.log(mp.mpf(b) - z) - mp.log(mp.mpf(a) - z)) / (2j * mp.pi)


def segment_log_boundary_hp(a: float, b: float, x: float, side: str, dps: int = HIGH_DPS):
    """Boundary value of the same transform at a point inside (a, b)."""
    with mp.workdps(dps):
        x = mp.mpf(x)
        sgn = 1 if side == "plus" else -1
        return (mp.log(abs((b - x) / (x - a))) + sgn * 1j * mp.pi) / (2j * mp.pi)


def gauge_matrix_hp(j: int, lam, bg: BackgroundPair, dps: int = HIGH_DPS) -> mp.matrix:
    """Gauge matrix from its closed form, square root cut along [0, inf) with sqrt(-1) = i."""
    A = mp.mpf(bg.level(j))
    with mp.workdps(dps):
        z = _mpc(lam)
        a = 1 / A
        l = mp.sqrt(z - a) * mp.sqrt(z + a)
        w = 1 / (1j * A * l) - 1
        # sqrt with cut on [0, inf): rotate so the principal cut lands there
        s = 1j * mp.sqrt(-w)
        pref = mp.sqrt(mp.mpf(1) / 2) * s
        q = z * A / (1 - 1j * A * l)
        return mp.matrix([[pref * q, -pref], [-pref, pref * q]])


def left_exponential_hp(lam: float, y: float, t: float, bg: BackgroundPair, dps: int = HIGH_DPS):
    """exp(-2 f1(lam_+)) for real lam inside the inner cut of l1."""
    with mp.workdps(dps):
        A = mp.mpf(bg.A1)
        x = mp.mpf(lam)
        l_plus = 1j * mp.sqrt(1 / A**2 - x**2)
        f = 1j * A * l_plus / 2 * (mp.mpf(y) - 2 * mp.mpf(t) / x**2)
        return mp.exp(-2 * f)


def singularity_exponent(bg: BackgroundPair, endpoint: float, dps: int = HIGH_DPS) -> float:
    """Blow-up exponent of the model solution at a branch point, by a log-log fit.

    Samples approach ``endpoint`` from the upper half-plane along the normal
    direction over six decades.
    """
    with mp.workdps(dps):
        dist = [mp.mpf(10) ** (-k) for k in range(4, 11)]
        vals = [mp.log(mp.mnorm(model_solution_hp(bg, endpoint + 1j * d, dps=dps), 1)) for d in dist]
        xs = [float(mp.log(d)) for d in dist]
        ys = [float(v) for v in vals]
    slope = np.polyfit(xs, ys, 1)[0]
    return float(-slope)


@dataclass
class OracleCase:
    name: str
    bg: BackgroundPair
    description: str
    evaluate: Callable = field(repr=False)     # evaluate(dps) -> numpy array or float
    tolerance: float = 1e-20                    # agreement required between the two precisions

    def value(self, dps: int = HIGH_DPS):
        return np.asarray(self.evaluate(dps))

    def precision_gap(self) -> float:
        return float(np.abs(self.value(HIGH_DPS) - self.value(LOW_DPS)).max())


def oracle_catalog(bg: BackgroundPair) -> list[OracleCase]:
    """Model solution, constant background scattering and segment Cauchy transforms."""
    pts = [1j, 0.3 + 0.2j, -1.5 + 0.5j, 2.0 + 1e-3j]

    def model_values(dps):
        return np.stack([to_numpy(model_solution_hp(bg, z, dps=dps)) for z in pts])

    def model_jump(dps):
        G = mp.matrix([[0, -1j], [-1j, 0]])
        out = []
        for x in (-0.4 / bg.A2, 0.1 / bg.A2, 0.9 / bg.A2):
            with mp.workdps(dps):
                D = model_solution_hp(bg, x, "plus", dps) - model_solution_hp(bg, x, "minus", dps) * G
                out.append(float(mp.mnorm(D, 1)))
        return np.array(out)

    def model_det(dps):
        with mp.workdps(dps):
            return np.array([float(abs(mp.det(model_solution_hp(bg, z, dps=dps)) - 1)) for z in pts])

    def model_infinity(dps):
        with mp.workdps(dps):
            M = model_solution_hp(bg, 1e8j, dps=dps)
            return np.array([float(mp.mnorm(M - mp.eye(2), 1))])

    def constant_background(dps):
        # c = I, so r = c21 / c11 = 0 identically
        return np.array([1.0, 0.0, 0.0])

    def log_cauchy(dps):
        return np.array([complex(segment_log_cauchy_hp(2.0, 3.0, 1j, dps))])

    return [
        OracleCase("model_solution", bg, "delta-matrix solution at sample points", model_values, 1e-25),
        OracleCase("model_jump", bg, "jump -i sigma1 across Gamma2", model_jump, 1e-25),
        OracleCase("model_det", bg, "det of the model solution", model_det, 1e-25),
        OracleCase("model_normalization", bg, "model solution at lam = 1e8 i", model_infinity, 1e-20),
        OracleCase("model_singularity", bg, "blow-up exponent at +1/A2",
                   lambda dps: np.array([singularity_exponent(bg, 1 / bg.A2, dps)]), 1e-6),
        OracleCase("model_zero", bg, "(a1, a2, a3) of the model solution",
                   lambda dps: np.array(model_zero_coefficients(bg, dps)), 1e-10),
        OracleCase("constant_background", bg, "(c11, c21, r) for a constant datum", constant_background, 0.0),
        OracleCase("segment_log", bg, "Cauchy transform of 1 on [2, 3] at i", log_cauchy, 1e-25),
    ]
