"""Jost solutions, scattering coefficients and reflection tables for step data.

The x-equation of the Lax pair at t = 0 is ``Psi_x = U Psi`` with
``U = 1/2 [[-1, lam m], [-lam m, 1]]``.  Each Jost solution starts from its
background form ``H_j^{-1} exp(-f_j sigma3)`` at the end of the window where
``m`` has reached ``A_j`` and is marched across the window with a fourth-order
Magnus integrator.  The normalized solution is
``Psi~_j = H_j Psi_j exp(f_j sigma3)``, which tends to ``I`` at the starting end.
Every march is repeated on a halved mesh and the two results are combined by
Richardson extrapolation; their difference is the reported error estimate.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import spectral_geometry as sg
from .spectral_geometry import GAMMA2, SIGMA0, SIGMA1, BackgroundPair, ContourGrid


class ScatteringError(RuntimeError):
    """Numerical failure in the direct problem; carries diagnostics."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class ResonanceError(ScatteringError):
    """|c11| is too small: the datum is outside the solitonless setting."""


class TableFormatError(ValueError):
    pass


def _logistic(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _softplus(z):
    return np.logaddexp(0.0, z)


# ------------------------------------------------------------------ initial datum


@dataclass(frozen=True)
class InitialDatum:
    """Step datum ``m0 = A1 + (A2 - A1)(1 + tanh(kappa x))/2`` on a window."""

    bg: BackgroundPair
    kappa: float
    x_min: float
    x_max: float
    eps_tail: float = 1e-10

    @property
    def step(self) -> float:
        return self.bg.A2 - self.bg.A1

    def m0(self, x):
        x = np.asarray(x, dtype=float)
        return self.bg.A1 + self.step * _logistic(2 * self.kappa * x)

    def m0_x(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * self.step * self.kappa / np.cosh(self.kappa * x) ** 2

    def tail_integral(self, j: int, x):
        """Integral of m0 - A_j from (-1)^j * infinity to x, in closed form."""
        x = np.asarray(x, dtype=float)
        if self.step == 0:
            return np.zeros_like(x)
        k2 = 2 * self.kappa
        if j == 1:
            return self.step * _softplus(k2 * x) / k2
        if j == 2:
            return self.step * _softplus(-k2 * x) / k2
        raise sg.UsageError(f"j must be 1 or 2, got {j}")

    def _helmholtz(self, x, kernel_sign: bool):
        # 1/2 int exp(-|s|) w(s) m0(x - s) ds on |s| <= S by composite Gauss-Legendre;
        # beyond S the datum sits on its plateaus and the remainder is exponential.
        x = np.atleast_1d(np.asarray(x, dtype=float))
        S = 40.0
        width = min(0.5, 0.25 / max(self.kappa, 1e-12))
        n_pan = int(math.ceil(S / width))
        g, w = np.polynomial.legendre.leggauss(16)
        edges = np.linspace(0.0, S, n_pan + 1)
        mid = 0.5 * (edges[1:] + edges[:-1])
        half = 0.5 * (edges[1:] - edges[:-1])
        s = (mid[:, None] + half[:, None] * g[None, :]).ravel()
        ws = (half[:, None] * w[None, :]).ravel() * np.exp(-s)
        A1, A2 = self.bg.A1, self.bg.A2
        right = self.m0(x[:, None] - s[None, :]) @ ws      # xi = x - s < x
        left = self.m0(x[:, None] + s[None, :]) @ ws       # xi = x + s > x
        tail = np.exp(-S)
        if kernel_sign:
            return 0.5 * (left - right) + 0.5 * tail * (A2 - A1)
        return 0.5 * (right + left) + 0.5 * tail * (A1 + A2)

    def u0(self, x):
        """(1 - d^2/dx^2)^{-1} m0, bounded at both ends."""
        return self._helmholtz(x, False)

    def u0_x(self, x):
        return self._helmholtz(x, True)

    def u0_xx(self, x):
        return self.u0(x) - self.m0(x)

    def is_constant(self) -> bool:
        return self.step == 0

    def describe(self) -> dict:
        return {"A1": self.bg.A1, "A2": self.bg.A2, "kappa": self.kappa,
                "x_min": self.x_min, "x_max": self.x_max, "eps_tail": self.eps_tail}


def tail_window(bg: BackgroundPair, kappa: float, eps_tail: float = 1e-10) -> float:
    """Smallest half-width L with |m0 - A_j| < eps_tail outside [-L, L]."""
    step = bg.A2 - bg.A1
    if step <= eps_tail:
        return 0.0
    return math.log(step / eps_tail) / (2 * kappa)


def build_step_datum(bg: BackgroundPair, kappa: float, x_window=None,
                     eps_tail: float = 1e-10) -> InitialDatum:
    if not kappa > 0:
        raise sg.ConfigurationError(f"kappa must be positive, got {kappa}")
    L = tail_window(bg, kappa, eps_tail)
    if x_window is None:
        half = max(4.0, math.ceil(2 * L) / 2 + 0.5)
        x_window = (-half, half)
    x_min, x_max = map(float, x_window)
    if not x_min < 0 < x_max:
        raise sg.ConfigurationError("the window must contain x = 0")
    if -x_min < L or x_max < L:
        raise sg.ConfigurationError(
            f"window {x_window} too small: tails need |x| >= {L:.3f} for eps_tail={eps_tail}")
    return InitialDatum(bg, float(kappa), x_min, x_max, float(eps_tail))


# ------------------------------------------------------------------ Magnus marching

_G = math.sqrt(3.0) / 6.0


def _sinhc(s):
    small = np.abs(s) < 1e-4
    safe = np.where(small, 1.0, s)
    s2 = s * s
    return np.where(small, 1.0 + s2 / 6.0 + s2 * s2 / 120.0, np.sinh(safe) / safe)


def _mesh(breaks, h, refine: int = 1):
    """Piecewise-uniform mesh through the given ordered break points.

    ``refine`` subdivides every step of the step-``h`` mesh, so meshes built
    with the same ``h`` are nested.
    """
    pieces = []
    for a, b in zip(breaks[:-1], breaks[1:]):
        n = refine * max(1, int(math.ceil(abs(b - a) / h - 1e-9)))
        pieces.append(a + (b - a) * np.arange(n) / n)
    pieces.append(np.array([breaks[-1]]))
    return np.concatenate(pieces)


def _march(datum: InitialDatum, lam, mesh, start):
    """Propagate 2x2 matrices ``start`` (K, 2, 2) along ``mesh``; returns (len(mesh), K, 2, 2)."""
    lam = np.asarray(lam, dtype=complex)
    h = np.diff(mesh)
    x0 = mesh[:-1]
    ma = datum.m0(x0 + (0.5 - _G) * h)
    mb = datum.m0(x0 + (0.5 + _G) * h)
    out = np.empty((len(mesh),) + start.shape, dtype=complex)
    out[0] = start
    p, q, r, s = start[:, 0, 0], start[:, 0, 1], start[:, 1, 0], start[:, 1, 1]
    sq3 = math.sqrt(3.0)
    for k in range(len(h)):
        hk = h[k]
        a = -0.5 * hk
        b = 0.25 * hk * lam * (ma[k] + mb[k])
        c = sq3 * hk * hk * lam * (mb[k] - ma[k]) / 24.0
        root = np.sqrt(a * a + c * c - b * b + 0j)
        ch = np.cosh(root)
        sh = _sinhc(root)
        e11 = ch + sh * a
        e22 = ch - sh * a
        e12 = sh * (c + b)
        e21 = sh * (c - b)
        p, q, r, s = e11 * p + e12 * r, e11 * q + e12 * s, e21 * p + e22 * r, e21 * q + e22 * s
        out[k + 1, :, 0, 0] = p
        out[k + 1, :, 0, 1] = q
        out[k + 1, :, 1, 0] = r
        out[k + 1, :, 1, 1] = s
    return out


def default_step(lam_abs_max: float, bg: BackgroundPair, base: float = 0.04) -> float:
    """Marching step resolving the oscillation frequency ~ |lam| A2 / 2."""
    return min(base, 0.5 / max(lam_abs_max * bg.A2, 1e-12))


def _sides(bg: BackgroundPair, lam, side):
    """Side tags for l_1 and l_2 at the requested points."""
    lam = np.asarray(lam, dtype=complex)
    real = lam.imag == 0
    if np.any(real & (np.abs(lam.real) < bg.inner)):
        raise sg.UsageError("real points on Gamma2 carry no scattering data")
    on_cut1 = real & (np.abs(lam.real) < bg.outer)
    if np.any(on_cut1) and side not in ("plus", "minus"):
        raise sg.UsageError("points on Sigma0 need side 'plus' or 'minus'")
    return (side if np.any(on_cut1) else "off"), "off"


def _background_start(datum, j, lam, side, x):
    bg = datum.bg
    A = bg.level(j)
    lj = sg.branch_root(j, lam, side, bg)
    f = 1j * A * lj * (datum.tail_integral(j, x) / (2 * A) + 0.5 * x)
    _, Hinv = sg.gauge_matrix(j, lam, side, bg)
    E = np.zeros(np.shape(lam) + (2, 2), dtype=complex)
    E[..., 0, 0] = np.exp(-f)
    E[..., 1, 1] = np.exp(f)
    return Hinv @ E


def _normalizer(datum, j, lam, side, x):
    """(H_j, exp(f_j(x))) used to pass from Psi_j to Psi~_j."""
    bg = datum.bg
    A = bg.level(j)
    lj = sg.branch_root(j, lam, side, bg)
    f = 1j * A * lj[None, :] * (datum.tail_integral(j, x)[:, None] / (2 * A) + 0.5 * x[:, None])
    H, _ = sg.gauge_matrix(j, lam, side, bg)
    return H, f


@dataclass(frozen=True)
class JostSample:
    j: int
    lam: complex
    side: str
    x: np.ndarray = field(repr=False)
    psi: np.ndarray = field(repr=False)        # normalized solution, (n_x, 2, 2)
    error: float = 0.0                          # Richardson estimate (max abs)

    def det_defect(self) -> float:
        return float(np.abs(np.linalg.det(self.psi) - 1).max())


def _jost_raw(datum, j, lam, side, h, breaks, refine=1):
    """Psi_j on the mesh for a vector of lam, plus the mesh."""
    mesh = _mesh(breaks, h, refine)
    if j == 2:
        mesh = mesh[::-1]
    start = _background_start(datum, j, lam, side, np.array(mesh[0]))
    return mesh, _march(datum, lam, mesh, start)


def solve_jost(datum: InitialDatum, j: int, lam, side: str = "off", h: float | None = None) -> JostSample:
    """Normalized Jost solution Psi~_j(x, lam) on the window mesh (t = 0)."""
    lam_arr = np.atleast_1d(np.asarray(lam, dtype=complex))
    if lam_arr.size != 1:
        raise sg.UsageError("solve_jost takes a single lam")
    bg = datum.bg
    A = bg.level(j)
    if np.any(np.abs(lam_arr) == 1.0 / A) and np.all(lam_arr.imag == 0):
        raise sg.DomainError("lam is a branch point of l_j")
    s1, s2 = _sides(bg, lam_arr, side)
    sj = s1 if j == 1 else s2
    if h is None:
        h = default_step(abs(lam_arr[0]), bg)
    breaks = [datum.x_min, 0.0, 0.5 * datum.x_max, datum.x_max]
    mesh_c, raw_c = _jost_raw(datum, j, lam_arr, sj, h, breaks)
    mesh_f, raw_f = _jost_raw(datum, j, lam_arr, sj, h, breaks, refine=2)
    # the fine mesh contains the coarse one at even indices
    fine_on_coarse = raw_f[::2]
    if fine_on_coarse.shape != raw_c.shape or not np.allclose(mesh_f[::2], mesh_c):
        raise ScatteringError("mesh refinement is not nested")
    psi_raw = fine_on_coarse + (fine_on_coarse - raw_c) / 15.0
    err = float(np.abs(fine_on_coarse - raw_c).max() / 15.0)
    H, f = _normalizer(datum, j, lam_arr, sj, mesh_c)
    E = np.zeros(f.shape + (2, 2), dtype=complex)
    E[..., 0, 0] = np.exp(f)
    E[..., 1, 1] = np.exp(-f)
    psi = H[None] @ psi_raw @ E
    order = np.argsort(mesh_c)
    return JostSample(j, complex(lam_arr[0]), side, mesh_c[order], psi[order, 0], err)


# ------------------------------------------------------------------ alternative Volterra form


def solve_jost_alternative(datum: InitialDatum, j: int, lam: complex, side: str = "off",
                           n: int = 4000) -> tuple[np.ndarray, np.ndarray]:
    """Psi_j from the variation-of-constants equation around Psi_0j (verification only).

    ``Psi_j = Psi_0j C`` with ``C' = Psi_0j^{-1} K Psi_0j C`` and
    ``K = (m - A_j)/(2 A_j) sigma3``; trapezoid rule on two meshes plus
    Richardson.  Returns (x, Psi_j) with x ascending.
    """
    lam_arr = np.atleast_1d(np.asarray(lam, dtype=complex))
    s1, s2 = _sides(datum.bg, lam_arr, side)
    sj = s1 if j == 1 else s2
    A = datum.bg.level(j)

    def run(npts):
        x = np.linspace(datum.x_min, datum.x_max, npts)
        if j == 2:
            x = x[::-1]
        lj = sg.branch_root(j, lam_arr, sj, datum.bg)[0]
        f = 1j * A * lj * (datum.tail_integral(j, x) / (2 * A) + 0.5 * x)
        _, Hinv = sg.gauge_matrix(j, lam_arr, sj, datum.bg)
        Hinv = Hinv[0]
        H = np.linalg.inv(Hinv)
        # Psi_0^{-1} sigma3 Psi_0 = e^{f s3} H s3 H^{-1} e^{-f s3}
        M = H @ np.diag([1.0, -1.0]) @ Hinv
        k = (datum.m0(x) - A) / (2 * A)
        G = np.empty((len(x), 2, 2), dtype=complex)
        G[:, 0, 0] = M[0, 0]
        G[:, 1, 1] = M[1, 1]
        G[:, 0, 1] = M[0, 1] * np.exp(2 * f)
        G[:, 1, 0] = M[1, 0] * np.exp(-2 * f)
        G *= k[:, None, None]
        C = np.empty_like(G)
        C[0] = np.eye(2)
        dx = np.diff(x)
        eye = np.eye(2)
        for i in range(1, len(x)):
            hh = 0.5 * dx[i - 1]
            C[i] = np.linalg.solve(eye - hh * G[i], C[i - 1] + hh * G[i - 1] @ C[i - 1])
        E = np.zeros((len(x), 2, 2), dtype=complex)
        E[:, 0, 0] = np.exp(-f)
        E[:, 1, 1] = np.exp(f)
        psi = Hinv[None] @ E @ C
        if j == 2:
            x, psi = x[::-1], psi[::-1]
        return x, psi

    xc, pc = run(n + 1)
    xf, pf = run(2 * n + 1)
    return xc, pf[::2] + (pf[::2] - pc) / 3.0


# ------------------------------------------------------------------ asymptotics in lam


def _gl_cumulative(func, start: float, xs, width: float = 0.05, order: int = 12):
    """int_start^x func for each x in xs (composite Gauss-Legendre, signed)."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    g, w = np.polynomial.legendre.leggauss(order)
    out = np.empty_like(xs)
    for i, x in enumerate(xs):
        n = max(1, int(math.ceil(abs(x - start) / width)))
        edges = np.linspace(start, x, n + 1)
        mid = 0.5 * (edges[1:] + edges[:-1])
        half = 0.5 * (edges[1:] - edges[:-1])
        nodes = mid[:, None] + half[:, None] * g[None, :]
        out[i] = np.sum(half[:, None] * w[None, :] * func(nodes))
    return out


def asymptotic_oracle(datum: InitialDatum, j: int, x):
    """(psi_j1(x), psi_j2(x)): 1/lam and 1/lam^2 coefficients of Psi~_j at t = 0.

    Structure: psi_j1 = [[a, b], [b, -a]], psi_j2 = [[c, d], [-d, c]].
    """
    A = datum.bg.level(j)
    x = float(x)
    reach = 12.0 / datum.kappa
    start = datum.x_min - reach if j == 1 else datum.x_max + reach
    m = datum.m0
    mx = datum.m0_x

    def q(xi):
        mm = m(xi)
        return (mm * mm - A * A) / mm

    Q = lambda xi: _gl_cumulative(q, start, np.ravel(xi)).reshape(np.shape(xi))
    Qx = float(Q(np.array([x]))[0])
    mxv = float(m(x))
    a = -1j / (4 * A * A) * Qx
    b = -(mxv - A) / (2 * A * mxv)

    def inner(xi):
        mm = m(xi)
        return (mm - A) * (-0.5j * mx(xi) / mm**3 + 1j * (mm + A) / (8 * A**3 * mm) * Q(xi))

    c = 1j / (2 * A) * _gl_cumulative_complex(inner, start, x)
    d = (1 / mxv) * (-0.5j * float(mx(x)) / mxv**2 - 1j * (mxv - A) / (8 * A**3) * Qx)
    psi1 = np.array([[a, b], [b, -a]], dtype=complex)
    psi2 = np.array([[c, d], [-d, c]], dtype=complex)
    return psi1, psi2


def _gl_cumulative_complex(func, start, x, width: float = 0.05, order: int = 12):
    g, w = np.polynomial.legendre.leggauss(order)
    n = max(1, int(math.ceil(abs(x - start) / width)))
    edges = np.linspace(start, x, n + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    nodes = mid[:, None] + half[:, None] * g[None, :]
    return complex(np.sum(half[:, None] * w[None, :] * func(nodes)))


# ------------------------------------------------------------------ scattering coefficients


@dataclass(frozen=True)
class Coefficients:
    lam: np.ndarray
    side: str
    c11: np.ndarray
    c12: np.ndarray
    c21: np.ndarray
    c22: np.ndarray
    x0_defect: float          # max relative change between the two matching points
    error: float              # Richardson estimate (max abs over entries)


def _det(u, v):
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def _coeffs_at(P1, P2):
    """Determinants at one matching point; P1, P2 (K, 2, 2) raw Jost matrices."""
    a1, a2 = P1[..., :, 0], P1[..., :, 1]
    b1, b2 = P2[..., :, 0], P2[..., :, 1]
    return np.stack([_det(a1, b2), _det(a2, b2), _det(b1, a1), _det(b1, a2)])


def _coeff_band(datum, lam, s1, h, refine=1):
    """c11, c12, c21, c22 at x0 = 0 and x0 = x_max/2 for one mesh."""
    breaks = [datum.x_min, 0.0, 0.5 * datum.x_max, datum.x_max]
    mesh = _mesh(breaks, h, refine)
    i0 = int(np.argmin(np.abs(mesh - 0.0)))
    ih = int(np.argmin(np.abs(mesh - 0.5 * datum.x_max)))
    start1 = _background_start(datum, 1, lam, s1, np.array(datum.x_min))
    start2 = _background_start(datum, 2, lam, "off", np.array(datum.x_max))
    P1 = _march(datum, lam, mesh, start1)
    P2 = _march(datum, lam, mesh[::-1], start2)[::-1]
    return _coeffs_at(P1[i0], P2[i0]), _coeffs_at(P1[ih], P2[ih])


def scattering_coeffs(datum: InitialDatum, lam, side: str = "off", h: float | None = None,
                      x0_tol: float = 1e-6) -> Coefficients:
    """Scattering determinants at real points of Sigma1 / Sigma0 (or off-axis points).

    On Sigma0 (``side='plus'``) only c11 and c21 exist; c12 and c22 are NaN.
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=complex))
    bg = datum.bg
    s1, _ = _sides(bg, lam, side)
    real = lam.imag == 0
    if np.any(real & ((np.abs(lam.real) == bg.inner) | (np.abs(lam.real) == bg.outer))):
        raise sg.DomainError("scattering data requested at a branch point")
    if h is None:
        h = default_step(float(np.abs(lam).max()), bg)
    c0, ch = _coeff_band(datum, lam, s1, h)
    f0, fh = _coeff_band(datum, lam, s1, h, refine=2)
    best0 = f0 + (f0 - c0) / 15.0
    besth = fh + (fh - ch) / 15.0
    scale = np.maximum(np.abs(best0), 1.0)
    on_s0 = real & (np.abs(lam.real) < bg.outer)
    valid = np.ones_like(best0, dtype=bool)
    valid[1] = ~on_s0
    valid[3] = ~on_s0
    x0_defect = float(np.max(np.where(valid, np.abs(best0 - besth) / scale, 0.0)))
    error = float(np.max(np.where(valid, np.abs(f0 - c0) / 15.0, 0.0)))
    if x0_defect > x0_tol:
        raise ScatteringError("scattering determinants depend on the matching point",
                              x0_defect=x0_defect, tol=x0_tol)
    out = np.where(valid, best0, np.nan + 0j)
    return Coefficients(lam, side, out[0], out[1], out[2], out[3], x0_defect, error)


def jost_pair(datum: InitialDatum, lam, x: float, h: float | None = None):
    """Raw Jost matrices (Psi_1(x), Psi_2(x)), each (K, 2, 2), for off-axis lam."""
    lam = np.atleast_1d(np.asarray(lam, dtype=complex))
    if np.any(lam.imag == 0):
        raise sg.UsageError("jost_pair takes off-axis points")
    if not datum.x_min <= x <= datum.x_max:
        raise sg.UsageError("x outside the datum window")
    if h is None:
        h = default_step(float(np.abs(lam).max()), datum.bg)
    breaks = sorted({datum.x_min, float(x), datum.x_max})
    out = []
    for refine in (1, 2):
        mesh = _mesh(breaks, h, refine)
        i = int(np.argmin(np.abs(mesh - x)))
        s1 = _background_start(datum, 1, lam, "off", np.array(datum.x_min))
        s2 = _background_start(datum, 2, lam, "off", np.array(datum.x_max))
        P1 = _march(datum, lam, mesh, s1)[i]
        P2 = _march(datum, lam, mesh[::-1], s2)[::-1][i]
        out.append((P1, P2))
    (c1, c2), (f1, f2) = out
    return f1 + (f1 - c1) / 15.0, f2 + (f2 - c2) / 15.0


_OUT_FRAME = -np.sqrt(0.5) * np.array([[1, 1j], [1j, 1]])


def jost_rh_solution(datum: InitialDatum, lam, x: float, side: str = "right"):
    """RH solution at t = 0 assembled from Jost solutions (upper half plane).

    right: -sqrt(1/2)[[1, i], [i, 1]] (Psi_1^(1)/c11, Psi_2^(2)) exp(f_2 sigma3)
    left:  -sqrt(1/2)[[1, i], [i, 1]] (Psi_1^(1), Psi_2^(2)/c11) exp(f_1 sigma3)
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=complex))
    if np.any(lam.imag <= 0):
        raise sg.UsageError("the Jost construction is used in the upper half plane")
    P1, P2 = jost_pair(datum, lam, x)
    c11 = _det(P1[..., :, 0], P2[..., :, 1])
    bg = datum.bg
    cols = np.empty_like(P1)
    if side == "right":
        cols[..., :, 0] = P1[..., :, 0] / c11[:, None]
        cols[..., :, 1] = P2[..., :, 1]
        j = 2
    elif side == "left":
        cols[..., :, 0] = P1[..., :, 0]
        cols[..., :, 1] = P2[..., :, 1] / c11[:, None]
        j = 1
    else:
        raise sg.UsageError(f"side must be 'right' or 'left', got {side!r}")
    A = bg.level(j)
    lj = sg.branch_root(j, lam, "off", bg)
    f = 1j * A * lj * (datum.tail_integral(j, x) / (2 * A) + 0.5 * x)
    cols[..., :, 0] *= np.exp(f)[:, None]
    cols[..., :, 1] *= np.exp(-f)[:, None]
    return _OUT_FRAME @ cols


def y_of_x(datum: InitialDatum, x, side: str = "right"):
    """t = 0 scale change: y (right) or y-tilde (left) as a function of x."""
    x = np.asarray(x, dtype=float)
    if side == "right":
        return x + datum.tail_integral(2, x) / datum.bg.A2
    return x + datum.tail_integral(1, x) / datum.bg.A1


# ------------------------------------------------------------------ reflection tables


def _bands(abs_lam, edges=(2.0, 5.0, 10.0)):
    """Group indices by |lam| so that each group can share a step size."""
    cuts = np.searchsorted(np.asarray(edges), abs_lam)
    return [np.flatnonzero(cuts == k) for k in range(len(edges) + 1)]


@dataclass
class ScatteringTable:
    """r (right problem) and r-tilde (left problem) sampled at contour nodes."""

    bg: BackgroundPair
    kappa: float
    lam: np.ndarray                      # nodes of Sigma1 and Sigma0, ascending
    segments: np.ndarray
    c11: np.ndarray
    c21: np.ndarray
    grid: ContourGrid | None = field(default=None, repr=False)
    grid_digest: str = ""
    decay: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    window: tuple = ()

    @property
    def r(self) -> np.ndarray:
        return self.c21 / self.c11

    @property
    def r_left(self) -> np.ndarray:
        """conj(c21)/c11 on Sigma1 and 1/(c21 c11) on Sigma0."""
        s0 = self.segments == SIGMA0
        with np.errstate(divide="ignore", invalid="ignore"):
            left = np.where(s0, 1.0 / (self.c21 * self.c11), np.conj(self.c21) / self.c11)
        return left

    def coefficient(self, side: str) -> np.ndarray:
        """Per-grid-node coefficient (zero on Gamma2) for the RH jump."""
        if self.grid is None:
            raise sg.ConfigurationError("table is not attached to a contour grid")
        values = self.r if side == "right" else self.r_left if side == "left" else None
        if values is None:
            raise sg.UsageError(f"side must be 'right' or 'left', got {side!r}")
        full = np.zeros(self.grid.size, dtype=complex)
        full[self._grid_index()] = values
        return full

    def _grid_index(self):
        idx = np.flatnonzero(self.grid.segments != GAMMA2)
        if idx.size != self.lam.size or np.any(self.grid.nodes[idx] != self.lam):
            raise sg.ConfigurationError("table nodes do not match the grid")
        return idx

    def interpolate(self, lam, side: str):
        """Panel-polynomial interpolant of the coefficient at real contour points."""
        full = self.coefficient(side)
        lam = np.asarray(lam, dtype=float)
        out = sg.panel_interpolate(self.grid, full, lam)
        out[np.abs(lam) < self.bg.inner] = 0.0
        return out

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.lam, self.c11, self.c21):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    # -------------------------------------------------------------- persistence

    COLUMNS = ("segment", "lambda", "re_r", "im_r", "re_c11", "im_c11", "re_c21", "im_c21")

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        r = self.r
        for k in range(self.lam.size):
            w.writerow([self.segments[k]] + [format(float(v), ".17g") for v in (
                self.lam[k], r[k].real, r[k].imag, self.c11[k].real, self.c11[k].imag,
                self.c21[k].real, self.c21[k].imag)])
        return buf.getvalue()

    def sidecar(self) -> dict:
        return {
            "bg": {"A1": self.bg.A1, "A2": self.bg.A2},
            "kappa": self.kappa,
            "window": list(self.window),
            "grid": self.grid.metadata() if self.grid is not None else None,
            "grid_digest": self.grid_digest,
            "decay": self.decay,
            "diagnostics": self.diagnostics,
        }

    def save(self, csv_path, json_path):
        with open(csv_path, "w", newline="") as fh:
            fh.write(self.to_csv_text())
        with open(json_path, "w") as fh:
            json.dump(self.sidecar(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, csv_path, json_path, grid: ContourGrid | None = None) -> "ScatteringTable":
        with open(json_path) as fh:
            meta = json.load(fh)
        with open(csv_path, newline="") as fh:
            text = fh.read()
        bg = BackgroundPair(meta["bg"]["A1"], meta["bg"]["A2"], allow_equal=True)
        if grid is None and meta.get("grid"):
            grid = sg.build_contour(bg, **meta["grid"]["build_args"])
        table = cls.from_csv_text(text, bg, meta["kappa"], grid)
        table.decay = meta.get("decay", {})
        table.diagnostics = meta.get("diagnostics", {})
        table.window = tuple(meta.get("window", ()))
        if meta.get("grid_digest") and grid is not None and grid.digest() != meta["grid_digest"]:
            raise TableFormatError("grid digest in sidecar does not match the rebuilt grid")
        table.grid_digest = meta.get("grid_digest", "")
        return table

    @classmethod
    def from_csv_text(cls, text: str, bg, kappa, grid=None) -> "ScatteringTable":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != cls.COLUMNS:
            raise TableFormatError(f"row 1: expected header {','.join(cls.COLUMNS)}")
        seg, lam, c11, c21 = [], [], [], []
        for n, row in enumerate(rows[1:], start=2):
            if len(row) != len(cls.COLUMNS):
                raise TableFormatError(f"row {n}: expected {len(cls.COLUMNS)} fields, got {len(row)}")
            if row[0] not in (SIGMA1, SIGMA0):
                raise TableFormatError(f"row {n}: unknown segment {row[0]!r}")
            try:
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise TableFormatError(f"row {n}: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise TableFormatError(f"row {n}: non-finite value")
            seg.append(row[0])
            lam.append(vals[0])
            c11.append(complex(vals[3], vals[4]))
            c21.append(complex(vals[5], vals[6]))
        return cls(bg, float(kappa), np.array(lam), np.array(seg, dtype=str),
                   np.array(c11), np.array(c21), grid,
                   grid.digest() if grid is not None else "")


def fit_decay(lam, r, lo: float, hi: float, floor: float = 1e-13) -> dict:
    """Least-squares slope of log|r| against log|lam| on lo <= |lam| <= hi."""
    a = np.abs(lam)
    sel = (a >= lo) & (a <= hi) & (np.abs(r) > floor)
    out = {"lo": lo, "hi": hi, "points": int(sel.sum()), "floor": floor,
           "sup_beyond_hi": float(np.abs(r[a >= 0.9 * hi]).max()) if np.any(a >= 0.9 * hi) else 0.0}
    if sel.sum() < 2:
        # everything below the floor: decay faster than any measurable power
        out["slope"] = -math.inf
        return out
    slope, _ = np.polyfit(np.log(a[sel]), np.log(np.abs(r[sel])), 1)
    out["slope"] = float(slope)
    return out


def continuity_defect(grid: ContourGrid, values) -> float:
    """Max mismatch of neighbouring panel interpolants at shared panel ends.

    Ends at branch points and at the truncation radius are skipped.
    """
    values = np.asarray(values)
    slices = grid.panel_slices()
    u_nodes, _ = sg.gauss_legendre01(grid.order)
    bw = sg._bary_weights(u_nodes)

    def at(k, u):
        c = bw / (u - u_nodes)
        return np.dot(c, values[slices[k]]) / c.sum()

    ends = {}
    for k, pan in enumerate(grid.panels):
        for u in (0.0, 1.0):
            x = pan.point(u)
            ends.setdefault(round(float(x), 13), []).append(at(k, u))
    bad = {grid.bg.inner, -grid.bg.inner, grid.bg.outer, -grid.bg.outer}
    worst = 0.0
    for x, vals in ends.items():
        if len(vals) < 2 or any(abs(x - b) < 1e-12 for b in bad):
            continue
        worst = max(worst, abs(vals[0] - vals[1]) / max(1.0, abs(vals[0])))
    return float(worst)


def reflection(datum: InitialDatum, grid: ContourGrid, resonance: float = 1e-8,
               x0_tol: float = 1e-6) -> ScatteringTable:
    """Sample c11, c21 and the reflection coefficients at every Sigma1/Sigma0 node."""
    bg = datum.bg
    if grid.bg != bg and not (grid.bg.A1 == bg.A1 and grid.bg.A2 == bg.A2):
        raise sg.ConfigurationError("grid and datum use different backgrounds")
    idx = np.flatnonzero(grid.segments != GAMMA2)
    lam = grid.nodes[idx]
    segs = grid.segments[idx]
    c11 = np.ones(lam.size, dtype=complex)
    c21 = np.zeros(lam.size, dtype=complex)
    diag = {"solves": 0, "x0_defect": 0.0, "richardson": 0.0}
    if not datum.is_constant():
        for part in (SIGMA1, SIGMA0):
            sel = np.flatnonzero(segs == part)
            if sel.size == 0:
                continue
            side = "plus" if part == SIGMA0 else "off"
            for band in _bands(np.abs(lam[sel])):
                if band.size == 0:
                    continue
                ii = sel[band]
                co = scattering_coeffs(datum, lam[ii], side, x0_tol=x0_tol)
                c11[ii] = co.c11
                c21[ii] = co.c21
                diag["solves"] += 2 * ii.size
                diag["x0_defect"] = max(diag["x0_defect"], co.x0_defect)
                diag["richardson"] = max(diag["richardson"], co.error)
    small = np.abs(c11) < resonance
    if np.any(small):
        raise ResonanceError("|c11| below the resonance threshold",
                             lam=lam[small].tolist(), threshold=resonance)
    table = ScatteringTable(bg, datum.kappa, lam, segs, c11, c21, grid, grid.digest(),
                            window=(datum.x_min, datum.x_max))
    r = table.r
    s1 = segs == SIGMA1
    s0 = segs == SIGMA0
    table.decay = fit_decay(lam[s1], r[s1], grid.R / 4, grid.R)
    full = np.zeros(grid.size, dtype=complex)
    full[idx] = r
    diag["continuity"] = continuity_defect(grid, full) if grid.size else 0.0
    diag["unitarity_sigma1"] = float(np.abs(np.abs(c11[s1]) ** 2 - np.abs(c21[s1]) ** 2 - 1).max()) if np.any(s1) else 0.0
    diag["modulus_sigma0"] = float(np.abs(np.abs(r[s0]) - 1).max()) if np.any(s0) else 0.0
    table.diagnostics = diag
    return table


def symmetry_report(table: ScatteringTable) -> dict:
    """Measured symmetry defects of r and r-tilde on the (symmetric) node set."""
    lam, r, rl = table.lam, table.r, table.r_left
    order = np.argsort(lam)
    mirror = np.searchsorted(lam[order], -lam)
    mirror = order[np.clip(mirror, 0, lam.size - 1)]
    paired = np.isclose(lam[mirror], -lam, rtol=0, atol=1e-13)
    s1 = (table.segments == SIGMA1) & paired
    s0 = (table.segments == SIGMA0) & paired
    rep = {
        "odd_conj_sigma1": float(np.abs(r[s1] + np.conj(r[mirror[s1]])).max()) if np.any(s1) else 0.0,
        "inverse_sigma0": float(np.abs(r[s0] + 1 / r[mirror[s0]]).max()) if np.any(s0) else 0.0,
        "modulus_sigma0": float(np.abs(np.abs(r[s0]) - 1).max()) if np.any(s0) else 0.0,
        "left_odd_conj_sigma1": float(np.abs(rl[s1] + np.conj(rl[mirror[s1]])).max()) if np.any(s1) else 0.0,
        "left_even_sigma0": float(np.abs(rl[s0] - rl[mirror[s0]]).max()) if np.any(s0) else 0.0,
        "left_sigma0_closed_form": float(np.abs(rl[s0] - 1j / np.abs(table.c11[s0]) ** 2).max()) if np.any(s0) else 0.0,
    }
    s1all = table.segments == SIGMA1
    rep["unitarity_sigma1"] = float(np.abs(np.abs(table.c11[s1all]) ** 2 - np.abs(table.c21[s1all]) ** 2 - 1).max()) if np.any(s1all) else 0.0
    return rep
