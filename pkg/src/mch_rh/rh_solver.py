"""Jump data, Cauchy operators and the singular integral equation solver.

The unknown is ``mu`` at the contour nodes, solving

    mu = I + C_+(mu w_minus) + C_-(mu w_plus),

after which ``N = I + C(mu (w_plus + w_minus))``.  Boundary values and near
evaluations use product integration on each panel, so densities that are
polynomial in the panel parameter are integrated exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla

from . import spectral_geometry as sg
from ._panel_cauchy import panel_weights
from .spectral_geometry import GAMMA2, SIGMA0, SIGMA1, BackgroundPair, ContourGrid

SIGMA_1 = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_2 = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_3 = np.array([[1, 0], [0, -1]], dtype=complex)
GAMMA2_JUMP = -1j * SIGMA_1
# unit-modulus prefactor of the expansion at lam = 0_+
ZERO_FRAME = np.sqrt(0.5) * np.array([[-1, 1j], [1j, -1]])


class NumericalError(RuntimeError):
    """Solver, extraction or overflow failure carrying diagnostics."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class ExtractionError(NumericalError):
    pass


# ------------------------------------------------------------------ jumps


def _on_segment(segments, name):
    return np.asarray(segments) == name


def jump_factors(bg: BackgroundPair, lam, segments, coeff, y: float, t: float, side: str,
                 exp_floor: float = 1e-300):
    """w_plus, w_minus (shape (n, 2, 2)) at real contour points.

    ``coeff`` holds r (right problem) or r-tilde (left problem) at the points;
    entries on Gamma2 are ignored.
    """
    lam = np.asarray(lam, dtype=float)
    coeff = np.asarray(coeff, dtype=complex)
    n = lam.size
    wp = np.zeros((n, 2, 2), dtype=complex)
    wm = np.zeros((n, 2, 2), dtype=complex)
    g2 = _on_segment(segments, GAMMA2)
    s1 = _on_segment(segments, SIGMA1)
    s0 = _on_segment(segments, SIGMA0)
    wp[g2] = GAMMA2_JUMP - np.eye(2)
    if side == "right":
        out = s1 | s0
        if np.any(out):
            f = sg.phase(2, y, t, lam[out], "off", bg)
            rho = coeff[out] * np.exp(2 * f)
            wp[out, 1, 0] = rho
            wm[out, 0, 1] = -np.conj(rho)
    elif side == "left":
        if np.any(s1):
            f = sg.phase(1, y, t, lam[s1], "off", bg)
            beta = coeff[s1] * np.exp(-2 * f)
            wp[s1, 0, 1] = -beta
            wm[s1, 1, 0] = np.conj(beta)
        if np.any(s0):
            f = sg.phase(1, y, t, lam[s0], "plus", bg)
            expo = (-2 * f).real
            if np.any(expo > 700):
                raise NumericalError("left-side exponent overflows on Sigma0",
                                     y=y, t=t, max_exponent=float(expo.max()))
            grow = np.exp(-2 * f)
            grow = np.where(np.abs(grow) < exp_floor, 0.0, grow)
            G = np.zeros((s0.sum(), 2, 2), dtype=complex)
            G[:, 0, 1] = -1j
            G[:, 1, 0] = -1j
            G[:, 1, 1] = -1j * grow * coeff[s0]
            wp[s0] = G - np.eye(2)
    else:
        raise sg.UsageError(f"side must be 'right' or 'left', got {side!r}")
    return wp, wm


def jump_matrix(wp, wm):
    """G = (I - w_minus)^{-1} (I + w_plus)."""
    eye = np.eye(2)
    return np.linalg.solve(eye - wm, eye + wp)


def jump_matrix_direct(bg, lam, segments, coeff, y, t, side):
    """Jump matrix from its closed form (used to cross-check the factorization)."""
    lam = np.asarray(lam, dtype=float)
    coeff = np.asarray(coeff, dtype=complex)
    G = np.zeros((lam.size, 2, 2), dtype=complex)
    for i, (x, seg, c) in enumerate(zip(lam, segments, coeff)):
        if seg == GAMMA2:
            G[i] = GAMMA2_JUMP
            continue
        if side == "right":
            f = complex(sg.phase(2, y, t, x, "off", bg))
            f_plus = f
            if seg == SIGMA1:
                G0 = np.array([[1 - abs(c) ** 2, -np.conj(c)], [c, 1]])
            else:
                G0 = np.array([[0, -1 / c if c != 0 else 0], [c, 1]])
            G[i] = np.diag([np.exp(-f), np.exp(f)]) @ G0 @ np.diag([np.exp(f_plus), np.exp(-f_plus)])
        else:
            if seg == SIGMA1:
                f = complex(sg.phase(1, y, t, x, "off", bg))
                G0 = np.array([[1, -c], [np.conj(c), 1 - abs(c) ** 2]])
                G[i] = np.diag([np.exp(-f), np.exp(f)]) @ G0 @ np.diag([np.exp(f), np.exp(-f)])
            else:
                f = complex(sg.phase(1, y, t, x, "plus", bg))
                G[i] = -1j * np.array([[0, 1], [1, np.exp(-2 * f) * c]])
    return G


@dataclass(frozen=True)
class JumpData:
    grid: ContourGrid
    side: str
    y: float
    t: float
    wplus: np.ndarray = field(repr=False)
    wminus: np.ndarray = field(repr=False)
    table: object = field(repr=False, default=None)

    def coeff_at(self, lam, segments):
        if self.table is None:
            return np.zeros(len(lam), dtype=complex)
        return self.table.interpolate(lam, self.side)

    def factors_at(self, lam, segments):
        return jump_factors(self.grid.bg, lam, segments, self.coeff_at(lam, segments),
                            self.y, self.t, self.side)

    def jump_at(self, lam, segments):
        return jump_matrix(*self.factors_at(lam, segments))


def build_jump(table, grid: ContourGrid, y: float, t: float, side: str = "right") -> JumpData:
    """Jump factors at every node; ``table=None`` means r = 0 (model problem)."""
    if table is None:
        coeff = np.zeros(grid.size, dtype=complex)
    else:
        if table.grid_digest != grid.digest():
            raise sg.ConfigurationError("scattering table was not sampled on this grid")
        coeff = table.coefficient(side)
    wp, wm = jump_factors(grid.bg, grid.nodes, grid.segments, coeff, y, t, side)
    return JumpData(grid, side, float(y), float(t), wp, wm, table)


# ------------------------------------------------------------------ Cauchy operators


def _cauchy_matrix(grid: ContourGrid, targets, sides, frames=None) -> np.ndarray:
    """K (T, N) with (C f)(target) = K @ f for node samples f.

    ``frames`` optionally gives each target as anchor + offset (see
    ``ContourGrid.node_frames``) so that nodes crowded against a branch point
    keep their full relative precision.
    """
    targets = np.asarray(targets, dtype=complex).ravel()
    sides = np.broadcast_to(np.asarray(sides), targets.shape)
    base, offset = (targets, None) if frames is None else frames
    K = np.zeros((targets.size, grid.size), dtype=complex)
    slices = grid.panel_slices()
    n = grid.order
    u_weights = sg.gauss_legendre01(n)[1]
    for k, pan in enumerate(grid.panels):
        idx = slices[k]
        on_panel = (targets.imag == 0) & (targets.real > pan.lo) & (targets.real < pan.hi)
        side_here = np.where(on_panel, sides, 0)
        W = panel_weights(pan.anchor, pan.span, pan.power, n, base, side_here, offset)
        K[:, idx] = W * (grid.weights[idx] / u_weights)[None, :]
    return K / (2j * np.pi)


@lru_cache(maxsize=8)
def _boundary_operators(grid: ContourGrid):
    frames = grid.node_frames()
    Kp = _cauchy_matrix(grid, grid.nodes, +1, frames)
    Km = _cauchy_matrix(grid, grid.nodes, -1, frames)
    return Kp, Km


def boundary_operators(grid: ContourGrid):
    """(C_+, C_-) as node-to-node matrices (cached per grid)."""
    return _boundary_operators(grid)


def cauchy_apply(grid: ContourGrid, density, lam, near_eps: float = 0.0):
    """Cauchy transform of node samples at off-contour points; density (N, ...)."""
    lam = np.atleast_1d(np.asarray(lam, dtype=complex))
    if np.any(lam.imag == 0) and np.any(np.abs(lam.real[lam.imag == 0]) <= grid.R):
        raise sg.UsageError("cauchy_apply needs off-contour points; use cauchy_boundary")
    K = _cauchy_matrix(grid, lam, 0)
    return np.tensordot(K, np.asarray(density), axes=(1, 0))


def cauchy_boundary(grid: ContourGrid, density, points, side: str):
    """C_+ or C_- of node samples at real contour points (nodes or not)."""
    sgn = {"plus": 1, "minus": -1}[side]
    pts = np.atleast_1d(np.asarray(points, dtype=float))
    K = _cauchy_matrix(grid, pts.astype(complex), sgn)
    return np.tensordot(K, np.asarray(density), axes=(1, 0))


def segment_log_cauchy(a: float, b: float, lam):
    """Closed form of (1/2 pi i) int_a^b dz/(z - lam) for lam off [a, b]."""
    lam = np.asarray(lam, dtype=complex)
    return (np.log(b - lam) - np.log(a - lam)) / (2j * np.pi)


# ------------------------------------------------------------------ solve


@dataclass
class RHSolution:
    jump: JumpData
    mu: np.ndarray = field(repr=False)            # (N, 2, 2)
    residual: float = 0.0
    residual_full: float = 0.0
    condition: float = 0.0
    active: int = 0

    @property
    def grid(self) -> ContourGrid:
        return self.jump.grid

    @property
    def density(self) -> np.ndarray:
        """mu (w_plus + w_minus) at the nodes."""
        return self.mu @ (self.jump.wplus + self.jump.wminus)

    def diagnostics(self) -> dict:
        return {
            "side": self.jump.side, "y": self.jump.y, "t": self.jump.t,
            "residual": self.residual, "residual_full": self.residual_full,
            "condition": self.condition, "active_nodes": self.active,
            "grid": self.grid.metadata(),
        }

    def dump_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.diagnostics(), fh, indent=2, sort_keys=True)


def _apply_Cw(Kp, Km, mu, wp, wm):
    return np.einsum("ij,jab->iab", Kp, mu @ wm) + np.einsum("ij,jab->iab", Km, mu @ wp)


def solve_instance(jump: JumpData, cond_limit: float = 1e12, w_floor: float = 1e-14) -> RHSolution:
    """Dense collocation solve of mu = I + C_w mu; the two rows of mu share one LU.

    Nodes whose jump factors are all below ``w_floor`` (reflection coefficient
    decayed to round-off) are left out of the linear system; mu there follows
    from the equation itself afterwards.
    """
    grid = jump.grid
    Kp, Km = boundary_operators(grid)
    wp, wm = jump.wplus, jump.wminus
    N = grid.size
    size = np.maximum(np.abs(wp).reshape(N, -1).max(1), np.abs(wm).reshape(N, -1).max(1))
    act = np.flatnonzero(size > w_floor)
    wp = np.where((size > w_floor)[:, None, None], wp, 0.0)
    wm = np.where((size > w_floor)[:, None, None], wm, 0.0)
    mu = np.tile(np.eye(2, dtype=complex), (N, 1, 1))
    if act.size == 0:
        return RHSolution(jump, mu, 0.0, 0.0, 1.0, 0)
    Kpa, Kma = Kp[np.ix_(act, act)], Km[np.ix_(act, act)]
    n = act.size
    # block entry [(i,a),(j,b)] = Kp_ij wm_j[b,a] + Km_ij wp_j[b,a]
    B = (Kpa[:, None, :, None] * wm[act].transpose(2, 0, 1)[None]
         + Kma[:, None, :, None] * wp[act].transpose(2, 0, 1)[None])
    A = np.eye(2 * n) - B.reshape(2 * n, 2 * n)
    rhs = np.zeros((2 * n, 2), dtype=complex)
    rhs[0::2, 0] = 1.0
    rhs[1::2, 1] = 1.0
    anorm = np.linalg.norm(A, 1)
    lu, piv = sla.lu_factor(A, check_finite=False)
    rcond, info = sla.lapack.zgecon(lu, anorm, norm="1")
    cond = np.inf if rcond == 0 else 1.0 / rcond
    if not np.isfinite(cond) or cond > cond_limit:
        raise NumericalError("singular integral equation is ill-conditioned",
                             condition=float(cond), y=jump.y, t=jump.t, side=jump.side)
    X = sla.lu_solve((lu, piv), rhs, check_finite=False)
    res = np.linalg.norm(A @ X - rhs) / max(np.linalg.norm(X), 1.0)
    rows = X.reshape(n, 2, 2)            # rows[j, a, row] -> mu_j[row, a]
    mu[act] = rows.transpose(0, 2, 1)
    rest = np.setdiff1d(np.arange(N), act)
    if rest.size:
        mu[rest] = np.eye(2) + (np.einsum("ij,jab->iab", Kp[np.ix_(rest, act)], mu[act] @ wm[act])
                                + np.einsum("ij,jab->iab", Km[np.ix_(rest, act)], mu[act] @ wp[act]))
    full = mu - np.eye(2) - _apply_Cw(Kp, Km, mu, wp, wm)
    res_full = np.linalg.norm(full) / max(np.linalg.norm(mu), 1.0)
    return RHSolution(jump, mu, float(res), float(res_full), float(cond), int(n))


def operator_norm_check(jump: JumpData) -> dict:
    """Measured ||C_w|| versus ||C_+-|| * max ||w||_inf (logged inequality)."""
    Kp, Km = boundary_operators(jump.grid)
    sw = np.sqrt(jump.grid.weights)
    cp = np.linalg.norm(sw[:, None] * Kp / sw[None, :], 2)
    cm = np.linalg.norm(sw[:, None] * Km / sw[None, :], 2)
    wmax = max(np.abs(jump.wplus).max(), np.abs(jump.wminus).max())
    N = jump.grid.size
    # C_w acting on 2x2 matrix densities, one row at a time
    B = (Kp[:, None, :, None] * jump.wminus.transpose(2, 0, 1)[None]
         + Km[:, None, :, None] * jump.wplus.transpose(2, 0, 1)[None]).reshape(2 * N, 2 * N)
    s2 = np.repeat(sw, 2)
    cw = np.linalg.norm(s2[:, None] * B / s2[None, :], 2)
    bound = 2 * max(cp, cm) * wmax
    return {"Cw": float(cw), "C_plus": float(cp), "C_minus": float(cm), "w_inf": float(wmax),
            "bound": float(bound), "holds": bool(cw <= bound * (1 + 1e-9))}


# ------------------------------------------------------------------ evaluation


def evaluate_N(sol: RHSolution, lam, side: str | None = None) -> np.ndarray:
    """N at points; off-contour unless ``side`` is 'plus'/'minus' (then real points)."""
    lam = np.atleast_1d(np.asarray(lam))
    dens = sol.density
    if side is None:
        C = cauchy_apply(sol.grid, dens, lam)
    else:
        C = cauchy_boundary(sol.grid, dens, lam.real, side)
    return np.eye(2) + C


@lru_cache(maxsize=4)
def _midpoint_operators(grid: ContourGrid):
    points, segments, _ = grid.midpoints()
    pts = points.astype(complex)
    return points, segments, _cauchy_matrix(grid, pts, +1), _cauchy_matrix(grid, pts, -1)


def jump_residual(sol: RHSolution, points=None, segments=None) -> float:
    """max |N_+ - N_- G| at validation points (panel midpoints by default)."""
    if points is None:
        points, segments, Kp, Km = _midpoint_operators(sol.grid)
        dens = sol.density
        Np = np.eye(2) + np.tensordot(Kp, dens, axes=(1, 0))
        Nm = np.eye(2) + np.tensordot(Km, dens, axes=(1, 0))
    else:
        Np = evaluate_N(sol, points, "plus")
        Nm = evaluate_N(sol, points, "minus")
    G = sol.jump.jump_at(points, segments)
    return float(np.abs(Np - Nm @ G).max())


@dataclass(frozen=True)
class ZeroExpansion:
    c1: float
    c2: float
    c3: float
    misfit: float
    side: str = "right"

    def as_tuple(self):
        return (self.c1, self.c2, self.c3)


@dataclass(frozen=True)
class InfinityExpansion:
    n: np.ndarray          # coefficient of 1/lam in ZERO_FRAME @ N
    N1: np.ndarray         # coefficient of 1/lam in N

    @property
    def alpha(self) -> float:
        return float((np.sqrt(2) * (self.n[0, 1] + self.n[1, 0])).real)

    @property
    def alpha_alt(self) -> complex:
        return complex(1j * np.sqrt(2) * (self.n[0, 0] + self.n[1, 1]))


def zero_form(c1, c2, c3, lam):
    """Constrained two-term expansion of N at lam = 0_+."""
    lam = np.asarray(lam, dtype=complex)[..., None, None]
    head = np.array([[1j / c1, c1], [1 / c1, 1j * c1]])
    lin = np.array([[c2, 1j * c3], [1j * c2, c3]])
    return -np.sqrt(0.5) * (1j * head + 1j * lam * lin)


def _constrained_zero(N0, N1, tol: float, side: str) -> ZeroExpansion:
    """Read (c1, c2, c3) off the two leading Taylor matrices.

    N0 = (1/sqrt2)[[1/c1, -i c1], [-i/c1, c1]] and
    N1 = (1/sqrt2)[[-i c2, c3], [c2, -i c3]].  The leading coefficient is taken
    from whichever pair of entries is larger, so that a large c1 does not lose
    digits through 1/c1.  The misfit is the defect of the symmetric form
    relative to the size of each matrix.
    """
    r2 = np.sqrt(2)
    if abs(N0[1, 1]) >= abs(N0[0, 0]):
        c1 = float(np.mean([(r2 * N0[1, 1]).real, (1j * r2 * N0[0, 1]).real]))
    else:
        c1 = float(1.0 / np.mean([(r2 * N0[0, 0]).real, (1j * r2 * N0[1, 0]).real]))
    c2 = float(np.mean([(1j * r2 * N1[0, 0]).real, (r2 * N1[1, 0]).real]))
    c3 = float(np.mean([(r2 * N1[0, 1]).real, (1j * r2 * N1[1, 1]).real]))
    z = ZeroExpansion(c1, c2, c3, 0.0, side)
    if not c1 > 0:
        raise ExtractionError("leading coefficient is not positive", a1=c1)
    F0 = zero_form(c1, c2, c3, 0.0)
    F1 = zero_form(c1, c2, c3, 1.0) - F0
    misfit = float(max(np.abs(N0 - F0).max() / max(1.0, np.abs(N0).max()),
                       np.abs(N1 - F1).max() / max(1.0, np.abs(N1).max())))
    z = ZeroExpansion(c1, c2, c3, misfit, side)
    if misfit > tol:
        raise ExtractionError("zero expansion violates the symmetric form", misfit=misfit, values=z)
    return z


def fit_zero_expansion(samples_lam, samples_N, tol: float = 1e-6, side: str = "right") -> ZeroExpansion:
    """Polynomial extrapolation of samples N(lam_k) to lam = 0, then the constrained form.

    With as many samples as unknowns this is Richardson extrapolation in lam;
    with more it is a least-squares fit of degree ``min(len - 1, 6)``.
    """
    lam = np.asarray(samples_lam, dtype=complex)
    Ns = np.asarray(samples_N)
    deg = min(len(lam) - 1, 6)
    scale = np.abs(lam).max()
    V = np.vander(lam / scale, deg + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(V, Ns.reshape(len(lam), 4), rcond=None)
    return _constrained_zero(coef[0].reshape(2, 2), coef[1].reshape(2, 2) / scale, tol, side)


def zero_samples(bg: BackgroundPair, eps: float | None = None, count: int = 5):
    if eps is None:
        eps = 1e-2 / bg.A2
    return 1j * eps * 2.0 ** -np.arange(count)


def zero_taylor_circle(sol: RHSolution, radius: float | None = None, points: int = 64):
    """Taylor matrices (N0, N1) of the plus-side continuation of N at 0.

    The jump on Gamma2 is the constant -i sigma1, so N from above continues
    into the lower half-disc as N(lam) @ (-i sigma1); the continuation is
    analytic for |lam| < 1/A2 and the trapezoid rule on a circle gives its
    Taylor coefficients to spectral accuracy.
    """
    if radius is None:
        radius = 0.4 * sol.grid.bg.inner
    theta = 2 * np.pi * (np.arange(points) + 0.5) / points
    lam = radius * np.exp(1j * theta)
    F = evaluate_N(sol, lam)
    below = lam.imag < 0
    F[below] = F[below] @ GAMMA2_JUMP
    c = np.fft.fft(F.reshape(points, 4), axis=0)[:2] / points
    c *= np.exp(-1j * np.pi * np.arange(2) / points)[:, None]
    return c[0].reshape(2, 2), c[1].reshape(2, 2) / radius


def expand_at_zero(sol: RHSolution, eps: float | None = None, tol: float = 1e-6,
                   method: str = "circle", count: int = 7) -> ZeroExpansion:
    """(a1, a2, a3) of N at 0_+.

    ``method="circle"`` uses the analytic continuation across Gamma2 (default,
    about 1e-13 accurate); ``method="axis"`` extrapolates samples taken on the
    positive imaginary axis, accurate to about 1e-8.
    """
    if method == "circle":
        N0, N1 = zero_taylor_circle(sol)
        return _constrained_zero(N0, N1, tol, sol.jump.side)
    if method == "axis":
        lam = zero_samples(sol.grid.bg, eps if eps is not None else 0.2 / sol.grid.bg.A2, count)
        return fit_zero_expansion(lam, evaluate_N(sol, lam), tol, sol.jump.side)
    raise sg.UsageError(f"unknown zero-expansion method {method!r}")


def expand_at_infinity(sol: RHSolution) -> InfinityExpansion:
    """1/lam coefficient of N via the exact moment -(1/2 pi i) int mu (w+ + w-)."""
    N1 = -np.tensordot(sol.grid.weights, sol.density, axes=(0, 0)) / (2j * np.pi)
    return InfinityExpansion(ZERO_FRAME @ N1, N1)


# ------------------------------------------------------------------ model problem


def model_delta(bg: BackgroundPair, lam, side: str = "off"):
    """((lam + 1/A2)/(lam - 1/A2))^(1/4), principal branch; cut on Gamma2."""
    a = bg.inner
    lam = np.asarray(lam, dtype=complex)
    if np.any((lam == a) | (lam == -a)):
        raise sg.DomainError("model solution evaluated at a branch point")
    on = (lam.imag == 0) & (np.abs(lam.real) < a)
    if np.any(on):
        if side not in ("plus", "minus"):
            raise sg.UsageError("points on Gamma2 need a side tag")
        q = np.abs((lam.real + a) / (lam.real - a)) ** 0.25
        ang = np.exp(-1j * np.pi / 4) if side == "plus" else np.exp(1j * np.pi / 4)
        d_on = q * ang
    d = ((lam + a) / (lam - a)) ** 0.25
    return np.where(on, d_on, d) if np.any(on) else d


def model_solution(bg: BackgroundPair, lam, side: str = "off") -> np.ndarray:
    d = model_delta(bg, lam, side)
    p, m = 0.5 * (d + 1 / d), 0.5 * (d - 1 / d)
    return np.stack([np.stack([p, m], -1), np.stack([m, p], -1)], -2)
