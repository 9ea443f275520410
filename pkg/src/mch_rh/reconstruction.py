"""From RH expansions to the solution: fields, the change of variables, checks.

Everything here is expressed for a generic background level ``A``: the right
problem uses ``A = A2`` in the y scale, the left problem ``A = A1`` in the
y-tilde scale.  The formulas are otherwise identical.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import BPoly, CubicHermiteSpline, PchipInterpolator
from scipy.optimize import brentq

from . import rh_solver as rh
from . import spectral_geometry as sg
from .rh_solver import SIGMA_1, SIGMA_2, InfinityExpansion, NumericalError, ZeroExpansion
from .spectral_geometry import BackgroundPair

FIELD_COLUMNS = ("y", "a1", "a2", "a3", "alpha", "beta", "gamma", "u_hat", "v_hat", "m_hat", "x")


class ReconstructionError(ValueError):
    """Non-monotone map or malformed line data."""


class LineFormatError(ValueError):
    pass


def level(bg: BackgroundPair, side: str) -> float:
    if side == "right":
        return bg.A2
    if side == "left":
        return bg.A1
    raise sg.UsageError(f"side must be 'right' or 'left', got {side!r}")


@dataclass(frozen=True)
class FieldPoint:
    y: float
    t: float
    side: str
    a1: float
    a2: float
    a3: float
    n: np.ndarray = field(repr=False)
    alpha: float
    alpha_alt: complex
    beta: float
    gamma: float
    u_hat: float
    v_hat: float
    m_hat: float
    x: float
    misfit: float = 0.0
    breakdown: bool = False

    def row(self) -> tuple:
        return tuple(getattr(self, c) for c in FIELD_COLUMNS)


def fields_from_expansions(zero: ZeroExpansion, inf: InfinityExpansion, bg: BackgroundPair,
                           side: str, y: float, t: float) -> FieldPoint:
    A = level(bg, side)
    a1, a2, a3 = zero.as_tuple()
    u_hat = a1 * a2 + a3 / a1
    v_hat = -a1 * a2 + a3 / a1
    beta = -2 * a2 * a1
    gamma = 2 * a3 / a1
    alpha = inf.alpha
    breakdown = not alpha < 0
    m_hat = -1.0 / alpha if alpha != 0 else math.inf
    scale = max(1.0, abs(u_hat), abs(v_hat))
    if abs(u_hat - 0.5 * (gamma - beta)) > 1e-12 * scale or abs(v_hat - 0.5 * (gamma + beta)) > 1e-12 * scale:
        raise AssertionError("field identities violated")
    x = y - 2 * math.log(a1) + A * A * t
    return FieldPoint(float(y), float(t), side, a1, a2, a3, inf.n, alpha, inf.alpha_alt,
                      beta, gamma, u_hat, v_hat, m_hat, x, zero.misfit, breakdown)


# ------------------------------------------------------------------ one instance


def _probe_points(count: int = 20, seed: int = 7):
    rng = np.random.default_rng(seed)
    re = rng.uniform(-3.0, 3.0, count)
    im = rng.uniform(0.05, 2.0, count)
    return re + 1j * im


def certificates(sol: rh.RHSolution, probes=None) -> dict:
    """det N, jump residual, solve residuals and the two symmetries of N."""
    lam = _probe_points() if probes is None else np.asarray(probes)
    N = rh.evaluate_N(sol, lam)
    N_mirror = rh.evaluate_N(sol, -lam)
    N_conj = rh.evaluate_N(sol, np.conj(lam))
    scale = max(1.0, float(np.abs(N).max()))
    sigma2 = np.abs(N - SIGMA_2 @ N_mirror @ SIGMA_2).max()
    schwarz = np.abs(N - SIGMA_1 @ np.conj(N_conj) @ SIGMA_1).max()
    inf = rh.expand_at_infinity(sol)
    n12, n21 = inf.n[0, 1], inf.n[1, 0]
    return {
        "det_defect": float(np.abs(np.linalg.det(N) - 1).max()),
        "jump_residual": rh.jump_residual(sol),
        "solve_residual": sol.residual,
        "solve_residual_full": sol.residual_full,
        "condition": sol.condition,
        "sigma2_symmetry": float(sigma2),
        "schwarz_symmetry": float(schwarz),
        "n_scale": scale,
        "imag_n12": float(abs(n12.imag)),
        "imag_n21": float(abs(n21.imag)),
        "abs_n12": float(abs(n12)),
        "abs_n21": float(abs(n21)),
        "alpha_gap": float(abs(inf.alpha_alt - inf.alpha)),
    }


@dataclass
class Instance:
    """Outcome of one (y, t, side) solve: a field point or a rejection."""

    y: float
    t: float
    side: str
    point: FieldPoint | None
    certs: dict
    status: str            # 'ok', 'breakdown' or 'rejected'
    reason: str = ""


def solve_point(table, grid: sg.ContourGrid, y: float, t: float, side: str = "right",
                zero_tol: float = 1e-6, cond_limit: float = 1e12, with_certificates: bool = True) -> Instance:
    try:
        jump = rh.build_jump(table, grid, y, t, side)
        sol = rh.solve_instance(jump, cond_limit=cond_limit)
        zero = rh.expand_at_zero(sol, tol=zero_tol)
    except NumericalError as exc:
        diag = {k: (v if isinstance(v, (int, float, str)) else repr(v)) for k, v in exc.diagnostics.items()}
        return Instance(float(y), float(t), side, None, diag, "rejected", str(exc))
    inf = rh.expand_at_infinity(sol)
    point = fields_from_expansions(zero, inf, grid.bg, side, y, t)
    certs = certificates(sol) if with_certificates else {"condition": sol.condition,
                                                         "solve_residual": sol.residual}
    certs["misfit"] = zero.misfit
    status = "breakdown" if point.breakdown else "ok"
    return Instance(float(y), float(t), side, point, certs, status)


# ------------------------------------------------------------------ lines


@dataclass
class FieldLine:
    t: float
    side: str
    points: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(p, name) for p in self.points], dtype=float)

    @property
    def y(self) -> np.ndarray:
        return self.column("y")

    @property
    def x(self) -> np.ndarray:
        return self.column("x")

    def __len__(self):
        return len(self.points)

    def to_csv_text(self) -> str:
        out = io.StringIO()
        out.write(",".join(FIELD_COLUMNS) + "\n")
        for p in self.points:
            out.write(",".join(format(float(v), ".17g") for v in p.row()) + "\n")
        return out.getvalue()

    @classmethod
    def from_csv_text(cls, text: str, t: float, side: str) -> "FieldLine":
        """Parse a line written by ``to_csv_text``; errors name the row number."""
        lines = text.splitlines()
        if not lines or tuple(lines[0].split(",")) != FIELD_COLUMNS:
            raise LineFormatError("row 1: header does not match the field-line columns")
        pts = []
        for k, raw in enumerate(lines[1:], start=2):
            if not raw.strip():
                continue
            parts = raw.split(",")
            if len(parts) != len(FIELD_COLUMNS):
                raise LineFormatError(f"row {k}: expected {len(FIELD_COLUMNS)} fields, got {len(parts)}")
            try:
                vals = dict(zip(FIELD_COLUMNS, map(float, parts)))
            except ValueError as exc:
                raise LineFormatError(f"row {k}: {exc}") from None
            alpha = vals["alpha"]
            pts.append(FieldPoint(vals["y"], t, side, vals["a1"], vals["a2"], vals["a3"],
                                  np.full((2, 2), np.nan), alpha, complex(np.nan), vals["beta"],
                                  vals["gamma"], vals["u_hat"], vals["v_hat"], vals["m_hat"],
                                  vals["x"], 0.0, not alpha < 0))
        return cls(t, side, pts)


def assemble_line(instances, t: float, side: str) -> FieldLine:
    """Accepted points in y order; the line stops at the first breakdown."""
    line = FieldLine(float(t), side)
    for inst in sorted(instances, key=lambda i: i.y):
        if inst.status == "rejected":
            line.flags.append({"y": inst.y, "flag": "rejected", "reason": inst.reason})
            continue
        if inst.status == "breakdown":
            line.flags.append({"y": inst.y, "flag": "breakdown"})
            break
        line.points.append(inst.point)
    return line


def compute_line(table, grid, ys, t: float, side: str = "right", **kw) -> tuple[FieldLine, list]:
    instances = [solve_point(table, grid, y, t, side, **kw) for y in ys]
    return assemble_line(instances, t, side), instances


def contiguous(line: FieldLine) -> FieldLine:
    """Longest run of points without rejected gaps (a map needs a connected window)."""
    if not line.flags:
        return line
    ys = line.y
    bad = sorted(f["y"] for f in line.flags)
    best, cur = [], []
    for p in line.points:
        if cur and any(cur[-1].y < b < p.y for b in bad):
            best = max(best, cur, key=len)
            cur = []
        cur.append(p)
    best = max(best, cur, key=len)
    return FieldLine(line.t, line.side, best, list(line.flags)) if len(best) < len(ys) else line


# ------------------------------------------------------------------ change of variables


def x_map(line: FieldLine, bg: BackgroundPair, side: str | None = None) -> dict:
    """x from the logarithmic formula and from integrating x_y = A / m-hat.

    The integral form is anchored at the end of the window that faces the
    line's own background (y_max on the right, y-tilde_min on the left): the
    tail beyond the window is not resolved by the line and is taken from the
    logarithmic form at that single point.  Quadrature error is estimated by
    Richardson comparison of Simpson on the full and the every-other-node grid.
    """
    side = side or line.side
    A = level(bg, side)
    y = line.y
    x_log = line.x
    integrand = A / line.column("m_hat")
    mono = bool(np.all(np.diff(x_log) > 0)) and bool(np.all(integrand > 0))
    out = {"x_log": x_log, "monotone": mono, "min_step": float(np.diff(x_log).min()) if len(y) > 1 else math.nan}
    if len(y) < 5:
        out.update(x_int=x_log.copy(), difference=0.0, quad_error=0.0)
        return out
    if side == "left":
        cum = cumulative_simpson(integrand, x=y, initial=0.0)
        x_int = x_log[0] + cum
        coarse = cumulative_simpson(integrand[::2], x=y[::2], initial=0.0)
        fine_on_coarse = cum[::2]
        anchor_tail = x_log[0] - y[0] - A * A * line.t
    else:
        rev = cumulative_simpson(integrand[::-1], x=-y[::-1], initial=0.0)[::-1]
        # rev[k] = int_{y_k}^{y_max} A/m
        x_int = x_log[-1] - rev
        sub = slice((len(y) - 1) % 2, None, 2)
        coarse = cumulative_simpson(integrand[sub][::-1], x=-y[sub][::-1], initial=0.0)[::-1]
        fine_on_coarse = rev[sub]
        anchor_tail = x_log[-1] - y[-1] - A * A * line.t
    quad = float(np.abs(fine_on_coarse - coarse).max() / 15.0)
    out.update(x_int=x_int, difference=float(np.abs(x_int - x_log).max()), quad_error=quad,
               anchor_tail=float(anchor_tail))
    return out


def _monotone_hermite(knots, values, slopes):
    """Cubic Hermite with exact slopes; falls back to PCHIP if it would not be monotone."""
    d = np.diff(values) / np.diff(knots)
    if np.all(d > 0) and np.all(slopes > 0):
        a = slopes[:-1] / d
        b = slopes[1:] / d
        if np.all(a * a + b * b <= 9.0):
            return CubicHermiteSpline(knots, values, slopes), "hermite"
    return PchipInterpolator(knots, values), "pchip"


@dataclass
class InverseMap:
    """y(x) and u(x) on one line.

    x(y) is interpolated and y(x) is its exact inverse.  u is interpolated in x
    directly, as a quintic Hermite using u_x = v-hat and u_xx = u-hat - m-hat.
    """

    line: FieldLine
    forward: object
    u_in_x: object
    kind: str

    @property
    def x_range(self):
        return float(self.line.x[0]), float(self.line.x[-1])

    def y_of_x(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        lo, hi = self.x_range
        if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
            raise ReconstructionError("x outside the line's window")
        ys = self.line.y
        idx = np.clip(np.searchsorted(self.line.x, x) - 1, 0, len(ys) - 2)
        out = np.empty_like(x)
        for i, (xx, k) in enumerate(zip(x, idx)):
            f = lambda s: float(self.forward(s)) - xx
            a, b = ys[k], ys[k + 1]
            fa, fb = f(a), f(b)
            if fa == 0:
                out[i] = a
            elif fb == 0:
                out[i] = b
            else:
                out[i] = brentq(f, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        return out

    def u_of_x(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.x_range
        if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
            raise ReconstructionError("x outside the line's window")
        return self.u_in_x(np.clip(x, lo, hi))

    def round_trip(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(np.abs(self.forward(self.y_of_x(x)) - x).max())


def invert_map(line: FieldLine, bg: BackgroundPair, side: str | None = None) -> InverseMap:
    side = side or line.side
    A = level(bg, side)
    if len(line) < 2:
        raise ReconstructionError("line too short to invert")
    y, x = line.y, line.x
    m = line.column("m_hat")
    if not (np.all(np.diff(x) > 0) and np.all(m > 0)):
        raise ReconstructionError("x(y) is not strictly increasing; line excluded")
    forward, kind = _monotone_hermite(y, x, A / m)
    u, v = line.column("u_hat"), line.column("v_hat")
    u_in_x = BPoly.from_derivatives(x, np.stack([u, v, u - m], axis=1))
    return InverseMap(line, forward, u_in_x, kind)


# ------------------------------------------------------------------ derivative stencils and residuals


STENCIL_OFFSETS = ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1))


def stencil_points(y: float, t: float, h_y: float, h_t: float):
    return [(y + i * h_y, t + j * h_t) for i, j in STENCIL_OFFSETS]


def residuals_at(stencil: dict, bg: BackgroundPair, side: str, h_y: float, h_t: float) -> dict:
    """Central-difference residuals at one point from its five-point stencil.

    ``stencil`` maps the offsets in ``STENCIL_OFFSETS`` to FieldPoints.
    """
    A = level(bg, side)
    c = stencil[(0, 0)]
    yp, ym = stencil[(1, 0)], stencil[(-1, 0)]
    tp, tm = stencil[(0, 1)], stencil[(0, -1)]

    def dy(name):
        return (getattr(yp, name) - getattr(ym, name)) / (2 * h_y)

    def dt(name):
        return (getattr(tp, name) - getattr(tm, name)) / (2 * h_t)

    inv_m_t = (1 / tp.m_hat - 1 / tm.m_hat) / (2 * h_t)
    u_y, v_y = dy("u_hat"), dy("v_hat")
    x_y = dy("x")
    a1_y = dy("a1")
    alpha_deriv = -(1 - 2 * a1_y / c.a1) / A
    return {
        "y": c.y, "t": c.t,
        "evolution": inv_m_t - 2 * c.v_hat,
        "v_definition": c.v_hat - u_y * c.m_hat / A,
        "m_definition": c.m_hat - c.u_hat + v_y * c.m_hat / A,
        "compat_t": dt("alpha") + c.beta + c.gamma,
        "compat_beta": dy("beta") - A * (c.alpha * c.beta - 1),
        "compat_gamma": dy("gamma") + A * (c.alpha * c.gamma + 1),
        "alpha_moment": c.alpha,
        "alpha_deriv": alpha_deriv,
        "alpha_gap": c.alpha - alpha_deriv,
        "x_y_fd": x_y,
        "x_y_field": A / c.m_hat,
        "x_y_rel": abs(x_y - A / c.m_hat) / (A / c.m_hat),
    }


RESIDUAL_KEYS = ("evolution", "v_definition", "m_definition", "compat_t", "compat_beta", "compat_gamma")


def residual_suite(field_at, samples, bg: BackgroundPair, side: str, h_y: float = 1e-2,
                   h_t: float = 1e-2, halvings: int = 1) -> dict:
    """Residual report at ``samples`` [(y, t)], for h and its successive halvings.

    ``field_at(y, t)`` returns a FieldPoint.  Orders are measured on the max
    over samples of each residual.
    """
    levels = []
    for k in range(halvings + 1):
        hy, ht = h_y / 2**k, h_t / 2**k
        rows = []
        for (y, t) in samples:
            pts = stencil_points(y, t, hy, ht)
            st = {off: field_at(*p) for off, p in zip(STENCIL_OFFSETS, pts)}
            rows.append(residuals_at(st, bg, side, hy, ht))
        levels.append({"h_y": hy, "h_t": ht, "rows": rows,
                       "max": {key: float(max(abs(r[key]) for r in rows)) for key in RESIDUAL_KEYS + ("alpha_gap", "x_y_rel")}})
    orders = {}
    for key in RESIDUAL_KEYS + ("alpha_gap",):
        seq = [lv["max"][key] for lv in levels]
        orders[key] = [math.log2(a / b) if b > 0 and a > 0 else math.inf for a, b in zip(seq, seq[1:])]
    return {"side": side, "levels": levels, "orders": orders}


def residual_suite_lines(lower: FieldLine, mid: FieldLine, upper: FieldLine, bg: BackgroundPair) -> dict:
    """Residuals on three time slices sharing one uniform y-grid."""
    side = mid.side
    h_t = 0.5 * (upper.t - lower.t)
    y = mid.y
    if not (np.allclose(lower.y, y) and np.allclose(upper.y, y)) or len(y) < 3:
        raise ReconstructionError("time slices must share a y-grid of at least three points")
    h_y = float(y[1] - y[0])
    rows = []
    for k in range(1, len(y) - 1):
        st = {(0, 0): mid.points[k], (1, 0): mid.points[k + 1], (-1, 0): mid.points[k - 1],
              (0, 1): upper.points[k], (0, -1): lower.points[k]}
        rows.append(residuals_at(st, bg, side, h_y, h_t))
    return {"side": side, "h_y": h_y, "h_t": h_t, "rows": rows,
            "max": {key: float(max(abs(r[key]) for r in rows)) for key in RESIDUAL_KEYS + ("alpha_gap",)}}


# ------------------------------------------------------------------ asymptotics and cross-checks


def plateau_check(line: FieldLine, bg: BackgroundPair, side: str | None = None) -> dict:
    """Distance to the line's own background at its far end, and the other end for reference."""
    side = side or line.side
    A = level(bg, side)
    if not line.points:
        return {"side": side, "t": line.t, "empty": True}
    near = line.points[-1] if side == "right" else line.points[0]
    far = line.points[0] if side == "right" else line.points[-1]
    other = bg.A1 if side == "right" else bg.A2
    return {
        "side": side, "t": line.t, "y_end": near.y,
        "a1_dev": abs(near.a1 - 1), "a2_dev": abs(near.a2 - A / 2), "a3_dev": abs(near.a3 - A / 2),
        "u_dev": abs(near.u_hat - A), "v_abs": abs(near.v_hat),
        "observed_other_end": {"y": far.y, "u_hat": far.u_hat, "target": other,
                               "u_dev": abs(far.u_hat - other)},
    }


def connection_constant(datum) -> float:
    """y - (A1/A2) y-tilde at equal x, from the initial datum.

    Both scales are fixed at x = t = 0 by their defining integrals, so the
    constant is -(1/A2) (int_0^inf (m0 - A2) + int_-inf^0 (m0 - A1)).
    """
    A2 = datum.bg.A2
    return float(datum.tail_integral(2, 0.0) - datum.tail_integral(1, 0.0)) / A2


def left_right_consistency(right: FieldLine, left: FieldLine, bg: BackgroundPair, datum=None) -> dict:
    """Compare u from the two pipelines at the right line's x values inside both windows."""
    inv_left = invert_map(left, bg, "left")
    lo, hi = inv_left.x_range
    xr = right.x
    keep = (xr >= lo) & (xr <= hi)
    if keep.sum() < 2:
        return {"t": right.t, "overlap": 0}
    x = xr[keep]
    u_right = right.column("u_hat")[keep]
    u_left = inv_left.u_of_x(x)
    y_right = right.y[keep]
    y_left = inv_left.y_of_x(x)
    slope, intercept = np.polyfit(y_left, y_right, 1)
    out = {
        "t": right.t, "overlap": int(keep.sum()), "x_window": (float(x[0]), float(x[-1])),
        "u_sup": float(np.abs(u_right - u_left).max()),
        "slope": float(slope), "slope_target": bg.A1 / bg.A2,
        "intercept": float(intercept),
        "fit_residual": float(np.abs(slope * y_left + intercept - y_right).max()),
        "interpolation": inv_left.kind,
    }
    if datum is not None:
        c = connection_constant(datum)
        out["intercept_target"] = c
        out["intercept_gap"] = abs(intercept - c)
    return out


def initial_condition_gap(line: FieldLine, datum, window: float | None = None) -> dict:
    """sup |u-hat(y, 0) - u0(x(y, 0))| over the line (optionally |x| <= window)."""
    x = line.x
    keep = np.ones_like(x, dtype=bool) if window is None else np.abs(x) <= window
    gap = np.abs(line.column("u_hat")[keep] - datum.u0(x[keep]))
    return {"sup": float(gap.max()), "points": int(keep.sum()), "x_window": window}
