"""Branch roots, gauge matrices, phases and the discretized real contour.

Conventions
-----------
``l_j(lam) = sqrt(lam**2 - 1/A_j**2)`` has its cut on ``[-1/A_j, 1/A_j]`` and
behaves like ``lam`` at infinity.  Points on the real axis carry a side tag:
``"plus"`` (limit from the upper half plane), ``"minus"`` or ``"off"``.

The contour is the real line split at the four branch points ``+-1/A1`` and
``+-1/A2`` and truncated at ``+-R``.  Every panel is a map
``lam(u) = anchor + span * u**power`` of ``u in [0, 1]`` sampled at
Gauss-Legendre points.  Panels touching a branch point use ``power > 1`` so
that quarter-order endpoint behaviour becomes polynomial in ``u``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SIGMA1 = "Sigma1"
SIGMA0 = "Sigma0"
GAMMA2 = "Gamma2"
SEGMENTS = (SIGMA1, SIGMA0, GAMMA2)
SIDES = ("plus", "minus", "off")


class DomainError(ValueError):
    """Evaluation exactly at a branch point or on a forbidden side."""


class UsageError(ValueError):
    """Side tag inconsistent with the location of the point."""


class PoleError(ValueError):
    """Phase requested at lam = 0 with t > 0."""


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class BackgroundPair:
    """Left and right asymptotic levels.

    ``A1 == A2`` (a constant background) is accepted only with
    ``allow_equal=True``; it is used for degenerate control runs.
    """

    A1: float
    A2: float
    allow_equal: bool = False

    def __post_init__(self):
        if not (self.A1 > 0 and self.A2 > 0):
            raise ConfigurationError(f"background levels must be positive, got {self.A1}, {self.A2}")
        if self.allow_equal and self.A1 == self.A2:
            return
        if not self.A1 < self.A2:
            raise ConfigurationError(f"need A1 < A2, got A1={self.A1}, A2={self.A2}")

    @property
    def degenerate(self) -> bool:
        return self.A1 == self.A2

    def level(self, j: int) -> float:
        if j == 1:
            return self.A1
        if j == 2:
            return self.A2
        raise UsageError(f"index j must be 1 or 2, got {j}")

    @property
    def inner(self) -> float:
        """Branch point 1/A2 (the smaller one)."""
        return 1.0 / self.A2

    @property
    def outer(self) -> float:
        return 1.0 / self.A1

    def segment_of(self, lam: float) -> str:
        a = abs(lam)
        if a == self.inner or a == self.outer:
            raise DomainError(f"lam={lam} is a branch point")
        if a > self.outer:
            return SIGMA1
        if a > self.inner:
            return SIGMA0
        return GAMMA2


def _side_sign(side: str) -> int:
    if side == "plus":
        return 1
    if side == "minus":
        return -1
    if side == "off":
        return 0
    raise UsageError(f"unknown side tag {side!r}")


def _root(lam, a: float, side: str = "off"):
    """sqrt(lam^2 - a^2) with cut [-a, a], vectorized."""
    # adding 0.0 turns a signed zero imaginary part into +0.0, so that
    # real points off the cut never fall onto the lower branch of np.sqrt
    lam = np.asarray(lam, dtype=complex) + 0.0
    sgn = _side_sign(side)
    if np.any((lam == a) | (lam == -a)):
        raise DomainError("branch root evaluated at a branch point")
    on_cut = (lam.imag == 0) & (np.abs(lam.real) < a)
    if np.any(on_cut) and sgn == 0:
        raise UsageError("side='off' requested for a point on the cut")
    val = np.sqrt(lam - a) * np.sqrt(lam + a)
    if np.any(on_cut):
        x = lam.real
        inside = np.sqrt(np.where(on_cut, a * a - x * x, 1.0))
        val = np.where(on_cut, sgn * 1j * inside, val)
    return val


def branch_root(j: int, lam, side: str = "off", bg: BackgroundPair | None = None):
    """l_j(lam) with boundary values from the requested side on the cut."""
    if bg is None:
        raise UsageError("a BackgroundPair is required")
    return _root(lam, 1.0 / bg.level(j), side)


def sqrt_cut_positive(z):
    """Square root with the cut on [0, inf) and sqrt(-1) = i."""
    return 1j * np.sqrt(-np.asarray(z, dtype=complex))


def gauge_matrix(j: int, lam, side: str = "off", bg: BackgroundPair | None = None):
    """Return (H_j, H_j^{-1}); arrays of shape (..., 2, 2)."""
    A = bg.level(j)
    lam = np.asarray(lam, dtype=complex)
    lj = branch_root(j, lam, side, bg)
    q = lam * A / (1.0 - 1j * A * lj)
    pref = np.sqrt(0.5) * sqrt_cut_positive(1.0 / (1j * A * lj) - 1.0)
    one = np.ones_like(q)
    H = pref[..., None, None] * np.stack([np.stack([q, -one], -1), np.stack([-one, q], -1)], -2)
    Hinv = pref[..., None, None] * np.stack([np.stack([q, one], -1), np.stack([one, q], -1)], -2)
    return H, Hinv


def phase(j: int, y: float, t: float, lam, side: str = "off", bg: BackgroundPair | None = None):
    """(i A_j l_j / 2) (y - 2 t / lam^2)."""
    lam = np.asarray(lam, dtype=complex)
    if t < 0:
        raise UsageError("t must be non-negative")
    if t > 0 and np.any(lam == 0):
        raise PoleError("phase has a pole at lam = 0 for t > 0")
    A = bg.level(j)
    lj = branch_root(j, lam, side, bg)
    if t == 0:
        return 0.5j * A * lj * y
    return 0.5j * A * lj * (y - 2.0 * t / lam**2)


# ---------------------------------------------------------------- contour grid


@dataclass(frozen=True)
class Panel:
    anchor: float      # lam(0)
    span: float        # signed length; lam(1) = anchor + span
    power: int         # 1 for plain panels, >1 clusters nodes at the anchor
    segment: str

    @property
    def lo(self) -> float:
        return min(self.anchor, self.anchor + self.span)

    @property
    def hi(self) -> float:
        return max(self.anchor, self.anchor + self.span)

    def point(self, u):
        return self.anchor + self.span * np.asarray(u) ** self.power

    def speed(self, u):
        """|d lam / d u|."""
        return abs(self.span) * self.power * np.asarray(u) ** (self.power - 1)


@dataclass(frozen=True, eq=False)
class ContourGrid:
    bg: BackgroundPair
    R: float
    order: int
    grading: int
    panels: tuple
    nodes: np.ndarray = field(repr=False)      # sorted real node positions
    weights: np.ndarray = field(repr=False)    # positive quadrature weights
    panel_id: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)          # panel parameter of each node
    segments: np.ndarray = field(repr=False)   # segment label per node
    build_args: tuple = ()                     # keyword arguments of build_contour

    @property
    def size(self) -> int:
        return len(self.nodes)

    def panel_slices(self):
        """Index arrays of the nodes belonging to each panel (in panel u order)."""
        out = []
        for p in range(len(self.panels)):
            idx = np.flatnonzero(self.panel_id == p)
            out.append(idx[np.argsort(self.u[idx])])
        return out

    def node_frames(self):
        """Each node as (panel anchor, exact offset from it)."""
        anchors = np.array([self.panels[p].anchor for p in self.panel_id], dtype=complex)
        offsets = np.array([self.panels[p].span * self.u[i] ** self.panels[p].power
                            for i, p in enumerate(self.panel_id)], dtype=complex)
        return anchors, offsets

    def midpoints(self):
        """Panel centres in the panel parameter; disjoint from the nodes."""
        pts = np.array([pan.point(0.5) for pan in self.panels])
        labels = np.array([pan.segment for pan in self.panels])
        order = np.argsort(pts)
        return pts[order], labels[order], order

    def metadata(self) -> dict:
        return {
            "A1": self.bg.A1, "A2": self.bg.A2, "R": self.R, "order": self.order,
            "grading": self.grading, "panels": len(self.panels), "nodes": self.size,
            "build_args": dict(self.build_args),
        }

    def digest(self) -> str:
        import hashlib
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.nodes).tobytes())
        h.update(np.ascontiguousarray(self.weights).tobytes())
        return h.hexdigest()[:16]


def gauss_legendre01(order: int):
    s, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (s + 1.0), 0.5 * w


def _graded_end(p: float, direction: int, length: float, levels: int, grading: int, segment: str):
    """Panels between p and p + direction*length, dyadically graded toward p."""
    panels = []
    edges = [length * 0.5**k for k in range(levels + 1)]
    first = edges[-1]
    panels.append(Panel(p, direction * first, grading, segment))
    for k in range(levels, 0, -1):
        a, b = edges[k], edges[k - 1]
        panels.append(Panel(p + direction * a, direction * (b - a), 1, segment))
    return panels


def _uniform(a: float, b: float, width: float, segment: str, avoid_zero: bool = False):
    n = max(1, int(np.ceil((b - a) / width - 1e-12)))
    if avoid_zero and a < 0 < b:
        # keep lam = 0 strictly inside a panel
        while np.any(np.isclose(a + (b - a) * np.arange(1, n) / n, 0.0, atol=1e-14)):
            n += 1
    cuts = a + (b - a) * np.arange(n + 1) / n
    return [Panel(cuts[k], cuts[k + 1] - cuts[k], 1, segment) for k in range(n)]


def build_contour(bg: BackgroundPair, R: float = 20.0, panels_per_unit: int = 2,
                  grading: int = 4, order: int = 16, levels: int = 5,
                  far_width: float | None = 1.0, far_from: float | None = 8.0) -> ContourGrid:
    """Composite Gauss-Legendre discretization of the real line.

    ``panels_per_unit`` sets the base panel width ``1/panels_per_unit``; every
    branch point gets ``levels`` dyadic panels plus an endpoint panel mapped with
    exponent ``grading``.  Beyond ``|lam| = far_from`` panels may widen to
    ``far_width`` (used where the data are negligible).
    """
    if panels_per_unit < 2:
        raise ConfigurationError("panels_per_unit must be >= 2")
    if not R > bg.outer:
        raise ConfigurationError(f"R={R} must exceed 1/A1={bg.outer}")
    if grading < 1 or int(grading) != grading:
        raise ConfigurationError("grading must be a positive integer")
    if order < 2:
        raise ConfigurationError("order must be >= 2")
    grading = int(grading)
    H = 1.0 / panels_per_unit
    a, b = bg.inner, bg.outer
    panels: list[Panel] = []

    def graded_segment(lo, hi, segment, avoid_zero=False):
        L = hi - lo
        half = 0.5 * L
        end_len = min(half, H)
        out = _graded_end(lo, +1, end_len, levels, grading, segment)
        out += _graded_end(hi, -1, end_len, levels, grading, segment)
        if hi - end_len > lo + end_len + 1e-14:
            out += _uniform(lo + end_len, hi - end_len, H, segment, avoid_zero)
        return out

    def outer_segment(p, sign):
        # from branch point p (=+-1/A1) outwards to sign*R
        L = R - abs(p)
        end_len = min(0.5 * L, H)
        out = _graded_end(p, sign, end_len, levels, grading, SIGMA1)
        start = abs(p) + end_len
        stop_fine = R if far_from is None else min(R, max(start, far_from))
        fine = _uniform(start, stop_fine, H, SIGMA1) if stop_fine > start + 1e-14 else []
        coarse = []
        if stop_fine < R - 1e-14:
            coarse = _uniform(stop_fine, R, far_width or H, SIGMA1)
        for pan in fine + coarse:
            if sign > 0:
                out.append(pan)
            else:
                out.append(Panel(-(pan.anchor + pan.span), pan.span, 1, SIGMA1))
        return out

    panels += outer_segment(-b, -1)
    if b > a:
        panels += graded_segment(-b, -a, SIGMA0)
    panels += graded_segment(-a, a, GAMMA2, avoid_zero=True)
    if b > a:
        panels += graded_segment(a, b, SIGMA0)
    panels += outer_segment(b, +1)
    panels.sort(key=lambda p: p.lo)

    u0, w0 = gauss_legendre01(order)
    lam, wt, pid, uu, seg = [], [], [], [], []
    for k, pan in enumerate(panels):
        lam.append(pan.point(u0))
        wt.append(w0 * pan.speed(u0))
        pid.append(np.full(order, k))
        uu.append(u0)
        seg.append(np.full(order, pan.segment, dtype=object))
    lam = np.concatenate(lam)
    order_idx = np.argsort(lam, kind="stable")
    grid = ContourGrid(
        bg=bg, R=float(R), order=order, grading=grading, panels=tuple(panels),
        nodes=lam[order_idx], weights=np.concatenate(wt)[order_idx],
        panel_id=np.concatenate(pid)[order_idx], u=np.concatenate(uu)[order_idx],
        segments=np.concatenate(seg)[order_idx].astype(str),
        build_args=(("R", float(R)), ("panels_per_unit", int(panels_per_unit)), ("grading", grading),
                    ("order", int(order)), ("levels", int(levels)),
                    ("far_width", None if far_width is None else float(far_width)),
                    ("far_from", None if far_from is None else float(far_from))),
    )
    for p in (a, b):
        for s in (p, -p):
            if np.any(grid.nodes == s):
                raise ConfigurationError("a node coincides with a branch point")
    if np.any(grid.nodes == 0.0):
        raise ConfigurationError("lam = 0 must be interior to a panel, not a node")
    return grid


def node_sides(grid: ContourGrid) -> np.ndarray:
    """All contour nodes are evaluated as boundary values from the + side."""
    return np.full(grid.size, "plus")


def locate(grid: ContourGrid, lam) -> tuple[np.ndarray, np.ndarray]:
    """Panel index and panel parameter u for real contour points."""
    lam = np.asarray(lam, dtype=float)
    los = np.array([p.lo for p in grid.panels])
    k = np.searchsorted(los, lam, side="right") - 1
    if np.any(k < 0) or np.any(lam > grid.panels[-1].hi):
        raise DomainError("point outside the truncated contour")
    u = np.empty_like(lam)
    for i, (kk, x) in enumerate(zip(k, lam)):
        p = grid.panels[kk]
        u[i] = ((x - p.anchor) / p.span) ** (1.0 / p.power)
    return k, u


def _bary_weights(x):
    n = len(x)
    w = np.ones(n)
    for j in range(n):
        w[j] = 1.0 / np.prod(x[j] - np.delete(x, j))
    return w


def panel_interpolate(grid: ContourGrid, values, lam):
    """Evaluate the per-panel polynomial (in u) interpolant of node values."""
    values = np.asarray(values)
    k, u = locate(grid, lam)
    slices = grid.panel_slices()
    u_nodes, _ = gauss_legendre01(grid.order)
    bw = _bary_weights(u_nodes)
    out = np.empty((len(k),) + values.shape[1:], dtype=values.dtype)
    for i, (kk, uu) in enumerate(zip(k, u)):
        idx = slices[kk]
        d = uu - u_nodes
        hit = np.flatnonzero(d == 0)
        if hit.size:
            out[i] = values[idx[hit[0]]]
            continue
        c = bw / d
        out[i] = np.tensordot(c, values[idx], axes=(0, 0)) / c.sum()
    return out
