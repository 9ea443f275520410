"""Product-integration weights for Cauchy integrals over mapped panels.

For a panel ``lam(u) = anchor + span * u**q`` and samples ``g_i = g(u_i)`` at
Gauss-Legendre points, we need weights ``W_i(lam0)`` with

    int_0^1 g(u) / (lam(u) - lam0) du  ~=  sum_i W_i(lam0) g_i,

exact when ``g`` is a polynomial of degree < n.  Partial fractions over the
``q`` roots of ``u**q = (lam0 - anchor) / span`` reduce this to integrals
``int_{-1}^{1} g(s) / (s - z) ds`` which are done with the monomial
recurrence near the panel and plain Gauss-Legendre far from it.
"""

from __future__ import annotations

import numpy as np


class IntervalRule:
    """Gauss-Legendre rule on [-1, 1] plus the near-field Cauchy machinery."""

    def __init__(self, n: int):
        self.n = n
        self.s, self.w = np.polynomial.legendre.leggauss(n)
        V = np.vander(self.s, n, increasing=True)
        self._VinvT = np.linalg.inv(V.T)
        # far-field threshold on the Bernstein ellipse parameter
        self.rho_far = max(10.0 ** (16.0 / (2 * n)), 1.8)

    def weights(self, z, side):
        """Rows W with int g(s)/(s-z) ds ~= W @ g(s_nodes).

        ``side`` (+1/-1) selects the boundary value for real z in (-1, 1);
        it is ignored elsewhere.
        """
        z = np.asarray(z, dtype=complex).ravel()
        side = np.broadcast_to(np.asarray(side), z.shape)
        rho = np.abs(z + np.sqrt(z - 1) * np.sqrt(z + 1))
        rho = np.maximum(rho, 1.0 / np.maximum(rho, 1e-300))
        far = rho > self.rho_far
        W = np.empty((z.size, self.n), dtype=complex)
        if np.any(far):
            W[far] = self.w[None, :] / (self.s[None, :] - z[far, None])
        near = ~far
        if np.any(near):
            zn = z[near]
            sn = side[near]
            on = (zn.imag == 0) & (np.abs(zn.real) < 1)
            if np.any(on & (sn == 0)):
                raise ValueError("boundary value requested without a side")
            x = zn.real
            with np.errstate(divide="ignore", invalid="ignore"):
                p0 = np.log(1 - zn) - np.log(-1 - zn)
                p0 = np.where(on, np.log(np.abs((1 - x) / np.where(on, 1 + x, 1.0))) + 1j * np.pi * sn, p0)
            P = np.empty((zn.size, self.n), dtype=complex)
            P[:, 0] = p0
            for k in range(1, self.n):
                P[:, k] = zn * P[:, k - 1] + (1 - (-1) ** k) / k
            W[near] = P @ self._VinvT.T
        return W


_RULES: dict[int, IntervalRule] = {}


def interval_rule(n: int) -> IntervalRule:
    if n not in _RULES:
        _RULES[n] = IntervalRule(n)
    return _RULES[n]


def panel_weights(anchor: float, span: float, q: int, n: int, lam0, side, offset=None):
    """Weights W (T, n) with int_0^1 g(u)/(lam(u)-lam0) du ~= W @ g_nodes.

    The nodes are Gauss-Legendre points on [0, 1] in increasing u.  ``side``
    matters only for real ``lam0`` lying on the panel.  Targets may be given
    as ``lam0 + offset`` with a small exact offset; near a graded anchor the
    offset carries digits that the rounded sum would lose.
    """
    rule = interval_rule(n)
    lam0 = np.asarray(lam0, dtype=complex).ravel()
    side = np.broadcast_to(np.asarray(side), lam0.shape)
    zeta = lam0 - anchor
    if offset is not None:
        zeta = zeta + np.asarray(offset, dtype=complex).ravel()
    zeta = zeta / span
    if np.any(zeta == 0):
        raise ValueError("Cauchy weight requested at a panel anchor (branch point)")
    # integrands on graded panels are u**m times a polynomial: the density has at
    # worst an inverse quarter-power blow-up while the speed vanishes like u**(q-1).
    # Building that factor into the rule removes the near-anchor cancellation and
    # the spurious -3/4 power null vector a plain polynomial rule would admit.
    m = max(q - 2, 0)
    u_nodes = 0.5 * (rule.s + 1)
    base = zeta ** (1.0 / q)
    W = np.zeros((lam0.size, n), dtype=complex)
    eff_side = side * np.sign(span)
    for k in range(q):
        uk = base * np.exp(2j * np.pi * k / q)
        if q > 1:
            # the real positive root carries the boundary side; others never lie on [0,1]
            uk = np.where((np.abs(uk.imag) < 1e-15 * np.abs(uk)) & (uk.real > 0), uk.real + 0j, uk)
        ck = uk ** (m + 1) / (q * zeta)
        sk = 2 * uk - 1
        W += ck[:, None] * rule.weights(sk, eff_side)
    return W / (span * u_nodes ** m)
