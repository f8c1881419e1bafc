"""Cell problems and effective models for coupled linear + p-power fluxes.

The cell problem: find a zero-mean periodic corrector pi with
  <a(y)(xi + grad pi) . grad w> + <b(y)|xi + grad pi|^{p-2}(xi + grad pi) . grad w> = 0
for all periodic test fields w (divergence-free w and pi in vector mode).
Solvers: damped Newton on the convex cell energy (the exact merit function),
a 1D flux-constancy closed form as an independent oracle, effective-flux
tabulation with the linear/power split, and convex density homogenization.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (InvalidDensityError, InvalidOperatorError,
                     NonConvergenceError, TableRangeError)
from .oscillator_fields import (KIND_QUASI, KIND_SLOW, OscillatoryField,
                                mean_value)

XI_TABLE_DEFAULT = tuple(np.linspace(-2.0, 2.0, 9))
NEWTON_DELTA = 1e-8          # |lam|^{p-2} regularization in iterates only
_ARMIJO_C = 1e-4
_STEP_FLOOR = 2.0 ** -30


def _coeff_values(coeff, pts, tau=None):
    if coeff is None:
        return None
    if isinstance(coeff, OscillatoryField):
        if coeff.time_factor is not None:
            return np.asarray(coeff.evaluate(pts, tau), float)
        return np.asarray(coeff.evaluate(pts), float)
    if tau is None:
        return np.asarray(coeff(pts), float)
    return np.asarray(coeff(pts, tau), float)


class MonotoneCellOperator:
    """Coupled flux lam -> a(y) lam + b(y)|lam|^{p-2} lam on a periodic cell.

    a and b are scalar-valued (a acts as a(y) * Identity); either may be
    None to disable that part, but not both.  Validation probes coercivity
    of a, the declared bounds on b, and requires p >= 3 when the power part
    is active (the flux map is then C^1).
    """

    def __init__(self, a=None, b=None, p: float = 3.0, nu0: float | None = None,
                 c1: float | None = None, dimension: int = 1,
                 mode: str = "scalar", periods=None,
                 tau_period: float | None = None, name: str = ""):
        if a is None and b is None:
            raise InvalidOperatorError("operator needs a linear part, "
                                       "a power part, or both")
        if mode not in ("scalar", "vector"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode == "vector" and dimension != 2:
            raise ValueError("vector mode is implemented for dimension 2")
        if b is not None and p < 3.0:
            raise ValueError("power part requires p >= 3")
        self.a = a
        self.b = b
        self.p = float(p)
        self.dimension = int(dimension)
        self.mode = mode
        self.tau_period = tau_period
        self.name = name
        if periods is None:
            periods = self._periods_from_fields()
        self.periods = tuple(float(q) for q in periods)
        if len(self.periods) != self.dimension:
            raise ValueError("periods/dimension mismatch")
        self.nu0, self.c1 = self._probe(nu0, c1)

    def _periods_from_fields(self):
        for coeff in (self.a, self.b):
            if isinstance(coeff, OscillatoryField) \
                    and coeff.geometry.periods:
                return coeff.geometry.periods
        return (1.0,) * self.dimension

    def _probe_points(self, n: int = 257):
        rng = np.random.default_rng(7)
        axes = [np.linspace(0, per, n, endpoint=False)
                for per in self.periods]
        if self.dimension == 1:
            grid = axes[0]
        else:
            grid = np.stack([ax[rng.integers(0, n, 4 * n)] for ax in axes],
                            axis=-1)
        taus = [None]
        if self.tau_period is not None:
            taus = list(np.linspace(0, self.tau_period, 17))
        return grid, taus

    def _probe(self, nu0, c1):
        pts, taus = self._probe_points()
        if self.a is not None:
            amin = min(float(np.min(_coeff_values(self.a, pts, t)))
                       for t in taus)
            if amin <= 0:
                raise InvalidOperatorError(
                    f"linear coefficient not coercive: min {amin:.3e}")
            if nu0 is not None and amin < nu0 - 1e-12:
                raise InvalidOperatorError(
                    f"declared coercivity {nu0} exceeds probed minimum "
                    f"{amin:.6e}")
            nu0 = amin if nu0 is None else nu0
        if self.b is not None:
            bvals = [(float(np.min(_coeff_values(self.b, pts, t))),
                      float(np.max(_coeff_values(self.b, pts, t))))
                     for t in taus]
            bmin = min(v[0] for v in bvals)
            bmax = max(v[1] for v in bvals)
            if bmin <= 0:
                raise InvalidOperatorError(
                    f"power coefficient must be positive: min {bmin:.3e}")
            if c1 is not None and (bmin < c1 - 1e-12
                                   or bmax > 1.0 / c1 + 1e-12):
                raise InvalidOperatorError(
                    f"power coefficient leaves [{c1}, {1 / c1}]: "
                    f"range [{bmin:.6e}, {bmax:.6e}]")
            c1 = min(bmin, 1.0 / bmax) if c1 is None else c1
        return nu0, c1

    def coeffs_at(self, pts, tau=None):
        a = _coeff_values(self.a, pts, tau)
        b = _coeff_values(self.b, pts, tau)
        m = np.shape(np.atleast_1d(pts if self.dimension == 1
                                   else pts[..., 0]))[0]
        if a is None:
            a = np.zeros(m)
        else:
            a = np.broadcast_to(a, (m,)).astype(float)
        if b is None:
            b = np.zeros(m)
        else:
            b = np.broadcast_to(b, (m,)).astype(float)
        return a, b


@dataclass
class CellSolution:
    """Corrector and cell gradient for one macroscopic gradient xi."""

    xi: np.ndarray
    pi: np.ndarray
    gradient: np.ndarray
    residual: float
    iterations: int
    mean_flux_linear: np.ndarray
    mean_flux_power: np.ndarray
    info: dict = dc_field(default_factory=dict)

    @property
    def effective_flux(self) -> np.ndarray:
        return self.mean_flux_linear + self.mean_flux_power


def _power_flux(b, lam_sq, p, delta):
    # (|lam|^2 + delta^2)^{(p-2)/2}, the regularized magnitude factor
    return b * (lam_sq + delta * delta) ** (0.5 * (p - 2.0))


# ---------------------------------------------------------------------------
# 1D scalar solver (faces at element midpoints)

def _solve_scalar_1d(op: MonotoneCellOperator, xi: float, n: int, tol: float,
                     tau=None, pi0=None, max_iter: int = 60):
    P = op.periods[0]
    h = P / n
    y_mid = (np.arange(n) + 0.5) * h
    a_e, b_e = op.coeffs_at(y_mid, tau)
    pi = np.zeros(n) if pi0 is None else np.array(pi0, float)

    def slopes(v):
        return xi + (np.roll(v, -1) - v) / h

    def energy(v, delta):
        s = slopes(v)
        e = 0.5 * a_e * s * s
        if op.b is not None:
            e = e + b_e / op.p * (s * s + delta * delta) ** (0.5 * op.p)
        return h * float(np.sum(e))

    def grad_flux(v, delta):
        s = slopes(v)
        sigma = a_e * s
        if op.b is not None:
            sigma = sigma + _power_flux(b_e, s * s, op.p, delta) * s
        g = np.roll(sigma, 1) - sigma      # dE/dpi_i, factor h cancels
        return g, sigma, s

    it = 0
    for it in range(1, max_iter + 1):
        g, sigma, s = grad_flux(pi, NEWTON_DELTA)
        if np.sqrt(np.mean(g * g)) / h <= 0.1 * tol:
            break
        dsig = a_e.copy()
        if op.b is not None:
            fac = _power_flux(b_e, s * s, op.p, NEWTON_DELTA)
            dsig = dsig + fac + (op.p - 2.0) * s * s * _power_flux(
                b_e, s * s, op.p - 2.0, NEWTON_DELTA)
        main = (dsig + np.roll(dsig, 1)) / h
        off = -dsig / h
        H = sp.diags([main, off[:-1], off[:-1], [off[-1]], [off[-1]]],
                     [0, 1, -1, n - 1, -(n - 1)], format="csc")
        keep = np.arange(1, n)
        delta_pi = np.zeros(n)
        delta_pi[keep] = spla.spsolve(H[keep][:, keep], -g[keep])
        e0 = energy(pi, NEWTON_DELTA)
        slope = float(np.dot(g, delta_pi))
        t = 1.0
        while t > _STEP_FLOOR:
            if energy(pi + t * delta_pi, NEWTON_DELTA) \
                    <= e0 + _ARMIJO_C * t * slope:
                break
            t *= 0.5
        if t <= _STEP_FLOOR:
            raise NonConvergenceError(
                "line search stalled in the 1D cell solve",
                {"grad_rms": float(np.sqrt(np.mean(g * g)) / h),
                 "iteration": it})
        pi = pi + t * delta_pi
    g, sigma, s = grad_flux(pi, 0.0)       # unregularized residual
    resid = float(np.sqrt(np.mean(g * g)) / h)
    if resid > tol:
        raise NonConvergenceError(
            "1D cell solve did not reach tolerance",
            {"residual": resid, "tol": tol, "iterations": it})
    pi = pi - np.mean(pi)
    m_lin = float(np.mean(a_e * s)) if op.a is not None else 0.0
    m_pow = float(np.mean(_power_flux(b_e, s * s, op.p, 0.0) * s)) \
        if op.b is not None else 0.0
    return CellSolution(
        xi=np.array([xi]), pi=pi, gradient=s, residual=resid, iterations=it,
        mean_flux_linear=np.array([m_lin]), mean_flux_power=np.array([m_pow]),
        info={"grid": n, "flux_spread": float(np.ptp(sigma))})


# ---------------------------------------------------------------------------
# 2D scalar solver (Q1 elements, 2x2 Gauss)

def _q1_tables(h: float):
    g = 0.5 - 0.5 / math.sqrt(3.0)
    pts = [(g, g), (1 - g, g), (g, 1 - g), (1 - g, 1 - g)]
    Bx, By, loc = [], [], []
    for (u, v) in pts:
        Bx.append(np.array([-(1 - v), (1 - v), -v, v]) / h)
        By.append(np.array([-(1 - u), -u, (1 - u), u]) / h)
        loc.append((u * h, v * h))
    return Bx, By, loc


def _solve_scalar_2d(op: MonotoneCellOperator, xi, n: int, tol: float,
                     tau=None, pi0=None, max_iter: int = 60):
    P1, P2 = op.periods
    if abs(P1 - P2) > 1e-14:
        raise ValueError("2D cell solver expects a square cell")
    h = P1 / n
    Bx, By, loc = _q1_tables(h)
    wq = h * h / 4.0
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    base = (ii * h).ravel(), (jj * h).ravel()
    corners = np.stack([
        (ii * n + jj).ravel(),
        (((ii + 1) % n) * n + jj).ravel(),
        (ii * n + (jj + 1) % n).ravel(),
        (((ii + 1) % n) * n + (jj + 1) % n).ravel()], axis=1)
    a_q, b_q = [], []
    for (du, dv) in loc:
        pts = np.stack([base[0] + du, base[1] + dv], axis=-1)
        aa, bb = op.coeffs_at(pts, tau)
        a_q.append(aa)
        b_q.append(bb)
    xi = np.asarray(xi, float)
    ne = n * n
    pi = np.zeros(ne) if pi0 is None else np.array(pi0, float)

    def gauss_grads(v):
        vc = v[corners]                     # (ne, 4)
        return [(vc @ Bx[q] + xi[0], vc @ By[q] + xi[1]) for q in range(4)]

    def energy(v, delta):
        tot = 0.0
        for q, (gx, gy) in enumerate(gauss_grads(v)):
            s2 = gx * gx + gy * gy
            e = 0.5 * a_q[q] * s2
            if op.b is not None:
                e = e + b_q[q] / op.p * (s2 + delta * delta) ** (0.5 * op.p)
            tot += wq * float(np.sum(e))
        return tot

    def gradient(v, delta):
        g = np.zeros(ne)
        fluxes = []
        for q, (gx, gy) in enumerate(gauss_grads(v)):
            s2 = gx * gx + gy * gy
            coef = a_q[q].copy()
            if op.b is not None:
                coef = coef + _power_flux(b_q[q], s2, op.p, delta)
            f1, f2 = coef * gx, coef * gy
            fluxes.append((gx, gy, s2, f1, f2))
            for k in range(4):
                np.add.at(g, corners[:, k],
                          wq * (f1 * Bx[q][k] + f2 * By[q][k]))
        return g, fluxes

    def hessian(fluxes, delta):
        rows, cols, vals = [], [], []
        for q, (gx, gy, s2, _, _) in enumerate(fluxes):
            iso = a_q[q].copy()
            aniso = np.zeros_like(iso)
            if op.b is not None:
                iso = iso + _power_flux(b_q[q], s2, op.p, delta)
                aniso = (op.p - 2.0) * _power_flux(b_q[q], s2, op.p - 2.0,
                                                   delta)
            d11 = iso + aniso * gx * gx
            d22 = iso + aniso * gy * gy
            d12 = aniso * gx * gy
            for k in range(4):
                for m in range(4):
                    val = wq * (Bx[q][k] * (d11 * Bx[q][m] + d12 * By[q][m])
                                + By[q][k] * (d12 * Bx[q][m]
                                              + d22 * By[q][m]))
                    rows.append(corners[:, k])
                    cols.append(corners[:, m])
                    vals.append(val)
        return sp.coo_matrix(
            (np.concatenate(vals),
             (np.concatenate(rows), np.concatenate(cols))),
            shape=(ne, ne)).tocsc()

    it = 0
    for it in range(1, max_iter + 1):
        g, fluxes = gradient(pi, NEWTON_DELTA)
        if np.sqrt(np.mean(g * g)) / (h * h) <= 0.1 * tol:
            break
        H = hessian(fluxes, NEWTON_DELTA)
        keep = np.arange(1, ne)
        step = np.zeros(ne)
        step[keep] = spla.spsolve(H[keep][:, keep], -g[keep])
        e0 = energy(pi, NEWTON_DELTA)
        slope = float(np.dot(g, step))
        t = 1.0
        while t > _STEP_FLOOR:
            if energy(pi + t * step, NEWTON_DELTA) \
                    <= e0 + _ARMIJO_C * t * slope:
                break
            t *= 0.5
        if t <= _STEP_FLOOR:
            raise NonConvergenceError(
                "line search stalled in the 2D cell solve",
                {"grad_rms": float(np.sqrt(np.mean(g * g)) / (h * h)),
                 "iteration": it})
        pi = pi + t * step
    g, fluxes = gradient(pi, 0.0)
    resid = float(np.sqrt(np.mean(g * g)) / (h * h))
    if resid > tol:
        raise NonConvergenceError(
            "2D cell solve did not reach tolerance",
            {"residual": resid, "tol": tol, "iterations": it})
    pi = pi - np.mean(pi)
    vol = P1 * P2
    m_lin = np.zeros(2)
    m_pow = np.zeros(2)
    grads = np.zeros((4, ne, 2))
    for q, (gx, gy, s2, _, _) in enumerate(fluxes):
        grads[q, :, 0], grads[q, :, 1] = gx, gy
        if op.a is not None:
            m_lin += wq * np.array([np.sum(a_q[q] * gx),
                                    np.sum(a_q[q] * gy)]) / vol
        if op.b is not None:
            fac = _power_flux(b_q[q], s2, op.p, 0.0)
            m_pow += wq * np.array([np.sum(fac * gx),
                                    np.sum(fac * gy)]) / vol
    return CellSolution(
        xi=xi, pi=pi.reshape(n, n), gradient=grads.mean(axis=0).reshape(
            n, n, 2), residual=resid, iterations=it,
        mean_flux_linear=m_lin, mean_flux_power=m_pow, info={"grid": n})


# ---------------------------------------------------------------------------
# 2D vector solver (MAC staggering, divergence-free, saddle Newton)

def _shift(n: int, axis_step):
    data = np.ones(n)
    rows = np.arange(n)
    return sp.csr_matrix((data, (rows, axis_step)), shape=(n, n))


def _mac_operators(n: int, h: float):
    idx = np.arange(n * n).reshape(n, n)
    east = np.roll(idx, -1, axis=0).ravel()
    north = np.roll(idx, -1, axis=1).ravel()
    I = sp.eye(n * n, format="csr")
    Sx = _shift(n * n, east)
    Sy = _shift(n * n, north)
    # x-face values u[i,j] sit at (i h, (j+1/2) h); cell centers at
    # ((i+1/2) h, (j+1/2) h); corners at (i h, j h)
    D1c_u = (Sx - I) / h      # d(u)/dx at centers
    D2c_v = (Sy - I) / h      # d(v)/dy at centers
    D2k_u = (I - _shift(n * n, np.roll(idx, 1, axis=1).ravel())) / h
    D1k_v = (I - _shift(n * n, np.roll(idx, 1, axis=0).ravel())) / h
    A_k2c = 0.25 * (I + Sx + Sy + _shift(
        n * n, np.roll(np.roll(idx, -1, 0), -1, 1).ravel()))
    return D1c_u, D2c_v, D2k_u, D1k_v, A_k2c


def _solve_vector_2d(op: MonotoneCellOperator, xi, n: int, tol: float,
                     tau=None, max_iter: int = 60):
    xi = np.asarray(xi, float).reshape(2, 2)
    if abs(np.trace(xi)) > 1e-12:
        raise ValueError("vector-mode macroscopic gradients must be "
                         "trace-free (divergence-free fields)")
    P = op.periods[0]
    if abs(op.periods[1] - P) > 1e-14:
        raise ValueError("vector cell solver expects a square cell")
    h = P / n
    ne = n * n
    D1c, D2c, D2k, D1k, A_k2c = _mac_operators(n, h)
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    centers = np.stack([((ii + 0.5) * h).ravel(), ((jj + 0.5) * h).ravel()],
                       axis=-1)
    korners = np.stack([(ii * h).ravel(), (jj * h).ravel()], axis=-1)
    a_c, b_c = op.coeffs_at(centers, tau)
    a_k, _ = op.coeffs_at(korners, tau)
    w = h * h
    vol = P * P

    def comps(u, v):
        return (D1c @ u + xi[0, 0], D2c @ v + xi[1, 1],
                D2k @ u + xi[0, 1], D1k @ v + xi[1, 0])

    def magnitude_sq(l11, l22, l12, l21):
        return l11 ** 2 + l22 ** 2 + A_k2c @ (l12 ** 2) + A_k2c @ (l21 ** 2)

    def energy(u, v, delta):
        l11, l22, l12, l21 = comps(u, v)
        e = 0.5 * w * (np.sum(a_c * (l11 ** 2 + l22 ** 2))
                       + np.sum(a_k * (l12 ** 2 + l21 ** 2)))
        if op.b is not None:
            s2 = magnitude_sq(l11, l22, l12, l21)
            e += w * np.sum(b_c / op.p
                            * (s2 + delta * delta) ** (0.5 * op.p))
        return float(e)

    def gradient(u, v, delta):
        l11, l22, l12, l21 = comps(u, v)
        f11, f22 = a_c * l11, a_c * l22
        f12, f21 = a_k * l12, a_k * l21
        if op.b is not None:
            s2 = magnitude_sq(l11, l22, l12, l21)
            fac = _power_flux(b_c, s2, op.p, delta)
            f11 = f11 + fac * l11
            f22 = f22 + fac * l22
            f12 = f12 + (A_k2c.T @ fac) * l12
            f21 = f21 + (A_k2c.T @ fac) * l21
        gu = w * (D1c.T @ f11 + D2k.T @ f12)
        gv = w * (D2c.T @ f22 + D1k.T @ f21)
        return gu, gv, (l11, l22, l12, l21)

    def hessian(delta, lams):
        l11, l22, l12, l21 = lams
        iso_c, iso_k = a_c.copy(), a_k.copy()
        if op.b is not None:
            s2 = magnitude_sq(l11, l22, l12, l21)
            fac = _power_flux(b_c, s2, op.p, delta)
            iso_c = iso_c + fac
            iso_k = iso_k + A_k2c.T @ fac
            # cross terms of the p-part Hessian are dropped: the retained
            # block-diagonal part of a convex energy is positive definite,
            # so the damped step stays a descent direction
        Huu = w * (D1c.T @ sp.diags(iso_c) @ D1c
                   + D2k.T @ sp.diags(iso_k) @ D2k)
        Hvv = w * (D2c.T @ sp.diags(iso_c) @ D2c
                   + D1k.T @ sp.diags(iso_k) @ D1k)
        return Huu, Hvv

    u = np.zeros(ne)
    v = np.zeros(ne)
    B1 = D1c
    B2 = D2c
    it = 0
    for it in range(1, max_iter + 1):
        gu, gv, lams = gradient(u, v, NEWTON_DELTA)
        div = B1 @ u + B2 @ v
        gnorm = math.sqrt((np.sum(gu ** 2) + np.sum(gv ** 2)) / (2 * ne)) \
            / (h * h)
        if gnorm <= 0.1 * tol and float(np.max(np.abs(div))) <= 0.1 * tol \
                and it > 1:
            break
        Huu, Hvv = hessian(NEWTON_DELTA, lams)
        K = sp.bmat([[Huu, None, w * B1.T],
                     [None, Hvv, w * B2.T],
                     [w * B1, w * B2, None]], format="csc")
        rhs = np.concatenate([-gu, -gv, -w * div])
        keep = np.ones(3 * ne, bool)
        keep[[0, ne, 2 * ne]] = False
        sol = np.zeros(3 * ne)
        sol[keep] = spla.spsolve(K[keep][:, keep], rhs[keep])
        du, dv = sol[:ne], sol[ne:2 * ne]
        e0 = energy(u, v, NEWTON_DELTA)
        slope = float(np.dot(gu, du) + np.dot(gv, dv))
        t = 1.0
        while t > _STEP_FLOOR:
            if energy(u + t * du, v + t * dv, NEWTON_DELTA) \
                    <= e0 + _ARMIJO_C * t * slope + 1e-15:
                break
            t *= 0.5
        if t <= _STEP_FLOOR:
            raise NonConvergenceError(
                "line search stalled in the vector cell solve",
                {"grad_rms": gnorm, "iteration": it})
        u = u + t * du
        v = v + t * dv
    gu, gv, lams = gradient(u, v, 0.0)
    div = B1 @ u + B2 @ v
    # reduced residual: remove the component carried by the pressure
    q, *_ = spla.lsqr(sp.vstack([w * B1.T, w * B2.T]).tocsc(),
                      np.concatenate([gu, gv]), atol=1e-14, btol=1e-14)[:1]
    ru = gu - w * (B1.T @ q)
    rv = gv - w * (B2.T @ q)
    resid = math.sqrt((np.sum(ru ** 2) + np.sum(rv ** 2)) / (2 * ne)) \
        / (h * h)
    div_norm = float(np.max(np.abs(div)))
    if resid > tol or div_norm > max(tol, 1e-10):
        raise NonConvergenceError(
            "vector cell solve did not reach tolerance",
            {"residual": resid, "divergence": div_norm, "tol": tol,
             "iterations": it})
    u = u - np.mean(u)
    v = v - np.mean(v)
    l11, l22, l12, l21 = lams
    m_lin = np.zeros((2, 2))
    m_pow = np.zeros((2, 2))
    if op.a is not None:
        m_lin = w * np.array([[np.sum(a_c * l11), np.sum(a_k * l12)],
                              [np.sum(a_k * l21), np.sum(a_c * l22)]]) / vol
    if op.b is not None:
        s2 = magnitude_sq(l11, l22, l12, l21)
        fac = _power_flux(b_c, s2, op.p, 0.0)
        fac_k = A_k2c.T @ fac
        m_pow = w * np.array([[np.sum(fac * l11), np.sum(fac_k * l12)],
                              [np.sum(fac_k * l21), np.sum(fac * l22)]]) \
            / vol
    grad_field = np.stack([c.reshape(n, n) for c in lams], axis=-1)
    return CellSolution(
        xi=xi, pi=np.stack([u.reshape(n, n), v.reshape(n, n)]),
        gradient=grad_field, residual=resid, iterations=it,
        mean_flux_linear=m_lin, mean_flux_power=m_pow,
        info={"grid": n, "divergence_max": div_norm})


def _tau_nodes(op: MonotoneCellOperator, n_tau: int):
    if op.tau_period is None:
        return [None]
    return list((np.arange(n_tau) + 0.5) * (op.tau_period / n_tau))


def solve_cell_problem(op: MonotoneCellOperator, xi, grid: int = 64,
                       tol: float = 1e-9, n_tau: int = 16) -> CellSolution:
    """Damped-Newton cell solve; time-dependent operators solve per tau
    slice on a midpoint grid and average the mean fluxes."""
    if grid < 16:
        raise ValueError("cell grid must have at least 16 points per axis")
    taus = _tau_nodes(op, n_tau)
    sols = []
    for tau in taus:
        if op.mode == "vector":
            sols.append(_solve_vector_2d(op, xi, grid, tol, tau))
        elif op.dimension == 1:
            sols.append(_solve_scalar_1d(op, float(np.asarray(xi).ravel()[0]),
                                         grid, tol, tau))
        else:
            sols.append(_solve_scalar_2d(op, xi, grid, tol, tau))
    if len(sols) == 1:
        return sols[0]
    sol = sols[0]
    return CellSolution(
        xi=sol.xi, pi=np.stack([s.pi for s in sols]),
        gradient=np.stack([s.gradient for s in sols]),
        residual=max(s.residual for s in sols),
        iterations=max(s.iterations for s in sols),
        mean_flux_linear=np.mean([s.mean_flux_linear for s in sols], axis=0),
        mean_flux_power=np.mean([s.mean_flux_power for s in sols], axis=0),
        info={"tau_slices": len(sols),
              "tau_spread": float(np.max(np.abs(
                  np.array([s.effective_flux for s in sols])
                  - sol.effective_flux)))})


def solve_cell_1d_closed_form(op: MonotoneCellOperator, xi: float,
                              n_quad: int = 4096, tau=None) -> CellSolution:
    """Independent 1D oracle via flux constancy.

    The pointwise slope s(y; c) solves a(y)s + b(y)|s|^{p-2}s = c; the flux
    level c is pinned by <s(.; c)> = xi with safeguarded bisection (the map
    c -> <s> is strictly increasing).  Periodic smooth coefficients make the
    midpoint cell averages spectrally accurate.
    """
    if op.dimension != 1 or op.mode != "scalar":
        raise ValueError("closed form applies to 1D scalar operators")
    xi = float(np.asarray(xi).ravel()[0])
    P = op.periods[0]
    h = P / n_quad
    y = (np.arange(n_quad) + 0.5) * h
    a, b = op.coeffs_at(y, tau)

    def slope_for(c):
        # vectorized bisection on a s + b|s|^{p-2}s = c per point
        scale = np.ones_like(y)
        if op.a is not None:
            scale = np.maximum(scale, np.abs(c) / np.maximum(a, 1e-300))
        if op.b is not None:
            scale = np.maximum(scale, (np.abs(c) / np.maximum(b, 1e-300))
                               ** (1.0 / (op.p - 1.0)))
        lo, hi = -scale - 1.0, scale + 1.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            val = a * mid + b * np.abs(mid) ** (op.p - 2.0) * mid
            high = val > c
            hi = np.where(high, mid, hi)
            lo = np.where(high, lo, mid)
        return 0.5 * (lo + hi)

    def mean_slope(c):
        return float(np.mean(slope_for(c)))

    c0 = float(np.mean(a) * xi
               + np.mean(b) * abs(xi) ** (op.p - 2.0) * xi)
    width = 1.0 + abs(c0)
    c_lo, c_hi = c0 - width, c0 + width
    for _ in range(200):
        if mean_slope(c_lo) <= xi:
            break
        c_lo -= width
        width *= 2.0
    width = 1.0 + abs(c0)
    for _ in range(200):
        if mean_slope(c_hi) >= xi:
            break
        c_hi += width
        width *= 2.0
    for _ in range(100):
        c_mid = 0.5 * (c_lo + c_hi)
        if mean_slope(c_mid) < xi:
            c_lo = c_mid
        else:
            c_hi = c_mid
    c = 0.5 * (c_lo + c_hi)
    s = slope_for(c)
    pi_prime = s - xi
    pi = np.concatenate([[0.0], np.cumsum(pi_prime[:-1])]) * h
    pi = pi - np.mean(pi)
    m_lin = float(np.mean(a * s)) if op.a is not None else 0.0
    m_pow = float(np.mean(b * np.abs(s) ** (op.p - 2.0) * s)) \
        if op.b is not None else 0.0
    return CellSolution(
        xi=np.array([xi]), pi=pi, gradient=s,
        residual=abs(mean_slope(c) - xi), iterations=0,
        mean_flux_linear=np.array([m_lin]), mean_flux_power=np.array([m_pow]),
        info={"flux_constant": c, "n_quad": n_quad})


# ---------------------------------------------------------------------------
# effective model

@dataclass
class EffectiveModel:
    """Tabulated effective flux with its linear/power split."""

    mode: str
    dimension: int
    p: float
    xi_samples: np.ndarray
    m_values: np.ndarray
    M_values: np.ndarray
    interpolation: str = "multilinear"
    correctors: np.ndarray | None = None
    density_values: np.ndarray | None = None
    monotonicity_margin: float = 0.0
    info: dict = dc_field(default_factory=dict)

    @property
    def A_values(self) -> np.ndarray:
        return self.m_values + self.M_values

    def flux(self, xi):
        xi = np.atleast_1d(np.asarray(xi, float))
        flat = self.xi_samples.reshape(self.xi_samples.shape[0], -1)
        lo = flat.min(axis=0)
        hi = flat.max(axis=0)
        target = xi.ravel()
        if np.any(target < lo - 1e-12) or np.any(target > hi + 1e-12):
            raise TableRangeError(xi)
        if self.dimension == 1 and flat.shape[1] == 1:
            vals = self.A_values.reshape(len(flat), -1)
            out = np.array([np.interp(target[0], flat[:, 0], vals[:, k])
                            for k in range(vals.shape[1])])
            return out.reshape(self.A_values.shape[1:])
        from scipy.interpolate import RegularGridInterpolator
        axes = self.info["grid_axes"]
        shape = tuple(len(ax) for ax in axes)
        vals = self.A_values.reshape(shape + self.A_values.shape[1:])
        out = np.empty(self.A_values.shape[1:])
        flatout = out.reshape(-1)
        flatvals = vals.reshape(shape + (-1,))
        for k in range(flatout.size):
            itp = RegularGridInterpolator(axes, flatvals[..., k])
            flatout[k] = itp(target)[0]
        return out

    def check_monotone(self) -> float:
        flat_xi = self.xi_samples.reshape(len(self.xi_samples), -1)
        flat_A = self.A_values.reshape(len(self.xi_samples), -1)
        worst = np.inf
        for i in range(len(flat_xi)):
            dA = flat_A - flat_A[i]
            dxi = flat_xi - flat_xi[i]
            worst = min(worst, float(np.min(np.sum(dA * dxi, axis=1))))
        return worst

    def to_json(self) -> dict:
        return {"mode": self.mode, "dimension": self.dimension, "p": self.p,
                "interpolation": self.interpolation,
                "xi_samples": self.xi_samples.tolist(),
                "m_values": self.m_values.tolist(),
                "M_values": self.M_values.tolist(),
                "A_values": self.A_values.tolist(),
                "monotonicity_margin": self.monotonicity_margin,
                "density_values": None if self.density_values is None
                else self.density_values.tolist()}

    def save(self, prefix: str):
        with open(prefix + ".json", "w") as fh:
            json.dump(self.to_json(), fh, indent=1)
        if self.correctors is not None:
            arr = np.ascontiguousarray(self.correctors, dtype="<f8")
            with open(prefix + ".bin", "wb") as fh:
                fh.write(b"HMGB")
                fh.write(np.array([arr.ndim], dtype="<i8").tobytes())
                fh.write(np.array(arr.shape, dtype="<i8").tobytes())
                fh.write(arr.tobytes())

    @classmethod
    def load(cls, prefix: str) -> "EffectiveModel":
        with open(prefix + ".json") as fh:
            data = json.load(fh)
        correctors = None
        try:
            with open(prefix + ".bin", "rb") as fh:
                blob = fh.read()
            assert blob[:4] == b"HMGB"
            ndim = int(np.frombuffer(blob, "<i8", 1, 4)[0])
            shape = tuple(np.frombuffer(blob, "<i8", ndim, 12))
            correctors = np.frombuffer(
                blob, "<f8", offset=12 + 8 * ndim).reshape(shape).copy()
        except FileNotFoundError:
            pass
        return cls(mode=data["mode"], dimension=data["dimension"],
                   p=data["p"],
                   xi_samples=np.array(data["xi_samples"]),
                   m_values=np.array(data["m_values"]),
                   M_values=np.array(data["M_values"]),
                   interpolation=data["interpolation"],
                   correctors=correctors,
                   density_values=None if data["density_values"] is None
                   else np.array(data["density_values"]),
                   monotonicity_margin=data["monotonicity_margin"])


def _default_xi_samples(op: MonotoneCellOperator):
    base = np.asarray(XI_TABLE_DEFAULT)
    if op.mode == "vector":
        # trace-free basis scaled over the table range
        shear = [np.array([[0.0, t], [0.0, 0.0]]) for t in base]
        shear += [np.array([[0.0, 0.0], [t, 0.0]]) for t in base if t != 0]
        return np.array(shear), None
    if op.dimension == 1:
        return base.reshape(-1, 1), (base,)
    g1, g2 = np.meshgrid(base, base, indexing="ij")
    return np.stack([g1.ravel(), g2.ravel()], axis=-1), (base, base)


def effective_coefficients(op: MonotoneCellOperator, xi_samples=None,
                           grid: int = 64, tol: float = 1e-9,
                           keep_correctors: bool = False) -> EffectiveModel:
    """Tabulate m(xi), M(xi) and the combined flux over a xi sample set.

    Purely linear operators (b None) are solved once per basis direction
    and extended exactly by linearity.
    """
    axes = None
    if xi_samples is None:
        xi_samples, axes = _default_xi_samples(op)
    xi_samples = np.asarray(xi_samples, float)
    if xi_samples.ndim == 1:
        xi_samples = xi_samples.reshape(-1, 1)
    flat = xi_samples.reshape(len(xi_samples), -1)

    if op.b is None:
        if op.mode == "vector":
            # Frobenius-orthogonal trace-free directions; coordinates are
            # <xi, B_k> / |B_k|^2
            basis = np.array([[0.0, 1.0, 0.0, 0.0],
                              [0.0, 0.0, 1.0, 0.0],
                              [1.0, 0.0, 0.0, -1.0]])
            coords = flat @ basis.T / np.sum(basis * basis, axis=1)
        else:
            basis = np.eye(flat.shape[1])
            coords = flat
        cols_m = []
        correctors = []
        for e in basis:
            sol = solve_cell_problem(op, e.reshape(xi_samples.shape[1:]),
                                     grid, tol)
            cols_m.append(sol.mean_flux_linear.ravel())
            correctors.append(sol.pi)
        A = np.stack(cols_m, axis=1)
        m_vals = (coords @ A.T).reshape(xi_samples.shape)
        M_vals = np.zeros_like(m_vals)
        pis = np.stack(correctors) if keep_correctors else None
        info = {"grid_axes": axes, "linear_matrix": A.tolist()}
    else:
        m_list, M_list, pis_list = [], [], []
        for xi in xi_samples:
            sol = solve_cell_problem(op, xi, grid, tol)
            m_list.append(sol.mean_flux_linear)
            M_list.append(sol.mean_flux_power)
            if keep_correctors:
                pis_list.append(sol.pi)
        m_vals = np.stack(m_list)
        M_vals = np.stack(M_list)
        pis = np.stack(pis_list) if keep_correctors else None
        info = {"grid_axes": axes}

    model = EffectiveModel(mode=op.mode, dimension=op.dimension, p=op.p,
                           xi_samples=xi_samples, m_values=m_vals,
                           M_values=M_vals, correctors=pis, info=info)
    model.monotonicity_margin = model.check_monotone()
    return model


# ---------------------------------------------------------------------------
# convex density homogenization

def _is_quadratic_density(f) -> bool:
    return isinstance(f, tuple) and len(f) == 2 and f[0] == "quadratic"


def _probe_convexity(f, x: float, rng_seed: int = 11):
    rng = np.random.default_rng(rng_seed)
    for _ in range(40):
        y = rng.uniform(0, 1)
        l1 = rng.uniform(-3, 3)
        l2 = rng.uniform(-3, 3)
        mid = f(x, y, 0.5 * (l1 + l2))
        avg = 0.5 * (f(x, y, l1) + f(x, y, l2))
        if mid > avg + 1e-10:
            raise InvalidDensityError(
                f"density fails the midpoint convexity probe at y={y:.4f}")


def homogenized_density(f, x: float, xi: float, grid: int = 512,
                        tol: float = 1e-10, max_iter: int = 2000) -> dict:
    """Per-point relaxed density: inf over zero-mean periodic correctors w
    of the cell average of f(x, y, xi + w').

    f is either a callable f(x, y, lam) convex in lam (periodic unit cell,
    minimized by damped Newton with finite-difference curvature), or a
    pair ("quadratic", c_field) meaning f = c(y) lam^2 / 2, reduced exactly
    to the harmonic mean of c, including expanding-window means for
    slow-oscillation coefficient fields.
    """
    if _is_quadratic_density(f):
        c_field = f[1]
        kind = c_field.geometry.kind
        if kind in (KIND_SLOW, KIND_QUASI):
            est = mean_value(c_field, method="expanding-window", r0=1e9,
                             _transform=lambda v: 1.0 / v)
        else:
            est = mean_value(c_field, method="cell-quadrature",
                             _transform=lambda v: 1.0 / v)
        harm = 1.0 / est.value
        return {"value": 0.5 * harm * xi * xi, "corrector": None,
                "method": "harmonic-mean", "mean_estimate": est,
                "iterations": 0}

    _probe_convexity(f, x)
    n = grid
    h = 1.0 / n
    y_mid = (np.arange(n) + 0.5) * h
    fd = 1e-5

    def obj(w):
        s = xi + (np.roll(w, -1) - w) / h
        return h * float(np.sum(f(x, y_mid, s)))

    def grad_curv(w):
        s = xi + (np.roll(w, -1) - w) / h
        fp = f(x, y_mid, s + fd)
        fm = f(x, y_mid, s - fd)
        f0 = f(x, y_mid, s)
        df = (fp - fm) / (2 * fd)
        ddf = np.maximum((fp - 2 * f0 + fm) / (fd * fd), 1e-10)
        return np.roll(df, 1) - df, ddf

    w = np.zeros(n)
    it = 0
    gn = np.inf
    for it in range(1, max_iter + 1):
        g, ddf = grad_curv(w)
        gn = float(np.sqrt(np.mean(g * g))) / h
        if gn <= tol * max(1.0, abs(xi)):
            break
        main = (ddf + np.roll(ddf, 1)) / h
        off = -ddf / h
        H = sp.diags([main, off[:-1], off[:-1], [off[-1]], [off[-1]]],
                     [0, 1, -1, n - 1, -(n - 1)], format="csc")
        keep = np.arange(1, n)
        d = np.zeros(n)
        d[keep] = spla.spsolve(H[keep][:, keep], -g[keep])
        e0 = obj(w)
        slope = float(np.dot(g, d))
        t = 1.0
        while t > _STEP_FLOOR:
            if obj(w + t * d) <= e0 + _ARMIJO_C * t * slope:
                break
            t *= 0.5
        if t <= _STEP_FLOOR:
            break
        w = w + t * d
        # FD-gradient noise keeps gn from reaching very tight tolerances;
        # stop once the energy stops moving.
        if e0 - obj(w) <= 1e-15 * (1.0 + abs(e0)):
            g, _ = grad_curv(w)
            gn = float(np.sqrt(np.mean(g * g))) / h
            break
    w = w - np.mean(w)
    return {"value": obj(w), "corrector": w, "method": "newton",
            "iterations": it, "grad_norm": gn}
