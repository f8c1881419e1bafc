"""Direct eps-scale solvers, homogenized solvers, and convergence studies.

Three problem families share one discrete stack:
  - convex energy minimization min_v int f(x, x/eps, Dv) - <load, v> on P1
    meshes (uniform or graded), Dirichlet boundary;
  - scalar parabolic problems d_t u = div(flux(x/eps, t/eps2, Du)) + f on
    (0,1) with zero boundary, implicit Euler, damped Newton per step;
  - the vector model on the periodic unit torus: MAC staggered velocities,
    implicit viscous step, explicit skew-symmetric convection, pressure
    projection to discrete incompressibility, optional multiplicative noise.

Homogenized counterparts run the same stepping with the effective flux of an
EffectiveModel table, so eps-trajectories and limit trajectories are compared
on identical grids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .correctors import (EffectiveModel, MonotoneCellOperator, NEWTON_DELTA,
                         _mac_operators)
from .errors import (NonConvergenceError, TableRangeError,
                     UnsupportedOperationError)
from .oscillator_fields import OscillatoryField

MODES = ("elliptic-min", "parabolic-scalar", "parabolic-vector", "spde")
DEFAULT_NORM_CAP = 1e6
_ARMIJO_C = 1e-4
_STEP_FLOOR = 2.0 ** -30


# ---------------------------------------------------------------------------
# Wiener paths

@dataclass
class WienerPath:
    """Increments of an m-dimensional standard Wiener process on a uniform
    time grid; reproducible from the seed."""

    seed: object
    t: np.ndarray
    dW: np.ndarray

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def n_steps(self) -> int:
        return self.dW.shape[0]

    @property
    def m(self) -> int:
        return self.dW.shape[1]

    @classmethod
    def generate(cls, seed, T: float, dt: float, m: int = 1) -> "WienerPath":
        n = _step_count(T, dt)
        rng = np.random.default_rng(seed)
        dW = rng.standard_normal((n, m)) * math.sqrt(dt)
        return cls(seed=seed, t=np.linspace(0.0, T, n + 1), dW=dW)

    def coarsen(self) -> "WienerPath":
        """Sum adjacent increments: the same path sampled at 2*dt."""
        if self.n_steps % 2:
            raise ValueError("coarsening needs an even number of steps")
        dW = self.dW[0::2] + self.dW[1::2]
        return WienerPath(seed=self.seed, t=self.t[::2], dW=dW)


def _step_count(T: float, dt: float) -> int:
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"time step {dt} does not divide the horizon {T}")
    return n


# ---------------------------------------------------------------------------
# solution fields

@dataclass
class SolutionField:
    """Discrete solution with cached norms.

    kinds: "static-1d" (values on nodes), "trajectory-1d" (time x nodes),
    "trajectory-2d-vector" (time x component x n x n on a MAC torus grid).
    """

    kind: str
    x: np.ndarray
    t: np.ndarray | None
    values: np.ndarray
    p: float = 2.0
    norms: dict = dc_field(default_factory=dict)
    info: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, float)
        self.values = np.asarray(self.values, float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("solution contains non-finite entries")
        if not self.norms:
            self.norms = self.recompute_norms()

    def recompute_norms(self) -> dict:
        if self.kind == "static-1d":
            l2 = _p1_l2(self.x, self.values)
            h1s = _grad_sq(self.x, self.values)
            vp = _grad_p(self.x, self.values, self.p)
            return {"l2": l2, "h1": math.sqrt(l2 * l2 + h1s),
                    "V_p": vp ** (1.0 / self.p)}
        if self.kind == "trajectory-1d":
            h = float(self.x[1] - self.x[0])
            dt = float(self.t[1] - self.t[0])
            return _trajectory_norms_1d(self.values, h, dt, self.p)
        if self.kind == "trajectory-2d-vector":
            h = float(self.x[1] - self.x[0])
            dt = float(self.t[1] - self.t[0])
            return _trajectory_norms_mac(self.values, h, dt, self.p)
        raise ValueError(f"unknown solution kind {self.kind!r}")

    def l2_distance(self, other: "SolutionField") -> float:
        """Discrete L2 (static) or L2(Q_T) (trajectory) distance on the
        shared grid."""
        if self.kind != other.kind or self.values.shape != other.values.shape:
            raise ValueError("solutions live on different grids")
        diff = self.values - other.values
        if self.kind == "static-1d":
            return _p1_l2(self.x, diff)
        dt = float(self.t[1] - self.t[0])
        wt = _trapezoid_weights(diff.shape[0]) * dt
        if self.kind == "trajectory-1d":
            h = float(self.x[1] - self.x[0])
            slice_sq = h * np.sum(diff ** 2, axis=1)
        else:
            h = float(self.x[1] - self.x[0])
            slice_sq = h * h * np.sum(diff ** 2, axis=(1, 2, 3))
        return math.sqrt(float(np.sum(wt * slice_sq)))


def _trapezoid_weights(n: int) -> np.ndarray:
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return w


def _p1_l2(nodes, v) -> float:
    he = np.diff(nodes)
    a, b = v[:-1], v[1:]
    return math.sqrt(float(np.sum(he * (a * a + a * b + b * b) / 3.0)))


def _grad_sq(nodes, v) -> float:
    he = np.diff(nodes)
    s = np.diff(v) / he
    return float(np.sum(he * s * s))


def _grad_p(nodes, v, p) -> float:
    he = np.diff(nodes)
    s = np.diff(v) / he
    return float(np.sum(he * np.abs(s) ** p))


def _trajectory_norms_1d(values, h, dt, p) -> dict:
    l2 = np.sqrt(h * np.sum(values ** 2, axis=1))
    s = np.diff(values, axis=1) / h
    h1 = l2 ** 2 + h * np.sum(s * s, axis=1)
    vp = h * np.sum(np.abs(s) ** p, axis=1)
    wt = _trapezoid_weights(values.shape[0]) * dt
    return {"sup_l2": float(np.max(l2)),
            "int_h1_sq": float(np.sum(wt * h1)),
            "int_V_p": float(np.sum(wt * vp))}


def _mac_gradients(u, v, h):
    g11 = (np.roll(u, -1, axis=0) - u) / h
    g22 = (np.roll(v, -1, axis=1) - v) / h
    g12 = (u - np.roll(u, 1, axis=1)) / h
    g21 = (v - np.roll(v, 1, axis=0)) / h
    return g11, g22, g12, g21


def _trajectory_norms_mac(values, h, dt, p) -> dict:
    n_t = values.shape[0]
    l2 = np.empty(n_t)
    h1 = np.empty(n_t)
    vp = np.empty(n_t)
    for k in range(n_t):
        u, v = values[k, 0], values[k, 1]
        l2[k] = math.sqrt(h * h * float(np.sum(u * u + v * v)))
        g11, g22, g12, g21 = _mac_gradients(u, v, h)
        gsq = g11 ** 2 + g22 ** 2 + g12 ** 2 + g21 ** 2
        h1[k] = l2[k] ** 2 + h * h * float(np.sum(gsq))
        mag = g11 ** 2 + g22 ** 2 \
            + 0.25 * sum(np.roll(np.roll(g12 ** 2 + g21 ** 2, sx, 0), sy, 1)
                         for sx in (0, -1) for sy in (0, -1))
        vp[k] = h * h * float(np.sum(mag ** (0.5 * p)))
    wt = _trapezoid_weights(n_t) * dt
    return {"sup_l2": float(np.max(l2)),
            "int_h1_sq": float(np.sum(wt * h1)),
            "int_V_p": float(np.sum(wt * vp))}


# ---------------------------------------------------------------------------
# noise and configuration

@dataclass
class NoiseSpec:
    """Diffusion map g(y, tau, u) -> (n_points, m[, batch]) with a declared
    linear-growth constant."""

    m: int
    g: object
    lipschitz: float = 0.0
    label: str = ""

    @classmethod
    def additive(cls, sigma: float, m: int = 1) -> "NoiseSpec":
        def g(y, tau, u):
            return np.full((np.shape(y)[0], m), sigma)
        return cls(m=m, g=g, lipschitz=0.0, label=f"additive({sigma})")

    @classmethod
    def linear(cls, sigma_of_y, lipschitz: float | None = None) -> "NoiseSpec":
        """Single-mode multiplicative noise g = sigma(y) * u."""
        def g(y, tau, u):
            s = np.asarray(sigma_of_y(np.asarray(y)), float)
            u = np.asarray(u, float)
            if u.ndim == 1:
                return (s * u)[:, None]
            return (s[:, None] * u)[:, None, :]
        lip = float(lipschitz) if lipschitz is not None else float("nan")
        return cls(m=1, g=g, lipschitz=lip, label="linear")


def _is_time_dependent(op: MonotoneCellOperator) -> bool:
    if op.tau_period is not None:
        return True
    for c in (op.a, op.b):
        if isinstance(c, OscillatoryField) and c.time_factor is not None:
            return True
    return False


@dataclass
class EpsProblemConfig:
    """One eps-scale problem instance.

    h defaults to eps/8 (the resolution bound) for parabolic runs and
    min(eps/8, eps^1.5) for elliptic minimization, where refining below the
    bound keeps the energy-gap decay visible.  dt <= eps2/4 is enforced only
    when the operator actually oscillates in time.  The incompressibility
    projection runs exactly when the state is vector-valued.
    """

    mode: str
    eps: float
    operator: MonotoneCellOperator | None = None
    density: object = None
    h: float | None = None
    mesh: object = None
    T: float = 0.0
    dt: float | None = None
    forcing: object = None
    u0: object = None
    eps2: float | None = None
    noise: NoiseSpec | None = None
    norm_cap: float = DEFAULT_NORM_CAP
    name: str = ""

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.mode == "elliptic-min":
            if self.density is None:
                raise ValueError("elliptic-min needs a density")
            if self.h is None:
                self.h = _elliptic_mesh_width(self.eps)
            return
        if self.operator is None:
            raise ValueError(f"{self.mode} needs an operator")
        if self.mode == "parabolic-scalar" and self.operator.mode != "scalar":
            raise ValueError("parabolic-scalar needs a scalar operator")
        if self.mode == "parabolic-vector" and self.operator.mode != "vector":
            raise ValueError("parabolic-vector needs a vector operator")
        if self.noise is not None and self.mode != "spde":
            raise ValueError("noise is only meaningful in spde mode")
        if self.h is None:
            self.h = self.eps / 8.0
        if self.h > self.eps / 8.0 + 1e-12:
            raise ValueError(
                f"mesh width {self.h} violates the resolution bound eps/8 "
                f"= {self.eps / 8.0}")
        if not (self.T > 0 and self.dt and self.dt > 0):
            raise ValueError("parabolic runs need T > 0 and dt > 0")
        _step_count(self.T, self.dt)
        if _is_time_dependent(self.operator) \
                and self.dt > self.eps_time / 4.0 + 1e-12:
            raise ValueError(
                f"dt {self.dt} does not resolve the time oscillation "
                f"(needs dt <= {self.eps_time / 4.0})")

    @property
    def eps_time(self) -> float:
        return self.eps if self.eps2 is None else self.eps2

    @property
    def n(self) -> int:
        return int(round(1.0 / self.h))

    @property
    def n_steps(self) -> int:
        return _step_count(self.T, self.dt)

    def vector_state(self) -> bool:
        return self.operator is not None and self.operator.mode == "vector"


# ---------------------------------------------------------------------------
# P1 convex minimization

_GAUSS4_X = np.array([-0.8611363115940526, -0.3399810435848563,
                      0.3399810435848563, 0.8611363115940526])
_GAUSS4_W = np.array([0.3478548451374538, 0.6521451548625461,
                      0.6521451548625461, 0.3478548451374538])


def _elliptic_mesh_width(eps: float) -> float:
    # h/eps = min(1/8, sqrt(eps/8)): meets the resolution bound and keeps
    # the O((h/eps)^2) discrete energy error decaying with eps
    return eps * min(0.125, math.sqrt(eps / 8.0))


def _resolve_mesh(mesh, h) -> np.ndarray:
    if mesh is None:
        n = max(8, int(round(1.0 / h)))
        return np.linspace(0.0, 1.0, n + 1)
    if np.ndim(mesh) == 0:
        return np.linspace(0.0, 1.0, int(mesh) + 1)
    nodes = np.asarray(mesh, float)
    if nodes.ndim != 1 or len(nodes) < 3 or np.any(np.diff(nodes) <= 0) \
            or abs(nodes[0]) > 1e-14 or abs(nodes[-1] - 1.0) > 1e-14:
        raise ValueError("mesh must be increasing nodes spanning [0, 1]")
    return nodes


def phase_graded_mesh(eps_cell: float, alpha: float, per_turn: int = 64,
                      h_max: float = 1.0 / 64.0) -> np.ndarray:
    """Nodes on [0,1] with per_turn elements per local oscillation period of
    cos((x/eps_cell)^alpha), capped at h_max for macroscopic resolution."""
    step = 2.0 * math.pi / per_turn
    k_max = int(math.ceil((1.0 / eps_cell) ** alpha / step))
    ks = np.arange(1, k_max + 1)
    graded = eps_cell * (ks * step) ** (1.0 / alpha)
    graded = graded[graded < 1.0]
    nodes = np.concatenate([[0.0], graded, [1.0],
                            np.arange(0.0, 1.0, h_max)])
    nodes = np.unique(np.clip(nodes, 0.0, 1.0))
    return nodes


def _minimize_p1(density, nodes, load, tol, max_iter):
    """Damped Newton on E(v) = sum_e h_e <f(x, s_e)>_gauss - <load, v> over
    interior nodal values, zero Dirichlet data."""
    he = np.diff(nodes)
    ne = len(he)
    mid = 0.5 * (nodes[:-1] + nodes[1:])
    xg = mid[:, None] + 0.5 * he[:, None] * _GAUSS4_X[None, :]
    wg = 0.5 * _GAUSS4_W[None, :]
    fd = 1e-5

    if callable(load):
        lg = np.asarray(load(xg), float)
    else:
        lg = np.full_like(xg, float(load))
    # nodal load vector int load * phi_i via P1 shapes on each element
    shp_l = 0.5 * (1.0 - _GAUSS4_X)[None, :]
    shp_r = 0.5 * (1.0 + _GAUSS4_X)[None, :]
    contrib_l = np.sum(wg * lg * shp_l, axis=1) * he
    contrib_r = np.sum(wg * lg * shp_r, axis=1) * he
    load_vec = contrib_l[1:] + contrib_r[:-1]

    def slopes(v):
        full = np.concatenate([[0.0], v, [0.0]])
        return np.diff(full) / he

    def energy(v):
        s = slopes(v)
        vals = density(xg, s[:, None])
        return float(np.sum(he * np.sum(wg * vals, axis=1))) \
            - float(np.dot(load_vec, v))

    def grad_curv(v):
        s = slopes(v)[:, None]
        fp = density(xg, s + fd)
        fm = density(xg, s - fd)
        f0 = density(xg, s)
        df = np.sum(wg * (fp - fm), axis=1) / (2 * fd) * he
        ddf = np.maximum(np.sum(wg * (fp - 2 * f0 + fm), axis=1)
                         / (fd * fd), 1e-10) * he
        g = df[:-1] / he[:-1] - df[1:] / he[1:] - load_vec
        return g, ddf

    n_int = ne - 1
    v = np.zeros(n_int)
    it = 0
    res = np.inf
    h_ref = float(np.min(he))
    for it in range(1, max_iter + 1):
        g, ddf = grad_curv(v)
        res = float(np.sqrt(np.mean(g * g))) / h_ref
        if res <= tol:
            break
        ce = ddf / (he * he)
        main = ce[:-1] + ce[1:]
        off = -ce[1:-1]
        H = sp.diags([main, off, off], [0, 1, -1], format="csc")
        d = spla.spsolve(H, -g)
        e0 = energy(v)
        slope = float(np.dot(g, d))
        t = 1.0
        while t > _STEP_FLOOR:
            if energy(v + t * d) <= e0 + _ARMIJO_C * t * slope:
                break
            t *= 0.5
        if t <= _STEP_FLOOR:
            raise NonConvergenceError(
                "line search stalled in the P1 minimization",
                {"residual": res, "iteration": it})
        v = v + t * d
        if e0 - energy(v) <= 1e-15 * (1.0 + abs(e0)):
            g, _ = grad_curv(v)
            res = float(np.sqrt(np.mean(g * g))) / h_ref
            break
    full = np.concatenate([[0.0], v, [0.0]])
    return full, energy(v), it, res


def minimize_functional_eps(f, eps: float, mesh, load=0.0, tol: float = 1e-10,
                            max_iter: int = 60,
                            p: float = 2.0) -> SolutionField:
    """Discrete minimizer of int_0^1 f(x, x/eps, Dv) dx - <load, v> over P1
    functions vanishing at the boundary.  mesh: element count, node array, or
    None (then the caller should wrap via EpsProblemConfig defaults)."""
    nodes = _resolve_mesh(mesh, _elliptic_mesh_width(eps))

    def density(x, s):
        return f(x, x / eps, s)

    full, en, it, res = _minimize_p1(density, nodes, load, tol, max_iter)
    return SolutionField(kind="static-1d", x=nodes, t=None, values=full, p=p,
                         info={"energy": en, "iterations": it,
                               "residual": res, "eps": eps})


def minimize_homogenized_functional(f_hom, mesh, load=0.0, tol: float = 1e-10,
                                    max_iter: int = 60,
                                    p: float = 2.0) -> SolutionField:
    """Same discrete stack for the oscillation-free limit density
    f_hom(x, lam)."""
    nodes = _resolve_mesh(mesh, 1.0 / 64.0)

    def density(x, s):
        return f_hom(x, s)

    full, en, it, res = _minimize_p1(density, nodes, load, tol, max_iter)
    return SolutionField(kind="static-1d", x=nodes, t=None, values=full, p=p,
                         info={"energy": en, "iterations": it,
                               "residual": res})


# ---------------------------------------------------------------------------
# scalar parabolic stepping

class _EpsScalarFlux:
    """Oscillating coefficients sampled at element midpoints."""

    def __init__(self, cfg: EpsProblemConfig):
        op = cfg.operator
        self.op = op
        self.p = op.p
        n = cfg.n
        self.h = 1.0 / n
        mids = (np.arange(n) + 0.5) * self.h
        period = op.periods[0]
        self.y = np.mod(mids / cfg.eps, period)
        self.eps_time = cfg.eps_time
        self.time_dependent = _is_time_dependent(op)
        if not self.time_dependent:
            self.a, self.b = op.coeffs_at(self.y, None)

    def coefficients(self, t_next):
        if not self.time_dependent:
            return self.a, self.b
        return self.op.coeffs_at(self.y, t_next / self.eps_time)

    def nonlinear(self) -> bool:
        return self.op.b is not None

    def flux_and_slope(self, s, a, b):
        reg = (s * s + NEWTON_DELTA ** 2) ** (0.5 * (self.p - 2.0))
        return a * s + b * reg * s, a + b * (self.p - 1.0) * reg


class _ModelScalarFlux:
    """Tabulated effective flux; linear tables collapse to one constant."""

    def __init__(self, model: EffectiveModel):
        if model.dimension != 1 or model.mode != "scalar":
            raise UnsupportedOperationError(
                "scalar stepping needs a 1D scalar effective model")
        self.model = model
        self.time_dependent = False
        self.constant = None
        if "linear_matrix" in model.info:
            self.constant = float(np.asarray(model.info["linear_matrix"])[0, 0])
            return
        xs = model.xi_samples.ravel()
        order = np.argsort(xs)
        self.xt = xs[order]
        self.At = model.A_values.ravel()[order]
        self.slopes = np.diff(self.At) / np.diff(self.xt)

    def nonlinear(self) -> bool:
        return self.constant is None

    def coefficients(self, t_next):
        return None, None

    def flux_and_slope(self, s, a, b):
        if self.constant is not None:
            return self.constant * s, np.full_like(s, self.constant)
        if np.min(s) < self.xt[0] - 1e-12 or np.max(s) > self.xt[-1] + 1e-12:
            bad = s[np.argmax(np.abs(s))]
            raise TableRangeError(float(bad))
        idx = np.clip(np.searchsorted(self.xt, s) - 1, 0, len(self.slopes) - 1)
        flux = self.At[idx] + self.slopes[idx] * (s - self.xt[idx])
        return flux, self.slopes[idx]


def _stiffness_1d(a, h):
    main = (a[:-1] + a[1:]) / h
    off = -a[1:-1] / h
    return sp.diags([main, off, off], [0, 1, -1], format="csc")


def _eval_on(fn, x, default=0.0):
    if fn is None:
        return np.full_like(x, default)
    if callable(fn):
        return np.asarray(fn(x), float)
    return np.full_like(x, float(fn))


def _noise_increment(noise, y, tau, U, dW_n):
    # U: (n_pts, B) state, dW_n: (m, B); returns (n_pts, B)
    G = np.asarray(noise.g(y, tau, U), float)
    if G.ndim == 2:
        G = G[:, :, None]
    return np.sum(G * dW_n[None, :, :], axis=1)


def _integrate_scalar(cfg: EpsProblemConfig, flux, noise, dW, keep="full"):
    """Implicit-Euler trajectory; state columns are independent batch members
    (multi-RHS solves).  Nonlinear fluxes require batch width 1."""
    n = cfg.n
    h = 1.0 / n
    n_steps = cfg.n_steps
    B = 1 if dW is None else dW.shape[2]
    nodes = np.linspace(0.0, 1.0, n + 1)
    x_int = nodes[1:-1]
    U = np.broadcast_to(_eval_on(cfg.u0, x_int)[:, None], (n - 1, B)).copy()
    F = _eval_on(cfg.forcing, x_int)
    y_nodes = np.mod(x_int / cfg.eps, 1.0)

    if flux.nonlinear() and B > 1:
        raise UnsupportedOperationError(
            "batched stepping supports linear fluxes only")

    slu = None
    if not flux.time_dependent and not flux.nonlinear():
        a, b = flux.coefficients(0.0)
        if a is None:
            K = _stiffness_1d(np.full(n, flux.constant), h)
        else:
            K = _stiffness_1d(a, h)
        slu = spla.splu((h / cfg.dt) * sp.identity(n - 1, format="csc") + K)

    if keep == "full":
        out = np.zeros((n_steps + 1, n + 1, B))
    else:
        out = np.zeros((2, n + 1, B))
    out[0, 1:-1] = U
    t = 0.0
    for k in range(n_steps):
        r = U
        if noise is not None and dW is not None:
            r = U + _noise_increment(noise, y_nodes, t / cfg.eps_time, U,
                                     dW[k])
        rhs = (h / cfg.dt) * r + h * F[:, None]
        if slu is not None:
            U = slu.solve(rhs)
        else:
            U = _newton_step_scalar(cfg, flux, U[:, 0], rhs[:, 0],
                                    t + cfg.dt)[:, None]
        t += cfg.dt
        cap = float(np.max(np.abs(U)))
        if cap > cfg.norm_cap:
            raise NonConvergenceError(
                "trajectory aborted: state norm exceeded the cap",
                {"aborted": True, "step": k + 1, "time": t, "norm": cap,
                 "cap": cfg.norm_cap})
        row = k + 1 if keep == "full" else 1
        out[row, 1:-1] = U
    t_grid = np.linspace(0.0, cfg.T, n_steps + 1) if keep == "full" \
        else np.array([0.0, cfg.T])
    return out, t_grid


def _newton_step_scalar(cfg, flux, u_prev, rhs, t_next, tol=1e-11,
                        max_iter=40):
    n = cfg.n
    h = 1.0 / n
    a, b = flux.coefficients(t_next)
    v = u_prev.copy()
    scale = (h / cfg.dt) * (1.0 + float(np.sqrt(np.mean(rhs * rhs))))
    for it in range(1, max_iter + 1):
        full = np.concatenate([[0.0], v, [0.0]])
        s = np.diff(full) / h
        fl, sl = flux.flux_and_slope(s, a, b)
        g = (h / cfg.dt) * v + (fl[:-1] - fl[1:]) - rhs
        if float(np.sqrt(np.mean(g * g))) <= tol * scale:
            return v
        H = sp.diags([(h / cfg.dt) + (sl[:-1] + sl[1:]) / h,
                      -sl[1:-1] / h, -sl[1:-1] / h], [0, 1, -1],
                     format="csc")
        d = spla.spsolve(H, -g)
        # merit: the step equation is a gradient of a convex functional,
        # so undamped Newton with a norm backtrack is safe
        t = 1.0
        g0 = float(np.dot(g, g))
        while t > _STEP_FLOOR:
            full = np.concatenate([[0.0], v + t * d, [0.0]])
            s = np.diff(full) / h
            fl, _ = flux.flux_and_slope(s, a, b)
            gt = (h / cfg.dt) * (v + t * d) + (fl[:-1] - fl[1:]) - rhs
            if float(np.dot(gt, gt)) <= (1.0 - _ARMIJO_C * t) * g0 + 1e-300:
                break
            t *= 0.5
        if t <= _STEP_FLOOR:
            raise NonConvergenceError(
                "Newton stalled inside an implicit step",
                {"time": t_next, "iteration": it})
        v = v + t * d
    raise NonConvergenceError("implicit step did not converge",
                              {"time": t_next, "iterations": max_iter})


def solve_parabolic_eps(cfg: EpsProblemConfig) -> SolutionField:
    """Implicit Euler for d_t u = div(flux(x/eps, t/eps2, Du)) + f."""
    if cfg.mode not in ("parabolic-scalar", "parabolic-vector"):
        raise ValueError("config mode must be parabolic")
    if cfg.vector_state():
        return _solve_vector(cfg, _EpsVectorFlux(cfg), None, None)
    values, t = _integrate_scalar(cfg, _EpsScalarFlux(cfg), None, None)
    return SolutionField(kind="trajectory-1d",
                         x=np.linspace(0.0, 1.0, cfg.n + 1), t=t,
                         values=values[:, :, 0], p=cfg.operator.p,
                         info={"eps": cfg.eps, "n": cfg.n,
                               "n_steps": cfg.n_steps})


def solve_parabolic_homogenized(model: EffectiveModel,
                                cfg: EpsProblemConfig) -> SolutionField:
    """Same stepping with the tabulated effective flux; reuses the grid and
    schedule of cfg so trajectories are directly comparable."""
    if cfg.vector_state() or cfg.mode == "parabolic-vector":
        return _solve_vector(cfg, _ModelVectorFlux(model, cfg), None, None)
    values, t = _integrate_scalar(cfg, _ModelScalarFlux(model), None, None)
    return SolutionField(kind="trajectory-1d",
                         x=np.linspace(0.0, 1.0, cfg.n + 1), t=t,
                         values=values[:, :, 0], p=model.p,
                         info={"model": "effective", "n": cfg.n})


def solve_spde_eps(cfg: EpsProblemConfig, path: WienerPath) -> SolutionField:
    """Semi-implicit Euler-Maruyama: implicit monotone flux, explicit noise
    and convection.  g absent means zero noise and the trajectory degenerates
    to the deterministic one bitwise."""
    if cfg.mode != "spde":
        raise ValueError("config mode must be spde")
    if abs(path.dt - cfg.dt) > 1e-12 or path.n_steps != cfg.n_steps:
        raise ValueError("Wiener path grid does not match the config")
    dW = path.dW[:, :, None]
    noise = cfg.noise
    if cfg.vector_state():
        return _solve_vector(cfg, _EpsVectorFlux(cfg), noise, dW,
                             path_seed=path.seed)
    values, t = _integrate_scalar(cfg, _EpsScalarFlux(cfg), noise, dW)
    return SolutionField(kind="trajectory-1d",
                         x=np.linspace(0.0, 1.0, cfg.n + 1), t=t,
                         values=values[:, :, 0], p=cfg.operator.p,
                         info={"eps": cfg.eps, "path_seed": path.seed})


def _solve_spde_homogenized(model, cfg, path, noise_hom) -> SolutionField:
    dW = path.dW[:, :, None]
    if cfg.vector_state():
        return _solve_vector(cfg, _ModelVectorFlux(model, cfg), noise_hom,
                             dW, path_seed=path.seed)
    values, t = _integrate_scalar(cfg, _ModelScalarFlux(model), noise_hom, dW)
    return SolutionField(kind="trajectory-1d",
                         x=np.linspace(0.0, 1.0, cfg.n + 1), t=t,
                         values=values[:, :, 0], p=model.p,
                         info={"model": "effective", "path_seed": path.seed})


# ---------------------------------------------------------------------------
# vector (MAC torus) stepping

class _EpsVectorFlux:
    def __init__(self, cfg: EpsProblemConfig):
        op = cfg.operator
        if op.mode != "vector":
            raise ValueError("vector stepping needs a vector operator")
        self.op = op
        self.p = op.p
        n = cfg.n
        h = 1.0 / n
        ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        centers = np.stack([((ii + 0.5) * h).ravel(),
                            ((jj + 0.5) * h).ravel()], axis=-1)
        korners = np.stack([(ii * h).ravel(), (jj * h).ravel()], axis=-1)
        period = op.periods[0]
        yc = np.mod(centers / cfg.eps, period)
        yk = np.mod(korners / cfg.eps, period)
        self.a_c, self.b_c = op.coeffs_at(yc, None)
        self.a_k, _ = op.coeffs_at(yk, None)
        self.nonlin = op.b is not None

    def viscous_blocks(self, ops):
        D1c, D2c, D2k, D1k, _ = ops
        Huu = D1c.T @ sp.diags(self.a_c) @ D1c \
            + D2k.T @ sp.diags(self.a_k) @ D2k
        Hvv = D2c.T @ sp.diags(self.a_c) @ D2c \
            + D1k.T @ sp.diags(self.a_k) @ D1k
        return Huu.tocsc(), Hvv.tocsc()


class _ModelVectorFlux:
    """Constant effective flux, diagonal in the trace-free shear basis."""

    def __init__(self, model: EffectiveModel, cfg: EpsProblemConfig):
        if model.mode != "vector" or "linear_matrix" not in model.info:
            raise UnsupportedOperationError(
                "vector stepping supports linear vector models only")
        A = np.asarray(model.info["linear_matrix"], float)  # (4, 3)
        basis = np.array([[0.0, 1.0, 0.0, 0.0],
                          [0.0, 0.0, 1.0, 0.0],
                          [1.0, 0.0, 0.0, -1.0]])
        L3 = basis @ A / np.sum(basis * basis, axis=1)[:, None]
        off = L3 - np.diag(np.diag(L3))
        if np.max(np.abs(off)) > 1e-8 * max(1.0, np.max(np.abs(L3))):
            raise UnsupportedOperationError(
                "effective vector flux couples shear directions; constant "
                "diagonal models only")
        self.c12, self.c21, self.alpha = (float(L3[0, 0]), float(L3[1, 1]),
                                          float(L3[2, 2]))
        self.p = model.p
        self.nonlin = False

    def viscous_blocks(self, ops):
        D1c, D2c, D2k, D1k, _ = ops
        Huu = self.alpha * (D1c.T @ D1c) + self.c12 * (D2k.T @ D2k)
        Hvv = self.alpha * (D2c.T @ D2c) + self.c21 * (D1k.T @ D1k)
        return Huu.tocsc(), Hvv.tocsc()


def _mac_convection(u, v, h):
    """Skew-symmetric centered convection on the staggered torus: the
    discrete <B(u)w, w> vanishes identically."""
    vbar = 0.25 * (v + np.roll(v, 1, 0) + np.roll(v, -1, 1)
                   + np.roll(np.roll(v, 1, 0), -1, 1))
    ubar = 0.25 * (u + np.roll(u, 1, 1) + np.roll(u, -1, 0)
                   + np.roll(np.roll(u, -1, 0), 1, 1))

    def dx(w):
        return (np.roll(w, -1, 0) - np.roll(w, 1, 0)) / (2 * h)

    def dy(w):
        return (np.roll(w, -1, 1) - np.roll(w, 1, 1)) / (2 * h)

    bu = 0.5 * (u * dx(u) + vbar * dy(u) + dx(u * u) + dy(vbar * u))
    bv = 0.5 * (ubar * dx(v) + v * dy(v) + dx(ubar * v) + dy(v * v))
    return bu, bv


def _eval_component(fn, X1, X2):
    if fn is None:
        return np.zeros_like(X1)
    if callable(fn):
        vals = np.asarray(fn(X1, X2), float)
        return np.broadcast_to(vals, X1.shape).copy()
    return np.full_like(X1, float(fn))


def _solve_vector(cfg: EpsProblemConfig, flux, noise, dW,
                  path_seed=None) -> SolutionField:
    """Implicit viscous step, explicit skew convection, pressure projection.

    Nonlinear p-part: damped Newton on the unconstrained viscous
    minimization per step (block-diagonal curvature), then projection."""
    n = cfg.n
    h = 1.0 / n
    ne = n * n
    ops = _mac_operators(n, h)
    D1c, D2c, D2k, D1k, _ = ops
    n_steps = cfg.n_steps

    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    xu1, xu2 = ii * h, (jj + 0.5) * h
    xv1, xv2 = (ii + 0.5) * h, jj * h
    fu = fv = None
    if cfg.u0 is not None:
        fu, fv = cfg.u0
    u = _eval_component(fu, xu1, xu2)
    v = _eval_component(fv, xv1, xv2)
    gu = gv = None
    if cfg.forcing is not None:
        g1, g2 = cfg.forcing
        gu = _eval_component(g1, xu1, xu2).ravel()
        gv = _eval_component(g2, xv1, xv2).ravel()

    Huu, Hvv = flux.viscous_blocks(ops)
    Ident = sp.identity(ne, format="csc")
    slu_u = slu_v = None
    if not flux.nonlin:
        slu_u = spla.splu(Ident / cfg.dt + Huu)
        slu_v = spla.splu(Ident / cfg.dt + Hvv)

    # pressure Poisson (PSD, constants removed by pinning cell 0)
    Lp = (D1c @ D1c.T + D2c @ D2c.T).tolil()
    Lp[0, :] = 0.0
    Lp[0, 0] = 1.0
    slu_p = spla.splu(Lp.tocsc())

    yu = np.mod(np.stack([xu1.ravel(), xu2.ravel()], -1) / cfg.eps, 1.0)
    yv = np.mod(np.stack([xv1.ravel(), xv2.ravel()], -1) / cfg.eps, 1.0)

    values = np.zeros((n_steps + 1, 2, n, n))
    values[0, 0], values[0, 1] = u, v
    div_max = 0.0
    cfl_max = 0.0
    t = 0.0
    for k in range(n_steps):
        bu, bv = _mac_convection(u, v, h)
        ru = (u - cfg.dt * bu).ravel()
        rv = (v - cfg.dt * bv).ravel()
        if gu is not None:
            ru = ru + cfg.dt * gu
            rv = rv + cfg.dt * gv
        if noise is not None and dW is not None:
            tau = t / cfg.eps_time
            ru = ru + _noise_increment(noise, yu, tau,
                                       u.ravel()[:, None], dW[k])[:, 0]
            rv = rv + _noise_increment(noise, yv, tau,
                                       v.ravel()[:, None], dW[k])[:, 0]
        if slu_u is not None:
            us = slu_u.solve(ru / cfg.dt)
            vs = slu_v.solve(rv / cfg.dt)
        else:
            us, vs = _newton_step_vector(cfg, flux, ops, u.ravel(),
                                         v.ravel(), ru, rv)
        div = D1c @ us + D2c @ vs
        div[0] = 0.0
        q = slu_p.solve(div)
        us = us - D1c.T @ q
        vs = vs - D2c.T @ q
        u = us.reshape(n, n)
        v = vs.reshape(n, n)
        t += cfg.dt
        speed = float(max(np.max(np.abs(u)), np.max(np.abs(v))))
        cfl_max = max(cfl_max, speed * cfg.dt / h)
        if speed > cfg.norm_cap:
            raise NonConvergenceError(
                "trajectory aborted: state norm exceeded the cap",
                {"aborted": True, "step": k + 1, "time": t, "norm": speed,
                 "cap": cfg.norm_cap})
        div_max = max(div_max,
                      float(np.max(np.abs(D1c @ us + D2c @ vs))))
        values[k + 1, 0], values[k + 1, 1] = u, v
    info = {"divergence_max": div_max, "cfl_max": cfl_max, "n": n,
            "eps": cfg.eps}
    if path_seed is not None:
        info["path_seed"] = path_seed
    return SolutionField(kind="trajectory-2d-vector",
                         x=np.arange(n) * h,
                         t=np.linspace(0.0, cfg.T, n_steps + 1),
                         values=values, p=getattr(flux, "p", 2.0), info=info)


def _newton_step_vector(cfg, flux, ops, u0, v0, ru, rv, tol=1e-10,
                        max_iter=40):
    D1c, D2c, D2k, D1k, A_k2c = ops
    op = flux.op
    p = op.p
    h = 1.0 / cfg.n
    ne = cfg.n * cfg.n
    a_c, a_k, b_c = flux.a_c, flux.a_k, flux.b_c

    def comps(u, v):
        return D1c @ u, D2c @ v, D2k @ u, D1k @ v

    def grads(u, v, delta):
        l11, l22, l12, l21 = comps(u, v)
        s2 = l11 ** 2 + l22 ** 2 + A_k2c @ (l12 ** 2) + A_k2c @ (l21 ** 2)
        fac = b_c * (s2 + delta * delta) ** (0.5 * (p - 2.0))
        fac_k = A_k2c.T @ fac
        gu = (u - ru) / cfg.dt + D1c.T @ ((a_c + fac) * l11) \
            + D2k.T @ ((a_k + fac_k) * l12)
        gv = (v - rv) / cfg.dt + D2c.T @ ((a_c + fac) * l22) \
            + D1k.T @ ((a_k + fac_k) * l21)
        return gu, gv, fac, fac_k

    u, v = u0.copy(), v0.copy()
    scale = (1.0 / cfg.dt) * (1.0 + float(np.sqrt(np.mean(ru ** 2 + rv ** 2))))
    for it in range(1, max_iter + 1):
        gu, gv, fac, fac_k = grads(u, v, NEWTON_DELTA)
        res = math.sqrt(float(np.mean(gu ** 2 + gv ** 2)))
        if res <= tol * scale:
            return u, v
        Huu = sp.identity(ne) / cfg.dt \
            + D1c.T @ sp.diags(a_c + fac) @ D1c \
            + D2k.T @ sp.diags(a_k + fac_k) @ D2k
        Hvv = sp.identity(ne) / cfg.dt \
            + D2c.T @ sp.diags(a_c + fac) @ D2c \
            + D1k.T @ sp.diags(a_k + fac_k) @ D1k
        du = spla.spsolve(Huu.tocsc(), -gu)
        dv = spla.spsolve(Hvv.tocsc(), -gv)
        g0 = float(np.dot(gu, gu) + np.dot(gv, gv))
        t = 1.0
        while t > _STEP_FLOOR:
            g2u, g2v, _, _ = grads(u + t * du, v + t * dv, NEWTON_DELTA)
            if float(np.dot(g2u, g2u) + np.dot(g2v, g2v)) \
                    <= (1.0 - _ARMIJO_C * t) * g0 + 1e-300:
                break
            t *= 0.5
        if t <= _STEP_FLOOR:
            raise NonConvergenceError(
                "Newton stalled inside a vector implicit step",
                {"iteration": it, "residual": res})
        u = u + t * du
        v = v + t * dv
    raise NonConvergenceError("vector implicit step did not converge",
                              {"iterations": max_iter})


# ---------------------------------------------------------------------------
# a priori statistics

def estimate_apriori_bounds(ensemble) -> dict:
    """Monte-Carlo (or deterministic) a priori statistics per eps.

    ensemble: mapping eps -> sequence of at least 100 SolutionField (or norm
    dicts).  Reports E sup_t ||u||_L2^2, E int ||u||_H1^2, E int ||Du||_V^p
    and the relative spread of the sup statistic across eps."""
    eps_list = sorted(ensemble)
    rows = {"eps": [], "mean_sup_l2_sq": [], "mean_int_h1_sq": [],
            "mean_int_V_p": [], "n_paths": []}
    for eps in eps_list:
        if len(ensemble[eps]) < 100:
            raise ValueError(
                f"a priori statistics need at least 100 paths per eps "
                f"(got {len(ensemble[eps])} at eps={eps})")
        sups, h1s, vps = [], [], []
        for item in ensemble[eps]:
            norms = item.norms if hasattr(item, "norms") else item
            sups.append(norms["sup_l2"] ** 2)
            h1s.append(norms["int_h1_sq"])
            vps.append(norms["int_V_p"])
        rows["eps"].append(float(eps))
        rows["mean_sup_l2_sq"].append(float(np.mean(sups)))
        rows["mean_int_h1_sq"].append(float(np.mean(h1s)))
        rows["mean_int_V_p"].append(float(np.mean(vps)))
        rows["n_paths"].append(len(sups))
    sup = np.array(rows["mean_sup_l2_sq"])
    spread = float((np.max(sup) - np.min(sup)) / np.mean(sup)) \
        if np.mean(sup) > 0 else 0.0
    rows["spread_sup"] = spread
    rows["flat_ok"] = bool(spread <= 0.05)
    return rows


def time_shift_modulus(traj: SolutionField, deltas, p: float) -> dict:
    """Discrete negative-norm time-shift modulus.

    Proxy norm per slice: ||w||^2 = <M w, (M + K)^{-1} M w> with unit
    stiffness K (an H^{-1} surrogate).  Reports the exponent fitted against
    delta and the reference 1/(p-1); asserts nothing."""
    if traj.kind != "trajectory-1d":
        raise UnsupportedOperationError("modulus proxy is 1D scalar only")
    h = float(traj.x[1] - traj.x[0])
    dt = float(traj.t[1] - traj.t[0])
    n = len(traj.x) - 1
    K = _stiffness_1d(np.ones(n), h)
    M = h * sp.identity(n - 1, format="csc")
    slu = spla.splu((M + K).tocsc())
    inner = traj.values[:, 1:-1]
    p_prime = p / (p - 1.0)

    def proxy(wslice):
        mw = h * wslice
        return math.sqrt(max(float(np.dot(mw, slu.solve(mw))), 0.0))

    moduli = []
    deltas = [float(d) for d in deltas]
    for delta in deltas:
        k_max = max(1, int(round(delta / dt)))
        worst = 0.0
        for k in range(1, k_max + 1):
            diffs = inner[k:] - inner[:-k]
            total = dt * sum(proxy(d) ** p_prime for d in diffs)
            worst = max(worst, total)
        moduli.append(worst)
    logs = np.log(np.array(deltas))
    vals = np.log(np.maximum(np.array(moduli), 1e-300))
    slope = float(np.polyfit(logs, vals, 1)[0]) if len(deltas) > 1 else float("nan")
    return {"deltas": deltas, "moduli": moduli, "fitted_exponent": slope,
            "reference_exponent": 1.0 / (p - 1.0), "p_prime": p_prime}


# ---------------------------------------------------------------------------
# convergence studies

@dataclass
class StudyReport:
    """Errors between eps-solves and homogenized solves across an eps ladder."""

    kind: str
    eps_list: list
    errors: np.ndarray              # (n_eps, n_trials)
    seed: int
    trials: int
    norms: list                     # per (eps, trial): dict of u_eps norms
    energy_gaps: np.ndarray | None = None
    corrector_errors: np.ndarray | None = None
    medians: np.ndarray | None = None
    upper_quartiles: np.ndarray | None = None
    rate: float | None = None
    info: dict = dc_field(default_factory=dict)

    @property
    def median_decay_monotone(self) -> bool:
        med = self.medians if self.medians is not None \
            else self.errors[:, 0]
        return bool(np.all(np.diff(med) < 0))

    def to_csv(self) -> str:
        cols = ["eps", "trial", "error", "sup_l2", "int_h1_sq", "int_V_p"]
        has_gap = self.energy_gaps is not None
        has_corr = self.corrector_errors is not None
        if has_gap:
            cols.append("energy_gap")
        if has_corr:
            cols.append("corrector_error")
        lines = [",".join(cols)]
        for i, eps in enumerate(self.eps_list):
            for j in range(self.errors.shape[1]):
                norms = self.norms[i * self.errors.shape[1] + j]
                row = [eps, j, self.errors[i, j],
                       norms.get("sup_l2", norms.get("l2", 0.0)),
                       norms.get("int_h1_sq", norms.get("h1", 0.0)),
                       norms.get("int_V_p", norms.get("V_p", 0.0))]
                if has_gap:
                    row.append(self.energy_gaps[i])
                if has_corr:
                    row.append(self.corrector_errors[i])
                lines.append(",".join(_fmt17(x) for x in row))
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        out = {"kind": self.kind, "eps": [float(e) for e in self.eps_list],
               "seed": self.seed, "trials": self.trials,
               "errors": self.errors.tolist(),
               "median_decay_monotone": self.median_decay_monotone,
               "rate": None if self.rate is None or not np.isfinite(self.rate)
               else float(self.rate)}
        if self.energy_gaps is not None:
            out["energy_gaps"] = self.energy_gaps.tolist()
        if self.corrector_errors is not None:
            out["corrector_errors"] = self.corrector_errors.tolist()
        if self.medians is not None:
            out["medians"] = self.medians.tolist()
            out["upper_quartiles"] = self.upper_quartiles.tolist()
        out.update(self.info)
        return out


def _fmt17(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _fit_rate(eps_list, errors) -> float:
    errs = np.asarray(errors, float)
    mask = errs > 1e-14
    if np.count_nonzero(mask) < 2:
        return float("nan")
    return float(np.polyfit(np.log(np.asarray(eps_list)[mask]),
                            np.log(errs[mask]), 1)[0])


def _corrector_augmented_error(u_eps: SolutionField, u_hom: SolutionField,
                               pi_cell: np.ndarray, eps: float) -> float:
    """||u_eps - u_hom - eps pi(x/eps) D u_hom|| in L2(Q_T) (or static L2):
    first-order two-scale reconstruction for 1D scalar solves."""
    pi_nodes = np.linspace(0.0, 1.0, len(pi_cell) + 1)
    pi_per = np.concatenate([pi_cell, [pi_cell[0]]])

    def du_nodal(vals, h):
        s = np.diff(vals) / h
        d = np.empty_like(vals)
        d[1:-1] = 0.5 * (s[:-1] + s[1:])
        d[0], d[-1] = s[0], s[-1]
        return d

    x = u_eps.x
    h = float(x[1] - x[0])
    pi_x = np.interp(np.mod(x / eps, 1.0), pi_nodes, pi_per)
    if u_eps.kind == "static-1d":
        corr = u_hom.values + eps * pi_x * du_nodal(u_hom.values, h)
        return _p1_l2(x, u_eps.values - corr)
    dt = float(u_eps.t[1] - u_eps.t[0])
    wt = _trapezoid_weights(u_eps.values.shape[0]) * dt
    total = 0.0
    for k in range(u_eps.values.shape[0]):
        corr = u_hom.values[k] + eps * pi_x * du_nodal(u_hom.values[k], h)
        diff = u_eps.values[k] - corr
        total += wt[k] * h * float(np.sum(diff ** 2))
    return math.sqrt(total)


def convergence_study(template, eps_list, trials: int = 1, seed: int = 0,
                      homogenized=None, noise_hom=None,
                      corrector_pi=None) -> StudyReport:
    """Compare eps-solves with homogenized solves over an eps ladder.

    template: callable eps -> EpsProblemConfig.  homogenized: the limit-side
    object (callable f_hom(x, lam) for elliptic-min, EffectiveModel
    otherwise).  spde trials share one Wiener path per (seed, trial) between
    the eps-solve and the homogenized solve.  corrector_pi: cell corrector
    values on a uniform cell grid for the optional first-order augmented
    error (1D scalar)."""
    if homogenized is None:
        raise ValueError("a homogenized density or effective model is needed")
    eps_list = [float(e) for e in eps_list]
    cfg0 = template(eps_list[0])
    kind = cfg0.mode
    errors = np.zeros((len(eps_list), max(1, trials)))
    gaps = np.zeros(len(eps_list)) if kind == "elliptic-min" else None
    corr = np.zeros(len(eps_list)) if corrector_pi is not None else None
    norms_rows = []
    medians = upper = None

    if kind == "elliptic-min":
        for i, eps in enumerate(eps_list):
            cfg = template(eps)
            nodes = _resolve_mesh(cfg.mesh, cfg.h)
            u_e = minimize_functional_eps(cfg.density, eps, nodes,
                                          load=cfg.forcing or 0.0)
            u_h = minimize_homogenized_functional(homogenized, nodes,
                                                  load=cfg.forcing or 0.0)
            errors[i, 0] = u_e.l2_distance(u_h)
            gaps[i] = abs(u_e.info["energy"] - u_h.info["energy"])
            if corr is not None:
                corr[i] = _corrector_augmented_error(u_e, u_h, corrector_pi,
                                                     eps)
            norms_rows.append(dict(u_e.norms))
    elif kind in ("parabolic-scalar", "parabolic-vector"):
        for i, eps in enumerate(eps_list):
            cfg = template(eps)
            u_e = solve_parabolic_eps(cfg)
            u_h = solve_parabolic_homogenized(homogenized, cfg)
            errors[i, 0] = u_e.l2_distance(u_h)
            if corr is not None and cfg.mode == "parabolic-scalar":
                corr[i] = _corrector_augmented_error(u_e, u_h, corrector_pi,
                                                     eps)
            norms_rows.append(dict(u_e.norms))
    elif kind == "spde":
        if trials < 1:
            raise ValueError("spde studies need at least one trial")
        for i, eps in enumerate(eps_list):
            cfg = template(eps)
            paths = [WienerPath.generate((seed, k), cfg.T, cfg.dt,
                                         cfg.noise.m if cfg.noise else 1)
                     for k in range(trials)]
            errs, rows = _spde_trial_errors(cfg, homogenized,
                                            noise_hom or cfg.noise, paths)
            errors[i, :] = errs
            norms_rows.extend(rows)
        medians = np.median(errors, axis=1)
        upper = np.quantile(errors, 0.75, axis=1)
    else:
        raise ValueError(f"unsupported study kind {kind!r}")

    rate = _fit_rate(eps_list, errors[:, 0] if medians is None else medians)
    report = StudyReport(kind=kind, eps_list=eps_list, errors=errors,
                         seed=seed, trials=max(1, trials), norms=norms_rows,
                         energy_gaps=gaps, corrector_errors=corr,
                         medians=medians, upper_quartiles=upper, rate=rate)
    return report


def _spde_trial_errors(cfg, model, noise_hom, paths):
    """Common-path errors for one eps; batched multi-RHS stepping when the
    flux is linear, per-path otherwise."""
    n = cfg.n
    h = 1.0 / n
    dt_w = _trapezoid_weights(cfg.n_steps + 1) * cfg.dt
    can_batch = cfg.operator.b is None and not cfg.vector_state()
    errs = np.empty(len(paths))
    rows = []
    if can_batch:
        dW = np.stack([p.dW for p in paths], axis=-1)
        vals_e, _ = _integrate_scalar(cfg, _EpsScalarFlux(cfg), cfg.noise, dW)
        vals_h, _ = _integrate_scalar(cfg, _ModelScalarFlux(model), noise_hom,
                                      dW)
        diff = vals_e - vals_h
        errs = np.sqrt(np.einsum("t,tb->b", dt_w,
                                 h * np.sum(diff ** 2, axis=1)))
        for j in range(len(paths)):
            rows.append(_trajectory_norms_1d(vals_e[:, :, j], h, cfg.dt,
                                             cfg.operator.p))
    else:
        for j, path in enumerate(paths):
            u_e = solve_spde_eps(cfg, path)
            u_h = _solve_spde_homogenized(model, cfg, path, noise_hom)
            errs[j] = u_e.l2_distance(u_h)
            rows.append(dict(u_e.norms))
    return errs, rows
