"""Two-scale limit verification on constructed oscillating sequences.

The checks here compare scale-resolved oscillatory integrals
int_Q u_eps(x) f(x, x/eps_1) dx against their predicted limits
int_Q int_cell u0(x, y) f(x, y) dy dx, for weak and strong convergence,
products of weakly and strongly convergent factors, gradient two-scale
decompositions, and the monotone flux inequality.  Cell coordinates follow
the unit-torus convention: test closures receive raw cell coordinates and
are expected to be 1-periodic in them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import BudgetError
from .quadrature import tensor_nodes, uniform_panel_nodes

DEFAULT_EPS_LIST = tuple(2.0 ** (-k) for k in range(3, 9))
DEFAULT_POINT_BUDGET = 4e7

_TINY = 1e-300


def _identity(eps: float) -> float:
    return eps


@dataclass(frozen=True)
class Box:
    """Axis-aligned macroscopic domain, dimension <= 2."""

    bounds: tuple

    def __post_init__(self):
        b = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if not 1 <= len(b) <= 2:
            raise ValueError("macro domain dimension must be 1 or 2")
        if any(hi <= lo for lo, hi in b):
            raise ValueError("degenerate box")
        object.__setattr__(self, "bounds", b)

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def volume(self) -> float:
        return float(np.prod([hi - lo for lo, hi in self.bounds]))


UNIT_INTERVAL = Box(((0.0, 1.0),))


def _as_axes(x, dim):
    """Split point array into per-axis 1-d arrays; accepts (M,) when dim=1."""
    x = np.asarray(x, float)
    if dim == 1:
        return [x.ravel()]
    return [x[:, j] for j in range(dim)]


class TwoScaleFunction:
    """Limit pair (u0, u1) on Q x cell with optional derivative closures.

    u0 and u1 are vectorized callables (x, y) -> values where x and y are
    (M,) arrays in one dimension and (M, d) arrays in two.  u1, when present,
    must have zero cell mean at every macroscopic point (corrector gauge).
    """

    def __init__(self, domain: Box, u0, u1=None, u0_dx=None, u1_dx=None,
                 u1_dy=None, check_gauge: bool = True):
        self.domain = domain
        self.u0 = u0
        self.u1 = u1
        self.u0_dx = u0_dx
        self.u1_dx = u1_dx
        self.u1_dy = u1_dy
        if u1 is not None and check_gauge:
            self._check_zero_cell_mean()

    def _check_zero_cell_mean(self, n_probe: int = 5, tol: float = 1e-8):
        rng = np.random.default_rng(12345)
        d = self.domain.dim
        nodes, w = uniform_panel_nodes(0.0, 1.0, 32)
        for _ in range(n_probe):
            xp = np.array([rng.uniform(lo, hi) for lo, hi in self.domain.bounds])
            if d == 1:
                xs = np.full(nodes.size, xp[0])
                mean = float(np.dot(w, self.u1(xs, nodes)))
            else:
                ypts, yw = tensor_nodes([(nodes, w), (nodes, w)])
                xs = np.tile(xp, (ypts.shape[0], 1))
                mean = float(np.dot(yw, self.u1(xs, ypts)))
            if abs(mean) > tol:
                raise ValueError(
                    f"u1 cell mean {mean:.3e} at x={xp} violates the "
                    "zero-mean corrector gauge")

    def reconstruct(self, eps: float, x, eps1: float | None = None):
        """u_eps(x) = u0(x, x/eps1) + eps * u1(x, x/eps1)."""
        e1 = eps if eps1 is None else eps1
        y = np.asarray(x, float) / e1
        out = self.u0(x, y)
        if self.u1 is not None:
            out = out + eps * self.u1(x, y)
        return out

    @classmethod
    def from_grids(cls, domain: Box, x_centers, s_centers, values):
        """Bilinear interpolation of tabulated u0(x, s), periodic in s."""
        x_centers = np.asarray(x_centers, float)
        s_centers = np.asarray(s_centers, float)
        values = np.asarray(values, float)

        def u0(x, y):
            x = np.asarray(x, float).ravel()
            s = np.mod(np.asarray(y, float).ravel(), 1.0)
            xi = np.interp(x, x_centers, np.arange(x_centers.size))
            # periodic linear interpolation along s
            ds = s_centers[1] - s_centers[0]
            sj = (s - s_centers[0]) / ds
            j0 = np.floor(sj).astype(int)
            fj = sj - j0
            j0 = np.mod(j0, s_centers.size)
            j1 = np.mod(j0 + 1, s_centers.size)
            i0 = np.clip(np.floor(xi).astype(int), 0, x_centers.size - 2)
            fi = np.clip(xi - i0, 0.0, 1.0)
            v00 = values[i0, j0]
            v01 = values[i0, j1]
            v10 = values[i0 + 1, j0]
            v11 = values[i0 + 1, j1]
            return ((1 - fi) * ((1 - fj) * v00 + fj * v01)
                    + fi * ((1 - fj) * v10 + fj * v11))

        return cls(domain, u0)


class OscillatorySequence:
    """An eps-indexed family u_eps with a declared limit.

    rule 'pure-oscillation': u_eps(x) = v(x, x/eps1), limit v itself.
    rule 'two-scale-expansion': u_eps = u0(x) + eps u1(x, x/eps1).
    rule 'random-amplitude': u_eps = A(omega) v(x, x/eps1), A from the
        declared distribution; the sampler is deterministic given (eps, seed).
    rule 'classical-perturbation': u_eps = u0(x) + eps w(x), no oscillation.

    axis_couplings assigns each macro axis its oscillation scale: 1 for
    eps_1, 2 for eps_2, 0 for a non-oscillating axis.
    """

    def __init__(self, rule: str, domain: Box, v=None, two_scale=None,
                 u0=None, w=None, amplitude=None, eps1=_identity,
                 eps2=_identity, axis_couplings=None, name: str = ""):
        if rule not in ("pure-oscillation", "two-scale-expansion",
                        "random-amplitude", "classical-perturbation"):
            raise ValueError(f"unknown sequence rule {rule!r}")
        self.rule = rule
        self.domain = domain
        self.v = v
        self.two_scale = two_scale
        self.u0 = u0
        self.w = w
        self.amplitude = amplitude
        self.eps1 = eps1
        self.eps2 = eps2
        self.axis_couplings = tuple(axis_couplings) if axis_couplings \
            else tuple(1 for _ in range(domain.dim))
        self.name = name
        if rule == "random-amplitude" and amplitude is None:
            raise ValueError("random-amplitude rule needs a distribution")

    # -- amplitude bookkeeping ----------------------------------------------

    def amplitude_stats(self):
        kind = self.amplitude[0]
        if kind == "uniform":
            lo, hi = self.amplitude[1], self.amplitude[2]
            return 0.5 * (lo + hi), (hi - lo) / math.sqrt(12.0)
        if kind == "normal":
            return self.amplitude[1], self.amplitude[2]
        raise ValueError(f"unknown amplitude distribution {kind!r}")

    def draw_amplitudes(self, eps: float, seed, n: int) -> np.ndarray:
        rng = np.random.default_rng([0 if seed is None else int(seed),
                                     int(round(1.0 / eps))])
        kind = self.amplitude[0]
        if kind == "uniform":
            return rng.uniform(self.amplitude[1], self.amplitude[2], size=n)
        return rng.normal(self.amplitude[1], self.amplitude[2], size=n)

    # -- sampling ------------------------------------------------------------

    def cell_coords(self, eps: float, x):
        e1, e2 = self.eps1(eps), self.eps2(eps)
        axes = _as_axes(x, self.domain.dim)
        out = []
        for coupling, xa in zip(self.axis_couplings, axes):
            if coupling == 1:
                out.append(xa / e1)
            elif coupling == 2:
                out.append(xa / e2)
            else:
                out.append(np.zeros_like(xa))
        return out[0] if self.domain.dim == 1 else np.stack(out, axis=-1)

    def sample(self, eps: float, seed=None):
        """Deterministic sampler u_eps as a closure over points in Q."""
        if self.rule == "pure-oscillation":
            return lambda x: self.v(x, self.cell_coords(eps, x))
        if self.rule == "two-scale-expansion":
            ts = self.two_scale
            e1 = self.eps1(eps)

            def u(x):
                y = self.cell_coords(eps, x)
                out = ts.u0(x, y)
                if ts.u1 is not None:
                    out = out + eps * ts.u1(x, y)
                return out

            return u
        if self.rule == "classical-perturbation":
            return lambda x: self.u0(x) + eps * self.w(x)
        amp = float(self.draw_amplitudes(eps, seed, 1)[0])
        return lambda x: amp * self.v(x, self.cell_coords(eps, x))

    def predicted_limit(self) -> TwoScaleFunction:
        if self.rule == "pure-oscillation":
            return TwoScaleFunction(self.domain, self.v)
        if self.rule == "two-scale-expansion":
            return TwoScaleFunction(self.domain, self.two_scale.u0,
                                    check_gauge=False)
        if self.rule == "classical-perturbation":
            return TwoScaleFunction(self.domain, lambda x, y: self.u0(x))
        mean, _ = self.amplitude_stats()
        return TwoScaleFunction(self.domain,
                                lambda x, y: mean * self.v(x, y))


# ---------------------------------------------------------------------------
# quadratures

def _scale_mesh(seq: OscillatorySequence, eps: float, q: int, order: int,
                budget: float):
    """Per-axis GL meshes resolving every oscillation scale with q panels."""
    e1, e2 = seq.eps1(eps), seq.eps2(eps)
    axes = []
    total = 1.0
    for coupling, (lo, hi) in zip(seq.axis_couplings, seq.domain.bounds):
        scale = {1: e1, 2: e2, 0: math.inf}[coupling]
        n_panels = max(16, int(math.ceil((hi - lo) * q / scale))) \
            if math.isfinite(scale) else 16
        total *= n_panels * order
        if total > budget:
            raise BudgetError(
                f"resolved mesh for eps={eps:g} needs more than "
                f"{budget:.0f} quadrature points")
        axes.append(uniform_panel_nodes(lo, hi, n_panels, order))
    if seq.domain.dim == 1:
        return axes[0]
    return tensor_nodes(axes)


def oscillatory_integral(seq: OscillatorySequence, eps: float, testfield,
                         q: int = 8, order: int = 4,
                         budget: float = DEFAULT_POINT_BUDGET,
                         seed=None) -> float:
    """int_Q u_eps(x) f(x, x/eps_1) dx on a scale-resolved composite GL mesh."""
    nodes, weights = _scale_mesh(seq, eps, q, order, budget)
    u = seq.sample(eps, seed)
    y = seq.cell_coords(eps, nodes)
    return float(np.dot(weights, u(nodes) * testfield(nodes, y)))


def sigma_limit_value(u: TwoScaleFunction, testfield, n_macro: int | None = None,
                      n_cell: int | None = None, order: int = 4) -> float:
    """int_Q int_cell u0(x, y) f(x, y) dy dx by tensor GL quadrature."""
    d = u.domain.dim
    if n_macro is None:
        n_macro = 64 if d == 1 else 12
    if n_cell is None:
        n_cell = 64 if d == 1 else 12
    macro_axes = [uniform_panel_nodes(lo, hi, n_macro, order)
                  for lo, hi in u.domain.bounds]
    cell_axes = [uniform_panel_nodes(0.0, 1.0, n_cell, order)
                 for _ in range(d)]
    pts, w = tensor_nodes(macro_axes + cell_axes)
    x = pts[:, 0] if d == 1 else pts[:, :d]
    y = pts[:, 1] if d == 1 else pts[:, d:]
    return float(np.dot(w, u.u0(x, y) * testfield(x, y)))


# ---------------------------------------------------------------------------
# reports

@dataclass
class SigmaLimitReport:
    """Per-test-field integral ladders against predicted limits.

    passes iff for every field the final error is below tol and the error
    ladder is nonincreasing over the last three eps values; errors at or
    below tie_floor count as indistinguishable from zero.
    """

    epsilons: tuple
    values: dict
    limits: dict
    errors: dict
    tol: float
    tie_floor: float
    rate: float = float("nan")
    passed: bool = False
    per_field_passed: dict = dc_field(default_factory=dict)

    def finalize(self):
        for name, errs in self.errors.items():
            self.per_field_passed[name] = self._ladder_ok(errs)
        self.passed = all(self.per_field_passed.values())
        self.rate = self._fit_rate()
        return self

    def _ladder_ok(self, errs) -> bool:
        errs = np.asarray(errs, float)
        if errs[-1] > self.tol:
            return False
        clipped = np.maximum(errs, self.tie_floor)
        tail = clipped[-3:] if clipped.size >= 3 else clipped
        return bool(np.all(np.diff(tail) <= tail[:-1] * 1e-12 + _TINY))

    def _fit_rate(self) -> float:
        errs = np.max(np.array([self.errors[k] for k in self.errors]), axis=0)
        mask = errs > self.tie_floor
        if np.count_nonzero(mask) < 2:
            return float("nan")
        le = np.log(np.asarray(self.epsilons)[mask])
        lv = np.log(errs[mask])
        return float(np.polyfit(le, lv, 1)[0])

    def to_json(self) -> dict:
        rate = None if math.isnan(self.rate) else self.rate
        return {"epsilons": list(self.epsilons),
                "values": {k: list(v) for k, v in self.values.items()},
                "limits": dict(self.limits),
                "errors": {k: list(v) for k, v in self.errors.items()},
                "tol": self.tol, "rate": rate, "pass": self.passed,
                "per_field": dict(self.per_field_passed)}

    def to_csv(self) -> str:
        lines = ["field,epsilon,value,limit,error"]
        for name in self.values:
            for eps, val, err in zip(self.epsilons, self.values[name],
                                     self.errors[name]):
                lines.append(f"{name},{eps!r},{val!r},"
                             f"{self.limits[name]!r},{err!r}")
        return "\n".join(lines) + "\n"


def _validate_testfields(testfields: dict):
    if len(testfields) < 3:
        raise ValueError("need at least 3 test fields "
                         "(one x-only and one oscillating)")


def check_weak_sigma(seq: OscillatorySequence, u_limit=None, testfields=None,
                     eps_list=DEFAULT_EPS_LIST, tol: float = 1e-3,
                     q: int = 8, n_samples: int = 10000, seed=0,
                     budget: float = DEFAULT_POINT_BUDGET) -> SigmaLimitReport:
    """Verify weak two-scale convergence against each test field."""
    if testfields is None:
        testfields = catalog_testfields()
    _validate_testfields(testfields)
    if u_limit is None:
        u_limit = seq.predicted_limit()
    eps_list = tuple(sorted(eps_list, reverse=True))
    tie_floor = 1e-3 * tol
    values: dict = {name: [] for name in testfields}
    limits: dict = {}
    errors: dict = {name: [] for name in testfields}
    mc_margin = 0.0
    for name, f in testfields.items():
        limits[name] = sigma_limit_value(u_limit, f)
    for eps in eps_list:
        for name, f in testfields.items():
            if seq.rule == "random-amplitude":
                base = OscillatorySequence("pure-oscillation", seq.domain,
                                           v=seq.v, eps1=seq.eps1,
                                           eps2=seq.eps2,
                                           axis_couplings=seq.axis_couplings)
                iv = oscillatory_integral(base, eps, f, q, budget=budget)
                amps = seq.draw_amplitudes(eps, seed, n_samples)
                val = float(np.mean(amps) * iv)
                _, std = seq.amplitude_stats()
                mc_margin = max(mc_margin,
                                3.0 * std * abs(iv) / math.sqrt(n_samples))
            else:
                val = oscillatory_integral(seq, eps, f, q, budget=budget,
                                           seed=seed)
            values[name].append(val)
            errors[name].append(abs(val - limits[name]))
    report = SigmaLimitReport(eps_list, values, limits, errors,
                              tol + mc_margin,
                              max(tie_floor, mc_margin))
    return report.finalize()


def check_strong_sigma(seq: OscillatorySequence, u_limit=None, p: float = 2.0,
                       testfields=None, eps_list=DEFAULT_EPS_LIST,
                       tol: float = 1e-3, q: int = 8,
                       budget: float = DEFAULT_POINT_BUDGET) -> SigmaLimitReport:
    """Weak convergence plus convergence of L^p norms to the limit norm."""
    if testfields is None:
        testfields = catalog_testfields()
    report = check_weak_sigma(seq, u_limit, testfields, eps_list, tol, q,
                              budget=budget)
    if u_limit is None:
        u_limit = seq.predicted_limit()
    limit_norm = _limit_norm(u_limit, p)
    norm_vals, norm_errs = [], []
    for eps in report.epsilons:
        nodes, weights = _scale_mesh(seq, eps, q, 4, budget)
        u = seq.sample(eps, 0)
        val = float(np.dot(weights, np.abs(u(nodes)) ** p)) ** (1.0 / p)
        norm_vals.append(val)
        norm_errs.append(abs(val - limit_norm))
    report.values["__norm__"] = norm_vals
    report.limits["__norm__"] = limit_norm
    report.errors["__norm__"] = norm_errs
    return report.finalize()


def _limit_norm(u_limit: TwoScaleFunction, p: float) -> float:
    mean_p = sigma_limit_value(
        TwoScaleFunction(u_limit.domain,
                         lambda x, y: np.abs(u_limit.u0(x, y)) ** p,
                         check_gauge=False),
        lambda x, y: np.ones(np.shape(np.atleast_1d(x))[0]))
    return mean_p ** (1.0 / p)


def check_product(seq_u: OscillatorySequence, seq_v: OscillatorySequence,
                  testfield, eps_list=DEFAULT_EPS_LIST, tol: float = 1e-3,
                  exponents=(2.0, 2.0, 1.0), q: int = 8,
                  budget: float = DEFAULT_POINT_BUDGET) -> SigmaLimitReport:
    """Product of a weakly and a strongly convergent sequence."""
    p, qq, r = exponents
    if abs(1.0 / p + 1.0 / qq - 1.0 / r) > 1e-12 or 1.0 / r > 1.0 + 1e-12:
        raise ValueError("exponents must satisfy 1/r = 1/p + 1/q <= 1")
    lu, lv = seq_u.predicted_limit(), seq_v.predicted_limit()
    limit = sigma_limit_value(
        TwoScaleFunction(lu.domain,
                         lambda x, y: lu.u0(x, y) * lv.u0(x, y),
                         check_gauge=False), testfield)
    eps_list = tuple(sorted(eps_list, reverse=True))
    vals, errs = [], []
    for eps in eps_list:
        nodes, weights = _scale_mesh(seq_u, eps, q, 4, budget)
        y = seq_u.cell_coords(eps, nodes)
        uu = seq_u.sample(eps, 0)(nodes)
        vv = seq_v.sample(eps, 0)(nodes)
        vals.append(float(np.dot(weights, uu * vv * testfield(nodes, y))))
        errs.append(abs(vals[-1] - limit))
    report = SigmaLimitReport(eps_list, {"product": vals},
                              {"product": limit}, {"product": errs},
                              tol, 1e-3 * tol)
    return report.finalize()


def check_gradient_decomposition(u: TwoScaleFunction, eps_list=DEFAULT_EPS_LIST,
                                 testfields=None, tol: float = 1e-3,
                                 q: int = 8, axes=None, amplitude=None,
                                 n_samples: int = 10000, seed: int = 0,
                                 axis_couplings=None,
                                 budget: float = DEFAULT_POINT_BUDGET
                                 ) -> SigmaLimitReport:
    """Verify d u_eps/d x_i -> d u0/d x_i + cell-derivative of u1.

    u needs derivative closures (u0_dx, and u1_dx/u1_dy when u1 is present).
    With `amplitude` set, the oscillating part is scaled by a random A and
    pairings are averaged over n_samples draws; the pass tolerance widens by
    the 3 sigma Monte-Carlo margin.
    """
    if testfields is None:
        testfields = catalog_testfields()
    _validate_testfields(testfields)
    if u.u0_dx is None:
        raise ValueError("gradient check needs u0_dx closures")
    d = u.domain.dim
    couplings = tuple(axis_couplings) if axis_couplings \
        else tuple(1 for _ in range(d))
    if axes is None:
        axes = [i for i in range(d) if couplings[i] == 1]
    eps_list = tuple(sorted(eps_list, reverse=True))
    carrier = OscillatorySequence("pure-oscillation", u.domain,
                                  v=lambda x, y: np.zeros(len(np.atleast_1d(
                                      x if d == 1 else x[:, 0]))),
                                  axis_couplings=couplings)

    if amplitude is not None:
        amp_seq = OscillatorySequence("random-amplitude", u.domain,
                                      v=lambda x, y: 0.0, amplitude=amplitude)
        amp_mean, amp_std = amp_seq.amplitude_stats()
    else:
        amp_mean, amp_std = 1.0, 0.0

    values: dict = {}
    limits: dict = {}
    errors: dict = {}
    mc_margin = 0.0
    for i in axes:
        for name, f in testfields.items():
            key = f"d{i}|{name}"
            det_limit = sigma_limit_value(
                TwoScaleFunction(u.domain,
                                 lambda x, y, _i=i: u.u0_dx[_i](x, y),
                                 check_gauge=False), f)
            if u.u1 is not None:
                osc_limit = sigma_limit_value(
                    TwoScaleFunction(u.domain,
                                     lambda x, y, _i=i: u.u1_dy[_i](x, y),
                                     check_gauge=False), f)
            else:
                osc_limit = 0.0
            limits[key] = det_limit + amp_mean * osc_limit
            vals, errs = [], []
            for eps in eps_list:
                nodes, weights = _scale_mesh(carrier, eps, q, 4, budget)
                y = carrier.cell_coords(eps, nodes)
                fv = f(nodes, y)
                det = float(np.dot(weights, u.u0_dx[i](nodes, y) * fv))
                if u.u1 is not None:
                    osc_field = (eps * u.u1_dx[i](nodes, y)
                                 + u.u1_dy[i](nodes, y))
                    osc = float(np.dot(weights, osc_field * fv))
                else:
                    osc = 0.0
                if amplitude is not None:
                    amps = amp_seq.draw_amplitudes(eps, seed, n_samples)
                    val = det + float(np.mean(amps)) * osc
                    mc_margin = max(mc_margin, 3.0 * amp_std * abs(osc)
                                    / math.sqrt(n_samples))
                else:
                    val = det + osc
                vals.append(val)
                errs.append(abs(val - limits[key]))
            values[key] = vals
            errors[key] = errs
    report = SigmaLimitReport(eps_list, values, limits, errors,
                              tol + mc_margin,
                              max(1e-3 * tol, mc_margin))
    return report.finalize()


def check_flux_liminf(a_map, seq: OscillatorySequence, eps_list=DEFAULT_EPS_LIST,
                      p: float = 3.0, tol: float = 1e-4, q: int = 8,
                      testfields=None,
                      budget: float = DEFAULT_POINT_BUDGET) -> dict:
    """Monotone flux pairing: liminf inequality and the equality case.

    a_map(x, y, lam) must be monotone in lam with (p-1)-growth; both are
    probed on random samples.  For a strongly convergent sequence the flux
    a(x, x/eps, v_eps) weakly two-scale converges to a(x, y, v0), which is
    verified against the test-field catalog.
    """
    if testfields is None:
        testfields = catalog_testfields()
    rng = np.random.default_rng(99)
    xs = rng.uniform(0, 1, 64)
    ys = rng.uniform(0, 1, 64)
    l1 = rng.uniform(-3, 3, 64)
    l2 = rng.uniform(-3, 3, 64)
    mono = (a_map(xs, ys, l1) - a_map(xs, ys, l2)) * (l1 - l2)
    if np.any(mono < -1e-12):
        raise ValueError("flux map fails the monotonicity probe")
    growth = np.abs(a_map(xs, ys, l1)) / (1.0 + np.abs(l1) ** (p - 1.0))
    if np.any(~np.isfinite(growth)) or np.max(growth) > 1e6:
        raise ValueError("flux map fails the (p-1)-growth probe")

    v_limit = seq.predicted_limit()
    pairing_limit = sigma_limit_value(
        TwoScaleFunction(seq.domain,
                         lambda x, y: a_map(x, y, v_limit.u0(x, y))
                         * v_limit.u0(x, y), check_gauge=False),
        lambda x, y: np.ones(np.shape(np.atleast_1d(x))[0]))
    eps_list = tuple(sorted(eps_list, reverse=True))
    flux_integrals = []
    for eps in eps_list:
        nodes, weights = _scale_mesh(seq, eps, q, 4, budget)
        y = seq.cell_coords(eps, nodes)
        v = seq.sample(eps, 0)(nodes)
        flux_integrals.append(float(np.dot(weights, a_map(nodes, y, v) * v)))
    tail = flux_integrals[-3:]
    liminf_ok = pairing_limit <= min(tail) + tol
    equality_gap = abs(flux_integrals[-1] - pairing_limit)

    flux_seq = OscillatorySequence(
        "pure-oscillation", seq.domain,
        v=None, eps1=seq.eps1, eps2=seq.eps2,
        axis_couplings=seq.axis_couplings)
    base_sampler = seq.sample

    def flux_sample(eps, seed=None, _base=base_sampler):
        u = _base(eps, seed)
        return lambda x: a_map(x, flux_seq.cell_coords(eps, x), u(x))

    flux_seq.sample = flux_sample  # type: ignore[method-assign]
    flux_seq.v = lambda x, y: a_map(x, y, v_limit.u0(x, y))
    weak_report = check_weak_sigma(flux_seq, None, testfields, eps_list,
                                   max(tol, 1e-3), q, budget=budget)
    return {"pairing_limit": pairing_limit,
            "flux_integrals": flux_integrals,
            "liminf_ok": bool(liminf_ok),
            "equality_gap": float(equality_gap),
            "weak_flux_report": weak_report,
            "passed": bool(liminf_ok and equality_gap <= max(tol, 1e-3)
                           and weak_report.passed)}


# ---------------------------------------------------------------------------
# built-in catalog

def catalog_testfields() -> dict:
    """The finite generating family used across convergence checks."""
    return {
        "one": lambda x, y: np.ones(np.shape(np.atleast_1d(x))[0]),
        "x": lambda x, y: np.asarray(x, float),
        "cos-cell": lambda x, y: np.cos(2 * np.pi * np.asarray(y, float)),
        "sin-cell": lambda x, y: np.sin(2 * np.pi * np.asarray(y, float)),
        "x-cos-cell": lambda x, y: np.asarray(x, float)
        * np.cos(2 * np.pi * np.asarray(y, float)),
    }


def catalog_sequences() -> dict:
    """Six strongly two-scale convergent reference sequences on (0, 1)."""
    Q = UNIT_INTERVAL
    two_scale = TwoScaleFunction(
        Q,
        u0=lambda x, y: np.asarray(x, float) ** 2,
        u1=lambda x, y: np.sin(2 * np.pi * np.asarray(x, float))
        * np.sin(2 * np.pi * np.asarray(y, float)) / (2 * np.pi),
        u0_dx=[lambda x, y: 2.0 * np.asarray(x, float)],
        u1_dx=[lambda x, y: np.cos(2 * np.pi * np.asarray(x, float))
               * np.sin(2 * np.pi * np.asarray(y, float))],
        u1_dy=[lambda x, y: np.sin(2 * np.pi * np.asarray(x, float))
               * np.cos(2 * np.pi * np.asarray(y, float))])
    return {
        "constant": OscillatorySequence(
            "pure-oscillation", Q, v=lambda x, y: np.ones_like(
                np.asarray(x, float)), name="constant"),
        "pure-sin": OscillatorySequence(
            "pure-oscillation", Q, v=lambda x, y: np.sin(2 * np.pi * y),
            name="pure-sin"),
        "pure-sin-squared": OscillatorySequence(
            "pure-oscillation", Q, v=lambda x, y: np.sin(2 * np.pi * y) ** 2,
            name="pure-sin-squared"),
        "x-times-cos": OscillatorySequence(
            "pure-oscillation", Q,
            v=lambda x, y: np.asarray(x, float) * np.cos(2 * np.pi * y),
            name="x-times-cos"),
        "two-scale-expansion": OscillatorySequence(
            "two-scale-expansion", Q, two_scale=two_scale,
            name="two-scale-expansion"),
        "shifted-planewave": OscillatorySequence(
            "pure-oscillation", Q,
            v=lambda x, y: np.cos(2 * np.pi * y + np.asarray(x, float)),
            name="shifted-planewave"),
    }
