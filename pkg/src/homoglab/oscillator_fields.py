"""Concrete oscillating generators with mean values and cell calculus.

A field here is a bounded uniformly continuous function of a cell variable,
drawn from one of four generator classes: trigonometric polynomials on a
periodic torus, trigonometric sums with declared (quasiperiodic) frequencies,
sampled or piecewise-constant periodic data, and non-ergodic slow oscillations
cos(|z + a|^alpha) with alpha in (0, 1).  Each class supports evaluation,
mean values (exact bookkeeping, cell quadrature, or expanding-window Cesaro
averages with Richardson extrapolation), Besicovitch p-seminorms, and, where
the generator is smooth, exact cell derivatives.
"""

from __future__ import annotations

import base64
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import ndimage, special
from scipy.interpolate import CubicSpline

from .errors import BudgetError, UnsupportedOperationError
from .quadrature import (cell_nodes, merge_edges, panel_nodes,
                         uniform_panel_nodes)

KIND_PERIODIC = "periodic-torus"
KIND_QUASI = "quasiperiodic"
KIND_SLOW = "slow-oscillation"

GEN_TRIG = "trig-polynomial"
GEN_GRID = "grid-sample"
GEN_PIECEWISE = "piecewise-constant"
GEN_SLOW = "slow-oscillation"
GEN_CALLABLE = "_callable"

DEFAULT_WINDOW_R0 = 1e3
DEFAULT_WINDOW_DOUBLINGS = 8

_POINT_BUDGET = 4e7


@dataclass(frozen=True)
class CellGeometry:
    """Declared cell structure of a generator.

    kind selects the averaging realization: unit torus with Lebesgue measure,
    declared-frequency bookkeeping, or expanding-window Cesaro averages.
    Rational independence of quasiperiodic frequencies is recorded as declared,
    not verified.
    """

    dimension: int
    kind: str
    periods: tuple = ()
    base_frequencies: tuple = ()
    alpha: float = 0.0
    shifts: tuple = ()
    independent: bool = True

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if self.kind not in (KIND_PERIODIC, KIND_QUASI, KIND_SLOW):
            raise ValueError(f"unknown cell kind {self.kind!r}")
        if self.kind == KIND_PERIODIC:
            periods = self.periods or tuple(1.0 for _ in range(self.dimension))
            if len(periods) != self.dimension:
                raise ValueError("period vector length != dimension")
            if any(p <= 0 for p in periods):
                raise ValueError("periods must be strictly positive")
            object.__setattr__(self, "periods", tuple(float(p) for p in periods))
        if self.kind == KIND_QUASI and not self.base_frequencies:
            raise ValueError("quasiperiodic geometry needs base frequencies")
        if self.kind == KIND_SLOW and not (0.0 < self.alpha < 1.0):
            raise ValueError("slow-oscillation exponent must lie in (0, 1)")


@dataclass(frozen=True)
class MeanValueEstimate:
    """A mean value together with how it was obtained.

    For method 'exact' the error estimate is identically zero.  For
    'expanding-window' the value is the Richardson-style extrapolant of the
    window averages and the error estimate bounds the last two increments
    (plus an analytic envelope when the generator admits one).
    """

    value: float
    method: str
    radii: tuple = ()
    error_estimate: float = 0.0
    diverged: bool = False

    def __post_init__(self):
        if self.method == "exact" and self.error_estimate != 0.0:
            raise ValueError("exact estimates carry zero error")
        if self.error_estimate < 0.0:
            raise ValueError("error estimate must be >= 0")


class OscillatoryField:
    """One generator plus an optional multiplicative time-cell factor."""

    def __init__(self, geometry: CellGeometry, generator: str, payload: dict,
                 time_factor: "OscillatoryField | None" = None):
        self.geometry = geometry
        self.generator = generator
        self.payload = payload
        self.time_factor = time_factor
        if time_factor is not None and time_factor.geometry.dimension != 1:
            raise ValueError("time-cell factor must be one dimensional")
        self._validate()

    # -- construction helpers ------------------------------------------------

    def _validate(self):
        g = self.generator
        if g == GEN_TRIG:
            freqs = np.atleast_2d(np.asarray(self.payload["freqs"], float))
            if freqs.shape[1] != self.geometry.dimension:
                raise ValueError("frequency vectors do not match dimension")
            self.payload["freqs"] = freqs
            self.payload["amps"] = np.asarray(self.payload["amps"], float)
            self.payload["phases"] = np.asarray(self.payload["phases"], float)
        elif g == GEN_GRID:
            values = np.asarray(self.payload["values"], float)
            if values.ndim != self.geometry.dimension:
                raise ValueError("grid array rank != dimension")
            order = int(self.payload.get("order", 1))
            if order not in (1, 3):
                raise ValueError("interpolation order must be 1 or 3")
            self.payload["values"] = values
            self.payload["order"] = order
            if order == 3:
                self.payload["coeffs"] = ndimage.spline_filter(
                    values, order=3, mode="grid-wrap")
        elif g == GEN_PIECEWISE:
            breaks = [np.asarray(b, float) for b in self.payload["breakpoints"]]
            values = np.asarray(self.payload["values"], float)
            if len(breaks) != self.geometry.dimension:
                raise ValueError("need one breakpoint list per coordinate")
            for d, b in enumerate(breaks):
                if b[0] != 0.0 or not np.isclose(b[-1], self.geometry.periods[d]):
                    raise ValueError("breakpoints must span [0, period]")
                if np.any(np.diff(b) <= 0):
                    raise ValueError("breakpoints must increase")
                if values.shape[d] != len(b) - 1:
                    raise ValueError("values shape does not match breakpoints")
            self.payload["breakpoints"] = breaks
            self.payload["values"] = values
        elif g == GEN_SLOW:
            terms = []
            for coeff, shifts in self.payload["terms"]:
                shifts = [np.atleast_1d(np.asarray(s, float)) for s in shifts]
                for s in shifts:
                    if s.shape != (self.geometry.dimension,):
                        raise ValueError("shift does not match dimension")
                terms.append((float(coeff), shifts))
            self.payload["terms"] = terms
        elif g == GEN_CALLABLE:
            pass
        else:
            raise ValueError(f"unknown generator {g!r}")

    # -- evaluation ----------------------------------------------------------

    def _coerce(self, y):
        n = self.geometry.dimension
        arr = np.asarray(y, dtype=float)
        if n == 1:
            if arr.ndim == 0:
                return arr.reshape(1, 1), True
            if arr.ndim == 1:
                return arr.reshape(-1, 1), False
            if arr.ndim == 2 and arr.shape[1] == 1:
                return arr, False
        else:
            if arr.ndim == 1 and arr.shape[0] == n:
                return arr.reshape(1, n), True
            if arr.ndim == 2 and arr.shape[1] == n:
                return arr, False
        raise ValueError(
            f"point shape {arr.shape} does not match dimension {n}")

    def _eval_space(self, pts: np.ndarray) -> np.ndarray:
        g = self.generator
        if g == GEN_TRIG:
            phase = 2.0 * np.pi * pts @ self.payload["freqs"].T + self.payload["phases"]
            return np.cos(phase) @ self.payload["amps"]
        if g == GEN_GRID:
            values = self.payload["values"]
            periods = np.asarray(self.geometry.periods)
            shape = np.asarray(values.shape)
            coords = (pts / periods * shape).T
            if self.payload["order"] == 1:
                return ndimage.map_coordinates(values, coords, order=1,
                                               mode="grid-wrap")
            return ndimage.map_coordinates(self.payload["coeffs"], coords,
                                           order=3, mode="grid-wrap",
                                           prefilter=False)
        if g == GEN_PIECEWISE:
            periods = self.geometry.periods
            idx = []
            for d, b in enumerate(self.payload["breakpoints"]):
                frac = np.mod(pts[:, d], periods[d])
                idx.append(np.clip(np.searchsorted(b, frac, side="right") - 1,
                                   0, len(b) - 2))
            return self.payload["values"][tuple(idx)]
        if g == GEN_SLOW:
            alpha = self.geometry.alpha
            out = np.zeros(pts.shape[0])
            for coeff, shifts in self.payload["terms"]:
                term = np.full(pts.shape[0], coeff)
                for s in shifts:
                    radius = np.linalg.norm(pts + s, axis=1)
                    term = term * np.cos(radius ** alpha)
                out += term
            return out
        if g == GEN_CALLABLE:
            return np.asarray(self.payload["func"](pts[:, 0] if
                                                   self.geometry.dimension == 1
                                                   else pts), float)
        raise AssertionError(g)

    def evaluate(self, y, tau=None):
        pts, scalar = self._coerce(y)
        vals = self._eval_space(pts)
        if self.time_factor is not None:
            if tau is None:
                raise ValueError("field has a time-cell factor; pass tau")
            tvals = self.time_factor.evaluate(np.broadcast_to(
                np.asarray(tau, float), (pts.shape[0],)).copy())
            vals = vals * np.atleast_1d(tvals)
        elif tau is not None and np.ndim(tau) > 0:
            pass  # tau ignored for purely spatial fields
        return float(vals[0]) if scalar else vals

    def sup_probe(self, n: int = 4096) -> float:
        """Sup of |f| over a dense probe set (boundedness invariant)."""
        rng = np.random.default_rng(0)
        d = self.geometry.dimension
        if self.geometry.kind == KIND_PERIODIC:
            pts = rng.uniform(0.0, self.geometry.periods, size=(n, d))
        else:
            pts = rng.uniform(-100.0, 100.0, size=(n, d))
        vals = self._eval_space(pts)
        if not np.all(np.isfinite(vals)):
            raise ValueError("field evaluates to non-finite values")
        return float(np.max(np.abs(vals)))


# ---------------------------------------------------------------------------
# factories

def trig_polynomial(terms, dimension: int = 1, periods=None) -> OscillatoryField:
    """Periodic trig polynomial sum(amp * cos(2 pi k.y/P + phase)).

    `terms` is a list of (k, amp, phase) with integer mode vectors k
    (scalars accepted in one dimension).
    """
    geometry = CellGeometry(dimension, KIND_PERIODIC,
                            periods=tuple(periods) if periods else ())
    p = np.asarray(geometry.periods)
    freqs, amps, phases, raw = [], [], [], []
    for k, amp, phase in terms:
        kvec = np.atleast_1d(np.asarray(k, float))
        raw.append((kvec.tolist(), float(amp), float(phase)))
        freqs.append(kvec / p)
        amps.append(float(amp))
        phases.append(float(phase))
    return OscillatoryField(geometry, GEN_TRIG,
                            {"freqs": np.array(freqs), "amps": amps,
                             "phases": phases, "raw_terms": raw})


def quasiperiodic_field(terms, dimension: int = 1,
                        base_frequencies=None) -> OscillatoryField:
    """Trig sum with declared real frequency vectors (cycles per unit length)."""
    freqs = [np.atleast_1d(np.asarray(k, float)) for k, _, _ in terms]
    base = base_frequencies or [f.tolist() for f in freqs]
    geometry = CellGeometry(dimension, KIND_QUASI,
                            base_frequencies=tuple(tuple(np.atleast_1d(b))
                                                   for b in base))
    raw = [(np.atleast_1d(np.asarray(k, float)).tolist(), float(a), float(ph))
           for k, a, ph in terms]
    return OscillatoryField(geometry, GEN_TRIG,
                            {"freqs": np.array(freqs),
                             "amps": [a for _, a, _ in terms],
                             "phases": [ph for _, _, ph in terms],
                             "raw_terms": raw})


def constant_field(c: float, dimension: int = 1) -> OscillatoryField:
    return trig_polynomial([(np.zeros(dimension), c, 0.0)], dimension)


def grid_sample(values, order: int = 1, periods=None) -> OscillatoryField:
    """Periodic interpolation of samples on a uniform cell grid.

    values[i] sits at y = i * period / n; the interpolant wraps around.
    """
    values = np.asarray(values, float)
    geometry = CellGeometry(values.ndim, KIND_PERIODIC,
                            periods=tuple(periods) if periods else ())
    return OscillatoryField(geometry, GEN_GRID,
                            {"values": values, "order": order})


def piecewise_constant(breakpoints, values, periods=None) -> OscillatoryField:
    """Piecewise-constant periodic field; breakpoints span [0, period]."""
    if np.ndim(breakpoints[0]) == 0:
        breakpoints = [breakpoints]
    dimension = len(breakpoints)
    geometry = CellGeometry(dimension, KIND_PERIODIC,
                            periods=tuple(periods) if periods else ())
    return OscillatoryField(geometry, GEN_PIECEWISE,
                            {"breakpoints": [np.asarray(b, float)
                                             for b in breakpoints],
                             "values": np.asarray(values, float)})


def slow_oscillation(terms, alpha: float, dimension: int = 1) -> OscillatoryField:
    """Sum of coeff * prod_j cos(|z + a_j|^alpha) terms.

    `terms` is a list of (coeff, [shift, ...]); an empty shift list gives a
    constant term.  Negative arguments use the even extension cos(|z|^alpha).
    """
    shifts = tuple(float(np.atleast_1d(s)[0]) for _, ss in terms for s in ss)
    geometry = CellGeometry(dimension, KIND_SLOW, alpha=float(alpha),
                            shifts=shifts)
    return OscillatoryField(geometry, GEN_SLOW, {"terms": list(terms)})


def with_time_factor(space: OscillatoryField,
                     time: OscillatoryField) -> OscillatoryField:
    """Product-algebra field f(y, tau) = f_space(y) * f_time(tau)."""
    return OscillatoryField(space.geometry, space.generator, dict(space.payload),
                            time_factor=time)


def evaluate(field: OscillatoryField, y, tau=None):
    """Evaluate the generator at cell point(s) y (and time-cell tau)."""
    return field.evaluate(y, tau)


# ---------------------------------------------------------------------------
# mean values

def _exact_space_mean(f: OscillatoryField) -> float:
    g = f.generator
    if g == GEN_TRIG:
        freqs = f.payload["freqs"]
        amps = np.asarray(f.payload["amps"])
        phases = np.asarray(f.payload["phases"])
        zero = np.linalg.norm(freqs, axis=1) < 1e-12
        return float(np.sum(amps[zero] * np.cos(phases[zero])))
    if g == GEN_GRID:
        return float(np.mean(f.payload["values"]))
    if g == GEN_PIECEWISE:
        vals = f.payload["values"]
        out = vals
        for d in reversed(range(vals.ndim)):
            widths = np.diff(f.payload["breakpoints"][d])
            out = np.tensordot(out, widths / f.geometry.periods[d], axes=([d], [0]))
        return float(out)
    if g == GEN_CALLABLE:
        if f.payload.get("exact_mean") is not None:
            return float(f.payload["exact_mean"])
        raise UnsupportedOperationError("no exact mean for derived callables")
    raise UnsupportedOperationError(
        "slow-oscillation fields have no exact mean; use expanding-window")


def _cell_quadrature_mean(f: OscillatoryField, n_panels: int, order: int,
                          transform=None):
    """Cell average by composite GL, with a half-resolution error estimate."""
    if f.geometry.kind == KIND_QUASI:
        # frequency-module bookkeeping is already the torus integral
        if transform is None:
            return _exact_space_mean(f), 0.0
        raise UnsupportedOperationError(
            "cell-quadrature of transformed quasiperiodic fields; "
            "use expanding-window")
    if f.geometry.kind != KIND_PERIODIC:
        raise UnsupportedOperationError(
            "cell-quadrature needs a periodic or quasiperiodic field")
    tf = transform if transform is not None else (lambda v: v)

    def average(npan):
        pts, w = cell_nodes(f.geometry.dimension, npan, order,
                            f.geometry.periods)
        pts2 = pts.reshape(-1, 1) if pts.ndim == 1 else pts
        vol = float(np.prod(f.geometry.periods))
        return float(np.dot(w, tf(f._eval_space(pts2)))) / vol

    coarse = average(max(2, n_panels // 2))
    fine = average(n_panels)
    return fine, abs(fine - coarse)


# -- expanding windows -------------------------------------------------------

def _slow_term_edges(shifts, alpha, lo, hi):
    """Panel edges keeping every factor's phase step below pi/2 on [lo, hi]."""
    sets = []
    for s in shifts:
        a = float(np.atleast_1d(s)[0])
        top = max(abs(lo + a), abs(hi + a)) ** alpha
        m = np.arange(0.0, top + 0.5 * np.pi, 0.5 * np.pi)
        locs = m ** (1.0 / alpha)
        sets.append(np.concatenate([-a - locs[::-1], -a + locs]))
    return sets


def _slow_window_average_1d(f, r, transform):
    alpha = f.geometry.alpha
    shift_sets = _slow_term_edges(
        [s for _, ss in f.payload["terms"] for s in ss], alpha, -r, r)
    edges = merge_edges(-r, r, *shift_sets)
    tf = transform if transform is not None else (lambda v: v)
    nodes, w = panel_nodes(edges)
    vals = tf(f._eval_space(nodes.reshape(-1, 1)))
    return float(np.dot(w, vals)) / (2.0 * r)


def _slow_window_average_radial(f, r, transform):
    """Ball average in dimension d >= 2 for shift-free radial generators."""
    d = f.geometry.dimension
    alpha = f.geometry.alpha
    for _, shifts in f.payload["terms"]:
        for s in shifts:
            if np.linalg.norm(s) != 0.0:
                raise UnsupportedOperationError(
                    "expanding-window in dimension >= 2 supports only "
                    "shift-free slow-oscillation generators")
    top = r ** alpha
    m = np.arange(0.0, top + 0.5 * np.pi, 0.5 * np.pi)
    edges = merge_edges(0.0, r, m ** (1.0 / alpha))
    tf = transform if transform is not None else (lambda v: v)
    nodes, w = panel_nodes(edges)
    pts = np.zeros((nodes.size, d))
    pts[:, 0] = nodes  # radial: evaluate along the first axis
    vals = tf(f._eval_space(pts))
    return float(d / r ** d * np.dot(w, nodes ** (d - 1) * vals))


def _trig_window_average(f, r):
    """Exact ball average of a trig sum (1-d sinc, 2-d/3-d Bessel forms)."""
    freqs = f.payload["freqs"]
    amps = np.asarray(f.payload["amps"])
    phases = np.asarray(f.payload["phases"])
    d = f.geometry.dimension
    norms = np.linalg.norm(freqs, axis=1)
    out = 0.0
    for fn, amp, ph in zip(norms, amps, phases):
        if fn < 1e-12:
            out += amp * math.cos(ph)
            continue
        zeta = 2.0 * np.pi * fn * r
        if d == 1:
            shape = math.sin(zeta) / zeta
        elif d == 2:
            shape = 2.0 * special.j1(zeta) / zeta
        elif d == 3:
            shape = 3.0 * (math.sin(zeta) - zeta * math.cos(zeta)) / zeta ** 3
        else:
            raise UnsupportedOperationError(
                "trig window averages implemented for dimension <= 3")
        out += amp * math.cos(ph) * shape
    return float(out)


def _periodic_window_average_1d(f, r, transform, n_per_cell=16):
    """Window average of a periodic 1-d field: cell mean plus end corrections."""
    period = f.geometry.periods[0]
    if transform is None and f.generator == GEN_TRIG:
        return _trig_window_average(f, r)
    mean, _ = _cell_quadrature_mean(f, 64, 4, transform)
    tf = transform if transform is not None else (lambda v: v)

    def knots(lo, hi):
        if f.generator == GEN_PIECEWISE:
            base = f.payload["breakpoints"][0]
        elif f.generator == GEN_GRID:
            n = f.payload["values"].shape[0]
            base = np.linspace(0.0, period, n + 1)
        else:
            base = np.linspace(0.0, period, n_per_cell + 1)
        k0 = math.floor(lo / period)
        k1 = math.ceil(hi / period)
        cells = [base[:-1] + k * period for k in range(k0, k1 + 1)]
        return merge_edges(lo, hi, np.concatenate(cells))

    def partial(lo, hi):
        if hi - lo < 1e-300:
            return 0.0
        nodes, w = panel_nodes(knots(lo, hi))
        return float(np.dot(w, tf(f._eval_space(nodes.reshape(-1, 1)))))

    # whole periods contribute the mean exactly; integrate only the stubs
    lo_cell = math.ceil(-r / period) * period
    hi_cell = math.floor(r / period) * period
    if hi_cell <= lo_cell:
        return partial(-r, r) / (2.0 * r)
    full = (hi_cell - lo_cell) / period * (mean * period)
    return (full + partial(-r, lo_cell) + partial(hi_cell, r)) / (2.0 * r)


def _quasi_window_average_1d(f, r, transform, order=4):
    freqs = np.abs(f.payload["freqs"][:, 0])
    if transform is None:
        return _trig_window_average(f, r)
    fmax = float(np.max(freqs)) if freqs.size else 1.0
    n_panels = int(np.ceil(2.0 * r * max(fmax, 0.5) * 8))
    if n_panels * order > _POINT_BUDGET:
        raise BudgetError(
            f"window quadrature would need {n_panels} panels at r={r:g}")
    nodes, w = uniform_panel_nodes(-r, r, n_panels, order)
    vals = transform(f._eval_space(nodes.reshape(-1, 1)))
    return float(np.dot(w, vals)) / (2.0 * r)


def _window_envelope(f, r, transform) -> float | None:
    """Rigorous (or asymptotically safe) bound on |A(r) - M(f)| when known."""
    if transform is not None:
        return None
    g = f.generator
    if g == GEN_TRIG:
        freqs = f.payload["freqs"]
        amps = np.abs(np.asarray(f.payload["amps"]))
        norms = np.linalg.norm(freqs, axis=1)
        osc = norms > 1e-12
        if not np.any(osc):
            return 0.0
        zeta = 2.0 * np.pi * norms[osc] * r
        d = f.geometry.dimension
        if d == 1:
            shapes = 1.0 / zeta
        elif d == 2:
            shapes = 2.0 * np.sqrt(2.0 / (np.pi * zeta)) / zeta
        elif d == 3:
            shapes = 6.0 / zeta ** 2
        else:
            return None
        return float(np.sum(amps[osc] * shapes))
    if g in (GEN_GRID, GEN_PIECEWISE) and f.geometry.dimension == 1:
        period = f.geometry.periods[0]
        m = _exact_space_mean(f)
        sup = f.sup_probe(2048)
        return float(period * (sup + abs(m)) / r)
    if g == GEN_SLOW:
        alpha = f.geometry.alpha
        total = 0.0
        for coeff, shifts in f.payload["terms"]:
            if len(shifts) == 0:
                continue
            if len(shifts) > 1:
                return None  # no envelope for products of oscillations
            a = float(np.linalg.norm(shifts[0]))
            if r < 10.0 * max(a, 1.0):
                return None
            total += abs(coeff) * (2.0 / alpha) / r ** alpha
        return total
    return None


def _window_average(f, r, transform):
    kind = f.geometry.kind
    d = f.geometry.dimension
    if kind == KIND_SLOW:
        if d == 1:
            return _slow_window_average_1d(f, r, transform)
        return _slow_window_average_radial(f, r, transform)
    if kind == KIND_PERIODIC:
        if d == 1:
            return _periodic_window_average_1d(f, r, transform)
        if f.generator == GEN_TRIG and transform is None:
            return _trig_window_average(f, r)
        raise UnsupportedOperationError(
            "expanding-window in dimension >= 2 is limited to trig "
            "polynomials and shift-free slow oscillations")
    if kind == KIND_QUASI:
        if d == 1:
            return _quasi_window_average_1d(f, r, transform)
        if f.generator == GEN_TRIG and transform is None:
            return _trig_window_average(f, r)
        raise UnsupportedOperationError(
            "expanding-window in dimension >= 2 is limited to trig "
            "polynomials and shift-free slow oscillations")
    raise AssertionError(kind)


def _extrapolate(averages: np.ndarray, envelope: float | None):
    """Richardson-style extrapolation of the window-average ladder.

    Uses the last increment ratio when it indicates clean geometric decay;
    otherwise returns the last average.  The error estimate bounds the last
    two increments, and divergence is declared when the last increment
    exceeds half the previous one.
    """
    a = np.asarray(averages, float)
    if a.size == 1:
        return float(a[-1]), 0.0 if envelope is None else float(envelope), False
    d1 = a[-1] - a[-2]
    d0 = a[-2] - a[-3] if a.size >= 3 else d1
    value = a[-1]
    correction = 0.0
    tiny = 1e-14 * (1.0 + np.max(np.abs(a)))
    if abs(d0) > tiny:
        rho = d1 / d0
        if 0.0 < rho < 0.9:
            correction = d1 * rho / (1.0 - rho)
            value = a[-1] + correction
    increments = max(abs(d1), abs(d0), abs(correction))
    if envelope is not None:
        # envelope bounds |A_K - M|, so envelope + |correction| bounds the
        # extrapolant's distance from M while still covering the increments
        err = envelope + increments
    else:
        err = increments
    diverged = abs(d1) > 0.5 * abs(d0) + tiny
    return float(value), float(err), bool(diverged)


def _expanding_window_estimate(f, r0, n_doublings, transform):
    radii = tuple(r0 * 2.0 ** k for k in range(n_doublings + 1))
    averages = [_window_average(f, r, transform) for r in radii]
    envelope = _window_envelope(f, radii[-1], transform)
    value, err, diverged = _extrapolate(np.array(averages), envelope)
    return MeanValueEstimate(value, "expanding-window", radii, err, diverged)


def _combine_product(space_est: MeanValueEstimate,
                     time_est: MeanValueEstimate) -> MeanValueEstimate:
    value = space_est.value * time_est.value
    err = (abs(space_est.value) * time_est.error_estimate
           + abs(time_est.value) * space_est.error_estimate
           + space_est.error_estimate * time_est.error_estimate)
    method = space_est.method
    if err == 0.0 and time_est.method == "exact" and method == "exact":
        method = "exact"
    elif method == "exact":
        method = time_est.method
    return MeanValueEstimate(value, method, space_est.radii + time_est.radii,
                             err, space_est.diverged or time_est.diverged)


def _auto_method(f: OscillatoryField) -> str:
    if f.geometry.kind == KIND_SLOW:
        return "expanding-window"
    if f.generator == GEN_CALLABLE and f.payload.get("exact_mean") is None:
        return "cell-quadrature"
    return "exact"


def mean_value(field: OscillatoryField, method: str = "auto",
               n_panels: int = 64, order: int = 4,
               r0: float = DEFAULT_WINDOW_R0,
               n_doublings: int = DEFAULT_WINDOW_DOUBLINGS,
               _transform=None) -> MeanValueEstimate:
    """Mean value M(f) of the generator.

    method: 'exact' (zero-frequency bookkeeping or cell average),
    'cell-quadrature' (composite GL over the cell), 'expanding-window'
    (Cesaro averages over balls B_r, r = r0 * 2^k, extrapolated), or 'auto'.
    """
    if method == "auto":
        method = _auto_method(field)
    if field.time_factor is not None:
        space_only = OscillatoryField(field.geometry, field.generator,
                                      dict(field.payload))
        se = mean_value(space_only, method, n_panels, order, r0, n_doublings,
                        _transform)
        tmethod = method if method != "expanding-window" or \
            field.time_factor.geometry.kind == KIND_SLOW else "auto"
        te = mean_value(field.time_factor, tmethod, n_panels, order, r0,
                        n_doublings, _transform)
        return _combine_product(se, te)

    if method == "exact":
        if _transform is not None:
            raise UnsupportedOperationError("transformed means are not exact")
        return MeanValueEstimate(_exact_space_mean(field), "exact")
    if method == "cell-quadrature":
        value, err = _cell_quadrature_mean(field, n_panels, order, _transform)
        return MeanValueEstimate(value, "cell-quadrature", (), err)
    if method == "expanding-window":
        return _expanding_window_estimate(field, r0, n_doublings, _transform)
    raise ValueError(f"unknown mean-value method {method!r}")


def besicovitch_seminorm(field: OscillatoryField, p: float,
                         method: str = "auto", **params) -> MeanValueEstimate:
    """Seminorm ||f||_p = M(|f|^p)^(1/p)."""
    if not np.isfinite(p) or p < 1.0:
        raise ValueError("need 1 <= p < infinity")
    if method == "auto":
        if field.generator == GEN_PIECEWISE and field.time_factor is None:
            # |f|^p is itself piecewise constant: exact bookkeeping
            powered = OscillatoryField(
                field.geometry, GEN_PIECEWISE,
                {"breakpoints": field.payload["breakpoints"],
                 "values": np.abs(field.payload["values"]) ** p})
            return MeanValueEstimate(_exact_space_mean(powered) ** (1.0 / p),
                                     "exact")
        method = ("expanding-window" if field.geometry.kind in (KIND_SLOW,)
                  or (field.geometry.kind == KIND_QUASI) else "cell-quadrature")
    est = mean_value(field, method, _transform=lambda v: np.abs(v) ** p,
                     **params)
    mean = max(est.value, 0.0)
    value = mean ** (1.0 / p)
    if est.error_estimate == 0.0:
        err = 0.0
    elif mean > est.error_estimate:
        err = est.error_estimate / (p * mean ** ((p - 1.0) / p))
    else:
        err = est.error_estimate ** (1.0 / p)
    return MeanValueEstimate(value, est.method, est.radii, err, est.diverged)


# ---------------------------------------------------------------------------
# cell derivatives

def cell_derivative(field: OscillatoryField, i: int) -> OscillatoryField:
    """Exact cell derivative d f / d y_i where the generator is smooth.

    Trig polynomials differentiate in the frequency domain; periodic cubic
    grid samples differentiate through their spline (one dimension).  The
    mean value of the result is zero.
    """
    n = field.geometry.dimension
    if not 0 <= i < n:
        raise ValueError(f"coordinate index {i} out of range for dimension {n}")
    g = field.generator
    if g == GEN_TRIG:
        freqs = field.payload["freqs"]
        amps = np.asarray(field.payload["amps"])
        phases = np.asarray(field.payload["phases"])
        new_amps = amps * 2.0 * np.pi * freqs[:, i]
        out = OscillatoryField(field.geometry, GEN_TRIG,
                               {"freqs": freqs, "amps": new_amps,
                                "phases": phases + 0.5 * np.pi},
                               time_factor=field.time_factor)
        return out
    if g == GEN_GRID and field.payload["order"] == 3 and n == 1:
        values = field.payload["values"]
        period = field.geometry.periods[0]
        x = np.linspace(0.0, period, values.shape[0] + 1)
        spline = CubicSpline(x, np.append(values, values[0]),
                             bc_type="periodic")
        deriv = spline.derivative()

        def func(y, _d=deriv, _p=period):
            return _d(np.mod(y, _p))

        return OscillatoryField(field.geometry, GEN_CALLABLE,
                                {"func": func, "exact_mean": 0.0},
                                time_factor=field.time_factor)
    raise UnsupportedOperationError(
        f"cell derivative undefined for generator {g!r} "
        f"(order {field.payload.get('order')}, dimension {n})")


# ---------------------------------------------------------------------------
# serialization

def field_to_json(field: OscillatoryField) -> dict:
    """Serializable descriptor; grid samples embed base64 little-endian f8."""
    geo = field.geometry
    gd = {"dimension": geo.dimension, "kind": geo.kind}
    if geo.kind == KIND_PERIODIC:
        gd["periods"] = list(geo.periods)
    if geo.kind == KIND_QUASI:
        gd["base_frequencies"] = [list(b) for b in geo.base_frequencies]
    if geo.kind == KIND_SLOW:
        gd["alpha"] = geo.alpha
    doc: dict = {"geometry": gd, "kind": field.generator}
    g = field.generator
    if g == GEN_TRIG:
        if "raw_terms" in field.payload:
            doc["terms"] = [list(t) for t in field.payload["raw_terms"]]
        else:
            doc["terms"] = [[list(f_), float(a), float(ph)] for f_, a, ph in
                            zip(field.payload["freqs"], field.payload["amps"],
                                field.payload["phases"])]
    elif g == GEN_GRID:
        values = field.payload["values"]
        doc["shape"] = list(values.shape)
        doc["order"] = field.payload["order"]
        doc["data"] = base64.b64encode(
            np.ascontiguousarray(values, "<f8").tobytes()).decode("ascii")
    elif g == GEN_PIECEWISE:
        doc["breakpoints"] = [list(b) for b in field.payload["breakpoints"]]
        doc["values"] = field.payload["values"].tolist()
    elif g == GEN_SLOW:
        doc["terms"] = [[c, [np.atleast_1d(s).tolist() for s in ss]]
                        for c, ss in field.payload["terms"]]
    else:
        raise UnsupportedOperationError(
            "derived callable fields do not serialize")
    if field.time_factor is not None:
        doc["time_factor"] = field_to_json(field.time_factor)
    return doc


def field_from_json(doc: dict) -> OscillatoryField:
    gd = doc["geometry"]
    kind = doc["kind"]
    tf = field_from_json(doc["time_factor"]) if "time_factor" in doc else None
    if kind == GEN_TRIG:
        if gd["kind"] == KIND_PERIODIC:
            out = trig_polynomial([(k, a, ph) for k, a, ph in doc["terms"]],
                                  gd["dimension"], gd.get("periods"))
        else:
            out = quasiperiodic_field([(k, a, ph) for k, a, ph in doc["terms"]],
                                      gd["dimension"],
                                      gd.get("base_frequencies"))
    elif kind == GEN_GRID:
        data = np.frombuffer(base64.b64decode(doc["data"]),
                             dtype="<f8").reshape(doc["shape"]).copy()
        out = grid_sample(data, doc["order"], gd.get("periods"))
    elif kind == GEN_PIECEWISE:
        out = piecewise_constant(doc["breakpoints"], doc["values"],
                                 gd.get("periods"))
    elif kind == GEN_SLOW:
        out = slow_oscillation([(c, ss) for c, ss in doc["terms"]],
                               gd["alpha"], gd["dimension"])
    else:
        raise ValueError(f"unknown serialized kind {kind!r}")
    if tf is not None:
        out = with_time_factor(out, tf)
    return out
