"""Empirical oscillation statistics as (x, cell)-indexed value histograms.

For a scalar oscillating sequence on a 1D macroscopic interval, samples
(x_j, frac(x_j/eps_1), u_eps(x_j)) are binned into a normalized weight
tensor nu[x_bin][cell_bin][value_bin].  The histogram family approximates
the disintegrated limit law of the sequence: its barycenter is the weak
two-scale limit, concentration on a single value per (x, cell) bin
characterizes strong convergence, and pairings with integrands satisfy
the lower-semicontinuity inequality.
"""

from __future__ import annotations

import base64
import math
from dataclasses import dataclass

import numpy as np

from .errors import ClippedMassError, UnsupportedOperationError
from .sigma_limits import (DEFAULT_EPS_LIST, DEFAULT_POINT_BUDGET,
                           OscillatorySequence, TwoScaleFunction, _scale_mesh)

DEFAULT_BINS = (16, 32, 64)
DEFAULT_MIN_COUNT = 200

# fractional part of the golden ratio; Weyl increments equidistribute
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def weyl_points(n: int, lo: float, hi: float, seed: int = 0) -> np.ndarray:
    """Low-discrepancy sample of (lo, hi): x_j = lo + L*frac(j*phi + c)."""
    j = np.arange(n, dtype=float)
    offset = math.modf(0.5 + seed * _GOLDEN * _GOLDEN)[0]
    return lo + (hi - lo) * np.mod(j * _GOLDEN + offset, 1.0)


@dataclass(frozen=True)
class EmpiricalYoungMeasure:
    """Normalized value histogram per (x-bin, cell-bin).

    weights[i, j, :] sums to 1 wherever counts[i, j] > 0; starved marks
    (x, cell) bins that received fewer than min_count samples;
    clipped_fraction is the share of samples outside the value box.
    """

    x_edges: np.ndarray
    s_edges: np.ndarray
    lam_edges: np.ndarray
    weights: np.ndarray
    counts: np.ndarray
    starved: np.ndarray
    clipped_fraction: float
    eps: float
    min_count: int

    @property
    def x_centers(self) -> np.ndarray:
        return 0.5 * (self.x_edges[:-1] + self.x_edges[1:])

    @property
    def s_centers(self) -> np.ndarray:
        return 0.5 * (self.s_edges[:-1] + self.s_edges[1:])

    @property
    def lam_centers(self) -> np.ndarray:
        return 0.5 * (self.lam_edges[:-1] + self.lam_edges[1:])

    @property
    def x_bin_width(self) -> float:
        return float(self.x_edges[1] - self.x_edges[0])

    @property
    def cell_bin_width(self) -> float:
        return float(self.s_edges[1] - self.s_edges[0])

    @property
    def lambda_bin_width(self) -> float:
        return float(self.lam_edges[1] - self.lam_edges[0])

    def s_marginal_sigma_ratio(self) -> float:
        """Max deviation of the cell-bin marginal from uniform, in sigmas."""
        per_s = self.counts.sum(axis=0).astype(float)
        n = per_s.sum()
        p = 1.0 / per_s.size
        sigma = math.sqrt(n * p * (1.0 - p))
        return float(np.max(np.abs(per_s - n * p)) / sigma)

    def spread_grid(self) -> np.ndarray:
        """Per-(x, cell) mean absolute deviation from the bin barycenter."""
        bary = np.einsum("ijk,k->ij", self.weights, self.lam_centers)
        dev = np.abs(self.lam_centers[None, None, :] - bary[:, :, None])
        return np.einsum("ijk,ijk->ij", self.weights, dev)

    def to_csv(self) -> str:
        lines = ["x_bin,s_bin,lambda_bin,weight"]
        nz = np.argwhere(self.weights > 0)
        for i, j, k in nz:
            lines.append(f"{i},{j},{k},{self.weights[i, j, k]!r}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        bary = np.einsum("ijk,k->ij", self.weights, self.lam_centers)
        return {
            "x_edges": self.x_edges.tolist(),
            "s_edges": self.s_edges.tolist(),
            "lam_edges": self.lam_edges.tolist(),
            "barycenter_grid": bary.tolist(),
            "spread_grid": self.spread_grid().tolist(),
            "counts_b64": base64.b64encode(
                np.ascontiguousarray(self.counts, dtype="<i8").tobytes()
            ).decode("ascii"),
            "clipped_fraction": self.clipped_fraction,
            "eps": self.eps,
            "starved_bins": int(np.count_nonzero(self.starved)),
        }


def estimate_young_measure(seq: OscillatorySequence, eps: float,
                           bins=DEFAULT_BINS, n_samples: int | None = None,
                           min_count: int = DEFAULT_MIN_COUNT,
                           value_box=None, seed: int = 0
                           ) -> EmpiricalYoungMeasure:
    """Histogram the values of u_eps over (x-bin, cell-bin) pairs.

    x is sampled by a golden-ratio Weyl sequence (deterministic, uniform);
    the cell coordinate is frac(x/eps_1).  The value box defaults to the
    sampled min/max padded by 10% of the range; samples outside the box are
    dropped and accounted in clipped_fraction.
    """
    if seq.domain.dim != 1:
        raise UnsupportedOperationError(
            "value histograms are implemented for 1D macroscopic domains")
    n_x, n_s, n_lam = bins
    if n_samples is None:
        n_samples = int(math.ceil(1.6 * min_count * n_x * n_s))
    lo, hi = seq.domain.bounds[0]
    if eps >= (hi - lo) / n_x:
        raise ValueError("eps must be below the x-bin width so each x-bin "
                         "spans whole oscillation periods")
    x = weyl_points(n_samples, lo, hi, seed)
    lam = np.asarray(seq.sample(eps, seed)(x), float)
    s = np.mod(x / seq.eps1(eps), 1.0)

    if value_box is None:
        vmin, vmax = float(np.min(lam)), float(np.max(lam))
        span = vmax - vmin
        pad = 0.1 * span if span > 0 else max(1e-6, 0.05 * max(1.0, abs(vmin)))
        value_box = (vmin - pad, vmax + pad)
    blo, bhi = float(value_box[0]), float(value_box[1])
    if bhi <= blo:
        raise ValueError("empty value box")

    x_edges = np.linspace(lo, hi, n_x + 1)
    s_edges = np.linspace(0.0, 1.0, n_s + 1)
    lam_edges = np.linspace(blo, bhi, n_lam + 1)

    inside = (lam >= blo) & (lam <= bhi)
    clipped = 1.0 - float(np.count_nonzero(inside)) / n_samples
    xi = np.clip(((x[inside] - lo) / (hi - lo) * n_x).astype(int), 0, n_x - 1)
    si = np.clip((s[inside] * n_s).astype(int), 0, n_s - 1)
    li = np.clip(((lam[inside] - blo) / (bhi - blo) * n_lam).astype(int),
                 0, n_lam - 1)
    hist = np.zeros((n_x, n_s, n_lam), dtype=np.int64)
    np.add.at(hist, (xi, si, li), 1)

    counts = hist.sum(axis=2)
    weights = np.zeros_like(hist, dtype=float)
    occupied = counts > 0
    weights[occupied] = hist[occupied] / counts[occupied, None]
    return EmpiricalYoungMeasure(
        x_edges=x_edges, s_edges=s_edges, lam_edges=lam_edges,
        weights=weights, counts=counts, starved=counts < min_count,
        clipped_fraction=clipped, eps=eps, min_count=min_count)


def pair_with_integrand(nu: EmpiricalYoungMeasure, phi,
                        clip_threshold: float = 1e-3) -> float:
    """Triple bin-sum int_Q avg_cell int phi(x, s, lam) dnu dbeta dx."""
    if nu.clipped_fraction > clip_threshold:
        raise ClippedMassError(
            f"{nu.clipped_fraction:.2%} of samples fell outside the value "
            "box; enlarge it before pairing")
    xc, sc, lc = nu.x_centers, nu.s_centers, nu.lam_centers
    X, S, L = np.meshgrid(xc, sc, lc, indexing="ij")
    vals = np.asarray(phi(X.ravel(), S.ravel(), L.ravel()),
                      float).reshape(nu.weights.shape)
    cell_weight = nu.x_bin_width / sc.size
    return float(np.einsum("ijk,ijk->", nu.weights, vals) * cell_weight)


def barycenter(nu: EmpiricalYoungMeasure) -> TwoScaleFunction:
    """First-moment grid as a two-scale function u0(x, s)."""
    from .sigma_limits import Box
    grid = np.einsum("ijk,k->ij", nu.weights, nu.lam_centers)
    domain = Box(((float(nu.x_edges[0]), float(nu.x_edges[-1])),))
    return TwoScaleFunction.from_grids(domain, nu.x_centers, nu.s_centers,
                                       grid)


def dirac_test(nu: EmpiricalYoungMeasure, v, tol: float | None = None,
               seq: OscillatorySequence | None = None,
               eps: float | None = None) -> dict:
    """Concentration check: is nu a Dirac family at the target v(x, s)?

    l1_distance aggregates the per-bin mean deviation from v at bin centers
    over Q x cell.  When seq and eps are supplied the directly integrated
    ||u_eps - v(., ./eps_1)||_L1 is reported alongside for cross-checking.
    """
    if tol is None:
        tol = nu.cell_bin_width + nu.lambda_bin_width
    xc, sc = nu.x_centers, nu.s_centers
    X, S = np.meshgrid(xc, sc, indexing="ij")
    target = np.asarray(v(X.ravel(), S.ravel()), float).reshape(X.shape)
    dev = np.abs(nu.lam_centers[None, None, :] - target[:, :, None])
    per_bin = np.einsum("ijk,ijk->ij", nu.weights, dev)
    l1 = float(per_bin.mean() * (nu.x_edges[-1] - nu.x_edges[0]))
    out = {"is_dirac": bool(l1 <= tol), "l1_distance": l1, "tol": tol,
           "l1_direct": None}
    if seq is not None and eps is not None:
        nodes, w = _scale_mesh(seq, eps, 8, 4, DEFAULT_POINT_BUDGET)
        u = np.asarray(seq.sample(eps, 0)(nodes), float)
        vv = np.asarray(v(nodes, np.mod(nodes / seq.eps1(eps), 1.0)), float)
        out["l1_direct"] = float(np.dot(w, np.abs(u - vv)))
    return out


def check_lsc(nu: EmpiricalYoungMeasure, phi, seq: OscillatorySequence,
              eps_list=DEFAULT_EPS_LIST, tol: float = 1e-3) -> dict:
    """Pairing of nu with a nonnegative integrand vs the eps-integral tail.

    Asserts pair(nu, phi) <= min over the last three eps of
    int_Q phi(x, x/eps_1, u_eps(x)) dx, within tol plus one value-bin width
    of histogram discretization slack.
    """
    xc, sc, lc = nu.x_centers, nu.s_centers, nu.lam_centers
    X, S, L = np.meshgrid(xc, sc, lc, indexing="ij")
    probe = np.asarray(phi(X.ravel(), S.ravel(), L.ravel()), float)
    if np.any(probe < -1e-12):
        raise ValueError("integrand must be nonnegative for this inequality")
    lhs = pair_with_integrand(nu, phi)
    eps_list = tuple(sorted(eps_list, reverse=True))
    rhs: list = []
    for eps in eps_list:
        nodes, w = _scale_mesh(seq, eps, 8, 4, DEFAULT_POINT_BUDGET)
        u = np.asarray(seq.sample(eps, 0)(nodes), float)
        s = np.mod(nodes / seq.eps1(eps), 1.0)
        rhs.append(float(np.dot(w, phi(nodes, s, u))))
    slack = tol + nu.lambda_bin_width
    tail = min(rhs[-3:]) if len(rhs) >= 3 else min(rhs)
    return {"lhs": lhs, "rhs_integrals": rhs,
            "equality_gap": abs(lhs - rhs[-1]),
            "passed": bool(lhs <= tail + slack), "slack": slack}
