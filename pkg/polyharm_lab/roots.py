"""Real roots of the univariate polynomials t -> h(o + t d) along rays.

Two paths share one result type. The companion path batches all rays into one
eigenvalue call and polishes with Newton steps. The Sturm path counts distinct
roots per interval, bisects until each interval isolates one root, and refines
sign-changing roots with Brent's method.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.optimize import brentq

from polyharm_lab.harmonic_poly import Poly

logger = logging.getLogger(__name__)

IMAG_TOL = 1e-8
ROOT_XTOL = 1e-13
STURM_TRIM = 1e-13
NEWTON_STEPS = 3
MAX_BISECTIONS = 60

ROOT_METHODS = ("companion", "sturm")


class RootError(ValueError):
    pass


@dataclass(frozen=True)
class RayRoots:
    """Root ``t`` of ray ``ray`` for every crossing found, ordered by (ray, t)."""

    ray: np.ndarray
    t: np.ndarray

    def __len__(self) -> int:
        return int(self.t.shape[0])


def _batched_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0], a.shape[1] + b.shape[1] - 1))
    for j in range(b.shape[1]):
        out[:, j : j + a.shape[1]] += a * b[:, j : j + 1]
    return out


def ray_coefficients(p: Poly, origins: np.ndarray, directions: np.ndarray) -> np.ndarray:
    """Ascending coefficients in t of p(o + t d), one row per ray."""
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    origins = np.broadcast_to(np.asarray(origins, dtype=float), directions.shape)
    rays = directions.shape[0]
    degree = max(p.degree, 0)
    coeffs = np.zeros((rays, degree + 1))
    if p.is_zero:
        return coeffs

    max_exp = max(max(alpha) for alpha in p.terms)
    # powers[axis][e] holds the coefficients of (o_axis + t d_axis)^e
    powers: List[List[np.ndarray]] = []
    for axis in range(p.dim):
        linear = np.stack([origins[:, axis], directions[:, axis]], axis=1)
        chain = [np.ones((rays, 1))]
        for _ in range(max_exp):
            chain.append(_batched_product(chain[-1], linear))
        powers.append(chain)

    for alpha, c in p.terms.items():
        term = np.full((rays, 1), c)
        for axis, e in enumerate(alpha):
            if e:
                term = _batched_product(term, powers[axis][e])
        coeffs[:, : term.shape[1]] += term
    return coeffs


def _horner(coeffs: np.ndarray, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of row-wise polynomials at one point per row."""
    value = np.zeros_like(t)
    slope = np.zeros_like(t)
    for j in range(coeffs.shape[1] - 1, -1, -1):
        slope = slope * t + value
        value = value * t + coeffs[:, j]
    return value, slope


def companion_roots(coeffs: np.ndarray, lo: float, hi: np.ndarray) -> RayRoots:
    """Real roots in (lo, hi] for each row of ascending coefficients."""
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
    rays, width = coeffs.shape
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (rays,))
    found_ray: List[np.ndarray] = []
    found_t: List[np.ndarray] = []

    # group rows by effective degree so each group has a well-defined companion matrix
    scale = np.max(np.abs(coeffs), axis=1)
    live = np.abs(coeffs) > 1e-14 * scale[:, None]
    effective = np.where(live.any(axis=1), width - 1 - np.argmax(live[:, ::-1], axis=1), -1)
    for degree in np.unique(effective):
        if degree < 1:
            continue
        rows = np.nonzero(effective == degree)[0]
        block = coeffs[rows, : degree + 1]
        monic = block[:, :-1] / block[:, -1:]
        companion = np.zeros((rows.size, degree, degree))
        companion[:, 1:, :-1] = np.eye(degree - 1)
        companion[:, :, -1] = -monic
        eig = np.linalg.eigvals(companion)
        real_mask = np.abs(eig.imag) <= IMAG_TOL * (1.0 + np.abs(eig.real))
        ray_idx = np.repeat(rows[:, None], degree, axis=1)[real_mask]
        t = eig.real[real_mask]
        owner = np.repeat(np.arange(rows.size)[:, None], degree, axis=1)[real_mask]
        for _ in range(NEWTON_STEPS):
            value, slope = _horner(block[owner], t)
            step = np.where(slope != 0.0, value / np.where(slope != 0.0, slope, 1.0), 0.0)
            # keep Newton from jumping between neighbouring roots
            step = np.clip(step, -1e-3 * (1.0 + np.abs(t)), 1e-3 * (1.0 + np.abs(t)))
            t = t - step
        keep = (t > lo) & (t <= hi[ray_idx])
        found_ray.append(ray_idx[keep])
        found_t.append(t[keep])

    if not found_t:
        return RayRoots(np.zeros(0, dtype=int), np.zeros(0))
    ray_all = np.concatenate(found_ray)
    t_all = np.concatenate(found_t)
    order = np.lexsort((t_all, ray_all))
    ray_all, t_all = ray_all[order], t_all[order]
    # merge numerically coincident roots (double roots split by round-off)
    if t_all.size > 1:
        distinct = np.ones(t_all.size, dtype=bool)
        distinct[1:] = (ray_all[1:] != ray_all[:-1]) | (
            np.abs(t_all[1:] - t_all[:-1]) > 1e-9 * (1.0 + np.abs(t_all[1:]))
        )
        ray_all, t_all = ray_all[distinct], t_all[distinct]
    return RayRoots(ray_all.astype(int), t_all)


# Sturm path


def sturm_sequence(coeffs: Sequence[float]) -> List[np.ndarray]:
    """Sturm chain p, p', -rem(p, p'), ... with ascending coefficients."""
    p0 = npoly.polytrim(np.asarray(coeffs, dtype=float), tol=0.0)
    scale = float(np.max(np.abs(p0))) if p0.size else 0.0
    if scale == 0.0:
        raise RootError("Sturm sequence of the zero polynomial")
    chain = [p0, npoly.polyder(p0)]
    while chain[-1].size > 1:
        _, remainder = npoly.polydiv(chain[-2], chain[-1])
        remainder = npoly.polytrim(-remainder, tol=STURM_TRIM * scale)
        if not np.any(remainder):
            break
        chain.append(remainder)
    return chain


def sign_variations(chain: Sequence[np.ndarray], x: float) -> int:
    values = [npoly.polyval(x, c) for c in chain]
    signs = [v for v in values if v != 0.0]
    return sum(1 for a, b in zip(signs, signs[1:]) if (a > 0) != (b > 0))


def count_distinct_roots(chain: Sequence[np.ndarray], a: float, b: float) -> int:
    """Distinct real roots in (a, b]."""
    return sign_variations(chain, a) - sign_variations(chain, b)


def isolate_real_roots(coeffs: Sequence[float], a: float, b: float) -> List[float]:
    """Sign-changing roots in (a, b], each refined to ROOT_XTOL.

    Roots of even multiplicity are counted by the chain but skipped, because the
    polynomial keeps its sign across them.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if not np.any(coeffs[1:]):
        return []
    chain = sturm_sequence(coeffs)

    def value(x: float) -> float:
        return float(npoly.polyval(x, coeffs))

    found: List[float] = []
    stack = [(a, b, 0)]
    while stack:
        left, right, depth = stack.pop()
        count = count_distinct_roots(chain, left, right)
        if count <= 0:
            continue
        if count == 1 or depth >= MAX_BISECTIONS:
            f_left, f_right = value(left), value(right)
            if f_right == 0.0:
                found.append(right)
            elif f_left * f_right < 0.0:
                found.append(brentq(value, left, right, xtol=ROOT_XTOL))
            continue
        mid = 0.5 * (left + right)
        stack.append((mid, right, depth + 1))
        stack.append((left, mid, depth + 1))
    return sorted(found)


def sturm_roots(coeffs: np.ndarray, lo: float, hi: np.ndarray) -> RayRoots:
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (coeffs.shape[0],))
    ray_list: List[int] = []
    t_list: List[float] = []
    for i, row in enumerate(coeffs):
        for t in isolate_real_roots(row, lo, float(hi[i])):
            if t > lo:
                ray_list.append(i)
                t_list.append(t)
    return RayRoots(np.asarray(ray_list, dtype=int), np.asarray(t_list, dtype=float))


def find_ray_roots(
    p: Poly,
    origins: np.ndarray,
    directions: np.ndarray,
    t_max: np.ndarray,
    method: str = "companion",
) -> RayRoots:
    """Roots t in (0, t_max] of p(o + t d) for every ray."""
    if method not in ROOT_METHODS:
        raise RootError(f"unknown root method {method!r}; expected one of {ROOT_METHODS}")
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    t_max = np.broadcast_to(np.asarray(t_max, dtype=float), (directions.shape[0],))
    # work in u = t / t_max so coefficient magnitudes stay comparable
    scaled_dirs = directions * t_max[:, None]
    coeffs = ray_coefficients(p, origins, scaled_dirs)
    if method == "companion":
        found = companion_roots(coeffs, 0.0, np.ones_like(t_max))
    else:
        found = sturm_roots(coeffs, 0.0, np.ones_like(t_max))
    return RayRoots(found.ray, found.t * t_max[found.ray])
