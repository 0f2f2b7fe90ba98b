"""Quadrature on the unit sphere S^{n-1}, sphere norms of polynomials and the
explicit constants A_{n,k}, l_{n,k}, B_{n,k}.

On S^1 and S^2 integrals over sign regions are exact in longitude: every latitude
circle is split at the roots of the restricted trigonometric polynomial and the
latitude integral is done adaptively. In higher dimension the rule's node sums
are used with a statistical error estimate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Dict, Optional, Sequence

import numpy as np
from scipy import special
from scipy.integrate import quad_vec
from scipy.optimize import minimize
from scipy.spatial import cKDTree
from scipy.stats import qmc

from polyharm_lab.harmonic_poly import Poly, PolyError

logger = logging.getLogger(__name__)

DEFAULT_LEVEL = 48
DEFAULT_EPSREL = 1e-10
DEFAULT_EPSABS = 1e-13
CIRCLE_ROOT_TOL = 1e-7
LAURENT_TRIM = 1e-14
MAX_ARC_CHUNK = math.pi / 4
MAX_LOG10 = 300.0
MESH_SAMPLES = 4096


class QuadratureError(RuntimeError):
    pass


class ConstantOverflowError(OverflowError):
    pass


def sphere_area(n: int) -> float:
    """sigma_{n-1} = n * omega_n, the surface measure of S^{n-1}."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


def ball_volume(n: int) -> float:
    return math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)


def cap_area(n: int, chord: float) -> float:
    """Measure of {theta : |theta - theta_0| < chord} on S^{n-1} (chordal radius)."""
    if chord <= 0.0:
        return 0.0
    if chord >= 2.0:
        return sphere_area(n)
    angle = 2.0 * math.asin(chord / 2.0)
    if n == 2:
        return 2.0 * angle
    if n == 3:
        return math.pi * chord * chord
    if angle <= math.pi / 2:
        fraction = special.betainc((n - 1) / 2.0, 0.5, math.sin(angle) ** 2)
        return 0.5 * sphere_area(n) * float(fraction)
    complement = 2.0 * math.sin((math.pi - angle) / 2.0)
    return sphere_area(n) - cap_area(n, complement)


@dataclass(frozen=True, eq=False)
class SphereRule:
    dim: int
    level: int
    kind: str
    nodes: np.ndarray
    weights: np.ndarray
    exactness_degree: int
    mesh_radius: float
    certified_mesh: bool
    seed: int = 0

    @property
    def size(self) -> int:
        return int(self.weights.shape[0])

    @property
    def total_weight(self) -> float:
        return math.fsum(self.weights.tolist())

    def integrate(self, values: np.ndarray) -> float:
        return math.fsum((self.weights * np.asarray(values, dtype=float)).tolist())

    def integrate_poly(self, p: Poly) -> float:
        return self.integrate(p.evaluate(self.nodes))

    def to_json(self) -> Dict[str, Any]:
        return {
            "dim": self.dim,
            "level": self.level,
            "kind": self.kind,
            "exactness_degree": self.exactness_degree,
            "mesh_radius": self.mesh_radius,
            "certified_mesh": self.certified_mesh,
            "seed": self.seed,
            "nodes": self.nodes.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_json(cls, payload: Dict[str, Any]) -> "SphereRule":
        return cls(
            dim=int(payload["dim"]),
            level=int(payload["level"]),
            kind=str(payload["kind"]),
            nodes=np.asarray(payload["nodes"], dtype=float),
            weights=np.asarray(payload["weights"], dtype=float),
            exactness_degree=int(payload["exactness_degree"]),
            mesh_radius=float(payload["mesh_radius"]),
            certified_mesh=bool(payload["certified_mesh"]),
            seed=int(payload.get("seed", 0)),
        )


def _chord(geodesic: float) -> float:
    return 2.0 * math.sin(min(geodesic, math.pi) / 2.0)


def _circle_rule(level: int) -> SphereRule:
    count = 2 * level
    phis = 2.0 * math.pi * (np.arange(count) + 0.5) / count
    nodes = np.column_stack([np.cos(phis), np.sin(phis)])
    weights = np.full(count, 2.0 * math.pi / count)
    return SphereRule(
        dim=2,
        level=level,
        kind="circle-trapezoid",
        nodes=nodes,
        weights=weights,
        exactness_degree=count - 1,
        mesh_radius=_chord(math.pi / count),
        certified_mesh=True,
    )


def _product_rule(level: int) -> SphereRule:
    t, wt = special.roots_legendre(level)
    count = 2 * level
    phis = 2.0 * math.pi * (np.arange(count) + 0.5) / count
    s = np.sqrt(np.clip(1.0 - t * t, 0.0, None))
    nodes = np.stack(
        [
            np.outer(s, np.cos(phis)),
            np.outer(s, np.sin(phis)),
            np.repeat(t[:, None], count, axis=1),
        ],
        axis=-1,
    ).reshape(-1, 3)
    nodes /= np.linalg.norm(nodes, axis=1, keepdims=True)
    weights = np.outer(wt, np.full(count, 2.0 * math.pi / count)).reshape(-1)

    # every point lies within the latitude gap of a node row, then within half a
    # longitude step along that row
    colat = np.sort(np.arccos(np.clip(t, -1.0, 1.0)))
    gaps = np.diff(colat) / 2.0 if colat.size > 1 else np.array([0.0])
    lat_gap = max(float(colat[0]), float(math.pi - colat[-1]), float(gaps.max()))
    return SphereRule(
        dim=3,
        level=level,
        kind="gauss-product",
        nodes=nodes,
        weights=weights,
        exactness_degree=2 * level - 1,
        mesh_radius=_chord(lat_gap + math.pi / count),
        certified_mesh=True,
    )


def _sobol_rule(n: int, level: int, seed: int) -> SphereRule:
    exponent = int(math.ceil(math.log2(max(64, 2 * level * level))))
    sampler = qmc.Sobol(d=n, scramble=True, seed=seed)
    uniform = np.clip(sampler.random_base2(exponent), 1e-12, 1.0 - 1e-12)
    nodes = special.ndtri(uniform)
    nodes /= np.linalg.norm(nodes, axis=1, keepdims=True)
    weights = np.full(nodes.shape[0], sphere_area(n) / nodes.shape[0])
    samples = random_sphere_points(n, MESH_SAMPLES, np.random.default_rng(seed + 1))
    distances, _ = cKDTree(nodes).query(samples)
    return SphereRule(
        dim=n,
        level=level,
        kind="sobol",
        nodes=nodes,
        weights=weights,
        exactness_degree=0,
        mesh_radius=float(distances.max()),
        certified_mesh=False,
        seed=seed,
    )


@lru_cache(maxsize=32)
def build_rule(n: int, level: int = DEFAULT_LEVEL, seed: int = 0) -> SphereRule:
    """Quadrature rule on S^{n-1}.

    n=2: 2*level equispaced points. n=3: Gauss-Legendre in cos(colatitude) times
    2*level longitudes, exact through degree 2*level-1. n>=4: scrambled Sobol
    points pushed to the sphere with equal weights.
    """
    if n < 2:
        raise QuadratureError(f"sphere rules need n >= 2, got {n}")
    if level < 1:
        raise QuadratureError(f"rule level must be positive, got {level}")
    if n == 2:
        rule = _circle_rule(level)
    elif n == 3:
        rule = _product_rule(level)
    else:
        rule = _sobol_rule(n, level, seed)
    logger.debug("built %s rule n=%d level=%d size=%d", rule.kind, n, level, rule.size)
    return rule


def random_sphere_points(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    points = rng.standard_normal((count, n))
    return points / np.linalg.norm(points, axis=1, keepdims=True)


# integrals over sign regions


@dataclass(frozen=True)
class SplitIntegral:
    plus: float
    minus: float
    error: float
    method: str


def _circle_points(dim: int, t: float, phis: np.ndarray) -> np.ndarray:
    if dim == 2:
        return np.stack([np.cos(phis), np.sin(phis)], axis=-1)
    s = math.sqrt(max(0.0, 1.0 - t * t))
    return np.stack([s * np.cos(phis), s * np.sin(phis), np.full(phis.shape, t)], axis=-1)


def _circle_roots(sign: Poly, dim: int, t: float) -> Optional[np.ndarray]:
    """Sorted angles in [0, 2pi) where ``sign`` vanishes on the latitude circle at
    height t, or None when the restriction is identically zero."""
    deg = max(sign.degree, 1)
    count = 2 * deg + 2
    phis = 2.0 * math.pi * np.arange(count) / count
    values = sign.evaluate(_circle_points(dim, t, phis))
    scale = float(np.max(np.abs(values)))
    if scale == 0.0:
        return None
    spectrum = np.fft.fft(values) / count
    laurent = np.array([spectrum[m % count] for m in range(deg, -deg - 1, -1)])
    laurent[np.abs(laurent) < LAURENT_TRIM * scale] = 0.0
    if not np.any(laurent[:-1]):
        return np.zeros(0)
    roots = np.roots(laurent)
    on_circle = roots[np.abs(np.abs(roots) - 1.0) < CIRCLE_ROOT_TOL]
    if on_circle.size == 0:
        return np.zeros(0)
    angles = np.sort(np.mod(np.angle(on_circle), 2.0 * math.pi))
    keep = np.concatenate([[True], np.diff(angles) > 1e-12])
    return angles[keep]


def _arc_integral(
    poly: Optional[Poly], dim: int, t: float, starts: np.ndarray, ends: np.ndarray
) -> float:
    if starts.size == 0:
        return 0.0
    lengths = ends - starts
    if poly is None:
        return float(np.sum(lengths))
    if poly.is_zero:
        return 0.0
    pieces = np.maximum(1, np.ceil(lengths / MAX_ARC_CHUNK)).astype(int)
    owner = np.repeat(np.arange(starts.size), pieces)
    offsets = np.concatenate([np.arange(p) for p in pieces])
    step = lengths[owner] / pieces[owner]
    left = starts[owner] + offsets * step
    x, w = np.polynomial.legendre.leggauss(max(poly.degree, 1) + 12)
    phis = left[:, None] + (x[None, :] + 1.0) * (step[:, None] / 2.0)
    values = poly.evaluate(_circle_points(dim, t, phis))
    return float(np.sum(values * w[None, :] * (step[:, None] / 2.0)))


def _circle_split(
    sign: Poly, plus: Optional[Poly], minus: Optional[Poly], dim: int, t: float
) -> np.ndarray:
    angles = _circle_roots(sign, dim, t)
    if angles is None:
        return np.zeros(2)
    if angles.size == 0:
        starts = np.array([0.0])
        ends = np.array([2.0 * math.pi])
    else:
        starts = angles
        ends = np.concatenate([angles[1:], [angles[0] + 2.0 * math.pi]])
    mids = (starts + ends) / 2.0
    signs = np.sign(sign.evaluate(_circle_points(dim, t, mids)))
    pos = signs > 0
    neg = signs < 0
    return np.array(
        [
            _arc_integral(plus, dim, t, starts[pos], ends[pos]),
            _arc_integral(minus, dim, t, starts[neg], ends[neg]),
        ]
    )


def integrate_split(
    sign: Poly,
    rule: SphereRule,
    plus: Optional[Poly] = None,
    minus: Optional[Poly] = None,
    *,
    epsrel: float = DEFAULT_EPSREL,
    epsabs: float = DEFAULT_EPSABS,
) -> SplitIntegral:
    """Integrals of ``plus`` over {sign > 0} and of ``minus`` over {sign < 0}.

    A missing integrand means the indicator, so the result is a surface area.
    """
    for poly in (sign, plus, minus):
        if poly is not None and poly.dim != rule.dim:
            raise PolyError(f"polynomial dimension {poly.dim} != rule dimension {rule.dim}")
    dim = rule.dim
    if dim == 2:
        both = _circle_split(sign, plus, minus, 2, 0.0)
        return SplitIntegral(float(both[0]), float(both[1]), 0.0, "circle-exact")
    if dim == 3:
        both, err = quad_vec(
            lambda t: _circle_split(sign, plus, minus, 3, t),
            -1.0,
            1.0,
            epsrel=epsrel,
            epsabs=epsabs,
            norm="max",
        )
        return SplitIntegral(float(both[0]), float(both[1]), float(err), "latitude-adaptive")

    nodes = rule.nodes
    signs = sign.evaluate(nodes)
    pos = signs > 0
    neg = signs < 0
    plus_vals = plus.evaluate(nodes) if plus is not None else np.ones(rule.size)
    minus_vals = minus.evaluate(nodes) if minus is not None else np.ones(rule.size)
    f_plus = np.where(pos, plus_vals, 0.0)
    f_minus = np.where(neg, minus_vals, 0.0)
    area = sphere_area(dim)
    err = area * max(float(np.std(f_plus)), float(np.std(f_minus))) / math.sqrt(rule.size)
    return SplitIntegral(rule.integrate(f_plus), rule.integrate(f_minus), err, "node-sum")


# norms


def l1_norm_sphere(p: Poly, rule: SphereRule) -> float:
    if p.is_zero:
        return 0.0
    split = integrate_split(p, rule, p, -p)
    return split.plus + split.minus


@dataclass(frozen=True)
class SupNormBound:
    lower: float
    upper: float
    argmax: np.ndarray
    mesh_radius: float
    node_max: float


def sup_norm_sphere(p: Poly, rule: SphereRule, *, polish: int = 8) -> SupNormBound:
    """Max of |p| over the nodes, polished by Nelder-Mead from the best nodes.

    ``lower`` is attained at ``argmax``. For homogeneous p of degree k on a rule
    with a certified covering radius delta, the Lipschitz constant A_{n,k}*sup
    gives ``upper = node_max / (1 - A_{n,k} delta)`` whenever A_{n,k} delta < 1.
    """
    if p.dim != rule.dim:
        raise PolyError(f"polynomial dimension {p.dim} != rule dimension {rule.dim}")
    values = np.abs(p.evaluate(rule.nodes))
    best = int(np.argmax(values))
    node_max = float(values[best])
    lower = node_max
    argmax = rule.nodes[best].copy()

    if polish > 0 and p.degree >= 1:
        starts = np.argsort(values)[::-1][:polish]

        def objective(v: np.ndarray) -> float:
            norm = np.linalg.norm(v)
            if norm == 0.0:
                return 0.0
            return -abs(p.evaluate(v / norm))

        for idx in starts:
            res = minimize(
                objective,
                rule.nodes[idx],
                method="Nelder-Mead",
                options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 4000},
            )
            value = -float(res.fun)
            if value > lower:
                lower = value
                argmax = res.x / np.linalg.norm(res.x)

    if p.degree <= 0:
        upper = lower
    elif p.is_homogeneous and rule.certified_mesh:
        try:
            lipschitz = constants(p.dim, p.degree).A
        except ConstantOverflowError:
            lipschitz = math.inf
        shrink = lipschitz * rule.mesh_radius
        upper = node_max / (1.0 - shrink) if shrink < 1.0 else math.inf
        upper = max(upper, lower)
    else:
        upper = math.inf
    return SupNormBound(lower, upper, argmax, rule.mesh_radius, node_max)


def big_piece_measure(p: Poly, rule: SphereRule) -> float:
    """sigma{theta : |p(theta)| >= sup|p| / 2}."""
    if not p.is_homogeneous or p.degree < 1:
        raise PolyError("big_piece_measure needs a homogeneous polynomial of degree >= 1")
    half = sup_norm_sphere(p, rule).lower / 2.0
    upper_part = integrate_split(p - half, rule).plus
    lower_part = integrate_split(p + half, rule).minus
    return upper_part + lower_part


# constants


@dataclass(frozen=True)
class SphereConstants:
    n: int
    k: int
    A: float
    l: float
    B: float
    log10_A: float


def _log10_lipschitz(n: int, k: int) -> float:
    # sum over 1 <= |alpha| <= k of 1/alpha! equals sum_d n^d / d!
    inverse_factorials = math.fsum(n**d / math.factorial(d) for d in range(1, k + 1))
    return k * math.log10(2 ** (n + 2) * n * k) + math.log10(inverse_factorials)


@lru_cache(maxsize=256)
def constants(n: int, k: int) -> SphereConstants:
    if n < 2 or k < 1:
        raise PolyError(f"constants need n >= 2 and k >= 1, got n={n}, k={k}")
    log10_a = _log10_lipschitz(n, k)
    if log10_a > MAX_LOG10:
        raise ConstantOverflowError(f"A_(n={n},k={k}) = 10^{log10_a:.1f} exceeds the float range")
    a = 10.0**log10_a
    cap = cap_area(n, 1.0 / (2.0 * a))
    return SphereConstants(n=n, k=k, A=a, l=cap, B=2.0 / cap, log10_A=log10_a)


def coefficient_bound(n: int, k: int) -> float:
    """Bound on |c_alpha| for homogeneous harmonic p of degree k with F_1(omega_p) = 1."""
    const = constants(n, k)
    log10_bound = k * math.log10(2 ** (n + 2) * n * k) + math.log10(
        2.0 * const.B * (n + k - 1) / k
    )
    if log10_bound > MAX_LOG10:
        raise ConstantOverflowError(f"coefficient bound for n={n}, k={k} exceeds the float range")
    return 10.0**log10_bound


@dataclass(frozen=True)
class InequalityReport:
    name: str
    trials: int
    violations: int
    worst_ratio: float
    constant: float

    @property
    def holds(self) -> bool:
        return self.violations == 0


def check_coefficient_bound(p: Poly, rule: SphereRule) -> InequalityReport:
    if not p.is_homogeneous or p.degree < 1:
        raise PolyError("coefficient bound applies to homogeneous polynomials of degree >= 1")
    n, k = p.dim, p.degree
    f_one = k * l1_norm_sphere(p, rule) / (2.0 * (n + k - 1))
    largest = max(abs(c) for c in p.terms.values()) / f_one
    bound = coefficient_bound(n, k)
    return InequalityReport("coefficient-bound", 1, int(largest > bound), largest / bound, bound)


def derivative_bound_ratio(
    p: Poly,
    alpha: Sequence[int],
    theta: Any,
    *,
    rule: Optional[SphereRule] = None,
    sup_on_radius_two: Optional[float] = None,
) -> Any:
    """|D^alpha p(theta)| / ((2^{n+1} n |alpha|)^{|alpha|} sup_{|x|=2} |p|); theta may be
    a batch of points."""
    order = sum(int(a) for a in alpha)
    if order < 1:
        raise PolyError("derivative bound needs |alpha| >= 1")
    n = p.dim
    if sup_on_radius_two is None:
        rule = rule or build_rule(n)
        sup_on_radius_two = sup_norm_sphere(p.dilate(2.0), rule).lower
    lhs = np.abs(p.derivative(alpha).evaluate(np.asarray(theta, dtype=float)))
    rhs = (2 ** (n + 1) * n * order) ** order * sup_on_radius_two
    return lhs / rhs


def derivative_bound_check(
    p: Poly,
    alpha: Sequence[int],
    theta: Sequence[float],
    *,
    rule: Optional[SphereRule] = None,
    sup_on_radius_two: Optional[float] = None,
) -> bool:
    """|D^alpha p(theta)| <= (2^{n+1} n |alpha|)^{|alpha|} sup_{|x|=2} |p|."""
    ratio = derivative_bound_ratio(
        p, alpha, theta, rule=rule, sup_on_radius_two=sup_on_radius_two
    )
    return bool(np.all(ratio <= 1.0 + 1e-12))


def lipschitz_check(
    p: Poly, rule: SphereRule, pairs: int, rng: np.random.Generator
) -> InequalityReport:
    """Random pairs theta_1, theta_2 against |p(t1) - p(t2)| <= A_{n,k} sup|p| |t1 - t2|."""
    if not p.is_homogeneous or p.degree < 1:
        raise PolyError("Lipschitz check needs a homogeneous polynomial of degree >= 1")
    const = constants(p.dim, p.degree).A
    sup = sup_norm_sphere(p, rule).lower
    first = random_sphere_points(p.dim, pairs, rng)
    # half the pairs are close together, where the bound is tightest
    jitter = rng.standard_normal(first.shape) * np.where(
        np.arange(pairs)[:, None] % 2 == 0, 1e-3, 1.0
    )
    second = first + jitter
    second /= np.linalg.norm(second, axis=1, keepdims=True)
    dist = np.linalg.norm(first - second, axis=1)
    mask = dist > 0
    ratios = np.abs(p.evaluate(first) - p.evaluate(second))[mask] / (sup * dist[mask])
    worst = float(ratios.max()) if ratios.size else 0.0
    return InequalityReport("lipschitz", int(mask.sum()), int(np.sum(ratios > const)), worst, const)


def reverse_holder_check(p: Poly, rule: SphereRule) -> InequalityReport:
    """sup|p| <= B_{n,k} ||p||_{L^1(S^{n-1})}."""
    if not p.is_homogeneous or p.degree < 1:
        raise PolyError("reverse Hoelder check needs a homogeneous polynomial of degree >= 1")
    const = constants(p.dim, p.degree).B
    ratio = sup_norm_sphere(p, rule).lower / l1_norm_sphere(p, rule)
    return InequalityReport("reverse-holder", 1, int(ratio > const), ratio, const)
