"""Polynomial harmonic measures on centred balls.

For harmonic h with h(0) = 0 the measure omega_h of B_r is the integral of the
radial derivative of h over the part of the sphere of radius r where h > 0
(equivalently, of the radial derivative of -h where h < 0). Homogeneous h of
degree k has the closed form (k/2) r^{n+k-2} ||h||_{L^1(S^{n-1})}.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import quad

from polyharm_lab.harmonic_poly import (
    HomogDecomp,
    Poly,
    homogeneous_decompose,
    is_harmonic,
    poly_hash,
    radial_derivative_poly,
)
from polyharm_lab.roots import find_ray_roots
from polyharm_lab.sphere_quad import (
    QuadratureError,
    SphereRule,
    constants,
    integrate_split,
    l1_norm_sphere,
    sphere_area,
    sup_norm_sphere,
)

if TYPE_CHECKING:
    from polyharm_lab.particle_measure import ParticleMeasure

logger = logging.getLogger(__name__)

HARMONIC_TOL = 1e-9
BALL_EPSREL = 1e-9
CLOSED_FORM_RTOL = 1e-6
F_R_EPSREL = 1e-9
FIT_WINDOW = 0.25
FIT_THRESHOLD = 0.05
MIN_SCAN_STEPS = 4
BOUND_SLACK = 1e-9


class MeasureError(ValueError):
    pass


class PreconditionError(MeasureError):
    pass


@dataclass(frozen=True)
class PolyMeasure:
    """The measure scale * omega_poly."""

    poly: Poly
    scale: float = 1.0
    decomp: HomogDecomp = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.scale > 0:
            raise MeasureError(f"measure scale must be positive, got {self.scale}")
        if self.poly.is_zero:
            raise MeasureError("the zero polynomial has no harmonic measure")
        if not is_harmonic(self.poly, HARMONIC_TOL):
            raise MeasureError(f"polynomial is not harmonic: {self.poly}")
        if self.poly.constant_term != 0.0:
            raise PreconditionError(
                f"polynomial must vanish at the origin, constant term is {self.poly.constant_term}"
            )
        object.__setattr__(self, "decomp", homogeneous_decompose(self.poly, HARMONIC_TOL))

    @classmethod
    def from_poly(cls, poly: Poly, scale: float = 1.0) -> "PolyMeasure":
        return cls(poly, float(scale))

    @property
    def dim(self) -> int:
        return self.poly.dim

    @property
    def top_degree(self) -> int:
        return self.decomp.top_degree

    @property
    def bottom_degree(self) -> int:
        return self.decomp.bottom_degree

    @property
    def is_homogeneous(self) -> bool:
        return self.poly.is_homogeneous

    @property
    def poly_hash(self) -> str:
        return poly_hash(self.poly)

    def scaled(self, factor: float) -> "PolyMeasure":
        return PolyMeasure(self.poly, self.scale * float(factor))


@lru_cache(maxsize=512)
def _l1(p: Poly, rule: SphereRule) -> float:
    return l1_norm_sphere(p, rule)


@lru_cache(maxsize=512)
def _sup(p: Poly, rule: SphereRule) -> float:
    return sup_norm_sphere(p, rule).lower


def _check_rule(m: PolyMeasure, rule: SphereRule) -> None:
    if m.dim != rule.dim:
        raise MeasureError(f"measure dimension {m.dim} != rule dimension {rule.dim}")


# ball masses


def plus_minus_ball_measure(
    m: PolyMeasure, r: float, rule: SphereRule, *, epsrel: float = BALL_EPSREL
) -> Tuple[float, float]:
    """Both sides of the ball-mass formula: the plus-side and minus-side surface integrals."""
    if not r > 0:
        raise MeasureError(f"radius must be positive, got {r}")
    _check_rule(m, rule)
    n = m.dim
    sign = m.poly.dilate(r)
    radial = radial_derivative_poly(m.poly, r) * float(r) ** (n - 1)
    split = integrate_split(sign, rule, radial, -radial, epsrel=epsrel, epsabs=0.0)
    return m.scale * split.plus, m.scale * split.minus


def closed_form_ball_measure(m: PolyMeasure, r: float, rule: SphereRule) -> float:
    if not m.is_homogeneous:
        raise PreconditionError("closed form needs a homogeneous polynomial")
    if not r > 0:
        raise MeasureError(f"radius must be positive, got {r}")
    n, k = m.dim, m.top_degree
    return m.scale * 0.5 * k * float(r) ** (n + k - 2) * _l1(m.poly, rule)


def ball_measure(
    m: PolyMeasure,
    r: float,
    rule: SphereRule,
    *,
    check: bool = True,
    epsrel: float = BALL_EPSREL,
) -> float:
    """scale * omega_h(B_r) by quadrature; for homogeneous h the result is also
    compared with the closed form."""
    value, _ = plus_minus_ball_measure(m, r, rule, epsrel=epsrel)
    if check and m.is_homogeneous:
        closed = closed_form_ball_measure(m, r, rule)
        if abs(value - closed) > CLOSED_FORM_RTOL * abs(closed):
            raise QuadratureError(
                f"ball mass {value!r} disagrees with closed form {closed!r} at r={r}"
            )
    return value


# F_r


def f_r(
    m: PolyMeasure,
    r: float,
    rule: SphereRule,
    *,
    method: str = "auto",
    epsrel: float = F_R_EPSREL,
    inner_epsrel: float = BALL_EPSREL,
) -> float:
    """F_r = int_0^r omega(B_s) ds.

    ``method="auto"`` uses the closed form k ||h||_1 r^{n+k-1} / (2(n+k-1)) for
    homogeneous h and adaptive quadrature over ball masses otherwise;
    ``"quadrature"`` forces the numerical path.
    """
    if not r > 0:
        raise MeasureError(f"radius must be positive, got {r}")
    if method not in ("auto", "quadrature"):
        raise MeasureError(f"unknown F_r method {method!r}")
    if method == "auto" and m.is_homogeneous:
        n, k = m.dim, m.top_degree
        return m.scale * k * _l1(m.poly, rule) * float(r) ** (n + k - 1) / (2.0 * (n + k - 1))
    value, err = quad(
        lambda s: ball_measure(m, s, rule, check=False, epsrel=inner_epsrel),
        0.0,
        float(r),
        epsabs=0.0,
        epsrel=epsrel,
        limit=200,
    )
    logger.debug("F_r quadrature r=%g value=%g err=%g", r, value, err)
    return float(value)


@dataclass(frozen=True)
class FrSandwich:
    radius: float
    lower: float
    value: float
    upper: float

    @property
    def holds(self) -> bool:
        slack = BOUND_SLACK * max(abs(self.upper), 1e-300)
        return self.lower - slack <= self.value <= self.upper + slack


def f_r_exact_bounds(m: PolyMeasure, r: float, rule: SphereRule, **kwargs) -> FrSandwich:
    """(r/2) omega(B_{r/2}) <= F_r <= r omega(B_r)."""
    value = f_r(m, r, rule, **kwargs)
    lower = 0.5 * r * ball_measure(m, 0.5 * r, rule, check=False)
    upper = r * ball_measure(m, r, rule, check=False)
    return FrSandwich(r, lower, value, upper)


# zeta, r_1, r_2 and the two-sided bounds


def _part_sup(m: PolyMeasure, degree: int, rule: SphereRule) -> float:
    part = m.decomp.part(degree)
    if part is None:
        return 0.0
    return _sup(part, rule)


def zeta(m: PolyMeasure, rule: SphereRule) -> float:
    """max_{1<=k<=d-1} ||h_k||_inf / ||h_d||_inf; zero for homogeneous h."""
    if m.is_homogeneous:
        return 0.0
    d = m.top_degree
    top = _part_sup(m, d, rule)
    return max(_part_sup(m, k, rule) for k in range(1, d)) / top


def zeta_star(m: PolyMeasure, rule: SphereRule) -> float:
    """max_{j+1<=k<=d} ||h_k||_inf / ||h_j||_inf; zero for homogeneous h."""
    if m.is_homogeneous:
        return 0.0
    j, d = m.bottom_degree, m.top_degree
    bottom = _part_sup(m, j, rule)
    return max(_part_sup(m, k, rule) for k in range(j + 1, d + 1)) / bottom


def r1(m: PolyMeasure, rule: SphereRule) -> float:
    n, d = m.dim, m.top_degree
    return 1.0 + 12.0 * sphere_area(n) * zeta(m, rule) / constants(n, d).l


def r2(m: PolyMeasure, rule: SphereRule) -> float:
    n, j = m.dim, m.bottom_degree
    z = zeta_star(m, rule)
    if z == 0.0:
        return 0.5
    return min(0.5, constants(n, j).l / (72.0 * sphere_area(n) * z))


@dataclass(frozen=True)
class BoundSandwich:
    radius: float
    degree: int
    lower: float
    value: float
    upper: float

    @property
    def holds(self) -> bool:
        slack = BOUND_SLACK * abs(self.upper)
        return self.lower - slack <= self.value <= self.upper + slack


def _sandwich(m: PolyMeasure, r: float, degree: int, rule: SphereRule) -> BoundSandwich:
    n = m.dim
    top = _part_sup(m, degree, rule)
    common = degree * float(r) ** (n + degree - 2) * top
    lower = constants(n, degree).l / 4.0 * common
    upper = 1.5 * sphere_area(n) * common
    value = ball_measure(m, r, rule, check=False) / m.scale
    return BoundSandwich(r, degree, lower, value, upper)


def sandwich_at_infinity(m: PolyMeasure, r: float, rule: SphereRule) -> BoundSandwich:
    """(l_{n,d}/4) d r^{n+d-2} ||h_d|| <= omega_h(B_r) <= (3 sigma/2) d r^{n+d-2} ||h_d||, r > r_1."""
    if not m.is_homogeneous:
        threshold = r1(m, rule)
        if not r > threshold:
            raise PreconditionError(f"large-scale bound needs r > r1 = {threshold:g}, got {r:g}")
    return _sandwich(m, r, m.top_degree, rule)


def sandwich_at_zero(m: PolyMeasure, r: float, rule: SphereRule) -> BoundSandwich:
    """The same two-sided bound with the lowest degree j, for r < r_2."""
    if not m.is_homogeneous:
        threshold = r2(m, rule)
        if not r < threshold:
            raise PreconditionError(f"small-scale bound needs r < r2 = {threshold:g}, got {r:g}")
    return _sandwich(m, r, m.bottom_degree, rule)


def bounds_check_infinity(m: PolyMeasure, r: float, rule: SphereRule) -> bool:
    return sandwich_at_infinity(m, r, rule).holds


def bounds_check_zero(m: PolyMeasure, r: float, rule: SphereRule) -> bool:
    return sandwich_at_zero(m, r, rule).holds


# doubling


@dataclass(frozen=True)
class DoublingConstants:
    n: int
    d: int
    j: int
    C_nd: float
    c_nj: float


def doubling_constants(n: int, d: int, j: Optional[int] = None) -> DoublingConstants:
    """C_{n,d} = 6 sigma_{n-1} / l_{n,d}, and the same expression at the lowest degree j."""
    j = d if j is None else j
    area = sphere_area(n)
    return DoublingConstants(n, d, j, 6.0 * area / constants(n, d).l, 6.0 * area / constants(n, j).l)


@dataclass(frozen=True)
class DoublingScan:
    tau: float
    dim: int
    poly_hash: str
    radii: Tuple[float, ...]
    masses: Tuple[float, ...]
    masses_tau: Tuple[float, ...]
    ratios: Tuple[float, ...]
    local_exponents: Tuple[float, ...]
    exponent_at_zero: float
    exponent_at_infinity: float
    residual_at_zero: float
    residual_at_infinity: float
    bound_violations: int = 0

    def rows(self) -> List[Dict[str, float]]:
        return [
            {"r": r, "ratio": q, "local_exponent": e}
            for r, q, e in zip(self.radii, self.ratios, self.local_exponents)
        ]

    def header(self) -> Dict[str, object]:
        return {"tau": self.tau, "n": self.dim, "poly_hash": self.poly_hash}


def _fit_window(
    radii: np.ndarray, masses: np.ndarray, masses_tau: np.ndarray, tau: float, exps: np.ndarray
) -> Tuple[float, float]:
    log_r = np.concatenate([np.log(radii), np.log(radii * tau)])
    log_m = np.concatenate([np.log(masses), np.log(masses_tau)])
    slope = float(np.polyfit(log_r, log_m, 1)[0])
    residual = float(np.max(np.abs(exps - slope)))
    return slope, residual


def _map_ordered(func, items: Sequence[float], threads: int) -> List[float]:
    if threads <= 1:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))


def bound_regime(r: float, tau: float, big: float, small: float) -> Optional[str]:
    """Which doubling bound covers the pair B_r, B_{tau r}: "infinity" once r > r1,
    "zero" once the outer ball B_{tau r} lies inside r2, else None."""
    if r > big:
        return "infinity"
    if tau * r < small:
        return "zero"
    return None


def doubling_scan(
    m: PolyMeasure,
    tau: float,
    r_min: float,
    r_max: float,
    steps: int,
    rule: SphereRule,
    *,
    threads: int = 1,
    epsrel: float = BALL_EPSREL,
) -> DoublingScan:
    """Ratios omega(B_{tau r}) / omega(B_r) on a geometric grid of ``steps`` radii.

    The exponents at zero and at infinity are least-squares slopes of log omega
    against log r over the innermost and outermost quarter of the grid.
    """
    if not tau > 1:
        raise MeasureError(f"tau must exceed 1, got {tau}")
    if not 0 < r_min < r_max:
        raise MeasureError(f"need 0 < r_min < r_max, got {r_min}, {r_max}")
    if steps < MIN_SCAN_STEPS:
        raise MeasureError(f"grid too coarse: {steps} steps, need at least {MIN_SCAN_STEPS}")

    radii = np.geomspace(r_min, r_max, steps)
    everything = list(radii) + list(radii * tau)
    masses_all = np.array(
        _map_ordered(lambda r: ball_measure(m, r, rule, epsrel=epsrel), everything, threads)
    )
    masses, masses_tau = masses_all[:steps], masses_all[steps:]
    if np.any(masses <= 0) or np.any(masses_tau <= 0):
        raise QuadratureError("non-positive ball mass in doubling scan")
    ratios = masses_tau / masses
    exps = np.log(ratios) / math.log(tau)

    window = max(2, int(math.ceil(FIT_WINDOW * steps)))
    inner = slice(0, window)
    outer = slice(steps - window, steps)
    e_zero, res_zero = _fit_window(radii[inner], masses[inner], masses_tau[inner], tau, exps[inner])
    e_inf, res_inf = _fit_window(radii[outer], masses[outer], masses_tau[outer], tau, exps[outer])

    n = m.dim
    bounds = doubling_constants(n, m.top_degree, m.bottom_degree)
    big, small = r1(m, rule), r2(m, rule)
    violations = 0
    for r, q in zip(radii, ratios):
        regime = bound_regime(r, tau, big, small)
        if regime == "infinity":
            nominal, const = tau ** (n + m.top_degree - 2), bounds.C_nd
        elif regime == "zero":
            nominal, const = tau ** (n + m.bottom_degree - 2), bounds.c_nj
        else:
            continue
        if not nominal / const <= q <= const * nominal:
            violations += 1
    if violations:
        logger.warning("doubling scan of %s: %d bound violations", m.poly_hash, violations)

    return DoublingScan(
        tau=float(tau),
        dim=n,
        poly_hash=m.poly_hash,
        radii=tuple(float(r) for r in radii),
        masses=tuple(float(x) for x in masses),
        masses_tau=tuple(float(x) for x in masses_tau),
        ratios=tuple(float(x) for x in ratios),
        local_exponents=tuple(float(x) for x in exps),
        exponent_at_zero=e_zero,
        exponent_at_infinity=e_inf,
        residual_at_zero=res_zero,
        residual_at_infinity=res_inf,
        bound_violations=violations,
    )


@dataclass(frozen=True)
class DegreeClassification:
    j: int
    d: int
    status: str
    expected_j: int
    expected_d: int
    scan: DoublingScan

    @property
    def degrees(self) -> Tuple[int, int]:
        return (self.j, self.d)


def degree_classify(
    m: PolyMeasure,
    rule: SphereRule,
    *,
    tau: float = 2.0,
    steps: int = 24,
    threads: int = 1,
    threshold: float = FIT_THRESHOLD,
) -> DegreeClassification:
    """Degrees (j, d) read off the doubling exponents on [1e-3 r_2, 1e3 r_1]."""
    scan = doubling_scan(
        m, tau, 1e-3 * r2(m, rule), 1e3 * r1(m, rule), steps, rule, threads=threads
    )
    n = m.dim
    raw_j = scan.exponent_at_zero - n + 2
    raw_d = scan.exponent_at_infinity - n + 2
    j, d = int(round(raw_j)), int(round(raw_d))
    status = "ok"
    if (
        abs(raw_j - j) > threshold
        or abs(raw_d - d) > threshold
        or scan.residual_at_zero > threshold
        or scan.residual_at_infinity > threshold
    ):
        status = "inconclusive"
        logger.info("degree classification inconclusive: raw exponents %.4f, %.4f", raw_j, raw_d)
    elif (j, d) != (m.bottom_degree, m.top_degree):
        status = "mismatch"
        logger.warning(
            "classified degrees %s differ from decomposition %s",
            (j, d),
            (m.bottom_degree, m.top_degree),
        )
    return DegreeClassification(j, d, status, m.bottom_degree, m.top_degree, scan)


@dataclass(frozen=True)
class MiddleScaleProfile:
    r2: float
    r1: float
    max_ratio: float
    min_ratio: float
    zeta_product: float
    radii: Tuple[float, ...]
    ratios: Tuple[float, ...]


def middle_scale_profile(
    m: PolyMeasure, rule: SphereRule, *, tau: float = 2.0, steps: int = 16, threads: int = 1
) -> MiddleScaleProfile:
    """Doubling ratios across the intermediate range [r_2, r_1] with zeta * zeta_*."""
    low, high = r2(m, rule), r1(m, rule)
    if not low < high:
        low, high = min(low, high), max(low, high) * tau
    scan = doubling_scan(m, tau, low, high, max(steps, MIN_SCAN_STEPS), rule, threads=threads)
    return MiddleScaleProfile(
        r2=low,
        r1=high,
        max_ratio=max(scan.ratios),
        min_ratio=min(scan.ratios),
        zeta_product=zeta(m, rule) * zeta_star(m, rule),
        radii=scan.radii,
        ratios=scan.ratios,
    )


# weak identity


@dataclass(frozen=True)
class RadialBump:
    """phi(x) = psi(|x - center| / radius) with psi(s) = exp(-1 / (1 - s^2)) on |s| < 1."""

    center: Tuple[float, ...]
    radius: float

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise MeasureError(f"bump radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def support_radius(self) -> float:
        return float(np.linalg.norm(self.center)) + self.radius

    def profile(self, rho: np.ndarray) -> np.ndarray:
        s = np.asarray(rho, dtype=float) / self.radius
        inside = np.abs(s) < 1.0
        out = np.zeros_like(s)
        out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
        return out

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.profile(np.linalg.norm(x - np.asarray(self.center), axis=-1))

    def laplacian_profile(self, rho: np.ndarray, dim: int) -> np.ndarray:
        """Laplacian of phi as a function of the distance to the centre."""
        s = np.asarray(rho, dtype=float) / self.radius
        inside = np.abs(s) < 1.0
        out = np.zeros_like(s)
        si = s[inside]
        q = 1.0 - si**2
        psi = np.exp(-1.0 / q)
        out[inside] = psi * ((6.0 * si**4 - 2.0) / q**4 - 2.0 * (dim - 1) / q**2)
        return out / self.radius**2

    def hyperplane_integral(self, dim: int) -> float:
        """Integral of phi over a hyperplane through the centre."""
        value, _ = quad(
            lambda rho: float(self.profile(np.array([rho]))[0]) * rho ** (dim - 2),
            0.0,
            self.radius,
            epsabs=0.0,
            epsrel=1e-12,
        )
        return sphere_area(dim - 1) * value


@dataclass(frozen=True)
class WeakFormReport:
    plus_volume: float
    minus_volume: float
    particle_integral: float

    @property
    def residual(self) -> float:
        return abs(self.plus_volume - self.particle_integral)

    @property
    def plus_minus_gap(self) -> float:
        scale = max(abs(self.plus_volume), abs(self.minus_volume), 1e-300)
        return abs(self.plus_volume - self.minus_volume) / scale


def bump_volume_integrals(
    m: PolyMeasure, bump: RadialBump, rule: SphereRule, *, radial_nodes: int = 32
) -> Tuple[float, float]:
    """(int_{h>0} h Lap(phi), int_{h<0} (-h) Lap(phi)) in polar coordinates about the
    bump centre, each ray split at the zeros of h."""
    _check_rule(m, rule)
    n = m.dim
    center = np.asarray(bump.center, dtype=float)
    if center.shape != (n,):
        raise MeasureError(f"bump centre has dimension {center.shape}, expected {n}")
    dirs, weights = rule.nodes, rule.weights
    rays = dirs.shape[0]
    found = find_ray_roots(m.poly, center, dirs, bump.radius)
    ray_all = np.concatenate([np.arange(rays), found.ray, np.arange(rays)])
    t_all = np.concatenate([np.zeros(rays), found.t, np.full(rays, bump.radius)])
    order = np.lexsort((t_all, ray_all))
    ray_all, t_all = ray_all[order], t_all[order]
    same = ray_all[1:] == ray_all[:-1]
    seg_ray = ray_all[:-1][same]
    left = t_all[:-1][same]
    right = t_all[1:][same]
    width = right - left
    keep = width > 0
    seg_ray, left, width = seg_ray[keep], left[keep], width[keep]

    x, w = np.polynomial.legendre.leggauss(radial_nodes)
    rho = left[:, None] + (x[None, :] + 1.0) * (width[:, None] / 2.0)
    points = center + rho[..., None] * dirs[seg_ray][:, None, :]
    h_vals = m.poly.evaluate(points)
    integrand = h_vals * bump.laplacian_profile(rho, n) * rho ** (n - 1)
    seg_int = np.sum(integrand * w[None, :], axis=1) * (width / 2.0)
    mid_sign = np.sign(
        m.poly.evaluate(center + (left + width / 2.0)[:, None] * dirs[seg_ray])
    )
    ray_w = weights[seg_ray]
    plus = math.fsum((ray_w * seg_int)[mid_sign > 0].tolist())
    minus = -math.fsum((ray_w * seg_int)[mid_sign < 0].tolist())
    return m.scale * plus, m.scale * minus


def weak_form_check(
    m: PolyMeasure,
    bump: RadialBump,
    rule: SphereRule,
    *,
    particles: Optional["ParticleMeasure"] = None,
    particle_rule: Optional[SphereRule] = None,
    seed: int = 0,
    radial_nodes: int = 32,
) -> WeakFormReport:
    """Compare int_{h>0} h Lap(phi) with the particle integral of phi and with the
    minus-side volume integral."""
    from polyharm_lab.particle_measure import discretize

    if particles is None:
        particles = discretize(m, bump.support_radius, particle_rule or rule, seed=seed)
    elif bump.support_radius > particles.truncation_radius + 1e-12:
        raise MeasureError(
            f"bump support radius {bump.support_radius:g} exceeds truncation radius "
            f"{particles.truncation_radius:g}"
        )
    plus, minus = bump_volume_integrals(m, bump, rule, radial_nodes=radial_nodes)
    particle_side = math.fsum((particles.masses * bump.value(particles.points)).tolist())
    return WeakFormReport(plus, minus, particle_side)
