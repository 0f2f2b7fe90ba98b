"""The F_r semi-metric between particle measures, the weak metric, the cone
distance d_r(sigma, F_k) and the separation constants eps_0, eps_1, eps_2.

F_r(mu, nu) is a Kantorovich-Rubinstein type linear program over node values f
on the union of both supports: 0 <= f(p) <= r - |p| and |f(p) - f(q)| <= |p - q|.
Up to ``full_threshold`` nodes every pair is constrained and the LP is exact;
larger problems use a k-nearest-neighbour graph plus seeded long-range pairs.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.optimize import linprog, minimize
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from polyharm_lab.harmonic_poly import (
    Poly,
    combine_basis,
    harmonic_space_dimension,
    project_onto_basis,
)
from polyharm_lab.measure_engine import PolyMeasure, f_r
from polyharm_lab.particle_measure import ParticleMeasure, discretize
from polyharm_lab.sphere_quad import SphereRule, constants, l1_norm_sphere, sphere_area

logger = logging.getLogger(__name__)

FULL_PAIR_THRESHOLD = 300
NEIGHBORS = 16
LONG_RANGE_PER_NODE = 4
VALIDITY_TOL = 1e-9
NOISE_MARGIN = 3.0

SigmaLike = Union[PolyMeasure, ParticleMeasure]


class MetricError(ValueError):
    pass


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class FrSolution:
    value: float
    nodes: np.ndarray
    f: np.ndarray
    orientation: int
    pairs: int
    exact: bool

    @property
    def size(self) -> int:
        return int(self.nodes.shape[0])


def _require_valid(mu: ParticleMeasure, r: float, label: str) -> None:
    if mu.truncation_radius < r * (1.0 - VALIDITY_TOL):
        raise MetricError(
            f"{label} is valid on B_{mu.truncation_radius:g}, cannot evaluate F_r with r={r:g}"
        )


def _merge_nodes(
    mu: ParticleMeasure, nu: ParticleMeasure, r: float
) -> Tuple[np.ndarray, np.ndarray]:
    inside_mu = mu.norms < r
    inside_nu = nu.norms < r
    points = np.concatenate([mu.points[inside_mu], nu.points[inside_nu]])
    weights = np.concatenate([mu.masses[inside_mu], -nu.masses[inside_nu]])
    if points.shape[0] == 0:
        return points, weights
    unique, inverse = np.unique(points, axis=0, return_inverse=True)
    merged = np.bincount(inverse.reshape(-1), weights=weights, minlength=unique.shape[0])
    return unique, merged


def _constraint_pairs(
    nodes: np.ndarray, neighbors: int, long_range: int, rng: np.random.Generator, exact: bool
) -> np.ndarray:
    count = nodes.shape[0]
    if exact:
        i, j = np.triu_indices(count, k=1)
        return np.column_stack([i, j])
    k = min(neighbors + 1, count)
    _, idx = cKDTree(nodes).query(nodes, k=k)
    local = np.column_stack([np.repeat(np.arange(count), k - 1), idx[:, 1:].reshape(-1)])
    far = rng.integers(0, count, size=(long_range, 2))
    pairs = np.concatenate([local, far])
    pairs = np.sort(pairs, axis=1)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    return np.unique(pairs, axis=0)


def f_r_witness(
    mu: ParticleMeasure,
    nu: ParticleMeasure,
    r: float,
    *,
    neighbors: int = NEIGHBORS,
    full_threshold: int = FULL_PAIR_THRESHOLD,
    seed: int = 0,
) -> FrSolution:
    """Solve the F_r linear program and return the optimal node values."""
    if not r > 0:
        raise MetricError(f"radius must be positive, got {r}")
    if mu.dim != nu.dim:
        raise MetricError(f"dimension mismatch {mu.dim} vs {nu.dim}")
    if mu.size:
        _require_valid(mu, r, "first measure")
    if nu.size:
        _require_valid(nu, r, "second measure")
    nodes, weights = _merge_nodes(mu, nu, r)
    count = nodes.shape[0]
    if count == 0 or not np.any(weights):
        return FrSolution(0.0, nodes, np.zeros(count), 1, 0, True)

    upper = r - np.linalg.norm(nodes, axis=1)
    exact = count <= full_threshold
    rng = np.random.default_rng(seed)
    pairs = _constraint_pairs(nodes, neighbors, LONG_RANGE_PER_NODE * count, rng, exact)
    dist = np.linalg.norm(nodes[pairs[:, 0]] - nodes[pairs[:, 1]], axis=1)
    # the box bounds already imply the Lipschitz condition for far-apart pairs
    needed = dist < np.maximum(upper[pairs[:, 0]], upper[pairs[:, 1]])
    pairs, dist = pairs[needed], dist[needed]

    rows = pairs.shape[0]
    if rows:
        # f_i - f_j <= d_ij and f_j - f_i <= d_ij
        ones = np.ones(rows)
        data = np.concatenate([ones, -ones, -ones, ones])
        first, second = np.arange(rows), rows + np.arange(rows)
        row_idx = np.concatenate([first, first, second, second])
        col_idx = np.concatenate([pairs[:, 0], pairs[:, 1], pairs[:, 0], pairs[:, 1]])
        a_ub = sparse.csc_matrix((data, (row_idx, col_idx)), shape=(2 * rows, count))
        b_ub = np.concatenate([dist, dist])
    else:
        a_ub, b_ub = None, None
    bounds = np.column_stack([np.zeros(count), upper])

    best: Optional[Tuple[float, np.ndarray, int]] = None
    for orientation in (1, -1):
        res = linprog(
            -orientation * weights, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs"
        )
        if res.status != 0:
            raise SolverError(f"F_r linear program failed: {res.message}")
        value = -float(res.fun)
        if best is None or value > best[0]:
            best = (value, np.asarray(res.x), orientation)
    assert best is not None
    logger.debug("F_r LP: %d nodes, %d pair constraints, value %.6g", count, rows, best[0])
    return FrSolution(max(best[0], 0.0), nodes, best[1], best[2], int(rows), exact)


def f_r_distance(mu: ParticleMeasure, nu: ParticleMeasure, r: float, **kwargs) -> float:
    return f_r_witness(mu, nu, r, **kwargs).value


def lipschitz_violation(solution: FrSolution) -> float:
    """max(|f_i - f_j| - |p_i - p_j|) over all node pairs; <= 0 for a 1-Lipschitz f."""
    if solution.size < 2:
        return 0.0
    gaps = pdist(solution.f[:, None])
    return float(np.max(gaps - pdist(solution.nodes)))


def support_violation(solution: FrSolution, r: float) -> float:
    """max(f - (r - |p|)); <= 0 when f vanishes on the boundary of B_r at unit slope."""
    if solution.size == 0:
        return 0.0
    return float(np.max(solution.f - (r - np.linalg.norm(solution.nodes, axis=1))))


def weak_metric_tail(terms: int) -> float:
    return 2.0 ** (-terms)


def weak_metric(mu: ParticleMeasure, nu: ParticleMeasure, terms: int, **kwargs) -> float:
    """sum_{i=1}^{terms} 2^{-i} min(1, F_i(mu, nu)); the dropped tail is at most 2^{-terms}."""
    if terms < 1:
        raise MetricError(f"need at least one term, got {terms}")
    total = 0.0
    for i in range(1, terms + 1):
        total += 2.0 ** (-i) * min(1.0, f_r_distance(mu, nu, float(i), **kwargs))
    return total


# cone distance


@dataclass(frozen=True, eq=False)
class ConeDistResult:
    value: float
    best_coeffs: np.ndarray
    restarts: int
    converged: bool
    k: int
    r: float
    noise_floor: float
    evaluations: int
    psi_f_r: float
    restart_values: Tuple[float, ...] = field(default_factory=tuple)

    @property
    def within_noise(self) -> bool:
        return self.value <= self.noise_floor


def _unit(a: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(a))
    if norm == 0.0:
        raise MetricError("zero coefficient vector")
    return a / norm


def _sigma_cloud(
    sigma: SigmaLike, r: float, rule: SphereRule, seed: int
) -> Tuple[ParticleMeasure, float]:
    if isinstance(sigma, PolyMeasure):
        return discretize(sigma, r, rule, seed=seed), f_r(sigma, r, rule)
    _require_valid(sigma, r, "sigma")
    cloud = sigma.restricted(r)
    return cloud, cloud.f_r_self(r)


def cone_distance(
    sigma: SigmaLike,
    k: int,
    r: float,
    rule: SphereRule,
    *,
    restarts: int = 12,
    maxiter: int = 500,
    seed: int = 0,
    threads: int = 1,
    coarsen: Optional[float] = None,
    neighbors: int = NEIGHBORS,
) -> ConeDistResult:
    """d_r(sigma, F_k): the F_r distance from sigma / F_r(sigma) to the nearest omega_p
    with p homogeneous harmonic of degree k and F_r(omega_p) = 1.

    Candidates are coefficient vectors over ``harmonic_basis(n, k)``; each is
    discretized with the same rule and seed as sigma and normalized by its own
    cloud F_r. Nelder-Mead runs from the projection of sigma's degree-k part (when
    it has one) and from seeded random unit vectors.
    """
    if not r > 0:
        raise MetricError(f"radius must be positive, got {r}")
    n = sigma.dim
    size = harmonic_space_dimension(n, k)
    cloud, f_sigma = _sigma_cloud(sigma, r, rule, seed)
    if not f_sigma > 0:
        logger.info("F_r(sigma) = 0 at r=%g; distance set to 1", r)
        return ConeDistResult(1.0, np.zeros(size), 0, True, k, r, 0.0, 0, 0.0)
    # both sides are normalized by their cloud F_r so discretization bias cancels
    cloud_norm = cloud.f_r_self(r)
    if not cloud_norm > 0:
        raise MetricError(f"discretization of sigma is empty on B_{r:g}; raise the rule level")
    sigma_hat = cloud.scaled(1.0 / cloud_norm)
    if coarsen:
        sigma_hat = sigma_hat.coarsen(coarsen * r)

    def candidate(a: np.ndarray) -> ParticleMeasure:
        p = combine_basis(n, k, _unit(a))
        psi = discretize(PolyMeasure.from_poly(p), r, rule, seed=seed)
        norm = psi.f_r_self(r)
        if not norm > 0:
            return ParticleMeasure.empty(n, r)
        psi = psi.scaled(1.0 / norm)
        return psi.coarsen(coarsen * r) if coarsen else psi

    def objective(a: np.ndarray) -> float:
        if not np.any(a):
            return 2.0
        psi = candidate(a)
        return f_r_distance(sigma_hat, psi, r, neighbors=neighbors, seed=seed)

    rng = np.random.default_rng(seed)
    starts: List[np.ndarray] = []
    if isinstance(sigma, PolyMeasure) and sigma.poly.homogeneous_part(k).terms:
        coords, _ = project_onto_basis(sigma.poly, k)
        if np.any(coords):
            starts.append(_unit(coords))
    while len(starts) < max(restarts, 1):
        starts.append(_unit(rng.standard_normal(size)))

    def run(start: np.ndarray):
        return minimize(
            objective,
            start,
            method="Nelder-Mead",
            options={"maxiter": maxiter, "xatol": 1e-4, "fatol": 1e-5},
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, starts))
    else:
        results = [run(s) for s in starts]

    values = [float(res.fun) for res in results]
    best = results[int(np.argmin(values))]
    converged = any(bool(res.success) for res in results)
    evaluations = sum(int(res.nfev) for res in results)
    if not converged:
        logger.warning("cone search unconverged after %d restarts (k=%d, r=%g)", len(starts), k, r)

    unit = _unit(np.asarray(best.x))
    p_best = combine_basis(n, k, unit)
    l1 = l1_norm_sphere(p_best, rule)
    factor = 2.0 * (n + k - 1) / (k * l1 * r ** (n + k - 1))
    coeffs = unit * factor
    psi_f_r = f_r(PolyMeasure.from_poly(combine_basis(n, k, coeffs)), r, rule)

    noise = noise_floor(sigma, r, rule, seed=seed, coarsen=coarsen, neighbors=neighbors)
    return ConeDistResult(
        value=min(values),
        best_coeffs=coeffs,
        restarts=len(starts),
        converged=converged,
        k=k,
        r=r,
        noise_floor=noise,
        evaluations=evaluations,
        psi_f_r=psi_f_r,
        restart_values=tuple(values),
    )


def noise_floor(
    sigma: SigmaLike,
    r: float,
    rule: SphereRule,
    *,
    seed: int = 0,
    coarsen: Optional[float] = None,
    neighbors: int = NEIGHBORS,
) -> float:
    """F_r distance between two independently seeded discretizations of sigma / F_r(sigma)."""
    if not isinstance(sigma, PolyMeasure):
        return 0.0
    first, _ = _sigma_cloud(sigma, r, rule, seed)
    second, _ = _sigma_cloud(sigma, r, rule, seed + 1)
    norm_a, norm_b = first.f_r_self(r), second.f_r_self(r)
    if not (norm_a > 0 and norm_b > 0):
        return 0.0
    a = first.scaled(1.0 / norm_a)
    b = second.scaled(1.0 / norm_b)
    if coarsen:
        a, b = a.coarsen(coarsen * r), b.coarsen(coarsen * r)
    return f_r_distance(a, b, r, neighbors=neighbors, seed=seed)


# separation constants


@dataclass(frozen=True)
class EpsilonTable:
    n: int
    d: int
    C_nd: float
    log10_C_tilde: float
    log10_eps0: Dict[int, float]

    @property
    def C_tilde(self) -> float:
        return 10.0**self.log10_C_tilde

    def eps0(self, k: int) -> float:
        return 10.0 ** self.log10_eps0[k]

    @property
    def log10_eps1(self) -> float:
        return min(self.log10_eps0.values())

    @property
    def eps1(self) -> float:
        return 10.0**self.log10_eps1

    @property
    def log10_eps2(self) -> float:
        return self.log10_eps0[1]

    @property
    def eps2(self) -> float:
        return 10.0**self.log10_eps2

    def rows(self) -> List[Dict[str, float]]:
        return [
            {"k": k, "log10_eps0": v, "eps0": 10.0**v} for k, v in sorted(self.log10_eps0.items())
        ]


def _log10_c_tilde(n: int, d: int) -> Tuple[float, float]:
    if d < 1:
        raise MetricError(f"degree must be at least 1, got {d}")
    log10_c = math.log10(6.0 * sphere_area(n)) - math.log10(constants(n, d).l)
    return log10_c, log10_c + (n + d - 1) * math.log10(2.0)


def log10_eps0(n: int, d: int, k: int) -> float:
    """log10 eps_0(n, d, k): C~ comes from the degree d of h, the exponent from k.
    k may exceed d."""
    if k < 1:
        raise MetricError(f"cone degree must be at least 1, got {k}")
    _, log10_c_tilde = _log10_c_tilde(n, d)
    return math.log10(0.5) - (n + k - 1) * (math.log10(2.0) + log10_c_tilde)


def epsilon_table(n: int, d: int) -> EpsilonTable:
    """eps_0(n, d, k) = (1/2) (2 C~)^{-(n+k-1)} with C~ = 2^{n+d-1} C_{n,d},
    C_{n,d} = 6 sigma_{n-1} / l_{n,d}, kept in log10 since it underflows quickly."""
    log10_c, log10_c_tilde = _log10_c_tilde(n, d)
    table = {k: log10_eps0(n, d, k) for k in range(1, d + 1)}
    return EpsilonTable(n, d, 10.0**log10_c, log10_c_tilde, table)


@dataclass(frozen=True)
class SeparationReport:
    k: int
    degree: int
    homogeneous: bool
    radii: Tuple[float, ...]
    values: Tuple[float, ...]
    noise_floors: Tuple[float, ...]
    converged: Tuple[bool, ...]
    log10_eps0: float
    seeds: Tuple[int, ...]
    witness_radius: Optional[float]
    consistent: bool

    @property
    def eps0(self) -> float:
        return 10.0**self.log10_eps0

    def to_json(self) -> Dict[str, object]:
        return {
            "k": self.k,
            "degree": self.degree,
            "radii": list(self.radii),
            "values": list(self.values),
            "noise_floors": list(self.noise_floors),
            "converged": list(self.converged),
            "eps0": self.eps0,
            "log10_eps0": self.log10_eps0,
            "seeds": list(self.seeds),
            "witness_radius": self.witness_radius,
            "consistent": self.consistent,
        }


def separation_experiment(
    h: Poly,
    k: int,
    radii: Sequence[float],
    rule: SphereRule,
    *,
    restarts: int = 12,
    maxiter: int = 500,
    seed: int = 0,
    threads: int = 1,
) -> SeparationReport:
    """d_r(omega_h, F_k) over ``radii`` and the first radius where it clears both
    eps_0 and the discretization noise floor."""
    m = PolyMeasure.from_poly(h)
    d = m.top_degree
    log_eps = log10_eps0(h.dim, d, k)
    values, floors, flags = [], [], []
    witness = None
    for r in radii:
        res = cone_distance(
            m, k, float(r), rule, restarts=restarts, maxiter=maxiter, seed=seed, threads=threads
        )
        values.append(res.value)
        floors.append(res.noise_floor)
        flags.append(res.converged)
        threshold = max(10.0**log_eps, NOISE_MARGIN * res.noise_floor)
        if witness is None and res.value >= threshold:
            witness = float(r)
    if m.is_homogeneous and d == k:
        consistent = witness is None
    elif d != k:
        consistent = witness is not None
    else:
        consistent = True
    if not consistent:
        logger.warning("separation experiment inconsistent for k=%d, degree %d", k, d)
    return SeparationReport(
        k=k,
        degree=d,
        homogeneous=m.is_homogeneous,
        radii=tuple(float(r) for r in radii),
        values=tuple(values),
        noise_floors=tuple(floors),
        converged=tuple(flags),
        log10_eps0=log_eps,
        seeds=(seed, seed + 1),
        witness_radius=witness,
        consistent=consistent,
    )
