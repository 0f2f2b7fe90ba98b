import math

import numpy as np
import pytest

from polyharm_lab.harmonic_poly import Poly
from polyharm_lab.measure_engine import PolyMeasure
from polyharm_lab.metric_lab import (
    MetricError,
    cone_distance,
    epsilon_table,
    f_r_distance,
    f_r_witness,
    lipschitz_violation,
    log10_eps0,
    separation_experiment,
    support_violation,
    weak_metric,
    weak_metric_tail,
)
from polyharm_lab.particle_measure import ParticleMeasure
from polyharm_lab.sphere_quad import build_rule


def random_cloud(seed: int, size: int = 40, radius: float = 2.0) -> ParticleMeasure:
    rng = np.random.default_rng(seed)
    points = rng.uniform(-0.6, 0.6, size=(size, 3))
    masses = rng.uniform(0.1, 1.0, size=size)
    return ParticleMeasure(3, points, masses, radius)


def dirac(point, mass: float = 1.0, radius: float = 4.0) -> ParticleMeasure:
    return ParticleMeasure(3, [point], [mass], radius)


def test_distance_to_itself_and_to_zero():
    mu = random_cloud(0)
    zero = ParticleMeasure.empty(3, 2.0)
    assert f_r_distance(mu, mu, 1.0) == 0.0
    assert f_r_distance(mu, zero, 1.0) == pytest.approx(mu.f_r_self(1.0), rel=1e-7)
    assert f_r_distance(dirac([0.0, 0.0, 0.0]), zero, 1.0) == pytest.approx(1.0, rel=1e-7)


def test_two_diracs():
    value = f_r_distance(dirac([0.0, 0.0, 0.1]), dirac([0.0, 0.0, 0.4]), 1.0)
    assert value == pytest.approx(0.3, abs=1e-7)


def test_homogeneity_in_the_masses():
    mu = random_cloud(1)
    base = f_r_distance(mu, ParticleMeasure.empty(3, 2.0), 1.0)
    assert f_r_distance(mu.scaled(3.0), mu.scaled(1.5), 1.0) == pytest.approx(1.5 * base, rel=1e-6)
    assert f_r_distance(mu.scaled(0.5), mu.scaled(2.0), 1.0) == pytest.approx(1.5 * base, rel=1e-6)


def test_symmetry_and_triangle_inequality():
    a, b, c = random_cloud(2), random_cloud(3), random_cloud(4)
    ab = f_r_distance(a, b, 1.0)
    assert ab == pytest.approx(f_r_distance(b, a, 1.0), rel=1e-6)
    assert ab <= f_r_distance(a, c, 1.0) + f_r_distance(c, b, 1.0) + 1e-7


def test_radius_monotone():
    a, b = random_cloud(5), random_cloud(6)
    assert f_r_distance(a, b, 0.5) <= f_r_distance(a, b, 1.0) + 1e-7


def test_witness_is_admissible():
    solution = f_r_witness(random_cloud(7), random_cloud(8), 1.0)
    assert solution.exact
    assert lipschitz_violation(solution) <= 1e-6
    assert support_violation(solution, 1.0) <= 1e-6
    assert np.all(solution.f >= -1e-9)


def test_sparse_constraint_graph_relaxes_the_program():
    a, b = random_cloud(9, size=200), random_cloud(10, size=200)
    exact = f_r_witness(a, b, 1.0, full_threshold=1000)
    approx = f_r_witness(a, b, 1.0, full_threshold=100, neighbors=8, seed=2)
    assert exact.exact and not approx.exact
    assert approx.pairs < exact.pairs
    assert approx.value >= exact.value - 1e-7


def test_validity_and_argument_errors():
    small = random_cloud(0, radius=0.5)
    with pytest.raises(MetricError):
        f_r_distance(small, random_cloud(1), 1.0)
    with pytest.raises(MetricError):
        f_r_distance(random_cloud(0), random_cloud(1), 0.0)
    with pytest.raises(MetricError):
        f_r_distance(random_cloud(0), ParticleMeasure.empty(2, 2.0), 1.0)


def test_weak_metric():
    origin = dirac([0.0, 0.0, 0.0])
    zero = ParticleMeasure.empty(3, 4.0)
    assert weak_metric(origin, origin, 3) == 0.0
    assert weak_metric(origin, zero, 3) == pytest.approx(0.875, rel=1e-7)
    assert weak_metric_tail(3) == 0.125
    with pytest.raises(MetricError):
        weak_metric(origin, zero, 0)


def test_epsilon_table():
    table = epsilon_table(3, 4)
    log_two_c = math.log10(2.0) + table.log10_C_tilde
    for k in range(1, 5):
        assert table.log10_eps0[k] + (3 + k - 1) * log_two_c == pytest.approx(math.log10(0.5))
    assert table.log10_eps1 == table.log10_eps0[4]
    assert table.log10_eps2 == table.log10_eps0[1]
    assert table.log10_eps1 <= table.log10_eps2
    assert [row["k"] for row in table.rows()] == [1, 2, 3, 4]
    assert table.C_tilde == pytest.approx(table.C_nd * 2.0 ** (3 + 4 - 1), rel=1e-9)
    with pytest.raises(MetricError):
        epsilon_table(3, 0)


def test_cone_distance_of_an_empty_measure_is_one():
    result = cone_distance(ParticleMeasure.empty(3, 2.0), 1, 1.0, build_rule(3, 8))
    assert result.value == 1.0
    assert result.restarts == 0


def test_flat_measure_lies_on_the_degree_one_cone():
    rule = build_rule(3, 8)
    flat = PolyMeasure(Poly.coordinate(3, 0))
    result = cone_distance(flat, 1, 1.0, rule, restarts=1, maxiter=20, seed=0)
    assert result.value <= 1e-6
    assert result.within_noise
    assert result.psi_f_r == pytest.approx(1.0, rel=1e-6)

    report = separation_experiment(
        Poly.coordinate(3, 0), 1, [1.0], rule, restarts=1, maxiter=20, seed=0
    )
    assert report.consistent
    assert report.witness_radius is None
    payload = report.to_json()
    assert payload["seeds"] == [0, 1]
    assert payload["k"] == 1


def test_eps0_takes_the_constant_from_the_polynomial_degree_when_k_exceeds_it():
    table = epsilon_table(3, 1)
    expected = math.log10(0.5) - (3 + 2 - 1) * (math.log10(2.0) + table.log10_C_tilde)
    assert log10_eps0(3, 1, 2) == pytest.approx(expected)
    assert log10_eps0(3, 1, 2) == pytest.approx(-32.722, abs=0.01)
    assert log10_eps0(3, 1, 2) > epsilon_table(3, 2).log10_eps0[2]
    assert log10_eps0(3, 4, 2) == epsilon_table(3, 4).log10_eps0[2]
    with pytest.raises(MetricError):
        log10_eps0(3, 1, 0)

    report = separation_experiment(
        Poly.coordinate(3, 0), 2, [1.0], build_rule(3, 8), restarts=1, maxiter=20, seed=0
    )
    assert report.degree == 1
    assert report.log10_eps0 == pytest.approx(expected)
    assert report.to_json()["log10_eps0"] == pytest.approx(expected)


def test_saddle_is_separated_from_the_degree_one_cone():
    saddle = Poly(2, {(2, 0): 1.0, (0, 2): -1.0})
    report = separation_experiment(
        saddle, 1, [1.0], build_rule(2, 64), restarts=2, maxiter=40, seed=0
    )
    assert report.degree == 2
    assert report.witness_radius == 1.0
    assert report.values[0] > report.noise_floors[0]
    assert report.consistent
