import numpy as np
import pytest

from polyharm_lab.harmonic_poly import Poly, lewy_polynomial
from polyharm_lab.roots import (
    RootError,
    count_distinct_roots,
    find_ray_roots,
    isolate_real_roots,
    ray_coefficients,
    sturm_sequence,
)
from polyharm_lab.sphere_quad import random_sphere_points


def test_ray_coefficients_match_direct_evaluation():
    p = lewy_polynomial()
    rng = np.random.default_rng(0)
    origins = rng.standard_normal((5, 3))
    directions = random_sphere_points(3, 5, rng)
    coeffs = ray_coefficients(p, origins, directions)
    assert coeffs.shape == (5, 4)
    for t in (-0.7, 0.3, 1.9):
        direct = p.evaluate(origins + t * directions)
        via_coeffs = np.polynomial.polynomial.polyval(t, coeffs.T)
        assert np.allclose(direct, via_coeffs, atol=1e-12)


def test_sturm_counts_distinct_roots():
    # (t - 0.2)(t - 0.5)^2(t + 1)
    coeffs = np.polynomial.polynomial.polyfromroots([0.2, 0.5, 0.5, -1.0])
    chain = sturm_sequence(coeffs)
    assert count_distinct_roots(chain, 0.0, 1.0) == 2
    assert count_distinct_roots(chain, -2.0, 1.0) == 3
    assert count_distinct_roots(chain, 0.6, 1.0) == 0


def test_isolation_skips_even_roots():
    coeffs = np.polynomial.polynomial.polyfromroots([0.2, 0.45, 0.45, 0.9])
    roots = isolate_real_roots(coeffs, 0.0, 1.0)
    assert roots == pytest.approx([0.2, 0.9], abs=1e-12)
    assert isolate_real_roots([3.0], 0.0, 1.0) == []


def test_sturm_of_zero_polynomial():
    with pytest.raises(RootError):
        sturm_sequence([0.0, 0.0])


def test_companion_and_sturm_agree():
    p = lewy_polynomial()
    rng = np.random.default_rng(7)
    origins = 0.3 * rng.standard_normal((40, 3))
    directions = random_sphere_points(3, 40, rng)
    companion = find_ray_roots(p, origins, directions, 3.0, method="companion")
    sturm = find_ray_roots(p, origins, directions, 3.0, method="sturm")
    assert len(companion) == len(sturm) > 0
    assert np.array_equal(companion.ray, sturm.ray)
    assert np.allclose(companion.t, sturm.t, atol=1e-9)
    assert np.all((companion.t > 0) & (companion.t <= 3.0))
    hits = origins[companion.ray] + companion.t[:, None] * directions[companion.ray]
    assert np.allclose(p.evaluate(hits), 0.0, atol=1e-9)


def test_plane_crossings():
    x = Poly.coordinate(3, 0)
    origins = np.array([[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    directions = np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    found = find_ray_roots(x, origins, directions, np.array([2.0, 2.0]))
    assert found.ray.tolist() == [0]
    assert found.t == pytest.approx([1.0])


def test_unknown_method():
    with pytest.raises(RootError):
        find_ray_roots(Poly.coordinate(3, 0), np.zeros(3), np.eye(3), 1.0, method="bisect")
