"""Sparse real polynomials on R^n and harmonic polynomial families.

A ``Poly`` stores a map from exponent tuples to float coefficients. Multi-indices
are exact integers; only coefficients carry round-off. Values are immutable and
safe to share between threads.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
from dataclasses import dataclass
from functools import cached_property, lru_cache
from itertools import combinations_with_replacement
from types import MappingProxyType
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import sympy
from scipy.linalg import null_space
from sympy.parsing.sympy_parser import convert_xor, parse_expr, standard_transformations

logger = logging.getLogger(__name__)

MultiIndex = Tuple[int, ...]

NULL_SPACE_RCOND = 1e-10
EVAL_CHUNK = 1 << 16
AXIS_ALIASES = ("x", "y", "z")


class PolyError(ValueError):
    pass


class DimensionMismatchError(PolyError):
    pass


class ZeroPolynomialError(PolyError):
    pass


class PolynomialParseError(PolyError):
    pass


def _clean_terms(dim: int, terms: Mapping[Sequence[int], float]) -> Dict[MultiIndex, float]:
    cleaned: Dict[MultiIndex, float] = {}
    for alpha, coeff in terms.items():
        key = tuple(int(a) for a in alpha)
        if len(key) != dim:
            raise DimensionMismatchError(
                f"multi-index {key} has length {len(key)}, expected {dim}"
            )
        if any(a < 0 for a in key):
            raise PolyError(f"negative exponent in multi-index {key}")
        value = float(coeff)
        if not math.isfinite(value):
            raise PolyError(f"non-finite coefficient {value} for {key}")
        total = cleaned.get(key, 0.0) + value
        if total == 0.0:
            cleaned.pop(key, None)
        else:
            cleaned[key] = total
    return cleaned


@dataclass(frozen=True)
class Poly:
    dim: int
    terms: Mapping[MultiIndex, float]

    def __post_init__(self) -> None:
        if int(self.dim) < 2:
            raise PolyError(f"ambient dimension must be at least 2, got {self.dim}")
        object.__setattr__(self, "dim", int(self.dim))
        object.__setattr__(
            self, "terms", MappingProxyType(_clean_terms(self.dim, dict(self.terms)))
        )

    def __hash__(self) -> int:
        return hash((self.dim, tuple(sorted(self.terms.items()))))

    # construction helpers

    @classmethod
    def zero(cls, dim: int) -> "Poly":
        return cls(dim, {})

    @classmethod
    def constant(cls, dim: int, value: float) -> "Poly":
        return cls(dim, {(0,) * dim: value})

    @classmethod
    def coordinate(cls, dim: int, axis: int) -> "Poly":
        if not 0 <= axis < dim:
            raise PolyError(f"axis {axis} outside 0..{dim - 1}")
        alpha = [0] * dim
        alpha[axis] = 1
        return cls(dim, {tuple(alpha): 1.0})

    # bookkeeping

    @property
    def is_zero(self) -> bool:
        return not self.terms

    @property
    def degree(self) -> int:
        """Largest total degree of a stored term; -1 for the zero polynomial."""
        if not self.terms:
            return -1
        return max(sum(alpha) for alpha in self.terms)

    @property
    def min_degree(self) -> int:
        if not self.terms:
            return -1
        return min(sum(alpha) for alpha in self.terms)

    @property
    def is_homogeneous(self) -> bool:
        return bool(self.terms) and self.degree == self.min_degree

    @property
    def constant_term(self) -> float:
        return float(self.terms.get((0,) * self.dim, 0.0))

    @cached_property
    def _exponents(self) -> np.ndarray:
        if not self.terms:
            return np.zeros((0, self.dim), dtype=np.int64)
        return np.array(list(self.terms.keys()), dtype=np.int64)

    @cached_property
    def _coefficients(self) -> np.ndarray:
        return np.array(list(self.terms.values()), dtype=float)

    # evaluation

    def evaluate(self, x: Any) -> Any:
        """Evaluate at one point (shape ``(n,)``) or a batch (shape ``(..., n)``)."""
        points = np.asarray(x, dtype=float)
        if points.ndim == 0 or points.shape[-1] != self.dim:
            raise DimensionMismatchError(
                f"point dimension {points.shape[-1] if points.ndim else 0} != poly dimension {self.dim}"
            )
        lead_shape = points.shape[:-1]
        flat = points.reshape(-1, self.dim)
        out = np.zeros(flat.shape[0], dtype=float)
        if self.terms:
            exps = self._exponents
            coeffs = self._coefficients
            max_exp = int(exps.max()) if exps.size else 0
            for start in range(0, flat.shape[0], EVAL_CHUNK):
                block = flat[start : start + EVAL_CHUNK]
                powers = np.ones((max_exp + 1,) + block.shape, dtype=float)
                for e in range(1, max_exp + 1):
                    powers[e] = powers[e - 1] * block
                monomials = np.ones((block.shape[0], exps.shape[0]), dtype=float)
                for axis in range(self.dim):
                    monomials *= powers[exps[:, axis], :, axis].T
                out[start : start + block.shape[0]] = monomials @ coeffs
        if not lead_shape:
            return float(out[0])
        return out.reshape(lead_shape)

    def __call__(self, x: Any) -> Any:
        return self.evaluate(x)

    # arithmetic

    def _check_same_dim(self, other: "Poly") -> None:
        if other.dim != self.dim:
            raise DimensionMismatchError(f"dimensions differ: {self.dim} vs {other.dim}")

    def __add__(self, other: Any) -> "Poly":
        if isinstance(other, (int, float)):
            other = Poly.constant(self.dim, float(other))
        if not isinstance(other, Poly):
            return NotImplemented
        self._check_same_dim(other)
        merged = dict(self.terms)
        for alpha, coeff in other.terms.items():
            merged[alpha] = merged.get(alpha, 0.0) + coeff
        return Poly(self.dim, merged)

    __radd__ = __add__

    def __neg__(self) -> "Poly":
        return Poly(self.dim, {a: -c for a, c in self.terms.items()})

    def __sub__(self, other: Any) -> "Poly":
        if isinstance(other, (int, float)):
            return self + (-float(other))
        if not isinstance(other, Poly):
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other: Any) -> "Poly":
        return (-self) + other

    def __mul__(self, other: Any) -> "Poly":
        if isinstance(other, (int, float)):
            value = float(other)
            return Poly(self.dim, {a: c * value for a, c in self.terms.items()})
        if not isinstance(other, Poly):
            return NotImplemented
        self._check_same_dim(other)
        product: Dict[MultiIndex, float] = {}
        for a1, c1 in self.terms.items():
            for a2, c2 in other.terms.items():
                key = tuple(i + j for i, j in zip(a1, a2))
                product[key] = product.get(key, 0.0) + c1 * c2
        return Poly(self.dim, product)

    __rmul__ = __mul__

    def __truediv__(self, value: float) -> "Poly":
        return self * (1.0 / float(value))

    # calculus

    def derivative(self, alpha: Sequence[int]) -> "Poly":
        """Partial derivative D^alpha."""
        order = tuple(int(a) for a in alpha)
        if len(order) != self.dim:
            raise DimensionMismatchError(f"derivative order {order} has wrong length")
        result: Dict[MultiIndex, float] = {}
        for exps, coeff in self.terms.items():
            if any(e < o for e, o in zip(exps, order)):
                continue
            factor = 1.0
            for e, o in zip(exps, order):
                factor *= math.perm(e, o)
            key = tuple(e - o for e, o in zip(exps, order))
            result[key] = result.get(key, 0.0) + coeff * factor
        return Poly(self.dim, result)

    def partial(self, axis: int) -> "Poly":
        order = [0] * self.dim
        order[axis] = 1
        return self.derivative(order)

    def gradient(self) -> List["Poly"]:
        return [self.partial(axis) for axis in range(self.dim)]

    def dilate(self, r: float) -> "Poly":
        """x -> p(r x)."""
        return Poly(self.dim, {a: c * float(r) ** sum(a) for a, c in self.terms.items()})

    def homogeneous_part(self, degree: int) -> "Poly":
        return Poly(self.dim, {a: c for a, c in self.terms.items() if sum(a) == degree})

    # serialization

    def to_json(self) -> Dict[str, Any]:
        return {
            "dim": self.dim,
            "terms": [{"alpha": list(a), "c": c} for a, c in sorted(self.terms.items())],
        }

    @classmethod
    def from_json(cls, payload: Mapping[str, Any]) -> "Poly":
        try:
            dim = int(payload["dim"])
            raw_terms = payload["terms"]
            terms = {tuple(entry["alpha"]): float(entry["c"]) for entry in raw_terms}
        except (KeyError, TypeError, ValueError) as exc:
            raise PolynomialParseError(f"malformed polynomial JSON: {exc}") from exc
        return cls(dim, terms)

    def __str__(self) -> str:
        if not self.terms:
            return "0"
        pieces = []
        for alpha, coeff in sorted(self.terms.items(), key=lambda t: (-sum(t[0]), t[0])):
            factors = [
                f"x{i}" if e == 1 else f"x{i}^{e}" for i, e in enumerate(alpha) if e > 0
            ]
            body = "*".join(factors)
            magnitude = abs(coeff)
            if body and magnitude == 1.0:
                text = body
            elif body:
                text = f"{magnitude:g}*{body}"
            else:
                text = f"{magnitude:g}"
            sign = "-" if coeff < 0 else "+"
            pieces.append((sign, text))
        first_sign, first = pieces[0]
        out = ("-" if first_sign == "-" else "") + first
        for sign, text in pieces[1:]:
            out += f" {sign} {text}"
        return out


def poly_hash(p: Poly) -> str:
    """Stable content hash of the canonical JSON form."""
    canonical = json.dumps(p.to_json(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def evaluate(p: Poly, x: Any) -> Any:
    return p.evaluate(x)


def laplacian(p: Poly) -> Poly:
    result = Poly.zero(p.dim)
    for axis in range(p.dim):
        order = [0] * p.dim
        order[axis] = 2
        result = result + p.derivative(order)
    return result


def is_harmonic(p: Poly, tol: float = 0.0) -> bool:
    """Exact check by default; with ``tol`` > 0 compares Laplacian coefficients
    against ``tol`` times the largest coefficient of ``p``."""
    lap = laplacian(p)
    if tol <= 0.0:
        return lap.is_zero
    if lap.is_zero:
        return True
    scale = max(abs(c) for c in p.terms.values())
    return max(abs(c) for c in lap.terms.values()) <= tol * scale


@dataclass(frozen=True)
class HomogDecomp:
    parts: Mapping[int, Poly]
    top_degree: int
    bottom_degree: int

    def total(self) -> Poly:
        dim = next(iter(self.parts.values())).dim
        out = Poly.zero(dim)
        for part in self.parts.values():
            out = out + part
        return out

    def part(self, degree: int) -> Optional[Poly]:
        return self.parts.get(degree)


def homogeneous_decompose(p: Poly, tol: float = 0.0) -> HomogDecomp:
    if p.is_zero:
        raise ZeroPolynomialError("cannot decompose the zero polynomial")
    grouped: Dict[int, Dict[MultiIndex, float]] = {}
    for alpha, coeff in p.terms.items():
        grouped.setdefault(sum(alpha), {})[alpha] = coeff
    parts = {deg: Poly(p.dim, terms) for deg, terms in sorted(grouped.items())}
    if is_harmonic(p, tol):
        for deg, part in parts.items():
            if not is_harmonic(part, tol):
                raise PolyError(f"harmonic input has non-harmonic part of degree {deg}")
    return HomogDecomp(
        parts=MappingProxyType(parts), top_degree=max(parts), bottom_degree=min(parts)
    )


def dilate_scale(p: Poly, c: float, r: float) -> Poly:
    """g(x) = c r^n p(r x); the measure of g is c T_{0,r}[omega_p]."""
    if c <= 0 or r <= 0:
        raise PolyError(f"dilate_scale needs c > 0 and r > 0, got c={c}, r={r}")
    return p.dilate(r) * (float(c) * float(r) ** p.dim)


def radial_derivative_poly(p: Poly, r: float) -> Poly:
    """The polynomial theta -> d/dr [p(r theta)] = sum_i i r^(i-1) p_i(theta)."""
    terms = {}
    for alpha, coeff in p.terms.items():
        deg = sum(alpha)
        if deg == 0:
            continue
        terms[alpha] = coeff * deg * float(r) ** (deg - 1)
    return Poly(p.dim, terms)


def radial_derivative_parts(p: Poly) -> Dict[int, Poly]:
    """Degree i -> i * p_i, so that d/dr p(r theta) = sum_i r^(i-1) (i p_i)(theta)."""
    decomp = homogeneous_decompose(p) if not p.is_zero else None
    if decomp is None:
        return {}
    return {deg: part * float(deg) for deg, part in decomp.parts.items() if deg > 0}


# harmonic families


def monomials(dim: int, degree: int) -> List[MultiIndex]:
    """All exponent tuples of total degree ``degree`` in lexicographic order."""
    if degree < 0:
        return []
    out = set()
    for combo in combinations_with_replacement(range(dim), degree):
        alpha = [0] * dim
        for axis in combo:
            alpha[axis] += 1
        out.add(tuple(alpha))
    return sorted(out, reverse=True)


def _laplacian_matrix(dim: int, degree: int) -> np.ndarray:
    cols = monomials(dim, degree)
    rows = monomials(dim, degree - 2)
    row_index = {alpha: i for i, alpha in enumerate(rows)}
    matrix = np.zeros((len(rows), len(cols)), dtype=float)
    for j, alpha in enumerate(cols):
        for axis in range(dim):
            if alpha[axis] < 2:
                continue
            target = list(alpha)
            target[axis] -= 2
            matrix[row_index[tuple(target)], j] += alpha[axis] * (alpha[axis] - 1)
    return matrix


def harmonic_space_dimension(dim: int, degree: int) -> int:
    total = math.comb(dim + degree - 1, degree)
    if degree < 2:
        return total
    return total - math.comb(dim + degree - 3, degree - 2)


@lru_cache(maxsize=64)
def _basis_matrix(dim: int, degree: int) -> np.ndarray:
    cols = monomials(dim, degree)
    if degree < 2:
        return np.eye(len(cols))
    return null_space(_laplacian_matrix(dim, degree), rcond=NULL_SPACE_RCOND)


def harmonic_basis(n: int, k: int) -> List[Poly]:
    """Orthonormal (in coefficient space) basis of homogeneous harmonics of degree k."""
    if n < 2 or k < 1:
        raise PolyError(f"harmonic_basis needs n >= 2 and k >= 1, got n={n}, k={k}")
    cols = monomials(n, k)
    basis = _basis_matrix(n, k)
    expected = harmonic_space_dimension(n, k)
    if basis.shape[1] != expected:
        raise PolyError(f"null space rank {basis.shape[1]} != expected {expected} for n={n}, k={k}")
    return [
        Poly(n, {alpha: float(v) for alpha, v in zip(cols, basis[:, i]) if v != 0.0})
        for i in range(basis.shape[1])
    ]


def coefficient_vector(p: Poly, degree: int) -> np.ndarray:
    return np.array([p.terms.get(alpha, 0.0) for alpha in monomials(p.dim, degree)])


def project_onto_basis(p: Poly, degree: int) -> Tuple[np.ndarray, float]:
    """Least-squares coordinates of the degree part of ``p`` in ``harmonic_basis`` and the
    residual norm of the projection."""
    basis = _basis_matrix(p.dim, degree)
    target = coefficient_vector(p, degree)
    coords, *_ = np.linalg.lstsq(basis, target, rcond=None)
    residual = float(np.linalg.norm(basis @ coords - target))
    return coords, residual


def combine_basis(n: int, k: int, coords: Sequence[float]) -> Poly:
    basis = _basis_matrix(n, k)
    values = basis @ np.asarray(coords, dtype=float)
    return Poly(n, {alpha: float(v) for alpha, v in zip(monomials(n, k), values)})


def random_harmonic(n: int, k: int, rng: np.random.Generator) -> Poly:
    size = harmonic_space_dimension(n, k)
    coords = rng.standard_normal(size)
    coords /= np.linalg.norm(coords)
    return combine_basis(n, k, coords)


def random_mixed_harmonic(n: int, degrees: Iterable[int], rng: np.random.Generator) -> Poly:
    out = Poly.zero(n)
    for k in sorted(set(degrees)):
        out = out + random_harmonic(n, k, rng)
    return out


def lewy_polynomial() -> Poly:
    """x^2(y - z) + y^2(z - x) + z^2(x - y) - xyz."""
    return Poly(
        3,
        {
            (2, 1, 0): 1.0,
            (2, 0, 1): -1.0,
            (0, 2, 1): 1.0,
            (1, 2, 0): -1.0,
            (1, 0, 2): 1.0,
            (0, 1, 2): -1.0,
            (1, 1, 1): -1.0,
        },
    )


# text format

_INDEXED = re.compile(r"^x(\d+)$")


def parse_polynomial(text: str, dim: Optional[int] = None) -> Poly:
    """Parse strings like ``"x0^2*x1 - 3*x2"`` or ``"x*y + x"``.

    The aliases x, y, z stand for x0, x1, x2. When ``dim`` is omitted it is the
    largest variable index used plus one, and at least 2.
    """
    local = {name: sympy.Symbol(f"x{i}") for i, name in enumerate(AXIS_ALIASES)}
    try:
        expr = parse_expr(
            text,
            local_dict=local,
            transformations=standard_transformations + (convert_xor,),
        )
    except Exception as exc:  # sympy raises a wide range of types here
        raise PolynomialParseError(f"cannot parse polynomial {text!r}: {exc}") from exc

    indices = []
    for symbol in expr.free_symbols:
        match = _INDEXED.match(symbol.name)
        if not match:
            raise PolynomialParseError(f"unknown variable {symbol.name!r} in {text!r}")
        indices.append(int(match.group(1)))
    needed = max(indices) + 1 if indices else 2
    n = dim if dim is not None else max(needed, 2)
    if needed > n:
        raise DimensionMismatchError(f"{text!r} uses x{needed - 1} but dim is {n}")

    gens = [sympy.Symbol(f"x{i}") for i in range(n)]
    try:
        poly = sympy.Poly(sympy.expand(expr), *gens)
    except sympy.PolynomialError as exc:
        raise PolynomialParseError(f"{text!r} is not a polynomial: {exc}") from exc
    terms = {}
    for monom, coeff in poly.terms():
        try:
            terms[tuple(int(e) for e in monom)] = float(coeff)
        except TypeError as exc:
            raise PolynomialParseError(f"non-numeric coefficient {coeff} in {text!r}") from exc
    return Poly(n, terms)


def load_polynomial(spec: Any, dim: Optional[int] = None) -> Poly:
    """Accept a Poly, a JSON mapping or a text expression."""
    if isinstance(spec, Poly):
        return spec
    if isinstance(spec, Mapping):
        return Poly.from_json(spec)
    if isinstance(spec, str):
        stripped = spec.strip()
        if stripped.startswith("{"):
            try:
                return Poly.from_json(json.loads(stripped))
            except json.JSONDecodeError as exc:
                raise PolynomialParseError(f"invalid polynomial JSON: {exc}") from exc
        return parse_polynomial(stripped, dim)
    raise PolynomialParseError(f"unsupported polynomial specification of type {type(spec)}")
