"""The experiment commands behind ``polyharm run``.

Each command takes a validated ExperimentConfig and returns an ExperimentResult:
a verdict, a JSON summary and any number of CSV tables. ``write_reports`` puts
them under the output directory as ``<command>.json`` and ``<command>_<table>.csv``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np

from polyharm_lab import reports
from polyharm_lab.blowup_lab import blowup_report, nodal_components_s2, nodal_dump
from polyharm_lab.experiment_config import ExperimentConfig, parse_radii
from polyharm_lab.harmonic_poly import (
    Poly,
    laplacian,
    lewy_polynomial,
    monomials,
    poly_hash,
    random_harmonic,
    random_mixed_harmonic,
)
from polyharm_lab.measure_engine import (
    PolyMeasure,
    closed_form_ball_measure,
    degree_classify,
    doubling_scan,
    f_r,
    plus_minus_ball_measure,
    r1,
    r2,
    sandwich_at_infinity,
    sandwich_at_zero,
)
from polyharm_lab.metric_lab import f_r_distance, separation_experiment
from polyharm_lab.particle_measure import ParticleMeasure, discretize, pushforward
from polyharm_lab.sphere_quad import (
    InequalityReport,
    big_piece_measure,
    build_rule,
    check_coefficient_bound,
    constants,
    derivative_bound_ratio,
    lipschitz_check,
    random_sphere_points,
    reverse_holder_check,
    sup_norm_sphere,
)

logger = logging.getLogger(__name__)


@dataclass
class Table:
    columns: List[str]
    rows: List[List[Any]]
    metadata: Dict[str, Any] = field(default_factory=dict)


@dataclass
class ExperimentResult:
    command: str
    ok: bool
    summary: Dict[str, Any]
    tables: Dict[str, Table] = field(default_factory=dict)


def _require_poly(cfg: ExperimentConfig) -> Poly:
    assert cfg.polynomial is not None
    return cfg.polynomial


def _rel(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return abs(a - b) / scale if scale > 0 else 0.0


# commands


def verify_ball_mass(cfg: ExperimentConfig) -> ExperimentResult:
    """Surface-integral ball masses against the homogeneous closed form, and the
    plus-side integral against the minus-side one."""
    radii = parse_radii(cfg.param("radii"))
    rule = build_rule(cfg.dim, int(cfg.param("rule_level")), seed=cfg.seed or 0)
    if cfg.polynomial is not None:
        polys = [cfg.polynomial]
    else:
        rng = cfg.rng
        max_degree = int(cfg.param("max_degree"))
        polys = [
            random_harmonic(cfg.dim, int(rng.integers(1, max_degree + 1)), rng)
            for _ in range(int(cfg.param("count")))
        ]

    rows = []
    worst_closed = 0.0
    worst_gap = 0.0
    for p in polys:
        m = PolyMeasure.from_poly(p)
        for r in radii:
            plus, minus = plus_minus_ball_measure(m, r, rule)
            gap = _rel(plus, minus)
            worst_gap = max(worst_gap, gap)
            closed = rel = None
            if m.is_homogeneous:
                closed = closed_form_ball_measure(m, r, rule)
                rel = abs(plus - closed) / closed
                worst_closed = max(worst_closed, rel)
            rows.append([m.poly_hash, m.top_degree, r, plus, minus, closed, rel, gap])

    ok = worst_closed <= float(cfg.param("closed_form_rtol")) and worst_gap <= float(
        cfg.param("plus_minus_rtol")
    )
    summary = {
        "cases": len(polys),
        "radii": radii,
        "max_closed_form_rel_error": worst_closed,
        "max_plus_minus_gap": worst_gap,
    }
    table = Table(
        ["poly_hash", "degree", "r", "plus", "minus", "closed_form", "rel_error", "plus_minus_gap"],
        rows,
        {"n": cfg.dim, "rule_level": rule.level},
    )
    return ExperimentResult(cfg.command, ok, summary, {"masses": table})


def _report_row(k: int, poly: Poly, report: InequalityReport) -> List[Any]:
    return [
        k,
        str(poly),
        report.name,
        report.trials,
        report.violations,
        report.worst_ratio,
        report.constant,
    ]


def _derivative_report(p: Poly, rule, points: np.ndarray) -> InequalityReport:
    sup_two = sup_norm_sphere(p.dilate(2.0), rule).lower
    worst = 0.0
    violations = 0
    trials = 0
    for order in range(1, p.degree + 1):
        for alpha in monomials(p.dim, order):
            ratios = derivative_bound_ratio(p, alpha, points, sup_on_radius_two=sup_two)
            trials += ratios.size
            violations += int(np.sum(ratios > 1.0 + 1e-12))
            worst = max(worst, float(ratios.max()))
    return InequalityReport("derivative-bound", trials, violations, worst, 1.0)


def verify_sphere_bounds(cfg: ExperimentConfig) -> ExperimentResult:
    """Randomized sweep of the sphere inequalities: Lipschitz, big piece, reverse
    Hoelder, derivative bound and the coefficient bound."""
    rng = cfg.rng
    rule = build_rule(cfg.dim, int(cfg.param("rule_level")), seed=cfg.seed or 0)
    pairs = int(cfg.param("pairs"))
    rows = []
    totals: Dict[str, List[int]] = {}
    for k in range(1, int(cfg.param("max_degree")) + 1):
        consts = constants(cfg.dim, k)
        for _ in range(int(cfg.param("polys_per_degree"))):
            p = random_harmonic(cfg.dim, k, rng)
            big = big_piece_measure(p, rule)
            points = random_sphere_points(cfg.dim, int(cfg.param("derivative_points")), rng)
            checks = [
                lipschitz_check(p, rule, pairs, rng),
                reverse_holder_check(p, rule),
                InequalityReport("big-piece", 1, int(big < consts.l), consts.l / big, consts.l),
                check_coefficient_bound(p, rule),
                _derivative_report(p, rule, points),
            ]
            for report in checks:
                rows.append(_report_row(k, p, report))
                tally = totals.setdefault(report.name, [0, 0])
                tally[0] += report.trials
                tally[1] += report.violations

    violations = sum(v for _, v in totals.values())
    summary = {
        "trials": {name: t for name, (t, _) in sorted(totals.items())},
        "violations": {name: v for name, (_, v) in sorted(totals.items())},
        "total_violations": violations,
    }
    table = Table(
        ["k", "polynomial", "check", "trials", "violations", "worst_ratio", "constant"],
        rows,
        {"n": cfg.dim, "rule_level": rule.level},
    )
    return ExperimentResult(cfg.command, violations == 0, summary, {"checks": table})


def _battery_size(cfg: ExperimentConfig) -> int:
    return int(cfg.param("count") or 0) if cfg.polynomial is None else 0


def _sandwich_failures(m: PolyMeasure, rule, count: int) -> int:
    """Two-sided ball-mass bounds at ``count`` radii beyond r1 and ``count`` below r2."""
    if count < 1:
        return 0
    big, small = r1(m, rule), r2(m, rule)
    outer = np.geomspace(1.5 * big, 1e2 * big, count)
    inner = np.geomspace(1e-2 * small, small / 1.5, count)
    checks = [sandwich_at_infinity(m, float(r), rule) for r in outer]
    checks += [sandwich_at_zero(m, float(r), rule) for r in inner]
    return sum(not s.holds for s in checks)


def _doubling_battery(cfg: ExperimentConfig, count: int) -> ExperimentResult:
    """Random mixed polynomials h_j + h_d: degree classification pass rate and the
    two-sided bounds on both sides of the middle scales."""
    rng = cfg.rng
    rule = build_rule(cfg.dim, int(cfg.param("rule_level")), seed=cfg.seed or 0)
    max_degree = max(2, int(cfg.param("max_degree")))
    per_side = int(cfg.param("sandwich_radii"))
    rows = []
    for _ in range(count):
        d = int(rng.integers(2, max_degree + 1))
        j = int(rng.integers(1, d))
        m = PolyMeasure.from_poly(random_mixed_harmonic(cfg.dim, [j, d], rng))
        cls = degree_classify(
            m,
            rule,
            tau=float(cfg.param("tau")),
            steps=int(cfg.param("steps")),
            threads=cfg.threads,
            threshold=float(cfg.param("fit_threshold")),
        )
        correct = cls.status == "ok" and cls.degrees == (j, d)
        failures = _sandwich_failures(m, rule, per_side)
        rows.append([m.poly_hash, j, d, cls.j, cls.d, cls.status, correct, failures])

    passed = sum(1 for row in rows if row[6])
    pass_rate = passed / count
    sandwich_failures = sum(row[7] for row in rows)
    min_rate = float(cfg.param("min_pass_rate"))
    summary = {
        "cases": count,
        "classified": passed,
        "pass_rate": pass_rate,
        "min_pass_rate": min_rate,
        "sandwich_checks": 2 * per_side * count if per_side > 0 else 0,
        "sandwich_failures": sandwich_failures,
    }
    ok = pass_rate >= min_rate and sandwich_failures == 0
    table = Table(
        ["poly_hash", "j", "d", "found_j", "found_d", "status", "correct", "sandwich_failures"],
        rows,
        {"n": cfg.dim, "rule_level": rule.level},
    )
    return ExperimentResult(cfg.command, ok, summary, {"battery": table})


def run_doubling_scan(cfg: ExperimentConfig) -> ExperimentResult:
    count = _battery_size(cfg)
    if count > 0:
        return _doubling_battery(cfg, count)
    m = PolyMeasure.from_poly(_require_poly(cfg))
    rule = build_rule(cfg.dim, int(cfg.param("rule_level")), seed=cfg.seed or 0)
    tau = float(cfg.param("tau"))
    steps = int(cfg.param("steps"))
    summary: Dict[str, Any] = {"poly_hash": m.poly_hash, "r1": r1(m, rule), "r2": r2(m, rule)}
    ok = True
    if cfg.param("classify"):
        cls = degree_classify(
            m,
            rule,
            tau=tau,
            steps=steps,
            threads=cfg.threads,
            threshold=float(cfg.param("fit_threshold")),
        )
        scan = cls.scan
        summary.update(
            {
                "j": cls.j,
                "d": cls.d,
                "status": cls.status,
                "expected_j": cls.expected_j,
                "expected_d": cls.expected_d,
            }
        )
        ok = cls.status == "ok"
    else:
        r_min = float(cfg.param("r_min") or 1e-3 * summary["r2"])
        r_max = float(cfg.param("r_max") or 1e3 * summary["r1"])
        scan = doubling_scan(m, tau, r_min, r_max, steps, rule, threads=cfg.threads)
    summary.update(
        {
            "tau": scan.tau,
            "exponent_at_zero": scan.exponent_at_zero,
            "exponent_at_infinity": scan.exponent_at_infinity,
            "residual_at_zero": scan.residual_at_zero,
            "residual_at_infinity": scan.residual_at_infinity,
            "bound_violations": scan.bound_violations,
        }
    )
    ok = ok and scan.bound_violations == 0
    rows = [[row["r"], row["ratio"], row["local_exponent"]] for row in scan.rows()]
    table = Table(["r", "ratio", "local_exponent"], rows, scan.header())
    return ExperimentResult(cfg.command, ok, summary, {"scan": table})


def _separation_battery(cfg: ExperimentConfig, count: int) -> ExperimentResult:
    """Random homogeneous h of degree d against cones of a different degree k: every
    case should produce a witness radius."""
    rng = cfg.rng
    seed = int(cfg.seed or 0)
    rule = build_rule(cfg.dim, int(cfg.param("rule_level")), seed=seed)
    radii = parse_radii(cfg.param("radii"))
    max_degree = max(2, int(cfg.param("max_degree")))
    rows = []
    for case in range(count):
        d = int(rng.integers(1, max_degree + 1))
        k = int(rng.choice([other for other in range(1, max_degree + 1) if other != d]))
        h = random_harmonic(cfg.dim, d, rng)
        report = separation_experiment(
            h,
            k,
            radii,
            rule,
            restarts=int(cfg.param("restarts")),
            maxiter=int(cfg.param("maxiter")),
            seed=seed,
            threads=cfg.threads,
        )
        rows.append(
            [case, poly_hash(h), d, k, max(report.values), report.witness_radius, report.consistent]
        )
        logger.debug("separation case %d: d=%d k=%d witness=%s", case, d, k, report.witness_radius)

    found = sum(1 for row in rows if row[-1])
    summary = {"cases": count, "witnesses": found, "pass_rate": found / count}
    table = Table(
        ["case", "poly_hash", "degree", "k", "max_distance", "witness_radius", "consistent"],
        rows,
        {"n": cfg.dim, "rule_level": rule.level},
    )
    return ExperimentResult(cfg.command, found == count, summary, {"battery": table})


def run_cone_distance(cfg: ExperimentConfig) -> ExperimentResult:
    count = _battery_size(cfg)
    if count > 0:
        return _separation_battery(cfg, count)
    h = _require_poly(cfg)
    rule = build_rule(cfg.dim, int(cfg.param("rule_level")), seed=cfg.seed or 0)
    report = separation_experiment(
        h,
        int(cfg.param("k")),
        parse_radii(cfg.param("radii")),
        rule,
        restarts=int(cfg.param("restarts")),
        maxiter=int(cfg.param("maxiter")),
        seed=int(cfg.seed or 0),
        threads=cfg.threads,
    )
    rows = [
        list(row)
        for row in zip(report.radii, report.values, report.noise_floors, report.converged)
    ]
    table = Table(["r", "distance", "noise_floor", "converged"], rows, {"k": report.k})
    return ExperimentResult(cfg.command, report.consistent, report.to_json(), {"distances": table})


def run_blowup(cfg: ExperimentConfig) -> ExperimentResult:
    m = PolyMeasure.from_poly(_require_poly(cfg))
    rule = build_rule(cfg.dim, int(cfg.param("rule_level")), seed=cfg.seed or 0)
    zero_rule = build_rule(cfg.dim, int(cfg.param("zero_rule_level")), seed=cfg.seed or 0)
    radii = sorted(parse_radii(cfg.param("radii")), reverse=True)
    report = blowup_report(
        m,
        radii,
        rule,
        window=float(cfg.param("window")),
        zero_rule=zero_rule,
        seed=int(cfg.seed or 0),
        threads=cfg.threads,
    )
    limit = float(cfg.param("max_final_distance"))
    summary = {
        "poly_hash": report.poly_hash,
        "limit_degree": report.limit_degree,
        "final_distance": report.final_distance,
        "monotone_last_decade": report.monotone_last_decade,
        "hausdorff_decreasing": report.hausdorff_decreasing,
    }
    ok = (
        report.monotone_last_decade
        and report.hausdorff_decreasing
        and report.final_distance <= limit
    )
    table = Table(
        ["r", "f1_distance", "hausdorff", "resolution"],
        [[row.r, row.f1_distance, row.hausdorff, row.resolution] for row in report.rows],
        {"poly_hash": report.poly_hash, "limit_degree": report.limit_degree},
    )
    return ExperimentResult(cfg.command, ok, summary, {"blowup": table})


def run_lewy_demo(cfg: ExperimentConfig) -> ExperimentResult:
    h = _require_poly(cfg)
    rule = build_rule(cfg.dim, int(cfg.param("rule_level")), seed=cfg.seed or 0)
    components = nodal_components_s2(
        h, int(cfg.param("grid_level")), max_level=int(cfg.param("max_grid_level"))
    )
    harmonic = laplacian(h).is_zero
    cls = degree_classify(
        PolyMeasure.from_poly(h), rule, steps=int(cfg.param("steps")), threads=cfg.threads
    )
    expected = cfg.param("expected_components")
    if expected is None and poly_hash(h) == poly_hash(lewy_polynomial()):
        expected = 2
    # odd degree: h(-x) = -h(x) swaps positive and negative domains
    parity_ok = components % 2 == 0 if h.degree % 2 == 1 else True
    summary = {
        "polynomial": str(h),
        "laplacian_is_zero": harmonic,
        "nodal_components": components,
        "expected_components": expected,
        "antipodal_parity": parity_ok,
        "degrees": [cls.j, cls.d],
        "classification_status": cls.status,
    }
    ok = harmonic and cls.status == "ok" and parity_ok
    if expected is not None:
        ok = ok and components == int(expected)
    if cfg.param("dump"):
        csv_path, obj_path = nodal_dump(
            h, int(cfg.param("max_grid_level")), Path(cfg.out) / "nodal_grid"
        )
        summary["dump"] = [csv_path.name, obj_path.name]
    return ExperimentResult(cfg.command, ok, summary)


def run_fr_metric(cfg: ExperimentConfig) -> ExperimentResult:
    """Semi-metric axioms, monotonicity in r, F_r(mu, 0) = F_r(mu) and the composition
    law on particle clouds of one polynomial measure."""
    m = PolyMeasure.from_poly(_require_poly(cfg))
    seed = int(cfg.seed or 0)
    rule = build_rule(cfg.dim, int(cfg.param("rule_level")), seed=seed)
    big_r = float(cfg.param("truncation_radius"))
    radii = sorted(parse_radii(cfg.param("radii")))
    tol = float(cfg.param("lp_tol"))
    s = float(cfg.param("composition_scale"))

    mu = discretize(m, big_r, rule, seed=seed)
    nu = discretize(m, big_r, rule, seed=seed + 1).scaled(1.1)
    rho = discretize(m, big_r, rule, seed=seed + 2).scaled(0.8)
    empty = ParticleMeasure.empty(cfg.dim, big_r)

    rows: List[List[Any]] = []

    def check(name: str, r: float, lhs: float, rhs: float, passed: bool) -> None:
        rows.append([name, r, lhs, rhs, passed])

    previous: Optional[float] = None
    for r in radii:
        d_mn = f_r_distance(mu, nu, r, seed=seed)
        d_nm = f_r_distance(nu, mu, r, seed=seed)
        d_nr = f_r_distance(nu, rho, r, seed=seed)
        d_mr = f_r_distance(mu, rho, r, seed=seed)
        zero = f_r_distance(mu, empty, r, seed=seed)
        scale = max(1.0, d_mn)
        check("symmetry", r, d_mn, d_nm, abs(d_mn - d_nm) <= tol * scale)
        check("triangle", r, d_mr, d_mn + d_nr, d_mr <= d_mn + d_nr + tol * scale)
        check("zero-measure", r, zero, mu.f_r_self(r), abs(zero - mu.f_r_self(r)) <= tol * scale)
        if previous is not None:
            check("monotone", r, previous, d_mn, previous <= d_mn + tol * scale)
        previous = d_mn
        if s * r <= big_r:
            wide = f_r_distance(mu, nu, s * r, seed=seed)
            origin = np.zeros(cfg.dim)
            pushed = s * f_r_distance(
                pushforward(mu, origin, s), pushforward(nu, origin, s), r, seed=seed
            )
            check("composition", r, wide, pushed, abs(wide - pushed) <= tol * max(1.0, wide))
        exact = f_r(m, r, rule)
        particle = mu.f_r_self(r)
        check(
            "particle-vs-quadrature",
            r,
            particle,
            exact,
            _rel(particle, exact) <= float(cfg.param("particle_rtol")),
        )

    failed = [row for row in rows if not row[-1]]
    summary = {
        "poly_hash": m.poly_hash,
        "truncation_radius": big_r,
        "particles": mu.size,
        "checks": len(rows),
        "failed": [f"{row[0]}@r={row[1]:g}" for row in failed],
    }
    table = Table(["check", "r", "lhs", "rhs", "passed"], rows, {"seed": seed})
    return ExperimentResult(cfg.command, not failed, summary, {"checks": table})


COMMAND_HANDLERS: Mapping[str, Callable[[ExperimentConfig], ExperimentResult]] = {
    "verify-ball-mass": verify_ball_mass,
    "verify-sphere-bounds": verify_sphere_bounds,
    "doubling-scan": run_doubling_scan,
    "cone-distance": run_cone_distance,
    "blowup": run_blowup,
    "lewy-demo": run_lewy_demo,
    "fr-metric": run_fr_metric,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    handler = COMMAND_HANDLERS[cfg.command]
    logger.info("running %s (seed=%s, threads=%d)", cfg.command, cfg.seed, cfg.threads)
    result = handler(cfg)
    if not result.ok:
        logger.warning("%s finished with a failed check", cfg.command)
    return result


def write_reports(
    result: ExperimentResult, cfg: ExperimentConfig, *, timestamp: Optional[str] = None
) -> List[Path]:
    out = Path(cfg.out)
    payload = {"ok": result.ok, "config": cfg.describe(), "summary": result.summary}
    written = [reports.write_json(out / f"{result.command}.json", payload)]
    for name, table in sorted(result.tables.items()):
        meta = dict(table.metadata, command=result.command, seed=cfg.seed)
        written.append(
            reports.write_csv(
                out / f"{result.command}_{name}.csv",
                table.columns,
                table.rows,
                meta,
                timestamp=timestamp,
            )
        )
    return written


def summary_lines(result: ExperimentResult) -> Sequence[str]:
    lines = []
    for key, value in result.summary.items():
        if isinstance(value, float) and math.isfinite(value):
            value = f"{value:.6g}"
        lines.append(f"{key}: {value}")
    return lines
