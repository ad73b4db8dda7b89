"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -s`` (or
``python3 tests/test_acceptance.py``) to see the table.
"""

import math
import sys
import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from hbubble.analytic import level_brackets, newtonian_potential, sphere_level, sphere_map, sphere_radius
from hbubble.fields import (
    CONDKZERO_THRESHOLD,
    ScalarField,
    ball_integral,
    bump_field,
    check_conditions,
    conditions_from_k0,
    constant_field,
    radial_field,
    restriction_boundary,
    restriction_margin,
    sum_field,
)
from hbubble.functionals import (
    ISOPERIMETRIC_S,
    SurfaceMap,
    area,
    barycenter,
    dirichlet,
    energy,
    evaluate,
    gradient,
    grad_l2,
    pair,
    volume,
    weighted_volume,
)
from hbubble.mesh import build_icosphere, icosphere_outward
from hbubble.minimax import (
    build_ball_grid,
    deform_family,
    degree,
    estimate_levels,
    family_degree,
    homotopy_check,
    init_family,
)
from hbubble.optimize import DescentOptions, constrained_descent, diagnose_escape, perturbed, refine_critical

FOUR_PI = 4.0 * math.pi
POSITIVE = radial_field(0.4)


@pytest.fixture
def emit(capsys):
    def _emit(number, passed, detail):
        with capsys.disabled():
            print(f"\n[acceptance {number:2d}] {'PASS' if passed else 'FAIL'}  {detail}")
        return passed

    return _emit


def _rel(a, b):
    return abs(a - b) / abs(b)


def _smooth_map(mesh, rng, amp=0.3):
    x = mesh.vertices
    A = np.eye(3) + 0.2 * rng.normal(size=(3, 3))
    if np.linalg.det(A) < 0:
        A[:, 0] *= -1
    k = rng.normal(size=(3, 3))
    phase = rng.uniform(0, 2 * np.pi, size=3)
    wobble = np.sin(x @ k + phase) * amp * rng.uniform(0.2, 1.0, size=3)
    return SurfaceMap(mesh, x @ A.T + rng.normal(size=3) + wobble)


def test_01_sphere_identities(emit):
    start = time.perf_counter()
    mesh = build_icosphere(5)
    u = SurfaceMap.identity(mesh)
    D, A, V = dirichlet(u), area(u), volume(u)
    elapsed = time.perf_counter() - start
    errs = (_rel(D, FOUR_PI), _rel(A, FOUR_PI), _rel(V, -FOUR_PI / 3))
    ok = mesh.n_vertices == 10242 and max(errs) <= 1e-3 and elapsed < 5.0
    assert emit(1, ok, f"level 5: rel err D {errs[0]:.2e}, A {errs[1]:.2e}, V {errs[2]:.2e} (tol 1e-3); {elapsed:.2f} s")


def test_02_convergence_order(emit):
    err = {L: abs(dirichlet(SurfaceMap.identity(build_icosphere(L))) - FOUR_PI) for L in (3, 4, 5)}
    r1, r2 = err[3] / err[4], err[4] / err[5]
    ok = 3 <= r1 <= 5 and 3 <= r2 <= 5
    assert emit(2, ok, f"|D-4pi| ratios 3->4 {r1:.3f}, 4->5 {r2:.3f} (need [3, 5])")


def test_03_newtonian_potential(emit):
    worst = 0.0
    for r in (0.0, 0.5, 1.0, 2.0, 5.0):
        p = np.array([r, 0.0, 0.0])
        K = ScalarField(evaluator=lambda q, p=p: 1.0 / np.linalg.norm(q - p, axis=-1))
        q = ball_integral(K, np.zeros(3), 1.0, pole=p if r <= 1 else None)
        worst = max(worst, _rel(q, newtonian_potential(p)[0]))
    I0 = newtonian_potential(np.zeros(3))[0]
    rng = np.random.default_rng(0)
    fd_worst = 0.0
    for p in rng.normal(size=(30, 3)) * 2:
        if abs(np.linalg.norm(p) - 1) < 1e-2:
            continue
        _, E = newtonian_potential(p)
        h = 1e-5
        g = np.array([(newtonian_potential(p + h * e)[0] - newtonian_potential(p - h * e)[0]) / (2 * h) for e in np.eye(3)])
        fd_worst = max(fd_worst, np.linalg.norm(E + g) / np.linalg.norm(E))
    ok = worst <= 1e-3 and I0 == 2 * math.pi and fd_worst <= 1e-6
    assert emit(3, ok, f"quadrature rel err {worst:.2e}; I(0) = {I0!r}; E = -grad I rel err {fd_worst:.2e}")


def test_04_weighted_sphere_volume(emit):
    mesh = build_icosphere(5)
    library = [
        constant_field(0.7),
        constant_field(-1.2),
        radial_field(0.4),
        radial_field(1.3, 2.0),
        bump_field(-0.8, (0.2, -0.1, 0.3), 1.5),
        sum_field([radial_field(0.4), bump_field(0.3, (0.5, 0.0, 0.0), 0.8)]),
    ]
    center, r = np.array([0.3, -0.2, 0.1]), 0.9
    worst = 0.0
    for K in library:
        ball = ball_integral(K, center, r)
        inward = evaluate(SurfaceMap(mesh, center + r * mesh.vertices), K).Q
        outward = evaluate(SurfaceMap(mesh, center - r * mesh.vertices), K).Q
        worst = max(worst, _rel(inward, -ball), _rel(outward, ball))
    ok = worst <= 1e-3
    assert emit(4, ok, f"max rel err of Q vs -/+ ball integral over {len(library)} fields: {worst:.2e} (tol 1e-3)")


def _central(f, u, phi, h):
    """Richardson-extrapolated central difference of f at u along phi."""

    def c(step):
        return (f(u + step * phi) - f(u - step * phi)) / (2 * step)

    return (4 * c(h / 2) - c(h)) / 3


def test_05_gradient_consistency(emit):
    start = time.perf_counter()
    mesh = build_icosphere(3)
    rng = np.random.default_rng(2024)
    # smooth weights only: a C^1 bump has no third derivative, which stalls the difference oracle
    K = sum_field([radial_field(0.4), radial_field(-1.3, 2.0), constant_field(0.2)])
    funcs = {"D": dirichlet, "V": volume, "Q": lambda u: weighted_volume(u, K)}
    worst = dict.fromkeys(funcs, 0.0)
    for _ in range(10):
        u = _smooth_map(mesh, rng)
        grads = {k: gradient(u, K, k) for k in funcs}
        for _ in range(20):
            phi = rng.normal(size=u.values.shape)
            for k, f in funcs.items():
                fd = _central(f, u, phi, 1e-4)
                worst[k] = max(worst[k], abs(pair(grads[k], phi) - fd) / abs(fd))
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-6 and elapsed < 60
    detail = ", ".join(f"{k}' {v:.1e}" for k, v in worst.items())
    assert emit(5, ok, f"max rel err over 10 maps x 20 directions: {detail} (tol 1e-6); {elapsed:.1f} s")


def test_06_isoperimetric(emit):
    mesh = build_icosphere(5)
    rng = np.random.default_rng(6)
    strict = True
    worst = 0.0
    for _ in range(100):
        u = _smooth_map(mesh, rng)
        D, A, V = dirichlet(u), area(u), volume(u)
        strict &= A <= D
        worst = max(worst, ISOPERIMETRIC_S * abs(V) ** (2 / 3) / A)
    ok = strict and worst <= 1.005
    assert emit(6, ok, f"A <= D on all 100 maps: {strict}; max S|V|^(2/3)/A = {worst:.5f} (<= 1.005)")


def test_07_exact_critical_sphere(emit):
    t = 2.0
    mesh = build_icosphere(4)
    u = perturbed(sphere_map(mesh, np.zeros(3), t), 1e-2, 7)
    rep = refine_critical(u, constant_field(0.0), t, DescentOptions(max_iters=500))
    limit = 1e-3 * grad_l2(rep.u)
    oracle = 2.0 / sphere_radius(t)
    ok = rep.residual <= limit and abs(rep.lam - oracle) <= 1e-2 and rep.lam * t > 0
    assert emit(
        7,
        ok,
        f"residual {rep.residual:.2e} <= {limit:.2e}; lambda {rep.lam:.5f} vs 2/s_t {oracle:.5f}; "
        f"lambda*t {rep.lam * t:.3f} ({rep.status}, {rep.iterations} it)",
    )


@pytest.mark.slow
def test_08_nonexistence(emit):
    start = time.perf_counter()
    t = 1.0
    mesh = build_icosphere(4)
    u0 = perturbed(sphere_map(mesh, np.zeros(3), t), 1e-3, 0)
    rep = constrained_descent(u0, POSITIVE, t, DescentOptions(max_iters=5000))
    elapsed = time.perf_counter() - start
    m0, m1 = rep.trajectory[0]["mean_norm"], rep.trajectory[-1]["mean_norm"]
    S = sphere_level(t)
    gap = abs(rep.report.E - S)
    ok = rep.status in ("escaped", "iter_limit") and gap <= 5e-2 and m1 >= 5 * m0 and elapsed < 600
    diag = diagnose_escape(rep.trajectory, t)
    assert emit(
        8,
        ok,
        f"status {rep.status} after {rep.iterations} it ({diag}); |E - S| = {gap:.4f} (tol 5e-2); "
        f"|mean| {m0:.2e} -> {m1:.2f}; {elapsed:.0f} s",
    )


@pytest.mark.slow
def test_09_minimax_bracket(emit):
    start = time.perf_counter()
    t = 1.0
    grid = build_ball_grid(20.0, 5)
    fam = init_family(grid, build_icosphere(3), t)
    fam, history = deform_family(fam, POSITIVE, DescentOptions(), sweeps=200)
    c0, c = estimate_levels(fam, POSITIVE)
    elapsed = time.perf_counter() - start
    b = level_brackets(0.4, t)
    lo, hi = b.S0 + 1e-2, b.two_bubble - 1e-2
    ok = lo < c < hi and c0 < c and elapsed < 1800
    assert emit(9, ok, f"c_running {c:.5f} in ({lo:.4f}, {hi:.4f}); c0_est {c0:.5f} < c_running; {elapsed:.0f} s")


def test_10_degree_suite(emit):
    v, f = icosphere_outward(3)
    p = np.zeros(3)
    ident = degree(v, f, p).degree
    const = degree(np.tile([2.0, 0.0, 0.0], (len(v), 1)), f, p).degree
    anti = degree(-v, f, p).degree
    fam = init_family(build_ball_grid(20.0, 5), build_icosphere(3), 1.0)
    fam_deg = family_degree(fam, (0.1, 0.0, 0.0)).degree
    homotopy = homotopy_check(fam, (0.1, 0.0, 0.0))
    ok = (ident, const, anti, fam_deg) == (1, 0, -1, 1) and homotopy and check_conditions(POSITIVE).positive_pass
    assert emit(
        10, ok, f"identity {ident}, constant {const}, antipodal {anti}; family {fam_deg}, homotopy admissible {homotopy}"
    )


def test_11_barycenter_asymptotics(emit):
    mesh = build_icosphere(5)
    t, k0 = 1.0, 0.4
    far = np.linalg.norm(barycenter(sphere_map(mesh, (100.0, 0.0, 0.0), t), t) - np.array([1.0, 0.0, 0.0]))
    s = sphere_radius(t)
    slack = []
    for r in (2.0, 5.0, 10.0, 50.0):
        direction = Rotation.from_rotvec([0.3, -0.5, 0.2]).apply([1.0, 0.0, 0.0])
        gap = energy(sphere_map(mesh, r * direction, t), POSITIVE) - sphere_level(t)
        slack.append(k0 * 4 * math.pi * s * s / (3 * r) + 1e-2 - gap)
    ok = far <= 0.05 and min(slack) >= 0
    assert emit(11, ok, f"|B_t - p/|p|| at |p|=100: {far:.2e}; min slack in decay bound {min(slack):.2e}")


def test_12_condition_arithmetic(emit):
    thr = 2 * (2 ** (1 / 3) - 1)
    kb = restriction_boundary()
    eps = 1e-9
    below, above = conditions_from_k0(kb - eps), conditions_from_k0(kb + eps)
    ck_below, ck_above = conditions_from_k0(thr - eps), conditions_from_k0(thr + eps)
    ok = (
        abs(CONDKZERO_THRESHOLD - 0.5198420997897464) <= 1e-12
        and abs(CONDKZERO_THRESHOLD - thr) <= 1e-12
        and abs(2 ** (2 / 3) * (2 + kb) - (2 - kb) ** 2) <= 1e-12
        and abs(restriction_margin(kb)) <= 1e-12
        and below.restriction_pass
        and not above.restriction_pass
        and ck_below.condkzero_pass
        and not ck_above.condkzero_pass
    )
    assert emit(12, ok, f"2(2^(1/3)-1) = {CONDKZERO_THRESHOLD!r}; restriction boundary k0 = {kb:.15f}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
