"""Acceptance criteria, one test each. Every test records a PASS/FAIL line that
is printed in the terminal summary; a FAIL also fails the test."""

import itertools

import numpy as np
import pytest
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, Delaunay, HalfspaceIntersection

from conftest import ACCEPTANCE
from resforge import evaluation as ev
from resforge import forcespace as fs
from resforge import geometry as geo
from resforge import transcription as tr
from resforge.cli import bench_rows
from resforge.model import (
    State,
    bias_forces,
    euler_step,
    forward_kinematics,
    inverse_dynamics,
    jacobian,
    load_model_file,
    mass_matrix,
)

D = np.array([0.0, 1.0])


def verdict(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


# --- 1 -----------------------------------------------------------------------

def test_criterion_1_force_profile():
    peak = ev.force_profile(0.5, 350)
    impulse = ev.analytic_impulse(350)
    rel = abs(impulse - 87.73) / 87.73
    verdict(1, peak == 350.0 and rel <= 5e-4,
            f"f(0.5) = {peak!r} N, impulse {impulse:.4f} N s ({100 * rel:.3f}% from 87.73)")


# --- 2 -----------------------------------------------------------------------

def directions(m, count):
    if m == 2:
        t = np.linspace(0, 2 * np.pi, count, endpoint=False)
        return np.column_stack([np.cos(t), np.sin(t)])
    # Fibonacci sphere
    i = np.arange(count) + 0.5
    z = 1 - 2 * i / count
    phi = np.pi * (1 + 5 ** 0.5) * i
    r = np.sqrt(1 - z * z)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def sampled_radius(G, box, U):
    """Shortest ray from the origin to the boundary over the directions ``U``.

    The facets come straight from Qhull on the box corner images, so the
    oracle shares nothing with the library's own H-representation.
    """
    eq = ConvexHull(corner_images(G, box)).equations
    a, b = eq[:, :-1], -eq[:, -1]
    ad = U @ a.T
    with np.errstate(divide="ignore"):
        reach = np.where(ad > 0, b / ad, np.inf)
    return reach.min(axis=1).min()


def corner_images(G, box):
    corners = np.array(list(itertools.product(*zip(box.lb, box.ub))))
    return corners @ G.T


def random_case(model, rng, mode):
    q = rng.uniform(model.q_lb, model.q_ub)
    tau = rng.uniform(-0.8, 0.8, model.n) * model.tau_lim
    ctx = fs.force_context(model, q)
    return q, tau, ctx, fs.residual_box(model.tau_lim, tau, mode)


def clipped_reach(pts, cone):
    """Farthest point of hull(pts) inside the polyhedral cone, from Qhull alone."""
    C = geo.make_cone(cone)
    eqs = np.vstack([ConvexHull(pts).equations, np.column_stack([C.normals, -C.offsets])])
    # Chebyshev centre as the interior point
    norms = np.linalg.norm(eqs[:, :-1], axis=1)
    m = pts.shape[1]
    lp = linprog(np.r_[np.zeros(m), -1.0], A_ub=np.column_stack([eqs[:, :-1], norms]), b_ub=-eqs[:, -1],
                 bounds=[(None, None)] * m + [(0, None)])
    corners = HalfspaceIntersection(eqs, lp.x[:m]).intersections
    return 1.000001 * np.linalg.norm(corners, axis=1).max()


def mc_cone_volume(G, box, cone, rng, samples=1_000_000):
    """Rejection sampling inside the circular sector that covers the clipped set.

    Points are drawn uniformly from the ball sector of radius R around the cone
    axis; membership is a Delaunay point location on the corner images plus the
    cone's own half-space test.
    """
    pts_hull = corner_images(G, box)
    hull = Delaunay(pts_hull)
    m = len(cone.axis)
    R = clipped_reach(pts_hull, cone)
    theta = cone.half_aperture
    radius = R * rng.uniform(size=samples) ** (1 / m)
    if m == 2:
        ang = np.arctan2(cone.axis[1], cone.axis[0]) + rng.uniform(-theta, theta, samples)
        x = radius[:, None] * np.column_stack([np.cos(ang), np.sin(ang)])
        sector = theta * R * R
    else:
        # uniform on the spherical cap: cos of the polar angle is uniform
        c = rng.uniform(np.cos(theta), 1.0, samples)
        phi = rng.uniform(0, 2 * np.pi, samples)
        s = np.sqrt(1 - c * c)
        e1 = np.cross(cone.axis, [1.0, 0, 0] if abs(cone.axis[0]) < 0.9 else [0, 1.0, 0])
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(cone.axis, e1)
        dirs = c[:, None] * cone.axis + s[:, None] * (np.outer(np.cos(phi), e1) + np.outer(np.sin(phi), e2))
        x = radius[:, None] * dirs
        sector = 2 * np.pi / 3 * (1 - np.cos(theta)) * R ** 3
    inside = hull.find_simplex(x) >= 0
    in_cone = geo.make_cone(cone).contains(x, tol=0)
    return np.mean(inside & in_cone) * sector


def test_criterion_2_geometry_oracles():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for name, U in (("planar3", directions(2, 10_000)), ("spatial7", directions(3, 10_000))):
        model = load_model_file(name)
        for i in range(100):
            mode = fs.ResidualMode.EXACT_TRANSLATE if i % 2 else fs.ResidualMode.SYMMETRIC_SHRINK
            q, tau, ctx, box = random_case(model, rng, mode)
            r = fs.metric_ball(model, q, tau, mode)
            oracle = sampled_radius(ctx.Jpinv_T, box, U)
            worst = max(worst, abs(r - oracle) / oracle)
    vol_err = []
    for name, count, aperture in (("planar3", 4, 30), ("spatial7", 2, 50)):
        model = load_model_file(name)
        for _ in range(count):
            q, tau, ctx, box = random_case(model, rng, fs.ResidualMode.SYMMETRIC_SHRINK)
            axis = rng.normal(size=model.m)
            cone = geo.Cone(np.zeros(model.m), axis / np.linalg.norm(axis), np.deg2rad(aperture))
            vol = fs.metric_cone_volume(model, q, tau, cone)
            mc = mc_cone_volume(ctx.Jpinv_T, box, cone, rng)
            vol_err.append(abs(vol - mc) / mc)
    verdict(2, worst <= 0.01 and max(vol_err) <= 0.01,
            f"radius vs 1e4-direction oracle: worst {100 * worst:.4f}% over 200 cases; "
            f"cone volume vs 1e6-sample MC: worst {100 * max(vol_err):.3f}% over {len(vol_err)} cases")


# --- 3 -----------------------------------------------------------------------

def test_criterion_3_residual_subset():
    rng = np.random.default_rng(3)
    bad_vertex = bad_radius = 0
    for i in range(1000):
        model = load_model_file("planar3" if i % 2 else "spatial7")
        q = rng.uniform(model.q_lb, model.q_ub)
        tau = rng.uniform(-1, 1, model.n) * model.tau_lim
        P = fs.force_polytope(model, q)
        R = fs.residual_force_polytope(model, q, tau)
        if not P.contains(R.vertices, tol=1e-8).all():
            bad_vertex += 1
        if fs.metric_ball(model, q, tau) > fs.metric_ball(model, q) + 1e-9:
            bad_radius += 1
    verdict(3, bad_vertex == 0 and bad_radius == 0,
            f"1000 states: {bad_vertex} residual vertices outside, {bad_radius} radii above the force radius")


# --- 4 -----------------------------------------------------------------------

def test_criterion_4_dynamics():
    rng = np.random.default_rng(4)
    jac_err = mass_err = sym_err = 0.0
    pd = True
    for name in ("planar3", "spatial7"):
        model = load_model_file(name)
        for _ in range(100):
            q = rng.uniform(model.q_lb, model.q_ub)
            J = jacobian(model, q)
            for i in range(model.n):
                e = np.zeros(model.n)
                e[i] = 1e-6
                col = (forward_kinematics(model, q + e) - forward_kinematics(model, q - e)) / 2e-6
                jac_err = max(jac_err, np.abs(J[:, i] - col).max())
            M = mass_matrix(model, q)
            h = bias_forces(model, q, np.zeros(model.n))
            for i in range(model.n):
                col = inverse_dynamics(model, q, np.zeros(model.n), np.eye(model.n)[i]) - h
                mass_err = max(mass_err, np.abs(M[:, i] - col).max())
            sym_err = max(sym_err, np.abs(M - M.T).max())
            pd = pd and np.linalg.eigvalsh(0.5 * (M + M.T)).min() > 0
    verdict(4, jac_err <= 1e-5 and mass_err <= 1e-8 and sym_err <= 1e-10 and pd,
            f"Jacobian vs FD {jac_err:.2e}, CRBA vs inverse dynamics {mass_err:.2e}, "
            f"asymmetry {sym_err:.1e}, positive definite: {pd} (100 states per model)")


# --- 5, 6, 7: shared solves ------------------------------------------------------

@pytest.fixture(scope="module")
def solved():
    out = {}
    for obj in tr.OBJECTIVES:
        problem, sol = tr.solve_scenario(tr.load_scenario(f"scenario_planar3_{obj}"))
        Q, V, T = problem.layout.unpack(sol.xi)
        times = np.linspace(0, problem.scenario.duration, problem.layout.M)
        out[obj] = (problem, sol, ev.Trajectory(times, Q, V, T))
    return out


@pytest.mark.slow
def test_criterion_5_e_has_largest_radius(solved):
    model = solved["A"][0].model
    comp = ev.compare_report(model, [(o, solved[o][2]) for o in "ABCDE"])
    feasible = {o: solved[o][1].feasibility_trace[-1] <= 1e-3 for o in "ABCDE"}
    means = {o: comp.mean(o) for o in "ABCDE"}
    ok = all(feasible.values()) and all(means["E"] > means[o] for o in "ABCD")
    verdict(5, ok, "mean radius " + ", ".join(f"{o} {means[o]:.4f}" for o in comp.ranking)
            + f"; all feasible: {all(feasible.values())}")


@pytest.mark.slow
def test_criterion_6_directional_impulse(solved):
    model = solved["E"][0].model
    E, F = solved["E"][2], solved["F"][2]
    f_star = ev.critical_peak(model, E, D) * (1 - 1e-9)
    along_E = ev.impulse_torque_test(model, E, D, f_star)
    along_F = ev.impulse_torque_test(model, F, D, f_star, fs.ResidualMode.EXACT_TRANSLATE)
    f_rev = ev.critical_peak(model, E, -D) * (1 - 1e-9)
    rev_E = ev.impulse_torque_test(model, E, -D, f_rev)
    rev_F = ev.impulse_torque_test(model, F, -D, f_rev, fs.ResidualMode.EXACT_TRANSLATE)
    lower = along_F.peak_normalized <= along_E.peak_normalized
    contrast = rev_F.any_saturated and not rev_E.any_saturated
    verdict(6, lower and contrast,
            f"along d at f* = {f_star:.3f} N: peak |tau|/tau_lim E {along_E.peak_normalized:.4f}, "
            f"F {along_F.peak_normalized:.4f}; reversed at {f_rev:.3f} N: "
            f"F saturates {rev_F.any_saturated}, E saturates {rev_E.any_saturated}; "
            f"F nominal peak {np.abs(along_F.nominal).max():.4f}")


@pytest.mark.slow
def test_criterion_7_feasibility_contract(solved):
    worst_eq = worst_sim = 0.0
    checked = []
    for obj, (problem, sol, _) in solved.items():
        if not sol.converged:
            continue
        checked.append(obj)
        worst_eq = max(worst_eq, np.abs(tr.constraint_residuals(problem, sol.xi)).max())
        Q, V, T = problem.layout.unpack(sol.xi)
        x = State(Q[0], V[0])
        for u in T:
            x = euler_step(problem.model, x, u, problem.h)
        worst_sim = max(worst_sim, np.abs(x.q - Q[-1]).max(), np.abs(x.v - V[-1]).max())
    ok = bool(checked) and worst_eq <= 1e-3 and worst_sim <= 1e-2
    verdict(7, ok, f"converged {''.join(checked)}: max equality residual {worst_eq:.2e}, "
                   f"re-simulation error {worst_sim:.2e}")


# --- 8 -----------------------------------------------------------------------

def test_criterion_8_benchmark_shape():
    rows = {name: mean for name, mean, _, _ in bench_rows(load_model_file("planar3"), 10, seed=0)}
    slow = min(rows[f"g_{c}"] for c in "DEF")
    fast = max(rows[f"g_{c}"] for c in "ABC")
    ratio = rows["residual_force_polytope"] / rows["force_polytope"]
    verdict(8, slow >= 100 * fast and ratio <= 2.0,
            f"slowest of g_A-g_C {fast:.1f} us, fastest of g_D-g_F {slow:.1f} us ({slow / fast:.0f}x); "
            f"residual/force polytope time {ratio:.2f}")
