import numpy as np
import pytest

from conftest import arm2r_scenario, planar3_scenario_doc
from resforge import forcespace as fs
from resforge import transcription as tr
from resforge.model import (
    State,
    bias_forces,
    euler_step,
    forward_kinematics,
    load_model_file,
    mass_matrix,
)


@pytest.fixture
def planar3_problem():
    return tr.build_problem(tr.scenario_from_dict(planar3_scenario_doc("A")))


def random_xi(problem, rng):
    return rng.uniform(problem.lb, problem.ub)


# --- layout and problem construction ----------------------------------------

def test_decision_length(planar3_problem):
    assert planar3_problem.layout.size == 11 * 6 + 10 * 3 == 96
    lay = tr.Layout(3, 2)
    assert lay.size == 3 * 6 + 2 * 3


def test_layout_round_trip():
    lay = tr.Layout(2, 3)
    rng = np.random.default_rng(0)
    Q, V, T = rng.normal(size=(4, 2)), rng.normal(size=(4, 2)), rng.normal(size=(3, 2))
    xi = lay.pack(Q, V, T)
    for a, b in zip(lay.unpack(xi), (Q, V, T)):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(xi[lay.q_index], Q)
    np.testing.assert_array_equal(xi[lay.tau_index], T)
    with pytest.raises(IndexError):
        lay.tau(3)


def test_constraint_count(planar3_problem):
    n, N, m, M = 3, 10, 2, 11
    assert planar3_problem.n_constraints == 2 * n * N + 2 * m + M + 2 * n
    assert planar3_problem.h == pytest.approx(0.1)


@pytest.mark.parametrize("change, pattern", [
    ({"objective": "F"}, "cone"),
    ({"objective": "G"}, "objective"),
    ({"segments": 1}, "segments"),
    ({"p_I": [-0.1, -2.0]}, "surface"),
    ({"p_F": [-0.1, -2.8]}, "differ"),
    ({"solver": {"warm_start": "Z"}}, "warm_start"),
])
def test_scenario_validation(change, pattern):
    with pytest.raises(tr.ScenarioError, match=pattern):
        tr.build_problem(tr.scenario_from_dict(planar3_scenario_doc(**change)))


def test_scenario_parsing(tmp_path):
    doc = planar3_scenario_doc("F", cone={"axis": [0, 1], "half_aperture_deg": 30}, payload_mass=0.5,
                               residual_mode="exact_translate", solver={"max_iterations": 7})
    sc = tr.scenario_from_dict(doc)
    assert sc.cone_half_aperture == pytest.approx(np.pi / 6)
    assert sc.residual_mode is fs.ResidualMode.EXACT_TRANSLATE
    assert sc.max_iterations == 7
    assert sc.load_model().payload == 0.5
    cones = sc.cones(2)
    assert len(cones) == 11 and np.allclose(cones[0].axis, [0, 1])
    with pytest.raises(tr.ScenarioError, match="missing"):
        tr.scenario_from_dict({"model": "planar3"})
    bad = tmp_path / "bad.json"
    bad.write_text("{\n oops")
    with pytest.raises(tr.ScenarioError, match="line 2"):
        tr.load_scenario(bad)


def test_shipped_scenarios():
    names = tr.builtin_scenarios()
    assert [f"scenario_planar3_{c}" for c in tr.OBJECTIVES] == names
    for name in names:
        problem = tr.build_problem(tr.load_scenario(name))
        assert problem.layout.size == 96
    f = tr.load_scenario("scenario_planar3_F")
    assert f.residual_mode is fs.ResidualMode.EXACT_TRANSLATE
    with pytest.raises(tr.ScenarioError, match="cannot read"):
        tr.load_scenario("scenario_missing")


def test_per_mesh_point_cone_axes():
    axes = [[np.cos(a), np.sin(a)] for a in np.linspace(0.5, 1.5, 11)]
    sc = tr.scenario_from_dict(planar3_scenario_doc("F", cone={"axis": axes, "half_aperture_deg": 20}))
    cones = sc.cones(2)
    np.testing.assert_allclose(cones[-1].axis, axes[-1])
    sc = tr.scenario_from_dict(planar3_scenario_doc("F", cone={"axis": axes[:3], "half_aperture_deg": 20}))
    with pytest.raises(tr.ScenarioError):
        sc.cones(2)


# --- residuals ---------------------------------------------------------------

def simulated_xi(problem, q0, rng):
    model, lay = problem.model, problem.layout
    x = State(q0, np.zeros(model.n))
    Q, V, T = [x.q], [x.v], []
    for _ in range(lay.N):
        u = rng.uniform(-0.3, 0.3, model.n) * model.tau_lim + bias_forces(model, x.q, np.zeros(model.n))
        x = euler_step(model, x, u, problem.h)
        Q.append(x.q)
        V.append(x.v)
        T.append(u)
    return lay.pack(np.array(Q), np.array(V), np.array(T))


def defect_rows(problem):
    return slice(0, 2 * problem.model.n * problem.layout.N)


def test_simulated_trajectory_has_zero_defects(planar3_problem):
    xi = simulated_xi(planar3_problem, np.array([0.1, -0.2, 0.3]), np.random.default_rng(1))
    r = tr.constraint_residuals(planar3_problem, xi)
    assert np.abs(r[defect_rows(planar3_problem)]).max() < 1e-12


def test_torque_perturbation_hits_first_block(planar3_problem):
    p = planar3_problem
    xi = simulated_xi(p, np.array([0.1, -0.2, 0.3]), np.random.default_rng(2))
    delta = np.array([1e-6, -2e-6, 0.5e-6])
    xj = xi.copy()
    xj[p.layout.tau(0)] += delta
    dr = tr.constraint_residuals(p, xj) - tr.constraint_residuals(p, xi)
    n = 3
    assert np.abs(dr[2 * n:]).max() == 0.0
    np.testing.assert_array_equal(dr[:n], 0.0)
    q0 = xi[p.layout.q(0)]
    expected = -p.h * np.linalg.solve(mass_matrix(p.model, q0), delta)
    np.testing.assert_allclose(dr[n:2 * n], expected, rtol=1e-5, atol=1e-14)


def test_static_trajectory(planar3_problem):
    p = planar3_problem
    q = tr.inverse_kinematics(p.model, p.scenario.p_I, np.array([0.1, 0.1, 0.1]))
    g = bias_forces(p.model, q, np.zeros(3))
    lay = p.layout
    xi = lay.pack(np.tile(q, (lay.M, 1)), np.zeros((lay.M, 3)), np.tile(g, (lay.N, 1)))
    r = tr.constraint_residuals(p, xi)
    assert np.abs(r[defect_rows(p)]).max() < 1e-12
    fk_end = r[2 * 3 * 10 + 2: 2 * 3 * 10 + 4]
    np.testing.assert_allclose(fk_end, p.scenario.p_I - p.scenario.p_F, atol=1e-9)


def test_residual_length_check(planar3_problem):
    with pytest.raises(ValueError):
        tr.constraint_residuals(planar3_problem, np.zeros(5))


def fd_jacobian(fun, x, step=1e-6):
    base = fun(x)
    J = np.zeros((len(base), len(x)))
    for i in range(len(x)):
        e = np.zeros(len(x))
        e[i] = step
        J[:, i] = (fun(x + e) - fun(x - e)) / (2 * step)
    return J


def test_constraint_jacobian_matches_fd(planar3_problem):
    p = planar3_problem
    rng = np.random.default_rng(3)
    for _ in range(5):
        xi = random_xi(p, rng)
        J = tr.constraint_jacobian(p, xi)
        np.testing.assert_allclose(J, fd_jacobian(lambda x: tr.constraint_residuals(p, x), xi), atol=1e-4)


def test_solver_constraint_jacobians_match_fd(planar3_problem):
    p = planar3_problem
    cons = tr._SmoothConstraints(p)
    xi = random_xi(p, np.random.default_rng(4))
    np.testing.assert_allclose(cons.eq_jac(xi), fd_jacobian(cons.eq, xi), atol=1e-4)
    np.testing.assert_allclose(cons.ineq_jac(xi), fd_jacobian(cons.ineq, xi), atol=1e-6)


def test_smooth_constraints_agree_on_feasible_points(planar3_problem):
    """Zero unsigned distance with in-rectangle inequalities is what the solver enforces."""
    p = planar3_problem
    cons = tr._SmoothConstraints(p)
    xi = tr.initial_guess(p.scenario, p.model)
    r = tr.constraint_residuals(p, xi)
    surface = r[2 * 3 * 10 + 4: 2 * 3 * 10 + 4 + 11]
    e = cons.eq(xi)
    # plane rows cover mesh points 2..N-1; see the redundancy note in _SmoothConstraints
    plane = e[2 * 3 * 10 + 4: 2 * 3 * 10 + 4 + 8]
    assert len(e) == p.n_constraints - 3
    inside = (cons.ineq(xi) >= 0).reshape(11, -1).all(axis=1)[2:-1]
    np.testing.assert_allclose(np.abs(plane[inside]), surface[2:-1][inside], atol=1e-12)


def test_dropped_plane_row_is_implied(planar3_problem):
    """With v_0 = 0 the Euler update gives q_1 = q_0, so point 1 sits on the surface whenever p_I does."""
    p = planar3_problem
    xi = simulated_xi(p, tr.inverse_kinematics(p.model, p.scenario.p_I, np.array([0.1, 0.1, 0.1])),
                      np.random.default_rng(11))
    r = tr.constraint_residuals(p, xi)
    assert r[2 * 3 * 10 + 4 + 1] == pytest.approx(r[2 * 3 * 10 + 4], abs=1e-14)
    assert r[2 * 3 * 10 + 4 + 1] < 1e-9


def test_dynamics_derivatives_match_fd(spatial7):
    rng = np.random.default_rng(5)
    q, v = rng.uniform(-1, 1, 7), rng.normal(size=7)
    tau = rng.uniform(-20, 20, 7)
    from resforge.model import forward_dynamics
    _, aq, av, at = tr.dynamics_derivatives(spatial7, q, v, tau)
    np.testing.assert_allclose(aq, fd_jacobian(lambda x: forward_dynamics(spatial7, x, v, tau), q), atol=1e-3)
    np.testing.assert_allclose(av, fd_jacobian(lambda x: forward_dynamics(spatial7, q, x, tau), v), atol=1e-5)
    np.testing.assert_allclose(at, fd_jacobian(lambda x: forward_dynamics(spatial7, q, v, x), tau), atol=1e-6)


# --- objectives --------------------------------------------------------------

def problem_for(objective, **kw):
    return tr.build_problem(tr.scenario_from_dict(planar3_scenario_doc(objective, **kw)))


def test_objective_extremes(planar3_problem):
    lay = planar3_problem.layout
    xi = np.zeros(lay.size)
    assert tr.objective_value(planar3_problem, xi) == 0.0
    pb = problem_for("B")
    xi[lay.tau_index] = 10.0
    assert tr.objective_value(pb, xi) == 0.0
    assert tr.reported_objective(pb, -5.0) == 5.0
    assert tr.reported_objective(planar3_problem, 5.0) == 5.0


def test_ge_term_on_2r(arm2r):
    sc = arm2r_scenario(arm2r, "E")
    p = tr.build_problem(sc, arm2r)
    lay = p.layout
    q = np.array([0.0, np.pi / 2])
    xi = lay.pack(np.tile(q, (lay.M, 1)), np.zeros((lay.M, 2)), np.tile([0.5, 0.0], (lay.N, 1)))
    # every one of the M terms (the last reuses tau_N) equals the forcespace oracle
    assert tr.objective_value(p, xi) == pytest.approx(-lay.M * 0.5 / np.sqrt(2), rel=1e-9)


def test_infeasible_nominal_gives_penalty(arm2r):
    p = tr.build_problem(arm2r_scenario(arm2r, "E"), arm2r)
    lay = p.layout
    xi = np.zeros(lay.size)
    xi[lay.q_index] = [0.0, np.pi / 2]
    xi[lay.tau(0)] = [1.5, 0.0]
    assert tr.objective_value(p, xi) > 0.99 * tr.PENALTY


def test_objective_c_matches_scalar_form(planar3):
    p = problem_for("C")
    xi = random_xi(p, np.random.default_rng(6))
    Q, _, _ = p.layout.unpack(xi)
    assert tr.objective_value(p, xi) == pytest.approx(-sum(fs.scaled_manipulability(planar3, q) for q in Q))


def test_objective_d_e_f_sums(planar3):
    rng = np.random.default_rng(7)
    pf = problem_for("F", cone={"axis": [0, 1], "half_aperture_deg": 30})
    xi = random_xi(pf, rng)
    xi[pf.layout.tau_index] *= 0.5
    Q, _, T = pf.layout.unpack(xi)
    Tm = np.vstack([T, T[-1:]])
    d = sum(fs.metric_ball(planar3, q) for q in Q)
    e = sum(fs.metric_ball(planar3, q, t) for q, t in zip(Q, Tm))
    f = sum(fs.metric_cone_volume(planar3, q, t, c) for q, t, c in zip(Q, Tm, pf.cones))
    assert tr.objective_value(problem_for("D"), xi) == pytest.approx(-d)
    assert tr.objective_value(problem_for("E"), xi) == pytest.approx(-e)
    assert tr.objective_value(pf, xi) == pytest.approx(-f)


def test_gradient_of_ga_matches_analytic(planar3_problem):
    p = planar3_problem
    rng = np.random.default_rng(8)
    for _ in range(20):
        xi = random_xi(p, rng)
        g = tr.objective_gradient(p, xi)
        expected = np.zeros_like(g)
        expected[p.layout.tau_index] = 2 * xi[p.layout.tau_index]
        np.testing.assert_allclose(g, expected, rtol=1e-4, atol=1e-6)


def test_gradient_respects_bounds(planar3_problem):
    p = planar3_problem
    xi = np.clip(random_xi(p, np.random.default_rng(9)), p.lb, p.ub)
    xi[p.layout.tau(0)] = p.ub[p.layout.tau(0)]
    g = tr.objective_gradient(p, xi)
    np.testing.assert_allclose(g[p.layout.tau(0)], 20.0, rtol=1e-4)


def test_threads_give_identical_values(monkeypatch):
    p = problem_for("E")
    xi = random_xi(p, np.random.default_rng(10))
    xi[p.layout.tau_index] *= 0.3
    monkeypatch.setenv("RESFORGE_THREADS", "1")
    v1, g1 = tr.objective_value(p, xi), tr.objective_gradient(p, xi)
    monkeypatch.setenv("RESFORGE_THREADS", "3")
    v3, g3 = tr.objective_value(p, xi), tr.objective_gradient(p, xi)
    assert v1 == v3
    np.testing.assert_array_equal(g1, g3)
    monkeypatch.setenv("RESFORGE_THREADS", "0")
    assert tr.thread_count() >= 1
    monkeypatch.setenv("RESFORGE_THREADS", "x")
    with pytest.raises(ValueError):
        tr.thread_count()


# --- initial guess -----------------------------------------------------------

def test_initial_guess_reaches_endpoints(planar3_problem):
    p = planar3_problem
    xi = tr.initial_guess(p.scenario, p.model)
    r = tr.constraint_residuals(p, xi)
    fk = r[60:64]
    assert np.abs(fk).max() < 1e-6
    assert np.all(xi >= p.lb) and np.all(xi <= p.ub)
    # Euler defects of a finite-difference path are small but not zero
    assert 0 < np.abs(r[:60]).max()


def test_initial_guess_degenerate_task():
    sc = tr.scenario_from_dict(planar3_scenario_doc("A", p_F=[-0.1, -2.8]))
    model = sc.load_model()
    xi = tr.initial_guess(sc, model)
    Q, V, T = tr.Layout(3, 10).unpack(xi)
    np.testing.assert_allclose(Q, np.tile(Q[0], (11, 1)))
    np.testing.assert_allclose(V, 0.0, atol=1e-12)
    np.testing.assert_allclose(T, np.tile(bias_forces(model, Q[0], np.zeros(3)), (10, 1)), atol=1e-9)


def test_ik_failure_advises_seed():
    sc = tr.scenario_from_dict(planar3_scenario_doc("A"))
    sc.p_I = np.array([5.0, 0.0])
    with pytest.raises(tr.IKFailure, match="manual seed"):
        tr.initial_guess(sc)


def test_inverse_kinematics(planar3):
    target = np.array([0.5, -2.5])
    q = tr.inverse_kinematics(planar3, target, np.array([0.1, 0.2, -0.1]))
    np.testing.assert_allclose(forward_kinematics(planar3, q), target, atol=1e-8)


# --- solve ---------------------------------------------------------------------

def test_zero_iterations_returns_start(planar3_problem):
    p = planar3_problem
    xi0 = tr.initial_guess(p.scenario, p.model)
    sol = tr.solve(p, xi0, max_iterations=0)
    np.testing.assert_array_equal(sol.xi, xi0)
    assert not sol.converged
    assert len(sol.objective_trace) == 1


def test_best_feasible_trace():
    sol = tr.Solution(xi=np.zeros(1), objective_trace=[5, 3, 4, 1, 2], feasibility_trace=[1, 0, 0, 1, 0])
    assert sol.best_feasible_trace(0.5, maximize=False) == [3, 3, 3, 2]
    assert sol.best_feasible_trace(0.5, maximize=True) == [3, 4, 4, 4]


def test_warm_start_selection():
    doc = planar3_scenario_doc
    assert tr.warm_start_objective(tr.scenario_from_dict(doc("E"))) == "A"
    assert tr.warm_start_objective(tr.scenario_from_dict(doc("D"))) is None
    assert tr.warm_start_objective(tr.scenario_from_dict(doc("E", solver={"warm_start": "none"}))) is None
    assert tr.warm_start_objective(tr.scenario_from_dict(doc("D", solver={"warm_start": "C"}))) == "C"


def test_short_solve_is_deterministic(planar3_problem):
    p = planar3_problem
    a = tr.solve(p, max_iterations=15)
    b = tr.solve(p, max_iterations=15)
    np.testing.assert_array_equal(a.xi, b.xi)
    assert a.objective_trace == b.objective_trace
    assert a.n_feval == b.n_feval and a.n_geval >= 1


def test_solution_dict(planar3_problem):
    sol = tr.solve(planar3_problem, max_iterations=0)
    doc = tr.solution_to_dict(planar3_problem, sol)
    for key in ("mesh_times", "q", "v", "tau", "objective_trace", "feasibility_trace", "converged",
                "wall_time_s", "n_feval", "n_geval"):
        assert key in doc
    assert len(doc["q"]) == 11 and len(doc["tau"]) == 10
    assert doc["mesh_times"][-1] == 1.0


def resimulate(problem, xi):
    Q, V, T = problem.layout.unpack(xi)
    x = State(Q[0], V[0])
    for u in T:
        x = euler_step(problem.model, x, u, problem.h)
    return x, Q[-1], V[-1]


@pytest.mark.slow
def test_solve_objective_a(planar3_problem):
    p = planar3_problem
    sol = tr.solve(p)
    assert sol.converged
    assert sol.feasibility_trace[-1] <= 1e-3
    r = tr.constraint_residuals(p, sol.xi)
    assert np.abs(r[60:64]).max() <= 1e-3
    # bounds hold exactly
    assert np.all(sol.xi >= p.lb) and np.all(sol.xi <= p.ub)
    x, qM, vM = resimulate(p, sol.xi)
    assert np.abs(x.q - qM).max() <= 1e-2 and np.abs(x.v - vM).max() <= 1e-2
    best = sol.best_feasible_trace(1e-3, maximize=False)
    assert all(b <= a for a, b in zip(best, best[1:]))
    assert sol.n_feval > 0 and sol.n_geval > 0 and sol.wall_time > 0
