import numpy as np
import pytest

from thermobingham import assembly as asm
from thermobingham.linalg import SingularSystem
from thermobingham.mesh import build_cross_grid
from thermobingham.ssn import SsnState
from thermobingham.stepper import (
    FieldHistory, Model, TimeGrid, energy_init, energy_step, flow_step, init_flow, lag,
    solve_theta0, time_loop,
)

import oracles

EXP1 = dict(mu0=1.0, delta_mu=0.5, g0=10.0, delta_g=8.0, kappa=10.0, Cp=1.0, alpha=100.0, beta=15.0)


def params(**kw):
    return asm.PhysicalParams(**{**EXP1, **kw})


def zeros_like_mesh(mesh):
    return SsnState(np.zeros(2 * mesh.n_nodes), np.zeros(mesh.n_quads), np.zeros(4 * mesh.n_triangles))


def test_lag_examples():
    c = np.array([1.5, -2.0])
    np.testing.assert_array_equal(lag(c, c), c)
    assert lag(np.zeros(1), np.ones(1))[0] == 2.0
    a, dt, k = 0.7, 0.01, 5
    assert lag(a * k * dt * np.ones(1), a * (k + 1) * dt * np.ones(1))[0] == pytest.approx(a * (k + 2) * dt)
    with pytest.raises(ValueError):
        lag(np.zeros(2), np.zeros(3))


def test_time_grid():
    mesh = build_cross_grid(24, 24)
    tg = TimeGrid.from_mesh(mesh, 0.1, 0.12)
    assert tg.dt == pytest.approx(0.1 * mesh.h ** 0.8, rel=1e-14)
    assert tg.n_steps == int(np.ceil(0.12 / tg.dt))
    assert tg.t_end >= 0.12
    with pytest.raises(ValueError):
        TimeGrid.from_mesh(mesh, -1.0, 0.12)


def test_theta0_zero_source():
    mesh = build_cross_grid(4, 4)
    th = solve_theta0(mesh, params(), source=lambda x, y, t=0: 0 * x)
    assert not th.any()


def test_theta0_shape():
    mesh = build_cross_grid(16, 16)
    th = solve_theta0(mesh, params())
    y = mesh.nodes[:, 1]
    assert y[np.argmax(th)] < 0.5
    assert np.isin(np.argmin(th), mesh.boundary_nodes_gamma)
    assert th.min() > 0


def test_theta0_needs_beta():
    with pytest.raises(SingularSystem):
        solve_theta0(build_cross_grid(2, 2), params(beta=0.0))


def test_theta0_refinement_rate():
    # self-convergence in the discrete L2 norm at the common grid vertices
    sols = {}
    for n in (8, 16, 32):
        mesh = build_cross_grid(n, n)
        sols[n] = (mesh, solve_theta0(mesh, params()))

    def at_coarse(n_fine, n_coarse):
        mesh, th = sols[n_fine]
        r = n_fine // n_coarse
        jj, ii = np.meshgrid(np.arange(n_coarse + 1) * r, np.arange(n_coarse + 1) * r, indexing="ij")
        return th[(jj * (n_fine + 1) + ii).ravel()]

    def l2(v):
        return np.sqrt(np.mean(v ** 2))

    e1 = l2(at_coarse(8, 8) - at_coarse(16, 8))
    e2 = l2(at_coarse(16, 8) - at_coarse(32, 8))
    assert np.log2(e1 / e2) >= 1.8


def test_init_zero_data_gives_zero():
    mesh = build_cross_grid(3, 3)
    model = Model.build(mesh, params(), 1e3, 0.01, force=lambda t: np.zeros(2 * mesh.n_nodes))
    u1, p1, q1, (s23, s43) = init_flow(model, np.zeros(2 * mesh.n_nodes), np.full(mesh.n_nodes, 0.3))
    assert not u1.any() and not s23.u.any() and not s43.u.any()


def test_init_matches_stokes_backward_euler_oracle():
    mesh = build_cross_grid(2, 2)
    prm = params(g0=0.0, delta_g=0.0)
    dt = 0.05
    model = Model.build(mesh, prm, 1e3, dt)
    theta = np.zeros(mesh.n_nodes)
    u1, *_ = init_flow(model, np.zeros(2 * mesh.n_nodes), theta)
    load = asm.body_force_vector(mesh)
    ref = oracles.ns_bdf2(mesh, np.full(mesh.n_triangles, prm.mu0), lambda t: load, dt, 1)
    np.testing.assert_allclose(u1, 0.5 * (ref[0] + ref[1]), atol=1e-12)


def test_steady_manufactured_state_is_preserved():
    # f chosen so that a discretely divergence-free u* solves the g = 0 system
    mesh = build_cross_grid(4, 4)
    prm = params(g0=0.0, delta_g=0.0)
    model = Model.build(mesh, prm, 1e3, 0.02, force=lambda t: np.zeros(2 * mesh.n_nodes), convection=False)
    ops = model.ops
    st = model.solve_flow(np.zeros(mesh.n_nodes), asm.body_force_vector(mesh), zeros_like_mesh(mesh))
    A = asm.assemble_weighted_viscosity(mesh, np.zeros(mesh.n_nodes), prm)
    f_star = A @ st.u + ops.B @ st.p
    model.force = lambda t: f_star
    hist = FieldHistory(st.u, st.u, np.zeros(mesh.n_nodes), np.zeros(mesh.n_nodes), st.p, st.q)
    out = flow_step(0, hist, hist.theta_curr, model)
    np.testing.assert_allclose(out.u, st.u, atol=1e-9 * abs(st.u).max())


def test_frozen_temperature_reuses_the_system_matrix():
    mesh = build_cross_grid(3, 3)
    model = Model.build(mesh, params(), 1e3, 0.01)
    seen = []
    original = model.flow_problem

    def spy(theta, F, scale=None):
        prob = original(theta, F, scale)
        seen.append(prob.Xi)
        return prob

    model.flow_problem = spy
    theta0 = solve_theta0(mesh, model.params, ops=model.ops)
    time_loop(model, np.zeros(2 * mesh.n_nodes), theta0, 5, couple_energy=False)
    assert len(seen) == 6
    assert all(X is seen[0] for X in seen)


def test_call_order():
    mesh = build_cross_grid(2, 2)
    model = Model.build(mesh, params(), 1e3, 0.01)
    log = []
    theta_tag = {}

    def start(model, u0, th0):
        log.append("init_flow")
        z = zeros_like_mesh(mesh)
        return z.u + 1.0, z.p, z.q, (z, z)

    def start_energy(model, u1, u0, th0):
        log.append(("energy_init", u1[0]))
        t = np.full(mesh.n_nodes, 1.0)
        theta_tag[id(t)] = 1
        return t

    def flow(k, hist, theta_in, model):
        log.append(("flow", k, theta_tag.get(id(theta_in))))
        z = zeros_like_mesh(mesh)
        z.u = z.u + k + 2.0
        return z

    def energy(k, hist, u_in, model):
        log.append(("energy", k, u_in[0]))
        t = np.full(mesh.n_nodes, k + 2.0)
        theta_tag[id(t)] = k + 2
        return t

    time_loop(model, np.zeros(2 * mesh.n_nodes), np.zeros(mesh.n_nodes), 4,
              flow=flow, energy=energy, start=start, start_energy=start_energy)
    assert log == [
        "init_flow", ("energy_init", 1.0),
        ("flow", 0, 1), ("energy", 0, 2.0),
        ("flow", 1, 2), ("energy", 1, 3.0),
        ("flow", 2, 3), ("energy", 2, 4.0),
    ]


def test_decoupled_flow_ignores_temperature():
    mesh = build_cross_grid(4, 4)
    prm = params(delta_mu=0.0, delta_g=0.0, alpha=0.0, beta=0.0)
    theta0 = np.linspace(0.1, 0.9, mesh.n_nodes)
    runs = []
    for couple in (True, False):
        model = Model.build(mesh, prm, 1e3, 0.005)
        us = []
        time_loop(model, np.zeros(2 * mesh.n_nodes), theta0, 6, couple_energy=couple,
                  observer=lambda out: us.append(out.u))
        runs.append(us)
    for a, b in zip(*runs):
        np.testing.assert_allclose(a, b, atol=1e-12 * (1 + abs(b).max()), rtol=0)


def test_zero_data_stays_zero():
    mesh = build_cross_grid(3, 3)
    model = Model.build(mesh, params(), 1e3, 0.01, force=lambda t: np.zeros(2 * mesh.n_nodes))
    seen = []
    hist = time_loop(model, np.zeros(2 * mesh.n_nodes), np.zeros(mesh.n_nodes), 5,
                     observer=lambda out: seen.append((out.u, out.theta)))
    assert len(seen) == 6
    assert all(not u.any() and not th.any() for u, th in seen)
    assert not hist.u_curr.any()


@pytest.mark.parametrize("alpha,c0", [(0.0, 0.4), (3.0, 0.8)])
def test_uniform_temperature_follows_scalar_recurrence(alpha, c0):
    mesh = build_cross_grid(3, 3)
    prm = params(alpha=alpha, beta=0.0, Cp=1.3)
    dt, N = 0.02, 7
    model = Model.build(mesh, prm, 1e3, dt)
    z = zeros_like_mesh(mesh)
    thetas = []
    time_loop(model, z.u, np.full(mesh.n_nodes, c0), N,
              flow=lambda k, h, th, m: zeros_like_mesh(mesh),
              start=lambda m, u0, th0: (z.u, z.p, z.q, (z, z)),
              observer=lambda out: thetas.append(out.theta))
    ref = oracles.uniform_temperature_recurrence(c0, prm.Cp, alpha, dt, N)
    got = np.array(thetas[2:])
    np.testing.assert_allclose(got, ref[2:, None] * np.ones(mesh.n_nodes), atol=1e-12, rtol=0)


def test_scalar_ode_surrogate_order():
    # mass-only system with viscous damping: u' = -lambda u, exact exponential
    lam = 4.0
    errs = []
    for N in (10, 20, 40):
        dt = 1.0 / N
        u = [1.0]
        u23 = u[0] / (1 + lam * 2 * dt / 3)
        u43 = u23 / (1 + lam * 2 * dt / 3)
        u.append(0.5 * (u23 + u43))
        for _ in range(N - 1):
            u.append((2 * u[-1] - 0.5 * u[-2]) / (1.5 + lam * dt))
        errs.append(abs(u[-1] - np.exp(-lam)))
    assert errs[0] / errs[1] >= 3.4 and errs[1] / errs[2] >= 3.4


def test_energy_loses_definiteness_reports_step():
    mesh = build_cross_grid(2, 2)
    prm = params(delta_mu=0.9, delta_g=9.0, alpha=0.0)
    model = Model.build(mesh, prm, 1e3, 1.0)
    u = np.random.default_rng(0).standard_normal(2 * mesh.n_nodes) * 1e3
    from thermobingham.linalg import NonPositivePivot
    with pytest.raises(NonPositivePivot, match="step 0"):
        energy_init(model, u, u, np.zeros(mesh.n_nodes))
    hist = FieldHistory(u, u, np.zeros(mesh.n_nodes), np.zeros(mesh.n_nodes),
                        np.zeros(mesh.n_quads), np.zeros(4 * mesh.n_triangles))
    with pytest.raises(NonPositivePivot, match="step 3"):
        energy_step(3, hist, u, model)


def test_model_rejects_unknown_coupling():
    with pytest.raises(ValueError):
        Model.build(build_cross_grid(1, 1), params(), 1e3, 0.1, yield_coupling="other")
