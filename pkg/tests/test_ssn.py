import numpy as np
import pytest
import scipy.sparse as sp

from thermobingham import assembly as asm, huber
from thermobingham.config import preset
from thermobingham.mesh import build_cross_grid
from thermobingham.ssn import (
    DEFAULT_MAX_ITER, DEFAULT_TOL, FlowStepProblem, MaxIterationsExceeded, SsnState, newton_step,
    ssn_solve,
)
from thermobingham.stepper import Model, time_loop, solve_theta0

EXP1 = asm.PhysicalParams(mu0=1.0, delta_mu=0.5, g0=10.0, delta_g=8.0, kappa=10.0, Cp=1.0, alpha=100.0, beta=15.0)


def make_problem(n=3, g0=10.0, delta_g=8.0, seed=0, scale=100.0, weighted=False):
    mesh = build_cross_grid(n, n)
    ops = asm.assemble_constant_operators(mesh)
    prm = asm.PhysicalParams(mu0=1.0, delta_mu=0.5, g0=g0, delta_g=delta_g, kappa=10.0, Cp=1.0)
    theta = np.random.default_rng(seed).random(mesh.n_nodes)
    A = asm.assemble_weighted_viscosity(mesh, theta, prm)
    Xi = asm.finalize(scale * ops.M_vec + A)
    Q = asm.assemble_multiplier_coupling(mesh, theta, prm) if weighted else asm.assemble_stress_coupling(mesh)
    G = asm.yield_on_triangles(mesh, theta, prm)
    F = asm.body_force_vector(mesh)
    return mesh, ops, FlowStepProblem.from_operators(ops, Xi, Q, G, F, 1e3)


def random_state(problem, seed):
    rng = np.random.default_rng(seed)
    nu, npr, nq = problem.sizes
    u = rng.standard_normal(nu)
    u[problem.fixed] = 0.0
    return SsnState(u, rng.standard_normal(npr), rng.standard_normal(nq))


def test_defaults():
    assert DEFAULT_TOL == pytest.approx(1.4901e-8, rel=1e-4)
    assert DEFAULT_MAX_ITER == 50


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_no_yield_stress_converges_in_one_step(seed):
    _, _, prob = make_problem(g0=0.0, delta_g=0.0)
    st = ssn_solve(prob, init=random_state(prob, seed))
    assert st.iter == 1
    assert prob.relative_residual(st.u, st.p, st.q) <= 1e-12


def test_solution_is_a_fixed_point():
    _, _, prob = make_problem()
    st = ssn_solve(prob)
    assert st.converged
    du, dp, dq, _ = newton_step(prob, st)
    assert prob.step_norm(du, dp, dq) <= 1e-9 * (1 + prob.step_norm(st.u, st.p, st.q))
    # mask at convergence is the one recomputed from the converged fields
    np.testing.assert_array_equal(st.mask, huber.active_mask(prob.E @ st.u, prob.G, prob.gamma))


def test_feasible_at_convergence():
    _, _, prob = make_problem(n=4)
    st = ssn_solve(prob)
    assert np.all(huber.triangle_norm(st.q) - prob.G <= 1e-8 * prob.G.max())
    assert abs(prob.B.T @ st.u).max() <= 1e-8 * (1 + abs(st.u).max())


@pytest.mark.parametrize("weighted", [False, True])
def test_reduced_step_equals_full_block_solve(weighted):
    mesh, ops, prob = make_problem(n=2, seed=3, weighted=weighted)
    st = random_state(prob, 4)
    st.u *= 0.3
    du, dp, dq, mask = newton_step(prob, st)
    # dense unreduced system in (du_free, dp, dq, lambda)
    r1, r2, r3 = prob.residuals(st.u, st.p, st.q)
    free = prob.free_mask()
    strain = prob.E @ st.u
    S = huber.build_newton_S(strain, st.q, prob.G, prob.gamma, prob.E, mask=mask).toarray()
    D = np.diag(np.tile(np.maximum(prob.G, prob.gamma * huber.triangle_norm(strain)), 4))
    Xi, B, Q = prob.Xi.toarray(), prob.B.toarray(), prob.Q_g.toarray()
    C = np.vstack([prob.quad_weights, prob.pressure_filter])
    nf, l, nq, k = free.sum(), B.shape[1], Q.shape[1], 2
    K = np.zeros((nf + l + nq + k,) * 2)
    iu, ip, iq, il = slice(0, nf), slice(nf, nf + l), slice(nf + l, nf + l + nq), slice(nf + l + nq, None)
    K[iu, iu] = Xi[np.ix_(free, free)]
    K[iu, ip] = B[free]
    K[iu, iq] = Q[free]
    K[ip, iu] = B[free].T
    K[ip, il] = C.T
    K[iq, iu] = S[:, free]
    K[iq, iq] = D
    K[il, ip] = C
    rhs = np.concatenate([-r1[free], r2, -r3, np.zeros(k)])
    x = np.linalg.solve(K, rhs)
    np.testing.assert_allclose(du[free], x[iu], atol=1e-9)
    assert not du[~free].any()
    np.testing.assert_allclose(dp, x[ip], atol=1e-9)
    np.testing.assert_allclose(dq, x[iq], atol=1e-9)


def test_zero_step_at_exact_solution_of_one_triangle():
    # q* built from a chosen strain: residual blocks vanish by construction
    mesh, ops, prob = make_problem(n=1)
    st = ssn_solve(prob)
    r = prob.residuals(st.u, st.p, st.q)
    assert max(abs(b).max() for b in r) <= 1e-8 * abs(prob.F).max()


def test_max_iterations_carries_history():
    _, _, prob = make_problem(n=4, scale=1.0)
    with pytest.raises(MaxIterationsExceeded) as info:
        ssn_solve(prob, max_iter=1)
    assert len(info.value.residual_history) == 1


def test_bad_inputs():
    _, _, prob = make_problem(n=1)
    with pytest.raises(ValueError):
        ssn_solve(prob, tol=0.0)
    with pytest.raises(ValueError):
        ssn_solve(prob, init=SsnState(np.zeros(3), np.zeros(1), np.zeros(16)))


def test_superlinear_tail():
    _, _, prob = make_problem(n=6, scale=10.0)
    st = ssn_solve(prob)
    h = st.residual_history
    assert st.iter >= 4
    ratios = [h[i + 1] / h[i] for i in range(len(h) - 1)]
    assert ratios[-1] < ratios[-2]


def test_warm_start_never_slower_than_cold():
    cfg = preset("experiment1", mesh_n=10)
    mesh = cfg.mesh()
    tg = cfg.time_grid(mesh)
    model = Model.build(mesh, cfg.physical, cfg.reg.gamma, tg.dt)
    theta0 = solve_theta0(mesh, cfg.physical, ops=model.ops)
    pairs = []
    solve = model.solve_flow

    def spy(theta, F, init):
        warm = solve(theta, F, init)
        cold = ssn_solve(model.flow_problem(theta, F), tol=model.tol)
        pairs.append((warm.iter, cold.iter))
        return warm

    model.solve_flow = spy
    time_loop(model, np.zeros(2 * mesh.n_nodes), theta0, 12)
    sampled = pairs[2::2][:5]
    assert len(sampled) == 5
    assert all(w <= c for w, c in sampled)
