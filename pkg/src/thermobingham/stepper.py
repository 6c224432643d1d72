"""Outer time loop: BDF2 with a lagged convection for flow and energy.

The flow at level ``k + 2`` is computed with the temperature of level
``k + 1`` frozen in all weights; the energy equation is then solved with the
new velocity.  The scheme is started from two backward-Euler flow substeps
(``u_{2/3}``, ``u_{4/3}``) and one backward-Euler energy step.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from . import assembly as asm
from . import huber
from .linalg import NonPositivePivot, SingularSystem, finalize, solve_spd
from .mesh import inradius
from .ssn import DEFAULT_MAX_ITER, DEFAULT_TOL, FlowStepProblem, SsnState, ssn_solve


YIELD_COUPLINGS = ("physical", "weighted")


def theta0_source(x, y, t=0.0):
    """Right-hand side of the elliptic problem that defines the initial temperature."""
    return x * x / 100.0 + y * y / 50.0 + 1.0 / 100.0


@dataclass(frozen=True)
class TimeGrid:
    """``dt = C h^{4/5}``, ``n_steps = ceil(Tf / dt)``; the last step is not shortened."""

    dt: float
    n_steps: int
    Tf: float
    dt_rule_constant: float

    @classmethod
    def from_mesh(cls, mesh, C, Tf):
        if not (C > 0 and Tf > 0):
            raise ValueError("dt constant and final time must be positive")
        dt = C * inradius(mesh) ** 0.8
        # guard against ceil of a ratio that is an integer up to round-off
        ratio = Tf / dt
        n = max(1, int(math.ceil(ratio - 1e-9)))
        return cls(dt=dt, n_steps=n, Tf=Tf, dt_rule_constant=C)

    @property
    def t_end(self):
        return self.n_steps * self.dt


@dataclass
class FieldHistory:
    """Fields at the two most recent time levels (``k`` and ``k + 1``)."""

    u_prev: np.ndarray
    u_curr: np.ndarray
    theta_prev: np.ndarray
    theta_curr: np.ndarray
    p_curr: np.ndarray
    q_curr: np.ndarray

    def check(self, mesh):
        n, m, l = mesh.n_nodes, mesh.n_triangles, mesh.n_quads
        shapes = {
            "u_prev": 2 * n, "u_curr": 2 * n, "theta_prev": n, "theta_curr": n,
            "p_curr": l, "q_curr": 4 * m,
        }
        for name, size in shapes.items():
            if np.shape(getattr(self, name)) != (size,):
                raise ValueError(f"{name} should have length {size}")

    def push(self, u, theta, p, q):
        self.u_prev, self.u_curr = self.u_curr, u
        self.theta_prev, self.theta_curr = self.theta_curr, theta
        self.p_curr, self.q_curr = p, q

    def warm_start(self):
        return SsnState(self.u_curr.copy(), self.p_curr.copy(), self.q_curr.copy())


def lag(prev, curr):
    """Extrapolation ``2 curr - prev``."""
    prev = np.asarray(prev, dtype=float)
    curr = np.asarray(curr, dtype=float)
    if prev.shape != curr.shape:
        raise ValueError("lag needs vectors of equal length")
    return 2.0 * curr - prev


@dataclass
class Model:
    """Everything a time step needs besides the fields.

    ``force(t)`` returns the 2n velocity load and ``heat_source(t)`` (optional)
    an n-vector added to the energy right-hand side.  ``convection=False``
    drops both convection terms (Stokes limit).

    ``yield_coupling`` selects the multiplier term of the momentum equation:
    ``"physical"`` uses ``E^T diag(|T|)`` so that, with ``|q_T| <= g_T``, the
    material yields at stress ``g``; ``"weighted"`` uses ``Q_g = E^T diag(g_T |T|)``,
    for which the yield stress becomes ``g**2``.
    """

    mesh: object
    ops: asm.AssembledOperators
    params: asm.PhysicalParams
    gamma: float
    dt: float
    force: object
    heat_source: object = None
    convection: bool = True
    yield_coupling: str = "physical"
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    _flow_cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, mesh, params, gamma, dt, force=None, **kw):
        ops = asm.assemble_constant_operators(mesh)
        if force is None:
            load = asm.body_force_vector(mesh)
            force = lambda t: load  # noqa: E731  (time-independent)
        return cls(mesh=mesh, ops=ops, params=params, gamma=float(gamma), dt=float(dt), force=force, **kw)

    def __post_init__(self):
        if self.yield_coupling not in YIELD_COUPLINGS:
            raise ValueError(f"yield_coupling must be one of {YIELD_COUPLINGS}, got {self.yield_coupling!r}")

    def convection_vector(self, w):
        if not self.convection:
            return None
        return asm.assemble_convection_vector(self.mesh, w)

    def convection_scalar(self, w):
        if not self.convection:
            return None
        return asm.assemble_convection_scalar(self.mesh, w)

    def flow_operators(self, theta, scale):
        """``(Xi, Q_g, G)`` for the frozen temperature ``theta``.

        ``Xi = scale * M + A_mu(theta)``; the last result is cached so that
        consecutive steps with an unchanged temperature share the same objects.
        """
        c = self._flow_cache
        if c and c["scale"] == scale and np.array_equal(c["theta"], theta):
            return c["Xi"], c["Q_g"], c["G"]
        theta = np.array(theta, dtype=float)
        E = self.ops.E
        A_mu = asm.assemble_weighted_viscosity(self.mesh, theta, self.params, E=E)
        G = huber.yield_on_triangles(self.mesh, theta, self.params)
        if self.yield_coupling == "weighted":
            Q_g = asm.assemble_multiplier_coupling(self.mesh, theta, self.params, E=E)
        else:
            if "Q_unit" not in c:
                c["Q_unit"] = asm.assemble_stress_coupling(self.mesh, E=E)
            Q_g = c["Q_unit"]
        Xi = finalize(scale * self.ops.M_vec + A_mu)
        c.update(theta=theta, scale=scale, Xi=Xi, Q_g=Q_g, G=G)
        return Xi, Q_g, G

    def flow_problem(self, theta, F, scale=None):
        scale = 1.5 / self.dt if scale is None else scale
        Xi, Q_g, G = self.flow_operators(theta, scale)
        return FlowStepProblem.from_operators(self.ops, Xi, Q_g, G, F, self.gamma)

    def solve_flow(self, theta, F, init):
        return ssn_solve(self.flow_problem(theta, F), init=init, tol=self.tol, max_iter=self.max_iter)


def solve_theta0(mesh, params, source=theta0_source, ops=None):
    """Initial temperature from ``(kappa A + Cp beta M_Gamma) theta0 = kappa * load``.

    With ``beta = 0`` the matrix is the pure Neumann stiffness matrix, whose
    kernel holds the constants; :class:`SingularSystem` is raised.
    """
    ops = asm.assemble_constant_operators(mesh) if ops is None else ops
    if params.beta <= 0:
        raise SingularSystem("theta0 problem needs beta > 0 (pure Neumann problem otherwise)")
    K = finalize(params.kappa * ops.A_sca + params.Cp * params.beta * ops.M_gamma)
    b = params.kappa * asm.scalar_load(mesh, source)
    try:
        return solve_spd(K, b)
    except NonPositivePivot as err:
        raise SingularSystem(str(err)) from err


def init_flow(model, u0, theta0, t0=0.0, u0_prev=None):
    """Two backward-Euler substeps of length ``2 dt / 3``; returns
    ``(u1, p1, q1, (state_23, state_43))`` with ``u1`` the substep average.

    Both solves use ``Xi = 3/(2 dt) M + A_mu(theta0)`` and the convection of
    the initial velocity.
    """
    dt = model.dt
    M = model.ops.M_vec
    u0 = np.asarray(u0, dtype=float)
    w = u0 if u0_prev is None else lag(u0_prev, u0)
    C = model.convection_vector(w)
    conv = np.zeros_like(u0) if C is None else C @ w
    s = 1.5 / dt
    F23 = model.force(t0 + 2.0 * dt / 3.0) - conv + s * (M @ u0)
    zero = SsnState(u0.copy(), np.zeros(model.mesh.n_quads), np.zeros(4 * model.mesh.n_triangles))
    st23 = model.solve_flow(theta0, F23, zero)
    F43 = model.force(t0 + 4.0 * dt / 3.0) - conv + s * (M @ st23.u)
    st43 = model.solve_flow(theta0, F43, st23)
    u1 = 0.5 * (st23.u + st43.u)
    p1 = 0.5 * (st23.p + st43.p)
    q1 = 0.5 * (st23.q + st43.q)
    return u1, p1, q1, (st23, st43)


def flow_step(k, history, theta_in, model):
    """Solve for ``u_{k+2}`` with ``theta_in`` (= ``theta_{k+1}``) frozen.

    ``F = f_{k+2} - C(L) L + 2/dt M u_{k+1} - 1/(2 dt) M u_k`` with
    ``L = 2 u_{k+1} - u_k``.  Warm-started from the level ``k + 1`` fields.
    """
    dt = model.dt
    M = model.ops.M_vec
    L = lag(history.u_prev, history.u_curr)
    F = model.force((k + 2) * dt) + M @ ((2.0 / dt) * history.u_curr - (0.5 / dt) * history.u_prev)
    C = model.convection_vector(L)
    if C is not None:
        F = F - C @ L
    return model.solve_flow(theta_in, F, history.warm_start())


def energy_matrix(model, u_in, time_coeff):
    """``time_coeff Cp M + kappa A + alpha M + Cp beta M_Gamma - dmu M2 - dg M1``
    together with the dissipation loads ``mu0 Th2 + g0 Th1``."""
    prm, ops = model.params, model.ops
    M1, M2, Th1, Th2 = asm.assemble_dissipation(model.mesh, u_in, E=ops.E)
    K = finalize(
        (time_coeff * prm.Cp + prm.alpha) * ops.M_sca
        + prm.kappa * ops.A_sca
        + prm.Cp * prm.beta * ops.M_gamma
        - prm.delta_mu * M2
        - prm.delta_g * M1
    )
    return K, prm.mu0 * Th2 + prm.g0 * Th1


def _solve_energy(K, b, k):
    try:
        return solve_spd(K, b)
    except NonPositivePivot as err:
        raise NonPositivePivot(
            f"energy matrix lost definiteness at step {k}: {err}; "
            "reduce delta_mu, delta_g or the time step"
        ) from err


def energy_step(k, history, u_in, model):
    """BDF2 energy update for ``theta_{k+2}`` given ``u_in`` (= ``u_{k+2}``)."""
    dt, Cp = model.dt, model.params.Cp
    M = model.ops.M_sca
    K, b = energy_matrix(model, u_in, 1.5 / dt)
    b = b + M @ ((2.0 * Cp / dt) * history.theta_curr - (0.5 * Cp / dt) * history.theta_prev)
    C = model.convection_scalar(lag(history.u_prev, history.u_curr))
    if C is not None:
        b = b - Cp * (C @ lag(history.theta_prev, history.theta_curr))
    if model.heat_source is not None:
        b = b + model.heat_source((k + 2) * dt)
    return _solve_energy(K, b, k)


def energy_init(model, u1, u0, theta0):
    """Backward-Euler energy step of length ``dt`` giving ``theta_1``."""
    dt, Cp = model.dt, model.params.Cp
    K, b = energy_matrix(model, u1, 1.0 / dt)
    b = b + (Cp / dt) * (model.ops.M_sca @ theta0)
    C = model.convection_scalar(u0)
    if C is not None:
        b = b - Cp * (C @ theta0)
    if model.heat_source is not None:
        b = b + model.heat_source(dt)
    return _solve_energy(K, b, 0)


@dataclass
class StepOutput:
    """What one solve of the time loop hands to the observers."""

    index: int
    t: float
    state: SsnState
    u: np.ndarray
    theta: np.ndarray
    p: np.ndarray
    q: np.ndarray
    kind: str
    theta_flow: np.ndarray = None


def time_loop(model, u0, theta0, n_steps, couple_energy=True, observer=None,
              flow=flow_step, energy=energy_step, start=init_flow, start_energy=energy_init):
    """Run the initialization and ``n_steps - 1`` BDF2 steps.

    ``observer(StepOutput)`` is called for the two initialization solves and
    after every BDF2 step, so it sees ``n_steps + 1`` solves in total.  The
    step functions are injectable, which tests use to check the call order.
    With ``couple_energy=False`` the temperature stays at ``theta0``.
    Returns the final :class:`FieldHistory`.
    """
    dt = model.dt
    u0 = np.asarray(u0, dtype=float)
    theta0 = np.asarray(theta0, dtype=float)
    u1, p1, q1, (s23, s43) = start(model, u0, theta0)
    if observer is not None:
        observer(StepOutput(1, 2 * dt / 3, s23, s23.u, theta0, s23.p, s23.q, "init", theta0))
        observer(StepOutput(2, 4 * dt / 3, s43, s43.u, theta0, s43.p, s43.q, "init", theta0))
    theta1 = start_energy(model, u1, u0, theta0) if couple_energy else theta0.copy()
    hist = FieldHistory(u0, u1, theta0, theta1, p1, q1)
    hist.check(model.mesh)
    for k in range(n_steps - 1):
        theta_in = hist.theta_curr
        state = flow(k, hist, theta_in, model)
        theta_new = energy(k, hist, state.u, model) if couple_energy else theta_in.copy()
        hist.push(state.u, theta_new, state.p, state.q)
        if observer is not None:
            observer(StepOutput(k + 3, (k + 2) * dt, state, state.u, theta_new, state.p, state.q, "bdf2", theta_in))
    return hist


@dataclass
class RunResult:
    """Outcome of :func:`run`: per-solve records, final fields and timing data."""

    config: object
    time_grid: TimeGrid
    records: list
    history: FieldHistory
    theta0: np.ndarray
    output_dir: str = None

    @property
    def average_iterations(self):
        its = [r.ssn_iters for r in self.records if r.ssn_iters > 0]
        return float(np.mean(its)) if its else 0.0


def initial_temperature(config, mesh, ops):
    if config.theta0_mode == "elliptic":
        return solve_theta0(mesh, config.physical, ops=ops)
    return np.full(mesh.n_nodes, float(config.theta0_value))


def run(config, output_dir=None, flow=flow_step, energy=energy_step, couple_energy=True,
        write_snapshots=True, progress=None, on_solve=None):
    """Algorithm driver: initial temperature, flow start, BDF2 loop.

    Records one :class:`~thermobingham.postprocess.HistoryRecord` for t = 0
    and one per SSN solve (``n_steps + 2`` in total).  With ``output_dir``
    the records are appended to ``history.csv``/``ssn_log.csv`` as they are
    produced, snapshots go to ``snapshots/`` and the resolved configuration
    to ``config.echo``.  ``progress(record)`` and ``on_solve(StepOutput, model)``
    are optional callbacks; the latter sees the full fields of every solve.
    """
    from . import output, postprocess
    from .config import echo, snapshot_indices

    mesh = config.mesh()
    tg = config.time_grid(mesh)
    model = Model.build(
        mesh, config.physical, config.reg.gamma, tg.dt,
        convection=config.convection, yield_coupling=config.yield_coupling,
    )
    theta0 = initial_temperature(config, mesh, model.ops)
    u0 = np.zeros(2 * mesh.n_nodes)
    times = [0.0, 2 * tg.dt / 3, 4 * tg.dt / 3] + [k * tg.dt for k in range(2, tg.n_steps + 1)]
    writer = None
    snaps = set()
    if output_dir is not None:
        writer = output.RunWriter(output_dir)
        with open(f"{output_dir}/config.echo", "w", encoding="utf-8") as fh:
            fh.write(echo(config))
        if write_snapshots:
            snaps = set(snapshot_indices(config, times))
    records = []

    def emit(index, t, state, u, theta, p):
        rec = postprocess.make_record(index, t, state, u, theta, mesh, model.ops, config.physical, config.report_q)
        records.append(rec)
        if writer is not None:
            writer.record(rec)
            if index in snaps:
                tc = asm.triangle_average(mesh, theta)
                mask = np.zeros(mesh.n_triangles) if state is None or state.mask is None else state.mask
                output.write_snapshot(
                    writer.snapshot_path(index), mesh, u=u, theta=theta, p=p,
                    cell_fields={
                        "active": mask,
                        "g_T": config.physical.g(tc),
                        "mu_T": config.physical.mu(tc),
                    },
                )
        if progress is not None:
            progress(rec)

    emit(0, 0.0, None, u0, theta0, np.zeros(mesh.n_quads))

    def observer(out):
        emit(out.index, out.t, out.state, out.u, out.theta, out.p)
        if on_solve is not None:
            on_solve(out, model)

    hist = time_loop(model, u0, theta0, tg.n_steps, couple_energy=couple_energy, observer=observer,
                     flow=flow, energy=energy)
    return RunResult(config, tg, records, hist, theta0, output_dir)
