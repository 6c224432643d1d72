"""Diagnostics of a run: discrete norms, parameter ranges and SSN decay tables."""
from dataclasses import dataclass, field

import numpy as np

from .assembly import triangle_average

HISTORY_COLUMNS = (
    "step", "t", "ssn_iters", "delta_1", "delta_2", "delta_3", "u_h1", "theta_wq",
    "mu_min", "mu_max", "g_min", "g_max", "active_fraction",
)
DEFAULT_REPORT_Q = 1.5


class SampleOutOfRange(ValueError):
    pass


def norm_h1(u, ops):
    """``(u^T (M + K) u)^(1/2)`` with the vector mass and Laplacian."""
    u = np.asarray(u, dtype=float)
    return float(np.sqrt(max(u @ (ops.M_vec @ u) + u @ (ops.K_vec @ u), 0.0)))


def norm_wq(theta, mesh, q=DEFAULT_REPORT_Q):
    """Discrete ``W^{1,q}`` norm with centroid values and the constant gradients.

    ``(sum_T |T| (|theta_T|^q + |grad theta_T|^q))^(1/q)``.
    """
    if not 1.0 < q <= 2.0:
        raise ValueError(f"exponent q must lie in (1, 2], got {q}")
    theta = np.asarray(theta, dtype=float)
    tc = triangle_average(mesh, theta)
    grad = np.einsum("ti,tid->td", theta[mesh.triangles], mesh.grad_basis)
    gn = np.sqrt(np.einsum("td,td->t", grad, grad))
    total = np.sum(mesh.tri_area * (np.abs(tc) ** q + gn ** q))
    return float(total ** (1.0 / q))


def parameter_ranges(mesh, theta, params):
    """Extremes of ``mu_T`` and ``g_T`` over the triangles: (mu_min, mu_max, g_min, g_max)."""
    tc = triangle_average(mesh, theta)
    mu = params.mu(tc)
    g = params.g(tc)
    return float(mu.min()), float(mu.max()), float(g.min()), float(g.max())


@dataclass
class HistoryRecord:
    """One row of ``history.csv``; ``delta_*`` hold the last three step norms
    (oldest first, NaN-padded when fewer iterations were taken)."""

    step: int
    t: float
    ssn_iters: int
    delta_1: float = np.nan
    delta_2: float = np.nan
    delta_3: float = np.nan
    u_h1: float = 0.0
    theta_wq: float = 0.0
    mu_min: float = 0.0
    mu_max: float = 0.0
    g_min: float = 0.0
    g_max: float = 0.0
    active_fraction: float = 0.0
    residual_history: list = field(default_factory=list, repr=False, compare=False)

    @property
    def delta_last3(self):
        return [d for d in (self.delta_1, self.delta_2, self.delta_3) if np.isfinite(d)]

    def row(self):
        return tuple(getattr(self, c) for c in HISTORY_COLUMNS)


def make_record(step, t, state, u, theta, mesh, ops, params, q=DEFAULT_REPORT_Q):
    """Build a :class:`HistoryRecord` from a converged SSN state (or ``None``
    for the initial instant)."""
    hist = [] if state is None else list(state.residual_history)
    last = hist[-3:]
    pad = [np.nan] * (3 - len(last)) + last
    if state is None or state.mask is None:
        active = 0.0
    else:
        active = float(np.count_nonzero(state.mask)) / len(state.mask)
    mu_min, mu_max, g_min, g_max = parameter_ranges(mesh, theta, params)
    return HistoryRecord(
        step=int(step),
        t=float(t),
        ssn_iters=0 if state is None else int(state.iter),
        delta_1=pad[0],
        delta_2=pad[1],
        delta_3=pad[2],
        u_h1=norm_h1(u, ops),
        theta_wq=norm_wq(theta, mesh, q),
        mu_min=mu_min,
        mu_max=mu_max,
        g_min=g_min,
        g_max=g_max,
        active_fraction=active,
        residual_history=hist,
    )


def format_value(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def history_header():
    return ",".join(HISTORY_COLUMNS)


def history_line(record):
    return ",".join(format_value(v) for v in record.row())


def read_history(path):
    """Parse ``history.csv`` back into :class:`HistoryRecord` objects."""
    out = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != HISTORY_COLUMNS:
            raise ValueError(f"unexpected history header in {path}")
        for line in fh:
            if not line.strip():
                continue
            vals = line.strip().split(",")
            kw = {}
            for name, v in zip(HISTORY_COLUMNS, vals):
                kw[name] = int(v) if name in ("step", "ssn_iters") else float(v)
            out.append(HistoryRecord(**kw))
    return out


def table1_report(ssn_log, sample_times, dt_tol=None):
    """Last three step norms and iteration count at the records closest to
    each sample time.

    ``ssn_log`` is a sequence of :class:`HistoryRecord`.  A sample time further
    than half the widest record spacing (or ``dt_tol``) from every logged solve raises
    :class:`SampleOutOfRange`.  Returns the table as text.
    """
    recs = [r for r in ssn_log if r.ssn_iters > 0]
    if not recs:
        raise SampleOutOfRange("no SSN solves logged")
    ts = np.array([r.t for r in recs])
    if dt_tol is None:
        dt_tol = 0.5 * float(np.max(np.diff(ts))) if len(ts) > 1 else np.inf
    cols = []
    for s in sample_times:
        k = int(np.argmin(np.abs(ts - s)))
        if abs(ts[k] - s) > dt_tol + 1e-12:
            raise SampleOutOfRange(f"no logged step near t = {s}")
        cols.append((s, recs[k]))
    width = 12
    lines = ["t".ljust(8) + "".join(f"{s:<{width}.4g}" for s, _ in cols)]
    for row in range(3):
        cells = []
        for _, r in cols:
            d = r.residual_history[-3:] if r.residual_history else r.delta_last3
            d = [np.nan] * (3 - len(d)) + list(d)
            cells.append("-".ljust(width) if not np.isfinite(d[row]) else f"{d[row]:<{width}.4e}")
        lines.append(("delta" if row == 1 else "").ljust(8) + "".join(cells))
    lines.append("# it.".ljust(8) + "".join(f"{r.ssn_iters:<{width}d}" for _, r in cols))
    return "\n".join(lines)
