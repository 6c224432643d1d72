import numpy as np
import pytest

from thermobingham import assembly as asm
from thermobingham.mesh import build_cross_grid
from thermobingham.postprocess import (
    HISTORY_COLUMNS, HistoryRecord, SampleOutOfRange, history_header, history_line, make_record,
    norm_h1, norm_wq, parameter_ranges, read_history, table1_report,
)
from thermobingham.ssn import SsnState


@pytest.fixture(scope="module")
def mesh():
    return build_cross_grid(8, 8)


@pytest.fixture(scope="module")
def ops(mesh):
    return asm.assemble_constant_operators(mesh)


def test_h1_norm(mesh, ops):
    assert norm_h1(np.zeros(2 * mesh.n_nodes), ops) == 0.0
    u = np.concatenate([mesh.nodes[:, 0], np.zeros(mesh.n_nodes)])
    assert norm_h1(u, ops) == pytest.approx(np.sqrt(4 / 3), abs=5e-3)
    assert norm_h1(-2.5 * u, ops) == pytest.approx(2.5 * norm_h1(u, ops), rel=1e-14)


def test_wq_norm(mesh, ops):
    assert norm_wq(np.zeros(mesh.n_nodes), mesh) == 0.0
    assert norm_wq(np.ones(mesh.n_nodes), mesh) == pytest.approx(1.0, rel=1e-14)
    th = np.random.default_rng(0).random(mesh.n_nodes)
    # q = 2: centroid value squared times area plus the exact gradient term
    tc = th[mesh.triangles].mean(axis=1)
    ref = np.sqrt(np.sum(mesh.tri_area * tc ** 2) + th @ (ops.A_sca @ th))
    assert norm_wq(th, mesh, 2.0) == pytest.approx(ref, rel=1e-10)
    for q in (1.0, 2.5):
        with pytest.raises(ValueError):
            norm_wq(th, mesh, q)


def test_parameter_ranges_swap_for_negative_slopes(mesh):
    prm = asm.PhysicalParams(mu0=1.5, delta_mu=-0.5, g0=18.0, delta_g=-8.0, kappa=10.0, Cp=1.5)
    th = np.random.default_rng(1).random(mesh.n_nodes)
    tc = th[mesh.triangles].mean(axis=1)
    mu_min, mu_max, g_min, g_max = parameter_ranges(mesh, th, prm)
    assert mu_min == pytest.approx(prm.mu(tc.max())) and mu_max == pytest.approx(prm.mu(tc.min()))
    assert g_min == pytest.approx(prm.g(tc.max())) and g_max == pytest.approx(prm.g(tc.min()))


def test_make_record_and_csv_round_trip(mesh, ops, tmp_path):
    prm = asm.PhysicalParams(mu0=1.0, delta_mu=0.5, g0=10.0, delta_g=8.0, kappa=10.0, Cp=1.0)
    rng = np.random.default_rng(2)
    st = SsnState(rng.standard_normal(2 * mesh.n_nodes), np.zeros(mesh.n_quads), np.zeros(4 * mesh.n_triangles))
    st.iter = 2
    st.residual_history = [1e-3, 1e-9]
    st.mask = np.array([1, 0, 1, 1] * (mesh.n_triangles // 4), dtype=np.int8)
    rec = make_record(5, 0.01, st, st.u, rng.random(mesh.n_nodes), mesh, ops, prm)
    assert np.isnan(rec.delta_1) and rec.delta_2 == 1e-3 and rec.delta_3 == 1e-9
    assert rec.delta_last3 == [1e-3, 1e-9]
    assert rec.active_fraction == 0.75
    path = tmp_path / "history.csv"
    path.write_text(history_header() + "\n" + history_line(rec) + "\n")
    back = read_history(path)[0]
    for name in HISTORY_COLUMNS:
        a, b = getattr(rec, name), getattr(back, name)
        assert (np.isnan(a) and np.isnan(b)) or a == b


def _rec(step, t, hist):
    r = HistoryRecord(step=step, t=t, ssn_iters=len(hist))
    r.residual_history = list(hist)
    return r


def test_table1_report():
    log = [
        _rec(0, 0.0, []),
        _rec(1, 0.030, [1e-1, 2.5283e-5, 2.0906e-8, 5.3680e-14]),
        _rec(2, 0.120, [2.0329e-5, 4.7995e-11]),
        _rec(3, 0.150, [3e-3]),
    ]
    text = table1_report(log, [0.030, 0.120, 0.150], dt_tol=0.01)
    lines = text.splitlines()
    assert "2.5283e-05" in lines[1] and "2.0906e-08" in lines[2] and "5.3680e-14" in lines[3]
    assert lines[1].split()[1] == "-" and "2.0329e-05" in lines[2] and "4.7995e-11" in lines[3]
    assert lines[3].split()[-1] == "3.0000e-03"
    assert lines[-1].split()[-3:] == ["4", "2", "1"]
    with pytest.raises(SampleOutOfRange):
        table1_report(log, [0.5], dt_tol=0.01)
