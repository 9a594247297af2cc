import numpy as np
import pytest
from hypothesis import given, strategies as st

from cgt.algo import AlgoConfig, NetworkState, initial_state, run
from cgt.errors import DimensionMismatch
from cgt.graph import GraphSpec, build_mixing_pair, ring
from cgt.metrics import (CSV_COLUMNS, CsvRecorder, MetricsTracker, averaged_iterate,
                         consensus_error, read_csv, record_step, tracking_error)
from cgt.objective import PowerNorm, Quadratic
from cgt.rng import make_rng


def test_averaged_iterate_examples():
    z = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(averaged_iterate(np.tile(z, (4, 1)), np.ones(4)), z)
    assert averaged_iterate(np.array([[0.0], [2.0]]), np.ones(2))[0] == 1.0
    rng = make_rng(0)
    x = rng.standard_normal((5, 3))
    u = rng.random(5)
    u *= 5 / u.sum()
    oracle = [sum(u[i] * x[i, j] for i in range(5)) / 5 for j in range(3)]
    np.testing.assert_allclose(averaged_iterate(x, u), oracle, rtol=1e-14)
    with pytest.raises(DimensionMismatch):
        averaged_iterate(x, np.ones(4))


def test_error_examples():
    assert consensus_error(np.tile([1.0, 2.0], (3, 1)), np.ones(3)) == 0
    v = np.array([0.5, 1.5, 1.0])
    assert tracking_error(np.outer(v, [2.0, -1.0]), v) == pytest.approx(0, abs=1e-28)


@given(st.integers(0, 10**6), st.integers(1, 6), st.integers(1, 4))
def test_errors_match_elementwise_oracle(seed, n, d):
    rng = make_rng(seed)
    x, y = rng.standard_normal((n, d)), rng.standard_normal((n, d))
    w = rng.random(n) + 0.1
    w *= n / w.sum()
    xbar = [sum(w[i] * x[i, j] for i in range(n)) / n for j in range(d)]
    ybar = [sum(y[i, j] for i in range(n)) / n for j in range(d)]
    ce = sum((x[i, j] - xbar[j]) ** 2 for i in range(n) for j in range(d))
    te = sum((y[i, j] - w[i] * ybar[j]) ** 2 for i in range(n) for j in range(d))
    assert consensus_error(x, w) == pytest.approx(ce, rel=1e-12, abs=1e-14)
    assert tracking_error(y, w) == pytest.approx(te, rel=1e-12, abs=1e-14)
    assert consensus_error(x, w) >= 0 and tracking_error(y, w) >= 0


def test_first_record_and_consensus_start():
    objs = [PowerNorm(2, 1.0, 4, np.array([1.0, 0.0])), PowerNorm(2, 1.0, 4)]
    mix = ring(2)
    x0 = np.tile([2.0, 1.0], (2, 1))
    rec = record_step(initial_state(x0, objs), mix, objs)
    gF = (objs[0].grad(x0[0]) + objs[1].grad(x0[0])) / 2
    assert rec.k == 0 and rec.consensus_err_sq == 0
    assert rec.grad_norm_avg == pytest.approx(np.linalg.norm(gF), rel=1e-15)
    assert rec.min_grad_so_far == rec.grad_norm_avg


def test_csv_format_and_min_column(tmp_path):
    objs = [Quadratic.isotropic(L, 2, c) for L, c in ((1.0, [1, 0]), (2.0, [0, 1]), (1.0, [1, 1]))]
    path = tmp_path / "t.csv"
    with CsvRecorder(path) as rec:
        run(make_rng(1).standard_normal((3, 2)), ring(3), objs,
            AlgoConfig("cgt", 0.2, 0.3, max_iters=10), rec)
    raw = path.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS) and len(lines) == 12
    cols = read_csv(path)
    np.testing.assert_array_equal(cols["min_grad_so_far"],
                                  np.minimum.accumulate(cols["grad_norm_avg"]))
    assert (cols["max_local_step"] <= 0.2 * 0.3 * (1 + 1e-12)).all()
    # 17 significant digits round-trip exactly
    assert [float(t) for t in lines[5].split(",")[1:]] == [
        cols[c][4] for c in CSV_COLUMNS[1:]]


def test_optional_mean_local_loss_column(tmp_path):
    objs = [Quadratic.isotropic(1.0, 1, [c]) for c in (1.0, -1.0)]
    with CsvRecorder(tmp_path / "m.csv", extra=True) as rec:
        run(np.array([[1.0], [-1.0]]), ring(2), objs, AlgoConfig("cgt", 0.1, 1.0, max_iters=2),
            rec, mean_local_loss=True)
    cols = read_csv(tmp_path / "m.csv")
    assert cols["mean_local_loss"][0] == 0.0
    assert cols["loss_avg"][0] == 0.5


def test_tracker_is_monotone_on_nonfinite():
    objs = [Quadratic.isotropic(1.0, 1)]
    mix = build_mixing_pair(GraphSpec("directed_ring", 1))
    t = MetricsTracker(mix, objs)
    a = t.record(NetworkState(np.array([[2.0]]), np.array([[2.0]])))
    b = t.record(NetworkState(np.array([[np.inf]]), np.array([[2.0]]), k=1))
    assert np.isnan(b.grad_norm_avg) and b.min_grad_so_far == a.grad_norm_avg
