import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pinchlift.metrics import (EpisodeOutcome, force_distribution, read_episode_csv, rms_error,
                               side_labels, summarize_batch, write_episode_csv, write_summary_csv)


def test_rms_examples():
    assert rms_error([[1.0], [3.0]], [[0.0], [0.0]]) == pytest.approx(math.sqrt(5.0))
    # vector samples use the Euclidean norm per tick
    assert rms_error([[3.0, 4.0]], [[0.0, 0.0]]) == pytest.approx(5.0)
    with pytest.raises(ValueError):
        rms_error([[1.0]], [[1.0, 2.0]])
    with pytest.raises(ValueError):
        rms_error(np.zeros((0, 2)), np.zeros((0, 2)))


@given(arrays(float, (7, 2), elements=st.floats(-10, 10)), st.floats(-5, 5))
def test_rms_constant_offset(a, c):
    assert rms_error(a + c, a) == pytest.approx(abs(c) * math.sqrt(2), abs=1e-9)


def out(lin, dropped=False, failed=False, seed=0):
    return EpisodeOutcome(lin, lin / 2, lin / 4, dropped, failed, np.array([1.0, 2.0]), seed)


def test_summarize_excludes_drops():
    s = summarize_batch([out(0.1), out(0.3), out(9.0, dropped=True), out(0.2, failed=True)])
    assert s.n_episodes == 4 and s.n_tracked == 3
    assert s.lin_vel_rmse_mean == pytest.approx(0.2)
    assert s.lin_vel_rmse_se == pytest.approx(0.1 / math.sqrt(3))
    assert s.drop_pct == 25.0 and s.failure_pct == 25.0


def test_summarize_single_and_empty():
    s = summarize_batch([out(0.5)])
    assert s.lin_vel_rmse_se == 0.0
    with pytest.raises(ValueError):
        summarize_batch([])
    assert math.isnan(summarize_batch([out(0.1, dropped=True)]).lin_vel_rmse_mean)


def test_negative_error_rejected():
    with pytest.raises(ValueError):
        EpisodeOutcome(-1.0, 0, 0, False, False)


def test_force_distribution():
    hist = [(4.9, [100.0, 100.0, 100.0]), (5.0, [10.0, 20.0, 30.0]), (5.1, [30.0, 20.0, 30.0])]
    fd = force_distribution(hist, (5.0, 6.0), [0, 0, 1])
    assert np.allclose(fd["per_robot"], [20.0, 20.0, 30.0])
    assert fd["side_sums"] == {0: 40.0, 1: 30.0}
    assert fd["imbalance"] == pytest.approx(0.25)
    with pytest.raises(ValueError):
        force_distribution(hist, (4.0, 6.0))
    with pytest.raises(ValueError):
        force_distribution(hist, (7.0, 8.0))


def test_side_labels():
    ns = [np.array([0.0, 1.0, 0.0]), np.array([0.0, 1.0, 0.0]), np.array([0.0, -1.0, 0.0])]
    assert side_labels(ns) == [1, 1, 0]


def test_csv_roundtrip(tmp_path):
    outs = [out(0.1, seed=3), out(float("nan"), dropped=True, seed=4)]
    p = tmp_path / "e.csv"
    write_episode_csv(p, outs, "abc", [2, 2], ["", "boom"])
    back = read_episode_csv(p)
    assert back[0].lin_vel_rmse == 0.1 and back[0].seed == 3
    assert math.isnan(back[1].lin_vel_rmse) and back[1].dropped
    assert np.array_equal(back[1].per_robot_mean_normal_force, [1.0, 2.0])
    assert p.read_text().splitlines()[2].endswith("abc,boom")
    write_summary_csv(tmp_path / "s.csv", summarize_batch(outs), "abc", 7)
    assert (tmp_path / "s.csv").read_text().splitlines()[1].endswith("abc,7")
