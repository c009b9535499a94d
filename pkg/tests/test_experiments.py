import io

import numpy as np
import pytest
from scipy import stats

from cavsme.config import from_preset
from cavsme.experiments import (feedback_toggle, histogram, read_csv, record_index, run,
                                run_ensemble, run_trajectory, write_csv)
from cavsme.rng import normals_block, trajectory_key
from cavsme.sme import Feedback


def test_histogram_single_value():
    h = histogram([0.3], 1, (0.0, 0.5))
    assert h.density[0] == pytest.approx(2.0)
    assert h.total == 1 and not h.empty


def test_histogram_empty_input():
    h = histogram([], 4, (0.0, 1.0))
    assert h.empty
    assert np.all(h.counts == 0) and np.all(h.density == 0)
    with pytest.raises(ValueError):
        histogram([1.0], 0)


def test_histogram_of_generator_normals():
    z = normals_block(trajectory_key(11, 0), np.uint64(0), 100000)
    h = histogram(z, 40, (-4.0, 4.0))
    assert np.sum(h.density * np.diff(h.edges)) == pytest.approx(1.0)
    expected = np.diff(stats.norm.cdf(h.edges)) * h.total / np.diff(stats.norm.cdf([-4, 4]))[0]
    keep = expected >= 5
    obs, ex = h.counts[keep], expected[keep]
    assert stats.chisquare(obs, ex * obs.sum() / ex.sum()).pvalue > 0.01


def test_feedback_toggle():
    fb = Feedback(target=1, low=0.2, high=0.8, g_s_high=0.05)
    assert feedback_toggle([0.01, 0.99], fb, 0.05) == 0.0
    assert feedback_toggle([0.95, 0.05], fb, 0.0) == 0.05
    assert feedback_toggle([0.5, 0.5], fb, 0.05) == 0.05
    assert feedback_toggle([0.5, 0.5], fb, 0.0) == 0.0


def test_feedback_run_holds_target_level():
    cfg = from_preset("feedback")
    recs = run_ensemble(cfg)
    tail = int(0.8 * recs[0].t.size)
    held = [r.populations[tail:, 1].mean() > 0.8 for r in recs]
    assert sum(held) > len(recs) // 2
    assert set(np.unique(recs[0].g_s)) <= {0.0, 0.05}


def test_csv_round_trip():
    buf = io.StringIO()
    write_csv(buf, ["a", "b"], [[1, 0.1], [2, 1 / 3]], ["x = 1"])
    text = buf.getvalue()
    assert text.startswith("# x = 1\na,b\n1,0.10000000000000001\n")
    assert "0.33333333333333331" in text


def test_run_writes_identical_files(tmp_path):
    cfg = from_preset("fig3_rabi", {"trajectories": "3", "t_end": "2", "seed": "4"})
    a = run(cfg, str(tmp_path / "a"), log=lambda m: None)
    b = run(cfg, str(tmp_path / "b"), workers=2, log=lambda m: None)
    assert [p.split("/")[-1] for p in a.files] == ["fig3_rabi_series.csv",
                                                    "fig3_rabi_final.csv"]
    for fa, fb in zip(a.files, b.files):
        assert open(fa, "rb").read() == open(fb, "rb").read()
    lines = open(a.files[0]).read().splitlines()
    assert "# [params]" in lines and "# g_s = 0.05" in lines
    assert any(ln.startswith("# seed = 4") for ln in lines)
    header, data = read_csv(a.files[0])
    assert header[:5] == ["traj", "t", "dy", "y", "p0"]
    assert data.shape == (3 * 21, len(header))


def test_empty_cavity_preset_field(tmp_path):
    res = run(from_preset("empty_cavity"), str(tmp_path), log=lambda m: None)
    header, data = read_csv(res.files[0])
    t = data[:, header.index("t")]
    re_a = data[:, header.index("re_a")]
    assert re_a[np.argmin(abs(t - 20.0))] == pytest.approx(0.282843, abs=1e-3)


def test_dicke_histograms_carry_model_density(tmp_path):
    cfg = from_preset("dicke_fig2", {"trajectories": "50", "t_end": "62.5"})
    cfg.histogram_times = (6.25, 62.5)
    res = run(cfg, str(tmp_path), log=lambda m: None)
    names = [p.split("/")[-1] for p in res.files]
    assert names == ["dicke_fig2_final.csv", "dicke_fig2_hist_t6.25.csv",
                     "dicke_fig2_hist_t62.5.csv"]
    header, data = read_csv(res.files[-1])
    assert header == ["bin_lo", "bin_hi", "count", "density", "model_density"]
    width = data[:, 1] - data[:, 0]
    assert np.sum(data[:, 4] * width) == pytest.approx(1.0, abs=1e-3)
    assert data[:, 2].sum() <= 50


def test_discrete_equation_runs():
    cfg = from_preset("continuum_limit", {"trajectories": "2", "t_end": "0.5"})
    r = run_trajectory(cfg, 1)
    assert r.equation == "discrete"
    assert np.allclose(r.populations.sum(1), 1.0)


def test_record_index_rejects_off_grid_times():
    rec = run_trajectory(from_preset("fig3_rabi", {"t_end": "1"}), 0)
    assert record_index(rec, 0.1) == 1
    with pytest.raises(ValueError):
        record_index(rec, 0.15)
