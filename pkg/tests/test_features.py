import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from porestack.data import Simulation, StateMap
from porestack.errors import DataError
from porestack.features import (NormStats, combined_filter, denormalize_outputs,
                                fit_norm_stats, make_windows, normalize_inputs,
                                normalize_outputs, scaled_concentration,
                                velocity_magnitude, with_engineered_channels)

from test_data import make_sim


def test_velocity_magnitude_matches_pointwise_oracle():
    rng = np.random.default_rng(0)
    ux = rng.normal(size=(5, 6))
    uy = rng.normal(size=(5, 6))
    got = velocity_magnitude(StateMap(ux, "Ux"), StateMap(uy, "Uy"))
    assert got.channel == "U"
    for i in range(5):
        for j in range(6):
            expected = math.sqrt(ux[i, j] ** 2 + uy[i, j] ** 2)
            assert got.values[i, j] == pytest.approx(expected, rel=1e-12)


def test_scaled_concentration_fixed_points():
    c = StateMap(np.array([[1e-10, 1e-5, 1.0, 0.0, 1e-12]]), "C")
    got = scaled_concentration(c).values[0]
    assert got[0] == pytest.approx(0.0, abs=1e-12)
    assert got[1] == pytest.approx(0.5, abs=1e-12)   # halfway in log10 scale
    assert got[2] == pytest.approx(1.0, abs=1e-12)
    assert got[3] == pytest.approx(0.0, abs=1e-12)   # below floor clips to floor
    assert got[4] == pytest.approx(0.0, abs=1e-12)


def test_scaled_concentration_monotone_in_c():
    c = np.logspace(-12, 0, 40).reshape(4, 10)
    out = scaled_concentration(StateMap(c, "C")).values.ravel()
    assert np.all(np.diff(out) >= 0)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_scaled_concentration_rejects_bad_floor():
    with pytest.raises(DataError):
        scaled_concentration(StateMap(np.ones((2, 2)), "C"), floor=0.0)
    with pytest.raises(DataError):
        scaled_concentration(StateMap(np.ones((2, 2)), "C"), floor=2.0)


def test_combined_filter_boundary_semantics():
    c = StateMap(np.array([[1e-4, 9.9e-5, 1.0, 1.0, 1.0]]), "C")
    eps = StateMap(np.array([[0.5, 0.5, 0.01, 0.99, 0.995]]), "eps")
    got = combined_filter(c, eps).values[0]
    # thresholds are inclusive on the active side
    assert got.tolist() == [1.0, 0.0, 1.0, 1.0, 0.0]


def test_combined_filter_is_binary():
    rng = np.random.default_rng(1)
    c = StateMap(10 ** rng.uniform(-8, 0, (16, 16)), "C")
    eps = StateMap(rng.random((16, 16)), "eps")
    got = combined_filter(c, eps).values
    assert set(np.unique(got)) <= {0.0, 1.0}


def test_with_engineered_channels_appends_in_order():
    sim = make_sim(n_steps=3)
    for state in sim.states:
        state[1] = np.clip(state[1], 0.0, 1.0)
    rich = with_engineered_channels(sim)
    assert rich.channels == ("C", "eps", "Ux", "Uy", "U", "Cscaled", "Filter")
    step = rich.states[1]
    assert np.allclose(step[4], np.hypot(step[2], step[3]), atol=1e-6)
    with pytest.raises(DataError):
        with_engineered_channels(rich)


def brute_force_stats(sims):
    per_channel = {name: [] for name in ("C", "eps", "Ux", "Uy", "U")}
    for sim in sims:
        for state in sim.states:
            per_channel["C"].append(state[0].ravel())
            per_channel["eps"].append(state[1].ravel())
            per_channel["Ux"].append(state[2].ravel())
            per_channel["Uy"].append(state[3].ravel())
            per_channel["U"].append(
                np.hypot(state[2].astype(np.float64), state[3].astype(np.float64)).ravel())
    flat = {k: np.concatenate(v).astype(np.float64) for k, v in per_channel.items()}
    mean = {k: float(v.mean()) for k, v in flat.items()}
    std = {k: float(v.std()) for k, v in flat.items()}
    lo = {k: float(flat[k].min()) for k in ("C", "eps", "Ux", "Uy")}
    hi = {k: float(flat[k].max()) for k in ("C", "eps", "Ux", "Uy")}
    return mean, std, lo, hi


def test_fit_norm_stats_matches_brute_force():
    sims = [make_sim(f"s{k}", n_steps=4, seed=k) for k in range(3)]
    stats = fit_norm_stats(sims)
    mean, std, lo, hi = brute_force_stats(sims)
    for name in ("C", "eps", "Ux", "Uy", "U"):
        assert stats.input_mean[name] == pytest.approx(mean[name], rel=1e-9)
        assert stats.input_std[name] == pytest.approx(std[name], rel=1e-7)
    for name in ("C", "eps", "Ux", "Uy"):
        assert stats.output_min[name] == pytest.approx(lo[name], rel=1e-9)
        assert stats.output_max[name] == pytest.approx(hi[name], rel=1e-9)


def test_fit_norm_stats_rejects_constant_channel():
    sim = make_sim(n_steps=3)
    for state in sim.states:
        state[0] = 0.25
    with pytest.raises(DataError, match="constant"):
        fit_norm_stats([sim])


def test_fit_norm_stats_rejects_empty():
    with pytest.raises(DataError):
        fit_norm_stats([])


def example_stats():
    names = ("C", "eps", "Ux", "Uy", "U")
    return NormStats(
        input_mean={n: 0.3 for n in names},
        input_std={n: 2.0 for n in names},
        output_min={n: -1.0 for n in ("C", "eps", "Ux", "Uy")},
        output_max={n: 3.0 for n in ("C", "eps", "Ux", "Uy")},
    )


def test_norm_stats_json_round_trip_and_hash():
    stats = example_stats()
    again = NormStats.from_json(stats.to_json())
    assert again == stats
    assert again.content_hash() == stats.content_hash()
    bumped = NormStats.from_json(stats.to_json().replace("0.3", "0.31"))
    assert bumped.content_hash() != stats.content_hash()


def test_norm_stats_rejects_zero_std_and_degenerate_range():
    stats = example_stats()
    with pytest.raises(DataError):
        NormStats(stats.input_mean, dict(stats.input_std, C=0.0),
                  stats.output_min, stats.output_max)
    with pytest.raises(DataError):
        NormStats(stats.input_mean, stats.input_std,
                  dict(stats.output_min, C=3.0), stats.output_max)


def test_normalize_inputs_standardizes_and_passes_exempt_through():
    stats = example_stats()
    rng = np.random.default_rng(0)
    window = rng.random((2, 7, 4, 4)).astype(np.float32)
    channels = ("C", "eps", "Ux", "Uy", "U", "Cscaled", "Filter")
    out = normalize_inputs(window, channels, stats)
    assert np.allclose(out[:, 0], (window[:, 0] - 0.3) / 2.0, atol=1e-6)
    assert np.array_equal(out[:, 5], window[:, 5])
    assert np.array_equal(out[:, 6], window[:, 6])


def test_output_normalization_round_trip():
    stats = example_stats()
    rng = np.random.default_rng(2)
    block = (rng.random((3, 4, 5, 5)) * 4 - 1).astype(np.float32)
    norm = normalize_outputs(block, stats)
    assert norm.min() >= -1e-6 and norm.max() <= 1.0 + 1e-6
    back = denormalize_outputs(norm, stats)
    assert np.allclose(back, block, rtol=1e-6, atol=1e-6)


def test_denormalize_does_not_clamp():
    stats = example_stats()
    wild = np.full((1, 4, 2, 2), 1.5, dtype=np.float32)  # outside [0, 1]
    back = denormalize_outputs(wild, stats)
    assert np.allclose(back, 1.5 * 4.0 - 1.0)


@given(st.integers(5, 30), st.integers(1, 5), st.integers(1, 5))
@settings(max_examples=40, deadline=None)
def test_make_windows_count_property(n_steps, m, n):
    sim = make_sim(n_steps=n_steps, h=4, w=4)
    if n_steps < m + n:
        with pytest.raises(DataError):
            make_windows(sim, m, n)
        return
    windows = make_windows(sim, m, n)
    assert len(windows) == n_steps - m - n + 1


def test_make_windows_contents_are_consecutive_slices():
    sim = make_sim(n_steps=9)
    arr = sim.array()
    windows = make_windows(sim, 3, 2)
    assert [w.t for w in windows] == [2, 3, 4, 5, 6]
    w = windows[2]  # anchor t=4
    assert np.array_equal(w.inputs, arr[2:5])
    assert np.array_equal(w.targets, arr[5:7])


def test_make_windows_stride():
    sim = make_sim(n_steps=12)
    windows = make_windows(sim, 2, 2, stride=3)
    assert [w.t for w in windows] == [1, 4, 7]


def test_make_windows_targets_are_physical_only():
    sim = with_engineered_channels(make_sim(n_steps=6))
    windows = make_windows(sim, 2, 2)
    assert windows[0].inputs.shape[1] == 7
    assert windows[0].targets.shape[1] == 4
