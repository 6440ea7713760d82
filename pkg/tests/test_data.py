import numpy as np
import pytest

from porestack.data import (Ensemble, Simulation, StateMap, crop_borders,
                            split_ensemble, validate_simulation)
from porestack.errors import DataError


def make_sim(sim_id="s0", n_steps=6, h=8, w=10, channels=("C", "eps", "Ux", "Uy"),
             seed=0):
    rng = np.random.default_rng(seed)
    states = []
    for _ in range(n_steps):
        state = rng.random((len(channels), h, w)).astype(np.float32)
        states.append(state)
    return Simulation(sim_id, channels, states)


def test_state_map_requires_2d():
    with pytest.raises(DataError):
        StateMap(np.zeros((3, 3, 3)), "C")
    with pytest.raises(DataError):
        StateMap(np.zeros((0, 3)), "C")


def test_state_map_rejects_unknown_channel():
    with pytest.raises(DataError):
        StateMap(np.zeros((3, 3)), "pressure")


def test_simulation_array_round_trip():
    sim = make_sim()
    arr = sim.array()
    assert arr.shape == (6, 4, 8, 10)
    again = Simulation.from_array("s1", arr, sim.channels)
    assert np.array_equal(again.array(), arr)


def test_simulation_ragged_step_reported_not_crashed():
    sim = make_sim(h=8, w=10)
    sim.states[3] = sim.states[3][:, :, :7]  # step 3 loses columns
    report = validate_simulation(sim)
    assert not report.ok
    assert any(i.kind == "shape" and i.step == 3 for i in report.issues)
    with pytest.raises(DataError, match="step 3"):
        sim.array()


def test_validate_flags_nonfinite_with_location():
    sim = make_sim()
    sim.states[2][0, 4, 5] = np.nan
    report = validate_simulation(sim)
    issues = [i for i in report.issues if i.kind == "non-finite"]
    assert len(issues) == 1
    assert issues[0].step == 2 and issues[0].channel == "C"
    assert "(4, 5)" in issues[0].message


def test_validate_flags_eps_out_of_range():
    sim = make_sim()
    sim.states[1][1, 0, 0] = 1.25
    report = validate_simulation(sim)
    assert any(i.kind == "eps-range" and i.step == 1 for i in report.issues)


def test_validate_flags_nonbinary_filter():
    sim = make_sim(channels=("C", "eps", "Ux", "Uy", "U", "Cscaled", "Filter"))
    for state in sim.states:
        state[6] = np.round(state[6])
    sim.states[4][6, 2, 2] = 0.5
    report = validate_simulation(sim)
    assert any(i.kind == "filter-binary" and i.step == 4 for i in report.issues)


def test_validate_clean_simulation_ok():
    sim = make_sim()
    for state in sim.states:
        state[1] = np.clip(state[1], 0.0, 1.0)
    assert validate_simulation(sim).ok


def test_crop_borders_removes_symmetric_margin():
    sim = make_sim(n_steps=3, h=260, w=260)
    cropped = crop_borders(sim, 256, 256)
    assert cropped.grid_shape == (256, 256)
    # rows/cols 0, 1 and 258, 259 removed, interior bit-exact
    for t in range(3):
        expected = sim.states[t][:, 2:258, 2:258]
        assert np.array_equal(cropped.states[t], expected)


def test_crop_borders_identity_when_sizes_match():
    sim = make_sim(h=8, w=10)
    cropped = crop_borders(sim, 8, 10)
    assert np.array_equal(cropped.array(), sim.array())


def test_crop_borders_rejects_odd_margin_and_growth():
    sim = make_sim(h=9, w=10)
    with pytest.raises(DataError, match="even"):
        crop_borders(sim, 8, 10)
    with pytest.raises(DataError, match="larger"):
        crop_borders(sim, 12, 10)


def test_split_ensemble_is_a_partition():
    sims = [make_sim(f"s{k}", seed=k) for k in range(8)]
    ens = split_ensemble(Ensemble(sims), 6, seed=42)
    train = {s.id for s in ens.train()}
    val = {s.id for s in ens.validation()}
    assert len(train) == 6 and len(val) == 2
    assert train | val == {s.id for s in sims}
    assert not train & val


def test_split_ensemble_deterministic_and_order_independent():
    sims = [make_sim(f"s{k}", seed=k) for k in range(8)]
    a = split_ensemble(Ensemble(sims), 5, seed=7).split
    b = split_ensemble(Ensemble(list(reversed(sims))), 5, seed=7).split
    assert a == b
    c = split_ensemble(Ensemble(sims), 5, seed=8).split
    assert a != c  # a different seed should reshuffle eventually


def test_split_ensemble_rejects_degenerate_counts():
    sims = [make_sim(f"s{k}", seed=k) for k in range(4)]
    ens = Ensemble(sims)
    for bad in (0, 4, 5, -1):
        with pytest.raises(DataError):
            split_ensemble(ens, bad, seed=0)


def test_ensemble_rejects_duplicate_ids():
    with pytest.raises(DataError):
        Ensemble([make_sim("dup"), make_sim("dup", seed=1)])


def test_ensemble_subset_requires_complete_split():
    ens = Ensemble([make_sim("a"), make_sim("b", seed=1)], {"a": "train"})
    with pytest.raises(DataError):
        ens.train()
