import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynoid.datagen import (
    Dataset, DroneDataConfig, Normalization, TankDataConfig, Trajectory, generate_drone_dataset,
    generate_tank_dataset, load_dataset, save_dataset,
)
from dynoid.errors import FormatError, UsageError, VersionError
from dynoid.systems import DroneParams, spline_reference, waypoint_steps


@pytest.fixture(scope="module")
def tank_ds():
    return generate_tank_dataset(TankDataConfig(), seed=0)


def test_tank_default_counts(tank_ds):
    assert (len(tank_ds.train), len(tank_ds.valid), len(tank_ds.test)) == (60, 20, 20)
    assert all(len(t) == 200 for t in tank_ds.trajectories())
    assert all(t.inputs.shape == (200, 1) and t.outputs.shape == (200, 1) for t in tank_ds.trajectories())


def test_tank_output_range(tank_ds):
    # the lower tank keeps filling while the upper one drains, so levels may
    # overshoot the top waypoint slightly; 0.5 covers the simulated worst case
    sigma = TankDataConfig().noise_sigma
    y = np.concatenate([t.outputs for t in tank_ds.trajectories()])
    assert y.min() >= -5 * sigma
    assert y.max() <= 5.5 + 5 * sigma
    u = np.concatenate([t.inputs for t in tank_ds.trajectories()])
    assert u.min() >= 0.0 and u.max() <= 5.0


def test_tank_outputs_are_noisy_states(tank_ds):
    t = tank_ds.train[0]
    w = t.outputs[:, 0] - t.true_states[:, 1]
    assert 0.03 < np.std(w) < 0.07


def test_tank_deterministic_files(tmp_path, tank_ds):
    save_dataset(tank_ds, tmp_path / "a")
    save_dataset(generate_tank_dataset(TankDataConfig(), seed=0), tmp_path / "b")
    for name in ("header.json", "dataset.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_tank_seed_changes_data():
    a = generate_tank_dataset(TankDataConfig(n_train=2, n_valid=1, n_test=1), seed=0)
    b = generate_tank_dataset(TankDataConfig(n_train=2, n_valid=1, n_test=1), seed=1)
    assert not np.array_equal(a.train[0].outputs, b.train[0].outputs)


def test_splits_disjoint(tank_ds):
    ids = [{t.id for t in tank_ds.split(s)} for s in ("train", "valid", "test")]
    assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])


def test_duplicate_ids_rejected():
    t = Trajectory("a", 1.0, np.zeros((3, 1)), np.zeros((3, 1)))
    with pytest.raises(UsageError):
        Dataset("tank", 1, 1, 1.0, [t], [t], [])


def test_normalization_from_train_only(tank_ds):
    ref = Normalization.fit(tank_ds.train)
    assert tank_ds.normalization == ref
    y = np.concatenate([t.outputs for t in tank_ds.train])
    assert np.allclose(ref.y_mean, y.mean(axis=0)) and np.allclose(ref.y_std, y.std(axis=0))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3))
def test_normalization_inverse(vals, ):
    norm = Normalization(np.array([1.5]), np.array([0.7]), np.array([-2.0]), np.array([3.1]))
    y = np.array(vals)[:, None]
    assert np.allclose(norm.denormalize_y(norm.normalize_y(y)), y, rtol=1e-12, atol=1e-12)
    assert np.allclose(norm.denormalize_u(norm.normalize_u(y)), y, rtol=1e-12, atol=1e-12)


def test_normalization_constant_channel():
    t = Trajectory("c", 1.0, np.ones((5, 1)), np.arange(5.0)[:, None])
    assert Normalization.fit([t]).u_std[0] == 1.0


def test_reference_passes_waypoints():
    # the generator pins the spline to its waypoints before clipping
    cfg = TankDataConfig()
    wp = np.random.default_rng(0).uniform(0, 5, cfg.n_waypoints)
    ref = spline_reference(wp, cfg.length)[:, 0]
    assert np.max(np.abs(ref[waypoint_steps(cfg.n_waypoints, cfg.length)] - wp)) < 1e-12


# -- serialization ----------------------------------------------------------

def test_round_trip(tmp_path, tank_ds):
    save_dataset(tank_ds, tmp_path)
    back = load_dataset(tmp_path)
    assert back.system == "tank" and back.normalization == tank_ds.normalization
    for s in ("train", "valid", "test"):
        assert back.split(s) == tank_ds.split(s)


def test_header_layout(tmp_path, tank_ds):
    save_dataset(tank_ds, tmp_path)
    h = json.loads((tmp_path / "header.json").read_text())
    assert set(h) == {"format_version", "system", "n_u", "n_y", "dt", "splits", "normalization"}
    assert set(h["normalization"]) == {"u_mean", "u_std", "y_mean", "y_std"}
    rec = json.loads((tmp_path / "dataset.jsonl").read_text().splitlines()[0])
    assert set(rec) == {"id", "u", "y", "x"}


def test_truncated_file(tmp_path, tank_ds):
    save_dataset(tank_ds, tmp_path)
    p = tmp_path / "dataset.jsonl"
    text = p.read_text()
    cut = text[: len(text) // 2]
    p.write_text(cut)
    with pytest.raises(FormatError) as exc:
        load_dataset(tmp_path)
    assert exc.value.line == cut.count("\n") + 1
    assert f":{exc.value.line}:" in str(exc.value)


def test_truncated_at_line_boundary(tmp_path, tank_ds):
    save_dataset(tank_ds, tmp_path)
    p = tmp_path / "dataset.jsonl"
    p.write_text("".join(p.read_text().splitlines(keepends=True)[:10]))
    with pytest.raises(FormatError, match="missing"):
        load_dataset(tmp_path)


def test_unknown_version(tmp_path, tank_ds):
    save_dataset(tank_ds, tmp_path)
    p = tmp_path / "header.json"
    h = json.loads(p.read_text())
    h["format_version"] = 99
    p.write_text(json.dumps(h))
    with pytest.raises(VersionError) as exc:
        load_dataset(tmp_path)
    assert "99" in str(exc.value) and "1" in str(exc.value)


def test_missing_directory(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "nope")


# -- drone ----------------------------------------------------------------

def test_drone_small_dataset():
    cfg = DroneDataConfig(n_train=4, n_valid=1, n_test=1, length=200)
    ds = generate_drone_dataset(cfg, seed=0)
    assert (ds.n_u, ds.n_y) == (2, 3)
    for t in ds.trajectories():
        assert t.inputs.shape == (200, 2) and t.outputs.shape == (200, 3) and t.true_states.shape == (200, 6)
        assert t.inputs.min() >= 0 and t.inputs.max() <= DroneParams().omega_max
    again = generate_drone_dataset(cfg, seed=0)
    assert again.trajectories() == ds.trajectories()


@pytest.mark.slow
def test_drone_default_counts():
    ds = generate_drone_dataset(DroneDataConfig(), seed=0)
    assert (len(ds.train), len(ds.valid), len(ds.test)) == (500, 20, 20)
    assert all(len(t) == 600 for t in ds.trajectories())
    assert all(t.inputs.min() >= 0 and t.inputs.max() <= 300 for t in ds.trajectories())
