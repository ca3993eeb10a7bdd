import json
import math

import numpy as np
import pytest

from genssbf import datafile
from genssbf.beamcore import normalized_gain
from genssbf.numerics import RngStream
from genssbf.sensing import probing_codebook, prompts
from genssbf.sitechannel import (Anchor, ArrayConfig, ScenarioId, SiteScenario, SplitTag, UeGrid,
                                 default_scenario, generate_dataset, indoor_nlos, path_count_map,
                                 split_tags, steering_vector, synthesize_channel, urban_mixed)


@pytest.fixture(scope="module")
def small_indoor():
    return generate_dataset(indoor_nlos(), ArrayConfig(16), 300, seed=5)


def test_steering_examples():
    assert np.allclose(steering_vector(ArrayConfig(4), 0.0), [1, 1, 1, 1], atol=1e-15)
    assert np.allclose(steering_vector(ArrayConfig(2), math.pi / 2), [1, -1], atol=1e-15)
    assert np.allclose(steering_vector(ArrayConfig(4), math.pi / 6), [1, 1j, -1, -1j], atol=1e-12)


@pytest.mark.parametrize("theta", np.linspace(-math.pi / 2, math.pi / 2, 13))
def test_steering_unit_modulus(theta):
    a = steering_vector(ArrayConfig(32), theta)
    assert np.max(np.abs(np.abs(a) - 1)) < 1e-12
    assert np.linalg.norm(a) == pytest.approx(math.sqrt(32))


def test_array_config_validation():
    with pytest.raises(ValueError):
        ArrayConfig(1)
    with pytest.raises(ValueError):
        ArrayConfig(4, element_spacing=0)


def test_single_los_broadside_is_steering_direction():
    sc = SiteScenario(ScenarioId.urban_mixed, [], UeGrid(-5, 5, 5, 15, 1.0))
    arr = ArrayConfig(8)
    s = synthesize_channel(sc, arr, (0.0, 10.0), RngStream(1))
    assert s.num_paths == 1 and s.thetas[0] == 0.0
    w = steering_vector(arr, 0.0) / math.sqrt(8)
    assert normalized_gain(w, s.h) == pytest.approx(1.0, abs=1e-12)


def test_outside_grid_rejected():
    with pytest.raises(ValueError, match="outside"):
        synthesize_channel(indoor_nlos(), ArrayConfig(8), (50.0, 10.0), RngStream(0))


def test_indoor_has_no_los_and_every_point_has_a_path():
    sc = indoor_nlos()
    counts = path_count_map(sc)
    assert counts.min() >= 1
    for p in sc.ue_grid.positions()[::37]:
        assert sc.los_blocked(p)
        thetas = [t for t, _ in sc.path_geometry(p)]
        anchor_angles = {math.atan2(*a.position) for a in sc.anchors}
        assert set(thetas) <= anchor_angles


def test_urban_every_point_has_a_path_and_los_is_mixed():
    sc = urban_mixed()
    assert path_count_map(sc).min() >= 1
    blocked = np.mean([sc.los_blocked(p) for p in sc.ue_grid.positions()])
    assert 0.3 < blocked < 0.5


def test_mirrored_positions_give_mirrored_angles():
    sc = indoor_nlos()
    mir = sc.mirrored()
    arr = ArrayConfig(16)
    for ue in [(-7.0, 9.5), (3.0, 20.0), (8.5, 12.0), (-2.0, 25.0)]:
        a = synthesize_channel(sc, arr, ue, RngStream(1))
        b = synthesize_channel(mir, arr, (-ue[0], ue[1]), RngStream(1))
        assert sorted(a.thetas) == pytest.approx(sorted(-b.thetas), abs=1e-12)
        expected = sorted(math.atan2(-p[0], p[1]) for p in
                          (sc.anchors[i].position for i in sc.visible_anchors(ue)))
        assert sorted(b.thetas) == pytest.approx(expected, abs=1e-12)


def test_resum_reproduces_h(small_indoor):
    for s in small_indoor.samples:
        assert np.linalg.norm(s.resum(small_indoor.array) - s.h) <= 1e-9 * np.linalg.norm(s.h)
        assert np.linalg.norm(s.h) > 0


def test_dataset_is_deterministic():
    a = generate_dataset(indoor_nlos(), ArrayConfig(8), 50, seed=3)
    b = generate_dataset(indoor_nlos(), ArrayConfig(8), 50, seed=3)
    assert np.array_equal(a.channels(), b.channels())
    assert np.array_equal(a.split_tags, b.split_tags)
    c = generate_dataset(indoor_nlos(), ArrayConfig(8), 50, seed=4)
    assert not np.array_equal(a.channels(), c.channels())


def test_grid_sized_dataset_visits_each_point_once():
    sc = indoor_nlos()
    g = len(sc.ue_grid)
    ds = generate_dataset(sc, ArrayConfig(4), g, seed=0)
    pos = {tuple(s.ue_position) for s in ds.samples}
    assert len(pos) == g


def test_repeat_sweep_uses_fresh_fading():
    sc = indoor_nlos()
    g = len(sc.ue_grid)
    ds = generate_dataset(sc, ArrayConfig(4), g + 1, seed=0)
    assert np.array_equal(ds.samples[0].ue_position, ds.samples[g].ue_position)
    assert not np.allclose(ds.samples[0].h, ds.samples[g].h)


def test_split_proportions_are_exact():
    tags = split_tags(10_000, seed=17)
    counts = np.bincount(tags, minlength=3)
    assert counts.tolist() == [8000, 1000, 1000]
    assert np.array_equal(tags, split_tags(10_000, seed=17))
    assert not np.array_equal(tags, split_tags(10_000, seed=18))


def ambiguous_pairs(scenario, array, m=4, max_prompt_dist=0.05, max_mutual_gain=0.5):
    """Grid-point pairs whose M-probe prompts nearly coincide but whose MRT beams differ."""
    pts = scenario.ue_grid.positions()
    h = np.stack([sum(g * steering_vector(array, t) for t, g in scenario.path_geometry(p))
                  for p in pts])
    x = prompts(probing_codebook(array, m), h)
    w = h / np.linalg.norm(h, axis=1, keepdims=True)
    dist = np.sqrt(((x[:, None] - x[None]) ** 2).sum(-1))
    mutual = np.abs(w.conj() @ w.T) ** 2
    hits = np.argwhere((dist < max_prompt_dist) & (mutual < max_mutual_gain))
    return pts, hits[hits[:, 0] < hits[:, 1]]


def test_indoor_scene_contains_engineered_ambiguity():
    pts, hits = ambiguous_pairs(indoor_nlos(), ArrayConfig(16))
    assert len(hits) >= 1
    # at least two spatially separated regions are involved
    i, j = hits[0]
    assert np.linalg.norm(pts[i] - pts[j]) > 2.0


def test_default_scenario_lookup():
    assert default_scenario("indoor_nlos").scenario_id is ScenarioId.indoor_nlos
    assert default_scenario(1).scenario_id is ScenarioId.urban_mixed


# --- file format ---------------------------------------------------------------


def test_roundtrip_three_samples(tmp_path):
    ds = generate_dataset(urban_mixed(), ArrayConfig(8), 3, seed=9)
    path = tmp_path / "d.gsbf"
    datafile.write_dataset(path, ds)
    back = datafile.read_dataset(path)
    assert back.array == ds.array and back.seed == 9 and back.scenario_id is ds.scenario_id
    assert np.array_equal(back.split_tags, ds.split_tags)
    for a, b in zip(ds.samples, back.samples):
        assert a.num_paths == b.num_paths
        assert np.allclose(a.ue_position, b.ue_position, rtol=1e-6)
        assert np.linalg.norm(a.h - b.h) <= 1e-6 * np.linalg.norm(a.h)
        assert np.allclose(a.thetas, b.thetas, rtol=1e-6)
        assert np.allclose(a.gains, b.gains, rtol=1e-6)
    meta = json.loads((tmp_path / "d.gsbf.meta.json").read_text())
    assert meta["num_samples"] == 3 and meta["scenario_id"] == "urban_mixed"


def test_bad_magic(tmp_path):
    path = tmp_path / "d.gsbf"
    datafile.write_dataset(path, generate_dataset(indoor_nlos(), ArrayConfig(4), 2, seed=0))
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(datafile.InvalidFormatError, match="invalid format"):
        datafile.read_dataset(path)


def test_version_mismatch(tmp_path):
    path = tmp_path / "d.gsbf"
    datafile.write_dataset(path, generate_dataset(indoor_nlos(), ArrayConfig(4), 2, seed=0))
    raw = bytearray(path.read_bytes())
    raw[4:6] = (99).to_bytes(2, "little")
    path.write_bytes(bytes(raw))
    with pytest.raises(datafile.VersionMismatchError):
        datafile.read_dataset(path)


def test_truncated_names_record(tmp_path):
    path = tmp_path / "d.gsbf"
    ds = generate_dataset(indoor_nlos(), ArrayConfig(4), 5, seed=0)
    datafile.write_dataset(path, ds)
    raw = path.read_bytes()
    rec = datafile.record_dtype(4, datafile.header_dict(ds)["max_paths"]).itemsize
    header = len(raw) - 5 * rec
    path.write_bytes(raw[:header + 3 * rec + rec // 2])
    with pytest.raises(datafile.TruncatedError, match="record 3") as err:
        datafile.read_dataset(path)
    assert err.value.record == 3
