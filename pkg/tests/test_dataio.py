import json

import numpy as np
import pytest

from lwlm.channel import BsConfig, ChannelSample, generate_scene
from lwlm.dataio import (
    LABEL_FIELDS, Normalizer, read_dataset, sample_batch, sample_positive_batch, write_dataset,
)


@pytest.fixture
def dataset(tmp_path, small_scene):
    samples = generate_scene(small_scene, 40)
    return samples, write_dataset(samples, tmp_path / "ds")


def test_round_trip_bit_exact(tmp_path, small_scene):
    samples = generate_scene(small_scene, 34)[:100]
    assert len(samples) == 100
    write_dataset(samples, tmp_path / "ds")
    ds = read_dataset(tmp_path / "ds")
    assert len(ds) == 100
    for i, s in enumerate(samples):
        assert ds.cfr[i].tobytes() == s.cfr.astype(np.complex64).tobytes()
        back = ds.sample(i)
        assert back.ue_position.tobytes() == s.ue_position.tobytes()
        assert back.toa_s == s.toa_s and back.aoa_rad == s.aoa_rad
        assert back.location_id == s.location_id and back.config == s.config


def test_file_layout(tmp_path):
    cfr = np.array([[1 + 2j, 3 + 4j, 5 + 6j], [7 + 8j, 9 + 10j, 11 + 12j]])
    s = ChannelSample(cfr, np.array([1.0, 2.0]), BsConfig((0, 0), 1e7), 1e-7, 0.1, True, 5)
    write_dataset([s], tmp_path / "one")
    raw = (tmp_path / "one" / "cfr.bin").read_bytes()
    assert len(raw) == 48
    vals = np.frombuffer(raw, dtype="<f4")
    np.testing.assert_array_equal(vals, np.arange(1, 13, dtype=np.float32))
    labels = np.frombuffer((tmp_path / "one" / "labels.bin").read_bytes(), dtype="<f8")
    np.testing.assert_array_equal(labels, [1.0, 2.0, 0.0, 0.0, 1e7, 1e-7, 0.1, 1.0, 5.0])
    meta = json.loads((tmp_path / "one" / "meta.json").read_text(encoding="utf-8"))
    assert meta["fields"] == list(LABEL_FIELDS) and meta["n_samples"] == 1


def test_empty_dataset(tmp_path):
    write_dataset([], tmp_path / "empty", n_ant=4, n_subc=8)
    ds = read_dataset(tmp_path / "empty")
    assert len(ds) == 0 and ds.meta["n_samples"] == 0


def test_mixed_shapes_rejected(tmp_path):
    a = ChannelSample(np.ones((2, 3)), np.zeros(2), BsConfig((0, 0), 1e7), 0.0, 0.0, True, 0)
    b = ChannelSample(np.ones((2, 4)), np.zeros(2), BsConfig((0, 0), 1e7), 0.0, 0.0, True, 1)
    with pytest.raises(ValueError):
        write_dataset([a, b], tmp_path / "bad")


def test_truncated_file_detected(tmp_path, dataset):
    _, ds = dataset
    p = tmp_path / "ds" / "cfr.bin"
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(ValueError):
        read_dataset(tmp_path / "ds")


def test_pair_index_partition(dataset):
    _, ds = dataset
    seen = sorted(i for v in ds.pair_index.values() for i in v)
    assert seen == list(range(len(ds)))


def test_sample_batch(dataset):
    _, ds = dataset
    full = sample_batch(ds, len(ds), np.random.default_rng(0))
    assert sorted(full.indices.tolist()) == list(range(len(ds)))
    a = sample_batch(ds, 32, np.random.default_rng(5))
    b = sample_batch(ds, 32, np.random.default_rng(5))
    assert np.array_equal(a.indices, b.indices)
    assert len(set(a.indices.tolist())) == 32
    with pytest.raises(ValueError):
        sample_batch(ds, len(ds) + 1, np.random.default_rng(0))


def test_sample_batch_32_of_10000():
    from lwlm.dataio import DatasetContainer

    n = 10_000
    labels = np.zeros((n, len(LABEL_FIELDS)))
    labels[:, -1] = np.arange(n)
    ds = DatasetContainer({"n_ant": 1, "n_subc": 1}, np.zeros((n, 1, 1), np.complex64), labels)
    b = sample_batch(ds, 32, np.random.default_rng(0))
    assert len(np.unique(b.indices)) == 32


def test_positive_batch(dataset):
    _, ds = dataset
    rng = np.random.default_rng(1)
    anchor = sample_batch(ds, 32, rng)
    pos = sample_positive_batch(ds, anchor, rng)
    assert len(pos) == 32
    assert np.array_equal(pos.location_id, anchor.location_id)
    assert np.all(pos.indices != anchor.indices)
    # three configs per location: all alternatives get used
    picks = set()
    a0 = ds.select([0])
    for seed in range(30):
        picks.add(int(sample_positive_batch(ds, a0, np.random.default_rng(seed)).indices[0]))
    assert picks == set(ds.pair_index[0]) - {0}


def test_positive_forced_choice(tmp_path, small_scene):
    scene = small_scene
    scene.bs_list = scene.bs_list[:2]
    ds = write_dataset(generate_scene(scene, 10), tmp_path / "two")
    anchor = ds.select(np.arange(0, len(ds), 2))
    pos = sample_positive_batch(ds, anchor, np.random.default_rng(0))
    assert np.array_equal(pos.indices, anchor.indices + 1)


def test_positive_single_sample_error(tmp_path, small_scene):
    scene = small_scene
    scene.bs_list = scene.bs_list[:1]
    ds = write_dataset(generate_scene(scene, 3), tmp_path / "single")
    with pytest.raises(ValueError, match="location_id 1"):
        sample_positive_batch(ds, ds.select([1]), np.random.default_rng(0))


def test_twelve_configs_per_location(tmp_path, small_scene):
    scene = small_scene
    scene.bs_list = [
        BsConfig((x, -5.0), bw) for x in (-12.0, -4.0, 4.0, 12.0) for bw in (10e6, 20e6, 50e6)
    ]
    ds = write_dataset(generate_scene(scene, 2), tmp_path / "twelve")
    alts = set()
    for seed in range(300):
        alts.add(int(sample_positive_batch(ds, ds.select([0]), np.random.default_rng(seed)).indices[0]))
    assert len(alts) == 11 and 0 not in alts


def test_normalizer(dataset):
    _, ds = dataset
    norm = Normalizer.fit(ds)
    h = norm.cfr(ds.cfr.astype(np.complex128))
    assert np.sqrt(np.mean(np.abs(h) ** 2)) == pytest.approx(1.0)
    p = ds.all().ue_position
    np.testing.assert_allclose(norm.position_inv(norm.position(p)), p, atol=1e-12)
    assert np.abs(norm.position(p)).max() <= 1.0 + 1e-12
    cfg = norm.config(ds.all().config)
    assert set(np.round(cfg[:, 2], 9)) == {2.0, 5.0}  # 20 / 50 MHz in units of 10 MHz
    assert Normalizer.from_dict(norm.to_dict()) == norm
