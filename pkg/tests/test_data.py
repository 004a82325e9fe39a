import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aedcompress.data import (
    ClipRecord,
    Dataset,
    FeatureFormatError,
    SynthConfig,
    apply_cmvn,
    compute_cmvn,
    load_dataset,
    load_features,
    read_manifest,
    split,
    split_indices,
    synth_arrays,
    synth_dataset,
    write_features,
    write_manifest,
)
from aedcompress.metrics import auc, det_curve


class TestFeatureFiles:
    def test_round_trip_bit_identical(self, tmp_path):
        x = np.random.default_rng(0).standard_normal((37, 5)).astype(np.float32)
        write_features(tmp_path / "a.aedf", x)
        back = load_features(tmp_path / "a.aedf")
        assert back.shape == (37, 5)
        assert back.astype(np.float32).tobytes() == x.tobytes()

    def test_one_by_one(self, tmp_path):
        write_features(tmp_path / "a.aedf", np.array([[1.5]]))
        assert load_features(tmp_path / "a.aedf").tolist() == [[1.5]]

    def test_layout(self, tmp_path):
        write_features(tmp_path / "a.aedf", np.array([[1.0, 2.0]]))
        raw = (tmp_path / "a.aedf").read_bytes()
        assert raw[:4] == b"AEDF"
        assert struct.unpack("<III", raw[4:16]) == (1, 1, 2)
        assert raw[16:] == struct.pack("<2f", 1.0, 2.0)

    @pytest.mark.parametrize(
        "mutate, offset",
        [
            (lambda r: b"XEDF" + r[4:], "offset 0"),
            (lambda r: r[:4] + struct.pack("<I", 9) + r[8:], "offset 4"),
            (lambda r: r[:10], "offset 10"),
            (lambda r: r[:-3], "offset"),
        ],
    )
    def test_corruption_is_reported(self, tmp_path, mutate, offset):
        p = tmp_path / "a.aedf"
        write_features(p, np.ones((3, 2)))
        p.write_bytes(mutate(p.read_bytes()))
        with pytest.raises(FeatureFormatError, match=offset):
            load_features(p)

    def test_dim_mismatch(self, tmp_path):
        write_features(tmp_path / "a.aedf", np.ones((3, 2)))
        with pytest.raises(FeatureFormatError, match="dim"):
            load_features(tmp_path / "a.aedf", dim=4)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 20), st.integers(1, 8), st.integers(0, 2**32 - 1))
    def test_round_trip_property(self, tmp_path_factory, t, d, seed):
        p = tmp_path_factory.mktemp("f") / "x.aedf"
        x = (np.random.default_rng(seed).standard_normal((t, d)) * 1e3).astype(np.float32)
        write_features(p, x)
        assert load_features(p).astype(np.float32).tobytes() == x.tobytes()


def test_manifest_round_trip(tmp_path):
    recs = [ClipRecord("a", "f/a.aedf", (1, 0)), ClipRecord("b", "f/b.aedf", (0, 0))]
    write_manifest(tmp_path / "m.jsonl", recs)
    back = read_manifest(tmp_path / "m.jsonl")
    assert [r.id for r in back] == ["a", "b"] and back[0].labels == (1, 0)
    assert str(back[0].feature_path).endswith("a.aedf")


def test_manifest_rejects_bad_labels(tmp_path):
    (tmp_path / "m.jsonl").write_text('{"id": "a", "feature_path": "x", "labels": [2]}\n')
    with pytest.raises(FeatureFormatError):
        read_manifest(tmp_path / "m.jsonl")


class TestCmvn:
    def test_training_pool_normalized(self):
        rng = np.random.default_rng(0)
        feats = [rng.standard_normal((rng.integers(5, 40), 6)) * 3 + 7 for _ in range(30)]
        data = Dataset([str(i) for i in range(30)], feats, np.zeros((30, 1)))
        out = apply_cmvn(data, compute_cmvn(data))
        frames = np.concatenate(out.features)
        assert np.max(np.abs(frames.mean(axis=0))) <= 1e-10
        assert np.max(np.abs(frames.var(axis=0) - 1)) <= 1e-8

    def test_pooled_not_per_clip(self):
        feats = [np.zeros((2, 1)), np.full((2, 1), 4.0)]
        stats = compute_cmvn(feats)
        assert stats.mean.tolist() == [2.0] and stats.std.tolist() == [2.0]

    def test_constant_dimension(self):
        feats = [np.column_stack([np.full(4, 3.0), np.arange(4.0)])]
        stats = compute_cmvn(feats)
        assert stats.std[0] == 1e-8
        assert np.all(stats.normalize(feats[0])[:, 0] == 0)

    def test_errors(self):
        with pytest.raises(ValueError):
            compute_cmvn([])
        with pytest.raises(ValueError):
            compute_cmvn([np.ones((1, 3))])

    def test_double_application_refused(self):
        data = Dataset(["a"], [np.arange(6.0).reshape(3, 2)], np.zeros((1, 1)))
        stats = compute_cmvn(data)
        once = apply_cmvn(data, stats)
        with pytest.raises(ValueError, match="already"):
            apply_cmvn(once, stats)

    def test_train_stats_applied_unchanged(self):
        tr = Dataset(["a"], [np.arange(6.0).reshape(3, 2)], np.zeros((1, 1)))
        te = Dataset(["b"], [np.ones((2, 2))], np.zeros((1, 1)))
        stats = compute_cmvn(tr)
        np.testing.assert_array_equal(apply_cmvn(te, stats).features[0], (te.features[0] - stats.mean) / stats.std)


class TestSplit:
    def test_single_class_70_10_20(self):
        parts = split_indices(np.ones((100, 1)), seed=0)
        assert [len(p) for p in parts] == [70, 10, 20]

    @pytest.mark.parametrize("seed", range(5))
    def test_disjoint_cover_and_deterministic(self, seed):
        labels = synth_arrays(SynthConfig(clips_per_class=40, negatives=60, frames=4, dim=6, seed=seed)).labels
        parts = split_indices(labels, seed=seed)
        joined = np.concatenate(parts)
        assert np.array_equal(np.sort(joined), np.arange(len(labels)))
        again = split_indices(labels, seed=seed)
        assert all(np.array_equal(a, b) for a, b in zip(parts, again))

    @settings(max_examples=300, deadline=None)
    @given(st.integers(0, 100_000))
    def test_per_class_counts_within_one(self, seed):
        rng = np.random.default_rng(seed)
        n, c = int(rng.integers(30, 120)), int(rng.integers(1, 4))
        labels = rng.random((n, c)) < rng.uniform(0.1, 0.5)
        labels[:3] = True
        ratios = (0.7, 0.1, 0.2)
        parts = split_indices(labels, ratios, seed)
        for k in range(c):
            total = labels[:, k].sum()
            for p, r in zip(parts, ratios):
                assert abs(labels[p, k].sum() - r * total) <= 1.0 + 1e-9

    def test_too_few_positives(self):
        labels = np.zeros((10, 2))
        labels[:5, 0] = 1
        labels[:2, 1] = 1
        with pytest.raises(ValueError, match="class 1"):
            split_indices(labels)

    def test_bad_ratios(self):
        with pytest.raises(ValueError):
            split_indices(np.ones((10, 1)), (0.5, 0.2, 0.2))

    def test_split_returns_datasets(self):
        data = synth_arrays(SynthConfig(clips_per_class=20, negatives=20, frames=4, dim=6))
        tr, va, te = split(data)
        assert len(tr) + len(va) + len(te) == len(data)
        assert not set(tr.ids) & set(te.ids)


class TestSynthetic:
    def test_files_byte_identical_for_same_seed(self, tmp_path):
        cfg = SynthConfig(clips_per_class=5, negatives=5, frames=20, dim=6, seed=3)
        synth_dataset(cfg, tmp_path / "a")
        synth_dataset(cfg, tmp_path / "b")
        for name in ("manifest.jsonl", "features/clip00000.aedf", "features/clip00019.aedf"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_manifest_loads(self, tmp_path):
        cfg = SynthConfig(clips_per_class=4, negatives=3, frames=10, dim=6)
        synth_dataset(cfg, tmp_path)
        data = load_dataset(read_manifest(tmp_path / "manifest.jsonl"), dim=6)
        mem = synth_arrays(cfg)
        assert len(data) == 15 and data.num_classes == 3
        np.testing.assert_array_equal(data.labels, mem.labels)
        np.testing.assert_array_equal(data.features[7], mem.features[7])

    def test_label_counts(self):
        data = synth_arrays(SynthConfig())
        assert len(data) == 3 * 300 + 900
        assert np.all(data.labels.sum(axis=0) >= 300)
        assert np.sum(data.labels.sum(axis=1) == 0) == 900

    def test_noiseless_linear_separability(self):
        # a linear score on mean features (the class band) separates every class perfectly
        cfg = SynthConfig(noise=0.0, clips_per_class=30, negatives=30)
        data = synth_arrays(cfg)
        means = np.stack([f.mean(axis=0) for f in data.features])
        for c in range(cfg.classes):
            band = np.zeros(cfg.dim)
            spacing = cfg.dim // cfg.classes
            band[c * spacing : c * spacing + spacing - 1] = 1.0
            assert auc(det_curve(means @ band, data.labels[:, c])) == 0.0
