"""Data pipeline tests: PNM io, synthesis, augmentation, injection, batching."""

import json
import os

import numpy as np
import pytest

from fortress.dataio import (
    IMAGENET_MEAN,
    IMAGENET_STD,
    Sample,
    SynthConfig,
    augment,
    dli_inject,
    generate_sample,
    load_batches,
    load_dataset,
    make_patch_bank,
    read_image,
    read_mask,
    resize_pair,
    rotate_sample,
    synth_generate,
    write_image,
    write_mask,
)
from fortress.errors import ConfigurationError, DataError, FormatError


class TestPNM:
    def test_image_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        img = (rng.integers(0, 256, (3, 5, 7)) / 255.0).astype(np.float32)
        p = tmp_path / "x.ppm"
        write_image(p, img)
        np.testing.assert_allclose(read_image(p), img, atol=1e-9)

    def test_mask_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        mask = rng.integers(0, 9, (6, 4))
        p = tmp_path / "m.pgm"
        write_mask(p, mask)
        np.testing.assert_array_equal(read_mask(p), mask)

    def test_header_comments_tolerated(self, tmp_path):
        p = tmp_path / "c.pgm"
        p.write_bytes(b"P5\n# a comment\n2 1\n# another\n255\n\x03\x07")
        np.testing.assert_array_equal(read_mask(p), [[3, 7]])

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.ppm"
        p.write_bytes(b"P3\n1 1\n255\n\x00\x00\x00")
        with pytest.raises(FormatError):
            read_image(p)

    def test_bad_maxval(self, tmp_path):
        p = tmp_path / "mv.pgm"
        p.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
        with pytest.raises(FormatError):
            read_mask(p)

    def test_short_payload(self, tmp_path):
        p = tmp_path / "short.ppm"
        p.write_bytes(b"P6\n2 2\n255\n\x00\x00\x00")
        with pytest.raises(FormatError):
            read_image(p)

    def test_write_rejects_bad_shapes(self, tmp_path):
        with pytest.raises(ConfigurationError):
            write_image(tmp_path / "a.ppm", np.zeros((1, 4, 4)))
        with pytest.raises(ConfigurationError):
            write_mask(tmp_path / "a.pgm", np.zeros((1, 4, 4)))
        with pytest.raises(DataError):
            write_mask(tmp_path / "a.pgm", np.full((2, 2), 300))

    def test_rounding_is_half_up(self, tmp_path):
        img = np.full((3, 1, 1), 0.5 / 255.0 + 0.5e-9, dtype=np.float32)
        p = tmp_path / "r.ppm"
        write_image(p, img)
        assert p.read_bytes()[-3:] == b"\x01\x01\x01"


class TestSynthesis:
    def test_generation_is_deterministic(self):
        cfg = SynthConfig(n_samples=2, size=32, num_classes=4, seed=5)
        a = generate_sample(cfg, 1)
        b = generate_sample(cfg, 1)
        assert a.image.tobytes() == b.image.tobytes()
        assert a.mask.tobytes() == b.mask.tobytes()
        c = generate_sample(cfg, 0)
        assert a.mask.tobytes() != c.mask.tobytes()

    def test_density_budget_respected(self):
        cfg = SynthConfig(n_samples=1, size=64, num_classes=9, seed=0)
        for idx in range(20):
            s = generate_sample(cfg, idx)
            assert (s.mask > 0).mean() <= cfg.max_density + 1e-12

    def test_values_in_range(self):
        cfg = SynthConfig(n_samples=1, size=32, num_classes=4, seed=1)
        s = generate_sample(cfg, 0)
        assert s.image.dtype == np.float32
        assert 0.0 <= s.image.min() and s.image.max() <= 1.0
        assert 0 <= s.mask.min() and s.mask.max() < cfg.num_classes

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            SynthConfig(size=30)
        with pytest.raises(ConfigurationError):
            SynthConfig(num_classes=1)
        with pytest.raises(ConfigurationError):
            SynthConfig(splits=(0.5, 0.5, 0.5))
        with pytest.raises(ConfigurationError):
            SynthConfig(max_density=0.9)

    def test_dataset_written_and_loaded(self, tmp_path):
        cfg = SynthConfig(n_samples=10, size=32, num_classes=3, seed=2,
                          splits=(0.6, 0.2, 0.2))
        manifest = synth_generate(cfg, tmp_path)
        assert len(manifest["samples"]) == 10
        with open(tmp_path / "manifest.json") as f:
            assert json.load(f) == manifest
        splits = [e["split"] for e in manifest["samples"]]
        assert splits.count("train") == 6
        assert splits.count("val") == 2
        assert splits.count("test") == 2

        train = load_dataset(tmp_path, split="train")
        assert len(train) == 6
        everything = load_dataset(tmp_path)
        assert len(everything) == 10
        # quantization to 8 bits is the only loss on the round trip
        ref = generate_sample(cfg, 0)
        got = everything[0]
        assert got.id == ref.id
        np.testing.assert_array_equal(got.mask, ref.mask)
        np.testing.assert_allclose(got.image, ref.image, atol=0.5 / 255.0)

    def test_manifest_class_counts(self, tmp_path):
        cfg = SynthConfig(n_samples=3, size=32, num_classes=4, seed=3)
        manifest = synth_generate(cfg, tmp_path)
        for idx, entry in enumerate(manifest["samples"]):
            s = generate_sample(cfg, idx)
            want = np.bincount(s.mask.ravel(), minlength=4)
            np.testing.assert_array_equal(entry["class_counts"], want)

    def test_missing_manifest_rejected(self, tmp_path):
        with pytest.raises(DataError):
            load_dataset(tmp_path / "nowhere")


def _sample(seed=0, size=32, k=4):
    return generate_sample(SynthConfig(n_samples=1, size=size, num_classes=k,
                                       seed=seed), 0)


class TestAugment:
    def test_hflip_is_involution(self):
        s = _sample(4)
        twice = augment(augment(s, ["hflip"]), ["hflip"])
        np.testing.assert_array_equal(twice.image, s.image)
        np.testing.assert_array_equal(twice.mask, s.mask)

    def test_rotation_preserves_shape_and_labels(self):
        s = _sample(5)
        r = augment(s, ["rot30"])
        assert r.image.shape == s.image.shape
        assert r.mask.shape == s.mask.shape
        assert set(np.unique(r.mask)) <= set(np.unique(s.mask)) | {0}

    def test_rotation_by_zero_is_identity(self):
        s = _sample(6)
        r = rotate_sample(s, 0.0)
        np.testing.assert_allclose(r.image, s.image, atol=1e-6)
        np.testing.assert_array_equal(r.mask, s.mask)

    def test_histeq_constant_image_unchanged(self):
        s = Sample(np.full((3, 8, 8), 0.25, dtype=np.float32),
                   np.zeros((8, 8), dtype=np.int64))
        e = augment(s, ["histeq"])
        np.testing.assert_array_equal(e.image, s.image)

    def test_histeq_spans_unit_interval(self):
        s = _sample(7)
        e = augment(s, ["histeq"])
        assert e.image.min() == 0.0
        assert e.image.max() == 1.0
        np.testing.assert_array_equal(e.mask, s.mask)

    def test_histeq_is_monotone_per_channel(self):
        s = _sample(8)
        e = augment(s, ["histeq"])
        for c in range(3):
            order = np.argsort(s.image[c].ravel(), kind="stable")
            assert np.all(np.diff(e.image[c].ravel()[order]) >= -1e-7)

    def test_unknown_op_rejected(self):
        with pytest.raises(ConfigurationError):
            augment(_sample(9), ["blur"])

    def test_ops_compose_in_order(self):
        s = _sample(10)
        ab = augment(s, ["hflip", "rot30"])
        step = augment(augment(s, ["hflip"]), ["rot30"])
        np.testing.assert_array_equal(ab.image, step.image)


class TestInjection:
    def _bank_and_sample(self):
        samples = [_sample(seed, 64, 4) for seed in range(12)]
        rng = np.random.default_rng(0)
        bank = make_patch_bank(samples, 4, rng, patch_size=8, per_class=4)
        host = _sample(100, 64, 4)
        return bank, host, rng

    def test_bank_patches_are_single_class(self):
        bank, _, _ = self._bank_and_sample()
        assert any(bank[c] for c in bank)
        for label, patches in bank.items():
            for img, msk in patches:
                assert img.shape == (3, 8, 8)
                labels = np.unique(msk[msk > 0])
                assert list(labels) == [label]

    def test_injection_never_overwrites_foreground(self):
        bank, host, rng = self._bank_and_sample()
        before = host.mask.copy()
        out, n = dli_inject(host, bank, rng)
        assert n >= 1
        changed = out.mask != before
        assert np.all(before[changed] == 0)

    def test_injection_increases_minority_counts(self):
        bank, host, rng = self._bank_and_sample()
        out, n = dli_inject(host, bank, rng, max_patches=4)
        before = np.bincount(host.mask.ravel(), minlength=4)
        after = np.bincount(out.mask.ravel(), minlength=4)
        assert n >= 1
        assert (after[1:] >= before[1:]).all()
        assert after[1:].sum() > before[1:].sum()

    def test_input_sample_untouched(self):
        bank, host, rng = self._bank_and_sample()
        img = host.image.copy()
        msk = host.mask.copy()
        dli_inject(host, bank, rng)
        np.testing.assert_array_equal(host.image, img)
        np.testing.assert_array_equal(host.mask, msk)

    def test_empty_bank_is_noop(self):
        host = _sample(101, 32, 4)
        out, n = dli_inject(host, {1: [], 2: [], 3: []}, np.random.default_rng(1))
        assert n == 0
        np.testing.assert_array_equal(out.mask, host.mask)


class TestBatching:
    def test_shapes_and_order_without_rng(self):
        samples = [_sample(i, 32, 3) for i in range(5)]
        batches = list(load_batches(samples, 2, normalize=False))
        assert [b[0].shape[0] for b in batches] == [2, 2, 1]
        np.testing.assert_array_equal(batches[0][0][0], samples[0].image)
        assert batches[0][1].dtype == np.int64

    def test_normalization_applied(self):
        s = _sample(1, 32, 3)
        (x, _), = load_batches([s], 1)
        mean = np.asarray(IMAGENET_MEAN, dtype=np.float32).reshape(3, 1, 1)
        std = np.asarray(IMAGENET_STD, dtype=np.float32).reshape(3, 1, 1)
        np.testing.assert_allclose(x[0], (s.image - mean) / std, atol=1e-6)

    def test_shuffle_is_seeded(self):
        samples = [_sample(i, 32, 3) for i in range(6)]
        a = [m for _, m in load_batches(samples, 2, np.random.default_rng(3))]
        b = [m for _, m in load_batches(samples, 2, np.random.default_rng(3))]
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_resize_pair(self):
        s = _sample(2, 32, 3)
        img, msk = resize_pair(s.image, s.mask, 16)
        assert img.shape == (3, 16, 16)
        assert msk.shape == (16, 16)
        assert set(np.unique(msk)) <= set(np.unique(s.mask))

    def test_bad_batch_size(self):
        with pytest.raises(ConfigurationError):
            list(load_batches([_sample(0)], 0))
