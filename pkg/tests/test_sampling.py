import numpy as np
import pytest

from ynetr.phantom import PhantomSpec, generate_phantom
from ynetr.sampling import (
    NoBackgroundError,
    NoForegroundError,
    SamplerConfig,
    pad_to_window,
    sample_any_window,
    sample_window,
)


def _arrays(shape, label=None):
    rng = np.random.default_rng(0)
    lf = rng.standard_normal(shape).astype(np.float32)
    hf = rng.standard_normal(shape).astype(np.float32)
    if label is None:
        label = np.zeros(shape, dtype=np.uint8)
    return lf, hf, label


class TestSampleWindow:
    def test_positive_on_empty_label_raises(self):
        lf, hf, label = _arrays((16, 16, 16))
        cfg = SamplerConfig(window=(8, 8, 8), jitter_max=4)
        with pytest.raises(NoForegroundError):
            sample_window(lf, hf, label, True, np.random.default_rng(1), cfg)

    def test_all_tumor_any_positive_window(self):
        lf, hf, _ = _arrays((12, 12, 12))
        label = np.ones((12, 12, 12), dtype=np.uint8)
        cfg = SamplerConfig(window=(8, 8, 8), jitter_max=4)
        s = sample_window(lf, hf, label, True, np.random.default_rng(2), cfg)
        assert s.label.all()
        assert s.positive

    def test_negative_on_all_tumor_raises(self):
        lf, hf, _ = _arrays((12, 12, 12))
        label = np.ones((12, 12, 12), dtype=np.uint8)
        cfg = SamplerConfig(window=(8, 8, 8), jitter_max=4)
        with pytest.raises(NoBackgroundError):
            sample_window(lf, hf, label, False, np.random.default_rng(3), cfg)

    def test_volume_smaller_than_window(self):
        lf, hf, label = _arrays((6, 6, 6))
        cfg = SamplerConfig(window=(8, 8, 8))
        with pytest.raises(ValueError, match="pad first"):
            sample_window(lf, hf, label, False, np.random.default_rng(4), cfg)

    def test_crops_are_aligned(self):
        lf, hf, label = _arrays((20, 20, 20))
        label[10, 10, 10] = 1
        cfg = SamplerConfig(window=(8, 8, 8), jitter_max=4)
        s = sample_window(lf, hf, label, True, np.random.default_rng(5), cfg)
        ox, oy, oz = s.origin
        np.testing.assert_array_equal(s.lf, lf[ox : ox + 8, oy : oy + 8, oz : oz + 8])
        np.testing.assert_array_equal(s.hf, hf[ox : ox + 8, oy : oy + 8, oz : oz + 8])

    def test_alternating_draws_on_phantom(self):
        spec = PhantomSpec(
            shape=(64, 64, 64), tumor_count=(1, 1), tumor_volume_cm3=(2.0, 2.0), seed=21
        )
        vol, lbl = generate_phantom(spec)
        lf, hf, label = vol.voxels, vol.voxels.copy(), lbl.labels
        fg = np.argwhere(label > 0)
        cfg = SamplerConfig(window=(16, 16, 16), jitter_max=8)
        rng = np.random.default_rng(6)
        pos = neg = 0
        for i in range(200):
            want = i % 2 == 0
            s = sample_window(lf, hf, label, want, rng, cfg, fg_coords=fg)
            n_fg = int(s.label.sum())
            if want:
                assert n_fg >= 1
                pos += 1
            else:
                assert n_fg == 0
                neg += 1
            assert all(abs(j) <= 8 for j in s.jitter)
            assert all(
                0 <= o and o + w <= d for o, w, d in zip(s.origin, cfg.window, label.shape)
            )
        assert pos == 100 and neg == 100

    def test_jitter_bounds_48(self):
        lf, hf, label = _arrays((160, 160, 160))
        label[80, 80, 80] = 1
        cfg = SamplerConfig(window=(64, 64, 64), jitter_max=48)
        rng = np.random.default_rng(7)
        for _ in range(20):
            s = sample_window(lf, hf, label, True, rng, cfg,
                              fg_coords=np.argwhere(label > 0))
            assert all(-48 <= j <= 48 for j in s.jitter)
            assert s.label.any()


class TestPadding:
    def test_pad_to_window(self):
        arr = np.arange(4 * 4 * 2, dtype=np.float32).reshape(4, 4, 2)
        out = pad_to_window(arr, (6, 4, 5))
        assert out.shape == (6, 4, 5)
        np.testing.assert_array_equal(out[:4, :, :2], arr)

    def test_no_padding_needed_is_identity(self):
        arr = np.ones((8, 8, 8), dtype=np.float32)
        assert pad_to_window(arr, (8, 8, 8)) is arr

    def test_reflect_values(self):
        arr = np.array([[[1.0], [2.0]], [[3.0], [4.0]]], dtype=np.float32)  # (2,2,1)
        out = pad_to_window(arr, (3, 2, 1))
        np.testing.assert_array_equal(out[2], arr[0])  # reflected row


class TestAnyWindow:
    def test_unconstrained_window(self):
        lf, hf, _ = _arrays((12, 12, 12))
        label = np.ones((12, 12, 12), dtype=np.uint8)
        cfg = SamplerConfig(window=(8, 8, 8))
        s = sample_any_window(lf, hf, label, np.random.default_rng(8), cfg)
        assert s.lf.shape == (8, 8, 8)
        assert s.positive
