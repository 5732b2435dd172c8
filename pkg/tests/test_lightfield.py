import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from lfmdt.errors import DimensionError, FormatError, LengthError, RangeWarning, SizeError
from lfmdt.lightfield import (
    LightField,
    SaiSubset,
    bicubic_resize,
    decode_lfb,
    degrade,
    encode_lfb,
    extract_epi,
    extract_patch_pairs,
    gather_sais,
    patch_origins,
    read_lfb,
    read_sai_png,
    resize_weights,
    rgb_to_y,
    write_lfb,
    write_sai_png,
)


def random_field(shape, seed=0):
    return LightField(np.random.default_rng(seed).uniform(size=shape).astype(np.float32))


class TestLfbFormat:
    def test_tiny_field_size_and_round_trip(self, tmp_path):
        lf = LightField(np.array([0, 0.25, 0.5, 1], dtype=np.float32).reshape(1, 1, 2, 2, 1))
        path = tmp_path / "tiny.lfb"
        write_lfb(lf, path)
        raw = path.read_bytes()
        assert len(raw) == 28 + 16
        assert raw[:4] == b"LFB1"
        assert read_lfb(path).data.tobytes() == lf.data.tobytes()

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.lfb"
        path.write_bytes(b"")
        with pytest.raises(FormatError):
            read_lfb(path)

    def test_bad_magic_and_version(self):
        raw = bytearray(encode_lfb(random_field((1, 1, 2, 2, 1))))
        bad = bytes(b"XXXX" + raw[4:])
        with pytest.raises(FormatError, match="magic"):
            decode_lfb(bad)
        raw[4] = 2
        with pytest.raises(FormatError, match="version"):
            decode_lfb(bytes(raw))

    def test_truncated_payload(self):
        raw = encode_lfb(random_field((1, 2, 3, 3, 1)))
        with pytest.raises(LengthError):
            decode_lfb(raw[:-4])

    def test_out_of_range_warns_and_clamps(self):
        lf = LightField(np.array([-0.5, 0.2, 1.5, 1.0005], dtype=np.float32).reshape(1, 1, 2, 2, 1))
        with pytest.warns(RangeWarning):
            back = decode_lfb(encode_lfb(lf))
        np.testing.assert_array_equal(back.data.ravel(), np.float32([0, 0.2, 1, 1]))

    def test_slight_overshoot_clamped_silently(self):
        lf = LightField(np.array([1.0005, 0.0, -0.0005, 0.5], dtype=np.float32).reshape(1, 1, 2, 2, 1))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            back = decode_lfb(encode_lfb(lf))
        assert back.data.max() == 1.0 and back.data.min() == 0.0

    def test_random_5x5_round_trip(self, tmp_path):
        lf = random_field((5, 5, 16, 16, 1), seed=3)
        write_lfb(lf, tmp_path / "f.lfb")
        assert read_lfb(tmp_path / "f.lfb").data.tobytes() == lf.data.tobytes()

    @settings(max_examples=50, deadline=None)
    @given(st.tuples(*[st.integers(1, 4)] * 5), st.integers(0, 2**32 - 1))
    def test_round_trip_property(self, shape, seed):
        lf = random_field(shape, seed)
        assert decode_lfb(encode_lfb(lf)).data.tobytes() == lf.data.tobytes()


def test_png_export_round_half_up(tmp_path):
    lf = LightField(np.array([0.0, 0.5 / 255, 1.0, 128.5 / 255], dtype=np.float64).reshape(1, 1, 2, 2, 1))
    write_sai_png(lf, 0, 0, tmp_path / "s.png")
    back = read_sai_png(tmp_path / "s.png")
    np.testing.assert_array_equal(np.round(back[..., 0] * 255), [[0, 1], [255, 129]])


class TestColour:
    @pytest.mark.parametrize(
        "rgb, y",
        [((1, 1, 1), 235 / 255), ((0, 0, 0), 16 / 255), ((1, 0, 0), (65.481 + 16) / 255)],
    )
    def test_known_values(self, rgb, y):
        lf = LightField(np.array(rgb, dtype=np.float64).reshape(1, 1, 1, 1, 3))
        assert abs(rgb_to_y(lf).data.item() - y) < 1e-12

    def test_requires_three_channels(self):
        with pytest.raises(DimensionError):
            rgb_to_y(random_field((1, 1, 2, 2, 1)))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_range(self, seed):
        y = rgb_to_y(LightField(np.random.default_rng(seed).uniform(size=(1, 1, 4, 4, 3)))).data
        assert y.min() >= 16 / 255 - 1e-12 and y.max() <= 235 / 255 + 1e-12


class TestBicubic:
    @pytest.mark.parametrize("scale", [2, 4, 0.5, 0.25, 3, 1 / 3])
    def test_constant_preserved(self, scale):
        out = bicubic_resize(np.full((12, 12), 0.7), scale)
        np.testing.assert_allclose(out, 0.7, atol=1e-12)

    @pytest.mark.parametrize("n, scale", [(8, 2), (16, 0.5), (12, 0.25), (9, 3), (13, 1 / 3)])
    def test_weights_partition_of_unity(self, n, scale):
        np.testing.assert_allclose(resize_weights(n, scale).sum(axis=1), 1.0, atol=1e-6)

    def test_upscale_reproduces_linear_ramp(self):
        ramp = np.tile(np.arange(16, dtype=np.float64), (16, 1))
        up = bicubic_resize(ramp, 2)
        # interior even samples sit at source coordinate k - 0.25
        for k in range(3, 13):
            np.testing.assert_allclose(up[8, 2 * k], k - 0.25, atol=1e-6)

    @pytest.mark.parametrize("scale", [0.5, 2.0])
    def test_against_scalar_oracle(self, scale):
        y, x = np.mgrid[0:16, 0:16].astype(np.float64)
        img = 0.5 + 0.2 * np.sin(2 * np.pi * (0.07 * y + 0.11 * x)) + 0.1 * np.cos(2 * np.pi * (0.13 * y - 0.05 * x) + 0.3)
        np.testing.assert_allclose(bicubic_resize(img, scale), oracles.bicubic(img, scale), atol=1e-6)

    def test_small_input_rejected(self):
        with pytest.raises(SizeError):
            bicubic_resize(np.ones((3, 8)), 2)

    def test_keeps_float32(self):
        assert bicubic_resize(np.ones((8, 8), dtype=np.float32), 2).dtype == np.float32


class TestDegrade:
    def test_constant_field(self):
        out = degrade(LightField(np.full((2, 2, 8, 8, 1), 0.3, dtype=np.float32)), 2)
        assert out.shape == (2, 2, 4, 4, 1)
        np.testing.assert_allclose(out.data, 0.3, atol=1e-6)

    def test_r1_identity(self):
        lf = random_field((2, 2, 8, 8, 1))
        np.testing.assert_allclose(degrade(lf, 1).data, lf.data, atol=1e-6)

    def test_per_sai_equals_single_image(self):
        lf = random_field((3, 2, 8, 8, 1), seed=5)
        out = degrade(lf, 2)
        for u in range(3):
            for v in range(2):
                np.testing.assert_array_equal(out.data[u, v, :, :, 0], bicubic_resize(lf.data[u, v, :, :, 0], 0.5))

    def test_indivisible(self):
        with pytest.raises(SizeError):
            degrade(random_field((1, 1, 9, 8, 1)), 2)

    def test_commutes_with_gather(self):
        lf = random_field((5, 5, 8, 8, 1), seed=2)
        subset = SaiSubset([(0, 4), (2, 2), (4, 0)])
        a = gather_sais(degrade(lf, 2), subset)
        b = np.stack([degrade(LightField(s[None, None]), 2).data[0, 0] for s in gather_sais(lf, subset)])
        np.testing.assert_array_equal(a, b)


class TestPatches:
    def test_single_pair(self):
        pairs = extract_patch_pairs(random_field((5, 5, 64, 64, 1)), 2)
        assert len(pairs) == 1
        assert pairs[0][0].shape == (5, 5, 32, 32, 1)
        assert pairs[0][1].shape == (5, 5, 64, 64, 1)

    def test_four_pairs_and_stitching(self):
        hr = random_field((5, 5, 128, 128, 1), seed=9)
        pairs = extract_patch_pairs(hr, 2)
        assert len(pairs) == 4
        canvas = np.zeros_like(hr.data)
        for (y, x), (lr, hp) in zip(patch_origins(hr, 2), pairs):
            canvas[:, :, y:y + 64, x:x + 64] = hp.data
            np.testing.assert_array_equal(lr.data, degrade(hp, 2).data)
        assert canvas.tobytes() == hr.data.tobytes()

    def test_too_small(self):
        with pytest.raises(SizeError):
            extract_patch_pairs(random_field((1, 1, 32, 32, 1)), 2)


class TestSubsets:
    def test_sorted_and_unique(self):
        assert SaiSubset([(4, 4), (0, 0), (0, 4)]).coords == ((0, 0), (0, 4), (4, 4))
        with pytest.raises(ValueError):
            SaiSubset([(1, 1), (1, 1)])
        with pytest.raises(ValueError):
            SaiSubset([])

    def test_all_coordinates_is_reshape(self):
        lf = random_field((3, 2, 4, 4, 2))
        every = SaiSubset([(u, v) for u in range(3) for v in range(2)])
        np.testing.assert_array_equal(gather_sais(lf, every), lf.data.reshape(6, 4, 4, 2))

    def test_single(self):
        lf = random_field((3, 3, 4, 4, 1))
        np.testing.assert_array_equal(gather_sais(lf, SaiSubset([(0, 0)]))[0], lf.data[0, 0])

    def test_corner_constants(self):
        data = np.zeros((5, 5, 2, 2, 1))
        for u in range(5):
            for v in range(5):
                data[u, v] = u * 10 + v
        got = gather_sais(LightField(data), SaiSubset([(4, 4), (0, 0), (4, 0), (0, 4)]))
        assert got[:, 0, 0, 0].tolist() == [0, 4, 40, 44]

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            gather_sais(random_field((2, 2, 2, 2, 1)), SaiSubset([(2, 0)]))


class TestEpi:
    def test_constant(self):
        epi = extract_epi(LightField(np.full((3, 3, 4, 5, 1), 0.25)), 1, 2)
        assert epi.shape == (3, 5)
        assert np.all(epi == 0.25)

    def test_single_row(self):
        lf = random_field((1, 2, 4, 6, 1))
        np.testing.assert_array_equal(extract_epi(lf, 1, 3)[0], lf.data[0, 1, 3, :, 0])

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            extract_epi(random_field((2, 2, 4, 4, 1)), 2, 0)
