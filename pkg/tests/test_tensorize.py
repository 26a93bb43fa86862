import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tdcodec.tensorize import (
    TensorizationDescriptor,
    detensorize,
    effective_ranks,
    read_image,
    tensorize,
    write_image,
)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 40), st.integers(2, 40), st.sampled_from([1, 3]), st.sampled_from([1, 4, 16]),
       st.data())
def test_patch_stack_round_trip(h, w, c, b, data):
    img = data.draw(arrays(np.uint8, (h, w, c)))
    t, desc = tensorize(img, "patch-stack", b)
    assert t.min() >= 0 and t.max() <= 1
    np.testing.assert_array_equal(detensorize(t, desc), img)


def test_whole_image_round_trip(rng):
    img = rng.integers(0, 256, (7, 9, 3)).astype(np.uint8)
    t, desc = tensorize(img, "whole-image")
    assert t.shape == (7, 9, 3)
    np.testing.assert_array_equal(detensorize(t, desc), img)


def test_dims_examples():
    t, _ = tensorize(np.zeros((32, 32), np.uint8))
    assert t.shape == (16, 16, 4)
    t, d = tensorize(np.zeros((320, 320, 3), np.uint8))
    assert t.shape == (16, 16, 1200)
    assert d.tensor_dims() == (16, 16, 1200)


def test_patch_layout_raster_with_interleaved_channels():
    img = np.arange(32 * 16 * 3, dtype=np.int64).reshape(16, 32, 3).astype(np.uint8)
    t, _ = tensorize(img)
    np.testing.assert_array_equal(t[:, :, 0] * 255, img[:16, :16, 0].astype(float))
    np.testing.assert_array_equal(t[:, :, 1] * 255, img[:16, :16, 1].astype(float))
    np.testing.assert_array_equal(t[:, :, 3] * 255, img[:16, 16:, 0].astype(float))


def test_reflect_padding():
    img = np.arange(20 * 18, dtype=np.int64).reshape(20, 18).astype(np.uint8)
    t, d = tensorize(img)
    assert (d.pad_bottom, d.pad_right) == (12, 14)
    assert t.shape == (16, 16, 4)
    padded = np.pad(img, ((0, 12), (0, 14)), mode="reflect")
    np.testing.assert_array_equal(np.round(t[:, :, 3] * 255), padded[16:, 16:])


@pytest.mark.parametrize("bad", [np.zeros((4, 4, 2), np.uint8), np.zeros((4, 4), np.uint16),
                                 np.zeros((0, 4), np.uint8)])
def test_unsupported_images(bad):
    with pytest.raises(ValueError):
        tensorize(bad)


def test_descriptor_validation():
    with pytest.raises(ValueError):
        TensorizationDescriptor("spiral")
    with pytest.raises(ValueError):
        TensorizationDescriptor("patch-stack", 16, 4, 4, 2)
    with pytest.raises(ValueError):
        detensorize(np.zeros((16, 16, 3)), TensorizationDescriptor("patch-stack", 16, 16, 16, 1))


def test_effective_ranks():
    assert effective_ranks((38, 37, 28), (40, 40, 32), "latent") == (38, 37, 28)
    assert effective_ranks((38, 37, 28), (16, 16, 1200), "patch-stack") == (15, 15, 28)
    assert effective_ranks((34, 30, 22), (16, 16, 1200), "patch-stack") == (14, 12, 22)
    assert effective_ranks((38, 37, 28), (16, 16, 4), "patch-stack") == (15, 15, 4)
    assert effective_ranks((38, 37, 28), (80, 40, 3), "whole-image") == (76, 37, 3)
    assert effective_ranks((1, 1, 1), (2, 2, 2), "patch-stack") == (1, 1, 1)
    assert effective_ranks((50, 50, 50), (40, 40, 32), "latent") == (40, 40, 32)


@pytest.mark.parametrize("suffix, c", [(".png", 3), (".png", 1), (".ppm", 3), (".pgm", 1)])
def test_image_io_round_trip(tmp_path, rng, suffix, c):
    img = rng.integers(0, 256, (9, 11, c)).astype(np.uint8)
    path = tmp_path / f"x{suffix}"
    write_image(path, img)
    np.testing.assert_array_equal(read_image(path), img)
